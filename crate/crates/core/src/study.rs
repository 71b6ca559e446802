//! Convergence studies: configuration, command-line parsing, runs and
//! CSV/EOC output.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use clap::Parser;

use crate::assembly::Discretization;
use crate::error::{Error, Result};
use crate::lps::StabParams;
use crate::mesh::Mesh;
use crate::slab::{postprocess, NewtonConfig, SlabSolver, TrajectoryRecord};
use crate::temporal::{TimePartition, MAX_DEGREE};
use crate::verification::{compute_errors, CaseKind, EocTable, ErrorReport, ManufacturedCase};

pub const CSV_COLUMNS: [&str; 14] = [
    "case",
    "k",
    "r",
    "nu",
    "mu",
    "level",
    "h",
    "tau",
    "err_L2L2_u",
    "err_Snorm",
    "err_L2L2_p",
    "err_final_u",
    "err_jump",
    "err_L2L2_u_postproc",
];

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub case: CaseKind,
    pub k: usize,
    pub r: usize,
    pub enriched: bool,
    pub nu: f64,
    pub mu: f64,
    pub levels: Vec<u32>,
    pub taus: Vec<f64>,
    pub postprocess: bool,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
    pub final_time: f64,
    pub newton: NewtonConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            case: CaseKind::SpaceDominant,
            k: 1,
            r: 2,
            enriched: true,
            nu: 1e-6,
            mu: 0.1,
            levels: vec![2, 3, 4, 5],
            taus: vec![1.0 / 800.0],
            postprocess: false,
            output: None,
            threads: None,
            final_time: 1.0,
            newton: NewtonConfig::default(),
        }
    }
}

impl StudyConfig {
    /// `tau_0 2^{-i}` for `i = 0..count`.
    pub fn halving_taus(tau0: f64, count: usize) -> Vec<f64> {
        (0..count).map(|i| tau0 / (1u64 << i) as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k > MAX_DEGREE {
            return Err(Error::invalid(format!("k must be in 0..={MAX_DEGREE}")));
        }
        if self.r < 2 {
            return Err(Error::invalid("r must be at least 2 (pressure degree r - 1 >= 1)"));
        }
        if self.levels.is_empty() || self.levels.iter().any(|l| !(1..=12).contains(l)) {
            return Err(Error::invalid("levels must be a nonempty list of values in 1..=12"));
        }
        if self.taus.is_empty() || self.taus.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::invalid("time steps must be positive"));
        }
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::invalid("nu must be positive"));
        }
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(Error::invalid("mu must be non-negative"));
        }
        if self.threads == Some(0) {
            return Err(Error::invalid("threads must be at least 1"));
        }
        for &tau in &self.taus {
            slab_count(self.final_time, tau)?;
        }
        self.newton.validate()
    }

    fn describe(&self) -> String {
        let list = |v: Vec<String>| v.join(";");
        format!(
            "case={} k={} r={} enriched={} nu={:e} mu={:e} T={} levels={} taus={} postprocess={}",
            self.case,
            self.k,
            self.r,
            self.enriched,
            self.nu,
            self.mu,
            self.final_time,
            list(self.levels.iter().map(|l| l.to_string()).collect()),
            list(self.taus.iter().map(|t| format!("{t:e}")).collect()),
            self.postprocess
        )
    }
}

fn slab_count(final_time: f64, tau: f64) -> Result<usize> {
    let n = (final_time / tau).round();
    if n < 1.0 || ((n * tau - final_time) / final_time).abs() > 1e-9 {
        return Err(Error::invalid(format!("tau = {tau} does not divide T = {final_time}")));
    }
    Ok(n as usize)
}

#[derive(Debug, Parser)]
#[command(name = "lpsdg", version, about = "Convergence studies for LPS / dG(k) Navier-Stokes")]
struct Cli {
    /// space_dominant | time_dominant | rough_pressure | steady_check
    #[arg(long, default_value = "space_dominant")]
    case: String,
    /// Temporal degree.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Velocity degree.
    #[arg(long, default_value_t = 2)]
    r: usize,
    /// Use plain Q_r without bubbles.
    #[arg(long)]
    no_enrich: bool,
    #[arg(long, default_value_t = 1e-6)]
    nu: f64,
    #[arg(long, default_value_t = 0.1)]
    mu: f64,
    /// Comma-separated mesh levels (level L has 2^L cells per side).
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<u32>>,
    /// Comma-separated time steps.
    #[arg(long, value_delimiter = ',', conflicts_with = "tau_halvings")]
    tau: Option<Vec<f64>>,
    /// Number of time steps tau0 * 2^-i, i = 0, 1, ...
    #[arg(long)]
    tau_halvings: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    tau0: f64,
    /// Also evaluate the post-processed velocity.
    #[arg(long)]
    postprocess: bool,
    /// CSV path; the EOC table goes next to it with suffix `.eoc.txt`.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Reuse the factored Newton Jacobian while the iteration contracts fast.
    #[arg(long)]
    lagged_jacobian: bool,
}

/// Parse command-line arguments (the first item is the program name).
pub fn parse_config<I, T>(argv: I) -> Result<StudyConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => Error::Help(e.to_string()),
        _ => Error::Usage(e.to_string()),
    })?;
    let case = CaseKind::from_name(&cli.case).map_err(|e| Error::Usage(e.to_string()))?;
    let space = matches!(case, CaseKind::SpaceDominant);
    let taus = match (cli.tau, cli.tau_halvings) {
        (Some(t), _) => t,
        (None, Some(n)) => StudyConfig::halving_taus(cli.tau0, n),
        (None, None) if space => vec![1.0 / 800.0],
        (None, None) if case == CaseKind::SteadyCheck => vec![0.1],
        (None, None) => StudyConfig::halving_taus(cli.tau0, 6),
    };
    let levels = cli.levels.unwrap_or_else(|| if space { vec![2, 3, 4, 5] } else { vec![3] });
    let config = StudyConfig {
        case,
        k: cli.k,
        r: cli.r,
        enriched: !cli.no_enrich,
        nu: cli.nu,
        mu: cli.mu,
        levels,
        taus,
        postprocess: cli.postprocess,
        output: cli.output,
        threads: cli.threads,
        newton: NewtonConfig {
            lagged_jacobian: cli.lagged_jacobian,
            ..NewtonConfig::default()
        },
        ..StudyConfig::default()
    };
    config.validate().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(config)
}

/// Error columns of one `(level, tau)` run.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub case: CaseKind,
    pub k: usize,
    pub r: usize,
    pub nu: f64,
    pub mu: f64,
    pub level: u32,
    pub h: f64,
    pub tau: f64,
    pub err_l2l2_u: f64,
    pub err_snorm: f64,
    pub err_l2l2_p: f64,
    pub err_final_u: f64,
    pub err_jump: f64,
    pub err_l2l2_u_postproc: Option<f64>,
}

impl StudyRow {
    pub fn to_csv(&self) -> String {
        let post = self.err_l2l2_u_postproc.map_or_else(String::new, |v| format!("{v:.10e}"));
        format!(
            "{},{},{},{:e},{:e},{},{:e},{:e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{}",
            self.case,
            self.k,
            self.r,
            self.nu,
            self.mu,
            self.level,
            self.h,
            self.tau,
            self.err_l2l2_u,
            self.err_snorm,
            self.err_l2l2_p,
            self.err_final_u,
            self.err_jump,
            post
        )
    }
}

/// Full output of one `(level, tau)` run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub row: StudyRow,
    pub report: ErrorReport,
    pub trajectory: TrajectoryRecord,
}

/// Solve one configuration on one mesh level with one time step.
pub fn run_single(config: &StudyConfig, level: u32, tau: f64) -> Result<RunOutcome> {
    let case = ManufacturedCase::new(config.case, config.nu)?;
    let mesh = Arc::new(Mesh::uniform(level)?);
    let h = mesh.edge_length();
    let disc = Discretization::new(mesh, config.r, config.enriched, config.nu, StabParams::uniform(config.mu)?)?;
    let solver = SlabSolver::new(&disc, config.k, config.newton)?;
    let partition = TimePartition::uniform(config.final_time, slab_count(config.final_time, tau)?)?;
    let trajectory = solver.advance(&partition, &case)?;
    let post = config.postprocess.then(|| postprocess(&trajectory));
    let report = compute_errors(&disc, &trajectory, &case, post.as_ref());
    let row = StudyRow {
        case: config.case,
        k: config.k,
        r: config.r,
        nu: config.nu,
        mu: config.mu,
        level,
        h,
        tau,
        err_l2l2_u: report.l2l2_velocity(),
        err_snorm: report.s_norm(),
        err_l2l2_p: report.l2l2_pressure(),
        err_final_u: report.final_error(),
        err_jump: report.jump_norm(),
        err_l2l2_u_postproc: report.l2l2_postprocessed(),
    };
    Ok(RunOutcome {
        row,
        report,
        trajectory,
    })
}

const ERROR_COLUMNS: [&str; 6] = [
    "err_L2L2_u",
    "err_Snorm",
    "err_L2L2_p",
    "err_final_u",
    "err_jump",
    "err_L2L2_u_postproc",
];

fn row_errors(row: &StudyRow) -> [Option<f64>; 6] {
    [
        Some(row.err_l2l2_u),
        Some(row.err_snorm),
        Some(row.err_l2l2_p),
        Some(row.err_final_u),
        Some(row.err_jump),
        row.err_l2l2_u_postproc,
    ]
}

fn table_from(rows: &[&StudyRow], param_name: &str, param: impl Fn(&StudyRow) -> f64) -> EocTable {
    let mut table = EocTable::new(param_name, rows.iter().map(|r| param(r)).collect());
    for (c, name) in ERROR_COLUMNS.iter().enumerate() {
        let values: Option<Vec<f64>> = rows.iter().map(|r| row_errors(r)[c]).collect();
        if let Some(v) = values {
            table.push_column(*name, v).expect("one value per row");
        }
    }
    table
}

/// EOC tables: in `tau` for every level with several time steps, in `h`
/// for every time step with several levels.
pub fn eoc_tables(rows: &[StudyRow]) -> Vec<(String, EocTable)> {
    let mut out = Vec::new();
    let mut levels: Vec<u32> = rows.iter().map(|r| r.level).collect();
    levels.dedup();
    for &level in &levels {
        let sel: Vec<&StudyRow> = rows.iter().filter(|r| r.level == level).collect();
        if sel.len() > 1 {
            out.push((format!("level {level}, refinement in tau"), table_from(&sel, "tau", |r| r.tau)));
        }
    }
    let mut taus: Vec<f64> = Vec::new();
    for r in rows {
        if !taus.contains(&r.tau) {
            taus.push(r.tau);
        }
    }
    for &tau in &taus {
        let sel: Vec<&StudyRow> = rows.iter().filter(|r| r.tau == tau).collect();
        if sel.len() > 1 {
            out.push((format!("tau {tau:e}, refinement in h"), table_from(&sel, "h", |r| r.h)));
        }
    }
    out
}

fn header(config: &StudyConfig) -> String {
    let n = config.newton;
    format!(
        "# lpsdg convergence study\n# config: {}\n# newton: rtol={:e} atol={:e} max_iter={} lagged_jacobian={}\n\
         # L2(L2) errors: (k+3)-point Gauss in time; S-norm terms: Radau rule in time\n\
         # pressure: exact and discrete pressure shifted to zero mean before comparison\n{}\n",
        config.describe(),
        n.rtol,
        n.atol,
        n.max_iter,
        n.lagged_jacobian,
        CSV_COLUMNS.join(",")
    )
}

fn run_rows(config: &StudyConfig, csv: &mut dyn Write) -> Result<Vec<StudyRow>> {
    csv.write_all(header(config).as_bytes())?;
    csv.flush()?;
    let mut rows = Vec::new();
    for &level in &config.levels {
        for &tau in &config.taus {
            let outcome = run_single(config, level, tau)?;
            writeln!(csv, "{}", outcome.row.to_csv())?;
            csv.flush()?;
            rows.push(outcome.row);
        }
    }
    Ok(rows)
}

fn render_tables(rows: &[StudyRow]) -> String {
    let mut s = String::new();
    for (title, table) in eoc_tables(rows) {
        s.push_str(&format!("# {title}\n{table}\n"));
    }
    s
}

/// Run every `(level, tau)` pair, writing CSV rows as they complete and the
/// EOC tables at the end. Without an output path both go to stdout.
pub fn run_study(config: &StudyConfig) -> Result<Vec<StudyRow>> {
    config.validate()?;
    let work = || -> Result<Vec<StudyRow>> {
        match &config.output {
            Some(path) => {
                let mut csv = BufWriter::new(File::create(path)?);
                let rows = run_rows(config, &mut csv)?;
                let mut eoc_path = path.clone().into_os_string();
                eoc_path.push(".eoc.txt");
                std::fs::write(PathBuf::from(eoc_path), render_tables(&rows))?;
                Ok(rows)
            }
            None => {
                let stdout = io::stdout();
                let mut lock = stdout.lock();
                let rows = run_rows(config, &mut lock)?;
                lock.write_all(render_tables(&rows).as_bytes())?;
                Ok(rows)
            }
        }
    };
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(e.to_string()))?
            .install(work),
        None => work(),
    }
}

/// Process exit code for a study result.
pub fn exit_code(result: &Result<Vec<StudyRow>>) -> i32 {
    match result {
        Ok(_) | Err(Error::Help(_)) => 0,
        Err(Error::Usage(_)) | Err(Error::InvalidArgument(_)) => 2,
        Err(_) => 3,
    }
}
