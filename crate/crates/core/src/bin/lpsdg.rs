use std::process::ExitCode;

use lpsdg::study::{exit_code, parse_config, run_study};
use lpsdg::Error;

fn main() -> ExitCode {
    let result = parse_config(std::env::args_os()).and_then(|config| run_study(&config));
    match &result {
        Ok(_) => {}
        Err(Error::Help(text)) => print!("{text}"),
        Err(e) => eprintln!("lpsdg: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
