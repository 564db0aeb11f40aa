//! Runs the oracle suite and prints one line per case.
//!
//! ```text
//! cargo run --release -p augmax-oracles --example oracle_suite -- [filter] [--json out.json]
//! ```
//!
//! The filter is a comma-separated list of id substrings. Trained fixtures are
//! cached under `target/tmp/oracle-fixtures`.

use std::path::PathBuf;
use std::process::ExitCode;

use augmax_oracles::{run_suite, Context};

fn main() -> ExitCode {
    let mut filter = String::new();
    let mut json = None;
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        if arg == "--json" {
            json = args.next().map(PathBuf::from);
        } else {
            filter = arg;
        }
    }
    let cache = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/tmp/oracle-fixtures");
    let mut ctx = Context::new(0, Some(cache));
    let report = run_suite(&filter, &mut ctx);
    print!("{}", report.text());
    if let Some(path) = json {
        if let Err(e) = report.write_json(&path) {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    ExitCode::from(report.exit_code() as u8)
}
