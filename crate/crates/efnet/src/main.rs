use std::path::Path;
use std::process::ExitCode;

use efnet::config::ExperimentConfig;
use efnet::experiments::{run, ExperimentError, RunOutcome};

const USAGE: &str = "usage: efnet <config-path> [section.key=value ...]

Runs one experiment per invocation. The mode (temporal | portrait |
continuation), network, epidemic parameters and all seeds come from the
configuration file; trailing key=value arguments override file entries.

Exit codes: 0 success, 1 configuration or I/O error, 2 solver
non-convergence with partial output.";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args[0] == "-h" || args[0] == "--help" {
        eprintln!("{USAGE}");
        return ExitCode::from(1);
    }
    let cfg = match ExperimentConfig::load(Path::new(&args[0]), &args[1..]) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("efnet: configuration error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(&cfg) {
        Ok(RunOutcome::Complete) => ExitCode::SUCCESS,
        Ok(RunOutcome::PartialSolver) => {
            eprintln!(
                "efnet: solver did not converge; partial output written to {}",
                cfg.output.display()
            );
            ExitCode::from(2)
        }
        Err(ExperimentError::Config(e)) => {
            eprintln!("efnet: configuration error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("efnet: {e}");
            ExitCode::from(1)
        }
    }
}
