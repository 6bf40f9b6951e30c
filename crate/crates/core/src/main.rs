use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mwkeldysh::cli::{run_scenario, selftest::run_self_test, write_outputs, CliError, Scenario};

/// Multi-world Keldysh scenario runner.
#[derive(Parser, Debug)]
#[command(name = "mwk", version)]
struct Args {
    /// Scenario file (TOML).
    scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; falls back to MWK_THREADS, then to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Run the built-in numerical checks before anything else.
    #[arg(long)]
    self_test: bool,
}

fn threads(args: &Args) -> Result<Option<usize>, CliError> {
    if let Some(n) = args.threads {
        return Ok(Some(n));
    }
    match std::env::var("MWK_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Schema(format!("MWK_THREADS: not a thread count: {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn run(args: &Args) -> Result<(), CliError> {
    if let Some(n) = threads(args)? {
        if n == 0 {
            return Err(CliError::Schema("--threads: must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Io(e.to_string()))?;
    }
    if args.self_test {
        let lines = run_self_test();
        for l in &lines {
            println!(
                "{} {}: {:.3e} (tolerance {:.0e})",
                if l.passed { "PASS" } else { "FAIL" },
                l.name,
                l.value,
                l.tolerance
            );
        }
        let failed: Vec<_> = lines.iter().filter(|l| !l.passed).map(|l| l.name).collect();
        if !failed.is_empty() {
            return Err(CliError::SelfTest(failed.join(", ")));
        }
    }
    let Some(path) = &args.scenario else {
        if args.self_test {
            return Ok(());
        }
        return Err(CliError::Schema("no scenario file given".into()));
    };
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| CliError::Schema("scenario is not UTF-8".into()))?;
    let scenario = Scenario::parse(&text)?;
    let result = run_scenario(&scenario)?;
    let (csv, manifest) = write_outputs(&args.out, &scenario, &bytes, result)?;
    println!("{}", csv.display());
    println!("{}", manifest.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mwk: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
