use clap::Parser;
use sgfio::cli::{self, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Numerical laboratory for SG Fourier integral operators.
#[derive(Parser)]
#[command(name = "sgfio", version)]
struct Args {
    /// Experiment to run; may instead be given as `subcommand` in the config.
    #[arg(value_enum)]
    subcommand: Option<Subcommand>,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Single-threaded, deterministic reductions.
    #[arg(long)]
    serial: bool,
    /// Output directory (overrides SGFIO_OUT and the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match cli::run(args.subcommand, &args.config, args.serial, args.out.as_deref()) {
        Ok(outcome) => {
            let r = &outcome.report;
            for c in &r.checks {
                eprintln!("{} {} = {:e} (limit {:e})", if c.pass { "ok  " } else { "FAIL" }, c.name, c.value, c.limit);
            }
            eprintln!("{}: {} -> {}", r.subcommand, if r.pass { "pass" } else { "check failure" }, outcome.out_dir.display());
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("sgfio: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
