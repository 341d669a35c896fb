//! Command-line front end: `thyp --config run.toml [--out DIR] [--seed N]`.
//!
//! The config file selects one of the commands `scan`, `solve`, `probe`,
//! `speeds`; see the crate README for the schema. Exit codes: 0 ok,
//! 2 config error, 3 hyperbolicity failure, 4 continuation halted,
//! 5 internal error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

#[derive(Parser)]
#[command(name = "thyp", version, about = "Strong-hyperbolicity scans and quasilinear solves on the torus")]
struct Args {
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sampling seed (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let code = thyp::cli::load_and_run(&args.config, args.out.as_deref(), args.seed);
    ExitCode::from(code as u8)
}
