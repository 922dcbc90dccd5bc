use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cqm_cli::{run, Profile, RunOptions};

#[derive(Parser)]
#[command(name = "cqm", version, about = "Run covariant quantum mechanics scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every task of a scenario.
    Run(Common),
    /// Check the geometry of a scenario only.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = "CQM_OUT_DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "grid")]
    tolerance_profile: Profile,
    /// Curvature factor multiplying the scalar curvature term.
    #[arg(long, allow_negative_numbers = true)]
    k: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, validate_only) = match cli.command {
        Command::Run(c) => (c, false),
        Command::Validate(c) => (c, true),
    };
    let options = RunOptions {
        out_dir: common.out,
        profile: common.tolerance_profile,
        k_factor: common.k,
        validate_only,
    };
    match run(&common.config, &options) {
        Ok(summary) => {
            for t in &summary.manifest.tasks {
                println!("{} {} ({})", if t.pass { "PASS" } else { "FAIL" }, t.id, t.kind);
            }
            println!("outputs in {}", summary.out_dir.display());
            if summary.passed() {
                ExitCode::SUCCESS
            } else {
                for f in summary.failed_checks() {
                    eprintln!("check failed: {f}");
                }
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
