use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dip_restore::experiment::{
    compare_methods, make_synthetic_tomo, parse_config, run_experiment, write_comparison_csv,
};
use dip_restore::imaging::save_image;
use dip_restore::Result;

#[derive(Parser)]
#[command(name = "restore", version, about = "Deep image prior restoration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config.
    Run { config: PathBuf },
    /// Run several configs on the same observation and tabulate them.
    Compare {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Also write the table here (it always goes to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic piecewise-constant phantom as PNG.
    Phantom {
        #[arg(long)]
        size: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config } => {
            let cfg = parse_config(&config)?;
            let r = run_experiment(&cfg)?;
            let s = &r.summary;
            println!(
                "{}: best {:.3} dB at {} (noisy {:.3} dB), final {:.3} dB -> {}",
                s.mode,
                s.best_psnr,
                s.best_iteration,
                s.noisy_psnr,
                s.final_psnr,
                cfg.output_dir.display()
            );
        }
        Command::Compare { configs, out } => {
            let cfgs = configs.iter().map(parse_config).collect::<Result<Vec<_>>>()?;
            let rows = compare_methods(&cfgs)?;
            write_comparison_csv(&rows, std::io::stdout().lock())?;
            if let Some(path) = out {
                write_comparison_csv(&rows, std::fs::File::create(path)?)?;
            }
        }
        Command::Phantom { size, seed, out } => save_image(&make_synthetic_tomo(size, seed)?, out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
