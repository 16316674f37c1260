use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eventgait::config::RunConfig;
use eventgait::driver;
use eventgait::Result;

/// Event-based gait recognition toolkit.
#[derive(Parser)]
#[command(name = "eventgait", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a directory of PGM frames into an event file.
    Simulate {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Voxelize an event file into VOX1 grids.
    Voxelize {
        #[arg(long = "in")]
        input: PathBuf,
        /// Temporal bins per grid.
        #[arg(long)]
        k: usize,
        /// Equal sub-windows, one grid each.
        #[arg(long, default_value_t = 1)]
        slices: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the toy benchmark and evaluate.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score gallery/probe retrieval with a trained checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on a small model.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { frames, config, out } => {
            let cfg = RunConfig::load(&config)?;
            let stream = driver::simulate(&frames, &cfg.sim, &out)?;
            println!("{} events, {}x{}, window {:?}", stream.len(), stream.width(), stream.height(), stream.window());
        }
        Command::Voxelize { input, k, slices, out } => {
            let grids = driver::voxelize(&input, k, slices, &out)?;
            for (i, g) in grids.iter().enumerate() {
                println!("grid {i}: {} bins, {}x{}, mass {}", g.bins(), g.width(), g.height(), g.total_mass());
            }
        }
        Command::Train { config, out_dir } => {
            let cfg = RunConfig::load(&config)?;
            let outcome = driver::train(&cfg, &out_dir, |row| {
                if row.iteration % 50 == 0 || row.iteration == 1 {
                    eprintln!(
                        "iter {:>5}  ce {:.4}  tri {:.4}  align {:.4}  total {:.4}",
                        row.iteration, row.ce, row.tri, row.align, row.total
                    );
                }
            })?;
            for c in &outcome.results {
                println!("{}: rank-1 {:.2}  mAP {:.2}  mINP {:.2}", c.name, c.result.rank1, c.result.map, c.result.minp);
            }
        }
        Command::Eval { checkpoint, gallery, probe, csv } => {
            let r = driver::eval(&checkpoint, &gallery, &probe, csv.as_deref())?;
            println!("rank-1 {:.2}  mAP {:.2}  mINP {:.2}  ({} probes)", r.rank1, r.map, r.minp, r.evaluated());
            if !r.excluded.is_empty() {
                println!("excluded (identity not in gallery): {}", r.excluded.join(", "));
            }
        }
        Command::Gradcheck { config } => {
            let cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            let r = driver::gradcheck(&cfg.gradcheck)?;
            println!("{} parameters, max relative error {:e}", r.entries.len(), r.max_rel_error());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
