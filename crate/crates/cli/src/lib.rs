//! Command-line front end for augmentation policy search.

pub mod commands;
pub mod config;
pub mod formats;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::config::{RunConfig, RunFlags};
use crate::formats::DatasetFormat;

#[derive(Parser, Debug)]
#[command(name = "augsearch", version, about = "Greedy augmentation policy search and dataset expansion")]
pub struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Search augmentation chains; writes policies.json and report.txt to --out
    Search(RunFlags),
    /// Expand a dataset with searched chains; writes the dataset and manifest.json to --out
    Expand {
        #[command(flatten)]
        run: RunFlags,
        /// Policies file produced by `search`
        #[arg(long)]
        policies: PathBuf,
        /// Must match the input format if given
        #[arg(long)]
        output_format: Option<String>,
    },
    /// Apply one chain to a PNG image
    Apply {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        policies: PathBuf,
        /// Zero-based chain index (0 is the best chain)
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output PNG path
        #[arg(long)]
        out: PathBuf,
    },
    /// Print dataset statistics
    Inspect(RunFlags),
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    let resolved = match &cli.command {
        Command::Search(flags) | Command::Inspect(flags) | Command::Expand { run: flags, .. } => {
            Some(RunConfig::resolve(flags, threads)?)
        }
        Command::Apply { .. } => None,
    };
    let threads = resolved.as_ref().map_or(threads, |c| c.threads);
    let pool = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().context("building the thread pool")?,
        None => rayon::ThreadPoolBuilder::new().build().context("building the thread pool")?,
    };
    pool.install(|| dispatch(&cli.command, resolved.as_ref()))
}

fn dispatch(command: &Command, cfg: Option<&RunConfig>) -> Result<()> {
    match command {
        Command::Search(_) => {
            let outcome = commands::search(cfg.expect("resolved"))?;
            print!("{}", outcome.report);
            println!("wrote {}", outcome.policies_path.display());
        }
        Command::Expand { policies, output_format, .. } => {
            let format = output_format.as_deref().map(str::parse::<DatasetFormat>).transpose()?;
            let outcome = commands::expand(cfg.expect("resolved"), policies, format)?;
            println!("{}", serde_json::to_string(&outcome.manifest)?);
            println!("wrote {}", outcome.output.path.display());
        }
        Command::Apply { image, policies, index, seed, out } => {
            commands::apply(image, policies, *index, *seed, out)?;
            println!("wrote {}", out.display());
        }
        Command::Inspect(_) => print!("{}", commands::inspect(cfg.expect("resolved"))?),
    }
    Ok(())
}
