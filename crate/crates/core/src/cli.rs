//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{config_dir, parse_config};
use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::federation::Summary;
use crate::metrics::{
    compare, render_table, write_summary, MetricsWriter, METRICS_FILE, SUMMARY_FILE,
};

#[derive(Debug, Parser)]
#[command(
    name = "fedclust",
    version,
    about = "Cluster-based client selection for federated learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write metrics.jsonl and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output.dir` (which is relative to the config file).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        /// Suppress per-round progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Tabulate top accuracy and transmissions for finished runs.
    Compare {
        #[arg(required = true, num_args = 1..)]
        metrics: Vec<PathBuf>,
    },
    /// Print the per-client label distribution a config produces.
    Partition {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            threads,
            quiet,
        } => cmd_run(&config, out, seed, threads, quiet).map(|s| println!("{}", summary_line(&s))),
        Command::Compare { metrics } => {
            compare(&metrics).map(|rows| print!("{}", render_table(&rows)))
        }
        Command::Partition { config } => cmd_partition(&config).map(|t| print!("{t}")),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn cmd_run(
    config: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
    quiet: bool,
) -> Result<Summary> {
    let mut cfg = parse_config(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(threads) = threads {
        cfg.threads = threads;
    }
    cfg.validate()?;
    let out = out.unwrap_or_else(|| config_dir(config).join(&cfg.output.dir));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let sim = cfg.build_simulation(&config_dir(config))?;
    let method = sim.method();
    let mut writer = MetricsWriter::create(out.join(METRICS_FILE))?;
    let (_, summary) = sim.run(|r| {
        if !quiet {
            eprintln!(
                "round {:>4}  p={:<3} loss={:.4}  acc={:.4}  uploads={}",
                r.round, r.p, r.mean_loss, r.accuracy, r.cumulative_uploads
            );
        }
        writer.write(&method, r)
    })?;
    writer.finish()?;
    write_summary(out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

pub fn summary_line(s: &Summary) -> String {
    format!(
        "method={} rounds={} top_accuracy={:.4} top_round={} transmissions={} modal_p={}",
        s.method, s.rounds, s.top_accuracy, s.top_accuracy_round, s.total_uploads, s.modal_p
    )
}

pub fn cmd_partition(config: &Path) -> Result<String> {
    let cfg = parse_config(config)?;
    let (shards, _) = cfg.load_data(&config_dir(config))?;
    Ok(partition_table(&shards))
}

/// Client-by-label sample counts.
pub fn partition_table(shards: &[ClientShard]) -> String {
    let classes = shards
        .iter()
        .map(|s| s.dataset.classes())
        .max()
        .unwrap_or(0);
    let mut out = String::from("client");
    for l in 0..classes {
        out.push_str(&format!(" {:>6}", l));
    }
    out.push_str("  total\n");
    for s in shards {
        let counts = s.dataset.label_counts();
        out.push_str(&format!("{:>6}", s.client_id));
        for l in 0..classes {
            out.push_str(&format!(" {:>6}", counts.get(&l).copied().unwrap_or(0)));
        }
        out.push_str(&format!("  {:>5}\n", s.sample_count()));
    }
    out
}
