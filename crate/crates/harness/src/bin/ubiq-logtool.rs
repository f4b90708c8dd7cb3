use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use ubiq_harness::logtool;

/// Merge and summarise JSONL event logs.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print every line of every file, ordered by ticks.
    Merge {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write latency.csv (mean ms, from row to column) and bandwidth.csv (per second).
    Stats {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    ubiq_harness::init_tracing();
    match Args::parse().command {
        Command::Merge { files, out } => {
            let lines = logtool::merge(&files)?;
            let mut sink: Box<dyn Write> = match &out {
                Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
                None => Box::new(std::io::stdout().lock()),
            };
            for l in lines {
                writeln!(sink, "{l}")?;
            }
        }
        Command::Stats { files, out_dir } => {
            let events = logtool::read_events(&files)?;
            std::fs::create_dir_all(&out_dir)?;
            let matrix = logtool::latency_matrix(&events);
            let rows = logtool::bandwidth(&events);
            std::fs::write(out_dir.join("latency.csv"), matrix.to_csv())?;
            std::fs::write(out_dir.join("bandwidth.csv"), logtool::bandwidth_csv(&rows))?;
            println!("{} events, {} latency pairs, {} seconds of bandwidth", events.len(), matrix.populated_pairs(), rows.len());
        }
    }
    Ok(())
}
