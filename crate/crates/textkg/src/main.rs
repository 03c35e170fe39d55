//! Command-line front end for the corpus → topics → knowledge-graph
//! pipeline. Exit codes: 0 success, 1 configuration/validation error,
//! 2 stage failure during a run.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use textkg::kg::export::ExportFormat;
use textkg::pipeline::{
    export_from_checkpoint, load_config, run_pipeline, stats_report, Stage, StageStatus,
};
use textkg::Error;

#[derive(Parser)]
#[command(
    name = "textkg",
    version,
    about = "Turn a document corpus into topics and a typed knowledge graph"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the configuration and referenced files without running anything.
    Validate {
        /// TOML configuration file.
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the pipeline end to end, reusing intact stage checkpoints.
    Run {
        /// TOML configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Re-execute from this stage onward even if checkpoints are intact
        /// (ingest, clean, matrices, hierarchy, annotations, graph, export).
        #[arg(long)]
        from: Option<String>,
    },
    /// Re-export the assembled graph in another format.
    Export {
        /// TOML configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Output format: jsonl, graphml, or cypher.
        #[arg(long)]
        format: String,
        /// Target file; defaults to export/graph.<ext> in the output dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print graph counts and per-topic category histograms as TSV.
    Stats {
        /// TOML configuration file.
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Stage { .. } => 2,
                _ => 1,
            };
            std::process::exit(code);
        }
    }
}

fn run(cli: Cli) -> textkg::Result<()> {
    match cli.command {
        Command::Validate { config } => {
            let config = load_config(&config)?;
            config.validate()?;
            println!("configuration OK");
            println!("output directory: {}", config.output_dir.display());
        }
        Command::Run { config, from } => {
            let config = load_config(&config)?;
            let from = from.as_deref().map(Stage::parse).transpose()?;
            let report = run_pipeline(&config, from)?;
            for (stage, status) in &report.statuses {
                match status {
                    StageStatus::Executed { wall_ms } => {
                        println!("stage {stage}: done ({wall_ms} ms)")
                    }
                    StageStatus::Skipped => println!("stage {stage}: skipped (checkpoint)"),
                }
            }
            println!("outputs in {}", config.output_dir.display());
        }
        Command::Export { config, format, out } => {
            let config = load_config(&config)?;
            let format = ExportFormat::parse(&format)?;
            let path = export_from_checkpoint(&config, format, out)?;
            println!("wrote {}", path.display());
        }
        Command::Stats { config } => {
            let config = load_config(&config)?;
            print!("{}", stats_report(&config)?);
        }
    }
    Ok(())
}
