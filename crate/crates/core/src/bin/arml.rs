use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use arml::harness::{
    compare, eval_checkpoint, export_episodes, export_interpretability, format_table, out_root, train_until,
    variant_label, Checkpoint, ExperimentConfig,
};
use arml::metaloop::Variant;

#[derive(Parser)]
#[command(name = "arml", version, about = "Relational meta-learning for few-shot 2D regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint written under the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many iterations instead of the configured total.
        #[arg(long)]
        until: Option<u64>,
    },
    /// Evaluate a checkpoint on held-out tasks.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 200)]
        tasks: usize,
    },
    /// Write prototype/vertex heatmaps and the thresholded knowledge graph.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value_t = 1)]
        episodes_per_family: usize,
    },
    /// Train several modes under one seed and budget and tabulate them.
    Compare {
        #[arg(long, value_delimiter = ',', required = true)]
        modes: Vec<Variant>,
        #[arg(long)]
        config: PathBuf,
        /// Also sweep the knowledge-graph vertex count.
        #[arg(long, value_delimiter = ',')]
        vertices: Option<Vec<usize>>,
    },
}

fn run(cli: Cli) -> arml::Result<()> {
    match cli.command {
        Command::Train { config, resume, until } => {
            let cfg = ExperimentConfig::load(&config)?;
            let resume = resume.map(|p| Checkpoint::load(&p)).transpose()?;
            let dir = out_root(&cfg).join(variant_label(&cfg.train));
            let until = until.unwrap_or(cfg.train.iterations as u64);
            let report = train_until(&cfg, &dir, resume, until)?;
            println!("wrote {}", report.dir.display());
            if let Some(s) = report.summary {
                println!("{}: mean mse {:.4} ± {:.4} over {} tasks", s.mode, s.mean_mse, s.ci95, s.n);
            }
        }
        Command::Eval { checkpoint, tasks } => {
            let s = eval_checkpoint(&checkpoint, tasks)?;
            println!("{}", serde_json::to_string(&serde_json::json!({
                "mode": s.mode,
                "n": s.n,
                "mean_mse": s.mean_mse,
                "ci95": s.ci95,
            }))?);
        }
        Command::Export {
            checkpoint,
            threshold,
            episodes_per_family,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let episodes = export_episodes(&ck.config.train, episodes_per_family)?;
            let dir = out_root(&ck.config).join(variant_label(&ck.config.train)).join("export");
            let report = export_interpretability(&ck.phi, &ck.config.train, &episodes, threshold, &dir)?;
            println!(
                "wrote {} heatmaps and {} ({} edges)",
                report.heatmaps.len(),
                report.graph.display(),
                report.edges
            );
        }
        Command::Compare { modes, config, vertices } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rows = compare(&cfg, &modes, vertices.as_deref(), &out_root(&cfg))?;
            print!("{}", format_table(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
