use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::{export_episodes, export_interpretability, Checkpoint, EvalSummary, ExperimentConfig, MetricsRow, MetricsWriter};
use crate::error::{Error, Result};
use crate::metaloop::{eval_episodes, evaluate, MetaParams, TrainConfig, Trainer, Variant};
use crate::taskenc::Modulation;

/// Environment variable that overrides the configured output root.
pub const OUT_ENV: &str = "ARML_OUT";

pub fn out_root(cfg: &ExperimentConfig) -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| cfg.out_dir.clone())
}

/// Short name of a configuration: the mode, plus the modulation when it is
/// not the default.
pub fn variant_label(cfg: &TrainConfig) -> String {
    Variant {
        mode: cfg.mode,
        modulation: (cfg.modulation != Modulation::default()).then_some(cfg.modulation),
    }
    .to_string()
}

pub struct TrainReport {
    pub dir: PathBuf,
    pub trainer: Trainer,
    /// Held-out evaluation after the final iteration; absent when stopped early.
    pub summary: Option<EvalSummary>,
}

pub fn evaluate_summary(phi: &MetaParams, cfg: &TrainConfig, n: usize) -> Result<EvalSummary> {
    let episodes = eval_episodes(cfg, n)?;
    Ok(EvalSummary::new(variant_label(cfg), evaluate(phi, &episodes, cfg)?))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Meta-trains into `dir` until `until` iterations (capped at the configured
/// total), optionally continuing from `resume`.
///
/// Writes `metrics.csv`, `timing.csv` and `checkpoint.bin`; on reaching the
/// configured total also `eval.json` and, for graph modes with heatmaps
/// enabled, the interpretability exports under `export/`.
pub fn train_until(cfg: &ExperimentConfig, dir: &Path, resume: Option<Checkpoint>, until: u64) -> Result<TrainReport> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut trainer = match resume {
        Some(ck) => {
            if ck.config.train != cfg.train {
                return Err(Error::Contract("checkpoint was written under a different training configuration".into()));
            }
            ck.into_trainer()
        }
        None => Trainer::new(cfg.train.clone())?,
    };
    let total = cfg.train.iterations as u64;
    let until = until.min(total);
    let eval_set = eval_episodes(&cfg.train, cfg.eval_tasks)?;
    let mut metrics = MetricsWriter::open(dir, trainer.iteration)?;
    let checkpoint_path = dir.join("checkpoint.bin");
    let started = Instant::now();
    let mut final_mse = None;

    if trainer.iteration == total {
        final_mse = Some(evaluate(&trainer.phi, &eval_set, &trainer.config)?);
    }
    while trainer.iteration < until {
        let m = trainer.step()?;
        let it = trainer.iteration;
        let last = it == total;
        let due = cfg.eval_every > 0 && it % cfg.eval_every == 0;
        let eval = if due || last {
            let per_task = evaluate(&trainer.phi, &eval_set, &trainer.config)?;
            let stats = super::mean_ci95(&per_task);
            log::info!(
                "{} iteration {it}: train {:.4}, eval mse {:.4} ± {:.4}",
                variant_label(&trainer.config),
                m.mean_loss,
                stats.0,
                stats.1
            );
            if last {
                final_mse = Some(per_task);
            }
            Some(stats)
        } else {
            None
        };
        metrics.push(&MetricsRow {
            iteration: it,
            meta_train_loss: m.mean_loss,
            mean_test_loss: m.mean_test,
            mean_l_t: m.mean_l_t,
            mean_l_q: m.mean_l_q,
            eval,
            wall_seconds: started.elapsed().as_secs_f64(),
        })?;
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
            metrics.flush()?;
            Checkpoint::from_trainer(cfg, &trainer).save(&checkpoint_path)?;
        }
    }
    metrics.flush()?;
    Checkpoint::from_trainer(cfg, &trainer).save(&checkpoint_path)?;

    let summary = match final_mse {
        Some(per_task) => {
            let summary = EvalSummary::new(variant_label(&trainer.config), per_task);
            write_json(&dir.join("eval.json"), &summary)?;
            if cfg.export_heatmaps && trainer.config.mode.uses_graph() {
                let episodes = export_episodes(&trainer.config, cfg.export_episodes)?;
                export_interpretability(&trainer.phi, &trainer.config, &episodes, cfg.edge_threshold, &dir.join("export"))?;
            }
            Some(summary)
        }
        None => None,
    };
    Ok(TrainReport {
        dir: dir.to_path_buf(),
        trainer,
        summary,
    })
}

pub fn train(cfg: &ExperimentConfig, dir: &Path) -> Result<TrainReport> {
    train_until(cfg, dir, None, cfg.train.iterations as u64)
}

/// Evaluates a checkpoint on `n` held-out tasks and writes the summary
/// next to it as `eval_<n>.json`.
pub fn eval_checkpoint(path: &Path, n: usize) -> Result<EvalSummary> {
    if n == 0 {
        return Err(Error::Domain("need at least one evaluation task".into()));
    }
    let ck = Checkpoint::load(path)?;
    let summary = evaluate_summary(&ck.phi, &ck.config.train, n)?;
    let out = path.with_file_name(format!("eval_{n}.json"));
    write_json(&out, &summary)?;
    Ok(summary)
}

/// One row of a comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub variant: String,
    pub g: usize,
    pub seed: u64,
    pub iterations: usize,
    pub meta_batch: usize,
    pub summary: EvalSummary,
}

pub const COMPARE_HEADER: &str = "variant,g,seed,iterations,meta_batch,eval_n,mean_mse,ci95";

impl CompareRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:?},{:?}",
            self.variant,
            self.g,
            self.seed,
            self.iterations,
            self.meta_batch,
            self.summary.n,
            self.summary.mean_mse,
            self.summary.ci95
        )
    }
}

/// Trains every variant, and every vertex count when `vertices` is given,
/// under the seed and budget of `cfg`. Each run lives in
/// `<root>/compare/<variant>[-g<G>]`; the table goes to `compare.csv`.
pub fn compare(cfg: &ExperimentConfig, variants: &[Variant], vertices: Option<&[usize]>, root: &Path) -> Result<Vec<CompareRow>> {
    if variants.is_empty() {
        return Err(Error::Domain("no modes to compare".into()));
    }
    let base = root.join("compare");
    let gs: Vec<Option<usize>> = match vertices {
        Some(v) => v.iter().map(|&g| Some(g)).collect(),
        None => vec![None],
    };
    let mut rows = Vec::new();
    for v in variants {
        for g in &gs {
            let mut run = cfg.clone();
            run.train = v.apply(&cfg.train);
            let mut name = variant_label(&run.train);
            if let Some(g) = *g {
                run.train.g = g;
                name = format!("{name}-g{g}");
            }
            let report = train(&run, &base.join(&name))?;
            let summary = report.summary.expect("trained to completion");
            rows.push(CompareRow {
                variant: variant_label(&run.train),
                g: run.train.g,
                seed: run.train.seed,
                iterations: run.train.iterations,
                meta_batch: run.train.meta_batch,
                summary,
            });
        }
    }
    let mut csv = String::from(COMPARE_HEADER);
    csv.push('\n');
    for r in &rows {
        let _ = writeln!(csv, "{}", r.csv_line());
    }
    let path = base.join("compare.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

/// Fixed-width rendering of a comparison for the terminal.
pub fn format_table(rows: &[CompareRow]) -> String {
    let mut s = format!("{:<20} {:>4} {:>8} {:>10} {:>10}\n", "variant", "G", "tasks", "mean mse", "ci95");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<20} {:>4} {:>8} {:>10.4} {:>10.4}",
            r.variant, r.g, r.summary.n, r.summary.mean_mse, r.summary.ci95
        );
    }
    s
}
