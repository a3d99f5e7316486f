use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metaloop::TrainConfig;

/// Training configuration plus run-level settings.
///
/// Stored as flat `key = value` lines; `#` starts a comment. Keys that are
/// omitted keep their defaults. The key list lives in [`ExperimentConfig::KEYS`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub eval_tasks: usize,
    /// Evaluate on the held-out set every this many iterations (0: only at the end).
    pub eval_every: u64,
    pub export_heatmaps: bool,
    /// Episodes per family written by `export`.
    pub export_episodes: usize,
    pub edge_threshold: f64,
    pub out_dir: PathBuf,
    /// Save a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: TrainConfig::default(),
            eval_tasks: 200,
            eval_every: 500,
            export_heatmaps: true,
            export_episodes: 1,
            edge_threshold: 0.5,
            out_dir: PathBuf::from("runs"),
            checkpoint_every: 1000,
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Config {
        line,
        msg: format!("invalid value `{raw}` for `{key}`"),
    })
}

fn parse_bool(line: usize, key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config {
            line,
            msg: format!("invalid boolean `{raw}` for `{key}`"),
        }),
    }
}

fn parse_enum<T: FromStr<Err = Error>>(line: usize, raw: &str) -> Result<T> {
    raw.parse().map_err(|e: Error| Error::Config { line, msg: e.to_string() })
}

impl ExperimentConfig {
    pub const KEYS: &'static [&'static str] = &[
        "alpha",
        "beta",
        "mu1",
        "mu2",
        "meta_batch",
        "inner_steps",
        "k",
        "g",
        "d",
        "d_h",
        "hidden",
        "mode",
        "modulation",
        "second_order",
        "seed",
        "iterations",
        "optimizer",
        "objective",
        "gamma_r",
        "gamma_o",
        "gamma_s",
        "n_train",
        "n_test",
        "noise_std",
        "parallel",
        "unit_gate",
        "eval_tasks",
        "eval_every",
        "export_heatmaps",
        "export_episodes",
        "edge_threshold",
        "out_dir",
        "checkpoint_every",
    ];

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                msg: format!("expected `key = value`, got `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    line,
                    msg: format!("duplicate key `{key}`"),
                });
            }
            cfg.set(line, key, value)?;
        }
        cfg.validate_at(0)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "alpha" => t.alpha = parse_value(line, key, v)?,
            "beta" => t.beta = parse_value(line, key, v)?,
            "mu1" => t.mu1 = parse_value(line, key, v)?,
            "mu2" => t.mu2 = parse_value(line, key, v)?,
            "meta_batch" => t.meta_batch = parse_value(line, key, v)?,
            "inner_steps" => t.inner_steps = parse_value(line, key, v)?,
            "k" => t.k = parse_value(line, key, v)?,
            "g" => t.g = parse_value(line, key, v)?,
            "d" => t.d = parse_value(line, key, v)?,
            "d_h" => t.d_h = parse_value(line, key, v)?,
            "hidden" => t.hidden = parse_value(line, key, v)?,
            "mode" => t.mode = parse_enum(line, v)?,
            "modulation" => t.modulation = parse_enum(line, v)?,
            "second_order" => t.second_order = parse_bool(line, key, v)?,
            "seed" => t.seed = parse_value(line, key, v)?,
            "iterations" => t.iterations = parse_value(line, key, v)?,
            "optimizer" => t.optimizer = parse_enum(line, v)?,
            "objective" => t.objective = parse_enum(line, v)?,
            "gamma_r" => t.gamma_r = parse_value(line, key, v)?,
            "gamma_o" => t.gamma_o = parse_value(line, key, v)?,
            "gamma_s" => t.gamma_s = parse_value(line, key, v)?,
            "n_train" => t.n_train = parse_value(line, key, v)?,
            "n_test" => t.n_test = parse_value(line, key, v)?,
            "noise_std" => t.noise_std = parse_value(line, key, v)?,
            "parallel" => t.parallel = parse_bool(line, key, v)?,
            "unit_gate" => t.unit_gate = parse_bool(line, key, v)?,
            "eval_tasks" => self.eval_tasks = parse_value(line, key, v)?,
            "eval_every" => self.eval_every = parse_value(line, key, v)?,
            "export_heatmaps" => self.export_heatmaps = parse_bool(line, key, v)?,
            "export_episodes" => self.export_episodes = parse_value(line, key, v)?,
            "edge_threshold" => self.edge_threshold = parse_value(line, key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "checkpoint_every" => self.checkpoint_every = parse_value(line, key, v)?,
            other => {
                return Err(Error::Config {
                    line,
                    msg: format!("unknown key `{other}`"),
                })
            }
        }
        self.validate_at(line)
    }

    fn validate_at(&self, line: usize) -> Result<()> {
        let wrap = |msg: String| Error::Config { line, msg };
        if !(0.0..=1.0).contains(&self.edge_threshold) {
            return Err(wrap(format!("edge_threshold must lie in [0, 1], got {}", self.edge_threshold)));
        }
        if self.eval_tasks == 0 {
            return Err(wrap("eval_tasks must be at least 1".into()));
        }
        self.train.validate().map_err(|e| wrap(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_at(0)
    }

    /// Canonical text form; [`ExperimentConfig::parse`] reads it back exactly.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("alpha", format!("{:?}", t.alpha));
        kv("beta", format!("{:?}", t.beta));
        kv("mu1", format!("{:?}", t.mu1));
        kv("mu2", format!("{:?}", t.mu2));
        kv("meta_batch", t.meta_batch.to_string());
        kv("inner_steps", t.inner_steps.to_string());
        kv("k", t.k.to_string());
        kv("g", t.g.to_string());
        kv("d", t.d.to_string());
        kv("d_h", t.d_h.to_string());
        kv("hidden", t.hidden.to_string());
        kv("mode", t.mode.to_string());
        kv("modulation", t.modulation.to_string());
        kv("second_order", t.second_order.to_string());
        kv("seed", t.seed.to_string());
        kv("iterations", t.iterations.to_string());
        kv("optimizer", t.optimizer.to_string());
        kv("objective", t.objective.to_string());
        kv("gamma_r", format!("{:?}", t.gamma_r));
        kv("gamma_o", format!("{:?}", t.gamma_o));
        kv("gamma_s", format!("{:?}", t.gamma_s));
        kv("n_train", t.n_train.to_string());
        kv("n_test", t.n_test.to_string());
        kv("noise_std", format!("{:?}", t.noise_std));
        kv("parallel", t.parallel.to_string());
        kv("unit_gate", t.unit_gate.to_string());
        kv("eval_tasks", self.eval_tasks.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("export_heatmaps", self.export_heatmaps.to_string());
        kv("export_episodes", self.export_episodes.to_string());
        kv("edge_threshold", format!("{:?}", self.edge_threshold));
        kv("out_dir", self.out_dir.display().to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        s
    }
}
