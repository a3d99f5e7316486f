use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::basemodel::HIDDEN;
use crate::error::{Error, Result};
use crate::taskenc::Modulation;
use crate::taskgen::{NOISE_STD, N_TEST, N_TRAIN};

/// Which parts of the pipeline run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Full model.
    #[default]
    Arml,
    /// Shared initialization only.
    Maml,
    /// Task representation from raw prototypes, no knowledge graph.
    NoKg,
    /// Autoencoders run but their reconstruction losses are not optimized.
    NoRecon,
    /// Prototype-to-prototype edges zeroed.
    NoProtoLinks,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Arml, Mode::Maml, Mode::NoKg, Mode::NoRecon, Mode::NoProtoLinks];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Arml => "arml",
            Mode::Maml => "maml",
            Mode::NoKg => "no-kg",
            Mode::NoRecon => "no-recon",
            Mode::NoProtoLinks => "no-proto-links",
        }
    }

    pub fn uses_graph(self) -> bool {
        matches!(self, Mode::Arml | Mode::NoRecon | Mode::NoProtoLinks)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let s = s.strip_prefix("ablation-").unwrap_or(s);
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown mode `{s}`")))
    }
}

/// A mode optionally paired with a modulation override, written
/// `mode` or `mode-modulation` (e.g. `arml-film`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub mode: Mode,
    pub modulation: Option<Modulation>,
}

impl Variant {
    pub fn apply(&self, cfg: &TrainConfig) -> TrainConfig {
        let mut out = cfg.clone();
        out.mode = self.mode;
        if let Some(m) = self.modulation {
            out.modulation = m;
        }
        out
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.modulation {
            Some(m) => write!(f, "{}-{}", self.mode, m),
            None => write!(f, "{}", self.mode),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(mode) = s.parse() {
            return Ok(Variant { mode, modulation: None });
        }
        let (head, tail) = s
            .rsplit_once('-')
            .ok_or_else(|| Error::Domain(format!("unknown mode `{s}`")))?;
        Ok(Variant {
            mode: head.parse()?,
            modulation: Some(tail.parse()?),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterOptimizer {
    #[default]
    Adam,
    Sgd,
}

impl FromStr for OuterOptimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "adam" => Ok(OuterOptimizer::Adam),
            "sgd" => Ok(OuterOptimizer::Sgd),
            other => Err(Error::Domain(format!("unknown optimizer `{other}`"))),
        }
    }
}

impl fmt::Display for OuterOptimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OuterOptimizer::Adam => "adam",
            OuterOptimizer::Sgd => "sgd",
        })
    }
}

/// What the outer step minimizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Adapted test loss plus weighted reconstruction losses.
    #[default]
    Full,
    /// `L_t + L_q` alone; the base learner is not run.
    Reconstruction,
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "full" => Ok(Objective::Full),
            "reconstruction" => Ok(Objective::Reconstruction),
            other => Err(Error::Domain(format!("unknown objective `{other}`"))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Full => "full",
            Objective::Reconstruction => "reconstruction",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Inner step size.
    pub alpha: f64,
    /// Outer learning rate.
    pub beta: f64,
    /// Weight of the knowledge-graph reconstruction loss.
    pub mu1: f64,
    /// Weight of the prototype reconstruction loss.
    pub mu2: f64,
    pub meta_batch: usize,
    pub inner_steps: usize,
    /// Prototypes per task.
    pub k: usize,
    /// Knowledge-graph vertices.
    pub g: usize,
    /// Embedding width.
    pub d: usize,
    /// Autoencoder state width.
    pub d_h: usize,
    /// Base network hidden width.
    pub hidden: usize,
    pub mode: Mode,
    pub modulation: Modulation,
    pub second_order: bool,
    pub seed: u64,
    pub iterations: usize,
    pub optimizer: OuterOptimizer,
    pub objective: Objective,
    pub gamma_r: f64,
    pub gamma_o: f64,
    pub gamma_s: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub noise_std: f64,
    /// Evaluate the tasks of a batch on the thread pool.
    pub parallel: bool,
    /// Diagnostic: replace the modulation gate with ones.
    pub unit_gate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.001,
            beta: 0.001,
            mu1: 0.1,
            mu2: 0.1,
            meta_batch: 25,
            inner_steps: 5,
            k: 2,
            g: 6,
            d: 40,
            d_h: 40,
            hidden: HIDDEN,
            mode: Mode::Arml,
            modulation: Modulation::Sigmoid,
            second_order: true,
            seed: 0,
            iterations: 10_000,
            optimizer: OuterOptimizer::Adam,
            objective: Objective::Full,
            gamma_r: 1.0,
            gamma_o: 1.0,
            gamma_s: 1.0,
            n_train: N_TRAIN,
            n_test: N_TEST,
            noise_std: NOISE_STD,
            parallel: true,
            unit_gate: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma_r", self.gamma_r),
            ("gamma_o", self.gamma_o),
            ("gamma_s", self.gamma_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("mu1", self.mu1), ("mu2", self.mu2), ("noise_std", self.noise_std)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be non-negative, got {v}")));
            }
        }
        let counts = [
            ("meta_batch", self.meta_batch),
            ("k", self.k),
            ("g", self.g),
            ("d", self.d),
            ("d_h", self.d_h),
            ("hidden", self.hidden),
            ("n_train", self.n_train),
            ("n_test", self.n_test),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Domain(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}
