//! Few-shot 2D regression episodes drawn from six function families.
//!
//! Inputs are `(x, y)` with `x ~ U[0, 5]`. The two surface families also draw
//! `y ~ U[0, 5]`; the four curve families live in the `y = 1` slice of the
//! input plane. Targets carry additive Gaussian noise.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::diffmath::Tensor;
use crate::error::{Error, Result};

pub const INPUT_MIN: f64 = 0.0;
pub const INPUT_MAX: f64 = 5.0;
pub const NOISE_STD: f64 = 0.3;
pub const N_TRAIN: usize = 10;
pub const N_TEST: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Sinusoid,
    Line,
    Quadratic,
    Cubic,
    QuadSurface,
    Ripple,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Sinusoid,
        Family::Line,
        Family::Quadratic,
        Family::Cubic,
        Family::QuadSurface,
        Family::Ripple,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Sinusoid => "sinusoid",
            Family::Line => "line",
            Family::Quadratic => "quadratic",
            Family::Cubic => "cubic",
            Family::QuadSurface => "quad_surface",
            Family::Ripple => "ripple",
        }
    }

    /// Whether targets depend on the second input coordinate.
    pub fn is_surface(self) -> bool {
        matches!(self, Family::QuadSurface | Family::Ripple)
    }

    /// `(coefficient name, low, high)` sampling ranges.
    pub fn ranges(self) -> &'static [(&'static str, f64, f64)] {
        match self {
            Family::Sinusoid => &[("a_s", 0.1, 5.0), ("b_s", 0.0, 2.0 * PI), ("w_s", 0.8, 1.2)],
            Family::Line => &[("a_l", -3.0, 3.0), ("b_l", -3.0, 3.0)],
            Family::Quadratic => &[("a_q", -0.2, 0.2), ("b_q", -2.0, 2.0), ("c_q", -3.0, 3.0)],
            Family::Cubic => &[
                ("a_c", -0.1, 0.1),
                ("b_c", -0.2, 0.2),
                ("c_c", -2.0, 2.0),
                ("d_c", -3.0, 3.0),
            ],
            Family::QuadSurface => &[("a_qs", -1.0, 1.0), ("b_qs", -1.0, 1.0)],
            Family::Ripple => &[("a_r", -0.2, 0.2), ("b_r", -3.0, 3.0)],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Domain(format!("unknown function family `{s}`")))
    }
}

/// A family together with its coefficients, stored in the order given by
/// [`Family::ranges`].
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyParams {
    family: Family,
    coefficients: Vec<f64>,
}

impl FamilyParams {
    pub fn new(family: Family, coefficients: &[f64]) -> Result<Self> {
        if coefficients.len() != family.ranges().len() {
            return Err(Error::Domain(format!(
                "{family} takes {} coefficients, got {}",
                family.ranges().len(),
                coefficients.len()
            )));
        }
        Ok(FamilyParams {
            family,
            coefficients: coefficients.to_vec(),
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        self.family
            .ranges()
            .iter()
            .zip(&self.coefficients)
            .map(|((name, _, _), &v)| (*name, v))
    }

    /// Noiseless target at `(x, y)`.
    pub fn evaluate(&self, x: f64, y: f64) -> f64 {
        let c = &self.coefficients;
        match self.family {
            Family::Sinusoid => c[0] * (c[2] * x + c[1]).sin(),
            Family::Line => c[0] * x + c[1],
            Family::Quadratic => c[0] * x * x + c[1] * x + c[2],
            Family::Cubic => ((c[0] * x + c[1]) * x + c[2]) * x + c[3],
            Family::QuadSurface => c[0] * x * x + c[1] * y * y,
            Family::Ripple => (-c[0] * (x * x + y * y)).sin() + c[1],
        }
    }
}

/// Draws coefficients for `family`, or for a uniformly chosen family.
pub fn sample_family_params<R: Rng + ?Sized>(rng: &mut R, family: Option<Family>) -> FamilyParams {
    let family = family.unwrap_or_else(|| Family::ALL[rng.random_range(0..Family::ALL.len())]);
    let coefficients = family
        .ranges()
        .iter()
        .map(|&(_, lo, hi)| rng.random_range(lo..=hi))
        .collect();
    FamilyParams {
        family,
        coefficients,
    }
}

/// Noiseless function value.
pub fn evaluate_truth(params: &FamilyParams, x: f64, y: f64) -> f64 {
    params.evaluate(x, y)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub train_inputs: Tensor,
    pub train_targets: Tensor,
    pub test_inputs: Tensor,
    pub test_targets: Tensor,
    pub params: FamilyParams,
}

impl Episode {
    pub fn family(&self) -> Family {
        self.params.family
    }

    pub fn n_train(&self) -> usize {
        self.train_inputs.rows()
    }

    pub fn n_test(&self) -> usize {
        self.test_inputs.rows()
    }

    /// Training samples as `(x, y, z)` rows, `N×3`.
    pub fn train_samples(&self) -> Tensor {
        Tensor::from_fn(self.n_train(), 3, |i, j| match j {
            0 | 1 => self.train_inputs.get(i, j),
            _ => self.train_targets.get(i, 0),
        })
    }

    pub fn to_dump(&self) -> EpisodeDump {
        let rows = |inp: &Tensor, tgt: &Tensor| {
            (0..inp.rows())
                .map(|i| [inp.get(i, 0), inp.get(i, 1), tgt.get(i, 0)])
                .collect()
        };
        EpisodeDump {
            family: self.params.family,
            params: self
                .params
                .named()
                .map(|(k, v)| (k.to_string(), Value::from(v)))
                .collect(),
            train: rows(&self.train_inputs, &self.train_targets),
            test: rows(&self.test_inputs, &self.test_targets),
        }
    }
}

/// Portable JSON form of an [`Episode`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpisodeDump {
    pub family: Family,
    pub params: Map<String, Value>,
    pub train: Vec<[f64; 3]>,
    pub test: Vec<[f64; 3]>,
}

impl EpisodeDump {
    pub fn into_episode(self) -> Result<Episode> {
        let coefficients = self
            .family
            .ranges()
            .iter()
            .map(|(name, _, _)| {
                self.params
                    .get(*name)
                    .and_then(Value::as_f64)
                    .ok_or_else(|| Error::Domain(format!("missing coefficient `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let params = FamilyParams::new(self.family, &coefficients)?;
        let split = |rows: &[[f64; 3]]| {
            let inputs = Tensor::from_fn(rows.len(), 2, |i, j| rows[i][j]);
            let targets = Tensor::from_fn(rows.len(), 1, |i, _| rows[i][2]);
            (inputs, targets)
        };
        let (train_inputs, train_targets) = split(&self.train);
        let (test_inputs, test_targets) = split(&self.test);
        Ok(Episode {
            train_inputs,
            train_targets,
            test_inputs,
            test_targets,
            params,
        })
    }
}

/// Samples one episode for `params`.
pub fn make_episode<R: Rng + ?Sized>(
    rng: &mut R,
    params: &FamilyParams,
    n_train: usize,
    n_test: usize,
    noise_std: f64,
) -> Result<Episode> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::Domain("episodes need at least one train and one test point".into()));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::Domain(format!("noise std must be >= 0, got {noise_std}")));
    }
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::Domain(e.to_string()))?;
    let mut draw = |n: usize| {
        let mut inputs = Vec::with_capacity(2 * n);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let x = rng.random_range(INPUT_MIN..=INPUT_MAX);
            let y = if params.family.is_surface() {
                rng.random_range(INPUT_MIN..=INPUT_MAX)
            } else {
                1.0
            };
            let eps = if noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
            inputs.extend([x, y]);
            targets.push(params.evaluate(x, y) + eps);
        }
        (
            Tensor::new(n, 2, inputs).expect("shape"),
            Tensor::new(n, 1, targets).expect("shape"),
        )
    };
    let (train_inputs, train_targets) = draw(n_train);
    let (test_inputs, test_targets) = draw(n_test);
    Ok(Episode {
        train_inputs,
        train_targets,
        test_inputs,
        test_targets,
        params: params.clone(),
    })
}

/// Benchmark-setting episode from a uniformly chosen family.
pub fn sample_episode<R: Rng + ?Sized>(rng: &mut R, n_train: usize, n_test: usize, noise_std: f64) -> Result<Episode> {
    let params = sample_family_params(rng, None);
    make_episode(rng, &params, n_train, n_test, noise_std)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn truth_examples() {
        let line = FamilyParams::new(Family::Line, &[1.0, 0.0]).unwrap();
        assert_eq!(evaluate_truth(&line, 2.0, 7.0), 2.0);
        let qs = FamilyParams::new(Family::QuadSurface, &[1.0, 1.0]).unwrap();
        assert_eq!(evaluate_truth(&qs, 1.0, 2.0), 5.0);
        let ripple = FamilyParams::new(Family::Ripple, &[0.0, 1.0]).unwrap();
        assert_eq!(evaluate_truth(&ripple, 3.3, -1.2), 1.0);
    }

    #[test]
    fn unknown_family_is_domain_error() {
        assert!(matches!("hyperbola".parse::<Family>(), Err(Error::Domain(_))));
        assert_eq!("Quad_Surface".parse::<Family>().unwrap(), Family::QuadSurface);
    }

    #[test]
    fn coefficient_ranges_hold_over_many_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for family in Family::ALL {
            let ranges = family.ranges();
            let mut lo = vec![f64::INFINITY; ranges.len()];
            let mut hi = vec![f64::NEG_INFINITY; ranges.len()];
            for _ in 0..10_000 {
                let p = sample_family_params(&mut rng, Some(family));
                for (k, &v) in p.coefficients().iter().enumerate() {
                    lo[k] = lo[k].min(v);
                    hi[k] = hi[k].max(v);
                }
            }
            for (k, &(name, a, b)) in ranges.iter().enumerate() {
                assert!(lo[k] >= a && hi[k] <= b, "{name}: [{}, {}]", lo[k], hi[k]);
                // the draws should also cover most of the range
                assert!(lo[k] < a + 0.01 * (b - a) && hi[k] > b - 0.01 * (b - a), "{name}");
            }
        }
    }

    #[test]
    fn noiseless_episode_matches_truth_and_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for family in Family::ALL {
            let p = sample_family_params(&mut rng, Some(family));
            let ep = make_episode(&mut rng, &p, 10, 20, 0.0).unwrap();
            assert_eq!(ep.train_inputs.shape(), (10, 2));
            assert_eq!(ep.test_targets.shape(), (20, 1));
            for i in 0..10 {
                let (x, y) = (ep.train_inputs.get(i, 0), ep.train_inputs.get(i, 1));
                assert_eq!(ep.train_targets.get(i, 0), evaluate_truth(&p, x, y));
                assert!((0.0..=5.0).contains(&x) && (0.0..=5.0).contains(&y));
                if !family.is_surface() {
                    assert_eq!(y, 1.0);
                }
            }
        }
    }

    #[test]
    fn residual_std_matches_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = sample_family_params(&mut rng, Some(Family::Ripple));
        let ep = make_episode(&mut rng, &p, 1, 100_000, NOISE_STD).unwrap();
        let res: Vec<f64> = (0..ep.n_test())
            .map(|i| {
                ep.test_targets.get(i, 0) - p.evaluate(ep.test_inputs.get(i, 0), ep.test_inputs.get(i, 1))
            })
            .collect();
        let mean = res.iter().sum::<f64>() / res.len() as f64;
        let var = res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (res.len() - 1) as f64;
        let std = var.sqrt();
        assert!((0.29..=0.31).contains(&std), "{std}");
    }

    #[test]
    fn same_seed_same_episode() {
        let a = sample_episode(&mut ChaCha8Rng::seed_from_u64(5), 10, 100, NOISE_STD).unwrap();
        let b = sample_episode(&mut ChaCha8Rng::seed_from_u64(5), 10, 100, NOISE_STD).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dump_round_trips() {
        let ep = sample_episode(&mut ChaCha8Rng::seed_from_u64(1), 4, 6, NOISE_STD).unwrap();
        let json = serde_json::to_string(&ep.to_dump()).unwrap();
        let back: EpisodeDump = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_episode().unwrap(), ep);
        let v: Value = serde_json::from_str(&json).unwrap();
        assert!(v["params"].is_object() && v["train"][0].as_array().unwrap().len() == 3);
    }

    #[test]
    fn rejects_empty_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = sample_family_params(&mut rng, None);
        assert!(make_episode(&mut rng, &p, 0, 5, 0.3).is_err());
        assert!(make_episode(&mut rng, &p, 5, 5, -1.0).is_err());
    }
}
