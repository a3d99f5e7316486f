use serde::{Deserialize, Serialize};

/// Mean and 95% half-width `1.96 · s / √n`, with `s` the sample standard
/// deviation. A single value has half-width 0.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt())
}

/// Held-out evaluation result as written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mode: String,
    pub n: usize,
    pub mean_mse: f64,
    pub ci95: f64,
    pub per_task_mse: Vec<f64>,
}

impl EvalSummary {
    pub fn new(mode: impl Into<String>, per_task_mse: Vec<f64>) -> Self {
        let (mean_mse, ci95) = mean_ci95(&per_task_mse);
        EvalSummary {
            mode: mode.into(),
            n: per_task_mse.len(),
            mean_mse,
            ci95,
            per_task_mse,
        }
    }

    pub fn lower(&self) -> f64 {
        self.mean_mse - self.ci95
    }

    pub fn upper(&self) -> f64 {
        self.mean_mse + self.ci95
    }
}
