//! Base regressor: a `2 → H → H → 1` tanh network, its loss, and the
//! gradient-descent inner loop.

use rand::Rng;

use crate::diffmath::{Tape, Tensor, TensorOps, Var};
use crate::error::{Error, Result};
use crate::params::{param_bundle, xavier};

pub const INPUT_DIM: usize = 2;
pub const HIDDEN: usize = 40;

param_bundle! {
    /// Weights are stored `fan_in × fan_out`, biases as `1 × fan_out` rows.
    BaseParams { w1, b1, w2, b2, w3, b3 }
}

impl BaseParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, hidden: usize) -> Self {
        BaseParams {
            w1: xavier(rng, INPUT_DIM, hidden),
            b1: Tensor::zeros(1, hidden),
            w2: xavier(rng, hidden, hidden),
            b2: Tensor::zeros(1, hidden),
            w3: xavier(rng, hidden, 1),
            b3: Tensor::zeros(1, 1),
        }
    }

    pub fn zeros(hidden: usize) -> Self {
        BaseParams {
            w1: Tensor::zeros(INPUT_DIM, hidden),
            b1: Tensor::zeros(1, hidden),
            w2: Tensor::zeros(hidden, hidden),
            b2: Tensor::zeros(1, hidden),
            w3: Tensor::zeros(hidden, 1),
            b3: Tensor::zeros(1, 1),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b1.cols()
    }

    pub fn count(&self) -> usize {
        self.iter().map(|(_, t)| t.len()).sum()
    }
}

/// Parameter count of the benchmark network.
pub const fn param_count(hidden: usize) -> usize {
    INPUT_DIM * hidden + hidden + hidden * hidden + hidden + hidden + 1
}

/// Predictions `n×1` for inputs `n×2`.
pub fn forward<A: TensorOps>(ops: &mut A, theta: &BaseParams<A::V>, inputs: &A::V) -> Result<A::V> {
    let (_, cols) = ops.shape_of(inputs);
    if cols != INPUT_DIM {
        return Err(Error::dim(
            "base_forward",
            format!("inputs must have {INPUT_DIM} columns, got {cols}"),
        ));
    }
    let z1 = ops.matmul(inputs, &theta.w1)?;
    let z1 = ops.add(&z1, &theta.b1)?;
    let h1 = ops.tanh(&z1)?;
    let z2 = ops.matmul(&h1, &theta.w2)?;
    let z2 = ops.add(&z2, &theta.b2)?;
    let h2 = ops.tanh(&z2)?;
    let out = ops.matmul(&h2, &theta.w3)?;
    ops.add(&out, &theta.b3)
}

/// Mean of squared residuals.
pub fn mse_loss<A: TensorOps>(ops: &mut A, predictions: &A::V, targets: &A::V) -> Result<A::V> {
    let (p, t) = (ops.shape_of(predictions), ops.shape_of(targets));
    if p != t {
        return Err(Error::dim("mse_loss", format!("{p:?} vs {t:?}")));
    }
    let r = ops.sub(predictions, targets)?;
    let s = ops.sum_sq(&r)?;
    ops.scale(&s, 1.0 / (p.0 * p.1) as f64)
}

/// `steps` full-batch gradient-descent updates of the training MSE.
///
/// With `create_graph` the result stays differentiable with respect to
/// `start` through the inner gradients (second order). Without it the inner
/// gradients are constants and only the identity path remains.
pub fn inner_adapt(
    tape: &mut Tape,
    start: &BaseParams<Var>,
    inputs: Var,
    targets: Var,
    alpha: f64,
    steps: usize,
    create_graph: bool,
) -> Result<BaseParams<Var>> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("inner step size must be positive, got {alpha}")));
    }
    let mut theta = start.clone();
    for step in 0..steps {
        let wrap = |e: Error| match e {
            Error::NonFinite { .. } => Error::InnerStep { step },
            other => other,
        };
        let pred = forward(tape, &theta, &inputs).map_err(wrap)?;
        let loss = mse_loss(tape, &pred, &targets).map_err(wrap)?;
        let vars: Vec<Var> = theta.iter().map(|(_, v)| *v).collect();
        let grads = tape.backward(loss, &vars, create_graph).map_err(wrap)?;
        let mut next = Vec::with_capacity(vars.len());
        for (v, g) in vars.iter().zip(&grads) {
            let scaled = tape.scale(g, alpha).map_err(wrap)?;
            next.push(tape.sub(v, &scaled).map_err(wrap)?);
        }
        theta = BaseParams::from_values(next).expect("field count");
    }
    Ok(theta)
}
