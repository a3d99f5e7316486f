#![allow(dead_code)]

use std::rc::Rc;

use arml::diffmath::{finite_diff_gradient, max_relative_error, Eager, Prim, Tape, Tensor, TensorOps, Var};
use arml::metaloop::{task_forward, MetaParams, Mode, TrainConfig};
use arml::taskgen::{sample_episode, Episode};
use arml::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;

/// A primitive applied to inputs of fixed shapes, with a map that keeps
/// sampled values inside the primitive's smooth domain.
#[derive(Clone, Copy)]
pub struct PrimCase {
    pub prim: Prim,
    pub shapes: &'static [(usize, usize)],
    pub domain: fn(f64) -> f64,
}

fn any(x: f64) -> f64 {
    x
}

fn away_from_zero(x: f64) -> f64 {
    x + 0.25 * x.signum()
}

fn positive(x: f64) -> f64 {
    x.abs() + 0.5
}

pub fn primitive_cases() -> Vec<PrimCase> {
    let c = |prim, shapes, domain| PrimCase { prim, shapes, domain };
    vec![
        c(Prim::MatMul, &[(3, 4), (4, 2)], any),
        c(Prim::MatMulNt, &[(3, 4), (2, 4)], any),
        c(Prim::MatMulTn, &[(4, 3), (4, 2)], any),
        c(Prim::Add, &[(3, 4), (3, 4)], any),
        c(Prim::Add, &[(3, 4), (1, 4)], any),
        c(Prim::Add, &[(3, 1), (3, 4)], any),
        c(Prim::Sub, &[(3, 4), (1, 1)], any),
        c(Prim::Sub, &[(1, 4), (3, 4)], any),
        c(Prim::Mul, &[(3, 4), (3, 4)], any),
        c(Prim::Mul, &[(3, 4), (1, 4)], any),
        c(Prim::Mul, &[(1, 1), (2, 3)], any),
        c(Prim::Neg, &[(2, 3)], any),
        c(Prim::Abs, &[(2, 3)], away_from_zero),
        c(Prim::Exp, &[(2, 3)], any),
        c(Prim::Square, &[(2, 3)], any),
        c(Prim::Sigmoid, &[(2, 3)], any),
        c(Prim::Tanh, &[(2, 3)], any),
        c(Prim::Powf(1.7), &[(2, 3)], positive),
        c(Prim::Powf(3.0), &[(2, 3)], any),
        c(Prim::Powf(-0.5), &[(2, 3)], positive),
        c(Prim::Scale(-0.7), &[(2, 3)], any),
        c(Prim::AddScalar(0.3), &[(2, 3)], any),
        c(Prim::RowSoftmax, &[(3, 5)], any),
        c(Prim::SumAll, &[(3, 4)], any),
        c(Prim::SumSq, &[(3, 4)], any),
        c(Prim::SumTo(1, 4), &[(3, 4)], any),
        c(Prim::SumTo(3, 1), &[(3, 4)], any),
        c(Prim::SumTo(1, 1), &[(3, 4)], any),
        c(Prim::BroadcastTo(3, 4), &[(1, 4)], any),
        c(Prim::BroadcastTo(3, 4), &[(3, 1)], any),
        c(Prim::BroadcastTo(2, 2), &[(1, 1)], any),
        c(Prim::Transpose, &[(3, 4)], any),
        c(Prim::Reshape(2, 6), &[(3, 4)], any),
        c(Prim::ConcatRows, &[(2, 3), (1, 3)], any),
        c(Prim::ConcatCols, &[(2, 3), (2, 2)], any),
        c(Prim::SliceRows { start: 1, len: 2 }, &[(4, 3)], any),
        c(Prim::SliceCols { start: 0, len: 2 }, &[(4, 3)], any),
        c(Prim::PadRows { total: 5, start: 1 }, &[(3, 2)], any),
        c(Prim::PadCols { total: 4, start: 2 }, &[(3, 2)], any),
    ]
}

/// Inputs in `[-2, 2]` mapped into the case's domain, plus a weight
/// tensor for the output.
pub fn sample_case(case: &PrimCase, seed: u64) -> Result<(Vec<Tensor>, Tensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor> = case
        .shapes
        .iter()
        .map(|&(r, c)| Tensor::from_fn(r, c, |_, _| (case.domain)(rng.random_range(-2.0..=2.0))))
        .collect();
    let rcs: Vec<Rc<Tensor>> = inputs.iter().map(|t| Rc::new(t.clone())).collect();
    let out = Eager.apply(case.prim, &rcs)?;
    let w = Tensor::from_fn(out.rows(), out.cols(), |_, _| rng.random_range(-1.0..=1.0));
    Ok((inputs, w))
}

fn split(flat: &[f64], like: &[Tensor]) -> Vec<Tensor> {
    let mut off = 0;
    like.iter()
        .map(|t| {
            let v = Tensor::new(t.rows(), t.cols(), flat[off..off + t.len()].to_vec()).expect("sizes");
            off += t.len();
            v
        })
        .collect()
}

fn weighted_sum(out: &Tensor, w: &Tensor) -> f64 {
    out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Eager gradient of `Σ w ∘ prim(inputs)`; records nothing.
fn eager_gradient(prim: Prim, inputs: &[Tensor], w: &Tensor) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = tape.apply(prim, &vars)?;
    let wv = tape.constant(w.clone());
    let prod = tape.mul(&out, &wv)?;
    let s = tape.sum(&prod)?;
    tape.gradients(s, &vars)
}

/// Worst relative error of the first-order VJP against central differences.
pub fn first_order_error(case: &PrimCase, seed: u64) -> Result<f64> {
    let (inputs, w) = sample_case(case, seed)?;
    let analytic: Vec<f64> = eager_gradient(case.prim, &inputs, &w)?
        .iter()
        .flat_map(|g| g.data().to_vec())
        .collect();
    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.data().to_vec()).collect();
    let f = |p: &[f64]| -> Result<f64> {
        let rcs: Vec<Rc<Tensor>> = split(p, &inputs).into_iter().map(Rc::new).collect();
        let out = Eager.apply(case.prim, &rcs)?;
        Ok(weighted_sum(&out, &w))
    };
    let fd = finite_diff_gradient(f, &flat, FD_EPS)?;
    Ok(max_relative_error(&analytic, &fd, 1e-3))
}

/// Worst relative error of the graph-creating backward: the gradient of
/// `Σ v ∘ ∇(Σ w ∘ prim)` against central differences of the eager gradient.
pub fn second_order_error(case: &PrimCase, seed: u64) -> Result<f64> {
    let (inputs, w) = sample_case(case, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let v: Vec<Tensor> = inputs
        .iter()
        .map(|t| Tensor::from_fn(t.rows(), t.cols(), |_, _| rng.random_range(-1.0..=1.0)))
        .collect();

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = tape.apply(case.prim, &vars)?;
    let wv = tape.constant(w.clone());
    let prod = tape.mul(&out, &wv)?;
    let s = tape.sum(&prod)?;
    let grads = tape.backward(s, &vars, true)?;
    let mut h: Option<Var> = None;
    for (g, vt) in grads.iter().zip(&v) {
        let c = tape.constant(vt.clone());
        let p = tape.mul(g, &c)?;
        let p = tape.sum(&p)?;
        h = Some(match h {
            None => p,
            Some(acc) => tape.add(&acc, &p)?,
        });
    }
    let h = h.expect("at least one input");
    let analytic: Vec<f64> = if tape.requires_grad(h) {
        tape.gradients(h, &vars)?.iter().flat_map(|g| g.data().to_vec()).collect()
    } else {
        vec![0.0; inputs.iter().map(Tensor::len).sum()]
    };

    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.data().to_vec()).collect();
    let f = |p: &[f64]| -> Result<f64> {
        let g = eager_gradient(case.prim, &split(p, &inputs), &w)?;
        Ok(g.iter().zip(&v).map(|(g, v)| weighted_sum(g, v)).sum())
    };
    let fd = finite_diff_gradient(f, &flat, FD_EPS)?;
    Ok(max_relative_error(&analytic, &fd, 1e-3))
}

/// Small model for whole-objective checks: 15 base parameters, K = G = 2,
/// d = 4, and a large inner step so second-order terms matter.
pub fn reduced_config() -> TrainConfig {
    TrainConfig {
        hidden: 2,
        k: 2,
        g: 2,
        d: 4,
        d_h: 3,
        alpha: 0.1,
        inner_steps: 2,
        n_test: 8,
        meta_batch: 2,
        parallel: false,
        ..Default::default()
    }
}

pub fn flatten(phi: &MetaParams) -> Vec<f64> {
    phi.iter().flat_map(|(_, t)| t.data().to_vec()).collect()
}

pub fn unflatten(like: &MetaParams, flat: &[f64]) -> MetaParams {
    let tensors: Vec<Tensor> = like.iter().map(|(_, t)| t.clone()).collect();
    like.rebuild(split(flat, &tensors)).expect("layout")
}

pub fn episodes(cfg: &TrainConfig, n: usize, seed: u64) -> Vec<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| sample_episode(&mut rng, cfg.n_train, cfg.n_test, cfg.noise_std).unwrap())
        .collect()
}

/// Outer objective of a batch evaluated without any outer differentiation.
pub fn batch_objective(phi: &MetaParams, batch: &[Episode], cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for ep in batch {
        let out = task_forward(phi, ep, cfg)?;
        total += out.test_loss + cfg.mu1 * out.l_t + cfg.mu2 * out.l_q;
    }
    Ok(total)
}

/// Worst relative error of the meta-gradient of the reduced model against
/// central differences of the outer objective, over every scalar of `Φ`.
pub fn meta_gradient_error(mode: Mode, seed: u64) -> Result<f64> {
    let cfg = TrainConfig { mode, seed, ..reduced_config() };
    let phi = MetaParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
    let batch = episodes(&cfg, cfg.meta_batch, seed.wrapping_add(1));
    let (grads, _) = arml::metaloop::batch_gradient(&phi, &batch, &cfg)?;
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
    let fd = finite_diff_gradient(|p| batch_objective(&unflatten(&phi, p), &batch, &cfg), &flatten(&phi), FD_EPS)?;
    Ok(max_relative_error(&analytic, &fd, 1e-3))
}
