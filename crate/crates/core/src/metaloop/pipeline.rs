use std::rc::Rc;

use super::{MetaParams, Mode, Objective, TrainConfig};
use crate::basemodel::{forward, inner_adapt, mse_loss, BaseParams};
use crate::diffmath::{Eager, Tape, Tensor, TensorOps, Var};
use crate::error::{Error, Result};
use crate::relgraph::{
    assign_prototypes, build_supergraph, cross_links, edge_weights, embed, propagate, SuperGraph,
};
use crate::taskenc::{apply_gate, encode, encode_aggregate, modulate};
use crate::taskgen::Episode;

/// Intermediate matrices of one task, for inspection and export.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// `K × N`
    pub assignment: Option<Tensor>,
    /// `K × d`
    pub prototypes: Option<Tensor>,
    /// `K × K`
    pub a_r: Option<Tensor>,
    /// `K × G`
    pub a_s: Option<Tensor>,
    /// `G × G`
    pub a_g: Option<Tensor>,
    /// `1 × |θ|`
    pub gate: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskOutput {
    /// Adapted MSE on the test split; 0 under the reconstruction objective.
    pub test_loss: f64,
    pub l_t: f64,
    pub l_q: f64,
    pub diagnostics: Diagnostics,
}

struct Front<V> {
    theta: Option<BaseParams<V>>,
    l_t: Option<V>,
    l_q: Option<V>,
    assignment: Option<V>,
    prototypes: Option<V>,
    a_r: Option<V>,
    a_s: Option<V>,
    a_g: Option<V>,
    gate: Option<V>,
}

/// Everything before the inner loop: graph construction, task
/// representations and the modulated initialization.
fn front<A: TensorOps>(ops: &mut A, phi: &MetaParams<A::V>, ep: &Episode, cfg: &TrainConfig) -> Result<Front<A::V>> {
    let mut out = Front {
        theta: None,
        l_t: None,
        l_q: None,
        assignment: None,
        prototypes: None,
        a_r: None,
        a_s: None,
        a_g: None,
        gate: None,
    };
    if cfg.mode == Mode::Maml {
        if cfg.objective == Objective::Full {
            out.theta = Some(phi.theta0.clone());
        }
        return Ok(out);
    }

    let samples = ops.constant(ep.train_samples());
    let features = embed(ops, &phi.embedder, &samples)?;
    let (assignment, c_r) = assign_prototypes(ops, &phi.embedder, &features)?;
    let enriched = if cfg.mode.uses_graph() {
        let k = ops.shape_of(&c_r).0;
        let a_r = if cfg.mode == Mode::NoProtoLinks {
            ops.constant(Tensor::zeros(k, k))
        } else {
            edge_weights(ops, &c_r, &phi.gnn.w_r, &phi.gnn.b_r, cfg.gamma_r)?
        };
        let a_g = edge_weights(ops, &phi.kg.h_g, &phi.kg.w_o, &phi.kg.b_o, cfg.gamma_o)?;
        let a_s = cross_links(ops, &c_r, &phi.kg.h_g, cfg.gamma_s)?;
        let graph: SuperGraph<A::V> = build_supergraph(ops, &a_r, &a_s, &a_g, &c_r, &phi.kg.h_g)?;
        let enriched = propagate(ops, &graph, &phi.gnn.w_gnn)?;
        out.a_r = Some(a_r);
        out.a_s = Some(a_s);
        out.a_g = Some(a_g);
        enriched
    } else {
        c_r.clone()
    };

    let (q, t) = if cfg.mode == Mode::NoRecon {
        (encode(ops, &phi.ae_q.encoder, &c_r)?.0, encode(ops, &phi.ae_t.encoder, &enriched)?.0)
    } else {
        let (q, l_q) = encode_aggregate(ops, &phi.ae_q, &c_r)?;
        let (t, l_t) = encode_aggregate(ops, &phi.ae_t, &enriched)?;
        out.l_q = Some(l_q);
        out.l_t = Some(l_t);
        (q, t)
    };

    if cfg.objective == Objective::Full {
        if cfg.unit_gate {
            let ones = ops.constant(Tensor::ones(1, crate::basemodel::param_count(cfg.hidden)));
            out.theta = Some(apply_gate(ops, &ones, &phi.theta0)?);
            out.gate = Some(ones);
        } else {
            let m = modulate(ops, &phi.modulator, &q, &t, &phi.theta0)?;
            out.theta = Some(m.theta);
            out.gate = m.gate;
        }
    }
    out.assignment = Some(assignment);
    out.prototypes = Some(c_r);
    Ok(out)
}

fn diagnostics<A: TensorOps>(ops: &A, f: &Front<A::V>) -> Diagnostics {
    let v = |x: &Option<A::V>| x.as_ref().map(|x| ops.value(x));
    Diagnostics {
        assignment: v(&f.assignment),
        prototypes: v(&f.prototypes),
        a_r: v(&f.a_r),
        a_s: v(&f.a_s),
        a_g: v(&f.a_g),
        gate: v(&f.gate),
    }
}

/// Inner loop from `start` on the training split, then MSE on the test split.
fn adapt_and_test(
    tape: &mut Tape,
    start: &BaseParams<Var>,
    ep: &Episode,
    cfg: &TrainConfig,
    create_graph: bool,
) -> Result<Var> {
    let x_tr = tape.constant(ep.train_inputs.clone());
    let y_tr = tape.constant(ep.train_targets.clone());
    let adapted = inner_adapt(tape, start, x_tr, y_tr, cfg.alpha, cfg.inner_steps, create_graph)?;
    let x_ts = tape.constant(ep.test_inputs.clone());
    let y_ts = tape.constant(ep.test_targets.clone());
    let pred = forward(tape, &adapted, &x_ts)?;
    mse_loss(tape, &pred, &y_ts)
}

fn scalar<A: TensorOps>(ops: &A, v: &Option<A::V>) -> Result<f64> {
    match v {
        Some(v) => ops.value(v).item(),
        None => Ok(0.0),
    }
}

/// Runs the per-task pipeline and reports its losses. Nothing is
/// differentiated except the inner-loop gradients.
pub fn task_forward(phi: &MetaParams, ep: &Episode, cfg: &TrainConfig) -> Result<TaskOutput> {
    let mut eager = Eager;
    let consts = phi.map(|t| Rc::new(t.clone()));
    let f = front(&mut eager, &consts, ep, cfg)?;
    let test_loss = match &f.theta {
        Some(theta) => {
            let mut tape = Tape::new();
            let start = theta.map(|t| tape.leaf((**t).clone()));
            let loss = adapt_and_test(&mut tape, &start, ep, cfg, false)?;
            tape.get(loss).item()?
        }
        None => 0.0,
    };
    Ok(TaskOutput {
        test_loss,
        l_t: scalar(&eager, &f.l_t)?,
        l_q: scalar(&eager, &f.l_q)?,
        diagnostics: diagnostics(&eager, &f),
    })
}

/// Adapted test MSE of one task. `phi` is only read.
pub fn meta_test(phi: &MetaParams, ep: &Episode, cfg: &TrainConfig) -> Result<f64> {
    let cfg = TrainConfig { objective: Objective::Full, ..cfg.clone() };
    Ok(task_forward(phi, ep, &cfg)?.test_loss)
}

/// Scalar this task contributes to the outer objective.
pub(crate) fn task_objective(cfg: &TrainConfig, test_loss: f64, l_t: f64, l_q: f64) -> f64 {
    match cfg.objective {
        Objective::Full => test_loss + cfg.mu1 * l_t + cfg.mu2 * l_q,
        Objective::Reconstruction => l_t + l_q,
    }
}

/// Losses of one task and the gradient of its objective with respect to
/// every tensor of `phi`, in registry order.
pub fn task_gradient(phi: &MetaParams, ep: &Episode, cfg: &TrainConfig) -> Result<(TaskOutput, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let maml = cfg.mode == Mode::Maml;
    let vars = phi.map(|t| if maml { tape.constant(t.clone()) } else { tape.leaf(t.clone()) });
    let vars = if maml {
        MetaParams { theta0: phi.theta0.map(|t| tape.leaf(t.clone())), ..vars }
    } else {
        vars
    };
    let f = front(&mut tape, &vars, ep, cfg)?;
    let test = match &f.theta {
        Some(theta) => Some(adapt_and_test(&mut tape, theta, ep, cfg, cfg.second_order)?),
        None => None,
    };

    let (wt, wq) = match cfg.objective {
        Objective::Full => (cfg.mu1, cfg.mu2),
        Objective::Reconstruction => (1.0, 1.0),
    };
    let mut terms = Vec::new();
    if let Some(t) = test {
        terms.push(t);
    }
    for (loss, w) in [(&f.l_t, wt), (&f.l_q, wq)] {
        if let Some(l) = loss {
            if w != 0.0 {
                terms.push(tape.scale(l, w)?);
            }
        }
    }
    let mut objective = terms
        .first()
        .copied()
        .ok_or_else(|| Error::Contract("task objective has no terms".into()))?;
    for t in &terms[1..] {
        objective = tape.add(&objective, t)?;
    }

    let wrt: Vec<Var> = vars.iter().map(|(_, v)| *v).collect();
    let grads = if tape.requires_grad(objective) {
        let trainable: Vec<(usize, Var)> =
            wrt.iter().copied().enumerate().filter(|(_, v)| tape.requires_grad(*v)).collect();
        let ids: Vec<Var> = trainable.iter().map(|(_, v)| *v).collect();
        let g = tape.gradients(objective, &ids)?;
        let mut out: Vec<Tensor> = phi.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        for ((i, _), g) in trainable.into_iter().zip(g) {
            out[i] = g;
        }
        out
    } else {
        phi.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect()
    };

    let output = TaskOutput {
        test_loss: match test {
            Some(t) => tape.get(t).item()?,
            None => 0.0,
        },
        l_t: scalar(&tape, &f.l_t)?,
        l_q: scalar(&tape, &f.l_q)?,
        diagnostics: diagnostics(&tape, &f),
    };
    Ok((output, grads))
}

/// `Σ test + μ1 Σ L_t + μ2 Σ L_q`.
pub fn overall_loss(test: &[f64], l_t: &[f64], l_q: &[f64], mu1: f64, mu2: f64) -> Result<f64> {
    if test.len() != l_t.len() || test.len() != l_q.len() {
        return Err(Error::Contract(format!(
            "loss lists differ in length: {}, {}, {}",
            test.len(),
            l_t.len(),
            l_q.len()
        )));
    }
    let s = |v: &[f64]| v.iter().sum::<f64>();
    Ok(s(test) + mu1 * s(l_t) + mu2 * s(l_q))
}
