use std::rc::Rc;
use std::sync::atomic::{AtomicU32, Ordering};

use super::ops::{self, Eager, Prim, TensorOps};
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    id: u32,
}

impl Var {
    pub fn index(&self) -> usize {
        self.id as usize
    }
}

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    /// `None` for leaves and constants.
    op: Option<(Prim, Vec<u32>)>,
}

/// Reverse-mode tape. Every record's inputs precede it, so a single reverse
/// sweep in index order visits nodes in a valid order. Backward passes with
/// `create_graph` append their own records, which makes gradients
/// differentiable in turn.
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::with_capacity(1024),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of nodes carrying a recorded primitive.
    pub fn records(&self) -> usize {
        self.nodes.iter().filter(|n| n.op.is_some()).count()
    }

    fn push(&mut self, value: Rc<Tensor>, requires_grad: bool, op: Option<(Prim, Vec<u32>)>) -> Var {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var { tape: self.id, id }
    }

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Rc::new(t), true, None)
    }

    pub fn get(&self, v: Var) -> &Tensor {
        &self.nodes[v.id as usize].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.id as usize].requires_grad
    }

    pub fn owns(&self, v: Var) -> bool {
        v.tape == self.id && (v.id as usize) < self.nodes.len()
    }

    /// Copy of `v` cut off from its history.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.id as usize].value.clone();
        self.push(value, false, None)
    }

    fn check(&self, v: Var) -> Result<()> {
        if self.owns(v) {
            Ok(())
        } else {
            Err(Error::Lineage(v.id as usize))
        }
    }

    /// Gradients of scalar `loss` with respect to each of `wrt`.
    ///
    /// With `create_graph` the sweep records its own arithmetic, so the
    /// returned vars can be differentiated again. Otherwise the sweep runs
    /// eagerly and the results are constants.
    pub fn backward(&mut self, loss: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        if create_graph {
            self.backward_recorded(loss, wrt)
        } else {
            let grads = self.gradients(loss, wrt)?;
            Ok(grads
                .into_iter()
                .map(|g| self.push(Rc::new(g), false, None))
                .collect())
        }
    }

    /// Eager backward returning plain tensors; records nothing.
    pub fn gradients(&self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let reach = self.prepare(loss, wrt)?;
        let last = loss.id as usize;
        let mut grads: Vec<Option<Rc<Tensor>>> = vec![None; last + 1];
        grads[last] = Some(Rc::new(Tensor::scalar(1.0)));
        let mut eager = Eager;
        for i in (0..=last).rev() {
            let Some(g) = grads[i].clone() else { continue };
            let node = &self.nodes[i];
            let Some((prim, inputs)) = &node.op else {
                continue;
            };
            let needs: Vec<bool> = inputs.iter().map(|&p| reach[p as usize]).collect();
            let vals: Vec<Rc<Tensor>> = inputs
                .iter()
                .map(|&p| self.nodes[p as usize].value.clone())
                .collect();
            let contribs = ops::vjp(&mut eager, *prim, &vals, &node.value, &g, &needs)?;
            for (&p, c) in inputs.iter().zip(contribs) {
                let Some(c) = c else { continue };
                let slot = &mut grads[p as usize];
                *slot = Some(match slot.take() {
                    None => c,
                    Some(acc) => eager.add(&acc, &c)?,
                });
            }
        }
        Ok(wrt
            .iter()
            .map(|v| {
                let i = v.id as usize;
                match grads.get(i).and_then(|g| g.as_ref()) {
                    Some(g) => (**g).clone(),
                    None => {
                        let (r, c) = self.nodes[i].value.shape();
                        Tensor::zeros(r, c)
                    }
                }
            })
            .collect())
    }

    fn backward_recorded(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let reach = self.prepare(loss, wrt)?;
        let last = loss.id as usize;
        let mut grads: Vec<Option<Var>> = vec![None; last + 1];
        grads[last] = Some(self.constant(Tensor::scalar(1.0)));
        for i in (0..=last).rev() {
            let Some(g) = grads[i] else { continue };
            let Some((prim, inputs)) = self.nodes[i].op.clone() else {
                continue;
            };
            let needs: Vec<bool> = inputs.iter().map(|&p| reach[p as usize]).collect();
            let vars: Vec<Var> = inputs.iter().map(|&p| Var { tape: self.id, id: p }).collect();
            let output = Var {
                tape: self.id,
                id: i as u32,
            };
            let contribs = ops::vjp(self, prim, &vars, &output, &g, &needs)?;
            for (&p, c) in inputs.iter().zip(contribs) {
                let Some(c) = c else { continue };
                let slot = &mut grads[p as usize];
                *slot = Some(match *slot {
                    None => c,
                    Some(acc) => self.add(&acc, &c)?,
                });
            }
        }
        let mut out = Vec::with_capacity(wrt.len());
        for v in wrt {
            let i = v.id as usize;
            out.push(match grads.get(i).copied().flatten() {
                Some(g) => g,
                None => {
                    let (r, c) = self.nodes[i].value.shape();
                    self.constant(Tensor::zeros(r, c))
                }
            });
        }
        Ok(out)
    }

    /// Validates arguments and marks nodes that depend on some `wrt` var.
    fn prepare(&self, loss: Var, wrt: &[Var]) -> Result<Vec<bool>> {
        self.check(loss)?;
        if self.get(loss).shape() != (1, 1) {
            let (r, c) = self.get(loss).shape();
            return Err(Error::Contract(format!("loss must be scalar, got {r}x{c}")));
        }
        let last = loss.id as usize;
        let mut reach = vec![false; last + 1];
        for &v in wrt {
            self.check(v)?;
            if !self.requires_grad(v) {
                return Err(Error::Contract(format!(
                    "variable {} does not require grad",
                    v.id
                )));
            }
            if let Some(r) = reach.get_mut(v.id as usize) {
                *r = true;
            }
        }
        for i in 0..=last {
            if reach[i] {
                continue;
            }
            if let Some((_, inputs)) = &self.nodes[i].op {
                reach[i] = inputs.iter().any(|&p| reach[p as usize]);
            }
        }
        Ok(reach)
    }
}

impl TensorOps for Tape {
    type V = Var;

    fn value(&self, v: &Var) -> Tensor {
        self.get(*v).clone()
    }

    fn shape_of(&self, v: &Var) -> (usize, usize) {
        self.get(*v).shape()
    }

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(Rc::new(t), false, None)
    }

    fn apply(&mut self, prim: Prim, inputs: &[Var]) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        let value = {
            let refs: Vec<&Tensor> = inputs.iter().map(|&v| self.get(v)).collect();
            ops::forward(prim, &refs)?
        };
        let requires_grad = inputs.iter().any(|&v| self.requires_grad(v));
        let op = requires_grad.then(|| (prim, inputs.iter().map(|v| v.id).collect()));
        Ok(self.push(Rc::new(value), requires_grad, op))
    }
}
