//! Prototype relational graph, learnable meta-knowledge graph, the
//! super-graph joining them, and one-layer GCN propagation over it.
//!
//! Everything here is generic over [`TensorOps`] so the same code runs on the
//! tape during training and eagerly for exports.

use rand::Rng;

use crate::diffmath::{Tensor, TensorOps};
use crate::error::{Error, Result};
use crate::params::{normal, param_bundle, xavier};

/// Width of an `(x, y, z)` training sample.
pub const SAMPLE_DIM: usize = 3;

param_bundle! {
    /// Sample embedder and cluster-assignment head.
    ///
    /// `w_p` is stored `d × K` so that logits come out sample-major.
    EmbedderParams { w_e, b_e, w_p, b_p }
}

param_bundle! {
    /// Learnable vertices `h_g` (`G × d`) and their edge-score head.
    MetaKnowledgeGraph { h_g, w_o, b_o }
}

param_bundle! {
    /// GCN weight plus the prototype edge-score head.
    GnnParams { w_gnn, w_r, b_r }
}

impl EmbedderParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d: usize, k: usize) -> Self {
        EmbedderParams {
            w_e: normal(rng, SAMPLE_DIM, d, EMBED_INIT_STD),
            b_e: Tensor::zeros(1, d),
            w_p: xavier(rng, d, k),
            b_p: Tensor::zeros(1, k),
        }
    }
}

const EMBED_INIT_STD: f64 = 0.05;
const VERTEX_INIT_STD: f64 = 0.1;
const SCORE_INIT_STD: f64 = 0.1;

impl MetaKnowledgeGraph {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, g: usize, d: usize) -> Self {
        MetaKnowledgeGraph {
            h_g: normal(rng, g, d, VERTEX_INIT_STD),
            w_o: normal(rng, d, 1, SCORE_INIT_STD),
            b_o: Tensor::zeros(1, 1),
        }
    }

    pub fn vertices(&self) -> usize {
        self.h_g.rows()
    }
}

impl GnnParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Self {
        GnnParams {
            w_gnn: xavier(rng, d, d),
            w_r: normal(rng, d, 1, SCORE_INIT_STD),
            b_r: Tensor::zeros(1, 1),
        }
    }
}

/// Prototype graph of one task.
#[derive(Clone, Debug)]
pub struct PrototypeGraph<V> {
    /// `K × d`
    pub prototypes: V,
    /// `K × K`
    pub adjacency: V,
    /// `K × N`, column-stochastic.
    pub assignment: V,
}

/// Block super-graph `[A_R, A_S; A_Sᵀ, A_G]` over stacked features `[C_R; H_G]`.
#[derive(Clone, Debug)]
pub struct SuperGraph<V> {
    pub adjacency: V,
    pub features: V,
    pub k: usize,
    pub g: usize,
}

/// One `d`-vector per training sample: `samples · W_e + b_e`.
pub fn embed<A: TensorOps>(ops: &mut A, params: &EmbedderParams<A::V>, samples: &A::V) -> Result<A::V> {
    let (_, cols) = ops.shape_of(samples);
    if cols != SAMPLE_DIM {
        return Err(Error::dim("embed", format!("samples must be (x, y, z) triples, got width {cols}")));
    }
    let z = ops.matmul(samples, &params.w_e)?;
    ops.add(&z, &params.b_e)
}

/// Soft cluster assignment `P` (`K × N`, softmax over clusters for each
/// sample) and prototypes `C_R = P · features`.
pub fn assign_prototypes<A: TensorOps>(
    ops: &mut A,
    params: &EmbedderParams<A::V>,
    features: &A::V,
) -> Result<(A::V, A::V)> {
    let logits = ops.matmul(features, &params.w_p)?;
    let logits = ops.add(&logits, &params.b_p)?;
    let per_sample = ops.row_softmax(&logits)?;
    let prototypes = ops.matmul_tn(&per_sample, features)?;
    let assignment = ops.transpose(&per_sample)?;
    Ok((assignment, prototypes))
}

/// Row-selection matrix picking `rows[i]` out of `n` for output row `i`.
fn selector(rows: impl Iterator<Item = usize>, n: usize) -> Tensor {
    let picks: Vec<usize> = rows.collect();
    Tensor::from_fn(picks.len(), n, |i, j| if picks[i] == j { 1.0 } else { 0.0 })
}

/// Pairwise weights `σ(w · |x_j − x_m| / γ + b)` over the rows of `source`.
///
/// `w` is `d × 1`, `b` is `1 × 1`. Symmetric by construction, with `σ(b)` on
/// the diagonal.
pub fn edge_weights<A: TensorOps>(ops: &mut A, source: &A::V, w: &A::V, b: &A::V, gamma: f64) -> Result<A::V> {
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("edge scale must be positive, got {gamma}")));
    }
    let n = ops.shape_of(source).0;
    let left = ops.constant(selector((0..n * n).map(|p| p / n), n));
    let right = ops.constant(selector((0..n * n).map(|p| p % n), n));
    let a = ops.matmul(&left, source)?;
    let c = ops.matmul(&right, source)?;
    let diff = ops.sub(&a, &c)?;
    let diff = ops.abs(&diff)?;
    let diff = ops.div_scalar(&diff, gamma)?;
    let score = ops.matmul(&diff, w)?;
    let score = ops.add(&score, b)?;
    let weight = ops.sigmoid(&score)?;
    ops.reshape(&weight, (n, n))
}

/// Softmax over negative half squared scaled distances from each prototype
/// to every meta-knowledge vertex. Rows sum to one over the `G` vertices.
pub fn cross_links<A: TensorOps>(ops: &mut A, prototypes: &A::V, vertices: &A::V, gamma: f64) -> Result<A::V> {
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("link scale must be positive, got {gamma}")));
    }
    let (k, d) = ops.shape_of(prototypes);
    let (g, dv) = ops.shape_of(vertices);
    if d != dv {
        return Err(Error::dim("cross_links", format!("prototype width {d} vs vertex width {dv}")));
    }
    let pick_c = ops.constant(selector((0..k * g).map(|p| p / g), k));
    let pick_h = ops.constant(selector((0..k * g).map(|p| p % g), g));
    let c = ops.matmul(&pick_c, prototypes)?;
    let h = ops.matmul(&pick_h, vertices)?;
    let diff = ops.sub(&c, &h)?;
    let diff = ops.div_scalar(&diff, gamma)?;
    let sq = ops.square(&diff)?;
    let dist = ops.sum_to(&sq, (k * g, 1))?;
    let logits = ops.scale(&dist, -0.5)?;
    let logits = ops.reshape(&logits, (k, g))?;
    ops.row_softmax(&logits)
}

pub fn build_supergraph<A: TensorOps>(
    ops: &mut A,
    a_r: &A::V,
    a_s: &A::V,
    a_g: &A::V,
    c_r: &A::V,
    h_g: &A::V,
) -> Result<SuperGraph<A::V>> {
    let (k, kc) = ops.shape_of(a_r);
    let (g, gc) = ops.shape_of(a_g);
    if k != kc {
        return Err(Error::dim("supergraph", format!("A_R must be square, got {k}x{kc}")));
    }
    if g != gc {
        return Err(Error::dim("supergraph", format!("A_G must be square, got {g}x{gc}")));
    }
    if ops.shape_of(a_s) != (k, g) {
        return Err(Error::dim("supergraph", format!("A_S is {:?}, expected {k}x{g}", ops.shape_of(a_s))));
    }
    let (ck, d) = ops.shape_of(c_r);
    if ck != k {
        return Err(Error::dim("supergraph", format!("C_R has {ck} rows, expected {k}")));
    }
    if ops.shape_of(h_g) != (g, d) {
        return Err(Error::dim("supergraph", format!("H_G is {:?}, expected {g}x{d}", ops.shape_of(h_g))));
    }
    let top = ops.concat_cols(a_r, a_s)?;
    let a_s_t = ops.transpose(a_s)?;
    let bottom = ops.concat_cols(&a_s_t, a_g)?;
    let adjacency = ops.concat_rows(&top, &bottom)?;
    let features = ops.concat_rows(c_r, h_g)?;
    Ok(SuperGraph {
        adjacency,
        features,
        k,
        g,
    })
}

impl SuperGraph<Tensor> {
    /// Splits the adjacency back into `(A_R, A_S, A_G)`.
    pub fn blocks(&self) -> (Tensor, Tensor, Tensor) {
        let (k, a) = (self.k, &self.adjacency);
        let n = k + self.g;
        let a_r = Tensor::from_fn(k, k, |i, j| a.get(i, j));
        let a_s = Tensor::from_fn(k, self.g, |i, j| a.get(i, k + j));
        let a_g = Tensor::from_fn(self.g, self.g, |i, j| a.get(k + i, k + j));
        debug_assert_eq!(a.shape(), (n, n));
        (a_r, a_s, a_g)
    }
}

/// `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree of `A + I`.
pub fn normalized_adjacency<A: TensorOps>(ops: &mut A, adjacency: &A::V) -> Result<A::V> {
    let (n, m) = ops.shape_of(adjacency);
    if n != m {
        return Err(Error::dim("normalized_adjacency", format!("{n}x{m} is not square")));
    }
    let eye = ops.constant(Tensor::eye(n));
    let with_loops = ops.add(adjacency, &eye)?;
    let degree = ops.sum_to(&with_loops, (n, 1))?;
    assert!(
        ops.value(&degree).data().iter().all(|&v| v > 0.0),
        "zero-degree vertex despite self-loops"
    );
    let inv_sqrt = ops.powf(&degree, -0.5)?;
    let left = ops.mul(&with_loops, &inv_sqrt)?;
    let inv_sqrt_t = ops.transpose(&inv_sqrt)?;
    ops.mul(&left, &inv_sqrt_t)
}

/// One GCN layer `tanh(Â · H · W)`; returns the top `K` rows (the enriched
/// prototypes).
pub fn propagate<A: TensorOps>(ops: &mut A, graph: &SuperGraph<A::V>, w_gnn: &A::V) -> Result<A::V> {
    let a_hat = normalized_adjacency(ops, &graph.adjacency)?;
    let hw = ops.matmul(&graph.features, w_gnn)?;
    let mixed = ops.matmul(&a_hat, &hw)?;
    let out = ops.tanh(&mixed)?;
    ops.slice_rows(&out, 0, graph.k)
}
