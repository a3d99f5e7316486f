//! Primitive set and their vector-Jacobian products.
//!
//! Each VJP is written once against [`TensorOps`], so the same rule runs
//! eagerly on plain tensors (first-order backward) or records onto a tape
//! (graph-creating backward used for second-order meta-gradients).

use std::rc::Rc;

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Prim {
    MatMul,
    /// `a · bᵀ`
    MatMulNt,
    /// `aᵀ · b`
    MatMulTn,
    Add,
    Sub,
    Mul,
    Neg,
    Abs,
    Exp,
    Square,
    Sigmoid,
    Tanh,
    Powf(f64),
    Scale(f64),
    AddScalar(f64),
    RowSoftmax,
    SumAll,
    SumSq,
    SumTo(usize, usize),
    BroadcastTo(usize, usize),
    Transpose,
    Reshape(usize, usize),
    ConcatRows,
    ConcatCols,
    SliceRows { start: usize, len: usize },
    SliceCols { start: usize, len: usize },
    PadRows { total: usize, start: usize },
    PadCols { total: usize, start: usize },
}

impl Prim {
    pub fn name(&self) -> &'static str {
        match self {
            Prim::MatMul => "matmul",
            Prim::MatMulNt => "matmul_nt",
            Prim::MatMulTn => "matmul_tn",
            Prim::Add => "add",
            Prim::Sub => "sub",
            Prim::Mul => "mul",
            Prim::Neg => "neg",
            Prim::Abs => "abs",
            Prim::Exp => "exp",
            Prim::Square => "square",
            Prim::Sigmoid => "sigmoid",
            Prim::Tanh => "tanh",
            Prim::Powf(_) => "powf",
            Prim::Scale(_) => "scale",
            Prim::AddScalar(_) => "add_scalar",
            Prim::RowSoftmax => "row_softmax",
            Prim::SumAll => "sum",
            Prim::SumSq => "sum_sq",
            Prim::SumTo(..) => "sum_to",
            Prim::BroadcastTo(..) => "broadcast_to",
            Prim::Transpose => "transpose",
            Prim::Reshape(..) => "reshape",
            Prim::ConcatRows => "concat_rows",
            Prim::ConcatCols => "concat_cols",
            Prim::SliceRows { .. } => "slice_rows",
            Prim::SliceCols { .. } => "slice_cols",
            Prim::PadRows { .. } => "pad_rows",
            Prim::PadCols { .. } => "pad_cols",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Prim::MatMul
            | Prim::MatMulNt
            | Prim::MatMulTn
            | Prim::Add
            | Prim::Sub
            | Prim::Mul
            | Prim::ConcatRows
            | Prim::ConcatCols => 2,
            _ => 1,
        }
    }
}

/// Evaluates a primitive. Shape errors name the primitive; non-finite
/// outputs are rejected.
pub(crate) fn forward(prim: Prim, inputs: &[&Tensor]) -> Result<Tensor> {
    let name = prim.name();
    if inputs.len() != prim.arity() {
        return Err(Error::dim(
            name,
            format!("expected {} inputs, got {}", prim.arity(), inputs.len()),
        ));
    }
    let a = inputs[0];
    let mismatch = |b: &Tensor| Error::dim(name, format!("{:?} vs {:?}", a.shape(), b.shape()));
    let out = match prim {
        Prim::MatMul => {
            let b = inputs[1];
            if a.cols() != b.rows() {
                return Err(mismatch(b));
            }
            tensor::matmul(a, b)
        }
        Prim::MatMulNt => {
            let b = inputs[1];
            if a.cols() != b.cols() {
                return Err(mismatch(b));
            }
            tensor::matmul_nt(a, b)
        }
        Prim::MatMulTn => {
            let b = inputs[1];
            if a.rows() != b.rows() {
                return Err(mismatch(b));
            }
            tensor::matmul_tn(a, b)
        }
        Prim::Add | Prim::Sub | Prim::Mul => {
            let b = inputs[1];
            let shape = tensor::broadcast_shape(a.shape(), b.shape()).ok_or_else(|| mismatch(b))?;
            match prim {
                Prim::Add => tensor::zip_broadcast(a, b, shape, |x, y| x + y),
                Prim::Sub => tensor::zip_broadcast(a, b, shape, |x, y| x - y),
                _ => tensor::zip_broadcast(a, b, shape, |x, y| x * y),
            }
        }
        Prim::Neg => a.map(|x| -x),
        Prim::Abs => a.map(f64::abs),
        Prim::Exp => a.map(f64::exp),
        Prim::Square => a.map(|x| x * x),
        Prim::Sigmoid => a.map(tensor::sigmoid),
        Prim::Tanh => a.map(f64::tanh),
        Prim::Powf(p) => a.map(|x| x.powf(p)),
        Prim::Scale(c) => a.map(|x| x * c),
        Prim::AddScalar(c) => a.map(|x| x + c),
        Prim::RowSoftmax => tensor::row_softmax(a),
        Prim::SumAll => Tensor::scalar(a.sum()),
        Prim::SumSq => Tensor::scalar(a.data().iter().map(|x| x * x).sum()),
        Prim::SumTo(r, c) => {
            if tensor::broadcast_shape((r, c), a.shape()) != Some(a.shape()) {
                return Err(Error::dim(name, format!("{:?} to {r}x{c}", a.shape())));
            }
            tensor::sum_to(a, (r, c))
        }
        Prim::BroadcastTo(r, c) => {
            if tensor::broadcast_shape(a.shape(), (r, c)) != Some((r, c)) {
                return Err(Error::dim(name, format!("{:?} to {r}x{c}", a.shape())));
            }
            tensor::broadcast_to(a, (r, c))
        }
        Prim::Transpose => a.transpose(),
        Prim::Reshape(r, c) => {
            if r * c != a.len() {
                return Err(Error::dim(name, format!("{:?} to {r}x{c}", a.shape())));
            }
            Tensor::new(r, c, a.data().to_vec())?
        }
        Prim::ConcatRows => {
            let b = inputs[1];
            if a.cols() != b.cols() {
                return Err(mismatch(b));
            }
            let mut data = a.data().to_vec();
            data.extend_from_slice(b.data());
            Tensor::new(a.rows() + b.rows(), a.cols(), data)?
        }
        Prim::ConcatCols => {
            let b = inputs[1];
            if a.rows() != b.rows() {
                return Err(mismatch(b));
            }
            let (ca, cb) = (a.cols(), b.cols());
            Tensor::from_fn(a.rows(), ca + cb, |i, j| {
                if j < ca {
                    a.get(i, j)
                } else {
                    b.get(i, j - ca)
                }
            })
        }
        Prim::SliceRows { start, len } => {
            if start + len > a.rows() {
                return Err(Error::dim(name, format!("rows {start}..{} of {:?}", start + len, a.shape())));
            }
            let c = a.cols();
            Tensor::new(len, c, a.data()[start * c..(start + len) * c].to_vec())?
        }
        Prim::SliceCols { start, len } => {
            if start + len > a.cols() {
                return Err(Error::dim(name, format!("cols {start}..{} of {:?}", start + len, a.shape())));
            }
            Tensor::from_fn(a.rows(), len, |i, j| a.get(i, start + j))
        }
        Prim::PadRows { total, start } => {
            if start + a.rows() > total {
                return Err(Error::dim(name, format!("{:?} into {total} rows at {start}", a.shape())));
            }
            Tensor::from_fn(total, a.cols(), |i, j| {
                if i >= start && i < start + a.rows() {
                    a.get(i - start, j)
                } else {
                    0.0
                }
            })
        }
        Prim::PadCols { total, start } => {
            if start + a.cols() > total {
                return Err(Error::dim(name, format!("{:?} into {total} cols at {start}", a.shape())));
            }
            Tensor::from_fn(a.rows(), total, |i, j| {
                if j >= start && j < start + a.cols() {
                    a.get(i, j - start)
                } else {
                    0.0
                }
            })
        }
    };
    if !out.is_finite() {
        return Err(Error::NonFinite { op: name });
    }
    Ok(out)
}

/// Tensor algebra over some value carrier. Implemented eagerly for
/// [`Rc<Tensor>`] (via [`Eager`]) and by the tape for [`super::Var`].
pub trait TensorOps {
    type V: Clone;

    fn value(&self, v: &Self::V) -> Tensor;
    fn shape_of(&self, v: &Self::V) -> (usize, usize);
    fn constant(&mut self, t: Tensor) -> Self::V;
    fn apply(&mut self, prim: Prim, inputs: &[Self::V]) -> Result<Self::V>;

    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Prim::MatMul, &[a.clone(), b.clone()])
    }
    fn matmul_nt(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Prim::MatMulNt, &[a.clone(), b.clone()])
    }
    fn matmul_tn(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Prim::MatMulTn, &[a.clone(), b.clone()])
    }
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Prim::Add, &[a.clone(), b.clone()])
    }
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Prim::Sub, &[a.clone(), b.clone()])
    }
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Prim::Mul, &[a.clone(), b.clone()])
    }
    fn neg(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Prim::Neg, std::slice::from_ref(a))
    }
    fn abs(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Prim::Abs, std::slice::from_ref(a))
    }
    fn exp(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Prim::Exp, std::slice::from_ref(a))
    }
    fn square(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Prim::Square, std::slice::from_ref(a))
    }
    fn sigmoid(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Prim::Sigmoid, std::slice::from_ref(a))
    }
    fn tanh(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Prim::Tanh, std::slice::from_ref(a))
    }
    fn powf(&mut self, a: &Self::V, p: f64) -> Result<Self::V> {
        self.apply(Prim::Powf(p), std::slice::from_ref(a))
    }
    fn scale(&mut self, a: &Self::V, c: f64) -> Result<Self::V> {
        self.apply(Prim::Scale(c), std::slice::from_ref(a))
    }
    /// Division by a nonzero constant.
    fn div_scalar(&mut self, a: &Self::V, c: f64) -> Result<Self::V> {
        if c == 0.0 || !c.is_finite() {
            return Err(Error::Domain(format!("div_scalar by {c}")));
        }
        self.scale(a, 1.0 / c)
    }
    fn add_scalar(&mut self, a: &Self::V, c: f64) -> Result<Self::V> {
        self.apply(Prim::AddScalar(c), std::slice::from_ref(a))
    }
    fn row_softmax(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Prim::RowSoftmax, std::slice::from_ref(a))
    }
    fn sum(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Prim::SumAll, std::slice::from_ref(a))
    }
    /// Squared Frobenius norm.
    fn sum_sq(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Prim::SumSq, std::slice::from_ref(a))
    }
    fn sum_to(&mut self, a: &Self::V, shape: (usize, usize)) -> Result<Self::V> {
        if self.shape_of(a) == shape {
            return Ok(a.clone());
        }
        self.apply(Prim::SumTo(shape.0, shape.1), std::slice::from_ref(a))
    }
    fn broadcast_to(&mut self, a: &Self::V, shape: (usize, usize)) -> Result<Self::V> {
        if self.shape_of(a) == shape {
            return Ok(a.clone());
        }
        self.apply(Prim::BroadcastTo(shape.0, shape.1), std::slice::from_ref(a))
    }
    /// Mean of each column, `n×m → 1×m`.
    fn mean_rows(&mut self, a: &Self::V) -> Result<Self::V> {
        let (r, c) = self.shape_of(a);
        let s = self.sum_to(a, (1, c))?;
        self.scale(&s, 1.0 / r as f64)
    }
    /// Mean of each row, `n×m → n×1`.
    fn mean_cols(&mut self, a: &Self::V) -> Result<Self::V> {
        let (r, c) = self.shape_of(a);
        let s = self.sum_to(a, (r, 1))?;
        self.scale(&s, 1.0 / c as f64)
    }
    fn mean(&mut self, a: &Self::V) -> Result<Self::V> {
        let n = self.shape_of(a);
        let s = self.sum(a)?;
        self.scale(&s, 1.0 / (n.0 * n.1) as f64)
    }
    fn transpose(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Prim::Transpose, std::slice::from_ref(a))
    }
    fn reshape(&mut self, a: &Self::V, shape: (usize, usize)) -> Result<Self::V> {
        if self.shape_of(a) == shape {
            return Ok(a.clone());
        }
        self.apply(Prim::Reshape(shape.0, shape.1), std::slice::from_ref(a))
    }
    fn concat_rows(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Prim::ConcatRows, &[a.clone(), b.clone()])
    }
    fn concat_cols(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Prim::ConcatCols, &[a.clone(), b.clone()])
    }
    fn slice_rows(&mut self, a: &Self::V, start: usize, len: usize) -> Result<Self::V> {
        if start == 0 && self.shape_of(a).0 == len {
            return Ok(a.clone());
        }
        self.apply(Prim::SliceRows { start, len }, std::slice::from_ref(a))
    }
    fn slice_cols(&mut self, a: &Self::V, start: usize, len: usize) -> Result<Self::V> {
        if start == 0 && self.shape_of(a).1 == len {
            return Ok(a.clone());
        }
        self.apply(Prim::SliceCols { start, len }, std::slice::from_ref(a))
    }
    fn pad_rows(&mut self, a: &Self::V, total: usize, start: usize) -> Result<Self::V> {
        self.apply(Prim::PadRows { total, start }, std::slice::from_ref(a))
    }
    fn pad_cols(&mut self, a: &Self::V, total: usize, start: usize) -> Result<Self::V> {
        self.apply(Prim::PadCols { total, start }, std::slice::from_ref(a))
    }
}

/// Stateless eager evaluation on reference-counted tensors.
#[derive(Default, Clone, Copy, Debug)]
pub struct Eager;

impl TensorOps for Eager {
    type V = Rc<Tensor>;

    fn value(&self, v: &Rc<Tensor>) -> Tensor {
        (**v).clone()
    }

    fn shape_of(&self, v: &Rc<Tensor>) -> (usize, usize) {
        v.shape()
    }

    fn constant(&mut self, t: Tensor) -> Rc<Tensor> {
        Rc::new(t)
    }

    fn apply(&mut self, prim: Prim, inputs: &[Rc<Tensor>]) -> Result<Rc<Tensor>> {
        let refs: Vec<&Tensor> = inputs.iter().map(|t| &**t).collect();
        forward(prim, &refs).map(Rc::new)
    }
}

/// Gradient of `prim` for each input flagged in `needs`.
///
/// `inputs` and `output` are the forward values as carried by `ops`, so that
/// under a recording algebra the result stays differentiable.
pub(crate) fn vjp<A: TensorOps>(
    ops: &mut A,
    prim: Prim,
    inputs: &[A::V],
    output: &A::V,
    grad: &A::V,
    needs: &[bool],
) -> Result<Vec<Option<A::V>>> {
    let g = grad;
    let mut out: Vec<Option<A::V>> = vec![None; inputs.len()];
    let want = |i: usize| needs.get(i).copied().unwrap_or(false);
    match prim {
        Prim::MatMul => {
            let (a, b) = (&inputs[0], &inputs[1]);
            if want(0) {
                out[0] = Some(ops.matmul_nt(g, b)?);
            }
            if want(1) {
                out[1] = Some(ops.matmul_tn(a, g)?);
            }
        }
        Prim::MatMulNt => {
            // y = a bᵀ: da = g b, db = gᵀ a
            let (a, b) = (&inputs[0], &inputs[1]);
            if want(0) {
                out[0] = Some(ops.matmul(g, b)?);
            }
            if want(1) {
                out[1] = Some(ops.matmul_tn(g, a)?);
            }
        }
        Prim::MatMulTn => {
            // y = aᵀ b: da = b gᵀ, db = a g
            let (a, b) = (&inputs[0], &inputs[1]);
            if want(0) {
                out[0] = Some(ops.matmul_nt(b, g)?);
            }
            if want(1) {
                out[1] = Some(ops.matmul(a, g)?);
            }
        }
        Prim::Add | Prim::Sub => {
            if want(0) {
                let s = ops.shape_of(&inputs[0]);
                out[0] = Some(ops.sum_to(g, s)?);
            }
            if want(1) {
                let s = ops.shape_of(&inputs[1]);
                let r = ops.sum_to(g, s)?;
                out[1] = Some(if prim == Prim::Sub { ops.neg(&r)? } else { r });
            }
        }
        Prim::Mul => {
            let (a, b) = (&inputs[0], &inputs[1]);
            if want(0) {
                let s = ops.shape_of(a);
                let t = ops.mul(g, b)?;
                out[0] = Some(ops.sum_to(&t, s)?);
            }
            if want(1) {
                let s = ops.shape_of(b);
                let t = ops.mul(g, a)?;
                out[1] = Some(ops.sum_to(&t, s)?);
            }
        }
        Prim::Neg => out[0] = Some(ops.neg(g)?),
        Prim::Abs => {
            let sign = ops.value(&inputs[0]).map(|x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            });
            let s = ops.constant(sign);
            out[0] = Some(ops.mul(g, &s)?);
        }
        Prim::Exp => out[0] = Some(ops.mul(g, output)?),
        Prim::Square => {
            let t = ops.mul(g, &inputs[0])?;
            out[0] = Some(ops.scale(&t, 2.0)?);
        }
        Prim::Sigmoid => {
            let t = ops.mul(g, output)?;
            let n = ops.neg(output)?;
            let one_minus = ops.add_scalar(&n, 1.0)?;
            out[0] = Some(ops.mul(&t, &one_minus)?);
        }
        Prim::Tanh => {
            let y2 = ops.square(output)?;
            let n = ops.neg(&y2)?;
            let d = ops.add_scalar(&n, 1.0)?;
            out[0] = Some(ops.mul(g, &d)?);
        }
        Prim::Powf(p) => {
            let d = ops.powf(&inputs[0], p - 1.0)?;
            let d = ops.scale(&d, p)?;
            out[0] = Some(ops.mul(g, &d)?);
        }
        Prim::Scale(c) => out[0] = Some(ops.scale(g, c)?),
        Prim::AddScalar(_) => out[0] = Some(g.clone()),
        Prim::RowSoftmax => {
            let gy = ops.mul(g, output)?;
            let rows = ops.shape_of(output).0;
            let s = ops.sum_to(&gy, (rows, 1))?;
            let centered = ops.sub(g, &s)?;
            out[0] = Some(ops.mul(output, &centered)?);
        }
        Prim::SumAll => {
            let s = ops.shape_of(&inputs[0]);
            out[0] = Some(ops.broadcast_to(g, s)?);
        }
        Prim::SumSq => {
            let t = ops.mul(&inputs[0], g)?;
            out[0] = Some(ops.scale(&t, 2.0)?);
        }
        Prim::SumTo(..) => {
            let s = ops.shape_of(&inputs[0]);
            out[0] = Some(ops.broadcast_to(g, s)?);
        }
        Prim::BroadcastTo(..) => {
            let s = ops.shape_of(&inputs[0]);
            out[0] = Some(ops.sum_to(g, s)?);
        }
        Prim::Transpose => out[0] = Some(ops.transpose(g)?),
        Prim::Reshape(..) => {
            let s = ops.shape_of(&inputs[0]);
            out[0] = Some(ops.reshape(g, s)?);
        }
        Prim::ConcatRows => {
            let ra = ops.shape_of(&inputs[0]).0;
            let rb = ops.shape_of(&inputs[1]).0;
            if want(0) {
                out[0] = Some(ops.slice_rows(g, 0, ra)?);
            }
            if want(1) {
                out[1] = Some(ops.slice_rows(g, ra, rb)?);
            }
        }
        Prim::ConcatCols => {
            let ca = ops.shape_of(&inputs[0]).1;
            let cb = ops.shape_of(&inputs[1]).1;
            if want(0) {
                out[0] = Some(ops.slice_cols(g, 0, ca)?);
            }
            if want(1) {
                out[1] = Some(ops.slice_cols(g, ca, cb)?);
            }
        }
        Prim::SliceRows { start, .. } => {
            let total = ops.shape_of(&inputs[0]).0;
            out[0] = Some(ops.pad_rows(g, total, start)?);
        }
        Prim::SliceCols { start, .. } => {
            let total = ops.shape_of(&inputs[0]).1;
            out[0] = Some(ops.pad_cols(g, total, start)?);
        }
        Prim::PadRows { start, .. } => {
            let len = ops.shape_of(&inputs[0]).0;
            out[0] = Some(ops.slice_rows(g, start, len)?);
        }
        Prim::PadCols { start, .. } => {
            let len = ops.shape_of(&inputs[0]).1;
            out[0] = Some(ops.slice_cols(g, start, len)?);
        }
    }
    Ok(out)
}
