//! Task representations from prototype sets and modulation of the shared
//! initialization.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basemodel::BaseParams;
use crate::diffmath::{Tensor, TensorOps};
use crate::error::{Error, Result};
use crate::params::{normal, param_bundle, uniform};

param_bundle! {
    /// Gated recurrent cell, `h' = (1 − z) ∘ n + z ∘ h` with
    /// `n = tanh(x W_n + (r ∘ h) U_n + b_n)`.
    GruCellParams { w_z, u_z, b_z, w_r, u_r, b_r, w_n, u_n, b_n }
}

param_bundle! {
    /// Decoder output head mapping hidden states back to prototype space.
    ReadoutParams { w_out, b_out }
}

impl GruCellParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, input: usize, hidden: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        GruCellParams {
            w_z: uniform(rng, input, hidden, bound),
            u_z: uniform(rng, hidden, hidden, bound),
            b_z: uniform(rng, 1, hidden, bound),
            w_r: uniform(rng, input, hidden, bound),
            u_r: uniform(rng, hidden, hidden, bound),
            b_r: uniform(rng, 1, hidden, bound),
            w_n: uniform(rng, input, hidden, bound),
            u_n: uniform(rng, hidden, hidden, bound),
            b_n: uniform(rng, 1, hidden, bound),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruCellParams {
            w_z: Tensor::zeros(input, hidden),
            u_z: Tensor::zeros(hidden, hidden),
            b_z: Tensor::zeros(1, hidden),
            w_r: Tensor::zeros(input, hidden),
            u_r: Tensor::zeros(hidden, hidden),
            b_r: Tensor::zeros(1, hidden),
            w_n: Tensor::zeros(input, hidden),
            u_n: Tensor::zeros(hidden, hidden),
            b_n: Tensor::zeros(1, hidden),
        }
    }
}

impl ReadoutParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, hidden: usize, out: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        ReadoutParams {
            w_out: uniform(rng, hidden, out, bound),
            b_out: Tensor::zeros(1, out),
        }
    }
}

/// Encoder, decoder and readout of one recurrent autoencoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder<T = Tensor> {
    pub encoder: GruCellParams<T>,
    pub decoder: GruCellParams<T>,
    pub readout: ReadoutParams<T>,
}

impl Autoencoder {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d: usize, d_h: usize) -> Self {
        Autoencoder {
            encoder: GruCellParams::init(rng, d, d_h),
            decoder: GruCellParams::init(rng, d, d_h),
            readout: ReadoutParams::init(rng, d_h, d),
        }
    }
}

impl<T> Autoencoder<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Autoencoder<U> {
        Autoencoder {
            encoder: self.encoder.map(&mut f),
            decoder: self.decoder.map(&mut f),
            readout: self.readout.map(&mut f),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (String, &T)> {
        let mut out = Vec::new();
        for (n, t) in self.encoder.iter() {
            out.push((format!("encoder.{n}"), t));
        }
        for (n, t) in self.decoder.iter() {
            out.push((format!("decoder.{n}"), t));
        }
        for (n, t) in self.readout.iter() {
            out.push((format!("readout.{n}"), t));
        }
        out.into_iter()
    }

    pub fn from_values<U>(values: &mut impl Iterator<Item = U>) -> Option<Autoencoder<U>> {
        Some(Autoencoder {
            encoder: GruCellParams::from_values(&mut *values)?,
            decoder: GruCellParams::from_values(&mut *values)?,
            readout: ReadoutParams::from_values(&mut *values)?,
        })
    }
}

/// One recurrent update. `h` is `1 × d_h`, `x` is `1 × d`.
pub fn gru_step<A: TensorOps>(ops: &mut A, cell: &GruCellParams<A::V>, h: &A::V, x: &A::V) -> Result<A::V> {
    let gate = |ops: &mut A, w: &A::V, u: &A::V, b: &A::V| -> Result<A::V> {
        let xw = ops.matmul(x, w)?;
        let hu = ops.matmul(h, u)?;
        let s = ops.add(&xw, &hu)?;
        let s = ops.add(&s, b)?;
        ops.sigmoid(&s)
    };
    let z = gate(ops, &cell.w_z, &cell.u_z, &cell.b_z)?;
    let r = gate(ops, &cell.w_r, &cell.u_r, &cell.b_r)?;
    let xw = ops.matmul(x, &cell.w_n)?;
    let rh = ops.mul(&r, h)?;
    let rhu = ops.matmul(&rh, &cell.u_n)?;
    let s = ops.add(&xw, &rhu)?;
    let s = ops.add(&s, &cell.b_n)?;
    let n = ops.tanh(&s)?;
    // h' = n + z ∘ (h − n)
    let delta = ops.sub(h, &n)?;
    let zd = ops.mul(&z, &delta)?;
    ops.add(&n, &zd)
}

/// Runs the encoder over the rows of `c` (in index order, from a zero state).
/// Returns the mean of the encoder states and the final state.
pub fn encode<A: TensorOps>(ops: &mut A, encoder: &GruCellParams<A::V>, c: &A::V) -> Result<(A::V, A::V)> {
    let k = ops.shape_of(c).0;
    if k == 0 {
        return Err(Error::Domain("cannot encode an empty prototype set".into()));
    }
    let d_h = ops.shape_of(&encoder.b_z).1;
    let mut h = ops.constant(Tensor::zeros(1, d_h));
    let mut total: Option<A::V> = None;
    for i in 0..k {
        let x = ops.slice_rows(c, i, 1)?;
        h = gru_step(ops, encoder, &h, &x)?;
        total = Some(match total {
            None => h.clone(),
            Some(t) => ops.add(&t, &h)?,
        });
    }
    let total = total.expect("k >= 1");
    let repr = if k == 1 { total } else { ops.scale(&total, 1.0 / k as f64)? };
    Ok((repr, h))
}

/// Mean-pooled representation of `c` (`K × d`) and the squared Frobenius
/// reconstruction error of the free-running decoder.
pub fn encode_aggregate<A: TensorOps>(ops: &mut A, ae: &Autoencoder<A::V>, c: &A::V) -> Result<(A::V, A::V)> {
    let (k, d) = ops.shape_of(c);
    let (repr, last) = encode(ops, &ae.encoder, c)?;
    let mut h = last;
    let mut input = ops.constant(Tensor::zeros(1, d));
    let mut recon: Option<A::V> = None;
    for _ in 0..k {
        h = gru_step(ops, &ae.decoder, &h, &input)?;
        let out = ops.matmul(&h, &ae.readout.w_out)?;
        let out = ops.add(&out, &ae.readout.b_out)?;
        recon = Some(match recon {
            None => out.clone(),
            Some(r) => ops.concat_rows(&r, &out)?,
        });
        input = out;
    }
    let residual = ops.sub(c, &recon.expect("k >= 1"))?;
    let loss = ops.sum_sq(&residual)?;
    Ok((repr, loss))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modulation {
    #[default]
    Sigmoid,
    Tanh,
    Film,
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modulation::Sigmoid => "sigmoid",
            Modulation::Tanh => "tanh",
            Modulation::Film => "film",
        })
    }
}

impl FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sigmoid" => Ok(Modulation::Sigmoid),
            "tanh" => Ok(Modulation::Tanh),
            "film" => Ok(Modulation::Film),
            other => Err(Error::Domain(format!("unknown modulation `{other}`"))),
        }
    }
}

param_bundle! {
    /// Per-parameter gate head: `gate = act((t ⊕ q) W_g + b_g)`.
    GateParams { w_g, b_g }
}

param_bundle! {
    /// Two affine heads producing a scale and a shift per base parameter.
    FilmParams { w_gamma, b_gamma, w_beta, b_beta }
}

const GATE_INIT_STD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub enum ModulatorParams<T = Tensor> {
    Sigmoid(GateParams<T>),
    Tanh(GateParams<T>),
    Film(FilmParams<T>),
}

impl ModulatorParams {
    /// Heads sized for `2·d_h` inputs and `n_params` outputs. Sigmoid and
    /// tanh gates both start near 0.5; FiLM starts at the identity.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, mode: Modulation, d_h: usize, n_params: usize) -> Self {
        let input = 2 * d_h;
        match mode {
            Modulation::Sigmoid => ModulatorParams::Sigmoid(GateParams {
                w_g: normal(rng, input, n_params, GATE_INIT_STD),
                b_g: Tensor::zeros(1, n_params),
            }),
            Modulation::Tanh => ModulatorParams::Tanh(GateParams {
                w_g: normal(rng, input, n_params, GATE_INIT_STD),
                b_g: Tensor::filled(1, n_params, 0.5f64.atanh()),
            }),
            Modulation::Film => ModulatorParams::Film(FilmParams {
                w_gamma: normal(rng, input, n_params, GATE_INIT_STD),
                b_gamma: Tensor::ones(1, n_params),
                w_beta: normal(rng, input, n_params, GATE_INIT_STD),
                b_beta: Tensor::zeros(1, n_params),
            }),
        }
    }
}

impl<T> ModulatorParams<T> {
    pub fn mode(&self) -> Modulation {
        match self {
            ModulatorParams::Sigmoid(_) => Modulation::Sigmoid,
            ModulatorParams::Tanh(_) => Modulation::Tanh,
            ModulatorParams::Film(_) => Modulation::Film,
        }
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> ModulatorParams<U> {
        match self {
            ModulatorParams::Sigmoid(p) => ModulatorParams::Sigmoid(p.map(f)),
            ModulatorParams::Tanh(p) => ModulatorParams::Tanh(p.map(f)),
            ModulatorParams::Film(p) => ModulatorParams::Film(p.map(f)),
        }
    }

    pub fn iter(&self) -> Box<dyn Iterator<Item = (&'static str, &T)> + '_> {
        match self {
            ModulatorParams::Sigmoid(p) | ModulatorParams::Tanh(p) => Box::new(p.iter()),
            ModulatorParams::Film(p) => Box::new(p.iter()),
        }
    }

    /// Rebuilds a modulator of the same variant as `self`.
    pub fn rebuild<U>(&self, values: &mut impl Iterator<Item = U>) -> Option<ModulatorParams<U>> {
        Some(match self {
            ModulatorParams::Sigmoid(_) => ModulatorParams::Sigmoid(GateParams::from_values(values)?),
            ModulatorParams::Tanh(_) => ModulatorParams::Tanh(GateParams::from_values(values)?),
            ModulatorParams::Film(_) => ModulatorParams::Film(FilmParams::from_values(values)?),
        })
    }
}

/// Modulated initialization and, for gate modes, the gate row itself.
pub struct Modulated<V> {
    pub theta: BaseParams<V>,
    pub gate: Option<V>,
}

/// Tailors `theta0` to a task from its representations `q` and `t`
/// (each `1 × d_h`, concatenated as `t ⊕ q`).
pub fn modulate<A: TensorOps>(
    ops: &mut A,
    modulator: &ModulatorParams<A::V>,
    q: &A::V,
    t: &A::V,
    theta0: &BaseParams<A::V>,
) -> Result<Modulated<A::V>> {
    let tq = ops.concat_cols(t, q)?;
    let n_params: usize = theta0.iter().map(|(_, v)| {
        let (r, c) = ops.shape_of(v);
        r * c
    }).sum();
    let head = |ops: &mut A, w: &A::V, b: &A::V| -> Result<A::V> {
        let (_, out) = ops.shape_of(w);
        if out != n_params {
            return Err(Error::dim(
                "modulate",
                format!("head emits {out} values for {n_params} base parameters"),
            ));
        }
        let z = ops.matmul(&tq, w)?;
        ops.add(&z, b)
    };
    match modulator {
        ModulatorParams::Sigmoid(p) | ModulatorParams::Tanh(p) => {
            let pre = head(ops, &p.w_g, &p.b_g)?;
            let gate = if matches!(modulator, ModulatorParams::Sigmoid(_)) {
                ops.sigmoid(&pre)?
            } else {
                ops.tanh(&pre)?
            };
            let theta = apply_gate(ops, &gate, theta0)?;
            Ok(Modulated {
                theta,
                gate: Some(gate),
            })
        }
        ModulatorParams::Film(p) => {
            let gamma = head(ops, &p.w_gamma, &p.b_gamma)?;
            let beta = head(ops, &p.w_beta, &p.b_beta)?;
            let mut off = 0;
            let mut out = Vec::new();
            for (_, v) in theta0.iter() {
                let shape = ops.shape_of(v);
                let n = shape.0 * shape.1;
                let g = ops.slice_cols(&gamma, off, n)?;
                let g = ops.reshape(&g, shape)?;
                let b = ops.slice_cols(&beta, off, n)?;
                let b = ops.reshape(&b, shape)?;
                let scaled = ops.mul(&g, v)?;
                out.push(ops.add(&scaled, &b)?);
                off += n;
            }
            Ok(Modulated {
                theta: BaseParams::from_values(out).expect("field count"),
                gate: None,
            })
        }
    }
}

/// `theta0 ∘ gate`, with `gate` a `1 × |θ|` row laid out in field order.
pub fn apply_gate<A: TensorOps>(ops: &mut A, gate: &A::V, theta0: &BaseParams<A::V>) -> Result<BaseParams<A::V>> {
    let mut off = 0;
    let mut out = Vec::new();
    for (_, v) in theta0.iter() {
        let shape = ops.shape_of(v);
        let n = shape.0 * shape.1;
        let g = ops.slice_cols(gate, off, n)?;
        let g = ops.reshape(&g, shape)?;
        out.push(ops.mul(v, &g)?);
        off += n;
    }
    if off != ops.shape_of(gate).1 {
        return Err(Error::dim("modulate", format!("gate has {} entries for {off} parameters", ops.shape_of(gate).1)));
    }
    Ok(BaseParams::from_values(out).expect("field count"))
}
