use rand::Rng;

use super::TrainConfig;
use crate::basemodel::{param_count, BaseParams};
use crate::diffmath::Tensor;
use crate::relgraph::{EmbedderParams, GnnParams, MetaKnowledgeGraph};
use crate::taskenc::{Autoencoder, ModulatorParams};

/// Every learnable tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaParams<T = Tensor> {
    pub theta0: BaseParams<T>,
    pub embedder: EmbedderParams<T>,
    pub gnn: GnnParams<T>,
    pub kg: MetaKnowledgeGraph<T>,
    pub ae_q: Autoencoder<T>,
    pub ae_t: Autoencoder<T>,
    pub modulator: ModulatorParams<T>,
}

impl MetaParams {
    /// Draws in field order, so the base initialization is the same for
    /// every mode under one seed.
    pub fn init<R: Rng + ?Sized>(cfg: &TrainConfig, rng: &mut R) -> Self {
        MetaParams {
            theta0: BaseParams::init(rng, cfg.hidden),
            embedder: EmbedderParams::init(rng, cfg.d, cfg.k),
            gnn: GnnParams::init(rng, cfg.d),
            kg: MetaKnowledgeGraph::init(rng, cfg.g, cfg.d),
            ae_q: Autoencoder::init(rng, cfg.d, cfg.d_h),
            ae_t: Autoencoder::init(rng, cfg.d, cfg.d_h),
            modulator: ModulatorParams::init(rng, cfg.modulation, cfg.d_h, param_count(cfg.hidden)),
        }
    }

    pub fn count(&self) -> usize {
        self.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|t| Tensor::zeros(t.rows(), t.cols()))
    }
}

impl<T> MetaParams<T> {
    pub const GROUPS: [&'static str; 7] = ["theta0", "embedder", "gnn", "kg", "ae_q", "ae_t", "modulator"];

    /// `(group.field, tensor)` pairs in a fixed order.
    pub fn iter(&self) -> impl Iterator<Item = (String, &T)> {
        let mut out: Vec<(String, &T)> = Vec::new();
        for (n, t) in self.theta0.iter() {
            out.push((format!("theta0.{n}"), t));
        }
        for (n, t) in self.embedder.iter() {
            out.push((format!("embedder.{n}"), t));
        }
        for (n, t) in self.gnn.iter() {
            out.push((format!("gnn.{n}"), t));
        }
        for (n, t) in self.kg.iter() {
            out.push((format!("kg.{n}"), t));
        }
        for (n, t) in self.ae_q.iter() {
            out.push((format!("ae_q.{n}"), t));
        }
        for (n, t) in self.ae_t.iter() {
            out.push((format!("ae_t.{n}"), t));
        }
        for (n, t) in self.modulator.iter() {
            out.push((format!("modulator.{n}"), t));
        }
        out.into_iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.iter().map(|(n, _)| n).collect()
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> MetaParams<U> {
        MetaParams {
            theta0: self.theta0.map(&mut f),
            embedder: self.embedder.map(&mut f),
            gnn: self.gnn.map(&mut f),
            kg: self.kg.map(&mut f),
            ae_q: self.ae_q.map(&mut f),
            ae_t: self.ae_t.map(&mut f),
            modulator: self.modulator.map(&mut f),
        }
    }

    /// Same layout as `self`, filled from `values` in [`MetaParams::iter`]
    /// order. `None` if the count is wrong.
    pub fn rebuild<U>(&self, values: impl IntoIterator<Item = U>) -> Option<MetaParams<U>> {
        let mut it = values.into_iter();
        let out = MetaParams {
            theta0: BaseParams::from_values(it.by_ref())?,
            embedder: EmbedderParams::from_values(it.by_ref())?,
            gnn: GnnParams::from_values(it.by_ref())?,
            kg: MetaKnowledgeGraph::from_values(it.by_ref())?,
            ae_q: Autoencoder::<T>::from_values(&mut it)?,
            ae_t: Autoencoder::<T>::from_values(&mut it)?,
            modulator: self.modulator.rebuild(&mut it)?,
        };
        it.next().is_none().then_some(out)
    }
}

/// Group prefix of a registry name.
pub(crate) fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}
