//! Named parameter bundles that can hold tensors, tape vars or gradients.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::diffmath::Tensor;

macro_rules! param_bundle {
    ($(#[$meta:meta])* $name:ident { $($(#[$fmeta:meta])* $field:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<T = $crate::diffmath::Tensor> {
            $($(#[$fmeta])* pub $field: T,)+
        }

        impl<T> $name<T> {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($field)),+];

            pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> $name<U> {
                $name { $($field: f(&self.$field),)+ }
            }

            pub fn try_map<U, E>(&self, mut f: impl FnMut(&T) -> Result<U, E>) -> Result<$name<U>, E> {
                Ok($name { $($field: f(&self.$field)?,)+ })
            }

            pub fn iter(&self) -> impl Iterator<Item = (&'static str, &T)> {
                [$((stringify!($field), &self.$field),)+].into_iter()
            }

            pub fn iter_mut(&mut self) -> impl Iterator<Item = (&'static str, &mut T)> {
                [$((stringify!($field), &mut self.$field),)+].into_iter()
            }

            /// Rebuilds a bundle from values in field order.
            pub fn from_values(values: impl IntoIterator<Item = T>) -> Option<Self> {
                let mut it = values.into_iter();
                Some($name { $($field: it.next()?,)+ })
            }
        }
    };
}

pub(crate) use param_bundle;

/// Glorot-normal weight matrix.
pub(crate) fn xavier<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    normal(rng, rows, cols, std)
}

pub(crate) fn normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(rows, cols, |_, _| dist.sample(rng))
}

pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Tensor {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_fn(rows, cols, |_, _| dist.sample(rng))
}
