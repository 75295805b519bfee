//! Minimal dense storage for network parameters and the traversal trait used
//! by the optimizer and the checkpoint writer.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::real::Real;

/// Row-major dense array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Real> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..len).map(|_| S::of(dist.sample(rng))).collect(),
        }
    }

    /// Fan-in scaled uniform initialization for a `[rows, cols]` weight.
    pub fn fan_in<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Self {
        let bound = gain * (3.0 / cols.max(1) as f64).sqrt();
        Self::uniform(&[rows, cols], bound, rng)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = S::zero());
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Anything that owns trainable tensors.
///
/// `params` and `params_mut` must visit tensors in the same order; the
/// optimizer and gradient accumulation zip over them.
pub trait Module<S: Real> {
    fn params(&self) -> Vec<(String, &Tensor<S>)>;

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>>;

    fn zero_grad(&mut self) {
        for t in self.params_mut() {
            t.fill_zero();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src = other.params();
        for (dst, (_, src)) in self.params_mut().into_iter().zip(src) {
            for (d, s) in dst.data.iter_mut().zip(&src.data) {
                *d += *s;
            }
        }
    }

    fn scale(&mut self, factor: S) {
        for t in self.params_mut() {
            t.data.iter_mut().for_each(|x| *x *= factor);
        }
    }

    fn all_finite(&self) -> bool {
        self.params().iter().all(|(_, t)| t.is_finite())
    }
}

/// A zero-filled copy with the same shapes, used as a gradient buffer.
pub fn zeros_like<S: Real, M: Module<S> + Clone>(m: &M) -> M {
    let mut g = m.clone();
    g.zero_grad();
    g
}

pub(crate) fn prefixed<'a, S>(
    prefix: &str,
    items: Vec<(String, &'a Tensor<S>)>,
) -> impl Iterator<Item = (String, &'a Tensor<S>)> + 'a {
    let prefix = prefix.to_string();
    items
        .into_iter()
        .map(move |(name, t)| (format!("{prefix}.{name}"), t))
}
