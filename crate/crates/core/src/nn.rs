//! Scalar multilayer perceptrons with hand-written backward passes.

use rand::Rng;

use crate::real::Real;
use crate::tensor::{prefixed, Module, Tensor};

#[inline]
pub fn sigmoid<S: Real>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// `y = W x + b` with `W` of shape `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<S> {
    pub w: Tensor<S>,
    pub b: Tensor<S>,
}

impl<S: Real> Dense<S> {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, gain: f64, rng: &mut R) -> Self {
        Dense {
            w: Tensor::fan_in(c_out, c_in, gain, rng),
            b: Tensor::zeros(&[c_out]),
        }
    }

    pub fn c_in(&self) -> usize {
        self.w.cols()
    }

    pub fn c_out(&self) -> usize {
        self.w.rows()
    }

    pub fn forward_into(&self, x: &[S], out: &mut Vec<S>) {
        let c_in = self.c_in();
        out.clear();
        out.extend(self.w.data.chunks_exact(c_in).zip(&self.b.data).map(|(row, &b)| {
            let mut acc = b;
            for (w, v) in row.iter().zip(x) {
                acc += *w * *v;
            }
            acc
        }));
    }

    /// Accumulates parameter gradients; adds `∂L/∂x` into `g_x` when given.
    pub fn backward(&self, x: &[S], g_y: &[S], grads: &mut Dense<S>, g_x: Option<&mut [S]>) {
        let c_in = self.c_in();
        for (j, &g) in g_y.iter().enumerate() {
            if g == S::zero() {
                continue;
            }
            grads.b.data[j] += g;
            for (gw, v) in grads.w.data[j * c_in..(j + 1) * c_in].iter_mut().zip(x) {
                *gw += g * *v;
            }
        }
        if let Some(g_x) = g_x {
            for (j, &g) in g_y.iter().enumerate() {
                if g == S::zero() {
                    continue;
                }
                for (gx, w) in g_x.iter_mut().zip(&self.w.data[j * c_in..(j + 1) * c_in]) {
                    *gx += g * *w;
                }
            }
        }
    }
}

impl<S: Real> Module<S> for Dense<S> {
    fn params(&self) -> Vec<(String, &Tensor<S>)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Dense layers with ReLU between them and a linear last layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<S> {
    pub layers: Vec<Dense<S>>,
}

/// Inputs of every layer, post-activation.
#[derive(Clone, Debug, Default)]
pub struct MlpCache<S> {
    inputs: Vec<Vec<S>>,
}

impl<S: Real> Mlp<S> {
    /// `sizes = [in, hidden..., out]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(w[0], w[1], if i == last { 1.0 } else { 2f64.sqrt() }, rng))
            .collect();
        Mlp { layers }
    }

    pub fn c_in(&self) -> usize {
        self.layers[0].c_in()
    }

    pub fn c_out(&self) -> usize {
        self.layers.last().expect("non-empty").c_out()
    }

    pub fn forward(&self, x: &[S]) -> Vec<S> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &[S]) -> (Vec<S>, MlpCache<S>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.c_out());
            layer.forward_into(&cur, &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(S::zero()));
            }
            inputs.push(std::mem::replace(&mut cur, out));
        }
        (cur, MlpCache { inputs })
    }

    /// Returns `∂L/∂x`; parameter gradients accumulate into `grads`.
    pub fn backward(&self, cache: &MlpCache<S>, g_out: &[S], grads: &mut Mlp<S>) -> Vec<S> {
        let mut g = g_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[i];
            let mut g_x = vec![S::zero(); layer.c_in()];
            layer.backward(x, &g, &mut grads.layers[i], Some(&mut g_x));
            if i > 0 {
                // x is a ReLU output; its zeros mark inactive units
                for (gx, v) in g_x.iter_mut().zip(x) {
                    if *v <= S::zero() {
                        *gx = S::zero();
                    }
                }
            }
            g = g_x;
        }
        g
    }
}

impl<S: Real> Module<S> for Mlp<S> {
    fn params(&self) -> Vec<(String, &Tensor<S>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| prefixed(&format!("layer{i}"), l.params()).collect::<Vec<_>>())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_module;
    use crate::tensor::zeros_like;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_is_stable_and_symmetric() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-1000.0f64) >= 0.0 && sigmoid(1000.0f64) <= 1.0);
        for x in [-3.0, -0.5, 0.7, 4.0f64] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn dense_matches_hand_product() {
        let d = Dense::<f64> {
            w: Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap(),
            b: Tensor::from_vec(&[2], vec![0.5, -0.5]).unwrap(),
        };
        let mut out = Vec::new();
        d.forward_into(&[1.0, 1.0, 2.0], &mut out);
        assert_eq!(out, vec![9.5, 0.5]);
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mlp = Mlp::<f64>::new(&[5, 7, 6, 2], &mut rng);
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let gy = [0.7, -1.3];
            let loss = |m: &Mlp<f64>| {
                let y = m.forward(&x);
                y[0] * gy[0] + y[1] * gy[1]
            };
            let (_, cache) = mlp.forward_cached(&x);
            let mut grads = zeros_like(&mlp);
            let gx = mlp.backward(&cache, &gy, &mut grads);
            let err = check_module(&mlp, &grads, 1e-6, 1, 1e-6, loss);
            assert!(err < 1e-4, "param rel err {err}");
            let num = crate::gradcheck::central_difference(&x, 1e-6, |xv| {
                let y = mlp.forward(xv);
                y[0] * gy[0] + y[1] * gy[1]
            });
            assert!(crate::gradcheck::max_relative_error(&gx, &num, 1e-6) < 1e-4);
        }
    }

    use rand::Rng;
}
