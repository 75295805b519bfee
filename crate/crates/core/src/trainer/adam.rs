use crate::real::Real;
use crate::tensor::{Module, Tensor};

/// Adam with the usual bias correction.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Real> Adam<S> {
    pub fn new<M: Module<S>>(module: &M, lr: f64) -> Self {
        let shapes: Vec<usize> = module.params().iter().map(|(_, t)| t.len()).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&n| vec![S::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![S::zero(); n]).collect(),
        }
    }

    /// `params` and `grads` must come from the same module type, in traversal order.
    pub fn step(&mut self, params: Vec<&mut Tensor<S>>, grads: &[(String, &Tensor<S>)]) {
        self.t += 1;
        let b1 = S::of(self.beta1);
        let b2 = S::of(self.beta2);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = S::of(self.lr * c2.sqrt() / c1);
        let eps = S::of(self.eps * c2.sqrt());
        let one = S::one();
        for (((p, (_, g)), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((x, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                *x -= step * *mi / (vi.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[derive(Clone)]
    struct Quad {
        x: Tensor<f64>,
    }

    impl Module<f64> for Quad {
        fn params(&self) -> Vec<(String, &Tensor<f64>)> {
            vec![("x".into(), &self.x)]
        }

        fn params_mut(&mut self) -> Vec<&mut Tensor<f64>> {
            vec![&mut self.x]
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut q = Quad {
            x: Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap(),
        };
        let mut adam = Adam::new(&q, 0.1);
        let g = Quad {
            x: Tensor::from_vec(&[2], vec![3.0, -0.5]).unwrap(),
        };
        adam.step(q.params_mut(), &g.params());
        assert!((q.x.data[0] - 0.9).abs() < 1e-6);
        assert!((q.x.data[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut q = Quad {
            x: Tensor::from_vec(&[3], vec![2.0, -1.0, 0.5]).unwrap(),
        };
        let mut adam = Adam::new(&q, 0.05);
        for _ in 0..2000 {
            let g = Quad {
                x: Tensor::from_vec(&[3], q.x.data.iter().map(|v| 2.0 * v).collect()).unwrap(),
            };
            adam.step(q.params_mut(), &g.params());
        }
        assert!(q.x.data.iter().all(|v| v.abs() < 1e-2));
    }
}
