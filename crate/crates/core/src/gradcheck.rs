//! Central finite differences for checking hand-written backward passes.

/// `∂f/∂x_i ≈ (f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate.
pub fn central_difference<F>(x: &[f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a − n| / max(|a|, |n|, floor)` over paired entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let g = central_difference(&[1.0, -2.0], 1e-4, |x| x[0] * x[0] + 3.0 * x[1]);
        assert!((g[0] - 2.0).abs() < 1e-6);
        assert!((g[1] - 3.0).abs() < 1e-6);
        assert!(max_relative_error(&[2.0, 3.0], &g, 1e-8) < 1e-6);
    }
}

use crate::tensor::Module;

/// Compares the analytic gradient `grads` of `loss` at `model` with central
/// differences over every `stride`-th parameter entry. Returns the largest
/// relative error.
pub fn check_module<M, F>(model: &M, grads: &M, h: f64, stride: usize, floor: f64, mut loss: F) -> f64
where
    M: Module<f64> + Clone,
    F: FnMut(&M) -> f64,
{
    let analytic: Vec<f64> = grads
        .params()
        .iter()
        .flat_map(|(_, t)| t.data.iter().copied())
        .collect();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut flat = 0usize;
    let shapes: Vec<usize> = model.params().iter().map(|(_, t)| t.len()).collect();
    for (ti, &len) in shapes.iter().enumerate() {
        for e in 0..len {
            if flat % stride.max(1) == 0 {
                let orig = probe.params_mut()[ti].data[e];
                probe.params_mut()[ti].data[e] = orig + h;
                let up = loss(&probe);
                probe.params_mut()[ti].data[e] = orig - h;
                let down = loss(&probe);
                probe.params_mut()[ti].data[e] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[flat];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor));
            }
            flat += 1;
        }
    }
    worst
}
