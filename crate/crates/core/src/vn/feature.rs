use crate::error::{Error, Result};
use crate::geometry::Rotation;
use crate::real::Real;

/// Per-point lists of 3-vectors, laid out `[point][channel][xyz]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VnFeature<S> {
    n: usize,
    c: usize,
    data: Vec<S>,
}

impl<S: Real> VnFeature<S> {
    pub fn zeros(n: usize, c: usize) -> Self {
        VnFeature {
            n,
            c,
            data: vec![S::zero(); n * c * 3],
        }
    }

    pub fn from_vec(n: usize, c: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != n * c * 3 {
            return Err(Error::ShapeMismatch(format!(
                "vector feature {n}x{c}x3 needs {} values, got {}",
                n * c * 3,
                data.len()
            )));
        }
        Ok(VnFeature { n, c, data })
    }

    pub fn points(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn get(&self, p: usize, ch: usize) -> [S; 3] {
        let o = (p * self.c + ch) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set(&mut self, p: usize, ch: usize, v: [S; 3]) {
        let o = (p * self.c + ch) * 3;
        self.data[o..o + 3].copy_from_slice(&v);
    }

    /// All channels of one point, `c × 3` values.
    pub fn point(&self, p: usize) -> &[S] {
        &self.data[p * self.c * 3..(p + 1) * self.c * 3]
    }

    pub fn point_mut(&mut self, p: usize) -> &mut [S] {
        let c = self.c;
        &mut self.data[p * c * 3..(p + 1) * c * 3]
    }

    /// Applies `r` to every channel vector.
    pub fn rotated(&self, r: &Rotation) -> Self {
        let m = r.matrix();
        let m: [[S; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| S::of(m[(i, j)])));
        let mut out = self.clone();
        for v in out.data.chunks_exact_mut(3) {
            let x = [v[0], v[1], v[2]];
            for i in 0..3 {
                v[i] = m[i][0] * x[0] + m[i][1] * x[1] + m[i][2] * x[2];
            }
        }
        out
    }

    /// Stacks features along the channel axis.
    pub fn concat(parts: &[&VnFeature<S>]) -> Result<Self> {
        let n = parts.first().map_or(0, |p| p.n);
        if parts.iter().any(|p| p.n != n) {
            return Err(Error::ShapeMismatch("point counts differ in concat".into()));
        }
        let c: usize = parts.iter().map(|p| p.c).sum();
        let mut data = Vec::with_capacity(n * c * 3);
        for p in 0..n {
            for part in parts {
                data.extend_from_slice(part.point(p));
            }
        }
        Ok(VnFeature { n, c, data })
    }

    /// Inverse of [`concat`](Self::concat): splits channels into blocks of the given sizes.
    pub fn split(&self, sizes: &[usize]) -> Vec<VnFeature<S>> {
        debug_assert_eq!(sizes.iter().sum::<usize>(), self.c);
        let mut out: Vec<VnFeature<S>> = sizes.iter().map(|&c| VnFeature::zeros(self.n, c)).collect();
        for p in 0..self.n {
            let src = self.point(p);
            let mut off = 0;
            for (part, &c) in out.iter_mut().zip(sizes) {
                part.point_mut(p).copy_from_slice(&src[off * 3..(off + c) * 3]);
                off += c;
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &VnFeature<S>) {
        debug_assert_eq!((self.n, self.c), (other.n, other.c));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Per-point rotation-invariant scalars, laid out `[point][channel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InvFeature<S> {
    n: usize,
    d: usize,
    data: Vec<S>,
}

impl<S: Real> InvFeature<S> {
    pub fn zeros(n: usize, d: usize) -> Self {
        InvFeature {
            n,
            d,
            data: vec![S::zero(); n * d],
        }
    }

    pub fn from_vec(n: usize, d: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::ShapeMismatch(format!(
                "invariant feature {n}x{d} needs {} values, got {}",
                n * d,
                data.len()
            )));
        }
        Ok(InvFeature { n, d, data })
    }

    pub fn points(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn point(&self, p: usize) -> &[S] {
        &self.data[p * self.d..(p + 1) * self.d]
    }

    pub fn point_mut(&mut self, p: usize) -> &mut [S] {
        let d = self.d;
        &mut self.data[p * d..(p + 1) * d]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
