//! Tiny fixed-size 2×2 matrix used for covariances, diffusion tensors and
//! coordinate maps.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);
    pub const ZERO: Mat2 = Mat2([[0.0, 0.0], [0.0, 0.0]]);

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2([[a, b], [c, d]])
    }

    pub fn diag(a: f64, d: f64) -> Self {
        Mat2([[a, 0.0], [0.0, d]])
    }

    pub fn symmetric(xx: f64, xy: f64, yy: f64) -> Self {
        Mat2([[xx, xy], [xy, yy]])
    }

    pub fn scaled(a: f64) -> Self {
        Self::diag(a, a)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[i][j]
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Mat2([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let m = &self.0;
        Some(Mat2([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]))
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        let m = &self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    /// `vᵀ M v`.
    pub fn quad(&self, v: [f64; 2]) -> f64 {
        let w = self.apply(v);
        v[0] * w[0] + v[1] * w[1]
    }

    pub fn scale(&self, s: f64) -> Self {
        let m = &self.0;
        Mat2([[s * m[0][0], s * m[0][1]], [s * m[1][0], s * m[1][1]]])
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let m = &self.0;
        (m[0][1] - m[1][0]).abs() <= tol * (1.0 + m[0][1].abs().max(m[1][0].abs()))
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn sym_eigenvalues(&self) -> [f64; 2] {
        let m = &self.0;
        let b = 0.5 * (m[0][1] + m[1][0]);
        let mean = 0.5 * (m[0][0] + m[1][1]);
        let half_diff = 0.5 * (m[0][0] - m[1][1]);
        let r = half_diff.hypot(b);
        [mean - r, mean + r]
    }

    /// Symmetric with strictly positive eigenvalues (relative to the largest).
    pub fn is_spd(&self) -> bool {
        let [lo, hi] = self.sym_eigenvalues();
        self.is_symmetric(1e-12) && hi > 0.0 && lo > 1e-12 * hi
    }

    /// Principal square root of a symmetric positive semi-definite matrix.
    pub fn sqrt_spd(&self) -> Option<Self> {
        let [lo, _] = self.sym_eigenvalues();
        if lo < 0.0 || !self.is_symmetric(1e-12) {
            return None;
        }
        let s = self.det().max(0.0).sqrt();
        let t = (self.trace() + 2.0 * s).sqrt();
        if t == 0.0 {
            return Some(Mat2::ZERO);
        }
        Some((*self + Mat2::scaled(s)).scale(1.0 / t))
    }

    /// Largest absolute row sum.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    /// Spectral norm (largest singular value).
    pub fn spectral_norm(&self) -> f64 {
        let ata = self.transpose() * *self;
        ata.sym_eigenvalues()[1].max(0.0).sqrt()
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        let (a, b) = (&self.0, &o.0);
        Mat2([[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]])
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        self + o.scale(-1.0)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        let (a, b) = (&self.0, &o.0);
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Mat2(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_squares_back() {
        let m = Mat2::symmetric(8.0, 1.0, 9.0);
        let r = m.sqrt_spd().unwrap();
        let back = r * r;
        assert!((back - m).max_abs() < 1e-12);
        assert!(r.is_spd());
    }

    #[test]
    fn inverse_and_det() {
        let m = Mat2::new(2.0, 1.0, 1.0, 3.0);
        assert_eq!(m.det(), 5.0);
        let p = m * m.inverse().unwrap();
        assert!((p - Mat2::IDENTITY).max_abs() < 1e-15);
        assert!(Mat2::new(1.0, 2.0, 2.0, 4.0).inverse().is_none());
    }

    #[test]
    fn spectral_norm_of_diag() {
        assert!((Mat2::diag(-3.0, 2.0).spectral_norm() - 3.0).abs() < 1e-12);
    }
}
