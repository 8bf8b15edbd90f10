//! Small fixed-size linear algebra for 2-D Gaussians.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

pub type Vec2<T> = [T; 2];

/// Row-major 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Mat2<T> {
    pub m: [[T; 2]; 2],
}

impl<T: Scalar> Mat2<T> {
    pub fn new(a: T, b: T, c: T, d: T) -> Self {
        Self { m: [[a, b], [c, d]] }
    }

    pub fn identity() -> Self {
        Self::diag(T::one(), T::one())
    }

    pub fn diag(a: T, d: T) -> Self {
        Self::new(a, T::zero(), T::zero(), d)
    }

    pub fn scale(&self, s: T) -> Self {
        let m = self.m;
        Self::new(m[0][0] * s, m[0][1] * s, m[1][0] * s, m[1][1] * s)
    }

    pub fn add(&self, o: &Self) -> Self {
        let (a, b) = (self.m, o.m);
        Self::new(a[0][0] + b[0][0], a[0][1] + b[0][1], a[1][0] + b[1][0], a[1][1] + b[1][1])
    }

    pub fn mul(&self, o: &Self) -> Self {
        let (a, b) = (self.m, o.m);
        Self::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }

    pub fn transpose(&self) -> Self {
        let m = self.m;
        Self::new(m[0][0], m[1][0], m[0][1], m[1][1])
    }

    pub fn outer(v: Vec2<T>, w: Vec2<T>) -> Self {
        Self::new(v[0] * w[0], v[0] * w[1], v[1] * w[0], v[1] * w[1])
    }

    pub fn det(&self) -> T {
        let m = self.m;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == T::zero() || !d.is_finite() {
            return None;
        }
        let m = self.m;
        Some(Self::new(m[1][1] / d, -m[0][1] / d, -m[1][0] / d, m[0][0] / d))
    }

    pub fn mul_vec(&self, v: Vec2<T>) -> Vec2<T> {
        let m = self.m;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        let scale = T::one().max(self.m[0][1].abs()).max(self.m[1][0].abs());
        (self.m[0][1] - self.m[1][0]).abs() <= tol * scale
    }

    pub fn is_spd(&self) -> bool {
        let m = self.m;
        let all_finite = m.iter().flatten().all(|x| x.is_finite());
        all_finite
            && self.is_symmetric(T::lit(1e-6))
            && m[0][0] > T::zero()
            && self.det() > T::zero()
    }

    pub fn symmetrized(&self) -> Self {
        self.add(&self.transpose()).scale(T::lit(0.5))
    }

    /// Lower Cholesky factor `L` with `L Lᵀ = self`.
    pub fn cholesky(&self) -> Option<Self> {
        let m = self.m;
        if m[0][0] <= T::zero() {
            return None;
        }
        let l00 = m[0][0].sqrt();
        let l10 = m[1][0] / l00;
        let rest = m[1][1] - l10 * l10;
        if rest <= T::zero() || !rest.is_finite() {
            return None;
        }
        Some(Self::new(l00, T::zero(), l10, rest.sqrt()))
    }

    /// Eigenvalues (descending) and the unit eigenvector of the larger one.
    pub fn sym_eigen(&self) -> ([T; 2], Vec2<T>) {
        let m = self.m;
        let (a, b, d) = (m[0][0], m[0][1], m[1][1]);
        let half_tr = (a + d) * T::lit(0.5);
        let disc = (((a - d) * T::lit(0.5)).powi(2) + b * b).sqrt();
        let l1 = half_tr + disc;
        let l2 = half_tr - disc;
        let v = if b.abs() > T::epsilon() {
            [l1 - d, b]
        } else if a >= d {
            [T::one(), T::zero()]
        } else {
            [T::zero(), T::one()]
        };
        let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
        ([l1, l2], [v[0] / n, v[1] / n])
    }
}

/// Bivariate Gaussian with cached inverse and log-normalizer.
#[derive(Debug, Clone, Copy)]
pub struct Gaussian2<T> {
    pub mean: Vec2<T>,
    pub cov: Mat2<T>,
    precision: Mat2<T>,
    log_norm: T,
}

impl<T: Scalar> Gaussian2<T> {
    /// Returns `None` when `cov` is not symmetric positive-definite.
    pub fn new(mean: Vec2<T>, cov: Mat2<T>) -> Option<Self> {
        if !cov.is_spd() {
            return None;
        }
        let precision = cov.inverse()?;
        let two_pi = T::TAU();
        let log_norm = -(two_pi.ln()) - T::lit(0.5) * cov.det().ln();
        Some(Self { mean, cov, precision, log_norm })
    }

    pub fn mahalanobis_sq(&self, x: Vec2<T>) -> T {
        let d = [x[0] - self.mean[0], x[1] - self.mean[1]];
        let p = self.precision.mul_vec(d);
        d[0] * p[0] + d[1] * p[1]
    }

    pub fn log_pdf(&self, x: Vec2<T>) -> T {
        self.log_norm - T::lit(0.5) * self.mahalanobis_sq(x)
    }

    /// Log-density at the mode.
    pub fn log_peak(&self) -> T {
        self.log_norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs() {
        let a = Mat2::new(4.0f64, 1.0, 1.0, 3.0);
        let l = a.cholesky().unwrap();
        let r = l.mul(&l.transpose());
        for i in 0..2 {
            for j in 0..2 {
                assert!((r.m[i][j] - a.m[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_mode_value() {
        let g = Gaussian2::new([1.0f64, 2.0], Mat2::identity()).unwrap();
        assert!((g.log_pdf([1.0, 2.0]) + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        let g4 = Gaussian2::new([0.0f64, 0.0], Mat2::diag(4.0, 4.0)).unwrap();
        assert!((g4.log_pdf([0.0, 0.0]) + (2.0 * std::f64::consts::PI * 4.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_spd() {
        assert!(Gaussian2::new([0.0f64; 2], Mat2::new(1.0, 2.0, 2.0, 1.0)).is_none());
        assert!(Gaussian2::new([0.0f32; 2], Mat2::new(1.0, 0.5, 0.0, 1.0)).is_none());
    }

    #[test]
    fn eigen_of_diagonal() {
        let (l, v) = Mat2::diag(1.0f64, 9.0).sym_eigen();
        assert_eq!(l, [9.0, 1.0]);
        assert_eq!(v, [0.0, 1.0]);
    }
}
