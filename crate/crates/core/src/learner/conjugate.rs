//! Dirichlet and Normal-inverse-Wishart conjugate updates.

use rand::Rng;

use crate::linalg::{Mat2, Vec2};
use crate::scalar::Scalar;

/// Draws from `Dir(alpha)` via normalized gammas. Entries are floored at
/// `T::prob_floor()` so that every log stays finite.
pub fn sample_dirichlet<T: Scalar, R: Rng + ?Sized>(alpha: &[T], rng: &mut R) -> Vec<T> {
    let mut g: Vec<T> = alpha.iter().map(|&a| T::sample_gamma(a, rng)).collect();
    let total: T = g.iter().copied().sum();
    if !(total > T::zero()) || !total.is_finite() {
        // every gamma underflowed: fall back to the mean
        let s: T = alpha.iter().copied().sum();
        return alpha.iter().map(|&a| a / s).collect();
    }
    for x in g.iter_mut() {
        *x = (*x / total).max(T::prob_floor());
    }
    renormalize(&mut g);
    g
}

pub fn dirichlet_mean<T: Scalar>(alpha: &[T]) -> Vec<T> {
    let s: T = alpha.iter().copied().sum();
    alpha.iter().map(|&a| a / s).collect()
}

pub fn renormalize<T: Scalar>(xs: &mut [T]) {
    let s: T = xs.iter().copied().sum();
    for x in xs.iter_mut() {
        *x = *x / s;
    }
}

/// `log Dir(x | alpha)`.
pub fn dirichlet_log_pdf<T: Scalar>(x: &[T], alpha: &[T]) -> T {
    let a0: T = alpha.iter().copied().sum();
    let mut acc = a0.ln_gamma();
    for (&xi, &ai) in x.iter().zip(alpha) {
        acc = acc - ai.ln_gamma() + (ai - T::one()) * xi.ln();
    }
    acc
}

/// Parameters of a Normal-inverse-Wishart distribution over `(mu, Sigma)`:
/// `Sigma ~ IW(scale, nu)`, `mu | Sigma ~ N(mean, Sigma / kappa)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Niw<T> {
    pub mean: Vec2<T>,
    pub kappa: T,
    pub scale: Mat2<T>,
    pub nu: T,
}

impl<T: Scalar> Niw<T> {
    pub fn prior(m0: Vec2<T>, kappa0: T, v0: Mat2<T>, nu0: T) -> Self {
        Self { mean: m0, kappa: kappa0, scale: v0, nu: nu0 }
    }

    /// Posterior after observing `points`.
    pub fn posterior(&self, points: &[Vec2<T>]) -> Self {
        if points.is_empty() {
            return *self;
        }
        let n = T::lit(points.len() as f64);
        let mut xbar = [T::zero(); 2];
        for p in points {
            xbar[0] = xbar[0] + p[0];
            xbar[1] = xbar[1] + p[1];
        }
        xbar = [xbar[0] / n, xbar[1] / n];
        let mut scatter = Mat2::diag(T::zero(), T::zero());
        for p in points {
            let d = [p[0] - xbar[0], p[1] - xbar[1]];
            scatter = scatter.add(&Mat2::outer(d, d));
        }
        let kappa = self.kappa + n;
        let mean = [
            (self.kappa * self.mean[0] + n * xbar[0]) / kappa,
            (self.kappa * self.mean[1] + n * xbar[1]) / kappa,
        ];
        let dm = [xbar[0] - self.mean[0], xbar[1] - self.mean[1]];
        let scale = self.scale.add(&scatter).add(&Mat2::outer(dm, dm).scale(self.kappa * n / kappa)).symmetrized();
        Self { mean, kappa, scale, nu: self.nu + n }
    }

    /// Point estimate: `mu = mean`; `Sigma` is the inverse-Wishart mean when it
    /// exists (`nu > 3`) and its mode otherwise.
    pub fn point_estimate(&self) -> (Vec2<T>, Mat2<T>) {
        let three = T::lit(3.0);
        let cov = if self.nu > three { self.scale.scale(T::one() / (self.nu - three)) } else { self.scale.scale(T::one() / (self.nu + three)) };
        (self.mean, cov)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec2<T>, Mat2<T>) {
        let sigma = sample_inverse_wishart(&self.scale, self.nu, rng);
        let l = sigma.scale(T::one() / self.kappa).cholesky().unwrap_or_else(|| Mat2::identity());
        let z = [T::sample_std_normal(rng), T::sample_std_normal(rng)];
        let d = l.mul_vec(z);
        ([self.mean[0] + d[0], self.mean[1] + d[1]], sigma)
    }

    /// `log NIW(mu, Sigma)`.
    pub fn log_pdf(&self, mu: Vec2<T>, sigma: &Mat2<T>) -> T {
        let half = T::lit(0.5);
        let two = T::lit(2.0);
        let Some(inv) = sigma.inverse() else {
            return T::neg_infinity();
        };
        // inverse-Wishart, d = 2
        let tr = inv.mul(&self.scale);
        let trace = tr.m[0][0] + tr.m[1][1];
        let log_gamma2 = half * T::PI().ln() + (self.nu * half).ln_gamma() + (self.nu * half - half).ln_gamma();
        let log_iw = self.nu * half * self.scale.det().ln()
            - self.nu * two.ln()
            - log_gamma2
            - (self.nu + T::lit(3.0)) * half * sigma.det().ln()
            - half * trace;
        // Gaussian on mu with covariance Sigma / kappa
        let d = [mu[0] - self.mean[0], mu[1] - self.mean[1]];
        let p = inv.mul_vec(d);
        let maha = self.kappa * (d[0] * p[0] + d[1] * p[1]);
        let log_n = -(T::TAU().ln()) - half * (sigma.det() / (self.kappa * self.kappa)).ln() - half * maha;
        log_iw + log_n
    }
}

/// Draws `Sigma ~ IW(scale, nu)` in two dimensions via the Bartlett
/// decomposition of the corresponding Wishart. The draw is symmetrized and
/// jittered by `1e-9 I` if it comes out numerically singular.
pub fn sample_inverse_wishart<T: Scalar, R: Rng + ?Sized>(scale: &Mat2<T>, nu: T, rng: &mut R) -> Mat2<T> {
    let half = T::lit(0.5);
    let wish_scale = scale.inverse().and_then(|m| m.symmetrized().cholesky()).unwrap_or_else(Mat2::identity);
    // chi-square(k) = 2 * Gamma(k / 2)
    let c1 = (T::lit(2.0) * T::sample_gamma(nu * half, rng)).sqrt();
    let c2 = (T::lit(2.0) * T::sample_gamma((nu - T::one()) * half, rng)).sqrt();
    let z = T::sample_std_normal(rng);
    let a = Mat2::new(c1, T::zero(), z, c2);
    let la = wish_scale.mul(&a);
    let w = la.mul(&la.transpose());
    let mut sigma = w.inverse().unwrap_or_else(Mat2::identity).symmetrized();
    if !sigma.is_spd() || sigma.det() < T::lit(1e-12) {
        sigma = sigma.add(&Mat2::identity().scale(T::lit(1e-9)));
    }
    if !sigma.is_spd() {
        sigma = scale.scale(T::one() / (nu + T::lit(3.0)));
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dirichlet_draws_are_simplexes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let x = sample_dirichlet(&[0.004f64, 0.004, 0.004, 3.0], &mut rng);
            assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(x.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn dirichlet_mean_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let alpha = [1.0f64, 2.0, 3.0];
        let n = 20_000;
        let mut acc = [0.0; 3];
        for _ in 0..n {
            let x = sample_dirichlet(&alpha, &mut rng);
            for i in 0..3 {
                acc[i] += x[i] / n as f64;
            }
        }
        for i in 0..3 {
            assert!((acc[i] - alpha[i] / 6.0).abs() < 0.01);
        }
    }

    #[test]
    fn dirichlet_log_pdf_uniform() {
        // Dir(1,1,1) is uniform on the simplex with density Γ(3) = 2
        let v = dirichlet_log_pdf(&[0.2f64, 0.3, 0.5], &[1.0, 1.0, 1.0]);
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn niw_single_point_posterior_mean() {
        let prior = Niw::prior([0.0f64, 0.0], 0.001, Mat2::diag(2.0, 2.0), 3.0);
        let post = prior.posterior(&[[10.0, 4.0]]);
        assert!((post.mean[0] - 10.0 / 1.001).abs() < 1e-12);
        assert!((post.mean[1] - 4.0 / 1.001).abs() < 1e-12);
        assert_eq!(post.nu, 4.0);
    }

    #[test]
    fn inverse_wishart_mean_matches() {
        // E[Sigma] = scale / (nu - 3) for d = 2
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scale = Mat2::new(6.0f64, 1.5, 1.5, 3.0);
        let nu = 9.0;
        let n = 40_000;
        let mut acc = Mat2::diag(0.0, 0.0);
        for _ in 0..n {
            acc = acc.add(&sample_inverse_wishart(&scale, nu, &mut rng).scale(1.0 / n as f64));
        }
        let expect = scale.scale(1.0 / (nu - 3.0));
        for i in 0..2 {
            for j in 0..2 {
                assert!((acc.m[i][j] - expect.m[i][j]).abs() < 0.03, "{acc:?} vs {expect:?}");
            }
        }
    }

    #[test]
    fn niw_log_pdf_normalizes_in_mu() {
        // integrate the mu-part numerically for a fixed Sigma and compare with log IW alone
        let niw = Niw::prior([1.0f64, -1.0], 2.0, Mat2::diag(2.0, 1.0), 4.0);
        let sigma = Mat2::new(1.0, 0.2, 0.2, 0.5);
        let h = 0.02;
        let mut acc = 0.0;
        for a in 0..400 {
            for b in 0..400 {
                let mu = [1.0 - 4.0 + (a as f64 + 0.5) * h, -1.0 - 4.0 + (b as f64 + 0.5) * h];
                acc += niw.log_pdf(mu, &sigma).exp() * h * h;
            }
        }
        // remaining mass is the inverse-Wishart density at sigma
        let far = niw.log_pdf(niw.mean, &sigma);
        let iw = far - (-(std::f64::consts::TAU.ln()) - 0.5 * (sigma.det() / 4.0).ln());
        assert!((acc.ln() - iw).abs() < 1e-3);
    }
}
