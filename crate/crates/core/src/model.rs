//! Population families, the parameter type and the prior.
//!
//! Every population distribution here is a location-scale family: its density
//! at `x` under `(m, c)` is `g((x - m) / c) / c` for a fixed base density `g`.
//! Everything downstream (truncation transport, the Fisher-information
//! precompute, latent moves) only touches the family through
//! [`LocationScaleFamily`].

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};

pub(crate) const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Location `m` and scale `c > 0` of the population distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub m: f64,
    pub c: f64,
}

impl Theta {
    pub fn new(m: f64, c: f64) -> Result<Self> {
        if !m.is_finite() {
            return invalid(format!("location must be finite, got {m}"));
        }
        if !(c > 0.0 && c.is_finite()) {
            return invalid(format!("scale must be positive and finite, got {c}"));
        }
        Ok(Self { m, c })
    }

    /// Builds `(m, sqrt(variance))`.
    pub fn from_variance(m: f64, variance: f64) -> Result<Self> {
        Self::new(m, variance.sqrt())
    }

    pub fn variance(&self) -> f64 {
        self.c * self.c
    }

    /// Maps a standardized value `z` to the population scale.
    #[inline]
    pub fn transport(&self, z: f64) -> f64 {
        self.m + self.c * z
    }

    #[inline]
    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.m) / self.c
    }
}

/// A location-scale family described by its base density.
pub trait LocationScaleFamily: Send + Sync {
    fn name(&self) -> &'static str;

    /// `log g(z)`.
    fn base_log_density(&self, z: f64) -> f64;

    /// `d/dz log g(z)`.
    fn base_score(&self, z: f64) -> f64;

    /// One draw from `g`.
    fn base_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64;

    /// Whether `g(z) = g(-z)`.
    fn is_symmetric(&self) -> bool {
        false
    }

    /// Whether [`conjugate_update`](Self::conjugate_update) returns draws.
    fn has_conjugate_update(&self) -> bool {
        false
    }

    /// Draw of theta from `p(theta | xs)` when the prior is conjugate for this
    /// family. `None` means the family has no closed-form conditional.
    fn conjugate_update<R: Rng + ?Sized>(
        &self,
        _prior: &Prior,
        _current: Theta,
        _xs: &[f64],
        _rng: &mut R,
    ) -> Option<Theta> {
        None
    }

    fn log_density(&self, theta: Theta, x: f64) -> f64 {
        self.base_log_density(theta.standardize(x)) - theta.c.ln()
    }

    /// Gradient of `log f(x; m, c)` with respect to `(m, c)`.
    fn grad_log_density(&self, theta: Theta, x: f64) -> [f64; 2] {
        self.grad_standardized(theta.standardize(x), theta.c)
    }

    /// The same gradient written in terms of `z = (x - m) / c`.
    #[inline]
    fn grad_standardized(&self, z: f64, c: f64) -> [f64; 2] {
        let psi = self.base_score(z);
        [-psi / c, (-psi * z - 1.0) / c]
    }

    fn population_sample<R: Rng + ?Sized>(&self, theta: Theta, rng: &mut R) -> f64 {
        theta.transport(self.base_sample(rng))
    }
}

/// The normal family, `g` = standard normal density.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normal;

impl LocationScaleFamily for Normal {
    fn name(&self) -> &'static str {
        "normal"
    }

    #[inline]
    fn base_log_density(&self, z: f64) -> f64 {
        -0.5 * z * z - LN_SQRT_2PI
    }

    #[inline]
    fn base_score(&self, z: f64) -> f64 {
        -z
    }

    #[inline]
    fn base_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.sample(StandardNormal)
    }

    fn is_symmetric(&self) -> bool {
        true
    }

    fn has_conjugate_update(&self) -> bool {
        true
    }

    #[inline]
    fn grad_standardized(&self, z: f64, c: f64) -> [f64; 2] {
        [z / c, (z * z - 1.0) / c]
    }

    /// Normal prior on `m`, inverse-gamma prior on `c^2`: one sweep of
    /// `m | c^2, xs` followed by `c^2 | m, xs`.
    fn conjugate_update<R: Rng + ?Sized>(
        &self,
        prior: &Prior,
        current: Theta,
        xs: &[f64],
        rng: &mut R,
    ) -> Option<Theta> {
        let n = xs.len() as f64;
        let sum: f64 = xs.iter().sum();
        let var = current.variance();

        let precision = 1.0 / prior.mu_var + n / var;
        let mean = (prior.mu_mean / prior.mu_var + sum / var) / precision;
        let z: f64 = rng.sample(StandardNormal);
        let m = mean + z / precision.sqrt();

        let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
        let shape = prior.sigma2_shape + 0.5 * n;
        let scale = prior.sigma2_scale + 0.5 * ss;
        let variance = sample_inverse_gamma(shape, scale, rng);
        Some(Theta { m, c: variance.sqrt() })
    }
}

/// Draw from the inverse-gamma distribution with the given shape and scale.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / scale).expect("inverse-gamma parameters are positive");
    1.0 / g.sample(rng)
}

/// Independent normal prior on `m` and inverse-gamma prior on `c^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub mu_mean: f64,
    pub mu_var: f64,
    pub sigma2_shape: f64,
    pub sigma2_scale: f64,
}

impl Default for Prior {
    fn default() -> Self {
        Self {
            mu_mean: 0.0,
            mu_var: 1.0e4,
            sigma2_shape: 1.0,
            sigma2_scale: 1.0,
        }
    }
}

impl Prior {
    pub fn new(mu_mean: f64, mu_var: f64, sigma2_shape: f64, sigma2_scale: f64) -> Result<Self> {
        let prior = Self {
            mu_mean,
            mu_var,
            sigma2_shape,
            sigma2_scale,
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu_mean.is_finite() {
            return invalid("prior mean must be finite");
        }
        if !(self.mu_var > 0.0 && self.mu_var.is_finite()) {
            return invalid(format!("prior variance must be positive, got {}", self.mu_var));
        }
        if !(self.sigma2_shape > 0.0 && self.sigma2_scale > 0.0) {
            return invalid(format!(
                "inverse-gamma shape and scale must be positive, got ({}, {})",
                self.sigma2_shape, self.sigma2_scale
            ));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Theta {
        let z: f64 = rng.sample(StandardNormal);
        let m = self.mu_mean + self.mu_var.sqrt() * z;
        let variance = sample_inverse_gamma(self.sigma2_shape, self.sigma2_scale, rng);
        Theta { m, c: variance.sqrt() }
    }

    /// Log density of `theta = (m, c)`. The prior is stated on `c^2`, so the
    /// change of variables contributes `log(2c)`.
    pub fn log_density(&self, theta: Theta) -> f64 {
        let dm = theta.m - self.mu_mean;
        let log_normal = -0.5 * dm * dm / self.mu_var - 0.5 * self.mu_var.ln() - LN_SQRT_2PI;
        let v = theta.variance();
        let (a, b) = (self.sigma2_shape, self.sigma2_scale);
        let log_ig = a * b.ln() - ln_gamma(a) - (a + 1.0) * v.ln() - b / v;
        log_normal + log_ig + (2.0 * theta.c).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{Continuous, ContinuousCDF, InverseGamma, Normal as SNormal};

    struct Fixed(f64);
    impl LocationScaleFamily for Fixed {
        fn name(&self) -> &'static str {
            "fixed"
        }
        fn base_log_density(&self, z: f64) -> f64 {
            Normal.base_log_density(z)
        }
        fn base_score(&self, z: f64) -> f64 {
            -z
        }
        fn base_sample<R: Rng + ?Sized>(&self, _rng: &mut R) -> f64 {
            self.0
        }
    }

    #[test]
    fn population_sample_is_location_scale_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(Fixed(0.7).population_sample(Theta { m: 0.0, c: 1.0 }, &mut rng), 0.7);
        assert_eq!(
            Fixed(0.7).population_sample(Theta { m: 3.0, c: 2.0 }, &mut rng),
            3.0 + 2.0 * 0.7
        );
    }

    #[test]
    fn population_sample_mean() {
        let theta = Theta::from_variance(50.0, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mean = (0..n).map(|_| Normal.population_sample(theta, &mut rng)).sum::<f64>() / n as f64;
        // 5 standard errors of sqrt(10 / 1e5)
        assert!((mean - 50.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn population_sample_ks() {
        let theta = Theta { m: -1.5, c: 0.7 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let mut xs: Vec<f64> = (0..n).map(|_| Normal.population_sample(theta, &mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        let cdf = SNormal::new(theta.m, theta.c).unwrap();
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf.cdf(x);
                (f - i as f64 / n as f64)
                    .abs()
                    .max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn log_density_examples() {
        let ln_sqrt_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert_abs_diff_eq!(
            Normal.log_density(Theta { m: 0.0, c: 1.0 }, 0.0),
            -ln_sqrt_2pi,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            Normal.log_density(Theta { m: 0.0, c: 2.0 }, 0.0),
            -ln_sqrt_2pi - 2f64.ln(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            Normal.log_density(Theta { m: 1.0, c: 1.0 }, 1.0),
            -ln_sqrt_2pi,
            epsilon = 1e-15
        );
    }

    #[test]
    fn gradient_examples() {
        let g = Normal.grad_log_density(Theta { m: 0.0, c: 1.0 }, 1.0);
        assert_eq!(g, [1.0, 0.0]);
        let g = Normal.grad_log_density(Theta { m: 0.0, c: 1.0 }, 0.0);
        assert_eq!(g, [0.0, -1.0]);
        let g = Normal.grad_log_density(Theta { m: 2.0, c: 3.0 }, 2.0);
        assert_abs_diff_eq!(g[0], 0.0);
        assert_abs_diff_eq!(g[1], -1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn generic_gradient_agrees_with_normal_override() {
        let theta = Theta { m: 0.4, c: 1.7 };
        for &x in &[-3.0, -0.1, 0.4, 2.5] {
            let z = theta.standardize(x);
            let psi = Normal.base_score(z);
            let generic = [-psi / theta.c, (-psi * z - 1.0) / theta.c];
            let fast = Normal.grad_log_density(theta, x);
            assert_abs_diff_eq!(generic[0], fast[0], epsilon = 1e-14);
            assert_abs_diff_eq!(generic[1], fast[1], epsilon = 1e-14);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-5;
        for _ in 0..100 {
            let theta = Theta {
                m: rng.random_range(-5.0..5.0),
                c: rng.random_range(0.3..4.0),
            };
            let x = theta.m + theta.c * rng.random_range(-3.0..3.0);
            let g = Normal.grad_log_density(theta, x);
            let fd_m = (Normal.log_density(
                Theta {
                    m: theta.m + h,
                    ..theta
                },
                x,
            ) - Normal.log_density(
                Theta {
                    m: theta.m - h,
                    ..theta
                },
                x,
            )) / (2.0 * h);
            let fd_c = (Normal.log_density(
                Theta {
                    c: theta.c + h,
                    ..theta
                },
                x,
            ) - Normal.log_density(
                Theta {
                    c: theta.c - h,
                    ..theta
                },
                x,
            )) / (2.0 * h);
            assert!((g[0] - fd_m).abs() < 1e-6, "{g:?} vs {fd_m}");
            assert!((g[1] - fd_c).abs() < 1e-6, "{g:?} vs {fd_c}");
        }
    }

    #[test]
    fn prior_log_density_matches_independent_pdfs() {
        let prior = Prior::default();
        let theta = Theta { m: 0.0, c: 1.0 };
        let n = SNormal::new(0.0, 100.0).unwrap();
        let ig = InverseGamma::new(1.0, 1.0).unwrap();
        let expected = n.ln_pdf(0.0) + ig.ln_pdf(1.0) + 2f64.ln();
        assert!(prior.log_density(theta).is_finite());
        assert_abs_diff_eq!(prior.log_density(theta), expected, epsilon = 1e-9);

        let prior = Prior::new(3.0, 2.5, 2.0, 0.5).unwrap();
        let theta = Theta { m: 1.2, c: 0.8 };
        let n = SNormal::new(3.0, 2.5f64.sqrt()).unwrap();
        let ig = InverseGamma::new(2.0, 0.5).unwrap();
        let expected = n.ln_pdf(1.2) + ig.ln_pdf(0.64) + (1.6f64).ln();
        assert_abs_diff_eq!(prior.log_density(theta), expected, epsilon = 1e-9);
    }

    #[test]
    fn inverse_gamma_tail_fraction() {
        // For IG(1, 1), P(X > 1) = 1 - exp(-1).
        let ig = InverseGamma::new(1.0, 1.0).unwrap();
        let analytic = 1.0 - ig.cdf(1.0);
        assert_abs_diff_eq!(analytic, 1.0 - (-1f64).exp(), epsilon = 1e-12);

        let prior = Prior::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let above = (0..n).filter(|_| prior.sample(&mut rng).variance() > 1.0).count();
        let frac = above as f64 / n as f64;
        assert!((frac - analytic).abs() < 0.005, "fraction {frac}");
    }

    #[test]
    fn degenerate_prior_fixes_location() {
        let prior = Prior::new(5.0, 1e-300, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            assert_eq!(prior.sample(&mut rng).m, 5.0);
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(Theta::new(0.0, 0.0).is_err());
        assert!(Theta::new(0.0, -1.0).is_err());
        assert!(Theta::new(f64::NAN, 1.0).is_err());
        assert!(Prior::new(0.0, 0.0, 1.0, 1.0).is_err());
        assert!(Prior::new(0.0, 1.0, 0.0, 1.0).is_err());
        assert!(Prior::new(0.0, 1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn base_density_integrates_to_one() {
        let (lo, hi, n) = (-12.0, 12.0, 24_001);
        let h = (hi - lo) / (n - 1) as f64;
        let integral: f64 = (0..n)
            .map(|i| {
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                w * Normal.base_log_density(lo + i as f64 * h).exp()
            })
            .sum::<f64>()
            * h;
        assert_abs_diff_eq!(integral, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn conjugate_update_matches_closed_form_conditionals() {
        // Fix c^2 draws aside: check m | c^2, xs and c^2 | m, xs by KS.
        let prior = Prior::new(1.0, 4.0, 2.0, 1.5).unwrap();
        let xs = [0.3, 1.9, -0.4, 2.2, 1.1];
        let current = Theta { m: 0.5, c: 1.3 };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 10_000;
        let mut ms = Vec::with_capacity(n);
        let mut pairs = Vec::with_capacity(n);
        for _ in 0..n {
            let th = Normal.conjugate_update(&prior, current, &xs, &mut rng).unwrap();
            ms.push(th.m);
            pairs.push(th);
        }
        let var = current.variance();
        let prec = 1.0 / prior.mu_var + xs.len() as f64 / var;
        let mean = (prior.mu_mean / prior.mu_var + xs.iter().sum::<f64>() / var) / prec;
        let cond_m = SNormal::new(mean, (1.0 / prec).sqrt()).unwrap();
        assert!(ks(&mut ms, |x| cond_m.cdf(x)) < 1.628 / (n as f64).sqrt());

        // c^2 | m is IG(a + n/2, b + ss/2) with m the freshly drawn location;
        // the probability integral transform makes the draws uniform.
        let mut us: Vec<f64> = pairs
            .iter()
            .map(|th| {
                let ss: f64 = xs.iter().map(|x| (x - th.m).powi(2)).sum();
                let ig = InverseGamma::new(prior.sigma2_shape + 2.5, prior.sigma2_scale + 0.5 * ss).unwrap();
                ig.cdf(th.variance())
            })
            .collect();
        assert!(ks(&mut us, |u| u) < 1.628 / (n as f64).sqrt());
    }

    fn ks(xs: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    proptest! {
        #[test]
        fn location_scale_consistency(m in -100.0..100.0f64, c in 0.01..50.0f64, x in -200.0..200.0f64) {
            let theta = Theta { m, c };
            let lhs = Normal.log_density(theta, x);
            let rhs = Normal.base_log_density((x - m) / c) - c.ln();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
