//! Monte Carlo Fisher information of one privatized release.
//!
//! For `y = T(x) + noise` the score `d/dtheta log p(y | theta)` has no closed
//! form. It equals the posterior expectation of `d/dtheta log f(x; theta)`
//! given `y`, which is estimated by self-normalized importance sampling with
//! `P_theta` itself as the proposal. The information matrix is then the mean
//! of outer products of such scores over simulated releases.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{LocationScaleFamily, Theta};
use crate::numeric::{mean_var, pairwise_sum};
use crate::privacy::{sample_laplace, truncate, PrivacyParams, TruncationInterval};
use crate::rng::{Purpose, SeedTree};

/// Sample sizes: `outer` simulated releases, `inner` importance draws each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FimConfig {
    pub outer: usize,
    pub inner: usize,
}

impl Default for FimConfig {
    fn default() -> Self {
        Self {
            outer: 500,
            inner: 2000,
        }
    }
}

impl FimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer < 1 {
            return invalid("need at least one outer sample");
        }
        if self.inner < 2 {
            return invalid(format!("need at least two importance draws, got {}", self.inner));
        }
        Ok(())
    }
}

/// Scalar summary of a 2x2 information matrix, to be maximized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFunction {
    Trace,
    /// A single entry, 0-based: `(0, 0)` is the `m` block.
    Entry(usize, usize),
    WeightedDiag(f64, f64),
}

impl Default for ScoreFunction {
    fn default() -> Self {
        ScoreFunction::Entry(0, 0)
    }
}

impl ScoreFunction {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ScoreFunction::Entry(i, j) if i > 1 || j > 1 => invalid(format!("entry ({i}, {j}) is out of range")),
            ScoreFunction::WeightedDiag(a, b) if !(a.is_finite() && b.is_finite()) => {
                invalid("diagonal weights must be finite")
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, f: &[[f64; 2]; 2]) -> f64 {
        match *self {
            ScoreFunction::Trace => f[0][0] + f[1][1],
            ScoreFunction::Entry(i, j) => f[i][j],
            ScoreFunction::WeightedDiag(a, b) => a * f[0][0] + b * f[1][1],
        }
    }
}

/// Estimated score vector for one release.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreEstimate {
    pub grad: [f64; 2],
    /// All importance weights vanished; `grad` is then zero.
    pub degenerate: bool,
}

/// Self-normalized weighted mean of gradients in linear space.
/// Returns `None` when the weights do not have a positive finite sum.
pub fn self_normalized(weights: &[f64], grads: &[[f64; 2]]) -> Option<[f64; 2]> {
    debug_assert_eq!(weights.len(), grads.len());
    let total = pairwise_sum(weights);
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    let g0: Vec<f64> = weights.iter().zip(grads).map(|(w, g)| w * g[0]).collect();
    let g1: Vec<f64> = weights.iter().zip(grads).map(|(w, g)| w * g[1]).collect();
    Some([pairwise_sum(&g0) / total, pairwise_sum(&g1) / total])
}

/// SNIS score from standardized draws `u` (so `x = m + c u`).
fn snis_score<M: LocationScaleFamily>(
    model: &M,
    theta: Theta,
    y: f64,
    iv: &TruncationInterval,
    privacy: PrivacyParams,
    us: &[f64],
) -> ScoreEstimate {
    let rate = 1.0 / privacy.noise_scale(iv);
    let log_w: Vec<f64> = us
        .iter()
        .map(|&u| -(y - truncate(theta.transport(u), iv)).abs() * rate)
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return ScoreEstimate {
            grad: [0.0; 2],
            degenerate: true,
        };
    }
    let weights: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
    let grads: Vec<[f64; 2]> = us.iter().map(|&u| model.grad_standardized(u, theta.c)).collect();
    match self_normalized(&weights, &grads) {
        Some(grad) if grad.iter().all(|g| g.is_finite()) => ScoreEstimate {
            grad,
            degenerate: false,
        },
        _ => ScoreEstimate {
            grad: [0.0; 2],
            degenerate: true,
        },
    }
}

/// Estimates the score of `y` at `theta` with `inner` draws from `P_theta`.
pub fn score_estimate<M: LocationScaleFamily, R: Rng + ?Sized>(
    model: &M,
    theta: Theta,
    y: f64,
    iv: &TruncationInterval,
    privacy: PrivacyParams,
    inner: usize,
    rng: &mut R,
) -> ScoreEstimate {
    let us: Vec<f64> = (0..inner).map(|_| model.base_sample(rng)).collect();
    snis_score(model, theta, y, iv, privacy, &us)
}

/// The random inputs of one outer sample, in standardized form so they can be
/// reused across parameters and intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterDraw {
    /// Latent value, `x = m + c z`.
    pub z: f64,
    /// Unit-scale Laplace noise.
    pub v: f64,
    /// Standardized importance draws.
    pub us: Vec<f64>,
}

impl OuterDraw {
    /// Draw `j` from stream `(FimOuter, 0, j)`.
    pub fn generate<M: LocationScaleFamily>(model: &M, inner: usize, seeds: &SeedTree, j: usize) -> Self {
        let mut rng = seeds.stream(Purpose::FimOuter, 0, j as u64);
        let z = model.base_sample(&mut rng);
        let v = sample_laplace(1.0, &mut rng);
        let us = (0..inner).map(|_| model.base_sample(&mut rng)).collect();
        Self { z, v, us }
    }

    /// Release implied by this draw under `theta`, `iv` and `privacy`.
    pub fn release(&self, theta: Theta, iv: &TruncationInterval, privacy: PrivacyParams) -> f64 {
        truncate(theta.transport(self.z), iv) + privacy.noise_scale(iv) * self.v
    }

    pub fn score<M: LocationScaleFamily>(
        &self,
        model: &M,
        theta: Theta,
        iv: &TruncationInterval,
        privacy: PrivacyParams,
    ) -> ScoreEstimate {
        snis_score(model, theta, self.release(theta, iv, privacy), iv, privacy, &self.us)
    }
}

/// A set of outer draws shared between estimates (common random numbers).
#[derive(Debug, Clone, PartialEq)]
pub struct OuterDraws {
    draws: Vec<OuterDraw>,
}

impl OuterDraws {
    pub fn generate<M: LocationScaleFamily>(model: &M, cfg: &FimConfig, seeds: &SeedTree) -> Result<Self> {
        cfg.validate()?;
        let draws = (0..cfg.outer)
            .into_par_iter()
            .map(|j| OuterDraw::generate(model, cfg.inner, seeds, j))
            .collect();
        Ok(Self { draws })
    }

    pub fn draws(&self) -> &[OuterDraw] {
        &self.draws
    }

    pub fn fim<M: LocationScaleFamily>(
        &self,
        model: &M,
        theta: Theta,
        iv: &TruncationInterval,
        privacy: PrivacyParams,
    ) -> FimEstimate {
        let scores: Vec<ScoreEstimate> = self
            .draws
            .par_iter()
            .map(|d| d.score(model, theta, iv, privacy))
            .collect();
        FimEstimate::from_scores(&scores)
    }
}

/// Monte Carlo estimate of the 2x2 information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FimEstimate {
    pub info: [[f64; 2]; 2],
    /// Standard error of each entry.
    pub stderr: [[f64; 2]; 2],
    /// Outer samples whose score estimate was degenerate.
    pub degenerate: usize,
    /// Per-sample outer products `(g0^2, g0 g1, g1^2)`.
    products: Vec<[f64; 3]>,
}

impl FimEstimate {
    fn from_scores(scores: &[ScoreEstimate]) -> Self {
        let products: Vec<[f64; 3]> = scores
            .iter()
            .map(|s| [s.grad[0] * s.grad[0], s.grad[0] * s.grad[1], s.grad[1] * s.grad[1]])
            .collect();
        let n = products.len() as f64;
        let stats: Vec<(f64, f64)> = (0..3)
            .map(|k| {
                let col: Vec<f64> = products.iter().map(|p| p[k]).collect();
                mean_var(&col)
            })
            .collect();
        let se = |k: usize| (stats[k].1 / n).sqrt();
        Self {
            info: [[stats[0].0, stats[1].0], [stats[1].0, stats[2].0]],
            stderr: [[se(0), se(1)], [se(1), se(2)]],
            degenerate: scores.iter().filter(|s| s.degenerate).count(),
            products,
        }
    }

    pub fn samples(&self) -> usize {
        self.products.len()
    }

    /// Value of a score function and its Monte Carlo standard error.
    pub fn score(&self, sf: &ScoreFunction) -> (f64, f64) {
        let per_sample: Vec<f64> = self
            .products
            .iter()
            .map(|p| sf.apply(&[[p[0], p[1]], [p[1], p[2]]]))
            .collect();
        let (mean, var) = mean_var(&per_sample);
        (mean, (var / per_sample.len() as f64).sqrt())
    }
}

/// Information matrix of one release at `theta` under `iv` and `privacy`.
/// Outer sample `j` uses stream `(FimOuter, 0, j)`.
pub fn fim_estimate<M: LocationScaleFamily>(
    model: &M,
    theta: Theta,
    iv: &TruncationInterval,
    privacy: PrivacyParams,
    cfg: &FimConfig,
    seeds: &SeedTree,
) -> Result<FimEstimate> {
    cfg.validate()?;
    let scores: Vec<ScoreEstimate> = (0..cfg.outer)
        .into_par_iter()
        .map(|j| OuterDraw::generate(model, cfg.inner, seeds, j).score(model, theta, iv, privacy))
        .collect();
    Ok(FimEstimate::from_scores(&scores))
}
