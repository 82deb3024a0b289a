//! Resample-move sequential Monte Carlo over `(theta, x_1:t)`.
//!
//! Each step resamples, rejuvenates every particle with one MCMC sweep that
//! leaves `p(theta, x_1:t-1 | y_1:t-1)` invariant, propagates a fresh latent
//! `x_t ~ P_theta` and reweights by the Laplace release likelihood of `y_t`.
//! Particle `i` at step `t` rejuvenates from stream `(Move, t, i)` and
//! propagates from `(Propagate, t, i)`, so the per-particle loop runs in
//! parallel without changing results.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{LocationScaleFamily, Prior, Theta};
use crate::numeric::{effective_sample_size, normalize_log_weights, order_independent_sum};
use crate::privacy::ReleaseRecord;
use crate::rng::{Purpose, SeedTree};

/// One particle: a parameter value and a latent value per assimilated record.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub theta: Theta,
    pub path: Vec<f64>,
}

/// Which latent indices a rejuvenation sweep refreshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSubset {
    All,
    /// A uniformly drawn subset of `min(t, k)` indices, without replacement.
    Count(usize),
}

/// Random-walk proposal for a latent `x_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XProposal {
    /// Standard deviation equal to the particle's current scale `c`.
    ScaleMatched,
    Fixed {
        sd: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaUpdate {
    /// Closed-form conditional draw, available when the prior is conjugate.
    Gibbs,
    /// Metropolis-Hastings with a Gaussian walk on `(m, log c)`.
    RandomWalk { m_step: f64, log_c_step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejuvenationConfig {
    pub subset: LatentSubset,
    pub x_proposal: XProposal,
    pub theta_update: ThetaUpdate,
}

impl Default for RejuvenationConfig {
    fn default() -> Self {
        Self {
            subset: LatentSubset::Count(50),
            x_proposal: XProposal::ScaleMatched,
            theta_update: ThetaUpdate::Gibbs,
        }
    }
}

impl RejuvenationConfig {
    pub fn validate(&self) -> Result<()> {
        if let LatentSubset::Count(0) = self.subset {
            return invalid("latent subset size must be at least 1");
        }
        if let XProposal::Fixed { sd } = self.x_proposal {
            if !(sd > 0.0 && sd.is_finite()) {
                return invalid(format!("latent proposal sd must be positive, got {sd}"));
            }
        }
        if let ThetaUpdate::RandomWalk { m_step, log_c_step } = self.theta_update {
            if !(m_step > 0.0 && log_c_step > 0.0) {
                return invalid("random-walk step sizes must be positive");
            }
        }
        Ok(())
    }

    fn subset_len(&self, t: usize) -> usize {
        match self.subset {
            LatentSubset::All => t,
            LatentSubset::Count(k) => k.min(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    Multinomial,
    Systematic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmcConfig {
    pub particles: usize,
    pub rejuvenation: RejuvenationConfig,
    pub resampling: Resampling,
    /// Resample only when the ESS drops below this fraction of `N`.
    /// `None` resamples at every step.
    pub ess_threshold: Option<f64>,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            particles: 500,
            rejuvenation: RejuvenationConfig::default(),
            resampling: Resampling::Multinomial,
            ess_threshold: None,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return invalid(format!("need at least 2 particles, got {}", self.particles));
        }
        if let Some(f) = self.ess_threshold {
            if !(0.0..=1.0).contains(&f) {
                return invalid(format!("ESS threshold must lie in [0, 1], got {f}"));
            }
        }
        self.rejuvenation.validate()
    }
}

/// Acceptance counts from one or more rejuvenation sweeps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MoveStats {
    pub x_proposed: u64,
    pub x_accepted: u64,
    pub theta_proposed: u64,
    pub theta_accepted: u64,
}

impl MoveStats {
    fn merge(mut self, other: MoveStats) -> MoveStats {
        self.x_proposed += other.x_proposed;
        self.x_accepted += other.x_accepted;
        self.theta_proposed += other.theta_proposed;
        self.theta_accepted += other.theta_accepted;
        self
    }

    pub fn x_acceptance(&self) -> f64 {
        if self.x_proposed == 0 {
            f64::NAN
        } else {
            self.x_accepted as f64 / self.x_proposed as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SmcDiagnostics {
    /// Steps where every log-weight was non-finite and weights fell back to uniform.
    pub weight_fallbacks: u64,
    pub resample_count: u64,
    pub last_ess: f64,
    pub moves: MoveStats,
}

/// Diagnostics of a single [`ParticleSystem::smc_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub t: usize,
    pub resampled: bool,
    pub ess: f64,
    pub fallback: bool,
    pub moves: MoveStats,
}

/// Weighted posterior moments of theta.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean_m: f64,
    pub mean_c: f64,
    pub sd_m: f64,
    pub sd_c: f64,
}

/// `N` weighted particles approximating `p(theta, x_1:t | y_1:t)`, together
/// with the records assimilated so far.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    particles: Vec<Particle>,
    weights: Vec<f64>,
    records: Vec<ReleaseRecord>,
    diagnostics: SmcDiagnostics,
}

impl ParticleSystem {
    /// `n` independent prior draws with uniform weights. Particle `i` is
    /// drawn from stream `(PriorInit, 0, i)`.
    pub fn init(prior: &Prior, n: usize, seeds: &SeedTree) -> Result<Self> {
        if n < 2 {
            return invalid(format!("need at least 2 particles, got {n}"));
        }
        prior.validate()?;
        let particles = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = seeds.stream(Purpose::PriorInit, 0, i as u64);
                Particle {
                    theta: prior.sample(&mut rng),
                    path: Vec::new(),
                }
            })
            .collect();
        Ok(Self {
            particles,
            weights: vec![1.0 / n as f64; n],
            records: Vec::new(),
            diagnostics: SmcDiagnostics {
                last_ess: n as f64,
                ..Default::default()
            },
        })
    }

    /// Builds a system from explicit parts. Weights are renormalized.
    pub fn from_parts(particles: Vec<Particle>, weights: Vec<f64>, records: Vec<ReleaseRecord>) -> Result<Self> {
        if particles.len() < 2 || particles.len() != weights.len() {
            return invalid("need at least 2 particles and one weight per particle");
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return invalid("weights must be finite and nonnegative");
        }
        let total = order_independent_sum(&weights);
        if total <= 0.0 {
            return invalid("weights must not all be zero");
        }
        if particles.iter().any(|p| p.path.len() != records.len()) {
            return invalid("every latent path must have one entry per record");
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self {
            particles,
            weights,
            records,
            diagnostics: SmcDiagnostics::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Number of assimilated records.
    pub fn t(&self) -> usize {
        self.records.len()
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn records(&self) -> &[ReleaseRecord] {
        &self.records
    }

    pub fn diagnostics(&self) -> &SmcDiagnostics {
        &self.diagnostics
    }

    pub fn ess(&self) -> f64 {
        effective_sample_size(&self.weights)
    }

    /// Multinomial resampling; afterwards every weight is exactly `1/N`.
    pub fn resample_multinomial<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let dist = WeightedIndex::new(&self.weights).expect("weights are a valid distribution");
        let ancestors: Vec<usize> = (0..self.len()).map(|_| dist.sample(rng)).collect();
        self.apply_ancestors(&ancestors);
    }

    /// Systematic resampling with a single uniform offset.
    pub fn resample_systematic<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.len();
        let u0: f64 = rng.random::<f64>() / n as f64;
        let mut ancestors = Vec::with_capacity(n);
        let mut cumulative = self.weights[0];
        let mut j = 0;
        for k in 0..n {
            let u = u0 + k as f64 / n as f64;
            while u > cumulative && j < n - 1 {
                j += 1;
                cumulative += self.weights[j];
            }
            ancestors.push(j);
        }
        self.apply_ancestors(&ancestors);
    }

    fn apply_ancestors(&mut self, ancestors: &[usize]) {
        let n = self.len();
        self.particles = ancestors.iter().map(|&a| self.particles[a].clone()).collect();
        self.weights = vec![1.0 / n as f64; n];
        self.diagnostics.resample_count += 1;
    }

    /// Assimilates one record: resample, rejuvenate, propagate, reweight.
    pub fn smc_step<M: LocationScaleFamily>(
        &mut self,
        record: ReleaseRecord,
        model: &M,
        prior: &Prior,
        cfg: &SmcConfig,
        seeds: &SeedTree,
    ) -> Result<StepReport> {
        cfg.validate()?;
        check_theta_update(model, &cfg.rejuvenation)?;
        let t = self.t() + 1;
        if record.t != t {
            return invalid(format!("expected record t = {t}, got {}", record.t));
        }

        let ess = self.ess();
        let resample = match cfg.ess_threshold {
            None => true,
            Some(f) => ess < f * self.len() as f64,
        };
        if resample {
            let mut rng = seeds.stream(Purpose::Resample, t as u64, 0);
            match cfg.resampling {
                Resampling::Multinomial => self.resample_multinomial(&mut rng),
                Resampling::Systematic => self.resample_systematic(&mut rng),
            }
        }

        let history = &self.records;
        let rejuvenation = &cfg.rejuvenation;
        let results: Vec<Result<(f64, MoveStats)>> = self
            .particles
            .par_iter_mut()
            .enumerate()
            .map(|(i, particle)| {
                let mut rng = seeds.stream(Purpose::Move, t as u64, i as u64);
                let stats = rejuvenate(particle, history, model, prior, rejuvenation, &mut rng)?;
                let mut rng = seeds.stream(Purpose::Propagate, t as u64, i as u64);
                let x = model.population_sample(particle.theta, &mut rng);
                particle.path.push(x);
                Ok((record.log_likelihood(x), stats))
            })
            .collect();
        let mut log_w = Vec::with_capacity(results.len());
        let mut moves = MoveStats::default();
        for r in results {
            let (lw, s) = r?;
            log_w.push(lw);
            moves = moves.merge(s);
        }

        // Incremental weights multiply the carried ones when resampling was skipped.
        let combined: Vec<f64> = log_w.iter().zip(&self.weights).map(|(lw, w)| lw + w.ln()).collect();
        let fallback = match normalize_log_weights(&combined) {
            Some(w) => {
                self.weights = w;
                false
            }
            None => {
                log::warn!("all particle weights vanished at t = {t}; falling back to uniform weights");
                self.weights = vec![1.0 / self.len() as f64; self.len()];
                self.diagnostics.weight_fallbacks += 1;
                true
            }
        };
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric(format!("non-finite particle weight at t = {t}")));
        }
        self.records.push(record);
        self.diagnostics.last_ess = self.ess();
        self.diagnostics.moves = self.diagnostics.moves.merge(moves);
        Ok(StepReport {
            t,
            resampled: resample,
            ess: self.diagnostics.last_ess,
            fallback,
            moves,
        })
    }

    pub fn posterior_mean(&self) -> Theta {
        let s = self.summary();
        Theta {
            m: s.mean_m,
            c: s.mean_c,
        }
    }

    /// Weighted means and standard deviations of `m` and `c`. The sums do not
    /// depend on particle order.
    pub fn summary(&self) -> PosteriorSummary {
        let wsum = |f: &dyn Fn(&Theta) -> f64| -> f64 {
            let terms: Vec<f64> = self
                .particles
                .iter()
                .zip(&self.weights)
                .map(|(p, w)| w * f(&p.theta))
                .collect();
            order_independent_sum(&terms)
        };
        let mean_m = wsum(&|th| th.m);
        let mean_c = wsum(&|th| th.c);
        let var_m = wsum(&|th| (th.m - mean_m).powi(2));
        let var_c = wsum(&|th| (th.c - mean_c).powi(2));
        PosteriorSummary {
            mean_m,
            mean_c,
            sd_m: var_m.sqrt(),
            sd_c: var_c.sqrt(),
        }
    }

    /// Draws `theta^(i)` with probability `w^(i)`.
    pub fn posterior_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Theta {
        let dist = WeightedIndex::new(&self.weights).expect("weights are a valid distribution");
        self.particles[dist.sample(rng)].theta
    }
}

fn check_theta_update<M: LocationScaleFamily>(model: &M, cfg: &RejuvenationConfig) -> Result<()> {
    if cfg.theta_update == ThetaUpdate::Gibbs && !model.has_conjugate_update() {
        return Err(Error::Config(format!(
            "Gibbs theta update needs a conjugate prior; the {} family has none",
            model.name()
        )));
    }
    Ok(())
}

/// A symmetric proposal for a latent value.
pub trait LatentProposal {
    fn propose<R: Rng + ?Sized>(&self, x: f64, theta: Theta, rng: &mut R) -> f64;
}

impl LatentProposal for XProposal {
    fn propose<R: Rng + ?Sized>(&self, x: f64, theta: Theta, rng: &mut R) -> f64 {
        let sd = match *self {
            XProposal::ScaleMatched => theta.c,
            XProposal::Fixed { sd } => sd,
        };
        let z: f64 = rng.sample(StandardNormal);
        x + sd * z
    }
}

#[inline]
fn mh_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    // NaN ratios are rejected
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// One Metropolis-Hastings update of latent `x` targeting
/// `p_theta(x) Laplace(y - T(x); width / epsilon)`.
pub fn latent_mh_step<M, P, R>(
    model: &M,
    theta: Theta,
    record: &ReleaseRecord,
    x: f64,
    proposal: &P,
    rng: &mut R,
) -> (f64, bool)
where
    M: LocationScaleFamily,
    P: LatentProposal,
    R: Rng + ?Sized,
{
    let x_new = proposal.propose(x, theta, rng);
    let log_ratio = model.log_density(theta, x_new) + record.log_likelihood(x_new)
        - model.log_density(theta, x)
        - record.log_likelihood(x);
    if mh_accept(log_ratio, rng) {
        (x_new, true)
    } else {
        (x, false)
    }
}

/// One update of theta targeting `p(theta | xs)`.
pub fn update_theta<M, R>(
    model: &M,
    prior: &Prior,
    theta: Theta,
    xs: &[f64],
    update: ThetaUpdate,
    rng: &mut R,
) -> Result<(Theta, bool)>
where
    M: LocationScaleFamily,
    R: Rng + ?Sized,
{
    match update {
        ThetaUpdate::Gibbs => model
            .conjugate_update(prior, theta, xs, rng)
            .map(|th| (th, true))
            .ok_or_else(|| Error::Config(format!("no conjugate update for the {} family", model.name()))),
        ThetaUpdate::RandomWalk { m_step, log_c_step } => {
            let zm: f64 = rng.sample(StandardNormal);
            let zc: f64 = rng.sample(StandardNormal);
            let proposal = Theta {
                m: theta.m + m_step * zm,
                c: theta.c * (log_c_step * zc).exp(),
            };
            let log_post = |th: Theta| -> f64 {
                prior.log_density(th) + xs.iter().map(|&x| model.log_density(th, x)).sum::<f64>()
            };
            // the walk is symmetric in log c, so the Jacobian c'/c enters
            let log_ratio = log_post(proposal) - log_post(theta) + proposal.c.ln() - theta.c.ln();
            if mh_accept(log_ratio, rng) {
                Ok((proposal, true))
            } else {
                Ok((theta, false))
            }
        }
    }
}

/// One MCMC sweep over a particle: MH moves for a subset of latent values,
/// then one theta update. `records` are the records the path was built on.
pub fn rejuvenate<M, R>(
    particle: &mut Particle,
    records: &[ReleaseRecord],
    model: &M,
    prior: &Prior,
    cfg: &RejuvenationConfig,
    rng: &mut R,
) -> Result<MoveStats>
where
    M: LocationScaleFamily,
    R: Rng + ?Sized,
{
    if particle.path.len() != records.len() {
        return invalid(format!(
            "particle path has {} entries but {} records were given",
            particle.path.len(),
            records.len()
        ));
    }
    let t = records.len();
    let mut stats = MoveStats::default();
    let k = cfg.subset_len(t);
    let chosen: Vec<usize> = if k == t {
        (0..t).collect()
    } else {
        index::sample(rng, t, k).into_vec()
    };
    for idx in chosen {
        let (x, accepted) = latent_mh_step(
            model,
            particle.theta,
            &records[idx],
            particle.path[idx],
            &cfg.x_proposal,
            rng,
        );
        particle.path[idx] = x;
        stats.x_proposed += 1;
        stats.x_accepted += accepted as u64;
    }
    let (theta, accepted) = update_theta(model, prior, particle.theta, &particle.path, cfg.theta_update, rng)?;
    particle.theta = theta;
    stats.theta_proposed += 1;
    stats.theta_accepted += accepted as u64;
    Ok(stats)
}
