//! Experiment configuration: a flat JSON object whose omitted keys take the
//! defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapt::{AdaptConfig, BaseInterval, GridSpec};
use crate::baselines::BatchConfig;
use crate::error::{Error, Result};
use crate::fisher::{FimConfig, ScoreFunction};
use crate::model::{Prior, Theta};
use crate::privacy::{PrivacyParams, TruncationInterval};
use crate::smc::{LatentSubset, RejuvenationConfig, Resampling, SmcConfig, ThetaUpdate, XProposal};

/// All knobs of one experiment.
///
/// | key | default |
/// |---|---|
/// | `true_m`, `true_c` | 50, sqrt(10) |
/// | `n` | 400 records |
/// | `particles` | 500 |
/// | `epsilon` | 1 |
/// | `seed` | 1 |
/// | `adaptive` | true |
/// | `fixed_l`, `fixed_r` | unset: `true_m -/+ 10 true_c` |
/// | `base_a`, `base_b` | unset: found by grid search |
/// | `grid_lo`, `grid_hi`, `grid_points` | -2, 2, 25 |
/// | `fim_outer`, `fim_inner` | 500, 2000 |
/// | `score` | `{"entry": [0, 0]}` |
/// | `symmetric_search` | false |
/// | `rejuvenation_k` | 50 (0 refreshes every latent) |
/// | `x_proposal_sd` | unset: the particle's own `c` |
/// | `theta_update` | `"gibbs"` |
/// | `replications` | 10 |
/// | `dump_every` | 20 |
/// | `batch_iterations`, `batch_burn_in` | 20000, 5000 |
/// | `prior_mu_mean`, `prior_mu_var` | 0, 1e4 |
/// | `prior_sigma2_shape`, `prior_sigma2_scale` | 1, 1 |
/// | `out_dir` | `out` |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub true_m: f64,
    pub true_c: f64,
    pub n: usize,
    pub particles: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub adaptive: bool,
    pub fixed_l: Option<f64>,
    pub fixed_r: Option<f64>,
    pub base_a: Option<f64>,
    pub base_b: Option<f64>,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_points: usize,
    pub fim_outer: usize,
    pub fim_inner: usize,
    pub score: ScoreFunction,
    pub symmetric_search: bool,
    pub rejuvenation_k: usize,
    pub x_proposal_sd: Option<f64>,
    pub theta_update: ThetaUpdate,
    pub replications: usize,
    pub dump_every: usize,
    pub batch_iterations: usize,
    pub batch_burn_in: usize,
    pub prior_mu_mean: f64,
    pub prior_mu_var: f64,
    pub prior_sigma2_shape: f64,
    pub prior_sigma2_scale: f64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let adapt = AdaptConfig::desk();
        let prior = Prior::default();
        Self {
            true_m: 50.0,
            true_c: 10f64.sqrt(),
            n: 400,
            particles: 500,
            epsilon: 1.0,
            seed: 1,
            adaptive: true,
            fixed_l: None,
            fixed_r: None,
            base_a: None,
            base_b: None,
            grid_lo: adapt.grid.lo,
            grid_hi: adapt.grid.hi,
            grid_points: adapt.grid.points,
            fim_outer: adapt.fim.outer,
            fim_inner: adapt.fim.inner,
            score: adapt.score,
            symmetric_search: false,
            rejuvenation_k: 50,
            x_proposal_sd: None,
            theta_update: ThetaUpdate::Gibbs,
            replications: 10,
            dump_every: 20,
            batch_iterations: 20_000,
            batch_burn_in: 5_000,
            prior_mu_mean: prior.mu_mean,
            prior_mu_var: prior.mu_var,
            prior_sigma2_shape: prior.sigma2_shape,
            prior_sigma2_scale: prior.sigma2_scale,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON object; missing keys keep their defaults.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Switches to the full-size constants: 1000 records and particles, a
    /// 50 x 50 grid over [-3, 3] and `M = 1000`, `Ng = 10000`.
    pub fn full_scale(mut self) -> Self {
        let adapt = AdaptConfig::full_scale();
        self.n = 1000;
        self.particles = 1000;
        self.grid_lo = adapt.grid.lo;
        self.grid_hi = adapt.grid.hi;
        self.grid_points = adapt.grid.points;
        self.fim_outer = adapt.fim.outer;
        self.fim_inner = adapt.fim.inner;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::Config(msg)) };
        check(self.n >= 1, "n must be at least 1".into())?;
        check(
            self.particles >= 2,
            format!("particles must be at least 2, got {}", self.particles),
        )?;
        check(self.replications >= 1, "replications must be at least 1".into())?;
        check(
            self.epsilon > 0.0 && self.epsilon.is_finite(),
            format!("epsilon must be positive, got {}", self.epsilon),
        )?;
        check(
            self.true_m.is_finite() && self.true_c > 0.0 && self.true_c.is_finite(),
            "true_c must be positive and true_m finite".into(),
        )?;
        check(
            self.batch_iterations > self.batch_burn_in,
            "batch_iterations must exceed batch_burn_in".into(),
        )?;
        check(
            self.fixed_l.is_some() == self.fixed_r.is_some(),
            "set both fixed_l and fixed_r or neither".into(),
        )?;
        check(
            self.base_a.is_some() == self.base_b.is_some(),
            "set both base_a and base_b or neither".into(),
        )?;
        let to_config = |e: Error| Error::Config(e.to_string());
        self.fixed_interval().map_err(to_config)?;
        self.base_interval().map_err(to_config)?;
        self.prior().validate().map_err(to_config)?;
        self.adapt_config().validate().map_err(to_config)?;
        self.smc_config().validate().map_err(to_config)?;
        Ok(())
    }

    pub fn true_theta(&self) -> Theta {
        Theta {
            m: self.true_m,
            c: self.true_c,
        }
    }

    pub fn privacy(&self) -> Result<PrivacyParams> {
        PrivacyParams::new(self.epsilon)
    }

    pub fn prior(&self) -> Prior {
        Prior {
            mu_mean: self.prior_mu_mean,
            mu_var: self.prior_mu_var,
            sigma2_shape: self.prior_sigma2_shape,
            sigma2_scale: self.prior_sigma2_scale,
        }
    }

    /// The interval of the non-adaptive run, `true_m -/+ 10 true_c` unless set.
    pub fn fixed_interval(&self) -> Result<TruncationInterval> {
        match (self.fixed_l, self.fixed_r) {
            (Some(l), Some(r)) => TruncationInterval::new(l, r),
            _ => TruncationInterval::new(self.true_m - 10.0 * self.true_c, self.true_m + 10.0 * self.true_c),
        }
    }

    pub fn base_interval(&self) -> Result<Option<BaseInterval>> {
        match (self.base_a, self.base_b) {
            (Some(a), Some(b)) => BaseInterval::new(a, b).map(Some),
            _ => Ok(None),
        }
    }

    pub fn adapt_config(&self) -> AdaptConfig {
        AdaptConfig {
            grid: GridSpec {
                lo: self.grid_lo,
                hi: self.grid_hi,
                points: self.grid_points,
            },
            fim: FimConfig {
                outer: self.fim_outer,
                inner: self.fim_inner,
            },
            score: self.score,
            symmetric: self.symmetric_search,
        }
    }

    pub fn smc_config(&self) -> SmcConfig {
        SmcConfig {
            particles: self.particles,
            rejuvenation: RejuvenationConfig {
                subset: if self.rejuvenation_k == 0 {
                    LatentSubset::All
                } else {
                    LatentSubset::Count(self.rejuvenation_k)
                },
                x_proposal: match self.x_proposal_sd {
                    Some(sd) => XProposal::Fixed { sd },
                    None => XProposal::ScaleMatched,
                },
                theta_update: self.theta_update,
            },
            resampling: Resampling::Multinomial,
            ess_threshold: None,
        }
    }

    pub fn batch_config(&self) -> BatchConfig {
        BatchConfig {
            iterations: self.batch_iterations,
            burn_in: self.batch_burn_in,
            x_proposal: self.smc_config().rejuvenation.x_proposal,
            theta_update: self.theta_update,
        }
    }
}
