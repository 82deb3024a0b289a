//! Comparison methods: SMC with a constant interval, and an MCMC sampler
//! that conditions on the whole batch of releases at once.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::harness::{run_sequential, IntervalPolicy, PopulationSource, SequentialRun};
use crate::model::{LocationScaleFamily, Prior, Theta};
use crate::numeric::mean_var;
use crate::privacy::{truncate, PrivacyParams, ReleaseRecord, TruncationInterval};
use crate::rng::{Purpose, SeedTree};
use crate::smc::{latent_mh_step, update_theta, PosteriorSummary, SmcConfig, ThetaUpdate, XProposal};

/// SMC on `n` releases that all use `fixed_iv`. Runs the same loop as the
/// adaptive method with the interval policy swapped.
#[allow(clippy::too_many_arguments)]
pub fn run_smc_nonadaptive<M: LocationScaleFamily>(
    model: &M,
    source: &mut PopulationSource<'_, M>,
    fixed_iv: TruncationInterval,
    privacy: PrivacyParams,
    prior: &Prior,
    smc: &SmcConfig,
    n: usize,
    dump_every: usize,
    seeds: &SeedTree,
) -> Result<SequentialRun> {
    run_sequential(
        model,
        source,
        &IntervalPolicy::Fixed(fixed_iv),
        privacy,
        prior,
        smc,
        n,
        dump_every,
        seeds,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub x_proposal: XProposal,
    pub theta_update: ThetaUpdate,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            burn_in: 5_000,
            x_proposal: XProposal::ScaleMatched,
            theta_update: ThetaUpdate::Gibbs,
        }
    }
}

/// Output of [`run_batch_mcmc`]: every iterate, with the burn-in marked.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchChain {
    samples: Vec<Theta>,
    burn_in: usize,
    pub x_acceptance: f64,
}

#[derive(Serialize)]
struct ChainRow {
    iteration: usize,
    m: f64,
    c: f64,
}

impl BatchChain {
    pub fn samples(&self) -> &[Theta] {
        &self.samples
    }

    pub fn post_burn_in(&self) -> &[Theta] {
        &self.samples[self.burn_in..]
    }

    pub fn summary(&self) -> PosteriorSummary {
        let kept = self.post_burn_in();
        let (mean_m, var_m) = mean_var(&kept.iter().map(|th| th.m).collect::<Vec<_>>());
        let (mean_c, var_c) = mean_var(&kept.iter().map(|th| th.c).collect::<Vec<_>>());
        PosteriorSummary {
            mean_m,
            mean_c,
            sd_m: var_m.sqrt(),
            sd_c: var_c.sqrt(),
        }
    }

    /// CSV with columns `iteration,m,c`, one row per iterate including burn-in.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        for (i, th) in self.samples.iter().enumerate() {
            w.serialize(ChainRow {
                iteration: i + 1,
                m: th.m,
                c: th.c,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// MCMC targeting `p(theta, x_1:n | y_1:n)`. Each iteration refreshes every
/// latent `x_k` by Metropolis-Hastings, then updates theta. Latents start at
/// the clamped releases. Draws come from stream `(BatchChain, 0, 0)`.
pub fn run_batch_mcmc<M: LocationScaleFamily>(
    records: &[ReleaseRecord],
    model: &M,
    prior: &Prior,
    cfg: &BatchConfig,
    seeds: &SeedTree,
) -> Result<BatchChain> {
    if cfg.iterations <= cfg.burn_in {
        return invalid(format!(
            "iterations ({}) must exceed burn-in ({})",
            cfg.iterations, cfg.burn_in
        ));
    }
    prior.validate()?;
    let mut rng = seeds.stream(Purpose::BatchChain, 0, 0);
    let mut xs: Vec<f64> = records.iter().map(|r| truncate(r.y, &r.interval)).collect();
    let mut theta = if xs.is_empty() {
        prior.sample(&mut rng)
    } else {
        let (m, var) = mean_var(&xs);
        Theta {
            m,
            c: if var > 0.0 { var.sqrt() } else { 1.0 },
        }
    };
    let mut samples = Vec::with_capacity(cfg.iterations);
    let mut accepted = 0u64;
    for _ in 0..cfg.iterations {
        for (x, rec) in xs.iter_mut().zip(records) {
            let (nx, a) = latent_mh_step(model, theta, rec, *x, &cfg.x_proposal, &mut rng);
            *x = nx;
            accepted += a as u64;
        }
        theta = update_theta(model, prior, theta, &xs, cfg.theta_update, &mut rng)?.0;
        samples.push(theta);
    }
    let proposed = (cfg.iterations * records.len()) as f64;
    Ok(BatchChain {
        samples,
        burn_in: cfg.burn_in,
        x_acceptance: accepted as f64 / proposed,
    })
}
