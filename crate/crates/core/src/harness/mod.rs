//! End-to-end experiments: simulate a population, release each record through
//! its truncation interval, update the particle posterior and pick the next
//! interval. Also runs the baselines side by side over replications.

mod config;
pub mod plot;

pub use config::ExperimentConfig;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{initial_interval, optimize_base_interval, thompson_select, BaseInterval};
use crate::baselines::run_batch_mcmc;
use crate::error::{invalid, Error, Result};
use crate::model::{LocationScaleFamily, Normal, Prior, Theta};
use crate::numeric::{median, quantile};
use crate::privacy::{release_with_noise, sample_laplace, PrivacyParams, ReleaseRecord, TruncationInterval};
use crate::rng::{Purpose, SeedTree};
use crate::smc::{ParticleSystem, SmcConfig};

/// Simulated population. Raw values are drawn only inside [`release`](Self::release),
/// after the interval for that record is fixed, and never leave it.
pub struct PopulationSource<'a, M> {
    model: &'a M,
    theta: Theta,
    seeds: SeedTree,
    released: usize,
}

impl<'a, M: LocationScaleFamily> PopulationSource<'a, M> {
    /// Record `t` uses streams `(Population, t, 0)` and `(ReleaseNoise, t, 0)`,
    /// so every method run on the same seed sees the same raw data.
    pub fn new(model: &'a M, theta: Theta, seeds: SeedTree) -> Self {
        Self {
            model,
            theta,
            seeds,
            released: 0,
        }
    }

    /// Number of records released so far.
    pub fn released(&self) -> usize {
        self.released
    }

    /// Draws record `t` and releases it through `iv`. Records must be
    /// requested in order `1, 2, ...`.
    pub fn release(&mut self, t: usize, iv: TruncationInterval, privacy: PrivacyParams) -> Result<ReleaseRecord> {
        if t != self.released + 1 {
            return invalid(format!("record {t} requested after {} releases", self.released));
        }
        let x = self
            .model
            .population_sample(self.theta, &mut self.seeds.stream(Purpose::Population, t as u64, 0));
        let v = sample_laplace(
            1.0 / privacy.epsilon(),
            &mut self.seeds.stream(Purpose::ReleaseNoise, t as u64, 0),
        );
        self.released = t;
        Ok(release_with_noise(x, iv, privacy, t, v))
    }
}

/// How the interval of each record is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum IntervalPolicy {
    /// Thompson sampling with a base interval; the first record uses the
    /// prior-based initial interval.
    Adaptive(BaseInterval),
    Fixed(TruncationInterval),
    /// Record `t` uses entry `t - 1`.
    Schedule(Vec<TruncationInterval>),
}

/// One row of the per-step trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub posterior_mean_m: f64,
    pub posterior_mean_c: f64,
    pub posterior_sd_m: f64,
    pub l: f64,
    pub r: f64,
    pub ess: f64,
}

/// One particle in a periodic dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleRow {
    pub t: usize,
    pub i: usize,
    pub m: f64,
    pub c: f64,
    pub weight: f64,
}

/// Everything produced by [`run_sequential`].
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialRun {
    pub system: ParticleSystem,
    pub trace: Vec<TraceRow>,
    pub particle_rows: Vec<ParticleRow>,
}

impl SequentialRun {
    pub fn releases(&self) -> &[ReleaseRecord] {
        self.system.records()
    }

    /// The intervals actually used, usable as an [`IntervalPolicy::Schedule`].
    pub fn intervals(&self) -> Vec<TruncationInterval> {
        self.releases().iter().map(|r| r.interval).collect()
    }
}

fn dump(system: &ParticleSystem, rows: &mut Vec<ParticleRow>) {
    let t = system.t();
    rows.extend(
        system
            .particles()
            .iter()
            .zip(system.weights())
            .enumerate()
            .map(|(i, (p, &weight))| ParticleRow {
                t,
                i,
                m: p.theta.m,
                c: p.theta.c,
                weight,
            }),
    );
}

/// The online loop shared by every SMC method: choose the interval, release,
/// assimilate. Particles are dumped every `dump_every` steps (0 disables) and
/// always after the last step.
#[allow(clippy::too_many_arguments)]
pub fn run_sequential<M: LocationScaleFamily>(
    model: &M,
    source: &mut PopulationSource<'_, M>,
    policy: &IntervalPolicy,
    privacy: PrivacyParams,
    prior: &Prior,
    smc: &SmcConfig,
    n: usize,
    dump_every: usize,
    seeds: &SeedTree,
) -> Result<SequentialRun> {
    smc.validate()?;
    if let IntervalPolicy::Schedule(s) = policy {
        if s.len() < n {
            return invalid(format!("interval schedule has {} entries for {n} records", s.len()));
        }
    }
    let mut system = ParticleSystem::init(prior, smc.particles, seeds)?;
    let mut trace = Vec::with_capacity(n);
    let mut particle_rows = Vec::new();
    let mut iv = match policy {
        IntervalPolicy::Adaptive(_) => initial_interval(prior, seeds)?,
        IntervalPolicy::Fixed(iv) => *iv,
        IntervalPolicy::Schedule(s) if n > 0 => s[0],
        IntervalPolicy::Schedule(_) => {
            return Ok(SequentialRun {
                system,
                trace,
                particle_rows,
            })
        }
    };
    for t in 1..=n {
        // iv was chosen from y_1:t-1 only; x_t is drawn inside release
        let record = source.release(t, iv, privacy)?;
        system.smc_step(record, model, prior, smc, seeds)?;
        let s = system.summary();
        trace.push(TraceRow {
            t,
            posterior_mean_m: s.mean_m,
            posterior_mean_c: s.mean_c,
            posterior_sd_m: s.sd_m,
            l: iv.l(),
            r: iv.r(),
            ess: system.diagnostics().last_ess,
        });
        if (dump_every > 0 && t % dump_every == 0) || t == n {
            dump(&system, &mut particle_rows);
        }
        if t < n {
            iv = match policy {
                IntervalPolicy::Adaptive(base) => {
                    thompson_select(&system, *base, &mut seeds.stream(Purpose::Thompson, t as u64, 0))
                }
                IntervalPolicy::Fixed(iv) => *iv,
                IntervalPolicy::Schedule(s) => s[t],
            };
        }
    }
    if n == 0 {
        dump(&system, &mut particle_rows);
    }
    Ok(SequentialRun {
        system,
        trace,
        particle_rows,
    })
}

/// Method label used in file names and summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Adaptive,
    Nonadaptive,
    Batch,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Adaptive => "adaptive",
            Method::Nonadaptive => "nonadaptive",
            Method::Batch => "batch",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// File stem `{method}_eps{epsilon}_seed{seed}`.
pub fn file_stem(method: Method, epsilon: f64, seed: u64) -> String {
    format!("{method}_eps{epsilon}_seed{seed}")
}

/// Final state of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub epsilon: f64,
    pub seed: u64,
    pub n: usize,
    pub mean_m: f64,
    pub mean_c: f64,
    pub sd_m: f64,
    pub sd_c: f64,
    pub abs_error_m: f64,
    pub abs_error_c: f64,
    pub base_a: Option<f64>,
    pub base_b: Option<f64>,
    pub weight_fallbacks: u64,
    pub x_acceptance: f64,
}

/// In-memory results of a run, written by [`RunArtifacts::write`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub trace: Vec<TraceRow>,
    pub releases: Vec<ReleaseRecord>,
    pub particle_rows: Vec<ParticleRow>,
}

/// Paths written for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFiles {
    /// Absent for the batch method, which has no per-step trace.
    pub trace: Option<PathBuf>,
    pub releases: PathBuf,
    pub particles: Option<PathBuf>,
    pub summary: PathBuf,
}

pub(crate) fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

impl RunArtifacts {
    pub fn write(&self, dir: &Path) -> Result<RunFiles> {
        std::fs::create_dir_all(dir)?;
        let stem = file_stem(self.summary.method, self.summary.epsilon, self.summary.seed);
        let sequential = self.summary.method != Method::Batch;
        let files = RunFiles {
            trace: sequential.then(|| dir.join(format!("{stem}_trace.csv"))),
            releases: dir.join(format!("{stem}_releases.csv")),
            particles: sequential.then(|| dir.join(format!("{stem}_particles.csv"))),
            summary: dir.join(format!("{stem}_summary.json")),
        };
        if let Some(path) = &files.trace {
            write_csv_rows(
                path,
                &self.trace,
                &[
                    "t",
                    "posterior_mean_m",
                    "posterior_mean_c",
                    "posterior_sd_m",
                    "l",
                    "r",
                    "ess",
                ],
            )?;
        }
        if let Some(path) = &files.particles {
            write_csv_rows(path, &self.particle_rows, &["t", "i", "m", "c", "weight"])?;
        }
        let rows: Vec<_> = self.releases.iter().map(|r| r.to_row()).collect();
        write_csv_rows(&files.releases, &rows, &["t", "y", "l", "r", "epsilon"])?;
        let mut text = serde_json::to_string_pretty(&self.summary)?;
        text.push('\n');
        std::fs::write(&files.summary, text)?;
        Ok(files)
    }
}

/// Base interval from the config, or a grid search seeded from `(Grid, 0)`.
pub fn resolve_base_interval(cfg: &ExperimentConfig) -> Result<BaseInterval> {
    if let Some(base) = cfg.base_interval()? {
        return Ok(base);
    }
    let seeds = SeedTree::new(cfg.seed).child(Purpose::Grid, 0);
    let grid = optimize_base_interval(&Normal, cfg.privacy()?, &cfg.adapt_config(), &seeds)?;
    log::info!("base interval for epsilon {}: {:?}", cfg.epsilon, grid.argmax());
    Ok(grid.argmax())
}

fn summarize(cfg: &ExperimentConfig, method: Method, n: usize, s: crate::smc::PosteriorSummary) -> RunSummary {
    RunSummary {
        method,
        epsilon: cfg.epsilon,
        seed: cfg.seed,
        n,
        mean_m: s.mean_m,
        mean_c: s.mean_c,
        sd_m: s.sd_m,
        sd_c: s.sd_c,
        abs_error_m: (s.mean_m - cfg.true_m).abs(),
        abs_error_c: (s.mean_c - cfg.true_c).abs(),
        base_a: None,
        base_b: None,
        weight_fallbacks: 0,
        x_acceptance: f64::NAN,
    }
}

fn run_smc_method(cfg: &ExperimentConfig, policy: IntervalPolicy, method: Method, n: usize) -> Result<RunArtifacts> {
    let seeds = SeedTree::new(cfg.seed);
    let mut source = PopulationSource::new(&Normal, cfg.true_theta(), seeds);
    let run = run_sequential(
        &Normal,
        &mut source,
        &policy,
        cfg.privacy()?,
        &cfg.prior(),
        &cfg.smc_config(),
        n,
        cfg.dump_every,
        &seeds,
    )?;
    let mut summary = summarize(cfg, method, n, run.system.summary());
    if let IntervalPolicy::Adaptive(base) = policy {
        summary.base_a = Some(base.a);
        summary.base_b = Some(base.b);
    }
    summary.weight_fallbacks = run.system.diagnostics().weight_fallbacks;
    summary.x_acceptance = run.system.diagnostics().moves.x_acceptance();
    Ok(RunArtifacts {
        summary,
        releases: run.releases().to_vec(),
        trace: run.trace,
        particle_rows: run.particle_rows,
    })
}

/// Adaptive SMC on `cfg.n` simulated records.
pub fn run_adaptive_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    run_adaptive_with_n(cfg, cfg.n)
}

/// Like [`run_adaptive_experiment`] but allows `n = 0`, which returns the
/// initialized (prior) system.
pub fn run_adaptive_with_n(cfg: &ExperimentConfig, n: usize) -> Result<RunArtifacts> {
    cfg.validate()?;
    let base = resolve_base_interval(cfg)?;
    run_smc_method(cfg, IntervalPolicy::Adaptive(base), Method::Adaptive, n)
}

/// SMC with the constant interval from the config.
pub fn run_nonadaptive_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    run_smc_method(
        cfg,
        IntervalPolicy::Fixed(cfg.fixed_interval()?),
        Method::Nonadaptive,
        cfg.n,
    )
}

/// Batch MCMC on given records, or on the records the non-adaptive run would
/// release when `records` is `None`.
pub fn run_batch_experiment(
    cfg: &ExperimentConfig,
    records: Option<&[ReleaseRecord]>,
) -> Result<(RunArtifacts, crate::baselines::BatchChain)> {
    cfg.validate()?;
    let seeds = SeedTree::new(cfg.seed);
    let generated;
    let records = match records {
        Some(r) => r,
        None => {
            let mut source = PopulationSource::new(&Normal, cfg.true_theta(), seeds);
            let iv = cfg.fixed_interval()?;
            let privacy = cfg.privacy()?;
            generated = (1..=cfg.n)
                .map(|t| source.release(t, iv, privacy))
                .collect::<Result<Vec<_>>>()?;
            &generated
        }
    };
    let chain = run_batch_mcmc(records, &Normal, &cfg.prior(), &cfg.batch_config(), &seeds)?;
    let mut summary = summarize(cfg, Method::Batch, records.len(), chain.summary());
    summary.x_acceptance = chain.x_acceptance;
    let artifacts = RunArtifacts {
        summary,
        trace: vec![],
        releases: records.to_vec(),
        particle_rows: vec![],
    };
    Ok((artifacts, chain))
}

/// One row of the replication table. Failed runs carry NaN values and the
/// error message in `status`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub method: Method,
    pub epsilon: f64,
    pub replication: usize,
    pub seed: u64,
    pub mean_m: f64,
    pub mean_c: f64,
    pub abs_error_m: f64,
    pub abs_error_c: f64,
    pub status: String,
}

/// Median and quartiles per method and epsilon, over successful runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub epsilon: f64,
    pub runs: usize,
    pub failures: usize,
    pub median_abs_error_m: f64,
    pub q1_mean_m: f64,
    pub median_mean_m: f64,
    pub q3_mean_m: f64,
    pub median_abs_error_c: f64,
    pub q1_mean_c: f64,
    pub median_mean_c: f64,
    pub q3_mean_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationTable {
    pub rows: Vec<ReplicationRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl ReplicationTable {
    pub fn aggregate(&self, method: Method, epsilon: f64) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.epsilon == epsilon)
    }

    /// Writes `replicate_seed{seed}_runs.csv` and `replicate_seed{seed}_summary.csv`.
    pub fn write(&self, dir: &Path, seed: u64) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let runs = dir.join(format!("replicate_seed{seed}_runs.csv"));
        let summary = dir.join(format!("replicate_seed{seed}_summary.csv"));
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&runs)?));
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&summary)?));
        for a in &self.aggregates {
            w.serialize(a)?;
        }
        w.flush()?;
        Ok((runs, summary))
    }
}

fn row_from(method: Method, epsilon: f64, replication: usize, seed: u64, r: Result<RunSummary>) -> ReplicationRow {
    match r {
        Ok(s) => ReplicationRow {
            method,
            epsilon,
            replication,
            seed,
            mean_m: s.mean_m,
            mean_c: s.mean_c,
            abs_error_m: s.abs_error_m,
            abs_error_c: s.abs_error_c,
            status: "ok".into(),
        },
        Err(e) => {
            log::warn!("{method} run {replication} at epsilon {epsilon} failed: {e}");
            ReplicationRow {
                method,
                epsilon,
                replication,
                seed,
                mean_m: f64::NAN,
                mean_c: f64::NAN,
                abs_error_m: f64::NAN,
                abs_error_c: f64::NAN,
                status: format!("failed: {e}"),
            }
        }
    }
}

fn aggregate_rows(rows: &[ReplicationRow], method: Method, epsilon: f64) -> AggregateRow {
    let ok: Vec<&ReplicationRow> = rows
        .iter()
        .filter(|r| r.method == method && r.epsilon == epsilon && r.status == "ok")
        .collect();
    let total = rows
        .iter()
        .filter(|r| r.method == method && r.epsilon == epsilon)
        .count();
    let col = |f: fn(&ReplicationRow) -> f64| -> Vec<f64> { ok.iter().map(|r| f(r)).collect() };
    let stat = |v: &[f64], q: f64| if v.is_empty() { f64::NAN } else { quantile(v, q) };
    let (err_m, mean_m, err_c, mean_c) = (
        col(|r| r.abs_error_m),
        col(|r| r.mean_m),
        col(|r| r.abs_error_c),
        col(|r| r.mean_c),
    );
    AggregateRow {
        method,
        epsilon,
        runs: ok.len(),
        failures: total - ok.len(),
        median_abs_error_m: if err_m.is_empty() { f64::NAN } else { median(&err_m) },
        q1_mean_m: stat(&mean_m, 0.25),
        median_mean_m: stat(&mean_m, 0.5),
        q3_mean_m: stat(&mean_m, 0.75),
        median_abs_error_c: if err_c.is_empty() { f64::NAN } else { median(&err_c) },
        q1_mean_c: stat(&mean_c, 0.25),
        median_mean_c: stat(&mean_c, 0.5),
        q3_mean_c: stat(&mean_c, 0.75),
    }
}

/// Runs the three methods `cfg.replications` times for each epsilon.
/// Replication `k` uses the seed of `(Replication, k)` under `cfg.seed` for
/// all methods, and the batch sampler sees the non-adaptive run's records.
/// The base interval is searched once per epsilon unless set in `cfg`.
pub fn run_replications(cfg: &ExperimentConfig, epsilons: &[f64]) -> Result<ReplicationTable> {
    cfg.validate()?;
    if epsilons.is_empty() {
        return Err(Error::Config("no epsilon values given".into()));
    }
    let master = SeedTree::new(cfg.seed);
    let mut rows = Vec::new();
    for &epsilon in epsilons {
        let eps_cfg = ExperimentConfig { epsilon, ..cfg.clone() };
        eps_cfg.validate()?;
        let base = resolve_base_interval(&eps_cfg)?;
        let per_rep: Vec<Vec<ReplicationRow>> = (0..cfg.replications)
            .into_par_iter()
            .map(|k| {
                let seed = master.child(Purpose::Replication, k as u64).master();
                let run_cfg = ExperimentConfig {
                    seed,
                    base_a: Some(base.a),
                    base_b: Some(base.b),
                    ..eps_cfg.clone()
                };
                let adaptive = run_smc_method(&run_cfg, IntervalPolicy::Adaptive(base), Method::Adaptive, run_cfg.n);
                let fixed = run_cfg
                    .fixed_interval()
                    .and_then(|iv| run_smc_method(&run_cfg, IntervalPolicy::Fixed(iv), Method::Nonadaptive, run_cfg.n));
                let batch = match &fixed {
                    Ok(f) => run_batch_experiment(&run_cfg, Some(&f.releases)).map(|(a, _)| a.summary),
                    Err(_) => run_batch_experiment(&run_cfg, None).map(|(a, _)| a.summary),
                };
                vec![
                    row_from(Method::Adaptive, epsilon, k, seed, adaptive.map(|a| a.summary)),
                    row_from(Method::Nonadaptive, epsilon, k, seed, fixed.map(|a| a.summary)),
                    row_from(Method::Batch, epsilon, k, seed, batch),
                ]
            })
            .collect();
        rows.extend(per_rep.into_iter().flatten());
    }
    let mut aggregates = Vec::new();
    for &epsilon in epsilons {
        for method in [Method::Adaptive, Method::Nonadaptive, Method::Batch] {
            aggregates.push(aggregate_rows(&rows, method, epsilon));
        }
    }
    Ok(ReplicationTable { rows, aggregates })
}

/// Reads a `t,y,l,r,epsilon` release file.
pub fn read_releases(path: &Path) -> Result<Vec<ReleaseRecord>> {
    let schema = |message: String| Error::Schema {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path)?;
    let mut records = Vec::new();
    for row in reader.deserialize::<crate::privacy::ReleaseRow>() {
        let row = row.map_err(|e| schema(e.to_string()))?;
        records.push(ReleaseRecord::try_from(row).map_err(|e| schema(e.to_string()))?);
    }
    for (k, r) in records.iter().enumerate() {
        if r.t != k + 1 {
            return Err(schema(format!("row {} has t = {}, expected {}", k + 1, r.t, k + 1)));
        }
    }
    Ok(records)
}
