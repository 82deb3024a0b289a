//! Choosing truncation intervals.
//!
//! The information-maximizing interval for the standardized family is found
//! once on a grid of `(a, b)`. Because the release model is location-scale
//! equivariant, the interval for any `theta = (m, c)` is the transported
//! `[a c + m, b c + m]`, and Thompson sampling picks `theta` from the
//! current posterior at each step.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fisher::{FimConfig, OuterDraws, ScoreFunction};
use crate::model::{LocationScaleFamily, Prior, Theta};
use crate::numeric::quantile;
use crate::privacy::{PrivacyParams, TruncationInterval};
use crate::rng::{Purpose, SeedTree};
use crate::smc::ParticleSystem;

/// Evenly spaced values `lo, ..., hi`, used for both interval endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.points < 2 {
            return invalid(format!("grid needs at least 2 points, got {}", self.points));
        }
        if !(self.lo < self.hi && self.lo.is_finite() && self.hi.is_finite()) {
            return invalid(format!(
                "grid bounds must satisfy lo < hi, got [{}, {}]",
                self.lo, self.hi
            ));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let step = (self.hi - self.lo) / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| {
                if i + 1 == self.points {
                    self.hi
                } else {
                    self.lo + step * i as f64
                }
            })
            .collect()
    }

    /// The same grid mapped through `u -> u c + m`.
    pub fn transported(&self, theta: Theta) -> GridSpec {
        GridSpec {
            lo: theta.transport(self.lo),
            hi: theta.transport(self.hi),
            points: self.points,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub grid: GridSpec,
    pub fim: FimConfig,
    pub score: ScoreFunction,
    /// Search only intervals of the form `[-h, h]`.
    pub symmetric: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl AdaptConfig {
    /// Sized for a quick run on a laptop.
    pub fn desk() -> Self {
        Self {
            grid: GridSpec {
                lo: -2.0,
                hi: 2.0,
                points: 25,
            },
            fim: FimConfig {
                outer: 500,
                inner: 2000,
            },
            score: ScoreFunction::Entry(0, 0),
            symmetric: false,
        }
    }

    /// Full resolution: 50 x 50 over `[-3, 3]`, `M = 1000`, `Ng = 10000`.
    pub fn full_scale() -> Self {
        Self {
            grid: GridSpec {
                lo: -3.0,
                hi: 3.0,
                points: 50,
            },
            fim: FimConfig {
                outer: 1000,
                inner: 10_000,
            },
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.fim.validate()?;
        self.score.validate()
    }
}

/// Interval for the standardized family, `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseInterval {
    pub a: f64,
    pub b: f64,
}

impl BaseInterval {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        TruncationInterval::new(a, b)?;
        Ok(Self { a, b })
    }
}

/// Transports the base interval to `theta`.
pub fn next_interval(base: BaseInterval, theta: Theta) -> TruncationInterval {
    TruncationInterval::new(theta.transport(base.a), theta.transport(base.b)).expect("transport with c > 0 keeps a < b")
}

/// Draws `theta` from the posterior and transports the base interval to it.
pub fn thompson_select<R: Rng + ?Sized>(
    system: &ParticleSystem,
    base: BaseInterval,
    rng: &mut R,
) -> TruncationInterval {
    next_interval(base, system.posterior_sample(rng))
}

/// Interval for the first release: the 1% quantile of `m - 3c` and the 99%
/// quantile of `m + 3c` over 1000 prior draws.
pub fn initial_interval(prior: &Prior, seeds: &SeedTree) -> Result<TruncationInterval> {
    prior.validate()?;
    let mut rng = seeds.stream(Purpose::InitialInterval, 0, 0);
    let draws: Vec<Theta> = (0..1000).map(|_| prior.sample(&mut rng)).collect();
    let lows: Vec<f64> = draws.iter().map(|th| th.m - 3.0 * th.c).collect();
    let highs: Vec<f64> = draws.iter().map(|th| th.m + 3.0 * th.c).collect();
    TruncationInterval::new(quantile(&lows, 0.01), quantile(&highs, 0.99))
}

/// One evaluated grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub a: f64,
    pub b: f64,
    pub score: f64,
    pub stderr: f64,
    pub degenerate: usize,
}

/// Scores over a grid of intervals and the selected maximizer.
#[derive(Debug, Clone, PartialEq)]
pub struct FimGridResult {
    cells: Vec<GridCell>,
    best: usize,
}

/// Larger score wins; ties go to the narrower, then the more centered interval.
fn better(x: &GridCell, y: &GridCell) -> bool {
    let key = |c: &GridCell| (c.b - c.a, (c.a + c.b).abs(), c.a, c.b);
    match x.score.total_cmp(&y.score) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => {
            let (kx, ky) = (key(x), key(y));
            kx.0.total_cmp(&ky.0)
                .then(kx.1.total_cmp(&ky.1))
                .then(kx.2.total_cmp(&ky.2))
                .then(kx.3.total_cmp(&ky.3))
                .is_lt()
        }
    }
}

impl FimGridResult {
    pub fn from_cells(cells: Vec<GridCell>) -> Result<Self> {
        let mut best: Option<usize> = None;
        for (i, c) in cells.iter().enumerate() {
            if !c.score.is_finite() {
                continue;
            }
            if best.is_none_or(|b| better(c, &cells[b])) {
                best = Some(i);
            }
        }
        match best {
            Some(best) => Ok(Self { cells, best }),
            None if cells.is_empty() => invalid("the grid has no cell with a < b"),
            None => Err(Error::Numeric("no grid cell has a finite score".into())),
        }
    }

    pub fn cells(&self) -> &[GridCell] {
        &self.cells
    }

    pub fn best(&self) -> &GridCell {
        &self.cells[self.best]
    }

    pub fn argmax(&self) -> BaseInterval {
        let c = self.best();
        BaseInterval { a: c.a, b: c.b }
    }

    /// Writes `a,b,score,stderr,degenerate` rows and a trailing
    /// `# argmax a=..,b=..` line.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        {
            let mut w = csv::Writer::from_writer(&mut out);
            for c in &self.cells {
                w.serialize(c)?;
            }
            w.flush()?;
        }
        let best = self.best();
        writeln!(out, "# argmax a={},b={}", best.a, best.b)?;
        out.flush()?;
        Ok(())
    }

    /// Reads a file written by [`write_csv`](Self::write_csv). The argmax is
    /// recomputed from the rows.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let body: String = reader
            .lines()
            .filter(|l| l.as_ref().map_or(true, |l| !l.starts_with('#')))
            .map(|l| l.map(|l| l + "\n"))
            .collect::<std::io::Result<_>>()?;
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let cells = r
            .deserialize()
            .collect::<std::result::Result<Vec<GridCell>, _>>()
            .map_err(|e| Error::Schema {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        Self::from_cells(cells)
    }
}

fn candidate_pairs(lo: &[f64], hi: &[f64], symmetric: bool) -> Vec<(f64, f64)> {
    let n = lo.len();
    let mut pairs = Vec::new();
    for (i, &a) in lo.iter().enumerate() {
        for (j, &b) in hi.iter().enumerate() {
            if a >= b || (symmetric && i + j + 1 != n) {
                continue;
            }
            pairs.push((a, b));
        }
    }
    pairs
}

fn evaluate_grid<M: LocationScaleFamily>(
    model: &M,
    theta: Theta,
    privacy: PrivacyParams,
    pairs: &[(f64, f64)],
    cfg: &AdaptConfig,
    seeds: &SeedTree,
) -> Result<FimGridResult> {
    // every cell sees the same outer draws, so score differences between
    // cells are not swamped by independent Monte Carlo noise
    let draws = OuterDraws::generate(model, &cfg.fim, seeds)?;
    let cells: Vec<GridCell> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let iv = TruncationInterval::new(a, b).expect("pairs satisfy a < b");
            let est = draws.fim(model, theta, &iv, privacy);
            let (score, stderr) = est.score(&cfg.score);
            GridCell {
                a,
                b,
                score,
                stderr,
                degenerate: est.degenerate,
            }
        })
        .collect();
    FimGridResult::from_cells(cells)
}

/// Grid search for the base interval maximizing the score of the information
/// matrix at `theta = (0, 1)`.
pub fn optimize_base_interval<M: LocationScaleFamily>(
    model: &M,
    privacy: PrivacyParams,
    cfg: &AdaptConfig,
    seeds: &SeedTree,
) -> Result<FimGridResult> {
    cfg.validate()?;
    let values = cfg.grid.values();
    let pairs = candidate_pairs(&values, &values, cfg.symmetric);
    evaluate_grid(model, Theta { m: 0.0, c: 1.0 }, privacy, &pairs, cfg, seeds)
}

/// Grid search over raw `(l, r)` at an arbitrary `theta`, without using the
/// transport shortcut. `cfg.grid` is interpreted in data units.
pub fn optimize_interval_generic<M: LocationScaleFamily>(
    model: &M,
    theta: Theta,
    privacy: PrivacyParams,
    cfg: &AdaptConfig,
    seeds: &SeedTree,
) -> Result<FimGridResult> {
    cfg.validate()?;
    let values = cfg.grid.values();
    let pairs = candidate_pairs(&values, &values, false);
    evaluate_grid(model, theta, privacy, &pairs, cfg, seeds)
}
