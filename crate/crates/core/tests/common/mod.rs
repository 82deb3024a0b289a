//! Quadrature oracles shared by the integration tests. Nothing here calls the
//! estimators under test; densities are written out from scratch.

#![allow(dead_code)]

use statrs::distribution::{ContinuousCDF, Normal};

pub struct Release {
    pub y: f64,
    pub l: f64,
    pub r: f64,
    pub eps: f64,
}

fn laplace(v: f64, b: f64) -> f64 {
    (-v.abs() / b).exp() / (2.0 * b)
}

fn normal_pdf(x: f64, m: f64, c: f64) -> f64 {
    let z = (x - m) / c;
    (-0.5 * z * z).exp() / (c * (2.0 * std::f64::consts::PI).sqrt())
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `p(y | m, c)` for a normal population: point masses of the truncation at
/// `l` and `r` plus the interior integral, split at the Laplace kink.
pub fn release_density(rel: &Release, m: f64, c: f64, panels: usize) -> f64 {
    let b = (rel.r - rel.l) / rel.eps;
    let nd = Normal::new(m, c).unwrap();
    let lower = nd.cdf(rel.l) * laplace(rel.y - rel.l, b);
    let upper = nd.sf(rel.r) * laplace(rel.y - rel.r, b);
    let f = |x: f64| normal_pdf(x, m, c) * laplace(rel.y - x, b);
    let inner = if rel.y > rel.l && rel.y < rel.r {
        simpson(f, rel.l, rel.y, panels) + simpson(f, rel.y, rel.r, panels)
    } else {
        simpson(f, rel.l, rel.r, 2 * panels)
    };
    lower + upper + inner
}

/// Central finite-difference gradient of `log p(y | m, c)`.
pub fn score_by_differences(rel: &Release, m: f64, c: f64) -> [f64; 2] {
    let h = 1e-4;
    let lp = |m: f64, c: f64| release_density(rel, m, c, 20_000).ln();
    [
        (lp(m + h, c) - lp(m - h, c)) / (2.0 * h),
        (lp(m, c + h) - lp(m, c - h)) / (2.0 * h),
    ]
}

/// Posterior over `(m, c)` on a grid, for a normal prior on `m` and an
/// inverse-gamma prior on `c^2`. Returns histogram probabilities of `m` and
/// of `c` over the given bin edges.
pub struct GridPosterior {
    pub m_probs: Vec<f64>,
    pub c_probs: Vec<f64>,
}

pub fn grid_posterior(
    releases: &[Release],
    prior_m: (f64, f64),
    prior_ig: (f64, f64),
    m_edges: &[f64],
    c_edges: &[f64],
) -> GridPosterior {
    let (mu0, var0) = prior_m;
    let (shape, scale) = prior_ig;
    let sub = 8;
    let mut m_probs = vec![0.0; m_edges.len() - 1];
    let mut c_probs = vec![0.0; c_edges.len() - 1];
    let mut total = 0.0;
    // midpoint rule on sub-cells of every (m-bin, c-bin) pair
    for i in 0..m_edges.len() - 1 {
        for j in 0..c_edges.len() - 1 {
            let dm = (m_edges[i + 1] - m_edges[i]) / sub as f64;
            let dc = (c_edges[j + 1] - c_edges[j]) / sub as f64;
            let mut mass = 0.0;
            for a in 0..sub {
                for b in 0..sub {
                    let m = m_edges[i] + (a as f64 + 0.5) * dm;
                    let c = c_edges[j] + (b as f64 + 0.5) * dc;
                    let s = c * c;
                    // density in (m, c): IG density of c^2 times 2c
                    let prior =
                        (-(m - mu0).powi(2) / (2.0 * var0)).exp() * s.powf(-shape - 1.0) * (-scale / s).exp() * 2.0 * c;
                    let lik: f64 = releases.iter().map(|r| release_density(r, m, c, 200)).product();
                    mass += prior * lik * dm * dc;
                }
            }
            m_probs[i] += mass;
            c_probs[j] += mass;
            total += mass;
        }
    }
    m_probs.iter_mut().for_each(|p| *p /= total);
    c_probs.iter_mut().for_each(|p| *p /= total);
    GridPosterior { m_probs, c_probs }
}

/// Weighted histogram over `edges`; mass outside the edges is dropped and
/// the rest renormalized.
pub fn histogram(values: &[f64], weights: &[f64], edges: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; edges.len() - 1];
    for (&v, &w) in values.iter().zip(weights) {
        if let Some(k) = (0..edges.len() - 1).find(|&k| v >= edges[k] && v < edges[k + 1]) {
            h[k] += w;
        }
    }
    let s: f64 = h.iter().sum();
    h.iter().map(|x| x / s).collect()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// The two-record toy used for stationarity checks. Prior: `m ~ N(0, 4)`,
/// `c^2 ~ IG(3, 3)`.
pub fn toy_releases() -> Vec<Release> {
    vec![
        Release {
            y: 0.5,
            l: -1.0,
            r: 1.0,
            eps: 2.0,
        },
        Release {
            y: -0.3,
            l: -2.0,
            r: 1.5,
            eps: 1.0,
        },
    ]
}

pub fn toy_edges() -> (Vec<f64>, Vec<f64>) {
    (linspace(-6.0, 6.0, 25), linspace(0.05, 4.05, 21))
}
