//! Truncation, sensitivity and the Laplace release of a single record.

use rand::Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A closed interval `[l, r]` with `l < r`. The truncation statistic
/// `x -> min(max(x, l), r)` has sensitivity `r - l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationInterval {
    l: f64,
    r: f64,
}

impl TruncationInterval {
    pub fn new(l: f64, r: f64) -> Result<Self> {
        if !(l.is_finite() && r.is_finite()) {
            return invalid(format!("interval endpoints must be finite, got [{l}, {r}]"));
        }
        if l >= r {
            return invalid(format!("interval must satisfy l < r, got [{l}, {r}]"));
        }
        Ok(Self { l, r })
    }

    #[inline]
    pub fn l(&self) -> f64 {
        self.l
    }

    #[inline]
    pub fn r(&self) -> f64 {
        self.r
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.r - self.l
    }

    /// Distance from `y` to the interval (zero inside).
    #[inline]
    pub fn distance(&self, y: f64) -> f64 {
        if y < self.l {
            self.l - y
        } else if y > self.r {
            y - self.r
        } else {
            0.0
        }
    }
}

/// Clamps `x` into `iv`.
#[inline]
pub fn truncate(x: f64, iv: &TruncationInterval) -> f64 {
    x.max(iv.l).min(iv.r)
}

/// L1 sensitivity of truncation to `iv`.
#[inline]
pub fn sensitivity(iv: &TruncationInterval) -> f64 {
    iv.width()
}

/// Pure epsilon-DP privacy level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    epsilon: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return invalid(format!("epsilon must be positive and finite, got {epsilon}"));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Scale of the Laplace noise added to a statistic truncated to `iv`.
    pub fn noise_scale(&self, iv: &TruncationInterval) -> f64 {
        sensitivity(iv) / self.epsilon
    }
}

/// `log Laplace(v; b)` with `b` the scale.
pub fn laplace_log_density(v: f64, scale: f64) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return invalid(format!("Laplace scale must be positive, got {scale}"));
    }
    Ok(laplace_log_density_unchecked(v, scale))
}

#[inline]
pub(crate) fn laplace_log_density_unchecked(v: f64, scale: f64) -> f64 {
    -(2.0 * scale).ln() - v.abs() / scale
}

/// One draw from `Laplace(scale)` by inversion.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    if u < 0.5 {
        scale * (2.0 * u).ln()
    } else {
        -scale * (2.0 * (1.0 - u)).ln()
    }
}

/// One privatized observation together with the interval and privacy level
/// it was generated under. It carries no trace of the raw value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReleaseRecord {
    pub t: usize,
    pub y: f64,
    pub interval: TruncationInterval,
    pub privacy: PrivacyParams,
}

impl ReleaseRecord {
    pub fn epsilon(&self) -> f64 {
        self.privacy.epsilon()
    }

    pub fn noise_scale(&self) -> f64 {
        self.privacy.noise_scale(&self.interval)
    }

    /// `log Laplace(y - T(x); width / epsilon)`, the release likelihood of a latent `x`.
    #[inline]
    pub fn log_likelihood(&self, x: f64) -> f64 {
        laplace_log_density_unchecked(self.y - truncate(x, &self.interval), self.noise_scale())
    }

    pub fn to_row(&self) -> ReleaseRow {
        ReleaseRow {
            t: self.t,
            y: self.y,
            l: self.interval.l(),
            r: self.interval.r(),
            epsilon: self.epsilon(),
        }
    }
}

/// CSV form of a [`ReleaseRecord`]: `t,y,l,r,epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReleaseRow {
    pub t: usize,
    pub y: f64,
    pub l: f64,
    pub r: f64,
    pub epsilon: f64,
}

impl TryFrom<ReleaseRow> for ReleaseRecord {
    type Error = crate::Error;

    fn try_from(row: ReleaseRow) -> Result<Self> {
        if !row.y.is_finite() {
            return invalid(format!("record {} has non-finite y", row.t));
        }
        Ok(ReleaseRecord {
            t: row.t,
            y: row.y,
            interval: TruncationInterval::new(row.l, row.r)?,
            privacy: PrivacyParams::new(row.epsilon)?,
        })
    }
}

/// Releases `x` as `T(x) + width * v` for a given standardized noise value
/// `v` (a `Laplace(1/epsilon)` draw).
pub fn release_with_noise(x: f64, iv: TruncationInterval, privacy: PrivacyParams, t: usize, v: f64) -> ReleaseRecord {
    ReleaseRecord {
        t,
        y: truncate(x, &iv) + sensitivity(&iv) * v,
        interval: iv,
        privacy,
    }
}

/// Releases `x` through truncation to `iv` and the Laplace mechanism.
pub fn release<R: Rng + ?Sized>(
    x: f64,
    iv: TruncationInterval,
    privacy: PrivacyParams,
    t: usize,
    rng: &mut R,
) -> ReleaseRecord {
    let v = sample_laplace(1.0 / privacy.epsilon(), rng);
    release_with_noise(x, iv, privacy, t, v)
}

/// `log p(y | x) - log p(y | x')` for the release density. For any inputs its
/// magnitude is at most epsilon.
pub fn dp_log_ratio_bound(x: f64, x_prime: f64, y: f64, iv: &TruncationInterval, privacy: PrivacyParams) -> f64 {
    let b = privacy.noise_scale(iv);
    let (s, s_prime) = (truncate(x, iv), truncate(x_prime, iv));
    // |y - s'| - |y - s|, without cancellation when y is far outside [l, r]
    let diff = if y >= s.max(s_prime) {
        s - s_prime
    } else if y <= s.min(s_prime) {
        s_prime - s
    } else {
        (y - s_prime).abs() - (y - s).abs()
    };
    diff / b
}
