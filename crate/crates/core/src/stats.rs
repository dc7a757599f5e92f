//! Small descriptive-statistics helpers shared by the Monte Carlo estimators
//! and the experiment harness.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Streaming mean/variance accumulator (Welford) with a parallel merge.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMoments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, value: f64) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &RunningMoments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n_a = self.count as f64;
        let n_b = other.count as f64;
        let n = n_a + n_b;
        let delta = other.mean - self.mean;
        self.mean += delta * n_b / n;
        self.m2 += other.m2 + delta * delta * n_a * n_b / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two observations.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            return f64::INFINITY;
        }
        (self.variance() / self.count as f64).sqrt()
    }
}

impl FromIterator<f64> for RunningMoments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = RunningMoments::new();
        for v in iter {
            acc.push(v);
        }
        acc
    }
}

/// A Monte Carlo (or exact, with zero error) estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn new(estimate: f64, std_error: f64) -> Self {
        Self {
            estimate,
            std_error,
        }
    }

    pub fn exact(estimate: f64) -> Self {
        Self::new(estimate, 0.0)
    }

    pub fn from_moments(m: &RunningMoments) -> Self {
        Self::new(m.mean(), m.std_error())
    }

    pub fn relative_error(&self) -> f64 {
        (self.std_error / self.estimate).abs()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolation quantile of already sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let p = p.clamp(0.0, 1.0);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    quantile_sorted(&sorted(xs), 0.5)
}

/// Pearson correlation; NaN when either side has zero spread.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ma = mean(a);
    let mb = mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt()
}

/// Sample excess kurtosis `m4/m2^2 - 3` with a delete-one jackknife
/// standard error.
pub fn excess_kurtosis(xs: &[f64]) -> Estimate {
    let n = xs.len();
    assert!(n >= 4, "kurtosis needs at least 4 observations");
    let kurt = |s1: f64, s2: f64, s3: f64, s4: f64, n: f64| {
        let m = s1 / n;
        let m2 = s2 / n - m * m;
        let m4 = s4 / n - 4.0 * m * s3 / n + 6.0 * m * m * s2 / n - 3.0 * m.powi(4);
        m4 / (m2 * m2) - 3.0
    };
    // Center first to keep the power sums well conditioned.
    let c = mean(xs);
    let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - c;
        s1 += d;
        s2 += d * d;
        s3 += d * d * d;
        s4 += d * d * d * d;
    }
    let nf = n as f64;
    let full = kurt(s1, s2, s3, s4, nf);
    let mut jack = RunningMoments::new();
    let mut loo = Vec::with_capacity(n);
    for &x in xs {
        let d = x - c;
        let k = kurt(
            s1 - d,
            s2 - d * d,
            s3 - d * d * d,
            s4 - d * d * d * d,
            nf - 1.0,
        );
        jack.push(k);
        loo.push(k);
    }
    let jmean = jack.mean();
    let var = (nf - 1.0) / nf * loo.iter().map(|k| (k - jmean).powi(2)).sum::<f64>();
    Estimate::new(full, var.sqrt())
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn standard_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}
