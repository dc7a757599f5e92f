//! Distribution comparison: Kolmogorov-Smirnov distances and Q-Q pairs.

use serde::{Deserialize, Serialize};

use crate::error::{AcdError, Result};
use crate::stats::{correlation, quantile_sorted, sorted, standard_normal_quantile};

/// What a sample is compared against.
pub enum Reference<'a> {
    Cdf(&'a dyn Fn(f64) -> f64),
    Sample(&'a [f64]),
}

pub fn ks_statistic(samples: &[f64], reference: Reference) -> Result<f64> {
    if samples.is_empty() {
        return Err(AcdError::EmptyInput);
    }
    match reference {
        Reference::Cdf(cdf) => Ok(ks_one_sample(samples, cdf)),
        Reference::Sample(r) => {
            if r.is_empty() {
                return Err(AcdError::EmptyInput);
            }
            Ok(ks_two_sample(samples, r))
        }
    }
}

fn ks_one_sample(samples: &[f64], cdf: &dyn Fn(f64) -> f64) -> f64 {
    let xs = sorted(samples);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        // Step over ties so the jump is taken in one piece.
        let mut j = i;
        while j < xs.len() && xs[j] == xs[i] {
            j += 1;
        }
        let f = cdf(xs[i]);
        d = d.max(f - i as f64 / n).max(j as f64 / n - f);
        i = j;
    }
    d.clamp(0.0, 1.0)
}

fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    // Once one side is exhausted its ECDF is 1; the other only approaches 1.
    if i < a.len() {
        d = d.max(1.0 - i as f64 / na);
    }
    if j < b.len() {
        d = d.max(1.0 - j as f64 / nb);
    }
    d
}

/// Asymptotic 95% critical value of the one-sample KS distance.
pub fn ks_critical_95(n: usize) -> f64 {
    1.358 / (n as f64).sqrt()
}

/// Asymptotic 95% critical value of the two-sample KS distance.
pub fn ks_critical_95_two_sample(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    1.358 * ((n + m) / (n * m)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqPlot {
    /// `(empirical quantile, reference quantile)` pairs.
    pub pairs: Vec<(f64, f64)>,
    /// Pearson correlation of the pairs; 0 when degenerate.
    pub correlation: f64,
    /// Empirical quantiles have zero spread.
    pub degenerate: bool,
}

fn plotting_positions(m: usize) -> impl Iterator<Item = f64> {
    (1..=m).map(move |i| (i as f64 - 0.5) / m as f64)
}

fn build_qq(emp: Vec<f64>, theo: Vec<f64>) -> QqPlot {
    let degenerate = emp.first() == emp.last();
    let correlation = if degenerate {
        0.0
    } else {
        correlation(&emp, &theo)
    };
    QqPlot {
        pairs: emp.into_iter().zip(theo).collect(),
        correlation,
        degenerate,
    }
}

/// Order statistics against N(0,1) quantiles at `(i - 0.5)/M`.
pub fn qq_against_normal(samples: &[f64]) -> Result<QqPlot> {
    if samples.len() < 10 {
        return Err(AcdError::TooFewSamples {
            needed: 10,
            got: samples.len(),
        });
    }
    let emp = sorted(samples);
    let theo = plotting_positions(emp.len())
        .map(standard_normal_quantile)
        .collect();
    Ok(build_qq(emp, theo))
}

/// Order statistics against quantiles of a reference sample.
pub fn qq_against_sample(samples: &[f64], reference: &[f64]) -> Result<QqPlot> {
    if samples.len() < 10 {
        return Err(AcdError::TooFewSamples {
            needed: 10,
            got: samples.len(),
        });
    }
    if reference.is_empty() {
        return Err(AcdError::EmptyInput);
    }
    let emp = sorted(samples);
    let r = sorted(reference);
    let theo = plotting_positions(emp.len())
        .map(|p| quantile_sorted(&r, p))
        .collect();
    Ok(build_qq(emp, theo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_stream;
    use crate::stats::standard_normal_cdf;

    #[test]
    fn ks_trivial_cases() {
        let a = [0.3, 1.0, 2.0, 2.0, 5.0];
        assert_eq!(ks_statistic(&a, Reference::Sample(&a)).unwrap(), 0.0);
        let b = [10.0, 11.0];
        assert_eq!(ks_statistic(&a, Reference::Sample(&b)).unwrap(), 1.0);
        assert!(ks_statistic(&[], Reference::Sample(&a)).is_err());
    }

    #[test]
    fn ks_uniform_null() {
        let mut s = make_stream(11, 0);
        let u: Vec<f64> = (0..10_000).map(|_| s.uniform_open()).collect();
        let cdf = |x: f64| x.clamp(0.0, 1.0);
        let d = ks_statistic(&u, Reference::Cdf(&cdf)).unwrap();
        assert!(d < ks_critical_95(u.len()), "{d}");
    }

    #[test]
    fn ks_one_sample_hand_case() {
        // ECDF of {0.5} against U(0,1): sup is 0.5 on either side of the jump.
        let cdf = |x: f64| x.clamp(0.0, 1.0);
        assert_eq!(ks_statistic(&[0.5], Reference::Cdf(&cdf)).unwrap(), 0.5);
    }

    #[test]
    fn qq_normal_self_consistency() {
        let mut s = make_stream(12, 0);
        let z: Vec<f64> = (0..10_000).map(|_| s.standard_normal()).collect();
        let qq = qq_against_normal(&z).unwrap();
        assert!(qq.correlation > 0.999);
        let cdf = standard_normal_cdf;
        assert!(ks_statistic(&z, Reference::Cdf(&cdf)).unwrap() < ks_critical_95(z.len()));
    }

    #[test]
    fn qq_degenerate_and_symmetric() {
        let qq = qq_against_normal(&[3.0; 20]).unwrap();
        assert!(qq.degenerate);
        assert_eq!(qq.pairs[0].0, qq.pairs[19].0);
        let sym: Vec<f64> = (-10..=10).map(f64::from).collect();
        let qq = qq_against_normal(&sym).unwrap();
        let m = qq.pairs.len();
        for i in 0..m {
            assert_eq!(qq.pairs[i].0, -qq.pairs[m - 1 - i].0);
            assert!((qq.pairs[i].1 + qq.pairs[m - 1 - i].1).abs() < 1e-12);
        }
        assert!(qq_against_normal(&[1.0; 9]).is_err());
    }
}
