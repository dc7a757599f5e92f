//! Hill estimation of the tail index and the finite/infinite-mean verdict.

use serde::{Deserialize, Serialize};

use crate::error::{AcdError, Result};
use crate::report::float_or_string;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    /// Hill estimate at `k`; `inf` when the top `k + 1` order statistics tie.
    #[serde(with = "float_or_string")]
    pub kappa_hat: f64,
    pub k: usize,
    pub n: usize,
    pub hill_path: Option<Vec<(usize, f64)>>,
    pub degenerate: bool,
}

pub fn default_k(n: usize) -> usize {
    ((n as f64).powf(0.6).floor() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Validates and sorts descending (stable, so ties keep input order).
fn descending(data: &[f64]) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(AcdError::EmptyInput);
    }
    if let Some((index, &value)) = data
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
    {
        return Err(AcdError::NonPositiveData { index, value });
    }
    let mut d = data.to_vec();
    d.sort_by(|a, b| b.total_cmp(a));
    Ok(d)
}

/// `1/kappa_hat = k^-1 sum_{i<=k} ln(X_(n-i+1) / X_(n-k))` on descending data,
/// reusing a running sum of logs so a whole path costs one pass.
struct HillSums<'a> {
    desc: &'a [f64],
    logs: Vec<f64>,
}

impl<'a> HillSums<'a> {
    fn new(desc: &'a [f64]) -> Self {
        let mut logs = Vec::with_capacity(desc.len() + 1);
        logs.push(0.0);
        let mut acc = 0.0;
        for x in desc {
            acc += x.ln();
            logs.push(acc);
        }
        Self { desc, logs }
    }

    fn at(&self, k: usize) -> f64 {
        let mean_log_top = self.logs[k] / k as f64;
        let inv = mean_log_top - self.desc[k].ln();
        if inv <= 0.0 {
            f64::INFINITY
        } else {
            1.0 / inv
        }
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k >= n {
        Err(AcdError::InvalidK { k, n })
    } else {
        Ok(())
    }
}

pub fn hill_estimator(data: &[f64], k: usize) -> Result<TailEstimate> {
    let n = data.len();
    check_k(k, n)?;
    let desc = descending(data)?;
    // Direct sum (not the prefix-sum shortcut) so that scale invariance is
    // exact up to the logs themselves.
    let threshold = desc[k];
    let s: f64 = desc[..k].iter().map(|x| (x / threshold).ln()).sum();
    let kappa_hat = if s > 0.0 { k as f64 / s } else { f64::INFINITY };
    Ok(TailEstimate {
        kappa_hat,
        k,
        n,
        hill_path: None,
        degenerate: !kappa_hat.is_finite(),
    })
}

/// Hill estimates over `k_grid`; `kappa_hat` and `k` refer to the last grid point.
pub fn hill_path(data: &[f64], k_grid: &[usize]) -> Result<TailEstimate> {
    let n = data.len();
    if k_grid.is_empty() {
        return Err(AcdError::EmptyInput);
    }
    for &k in k_grid {
        check_k(k, n)?;
    }
    let desc = descending(data)?;
    let sums = HillSums::new(&desc);
    let path: Vec<(usize, f64)> = k_grid
        .iter()
        .map(|&k| {
            let threshold = desc[k];
            let direct: f64 = if k <= 64 {
                k as f64 / desc[..k].iter().map(|x| (x / threshold).ln()).sum::<f64>()
            } else {
                sums.at(k)
            };
            (k, if direct > 0.0 { direct } else { f64::INFINITY })
        })
        .collect();
    let &(k, kappa_hat) = path.last().expect("non-empty grid");
    Ok(TailEstimate {
        kappa_hat,
        k,
        n,
        degenerate: path.iter().any(|p| !p.1.is_finite()),
        hill_path: Some(path),
    })
}

/// Roughly log-spaced grid of `points` distinct k values in `[lo, hi]`.
pub fn log_k_grid(lo: usize, hi: usize, points: usize) -> Vec<usize> {
    let (lo, hi) = (lo.max(1), hi.max(lo.max(1)));
    let points = points.max(2);
    let mut grid: Vec<usize> = (0..points)
        .map(|i| {
            let f = i as f64 / (points - 1) as f64;
            ((lo as f64).ln() * (1.0 - f) + (hi as f64).ln() * f)
                .exp()
                .round() as usize
        })
        .map(|k| k.clamp(lo, hi))
        .collect();
    grid.dedup();
    grid
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailRegime {
    FiniteMean,
    InfiniteMean,
    Boundary,
}

impl TailRegime {
    /// Boundary band is `|kappa_hat - 1| <= 0.1`.
    pub fn classify(kappa_hat: f64) -> Self {
        if (kappa_hat - 1.0).abs() <= 0.1 {
            TailRegime::Boundary
        } else if kappa_hat > 1.0 {
            TailRegime::FiniteMean
        } else {
            TailRegime::InfiniteMean
        }
    }

    pub fn verdict(self) -> &'static str {
        match self {
            TailRegime::FiniteMean => "finite-mean regime (Gaussian root-T asymptotics apply)",
            TailRegime::InfiniteMean => {
                "infinite-mean regime (mixed-Gaussian T^(kappa/2) asymptotics apply)"
            }
            TailRegime::Boundary => {
                "boundary: kappa = 1 is not covered by either asymptotic theory"
            }
        }
    }
}

/// Least-squares slope of `ln P(X > x)` on `ln x` over the order statistics
/// whose empirical survival probability lies in `[p_lo, p_hi]`.
pub fn survival_slope(data: &[f64], p_lo: f64, p_hi: f64) -> Result<f64> {
    let desc = descending(data)?;
    let n = desc.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy, mut m) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &x) in desc.iter().enumerate() {
        // i+1 observations are >= x; plotting position (i + 0.5)/n.
        let p = (i as f64 + 0.5) / n;
        if p < p_lo {
            continue;
        }
        if p > p_hi {
            break;
        }
        let (lx, ly) = (x.ln(), p.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        m += 1.0;
    }
    if m < 3.0 {
        return Err(AcdError::TooFewSamples {
            needed: 3,
            got: m as usize,
        });
    }
    let denom = m * sxx - sx * sx;
    if denom <= 0.0 {
        return Err(AcdError::DegenerateSeries("no spread in the tail".into()));
    }
    Ok((m * sxy - sx * sy) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_stream;

    fn pareto(kappa: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut s = make_stream(seed, 0);
        (0..n)
            .map(|_| s.uniform_open().powf(-1.0 / kappa))
            .collect()
    }

    #[test]
    fn pareto_oracle() {
        let d = pareto(1.0, 1_000_000, 1);
        let e = hill_estimator(&d, 10_000).unwrap();
        assert!((e.kappa_hat - 1.0).abs() < 0.03, "{}", e.kappa_hat);
        let d = pareto(2.0, 1_000_000, 2);
        let e = hill_estimator(&d, 10_000).unwrap();
        assert!((e.kappa_hat - 2.0).abs() < 0.06, "{}", e.kappa_hat);
    }

    #[test]
    fn scale_and_permutation_invariance() {
        let d = pareto(1.5, 5000, 3);
        let a = hill_estimator(&d, 200).unwrap().kappa_hat;
        let scaled: Vec<f64> = d.iter().map(|x| x * 8.0).collect();
        assert_eq!(hill_estimator(&scaled, 200).unwrap().kappa_hat, a);
        let mut rev = d.clone();
        rev.reverse();
        assert_eq!(hill_estimator(&rev, 200).unwrap().kappa_hat, a);
    }

    #[test]
    fn errors_and_degenerate() {
        assert!(matches!(
            hill_estimator(&[1.0, 2.0], 2),
            Err(AcdError::InvalidK { .. })
        ));
        assert!(matches!(
            hill_estimator(&[1.0, 2.0], 0),
            Err(AcdError::InvalidK { .. })
        ));
        assert!(matches!(
            hill_estimator(&[1.0, 0.0, 3.0], 1),
            Err(AcdError::NonPositiveData { index: 1, .. })
        ));
        let e = hill_estimator(&[2.0; 10], 3).unwrap();
        assert!(e.degenerate && e.kappa_hat == f64::INFINITY);
    }

    #[test]
    fn path_consistency() {
        let d = pareto(1.2, 20_000, 4);
        let single = hill_path(&d, &[300]).unwrap();
        assert_eq!(single.hill_path.as_ref().unwrap().len(), 1);
        let direct = hill_estimator(&d, 300).unwrap().kappa_hat;
        assert!((single.kappa_hat - direct).abs() < 1e-10 * direct);
        let n = d.len() as f64;
        let grid = log_k_grid(n.powf(0.4) as usize, n.powf(0.7) as usize, 12);
        let path = hill_path(&d, &grid).unwrap();
        for (_, k) in path.hill_path.unwrap() {
            assert!((k - 1.2).abs() < 0.3, "{k}");
        }
    }

    #[test]
    fn verdicts() {
        assert_eq!(TailRegime::classify(1.4), TailRegime::FiniteMean);
        assert_eq!(TailRegime::classify(0.7), TailRegime::InfiniteMean);
        assert_eq!(TailRegime::classify(1.05), TailRegime::Boundary);
    }

    #[test]
    fn survival_slope_of_pareto() {
        let d = pareto(1.4, 1_000_000, 5);
        let s = survival_slope(&d, 1e-4, 1e-3).unwrap();
        assert!((s + 1.4).abs() < 0.1, "{s}");
    }
}
