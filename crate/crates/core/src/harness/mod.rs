//! Batch Monte Carlo experiments for the counting-process and
//! quasi-likelihood limit laws.
//!
//! Every replication draws from its own stream, indexed by span and
//! replication number, and results are collected in replication order, so a
//! report depends only on its configuration and never on the worker count.

pub mod compare;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acd_model::{
    alpha_for_kappa, design_tail_index, estimate_limit_constants, AcdParams, LimitLawSpec,
    MonteCarloBudget,
};
use crate::error::{AcdError, Result};
use crate::mle::{fit, FitOptions, X0Policy};
use crate::report::float_or_string;
use crate::rng::{make_stream, InnovationSpec, RandomStream, SkewedStable};
use crate::sim::{calibrate_omega_for_median, count_events, simulate_fixed_span, DEFAULT_BURN_IN};
use crate::stats::{excess_kurtosis, median, standard_normal_cdf, Estimate, RunningMoments};

pub use compare::{
    ks_critical_95, ks_critical_95_two_sample, ks_statistic, qq_against_normal, qq_against_sample,
    QqPlot, Reference,
};

const NS_REPLICATION: u64 = 1 << 48;
const NS_REFERENCE: u64 = 2 << 48;
const NS_CALIBRATION: u64 = 3 << 48;

const INSUFFICIENT: &str = "TooFewSamples";

/// Largest share of failed fits tolerated before an experiment aborts.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Design {
    /// `alpha = alpha_for_kappa(kappa)`; `omega = 1 - alpha` (unit mean) when
    /// kappa > 1, otherwise omega calibrated so the median duration is one.
    Kappa {
        kappa: f64,
    },
    Params {
        omega: f64,
        alpha: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `N_T / T`, against `1/mu`.
    Lln,
    /// `T^(1/2) (N_T/T - 1/mu)`, against `N(0, sigma^2/mu^3)`.
    #[serde(rename = "clt_k_gt_2")]
    CltKGt2,
    /// `T^((k-1)/k) (N_T/T - 1/mu)`, against the stable counting limit.
    #[serde(rename = "stable_1_2")]
    Stable12,
    /// `N_T / T^k`, against `lambda_k`.
    #[serde(rename = "count_k_lt_1")]
    CountKLt1,
    /// `T^(1/2) (alpha_hat - alpha_0) / sigma_alpha`, against N(0,1).
    QmleSqrtT,
    /// `T^(k/2) (alpha_hat - alpha_0)` over its empirical sd, against the
    /// standardized mixed-Gaussian limit.
    #[serde(rename = "qmle_tk2")]
    QmleTk2,
    /// `(alpha_hat - alpha_0) / se`, against N(0,1).
    TRatio,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::Lln => "lln",
            Normalization::CltKGt2 => "clt_k_gt_2",
            Normalization::Stable12 => "stable_1_2",
            Normalization::CountKLt1 => "count_k_lt_1",
            Normalization::QmleSqrtT => "qmle_sqrt_t",
            Normalization::QmleTk2 => "qmle_tk2",
            Normalization::TRatio => "t_ratio",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Normalization::Lln,
            Normalization::CltKGt2,
            Normalization::Stable12,
            Normalization::CountKLt1,
            Normalization::QmleSqrtT,
            Normalization::QmleTk2,
            Normalization::TRatio,
        ]
        .into_iter()
        .find(|n| n.name() == s)
    }

    pub fn is_counting(self) -> bool {
        matches!(
            self,
            Normalization::Lln
                | Normalization::CltKGt2
                | Normalization::Stable12
                | Normalization::CountKLt1
        )
    }

    /// Errors unless `kappa` lies in the regime the normalization is for.
    pub fn check_regime(self, kappa: f64) -> Result<()> {
        let (ok, reason) = match self {
            Normalization::Lln => (kappa > 1.0, "needs a finite mean (kappa > 1)"),
            Normalization::CltKGt2 => (kappa > 2.0, "needs a finite variance (kappa > 2)"),
            Normalization::Stable12 => (kappa > 1.0 && kappa < 2.0, "needs 1 < kappa < 2"),
            Normalization::CountKLt1 => (kappa < 1.0, "needs an infinite mean (kappa < 1)"),
            Normalization::QmleSqrtT => (kappa > 1.0, "needs a finite mean (kappa > 1)"),
            Normalization::QmleTk2 => (kappa < 1.0, "needs an infinite mean (kappa < 1)"),
            Normalization::TRatio => (kappa != 1.0, "undefined at kappa = 1"),
        };
        if ok {
            Ok(())
        } else {
            Err(AcdError::RegimeMismatch {
                normalization: self.name().into(),
                kappa,
                reason: reason.into(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RemainderMode {
    Include,
    #[default]
    Exclude,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub design: Design,
    pub spans: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    pub normalization: Normalization,
    #[serde(default)]
    pub remainder_mode: RemainderMode,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Draws per Monte Carlo limit constant.
    #[serde(default = "default_constant_samples")]
    pub constant_samples: usize,
    /// Path length for the median calibration of kappa < 1 designs.
    #[serde(default = "default_calibration_samples")]
    pub calibration_samples: usize,
    /// Reference draws per replication (m = factor * M).
    #[serde(default = "default_reference_factor")]
    pub reference_factor: usize,
    #[serde(default)]
    pub x0_policy: X0Policy,
    /// Worker threads; `None` uses the rayon default. Never serialized, since
    /// it cannot change the results.
    #[serde(skip)]
    pub workers: Option<usize>,
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}
fn default_constant_samples() -> usize {
    1_000_000
}
fn default_calibration_samples() -> usize {
    1_000_000
}
fn default_reference_factor() -> usize {
    10
}

impl ExperimentConfig {
    /// Desk-scale defaults: M = 2000 and spans {1e3, 1e4, 1e5}.
    pub fn new(design: Design, normalization: Normalization, seed: u64) -> Self {
        Self {
            design,
            spans: vec![1e3, 1e4, 1e5],
            replications: 2000,
            seed,
            normalization,
            remainder_mode: RemainderMode::Exclude,
            burn_in: DEFAULT_BURN_IN,
            constant_samples: default_constant_samples(),
            calibration_samples: default_calibration_samples(),
            reference_factor: default_reference_factor(),
            x0_policy: X0Policy::SampleMean,
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 100 {
            return Err(AcdError::InvalidParameter(format!(
                "need at least 100 replications, got {}",
                self.replications
            )));
        }
        if self.spans.is_empty() {
            return Err(AcdError::InvalidParameter("no spans given".into()));
        }
        for w in self.spans.windows(2) {
            if !(w[1] > w[0]) {
                return Err(AcdError::InvalidParameter(
                    "spans must be strictly increasing".into(),
                ));
            }
        }
        if !(self.spans[0] > 0.0 && self.spans.iter().all(|t| t.is_finite())) {
            return Err(AcdError::InvalidParameter(
                "spans must be positive and finite".into(),
            ));
        }
        if self.reference_factor == 0 {
            return Err(AcdError::InvalidParameter(
                "reference_factor must be positive".into(),
            ));
        }
        if let Some(0) = self.workers {
            return Err(AcdError::InvalidParameter(
                "workers must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Parameters and tail index of a design. Median calibration draws from a
/// stream reserved for it, so the result depends only on `seed`.
pub fn resolve_design(
    design: &Design,
    spec: &InnovationSpec,
    seed: u64,
    calibration_samples: usize,
    burn_in: usize,
) -> Result<(AcdParams, f64)> {
    match *design {
        Design::Params { omega, alpha } => {
            let p = AcdParams::new(omega, alpha)?;
            p.check_stationary(spec)?;
            Ok((p, design_tail_index(&p, spec)?))
        }
        Design::Kappa { kappa } => {
            if !spec.is_exponential() {
                return Err(AcdError::InvalidParameter(
                    "kappa designs assume unit-exponential innovations".into(),
                ));
            }
            let alpha = alpha_for_kappa(kappa)?;
            let omega = if kappa > 1.0 {
                1.0 - alpha
            } else {
                let mut stream = make_stream(seed, NS_CALIBRATION);
                calibrate_omega_for_median(
                    alpha,
                    spec,
                    1.0,
                    calibration_samples,
                    &mut stream,
                    burn_in,
                )?
            };
            Ok((AcdParams::new(omega, alpha)?, kappa))
        }
    }
}

/// `m` draws from the limit law that the statistic of `case` is compared with.
pub fn reference_limit_sample(
    spec: &LimitLawSpec,
    case: Normalization,
    stream: &mut RandomStream,
    m: usize,
) -> Result<Vec<f64>> {
    let kappa = spec.kappa;
    case.check_regime(kappa)?;
    let missing = |what: &str| AcdError::RegimeMismatch {
        normalization: case.name().into(),
        kappa,
        reason: format!("limit constants lack {what}"),
    };
    match case {
        Normalization::Lln => Ok(vec![1.0 / spec.mu; m]),
        Normalization::CltKGt2 => {
            let sd = (spec.sigma2_checked()?.estimate / spec.mu.powi(3)).sqrt();
            Ok((0..m).map(|_| sd * stream.standard_normal()).collect())
        }
        Normalization::Stable12 => {
            // The counting deviation is minus the renewal-sum deviation
            // divided by mu, so the limit is -(gamma_scale / mu) * eta.
            let g = spec
                .gamma_scale
                .ok_or_else(|| missing("gamma_scale"))?
                .estimate;
            let eta = SkewedStable::new(kappa)?;
            let factor = -g / spec.mu;
            Ok((0..m).map(|_| factor * eta.sample(stream)).collect())
        }
        Normalization::CountKLt1 => {
            let l = spec
                .lambda_scale
                .ok_or_else(|| missing("lambda_scale"))?
                .estimate;
            let eta = SkewedStable::new(kappa)?;
            Ok((0..m)
                .map(|_| l * eta.sample(stream).powf(-kappa))
                .collect())
        }
        Normalization::QmleSqrtT | Normalization::TRatio => {
            Ok((0..m).map(|_| stream.standard_normal()).collect())
        }
        Normalization::QmleTk2 => {
            // alpha-marginal of (lambda Omega)^(-1/2) Z, tau = innovation variance
            let l = spec
                .lambda_scale
                .ok_or_else(|| missing("lambda_scale"))?
                .estimate;
            let inv = spec
                .omega_matrix
                .inverse()
                .ok_or(AcdError::SingularInformation)?;
            let sd = (spec.tau * inv.get(1, 1)).sqrt();
            let eta = SkewedStable::new(kappa)?;
            Ok((0..m)
                .map(|_| {
                    let lambda = l * eta.sample(stream).powf(-kappa);
                    sd * stream.standard_normal() / lambda.sqrt()
                })
                .collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub count: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub median: f64,
    /// Excess kurtosis with a jackknife standard error.
    pub excess_kurtosis: Estimate,
    /// Standard error of the excess kurtosis under Gaussian data; the scale
    /// for testing departure from normality.
    pub kurtosis_null_se: f64,
}

impl SampleSummary {
    pub fn of(xs: &[f64]) -> Self {
        let m: RunningMoments = xs.iter().copied().collect();
        Self {
            count: xs.len(),
            mean: m.mean(),
            std_dev: m.variance().sqrt(),
            median: median(xs),
            excess_kurtosis: if xs.len() >= 4 {
                excess_kurtosis(xs)
            } else {
                Estimate::new(f64::NAN, f64::NAN)
            },
            kurtosis_null_se: kurtosis_null_se(xs.len()),
        }
    }
}

/// `sqrt(24 n (n-1)^2 / ((n-3)(n-2)(n+3)(n+5)))`, the exact standard error
/// of the sample excess kurtosis for normal data.
pub fn kurtosis_null_se(n: usize) -> f64 {
    if n < 4 {
        return f64::NAN;
    }
    let n = n as f64;
    (24.0 * n * (n - 1.0).powi(2) / ((n - 3.0) * (n - 2.0) * (n + 3.0) * (n + 5.0))).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceComparison {
    pub law: String,
    /// 0 for an analytic CDF.
    pub reference_size: usize,
    pub ks: f64,
    /// 95% null critical value of `ks`; the Monte Carlo error scale.
    pub ks_critical_95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TRatioSummary {
    pub count: usize,
    pub ks_normal: f64,
    pub ks_critical_95: f64,
    /// Share of `|t| > 1.96`.
    pub rejection_rate: f64,
    pub rejection_std_error: f64,
    pub qq_correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderSummary {
    /// `T^(1/2)` for kappa > 1, `T^(kappa/2)` for kappa < 1.
    #[serde(with = "float_or_string")]
    pub scale: f64,
    pub median_abs: f64,
    pub median_abs_scaled: f64,
    pub mean_abs_scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderComparison {
    /// Fits where both variants converged.
    pub count: usize,
    /// `|theta_with - theta_without| / (se / sqrt(T))`, max over the two
    /// components, summarized across replications.
    pub median_ratio: f64,
    pub p99_ratio: f64,
    pub max_ratio: f64,
    /// KS distance between the two sets of normalized alpha draws.
    pub ks_between: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanReport {
    pub span: f64,
    pub replications: usize,
    /// Replications excluded from the statistics, by reason.
    pub failures: BTreeMap<String, usize>,
    /// Failed fits or paths; these count towards the abort rule.
    pub failed: usize,
    /// Paths with fewer events than a fit needs; excluded and reported, but
    /// not counted as failed fits.
    pub insufficient_data: usize,
    pub statistic: String,
    pub samples: Vec<f64>,
    pub summary: SampleSummary,
    pub reference: Option<ReferenceComparison>,
    pub qq: Option<QqPlot>,
    pub mean_events: f64,
    pub t_ratios: Option<TRatioSummary>,
    /// Median of `|alpha_hat - alpha_0|`.
    pub median_abs_alpha_error: Option<f64>,
    pub remainder: Option<RemainderSummary>,
    pub remainder_comparison: Option<RemainderComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacentKs {
    pub from_span: f64,
    pub to_span: f64,
    pub ks: f64,
    pub ks_critical_95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: ExperimentConfig,
    pub params: AcdParams,
    #[serde(with = "float_or_string")]
    pub kappa: f64,
    pub innovation: String,
    pub limit: Option<LimitLawSpec>,
    pub spans: Vec<SpanReport>,
    pub adjacent_ks: Vec<AdjacentKs>,
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w);
    }
    b.build()
        .map_err(|e| AcdError::InvalidParameter(format!("cannot start worker pool: {e}")))
}

fn replication_stream(seed: u64, span_index: usize, rep: usize) -> RandomStream {
    make_stream(
        seed,
        NS_REPLICATION + ((span_index as u64) << 32) + rep as u64,
    )
}

fn reference_stream(seed: u64, span_index: usize) -> RandomStream {
    make_stream(seed, NS_REFERENCE + span_index as u64)
}

fn constants(
    params: &AcdParams,
    spec: &InnovationSpec,
    config: &ExperimentConfig,
) -> Result<LimitLawSpec> {
    let budget = MonteCarloBudget::with_samples(config.constant_samples, config.seed);
    estimate_limit_constants(params, spec, &budget)
}

fn adjacent(spans: &[SpanReport]) -> Result<Vec<AdjacentKs>> {
    spans
        .windows(2)
        .filter(|w| !w[0].samples.is_empty() && !w[1].samples.is_empty())
        .map(|w| {
            Ok(AdjacentKs {
                from_span: w[0].span,
                to_span: w[1].span,
                ks: ks_statistic(&w[0].samples, Reference::Sample(&w[1].samples))?,
                ks_critical_95: ks_critical_95_two_sample(w[0].samples.len(), w[1].samples.len()),
            })
        })
        .collect()
}

fn compare_with_reference(
    samples: &[f64],
    reference: &[f64],
    law: &str,
) -> Result<(ReferenceComparison, Option<QqPlot>)> {
    let ks = ks_statistic(samples, Reference::Sample(reference))?;
    let qq = qq_against_sample(samples, reference).ok();
    Ok((
        ReferenceComparison {
            law: law.into(),
            reference_size: reference.len(),
            ks,
            ks_critical_95: ks_critical_95_two_sample(samples.len(), reference.len()),
        },
        qq,
    ))
}

/// Simulates `M` fixed-span paths per span and compares the normalized
/// event count with its limit law.
pub fn run_counting_experiment(
    config: &ExperimentConfig,
    spec: &InnovationSpec,
) -> Result<ExperimentReport> {
    config.validate()?;
    let norm = config.normalization;
    if !norm.is_counting() {
        return Err(AcdError::RegimeMismatch {
            normalization: norm.name().into(),
            kappa: f64::NAN,
            reason: "not a counting-process normalization".into(),
        });
    }
    let pool = pool(config.workers)?;
    pool.install(|| counting_inner(config, spec))
}

fn counting_inner(config: &ExperimentConfig, spec: &InnovationSpec) -> Result<ExperimentReport> {
    let norm = config.normalization;
    let (params, kappa) = resolve_design(
        &config.design,
        spec,
        config.seed,
        config.calibration_samples,
        config.burn_in,
    )?;
    norm.check_regime(kappa)?;
    let limit = constants(&params, spec, config)?;
    let m = config.replications;

    let mut spans = Vec::with_capacity(config.spans.len());
    for (si, &span) in config.spans.iter().enumerate() {
        let counts: Vec<Result<usize>> = (0..m)
            .into_par_iter()
            .map(|r| {
                let mut stream = replication_stream(config.seed, si, r);
                count_events(&params, spec, span, &mut stream, config.burn_in).map(|c| c.count)
            })
            .collect();
        let mut failures = BTreeMap::new();
        let mut n_ok = Vec::with_capacity(m);
        for c in counts {
            match c {
                Ok(n) => n_ok.push(n as f64),
                Err(e) => *failures.entry(failure_key(&e)).or_insert(0) += 1,
            }
        }
        let failed = m - n_ok.len();
        if failed as f64 > MAX_FAILURE_RATE * m as f64 {
            return Err(AcdError::ExperimentAborted {
                failed,
                total: m,
                span,
            });
        }
        let mean_events = n_ok.iter().sum::<f64>() / n_ok.len().max(1) as f64;
        let mu = limit.mu;
        let samples: Vec<f64> = match norm {
            Normalization::Lln => n_ok.iter().map(|n| n / span).collect(),
            Normalization::CltKGt2 => n_ok
                .iter()
                .map(|n| span.sqrt() * (n / span - 1.0 / mu))
                .collect(),
            Normalization::Stable12 => {
                let rate = span.powf((kappa - 1.0) / kappa);
                n_ok.iter().map(|n| rate * (n / span - 1.0 / mu)).collect()
            }
            Normalization::CountKLt1 => n_ok.iter().map(|n| n / span.powf(kappa)).collect(),
            _ => unreachable!("checked by is_counting"),
        };

        let (reference, qq) = match norm {
            Normalization::Lln => (None, None),
            Normalization::CltKGt2 => {
                let sd = (limit.sigma2_checked()?.estimate / mu.powi(3)).sqrt();
                let cdf = move |x: f64| standard_normal_cdf(x / sd);
                let ks = ks_statistic(&samples, Reference::Cdf(&cdf))?;
                let standardized: Vec<f64> = samples.iter().map(|x| x / sd).collect();
                (
                    Some(ReferenceComparison {
                        law: "normal(0, sigma2/mu^3)".into(),
                        reference_size: 0,
                        ks,
                        ks_critical_95: ks_critical_95(samples.len()),
                    }),
                    qq_against_normal(&standardized).ok(),
                )
            }
            Normalization::Stable12 | Normalization::CountKLt1 => {
                let mut stream = reference_stream(config.seed, si);
                let r =
                    reference_limit_sample(&limit, norm, &mut stream, config.reference_factor * m)?;
                let law = if norm == Normalization::Stable12 {
                    "-(gamma_scale/mu) * eta"
                } else {
                    "lambda_scale * eta^(-kappa)"
                };
                let (c, q) = compare_with_reference(&samples, &r, law)?;
                (Some(c), q)
            }
            _ => unreachable!(),
        };

        spans.push(SpanReport {
            span,
            replications: m,
            failed,
            insufficient_data: 0,
            failures,
            statistic: norm.name().into(),
            summary: SampleSummary::of(&samples),
            samples,
            reference,
            qq,
            mean_events,
            t_ratios: None,
            median_abs_alpha_error: None,
            remainder: None,
            remainder_comparison: None,
        });
    }
    Ok(ExperimentReport {
        experiment: "counting".into(),
        config: config.clone(),
        params,
        kappa,
        innovation: spec.name().into(),
        limit: Some(limit),
        adjacent_ks: adjacent(&spans)?,
        spans,
    })
}

fn robust_standardize(xs: &[f64]) -> Vec<f64> {
    let scale = median(&xs.iter().map(|x| x.abs()).collect::<Vec<_>>());
    xs.iter().map(|x| x / scale).collect()
}

fn failure_key(e: &AcdError) -> String {
    let s = format!("{e:?}");
    s.split([' ', '(', '{'])
        .next()
        .unwrap_or("error")
        .to_string()
}

struct FitDraw {
    alpha: f64,
    omega: f64,
    se: Option<[f64; 2]>,
    t: Option<f64>,
}

struct QmleRep {
    events: usize,
    main: std::result::Result<FitDraw, String>,
    /// Remainder-included fit when both variants are requested.
    other: Option<std::result::Result<FitDraw, String>>,
    remainder: f64,
}

fn one_fit(
    series: &crate::sim::DurationSeries,
    include_remainder: bool,
    alpha0: f64,
    x0_policy: X0Policy,
) -> std::result::Result<FitDraw, String> {
    let opts = FitOptions {
        include_remainder,
        null_alpha: Some(alpha0),
        x0_policy,
        ..FitOptions::default()
    };
    match fit(series, &opts) {
        Ok(r) if r.converged => Ok(FitDraw {
            alpha: r.theta_hat.alpha,
            omega: r.theta_hat.omega,
            se: r.std_errors,
            t: r.t_ratio,
        }),
        Ok(_) => Err("NotConverged".into()),
        Err(e) => Err(failure_key(&e)),
    }
}

/// Fits `M` simulated paths per span and compares the normalized estimator
/// and t-ratios with their limits.
pub fn run_qmle_experiment(
    config: &ExperimentConfig,
    spec: &InnovationSpec,
) -> Result<ExperimentReport> {
    config.validate()?;
    let norm = config.normalization;
    if norm.is_counting() {
        return Err(AcdError::RegimeMismatch {
            normalization: norm.name().into(),
            kappa: f64::NAN,
            reason: "not an estimator normalization".into(),
        });
    }
    let pool = pool(config.workers)?;
    pool.install(|| qmle_inner(config, spec))
}

fn qmle_inner(config: &ExperimentConfig, spec: &InnovationSpec) -> Result<ExperimentReport> {
    let norm = config.normalization;
    let (params, kappa) = resolve_design(
        &config.design,
        spec,
        config.seed,
        config.calibration_samples,
        config.burn_in,
    )?;
    norm.check_regime(kappa)?;
    let limit = match norm {
        Normalization::TRatio => None,
        _ => Some(constants(&params, spec, config)?),
    };
    let alpha0 = params.alpha;
    let m = config.replications;
    let main_with_remainder = config.remainder_mode == RemainderMode::Include;
    let both = config.remainder_mode == RemainderMode::Both;

    let mut spans = Vec::with_capacity(config.spans.len());
    for (si, &span) in config.spans.iter().enumerate() {
        let reps: Vec<Result<QmleRep>> = (0..m)
            .into_par_iter()
            .map(|r| {
                let mut stream = replication_stream(config.seed, si, r);
                let series = simulate_fixed_span(&params, spec, span, &mut stream, config.burn_in)?;
                let remainder = if series.is_empty() {
                    -span / series.true_next_psi.unwrap_or(f64::NAN)
                } else {
                    -(span - series.last_time()) / series.true_next_psi.expect("fixed-span path")
                };
                let main = one_fit(&series, main_with_remainder, alpha0, config.x0_policy);
                let other = both.then(|| one_fit(&series, true, alpha0, config.x0_policy));
                Ok(QmleRep {
                    events: series.len(),
                    main,
                    other,
                    remainder,
                })
            })
            .collect();
        let reps: Vec<QmleRep> = reps.into_iter().collect::<Result<_>>()?;

        let mut failures = BTreeMap::new();
        for rep in &reps {
            if let Err(k) = &rep.main {
                *failures.entry(k.clone()).or_insert(0) += 1;
            }
        }
        let insufficient_data = failures.get(INSUFFICIENT).copied().unwrap_or(0);
        let failed: usize = failures.values().sum::<usize>() - insufficient_data;
        if failed as f64 > MAX_FAILURE_RATE * m as f64 {
            return Err(AcdError::ExperimentAborted {
                failed,
                total: m,
                span,
            });
        }
        let ok: Vec<&FitDraw> = reps.iter().filter_map(|r| r.main.as_ref().ok()).collect();

        let rate = if kappa > 1.0 {
            span.sqrt()
        } else {
            span.powf(kappa / 2.0)
        };
        let raw: Vec<f64> = ok.iter().map(|d| rate * (d.alpha - alpha0)).collect();
        let t_values: Vec<f64> = ok.iter().filter_map(|d| d.t).collect();

        let (samples, reference, qq) = match norm {
            Normalization::QmleSqrtT => {
                let sa = limit
                    .as_ref()
                    .and_then(|l| l.sigma_alpha)
                    .ok_or(AcdError::InfiniteVariance { kappa })?
                    .estimate;
                let z: Vec<f64> = raw.iter().map(|x| x / sa).collect();
                let ks = ks_statistic(&z, Reference::Cdf(&standard_normal_cdf))?;
                let qq = qq_against_normal(&z).ok();
                let cmp = ReferenceComparison {
                    law: "normal(0,1)".into(),
                    reference_size: 0,
                    ks,
                    ks_critical_95: ks_critical_95(z.len()),
                };
                (z, Some(cmp), qq)
            }
            Normalization::QmleTk2 => {
                // Plotted draws are scaled by the empirical sd. The limit has
                // tail index 2, so the law comparison uses median |x| as scale.
                let sd = SampleSummary::of(&raw).std_dev;
                let z: Vec<f64> = raw.iter().map(|x| x / sd).collect();
                let mut stream = reference_stream(config.seed, si);
                let r = reference_limit_sample(
                    limit.as_ref().expect("constants computed"),
                    norm,
                    &mut stream,
                    config.reference_factor * m,
                )?;
                let (zs, rs) = (robust_standardize(&raw), robust_standardize(&r));
                let (cmp, _) =
                    compare_with_reference(&zs, &rs, "(lambda Omega)^(-1/2) Z over median |x|")?;
                (z.clone(), Some(cmp), qq_against_normal(&z).ok())
            }
            Normalization::TRatio => {
                let ks = ks_statistic(&t_values, Reference::Cdf(&standard_normal_cdf))?;
                let cmp = ReferenceComparison {
                    law: "normal(0,1)".into(),
                    reference_size: 0,
                    ks,
                    ks_critical_95: ks_critical_95(t_values.len()),
                };
                (
                    t_values.clone(),
                    Some(cmp),
                    qq_against_normal(&t_values).ok(),
                )
            }
            _ => unreachable!("checked by is_counting"),
        };

        let t_ratios = if t_values.len() >= 10 {
            let rej =
                t_values.iter().filter(|t| t.abs() > 1.96).count() as f64 / t_values.len() as f64;
            Some(TRatioSummary {
                count: t_values.len(),
                ks_normal: ks_statistic(&t_values, Reference::Cdf(&standard_normal_cdf))?,
                ks_critical_95: ks_critical_95(t_values.len()),
                rejection_rate: rej,
                rejection_std_error: (rej * (1.0 - rej) / t_values.len() as f64).sqrt(),
                qq_correlation: qq_against_normal(&t_values)?.correlation,
            })
        } else {
            None
        };

        let abs_err: Vec<f64> = ok.iter().map(|d| (d.alpha - alpha0).abs()).collect();
        let rem_abs: Vec<f64> = reps.iter().map(|r| r.remainder.abs()).collect();
        let rem_scaled: Vec<f64> = rem_abs.iter().map(|r| r / rate).collect();
        let remainder = Some(RemainderSummary {
            scale: rate,
            median_abs: median(&rem_abs),
            median_abs_scaled: median(&rem_scaled),
            mean_abs_scaled: rem_scaled.iter().sum::<f64>() / rem_scaled.len() as f64,
        });

        let remainder_comparison = if both {
            let mut ratios = Vec::new();
            let mut with_norm = Vec::new();
            let mut without_norm = Vec::new();
            for rep in &reps {
                if let (Ok(a), Some(Ok(b))) = (&rep.main, &rep.other) {
                    if let Some(se) = a.se {
                        let root = span.sqrt();
                        let ra = (a.alpha - b.alpha).abs() / (se[1] / root);
                        let rw = (a.omega - b.omega).abs() / (se[0] / root);
                        ratios.push(ra.max(rw));
                    }
                    without_norm.push(rate * (a.alpha - alpha0));
                    with_norm.push(rate * (b.alpha - alpha0));
                }
            }
            if ratios.is_empty() {
                None
            } else {
                let s = crate::stats::sorted(&ratios);
                Some(RemainderComparison {
                    count: ratios.len(),
                    median_ratio: crate::stats::quantile_sorted(&s, 0.5),
                    p99_ratio: crate::stats::quantile_sorted(&s, 0.99),
                    max_ratio: *s.last().expect("non-empty"),
                    ks_between: ks_statistic(&with_norm, Reference::Sample(&without_norm))?,
                })
            }
        } else {
            None
        };

        spans.push(SpanReport {
            span,
            replications: m,
            failed,
            insufficient_data,
            failures,
            statistic: norm.name().into(),
            summary: SampleSummary::of(if norm == Normalization::TRatio {
                &samples
            } else {
                &raw
            }),
            samples,
            reference,
            qq,
            mean_events: reps.iter().map(|r| r.events as f64).sum::<f64>() / m as f64,
            t_ratios,
            median_abs_alpha_error: if abs_err.is_empty() {
                None
            } else {
                Some(median(&abs_err))
            },
            remainder,
            remainder_comparison,
        });
    }
    Ok(ExperimentReport {
        experiment: "qmle".into(),
        config: config.clone(),
        params,
        kappa,
        innovation: spec.name().into(),
        limit,
        adjacent_ks: adjacent(&spans)?,
        spans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp() -> InnovationSpec {
        InnovationSpec::UnitExponential
    }

    #[test]
    fn regime_guards() {
        assert!(matches!(
            Normalization::CltKGt2.check_regime(1.4),
            Err(AcdError::RegimeMismatch { .. })
        ));
        assert!(Normalization::Stable12.check_regime(1.4).is_ok());
        assert!(Normalization::CountKLt1.check_regime(1.4).is_err());
        assert!(Normalization::QmleTk2.check_regime(0.5).is_ok());
        assert!(Normalization::QmleSqrtT.check_regime(0.5).is_err());
        let cfg = ExperimentConfig {
            constant_samples: 10_000,
            replications: 100,
            spans: vec![100.0],
            ..ExperimentConfig::new(Design::Kappa { kappa: 1.4 }, Normalization::CltKGt2, 1)
        };
        assert!(matches!(
            run_counting_experiment(&cfg, &exp()),
            Err(AcdError::RegimeMismatch { .. })
        ));
    }

    #[test]
    fn normalization_names_roundtrip() {
        for s in [
            "lln",
            "clt_k_gt_2",
            "stable_1_2",
            "count_k_lt_1",
            "qmle_sqrt_t",
            "qmle_tk2",
            "t_ratio",
        ] {
            let n = Normalization::parse(s).unwrap();
            assert_eq!(n.name(), s);
            assert_eq!(serde_json::to_string(&n).unwrap(), format!("\"{s}\""));
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::new(Design::Kappa { kappa: 3.0 }, Normalization::Lln, 1);
        assert!(cfg.validate().is_ok());
        cfg.replications = 99;
        assert!(cfg.validate().is_err());
        cfg.replications = 100;
        cfg.spans = vec![10.0, 5.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn design_resolution() {
        let (p, k) = resolve_design(&Design::Kappa { kappa: 3.0 }, &exp(), 1, 1000, 100).unwrap();
        assert_eq!(k, 3.0);
        assert!((p.omega + p.alpha - 1.0).abs() < 1e-15);
        let (p, _) = resolve_design(
            &Design::Params {
                omega: 1.0,
                alpha: 0.0,
            },
            &exp(),
            1,
            1000,
            100,
        )
        .unwrap();
        assert_eq!(p.alpha, 0.0);
    }

    #[test]
    fn poisson_counting_small() {
        let cfg = ExperimentConfig {
            spans: vec![500.0, 2000.0],
            replications: 300,
            constant_samples: 20_000,
            ..ExperimentConfig::new(
                Design::Params {
                    omega: 1.0,
                    alpha: 0.0,
                },
                Normalization::CltKGt2,
                5,
            )
        };
        let rep = run_counting_experiment(&cfg, &exp()).unwrap();
        for s in &rep.spans {
            assert_eq!(s.samples.len(), 300);
            let c = s.reference.as_ref().unwrap();
            assert!(c.ks < 1.5 * c.ks_critical_95, "{}", c.ks);
        }
    }

    #[test]
    fn worker_count_does_not_change_report() {
        let base = ExperimentConfig {
            spans: vec![200.0, 400.0],
            replications: 100,
            constant_samples: 5_000,
            ..ExperimentConfig::new(Design::Kappa { kappa: 3.0 }, Normalization::QmleSqrtT, 9)
        };
        let a = run_qmle_experiment(
            &ExperimentConfig {
                workers: Some(1),
                ..base.clone()
            },
            &exp(),
        )
        .unwrap();
        let b = run_qmle_experiment(
            &ExperimentConfig {
                workers: Some(3),
                ..base
            },
            &exp(),
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}
