//! Parameter calculus for the ACD(1) recursion `x_i = psi_i * eps_i`,
//! `psi_i = omega + alpha * x_{i-1}`: stationarity, tail index, stationary
//! moments and Monte Carlo estimates of the constants in the counting and
//! likelihood limit laws.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{AcdError, Result};
use crate::linalg::{Mat2, Vec2};
use crate::report::float_or_string;
use crate::rng::{make_stream, InnovationSpec, RandomStream};
use crate::stats::{Estimate, RunningMoments};

/// Parameters `theta = (omega, alpha)` of the conditional duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcdParams {
    pub omega: f64,
    pub alpha: f64,
}

impl AcdParams {
    pub fn new(omega: f64, alpha: f64) -> Result<Self> {
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(AcdError::InvalidParameter(format!(
                "omega must be positive and finite, got {omega}"
            )));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(AcdError::InvalidParameter(format!(
                "alpha must be non-negative and finite, got {alpha}"
            )));
        }
        Ok(Self { omega, alpha })
    }

    /// Checks `alpha < a_u` for the given innovations.
    pub fn check_stationary(&self, spec: &InnovationSpec) -> Result<()> {
        let bound = stationarity_bound(spec)?;
        if self.alpha < bound {
            Ok(())
        } else {
            Err(AcdError::InvalidParameter(format!(
                "alpha = {} is not below the stationarity bound a_u = {bound:.4} for {} innovations",
                self.alpha,
                spec.name()
            )))
        }
    }

    pub fn as_array(&self) -> Vec2 {
        [self.omega, self.alpha]
    }
}

#[inline]
pub fn psi_next(params: &AcdParams, prev_duration: f64) -> f64 {
    params.omega + params.alpha * prev_duration
}

/// `a_u = exp(-E[ln eps])`; `exp(gamma_E)` for exponential innovations.
pub fn stationarity_bound(spec: &InnovationSpec) -> Result<f64> {
    let mean_log = spec.mean_log();
    if !(mean_log < 0.0) {
        return Err(AcdError::InvalidParameter(format!(
            "E[ln eps] = {mean_log} must be negative (degenerate or invalid innovations)"
        )));
    }
    Ok((-mean_log).exp())
}

const KAPPA_BRACKET: (f64, f64) = (1e-6, 50.0);
const CUSTOM_MOMENT_DRAWS: usize = 200_000;
const CUSTOM_MOMENT_SEED: u64 = 0x7a11_0de7;

/// Safeguarded Newton on a bracket where `f(lo) < 0 < f(hi)`.
fn solve_increasing_root<F>(f: F, mut lo: f64, mut hi: f64) -> f64
where
    F: Fn(f64) -> (f64, f64),
{
    let mut x = 0.5 * (lo + hi);
    let mut dx_old = hi - lo;
    for _ in 0..300 {
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - fx / dfx;
        let next = if dfx > 0.0 && newton > lo && newton < hi && (fx / dfx).abs() < 0.5 * dx_old {
            newton
        } else {
            0.5 * (lo + hi)
        };
        dx_old = (next - x).abs();
        x = next;
        if dx_old <= 4.0 * f64::EPSILON * x.abs() || hi - lo <= 4.0 * f64::EPSILON * x.abs() {
            break;
        }
    }
    x
}

/// Tail index kappa solving `E[(alpha*eps)^kappa] = 1`.
///
/// Exponential innovations use the closed moment `alpha^kappa Gamma(kappa+1)`;
/// custom innovations solve the Monte Carlo moment equation on a fixed
/// 2*10^5-draw sample.
pub fn tail_index(alpha: f64, spec: &InnovationSpec) -> Result<f64> {
    let bound = stationarity_bound(spec)?;
    if !(alpha > 0.0) || alpha >= bound {
        return Err(AcdError::NoSolution { alpha, bound });
    }
    let (lo, hi) = KAPPA_BRACKET;
    let ln_alpha = alpha.ln();
    match spec {
        InnovationSpec::UnitExponential => {
            let f = |k: f64| {
                (
                    k * ln_alpha + ln_gamma(k + 1.0),
                    ln_alpha + digamma(k + 1.0),
                )
            };
            if f(lo).0 >= 0.0 || f(hi).0 <= 0.0 {
                return Err(AcdError::NoSolution { alpha, bound });
            }
            Ok(solve_increasing_root(f, lo, hi))
        }
        InnovationSpec::Custom(_) => {
            let mut stream = make_stream(CUSTOM_MOMENT_SEED, 0);
            let logs: Vec<f64> = (0..CUSTOM_MOMENT_DRAWS)
                .map(|_| ln_alpha + spec.sample(&mut stream).ln())
                .collect();
            let f = |k: f64| log_mean_exp_and_slope(&logs, k);
            let (f_lo, f_hi) = (f(lo), f(hi));
            if !(f_lo.0.is_finite() && f_hi.0.is_finite()) {
                return Err(AcdError::NonFiniteMoment(format!(
                    "E[(alpha*eps)^kappa] at alpha = {alpha}"
                )));
            }
            if f_lo.0 >= 0.0 || f_hi.0 <= 0.0 {
                return Err(AcdError::NoSolution { alpha, bound });
            }
            Ok(solve_increasing_root(f, lo, hi))
        }
    }
}

/// `ln mean(exp(k*l_j))` and its derivative in `k`, via log-sum-exp.
fn log_mean_exp_and_slope(logs: &[f64], k: f64) -> (f64, f64) {
    let max = logs.iter().fold(f64::NEG_INFINITY, |m, &l| m.max(k * l));
    let (mut s, mut ws) = (0.0, 0.0);
    for &l in logs {
        let w = (k * l - max).exp();
        s += w;
        ws += w * l;
    }
    (max + (s / logs.len() as f64).ln(), ws / s)
}

/// Inverse of the exponential tail-index relation: `alpha = Gamma(kappa+1)^(-1/kappa)`.
pub fn alpha_for_kappa(kappa: f64) -> Result<f64> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(AcdError::InvalidParameter(format!(
            "kappa must be positive and finite, got {kappa}"
        )));
    }
    Ok((-ln_gamma(kappa + 1.0) / kappa).exp())
}

/// Stationary mean `omega / (1 - alpha)`, infinite for `alpha >= 1`.
pub fn stationary_mean(params: &AcdParams) -> f64 {
    if params.alpha < 1.0 {
        params.omega / (1.0 - params.alpha)
    } else {
        f64::INFINITY
    }
}

/// Tail index of a design, with `alpha = 0` (i.i.d. durations) mapped to infinity.
pub fn design_tail_index(params: &AcdParams, spec: &InnovationSpec) -> Result<f64> {
    if params.alpha == 0.0 {
        Ok(f64::INFINITY)
    } else {
        tail_index(params.alpha, spec)
    }
}

/// Stationary second moment `E[x^2] = s^2 (omega^2 + 2 omega alpha mu) / (1 - s^2 alpha^2)`,
/// finite iff `s^2 alpha^2 < 1` (kappa > 2).
pub fn stationary_second_moment(params: &AcdParams, spec: &InnovationSpec) -> f64 {
    let s2 = spec.second_moment();
    let (w, a) = (params.omega, params.alpha);
    if s2 * a * a >= 1.0 {
        return f64::INFINITY;
    }
    let mu = stationary_mean(params);
    s2 * (w * w + 2.0 * w * a * mu) / (1.0 - s2 * a * a)
}

/// Starting value for the recursion: the mean when finite, otherwise `omega`.
pub fn initial_duration(params: &AcdParams) -> f64 {
    if params.alpha < 1.0 {
        stationary_mean(params)
    } else {
        params.omega
    }
}

/// Iterates the duration recursion, one innovation draw per step.
#[derive(Debug, Clone)]
pub struct DurationChain<'a> {
    params: AcdParams,
    spec: &'a InnovationSpec,
    prev: f64,
}

impl<'a> DurationChain<'a> {
    pub fn new(params: AcdParams, spec: &'a InnovationSpec, x0: f64) -> Self {
        Self {
            params,
            spec,
            prev: x0,
        }
    }

    /// Starts from [`initial_duration`] and discards `burn_in` steps.
    pub fn burned_in(
        params: AcdParams,
        spec: &'a InnovationSpec,
        stream: &mut RandomStream,
        burn_in: usize,
    ) -> Self {
        let mut chain = Self::new(params, spec, initial_duration(&params));
        for _ in 0..burn_in {
            chain.step(stream);
        }
        chain
    }

    pub fn last(&self) -> f64 {
        self.prev
    }

    /// Advances one step and returns `(psi_i, x_i)`.
    #[inline]
    pub fn step(&mut self, stream: &mut RandomStream) -> (f64, f64) {
        let psi = psi_next(&self.params, self.prev);
        let x = psi * self.spec.sample(stream);
        self.prev = x;
        (psi, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationRule {
    /// Stop once the current term drops below this absolute tolerance.
    pub tolerance: f64,
    pub max_terms: usize,
}

impl Default for TruncationRule {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_terms: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TInfinityDraw {
    pub value: f64,
    pub terms: usize,
    pub cap_hit: bool,
}

/// Truncated draw of `T_inf = sum_{i>=1} alpha^i prod_{j<=i} eps_j`.
pub fn sample_t_infinity(
    stream: &mut RandomStream,
    alpha: f64,
    spec: &InnovationSpec,
    truncation: &TruncationRule,
) -> TInfinityDraw {
    let mut sum = 0.0;
    let mut term = 1.0;
    for i in 1..=truncation.max_terms {
        term *= alpha * spec.sample(stream);
        sum += term;
        if term < truncation.tolerance {
            return TInfinityDraw {
                value: sum,
                terms: i,
                cap_hit: false,
            };
        }
    }
    TInfinityDraw {
        value: sum,
        terms: truncation.max_terms,
        cap_hit: true,
    }
}

/// Sample sizes, seeding and path settings for the Monte Carlo constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloBudget {
    /// Draws (or pairs, or chain steps) per estimated quantity.
    pub samples: usize,
    pub seed: u64,
    /// Independent streams the work is split over.
    pub chunks: usize,
    pub burn_in: usize,
    /// Chain steps between successive stationary draws of `x`.
    pub thin: usize,
    pub truncation: TruncationRule,
}

impl Default for MonteCarloBudget {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            seed: 0,
            chunks: 64,
            burn_in: 10_000,
            thin: 50,
            truncation: TruncationRule::default(),
        }
    }
}

impl MonteCarloBudget {
    pub fn with_samples(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            seed,
            ..Self::default()
        }
    }

    fn chunk_sizes(&self) -> Vec<usize> {
        let chunks = self.chunks.max(1);
        (0..chunks)
            .map(|c| self.samples / chunks + usize::from(c < self.samples % chunks))
            .collect()
    }
}

// Stream-id namespaces so every estimated quantity uses disjoint streams.
const NS_C_NUMERATOR: u64 = 1 << 40;
const NS_C_DENOMINATOR: u64 = 2 << 40;
const NS_OMEGA: u64 = 3 << 40;
const NS_T_INFINITY: u64 = 4 << 40;

/// Runs `work(chunk_index, size, stream)` on every chunk in parallel and
/// merges the per-chunk accumulators in chunk order.
fn chunked<A, F>(budget: &MonteCarloBudget, namespace: u64, work: F) -> Vec<A>
where
    A: Send,
    F: Fn(usize, &mut RandomStream) -> A + Sync,
{
    budget
        .chunk_sizes()
        .into_par_iter()
        .enumerate()
        .map(|(c, size)| {
            let mut stream = make_stream(budget.seed, namespace + c as u64);
            work(size, &mut stream)
        })
        .collect()
}

fn merge_all(parts: &[RunningMoments]) -> RunningMoments {
    let mut acc = RunningMoments::new();
    for p in parts {
        acc.merge(p);
    }
    acc
}

/// `(omega + y)^k - y^k` without cancellation for large `y`.
#[inline]
fn power_increment(omega: f64, y: f64, k: f64) -> f64 {
    if y <= 0.0 {
        omega.powf(k)
    } else {
        y.powf(k) * (k * (omega / y).ln_1p()).exp_m1()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailConstant {
    pub c_kappa: Estimate,
    pub numerator: Estimate,
    pub denominator: Estimate,
}

/// Tail constant of `P(x > z) ~ c_k z^-k`, the Goldie constant of the
/// recursion `x' = A x + B` with `(A, B) = (alpha, omega) eps`:
/// `c_k = E[(B + A x)^k - (A x)^k] / (k E[A^k ln A])`, with `x` stationary
/// and independent of `eps`.
pub fn estimate_c_kappa(
    params: &AcdParams,
    spec: &InnovationSpec,
    kappa: f64,
    mc: &MonteCarloBudget,
) -> Result<TailConstant> {
    params.check_stationary(spec)?;
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(AcdError::InvalidParameter(format!(
            "tail constant needs a finite positive kappa, got {kappa}"
        )));
    }
    let (omega, alpha) = (params.omega, params.alpha);
    let thin = mc.thin.max(1);
    let num_parts = chunked(mc, NS_C_NUMERATOR, |size, stream| {
        let mut chain = DurationChain::burned_in(*params, spec, stream, mc.burn_in);
        let mut acc = RunningMoments::new();
        for _ in 0..size {
            for _ in 0..thin {
                chain.step(stream);
            }
            // x' = eps (omega + alpha x): both SRE coefficients carry eps.
            let e = spec.sample(stream);
            acc.push(power_increment(omega * e, alpha * e * chain.last(), kappa));
        }
        acc
    });
    let den_parts = chunked(mc, NS_C_DENOMINATOR, |size, stream| {
        let mut acc = RunningMoments::new();
        for _ in 0..size {
            let a = alpha * spec.sample(stream);
            acc.push(a.powf(kappa) * a.ln());
        }
        acc
    });
    let num = merge_all(&num_parts);
    let den = merge_all(&den_parts);
    let numerator = Estimate::from_moments(&num);
    let denominator = Estimate::from_moments(&den);
    if !(numerator.estimate.is_finite() && denominator.estimate.is_finite()) {
        return Err(AcdError::NonFiniteMoment("tail-constant moments".into()));
    }
    if denominator.estimate.abs() <= 3.0 * denominator.std_error {
        return Err(AcdError::DenominatorNearZero {
            estimate: denominator.estimate,
            std_error: denominator.std_error,
        });
    }
    let c = numerator.estimate / (kappa * denominator.estimate);
    let rel = (numerator.relative_error().powi(2) + denominator.relative_error().powi(2)).sqrt();
    Ok(TailConstant {
        c_kappa: Estimate::new(c, c.abs() * rel),
        numerator,
        denominator,
    })
}

/// Tail index, stationarity bound, mean and tail constant of a design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailProfile {
    #[serde(with = "float_or_string")]
    pub kappa: f64,
    pub a_u: f64,
    #[serde(with = "float_or_string")]
    pub mu: f64,
    pub c_kappa: Option<Estimate>,
}

pub fn tail_profile(
    params: &AcdParams,
    spec: &InnovationSpec,
    mc: &MonteCarloBudget,
) -> Result<TailProfile> {
    params.check_stationary(spec)?;
    let kappa = design_tail_index(params, spec)?;
    let c_kappa = if kappa.is_finite() {
        Some(estimate_c_kappa(params, spec, kappa, mc)?.c_kappa)
    } else {
        None
    };
    Ok(TailProfile {
        kappa,
        a_u: stationarity_bound(spec)?,
        mu: stationary_mean(params),
        c_kappa,
    })
}

/// Constants of the counting-process and likelihood limit laws, all Monte
/// Carlo estimates with standard errors unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitLawSpec {
    pub params: AcdParams,
    #[serde(with = "float_or_string")]
    pub kappa: f64,
    #[serde(with = "float_or_string")]
    pub mu: f64,
    /// Innovation variance `tau`.
    pub tau: f64,
    /// `Omega = E[v v']`, `v_i = (1, x_{i-1})' / psi_i`.
    pub omega_matrix: Mat2,
    pub omega_std_error: Mat2,
    pub c_kappa: Option<Estimate>,
    /// `m_k = E[(1 + T_inf)^k - T_inf^k]`.
    pub m_kappa: Option<Estimate>,
    /// `E[(1 + T_inf)^2 - T_inf^2]`.
    pub m_two: Estimate,
    /// `V[x]` from the closed-form second moment; present iff kappa > 2.
    pub variance_x: Option<f64>,
    /// `sigma^2 = E[(1+T_inf)^2 - T_inf^2] V[x]`; present iff kappa > 2.
    pub sigma2: Option<Estimate>,
    /// `(c_k m_k)^(-1)`, the factor multiplying `eta^(-k)` in `lambda_k`.
    pub lambda_scale: Option<Estimate>,
    /// `(c_k m_k / mu)^(1/k)`, the factor multiplying `eta` in `gamma_k`.
    pub gamma_scale: Option<Estimate>,
    /// Asymptotic sd of `sqrt(T)(alpha_hat - alpha_0)`: `sqrt(tau mu [Omega^-1]_{22})`.
    pub sigma_alpha: Option<Estimate>,
    pub t_infinity_cap_hits: u64,
    pub budget: MonteCarloBudget,
}

impl LimitLawSpec {
    pub fn sigma2_checked(&self) -> Result<Estimate> {
        self.sigma2
            .ok_or(AcdError::InfiniteVariance { kappa: self.kappa })
    }

    /// Omega eigenvalues, ascending.
    pub fn omega_eigenvalues(&self) -> [f64; 2] {
        self.omega_matrix.sym_eigenvalues()
    }
}

pub fn estimate_omega_matrix(
    params: &AcdParams,
    spec: &InnovationSpec,
    mc: &MonteCarloBudget,
) -> (Mat2, Mat2) {
    let parts = chunked(mc, NS_OMEGA, |size, stream| {
        let mut chain = DurationChain::burned_in(*params, spec, stream, mc.burn_in);
        let mut acc = [RunningMoments::new(); 3];
        for _ in 0..size {
            let prev = chain.last();
            let (psi, _) = chain.step(stream);
            let inv = 1.0 / (psi * psi);
            acc[0].push(inv);
            acc[1].push(prev * inv);
            acc[2].push(prev * prev * inv);
        }
        acc
    });
    // Batch means across chunks give standard errors that absorb the serial
    // correlation of the chain.
    let mut mean = [0.0; 3];
    let mut se = [0.0; 3];
    for j in 0..3 {
        let batch: RunningMoments = parts.iter().map(|p| p[j].mean()).collect();
        let pooled = merge_all(&parts.iter().map(|p| p[j]).collect::<Vec<_>>());
        mean[j] = pooled.mean();
        se[j] = if parts.len() > 1 {
            batch.std_error()
        } else {
            pooled.std_error()
        };
    }
    (
        Mat2::new(mean[0], mean[1], mean[1], mean[2]),
        Mat2::new(se[0], se[1], se[1], se[2]),
    )
}

pub fn estimate_limit_constants(
    params: &AcdParams,
    spec: &InnovationSpec,
    mc: &MonteCarloBudget,
) -> Result<LimitLawSpec> {
    params.check_stationary(spec)?;
    let kappa = design_tail_index(params, spec)?;
    let mu = stationary_mean(params);
    let tau = spec.variance();
    let (omega_matrix, omega_std_error) = estimate_omega_matrix(params, spec, mc);

    let t_parts = chunked(mc, NS_T_INFINITY, |size, stream| {
        let mut m_k = RunningMoments::new();
        let mut m_2 = RunningMoments::new();
        let mut caps = 0u64;
        for _ in 0..size {
            let draw = sample_t_infinity(stream, params.alpha, spec, &mc.truncation);
            caps += u64::from(draw.cap_hit);
            let t = draw.value;
            if kappa.is_finite() {
                m_k.push(power_increment(1.0, t, kappa));
            }
            m_2.push(1.0 + 2.0 * t);
        }
        (m_k, m_2, caps)
    });
    let m_k = merge_all(&t_parts.iter().map(|p| p.0).collect::<Vec<_>>());
    let m_2 = merge_all(&t_parts.iter().map(|p| p.1).collect::<Vec<_>>());
    let t_infinity_cap_hits = t_parts.iter().map(|p| p.2).sum();
    let m_two = Estimate::from_moments(&m_2);

    let (c_kappa, m_kappa) = if kappa.is_finite() {
        (
            Some(estimate_c_kappa(params, spec, kappa, mc)?.c_kappa),
            Some(Estimate::from_moments(&m_k)),
        )
    } else {
        // alpha = 0: T_inf = 0 so m_k = 1; no power-law tail.
        (None, Some(Estimate::exact(1.0)))
    };

    let (variance_x, sigma2) = if kappa > 2.0 {
        let vx = stationary_second_moment(params, spec) - mu * mu;
        (
            Some(vx),
            Some(Estimate::new(m_two.estimate * vx, m_two.std_error * vx)),
        )
    } else {
        (None, None)
    };

    let product = match (c_kappa, m_kappa) {
        (Some(c), Some(m)) => Some((
            c.estimate * m.estimate,
            (c.relative_error().powi(2) + m.relative_error().powi(2)).sqrt(),
        )),
        _ => None,
    };
    let lambda_scale = product.map(|(p, rel)| Estimate::new(1.0 / p, rel / p));
    let gamma_scale = product.filter(|_| mu.is_finite()).map(|(p, rel)| {
        let g = (p / mu).powf(1.0 / kappa);
        Estimate::new(g, g * rel / kappa)
    });

    let sigma_alpha = if mu.is_finite() {
        let sa = |m: &Mat2| (tau * mu * m.get(0, 0) / m.det()).sqrt();
        let centre = sa(&omega_matrix);
        // Delta method with independent perturbations of the three entries.
        let mut var = 0.0;
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            let h = omega_std_error.get(i, j);
            if h > 0.0 {
                let mut bumped = omega_matrix;
                bumped.0[i][j] += h;
                if i != j {
                    bumped.0[j][i] += h;
                }
                var += (sa(&bumped) - centre).powi(2);
            }
        }
        Some(Estimate::new(centre, var.sqrt()))
    } else {
        None
    };

    Ok(LimitLawSpec {
        params: *params,
        kappa,
        mu,
        tau,
        omega_matrix,
        omega_std_error,
        c_kappa,
        m_kappa,
        m_two,
        variance_x,
        sigma2,
        lambda_scale,
        gamma_scale,
        sigma_alpha,
        t_infinity_cap_hits,
        budget: *mc,
    })
}
