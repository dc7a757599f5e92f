//! Exponential quasi-likelihood for the ACD(1) model on a fixed span:
//! evaluation, analytic score and observed information, the end-of-span
//! remainder term, and a safeguarded Newton maximizer.
//!
//! With `psi_i = omega + alpha x_{i-1}` and `v_i = (1, x_{i-1})' / psi_i`,
//!
//! ```text
//! L_T(theta)   = -sum_i [ln psi_i + x_i / psi_i]
//! dL/dtheta    =  sum_i (x_i/psi_i - 1) v_i
//! -d2L/dtheta2 =  sum_i (2 x_i/psi_i - 1) v_i v_i'
//! R_T(theta)   = -(T - t_N) / psi_{N+1}
//! ```

use serde::{Deserialize, Serialize};

use crate::acd_model::AcdParams;
use crate::error::{AcdError, Result};
use crate::linalg::{norm_inf, Mat2, Vec2};
use crate::rng::EULER_GAMMA;
use crate::sim::DurationSeries;

/// How `x_0` (and so `psi_1`) is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum X0Policy {
    /// Sample mean of the observed durations.
    #[default]
    SampleMean,
    /// `omega / (1 - alpha)` at the evaluated parameters (requires alpha < 1).
    StationaryMean,
    Fixed(f64),
}

/// The likelihood's data and conditioning conventions.
#[derive(Debug, Clone)]
pub struct LikelihoodWorkspace<'a> {
    series: &'a DurationSeries,
    x0_policy: X0Policy,
    include_remainder: bool,
    sample_mean: f64,
}

impl<'a> LikelihoodWorkspace<'a> {
    pub fn new(
        series: &'a DurationSeries,
        x0_policy: X0Policy,
        include_remainder: bool,
    ) -> Result<Self> {
        if series.is_empty() {
            return Err(AcdError::EmptyInput);
        }
        if include_remainder && series.span.is_none() {
            return Err(AcdError::InvalidParameter(
                "the remainder term needs an observation span".into(),
            ));
        }
        if let X0Policy::Fixed(x0) = x0_policy {
            if !(x0 >= 0.0 && x0.is_finite()) {
                return Err(AcdError::InvalidParameter(format!(
                    "fixed x0 must be non-negative, got {x0}"
                )));
            }
        }
        Ok(Self {
            series,
            x0_policy,
            include_remainder,
            sample_mean: series.sample_mean(),
        })
    }

    pub fn series(&self) -> &DurationSeries {
        self.series
    }

    pub fn include_remainder(&self) -> bool {
        self.include_remainder
    }

    pub fn x0_policy(&self) -> X0Policy {
        self.x0_policy
    }
}

/// `psi_1` with its gradient and Hessian in `(omega, alpha)`.
fn first_psi(params: &AcdParams, ws: &LikelihoodWorkspace) -> Result<(f64, Vec2, Mat2)> {
    let (w, a) = (params.omega, params.alpha);
    match ws.x0_policy {
        X0Policy::SampleMean => Ok((w + a * ws.sample_mean, [1.0, ws.sample_mean], Mat2::ZERO)),
        X0Policy::Fixed(x0) => Ok((w + a * x0, [1.0, x0], Mat2::ZERO)),
        X0Policy::StationaryMean => {
            if a >= 1.0 {
                return Err(AcdError::InvalidParameter(format!(
                    "x0 = omega/(1-alpha) undefined for alpha = {a}"
                )));
            }
            let q = 1.0 / (1.0 - a);
            let cross = q * q;
            Ok((
                w * q,
                [q, w * q * q],
                Mat2::new(0.0, cross, cross, 2.0 * w * q * q * q),
            ))
        }
    }
}

/// Compensated sum, so that near the optimum likelihood differences stay
/// resolvable for long series.
#[derive(Default)]
struct Neumaier {
    sum: f64,
    carry: f64,
}

impl Neumaier {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.carry
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Evaluation {
    loglik: f64,
    score: Vec2,
    info: Mat2,
}

#[derive(Clone, Copy, PartialEq, PartialOrd)]
enum Order {
    Value,
    Gradient,
    Hessian,
}

fn evaluate(params: &AcdParams, ws: &LikelihoodWorkspace, order: Order) -> Result<Evaluation> {
    let (w, a) = (params.omega, params.alpha);
    let xs = &ws.series.durations;
    let (psi1, grad1, hess1) = first_psi(params, ws)?;

    let mut ll = Neumaier::default();
    let mut g = [0.0; 2];
    let mut j = [0.0; 3];

    let mut add = |psi: f64, x: f64, dpsi: Vec2, index: usize| -> Result<()> {
        if !(psi > 0.0 && psi.is_finite()) {
            return Err(AcdError::NonPositivePsi { index, psi });
        }
        let r = x / psi;
        ll.add(-(psi.ln() + r));
        if order >= Order::Gradient {
            let c = (r - 1.0) / psi;
            g[0] += c * dpsi[0];
            g[1] += c * dpsi[1];
        }
        if order == Order::Hessian {
            let h = (2.0 * r - 1.0) / (psi * psi);
            j[0] += h * dpsi[0] * dpsi[0];
            j[1] += h * dpsi[0] * dpsi[1];
            j[2] += h * dpsi[1] * dpsi[1];
        }
        Ok(())
    };

    add(psi1, xs[0], grad1, 1)?;
    for i in 1..xs.len() {
        let prev = xs[i - 1];
        add(w + a * prev, xs[i], [1.0, prev], i + 1)?;
    }

    // Curvature of psi_1 itself (non-zero only for the stationary-mean policy).
    if order == Order::Hessian && hess1 != Mat2::ZERO {
        let c = (xs[0] / psi1 - 1.0) / psi1;
        j[0] -= c * hess1.get(0, 0);
        j[1] -= c * hess1.get(0, 1);
        j[2] -= c * hess1.get(1, 1);
    }

    if ws.include_remainder {
        let span = ws.series.span.expect("checked in workspace");
        let gap = span - ws.series.last_time();
        let last = *xs.last().expect("non-empty");
        let psi = w + a * last;
        if !(psi > 0.0 && psi.is_finite()) {
            return Err(AcdError::NonPositivePsi {
                index: xs.len() + 1,
                psi,
            });
        }
        ll.add(-gap / psi);
        let c = gap / (psi * psi);
        g[0] += c;
        g[1] += c * last;
        let h = 2.0 * gap / (psi * psi * psi);
        j[0] += h;
        j[1] += h * last;
        j[2] += h * last * last;
    }

    Ok(Evaluation {
        loglik: ll.total(),
        score: g,
        info: Mat2::new(j[0], j[1], j[1], j[2]),
    })
}

/// `L_T(theta)`, plus `R_T(theta)` when the workspace includes the remainder.
pub fn log_likelihood(params: &AcdParams, ws: &LikelihoodWorkspace) -> Result<f64> {
    Ok(evaluate(params, ws, Order::Value)?.loglik)
}

/// Analytic gradient of [`log_likelihood`].
pub fn score(params: &AcdParams, ws: &LikelihoodWorkspace) -> Result<Vec2> {
    Ok(evaluate(params, ws, Order::Gradient)?.score)
}

/// Analytic negative Hessian of [`log_likelihood`].
pub fn information(params: &AcdParams, ws: &LikelihoodWorkspace) -> Result<Mat2> {
    Ok(evaluate(params, ws, Order::Hessian)?.info)
}

/// `R_T(theta) = -(T - t_{N_T}) / psi_{N_T+1}(theta)` for a fixed-span series.
pub fn remainder_term(params: &AcdParams, series: &DurationSeries) -> Result<f64> {
    let span = series.span.ok_or_else(|| {
        AcdError::InvalidParameter("the remainder term needs an observation span".into())
    })?;
    let last = series
        .durations
        .last()
        .copied()
        .unwrap_or(series.initial_state);
    Ok(-(span - series.last_time()) / (params.omega + params.alpha * last))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub x0_policy: X0Policy,
    pub include_remainder: bool,
    pub max_iterations: usize,
    /// Bound on the relative gradient `|g_j| max(|phi_j|,1) / max(|L|,1)`.
    pub gradient_tolerance: f64,
    /// Bound on the sup-norm of the Newton step in `(ln omega, alpha)`.
    pub step_tolerance: f64,
    /// Stationarity bound used for the starting value and the post-fit check.
    pub stationarity_bound: f64,
    pub start: Option<AcdParams>,
    /// Null value for the alpha t-ratio.
    pub null_alpha: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            x0_policy: X0Policy::SampleMean,
            include_remainder: false,
            max_iterations: 200,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-10,
            stationarity_bound: EULER_GAMMA.exp(),
            start: None,
            null_alpha: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta_hat: AcdParams,
    pub loglik: f64,
    pub score_at_opt: Vec2,
    pub observed_info: Mat2,
    /// Square roots of the diagonal of the inverse observed information.
    pub std_errors: Option<Vec2>,
    pub null_alpha: Option<f64>,
    pub t_ratio: Option<f64>,
    pub n_events: usize,
    pub span: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Alpha estimate pinned at the lower bound 0.
    pub boundary_flag: bool,
    pub include_remainder: bool,
    pub x0_policy: X0Policy,
    pub starts_tried: usize,
    pub warnings: Vec<String>,
    /// Log-likelihood at each accepted iterate of the winning start.
    pub loglik_trace: Vec<f64>,
}

impl EstimationResult {
    pub fn inverse_information(&self) -> Option<Mat2> {
        if self.observed_info.is_positive_definite() {
            self.observed_info.inverse()
        } else {
            None
        }
    }
}

/// `(alpha_hat - null_alpha) / se`, `se^2` the alpha entry of the inverse
/// observed information at the estimate.
pub fn t_ratio(result: &EstimationResult, null_alpha: f64) -> Result<f64> {
    if !result.converged {
        return Err(AcdError::NotConverged {
            iterations: result.iterations,
        });
    }
    if result.boundary_flag {
        return Err(AcdError::BoundaryEstimate);
    }
    let inv = result
        .inverse_information()
        .ok_or(AcdError::SingularInformation)?;
    let var = inv.get(1, 1);
    if !(var > 0.0) {
        return Err(AcdError::SingularInformation);
    }
    Ok((result.theta_hat.alpha - null_alpha) / var.sqrt())
}

struct NewtonRun {
    params: AcdParams,
    eval: Evaluation,
    converged: bool,
    iterations: usize,
    boundary: bool,
    trace: Vec<f64>,
}

/// Chain rule into `phi = (ln omega, alpha)`.
fn to_log_omega(params: &AcdParams, ev: &Evaluation) -> (Vec2, Mat2) {
    let w = params.omega;
    let g = [w * ev.score[0], ev.score[1]];
    let j = Mat2::new(
        w * w * ev.info.get(0, 0) - w * ev.score[0],
        w * ev.info.get(0, 1),
        w * ev.info.get(0, 1),
        ev.info.get(1, 1),
    );
    (g, j)
}

/// Newton direction with a Levenberg shift when the curvature is not
/// positive definite.
fn ascent_direction(g: Vec2, j: &Mat2) -> Vec2 {
    let eig = j.sym_eigenvalues();
    let scale = eig[1].abs().max(1.0);
    let shifted = if eig[0] > 1e-12 * scale {
        *j
    } else {
        j.add(&Mat2::IDENTITY.scale(-eig[0] + 1e-6 * scale))
    };
    match shifted.inverse() {
        Some(inv) => inv.mul_vec(g),
        None => g,
    }
}

fn newton(ws: &LikelihoodWorkspace, start: AcdParams, opts: &FitOptions) -> Result<NewtonRun> {
    let mut params = start;
    let mut ev = evaluate(&params, ws, Order::Hessian)?;
    let mut trace = vec![ev.loglik];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let (g, j) = to_log_omega(&params, &ev);
        let phi = [params.omega.ln(), params.alpha];
        let at_bound = params.alpha == 0.0 && g[1] <= 0.0;
        let d = if at_bound {
            let c = j.get(0, 0);
            [if c > 0.0 { g[0] / c } else { g[0] }, 0.0]
        } else {
            ascent_direction(g, &j)
        };
        let free = if at_bound { 1 } else { 2 };
        let rel_grad = (0..free)
            .map(|k| g[k].abs() * phi[k].abs().max(1.0))
            .fold(0.0, f64::max)
            / ev.loglik.abs().max(1.0);
        if rel_grad < opts.gradient_tolerance && norm_inf(d) < opts.step_tolerance {
            converged = true;
            break;
        }

        let project = |t: f64| AcdParams {
            omega: (phi[0] + t * d[0]).exp(),
            alpha: (phi[1] + t * d[1]).max(0.0),
        };
        let full = project(1.0);
        let full_gain = g[0] * (full.omega.ln() - phi[0]) + g[1] * (full.alpha - phi[1]);
        let noise = 16.0 * f64::EPSILON * ev.loglik.abs().max(1.0);
        if full_gain <= noise {
            // Likelihood values can no longer resolve the remaining ascent,
            // so the Newton step is judged by the gradient instead.
            let next = evaluate(&full, ws, Order::Hessian).ok().filter(|cand| {
                let (cg, _) = to_log_omega(&full, cand);
                let cphi = [full.omega.ln(), full.alpha];
                let cand_grad = (0..free)
                    .map(|k| cg[k].abs() * cphi[k].abs().max(1.0))
                    .fold(0.0, f64::max)
                    / cand.loglik.abs().max(1.0);
                cand.loglik >= ev.loglik && cand_grad < rel_grad
            });
            match next {
                Some(cand) => {
                    params = full;
                    ev = cand;
                    trace.push(ev.loglik);
                    continue;
                }
                None => {
                    converged = rel_grad < opts.gradient_tolerance;
                    break;
                }
            }
        }

        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let cand = project(t);
            let moved = [cand.omega.ln() - phi[0], cand.alpha - phi[1]];
            let predicted = g[0] * moved[0] + g[1] * moved[1];
            if let Ok(val) = evaluate(&cand, ws, Order::Value) {
                if val.loglik.is_finite() && val.loglik >= ev.loglik + 1e-4 * predicted {
                    accepted = Some(cand);
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some(next) => {
                params = next;
                ev = evaluate(&params, ws, Order::Hessian)?;
                trace.push(ev.loglik);
            }
            None => {
                // No ascent left at working precision.
                converged = rel_grad < opts.gradient_tolerance;
                break;
            }
        }
    }
    let boundary = params.alpha == 0.0;
    Ok(NewtonRun {
        params,
        eval: ev,
        converged,
        iterations,
        boundary,
        trace,
    })
}

/// Maximizes the quasi-likelihood over `omega > 0`, `alpha >= 0`.
///
/// Non-convergence is reported through `converged = false` on the returned
/// result rather than an error.
pub fn fit(series: &DurationSeries, options: &FitOptions) -> Result<EstimationResult> {
    if series.len() < 10 {
        return Err(AcdError::TooFewSamples {
            needed: 10,
            got: series.len(),
        });
    }
    let first = series.durations[0];
    if series.durations.iter().all(|&x| x == first) {
        return Err(AcdError::DegenerateSeries("all durations are equal".into()));
    }
    let ws = LikelihoodWorkspace::new(series, options.x0_policy, options.include_remainder)?;
    let xbar = series.sample_mean();

    let med = crate::stats::median(&series.durations);

    let alpha0 = 0.5 * (options.stationarity_bound / 2.0).min(1.0);
    let mut starts = vec![options.start.unwrap_or(AcdParams {
        omega: xbar * (1.0 - alpha0),
        alpha: alpha0,
    })];
    // Median-scaled starts matter for heavy-tailed data, where the sample
    // mean is dominated by a few durations.
    starts.push(AcdParams {
        omega: 0.5 * med,
        alpha: 0.5,
    });
    starts.push(AcdParams {
        omega: 0.2 * med,
        alpha: 1.0,
    });
    for a in [0.1, 0.9] {
        starts.push(AcdParams {
            omega: xbar * (1.0 - a),
            alpha: a,
        });
    }

    // omega driven to zero: the log-omega gradient vanishes there, so such
    // runs can look stationary without being a maximum.
    let collapsed = |r: &NewtonRun| r.params.omega < 1e-8 * med;
    let acceptable = |r: &NewtonRun| r.converged && !collapsed(r);
    let mut best: Option<NewtonRun> = None;
    let mut tried = 0;
    let mut last_err = None;
    for start in starts {
        tried += 1;
        let run = match newton(&ws, start, options) {
            Ok(run) => run,
            Err(e) => {
                log::debug!("start {start:?} failed: {e}");
                last_err = Some(e);
                continue;
            }
        };
        let better = match &best {
            None => true,
            Some(b) => (acceptable(&run), run.eval.loglik) > (acceptable(b), b.eval.loglik),
        };
        if better {
            best = Some(run);
        }
        if best.as_ref().is_some_and(acceptable) {
            break;
        }
    }
    let Some(mut run) = best else {
        return Err(last_err.unwrap_or(AcdError::NotConverged { iterations: 0 }));
    };
    let omega_collapsed = collapsed(&run);
    if omega_collapsed {
        run.converged = false;
    }

    let info = run.eval.info;
    let std_errors = if info.is_positive_definite() {
        info.inverse()
            .map(|inv| [inv.get(0, 0).sqrt(), inv.get(1, 1).sqrt()])
    } else {
        None
    };
    let mut warnings = Vec::new();
    if omega_collapsed {
        warnings.push(format!(
            "omega_hat = {:e} collapsed towards zero from every start",
            run.params.omega
        ));
    } else if !run.converged {
        warnings.push(format!(
            "optimizer did not converge in {} iterations",
            run.iterations
        ));
    }
    if run.params.alpha >= options.stationarity_bound {
        let msg = format!(
            "alpha_hat = {:.4} is at or above the stationarity bound {:.4}",
            run.params.alpha, options.stationarity_bound
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let mut result = EstimationResult {
        theta_hat: run.params,
        loglik: run.eval.loglik,
        score_at_opt: run.eval.score,
        observed_info: info,
        std_errors,
        null_alpha: options.null_alpha,
        t_ratio: None,
        n_events: series.len(),
        span: series.span,
        converged: run.converged,
        iterations: run.iterations,
        boundary_flag: run.boundary,
        include_remainder: options.include_remainder,
        x0_policy: options.x0_policy,
        starts_tried: tried,
        warnings,
        loglik_trace: run.trace,
    };
    if let Some(null) = options.null_alpha {
        result.t_ratio = t_ratio(&result, null).ok();
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_stream;
    use crate::rng::InnovationSpec;
    use crate::sim::{simulate_fixed_count, simulate_fixed_span};

    fn series(xs: &[f64]) -> DurationSeries {
        DurationSeries::from_durations(xs.to_vec(), None, 1.0).unwrap()
    }

    #[test]
    fn hand_evaluated_likelihoods() {
        let s = series(&[1.0]);
        let ws = LikelihoodWorkspace::new(&s, X0Policy::SampleMean, false).unwrap();
        let p = AcdParams::new(1.0, 0.0).unwrap();
        assert_eq!(log_likelihood(&p, &ws).unwrap(), -1.0);

        let s = series(&[1.0, 1.0]);
        let ws = LikelihoodWorkspace::new(&s, X0Policy::Fixed(1.0), false).unwrap();
        let p = AcdParams::new(0.5, 0.5).unwrap();
        assert_eq!(log_likelihood(&p, &ws).unwrap(), -2.0);
    }

    #[test]
    fn hand_evaluated_scores_and_information() {
        let s = series(&[1.0, 1.0]);
        let ws = LikelihoodWorkspace::new(&s, X0Policy::Fixed(1.0), false).unwrap();
        assert_eq!(
            score(&AcdParams::new(1.0, 0.0).unwrap(), &ws).unwrap(),
            [0.0, 0.0]
        );
        assert_eq!(
            score(&AcdParams::new(2.0, 0.0).unwrap(), &ws).unwrap(),
            [-0.5, -0.5]
        );
        let info = information(&AcdParams::new(1.0, 0.0).unwrap(), &ws).unwrap();
        assert_eq!(info, Mat2::new(2.0, 2.0, 2.0, 2.0));
        assert!(info.is_symmetric());
    }

    #[test]
    fn alpha_zero_profile_maximizer_is_sample_mean() {
        let xs = [0.3, 2.0, 1.1, 0.7, 4.2, 0.05];
        let s = series(&xs);
        let ws = LikelihoodWorkspace::new(&s, X0Policy::SampleMean, false).unwrap();
        let xbar = xs.iter().sum::<f64>() / xs.len() as f64;
        let at = |w: f64| log_likelihood(&AcdParams::new(w, 0.0).unwrap(), &ws).unwrap();
        assert!(score(&AcdParams::new(xbar, 0.0).unwrap(), &ws).unwrap()[0].abs() < 1e-14);
        assert!(at(xbar) > at(xbar * 1.01) && at(xbar) > at(xbar * 0.99));
    }

    #[test]
    fn remainder_adds_gap_term() {
        let s = DurationSeries::from_durations(vec![1.0, 2.0], Some(4.0), 1.0).unwrap();
        let p = AcdParams::new(0.5, 0.25).unwrap();
        let r = remainder_term(&p, &s).unwrap();
        assert_eq!(r, -1.0 / (0.5 + 0.25 * 2.0));
        let plain = LikelihoodWorkspace::new(&s, X0Policy::SampleMean, false).unwrap();
        let with = LikelihoodWorkspace::new(&s, X0Policy::SampleMean, true).unwrap();
        let diff = log_likelihood(&p, &with).unwrap() - log_likelihood(&p, &plain).unwrap();
        assert!((diff - r).abs() < 1e-15);
        let no_span = series(&[1.0, 2.0]);
        assert!(LikelihoodWorkspace::new(&no_span, X0Policy::SampleMean, true).is_err());
    }

    #[test]
    fn stationary_mean_policy_requires_alpha_below_one() {
        let s = series(&[1.0, 2.0, 0.5]);
        let ws = LikelihoodWorkspace::new(&s, X0Policy::StationaryMean, false).unwrap();
        assert!(log_likelihood(&AcdParams::new(1.0, 1.2).unwrap(), &ws).is_err());
        assert!(log_likelihood(&AcdParams::new(1.0, 0.2).unwrap(), &ws).is_ok());
    }

    #[test]
    fn fit_rejects_short_and_degenerate() {
        assert!(matches!(
            fit(&series(&[1.0; 5]), &FitOptions::default()),
            Err(AcdError::TooFewSamples { .. })
        ));
        assert!(matches!(
            fit(&series(&[2.0; 20]), &FitOptions::default()),
            Err(AcdError::DegenerateSeries(_))
        ));
    }

    #[test]
    fn fit_iid_exponential() {
        let p = AcdParams::new(1.0, 0.0).unwrap();
        let s = simulate_fixed_count(
            &p,
            &InnovationSpec::UnitExponential,
            100_000,
            &mut make_stream(1, 0),
            0,
        )
        .unwrap();
        let r = fit(&s, &FitOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.theta_hat.alpha < 0.01, "{:?}", r.theta_hat);
        assert!((r.theta_hat.omega - 1.0).abs() < 0.02, "{:?}", r.theta_hat);
    }

    #[test]
    fn fit_recovers_parameters_and_ascends() {
        let p = AcdParams::new(0.5, 0.5).unwrap();
        let s = simulate_fixed_span(
            &p,
            &InnovationSpec::UnitExponential,
            1e4,
            &mut make_stream(2, 0),
            10_000,
        )
        .unwrap();
        let r = fit(
            &s,
            &FitOptions {
                null_alpha: Some(0.5),
                ..FitOptions::default()
            },
        )
        .unwrap();
        assert!(r.converged && !r.boundary_flag);
        let se = r.std_errors.unwrap();
        assert!((r.theta_hat.alpha - 0.5).abs() < 4.0 * se[1]);
        assert!((r.theta_hat.omega - 0.5).abs() < 4.0 * se[0]);
        assert!(r.score_at_opt[0].abs() < 1e-6 && r.score_at_opt[1].abs() < 1e-6);
        assert!(r.observed_info.is_positive_definite());
        for w in r.loglik_trace.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert!(r.t_ratio.unwrap().abs() < 4.0);
        let t0 = t_ratio(&r, r.theta_hat.alpha).unwrap();
        assert_eq!(t0, 0.0);
    }

    fn fd_check(ws: &LikelihoodWorkspace, p: AcdParams) {
        let f = |w: f64, a: f64| log_likelihood(&AcdParams { omega: w, alpha: a }, ws).unwrap();
        let g = |w: f64, a: f64| score(&AcdParams { omega: w, alpha: a }, ws).unwrap();
        let hw = 1e-6 * p.omega.max(1e-3);
        let ha = 1e-6 * p.alpha.max(1e-3);
        let fd = [
            (f(p.omega + hw, p.alpha) - f(p.omega - hw, p.alpha)) / (2.0 * hw),
            (f(p.omega, p.alpha + ha) - f(p.omega, p.alpha - ha)) / (2.0 * ha),
        ];
        let an = score(&p, ws).unwrap();
        let scale = an[0].abs().max(an[1].abs()).max(1.0);
        for k in 0..2 {
            assert!(
                (an[k] - fd[k]).abs() / scale < 1e-6,
                "score {k}: {an:?} vs {fd:?}"
            );
        }
        let info = information(&p, ws).unwrap();
        let cols = [
            {
                let (u, d) = (g(p.omega + hw, p.alpha), g(p.omega - hw, p.alpha));
                [-(u[0] - d[0]) / (2.0 * hw), -(u[1] - d[1]) / (2.0 * hw)]
            },
            {
                let (u, d) = (g(p.omega, p.alpha + ha), g(p.omega, p.alpha - ha));
                [-(u[0] - d[0]) / (2.0 * ha), -(u[1] - d[1]) / (2.0 * ha)]
            },
        ];
        let scale = info.frobenius().max(1.0);
        for (c, col) in cols.iter().enumerate() {
            for (r, fd) in col.iter().enumerate() {
                assert!((info.get(r, c) - fd).abs() / scale < 1e-5, "info {r}{c}");
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let p0 = AcdParams::new(0.5, 0.5).unwrap();
        let s = simulate_fixed_span(
            &p0,
            &InnovationSpec::UnitExponential,
            500.0,
            &mut make_stream(3, 0),
            100,
        )
        .unwrap();
        for policy in [
            X0Policy::SampleMean,
            X0Policy::StationaryMean,
            X0Policy::Fixed(0.3),
        ] {
            for rem in [false, true] {
                let ws = LikelihoodWorkspace::new(&s, policy, rem).unwrap();
                for p in [(0.5, 0.5), (1.3, 0.1), (0.2, 0.8)] {
                    fd_check(&ws, AcdParams::new(p.0, p.1).unwrap());
                }
            }
        }
    }
}
