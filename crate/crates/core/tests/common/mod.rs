#![allow(dead_code)]

use acd_core::acd_model::AcdParams;
use acd_core::linalg::Mat2;
use acd_core::mle::{information, log_likelihood, score, LikelihoodWorkspace};

/// Five-point central difference of `f` at `x` with step `h`.
pub fn five_point(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (8.0 * (f(x + h) - f(x - h)) - (f(x + 2.0 * h) - f(x - 2.0 * h))) / (12.0 * h)
}

/// Largest error of the analytic score against differences of `L`, relative
/// to `max(|score|_inf, 1)`.
pub fn score_error(p: &AcdParams, ws: &LikelihoodWorkspace) -> f64 {
    let ll = |w: f64, a: f64| log_likelihood(&AcdParams { omega: w, alpha: a }, ws).unwrap();
    let (hw, ha) = steps(p);
    let fd = [
        five_point(|w| ll(w, p.alpha), p.omega, hw),
        five_point(|a| ll(p.omega, a), p.alpha, ha),
    ];
    let an = score(p, ws).unwrap();
    let scale = an[0].abs().max(an[1].abs()).max(1.0);
    (0..2)
        .map(|k| (an[k] - fd[k]).abs() / scale)
        .fold(0.0, f64::max)
}

/// Largest error of the observed information against differences of the
/// score, relative to `max(|J|_F, 1)`.
pub fn information_error(p: &AcdParams, ws: &LikelihoodWorkspace) -> f64 {
    let sc = |w: f64, a: f64, k: usize| score(&AcdParams { omega: w, alpha: a }, ws).unwrap()[k];
    let (hw, ha) = steps(p);
    let info: Mat2 = information(p, ws).unwrap();
    let scale = info.frobenius().max(1.0);
    let mut worst: f64 = 0.0;
    for r in 0..2 {
        let dw = -five_point(|w| sc(w, p.alpha, r), p.omega, hw);
        let da = -five_point(|a| sc(p.omega, a, r), p.alpha, ha);
        worst = worst
            .max((info.get(r, 0) - dw).abs() / scale)
            .max((info.get(r, 1) - da).abs() / scale);
    }
    worst
}

fn steps(p: &AcdParams) -> (f64, f64) {
    // alpha may sit at 0, so its step never crosses into negative values
    // large enough to break psi > 0.
    (1e-4 * p.omega, 1e-4 * p.alpha.max(0.05))
}
