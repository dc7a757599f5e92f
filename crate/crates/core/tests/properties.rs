mod common;

use acd_core::acd_model::{alpha_for_kappa, tail_index, AcdParams};
use acd_core::harness::{ks_statistic, Reference};
use acd_core::mle::{LikelihoodWorkspace, X0Policy};
use acd_core::rng::{make_stream, InnovationSpec};
use acd_core::sim::{simulate_fixed_count, DurationSeries};
use acd_core::tail::hill_estimator;
use proptest::prelude::*;

fn policy(tag: u8, x0: f64) -> X0Policy {
    match tag % 3 {
        0 => X0Policy::SampleMean,
        1 => X0Policy::StationaryMean,
        _ => X0Policy::Fixed(x0),
    }
}

fn series(omega: f64, alpha: f64, n: usize, seed: u64, span_pad: f64) -> DurationSeries {
    let p = AcdParams::new(omega, alpha).unwrap();
    let s = simulate_fixed_count(
        &p,
        &InnovationSpec::UnitExponential,
        n,
        &mut make_stream(seed, 0),
        200,
    )
    .unwrap();
    let span = s.last_time() + span_pad;
    DurationSeries::from_durations(s.durations, Some(span), s.initial_state).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn derivatives_agree_with_finite_differences(
        gen_alpha in 0.0..1.2f64,
        omega in 0.05..3.0f64,
        alpha in 0.0..0.95f64,
        n in 20usize..400,
        seed in any::<u64>(),
        tag in any::<u8>(),
        x0 in 0.0..5.0f64,
        pad in 0.0..3.0f64,
        remainder in any::<bool>(),
    ) {
        let s = series(1.0, gen_alpha, n, seed, pad);
        let ws = LikelihoodWorkspace::new(&s, policy(tag, x0), remainder).unwrap();
        let p = AcdParams::new(omega, alpha).unwrap();
        let e = common::score_error(&p, &ws);
        prop_assert!(e < 1e-6, "score error {e}");
        let e = common::information_error(&p, &ws);
        prop_assert!(e < 1e-5, "information error {e}");
    }

    #[test]
    fn hill_is_scale_and_order_invariant(
        data in prop::collection::vec(0.01..1e3f64, 30..300),
        scale in 1e-3..1e3f64,
        frac in 0.05..0.5f64,
    ) {
        let k = ((data.len() as f64 * frac) as usize).max(1);
        let base = hill_estimator(&data, k).unwrap().kappa_hat;
        let scaled: Vec<f64> = data.iter().map(|x| x * scale).collect();
        let s = hill_estimator(&scaled, k).unwrap().kappa_hat;
        if base.is_finite() {
            prop_assert!((s - base).abs() <= 1e-9 * base, "{base} vs {s}");
        } else {
            prop_assert!(!s.is_finite());
        }
        let mut rev = data.clone();
        rev.reverse();
        prop_assert_eq!(hill_estimator(&rev, k).unwrap().kappa_hat.to_bits(), base.to_bits());
    }

    #[test]
    fn alpha_for_kappa_is_decreasing_and_inverts(k1 in 0.1..8.0f64, dk in 0.01..2.0f64) {
        let (a1, a2) = (alpha_for_kappa(k1).unwrap(), alpha_for_kappa(k1 + dk).unwrap());
        prop_assert!(a2 < a1);
        let back = tail_index(a1, &InnovationSpec::UnitExponential).unwrap();
        prop_assert!((back - k1).abs() < 1e-8 * k1.max(1.0), "{k1} -> {a1} -> {back}");
    }

    #[test]
    fn ks_is_a_bounded_symmetric_distance(
        a in prop::collection::vec(-10.0..10.0f64, 1..80),
        b in prop::collection::vec(-10.0..10.0f64, 1..80),
    ) {
        let ab = ks_statistic(&a, Reference::Sample(&b)).unwrap();
        let ba = ks_statistic(&b, Reference::Sample(&a)).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert_eq!(ks_statistic(&a, Reference::Sample(&a)).unwrap(), 0.0);
    }

    #[test]
    fn event_times_accumulate_durations(xs in prop::collection::vec(1e-3..10.0f64, 1..200)) {
        let s = DurationSeries::from_durations(xs.clone(), None, 1.0).unwrap();
        let mut t = 0.0;
        for (i, x) in xs.iter().enumerate() {
            t += x;
            prop_assert_eq!(s.event_times[i], t);
        }
        prop_assert!(s.event_times.windows(2).all(|w| w[1] > w[0]));
    }
}
