//! Path simulation under the two sampling schemes: a fixed observation span
//! `[0, T]` with a random event count, and a fixed event count.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::acd_model::{AcdParams, DurationChain};
use crate::error::{AcdError, Result};
use crate::rng::{InnovationSpec, RandomStream};
use crate::stats;

pub const DEFAULT_BURN_IN: usize = 10_000;
pub const DEFAULT_EVENT_CAP: usize = 100_000_000;

/// Where a simulated series came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMeta {
    pub seed: u64,
    pub stream_id: u64,
    pub params: AcdParams,
    pub innovation: String,
    pub burn_in: usize,
    pub span: Option<f64>,
    pub count: Option<usize>,
}

/// Observed durations `x_1..x_n` with event times `t_i = t_{i-1} + x_i`, `t_0 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationSeries {
    pub durations: Vec<f64>,
    pub event_times: Vec<f64>,
    /// Observation span `T`; absent for fixed-count series.
    pub span: Option<f64>,
    /// `x_0`, the duration preceding the first observed one.
    pub initial_state: f64,
    /// `psi_{N_T+1}` at the generating parameters (simulated fixed-span series only).
    pub true_next_psi: Option<f64>,
    pub provenance: Option<SimulationMeta>,
}

impl DurationSeries {
    /// Builds a series from durations, accumulating event times from 0.
    pub fn from_durations(
        durations: Vec<f64>,
        span: Option<f64>,
        initial_state: f64,
    ) -> Result<Self> {
        if let Some((index, &value)) = durations
            .iter()
            .enumerate()
            .find(|(_, x)| !(**x > 0.0 && x.is_finite()))
        {
            return Err(AcdError::NonPositiveData { index, value });
        }
        let mut t = 0.0;
        let event_times: Vec<f64> = durations
            .iter()
            .map(|x| {
                t += x;
                t
            })
            .collect();
        if let (Some(span), Some(&last)) = (span, event_times.last()) {
            if !(span >= last) {
                return Err(AcdError::InvalidParameter(format!(
                    "span {span} precedes the last event time {last}"
                )));
            }
        }
        Ok(Self {
            durations,
            event_times,
            span,
            initial_state,
            true_next_psi: None,
            provenance: None,
        })
    }

    pub fn len(&self) -> usize {
        self.durations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.durations.is_empty()
    }

    pub fn last_time(&self) -> f64 {
        self.event_times.last().copied().unwrap_or(0.0)
    }

    /// `T` for fixed-span series, otherwise the last event time.
    pub fn horizon(&self) -> f64 {
        self.span.unwrap_or_else(|| self.last_time())
    }

    pub fn sample_mean(&self) -> f64 {
        stats::mean(&self.durations)
    }

    /// First `n` durations as a fixed-count series.
    pub fn truncate_count(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        Self::from_durations(self.durations[..n].to_vec(), None, self.initial_state)
    }

    /// Durations with `t_i <= span`, as a fixed-span series.
    pub fn truncate_span(&self, span: f64) -> Result<Self> {
        let n = self.event_times.partition_point(|&t| t <= span);
        Self::from_durations(self.durations[..n].to_vec(), Some(span), self.initial_state)
    }

    /// CSV with header `t,x` and one row per event.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,x")?;
        for (t, x) in self.event_times.iter().zip(&self.durations) {
            writeln!(out, "{t},{x}")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the `t,x` CSV written by [`DurationSeries::write_csv`].
    /// Durations come from the `x` column; `t` is checked for consistency.
    pub fn read_csv<R: BufRead>(input: R, span: Option<f64>) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let header = loop {
            match lines.next() {
                None => return Err(AcdError::EmptyFile),
                Some((_, line)) => {
                    let line = line?;
                    if !line.trim().is_empty() {
                        break line;
                    }
                }
            }
        };
        let cols: Vec<String> = header
            .split(',')
            .map(|c| c.trim().to_ascii_lowercase())
            .collect();
        let x_col = cols
            .iter()
            .position(|c| c == "x")
            .ok_or_else(|| AcdError::Parse {
                line: 1,
                message: format!("header {header:?} has no `x` column"),
            })?;
        let t_col = cols.iter().position(|c| c == "t");
        let mut durations = Vec::new();
        let mut t_acc = 0.0;
        for (idx, line) in lines {
            let line = line?;
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(AcdError::Parse {
                    line: lineno,
                    message: format!("expected {} fields, found {}", cols.len(), fields.len()),
                });
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| AcdError::Parse {
                    line: lineno,
                    message: format!("{s:?}: {e}"),
                })
            };
            let x = parse(fields[x_col])?;
            if !(x > 0.0 && x.is_finite()) {
                return Err(AcdError::Parse {
                    line: lineno,
                    message: format!("duration {x} is not strictly positive"),
                });
            }
            t_acc += x;
            if let Some(tc) = t_col {
                let t = parse(fields[tc])?;
                if (t - t_acc).abs() > 1e-9 * t_acc.max(1.0) {
                    return Err(AcdError::Parse {
                        line: lineno,
                        message: format!("event time {t} does not equal the running sum {t_acc}"),
                    });
                }
            }
            durations.push(x);
        }
        if durations.is_empty() {
            return Err(AcdError::EmptyFile);
        }
        let x0 = stats::mean(&durations);
        Self::from_durations(durations, span, x0)
    }
}

/// Counting process `N_t` evaluated on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingPath {
    pub grid: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn counting_path(series: &DurationSeries, grid: &[f64]) -> Result<CountingPath> {
    let horizon = series.horizon();
    for w in grid.windows(2) {
        if !(w[0] <= w[1]) {
            return Err(AcdError::InvalidParameter("grid must be sorted".into()));
        }
    }
    if let Some(&p) = grid.iter().find(|&&g| !(0.0..=horizon).contains(&g)) {
        return Err(AcdError::GridOutOfRange {
            point: p,
            span: horizon,
        });
    }
    let counts = grid
        .iter()
        .map(|&g| series.event_times.partition_point(|&t| t <= g))
        .collect();
    Ok(CountingPath {
        grid: grid.to_vec(),
        counts,
    })
}

fn validate_span(params: &AcdParams, spec: &InnovationSpec, span: f64) -> Result<()> {
    params.check_stationary(spec)?;
    if !(span > 0.0 && span.is_finite()) {
        return Err(AcdError::InvalidParameter(format!(
            "span must be positive and finite, got {span}"
        )));
    }
    Ok(())
}

pub fn simulate_fixed_span(
    params: &AcdParams,
    spec: &InnovationSpec,
    span: f64,
    stream: &mut RandomStream,
    burn_in: usize,
) -> Result<DurationSeries> {
    simulate_fixed_span_capped(params, spec, span, stream, burn_in, DEFAULT_EVENT_CAP)
}

/// Runs `burn_in` discarded steps, resets the clock and keeps every event
/// with `t_i <= span`. The straddling duration is drawn (so the stream is
/// consumed exactly as a fixed-count run would) but not stored; its
/// conditional duration is kept in `true_next_psi`.
pub fn simulate_fixed_span_capped(
    params: &AcdParams,
    spec: &InnovationSpec,
    span: f64,
    stream: &mut RandomStream,
    burn_in: usize,
    event_cap: usize,
) -> Result<DurationSeries> {
    validate_span(params, spec, span)?;
    let (seed, stream_id) = (stream.seed(), stream.stream_id());
    let mut chain = DurationChain::burned_in(*params, spec, stream, burn_in);
    let initial_state = chain.last();
    let mut durations = Vec::new();
    let mut event_times = Vec::new();
    let mut t = 0.0;
    let next_psi = loop {
        let (psi, x) = chain.step(stream);
        if t + x > span {
            break psi;
        }
        t += x;
        if durations.len() == event_cap {
            return Err(AcdError::BudgetExceeded { cap: event_cap });
        }
        durations.push(x);
        event_times.push(t);
    };
    let count = durations.len();
    Ok(DurationSeries {
        durations,
        event_times,
        span: Some(span),
        initial_state,
        true_next_psi: Some(next_psi),
        provenance: Some(SimulationMeta {
            seed,
            stream_id,
            params: *params,
            innovation: spec.name().to_string(),
            burn_in,
            span: Some(span),
            count: Some(count),
        }),
    })
}

pub fn simulate_fixed_count(
    params: &AcdParams,
    spec: &InnovationSpec,
    n: usize,
    stream: &mut RandomStream,
    burn_in: usize,
) -> Result<DurationSeries> {
    params.check_stationary(spec)?;
    if n == 0 {
        return Err(AcdError::InvalidParameter(
            "event count must be at least 1".into(),
        ));
    }
    let (seed, stream_id) = (stream.seed(), stream.stream_id());
    let mut chain = DurationChain::burned_in(*params, spec, stream, burn_in);
    let initial_state = chain.last();
    let durations: Vec<f64> = (0..n).map(|_| chain.step(stream).1).collect();
    let mut series = DurationSeries::from_durations(durations, None, initial_state)?;
    series.provenance = Some(SimulationMeta {
        seed,
        stream_id,
        params: *params,
        innovation: spec.name().to_string(),
        burn_in,
        span: None,
        count: Some(n),
    });
    Ok(series)
}

/// Summary of a fixed-span path without storing its durations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanCount {
    pub count: usize,
    pub last_time: f64,
    /// `x_{N_T}` (the initial state when no event occurred).
    pub last_duration: f64,
    pub next_psi: f64,
}

/// Same stream consumption as [`simulate_fixed_span`], but only counts.
pub fn count_events(
    params: &AcdParams,
    spec: &InnovationSpec,
    span: f64,
    stream: &mut RandomStream,
    burn_in: usize,
) -> Result<SpanCount> {
    validate_span(params, spec, span)?;
    let mut chain = DurationChain::burned_in(*params, spec, stream, burn_in);
    let mut last_duration = chain.last();
    let mut t = 0.0;
    let mut count = 0usize;
    loop {
        let (psi, x) = chain.step(stream);
        if t + x > span {
            return Ok(SpanCount {
                count,
                last_time: t,
                last_duration,
                next_psi: psi,
            });
        }
        t += x;
        count += 1;
        last_duration = x;
        if count > DEFAULT_EVENT_CAP {
            return Err(AcdError::BudgetExceeded {
                cap: DEFAULT_EVENT_CAP,
            });
        }
    }
}

/// Chooses omega so the stationary median duration equals `target_median`.
///
/// Durations scale linearly in omega at fixed alpha, so the root of
/// `median(omega) = target` is `target / median(1)`, with the unit-omega
/// median taken from an `n`-step burned-in path.
pub fn calibrate_omega_for_median(
    alpha: f64,
    spec: &InnovationSpec,
    target_median: f64,
    n: usize,
    stream: &mut RandomStream,
    burn_in: usize,
) -> Result<f64> {
    if !(target_median > 0.0) {
        return Err(AcdError::InvalidParameter(format!(
            "target median must be positive, got {target_median}"
        )));
    }
    let unit = AcdParams::new(1.0, alpha)?;
    let path = simulate_fixed_count(&unit, spec, n, stream, burn_in)?;
    Ok(target_median / stats::median(&path.durations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acd_model::alpha_for_kappa;
    use crate::rng::make_stream;

    fn exp() -> InnovationSpec {
        InnovationSpec::UnitExponential
    }

    #[test]
    fn poisson_rate() {
        let p = AcdParams::new(1.0, 0.0).unwrap();
        let s =
            simulate_fixed_span(&p, &exp(), 1e4, &mut make_stream(1, 0), DEFAULT_BURN_IN).unwrap();
        let rate = s.len() as f64 / 1e4;
        assert!((rate - 1.0).abs() < 0.03, "{rate}");
        assert!(s.last_time() <= 1e4);
    }

    #[test]
    fn fixed_span_invariants() {
        let p = AcdParams::new(0.5, 0.5).unwrap();
        let s =
            simulate_fixed_span(&p, &exp(), 1e4, &mut make_stream(2, 0), DEFAULT_BURN_IN).unwrap();
        let rate = s.len() as f64 / 1e4;
        assert!((rate - 1.0).abs() < 0.05, "{rate}");
        let mut prev = 0.0;
        for (t, x) in s.event_times.iter().zip(&s.durations) {
            assert!(*x > 0.0);
            assert!((t - (prev + x)).abs() < 1e-9);
            prev = *t;
        }
        let next_psi = s.true_next_psi.unwrap();
        assert!((next_psi - (0.5 + 0.5 * s.durations.last().unwrap())).abs() < 1e-12);
    }

    #[test]
    fn fixed_count_single_and_prefix() {
        let p = AcdParams::new(1.0, 0.0).unwrap();
        let one = simulate_fixed_count(&p, &exp(), 1, &mut make_stream(9, 0), 0).unwrap();
        let mut s = make_stream(9, 0);
        assert_eq!(one.durations, vec![s.unit_exponential()]);
        assert!(one.span.is_none());

        let p = AcdParams::new(0.5, 0.5).unwrap();
        let short = simulate_fixed_count(&p, &exp(), 100, &mut make_stream(4, 1), 50).unwrap();
        let long = simulate_fixed_count(&p, &exp(), 1000, &mut make_stream(4, 1), 50).unwrap();
        assert_eq!(short.durations[..], long.durations[..100]);
    }

    #[test]
    fn fixed_count_mean() {
        let p = AcdParams::new(0.5, 0.5).unwrap();
        let s = simulate_fixed_count(&p, &exp(), 100_000, &mut make_stream(5, 0), DEFAULT_BURN_IN)
            .unwrap();
        assert!((s.sample_mean() - 1.0).abs() < 0.05, "{}", s.sample_mean());
    }

    #[test]
    fn schemes_agree_on_common_events() {
        let p = AcdParams::new(0.3, 0.9).unwrap();
        let span = 2_000.0;
        let fs = simulate_fixed_span(&p, &exp(), span, &mut make_stream(6, 2), 100).unwrap();
        let fc =
            simulate_fixed_count(&p, &exp(), fs.len() + 10, &mut make_stream(6, 2), 100).unwrap();
        let cut = fc.truncate_span(span).unwrap();
        assert_eq!(cut.durations, fs.durations);
    }

    #[test]
    fn count_events_matches_full_simulation() {
        let p = AcdParams::new(0.2, 1.1).unwrap();
        let fs = simulate_fixed_span(&p, &exp(), 5e3, &mut make_stream(8, 0), 1000).unwrap();
        let c = count_events(&p, &exp(), 5e3, &mut make_stream(8, 0), 1000).unwrap();
        assert_eq!(c.count, fs.len());
        assert_eq!(c.last_time, fs.last_time());
        assert_eq!(c.next_psi, fs.true_next_psi.unwrap());
    }

    #[test]
    fn counting_path_examples() {
        let s = DurationSeries::from_durations(vec![1.0, 1.5], Some(3.0), 1.0).unwrap();
        let cp = counting_path(&s, &[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(cp.counts, vec![0, 1, 1, 2]);
        assert!(counting_path(&s, &[]).unwrap().counts.is_empty());
        assert_eq!(counting_path(&s, &[3.0]).unwrap().counts, vec![2]);
        assert!(matches!(
            counting_path(&s, &[4.0]),
            Err(AcdError::GridOutOfRange { .. })
        ));
        assert!(counting_path(&s, &[-1.0]).is_err());
    }

    #[test]
    fn rejects_non_stationary_and_bad_span() {
        let p = AcdParams::new(1.0, 2.0).unwrap();
        assert!(simulate_fixed_span(&p, &exp(), 10.0, &mut make_stream(0, 0), 0).is_err());
        let p = AcdParams::new(1.0, 0.2).unwrap();
        assert!(simulate_fixed_span(&p, &exp(), 0.0, &mut make_stream(0, 0), 0).is_err());
    }

    #[test]
    fn budget_cap() {
        let p = AcdParams::new(1.0, 0.0).unwrap();
        let r = simulate_fixed_span_capped(&p, &exp(), 1e4, &mut make_stream(0, 0), 0, 100);
        assert!(matches!(r, Err(AcdError::BudgetExceeded { cap: 100 })));
    }

    #[test]
    fn median_calibration() {
        let alpha = alpha_for_kappa(0.5).unwrap();
        let omega = calibrate_omega_for_median(
            alpha,
            &exp(),
            1.0,
            1_000_000,
            &mut make_stream(10, 0),
            DEFAULT_BURN_IN,
        )
        .unwrap();
        let p = AcdParams::new(omega, alpha).unwrap();
        let check = simulate_fixed_count(
            &p,
            &exp(),
            1_000_000,
            &mut make_stream(10, 1),
            DEFAULT_BURN_IN,
        )
        .unwrap();
        let med = stats::median(&check.durations);
        assert!((med - 1.0).abs() < 0.01, "median {med} with omega {omega}");
    }

    #[test]
    fn csv_roundtrip() {
        let p = AcdParams::new(0.5, 0.5).unwrap();
        let s = simulate_fixed_span(&p, &exp(), 200.0, &mut make_stream(1, 1), 10).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"t,x\n"));
        let back = DurationSeries::read_csv(&buf[..], s.span).unwrap();
        assert_eq!(back.durations, s.durations);
    }

    #[test]
    fn csv_reports_malformed_line() {
        let text = "t,x\n1,1\n2,oops\n";
        match DurationSeries::read_csv(text.as_bytes(), None) {
            Err(AcdError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
