//! Reading event-time files and simulated duration CSVs.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use crate::error::{AcdError, Result};
use crate::sim::DurationSeries;
use crate::stats;

/// What to do with simultaneous events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZeroPolicy {
    Error,
    /// Simultaneous events count once.
    Merge,
    /// Push each tied timestamp `eps` past its predecessor.
    Jitter(f64),
}

impl FromStr for ZeroPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "error" => Ok(ZeroPolicy::Error),
            "merge" => Ok(ZeroPolicy::Merge),
            _ => {
                let eps = s
                    .strip_prefix("jitter:")
                    .ok_or_else(|| format!("expected error, merge or jitter:EPS, got {s:?}"))?;
                match eps.parse::<f64>() {
                    Ok(e) if e > 0.0 && e.is_finite() => Ok(ZeroPolicy::Jitter(e)),
                    _ => Err(format!(
                        "jitter epsilon must be a positive number, got {eps:?}"
                    )),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    pub zero_policy: ZeroPolicy,
    /// Treat the first timestamp as the time origin instead of an event.
    pub skip_first: bool,
    /// Multiplies every timestamp (and a declared span), e.g. 1e-3 for ms.
    pub time_scale: f64,
    /// Declared end of the observation window, in file units.
    pub span: Option<f64>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            zero_policy: ZeroPolicy::Error,
            skip_first: false,
            time_scale: 1.0,
            span: None,
        }
    }
}

/// Timestamps with their 1-based line numbers.
fn read_times<R: BufRead>(input: R) -> Result<Vec<(usize, f64)>> {
    let mut column: Option<usize> = None;
    let mut width: Option<usize> = None;
    let mut times = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if width.is_none() {
            width = Some(fields.len());
            if fields.iter().any(|f| f.parse::<f64>().is_err()) {
                // Header line.
                let pos = fields.iter().position(|f| f.eq_ignore_ascii_case("t"));
                column = match (pos, fields.len()) {
                    (Some(p), _) => Some(p),
                    (None, 1) => Some(0),
                    (None, _) => {
                        return Err(AcdError::Parse {
                            line: lineno,
                            message: format!("header {trimmed:?} has no `t` column"),
                        })
                    }
                };
                continue;
            }
            if fields.len() != 1 {
                return Err(AcdError::Parse {
                    line: lineno,
                    message: "a multi-column file needs a header with a `t` column".into(),
                });
            }
            column = Some(0);
        }
        if Some(fields.len()) != width {
            return Err(AcdError::Parse {
                line: lineno,
                message: format!(
                    "expected {} fields, found {}",
                    width.unwrap_or(1),
                    fields.len()
                ),
            });
        }
        let raw = fields[column.unwrap_or(0)];
        let t: f64 = raw.parse().map_err(|e| AcdError::Parse {
            line: lineno,
            message: format!("{raw:?}: {e}"),
        })?;
        if !t.is_finite() {
            return Err(AcdError::Parse {
                line: lineno,
                message: format!("timestamp {raw:?} is not finite"),
            });
        }
        times.push((lineno, t));
    }
    Ok(times)
}

/// Durations `x_i = t_i - t_{i-1}` with `t_0 = 0` (or the first timestamp
/// when `skip_first` is set).
pub fn ingest_event_times<R: BufRead>(input: R, options: &IngestOptions) -> Result<DurationSeries> {
    if !(options.time_scale > 0.0 && options.time_scale.is_finite()) {
        return Err(AcdError::InvalidParameter(format!(
            "time scale must be positive, got {}",
            options.time_scale
        )));
    }
    let times = read_times(input)?;
    if times.is_empty() {
        return Err(AcdError::EmptyFile);
    }
    let mut iter = times.iter().map(|&(l, t)| (l, t * options.time_scale));
    let origin = if options.skip_first {
        iter.next().map(|(_, t)| t).unwrap_or(0.0)
    } else {
        0.0
    };
    let mut prev = origin;
    let mut durations = Vec::new();
    for (line, t) in iter {
        if t < prev {
            return Err(AcdError::NonMonotoneTimes { line });
        }
        if t == prev {
            match options.zero_policy {
                ZeroPolicy::Error => return Err(AcdError::ZeroDuration { line }),
                ZeroPolicy::Merge => continue,
                ZeroPolicy::Jitter(_) => {}
            }
        }
        let t = match options.zero_policy {
            ZeroPolicy::Jitter(eps) => t.max(prev + eps),
            _ => t,
        };
        durations.push(t - prev);
        prev = t;
    }
    if durations.is_empty() {
        return Err(AcdError::TooFewSamples { needed: 1, got: 0 });
    }
    let span = match options.span {
        None => None,
        Some(s) => {
            let s = s * options.time_scale - origin;
            if s < prev {
                return Err(AcdError::InvalidParameter(format!(
                    "declared span ends before the last event (at {})",
                    prev + origin
                )));
            }
            Some(s)
        }
    };
    let x0 = stats::mean(&durations);
    DurationSeries::from_durations(durations, span, x0)
}

/// `t,x` CSVs from `simulate` are read as durations; anything else as event times.
pub fn load_series(path: &Path, options: &IngestOptions) -> Result<DurationSeries> {
    let first = BufReader::new(File::open(path)?)
        .lines()
        .map_while(|l| l.ok())
        .find(|l| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        });
    let is_duration_csv = first.is_some_and(|l| {
        l.split(',')
            .map(|c| c.trim().to_ascii_lowercase())
            .any(|c| c == "x")
    });
    let reader = BufReader::new(File::open(path)?);
    if is_duration_csv {
        let span = options.span.map(|s| s * options.time_scale);
        DurationSeries::read_csv(reader, span)
    } else {
        ingest_event_times(reader, options)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest(text: &str, options: IngestOptions) -> Result<DurationSeries> {
        ingest_event_times(text.as_bytes(), &options)
    }

    #[test]
    fn first_differences_from_zero() {
        let s = ingest("0.5\n1.5\n4.0\n", IngestOptions::default()).unwrap();
        assert_eq!(s.durations, vec![0.5, 1.0, 2.5]);
        assert_eq!(s.span, None);
    }

    #[test]
    fn header_detection() {
        let raw = ingest("0.5\n1.5\n4.0\n", IngestOptions::default()).unwrap();
        let single = ingest("time\n0.5\n1.5\n4.0\n", IngestOptions::default()).unwrap();
        let multi = ingest("id,t\n1,0.5\n2,1.5\n3,4.0\n", IngestOptions::default()).unwrap();
        assert_eq!(raw.durations, single.durations);
        assert_eq!(raw.durations, multi.durations);
    }

    #[test]
    fn zero_policies() {
        let text = "1\n2\n2\n3\n";
        assert!(matches!(
            ingest(text, IngestOptions::default()),
            Err(AcdError::ZeroDuration { line: 3 })
        ));
        let merged = ingest(
            text,
            IngestOptions {
                zero_policy: ZeroPolicy::Merge,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(merged.durations, vec![1.0, 1.0, 1.0]);
        let jit = ingest(
            text,
            IngestOptions {
                zero_policy: ZeroPolicy::Jitter(0.25),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(jit.durations, vec![1.0, 1.0, 0.25, 0.75]);
        assert!("jitter:0".parse::<ZeroPolicy>().is_err());
        assert_eq!(
            "jitter:1e-3".parse::<ZeroPolicy>().unwrap(),
            ZeroPolicy::Jitter(1e-3)
        );
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            ingest("1\n3\n2\n", IngestOptions::default()),
            Err(AcdError::NonMonotoneTimes { line: 3 })
        ));
        assert!(matches!(
            ingest("\n# nothing\n", IngestOptions::default()),
            Err(AcdError::EmptyFile)
        ));
        assert!(matches!(
            ingest("1\n2\nabc\n", IngestOptions::default()),
            Err(AcdError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            ingest("-1\n2\n", IngestOptions::default()),
            Err(AcdError::NonMonotoneTimes { line: 1 })
        ));
    }

    #[test]
    fn skip_first_scale_and_span() {
        let opts = IngestOptions {
            skip_first: true,
            time_scale: 1e-3,
            span: Some(5000.0),
            ..Default::default()
        };
        let s = ingest("1000\n1500\n3000\n", opts).unwrap();
        assert_eq!(s.durations, vec![0.5, 1.5]);
        assert_eq!(s.span, Some(4.0));
        let short = IngestOptions {
            span: Some(2.0),
            ..Default::default()
        };
        assert!(ingest("1\n3\n", short).is_err());
    }
}
