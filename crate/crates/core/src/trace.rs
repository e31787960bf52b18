//! Piecewise-constant network bandwidth traces.
//!
//! A trace is a list of `(timestamp_s, bandwidth_mbps)` samples. Each sample
//! holds until the next one; the final sample lasts the mean inter-sample gap,
//! after which the trace repeats. Session time `0` maps onto the first sample.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Bandwidth floor applied after noise injection.
pub const DEFAULT_BANDWIDTH_FLOOR_MBPS: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("timestamps not strictly increasing at line {line}")]
    NonMonotonicTimestamps { line: usize },
    #[error("non-positive bandwidth {value} at line {line}")]
    NonPositiveBandwidth { line: usize, value: f64 },
    #[error("negative timestamp {value} at line {line}")]
    NegativeTimestamp { line: usize, value: f64 },
    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("interval end {t1} precedes start {t0}")]
    ReversedInterval { t0: f64, t1: f64 },
    #[error("corpus needs at least 2 traces, got {0}")]
    TooFewTraces(usize),
    #[error("train fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("invalid preprocessing parameter: {0}")]
    BadParameter(String),
    #[error("no parseable traces in {0}")]
    NoTraces(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub timestamp: f64,
    pub bandwidth_mbps: f64,
}

/// Immutable bandwidth trace with prefix integrals for O(log n) queries.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTrace {
    name: String,
    points: Vec<TracePoint>,
    /// Segment start offsets relative to the first timestamp.
    starts: Vec<f64>,
    /// Megabits delivered from the cycle start up to each segment start.
    prefix_mbit: Vec<f64>,
    duration: f64,
    cycle_mbit: f64,
}

impl NetworkTrace {
    /// Validates the points and builds the trace. `line` numbers in errors are
    /// 1-based point indices.
    pub fn new(name: impl Into<String>, points: Vec<TracePoint>) -> Result<Self, TraceError> {
        if points.is_empty() {
            return Err(TraceError::EmptyTrace);
        }
        if points.len() < 2 {
            return Err(TraceError::TooFewPoints(points.len()));
        }
        for (i, p) in points.iter().enumerate() {
            let line = i + 1;
            if !(p.timestamp >= 0.0) || !p.timestamp.is_finite() {
                return Err(TraceError::NegativeTimestamp {
                    line,
                    value: p.timestamp,
                });
            }
            if !(p.bandwidth_mbps > 0.0) || !p.bandwidth_mbps.is_finite() {
                return Err(TraceError::NonPositiveBandwidth {
                    line,
                    value: p.bandwidth_mbps,
                });
            }
            if i > 0 && p.timestamp <= points[i - 1].timestamp {
                return Err(TraceError::NonMonotonicTimestamps { line });
            }
        }
        Ok(Self::build(name.into(), points))
    }

    fn build(name: String, points: Vec<TracePoint>) -> Self {
        let first = points[0].timestamp;
        let last = points[points.len() - 1].timestamp;
        let mean_gap = (last - first) / (points.len() - 1) as f64;
        let duration = last - first + mean_gap;
        let starts: Vec<f64> = points.iter().map(|p| p.timestamp - first).collect();
        let mut prefix_mbit = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        for (i, p) in points.iter().enumerate() {
            prefix_mbit.push(acc);
            let end = if i + 1 < points.len() { starts[i + 1] } else { duration };
            acc += p.bandwidth_mbps * (end - starts[i]);
        }
        Self {
            name,
            points,
            starts,
            prefix_mbit,
            duration,
            cycle_mbit: acc,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn points(&self) -> &[TracePoint] {
        &self.points
    }

    /// Length of one replay cycle in seconds.
    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Unweighted mean of the bandwidth samples.
    pub fn mean_bandwidth(&self) -> f64 {
        self.points.iter().map(|p| p.bandwidth_mbps).sum::<f64>() / self.points.len() as f64
    }

    fn segment_at(&self, offset: f64) -> usize {
        // last start <= offset
        match self.starts.binary_search_by(|s| s.partial_cmp(&offset).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
    }

    fn wrap(&self, t: f64) -> (f64, f64) {
        let cycles = (t / self.duration).floor();
        let mut offset = t - cycles * self.duration;
        if offset >= self.duration {
            offset -= self.duration;
        }
        (cycles, offset.max(0.0))
    }

    /// Bandwidth in mbps at session time `t` (cyclic replay).
    pub fn bandwidth_at(&self, t: f64) -> f64 {
        let (_, offset) = self.wrap(t.max(0.0));
        self.points[self.segment_at(offset)].bandwidth_mbps
    }

    /// Cumulative megabits delivered over `[0, t]`.
    fn cumulative_mbit(&self, t: f64) -> f64 {
        let (cycles, offset) = self.wrap(t);
        let i = self.segment_at(offset);
        cycles * self.cycle_mbit + self.prefix_mbit[i] + self.points[i].bandwidth_mbps * (offset - self.starts[i])
    }

    /// Megabytes delivered over `[t0, t1]`.
    pub fn integrate_megabytes(&self, t0: f64, t1: f64) -> Result<f64, TraceError> {
        if t1 < t0 {
            return Err(TraceError::ReversedInterval { t0, t1 });
        }
        if t1 == t0 {
            return Ok(0.0);
        }
        Ok(((self.cumulative_mbit(t1) - self.cumulative_mbit(t0)) / 8.0).max(0.0))
    }

    /// Earliest time `t >= t0` by which `megabytes` have been delivered.
    pub fn invert_download_time(&self, t0: f64, megabytes: f64) -> f64 {
        if megabytes <= 0.0 {
            return t0;
        }
        let target = self.cumulative_mbit(t0) + megabytes * 8.0;
        let cycles = (target / self.cycle_mbit).floor();
        let mut rem = target - cycles * self.cycle_mbit;
        let mut cycles = cycles;
        if rem >= self.cycle_mbit {
            rem -= self.cycle_mbit;
            cycles += 1.0;
        }
        let rem = rem.max(0.0);
        let i = match self.prefix_mbit.binary_search_by(|p| p.partial_cmp(&rem).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        let t = cycles * self.duration + self.starts[i] + (rem - self.prefix_mbit[i]) / self.points[i].bandwidth_mbps;
        t.max(t0)
    }

    /// Session times strictly inside `(a, b)` where the bandwidth changes.
    pub fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        let mut out = Vec::new();
        if !(b > a) {
            return out;
        }
        let mut cycle = (a / self.duration).floor();
        loop {
            let base = cycle * self.duration;
            if base >= b {
                break;
            }
            for s in &self.starts {
                let t = base + s;
                if t >= b {
                    return out;
                }
                if t > a {
                    out.push(t);
                }
            }
            cycle += 1.0;
        }
        out
    }

    /// Two-column text form accepted by [`parse_trace`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            // `{:?}` prints the shortest representation that round-trips.
            let _ = writeln!(out, "{:?} {:?}", p.timestamp, p.bandwidth_mbps);
        }
        out
    }
}

/// Parses `TIMESTAMP_S BANDWIDTH_MBPS` lines; blank and `#` lines are skipped.
pub fn parse_trace(text: &str, name: &str) -> Result<NetworkTrace, TraceError> {
    let mut points = Vec::new();
    let mut lines = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let (Some(ts), Some(bw), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(TraceError::MalformedLine {
                line: line_no,
                reason: "expected two fields".into(),
            });
        };
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|e| TraceError::MalformedLine {
                line: line_no,
                reason: format!("{s:?}: {e}"),
            })
        };
        points.push(TracePoint {
            timestamp: parse(ts)?,
            bandwidth_mbps: parse(bw)?,
        });
        lines.push(line_no);
    }
    // Re-map point indices in errors back to file line numbers.
    NetworkTrace::new(name, points).map_err(|e| match e {
        TraceError::NonMonotonicTimestamps { line } => TraceError::NonMonotonicTimestamps { line: lines[line - 1] },
        TraceError::NonPositiveBandwidth { line, value } => TraceError::NonPositiveBandwidth {
            line: lines[line - 1],
            value,
        },
        TraceError::NegativeTimestamp { line, value } => TraceError::NegativeTimestamp {
            line: lines[line - 1],
            value,
        },
        other => other,
    })
}

/// Rescales a trace to `target_mean` then adds seeded Gaussian noise,
/// clamping every sample to `floor`.
pub fn preprocess_scale(
    trace: &NetworkTrace,
    target_mean: f64,
    noise_std: f64,
    seed: u64,
    floor: f64,
) -> Result<NetworkTrace, TraceError> {
    if !(target_mean > 0.0) {
        return Err(TraceError::BadParameter(format!("target mean {target_mean}")));
    }
    if !(noise_std >= 0.0) {
        return Err(TraceError::BadParameter(format!("noise std {noise_std}")));
    }
    if !(floor > 0.0) {
        return Err(TraceError::BadParameter(format!("floor {floor}")));
    }
    let factor = target_mean / trace.mean_bandwidth();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).expect("std checked above");
    let points = trace
        .points()
        .iter()
        .map(|p| {
            let mut bw = p.bandwidth_mbps * factor;
            if noise_std > 0.0 {
                bw += noise.sample(&mut rng);
            }
            TracePoint {
                timestamp: p.timestamp,
                bandwidth_mbps: bw.max(floor),
            }
        })
        .collect();
    Ok(NetworkTrace::build(trace.name().to_string(), points))
}

/// Seeded shuffle and split. The train side gets `round(fraction * n)` traces,
/// kept within `[1, n - 1]` so neither side is empty.
pub fn split_corpus<T: Clone>(traces: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), TraceError> {
    if traces.len() < 2 {
        return Err(TraceError::TooFewTraces(traces.len()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(TraceError::BadFraction(train_fraction));
    }
    let n = traces.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let train = order[..n_train].iter().map(|&i| traces[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| traces[i].clone()).collect();
    Ok((train, test))
}

/// Text form of a corpus split: file names under `train:` / `test:` headings.
pub fn format_split(train: &[&str], test: &[&str]) -> String {
    let mut out = String::from("train:\n");
    for n in train {
        let _ = writeln!(out, "{n}");
    }
    out.push_str("test:\n");
    for n in test {
        let _ = writeln!(out, "{n}");
    }
    out
}

/// Inverse of [`format_split`].
pub fn parse_split(text: &str) -> Result<(Vec<String>, Vec<String>), TraceError> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut section: Option<bool> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line {
            "train:" => section = Some(true),
            "test:" => section = Some(false),
            name => match section {
                Some(true) => train.push(name.to_string()),
                Some(false) => test.push(name.to_string()),
                None => {
                    return Err(TraceError::MalformedLine {
                        line: idx + 1,
                        reason: "entry before train:/test: heading".into(),
                    })
                }
            },
        }
    }
    Ok((train, test))
}

/// Outcome of loading a trace directory: parsed traces sorted by file name,
/// plus per-file failures.
#[derive(Debug, Default)]
pub struct LoadedCorpus {
    pub traces: Vec<NetworkTrace>,
    pub failures: Vec<(String, String)>,
}

/// Loads every regular file in `dir` as a trace, named by its file name.
pub fn load_trace_dir(dir: &Path) -> std::io::Result<LoadedCorpus> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.path())
        .collect();
    entries.sort();
    let mut corpus = LoadedCorpus::default();
    for path in entries {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        if name.starts_with('.') {
            continue;
        }
        match std::fs::read_to_string(&path) {
            Ok(text) => match parse_trace(&text, &name) {
                Ok(t) => corpus.traces.push(t),
                Err(e) => corpus.failures.push((name, e.to_string())),
            },
            Err(e) => corpus.failures.push((name, e.to_string())),
        }
    }
    Ok(corpus)
}

/// Synthetic trace: 1 s samples from a log-normal AR(1) process around `mean_mbps`.
pub fn synthetic_trace(name: &str, mean_mbps: f64, volatility: f64, seconds: usize, seed: u64) -> NetworkTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let phi: f64 = 0.8;
    let innov = volatility * (1.0 - phi * phi).sqrt();
    // exp(x) with x ~ N(m, v^2) has mean exp(m + v^2/2)
    let log_mean = mean_mbps.ln() - 0.5 * volatility * volatility;
    let mut x = log_mean + volatility * unit.sample(&mut rng);
    let points = (0..seconds.max(2))
        .map(|i| {
            if i > 0 {
                x = log_mean + phi * (x - log_mean) + innov * unit.sample(&mut rng);
            }
            TracePoint {
                timestamp: i as f64,
                bandwidth_mbps: x.exp().max(DEFAULT_BANDWIDTH_FLOOR_MBPS),
            }
        })
        .collect();
    NetworkTrace::build(name.to_string(), points)
}

/// A corpus of `count` synthetic traces named `synth_XX.txt`.
pub fn synthetic_corpus(count: usize, mean_mbps: f64, volatility: f64, seed: u64) -> Vec<NetworkTrace> {
    (0..count)
        .map(|i| {
            synthetic_trace(
                &format!("synth_{i:02}.txt"),
                mean_mbps,
                volatility,
                600,
                seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point() -> NetworkTrace {
        parse_trace("0.0 4.2\n1.0 3.1", "t").unwrap()
    }

    #[test]
    fn parses_two_points() {
        let t = two_point();
        assert_eq!(
            t.points(),
            &[
                TracePoint {
                    timestamp: 0.0,
                    bandwidth_mbps: 4.2
                },
                TracePoint {
                    timestamp: 1.0,
                    bandwidth_mbps: 3.1
                }
            ]
        );
        assert_eq!(t.name(), "t");
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_trace("", "e"), Err(TraceError::EmptyTrace));
        assert_eq!(parse_trace("# only comment\n\n", "e"), Err(TraceError::EmptyTrace));
        assert_eq!(parse_trace("0 1", "e"), Err(TraceError::TooFewPoints(1)));
        assert_eq!(
            parse_trace("1.0 2.0\n0.5 3.0", "e"),
            Err(TraceError::NonMonotonicTimestamps { line: 2 })
        );
        assert!(matches!(
            parse_trace("0 1\n1 0", "e"),
            Err(TraceError::NonPositiveBandwidth { line: 2, .. })
        ));
        assert!(matches!(
            parse_trace("0 1\n1 x", "e"),
            Err(TraceError::MalformedLine { line: 2, .. })
        ));
        assert!(matches!(
            parse_trace("0 1\n1 2 3", "e"),
            Err(TraceError::MalformedLine { line: 2, .. })
        ));
        // comment lines still count towards reported line numbers
        assert_eq!(
            parse_trace("# hdr\n1.0 2.0\n0.5 3.0", "e"),
            Err(TraceError::NonMonotonicTimestamps { line: 3 })
        );
    }

    #[test]
    fn bandwidth_lookup_and_wrap() {
        let t = two_point();
        assert_eq!(t.bandwidth_at(0.5), 4.2);
        assert_eq!(t.bandwidth_at(1.0), 3.1);
        assert_eq!(t.duration(), 2.0);
        // oracle: evaluate at t mod duration
        assert_eq!(t.bandwidth_at(2.5), t.bandwidth_at(2.5 % 2.0));
        assert_eq!(t.bandwidth_at(2.5), 4.2);
    }

    #[test]
    fn integrates_closed_forms() {
        let c = parse_trace("0 8\n1 8", "c").unwrap();
        assert!((c.integrate_megabytes(0.0, 2.0).unwrap() - 2.0).abs() < 1e-12);
        let s = parse_trace("0 8\n1 16", "s").unwrap();
        assert!((s.integrate_megabytes(0.0, 2.0).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(s.integrate_megabytes(0.7, 0.7).unwrap(), 0.0);
        assert!(s.integrate_megabytes(1.0, 0.5).is_err());
    }

    #[test]
    fn inverts_closed_forms() {
        let c = parse_trace("0 8\n1 8", "c").unwrap();
        assert!((c.invert_download_time(0.0, 2.0) - 2.0).abs() < 1e-12);
        assert_eq!(c.invert_download_time(3.3, 0.0), 3.3);
        // crossing a cycle boundary on an uneven trace
        let s = parse_trace("0 8\n1 16", "s").unwrap();
        assert!((s.invert_download_time(1.5, 2.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn scaling_doubles_without_noise() {
        let t = parse_trace("0 1\n1 3\n2 2", "x").unwrap();
        let s = preprocess_scale(&t, 4.0, 0.0, 7, DEFAULT_BANDWIDTH_FLOOR_MBPS).unwrap();
        for (a, b) in t.points().iter().zip(s.points()) {
            assert_eq!(b.bandwidth_mbps, a.bandwidth_mbps * 2.0);
            assert_eq!(b.timestamp, a.timestamp);
        }
        let same = preprocess_scale(&t, 2.0, 0.0, 7, DEFAULT_BANDWIDTH_FLOOR_MBPS).unwrap();
        assert_eq!(same.points(), t.points());
    }

    #[test]
    fn noisy_scaling_hits_target_mean() {
        let points = (0..1000)
            .map(|i| TracePoint {
                timestamp: i as f64,
                bandwidth_mbps: if i % 2 == 0 { 1.5 } else { 2.5 },
            })
            .collect();
        let t = NetworkTrace::new("m", points).unwrap();
        assert!((t.mean_bandwidth() - 2.0).abs() < 1e-12);
        let s = preprocess_scale(&t, 4.0, 0.5, 11, DEFAULT_BANDWIDTH_FLOOR_MBPS).unwrap();
        let mean = s.mean_bandwidth();
        assert!((mean - 4.0).abs() / 4.0 < 0.05, "mean {mean}");
        assert!(s
            .points()
            .iter()
            .all(|p| p.bandwidth_mbps >= DEFAULT_BANDWIDTH_FLOOR_MBPS));
    }

    #[test]
    fn split_partitions_deterministically() {
        let items: Vec<u32> = (0..10).collect();
        let (train, test) = split_corpus(&items, 0.8, 1).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let (train2, test2) = split_corpus(&items, 0.8, 1).unwrap();
        assert_eq!((&train, &test), (&train2, &test2));
        let mut all: Vec<u32> = train.iter().chain(&test).copied().collect();
        all.sort();
        assert_eq!(all, items);
        assert_eq!(split_corpus(&items[..1], 0.8, 1), Err(TraceError::TooFewTraces(1)));
        assert_eq!(split_corpus(&items, 1.0, 1), Err(TraceError::BadFraction(1.0)));
    }

    #[test]
    fn split_file_round_trip() {
        let text = format_split(&["a.txt", "b.txt"], &["c.txt"]);
        let (train, test) = parse_split(&text).unwrap();
        assert_eq!(train, vec!["a.txt", "b.txt"]);
        assert_eq!(test, vec!["c.txt"]);
    }
}
