//! Policy evaluation over a trace corpus, paired comparisons and
//! playback-threshold sweeps.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::env::{Session, SessionConfig, StepDiagnostics};
use crate::error::{Error, Result};
use crate::policy::{Policy, PolicyContext, PolicyRegistry};
use crate::quality::QualityModel;
use crate::trace::NetworkTrace;

/// Per-session metrics; also used for aggregate means.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub trace: String,
    pub policy: String,
    pub total_qoe: f64,
    pub total_rebuffer: f64,
    /// Stall before the first chunk starts playing.
    pub initial_rebuffer: f64,
    pub mean_buffer: f64,
    pub mean_bitrate: f64,
    pub mean_switch: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub policy: String,
    /// Sorted by trace name.
    pub rows: Vec<EvalRow>,
    pub aggregate: EvalRow,
}

pub const METRIC_COLUMNS: [&str; 6] = [
    "total_qoe",
    "total_rebuffer",
    "initial_rebuffer",
    "mean_buffer",
    "mean_bitrate",
    "mean_switch",
];

impl EvalRow {
    pub fn metrics(&self) -> [f64; 6] {
        [
            self.total_qoe,
            self.total_rebuffer,
            self.initial_rebuffer,
            self.mean_buffer,
            self.mean_bitrate,
            self.mean_switch,
        ]
    }

    fn from_metrics(trace: &str, policy: &str, m: [f64; 6]) -> Self {
        Self {
            trace: trace.into(),
            policy: policy.into(),
            total_qoe: m[0],
            total_rebuffer: m[1],
            initial_rebuffer: m[2],
            mean_buffer: m[3],
            mean_bitrate: m[4],
            mean_switch: m[5],
        }
    }
}

/// Arithmetic mean of each metric; the row is labelled `mean`.
pub fn aggregate(policy: &str, rows: &[EvalRow]) -> EvalRow {
    let mut sums = [0.0; 6];
    for r in rows {
        for (s, m) in sums.iter_mut().zip(r.metrics()) {
            *s += m;
        }
    }
    let n = rows.len().max(1) as f64;
    EvalRow::from_metrics("mean", policy, sums.map(|s| s / n))
}

/// Start offset for `trace` derived from the evaluation seed only, so every
/// policy sees the same network conditions.
pub fn session_offset(seed: u64, trace: &NetworkTrace) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(session_seed(seed, trace.name()));
    rng.random_range(0.0..trace.duration())
}

/// Per-trace seed for policy randomness.
pub fn session_seed(seed: u64, trace_name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(trace_name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub row: EvalRow,
    pub steps: Vec<(StepDiagnostics, f64)>,
}

pub fn run_episode(
    policy: &mut dyn Policy,
    session: &SessionConfig,
    quality: Arc<QualityModel>,
    trace: Arc<NetworkTrace>,
    offset: f64,
    seed: u64,
) -> Result<Episode> {
    policy.reset(seed);
    let name = trace.name().to_string();
    let (mut env, mut obs) = Session::reset(session.clone(), quality, trace, offset, seed)?;
    let mut steps = Vec::with_capacity(session.num_chunks);
    while !env.is_done() {
        let action = policy.select(&obs)?;
        let r = env.step(action)?;
        if !r.reward.is_finite() {
            return Err(Error::NonFinite("reward"));
        }
        steps.push((r.diagnostics, r.reward));
        obs = r.observation;
    }
    let n = steps.len() as f64;
    let mut switch = 0.0;
    for w in steps.windows(2) {
        switch += (w[1].0.avg_bitrate - w[0].0.avg_bitrate).abs();
    }
    let row = EvalRow {
        trace: name,
        policy: policy.name().to_string(),
        total_qoe: steps.iter().map(|s| s.1).sum(),
        total_rebuffer: steps.iter().map(|s| s.0.rebuffer_s).sum(),
        initial_rebuffer: steps.first().map_or(0.0, |s| s.0.rebuffer_s),
        mean_buffer: steps.iter().map(|s| s.0.buffer_after).sum::<f64>() / n,
        mean_bitrate: steps.iter().map(|s| s.0.avg_bitrate).sum::<f64>() / n,
        mean_switch: switch / n,
    };
    Ok(Episode { row, steps })
}

/// Runs `policy` once on each trace at its seed-derived offset. Traces are
/// evaluated on worker threads; rows come back sorted by trace name.
pub fn evaluate(
    registry: &PolicyRegistry,
    policy: &str,
    ctx: &PolicyContext,
    traces: &[Arc<NetworkTrace>],
    seed: u64,
) -> Result<EvalReport> {
    if traces.is_empty() {
        return Err(Error::Config("evaluation needs at least one trace".into()));
    }
    // fail fast on a bad name or missing checkpoint
    let label = registry.build(policy, ctx)?.name().to_string();
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(traces.len());
    let per = traces.len().div_ceil(workers);
    let results: Vec<Result<Vec<EvalRow>>> = std::thread::scope(|s| {
        let handles: Vec<_> = traces
            .chunks(per)
            .map(|group| {
                s.spawn(move || {
                    let mut p = registry.build(policy, ctx)?;
                    group
                        .iter()
                        .map(|t| {
                            let run = run_episode(
                                p.as_mut(),
                                &ctx.session,
                                ctx.quality.clone(),
                                t.clone(),
                                session_offset(seed, t),
                                session_seed(seed, t.name()),
                            )?;
                            Ok(run.row)
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("eval worker panicked"))
            .collect()
    });
    let mut rows = Vec::with_capacity(traces.len());
    for r in results {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| a.trace.cmp(&b.trace));
    let aggregate = aggregate(&label, &rows);
    Ok(EvalReport {
        policy: label,
        rows,
        aggregate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub reports: Vec<EvalReport>,
    /// Policy names by mean QoE, best first.
    pub ranking: Vec<String>,
    /// `(metric, policies best first)` for every metric column.
    pub metric_rankings: Vec<(String, Vec<String>)>,
}

/// Evaluates each policy on identical offsets and ranks them.
pub fn compare(
    registry: &PolicyRegistry,
    policies: &[&str],
    ctx: &PolicyContext,
    traces: &[Arc<NetworkTrace>],
    seed: u64,
) -> Result<Comparison> {
    if policies.len() < 2 {
        return Err(Error::Config("compare needs at least two policies".into()));
    }
    let reports = policies
        .iter()
        .map(|p| evaluate(registry, p, ctx, traces, seed))
        .collect::<Result<Vec<_>>>()?;
    let rank = |idx: usize, higher_better: bool| -> Vec<String> {
        let mut order: Vec<&EvalReport> = reports.iter().collect();
        order.sort_by(|a, b| {
            let (x, y) = (a.aggregate.metrics()[idx], b.aggregate.metrics()[idx]);
            let c = if higher_better {
                y.total_cmp(&x)
            } else {
                x.total_cmp(&y)
            };
            c.then_with(|| a.policy.cmp(&b.policy))
        });
        order.iter().map(|r| r.policy.clone()).collect()
    };
    // QoE, bitrate and buffer are better high; stalls and switching better low.
    let higher = [true, false, false, true, true, false];
    let metric_rankings = METRIC_COLUMNS
        .iter()
        .enumerate()
        .map(|(i, m)| (m.to_string(), rank(i, higher[i])))
        .collect();
    Ok(Comparison {
        ranking: rank(0, true),
        reports,
        metric_rankings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub r0: f64,
    pub mean_bitrate: f64,
    pub mean_rebuffer: f64,
    pub mean_qoe: f64,
}

/// Evaluates `policy` under each playback threshold with identical offsets.
pub fn threshold_sweep(
    registry: &PolicyRegistry,
    policy: &str,
    ctx: &PolicyContext,
    traces: &[Arc<NetworkTrace>],
    thresholds: &[f64],
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if thresholds.is_empty() {
        return Err(Error::Config("no thresholds given".into()));
    }
    thresholds
        .iter()
        .map(|&r0| {
            if !(r0 > 0.0 && r0 <= 1.0) {
                return Err(Error::Config(format!("threshold {r0} outside (0, 1]")));
            }
            let mut c = ctx.clone();
            c.quality = Arc::new(ctx.quality.with_r0(r0)?);
            let rep = evaluate(registry, policy, &c, traces, seed)?;
            Ok(SweepRow {
                r0,
                mean_bitrate: rep.aggregate.mean_bitrate,
                mean_rebuffer: rep.aggregate.total_rebuffer,
                mean_qoe: rep.aggregate.total_qoe,
            })
        })
        .collect()
}

pub fn provenance_line(config_hash: &str, seed: u64) -> String {
    format!("# config_hash={config_hash} seed={seed}\n")
}

/// CSV with one row per (policy, trace) followed by each policy's `mean` row.
pub fn reports_csv(reports: &[EvalReport], config_hash: &str, seed: u64) -> String {
    let mut out = provenance_line(config_hash, seed);
    out.push_str("policy,trace,");
    out.push_str(&METRIC_COLUMNS.join(","));
    out.push('\n');
    for rep in reports {
        for row in rep.rows.iter().chain(std::iter::once(&rep.aggregate)) {
            let _ = write!(out, "{},{}", row.policy, row.trace);
            for m in row.metrics() {
                let _ = write!(out, ",{m:.6}");
            }
            out.push('\n');
        }
    }
    out
}

/// Reads back [`reports_csv`] output as `(rows, mean rows)`.
pub fn parse_reports_csv(text: &str) -> Result<(Vec<EvalRow>, Vec<EvalRow>)> {
    let mut rows = Vec::new();
    let mut means = Vec::new();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    lines.next();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 2 + METRIC_COLUMNS.len() {
            return Err(Error::Config(format!("bad report line `{line}`")));
        }
        let mut m = [0.0; 6];
        for (slot, cell) in m.iter_mut().zip(&cells[2..]) {
            *slot = cell
                .parse()
                .map_err(|_| Error::Config(format!("bad number `{cell}`")))?;
        }
        let row = EvalRow::from_metrics(cells[1], cells[0], m);
        if row.trace == "mean" {
            means.push(row);
        } else {
            rows.push(row);
        }
    }
    Ok((rows, means))
}

pub fn sweep_csv(rows: &[SweepRow], config_hash: &str, seed: u64) -> String {
    let mut out = provenance_line(config_hash, seed);
    out.push_str("r0,mean_bitrate,mean_rebuffer,mean_qoe\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:.3},{:.6},{:.6},{:.6}",
            r.r0, r.mean_bitrate, r.mean_rebuffer, r.mean_qoe
        );
    }
    out
}

/// Left-aligned first columns, right-aligned numbers.
pub fn text_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            if i < 2 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "{c:>w$}");
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out.push_str(&line(
        widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect(),
    ));
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

pub fn reports_table(reports: &[EvalReport]) -> String {
    let mut header = vec!["policy", "trace"];
    header.extend(METRIC_COLUMNS);
    let rows: Vec<Vec<String>> = reports
        .iter()
        .flat_map(|rep| rep.rows.iter().chain(std::iter::once(&rep.aggregate)))
        .map(|r| {
            let mut cells = vec![r.policy.clone(), r.trace.clone()];
            cells.extend(r.metrics().iter().map(|m| format!("{m:.3}")));
            cells
        })
        .collect();
    text_table(&header, &rows)
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format!("{:.2}", r.r0),
                format!("{:.4}", r.mean_bitrate),
                format!("{:.4}", r.mean_rebuffer),
                format!("{:.3}", r.mean_qoe),
            ]
        })
        .collect();
    text_table(&["r0", "mean_bitrate", "mean_rebuffer", "mean_qoe"], &cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{parse_trace, synthetic_corpus};

    fn ctx() -> PolicyContext {
        PolicyContext::new(Arc::new(QualityModel::default()), SessionConfig::default())
    }

    fn corpus(n: usize, mean: f64) -> Vec<Arc<NetworkTrace>> {
        synthetic_corpus(n, mean, 0.4, 3).into_iter().map(Arc::new).collect()
    }

    #[test]
    fn bb_on_fast_constant_link() {
        let t = Arc::new(parse_trace("0 100\n1 100", "fast").unwrap());
        let reg = PolicyRegistry::with_builtins();
        let rep = evaluate(&reg, "bb", &ctx(), &[t], 1).unwrap();
        let ep = {
            let mut p = reg.build("bb", &ctx()).unwrap();
            let tr = Arc::new(parse_trace("0 100\n1 100", "fast").unwrap());
            run_episode(p.as_mut(), &SessionConfig::default(), ctx().quality, tr, 0.3, 0).unwrap()
        };
        assert_eq!(rep.rows.len(), 1);
        let first = ep.steps[0].0.rebuffer_s;
        let later: f64 = ep.steps[1..].iter().map(|s| s.0.rebuffer_s).sum();
        assert!(first > 0.0);
        assert_eq!(later, 0.0);
        assert!(ep.steps.iter().any(|s| s.0.action == 5));
    }

    #[test]
    fn row_count_and_aggregate() {
        let traces = corpus(5, 3.0);
        let rep = evaluate(&PolicyRegistry::with_builtins(), "rate", &ctx(), &traces, 9).unwrap();
        assert_eq!(rep.rows.len(), 5);
        let mean = rep.rows.iter().map(|r| r.total_qoe).sum::<f64>() / 5.0;
        assert!((rep.aggregate.total_qoe - mean).abs() < 1e-9);
        let names: Vec<&str> = rep.rows.iter().map(|r| r.trace.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
    }

    #[test]
    fn compare_is_paired_and_deterministic() {
        let traces = corpus(4, 2.5);
        let reg = PolicyRegistry::with_builtins();
        let a = compare(&reg, &["bb", "mpc"], &ctx(), &traces, 5).unwrap();
        let b = compare(&reg, &["bb", "mpc"], &ctx(), &traces, 5).unwrap();
        assert_eq!(a, b);
        let left: Vec<&str> = a.reports[0].rows.iter().map(|r| r.trace.as_str()).collect();
        let right: Vec<&str> = a.reports[1].rows.iter().map(|r| r.trace.as_str()).collect();
        assert_eq!(left, right);
        assert!(compare(&reg, &["bb"], &ctx(), &traces, 5).is_err());
    }

    #[test]
    fn random_below_mpc() {
        let traces = corpus(10, 3.0);
        let reg = PolicyRegistry::with_builtins();
        let c = compare(&reg, &["random", "mpc"], &ctx(), &traces, 42).unwrap();
        assert!(c.reports[0].aggregate.total_qoe < c.reports[1].aggregate.total_qoe);
        assert_eq!(c.ranking[0], "mpc");
    }

    #[test]
    fn csv_round_trip_and_header() {
        let traces = corpus(3, 3.0);
        let rep = evaluate(&PolicyRegistry::with_builtins(), "bb", &ctx(), &traces, 1).unwrap();
        let csv = reports_csv(std::slice::from_ref(&rep), "abc", 1);
        assert!(csv.starts_with("# config_hash=abc seed=1\npolicy,trace,total_qoe"));
        let (rows, means) = parse_reports_csv(&csv).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(means.len(), 1);
        let table = reports_table(&[rep]);
        assert_eq!(table.lines().count(), 2 + 4);
    }

    #[test]
    fn sweep_rows_and_guards() {
        let traces = corpus(2, 2.0);
        let reg = PolicyRegistry::with_builtins();
        let rows = threshold_sweep(&reg, "bb", &ctx(), &traces, &[0.6, 0.7, 0.8, 0.9, 1.0], 1).unwrap();
        assert_eq!(rows.len(), 5);
        assert!(threshold_sweep(&reg, "bb", &ctx(), &traces, &[0.0], 1).is_err());
        assert!(threshold_sweep(&reg, "bb", &ctx(), &traces, &[1.5], 1).is_err());
    }

    #[test]
    fn offsets_depend_on_seed_and_name() {
        let traces = corpus(2, 2.0);
        let a = session_offset(1, &traces[0]);
        assert_eq!(a, session_offset(1, &traces[0]));
        assert_ne!(a, session_offset(2, &traces[0]));
        assert_ne!(a, session_offset(1, &traces[1]));
        assert!(a >= 0.0 && a < traces[0].duration());
    }
}
