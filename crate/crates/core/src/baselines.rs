//! Rule-based and model-predictive ABR baselines.

use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::quality::QualityModel;

/// Buffer-based policy: lowest level inside the reservoir, highest above
/// reservoir + cushion, linear in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BbParams {
    pub reservoir: f64,
    pub cushion: f64,
}

impl Default for BbParams {
    fn default() -> Self {
        Self {
            reservoir: 5.0,
            cushion: 10.0,
        }
    }
}

impl BbParams {
    pub fn validate(&self, max_buffer: f64) -> Result<()> {
        if !(self.reservoir > 0.0 && self.cushion > 0.0 && self.reservoir + self.cushion <= max_buffer) {
            return Err(Error::Config(format!(
                "bb needs 0 < reservoir, 0 < cushion, reservoir + cushion <= {max_buffer}"
            )));
        }
        Ok(())
    }
}

pub fn bb_policy(obs: &Observation, params: &BbParams) -> usize {
    let top = obs.next_sizes.len().saturating_sub(1);
    if obs.buffer <= params.reservoir {
        return 0;
    }
    if obs.buffer >= params.reservoir + params.cushion {
        return top;
    }
    let frac = (obs.buffer - params.reservoir) / params.cushion;
    ((frac * top as f64).floor() as usize).min(top)
}

/// Harmonic mean of the newest `window` non-zero samples, if any.
pub fn harmonic_mean_recent(history: &[f64], window: usize) -> Option<f64> {
    let recent: Vec<f64> = history
        .iter()
        .rev()
        .filter(|&&x| x > 0.0)
        .take(window)
        .copied()
        .collect();
    if recent.is_empty() {
        return None;
    }
    Some(recent.len() as f64 / recent.iter().map(|x| 1.0 / x).sum::<f64>())
}

/// Highest ladder bitrate not above the harmonic-mean throughput estimate.
pub fn rate_policy(obs: &Observation, window: usize, quality: &QualityModel) -> usize {
    let Some(estimate) = harmonic_mean_recent(&obs.throughput_history, window.max(1)) else {
        return 0;
    };
    quality
        .ladder
        .iter()
        .rposition(|l| l.bitrate_mbps <= estimate)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcParams {
    pub horizon: usize,
    pub throughput_window: usize,
    pub safety_factor: f64,
    /// Upper bound on `levels ^ horizon` sequences enumerated per decision.
    pub enumeration_cap: u64,
}

impl Default for MpcParams {
    fn default() -> Self {
        Self {
            horizon: 5,
            throughput_window: 5,
            safety_factor: 1.0,
            enumeration_cap: 1_000_000,
        }
    }
}

/// Inputs shared by [`mpc_plan`] and [`exhaustive_oracle`].
#[derive(Debug, Clone, Copy)]
pub struct MpcProblem<'a> {
    pub quality: &'a QualityModel,
    pub chunk_duration: f64,
    pub max_buffer: f64,
    pub buffer: f64,
    pub last_level: usize,
    /// No switch penalty on the first planned chunk when set.
    pub first_chunk: bool,
    pub bandwidth_mbps: f64,
    pub horizon: usize,
    /// `lookahead_sizes[step][level]` in MB.
    pub lookahead_sizes: &'a [Vec<f64>],
}

impl<'a> MpcProblem<'a> {
    /// Builds the planning problem from an observation. Without throughput
    /// samples the forecast falls back to the lowest ladder bitrate.
    pub fn from_observation(
        obs: &Observation,
        params: &MpcParams,
        quality: &'a QualityModel,
        chunk_duration: f64,
        lookahead_sizes: &'a [Vec<f64>],
    ) -> Result<Self> {
        if params.horizon == 0 || params.throughput_window == 0 || !(params.safety_factor > 0.0) {
            return Err(Error::Config("mpc needs horizon >= 1, window >= 1, safety > 0".into()));
        }
        let forecast = harmonic_mean_recent(&obs.throughput_history, params.throughput_window)
            .unwrap_or(quality.ladder[0].bitrate_mbps);
        let horizon = params.horizon.min(obs.remaining).max(1);
        let problem = Self {
            quality,
            chunk_duration,
            max_buffer: obs.max_buffer,
            buffer: obs.buffer,
            last_level: obs.last_level,
            first_chunk: obs.is_first_chunk(),
            bandwidth_mbps: forecast / params.safety_factor,
            horizon,
            lookahead_sizes,
        };
        problem.check(params.enumeration_cap)?;
        Ok(problem)
    }

    fn check(&self, cap: u64) -> Result<()> {
        let levels = self.quality.levels();
        if self.lookahead_sizes.len() < self.horizon
            || self.lookahead_sizes[..self.horizon]
                .iter()
                .any(|row| row.len() != levels)
        {
            return Err(Error::Policy(format!(
                "lookahead sizes must be at least {} x {levels}",
                self.horizon
            )));
        }
        let count = (levels as u64).checked_pow(self.horizon as u32);
        if count.is_none_or(|c| c > cap) {
            return Err(Error::Policy(format!(
                "{levels}^{} action sequences exceed the enumeration cap {cap}; shrink the horizon",
                self.horizon
            )));
        }
        Ok(())
    }
}

/// Lookahead table repeating the ladder's per-level chunk sizes.
pub fn constant_lookahead(quality: &QualityModel, horizon: usize) -> Vec<Vec<f64>> {
    let row: Vec<f64> = quality.ladder.iter().map(|l| l.chunk_megabytes).collect();
    vec![row; horizon.max(1)]
}

#[derive(Debug, Clone, Copy)]
struct PlanState {
    ahead: f64,
    prev_q: f64,
    score: f64,
}

/// Best first action and its predicted total QoE, by iterating all
/// sequences in lexicographic order and re-simulating only the suffix that
/// changed. Ties keep the earlier (lower-index) sequence.
pub fn mpc_plan(problem: &MpcProblem<'_>) -> Result<(usize, f64)> {
    let mut problem = *problem;
    problem.horizon = problem.horizon.max(1);
    problem.check(u64::MAX)?;
    let problem = &problem;
    let q = problem.quality;
    let levels = q.levels();
    let h = problem.horizon;
    let equiv: Vec<f64> = (0..levels)
        .map(|i| q.equivalent_bitrate(i))
        .collect::<std::result::Result<_, _>>()?;
    let bw = problem.bandwidth_mbps / 8.0;
    let (mu, smooth, r0) = (q.weights.mu, q.weights.smooth_weight, q.r0);
    let advance = |s: &PlanState, depth: usize, level: usize, first: bool| -> PlanState {
        let size = problem.lookahead_sizes[depth][level];
        let download = size / bw;
        let stall = (r0 * size / bw - s.ahead).max(0.0);
        let ahead = (s.ahead + stall + problem.chunk_duration - download).min(problem.max_buffer);
        let qv = equiv[level];
        let prev = if first { qv } else { s.prev_q };
        PlanState {
            ahead,
            prev_q: qv,
            score: s.score + (qv - mu * stall - smooth * (qv - prev).abs()),
        }
    };
    let root = PlanState {
        ahead: problem.buffer,
        prev_q: equiv[problem.last_level.min(levels - 1)],
        score: 0.0,
    };
    let mut seq = vec![0usize; h];
    let mut states = vec![root; h + 1];
    let mut from = 0;
    let mut best = (0usize, f64::NEG_INFINITY);
    loop {
        for d in from..h {
            states[d + 1] = advance(&states[d], d, seq[d], d == 0 && problem.first_chunk);
        }
        let total = states[h].score;
        if total > best.1 {
            best = (seq[0], total);
        }
        // odometer increment
        let mut pos = h;
        loop {
            if pos == 0 {
                return Ok(best);
            }
            pos -= 1;
            seq[pos] += 1;
            if seq[pos] < levels {
                break;
            }
            seq[pos] = 0;
        }
        from = pos;
    }
}

pub fn mpc_policy(
    obs: &Observation,
    params: &MpcParams,
    quality: &QualityModel,
    chunk_duration: f64,
    lookahead_sizes: &[Vec<f64>],
) -> Result<usize> {
    let problem = MpcProblem::from_observation(obs, params, quality, chunk_duration, lookahead_sizes)?;
    Ok(mpc_plan(&problem)?.0)
}

/// Reference planner: plain depth-first recursion over every sequence with
/// no pruning or shared state, used to cross-check [`mpc_plan`].
pub fn exhaustive_oracle(problem: &MpcProblem<'_>) -> Result<(usize, f64)> {
    fn dfs(
        p: &MpcProblem<'_>,
        depth: usize,
        ahead: f64,
        prev_q: Option<f64>,
        score: f64,
    ) -> std::result::Result<f64, Error> {
        if depth == p.horizon {
            return Ok(score);
        }
        let q = p.quality;
        let mut best = f64::NEG_INFINITY;
        for level in 0..q.levels() {
            let size = p.lookahead_sizes[depth][level];
            let bw = p.bandwidth_mbps / 8.0;
            let stall = (q.r0 * size / bw - ahead).max(0.0);
            let next_ahead = (ahead + stall + p.chunk_duration - size / bw).min(p.max_buffer);
            let quality = q.equivalent_bitrate(level)?;
            let switch = match prev_q {
                Some(prev) => (quality - prev).abs(),
                None => 0.0,
            };
            let chunk = quality - q.weights.mu * stall - q.weights.smooth_weight * switch;
            let total = dfs(p, depth + 1, next_ahead, Some(quality), score + chunk)?;
            if total > best {
                best = total;
            }
        }
        Ok(best)
    }
    let mut problem = *problem;
    problem.horizon = problem.horizon.max(1);
    let problem = &problem;
    problem.check(u64::MAX)?;
    let q = problem.quality;
    let prev = if problem.first_chunk {
        None
    } else {
        Some(q.equivalent_bitrate(problem.last_level.min(q.levels() - 1))?)
    };
    // explore each first action separately so the winning index is known
    let mut best = (0usize, f64::NEG_INFINITY);
    for first in 0..q.levels() {
        let size = problem.lookahead_sizes[0][first];
        let bw = problem.bandwidth_mbps / 8.0;
        let stall = (q.r0 * size / bw - problem.buffer).max(0.0);
        let ahead = (problem.buffer + stall + problem.chunk_duration - size / bw).min(problem.max_buffer);
        let quality = q.equivalent_bitrate(first)?;
        let switch = prev.map_or(0.0, |p| (quality - p).abs());
        let chunk = quality - q.weights.mu * stall - q.weights.smooth_weight * switch;
        let total = dfs(problem, 1, ahead, Some(quality), chunk)?;
        if total > best.1 {
            best = (first, total);
        }
    }
    Ok(best)
}
