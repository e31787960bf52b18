//! Chunk-level streaming session with progressive playback.
//!
//! Downloads are sequential. The playhead reaches chunk `i` once the content
//! buffered ahead of it has drained; if fewer than `r0` of the chunk's bytes
//! have arrived by then the player stalls until they have. Playback of the
//! chunk then runs for `chunk_duration` seconds at a quality that improves as
//! the rest of the model arrives. When the buffer would exceed its cap the
//! client idles before requesting the next chunk.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quality::{chunk_qoe, QualityError, QualityModel};
use crate::trace::NetworkTrace;

/// Normalisation constants for [`Observation::to_vector`].
pub const THROUGHPUT_SCALE_MBPS: f64 = 10.0;
pub const DELAY_SCALE_S: f64 = 10.0;
pub const SIZE_SCALE_MB: f64 = 4.0;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("step called after the session finished")]
    StepAfterDone,
    #[error("action {action} outside ladder of {levels} levels")]
    InvalidAction { action: usize, levels: usize },
    #[error("invalid session config: {0}")]
    BadConfig(String),
    #[error("start offset {0} must be a finite non-negative time")]
    BadOffset(f64),
    #[error(transparent)]
    Quality(#[from] QualityError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub chunk_duration: f64,
    pub num_chunks: usize,
    pub max_buffer: f64,
    pub history_len: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            chunk_duration: 4.0,
            num_chunks: 40,
            max_buffer: 60.0,
            history_len: 8,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.chunk_duration > 0.0) || !(self.max_buffer > 0.0) {
            return Err(EnvError::BadConfig("durations must be positive".into()));
        }
        if self.num_chunks == 0 || self.history_len == 0 {
            return Err(EnvError::BadConfig(
                "chunk count and history length must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Flattened observation width for a ladder of `levels` entries.
    pub fn observation_len(&self, levels: usize) -> usize {
        2 * self.history_len + levels + 3
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Past download throughputs in mbps, oldest first.
    pub throughput_history: Vec<f64>,
    /// Past download durations in seconds, oldest first.
    pub delay_history: Vec<f64>,
    /// Sizes in MB of the next chunk at each ladder level.
    pub next_sizes: Vec<f64>,
    /// Seconds of content buffered ahead of the playhead.
    pub buffer: f64,
    pub last_level: usize,
    pub remaining: usize,
    pub max_buffer: f64,
    pub num_chunks: usize,
}

impl Observation {
    /// `[throughput | delay | sizes | buffer | last level | remaining]`, each
    /// block scaled to O(1).
    pub fn to_vector(&self) -> Vec<f64> {
        let levels = self.next_sizes.len();
        let mut v = Vec::with_capacity(2 * self.throughput_history.len() + levels + 3);
        v.extend(self.throughput_history.iter().map(|x| x / THROUGHPUT_SCALE_MBPS));
        v.extend(self.delay_history.iter().map(|x| x / DELAY_SCALE_S));
        v.extend(self.next_sizes.iter().map(|x| x / SIZE_SCALE_MB));
        v.push(self.buffer / self.max_buffer);
        v.push(if levels > 1 {
            self.last_level as f64 / (levels - 1) as f64
        } else {
            0.0
        });
        v.push(self.remaining as f64 / self.num_chunks as f64);
        v
    }

    /// True before the first download of a session.
    pub fn is_first_chunk(&self) -> bool {
        self.remaining == self.num_chunks
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub chunk: usize,
    pub action: usize,
    /// Download start.
    pub t0: f64,
    /// Time the playhead reached this chunk (clamped to `t0`).
    pub tp: f64,
    /// Download end.
    pub td: f64,
    pub rebuffer_s: f64,
    pub avg_bitrate: f64,
    pub download_time: f64,
    pub sleep_s: f64,
    /// Downloaded fraction when playback of this chunk began.
    pub playback_fraction: f64,
    pub switch_penalty: f64,
    /// Buffer after the step, post-sleep.
    pub buffer_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub diagnostics: StepDiagnostics,
}

/// A single streaming session over one trace.
#[derive(Debug, Clone)]
pub struct Session {
    config: SessionConfig,
    quality: Arc<QualityModel>,
    trace: Arc<NetworkTrace>,
    seed: u64,
    start_offset: f64,
    clock: f64,
    /// Absolute time at which all buffered content has been played.
    playhead_free: f64,
    last_level: usize,
    prev_quality: Option<f64>,
    throughput: VecDeque<f64>,
    delay: VecDeque<f64>,
    remaining: usize,
    chunk: usize,
    total_download: f64,
    total_sleep: f64,
    total_rebuffer: f64,
}

impl Session {
    /// Starts a fresh session at `start_offset` seconds into the trace.
    pub fn reset(
        config: SessionConfig,
        quality: Arc<QualityModel>,
        trace: Arc<NetworkTrace>,
        start_offset: f64,
        seed: u64,
    ) -> Result<(Self, Observation), EnvError> {
        config.validate()?;
        if !(start_offset >= 0.0) || !start_offset.is_finite() {
            return Err(EnvError::BadOffset(start_offset));
        }
        let h = config.history_len;
        let session = Self {
            remaining: config.num_chunks,
            config,
            quality,
            trace,
            seed,
            start_offset,
            clock: start_offset,
            playhead_free: start_offset,
            last_level: 0,
            prev_quality: None,
            throughput: VecDeque::from(vec![0.0; h]),
            delay: VecDeque::from(vec![0.0; h]),
            chunk: 0,
            total_download: 0.0,
            total_sleep: 0.0,
            total_rebuffer: 0.0,
        };
        let obs = session.observation();
        Ok((session, obs))
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn quality(&self) -> &QualityModel {
        &self.quality
    }

    pub fn trace(&self) -> &NetworkTrace {
        &self.trace
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn start_offset(&self) -> f64 {
        self.start_offset
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn playhead_free(&self) -> f64 {
        self.playhead_free
    }

    pub fn buffer(&self) -> f64 {
        (self.playhead_free - self.clock).max(0.0)
    }

    pub fn is_done(&self) -> bool {
        self.remaining == 0
    }

    /// Totals of (download, sleep, rebuffer) seconds so far.
    pub fn totals(&self) -> (f64, f64, f64) {
        (self.total_download, self.total_sleep, self.total_rebuffer)
    }

    pub fn observation(&self) -> Observation {
        Observation {
            throughput_history: self.throughput.iter().copied().collect(),
            delay_history: self.delay.iter().copied().collect(),
            next_sizes: self.quality.ladder.iter().map(|l| l.chunk_megabytes).collect(),
            buffer: self.buffer(),
            last_level: self.last_level,
            remaining: self.remaining,
            max_buffer: self.config.max_buffer,
            num_chunks: self.config.num_chunks,
        }
    }

    /// Downloads and schedules the next chunk at ladder level `action`.
    pub fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        if self.is_done() {
            return Err(EnvError::StepAfterDone);
        }
        let levels = self.quality.levels();
        if action >= levels {
            return Err(EnvError::InvalidAction { action, levels });
        }
        let q = &*self.quality;
        let trace = &*self.trace;
        let chunk_s = self.config.chunk_duration;
        let size = q.ladder[action].chunk_megabytes;

        let t0 = self.clock;
        let td = trace.invert_download_time(t0, size);
        let download_time = td - t0;

        // The playhead may already be idle (buffer ran dry mid-previous download);
        // that wait counts as stall for this chunk.
        let idle_since_dry = (t0 - self.playhead_free).max(0.0);
        let tp = self.playhead_free.max(t0);
        let wait = q.rebuffer_time(action, trace, t0, tp)?;
        let rebuffer = idle_since_dry + wait;
        let play_start = tp + wait;

        let avg_bitrate = q.average_bitrate(action, trace, t0, play_start, td, chunk_s)?;
        let got = trace
            .integrate_megabytes(t0, play_start)
            .map_err(|e| QualityError::BadTiming(e.to_string()))?;
        let playback_fraction = (got / size).min(1.0);

        self.playhead_free = play_start + chunk_s;
        self.clock = td;
        let mut sleep = 0.0;
        let ahead = self.playhead_free - self.clock;
        if ahead > self.config.max_buffer {
            sleep = ahead - self.config.max_buffer;
            self.clock += sleep;
        }

        let q_prev = self.prev_quality.unwrap_or(avg_bitrate);
        let reward = chunk_qoe(&q.weights, avg_bitrate, q_prev, rebuffer);
        let switch_penalty = q.weights.smooth_weight * (avg_bitrate - q_prev).abs();

        self.throughput.pop_front();
        self.throughput.push_back(size * 8.0 / download_time.max(1e-12));
        self.delay.pop_front();
        self.delay.push_back(download_time);
        self.prev_quality = Some(avg_bitrate);
        self.last_level = action;
        self.remaining -= 1;
        self.total_download += download_time;
        self.total_sleep += sleep;
        self.total_rebuffer += rebuffer;
        let diagnostics = StepDiagnostics {
            chunk: self.chunk,
            action,
            t0,
            tp,
            td,
            rebuffer_s: rebuffer,
            avg_bitrate,
            download_time,
            sleep_s: sleep,
            playback_fraction,
            switch_penalty,
            buffer_after: self.buffer(),
        };
        self.chunk += 1;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.is_done(),
            diagnostics,
        })
    }
}

/// CSV event log, one row per chunk.
pub fn event_log_csv(rows: &[(StepDiagnostics, f64)]) -> String {
    let mut out = String::from("chunk,action,t0,tp,td,rebuffer_s,sleep_s,avg_bitrate,reward\n");
    for (d, reward) in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            d.chunk, d.action, d.t0, d.tp, d.td, d.rebuffer_s, d.sleep_s, d.avg_bitrate, reward
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quality::{LadderLevel, PsnrCurve, QoeWeights, SparsityModel};
    use crate::trace::parse_trace;

    fn constant_trace(mbps: f64) -> Arc<NetworkTrace> {
        Arc::new(parse_trace(&format!("0 {mbps}\n1 {mbps}"), "const").unwrap())
    }

    fn two_mb_model() -> QualityModel {
        QualityModel {
            ladder: vec![
                LadderLevel {
                    bitrate_mbps: 1.0,
                    bpp: 0.1,
                    chunk_megabytes: 0.5,
                    resolution: "a".into(),
                },
                LadderLevel {
                    bitrate_mbps: 4.0,
                    bpp: 0.1,
                    chunk_megabytes: 2.0,
                    resolution: "b".into(),
                },
            ],
            nerv_curve: PsnrCurve { a: 46.0, k: 3.2 },
            h264_curve: PsnrCurve { a: 43.0, k: 3.5 },
            sparsity: SparsityModel { b: 0.5, c: 5.0 },
            gamma0: 1.0,
            r0: 0.7,
            weights: QoeWeights::default(),
        }
    }

    #[test]
    fn reset_is_zeroed() {
        let q = Arc::new(QualityModel::default());
        let (s, obs) = Session::reset(SessionConfig::default(), q.clone(), constant_trace(4.0), 3.0, 9).unwrap();
        assert!(obs.throughput_history.iter().all(|&x| x == 0.0));
        assert_eq!(obs.throughput_history.len(), 8);
        assert!(obs.delay_history.iter().all(|&x| x == 0.0));
        assert_eq!(obs.buffer, 0.0);
        assert_eq!(obs.last_level, 0);
        assert_eq!(obs.remaining, 40);
        assert_eq!(s.clock(), 3.0);
        let (_, again) = Session::reset(SessionConfig::default(), q, constant_trace(4.0), 3.0, 9).unwrap();
        assert_eq!(obs, again);
    }

    #[test]
    fn first_chunk_hand_timeline() {
        let q = Arc::new(two_mb_model());
        let (mut s, _) = Session::reset(SessionConfig::default(), q.clone(), constant_trace(8.0), 0.0, 0).unwrap();
        let r = s.step(1).unwrap();
        let d = r.diagnostics;
        assert_eq!((d.t0, d.tp), (0.0, 0.0));
        assert!((d.rebuffer_s - 1.4).abs() < 1e-12);
        assert!((d.td - 2.0).abs() < 1e-12);
        let avg = q.average_bitrate(1, s.trace(), 0.0, 1.4, 2.0, 4.0).unwrap();
        assert!((d.avg_bitrate - avg).abs() < 1e-12);
        // first chunk has no switch penalty
        assert!((r.reward - (avg - 4.3 * 1.4)).abs() < 1e-12);
        assert!((r.observation.buffer - 3.4).abs() < 1e-12);
        assert!((r.observation.throughput_history[7] - 8.0).abs() < 1e-9);
        assert!((r.observation.delay_history[7] - 2.0).abs() < 1e-12);
        assert_eq!(r.observation.remaining, 39);
    }

    #[test]
    fn fast_link_no_stall() {
        let q = Arc::new(two_mb_model());
        let (mut s, _) = Session::reset(SessionConfig::default(), q.clone(), constant_trace(1e6), 0.0, 0).unwrap();
        s.step(1).unwrap();
        let r = s.step(0).unwrap();
        assert_eq!(r.diagnostics.rebuffer_s, 0.0);
        let q1 = q.equivalent_bitrate(1).unwrap();
        let q0 = q.equivalent_bitrate(0).unwrap();
        assert!((r.diagnostics.avg_bitrate - q0).abs() < 1e-12);
        // the first chunk's quality is fully credited only up to a 1e-6 s window
        assert!((r.reward - (q0 - (q0 - q1).abs())).abs() < 1e-6);
    }

    #[test]
    fn done_after_num_chunks() {
        let q = Arc::new(QualityModel::default());
        let (mut s, _) = Session::reset(SessionConfig::default(), q, constant_trace(5.0), 0.0, 0).unwrap();
        for i in 0..40 {
            let r = s.step(i % 6).unwrap();
            assert_eq!(r.done, i == 39);
        }
        assert_eq!(s.step(0), Err(EnvError::StepAfterDone));
    }

    #[test]
    fn rejects_bad_action() {
        let q = Arc::new(QualityModel::default());
        let (mut s, _) = Session::reset(SessionConfig::default(), q, constant_trace(5.0), 0.0, 0).unwrap();
        assert_eq!(s.step(6), Err(EnvError::InvalidAction { action: 6, levels: 6 }));
    }

    #[test]
    fn sleeps_at_buffer_cap() {
        let q = Arc::new(QualityModel::default());
        let cfg = SessionConfig {
            max_buffer: 10.0,
            ..SessionConfig::default()
        };
        let (mut s, _) = Session::reset(cfg, q, constant_trace(1000.0), 0.0, 0).unwrap();
        let mut slept = 0.0;
        for _ in 0..6 {
            let r = s.step(0).unwrap();
            assert!(r.observation.buffer <= 10.0 + 1e-9);
            slept += r.diagnostics.sleep_s;
        }
        assert!(slept > 0.0);
    }

    #[test]
    fn observation_layout() {
        let q = Arc::new(QualityModel::default());
        let (_, obs) = Session::reset(SessionConfig::default(), q, constant_trace(5.0), 0.0, 0).unwrap();
        let v = obs.to_vector();
        assert_eq!(v.len(), 25);
        assert_eq!(SessionConfig::default().observation_len(6), 25);
        assert!(v[..16].iter().all(|&x| x == 0.0));
        assert_eq!(v[16], 0.40 / 4.0);
        assert_eq!(&v[22..], &[0.0, 0.0, 1.0]);

        let full = Observation {
            throughput_history: vec![THROUGHPUT_SCALE_MBPS; 8],
            delay_history: vec![DELAY_SCALE_S; 8],
            next_sizes: vec![SIZE_SCALE_MB; 6],
            buffer: 60.0,
            last_level: 5,
            remaining: 40,
            max_buffer: 60.0,
            num_chunks: 40,
        };
        assert!(full.to_vector().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn event_log_header() {
        let csv = event_log_csv(&[]);
        assert_eq!(csv, "chunk,action,t0,tp,td,rebuffer_s,sleep_s,avg_bitrate,reward\n");
    }
}
