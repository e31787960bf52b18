//! Quality assessment for progressively played neural-video chunks.
//!
//! Each ladder level is a model of a given size. Its quality is mapped to an
//! "equivalent" H.264 bitrate through the ratio of log-PSNRs of the two codecs
//! at the same bits-per-pixel. A partially downloaded model is penalised through
//! an exponential sparsity term, and a chunk's reward-relevant bitrate is the
//! time average of that instantaneous value over its playback window.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::NetworkTrace;

#[derive(Debug, Error, PartialEq)]
pub enum QualityError {
    #[error("bits-per-pixel must be positive, got {0}")]
    NonPositiveBpp(f64),
    #[error("log argument {0} is not positive (check gamma0 and curve parameters)")]
    NonPositiveLogArgument(f64),
    #[error("zero denominator: gamma0 equals the reference PSNR")]
    ZeroDenominator,
    #[error("download fraction {0} outside [0, 1]")]
    FractionOutOfRange(f64),
    #[error("need at least 3 samples, got {0}")]
    InsufficientData(usize),
    #[error("samples are degenerate: {0}")]
    DegenerateSamples(&'static str),
    #[error("ladder level {0} out of range")]
    NoSuchLevel(usize),
    #[error("invalid timing: {0}")]
    BadTiming(String),
    #[error("invalid quality model: {0}")]
    Invalid(String),
}

impl QualityError {
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            QualityError::NonPositiveLogArgument(_) | QualityError::ZeroDenominator
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderLevel {
    pub bitrate_mbps: f64,
    pub bpp: f64,
    pub chunk_megabytes: f64,
    pub resolution: String,
}

/// `psnr(bpp) = a + k * ln(bpp)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsnrCurve {
    pub a: f64,
    pub k: f64,
}

impl PsnrCurve {
    pub fn psnr(&self, bpp: f64) -> Result<f64, QualityError> {
        if !(bpp > 0.0) {
            return Err(QualityError::NonPositiveBpp(bpp));
        }
        Ok(self.a + self.k * bpp.ln())
    }
}

/// Residual PSNR loss `b * exp(c * (1 - r))` at download fraction `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityModel {
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoeWeights {
    /// Penalty per second of rebuffering.
    pub mu: f64,
    /// Coefficient of the quality-switch term.
    pub smooth_weight: f64,
}

impl Default for QoeWeights {
    fn default() -> Self {
        Self {
            mu: 4.3,
            smooth_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityModel {
    pub ladder: Vec<LadderLevel>,
    /// PSNR curve of the neural representation.
    pub nerv_curve: PsnrCurve,
    /// PSNR curve of the H.264 reference.
    pub h264_curve: PsnrCurve,
    pub sparsity: SparsityModel,
    pub gamma0: f64,
    /// Downloaded fraction at which a chunk becomes playable.
    pub r0: f64,
    pub weights: QoeWeights,
}

impl Default for QualityModel {
    /// Six-level ladder (360p to 1080p). The curve, sparsity and `gamma0`
    /// values are illustrative defaults, not measured fits.
    fn default() -> Self {
        let rows = [
            (0.75, 0.137, 0.40, "360p"),
            (1.75, 0.174, 0.90, "480p"),
            (2.35, 0.086, 1.20, "720p"),
            (3.0, 0.107, 1.50, "720p"),
            (4.3, 0.071, 2.2, "1080p"),
            (7.0, 0.112, 3.5, "1080p"),
        ];
        Self {
            ladder: rows
                .iter()
                .map(|&(bitrate_mbps, bpp, chunk_megabytes, res)| LadderLevel {
                    bitrate_mbps,
                    bpp,
                    chunk_megabytes,
                    resolution: res.to_string(),
                })
                .collect(),
            nerv_curve: PsnrCurve { a: 46.0, k: 3.2 },
            h264_curve: PsnrCurve { a: 43.0, k: 3.5 },
            sparsity: SparsityModel { b: 0.5, c: 5.0 },
            gamma0: 1.0,
            r0: 0.7,
            weights: QoeWeights::default(),
        }
    }
}

impl QualityModel {
    pub fn from_toml(text: &str) -> Result<Self, QualityError> {
        let model: Self = toml::from_str(text).map_err(|e| QualityError::Invalid(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("quality model serializes")
    }

    pub fn with_r0(&self, r0: f64) -> Result<Self, QualityError> {
        let mut m = self.clone();
        m.r0 = r0;
        m.validate()?;
        Ok(m)
    }

    /// Checks every invariant that keeps the log mappings well defined.
    pub fn validate(&self) -> Result<(), QualityError> {
        let bad = |m: String| Err(QualityError::Invalid(m));
        if self.ladder.is_empty() {
            return bad("empty ladder".into());
        }
        for (i, l) in self.ladder.iter().enumerate() {
            if !(l.chunk_megabytes > 0.0) || !(l.bpp > 0.0) || !(l.bitrate_mbps > 0.0) {
                return bad(format!("level {i}: sizes, bpp and bitrate must be positive"));
            }
            if i > 0 && l.bitrate_mbps <= self.ladder[i - 1].bitrate_mbps {
                return bad(format!("level {i}: bitrates must strictly increase"));
            }
        }
        if !(self.nerv_curve.k > 0.0) || !(self.h264_curve.k > 0.0) {
            return bad("PSNR curve slopes must be positive".into());
        }
        if !(self.sparsity.b >= 0.0) || !(self.sparsity.c > 0.0) {
            return bad("sparsity needs b >= 0 and c > 0".into());
        }
        if !(self.gamma0 > 0.0) {
            return bad("gamma0 must be positive".into());
        }
        if !(self.r0 > 0.0 && self.r0 <= 1.0) {
            return bad(format!("r0 {} outside (0, 1]", self.r0));
        }
        if !(self.weights.mu >= 0.0) || !(self.weights.smooth_weight >= 0.0) {
            return bad("QoE weights must be non-negative".into());
        }
        for i in 0..self.ladder.len() {
            let bpp = self.ladder[i].bpp;
            let f0 = self.h264_curve.psnr(bpp)?;
            if !(f0 > self.gamma0) {
                return bad(format!("level {i}: reference PSNR {f0} not above gamma0"));
            }
            // gamma_beta(r) is increasing in r, so r0 is the binding case
            let g = self.pruned_psnr(i, self.r0)?;
            if !(g > self.gamma0) {
                return bad(format!("level {i}: pruned PSNR {g} at r0 not above gamma0"));
            }
        }
        Ok(())
    }

    pub fn level(&self, index: usize) -> Result<&LadderLevel, QualityError> {
        self.ladder.get(index).ok_or(QualityError::NoSuchLevel(index))
    }

    pub fn levels(&self) -> usize {
        self.ladder.len()
    }

    fn log_ratio_bitrate(&self, level: &LadderLevel, numerator_psnr: f64) -> Result<f64, QualityError> {
        let f0 = self.h264_curve.psnr(level.bpp)?;
        let denom_arg = f0 / self.gamma0;
        if !(denom_arg > 0.0) {
            return Err(QualityError::NonPositiveLogArgument(denom_arg));
        }
        let denom = denom_arg.ln();
        if denom == 0.0 {
            return Err(QualityError::ZeroDenominator);
        }
        let num_arg = numerator_psnr / self.gamma0;
        if !(num_arg > 0.0) {
            return Err(QualityError::NonPositiveLogArgument(num_arg));
        }
        Ok(level.bitrate_mbps * num_arg.ln() / denom)
    }

    /// Equivalent H.264 bitrate of a fully downloaded model.
    pub fn equivalent_bitrate(&self, index: usize) -> Result<f64, QualityError> {
        let level = self.level(index)?;
        let fv = self.nerv_curve.psnr(level.bpp)?;
        self.log_ratio_bitrate(level, fv)
    }

    /// PSNR of the model after only a fraction `r` of it has arrived.
    pub fn pruned_psnr(&self, index: usize, r: f64) -> Result<f64, QualityError> {
        if !(0.0..=1.0).contains(&r) {
            return Err(QualityError::FractionOutOfRange(r));
        }
        let level = self.level(index)?;
        let fv = self.nerv_curve.psnr(level.bpp)?;
        Ok(fv - self.sparsity.b * (self.sparsity.c * (1.0 - r)).exp())
    }

    /// Equivalent bitrate of a partially downloaded model.
    pub fn instantaneous_bitrate(&self, index: usize, r: f64) -> Result<f64, QualityError> {
        let gamma = self.pruned_psnr(index, r)?;
        if !(gamma > self.gamma0) {
            return Err(QualityError::NonPositiveLogArgument(gamma / self.gamma0));
        }
        self.log_ratio_bitrate(self.level(index)?, gamma)
    }

    /// Time-averaged equivalent bitrate over one chunk's playback window.
    ///
    /// Download starts at `t0`, playback at `tp`, download completes at `td`,
    /// and the chunk lasts `chunk_duration` seconds. While the download is in
    /// progress the instantaneous bitrate follows the downloaded fraction; once
    /// complete, the full-model value applies for the rest of the window.
    pub fn average_bitrate(
        &self,
        index: usize,
        trace: &NetworkTrace,
        t0: f64,
        tp: f64,
        td: f64,
        chunk_duration: f64,
    ) -> Result<f64, QualityError> {
        if !(tp >= t0) || !(td >= t0) {
            return Err(QualityError::BadTiming(format!("t0={t0} tp={tp} td={td}")));
        }
        if !(chunk_duration > 0.0) {
            return Err(QualityError::BadTiming(format!("chunk duration {chunk_duration}")));
        }
        let full = self.equivalent_bitrate(index)?;
        let end = td.max(tp).min(tp + chunk_duration);
        if end <= tp {
            return Ok(full);
        }
        let size = self.level(index)?.chunk_megabytes;
        let rate = |tau: f64| -> Result<f64, QualityError> {
            let got = trace
                .integrate_megabytes(t0, tau)
                .map_err(|e| QualityError::BadTiming(e.to_string()))?;
            self.instantaneous_bitrate(index, (got / size).clamp(0.0, 1.0))
        };
        let mut knots = vec![tp];
        knots.extend(trace.breakpoints(tp, end));
        knots.push(end);
        let tol = 1e-10 * full.abs().max(1e-12) * (end - tp);
        let mut integral = 0.0;
        for w in knots.windows(2) {
            integral += adaptive_simpson(&rate, w[0], w[1], tol)?;
        }
        Ok(integral / chunk_duration + (chunk_duration - (end - tp)) / chunk_duration * full)
    }

    /// Stall needed before a chunk whose playhead arrives at `tp` can start:
    /// zero if the playable fraction has arrived by then, otherwise the wait
    /// until it does.
    pub fn rebuffer_time(&self, index: usize, trace: &NetworkTrace, t0: f64, tp: f64) -> Result<f64, QualityError> {
        if !(tp >= t0) {
            return Err(QualityError::BadTiming(format!("tp {tp} before t0 {t0}")));
        }
        let needed = self.r0 * self.level(index)?.chunk_megabytes;
        let got = trace
            .integrate_megabytes(t0, tp)
            .map_err(|e| QualityError::BadTiming(e.to_string()))?;
        if got >= needed {
            return Ok(0.0);
        }
        Ok((trace.invert_download_time(t0, needed) - tp).max(0.0))
    }
}

fn adaptive_simpson<F>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64, QualityError>
where
    F: Fn(f64) -> Result<f64, QualityError>,
{
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64, QualityError>
    where
        F: Fn(f64) -> Result<f64, QualityError>,
    {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm)?;
        let frm = f(rm)?;
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        Ok(recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?
            + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?)
    }
    if b <= a {
        return Ok(0.0);
    }
    let fa = f(a)?;
    let fb = f(b)?;
    let fm = f(0.5 * (a + b))?;
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Per-chunk QoE: quality minus rebuffer penalty minus switch penalty.
pub fn chunk_qoe(weights: &QoeWeights, q_curr: f64, q_prev: f64, rebuffer_s: f64) -> f64 {
    q_curr - weights.mu * rebuffer_s - weights.smooth_weight * (q_curr - q_prev).abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsityFit {
    pub model: SparsityModel,
    pub rms: f64,
}

/// Least-squares fit of `(b, c)` to `(fraction, psnr)` samples given the
/// full-model PSNR. For fixed `c` the optimal `b` is closed form, so the search
/// is one-dimensional: a log-spaced grid over `c` then golden-section refinement.
pub fn fit_sparsity(samples: &[(f64, f64)], full_psnr: f64) -> Result<SparsityFit, QualityError> {
    if samples.len() < 3 {
        return Err(QualityError::InsufficientData(samples.len()));
    }
    if samples
        .iter()
        .any(|&(r, p)| !(0.0..=1.0).contains(&r) || !p.is_finite())
    {
        return Err(QualityError::DegenerateSamples("fractions must lie in [0, 1]"));
    }
    let r_first = samples[0].0;
    if samples.iter().all(|&(r, _)| r == r_first) {
        return Err(QualityError::DegenerateSamples("all fractions equal"));
    }
    // residual loss y_j = b * e_j(c)
    let loss: Vec<(f64, f64)> = samples.iter().map(|&(r, p)| (1.0 - r, full_psnr - p)).collect();
    let best_b = |c: f64| {
        let (num, den) = loss.iter().fold((0.0, 0.0), |(n, d), &(x, y)| {
            let e = (c * x).exp();
            (n + y * e, d + e * e)
        });
        (num / den).max(0.0)
    };
    let sse = |c: f64| {
        let b = best_b(c);
        loss.iter().map(|&(x, y)| (y - b * (c * x).exp()).powi(2)).sum::<f64>()
    };

    let (c_lo, c_hi) = (1e-3_f64, 30.0_f64);
    let steps = 200;
    let grid: Vec<f64> = (0..=steps)
        .map(|i| c_lo * (c_hi / c_lo).powf(i as f64 / steps as f64))
        .collect();
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for (i, &c) in grid.iter().enumerate() {
        let v = sse(c);
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    let mut lo = grid[best.saturating_sub(1)];
    let mut hi = grid[(best + 1).min(steps)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (sse(x1), sse(x2));
    for _ in 0..200 {
        if (hi - lo) <= 1e-12 * hi {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = sse(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = sse(x2);
        }
    }
    let c = if f1 <= f2 { x1 } else { x2 };
    let c = if sse(c) <= best_val { c } else { grid[best] };
    let b = best_b(c);
    let rms = (sse(c) / samples.len() as f64).sqrt();
    Ok(SparsityFit {
        model: SparsityModel { b, c },
        rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::parse_trace;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    /// Single-level model whose curves evaluate to `fv` / `f0` at bpp = 1.
    fn point_model(fv: f64, f0: f64, b: f64, c: f64) -> QualityModel {
        QualityModel {
            ladder: vec![LadderLevel {
                bitrate_mbps: 1.75,
                bpp: 1.0,
                chunk_megabytes: 2.0,
                resolution: "480p".into(),
            }],
            nerv_curve: PsnrCurve { a: fv, k: 1.0 },
            h264_curve: PsnrCurve { a: f0, k: 1.0 },
            sparsity: SparsityModel { b, c },
            gamma0: 1.0,
            r0: 0.7,
            weights: QoeWeights::default(),
        }
    }

    #[test]
    fn psnr_curve() {
        assert_eq!(PsnrCurve { a: 40.0, k: 0.0 }.psnr(0.3).unwrap(), 40.0);
        assert_eq!(PsnrCurve { a: 45.0, k: 3.0 }.psnr(1.0).unwrap(), 45.0);
        let v = PsnrCurve { a: 45.0, k: 3.0 }.psnr(0.107).unwrap();
        assert!((v - (45.0 + 3.0 * 0.107f64.ln())).abs() < 1e-12);
        assert!((v - 38.29522).abs() < 5e-6, "{v}");
        assert!(matches!(
            PsnrCurve { a: 1.0, k: 1.0 }.psnr(0.0),
            Err(QualityError::NonPositiveBpp(_))
        ));
    }

    #[test]
    fn equivalent_bitrate_cases() {
        let same = point_model(36.0, 36.0, 0.5, 5.0);
        assert_eq!(same.equivalent_bitrate(0).unwrap(), 1.75);
        let m = point_model(38.0, 34.0, 0.5, 5.0);
        let q = m.equivalent_bitrate(0).unwrap();
        assert!(rel(q, 1.75 * 38f64.ln() / 34f64.ln()) < 1e-12);
        assert!((q - 1.8052).abs() < 5e-5);
        let mut z = m.clone();
        z.gamma0 = 34.0;
        assert_eq!(z.equivalent_bitrate(0), Err(QualityError::ZeroDenominator));
    }

    #[test]
    fn pruned_psnr_cases() {
        let m = point_model(40.0, 34.0, 0.0, 5.0);
        assert_eq!(m.pruned_psnr(0, 0.2).unwrap(), 40.0);
        let m = point_model(40.0, 34.0, 0.5, 5.0);
        assert_eq!(m.pruned_psnr(0, 1.0).unwrap(), 39.5);
        assert!((m.pruned_psnr(0, 0.6).unwrap() - 36.3055).abs() < 5e-5);
        assert!(matches!(
            m.pruned_psnr(0, 1.2),
            Err(QualityError::FractionOutOfRange(_))
        ));
    }

    #[test]
    fn instantaneous_bitrate_cases() {
        let m = point_model(38.0, 34.0, 0.0, 5.0);
        assert_eq!(
            m.instantaneous_bitrate(0, 1.0).unwrap(),
            m.equivalent_bitrate(0).unwrap()
        );
        let m = point_model(38.0, 34.0, 0.5, 5.0);
        let v = m.instantaneous_bitrate(0, 0.7).unwrap();
        assert!((v - 1.77503).abs() < 5e-6, "{v}");
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=300 {
            let r = 0.7 + 0.3 * i as f64 / 300.0;
            let v = m.instantaneous_bitrate(0, r).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        // far below r0 the residual swamps the full-model PSNR
        assert!(matches!(
            m.instantaneous_bitrate(0, 0.0),
            Err(QualityError::NonPositiveLogArgument(_))
        ));
    }

    #[test]
    fn average_bitrate_degenerate_timings() {
        let m = QualityModel::default();
        let trace = parse_trace("0 4\n1 2\n2 6", "t").unwrap();
        for i in 0..m.levels() {
            let full = m.equivalent_bitrate(i).unwrap();
            // downloaded before playback
            assert_eq!(m.average_bitrate(i, &trace, 0.0, 5.0, 3.0, 4.0).unwrap(), full);
        }
        let mut flat = m.clone();
        flat.sparsity.b = 0.0;
        let full = flat.equivalent_bitrate(3).unwrap();
        let v = flat.average_bitrate(3, &trace, 0.0, 2.0, 3.0, 4.0).unwrap();
        assert!(rel(v, full) < 1e-12);
    }

    #[test]
    fn average_bitrate_bounds() {
        let m = point_model(38.0, 34.0, 0.5, 5.0);
        let trace = parse_trace("0 8\n1 8", "c").unwrap();
        // 2 MB at 1 MB/s: playable at 1.4 s, done at 2.0 s
        let v = m.average_bitrate(0, &trace, 0.0, 1.4, 2.0, 4.0).unwrap();
        let lo = m.instantaneous_bitrate(0, 0.7).unwrap();
        let hi = m.equivalent_bitrate(0).unwrap();
        assert!(lo <= v && v <= hi);
    }

    #[test]
    fn rebuffer_cases() {
        let m = point_model(38.0, 34.0, 0.5, 5.0);
        let trace = parse_trace("0 8\n1 8", "c").unwrap();
        let t = m.rebuffer_time(0, &trace, 0.0, 1.0).unwrap();
        assert!((t - 0.4).abs() < 1e-12);
        assert_eq!(m.rebuffer_time(0, &trace, 0.0, 1.5).unwrap(), 0.0);
        let mut tiny = m.clone();
        tiny.r0 = 0.0;
        assert_eq!(tiny.rebuffer_time(0, &trace, 0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn qoe_cases() {
        let w = QoeWeights::default();
        assert_eq!((w.mu, w.smooth_weight), (4.3, 1.0));
        assert_eq!(chunk_qoe(&w, 3.0, 3.0, 0.0), 3.0);
        assert!((chunk_qoe(&w, 3.0, 1.75, 1.0) - -2.55).abs() < 1e-12);
    }

    #[test]
    fn fits_sparsity() {
        let truth = SparsityModel { b: 0.5, c: 5.0 };
        let fv = 40.0;
        let samples: Vec<(f64, f64)> = (0..8)
            .map(|i| {
                let r = 0.3 + 0.1 * i as f64;
                (r, fv - truth.b * (truth.c * (1.0 - r)).exp())
            })
            .collect();
        let fit = fit_sparsity(&samples, fv).unwrap();
        assert!((fit.model.b - 0.5).abs() < 1e-3, "{fit:?}");
        assert!((fit.model.c - 5.0).abs() < 1e-3, "{fit:?}");
        assert!(fit.rms < 1e-6);

        let flat: Vec<(f64, f64)> = [0.2, 0.5, 0.9].iter().map(|&r| (r, fv)).collect();
        assert_eq!(fit_sparsity(&flat, fv).unwrap().model.b, 0.0);
        assert_eq!(fit_sparsity(&samples[..2], fv), Err(QualityError::InsufficientData(2)));
        let same_r = [(0.5, 39.0), (0.5, 38.0), (0.5, 37.0)];
        assert!(matches!(
            fit_sparsity(&same_r, fv),
            Err(QualityError::DegenerateSamples(_))
        ));
    }

    #[test]
    fn default_model_is_valid_and_round_trips() {
        let m = QualityModel::default();
        m.validate().unwrap();
        let back = QualityModel::from_toml(&m.to_toml()).unwrap();
        assert_eq!(back, m);
        // NeRV dominates at every ladder bpp, so the mapping is a gain
        for i in 0..m.levels() {
            assert!(m.equivalent_bitrate(i).unwrap() > m.ladder[i].bitrate_mbps);
        }
    }
}
