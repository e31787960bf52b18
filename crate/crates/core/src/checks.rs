//! Self-check suites: MPC planner against exhaustive enumeration, and
//! network gradients against central finite differences.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{exhaustive_oracle, mpc_plan, MpcProblem};
use crate::error::Result;
use crate::nn::{NetParams, NetSpec, OutputHead};
use crate::quality::QualityModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcCheck {
    pub instances: usize,
    pub matches: usize,
    /// Largest planned-score difference between the two planners.
    pub max_score_gap: f64,
}

/// Random planning instance: buffer, bandwidth, previous level and
/// per-step size jitter all drawn from `rng`; horizon in `1..=max_horizon`.
pub fn random_mpc_instance(
    quality: &QualityModel,
    rng: &mut ChaCha8Rng,
    max_horizon: usize,
) -> (Vec<Vec<f64>>, MpcInstance) {
    let horizon = rng.random_range(1..=max_horizon.max(1));
    let sizes = (0..horizon)
        .map(|_| {
            quality
                .ladder
                .iter()
                .map(|l| l.chunk_megabytes * rng.random_range(0.8..1.2))
                .collect()
        })
        .collect();
    let inst = MpcInstance {
        buffer: rng.random_range(0.0..60.0),
        last_level: rng.random_range(0..quality.levels()),
        first_chunk: rng.random_bool(0.2),
        bandwidth_mbps: (rng.random_range(0.2f64.ln()..12f64.ln())).exp(),
        horizon,
    };
    (sizes, inst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcInstance {
    pub buffer: f64,
    pub last_level: usize,
    pub first_chunk: bool,
    pub bandwidth_mbps: f64,
    pub horizon: usize,
}

impl MpcInstance {
    pub fn problem<'a>(&self, quality: &'a QualityModel, sizes: &'a [Vec<f64>]) -> MpcProblem<'a> {
        MpcProblem {
            quality,
            chunk_duration: 4.0,
            max_buffer: 60.0,
            buffer: self.buffer,
            last_level: self.last_level,
            first_chunk: self.first_chunk,
            bandwidth_mbps: self.bandwidth_mbps,
            horizon: self.horizon,
            lookahead_sizes: sizes,
        }
    }
}

pub fn mpc_agreement(quality: &QualityModel, instances: usize, max_horizon: usize, seed: u64) -> Result<MpcCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = MpcCheck {
        instances,
        matches: 0,
        max_score_gap: 0.0,
    };
    for _ in 0..instances {
        let (sizes, inst) = random_mpc_instance(quality, &mut rng, max_horizon);
        let p = inst.problem(quality, &sizes);
        let (a, sa) = mpc_plan(&p)?;
        let (b, sb) = exhaustive_oracle(&p)?;
        if a == b {
            out.matches += 1;
        }
        out.max_score_gap = out.max_score_gap.max((sa - sb).abs());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub nets: usize,
    pub parameters: usize,
    pub max_rel_error: f64,
}

/// Relative error with a floor so that near-zero gradients are compared
/// absolutely.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Random small networks with a random linear read-out as the loss; every
/// parameter's backprop gradient is compared with a central difference.
#[allow(clippy::needless_range_loop)]
pub fn gradient_check(nets: usize, seed: u64) -> Result<GradientCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradientCheck {
        nets,
        parameters: 0,
        max_rel_error: 0.0,
    };
    let eps = 1e-5;
    for n in 0..nets {
        let depth = rng.random_range(1..=3);
        let sizes: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=6)).collect();
        let head = if rng.random_bool(0.5) && *sizes.last().unwrap() > 1 {
            OutputHead::LogSoftmax
        } else {
            OutputHead::Linear
        };
        let spec = NetSpec::new(sizes.clone(), head);
        let mut net = NetParams::init(&spec, seed.wrapping_add(n as u64))?;
        for l in &mut net.layers {
            l.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let batch = rng.random_range(1..=4);
        let x = Array2::from_shape_fn((batch, sizes[0]), |_| rng.random_range(-2.0..2.0));
        let w = Array2::from_shape_fn((batch, *sizes.last().unwrap()), |_| rng.random_range(-1.0..1.0));
        let loss = |p: &NetParams| -> Result<f64> { Ok((p.forward_batch(&x)?.output() * &w).sum()) };
        let cache = net.forward_batch(&x)?;
        let grads = net.backward(&cache, &w)?;
        for li in 0..net.layers.len() {
            let (rows, cols) = net.layers[li].weight.dim();
            for r in 0..rows {
                for c in 0..cols {
                    let orig = net.layers[li].weight[[r, c]];
                    net.layers[li].weight[[r, c]] = orig + eps;
                    let up = loss(&net)?;
                    net.layers[li].weight[[r, c]] = orig - eps;
                    let down = loss(&net)?;
                    net.layers[li].weight[[r, c]] = orig;
                    let e = rel_error(grads[li].weight[[r, c]], (up - down) / (2.0 * eps));
                    out.max_rel_error = out.max_rel_error.max(e);
                    out.parameters += 1;
                }
            }
            for c in 0..net.layers[li].bias.len() {
                let orig = net.layers[li].bias[c];
                net.layers[li].bias[c] = orig + eps;
                let up = loss(&net)?;
                net.layers[li].bias[c] = orig - eps;
                let down = loss(&net)?;
                net.layers[li].bias[c] = orig;
                let e = rel_error(grads[li].bias[c], (up - down) / (2.0 * eps));
                out.max_rel_error = out.max_rel_error.max(e);
                out.parameters += 1;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_runs_pass() {
        let q = QualityModel::default();
        let m = mpc_agreement(&q, 20, 3, 1).unwrap();
        assert_eq!(m.matches, 20);
        let g = gradient_check(5, 1).unwrap();
        assert!(g.max_rel_error < 1e-4, "{g:?}");
        assert!(g.parameters > 0);
    }
}
