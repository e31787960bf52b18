//! Small fully connected networks with hand-written backpropagation and Adam.
//!
//! Batches are row-major: one sample per row. Weights are stored `(in, out)`
//! so a layer computes `x · W + b`.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid network spec: {0}")]
    BadSpec(String),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("checkpoint parse error at line {line}: {reason}")]
    Checkpoint { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Linear,
    LogSoftmax,
}

impl OutputHead {
    fn as_str(self) -> &'static str {
        match self {
            OutputHead::Linear => "linear",
            OutputHead::LogSoftmax => "log_softmax",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_head: OutputHead,
}

impl NetSpec {
    pub fn new(layer_sizes: Vec<usize>, output_head: OutputHead) -> Self {
        Self {
            layer_sizes,
            hidden_activation: Activation::Relu,
            output_head,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.layer_sizes.len() < 2 {
            return Err(NnError::BadSpec("need at least input and output sizes".into()));
        }
        if self.layer_sizes.contains(&0) {
            return Err(NnError::BadSpec("layer sizes must be >= 1".into()));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }
}

/// Parameter set of one network. Gradients and optimizer moments reuse
/// the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub spec: NetSpec,
    pub layers: Vec<Layer>,
    pub seed: u64,
}

/// Activations saved by a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

pub type Gradients = Vec<Layer>;

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|x| x - lse);
    }
    out
}

impl NetParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: &NetSpec, seed: u64) -> Result<Self, NnError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = init_limit(fan_in, fan_out);
                let mut layer = Layer::zeros(fan_in, fan_out);
                layer.weight.mapv_inplace(|_| rng.random_range(-limit..=limit));
                layer
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
            seed,
        })
    }

    pub fn zeros_like(&self) -> Gradients {
        self.layers
            .iter()
            .map(|l| Layer::zeros(l.weight.nrows(), l.weight.ncols()))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<ForwardCache, NnError> {
        if x.ncols() != self.spec.input_len() {
            return Err(NnError::ShapeMismatch(format!(
                "input width {} != {}",
                x.ncols(),
                self.spec.input_len()
            )));
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            inputs.push(h);
            h = if i + 1 < n {
                z.mapv(|v| v.max(0.0))
            } else {
                match self.spec.output_head {
                    OutputHead::Linear => z.clone(),
                    OutputHead::LogSoftmax => log_softmax_rows(&z),
                }
            };
            pre.push(z);
        }
        Ok(ForwardCache { inputs, pre, output: h })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let batch =
            Array2::from_shape_vec((1, x.len()), x.to_vec()).map_err(|e| NnError::ShapeMismatch(e.to_string()))?;
        Ok(self.forward_batch(&batch)?.output.row(0).to_vec())
    }

    /// Reverse-mode gradients of `sum(grad_out ⊙ output)` w.r.t. all parameters.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Array2<f64>) -> Result<Gradients, NnError> {
        if grad_out.dim() != cache.output.dim() || cache.inputs.len() != self.layers.len() {
            return Err(NnError::ShapeMismatch(format!(
                "output grad {:?} vs cached output {:?}",
                grad_out.dim(),
                cache.output.dim()
            )));
        }
        let n = self.layers.len();
        let mut delta = match self.spec.output_head {
            OutputHead::Linear => grad_out.to_owned(),
            OutputHead::LogSoftmax => {
                // d logsoftmax: g - softmax * sum(g)
                let sums = grad_out.sum_axis(Axis(1));
                let mut d = grad_out.to_owned();
                Zip::from(d.rows_mut())
                    .and(cache.output.rows())
                    .and(&sums)
                    .for_each(|mut row, logp, &s| {
                        Zip::from(&mut row).and(&logp).for_each(|g, &lp| *g -= lp.exp() * s);
                    });
                d
            }
        };
        let mut grads: Vec<Layer> = Vec::with_capacity(n);
        for i in (0..n).rev() {
            let input = &cache.inputs[i];
            let weight_grad = input.t().dot(&delta);
            let bias_grad = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut upstream = delta.dot(&self.layers[i].weight.t());
                Zip::from(&mut upstream).and(&cache.pre[i - 1]).for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = upstream;
            }
            grads.push(Layer {
                weight: weight_grad,
                bias: bias_grad,
            });
        }
        grads.reverse();
        Ok(grads)
    }

    /// `self ← tau · source + (1 − tau) · self`.
    pub fn soft_update_from(&mut self, source: &NetParams, tau: f64) {
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            Zip::from(&mut dst.weight)
                .and(&src.weight)
                .for_each(|d, &s| *d = tau * s + (1.0 - tau) * *d);
            Zip::from(&mut dst.bias)
                .and(&src.bias)
                .for_each(|d, &s| *d = tau * s + (1.0 - tau) * *d);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Versioned text checkpoint. Values use Rust's shortest round-trip
    /// decimal form, so parsing reproduces every bit.
    pub fn to_checkpoint(&self, step: u64) -> String {
        let mut out = String::from("abrlab-net 1\n");
        let sizes: Vec<String> = self.spec.layer_sizes.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "layers {}", sizes.join(" "));
        let _ = writeln!(out, "activation relu");
        let _ = writeln!(out, "head {}", self.spec.output_head.as_str());
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "step {step}");
        for (i, l) in self.layers.iter().enumerate() {
            let _ = writeln!(out, "weight {i} {} {}", l.weight.nrows(), l.weight.ncols());
            push_values(&mut out, l.weight.iter());
            let _ = writeln!(out, "bias {i} {}", l.bias.len());
            push_values(&mut out, l.bias.iter());
        }
        out
    }

    /// Parses [`NetParams::to_checkpoint`] output; returns the params and step.
    pub fn from_checkpoint(text: &str) -> Result<(Self, u64), NnError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| NnError::Checkpoint {
                line: 0,
                reason: format!("unexpected end of file, expected {what}"),
            })
        };
        let err = |line: usize, reason: String| NnError::Checkpoint { line, reason };
        let (ln, magic) = next("header")?;
        if magic != "abrlab-net 1" {
            return Err(err(ln, format!("unknown header {magic:?}")));
        }
        let keyed = |(ln, line): (usize, &str), key: &str| -> Result<Vec<String>, NnError> {
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(err(ln, format!("expected {key}")));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let parse_usize = |ln: usize, s: &str| s.parse::<usize>().map_err(|e| err(ln, format!("{s:?}: {e}")));
        let l = next("layers")?;
        let sizes = keyed(l, "layers")?
            .iter()
            .map(|s| parse_usize(l.0, s))
            .collect::<Result<Vec<_>, _>>()?;
        let l = next("activation")?;
        if keyed(l, "activation")? != ["relu"] {
            return Err(err(l.0, "unsupported activation".into()));
        }
        let l = next("head")?;
        let head = match keyed(l, "head")?.first().map(String::as_str) {
            Some("linear") => OutputHead::Linear,
            Some("log_softmax") => OutputHead::LogSoftmax,
            other => return Err(err(l.0, format!("unknown head {other:?}"))),
        };
        let l = next("seed")?;
        let seed_s = keyed(l, "seed")?;
        let seed = seed_s
            .first()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| err(l.0, "bad seed".into()))?;
        let l = next("step")?;
        let step = keyed(l, "step")?
            .first()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| err(l.0, "bad step".into()))?;
        let spec = NetSpec::new(sizes, head);
        spec.validate()?;
        let mut layers = Vec::new();
        for (i, w) in spec.layer_sizes.windows(2).enumerate() {
            let l = next("weight header")?;
            let dims = keyed(l, "weight")?;
            let expect = [i.to_string(), w[0].to_string(), w[1].to_string()];
            if dims != expect {
                return Err(err(l.0, format!("weight header {dims:?}, expected {expect:?}")));
            }
            let l = next("weight values")?;
            let weight = Array2::from_shape_vec((w[0], w[1]), parse_values(l, w[0] * w[1])?)
                .map_err(|e| err(l.0, e.to_string()))?;
            let l = next("bias header")?;
            let dims = keyed(l, "bias")?;
            if dims != [i.to_string(), w[1].to_string()] {
                return Err(err(l.0, format!("bias header {dims:?}")));
            }
            let l = next("bias values")?;
            let bias = Array1::from(parse_values(l, w[1])?);
            layers.push(Layer { weight, bias });
        }
        Ok((Self { spec, layers, seed }, step))
    }
}

pub fn init_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn push_values<'a>(out: &mut String, values: impl Iterator<Item = &'a f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{v:?}");
    }
    out.push('\n');
}

fn parse_values((ln, line): (usize, &str), expected: usize) -> Result<Vec<f64>, NnError> {
    let values = line
        .split_whitespace()
        .map(|s| {
            s.parse::<f64>().map_err(|e| NnError::Checkpoint {
                line: ln,
                reason: format!("{s:?}: {e}"),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != expected {
        return Err(NnError::Checkpoint {
            line: ln,
            reason: format!("expected {expected} values, got {}", values.len()),
        });
    }
    Ok(values)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(params: &NetParams, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut NetParams, grads: &Gradients) -> Result<(), NnError> {
        if grads.len() != params.layers.len()
            || grads
                .iter()
                .zip(&params.layers)
                .any(|(g, p)| g.weight.dim() != p.weight.dim() || g.bias.dim() != p.bias.dim())
        {
            return Err(NnError::ShapeMismatch("gradient layout differs from params".into()));
        }
        if grads
            .iter()
            .any(|g| g.weight.iter().chain(g.bias.iter()).any(|v| !v.is_finite()))
        {
            return Err(NnError::NonFiniteGradient);
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let lr = self.lr;
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for ((layer, g), (m, v)) in params
            .layers
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            Zip::from(&mut layer.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .and(&g.weight)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small(head: OutputHead, seed: u64) -> NetParams {
        NetParams::init(&NetSpec::new(vec![3, 5, 4], head), seed).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = NetSpec::new(vec![25, 128, 128, 6], OutputHead::LogSoftmax);
        let a = NetParams::init(&spec, 42).unwrap();
        let b = NetParams::init(&spec, 42).unwrap();
        assert_eq!(a, b);
        for l in &a.layers {
            assert!(l.bias.iter().all(|&x| x == 0.0));
            let lim = init_limit(l.weight.nrows(), l.weight.ncols());
            assert!(l.weight.iter().all(|w| w.abs() <= lim));
        }
        assert_ne!(a, NetParams::init(&spec, 43).unwrap());
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(NetParams::init(&NetSpec::new(vec![3], OutputHead::Linear), 0).is_err());
        assert!(NetParams::init(&NetSpec::new(vec![3, 0, 2], OutputHead::Linear), 0).is_err());
    }

    #[test]
    fn zero_net_outputs_zero() {
        let mut p = NetParams::init(&NetSpec::new(vec![4, 4], OutputHead::Linear), 0).unwrap();
        p.layers[0].weight.fill(0.0);
        assert_eq!(p.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![0.0; 4]);
        assert!(p.forward(&[1.0]).is_err());
    }

    #[test]
    fn log_softmax_closed_form_and_stability() {
        let mut p = NetParams::init(&NetSpec::new(vec![1, 2], OutputHead::LogSoftmax), 0).unwrap();
        p.layers[0].weight.fill(0.0);
        let out = p.forward(&[1.0]).unwrap();
        for v in out {
            assert!((v + 2f64.ln()).abs() < 1e-15);
        }
        let out = log_softmax_rows(&array![[1e4, -1e4, 0.0]]);
        assert!(out.iter().all(|v| v.is_finite() && *v <= 0.0));
        let lse: f64 = out.iter().map(|v| v.exp()).sum();
        assert!((lse - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relu_blocks_negative() {
        let mut p = NetParams::init(&NetSpec::new(vec![1, 1, 1], OutputHead::Linear), 0).unwrap();
        p.layers[0].weight[[0, 0]] = 1.0;
        p.layers[1].weight[[0, 0]] = 1.0;
        assert_eq!(p.forward(&[-1.0]).unwrap(), vec![0.0]);
        assert_eq!(p.forward(&[2.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let p = NetParams::init(&NetSpec::new(vec![3, 2], OutputHead::Linear), 5).unwrap();
        let x = array![[1.0, -2.0, 0.5]];
        let g = array![[0.3, -1.5]];
        let cache = p.forward_batch(&x).unwrap();
        let grads = p.backward(&cache, &g).unwrap();
        let expect = x.t().dot(&g);
        assert_eq!(grads[0].weight, expect);
        assert_eq!(grads[0].bias, array![0.3, -1.5]);
    }

    #[test]
    fn zero_output_grad_gives_zero() {
        let p = small(OutputHead::LogSoftmax, 3);
        let x = array![[0.2, -0.1, 0.7], [1.0, 0.0, -1.0]];
        let cache = p.forward_batch(&x).unwrap();
        let grads = p.backward(&cache, &Array2::zeros((2, 4))).unwrap();
        assert!(grads
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|&v| v == 0.0)));
        assert!(p.backward(&cache, &Array2::zeros((1, 4))).is_err());
    }

    #[test]
    fn adam_behaviour() {
        let mut p = small(OutputHead::Linear, 1);
        let before = p.clone();
        let mut opt = Adam::new(&p, 1e-3);
        let zero = p.zeros_like();
        opt.step(&mut p, &zero).unwrap();
        assert_eq!(p, before);

        let mut p = small(OutputHead::Linear, 1);
        let mut opt = Adam::new(&p, 1e-3);
        let mut g = p.zeros_like();
        g[0].weight[[0, 0]] = 0.25;
        g[0].weight[[1, 1]] = -4.0;
        opt.step(&mut p, &g).unwrap();
        let dw00 = p.layers[0].weight[[0, 0]] - before.layers[0].weight[[0, 0]];
        let dw11 = p.layers[0].weight[[1, 1]] - before.layers[0].weight[[1, 1]];
        assert!((dw00 + 1e-3).abs() < 1e-10, "{dw00}");
        assert!((dw11 - 1e-3).abs() < 1e-10, "{dw11}");

        g[1].bias[0] = f64::NAN;
        assert_eq!(opt.step(&mut p, &g), Err(NnError::NonFiniteGradient));
    }

    #[test]
    fn soft_update_mixes() {
        let mut target = small(OutputHead::Linear, 1);
        let mut source = target.clone();
        for l in &mut target.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        for l in &mut source.layers {
            l.weight.fill(2.0);
            l.bias.fill(2.0);
        }
        let mut t = target.clone();
        t.soft_update_from(&source, 0.0);
        assert_eq!(t, target);
        t.soft_update_from(&source, 0.5);
        assert!(t.layers.iter().all(|l| l.weight.iter().all(|&v| v == 1.0)));
        t.soft_update_from(&source, 1.0);
        assert_eq!(t.layers, source.layers);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let p = NetParams::init(&NetSpec::new(vec![4, 7, 3], OutputHead::LogSoftmax), 99).unwrap();
        let text = p.to_checkpoint(1234);
        let (back, step) = NetParams::from_checkpoint(&text).unwrap();
        assert_eq!(step, 1234);
        assert_eq!(back, p);
        let broken = text.replacen("weight 0 4 7", "weight 0 4 8", 1);
        assert!(NetParams::from_checkpoint(&broken).is_err());
    }
}
