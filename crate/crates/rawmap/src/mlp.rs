//! Tiny MLP predicting normalized 3x3 transforms, with analytic reverse-mode
//! gradients of the angular-error loss and a hand-rolled Adam optimizer.
//!
//! The network is a stack of ReLU hidden layers followed by a linear layer
//! to 9 outputs, reshaped row-major to 3x3 and divided by its Frobenius norm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::{Transform3, COS_CLAMP_EPS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MlpMode {
    /// f(L_u, L_v): 6 inputs, maps between illuminations on one sensor.
    Illum,
    /// g(L): 3 inputs, maps between two sensors under one light.
    Sensor,
}

impl MlpMode {
    pub fn input_dim(&self) -> usize {
        match self {
            MlpMode::Illum => 6,
            MlpMode::Sensor => 3,
        }
    }
}

/// One dense layer, weights row-major (out x in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            out[o] = self.b[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub mode: MlpMode,
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub seed: u64,
    pub layers: Vec<Linear>,
}

impl MlpModel {
    /// Identity-biased initialization: hidden layers uniform in
    /// +-sqrt(1/fan_in), output weights zero, output bias the flattened
    /// identity. A fresh model therefore predicts identity/sqrt(3).
    pub fn new(mode: MlpMode, hidden_dims: &[usize], seed: u64) -> Result<Self> {
        if hidden_dims.is_empty() {
            return Err(Error::Parameter("need at least one hidden layer".into()));
        }
        let input_dim = mode.input_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for &h in hidden_dims {
            let bound = (1.0 / prev as f64).sqrt();
            let w = (0..h * prev).map(|_| rng.random_range(-bound..bound)).collect();
            let b = (0..h).map(|_| rng.random_range(-bound..bound)).collect();
            layers.push(Linear { w, b, in_dim: prev, out_dim: h });
            prev = h;
        }
        let mut b = vec![0.0; 9];
        b[0] = 1.0;
        b[4] = 1.0;
        b[8] = 1.0;
        layers.push(Linear { w: vec![0.0; 9 * prev], b, in_dim: prev, out_dim: 9 });
        Ok(Self { mode, input_dim, hidden_dims: hidden_dims.to_vec(), seed, layers })
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            v.extend_from_slice(&l.w);
            v.extend_from_slice(&l.b);
        }
        v
    }

    pub fn set_params(&mut self, p: &[f64]) {
        debug_assert_eq!(p.len(), self.n_params());
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
    }
}

/// Cached forward pass: activation after each hidden layer plus the
/// pre-normalization output.
struct ForwardCache {
    /// Input followed by each post-ReLU hidden activation.
    acts: Vec<Vec<f64>>,
    frob: f64,
}

fn forward_cached(model: &MlpModel, input: &[f64]) -> Result<(Transform3, ForwardCache)> {
    if input.len() != model.input_dim {
        return Err(Error::Shape(format!(
            "input length {} != model input_dim {}",
            input.len(),
            model.input_dim
        )));
    }
    let mut acts: Vec<Vec<f64>> = vec![input.to_vec()];
    for (li, layer) in model.layers.iter().enumerate() {
        let mut out = vec![0.0; layer.out_dim];
        layer.apply(acts.last().unwrap(), &mut out);
        if li + 1 < model.layers.len() {
            for v in &mut out {
                *v = v.max(0.0);
            }
        }
        acts.push(out);
    }
    let last = acts.pop().unwrap();
    let mut raw_out = [0.0; 9];
    raw_out.copy_from_slice(&last);
    if raw_out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite MLP output".into()));
    }
    let frob = raw_out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if frob <= 0.0 {
        return Err(Error::Numeric("MLP produced the zero matrix before normalization".into()));
    }
    let mut m = [0.0; 9];
    for k in 0..9 {
        m[k] = raw_out[k] / frob;
    }
    Ok((Transform3 { m }, ForwardCache { acts, frob }))
}

/// Predicted transform for one input vector; unit Frobenius norm.
pub fn forward(model: &MlpModel, input: &[f64]) -> Result<Transform3> {
    Ok(forward_cached(model, input)?.0)
}

/// Corresponding source/target RGB samples of one pair.
#[derive(Debug, Clone)]
pub struct PixelSampleSet {
    pub src: Vec<[f64; 3]>,
    pub dst: Vec<[f64; 3]>,
}

impl PixelSampleSet {
    pub fn new(src: Vec<[f64; 3]>, dst: Vec<[f64; 3]>) -> Result<Self> {
        if src.len() != dst.len() {
            return Err(Error::Parameter("sample lists differ in length".into()));
        }
        if dst.iter().any(|d| d.iter().map(|v| v * v).sum::<f64>() <= 0.0) {
            return Err(Error::Parameter("zero-norm target sample".into()));
        }
        Ok(Self { src, dst })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

const RAD_TO_DEG: f64 = 180.0 / std::f64::consts::PI;

/// Per-sample angle in degrees plus its gradient w.r.t. the predicted pixel.
/// Inside the cosine clamp region the gradient is zero.
fn sample_angle_and_grad(p: [f64; 3], d: [f64; 3]) -> (f64, [f64; 3]) {
    let np2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
    let nd2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    if np2 <= 0.0 {
        // Degenerate prediction: maximal angle, no usable direction.
        return (180.0, [0.0; 3]);
    }
    let np = np2.sqrt();
    let nd = nd2.sqrt();
    let dot = p[0] * d[0] + p[1] * d[1] + p[2] * d[2];
    let c_raw = dot / (np * nd);
    let c = c_raw.clamp(-1.0, 1.0);
    let angle = c.acos().to_degrees();
    // The arccos derivative blows up at the endpoints; treat the last
    // COS_CLAMP_EPS of cosine as flat.
    if c_raw >= 1.0 - COS_CLAMP_EPS || c_raw <= -1.0 + COS_CLAMP_EPS {
        return (angle, [0.0; 3]);
    }
    let dacos = -RAD_TO_DEG / (1.0 - c * c).sqrt();
    let mut grad = [0.0; 3];
    for k in 0..3 {
        grad[k] = dacos * (d[k] / (np * nd) - c * p[k] / np2);
    }
    (angle, grad)
}

/// Mean angular error (degrees) of `pred` applied to the samples.
pub fn loss_angular(pred: &Transform3, samples: &PixelSampleSet) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Parameter("empty sample set".into()));
    }
    let mut total = 0.0;
    for (s, d) in samples.src.iter().zip(&samples.dst) {
        total += sample_angle_and_grad(pred.apply(*s), *d).0;
    }
    Ok(total / samples.len() as f64)
}

/// Exact gradient of the mean batch loss w.r.t. all parameters, flattened in
/// the same order as `MlpModel::params`. Returns (loss, gradient).
pub fn backward(model: &MlpModel, batch: &[(Vec<f64>, PixelSampleSet)]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Parameter("empty batch".into()));
    }
    let mut grad = vec![0.0; model.n_params()];
    let mut loss = 0.0;
    let item_w = 1.0 / batch.len() as f64;
    for (input, samples) in batch {
        if samples.is_empty() {
            return Err(Error::Parameter("empty sample set in batch".into()));
        }
        let (pred, cache) = forward_cached(model, input)?;
        // dL/dM accumulated over samples.
        let sample_w = 1.0 / samples.len() as f64;
        let mut item_loss = 0.0;
        let mut dl_dm = [0.0f64; 9];
        for (s, d) in samples.src.iter().zip(&samples.dst) {
            let p = pred.apply(*s);
            let (angle, dp) = sample_angle_and_grad(p, *d);
            item_loss += angle * sample_w;
            for r in 0..3 {
                for c in 0..3 {
                    dl_dm[r * 3 + c] += sample_w * dp[r] * s[c];
                }
            }
        }
        loss += item_loss * item_w;

        // Through M = A / ||A||_F:
        // dL/dA = dL/dM / r - (<dL/dM, M> / r) M
        let r = cache.frob;
        let inner: f64 = dl_dm.iter().zip(&pred.m).map(|(g, m)| g * m).sum();
        let mut delta: Vec<f64> =
            dl_dm.iter().zip(&pred.m).map(|(g, m)| item_w * (g / r - inner / r * m)).collect();

        // Backprop through the dense stack. acts[i] is the input to layer i.
        let mut off_end = model.n_params();
        for (li, layer) in model.layers.iter().enumerate().rev() {
            let x = &cache.acts[li];
            let b_off = off_end - layer.b.len();
            let w_off = b_off - layer.w.len();
            for o in 0..layer.out_dim {
                grad[b_off + o] += delta[o];
                let row = &mut grad[w_off + o * layer.in_dim..w_off + (o + 1) * layer.in_dim];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += delta[o] * v;
                }
            }
            if li > 0 {
                let mut prev_delta = vec![0.0; layer.in_dim];
                for o in 0..layer.out_dim {
                    let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (pd, w) in prev_delta.iter_mut().zip(row) {
                        *pd += delta[o] * w;
                    }
                }
                // ReLU mask of the previous activation.
                for (pd, a) in prev_delta.iter_mut().zip(x) {
                    if *a <= 0.0 {
                        *pd = 0.0;
                    }
                }
                delta = prev_delta;
            }
            off_end = w_off;
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite training loss".into()));
    }
    Ok((loss, grad))
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0, beta1, beta2, eps }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn parameter_counts_match_architecture() {
        let sensor = MlpModel::new(MlpMode::Sensor, &[32, 32], 0).unwrap();
        assert_eq!(sensor.n_params(), 1481);
        let illum = MlpModel::new(MlpMode::Illum, &[32, 32], 0).unwrap();
        assert_eq!(illum.n_params(), 1577);
    }

    #[test]
    fn fresh_model_predicts_scaled_identity() {
        let model = MlpModel::new(MlpMode::Illum, &[32, 32], 123).unwrap();
        for input in [vec![0.5; 6], vec![1.0, 0.2, 0.9, 0.1, 1.0, 0.3]] {
            let t = forward(&model, &input).unwrap();
            let expect = Transform3::identity().normalized();
            for k in 0..9 {
                assert_abs_diff_eq!(t.m[k], expect.m[k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn forward_output_has_unit_frobenius_norm() {
        let mut model = MlpModel::new(MlpMode::Sensor, &[32, 32], 7).unwrap();
        // Perturb so the output is not the exact identity.
        let mut p = model.params();
        for (i, v) in p.iter_mut().enumerate() {
            *v += 0.01 * ((i % 13) as f64 - 6.0);
        }
        model.set_params(&p);
        let t = forward(&model, &[0.9, 1.0, 0.4]).unwrap();
        assert_abs_diff_eq!(t.frobenius_norm(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn hand_built_output_bias_is_normalized() {
        // All-zero hidden weights, output bias diag(3,4,0): the prediction is
        // the bias over its Frobenius norm 5.
        let mut model = MlpModel::new(MlpMode::Sensor, &[32, 32], 0).unwrap();
        let mut p = vec![0.0; model.n_params()];
        let n = model.n_params();
        let bias = [3.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0, 0.0];
        p[n - 9..].copy_from_slice(&bias);
        model.set_params(&p);
        let t = forward(&model, &[1.0, 1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(t.m[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(t.m[4], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(t.m[8], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn loss_examples() {
        let id = Transform3::identity();
        let s = PixelSampleSet::new(
            vec![[0.2, 0.4, 0.6], [1.0, 0.5, 0.25]],
            vec![[0.4, 0.8, 1.2], [2.0, 1.0, 0.5]],
        )
        .unwrap();
        assert!(loss_angular(&id, &s).unwrap() < 1e-4);

        let s = PixelSampleSet::new(vec![[1.0, 0.0, 0.0]], vec![[0.0, 1.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(loss_angular(&id, &s).unwrap(), 90.0, epsilon = 1e-9);

        let gen = Transform3::new([0.9, 0.1, 0.0, 0.0, 1.0, 0.2, 0.1, 0.0, 0.8]).unwrap();
        let src = vec![[0.4, 0.3, 0.7], [0.9, 0.1, 0.5], [0.2, 0.8, 0.3]];
        let dst: Vec<[f64; 3]> = src.iter().map(|s| gen.apply(*s)).collect();
        let s = PixelSampleSet::new(src, dst).unwrap();
        assert!(loss_angular(&gen, &s).unwrap() < 1e-4);

        let empty = PixelSampleSet::new(vec![], vec![]).unwrap();
        assert!(loss_angular(&id, &empty).is_err());
    }

    fn seeded_batch(seed: u64, input_dim: usize, n: usize) -> (Vec<f64>, PixelSampleSet) {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input: Vec<f64> = (0..input_dim).map(|_| 0.2 + rng.random::<f64>()).collect();
        let src: Vec<[f64; 3]> = (0..n)
            .map(|_| [0.1 + rng.random::<f64>(), 0.1 + rng.random::<f64>(), 0.1 + rng.random::<f64>()])
            .collect();
        let dst: Vec<[f64; 3]> = (0..n)
            .map(|_| [0.1 + rng.random::<f64>(), 0.1 + rng.random::<f64>(), 0.1 + rng.random::<f64>()])
            .collect();
        (input, PixelSampleSet::new(src, dst).unwrap())
    }

    /// Central finite differences over every parameter.
    pub(crate) fn finite_diff_grad(
        model: &MlpModel,
        batch: &[(Vec<f64>, PixelSampleSet)],
        h: f64,
    ) -> Vec<f64> {
        let base = model.params();
        let mut g = vec![0.0; base.len()];
        let mut probe = model.clone();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_params(&p);
            let lp = batch_loss(&probe, batch);
            p[i] = base[i] - h;
            probe.set_params(&p);
            let lm = batch_loss(&probe, batch);
            g[i] = (lp - lm) / (2.0 * h);
        }
        g
    }

    pub(crate) fn batch_loss(model: &MlpModel, batch: &[(Vec<f64>, PixelSampleSet)]) -> f64 {
        let mut total = 0.0;
        for (input, samples) in batch {
            let t = forward(model, input).unwrap();
            total += loss_angular(&t, samples).unwrap();
        }
        total / batch.len() as f64
    }

    pub(crate) fn perturbed_model(mode: MlpMode, seed: u64) -> MlpModel {
        use rand::{Rng, SeedableRng};
        let mut model = MlpModel::new(mode, &[32, 32], seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(5));
        let mut p = model.params();
        for v in &mut p {
            *v += 0.1 * (rng.random::<f64>() - 0.5);
        }
        model.set_params(&p);
        model
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = perturbed_model(MlpMode::Illum, 3);
        let batch = vec![seeded_batch(10, 6, 10)];
        let (loss, grad) = backward(&model, &batch).unwrap();
        assert_abs_diff_eq!(loss, batch_loss(&model, &batch), epsilon = 1e-10);
        let fd = finite_diff_grad(&model, &batch, 1e-5);
        let scale = fd.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        for (a, b) in grad.iter().zip(&fd) {
            let rel = (a - b).abs() / scale.max(1e-12);
            assert!(rel < 1e-4, "analytic {a} vs fd {b}");
        }
    }

    #[test]
    fn collinear_samples_give_zero_gradient() {
        let model = MlpModel::new(MlpMode::Sensor, &[32, 32], 1).unwrap();
        // Fresh model predicts scaled identity, so dst = src is collinear
        // with the prediction and sits in the clamp region.
        let src = vec![[0.3, 0.6, 0.9], [1.0, 0.2, 0.4]];
        let batch = vec![(vec![0.5, 1.0, 0.7], PixelSampleSet::new(src.clone(), src).unwrap())];
        let (_, grad) = backward(&model, &batch).unwrap();
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn loss_and_grad_invariant_to_target_scale() {
        let model = perturbed_model(MlpMode::Illum, 9);
        let (input, samples) = seeded_batch(77, 6, 8);
        let doubled = PixelSampleSet::new(
            samples.src.clone(),
            samples.dst.iter().map(|d| [2.0 * d[0], 2.0 * d[1], 2.0 * d[2]]).collect(),
        )
        .unwrap();
        let (l1, g1) = backward(&model, &[(input.clone(), samples)]).unwrap();
        let (l2, g2) = backward(&model, &[(input, doubled)]).unwrap();
        assert_abs_diff_eq!(l1, l2, epsilon = 1e-10);
        for (a, b) in g1.iter().zip(&g2) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let mut adam = AdamState::new(1, 0.9, 0.999, 1e-8);
        let mut p = vec![0.5];
        adam.step(&mut p, &[1.0], 0.01);
        // m_hat = v_hat = 1 on the first step.
        assert_abs_diff_eq!(p[0], 0.5 - 0.01 / (1.0 + 1e-8), epsilon = 1e-9);

        let mut adam = AdamState::new(3, 0.9, 0.999, 1e-8);
        let mut p = vec![0.1, 0.2, 0.3];
        for _ in 0..50 {
            adam.step(&mut p, &[0.0; 3], 0.01);
        }
        assert_eq!(p, vec![0.1, 0.2, 0.3]);
    }
}
