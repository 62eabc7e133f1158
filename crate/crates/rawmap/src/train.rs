//! Training loops for the illumination- and sensor-mapping MLPs, hard-pair
//! selection, the learning-rate schedule, and per-pair oracle fine-tuning.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::{to_chromaticity, Illuminant, RawImage, Transform3};
use crate::error::{Error, Result};
use crate::mlp::{backward, forward, loss_angular, AdamState, MlpModel, MlpMode, PixelSampleSet};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay: f64,
    pub period: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub pixels_per_pair: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub hard_pair_fraction: f64,
    pub hidden_dims: Vec<usize>,
}

impl TrainConfig {
    pub fn default_for(mode: MlpMode) -> Self {
        Self {
            lr0: match mode {
                MlpMode::Illum => 0.01,
                MlpMode::Sensor => 0.001,
            },
            decay: 0.5,
            period: 50,
            epochs: 400,
            batch_size: 8,
            pixels_per_pair: 1000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            hard_pair_fraction: 0.282,
            hidden_dims: vec![32, 32],
        }
    }

    /// Step decay: lr0 * decay^(epoch / period).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay.powi((epoch / self.period) as i32)
    }
}

/// splitmix64; used to derive independent per-(epoch, pair) RNG streams.
fn mix_seed(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a ^ b.rotate_left(17) ^ c.rotate_left(41) ^ 0x9e37_79b9_7f4a_7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Ordered illuminant pairs whose chromaticity distance exceeds the
/// (1 - fraction) quantile. Symmetric: (u,v) and (v,u) share one distance,
/// so both are kept or dropped together.
pub fn select_hard_pairs(illums: &[Illuminant], fraction: f64) -> Result<Vec<(usize, usize)>> {
    if illums.len() < 2 {
        return Err(Error::Parameter("need at least 2 illuminants".into()));
    }
    if fraction <= 0.0 || fraction > 1.0 {
        return Err(Error::Parameter("fraction must be in (0, 1]".into()));
    }
    let chromas: Vec<_> = illums.iter().map(to_chromaticity).collect::<Result<_>>()?;
    let mut pairs = Vec::new();
    let mut dists = Vec::new();
    for u in 0..illums.len() {
        for v in 0..illums.len() {
            if u != v {
                pairs.push((u, v));
                dists.push(chromas[u].distance(&chromas[v]));
            }
        }
    }
    if fraction >= 1.0 {
        return Ok(pairs);
    }
    let mut sorted = dists.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let threshold = sorted[((1.0 - fraction) * sorted.len() as f64).floor() as usize];
    let kept: Vec<(usize, usize)> = pairs
        .iter()
        .zip(&dists)
        .filter(|(_, d)| **d > threshold)
        .map(|(p, _)| *p)
        .collect();
    if !kept.is_empty() {
        return Ok(kept);
    }
    // Tiny sets can tie the quantile threshold with the maximum distance
    // (every distance occurs twice); fall back to the farthest pairs.
    let max = *sorted.last().unwrap();
    if max <= 0.0 {
        return Err(Error::Parameter(
            "hard-pair selection kept nothing; chromaticities are all identical".into(),
        ));
    }
    Ok(pairs.iter().zip(&dists).filter(|(_, d)| **d == max).map(|(p, _)| *p).collect())
}

/// Illuminant input encoding: RGB max-normalized so the brightest channel
/// is 1.
pub fn illum_input(l: &Illuminant) -> [f64; 3] {
    let peak = l.rgb.iter().cloned().fold(0.0f64, f64::max);
    [l.rgb[0] / peak, l.rgb[1] / peak, l.rgb[2] / peak]
}

/// Six-dimensional (L_u, L_v) encoding fed to the illumination MLP.
pub fn pair_input(src: &Illuminant, dst: &Illuminant) -> Vec<f64> {
    let a = illum_input(src);
    let b = illum_input(dst);
    vec![a[0], a[1], a[2], b[0], b[1], b[2]]
}

fn pixel_norm_positive(img: &RawImage, i: usize) -> bool {
    let p = img.pixel(i);
    p[0] + p[1] + p[2] > 0.0
}

/// Draws `n` corresponding pixels (with replacement) whose source and target
/// norms are both positive.
pub fn sample_pair_pixels(
    src: &RawImage,
    dst: &RawImage,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PixelSampleSet> {
    let total = src.n_pixels();
    if total != dst.n_pixels() {
        return Err(Error::Shape("pair images differ in size".into()));
    }
    let mut s = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while s.len() < n {
        if attempts > 20 * n + 1000 {
            return Err(Error::Data("too few valid (non-black) corresponding pixels".into()));
        }
        attempts += 1;
        let i = rng.random_range(0..total);
        if pixel_norm_positive(src, i) && pixel_norm_positive(dst, i) {
            s.push(src.pixel(i));
            d.push(dst.pixel(i));
        }
    }
    PixelSampleSet::new(s, d)
}

/// All valid corresponding pixels of a pair.
pub fn all_pair_pixels(src: &RawImage, dst: &RawImage) -> Result<PixelSampleSet> {
    if src.n_pixels() != dst.n_pixels() {
        return Err(Error::Shape("pair images differ in size".into()));
    }
    let mut s = Vec::new();
    let mut d = Vec::new();
    for i in 0..src.n_pixels() {
        if pixel_norm_positive(src, i) && pixel_norm_positive(dst, i) {
            s.push(src.pixel(i));
            d.push(dst.pixel(i));
        }
    }
    if s.is_empty() {
        return Err(Error::Data("pair has no valid corresponding pixels".into()));
    }
    PixelSampleSet::new(s, d)
}

/// Images of one scene under a set of illuminants, index-aligned.
#[derive(Debug, Clone)]
pub struct PairedImages {
    pub illums: Vec<Illuminant>,
    pub images: Vec<RawImage>,
}

#[derive(Debug, Clone)]
pub struct IllumDataset {
    pub train: PairedImages,
    pub val: PairedImages,
}

/// Per-illuminant chart correspondences between two sensors; `illum` is the
/// light's RGB in the source sensor's space.
#[derive(Debug, Clone)]
pub struct SensorSamples {
    pub illum: Illuminant,
    pub samples: PixelSampleSet,
}

#[derive(Debug, Clone)]
pub struct SensorDataset {
    pub train: Vec<SensorSamples>,
    pub val: Vec<SensorSamples>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub log: TrainLog,
}

/// Shared epoch loop: items are (input, sample-provider) closures resolved
/// per epoch, validation is a fixed set of (input, samples).
fn run_training<FS>(
    mut model: MlpModel,
    config: &TrainConfig,
    seed: u64,
    n_items: usize,
    mut epoch_samples: FS,
    val_items: &[(Vec<f64>, PixelSampleSet)],
) -> Result<TrainOutcome>
where
    FS: FnMut(usize, usize) -> Result<(Vec<f64>, PixelSampleSet)>,
{
    if n_items == 0 {
        return Err(Error::Data("no training items".into()));
    }
    let mut adam = AdamState::new(model.n_params(), config.beta1, config.beta2, config.eps);
    let mut params = model.params();
    let mut log = TrainLog { epochs: Vec::new(), best_epoch: 0, best_val_mae: f64::INFINITY };
    let mut best_params = params.clone();

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let mut order: Vec<usize> = (0..n_items).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch as u64, u64::MAX));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(Vec<f64>, PixelSampleSet)> = chunk
                .iter()
                .map(|&item| epoch_samples(epoch, item))
                .collect::<Result<_>>()?;
            model.set_params(&params);
            // Per-item gradients in parallel, averaged in item order so the
            // update is identical regardless of thread count.
            let per_item = par::map(&batch, |item| backward(&model, std::slice::from_ref(item)));
            let mut loss = 0.0;
            let mut grad = vec![0.0; params.len()];
            let item_w = 1.0 / batch.len() as f64;
            for r in per_item {
                let (l, g) = r?;
                loss += l * item_w;
                for (acc, v) in grad.iter_mut().zip(&g) {
                    *acc += v * item_w;
                }
            }
            adam.step(&mut params, &grad, lr);
            epoch_loss += loss;
            n_batches += 1;
        }
        model.set_params(&params);

        let val_mae = if val_items.is_empty() {
            f64::NAN
        } else {
            let errs = par::map(val_items, |(input, samples)| {
                let t = forward(&model, input)?;
                loss_angular(&t, samples)
            });
            let mut total = 0.0;
            for e in errs {
                total += e?;
            }
            total / val_items.len() as f64
        };

        if val_items.is_empty() || val_mae < log.best_val_mae {
            log.best_val_mae = val_mae;
            log.best_epoch = epoch;
            best_params.copy_from_slice(&params);
        }
        log.epochs.push(EpochLog { epoch, lr, train_loss: epoch_loss / n_batches as f64, val_mae });
    }

    model.set_params(&best_params);
    Ok(TrainOutcome { model, log })
}

/// Trains the illumination-mapping MLP f(L_u, L_v) on hard pairs from the
/// training scene, resampling `pixels_per_pair` pixels per pair each epoch.
/// Validation pairs use every valid pixel; the checkpoint with the lowest
/// validation MAE is returned. Deterministic given `seed`.
pub fn train_illum_mlp(data: &IllumDataset, config: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    if data.train.illums.len() != data.train.images.len() {
        return Err(Error::Data("train illuminant/image lists misaligned".into()));
    }
    let pairs = select_hard_pairs(&data.train.illums, config.hard_pair_fraction)?;
    let inputs: Vec<Vec<f64>> = pairs
        .iter()
        .map(|&(u, v)| pair_input(&data.train.illums[u], &data.train.illums[v]))
        .collect();

    let val_pairs = if data.val.illums.len() >= 2 {
        select_hard_pairs(&data.val.illums, config.hard_pair_fraction)?
    } else {
        Vec::new()
    };
    let val_items: Vec<(Vec<f64>, PixelSampleSet)> = val_pairs
        .iter()
        .map(|&(u, v)| {
            Ok((
                pair_input(&data.val.illums[u], &data.val.illums[v]),
                all_pair_pixels(&data.val.images[u], &data.val.images[v])?,
            ))
        })
        .collect::<Result<_>>()?;

    let model = MlpModel::new(MlpMode::Illum, &config.hidden_dims, seed)?;
    let n_px = config.pixels_per_pair;
    let train = &data.train;
    run_training(
        model,
        config,
        seed,
        pairs.len(),
        |epoch, item| {
            let (u, v) = pairs[item];
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch as u64, item as u64));
            let samples = sample_pair_pixels(&train.images[u], &train.images[v], n_px, &mut rng)?;
            Ok((inputs[item].clone(), samples))
        },
        &val_items,
    )
}

/// Trains the sensor-mapping MLP g(L) on per-illuminant chart samples.
pub fn train_sensor_mlp(data: &SensorDataset, config: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    for item in data.train.iter().chain(&data.val) {
        if item.samples.len() < 3 {
            return Err(Error::Data(format!(
                "illuminant '{}' has fewer than 3 chart samples",
                item.illum.id
            )));
        }
    }
    let inputs: Vec<Vec<f64>> =
        data.train.iter().map(|it| illum_input(&it.illum).to_vec()).collect();
    let val_items: Vec<(Vec<f64>, PixelSampleSet)> = data
        .val
        .iter()
        .map(|it| (illum_input(&it.illum).to_vec(), it.samples.clone()))
        .collect();

    let model = MlpModel::new(MlpMode::Sensor, &config.hidden_dims, seed)?;
    let train = &data.train;
    run_training(
        model,
        config,
        seed,
        train.len(),
        |_, item| Ok((inputs[item].clone(), train[item].samples.clone())),
        &val_items,
    )
}

/// Fine-tunes a copy of a trained model on one test pair for `epochs` steps
/// at a fixed learning rate, returning the transform with the lowest loss
/// over the pair's full sample set (the starting prediction included).
pub fn finetune_oracle(
    model: &MlpModel,
    input: &[f64],
    pair_samples: &PixelSampleSet,
    config: &TrainConfig,
    seed: u64,
) -> Result<Transform3> {
    const ORACLE_EPOCHS: usize = 200;
    const ORACLE_LR: f64 = 0.001;
    if pair_samples.is_empty() {
        return Err(Error::Parameter("oracle needs a nonempty sample set".into()));
    }
    let mut tuned = model.clone();
    let mut params = tuned.params();
    let mut adam = AdamState::new(params.len(), config.beta1, config.beta2, config.eps);

    let mut best = forward(&tuned, input)?;
    let mut best_loss = loss_angular(&best, pair_samples)?;
    let n = pair_samples.len();
    let n_draw = config.pixels_per_pair.min(n);

    for epoch in 0..ORACLE_EPOCHS {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch as u64, 0x0f1e));
        let mut src = Vec::with_capacity(n_draw);
        let mut dst = Vec::with_capacity(n_draw);
        for _ in 0..n_draw {
            let i = rng.random_range(0..n);
            src.push(pair_samples.src[i]);
            dst.push(pair_samples.dst[i]);
        }
        let batch = vec![(input.to_vec(), PixelSampleSet::new(src, dst)?)];
        let (_, grad) = backward(&tuned, &batch)?;
        adam.step(&mut params, &grad, ORACLE_LR);
        tuned.set_params(&params);

        let t = forward(&tuned, input)?;
        let loss = loss_angular(&t, pair_samples)?;
        if loss < best_loss {
            best_loss = loss;
            best = t;
        }
    }
    Ok(best)
}

/// Oracle for an illumination pair: fine-tune on the valid corresponding
/// pixels of the source/target images.
pub fn finetune_oracle_pair(
    model: &MlpModel,
    src_illum: &Illuminant,
    dst_illum: &Illuminant,
    src_img: &RawImage,
    dst_img: &RawImage,
    config: &TrainConfig,
    seed: u64,
) -> Result<Transform3> {
    let samples = all_pair_pixels(src_img, dst_img)?;
    finetune_oracle(model, &pair_input(src_illum, dst_illum), &samples, config, seed)
}

/// On-disk model format: weights plus the exact training configuration and
/// the selected checkpoint's validation MAE.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedModel {
    pub mode: MlpMode,
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub seed: u64,
    pub weights: Vec<Linear>,
    pub train_config: TrainConfig,
    pub val_mae: f64,
}

pub use crate::mlp::Linear;

impl SavedModel {
    pub fn from_outcome(outcome: &TrainOutcome, config: &TrainConfig) -> Self {
        Self {
            mode: outcome.model.mode,
            input_dim: outcome.model.input_dim,
            hidden_dims: outcome.model.hidden_dims.clone(),
            seed: outcome.model.seed,
            weights: outcome.model.layers.clone(),
            train_config: config.clone(),
            val_mae: outcome.log.best_val_mae,
        }
    }

    pub fn into_model(self) -> Result<MlpModel> {
        let model = MlpModel {
            mode: self.mode,
            input_dim: self.input_dim,
            hidden_dims: self.hidden_dims,
            seed: self.seed,
            layers: self.weights,
        };
        if model.input_dim != model.mode.input_dim() {
            return Err(Error::Data("saved model input_dim does not match its mode".into()));
        }
        for l in &model.layers {
            if l.w.len() != l.in_dim * l.out_dim || l.b.len() != l.out_dim {
                return Err(Error::Data("saved layer shape mismatch".into()));
            }
        }
        Ok(model)
    }
}
