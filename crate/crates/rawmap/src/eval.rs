//! Masked mean-angular-error evaluation: per-pair scores, per-camera
//! aggregates, CSV/table rendering, and runners for every mapping method.

use crate::color::{
    apply_transform, diagonal_transform, neutral_mask, saturation_mask, to_chromaticity,
    Illuminant, RawImage, Transform3,
};
use crate::dataset::{IllumEvalSet, SensorEvalSet};
use crate::error::{Error, Result};
use crate::knn::{knn_transform, nearest_weights, KnnVariant, TransformBank};
use crate::mlp::{forward, MlpModel};
use crate::par;
use crate::mlp::PixelSampleSet;
use crate::train::{finetune_oracle, illum_input, pair_input, SensorSamples, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEval {
    pub mae_with: f64,
    /// NaN when every included pixel is neutral.
    pub mae_without: f64,
    pub n_with: usize,
    pub n_without: usize,
}

/// Masked per-pair score, or None when no pixel survives the saturation
/// mask (the caller logs and skips such pairs).
pub fn try_evaluate_pair(
    pred: &RawImage,
    target: &RawImage,
    target_illum: &Illuminant,
) -> Result<Option<PairEval>> {
    if pred.channels != 3 || target.channels != 3 {
        return Err(Error::Shape("evaluation requires 3-channel images".into()));
    }
    if pred.width != target.width || pred.height != target.height {
        return Err(Error::Shape("prediction/target dimensions differ".into()));
    }
    let sat = saturation_mask(target)?;
    let ntr = neutral_mask(target, target_illum)?;

    let mut sum_with = 0.0;
    let mut n_with = 0usize;
    let mut sum_without = 0.0;
    let mut n_without = 0usize;
    for i in 0..target.n_pixels() {
        if !sat.bits[i] {
            continue;
        }
        // The angle is undefined on zero-norm pixels; they stay excluded.
        let Ok(err) = crate::color::angular_error(pred.pixel(i), target.pixel(i)) else {
            continue;
        };
        sum_with += err;
        n_with += 1;
        if ntr.bits[i] {
            sum_without += err;
            n_without += 1;
        }
    }
    if n_with == 0 {
        return Ok(None);
    }
    Ok(Some(PairEval {
        mae_with: sum_with / n_with as f64,
        mae_without: if n_without > 0 { sum_without / n_without as f64 } else { f64::NAN },
        n_with,
        n_without,
    }))
}

/// Like `try_evaluate_pair`, but an empty mask is an error.
pub fn evaluate_pair(
    pred: &RawImage,
    target: &RawImage,
    target_illum: &Illuminant,
) -> Result<PairEval> {
    try_evaluate_pair(pred, target, target_illum)?
        .ok_or_else(|| Error::Data("no pixels survive the saturation mask".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub camera: String,
    pub scene: String,
    pub src_illum: String,
    pub dst_illum: String,
    /// NaN when the pair was skipped (empty mask).
    pub mae_all: f64,
    pub mae_no_neutral: f64,
    pub n_pixels_all: usize,
    pub n_pixels_no_neutral: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub method: String,
    pub camera: String,
    pub mae_all: f64,
    pub mae_no_neutral: f64,
    pub n_pairs_all: usize,
    pub n_pairs_no_neutral: usize,
}

/// Unweighted per-pair means grouped by (method, camera), in first-seen
/// order. Skipped pairs (NaN) drop out of the respective mean.
pub fn aggregate(rows: &[ReportRow]) -> Vec<Aggregate> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let key = (r.method.clone(), r.camera.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.iter()
        .map(|(method, camera)| {
            let mut agg = Aggregate {
                method: method.clone(),
                camera: camera.clone(),
                mae_all: 0.0,
                mae_no_neutral: 0.0,
                n_pairs_all: 0,
                n_pairs_no_neutral: 0,
            };
            for r in rows.iter().filter(|r| &r.method == method && &r.camera == camera) {
                if r.mae_all.is_finite() {
                    agg.mae_all += r.mae_all;
                    agg.n_pairs_all += 1;
                }
                if r.mae_no_neutral.is_finite() {
                    agg.mae_no_neutral += r.mae_no_neutral;
                    agg.n_pairs_no_neutral += 1;
                }
            }
            if agg.n_pairs_all > 0 {
                agg.mae_all /= agg.n_pairs_all as f64;
            } else {
                agg.mae_all = f64::NAN;
            }
            if agg.n_pairs_no_neutral > 0 {
                agg.mae_no_neutral /= agg.n_pairs_no_neutral as f64;
            } else {
                agg.mae_no_neutral = f64::NAN;
            }
            agg
        })
        .collect()
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out =
        String::from("method,camera,scene,src_illum,dst_illum,mae_all,mae_no_neutral,n_pixels_all,n_pixels_no_neutral\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.camera,
            r.scene,
            r.src_illum,
            r.dst_illum,
            r.mae_all,
            r.mae_no_neutral,
            r.n_pixels_all,
            r.n_pixels_no_neutral
        ));
    }
    out
}

pub fn aggregate_csv(aggs: &[Aggregate]) -> String {
    let mut out =
        String::from("method,camera,mae_all,mae_no_neutral,n_pairs_all,n_pairs_no_neutral\n");
    for a in aggs {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            a.method, a.camera, a.mae_all, a.mae_no_neutral, a.n_pairs_all, a.n_pairs_no_neutral
        ));
    }
    out
}

/// Fixed-width summary table of the aggregates.
pub fn render_table(aggs: &[Aggregate]) -> String {
    let mut out = format!(
        "{:<16} {:<14} {:>10} {:>12} {:>7}\n",
        "method", "camera", "mae", "mae w/o ntrl", "pairs"
    );
    for a in aggs {
        out.push_str(&format!(
            "{:<16} {:<14} {:>10.4} {:>12.4} {:>7}\n",
            a.method, a.camera, a.mae_all, a.mae_no_neutral, a.n_pairs_all
        ));
    }
    out
}

/// FNV-1a over the pair's identifying strings; gives each oracle fine-tune a
/// stable, order-independent RNG stream.
pub fn pair_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for part in parts {
        for b in part.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= 0x7c;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Corresponding pixels restricted to the evaluation mask (target saturation
/// mask plus positive norms on both sides), so the oracle optimizes exactly
/// the pixel set the report scores. None when the mask is empty.
fn masked_pair_pixels(src: &RawImage, dst: &RawImage) -> Result<Option<PixelSampleSet>> {
    let sat = saturation_mask(dst)?;
    let mut s = Vec::new();
    let mut d = Vec::new();
    for i in 0..src.n_pixels() {
        let (ps, pd) = (src.pixel(i), dst.pixel(i));
        if sat.bits[i]
            && ps.iter().map(|v| v * v).sum::<f64>() > 0.0
            && pd.iter().map(|v| v * v).sum::<f64>() > 0.0
        {
            s.push(ps);
            d.push(pd);
        }
    }
    if s.is_empty() {
        return Ok(None);
    }
    Ok(Some(PixelSampleSet::new(s, d)?))
}

/// Illumination-mapping methods the evaluator can score.
pub enum IllumMapper<'a> {
    Diagonal,
    Knn { bank: &'a TransformBank, variant: KnnVariant, k: usize },
    Mlp { model: &'a MlpModel },
    Oracle { model: &'a MlpModel, config: &'a TrainConfig, seed: u64 },
}

impl IllumMapper<'_> {
    pub fn label(&self) -> String {
        match self {
            Self::Diagonal => "diagonal".into(),
            Self::Knn { variant, k, .. } => {
                let name = match variant {
                    KnnVariant::OneNnOneNn => "1nn-1nn".to_string(),
                    KnnVariant::OneNnKnn => format!("1nn-{k}nn"),
                    KnnVariant::KnnOneNn => format!("{k}nn-1nn"),
                    KnnVariant::KnnD65Knn => format!("{k}nn-d65-{k}nn"),
                };
                format!("knn-{name}")
            }
            Self::Mlp { .. } => "mlp".into(),
            Self::Oracle { .. } => "oracle".into(),
        }
    }
}

/// Scores one illumination-mapping method over every (test scene, hard test
/// pair). Pairs run in parallel; rows come back in (scene, pair) order.
pub fn evaluate_illum_method(set: &IllumEvalSet, mapper: &IllumMapper) -> Result<Vec<ReportRow>> {
    let label = mapper.label();
    let mut jobs: Vec<(usize, usize, usize)> = Vec::new();
    for s in 0..set.scenes.len() {
        for &(u, v) in &set.pairs {
            jobs.push((s, u, v));
        }
    }
    let results = par::map(&jobs, |&(s, u, v)| -> Result<ReportRow> {
        let scene = &set.scenes[s];
        let src_illum = &set.illums[u];
        let dst_illum = &set.illums[v];
        let src_img = &scene.images[u];
        let dst_img = &scene.images[v];
        let t = match mapper {
            IllumMapper::Diagonal => Some(diagonal_transform(src_illum, dst_illum)?),
            IllumMapper::Knn { bank, variant, k } => {
                Some(knn_transform(bank, src_illum, dst_illum, *variant, *k)?)
            }
            IllumMapper::Mlp { model } => {
                Some(forward(model, &pair_input(src_illum, dst_illum))?)
            }
            IllumMapper::Oracle { model, config, seed } => {
                match masked_pair_pixels(src_img, dst_img)? {
                    Some(samples) => {
                        let s = pair_seed(
                            *seed,
                            &[&set.camera, &scene.scene_id, &src_illum.id, &dst_illum.id],
                        );
                        Some(finetune_oracle(
                            model,
                            &pair_input(src_illum, dst_illum),
                            &samples,
                            config,
                            s,
                        )?)
                    }
                    None => None,
                }
            }
        };
        let scored = match t {
            Some(t) => {
                let pred = apply_transform(&t, src_img)?;
                try_evaluate_pair(&pred, dst_img, dst_illum)?
            }
            None => None,
        };
        let row = match scored {
            Some(e) => ReportRow {
                method: label.clone(),
                camera: set.camera.clone(),
                scene: scene.scene_id.clone(),
                src_illum: src_illum.id.clone(),
                dst_illum: dst_illum.id.clone(),
                mae_all: e.mae_with,
                mae_no_neutral: e.mae_without,
                n_pixels_all: e.n_with,
                n_pixels_no_neutral: e.n_without,
            },
            None => {
                eprintln!(
                    "warning: pair {} -> {} on {}/{} has an empty mask; skipped",
                    src_illum.id, dst_illum.id, set.camera, scene.scene_id
                );
                ReportRow {
                    method: label.clone(),
                    camera: set.camera.clone(),
                    scene: scene.scene_id.clone(),
                    src_illum: src_illum.id.clone(),
                    dst_illum: dst_illum.id.clone(),
                    mae_all: f64::NAN,
                    mae_no_neutral: f64::NAN,
                    n_pixels_all: 0,
                    n_pixels_no_neutral: 0,
                }
            }
        };
        Ok(row)
    });
    results.into_iter().collect()
}

/// Per-illuminant least-squares transforms from camera A to camera B, with
/// inverse-distance interpolation over source-camera chromaticities.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SensorBank {
    pub illums: Vec<Illuminant>,
    pub transforms: Vec<Transform3>,
}

impl SensorBank {
    pub fn fit(train: &[SensorSamples]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("empty sensor training set".into()));
        }
        let transforms: Vec<Transform3> = par::map(train, |it| {
            crate::color::fit_transform_lsq(&it.samples.src, &it.samples.dst)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        Ok(Self { illums: train.iter().map(|it| it.illum.clone()).collect(), transforms })
    }

    /// Inverse-distance-weighted transform for an unseen illuminant.
    pub fn interpolate(&self, illum: &Illuminant, k: usize) -> Result<Transform3> {
        let chromas: Vec<_> =
            self.illums.iter().map(to_chromaticity).collect::<Result<_>>()?;
        let weights = nearest_weights(&chromas, &to_chromaticity(illum)?, k)?;
        let mut m = [0.0; 9];
        for (i, w) in weights {
            for j in 0..9 {
                m[j] += w * self.transforms[i].m[j];
            }
        }
        Ok(Transform3 { m }.normalized())
    }
}

/// Sensor-mapping methods the evaluator can score.
pub enum SensorMapper<'a> {
    Mlp { model: &'a MlpModel },
    Knn { bank: &'a SensorBank, k: usize },
    Oracle { model: &'a MlpModel, config: &'a TrainConfig, seed: u64 },
}

impl SensorMapper<'_> {
    pub fn label(&self) -> String {
        match self {
            Self::Mlp { .. } => "mlp".into(),
            Self::Knn { k, .. } => format!("knn-{k}nn"),
            Self::Oracle { .. } => "oracle".into(),
        }
    }
}

/// Scores a sensor-mapping method over every (test chart, test illuminant).
/// `camera` in the rows is the mapped pair "a->b"; src and dst illuminant
/// columns both carry the light's id.
pub fn evaluate_sensor_method(set: &SensorEvalSet, mapper: &SensorMapper) -> Result<Vec<ReportRow>> {
    let label = mapper.label();
    let camera = format!("{}->{}", set.camera_a, set.camera_b);
    let mut jobs: Vec<(usize, usize)> = Vec::new();
    for c in 0..set.charts.len() {
        for i in 0..set.illums.len() {
            jobs.push((c, i));
        }
    }
    let results = par::map(&jobs, |&(c, i)| -> Result<ReportRow> {
        let chart = &set.charts[c];
        let illum_a = &set.illums[i];
        let illum_b = &set.illums_b[i];
        let src_img = &chart.images_a[i];
        let dst_img = &chart.images_b[i];
        let t = match mapper {
            SensorMapper::Mlp { model } => Some(forward(model, &illum_input(illum_a))?),
            SensorMapper::Knn { bank, k } => Some(bank.interpolate(illum_a, *k)?),
            SensorMapper::Oracle { model, config, seed } => {
                match masked_pair_pixels(src_img, dst_img)? {
                    Some(samples) => {
                        let s = pair_seed(*seed, &[&camera, &chart.chart_id, &illum_a.id]);
                        Some(finetune_oracle(model, &illum_input(illum_a), &samples, config, s)?)
                    }
                    None => None,
                }
            }
        };
        let scored = match t {
            Some(t) => {
                let pred = apply_transform(&t, src_img)?;
                try_evaluate_pair(&pred, dst_img, illum_b)?
            }
            None => None,
        };
        let row = match scored {
            Some(e) => ReportRow {
                method: label.clone(),
                camera: camera.clone(),
                scene: chart.chart_id.clone(),
                src_illum: illum_a.id.clone(),
                dst_illum: illum_a.id.clone(),
                mae_all: e.mae_with,
                mae_no_neutral: e.mae_without,
                n_pixels_all: e.n_with,
                n_pixels_no_neutral: e.n_without,
            },
            None => {
                eprintln!(
                    "warning: illuminant {} on chart {} ({camera}) has an empty mask; skipped",
                    illum_a.id, chart.chart_id
                );
                ReportRow {
                    method: label.clone(),
                    camera: camera.clone(),
                    scene: chart.chart_id.clone(),
                    src_illum: illum_a.id.clone(),
                    dst_illum: illum_a.id.clone(),
                    mae_all: f64::NAN,
                    mae_no_neutral: f64::NAN,
                    n_pixels_all: 0,
                    n_pixels_no_neutral: 0,
                }
            }
        };
        Ok(row)
    });
    results.into_iter().collect()
}

/// Per-pixel angular-error map (0 where the angle is undefined), for RAWF
/// export.
pub fn error_map(pred: &RawImage, target: &RawImage) -> Result<Vec<f64>> {
    if pred.width != target.width || pred.height != target.height {
        return Err(Error::Shape("prediction/target dimensions differ".into()));
    }
    Ok((0..target.n_pixels())
        .map(|i| crate::color::angular_error(pred.pixel(i), target.pixel(i)).unwrap_or(0.0))
        .collect())
}
