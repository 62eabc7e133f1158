//! Synthetic benchmark generation and loading: SPD collections, scenes,
//! rendered images, illuminant tables, and the dataset manifest.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::{Illuminant, RawImage};
use crate::error::{Error, Result};
use crate::par;
use crate::rawf;
use crate::spectral::{
    auto_exposure, blackbody_spd, illuminant_rgb, led_spd, normalize_power, random_reflectance,
    render, CameraModel, DatasetSplit, SpectralCurve, SpectralScene, N_SAMPLES, wavelength,
};
use crate::train::{IllumDataset, PairedImages, SensorDataset, SensorSamples};

/// All SPDs are normalized to this integral power before rendering.
pub const SPD_POWER: f64 = 800.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub cameras: Vec<String>,
    pub train_scene_size: usize,
    pub train_palette: usize,
    pub test_scene_size: usize,
    pub test_palette: usize,
    pub n_test_scenes: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 60,
            n_val: 10,
            n_test: 20,
            cameras: vec!["broadband_a".into(), "broadband_b".into()],
            train_scene_size: 64,
            train_palette: 220,
            test_scene_size: 32,
            test_palette: 60,
            n_test_scenes: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Train,
    Test,
    ChartTrain,
    ChartVal,
    ChartTest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub kind: SceneKind,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageEntry {
    pub camera: String,
    pub scene: String,
    pub illuminant: String,
    pub path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub cameras: Vec<String>,
    pub split: DatasetSplit,
    pub scenes: Vec<SceneEntry>,
    pub images: Vec<ImageEntry>,
    /// (camera id, illuminant table CSV path).
    pub illuminant_tables: Vec<(String, String)>,
    /// (illuminant id, SPD CSV path).
    pub spd_files: Vec<(String, String)>,
}

impl Manifest {
    pub fn scene(&self, id: &str) -> Result<&SceneEntry> {
        self.scenes
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Data(format!("scene '{id}' not in manifest")))
    }

    pub fn scenes_of_kind(&self, kind: SceneKind) -> Vec<&SceneEntry> {
        self.scenes.iter().filter(|s| s.kind == kind).collect()
    }

    pub fn image_path(&self, camera: &str, scene: &str, illum: &str) -> Result<&str> {
        self.images
            .iter()
            .find(|e| e.camera == camera && e.scene == scene && e.illuminant == illum)
            .map(|e| e.path.as_str())
            .ok_or_else(|| {
                Error::Data(format!("no image for camera={camera} scene={scene} illum={illum}"))
            })
    }
}

/// In-memory world before anything touches the disk.
pub struct World {
    pub spds: Vec<SpectralCurve>,
    pub split: DatasetSplit,
    pub scenes: Vec<(SpectralScene, SceneKind)>,
    pub cameras: Vec<CameraModel>,
}

fn random_spd(rng: &mut ChaCha8Rng, idx: usize) -> Result<SpectralCurve> {
    if rng.random::<bool>() {
        // Temperature uniform in log over [2500, 10000] K.
        let lo = 2500.0f64.ln();
        let hi = 10000.0f64.ln();
        let t = (lo + (hi - lo) * rng.random::<f64>()).exp();
        let spd = blackbody_spd(t)?;
        SpectralCurve::new(spd.values, spd.kind, format!("bb{:05}_{idx:03}", t.round() as u32))
    } else {
        // White-LED shape: narrow blue pump plus a broad phosphor hump,
        // optionally a third mid peak. Keeps chromaticities physical.
        let mut peaks = vec![
            (
                430.0 + 50.0 * rng.random::<f64>(),
                15.0 + 15.0 * rng.random::<f64>(),
                0.6 + 0.4 * rng.random::<f64>(),
            ),
            (
                520.0 + 120.0 * rng.random::<f64>(),
                70.0 + 50.0 * rng.random::<f64>(),
                0.5 + 0.5 * rng.random::<f64>(),
            ),
        ];
        if rng.random::<bool>() {
            peaks.push((
                500.0 + 150.0 * rng.random::<f64>(),
                30.0 + 30.0 * rng.random::<f64>(),
                0.2 + 0.4 * rng.random::<f64>(),
            ));
        }
        let n_peaks = peaks.len();
        led_spd(&peaks, format!("led{n_peaks}p_{idx:03}"))
    }
}

fn random_scene(
    rng: &mut ChaCha8Rng,
    id: &str,
    size: usize,
    palette_len: usize,
    prefix: &str,
) -> Result<SpectralScene> {
    let palette: Vec<SpectralCurve> =
        (0..palette_len).map(|i| random_reflectance(rng, format!("{prefix}_r{i:03}"))).collect();
    let indices: Vec<usize> = (0..size * size).map(|_| rng.random_range(0..palette_len)).collect();
    SpectralScene::new(id, size, size, palette, indices)
}

fn chart_scene(rng: &mut ChaCha8Rng, id: &str) -> Result<SpectralScene> {
    let palette: Vec<SpectralCurve> =
        (0..24).map(|i| random_reflectance(rng, format!("{id}_p{i:02}"))).collect();
    SpectralScene::new(id, 6, 4, palette, (0..24).collect())
}

/// Deterministically builds the SPDs, scenes, and cameras for a benchmark.
/// The train split always carries a 6500 K blackbody with id "D65" as its
/// first illuminant.
pub fn build_world(config: &GenConfig) -> Result<World> {
    if config.n_train < 1 || config.n_val < 1 || config.n_test < 1 {
        return Err(Error::Parameter("split counts must all be >= 1".into()));
    }
    if config.cameras.is_empty() {
        return Err(Error::Parameter("need at least one camera".into()));
    }
    let cameras: Vec<CameraModel> =
        config.cameras.iter().map(|c| CameraModel::preset(c)).collect::<Result<_>>()?;

    let mut spd_rng = ChaCha8Rng::seed_from_u64(config.seed);
    spd_rng.set_stream(1);
    let total = config.n_train + config.n_val + config.n_test;
    let mut spds = Vec::with_capacity(total);
    let d65 = blackbody_spd(6500.0)?;
    spds.push(SpectralCurve::new(d65.values, d65.kind, "D65")?);
    for i in 1..total {
        spds.push(random_spd(&mut spd_rng, i)?);
    }
    let spds: Vec<SpectralCurve> =
        spds.iter().map(|s| normalize_power(s, SPD_POWER)).collect::<Result<_>>()?;

    let ids: Vec<String> = spds.iter().map(|s| s.id.clone()).collect();
    let split = DatasetSplit {
        train_illums: ids[..config.n_train].to_vec(),
        val_illums: ids[config.n_train..config.n_train + config.n_val].to_vec(),
        test_illums: ids[config.n_train + config.n_val..].to_vec(),
    };
    split.validate()?;

    let mut scene_rng = ChaCha8Rng::seed_from_u64(config.seed);
    scene_rng.set_stream(2);
    let mut scenes = Vec::new();
    scenes.push((
        random_scene(
            &mut scene_rng,
            "scene_train",
            config.train_scene_size,
            config.train_palette,
            "train",
        )?,
        SceneKind::Train,
    ));
    for s in 0..config.n_test_scenes {
        scenes.push((
            random_scene(
                &mut scene_rng,
                &format!("scene_test_{s}"),
                config.test_scene_size,
                config.test_palette,
                &format!("test{s}"),
            )?,
            SceneKind::Test,
        ));
    }
    scenes.push((chart_scene(&mut scene_rng, "chart_train")?, SceneKind::ChartTrain));
    scenes.push((chart_scene(&mut scene_rng, "chart_val")?, SceneKind::ChartVal));
    scenes.push((chart_scene(&mut scene_rng, "chart_test_a")?, SceneKind::ChartTest));
    scenes.push((chart_scene(&mut scene_rng, "chart_test_b")?, SceneKind::ChartTest));

    // Train/test reflectance palettes must stay disjoint.
    let train_ids: std::collections::HashSet<&str> =
        scenes[0].0.palette.iter().map(|c| c.id.as_str()).collect();
    for (scene, kind) in &scenes[1..] {
        if *kind == SceneKind::Test {
            for c in &scene.palette {
                if train_ids.contains(c.id.as_str()) {
                    return Err(Error::Data(format!(
                        "reflectance '{}' shared between train and test scenes",
                        c.id
                    )));
                }
            }
        }
    }

    Ok(World { spds, split, scenes, cameras })
}

/// Which illuminants a scene gets rendered under.
fn illum_ids_for<'a>(kind: SceneKind, split: &'a DatasetSplit) -> Vec<&'a str> {
    let s = |v: &'a [String]| v.iter().map(String::as_str).collect::<Vec<_>>();
    match kind {
        SceneKind::Train => {
            let mut ids = s(&split.train_illums);
            ids.extend(split.val_illums.iter().map(String::as_str));
            ids
        }
        SceneKind::ChartTrain => s(&split.train_illums),
        SceneKind::ChartVal => s(&split.val_illums),
        SceneKind::Test | SceneKind::ChartTest => s(&split.test_illums),
    }
}

fn write_spectral_csv(path: &Path, curve: &SpectralCurve) -> Result<()> {
    let mut out = String::from("wavelength_nm,value\n");
    for (i, v) in curve.values.iter().enumerate() {
        out.push_str(&format!("{},{}\n", wavelength(i), v));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_spectral_csv(path: &Path, kind: crate::spectral::CurveKind, id: &str) -> Result<SpectralCurve> {
    let text = fs::read_to_string(path)?;
    let mut values = Vec::with_capacity(N_SAMPLES);
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 {
            continue;
        }
        let (_, v) = line
            .split_once(',')
            .ok_or_else(|| Error::Data(format!("bad spectral CSV line: '{line}'")))?;
        values.push(v.parse::<f64>().map_err(|e| Error::Data(format!("bad value '{v}': {e}")))?);
    }
    SpectralCurve::new(values, kind, id)
}

fn write_illuminant_csv(path: &Path, illums: &[Illuminant]) -> Result<()> {
    let mut out = String::from("illuminant_id,R,G,B\n");
    for l in illums {
        out.push_str(&format!("{},{},{},{}\n", l.id, l.rgb[0], l.rgb[1], l.rgb[2]));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_illuminant_csv(path: &Path) -> Result<Vec<Illuminant>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Data(format!("bad illuminant CSV line: '{line}'")));
        }
        let mut rgb = [0.0; 3];
        for c in 0..3 {
            rgb[c] = parts[c + 1]
                .parse::<f64>()
                .map_err(|e| Error::Data(format!("bad channel '{}': {e}", parts[c + 1])))?;
        }
        out.push(Illuminant::new(rgb, parts[0])?);
    }
    Ok(out)
}

/// Generates the benchmark and writes everything under `out`: SPD CSVs,
/// per-camera illuminant tables, rendered RAWF images, and the manifest.
/// Byte-identical for a fixed (config, seed).
pub fn make_benchmark(config: &GenConfig, out: &Path, force: bool) -> Result<Manifest> {
    if out.exists() && out.read_dir()?.next().is_some() {
        if !force {
            return Err(Error::Data(format!(
                "output directory {} is not empty (use --force to overwrite)",
                out.display()
            )));
        }
        fs::remove_dir_all(out)?;
    }
    fs::create_dir_all(out.join("spds"))?;
    fs::create_dir_all(out.join("illuminants"))?;

    let world = build_world(config)?;

    let mut spd_files = Vec::new();
    for spd in &world.spds {
        let rel = format!("spds/{}.csv", spd.id);
        write_spectral_csv(&out.join(&rel), spd)?;
        spd_files.push((spd.id.clone(), rel));
    }

    let spd_by_id: HashMap<&str, &SpectralCurve> =
        world.spds.iter().map(|s| (s.id.as_str(), s)).collect();

    let mut illuminant_tables = Vec::new();
    for cam in &world.cameras {
        let illums: Vec<Illuminant> =
            world.spds.iter().map(|spd| illuminant_rgb(spd, cam)).collect::<Result<_>>()?;
        let rel = format!("illuminants/{}.csv", cam.id);
        write_illuminant_csv(&out.join(&rel), &illums)?;
        illuminant_tables.push((cam.id.clone(), rel));
    }

    // One render job per (camera, scene, illuminant).
    struct Job<'a> {
        cam: &'a CameraModel,
        scene: &'a SpectralScene,
        spd: &'a SpectralCurve,
        rel: String,
    }
    let mut jobs = Vec::new();
    let mut images = Vec::new();
    let mut scene_entries = Vec::new();
    for (scene, kind) in &world.scenes {
        scene_entries.push(SceneEntry {
            id: scene.id.clone(),
            kind: *kind,
            width: scene.width,
            height: scene.height,
        });
        for cam in &world.cameras {
            for illum_id in illum_ids_for(*kind, &world.split) {
                let rel = format!("images/{}/{}/{}.rawf", cam.id, scene.id, illum_id);
                jobs.push(Job { cam, scene, spd: spd_by_id[illum_id], rel: rel.clone() });
                images.push(ImageEntry {
                    camera: cam.id.clone(),
                    scene: scene.id.clone(),
                    illuminant: illum_id.to_string(),
                    path: rel,
                });
            }
        }
    }
    for job in &jobs {
        if let Some(parent) = out.join(&job.rel).parent() {
            fs::create_dir_all(parent)?;
        }
    }
    let results = par::map(&jobs, |job| -> Result<()> {
        let exposure = auto_exposure(job.scene, job.spd, job.cam)?;
        let img = render(job.scene, job.spd, job.cam, exposure)?;
        rawf::write_image(&out.join(&job.rel), &img)
    });
    for r in results {
        r?;
    }

    let manifest = Manifest {
        seed: config.seed,
        cameras: config.cameras.clone(),
        split: world.split,
        scenes: scene_entries,
        images,
        illuminant_tables,
        spd_files,
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    fs::write(out.join("run.json"), serde_json::to_string_pretty(config)? + "\n")?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    Ok(serde_json::from_str(&text)?)
}

/// Illuminant table of one camera, as an id-indexed map.
pub fn load_illuminants(dir: &Path, manifest: &Manifest, camera: &str) -> Result<HashMap<String, Illuminant>> {
    let rel = manifest
        .illuminant_tables
        .iter()
        .find(|(c, _)| c == camera)
        .map(|(_, p)| p)
        .ok_or_else(|| Error::Data(format!("camera '{camera}' not in manifest")))?;
    let list = read_illuminant_csv(&dir.join(rel))?;
    Ok(list.into_iter().map(|l| (l.id.clone(), l)).collect())
}

fn load_scene_under(
    dir: &Path,
    manifest: &Manifest,
    camera: &str,
    scene: &str,
    illum_ids: &[String],
    table: &HashMap<String, Illuminant>,
) -> Result<PairedImages> {
    let mut illums = Vec::with_capacity(illum_ids.len());
    let mut images = Vec::with_capacity(illum_ids.len());
    for id in illum_ids {
        let l = table
            .get(id)
            .ok_or_else(|| Error::Data(format!("illuminant '{id}' missing from table")))?;
        illums.push(l.clone());
        images.push(rawf::read_image(&dir.join(manifest.image_path(camera, scene, id)?))?);
    }
    Ok(PairedImages { illums, images })
}

/// Training-scene images under the train and validation illuminants.
pub fn load_illum_dataset(dir: &Path, manifest: &Manifest, camera: &str) -> Result<IllumDataset> {
    let table = load_illuminants(dir, manifest, camera)?;
    let train_scene = manifest
        .scenes_of_kind(SceneKind::Train)
        .first()
        .map(|s| s.id.clone())
        .ok_or_else(|| Error::Data("manifest has no training scene".into()))?;
    Ok(IllumDataset {
        train: load_scene_under(dir, manifest, camera, &train_scene, &manifest.split.train_illums, &table)?,
        val: load_scene_under(dir, manifest, camera, &train_scene, &manifest.split.val_illums, &table)?,
    })
}

fn chart_samples(
    dir: &Path,
    manifest: &Manifest,
    cam_a: &str,
    cam_b: &str,
    chart: &str,
    illum_ids: &[String],
    table_a: &HashMap<String, Illuminant>,
) -> Result<Vec<SensorSamples>> {
    use crate::train::all_pair_pixels;
    let mut out = Vec::with_capacity(illum_ids.len());
    for id in illum_ids {
        let img_a = rawf::read_image(&dir.join(manifest.image_path(cam_a, chart, id)?))?;
        let img_b = rawf::read_image(&dir.join(manifest.image_path(cam_b, chart, id)?))?;
        let illum = table_a
            .get(id)
            .ok_or_else(|| Error::Data(format!("illuminant '{id}' missing from table")))?
            .clone();
        out.push(SensorSamples { illum, samples: all_pair_pixels(&img_a, &img_b)? });
    }
    Ok(out)
}

/// Chart correspondences between two cameras: the train chart under the
/// train illuminants and the validation chart under the validation ones.
pub fn load_sensor_dataset(
    dir: &Path,
    manifest: &Manifest,
    cam_a: &str,
    cam_b: &str,
) -> Result<SensorDataset> {
    let table_a = load_illuminants(dir, manifest, cam_a)?;
    let chart_of = |kind: SceneKind, what: &str| -> Result<String> {
        manifest
            .scenes_of_kind(kind)
            .first()
            .map(|s| s.id.clone())
            .ok_or_else(|| Error::Data(format!("manifest has no {what} chart")))
    };
    let train_chart = chart_of(SceneKind::ChartTrain, "training")?;
    let val_chart = chart_of(SceneKind::ChartVal, "validation")?;
    Ok(SensorDataset {
        train: chart_samples(dir, manifest, cam_a, cam_b, &train_chart, &manifest.split.train_illums, &table_a)?,
        val: chart_samples(dir, manifest, cam_a, cam_b, &val_chart, &manifest.split.val_illums, &table_a)?,
    })
}

/// Scene images under the test illuminants for evaluation, index-aligned
/// with the split's test list.
pub struct SceneImages {
    pub scene_id: String,
    pub images: Vec<RawImage>,
}

pub struct IllumEvalSet {
    pub camera: String,
    pub illums: Vec<Illuminant>,
    pub scenes: Vec<SceneImages>,
    /// Ordered (src, dst) indices into `illums`.
    pub pairs: Vec<(usize, usize)>,
}

pub fn load_illum_eval(
    dir: &Path,
    manifest: &Manifest,
    camera: &str,
    hard_pair_fraction: f64,
) -> Result<IllumEvalSet> {
    let table = load_illuminants(dir, manifest, camera)?;
    let mut illums = Vec::new();
    for id in &manifest.split.test_illums {
        illums.push(
            table
                .get(id)
                .ok_or_else(|| Error::Data(format!("illuminant '{id}' missing from table")))?
                .clone(),
        );
    }
    let pairs = crate::train::select_hard_pairs(&illums, hard_pair_fraction)?;
    let mut scenes = Vec::new();
    for entry in manifest.scenes_of_kind(SceneKind::Test) {
        let mut images = Vec::new();
        for id in &manifest.split.test_illums {
            images.push(rawf::read_image(&dir.join(manifest.image_path(camera, &entry.id, id)?))?);
        }
        scenes.push(SceneImages { scene_id: entry.id.clone(), images });
    }
    if scenes.is_empty() {
        return Err(Error::Data("manifest has no test scenes".into()));
    }
    Ok(IllumEvalSet { camera: camera.to_string(), illums, scenes, pairs })
}

/// Paired chart images across two sensors under the test illuminants.
pub struct ChartImages {
    pub chart_id: String,
    pub images_a: Vec<RawImage>,
    pub images_b: Vec<RawImage>,
}

pub struct SensorEvalSet {
    pub camera_a: String,
    pub camera_b: String,
    /// Test lights in the source camera's RGB space (the MLP/KNN inputs).
    pub illums: Vec<Illuminant>,
    /// The same lights in the target camera's RGB space (neutral masking).
    pub illums_b: Vec<Illuminant>,
    pub charts: Vec<ChartImages>,
}

pub fn load_sensor_eval(
    dir: &Path,
    manifest: &Manifest,
    cam_a: &str,
    cam_b: &str,
) -> Result<SensorEvalSet> {
    let table_a = load_illuminants(dir, manifest, cam_a)?;
    let table_b = load_illuminants(dir, manifest, cam_b)?;
    let mut illums = Vec::new();
    let mut illums_b = Vec::new();
    for id in &manifest.split.test_illums {
        let missing = || Error::Data(format!("illuminant '{id}' missing from table"));
        illums.push(table_a.get(id).ok_or_else(missing)?.clone());
        illums_b.push(table_b.get(id).ok_or_else(missing)?.clone());
    }
    let mut charts = Vec::new();
    for entry in manifest.scenes_of_kind(SceneKind::ChartTest) {
        let mut images_a = Vec::new();
        let mut images_b = Vec::new();
        for id in &manifest.split.test_illums {
            images_a.push(rawf::read_image(&dir.join(manifest.image_path(cam_a, &entry.id, id)?))?);
            images_b.push(rawf::read_image(&dir.join(manifest.image_path(cam_b, &entry.id, id)?))?);
        }
        charts.push(ChartImages { chart_id: entry.id.clone(), images_a, images_b });
    }
    if charts.is_empty() {
        return Err(Error::Data("manifest has no test charts".into()));
    }
    Ok(SensorEvalSet {
        camera_a: cam_a.to_string(),
        camera_b: cam_b.to_string(),
        illums,
        illums_b,
        charts,
    })
}

/// Recursively collects (relative path, file bytes) sorted by path; used by
/// determinism checks.
pub fn snapshot_tree(root: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let path = entry.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.push((rel, fs::read(&path)?));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_config() -> GenConfig {
        GenConfig {
            seed: 7,
            n_train: 6,
            n_val: 2,
            n_test: 3,
            cameras: vec!["broadband_a".into(), "broadband_b".into()],
            train_scene_size: 8,
            train_palette: 16,
            test_scene_size: 6,
            test_palette: 8,
            n_test_scenes: 2,
        }
    }

    #[test]
    fn world_splits_are_disjoint_and_d65_in_train() {
        let world = build_world(&tiny_config()).unwrap();
        world.split.validate().unwrap();
        assert_eq!(world.split.train_illums[0], "D65");
        assert_eq!(world.split.train_illums.len(), 6);
        assert_eq!(world.split.val_illums.len(), 2);
        assert_eq!(world.split.test_illums.len(), 3);
    }

    #[test]
    fn spd_count_matches_split_totals() {
        let mut config = tiny_config();
        config.n_train = 6;
        config.n_val = 1;
        config.n_test = 2;
        let world = build_world(&config).unwrap();
        assert_eq!(world.spds.len(), 9);
        let ids: std::collections::HashSet<_> = world.spds.iter().map(|s| &s.id).collect();
        assert_eq!(ids.len(), 9);
        // All normalized to the fixed power.
        for spd in &world.spds {
            assert!((spd.total_power() - SPD_POWER).abs() < 1e-6);
        }
    }

    #[test]
    fn benchmark_generation_is_byte_identical() {
        let config = tiny_config();
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        make_benchmark(&config, d1.path(), false).unwrap();
        make_benchmark(&config, d2.path(), false).unwrap();
        let s1 = snapshot_tree(d1.path()).unwrap();
        let s2 = snapshot_tree(d2.path()).unwrap();
        assert_eq!(s1.len(), s2.len());
        for ((p1, b1), (p2, b2)) in s1.iter().zip(&s2) {
            assert_eq!(p1, p2);
            assert_eq!(b1, b2, "file {} differs between runs", p1.display());
        }
    }

    #[test]
    fn refuses_to_overwrite_without_force() {
        let config = tiny_config();
        let dir = tempdir().unwrap();
        make_benchmark(&config, dir.path(), false).unwrap();
        assert!(make_benchmark(&config, dir.path(), false).is_err());
        make_benchmark(&config, dir.path(), true).unwrap();
    }

    #[test]
    fn loaders_roundtrip_the_dataset() {
        let config = tiny_config();
        let dir = tempdir().unwrap();
        let manifest = make_benchmark(&config, dir.path(), false).unwrap();
        let loaded = load_manifest(dir.path()).unwrap();
        assert_eq!(loaded.split.train_illums, manifest.split.train_illums);

        let ds = load_illum_dataset(dir.path(), &loaded, "broadband_a").unwrap();
        assert_eq!(ds.train.illums.len(), 6);
        assert_eq!(ds.val.images.len(), 2);
        assert_eq!(ds.train.images[0].width, 8);

        let sd = load_sensor_dataset(dir.path(), &loaded, "broadband_a", "broadband_b").unwrap();
        assert_eq!(sd.train.len(), 6);
        assert!(sd.train[0].samples.len() >= 3);

        let ev = load_illum_eval(dir.path(), &loaded, "broadband_a", 1.0).unwrap();
        assert_eq!(ev.scenes.len(), 2);
        assert_eq!(ev.pairs.len(), 3 * 2);

        let sev = load_sensor_eval(dir.path(), &loaded, "broadband_a", "broadband_b").unwrap();
        assert_eq!(sev.charts.len(), 2);
    }

    #[test]
    fn spectral_csv_roundtrip() {
        let dir = tempdir().unwrap();
        let spd = blackbody_spd(5600.0).unwrap();
        let path = dir.path().join("spd.csv");
        write_spectral_csv(&path, &spd).unwrap();
        let back = read_spectral_csv(&path, crate::spectral::CurveKind::Spd, "bb5600").unwrap();
        assert_eq!(back.values, spd.values);
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("wavelength_nm,value"));
        assert_eq!(text.lines().count(), 66);
        assert!(text.lines().nth(1).unwrap().starts_with("380,"));
        assert!(text.lines().last().unwrap().starts_with("700,"));
    }

    #[test]
    fn illuminant_csv_roundtrip() {
        let dir = tempdir().unwrap();
        let illums = vec![
            Illuminant::new([1.0, 0.8, 0.62], "D65").unwrap(),
            Illuminant::new([0.33, 1.0, 0.47], "led2p_001").unwrap(),
        ];
        let path = dir.path().join("cam.csv");
        write_illuminant_csv(&path, &illums).unwrap();
        let back = read_illuminant_csv(&path).unwrap();
        assert_eq!(back, illums);
    }

    #[test]
    fn train_and_test_reflectances_disjoint() {
        let world = build_world(&tiny_config()).unwrap();
        let train_ids: std::collections::HashSet<_> =
            world.scenes[0].0.palette.iter().map(|c| c.id.clone()).collect();
        for (scene, kind) in &world.scenes[1..] {
            if *kind == SceneKind::Test {
                for c in &scene.palette {
                    assert!(!train_ids.contains(&c.id));
                }
            }
        }
    }
}
