//! Spectral camera/scene simulator: SPD generators, sensor sensitivity
//! models, and the image-formation integral used as ground truth in place of
//! a physical capture rig.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::color::{Illuminant, RawImage};
use crate::error::{Error, Result};

/// Fixed wavelength grid: 380..=700 nm in 5 nm steps.
pub const WL_START_NM: f64 = 380.0;
pub const WL_END_NM: f64 = 700.0;
pub const WL_STEP_NM: f64 = 5.0;
pub const N_SAMPLES: usize = 65;

/// Wavelength of grid sample `i`.
pub fn wavelength(i: usize) -> f64 {
    WL_START_NM + WL_STEP_NM * i as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Spd,
    Sensitivity,
    Reflectance,
}

/// A sampled function over the fixed wavelength grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralCurve {
    pub values: Vec<f64>,
    pub kind: CurveKind,
    pub id: String,
}

impl SpectralCurve {
    pub fn new(values: Vec<f64>, kind: CurveKind, id: impl Into<String>) -> Result<Self> {
        if values.len() != N_SAMPLES {
            return Err(Error::Shape(format!(
                "spectral curve needs {N_SAMPLES} samples, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("spectral samples must be finite and >= 0".into()));
        }
        if kind == CurveKind::Reflectance && values.iter().any(|v| *v > 1.0) {
            return Err(Error::Domain("reflectance samples must be <= 1".into()));
        }
        Ok(Self { values, kind, id: id.into() })
    }

    /// Integral over the grid with the rectangular rule.
    pub fn total_power(&self) -> f64 {
        self.values.iter().sum::<f64>() * WL_STEP_NM
    }

    /// Scaled so the maximum sample is exactly 1.
    fn peak_normalized(mut self) -> Result<Self> {
        let peak = self.values.iter().cloned().fold(0.0f64, f64::max);
        if peak <= 0.0 {
            return Err(Error::Numeric(format!("curve '{}' is identically zero", self.id)));
        }
        for v in &mut self.values {
            *v /= peak;
        }
        Ok(self)
    }
}

/// Planck blackbody radiance sampled on the grid, normalized to unit peak.
pub fn blackbody_spd(temperature_k: f64) -> Result<SpectralCurve> {
    if !(1500.0..=20000.0).contains(&temperature_k) {
        return Err(Error::Parameter(format!(
            "blackbody temperature {temperature_k} K outside [1500, 20000]"
        )));
    }
    // hc/k_B in nm*K; the lambda^-5 prefactor is in nm^-5, absolute scale is
    // removed by the peak normalization.
    const HC_OVER_KB_NM_K: f64 = 1.438_776_9e7;
    let values = (0..N_SAMPLES)
        .map(|i| {
            let lam = wavelength(i);
            let x = HC_OVER_KB_NM_K / (lam * temperature_k);
            lam.powi(-5) / x.exp_m1()
        })
        .collect();
    SpectralCurve::new(values, CurveKind::Spd, format!("bb{}", temperature_k.round() as i64))?
        .peak_normalized()
}

/// Sum of Gaussian emission lines sampled on the grid, unit peak.
/// Each peak is (center_nm, width_nm, amplitude) with width as the Gaussian
/// sigma.
pub fn led_spd(peaks: &[(f64, f64, f64)], id: impl Into<String>) -> Result<SpectralCurve> {
    if peaks.is_empty() {
        return Err(Error::Parameter("led_spd needs at least one peak".into()));
    }
    for &(c, w, a) in peaks {
        if !(WL_START_NM..=WL_END_NM).contains(&c) {
            return Err(Error::Parameter(format!("peak center {c} nm outside the grid")));
        }
        if w <= 0.0 || a <= 0.0 {
            return Err(Error::Parameter("peak width and amplitude must be > 0".into()));
        }
    }
    let values = (0..N_SAMPLES)
        .map(|i| {
            let lam = wavelength(i);
            peaks
                .iter()
                .map(|&(c, w, a)| a * (-((lam - c) * (lam - c)) / (2.0 * w * w)).exp())
                .sum()
        })
        .collect();
    SpectralCurve::new(values, CurveKind::Spd, id)?.peak_normalized()
}

/// Rescales an SPD so its rectangular-rule integral equals `target`.
pub fn normalize_power(spd: &SpectralCurve, target: f64) -> Result<SpectralCurve> {
    if target <= 0.0 {
        return Err(Error::Parameter("target power must be > 0".into()));
    }
    let p = spd.total_power();
    if p <= 0.0 {
        return Err(Error::Numeric(format!("SPD '{}' has zero power", spd.id)));
    }
    let scale = target / p;
    SpectralCurve::new(
        spd.values.iter().map(|v| v * scale).collect(),
        spd.kind,
        spd.id.clone(),
    )
}

/// Camera model: per-channel spectral sensitivities plus sensor levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub id: String,
    /// R, G, B sensitivity curves.
    pub sensitivities: [SpectralCurve; 3],
    pub black_level: u32,
    pub white_level: u32,
    pub downscale_factor: u32,
}

impl CameraModel {
    pub fn new(
        id: impl Into<String>,
        sensitivities: [SpectralCurve; 3],
        black_level: u32,
        white_level: u32,
        downscale_factor: u32,
    ) -> Result<Self> {
        if black_level >= white_level {
            return Err(Error::Parameter("black_level must be < white_level".into()));
        }
        if downscale_factor == 0 {
            return Err(Error::Parameter("downscale_factor must be >= 1".into()));
        }
        for s in &sensitivities {
            if s.total_power() <= 0.0 {
                return Err(Error::Parameter(format!("sensitivity '{}' has zero area", s.id)));
            }
        }
        Ok(Self { id: id.into(), sensitivities, black_level, white_level, downscale_factor })
    }

    fn gaussian_sensitivities(id: &str, centers: [f64; 3], sigma: f64) -> [SpectralCurve; 3] {
        let mk = |c: f64, ch: &str| {
            let values = (0..N_SAMPLES)
                .map(|i| {
                    let lam = wavelength(i);
                    (-((lam - c) * (lam - c)) / (2.0 * sigma * sigma)).exp()
                })
                .collect();
            SpectralCurve::new(values, CurveKind::Sensitivity, format!("{id}_{ch}")).unwrap()
        };
        [mk(centers[0], "r"), mk(centers[1], "g"), mk(centers[2], "b")]
    }

    fn delta_sensitivities(id: &str, centers: [f64; 3]) -> [SpectralCurve; 3] {
        let mk = |c: f64, ch: &str| {
            let idx = ((c - WL_START_NM) / WL_STEP_NM).round() as usize;
            let mut values = vec![0.0; N_SAMPLES];
            values[idx] = 1.0;
            SpectralCurve::new(values, CurveKind::Sensitivity, format!("{id}_{ch}")).unwrap()
        };
        [mk(centers[0], "r"), mk(centers[1], "g"), mk(centers[2], "b")]
    }

    /// Built-in camera presets used by the synthetic benchmark.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            // Two overlapping-broadband sensors with slightly different
            // filters, so the sensor-to-sensor transform depends on the light.
            "broadband_a" => Self::new(
                name,
                Self::gaussian_sensitivities(name, [615.0, 535.0, 465.0], 42.0),
                1024,
                16383,
                2,
            ),
            "broadband_b" => Self::new(
                name,
                Self::gaussian_sensitivities(name, [600.0, 550.0, 475.0], 34.0),
                512,
                16383,
                2,
            ),
            "narrowband" => Self::new(
                name,
                Self::gaussian_sensitivities(name, [620.0, 540.0, 460.0], 15.0),
                1024,
                16383,
                2,
            ),
            // Single-sample filters; every illumination change is exactly
            // diagonal in this world.
            "delta" => Self::new(
                name,
                Self::delta_sensitivities(name, [620.0, 540.0, 460.0]),
                1024,
                16383,
                2,
            ),
            other => Err(Error::Parameter(format!("unknown camera preset '{other}'"))),
        }
    }
}

/// A scene as per-pixel reflectance indices into a shared palette.
#[derive(Debug, Clone)]
pub struct SpectralScene {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub palette: Vec<SpectralCurve>,
    pub indices: Vec<usize>,
}

impl SpectralScene {
    pub fn new(
        id: impl Into<String>,
        width: usize,
        height: usize,
        palette: Vec<SpectralCurve>,
        indices: Vec<usize>,
    ) -> Result<Self> {
        if indices.len() != width * height {
            return Err(Error::Shape("index buffer must cover every pixel".into()));
        }
        if indices.iter().any(|i| *i >= palette.len()) {
            return Err(Error::Shape("pixel index outside the reflectance palette".into()));
        }
        for c in &palette {
            if c.kind != CurveKind::Reflectance {
                return Err(Error::Parameter(format!("palette curve '{}' is not a reflectance", c.id)));
            }
        }
        Ok(Self { id: id.into(), width, height, palette, indices })
    }
}

/// Disjoint illuminant id lists per split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_illums: Vec<String>,
    pub val_illums: Vec<String>,
    pub test_illums: Vec<String>,
}

impl DatasetSplit {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for id in self.train_illums.iter().chain(&self.val_illums).chain(&self.test_illums) {
            if !seen.insert(id) {
                return Err(Error::Data(format!("illuminant '{id}' appears in multiple splits")));
            }
        }
        Ok(())
    }
}

/// Per-palette-entry camera response to `spd`, before exposure and clipping.
fn palette_responses(scene: &SpectralScene, spd: &SpectralCurve, cam: &CameraModel) -> Vec<[f64; 3]> {
    scene
        .palette
        .iter()
        .map(|refl| {
            let mut rgb = [0.0; 3];
            for (c, sens) in cam.sensitivities.iter().enumerate() {
                rgb[c] = sens
                    .values
                    .iter()
                    .zip(&spd.values)
                    .zip(&refl.values)
                    .map(|((s, p), r)| s * p * r)
                    .sum::<f64>()
                    * WL_STEP_NM;
            }
            rgb
        })
        .collect()
}

fn check_spd(spd: &SpectralCurve) -> Result<()> {
    if spd.kind != CurveKind::Spd {
        return Err(Error::Parameter(format!(
            "curve '{}' has kind {:?}, expected an SPD",
            spd.id, spd.kind
        )));
    }
    Ok(())
}

fn assemble_image(
    scene: &SpectralScene,
    cam: &CameraModel,
    spd_id: &str,
    responses: &[[f64; 3]],
    exposure: f64,
    clip: bool,
) -> RawImage {
    let n = scene.width * scene.height;
    let mut data = vec![0.0; n * 3];
    for (i, &pi) in scene.indices.iter().enumerate() {
        let rgb = responses[pi];
        for c in 0..3 {
            let v = exposure * rgb[c];
            data[c * n + i] = if clip { v.clamp(0.0, 1.0) } else { v };
        }
    }
    RawImage::new(scene.width, scene.height, 3, data, cam.id.clone(), spd_id).unwrap()
}

/// Renders the scene under `spd`: channel c = exposure * sum S_c P R dlam,
/// clipped to [0, 1] to emulate sensor saturation at the white level.
pub fn render(
    scene: &SpectralScene,
    spd: &SpectralCurve,
    cam: &CameraModel,
    exposure: f64,
) -> Result<RawImage> {
    check_spd(spd)?;
    if exposure <= 0.0 {
        return Err(Error::Parameter("exposure must be > 0".into()));
    }
    let responses = palette_responses(scene, spd, cam);
    Ok(assemble_image(scene, cam, &spd.id, &responses, exposure, true))
}

/// Same integral as `render` but without the saturation clip.
pub fn render_unclipped(
    scene: &SpectralScene,
    spd: &SpectralCurve,
    cam: &CameraModel,
    exposure: f64,
) -> Result<RawImage> {
    check_spd(spd)?;
    if exposure <= 0.0 {
        return Err(Error::Parameter("exposure must be > 0".into()));
    }
    let responses = palette_responses(scene, spd, cam);
    Ok(assemble_image(scene, cam, &spd.id, &responses, exposure, false))
}

/// RAW-RGB response to a perfect white reflector, normalized so the maximum
/// channel equals 1.
pub fn illuminant_rgb(spd: &SpectralCurve, cam: &CameraModel) -> Result<Illuminant> {
    check_spd(spd)?;
    if spd.total_power() <= 0.0 {
        return Err(Error::Numeric(format!("SPD '{}' has zero power", spd.id)));
    }
    let mut rgb = [0.0; 3];
    for (c, sens) in cam.sensitivities.iter().enumerate() {
        rgb[c] = sens
            .values
            .iter()
            .zip(&spd.values)
            .map(|(s, p)| s * p)
            .sum::<f64>()
            * WL_STEP_NM;
    }
    let peak = rgb.iter().cloned().fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return Err(Error::Numeric(format!(
            "camera '{}' has no response to SPD '{}'",
            cam.id, spd.id
        )));
    }
    Illuminant::new([rgb[0] / peak, rgb[1] / peak, rgb[2] / peak], spd.id.clone())
}

/// Exposure such that the 99th-percentile pre-clip green value is 0.9,
/// emulating auto-exposure.
pub fn auto_exposure(scene: &SpectralScene, spd: &SpectralCurve, cam: &CameraModel) -> Result<f64> {
    let img = render_unclipped(scene, spd, cam, 1.0)?;
    let n = img.n_pixels();
    let mut greens: Vec<f64> = img.data[n..2 * n].to_vec();
    greens.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((n as f64 - 1.0) * 0.99).round() as usize;
    let g99 = greens[idx];
    if g99 <= 0.0 {
        return Err(Error::Numeric("scene renders to zero green response".into()));
    }
    Ok(0.9 / g99)
}

/// A random smooth reflectance: base level plus 1-3 Gaussian bumps, clamped
/// to [0, 1].
pub fn random_reflectance<R: Rng>(rng: &mut R, id: impl Into<String>) -> SpectralCurve {
    let base = 0.05 + 0.4 * rng.random::<f64>();
    let n_bumps = rng.random_range(1..=3usize);
    let bumps: Vec<(f64, f64, f64)> = (0..n_bumps)
        .map(|_| {
            let center = WL_START_NM + (WL_END_NM - WL_START_NM) * rng.random::<f64>();
            let sigma = 25.0 + 75.0 * rng.random::<f64>();
            let amp = 0.1 + 0.8 * rng.random::<f64>();
            (center, sigma, amp)
        })
        .collect();
    let values = (0..N_SAMPLES)
        .map(|i| {
            let lam = wavelength(i);
            let bump_sum: f64 = bumps
                .iter()
                .map(|&(c, s, a)| a * (-((lam - c) * (lam - c)) / (2.0 * s * s)).exp())
                .sum();
            (base + bump_sum).clamp(0.0, 1.0)
        })
        .collect();
    SpectralCurve::new(values, CurveKind::Reflectance, id).unwrap()
}

/// Spectrally constant reflectance; every pixel of such a material is a
/// scalar multiple of the illuminant RGB.
pub fn flat_reflectance(level: f64, id: impl Into<String>) -> Result<SpectralCurve> {
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::Parameter("flat reflectance level must be in [0, 1]".into()));
    }
    SpectralCurve::new(vec![level; N_SAMPLES], CurveKind::Reflectance, id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat_spd(level: f64) -> SpectralCurve {
        SpectralCurve::new(vec![level; N_SAMPLES], CurveKind::Spd, "flat").unwrap()
    }

    fn uniform_scene(refl: SpectralCurve, w: usize, h: usize) -> SpectralScene {
        SpectralScene::new("s", w, h, vec![refl], vec![0; w * h]).unwrap()
    }

    fn unit_sensor_cam() -> CameraModel {
        let mk = |ch| {
            SpectralCurve::new(vec![1.0; N_SAMPLES], CurveKind::Sensitivity, ch).unwrap()
        };
        CameraModel::new("unit", [mk("r"), mk("g"), mk("b")], 0, 1023, 1).unwrap()
    }

    #[test]
    fn render_single_term_sum() {
        // Delta sensitivity at one grid sample: the integral collapses to
        // exposure * s * p * r * 5.
        let mut svals = vec![0.0; N_SAMPLES];
        svals[10] = 0.7;
        let sens = SpectralCurve::new(svals, CurveKind::Sensitivity, "s").unwrap();
        let cam = CameraModel::new("d", [sens.clone(), sens.clone(), sens], 0, 1023, 1).unwrap();
        let scene = uniform_scene(flat_reflectance(0.5, "r").unwrap(), 2, 2);
        let img = render_unclipped(&scene, &flat_spd(0.8), &cam, 2.0).unwrap();
        assert_abs_diff_eq!(img.pixel(0)[0], 2.0 * 0.7 * 0.8 * 0.5 * 5.0, epsilon = 1e-12);
    }

    #[test]
    fn render_all_ones_clips_to_one() {
        let scene = uniform_scene(flat_reflectance(1.0, "r").unwrap(), 2, 2);
        let img = render(&scene, &flat_spd(1.0), &unit_sensor_cam(), 1.0).unwrap();
        // 65 samples x 5 nm = 325 pre-clip, saturates at 1.
        assert_eq!(img.pixel(0), [1.0, 1.0, 1.0]);
        let pre = render_unclipped(&scene, &flat_spd(1.0), &unit_sensor_cam(), 1.0).unwrap();
        assert_abs_diff_eq!(pre.pixel(0)[0], 325.0, epsilon = 1e-9);
    }

    #[test]
    fn render_zero_reflectance_is_black() {
        let scene = uniform_scene(flat_reflectance(0.0, "r").unwrap(), 2, 2);
        let img = render(&scene, &flat_spd(1.0), &unit_sensor_cam(), 1.0).unwrap();
        assert!(img.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn render_rejects_non_spd_curve() {
        let scene = uniform_scene(flat_reflectance(0.5, "r").unwrap(), 1, 1);
        let not_spd =
            SpectralCurve::new(vec![1.0; N_SAMPLES], CurveKind::Reflectance, "x").unwrap();
        assert!(matches!(
            render(&scene, &not_spd, &unit_sensor_cam(), 1.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn render_linear_in_exposure_and_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let refl = random_reflectance(&mut rng, "r");
        let scene = uniform_scene(refl, 3, 3);
        let cam = CameraModel::preset("broadband_a").unwrap();
        let spd = blackbody_spd(5000.0).unwrap();
        let scaled = SpectralCurve::new(
            spd.values.iter().map(|v| v * 2.5).collect(),
            CurveKind::Spd,
            "scaled",
        )
        .unwrap();
        let a = render_unclipped(&scene, &scaled, &cam, 1.0).unwrap();
        let b = render_unclipped(&scene, &spd, &cam, 2.5).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn illuminant_rgb_delta_sensors_sample_the_spd() {
        let cam = CameraModel::preset("delta").unwrap();
        let spd = blackbody_spd(4000.0).unwrap();
        let l = illuminant_rgb(&spd, &cam).unwrap();
        let at = |nm: f64| spd.values[((nm - WL_START_NM) / WL_STEP_NM) as usize];
        let raw = [at(620.0) * 5.0, at(540.0) * 5.0, at(460.0) * 5.0];
        let peak = raw.iter().cloned().fold(0.0f64, f64::max);
        for c in 0..3 {
            assert_abs_diff_eq!(l.rgb[c], raw[c] / peak, epsilon = 1e-12);
        }
    }

    #[test]
    fn illuminant_rgb_symmetric_sensors_flat_spd() {
        // R and B filters equidistant from the grid edges with equal widths:
        // flat light must excite them identically.
        let sens = CameraModel::gaussian_sensitivities("sym", [660.0, 540.0, 420.0], 30.0);
        let cam = CameraModel::new("sym", sens, 0, 1023, 1).unwrap();
        let l = illuminant_rgb(&flat_spd(1.0), &cam).unwrap();
        assert_abs_diff_eq!(l.rgb[0], l.rgb[2], epsilon = 1e-9);
    }

    #[test]
    fn warmer_blackbody_is_redder() {
        let cam = CameraModel::preset("broadband_a").unwrap();
        let cool = illuminant_rgb(&blackbody_spd(6500.0).unwrap(), &cam).unwrap();
        let warm = illuminant_rgb(&blackbody_spd(2800.0).unwrap(), &cam).unwrap();
        assert!(warm.rgb[0] / warm.rgb[1] > cool.rgb[0] / cool.rgb[1]);
    }

    #[test]
    fn blackbody_peak_positions() {
        // Wien: 2.898e6 / 6500 is about 446 nm, so the grid argmax is 445.
        let spd = blackbody_spd(6500.0).unwrap();
        let argmax = spd
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(wavelength(argmax), 445.0);

        // 2800 K peaks past 700 nm, so the curve rises monotonically here.
        let spd = blackbody_spd(2800.0).unwrap();
        assert!(spd.values.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn blackbody_unit_peak() {
        for t in [1500.0, 2800.0, 6500.0, 20000.0] {
            let spd = blackbody_spd(t).unwrap();
            assert!(spd.values.iter().all(|v| *v > 0.0 && *v <= 1.0));
            assert_eq!(spd.values.iter().filter(|v| **v == 1.0).count(), 1);
        }
        assert!(blackbody_spd(1000.0).is_err());
        assert!(blackbody_spd(30000.0).is_err());
    }

    #[test]
    fn led_spd_examples() {
        let spd = led_spd(&[(540.0, 20.0, 1.0)], "one").unwrap();
        let argmax = spd
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(wavelength(argmax), 540.0);

        let sym = led_spd(&[(500.0, 15.0, 0.8), (580.0, 15.0, 0.8)], "sym").unwrap();
        for i in 0..N_SAMPLES {
            let mirror = ((540.0 - wavelength(i)) + 540.0 - WL_START_NM) / WL_STEP_NM;
            if mirror >= 0.0 && (mirror as usize) < N_SAMPLES {
                assert_abs_diff_eq!(sym.values[i], sym.values[mirror as usize], epsilon = 1e-9);
            }
        }

        let a = led_spd(&[(500.0, 15.0, 0.4), (580.0, 20.0, 0.9)], "a").unwrap();
        let b = led_spd(&[(500.0, 15.0, 1.2), (580.0, 20.0, 2.7)], "b").unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }

        assert!(led_spd(&[], "none").is_err());
    }

    #[test]
    fn normalize_power_examples() {
        let flat = flat_spd(1.0);
        let out = normalize_power(&flat, 325.0).unwrap();
        for (x, y) in out.values.iter().zip(&flat.values) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }

        let out = normalize_power(&flat, 650.0).unwrap();
        assert!(out.values.iter().all(|v| (*v - 2.0).abs() < 1e-12));

        let spd = blackbody_spd(5000.0).unwrap();
        let once = normalize_power(&spd, 800.0).unwrap();
        let twice = normalize_power(&once, 800.0).unwrap();
        for (x, y) in once.values.iter().zip(&twice.values) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn delta_world_illumination_change_is_diagonal() {
        use crate::color::{apply_transform, diagonal_transform};
        let cam = CameraModel::preset("delta").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let palette: Vec<SpectralCurve> =
            (0..8).map(|i| random_reflectance(&mut rng, format!("r{i}"))).collect();
        let indices: Vec<usize> = (0..16).map(|i| i % 8).collect();
        let scene = SpectralScene::new("s", 4, 4, palette, indices).unwrap();

        let pu = blackbody_spd(3200.0).unwrap();
        let pv = led_spd(&[(460.0, 18.0, 1.0), (555.0, 40.0, 0.7)], "led").unwrap();
        let lu = illuminant_rgb(&pu, &cam).unwrap();
        let lv = illuminant_rgb(&pv, &cam).unwrap();

        let iu = render_unclipped(&scene, &pu, &cam, 1.0).unwrap();
        let iv = render_unclipped(&scene, &pv, &cam, 1.0).unwrap();

        // Exposure alignment: the diagonal built from max-normalized
        // illuminants maps the source up to one global gain. Estimate the
        // gain from total green energy.
        let t = diagonal_transform(&lu, &lv).unwrap();
        let mapped = apply_transform(&t, &iu).unwrap();
        let n = iv.n_pixels();
        let gain: f64 =
            iv.data[n..2 * n].iter().sum::<f64>() / mapped.data[n..2 * n].iter().sum::<f64>();
        for (x, y) in mapped.data.iter().zip(&iv.data) {
            assert_abs_diff_eq!(x * gain, y, epsilon = 1e-6);
        }
    }

    #[test]
    fn flat_reflectance_scene_is_all_neutral() {
        use crate::color::neutral_mask;
        let cam = CameraModel::preset("broadband_a").unwrap();
        let palette: Vec<SpectralCurve> = (0..4)
            .map(|i| flat_reflectance(0.2 + 0.2 * i as f64, format!("f{i}")).unwrap())
            .collect();
        let indices: Vec<usize> = (0..16).map(|i| i % 4).collect();
        let scene = SpectralScene::new("flat", 4, 4, palette, indices).unwrap();
        let spd = blackbody_spd(4500.0).unwrap();
        let l = illuminant_rgb(&spd, &cam).unwrap();
        let img = render_unclipped(&scene, &spd, &cam, 1.0).unwrap();
        let m = neutral_mask(&img, &l).unwrap();
        assert!(m.bits.iter().all(|b| !b));
    }

    #[test]
    fn auto_exposure_hits_target_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let palette: Vec<SpectralCurve> =
            (0..32).map(|i| random_reflectance(&mut rng, format!("r{i}"))).collect();
        let indices: Vec<usize> = (0..256).map(|i| i % 32).collect();
        let scene = SpectralScene::new("s", 16, 16, palette, indices).unwrap();
        let cam = CameraModel::preset("broadband_a").unwrap();
        let spd = blackbody_spd(5500.0).unwrap();
        let e = auto_exposure(&scene, &spd, &cam).unwrap();
        let img = render_unclipped(&scene, &spd, &cam, e).unwrap();
        let n = img.n_pixels();
        let mut greens: Vec<f64> = img.data[n..2 * n].to_vec();
        greens.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = ((n as f64 - 1.0) * 0.99).round() as usize;
        assert_abs_diff_eq!(greens[idx], 0.9, epsilon = 1e-9);
    }
}
