//! Core color types and operations: the angular-error metric, diagonal and
//! least-squares 3x3 transforms, chromaticity conversion, and the
//! saturation/neutral pixel masks shared by the evaluation protocol.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the cosine band at ±1 treated as flat when differentiating the
/// angular loss (the arccos derivative is singular at the endpoints).
pub const COS_CLAMP_EPS: f64 = 1e-7;

/// Guard on the green channel when forming chromaticities.
pub const CHROMA_G_EPS: f64 = 1e-9;

/// Saturation thresholds as fractions of the dynamic range.
pub const SATURATION_LO: f64 = 0.01;
pub const SATURATION_HI: f64 = 0.99;

/// Angular threshold (degrees) below which a pixel counts as neutral.
pub const NEUTRAL_DEG: f64 = 3.5;

/// Linear RAW image, planar channel-major layout (`data[c*w*h + y*w + x]`),
/// normalized so the white level is 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    /// 1 for mosaiced data, 3 for demosaiced.
    pub channels: usize,
    pub data: Vec<f64>,
    pub camera_id: String,
    pub illuminant_id: String,
}

impl RawImage {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
        camera_id: impl Into<String>,
        illuminant_id: impl Into<String>,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!("channels must be 1 or 3, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("image samples must be finite and >= 0".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
            camera_id: camera_id.into(),
            illuminant_id: illuminant_id.into(),
        })
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    /// RGB triplet at flat pixel index `i`. Panics if mosaiced.
    pub fn pixel(&self, i: usize) -> [f64; 3] {
        debug_assert_eq!(self.channels, 3);
        let n = self.n_pixels();
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    pub fn set_pixel(&mut self, i: usize, p: [f64; 3]) {
        debug_assert_eq!(self.channels, 3);
        let n = self.n_pixels();
        self.data[i] = p[0];
        self.data[n + i] = p[1];
        self.data[2 * n + i] = p[2];
    }
}

/// Sensor RAW-RGB response to a perfect white surface under one light.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Illuminant {
    pub rgb: [f64; 3],
    pub id: String,
}

impl Illuminant {
    pub fn new(rgb: [f64; 3], id: impl Into<String>) -> Result<Self> {
        if rgb.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("illuminant channels must be finite and >= 0".into()));
        }
        if rgb.iter().all(|v| *v <= 0.0) {
            return Err(Error::Domain("illuminant needs at least one positive channel".into()));
        }
        Ok(Self { rgb, id: id.into() })
    }
}

/// Intensity-free color coordinates (R/G, B/G).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chromaticity {
    pub rg: f64,
    pub bg: f64,
}

impl Chromaticity {
    pub fn distance(&self, other: &Chromaticity) -> f64 {
        let dr = self.rg - other.rg;
        let db = self.bg - other.bg;
        (dr * dr + db * db).sqrt()
    }
}

/// A 3x3 real transform, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform3 {
    pub m: [f64; 9],
}

impl Transform3 {
    pub fn new(m: [f64; 9]) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("transform entries must be finite".into()));
        }
        let t = Self { m };
        if t.frobenius_norm() <= 0.0 {
            return Err(Error::Numeric("transform must have positive Frobenius norm".into()));
        }
        Ok(t)
    }

    pub fn identity() -> Self {
        Self { m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0] }
    }

    pub fn diagonal(d: [f64; 3]) -> Self {
        Self { m: [d[0], 0.0, 0.0, 0.0, d[1], 0.0, 0.0, 0.0, d[2]] }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scaled to unit Frobenius norm.
    pub fn normalized(&self) -> Self {
        let n = self.frobenius_norm();
        let mut m = self.m;
        for v in &mut m {
            *v /= n;
        }
        Self { m }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        [
            self.m[0] * p[0] + self.m[1] * p[1] + self.m[2] * p[2],
            self.m[3] * p[0] + self.m[4] * p[1] + self.m[5] * p[2],
            self.m[6] * p[0] + self.m[7] * p[1] + self.m[8] * p[2],
        ]
    }

    /// Matrix product self * other (apply `other` first).
    pub fn compose(&self, other: &Transform3) -> Self {
        let a = &self.m;
        let b = &other.m;
        let mut m = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                m[r * 3 + c] = a[r * 3] * b[c] + a[r * 3 + 1] * b[3 + c] + a[r * 3 + 2] * b[6 + c];
            }
        }
        Self { m }
    }
}

/// One inclusion bit per pixel (true = included in the metric).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl PixelMask {
    pub fn and(&self, other: &PixelMask) -> PixelMask {
        debug_assert_eq!(self.bits.len(), other.bits.len());
        PixelMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Angle between two RGB rays in degrees, invariant to positive scaling of
/// either argument. The cosine is clamped to avoid NaN at collinearity.
pub fn angular_error(a: [f64; 3], b: [f64; 3]) -> Result<f64> {
    let na = norm3(a);
    let nb = norm3(b);
    if na <= 0.0 || nb <= 0.0 {
        return Err(Error::Domain("angular_error needs vectors of positive norm".into()));
    }
    let c = (dot3(a, b) / (na * nb)).clamp(-1.0, 1.0);
    Ok(c.acos().to_degrees())
}

/// (R/G, B/G) of an illuminant. Errors on a degenerate green channel.
pub fn to_chromaticity(l: &Illuminant) -> Result<Chromaticity> {
    let g = l.rgb[1];
    if g <= CHROMA_G_EPS {
        return Err(Error::Domain(format!("degenerate illuminant '{}': G = {g}", l.id)));
    }
    Ok(Chromaticity { rg: l.rgb[0] / g, bg: l.rgb[2] / g })
}

/// Applies `t` to every pixel, clamping negatives to 0. Metadata is carried
/// over unchanged; callers retag illuminant/camera ids as appropriate.
pub fn apply_transform(t: &Transform3, img: &RawImage) -> Result<RawImage> {
    if img.channels != 3 {
        return Err(Error::Shape("apply_transform requires a demosaiced 3-channel image".into()));
    }
    let n = img.n_pixels();
    let mut out = img.clone();
    for i in 0..n {
        let p = t.apply(img.pixel(i));
        out.set_pixel(i, [p[0].max(0.0), p[1].max(0.0), p[2].max(0.0)]);
    }
    Ok(out)
}

/// Von Kries diagonal correction: divide by the source illuminant, multiply
/// by the target.
pub fn diagonal_transform(src: &Illuminant, dst: &Illuminant) -> Result<Transform3> {
    if src.rgb.iter().any(|v| *v <= 0.0) {
        return Err(Error::Domain(format!(
            "diagonal transform needs all source channels > 0, got {:?}",
            src.rgb
        )));
    }
    Ok(Transform3::diagonal([
        dst.rgb[0] / src.rgb[0],
        dst.rgb[1] / src.rgb[1],
        dst.rgb[2] / src.rgb[2],
    ]))
}

/// Least-squares fit of T minimizing sum ||T s_i - d_i||^2 via the normal
/// equations, Frobenius-normalized. The source pixel matrix must have rank 3.
pub fn fit_transform_lsq(src_pixels: &[[f64; 3]], dst_pixels: &[[f64; 3]]) -> Result<Transform3> {
    if src_pixels.len() != dst_pixels.len() {
        return Err(Error::Parameter("source/target pixel lists differ in length".into()));
    }
    if src_pixels.len() < 3 {
        return Err(Error::Parameter("need at least 3 pixel correspondences".into()));
    }
    // A = sum s s^T, B = sum d s^T; T = B A^{-1}.
    let mut a = [0.0f64; 9];
    let mut b = [0.0f64; 9];
    for (s, d) in src_pixels.iter().zip(dst_pixels) {
        for r in 0..3 {
            for c in 0..3 {
                a[r * 3 + c] += s[r] * s[c];
                b[r * 3 + c] += d[r] * s[c];
            }
        }
    }
    let a_inv = invert3(&a).ok_or_else(|| {
        Error::Numeric("singular system: source pixels are rank-deficient".into())
    })?;
    let mut t = [0.0f64; 9];
    for r in 0..3 {
        for c in 0..3 {
            t[r * 3 + c] =
                b[r * 3] * a_inv[c] + b[r * 3 + 1] * a_inv[3 + c] + b[r * 3 + 2] * a_inv[6 + c];
        }
    }
    Ok(Transform3::new(t)?.normalized())
}

/// Inverse of a row-major 3x3, or None if near-singular.
fn invert3(m: &[f64; 9]) -> Option<[f64; 9]> {
    let det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6]);
    let scale = m.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
    if !det.is_finite() || det.abs() <= 1e-12 * scale.powi(3).max(f64::MIN_POSITIVE) {
        return None;
    }
    let inv_det = 1.0 / det;
    Some([
        (m[4] * m[8] - m[5] * m[7]) * inv_det,
        (m[2] * m[7] - m[1] * m[8]) * inv_det,
        (m[1] * m[5] - m[2] * m[4]) * inv_det,
        (m[5] * m[6] - m[3] * m[8]) * inv_det,
        (m[0] * m[8] - m[2] * m[6]) * inv_det,
        (m[2] * m[3] - m[0] * m[5]) * inv_det,
        (m[3] * m[7] - m[4] * m[6]) * inv_det,
        (m[1] * m[6] - m[0] * m[7]) * inv_det,
        (m[0] * m[4] - m[1] * m[3]) * inv_det,
    ])
}

/// Excludes pixels with any channel below 1% or above 99% of the dynamic
/// range of the target image.
pub fn saturation_mask(target: &RawImage) -> Result<PixelMask> {
    if target.channels != 3 {
        return Err(Error::Shape("saturation_mask requires a 3-channel image".into()));
    }
    let bits = (0..target.n_pixels())
        .map(|i| {
            let p = target.pixel(i);
            p.iter().all(|v| *v >= SATURATION_LO && *v <= SATURATION_HI)
        })
        .collect();
    Ok(PixelMask { width: target.width, height: target.height, bits })
}

/// Flags pixels within 3.5 degrees of the target illuminant as neutral
/// (bit = false, excluded from the w/o-neutral metric). Zero-norm pixels are
/// classified as neutral since the angle is undefined there.
pub fn neutral_mask(target: &RawImage, target_illum: &Illuminant) -> Result<PixelMask> {
    if target.channels != 3 {
        return Err(Error::Shape("neutral_mask requires a 3-channel image".into()));
    }
    let bits = (0..target.n_pixels())
        .map(|i| {
            let p = target.pixel(i);
            match angular_error(p, target_illum.rgb) {
                Ok(deg) => deg >= NEUTRAL_DEG,
                Err(_) => false,
            }
        })
        .collect();
    Ok(PixelMask { width: target.width, height: target.height, bits })
}
