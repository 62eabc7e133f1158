//! RAW preprocessing chain: black/white level correction, bilinear RGGB
//! demosaic, and box-mean downsampling. The chain order is fixed:
//! level correction, demosaic, downsample.

use crate::color::RawImage;
use crate::error::{Error, Result};

/// A mosaiced sensor readout with RGGB layout and level metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct MosaicImage {
    pub width: usize,
    pub height: usize,
    /// Digital numbers, one sample per photosite.
    pub data: Vec<f64>,
    /// Only "RGGB" is supported.
    pub cfa: String,
    pub black_level: f64,
    pub white_level: f64,
}

impl MosaicImage {
    pub fn new(
        width: usize,
        height: usize,
        data: Vec<f64>,
        black_level: f64,
        white_level: f64,
    ) -> Result<Self> {
        if width % 2 != 0 || height % 2 != 0 {
            return Err(Error::Shape(format!("mosaic dimensions must be even, got {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::Shape("mosaic data length must equal width x height".into()));
        }
        if black_level >= white_level {
            return Err(Error::Parameter("black_level must be < white_level".into()));
        }
        Ok(Self { width, height, data, cfa: "RGGB".into(), black_level, white_level })
    }

    /// Channel (0=R, 1=G, 2=B) at a photosite of the RGGB pattern.
    fn site_channel(x: usize, y: usize) -> usize {
        match (y % 2, x % 2) {
            (0, 0) => 0,
            (1, 1) => 2,
            _ => 1,
        }
    }
}

/// Maps each sample to clamp((x - black) / (white - black), 0, 1). This also
/// covers the normalization step of the chain.
pub fn level_correct(m: &MosaicImage) -> MosaicImage {
    let range = m.white_level - m.black_level;
    let data = m
        .data
        .iter()
        .map(|x| ((x - m.black_level) / range).clamp(0.0, 1.0))
        .collect();
    MosaicImage { data, black_level: 0.0, white_level: 1.0, ..m.clone() }
}

/// Bilinear demosaic of an RGGB mosaic: each missing channel value is the
/// mean of the in-bounds 8-neighborhood sites carrying that channel.
pub fn demosaic_bilinear(m: &MosaicImage) -> Result<RawImage> {
    if m.cfa != "RGGB" {
        return Err(Error::Parameter(format!("unsupported CFA pattern '{}'", m.cfa)));
    }
    if m.width % 2 != 0 || m.height % 2 != 0 {
        return Err(Error::Shape("demosaic requires even dimensions".into()));
    }
    let (w, h) = (m.width, m.height);
    let n = w * h;
    let mut data = vec![0.0; n * 3];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let here = MosaicImage::site_channel(x, y);
            for ch in 0..3 {
                data[ch * n + i] = if ch == here {
                    m.data[i]
                } else {
                    let mut sum = 0.0;
                    let mut cnt = 0usize;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            if dx == 0 && dy == 0 {
                                continue;
                            }
                            let nx = x as i64 + dx;
                            let ny = y as i64 + dy;
                            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                                continue;
                            }
                            let (nx, ny) = (nx as usize, ny as usize);
                            if MosaicImage::site_channel(nx, ny) == ch {
                                sum += m.data[ny * w + nx];
                                cnt += 1;
                            }
                        }
                    }
                    sum / cnt as f64
                };
            }
        }
    }
    RawImage::new(w, h, 3, data, "", "")
}

/// Integer-factor downsample as the area mean of each factor x factor block;
/// for aligned grids this is what bilinear decimation reduces to.
pub fn downsample_bilinear(img: &RawImage, factor: usize) -> Result<RawImage> {
    if factor == 0 {
        return Err(Error::Parameter("downsample factor must be >= 1".into()));
    }
    if img.width % factor != 0 || img.height % factor != 0 {
        return Err(Error::Shape(format!(
            "factor {factor} does not divide {}x{}",
            img.width, img.height
        )));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (ow, oh) = (img.width / factor, img.height / factor);
    let on = ow * oh;
    let n = img.n_pixels();
    let area = (factor * factor) as f64;
    let mut data = vec![0.0; on * img.channels];
    for c in 0..img.channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut sum = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        sum += img.data[c * n + (oy * factor + dy) * img.width + ox * factor + dx];
                    }
                }
                data[c * on + oy * ow + ox] = sum / area;
            }
        }
    }
    RawImage::new(ow, oh, img.channels, data, img.camera_id.clone(), img.illuminant_id.clone())
}

/// Samples a demosaiced image back onto the RGGB pattern, in digital numbers
/// with the given levels. Used to synthesize mosaics for the simulator.
pub fn mosaic_rggb(img: &RawImage, black_level: f64, white_level: f64) -> Result<MosaicImage> {
    if img.channels != 3 {
        return Err(Error::Shape("mosaic_rggb requires a 3-channel image".into()));
    }
    let (w, h) = (img.width, img.height);
    let n = w * h;
    let mut data = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let ch = MosaicImage::site_channel(x, y);
            data[i] = black_level + img.data[ch * n + i] * (white_level - black_level);
        }
    }
    MosaicImage::new(w, h, data, black_level, white_level)
}
