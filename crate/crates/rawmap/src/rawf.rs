//! RAWF image container: magic "RAWF", little-endian u32 header fields
//! {version=1, width, height, channels}, float32 planar samples, then a
//! u32-length-prefixed UTF-8 JSON metadata blob.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::color::RawImage;
use crate::error::{Error, Result};
use crate::preprocess::MosaicImage;

const MAGIC: &[u8; 4] = b"RAWF";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawfMeta {
    pub camera_id: String,
    pub illuminant_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub black_level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub white_level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cfa: Option<String>,
}

pub fn write<W: Write>(
    mut w: W,
    width: u32,
    height: u32,
    channels: u32,
    data: &[f64],
    meta: &RawfMeta,
) -> Result<()> {
    if data.len() != (width * height * channels) as usize {
        return Err(Error::Shape("RAWF data length mismatch".into()));
    }
    w.write_all(MAGIC)?;
    for v in [VERSION, width, height, channels] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in data {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    let blob = serde_json::to_vec(meta)?;
    w.write_all(&(blob.len() as u32).to_le_bytes())?;
    w.write_all(&blob)?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<(u32, u32, u32, Vec<f64>, RawfMeta)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Data("not a RAWF file (bad magic)".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut next_u32 = |r: &mut R| -> Result<u32> {
        r.read_exact(&mut u32buf)?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let version = next_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported RAWF version {version}")));
    }
    let width = next_u32(&mut r)?;
    let height = next_u32(&mut r)?;
    let channels = next_u32(&mut r)?;
    let n = (width as usize) * (height as usize) * (channels as usize);
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let blob_len = next_u32(&mut r)? as usize;
    let mut blob = vec![0u8; blob_len];
    r.read_exact(&mut blob)?;
    let meta: RawfMeta = serde_json::from_slice(&blob)?;
    Ok((width, height, channels, data, meta))
}

pub fn write_image(path: &Path, img: &RawImage) -> Result<()> {
    let meta = RawfMeta {
        camera_id: img.camera_id.clone(),
        illuminant_id: img.illuminant_id.clone(),
        ..Default::default()
    };
    let f = BufWriter::new(File::create(path)?);
    write(f, img.width as u32, img.height as u32, img.channels as u32, &img.data, &meta)
}

pub fn read_image(path: &Path) -> Result<RawImage> {
    let f = BufReader::new(File::open(path)?);
    let (w, h, c, data, meta) = read(f)?;
    RawImage::new(w as usize, h as usize, c as usize, data, meta.camera_id, meta.illuminant_id)
}

pub fn write_mosaic(path: &Path, m: &MosaicImage, camera_id: &str, illuminant_id: &str) -> Result<()> {
    let meta = RawfMeta {
        camera_id: camera_id.into(),
        illuminant_id: illuminant_id.into(),
        black_level: Some(m.black_level),
        white_level: Some(m.white_level),
        cfa: Some(m.cfa.clone()),
    };
    let f = BufWriter::new(File::create(path)?);
    write(f, m.width as u32, m.height as u32, 1, &m.data, &meta)
}

pub fn read_mosaic(path: &Path) -> Result<(MosaicImage, RawfMeta)> {
    let f = BufReader::new(File::open(path)?);
    let (w, h, c, data, meta) = read(f)?;
    if c != 1 {
        return Err(Error::Data(format!("expected a 1-channel mosaic, got {c} channels")));
    }
    let black = meta.black_level.ok_or_else(|| Error::Data("mosaic missing black_level".into()))?;
    let white = meta.white_level.ok_or_else(|| Error::Data("mosaic missing white_level".into()))?;
    let m = MosaicImage::new(w as usize, h as usize, data, black, white)?;
    Ok((m, meta))
}

/// Single-channel error-map variant (per-pixel angular error in degrees).
pub fn write_error_map(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<()> {
    let meta = RawfMeta::default();
    let f = BufWriter::new(File::create(path)?);
    write(f, width as u32, height as u32, 1, data, &meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let data = vec![0.5f64, 1.0];
        let meta = RawfMeta { camera_id: "c".into(), illuminant_id: "l".into(), ..Default::default() };
        let mut buf = Vec::new();
        write(&mut buf, 2, 1, 1, &data, &meta).unwrap();
        assert_eq!(&buf[0..4], b"RAWF");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 1);
        assert_eq!(f32::from_le_bytes(buf[20..24].try_into().unwrap()), 0.5);
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = b"JUNKxxxxxxxxxxxxxxxxxxxx".to_vec();
        assert!(read(&buf[..]).is_err());
    }

    proptest! {
        /// Write -> read -> write reproduces the byte stream exactly.
        #[test]
        fn roundtrip_bit_identical(
            data in prop::collection::vec(0.0f64..4.0, 1..64),
            w in 1u32..8,
        ) {
            let n = data.len() as u32;
            if n % w != 0 { return Ok(()); }
            let h = n / w;
            let meta = RawfMeta {
                camera_id: "cam".into(),
                illuminant_id: "ill".into(),
                black_level: Some(64.0),
                white_level: Some(1023.0),
                cfa: Some("RGGB".into()),
            };
            let mut buf = Vec::new();
            write(&mut buf, w, h, 1, &data, &meta).unwrap();
            let (rw, rh, rc, rdata, rmeta) = read(&buf[..]).unwrap();
            let mut buf2 = Vec::new();
            write(&mut buf2, rw, rh, rc, &rdata, &rmeta).unwrap();
            prop_assert_eq!(buf, buf2);
        }
    }
}
