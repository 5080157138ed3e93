//! Binary PGM (`P5`, 8 or 16 bit) and PPM (`P6`, 8 bit) images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image2D, Mask};

/// Integer grayscale raster as stored in a PGM file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, maxval: u16, data: Vec<u16>) -> Result<Self> {
        if maxval == 0 {
            return Err(Error::CorruptFile("PGM maxval must be >= 1".into()));
        }
        if data.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                found: data.len(),
            });
        }
        if data.iter().any(|&v| v > maxval) {
            return Err(Error::CorruptFile("PGM sample exceeds maxval".into()));
        }
        Ok(Self {
            width,
            height,
            maxval,
            data,
        })
    }

    /// Quantize `img / scale` to `0..=maxval`. Values are clamped to `[0, scale]`.
    pub fn quantize(img: &Image2D, scale: f64, maxval: u16) -> Self {
        let m = maxval as f64;
        let data = img
            .data
            .iter()
            .map(|&v| {
                let q = if scale > 0.0 { (v / scale).clamp(0.0, 1.0) * m } else { 0.0 };
                q.round() as u16
            })
            .collect();
        Self {
            width: img.width,
            height: img.height,
            maxval,
            data,
        }
    }

    pub fn to_image(&self, scale: f64) -> Image2D {
        let m = self.maxval as f64;
        Image2D::from_vec(
            self.width,
            self.height,
            self.data.iter().map(|&v| v as f64 / m * scale).collect(),
        )
        .expect("consistent raster")
    }

    pub fn from_mask(mask: &Mask) -> Self {
        Self {
            width: mask.width,
            height: mask.height,
            maxval: 255,
            data: mask.data.iter().map(|&m| if m { 255 } else { 0 }).collect(),
        }
    }

    /// Interpret as a mask; every sample must be 0 or maxval.
    pub fn to_mask(&self) -> Result<Mask> {
        if let Some(v) = self.data.iter().find(|&&v| v != 0 && v != self.maxval) {
            return Err(Error::CorruptFile(format!(
                "mask sample {v} is neither 0 nor {}",
                self.maxval
            )));
        }
        Mask::from_vec(self.width, self.height, self.data.iter().map(|&v| v != 0).collect())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval < 256 {
            out.extend(self.data.iter().map(|&v| v as u8));
        } else {
            for &v in &self.data {
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (magic, fields, body) = parse_pnm_header(bytes)?;
        if magic != *b"P5" {
            return Err(Error::CorruptFile("not a binary PGM (P5)".into()));
        }
        let [w, h, maxval] = fields;
        if maxval == 0 || maxval > 65535 {
            return Err(Error::CorruptFile(format!("PGM maxval {maxval}")));
        }
        let bps = if maxval < 256 { 1 } else { 2 };
        let n = w * h;
        if body.len() != n * bps {
            return Err(Error::LengthMismatch {
                expected: n * bps,
                found: body.len(),
            });
        }
        let data = if bps == 1 {
            body.iter().map(|&b| b as u16).collect()
        } else {
            body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        };
        Self::new(w, h, maxval as u16, data)
    }
}

fn parse_pnm_header(bytes: &[u8]) -> Result<([u8; 2], [usize; 3], &[u8])> {
    if bytes.len() < 2 {
        return Err(Error::CorruptFile("truncated PNM header".into()));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::CorruptFile("malformed PNM header".into()));
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::CorruptFile("PNM header number out of range".into()))?;
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::CorruptFile("missing whitespace after PNM header".into()));
    }
    Ok((magic, fields, &bytes[pos + 1..]))
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    fs::write(path, img.encode())?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    GrayImage::decode(&fs::read(path)?)
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    write_pgm(path, &GrayImage::from_mask(mask))
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    read_pgm(path)?.to_mask()
}

/// 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().flatten());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (magic, [w, h, maxval], body) = parse_pnm_header(bytes)?;
        if magic != *b"P6" || maxval != 255 {
            return Err(Error::CorruptFile("only 8-bit binary PPM (P6) is supported".into()));
        }
        if body.len() != w * h * 3 {
            return Err(Error::LengthMismatch {
                expected: w * h * 3,
                found: body.len(),
            });
        }
        Ok(Self {
            width: w,
            height: h,
            data: body.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
    }
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    fs::write(path, img.encode())?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    RgbImage::decode(&fs::read(path)?)
}
