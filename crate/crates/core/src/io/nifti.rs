//! Import of uncompressed single-file NIfTI-1 volumes (`.nii`).
//!
//! Supported: datatypes u8 (2), i16 (4) and f32 (16); 3D volumes, or 5D with
//! a 3-vector intent dimension for coordinate fields. Either byte order.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::volume::{Volume3D, VolumeKind};

const HEADER_SIZE: usize = 348;

struct Reader<'a> {
    bytes: &'a [u8],
    little: bool,
}

impl Reader<'_> {
    fn i16(&self, off: usize) -> i16 {
        let b = [self.bytes[off], self.bytes[off + 1]];
        if self.little {
            i16::from_le_bytes(b)
        } else {
            i16::from_be_bytes(b)
        }
    }

    fn f32(&self, off: usize) -> f32 {
        let b: [u8; 4] = self.bytes[off..off + 4].try_into().unwrap();
        if self.little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    }

    fn f32s<const N: usize>(&self, off: usize) -> [f64; N] {
        std::array::from_fn(|i| self.f32(off + 4 * i) as f64)
    }
}

fn unsupported(msg: impl Into<String>) -> Error {
    Error::UnsupportedNifti(msg.into())
}

/// Parse a NIfTI-1 file held in memory.
pub fn parse_nifti(bytes: &[u8]) -> Result<Volume3D> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        return Err(unsupported("gzip-compressed NIfTI is not supported"));
    }
    if bytes.len() < HEADER_SIZE {
        return Err(unsupported("file shorter than a NIfTI-1 header"));
    }
    let le = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let be = i32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let little = match (le, be) {
        (348, _) => true,
        (_, 348) => false,
        (540, _) | (_, 540) => return Err(unsupported("NIfTI-2 is not supported")),
        _ => return Err(unsupported(format!("sizeof_hdr {le} is not 348"))),
    };
    let r = Reader { bytes, little };
    match &bytes[344..348] {
        b"n+1\0" => {}
        b"ni1\0" => return Err(unsupported("two-file (.hdr/.img) NIfTI is not supported")),
        _ => return Err(unsupported("bad NIfTI-1 magic")),
    }
    let dim: [i64; 8] = std::array::from_fn(|i| r.i16(40 + 2 * i) as i64);
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(unsupported(format!("dim[0] = {ndim}")));
    }
    let size = |i: usize| if (i as i64) <= ndim { dim[i].max(1) } else { 1 };
    if dim[1..=ndim as usize].iter().any(|&d| d < 1) {
        return Err(unsupported(format!("non-positive dimension in {dim:?}")));
    }
    if size(4) != 1 || size(6) != 1 || size(7) != 1 {
        return Err(unsupported("only single time point volumes are supported"));
    }
    let comps = size(5);
    if comps != 1 && comps != 3 {
        return Err(unsupported(format!("{comps} vector components; expected 1 or 3")));
    }
    let datatype = r.i16(70);
    let (bpv, kind) = match datatype {
        2 => (1, VolumeKind::Label),
        4 => (2, VolumeKind::Label),
        16 => (4, VolumeKind::Intensity),
        other => return Err(unsupported(format!("datatype {other}"))),
    };
    let kind = if comps == 3 { VolumeKind::Coordinates } else { kind };
    let dims = [size(1) as usize, size(2) as usize, size(3) as usize];
    let pixdim = r.f32s::<8>(76);
    let spacing = [pixdim[1], pixdim[2], pixdim[3]].map(|s| if s > 0.0 && s.is_finite() { s } else { 1.0 });
    let vox_offset = r.f32(108);
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(unsupported(format!("vox_offset {vox_offset}")));
    }
    let start = vox_offset as usize;
    let n = dims.iter().product::<usize>();
    let total = n * comps as usize;
    let end = start + total * bpv;
    if bytes.len() < end {
        return Err(Error::LengthMismatch {
            expected: end,
            found: bytes.len(),
        });
    }
    let body = &bytes[start..end];
    let raw: Vec<f64> = match datatype {
        2 => body.iter().map(|&b| b as f64).collect(),
        4 => (0..total).map(|i| r.i16(start + 2 * i) as f64).collect(),
        _ => (0..total).map(|i| r.f32(start + 4 * i) as f64).collect(),
    };
    let slope = r.f32(112) as f64;
    let inter = r.f32(116) as f64;
    let scaled = slope != 0.0 && slope.is_finite() && (slope != 1.0 || inter != 0.0);
    let kind = if scaled && kind == VolumeKind::Label { VolumeKind::Intensity } else { kind };
    let value = |v: f64| if scaled { v * slope + inter } else { v };
    let data: Vec<f64> = if comps == 3 {
        // Components are the slowest axis on disk; interleave them per voxel.
        (0..n).flat_map(|v| (0..3).map(move |c| c * n + v)).map(|i| value(raw[i])).collect()
    } else {
        raw.into_iter().map(value).collect()
    };
    let mut vol = Volume3D::new(dims, spacing, kind, data).map_err(|e| unsupported(e.to_string()))?;
    vol.affine = Some(header_affine(&r, &pixdim));
    Ok(vol)
}

/// Index-to-world affine from sform, else qform, else the pixdim diagonal.
fn header_affine(r: &Reader, pixdim: &[f64; 8]) -> [[f64; 4]; 4] {
    let qform_code = r.i16(252);
    let sform_code = r.i16(254);
    let mut a = [[0.0; 4]; 4];
    a[3][3] = 1.0;
    if sform_code > 0 {
        for (row, off) in [280, 296, 312].into_iter().enumerate() {
            a[row] = r.f32s::<4>(off);
        }
    } else if qform_code > 0 {
        let [b, c, d] = r.f32s::<3>(256);
        let qa = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let rot = Matrix3::new(
            qa * qa + b * b - c * c - d * d,
            2.0 * (b * c - qa * d),
            2.0 * (b * d + qa * c),
            2.0 * (b * c + qa * d),
            qa * qa + c * c - b * b - d * d,
            2.0 * (c * d - qa * b),
            2.0 * (b * d - qa * c),
            2.0 * (c * d + qa * b),
            qa * qa + d * d - c * c - b * b,
        );
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let scale = Matrix3::from_diagonal(&Vector3::new(pixdim[1], pixdim[2], qfac * pixdim[3]));
        let m = rot * scale;
        let t = r.f32s::<3>(268);
        for row in 0..3 {
            for col in 0..3 {
                a[row][col] = m[(row, col)];
            }
            a[row][3] = t[row];
        }
    } else {
        for i in 0..3 {
            a[i][i] = pixdim[i + 1];
        }
    }
    a
}

pub fn import_nifti(path: &Path) -> Result<Volume3D> {
    let name = path.to_string_lossy();
    if name.ends_with(".gz") {
        return Err(unsupported("gzip-compressed NIfTI is not supported"));
    }
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    parse_nifti(&fs::read(path)?)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Minimal NIfTI-1 writer for tests.
    pub fn build(dims: &[i16], datatype: i16, pixdim: [f32; 3], body: &[u8], little: bool) -> Vec<u8> {
        let mut h = vec![0u8; 352];
        let put16 = |h: &mut Vec<u8>, off: usize, v: i16| {
            let b = if little { v.to_le_bytes() } else { v.to_be_bytes() };
            h[off..off + 2].copy_from_slice(&b);
        };
        let put32 = |h: &mut Vec<u8>, off: usize, v: [u8; 4]| h[off..off + 4].copy_from_slice(&v);
        let i32b = |v: i32| if little { v.to_le_bytes() } else { v.to_be_bytes() };
        let f32b = |v: f32| if little { v.to_le_bytes() } else { v.to_be_bytes() };
        put32(&mut h, 0, i32b(348));
        put16(&mut h, 40, dims.len() as i16);
        for (i, &d) in dims.iter().enumerate() {
            put16(&mut h, 42 + 2 * i, d);
        }
        put16(&mut h, 70, datatype);
        put32(&mut h, 76, f32b(1.0));
        for (i, &p) in pixdim.iter().enumerate() {
            put32(&mut h, 80 + 4 * i, f32b(p));
        }
        put32(&mut h, 108, f32b(352.0));
        h[344..348].copy_from_slice(b"n+1\0");
        h.extend_from_slice(body);
        h
    }

    #[test]
    fn hand_built_u8_volume() {
        let body: Vec<u8> = (1..=8).collect();
        let bytes = build(&[2, 2, 2], 2, [0.5, 1.0, 2.0], &body, true);
        let v = parse_nifti(&bytes).unwrap();
        assert_eq!(v.dims(), [2, 2, 2]);
        assert_eq!(v.spacing(), [0.5, 1.0, 2.0]);
        assert_eq!(v.kind(), VolumeKind::Label);
        assert_eq!(v.get([1, 0, 0]), 2.0);
        assert_eq!(v.get([0, 1, 0]), 3.0);
        assert_eq!(v.get([1, 1, 1]), 8.0);
        let a = v.affine.unwrap();
        assert_eq!((a[0][0], a[1][1], a[2][2]), (0.5, 1.0, 2.0));
    }

    #[test]
    fn big_endian_i16() {
        let vals: [i16; 3] = [-5, 300, 7];
        let body: Vec<u8> = vals.iter().flat_map(|v| v.to_be_bytes()).collect();
        let bytes = build(&[3, 1, 1], 4, [1.0; 3], &body, false);
        let v = parse_nifti(&bytes);
        // Negative labels are not valid label values.
        assert!(v.is_err());
        let vals: [i16; 3] = [5, 300, 7];
        let body: Vec<u8> = vals.iter().flat_map(|v| v.to_be_bytes()).collect();
        let v = parse_nifti(&build(&[3, 1, 1], 4, [1.0; 3], &body, false)).unwrap();
        assert_eq!(v.data(), &[5.0, 300.0, 7.0]);
    }

    #[test]
    fn vector_volume_is_interleaved() {
        let vals: Vec<f32> = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let body: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
        let bytes = build(&[2, 1, 1, 1, 3], 16, [1.0; 3], &body, true);
        let v = parse_nifti(&bytes).unwrap();
        assert_eq!(v.kind(), VolumeKind::Coordinates);
        assert_eq!(v.get_vec3([0, 0, 0]), [0.1f32 as f64, 0.3f32 as f64, 0.5f32 as f64]);
        assert_eq!(v.get_vec3([1, 0, 0]), [0.2f32 as f64, 0.4f32 as f64, 0.6f32 as f64]);
    }

    #[test]
    fn unsupported_inputs() {
        let f64_file = build(&[1, 1, 1], 64, [1.0; 3], &[0; 8], true);
        assert!(matches!(parse_nifti(&f64_file), Err(Error::UnsupportedNifti(_))));
        assert!(matches!(parse_nifti(&[0x1f, 0x8b, 0, 0]), Err(Error::UnsupportedNifti(_))));
        let mut nifti2 = vec![0u8; 600];
        nifti2[0..4].copy_from_slice(&540i32.to_le_bytes());
        assert!(matches!(parse_nifti(&nifti2), Err(Error::UnsupportedNifti(_))));
        let mut pair = build(&[1, 1, 1], 2, [1.0; 3], &[0], true);
        pair[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(parse_nifti(&pair), Err(Error::UnsupportedNifti(_))));
    }

    #[test]
    fn truncated_data_rejected() {
        let bytes = build(&[2, 2, 2], 2, [1.0; 3], &[1, 2, 3], true);
        assert!(matches!(parse_nifti(&bytes), Err(Error::LengthMismatch { .. })));
    }
}
