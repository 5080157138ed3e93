//! Raw payload plus key/value sidecar header.
//!
//! `X.hdr` is a text document, `X.raw` holds little-endian samples with x
//! fastest, then y, then z, channels interleaved per voxel.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::CoordMap2D;
use crate::kv::KvDoc;
use crate::volume::{Volume3D, VolumeKind};

pub const RAW_FORMAT: &str = "slabrecon-raw-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U8,
    I16,
    F32,
}

impl Dtype {
    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::U8 => "u8",
            Dtype::I16 => "i16",
            Dtype::F32 => "f32",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "u8" => Ok(Dtype::U8),
            "i16" => Ok(Dtype::I16),
            "f32" => Ok(Dtype::F32),
            other => Err(Error::UnsupportedDtype(other.to_string())),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::I16 => 2,
            Dtype::F32 => 4,
        }
    }

    /// Narrowest type that stores `vol` without loss of its integer labels;
    /// f32 for everything else.
    pub fn for_volume(vol: &Volume3D) -> Self {
        if vol.kind() == VolumeKind::Label {
            let max = vol.data().iter().copied().fold(0.0, f64::max);
            if max <= u8::MAX as f64 {
                return Dtype::U8;
            }
            if max <= i16::MAX as f64 {
                return Dtype::I16;
            }
        }
        Dtype::F32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub channels: usize,
    pub dtype: Dtype,
    pub kind: VolumeKind,
    pub affine: Option<[[f64; 4]; 4]>,
}

const HEADER_KEYS: &[&str] = &["format", "dims", "spacing", "channels", "dtype", "kind", "byte_order", "affine"];

impl VolumeHeader {
    pub fn payload_len(&self) -> usize {
        self.dims.iter().product::<usize>() * self.channels * self.dtype.size()
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::new();
        d.push("format", RAW_FORMAT)
            .push_list("dims", &self.dims)
            .push_list("spacing", &self.spacing)
            .push("channels", self.channels)
            .push("dtype", self.dtype.as_str())
            .push("kind", self.kind.as_str())
            .push("byte_order", "little");
        if let Some(a) = &self.affine {
            d.push_list("affine", &a.concat());
        }
        d
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        doc.reject_unknown(HEADER_KEYS)?;
        let format = doc.require("format")?;
        if format != RAW_FORMAT {
            return Err(Error::CorruptHeader(format!("unknown format `{format}`")));
        }
        let bo = doc.require("byte_order")?;
        if bo != "little" {
            return Err(Error::CorruptHeader(format!("unsupported byte order `{bo}`")));
        }
        let dims = doc
            .parse_array::<usize, 3>("dims")?
            .ok_or_else(|| Error::CorruptHeader("missing key `dims`".into()))?;
        let spacing = doc
            .parse_array::<f64, 3>("spacing")?
            .ok_or_else(|| Error::CorruptHeader("missing key `spacing`".into()))?;
        let channels = doc
            .parse_value::<usize>("channels")?
            .ok_or_else(|| Error::CorruptHeader("missing key `channels`".into()))?;
        let dtype = Dtype::parse(doc.require("dtype")?)?;
        let kind_s = doc.require("kind")?;
        let kind = VolumeKind::parse(kind_s).ok_or_else(|| Error::CorruptHeader(format!("unknown kind `{kind_s}`")))?;
        let want_channels = if kind == VolumeKind::Coordinates { 3 } else { 1 };
        if channels != want_channels {
            return Err(Error::CorruptHeader(format!("{} volume with {channels} channels", kind.as_str())));
        }
        if dims.contains(&0) {
            return Err(Error::CorruptHeader(format!("dims {dims:?}")));
        }
        let affine = doc
            .parse_array::<f64, 16>("affine")?
            .map(|a| std::array::from_fn(|r| std::array::from_fn(|c| a[4 * r + c])));
        Ok(Self {
            dims,
            spacing,
            channels,
            dtype,
            kind,
            affine,
        })
    }
}

/// Header and payload paths for a volume path with or without extension.
pub fn volume_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("hdr"), path.with_extension("raw"))
}

pub fn encode(data: &[f64], dtype: Dtype) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(data.len() * dtype.size());
    for &v in data {
        match dtype {
            Dtype::U8 => {
                if !(v.fract() == 0.0 && (0.0..=255.0).contains(&v)) {
                    return Err(Error::UnsupportedDtype(format!("value {v} does not fit u8")));
                }
                out.push(v as u8);
            }
            Dtype::I16 => {
                if !(v.fract() == 0.0 && (i16::MIN as f64..=i16::MAX as f64).contains(&v)) {
                    return Err(Error::UnsupportedDtype(format!("value {v} does not fit i16")));
                }
                out.extend_from_slice(&(v as i16).to_le_bytes());
            }
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], dtype: Dtype) -> Vec<f64> {
    match dtype {
        Dtype::U8 => bytes.iter().map(|&b| b as f64).collect(),
        Dtype::I16 => bytes
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
    }
}

pub fn write_volume_as(path: &Path, vol: &Volume3D, dtype: Dtype) -> Result<()> {
    let header = VolumeHeader {
        dims: vol.dims(),
        spacing: vol.spacing(),
        channels: vol.channels(),
        dtype,
        kind: vol.kind(),
        affine: vol.affine,
    };
    let payload = encode(vol.data(), dtype)?;
    let (hp, rp) = volume_paths(path);
    fs::write(&rp, payload)?;
    fs::write(&hp, header.to_kv().to_string())?;
    Ok(())
}

pub fn write_volume(path: &Path, vol: &Volume3D) -> Result<()> {
    write_volume_as(path, vol, Dtype::for_volume(vol))
}

pub fn read_header(path: &Path) -> Result<VolumeHeader> {
    let (hp, _) = volume_paths(path);
    if !hp.exists() {
        return Err(Error::FileNotFound(hp));
    }
    VolumeHeader::from_kv(&KvDoc::parse(&fs::read_to_string(&hp)?)?)
}

pub fn read_volume(path: &Path) -> Result<Volume3D> {
    let header = read_header(path)?;
    let (_, rp) = volume_paths(path);
    if !rp.exists() {
        return Err(Error::FileNotFound(rp));
    }
    let bytes = fs::read(&rp)?;
    if bytes.len() != header.payload_len() {
        return Err(Error::LengthMismatch {
            expected: header.payload_len(),
            found: bytes.len(),
        });
    }
    let mut vol = Volume3D::new(header.dims, header.spacing, header.kind, decode(&bytes, header.dtype))
        .map_err(|e| Error::CorruptFile(format!("{}: {e}", rp.display())))?;
    vol.affine = header.affine;
    Ok(vol)
}

/// Coordinate maps are stored as `(w, h, 1)` three-channel f32 volumes.
pub fn write_coordmap(path: &Path, map: &CoordMap2D) -> Result<()> {
    let (w, h) = map.dims();
    let data = map.data.iter().flat_map(|c| c.iter().copied()).collect();
    let vol = Volume3D::new([w, h, 1], [1.0; 3], VolumeKind::Coordinates, data)?;
    write_volume_as(path, &vol, Dtype::F32)
}

pub fn read_coordmap(path: &Path) -> Result<CoordMap2D> {
    let vol = read_volume(path)?;
    let [w, h, d] = vol.dims();
    if d != 1 || vol.kind() != VolumeKind::Coordinates {
        return Err(Error::CorruptFile(format!(
            "{}: expected a (w, h, 1) coordinate volume",
            path.display()
        )));
    }
    let data = vol.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    CoordMap2D::from_vec(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::SENTINEL;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn single_voxel_payload_is_four_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one");
        let v = Volume3D::new([1, 1, 1], [1.0; 3], VolumeKind::Intensity, vec![0.5]).unwrap();
        write_volume(&p, &v).unwrap();
        assert_eq!(fs::read(dir.path().join("one.raw")).unwrap().len(), 4);
        assert_eq!(read_volume(&p).unwrap(), v);
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.hdr");
        let v = Volume3D::new([2, 2, 2], [1.0; 3], VolumeKind::Intensity, vec![1.0; 8]).unwrap();
        write_volume(&p, &v).unwrap();
        let rp = dir.path().join("v.raw");
        let bytes = fs::read(&rp).unwrap();
        fs::write(&rp, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(
            read_volume(&p),
            Err(Error::LengthMismatch { expected: 32, found: 31 })
        ));
    }

    #[test]
    fn unknown_header_key_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v");
        let v = Volume3D::new([1, 1, 1], [1.0; 3], VolumeKind::Intensity, vec![1.0]).unwrap();
        write_volume(&p, &v).unwrap();
        let hp = dir.path().join("v.hdr");
        let text = fs::read_to_string(&hp).unwrap() + "colour = blue\n";
        fs::write(&hp, text).unwrap();
        match read_volume(&p) {
            Err(Error::UnknownKey(k)) => assert_eq!(k, "colour"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_dtype_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v");
        let v = Volume3D::new([1, 1, 1], [1.0; 3], VolumeKind::Intensity, vec![1.0]).unwrap();
        write_volume(&p, &v).unwrap();
        let hp = dir.path().join("v.hdr");
        let text = fs::read_to_string(&hp).unwrap().replace("f32", "f64");
        fs::write(&hp, text).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::UnsupportedDtype(_))));
    }

    #[test]
    fn header_key_order_irrelevant() {
        let h = VolumeHeader {
            dims: [3, 4, 5],
            spacing: [0.5, 1.0, 2.0],
            channels: 1,
            dtype: Dtype::I16,
            kind: VolumeKind::Label,
            affine: Some([[1.0, 0.0, 0.0, 3.0], [0.0, 2.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.5], [0.0, 0.0, 0.0, 1.0]]),
        };
        let text = h.to_kv().to_string();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.reverse();
        let back = VolumeHeader::from_kv(&KvDoc::parse(&lines.join("\n")).unwrap()).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn coordmap_round_trip_keeps_sentinel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.hdr");
        let m = CoordMap2D::from_fn(5, 3, |i, j| if i == j { SENTINEL } else { [0.25 * i as f64, -0.5, j as f64 / 8.0] });
        write_coordmap(&p, &m).unwrap();
        assert_eq!(read_coordmap(&p).unwrap(), m);
    }

    fn f32_values(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| rng.normal(0.0, 10.0) as f32 as f64).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn random_volumes_round_trip(nx in 1usize..6, ny in 1usize..6, nz in 1usize..6, seed in any::<u64>(), which in 0usize..4) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("v");
            let n = nx * ny * nz;
            let mut rng = Rng::new(seed);
            let (vol, dtype) = match which {
                0 => (Volume3D::new([nx, ny, nz], [1.0, 2.0, 0.5], VolumeKind::Intensity, f32_values(n, seed)).unwrap(), Dtype::F32),
                1 => (Volume3D::new([nx, ny, nz], [1.0; 3], VolumeKind::Label, (0..n).map(|_| rng.index(256) as f64).collect()).unwrap(), Dtype::U8),
                2 => (Volume3D::new([nx, ny, nz], [1.0; 3], VolumeKind::Label, (0..n).map(|_| rng.index(30000) as f64).collect()).unwrap(), Dtype::I16),
                _ => (Volume3D::new([nx, ny, nz], [3.0; 3], VolumeKind::Coordinates, f32_values(3 * n, seed)).unwrap(), Dtype::F32),
            };
            write_volume_as(&p, &vol, dtype).unwrap();
            let back = read_volume(&p).unwrap();
            prop_assert_eq!(&back, &vol);
            let bits: Vec<u64> = back.data().iter().map(|v| v.to_bits()).collect();
            let want: Vec<u64> = vol.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits, want);
        }
    }
}
