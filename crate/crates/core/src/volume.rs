//! 3D scalar, label and coordinate grids.
//!
//! Data is stored row-major with x fastest and channels interleaved per voxel:
//! `index = ((z * ny + y) * nx + x) * channels + c`.

use crate::error::{Error, Result};
use crate::geometry::{index_to_norm, norm_to_index, Point3};
use crate::image::{is_sentinel, SENTINEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VolumeKind {
    Intensity,
    Label,
    Coordinates,
}

impl VolumeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VolumeKind::Intensity => "intensity",
            VolumeKind::Label => "label",
            VolumeKind::Coordinates => "coordinates",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "intensity" => Some(VolumeKind::Intensity),
            "label" => Some(VolumeKind::Label),
            "coordinates" => Some(VolumeKind::Coordinates),
            _ => None,
        }
    }
}

/// Removes round-off from normalized-to-index conversion so that voxel
/// centers sample exactly.
#[inline]
fn snap(c: f64) -> f64 {
    let r = c.round();
    if (c - r).abs() < 1e-12 {
        r
    } else {
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Trilinear,
    Nearest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    spacing: [f64; 3],
    channels: usize,
    kind: VolumeKind,
    data: Vec<f64>,
    /// Optional index-to-world affine, row-major 4x4.
    pub affine: Option<[[f64; 4]; 4]>,
}

impl Volume3D {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        kind: VolumeKind,
        data: Vec<f64>,
    ) -> Result<Self> {
        let channels = if kind == VolumeKind::Coordinates { 3 } else { 1 };
        if dims.contains(&0) {
            return Err(Error::DimMismatch(format!("dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(format!("spacing must be > 0, got {spacing:?}")));
        }
        let expected = dims[0] * dims[1] * dims[2] * channels;
        if data.len() != expected {
            return Err(Error::DimMismatch(format!(
                "volume {dims:?} x{channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        match kind {
            VolumeKind::Label if data.iter().any(|v| v.fract() != 0.0 || *v < 0.0) => {
                return Err(Error::InvalidConfig("label volume holds non-integer values".into()))
            }
            VolumeKind::Coordinates if data.iter().any(|v| !v.is_finite()) => {
                return Err(Error::InvalidConfig("coordinate volume holds non-finite values".into()))
            }
            _ => {}
        }
        Ok(Self {
            dims,
            spacing,
            channels,
            kind,
            data,
            affine: None,
        })
    }

    pub fn zeros(dims: [usize; 3], spacing: [f64; 3], kind: VolumeKind) -> Self {
        let channels = if kind == VolumeKind::Coordinates { 3 } else { 1 };
        let fill = if kind == VolumeKind::Coordinates { -2.0 } else { 0.0 };
        Self::new(
            dims,
            spacing,
            kind,
            vec![fill; dims[0] * dims[1] * dims[2] * channels],
        )
        .expect("valid zero volume")
    }

    /// Fill a volume from a function of voxel index.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        kind: VolumeKind,
        mut f: impl FnMut([usize; 3]) -> [f64; 3],
    ) -> Result<Self> {
        let channels = if kind == VolumeKind::Coordinates { 3 } else { 1 };
        let mut data = Vec::with_capacity(dims.iter().product::<usize>() * channels);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let v = f([x, y, z]);
                    data.extend_from_slice(&v[..channels]);
                }
            }
        }
        Self::new(dims, spacing, kind, data)
    }

    /// Identity coordinate field: every voxel holds its own normalized position.
    pub fn identity_coords(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        Self::from_fn(dims, spacing, VolumeKind::Coordinates, |[x, y, z]| {
            [
                index_to_norm(x, dims[0]),
                index_to_norm(y, dims[1]),
                index_to_norm(z, dims[2]),
            ]
        })
        .expect("finite coordinates")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn kind(&self) -> VolumeKind {
        self.kind
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Millimetres per normalized unit along each axis (per-axis normalization
    /// of the grid's bounding box onto `[-1, 1]`).
    pub fn mm_per_unit(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.dims[a] as f64 * self.spacing[a] / 2.0)
    }

    #[inline]
    pub fn offset(&self, [x, y, z]: [usize; 3]) -> usize {
        ((z * self.dims[1] + y) * self.dims[0] + x) * self.channels
    }

    #[inline]
    pub fn get(&self, idx: [usize; 3]) -> f64 {
        self.data[self.offset(idx)]
    }

    #[inline]
    pub fn get_vec3(&self, idx: [usize; 3]) -> [f64; 3] {
        let o = self.offset(idx);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set(&mut self, idx: [usize; 3], value: f64) {
        let o = self.offset(idx);
        self.data[o] = value;
    }

    pub fn set_vec3(&mut self, idx: [usize; 3], value: [f64; 3]) {
        let o = self.offset(idx);
        self.data[o..o + 3].copy_from_slice(&value);
    }

    pub fn voxel_norm(&self, [x, y, z]: [usize; 3]) -> Point3 {
        [
            index_to_norm(x, self.dims[0]),
            index_to_norm(y, self.dims[1]),
            index_to_norm(z, self.dims[2]),
        ]
    }

    pub fn background(&self) -> [f64; 3] {
        match self.kind {
            VolumeKind::Coordinates => SENTINEL,
            _ => [0.0; 3],
        }
    }

    fn inside(p: Point3) -> bool {
        p.iter().all(|c| (-1.0..=1.0).contains(c))
    }

    /// Sample at a normalized point. Returns the first `channels` entries of
    /// the output array; out-of-bounds points yield the background value
    /// (0, or the sentinel for coordinate volumes).
    pub fn sample(&self, p: Point3, mode: SampleMode) -> Result<[f64; 3]> {
        if mode == SampleMode::Trilinear && self.kind == VolumeKind::Label {
            return Err(Error::ModeMismatch);
        }
        Ok(match mode {
            SampleMode::Nearest => self.sample_nearest(p),
            SampleMode::Trilinear => self.sample_trilinear(p),
        })
    }

    pub fn sample_nearest(&self, p: Point3) -> [f64; 3] {
        if !Self::inside(p) {
            return self.background();
        }
        let idx: [usize; 3] = std::array::from_fn(|a| {
            let c = norm_to_index(p[a], self.dims[a]).round();
            c.clamp(0.0, (self.dims[a] - 1) as f64) as usize
        });
        self.read(idx)
    }

    fn read(&self, idx: [usize; 3]) -> [f64; 3] {
        if self.channels == 3 {
            self.get_vec3(idx)
        } else {
            [self.get(idx), 0.0, 0.0]
        }
    }

    /// Trilinear interpolation with edge clamping between the outermost voxel
    /// centers and the domain boundary. For coordinate volumes, neighbours
    /// that contribute non-zero weight must all hold valid coordinates;
    /// otherwise the nearest voxel is returned.
    pub fn sample_trilinear(&self, p: Point3) -> [f64; 3] {
        if !Self::inside(p) {
            return self.background();
        }
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = self.dims[a];
            let c = snap(norm_to_index(p[a], n)).clamp(0.0, (n - 1) as f64);
            let l = (c.floor() as usize).min(n.saturating_sub(2));
            let h = (l + 1).min(n - 1);
            lo[a] = l;
            hi[a] = h;
            frac[a] = if h == l { 0.0 } else { c - l as f64 };
        }
        let mut out = [0.0; 3];
        let coords = self.kind == VolumeKind::Coordinates;
        for corner in 0..8 {
            let pick = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                if pick[a] == 1 {
                    w *= frac[a];
                    idx[a] = hi[a];
                } else {
                    w *= 1.0 - frac[a];
                    idx[a] = lo[a];
                }
            }
            if w == 0.0 {
                continue;
            }
            let v = self.read(idx);
            if coords && is_sentinel(&v) {
                return self.sample_nearest(p);
            }
            for c in 0..self.channels {
                out[c] += w * v[c];
            }
        }
        out
    }

    /// Sorted distinct non-zero labels.
    pub fn label_set(&self) -> Vec<u32> {
        let mut seen = std::collections::BTreeSet::new();
        for &v in &self.data {
            if v != 0.0 {
                seen.insert(v as u32);
            }
        }
        seen.into_iter().collect()
    }

    pub fn foreground_count(&self) -> usize {
        self.data
            .chunks(self.channels)
            .filter(|c| c[0] != 0.0 && !(self.channels == 3 && is_sentinel(&[c[0], c[1], c[2]])))
            .count()
    }

    /// Inclusive voxel bounds of non-zero voxels along `axis`.
    pub fn foreground_extent(&self, axis: usize) -> Option<(usize, usize)> {
        let mut lo = usize::MAX;
        let mut hi = 0;
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    if self.get([x, y, z]) != 0.0 {
                        let c = [x, y, z][axis];
                        lo = lo.min(c);
                        hi = hi.max(c);
                    }
                }
            }
        }
        (lo != usize::MAX).then_some((lo, hi))
    }
}
