use super::SynthConfig;
use crate::error::{Error, Result};
use crate::image::{CoordMap2D, LabelImage};
use crate::volume::Volume3D;

/// Mid-plane cross-section of one slab, before any 2D randomization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSlab {
    pub labels: LabelImage,
    pub coords: CoordMap2D,
    /// 1-based slab index.
    pub k: usize,
    /// Number of slabs in the stack.
    pub count: usize,
    pub s: f64,
    /// Voxel layer (y index) the slab was cut at.
    pub layer: usize,
    /// Continuous mid-plane position in voxel units, before snapping.
    pub mid: f64,
}

/// Normalized slice index `(k - 1) / (K - 1)`; `0.5` for a single slab.
pub fn slice_index(k: usize, count: usize) -> f64 {
    assert!(k >= 1 && k <= count, "slab index {k} outside 1..={count}");
    if count == 1 {
        0.5
    } else {
        (k - 1) as f64 / (count - 1) as f64
    }
}

/// Mid-plane positions (voxel units) of slabs of thickness `t` covering the
/// voxel range `lo..=hi`. The last slab may be thinner.
fn mid_planes(lo: usize, hi: usize, t: f64) -> Vec<f64> {
    let start = lo as f64 - 0.5;
    let end = hi as f64 + 0.5;
    let count = ((end - start) / t - 1e-9).ceil().max(1.0) as usize;
    (0..count)
        .map(|k| {
            let a = start + k as f64 * t;
            let b = (a + t).min(end);
            0.5 * (a + b)
        })
        .collect()
}

/// Snap mid-planes to voxel layers inside `lo..=hi`, keeping them strictly
/// increasing.
fn snap_layers(mids: &[f64], lo: usize, hi: usize) -> Vec<usize> {
    let mut layers: Vec<usize> = mids
        .iter()
        .map(|m| (m.round().max(lo as f64) as usize).min(hi))
        .collect();
    for i in 1..layers.len() {
        if layers[i] <= layers[i - 1] {
            layers[i] = layers[i - 1] + 1;
        }
    }
    let n = layers.len();
    if n > 0 && layers[n - 1] > hi {
        layers[n - 1] = hi;
        for i in (0..n - 1).rev() {
            if layers[i] >= layers[i + 1] {
                layers[i] = layers[i + 1] - 1;
            }
        }
    }
    layers
}

/// Cut the warped pair into coronal slabs along y. Each slab is represented
/// by the voxel layer nearest its mid-plane; image pixel `(i, j)` is voxel
/// `(i, layer, j)`.
pub fn slice_stack(lp: &Volume3D, yp: &Volume3D, cfg: &SynthConfig) -> Result<Vec<RawSlab>> {
    if lp.dims() != yp.dims() {
        return Err(Error::DimMismatch(format!("{:?} vs {:?}", lp.dims(), yp.dims())));
    }
    let (lo, hi) = lp.foreground_extent(1).ok_or(Error::EmptyForeground)?;
    let t = cfg.slab_thickness_mm / lp.spacing()[1];
    if !(t >= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "slab thickness {} mm is thinner than one voxel ({} mm)",
            cfg.slab_thickness_mm,
            lp.spacing()[1]
        )));
    }
    let mids = mid_planes(lo, hi, t);
    let layers = snap_layers(&mids, lo, hi);
    let count = layers.len();
    let [nx, _, nz] = lp.dims();
    Ok(layers
        .iter()
        .zip(&mids)
        .enumerate()
        .map(|(idx, (&layer, &mid))| {
            let labels = LabelImage::from_fn(nx, nz, |i, j| lp.get([i, layer, j]) as u32);
            let coords = CoordMap2D::from_fn(nx, nz, |i, j| yp.get_vec3([i, layer, j]));
            RawSlab {
                labels,
                coords,
                k: idx + 1,
                count,
                s: slice_index(idx + 1, count),
                layer,
                mid,
            }
        })
        .collect())
}
