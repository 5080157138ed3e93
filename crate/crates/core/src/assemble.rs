//! Volume assembly from fitted slab transforms, and atlas label projection.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{index_to_norm, Affine3, Point3};
use crate::image::{is_sentinel, CoordMap2D, Image2D, LabelImage, Mask};
use crate::recon::ReconResult;
use crate::volume::{SampleMode, Volume3D, VolumeKind};

/// Output sampling grid in normalized atlas units.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Per-axis `[min, max]` of the covered region.
    pub extent: [[f64; 2]; 3],
    pub background: f64,
}

impl OutputGrid {
    /// Grid covering `[-1, 1]³`.
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        Self {
            dims,
            spacing,
            extent: [[-1.0, 1.0]; 3],
            background: 0.0,
        }
    }

    pub fn matching(vol: &Volume3D) -> Self {
        Self::new(vol.dims(), vol.spacing())
    }

    pub fn voxel_center(&self, idx: [usize; 3]) -> Point3 {
        std::array::from_fn(|a| {
            let [lo, hi] = self.extent[a];
            lo + (index_to_norm(idx[a], self.dims[a]) + 1.0) * 0.5 * (hi - lo)
        })
    }
}

/// Median spacing between consecutive distinct plane coordinates; `None`
/// for fewer than two planes.
pub fn median_plane_spacing(planes: &[f64]) -> Option<f64> {
    let mut p = planes.to_vec();
    p.sort_by(f64::total_cmp);
    let mut gaps: Vec<f64> = p.windows(2).map(|w| w[1] - w[0]).filter(|g| *g > 0.0).collect();
    if gaps.is_empty() {
        return None;
    }
    gaps.sort_by(f64::total_cmp);
    let n = gaps.len();
    Some(if n % 2 == 1 {
        gaps[n / 2]
    } else {
        0.5 * (gaps[n / 2 - 1] + gaps[n / 2])
    })
}

/// Default slab thickness in canonical units.
pub fn default_thickness(planes: &[f64], grid: &OutputGrid) -> f64 {
    median_plane_spacing(planes).unwrap_or(2.0 / grid.dims[1] as f64)
}

/// Slab that owns canonical point `c`, with its in-plane position. The
/// nearest plane within `thickness / 2` wins; ties go to the lower index.
fn owner(inverses: &[Affine3], c: Point3, half: f64) -> Option<(usize, [f64; 2], f64)> {
    let mut best: Option<(usize, [f64; 2], f64)> = None;
    for (i, inv) in inverses.iter().enumerate() {
        let p = inv.apply(c);
        let d = p[1].abs();
        if d <= half && p[0].abs() <= 1.0 && p[2].abs() <= 1.0 && best.is_none_or(|b| d < b.2) {
            best = Some((i, [p[0], p[2]], d));
        }
    }
    best
}

/// Pull every output voxel from the slab whose plane is nearest under the
/// inverse composite transforms. Intensity images are sampled bilinearly;
/// label images (nearest mode) by nearest neighbour.
pub fn build_volume_from(
    images: &[Image2D],
    composites: &[Affine3],
    grid: &OutputGrid,
    thickness: f64,
    mode: SampleMode,
) -> Result<Volume3D> {
    if images.len() != composites.len() {
        return Err(Error::DimMismatch(format!(
            "{} images for {} transforms",
            images.len(),
            composites.len()
        )));
    }
    let inverses: Vec<Affine3> = composites.iter().map(Affine3::inverse).collect::<Result<_>>()?;
    let half = 0.5 * thickness;
    let [nx, ny, nz] = grid.dims;
    let layers: Vec<Vec<f64>> = (0..nz)
        .into_par_iter()
        .map(|z| {
            let mut out = Vec::with_capacity(nx * ny);
            for y in 0..ny {
                for x in 0..nx {
                    let c = grid.voxel_center([x, y, z]);
                    let v = match owner(&inverses, c, half) {
                        Some((i, uv, _)) => {
                            let img = &images[i];
                            match mode {
                                SampleMode::Trilinear => img.bilinear_norm(uv),
                                SampleMode::Nearest => {
                                    let [px, py] = img.norm_to_pixel(uv);
                                    img.nearest_px(px, py).copied().unwrap_or(grid.background)
                                }
                            }
                        }
                        None => grid.background,
                    };
                    out.push(v);
                }
            }
            out
        })
        .collect();
    let kind = match mode {
        SampleMode::Trilinear => VolumeKind::Intensity,
        SampleMode::Nearest => VolumeKind::Label,
    };
    Volume3D::new(grid.dims, grid.spacing, kind, layers.concat())
}

/// Assemble slab images with the fitted transforms. `thickness` defaults to
/// the median plane spacing.
pub fn build_volume(
    images: &[Image2D],
    result: &ReconResult,
    grid: &OutputGrid,
    thickness: Option<f64>,
) -> Result<Volume3D> {
    let planes: Vec<f64> = result.per_slab.iter().map(|a| a.plane_coord).collect();
    let t = thickness.unwrap_or_else(|| default_thickness(&planes, grid));
    build_volume_from(images, &result.composite, grid, t, SampleMode::Trilinear)
}

/// Index of the slab each voxel was taken from, for checking ownership.
pub fn owners(composites: &[Affine3], grid: &OutputGrid, thickness: f64) -> Result<Vec<Option<usize>>> {
    let inverses: Vec<Affine3> = composites.iter().map(Affine3::inverse).collect::<Result<_>>()?;
    let [nx, ny, nz] = grid.dims;
    let mut out = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                out.push(owner(&inverses, grid.voxel_center([x, y, z]), 0.5 * thickness).map(|o| o.0));
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour atlas label at every foreground pixel's predicted
/// coordinate. Background pixels and coordinates outside `[-1, 1]³` get 0.
pub fn project_labels(coords: &CoordMap2D, mask: &Mask, atlas: &Volume3D) -> Result<LabelImage> {
    if atlas.kind() != VolumeKind::Label {
        return Err(Error::ModeMismatch);
    }
    if !coords.same_dims(mask) {
        return Err(Error::DimMismatch("coordinate map vs mask".into()));
    }
    let data = coords
        .data
        .iter()
        .zip(&mask.data)
        .map(|(c, &m)| {
            let inside = c.iter().all(|v| (-1.0..=1.0).contains(v));
            if m && !is_sentinel(c) && inside {
                atlas.sample_nearest(*c)[0] as u32
            } else {
                0
            }
        })
        .collect();
    LabelImage::from_vec(coords.width, coords.height, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Affine2;

    #[test]
    fn single_slab_identity_embeds_one_layer() {
        let n = 8;
        let grid = OutputGrid::new([n; 3], [1.0; 3]);
        let img = Image2D::from_fn(n, n, |i, j| 1.0 + (i + n * j) as f64);
        let layer = 5;
        let plane = index_to_norm(layer, n);
        let comp = Affine2::identity(plane).embed();
        let vol = build_volume_from(&[img.clone()], &[comp], &grid, 2.0 / n as f64 * 0.999, SampleMode::Trilinear).unwrap();
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let want = if y == layer { *img.get(x, z) } else { 0.0 };
                    assert_eq!(vol.get([x, y, z]), want);
                }
            }
        }
    }

    #[test]
    fn ties_go_to_lower_index() {
        let n = 4;
        let grid = OutputGrid::new([n; 3], [1.0; 3]);
        // Layer 1 sits at -0.25, exactly midway between the two planes.
        assert_eq!(index_to_norm(1, n), -0.25);
        let a = Affine2::identity(-0.5).embed();
        let b = Affine2::identity(0.0).embed();
        let own = owners(&[a, b], &grid, 1.0).unwrap();
        let idx = |x: usize, y: usize, z: usize| x + n * (y + n * z);
        assert_eq!(own[idx(0, 1, 0)], Some(0));
        let own = owners(&[b, a], &grid, 1.0).unwrap();
        assert_eq!(own[idx(0, 1, 0)], Some(0));
    }

    #[test]
    fn assigned_voxels_lie_within_half_thickness() {
        let n = 12;
        let grid = OutputGrid::new([n; 3], [1.0; 3]);
        let comps: Vec<Affine3> = (0..4)
            .map(|k| {
                let rot = crate::geometry::rotation_xyz_deg([5.0, -3.0, 8.0]);
                Affine3::from_linear(rot).compose(&Affine2::identity(-0.6 + 0.4 * k as f64).embed())
            })
            .collect();
        let t = 0.4;
        let own = owners(&comps, &grid, t).unwrap();
        let mut i = 0;
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    if let Some(k) = own[i] {
                        let p = comps[k].inverse().unwrap().apply(grid.voxel_center([x, y, z]));
                        assert!(p[1].abs() <= t / 2.0);
                    }
                    i += 1;
                }
            }
        }
    }

    #[test]
    fn identity_stack_conserves_foreground() {
        // Four slabs, two layers each, identity transforms.
        let n = 8;
        let grid = OutputGrid::new([n; 3], [1.0; 3]);
        let planes: Vec<f64> = (0..4).map(|k| -1.0 + (2 * k + 1) as f64 * 0.25).collect();
        let images: Vec<Image2D> = (0..4)
            .map(|k| Image2D::from_fn(n, n, |i, j| if (i + j + k) % 3 == 0 { 1.0 } else { 0.0 }))
            .collect();
        let comps: Vec<Affine3> = planes.iter().map(|&c| Affine2::identity(c).embed()).collect();
        let t = median_plane_spacing(&planes).unwrap();
        let vol = build_volume_from(&images, &comps, &grid, t, SampleMode::Nearest).unwrap();
        let fg: usize = images.iter().map(|im| im.data.iter().filter(|&&v| v != 0.0).count()).sum();
        assert_eq!(vol.foreground_count(), fg * 2);
    }

    #[test]
    fn rebuild_is_bit_identical() {
        let n = 10;
        let grid = OutputGrid::new([n; 3], [1.0; 3]);
        let img = Image2D::from_fn(n, n, |i, j| (i * j) as f64 * 0.1);
        let comp = Affine3::from_linear(crate::geometry::rotation_xyz_deg([10.0, 5.0, -7.0]));
        let a = build_volume_from(&[img.clone()], &[comp], &grid, 0.5, SampleMode::Trilinear).unwrap();
        let b = build_volume_from(&[img], &[comp], &grid, 0.5, SampleMode::Trilinear).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn singular_transform_rejected() {
        let grid = OutputGrid::new([4; 3], [1.0; 3]);
        let comp = Affine3::from_linear(nalgebra::Matrix3::zeros());
        assert!(matches!(
            build_volume_from(&[Image2D::filled(4, 4, 1.0)], &[comp], &grid, 0.5, SampleMode::Trilinear),
            Err(Error::SingularTransform { .. })
        ));
    }

    #[test]
    fn project_uniform_and_outside() {
        let n = 6;
        let atlas = Volume3D::from_fn([n; 3], [1.0; 3], VolumeKind::Label, |[x, y, z]| {
            [if (x, y, z) == (2, 3, 4) { 7.0 } else { 1.0 }, 0.0, 0.0]
        })
        .unwrap();
        let c = [index_to_norm(2, n), index_to_norm(3, n), index_to_norm(4, n)];
        let mask = Mask::from_fn(3, 2, |i, _| i != 0);
        let coords = CoordMap2D::filled(3, 2, c);
        let l = project_labels(&coords, &mask, &atlas).unwrap();
        assert_eq!(l.data, vec![0, 7, 7, 0, 7, 7]);
        let out = CoordMap2D::filled(3, 2, [1.5, 0.0, 0.0]);
        let l = project_labels(&out, &mask, &atlas).unwrap();
        assert!(l.data.iter().all(|&v| v == 0));
    }
}
