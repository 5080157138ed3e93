use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::SynthConfig;
use crate::error::{Error, Result};
use crate::geometry::{rotation_xyz_deg, shear, Affine3};
use crate::image::SENTINEL;
use crate::rng::Rng;
use crate::volume::{Volume3D, VolumeKind};

/// Sampled pose parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseParams {
    /// Euler angles in degrees (x, y, z).
    pub angles_deg: [f64; 3],
    pub scales: [f64; 3],
    /// Shear factors (xy, xz, yz).
    pub shears: [f64; 3],
}

impl PoseParams {
    pub fn identity() -> Self {
        Self {
            angles_deg: [0.0; 3],
            scales: [1.0; 3],
            shears: [0.0; 3],
        }
    }

    /// `rotation ∘ shear ∘ scale`, no translation.
    pub fn to_affine(&self) -> Affine3 {
        let lin = rotation_xyz_deg(self.angles_deg)
            * shear(self.shears)
            * Matrix3::from_diagonal(&Vector3::from(self.scales));
        Affine3::from_linear(lin)
    }
}

/// Draw a random pose: angles, then scales, then shears, each axis in order.
pub fn sample_pose(cfg: &SynthConfig, rng: &mut Rng) -> (Affine3, PoseParams) {
    let angles_deg = std::array::from_fn(|_| rng.uniform(-cfg.alpha_r, cfg.alpha_r));
    let scales = std::array::from_fn(|_| rng.uniform(1.0 - cfg.beta_s, 1.0 + cfg.beta_s));
    let shears = std::array::from_fn(|_| rng.uniform(-cfg.gamma_h, cfg.gamma_h));
    let params = PoseParams {
        angles_deg,
        scales,
        shears,
    };
    (params.to_affine(), params)
}

/// Pull both volumes through `pose`: `L'(x) = L(A x)` (nearest) and
/// `Y'(x) = Y(A x)` (trilinear). Voxels where `L'` is background carry the
/// coordinate sentinel.
pub fn warp_pair(labels: &Volume3D, coords: &Volume3D, pose: &Affine3) -> Result<(Volume3D, Volume3D)> {
    if labels.kind() != VolumeKind::Label || coords.kind() != VolumeKind::Coordinates {
        return Err(Error::DimMismatch("expected a label volume and a coordinate volume".into()));
    }
    if labels.dims() != coords.dims() {
        return Err(Error::DimMismatch(format!(
            "label dims {:?} != coordinate dims {:?}",
            labels.dims(),
            coords.dims()
        )));
    }
    let [nx, ny, nz] = labels.dims();
    let plane = nx * ny;
    let slabs: Vec<(Vec<f64>, Vec<f64>)> = (0..nz)
        .into_par_iter()
        .map(|z| {
            let mut l = Vec::with_capacity(plane);
            let mut y3 = Vec::with_capacity(plane * 3);
            for y in 0..ny {
                for x in 0..nx {
                    let p = pose.apply(labels.voxel_norm([x, y, z]));
                    let lab = labels.sample_nearest(p)[0];
                    l.push(lab);
                    let c = if lab != 0.0 {
                        coords.sample_trilinear(p)
                    } else {
                        SENTINEL
                    };
                    y3.extend_from_slice(&c);
                }
            }
            (l, y3)
        })
        .collect();
    let mut ldata = Vec::with_capacity(plane * nz);
    let mut ydata = Vec::with_capacity(plane * nz * 3);
    for (l, y3) in slabs {
        ldata.extend(l);
        ydata.extend(y3);
    }
    let lp = Volume3D::new(labels.dims(), labels.spacing(), VolumeKind::Label, ldata)?;
    let yp = Volume3D::new(coords.dims(), coords.spacing(), VolumeKind::Coordinates, ydata)?;
    Ok((lp, yp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::index_to_norm;

    fn blob(dims: [usize; 3]) -> (Volume3D, Volume3D) {
        let l = Volume3D::from_fn(dims, [1.0; 3], VolumeKind::Label, |[x, y, z]| {
            let inside = (2..dims[0] - 2).contains(&x) && (2..dims[1] - 3).contains(&y) && (3..dims[2] - 2).contains(&z);
            [if inside { 1.0 + (x % 3) as f64 } else { 0.0 }, 0.0, 0.0]
        })
        .unwrap();
        (l, Volume3D::identity_coords(dims, [1.0; 3]))
    }

    #[test]
    fn zero_bounds_give_identity() {
        let mut cfg = SynthConfig::default();
        cfg.alpha_r = 0.0;
        cfg.beta_s = 0.0;
        cfg.gamma_h = 0.0;
        let (a, _) = sample_pose(&cfg, &mut Rng::new(5));
        assert_eq!(a, Affine3::identity());
    }

    #[test]
    fn default_bounds_respected() {
        let cfg = SynthConfig::default();
        let mut rng = Rng::new(9);
        for _ in 0..1000 {
            let (_, p) = sample_pose(&cfg, &mut rng);
            assert!(p.angles_deg.iter().all(|a| a.abs() <= 15.0));
            assert!(p.scales.iter().all(|s| (0.8..=1.2).contains(s)));
            assert!(p.shears.iter().all(|h| h.abs() <= 0.2));
        }
    }

    #[test]
    fn scale_mean_is_one() {
        let cfg = SynthConfig::default();
        let mut rng = Rng::new(123);
        let n = 10_000;
        let mut sum = [0.0; 3];
        for _ in 0..n {
            let (_, p) = sample_pose(&cfg, &mut rng);
            for a in 0..3 {
                sum[a] += p.scales[a];
            }
        }
        for s in sum {
            assert!((s / n as f64 - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn identity_warp_is_lossless() {
        let (l, y) = blob([12, 10, 11]);
        let (lp, yp) = warp_pair(&l, &y, &Affine3::identity()).unwrap();
        assert_eq!(lp, l);
        for z in 0..11 {
            for yy in 0..10 {
                for x in 0..12 {
                    let want = if l.get([x, yy, z]) != 0.0 { y.get_vec3([x, yy, z]) } else { SENTINEL };
                    assert_eq!(yp.get_vec3([x, yy, z]), want);
                }
            }
        }
    }

    #[test]
    fn one_voxel_translation_shifts_content() {
        let dims = [12, 10, 11];
        let (l, y) = blob(dims);
        // Pull from x + one voxel: L'(i) = L(i + 1).
        let t = Affine3::from_translation([2.0 / dims[0] as f64, 0.0, 0.0]);
        let (lp, _) = warp_pair(&l, &y, &t).unwrap();
        for z in 0..dims[2] {
            for yy in 0..dims[1] {
                for x in 0..dims[0] - 1 {
                    assert_eq!(lp.get([x, yy, z]), l.get([x + 1, yy, z]));
                }
            }
        }
    }

    #[test]
    fn foreground_count_follows_inverse_determinant() {
        let n = 40;
        let l = Volume3D::from_fn([n; 3], [1.0; 3], VolumeKind::Label, |i| {
            let q: [f64; 3] = std::array::from_fn(|a| index_to_norm(i[a], n));
            let r = (q[0] / 0.5).powi(2) + (q[1] / 0.45).powi(2) + (q[2] / 0.4).powi(2);
            [if r <= 1.0 { 1.0 } else { 0.0 }, 0.0, 0.0]
        })
        .unwrap();
        let y = Volume3D::identity_coords([n; 3], [1.0; 3]);
        let cfg = SynthConfig::default();
        let mut rng = Rng::new(77);
        for _ in 0..5 {
            let (a, _) = sample_pose(&cfg, &mut rng);
            let (lp, _) = warp_pair(&l, &y, &a).unwrap();
            let ratio = lp.foreground_count() as f64 / l.foreground_count() as f64;
            let expected = 1.0 / a.det();
            assert!((ratio / expected - 1.0).abs() < 0.05, "ratio {ratio} vs {expected}");
            assert!((1.0 / 1.728 - 0.05..=1.0 / 0.512 + 0.05).contains(&ratio));
        }
    }

    #[test]
    fn mismatched_dims_rejected() {
        let (l, _) = blob([8, 8, 8]);
        let y = Volume3D::identity_coords([8, 8, 9], [1.0; 3]);
        assert!(matches!(warp_pair(&l, &y, &Affine3::identity()), Err(Error::DimMismatch(_))));
    }
}
