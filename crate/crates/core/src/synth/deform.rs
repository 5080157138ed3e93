use super::SynthConfig;
use crate::field::{smooth_random_field, Lattice};
use crate::image::{CoordMap2D, Image2D, LabelImage, SENTINEL};
use crate::rng::Rng;

/// Sampled in-plane deformation of one slab.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformRecord {
    pub sigma: f64,
    /// Displacement lattice in pixels, channels (dx, dy). `None` when no
    /// deformation was applied.
    pub lattice: Option<Lattice>,
}

impl DeformRecord {
    pub fn none() -> Self {
        Self { sigma: 0.0, lattice: None }
    }

    /// Full-resolution displacement field for a slab of `dims`.
    pub fn displacement(&self, dims: (usize, usize)) -> Option<[Image2D; 2]> {
        let lat = self.lattice.as_ref()?;
        let mut f = lat.upsample(dims).into_iter();
        Some([f.next()?, f.next()?])
    }
}

/// Inverse warp: output pixel `p` pulls from `p + d(p)`. Labels are sampled
/// nearest, coordinates bilinearly under the validity rule.
pub fn apply_displacement(labels: &LabelImage, coords: &CoordMap2D, d: &[Image2D; 2]) -> (LabelImage, CoordMap2D) {
    let (w, h) = labels.dims();
    let mut out_l = LabelImage::filled(w, h, 0);
    let mut out_c = CoordMap2D::background(w, h);
    for j in 0..h {
        for i in 0..w {
            let x = i as f64 + d[0].get(i, j);
            let y = j as f64 + d[1].get(i, j);
            let lab = labels.nearest_px(x, y).copied().unwrap_or(0);
            if lab != 0 {
                out_l.set(i, j, lab);
                out_c.set(i, j, coords.sample_px(x, y));
            }
        }
    }
    (out_l, out_c)
}

/// Smooth random in-plane deformation. `sigma ~ U(0, sigma_max)`, lattice
/// displacements `~ N(0, sigma^2)` pixels on `deform_grid`.
pub fn deform_slab(
    labels: &LabelImage,
    coords: &CoordMap2D,
    cfg: &SynthConfig,
    rng: &mut Rng,
) -> (LabelImage, CoordMap2D, DeformRecord) {
    let (w, h) = labels.dims();
    if cfg.sigma_max == 0.0 || w < 2 || h < 2 {
        return (labels.clone(), coords.clone(), DeformRecord::none());
    }
    let sigma = rng.uniform(0.0, cfg.sigma_max);
    let grid = (cfg.deform_grid.0.min(w), cfg.deform_grid.1.min(h));
    let (lattice, fields) = smooth_random_field((w, h), grid, 2, rng, |r| r.normal(0.0, sigma));
    let d = [fields[0].clone(), fields[1].clone()];
    let (l, c) = apply_displacement(labels, coords, &d);
    debug_assert!(c.data.iter().zip(&l.data).all(|(c, &l)| (l == 0) == (*c == SENTINEL)));
    (
        l,
        c,
        DeformRecord {
            sigma,
            lattice: Some(lattice),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(w: usize, h: usize) -> (LabelImage, CoordMap2D) {
        let l = LabelImage::from_fn(w, h, |i, j| {
            let dx = i as f64 - w as f64 / 2.0;
            let dy = j as f64 - h as f64 / 2.0;
            if dx * dx + dy * dy < (w.min(h) as f64 / 3.0).powi(2) {
                1 + (i / 5) as u32 % 3
            } else {
                0
            }
        });
        let c = CoordMap2D::from_fn(w, h, |i, j| {
            if *l.get(i, j) != 0 {
                [i as f64 * 0.01, j as f64 * 0.02, 0.3]
            } else {
                SENTINEL
            }
        });
        (l, c)
    }

    #[test]
    fn zero_sigma_max_is_identity() {
        let (l, c) = disk(40, 30);
        let mut cfg = SynthConfig::default();
        cfg.sigma_max = 0.0;
        let (l2, c2, rec) = deform_slab(&l, &c, &cfg, &mut Rng::new(1));
        assert_eq!((l2, c2), (l, c));
        assert_eq!(rec, DeformRecord::none());
    }

    #[test]
    fn constant_displacement_shifts_image() {
        let (l, c) = disk(40, 30);
        let d = [Image2D::filled(40, 30, 3.0), Image2D::filled(40, 30, -2.0)];
        let (l2, c2) = apply_displacement(&l, &c, &d);
        for j in 2..30 {
            for i in 0..37 {
                assert_eq!(l2.get(i, j), l.get(i + 3, j - 2));
                assert_eq!(c2.get(i, j), c.get(i + 3, j - 2));
            }
        }
    }

    #[test]
    fn default_lattice_magnitudes_bounded() {
        let (l, c) = disk(64, 64);
        let cfg = SynthConfig::default();
        let mut rng = Rng::new(42);
        for _ in 0..200 {
            let (_, _, rec) = deform_slab(&l, &c, &cfg, &mut rng);
            assert!(rec.sigma <= 4.0);
            let lat = rec.lattice.unwrap();
            assert!(lat.channels.iter().flatten().all(|v| v.abs() <= 24.0));
        }
    }

    #[test]
    fn lattice_std_within_sigma_max() {
        let (l, c) = disk(64, 64);
        let cfg = SynthConfig::default();
        let mut rng = Rng::new(8);
        let mut sum2 = 0.0;
        let mut n = 0usize;
        for _ in 0..200 {
            let (_, _, rec) = deform_slab(&l, &c, &cfg, &mut rng);
            for v in rec.lattice.unwrap().channels.iter().flatten() {
                sum2 += v * v;
                n += 1;
            }
        }
        // E[d^2] = E[sigma^2] = sigma_max^2 / 3 for sigma ~ U(0, sigma_max).
        let rms = (sum2 / n as f64).sqrt();
        assert!(rms <= 4.0);
        assert!((rms - 4.0 / 3f64.sqrt()).abs() < 0.25, "rms {rms}");
    }

    #[test]
    fn mask_and_coords_stay_consistent() {
        let (l, c) = disk(50, 40);
        let cfg = SynthConfig::default();
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let (l2, c2, _) = deform_slab(&l, &c, &cfg, &mut rng);
            for (lab, co) in l2.data.iter().zip(&c2.data) {
                assert_eq!(*lab == 0, *co == SENTINEL);
            }
        }
    }
}
