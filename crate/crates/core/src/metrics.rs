//! Evaluation measures: masked coordinate errors, Dice, 3D SSIM, structure
//! volumes and Pearson correlation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::image::{CoordMap2D, Mask};
use crate::volume::{Volume3D, VolumeKind};

fn masked_err(pred: &CoordMap2D, gt: &CoordMap2D, mask: &Mask, f: impl Fn(f64) -> f64) -> Result<f64> {
    if !pred.same_dims(gt) || !pred.same_dims(mask) {
        return Err(Error::DimMismatch("prediction, ground truth and mask differ in size".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, g), &m) in pred.data.iter().zip(&gt.data).zip(&mask.data) {
        if m {
            sum += (0..3).map(|c| f(p[c] - g[c])).sum::<f64>();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Mean over mask pixels of the L1 error summed over channels.
pub fn masked_mae(pred: &CoordMap2D, gt: &CoordMap2D, mask: &Mask) -> Result<f64> {
    masked_err(pred, gt, mask, f64::abs)
}

/// Mean over mask pixels of the squared error summed over channels.
pub fn masked_mse(pred: &CoordMap2D, gt: &CoordMap2D, mask: &Mask) -> Result<f64> {
    masked_err(pred, gt, mask, |d| d * d)
}

/// `2|A ∩ B| / (|A| + |B|)` for one label; 1 when both are empty.
pub fn dice<T: PartialEq + Copy>(a: &[T], b: &[T], label: T) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch(format!("{} vs {} elements", a.len(), b.len())));
    }
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let (ia, ib) = (x == label, y == label);
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    pub window: usize,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            k1: 0.01,
            k2: 0.03,
            window: 7,
        }
    }
}

/// Summed-volume table with a zero border, `(nx+1)(ny+1)(nz+1)` entries.
fn summed_volume(dims: [usize; 3], f: impl Fn(usize) -> f64) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let (sx, sy) = (nx + 1, (nx + 1) * (ny + 1));
    let mut t = vec![0.0; sy * (nz + 1)];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let v = f(x + nx * (y + ny * z));
                let i = (x + 1) + sx * (y + 1) + sy * (z + 1);
                t[i] = v + t[i - 1] + t[i - sx] + t[i - sy] - t[i - 1 - sx] - t[i - 1 - sy] - t[i - sx - sy]
                    + t[i - 1 - sx - sy];
            }
        }
    }
    t
}

fn box_sum(t: &[f64], dims: [usize; 3], lo: [usize; 3], w: [usize; 3]) -> f64 {
    let (sx, sy) = (dims[0] + 1, (dims[0] + 1) * (dims[1] + 1));
    let at = |x: usize, y: usize, z: usize| t[x + sx * y + sy * z];
    let [x0, y0, z0] = lo;
    let [x1, y1, z1] = [x0 + w[0], y0 + w[1], z0 + w[2]];
    at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) + at(x0, y0, z1) + at(x0, y1, z0)
        + at(x1, y0, z0)
        - at(x0, y0, z0)
}

/// Data range shared by both volumes; 1 for constant inputs.
pub fn ssim_data_range(x: &Volume3D, y: &Volume3D) -> f64 {
    let (lo, hi) = x
        .data()
        .iter()
        .chain(y.data())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}

/// Mean local SSIM over all window positions fully inside the volume, with a
/// uniform cubic window (clipped to the volume size) and sample covariances.
pub fn ssim3d(x: &Volume3D, y: &Volume3D, params: SsimParams) -> Result<f64> {
    if x.dims() != y.dims() {
        return Err(Error::DimMismatch(format!("{:?} vs {:?}", x.dims(), y.dims())));
    }
    if x.channels() != 1 || y.channels() != 1 || x.kind() == VolumeKind::Coordinates {
        return Err(Error::ModeMismatch);
    }
    let dims = x.dims();
    let l = ssim_data_range(x, y);
    let c1 = (params.k1 * l).powi(2);
    let c2 = (params.k2 * l).powi(2);
    let w: [usize; 3] = std::array::from_fn(|a| params.window.min(dims[a]).max(1));
    let np = (w[0] * w[1] * w[2]) as f64;
    let cov_norm = if np > 1.0 { np / (np - 1.0) } else { 1.0 };
    let (xd, yd) = (x.data(), y.data());
    let sx = summed_volume(dims, |i| xd[i]);
    let sy = summed_volume(dims, |i| yd[i]);
    let sxx = summed_volume(dims, |i| xd[i] * xd[i]);
    let syy = summed_volume(dims, |i| yd[i] * yd[i]);
    let sxy = summed_volume(dims, |i| xd[i] * yd[i]);
    let mut total = 0.0;
    let mut count = 0usize;
    for z in 0..=dims[2] - w[2] {
        for yy in 0..=dims[1] - w[1] {
            for xx in 0..=dims[0] - w[0] {
                let lo = [xx, yy, z];
                let mx = box_sum(&sx, dims, lo, w) / np;
                let my = box_sum(&sy, dims, lo, w) / np;
                let vx = cov_norm * (box_sum(&sxx, dims, lo, w) / np - mx * mx);
                let vy = cov_norm * (box_sum(&syy, dims, lo, w) / np - my * my);
                let vxy = cov_norm * (box_sum(&sxy, dims, lo, w) / np - mx * my);
                total += ((2.0 * mx * my + c1) * (2.0 * vxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Voxelwise mean squared difference.
pub fn volume_mse(x: &Volume3D, y: &Volume3D) -> Result<f64> {
    if x.dims() != y.dims() || x.channels() != y.channels() {
        return Err(Error::DimMismatch(format!("{:?} vs {:?}", x.dims(), y.dims())));
    }
    let n = x.data().len() as f64;
    Ok(x.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n)
}

/// Volume per label in mm³.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StructureVolumes(pub BTreeMap<u32, f64>);

impl StructureVolumes {
    pub fn from_labels(vol: &Volume3D) -> Result<Self> {
        if vol.kind() != VolumeKind::Label {
            return Err(Error::ModeMismatch);
        }
        let voxel: f64 = vol.spacing().iter().product();
        let mut counts = BTreeMap::new();
        for &v in vol.data() {
            if v != 0.0 {
                *counts.entry(v as u32).or_insert(0usize) += 1;
            }
        }
        Ok(Self(counts.into_iter().map(|(l, c)| (l, c as f64 * voxel)).collect()))
    }

    pub fn get(&self, label: u32) -> f64 {
        self.0.get(&label).copied().unwrap_or(0.0)
    }
}

/// `|a - b| / b × 100` for one label.
pub fn relative_volume_diff(a: &StructureVolumes, b: &StructureVolumes, label: u32) -> Result<f64> {
    let vb = b.get(label);
    if vb <= 0.0 {
        return Err(Error::ZeroReferenceVolume(label));
    }
    Ok((a.get(label) - vb).abs() / vb * 100.0)
}

/// Sample Pearson correlation.
pub fn pearson(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch(format!("{} vs {} values", u.len(), v.len())));
    }
    if u.len() < 2 {
        return Err(Error::InsufficientPoints("pearson needs at least 2 values".into()));
    }
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let (mut suv, mut suu, mut svv) = (0.0, 0.0, 0.0);
    for (&a, &b) in u.iter().zip(v) {
        let (da, db) = (a - mu, b - mv);
        suv += da * db;
        suu += da * da;
        svv += db * db;
    }
    if suu == 0.0 || svv == 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok((suv / (suu.sqrt() * svv.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::SENTINEL;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn random_map(rng: &mut Rng, n: usize) -> CoordMap2D {
        CoordMap2D::from_fn(n, n, |_, _| std::array::from_fn(|_| rng.uniform(-1.0, 1.0)))
    }

    #[test]
    fn mae_mse_basics() {
        let mut rng = Rng::new(1);
        let gt = random_map(&mut rng, 16);
        let mask = Mask::from_fn(16, 16, |i, j| (i * j) % 3 != 0);
        assert_eq!(masked_mae(&gt, &gt, &mask).unwrap(), 0.0);
        assert_eq!(masked_mse(&gt, &gt, &mask).unwrap(), 0.0);
        let shifted = gt.map(|c| [c[0] + 0.25, c[1] + 0.25, c[2] + 0.25]);
        assert!((masked_mae(&shifted, &gt, &mask).unwrap() - 0.75).abs() < 1e-12);
        let off = gt.map(|c| [c[0] + 3.0, c[1], c[2]]);
        assert!((masked_mse(&off, &gt, &mask).unwrap() - 9.0).abs() < 1e-9);
        assert!(matches!(masked_mae(&gt, &gt, &Mask::filled(16, 16, false)), Err(Error::EmptyMask)));
    }

    #[test]
    fn mae_mse_match_double_loop() {
        let mut rng = Rng::new(2);
        let a = random_map(&mut rng, 16);
        let b = random_map(&mut rng, 16);
        let mask = Mask::from_fn(16, 16, |i, j| (i + 2 * j) % 5 != 1);
        let (mut l1, mut l2, mut n) = (0.0, 0.0, 0.0);
        for j in 0..16 {
            for i in 0..16 {
                if *mask.get(i, j) {
                    for c in 0..3 {
                        let d = a.get(i, j)[c] - b.get(i, j)[c];
                        l1 += d.abs();
                        l2 += d * d;
                    }
                    n += 1.0;
                }
            }
        }
        assert!((masked_mae(&a, &b, &mask).unwrap() - l1 / n).abs() < 1e-12);
        assert!((masked_mse(&a, &b, &mask).unwrap() - l2 / n).abs() < 1e-12);
        // Cauchy-Schwarz: mean L1 over 3 channels <= sqrt(3 * mean squared).
        assert!(masked_mae(&a, &b, &mask).unwrap() <= (3.0 * masked_mse(&a, &b, &mask).unwrap()).sqrt());
        let _ = SENTINEL;
    }

    #[test]
    fn dice_cases() {
        let a = [1u32, 1, 0, 0];
        assert_eq!(dice(&a, &a, 1).unwrap(), 1.0);
        assert_eq!(dice(&[1u32, 1, 0, 0], &[0, 0, 1, 1], 1).unwrap(), 0.0);
        assert_eq!(dice(&[0u32; 4], &[0u32; 4], 1).unwrap(), 1.0);
        // 4x4 toy: left half vs middle two columns, 8 pixels each, 4 shared.
        let left: Vec<u32> = (0..16).map(|i| (i % 4 < 2) as u32).collect();
        let mid: Vec<u32> = (0..16).map(|i| (1..3).contains(&(i % 4)) as u32).collect();
        assert_eq!(dice(&left, &mid, 1).unwrap(), 0.5);
    }

    fn random_vol(rng: &mut Rng, n: usize) -> Volume3D {
        Volume3D::from_fn([n; 3], [1.0; 3], VolumeKind::Intensity, |_| [rng.uniform(0.0, 1.0), 0.0, 0.0]).unwrap()
    }

    /// Direct transcription of the windowed SSIM formula.
    fn ssim_reference(x: &Volume3D, y: &Volume3D) -> f64 {
        let [nx, ny, nz] = x.dims();
        let w = 7;
        let l = ssim_data_range(x, y);
        let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
        let mut total = 0.0;
        let mut count = 0.0;
        for z0 in 0..=nz - w {
            for y0 in 0..=ny - w {
                for x0 in 0..=nx - w {
                    let mut xs = Vec::new();
                    let mut ys = Vec::new();
                    for z in z0..z0 + w {
                        for yy in y0..y0 + w {
                            for xx in x0..x0 + w {
                                xs.push(x.get([xx, yy, z]));
                                ys.push(y.get([xx, yy, z]));
                            }
                        }
                    }
                    let n = xs.len() as f64;
                    let mx = xs.iter().sum::<f64>() / n;
                    let my = ys.iter().sum::<f64>() / n;
                    let vx = xs.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / (n - 1.0);
                    let vy = ys.iter().map(|v| (v - my).powi(2)).sum::<f64>() / (n - 1.0);
                    let cxy = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0);
                    total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    count += 1.0;
                }
            }
        }
        total / count
    }

    #[test]
    fn ssim_matches_reference() {
        let mut rng = Rng::new(3);
        let a = random_vol(&mut rng, 8);
        let b = random_vol(&mut rng, 8);
        let got = ssim3d(&a, &b, SsimParams::default()).unwrap();
        assert!((got - ssim_reference(&a, &b)).abs() < 1e-10);
    }

    #[test]
    fn ssim_identity_and_inverse() {
        let mut rng = Rng::new(4);
        let a = random_vol(&mut rng, 10);
        assert_eq!(ssim3d(&a, &a, SsimParams::default()).unwrap(), 1.0);
        let bin = Volume3D::from_fn([12; 3], [1.0; 3], VolumeKind::Intensity, |[x, y, z]| {
            [((x / 3 + y / 2 + z) % 2) as f64, 0.0, 0.0]
        })
        .unwrap();
        let inv = Volume3D::new([12; 3], [1.0; 3], VolumeKind::Intensity, bin.data().iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim3d(&bin, &inv, SsimParams::default()).unwrap() < 0.1);
    }

    #[test]
    fn ssim_dim_mismatch() {
        let a = Volume3D::zeros([8; 3], [1.0; 3], VolumeKind::Intensity);
        let b = Volume3D::zeros([8, 8, 9], [1.0; 3], VolumeKind::Intensity);
        assert!(matches!(ssim3d(&a, &b, SsimParams::default()), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn volumes_and_rvd() {
        let v = Volume3D::from_fn([4, 4, 4], [0.5, 1.0, 2.0], VolumeKind::Label, |[x, _, _]| [(x % 3) as f64, 0.0, 0.0]).unwrap();
        let sv = StructureVolumes::from_labels(&v).unwrap();
        assert_eq!(sv.get(1), 16.0);
        assert_eq!(sv.get(2), 16.0);
        assert_eq!(relative_volume_diff(&sv, &sv, 1).unwrap(), 0.0);
        let a = StructureVolumes([(1, 110.0)].into_iter().collect());
        let b = StructureVolumes([(1, 100.0)].into_iter().collect());
        assert!((relative_volume_diff(&a, &b, 1).unwrap() - 10.0).abs() < 1e-12);
        let a2 = StructureVolumes([(1, 220.0)].into_iter().collect());
        let b2 = StructureVolumes([(1, 200.0)].into_iter().collect());
        assert!((relative_volume_diff(&a2, &b2, 1).unwrap() - relative_volume_diff(&a, &b, 1).unwrap()).abs() < 1e-12);
        assert!(matches!(relative_volume_diff(&a, &b, 5), Err(Error::ZeroReferenceVolume(5))));
    }

    #[test]
    fn pearson_cases() {
        let u = [1.0, 2.0, 4.0, 7.0];
        assert_eq!(pearson(&u, &u).unwrap(), 1.0);
        assert_eq!(pearson(&u, &u.map(|x| -x)).unwrap(), -1.0);
        assert!((pearson(&u, &u.map(|x| 2.0 * x + 3.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(pearson(&u, &[1.0; 4]), Err(Error::ConstantInput)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn symmetric_metrics(seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let a: Vec<u32> = (0..64).map(|_| rng.index(3) as u32).collect();
            let b: Vec<u32> = (0..64).map(|_| rng.index(3) as u32).collect();
            prop_assert_eq!(dice(&a, &b, 1).unwrap(), dice(&b, &a, 1).unwrap());
            let x = random_vol(&mut rng, 8);
            let y = random_vol(&mut rng, 8);
            let s1 = ssim3d(&x, &y, SsimParams::default()).unwrap();
            let s2 = ssim3d(&y, &x, SsimParams::default()).unwrap();
            prop_assert!((s1 - s2).abs() < 1e-12);
        }

        #[test]
        fn pearson_affine_invariance(seed in any::<u64>(), a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0], b in -3.0f64..3.0) {
            let mut rng = Rng::new(seed);
            let u: Vec<f64> = (0..20).map(|_| rng.normal(0.0, 1.0)).collect();
            let v: Vec<f64> = (0..20).map(|_| rng.normal(0.0, 1.0)).collect();
            let w: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            let r = pearson(&u, &v).unwrap();
            let r2 = pearson(&u, &w).unwrap();
            prop_assert!((r2 - a.signum() * r).abs() < 1e-12);
        }
    }
}
