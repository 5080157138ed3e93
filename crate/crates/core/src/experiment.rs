//! Phantom-scale experiment protocols: silver-standard reconstruction, the
//! partial-stack comparison and the synthesis ablation table.

use nalgebra::{DMatrix, DVector};

use crate::assemble::{build_volume_from, default_thickness, project_labels, OutputGrid};
use crate::error::{Error, Result};
use crate::geometry::{Affine2, Affine3};
use crate::image::{CoordMap2D, Image2D};
use crate::kv::KvDoc;
use crate::metrics::{dice, masked_mse, ssim3d, volume_mse, SsimParams};
use crate::phantom::{paint, paint_value};
use crate::recon::{reconstruct, ReconConfig, ReconResult, ReconSlab};
use crate::rng::{stream, Rng};
use crate::synth::{generate_case, Preset, Provenance, SlabSample, SynthConfig, SyntheticCase};
use crate::volume::{SampleMode, Volume3D};

/// Reconstruction inputs built from ground-truth coordinate maps.
pub fn silver_inputs(slabs: &[SlabSample]) -> Result<Vec<ReconSlab>> {
    slabs
        .iter()
        .map(|s| {
            Ok(ReconSlab {
                coords: s.coords_gt.clone().ok_or(Error::MissingGroundTruth)?,
                mask: s.mask.clone(),
                weights: None,
                s: s.s,
            })
        })
        .collect()
}

/// Slab label map painted with the fixed lookup table.
pub fn painted_slab(slab: &SlabSample) -> Result<Image2D> {
    let labels = slab.labels.as_ref().ok_or(Error::MissingGroundTruth)?;
    Ok(labels.map(|&l| paint_value(l)))
}

/// Transforms of the unreconstructed stack: each slab laid flat at its
/// nominal plane.
pub fn naive_composites(s_values: &[f64], cfg: &ReconConfig) -> Vec<Affine3> {
    s_values.iter().map(|&s| Affine2::identity(cfg.plane_coord(s)).embed()).collect()
}

fn assemble(images: &[Image2D], composites: &[Affine3], planes: &[f64], grid: &OutputGrid) -> Result<Volume3D> {
    build_volume_from(images, composites, grid, default_thickness(planes, grid), SampleMode::Trilinear)
}

fn result_planes(r: &ReconResult) -> Vec<f64> {
    r.per_slab.iter().map(|a| a.plane_coord).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SilverReport {
    pub slabs: usize,
    pub overall_rms: f64,
    pub iterations: usize,
    pub mse_initial: f64,
    pub ssim_initial: f64,
    pub mse_recon: f64,
    pub ssim_recon: f64,
}

impl SilverReport {
    pub fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::new();
        d.push("slabs", self.slabs)
            .push("overall_rms", self.overall_rms)
            .push("iterations", self.iterations)
            .push("initial.mse", self.mse_initial)
            .push("initial.ssim", self.ssim_initial)
            .push("reffree.mse", self.mse_recon)
            .push("reffree.ssim", self.ssim_recon);
        d
    }

    pub fn to_table(&self) -> String {
        format!(
            "{:<10} {:>12} {:>8}\n{:<10} {:>12.6} {:>8.4}\n{:<10} {:>12.6} {:>8.4}\n",
            "method", "MSE", "SSIM", "Initial", self.mse_initial, self.ssim_initial, "RefFree", self.mse_recon, self.ssim_recon
        )
    }
}

/// Reconstruct a synthetic case from its ground-truth coordinates, assemble
/// the painted slab labels in atlas space and compare with the painted source
/// labels; the flat initial stack is scored the same way.
pub fn silver_standard(
    labels: &Volume3D,
    coords: &Volume3D,
    synth: &SynthConfig,
    recon: &ReconConfig,
    seed: u64,
) -> Result<SilverReport> {
    let case = generate_case(labels, coords, synth, seed)?;
    silver_standard_case(&case, labels, recon)
}

pub fn silver_standard_case(case: &SyntheticCase, atlas_labels: &Volume3D, recon: &ReconConfig) -> Result<SilverReport> {
    let result = reconstruct(&silver_inputs(&case.slabs)?, recon)?;
    let images: Vec<Image2D> = case.slabs.iter().map(painted_slab).collect::<Result<_>>()?;
    let grid = OutputGrid::matching(atlas_labels);
    let reference = paint(atlas_labels);
    let rebuilt = assemble(&images, &result.composite, &result_planes(&result), &grid)?;
    let s: Vec<f64> = case.slabs.iter().map(|x| x.s).collect();
    let naive = naive_composites(&s, recon);
    let planes: Vec<f64> = s.iter().map(|&v| recon.plane_coord(v)).collect();
    let initial = assemble(&images, &naive, &planes, &grid)?;
    Ok(SilverReport {
        slabs: case.slabs.len(),
        overall_rms: result.overall_rms,
        iterations: result.iterations,
        mse_initial: volume_mse(&initial, &reference)?,
        ssim_initial: ssim3d(&initial, &reference, SsimParams::default())?,
        mse_recon: volume_mse(&rebuilt, &reference)?,
        ssim_recon: ssim3d(&rebuilt, &reference, SsimParams::default())?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialReport {
    pub kept: Vec<usize>,
    pub mse_partial: f64,
    pub mse_naive: f64,
}

/// Drop half of the slabs (seeded), reconstruct the rest with their original
/// slice indices and compare against the full reconstruction; the naive
/// stack of the same partial slabs is scored alongside.
pub fn partial_stack(case: &SyntheticCase, atlas_labels: &Volume3D, recon: &ReconConfig, seed: u64) -> Result<PartialReport> {
    let n = case.slabs.len();
    if n < 2 {
        return Err(Error::InsufficientPoints("partial stack needs at least 2 slabs".into()));
    }
    let grid = OutputGrid::matching(atlas_labels);
    let images: Vec<Image2D> = case.slabs.iter().map(painted_slab).collect::<Result<_>>()?;
    let inputs = silver_inputs(&case.slabs)?;
    let full = reconstruct(&inputs, recon)?;
    let full_vol = assemble(&images, &full.composite, &result_planes(&full), &grid)?;

    let mut kept = Rng::new(seed).child(&[stream::SUBSET]).subset(n, n.div_ceil(2));
    kept.sort_unstable();
    let sub_inputs: Vec<ReconSlab> = kept.iter().map(|&i| inputs[i].clone()).collect();
    let sub_images: Vec<Image2D> = kept.iter().map(|&i| images[i].clone()).collect();
    let part = reconstruct(&sub_inputs, recon)?;
    let part_vol = assemble(&sub_images, &part.composite, &result_planes(&part), &grid)?;

    let s: Vec<f64> = kept.iter().map(|&i| case.slabs[i].s).collect();
    let planes: Vec<f64> = s.iter().map(|&v| recon.plane_coord(v)).collect();
    let naive_vol = assemble(&sub_images, &naive_composites(&s, recon), &planes, &grid)?;
    Ok(PartialReport {
        kept,
        mse_partial: volume_mse(&part_vol, &full_vol)?,
        mse_naive: volume_mse(&naive_vol, &full_vol)?,
    })
}

/// Which synthesis components each preset enables: intensity, deformation,
/// pose and crop.
fn component_diffs(base: &Provenance, other: &Provenance) -> [bool; 4] {
    let intensity = base.slabs.iter().zip(&other.slabs).any(|(a, b)| a.intensity != b.intensity || a.gmm != b.gmm);
    let deform = base.slabs.iter().zip(&other.slabs).any(|(a, b)| a.deform != b.deform);
    let pose = base.pose != other.pose;
    let crop = base.slabs.iter().zip(&other.slabs).any(|(a, b)| a.crop != b.crop);
    [intensity, deform, pose, crop]
}

/// Check that a preset differs from Baseline in exactly its toggled
/// components. Returns a description of the first mismatch.
pub fn check_ablation_provenance(base: &Provenance, other: &Provenance, preset: Preset) -> std::result::Result<(), String> {
    let (intensity, deform, pose, crop) = preset.toggles();
    // Posing changes the foreground extent and with it the slab count.
    if !pose && base.slabs.len() != other.slabs.len() {
        return Err(format!("{}: slab count {} vs {}", preset.name(), other.slabs.len(), base.slabs.len()));
    }
    let want = [intensity, deform, pose, crop != crate::synth::CropMode::None];
    let got = component_diffs(base, other);
    let names = ["intensity", "deformation", "pose", "crop"];
    for i in 0..4 {
        if want[i] != got[i] {
            return Err(format!(
                "{}: {} {} Baseline",
                preset.name(),
                names[i],
                if got[i] { "differs from" } else { "matches" }
            ));
        }
    }
    for (a, b) in base.slabs.iter().zip(&other.slabs) {
        if b.crop.mode != crop {
            return Err(format!("{}: slab {} crop mode {}", preset.name(), b.k, b.crop.mode.as_str()));
        }
        if deform && b.deform.sigma == 0.0 && a.deform.sigma == 0.0 && b.deform.lattice.is_none() {
            return Err(format!("{}: slab {} deformation not sampled", preset.name(), b.k));
        }
    }
    Ok(())
}

/// Per-pixel features of the linear proxy predictor.
const PROXY_FEATURES: usize = 10;

fn proxy_features(u: f64, v: f64, s: f64, intensity: f64) -> [f64; PROXY_FEATURES] {
    let t = 2.0 * s - 1.0;
    [1.0, u, v, t, u * u, v * v, u * v, u * t, v * t, intensity]
}

/// Least-squares linear map from pixel features to atlas coordinates, fitted
/// on the foreground pixels of a training stack. Stands in for the trained
/// network when ranking synthesis presets.
#[derive(Debug, Clone)]
pub struct ProxyPredictor {
    weights: DMatrix<f64>,
}

impl ProxyPredictor {
    pub fn fit(slabs: &[SlabSample]) -> Result<Self> {
        let mut ata = DMatrix::<f64>::zeros(PROXY_FEATURES, PROXY_FEATURES);
        let mut atb = DMatrix::<f64>::zeros(PROXY_FEATURES, 3);
        let mut n = 0usize;
        for slab in slabs {
            let coords = slab.coords_gt.as_ref().ok_or(Error::MissingGroundTruth)?;
            let (w, h) = slab.dims();
            for j in 0..h {
                for i in 0..w {
                    if !*slab.mask.get(i, j) {
                        continue;
                    }
                    let [u, v] = slab.image.pixel_norm(i, j);
                    let f = DVector::from_row_slice(&proxy_features(u, v, slab.s, *slab.image.get(i, j)));
                    ata += &f * f.transpose();
                    let y = coords.get(i, j);
                    for c in 0..3 {
                        for r in 0..PROXY_FEATURES {
                            atb[(r, c)] += f[r] * y[c];
                        }
                    }
                    n += 1;
                }
            }
        }
        if n < PROXY_FEATURES {
            return Err(Error::InsufficientPoints(format!("{n} training pixels")));
        }
        for d in 0..PROXY_FEATURES {
            ata[(d, d)] += 1e-8 * n as f64;
        }
        let weights = ata
            .lu()
            .solve(&atb)
            .ok_or_else(|| Error::NumericalFailure("proxy normal equations".into()))?;
        Ok(Self { weights })
    }

    pub fn predict(&self, slab: &SlabSample) -> CoordMap2D {
        let (w, h) = slab.dims();
        CoordMap2D::from_fn(w, h, |i, j| {
            if !*slab.mask.get(i, j) {
                return crate::image::SENTINEL;
            }
            let [u, v] = slab.image.pixel_norm(i, j);
            let f = proxy_features(u, v, slab.s, *slab.image.get(i, j));
            std::array::from_fn(|c| (0..PROXY_FEATURES).map(|r| f[r] * self.weights[(r, c)]).sum())
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub preset: Preset,
    /// Masked coordinate MSE in mm² on the held-out stacks.
    pub mse_mm2: f64,
    /// Mean Dice of projected atlas labels over the atlas label set.
    pub dice: f64,
    pub provenance: std::result::Result<(), String>,
}

#[derive(Debug, Clone, Copy)]
pub struct AblationConfig {
    pub train_cases: usize,
    pub test_cases: usize,
    pub seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            train_cases: 4,
            test_cases: 2,
            seed: 1,
        }
    }
}

/// Score each preset by fitting the proxy predictor on its synthetic stacks
/// and evaluating on held-out fully randomized stacks, and check each
/// preset's provenance against Baseline.
pub fn ablation_table(labels: &Volume3D, coords: &Volume3D, cfg: &AblationConfig) -> Result<Vec<AblationRow>> {
    let test_cfg = SynthConfig::preset(Preset::E);
    let test: Vec<SyntheticCase> = (0..cfg.test_cases)
        .map(|i| generate_case(labels, coords, &test_cfg, cfg.seed.wrapping_add(1_000_000 + i as u64)))
        .collect::<Result<_>>()?;
    let mm = labels.mm_per_unit();
    let atlas_set = labels.label_set();
    let mut base_prov = Vec::new();
    let mut rows = Vec::new();
    for preset in Preset::ALL {
        let scfg = SynthConfig::preset(preset);
        let train: Vec<SyntheticCase> = (0..cfg.train_cases)
            .map(|i| generate_case(labels, coords, &scfg, cfg.seed.wrapping_add(i as u64)))
            .collect::<Result<_>>()?;
        let train_slabs: Vec<SlabSample> = train.iter().flat_map(|c| c.slabs.iter().cloned()).collect();
        let model = ProxyPredictor::fit(&train_slabs)?;
        let (mut mse_sum, mut dice_sum, mut n) = (0.0, 0.0, 0.0);
        for case in &test {
            for slab in &case.slabs {
                let gt = slab.coords_gt.as_ref().ok_or(Error::MissingGroundTruth)?;
                let pred = model.predict(slab);
                let mm_pred = pred.map(|c| std::array::from_fn(|a| c[a] * mm[a]));
                let mm_gt = gt.map(|c| std::array::from_fn(|a| c[a] * mm[a]));
                mse_sum += masked_mse(&mm_pred, &mm_gt, &slab.mask)?;
                let projected = project_labels(&pred, &slab.mask, labels)?;
                let own = slab.labels.as_ref().ok_or(Error::MissingGroundTruth)?;
                let d: f64 = atlas_set
                    .iter()
                    .map(|&l| dice(&projected.data, &own.data, l))
                    .sum::<Result<f64>>()?;
                dice_sum += d / atlas_set.len().max(1) as f64;
                n += 1.0;
            }
        }
        let provenance = if preset == Preset::Baseline {
            base_prov = train.iter().map(|c| c.provenance.clone()).collect();
            Ok(())
        } else {
            train
                .iter()
                .zip(&base_prov)
                .try_for_each(|(c, b)| check_ablation_provenance(b, &c.provenance, preset))
        };
        rows.push(AblationRow {
            preset,
            mse_mm2: mse_sum / n,
            dice: dice_sum / n,
            provenance,
        });
    }
    Ok(rows)
}

pub fn ablation_to_kv(rows: &[AblationRow]) -> KvDoc {
    let mut d = KvDoc::new();
    for r in rows {
        let p = r.preset.name();
        d.push(format!("{p}.mse_mm2"), r.mse_mm2)
            .push(format!("{p}.dice"), r.dice)
            .push(format!("{p}.provenance"), if r.provenance.is_ok() { "ok" } else { "mismatch" });
    }
    d
}

pub fn ablation_to_table(rows: &[AblationRow]) -> String {
    let mut out = format!("{:<10} {:>12} {:>8} {:>11}\n", "preset", "MSE(mm2)", "Dice", "provenance");
    for r in rows {
        out.push_str(&format!(
            "{:<10} {:>12.3} {:>8.4} {:>11}\n",
            r.preset.name(),
            r.mse_mm2,
            r.dice,
            if r.provenance.is_ok() { "ok" } else { "MISMATCH" }
        ));
    }
    out
}
