use super::{IntensityMode, SynthConfig};
use crate::field::{smooth_random_field, Lattice};
use crate::image::{Image2D, LabelImage};
use crate::rng::Rng;

/// Mixture component drawn for one label of one slab.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmComponent {
    pub label: u32,
    pub mu: f64,
    pub sigma: f64,
}

/// Illumination field drawn for one slab.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IllumRecord {
    pub sigma_e: f64,
    /// Lattice of `log E`; `None` if no field was applied.
    pub lattice: Option<Lattice>,
}

/// Paint a label slice. In GMM mode each label present draws `mu` then
/// `sigma`, then every foreground pixel (row-major) draws from
/// `N(mu, sigma^2)` clamped at 0. Background is 0.
pub fn render_intensity(
    labels: &LabelImage,
    cfg: &SynthConfig,
    max_label: u32,
    rng: &mut Rng,
) -> (Image2D, Vec<GmmComponent>) {
    let (w, h) = labels.dims();
    match cfg.intensity_mode {
        IntensityMode::LabelMap => {
            let m = max_label.max(1) as f64;
            (labels.map(|&l| l as f64 / m), Vec::new())
        }
        IntensityMode::Gmm => {
            let mut present: Vec<u32> = labels.data.iter().copied().filter(|&l| l != 0).collect();
            present.sort_unstable();
            present.dedup();
            let comps: Vec<GmmComponent> = present
                .iter()
                .map(|&label| {
                    let mu = rng.uniform(cfg.mu_min, cfg.mu_max);
                    let sigma = rng.uniform(cfg.sigma_min, cfg.sigma_max_gmm);
                    GmmComponent { label, mu, sigma }
                })
                .collect();
            let mut img = Image2D::filled(w, h, 0.0);
            for (p, &l) in img.data.iter_mut().zip(&labels.data) {
                if l != 0 {
                    let c = comps[present.binary_search(&l).unwrap()];
                    *p = rng.normal(c.mu, c.sigma).max(0.0);
                }
            }
            (img, comps)
        }
    }
}

/// Multiply by a smooth log-normal field. `sigma_e = |N(0, sigma_illum)|`,
/// lattice values of `log E ~ N(0, sigma_e^2)`.
pub fn apply_illumination(image: &Image2D, cfg: &SynthConfig, rng: &mut Rng) -> (Image2D, IllumRecord) {
    let (w, h) = image.dims();
    if cfg.sigma_illum == 0.0 || w < 2 || h < 2 {
        return (image.clone(), IllumRecord::default());
    }
    let sigma_e = rng.normal(0.0, cfg.sigma_illum).abs();
    let grid = (cfg.illum_grid.0.min(w), cfg.illum_grid.1.min(h));
    let (lattice, fields) = smooth_random_field((w, h), grid, 1, rng, |r| r.normal(0.0, sigma_e));
    let log_e = &fields[0];
    let mut out = image.clone();
    for (p, f) in out.data.iter_mut().zip(&log_e.data) {
        *p *= f.exp();
    }
    (
        out,
        IllumRecord {
            sigma_e,
            lattice: Some(lattice),
        },
    )
}
