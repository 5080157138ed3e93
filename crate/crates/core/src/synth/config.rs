use crate::error::{Error, Result};
use crate::kv::KvDoc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    None,
    Central,
    Random,
}

impl CropMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CropMode::None => "none",
            CropMode::Central => "central",
            CropMode::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(CropMode::None),
            "central" => Some(CropMode::Central),
            "random" => Some(CropMode::Random),
            _ => None,
        }
    }
}

/// How labels are turned into intensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntensityMode {
    /// Per-slab Gaussian mixture followed by log-normal illumination.
    Gmm,
    /// Deterministic label-map painting, `label / max_label`; no illumination.
    LabelMap,
}

impl IntensityMode {
    pub fn as_str(self) -> &'static str {
        match self {
            IntensityMode::Gmm => "gmm",
            IntensityMode::LabelMap => "labelmap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gmm" => Some(IntensityMode::Gmm),
            "labelmap" => Some(IntensityMode::LabelMap),
            _ => None,
        }
    }
}

/// Ablation presets. Each enables one more randomization component than the
/// previous one; `E` is the full engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Baseline,
    A,
    B,
    C,
    D,
    E,
}

impl Preset {
    pub const ALL: [Preset; 6] = [Preset::Baseline, Preset::A, Preset::B, Preset::C, Preset::D, Preset::E];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Baseline => "Baseline",
            Preset::A => "A",
            Preset::B => "B",
            Preset::C => "C",
            Preset::D => "D",
            Preset::E => "E",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name().eq_ignore_ascii_case(s))
    }

    /// (intensity, deformation, affine, crop) toggles.
    pub fn toggles(self) -> (bool, bool, bool, CropMode) {
        match self {
            Preset::Baseline => (false, false, false, CropMode::None),
            Preset::A => (true, false, false, CropMode::None),
            Preset::B => (true, true, false, CropMode::None),
            Preset::C => (true, true, true, CropMode::None),
            Preset::D => (true, true, true, CropMode::Central),
            Preset::E => (true, true, true, CropMode::Random),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Rotation bound in degrees.
    pub alpha_r: f64,
    /// Scale bound as a fraction: factors in `[1 - beta_s, 1 + beta_s]`.
    pub beta_s: f64,
    /// Shear bound.
    pub gamma_h: f64,
    /// Per-slab deformation bound in pixels.
    pub sigma_max: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub sigma_min: f64,
    pub sigma_max_gmm: f64,
    pub sigma_illum: f64,
    pub slab_thickness_mm: f64,
    pub deform_grid: (usize, usize),
    pub illum_grid: (usize, usize),
    pub crop_mode: CropMode,
    pub crop_fraction_range: (f64, f64),
    pub intensity_mode: IntensityMode,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            alpha_r: 15.0,
            beta_s: 0.2,
            gamma_h: 0.2,
            sigma_max: 4.0,
            mu_min: 0.02,
            mu_max: 0.04,
            sigma_min: 0.1,
            sigma_max_gmm: 0.6,
            sigma_illum: 0.1,
            slab_thickness_mm: 4.0,
            deform_grid: (8, 8),
            illum_grid: (4, 4),
            crop_mode: CropMode::Random,
            crop_fraction_range: (0.8, 1.0),
            intensity_mode: IntensityMode::Gmm,
        }
    }
}

const KEYS: &[&str] = &[
    "alpha_r",
    "beta_s",
    "gamma_h",
    "sigma_max",
    "mu_min",
    "mu_max",
    "sigma_min",
    "sigma_max_gmm",
    "sigma_illum",
    "slab_thickness_mm",
    "deform_grid",
    "illum_grid",
    "crop_mode",
    "crop_fraction_range",
    "intensity_mode",
];

impl SynthConfig {
    /// Default hyperparameters with the preset's components switched off.
    pub fn preset(preset: Preset) -> Self {
        let (intensity, deform, affine, crop) = preset.toggles();
        let mut cfg = Self::default();
        if !intensity {
            cfg.intensity_mode = IntensityMode::LabelMap;
        }
        if !deform {
            cfg.sigma_max = 0.0;
        }
        if !affine {
            cfg.alpha_r = 0.0;
            cfg.beta_s = 0.0;
            cfg.gamma_h = 0.0;
        }
        cfg.crop_mode = crop;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        let bounds = [
            self.alpha_r,
            self.beta_s,
            self.gamma_h,
            self.sigma_max,
            self.mu_min,
            self.mu_max,
            self.sigma_min,
            self.sigma_max_gmm,
            self.sigma_illum,
        ];
        if bounds.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return bad("all bounds must be finite and >= 0");
        }
        if self.beta_s >= 1.0 {
            return bad("beta_s must be < 1");
        }
        if self.mu_min > self.mu_max {
            return bad("mu_min > mu_max");
        }
        if self.sigma_min > self.sigma_max_gmm {
            return bad("sigma_min > sigma_max_gmm");
        }
        let (lo, hi) = self.crop_fraction_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("crop_fraction_range must lie in (0, 1] with lo <= hi");
        }
        if !(self.slab_thickness_mm > 0.0 && self.slab_thickness_mm.is_finite()) {
            return bad("slab_thickness_mm must be > 0");
        }
        if self.deform_grid.0 < 2 || self.deform_grid.1 < 2 || self.illum_grid.0 < 2 || self.illum_grid.1 < 2 {
            return bad("field lattices must be at least 2x2");
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::new();
        d.push("alpha_r", self.alpha_r)
            .push("beta_s", self.beta_s)
            .push("gamma_h", self.gamma_h)
            .push("sigma_max", self.sigma_max)
            .push("mu_min", self.mu_min)
            .push("mu_max", self.mu_max)
            .push("sigma_min", self.sigma_min)
            .push("sigma_max_gmm", self.sigma_max_gmm)
            .push("sigma_illum", self.sigma_illum)
            .push("slab_thickness_mm", self.slab_thickness_mm)
            .push_list("deform_grid", &[self.deform_grid.0, self.deform_grid.1])
            .push_list("illum_grid", &[self.illum_grid.0, self.illum_grid.1])
            .push("crop_mode", self.crop_mode.as_str())
            .push_list("crop_fraction_range", &[self.crop_fraction_range.0, self.crop_fraction_range.1])
            .push("intensity_mode", self.intensity_mode.as_str());
        d
    }

    /// Parse a flat config document; missing keys keep their defaults,
    /// unknown keys are an error.
    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        doc.reject_unknown(KEYS)?;
        let mut c = Self::default();
        macro_rules! num {
            ($field:ident) => {
                if let Some(v) = doc.parse_value::<f64>(stringify!($field))? {
                    c.$field = v;
                }
            };
        }
        num!(alpha_r);
        num!(beta_s);
        num!(gamma_h);
        num!(sigma_max);
        num!(mu_min);
        num!(mu_max);
        num!(sigma_min);
        num!(sigma_max_gmm);
        num!(sigma_illum);
        num!(slab_thickness_mm);
        if let Some([w, h]) = doc.parse_array::<usize, 2>("deform_grid")? {
            c.deform_grid = (w, h);
        }
        if let Some([w, h]) = doc.parse_array::<usize, 2>("illum_grid")? {
            c.illum_grid = (w, h);
        }
        if let Some([lo, hi]) = doc.parse_array::<f64, 2>("crop_fraction_range")? {
            c.crop_fraction_range = (lo, hi);
        }
        if let Some(m) = doc.get("crop_mode") {
            c.crop_mode = CropMode::parse(m).ok_or_else(|| Error::InvalidConfig(format!("crop_mode `{m}`")))?;
        }
        if let Some(m) = doc.get("intensity_mode") {
            c.intensity_mode =
                IntensityMode::parse(m).ok_or_else(|| Error::InvalidConfig(format!("intensity_mode `{m}`")))?;
        }
        c.validate()?;
        Ok(c)
    }
}
