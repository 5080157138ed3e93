//! Slab stack directories and reconstruction result documents.
//!
//! A stack directory holds `stack.txt` plus, for every slab `k`
//! (three-digit, 1-based), `slab_kkk.pgm` (16-bit image), `slab_kkk_mask.pgm`,
//! `slab_kkk.txt` (metadata) and optionally `slab_kkk_coords.{hdr,raw}` and
//! `slab_kkk_labels.{hdr,raw}` ground truth.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix2, Vector2};

use super::pnm::{read_mask, read_pgm, write_mask, write_pgm, GrayImage};
use super::raw::{read_coordmap, read_volume, write_coordmap, write_volume};
use crate::error::{Error, Result};
use crate::field::Lattice;
use crate::geometry::{Affine2, Affine3};
use crate::image::LabelImage;
use crate::kv::KvDoc;
use crate::recon::ReconResult;
use crate::synth::{CropMode, IntensityMode, SlabProvenance, SlabSample, SyntheticCase};
use crate::volume::{Volume3D, VolumeKind};

pub const STACK_FORMAT: &str = "slabrecon-stack-1";
pub const RECON_FORMAT: &str = "slabrecon-recon-1";

#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    pub name: String,
    pub slabs: Vec<SlabSample>,
    /// Extra case-level metadata (seed, pose, config), if any.
    pub meta: KvDoc,
    /// Per-slab metadata documents as stored.
    pub slab_meta: Vec<KvDoc>,
}

pub fn slab_stem(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("slab_{k:03}"))
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn slab_image_path(dir: &Path, k: usize) -> PathBuf {
    with_suffix(&slab_stem(dir, k), ".pgm")
}

pub fn slab_mask_path(dir: &Path, k: usize) -> PathBuf {
    with_suffix(&slab_stem(dir, k), "_mask.pgm")
}

pub fn slab_coords_path(dir: &Path, k: usize) -> PathBuf {
    with_suffix(&slab_stem(dir, k), "_coords.hdr")
}

pub fn slab_labels_path(dir: &Path, k: usize) -> PathBuf {
    with_suffix(&slab_stem(dir, k), "_labels.hdr")
}

pub fn slab_meta_path(dir: &Path, k: usize) -> PathBuf {
    with_suffix(&slab_stem(dir, k), ".txt")
}

const STACK_KEYS: &[&str] = &["format", "case", "count"];
const SLAB_CORE_KEYS: &[&str] = &["k", "count", "s", "image_scale"];
const SLAB_PROV_KEYS: &[&str] = &[
    "layer",
    "deform_sigma",
    "deform_grid",
    "deform_lattice",
    "crop_mode",
    "crop_fraction",
    "crop_offset",
    "crop_size",
    "no_valid_crop",
    "intensity_mode",
    "gmm",
    "illum_sigma_e",
    "illum_grid",
    "illum_lattice",
];

fn label_image_to_volume(l: &LabelImage) -> Volume3D {
    Volume3D::new(
        [l.width, l.height, 1],
        [1.0; 3],
        VolumeKind::Label,
        l.data.iter().map(|&v| v as f64).collect(),
    )
    .expect("label image dims are positive")
}

fn push_lattice(doc: &mut KvDoc, grid_key: &str, key: &str, lat: &Lattice) {
    doc.push_list(grid_key, &[lat.grid.0, lat.grid.1]);
    doc.push_list(key, &lat.channels.concat());
}

fn read_lattice(doc: &KvDoc, grid_key: &str, key: &str) -> Result<Option<Lattice>> {
    let Some([gw, gh]) = doc.parse_array::<usize, 2>(grid_key)? else {
        return Ok(None);
    };
    let values = doc.parse_list::<f64>(key)?.unwrap_or_default();
    let n = gw * gh;
    if n == 0 || values.len() % n != 0 {
        return Err(Error::CorruptHeader(format!("`{key}` length does not match grid")));
    }
    Ok(Some(Lattice {
        grid: (gw, gh),
        channels: values.chunks(n).map(|c| c.to_vec()).collect(),
    }))
}

/// Per-slab provenance as key/value pairs.
pub fn provenance_to_kv(p: &SlabProvenance, doc: &mut KvDoc) {
    doc.push("layer", p.layer);
    doc.push("deform_sigma", p.deform.sigma);
    if let Some(l) = &p.deform.lattice {
        push_lattice(doc, "deform_grid", "deform_lattice", l);
    }
    doc.push("crop_mode", p.crop.mode.as_str())
        .push("crop_fraction", p.crop.fraction)
        .push_list("crop_offset", &[p.crop.offset.0, p.crop.offset.1])
        .push_list("crop_size", &[p.crop.size.0, p.crop.size.1])
        .push("no_valid_crop", p.crop.no_valid_crop)
        .push("intensity_mode", p.intensity.as_str());
    let gmm: Vec<f64> = p.gmm.iter().flat_map(|c| [c.label as f64, c.mu, c.sigma]).collect();
    doc.push_list("gmm", &gmm);
    doc.push("illum_sigma_e", p.illum.sigma_e);
    if let Some(l) = &p.illum.lattice {
        push_lattice(doc, "illum_grid", "illum_lattice", l);
    }
}

pub fn provenance_from_kv(doc: &KvDoc, k: usize) -> Result<SlabProvenance> {
    use crate::synth::{CropRecord, DeformRecord, GmmComponent, IllumRecord};
    let missing = |key: &str| Error::CorruptHeader(format!("missing key `{key}`"));
    let crop_mode_s = doc.require("crop_mode")?;
    let intensity_s = doc.require("intensity_mode")?;
    let gmm = doc.parse_list::<f64>("gmm")?.unwrap_or_default();
    if gmm.len() % 3 != 0 {
        return Err(Error::CorruptHeader("`gmm` must hold label/mu/sigma triples".into()));
    }
    let offset = doc.parse_array::<usize, 2>("crop_offset")?.ok_or_else(|| missing("crop_offset"))?;
    let size = doc.parse_array::<usize, 2>("crop_size")?.ok_or_else(|| missing("crop_size"))?;
    Ok(SlabProvenance {
        k,
        layer: doc.parse_value("layer")?.ok_or_else(|| missing("layer"))?,
        deform: DeformRecord {
            sigma: doc.parse_value("deform_sigma")?.ok_or_else(|| missing("deform_sigma"))?,
            lattice: read_lattice(doc, "deform_grid", "deform_lattice")?,
        },
        crop: CropRecord {
            mode: CropMode::parse(crop_mode_s).ok_or_else(|| Error::CorruptHeader(format!("crop_mode `{crop_mode_s}`")))?,
            fraction: doc.parse_value("crop_fraction")?.ok_or_else(|| missing("crop_fraction"))?,
            offset: (offset[0], offset[1]),
            size: (size[0], size[1]),
            no_valid_crop: doc.parse_value("no_valid_crop")?.ok_or_else(|| missing("no_valid_crop"))?,
        },
        intensity: IntensityMode::parse(intensity_s)
            .ok_or_else(|| Error::CorruptHeader(format!("intensity_mode `{intensity_s}`")))?,
        gmm: gmm
            .chunks(3)
            .map(|c| GmmComponent {
                label: c[0] as u32,
                mu: c[1],
                sigma: c[2],
            })
            .collect(),
        illum: IllumRecord {
            sigma_e: doc.parse_value("illum_sigma_e")?.ok_or_else(|| missing("illum_sigma_e"))?,
            lattice: read_lattice(doc, "illum_grid", "illum_lattice")?,
        },
    })
}

/// Write a stack. `extra` is appended to the per-slab metadata when given.
pub fn write_stack(dir: &Path, name: &str, slabs: &[SlabSample], extra: &[KvDoc]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut top = KvDoc::new();
    top.push("format", STACK_FORMAT).push("case", name).push("count", slabs.len());
    let top_path = dir.join("stack.txt");
    fs::write(&top_path, top.to_string())?;
    written.push(top_path);
    for (idx, slab) in slabs.iter().enumerate() {
        let k = slab.k;
        let scale = slab.image.data.iter().copied().fold(0.0, f64::max);
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let img_path = slab_image_path(dir, k);
        write_pgm(&img_path, &GrayImage::quantize(&slab.image, scale, u16::MAX))?;
        let mask_path = slab_mask_path(dir, k);
        write_mask(&mask_path, &slab.mask)?;
        written.extend([img_path, mask_path]);
        if let Some(c) = &slab.coords_gt {
            let p = slab_coords_path(dir, k);
            write_coordmap(&p, c)?;
            written.extend([p.clone(), p.with_extension("raw")]);
        }
        if let Some(l) = &slab.labels {
            let p = slab_labels_path(dir, k);
            write_volume(&p, &label_image_to_volume(l))?;
            written.extend([p.clone(), p.with_extension("raw")]);
        }
        let mut meta = KvDoc::new();
        meta.push("k", k).push("count", slab.count).push("s", slab.s).push("image_scale", scale);
        if let Some(e) = extra.get(idx) {
            for (key, v) in e.entries() {
                meta.push(key.clone(), v);
            }
        }
        let mp = slab_meta_path(dir, k);
        fs::write(&mp, meta.to_string())?;
        written.push(mp);
    }
    Ok(written)
}

/// Write a synthetic case with full provenance and case-level metadata.
pub fn write_case(dir: &Path, name: &str, case: &SyntheticCase) -> Result<Vec<PathBuf>> {
    let extra: Vec<KvDoc> = case
        .provenance
        .slabs
        .iter()
        .map(|p| {
            let mut d = KvDoc::new();
            provenance_to_kv(p, &mut d);
            d
        })
        .collect();
    let mut written = write_stack(dir, name, &case.slabs, &extra)?;
    let mut meta = KvDoc::new();
    let prov = &case.provenance;
    meta.push("seed", prov.seed)
        .push_list("pose", &case.pose.to_rows().concat())
        .push_list("pose_angles_deg", &prov.pose.angles_deg)
        .push_list("pose_scales", &prov.pose.scales)
        .push_list("pose_shears", &prov.pose.shears);
    let p = dir.join("case.txt");
    fs::write(&p, meta.to_string())?;
    written.push(p);
    let c = dir.join("synth_config.txt");
    fs::write(&c, prov.config.to_kv().to_string())?;
    written.push(c);
    Ok(written)
}

pub fn read_stack(dir: &Path) -> Result<Stack> {
    let top_path = dir.join("stack.txt");
    if !top_path.exists() {
        return Err(Error::FileNotFound(top_path));
    }
    let top = KvDoc::parse(&fs::read_to_string(&top_path)?)?;
    top.reject_unknown(STACK_KEYS)?;
    if top.require("format")? != STACK_FORMAT {
        return Err(Error::CorruptHeader("stack.txt: unknown format".into()));
    }
    let name = top.require("case")?.to_string();
    let count: usize = top
        .parse_value("count")?
        .ok_or_else(|| Error::CorruptHeader("stack.txt: missing `count`".into()))?;
    let meta_path = dir.join("case.txt");
    let meta = if meta_path.exists() {
        KvDoc::parse(&fs::read_to_string(&meta_path)?)?
    } else {
        KvDoc::new()
    };
    let mut slabs = Vec::with_capacity(count);
    let mut slab_meta = Vec::with_capacity(count);
    let mut k = 0;
    let mut found = 0;
    while found < count {
        k += 1;
        if k > 999 && found == 0 {
            return Err(Error::CorruptFile(format!("{}: no slab files", dir.display())));
        }
        let mp = slab_meta_path(dir, k);
        if !mp.exists() {
            if k > 9999 {
                return Err(Error::CorruptFile(format!("{}: expected {count} slabs, found {found}", dir.display())));
            }
            continue;
        }
        found += 1;
        let doc = KvDoc::parse(&fs::read_to_string(&mp)?)?;
        let allowed: Vec<&str> = SLAB_CORE_KEYS.iter().chain(SLAB_PROV_KEYS).copied().collect();
        doc.reject_unknown(&allowed)?;
        let need = |key: &str| Error::CorruptHeader(format!("{}: missing `{key}`", mp.display()));
        let sk: usize = doc.parse_value("k")?.ok_or_else(|| need("k"))?;
        let scount: usize = doc.parse_value("count")?.ok_or_else(|| need("count"))?;
        let s: f64 = doc.parse_value("s")?.ok_or_else(|| need("s"))?;
        let scale: f64 = doc.parse_value("image_scale")?.unwrap_or(1.0);
        let image = read_pgm(&slab_image_path(dir, k))?.to_image(scale);
        let mask = read_mask(&slab_mask_path(dir, k))?;
        if !image.same_dims(&mask) {
            return Err(Error::DimMismatch(format!("slab {k}: image and mask differ in size")));
        }
        let cp = slab_coords_path(dir, k);
        let coords_gt = if cp.exists() { Some(read_coordmap(&cp)?) } else { None };
        let lp = slab_labels_path(dir, k);
        let labels = if lp.exists() {
            let v = read_volume(&lp)?;
            let [w, h, _] = v.dims();
            Some(LabelImage::from_vec(w, h, v.data().iter().map(|&x| x as u32).collect())?)
        } else {
            None
        };
        slabs.push(SlabSample {
            image,
            mask,
            coords_gt,
            labels,
            s,
            k: sk,
            count: scount,
        });
        slab_meta.push(doc);
    }
    if slabs.windows(2).any(|w| w[0].s >= w[1].s) {
        return Err(Error::CorruptFile("slab slice indices are not strictly increasing".into()));
    }
    Ok(Stack {
        name,
        slabs,
        meta,
        slab_meta,
    })
}

fn affine3_list(a: &Affine3) -> Vec<f64> {
    a.to_rows().concat()
}

fn affine3_from(v: &[f64]) -> Result<Affine3> {
    if v.len() != 12 {
        return Err(Error::CorruptHeader(format!("affine needs 12 values, got {}", v.len())));
    }
    Ok(Affine3::from_rows(std::array::from_fn(|r| std::array::from_fn(|c| v[4 * r + c]))))
}

pub fn recon_to_kv(r: &ReconResult) -> KvDoc {
    let mut d = KvDoc::new();
    d.push("format", RECON_FORMAT)
        .push("slabs", r.per_slab.len())
        .push_list("global", &affine3_list(&r.global))
        .push("iterations", r.iterations)
        .push("converged", r.converged)
        .push("overall_rms", r.overall_rms)
        .push_list("excluded", &r.excluded.iter().map(|i| i + 1).collect::<Vec<_>>())
        .push_list("objective_trace", &r.objective_trace);
    for (i, a2) in r.per_slab.iter().enumerate() {
        let k = i + 1;
        let l = &a2.linear;
        let t = &a2.translation;
        d.push_list(format!("slab.{k}.inplane"), &[l[(0, 0)], l[(0, 1)], t[0], l[(1, 0)], l[(1, 1)], t[1]])
            .push(format!("slab.{k}.plane"), a2.plane_coord)
            .push_list(format!("slab.{k}.composite"), &affine3_list(&r.composite[i]))
            .push(format!("slab.{k}.residual_rms"), r.residual_rms[i])
            .push(format!("slab.{k}.points"), r.point_counts[i]);
    }
    d.push("warnings", r.warnings.len());
    for (i, w) in r.warnings.iter().enumerate() {
        d.push(format!("warning.{}", i + 1), w.replace('\n', " "));
    }
    d
}

pub fn recon_from_kv(d: &KvDoc) -> Result<ReconResult> {
    if d.require("format")? != RECON_FORMAT {
        return Err(Error::CorruptHeader("unknown reconstruction format".into()));
    }
    let missing = |key: &str| Error::CorruptHeader(format!("missing key `{key}`"));
    let n: usize = d.parse_value("slabs")?.ok_or_else(|| missing("slabs"))?;
    let global = affine3_from(&d.parse_list::<f64>("global")?.ok_or_else(|| missing("global"))?)?;
    let mut per_slab = Vec::with_capacity(n);
    let mut composite = Vec::with_capacity(n);
    let mut residual_rms = Vec::with_capacity(n);
    let mut point_counts = Vec::with_capacity(n);
    for k in 1..=n {
        let key = |f: &str| format!("slab.{k}.{f}");
        let ip = d
            .parse_array::<f64, 6>(&key("inplane"))?
            .ok_or_else(|| missing(&key("inplane")))?;
        let plane: f64 = d.parse_value(&key("plane"))?.ok_or_else(|| missing(&key("plane")))?;
        per_slab.push(Affine2 {
            linear: Matrix2::new(ip[0], ip[1], ip[3], ip[4]),
            translation: Vector2::new(ip[2], ip[5]),
            plane_coord: plane,
        });
        composite.push(affine3_from(
            &d.parse_list::<f64>(&key("composite"))?.ok_or_else(|| missing(&key("composite")))?,
        )?);
        residual_rms.push(d.parse_value(&key("residual_rms"))?.ok_or_else(|| missing(&key("residual_rms")))?);
        point_counts.push(d.parse_value(&key("points"))?.ok_or_else(|| missing(&key("points")))?);
    }
    let nw: usize = d.parse_value("warnings")?.unwrap_or(0);
    let warnings = (1..=nw)
        .map(|i| d.require(&format!("warning.{i}")).map(str::to_string))
        .collect::<Result<_>>()?;
    Ok(ReconResult {
        global,
        per_slab,
        composite,
        residual_rms,
        overall_rms: d.parse_value("overall_rms")?.ok_or_else(|| missing("overall_rms"))?,
        iterations: d.parse_value("iterations")?.ok_or_else(|| missing("iterations"))?,
        converged: d.parse_value("converged")?.ok_or_else(|| missing("converged"))?,
        excluded: d
            .parse_list::<usize>("excluded")?
            .unwrap_or_default()
            .into_iter()
            .map(|k| k - 1)
            .collect(),
        point_counts,
        objective_trace: d.parse_list("objective_trace")?.unwrap_or_default(),
        warnings,
    })
}

pub fn write_recon(path: &Path, r: &ReconResult) -> Result<()> {
    fs::write(path, recon_to_kv(r).to_string())?;
    Ok(())
}

pub fn read_recon(path: &Path) -> Result<ReconResult> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    recon_from_kv(&KvDoc::parse(&fs::read_to_string(path)?)?)
}
