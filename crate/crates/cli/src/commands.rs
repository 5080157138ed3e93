use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use slabrecon::assemble::{build_volume, project_labels, OutputGrid};
use slabrecon::experiment::{ablation_table, ablation_to_kv, ablation_to_table, partial_stack, silver_standard, AblationConfig};
use slabrecon::image::is_sentinel;
use slabrecon::io::{self, GrayImage, RgbImage};
use slabrecon::kv::KvDoc;
use slabrecon::metrics::{dice, masked_mae, masked_mse, relative_volume_diff, ssim3d, volume_mse, SsimParams, StructureVolumes};
use slabrecon::phantom::phantom as make_phantom;
use slabrecon::predict::{predict as run_predict, PredictorSpec};
use slabrecon::recon::{reconstruct as run_reconstruct, ReconConfig, ReconSlab};
use slabrecon::synth::{generate_case, Preset, SynthConfig};
use slabrecon::{Mask, VolumeKind};

use crate::manifest::{RunManifest, MANIFEST_NAME};
use crate::{
    EvalCoordsArgs, EvalVolumeArgs, ExperimentArgs, PhantomArgs, PredictArgs, ReconstructArgs, SegmentArgs, SynthArgs,
    Table,
};

fn read_kv(path: &Path) -> Result<KvDoc> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(KvDoc::parse(&text)?)
}

fn write_text(path: &Path, text: &str) -> Result<PathBuf> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

pub fn phantom(a: PhantomArgs) -> Result<()> {
    if a.dim < 2 || !(a.spacing > 0.0) {
        bail!("phantom needs --dim >= 2 and --spacing > 0");
    }
    fs::create_dir_all(&a.out)?;
    let (labels, coords) = make_phantom(a.dim, a.spacing);
    let lp = a.out.join("labels.hdr");
    let cp = a.out.join("coords.hdr");
    io::write_volume(&lp, &labels)?;
    io::write_volume(&cp, &coords)?;
    let mut m = RunManifest::new("phantom");
    m.config.push("dim", a.dim).push("spacing", a.spacing);
    m.outputs = vec![lp.clone(), lp.with_extension("raw"), cp.clone(), cp.with_extension("raw")];
    m.write(&a.out.join(MANIFEST_NAME))?;
    println!("phantom {}^3 at {} mm written to {}", a.dim, a.spacing, a.out.display());
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.preset {
        Some(p) => SynthConfig::preset(Preset::parse(p).with_context(|| format!("unknown preset `{p}`"))?),
        None => SynthConfig::default(),
    };
    if let Some(path) = &a.config {
        let mut doc = cfg.to_kv();
        for (k, v) in read_kv(path)?.entries() {
            doc = replace_key(doc, k, v);
        }
        cfg = SynthConfig::from_kv(&doc)?;
    }
    let mut m = RunManifest::new("synth");
    let (labels, coords) = match (&a.labels, &a.coords) {
        (Some(l), Some(c)) => {
            m.inputs = vec![l.clone(), c.clone()];
            (io::load_volume(l)?, io::load_volume(c)?)
        }
        _ => make_phantom(a.phantom_dim, 2.0),
    };
    let case = generate_case(&labels, &coords, &cfg, a.seed)?;
    let written = io::write_case(&a.out, &a.name, &case)?;
    m.seed = Some(a.seed);
    m.config = cfg.to_kv();
    m.outputs = written;
    m.write(&a.out.join(MANIFEST_NAME))?;
    println!("{} slabs written to {}", case.slabs.len(), a.out.display());
    Ok(())
}

/// Replace or append one key, keeping entry order.
fn replace_key(doc: KvDoc, key: &str, value: &str) -> KvDoc {
    let mut out = KvDoc::new();
    let mut seen = false;
    for (k, v) in doc.entries() {
        if k == key {
            out.push(k.clone(), value);
            seen = true;
        } else {
            out.push(k.clone(), v);
        }
    }
    if !seen {
        out.push(key, value);
    }
    out
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let stack = io::read_stack(&a.stack)?;
    let spec = PredictorSpec::parse(&a.coords, a.seed)?;
    fs::create_dir_all(&a.out)?;
    let mut outputs = Vec::new();
    for slab in &stack.slabs {
        let map = run_predict(&spec, slab, &stack.name)?;
        let p = a.out.join(format!("slab_{:03}_pred.hdr", slab.k));
        io::write_coordmap(&p, &map)?;
        outputs.extend([p.clone(), p.with_extension("raw")]);
    }
    let mut m = RunManifest::new("predict");
    m.seed = Some(a.seed);
    m.config.push("coords", &a.coords);
    m.inputs = vec![a.stack.clone()];
    m.outputs = outputs;
    m.write(&a.out.join(MANIFEST_NAME))?;
    println!("{} coordinate maps written to {}", stack.slabs.len(), a.out.display());
    Ok(())
}

pub fn reconstruct(a: ReconstructArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => ReconConfig::from_kv(&read_kv(p)?)?,
        None => ReconConfig::default(),
    };
    let stack = io::read_stack(&a.stack)?;
    let spec = PredictorSpec::parse(&a.coords, a.seed)?;
    let inputs: Vec<ReconSlab> = stack
        .slabs
        .iter()
        .map(|s| {
            Ok(ReconSlab {
                coords: run_predict(&spec, s, &stack.name)?,
                mask: s.mask.clone(),
                weights: None,
                s: s.s,
            })
        })
        .collect::<Result<_>>()?;
    let result = run_reconstruct(&inputs, &cfg)?;
    fs::create_dir_all(&a.out)?;
    let mut outputs = Vec::new();
    let rp = a.out.join("recon.txt");
    io::write_recon(&rp, &result)?;
    outputs.push(rp);

    let mut report = String::new();
    report.push_str(&format!("{:<14}{}\n", "case", stack.name));
    report.push_str(&format!("{:<14}{}\n", "slabs", stack.slabs.len()));
    report.push_str(&format!("{:<14}{}\n", "iterations", result.iterations));
    report.push_str(&format!("{:<14}{}\n", "converged", if result.converged { "yes" } else { "no" }));
    report.push_str(&format!("{:<14}{:.6e}\n", "overall_rms", result.overall_rms));
    report.push_str(&format!("\n{:>5} {:>10} {:>8} {:>14}\n", "k", "s", "points", "residual_rms"));
    for (i, slab) in stack.slabs.iter().enumerate() {
        let excluded = if result.excluded.contains(&i) { "  excluded" } else { "" };
        report.push_str(&format!(
            "{:>5} {:>10.6} {:>8} {:>14.6e}{excluded}\n",
            slab.k, slab.s, result.point_counts[i], result.residual_rms[i]
        ));
    }
    for w in &result.warnings {
        report.push_str(&format!("warning: {w}\n"));
    }
    outputs.push(write_text(&a.out.join("report.txt"), &report)?);

    if !a.no_volume {
        let images: Vec<_> = stack.slabs.iter().map(|s| s.image.clone()).collect();
        let grid = OutputGrid::new([a.grid; 3], [1.0; 3]);
        let vol = build_volume(&images, &result, &grid, a.thickness)?;
        let vp = a.out.join("volume.hdr");
        io::write_volume(&vp, &vol)?;
        outputs.extend([vp.clone(), vp.with_extension("raw")]);
    }
    let mut m = RunManifest::new("reconstruct");
    m.seed = Some(a.seed);
    m.config = cfg.to_kv();
    m.config.push("coords", &a.coords).push("grid", a.grid);
    m.inputs = vec![a.stack.clone()];
    m.outputs = outputs;
    m.write(&a.out.join(MANIFEST_NAME))?;
    print!("{report}");
    Ok(())
}

/// Distinct colours for label overlays.
fn label_colour(l: u32) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 8] = [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
    ];
    PALETTE[(l as usize + PALETTE.len() - 1) % PALETTE.len()]
}

pub fn segment(a: SegmentArgs) -> Result<()> {
    let photo = io::read_pgm(&a.photo)?;
    let coords = io::read_coordmap(&a.coords)?;
    if (photo.width, photo.height) != coords.dims() {
        bail!("photo is {}x{} but coordinate map is {:?}", photo.width, photo.height, coords.dims());
    }
    let atlas = io::load_volume(&a.atlas)?;
    let mask = match &a.mask {
        Some(p) => io::read_mask(p)?,
        None => Mask::from_vec(coords.width, coords.height, coords.data.iter().map(|c| !is_sentinel(c)).collect())?,
    };
    let labels = project_labels(&coords, &mask, &atlas)?;
    let max_label = labels.data.iter().copied().max().unwrap_or(0);
    let maxval = if max_label <= 255 { 255 } else { u16::MAX };
    if max_label > maxval as u32 {
        bail!("label {max_label} does not fit a 16-bit PGM");
    }
    let out_dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    if !out_dir.as_os_str().is_empty() {
        fs::create_dir_all(&out_dir)?;
    }
    let img = GrayImage::new(labels.width, labels.height, maxval, labels.data.iter().map(|&l| l as u16).collect())?;
    io::write_pgm(&a.out, &img)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(ov) = &a.overlay {
        let ov = out_dir.join(ov.file_name().context("overlay path has no file name")?);
        let gray = photo.to_image(1.0);
        let data = gray
            .data
            .iter()
            .zip(&labels.data)
            .map(|(&g, &l)| {
                let base = (g.clamp(0.0, 1.0) * 255.0).round();
                if l == 0 {
                    [base as u8; 3]
                } else {
                    label_colour(l).map(|c| (0.5 * base + 0.5 * c as f64).round() as u8)
                }
            })
            .collect();
        io::write_ppm(
            &ov,
            &RgbImage {
                width: gray.width,
                height: gray.height,
                data,
            },
        )?;
        outputs.push(ov);
    }
    let mut m = RunManifest::new("segment");
    m.inputs = [Some(a.photo.clone()), Some(a.coords.clone()), Some(a.atlas.clone()), a.mask.clone()]
        .into_iter()
        .flatten()
        .collect();
    m.outputs = outputs;
    let mp = out_dir.join(format!(
        "{}.{MANIFEST_NAME}",
        a.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    m.write(&mp)?;
    let fg = mask.data.iter().filter(|&&v| v).count();
    println!("{fg} foreground pixels labelled, labels written to {}", a.out.display());
    Ok(())
}

pub fn evaluate_coords(a: EvalCoordsArgs) -> Result<()> {
    let pred = io::read_coordmap(&a.pred)?;
    let gt = io::read_coordmap(&a.gt)?;
    let mask = io::read_mask(&a.mask)?;
    let mm: [f64; 3] = match &a.mm_per_unit {
        Some(v) => [v[0], v[1], v[2]],
        None => [1.0; 3],
    };
    let scale = |m: &slabrecon::CoordMap2D| m.map(|c| std::array::from_fn(|i| c[i] * mm[i]));
    let (p, g) = (scale(&pred), scale(&gt));
    let mae = masked_mae(&p, &g, &mask)?;
    let mse = masked_mse(&p, &g, &mask)?;
    let unit = if a.mm_per_unit.is_some() { "mm" } else { "units" };
    let mut doc = KvDoc::new();
    doc.push("unit", unit).push("mae", mae).push("mse", mse).push("rmse", mse.sqrt());
    let table = format!(
        "{:<6} {:>14}\n{:<6} {:>14.6}\n{:<6} {:>14.6}\n{:<6} {:>14.6}\n",
        "metric", unit, "MAE", mae, "MSE", mse, "RMSE", mse.sqrt()
    );
    finish_evaluate(&a.out, &doc, &table, vec![a.pred, a.gt, a.mask])
}

pub fn evaluate_volume(a: EvalVolumeArgs) -> Result<()> {
    let v = io::load_volume(&a.volume)?;
    let r = io::load_volume(&a.reference)?;
    let mut doc = KvDoc::new();
    let mut table = String::new();
    if v.kind() != VolumeKind::Coordinates && r.kind() != VolumeKind::Coordinates {
        let mse = volume_mse(&v, &r)?;
        let ssim = ssim3d(&v, &r, SsimParams::default())?;
        doc.push("mse", mse).push("ssim", ssim);
        table.push_str(&format!("{:<8} {:>12.6}\n{:<8} {:>12.6}\n", "MSE", mse, "SSIM", ssim));
    } else {
        bail!("coordinate volumes cannot be compared with SSIM");
    }
    if v.kind() == VolumeKind::Label && r.kind() == VolumeKind::Label {
        let sv = StructureVolumes::from_labels(&v)?;
        let sr = StructureVolumes::from_labels(&r)?;
        table.push_str(&format!("\n{:>6} {:>8} {:>10}\n", "label", "Dice", "RVD(%)"));
        for l in r.label_set() {
            let d = dice(v.data(), r.data(), l as f64)?;
            let rvd = relative_volume_diff(&sv, &sr, l)?;
            doc.push(format!("label.{l}.dice"), d).push(format!("label.{l}.rvd"), rvd);
            table.push_str(&format!("{l:>6} {d:>8.4} {rvd:>10.3}\n"));
        }
    }
    finish_evaluate(&a.out, &doc, &table, vec![a.volume, a.reference])
}

fn finish_evaluate(out: &Path, doc: &KvDoc, table: &str, inputs: Vec<PathBuf>) -> Result<()> {
    fs::create_dir_all(out)?;
    let outputs = vec![
        write_text(&out.join("metrics.txt"), &doc.to_string())?,
        write_text(&out.join("report.txt"), table)?,
    ];
    let mut m = RunManifest::new("evaluate");
    m.inputs = inputs;
    m.outputs = outputs;
    m.write(&out.join(MANIFEST_NAME))?;
    print!("{table}");
    Ok(())
}

pub fn experiment(a: ExperimentArgs) -> Result<()> {
    if a.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    fs::create_dir_all(&a.out)?;
    let (labels, coords) = make_phantom(a.dim, a.spacing);
    let synth = SynthConfig::default();
    let recon = ReconConfig::default();
    let mut outputs = Vec::new();
    let mut text = String::new();
    if matches!(a.table, Table::Silver | Table::All) {
        let r = silver_standard(&labels, &coords, &synth, &recon, a.seed)?;
        text.push_str("Silver-standard reconstruction vs source painting\n");
        text.push_str(&r.to_table());
        text.push('\n');
        outputs.push(write_text(&a.out.join("silver.txt"), &r.to_kv().to_string())?);
    }
    if matches!(a.table, Table::Partial | Table::All) {
        let mut doc = KvDoc::new();
        text.push_str("Partial stack (50% of slabs) vs full reconstruction\n");
        text.push_str(&format!("{:>6} {:>6} {:>12} {:>12}\n", "seed", "kept", "MSE RefFree", "MSE naive"));
        let mut wins = 0;
        for i in 0..a.seeds {
            let seed = a.seed + i;
            let case = generate_case(&labels, &coords, &synth, seed)?;
            let r = partial_stack(&case, &labels, &recon, seed)?;
            wins += (r.mse_partial < r.mse_naive) as u64;
            text.push_str(&format!("{seed:>6} {:>6} {:>12.6} {:>12.6}\n", r.kept.len(), r.mse_partial, r.mse_naive));
            doc.push(format!("seed.{seed}.mse_partial"), r.mse_partial)
                .push(format!("seed.{seed}.mse_naive"), r.mse_naive);
        }
        doc.push("wins", wins).push("seeds", a.seeds);
        text.push_str(&format!("RefFree closer on {wins}/{} seeds\n\n", a.seeds));
        outputs.push(write_text(&a.out.join("partial.txt"), &doc.to_string())?);
    }
    if matches!(a.table, Table::Ablation | Table::All) {
        let cfg = AblationConfig {
            train_cases: a.train_cases,
            test_cases: a.test_cases,
            seed: a.seed,
        };
        let rows = ablation_table(&labels, &coords, &cfg)?;
        text.push_str("Ablation (linear proxy predictor, held-out preset E stacks)\n");
        text.push_str(&ablation_to_table(&rows));
        outputs.push(write_text(&a.out.join("ablation.txt"), &ablation_to_kv(&rows).to_string())?);
    }
    outputs.push(write_text(&a.out.join("report.txt"), &text)?);
    let mut m = RunManifest::new("experiment");
    m.seed = Some(a.seed);
    m.config = synth.to_kv();
    m.config.push("dim", a.dim).push("spacing", a.spacing).push("seeds", a.seeds);
    m.outputs = outputs;
    m.write(&a.out.join(MANIFEST_NAME))?;
    print!("{text}");
    Ok(())
}
