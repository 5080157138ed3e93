use super::{CropMode, SynthConfig};
use crate::image::{CoordMap2D, LabelImage};
use crate::rng::Rng;

/// Outcome of the crop step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropRecord {
    pub mode: CropMode,
    pub fraction: f64,
    /// Top-left corner of the retained window.
    pub offset: (usize, usize),
    pub size: (usize, usize),
    /// Random mode found no window retaining enough foreground and fell back
    /// to the central crop.
    pub no_valid_crop: bool,
}

/// Minimum retained foreground fraction in random mode, as a ratio 49/50.
const RETAIN_NUM: usize = 49;
const RETAIN_DEN: usize = 50;

fn central_offset(w: usize, h: usize, cw: usize, ch: usize) -> (usize, usize) {
    ((w - cw) / 2, (h - ch) / 2)
}

/// Summed-area table with a zero border: `sat[(j) * (w+1) + i]` counts
/// foreground pixels in `[0, i) x [0, j)`.
fn summed_area(labels: &LabelImage) -> Vec<usize> {
    let (w, h) = labels.dims();
    let mut sat = vec![0usize; (w + 1) * (h + 1)];
    for j in 0..h {
        let mut row = 0;
        for i in 0..w {
            row += (*labels.get(i, j) != 0) as usize;
            sat[(j + 1) * (w + 1) + i + 1] = sat[j * (w + 1) + i + 1] + row;
        }
    }
    sat
}

/// Offsets of `cw x ch` windows that keep at least 98% of the foreground.
pub fn valid_offsets(labels: &LabelImage, cw: usize, ch: usize) -> Vec<(usize, usize)> {
    let (w, h) = labels.dims();
    let sat = summed_area(labels);
    let stride = w + 1;
    let total = sat[h * stride + w];
    let mut out = Vec::new();
    for oy in 0..=h - ch {
        for ox in 0..=w - cw {
            let kept = sat[(oy + ch) * stride + ox + cw] + sat[oy * stride + ox]
                - sat[oy * stride + ox + cw]
                - sat[(oy + ch) * stride + ox];
            if kept * RETAIN_DEN >= total * RETAIN_NUM {
                out.push((ox, oy));
            }
        }
    }
    out
}

/// Crop labels and coordinates identically. The window side is
/// `max(1, round(f * side))` with `f ~ U(crop_fraction_range)`.
pub fn crop_slab(
    labels: &LabelImage,
    coords: &CoordMap2D,
    cfg: &SynthConfig,
    rng: &mut Rng,
) -> (LabelImage, CoordMap2D, CropRecord) {
    let (w, h) = labels.dims();
    if cfg.crop_mode == CropMode::None {
        let rec = CropRecord {
            mode: CropMode::None,
            fraction: 1.0,
            offset: (0, 0),
            size: (w, h),
            no_valid_crop: false,
        };
        return (labels.clone(), coords.clone(), rec);
    }
    let (lo, hi) = cfg.crop_fraction_range;
    let f = rng.uniform(lo, hi);
    let cw = ((f * w as f64).round() as usize).clamp(1, w);
    let ch = ((f * h as f64).round() as usize).clamp(1, h);
    let mut no_valid_crop = false;
    let offset = match cfg.crop_mode {
        CropMode::Random => {
            let offsets = valid_offsets(labels, cw, ch);
            if offsets.is_empty() {
                no_valid_crop = true;
                central_offset(w, h, cw, ch)
            } else {
                offsets[rng.index(offsets.len())]
            }
        }
        _ => central_offset(w, h, cw, ch),
    };
    let rec = CropRecord {
        mode: cfg.crop_mode,
        fraction: f,
        offset,
        size: (cw, ch),
        no_valid_crop,
    };
    (
        labels.crop(offset.0, offset.1, cw, ch),
        coords.crop(offset.0, offset.1, cw, ch),
        rec,
    )
}
