//! Coordinate predictors: anything that turns a slab photograph into a
//! per-pixel atlas coordinate map. Two are built in: a file-backed loader for
//! maps produced by an external network, and a noisy ground-truth oracle.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::image::{CoordMap2D, Grid2, Image2D, Mask, SENTINEL};
use crate::rng::{stream, Rng};
use crate::synth::{slice_index, SlabSample};

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorSpec {
    /// Path template with `{case}`, `{k}` and `{k:03}` placeholders.
    FileBacked { template: String },
    /// Ground truth plus iid Gaussian noise and a constant bias.
    Oracle { sigma: f64, bias: [f64; 3], seed: u64 },
}

impl PredictorSpec {
    pub fn oracle(sigma: f64) -> Self {
        PredictorSpec::Oracle {
            sigma,
            bias: [0.0; 3],
            seed: 0,
        }
    }

    /// `oracle:<sigma>` or a file path template. Templates may use `{case}`,
    /// `{k}` and the zero-padded `{k:03}`.
    pub fn parse(s: &str, seed: u64) -> Result<Self> {
        match s.strip_prefix("oracle:") {
            Some(rest) => {
                let sigma: f64 = rest
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad oracle sigma `{rest}`")))?;
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidConfig(format!("oracle sigma must be >= 0, got {sigma}")));
                }
                Ok(PredictorSpec::Oracle {
                    sigma,
                    bias: [0.0; 3],
                    seed,
                })
            }
            None => Ok(PredictorSpec::FileBacked { template: s.to_string() }),
        }
    }

    pub fn resolve_path(template: &str, case: &str, k: usize) -> PathBuf {
        PathBuf::from(
            template
                .replace("{case}", case)
                .replace("{k:03}", &format!("{k:03}"))
                .replace("{k}", &k.to_string()),
        )
    }
}

/// Predict the coordinate map of `slab`. Background pixels carry the sentinel.
pub fn predict(spec: &PredictorSpec, slab: &SlabSample, case: &str) -> Result<CoordMap2D> {
    match spec {
        PredictorSpec::FileBacked { template } => {
            let path = PredictorSpec::resolve_path(template, case, slab.k);
            if !path.exists() {
                return Err(Error::FileNotFound(path));
            }
            let map = crate::io::read_coordmap(&path)?;
            if map.dims() != slab.dims() {
                return Err(Error::DimMismatch(format!(
                    "coordinate map {:?} vs slab {:?}",
                    map.dims(),
                    slab.dims()
                )));
            }
            Ok(map)
        }
        PredictorSpec::Oracle { sigma, bias, seed } => {
            let gt = slab.coords_gt.as_ref().ok_or(Error::MissingGroundTruth)?;
            if gt.dims() != slab.dims() {
                return Err(Error::DimMismatch("coords_gt vs image".into()));
            }
            let mut rng = Rng::new(*seed).child(&[stream::ORACLE, slab.k as u64]);
            let data = gt
                .data
                .iter()
                .zip(&slab.mask.data)
                .map(|(c, &m)| {
                    if m {
                        std::array::from_fn(|a| c[a] + rng.normal(0.0, *sigma) + bias[a])
                    } else {
                        SENTINEL
                    }
                })
                .collect();
            let (w, h) = gt.dims();
            CoordMap2D::from_vec(w, h, data)
        }
    }
}

/// Default confidence weights: 1 on the mask, 0 elsewhere.
pub fn binary_weights(mask: &Mask) -> Image2D {
    mask.map(|&m| if m { 1.0 } else { 0.0 })
}

/// Raw photograph before preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub enum Photo {
    Gray(Image2D),
    Rgb(Grid2<[f64; 3]>),
}

impl Photo {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Photo::Gray(g) => g.dims(),
            Photo::Rgb(c) => c.dims(),
        }
    }

    pub fn to_gray(&self) -> Image2D {
        match self {
            Photo::Gray(g) => g.clone(),
            Photo::Rgb(c) => c.map(|p| 0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2]),
        }
    }
}

/// Grayscale, min-max normalize over the foreground, resample from
/// `pixel_size` to `target_pixel_size` (mm per pixel) and zero the background.
pub fn preprocess_photo(photo: &Photo, mask: &Mask, pixel_size: f64, target_pixel_size: f64) -> Result<(Image2D, Mask)> {
    if !(pixel_size > 0.0 && pixel_size.is_finite()) {
        return Err(Error::NonpositivePixelSize(pixel_size));
    }
    if !(target_pixel_size > 0.0 && target_pixel_size.is_finite()) {
        return Err(Error::NonpositivePixelSize(target_pixel_size));
    }
    if photo.dims() != mask.dims() {
        return Err(Error::DimMismatch(format!("photo {:?} vs mask {:?}", photo.dims(), mask.dims())));
    }
    if mask.count() == 0 {
        return Err(Error::AllBackground);
    }
    let gray = photo.to_gray();
    let (lo, hi) = gray
        .data
        .iter()
        .zip(&mask.data)
        .filter(|(_, &m)| m)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let mut norm = Image2D::filled(gray.width, gray.height, 0.0);
    for ((o, &v), &m) in norm.data.iter_mut().zip(&gray.data).zip(&mask.data) {
        if m && range > 0.0 {
            *o = (v - lo) / range;
        }
    }
    if pixel_size == target_pixel_size {
        return Ok((norm, mask.clone()));
    }
    let ratio = pixel_size / target_pixel_size;
    let (w, h) = mask.dims();
    let nw = ((w as f64 * ratio).round() as usize).max(1);
    let nh = ((h as f64 * ratio).round() as usize).max(1);
    let src = |i: usize, n: usize, nn: usize| (i as f64 + 0.5) * n as f64 / nn as f64 - 0.5;
    let out_mask = Mask::from_fn(nw, nh, |i, j| {
        mask.nearest_px(src(i, w, nw), src(j, h, nh)).copied().unwrap_or(false)
    });
    let out = Image2D::from_fn(nw, nh, |i, j| {
        if *out_mask.get(i, j) {
            norm.bilinear_px(src(i, w, nw), src(j, h, nh))
        } else {
            0.0
        }
    });
    if out_mask.count() == 0 {
        return Err(Error::AllBackground);
    }
    Ok((out, out_mask))
}

/// Preprocess photographs given in posterior-to-anterior order and assign
/// slab indices and normalized slice indices.
pub fn preprocess_stack(
    photos: &[(Photo, Mask, f64)],
    target_pixel_size: f64,
) -> Result<Vec<SlabSample>> {
    let count = photos.len();
    photos
        .iter()
        .enumerate()
        .map(|(idx, (photo, mask, px))| {
            let (image, mask) = preprocess_photo(photo, mask, *px, target_pixel_size)?;
            Ok(SlabSample {
                image,
                mask,
                coords_gt: None,
                labels: None,
                s: slice_index(idx + 1, count),
                k: idx + 1,
                count,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slab(w: usize, h: usize) -> SlabSample {
        let mask = Mask::from_fn(w, h, |i, j| (i + 2 * j) % 7 != 0);
        let coords = CoordMap2D::from_fn(w, h, |i, j| {
            if *mask.get(i, j) {
                [i as f64 / w as f64, j as f64 / h as f64, 0.25]
            } else {
                SENTINEL
            }
        });
        SlabSample {
            image: Image2D::filled(w, h, 0.5),
            mask,
            coords_gt: Some(coords),
            labels: None,
            s: 0.5,
            k: 3,
            count: 5,
        }
    }

    #[test]
    fn noiseless_oracle_is_identity() {
        let s = slab(20, 10);
        let out = predict(&PredictorSpec::oracle(0.0), &s, "c").unwrap();
        assert_eq!(&out, s.coords_gt.as_ref().unwrap());
    }

    #[test]
    fn oracle_noise_statistics() {
        let s = slab(400, 300);
        let sigma = 0.01;
        let out = predict(&PredictorSpec::oracle(sigma), &s, "c").unwrap();
        let gt = s.coords_gt.as_ref().unwrap();
        let n = s.mask.count() as f64;
        assert!(n > 1e5);
        for c in 0..3 {
            let diffs: Vec<f64> = out
                .data
                .iter()
                .zip(&gt.data)
                .zip(&s.mask.data)
                .filter(|(_, &m)| m)
                .map(|((o, g), _)| o[c] - g[c])
                .collect();
            let mean = diffs.iter().sum::<f64>() / n;
            let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!((std / sigma - 1.0).abs() < 0.05);
            assert!(mean.abs() < 3.0 * sigma / n.sqrt());
        }
        for (o, &m) in out.data.iter().zip(&s.mask.data) {
            if !m {
                assert_eq!(*o, SENTINEL);
            }
        }
    }

    #[test]
    fn oracle_bias_is_added() {
        let s = slab(8, 8);
        let spec = PredictorSpec::Oracle {
            sigma: 0.0,
            bias: [0.1, -0.2, 0.0],
            seed: 1,
        };
        let out = predict(&spec, &s, "c").unwrap();
        let gt = s.coords_gt.as_ref().unwrap();
        for ((o, g), &m) in out.data.iter().zip(&gt.data).zip(&s.mask.data) {
            if m {
                assert_eq!(*o, [g[0] + 0.1, g[1] - 0.2, g[2]]);
            }
        }
    }

    #[test]
    fn oracle_needs_ground_truth() {
        let mut s = slab(4, 4);
        s.coords_gt = None;
        assert!(matches!(predict(&PredictorSpec::oracle(0.0), &s, "c"), Err(Error::MissingGroundTruth)));
    }

    #[test]
    fn missing_file_reported() {
        let s = slab(4, 4);
        let spec = PredictorSpec::parse("/nonexistent/{case}_{k}.hdr", 0).unwrap();
        match predict(&spec, &s, "abc") {
            Err(Error::FileNotFound(p)) => assert_eq!(p, PathBuf::from("/nonexistent/abc_3.hdr")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_spec() {
        assert_eq!(
            PredictorSpec::parse("oracle:0.02", 9).unwrap(),
            PredictorSpec::Oracle {
                sigma: 0.02,
                bias: [0.0; 3],
                seed: 9
            }
        );
        assert!(PredictorSpec::parse("oracle:-1", 0).is_err());
        assert!(PredictorSpec::parse("oracle:x", 0).is_err());
    }

    #[test]
    fn normalized_gray_input_unchanged() {
        let img = Image2D::from_fn(6, 5, |i, j| ((i + j) % 5) as f64 / 4.0);
        let mask = Mask::filled(6, 5, true);
        let (out, m) = preprocess_photo(&Photo::Gray(img.clone()), &mask, 1.0, 1.0).unwrap();
        assert_eq!(out, img);
        assert_eq!(m, mask);
    }

    #[test]
    fn constant_foreground_maps_to_zero() {
        let img = Image2D::filled(6, 5, 0.7);
        let mask = Mask::from_fn(6, 5, |i, _| i > 1);
        let (out, _) = preprocess_photo(&Photo::Gray(img), &mask, 1.0, 1.0).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rgb_luminance() {
        let rgb = Grid2::from_fn(4, 3, |i, j| [i as f64 * 0.1, j as f64 * 0.2, 0.3]);
        let gray = Photo::Rgb(rgb.clone()).to_gray();
        for j in 0..3 {
            for i in 0..4 {
                let p = rgb.get(i, j);
                let want = 0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2];
                assert!((gray.get(i, j) - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn preprocess_errors() {
        let img = Photo::Gray(Image2D::filled(4, 4, 1.0));
        assert!(matches!(
            preprocess_photo(&img, &Mask::filled(4, 4, false), 1.0, 1.0),
            Err(Error::AllBackground)
        ));
        assert!(matches!(
            preprocess_photo(&img, &Mask::filled(4, 4, true), 0.0, 1.0),
            Err(Error::NonpositivePixelSize(_))
        ));
    }

    #[test]
    fn rescale_halves_dims() {
        let img = Image2D::from_fn(40, 20, |i, _| i as f64);
        let mask = Mask::filled(40, 20, true);
        let (out, m) = preprocess_photo(&Photo::Gray(img), &mask, 0.5, 1.0).unwrap();
        assert_eq!(out.dims(), (20, 10));
        assert_eq!(m.count(), 200);
        assert!(out.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn stack_gets_slice_indices() {
        let photos: Vec<_> = (0..5)
            .map(|_| (Photo::Gray(Image2D::filled(4, 4, 1.0)), Mask::filled(4, 4, true), 1.0))
            .collect();
        let stack = preprocess_stack(&photos, 1.0).unwrap();
        let s: Vec<f64> = stack.iter().map(|s| s.s).collect();
        assert_eq!(s, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }
}
