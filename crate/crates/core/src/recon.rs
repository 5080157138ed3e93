//! Joint stack reconstruction by alternating least squares.
//!
//! Each slab pixel `x` with predicted atlas coordinate `y` is modelled as
//! `y ≈ A(embed(A2_i)(x))`: a per-slab in-plane affine `A2_i` places the
//! pixel on its slab plane (out-of-plane position fixed from the slice index)
//! and a single global affine `A` maps canonical space to the atlas. The
//! solver alternates exact ridge-regularized least-squares solves for `A`
//! (all slabs) and for every `A2_i` (one slab each).
//!
//! Both solves work on per-slab sufficient statistics `S = Σ w ũũᵀ` and
//! `P = Σ w ũ yᵀ` with `ũ = (u, v, 1)`; the objective itself is evaluated
//! directly on the points.

use nalgebra::{DMatrix, Matrix2, Matrix3, Matrix4, Matrix4x3, SMatrix, SVector, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Affine2, Affine3, PlaneAffine};
use crate::image::{is_sentinel, CoordMap2D, Image2D, Mask};
use crate::kv::KvDoc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// All planes at 0.
    Identity,
    /// Plane of slab `i` at `2 s_i - 1`.
    SliceIndex,
}

impl InitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InitMode::Identity => "identity",
            InitMode::SliceIndex => "slice_index",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(InitMode::Identity),
            "slice_index" => Some(InitMode::SliceIndex),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsample {
    /// Keep every n-th foreground pixel.
    Stride(usize),
    /// Cap the foreground pixels per slab by a uniform stride; 0 disables.
    MaxPoints(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconConfig {
    pub max_iters: usize,
    /// Stop when the relative change of the overall RMS residual drops below this.
    pub rel_tol: f64,
    /// Stop when the overall RMS residual drops below this.
    pub abs_tol: f64,
    pub ridge: f64,
    pub subsample: Subsample,
    pub init_mode: InitMode,
    /// Slabs with fewer usable pixels are left out of the global solve.
    pub min_slab_points: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            ridge: 1e-8,
            subsample: Subsample::MaxPoints(20_000),
            init_mode: InitMode::SliceIndex,
            min_slab_points: 50,
        }
    }
}

const CONFIG_KEYS: &[&str] = &[
    "max_iters",
    "rel_tol",
    "abs_tol",
    "ridge",
    "subsample",
    "init_mode",
    "min_slab_points",
];

impl Subsample {
    /// `stride:<n>` or `max_points:<n>`.
    pub fn parse(s: &str) -> Option<Self> {
        let (kind, n) = s.split_once(':')?;
        let n: usize = n.trim().parse().ok()?;
        match kind.trim() {
            "stride" => Some(Subsample::Stride(n)),
            "max_points" => Some(Subsample::MaxPoints(n)),
            _ => None,
        }
    }
}

impl std::fmt::Display for Subsample {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Subsample::Stride(n) => write!(f, "stride:{n}"),
            Subsample::MaxPoints(n) => write!(f, "max_points:{n}"),
        }
    }
}

impl ReconConfig {
    pub fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::new();
        d.push("max_iters", self.max_iters)
            .push("rel_tol", self.rel_tol)
            .push("abs_tol", self.abs_tol)
            .push("ridge", self.ridge)
            .push("subsample", self.subsample)
            .push("init_mode", self.init_mode.as_str())
            .push("min_slab_points", self.min_slab_points);
        d
    }

    /// Missing keys keep their defaults; unknown keys are an error.
    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        doc.reject_unknown(CONFIG_KEYS)?;
        let mut c = Self::default();
        if let Some(v) = doc.parse_value("max_iters")? {
            c.max_iters = v;
        }
        if let Some(v) = doc.parse_value("rel_tol")? {
            c.rel_tol = v;
        }
        if let Some(v) = doc.parse_value("abs_tol")? {
            c.abs_tol = v;
        }
        if let Some(v) = doc.parse_value("ridge")? {
            c.ridge = v;
        }
        if let Some(v) = doc.parse_value("min_slab_points")? {
            c.min_slab_points = v;
        }
        if let Some(v) = doc.get("subsample") {
            c.subsample = Subsample::parse(v).ok_or_else(|| Error::InvalidConfig(format!("subsample `{v}`")))?;
        }
        if let Some(v) = doc.get("init_mode") {
            c.init_mode = InitMode::parse(v).ok_or_else(|| Error::InvalidConfig(format!("init_mode `{v}`")))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.max_iters < 1 {
            return bad("max_iters must be >= 1");
        }
        if !(self.rel_tol > 0.0) {
            return bad("rel_tol must be > 0");
        }
        if !(self.abs_tol >= 0.0) {
            return bad("abs_tol must be >= 0");
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad("ridge must be >= 0");
        }
        if self.subsample == Subsample::Stride(0) {
            return bad("subsample stride must be >= 1");
        }
        Ok(())
    }

    pub fn plane_coord(&self, s: f64) -> f64 {
        match self.init_mode {
            InitMode::Identity => 0.0,
            InitMode::SliceIndex => 2.0 * s - 1.0,
        }
    }
}

/// Observations of one slab: predicted coordinates, mask, optional
/// confidence weights and the normalized slice index.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconSlab {
    pub coords: CoordMap2D,
    pub mask: Mask,
    pub weights: Option<Image2D>,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    pub global: Affine3,
    pub per_slab: Vec<Affine2>,
    pub composite: Vec<Affine3>,
    /// Per-slab RMS residual per coordinate, normalized units.
    pub residual_rms: Vec<f64>,
    /// RMS residual per coordinate over all slabs used in the global solve.
    pub overall_rms: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Slabs left out of the global solve for having too few pixels.
    pub excluded: Vec<usize>,
    /// Points used per slab after subsampling.
    pub point_counts: Vec<usize>,
    /// Regularized objective after the initial state and after every half-step.
    pub objective_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default)]
struct Points {
    uv: Vec<[f64; 2]>,
    y: Vec<[f64; 3]>,
    w: Vec<f64>,
}

impl Points {
    fn len(&self) -> usize {
        self.w.len()
    }

    fn weight(&self) -> f64 {
        self.w.iter().sum()
    }
}

fn usable(slab: &ReconSlab) -> Vec<(usize, usize, f64)> {
    let (w, h) = slab.coords.dims();
    let mut out = Vec::new();
    for j in 0..h {
        for i in 0..w {
            if !*slab.mask.get(i, j) {
                continue;
            }
            let c = slab.coords.get(i, j);
            if is_sentinel(c) || !c.iter().all(|v| v.is_finite()) {
                continue;
            }
            let wt = slab.weights.as_ref().map_or(1.0, |wi| *wi.get(i, j));
            if wt > 0.0 && wt.is_finite() {
                out.push((i, j, wt));
            }
        }
    }
    out
}

fn gather(slab: &ReconSlab, subsample: Subsample) -> Points {
    let all = usable(slab);
    let stride = match subsample {
        Subsample::Stride(s) => s.max(1),
        Subsample::MaxPoints(cap) if cap > 0 && all.len() > cap => all.len().div_ceil(cap),
        Subsample::MaxPoints(_) => 1,
    };
    let mut p = Points::default();
    for &(i, j, wt) in all.iter().step_by(stride) {
        p.uv.push(slab.coords.pixel_norm(i, j));
        p.y.push(*slab.coords.get(i, j));
        p.w.push(wt);
    }
    p
}

#[derive(Debug, Clone, Copy)]
struct Stats {
    s: Matrix3<f64>,
    p: Matrix3<f64>,
}

fn stats(p: &Points) -> Stats {
    let mut s = Matrix3::zeros();
    let mut pm = Matrix3::zeros();
    for ((uv, y), &w) in p.uv.iter().zip(&p.y).zip(&p.w) {
        let u = Vector3::new(uv[0], uv[1], 1.0);
        s += w * u * u.transpose();
        pm += w * u * Vector3::from(*y).transpose();
    }
    Stats { s, p: pm }
}

/// `q = T ũ` is the embedded canonical point `(u', c, v', 1)`.
fn t_matrix(a2: &Affine2) -> Matrix4x3<f64> {
    let l = &a2.linear;
    let t = &a2.translation;
    Matrix4x3::new(
        l[(0, 0)], l[(0, 1)], t[0], //
        0.0, 0.0, a2.plane_coord, //
        l[(1, 0)], l[(1, 1)], t[1], //
        0.0, 0.0, 1.0,
    )
}

fn sse(points: &Points, global: &Affine3, a2: &Affine2) -> f64 {
    let comp = global.compose(&a2.embed());
    points
        .uv
        .iter()
        .zip(&points.y)
        .zip(&points.w)
        .map(|((uv, y), &w)| {
            let q = comp.apply([uv[0], 0.0, uv[1]]);
            w * ((q[0] - y[0]).powi(2) + (q[1] - y[1]).powi(2) + (q[2] - y[2]).powi(2))
        })
        .sum()
}

fn global_penalty(a: &Affine3) -> f64 {
    (a.linear - Matrix3::identity()).norm_squared() + a.translation.norm_squared()
}

fn slab_penalty(a2: &Affine2) -> f64 {
    (a2.linear - Matrix2::identity()).norm_squared() + a2.translation.norm_squared()
}

fn solve_spd<const N: usize, const C: usize>(
    a: SMatrix<f64, N, N>,
    b: SMatrix<f64, N, C>,
) -> Result<SMatrix<f64, N, C>> {
    if let Some(ch) = a.cholesky() {
        let x = ch.solve(&b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let ad = DMatrix::from_column_slice(N, N, a.as_slice());
    let bd = DMatrix::from_column_slice(N, C, b.as_slice());
    ad.lu()
        .solve(&bd)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .map(|x| SMatrix::<f64, N, C>::from_column_slice(x.as_slice()))
        .ok_or_else(|| Error::NumericalFailure(format!("singular {N}x{N} normal equations")))
}

/// Exact minimizer over the global affine given the per-slab statistics.
fn global_step(stats: &[Stats], per_slab: &[Affine2], ridge: f64) -> Result<Affine3> {
    let mut g = Matrix4::<f64>::zeros();
    let mut h = Matrix4x3::<f64>::zeros();
    for (st, a2) in stats.iter().zip(per_slab) {
        let t = t_matrix(a2);
        g += t * st.s * t.transpose();
        h += t * st.p;
    }
    let mut reference = Matrix4x3::zeros();
    for r in 0..3 {
        reference[(r, r)] = 1.0;
    }
    let x = solve_spd(g + ridge * Matrix4::identity(), h + ridge * reference)?;
    let rows = x.transpose();
    Ok(Affine3::new(
        rows.fixed_view::<3, 3>(0, 0).into_owned(),
        rows.column(3).into_owned(),
    ))
}

/// Exact minimizer over one slab's in-plane affine given the global affine.
fn slab_step(st: &Stats, global: &Affine3, plane_coord: f64, ridge: f64) -> Result<Affine2> {
    let m = &global.linear;
    let b: [Vector3<f64>; 2] = [m.column(0).into_owned(), m.column(2).into_owned()];
    let k: Vector3<f64> = m.column(1) * plane_coord + global.translation;
    let mean: Vector3<f64> = st.s.column(2).into_owned();
    let x0 = [Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)];
    let mut a = SMatrix::<f64, 6, 6>::zeros();
    let mut rhs = SVector::<f64, 6>::zeros();
    for j in 0..2 {
        for l in 0..2 {
            let beta = b[j].dot(&b[l]);
            let mut block = st.s * beta;
            if j == l {
                block += Matrix3::identity() * ridge;
            }
            a.fixed_view_mut::<3, 3>(3 * j, 3 * l).copy_from(&block);
        }
        let r = st.p * b[j] - mean * k.dot(&b[j]) + x0[j] * ridge;
        rhs.fixed_view_mut::<3, 1>(3 * j, 0).copy_from(&r);
    }
    let x = solve_spd(a, rhs)?;
    Ok(Affine2 {
        linear: Matrix2::new(x[0], x[1], x[3], x[4]),
        translation: Vector2::new(x[2], x[5]),
        plane_coord,
    })
}

/// Ridge-regularized weighted least squares in homogeneous form:
/// `argmin_X Σ w ‖Xᵀ x̃ − y‖² + ridge ‖X − X0‖²`.
fn ridge_lstsq(src: &[Vec<f64>], dst: &[[f64; 3]], weights: &[f64], ridge: f64, x0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = x0.nrows();
    let mut s = DMatrix::<f64>::zeros(d, d);
    let mut p = DMatrix::<f64>::zeros(d, 3);
    for ((x, y), &w) in src.iter().zip(dst).zip(weights) {
        for r in 0..d {
            for c in 0..d {
                s[(r, c)] += w * x[r] * x[c];
            }
            for c in 0..3 {
                p[(r, c)] += w * x[r] * y[c];
            }
        }
    }
    let a = s + DMatrix::identity(d, d) * ridge;
    let b = p + x0 * ridge;
    let sol = match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::NumericalFailure("singular normal equations".into()))?,
    };
    if sol.iter().all(|v| v.is_finite()) {
        Ok(sol)
    } else {
        Err(Error::NumericalFailure("non-finite least-squares solution".into()))
    }
}

fn check_weights(n_src: usize, n_dst: usize, weights: &[f64], min: usize) -> Result<()> {
    if n_src != n_dst || n_src != weights.len() {
        return Err(Error::DimMismatch(format!(
            "{n_src} sources, {n_dst} targets, {} weights",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::InsufficientPoints("weights must be finite and >= 0".into()));
    }
    let n = weights.iter().filter(|&&w| w > 0.0).count();
    if n < min {
        return Err(Error::InsufficientPoints(format!("{n} weighted points, need {min}")));
    }
    Ok(())
}

/// Weighted 3D-to-3D affine fit with a ridge pull toward the identity.
pub fn fit_affine3_ls(src: &[[f64; 3]], dst: &[[f64; 3]], weights: &[f64], ridge: f64) -> Result<Affine3> {
    check_weights(src.len(), dst.len(), weights, 4)?;
    let h: Vec<Vec<f64>> = src.iter().map(|p| vec![p[0], p[1], p[2], 1.0]).collect();
    let mut x0 = DMatrix::zeros(4, 3);
    for r in 0..3 {
        x0[(r, r)] = 1.0;
    }
    let x = ridge_lstsq(&h, dst, weights, ridge, &x0)?;
    let linear = Matrix3::from_fn(|r, c| x[(c, r)]);
    let translation = Vector3::new(x[(3, 0)], x[(3, 1)], x[(3, 2)]);
    Ok(Affine3::new(linear, translation))
}

/// Weighted plane-to-space affine fit. The ridge reference maps `(u, v)` to
/// `(u, 0, v)`.
pub fn fit_plane_affine_ls(src: &[[f64; 2]], dst: &[[f64; 3]], weights: &[f64], ridge: f64) -> Result<PlaneAffine> {
    check_weights(src.len(), dst.len(), weights, 3)?;
    let h: Vec<Vec<f64>> = src.iter().map(|p| vec![p[0], p[1], 1.0]).collect();
    let mut x0 = DMatrix::zeros(3, 3);
    x0[(0, 0)] = 1.0;
    x0[(1, 2)] = 1.0;
    let x = ridge_lstsq(&h, dst, weights, ridge, &x0)?;
    Ok(PlaneAffine {
        linear: nalgebra::Matrix3x2::from_fn(|r, c| x[(c, r)]),
        translation: Vector3::new(x[(2, 0)], x[(2, 1)], x[(2, 2)]),
    })
}

/// Weighted mean squared residual norm over every usable pixel of every slab.
pub fn objective(slabs: &[ReconSlab], global: &Affine3, per_slab: &[Affine2]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (slab, a2) in slabs.iter().zip(per_slab) {
        let p = gather(slab, Subsample::Stride(1));
        num += sse(&p, global, a2);
        den += p.weight();
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn rms(sse: f64, weight: f64) -> f64 {
    if weight > 0.0 {
        (sse / weight / 3.0).sqrt()
    } else {
        f64::NAN
    }
}

/// Fit the global affine and per-slab in-plane affines to the observations.
pub fn reconstruct(slabs: &[ReconSlab], cfg: &ReconConfig) -> Result<ReconResult> {
    cfg.validate()?;
    if slabs.is_empty() {
        return Err(Error::InsufficientPoints("no slabs".into()));
    }
    for (i, s) in slabs.iter().enumerate() {
        if !s.coords.same_dims(&s.mask) || s.weights.as_ref().is_some_and(|w| !w.same_dims(&s.mask)) {
            return Err(Error::DimMismatch(format!("slab {i}: coordinate map, mask and weights differ in size")));
        }
    }
    let points: Vec<Points> = slabs.par_iter().map(|s| gather(s, cfg.subsample)).collect();
    let stats: Vec<Stats> = points.par_iter().map(stats).collect();
    let planes: Vec<f64> = slabs.iter().map(|s| cfg.plane_coord(s.s)).collect();
    let mut per_slab: Vec<Affine2> = planes.iter().map(|&c| Affine2::identity(c)).collect();
    let active: Vec<usize> = (0..slabs.len())
        .filter(|&i| points[i].len() >= cfg.min_slab_points)
        .collect();
    let excluded: Vec<usize> = (0..slabs.len()).filter(|i| !active.contains(i)).collect();
    if active.is_empty() {
        return Err(Error::InsufficientPoints(format!(
            "no slab has {} usable pixels",
            cfg.min_slab_points
        )));
    }
    let mut warnings = Vec::new();
    for &i in &excluded {
        warnings.push(format!(
            "slab {} has {} usable pixels; excluded from the global fit",
            i + 1,
            points[i].len()
        ));
    }
    let total_weight: f64 = active.iter().map(|&i| points[i].weight()).sum();
    let ridge = cfg.ridge;

    let data_sse = |g: &Affine3, ps: &[Affine2]| -> f64 {
        let parts: Vec<f64> = active.par_iter().map(|&i| sse(&points[i], g, &ps[i])).collect();
        parts.iter().sum()
    };
    let regularized = |g: &Affine3, ps: &[Affine2], data: f64| -> f64 {
        let pen = global_penalty(g) + active.iter().map(|&i| slab_penalty(&ps[i])).sum::<f64>();
        (data + ridge * pen) / total_weight
    };

    let mut global;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    if active.len() == 1 {
        // One plane cannot separate the global and in-plane factors; fit the
        // composite directly and report it as the global transform.
        let i = active[0];
        let p = &points[i];
        let plane = fit_plane_affine_ls(&p.uv, &p.y, &p.w, ridge)?;
        global = plane.complete(planes[i]);
        trace.push(data_sse(&global, &per_slab) / total_weight);
        iterations = 1;
        converged = true;
    } else {
        let active_stats: Vec<Stats> = active.iter().map(|&i| stats[i]).collect();
        global = Affine3::identity();
        let data0 = data_sse(&global, &per_slab);
        trace.push(regularized(&global, &per_slab, data0));
        let mut prev = rms(data0, total_weight);
        for it in 1..=cfg.max_iters {
            let active_a2: Vec<Affine2> = active.iter().map(|&i| per_slab[i]).collect();
            global = global_step(&active_stats, &active_a2, ridge)?;
            trace.push(regularized(&global, &per_slab, data_sse(&global, &per_slab)));
            let updated: Vec<Result<Affine2>> = active
                .par_iter()
                .map(|&i| slab_step(&stats[i], &global, planes[i], ridge))
                .collect();
            for (&i, a2) in active.iter().zip(updated) {
                per_slab[i] = a2?;
            }
            let data = data_sse(&global, &per_slab);
            trace.push(regularized(&global, &per_slab, data));
            iterations = it;
            let cur = rms(data, total_weight);
            if cur < cfg.abs_tol || (prev - cur).abs() <= cfg.rel_tol * prev {
                converged = true;
                break;
            }
            prev = cur;
        }
    }

    for &i in &excluded {
        if points[i].len() > 0 {
            per_slab[i] = slab_step(&stats[i], &global, planes[i], ridge)?;
        }
    }
    let composite: Vec<Affine3> = per_slab.iter().map(|a2| global.compose(&a2.embed())).collect();
    let residual_rms: Vec<f64> = (0..slabs.len())
        .map(|i| rms(sse(&points[i], &global, &per_slab[i]), points[i].weight()))
        .collect();
    let overall_rms = rms(
        active.iter().map(|&i| sse(&points[i], &global, &per_slab[i])).sum(),
        total_weight,
    );
    if !global.is_finite() || !overall_rms.is_finite() {
        return Err(Error::NumericalFailure("non-finite reconstruction".into()));
    }
    warnings.extend(plane_order_warnings(&global, &per_slab, slabs, cfg));
    Ok(ReconResult {
        global,
        per_slab,
        composite,
        residual_rms,
        overall_rms,
        iterations,
        converged,
        excluded,
        point_counts: points.iter().map(Points::len).collect(),
        objective_trace: trace,
        warnings,
    })
}

/// Position of each transformed slab plane along the global plane normal.
pub fn plane_offsets(global: &Affine3, per_slab: &[Affine2]) -> Option<Vec<f64>> {
    let inv = global.inverse().ok()?;
    Some(
        per_slab
            .iter()
            .map(|a2| {
                let c = global.compose(&a2.embed()).apply([0.0, 0.0, 0.0]);
                inv.apply(c)[1]
            })
            .collect(),
    )
}

fn plane_order_warnings(global: &Affine3, per_slab: &[Affine2], slabs: &[ReconSlab], cfg: &ReconConfig) -> Vec<String> {
    if cfg.init_mode != InitMode::SliceIndex || slabs.len() < 2 {
        return Vec::new();
    }
    let mut w = Vec::new();
    if global.det() <= 0.0 {
        w.push(format!("global transform is orientation reversing (det {:.3e})", global.det()));
        return w;
    }
    if let Some(off) = plane_offsets(global, per_slab) {
        let mut order: Vec<usize> = (0..slabs.len()).collect();
        order.sort_by(|&a, &b| slabs[a].s.total_cmp(&slabs[b].s));
        for pair in order.windows(2) {
            if slabs[pair[0]].s < slabs[pair[1]].s && off[pair[0]] >= off[pair[1]] {
                w.push(format!("slab planes {} and {} are out of order", pair[0] + 1, pair[1] + 1));
            }
        }
    }
    w
}
