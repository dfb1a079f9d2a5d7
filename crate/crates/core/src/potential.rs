//! Green's function of the complement of `L` with pole at infinity, by the
//! charge simulation method, and the quantities derived from it.
//!
//! The model is
//!
//! ```text
//! g(z) = Σ_j w_j ln|z - q_j| + Σ_k Re(c_k / (z - p_k)) + γ,      Σ_j w_j = 1,
//! ```
//!
//! with log charges `q_j` and dipoles `p_k` strictly inside the components of
//! `L`, fitted so that `g ≈ 0` on `∂L`. Dipoles are only used near polygon
//! corners, where the boundary data is least smooth; they vanish at infinity. `γ` is the Robin constant and `exp(-γ)` the logarithmic
//! capacity. Since the difference between the model and the true Green's
//! function is harmonic in the exterior (including infinity), the boundary
//! residual bounds the error everywhere outside `L`.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde_json::json;
use thiserror::Error;

use crate::geometry::{CompactSet, ContourFamily, GeometryError, Point, Polygon, Shape};
use crate::linalg::lstsq;
use crate::minimax::{RhoEstimate, RhoMethod};

/// Residual above which a solve is rejected even after refinement.
pub const MAX_RESIDUAL: f64 = 1e-4;
/// Bisection stops once the level bracket is narrower than this.
pub const LEVEL_TOLERANCE: f64 = 1e-4;
/// Charge ring radius for disks, as a fraction of the radius.
pub const DISK_CHARGE_RATIO: f64 = 0.7;
/// Distance of polygon edge charges from the boundary, in units of spacing.
const POLYGON_CHARGE_OFFSET: f64 = 2.0;
/// Fraction of a polygon's singularities spent on corner dipole clusters.
const CORNER_SHARE: f64 = 0.8;
/// Corner clusters reach down to `e^-CORNER_DEPTH` times the cluster reach.
const CORNER_DEPTH: f64 = 20.0;
/// Collocation points per corner dipole, on each adjacent edge.
const CORNER_OVERSAMPLING: usize = 2;
/// Largest per-component charge count tried during refinement.
const MAX_REFINED_CHARGES: usize = 1024;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PotentialError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid solver parameters: {0}")]
    BadParameters(String),
    #[error("collocation system is ill-conditioned (condition estimate {0:e})")]
    IllConditioned(f64),
    #[error("boundary residual {0:e} exceeds the accepted maximum after refinement")]
    ResidualTooLarge(f64),
    #[error("point {0} lies in the set")]
    PointInsideSet(Point),
    #[error("disk intersects the set")]
    DiskIntersectsSet,
    #[error("contour touches the set")]
    ContourTouchesSet,
    #[error("raster too coarse: {0}")]
    ResolutionTooCoarse(String),
}

pub type Result<T> = std::result::Result<T, PotentialError>;

/// Discrete charge representation of `g_Ω(·, ∞)`.
#[derive(Debug, Clone)]
pub struct GreenModel {
    charges: Vec<Point>,
    weights: Vec<f64>,
    dipoles: Vec<Point>,
    moments: Vec<Point>,
    robin_constant: f64,
    source: CompactSet,
    residual_norm: f64,
    condition: f64,
    charges_per_component: usize,
    local: LocalFrame,
}

/// The singularities again, as offsets from the anchor of their component.
/// Differences between points of one component are then free of the
/// cancellation that absolute coordinates suffer far from the origin.
#[derive(Debug, Clone)]
struct LocalFrame {
    anchors: Vec<Point>,
    charge_comp: Vec<usize>,
    charges: Vec<Point>,
    dipole_comp: Vec<usize>,
    dipoles: Vec<Point>,
}

impl GreenModel {
    pub fn charges(&self) -> &[Point] {
        &self.charges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Dipole locations (polygon corner clusters only).
    pub fn dipoles(&self) -> &[Point] {
        &self.dipoles
    }

    /// Complex moments `c_k` of the terms `Re(c_k / (z - p_k))`.
    pub fn moments(&self) -> &[Point] {
        &self.moments
    }

    pub fn robin_constant(&self) -> f64 {
        self.robin_constant
    }

    pub fn source(&self) -> &CompactSet {
        &self.source
    }

    /// Max of `|g|` over the validation grid on `∂L`.
    pub fn residual_norm(&self) -> f64 {
        self.residual_norm
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn charges_per_component(&self) -> usize {
        self.charges_per_component
    }

    /// Model value with no membership check. Inside `L` the value is meaningless.
    pub fn value(&self, z: Point) -> f64 {
        let mut s = 0.0;
        for (q, w) in self.charges.iter().zip(&self.weights) {
            s += w * (z - q).norm().ln();
        }
        for (p, c) in self.dipoles.iter().zip(&self.moments) {
            s += (c / (z - p)).re;
        }
        s + self.robin_constant
    }

    /// `F'(z)` where `g = Re F`; `∇g = conj(F')`.
    pub fn derivative(&self, z: Point) -> Point {
        let logs: Point = self.charges.iter().zip(&self.weights).map(|(q, w)| *w / (z - q)).sum();
        let dips: Point = self.dipoles.iter().zip(&self.moments).map(|(p, c)| -c / ((z - p) * (z - p))).sum();
        logs + dips
    }

    fn second_derivative(&self, z: Point) -> Point {
        let logs: Point = self.charges.iter().zip(&self.weights).map(|(q, w)| -*w / ((z - q) * (z - q))).sum();
        let dips: Point =
            self.dipoles.iter().zip(&self.moments).map(|(p, c)| 2.0 * c / ((z - p) * (z - p) * (z - p))).sum();
        logs + dips
    }

    /// Value at `anchor(comp) + zl`.
    fn value_local(&self, comp: usize, zl: Point) -> f64 {
        let f = &self.local;
        let mut s = 0.0;
        for ((cj, q), w) in f.charge_comp.iter().zip(&f.charges).zip(&self.weights) {
            s += w * ((f.anchors[comp] - f.anchors[*cj]) + (zl - q)).norm().ln();
        }
        for ((cj, p), c) in f.dipole_comp.iter().zip(&f.dipoles).zip(&self.moments) {
            s += (c / ((f.anchors[comp] - f.anchors[*cj]) + (zl - p))).re;
        }
        s + self.robin_constant
    }

    /// Green value extended by zero on `L` (the function is continuous there).
    pub fn value_or_zero(&self, z: Point) -> f64 {
        if self.source.distance(z) == 0.0 { 0.0 } else { self.value(z) }
    }
}

/// Charge and collocation counts for [`solve_green`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenOptions {
    pub charges_per_component: usize,
    pub colloc_per_component: usize,
    /// Double the counts while the residual exceeds [`MAX_RESIDUAL`].
    pub refine: bool,
}

impl Default for GreenOptions {
    fn default() -> Self {
        Self { charges_per_component: 128, colloc_per_component: 256, refine: true }
    }
}

impl GreenOptions {
    /// `n` charges and `2n` collocation points per component, with refinement.
    pub fn with_charges(n: usize) -> Self {
        Self { charges_per_component: n, colloc_per_component: 2 * n, refine: true }
    }

    /// Same counts, no refinement.
    pub fn fixed(self) -> Self {
        Self { refine: false, ..self }
    }
}

fn split_by_length(p: &Polygon, total: usize) -> Vec<usize> {
    let lens: Vec<f64> = p.edges().map(|(a, b)| (b - a).norm()).collect();
    let per: f64 = total as f64 / lens.iter().sum::<f64>();
    let mut counts: Vec<usize> = lens.iter().map(|l| ((l * per).round() as usize).max(2)).collect();
    // Trim or pad the longest edges so the total matches.
    let mut order: Vec<usize> = (0..lens.len()).collect();
    order.sort_by(|&a, &b| lens[b].partial_cmp(&lens[a]).unwrap().then(a.cmp(&b)));
    let mut sum: usize = counts.iter().sum();
    let mut idx = 0;
    while sum != total {
        let e = order[idx % order.len()];
        if sum > total && counts[e] > 2 {
            counts[e] -= 1;
            sum -= 1;
        } else if sum < total {
            counts[e] += 1;
            sum += 1;
        }
        idx += 1;
        if idx > 100 * total {
            break;
        }
    }
    counts
}

/// Tapered distances `dmax·exp(-D(√m - √(j - shift))/(√m - 1))`, `j = 1..=m`,
/// reaching from `dmax` down to `dmax·e^-D` and accumulating at the corner.
fn taper(m: usize, dmax: f64, shift: f64) -> impl Iterator<Item = f64> {
    let sm = (m as f64).sqrt();
    let scale = CORNER_DEPTH / (sm - 1.0).max(1.0);
    (1..=m).map(move |j| dmax * (-scale * (sm - (j as f64 - shift).max(0.0).sqrt())).exp())
}

/// Per-vertex data: vertex, unit directions to both neighbours, cluster reach.
fn corners(p: &Polygon) -> Vec<(Point, Point, Point, f64)> {
    let v = p.vertices();
    let n = v.len();
    (0..n)
        .map(|i| {
            let (prev, cur, next) = (v[(i + n - 1) % n], v[i], v[(i + 1) % n]);
            let (a, b) = (prev - cur, next - cur);
            (cur, a / a.norm(), b / b.norm(), 0.5 * a.norm().min(b.norm()))
        })
        .collect()
}

/// Splits `n` between edge points and per-vertex clusters.
fn corner_split(p: &Polygon, n: usize) -> (usize, usize) {
    let nv = p.vertices().len();
    let per_corner = ((n as f64 * CORNER_SHARE / nv as f64) as usize).max(2);
    (n.saturating_sub(per_corner * nv).max(2 * nv), per_corner)
}

/// Singularities for one shape: (log charges, dipoles). Polygons get evenly
/// spaced charges behind each edge and a tapered dipole cluster on the
/// interior bisector of each vertex, where the exterior Green function is
/// singular.
fn place_charges(s: &Shape, n: usize) -> (Vec<Point>, Vec<Point>) {
    match s {
        Shape::Disk { center, radius } => (
            (0..n)
                .map(|k| *center + Point::from_polar(DISK_CHARGE_RATIO * radius, TAU * k as f64 / n as f64))
                .collect(),
            Vec::new(),
        ),
        Shape::Polygon(p) => {
            let (n_edge, per_corner) = corner_split(p, n);
            // Steps inward from `base`, halving until safely interior.
            let push_inside = |out: &mut Vec<Point>, base: Point, dir: Point, mut off: f64, floor: f64| {
                let mut q = base + dir * off;
                while !(s.is_interior(q) && p.boundary_distance(q) > 0.125 * off) && off > floor {
                    off *= 0.5;
                    q = base + dir * off;
                }
                out.push(q);
            };
            let mut logs = Vec::with_capacity(n_edge);
            for ((a, b), k) in p.edges().zip(split_by_length(p, n_edge)) {
                let len = (b - a).norm();
                let inward = (b - a) / len * Point::i();
                let off = POLYGON_CHARGE_OFFSET * len / k as f64;
                for j in 0..k {
                    let base = a + (b - a) * ((j as f64 + 0.5) / k as f64);
                    push_inside(&mut logs, base, inward, off, 1e-12 * len);
                }
            }
            let mut dipoles = Vec::with_capacity(per_corner * p.vertices().len());
            for (i, (v, da, db, reach)) in corners(p).into_iter().enumerate() {
                let mut bis = da + db;
                if bis.norm() < 1e-12 {
                    bis = db * Point::i();
                }
                bis /= bis.norm();
                // At a reflex vertex the bisector of the edges points outward.
                if !p.is_convex_vertex(i) {
                    bis = -bis;
                }
                for d in taper(per_corner, reach, 0.0) {
                    push_inside(&mut dipoles, v, bis, d, 1e-14 * reach);
                }
            }
            // Short edges can land charges from neighbouring edges together.
            let tol = 1e-9 * s.diameter();
            let mut unique: Vec<Point> = Vec::with_capacity(logs.len());
            for q in logs {
                if unique.iter().all(|u| (u - q).norm() > tol) {
                    unique.push(q);
                }
            }
            (unique, dipoles)
        }
    }
}

/// Collocation (or validation) points on the boundary of one shape.
/// `shift` in `[0, 1)` offsets the nodes so validation grids differ from
/// collocation grids.
fn place_boundary(s: &Shape, n: usize, shift: f64) -> Vec<Point> {
    match s {
        Shape::Disk { center, radius } => {
            (0..n).map(|k| *center + Point::from_polar(*radius, TAU * (k as f64 + shift) / n as f64)).collect()
        }
        Shape::Polygon(p) => {
            let (n_edge, per_corner) = corner_split(p, n);
            let mut out = Vec::with_capacity(n_edge + 4 * per_corner * p.vertices().len());
            for ((a, b), k) in p.edges().zip(split_by_length(p, n_edge)) {
                out.extend((0..k).map(|j| a + (b - a) * ((j as f64 + shift) / k as f64)));
            }
            let side = CORNER_OVERSAMPLING * per_corner;
            for (v, da, db, reach) in corners(p) {
                for d in taper(side, reach, shift) {
                    out.push(v + da * d);
                    out.push(v + db * d);
                }
            }
            out
        }
    }
}

fn solve_once(set: &CompactSet, n_charges: usize, n_colloc: usize) -> Result<GreenModel> {
    let anchors: Vec<Point> = set.components().iter().map(|s| s.anchor()).collect();
    let local_shapes: Vec<Shape> = set.components().iter().zip(&anchors).map(|(s, a)| s.translated(-a)).collect();
    let mut frame = LocalFrame {
        anchors: anchors.clone(),
        charge_comp: Vec::new(),
        charges: Vec::new(),
        dipole_comp: Vec::new(),
        dipoles: Vec::new(),
    };
    // Dipole columns are scaled by the distance to ∂L so entries stay O(1).
    let mut dscale = Vec::new();
    for (ci, s) in local_shapes.iter().enumerate() {
        let (q, d) = place_charges(s, n_charges);
        frame.charge_comp.extend(std::iter::repeat_n(ci, q.len()));
        frame.charges.extend(q);
        dscale.extend(d.iter().map(|p| s.boundary_distance(*p)));
        frame.dipole_comp.extend(std::iter::repeat_n(ci, d.len()));
        frame.dipoles.extend(d);
    }
    let colloc: Vec<(usize, Point)> = local_shapes
        .iter()
        .enumerate()
        .flat_map(|(ci, s)| place_boundary(s, n_colloc, 0.0).into_iter().map(move |z| (ci, z)))
        .collect();
    let diff = |ci: usize, zl: Point, cj: usize, ql: Point| (anchors[ci] - anchors[cj]) + (zl - ql);
    // The weight-sum constraint is eliminated with the last charge:
    // w_last = 1 - Σ others, so unknowns are the other weights, γ, then
    // the real and imaginary parts of each dipole moment.
    let nq = frame.charges.len();
    let nd = frame.dipoles.len();
    let (last_c, last) = (frame.charge_comp[nq - 1], frame.charges[nq - 1]);
    let rows = colloc.len();
    let cols = nq + 2 * nd;
    if rows < cols {
        return Err(PotentialError::BadParameters(format!("{rows} collocation points for {cols} unknowns")));
    }
    let mut a = DMatrix::<f64>::zeros(rows, cols);
    let mut b = DVector::<f64>::zeros(rows);
    for (i, &(ci, z)) in colloc.iter().enumerate() {
        let l_last = diff(ci, z, last_c, last).norm().ln();
        for (j, (cj, q)) in frame.charge_comp.iter().zip(&frame.charges).take(nq - 1).enumerate() {
            a[(i, j)] = diff(ci, z, *cj, *q).norm().ln() - l_last;
        }
        a[(i, nq - 1)] = 1.0;
        for (k, ((cj, p), h)) in frame.dipole_comp.iter().zip(&frame.dipoles).zip(&dscale).enumerate() {
            let r = *h / diff(ci, z, *cj, *p);
            a[(i, nq + 2 * k)] = r.re;
            a[(i, nq + 2 * k + 1)] = -r.im;
        }
        b[i] = -l_last;
    }
    let sol = lstsq(a, &b).ok_or(PotentialError::IllConditioned(f64::INFINITY))?;
    let mut weights: Vec<f64> = sol.x.iter().take(nq - 1).copied().collect();
    weights.push(1.0 - weights.iter().sum::<f64>());
    let robin_constant = sol.x[nq - 1];
    let moments: Vec<Point> =
        (0..nd).map(|k| Point::new(sol.x[nq + 2 * k], sol.x[nq + 2 * k + 1]) * dscale[k]).collect();
    let charges = frame.charge_comp.iter().zip(&frame.charges).map(|(c, q)| anchors[*c] + q).collect();
    let dipoles = frame.dipole_comp.iter().zip(&frame.dipoles).map(|(c, p)| anchors[*c] + p).collect();
    let mut model = GreenModel {
        charges,
        weights,
        dipoles,
        moments,
        robin_constant,
        source: set.clone(),
        residual_norm: f64::INFINITY,
        condition: sol.condition,
        charges_per_component: n_charges,
        local: frame,
    };
    let check: Vec<(usize, Point)> = local_shapes
        .iter()
        .enumerate()
        .flat_map(|(ci, s)| place_boundary(s, 4 * n_colloc, 0.5).into_iter().map(move |z| (ci, z)))
        .collect();
    model.residual_norm = check.par_iter().map(|&(ci, z)| model.value_local(ci, z).abs()).reduce(|| 0.0, f64::max);
    if !model.residual_norm.is_finite() {
        return Err(PotentialError::IllConditioned(sol.condition));
    }
    Ok(model)
}

/// Fits the charge model. With `refine`, the counts are doubled (up to 1024
/// charges per component) while the residual exceeds [`MAX_RESIDUAL`], the
/// best model is kept, and a residual still above it is an error. Without
/// `refine` the single fit is returned whatever its residual, for
/// convergence studies.
pub fn solve_green(set: &CompactSet, opts: GreenOptions) -> Result<GreenModel> {
    let GreenOptions { charges_per_component: nq, colloc_per_component: nc, refine } = opts;
    if nq < 16 {
        return Err(PotentialError::BadParameters(format!("need at least 16 charges per component, got {nq}")));
    }
    if nc < 2 * nq {
        return Err(PotentialError::BadParameters(format!(
            "need at least twice as many collocation points as charges ({nc} < 2·{nq})"
        )));
    }
    let mut best = solve_once(set, nq, nc)?;
    let (mut q, mut c) = (nq, nc);
    while refine && best.residual_norm > MAX_RESIDUAL && 2 * q <= MAX_REFINED_CHARGES {
        q *= 2;
        c *= 2;
        let next = solve_once(set, q, c)?;
        if next.residual_norm < best.residual_norm {
            best = next;
        }
    }
    if refine && best.residual_norm > MAX_RESIDUAL {
        return Err(PotentialError::ResidualTooLarge(best.residual_norm));
    }
    Ok(best)
}

/// `g_Ω(z, ∞)` for `z` outside `L`.
pub fn eval_green(model: &GreenModel, z: Point) -> Result<f64> {
    if model.source.distance(z) == 0.0 {
        return Err(PotentialError::PointInsideSet(z));
    }
    Ok(model.value(z))
}

/// Logarithmic capacity `exp(-γ)`.
pub fn capacity(model: &GreenModel) -> f64 {
    (-model.robin_constant).exp()
}

/// Golden-section maximization of `f` on `[a, b]`.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        }
    }
    if f1 > f2 { (x1, f1) } else { (x2, f2) }
}

/// Max of `f` over a closed curve parametrized on `[0, 1)`: dense scan then
/// golden-section refinement around the discrete argmax.
fn curve_max(f: impl Fn(f64) -> f64 + Sync, samples: usize) -> (f64, f64) {
    let vals: Vec<f64> = (0..samples).into_par_iter().map(|k| f(k as f64 / samples as f64)).collect();
    let (k, &v) =
        vals.iter().enumerate().fold((0, &f64::NEG_INFINITY), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
    let h = 1.0 / samples as f64;
    let t0 = k as f64 * h;
    let (t, fv) = golden_max(&f, t0 - h, t0 + h, 60);
    if fv > v { (t.rem_euclid(1.0), fv) } else { (t0, v) }
}

/// Max of `g` over a closed disk disjoint from the model's set, taken on the
/// boundary circle (maximum principle). Returns the raw `g` maximum.
pub fn max_green_over_disk(model: &GreenModel, center: Point, radius: f64) -> Result<f64> {
    let disk = Shape::disk(center, radius);
    if model.source.components().iter().any(|s| s.distance_to_shape(&disk) == 0.0) {
        return Err(PotentialError::DiskIntersectsSet);
    }
    let (_, v) = curve_max(|t| model.value(center + Point::from_polar(radius, TAU * t)), 4096);
    Ok(v)
}

/// Max of `g` over a shape disjoint from the model's set, taken on its boundary.
pub fn max_green_over_shape(model: &GreenModel, shape: &Shape) -> Result<f64> {
    match shape {
        Shape::Disk { center, radius } => max_green_over_disk(model, *center, *radius),
        Shape::Polygon(_) => {
            if model.source.components().iter().any(|s| s.distance_to_shape(shape) == 0.0) {
                return Err(PotentialError::DiskIntersectsSet);
            }
            let (_, v) = curve_max(|t| model.value(shape.boundary_point(t)), 8192);
            Ok(v)
        }
    }
}

/// `θ_{L,Δ} = max over Δ of exp(-g)`.
pub fn theta_for_contour(model: &GreenModel, family: &ContourFamily) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for c in family.contours() {
        if model.source.components().iter().any(|s| c.distance_to_shape(s) == 0.0) {
            return Err(PotentialError::ContourTouchesSet);
        }
        let samples = 512.max((c.length() / model.source.diameter() * 2048.0) as usize);
        let (_, v) = curve_max(|t| (-model.value(c.point_at(t))).exp(), samples);
        worst = worst.max(v);
    }
    Ok(worst)
}

/// One probe of the sublevel-set connectivity scan.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelProbe {
    pub level: f64,
    /// Number of distinct sublevel regions touching some component.
    pub component_count_below: usize,
    /// Pairs `(i, j)` of components sharing a region at this level.
    pub merged: Vec<(usize, usize)>,
}

/// The record of the bisection on level-set connectivity.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelAnalysis {
    pub probes: Vec<LevelProbe>,
    pub separated_below: f64,
    pub merged_above: f64,
}

struct Raster {
    nx: usize,
    ny: usize,
    /// Component index for cells meeting `L`.
    seed: Vec<Option<usize>>,
    value: Vec<f64>,
    origin: Point,
    h: f64,
}

impl Raster {
    fn center(&self, i: usize, j: usize) -> Point {
        self.origin + Point::new((i as f64 + 0.5) * self.h, (j as f64 + 0.5) * self.h)
    }

    fn build(model: &GreenModel, resolution: usize) -> Result<Raster> {
        let set = &model.source;
        let (lo, hi) = set.bbox();
        let pad = 0.05 * set.diameter();
        let lo = lo - Point::new(pad, pad);
        let hi = hi + Point::new(pad, pad);
        let span = hi - lo;
        let h = span.re.max(span.im) / resolution as f64;
        let nx = (span.re / h).ceil() as usize;
        let ny = (span.im / h).ceil() as usize;
        let reach = h * std::f64::consts::FRAC_1_SQRT_2;
        let cells: Vec<(Option<usize>, f64)> = (0..nx * ny)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx % nx, idx / nx);
                let z = lo + Point::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                let mut best: Option<(usize, f64)> = None;
                for (k, s) in set.components().iter().enumerate() {
                    let d = s.distance(z);
                    if d <= reach && best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((k, d));
                    }
                }
                match best {
                    Some((k, _)) => (Some(k), 0.0),
                    None => (None, model.value(z)),
                }
            })
            .collect();
        let (seed, value) = cells.into_iter().unzip();
        let raster = Raster { nx, ny, seed, value, origin: lo, h };
        let mut seen = vec![false; set.len()];
        for s in raster.seed.iter().flatten() {
            seen[*s] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(PotentialError::ResolutionTooCoarse(format!("component {k} has no raster cell")));
        }
        Ok(raster)
    }

    fn neighbours(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = (idx % self.nx, idx / self.nx);
        let mut out = [usize::MAX; 4];
        if i > 0 {
            out[0] = idx - 1;
        }
        if i + 1 < self.nx {
            out[1] = idx + 1;
        }
        if j > 0 {
            out[2] = idx - self.nx;
        }
        if j + 1 < self.ny {
            out[3] = idx + self.nx;
        }
        out.into_iter().filter(|&n| n != usize::MAX)
    }

    /// 4-connected flood fill of `{seed} ∪ {g < level}`.
    fn probe(&self, level: f64) -> LevelProbe {
        let n = self.nx * self.ny;
        let mut region = vec![usize::MAX; n];
        let mut owner: Vec<Vec<usize>> = Vec::new();
        let open = |k: usize| self.seed[k].is_some() || self.value[k] < level;
        let mut queue = VecDeque::new();
        for start in 0..n {
            if self.seed[start].is_none() || region[start] != usize::MAX {
                continue;
            }
            let id = owner.len();
            owner.push(Vec::new());
            region[start] = id;
            queue.push_back(start);
            while let Some(k) = queue.pop_front() {
                if let Some(c) = self.seed[k]
                    && !owner[id].contains(&c)
                {
                    owner[id].push(c);
                }
                for nb in self.neighbours(k) {
                    if region[nb] == usize::MAX && open(nb) {
                        region[nb] = id;
                        queue.push_back(nb);
                    }
                }
            }
        }
        let mut merged = Vec::new();
        for comps in &owner {
            let mut c = comps.clone();
            c.sort_unstable();
            for a in 0..c.len() {
                for b in (a + 1)..c.len() {
                    merged.push((c[a], c[b]));
                }
            }
        }
        merged.sort_unstable();
        LevelProbe { level, component_count_below: owner.len(), merged }
    }
}

/// Contour-route estimate of `ρ_L`: `exp(-s*)` where `s*` is the level at
/// which the sublevel sets of `g` around distinct components first merge.
///
/// The level is bracketed by bisection on raster connectivity, then refined
/// by Newton's method on `F'(z) = 0` started from the raster cells nearest
/// the merge level. With a refined saddle the bracket is its level widened by
/// the model residual, which bounds `|g - g_model|` off `L` and hence moves the
/// critical level by at most that much. Otherwise the raster bracket is used.
pub fn estimate_rho_green(model: &GreenModel, grid_resolution: usize) -> Result<RhoEstimate> {
    let set = &model.source;
    if set.len() < 2 {
        return Err(PotentialError::BadParameters("need at least two components".into()));
    }
    if grid_resolution < 128 {
        return Err(PotentialError::BadParameters(format!("grid resolution {grid_resolution} < 128")));
    }
    let raster = Raster::build(model, grid_resolution)?;
    let separated = |p: &LevelProbe| p.merged.is_empty();

    let start = raster.probe(0.0);
    if !separated(&start) {
        return Err(PotentialError::ResolutionTooCoarse("components share raster cells at level 0".into()));
    }
    let top = raster.value.iter().copied().fold(0.0, f64::max) + 1.0;
    let mut probes = vec![start];
    let (mut lo, mut hi) = (0.0, top);
    let end = raster.probe(hi);
    if separated(&end) {
        return Err(PotentialError::ResolutionTooCoarse("components never merge on the raster".into()));
    }
    probes.push(end);
    while hi - lo >= LEVEL_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        let p = raster.probe(mid);
        if separated(&p) {
            lo = mid;
        } else {
            hi = mid;
        }
        probes.push(p);
    }

    let refined = refine_saddle(model, &raster, lo, hi);
    let model_err = 2.0 * model.residual_norm + 1e-9;
    let (value_level, s_lo, s_hi, saddle) = match refined {
        Some((z, s)) => (s, s - model_err, s + model_err, Some(z)),
        None => (0.5 * (lo + hi), lo - model_err, hi + model_err, None),
    };
    let s_lo = s_lo.max(1e-12);
    let diagnostics = json!({
        "raster_bracket": [lo, hi],
        "raster_cell": raster.h,
        "raster_size": [raster.nx, raster.ny],
        "bisection_steps": probes.len(),
        "saddle_point": saddle.map(|z| [z.re, z.im]),
        "saddle_level": value_level,
        "residual_norm": model.residual_norm,
        "charges_per_component": model.charges_per_component,
    });
    Ok(RhoEstimate::new((-value_level).exp(), (-s_hi).exp(), (-s_lo).exp(), RhoMethod::GreenSaddle, diagnostics))
}

/// Level-set connectivity scan used by [`estimate_rho_green`], exposed for
/// plotting and diagnostics.
pub fn level_analysis(model: &GreenModel, grid_resolution: usize, levels: &[f64]) -> Result<LevelAnalysis> {
    let raster = Raster::build(model, grid_resolution)?;
    let mut sorted = levels.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    let probes: Vec<LevelProbe> = sorted.iter().map(|&s| raster.probe(s)).collect();
    let separated_below = probes.iter().filter(|p| p.merged.is_empty()).map(|p| p.level).fold(0.0, f64::max);
    let merged_above = probes.iter().filter(|p| !p.merged.is_empty()).map(|p| p.level).fold(f64::INFINITY, f64::min);
    Ok(LevelAnalysis { probes, separated_below, merged_above })
}

/// Newton on `F'(z) = 0` from the raster cells in the merge band with the
/// smallest gradient. Returns the saddle point and its level.
fn refine_saddle(model: &GreenModel, raster: &Raster, lo: f64, hi: f64) -> Option<(Point, f64)> {
    let set = &model.source;
    let mut max_grad: f64 = 0.0;
    let mut band: Vec<(f64, Point)> = Vec::new();
    let slack = 0.5 * (hi - lo) + LEVEL_TOLERANCE;
    for j in 0..raster.ny {
        for i in 0..raster.nx {
            let k = j * raster.nx + i;
            if raster.seed[k].is_some() {
                continue;
            }
            let v = raster.value[k];
            let z = raster.center(i, j);
            let grad = model.derivative(z).norm();
            if (v - 0.5 * (lo + hi)).abs() <= slack + grad * raster.h {
                max_grad = max_grad.max(grad);
                band.push((grad, z));
            }
        }
    }
    band.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.re.partial_cmp(&b.1.re).unwrap()));
    let accept = slack + 2.0 * max_grad * raster.h + 1e-3;
    let mut best: Option<(Point, f64)> = None;
    for &(_, z0) in band.iter().take(32) {
        let mut z = z0;
        let mut ok = false;
        for _ in 0..50 {
            let d1 = model.derivative(z);
            let d2 = model.second_derivative(z);
            if d2.norm() == 0.0 {
                break;
            }
            let step = d1 / d2;
            z -= step;
            if step.norm() <= 1e-14 * (1.0 + z.norm()) {
                ok = true;
                break;
            }
        }
        if !ok || set.distance(z) == 0.0 || (z - z0).norm() > 4.0 * raster.h {
            continue;
        }
        let s = model.value(z);
        if (s - 0.5 * (lo + hi)).abs() > accept {
            continue;
        }
        if best.is_none_or(|(_, bs)| (s - 0.5 * (lo + hi)).abs() < (bs - 0.5 * (lo + hi)).abs()) {
            best = Some((z, s));
        }
    }
    best
}

/// Values of `g` (zero on `L`) on a regular grid over the padded bounding box,
/// row-major in `y` then `x`. Used for level-curve plots.
pub fn green_grid(model: &GreenModel, resolution: usize) -> Vec<(f64, f64, f64)> {
    let (lo, hi) = model.source.bbox();
    let pad = 0.25 * model.source.diameter();
    let lo = lo - Point::new(pad, pad);
    let hi = hi + Point::new(pad, pad);
    let span = hi - lo;
    let h = span.re.max(span.im) / resolution as f64;
    let nx = (span.re / h).ceil() as usize + 1;
    let ny = (span.im / h).ceil() as usize + 1;
    (0..nx * ny)
        .into_par_iter()
        .map(|idx| {
            let z = lo + Point::new((idx % nx) as f64 * h, (idx / nx) as f64 * h);
            (z.re, z.im, model.value_or_zero(z))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{JordanContour, build_contour_family, validate_set};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(re: f64, im: f64) -> Point {
        Point::new(re, im)
    }

    fn two_disks(theta0: f64) -> CompactSet {
        validate_set(vec![Shape::disk(p(0.0, 0.0), 1.0), Shape::disk(p(theta0, 0.0), 1.0)]).unwrap()
    }

    fn single(center: Point, r: f64) -> GreenModel {
        let set = CompactSet::new(vec![Shape::disk(center, r)]).unwrap();
        solve_green(&set, GreenOptions::default()).unwrap()
    }

    #[test]
    fn unit_disk_is_exact() {
        let m = single(p(0.0, 0.0), 1.0);
        assert!(m.residual_norm() < 1e-10, "{}", m.residual_norm());
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((eval_green(&m, p(2.0, 0.0)).unwrap() - 2f64.ln()).abs() < 1e-8);
        assert!((eval_green(&m, p(1e6, 0.0)).unwrap() - 1e6f64.ln()).abs() < 1e-6);
        assert!((capacity(&m) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn shifted_disk_matches_closed_form() {
        let m = single(p(3.0, 0.0), 2.0);
        for z in [p(6.0, 1.0), p(-4.0, 2.0), p(3.0, 9.0)] {
            let want = ((z - p(3.0, 0.0)).norm() / 2.0).ln();
            assert!((eval_green(&m, z).unwrap() - want).abs() < 1e-8);
        }
        let m3 = single(p(0.0, 0.0), 3.0);
        assert!((capacity(&m3) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn inside_points_rejected() {
        let m = single(p(0.0, 0.0), 1.0);
        assert_eq!(eval_green(&m, p(0.5, 0.0)), Err(PotentialError::PointInsideSet(p(0.5, 0.0))));
    }

    #[test]
    fn parameter_preconditions() {
        let set = two_disks(18.0);
        let bad = GreenOptions { charges_per_component: 8, colloc_per_component: 32, refine: true };
        assert!(matches!(solve_green(&set, bad), Err(PotentialError::BadParameters(_))));
        let bad = GreenOptions { charges_per_component: 32, colloc_per_component: 40, refine: true };
        assert!(matches!(solve_green(&set, bad), Err(PotentialError::BadParameters(_))));
    }

    #[test]
    fn max_over_disk_for_far_disk_complement() {
        let m = single(p(18.0, 0.0), 1.0);
        let v = max_green_over_disk(&m, p(0.0, 0.0), 1.0).unwrap();
        assert!((v - 19f64.ln()).abs() < 1e-9);
        let v = max_green_over_disk(&m, p(0.0, 0.0), 0.5).unwrap();
        assert!((v - 18.5f64.ln()).abs() < 1e-9);
        assert_eq!(max_green_over_disk(&m, p(17.5, 0.0), 1.0), Err(PotentialError::DiskIntersectsSet));
    }

    #[test]
    fn theta_two_disks_below_closed_form_bound() {
        let set = two_disks(18.0);
        let m = solve_green(&set, GreenOptions::default()).unwrap();
        let fam = crate::geometry::ContourFamily::new(
            &set,
            vec![
                JordanContour::Circle { center: p(0.0, 0.0), radius: 8.0 },
                JordanContour::Circle { center: p(18.0, 0.0), radius: 8.0 },
            ],
        )
        .unwrap();
        let theta = theta_for_contour(&m, &fam).unwrap();
        assert!(theta <= (19.0f64 / 80.0).sqrt(), "{theta}");
        assert!(theta > 0.0 && theta < 1.0);
    }

    #[test]
    fn hugging_contours_approach_one() {
        let set = two_disks(18.0);
        let m = solve_green(&set, GreenOptions::default()).unwrap();
        let mut prev = 0.0;
        for infl in [0.5, 0.1, 0.01, 1e-4] {
            let fam = build_contour_family(&set, infl).unwrap();
            let t = theta_for_contour(&m, &fam).unwrap();
            assert!(t > prev);
            prev = t;
        }
        assert!(prev > 0.999);
    }

    #[test]
    fn two_disk_saddle_estimate_below_half() {
        let set = two_disks(18.0);
        let m = solve_green(&set, GreenOptions::default()).unwrap();
        let est = estimate_rho_green(&m, 256).unwrap();
        assert!(est.lower <= est.value && est.value <= est.upper);
        assert!(est.value < 0.5);
        assert!(est.value > 1.0 / 17.0);
    }

    #[test]
    fn resolution_precondition() {
        let set = two_disks(18.0);
        let m = solve_green(&set, GreenOptions::default()).unwrap();
        assert!(matches!(estimate_rho_green(&m, 64), Err(PotentialError::BadParameters(_))));
    }

    #[test]
    fn harmonic_mean_value_property() {
        let set = two_disks(6.0);
        let m = solve_green(&set, GreenOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let z = p(rng.gen_range(-10.0..16.0), rng.gen_range(-8.0..8.0));
            let d = set.distance(z);
            if d < 0.05 {
                continue;
            }
            let h = 0.1 * d;
            let n = 64;
            let mean: f64 =
                (0..n).map(|k| m.value(z + Point::from_polar(h, TAU * k as f64 / n as f64))).sum::<f64>() / n as f64;
            let g = m.value(z);
            assert!((mean - g).abs() <= 1e-6 * g.abs().max(1e-3), "{z}: {mean} vs {g}");
        }
    }

    #[test]
    fn asymptotic_robin_constant() {
        let m = solve_green(&two_disks(18.0), GreenOptions::default()).unwrap();
        let dir = Point::from_polar(1.0, 0.3);
        let mut prev = f64::INFINITY;
        for r in [1e3, 1e4, 1e5, 1e6] {
            let diff = (m.value(dir * r) - r.ln() - m.robin_constant()).abs();
            assert!(diff < prev);
            prev = diff;
        }
        assert!(prev < 1e-4);
    }
}
