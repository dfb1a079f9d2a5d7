//! Complex polynomials, best uniform approximation of piecewise-polynomial
//! targets on `L`, and the approximation-route estimate of the asymptotic
//! convergence factor.
//!
//! Approximation works on boundary grids only (the error is analytic inside
//! each component, so its modulus peaks on the boundary). The basis is built
//! by Arnoldi orthogonalization of `1, x, x², ...` on the grid, with
//! `x = (z - c)/s` centred on the grid centroid; this stays well conditioned
//! at degrees where the plain monomial basis is useless on widely separated
//! components.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::geometry::{CompactSet, GeometryError, Point};
use crate::linalg::lstsq;
use crate::potential::{GreenModel, PotentialError};

pub type Complex = Complex64;

/// Lawson stops once `(d_hat - lower) / d_hat` falls below this.
pub const LAWSON_TOLERANCE: f64 = 1e-3;
pub const LAWSON_MAX_ITER: usize = 200;
/// Minimum boundary points per component per unit of `n + 1`.
pub const GRID_FACTOR: usize = 8;
/// Largest degree accepted by [`deviation_sequence`].
pub const MAX_SEQUENCE_DEGREE: usize = 60;
/// Deviations below this are treated as round-off.
pub const DEVIATION_FLOOR: f64 = 1e-13;
pub const MIN_FIT_RECORDS: usize = 8;
pub const MIN_FIT_R2: f64 = 0.98;
pub const BERNSTEIN_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Error)]
pub enum MinimaxError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("grid too coarse: {got} points per component, need at least {need}")]
    GridTooCoarse { need: usize, got: usize },
    #[error("Lawson iteration did not converge (d_hat {:e}, lower {:e})", .record.d_hat, .record.lower_bound)]
    NonConvergence { record: Box<DeviationRecord> },
    #[error("weighted least squares failed at degree {0}")]
    Singular(usize),
    #[error("need at least {MIN_FIT_RECORDS} deviations above {DEVIATION_FLOOR:e}, got {0}")]
    InsufficientRecords(usize),
    #[error("deviations span only {0:.2} decades, need 2")]
    InsufficientDecadeRange(f64),
    #[error("Bernstein inequality violated at {point}: lhs {lhs} > rhs {rhs}")]
    ViolationFound { point: Point, lhs: f64, rhs: f64 },
}

pub type Result<T> = std::result::Result<T, MinimaxError>;

/// Anything that evaluates like a complex polynomial.
pub trait ComplexPolynomial {
    fn eval(&self, z: Point) -> Complex;
    fn degree(&self) -> usize;
}

/// `Σ_k c_k (z - center)^k` with trailing exact zeros trimmed.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialC {
    center: Point,
    coeffs: Vec<Complex>,
}

impl PolynomialC {
    pub fn new(center: Point, mut coeffs: Vec<Complex>) -> Self {
        while coeffs.len() > 1 && coeffs.last() == Some(&Complex::new(0.0, 0.0)) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(Complex::new(0.0, 0.0));
        }
        Self { center, coeffs }
    }

    /// Real coefficients about the origin.
    pub fn from_real(coeffs: &[f64]) -> Self {
        Self::new(Point::new(0.0, 0.0), coeffs.iter().map(|&c| Complex::new(c, 0.0)).collect())
    }

    pub fn constant(c: f64) -> Self {
        Self::from_real(&[c])
    }

    pub fn center(&self) -> Point {
        self.center
    }

    pub fn coeffs(&self) -> &[Complex] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == Complex::new(0.0, 0.0))
    }

    /// Same polynomial expanded about `z0` (Taylor shift by repeated
    /// synthetic division).
    pub fn recenter(&self, z0: Point) -> PolynomialC {
        let delta = z0 - self.center;
        let mut a = self.coeffs.clone();
        let n = a.len();
        if delta != Complex::new(0.0, 0.0) {
            for i in 0..n {
                for k in (i..n - 1).rev() {
                    let next = a[k + 1];
                    a[k] += delta * next;
                }
            }
        }
        PolynomialC::new(z0, a)
    }

    pub fn truncate(&self, n: usize) -> PolynomialC {
        PolynomialC::new(self.center, self.coeffs.iter().take(n + 1).copied().collect())
    }

    pub fn scale(&self, s: Complex) -> PolynomialC {
        PolynomialC::new(self.center, self.coeffs.iter().map(|c| c * s).collect())
    }

    /// Sum, expressed about `self`'s center.
    pub fn add(&self, other: &PolynomialC) -> PolynomialC {
        let other = other.recenter(self.center);
        let n = self.coeffs.len().max(other.coeffs.len());
        let get = |v: &[Complex], i: usize| v.get(i).copied().unwrap_or_default();
        PolynomialC::new(self.center, (0..n).map(|i| get(&self.coeffs, i) + get(&other.coeffs, i)).collect())
    }
}

impl ComplexPolynomial for PolynomialC {
    fn eval(&self, z: Point) -> Complex {
        let w = z - self.center;
        self.coeffs.iter().rev().fold(Complex::new(0.0, 0.0), |acc, c| acc * w + c)
    }

    fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }
}

/// Partial sum `S_n(p, z0)`: `p` re-expanded about `z0` and truncated to degree `n`.
pub fn partial_sum(p: &PolynomialC, n: usize, z0: Point) -> PolynomialC {
    p.recenter(z0).truncate(n)
}

/// One polynomial per component of `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseTarget {
    pieces: Vec<PolynomialC>,
}

impl PiecewiseTarget {
    pub fn new(pieces: Vec<PolynomialC>) -> Self {
        Self { pieces }
    }

    /// Constant `values[i]` on component `i`.
    pub fn constants(values: &[f64]) -> Self {
        Self::new(values.iter().map(|&v| PolynomialC::constant(v)).collect())
    }

    pub fn pieces(&self) -> &[PolynomialC] {
        &self.pieces
    }

    /// Pieces are pairwise different as polynomials.
    pub fn pieces_distinct(&self) -> bool {
        let same = |a: &PolynomialC, b: &PolynomialC| {
            let d = a.add(&b.scale(Complex::new(-1.0, 0.0)));
            d.coeffs.iter().all(|c| c.norm() <= 1e-14 * (1.0 + a.coeffs[0].norm()))
        };
        (0..self.pieces.len()).all(|i| ((i + 1)..self.pieces.len()).all(|j| !same(&self.pieces[i], &self.pieces[j])))
    }

    fn check(&self, set: &CompactSet) -> Result<()> {
        if self.pieces.len() != set.len() {
            return Err(MinimaxError::Precondition(format!(
                "target has {} pieces for {} components",
                self.pieces.len(),
                set.len()
            )));
        }
        Ok(())
    }
}

/// Orthonormal polynomial basis on a point set, stored as its Arnoldi
/// recurrence so it can be evaluated anywhere.
#[derive(Debug, Clone)]
pub struct ArnoldiBasis {
    center: Point,
    scale: f64,
    /// `hess[k]` holds the coefficients `h_{0..=k+1, k}` of step `k`.
    hess: Vec<Vec<Complex>>,
}

impl ArnoldiBasis {
    /// Builds the basis up to `degree` on `points`; returns it with the
    /// `points.len() × (degree + 1)` value matrix.
    pub fn build(points: &[Point], degree: usize) -> Option<(Self, DMatrix<Complex>)> {
        let m = points.len();
        if m <= degree {
            return None;
        }
        let center: Point = points.iter().sum::<Point>() / m as f64;
        let scale = points.iter().map(|z| (z - center).norm()).fold(0.0, f64::max);
        let x: Vec<Complex> = points.iter().map(|z| (z - center) / scale).collect();
        let mut q = DMatrix::<Complex>::zeros(m, degree + 1);
        q.column_mut(0).fill(Complex::new(1.0, 0.0));
        let mut hess = Vec::with_capacity(degree);
        let mf = m as f64;
        for k in 0..degree {
            let mut v: Vec<Complex> = (0..m).map(|i| x[i] * q[(i, k)]).collect();
            let mut h = vec![Complex::new(0.0, 0.0); k + 2];
            // Two passes of modified Gram-Schmidt.
            for _ in 0..2 {
                for j in 0..=k {
                    let mut dot = Complex::new(0.0, 0.0);
                    for i in 0..m {
                        dot += q[(i, j)].conj() * v[i];
                    }
                    dot /= mf;
                    for i in 0..m {
                        v[i] -= dot * q[(i, j)];
                    }
                    h[j] += dot;
                }
            }
            let norm = (v.iter().map(|c| c.norm_sqr()).sum::<f64>() / mf).sqrt();
            if !(norm > 0.0) {
                return None;
            }
            h[k + 1] = Complex::new(norm, 0.0);
            for i in 0..m {
                q[(i, k + 1)] = v[i] / norm;
            }
            hess.push(h);
        }
        Some((Self { center, scale, hess }, q))
    }

    pub fn degree(&self) -> usize {
        self.hess.len()
    }

    /// Values of basis polynomials `0..=n` at `z`.
    pub fn values(&self, z: Point, n: usize) -> Vec<Complex> {
        let x = (z - self.center) / self.scale;
        let mut q = Vec::with_capacity(n + 1);
        q.push(Complex::new(1.0, 0.0));
        for k in 0..n {
            let h = &self.hess[k];
            let mut v = x * q[k];
            for j in 0..=k {
                v -= h[j] * q[j];
            }
            q.push(v / h[k + 1]);
        }
        q
    }

    /// Monomial coefficients about `z0` of basis polynomials `0..=n`.
    fn monomials(&self, z0: Point, n: usize) -> Vec<Vec<Complex>> {
        // x = (w + (z0 - c)) / s with w = z - z0.
        let shift = (z0 - self.center) / self.scale;
        let inv = 1.0 / self.scale;
        let mut out: Vec<Vec<Complex>> = vec![vec![Complex::new(1.0, 0.0)]];
        for k in 0..n {
            let h = &self.hess[k];
            let prev = &out[k];
            let mut v = vec![Complex::new(0.0, 0.0); k + 2];
            for (i, c) in prev.iter().enumerate() {
                v[i] += c * shift;
                v[i + 1] += c * inv;
            }
            for j in 0..=k {
                for (i, c) in out[j].iter().enumerate() {
                    v[i] -= h[j] * c;
                }
            }
            for c in v.iter_mut() {
                *c /= h[k + 1];
            }
            out.push(v);
        }
        out
    }
}

/// A polynomial held as coefficients in an [`ArnoldiBasis`].
#[derive(Debug, Clone)]
pub struct Approximant {
    basis: std::sync::Arc<ArnoldiBasis>,
    coeffs: Vec<Complex>,
}

impl Approximant {
    pub fn coeffs(&self) -> &[Complex] {
        &self.coeffs
    }

    /// Monomial expansion about `z0`. Accurate evaluation far from the grid
    /// needs [`ComplexPolynomial::eval`] on the approximant itself.
    pub fn to_polynomial(&self, z0: Point) -> PolynomialC {
        let n = self.coeffs.len() - 1;
        let mons = self.basis.monomials(z0, n);
        let mut c = vec![Complex::new(0.0, 0.0); n + 1];
        for (a, m) in self.coeffs.iter().zip(&mons) {
            for (i, v) in m.iter().enumerate() {
                c[i] += a * v;
            }
        }
        PolynomialC::new(z0, c)
    }
}

impl ComplexPolynomial for Approximant {
    fn eval(&self, z: Point) -> Complex {
        let n = self.coeffs.len() - 1;
        self.basis.values(z, n).iter().zip(&self.coeffs).map(|(q, c)| q * c).sum()
    }

    fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }
}

/// One entry of a deviation sequence.
#[derive(Debug, Clone)]
pub struct DeviationRecord {
    pub n: usize,
    /// Max grid error of the witness: an upper bound on the grid minimax value.
    pub d_hat: f64,
    /// Weighted least-squares value: a lower bound on the grid minimax value.
    pub lower_bound: f64,
    pub witness: Approximant,
    pub iterations: usize,
    pub converged: bool,
}

/// Boundary grid of `L` with target values.
pub struct ApproxProblem {
    pub points: Vec<Point>,
    pub component: Vec<usize>,
    pub target: Vec<Complex>,
    basis: std::sync::Arc<ArnoldiBasis>,
    q: DMatrix<Complex>,
}

impl ApproxProblem {
    /// Grid with `per_component` boundary samples per component and a basis up
    /// to `degree`.
    pub fn new(set: &CompactSet, target: &PiecewiseTarget, degree: usize, per_component: usize) -> Result<Self> {
        target.check(set)?;
        let need = GRID_FACTOR * (degree + 1);
        if per_component < need {
            return Err(MinimaxError::GridTooCoarse { need, got: per_component });
        }
        let mut points = Vec::new();
        let mut component = Vec::new();
        let mut values = Vec::new();
        for (k, (s, piece)) in set.components().iter().zip(target.pieces()).enumerate() {
            for z in s.boundary_sample(per_component)? {
                points.push(z);
                component.push(k);
                values.push(piece.eval(z));
            }
        }
        let (basis, q) =
            ArnoldiBasis::build(&points, degree).ok_or(MinimaxError::GridTooCoarse { need, got: per_component })?;
        Ok(Self { points, component, target: values, basis: std::sync::Arc::new(basis), q })
    }

    /// Same grid and basis, new target values.
    pub fn with_target(&self, set: &CompactSet, target: &PiecewiseTarget) -> Result<Self> {
        target.check(set)?;
        let values = self.points.iter().zip(&self.component).map(|(z, &k)| target.pieces()[k].eval(*z)).collect();
        Ok(Self {
            points: self.points.clone(),
            component: self.component.clone(),
            target: values,
            basis: self.basis.clone(),
            q: self.q.clone(),
        })
    }

    pub fn max_degree(&self) -> usize {
        self.basis.degree()
    }

    fn errors(&self, coeffs: &[Complex]) -> Vec<f64> {
        let n = coeffs.len();
        (0..self.points.len())
            .map(|i| {
                let mut v = self.target[i];
                for (k, c) in coeffs.iter().enumerate().take(n) {
                    v -= self.q[(i, k)] * c;
                }
                v.norm()
            })
            .collect()
    }

    /// Max grid error of a candidate with basis coefficients `coeffs`.
    pub fn max_error(&self, coeffs: &[Complex]) -> f64 {
        self.errors(coeffs).into_iter().fold(0.0, f64::max)
    }

    pub fn approximant(&self, coeffs: Vec<Complex>) -> Approximant {
        Approximant { basis: self.basis.clone(), coeffs }
    }

    /// Lawson iteration (exponent 1) for degree `n`.
    pub fn lawson(&self, n: usize, max_iter: usize) -> Result<DeviationRecord> {
        assert!(n <= self.max_degree());
        let m = self.points.len();
        let mut w = vec![1.0 / m as f64; m];
        let mut best: Option<(f64, Vec<Complex>)> = None;
        let mut lower: f64 = 0.0;
        let mut iterations = 0;
        let mut converged = false;
        for it in 0..max_iter {
            iterations = it + 1;
            let mut a = DMatrix::<Complex>::zeros(m, n + 1);
            let mut b = DVector::<Complex>::zeros(m);
            for i in 0..m {
                let sw = w[i].sqrt();
                for k in 0..=n {
                    a[(i, k)] = self.q[(i, k)] * sw;
                }
                b[i] = self.target[i] * sw;
            }
            let Some(sol) = lstsq(a, &b) else {
                if best.is_some() {
                    break;
                }
                return Err(MinimaxError::Singular(n));
            };
            let coeffs: Vec<Complex> = sol.x.iter().copied().collect();
            let err = self.errors(&coeffs);
            let dmax = err.iter().copied().fold(0.0, f64::max);
            let weighted = err.iter().zip(&w).map(|(e, wi)| wi * e * e).sum::<f64>().sqrt();
            lower = lower.max(weighted);
            if best.as_ref().is_none_or(|(d, _)| dmax < *d) {
                best = Some((dmax, coeffs));
            }
            let d_best = best.as_ref().unwrap().0;
            if d_best - lower <= LAWSON_TOLERANCE * d_best || d_best == 0.0 {
                converged = true;
                break;
            }
            let total: f64 = err.iter().zip(&w).map(|(e, wi)| wi * e).sum();
            if !(total > 0.0) {
                break;
            }
            for (wi, e) in w.iter_mut().zip(&err) {
                *wi *= e / total;
            }
        }
        let (d_hat, coeffs) = best.expect("at least one Lawson step");
        let record = DeviationRecord {
            n,
            d_hat,
            lower_bound: lower.min(d_hat),
            witness: self.approximant(coeffs),
            iterations,
            converged,
        };
        if converged { Ok(record) } else { Err(MinimaxError::NonConvergence { record: Box::new(record) }) }
    }
}

/// Best uniform approximation of `target` on the boundary grid of `set` by a
/// polynomial of degree at most `n`. `NonConvergence` still carries a valid
/// upper bound in its record.
pub fn best_polynomial(
    set: &CompactSet,
    target: &PiecewiseTarget,
    n: usize,
    grid_density: usize,
) -> Result<DeviationRecord> {
    let problem = ApproxProblem::new(set, target, n, grid_density)?;
    problem.lawson(n, LAWSON_MAX_ITER)
}

/// Lawson records for `n_min..=n_max` on one grid. A degree whose Lawson
/// witness is worse than the previous one reuses the previous witness, so
/// `d_hat` never increases. Unconverged records are kept (their `d_hat` is
/// still an upper bound) with `converged = false`.
pub fn deviation_sequence(
    set: &CompactSet,
    target: &PiecewiseTarget,
    n_min: usize,
    n_max: usize,
    grid_density: usize,
) -> Result<Vec<DeviationRecord>> {
    if n_min < 1 || n_min >= n_max || n_max > MAX_SEQUENCE_DEGREE {
        return Err(MinimaxError::Precondition(format!(
            "need 1 <= n_min < n_max <= {MAX_SEQUENCE_DEGREE}, got {n_min}..{n_max}"
        )));
    }
    let problem = ApproxProblem::new(set, target, n_max, grid_density)?;
    sequence_on(&problem, n_min, n_max)
}

/// [`deviation_sequence`] on a prepared grid.
pub fn sequence_on(problem: &ApproxProblem, n_min: usize, n_max: usize) -> Result<Vec<DeviationRecord>> {
    let mut out: Vec<DeviationRecord> = Vec::with_capacity(n_max - n_min + 1);
    for n in n_min..=n_max {
        let mut rec = match problem.lawson(n, LAWSON_MAX_ITER) {
            Ok(r) => r,
            Err(MinimaxError::NonConvergence { record }) => *record,
            Err(e) => return Err(e),
        };
        if let Some(prev) = out.last()
            && rec.d_hat > prev.d_hat
        {
            let mut c = prev.witness.coeffs.clone();
            c.resize(n + 1, Complex::new(0.0, 0.0));
            rec.d_hat = problem.max_error(&c).min(prev.d_hat);
            rec.witness = problem.approximant(c);
            rec.lower_bound = rec.lower_bound.min(rec.d_hat);
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhoMethod {
    GreenSaddle,
    DeviationFit,
}

/// An estimate of `ρ_L` with a bracket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoEstimate {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub method: RhoMethod,
    pub diagnostics: serde_json::Value,
}

impl RhoEstimate {
    pub fn new(value: f64, lower: f64, upper: f64, method: RhoMethod, diagnostics: serde_json::Value) -> Self {
        debug_assert!(lower <= value && value <= upper, "{lower} <= {value} <= {upper}");
        Self { value, lower, upper, method, diagnostics }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Least-squares line through `(x, y)`: (slope, intercept, r², slope standard error).
fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let se = if n > 2.0 { (sse / (n - 2.0) / sxx).sqrt() } else { f64::INFINITY };
    (slope, intercept, r2, se)
}

/// How `ln d_hat` is regressed on `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitModel {
    /// `ln d_n ≈ a + n ln ρ`.
    LogLinear,
    /// `ln d_n + ½ ln n ≈ a + n ln ρ`, i.e. `d_n ≈ C ρ^n / √n`. Minimax
    /// errors of piecewise targets carry this prefactor, and ignoring it
    /// biases the fitted rate low by a few percent at degrees below 50.
    SqrtPrefactor,
}

impl FitModel {
    fn transform(self, n: f64, d: f64) -> f64 {
        match self {
            FitModel::LogLinear => d.ln(),
            FitModel::SqrtPrefactor => d.ln() + 0.5 * n.ln(),
        }
    }
}

/// `exp(slope)` of `ln d_hat` against `n` over the longest tail with a good
/// linear fit; the bracket is slope ± 2 standard errors.
pub fn rho_from_deviations(records: &[(usize, f64)]) -> Result<RhoEstimate> {
    rho_from_deviations_with(records, FitModel::LogLinear)
}

/// [`rho_from_deviations`] with a choice of regression model.
pub fn rho_from_deviations_with(records: &[(usize, f64)], model: FitModel) -> Result<RhoEstimate> {
    let kept: Vec<(usize, f64)> = records.iter().copied().filter(|(_, d)| *d > DEVIATION_FLOOR).collect();
    if kept.len() < MIN_FIT_RECORDS {
        return Err(MinimaxError::InsufficientRecords(kept.len()));
    }
    let (hi, lo) =
        kept.iter().fold((f64::NEG_INFINITY, f64::INFINITY), |(h, l), (_, d)| (h.max(d.ln()), l.min(d.ln())));
    let decades = (hi - lo) / std::f64::consts::LN_10;
    if decades < 2.0 {
        return Err(MinimaxError::InsufficientDecadeRange(decades));
    }
    let usable: Vec<(f64, f64)> = kept.iter().map(|&(n, d)| (n as f64, model.transform(n as f64, d))).collect();
    let mut chosen = None;
    for start in 0..=(usable.len() - MIN_FIT_RECORDS) {
        let (x, y): (Vec<f64>, Vec<f64>) = usable[start..].iter().copied().unzip();
        let fit = fit_line(&x, &y);
        if fit.2 >= MIN_FIT_R2 {
            chosen = Some((start, fit));
            break;
        }
    }
    let fallback = chosen.is_none();
    let (start, (slope, intercept, r2, se)) = chosen.unwrap_or_else(|| {
        let start = usable.len() - MIN_FIT_RECORDS;
        let (x, y): (Vec<f64>, Vec<f64>) = usable[start..].iter().copied().unzip();
        (start, fit_line(&x, &y))
    });
    let diagnostics = json!({
        "fit_model": model,
        "fit_first_n": usable[start].0,
        "fit_last_n": usable[usable.len() - 1].0,
        "fit_points": usable.len() - start,
        "r2": r2,
        "slope": slope,
        "slope_stderr": se,
        "intercept": intercept,
        "r2_threshold_met": !fallback,
    });
    Ok(RhoEstimate::new(
        slope.exp(),
        (slope - 2.0 * se).exp(),
        (slope + 2.0 * se).exp(),
        RhoMethod::DeviationFit,
        diagnostics,
    ))
}

/// Deviation-fit estimate straight from a set and target.
pub fn estimate_rho_deviation(
    set: &CompactSet,
    target: &PiecewiseTarget,
    n_min: usize,
    n_max: usize,
    grid_density: usize,
    model: FitModel,
) -> Result<(RhoEstimate, Vec<DeviationRecord>)> {
    let records = deviation_sequence(set, target, n_min, n_max, grid_density)?;
    let pairs: Vec<(usize, f64)> = records.iter().map(|r| (r.n, r.d_hat)).collect();
    let mut est = rho_from_deviations_with(&pairs, model)?;
    let plain = rho_from_deviations(&pairs)?;
    if let serde_json::Value::Object(m) = &mut est.diagnostics {
        m.insert("log_linear_value".into(), json!(plain.value));
        m.insert("n_range".into(), json!([n_min, n_max]));
        m.insert("grid_per_component".into(), json!(grid_density));
        m.insert("unconverged".into(), json!(records.iter().filter(|r| !r.converged).count()));
    }
    Ok((est, records))
}

#[derive(Debug, Clone, Serialize)]
pub struct IndependenceReport {
    pub estimates: Vec<RhoEstimate>,
    pub max_spread: f64,
    pub pass: bool,
}

/// Runs the deviation fit for each target; passes when every pair of
/// estimates lies within `max(0.02, summed bracket widths)`.
pub fn target_independence_check(
    set: &CompactSet,
    targets: &[PiecewiseTarget],
    n_min: usize,
    n_max: usize,
    grid_density: usize,
    model: FitModel,
) -> Result<IndependenceReport> {
    if targets.len() < 2 {
        return Err(MinimaxError::Precondition("need at least two targets".into()));
    }
    if let Some(i) = targets.iter().position(|t| !t.pieces_distinct()) {
        return Err(MinimaxError::Precondition(format!("target {i} repeats a polynomial across components")));
    }
    let base_target = &targets[0];
    let base = ApproxProblem::new(set, base_target, n_max, grid_density)?;
    let mut estimates = Vec::with_capacity(targets.len());
    for t in targets {
        let problem = base.with_target(set, t)?;
        let records = sequence_on(&problem, n_min, n_max)?;
        let pairs: Vec<(usize, f64)> = records.iter().map(|r| (r.n, r.d_hat)).collect();
        estimates.push(rho_from_deviations_with(&pairs, model)?);
    }
    let mut pass = true;
    let mut spread: f64 = 0.0;
    for i in 0..estimates.len() {
        for j in (i + 1)..estimates.len() {
            let gap = (estimates[i].value - estimates[j].value).abs();
            spread = spread.max(gap);
            if gap > 0.02f64.max(estimates[i].width() + estimates[j].width()) {
                pass = false;
            }
        }
    }
    Ok(IndependenceReport { estimates, max_spread: spread, pass })
}

/// Sup norm of `p` over `L`, on dense boundary grids with golden-section
/// refinement around each component's discrete argmax.
pub fn sup_norm_on_set<P: ComplexPolynomial + Sync>(p: &P, set: &CompactSet) -> f64 {
    let per = 4096.max(64 * (p.degree() + 1));
    let mut best: f64 = 0.0;
    for s in set.components() {
        let vals: Vec<f64> =
            (0..per).into_par_iter().map(|k| p.eval(s.boundary_point(k as f64 / per as f64)).norm()).collect();
        let (k, v) = vals.iter().enumerate().fold((0, 0.0f64), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let h = 1.0 / per as f64;
        let f = |t: f64| p.eval(s.boundary_point(t)).norm();
        let (mut a, mut b) = (k as f64 * h - h, k as f64 * h + h);
        let r = (5f64.sqrt() - 1.0) / 2.0;
        let mut refined = v;
        for _ in 0..60 {
            let x1 = b - r * (b - a);
            let x2 = a + r * (b - a);
            let (f1, f2) = (f(x1), f(x2));
            refined = refined.max(f1).max(f2);
            if f1 < f2 { a = x1 } else { b = x2 }
        }
        best = best.max(refined);
    }
    best
}

#[derive(Debug, Clone, Serialize)]
pub struct BernsteinReport {
    pub degree: usize,
    pub sup_norm: f64,
    pub points_checked: usize,
    /// Smallest `rhs - lhs` over the test points.
    pub min_margin: f64,
    pub worst_point: [f64; 2],
}

/// Checks `(|p(z)| / ||p||_L)^(1/deg p) <= exp(g(z)) + 1e-6` at each test point.
pub fn bernstein_check<P: ComplexPolynomial + Sync>(
    p: &P,
    set: &CompactSet,
    model: &GreenModel,
    test_points: &[Point],
) -> Result<BernsteinReport> {
    let m = p.degree();
    if m < 1 {
        return Err(MinimaxError::Precondition("polynomial degree must be at least 1".into()));
    }
    if let Some(z) = test_points.iter().find(|z| set.distance(**z) == 0.0) {
        return Err(MinimaxError::Precondition(format!("test point {z} lies in the set")));
    }
    let norm = sup_norm_on_set(p, set);
    let mut min_margin = f64::INFINITY;
    let mut worst = Point::new(f64::NAN, f64::NAN);
    for &z in test_points {
        let lhs = (p.eval(z).norm() / norm).powf(1.0 / m as f64);
        let rhs = model.value(z).exp();
        let margin = rhs - lhs;
        if margin < min_margin {
            min_margin = margin;
            worst = z;
        }
        if lhs > rhs + BERNSTEIN_TOLERANCE {
            return Err(MinimaxError::ViolationFound { point: z, lhs, rhs });
        }
    }
    Ok(BernsteinReport {
        degree: m,
        sup_norm: norm,
        points_checked: test_points.len(),
        min_margin,
        worst_point: [worst.re, worst.im],
    })
}

/// Random exterior test points: uniform in angle around the set's bounding
/// box center, at distances reaching out to twice the diameter, skipping
/// points inside `L`.
pub fn exterior_points(set: &CompactSet, count: usize, seed: u64) -> Vec<Point> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = set.bbox();
    let c = 0.5 * (lo + hi);
    let reach = set.diameter();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let z = c + Point::from_polar(rng.gen_range(0.0..2.0 * reach), rng.gen_range(0.0..TAU));
        if set.distance(z) > 1e-3 * reach {
            out.push(z);
        }
    }
    out
}
