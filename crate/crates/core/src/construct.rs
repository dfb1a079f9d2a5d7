//! Constructive universality step for `β_n = λ^n` and traces of weighted
//! Taylor partial sums.
//!
//! For each degree `N` the witness `S` is the best polynomial approximant of
//! the piecewise target `F_N = (p0 on K0, λ^-N·u on Π)`. The search stops at
//! the first `N` for which `S` is within `eps0` of `p0` on `K0` and `λ^N·S`
//! is within `1/s0` of `u` on `Π`.

use std::ops::RangeInclusive;

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{CompactSet, GeometryError, Point};
use crate::minimax::{
    ComplexPolynomial, DEVIATION_FLOOR, GRID_FACTOR, MinimaxError, PiecewiseTarget, PolynomialC, RhoEstimate,
    best_polynomial,
};

pub type Complex = Complex64;

/// Largest degree searched by [`construct_step`].
pub const MAX_CONSTRUCT_DEGREE: usize = 200;
/// Validation grids are this many times denser than construction grids.
pub const VALIDATION_FACTOR: usize = 4;
/// Construction grids never use fewer points per component than this.
pub const MIN_CONSTRUCTION_GRID: usize = 64;
/// Degrees past `N0` added to the rate-envelope data.
pub const RATE_WINDOW: usize = 12;
/// Longest trace accepted by [`weighted_sum_trace`].
pub const MAX_TRACE_LENGTH: usize = 500;

#[derive(Debug, Clone, Error)]
pub enum ConstructError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Minimax(#[from] MinimaxError),
    #[error("invalid arguments: {0}")]
    Precondition(String),
    #[error("λ = {lambda} lies outside ({lo}, {hi}); no guarantee applies")]
    RefusedOutsideInterval { lambda: f64, lo: f64, hi: f64 },
    #[error(
        "no degree up to {n_max} met both bounds; best errors: K0 {best_k0:e} (at N = {best_k0_n}), Π {best_pi:e} (at N = {best_pi_n})"
    )]
    NotFoundWithinNmax {
        n_max: usize,
        best_k0: f64,
        best_k0_n: usize,
        best_pi: f64,
        best_pi_n: usize,
        trajectory: Vec<SearchRecord>,
    },
}

pub type Result<T> = std::result::Result<T, ConstructError>;

/// One degree of the search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchRecord {
    pub n: usize,
    /// `||S - p0||` on the `K0` validation grid.
    pub err_k0: f64,
    /// `||λ^N·S - u||` on the `Π` validation grid.
    pub err_pi: f64,
    /// `||F_N - S||_L` on the construction grid.
    pub deviation: f64,
    /// `deviation·|λ|^N`.
    pub weighted_deviation: f64,
    pub lawson_converged: bool,
}

/// Geometric envelope `constant·c0^N` bounding a positive sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateEnvelope {
    pub c0: f64,
    pub constant: f64,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniversalStep {
    pub n0: usize,
    #[serde(skip)]
    pub s: PolynomialC,
    pub err_k0: f64,
    pub err_pi: f64,
    /// `λ^N0`.
    #[serde(skip)]
    pub beta_n0: Complex,
    /// Search records for `N = 1..=N0`.
    pub trajectory: Vec<SearchRecord>,
    /// The search records followed by up to [`RATE_WINDOW`] further degrees,
    /// on which the envelope is fitted.
    pub rate_records: Vec<SearchRecord>,
    pub envelope: Option<RateEnvelope>,
}

/// Least-squares slope of `ln y` against `n`, then the smallest constant
/// making `constant·c0^n` an upper envelope. Needs two or more positive values.
pub fn fit_envelope(values: &[(usize, f64)]) -> Option<RateEnvelope> {
    let pts: Vec<(f64, f64)> =
        values.iter().filter(|(_, y)| *y > 0.0 && y.is_finite()).map(|&(n, y)| (n as f64, y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let log_const = pts.iter().map(|p| p.1 - slope * p.0).fold(f64::NEG_INFINITY, f64::max);
    Some(RateEnvelope { c0: slope.exp(), constant: log_const.exp(), records: pts.len() })
}

fn grid_max(set: &CompactSet, component: usize, per: usize, f: impl Fn(Point) -> Complex) -> Result<f64> {
    Ok(set.components()[component].boundary_sample(per)?.into_iter().map(|z| f(z).norm()).fold(0.0, f64::max))
}

/// Searches `N = 1..=n_max` for the first witness meeting both bounds.
///
/// `rho` is the set's `ρ_L` estimate; `λ` must lie in
/// `(rho.upper, 1/rho.upper)`.
#[allow(clippy::too_many_arguments)]
pub fn construct_step(
    set: &CompactSet,
    z0: Point,
    p0: &PolynomialC,
    u: &PolynomialC,
    eps0: f64,
    s0: u32,
    lambda: f64,
    n_max: usize,
    rho: &RhoEstimate,
) -> Result<UniversalStep> {
    if !(eps0 > 0.0) || s0 == 0 {
        return Err(ConstructError::Precondition(format!("need eps0 > 0 and s0 >= 1, got {eps0}, {s0}")));
    }
    if n_max == 0 || n_max > MAX_CONSTRUCT_DEGREE {
        return Err(ConstructError::Precondition(format!("n_max must be in 1..={MAX_CONSTRUCT_DEGREE}, got {n_max}")));
    }
    if u.is_zero() {
        return Err(ConstructError::Precondition("u must not be identically zero".into()));
    }
    if set.len() < 2 {
        return Err(GeometryError::TooFewComponents.into());
    }
    let (lo, hi) = (rho.upper, 1.0 / rho.upper);
    if !(lambda > lo && lambda < hi) {
        return Err(ConstructError::RefusedOutsideInterval { lambda, lo, hi });
    }
    let tol_pi = 1.0 / s0 as f64;
    let evaluate = |n: usize| -> Result<(SearchRecord, PolynomialC)> {
        let beta = lambda.powi(n as i32);
        let mut pieces = vec![p0.clone()];
        pieces.extend((1..set.len()).map(|_| u.scale(Complex::new(1.0 / beta, 0.0))));
        let target = PiecewiseTarget::new(pieces);
        let grid = MIN_CONSTRUCTION_GRID.max(GRID_FACTOR * (n + 1));
        let (record, converged) = match best_polynomial(set, &target, n, grid) {
            Ok(r) => (r, true),
            Err(MinimaxError::NonConvergence { record }) => (*record, false),
            Err(e) => return Err(e.into()),
        };
        let s = record.witness.to_polynomial(z0);
        let dense = VALIDATION_FACTOR * grid;
        let err_k0 = grid_max(set, 0, dense, |z| s.eval(z) - p0.eval(z))?;
        let mut err_pi: f64 = 0.0;
        for k in 1..set.len() {
            err_pi = err_pi.max(grid_max(set, k, dense, |z| s.eval(z) * beta - u.eval(z))?);
        }
        let rec = SearchRecord {
            n,
            err_k0,
            err_pi,
            deviation: record.d_hat,
            weighted_deviation: record.d_hat * beta.abs(),
            lawson_converged: converged,
        };
        Ok((rec, s))
    };
    let mut trajectory = Vec::new();
    for n in 1..=n_max {
        let (rec, s) = evaluate(n)?;
        let (err_k0, err_pi) = (rec.err_k0, rec.err_pi);
        trajectory.push(rec);
        if err_k0 < eps0 && err_pi < tol_pi {
            let mut rate_records = trajectory.clone();
            let last = (n + RATE_WINDOW).min(MAX_CONSTRUCT_DEGREE);
            for m in (n + 1)..=last {
                let (r, _) = evaluate(m)?;
                if r.deviation < DEVIATION_FLOOR {
                    break;
                }
                rate_records.push(r);
            }
            let weighted: Vec<(usize, f64)> = rate_records.iter().map(|r| (r.n, r.weighted_deviation)).collect();
            return Ok(UniversalStep {
                n0: n,
                s,
                err_k0,
                err_pi,
                beta_n0: Complex::new(lambda.powi(n as i32), 0.0),
                envelope: fit_envelope(&weighted),
                trajectory,
                rate_records,
            });
        }
    }
    let best = |f: fn(&SearchRecord) -> f64| {
        trajectory.iter().map(|r| (f(r), r.n)).fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
    };
    let (best_k0, best_k0_n) = best(|r| r.err_k0);
    let (best_pi, best_pi_n) = best(|r| r.err_pi);
    Err(ConstructError::NotFoundWithinNmax { n_max, best_k0, best_k0_n, best_pi, best_pi_n, trajectory })
}

/// Complex number `m·2^e` with the exponent kept apart so that partial sums
/// far outside the `f64` range stay representable. Rescaling by powers of
/// two is exact, so values that fit in `f64` come out correctly rounded.
#[derive(Debug, Clone, Copy)]
struct Wide {
    m: Complex,
    e: i64,
}

const WIDE_LIMIT: f64 = 1e150;

impl Wide {
    fn new(m: Complex) -> Self {
        Wide { m, e: 0 }.norm()
    }

    fn norm(mut self) -> Self {
        let a = self.m.re.abs().max(self.m.im.abs());
        if a == 0.0 || !a.is_finite() {
            return self;
        }
        if !(1.0 / WIDE_LIMIT..=WIDE_LIMIT).contains(&a) {
            let shift = a.log2().floor() as i64;
            self.m *= 2f64.powi(-shift as i32);
            self.e += shift;
        }
        self
    }

    fn mul(self, z: Complex) -> Self {
        Wide { m: self.m * z, e: self.e }.norm()
    }

    fn add(self, z: Complex) -> Self {
        if self.e == 0 {
            return Wide { m: self.m + z, e: 0 }.norm();
        }
        let scaled = if self.e > 1000 {
            Complex::new(0.0, 0.0)
        } else if self.e < -1000 {
            return Wide::new(z);
        } else {
            z * 2f64.powi(-self.e as i32)
        };
        Wide { m: self.m + scaled, e: self.e }.norm()
    }

    /// `|self| / |d|` as `(value, log10 value)`; the value saturates.
    fn ratio_abs(self, d: Wide) -> (f64, f64) {
        let q = self.m.norm() / d.m.norm();
        let e = self.e - d.e;
        let log10 = q.log10() + e as f64 * std::f64::consts::LOG10_2;
        let value = if e.abs() > 4000 {
            if e > 0 { f64::INFINITY } else { 0.0 }
        } else {
            let half = (e / 2) as i32;
            q * 2f64.powi(half) * 2f64.powi(e as i32 - half)
        };
        (value, log10)
    }
}

fn real_power(base: f64, n: usize) -> Wide {
    let mut acc = Wide::new(Complex::new(1.0, 0.0));
    for _ in 0..n {
        acc = acc.mul(Complex::new(base, 0.0));
    }
    acc
}

/// One point of a weighted partial-sum trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub n: usize,
    /// `|λ^n·S_n(f, z0)(w)|`, saturating to `0` or `inf` outside the `f64` range.
    pub modulus: f64,
    pub log10_modulus: f64,
}

/// `|λ^n·S_n(f, z0)(w)|` for `n` in `n_range`, where `f_coeffs` are Taylor
/// coefficients of `f` about `z0` (missing ones are zero). Each partial sum is
/// evaluated by Horner's rule on its own truncation. For `|λ| < 1` the result
/// is formed as `S_n(w) / (1/|λ|)^n`.
pub fn weighted_sum_trace(
    f_coeffs: &[Complex],
    z0: Point,
    lambda: f64,
    w: Point,
    n_range: RangeInclusive<usize>,
) -> Result<Vec<TracePoint>> {
    if f_coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) || !lambda.is_finite() {
        return Err(ConstructError::Precondition("coefficients and λ must be finite".into()));
    }
    if n_range.is_empty() || n_range.clone().count() > MAX_TRACE_LENGTH {
        return Err(ConstructError::Precondition(format!("n range must hold 1..={MAX_TRACE_LENGTH} values")));
    }
    let t = w - z0;
    let coeff = |k: usize| f_coeffs.get(k).copied().unwrap_or_default();
    let a = lambda.abs();
    let out = n_range
        .map(|n| {
            let mut s = Wide::new(coeff(n));
            for k in (0..n).rev() {
                s = s.mul(t).add(coeff(k));
            }
            let (modulus, log10_modulus) = if a == 0.0 {
                if n == 0 { s.ratio_abs(Wide::new(Complex::new(1.0, 0.0))) } else { (0.0, f64::NEG_INFINITY) }
            } else if a < 1.0 {
                s.ratio_abs(real_power(1.0 / a, n))
            } else {
                let p = real_power(a, n);
                let num = Wide { m: s.m * p.m, e: s.e + p.e }.norm();
                num.ratio_abs(Wide::new(Complex::new(1.0, 0.0)))
            };
            TracePoint { n, modulus, log10_modulus }
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::OnceLock;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::geometry::Shape;
    use crate::minimax::partial_sum;
    use crate::potential::{GreenOptions, estimate_rho_green, solve_green};

    fn ex31() -> CompactSet {
        CompactSet::new(vec![Shape::disk(Point::new(0.0, 0.0), 1.0), Shape::disk(Point::new(18.0, 0.0), 1.0)]).unwrap()
    }

    fn rho() -> &'static RhoEstimate {
        static R: OnceLock<RhoEstimate> = OnceLock::new();
        R.get_or_init(|| {
            let m = solve_green(&ex31(), GreenOptions::default()).unwrap();
            estimate_rho_green(&m, 512).unwrap()
        })
    }

    fn step(lambda: f64) -> Result<UniversalStep> {
        construct_step(
            &ex31(),
            Point::new(0.0, 0.0),
            &PolynomialC::constant(0.0),
            &PolynomialC::constant(1.0),
            0.1,
            10,
            lambda,
            200,
            rho(),
        )
    }

    #[test]
    fn ex31_step_at_lambda_two() {
        let s = step(2.0).unwrap();
        assert!(s.n0 <= 200);
        assert!(s.err_k0 < 0.1 && s.err_pi < 0.1);
        assert!(s.s.degree() <= s.n0);
        assert_eq!(partial_sum(&s.s, s.n0, Point::new(0.0, 0.0)), s.s);
        assert_eq!(s.beta_n0, Complex::new(2f64.powi(s.n0 as i32), 0.0));
        let env = s.envelope.unwrap();
        assert!(env.c0 < 1.0, "{env:?}");
        assert!(env.records >= 8);
        for r in &s.rate_records {
            assert!(r.weighted_deviation <= env.constant * env.c0.powi(r.n as i32) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn step_holds_on_random_boundary_points() {
        let s = step(2.0).unwrap();
        let set = ex31();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let beta = s.beta_n0.re;
        for (k, shape) in set.components().iter().enumerate() {
            for _ in 0..1000 {
                let z = shape.boundary_point(rng.gen_range(0.0..1.0));
                let v = s.s.eval(z);
                if k == 0 {
                    assert!(v.norm() < 0.1);
                } else {
                    assert!((v * beta - 1.0).norm() < 0.1);
                }
            }
        }
    }

    #[test]
    fn lambda_scales_only_the_k0_error() {
        // The witness for (0, λ^-N) is λ^-N times the witness for (0, 1), so
        // the Π error does not depend on λ and the K0 error shrinks as λ^-N.
        let one = step(1.0).unwrap();
        let two = step(2.0).unwrap();
        assert!(two.n0 <= one.n0, "λ=1: {}, λ=2: {}", one.n0, two.n0);
        if one.n0 == two.n0 {
            let scale = 2f64.powi(-(one.n0 as i32));
            assert!((two.err_pi - one.err_pi).abs() <= 1e-9 * one.err_pi.max(1e-300));
            assert!((two.err_k0 - scale * one.err_k0).abs() <= 1e-9 * one.err_k0.max(1e-300));
        }
    }

    #[test]
    fn refuses_outside_interval() {
        assert!(matches!(step(10.0), Err(ConstructError::RefusedOutsideInterval { .. })));
        assert!(matches!(step(0.3), Err(ConstructError::RefusedOutsideInterval { .. })));
    }

    #[test]
    fn rejects_bad_arguments() {
        let set = ex31();
        let z = Point::new(0.0, 0.0);
        let zero = PolynomialC::constant(0.0);
        let one = PolynomialC::constant(1.0);
        let run =
            |u: &PolynomialC, eps0: f64, n_max: usize| construct_step(&set, z, &zero, u, eps0, 10, 2.0, n_max, rho());
        assert!(matches!(run(&zero, 0.1, 50), Err(ConstructError::Precondition(_))));
        assert!(matches!(run(&one, 0.0, 50), Err(ConstructError::Precondition(_))));
        assert!(matches!(run(&one, 0.1, 201), Err(ConstructError::Precondition(_))));
    }

    #[test]
    fn exhausted_search_reports_best_margins() {
        let e = construct_step(
            &ex31(),
            Point::new(0.0, 0.0),
            &PolynomialC::constant(0.0),
            &PolynomialC::constant(1.0),
            1e-12,
            10,
            2.0,
            2,
            rho(),
        )
        .unwrap_err();
        match e {
            ConstructError::NotFoundWithinNmax { n_max, trajectory, best_pi, .. } => {
                assert_eq!(n_max, 2);
                assert_eq!(trajectory.len(), 2);
                assert!(best_pi.is_finite());
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn envelope_fit() {
        let data: Vec<(usize, f64)> = (1..10).map(|n| (n, 3.0 * 0.5f64.powi(n as i32))).collect();
        let env = fit_envelope(&data).unwrap();
        assert!((env.c0 - 0.5).abs() < 1e-12);
        assert!((env.constant - 3.0).abs() < 1e-9);
        assert!(fit_envelope(&data[..1]).is_none());
    }

    fn geometric_series(n: usize) -> Vec<Complex> {
        vec![Complex::new(1.0, 0.0); n + 1]
    }

    #[test]
    fn trace_first_value_is_exact() {
        let t =
            weighted_sum_trace(&geometric_series(1), Point::new(0.0, 0.0), 1.0 / 20.0, Point::new(18.0, 0.0), 1..=1)
                .unwrap();
        assert_eq!(t[0].modulus, 0.95);
    }

    #[test]
    fn trace_decays_below_r0_over_big_r0() {
        let t = weighted_sum_trace(
            &geometric_series(500),
            Point::new(0.0, 0.0),
            1.0 / 20.0,
            Point::new(18.0, 0.0),
            1..=500,
        )
        .unwrap();
        assert!(t.last().unwrap().modulus < 1e-6);
        // Closed form (1/20)^n (18^(n+1) - 1)/17.
        for p in &t {
            let exact_log = p.n as f64 * 0.9f64.log10()
                + (18.0f64 / 17.0).log10()
                + (-(18f64.powi(-(p.n as i32) - 1))).ln_1p() / std::f64::consts::LN_10;
            assert!((p.log10_modulus - exact_log).abs() < 1e-10, "n = {}", p.n);
        }
    }

    #[test]
    fn trace_blows_up_above_m0() {
        let t = weighted_sum_trace(&geometric_series(500), Point::new(0.0, 0.0), 20.0, Point::new(18.0, 0.0), 1..=500)
            .unwrap();
        assert!(t[99].modulus > 1e6);
        assert!(t.windows(2).skip(2).all(|w| w[1].log10_modulus > w[0].log10_modulus));
        let last = t.last().unwrap();
        assert_eq!(last.modulus, f64::INFINITY);
        let exact_log = 500.0 * 360f64.log10() + (18.0f64 / 17.0).log10();
        assert!((last.log10_modulus - exact_log).abs() < 1e-9);
    }

    #[test]
    fn trace_preconditions() {
        let c = geometric_series(3);
        let z = Point::new(0.0, 0.0);
        assert!(weighted_sum_trace(&c, z, 0.5, z, 0..=500).is_err());
        assert!(weighted_sum_trace(&[Complex::new(f64::NAN, 0.0)], z, 0.5, z, 1..=2).is_err());
        assert!(weighted_sum_trace(&c, z, f64::INFINITY, z, 1..=2).is_err());
    }

    proptest! {
        #[test]
        fn trace_matches_direct_sum_in_range(
            lambda in -3.0f64..3.0,
            wr in -2.0f64..2.0,
            wi in -2.0f64..2.0,
            coeffs in proptest::collection::vec(-5.0f64..5.0, 1..12),
        ) {
            let c: Vec<Complex> = coeffs.iter().map(|&x| Complex::new(x, 0.5 * x)).collect();
            let w = Point::new(wr, wi);
            let z0 = Point::new(0.25, -0.5);
            let n = c.len() - 1;
            let t = weighted_sum_trace(&c, z0, lambda, w, 0..=n).unwrap();
            for p in &t {
                let s: Complex = (0..=p.n).map(|k| c[k] * (w - z0).powu(k as u32)).sum();
                let direct = (s * lambda.powi(p.n as i32)).norm();
                prop_assert!((p.modulus - direct).abs() <= 1e-9 * (1.0 + direct));
            }
        }
    }
}
