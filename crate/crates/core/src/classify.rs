//! Verdicts on whether the set of weighted universal Taylor series for a
//! sequence `β_n` is empty, from the root-modulus limit points of `β_n`.
//!
//! Three sufficient conditions are checked against numerically bracketed
//! quantities of `(z0, K0, Π)`:
//!
//! * every limit point below `r0/R0` gives an empty set,
//! * every limit point above `M0` gives an empty set,
//! * some limit point inside `(ρ_L, 1/ρ_L)` gives a nonempty set.
//!
//! Anything else is reported as unknown. Inequalities must hold with a margin
//! larger than the numerical uncertainty of the quantities involved.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{CompactSet, GeometryError, Point, Shape, dist_interior_point_to_complement};
use crate::minimax::{FitModel, MinimaxError, PiecewiseTarget, RhoEstimate, estimate_rho_deviation};
use crate::potential::{
    GreenOptions, PotentialError, estimate_rho_green, max_green_over_disk, max_green_over_shape, solve_green,
};

/// Slack for inequalities between exact geometric reals.
pub const GEOMETRIC_SLACK: f64 = 1e-12;
/// Widest ρ bracket accepted by [`verify_chain`].
pub const MAX_CHAIN_BRACKET: f64 = 0.05;

#[derive(Debug, Clone, Error)]
pub enum ClassifyError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Minimax(#[from] MinimaxError),
    #[error("invalid sequence: {0}")]
    BadSequence(String),
    #[error("ρ bracket width {0} is not below {MAX_CHAIN_BRACKET}")]
    BracketTooWide(f64),
    #[error("internal consistency alarm: {0}")]
    ConsistencyAlarm(String),
}

pub type Result<T> = std::result::Result<T, ClassifyError>;

/// A real quantity with an absolute uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Uncertain {
    pub value: f64,
    pub uncertainty: f64,
}

impl Uncertain {
    pub fn exact(value: f64) -> Self {
        Self { value, uncertainty: 0.0 }
    }

    pub fn upper(&self) -> f64 {
        self.value + self.uncertainty
    }

    pub fn lower(&self) -> f64 {
        self.value - self.uncertainty
    }
}

/// Root-modulus limit points of a sequence `(β_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSpec {
    limit_points: Vec<f64>,
    generator: Option<f64>,
}

impl SequenceSpec {
    /// `β_n = λ^n`; the only limit point is `|λ|`.
    pub fn geometric(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(ClassifyError::BadSequence(format!("λ = {lambda} is not finite")));
        }
        Ok(Self { limit_points: vec![lambda.abs()], generator: Some(lambda) })
    }

    /// Arbitrary limit set; values must be `≥ 0`, `+∞` allowed.
    pub fn from_limit_points(mut points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(ClassifyError::BadSequence("no limit points".into()));
        }
        if let Some(x) = points.iter().find(|x| x.is_nan() || **x < 0.0) {
            return Err(ClassifyError::BadSequence(format!("limit point {x} is not in [0, +∞]")));
        }
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        points.dedup();
        Ok(Self { limit_points: points, generator: None })
    }

    pub fn limit_points(&self) -> &[f64] {
        &self.limit_points
    }

    pub fn limsup(&self) -> f64 {
        *self.limit_points.last().unwrap()
    }

    pub fn liminf(&self) -> f64 {
        self.limit_points[0]
    }

    pub fn generator(&self) -> Option<f64> {
        self.generator
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    Nonempty,
    Empty,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Rule {
    #[serde(rename = "Thm2.2(i)")]
    Thm22i,
    #[serde(rename = "Prop4.1")]
    Prop41,
    #[serde(rename = "Prop4.2")]
    Prop42,
    #[serde(rename = "QuestionGap")]
    QuestionGap,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub rule: Rule,
    pub margins: BTreeMap<String, Uncertain>,
    pub narrative: String,
}

/// Deviation-fit settings for [`compute_bounds`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationRoute {
    pub n_min: usize,
    pub n_max: usize,
    pub grid_per_component: usize,
    pub model: FitModel,
}

impl Default for DeviationRoute {
    fn default() -> Self {
        Self { n_min: 1, n_max: 30, grid_per_component: 248, model: FitModel::SqrtPrefactor }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsOptions {
    pub green: GreenOptions,
    pub raster: usize,
    /// `None` skips the deviation route; the green route always runs.
    pub deviation: Option<DeviationRoute>,
}

impl Default for BoundsOptions {
    fn default() -> Self {
        Self { green: GreenOptions::default(), raster: 512, deviation: Some(DeviationRoute::default()) }
    }
}

/// Quantities of `(z0, K0, Π)` entering the verdict rules.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub z0: Point,
    /// `dist(z0, K0^c)`.
    pub r0: f64,
    /// `dist(z0, Π)`.
    pub big_r0: f64,
    /// Estimate with the tightest bracket.
    pub rho: RhoEstimate,
    /// Every estimate computed, green route first.
    pub rho_estimates: Vec<RhoEstimate>,
    /// `exp(max over K0 of g_{C \ Π})`.
    pub m: Uncertain,
    /// `exp(max over D̄(z0, r0) of g_{C \ Π})`.
    pub m0: Uncertain,
    /// K0 is the unit disk about z0 and Π is made of disks in `1 < |w - z0| < 2`.
    pub annulus_case: bool,
}

fn exp_with_error(g: f64, g_err: f64) -> Uncertain {
    let v = g.exp();
    Uncertain { value: v, uncertainty: v * g_err.exp_m1() }
}

fn is_annulus_case(set: &CompactSet, z0: Point) -> bool {
    let unit_k0 = matches!(set.k0(), Shape::Disk { center, radius }
        if (center - z0).norm() <= GEOMETRIC_SLACK && (radius - 1.0).abs() <= GEOMETRIC_SLACK);
    unit_k0
        && set.components()[1..].iter().all(|s| match s {
            Shape::Disk { center, radius } => {
                let d = (center - z0).norm();
                d - radius > 1.0 && d + radius < 2.0
            }
            Shape::Polygon(_) => false,
        })
}

/// `r0`, `R0`, `ρ_L`, `M` and `M0` for `z0` interior to `K0`.
pub fn compute_bounds(set: &CompactSet, z0: Point, opts: &BoundsOptions) -> Result<Bounds> {
    if set.len() < 2 {
        return Err(GeometryError::TooFewComponents.into());
    }
    let r0 = dist_interior_point_to_complement(z0, set.k0())?;
    let pi = set.remainder()?;
    let big_r0 = pi.distance(z0);

    let model = solve_green(set, opts.green)?;
    let mut estimates = vec![estimate_rho_green(&model, opts.raster)?];
    if let Some(route) = opts.deviation {
        let mut values = vec![1.0; set.len()];
        values[0] = 0.0;
        let target = PiecewiseTarget::constants(&values);
        let (est, _) =
            estimate_rho_deviation(set, &target, route.n_min, route.n_max, route.grid_per_component, route.model)?;
        estimates.push(est);
    }
    let rho = estimates
        .iter()
        .fold(None::<&RhoEstimate>, |best, e| match best {
            Some(b) if b.width() <= e.width() => Some(b),
            _ => Some(e),
        })
        .unwrap()
        .clone();

    let pi_model = solve_green(&pi, opts.green)?;
    let g_err = 2.0 * pi_model.residual_norm() + 1e-12;
    let m = exp_with_error(max_green_over_shape(&pi_model, set.k0())?, g_err);
    let m0 = exp_with_error(max_green_over_disk(&pi_model, z0, r0)?, g_err);

    Ok(Bounds { z0, r0, big_r0, rho, rho_estimates: estimates, m, m0, annulus_case: is_annulus_case(set, z0) })
}

/// Tri-state verdict for `seq` against `bounds`. Rules are tried in the order
/// [`Rule::Prop41`] (limsup below `r0/R0`), [`Rule::Prop42`] (liminf above
/// `M0`), [`Rule::Thm22i`] (a limit point inside `(ρ, 1/ρ)`); a limit point of
/// exactly 1 is always nonempty. An empty rule and a nonempty rule firing together is an alarm.
pub fn classify_sequence(bounds: &Bounds, seq: &SequenceSpec) -> Result<Verdict> {
    let mut margins = BTreeMap::new();
    let ratio = bounds.r0 / bounds.big_r0;
    let limsup = seq.limsup();
    let liminf = seq.liminf();

    let m41 = ratio - limsup;
    margins.insert("prop4.1".to_string(), Uncertain { value: m41, uncertainty: GEOMETRIC_SLACK });
    let prop41 = m41 > GEOMETRIC_SLACK;

    let m42 = Uncertain { value: liminf - bounds.m0.value, uncertainty: bounds.m0.uncertainty };
    margins.insert("prop4.2".to_string(), m42);
    let prop42 = m42.value > m42.uncertainty;

    let width = bounds.rho.width();
    let (lo, hi) = (bounds.rho.upper, 1.0 / bounds.rho.upper);
    let witness = seq.limit_points().iter().copied().filter(|x| x.is_finite()).map(|x| (x, (x - lo).min(hi - x))).fold(
        None::<(f64, f64)>,
        |best, c| match best {
            Some(b) if b.1 >= c.1 => Some(b),
            _ => Some(c),
        },
    );
    let mut thm22 = false;
    if let Some((x, margin)) = witness {
        margins.insert("thm2.2(i).lower".to_string(), Uncertain { value: x - lo, uncertainty: width });
        margins.insert("thm2.2(i).upper".to_string(), Uncertain { value: hi - x, uncertainty: width });
        thm22 = margin > width;
    }
    let unit = seq.limit_points().contains(&1.0);

    if (prop41 || prop42) && (thm22 || unit) {
        return Err(ClassifyError::ConsistencyAlarm(format!(
            "empty rule (Prop4.1: {prop41}, Prop4.2: {prop42}) and nonempty rule both fire; \
             r0/R0 = {ratio}, M0 = {}, ρ bracket [{}, {}]",
            bounds.m0.value, bounds.rho.lower, bounds.rho.upper
        )));
    }

    let (outcome, rule, mut narrative) = if prop41 {
        (Outcome::Empty, Rule::Prop41, format!("limsup {limsup} < r0/R0 = {ratio}"))
    } else if prop42 {
        (
            Outcome::Empty,
            Rule::Prop42,
            format!("liminf {liminf} > M0 = {} (± {})", bounds.m0.value, bounds.m0.uncertainty),
        )
    } else if thm22 {
        let (x, _) = witness.unwrap();
        (
            Outcome::Nonempty,
            Rule::Thm22i,
            format!("limit point {x} lies in ({lo}, {hi}) with margin above the bracket width {width}"),
        )
    } else if unit {
        (Outcome::Nonempty, Rule::Thm22i, "limit point 1: the unweighted case, always nonempty".to_string())
    } else {
        let region = match witness {
            Some((x, _)) if x > lo && x < hi => "within bracket uncertainty of the interval ends",
            _ => "outside every decidable region",
        };
        (
            Outcome::Unknown,
            Rule::QuestionGap,
            format!("limit points {:?} {region}; no rule applies", seq.limit_points()),
        )
    };
    if outcome == Outcome::Unknown && bounds.annulus_case {
        narrative.push_str(
            "; note: the geometry is a unit disk K0 with disks in 1 < |w - z0| < 2, for which emptiness \
             at λ = 2 is asserted in the literature, but r0/R0 > 1/2 and M0 > 2 here, so neither \
             emptiness rule applies",
        );
    }
    Ok(Verdict { outcome, rule, margins, narrative })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainReport {
    pub inv_big_r0: f64,
    pub rho_lower: f64,
    pub rho_upper: f64,
    pub inv_rho_lower: f64,
    pub m: Uncertain,
    pub pass: bool,
}

/// Checks `1/R0 < ρ_lower`, `ρ_upper < 1` and `1/ρ_lower < M`.
pub fn verify_chain(bounds: &Bounds) -> Result<ChainReport> {
    let width = bounds.rho.width();
    if !(width < MAX_CHAIN_BRACKET) {
        return Err(ClassifyError::BracketTooWide(width));
    }
    let inv_big_r0 = 1.0 / bounds.big_r0;
    let inv_rho_lower = 1.0 / bounds.rho.lower;
    let pass = inv_big_r0 < bounds.rho.lower && bounds.rho.upper < 1.0 && inv_rho_lower < bounds.m.lower();
    Ok(ChainReport {
        inv_big_r0,
        rho_lower: bounds.rho.lower,
        rho_upper: bounds.rho.upper,
        inv_rho_lower,
        m: bounds.m,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::OnceLock;

    use proptest::prelude::*;
    use serde_json::json;

    use super::*;
    use crate::minimax::RhoMethod;

    fn ex31() -> CompactSet {
        CompactSet::new(vec![Shape::disk(Point::new(0.0, 0.0), 1.0), Shape::disk(Point::new(18.0, 0.0), 1.0)]).unwrap()
    }

    fn green_only() -> BoundsOptions {
        BoundsOptions { deviation: None, ..Default::default() }
    }

    fn ex31_bounds() -> &'static Bounds {
        static B: OnceLock<Bounds> = OnceLock::new();
        B.get_or_init(|| compute_bounds(&ex31(), Point::new(0.0, 0.0), &green_only()).unwrap())
    }

    fn synthetic(rho: (f64, f64), m0: f64) -> Bounds {
        Bounds {
            z0: Point::new(0.0, 0.0),
            r0: 1.0,
            big_r0: 17.0,
            rho: RhoEstimate::new(0.5 * (rho.0 + rho.1), rho.0, rho.1, RhoMethod::GreenSaddle, json!({})),
            rho_estimates: vec![],
            m: Uncertain::exact(m0),
            m0: Uncertain::exact(m0),
            annulus_case: false,
        }
    }

    #[test]
    fn ex31_bounds_are_analytic() {
        let b = ex31_bounds();
        assert_eq!(b.r0, 1.0);
        assert_eq!(b.big_r0, 17.0);
        assert!((b.m.value - 19.0).abs() < 1e-8, "{:?}", b.m);
        assert!((b.m0.value - 19.0).abs() < 1e-8, "{:?}", b.m0);
        assert!(b.rho.lower > 1.0 / 17.0 && b.rho.upper <= 0.48734);
    }

    #[test]
    fn off_centre_z0() {
        let b = compute_bounds(&ex31(), Point::new(0.5, 0.0), &green_only()).unwrap();
        assert!((b.r0 - 0.5).abs() < 1e-15);
        assert!((b.big_r0 - 16.5).abs() < 1e-15);
    }

    #[test]
    fn z0_outside_k0_is_rejected() {
        let e = compute_bounds(&ex31(), Point::new(2.0, 0.0), &green_only()).unwrap_err();
        assert!(matches!(e, ClassifyError::Geometry(GeometryError::PointNotInterior(_))));
    }

    #[test]
    fn ex31_table() {
        let b = ex31_bounds();
        let cases = [
            (2.0, Outcome::Nonempty, Rule::Thm22i),
            (0.05, Outcome::Empty, Rule::Prop41),
            (20.0, Outcome::Empty, Rule::Prop42),
            (2.5, Outcome::Unknown, Rule::QuestionGap),
            (1.0, Outcome::Nonempty, Rule::Thm22i),
        ];
        for (lambda, outcome, rule) in cases {
            let v = classify_sequence(b, &SequenceSpec::geometric(lambda).unwrap()).unwrap();
            assert_eq!((v.outcome, v.rule), (outcome, rule), "λ = {lambda}: {}", v.narrative);
        }
    }

    #[test]
    fn negative_generator_uses_modulus() {
        let b = ex31_bounds();
        let v = classify_sequence(b, &SequenceSpec::geometric(-2.0).unwrap()).unwrap();
        assert_eq!(v.outcome, Outcome::Nonempty);
    }

    #[test]
    fn infinite_limit_point() {
        let b = ex31_bounds();
        let s = SequenceSpec::from_limit_points(vec![f64::INFINITY]).unwrap();
        assert_eq!(classify_sequence(b, &s).unwrap().rule, Rule::Prop42);
        let s = SequenceSpec::from_limit_points(vec![0.01, f64::INFINITY]).unwrap();
        assert_eq!(classify_sequence(b, &s).unwrap().outcome, Outcome::Unknown);
    }

    #[test]
    fn sequence_validation() {
        assert!(SequenceSpec::from_limit_points(vec![]).is_err());
        assert!(SequenceSpec::from_limit_points(vec![-1.0]).is_err());
        assert!(SequenceSpec::from_limit_points(vec![f64::NAN]).is_err());
        assert!(SequenceSpec::geometric(f64::INFINITY).is_err());
        let s = SequenceSpec::from_limit_points(vec![3.0, 0.5, 3.0]).unwrap();
        assert_eq!(s.limit_points(), &[0.5, 3.0]);
        assert_eq!((s.liminf(), s.limsup()), (0.5, 3.0));
    }

    #[test]
    fn strictness_needs_margin_above_width() {
        let b = synthetic((0.45, 0.5), 19.0);
        // Inside (0.5, 2) but closer to 2 than the bracket width.
        let v = classify_sequence(&b, &SequenceSpec::geometric(1.97).unwrap()).unwrap();
        assert_eq!(v.outcome, Outcome::Unknown);
        let v = classify_sequence(&b, &SequenceSpec::geometric(1.9).unwrap()).unwrap();
        assert_eq!(v.outcome, Outcome::Nonempty);
        // Exactly r0/R0 is not strictly below it.
        let v = classify_sequence(&b, &SequenceSpec::geometric(1.0 / 17.0).unwrap()).unwrap();
        assert_eq!(v.outcome, Outcome::Unknown);
    }

    #[test]
    fn conflicting_rules_raise_alarm() {
        // M0 below 1/ρ is impossible for genuine bounds.
        let b = synthetic((0.45, 0.5), 1.5);
        let e = classify_sequence(&b, &SequenceSpec::geometric(1.6).unwrap());
        assert!(matches!(e, Err(ClassifyError::ConsistencyAlarm(_))));
        let mut b = synthetic((0.05, 0.06), 19.0);
        b.big_r0 = 10.0;
        let e = classify_sequence(&b, &SequenceSpec::geometric(0.08).unwrap());
        assert!(matches!(e, Err(ClassifyError::ConsistencyAlarm(_))));
    }

    #[test]
    fn annulus_disks_are_unknown_and_flagged() {
        let set = CompactSet::new(vec![Shape::disk(Point::new(0.0, 0.0), 1.0), Shape::disk(Point::new(0.0, 1.5), 0.2)])
            .unwrap();
        let b = compute_bounds(&set, Point::new(0.0, 0.0), &green_only()).unwrap();
        assert!(b.annulus_case);
        assert!(b.r0 / b.big_r0 > 0.5);
        assert!((b.m0.value - 2.5 / 0.2).abs() < 1e-6);
        let v = classify_sequence(&b, &SequenceSpec::geometric(2.0).unwrap()).unwrap();
        assert_eq!(v.outcome, Outcome::Unknown);
        assert!(v.narrative.contains("1 < |w - z0| < 2"));
    }

    #[test]
    fn chain_passes_on_ex31() {
        let r = verify_chain(ex31_bounds()).unwrap();
        assert!(r.pass, "{r:?}");
        assert!((r.inv_big_r0 - 1.0 / 17.0).abs() < 1e-15);
    }

    #[test]
    fn chain_rejects_wide_bracket() {
        let b = synthetic((0.4, 0.5), 19.0);
        assert!(matches!(verify_chain(&b), Err(ClassifyError::BracketTooWide(_))));
    }

    #[test]
    fn deviation_route_is_kept_alongside() {
        let b = compute_bounds(&ex31(), Point::new(0.0, 0.0), &BoundsOptions::default()).unwrap();
        assert_eq!(b.rho_estimates.len(), 2);
        let narrowest = b.rho_estimates.iter().map(|e| e.width()).fold(f64::INFINITY, f64::min);
        assert_eq!(b.rho.width(), narrowest);
    }

    #[test]
    fn verdicts_are_deterministic() {
        let b1 = compute_bounds(&ex31(), Point::new(0.0, 0.0), &green_only()).unwrap();
        let b2 = compute_bounds(&ex31(), Point::new(0.0, 0.0), &green_only()).unwrap();
        for lambda in [0.05, 2.0, 2.5, 20.0] {
            let s = SequenceSpec::geometric(lambda).unwrap();
            assert_eq!(classify_sequence(&b1, &s).unwrap(), classify_sequence(&b2, &s).unwrap());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]

        #[test]
        fn margins_invariant_under_rigid_motion(
            angle in 0.0f64..std::f64::consts::TAU,
            dx in -50.0f64..50.0,
            dy in -50.0f64..50.0,
        ) {
            let rot = Point::from_polar(1.0, angle);
            let offset = Point::new(dx, dy);
            let set = ex31().rigid_motion(rot, offset);
            let b = compute_bounds(&set, offset, &green_only()).unwrap();
            let base = ex31_bounds();
            for lambda in [0.05, 2.0, 2.5, 20.0] {
                let s = SequenceSpec::geometric(lambda).unwrap();
                let v0 = classify_sequence(base, &s).unwrap();
                let v1 = classify_sequence(&b, &s).unwrap();
                prop_assert_eq!(v0.outcome, v1.outcome);
                prop_assert_eq!(v0.rule, v1.rule);
                for (k, m) in &v0.margins {
                    let d = (m.value - v1.margins[k].value).abs();
                    prop_assert!(d <= 1e-9, "{} differs by {:e} at λ = {}", k, d, lambda);
                }
            }
        }

        #[test]
        fn nonempty_verdicts_are_conservative(x in 0.0f64..3.0) {
            let b = ex31_bounds();
            let v = classify_sequence(b, &SequenceSpec::geometric(x).unwrap()).unwrap();
            if v.outcome == Outcome::Nonempty && x != 1.0 {
                let w = b.rho.width();
                prop_assert!(x - b.rho.upper > w && 1.0 / b.rho.upper - x > w);
            }
        }
    }
}
