//! Preset geometries: two unit disks (`ex31`), a unit disk ringed by `m0`
//! unit disks far away (`ex32`), and a hexagon with a square (`ex33`).

use std::f64::consts::{PI, TAU};

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{CompactSet, GeometryError, Point, Shape, validate_set};

#[derive(Debug, Clone, Error)]
pub enum PresetError {
    #[error("θ0 must exceed 4, got {0}")]
    BadTheta(f64),
    #[error("invalid preset parameters: {0}")]
    BadParameters(String),
    #[error("no h0 up to {0} satisfies the ring conditions")]
    SearchExhausted(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, PresetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Paper,
    Derived,
    Trivial,
}

/// A claim about a scenario, e.g. `rho_L <= 0.487`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectedFact {
    pub quantity: String,
    pub relation: String,
    pub value: f64,
    pub provenance: Provenance,
}

impl ExpectedFact {
    fn new(quantity: &str, relation: &str, value: f64, provenance: Provenance) -> Self {
        Self { quantity: quantity.into(), relation: relation.into(), value, provenance }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioPreset {
    pub name: String,
    pub geometry: CompactSet,
    /// Default expansion centre, interior to `K0`.
    pub z0: Point,
    pub facts: Vec<ExpectedFact>,
    pub notes: Vec<String>,
}

/// `√((1 + θ0)/((θ0/2)² - 1))`, the closed-form bound on `ρ_L` for two unit
/// disks at distance `θ0`.
pub fn ex31_bound(theta0: f64) -> f64 {
    ((1.0 + theta0) / ((theta0 / 2.0).powi(2) - 1.0)).sqrt()
}

/// `{D̄(0,1), D̄(θ0,1)}`.
pub fn preset_ex31(theta0: f64) -> Result<ScenarioPreset> {
    if !(theta0 > 4.0) || !theta0.is_finite() {
        return Err(PresetError::BadTheta(theta0));
    }
    let geometry =
        validate_set(vec![Shape::disk(Point::new(0.0, 0.0), 1.0), Shape::disk(Point::new(theta0, 0.0), 1.0)])?;
    let bound = ex31_bound(theta0);
    let mut facts = vec![
        ExpectedFact::new("rho_L", "<=", bound, Provenance::Paper),
        ExpectedFact::new("r0", "=", 1.0, Provenance::Trivial),
        ExpectedFact::new("R0", "=", theta0 - 1.0, Provenance::Trivial),
        ExpectedFact::new("M", "=", theta0 + 1.0, Provenance::Trivial),
        ExpectedFact::new("M0", "=", theta0 + 1.0, Provenance::Trivial),
    ];
    if bound < 0.5 {
        facts.push(ExpectedFact::new("lambda_nonempty", "=", 2.0, Provenance::Paper));
    }
    Ok(ScenarioPreset { name: format!("ex31({theta0})"), geometry, z0: Point::new(0.0, 0.0), facts, notes: vec![] })
}

/// Quantities of the ring construction for given `m0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RingConstants {
    pub sin: f64,
    pub l0: f64,
    /// `min(ℓ0, 2^-(m0+1))`.
    pub l0_prime: f64,
    /// Whether `2^-(m0+1) > ℓ0`, the inequality between the disk-ring bound
    /// and the ring-at-`K0` bound.
    pub l0_consistent: bool,
}

pub fn ring_constants(m0: usize) -> RingConstants {
    let s = (PI / m0 as f64).sin();
    let l0 = 0.5 * s * (1.0 - 0.5 * s) * (1.5 * s).powi(m0 as i32 - 1);
    let cap = 0.5f64.powi(m0 as i32 + 1);
    RingConstants { sin: s, l0, l0_prime: l0.min(cap), l0_consistent: cap > l0 }
}

fn ring_conditions(h: f64, beta0: f64, m0: usize, c: &RingConstants) -> bool {
    let k = (m0 + 1) as f64;
    let far = h > 2.0 / c.sin;
    let growth = (1.0 + 1.0 / h) * (2.0 + 1.0 / h).powi(m0 as i32 - 1) < 2f64.powi(m0 as i32 + 1);
    let small = 2.0 / c.l0_prime.powf(1.0 / k) * h.powf(-1.0 / k) < beta0;
    far && growth && small
}

/// Smallest `h0 <= h_search_max` (to relative precision 1e-12) meeting the
/// ring conditions, and the set `D̄(0,1) ∪ ⋃_j D̄(h0·e^{2πij/m0}, 1)`.
pub fn preset_ex32(beta0: f64, m0: usize, h_search_max: f64) -> Result<ScenarioPreset> {
    if !(beta0 > 0.0 && beta0 < 1.0) {
        return Err(PresetError::BadParameters(format!("β0 must lie in (0, 1), got {beta0}")));
    }
    if m0 < 7 {
        return Err(PresetError::BadParameters(format!("m0 must be at least 7, got {m0}")));
    }
    let c = ring_constants(m0);
    if !ring_conditions(h_search_max, beta0, m0, &c) {
        return Err(PresetError::SearchExhausted(h_search_max));
    }
    let (mut lo, mut hi) = (2.0 / c.sin, h_search_max);
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if ring_conditions(mid, beta0, m0, &c) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let h0 = hi;
    let mut shapes = vec![Shape::disk(Point::new(0.0, 0.0), 1.0)];
    shapes.extend((0..m0).map(|j| Shape::disk(Point::from_polar(h0, TAU * j as f64 / m0 as f64), 1.0)));
    let geometry = validate_set(shapes)?;
    let mut notes = vec![];
    if !c.l0_consistent {
        notes.push(format!(
            "2^-(m0+1) = {} does not exceed l0 = {}; the construction uses l0' = {}",
            0.5f64.powi(m0 as i32 + 1),
            c.l0,
            c.l0_prime
        ));
    }
    Ok(ScenarioPreset {
        name: format!("ex32({beta0}, {m0})"),
        geometry,
        z0: Point::new(0.0, 0.0),
        facts: vec![
            ExpectedFact::new("rho_L", "<", beta0, Provenance::Paper),
            ExpectedFact::new("h0", "=", h0, Provenance::Derived),
            ExpectedFact::new("l0", "=", c.l0, Provenance::Derived),
            ExpectedFact::new("l0_prime", "=", c.l0_prime, Provenance::Derived),
            ExpectedFact::new("r0", "=", 1.0, Provenance::Trivial),
            ExpectedFact::new("R0", "=", h0 - 1.0, Provenance::Trivial),
        ],
        notes,
    })
}

/// Hexagon with a reflex vertex at `-6.5`, listed counterclockwise.
pub fn ex33_hexagon() -> Shape {
    let p = Point::new;
    Shape::polygon(vec![p(-5.0, 1.5), p(-5.75, 2.25), p(-8.0, 0.0), p(-5.75, -2.25), p(-5.0, -1.5), p(-6.5, 0.0)])
}

pub fn ex33_square() -> Shape {
    let p = Point::new;
    Shape::polygon(vec![p(9.5, 0.0), p(8.75, 0.75), p(8.0, 0.0), p(8.75, -0.75)])
}

/// Published value of `ρ_L` for the hexagon and square.
pub const EX33_RHO: f64 = 0.529966;
pub const EX33_TOLERANCE: f64 = 0.01;

/// Hexagon as `K0`, square as `Π`; `z0 = -7.25` on the hexagon's axis.
pub fn preset_ex33() -> ScenarioPreset {
    let geometry = validate_set(vec![ex33_hexagon(), ex33_square()]).expect("fixed geometry is valid");
    ScenarioPreset {
        name: "ex33".into(),
        geometry,
        z0: Point::new(-7.25, 0.0),
        facts: vec![
            ExpectedFact::new("rho_L", "=", EX33_RHO, Provenance::Paper),
            ExpectedFact::new("rho_L_tolerance", "=", EX33_TOLERANCE, Provenance::Paper),
            ExpectedFact::new("lambda_nonempty", "=", 1.0, Provenance::Paper),
        ],
        notes: vec![],
    }
}

/// `D̄(0,1)` as `K0` with the hexagon as `Π`, `z0 = 0`.
pub fn preset_ex33_unit_disk() -> ScenarioPreset {
    let geometry =
        validate_set(vec![Shape::disk(Point::new(0.0, 0.0), 1.0), ex33_hexagon()]).expect("fixed geometry is valid");
    ScenarioPreset {
        name: "ex33-unit-disk".into(),
        geometry,
        z0: Point::new(0.0, 0.0),
        facts: vec![ExpectedFact::new("r0", "=", 1.0, Provenance::Trivial)],
        notes: vec![],
    }
}
