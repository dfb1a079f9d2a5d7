//! Planar shapes, the compound compact set `L = K0 ∪ K1 ∪ ... ∪ Km`, and
//! admissible contour families around its components.
//!
//! Every shape is closed. Distances are Euclidean and tolerances are taken
//! relative to the diameter of whatever object is being tested.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point of the complex plane.
pub type Point = Complex64;

/// Relative gap below which two components are considered touching.
pub const MIN_RELATIVE_GAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("components {0} and {1} overlap or touch")]
    OverlappingComponents(usize, usize),
    #[error("component {index} is degenerate: {reason}")]
    DegenerateShape { index: usize, reason: String },
    #[error("component 0 (K0) has empty interior")]
    EmptyInteriorK0,
    #[error("the set needs K0 plus at least one further component")]
    TooFewComponents,
    #[error("point {0} is not an interior point of the shape")]
    PointNotInterior(Point),
    #[error("too few sample points: need at least {min}, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("point {0} lies on the contour")]
    PointOnContour(Point),
    #[error("contour family is not admissible: {0}")]
    ContourCollision(String),
    #[error("invalid geometry input: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Distance from `z` to the closed segment `[a, b]`.
pub fn dist_point_segment(z: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_sqr();
    if len2 == 0.0 {
        return (z - a).norm();
    }
    let t = ((z - a) * ab.conj()).re / len2;
    let t = t.clamp(0.0, 1.0);
    (z - (a + ab * t)).norm()
}

fn cross(a: Point, b: Point) -> f64 {
    a.re * b.im - a.im * b.re
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    cross(b - a, c - a)
}

/// Closed segments `[a, b]` and `[c, d]` share at least one point.
pub fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |p: Point, q: Point, r: Point, o: f64| {
        o == 0.0 && r.re >= p.re.min(q.re) && r.re <= p.re.max(q.re) && r.im >= p.im.min(q.im) && r.im <= p.im.max(q.im)
    };
    on(c, d, a, d1) || on(c, d, b, d2) || on(a, b, c, d3) || on(a, b, d, d4)
}

/// Distance between closed segments.
pub fn dist_segment_segment(a: Point, b: Point, c: Point, d: Point) -> f64 {
    if segments_intersect(a, b, c, d) {
        return 0.0;
    }
    dist_point_segment(a, c, d)
        .min(dist_point_segment(b, c, d))
        .min(dist_point_segment(c, a, b))
        .min(dist_point_segment(d, a, b))
}

/// Winding number of the closed polyline `pts` about `z` by accumulated argument.
fn polyline_winding(pts: &[Point], z: Point) -> i32 {
    let mut total = 0.0;
    for i in 0..pts.len() {
        let a = pts[i] - z;
        let b = pts[(i + 1) % pts.len()] - z;
        total += (b / a).arg();
    }
    (total / TAU).round() as i32
}

/// A simple polygon with counterclockwise vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    /// Builds a polygon, reorienting clockwise input to counterclockwise.
    pub fn new(mut vertices: Vec<Point>) -> std::result::Result<Self, String> {
        if vertices.len() < 3 {
            return Err(format!("polygon needs at least 3 vertices, got {}", vertices.len()));
        }
        if vertices.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err("non-finite vertex".into());
        }
        let n = vertices.len();
        for i in 0..n {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(format!("vertices {} and {} coincide", i, (i + 1) % n));
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                let (c, d) = (vertices[j], vertices[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return Err(format!("edges {i} and {j} intersect"));
                }
            }
        }
        let area = signed_area(&vertices);
        if area.abs() == 0.0 {
            return Err("zero area".into());
        }
        if area < 0.0 {
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| (b - a).norm()).sum()
    }

    /// Vertex `i` is convex (interior angle below pi).
    pub fn is_convex_vertex(&self, i: usize) -> bool {
        let n = self.vertices.len();
        let prev = self.vertices[(i + n - 1) % n];
        let next = self.vertices[(i + 1) % n];
        orient(prev, self.vertices[i], next) > 0.0
    }

    pub fn boundary_distance(&self, z: Point) -> f64 {
        self.edges().map(|(a, b)| dist_point_segment(z, a, b)).fold(f64::INFINITY, f64::min)
    }

    fn winding(&self, z: Point) -> i32 {
        polyline_winding(&self.vertices, z)
    }
}

fn signed_area(v: &[Point]) -> f64 {
    let n = v.len();
    0.5 * (0..n).map(|i| cross(v[i], v[(i + 1) % n])).sum::<f64>()
}

/// A closed disk or a closed simple polygon.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Disk { center: Point, radius: f64 },
    Polygon(Polygon),
}

impl Shape {
    pub fn disk(center: Point, radius: f64) -> Self {
        Shape::Disk { center, radius }
    }

    /// Polygon from raw vertices; panics on an invalid polygon, so only use
    /// this for literal geometry.
    pub fn polygon(vertices: Vec<Point>) -> Self {
        Shape::Polygon(Polygon::new(vertices).expect("invalid polygon literal"))
    }

    fn check(&self, index: usize) -> Result<()> {
        let bad = |reason: &str| GeometryError::DegenerateShape { index, reason: reason.into() };
        match self {
            Shape::Disk { center, radius } => {
                if !center.re.is_finite() || !center.im.is_finite() || !radius.is_finite() {
                    return Err(bad("non-finite disk parameters"));
                }
                if *radius <= 0.0 {
                    return Err(bad("disk radius must be positive"));
                }
                Ok(())
            }
            Shape::Polygon(p) => Polygon::new(p.vertices.clone()).map(|_| ()).map_err(|e| bad(&e)),
        }
    }

    /// Bounding box as (min corner, max corner).
    pub fn bbox(&self) -> (Point, Point) {
        match self {
            Shape::Disk { center, radius } => {
                (*center - Point::new(*radius, *radius), *center + Point::new(*radius, *radius))
            }
            Shape::Polygon(p) => {
                let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
                let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
                for v in &p.vertices {
                    lo = Point::new(lo.re.min(v.re), lo.im.min(v.im));
                    hi = Point::new(hi.re.max(v.re), hi.im.max(v.im));
                }
                (lo, hi)
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Shape::Disk { radius, .. } => 2.0 * radius,
            Shape::Polygon(p) => {
                let v = &p.vertices;
                let mut d: f64 = 0.0;
                for i in 0..v.len() {
                    for j in (i + 1)..v.len() {
                        d = d.max((v[i] - v[j]).norm());
                    }
                }
                d
            }
        }
    }

    /// A reference point inside the shape (disk center, polygon vertex average
    /// pushed inside if needed).
    pub fn anchor(&self) -> Point {
        match self {
            Shape::Disk { center, .. } => *center,
            Shape::Polygon(p) => {
                let n = p.vertices.len() as f64;
                let avg: Point = p.vertices.iter().sum::<Point>() / n;
                if p.winding(avg) != 0 {
                    return avg;
                }
                // Nonconvex fallback: midpoint of a short inward step from an edge midpoint.
                let (a, b) = p.edges().next().unwrap();
                let inward = (b - a) * Point::i() / (b - a).norm();
                let mut h = 0.25 * self.diameter();
                loop {
                    let c = 0.5 * (a + b) + inward * h;
                    if p.winding(c) != 0 && p.boundary_distance(c) > 0.0 {
                        return c;
                    }
                    h *= 0.5;
                }
            }
        }
    }

    /// Membership in the closed shape.
    pub fn contains(&self, z: Point) -> bool {
        self.distance(z) == 0.0
    }

    /// Distance from `z` to the closed shape; zero iff `z` belongs to it.
    pub fn distance(&self, z: Point) -> f64 {
        match self {
            Shape::Disk { center, radius } => ((z - center).norm() - radius).max(0.0),
            Shape::Polygon(p) => {
                if p.winding(z) != 0 {
                    0.0
                } else {
                    p.boundary_distance(z)
                }
            }
        }
    }

    /// Distance from `z` to the boundary curve.
    pub fn boundary_distance(&self, z: Point) -> f64 {
        match self {
            Shape::Disk { center, radius } => ((z - center).norm() - radius).abs(),
            Shape::Polygon(p) => p.boundary_distance(z),
        }
    }

    /// `z` is in the open interior.
    pub fn is_interior(&self, z: Point) -> bool {
        match self {
            Shape::Disk { center, radius } => (z - center).norm() < *radius,
            Shape::Polygon(p) => p.winding(z) != 0 && p.boundary_distance(z) > 0.0,
        }
    }

    /// Distance between two shapes; zero when they intersect.
    pub fn distance_to_shape(&self, other: &Shape) -> f64 {
        match (self, other) {
            (Shape::Disk { center: c1, radius: r1 }, Shape::Disk { center: c2, radius: r2 }) => {
                ((c1 - c2).norm() - r1 - r2).max(0.0)
            }
            (Shape::Disk { center, radius }, s @ Shape::Polygon(_))
            | (s @ Shape::Polygon(_), Shape::Disk { center, radius }) => (s.distance(*center) - radius).max(0.0),
            (Shape::Polygon(p), Shape::Polygon(q)) => {
                if p.vertices.iter().any(|&v| q.winding(v) != 0) || q.vertices.iter().any(|&v| p.winding(v) != 0) {
                    return 0.0;
                }
                let mut d = f64::INFINITY;
                for (a, b) in p.edges() {
                    for (c, e) in q.edges() {
                        d = d.min(dist_segment_segment(a, b, c, e));
                    }
                }
                d
            }
        }
    }

    /// Smallest accepted sample count for [`Shape::boundary_sample`].
    pub fn min_samples(&self) -> usize {
        match self {
            Shape::Disk { .. } => 4,
            Shape::Polygon(p) => 2 * p.vertices.len(),
        }
    }

    /// `n` arclength-quasi-uniform points on the boundary, counterclockwise.
    /// Polygon samples always include every vertex.
    pub fn boundary_sample(&self, n: usize) -> Result<Vec<Point>> {
        if n < self.min_samples() {
            return Err(GeometryError::TooFewPoints { min: self.min_samples(), got: n });
        }
        Ok(match self {
            Shape::Disk { center, radius } => {
                (0..n).map(|k| *center + Point::from_polar(*radius, TAU * k as f64 / n as f64)).collect()
            }
            Shape::Polygon(p) => {
                let lens: Vec<f64> = p.edges().map(|(a, b)| (b - a).norm()).collect();
                let counts = apportion(&lens, n);
                let mut out = Vec::with_capacity(n);
                for ((a, b), k) in p.edges().zip(counts) {
                    for j in 0..k {
                        out.push(a + (b - a) * (j as f64 / k as f64));
                    }
                }
                out
            }
        })
    }

    /// Boundary point at normalized arclength `t ∈ [0, 1)`.
    pub fn boundary_point(&self, t: f64) -> Point {
        let t = t.rem_euclid(1.0);
        match self {
            Shape::Disk { center, radius } => *center + Point::from_polar(*radius, TAU * t),
            Shape::Polygon(p) => {
                let mut s = t * p.perimeter();
                for (a, b) in p.edges() {
                    let len = (b - a).norm();
                    if s <= len {
                        return a + (b - a) * (s / len);
                    }
                    s -= len;
                }
                p.vertices[0]
            }
        }
    }

    pub fn translated(&self, offset: Point) -> Shape {
        match self {
            Shape::Disk { center, radius } => Shape::Disk { center: center + offset, radius: *radius },
            Shape::Polygon(p) => Shape::Polygon(Polygon { vertices: p.vertices.iter().map(|v| v + offset).collect() }),
        }
    }

    /// Image under `z -> rot * z + offset` with `|rot| = 1`.
    pub fn rigid_motion(&self, rot: Point, offset: Point) -> Shape {
        match self {
            Shape::Disk { center, radius } => Shape::Disk { center: rot * center + offset, radius: *radius },
            Shape::Polygon(p) => {
                Shape::Polygon(Polygon { vertices: p.vertices.iter().map(|v| rot * v + offset).collect() })
            }
        }
    }
}

/// Splits `total` samples over edges proportionally to length, at least one each
/// (largest remainder rounding).
fn apportion(lens: &[f64], total: usize) -> Vec<usize> {
    let k = lens.len();
    let spare = total - k;
    let perimeter: f64 = lens.iter().sum();
    let quotas: Vec<f64> = lens.iter().map(|l| spare as f64 * l / perimeter).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| 1 + q.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Euclidean distance from `z` to a closed shape.
pub fn dist_point_to_shape(z: Point, s: &Shape) -> f64 {
    s.distance(z)
}

/// Distance from an interior point of `k0` to the complement of `k0`.
pub fn dist_interior_point_to_complement(z0: Point, k0: &Shape) -> Result<f64> {
    if !k0.is_interior(z0) {
        return Err(GeometryError::PointNotInterior(z0));
    }
    Ok(match k0 {
        Shape::Disk { center, radius } => radius - (z0 - center).norm(),
        Shape::Polygon(p) => p.boundary_distance(z0),
    })
}

/// A finite union of pairwise disjoint closed shapes. Component 0 plays the
/// role of `K0`; the remaining components form `Π`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactSet {
    components: Vec<Shape>,
    diameter: f64,
}

impl CompactSet {
    /// Validates disjointness only. Used for auxiliary sets such as `Π` alone.
    pub fn new(components: Vec<Shape>) -> Result<Self> {
        if components.is_empty() {
            return Err(GeometryError::TooFewComponents);
        }
        for (i, s) in components.iter().enumerate() {
            s.check(i)?;
        }
        let diameter = union_diameter(&components);
        for i in 0..components.len() {
            for j in (i + 1)..components.len() {
                let gap = components[i].distance_to_shape(&components[j]);
                if gap < MIN_RELATIVE_GAP * diameter {
                    return Err(GeometryError::OverlappingComponents(i, j));
                }
            }
        }
        Ok(Self { components, diameter })
    }

    pub fn components(&self) -> &[Shape] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Number of components besides `K0`.
    pub fn m0(&self) -> usize {
        self.components.len() - 1
    }

    pub fn k0(&self) -> &Shape {
        &self.components[0]
    }

    /// The remainder `Π = L \ K0` as its own set.
    pub fn remainder(&self) -> Result<CompactSet> {
        CompactSet::new(self.components[1..].to_vec())
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn bbox(&self) -> (Point, Point) {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for s in &self.components {
            let (a, b) = s.bbox();
            lo = Point::new(lo.re.min(a.re), lo.im.min(a.im));
            hi = Point::new(hi.re.max(b.re), hi.im.max(b.im));
        }
        (lo, hi)
    }

    pub fn distance(&self, z: Point) -> f64 {
        self.components.iter().map(|s| s.distance(z)).fold(f64::INFINITY, f64::min)
    }

    /// Index of the component containing `z`, if any.
    pub fn component_of(&self, z: Point) -> Option<usize> {
        self.components.iter().position(|s| s.contains(z))
    }

    /// Half the distance from component `i` to the rest of the set.
    pub fn half_gap(&self, i: usize) -> f64 {
        let d = (0..self.len())
            .filter(|&j| j != i)
            .map(|j| self.components[i].distance_to_shape(&self.components[j]))
            .fold(f64::INFINITY, f64::min);
        0.5 * d
    }

    pub fn rigid_motion(&self, rot: Point, offset: Point) -> CompactSet {
        CompactSet {
            components: self.components.iter().map(|s| s.rigid_motion(rot, offset)).collect(),
            diameter: self.diameter,
        }
    }

    /// Parses the geometry JSON format
    /// `{"components":[{"type":"disk","center":[x,y],"radius":r}, ...]}`.
    pub fn from_json(text: &str) -> Result<CompactSet> {
        let doc: GeometryDoc = serde_json::from_str(text).map_err(|e| GeometryError::Parse(e.to_string()))?;
        let shapes = doc
            .components
            .into_iter()
            .enumerate()
            .map(|(index, c)| match c {
                ShapeDoc::Disk { center, radius } => {
                    Ok(Shape::Disk { center: Point::new(center[0], center[1]), radius })
                }
                ShapeDoc::Polygon { vertices } => {
                    Polygon::new(vertices.iter().map(|v| Point::new(v[0], v[1])).collect())
                        .map(Shape::Polygon)
                        .map_err(|reason| GeometryError::DegenerateShape { index, reason })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        validate_set(shapes)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let doc = GeometryDoc {
            components: self
                .components
                .iter()
                .map(|s| match s {
                    Shape::Disk { center, radius } => {
                        ShapeDoc::Disk { center: [center.re, center.im], radius: *radius }
                    }
                    Shape::Polygon(p) => {
                        ShapeDoc::Polygon { vertices: p.vertices.iter().map(|v| [v.re, v.im]).collect() }
                    }
                })
                .collect(),
        };
        serde_json::to_value(doc).expect("geometry serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct GeometryDoc {
    components: Vec<ShapeDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum ShapeDoc {
    Disk { center: [f64; 2], radius: f64 },
    Polygon { vertices: Vec<[f64; 2]> },
}

fn union_diameter(components: &[Shape]) -> f64 {
    let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for s in components {
        let (a, b) = s.bbox();
        lo = Point::new(lo.re.min(a.re), lo.im.min(a.im));
        hi = Point::new(hi.re.max(b.re), hi.im.max(b.im));
    }
    (hi - lo).norm()
}

/// Validates a candidate `L`: disjoint components, `m0 >= 1`, `K0` with interior.
///
/// Connectedness of the complement is not tested; it holds for every finite
/// union of disjoint disks and simple polygons.
pub fn validate_set(components: Vec<Shape>) -> Result<CompactSet> {
    if components.len() < 2 {
        return Err(GeometryError::TooFewComponents);
    }
    let set = CompactSet::new(components)?;
    if !set.k0().is_interior(set.k0().anchor()) {
        return Err(GeometryError::EmptyInteriorK0);
    }
    Ok(set)
}

/// A closed Jordan curve: a circle or a closed polyline.
#[derive(Debug, Clone, PartialEq)]
pub enum JordanContour {
    Circle { center: Point, radius: f64 },
    ClosedPolyline { points: Vec<Point> },
}

impl JordanContour {
    pub fn length(&self) -> f64 {
        match self {
            JordanContour::Circle { radius, .. } => TAU * radius,
            JordanContour::ClosedPolyline { points } => {
                let n = points.len();
                (0..n).map(|i| (points[(i + 1) % n] - points[i]).norm()).sum()
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            JordanContour::Circle { radius, .. } => 2.0 * radius,
            JordanContour::ClosedPolyline { points } => {
                let mut d: f64 = 0.0;
                for i in 0..points.len() {
                    for j in (i + 1)..points.len() {
                        d = d.max((points[i] - points[j]).norm());
                    }
                }
                d
            }
        }
    }

    /// Point at normalized arclength `t ∈ [0, 1)`.
    pub fn point_at(&self, t: f64) -> Point {
        let t = t.rem_euclid(1.0);
        match self {
            JordanContour::Circle { center, radius } => *center + Point::from_polar(*radius, TAU * t),
            JordanContour::ClosedPolyline { points } => {
                let n = points.len();
                let mut s = t * self.length();
                for i in 0..n {
                    let (a, b) = (points[i], points[(i + 1) % n]);
                    let len = (b - a).norm();
                    if s <= len {
                        return a + (b - a) * (s / len);
                    }
                    s -= len;
                }
                points[0]
            }
        }
    }

    /// `n` points equally spaced in arclength.
    pub fn sample(&self, n: usize) -> Vec<Point> {
        match self {
            JordanContour::ClosedPolyline { points } if n <= points.len() => points.clone(),
            _ => (0..n).map(|k| self.point_at(k as f64 / n as f64)).collect(),
        }
    }

    /// Distance from `z` to the curve.
    pub fn distance(&self, z: Point) -> f64 {
        match self {
            JordanContour::Circle { center, radius } => ((z - center).norm() - radius).abs(),
            JordanContour::ClosedPolyline { points } => {
                let n = points.len();
                (0..n).map(|i| dist_point_segment(z, points[i], points[(i + 1) % n])).fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// Winding number of the curve about `z`.
    pub fn winding_number(&self, z: Point) -> Result<i32> {
        if self.distance(z) <= 1e-9 * self.diameter() {
            return Err(GeometryError::PointOnContour(z));
        }
        Ok(match self {
            JordanContour::Circle { center, radius } => i32::from((z - center).norm() < *radius),
            JordanContour::ClosedPolyline { points } => polyline_winding(points, z),
        })
    }

    /// Distance from the curve to a closed shape (zero if they meet).
    pub fn distance_to_shape(&self, s: &Shape) -> f64 {
        match (self, s) {
            (JordanContour::Circle { center, radius }, Shape::Disk { center: c, radius: r }) => {
                let d = (center - c).norm();
                if d + r < *radius { radius - d - r } else { (d - radius - r).max(0.0) }
            }
            (JordanContour::Circle { center, radius }, Shape::Polygon(p)) => {
                let far = p.vertices.iter().map(|v| (v - center).norm()).fold(0.0, f64::max);
                let near = p.boundary_distance(*center);
                if far < *radius {
                    // polygon strictly inside the circle
                    radius - far
                } else if p.winding(*center) == 0 && near > *radius {
                    near - radius
                } else if p.winding(*center) != 0 && near > *radius {
                    // circle strictly inside the polygon
                    near - radius
                } else {
                    0.0
                }
            }
            (JordanContour::ClosedPolyline { points }, _) => polyline_to_shape(points, s),
        }
    }

    pub fn translated(&self, offset: Point) -> JordanContour {
        match self {
            JordanContour::Circle { center, radius } => {
                JordanContour::Circle { center: center + offset, radius: *radius }
            }
            JordanContour::ClosedPolyline { points } => {
                JordanContour::ClosedPolyline { points: points.iter().map(|p| p + offset).collect() }
            }
        }
    }
}

fn polyline_to_shape(points: &[Point], s: &Shape) -> f64 {
    let n = points.len();
    if points.iter().any(|&p| s.contains(p)) {
        return 0.0;
    }
    let mut d = f64::INFINITY;
    for i in 0..n {
        let (a, b) = (points[i], points[(i + 1) % n]);
        let di = match s {
            Shape::Disk { center, radius } => (dist_point_segment(*center, a, b) - radius).max(0.0),
            Shape::Polygon(p) => p.edges().map(|(c, e)| dist_segment_segment(a, b, c, e)).fold(f64::INFINITY, f64::min),
        };
        d = d.min(di);
    }
    d
}

/// One Jordan curve per component of `L`, each enclosing its own component
/// and lying outside all the others.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourFamily {
    contours: Vec<JordanContour>,
}

impl ContourFamily {
    /// Checks admissibility against `set` and wraps the curves.
    pub fn new(set: &CompactSet, contours: Vec<JordanContour>) -> Result<Self> {
        if contours.len() != set.len() {
            return Err(GeometryError::ContourCollision(format!(
                "{} contours for {} components",
                contours.len(),
                set.len()
            )));
        }
        const PROBES: usize = 64;
        let probes: Vec<Vec<Point>> = set.components().iter().map(|s| component_probes(s, PROBES)).collect();
        let contour_samples: Vec<Vec<Point>> = contours.iter().map(|c| c.sample(256)).collect();
        for (i, c) in contours.iter().enumerate() {
            for (j, s) in set.components().iter().enumerate() {
                if c.distance_to_shape(s) <= 0.0 {
                    return Err(GeometryError::ContourCollision(format!("contour {i} meets component {j}")));
                }
                let expect = i32::from(i == j);
                for &z in &probes[j] {
                    let w = c.winding_number(z).map_err(|_| {
                        GeometryError::ContourCollision(format!("contour {i} passes through component {j}"))
                    })?;
                    if w != expect {
                        return Err(GeometryError::ContourCollision(format!(
                            "contour {i} has winding {w} about a point of component {j}"
                        )));
                    }
                }
            }
            for (j, other) in contour_samples.iter().enumerate() {
                if j == i {
                    continue;
                }
                for &z in other {
                    let w = c
                        .winding_number(z)
                        .map_err(|_| GeometryError::ContourCollision(format!("contours {i} and {j} touch")))?;
                    if w != 0 {
                        return Err(GeometryError::ContourCollision(format!(
                            "contour {j} is not exterior to contour {i}"
                        )));
                    }
                }
            }
        }
        Ok(Self { contours })
    }

    pub fn contours(&self) -> &[JordanContour] {
        &self.contours
    }
}

/// Sample points of a shape used for winding checks: boundary plus an interior point.
fn component_probes(s: &Shape, n: usize) -> Vec<Point> {
    let mut pts = s.boundary_sample(n.max(s.min_samples())).expect("enough samples");
    pts.truncate(n - 1);
    pts.push(s.anchor());
    pts
}

/// Outward offset of a polygon by `d`: arcs around convex vertices, mitre
/// points at reflex vertices. Deep notches make this fold over itself, in
/// which case the caller offsets the convex hull instead.
fn offset_polygon(p: &Polygon, d: f64) -> std::result::Result<Vec<Point>, String> {
    let v = p.vertices();
    let n = v.len();
    let normal = |a: Point, b: Point| -> Point {
        let t = (b - a) / (b - a).norm();
        Point::new(t.im, -t.re)
    };
    let mut out = Vec::new();
    for i in 0..n {
        let prev = v[(i + n - 1) % n];
        let cur = v[i];
        let next = v[(i + 1) % n];
        let n_in = normal(prev, cur);
        let n_out = normal(cur, next);
        if p.is_convex_vertex(i) {
            let a0 = n_in.arg();
            let mut a1 = n_out.arg();
            while a1 < a0 {
                a1 += TAU;
            }
            let steps = (((a1 - a0) / (PI / 32.0)).ceil() as usize).max(1);
            for k in 0..=steps {
                let a = a0 + (a1 - a0) * k as f64 / steps as f64;
                out.push(cur + Point::from_polar(d, a));
            }
        } else {
            // Intersection of the two offset edge lines.
            let p1 = prev + n_in * d;
            let r1 = cur - prev;
            let p2 = cur + n_out * d;
            let r2 = next - cur;
            let denom = cross(r1, r2);
            if denom.abs() < 1e-300 {
                out.push(cur + n_in * d);
            } else {
                let t = cross(p2 - p1, r2) / denom;
                out.push(p1 + r1 * t);
            }
        }
    }
    let m = out.len();
    for i in 0..m {
        for j in (i + 1)..m {
            if j == i + 1 || (i == 0 && j == m - 1) {
                continue;
            }
            if segments_intersect(out[i], out[(i + 1) % m], out[j], out[(j + 1) % m]) {
                return Err("offset polyline self-intersects".into());
            }
        }
    }
    Ok(out)
}

/// Convex hull (monotone chain), counterclockwise.
fn convex_hull(p: &Polygon) -> Polygon {
    let mut pts = p.vertices.clone();
    pts.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &q in iter {
            while hull.len() >= start + 2 && orient(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    Polygon { vertices: hull }
}

/// Builds an admissible family: each component is surrounded at distance
/// `inflation · (half gap to the rest of L)`, concentric circles for disks and
/// outward offsets for polygons. Fails with `ContourCollision` when the
/// resulting curves are not admissible.
pub fn build_contour_family(set: &CompactSet, inflation: f64) -> Result<ContourFamily> {
    if !(inflation > 0.0) || !inflation.is_finite() {
        return Err(GeometryError::ContourCollision(format!("inflation {inflation} must be positive")));
    }
    let contours = set
        .components()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let d = inflation * set.half_gap(i);
            match s {
                Shape::Disk { center, radius } => Ok(JordanContour::Circle { center: *center, radius: radius + d }),
                Shape::Polygon(p) => offset_polygon(p, d)
                    .or_else(|_| offset_polygon(&convex_hull(p), d))
                    .map(|points| JordanContour::ClosedPolyline { points })
                    .map_err(|e| GeometryError::ContourCollision(format!("component {i}: {e}"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    ContourFamily::new(set, contours)
}

pub fn winding_number(c: &JordanContour, z: Point) -> Result<i32> {
    c.winding_number(z)
}
