//! The `acf` command line: subcommands, preset scenarios, JSON and CSV output.
//!
//! JSON goes to stdout with every float written to 17 significant digits and
//! every reported quantity tagged with its provenance. Plot data goes to CSV
//! files named by `--csv`. A reproducibility header (version, arguments,
//! effective tolerances) goes to stderr.
//!
//! Exit codes: 0 success, 2 usage or precondition error, 3 numerical
//! non-convergence.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{Map, Value, json};

use crate::classify::{
    Bounds, BoundsOptions, ClassifyError, DeviationRoute, Outcome, Rule, SequenceSpec, Uncertain, classify_sequence,
    compute_bounds, verify_chain,
};
use crate::construct::{Complex, ConstructError, construct_step, weighted_sum_trace};
use crate::geometry::{CompactSet, GeometryError, Point};
use crate::minimax::{
    DeviationRecord, FitModel, MinimaxError, PiecewiseTarget, PolynomialC, RhoEstimate, estimate_rho_deviation,
};
use crate::potential::{GreenOptions, PotentialError, capacity, estimate_rho_green, green_grid, solve_green};
use crate::scenario::{
    EX33_RHO, EX33_TOLERANCE, PresetError, Provenance, ScenarioPreset, ex31_bound, preset_ex31, preset_ex32,
    preset_ex33, preset_ex33_unit_disk,
};

/// Default tolerances. Every entry can be overridden by the flag named in
/// its comment.
pub mod defaults {
    /// Initial charges per component (`--charges`); doubled while the
    /// boundary residual is above `1e-4` unless `--no-refine` is given.
    pub const CHARGES: usize = 128;
    /// Raster cells along the longer side for the level-set scan (`--raster`).
    pub const RASTER: usize = 512;
    /// Deviation-fit degree range (`--nmin`, `--nmax`).
    pub const N_MIN: usize = 1;
    pub const N_MAX: usize = 30;
    /// Boundary points per component for minimax grids (`--grid`); `0`
    /// means `8·(nmax + 1)`.
    pub const GRID: usize = 0;
    /// Degree range of the `example ex33` deviation route (`--nmax`).
    pub const EX33_N_MAX: usize = 42;
    /// Largest degree searched by `construct` (`--nmax` there).
    pub const CONSTRUCT_N_MAX: usize = 200;
    /// Upper end of the `h0` search for `example ex32` (`--h-max`).
    pub const H_SEARCH_MAX: f64 = 1e12;
    /// Grid resolution for the `green` CSV (`--resolution`).
    pub const GREEN_CSV_RESOLUTION: usize = 200;
}

#[derive(Debug, Parser)]
#[command(name = "acf", version, about = "Asymptotic convergence factors and weighted universal Taylor series")]
struct Cli {
    #[command(flatten)]
    tol: Tolerances,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Fit {
    LogLinear,
    SqrtPrefactor,
}

impl From<Fit> for FitModel {
    fn from(f: Fit) -> Self {
        match f {
            Fit::LogLinear => FitModel::LogLinear,
            Fit::SqrtPrefactor => FitModel::SqrtPrefactor,
        }
    }
}

#[derive(Debug, Clone, Args)]
struct Tolerances {
    #[arg(long, global = true, default_value_t = defaults::CHARGES)]
    charges: usize,
    #[arg(long, global = true)]
    no_refine: bool,
    #[arg(long, global = true, default_value_t = defaults::RASTER)]
    raster: usize,
    #[arg(long, global = true, default_value_t = defaults::N_MIN)]
    nmin: usize,
    #[arg(long, global = true)]
    nmax: Option<usize>,
    #[arg(long, global = true, default_value_t = defaults::GRID)]
    grid: usize,
    #[arg(long, global = true, value_enum, default_value_t = Fit::SqrtPrefactor)]
    fit: Fit,
}

impl Tolerances {
    fn green(&self) -> GreenOptions {
        let g = GreenOptions::with_charges(self.charges);
        if self.no_refine { g.fixed() } else { g }
    }

    fn route(&self, default_n_max: usize) -> DeviationRoute {
        let n_max = self.nmax.unwrap_or(default_n_max);
        let grid = if self.grid == 0 { 8 * (n_max + 1) } else { self.grid };
        DeviationRoute { n_min: self.nmin, n_max, grid_per_component: grid, model: self.fit.into() }
    }

    fn bounds(&self, method: Method, default_n_max: usize) -> BoundsOptions {
        BoundsOptions {
            green: self.green(),
            raster: self.raster,
            deviation: (method != Method::Green).then(|| self.route(default_n_max)),
        }
    }

    fn describe(&self, default_n_max: usize) -> String {
        let r = self.route(default_n_max);
        format!(
            "charges={} refine={} raster={} nmin={} nmax={} grid={} fit={:?}",
            self.charges, !self.no_refine, self.raster, r.n_min, r.n_max, r.grid_per_component, self.fit
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Green,
    Deviation,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Green's function of the complement: Robin constant, capacity, residual.
    Green {
        geometry: PathBuf,
        /// Write a CSV grid `x,y,g` here.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = defaults::GREEN_CSV_RESOLUTION)]
        resolution: usize,
    },
    /// Estimate the asymptotic convergence factor.
    Rho {
        geometry: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Both)]
        method: Method,
        /// Write the deviation sequence `n,d_hat,lower_bound` here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Tri-state verdict for `β_n = λ^n` or a list of root-modulus limit points.
    Classify {
        geometry: PathBuf,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        z0: Point,
        #[arg(long, allow_hyphen_values = true, conflicts_with = "limit_points")]
        lambda: Option<f64>,
        /// Comma separated; `inf` allowed.
        #[arg(long, value_delimiter = ',')]
        limit_points: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = Method::Both)]
        method: Method,
    },
    /// Search for a universality step polynomial.
    Construct {
        geometry: PathBuf,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        z0: Point,
        /// Coefficients about `z0`, comma separated; `re:im` for complex.
        #[arg(long, allow_hyphen_values = true)]
        p0: String,
        #[arg(long, allow_hyphen_values = true)]
        u: String,
        #[arg(long)]
        eps0: f64,
        #[arg(long)]
        s0: u32,
        #[arg(long, allow_hyphen_values = true)]
        lambda: f64,
        /// Write the search trajectory here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// CSV `n,modulus,log10_modulus` of `|λ^n S_n(f, z0)(w)|`.
    Trace {
        /// Taylor coefficients about `z0`; `re:im` for complex.
        #[arg(long, allow_hyphen_values = true, conflicts_with = "series")]
        coeffs: Option<String>,
        /// A named series instead of explicit coefficients.
        #[arg(long, value_enum)]
        series: Option<Series>,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true, default_value = "0,0")]
        z0: Point,
        #[arg(long, allow_hyphen_values = true)]
        lambda: f64,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        w: Point,
        #[arg(long, default_value_t = 1)]
        from: usize,
        #[arg(long, default_value_t = 500)]
        to: usize,
    },
    /// Run a preset scenario and check it against its expected facts.
    Example {
        #[arg(value_enum)]
        name: ExampleName,
        #[arg(long, default_value_t = 18.0)]
        theta0: f64,
        #[arg(long, default_value_t = 0.5)]
        beta0: f64,
        #[arg(long, default_value_t = 9)]
        m0: usize,
        #[arg(long, default_value_t = defaults::H_SEARCH_MAX)]
        h_max: f64,
        /// Also write the preset geometry JSON here.
        #[arg(long)]
        geometry_out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Series {
    /// `1/(1 - (z - z0))`: every coefficient is 1.
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExampleName {
    Ex31,
    Ex32,
    Ex33,
    #[value(name = "ex33-unit-disk")]
    Ex33UnitDisk,
}

fn parse_point(s: &str) -> Result<Point, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected x,y but got {s:?}"));
    }
    let x = parts[0].trim().parse::<f64>().map_err(|e| e.to_string())?;
    let y = parts[1].trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok(Point::new(x, y))
}

fn parse_coeffs(s: &str) -> Result<Vec<Complex>, Failure> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            let (re, im) = t.split_once(':').unwrap_or((t, "0"));
            match (re.parse::<f64>(), im.parse::<f64>()) {
                (Ok(a), Ok(b)) if a.is_finite() && b.is_finite() => Ok(Complex::new(a, b)),
                _ => Err(Failure::usage(format!("bad coefficient {t:?}"))),
            }
        })
        .collect()
}

/// An error with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

fn potential_code(e: &PotentialError) -> i32 {
    match e {
        PotentialError::IllConditioned(_)
        | PotentialError::ResidualTooLarge(_)
        | PotentialError::ResolutionTooCoarse(_) => 3,
        _ => 2,
    }
}

fn minimax_code(e: &MinimaxError) -> i32 {
    match e {
        MinimaxError::Geometry(_) | MinimaxError::Precondition(_) | MinimaxError::GridTooCoarse { .. } => 2,
        MinimaxError::Potential(p) => potential_code(p),
        _ => 3,
    }
}

impl From<GeometryError> for Failure {
    fn from(e: GeometryError) -> Self {
        Failure::usage(e.to_string())
    }
}

impl From<PotentialError> for Failure {
    fn from(e: PotentialError) -> Self {
        Failure { code: potential_code(&e), message: e.to_string() }
    }
}

impl From<MinimaxError> for Failure {
    fn from(e: MinimaxError) -> Self {
        Failure { code: minimax_code(&e), message: e.to_string() }
    }
}

impl From<ClassifyError> for Failure {
    fn from(e: ClassifyError) -> Self {
        let code = match &e {
            ClassifyError::Potential(p) => potential_code(p),
            ClassifyError::Minimax(m) => minimax_code(m),
            ClassifyError::ConsistencyAlarm(_) => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<ConstructError> for Failure {
    fn from(e: ConstructError) -> Self {
        let code = match &e {
            ConstructError::Minimax(m) => minimax_code(m),
            ConstructError::NotFoundWithinNmax { .. } => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<PresetError> for Failure {
    fn from(e: PresetError) -> Self {
        Failure::usage(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Output formatting

/// Float as JSON: 17 significant digits, non-finite values as strings.
fn float_json(x: f64) -> Value {
    if x.is_finite() {
        Value::from(x)
    } else if x.is_nan() {
        Value::String("nan".into())
    } else if x > 0.0 {
        Value::String("inf".into())
    } else {
        Value::String("-inf".into())
    }
}

/// `{"value": x, "provenance": p}`.
fn fact(x: f64, p: Provenance) -> Value {
    json!({ "value": float_json(x), "provenance": p })
}

fn uncertain_fact(u: Uncertain, p: Provenance) -> Value {
    json!({ "value": float_json(u.value), "uncertainty": float_json(u.uncertainty), "provenance": p })
}

fn write_json(v: &Value, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(f) = n.as_f64().filter(|_| n.is_f64()) {
                let _ = write!(out, "{f:.16e}");
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Value::Array(a) if a.is_empty() => out.push_str("[]"),
        Value::Array(a) => {
            out.push_str("[\n");
            for (i, x) in a.iter().enumerate() {
                out.push_str(&pad);
                out.push_str("  ");
                write_json(x, indent + 1, out);
                out.push_str(if i + 1 < a.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad);
            out.push(']');
        }
        Value::Object(o) if o.is_empty() => out.push_str("{}"),
        Value::Object(o) => {
            out.push_str("{\n");
            for (i, (k, x)) in o.iter().enumerate() {
                out.push_str(&pad);
                out.push_str("  ");
                out.push_str(&serde_json::to_string(k).expect("key serializes"));
                out.push_str(": ");
                write_json(x, indent + 1, out);
                out.push_str(if i + 1 < o.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad);
            out.push('}');
        }
    }
}

/// Pretty JSON with floats at 17 significant digits; keys sorted.
pub fn render_json(v: &Value) -> String {
    let mut out = String::new();
    write_json(v, 0, &mut out);
    out.push('\n');
    out
}

fn csv_float(x: f64) -> String {
    if x.is_finite() { format!("{x:.16e}") } else { format!("{x}") }
}

fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<(), Failure> {
    let mut text = String::from(header);
    text.push('\n');
    for r in rows {
        text.push_str(&r);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

fn point_json(z: Point, p: Provenance) -> Value {
    json!({ "value": [float_json(z.re), float_json(z.im)], "provenance": p })
}

fn rho_json(e: &RhoEstimate) -> Value {
    json!({
        "method": e.method,
        "value": fact(e.value, Provenance::Derived),
        "lower": fact(e.lower, Provenance::Derived),
        "upper": fact(e.upper, Provenance::Derived),
        "diagnostics": { "provenance": Provenance::Derived, "data": e.diagnostics.clone() },
    })
}

fn bounds_json(b: &Bounds) -> Value {
    json!({
        "z0": point_json(b.z0, Provenance::Trivial),
        "r0": fact(b.r0, Provenance::Trivial),
        "R0": fact(b.big_r0, Provenance::Trivial),
        "rho": rho_json(&b.rho),
        "rho_estimates": b.rho_estimates.iter().map(rho_json).collect::<Vec<_>>(),
        "M": uncertain_fact(b.m, Provenance::Derived),
        "M0": uncertain_fact(b.m0, Provenance::Derived),
        "annulus_case": b.annulus_case,
    })
}

fn verdict_json(bounds: &Bounds, seq: &SequenceSpec) -> Result<Value, Failure> {
    let v = classify_sequence(bounds, seq)?;
    let margins: Map<String, Value> =
        v.margins.iter().map(|(k, m)| (k.clone(), uncertain_fact(*m, Provenance::Derived))).collect();
    Ok(json!({
        "sequence": {
            "limit_points": seq.limit_points().iter().map(|&x| float_json(x)).collect::<Vec<_>>(),
            "generator": seq.generator().map(float_json),
        },
        "outcome": v.outcome,
        "rule": v.rule,
        "margins": margins,
        "narrative": v.narrative,
    }))
}

fn deviation_csv(path: &Path, records: &[DeviationRecord]) -> Result<(), Failure> {
    write_csv(
        path,
        "n,d_hat,lower_bound",
        records.iter().map(|r| format!("{},{},{}", r.n, csv_float(r.d_hat), csv_float(r.lower_bound))),
    )
}

fn read_geometry(path: &Path) -> Result<CompactSet, Failure> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(CompactSet::from_json(&text)?)
}

fn step_target(set: &CompactSet) -> PiecewiseTarget {
    let mut values = vec![1.0; set.len()];
    values[0] = 0.0;
    PiecewiseTarget::constants(&values)
}

// ---------------------------------------------------------------------------
// Subcommands

fn cmd_green(tol: &Tolerances, geometry: &Path, csv: Option<&Path>, resolution: usize) -> Result<Value, Failure> {
    let set = read_geometry(geometry)?;
    let model = solve_green(&set, tol.green())?;
    if let Some(path) = csv {
        let rows = green_grid(&model, resolution);
        write_csv(
            path,
            "x,y,g",
            rows.into_iter().map(|(x, y, g)| format!("{},{},{}", csv_float(x), csv_float(y), csv_float(g))),
        )?;
    }
    Ok(json!({
        "command": "green",
        "robin_constant": fact(model.robin_constant(), Provenance::Derived),
        "capacity": fact(capacity(&model), Provenance::Derived),
        "residual_norm": fact(model.residual_norm(), Provenance::Derived),
        "charges_per_component": model.charges_per_component(),
    }))
}

fn cmd_rho(tol: &Tolerances, geometry: &Path, method: Method, csv: Option<&Path>) -> Result<Value, Failure> {
    let set = read_geometry(geometry)?;
    let mut estimates = Vec::new();
    if method != Method::Deviation {
        let model = solve_green(&set, tol.green())?;
        estimates.push(estimate_rho_green(&model, tol.raster)?);
    }
    if method != Method::Green {
        let r = tol.route(defaults::N_MAX);
        let (est, records) =
            estimate_rho_deviation(&set, &step_target(&set), r.n_min, r.n_max, r.grid_per_component, r.model)?;
        if let Some(path) = csv {
            deviation_csv(path, &records)?;
        }
        estimates.push(est);
    }
    Ok(json!({
        "command": "rho",
        "estimates": estimates.iter().map(rho_json).collect::<Vec<_>>(),
    }))
}

fn cmd_classify(
    tol: &Tolerances,
    geometry: &Path,
    z0: Point,
    lambda: Option<f64>,
    limit_points: Option<Vec<f64>>,
    method: Method,
) -> Result<Value, Failure> {
    let seq = match (lambda, limit_points) {
        (Some(l), None) => SequenceSpec::geometric(l)?,
        (None, Some(p)) => SequenceSpec::from_limit_points(p)?,
        _ => return Err(Failure::usage("give exactly one of --lambda and --limit-points")),
    };
    let set = read_geometry(geometry)?;
    let bounds = compute_bounds(&set, z0, &tol.bounds(method, defaults::N_MAX))?;
    Ok(json!({
        "command": "classify",
        "bounds": bounds_json(&bounds),
        "verdict": verdict_json(&bounds, &seq)?,
    }))
}

#[allow(clippy::too_many_arguments)]
fn cmd_construct(
    tol: &Tolerances,
    geometry: &Path,
    z0: Point,
    p0: &str,
    u: &str,
    eps0: f64,
    s0: u32,
    lambda: f64,
    csv: Option<&Path>,
) -> Result<Value, Failure> {
    let set = read_geometry(geometry)?;
    let p0 = PolynomialC::new(z0, parse_coeffs(p0)?);
    let u = PolynomialC::new(z0, parse_coeffs(u)?);
    let model = solve_green(&set, tol.green())?;
    let rho = estimate_rho_green(&model, tol.raster)?;
    let n_max = tol.nmax.unwrap_or(defaults::CONSTRUCT_N_MAX);
    let step = match construct_step(&set, z0, &p0, &u, eps0, s0, lambda, n_max, &rho) {
        Ok(s) => s,
        Err(e) => {
            if let (Some(path), ConstructError::NotFoundWithinNmax { trajectory, .. }) = (csv, &e) {
                trajectory_csv(path, trajectory)?;
            }
            return Err(e.into());
        }
    };
    if let Some(path) = csv {
        trajectory_csv(path, &step.rate_records)?;
    }
    let d = Provenance::Derived;
    Ok(json!({
        "command": "construct",
        "rho": rho_json(&rho),
        "n0": step.n0,
        "center": point_json(step.s.center(), Provenance::Trivial),
        "coefficients": {
            "value": step.s.coeffs().iter().map(|c| json!([float_json(c.re), float_json(c.im)])).collect::<Vec<_>>(),
            "provenance": d,
        },
        "err_k0": fact(step.err_k0, d),
        "err_pi": fact(step.err_pi, d),
        "beta_n0": { "value": [float_json(step.beta_n0.re), float_json(step.beta_n0.im)], "provenance": Provenance::Trivial },
        "envelope": step.envelope.map(|e| json!({
            "c0": fact(e.c0, d),
            "constant": fact(e.constant, d),
            "records": e.records,
        })),
    }))
}

fn trajectory_csv(path: &Path, records: &[crate::construct::SearchRecord]) -> Result<(), Failure> {
    write_csv(
        path,
        "n,err_k0,err_pi,deviation,weighted_deviation,lawson_converged",
        records.iter().map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.n,
                csv_float(r.err_k0),
                csv_float(r.err_pi),
                csv_float(r.deviation),
                csv_float(r.weighted_deviation),
                r.lawson_converged
            )
        }),
    )
}

#[allow(clippy::too_many_arguments)]
fn cmd_trace(
    coeffs: Option<&str>,
    series: Option<Series>,
    z0: Point,
    lambda: f64,
    w: Point,
    from: usize,
    to: usize,
) -> Result<String, Failure> {
    if from > to {
        return Err(Failure::usage(format!("empty range {from}..={to}")));
    }
    let c = match (coeffs, series) {
        (Some(s), None) => parse_coeffs(s)?,
        (None, Some(Series::Geometric)) => vec![Complex::new(1.0, 0.0); to + 1],
        _ => return Err(Failure::usage("give exactly one of --coeffs and --series")),
    };
    let trace = weighted_sum_trace(&c, z0, lambda, w, from..=to)?;
    let mut out = String::from("n,modulus,log10_modulus\n");
    for p in trace {
        let _ = writeln!(out, "{},{},{}", p.n, csv_float(p.modulus), csv_float(p.log10_modulus));
    }
    Ok(out)
}

fn check(name: &str, pass: bool, detail: Value) -> Value {
    json!({ "name": name, "pass": pass, "detail": detail })
}

fn preset_json(p: &ScenarioPreset) -> Value {
    json!({
        "name": p.name,
        "geometry": p.geometry.to_json(),
        "z0": point_json(p.z0, Provenance::Trivial),
        "expected": p.facts.iter().map(|f| json!({
            "quantity": f.quantity,
            "relation": f.relation,
            "value": float_json(f.value),
            "provenance": f.provenance,
        })).collect::<Vec<_>>(),
        "notes": p.notes,
    })
}

fn classify_checks(bounds: &Bounds, table: &[(f64, Outcome, Option<Rule>)]) -> Result<Vec<Value>, Failure> {
    let mut out = Vec::new();
    for &(lambda, outcome, rule) in table {
        let v = classify_sequence(bounds, &SequenceSpec::geometric(lambda)?)?;
        let pass = v.outcome == outcome && rule.is_none_or(|r| r == v.rule);
        out.push(check(
            &format!("lambda={lambda}"),
            pass,
            json!({ "outcome": v.outcome, "rule": v.rule, "narrative": v.narrative }),
        ));
    }
    Ok(out)
}

fn chain_check(bounds: &Bounds) -> Result<Value, Failure> {
    let c = verify_chain(bounds)?;
    Ok(check(
        "chain",
        c.pass,
        json!({
            "inv_R0": fact(c.inv_big_r0, Provenance::Trivial),
            "rho_lower": fact(c.rho_lower, Provenance::Derived),
            "rho_upper": fact(c.rho_upper, Provenance::Derived),
            "inv_rho_lower": fact(c.inv_rho_lower, Provenance::Derived),
            "M": uncertain_fact(c.m, Provenance::Derived),
        }),
    ))
}

fn cmd_example(
    tol: &Tolerances,
    name: ExampleName,
    theta0: f64,
    beta0: f64,
    m0: usize,
    h_max: f64,
    geometry_out: Option<&Path>,
) -> Result<Value, Failure> {
    let preset = match name {
        ExampleName::Ex31 => preset_ex31(theta0)?,
        ExampleName::Ex32 => preset_ex32(beta0, m0, h_max)?,
        ExampleName::Ex33 => preset_ex33(),
        ExampleName::Ex33UnitDisk => preset_ex33_unit_disk(),
    };
    if let Some(path) = geometry_out {
        std::fs::write(path, render_json(&preset.geometry.to_json()))
            .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))?;
    }
    let set = &preset.geometry;
    let mut checks = Vec::new();
    let mut computed = Map::new();
    match name {
        ExampleName::Ex31 => {
            let bound = ex31_bound(theta0);
            let first = (5..=30).find(|&t| ex31_bound(t as f64) < 0.5);
            computed.insert("bound".into(), fact(bound, Provenance::Paper));
            checks.push(check("threshold_theta0", first == Some(18), json!({ "first": first })));
            let bounds = compute_bounds(set, preset.z0, &tol.bounds(Method::Both, defaults::N_MAX))?;
            let rho = &bounds.rho;
            checks.push(check(
                "rho_below_bound",
                rho.value <= bound + rho.width() && rho.value >= 1.0 / bounds.big_r0,
                json!({}),
            ));
            if bound < 0.5 {
                checks.extend(classify_checks(
                    &bounds,
                    &[
                        (2.0, Outcome::Nonempty, Some(Rule::Thm22i)),
                        (1.0 / 20.0, Outcome::Empty, Some(Rule::Prop41)),
                        (20.0, Outcome::Empty, Some(Rule::Prop42)),
                        (2.5, Outcome::Unknown, Some(Rule::QuestionGap)),
                    ],
                )?);
            }
            checks.push(chain_check(&bounds)?);
            computed.insert("bounds".into(), bounds_json(&bounds));
        }
        ExampleName::Ex32 => {
            let bounds = compute_bounds(set, preset.z0, &tol.bounds(Method::Green, defaults::N_MAX))?;
            checks.push(check("rho_below_beta0", bounds.rho.upper < beta0, json!({ "beta0": float_json(beta0) })));
            checks.push(chain_check(&bounds)?);
            computed.insert("bounds".into(), bounds_json(&bounds));
        }
        ExampleName::Ex33 => {
            let model = solve_green(set, tol.green())?;
            let green = estimate_rho_green(&model, tol.raster)?;
            let r = tol.route(defaults::EX33_N_MAX);
            let (dev, _) =
                estimate_rho_deviation(set, &step_target(set), r.n_min, r.n_max, r.grid_per_component, r.model)?;
            for e in [&green, &dev] {
                let within = (e.value - EX33_RHO).abs() <= EX33_TOLERANCE;
                let bracketed = e.lower <= e.value && e.value <= e.upper;
                let covers = e.lower <= EX33_RHO && EX33_RHO <= e.upper;
                checks.push(check(
                    &format!("rho_{}", serde_json::to_value(e.method).unwrap().as_str().unwrap()),
                    within && bracketed && covers,
                    json!({
                        "within_tolerance": within,
                        "inside_own_bracket": bracketed,
                        "bracket_covers_reference": covers,
                    }),
                ));
            }
            let bounds = Bounds {
                rho_estimates: vec![green.clone(), dev.clone()],
                ..compute_bounds(set, preset.z0, &tol.bounds(Method::Green, defaults::N_MAX))?
            };
            checks.extend(classify_checks(
                &bounds,
                &[
                    (1.0, Outcome::Nonempty, None),
                    (EX33_RHO, Outcome::Unknown, None),
                    (1.0 / EX33_RHO, Outcome::Unknown, None),
                ],
            )?);
            computed.insert("reference_rho".into(), fact(EX33_RHO, Provenance::Paper));
            computed.insert("green".into(), rho_json(&green));
            computed.insert("deviation".into(), rho_json(&dev));
            computed.insert("bounds".into(), bounds_json(&bounds));
        }
        ExampleName::Ex33UnitDisk => {
            let bounds = compute_bounds(set, preset.z0, &tol.bounds(Method::Green, defaults::N_MAX))?;
            checks.push(chain_check(&bounds)?);
            computed.insert("bounds".into(), bounds_json(&bounds));
        }
    }
    let pass = checks.iter().all(|c| c["pass"] == Value::Bool(true));
    Ok(json!({
        "command": "example",
        "scenario": preset_json(&preset),
        "computed": computed,
        "checks": checks,
        "result": if pass { "PASS" } else { "FAIL" },
    }))
}

fn execute(cli: &Cli) -> Result<String, Failure> {
    let tol = &cli.tol;
    let value = match &cli.command {
        Command::Green { geometry, csv, resolution } => cmd_green(tol, geometry, csv.as_deref(), *resolution)?,
        Command::Rho { geometry, method, csv } => cmd_rho(tol, geometry, *method, csv.as_deref())?,
        Command::Classify { geometry, z0, lambda, limit_points, method } => {
            cmd_classify(tol, geometry, *z0, *lambda, limit_points.clone(), *method)?
        }
        Command::Construct { geometry, z0, p0, u, eps0, s0, lambda, csv } => {
            cmd_construct(tol, geometry, *z0, p0, u, *eps0, *s0, *lambda, csv.as_deref())?
        }
        Command::Trace { coeffs, series, z0, lambda, w, from, to } => {
            return cmd_trace(coeffs.as_deref(), *series, *z0, *lambda, *w, *from, *to);
        }
        Command::Example { name, theta0, beta0, m0, h_max, geometry_out } => {
            cmd_example(tol, *name, *theta0, *beta0, *m0, *h_max, geometry_out.as_deref())?
        }
    };
    Ok(render_json(&value))
}

/// Runs the command line, writing results to `out` and diagnostics to `err`.
/// Returns the exit code.
pub fn run_with(argv: &[String], out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    2
                }
            };
        }
    };
    let default_n_max = match &cli.command {
        Command::Example { name: ExampleName::Ex33, .. } => defaults::EX33_N_MAX,
        Command::Construct { .. } => defaults::CONSTRUCT_N_MAX,
        _ => defaults::N_MAX,
    };
    let _ = writeln!(err, "# acf {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(err, "# args: {}", argv.get(1..).unwrap_or_default().join(" "));
    let _ = writeln!(err, "# tolerances: {}", cli.tol.describe(default_n_max));
    match execute(&cli) {
        Ok(text) => {
            let _ = out.write_all(text.as_bytes());
            0
        }
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

/// [`run_with`] on the process's stdout and stderr.
pub fn run(argv: &[String]) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        std::iter::once("acf").chain(s.split_whitespace()).map(String::from).collect()
    }

    fn run_capture(s: &str) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_with(&args(s), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    fn temp_file(name: &str, content: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("acf-cli-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join(name);
        std::fs::write(&p, content).unwrap();
        p
    }

    const EX31: &str =
        r#"{"components":[{"type":"disk","center":[0,0],"radius":1},{"type":"disk","center":[18,0],"radius":1}]}"#;

    #[test]
    fn floats_have_seventeen_digits() {
        let s = render_json(&json!({ "a": float_json(0.1), "b": float_json(f64::INFINITY), "c": 3 }));
        assert!(s.contains("\"a\": 1.0000000000000001e-1"), "{s}");
        assert!(s.contains("\"b\": \"inf\""));
        assert!(s.contains("\"c\": 3"));
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.1));
    }

    #[test]
    fn nested_floats_are_formatted() {
        let s = render_json(&json!({ "x": [1.5, 2], "y": { "z": 0.25 } }));
        assert!(s.contains("1.5000000000000000e0"));
        assert!(s.contains("2.5000000000000000e-1"));
    }

    #[test]
    fn missing_geometry_exits_two() {
        let (code, out, err) = run_capture("rho /nonexistent/missing.json");
        assert_eq!(code, 2);
        assert!(out.is_empty());
        assert!(err.contains("# acf") && err.contains("cannot read"));
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_capture("frobnicate").0, 2);
        assert_eq!(run_capture("classify x.json --lambda 2").0, 2);
        assert_eq!(run_capture("--help").0, 0);
    }

    #[test]
    fn green_reports_unit_capacity_for_unit_disks() {
        let g = temp_file(
            "unit.json",
            r#"{"components":[{"type":"disk","center":[0,0],"radius":1},{"type":"disk","center":[3,0],"radius":0.5}]}"#,
        );
        let csv = g.with_extension("csv");
        let (code, out, _) = run_capture(&format!("green {} --csv {} --resolution 20", g.display(), csv.display()));
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["capacity"]["provenance"], "derived");
        let text = std::fs::read_to_string(csv).unwrap();
        assert!(text.starts_with("x,y,g\n"));
    }

    #[test]
    fn classify_ex31_lambda_two() {
        let g = temp_file("ex31.json", EX31);
        let (code, out, _) = run_capture(&format!("classify {} --z0 0,0 --lambda 2 --method green", g.display()));
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["verdict"]["outcome"], "NONEMPTY");
        assert_eq!(v["verdict"]["rule"], "Thm2.2(i)");
        assert_eq!(v["bounds"]["R0"]["provenance"], "trivial");
    }

    #[test]
    fn construct_refusal_exits_two() {
        let g = temp_file("ex31c.json", EX31);
        let (code, _, err) =
            run_capture(&format!("construct {} --z0 0,0 --p0 0 --u 1 --eps0 0.1 --s0 10 --lambda 10", g.display()));
        assert_eq!(code, 2, "{err}");
    }

    #[test]
    fn construct_exhaustion_exits_three() {
        let g = temp_file("ex31d.json", EX31);
        let (code, _, err) = run_capture(&format!(
            "construct {} --z0 0,0 --p0 0 --u 1 --eps0 1e-14 --s0 10 --lambda 2 --nmax 2",
            g.display()
        ));
        assert_eq!(code, 3, "{err}");
    }

    #[test]
    fn trace_csv() {
        let (code, out, _) = run_capture("trace --series geometric --lambda 0.05 --w 18,0 --from 1 --to 3");
        assert_eq!(code, 0);
        let mut lines = out.lines();
        assert_eq!(lines.next(), Some("n,modulus,log10_modulus"));
        assert!(lines.next().unwrap().starts_with("1,9.4999999999999996e-1,"));
    }

    #[test]
    fn outputs_are_byte_identical() {
        let g = temp_file("ex31e.json", EX31);
        let cmd = format!("rho {} --method both", g.display());
        let (c1, o1, _) = run_capture(&cmd);
        let (c2, o2, _) = run_capture(&cmd);
        assert_eq!((c1, c2), (0, 0));
        assert_eq!(o1, o2);
    }
}
