//! Shared oracles for integration tests.
#![allow(dead_code)]

use acf_core::geometry::{CompactSet, Point};
use acf_core::minimax::{ApproxProblem, Complex};
use minilp::{ComparisonOp, OptimizationDirection, Problem};

/// Green's function of the complement of two unit disks centred at `0` and
/// `d` (real), at `z`, by a finite-difference Laplace solve.
///
/// The grid covers the square of half-width `half` about `d/2` with spacing
/// `h`; nodes next to a disk use Shortley–Weller stencils with the exact
/// boundary crossing. On the outer edge the data is
/// `½ln|z| + ½ln|z-d| + γ`, written as `u1 + γ·u2` with `u1`, `u2` solved
/// separately. `γ` is fixed by the identity that the mean of
/// `g - ½ln|z| - ½ln|z-d|` over any circle about `d/2` enclosing both disks
/// equals the Robin constant. Returns `(g(z), γ)`.
pub fn two_disk_fd(d: f64, half: f64, h: f64, z: Point) -> (f64, f64) {
    let c = d / 2.0;
    let n = (2.0 * half / h).round() as usize + 1;
    let x0 = c - half;
    let y0 = -half;
    let coord = |i: usize, j: usize| Point::new(x0 + i as f64 * h, y0 + j as f64 * h);
    let centers = [Point::new(0.0, 0.0), Point::new(d, 0.0)];
    let inside = |p: Point| centers.iter().any(|q| (p - q).norm() <= 1.0);
    // Fraction of the way from p to p + h·dir at which a circle is crossed.
    let crossing = |p: Point, dir: Point| -> f64 {
        let mut best = 1.0f64;
        for q in centers {
            let f = p - q;
            let b = 2.0 * (f.re * dir.re + f.im * dir.im) * h;
            let cc = f.norm_sqr() - 1.0;
            let a = h * h;
            let disc = b * b - 4.0 * a * cc;
            if disc >= 0.0 {
                let t = (-b - disc.sqrt()) / (2.0 * a);
                if t > 0.0 && t <= 1.0 {
                    best = best.min(t);
                }
            }
        }
        best.max(1e-6)
    };
    let idx = |i: usize, j: usize| j * n + i;
    let mut kind = vec![0u8; n * n]; // 0 interior unknown, 1 edge, 2 in set
    for j in 0..n {
        for i in 0..n {
            let k = idx(i, j);
            if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                kind[k] = 1;
            } else if inside(coord(i, j)) {
                kind[k] = 2;
            }
        }
    }
    // Stencil: u_p = Σ a_q u_q + b, stored per unknown.
    struct Row {
        k: usize,
        nb: [(usize, f64); 4],
        len: usize,
        diag: f64,
    }
    let dirs = [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)];
    let mut rows = Vec::new();
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let k = idx(i, j);
            if kind[k] != 0 {
                continue;
            }
            let p = coord(i, j);
            let mut th = [1.0f64; 4];
            for (m, (di, dj)) in dirs.iter().enumerate() {
                let q = idx((i as i64 + di) as usize, (j as i64 + dj) as usize);
                if kind[q] == 2 {
                    th[m] = crossing(p, Point::new(*di as f64, *dj as f64));
                }
            }
            // Shortley–Weller weights along x and y.
            let wx = [2.0 / (th[0] * (th[0] + th[1])), 2.0 / (th[1] * (th[0] + th[1]))];
            let wy = [2.0 / (th[2] * (th[2] + th[3])), 2.0 / (th[3] * (th[2] + th[3]))];
            let diag = 2.0 / (th[0] * th[1]) + 2.0 / (th[2] * th[3]);
            let w = [wx[0], wx[1], wy[0], wy[1]];
            let mut nb = [(0usize, 0.0f64); 4];
            let mut len = 0;
            for (m, (di, dj)) in dirs.iter().enumerate() {
                let q = idx((i as i64 + di) as usize, (j as i64 + dj) as usize);
                if kind[q] != 2 {
                    nb[len] = (q, w[m]);
                    len += 1;
                }
                // Crossed neighbours carry boundary value 0.
            }
            rows.push(Row { k, nb, len, diag });
        }
    }
    let solve = |edge: &dyn Fn(Point) -> f64| -> Vec<f64> {
        let mut u = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                if kind[idx(i, j)] == 1 {
                    u[idx(i, j)] = edge(coord(i, j));
                }
            }
        }
        let omega = 2.0 / (1.0 + (std::f64::consts::PI / n as f64).sin());
        for _ in 0..100_000 {
            let mut change: f64 = 0.0;
            for r in &rows {
                let s: f64 = r.nb[..r.len].iter().map(|&(q, w)| w * u[q]).sum();
                let new = s / r.diag;
                let delta = omega * (new - u[r.k]);
                u[r.k] += delta;
                change = change.max(delta.abs());
            }
            if change < 1e-12 {
                break;
            }
        }
        u
    };
    let ln2 = |p: Point| 0.5 * p.norm().ln() + 0.5 * (p - Point::new(d, 0.0)).norm().ln();
    let u1 = solve(&ln2);
    let u2 = solve(&|_| 1.0);
    // Bilinear interpolation.
    let interp = |u: &[f64], p: Point| -> f64 {
        let fx = (p.re - x0) / h;
        let fy = (p.im - y0) / h;
        let (i, j) = (fx.floor() as usize, fy.floor() as usize);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let v = |a: usize, b: usize| u[idx(a, b)];
        (1.0 - tx) * (1.0 - ty) * v(i, j)
            + tx * (1.0 - ty) * v(i + 1, j)
            + (1.0 - tx) * ty * v(i, j + 1)
            + tx * ty * v(i + 1, j + 1)
    };
    let r = 0.5 * (c + 1.0 + half);
    let samples = 2048;
    let (mut m1, mut m2) = (0.0, 0.0);
    for k in 0..samples {
        let p = Point::new(c, 0.0) + Point::from_polar(r, std::f64::consts::TAU * k as f64 / samples as f64);
        m1 += interp(&u1, p);
        m2 += interp(&u2, p);
    }
    m1 /= samples as f64;
    m2 /= samples as f64;
    let gamma = (m1 - r.ln()) / (1.0 - m2);
    (interp(&u1, z) + gamma * interp(&u2, z), gamma)
}

/// Uniform random points on the boundary of every component.
pub fn random_boundary_points(set: &CompactSet, per_component: usize, seed: u64) -> Vec<Point> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    set.components()
        .iter()
        .flat_map(|s| (0..per_component).map(|_| s.boundary_point(rng.gen_range(0.0..1.0))).collect::<Vec<_>>())
        .collect()
}

/// Discretized complex minimax on the grid of `problem` as a linear program:
/// `|e|` is replaced by the max of `Re(e^{-iθ}e)` over the 32 directions of
/// a regular 32-gon, which lies in `[cos(π/32)|e|, |e|]`. The basis is
/// monomials in `(z - c)/s`.
pub fn lp_minimax(problem: &ApproxProblem, n: usize, c: Point, s: f64) -> f64 {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let re: Vec<_> = (0..=n).map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))).collect();
    let im: Vec<_> = (0..=n).map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))).collect();
    let t = lp.add_var(1.0, (0.0, f64::INFINITY));
    for (z, f) in problem.points.iter().zip(&problem.target) {
        let w = (z - c) / s;
        let powers: Vec<Complex> = (0..=n)
            .scan(Complex::new(1.0, 0.0), |acc, _| {
                let v = *acc;
                *acc *= w;
                Some(v)
            })
            .collect();
        for j in 0..32 {
            let rot = Complex::from_polar(1.0, -std::f64::consts::TAU * j as f64 / 32.0);
            let mut expr = vec![(t, -1.0)];
            for k in 0..=n {
                let u = rot * powers[k];
                expr.push((re[k], -u.re));
                expr.push((im[k], u.im));
            }
            lp.add_constraint(expr.as_slice(), ComparisonOp::Le, -(rot * f).re);
        }
    }
    lp.solve().expect("LP solves").objective()
}
