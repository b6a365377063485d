//! Gauss–Legendre rules, composite and adaptive 1-D integration, and the
//! polar and tensor-product node sets used for kernels and windows.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};

const MAX_TABLE: usize = 128;

/// Nodes and weights of an `m`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn compute_rule(m: usize) -> GaussRule {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_m and its derivative.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 0 { 1.0 } else if m == 1 { x } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (x * pm - pm1) / (x * x - 1.0);
            let dx = pm / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    GaussRule { nodes, weights }
}

/// Cached Gauss–Legendre rule with `m` nodes (`1 ≤ m ≤ 128`).
pub fn gauss_legendre(m: usize) -> &'static GaussRule {
    static TABLES: OnceLock<Vec<OnceLock<GaussRule>>> = OnceLock::new();
    assert!((1..=MAX_TABLE).contains(&m), "Gauss–Legendre order {m} unsupported");
    let tables = TABLES.get_or_init(|| (0..=MAX_TABLE).map(|_| OnceLock::new()).collect());
    tables[m].get_or_init(|| compute_rule(m))
}

/// Nodes and weights of the `m`-point rule mapped to `[a, b]`.
pub fn gl_interval(a: f64, b: f64, m: usize) -> impl Iterator<Item = (f64, f64)> {
    let rule = gauss_legendre(m);
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(move |(x, w)| (mid + half * x, half * w))
}

/// Composite Gauss–Legendre over consecutive breakpoints.
pub fn composite<F: FnMut(f64) -> f64>(breaks: &[f64], m: usize, mut f: F) -> f64 {
    let mut total = 0.0;
    for pair in breaks.windows(2) {
        if pair[1] > pair[0] {
            total += gl_interval(pair[0], pair[1], m).map(|(x, w)| w * f(x)).sum::<f64>();
        }
    }
    total
}

/// Fallible composite Gauss–Legendre.
pub fn try_composite<F: FnMut(f64) -> Result<f64>>(breaks: &[f64], m: usize, mut f: F) -> Result<f64> {
    let mut total = 0.0;
    for pair in breaks.windows(2) {
        if pair[1] > pair[0] {
            for (x, w) in gl_interval(pair[0], pair[1], m) {
                total += w * f(x)?;
            }
        }
    }
    Ok(total)
}

/// Globally adaptive bisection with a 10/20-point Gauss–Legendre error
/// estimate. Returns the integral or an error if `max_intervals` is hit.
pub fn integrate_adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_intervals: usize,
) -> Result<f64> {
    let mut estimate = |lo: f64, hi: f64| {
        let coarse: f64 = gl_interval(lo, hi, 10).map(|(x, w)| w * f(x)).sum();
        let fine: f64 = gl_interval(lo, hi, 20).map(|(x, w)| w * f(x)).sum();
        (fine, (fine - coarse).abs())
    };
    let (v, e) = estimate(a, b);
    let mut intervals = vec![(a, b, v, e)];
    loop {
        let total_err: f64 = intervals.iter().map(|t| t.3).sum();
        if total_err <= abs_tol {
            let mut parts: Vec<f64> = intervals.iter().map(|t| t.2).collect();
            parts.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
            return Ok(parts.iter().sum());
        }
        if intervals.len() >= max_intervals {
            return Err(Error::NoiseFloor(format!(
                "adaptive quadrature stalled at error estimate {total_err:e}"
            )));
        }
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, _, _) = intervals.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = estimate(lo, mid);
        let (v2, e2) = estimate(mid, hi);
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
}

/// Node counts for kernel-centred (polar) and box (tensor) rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadRule {
    /// Gauss–Legendre nodes per radial piece.
    pub radial: usize,
    /// Trapezoid nodes on the circle (n = 2) or in azimuth (n = 3).
    pub angular: usize,
    /// Gauss–Legendre nodes per axis and per box piece.
    pub per_axis: usize,
    /// Gauss–Legendre nodes per piece along principal-value slices.
    pub slice: usize,
}

impl Default for QuadRule {
    fn default() -> Self {
        QuadRule {
            radial: 12,
            angular: 16,
            per_axis: 24,
            slice: 16,
        }
    }
}

impl QuadRule {
    /// Every node count doubled, for grid-convergence self-checks.
    pub fn doubled(self) -> Self {
        QuadRule {
            radial: (2 * self.radial).min(MAX_TABLE),
            angular: 2 * self.angular,
            per_axis: (2 * self.per_axis).min(MAX_TABLE),
            slice: (2 * self.slice).min(MAX_TABLE),
        }
    }
}

/// Quadrature node: point and weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub point: Vec<f64>,
    pub weight: f64,
}

/// Polar nodes around `center` integrating `f` over the ball of radius
/// `radii.last()`, with radial pieces split at `radii` (increasing, > 0).
/// Weights are plain volume weights. Supports `n ∈ {1, 2, 3}`.
pub fn polar_nodes(center: &[f64], radii: &[f64], rule: &QuadRule) -> Result<Vec<Node>> {
    let n = center.len();
    let mut breaks = Vec::with_capacity(radii.len() + 1);
    breaks.push(0.0);
    breaks.extend_from_slice(radii);
    let radial: Vec<(f64, f64)> = breaks
        .windows(2)
        .filter(|p| p[1] > p[0])
        .flat_map(|p| gl_interval(p[0], p[1], rule.radial))
        .collect();
    let mut out = Vec::new();
    match n {
        1 => {
            for &(r, w) in &radial {
                out.push(Node {
                    point: vec![center[0] + r],
                    weight: w,
                });
                out.push(Node {
                    point: vec![center[0] - r],
                    weight: w,
                });
            }
        }
        2 => {
            let m = rule.angular;
            let dtheta = 2.0 * PI / m as f64;
            let dirs: Vec<(f64, f64)> = (0..m)
                .map(|j| ((j as f64 + 0.5) * dtheta).sin_cos())
                .collect();
            for &(r, w) in &radial {
                for &(s, c) in &dirs {
                    out.push(Node {
                        point: vec![center[0] + r * c, center[1] + r * s],
                        weight: w * r * dtheta,
                    });
                }
            }
        }
        3 => {
            let m = rule.angular;
            let dphi = 2.0 * PI / m as f64;
            let polar: Vec<(f64, f64)> = gl_interval(-1.0, 1.0, (m / 2).max(2)).collect();
            for &(r, w) in &radial {
                for &(ct, wc) in &polar {
                    let st = (1.0 - ct * ct).sqrt();
                    for j in 0..m {
                        let (sp, cp) = ((j as f64 + 0.5) * dphi).sin_cos();
                        out.push(Node {
                            point: vec![
                                center[0] + r * st * cp,
                                center[1] + r * st * sp,
                                center[2] + r * ct,
                            ],
                            weight: w * r * r * wc * dphi,
                        });
                    }
                }
            }
        }
        _ => {
            return Err(Error::invalid(format!(
                "polar quadrature supports dimensions 1 to 3, got {n}"
            )))
        }
    }
    Ok(out)
}

/// Tensor-product Gauss–Legendre nodes on a box; each axis is split at its
/// own sorted breakpoints (which must include the box ends).
pub fn tensor_nodes(breaks: &[Vec<f64>], m: usize) -> Vec<Node> {
    let axes: Vec<Vec<(f64, f64)>> = breaks
        .iter()
        .map(|b| {
            b.windows(2)
                .filter(|p| p[1] > p[0])
                .flat_map(|p| gl_interval(p[0], p[1], m))
                .collect()
        })
        .collect();
    let total: usize = axes.iter().map(Vec::len).product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; axes.len()];
    if total == 0 {
        return out;
    }
    loop {
        let mut point = Vec::with_capacity(axes.len());
        let mut weight = 1.0;
        for (a, &i) in axes.iter().zip(&idx) {
            point.push(a[i].0);
            weight *= a[i].1;
        }
        out.push(Node { point, weight });
        let mut d = axes.len();
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                break;
            }
            idx[d] = 0;
        }
    }
}
