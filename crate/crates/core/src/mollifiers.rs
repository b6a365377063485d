//! Radial mollifiers with vanishing moments and the translation-scale
//! smoothing kernels built from them.
//!
//! The profile is `φ₁(s) = c₀` on `[0, s_c]` and
//! `φ₁(s) = β(s)·(c₀ + Σ_{i=1..q} c_i z^{i+2})` on `[s_c, s_max]`, where
//! `z = (s − s_c)/(s_max − s_c)` and `β` is one minus the integral of a
//! uniform quadratic B-spline on `[s_c, s_max]` (a C² piecewise cubic).
//! The coefficients solve `∫ s^{j/n} φ₁ = n/ω_n` for `j = 0` and `0` for
//! `j = 1..q`. The bump is `φ(y) = φ₁(|y|ⁿ)`.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::density::{integrate, KernelDensity, Pushforward};
use crate::error::{Error, Result};
use crate::fit::{loglog_slope, Sweep};
use crate::geometry::{BoxDomain, Diffeo, InverseDiffeo};
use crate::quadrature::{gl_interval, QuadRule};

/// Largest supported order.
pub const MAX_ORDER: usize = 12;
/// Moment systems with a larger condition number are rejected.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Default flat part `[0, s_max · FLAT_FRACTION]` of the profile.
pub const FLAT_FRACTION: f64 = 0.1;

const MOMENT_NODES: usize = 40;

/// Area of the unit sphere `S^{n−1}`: `ω₁ = 2`, `ω₂ = 2π`, `ω_{n+2} = 2π ω_n / n`.
pub fn sphere_area(n: usize) -> f64 {
    use std::f64::consts::PI;
    match n {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI * sphere_area(n - 2) / (n - 2) as f64,
    }
}

/// Polynomial piece on `[start, end]`, coefficients in `s − start`, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub start: f64,
    pub end: f64,
    pub coeffs: Vec<f64>,
}

impl Piece {
    fn eval(&self, s: f64) -> f64 {
        let t = s - self.start;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_pow(a: &[f64], k: usize) -> Vec<f64> {
    (0..k).fold(vec![1.0], |acc, _| poly_mul(&acc, a))
}

/// `p(c0 + c1·t)` as a polynomial in `t`.
fn poly_affine(p: &[f64], c0: f64, c1: f64) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    for (k, c) in p.iter().enumerate() {
        for (i, v) in poly_pow(&[c0, c1], k).iter().enumerate() {
            out[i] += c * v;
        }
    }
    out
}

/// `β` on the three cubic pieces, as polynomials in `x = 3u ∈ [k, k+1]`.
fn beta_pieces() -> [Vec<f64>; 3] {
    [
        vec![1.0, 0.0, 0.0, -1.0 / 6.0],
        vec![0.5, 1.5, -1.5, 1.0 / 3.0],
        // (3 − x)³ / 6
        vec![27.0 / 6.0, -27.0 / 6.0, 9.0 / 6.0, -1.0 / 6.0],
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialMollifier {
    dim: usize,
    order: usize,
    s_max: f64,
    s_flat: f64,
    pieces: Vec<Piece>,
    coefficients: Vec<f64>,
    condition: f64,
}

/// Builds the order-`q` mollifier in dimension `n` with support `[0, s_max]`.
pub fn build_radial_mollifier(n: usize, q: usize, s_max: f64) -> Result<RadialMollifier> {
    RadialMollifier::build(n, q, s_max)
}

impl RadialMollifier {
    pub fn build(n: usize, q: usize, s_max: f64) -> Result<Self> {
        Self::build_with_flat(n, q, s_max, FLAT_FRACTION * s_max)
    }

    /// As [`RadialMollifier::build`] with the profile constant on `[0, s_flat]`.
    pub fn build_with_flat(n: usize, q: usize, s_max: f64, s_flat: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if q > MAX_ORDER {
            return Err(Error::invalid(format!(
                "order {q} exceeds {MAX_ORDER}; lower the order"
            )));
        }
        if !(s_max > 0.0) || !(s_flat > 0.0 && s_flat < s_max) {
            return Err(Error::invalid("need 0 < s_flat < s_max"));
        }
        let delta = s_max - s_flat;
        // Basis functions per piece as polynomials in the local variable.
        // Piece 0 is [0, s_flat]; pieces 1..=3 split [s_flat, s_max] in thirds.
        let starts = [0.0, s_flat, s_flat + delta / 3.0, s_flat + 2.0 * delta / 3.0];
        let ends = [s_flat, s_flat + delta / 3.0, s_flat + 2.0 * delta / 3.0, s_max];
        let betas = beta_pieces();
        let m = q + 1;
        // basis[i][piece] = polynomial coefficients
        let mut basis = vec![vec![Vec::new(); 4]; m];
        for k in 0..3 {
            // x = k + 3t/Δ, z = k/3 + t/Δ
            let beta = poly_affine(&betas[k], k as f64, 3.0 / delta);
            let z = [k as f64 / 3.0, 1.0 / delta];
            for (i, b) in basis.iter_mut().enumerate() {
                b[k + 1] = if i == 0 {
                    beta.clone()
                } else {
                    poly_mul(&beta, &poly_pow(&z, i + 2))
                };
            }
        }
        basis[0][0] = vec![1.0];
        for b in basis.iter_mut().skip(1) {
            b[0] = vec![0.0];
        }
        let mut mat = DMatrix::zeros(m, m);
        for j in 0..m {
            let e = j as f64 / n as f64;
            for (i, b) in basis.iter().enumerate() {
                // flat piece: ∫_0^{s_flat} s^e · b ds with b constant
                let mut acc = b[0][0] * s_flat.powf(e + 1.0) / (e + 1.0);
                for k in 1..4 {
                    let piece = Piece {
                        start: starts[k],
                        end: ends[k],
                        coeffs: b[k].clone(),
                    };
                    acc += gl_interval(starts[k], ends[k], MOMENT_NODES)
                        .map(|(s, w)| w * s.powf(e) * piece.eval(s))
                        .sum::<f64>();
                }
                mat[(j, i)] = acc;
            }
        }
        let sv = mat.clone().singular_values();
        let condition = sv.max() / sv.min();
        if !(condition <= CONDITION_LIMIT) {
            return Err(Error::IllConditioned { condition });
        }
        let mut rhs = DVector::zeros(m);
        rhs[0] = n as f64 / sphere_area(n);
        let c = mat
            .clone()
            .qr()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("moment matrix".into()))?;
        // residual relative to the size of the product terms
        let scale = (mat.abs() * c.abs()).amax().max(rhs.amax());
        let residual = (&mat * &c - &rhs).amax() / scale;
        if !(residual < 1e-12) {
            return Err(Error::IllConditioned { condition });
        }
        let coefficients: Vec<f64> = c.iter().copied().collect();
        let pieces = (0..4)
            .map(|k| {
                let len = basis.iter().map(|b| b[k].len()).max().unwrap_or(1);
                let mut coeffs = vec![0.0; len];
                for (i, b) in basis.iter().enumerate() {
                    for (d, v) in b[k].iter().enumerate() {
                        coeffs[d] += coefficients[i] * v;
                    }
                }
                Piece {
                    start: starts[k],
                    end: ends[k],
                    coeffs,
                }
            })
            .collect();
        Ok(RadialMollifier {
            dim: n,
            order: q,
            s_max,
            s_flat,
            pieces,
            coefficients,
            condition,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    pub fn s_flat(&self) -> f64 {
        self.s_flat
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Coefficients `c₀, …, c_q` of the moment solve.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Condition number of the moment matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `s` values where pieces meet, including `0` and `s_max`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.pieces.iter().map(|p| p.start).collect();
        b.push(self.s_max);
        b
    }

    /// Support radius `r_φ = s_max^{1/n}` of the bump.
    pub fn support_radius(&self) -> f64 {
        self.s_max.powf(1.0 / self.dim as f64)
    }

    /// `φ₁(s)`; zero outside `[0, s_max)`.
    pub fn profile(&self, s: f64) -> f64 {
        if !(s >= 0.0) || s >= self.s_max {
            return 0.0;
        }
        self.pieces
            .iter()
            .find(|p| s < p.end)
            .map(|p| p.eval(s))
            .unwrap_or(0.0)
    }

    /// `φ(y) = φ₁(|y|ⁿ)`.
    pub fn bump(&self, y: &[f64]) -> f64 {
        let r: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.profile(r.powi(self.dim as i32))
    }

    /// `∫₀^∞ s^{j/n} φ₁(s) ds` for `j = 0..=q`, by Gauss–Legendre on the pieces.
    pub fn moments(&self) -> Vec<f64> {
        (0..=self.order)
            .map(|j| {
                let e = j as f64 / self.dim as f64;
                let flat = self.pieces[0].coeffs[0] * self.s_flat.powf(e + 1.0) / (e + 1.0);
                flat + self.pieces[1..]
                    .iter()
                    .map(|p| {
                        gl_interval(p.start, p.end, MOMENT_NODES)
                            .map(|(s, w)| w * s.powf(e) * p.eval(s))
                            .sum::<f64>()
                    })
                    .sum::<f64>()
            })
            .collect()
    }

    /// Plain-text export; floats carry 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::from("radial-mollifier\n");
        let _ = writeln!(out, "dim {}", self.dim);
        let _ = writeln!(out, "order {}", self.order);
        let _ = writeln!(out, "s_max {:.16e}", self.s_max);
        let _ = writeln!(out, "s_flat {:.16e}", self.s_flat);
        let _ = writeln!(out, "condition {:.16e}", self.condition);
        let coeffs: Vec<String> = self.coefficients.iter().map(|c| format!("{c:.16e}")).collect();
        let _ = writeln!(out, "coefficients {}", coeffs.join(" "));
        for p in &self.pieces {
            let c: Vec<String> = p.coeffs.iter().map(|c| format!("{c:.16e}")).collect();
            let _ = writeln!(out, "piece {:.16e} {:.16e} {}", p.start, p.end, c.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == "radial-mollifier" => {}
            _ => return Err(Error::syntax(1, 1, "expected 'radial-mollifier' header")),
        }
        let mut dim = None;
        let mut order = None;
        let mut s_max = None;
        let mut s_flat = None;
        let mut condition = f64::NAN;
        let mut coefficients = Vec::new();
        let mut pieces = Vec::new();
        for (i, line) in lines {
            let ln = i + 1;
            let mut words = line.split_whitespace();
            let key = words.next().unwrap_or("");
            let nums: Vec<f64> = words
                .map(|w| {
                    w.parse::<f64>()
                        .map_err(|_| Error::syntax(ln, line.find(w).unwrap_or(0) + 1, format!("bad number '{w}'")))
                })
                .collect::<Result<_>>()?;
            let one = |v: &[f64]| -> Result<f64> {
                v.first()
                    .copied()
                    .ok_or_else(|| Error::syntax(ln, key.len() + 1, "missing value"))
            };
            match key {
                "dim" => dim = Some(one(&nums)? as usize),
                "order" => order = Some(one(&nums)? as usize),
                "s_max" => s_max = Some(one(&nums)?),
                "s_flat" => s_flat = Some(one(&nums)?),
                "condition" => condition = one(&nums)?,
                "coefficients" => coefficients = nums,
                "piece" => {
                    if nums.len() < 3 {
                        return Err(Error::syntax(ln, 1, "piece needs start, end and coefficients"));
                    }
                    pieces.push(Piece {
                        start: nums[0],
                        end: nums[1],
                        coeffs: nums[2..].to_vec(),
                    });
                }
                other => return Err(Error::syntax(ln, 1, format!("unknown key '{other}'"))),
            }
        }
        let missing = |what: &str| Error::invalid(format!("mollifier file lacks '{what}'"));
        let m = RadialMollifier {
            dim: dim.ok_or_else(|| missing("dim"))?,
            order: order.ok_or_else(|| missing("order"))?,
            s_max: s_max.ok_or_else(|| missing("s_max"))?,
            s_flat: s_flat.ok_or_else(|| missing("s_flat"))?,
            pieces,
            coefficients,
            condition,
        };
        if m.pieces.len() != 4 {
            return Err(Error::invalid("mollifier file needs four pieces"));
        }
        Ok(m)
    }
}

/// Translation-scale family `Φ(ε, x)(y) = ε⁻ⁿ φ((y − x)/ε)` on one chart.
#[derive(Debug, Clone)]
pub struct SmoothingKernel {
    mollifier: Arc<RadialMollifier>,
    domain: BoxDomain,
}

impl SmoothingKernel {
    pub fn new(mollifier: RadialMollifier, domain: BoxDomain) -> Result<Self> {
        if mollifier.dim() != domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                found: mollifier.dim(),
            });
        }
        Ok(SmoothingKernel {
            mollifier: Arc::new(mollifier),
            domain,
        })
    }

    pub fn mollifier(&self) -> &Arc<RadialMollifier> {
        &self.mollifier
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.mollifier.dim()
    }

    pub fn order(&self) -> usize {
        self.mollifier.order()
    }

    /// `ε · r_φ`.
    pub fn support_radius(&self, eps: f64) -> f64 {
        eps * self.mollifier.support_radius()
    }

    pub fn eval(&self, eps: f64, x: &[f64], y: &[f64]) -> f64 {
        let n = self.dim();
        let z: Vec<f64> = y.iter().zip(x).map(|(a, b)| (a - b) / eps).collect();
        self.mollifier.bump(&z) / eps.powi(n as i32)
    }

    /// `Φ(ε, x)` as a density; its support must lie inside the chart.
    pub fn density(&self, eps: f64, x: &[f64]) -> Result<KernelDensity> {
        if !(eps > 0.0) {
            return Err(Error::invalid("ε must be positive"));
        }
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let r = self.support_radius(eps);
        if !self.domain.contains(x) || self.domain.distance_to_boundary(x) <= r {
            return Err(Error::SupportEscape(format!(
                "kernel ball of radius {r} around {x:?} leaves the chart"
            )));
        }
        Ok(KernelDensity {
            mollifier: self.mollifier.clone(),
            center: x.to_vec(),
            eps,
        })
    }
}

/// Errors below this count as quadrature noise.
pub const ORDER_NOISE_FLOOR: f64 = 1e-13;

/// `∫ f Φ(ε, x)` over `eps_grid`, with errors against `f(x)`.
pub fn kernel_order_test<F>(kernel: &SmoothingKernel, f: F, x: &[f64], eps_grid: &[f64], rule: &QuadRule) -> Result<Sweep>
where
    F: Fn(&[f64]) -> f64,
{
    let fx = f(x);
    let value = eps_grid
        .iter()
        .map(|&e| integrate(&kernel.density(e, x)?, rule, |y| Ok(f(y))))
        .collect::<Result<Vec<f64>>>()?;
    let error = value.iter().map(|v| (v - fx).abs()).collect();
    Ok(Sweep::new(eps_grid.to_vec(), value, error, ORDER_NOISE_FLOOR * fx.abs().max(1.0)))
}

/// `(μ*Φ)(ε, p)(q) = Φ(ε, μ(p))(μ(q)) · |det Dμ(q)|`, i.e. the pushforward of
/// `Φ(ε, μ(p))` by `μ⁻¹`.
pub fn pullback_kernel(mu: Arc<dyn Diffeo>, kernel: &SmoothingKernel, eps: f64, p: &[f64]) -> Result<Pushforward> {
    let base = kernel.density(eps, &mu.apply(p)?)?;
    Ok(Pushforward {
        base: Arc::new(base),
        map: Arc::new(InverseDiffeo(mu)),
    })
}

/// Measured `ε`-growth of `∂_y^m (∂_x + ∂_y)^ℓ Φ(ε, x)(y)` along each coordinate axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthReport {
    pub m: usize,
    pub l: usize,
    pub eps: Vec<f64>,
    pub sup: Vec<f64>,
    /// Fitted `a` in `sup ≈ C ε^{−a}`; `None` when the derivative vanishes.
    pub exponent: Option<f64>,
    /// The derivative is at rounding level relative to `∂_y^m Φ`.
    pub vanishes: bool,
    pub pass: bool,
}

fn binomial(k: usize, j: usize) -> f64 {
    (0..j).fold(1.0, |acc, i| acc * (k - i) as f64 / (i + 1) as f64)
}

/// Central stencil of the `k`-th derivative: offsets (in steps) and weights.
fn stencil(k: usize) -> Vec<(f64, f64)> {
    (0..=k)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            (k as f64 / 2.0 - j as f64, sign * binomial(k, j))
        })
        .collect()
}

pub fn kernel_growth_probe(
    kernel: &SmoothingKernel,
    m: usize,
    l: usize,
    points: &[Vec<f64>],
    eps_grid: &[f64],
) -> Result<GrowthReport> {
    if m + l > 4 {
        return Err(Error::invalid("derivative order m + l must be at most 4"));
    }
    let n = kernel.dim();
    let r = kernel.mollifier().support_radius();
    // relative sample offsets in the support ball
    let ticks: Vec<f64> = (0..7).map(|i| -0.9 + 0.3 * i as f64).collect();
    let mut offsets: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..n {
        offsets = offsets
            .into_iter()
            .flat_map(|o| {
                ticks.iter().map(move |t| {
                    let mut v = o.clone();
                    v.push(*t);
                    v
                })
            })
            .collect();
    }
    offsets.retain(|o| o.iter().map(|v| v * v).sum::<f64>() < 0.95);
    let sm = stencil(m);
    let sl = stencil(l);
    let measure = |eps: f64, with_l: bool| -> f64 {
        let h = 0.02 * r * eps;
        let mut sup: f64 = 0.0;
        for x in points {
            for o in &offsets {
                let y: Vec<f64> = x.iter().zip(o).map(|(a, b)| a + b * r * eps).collect();
                for axis in 0..n {
                    let mut acc = 0.0;
                    for &(a, wa) in &sm {
                        let lst: &[(f64, f64)] = if with_l { &sl } else { &[(0.0, 1.0)] };
                        for &(b, wb) in lst {
                            let mut xs = x.clone();
                            let mut ys = y.clone();
                            xs[axis] += b * h;
                            ys[axis] += (a + b) * h;
                            acc += wa * wb * kernel.eval(eps, &xs, &ys);
                        }
                    }
                    let order = m + if with_l { l } else { 0 };
                    sup = sup.max((acc / h.powi(order as i32)).abs());
                }
            }
        }
        sup
    };
    let sup: Vec<f64> = eps_grid.iter().map(|&e| measure(e, true)).collect();
    let reference: Vec<f64> = eps_grid.iter().map(|&e| measure(e, false)).collect();
    let vanishes = l > 0
        && sup
            .iter()
            .zip(&reference)
            .zip(eps_grid)
            .all(|((s, rf), e)| *s <= 1e-6 * rf / (0.02 * r * e).powi(l as i32));
    let exponent = if vanishes {
        None
    } else {
        loglog_slope(eps_grid, &sup, 0.0).slope.map(|s| -s)
    };
    let pass = vanishes || exponent.is_some_and(|a| a <= (n + m) as f64 + 0.2);
    Ok(GrowthReport {
        m,
        l,
        eps: eps_grid.to_vec(),
        sup,
        exponent,
        vanishes,
        pass,
    })
}
