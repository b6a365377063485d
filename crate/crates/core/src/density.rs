//! Compactly supported n-form coefficients with quadrature rules adapted to
//! their non-smooth sets.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{Diffeo, Expr};
use crate::mollifiers::RadialMollifier;
use crate::quadrature::{polar_nodes, tensor_nodes, Node, QuadRule};

/// A density `ω` on a chart: `∫ f ω ≈ Σ weight · f(point)` over [`Density::nodes`].
pub trait Density: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, q: &[f64]) -> Result<f64>;

    /// Nodes whose weights already include the density value.
    fn nodes(&self, rule: &QuadRule) -> Result<Vec<Node>>;

    /// Scalar functions whose level sets carry the non-smooth set.
    fn level(&self, q: &[f64]) -> Result<Vec<f64>>;

    /// Critical values of each component of [`Density::level`].
    fn levels(&self) -> Vec<Vec<f64>>;

    /// Sorted parameters in `(t_lo, t_hi)` where `origin + t·dir` meets the
    /// non-smooth set.
    fn line_breaks(&self, origin: &[f64], dir: &[f64], t_lo: f64, t_hi: f64) -> Result<Vec<f64>>;

    /// Axis-aligned box containing the support.
    fn bounding_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        Err(Error::invalid("density has no bounding box"))
    }
}

fn sorted_within(mut v: Vec<f64>, t_lo: f64, t_hi: f64) -> Vec<f64> {
    v.retain(|t| t.is_finite() && *t > t_lo && *t < t_hi);
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// `Φ(ε, c)(q) = ε⁻ⁿ φ₁(|q − c|ⁿ / εⁿ)`.
#[derive(Debug, Clone)]
pub struct KernelDensity {
    pub mollifier: Arc<RadialMollifier>,
    pub center: Vec<f64>,
    pub eps: f64,
}

impl KernelDensity {
    /// Radii of the profile breakpoints.
    pub fn radii(&self) -> Vec<f64> {
        let n = self.center.len() as f64;
        self.mollifier
            .breakpoints()
            .iter()
            .filter(|s| **s > 0.0)
            .map(|s| self.eps * s.powf(1.0 / n))
            .collect()
    }
}

impl Density for KernelDensity {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, q: &[f64]) -> Result<f64> {
        let n = self.center.len();
        let r2: f64 = q.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum();
        let s = (r2.sqrt() / self.eps).powi(n as i32);
        Ok(self.mollifier.profile(s) / self.eps.powi(n as i32))
    }

    fn nodes(&self, rule: &QuadRule) -> Result<Vec<Node>> {
        let mut nodes = polar_nodes(&self.center, &self.radii(), rule)?;
        for nd in &mut nodes {
            nd.weight *= self.value(&nd.point)?;
        }
        Ok(nodes)
    }

    fn level(&self, q: &[f64]) -> Result<Vec<f64>> {
        let r2: f64 = q.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum();
        Ok(vec![r2.sqrt()])
    }

    fn levels(&self) -> Vec<Vec<f64>> {
        vec![self.radii()]
    }

    fn line_breaks(&self, origin: &[f64], dir: &[f64], t_lo: f64, t_hi: f64) -> Result<Vec<f64>> {
        let oc: Vec<f64> = origin.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let a: f64 = dir.iter().map(|v| v * v).sum();
        let b: f64 = oc.iter().zip(dir).map(|(p, q)| p * q).sum();
        let c0: f64 = oc.iter().map(|v| v * v).sum();
        let mut out = Vec::new();
        if a > 0.0 {
            for r in self.radii() {
                let disc = b * b - a * (c0 - r * r);
                if disc > 0.0 {
                    let s = disc.sqrt();
                    out.push((-b - s) / a);
                    out.push((-b + s) / a);
                }
            }
        }
        Ok(sorted_within(out, t_lo, t_hi))
    }

    fn bounding_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let r = self.eps * self.mollifier.support_radius();
        Ok((
            self.center.iter().map(|c| c - r).collect(),
            self.center.iter().map(|c| c + r).collect(),
        ))
    }
}

/// `ω(x) = scale · f(x) · Π_i (1 − ((x_i − c_i)/h_i)²)⁴` on the box `|x_i − c_i| < h_i`.
/// Each factor integrates to `h_i · 256/315`.
#[derive(Debug, Clone)]
pub struct WindowDensity {
    pub center: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub scale: f64,
    pub factor: Option<Expr>,
}

impl WindowDensity {
    pub fn new(center: Vec<f64>, half_widths: Vec<f64>, scale: f64) -> Result<Self> {
        if center.len() != half_widths.len() {
            return Err(Error::DimensionMismatch {
                expected: center.len(),
                found: half_widths.len(),
            });
        }
        if half_widths.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::invalid("window half-widths must be positive"));
        }
        Ok(WindowDensity {
            center,
            half_widths,
            scale,
            factor: None,
        })
    }

    pub fn with_factor(mut self, factor: Expr) -> Self {
        self.factor = Some(factor);
        self
    }

    /// Window scaled to total mass `mass` (without factor).
    pub fn with_mass(center: Vec<f64>, half_widths: Vec<f64>, mass: f64) -> Result<Self> {
        let unit: f64 = half_widths.iter().map(|h| h * 256.0 / 315.0).product();
        Self::new(center, half_widths, mass / unit)
    }

    /// Mass of the window without the factor.
    pub fn base_mass(&self) -> f64 {
        self.scale * self.half_widths.iter().map(|h| h * 256.0 / 315.0).product::<f64>()
    }

    pub fn lo(&self) -> Vec<f64> {
        self.center.iter().zip(&self.half_widths).map(|(c, h)| c - h).collect()
    }

    pub fn hi(&self) -> Vec<f64> {
        self.center.iter().zip(&self.half_widths).map(|(c, h)| c + h).collect()
    }
}

impl Density for WindowDensity {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, q: &[f64]) -> Result<f64> {
        let mut v = self.scale;
        for ((x, c), h) in q.iter().zip(&self.center).zip(&self.half_widths) {
            let z = (x - c) / h;
            if z.abs() >= 1.0 {
                return Ok(0.0);
            }
            v *= (1.0 - z * z).powi(4);
        }
        if let Some(f) = &self.factor {
            v *= f.eval(q);
        }
        Ok(v)
    }

    fn nodes(&self, rule: &QuadRule) -> Result<Vec<Node>> {
        let breaks: Vec<Vec<f64>> = self
            .lo()
            .into_iter()
            .zip(self.hi())
            .map(|(a, b)| vec![a, b])
            .collect();
        let mut nodes = tensor_nodes(&breaks, rule.per_axis);
        for nd in &mut nodes {
            nd.weight *= self.value(&nd.point)?;
        }
        Ok(nodes)
    }

    fn level(&self, q: &[f64]) -> Result<Vec<f64>> {
        Ok(q.to_vec())
    }

    fn levels(&self) -> Vec<Vec<f64>> {
        self.lo().into_iter().zip(self.hi()).map(|(a, b)| vec![a, b]).collect()
    }

    fn line_breaks(&self, origin: &[f64], dir: &[f64], t_lo: f64, t_hi: f64) -> Result<Vec<f64>> {
        Ok(axis_breaks(&self.levels(), origin, dir, t_lo, t_hi))
    }

    fn bounding_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.lo(), self.hi()))
    }
}

fn axis_breaks(levels: &[Vec<f64>], origin: &[f64], dir: &[f64], t_lo: f64, t_hi: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, ls) in levels.iter().enumerate() {
        if dir[i] != 0.0 {
            out.extend(ls.iter().map(|l| (l - origin[i]) / dir[i]));
        }
    }
    sorted_within(out, t_lo, t_hi)
}

/// Lebesgue measure restricted to a box, integrated piecewise between the
/// given per-axis breakpoints (which include the box ends).
#[derive(Debug, Clone)]
pub struct BoxDensity {
    pub breaks: Vec<Vec<f64>>,
}

impl BoxDensity {
    pub fn new(mut breaks: Vec<Vec<f64>>) -> Result<Self> {
        for b in &mut breaks {
            b.sort_by(f64::total_cmp);
            b.dedup();
            if b.len() < 2 {
                return Err(Error::invalid("box needs two distinct ends per axis"));
            }
        }
        Ok(BoxDensity { breaks })
    }
}

impl Density for BoxDensity {
    fn dim(&self) -> usize {
        self.breaks.len()
    }

    fn value(&self, q: &[f64]) -> Result<f64> {
        let inside = q
            .iter()
            .zip(&self.breaks)
            .all(|(x, b)| *x >= b[0] && *x <= b[b.len() - 1]);
        Ok(if inside { 1.0 } else { 0.0 })
    }

    fn nodes(&self, rule: &QuadRule) -> Result<Vec<Node>> {
        Ok(tensor_nodes(&self.breaks, rule.per_axis))
    }

    fn level(&self, q: &[f64]) -> Result<Vec<f64>> {
        Ok(q.to_vec())
    }

    fn levels(&self) -> Vec<Vec<f64>> {
        self.breaks.clone()
    }

    fn line_breaks(&self, origin: &[f64], dir: &[f64], t_lo: f64, t_hi: f64) -> Result<Vec<f64>> {
        Ok(axis_breaks(&self.breaks, origin, dir, t_lo, t_hi))
    }

    fn bounding_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((
            self.breaks.iter().map(|b| b[0]).collect(),
            self.breaks.iter().map(|b| b[b.len() - 1]).collect(),
        ))
    }
}

/// `μ_* ω`: nodes are mapped by `μ` with weights kept; the coefficient is
/// `ω(μ⁻¹ q) / |det Dμ(μ⁻¹ q)|`.
#[derive(Clone)]
pub struct Pushforward {
    pub base: Arc<dyn Density>,
    pub map: Arc<dyn Diffeo>,
}

/// Samples per line when locating level crossings of a pushed-forward density.
const LINE_SAMPLES: usize = 64;

impl Density for Pushforward {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn value(&self, q: &[f64]) -> Result<f64> {
        let (x, j) = self.map.inverse_with_jacobian(q)?;
        Ok(self.base.value(&x)? / j.determinant().abs())
    }

    fn nodes(&self, rule: &QuadRule) -> Result<Vec<Node>> {
        self.base
            .nodes(rule)?
            .into_iter()
            .map(|nd| {
                Ok(Node {
                    point: self.map.apply(&nd.point)?,
                    weight: nd.weight,
                })
            })
            .collect()
    }

    fn level(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.base.level(&self.map.apply_inverse(q)?)
    }

    fn levels(&self) -> Vec<Vec<f64>> {
        self.base.levels()
    }

    /// Sign changes of `level_i(μ⁻¹(origin + t·dir)) − L` on a uniform grid,
    /// refined by bisection.
    fn line_breaks(&self, origin: &[f64], dir: &[f64], t_lo: f64, t_hi: f64) -> Result<Vec<f64>> {
        let levels = self.levels();
        let point = |t: f64| -> Vec<f64> { origin.iter().zip(dir).map(|(o, d)| o + t * d).collect() };
        let ts: Vec<f64> = (0..=LINE_SAMPLES)
            .map(|k| t_lo + (t_hi - t_lo) * k as f64 / LINE_SAMPLES as f64)
            .collect();
        let samples: Vec<Vec<f64>> = ts.iter().map(|t| self.level(&point(*t))).collect::<Result<_>>()?;
        let mut out = Vec::new();
        for (i, ls) in levels.iter().enumerate() {
            for &l in ls {
                for k in 0..LINE_SAMPLES {
                    let (fa, fb) = (samples[k][i] - l, samples[k + 1][i] - l);
                    if fa == 0.0 {
                        out.push(ts[k]);
                        continue;
                    }
                    if fa * fb >= 0.0 {
                        continue;
                    }
                    let (mut a, mut b, mut fa) = (ts[k], ts[k + 1], fa);
                    for _ in 0..60 {
                        let mid = 0.5 * (a + b);
                        let fm = self.level(&point(mid))?[i] - l;
                        if fm == 0.0 {
                            a = mid;
                            b = mid;
                            break;
                        }
                        if fa * fm < 0.0 {
                            b = mid;
                        } else {
                            a = mid;
                            fa = fm;
                        }
                    }
                    out.push(0.5 * (a + b));
                }
            }
        }
        Ok(sorted_within(out, t_lo, t_hi))
    }
}

/// `∫ f ω` over the density's nodes.
pub fn integrate<F>(omega: &dyn Density, rule: &QuadRule, mut f: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut acc = 0.0;
    for nd in omega.nodes(rule)? {
        if nd.weight != 0.0 {
            acc += nd.weight * f(&nd.point)?;
        }
    }
    Ok(acc)
}
