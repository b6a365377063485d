//! Chart-local manifolds: domains, metrics, Christoffel symbols, vector
//! fields, their flows, and explicit diffeomorphisms.
//!
//! Christoffel arrays are stored flat with `Γ^k_{ij}` at `k*n*n + i*n + j`.

mod dsl;
mod fields;
mod parse;

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub use dsl::{Expr, Func};
pub use fields::{flow, flow_with_jacobian, Diffeo, DiffeoExpr, FlowMap, InverseDiffeo, VectorFieldExpr, FLOW_STEP};
pub use parse::parse_manifold;
pub(crate) use dsl::parse_expr_at;

/// Relative step for metric and Christoffel finite differences.
pub const METRIC_FD_STEP: f64 = 1e-5;

/// Metrics whose condition estimate exceeds this are rejected as singular.
pub const METRIC_CONDITION_LIMIT: f64 = 1e12;

/// Axis-aligned open box; bounds may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::invalid("domain bounds must satisfy lo < hi"));
        }
        Ok(BoxDomain { lo, hi })
    }

    pub fn unbounded(n: usize) -> Self {
        BoxDomain {
            lo: vec![f64::NEG_INFINITY; n],
            hi: vec![f64::INFINITY; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| v.is_finite() && *v > *a && *v < *b)
    }

    /// Euclidean distance from `x` to the boundary (infinite when unbounded).
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .fold(f64::INFINITY, |d, (v, (a, b))| d.min(v - a).min(b - v))
    }

    /// Deterministic interior sample points (three per axis).
    pub fn sample_points(&self) -> Vec<Vec<f64>> {
        let per_axis: Vec<[f64; 3]> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(&a, &b)| {
                if a.is_finite() && b.is_finite() {
                    [a + 0.25 * (b - a), a + 0.5 * (b - a), a + 0.75 * (b - a)]
                } else if a.is_finite() {
                    [a + 0.5, a + 1.0, a + 2.0]
                } else if b.is_finite() {
                    [b - 2.0, b - 1.0, b - 0.5]
                } else {
                    [-0.5, 0.5, 1.0]
                }
            })
            .collect();
        let n = self.dim();
        let mut out = Vec::with_capacity(3usize.pow(n as u32));
        for idx in 0..3usize.pow(n as u32) {
            let mut k = idx;
            let p = (0..n)
                .map(|i| {
                    let v = per_axis[i][k % 3];
                    k /= 3;
                    v
                })
                .collect();
            out.push(p);
        }
        out
    }
}

type ChristoffelFn = dyn Fn(&[f64], &mut [f64]) -> Result<()> + Send + Sync;
type MetricFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

#[derive(Clone)]
enum ChristoffelField {
    Zero,
    Entries(Vec<(usize, Expr)>),
    FromMetric,
    Custom(Arc<ChristoffelFn>),
}

#[derive(Clone)]
pub enum Metric {
    Exprs(Vec<Expr>),
    Custom(Arc<MetricFn>),
}

impl Metric {
    pub fn eval(&self, n: usize, x: &[f64]) -> DMatrix<f64> {
        match self {
            Metric::Exprs(e) => DMatrix::from_fn(n, n, |i, j| e[i * n + j].eval(x)),
            Metric::Custom(f) => f(x),
        }
    }
}

impl std::fmt::Debug for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::Exprs(e) => {
                let s: Vec<String> = e.iter().map(|x| x.to_string()).collect();
                f.debug_tuple("Exprs").field(&s).finish()
            }
            Metric::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Christoffel symbols at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    dim: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn from_components(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim * dim,
                found: data.len(),
            });
        }
        Ok(Christoffel { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `Γ^k_{ij}`.
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        let n = self.dim;
        self.data[k * n * n + i * n + j]
    }

    pub fn components(&self) -> &[f64] {
        &self.data
    }

    /// `Γ(a, b)^k = Γ^k_{ij} a^i b^j`.
    pub fn apply(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        gamma_apply(&self.data, self.dim, a, b, &mut out);
        out
    }

    /// Largest violation of `Γ^k_{ij} = Γ^k_{ji}`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.dim;
        let mut m: f64 = 0.0;
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    m = m.max((self.get(k, i, j) - self.get(k, j, i)).abs());
                }
            }
        }
        m
    }
}

/// `out = Γ(a, b)` for a flat Christoffel array.
#[inline]
pub fn gamma_apply(gamma: &[f64], n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for k in 0..n {
        let mut acc = 0.0;
        let gk = &gamma[k * n * n..(k + 1) * n * n];
        for i in 0..n {
            if a[i] == 0.0 {
                continue;
            }
            let row = &gk[i * n..(i + 1) * n];
            let mut s = 0.0;
            for j in 0..n {
                s += row[j] * b[j];
            }
            acc += a[i] * s;
        }
        out[k] = acc;
    }
}

/// A manifold given on a single chart.
#[derive(Clone)]
pub struct ChartManifold {
    dim: usize,
    domain: BoxDomain,
    christoffel: ChristoffelField,
    metric: Option<Metric>,
}

impl std::fmt::Debug for ChartManifold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.christoffel {
            ChristoffelField::Zero => "zero",
            ChristoffelField::Entries(_) => "entries",
            ChristoffelField::FromMetric => "from-metric",
            ChristoffelField::Custom(_) => "custom",
        };
        f.debug_struct("ChartManifold")
            .field("dim", &self.dim)
            .field("domain", &self.domain)
            .field("christoffel", &kind)
            .field("metric", &self.metric)
            .finish()
    }
}

impl ChartManifold {
    /// Flat space with `Γ ≡ 0` and the Euclidean metric.
    pub fn flat(domain: BoxDomain) -> Self {
        let n = domain.dim();
        let metric = (0..n * n)
            .map(|k| Expr::Num(if k / n == k % n { 1.0 } else { 0.0 }))
            .collect();
        ChartManifold {
            dim: n,
            domain,
            christoffel: ChristoffelField::Zero,
            metric: Some(Metric::Exprs(metric)),
        }
    }

    /// Levi-Civita connection of a metric; Christoffels by finite differences.
    pub fn from_metric(domain: BoxDomain, metric: Metric) -> Self {
        ChartManifold {
            dim: domain.dim(),
            domain,
            christoffel: ChristoffelField::FromMetric,
            metric: Some(metric),
        }
    }

    /// Christoffel entries `((k, i, j), expr)`, zero-based; unlisted entries are 0.
    pub fn from_christoffel_entries(
        domain: BoxDomain,
        entries: Vec<((usize, usize, usize), Expr)>,
        metric: Option<Metric>,
    ) -> Result<Self> {
        let n = domain.dim();
        let mut flat = Vec::with_capacity(entries.len());
        for ((k, i, j), e) in entries {
            if k >= n || i >= n || j >= n {
                return Err(Error::invalid(format!(
                    "christoffel index ({k},{i},{j}) out of range for dimension {n}"
                )));
            }
            if e.arity() > n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: e.arity(),
                });
            }
            flat.push((k * n * n + i * n + j, e));
        }
        let christoffel = if flat.is_empty() {
            ChristoffelField::Zero
        } else {
            ChristoffelField::Entries(flat)
        };
        Ok(ChartManifold {
            dim: n,
            domain,
            christoffel,
            metric,
        })
    }

    /// Arbitrary Christoffel function writing `n^3` entries.
    pub fn from_christoffel_fn<F>(domain: BoxDomain, f: F, metric: Option<Metric>) -> Self
    where
        F: Fn(&[f64], &mut [f64]) -> Result<()> + Send + Sync + 'static,
    {
        ChartManifold {
            dim: domain.dim(),
            domain,
            christoffel: ChristoffelField::Custom(Arc::new(f)),
            metric,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn metric(&self) -> Option<&Metric> {
        self.metric.as_ref()
    }

    pub fn with_domain(mut self, domain: BoxDomain) -> Result<Self> {
        if domain.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: domain.dim(),
            });
        }
        self.domain = domain;
        Ok(self)
    }

    /// True when `Γ ≡ 0` by construction.
    pub fn is_flat(&self) -> bool {
        matches!(self.christoffel, ChristoffelField::Zero)
    }

    pub fn metric_at(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        self.metric.as_ref().map(|m| m.eval(self.dim, x))
    }

    /// Writes `Γ(x)` into `out` (length `n^3`).
    pub fn christoffel_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.christoffel {
            ChristoffelField::Zero => {
                out.iter_mut().for_each(|v| *v = 0.0);
                Ok(())
            }
            ChristoffelField::Entries(entries) => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for (idx, e) in entries {
                    out[*idx] = e.eval(x);
                }
                Ok(())
            }
            ChristoffelField::FromMetric => {
                let metric = self.metric.as_ref().expect("metric-derived connection");
                let g = christoffel_from_metric(|y| metric.eval(self.dim, y), x)?;
                out.copy_from_slice(&g.data);
                Ok(())
            }
            ChristoffelField::Custom(f) => f(x, out),
        }
    }

    pub fn christoffel(&self, x: &[f64]) -> Result<Christoffel> {
        let n = self.dim;
        let mut data = vec![0.0; n * n * n];
        self.christoffel_into(x, &mut data)?;
        Ok(Christoffel { dim: n, data })
    }

    /// `∂_l Γ^k_{ij}` at `x` by central differences with step
    /// `METRIC_FD_STEP * max(1, |x_l|)`, stored at `l*n^3 + k*n^2 + i*n + j`.
    pub fn christoffel_derivative(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim;
        let n3 = n * n * n;
        let mut out = vec![0.0; n * n3];
        if self.is_flat() {
            return Ok(out);
        }
        let mut plus = vec![0.0; n3];
        let mut minus = vec![0.0; n3];
        let mut y = x.to_vec();
        for l in 0..n {
            let h = METRIC_FD_STEP * x[l].abs().max(1.0);
            y[l] = x[l] + h;
            self.christoffel_into(&y, &mut plus)?;
            y[l] = x[l] - h;
            self.christoffel_into(&y, &mut minus)?;
            y[l] = x[l];
            for m in 0..n3 {
                out[l * n3 + m] = (plus[m] - minus[m]) / (2.0 * h);
            }
        }
        Ok(out)
    }

    /// Checks symmetry and positive definiteness of the metric on the
    /// domain's sample points.
    pub fn validate_metric(&self) -> Result<()> {
        let Some(metric) = &self.metric else {
            return Ok(());
        };
        for p in self.domain.sample_points() {
            let g = metric.eval(self.dim, &p);
            check_metric_matrix(&g, &p)?;
        }
        Ok(())
    }
}

fn check_metric_matrix(g: &DMatrix<f64>, x: &[f64]) -> Result<()> {
    let n = g.nrows();
    for i in 0..n {
        for j in 0..i {
            let scale = g[(i, j)].abs().max(g[(j, i)].abs()).max(1e-300);
            if (g[(i, j)] - g[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::NonSymmetricMetric { i, j });
            }
        }
    }
    let singular = |condition: f64| Error::SingularMetric {
        point: x.to_vec(),
        condition,
    };
    let chol = g.clone().cholesky().ok_or_else(|| singular(f64::INFINITY))?;
    let d: Vec<f64> = (0..n).map(|i| chol.l()[(i, i)].powi(2)).collect();
    let max = d.iter().cloned().fold(0.0, f64::max);
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = max / min;
    if !(condition <= METRIC_CONDITION_LIMIT) {
        return Err(singular(condition));
    }
    Ok(())
}

/// Levi-Civita Christoffel symbols of `g` at `x`:
/// `Γ^k_{ij} = ½ g^{kl}(∂_i g_{jl} + ∂_j g_{il} − ∂_l g_{ij})`, with metric
/// derivatives by central differences of step `METRIC_FD_STEP * max(1, |x_l|)`.
///
/// ```
/// use gtf_core::geometry::christoffel_from_metric;
/// use nalgebra::DMatrix;
///
/// let half_plane = |x: &[f64]| DMatrix::identity(2, 2) / (x[1] * x[1]);
/// let g = christoffel_from_metric(half_plane, &[0.0, 1.0]).unwrap();
/// assert!((g.get(0, 0, 1) + 1.0).abs() < 1e-8);
/// assert!((g.get(1, 0, 0) - 1.0).abs() < 1e-8);
/// assert!((g.get(1, 1, 1) + 1.0).abs() < 1e-8);
/// ```
pub fn christoffel_from_metric<G>(g: G, x: &[f64]) -> Result<Christoffel>
where
    G: Fn(&[f64]) -> DMatrix<f64>,
{
    let n = x.len();
    let g0 = g(x);
    check_metric_matrix(&g0, x)?;
    let ginv = g0
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularMetric {
            point: x.to_vec(),
            condition: f64::INFINITY,
        })?;
    // dg[l][(i, j)] = ∂_l g_ij
    let mut dg = Vec::with_capacity(n);
    let mut y = x.to_vec();
    for l in 0..n {
        let h = METRIC_FD_STEP * x[l].abs().max(1.0);
        y[l] = x[l] + h;
        let gp = g(&y);
        y[l] = x[l] - h;
        let gm = g(&y);
        y[l] = x[l];
        dg.push((gp - gm) / (2.0 * h));
    }
    let mut data = vec![0.0; n * n * n];
    for k in 0..n {
        for i in 0..n {
            for j in i..n {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += ginv[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                }
                let v = 0.5 * acc;
                data[k * n * n + i * n + j] = v;
                data[k * n * n + j * n + i] = v;
            }
        }
    }
    Ok(Christoffel { dim: n, data })
}
