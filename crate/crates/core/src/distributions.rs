//! Chart-local tensor distributions and their pairings with test objects
//! `u ⊗ ω`, where `u` is a dual tensor field and `ω` a density.
//!
//! Distribution files hold one definition per line:
//!
//! ```text
//! # name = kind arguments
//! f   = regular 0,1 [x*y, 1]
//! d   = delta 0,0 (0.1, 0.2) [2]
//! pv  = axispv 1 (0, 1) 0.25 0,1 [0, 1]
//! mix = sum 1 f -0.5 d
//! ```
//!
//! `axispv` takes a one-based axis, the point, the cutoff `η` and an optional
//! rank and coefficient (scalar 1 by default). `sum` refers to earlier names.
//! The last definition in a file is its main distribution.

use std::sync::Arc;

use crate::density::{Density, Pushforward};
use crate::error::{Error, Result};
use crate::fd::richardson_scalar;
use crate::geometry::{parse_expr_at, BoxDomain, Diffeo, Expr, FlowMap, VectorFieldExpr};
use crate::quadrature::{try_composite, QuadRule};
use crate::tensor::{Rank, TensorValue};
use crate::transport::{transport_tensor, TransportOperator};

/// Default τ for flow derivatives.
pub const LIE_TAU: f64 = 1e-3;

/// Smooth tensor field on a chart.
pub trait TensorField: Send + Sync {
    fn rank(&self) -> Rank;
    fn dim(&self) -> usize;
    fn value(&self, q: &[f64]) -> Result<TensorValue>;
}

/// Components given by expressions, in row-major slot order.
#[derive(Debug, Clone)]
pub struct ExprField {
    rank: Rank,
    dim: usize,
    comps: Vec<Expr>,
}

impl ExprField {
    pub fn new(rank: Rank, dim: usize, comps: Vec<Expr>) -> Result<Self> {
        if comps.len() != rank.components(dim) {
            return Err(Error::invalid(format!(
                "rank {rank} in dimension {dim} needs {} components, got {}",
                rank.components(dim),
                comps.len()
            )));
        }
        if let Some(e) = comps.iter().find(|e| e.arity() > dim) {
            return Err(Error::invalid(format!("expression '{e}' uses more than {dim} coordinates")));
        }
        Ok(ExprField { rank, dim, comps })
    }

    pub fn parse(rank: Rank, dim: usize, comps: &[&str]) -> Result<Self> {
        let exprs = comps.iter().map(|s| Expr::parse(s)).collect::<Result<_>>()?;
        Self::new(rank, dim, exprs)
    }

    pub fn scalar(dim: usize, f: &str) -> Result<Self> {
        Self::parse(Rank::new(0, 0), dim, &[f])
    }

    pub fn components(&self) -> &[Expr] {
        &self.comps
    }
}

impl TensorField for ExprField {
    fn rank(&self) -> Rank {
        self.rank
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, q: &[f64]) -> Result<TensorValue> {
        TensorValue::new(self.rank, self.dim, self.comps.iter().map(|e| e.eval(q)).collect())
    }
}

/// The same value everywhere.
#[derive(Debug, Clone)]
pub struct ConstantField(pub TensorValue);

impl TensorField for ConstantField {
    fn rank(&self) -> Rank {
        self.0.rank()
    }

    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn value(&self, _q: &[f64]) -> Result<TensorValue> {
        Ok(self.0.clone())
    }
}

/// `q ↦ A(p, q) v`.
#[derive(Debug, Clone)]
pub struct TransportedField {
    pub transport: Arc<TransportOperator>,
    pub base: Vec<f64>,
    pub value: TensorValue,
}

impl TensorField for TransportedField {
    fn rank(&self) -> Rank {
        self.value.rank()
    }

    fn dim(&self) -> usize {
        self.transport.dim()
    }

    fn value(&self, q: &[f64]) -> Result<TensorValue> {
        transport_tensor(&self.transport, &self.base, q, &self.value)
    }
}

/// `μ_* u`: `(μ_* u)(q) = (Tμ)^r_s u(μ⁻¹ q)`.
#[derive(Clone)]
pub struct PushforwardField {
    pub inner: Arc<dyn TensorField>,
    pub map: Arc<dyn Diffeo>,
}

impl TensorField for PushforwardField {
    fn rank(&self) -> Rank {
        self.inner.rank()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, q: &[f64]) -> Result<TensorValue> {
        let (x, j) = self.map.inverse_with_jacobian(q)?;
        self.inner.value(&x)?.transform(&j)
    }
}

/// `u ⊗ ω`.
#[derive(Clone)]
pub struct TestObject {
    pub field: Arc<dyn TensorField>,
    pub density: Arc<dyn Density>,
}

impl TestObject {
    pub fn new(field: Arc<dyn TensorField>, density: Arc<dyn Density>) -> Result<Self> {
        if field.dim() != density.dim() {
            return Err(Error::DimensionMismatch {
                expected: field.dim(),
                found: density.dim(),
            });
        }
        Ok(TestObject { field, density })
    }

    /// `μ_*(u ⊗ ω)`.
    pub fn pushforward(&self, map: Arc<dyn Diffeo>) -> TestObject {
        TestObject {
            field: Arc::new(PushforwardField {
                inner: self.field.clone(),
                map: map.clone(),
            }),
            density: Arc::new(Pushforward {
                base: self.density.clone(),
                map,
            }),
        }
    }
}

#[derive(Clone)]
pub enum TensorDistribution {
    Regular(Arc<dyn TensorField>),
    DeltaAt {
        point: Vec<f64>,
        coeff: TensorValue,
    },
    /// `sign t · |t|^{n−2}` along `axis` (zero-based) through `center`,
    /// deltas in the remaining coordinates, cut off at `|t| < eta`.
    AxisPV {
        axis: usize,
        center: Vec<f64>,
        eta: f64,
        coeff: TensorValue,
    },
    Sum(Vec<(f64, Arc<TensorDistribution>)>),
    /// `μ* T`, paired as `⟨T, μ_* ξ⟩`.
    Pullback {
        map: Arc<dyn Diffeo>,
        inner: Arc<TensorDistribution>,
    },
    /// `L_X T = d/dτ (Fl_τ)* T` at `τ = 0`.
    Lie {
        field: Arc<VectorFieldExpr>,
        domain: BoxDomain,
        inner: Arc<TensorDistribution>,
        tau: f64,
    },
}

impl std::fmt::Debug for TensorDistribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TensorDistribution::Regular(t) => write!(f, "Regular(rank {})", t.rank()),
            TensorDistribution::DeltaAt { point, coeff } => {
                write!(f, "DeltaAt({point:?}, {:?})", coeff.components())
            }
            TensorDistribution::AxisPV { axis, center, eta, .. } => {
                write!(f, "AxisPV(axis {axis}, {center:?}, eta {eta})")
            }
            TensorDistribution::Sum(terms) => f.debug_list().entries(terms.iter()).finish(),
            TensorDistribution::Pullback { inner, .. } => write!(f, "Pullback({inner:?})"),
            TensorDistribution::Lie { inner, .. } => write!(f, "Lie({inner:?})"),
        }
    }
}

impl TensorDistribution {
    pub fn regular(field: impl TensorField + 'static) -> Self {
        TensorDistribution::Regular(Arc::new(field))
    }

    pub fn zero(rank: Rank, dim: usize) -> Self {
        Self::regular(ConstantField(TensorValue::zeros(rank, dim)))
    }

    pub fn delta(point: Vec<f64>, coeff: TensorValue) -> Result<Self> {
        if point.len() != coeff.dim() && coeff.rank().order() > 0 {
            return Err(Error::DimensionMismatch {
                expected: point.len(),
                found: coeff.dim(),
            });
        }
        Ok(TensorDistribution::DeltaAt { point, coeff })
    }

    pub fn axis_pv(axis: usize, center: Vec<f64>, eta: f64, coeff: TensorValue) -> Result<Self> {
        if axis >= center.len() {
            return Err(Error::invalid(format!("axis {} outside dimension {}", axis + 1, center.len())));
        }
        if !(eta > 0.0) {
            return Err(Error::invalid("cutoff radius must be positive"));
        }
        Ok(TensorDistribution::AxisPV {
            axis,
            center,
            eta,
            coeff,
        })
    }

    /// Weighted sum; all terms must share one rank.
    pub fn sum(terms: Vec<(f64, Arc<TensorDistribution>)>) -> Result<Self> {
        if let Some((_, first)) = terms.first() {
            for (_, t) in &terms[1..] {
                first.rank().expect(t.rank())?;
            }
        } else {
            return Err(Error::invalid("sum needs at least one term"));
        }
        Ok(TensorDistribution::Sum(terms))
    }

    pub fn pullback(self: &Arc<Self>, map: Arc<dyn Diffeo>) -> Self {
        TensorDistribution::Pullback {
            map,
            inner: self.clone(),
        }
    }

    pub fn lie(self: &Arc<Self>, field: Arc<VectorFieldExpr>, domain: BoxDomain) -> Self {
        TensorDistribution::Lie {
            field,
            domain,
            inner: self.clone(),
            tau: LIE_TAU,
        }
    }

    pub fn rank(&self) -> Rank {
        match self {
            TensorDistribution::Regular(t) => t.rank(),
            TensorDistribution::DeltaAt { coeff, .. } | TensorDistribution::AxisPV { coeff, .. } => coeff.rank(),
            TensorDistribution::Sum(terms) => terms[0].1.rank(),
            TensorDistribution::Pullback { inner, .. } | TensorDistribution::Lie { inner, .. } => inner.rank(),
        }
    }

    /// `⟨T, u ⊗ ω⟩`.
    pub fn pair(&self, xi: &TestObject, rule: &QuadRule) -> Result<f64> {
        self.rank().dual().expect(xi.field.rank())?;
        match self {
            TensorDistribution::Regular(t) => {
                let mut acc = 0.0;
                for nd in xi.density.nodes(rule)? {
                    if nd.weight != 0.0 {
                        acc += nd.weight * t.value(&nd.point)?.contract(&xi.field.value(&nd.point)?)?;
                    }
                }
                Ok(acc)
            }
            TensorDistribution::DeltaAt { point, coeff } => {
                let w = xi.density.value(point)?;
                if w == 0.0 {
                    return Ok(0.0);
                }
                Ok(coeff.contract(&xi.field.value(point)?)? * w)
            }
            TensorDistribution::AxisPV {
                axis,
                center,
                eta,
                coeff,
            } => {
                let n = center.len();
                let mut dir = vec![0.0; n];
                dir[*axis] = 1.0;
                let g = |t: f64| -> Result<f64> {
                    let q: Vec<f64> = center.iter().zip(&dir).map(|(c, d)| c + t * d).collect();
                    let w = xi.density.value(&q)?;
                    if w == 0.0 {
                        return Ok(0.0);
                    }
                    Ok(coeff.contract(&xi.field.value(&q)?)? * w)
                };
                let raw = xi.density.line_breaks(center, &dir, -eta, *eta)?;
                let mut breaks = vec![0.0, *eta];
                breaks.extend(raw.iter().map(|t| t.abs()).filter(|t| *t > 0.0 && *t < *eta));
                breaks.sort_by(f64::total_cmp);
                breaks.dedup();
                pv_pair(n, &breaks, rule.slice, g)
            }
            TensorDistribution::Sum(terms) => terms
                .iter()
                .map(|(w, t)| Ok(w * t.pair(xi, rule)?))
                .sum(),
            TensorDistribution::Pullback { map, inner } => inner.pair(&xi.pushforward(map.clone()), rule),
            TensorDistribution::Lie {
                field,
                domain,
                inner,
                tau,
            } => richardson_scalar(
                |s| {
                    let map: Arc<dyn Diffeo> = Arc::new(FlowMap::new(field.clone(), domain.clone(), s));
                    inner.pair(&xi.pushforward(map), rule)
                },
                *tau,
            ),
        }
    }
}

/// `∫₀^η t^{n−2} (g(t) − g(−t)) dt` by Gauss–Legendre on the pieces of
/// `breaks` (which run from `0` to `η`).
pub fn pv_pair<G>(n: usize, breaks: &[f64], nodes: usize, g: G) -> Result<f64>
where
    G: Fn(f64) -> Result<f64>,
{
    let p = n as i32 - 2;
    try_composite(breaks, nodes, |t| Ok(t.powi(p) * (g(t)? - g(-t)?)))
}

/// Named definitions from a distribution file, in file order.
#[derive(Debug, Clone, Default)]
pub struct DistributionFile {
    pub entries: Vec<(String, Arc<TensorDistribution>)>,
}

impl DistributionFile {
    /// The last definition with this name.
    pub fn get(&self, name: &str) -> Option<&Arc<TensorDistribution>> {
        self.entries.iter().rev().find(|(n, _)| n == name).map(|(_, d)| d)
    }

    /// The last definition in the file.
    pub fn main(&self) -> Option<&Arc<TensorDistribution>> {
        self.entries.last().map(|(_, d)| d)
    }
}

/// Word or bracket group with its one-based column.
fn tokens(line: &str, ln: usize, col0: usize) -> Result<Vec<(usize, String)>> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c == '(' || c == '[' {
            let close = if c == '(' { ')' } else { ']' };
            let mut depth = 0;
            loop {
                if i >= chars.len() {
                    return Err(Error::syntax(ln, col0 + start, format!("unclosed '{c}'")));
                }
                if chars[i] == c {
                    depth += 1;
                } else if chars[i] == close {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
                i += 1;
            }
            i += 1;
        } else {
            while i < chars.len() && !chars[i].is_whitespace() && chars[i] != '(' && chars[i] != '[' {
                i += 1;
            }
        }
        out.push((col0 + start, chars[start..i].iter().collect()));
    }
    Ok(out)
}

/// Comma-separated expressions inside a bracket group.
fn group(tok: &(usize, String), open: char, ln: usize) -> Result<Vec<Expr>> {
    let (col, s) = tok;
    if !s.starts_with(open) {
        return Err(Error::syntax(ln, *col, format!("expected '{open}', found '{s}'")));
    }
    let inner = &s[1..s.len() - 1];
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut depth = 0;
    let mut start = 0;
    for (i, c) in inner.char_indices().chain(std::iter::once((inner.len(), ','))) {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            ',' if depth == 0 => {
                let piece = &inner[start..i];
                let lead = piece.len() - piece.trim_start().len();
                out.push(parse_expr_at(piece.trim(), ln, col + 1 + start + lead)?);
                start = i + 1;
            }
            _ => {}
        }
    }
    Ok(out)
}

fn constants(tok: &(usize, String), open: char, ln: usize) -> Result<Vec<f64>> {
    group(tok, open, ln)?
        .into_iter()
        .map(|e| {
            if e.is_constant() {
                Ok(e.eval(&[]))
            } else {
                Err(Error::syntax(ln, tok.0, format!("expected constants, found '{e}'")))
            }
        })
        .collect()
}

fn parse_rank(tok: &(usize, String), ln: usize) -> Result<Rank> {
    let bad = || Error::syntax(ln, tok.0, format!("expected a rank 'r,s', found '{}'", tok.1));
    let (r, s) = tok.1.split_once(',').ok_or_else(bad)?;
    Ok(Rank::new(r.trim().parse().map_err(|_| bad())?, s.trim().parse().map_err(|_| bad())?))
}

fn parse_number(tok: &(usize, String), ln: usize) -> Result<f64> {
    let e = parse_expr_at(&tok.1, ln, tok.0)?;
    if !e.is_constant() {
        return Err(Error::syntax(ln, tok.0, "expected a constant"));
    }
    Ok(e.eval(&[]))
}

/// Parses a distribution file for a chart of dimension `dim`.
pub fn parse_distributions(text: &str, dim: usize) -> Result<DistributionFile> {
    let mut file = DistributionFile::default();
    for (li, raw) in text.lines().enumerate() {
        let ln = li + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let (name, rhs) = content
            .split_once('=')
            .ok_or_else(|| Error::syntax(ln, 1, "expected 'name = definition'"))?;
        let name = name.trim();
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::syntax(ln, 1, format!("bad name '{name}'")));
        }
        let col0 = content.find('=').unwrap() + 2;
        let toks = tokens(rhs, ln, col0)?;
        let missing = |what: &str| Error::syntax(ln, col0 + rhs.len(), format!("missing {what}"));
        let at = |i: usize, what: &str| toks.get(i).ok_or_else(|| missing(what));
        let kind = at(0, "kind")?;
        let (dist, used) = match kind.1.as_str() {
            "regular" => {
                let rank = parse_rank(at(1, "rank")?, ln)?;
                let comps = group(at(2, "components")?, '[', ln)?;
                let f = ExprField::new(rank, dim, comps).map_err(|e| Error::syntax(ln, toks[2].0, e.to_string()))?;
                (TensorDistribution::regular(f), 3)
            }
            "delta" => {
                let rank = parse_rank(at(1, "rank")?, ln)?;
                let p = constants(at(2, "point")?, '(', ln)?;
                let c = constants(at(3, "coefficients")?, '[', ln)?;
                check_point(&p, dim, ln, toks[2].0)?;
                let coeff = TensorValue::new(rank, dim, c).map_err(|e| Error::syntax(ln, toks[3].0, e.to_string()))?;
                (TensorDistribution::delta(p, coeff)?, 4)
            }
            "axispv" => {
                let k = parse_number(at(1, "axis")?, ln)?;
                if k.fract() != 0.0 || k < 1.0 || k as usize > dim {
                    return Err(Error::syntax(ln, toks[1].0, format!("axis must be in 1..={dim}")));
                }
                let p = constants(at(2, "point")?, '(', ln)?;
                check_point(&p, dim, ln, toks[2].0)?;
                let eta = parse_number(at(3, "cutoff")?, ln)?;
                let (coeff, used) = if toks.len() > 4 {
                    let rank = parse_rank(&toks[4], ln)?;
                    let c = constants(at(5, "coefficients")?, '[', ln)?;
                    (
                        TensorValue::new(rank, dim, c).map_err(|e| Error::syntax(ln, toks[5].0, e.to_string()))?,
                        6,
                    )
                } else {
                    (TensorValue::scalar(1.0), 4)
                };
                let d = TensorDistribution::axis_pv(k as usize - 1, p, eta, coeff)
                    .map_err(|e| Error::syntax(ln, toks[3].0, e.to_string()))?;
                (d, used)
            }
            "sum" => {
                let rest = &toks[1..];
                if rest.is_empty() || rest.len() % 2 != 0 {
                    return Err(Error::syntax(ln, kind.0, "sum needs weight/name pairs"));
                }
                let terms = rest
                    .chunks(2)
                    .map(|pair| {
                        let w = parse_number(&pair[0], ln)?;
                        let d = file
                            .get(&pair[1].1)
                            .ok_or_else(|| Error::syntax(ln, pair[1].0, format!("unknown name '{}'", pair[1].1)))?;
                        Ok((w, d.clone()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let d = TensorDistribution::sum(terms).map_err(|e| Error::syntax(ln, kind.0, e.to_string()))?;
                (d, toks.len())
            }
            other => return Err(Error::syntax(ln, kind.0, format!("unknown kind '{other}'"))),
        };
        if let Some(extra) = toks.get(used) {
            return Err(Error::syntax(ln, extra.0, format!("unexpected '{}'", extra.1)));
        }
        file.entries.push((name.to_string(), Arc::new(dist)));
    }
    Ok(file)
}

fn check_point(p: &[f64], dim: usize, ln: usize, col: usize) -> Result<()> {
    if p.len() != dim {
        return Err(Error::syntax(ln, col, format!("point needs {dim} coordinates, got {}", p.len())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::WindowDensity;
    use crate::geometry::DiffeoExpr;
    use crate::quadrature::integrate_adaptive;
    use proptest::prelude::*;

    fn window(c: &[f64], h: &[f64]) -> Arc<dyn Density> {
        Arc::new(WindowDensity::new(c.to_vec(), h.to_vec(), 1.0).unwrap())
    }

    fn scalar_test(dim: usize, f: &str, w: Arc<dyn Density>) -> TestObject {
        TestObject::new(Arc::new(ExprField::scalar(dim, f).unwrap()), w).unwrap()
    }

    fn bump1(t: f64) -> f64 {
        if t.abs() < 0.2 {
            (1.0 - (t / 0.2).powi(2)).powi(4)
        } else {
            0.0
        }
    }

    #[test]
    fn delta_evaluates_at_its_point() {
        let rule = QuadRule::default();
        let d = TensorDistribution::delta(vec![0.1, 0.2], TensorValue::covector(&[2.0, -1.0])).unwrap();
        let u = ExprField::parse(Rank::new(1, 0), 2, &["x+1", "y^2"]).unwrap();
        let w = window(&[0.0, 0.0], &[0.5, 0.5]);
        let xi = TestObject::new(Arc::new(u), w.clone()).unwrap();
        let want = (2.0 * 1.1 - 0.04) * w.value(&[0.1, 0.2]).unwrap();
        assert!((d.pair(&xi, &rule).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn regular_pairings() {
        let rule = QuadRule::default();
        let one = TensorDistribution::regular(ExprField::scalar(2, "1").unwrap());
        let w: Arc<dyn Density> = Arc::new(WindowDensity::with_mass(vec![0.0, 0.0], vec![0.3, 0.4], 0.7).unwrap());
        assert!((one.pair(&scalar_test(2, "1", w), &rule).unwrap() - 0.7).abs() < 1e-13);
        let t = TensorDistribution::regular(ExprField::scalar(1, "x").unwrap());
        let got = t.pair(&scalar_test(1, "1", window(&[0.3], &[0.5])), &rule).unwrap();
        let oracle = integrate_adaptive(|x| x * (1.0 - ((x - 0.3) / 0.5).powi(2)).powi(4), -0.2, 0.8, 1e-14, 200).unwrap();
        assert!((got - oracle).abs() < 1e-8);
        let rank = TensorDistribution::regular(ExprField::parse(Rank::new(0, 1), 1, &["1"]).unwrap());
        assert!(matches!(rank.pair(&scalar_test(1, "1", window(&[0.0], &[0.1])), &rule), Err(Error::RankMismatch { .. })));
    }

    #[test]
    fn regular_pairing_is_grid_converged() {
        let t = TensorDistribution::regular(ExprField::scalar(2, "sin(3*x)*exp(y)").unwrap());
        let xi = scalar_test(2, "x*y + 1", window(&[0.1, 0.2], &[0.4, 0.3]));
        let a = t.pair(&xi, &QuadRule::default()).unwrap();
        let b = t.pair(&xi, &QuadRule::default().doubled()).unwrap();
        assert!((a - b).abs() < 1e-9 * a.abs());
    }

    #[test]
    fn principal_values() {
        // even test function: zero
        let breaks = [0.0, 0.2, 0.3];
        let v = pv_pair(1, &breaks, 16, |t| Ok(bump1(t))).unwrap();
        assert_eq!(v, 0.0);
        // n = 1, ω(t) = t·bump(t): 2∫₀ bump
        let v = pv_pair(1, &breaks, 16, |t| Ok(t * bump1(t))).unwrap();
        let oracle = 2.0 * integrate_adaptive(bump1, 0.0, 0.2, 1e-14, 200).unwrap();
        assert!((v - oracle).abs() < 1e-12);
        // n = 2, windowed t
        let v = pv_pair(2, &breaks, 16, |t| Ok(t * bump1(t))).unwrap();
        let oracle = 2.0 * integrate_adaptive(|t| t * bump1(t), 0.0, 0.2, 1e-14, 200).unwrap();
        assert!((v - oracle).abs() < 1e-9);
    }

    #[test]
    fn axis_pv_sign_and_slices() {
        let rule = QuadRule::default();
        let p = TensorDistribution::axis_pv(0, vec![0.0, 1.0], 0.25, TensorValue::scalar(1.0)).unwrap();
        let w = window(&[0.0, 1.0], &[0.2, 0.2]);
        assert!(p.pair(&scalar_test(2, "x", w.clone()), &rule).unwrap() > 0.0);
        assert!(p.pair(&scalar_test(2, "x^2 + 1", w.clone()), &rule).unwrap().abs() < 1e-15);
        // slice at y = 1 of x·(1−(x/0.2)²)⁴, times the y-window value 1
        let got = p.pair(&scalar_test(2, "x", w), &rule).unwrap();
        let oracle = 2.0 * integrate_adaptive(|t| t * bump1(t), 0.0, 0.2, 1e-14, 200).unwrap();
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn pullback_by_translation_moves_deltas() {
        let rule = QuadRule::default();
        let d = Arc::new(TensorDistribution::delta(vec![0.3], TensorValue::scalar(1.0)).unwrap());
        let mu: Arc<dyn Diffeo> = Arc::new(DiffeoExpr::translation(&[0.1]));
        let pulled = d.pullback(mu);
        let xi = scalar_test(1, "exp(x)", window(&[0.2], &[0.5]));
        let moved = TensorDistribution::delta(vec![0.2], TensorValue::scalar(1.0)).unwrap();
        assert!((pulled.pair(&xi, &rule).unwrap() - moved.pair(&xi, &rule).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn lie_of_regular_scalar_is_directional_derivative() {
        let rule = QuadRule::default();
        let f = Arc::new(TensorDistribution::regular(ExprField::scalar(2, "sin(x)*y").unwrap()));
        let x = Arc::new(VectorFieldExpr::constant(&[0.5, -1.0]));
        let dom = BoxDomain::new(vec![-5.0; 2], vec![5.0; 2]).unwrap();
        let lie = f.lie(x, dom);
        let df = TensorDistribution::regular(ExprField::scalar(2, "0.5*cos(x)*y - sin(x)").unwrap());
        let xi = scalar_test(2, "1 + x", window(&[0.1, 0.3], &[0.4, 0.4]));
        let a = lie.pair(&xi, &rule).unwrap();
        let b = df.pair(&xi, &rule).unwrap();
        assert!((a - b).abs() < 2e-5, "{a} vs {b}");
    }

    #[test]
    fn parses_files() {
        let text = "# comment\nf = regular 0,1 [x*y, 1]\nd = delta 0,0 (0.1, pi/4) [2]\n\
                    pv = axispv 1 (0, 1) 0.25 0,1 [0, 1]\nmix = sum 1 d -0.5 d\n";
        let file = parse_distributions(text, 2).unwrap();
        assert_eq!(file.entries.len(), 4);
        assert!(matches!(**file.main().unwrap(), TensorDistribution::Sum(_)));
        match &**file.get("d").unwrap() {
            TensorDistribution::DeltaAt { point, .. } => assert!((point[1] - std::f64::consts::FRAC_PI_4).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
        assert_eq!(file.get("pv").unwrap().rank(), Rank::new(0, 1));
        let pv = parse_distributions("p = axispv 2 (0) 0.5", 1);
        assert!(matches!(pv, Err(Error::Syntax { line: 1, .. })));
        let bad = parse_distributions("a = regular 0,0 [x]\nb = sum 1 c", 1).unwrap_err();
        assert!(matches!(bad, Error::Syntax { line: 2, column: 11, .. }), "{bad:?}");
        assert!(parse_distributions("a = delta 0,0 (0 [1]", 1).is_err());
        assert!(parse_distributions("a = regular 0,1 [1]", 2).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn pairing_is_linear_in_the_test_object(a in -2.0f64..2.0, b in -2.0f64..2.0, cx in -0.3f64..0.3) {
            let rule = QuadRule::default();
            let w = window(&[cx, 0.0], &[0.3, 0.3]);
            let x1 = scalar_test(2, "x + y^2", w.clone());
            let x2 = scalar_test(2, "cos(x)", w.clone());
            let comb = scalar_test(2, &format!("({a})*(x + y^2) + ({b})*cos(x)"), w);
            let dists = [
                TensorDistribution::regular(ExprField::scalar(2, "exp(x)*y").unwrap()),
                TensorDistribution::delta(vec![0.05, -0.1], TensorValue::scalar(1.5)).unwrap(),
                TensorDistribution::axis_pv(1, vec![cx, 0.0], 0.4, TensorValue::scalar(1.0)).unwrap(),
            ];
            for d in &dists {
                let lhs = d.pair(&comb, &rule).unwrap();
                let rhs = a * d.pair(&x1, &rule).unwrap() + b * d.pair(&x2, &rule).unwrap();
                prop_assert!((lhs - rhs).abs() < 1e-9);
            }
        }
    }
}
