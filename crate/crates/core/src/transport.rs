//! Parallel transport along connecting geodesics, the transport operator
//! `a(x, y)`, its tensor extension, pullbacks and Lie derivatives.
//!
//! `a(x, y)` maps the fiber over `x` to the fiber over `y`; column `c` is
//! the transported basis vector `e_c`.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fd;
use crate::geodesics::{self, norm, ConvexPatch, JetReport, StepRule};
use crate::geometry::{ChartManifold, Diffeo, FlowMap, VectorFieldExpr};
use crate::tensor::TensorValue;

/// Step rule used by the jet checks; `|w|` is tiny there.
pub const JET_STEP_RULE: StepRule = StepRule::Fixed(16);

/// Default bound on cached transport matrices.
pub const CACHE_LIMIT: usize = 1 << 18;

/// Parallel transport of `zeta` from `x` to `y` along the geodesic joining them.
pub fn parallel_transport(
    m: &ChartManifold,
    x: &[f64],
    y: &[f64],
    zeta: &[f64],
    patch: &ConvexPatch,
) -> Result<Vec<f64>> {
    let a = transport_matrix(m, x, y, patch)?;
    Ok((0..m.dim())
        .map(|k| (0..m.dim()).map(|c| a[(k, c)] * zeta[c]).sum())
        .collect())
}

pub fn transport_matrix(m: &ChartManifold, x: &[f64], y: &[f64], patch: &ConvexPatch) -> Result<DMatrix<f64>> {
    transport_matrix_with(m, x, y, patch, StepRule::Contract)
}

pub fn transport_matrix_with(
    m: &ChartManifold,
    x: &[f64],
    y: &[f64],
    patch: &ConvexPatch,
    rule: StepRule,
) -> Result<DMatrix<f64>> {
    let n = m.dim();
    if m.is_flat() || x == y {
        patch.check(x)?;
        patch.check(y)?;
        return Ok(DMatrix::identity(n, n));
    }
    let w = geodesics::log_map_with(m, x, y, patch, rule)?;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        p[i * n + i] = 1.0;
    }
    geodesics::integrate(m, x, &w, 1.0, rule, Some(&mut p))?;
    Ok(DMatrix::from_row_slice(n, n, &p))
}

/// Parallel transport `a(x, y)` restricted to one convex patch, with a
/// bounded concurrent cache keyed by the exact coordinates of both points.
pub struct TransportOperator {
    manifold: ChartManifold,
    patch: ConvexPatch,
    rule: StepRule,
    cache: RwLock<HashMap<Vec<u64>, DMatrix<f64>>>,
    cache_limit: usize,
}

impl std::fmt::Debug for TransportOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransportOperator")
            .field("manifold", &self.manifold)
            .field("patch", &self.patch)
            .field("rule", &self.rule)
            .finish()
    }
}

impl TransportOperator {
    pub fn new(manifold: ChartManifold, patch: ConvexPatch) -> Result<Self> {
        if patch.center.len() != manifold.dim() {
            return Err(Error::DimensionMismatch {
                expected: manifold.dim(),
                found: patch.center.len(),
            });
        }
        Ok(TransportOperator {
            manifold,
            patch,
            rule: StepRule::Contract,
            cache: RwLock::new(HashMap::new()),
            cache_limit: CACHE_LIMIT,
        })
    }

    pub fn with_step_rule(mut self, rule: StepRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn with_cache_limit(mut self, limit: usize) -> Self {
        self.cache_limit = limit;
        self
    }

    pub fn manifold(&self) -> &ChartManifold {
        &self.manifold
    }

    pub fn patch(&self) -> &ConvexPatch {
        &self.patch
    }

    pub fn step_rule(&self) -> StepRule {
        self.rule
    }

    pub fn dim(&self) -> usize {
        self.manifold.dim()
    }

    pub fn cache_len(&self) -> usize {
        self.cache.read().map(|c| c.len()).unwrap_or(0)
    }

    /// `a(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if self.manifold.is_flat() {
            self.patch.check(x)?;
            self.patch.check(y)?;
            return Ok(DMatrix::identity(n, n));
        }
        let key: Vec<u64> = x.iter().chain(y).map(|v| v.to_bits()).collect();
        if let Some(a) = self.cache.read().ok().and_then(|c| c.get(&key).cloned()) {
            return Ok(a);
        }
        let a = transport_matrix_with(&self.manifold, x, y, &self.patch, self.rule)?;
        if let Ok(mut c) = self.cache.write() {
            if c.len() >= self.cache_limit {
                c.clear();
            }
            c.insert(key, a.clone());
        }
        Ok(a)
    }

    /// `a(x, y)·ζ`.
    pub fn apply(&self, x: &[f64], y: &[f64], zeta: &[f64]) -> Result<Vec<f64>> {
        let a = self.eval(x, y)?;
        Ok((0..self.dim())
            .map(|k| (0..self.dim()).map(|c| a[(k, c)] * zeta[c]).sum())
            .collect())
    }
}

/// `A^r_s(x, y)·t`: contravariant slots get `a(x, y)`, covariant slots
/// `(a(x, y)⁻¹)ᵀ`; scalars are unchanged.
///
/// ```
/// use gtf_core::geodesics::ConvexPatch;
/// use gtf_core::samples;
/// use gtf_core::tensor::{Rank, TensorValue};
/// use gtf_core::transport::{transport_tensor, TransportOperator};
///
/// let patch = ConvexPatch::new(vec![0.0, 1.0], 0.5).unwrap();
/// let a = TransportOperator::new(samples::half_plane(), patch).unwrap();
/// let t = TensorValue::new(Rank::new(1, 1), 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
/// let moved = transport_tensor(&a, &[0.0, 1.0], &[0.2, 1.1], &t).unwrap();
/// let trace = |v: &TensorValue| v.components()[0] + v.components()[3];
/// assert!((trace(&moved) - trace(&t)).abs() < 1e-8);
/// ```
pub fn transport_tensor(a: &TransportOperator, x: &[f64], y: &[f64], t: &TensorValue) -> Result<TensorValue> {
    if t.rank().order() == 0 {
        return Ok(t.clone());
    }
    if t.dim() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: t.dim(),
        });
    }
    t.transform(&a.eval(x, y)?)
}

/// `((μ, ν)*A)(p, q) = (T_q ν)⁻¹ · A(μ(p), ν(q)) · T_p μ`.
pub fn pullback_transport(
    mu: &dyn Diffeo,
    nu: &dyn Diffeo,
    a: &TransportOperator,
    p: &[f64],
    q: &[f64],
) -> Result<DMatrix<f64>> {
    let (mp, jmu) = mu.apply_with_jacobian(p)?;
    let (nq, jnu) = nu.apply_with_jacobian(q)?;
    let inv = jnu
        .try_inverse()
        .ok_or_else(|| Error::Singular("Jacobian of ν".into()))?;
    Ok(inv * a.eval(&mp, &nq)? * jmu)
}

/// `(L_{X×Y} A)(p, q)` by central differences in the flow time `tau` with
/// one Richardson step.
pub fn lie_transport(
    a: &TransportOperator,
    x: &Arc<VectorFieldExpr>,
    y: &Arc<VectorFieldExpr>,
    p: &[f64],
    q: &[f64],
    tau: f64,
) -> Result<DMatrix<f64>> {
    let n = a.dim();
    let domain = a.manifold().domain().clone();
    let d = fd::richardson(
        |t| {
            let mu = FlowMap::new(x.clone(), domain.clone(), t);
            let nu = FlowMap::new(y.clone(), domain.clone(), t);
            Ok(pullback_transport(&mu, &nu, a, p, q)?.as_slice().to_vec())
        },
        tau,
    )?;
    Ok(DMatrix::from_column_slice(n, n, &d))
}

/// Transports `zeta` around the closed polygon of geodesic legs through
/// `vertices` (the last vertex should coincide with the first in the
/// manifold). Each leg uses a patch centred at its midpoint.
pub fn holonomy(m: &ChartManifold, vertices: &[Vec<f64>], zeta: &[f64]) -> Result<Vec<f64>> {
    let mut z = zeta.to_vec();
    for leg in vertices.windows(2) {
        let (x, y) = (&leg[0], &leg[1]);
        let center: Vec<f64> = x.iter().zip(y).map(|(a, b)| 0.5 * (a + b)).collect();
        let half: Vec<f64> = x.iter().zip(y).map(|(a, b)| 0.5 * (a - b)).collect();
        let patch = ConvexPatch::new(center, norm(&half) * 1.01 + 1e-12)?;
        z = parallel_transport(m, x, y, &z, &patch)?;
    }
    Ok(z)
}

fn gamma_matrix(g: &crate::geometry::Christoffel, v: &[f64]) -> DMatrix<f64> {
    let n = g.dim();
    // M[k][c] = Γ^k_{ic} v^i
    DMatrix::from_fn(n, n, |k, c| (0..n).map(|i| g.get(k, i, c) * v[i]).sum())
}

/// Finite-difference check of `a(x,x) = id`, `a′(x,x)(ξ,η)ζ = −Γ(η−ξ, ζ)` and
/// `2a″(x,x)((ξ₁,η₁),(ξ₂,η₂))ζ = −(Γ′·(η₁+ξ₁))(η₂−ξ₂, ζ) − (Γ′·(η₂+ξ₂))(η₁−ξ₁, ζ)
/// + Γ(η₁−ξ₁, Γ(η₂−ξ₂, ζ)) + Γ(η₂−ξ₂, Γ(η₁−ξ₁, ζ))` over 20 random direction pairs.
/// Entries are named `i`, `ii`, `iii`.
pub fn jet_check_transport(m: &ChartManifold, x: &[f64], seed: u64) -> Result<JetReport> {
    jet_check_transport_with(m, x, seed, JET_STEP_RULE)
}

pub fn jet_check_transport_with(m: &ChartManifold, x: &[f64], seed: u64, rule: StepRule) -> Result<JetReport> {
    let n = m.dim();
    let radius = (0.5 * m.domain().distance_to_boundary(x)).min(0.5);
    let patch = ConvexPatch::new(x.to_vec(), radius)?;
    let a = |p: &[f64], q: &[f64]| transport_matrix_with(m, p, q, &patch, rule);
    let mut rep = JetReport { entries: vec![] };
    let id = DMatrix::<f64>::identity(n, n);
    rep.push("i", (a(x, x)? - &id).abs().max());
    let g = m.christoffel(x)?;
    let dg = m.christoffel_derivative(x)?;
    let n3 = n * n * n;
    // (Γ′·v)^k_ij = Σ_l v^l ∂_l Γ^k_ij
    let gprime = |v: &[f64]| {
        let mut data = vec![0.0; n3];
        for l in 0..n {
            for (idx, d) in data.iter_mut().enumerate() {
                *d += v[l] * dg[l * n3 + idx];
            }
        }
        crate::geometry::Christoffel::from_components(n, data).expect("size")
    };
    let shift = |p: &[f64], s: f64, d: &[f64]| -> Vec<f64> { p.iter().zip(d).map(|(a, b)| a + s * b).collect() };
    let sub = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p - q).collect() };
    let addv = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + q).collect() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir = || -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let h = 1e-3;
    for _ in 0..20 {
        let (xi, eta) = (dir(), dir());
        let plus = a(&shift(x, h, &xi), &shift(x, h, &eta))?;
        let minus = a(&shift(x, -h, &xi), &shift(x, -h, &eta))?;
        let fd_first = (plus - minus) / (2.0 * h);
        let want = -gamma_matrix(&g, &sub(&eta, &xi));
        rep.push("ii", (fd_first - want).abs().max());
    }
    for _ in 0..20 {
        let (xi1, eta1, xi2, eta2) = (dir(), dir(), dir(), dir());
        let mut mixed = DMatrix::<f64>::zeros(n, n);
        for (s1, s2, sign) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
            let p = shift(&shift(x, s1 * h, &xi1), s2 * h, &xi2);
            let q = shift(&shift(x, s1 * h, &eta1), s2 * h, &eta2);
            mixed += a(&p, &q)? * (sign / (4.0 * h * h));
        }
        let d1 = sub(&eta1, &xi1);
        let d2 = sub(&eta2, &xi2);
        let g1 = gprime(&addv(&eta1, &xi1));
        let g2 = gprime(&addv(&eta2, &xi2));
        let want = (-gamma_matrix(&g1, &d2) - gamma_matrix(&g2, &d1)
            + gamma_matrix(&g, &d1) * gamma_matrix(&g, &d2)
            + gamma_matrix(&g, &d2) * gamma_matrix(&g, &d1))
            * 0.5;
        rep.push("iii", (mixed - want).abs().max());
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DiffeoExpr;
    use crate::samples;
    use crate::tensor::Rank;
    use proptest::prelude::*;

    fn hp_operator() -> TransportOperator {
        TransportOperator::new(samples::half_plane(), ConvexPatch::new(vec![0.0, 1.5], 0.7).unwrap()).unwrap()
    }

    fn g_norm(p: &[f64], v: &[f64]) -> f64 {
        (v[0] * v[0] + v[1] * v[1]).sqrt() / p[1]
    }

    #[test]
    fn identity_cases() {
        let flat = samples::flat(2);
        let patch = ConvexPatch::new(vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(
            transport_matrix(&flat, &[0.1, 0.2], &[0.3, -0.4], &patch).unwrap(),
            DMatrix::identity(2, 2)
        );
        let a = hp_operator();
        assert_eq!(a.eval(&[0.0, 1.2], &[0.0, 1.2]).unwrap(), DMatrix::identity(2, 2));
    }

    /// Magnus oracle: along `σ(t) = (0, 2^t)` the transport system is
    /// `ρ̇ = ln 2 · ρ` with a constant generator, so `a = exp(ln 2 · id)`.
    #[test]
    fn vertical_transport_matches_matrix_exponential() {
        let a = hp_operator();
        let m = a.eval(&[0.0, 1.0], &[0.0, 2.0]).unwrap();
        let generator = DMatrix::from_row_slice(2, 2, &[2f64.ln(), 0.0, 0.0, 2f64.ln()]);
        let oracle = generator.exp();
        assert!((m - &oracle).abs().max() < 1e-7, "{oracle}");
        let moved = a.apply(&[0.0, 1.0], &[0.0, 2.0], &[1.0, 0.0]).unwrap();
        assert!((g_norm(&[0.0, 2.0], &moved) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn reversed_transport_inverts() {
        let a = hp_operator();
        let (x, y) = ([0.1, 1.2], [-0.3, 1.7]);
        let prod = a.eval(&x, &y).unwrap() * a.eval(&y, &x).unwrap();
        assert!((prod - DMatrix::identity(2, 2)).abs().max() < 1e-7);
        assert!(a.cache_len() >= 2);
    }

    #[test]
    fn metric_compatibility() {
        let a = hp_operator();
        let (x, y) = ([0.2, 1.1], [-0.1, 1.9]);
        let m = a.eval(&x, &y).unwrap();
        let (z, w) = ([0.3, -1.0], [1.2, 0.5]);
        let mz = &m * nalgebra::DVector::from_column_slice(&z);
        let mw = &m * nalgebra::DVector::from_column_slice(&w);
        let gx = (z[0] * w[0] + z[1] * w[1]) / (x[1] * x[1]);
        let gy = mz.dot(&mw) / (y[1] * y[1]);
        assert!((gx - gy).abs() < 1e-6);
    }

    #[test]
    fn tensor_extension() {
        let a = hp_operator();
        let (x, y) = ([0.0, 1.0], [0.3, 1.4]);
        let s = TensorValue::scalar(3.5);
        assert_eq!(transport_tensor(&a, &x, &y, &s).unwrap(), s);
        let u = TensorValue::vector(&[1.0, -2.0]);
        let w = TensorValue::covector(&[0.5, 0.25]);
        let lhs = transport_tensor(&a, &x, &y, &u.tensor(&w)).unwrap();
        let rhs = transport_tensor(&a, &x, &y, &u)
            .unwrap()
            .tensor(&transport_tensor(&a, &x, &y, &w).unwrap());
        for (p, q) in lhs.components().iter().zip(rhs.components()) {
            assert!((p - q).abs() < 1e-10);
        }
        // pairing of a vector with a covector is transport invariant
        let before = u.contract(&w).unwrap();
        let after = transport_tensor(&a, &x, &y, &u)
            .unwrap()
            .contract(&transport_tensor(&a, &x, &y, &w).unwrap())
            .unwrap();
        assert!((before - after).abs() < 1e-12);
        assert_eq!(lhs.rank(), Rank::new(1, 1));
    }

    #[test]
    fn flat_and_half_plane_jets() {
        let flat = jet_check_transport(&samples::flat(2), &[0.1, 0.2], 1).unwrap();
        assert!(flat.max() < 1e-7, "{flat:?}");
        let hp = jet_check_transport(&samples::half_plane(), &[0.0, 1.0], 2).unwrap();
        assert!(hp.max() < 1e-4, "{hp:?}");
    }

    #[test]
    fn isometry_pullback_preserves_transport() {
        let a = hp_operator();
        let mu = DiffeoExpr::translation(&[0.4, 0.0]);
        let (p, q) = ([-0.3, 1.3], [-0.2, 1.6]);
        let pulled = pullback_transport(&mu, &mu, &a, &p, &q).unwrap();
        assert!((pulled - a.eval(&p, &q).unwrap()).abs().max() < 1e-6);
        let id = DiffeoExpr::identity(2);
        assert_eq!(pullback_transport(&id, &id, &a, &p, &q).unwrap(), a.eval(&p, &q).unwrap());
    }

    #[test]
    fn lie_transport_of_zero_and_killing_fields() {
        let a = hp_operator();
        let zero = Arc::new(VectorFieldExpr::constant(&[0.0, 0.0]));
        let l = lie_transport(&a, &zero, &zero, &[0.0, 1.4], &[0.1, 1.5], 1e-3).unwrap();
        assert!(l.abs().max() < 1e-12);
        let dx = Arc::new(VectorFieldExpr::coordinate(2, 0));
        let l = lie_transport(&a, &dx, &dx, &[0.0, 1.4], &[0.1, 1.5], 1e-3).unwrap();
        assert!(l.abs().max() < 1e-6, "{l}");
    }

    #[test]
    fn sphere_octant_holonomy() {
        use std::f64::consts::PI;
        let m = samples::sphere_chart();
        let th = (1.0 / 3f64.sqrt()).acos();
        let v: Vec<Vec<f64>> = [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0, 2.0 * PI]
            .iter()
            .map(|p| vec![th, *p])
            .collect();
        let z = holonomy(&m, &v, &[1.0, 0.0]).unwrap();
        let (a, b) = (z[0], z[1] * th.sin());
        let angle = b.atan2(a).abs();
        assert!((angle - PI / 2.0).abs() < 1e-3, "angle {angle}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn transport_is_linear(a1 in -2.0f64..2.0, b1 in -2.0f64..2.0, dx in -0.3f64..0.3, dy in -0.3f64..0.3) {
            let op = hp_operator();
            let (x, y) = ([0.0, 1.4], [dx, 1.4 + dy]);
            let (z, w) = ([1.0, 0.5], [-0.2, 0.7]);
            let comb: Vec<f64> = (0..2).map(|i| a1 * z[i] + b1 * w[i]).collect();
            let lhs = op.apply(&x, &y, &comb).unwrap();
            let pz = op.apply(&x, &y, &z).unwrap();
            let pw = op.apply(&x, &y, &w).unwrap();
            for i in 0..2 {
                prop_assert!((lhs[i] - a1 * pz[i] - b1 * pw[i]).abs() < 1e-12);
            }
        }
    }
}
