//! Generalized fields: maps from densities `ω` and points `p` to tensor
//! values, evaluated on the kernels `Φ(ε, p)`.
//!
//! The embedding of a distribution `T` is
//! `(ιT)(ω)(p)·v = ⟨T, A(p, ·) v ⊗ ω⟩` for a dual tensor `v` at `p`.

use std::sync::Arc;

use crate::density::{integrate, BoxDensity, Density, KernelDensity, Pushforward};
use crate::distributions::{TensorDistribution, TensorField, TestObject, TransportedField};
use crate::error::{Error, Result};
use crate::fd::richardson_scalar;
use crate::fit::Sweep;
use crate::geometry::{BoxDomain, Diffeo, FlowMap, VectorFieldExpr};
use crate::mollifiers::{RadialMollifier, SmoothingKernel};
use crate::quadrature::QuadRule;
use crate::tensor::{Rank, TensorValue};
use crate::transport::{transport_tensor, TransportOperator};

/// Errors at or below this are treated as exact.
pub const EMBED_NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Embedded,
    Sigma,
    Derived,
}

/// `R(ω)(p)` contracted with a dual tensor `v` at `p`.
pub trait Evaluator: Send + Sync {
    fn rank(&self) -> Rank;
    fn dim(&self) -> usize;
    fn eval_contracted(&self, omega: &Arc<dyn Density>, p: &[f64], v: &TensorValue, rule: &QuadRule) -> Result<f64>;
}

#[derive(Clone)]
pub struct GeneralizedField {
    pub rank: Rank,
    pub provenance: Provenance,
    pub evaluator: Arc<dyn Evaluator>,
}

impl std::fmt::Debug for GeneralizedField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeneralizedField")
            .field("rank", &self.rank)
            .field("provenance", &self.provenance)
            .finish()
    }
}

/// The dual-rank tensor whose contraction with a rank-`rank` tensor picks
/// out component `index`.
pub fn dual_basis(rank: Rank, dim: usize, index: usize) -> TensorValue {
    let bi = dim.pow(rank.contra as u32);
    let bj = dim.pow(rank.co as u32);
    let (i, j) = (index / bj, index % bj);
    TensorValue::basis(rank.dual(), dim, j * bi + i)
}

impl GeneralizedField {
    fn derived(evaluator: impl Evaluator + 'static) -> Self {
        GeneralizedField {
            rank: evaluator.rank(),
            provenance: Provenance::Derived,
            evaluator: Arc::new(evaluator),
        }
    }

    pub fn dim(&self) -> usize {
        self.evaluator.dim()
    }

    pub fn eval_contracted(&self, omega: &Arc<dyn Density>, p: &[f64], v: &TensorValue, rule: &QuadRule) -> Result<f64> {
        self.rank.dual().expect(v.rank())?;
        self.evaluator.eval_contracted(omega, p, v, rule)
    }

    /// `R(ω)(p)` component by component.
    pub fn eval(&self, omega: &Arc<dyn Density>, p: &[f64], rule: &QuadRule) -> Result<TensorValue> {
        let n = self.dim();
        let data = (0..self.rank.components(n))
            .map(|i| self.eval_contracted(omega, p, &dual_basis(self.rank, n, i), rule))
            .collect::<Result<Vec<f64>>>()?;
        TensorValue::new(self.rank, n, data)
    }

    /// `R(Φ(ε, p))(p)`.
    pub fn at(&self, kernel: &SmoothingKernel, eps: f64, p: &[f64], rule: &QuadRule) -> Result<TensorValue> {
        let omega: Arc<dyn Density> = Arc::new(kernel.density(eps, p)?);
        self.eval(&omega, p, rule)
    }

    pub fn at_contracted(&self, kernel: &SmoothingKernel, eps: f64, p: &[f64], v: &TensorValue, rule: &QuadRule) -> Result<f64> {
        let omega: Arc<dyn Density> = Arc::new(kernel.density(eps, p)?);
        self.eval_contracted(&omega, p, v, rule)
    }

    /// `μ*R`: `(μ*R)(ω)(p)·v = R(μ_*ω)(μp)·(Tμ v)`.
    pub fn pullback(&self, map: Arc<dyn Diffeo>) -> GeneralizedField {
        Self::derived(PullbackEval {
            map,
            inner: self.clone(),
        })
    }

    /// `L_X R = d/dτ (Fl_τ)* R` at `τ = 0`.
    pub fn lie(&self, field: Arc<VectorFieldExpr>, domain: BoxDomain, tau: f64) -> GeneralizedField {
        Self::derived(LieEval {
            field,
            domain,
            inner: self.clone(),
            tau,
        })
    }

    /// Scalar field `R·t`.
    pub fn contract_with(&self, t: Arc<dyn TensorField>) -> Result<GeneralizedField> {
        self.rank.dual().expect(t.rank())?;
        Ok(Self::derived(ContractEval { inner: self.clone(), t }))
    }

    /// `Σ wᵢ Rᵢ`; ranks must agree.
    pub fn combination(terms: Vec<(f64, GeneralizedField)>) -> Result<GeneralizedField> {
        let first = terms.first().ok_or_else(|| Error::invalid("empty combination"))?;
        for (_, r) in &terms[1..] {
            first.1.rank.expect(r.rank)?;
        }
        Ok(Self::derived(CombinationEval { terms }))
    }
}

/// `(ιT)(ω)(p)·v = ⟨T, A(p, ·) v ⊗ ω⟩`.
pub struct EmbeddedEval {
    pub distribution: Arc<TensorDistribution>,
    pub transport: Arc<TransportOperator>,
}

impl Evaluator for EmbeddedEval {
    fn rank(&self) -> Rank {
        self.distribution.rank()
    }

    fn dim(&self) -> usize {
        self.transport.dim()
    }

    fn eval_contracted(&self, omega: &Arc<dyn Density>, p: &[f64], v: &TensorValue, rule: &QuadRule) -> Result<f64> {
        let u = TransportedField {
            transport: self.transport.clone(),
            base: p.to_vec(),
            value: v.clone(),
        };
        self.distribution.pair(&TestObject::new(Arc::new(u), omega.clone())?, rule)
    }
}

/// `σ(t)(ω)(p) = t(p)`.
pub struct SigmaEval {
    pub field: Arc<dyn TensorField>,
}

impl Evaluator for SigmaEval {
    fn rank(&self) -> Rank {
        self.field.rank()
    }

    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn eval_contracted(&self, _omega: &Arc<dyn Density>, p: &[f64], v: &TensorValue, _rule: &QuadRule) -> Result<f64> {
        self.field.value(p)?.contract(v)
    }
}

pub struct PullbackEval {
    pub map: Arc<dyn Diffeo>,
    pub inner: GeneralizedField,
}

impl Evaluator for PullbackEval {
    fn rank(&self) -> Rank {
        self.inner.rank
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval_contracted(&self, omega: &Arc<dyn Density>, p: &[f64], v: &TensorValue, rule: &QuadRule) -> Result<f64> {
        let (mp, j) = self.map.apply_with_jacobian(p)?;
        let pushed: Arc<dyn Density> = Arc::new(Pushforward {
            base: omega.clone(),
            map: self.map.clone(),
        });
        self.inner.eval_contracted(&pushed, &mp, &v.transform(&j)?, rule)
    }
}

pub struct LieEval {
    pub field: Arc<VectorFieldExpr>,
    pub domain: BoxDomain,
    pub inner: GeneralizedField,
    pub tau: f64,
}

impl Evaluator for LieEval {
    fn rank(&self) -> Rank {
        self.inner.rank
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval_contracted(&self, omega: &Arc<dyn Density>, p: &[f64], v: &TensorValue, rule: &QuadRule) -> Result<f64> {
        richardson_scalar(
            |s| {
                let map: Arc<dyn Diffeo> = Arc::new(FlowMap::new(self.field.clone(), self.domain.clone(), s));
                PullbackEval {
                    map,
                    inner: self.inner.clone(),
                }
                .eval_contracted(omega, p, v, rule)
            },
            self.tau,
        )
    }
}

struct ContractEval {
    inner: GeneralizedField,
    t: Arc<dyn TensorField>,
}

impl Evaluator for ContractEval {
    fn rank(&self) -> Rank {
        Rank::new(0, 0)
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval_contracted(&self, omega: &Arc<dyn Density>, p: &[f64], v: &TensorValue, rule: &QuadRule) -> Result<f64> {
        let s = v.components()[0];
        Ok(s * self.inner.eval_contracted(omega, p, &self.t.value(p)?, rule)?)
    }
}

struct CombinationEval {
    terms: Vec<(f64, GeneralizedField)>,
}

impl Evaluator for CombinationEval {
    fn rank(&self) -> Rank {
        self.terms[0].1.rank
    }

    fn dim(&self) -> usize {
        self.terms[0].1.dim()
    }

    fn eval_contracted(&self, omega: &Arc<dyn Density>, p: &[f64], v: &TensorValue, rule: &QuadRule) -> Result<f64> {
        self.terms
            .iter()
            .map(|(w, r)| Ok(w * r.eval_contracted(omega, p, v, rule)?))
            .sum()
    }
}

/// `ιT` with transport `A`.
pub fn embed_field(t: Arc<TensorDistribution>, a: Arc<TransportOperator>) -> Result<GeneralizedField> {
    if t.rank().order() > 0 && a.dim() == 0 {
        return Err(Error::invalid("transport has dimension 0"));
    }
    Ok(GeneralizedField {
        rank: t.rank(),
        provenance: Provenance::Embedded,
        evaluator: Arc::new(EmbeddedEval {
            distribution: t,
            transport: a,
        }),
    })
}

/// `(ιT)(Φ(ε, p))(p)·v`.
pub fn embed(
    t: &Arc<TensorDistribution>,
    a: &Arc<TransportOperator>,
    kernel: &SmoothingKernel,
    eps: f64,
    v: &TensorValue,
    p: &[f64],
    rule: &QuadRule,
) -> Result<f64> {
    embed_field(t.clone(), a.clone())?.at_contracted(kernel, eps, p, v, rule)
}

/// `σ(t)`.
pub fn sigma_embed(t: Arc<dyn TensorField>) -> GeneralizedField {
    GeneralizedField {
        rank: t.rank(),
        provenance: Provenance::Sigma,
        evaluator: Arc::new(SigmaEval { field: t }),
    }
}

/// `T_ε(p) = (ιT)(Φ(ε, p))(p)` at each grid point.
pub fn regularize(
    t: &Arc<TensorDistribution>,
    a: &Arc<TransportOperator>,
    kernel: &SmoothingKernel,
    eps: f64,
    grid: &[Vec<f64>],
    rule: &QuadRule,
) -> Result<Vec<TensorValue>> {
    let field = embed_field(t.clone(), a.clone())?;
    grid.iter().map(|p| field.at(kernel, eps, p, rule)).collect()
}

/// `sup_{p ∈ K, i} |(ι t)(Φ(ε, p))(p)·eⁱ − t(p)·eⁱ|` over the dual basis.
pub fn iota_vs_sigma(
    t: Arc<dyn TensorField>,
    a: &Arc<TransportOperator>,
    kernel: &SmoothingKernel,
    k_grid: &[Vec<f64>],
    eps_grid: &[f64],
    rule: &QuadRule,
) -> Result<Sweep> {
    let rank = t.rank();
    let n = t.dim();
    let field = embed_field(Arc::new(TensorDistribution::Regular(t.clone())), a.clone())?;
    let mut values = Vec::new();
    let mut errors = Vec::new();
    for &eps in eps_grid {
        let (mut worst, mut at) = (0.0f64, 0.0);
        for p in k_grid {
            let exact = t.value(p)?;
            for i in 0..rank.components(n) {
                let u = dual_basis(rank, n, i);
                let got = field.at_contracted(kernel, eps, p, &u, rule)?;
                let err = (got - exact.contract(&u)?).abs();
                if err >= worst {
                    worst = err;
                    at = got;
                }
            }
        }
        values.push(at);
        errors.push(worst);
    }
    Ok(Sweep::new(eps_grid.to_vec(), values, errors, EMBED_NOISE_FLOOR))
}

/// `y ↦ ∫ ω(x) Φ(ε, x)(y) A(x, y) u(x) dx`, so that
/// `⟨ρ(T_ε), u ⊗ ω⟩ = ⟨T, ξ_ε ⊗ 1⟩` with `1` the Lebesgue density.
pub struct SmoothedTest {
    pub transport: Arc<TransportOperator>,
    pub mollifier: Arc<RadialMollifier>,
    pub eps: f64,
    pub test: TestObject,
    pub rule: QuadRule,
}

impl TensorField for SmoothedTest {
    fn rank(&self) -> Rank {
        self.test.field.rank()
    }

    fn dim(&self) -> usize {
        self.test.field.dim()
    }

    fn value(&self, y: &[f64]) -> Result<TensorValue> {
        let kd = KernelDensity {
            mollifier: self.mollifier.clone(),
            center: y.to_vec(),
            eps: self.eps,
        };
        let mut acc = TensorValue::zeros(self.rank(), self.dim());
        for nd in kd.nodes(&self.rule)? {
            let w = nd.weight * self.test.density.value(&nd.point)?;
            if w == 0.0 {
                continue;
            }
            let moved = transport_tensor(&self.transport, &nd.point, y, &self.test.field.value(&nd.point)?)?;
            acc = acc.axpy(w, &moved)?;
        }
        Ok(acc)
    }
}

/// `⟨ρ(T_ε), ξ⟩`, the pairing of the regularized field with `ξ`.
///
/// Regular distributions integrate `x ↦ (ιT)(Φ(ε, x))(x)·u(x)` over `ω`
/// directly. Other distributions are paired with [`SmoothedTest`], since the
/// direct integrand is as narrow as the kernel.
pub fn regularized_pairing(
    t: &TensorDistribution,
    a: &Arc<TransportOperator>,
    kernel: &SmoothingKernel,
    eps: f64,
    xi: &TestObject,
    rule: &QuadRule,
) -> Result<f64> {
    if let TensorDistribution::Regular(field) = t {
        return integrate(xi.density.as_ref(), rule, |x| {
            let u = xi.field.value(x)?;
            integrate(&kernel.density(eps, x)?, rule, |y| field.value(y)?.contract(&transport_tensor(a, x, y, &u)?))
        });
    }
    smoothed_pairing(t, a, kernel, eps, xi, rule)
}

/// `⟨T, ξ_ε ⊗ 1⟩` with `ξ_ε` the [`SmoothedTest`] of `ξ`.
pub fn smoothed_pairing(
    t: &TensorDistribution,
    a: &Arc<TransportOperator>,
    kernel: &SmoothingKernel,
    eps: f64,
    xi: &TestObject,
    rule: &QuadRule,
) -> Result<f64> {
    let (lo, hi) = xi.density.bounding_box()?;
    let r = kernel.support_radius(eps);
    let breaks = lo
        .iter()
        .zip(&hi)
        .map(|(&l, &h)| {
            let mut b = vec![l - r, h + r];
            if l + r < h - r {
                b.extend([l + r, h - r]);
            }
            b.sort_by(f64::total_cmp);
            b
        })
        .collect();
    let smoothed = SmoothedTest {
        transport: a.clone(),
        mollifier: kernel.mollifier().clone(),
        eps,
        test: xi.clone(),
        rule: *rule,
    };
    let outer = TestObject::new(Arc::new(smoothed), Arc::new(BoxDensity::new(breaks)?))?;
    t.pair(&outer, rule)
}

/// `d(ε) = |⟨ρ(T_ε) − T, ξ⟩|` over `eps_grid`.
pub fn weak_convergence_test(
    t: &TensorDistribution,
    a: &Arc<TransportOperator>,
    kernel: &SmoothingKernel,
    xi: &TestObject,
    eps_grid: &[f64],
    rule: &QuadRule,
) -> Result<Sweep> {
    let target = t.pair(xi, rule)?;
    let values = eps_grid
        .iter()
        .map(|&e| regularized_pairing(t, a, kernel, e, xi, rule))
        .collect::<Result<Vec<f64>>>()?;
    let errors = values.iter().map(|v| (v - target).abs()).collect();
    Ok(Sweep::new(eps_grid.to_vec(), values, errors, EMBED_NOISE_FLOOR * target.abs().max(1.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectivityReport {
    /// `⟨T, ξ⟩`.
    pub target: f64,
    pub sweep: Sweep,
    /// Value at the smallest `ε`.
    pub limit: f64,
    /// The sweep converges, and to a nonzero value when `⟨T, ξ⟩ ≠ 0`.
    pub separates: bool,
}

/// Largest relative gap between the last value and `⟨T, ξ⟩` that still keeps
/// the limit away from zero.
pub const INJECTIVITY_TOLERANCE: f64 = 0.5;

/// Whether `⟨ρ(T_ε), ξ⟩` tends to a nonzero value when `⟨T, ξ⟩ ≠ 0`.
pub fn injectivity_probe(
    t: &TensorDistribution,
    a: &Arc<TransportOperator>,
    kernel: &SmoothingKernel,
    xi: &TestObject,
    eps_grid: &[f64],
    rule: &QuadRule,
) -> Result<InjectivityReport> {
    let sweep = weak_convergence_test(t, a, kernel, xi, eps_grid, rule)?;
    InjectivityReport::from_sweep(t.pair(xi, rule)?, sweep)
}

impl InjectivityReport {
    /// Verdict from a finished weak-convergence sweep against `target = ⟨T, ξ⟩`.
    pub fn from_sweep(target: f64, sweep: Sweep) -> Result<Self> {
        let limit = *sweep.value.last().ok_or_else(|| Error::invalid("empty ε grid"))?;
        let zero = EMBED_NOISE_FLOOR.max(1e-12 * target.abs());
        let separates = if target.abs() <= zero {
            limit.abs() <= 1e-9
        } else {
            limit.abs() > zero && (limit - target).abs() <= INJECTIVITY_TOLERANCE * target.abs()
        } && sweep.fit.passes(0.8, true);
        Ok(InjectivityReport {
            target,
            sweep,
            limit,
            separates,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::WindowDensity;
    use crate::distributions::{ConstantField, ExprField};
    use crate::fit::geometric_grid;
    use crate::geodesics::{ConvexPatch, StepRule};
    use crate::geometry::DiffeoExpr;
    use crate::mollifiers::build_radial_mollifier;
    use crate::samples;

    fn flat_setup(n: usize, q: usize) -> (Arc<TransportOperator>, SmoothingKernel) {
        let m = samples::flat(n);
        let a = TransportOperator::new(m.clone(), ConvexPatch::new(vec![0.0; n], 5.0).unwrap()).unwrap();
        let k = SmoothingKernel::new(build_radial_mollifier(n, q, 1.0).unwrap(), m.domain().clone()).unwrap();
        (Arc::new(a), k)
    }

    fn half_plane_setup(q: usize) -> (Arc<TransportOperator>, SmoothingKernel) {
        let m = samples::half_plane();
        let a = TransportOperator::new(m.clone(), ConvexPatch::new(vec![0.0, 1.0], 0.5).unwrap())
            .unwrap()
            .with_step_rule(StepRule::Fixed(32));
        let k = SmoothingKernel::new(build_radial_mollifier(2, q, 1.0).unwrap(), m.domain().clone()).unwrap();
        (Arc::new(a), k)
    }

    fn window(c: &[f64], h: &[f64]) -> Arc<dyn Density> {
        Arc::new(WindowDensity::new(c.to_vec(), h.to_vec(), 1.0).unwrap())
    }

    #[test]
    fn dual_basis_picks_components() {
        let rank = Rank::new(1, 1);
        let t = TensorValue::new(rank, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        for i in 0..4 {
            assert_eq!(t.contract(&dual_basis(rank, 2, i)).unwrap(), t.components()[i]);
        }
    }

    #[test]
    fn delta_against_kernel() {
        let rule = QuadRule::default();
        let (a, k) = flat_setup(2, 1);
        let d = Arc::new(TensorDistribution::delta(vec![0.01, 0.02], TensorValue::covector(&[2.0, 1.0])).unwrap());
        let v = TensorValue::vector(&[0.5, 3.0]);
        let p = [0.0, 0.0];
        let got = embed(&d, &a, &k, 0.1, &v, &p, &rule).unwrap();
        let want = (2.0 * 0.5 + 3.0) * k.eval(0.1, &p, &[0.01, 0.02]);
        assert!((got - want).abs() < 1e-12 * want.abs());
    }

    #[test]
    fn constant_field_is_reproduced() {
        let rule = QuadRule::default();
        let (a, k) = flat_setup(2, 2);
        let t = Arc::new(TensorDistribution::regular(ConstantField(TensorValue::covector(&[1.5, -2.0]))));
        let v = TensorValue::vector(&[1.0, 1.0]);
        for eps in [0.3, 0.05] {
            let got = embed(&t, &a, &k, eps, &v, &[0.2, 0.1], &rule).unwrap();
            assert!((got + 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn delta_regularization_reproduces_the_profile() {
        let rule = QuadRule::default();
        let (a, k) = flat_setup(1, 2);
        let d = Arc::new(TensorDistribution::delta(vec![0.0], TensorValue::scalar(1.0)).unwrap());
        let eps = 0.0625;
        let grid: Vec<Vec<f64>> = (0..9).map(|i| vec![-0.06 + 0.015 * i as f64]).collect();
        let vals = regularize(&d, &a, &k, eps, &grid, &rule).unwrap();
        for (p, v) in grid.iter().zip(&vals) {
            assert_eq!(v.components()[0], k.eval(eps, p, &[0.0]));
        }
    }

    #[test]
    fn embedding_is_linear_and_local() {
        let rule = QuadRule::default();
        let (a, k) = half_plane_setup(1);
        let f = Arc::new(TensorDistribution::regular(ExprField::parse(Rank::new(0, 1), 2, &["x*y", "1"]).unwrap()));
        let d = Arc::new(TensorDistribution::delta(vec![0.01, 1.0], TensorValue::covector(&[1.0, 0.0])).unwrap());
        let s = Arc::new(TensorDistribution::sum(vec![(2.0, f.clone()), (-3.0, d.clone())]).unwrap());
        let v = TensorValue::vector(&[1.0, 2.0]);
        let p = [0.0, 1.0];
        let e = |t: &Arc<TensorDistribution>| embed(t, &a, &k, 0.1, &v, &p, &rule).unwrap();
        assert!((e(&s) - (2.0 * e(&f) - 3.0 * e(&d))).abs() < 1e-10);
        let far = Arc::new(TensorDistribution::delta(vec![0.4, 1.0], TensorValue::covector(&[5.0, 5.0])).unwrap());
        let plus = Arc::new(TensorDistribution::sum(vec![(1.0, f.clone()), (1.0, far)]).unwrap());
        assert_eq!(e(&plus), e(&f));
    }

    #[test]
    fn scalar_embedding_is_convolution() {
        let rule = QuadRule::default();
        let (a, k) = half_plane_setup(2);
        let f = ExprField::scalar(2, "sin(x)*y").unwrap();
        let t = Arc::new(TensorDistribution::regular(f.clone()));
        let p = [0.1, 1.1];
        let got = embed(&t, &a, &k, 0.1, &TensorValue::scalar(1.0), &p, &rule).unwrap();
        let conv = crate::density::integrate(&k.density(0.1, &p).unwrap(), &rule, |q| Ok(q[0].sin() * q[1])).unwrap();
        assert!((got - conv).abs() < 1e-14);
    }

    #[test]
    fn sigma_is_kernel_independent() {
        let rule = QuadRule::default();
        let (_, k) = flat_setup(2, 1);
        let t: Arc<dyn TensorField> = Arc::new(ExprField::parse(Rank::new(0, 1), 2, &["x", "y^2"]).unwrap());
        let s = sigma_embed(t.clone());
        let p = [0.3, -0.2];
        let a = s.at(&k, 0.1, &p, &rule).unwrap();
        let b = s.at(&k, 0.01, &p, &rule).unwrap();
        assert_eq!(a, b);
        let u = TensorValue::vector(&[2.0, 1.0]);
        let st: Arc<dyn TensorField> = Arc::new(ExprField::scalar(2, "2*x + y^2").unwrap());
        let lhs = s.contract_with(Arc::new(ConstantField(u))).unwrap();
        let rhs = sigma_embed(st);
        let one = TensorValue::scalar(1.0);
        assert!((lhs.at_contracted(&k, 0.1, &p, &one, &rule).unwrap() - rhs.at_contracted(&k, 0.1, &p, &one, &rule).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn iota_vs_sigma_exact_cases() {
        let rule = QuadRule::default();
        let (a, k) = flat_setup(2, 2);
        let grid = vec![vec![0.0, 0.0], vec![0.5, -0.3]];
        let c: Arc<dyn TensorField> = Arc::new(ConstantField(TensorValue::covector(&[1.0, 2.0])));
        let s = iota_vs_sigma(c, &a, &k, &grid, &[0.2, 0.1], &rule).unwrap();
        assert!(s.error.iter().all(|e| *e < 1e-10));
        // degree ≤ k polynomials are reproduced by the vanishing moments
        let p: Arc<dyn TensorField> = Arc::new(ExprField::parse(Rank::new(0, 1), 2, &["x^2 - y", "x*y"]).unwrap());
        let s = iota_vs_sigma(p, &a, &k, &grid, &[0.2, 0.1], &rule).unwrap();
        assert!(s.error.iter().all(|e| *e < 1e-12), "{s:?}");
    }

    #[test]
    fn iota_vs_sigma_rate_on_half_plane() {
        let rule = QuadRule::default();
        let (a, k) = half_plane_setup(1);
        let dx: Arc<dyn TensorField> = Arc::new(ExprField::parse(Rank::new(0, 1), 2, &["1", "0"]).unwrap());
        let eps = geometric_grid(0.125, 0.125 / 8.0, 0.5);
        let s = iota_vs_sigma(dx, &a, &k, &[vec![0.0, 1.0]], &eps, &rule).unwrap();
        assert!(s.fit.slope.unwrap() >= 1.8, "{s:?}");
    }

    #[test]
    fn weak_convergence_cases() {
        let rule = QuadRule::default();
        let (a, k) = flat_setup(1, 0);
        let eps = geometric_grid(0.125, 0.125 / 8.0, 0.5);
        let one: Arc<dyn TensorField> = Arc::new(ExprField::scalar(1, "1").unwrap());
        let xi = TestObject::new(one.clone(), window(&[0.1], &[0.4])).unwrap();
        let f = TensorDistribution::regular(ExprField::scalar(1, "exp(x)").unwrap());
        let s = weak_convergence_test(&f, &a, &k, &xi, &eps, &rule).unwrap();
        assert!(s.fit.passes(0.8, true), "{s:?}");
        let d = TensorDistribution::delta(vec![0.2], TensorValue::scalar(1.0)).unwrap();
        let s = weak_convergence_test(&d, &a, &k, &xi, &eps, &rule).unwrap();
        assert!(s.fit.passes(0.8, true), "{s:?}");
        // disjoint supports
        let far = TestObject::new(one, window(&[2.0], &[0.3])).unwrap();
        let s = weak_convergence_test(&d, &a, &k, &far, &eps, &rule).unwrap();
        assert!(s.value.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pairing_routes_agree_for_regular_fields() {
        let rule = QuadRule::default();
        let m = samples::curved_1d();
        let a = Arc::new(
            TransportOperator::new(m.clone(), ConvexPatch::new(vec![0.0], 1.5).unwrap())
                .unwrap()
                .with_step_rule(StepRule::Fixed(32)),
        );
        let k = SmoothingKernel::new(build_radial_mollifier(1, 1, 1.0).unwrap(), m.domain().clone()).unwrap();
        let t = TensorDistribution::regular(ExprField::parse(Rank::new(0, 1), 1, &["exp(x)"]).unwrap());
        let u: Arc<dyn TensorField> = Arc::new(ExprField::parse(Rank::new(1, 0), 1, &["1 + x^2"]).unwrap());
        let xi = TestObject::new(u, window(&[0.1], &[0.4])).unwrap();
        let direct = regularized_pairing(&t, &a, &k, 0.1, &xi, &rule).unwrap();
        let fubini = smoothed_pairing(&t, &a, &k, 0.1, &xi, &rule).unwrap();
        assert!((direct - fubini).abs() < 1e-10 * direct.abs(), "{direct} {fubini}");
    }

    #[test]
    fn injectivity() {
        let rule = QuadRule::default();
        let (a, k) = flat_setup(1, 3);
        let eps = geometric_grid(0.1, 0.1 / 8.0, 0.5);
        let one: Arc<dyn TensorField> = Arc::new(ExprField::scalar(1, "1").unwrap());
        let xi = TestObject::new(one, window(&[0.8], &[0.7])).unwrap();
        let sin = TensorDistribution::regular(ExprField::scalar(1, "sin(x)").unwrap());
        let r = injectivity_probe(&sin, &a, &k, &xi, &eps, &rule).unwrap();
        assert!(r.separates && (r.limit - r.target).abs() < 1e-6, "{r:?}");
        let zero = TensorDistribution::zero(Rank::new(0, 0), 1);
        assert!(injectivity_probe(&zero, &a, &k, &xi, &eps, &rule).unwrap().separates);
        let d = TensorDistribution::delta(vec![0.8], TensorValue::scalar(2.0)).unwrap();
        assert!(injectivity_probe(&d, &a, &k, &xi, &eps, &rule).unwrap().separates);
    }

    #[test]
    fn pullback_of_sigma_is_classical_pullback() {
        let rule = QuadRule::default();
        let (_, k) = flat_setup(2, 1);
        let t: Arc<dyn TensorField> = Arc::new(ExprField::parse(Rank::new(0, 1), 2, &["x*y", "x"]).unwrap());
        let mu: Arc<dyn Diffeo> = Arc::new(DiffeoExpr::parse(&["2*x", "y + x"], &["x/2", "y - x/2"], &[vec![0.1, 0.2]]).unwrap());
        let pb = sigma_embed(t).pullback(mu);
        let p = [0.3, 0.4];
        // μ*t = (Dμ)ᵀ t(μ p), μp = (0.6, 0.7), t = (0.42, 0.6), Dμ = [[2,0],[1,1]]
        let got = pb.at(&k, 0.1, &p, &rule).unwrap();
        let want = [2.0 * 0.42 + 0.6, 0.6];
        assert!((got.components()[0] - want[0]).abs() < 1e-9 && (got.components()[1] - want[1]).abs() < 1e-9);
    }
}
