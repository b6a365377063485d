use std::sync::Arc;

use nalgebra::DMatrix;

use super::{BoxDomain, Expr};
use crate::error::{Error, Result};
use crate::ode;

/// Maximal RK4 step for flows.
pub const FLOW_STEP: f64 = 1e-3;

const JACOBIAN_FD_STEP: f64 = 1e-4;
const HESSIAN_FD_STEP: f64 = 1e-3;

/// Vector field given by one expression per component.
///
/// Polynomial fields are differentiated exactly; other fields use nested
/// central differences with steps 1e-4 (first) and 1e-3 (second).
#[derive(Debug, Clone)]
pub struct VectorFieldExpr {
    comps: Vec<Expr>,
    // jac[k*n + i] = ∂_i X^k, hess[(k*n + i)*n + j] = ∂_i ∂_j X^k
    exact: Option<(Vec<Expr>, Vec<Expr>)>,
}

impl VectorFieldExpr {
    pub fn new(comps: Vec<Expr>) -> Result<Self> {
        let n = comps.len();
        if let Some(e) = comps.iter().find(|e| e.arity() > n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: e.arity(),
            });
        }
        let exact = comps.iter().all(Expr::is_polynomial).then(|| {
            let jac: Vec<Expr> = comps
                .iter()
                .flat_map(|c| (0..n).map(move |i| c.derivative(i)))
                .collect();
            let hess = jac
                .iter()
                .flat_map(|d| (0..n).map(move |j| d.derivative(j)))
                .collect();
            (jac, hess)
        });
        Ok(VectorFieldExpr { comps, exact })
    }

    pub fn parse(comps: &[&str]) -> Result<Self> {
        let exprs = comps.iter().map(|s| Expr::parse(s)).collect::<Result<Vec<_>>>()?;
        Self::new(exprs)
    }

    pub fn constant(c: &[f64]) -> Self {
        Self::new(c.iter().map(|v| Expr::Num(*v)).collect()).expect("constant field")
    }

    /// The coordinate field `∂_i` in dimension `n`.
    pub fn coordinate(n: usize, i: usize) -> Self {
        let mut c = vec![0.0; n];
        c[i] = 1.0;
        Self::constant(&c)
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn components(&self) -> &[Expr] {
        &self.comps
    }

    pub fn is_exact(&self) -> bool {
        self.exact.is_some()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.comps) {
            *o = c.eval(x);
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.comps.iter().map(|c| c.eval(x)).collect()
    }

    /// `X′(x)` with entry `(k, i) = ∂_i X^k`.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n * n];
        self.jacobian_into(x, &mut out);
        DMatrix::from_row_slice(n, n, &out)
    }

    fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        if let Some((jac, _)) = &self.exact {
            for (o, e) in out.iter_mut().zip(jac) {
                *o = e.eval(x);
            }
            return;
        }
        fd_jacobian(n, x, JACOBIAN_FD_STEP, |y, o| self.eval_into(y, o), out);
    }

    /// `X″(x)` flattened with `∂_i ∂_j X^k` at `(k*n + i)*n + j`.
    pub fn second_derivative(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        if let Some((_, hess)) = &self.exact {
            return hess.iter().map(|e| e.eval(x)).collect();
        }
        let mut jp = vec![0.0; n * n];
        let mut jm = vec![0.0; n * n];
        let mut out = vec![0.0; n * n * n];
        let mut y = x.to_vec();
        for j in 0..n {
            let h = HESSIAN_FD_STEP * x[j].abs().max(1.0);
            y[j] = x[j] + h;
            self.jacobian_into(&y, &mut jp);
            y[j] = x[j] - h;
            self.jacobian_into(&y, &mut jm);
            y[j] = x[j];
            for k in 0..n {
                for i in 0..n {
                    out[(k * n + i) * n + j] = (jp[k * n + i] - jm[k * n + i]) / (2.0 * h);
                }
            }
        }
        out
    }
}

fn fd_jacobian<F: FnMut(&[f64], &mut [f64])>(n: usize, x: &[f64], step: f64, mut f: F, out: &mut [f64]) {
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    let mut y = x.to_vec();
    for i in 0..n {
        let h = step * x[i].abs().max(1.0);
        y[i] = x[i] + h;
        f(&y, &mut fp);
        y[i] = x[i] - h;
        f(&y, &mut fm);
        y[i] = x[i];
        for k in 0..n {
            out[k * n + i] = (fp[k] - fm[k]) / (2.0 * h);
        }
    }
}

fn integrate_flow(
    field: &VectorFieldExpr,
    domain: &BoxDomain,
    t: f64,
    x: &[f64],
    with_jacobian: bool,
) -> Result<(Vec<f64>, Option<DMatrix<f64>>)> {
    let n = field.dim();
    if x.len() != n || domain.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x.len(),
        });
    }
    if !domain.contains(x) {
        return Err(Error::DomainExit {
            time: 0.0,
            point: x.to_vec(),
        });
    }
    let steps = ode::step_count(t, FLOW_STEP);
    let h = if steps == 0 { 0.0 } else { t / steps as f64 };
    let m = if with_jacobian { n + n * n } else { n };
    let mut y = vec![0.0; m];
    y[..n].copy_from_slice(x);
    if with_jacobian {
        for i in 0..n {
            y[n + i * n + i] = 1.0;
        }
    }
    let mut jac = vec![0.0; n * n];
    ode::rk4(
        &mut y,
        h,
        steps,
        |s, d| {
            field.eval_into(&s[..n], &mut d[..n]);
            if with_jacobian {
                field.jacobian_into(&s[..n], &mut jac);
                // d/dt J = X′(x) J
                for r in 0..n {
                    for c in 0..n {
                        let mut acc = 0.0;
                        for k in 0..n {
                            acc += jac[r * n + k] * s[n + k * n + c];
                        }
                        d[n + r * n + c] = acc;
                    }
                }
            }
            Ok(())
        },
        |_, time, s| {
            if domain.contains(&s[..n]) {
                Ok(())
            } else {
                Err(Error::DomainExit {
                    time: time.copysign(t),
                    point: s[..n].to_vec(),
                })
            }
        },
    )?;
    let point = y[..n].to_vec();
    let jacobian = with_jacobian.then(|| DMatrix::from_row_slice(n, n, &y[n..]));
    Ok((point, jacobian))
}

/// `α(t, x)` for the local flow of `field`, by RK4 with step at most
/// [`FLOW_STEP`].
///
/// ```
/// use gtf_core::geometry::{flow, BoxDomain, VectorFieldExpr};
///
/// let x = VectorFieldExpr::parse(&["x"]).unwrap();
/// let dom = BoxDomain::new(vec![0.0], vec![10.0]).unwrap();
/// let y = flow(&x, &dom, 1.0, &[1.0]).unwrap();
/// assert!((y[0] - 1f64.exp()).abs() < 1e-8 * 1f64.exp());
/// ```
pub fn flow(field: &VectorFieldExpr, domain: &BoxDomain, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    integrate_flow(field, domain, t, x, false).map(|(p, _)| p)
}

/// Flow together with `Dα(t, x)` from the variational equation.
pub fn flow_with_jacobian(
    field: &VectorFieldExpr,
    domain: &BoxDomain,
    t: f64,
    x: &[f64],
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    integrate_flow(field, domain, t, x, true).map(|(p, j)| (p, j.expect("jacobian requested")))
}

/// Orientation-preserving diffeomorphism between open subsets of one chart.
pub trait Diffeo: Send + Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn apply_inverse(&self, y: &[f64]) -> Result<Vec<f64>>;
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>>;

    fn apply_with_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        Ok((self.apply(x)?, self.jacobian(x)?))
    }

    /// Preimage of `y` and `Dμ` at that preimage.
    fn inverse_with_jacobian(&self, y: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let x = self.apply_inverse(y)?;
        let j = self.jacobian(&x)?;
        Ok((x, j))
    }
}

/// Diffeomorphism given by forward and inverse expressions.
#[derive(Debug, Clone)]
pub struct DiffeoExpr {
    forward: Vec<Expr>,
    inverse: Vec<Expr>,
    jac: Vec<Expr>,
    orientation_preserving: bool,
}

impl DiffeoExpr {
    /// Builds the map and checks `forward ∘ inverse = id` within 1e-9 on
    /// `samples` (points in the image).
    pub fn new(forward: Vec<Expr>, inverse: Vec<Expr>, samples: &[Vec<f64>]) -> Result<Self> {
        let n = forward.len();
        if inverse.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: inverse.len(),
            });
        }
        if let Some(e) = forward.iter().chain(&inverse).find(|e| e.arity() > n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: e.arity(),
            });
        }
        let jac = forward
            .iter()
            .flat_map(|c| (0..n).map(move |i| c.derivative(i)))
            .collect();
        let mut d = DiffeoExpr {
            forward,
            inverse,
            jac,
            orientation_preserving: true,
        };
        let mut dets = Vec::new();
        for y in samples {
            let x: Vec<f64> = d.inverse.iter().map(|e| e.eval(y)).collect();
            let back: Vec<f64> = d.forward.iter().map(|e| e.eval(&x)).collect();
            let err = back
                .iter()
                .zip(y)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs() / b.abs().max(1.0)));
            if !(err < 1e-9) {
                return Err(Error::invalid(format!(
                    "forward ∘ inverse differs from the identity by {err:e} at {y:?}"
                )));
            }
            dets.push(d.jacobian_matrix(&x).determinant());
        }
        if dets.iter().any(|v| *v == 0.0 || !v.is_finite()) {
            return Err(Error::Singular("diffeomorphism Jacobian".into()));
        }
        d.orientation_preserving = dets.iter().all(|v| *v > 0.0);
        Ok(d)
    }

    pub fn parse(forward: &[&str], inverse: &[&str], samples: &[Vec<f64>]) -> Result<Self> {
        let f = forward.iter().map(|s| Expr::parse(s)).collect::<Result<Vec<_>>>()?;
        let i = inverse.iter().map(|s| Expr::parse(s)).collect::<Result<Vec<_>>>()?;
        Self::new(f, i, samples)
    }

    pub fn identity(n: usize) -> Self {
        let v: Vec<Expr> = (0..n).map(Expr::Var).collect();
        Self::new(v.clone(), v, &[]).expect("identity")
    }

    pub fn translation(c: &[f64]) -> Self {
        let f = c
            .iter()
            .enumerate()
            .map(|(i, v)| Expr::Add(Box::new(Expr::Var(i)), Box::new(Expr::Num(*v))))
            .collect();
        let b = c
            .iter()
            .enumerate()
            .map(|(i, v)| Expr::Sub(Box::new(Expr::Var(i)), Box::new(Expr::Num(*v))))
            .collect();
        Self::new(f, b, &[]).expect("translation")
    }

    /// `x ↦ λ x` for `λ > 0`.
    pub fn scaling(n: usize, lambda: f64) -> Self {
        let f = (0..n)
            .map(|i| Expr::Mul(Box::new(Expr::Num(lambda)), Box::new(Expr::Var(i))))
            .collect();
        let b = (0..n)
            .map(|i| Expr::Div(Box::new(Expr::Var(i)), Box::new(Expr::Num(lambda))))
            .collect();
        Self::new(f, b, &[]).expect("scaling")
    }

    pub fn orientation_preserving(&self) -> bool {
        self.orientation_preserving
    }

    fn jacobian_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.forward.len();
        DMatrix::from_fn(n, n, |k, i| self.jac[k * n + i].eval(x))
    }
}

impl Diffeo for DiffeoExpr {
    fn dim(&self) -> usize {
        self.forward.len()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward.iter().map(|e| e.eval(x)).collect())
    }

    fn apply_inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.inverse.iter().map(|e| e.eval(y)).collect())
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.jacobian_matrix(x))
    }
}

/// The time-`t` map of a vector field's flow inside a domain.
#[derive(Debug, Clone)]
pub struct FlowMap {
    pub field: Arc<VectorFieldExpr>,
    pub domain: BoxDomain,
    pub time: f64,
}

impl FlowMap {
    pub fn new(field: Arc<VectorFieldExpr>, domain: BoxDomain, time: f64) -> Self {
        FlowMap {
            field,
            domain,
            time,
        }
    }
}

impl Diffeo for FlowMap {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        flow(&self.field, &self.domain, self.time, x)
    }

    fn apply_inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        flow(&self.field, &self.domain, -self.time, y)
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        flow_with_jacobian(&self.field, &self.domain, self.time, x).map(|(_, j)| j)
    }

    fn apply_with_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        flow_with_jacobian(&self.field, &self.domain, self.time, x)
    }

    fn inverse_with_jacobian(&self, y: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        // D(Fl_t)(Fl_{-t} y) = (D Fl_{-t}(y))^-1
        let (x, jinv) = flow_with_jacobian(&self.field, &self.domain, -self.time, y)?;
        let j = jinv
            .try_inverse()
            .ok_or_else(|| Error::Singular("flow Jacobian".into()))?;
        Ok((x, j))
    }
}

/// The inverse of another diffeomorphism.
#[derive(Clone)]
pub struct InverseDiffeo(pub Arc<dyn Diffeo>);

impl Diffeo for InverseDiffeo {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.0.apply_inverse(x)
    }

    fn apply_inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.0.apply(y)
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.apply_with_jacobian(x).map(|(_, j)| j)
    }

    fn apply_with_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let (y, j) = self.0.inverse_with_jacobian(x)?;
        let inv = j
            .try_inverse()
            .ok_or_else(|| Error::Singular("inverse Jacobian".into()))?;
        Ok((y, inv))
    }

    fn inverse_with_jacobian(&self, y: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let (x, j) = self.0.apply_with_jacobian(y)?;
        let inv = j
            .try_inverse()
            .ok_or_else(|| Error::Singular("inverse Jacobian".into()))?;
        Ok((x, inv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plane() -> BoxDomain {
        BoxDomain::new(vec![-5.0, 0.05], vec![5.0, 10.0]).unwrap()
    }

    #[test]
    fn constant_and_translation_flows() {
        let c = VectorFieldExpr::constant(&[0.5, -0.25]);
        let y = flow(&c, &plane(), 0.8, &[0.0, 1.0]).unwrap();
        assert!((y[0] - 0.4).abs() < 1e-12 && (y[1] - 0.8).abs() < 1e-12);
        let dx = VectorFieldExpr::coordinate(2, 0);
        let y = flow(&dx, &plane(), 0.3, &[0.0, 1.0]).unwrap();
        assert!((y[0] - 0.3).abs() < 1e-12 && (y[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn linear_flow_and_its_jacobian() {
        let f = VectorFieldExpr::parse(&["x"]).unwrap();
        let dom = BoxDomain::new(vec![-10.0], vec![10.0]).unwrap();
        let (y, j) = flow_with_jacobian(&f, &dom, 1.0, &[0.7]).unwrap();
        let e = 1f64.exp();
        assert!((y[0] / (0.7 * e) - 1.0).abs() < 1e-8);
        assert!((j[(0, 0)] / e - 1.0).abs() < 1e-8);
    }

    #[test]
    fn domain_exit_reports_time() {
        let f = VectorFieldExpr::constant(&[0.0, -1.0]);
        match flow(&f, &plane(), 2.0, &[0.0, 1.0]) {
            Err(Error::DomainExit { time, .. }) => assert!((time - 0.95).abs() < 2e-3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exact_and_fd_derivatives_agree() {
        let poly = VectorFieldExpr::parse(&["x^2*y - y^3", "x*y + 2"]).unwrap();
        assert!(poly.is_exact());
        let nonpoly = VectorFieldExpr::parse(&["x^2*y - y^3 + 0*sin(x)", "x*y + 2"]).unwrap();
        assert!(!nonpoly.is_exact());
        let p = [0.4, 1.3];
        let (a, b) = (poly.jacobian(&p), nonpoly.jacobian(&p));
        assert!((a - b).abs().max() < 1e-7);
        let (a, b) = (poly.second_derivative(&p), nonpoly.second_derivative(&p));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
    }

    #[test]
    fn fd_jacobian_converges_quadratically_to_exact() {
        let f = VectorFieldExpr::parse(&["x^3 + x*y", "y^2*x"]).unwrap();
        let p = [0.6, -0.8];
        let exact = f.jacobian(&p);
        let err = |h: f64| {
            let mut out = [0.0; 4];
            fd_jacobian(2, &p, h, |y, o| f.eval_into(y, o), &mut out);
            (DMatrix::from_row_slice(2, 2, &out) - &exact).abs().max()
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn diffeo_expr_checks_inverse() {
        let s = vec![vec![0.5, 1.0], vec![-0.2, 2.0]];
        let d = DiffeoExpr::parse(&["x + y^2", "2*y"], &["x - (y/2)^2", "y/2"], &s).unwrap();
        assert!(d.orientation_preserving());
        assert!(DiffeoExpr::parse(&["x + y^2", "2*y"], &["x - y^2", "y/2"], &s).is_err());
        let flip = DiffeoExpr::parse(&["-x", "y"], &["-x", "y"], &s).unwrap();
        assert!(!flip.orientation_preserving());
    }

    proptest! {
        #[test]
        fn flow_is_reversible(x in -0.5f64..0.5, y in 0.5f64..2.0, t in -0.5f64..0.5) {
            let f = VectorFieldExpr::parse(&["y - x^2", "0.3*x*y"]).unwrap();
            let dom = plane();
            let fwd = flow(&f, &dom, t, &[x, y]).unwrap();
            let back = flow(&f, &dom, -t, &fwd).unwrap();
            prop_assert!((back[0] - x).abs() < 1e-7 && (back[1] - y).abs() < 1e-7);
        }

        #[test]
        fn flow_map_inverse_jacobian(x in -0.5f64..0.5, y in 0.5f64..2.0) {
            let f = VectorFieldExpr::parse(&["sin(y)", "0.3*x*y"]).unwrap();
            let dom = plane();
            let m = FlowMap::new(Arc::new(f), dom, 0.2);
            let (p, j) = m.apply_with_jacobian(&[x, y]).unwrap();
            let (q, j2) = m.inverse_with_jacobian(&p).unwrap();
            prop_assert!((q[0] - x).abs() < 1e-9 && (q[1] - y).abs() < 1e-9);
            prop_assert!((j - j2).abs().max() < 1e-8);
        }
    }
}
