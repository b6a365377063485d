//! Geodesic ODE, exponential and logarithm maps, convex patches, and the
//! diagonal jet identities of `(u, v)`.
//!
//! `u̇ = v`, `v̇ = −Γ(u)(v, v)`, `u(0) = x`, `v(0) = w`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{gamma_apply, ChartManifold};
use crate::ode;

/// Base step of the geodesic integrator, divided by `max(1, |w|)`.
pub const GEODESIC_STEP: f64 = 1e-3;
/// Newton stops when `|exp(x, w) − y|` falls below this.
pub const LOG_TOLERANCE: f64 = 1e-10;
pub const LOG_MAX_ITERATIONS: usize = 50;

/// How many RK4 steps to take.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// Step at most `1e-3 / max(1, |w|)`.
    Contract,
    /// Step at most the given size (independent of `w`).
    MaxStep(f64),
    /// Exactly this many steps per unit parameter time.
    Fixed(usize),
}

impl StepRule {
    fn steps(self, t: f64, w: &[f64]) -> usize {
        match self {
            StepRule::Contract => ode::step_count(t, GEODESIC_STEP / norm(w).max(1.0)),
            StepRule::MaxStep(h) => ode::step_count(t, h),
            StepRule::Fixed(k) => {
                if t == 0.0 {
                    0
                } else {
                    ((k as f64 * t.abs()).ceil() as usize).max(1)
                }
            }
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub count: usize,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicSolution {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub t_max: f64,
    pub steps: StepRecord,
}

/// Integrates the geodesic system, optionally transporting the columns of
/// `transport` (row-major `n×n`, updated in place) along it with
/// `Ṗ = −Γ(u)(v, P)`.
pub(crate) fn integrate(
    m: &ChartManifold,
    x: &[f64],
    w: &[f64],
    t: f64,
    rule: StepRule,
    transport: Option<&mut [f64]>,
) -> Result<GeodesicSolution> {
    let n = m.dim();
    if x.len() != n || w.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if x.len() != n { x.len() } else { w.len() },
        });
    }
    if !m.domain().contains(x) {
        return Err(Error::DomainExit {
            time: 0.0,
            point: x.to_vec(),
        });
    }
    let steps = rule.steps(t, w);
    let h = if steps == 0 { 0.0 } else { t / steps as f64 };
    let with_p = transport.is_some();
    let dim = if with_p { 2 * n + n * n } else { 2 * n };
    let mut y = vec![0.0; dim];
    y[..n].copy_from_slice(x);
    y[n..2 * n].copy_from_slice(w);
    if let Some(p) = &transport {
        y[2 * n..].copy_from_slice(p);
    }
    if m.is_flat() {
        // Exact solution; transport is the identity.
        for i in 0..n {
            y[i] = x[i] + t * w[i];
        }
        if !m.domain().contains(&y[..n]) {
            return Err(Error::DomainExit {
                time: t,
                point: y[..n].to_vec(),
            });
        }
    } else {
        let mut gamma = vec![0.0; n * n * n];
        let mut gv = vec![0.0; n];
        ode::rk4(
            &mut y,
            h,
            steps,
            |s, d| {
                let (u, rest) = s.split_at(n);
                let (v, p) = rest.split_at(n);
                m.christoffel_into(u, &mut gamma)?;
                d[..n].copy_from_slice(v);
                gamma_apply(&gamma, n, v, v, &mut gv);
                for k in 0..n {
                    d[n + k] = -gv[k];
                }
                if with_p {
                    // Ṗ[k][c] = −Σ_ij Γ^k_ij v^i P[j][c]
                    for k in 0..n {
                        let gk = &gamma[k * n * n..(k + 1) * n * n];
                        for c in 0..n {
                            let mut acc = 0.0;
                            for i in 0..n {
                                if v[i] == 0.0 {
                                    continue;
                                }
                                let mut s2 = 0.0;
                                for j in 0..n {
                                    s2 += gk[i * n + j] * p[j * n + c];
                                }
                                acc += v[i] * s2;
                            }
                            d[2 * n + k * n + c] = -acc;
                        }
                    }
                }
                Ok(())
            },
            |_, time, s| {
                if m.domain().contains(&s[..n]) {
                    Ok(())
                } else {
                    Err(Error::DomainExit {
                        time: time.copysign(t),
                        point: s[..n].to_vec(),
                    })
                }
            },
        )?;
    }
    if let Some(p) = transport {
        p.copy_from_slice(&y[2 * n..]);
    }
    Ok(GeodesicSolution {
        u: y[..n].to_vec(),
        v: y[n..2 * n].to_vec(),
        t_max: t,
        steps: StepRecord {
            count: steps,
            size: h.abs(),
        },
    })
}

/// Solves the geodesic ODE from `(x, w)` up to parameter `t` with the
/// default step `1e-3 / max(1, |w|)`.
///
/// ```
/// use gtf_core::geodesics::geodesic_solve;
/// use gtf_core::samples;
///
/// let hp = samples::half_plane();
/// let sol = geodesic_solve(&hp, &[0.0, 1.0], &[0.0, 1.0], 1.0).unwrap();
/// assert!((sol.u[1] - 1f64.exp()).abs() < 1e-7);
/// ```
pub fn geodesic_solve(m: &ChartManifold, x: &[f64], w: &[f64], t: f64) -> Result<GeodesicSolution> {
    integrate(m, x, w, t, StepRule::Contract, None)
}

pub fn geodesic_solve_with(
    m: &ChartManifold,
    x: &[f64],
    w: &[f64],
    t: f64,
    rule: StepRule,
) -> Result<GeodesicSolution> {
    integrate(m, x, w, t, rule, None)
}

/// `exp_x(w) = u(1, x, w)`.
pub fn exp_map(m: &ChartManifold, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    integrate(m, x, w, 1.0, StepRule::Contract, None).map(|s| s.u)
}

pub fn exp_map_with(m: &ChartManifold, x: &[f64], w: &[f64], rule: StepRule) -> Result<Vec<f64>> {
    integrate(m, x, w, 1.0, rule, None).map(|s| s.u)
}

/// Euclidean ball in chart coordinates on which `log_map` converges.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPatch {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl ConvexPatch {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::invalid("patch radius must be positive"));
        }
        Ok(ConvexPatch { center, radius })
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        dist(p, &self.center) <= self.radius * (1.0 + 1e-12)
    }

    pub(crate) fn check(&self, p: &[f64]) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::PatchViolation {
                point: p.to_vec(),
                center: self.center.clone(),
                radius: self.radius,
            })
        }
    }

    /// Empirical patch: starts at half the distance to the domain boundary
    /// (at most 1) and halves until 20 random `log_map` calls converge and
    /// reproduce their endpoints.
    pub fn find(m: &ChartManifold, center: &[f64], seed: u64, rule: StepRule) -> Result<Self> {
        let n = m.dim();
        let mut radius = (0.5 * m.domain().distance_to_boundary(center)).min(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..30 {
            let patch = ConvexPatch::new(center.to_vec(), radius)?;
            let ok = (0..20).all(|_| {
                let x = random_in_ball(&mut rng, center, radius);
                let y = random_in_ball(&mut rng, center, radius);
                match log_map_with(m, &x, &y, &patch, rule) {
                    Ok(w) => exp_map_with(m, &x, &w, rule)
                        .map(|z| dist(&z, &y) < 1e-9)
                        .unwrap_or(false),
                    Err(_) => false,
                }
            });
            if ok {
                return Ok(patch);
            }
            radius *= 0.5;
        }
        Err(Error::invalid(format!(
            "no convex patch found around {center:?} in dimension {n}"
        )))
    }
}

pub(crate) fn random_in_ball(rng: &mut ChaCha8Rng, center: &[f64], radius: f64) -> Vec<f64> {
    loop {
        let d: Vec<f64> = center.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        if norm(&d) <= 1.0 {
            return center.iter().zip(&d).map(|(c, v)| c + radius * v).collect();
        }
    }
}

fn solve(j: &DMatrix<f64>, r: &[f64]) -> Result<Vec<f64>> {
    j.clone()
        .lu()
        .solve(&DVector::from_column_slice(r))
        .map(|d| d.as_slice().to_vec())
        .ok_or_else(|| Error::Singular("Newton Jacobian of exp".into()))
}

/// Logarithm map `w(x, y)` by Newton's method with a finite-difference
/// Jacobian (refreshed when convergence slows) and one final polishing step.
/// Starts from `w₀ = d + ½Γ(x)(d, d)`, `d = y − x`; falls back to
/// continuation in the target when that start fails.
pub fn log_map(m: &ChartManifold, x: &[f64], y: &[f64], patch: &ConvexPatch) -> Result<Vec<f64>> {
    log_map_with(m, x, y, patch, StepRule::Contract)
}

pub fn log_map_with(
    m: &ChartManifold,
    x: &[f64],
    y: &[f64],
    patch: &ConvexPatch,
    rule: StepRule,
) -> Result<Vec<f64>> {
    patch.check(x)?;
    patch.check(y)?;
    let d: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    if m.is_flat() || d.iter().all(|v| *v == 0.0) {
        return Ok(d);
    }
    let guess = |d: &[f64]| -> Result<Vec<f64>> {
        // Second-order inversion of exp: x + w − ½Γ(w, w) ≈ y.
        let gdd = m.christoffel(x)?.apply(d, d);
        Ok(d.iter().zip(&gdd).map(|(a, b)| a + 0.5 * b).collect())
    };
    match newton(m, x, y, guess(&d)?, rule) {
        Ok(w) => Ok(w),
        Err(first) => {
            // Continuation along targets x + s·(y − x) for long pairs.
            let steps = 8;
            let mut w = Vec::new();
            for k in 1..=steps {
                let s = k as f64 / steps as f64;
                let target: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + s * b).collect();
                let w0 = if k == 1 {
                    let dk: Vec<f64> = d.iter().map(|v| s * v).collect();
                    guess(&dk)?
                } else {
                    w.iter().map(|v| v * k as f64 / (k - 1) as f64).collect()
                };
                w = newton(m, x, &target, w0, rule).map_err(|_| first.clone())?;
            }
            Ok(w)
        }
    }
}

fn newton(m: &ChartManifold, x: &[f64], y: &[f64], mut w: Vec<f64>, rule: StepRule) -> Result<Vec<f64>> {
    let n = m.dim();
    let residual = |w: &[f64]| -> Result<Vec<f64>> {
        let e = exp_map_with(m, x, w, rule)?;
        Ok(e.iter().zip(y).map(|(a, b)| a - b).collect())
    };
    let jacobian = |w: &[f64], r0: &[f64]| -> Result<DMatrix<f64>> {
        let h = 1e-7 * norm(w).max(1e-2);
        let mut j = DMatrix::zeros(n, n);
        let mut wp = w.to_vec();
        for i in 0..n {
            wp[i] = w[i] + h;
            let ri = residual(&wp)?;
            wp[i] = w[i];
            for k in 0..n {
                j[(k, i)] = (ri[k] - r0[k]) / h;
            }
        }
        Ok(j)
    };
    let mut r = residual(&w)?;
    let mut rn = norm(&r);
    let mut j = jacobian(&w, &r)?;
    for _ in 0..LOG_MAX_ITERATIONS {
        let delta = solve(&j, &r)?;
        if rn < LOG_TOLERANCE {
            for i in 0..n {
                w[i] -= delta[i];
            }
            return Ok(w);
        }
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let trial: Vec<f64> = w.iter().zip(&delta).map(|(a, b)| a - lambda * b).collect();
            if let Ok(rt) = residual(&trial) {
                let rtn = norm(&rt);
                if rtn < rn {
                    accepted = Some((trial, rt, rtn));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some((wt, rt, rtn)) = accepted else {
            break;
        };
        let slow = rtn > 0.25 * rn;
        w = wt;
        r = rt;
        rn = rtn;
        if slow && rn >= LOG_TOLERANCE {
            j = jacobian(&w, &r)?;
        }
    }
    Err(Error::NewtonNonConvergence {
        iterations: LOG_MAX_ITERATIONS,
        residual: rn,
    })
}

/// Residuals of the diagonal identities for `(u, v)` at `w = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct JetReport {
    pub entries: Vec<(String, f64)>,
}

impl JetReport {
    pub fn max(&self) -> f64 {
        self.entries.iter().map(|e| e.1).fold(0.0, f64::max)
    }

    pub(crate) fn push(&mut self, name: &str, v: f64) {
        match self.entries.iter_mut().find(|e| e.0 == name) {
            Some(e) => e.1 = e.1.max(v),
            None => self.entries.push((name.to_string(), v)),
        }
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Finite-difference check of `u(t,x,0) = x`, `v = 0`,
/// `u′·(ξ,η) = ξ + tη`, `v′·(ξ,η) = η`,
/// `u″·((ξ₁,η₁),(ξ₂,η₂)) = −t²/2 (Γ(η₁,η₂) + Γ(η₂,η₁))` and
/// `v″ = −t (Γ(η₁,η₂) + Γ(η₂,η₁))`, over coordinate and random directions.
pub fn jet_check_uv(m: &ChartManifold, x: &[f64], t: f64, seed: u64) -> Result<JetReport> {
    let n = m.dim();
    let mut rep = JetReport { entries: vec![] };
    let zero = vec![0.0; n];
    let base = geodesic_solve(m, x, &zero, t)?;
    rep.push("u", max_diff(&base.u, x));
    rep.push("v", norm(&base.v));
    let sol = |xs: &[f64], ws: &[f64]| geodesic_solve(m, xs, ws, t);
    let shifted = |a: &[f64], s: f64, xi: &[f64]| -> Vec<f64> {
        a.iter().zip(xi).map(|(p, q)| p + s * q).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        dirs.push((zero.clone(), e.clone()));
        dirs.push((e, zero.clone()));
    }
    for _ in 0..3 {
        let xi: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eta: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        dirs.push((xi, eta));
    }
    let h1 = 1e-4;
    for (xi, eta) in &dirs {
        let p = sol(&shifted(x, h1, xi), &shifted(&zero, h1, eta))?;
        let q = sol(&shifted(x, -h1, xi), &shifted(&zero, -h1, eta))?;
        let du: Vec<f64> = p.u.iter().zip(&q.u).map(|(a, b)| (a - b) / (2.0 * h1)).collect();
        let dv: Vec<f64> = p.v.iter().zip(&q.v).map(|(a, b)| (a - b) / (2.0 * h1)).collect();
        let want_u: Vec<f64> = xi.iter().zip(eta).map(|(a, b)| a + t * b).collect();
        rep.push("u'", max_diff(&du, &want_u));
        rep.push("v'", max_diff(&dv, eta));
    }
    let g = m.christoffel(x)?;
    let h2 = 1e-3;
    for a in 0..dirs.len() {
        for b in a..dirs.len() {
            let (xi1, eta1) = &dirs[a];
            let (xi2, eta2) = &dirs[b];
            let mut uu = vec![0.0; n];
            let mut vv = vec![0.0; n];
            for (s1, s2, sign) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                let xs = shifted(&shifted(x, s1 * h2, xi1), s2 * h2, xi2);
                let ws = shifted(&shifted(&zero, s1 * h2, eta1), s2 * h2, eta2);
                let r = sol(&xs, &ws)?;
                for k in 0..n {
                    uu[k] += sign * r.u[k] / (4.0 * h2 * h2);
                    vv[k] += sign * r.v[k] / (4.0 * h2 * h2);
                }
            }
            let s12 = g.apply(eta1, eta2);
            let s21 = g.apply(eta2, eta1);
            let sym: Vec<f64> = s12.iter().zip(&s21).map(|(p, q)| p + q).collect();
            let want_u: Vec<f64> = sym.iter().map(|s| -t * t / 2.0 * s).collect();
            let want_v: Vec<f64> = sym.iter().map(|s| -t * s).collect();
            rep.push("u''", max_diff(&uu, &want_u));
            rep.push("v''", max_diff(&vv, &want_v));
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples;
    use proptest::prelude::*;

    #[test]
    fn flat_geodesics_are_lines() {
        let m = samples::flat(2);
        let s = geodesic_solve(&m, &[0.1, 0.2], &[1.0, -2.0], 1.0).unwrap();
        assert_eq!(s.u, vec![1.1, -1.8]);
        assert_eq!(exp_map(&m, &[0.0, 0.0], &[0.3, 0.4]).unwrap(), vec![0.3, 0.4]);
    }

    #[test]
    fn zero_velocity_stays_put() {
        let m = samples::half_plane();
        let s = geodesic_solve(&m, &[0.3, 1.2], &[0.0, 0.0], 0.7).unwrap();
        assert_eq!(s.u, vec![0.3, 1.2]);
        assert_eq!(s.v, vec![0.0, 0.0]);
    }

    #[test]
    fn vertical_half_plane_geodesic() {
        let m = samples::half_plane();
        let s = geodesic_solve(&m, &[0.0, 1.0], &[0.0, 1.0], 1.0).unwrap();
        assert!(s.u[0].abs() < 1e-12);
        assert!((s.u[1] - 1f64.exp()).abs() < 1e-7);
        let e = exp_map(&m, &[0.0, 1.0], &[0.0, 2f64.ln()]).unwrap();
        assert!((e[1] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn rk4_step_halving_gains_sixteen() {
        let m = samples::half_plane();
        let err = |h: f64| {
            let s = geodesic_solve_with(&m, &[0.0, 1.0], &[0.0, 1.0], 1.0, StepRule::MaxStep(h)).unwrap();
            (s.u[1] - 1f64.exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio >= 12.0, "ratio {ratio}");
    }

    #[test]
    fn scaling_identity() {
        let m = samples::half_plane();
        let (x, w, t) = ([0.2, 1.1], [0.3, -0.2], 0.8);
        for a in [0.5, 2.0] {
            let lhs = geodesic_solve(&m, &x, &w, a * t).unwrap();
            let aw = [a * w[0], a * w[1]];
            let rhs = geodesic_solve(&m, &x, &aw, t).unwrap();
            assert!(max_diff(&lhs.u, &rhs.u) < 1e-7);
            let av: Vec<f64> = lhs.v.iter().map(|v| a * v).collect();
            assert!(max_diff(&av, &rhs.v) < 1e-7);
        }
    }

    #[test]
    fn log_of_vertical_pair() {
        let m = samples::half_plane();
        let patch = ConvexPatch::new(vec![0.0, 1.5], 0.6).unwrap();
        let w = log_map(&m, &[0.0, 1.0], &[0.0, 2.0], &patch).unwrap();
        assert!(w[0].abs() < 1e-8 && (w[1] - 2f64.ln()).abs() < 1e-8);
        assert_eq!(log_map(&m, &[0.0, 1.0], &[0.0, 1.0], &patch).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            log_map(&m, &[0.0, 1.0], &[0.0, 3.0], &patch),
            Err(Error::PatchViolation { .. })
        ));
    }

    #[test]
    fn metric_is_conserved_along_geodesics() {
        let m = samples::half_plane_from_metric();
        let x = [0.1, 0.8];
        let s = geodesic_solve(&m, &x, &[0.7, 0.4], 1.0).unwrap();
        let energy = |p: &[f64], v: &[f64]| {
            let g = m.metric_at(p).unwrap();
            (v[0] * v[0] * g[(0, 0)] + 2.0 * v[0] * v[1] * g[(0, 1)] + v[1] * v[1] * g[(1, 1)]).sqrt()
        };
        let e0 = energy(&x, &[0.7, 0.4]);
        assert!((energy(&s.u, &s.v) / e0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn jets_on_flat_and_half_plane() {
        let flat = samples::flat(2);
        assert!(jet_check_uv(&flat, &[0.2, 0.3], 1.0, 1).unwrap().max() < 1e-6);
        let hp = samples::half_plane();
        let rep = jet_check_uv(&hp, &[0.0, 1.0], 1.0, 2).unwrap();
        assert!(rep.max() < 1e-4, "{rep:?}");
    }

    #[test]
    fn patch_search_succeeds() {
        let hp = samples::half_plane();
        let p = ConvexPatch::find(&hp, &[0.0, 1.0], 3, StepRule::Fixed(64)).unwrap();
        assert!(p.radius > 0.1 && p.radius <= 0.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn log_inverts_exp(x0 in -0.2f64..0.2, y0 in 0.9f64..1.1, r in 0.0f64..0.35, a in 0.0f64..6.3) {
            let m = samples::half_plane();
            let patch = ConvexPatch::new(vec![0.0, 1.0], 0.5).unwrap();
            let x = [x0, y0];
            let w = [r * a.cos(), r * a.sin()];
            let y = exp_map(&m, &x, &w).unwrap();
            prop_assume!(patch.contains(&y));
            let back = log_map(&m, &x, &y, &patch).unwrap();
            prop_assert!(max_diff(&back, &w) < 1e-8);
        }
    }
}
