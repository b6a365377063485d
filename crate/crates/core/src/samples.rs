//! Ready-made manifolds and fields used by tests, the CLI and the guide.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{BoxDomain, ChartManifold, Expr, Metric, VectorFieldExpr};

fn num(v: f64) -> Expr {
    Expr::Num(v)
}

fn var(i: usize) -> Expr {
    Expr::Var(i)
}

fn mul(a: Expr, b: Expr) -> Expr {
    Expr::Mul(Box::new(a), Box::new(b))
}

fn add(a: Expr, b: Expr) -> Expr {
    Expr::Add(Box::new(a), Box::new(b))
}

fn div(a: Expr, b: Expr) -> Expr {
    Expr::Div(Box::new(a), Box::new(b))
}

/// Flat `ℝⁿ` on the box `(−10, 10)ⁿ`.
pub fn flat(n: usize) -> ChartManifold {
    ChartManifold::flat(BoxDomain::new(vec![-10.0; n], vec![10.0; n]).expect("box"))
}

fn half_plane_domain() -> BoxDomain {
    BoxDomain::new(vec![-10.0, 0.0], vec![10.0, 10.0]).expect("box")
}

fn half_plane_metric() -> Metric {
    let g = div(num(1.0), Expr::Pow(Box::new(var(1)), 2));
    Metric::Exprs(vec![g.clone(), num(0.0), num(0.0), g])
}

/// Hyperbolic upper half-plane `g = y⁻² δ` with exact Christoffel symbols
/// `Γ¹₁₂ = Γ¹₂₁ = −1/y`, `Γ²₁₁ = 1/y`, `Γ²₂₂ = −1/y`.
pub fn half_plane() -> ChartManifold {
    let inv_y = || div(num(1.0), var(1));
    let neg_inv_y = || div(num(-1.0), var(1));
    ChartManifold::from_christoffel_entries(
        half_plane_domain(),
        vec![
            ((0, 0, 1), neg_inv_y()),
            ((0, 1, 0), neg_inv_y()),
            ((1, 0, 0), inv_y()),
            ((1, 1, 1), neg_inv_y()),
        ],
        Some(half_plane_metric()),
    )
    .expect("half-plane")
}

/// Half-plane with Christoffels derived from the metric by finite differences.
pub fn half_plane_from_metric() -> ChartManifold {
    ChartManifold::from_metric(half_plane_domain(), half_plane_metric())
}

/// Round sphere in polar coordinates `(θ, φ)`, `g = diag(1, sin²θ)`, on
/// `θ ∈ (0.2, 1.4)`, `φ ∈ (−0.5, 6.8)`.
pub fn sphere_chart() -> ChartManifold {
    let s = Expr::Call(crate::geometry::Func::Sin, Box::new(var(0)));
    let c = Expr::Call(crate::geometry::Func::Cos, Box::new(var(0)));
    let cot = div(c.clone(), s.clone());
    ChartManifold::from_christoffel_entries(
        BoxDomain::new(vec![0.2, -0.5], vec![1.4, 6.8]).expect("box"),
        vec![
            ((0, 1, 1), Expr::Neg(Box::new(mul(s.clone(), c)))),
            ((1, 0, 1), cot.clone()),
            ((1, 1, 0), cot),
        ],
        Some(Metric::Exprs(vec![
            num(1.0),
            num(0.0),
            num(0.0),
            Expr::Pow(Box::new(s), 2),
        ])),
    )
    .expect("sphere")
}

/// One-dimensional manifold with `Γ(x) = 0.5 x + 0.3` on `(−2, 2)`.
pub fn curved_1d() -> ChartManifold {
    ChartManifold::from_christoffel_entries(
        BoxDomain::new(vec![-2.0], vec![2.0]).expect("box"),
        vec![((0, 0, 0), add(mul(num(0.5), var(0)), num(0.3)))],
        None,
    )
    .expect("curved line")
}

/// All monomials of total degree `≤ degree` in `n` variables.
fn monomials(n: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; n]];
    for _ in 0..degree {
        let mut next = Vec::new();
        for m in &out {
            for i in 0..n {
                let mut e = m.clone();
                e[i] += 1;
                if !next.contains(&e) && !out.contains(&e) {
                    next.push(e);
                }
            }
        }
        out.extend(next);
    }
    out
}

/// Polynomial of total degree `≤ degree` with coefficients uniform in `[−scale, scale]`.
pub fn random_polynomial(rng: &mut ChaCha8Rng, n: usize, degree: usize, scale: f64) -> Expr {
    let mut acc: Option<Expr> = None;
    for m in monomials(n, degree) {
        let mut term = num(rng.gen_range(-scale..scale));
        for (i, &e) in m.iter().enumerate() {
            if e > 0 {
                term = mul(term, Expr::Pow(Box::new(var(i)), e as i32));
            }
        }
        acc = Some(match acc {
            None => term,
            Some(a) => add(a, term),
        });
    }
    acc.unwrap_or(num(0.0))
}

/// Symmetric Christoffel symbols with random polynomial entries of degree
/// `≤ 2` and coefficients in `[−1, 1]`, on `(−1, 1)ⁿ`.
pub fn random_polynomial_manifold(n: usize, seed: u64) -> ChartManifold {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for k in 0..n {
        for i in 0..n {
            for j in i..n {
                let e = random_polynomial(&mut rng, n, 2, 1.0);
                if i != j {
                    entries.push(((k, j, i), e.clone()));
                }
                entries.push(((k, i, j), e));
            }
        }
    }
    ChartManifold::from_christoffel_entries(
        BoxDomain::new(vec![-1.0; n], vec![1.0; n]).expect("box"),
        entries,
        None,
    )
    .expect("random manifold")
}

/// Vector field with random polynomial components.
pub fn random_polynomial_field(n: usize, degree: usize, seed: u64) -> VectorFieldExpr {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps = (0..n).map(|_| random_polynomial(&mut rng, n, degree, 1.0)).collect();
    VectorFieldExpr::new(comps).expect("polynomial field")
}
