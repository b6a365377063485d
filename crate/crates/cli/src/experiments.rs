//! The five experiments behind the subcommands.

use std::path::Path;
use std::sync::Arc;

use gtf_core::calculus::{
    commutator_residual, connection_mismatch_residual, homothety_commutation, killing_defect, second_order_fd,
    second_order_formula, Verdict,
};
use gtf_core::density::{integrate, Density, WindowDensity};
use gtf_core::distributions::{parse_distributions, ExprField, TensorDistribution, TensorField, TestObject};
use gtf_core::embedding::{iota_vs_sigma, weak_convergence_test, InjectivityReport};
use gtf_core::geodesics::{jet_check_uv, ConvexPatch, StepRule};
use gtf_core::geometry::{parse_manifold, BoxDomain, ChartManifold, Diffeo, DiffeoExpr, VectorFieldExpr};
use gtf_core::mollifiers::{build_radial_mollifier, kernel_order_test, sphere_area, SmoothingKernel};
use gtf_core::quadrature::{integrate_adaptive, QuadRule};
use gtf_core::tensor::TensorValue;
use gtf_core::transport::{holonomy, jet_check_transport, TransportOperator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, ExperimentConfig};
use crate::report::Report;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Compute(#[from] gtf_core::Error),
}

type Result<T> = std::result::Result<T, RunError>;

fn invalid(msg: impl Into<String>) -> RunError {
    RunError::Config(ConfigError::Invalid(msg.into()))
}

/// Transports in curved charts use this many RK4 steps.
const STEPS: usize = 32;

pub fn load_manifold(path: &Path) -> Result<ChartManifold> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_manifold(&text).map_err(|source| {
        ConfigError::Parse {
            path: path.display().to_string(),
            source,
        }
        .into()
    })
}

fn load_distribution(cfg: &ExperimentConfig, dim: usize) -> Result<Arc<TensorDistribution>> {
    let read = |path: &Path| -> Result<_> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        parse_distributions(&text, dim).map_err(|source| {
            ConfigError::Parse {
                path: path.display().to_string(),
                source,
            }
            .into()
        })
    };
    if let Some(path) = &cfg.dist {
        let file = read(path)?;
        let found = match &cfg.field {
            Some(name) => file.get(name),
            None => file.main(),
        };
        return found
            .cloned()
            .ok_or_else(|| invalid(format!("{}: no distribution '{}'", path.display(), cfg.field.clone().unwrap_or_default())));
    }
    let name = cfg.field.as_ref().ok_or_else(|| invalid("need --dist or --field"))?;
    let direct = Path::new(name);
    let path = if direct.is_file() {
        direct.to_path_buf()
    } else {
        let dir = cfg.manifold.as_ref().and_then(|m| m.parent()).unwrap_or(Path::new("."));
        dir.join(format!("{name}.df"))
    };
    if !path.is_file() {
        return Err(invalid(format!("cannot find distribution '{name}'")));
    }
    read(&path)?.main().cloned().ok_or_else(|| invalid(format!("{}: empty", path.display())))
}

fn variable_index(name: &str, n: usize) -> Option<usize> {
    let i = match name {
        "x" => 0,
        "y" => 1,
        "z" => 2,
        _ => name.strip_prefix('x')?.parse::<usize>().ok()?.checked_sub(1)?,
    };
    (i < n).then_some(i)
}

/// Splits at `sep` outside brackets.
fn split_top(s: &str, sep: char) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut depth = 0;
    for c in s.chars() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            _ => {}
        }
        if c == sep && depth == 0 {
            out.push(String::new());
        } else {
            out.last_mut().expect("nonempty").push(c);
        }
    }
    out
}

/// `X=d/dx`, `X=y*d/dx + d/dy`, or `X=[y, -x]`; the name is optional.
pub fn parse_vector(spec: &str, n: usize) -> Result<VectorFieldExpr> {
    let body = match spec.split_once('=') {
        Some((name, rest)) if name.trim().chars().all(char::is_alphanumeric) => rest.trim(),
        _ => spec.trim(),
    };
    let bad = |why: &str| invalid(format!("bad vector field '{spec}': {why}"));
    let comps: Vec<String> = if let Some(inner) = body.strip_prefix('[') {
        let inner = inner.strip_suffix(']').ok_or_else(|| bad("missing ']'"))?;
        split_top(inner, ',').into_iter().map(|c| c.trim().to_string()).collect()
    } else {
        let mut comps = vec![Vec::<String>::new(); n];
        for term in split_top(body, '+') {
            let term = term.trim();
            let (coef, var) = match term.rsplit_once("d/d") {
                Some((c, v)) => (c.trim().trim_end_matches('*').trim(), v.trim()),
                None => return Err(bad("terms look like 'c*d/dx'")),
            };
            let i = variable_index(var, n).ok_or_else(|| bad(&format!("unknown coordinate '{var}'")))?;
            comps[i].push(if coef.is_empty() { "1".into() } else { format!("({coef})") });
        }
        comps
            .into_iter()
            .map(|c| if c.is_empty() { "0".into() } else { c.join(" + ") })
            .collect()
    };
    if comps.len() != n {
        return Err(bad(&format!("expected {n} components")));
    }
    let refs: Vec<&str> = comps.iter().map(String::as_str).collect();
    VectorFieldExpr::parse(&refs).map_err(|e| bad(&e.to_string()))
}

/// Manifold, transport operator and evaluation points.
pub struct Setup {
    pub manifold: ChartManifold,
    pub transport: Arc<TransportOperator>,
    pub center: Vec<f64>,
    pub radius: f64,
    pub points: Vec<Vec<f64>>,
}

impl Setup {
    /// Grid points lie within `radius/4` of the centre; every point must keep
    /// `margin` inside both the patch and the domain.
    pub fn new(cfg: &ExperimentConfig, margin: f64) -> Result<Self> {
        let path = cfg.manifold.as_ref().ok_or_else(|| invalid("--manifold is required"))?;
        let m = load_manifold(path)?;
        let n = m.dim();
        let dom = m.domain();
        let center = match &cfg.center {
            Some(c) if c.len() != n => return Err(invalid(format!("center needs {n} coordinates"))),
            Some(c) => c.clone(),
            None => dom.lo.iter().zip(&dom.hi).map(|(a, b)| mid(*a, *b)).collect(),
        };
        if !dom.contains(&center) {
            return Err(invalid("center lies outside the domain"));
        }
        let radius = cfg.radius.unwrap_or_else(|| (0.5 * dom.distance_to_boundary(&center)).min(0.5));
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut points = vec![center.clone()];
        for _ in 1..cfg.grid {
            points.push(center.iter().map(|c| c + rng.gen_range(-0.25..0.25) * radius / (n as f64).sqrt()).collect());
        }
        for p in &points {
            let off = dist(p, &center);
            if off + margin > radius || dom.distance_to_boundary(p) < margin {
                return Err(invalid(format!(
                    "grid point {p:?} is not interior by the kernel support {margin} (patch radius {radius})"
                )));
            }
        }
        let transport = TransportOperator::new(m.clone(), ConvexPatch::new(center.clone(), radius)?)?
            .with_step_rule(StepRule::Fixed(STEPS));
        Ok(Setup {
            manifold: m,
            transport: Arc::new(transport),
            center,
            radius,
            points,
        })
    }

    fn kernel(&self, q: usize) -> Result<SmoothingKernel> {
        Ok(SmoothingKernel::new(build_radial_mollifier(self.manifold.dim(), q, 1.0)?, self.manifold.domain().clone())?)
    }
}

/// Midpoint of a coordinate interval, staying finite for unbounded sides.
fn mid(a: f64, b: f64) -> f64 {
    match (a.is_finite(), b.is_finite()) {
        (true, true) => 0.5 * (a + b),
        (true, false) => a + 1.0,
        (false, true) => b - 1.0,
        (false, false) => 0.0,
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn fmt_slope(s: Option<f64>) -> String {
    s.map(|v| format!("{v:.3}")).unwrap_or_else(|| "floor".into())
}

pub fn geodesic(cfg: &ExperimentConfig) -> Result<Report> {
    let setup = Setup::new(cfg, 0.0)?;
    let mut rep = Report::new("geodesic", cfg.seed);
    let mut worst: f64 = 0.0;
    for (i, p) in setup.points.iter().enumerate() {
        for t in [0.25, 0.5, 1.0] {
            let r = jet_check_uv(&setup.manifold, p, t, cfg.seed + i as u64)?;
            for (name, v) in &r.entries {
                rep.point(&format!("uv/{name}/p{i}/t{t}"), *v, *v);
            }
            worst = worst.max(r.max());
        }
    }
    rep.check("geodesic-jets", worst < 1e-4, format!("max residual {worst:.3e} (< 1e-4)"), None);
    Ok(rep)
}

pub fn transport(cfg: &ExperimentConfig) -> Result<Report> {
    let setup = Setup::new(cfg, 0.0)?;
    let m = &setup.manifold;
    let mut rep = Report::new("transport", cfg.seed);
    let mut worst: f64 = 0.0;
    for (i, p) in setup.points.iter().enumerate() {
        let r = jet_check_transport(m, p, cfg.seed + i as u64)?;
        for (name, v) in &r.entries {
            rep.point(&format!("jet/{name}/p{i}"), *v, *v);
        }
        worst = worst.max(r.max());
    }
    rep.check("transport-jets", worst < 1e-3, format!("max residual {worst:.3e} (< 1e-3)"), None);
    if m.dim() == 2 {
        let r = 0.5 * setup.radius;
        let verts: Vec<Vec<f64>> = (0..=3)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * (k % 3) as f64 / 3.0;
                vec![setup.center[0] + r * a.cos(), setup.center[1] + r * a.sin()]
            })
            .collect();
        let z0 = [1.0, 0.0];
        let z = holonomy(m, &verts, &z0)?;
        let g = m.metric_at(&verts[0]);
        let ip = |a: &[f64], b: &[f64]| match &g {
            Some(g) => (0..2).map(|i| (0..2).map(|j| a[i] * g[(i, j)] * b[j]).sum::<f64>()).sum::<f64>(),
            None => a[0] * b[0] + a[1] * b[1],
        };
        let cos = ip(&z, &z0) / (ip(&z, &z).sqrt() * ip(&z0, &z0).sqrt());
        let angle = cos.clamp(-1.0, 1.0).acos();
        rep.point("holonomy-angle", angle, 0.0);
        rep.value("holonomy_angle", angle);
    }
    Ok(rep)
}

pub fn kernel(cfg: &ExperimentConfig) -> Result<Report> {
    let n = match (&cfg.manifold, cfg.dim) {
        (_, Some(n)) => n,
        (Some(p), None) => load_manifold(p)?.dim(),
        (None, None) => 1,
    };
    if n == 0 {
        return Err(invalid("dim must be positive"));
    }
    let q = cfg.order;
    let mut rep = Report::new("kernel", cfg.seed);
    let moll = build_radial_mollifier(n, q, 1.0)?;
    let ni = n as i32;
    let mut residuals = Vec::new();
    for j in 0..=q {
        let got = integrate_adaptive(
            |r| r.powi(j as i32) * moll.profile(r.powi(ni)) * n as f64 * r.powi(ni - 1),
            0.0,
            moll.support_radius(),
            1e-14,
            4000,
        )?;
        let want = if j == 0 { n as f64 / sphere_area(n) } else { 0.0 };
        rep.point(&format!("moment/{j}"), got, (got - want).abs());
        residuals.push((got - want).abs());
    }
    let domain = BoxDomain::new(vec![-10.0; n], vec![10.0; n])?;
    let ker = SmoothingKernel::new(moll, domain)?;
    let rule = QuadRule::default();
    let mass = integrate(&ker.density(cfg.eps[0], &vec![0.0; n])?, &rule, |_| Ok(1.0))?;
    rep.point("mass", mass, (mass - 1.0).abs());
    residuals.push((mass - 1.0).abs());
    let worst = residuals.iter().fold(0.0f64, |a, b| a.max(*b));
    rep.value("moment_residuals", &residuals);
    rep.check("moments", worst < 1e-10, format!("max residual {worst:.3e} (< 1e-10)"), None);

    let x: Vec<f64> = (0..n).map(|i| 0.1 * (i + 1) as f64).collect();
    let f = |y: &[f64]| (0.5 * y[0]).exp() * y[1..].iter().map(|v| v.cos()).product::<f64>();
    let s = kernel_order_test(&ker, f, &x, &cfg.eps, &rule)?;
    rep.sweep("order", &s);
    let want = q as f64 + 0.8;
    rep.check(
        "kernel-order",
        s.fit.passes(want, true),
        format!("slope {} (≥ {want})", fmt_slope(s.fit.slope)),
        s.fit.slope,
    );
    Ok(rep)
}

/// Dual test field with components `1 + x/2`.
fn dual_test_field(t: &TensorDistribution, n: usize) -> Result<Arc<dyn TensorField>> {
    let rank = t.rank().dual();
    let comps = vec!["1 + 0.5*x1"; rank.components(n)];
    Ok(Arc::new(ExprField::parse(rank, n, &comps)?))
}

pub fn embed(cfg: &ExperimentConfig) -> Result<Report> {
    let eps0 = cfg.eps[0];
    let setup = Setup::new(cfg, eps0)?;
    let n = setup.manifold.dim();
    let t = load_distribution(cfg, n)?;
    let k = setup.kernel(cfg.order)?;
    let rule = QuadRule::default();
    let mut rep = Report::new("embed", cfg.seed);

    if let TensorDistribution::Regular(field) = t.as_ref() {
        let s = iota_vs_sigma(field.clone(), &setup.transport, &k, &setup.points, &cfg.eps, &rule)?;
        rep.sweep("iota-sigma", &s);
        let want = cfg.order as f64 + 0.8;
        rep.check(
            "iota-vs-sigma",
            s.fit.passes(want, true),
            format!("slope {} (≥ {want})", fmt_slope(s.fit.slope)),
            s.fit.slope,
        );
    }

    let half = 0.9 * (setup.radius / (n as f64).sqrt() - eps0);
    if half <= 0.0 {
        return Err(invalid(format!("patch radius {} leaves no room for a test window", setup.radius)));
    }
    let window: Arc<dyn Density> = Arc::new(WindowDensity::new(setup.center.clone(), vec![half; n], 1.0)?);
    let xi = TestObject::new(dual_test_field(&t, n)?, window)?;
    // the window is smooth and both sides of the comparison share the outer nodes
    let outer = QuadRule {
        per_axis: 12,
        ..QuadRule::default()
    };
    let s = weak_convergence_test(&t, &setup.transport, &k, &xi, &cfg.eps, &outer)?;
    rep.sweep("weak", &s);
    rep.check(
        "weak-convergence",
        s.fit.passes(0.8, true),
        format!("slope {} (≥ 0.8)", fmt_slope(s.fit.slope)),
        s.fit.slope,
    );

    let inj = InjectivityReport::from_sweep(t.pair(&xi, &outer)?, s)?;
    rep.value("injectivity_target", inj.target);
    rep.value("injectivity_limit", inj.limit);
    rep.check(
        "injectivity",
        inj.separates,
        format!("limit {:.6e} vs pairing {:.6e}", inj.limit, inj.target),
        None,
    );
    Ok(rep)
}

pub fn commute(cfg: &ExperimentConfig) -> Result<Report> {
    let support = cfg.eps[0];
    let setup = Setup::new(cfg, support)?;
    let m = &setup.manifold;
    let n = m.dim();
    let t = load_distribution(cfg, n)?;
    let spec = cfg.vector.as_deref().ok_or_else(|| invalid("--vector is required"))?;
    let x = Arc::new(parse_vector(spec, n)?);
    let k = setup.kernel(cfg.order)?;
    let rule = QuadRule::default();
    let v = TensorValue::basis(t.rank().dual(), n, 0);
    let p = setup.center.clone();
    let mut rep = Report::new("commute", cfg.seed);

    if m.metric().is_some() {
        let defect = killing_defect(m, &x, &setup.points)?;
        rep.value("killing_defect", defect);
    }
    let c = commutator_residual(&t, &setup.transport, &x, &k, &v, &p, &cfg.eps, &rule)?;
    rep.sweep("commutator", &c.sweep);
    for (i, e) in c.sweep.eps.iter().enumerate() {
        rep.rows.push(crate::report::Row {
            series: "lie-term".into(),
            epsilon: Some(*e),
            value: c.lie_term[i],
            error: c.mismatch[i],
            slope_running: None,
        });
    }
    rep.value("verdict", c.verdict.to_string());
    rep.check(
        "commutator",
        c.verdict != Verdict::Inconclusive && c.formula_agrees,
        format!(
            "verdict {}, slope {}, closed form {}",
            c.verdict,
            fmt_slope(c.sweep.fit.slope),
            if c.formula_agrees { "agrees" } else { "disagrees" }
        ),
        c.sweep.fit.slope,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fd = second_order_fd(&setup.transport, &x, &y, &z, &p)?;
        let formula = second_order_formula(m, &x, &y, &z, &p)?;
        let dev = fd.iter().zip(&formula).fold(0.0f64, |a, (u, w)| a.max((u - w).abs()));
        rep.point(&format!("second-order/{i}"), formula[0], dev);
        worst = worst.max(dev);
    }
    rep.check("second-order", worst < 2e-3, format!("max deviation {worst:.3e} (< 2e-3)"), None);

    if let Some(path) = &cfg.compare {
        let other = load_manifold(path)?;
        if other.dim() != n {
            return Err(invalid("--compare manifold has a different dimension"));
        }
        let a2 = Arc::new(
            TransportOperator::new(other, setup.transport.patch().clone())?.with_step_rule(StepRule::Fixed(STEPS)),
        );
        let r = connection_mismatch_residual(&t, &setup.transport, &a2, &x, &k, &v, &p, &cfg.eps, &rule)?;
        rep.sweep("mismatch", &r.sweep);
        let dev = r.max_deviation();
        rep.check("connection-mismatch", dev < 2e-4, format!("max deviation {dev:.3e} (< 2e-4)"), None);
    }

    if let Some(spec) = &cfg.homothety {
        let (fwd, inv) = spec.split_once('|').ok_or_else(|| invalid("homothety needs 'forward | inverse'"))?;
        let f: Vec<String> = split_top(fwd, ',').into_iter().map(|s| s.trim().to_string()).collect();
        let g: Vec<String> = split_top(inv, ',').into_iter().map(|s| s.trim().to_string()).collect();
        let fr: Vec<&str> = f.iter().map(String::as_str).collect();
        let gr: Vec<&str> = g.iter().map(String::as_str).collect();
        let mu: Arc<dyn Diffeo> = Arc::new(
            DiffeoExpr::parse(&fr, &gr, &setup.points).map_err(|e| invalid(format!("homothety: {e}")))?,
        );
        let h = homothety_commutation(mu, &t, &setup.transport, &k, &v, &setup.points, &cfg.eps, &rule)?;
        rep.sweep("homothety", &h.sweep);
        let worst = h.sweep.error.iter().fold(0.0f64, |a, b| a.max(*b));
        rep.check(
            "homothety",
            h.sweep.fit.passes(0.8, true) || worst < 1e-8,
            format!("slope {}, max residual {worst:.3e}", fmt_slope(h.sweep.fit.slope)),
            h.sweep.fit.slope,
        );
    }
    Ok(rep)
}
