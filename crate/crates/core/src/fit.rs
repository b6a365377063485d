//! Least-squares slopes of `log error` against `log ε`.

/// Result of a log-log fit. `slope` is `None` when fewer than two points lie
/// above the noise floor.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub slope: Option<f64>,
    /// Number of points used by the fit.
    pub used: usize,
    /// Slope between consecutive points; `None` where either is at the floor.
    pub running: Vec<Option<f64>>,
    /// True when at least one point was at or below the floor.
    pub at_floor: bool,
}

impl SlopeFit {
    /// `slope ≥ threshold`, or every point at the noise floor when
    /// `floor_passes` is set.
    pub fn passes(&self, threshold: f64, floor_passes: bool) -> bool {
        match self.slope {
            Some(s) => s >= threshold,
            None => floor_passes && self.at_floor,
        }
    }
}

/// Fits `err ≈ C εᵖ` and returns `p`, ignoring points with `err ≤ floor`.
///
/// ```
/// use gtf_core::fit::loglog_slope;
///
/// let eps = [0.1, 0.05, 0.025];
/// let err: Vec<f64> = eps.iter().map(|e: &f64| 3.0 * e.powi(2)).collect();
/// let fit = loglog_slope(&eps, &err, 1e-14);
/// assert!((fit.slope.unwrap() - 2.0).abs() < 1e-12);
/// ```
pub fn loglog_slope(eps: &[f64], err: &[f64], floor: f64) -> SlopeFit {
    let ok: Vec<bool> = err.iter().map(|e| e.is_finite() && *e > floor).collect();
    let pts: Vec<(f64, f64)> = eps
        .iter()
        .zip(err)
        .zip(&ok)
        .filter(|(_, k)| **k)
        .map(|((e, r), _)| (e.ln(), r.ln()))
        .collect();
    let running = (0..eps.len())
        .map(|i| {
            (i > 0 && ok[i] && ok[i - 1])
                .then(|| (err[i].ln() - err[i - 1].ln()) / (eps[i].ln() - eps[i - 1].ln()))
        })
        .collect();
    let slope = (pts.len() >= 2).then(|| {
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    });
    SlopeFit {
        slope,
        used: pts.len(),
        running,
        at_floor: ok.iter().any(|k| !k),
    }
}

/// One value per `ε` with its error against a reference and the fitted rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub eps: Vec<f64>,
    pub value: Vec<f64>,
    pub error: Vec<f64>,
    pub fit: SlopeFit,
}

impl Sweep {
    /// Fits the errors with the given noise floor.
    pub fn new(eps: Vec<f64>, value: Vec<f64>, error: Vec<f64>, floor: f64) -> Sweep {
        let fit = loglog_slope(&eps, &error, floor);
        Sweep { eps, value, error, fit }
    }
}

/// `start, start·factor, …` down to `stop` (inclusive within rounding).
pub fn geometric_grid(start: f64, stop: f64, factor: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut e = start;
    while e >= stop * (1.0 - 1e-12) && out.len() < 200 {
        out.push(e);
        e *= factor;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn floor_points_are_dropped() {
        let eps = [0.1, 0.05, 0.025, 0.0125];
        let err = [1e-2, 2.5e-3, 1e-20, 1e-20];
        let fit = loglog_slope(&eps, &err, 1e-15);
        assert_eq!(fit.used, 2);
        assert!(fit.at_floor);
        assert!((fit.slope.unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(fit.running[2], None);
        let none = loglog_slope(&eps, &[0.0; 4], 1e-15);
        assert!(none.slope.is_none() && none.passes(1.0, true) && !none.passes(1.0, false));
    }

    #[test]
    fn grid_is_geometric() {
        let g = geometric_grid(0.125, 0.125 / 16.0, 0.5);
        assert_eq!(g.len(), 5);
        assert_eq!(g[4], 0.125 / 16.0);
    }

    proptest! {
        #[test]
        fn power_laws_are_recovered(p in 0.5f64..5.0, c in 0.01f64..100.0) {
            let eps = geometric_grid(0.25, 0.25f64 / 64.0, 0.5);
            let err: Vec<f64> = eps.iter().map(|e| c * e.powf(p)).collect();
            let fit = loglog_slope(&eps, &err, 0.0);
            prop_assert!((fit.slope.unwrap() - p).abs() < 1e-9);
        }
    }
}
