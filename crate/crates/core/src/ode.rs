//! Fixed-step classical Runge–Kutta for autonomous systems.

use crate::error::{Error, Result};

/// Hard cap on the number of RK4 steps in a single integration.
pub const MAX_STEPS: usize = 10_000_000;

/// Integrates `y' = f(y)` over `steps` steps of size `h`, in place.
///
/// `check` runs after every step with the step index and current time; it
/// can abort the integration (domain exits, blow-up).
pub fn rk4<F, C>(y: &mut [f64], h: f64, steps: usize, mut f: F, mut check: C) -> Result<()>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
    C: FnMut(usize, f64, &[f64]) -> Result<()>,
{
    if steps > MAX_STEPS {
        return Err(Error::StepLimit {
            steps,
            limit: MAX_STEPS,
        });
    }
    let m = y.len();
    let mut k1 = vec![0.0; m];
    let mut k2 = vec![0.0; m];
    let mut k3 = vec![0.0; m];
    let mut k4 = vec![0.0; m];
    let mut tmp = vec![0.0; m];
    for step in 0..steps {
        f(y, &mut k1)?;
        for i in 0..m {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        f(&tmp, &mut k2)?;
        for i in 0..m {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        f(&tmp, &mut k3)?;
        for i in 0..m {
            tmp[i] = y[i] + h * k3[i];
        }
        f(&tmp, &mut k4)?;
        for i in 0..m {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "ODE state after step {} (t = {})",
                step + 1,
                (step + 1) as f64 * h
            )));
        }
        check(step + 1, (step + 1) as f64 * h, y)?;
    }
    Ok(())
}

/// Number of equal steps of size at most `max_step` covering `|t|`.
pub fn step_count(t: f64, max_step: f64) -> usize {
    if t == 0.0 {
        0
    } else {
        ((t.abs() / max_step).ceil() as usize).max(1)
    }
}
