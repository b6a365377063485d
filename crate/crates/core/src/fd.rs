//! Central differences in a scalar parameter with one Richardson step.

use crate::error::Result;

/// `d/dτ f(τ)` at 0 from central differences at `τ` and `τ/2`,
/// combined as `(4 D(τ/2) − D(τ)) / 3`.
pub fn richardson<F>(mut f: F, tau: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    let central = |f: &mut F, h: f64| -> Result<Vec<f64>> {
        let p = f(h)?;
        let m = f(-h)?;
        Ok(p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * h)).collect())
    };
    let coarse = central(&mut f, tau)?;
    let fine = central(&mut f, 0.5 * tau)?;
    Ok(fine
        .iter()
        .zip(&coarse)
        .map(|(a, b)| (4.0 * a - b) / 3.0)
        .collect())
}

/// Scalar form of [`richardson`].
pub fn richardson_scalar<F>(mut f: F, tau: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    richardson(|t| f(t).map(|v| vec![v]), tau).map(|v| v[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourth_order_accuracy() {
        let d = richardson_scalar(|t| Ok((1.0 + t).exp()), 1e-2).unwrap();
        assert!((d - 1f64.exp()).abs() < 1e-9);
        let p = richardson_scalar(|t| Ok(t.powi(4) + 3.0 * t.powi(3) - t), 0.1).unwrap();
        assert!((p + 1.0).abs() < 1e-12);
    }
}
