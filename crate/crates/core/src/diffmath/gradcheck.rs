use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `point`.
pub fn finite_diff_gradient<F>(mut f: F, point: &[f64], epsilon: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut p = point.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + epsilon;
        let up = f(&p)?;
        p[i] = orig - epsilon;
        let down = f(&p)?;
        p[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite { op: "finite_diff_gradient" });
        }
        grad.push((up - down) / (2.0 * epsilon));
    }
    Ok(grad)
}

/// Largest `|a-b| / max(|a|, |b|, floor)` over paired entries.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_diff_gradient(|p| Ok(p[0] * p[0]), &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_is_zero() {
        let g = finite_diff_gradient(|_| Ok(4.2), &[1.0, -2.0, 0.5], 1e-5).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn rejects_bad_epsilon_and_nan() {
        assert!(finite_diff_gradient(|p| Ok(p[0]), &[1.0], 0.0).is_err());
        assert!(matches!(
            finite_diff_gradient(|_| Ok(f64::NAN), &[1.0], 1e-5),
            Err(Error::NonFinite { .. })
        ));
    }
}
