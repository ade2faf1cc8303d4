use super::params::Parameters;
use crate::error::{Error, Result};

/// Central finite differences `(f(p + h e_i) - f(p - h e_i)) / 2h` for every
/// coordinate of `params`.
pub fn finite_diff_grad<P, F>(f: F, params: &P, step: f64) -> Result<P>
where
    P: Parameters,
    F: Fn(&P) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        flat[i] = base[i] + step;
        probe.set_flat(&flat)?;
        let up = f(&probe)?;
        flat[i] = base[i] - step;
        probe.set_flat(&flat)?;
        let down = f(&probe)?;
        flat[i] = base[i];
        grad.push((up - down) / (2.0 * step));
    }
    let mut out = params.zeros_like();
    out.set_flat(&grad)?;
    Ok(out)
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂, 1e-12)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error operands differ in length");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    diff / norm(a).max(norm(b)).max(1e-12)
}

/// Largest per-tensor [`relative_error`] between two gradients of the same
/// parameters.
pub fn max_relative_error<P: Parameters>(analytic: &P, numeric: &P) -> f64 {
    analytic
        .tensors()
        .iter()
        .zip(numeric.tensors())
        .map(|(a, n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_diff_grad(|p: &Vec<f64>| Ok(p[0] * p[0]), &vec![3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-9, "{}", g[0]);
    }

    #[test]
    fn linear_is_exact_for_any_step() {
        let f = |p: &Vec<f64>| Ok(2.0 * p[0] - 0.5 * p[1]);
        for step in [1e-3, 0.5, 4.0] {
            let g = finite_diff_grad(f, &vec![1.0, 2.0], step).unwrap();
            assert!((g[0] - 2.0).abs() < 1e-12 && (g[1] + 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_positive_step() {
        assert!(finite_diff_grad(|_: &Vec<f64>| Ok(0.0), &vec![1.0], 0.0).is_err());
    }

    #[test]
    fn relative_error_scales() {
        assert_eq!(relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((relative_error(&[1.0], &[1.1]) - 0.1 / 1.1).abs() < 1e-15);
    }
}
