use crate::error::{Error, Result};

/// A container of real-valued tensors that optimizers and the finite-difference
/// oracle can address as a flat sequence of coordinates.
///
/// Gradients are represented by a value of the same type, so shapes always
/// match the parameters they belong to.
pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<&[f64]>;

    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            flat.extend_from_slice(t);
        }
        flat
    }

    fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, parameters have {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let len = t.len();
            t.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }
}

impl Parameters for Vec<f64> {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }
}

/// A scalar function of parameters with an analytic gradient.
pub trait Objective<P: Parameters> {
    fn value(&self, params: &P) -> Result<f64>;

    fn value_and_grad(&self, params: &P) -> Result<(f64, P)>;
}

/// Evaluates `objective` and its gradient, rejecting non-finite results.
///
/// The error names the offending tensor and coordinate.
pub fn value_and_grad<P, O>(objective: &O, params: &P) -> Result<(f64, P)>
where
    P: Parameters,
    O: Objective<P> + ?Sized,
{
    let (value, grad) = objective.value_and_grad(params)?;
    if !value.is_finite() {
        return Err(Error::numeric("objective value"));
    }
    for (ti, t) in grad.tensors().iter().enumerate() {
        if let Some(i) = t.iter().position(|g| !g.is_finite()) {
            return Err(Error::numeric(format!("gradient tensor {ti}, entry {i}")));
        }
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct HalfSquaredNorm;

    impl Objective<Vec<f64>> for HalfSquaredNorm {
        fn value(&self, p: &Vec<f64>) -> Result<f64> {
            Ok(0.5 * p.iter().map(|v| v * v).sum::<f64>())
        }

        fn value_and_grad(&self, p: &Vec<f64>) -> Result<(f64, Vec<f64>)> {
            Ok((self.value(p)?, p.clone()))
        }
    }

    struct Broken;

    impl Objective<Vec<f64>> for Broken {
        fn value(&self, _: &Vec<f64>) -> Result<f64> {
            Ok(1.0)
        }

        fn value_and_grad(&self, p: &Vec<f64>) -> Result<(f64, Vec<f64>)> {
            let mut g = p.clone();
            g[1] = f64::NAN;
            Ok((1.0, g))
        }
    }

    #[test]
    fn quadratic_gradient_is_params() {
        let p = vec![1.5, -2.0, 0.25];
        let (v, g) = value_and_grad(&HalfSquaredNorm, &p).unwrap();
        assert_eq!(v, 0.5 * (2.25 + 4.0 + 0.0625));
        assert_eq!(g, p);
    }

    #[test]
    fn non_finite_gradient_reports_location() {
        let err = value_and_grad(&Broken, &vec![0.0, 0.0]).unwrap_err();
        match err {
            Error::Numeric { location } => assert!(location.contains("entry 1"), "{location}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut p = vec![1.0, 2.0];
        p.set_flat(&[3.0, 4.0]).unwrap();
        assert_eq!(p.to_flat(), vec![3.0, 4.0]);
        assert!(p.set_flat(&[1.0]).is_err());
        assert_eq!(p.zeros_like(), vec![0.0, 0.0]);
    }
}
