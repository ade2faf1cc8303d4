use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Index of the largest entry; ties go to the smaller index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(pred: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("accuracy labels"));
    }
    if pred.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            pred.nrows(),
            labels.len()
        )));
    }
    let hits = pred
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row.as_slice().expect("row-major predictions")) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn one_hot_predictions_are_perfect() {
        let p = array![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        assert_eq!(accuracy(p.view(), &[0, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn ties_go_to_the_smaller_index() {
        let p = Array2::from_elem((4, 2), 0.5);
        assert_eq!(accuracy(p.view(), &[0, 1, 0, 0]).unwrap(), 0.75);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn half_right() {
        let p = array![[0.9, 0.1], [0.2, 0.8], [0.7, 0.3], [0.4, 0.6]];
        assert_eq!(accuracy(p.view(), &[0, 1, 1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn empty_and_misaligned_inputs_fail() {
        let p = Array2::<f64>::zeros((0, 2));
        assert!(matches!(accuracy(p.view(), &[]), Err(Error::Empty(_))));
        let p = array![[1.0, 0.0]];
        assert!(accuracy(p.view(), &[0, 1]).is_err());
    }
}
