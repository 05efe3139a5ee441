use ndarray::{Array2, ArrayView2};

use super::Real;
use crate::error::{Error, Result};

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Numerically stable softmax applied to each row in place.
pub fn softmax_rows<F: Real>(z: &mut Array2<F>) {
    for mut row in z.rows_mut() {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

fn check_onehot<F: Real>(onehot: &[F]) -> Result<usize> {
    let mut hot = None;
    for (k, &v) in onehot.iter().enumerate() {
        if v == F::one() {
            if hot.is_some() {
                return Err(Error::Label("more than one hot component".into()));
            }
            hot = Some(k);
        } else if v != F::zero() {
            return Err(Error::Label(format!("one-hot component {k} is {v}")));
        }
    }
    hot.ok_or_else(|| Error::Label("no hot component".into()))
}

/// `-sum_k onehot_k * ln(max(p_k, 1e-12))`.
pub fn cross_entropy<F: Real>(probs: &[F], onehot: &[F]) -> Result<F> {
    if probs.len() != onehot.len() {
        return Err(Error::Dimension(format!(
            "{} probabilities vs {} labels",
            probs.len(),
            onehot.len()
        )));
    }
    let k = check_onehot(onehot)?;
    Ok(-probs[k].max(F::lit(PROB_FLOOR)).ln())
}

/// Mean cross-entropy over the rows of a batch.
pub fn batch_cross_entropy<F: Real>(probs: ArrayView2<F>, onehots: ArrayView2<F>) -> Result<F> {
    if probs.dim() != onehots.dim() || probs.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "probabilities {:?} vs labels {:?}",
            probs.dim(),
            onehots.dim()
        )));
    }
    let mut total = F::zero();
    for (p, y) in probs.rows().into_iter().zip(onehots.rows()) {
        total += cross_entropy(&p.to_vec(), &y.to_vec())?;
    }
    Ok(total / F::lit(probs.nrows() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_is_zero() {
        assert_eq!(
            cross_entropy(&[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(),
            0.0
        );
    }

    #[test]
    fn uniform_is_ln3() {
        let p = [1.0 / 3.0; 3];
        for k in 0..3 {
            let mut y = [0.0; 3];
            y[k] = 1.0;
            let l: f64 = cross_entropy(&p, &y).unwrap();
            assert!((l - 3f64.ln()).abs() < 1e-12);
            assert!((l - 1.0986).abs() < 1e-4);
        }
    }

    #[test]
    fn direct_evaluation() {
        let l: f64 = cross_entropy(&[0.7, 0.2, 0.1], &[1.0, 0.0, 0.0]).unwrap();
        assert!((l - 0.3567).abs() < 1e-4);
        assert_eq!(l, -(0.7f64.ln()));
    }

    #[test]
    fn clamps_zero_probability() {
        let l: f64 = cross_entropy(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        assert!((l - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_labels() {
        let p = [0.2, 0.3, 0.5];
        assert!(cross_entropy(&p, &[1.0, 1.0, 0.0]).is_err());
        assert!(cross_entropy(&p, &[0.0, 0.0, 0.0]).is_err());
        assert!(cross_entropy(&p, &[0.5, 0.5, 0.0]).is_err());
    }
}
