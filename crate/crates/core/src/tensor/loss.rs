use super::{Scalar, Tensor4};
use crate::error::{Error, Result};

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits, `(softmax - onehot) / n`.
///
/// `logits` must be `(n, classes, 1, 1)`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor4<T>,
    labels: &[usize],
) -> Result<(T, Tensor4<T>)> {
    let [n, classes, h, w] = logits.dims();
    if h != 1 || w != 1 {
        return Err(Error::Shape(format!(
            "logits must be (n, C, 1, 1), got {:?}",
            logits.dims()
        )));
    }
    if n == 0 || labels.len() != n {
        return Err(Error::Validation(format!(
            "{} labels for a batch of {n} logits",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Validation(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let scale = T::one() / T::from_f64(n as f64);
    let mut grad = Tensor4::zeros(logits.dims());
    let mut total = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * classes..(i + 1) * classes];
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let sum_exp = row.iter().fold(T::zero(), |s, &v| s + (v - max).exp());
        let log_z = max + sum_exp.ln();
        total = total + (log_z - row[label]);
        let g = &mut grad.data_mut()[i * classes..(i + 1) * classes];
        for (c, (gc, &v)) in g.iter_mut().zip(row).enumerate() {
            let p = (v - log_z).exp();
            let target = if c == label { T::one() } else { T::zero() };
            *gc = (p - target) * scale;
        }
    }
    Ok((total * scale, grad))
}

/// Row-wise softmax of `(n, C, 1, 1)` logits.
pub(crate) fn softmax_rows<T: Scalar>(logits: &Tensor4<T>) -> Vec<Vec<T>> {
    let classes = logits.c();
    logits
        .data()
        .chunks(classes)
        .map(|row| {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
            let sum = exps.iter().fold(T::zero(), |s, &v| s + v);
            exps.into_iter().map(|e| e / sum).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(rows: &[&[f64]]) -> Tensor4<f64> {
        let c = rows[0].len();
        Tensor4::from_vec([rows.len(), c, 1, 1], rows.concat()).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_classes() {
        let (loss, _) = softmax_cross_entropy(&logits(&[&[0.3; 5]]), &[2]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        assert!((loss - 1.60944).abs() < 1e-5);
    }

    #[test]
    fn saturated_correct_class_has_tiny_loss() {
        let (loss, _) = softmax_cross_entropy(&logits(&[&[1000.0, 0.0, 0.0]]), &[0]).unwrap();
        assert!((0.0..1e-6).contains(&loss));
    }

    #[test]
    fn two_class_scalar_case() {
        let (loss, grad) = softmax_cross_entropy(&logits(&[&[1.0, 0.0]]), &[0]).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.31326).abs() < 1e-5);
        // gradient rows sum to zero
        assert!((grad.data()[0] + grad.data()[1]).abs() < 1e-15);
    }

    #[test]
    fn gradient_is_mean_of_softmax_minus_onehot() {
        let l = logits(&[&[0.5, -1.0, 2.0], &[0.0, 0.0, 0.0]]);
        let (_, grad) = softmax_cross_entropy(&l, &[2, 0]).unwrap();
        let probs = softmax_rows(&l);
        assert!((grad.data()[2] - (probs[0][2] - 1.0) / 2.0).abs() < 1e-15);
        assert!((grad.data()[3] - (1.0 / 3.0 - 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let err = softmax_cross_entropy(&logits(&[&[0.0, 1.0]]), &[2]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }
}
