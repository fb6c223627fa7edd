use super::{NnError, Tensor};

/// Squared error summed per sample, divided by `normalizer`, averaged over
/// the batch (leading dimension; 1-D tensors count as one sample).
///
/// Returns the loss and its gradient with respect to `pred`.
pub fn mse_loss(pred: &Tensor, target: &Tensor, normalizer: usize) -> Result<(f64, Tensor), NnError> {
    target.expect_shape(pred.shape(), "mse target")?;
    let batch = if pred.shape().len() >= 2 { pred.batch() } else { 1 };
    let scale = 1.0 / (normalizer.max(1) * batch.max(1)) as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut total = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let diff = p - t;
        total += diff * diff;
        *g = 2.0 * diff * scale;
    }
    Ok((total * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::input_grad_check;

    #[test]
    fn zero_when_equal() {
        let a = Tensor::from_fn(&[2, 3], |i| i as f64);
        let (loss, grad) = mse_loss(&a, &a, 3).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn hand_value() {
        let p = Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap();
        let (loss, _) = mse_loss(&p, &Tensor::zeros(&[1, 2]), 2).unwrap();
        assert_eq!(loss, 1.0);
        let p = Tensor::new(vec![2], vec![1.0, -1.0]).unwrap();
        assert_eq!(mse_loss(&p, &Tensor::zeros(&[2]), 2).unwrap().0, 1.0);
    }

    #[test]
    fn shape_mismatch() {
        assert!(mse_loss(&Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2, 3]), 2).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.9).sin());
        let t = Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.4).cos());
        let (_, grad) = mse_loss(&p, &t, 4).unwrap();
        let report = input_grad_check(&p, &grad, |x| mse_loss(x, &t, 4).unwrap().0, 1e-5);
        assert!(report.max_rel_error < 1e-7, "{report:?}");
    }
}
