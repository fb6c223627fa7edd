use super::{mse_loss, Layer, NnError, Parameterized, Sequential, Tensor};

/// Gradient magnitudes below this are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

/// Outcome of a central finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor index, element index)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    fn empty(tolerance: f64) -> Self {
        Self {
            max_rel_error: 0.0,
            worst: (0, 0),
            checked: 0,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    fn record(&mut self, tensor: usize, element: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error || err.is_nan() {
            self.max_rel_error = err;
            self.worst = (tensor, element);
        }
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` parameter gradients against central differences of
/// `loss`, perturbing every parameter element by `±step`.
pub fn grad_check<M, F>(model: &mut M, analytic: &[Tensor], mut loss: F, step: f64) -> GradCheckReport
where
    M: Parameterized,
    F: FnMut(&M) -> f64,
{
    let mut report = GradCheckReport::empty(f64::INFINITY);
    let count = model.params().len();
    assert_eq!(count, analytic.len(), "one gradient tensor per parameter");
    for p in 0..count {
        let len = analytic[p].len();
        for e in 0..len {
            let original = model.params()[p].data()[e];
            model.params_mut()[p].data_mut()[e] = original + step;
            let plus = loss(model);
            model.params_mut()[p].data_mut()[e] = original - step;
            let minus = loss(model);
            model.params_mut()[p].data_mut()[e] = original;
            report.record(p, e, analytic[p].data()[e], (plus - minus) / (2.0 * step));
        }
    }
    report
}

/// Central-difference check of a gradient with respect to an input tensor.
pub fn input_grad_check<F>(input: &Tensor, analytic: &Tensor, mut loss: F, step: f64) -> GradCheckReport
where
    F: FnMut(&Tensor) -> f64,
{
    let mut report = GradCheckReport::empty(f64::INFINITY);
    let mut x = input.clone();
    for e in 0..x.len() {
        let original = x.data()[e];
        x.data_mut()[e] = original + step;
        let plus = loss(&x);
        x.data_mut()[e] = original - step;
        let minus = loss(&x);
        x.data_mut()[e] = original;
        report.record(0, e, analytic.data()[e], (plus - minus) / (2.0 * step));
    }
    report
}

/// Checks every parameter gradient of `net` under an MSE loss normalized by
/// the per-sample output size, with step `1e-5`.
pub fn grad_check_mse(
    net: &mut Sequential,
    input: &Tensor,
    target: &Tensor,
    tolerance: f64,
) -> Result<GradCheckReport, NnError> {
    let (out, caches) = net.forward_train(input)?;
    let per_sample = out.len() / out.batch().max(1);
    let (_, grad_out) = mse_loss(&out, target, per_sample)?;
    let mut grads = net.zero_grads();
    net.backward(&caches, &grad_out, &mut grads);
    let mut report = grad_check(
        net,
        &grads,
        |n| {
            let y = n.forward(input).expect("shapes validated above");
            mse_loss(&y, target, per_sample).expect("shapes validated above").0
        },
        1e-5,
    );
    report.tolerance = tolerance;
    Ok(report)
}

/// Parameter and input gradient checks of a single layer under an MSE loss
/// against `target`, with step `1e-5`.
pub fn layer_grad_check(
    layer: Layer,
    input: &Tensor,
    target: &Tensor,
) -> Result<(GradCheckReport, GradCheckReport), NnError> {
    let mut net = Sequential::new(vec![layer]);
    let (out, caches) = net.forward_train(input)?;
    let per_sample = out.len() / out.batch().max(1);
    let (_, grad_out) = mse_loss(&out, target, per_sample)?;
    let mut grads = net.zero_grads();
    let grad_in = net.backward(&caches, &grad_out, &mut grads);
    let loss = |n: &Sequential, x: &Tensor| {
        let y = n.forward(x).expect("shapes validated above");
        mse_loss(&y, target, per_sample).expect("shapes validated above").0
    };
    let params = grad_check(&mut net, &grads, |n| loss(n, input), 1e-5);
    let inputs = input_grad_check(input, &grad_in, |x| loss(&net, x), 1e-5);
    Ok((params, inputs))
}

/// Distance of `net` on `x` from its nearest non-differentiable point: the
/// smallest |ReLU input|, or gap between two pooled values (pairs of exact
/// zeros from dead ReLUs excepted). Difference quotients are meaningless
/// when a perturbation can cross one of these.
pub fn kink_margin(net: &Sequential, x: &Tensor) -> Result<f64, NnError> {
    let mut margin = f64::INFINITY;
    let mut current = x.clone();
    for layer in &net.layers {
        match layer {
            Layer::Relu => margin = current.data().iter().fold(margin, |m, v| m.min(v.abs())),
            Layer::MaxPool1d => {
                for pair in current.data().chunks_exact(2) {
                    if pair[0] != 0.0 || pair[1] != 0.0 {
                        margin = margin.min((pair[0] - pair[1]).abs());
                    }
                }
            }
            _ => {}
        }
        current = layer.forward(&current)?;
    }
    Ok(margin)
}


#[cfg(test)]
mod kink_tests {
    use super::*;
    use crate::nn::Affine;

    #[test]
    fn margin_sees_relu_inputs_and_pool_gaps() {
        let mut affine = Affine::zeros(2, 4);
        affine.bias.data_mut().copy_from_slice(&[0.3, -0.01, 0.5, 0.52]);
        let net = Sequential::new(vec![Layer::Affine(affine.clone()), Layer::Relu]);
        let x = Tensor::zeros(&[1, 2]);
        assert!((kink_margin(&net, &x).unwrap() - 0.01).abs() < 1e-15);

        let pooled = Sequential::new(vec![Layer::Affine(affine), Layer::Reshape(vec![1, 4]), Layer::MaxPool1d]);
        assert!((kink_margin(&pooled, &x).unwrap() - 0.02).abs() < 1e-12);
    }

    #[test]
    fn layer_check_passes_for_affine() {
        let layer = Layer::Affine(Affine::zeros(3, 2));
        let x = Tensor::from_fn(&[2, 3], |i| i as f64 * 0.1);
        let t = Tensor::from_fn(&[2, 2], |i| (i as f64).cos());
        let (p, i) = layer_grad_check(layer, &x, &t).unwrap();
        assert!(p.max_rel_error < 1e-7 && i.max_rel_error < 1e-7, "{p:?} {i:?}");
    }
}
