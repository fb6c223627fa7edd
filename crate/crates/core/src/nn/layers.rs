use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::lstm::{Lstm, LstmCache};
use super::tensor::{gemm, gemm_a_bt, gemm_at_b, Tensor};
use super::NnError;

/// Fully connected layer `y = x·W + b`, weight `(in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Affine {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[inputs, outputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(inputs, outputs);
        fill_uniform(&mut layer.weight, glorot_limit(inputs, outputs), rng);
        layer
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Length-preserving 1-D cross-correlation, kernel `(in_channels, out_channels, 3)`,
/// stride 1, one zero of padding on each side.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub kernel: Tensor,
    pub bias: Tensor,
}

pub const CONV_KERNEL: usize = 3;

impl Conv1d {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            kernel: Tensor::zeros(&[in_channels, out_channels, CONV_KERNEL]),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    pub fn glorot<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(in_channels, out_channels);
        let limit = glorot_limit(in_channels * CONV_KERNEL, out_channels * CONV_KERNEL);
        fill_uniform(&mut layer.kernel, limit, rng);
        layer
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    /// Kernel rearranged as `[(ci·3 + k), co]` for patch products.
    fn patch_weights(&self) -> Vec<f64> {
        let (cin, cout) = (self.in_channels(), self.out_channels());
        let kernel = self.kernel.data();
        let mut w = vec![0.0; cin * CONV_KERNEL * cout];
        for ci in 0..cin {
            for co in 0..cout {
                for k in 0..CONV_KERNEL {
                    w[(ci * CONV_KERNEL + k) * cout + co] = kernel[(ci * cout + co) * CONV_KERNEL + k];
                }
            }
        }
        w
    }
}

/// One stage of a feed-forward stack.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Affine(Affine),
    Conv1d(Conv1d),
    /// Kernel 2, stride 2.
    MaxPool1d,
    Lstm(Lstm),
    Relu,
    Sigmoid,
    /// Reinterprets each sample with the given per-sample shape.
    Reshape(Vec<usize>),
    /// `[batch, time, hidden] -> [batch, hidden]`, keeping the final step.
    LastStep,
}

/// Activations retained by [`Layer::forward_train`] for the backward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Tensor),
    Output(Tensor),
    Patches { patches: Vec<f64>, input_shape: Vec<usize> },
    Pool { argmax: Vec<usize>, input_shape: Vec<usize> },
    Lstm(Box<LstmCache>),
    Shape(Vec<usize>),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Affine(_) => "affine",
            Layer::Conv1d(_) => "conv1d",
            Layer::MaxPool1d => "maxpool1d",
            Layer::Lstm(_) => "lstm",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Reshape(_) => "reshape",
            Layer::LastStep => "last_step",
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Affine(l) => vec![&l.weight, &l.bias],
            Layer::Conv1d(l) => vec![&l.kernel, &l.bias],
            Layer::Lstm(l) => l.params(),
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Affine(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Conv1d(l) => vec![&mut l.kernel, &mut l.bias],
            Layer::Lstm(l) => l.params_mut(),
            _ => Vec::new(),
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Layer::Affine(_) => &["weight", "bias"],
            Layer::Conv1d(_) => &["kernel", "bias"],
            Layer::Lstm(_) => &Lstm::PARAM_NAMES,
            _ => &[],
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.forward_train(x).map(|(y, _)| y)
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, Cache), NnError> {
        match self {
            Layer::Affine(l) => affine_forward(l, x),
            Layer::Conv1d(l) => conv1d_forward(l, x),
            Layer::MaxPool1d => maxpool1d_forward(x),
            Layer::Lstm(l) => {
                let (y, cache) = l.forward_train(x)?;
                Ok((y, Cache::Lstm(Box::new(cache))))
            }
            Layer::Relu => {
                // NaN must propagate, so no f64::max here.
                let y = Tensor::from_fn(x.shape(), |i| {
                    let v = x.data()[i];
                    if v < 0.0 {
                        0.0
                    } else {
                        v
                    }
                });
                Ok((y, Cache::Input(x.clone())))
            }
            Layer::Sigmoid => {
                let y = Tensor::from_fn(x.shape(), |i| sigmoid(x.data()[i]));
                Ok((y.clone(), Cache::Output(y)))
            }
            Layer::Reshape(per_sample) => {
                let mut shape = vec![x.batch()];
                shape.extend_from_slice(per_sample);
                let y = x.clone().reshape(shape)?;
                Ok((y, Cache::Shape(x.shape().to_vec())))
            }
            Layer::LastStep => last_step_forward(x),
        }
    }

    /// Returns the gradient with respect to the layer input and accumulates
    /// parameter gradients into `grads` (one tensor per parameter, in
    /// [`Layer::params`] order).
    pub fn backward(&self, cache: &Cache, grad_out: &Tensor, grads: &mut [Tensor]) -> Tensor {
        match (self, cache) {
            (Layer::Affine(l), Cache::Input(x)) => affine_backward(l, x, grad_out, grads),
            (Layer::Conv1d(l), Cache::Patches { patches, input_shape }) => {
                conv1d_backward(l, patches, input_shape, grad_out, grads)
            }
            (Layer::MaxPool1d, Cache::Pool { argmax, input_shape }) => {
                let mut gx = Tensor::zeros(input_shape);
                for (&src, &g) in argmax.iter().zip(grad_out.data()) {
                    gx.data_mut()[src] += g;
                }
                gx
            }
            (Layer::Lstm(l), Cache::Lstm(c)) => l.backward(c, grad_out, grads),
            (Layer::Relu, Cache::Input(x)) => Tensor::from_fn(x.shape(), |i| {
                if x.data()[i] > 0.0 {
                    grad_out.data()[i]
                } else {
                    0.0
                }
            }),
            (Layer::Sigmoid, Cache::Output(y)) => Tensor::from_fn(y.shape(), |i| {
                let s = y.data()[i];
                grad_out.data()[i] * s * (1.0 - s)
            }),
            (Layer::Reshape(_), Cache::Shape(shape)) => grad_out
                .clone()
                .reshape(shape.clone())
                .expect("reshape backward preserves element count"),
            (Layer::LastStep, Cache::Shape(shape)) => {
                let (batch, time, hidden) = (shape[0], shape[1], shape[2]);
                let mut gx = Tensor::zeros(shape);
                for b in 0..batch {
                    let dst = (b * time + time - 1) * hidden;
                    gx.data_mut()[dst..dst + hidden]
                        .copy_from_slice(&grad_out.data()[b * hidden..(b + 1) * hidden]);
                }
                gx
            }
            (layer, _) => panic!("cache does not belong to a {} layer", layer.kind()),
        }
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn fill_uniform<R: Rng + ?Sized>(t: &mut Tensor, limit: f64, rng: &mut R) {
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    for v in t.data_mut() {
        *v = dist.sample(rng);
    }
}

fn affine_forward(l: &Affine, x: &Tensor) -> Result<(Tensor, Cache), NnError> {
    let (inputs, outputs) = (l.inputs(), l.outputs());
    if x.shape().len() != 2 || x.shape()[1] != inputs {
        return Err(NnError::Shape {
            context: "affine input",
            expected: vec![x.batch(), inputs],
            actual: x.shape().to_vec(),
        });
    }
    let batch = x.batch();
    let mut y = Tensor::zeros(&[batch, outputs]);
    for row in y.data_mut().chunks_exact_mut(outputs) {
        row.copy_from_slice(l.bias.data());
    }
    gemm(x.data(), l.weight.data(), y.data_mut(), batch, inputs, outputs);
    Ok((y, Cache::Input(x.clone())))
}

fn affine_backward(l: &Affine, x: &Tensor, g: &Tensor, grads: &mut [Tensor]) -> Tensor {
    let (inputs, outputs) = (l.inputs(), l.outputs());
    let batch = x.batch();
    gemm_at_b(x.data(), g.data(), grads[0].data_mut(), batch, inputs, outputs);
    for row in g.data().chunks_exact(outputs) {
        for (gb, &v) in grads[1].data_mut().iter_mut().zip(row) {
            *gb += v;
        }
    }
    let mut gx = Tensor::zeros(&[batch, inputs]);
    gemm_a_bt(g.data(), l.weight.data(), gx.data_mut(), batch, inputs, outputs);
    gx
}

fn conv1d_forward(l: &Conv1d, x: &Tensor) -> Result<(Tensor, Cache), NnError> {
    let (cin, cout) = (l.in_channels(), l.out_channels());
    if x.shape().len() != 3 || x.shape()[1] != cin {
        return Err(NnError::Shape {
            context: "conv1d input channels",
            expected: vec![x.batch(), cin, x.shape().get(2).copied().unwrap_or(0)],
            actual: x.shape().to_vec(),
        });
    }
    let (batch, len) = (x.shape()[0], x.shape()[2]);
    let width = cin * CONV_KERNEL;
    // patches[(b·len + t), (ci·3 + k)] = x[b, ci, t + k - 1]
    let mut patches = vec![0.0; batch * len * width];
    for b in 0..batch {
        for ci in 0..cin {
            let row = &x.data()[(b * cin + ci) * len..(b * cin + ci + 1) * len];
            for t in 0..len {
                let base = (b * len + t) * width + ci * CONV_KERNEL;
                for k in 0..CONV_KERNEL {
                    let src = t + k;
                    if src >= 1 && src <= len {
                        patches[base + k] = row[src - 1];
                    }
                }
            }
        }
    }
    let mut out_t = vec![0.0; batch * len * cout];
    for row in out_t.chunks_exact_mut(cout) {
        row.copy_from_slice(l.bias.data());
    }
    gemm(&patches, &l.patch_weights(), &mut out_t, batch * len, width, cout);
    let mut y = Tensor::zeros(&[batch, cout, len]);
    let yd = y.data_mut();
    for b in 0..batch {
        for t in 0..len {
            for co in 0..cout {
                yd[(b * cout + co) * len + t] = out_t[(b * len + t) * cout + co];
            }
        }
    }
    Ok((
        y,
        Cache::Patches {
            patches,
            input_shape: x.shape().to_vec(),
        },
    ))
}

fn conv1d_backward(
    l: &Conv1d,
    patches: &[f64],
    input_shape: &[usize],
    g: &Tensor,
    grads: &mut [Tensor],
) -> Tensor {
    let (cin, cout) = (l.in_channels(), l.out_channels());
    let (batch, len) = (input_shape[0], input_shape[2]);
    let width = cin * CONV_KERNEL;
    let mut g_t = vec![0.0; batch * len * cout];
    for b in 0..batch {
        for co in 0..cout {
            for t in 0..len {
                g_t[(b * len + t) * cout + co] = g.data()[(b * cout + co) * len + t];
            }
        }
    }
    let mut gw = vec![0.0; width * cout];
    gemm_at_b(patches, &g_t, &mut gw, batch * len, width, cout);
    let gk = grads[0].data_mut();
    for ci in 0..cin {
        for co in 0..cout {
            for k in 0..CONV_KERNEL {
                gk[(ci * cout + co) * CONV_KERNEL + k] += gw[(ci * CONV_KERNEL + k) * cout + co];
            }
        }
    }
    for row in g_t.chunks_exact(cout) {
        for (gb, &v) in grads[1].data_mut().iter_mut().zip(row) {
            *gb += v;
        }
    }
    let mut g_patches = vec![0.0; batch * len * width];
    gemm_a_bt(&g_t, &l.patch_weights(), &mut g_patches, batch * len, width, cout);
    let mut gx = Tensor::zeros(input_shape);
    let gxd = gx.data_mut();
    for b in 0..batch {
        for t in 0..len {
            let base = (b * len + t) * width;
            for ci in 0..cin {
                for k in 0..CONV_KERNEL {
                    let src = t + k;
                    if src >= 1 && src <= len {
                        gxd[(b * cin + ci) * len + src - 1] += g_patches[base + ci * CONV_KERNEL + k];
                    }
                }
            }
        }
    }
    gx
}

fn maxpool1d_forward(x: &Tensor) -> Result<(Tensor, Cache), NnError> {
    if x.shape().len() != 3 {
        return Err(NnError::Shape {
            context: "maxpool1d input rank",
            expected: vec![x.batch(), 0, 0],
            actual: x.shape().to_vec(),
        });
    }
    let (batch, channels, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if len % 2 != 0 {
        return Err(NnError::OddPoolLength(len));
    }
    let half = len / 2;
    let mut y = Tensor::zeros(&[batch, channels, half]);
    let mut argmax = Vec::with_capacity(batch * channels * half);
    for (row, out) in x.data().chunks_exact(len).zip(y.data_mut().chunks_exact_mut(half)) {
        let row_start = argmax.len() * 2;
        for (j, o) in out.iter_mut().enumerate() {
            let (a, b) = (row[2 * j], row[2 * j + 1]);
            // ties go to the earlier position
            let pick = if b > a { 2 * j + 1 } else { 2 * j };
            *o = row[pick];
            argmax.push(row_start + pick);
        }
    }
    Ok((
        y,
        Cache::Pool {
            argmax,
            input_shape: x.shape().to_vec(),
        },
    ))
}

fn last_step_forward(x: &Tensor) -> Result<(Tensor, Cache), NnError> {
    if x.shape().len() != 3 || x.shape()[1] == 0 {
        return Err(NnError::Shape {
            context: "last_step input",
            expected: vec![x.batch(), 1, 0],
            actual: x.shape().to_vec(),
        });
    }
    let (batch, time, hidden) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut y = Tensor::zeros(&[batch, hidden]);
    for b in 0..batch {
        let src = (b * time + time - 1) * hidden;
        y.data_mut()[b * hidden..(b + 1) * hidden].copy_from_slice(&x.data()[src..src + hidden]);
    }
    Ok((y, Cache::Shape(x.shape().to_vec())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn affine_identity_and_hand_values() {
        let mut l = Affine::zeros(2, 2);
        l.weight = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let x = t(&[1, 2], &[1.0, 2.0]);
        assert_eq!(Layer::Affine(l.clone()).forward(&x).unwrap(), x);
        l.bias = t(&[2], &[1.0, 1.0]);
        assert_eq!(Layer::Affine(l).forward(&x).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn affine_rejects_bad_width() {
        let l = Layer::Affine(Affine::zeros(3, 2));
        assert!(matches!(l.forward(&Tensor::zeros(&[1, 2])), Err(NnError::Shape { .. })));
    }

    #[test]
    fn conv_identity_kernel() {
        let mut c = Conv1d::zeros(1, 1);
        c.kernel = t(&[1, 1, 3], &[0.0, 1.0, 0.0]);
        let x = t(&[1, 1, 5], &[1.0, -2.0, 3.0, 0.5, 4.0]);
        assert_eq!(Layer::Conv1d(c).forward(&x).unwrap(), x);
    }

    #[test]
    fn conv_hand_values() {
        let mut c = Conv1d::zeros(1, 1);
        c.kernel = t(&[1, 1, 3], &[1.0, 1.0, 1.0]);
        let x = t(&[1, 1, 3], &[1.0, 2.0, 3.0]);
        assert_eq!(Layer::Conv1d(c).forward(&x).unwrap().data(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn conv_multichannel_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut c = Conv1d::glorot(2, 3, &mut rng);
        fill_uniform(&mut c.bias, 0.5, &mut rng);
        let x = Tensor::from_fn(&[2, 2, 4], |i| (i as f64 * 0.7).sin());
        let y = Layer::Conv1d(c.clone()).forward(&x).unwrap();
        for b in 0..2 {
            for co in 0..3 {
                for tt in 0..4 {
                    let mut want = c.bias.data()[co];
                    for ci in 0..2 {
                        for k in 0..3 {
                            let pos = tt as isize + k as isize - 1;
                            if (0..4).contains(&pos) {
                                want += c.kernel.data()[(ci * 3 + co) * 3 + k]
                                    * x.data()[(b * 2 + ci) * 4 + pos as usize];
                            }
                        }
                    }
                    let got = y.data()[(b * 3 + co) * 4 + tt];
                    assert!((got - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let l = Layer::Conv1d(Conv1d::zeros(2, 4));
        assert!(l.forward(&Tensor::zeros(&[1, 3, 8])).is_err());
    }

    #[test]
    fn maxpool_values_and_ties() {
        let x = t(&[1, 1, 4], &[1.0, 3.0, 2.0, 2.0]);
        let (y, cache) = Layer::MaxPool1d.forward_train(&x).unwrap();
        assert_eq!(y.data(), &[3.0, 2.0]);
        let gx = Layer::MaxPool1d.backward(&cache, &t(&[1, 1, 2], &[1.0, 1.0]), &mut []);
        assert_eq!(gx.data(), &[0.0, 1.0, 1.0, 0.0]);

        let x = t(&[1, 2, 2], &[5.0, 5.0, -1.0, -1.0]);
        let (y, cache) = Layer::MaxPool1d.forward_train(&x).unwrap();
        assert_eq!(y.data(), &[5.0, -1.0]);
        let gx = Layer::MaxPool1d.backward(&cache, &t(&[1, 2, 1], &[2.0, 3.0]), &mut []);
        assert_eq!(gx.data(), &[2.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn maxpool_rejects_odd_length() {
        assert_eq!(
            Layer::MaxPool1d.forward(&Tensor::zeros(&[1, 1, 3])),
            Err(NnError::OddPoolLength(3))
        );
    }

    #[test]
    fn activations() {
        let x = t(&[3], &[-1.0, 0.0, 2.0]);
        let (y, cache) = Layer::Relu.forward_train(&x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let g = Layer::Relu.backward(&cache, &t(&[3], &[1.0, 1.0, 1.0]), &mut []);
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!(sigmoid(-800.0).is_finite());
    }

    #[test]
    fn reshape_and_last_step() {
        let x = Tensor::from_fn(&[2, 6], |i| i as f64);
        let (y, cache) = Layer::Reshape(vec![3, 2]).forward_train(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2]);
        let back = Layer::Reshape(vec![3, 2]).backward(&cache, &y, &mut []);
        assert_eq!(back, x);

        let (last, cache) = Layer::LastStep.forward_train(&y).unwrap();
        assert_eq!(last.data(), &[4.0, 5.0, 10.0, 11.0]);
        let g = Layer::LastStep.backward(&cache, &last, &mut []);
        assert_eq!(g.data()[4..6], [4.0, 5.0]);
        assert_eq!(g.data()[0..4], [0.0; 4]);
    }

}
