use rand::Rng;

use super::layers::{fill_uniform, sigmoid};
use super::tensor::{gemm, gemm_a_bt, gemm_at_b, Tensor};
use super::NnError;

const GATES: usize = 4;

/// Weights of one LSTM gate: input projection `(in, hidden)`, recurrent
/// projection `(hidden, hidden)` and bias `(hidden)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub input_weight: Tensor,
    pub recurrent_weight: Tensor,
    pub bias: Tensor,
}

impl Gate {
    fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            input_weight: Tensor::zeros(&[inputs, hidden]),
            recurrent_weight: Tensor::zeros(&[hidden, hidden]),
            bias: Tensor::zeros(&[hidden]),
        }
    }
}

/// Single-layer LSTM returning the hidden state at every time step.
///
/// `i, f, o = σ(·)`, `c̃ = tanh(·)`, `C_t = f⊙C_{t-1} + i⊙c̃`,
/// `h_t = o⊙tanh(C_t)`, with `h_0 = C_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub input_gate: Gate,
    pub forget_gate: Gate,
    pub cell_gate: Gate,
    pub output_gate: Gate,
}

/// Per-step activations kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmCache {
    batch: usize,
    time: usize,
    inputs: Vec<Vec<f64>>,
    /// Activated gates per step, `[batch, 4·hidden]` in i, f, c̃, o order.
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    tanh_cells: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
}

impl Lstm {
    pub const PARAM_NAMES: [&'static str; 12] = [
        "input.input_weight",
        "input.recurrent_weight",
        "input.bias",
        "forget.input_weight",
        "forget.recurrent_weight",
        "forget.bias",
        "cell.input_weight",
        "cell.recurrent_weight",
        "cell.bias",
        "output.input_weight",
        "output.recurrent_weight",
        "output.bias",
    ];

    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            input_gate: Gate::zeros(inputs, hidden),
            forget_gate: Gate::zeros(inputs, hidden),
            cell_gate: Gate::zeros(inputs, hidden),
            output_gate: Gate::zeros(inputs, hidden),
        }
    }

    /// Weights uniform in `±1/√hidden`, biases zero.
    pub fn uniform<R: Rng + ?Sized>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let mut lstm = Self::zeros(inputs, hidden);
        let limit = 1.0 / (hidden as f64).sqrt();
        for gate in lstm.gates_mut() {
            fill_uniform(&mut gate.input_weight, limit, rng);
            fill_uniform(&mut gate.recurrent_weight, limit, rng);
        }
        lstm
    }

    pub fn inputs(&self) -> usize {
        self.input_gate.input_weight.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.input_gate.bias.len()
    }

    fn gates(&self) -> [&Gate; GATES] {
        [&self.input_gate, &self.forget_gate, &self.cell_gate, &self.output_gate]
    }

    fn gates_mut(&mut self) -> [&mut Gate; GATES] {
        [
            &mut self.input_gate,
            &mut self.forget_gate,
            &mut self.cell_gate,
            &mut self.output_gate,
        ]
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.gates()
            .into_iter()
            .flat_map(|g| [&g.input_weight, &g.recurrent_weight, &g.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.gates_mut()
            .into_iter()
            .flat_map(|g| [&mut g.input_weight, &mut g.recurrent_weight, &mut g.bias])
            .collect()
    }

    /// Gate matrices side by side: `([in, 4h], [h, 4h], [4h])`.
    fn stacked(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (inputs, hidden) = (self.inputs(), self.hidden());
        let width = GATES * hidden;
        let mut wx = vec![0.0; inputs * width];
        let mut wh = vec![0.0; hidden * width];
        let mut b = vec![0.0; width];
        for (g, gate) in self.gates().into_iter().enumerate() {
            let col = g * hidden;
            for r in 0..inputs {
                wx[r * width + col..r * width + col + hidden]
                    .copy_from_slice(&gate.input_weight.data()[r * hidden..(r + 1) * hidden]);
            }
            for r in 0..hidden {
                wh[r * width + col..r * width + col + hidden]
                    .copy_from_slice(&gate.recurrent_weight.data()[r * hidden..(r + 1) * hidden]);
            }
            b[col..col + hidden].copy_from_slice(gate.bias.data());
        }
        (wx, wh, b)
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, LstmCache), NnError> {
        let (inputs, hidden) = (self.inputs(), self.hidden());
        if x.shape().len() != 3 || x.shape()[2] != inputs {
            return Err(NnError::Shape {
                context: "lstm input",
                expected: vec![x.batch(), x.shape().get(1).copied().unwrap_or(0), inputs],
                actual: x.shape().to_vec(),
            });
        }
        let (batch, time) = (x.shape()[0], x.shape()[1]);
        let width = GATES * hidden;
        let (wx, wh, bias) = self.stacked();

        let mut cache = LstmCache {
            batch,
            time,
            inputs: Vec::with_capacity(time),
            gates: Vec::with_capacity(time),
            cells: Vec::with_capacity(time),
            tanh_cells: Vec::with_capacity(time),
            hidden: Vec::with_capacity(time),
        };
        let mut h_prev = vec![0.0; batch * hidden];
        let mut c_prev = vec![0.0; batch * hidden];
        let mut y = Tensor::zeros(&[batch, time, hidden]);
        for t in 0..time {
            let mut x_t = Vec::with_capacity(batch * inputs);
            for b in 0..batch {
                let start = (b * time + t) * inputs;
                x_t.extend_from_slice(&x.data()[start..start + inputs]);
            }
            let mut z = Vec::with_capacity(batch * width);
            for _ in 0..batch {
                z.extend_from_slice(&bias);
            }
            gemm(&x_t, &wx, &mut z, batch, inputs, width);
            gemm(&h_prev, &wh, &mut z, batch, hidden, width);
            let mut c = vec![0.0; batch * hidden];
            let mut tc = vec![0.0; batch * hidden];
            let mut h = vec![0.0; batch * hidden];
            for b in 0..batch {
                let zr = &mut z[b * width..(b + 1) * width];
                for j in 0..hidden {
                    let i_g = sigmoid(zr[j]);
                    let f_g = sigmoid(zr[hidden + j]);
                    let c_g = zr[2 * hidden + j].tanh();
                    let o_g = sigmoid(zr[3 * hidden + j]);
                    zr[j] = i_g;
                    zr[hidden + j] = f_g;
                    zr[2 * hidden + j] = c_g;
                    zr[3 * hidden + j] = o_g;
                    let idx = b * hidden + j;
                    c[idx] = f_g * c_prev[idx] + i_g * c_g;
                    tc[idx] = c[idx].tanh();
                    h[idx] = o_g * tc[idx];
                }
                let dst = (b * time + t) * hidden;
                y.data_mut()[dst..dst + hidden].copy_from_slice(&h[b * hidden..(b + 1) * hidden]);
            }
            cache.inputs.push(x_t);
            cache.gates.push(z);
            cache.tanh_cells.push(tc);
            cache.hidden.push(h.clone());
            cache.cells.push(c.clone());
            h_prev = h;
            c_prev = c;
        }
        Ok((y, cache))
    }

    /// Backpropagation through time. `grad_out` is `[batch, time, hidden]`.
    pub fn backward(&self, cache: &LstmCache, grad_out: &Tensor, grads: &mut [Tensor]) -> Tensor {
        let (inputs, hidden) = (self.inputs(), self.hidden());
        let (batch, time) = (cache.batch, cache.time);
        let width = GATES * hidden;
        let (wx, wh, _) = self.stacked();
        let mut g_wx = vec![0.0; inputs * width];
        let mut g_wh = vec![0.0; hidden * width];
        let mut g_b = vec![0.0; width];
        let mut gx = Tensor::zeros(&[batch, time, inputs]);
        let mut dh_next = vec![0.0; batch * hidden];
        let mut dc_next = vec![0.0; batch * hidden];
        let zeros = vec![0.0; batch * hidden];

        for t in (0..time).rev() {
            let gates = &cache.gates[t];
            let tc = &cache.tanh_cells[t];
            let c_prev = if t > 0 { &cache.cells[t - 1] } else { &zeros };
            let h_prev = if t > 0 { &cache.hidden[t - 1] } else { &zeros };
            let mut dz = vec![0.0; batch * width];
            for b in 0..batch {
                for j in 0..hidden {
                    let idx = b * hidden + j;
                    let gr = &gates[b * width..(b + 1) * width];
                    let (i_g, f_g, c_g, o_g) =
                        (gr[j], gr[hidden + j], gr[2 * hidden + j], gr[3 * hidden + j]);
                    let dh = grad_out.data()[(b * time + t) * hidden + j] + dh_next[idx];
                    let d_o = dh * tc[idx];
                    let dc = dh * o_g * (1.0 - tc[idx] * tc[idx]) + dc_next[idx];
                    let d_i = dc * c_g;
                    let d_c = dc * i_g;
                    let d_f = dc * c_prev[idx];
                    dc_next[idx] = dc * f_g;
                    let dzr = &mut dz[b * width..(b + 1) * width];
                    dzr[j] = d_i * i_g * (1.0 - i_g);
                    dzr[hidden + j] = d_f * f_g * (1.0 - f_g);
                    dzr[2 * hidden + j] = d_c * (1.0 - c_g * c_g);
                    dzr[3 * hidden + j] = d_o * o_g * (1.0 - o_g);
                }
            }
            gemm_at_b(&cache.inputs[t], &dz, &mut g_wx, batch, inputs, width);
            gemm_at_b(h_prev, &dz, &mut g_wh, batch, hidden, width);
            for row in dz.chunks_exact(width) {
                for (acc, &v) in g_b.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            let mut dx = vec![0.0; batch * inputs];
            gemm_a_bt(&dz, &wx, &mut dx, batch, inputs, width);
            for b in 0..batch {
                let dst = (b * time + t) * inputs;
                gx.data_mut()[dst..dst + inputs].copy_from_slice(&dx[b * inputs..(b + 1) * inputs]);
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            gemm_a_bt(&dz, &wh, &mut dh_next, batch, hidden, width);
        }

        for g in 0..GATES {
            let col = g * hidden;
            let [gw_in, gw_rec, gb] = &mut grads[3 * g..3 * g + 3] else {
                unreachable!("lstm owns twelve parameter tensors")
            };
            for r in 0..inputs {
                for (d, s) in gw_in.data_mut()[r * hidden..(r + 1) * hidden]
                    .iter_mut()
                    .zip(&g_wx[r * width + col..r * width + col + hidden])
                {
                    *d += s;
                }
            }
            for r in 0..hidden {
                for (d, s) in gw_rec.data_mut()[r * hidden..(r + 1) * hidden]
                    .iter_mut()
                    .zip(&g_wh[r * width + col..r * width + col + hidden])
                {
                    *d += s;
                }
            }
            for (d, s) in gb.data_mut().iter_mut().zip(&g_b[col..col + hidden]) {
                *d += s;
            }
        }
        gx
    }
}
