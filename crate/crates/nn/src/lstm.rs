use rand::Rng;

use crate::tensor::dot;
use crate::{sigmoid, NnError, Parameterized, Result, Tensor};

/// Single-layer LSTM. Gate blocks are stacked as `[input, forget, cell, output]`
/// along the first axis of every weight and bias tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub bias: Tensor,
}

/// Activations kept from the forward pass for BPTT.
#[derive(Debug, Clone)]
pub struct LstmCache {
    xs: Vec<Vec<f64>>,
    /// `hs[t]` is the hidden state after step `t`.
    hs: Vec<Vec<f64>>,
    cs: Vec<Vec<f64>>,
    /// Post-activation gates per step, laid out like the weight blocks.
    gates: Vec<Vec<f64>>,
}

/// Hidden and cell state carried between [`Lstm::step`] calls.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

impl LstmCache {
    pub fn outputs(&self) -> &[Vec<f64>] {
        &self.hs
    }
}

impl Lstm {
    /// Uniform `±1/√hidden` weights, zero bias except the forget block at 1.0.
    pub fn new<R: Rng + ?Sized>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let limit = 1.0 / (hidden_size as f64).sqrt();
        let mut uniform = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
        };
        let w_input =
            Tensor::from_vec(&[4 * hidden_size, input_size], uniform(4 * hidden_size * input_size))
                .expect("shape");
        let w_hidden = Tensor::from_vec(
            &[4 * hidden_size, hidden_size],
            uniform(4 * hidden_size * hidden_size),
        )
        .expect("shape");
        let mut bias = Tensor::zeros(&[4 * hidden_size]);
        bias.data_mut()[hidden_size..2 * hidden_size].fill(1.0);
        Self {
            w_input,
            w_hidden,
            bias,
        }
    }

    pub fn from_parts(w_input: Tensor, w_hidden: Tensor, bias: Tensor) -> Result<Self> {
        let four_h = bias.len();
        let ok = four_h.is_multiple_of(4)
            && w_input.shape().len() == 2
            && w_input.rows() == four_h
            && w_hidden.shape() == [four_h, four_h / 4];
        if !ok {
            return Err(NnError::ShapeMismatch {
                expected: vec![four_h, four_h / 4],
                got: w_hidden.shape().to_vec(),
            });
        }
        Ok(Self {
            w_input,
            w_hidden,
            bias,
        })
    }

    pub fn input_size(&self) -> usize {
        self.w_input.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hidden.cols()
    }

    /// Runs the recurrence from zero initial state over `xs`.
    pub fn forward(&self, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, LstmCache)> {
        let hidden = self.hidden_size();
        let input = self.input_size();
        if let Some(bad) = xs.iter().find(|x| x.len() != input) {
            return Err(NnError::ShapeMismatch {
                expected: vec![input],
                got: vec![bad.len()],
            });
        }
        let mut h = vec![0.0; hidden];
        let mut c = vec![0.0; hidden];
        let mut cache = LstmCache {
            xs: xs.to_vec(),
            hs: Vec::with_capacity(xs.len()),
            cs: Vec::with_capacity(xs.len()),
            gates: Vec::with_capacity(xs.len()),
        };
        for x in xs {
            let gates = self.advance(x, &mut h, &mut c);
            cache.gates.push(gates);
            cache.cs.push(c.clone());
            cache.hs.push(h.clone());
        }
        Ok((cache.hs.clone(), cache))
    }

    /// One recurrence step for incremental decoding. `state` starts as
    /// [`LstmState::zeros`].
    pub fn step(&self, x: &[f64], state: &mut LstmState) -> Result<()> {
        if x.len() != self.input_size() {
            return Err(NnError::ShapeMismatch {
                expected: vec![self.input_size()],
                got: vec![x.len()],
            });
        }
        if state.h.len() != self.hidden_size() {
            return Err(NnError::ShapeMismatch {
                expected: vec![self.hidden_size()],
                got: vec![state.h.len()],
            });
        }
        self.advance(x, &mut state.h, &mut state.c);
        Ok(())
    }

    /// Updates `h` and `c` in place and returns the post-activation gates.
    fn advance(&self, x: &[f64], h: &mut [f64], c: &mut [f64]) -> Vec<f64> {
        let hidden = self.hidden_size();
        let input = self.input_size();
        let wi = self.w_input.data();
        let wh = self.w_hidden.data();
        let b = self.bias.data();
        let mut z = vec![0.0; 4 * hidden];
        for (k, zk) in z.iter_mut().enumerate() {
            *zk = b[k]
                + dot(&wi[k * input..(k + 1) * input], x)
                + dot(&wh[k * hidden..(k + 1) * hidden], h);
        }
        for j in 0..hidden {
            let i = sigmoid(z[j]);
            let f = sigmoid(z[hidden + j]);
            let g = z[2 * hidden + j].tanh();
            let o = sigmoid(z[3 * hidden + j]);
            z[j] = i;
            z[hidden + j] = f;
            z[2 * hidden + j] = g;
            z[3 * hidden + j] = o;
            c[j] = f * c[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        z
    }

    /// Backpropagation through time.
    ///
    /// `d_hs[t]` is the loss gradient flowing into `h_t` from above. Parameter
    /// gradients are added into `grads`; the input gradients are returned.
    pub fn backward(
        &self,
        cache: &LstmCache,
        d_hs: &[Vec<f64>],
        grads: &mut [Tensor],
    ) -> Result<Vec<Vec<f64>>> {
        let hidden = self.hidden_size();
        let steps = cache.xs.len();
        if d_hs.len() != steps || d_hs.iter().any(|d| d.len() != hidden) {
            return Err(NnError::ShapeMismatch {
                expected: vec![steps, hidden],
                got: vec![d_hs.len()],
            });
        }
        let zeros = vec![0.0; hidden];
        let mut dh_next = vec![0.0; hidden];
        let mut dc_next = vec![0.0; hidden];
        let mut dxs = vec![Vec::new(); steps];
        let (g_input, rest) = grads.split_at_mut(1);
        let (g_hidden, g_bias) = rest.split_at_mut(1);
        for t in (0..steps).rev() {
            let gates = &cache.gates[t];
            let c = &cache.cs[t];
            let c_prev = if t > 0 { &cache.cs[t - 1] } else { &zeros };
            let h_prev = if t > 0 { &cache.hs[t - 1] } else { &zeros };
            let mut dz = vec![0.0; 4 * hidden];
            for j in 0..hidden {
                let (i, f, g, o) = (
                    gates[j],
                    gates[hidden + j],
                    gates[2 * hidden + j],
                    gates[3 * hidden + j],
                );
                let tc = c[j].tanh();
                let dh = d_hs[t][j] + dh_next[j];
                let d_o = dh * tc;
                let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
                dz[j] = dc * g * i * (1.0 - i);
                dz[hidden + j] = dc * c_prev[j] * f * (1.0 - f);
                dz[2 * hidden + j] = dc * i * (1.0 - g * g);
                dz[3 * hidden + j] = d_o * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            g_input[0].add_outer(&dz, &cache.xs[t]);
            g_hidden[0].add_outer(&dz, h_prev);
            for (b, d) in g_bias[0].data_mut().iter_mut().zip(&dz) {
                *b += d;
            }
            let mut dx = vec![0.0; self.input_size()];
            self.w_input.matvec_t_acc(&dz, &mut dx);
            dxs[t] = dx;
            dh_next.fill(0.0);
            self.w_hidden.matvec_t_acc(&dz, &mut dh_next);
        }
        Ok(dxs)
    }
}

impl Parameterized for Lstm {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.w_input, &self.w_hidden, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_input, &mut self.w_hidden, &mut self.bias]
    }
}
