use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{NnError, Parameterized, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer `y = act(W x + b)` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Self {
            weight: Tensor::from_vec(&[output, input], data).expect("shape"),
            bias: Tensor::zeros(&[output]),
            activation,
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.rows()] {
            return Err(NnError::ShapeMismatch {
                expected: vec![weight.rows()],
                got: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn input_size(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_size(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_size() {
            return Err(NnError::ShapeMismatch {
                expected: vec![self.input_size()],
                got: vec![x.len()],
            });
        }
        let mut y = vec![0.0; self.output_size()];
        self.weight.matvec(x, &mut y);
        for (v, b) in y.iter_mut().zip(self.bias.data()) {
            *v = self.activation.apply(*v + b);
        }
        Ok(y)
    }

    /// Backward pass for one input. `y` is the output `forward(x)` produced.
    ///
    /// Adds `dW`, `dB` into `grads` (ordered like `params()`) and returns `dX`.
    pub fn backward(
        &self,
        x: &[f64],
        y: &[f64],
        d_out: &[f64],
        grads: &mut [Tensor],
    ) -> Result<Vec<f64>> {
        if x.len() != self.input_size() || y.len() != self.output_size() || d_out.len() != y.len()
        {
            return Err(NnError::ShapeMismatch {
                expected: vec![self.input_size(), self.output_size()],
                got: vec![x.len(), d_out.len()],
            });
        }
        let d_pre: Vec<f64> = d_out
            .iter()
            .zip(y)
            .map(|(d, y)| d * self.activation.derivative_from_output(*y))
            .collect();
        let (dw, rest) = grads.split_at_mut(1);
        dw[0].add_outer(&d_pre, x);
        for (b, d) in rest[0].data_mut().iter_mut().zip(&d_pre) {
            *b += d;
        }
        let mut dx = vec![0.0; x.len()];
        self.weight.matvec_t_acc(&d_pre, &mut dx);
        Ok(dx)
    }
}

impl Parameterized for Dense {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}
