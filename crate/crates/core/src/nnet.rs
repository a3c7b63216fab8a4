//! Minimal dense feedforward network with reverse-mode gradients.
//!
//! Tanh hidden layers, linear output, plain SGD with weight decay. Single
//! sample and batched forward/backward; the tape records post-activations so
//! the backward pass is exact.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VentError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Layer {
    /// Weights, shape (out, in).
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub act: Activation,
}

/// Dense feedforward network.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    /// Bumped on every parameter mutation; tapes from older versions are
    /// rejected by `backward`.
    #[serde(skip)]
    version: u64,
}

/// Recorded forward pass: input and every post-activation.
#[derive(Clone, Debug)]
pub struct Tape {
    version: u64,
    /// acts[0] = x, acts[i+1] = output of layer i.
    acts: Vec<Array1<f64>>,
}

/// Batched forward record; rows are samples.
#[derive(Clone, Debug)]
pub struct BatchTape {
    version: u64,
    acts: Vec<Array2<f64>>,
}

/// Parameter gradients, same shapes as the network layers.
#[derive(Clone, Debug)]
pub struct GradBuf {
    pub dw: Vec<Array2<f64>>,
    pub db: Vec<Array1<f64>>,
}

impl GradBuf {
    pub fn zeros_like(net: &Mlp) -> Self {
        GradBuf {
            dw: net.layers.iter().map(|l| Array2::zeros(l.w.dim())).collect(),
            db: net.layers.iter().map(|l| Array1::zeros(l.b.dim())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradBuf) {
        for (a, b) in self.dw.iter_mut().zip(&other.dw) {
            *a += b;
        }
        for (a, b) in self.db.iter_mut().zip(&other.db) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.dw {
            *a *= s;
        }
        for a in &mut self.db {
            *a *= s;
        }
    }

    pub fn zero(&mut self) {
        for a in &mut self.dw {
            a.fill(0.0);
        }
        for a in &mut self.db {
            a.fill(0.0);
        }
    }
}

impl Mlp {
    /// New network with the given layer widths (input, hidden..., output).
    /// Hidden layers use tanh, the output layer is linear. Weights are
    /// uniform in +-1/sqrt(fan_in), biases zero.
    pub fn new(widths: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(VentError::InvalidParameter(format!(
                "need at least input and output widths, all nonzero: {widths:?}"
            )));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for i in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[i], widths[i + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
            let act = if i + 2 == widths.len() {
                Activation::Linear
            } else {
                Activation::Tanh
            };
            layers.push(Layer {
                w,
                b: Array1::zeros(fan_out),
                act,
            });
        }
        Ok(Mlp { layers, version: 0 })
    }

    /// Network computing a fixed architecture: input dim, `depth` hidden
    /// layers of `width`, scalar-ish `out` outputs.
    pub fn with_arch(
        input: usize,
        depth: usize,
        width: usize,
        out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut widths = Vec::with_capacity(depth + 2);
        widths.push(input);
        widths.extend(std::iter::repeat_n(width, depth));
        widths.push(out);
        Self::new(&widths, rng)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.w.nrows()));
        w
    }

    /// Zero the output layer so the network starts as the constant 0.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().unwrap();
        last.w.fill(0.0);
        last.b.fill(0.0);
        self.version += 1;
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flat parameter access (layer weights row-major, then biases), used by
    /// finite-difference checks and serialization-free comparisons.
    pub fn param(&self, mut i: usize) -> f64 {
        for l in &self.layers {
            if i < l.w.len() {
                return l.w.as_slice().unwrap()[i];
            }
            i -= l.w.len();
            if i < l.b.len() {
                return l.b[i];
            }
            i -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut i: usize, v: f64) {
        self.version += 1;
        for l in &mut self.layers {
            if i < l.w.len() {
                l.w.as_slice_mut().unwrap()[i] = v;
                return;
            }
            i -= l.w.len();
            if i < l.b.len() {
                l.b[i] = v;
                return;
            }
            i -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Array1<f64>, Tape)> {
        if x.len() != self.input_dim() {
            return Err(VentError::ShapeMismatch {
                expected: self.input_dim(),
                got: x.len(),
                context: "forward input",
            });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(Array1::from_vec(x.to_vec()));
        for l in &self.layers {
            let mut z = l.w.dot(acts.last().unwrap()) + &l.b;
            if l.act == Activation::Tanh {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        let y = acts.last().unwrap().clone();
        Ok((
            y,
            Tape {
                version: self.version,
                acts,
            },
        ))
    }

    /// Reverse-mode gradients of y . dy with respect to the input and all
    /// parameters, given the tape of the matching forward pass.
    pub fn backward(&self, tape: &Tape, dy: &[f64]) -> Result<(Array1<f64>, GradBuf)> {
        if tape.version != self.version || tape.acts.len() != self.layers.len() + 1 {
            return Err(VentError::StaleTape);
        }
        if dy.len() != self.output_dim() {
            return Err(VentError::ShapeMismatch {
                expected: self.output_dim(),
                got: dy.len(),
                context: "backward dy",
            });
        }
        let mut grads = GradBuf::zeros_like(self);
        let mut g = Array1::from_vec(dy.to_vec());
        for (i, l) in self.layers.iter().enumerate().rev() {
            if l.act == Activation::Tanh {
                let post = &tape.acts[i + 1];
                g = &g * &post.mapv(|a| 1.0 - a * a);
            }
            let prev = &tape.acts[i];
            // dW = g (outer) prev, db = g.
            for (r, gr) in g.iter().enumerate() {
                let mut row = grads.dw[i].row_mut(r);
                for (c, pv) in prev.iter().enumerate() {
                    row[c] += gr * pv;
                }
            }
            grads.db[i] += &g;
            g = l.w.t().dot(&g);
        }
        Ok((g, grads))
    }

    /// Batched forward; rows of `x` are independent samples.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<(Array2<f64>, BatchTape)> {
        if x.ncols() != self.input_dim() {
            return Err(VentError::ShapeMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
                context: "forward_batch input",
            });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for l in &self.layers {
            let mut z = acts.last().unwrap().dot(&l.w.t());
            z += &l.b;
            if l.act == Activation::Tanh {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        let y = acts.last().unwrap().clone();
        Ok((
            y,
            BatchTape {
                version: self.version,
                acts,
            },
        ))
    }

    /// Batched backward; parameter gradients are summed over the batch.
    pub fn backward_batch(
        &self,
        tape: &BatchTape,
        dy: &Array2<f64>,
    ) -> Result<(Array2<f64>, GradBuf)> {
        if tape.version != self.version || tape.acts.len() != self.layers.len() + 1 {
            return Err(VentError::StaleTape);
        }
        if dy.ncols() != self.output_dim() || dy.nrows() != tape.acts[0].nrows() {
            return Err(VentError::ShapeMismatch {
                expected: self.output_dim(),
                got: dy.ncols(),
                context: "backward_batch dy",
            });
        }
        let mut grads = GradBuf::zeros_like(self);
        let mut g = dy.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            if l.act == Activation::Tanh {
                let post = &tape.acts[i + 1];
                g = &g * &post.mapv(|a| 1.0 - a * a);
            }
            grads.dw[i] = g.t().dot(&tape.acts[i]);
            grads.db[i] = g.sum_axis(ndarray::Axis(0));
            g = g.dot(&l.w);
        }
        Ok((g, grads))
    }

    /// SGD with decoupled-style weight decay folded into the gradient:
    /// theta <- theta - lr * (grad + weight_decay * theta).
    pub fn sgd_step(&mut self, grads: &GradBuf, lr: f64, weight_decay: f64) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            ndarray::Zip::from(&mut l.w)
                .and(&grads.dw[i])
                .for_each(|w, &g| *w -= lr * (g + weight_decay * *w));
            ndarray::Zip::from(&mut l.b)
                .and(&grads.db[i])
                .for_each(|b, &g| *b -= lr * (g + weight_decay * *b));
        }
        self.version += 1;
    }
}

/// Cosine decay of the learning rate over `total` epochs.
pub fn cosine_lr(lr0: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / total as f64).cos())
}
