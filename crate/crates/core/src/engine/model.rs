//! Layered multilayer perceptron with hand-written gradients.
//!
//! Layer `j` maps `dims[j]` inputs to `dims[j + 1]` outputs. Hidden layers use
//! `tanh`; the last layer produces logits for a softmax cross-entropy loss.
//! Each layer's parameters are one flat vector: the row-major weight matrix
//! followed by the bias.

use rand::Rng;

use crate::error::{Error, Result};

use super::data::Dataset;

/// Parameters of every layer, `params[j]` for layer `j + 1`.
pub type Params = Vec<Vec<f64>>;

/// Per-sample cost of one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerCost {
    pub fp_flops: f64,
    pub bp_flops: f64,
    /// Values produced by the layer.
    pub outputs: usize,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    dims: Vec<usize>,
}

impl Mlp {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(
                "an MLP needs at least two non-zero layer widths".into(),
            ));
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_classes(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    /// Parameter count of layer `j` (0-based).
    pub fn layer_len(&self, j: usize) -> usize {
        self.dims[j + 1] * (self.dims[j] + 1)
    }

    pub fn costs(&self) -> Vec<LayerCost> {
        (0..self.num_layers())
            .map(|j| {
                let (i, o) = (self.dims[j] as f64, self.dims[j + 1] as f64);
                let fp = 2.0 * i * o + 2.0 * o;
                LayerCost {
                    fp_flops: fp,
                    bp_flops: 2.0 * fp,
                    outputs: self.dims[j + 1],
                    params: self.layer_len(j),
                }
            })
            .collect()
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init<R: Rng>(&self, rng: &mut R) -> Params {
        (0..self.num_layers())
            .map(|j| {
                let (i, o) = (self.dims[j], self.dims[j + 1]);
                let r = (6.0 / (i + o) as f64).sqrt();
                let mut w: Vec<f64> = (0..i * o).map(|_| rng.random_range(-r..r)).collect();
                w.resize(i * o + o, 0.0);
                w
            })
            .collect()
    }

    fn check(&self, w: &[&[f64]], data: &Dataset) {
        assert_eq!(w.len(), self.num_layers(), "layer count");
        for (j, l) in w.iter().enumerate() {
            assert_eq!(l.len(), self.layer_len(j), "layer {j} size");
        }
        assert_eq!(data.dim(), self.input_dim(), "input width");
    }

    /// Mean cross-entropy over the samples `idx`.
    pub fn loss(&self, w: &[&[f64]], data: &Dataset, idx: &[usize]) -> f64 {
        self.check(w, data);
        let mut acts = self.buffers();
        let mut total = 0.0;
        for &s in idx {
            total += self.forward(w, data.x(s), data.y(s), &mut acts);
        }
        total / idx.len() as f64
    }

    /// Mean cross-entropy and its gradient over the samples `idx`, taken in
    /// the given order.
    pub fn loss_and_gradient(&self, w: &[&[f64]], data: &Dataset, idx: &[usize]) -> (f64, Params) {
        self.check(w, data);
        let mut acts = self.buffers();
        let mut delta = self.buffers();
        let mut grad: Params = (0..self.num_layers()).map(|j| vec![0.0; self.layer_len(j)]).collect();
        let mut total = 0.0;
        for &s in idx {
            total += self.forward(w, data.x(s), data.y(s), &mut acts);
            self.backward(w, data.y(s), &acts, &mut delta, &mut grad);
        }
        let scale = 1.0 / idx.len() as f64;
        for g in grad.iter_mut().flatten() {
            *g *= scale;
        }
        (total * scale, grad)
    }

    fn buffers(&self) -> Vec<Vec<f64>> {
        self.dims.iter().map(|&d| vec![0.0; d]).collect()
    }

    /// Fills `acts[0..=L]` and returns the sample loss. `acts[L]` holds the
    /// softmax probabilities.
    fn forward(&self, w: &[&[f64]], x: &[f64], y: usize, acts: &mut [Vec<f64>]) -> f64 {
        acts[0].copy_from_slice(x);
        let last = self.num_layers() - 1;
        for j in 0..=last {
            let (i, o) = (self.dims[j], self.dims[j + 1]);
            let (weights, bias) = w[j].split_at(i * o);
            let (prev, next) = acts.split_at_mut(j + 1);
            let input = &prev[j];
            let out = &mut next[0];
            for r in 0..o {
                let row = &weights[r * i..(r + 1) * i];
                let z = row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + bias[r];
                out[r] = if j == last { z } else { z.tanh() };
            }
        }
        let logits = &mut acts[last + 1];
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let zy = logits[y] - m;
        let mut sum = 0.0;
        for v in logits.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        let loss = sum.ln() - zy;
        for v in logits.iter_mut() {
            *v /= sum;
        }
        loss
    }

    fn backward(&self, w: &[&[f64]], y: usize, acts: &[Vec<f64>], delta: &mut [Vec<f64>], grad: &mut Params) {
        let l = self.num_layers();
        delta[l].copy_from_slice(&acts[l]);
        delta[l][y] -= 1.0;
        for j in (0..l).rev() {
            let (i, o) = (self.dims[j], self.dims[j + 1]);
            let g = &mut grad[j];
            let (gw, gb) = g.split_at_mut(i * o);
            let (lower, upper) = delta.split_at_mut(j + 1);
            let d_out = &upper[0];
            for r in 0..o {
                let dr = d_out[r];
                for (gv, a) in gw[r * i..(r + 1) * i].iter_mut().zip(&acts[j]) {
                    *gv += dr * a;
                }
                gb[r] += dr;
            }
            if j > 0 {
                let weights = &w[j][..i * o];
                let d_in = &mut lower[j];
                for (c, d) in d_in.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for r in 0..o {
                        s += weights[r * i + c] * d_out[r];
                    }
                    let a = acts[j][c];
                    *d = s * (1.0 - a * a);
                }
            }
        }
    }
}

/// Borrowed view of every layer.
pub fn layers(p: &Params) -> Vec<&[f64]> {
    p.iter().map(Vec::as_slice).collect()
}

pub fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}
