//! Dense tanh networks over flat parameter slices, plus Adam.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Layer widths of a fully connected network: input, hidden..., output.
///
/// Parameters live in a caller-owned flat slice; each layer stores its
/// `out x in` weight matrix row-major followed by its bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpLayout {
    sizes: Vec<usize>,
}

impl MlpLayout {
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2, "a network needs input and output widths");
        Self { sizes }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Scaled-normal weights (std `gain / sqrt(fan_in)`), zero biases.
    /// The output layer uses `output_gain` instead of `gain`.
    pub fn init(&self, params: &mut [f64], gain: f64, output_gain: f64, rng: &mut impl Rng) {
        let mut offset = 0;
        let n_layers = self.sizes.len() - 1;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let g = if l + 1 == n_layers { output_gain } else { gain };
            let std = g / (fan_in as f64).sqrt();
            for p in &mut params[offset..offset + fan_in * fan_out] {
                let z: f64 = StandardNormal.sample(rng);
                *p = z * std;
            }
            offset += fan_in * fan_out;
            params[offset..offset + fan_out].iter_mut().for_each(|b| *b = 0.0);
            offset += fan_out;
        }
    }

    /// Forward pass; when `cache` is given it receives the input of every layer.
    pub fn forward(&self, params: &[f64], input: &[f64], mut cache: Option<&mut Vec<Vec<f64>>>) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.input_dim());
        let n_layers = self.sizes.len() - 1;
        let mut x = input.to_vec();
        let mut offset = 0;
        if let Some(c) = cache.as_deref_mut() {
            c.clear();
        }
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &params[offset..offset + fan_in * fan_out];
            let bias = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let mut y = bias.to_vec();
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                *yo += dot(row, &x);
            }
            if l + 1 < n_layers {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            if let Some(c) = cache.as_deref_mut() {
                c.push(std::mem::replace(&mut x, y));
            } else {
                x = y;
            }
        }
        x
    }

    /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
    pub fn backward(&self, params: &[f64], cache: &[Vec<f64>], d_out: &[f64], grad: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for w in self.sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let mut delta = d_out.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &cache[l];
            for o in 0..fan_out {
                let d = delta[o];
                if d != 0.0 {
                    let g = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
                    for (gi, xi) in g.iter_mut().zip(input) {
                        *gi += d * xi;
                    }
                }
                grad[off + fan_in * fan_out + o] += d;
            }
            if l > 0 {
                let weights = &params[off..off + fan_in * fan_out];
                let mut prev = vec![0.0; fan_in];
                for o in 0..fan_out {
                    let d = delta[o];
                    if d != 0.0 {
                        for (p, w) in prev.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                            *p += d * w;
                        }
                    }
                }
                // input[l] is the tanh output of the previous layer
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` so its L2 norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
