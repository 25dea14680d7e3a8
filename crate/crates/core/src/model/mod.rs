//! Recurrent mask estimator: stacked uni-directional LSTMs over compressed
//! magnitude frames, then a sigmoid layer emitting near and far masks.
//!
//! Parameters live in one flat vector so the optimizer and checkpoint code
//! can treat them uniformly.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use train::{
    adam_step, log_path, loss_and_grad, predict_masks, train, AdamState, Batch, ManifestSource,
    TrainConfig, TrainExample, TrainLogRow, TrainOutcome, TrainSource,
};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub depth: usize,
    pub width: usize,
    pub n_freq: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small enough to train in minutes on a laptop.
    pub fn desk() -> Self {
        Self {
            depth: 1,
            width: 32,
            n_freq: 257,
            seed: 0,
        }
    }

    pub fn large() -> Self {
        Self {
            depth: 4,
            width: 400,
            n_freq: 257,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.n_freq < 2 {
            return Err(Error::InvalidConfig(format!(
                "model needs depth >= 1, width >= 1 and n_freq >= 2, got {self:?}"
            )));
        }
        Ok(())
    }

    /// STFT window whose one-sided spectrum has `n_freq` bins.
    pub fn window_len(&self) -> usize {
        2 * (self.n_freq - 1)
    }
}

/// Offsets of one LSTM layer's tensors in the flat parameter vector.
/// Gate rows are ordered input, forget, cell, output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LayerLayout {
    pub d_in: usize,
    pub w: usize,
    pub u: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub layers: Vec<LayerLayout>,
    pub out_w: usize,
    pub out_b: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let n = cfg.width;
        let mut off = 0;
        let mut layers = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            let d_in = if l == 0 { cfg.n_freq } else { n };
            let w = off;
            let u = w + 4 * n * d_in;
            let b = u + 4 * n * n;
            off = b + 4 * n;
            layers.push(LayerLayout { d_in, w, u, b });
        }
        let out_w = off;
        let out_b = out_w + 2 * cfg.n_freq * n;
        Self {
            layers,
            out_w,
            out_b,
            total: out_b + 2 * cfg.n_freq,
        }
    }

    /// `(name, shape)` of every tensor in storage order.
    pub fn tensors(&self, cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let n = cfg.width;
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("lstm{l}.w"), vec![4 * n, layer.d_in]));
            out.push((format!("lstm{l}.u"), vec![4 * n, n]));
            out.push((format!("lstm{l}.b"), vec![4 * n]));
        }
        out.push(("out.w".into(), vec![2 * cfg.n_freq, n]));
        out.push(("out.b".into(), vec![2 * cfg.n_freq]));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Vec<f64>,
    pub(crate) layout: Layout,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// y[r] += Σ_c m[r, c] x[c] for a row-major `rows × x.len()` block.
fn gemv_acc(m: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = x.len();
    for (r, out) in y.iter_mut().enumerate() {
        let row = &m[r * cols..(r + 1) * cols];
        *out += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

// x[c] += Σ_r m[r, c] y[r]
fn gemv_t_acc(m: &[f64], y: &[f64], x: &mut [f64]) {
    let cols = x.len();
    for (r, yr) in y.iter().enumerate() {
        if *yr == 0.0 {
            continue;
        }
        let row = &m[r * cols..(r + 1) * cols];
        for (o, a) in x.iter_mut().zip(row) {
            *o += a * yr;
        }
    }
}

// m[r, c] += y[r] x[c]
fn outer_acc(m: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, yr) in y.iter().enumerate() {
        if *yr == 0.0 {
            continue;
        }
        let row = &mut m[r * cols..(r + 1) * cols];
        for (o, a) in row.iter_mut().zip(x) {
            *o += a * yr;
        }
    }
}

/// Activations kept from a forward pass for the backward pass.
pub(crate) struct ForwardCache {
    n_frames: usize,
    /// Per layer, per frame: gate activations `[i, f, g, o]` (4N).
    gates: Vec<Vec<f64>>,
    /// Per layer, `(T + 1) × N`, row 0 the zero initial state.
    cells: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
    input: Vec<f64>,
    /// `T × 2F` sigmoid outputs.
    pub masks: Vec<f64>,
}

impl Model {
    /// Weights uniform in `±1/√N`, biases zero except the forget gate at
    /// +1. Values are rounded to f32 so that a checkpoint reproduces the
    /// model exactly.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let n = config.width;
        let bound = 1.0 / (n as f64).sqrt();
        let mut rng = stream_rng(config.seed, Stream::Init, 0);
        let mut params = vec![0.0; layout.total];
        for layer in &layout.layers {
            for p in &mut params[layer.w..layer.b] {
                *p = rng.gen_range(-bound..bound);
            }
            for p in &mut params[layer.b + n..layer.b + 2 * n] {
                *p = 1.0;
            }
        }
        for p in &mut params[layout.out_w..layout.out_b] {
            *p = rng.gen_range(-bound..bound);
        }
        for p in &mut params {
            *p = *p as f32 as f64;
        }
        Ok(Self {
            config: config.clone(),
            params,
            layout,
        })
    }

    pub fn from_params(config: &ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        if params.len() != layout.total {
            return Err(Error::shape(
                format!("{} parameters", layout.total),
                format!("{} parameters", params.len()),
            ));
        }
        Ok(Self {
            config: config.clone(),
            params,
            layout,
        })
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    pub(crate) fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        let f = self.config.n_freq;
        let n = self.config.width;
        if input.len() % f != 0 {
            return Err(Error::shape(
                format!("a multiple of {f} values"),
                input.len(),
            ));
        }
        let t_len = input.len() / f;
        let p = &self.params;
        let mut gates = Vec::with_capacity(self.config.depth);
        let mut cells = Vec::with_capacity(self.config.depth);
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(self.config.depth);
        let mut a = vec![0.0; 4 * n];
        for (l, layer) in self.layout.layers.iter().enumerate() {
            let d_in = layer.d_in;
            let w = &p[layer.w..layer.w + 4 * n * d_in];
            let u = &p[layer.u..layer.u + 4 * n * n];
            let b = &p[layer.b..layer.b + 4 * n];
            let mut g_all = vec![0.0; t_len * 4 * n];
            let mut c_all = vec![0.0; (t_len + 1) * n];
            let mut h_all = vec![0.0; (t_len + 1) * n];
            for t in 0..t_len {
                let x = if l == 0 {
                    &input[t * f..(t + 1) * f]
                } else {
                    &hidden[l - 1][(t + 1) * n..(t + 2) * n]
                };
                a.copy_from_slice(b);
                gemv_acc(w, x, &mut a);
                gemv_acc(u, &h_all[t * n..(t + 1) * n], &mut a);
                let g = &mut g_all[t * 4 * n..(t + 1) * 4 * n];
                for k in 0..n {
                    g[k] = sigmoid(a[k]);
                    g[n + k] = sigmoid(a[n + k]);
                    g[2 * n + k] = a[2 * n + k].tanh();
                    g[3 * n + k] = sigmoid(a[3 * n + k]);
                }
                for k in 0..n {
                    let c = g[n + k] * c_all[t * n + k] + g[k] * g[2 * n + k];
                    c_all[(t + 1) * n + k] = c;
                    h_all[(t + 1) * n + k] = g[3 * n + k] * c.tanh();
                }
            }
            gates.push(g_all);
            cells.push(c_all);
            hidden.push(h_all);
        }
        let top = &hidden[self.config.depth - 1];
        let ow = &p[self.layout.out_w..self.layout.out_b];
        let ob = &p[self.layout.out_b..self.layout.total];
        let mut masks = vec![0.0; t_len * 2 * f];
        for t in 0..t_len {
            let z = &mut masks[t * 2 * f..(t + 1) * 2 * f];
            z.copy_from_slice(ob);
            gemv_acc(ow, &top[(t + 1) * n..(t + 2) * n], z);
            for v in z.iter_mut() {
                *v = sigmoid(*v);
            }
        }
        Ok(ForwardCache {
            n_frames: t_len,
            gates,
            cells,
            hidden,
            input: input.to_vec(),
            masks,
        })
    }

    /// Near and far masks, each `T × F` row-major, from `T × F` compressed
    /// magnitude frames.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let cache = self.forward_cached(input)?;
        Ok(split_masks(&cache.masks, self.config.n_freq))
    }

    /// Gradient of the parameters given `d loss / d mask` (`T × 2F`, near
    /// block first in each frame).
    pub(crate) fn backward(&self, cache: &ForwardCache, d_masks: &[f64], grad: &mut [f64]) {
        let f = self.config.n_freq;
        let n = self.config.width;
        let t_len = cache.n_frames;
        let p = &self.params;
        let depth = self.config.depth;
        let ow = &p[self.layout.out_w..self.layout.out_b];

        // Output layer.
        let mut dh_ext = vec![0.0; t_len * n];
        let mut dz = vec![0.0; 2 * f];
        {
            let top = &cache.hidden[depth - 1];
            let (gw, rest) =
                grad[self.layout.out_w..].split_at_mut(self.layout.out_b - self.layout.out_w);
            let gb = &mut rest[..2 * f];
            for t in 0..t_len {
                let m = &cache.masks[t * 2 * f..(t + 1) * 2 * f];
                let dm = &d_masks[t * 2 * f..(t + 1) * 2 * f];
                for k in 0..2 * f {
                    dz[k] = dm[k] * m[k] * (1.0 - m[k]);
                    gb[k] += dz[k];
                }
                let h = &top[(t + 1) * n..(t + 2) * n];
                outer_acc(gw, &dz, h);
                gemv_t_acc(ow, &dz, &mut dh_ext[t * n..(t + 1) * n]);
            }
        }

        // LSTM layers, top down, each by backpropagation through time.
        let mut da = vec![0.0; 4 * n];
        for l in (0..depth).rev() {
            let layer = self.layout.layers[l];
            let d_in = layer.d_in;
            let w = &p[layer.w..layer.w + 4 * n * d_in];
            let u = &p[layer.u..layer.u + 4 * n * n];
            let gates = &cache.gates[l];
            let cells = &cache.cells[l];
            let hidden = &cache.hidden[l];
            let mut dx_all = vec![0.0; if l > 0 { t_len * n } else { 0 }];
            let mut dh_next = vec![0.0; n];
            let mut dc_next = vec![0.0; n];
            let mut dh_rec = vec![0.0; n];
            for t in (0..t_len).rev() {
                let g = &gates[t * 4 * n..(t + 1) * 4 * n];
                for k in 0..n {
                    let (i, fg, gg, o) = (g[k], g[n + k], g[2 * n + k], g[3 * n + k]);
                    let c = cells[(t + 1) * n + k];
                    let c_prev = cells[t * n + k];
                    let tc = c.tanh();
                    let dh = dh_ext[t * n + k] + dh_next[k];
                    let d_o = dh * tc;
                    let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                    da[k] = dc * gg * i * (1.0 - i);
                    da[n + k] = dc * c_prev * fg * (1.0 - fg);
                    da[2 * n + k] = dc * i * (1.0 - gg * gg);
                    da[3 * n + k] = d_o * o * (1.0 - o);
                    dc_next[k] = dc * fg;
                }
                let x = if l == 0 {
                    &cache.input[t * f..(t + 1) * f]
                } else {
                    &cache.hidden[l - 1][(t + 1) * n..(t + 2) * n]
                };
                let h_prev = &hidden[t * n..(t + 1) * n];
                outer_acc(&mut grad[layer.w..layer.w + 4 * n * d_in], &da, x);
                outer_acc(&mut grad[layer.u..layer.u + 4 * n * n], &da, h_prev);
                for (gb, d) in grad[layer.b..layer.b + 4 * n].iter_mut().zip(&da) {
                    *gb += d;
                }
                dh_rec.iter_mut().for_each(|v| *v = 0.0);
                gemv_t_acc(u, &da, &mut dh_rec);
                dh_next.copy_from_slice(&dh_rec);
                if l > 0 {
                    gemv_t_acc(w, &da, &mut dx_all[t * n..(t + 1) * n]);
                }
            }
            dh_ext = dx_all;
        }
    }
}

pub(crate) fn split_masks(masks: &[f64], f: usize) -> (Vec<f64>, Vec<f64>) {
    let t_len = masks.len() / (2 * f);
    let mut near = Vec::with_capacity(t_len * f);
    let mut far = Vec::with_capacity(t_len * f);
    for t in 0..t_len {
        near.extend_from_slice(&masks[t * 2 * f..t * 2 * f + f]);
        far.extend_from_slice(&masks[t * 2 * f + f..(t + 1) * 2 * f]);
    }
    (near, far)
}
