//! Small fully connected ReLU regressor trained on weighted squared error.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{AfapeError, Result};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Optimizer {
    Adam,
    Sgd,
}

/// Mini-batch training settings. The step size decays linearly from
/// `learning_rate` to a tenth of it over the epochs, which removes most of
/// the iterate noise of the last epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16],
            learning_rate: 1e-3,
            batch: 256,
            epochs: 50,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(AfapeError::config("batch size and learning rate must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(AfapeError::config("hidden layers need at least one unit"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    inp: usize,
    out: usize,
    /// Row-major `out x inp`.
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (inp, out) = (w[0], w[1]);
                let he = Normal::new(0.0, (2.0 / inp as f64).sqrt()).expect("positive scale");
                Layer {
                    inp,
                    out,
                    w: (0..inp * out).map(|_| he.sample(rng)).collect(),
                    b: vec![0.0; out],
                }
            })
            .collect();
        Self { layers }
    }

    fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Forward pass keeping every layer's activation (`acts[0]` is the input).
    fn forward_into(&self, x: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.resize(self.layers.len() + 1, Vec::new());
        acts[0].clear();
        acts[0].extend_from_slice(x);
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let (head, tail) = acts.split_at_mut(li + 1);
            let a = &head[li];
            let z = &mut tail[0];
            z.clear();
            for o in 0..l.out {
                let row = &l.w[o * l.inp..(o + 1) * l.inp];
                let mut s = l.b[o];
                for (w, v) in row.iter().zip(a) {
                    s += w * v;
                }
                z.push(if li < last { s.max(0.0) } else { s });
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut acts = Vec::new();
        self.forward_into(x, &mut acts);
        acts[self.layers.len()][0]
    }

    /// Adds `scale * d(output)/d(params)` to `grad` (layout: per layer, w then b).
    fn backward(&self, acts: &[Vec<f64>], scale: f64, grad: &mut [f64], delta: &mut Vec<f64>, next: &mut Vec<f64>) {
        delta.clear();
        delta.push(scale);
        let mut offset = self.n_params();
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            offset -= l.w.len() + l.b.len();
            let a = &acts[li];
            let (gw, gb) = grad[offset..offset + l.w.len() + l.b.len()].split_at_mut(l.w.len());
            for o in 0..l.out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, v) in gw[o * l.inp..(o + 1) * l.inp].iter_mut().zip(a) {
                    *g += d * v;
                }
            }
            if li == 0 {
                break;
            }
            next.clear();
            next.resize(l.inp, 0.0);
            for o in 0..l.out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (n, w) in next.iter_mut().zip(&l.w[o * l.inp..(o + 1) * l.inp]) {
                    *n += d * w;
                }
            }
            // ReLU derivative of the previous layer
            for (n, v) in next.iter_mut().zip(a) {
                if *v <= 0.0 {
                    *n = 0.0;
                }
            }
            std::mem::swap(delta, next);
        }
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }
}

/// Network with input and target standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    /// `None` when the targets were constant.
    net: Option<Mlp>,
}

impl Regressor {
    pub fn constant(c: f64, dim: usize) -> Self {
        Self {
            x_mean: vec![0.0; dim],
            x_scale: vec![1.0; dim],
            y_mean: c,
            y_scale: 1.0,
            net: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.x_mean.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let Some(net) = &self.net else { return self.y_mean };
        let z: Vec<f64> = x
            .iter()
            .zip(&self.x_mean)
            .zip(&self.x_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        self.y_mean + self.y_scale * net.forward(&z)
    }
}

pub struct TrainOutput {
    pub model: Regressor,
    /// Per epoch, the weighted squared error (standardized units) of each
    /// sample at the moment its batch was evaluated, averaged.
    pub epoch_loss: Vec<f64>,
}

fn weighted_moments(vals: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    let (mut sw, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (v, w) in vals {
        sw += w;
        s1 += w * v;
        s2 += w * v * v;
    }
    let mean = s1 / sw;
    (mean, (s2 / sw - mean * mean).max(0.0).sqrt())
}

/// Fits `y ~ f(x)` minimizing `sum w (f(x) - y)^2 / sum w` by minibatches.
/// `x` is row-major with `dim` columns. `seed`/`id` fix the initialization
/// and the shuffles.
pub fn fit_regressor(
    x: &[f64],
    dim: usize,
    y: &[f64],
    w: &[f64],
    cfg: &TrainConfig,
    seed: u64,
    id: u64,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let n = y.len();
    if n == 0 || x.len() != n * dim || w.len() != n {
        return Err(AfapeError::Fit("empty or ragged regression data".into()));
    }
    let total_w: f64 = w.iter().sum();
    if !(total_w > 0.0) || w.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(AfapeError::Fit("regression weights must be non-negative with a positive sum".into()));
    }
    let (y_mean, y_sd) = weighted_moments(y.iter().copied().zip(w.iter().copied()));
    if y_sd < 1e-12 {
        return Ok(TrainOutput {
            model: Regressor::constant(y_mean, dim),
            epoch_loss: vec![],
        });
    }
    let mut x_mean = Vec::with_capacity(dim);
    let mut x_scale = Vec::with_capacity(dim);
    for j in 0..dim {
        let (m, s) = weighted_moments((0..n).map(|i| (x[i * dim + j], w[i])));
        x_mean.push(m);
        x_scale.push(if s > 1e-12 { s } else { 1.0 });
    }
    let xs: Vec<f64> = x
        .chunks_exact(dim.max(1))
        .flat_map(|r| r.iter().zip(&x_mean).zip(&x_scale).map(|((v, m), s)| (v - m) / s))
        .collect();
    let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_sd).collect();
    // weights normalized to mean one so the step size does not depend on n
    let ws: Vec<f64> = w.iter().map(|v| v * n as f64 / total_w).collect();

    let mut rng = stream(seed, id, Purpose::Training);
    let mut sizes = vec![dim];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let mut net = Mlp::new(&sizes, &mut rng);
    let p = net.n_params();
    let mut grad = vec![0.0; p];
    let (mut m1, mut m2) = (vec![0.0; p], vec![0.0; p]);
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..n).collect();
    let mut acts = Vec::new();
    let (mut delta, mut next) = (Vec::new(), Vec::new());
    let row = |i: usize| &xs[i * dim..(i + 1) * dim];

    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate * (1.0 - 0.9 * epoch as f64 / (cfg.epochs.max(2) - 1) as f64);
        let mut running = 0.0;
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                net.forward_into(row(i), &mut acts);
                let r = acts[acts.len() - 1][0] - ys[i];
                running += ws[i] * r * r;
                net.backward(&acts, 2.0 * ws[i] * r * inv, &mut grad, &mut delta, &mut next);
            }
            step += 1;
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (v, g) in net.params_mut().zip(&grad) {
                        *v -= lr * g;
                    }
                }
                Optimizer::Adam => {
                    let c1 = 1.0 - f64::powi(b1, step);
                    let c2 = 1.0 - f64::powi(b2, step);
                    for (((v, g), a), b) in net.params_mut().zip(&grad).zip(&mut m1).zip(&mut m2) {
                        *a = b1 * *a + (1.0 - b1) * g;
                        *b = b2 * *b + (1.0 - b2) * g * g;
                        *v -= lr * (*a / c1) / ((*b / c2).sqrt() + eps);
                    }
                }
            }
        }
        epoch_loss.push(running / n as f64);
    }
    Ok(TrainOutput {
        model: Regressor {
            x_mean,
            x_scale,
            y_mean,
            y_scale: y_sd,
            net: Some(net),
        },
        epoch_loss,
    })
}
