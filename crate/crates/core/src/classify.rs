//! Impute-then-regress per-step classifier.
//!
//! Step `t` predicts `Y^t` from the acquired rows `0..=t`, with missing cells
//! filled by per-row training means, concatenated with the mask bits of
//! steps `1..=t`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{AfapeError, Result};
use crate::mask::{MaskTrajectory, StepMask};
use crate::panel::{remask, ObservedPanel};
use crate::rng::{stream, Purpose};

/// Anything that turns an acquired history into a binary prediction.
pub trait Classifier: Sync {
    /// `panel` rows `0..=t` hold the acquired cells; `masks` are steps `1..=t`.
    fn predict(&self, t: usize, panel: &ObservedPanel, masks: &[StepMask]) -> u8;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub subsample_p: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            subsample_p: 0.5,
            learning_rate: 0.1,
            epochs: 500,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    /// `means[r]` fills missing cells of panel row `r`.
    pub means: Vec<Vec<f64>>,
    /// `weights[t - 1]` scores step `t`; the last entry is the bias.
    pub weights: Vec<Vec<f64>>,
    /// Training log-loss per epoch, per step.
    #[serde(skip)]
    pub loss_trace: Vec<Vec<f64>>,
}

impl ClassifierModel {
    pub fn horizon(&self) -> usize {
        self.weights.len()
    }

    fn features(&self, t: usize, panel: &ObservedPanel, masks: &[StepMask], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..=t {
            panel.extend_imputed(r, &self.means[r], out);
        }
        for m in &masks[..t] {
            out.extend(m.iter().map(|b| if b { 1.0 } else { 0.0 }));
        }
    }

    pub fn score(&self, t: usize, panel: &ObservedPanel, masks: &[StepMask]) -> f64 {
        let mut x = Vec::new();
        self.features(t, panel, masks, &mut x);
        let w = &self.weights[t - 1];
        x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + w[w.len() - 1]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl Classifier for ClassifierModel {
    fn predict(&self, t: usize, panel: &ObservedPanel, masks: &[StepMask]) -> u8 {
        // p >= 0.5 <=> score >= 0; ties go to class 1
        u8::from(self.score(t, panel, masks) >= 0.0)
    }
}

/// Thins costly acquisitions with independent Bernoulli(`p`) draws.
fn thin(masks: &MaskTrajectory, p: f64, free: StepMask, rng: &mut impl Rng) -> MaskTrajectory {
    let steps = masks
        .steps()
        .iter()
        .map(|m| {
            let mut out = *m;
            for k in 0..m.len() {
                if m.get(k) && !free.get(k) && rng.random::<f64>() >= p {
                    out = out.with(k, false);
                }
            }
            out
        })
        .collect();
    MaskTrajectory::new(steps).expect("same widths as input")
}

pub fn fit_classifier(train: &Dataset, cfg: &ClassifierConfig, seed: u64) -> Result<ClassifierModel> {
    if train.is_empty() {
        return Err(AfapeError::invalid("classifier training split is empty"));
    }
    if !(0.0..=1.0).contains(&cfg.subsample_p) {
        return Err(AfapeError::config("subsample_p must lie in [0, 1]"));
    }
    let map = &train.map;
    let horizon = train.horizon;
    let d = map.n_sub();
    let free = map.free_mask();

    let thinned: Vec<(ObservedPanel, MaskTrajectory)> = train
        .records
        .iter()
        .map(|r| {
            let mut rng = stream(seed, r.id, Purpose::Thinning);
            let masks = thin(&r.masks, cfg.subsample_p, free, &mut rng);
            let obs = remask(&r.observed, &masks, map).expect("shapes validated on load");
            (obs, masks)
        })
        .collect();

    let mut means = vec![vec![0.0; d]; horizon + 1];
    for (r, row_mean) in means.iter_mut().enumerate() {
        for (j, m) in row_mean.iter_mut().enumerate() {
            let (mut s, mut c) = (0.0, 0usize);
            for (obs, _) in &thinned {
                if let Some(v) = obs.get(r, j) {
                    s += v;
                    c += 1;
                }
            }
            if c > 0 {
                *m = s / c as f64;
            }
        }
    }

    let mut model = ClassifierModel {
        means,
        weights: Vec::with_capacity(horizon),
        loss_trace: Vec::with_capacity(horizon),
    };
    for t in 1..=horizon {
        let mut xs = Vec::new();
        let mut buf = Vec::new();
        for (obs, masks) in &thinned {
            model.features(t, obs, masks.steps(), &mut buf);
            xs.extend_from_slice(&buf);
        }
        let ys: Vec<f64> = train.records.iter().map(|r| f64::from(r.labels.at(t))).collect();
        let (w, trace) = logistic_gd(&xs, &ys, buf.len(), cfg);
        model.weights.push(w);
        model.loss_trace.push(trace);
    }
    Ok(model)
}

/// Full-batch gradient descent on the L2-penalized mean log-loss.
/// Returns weights (bias last) and the loss before each update.
fn logistic_gd(xs: &[f64], ys: &[f64], dim: usize, cfg: &ClassifierConfig) -> (Vec<f64>, Vec<f64>) {
    let n = ys.len();
    let mut w = vec![0.0; dim + 1];
    let mut grad = vec![0.0; dim + 1];
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for (x, &y) in xs.chunks_exact(dim).zip(ys) {
            let z = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + w[dim];
            // log(1 + e^z) - y z, computed stably
            loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
            let r = sigmoid(z) - y;
            for (g, a) in grad.iter_mut().zip(x) {
                *g += r * a;
            }
            grad[dim] += r;
        }
        let inv = 1.0 / n as f64;
        let penalty: f64 = w[..dim].iter().map(|v| v * v).sum::<f64>() * 0.5 * cfg.l2;
        trace.push(loss * inv + penalty);
        for j in 0..=dim {
            let reg = if j < dim { cfg.l2 * w[j] } else { 0.0 };
            w[j] -= cfg.learning_rate * (grad[j] * inv + reg);
        }
    }
    (w, trace)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
