//! Semi-offline value functions.
//!
//! `Q^t` is the expected cost of steps `t..=T` given the simulated masks of
//! steps `1..=t` and the retrospective history through step `t - 1`. `V^t`
//! is the same quantity one step earlier in the action sequence, so
//! `V^t = sum_a pi_alpha(a | simulated history) Q^{t+1}(.., a)`; it is
//! computed from the fitted `Q^{t+1}` by enumerating the target policy.
//!
//! Fitting runs backwards. Trajectories of the simulated dataset that share
//! a parent and a mask prefix form one regression row with target
//! `C'^t + V^t`. Rows are weighted by their simulated probability times
//! `pi_alpha / pi_sim` at step `t`: the blocked simulation picks `a'^t` with
//! a probability that depends on the retrospective `A^t`, and this ratio
//! undoes that dependence so the regression targets the identified law.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Record};
use crate::error::{AfapeError, Result};
use crate::mask::{StepMask, SuperfeatureMap};
use crate::panel::ObservedPanel;
use crate::policy::Policy;
use crate::simulate::SimDataset;

use super::mlp::{fit_regressor, Regressor, TrainConfig};

/// Encodes `(a'^1..a'^t, x^0..x^{t-1}, a^1..a^{t-1})` as a flat vector;
/// missing cells become training means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QEncoder {
    pub k: usize,
    pub d: usize,
    pub horizon: usize,
    pub means: Vec<Vec<f64>>,
}

impl QEncoder {
    pub fn new(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(AfapeError::invalid("encoder needs a non-empty training split"));
        }
        Ok(Self {
            k: train.map.len(),
            d: train.map.n_sub(),
            horizon: train.horizon,
            means: train.row_means(),
        })
    }

    pub fn dim(&self, t: usize) -> usize {
        t * self.k + t * self.d + (t - 1) * self.k
    }

    pub fn encode(&self, t: usize, a_prime: &[StepMask], parent: &Record, out: &mut Vec<f64>) {
        out.clear();
        let bit = |b: bool| if b { 1.0 } else { 0.0 };
        for m in &a_prime[..t] {
            out.extend(m.iter().map(bit));
        }
        for r in 0..t {
            parent.observed.extend_imputed(r, &self.means[r], out);
        }
        for m in &parent.masks.steps()[..t - 1] {
            out.extend(m.iter().map(bit));
        }
    }
}

/// Acquired panel of the simulated history `a_prime` (rows past its length
/// stay missing).
pub fn simulated_history(parent: &Record, a_prime: &[StepMask], map: &SuperfeatureMap) -> ObservedPanel {
    let rows = parent.observed.rows();
    let mut p = ObservedPanel::missing(rows, parent.observed.cols());
    for j in 0..p.cols() {
        p.set(0, j, parent.observed.get(0, j));
    }
    for (i, m) in a_prime.iter().enumerate() {
        p.reveal_row(i + 1, &parent.observed, *m, map);
    }
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSemiModel {
    pub encoder: QEncoder,
    /// `nets[t - 1]` predicts `Q^t`.
    pub nets: Vec<Regressor>,
    #[serde(skip)]
    pub train_loss: Vec<Vec<f64>>,
}

impl QSemiModel {
    /// `Q = V = 0` everywhere.
    pub fn zero(encoder: QEncoder) -> Self {
        let nets = (1..=encoder.horizon)
            .map(|t| Regressor::constant(0.0, encoder.dim(t)))
            .collect();
        Self {
            encoder,
            nets,
            train_loss: vec![],
        }
    }

    pub fn horizon(&self) -> usize {
        self.nets.len()
    }

    /// `a_prime` holds (at least) the masks of steps `1..=t`.
    pub fn q_value(&self, t: usize, a_prime: &[StepMask], parent: &Record) -> f64 {
        let mut x = Vec::with_capacity(self.encoder.dim(t));
        self.encoder.encode(t, a_prime, parent, &mut x);
        self.nets[t - 1].predict(&x)
    }

    /// `V^t` after the simulated masks `a_prime[..t]`; `V^T = 0`.
    pub fn v_value(&self, t: usize, a_prime: &[StepMask], parent: &Record, policy: &Policy, map: &SuperfeatureMap) -> f64 {
        if t >= self.horizon() {
            return 0.0;
        }
        let hist = simulated_history(parent, &a_prime[..t], map);
        let dist = policy.dist(t + 1, &hist, &a_prime[..t]);
        let mut next: Vec<StepMask> = a_prime[..t].to_vec();
        next.push(StepMask::zeros(map.len()));
        let mut x = Vec::with_capacity(self.encoder.dim(t + 1));
        let mut v = 0.0;
        for &(a, p) in dist.support() {
            if p == 0.0 {
                continue;
            }
            next[t] = a;
            self.encoder.encode(t + 1, &next, parent, &mut x);
            v += p * self.nets[t].predict(&x);
        }
        v
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// One regression row: a distinct `(parent, a'^1..a'^t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QNode {
    pub parent: usize,
    /// A simulated record carrying the prefix.
    pub leaf: usize,
    /// Summed simulated probability of the prefix.
    pub mass: f64,
}

/// Groups consecutive simulated records with equal step-`t` prefixes.
pub fn q_nodes(sim: &SimDataset, t: usize) -> Vec<QNode> {
    let mut out: Vec<QNode> = Vec::new();
    for (i, range) in sim.ranges.iter().enumerate() {
        let start = out.len();
        for li in range.clone() {
            let prefix = &sim.records[li].masks[..t];
            if out.len() > start {
                let last = out.last_mut().expect("non-empty");
                if sim.records[last.leaf].masks[..t] == *prefix {
                    last.mass += sim.records[li].mass;
                    continue;
                }
            }
            out.push(QNode {
                parent: i,
                leaf: li,
                mass: sim.records[li].mass,
            });
        }
    }
    out
}

/// Backward fit of `Q^T, ..., Q^1` on the simulated dataset of `data`.
pub fn fit_q_semi(
    data: &Dataset,
    sim: &SimDataset,
    policy: &Policy,
    encoder: QEncoder,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<QSemiModel> {
    if sim.records.is_empty() {
        return Err(AfapeError::invalid("simulated dataset is empty"));
    }
    if sim.n_parents() != data.len() {
        return Err(AfapeError::invalid("simulated dataset does not belong to this split"));
    }
    let map = &data.map;
    let horizon = encoder.horizon;
    let mut model = QSemiModel::zero(encoder);
    model.train_loss = vec![vec![]; horizon];
    for t in (1..=horizon).rev() {
        let nodes = q_nodes(sim, t);
        let dim = model.encoder.dim(t);
        let rows: Vec<(Vec<f64>, f64, f64)> = nodes
            .par_iter()
            .map(|n| {
                let rec = &sim.records[n.leaf];
                let parent = &data.records[n.parent];
                let mut x = Vec::with_capacity(dim);
                model.encoder.encode(t, &rec.masks, parent, &mut x);
                let y = rec.costs[t - 1] + model.v_value(t, &rec.masks, parent, policy, map);
                let w = n.mass * rec.p_alpha[t - 1] / rec.p_sim[t - 1];
                (x, y, w)
            })
            .collect();
        let mut xs = Vec::with_capacity(rows.len() * dim);
        let mut ys = Vec::with_capacity(rows.len());
        let mut ws = Vec::with_capacity(rows.len());
        for (x, y, w) in rows {
            xs.extend(x);
            ys.push(y);
            ws.push(w);
        }
        let out = fit_regressor(&xs, dim, &ys, &ws, cfg, seed, t as u64)
            .map_err(|e| AfapeError::Fit(format!("Q at step {t}: {e}")))?;
        model.nets[t - 1] = out.model;
        model.train_loss[t - 1] = out.epoch_loss;
    }
    Ok(model)
}
