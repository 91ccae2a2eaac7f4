//! Synthetic data-generating processes for the five experiments.
//!
//! Features follow a per-column AR(1) recursion, labels a thresholded linear
//! score with a Bernoulli(0.3) fallback, and retrospective acquisitions a
//! per-superfeature logistic model of the previous row. Experiment 5 adds an
//! acquisition-dependent shift to the features, so acquisition and feature
//! generation are interleaved there.

use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::sigmoid;
use crate::data::{Dataset, Record};
use crate::error::{AfapeError, Result};
use crate::mask::{MaskTrajectory, StepMask, SuperfeatureMap};
use crate::panel::{apply_mask, FullPanel, LabelSeq, ObservedPanel};
use crate::rng::{stream, Purpose};
use crate::simulate::Episode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Experiment {
    E1,
    E2,
    E3,
    E4,
    E5,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [Self::E1, Self::E2, Self::E3, Self::E4, Self::E5];

    pub fn number(self) -> u8 {
        match self {
            Self::E1 => 1,
            Self::E2 => 2,
            Self::E3 => 3,
            Self::E4 => 4,
            Self::E5 => 5,
        }
    }

    /// Published complete-case ratio, as a fraction.
    pub fn reported_complete_case_ratio(self) -> f64 {
        match self {
            Self::E1 | Self::E5 => 0.1171,
            Self::E2 => 0.00007,
            Self::E3 => 0.0709,
            Self::E4 => 0.0963,
        }
    }

    /// Missingness depends on observed values only.
    pub fn is_mar(self) -> bool {
        !matches!(self, Self::E4)
    }

    /// Acquisitions leave the feature process untouched.
    pub fn has_no_direct_effect(self) -> bool {
        !matches!(self, Self::E5)
    }
}

impl FromStr for Experiment {
    type Err = AfapeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().trim_start_matches(['e', 'E']) {
            "1" => Ok(Self::E1),
            "2" => Ok(Self::E2),
            "3" => Ok(Self::E3),
            "4" => Ok(Self::E4),
            "5" => Ok(Self::E5),
            _ => Err(AfapeError::config(format!("unknown experiment {s:?}"))),
        }
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "E{}", self.number())
    }
}

/// Where the missingness score reads its covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovariateSource {
    /// Previous-row acquired values, missing cells read as 0.
    Observed,
    /// Previous-row counterfactual values, observed or not.
    Truth,
}

/// Linear logistic score over previous-row columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScore {
    pub intercept: f64,
    pub terms: Vec<(usize, f64)>,
}

impl LinearScore {
    pub fn eval(&self, row: impl Fn(usize) -> f64) -> f64 {
        self.intercept + self.terms.iter().map(|&(c, b)| b * row(c)).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BitMechanism {
    Constant(f64),
    Logistic(LinearScore),
}

/// Retrospective acquisition mechanism, one entry per superfeature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Missingness {
    pub bits: Vec<BitMechanism>,
    pub source: CovariateSource,
    /// When false, the step-1 score sees no lagged covariates (intercept only).
    pub lagged_first_step: bool,
}

impl Missingness {
    pub fn for_experiment(e: Experiment) -> Self {
        let logistic = |intercept: f64, terms: &[(usize, f64)]| {
            BitMechanism::Logistic(LinearScore {
                intercept,
                terms: terms.to_vec(),
            })
        };
        let (b1, b2, source) = match e {
            Experiment::E1 => {
                let s = logistic(0.8, &[(0, -3.0), (1, 0.02), (2, -0.02)]);
                (s.clone(), s, CovariateSource::Observed)
            }
            Experiment::E2 => (
                BitMechanism::Constant(0.2),
                BitMechanism::Constant(0.2),
                CovariateSource::Observed,
            ),
            Experiment::E3 => (
                BitMechanism::Constant(1.0),
                logistic(-0.5, &[(0, -2.0), (1, -0.1), (2, -0.1)]),
                CovariateSource::Observed,
            ),
            Experiment::E4 => (
                BitMechanism::Constant(1.0),
                logistic(-0.6, &[(2, -1.5), (3, -1.5)]),
                CovariateSource::Truth,
            ),
            Experiment::E5 => {
                let s = logistic(0.8, &[(0, -0.2), (1, -0.1), (2, 0.5)]);
                (s.clone(), s, CovariateSource::Observed)
            }
        };
        Self {
            bits: vec![BitMechanism::Constant(1.0), b1, b2],
            source,
            lagged_first_step: false,
        }
    }

    /// Columns read by any score.
    pub fn covariate_columns(&self) -> Vec<usize> {
        let mut cols: Vec<usize> = self
            .bits
            .iter()
            .filter_map(|b| match b {
                BitMechanism::Logistic(s) => Some(s.terms.iter().map(|&(c, _)| c)),
                BitMechanism::Constant(_) => None,
            })
            .flatten()
            .collect();
        cols.sort_unstable();
        cols.dedup();
        cols
    }

    /// `P(A_k^t = 1)` per superfeature given the previous row.
    pub fn bit_probs(&self, t: usize, prev_observed: &[Option<f64>], prev_truth: Option<&[f64]>) -> Vec<f64> {
        let lagged = t > 1 || self.lagged_first_step;
        let value = |c: usize| -> f64 {
            if !lagged {
                return 0.0;
            }
            match self.source {
                CovariateSource::Observed => prev_observed[c].unwrap_or(0.0),
                CovariateSource::Truth => prev_truth.map_or_else(|| prev_observed[c].unwrap_or(0.0), |r| r[c]),
            }
        };
        self.bits
            .iter()
            .map(|b| match b {
                BitMechanism::Constant(p) => *p,
                BitMechanism::Logistic(s) => sigmoid(s.eval(value)),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub experiment: Experiment,
    pub gamma: f64,
    pub sigma: f64,
    pub zeta1: f64,
    pub zeta2: f64,
    pub w: Vec<f64>,
    pub horizon: usize,
    pub n: usize,
    pub seed: u64,
    /// Shift per acquired superfeature at the previous step (Experiment 5).
    pub acquisition_shift: f64,
    pub fallback_label_p: f64,
    pub missingness: Missingness,
    pub map: SuperfeatureMap,
}

impl DgpConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            gamma: 0.2,
            sigma: 1.0,
            zeta1: 1.0,
            zeta2: 0.3,
            w: [1.0, 1.0, 2.0, 2.0].iter().map(|v| v / 6.0).collect(),
            horizon: 3,
            n: 100_000,
            seed: 0,
            acquisition_shift: if experiment == Experiment::E5 { 0.5 } else { 0.0 },
            fallback_label_p: 0.3,
            missingness: Missingness::for_experiment(experiment),
            map: SuperfeatureMap::experiment_default(),
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(AfapeError::config("gamma must lie in [0, 1)"));
        }
        if !(self.sigma > 0.0) {
            return Err(AfapeError::config("sigma must be positive"));
        }
        if self.w.len() != self.map.n_sub() {
            return Err(AfapeError::config("w length must equal the number of subfeatures"));
        }
        if self.missingness.bits.len() != self.map.len() {
            return Err(AfapeError::config("one missingness entry per superfeature required"));
        }
        if self.horizon == 0 {
            return Err(AfapeError::config("horizon must be at least 1"));
        }
        if let Some(&c) = self.missingness.covariate_columns().last() {
            if c >= self.map.n_sub() {
                return Err(AfapeError::config("missingness score column out of range"));
            }
        }
        Ok(())
    }

    pub fn cols(&self) -> usize {
        self.map.n_sub()
    }

    /// Linear label score of step `t` from rows `t - 1` and `t`.
    pub fn label_score(&self, prev: &[f64], cur: &[f64]) -> f64 {
        let dot = |r: &[f64]| r.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>();
        self.zeta1 * dot(cur) + self.zeta2 * dot(prev)
    }

    /// Label from the score and a uniform draw; `score > 0` is strict.
    pub fn label_from(&self, score: f64, u: f64) -> u8 {
        if score > 0.0 {
            1
        } else {
            u8::from(u < self.fallback_label_p)
        }
    }

    /// Closed-form variance of a feature at row `t`.
    pub fn feature_variance(&self, t: usize) -> f64 {
        let s2 = self.sigma * self.sigma;
        let mut v = s2;
        for _ in 0..t {
            v = self.gamma * self.gamma * v + (1.0 - self.gamma).powi(2) * s2;
        }
        v
    }
}

/// Per-record noise: `eps[t * d + j]` drives row `t`, `u[t - 1]` the label
/// fallback, `acq[(t - 1) * K + k]` the acquisition draw.
#[derive(Debug, Clone)]
pub struct Noise {
    pub eps: Vec<f64>,
    pub u: Vec<f64>,
    pub acq: Vec<f64>,
}

impl Noise {
    pub fn draw(cfg: &DgpConfig, id: u64) -> Self {
        let d = cfg.cols();
        let mut f = stream(cfg.seed, id, Purpose::Features);
        let eps = (0..(cfg.horizon + 1) * d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut f);
                cfg.sigma * z
            })
            .collect();
        let mut l = stream(cfg.seed, id, Purpose::Labels);
        let u = (0..cfg.horizon).map(|_| l.random()).collect();
        let mut a = stream(cfg.seed, id, Purpose::Acquisition);
        let acq = (0..cfg.horizon * cfg.map.len()).map(|_| a.random()).collect();
        Self { eps, u, acq }
    }

    /// Noise for an online evaluation episode, independent of the dataset.
    pub fn draw_environment(cfg: &DgpConfig, episode: u64) -> Self {
        let d = cfg.cols();
        let mut f = stream(cfg.seed, episode, Purpose::Environment);
        let eps = (0..(cfg.horizon + 1) * d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut f);
                cfg.sigma * z
            })
            .collect();
        let u = (0..cfg.horizon).map(|_| f.random()).collect();
        Self { eps, u, acq: Vec::new() }
    }
}

/// Row `t` of the feature recursion given the previous row.
fn next_row(cfg: &DgpConfig, prev: &[f64], eps: &[f64], shift: f64, out: &mut [f64]) {
    for j in 0..out.len() {
        out[j] = cfg.gamma * prev[j] + (1.0 - cfg.gamma) * eps[j] + shift;
    }
}

fn shift_for(cfg: &DgpConfig, t: usize, prev_mask: Option<StepMask>) -> f64 {
    match prev_mask {
        Some(m) if t > 1 && cfg.acquisition_shift != 0.0 => cfg.acquisition_shift * f64::from(m.count()),
        _ => 0.0,
    }
}

/// Counterfactual features without acquisition feedback.
pub fn generate_features<R: Rng + ?Sized>(cfg: &DgpConfig, rng: &mut R) -> FullPanel {
    let d = cfg.cols();
    let eps: Vec<f64> = (0..(cfg.horizon + 1) * d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut *rng);
            cfg.sigma * z
        })
        .collect();
    features_from_noise(cfg, &eps, &[])
}

fn features_from_noise(cfg: &DgpConfig, eps: &[f64], masks: &[StepMask]) -> FullPanel {
    let d = cfg.cols();
    let mut values = vec![0.0; (cfg.horizon + 1) * d];
    values[..d].copy_from_slice(&eps[..d]);
    for t in 1..=cfg.horizon {
        let shift = shift_for(cfg, t, masks.get(t.wrapping_sub(2)).copied());
        let (head, tail) = values.split_at_mut(t * d);
        next_row(cfg, &head[(t - 1) * d..], &eps[t * d..(t + 1) * d], shift, &mut tail[..d]);
    }
    FullPanel::new(cfg.horizon + 1, d, values).expect("finite by construction")
}

pub fn generate_labels<R: Rng + ?Sized>(panel: &FullPanel, cfg: &DgpConfig, rng: &mut R) -> LabelSeq {
    let u: Vec<f64> = (0..cfg.horizon).map(|_| rng.random()).collect();
    labels_from_noise(panel, cfg, &u)
}

fn labels_from_noise(panel: &FullPanel, cfg: &DgpConfig, u: &[f64]) -> LabelSeq {
    let y = (1..=cfg.horizon)
        .map(|t| cfg.label_from(cfg.label_score(panel.row(t - 1), panel.row(t)), u[t - 1]))
        .collect();
    LabelSeq::new(y).expect("binary by construction")
}

/// Retrospective acquisition on a fixed counterfactual panel.
///
/// Experiment 5 feeds acquisitions back into the features and therefore
/// goes through [`generate_record`] instead.
pub fn retro_acquire<R: Rng + ?Sized>(
    panel: &FullPanel,
    cfg: &DgpConfig,
    rng: &mut R,
) -> Result<(MaskTrajectory, ObservedPanel)> {
    if !cfg.experiment.has_no_direct_effect() {
        return Err(AfapeError::config(
            "experiment 5 interleaves acquisition with feature generation; use generate_record",
        ));
    }
    let k = cfg.map.len();
    let draws: Vec<f64> = (0..cfg.horizon * k).map(|_| rng.random()).collect();
    let masks = acquire_from_noise(panel, cfg, &draws);
    let obs = apply_mask(panel, &masks, &cfg.map)?;
    Ok((masks, obs))
}

fn acquire_step(cfg: &DgpConfig, t: usize, panel: &FullPanel, prev_mask: Option<StepMask>, draws: &[f64]) -> StepMask {
    let prev_truth = panel.row(t - 1);
    let prev_obs: Vec<Option<f64>> = (0..cfg.cols())
        .map(|j| match prev_mask {
            Some(m) if !m.get(cfg.map.owner(j)) => None,
            _ => Some(prev_truth[j]),
        })
        .collect();
    let probs = cfg.missingness.bit_probs(t, &prev_obs, Some(prev_truth));
    let mut m = StepMask::zeros(cfg.map.len());
    for (kk, &p) in probs.iter().enumerate() {
        m = m.with(kk, draws[kk] < p);
    }
    m
}

fn acquire_from_noise(panel: &FullPanel, cfg: &DgpConfig, draws: &[f64]) -> MaskTrajectory {
    let k = cfg.map.len();
    let mut steps: Vec<StepMask> = Vec::with_capacity(cfg.horizon);
    for t in 1..=cfg.horizon {
        let m = acquire_step(cfg, t, panel, steps.last().copied(), &draws[(t - 1) * k..t * k]);
        steps.push(m);
    }
    MaskTrajectory::new(steps).expect("uniform widths")
}

/// One record, a pure function of `(cfg, id)`.
pub fn generate_record(cfg: &DgpConfig, id: u64) -> Record {
    let noise = Noise::draw(cfg, id);
    let (full, masks) = if cfg.experiment.has_no_direct_effect() {
        let full = features_from_noise(cfg, &noise.eps, &[]);
        let masks = acquire_from_noise(&full, cfg, &noise.acq);
        (full, masks)
    } else {
        // A^t reads row t-1; row t reads A^{t-1}; so alternate
        let k = cfg.map.len();
        let mut steps: Vec<StepMask> = Vec::with_capacity(cfg.horizon);
        let mut full = features_from_noise(cfg, &noise.eps, &[]);
        for t in 1..=cfg.horizon {
            let m = acquire_step(cfg, t, &full, steps.last().copied(), &noise.acq[(t - 1) * k..t * k]);
            steps.push(m);
            full = features_from_noise(cfg, &noise.eps, &steps);
        }
        (full, MaskTrajectory::new(steps).expect("uniform widths"))
    };
    let labels = labels_from_noise(&full, cfg, &noise.u);
    let observed = apply_mask(&full, &masks, &cfg.map).expect("shapes from cfg");
    Record::new(id, observed, masks, labels, Some(full), &cfg.map).expect("consistent by construction")
}

pub fn generate(cfg: &DgpConfig) -> Result<Dataset> {
    cfg.validate()?;
    let records: Vec<Record> = (0..cfg.n as u64).into_par_iter().map(|id| generate_record(cfg, id)).collect();
    Ok(Dataset::new(cfg.map.clone(), cfg.horizon, records))
}

/// An online episode of the data-generating process: rows depend on the
/// masks the acting agent chose earlier.
#[derive(Debug, Clone)]
pub struct EnvironmentEpisode<'a> {
    cfg: &'a DgpConfig,
    noise: Noise,
}

impl<'a> EnvironmentEpisode<'a> {
    pub fn new(cfg: &'a DgpConfig, episode: u64) -> Self {
        Self {
            cfg,
            noise: Noise::draw_environment(cfg, episode),
        }
    }

    fn panel(&self, prior: &[StepMask]) -> FullPanel {
        features_from_noise(self.cfg, &self.noise.eps, prior)
    }
}

impl Episode for EnvironmentEpisode<'_> {
    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn cols(&self) -> usize {
        self.cfg.cols()
    }

    fn row(&self, t: usize, prior: &[StepMask], out: &mut [Option<f64>]) {
        let p = self.panel(prior);
        for (o, &v) in out.iter_mut().zip(p.row(t)) {
            *o = Some(v);
        }
    }

    fn label(&self, t: usize, prior: &[StepMask]) -> u8 {
        let p = self.panel(prior);
        self.cfg
            .label_from(self.cfg.label_score(p.row(t - 1), p.row(t)), self.noise.u[t - 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use rand::SeedableRng;

    #[test]
    fn zero_noise_ar_step() {
        let cfg = DgpConfig::new(Experiment::E1);
        let mut out = [0.0; 4];
        next_row(&cfg, &[1.0; 4], &[0.0; 4], 0.0, &mut out);
        assert!((out[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn stationary_variance() {
        let cfg = DgpConfig::new(Experiment::E1).with_n(100_000).with_seed(11);
        let ds = generate(&cfg).unwrap();
        let vals: Vec<f64> = ds.records.iter().map(|r| r.truth.as_ref().unwrap().get(3, 1)).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        let limit = (1.0 - 0.2f64).powi(2) / (1.0 - 0.04);
        assert!((limit - 0.6667).abs() < 1e-3);
        assert!((v - cfg.feature_variance(3)).abs() < 0.02, "{v}");
        assert!((v - limit).abs() < 0.02, "{v}");
    }

    #[test]
    fn gamma_zero_gives_iid_rows() {
        let mut cfg = DgpConfig::new(Experiment::E1);
        cfg.gamma = 0.0;
        let mut rng = StreamRng::seed_from_u64(1);
        let n = 20_000;
        let (mut s01, mut s1) = (0.0, 0.0);
        for _ in 0..n {
            let p = generate_features(&cfg, &mut rng);
            s01 += p.get(1, 0) * p.get(2, 0);
            s1 += p.get(1, 0) * p.get(1, 0);
        }
        assert!((s1 / n as f64 - 1.0).abs() < 0.05);
        assert!((s01 / n as f64).abs() < 0.05);
    }

    #[test]
    fn label_rule() {
        let cfg = DgpConfig::new(Experiment::E1);
        assert_eq!(cfg.label_from(cfg.label_score(&[1.0; 4], &[1.0; 4]), 0.99), 1);
        assert_eq!(cfg.label_from(0.0, 0.29), 1);
        assert_eq!(cfg.label_from(0.0, 0.31), 0);
        let mut zero_w = cfg.clone();
        zero_w.w = vec![0.0; 4];
        let mut rng = StreamRng::seed_from_u64(3);
        let n = 20_000;
        let ones: usize = (0..n)
            .map(|_| {
                let p = generate_features(&zero_w, &mut rng);
                generate_labels(&p, &zero_w, &mut rng).as_slice().iter().map(|&y| y as usize).sum::<usize>()
            })
            .sum();
        let rate = ones as f64 / (3 * n) as f64;
        assert!((rate - 0.3).abs() < 0.01, "{rate}");
    }

    #[test]
    fn free_superfeature_always_acquired() {
        for e in Experiment::ALL {
            let ds = generate(&DgpConfig::new(e).with_n(2000)).unwrap();
            assert!(ds.records.iter().all(|r| r.masks.steps().iter().all(|m| m.get(0))));
        }
        let ds = generate(&DgpConfig::new(Experiment::E3).with_n(5000)).unwrap();
        assert!(ds.records.iter().all(|r| r.masks.steps().iter().all(|m| m.get(1))));
    }

    #[test]
    fn mnar_score_reads_truth() {
        let m = Missingness::for_experiment(Experiment::E4);
        let obs = [Some(0.0), Some(0.0), None, None];
        let truth = [0.0, 0.0, 2.0, 2.0];
        let p = m.bit_probs(2, &obs, Some(&truth));
        assert!((p[2] - sigmoid(-0.6 - 6.0)).abs() < 1e-15);
        assert_eq!(p[1], 1.0);
        let m1 = Missingness::for_experiment(Experiment::E1);
        let obs = [Some(1.0), None, None, None];
        let p = m1.bit_probs(2, &obs, Some(&[1.0, 5.0, 5.0, 5.0]));
        assert!((p[1] - sigmoid(0.8 - 3.0)).abs() < 1e-15);
        // step 1 is intercept only
        let p = m1.bit_probs(1, &[Some(2.0); 4], Some(&[2.0; 4]));
        assert!((p[1] - sigmoid(0.8)).abs() < 1e-15);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = DgpConfig::new(Experiment::E5).with_n(50).with_seed(9);
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shift_follows_previous_acquisitions() {
        let cfg = DgpConfig::new(Experiment::E5).with_n(1).with_seed(2);
        let r = generate_record(&cfg, 0);
        let noise = Noise::draw(&cfg, 0);
        let base = features_from_noise(&cfg, &noise.eps, &[]);
        let full = r.truth.unwrap();
        // row 1 has no shift
        assert_eq!(full.row(1), base.row(1));
        let expected = features_from_noise(&cfg, &noise.eps, r.masks.steps());
        assert_eq!(full, expected);
        let m1 = r.masks.at(1).count() as f64;
        let direct = 0.2 * full.get(1, 0) + 0.8 * noise.eps[2 * 4] + 0.5 * m1;
        assert!((full.get(2, 0) - direct).abs() < 1e-12);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut c = DgpConfig::new(Experiment::E1);
        c.gamma = 1.0;
        assert!(c.validate().is_err());
        let mut c = DgpConfig::new(Experiment::E1);
        c.w.pop();
        assert!(c.validate().is_err());
        assert!("e7".parse::<Experiment>().is_err());
        assert_eq!("E3".parse::<Experiment>().unwrap(), Experiment::E3);
    }
}
