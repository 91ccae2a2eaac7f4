//! Retrospective acquisition model: one logistic regression per step and per
//! costly superfeature, reading previous-row columns (missing cells as 0).

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dgp::{BitMechanism, Experiment, Missingness};
use crate::error::{AfapeError, Result};
use crate::mask::{StepMask, SuperfeatureMap};
use crate::panel::ObservedPanel;

use super::logistic::{fit_logistic, predict_logistic};

/// Rows that enter each step's regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitRows {
    All,
    /// Only rows whose covariate cells are all acquired.
    CovariatesObserved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensitySpec {
    pub covariates: Vec<usize>,
    pub rows: FitRows,
}

impl PropensitySpec {
    /// Correctly specified covariate set for each experiment.
    pub fn for_experiment(e: Experiment) -> Self {
        match e {
            Experiment::E2 => Self {
                covariates: vec![],
                rows: FitRows::All,
            },
            Experiment::E4 => Self {
                covariates: vec![2, 3],
                rows: FitRows::CovariatesObserved,
            },
            Experiment::E1 | Experiment::E3 | Experiment::E5 => Self {
                covariates: vec![0, 1, 2],
                rows: FitRows::All,
            },
        }
    }

    /// The same model with one column left out.
    pub fn without(mut self, col: usize) -> Self {
        self.covariates.retain(|&c| c != col);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BitModel {
    /// Structurally constant in the training data.
    Forced(f64),
    /// `[intercept, slopes over covariates]`.
    Logistic(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub covariates: Vec<usize>,
    /// `steps[t - 1][k]`.
    pub steps: Vec<Vec<BitModel>>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl PropensityModel {
    pub fn fit(data: &Dataset, spec: &PropensitySpec) -> Result<Self> {
        if data.is_empty() {
            return Err(AfapeError::invalid("propensity training split is empty"));
        }
        let map = &data.map;
        let dim = spec.covariates.len();
        let mut steps = Vec::with_capacity(data.horizon);
        let mut warnings = Vec::new();
        for t in 1..=data.horizon {
            let mut xs = Vec::new();
            let mut rows = Vec::new();
            for (i, r) in data.records.iter().enumerate() {
                let prev = r.observed.row(t - 1);
                if spec.rows == FitRows::CovariatesObserved && spec.covariates.iter().any(|&c| prev[c].is_none()) {
                    continue;
                }
                xs.extend(spec.covariates.iter().map(|&c| prev[c].unwrap_or(0.0)));
                rows.push(i);
            }
            if rows.is_empty() {
                return Err(AfapeError::Fit(format!("no usable rows for the step-{t} propensity")));
            }
            let mut bits = Vec::with_capacity(map.len());
            for k in 0..map.len() {
                let ys: Vec<f64> = rows
                    .iter()
                    .map(|&i| f64::from(u8::from(data.records[i].masks.at(t).get(k))))
                    .collect();
                let mean = ys.iter().sum::<f64>() / ys.len() as f64;
                if mean == 0.0 || mean == 1.0 {
                    if !map.is_free(k) {
                        warnings.push(format!("step {t} superfeature {k} is constant ({mean}) in the data"));
                    }
                    bits.push(BitModel::Forced(mean));
                    continue;
                }
                let coef = fit_logistic(&xs, dim, &ys)
                    .map_err(|e| AfapeError::Fit(format!("step {t} superfeature {k}: {e}")))?;
                bits.push(BitModel::Logistic(coef));
            }
            steps.push(bits);
        }
        Ok(Self {
            covariates: spec.covariates.clone(),
            steps,
            warnings,
        })
    }

    /// The data-generating mechanism written as a model, for mechanisms that
    /// read acquired values. Step 1 reads no lagged covariates.
    pub fn oracle(miss: &Missingness, map: &SuperfeatureMap, horizon: usize) -> Result<Self> {
        if miss.bits.len() != map.len() {
            return Err(AfapeError::config("mechanism width differs from the superfeature count"));
        }
        let covariates = miss.covariate_columns();
        let steps = (1..=horizon)
            .map(|t| {
                let lagged = t > 1 || miss.lagged_first_step;
                miss.bits
                    .iter()
                    .map(|b| match b {
                        BitMechanism::Constant(p) => BitModel::Forced(*p),
                        BitMechanism::Logistic(s) => {
                            let mut coef = vec![0.0; covariates.len() + 1];
                            coef[0] = s.intercept;
                            if lagged {
                                for &(c, beta) in &s.terms {
                                    let j = covariates.iter().position(|&x| x == c).expect("collected above");
                                    coef[j + 1] = beta;
                                }
                            }
                            BitModel::Logistic(coef)
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            covariates,
            steps,
            warnings: vec![],
        })
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// `P(A_k^t = 1 | history)` for each superfeature. Only row `t - 1` of
    /// `hist` is read.
    pub fn bit_probs(&self, t: usize, hist: &ObservedPanel, _masks: &[StepMask]) -> Vec<f64> {
        let prev = hist.row(t - 1);
        let x: Vec<f64> = self.covariates.iter().map(|&c| prev[c].unwrap_or(0.0)).collect();
        self.steps[t - 1]
            .iter()
            .map(|b| match b {
                BitModel::Forced(p) => *p,
                BitModel::Logistic(coef) => predict_logistic(coef, &x),
            })
            .collect()
    }

    pub fn prob(&self, t: usize, hist: &ObservedPanel, masks: &[StepMask], a: StepMask) -> f64 {
        self.bit_probs(t, hist, masks)
            .iter()
            .enumerate()
            .map(|(k, &p)| if a.get(k) { p } else { 1.0 - p })
            .product()
    }

    /// Retrospective probability of acquiring at least `a_prime`.
    pub fn geq(&self, t: usize, hist: &ObservedPanel, masks: &[StepMask], a_prime: StepMask) -> f64 {
        self.bit_probs(t, hist, masks)
            .iter()
            .enumerate()
            .filter(|&(k, _)| a_prime.get(k))
            .map(|(_, &p)| p)
            .product()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
