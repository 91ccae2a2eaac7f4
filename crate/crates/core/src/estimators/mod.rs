//! Estimators of the expected total cost of deploying the target policy.
//!
//! Every estimator first reduces the test split to a [`TermTable`] (one row
//! per parent record) and then combines column means; the bootstrap
//! resamples those rows with the nuisance models held fixed.

pub mod impute;
pub mod table;
pub mod weights;

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::step_cost;
use crate::data::{Dataset, Record};
use crate::error::{AfapeError, Result};
use crate::mask::StepMask;
use crate::nuisance::{PropensityModel, QSemiModel};
use crate::panel::FullPanel;
use crate::policy::IdVariant;
use crate::rng::{stream, Purpose};
use crate::simulate::{expected_step_costs, Context, FullEpisode, Inner, PanelEpisode, SimDataset};

pub use impute::GaussianImputer;
pub use table::{TermTable, UnitTerms};
pub use weights::{geq_prob, mask_prob, retro_factor, semi_weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    IpwOff,
    IpwMiss,
    MiMiss,
    IpwSemi,
    DmSemi,
    DrlSemi,
    ImpMean,
    Blocking,
    Cc,
}

impl Estimator {
    pub const ALL: [Estimator; 9] = [
        Estimator::IpwOff,
        Estimator::IpwMiss,
        Estimator::MiMiss,
        Estimator::IpwSemi,
        Estimator::DmSemi,
        Estimator::DrlSemi,
        Estimator::ImpMean,
        Estimator::Blocking,
        Estimator::Cc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::IpwOff => "ipw-off",
            Estimator::IpwMiss => "ipw-miss",
            Estimator::MiMiss => "mi-miss",
            Estimator::IpwSemi => "ipw-semi",
            Estimator::DmSemi => "dm-semi",
            Estimator::DrlSemi => "drl-semi",
            Estimator::ImpMean => "imp-mean",
            Estimator::Blocking => "blocking",
            Estimator::Cc => "cc",
        }
    }

    /// Comma-separated names, or `all`.
    pub fn parse_list(s: &str) -> Result<Vec<Estimator>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part.eq_ignore_ascii_case("all") {
                out.extend(Estimator::ALL);
            } else {
                out.push(part.parse()?);
            }
        }
        if out.is_empty() {
            return Err(AfapeError::config("estimator list is empty"));
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    /// Weighted estimators are affected by normalization.
    pub fn is_weighted(self) -> bool {
        matches!(
            self,
            Estimator::IpwOff | Estimator::IpwMiss | Estimator::IpwSemi | Estimator::DrlSemi
        )
    }

    fn uses_semi_table(self) -> bool {
        matches!(self, Estimator::IpwSemi | Estimator::DrlSemi)
    }
}

impl FromStr for Estimator {
    type Err = AfapeError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == key)
            .ok_or_else(|| AfapeError::config(format!("unknown estimator {s:?}")))
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether costs are charged per step or once at the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostMode {
    PerStep,
    /// Total cost weighted by the final-step weight only.
    Terminal,
}

/// Everything an estimator may read. Models an estimator needs but that are
/// absent produce an invalid-input error.
#[derive(Clone, Copy)]
pub struct Inputs<'a> {
    pub test: &'a Dataset,
    pub ctx: Context<'a>,
    pub prop: Option<&'a PropensityModel>,
    pub q: Option<&'a QSemiModel>,
    /// Simulated dataset of the test split.
    pub sim: Option<&'a SimDataset>,
    pub imputer: Option<&'a GaussianImputer>,
    /// Per-row training means for mean imputation.
    pub train_means: Option<&'a [Vec<f64>]>,
    pub variant: IdVariant,
    /// Trajectories per full-data rollout.
    pub inner: Inner,
    pub m_imp: usize,
    pub mode: CostMode,
    pub seed: u64,
}

impl<'a> Inputs<'a> {
    fn prop(&self) -> Result<&'a PropensityModel> {
        self.prop.ok_or_else(|| AfapeError::invalid("a propensity model is required"))
    }

    fn q(&self) -> Result<&'a QSemiModel> {
        self.q.ok_or_else(|| AfapeError::invalid("a value-function model is required"))
    }

    fn sim(&self) -> Result<&'a SimDataset> {
        let sim = self.sim.ok_or_else(|| AfapeError::invalid("a simulated dataset is required"))?;
        if sim.n_parents() != self.test.len() {
            return Err(AfapeError::invalid("simulated dataset does not belong to the test split"));
        }
        Ok(sim)
    }

    fn horizon(&self) -> usize {
        self.test.horizon
    }

    fn per_step_only(&self, what: &str) -> Result<()> {
        if self.mode == CostMode::Terminal {
            return Err(AfapeError::Unsupported(format!("{what} is implemented for per-step costs only")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Options {
    pub normalize: bool,
    /// Bootstrap replicates; 0 skips the interval.
    pub bootstrap: usize,
    pub level: f64,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            normalize: true,
            bootstrap: 200,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: Estimator,
    pub estimate: f64,
    pub ci: Option<(f64, f64)>,
    pub n: usize,
    pub seed: u64,
    pub normalized: bool,
}

/// Folds per-unit results in order, keeping the first error.
fn collect_units(horizon: usize, units: Vec<Result<UnitTerms>>) -> Result<TermTable> {
    let units: Result<Vec<UnitTerms>> = units.into_iter().collect();
    Ok(TermTable::from_units(horizon, units?))
}

fn plain_unit(costs: &[f64], mode: CostMode) -> UnitTerms {
    match mode {
        CostMode::PerStep => UnitTerms::plain(costs),
        CostMode::Terminal => {
            let mut v = vec![0.0; costs.len()];
            if let Some(last) = v.last_mut() {
                *last = costs.iter().sum();
            }
            UnitTerms::plain(&v)
        }
    }
}

/// Adds a weighted trajectory to a unit: `rho[t]` for `t = 0..=T`.
fn add_weighted(u: &mut UnitTerms, rho: &[f64], costs: &[f64], mass: f64, mode: CostMode) {
    let h = costs.len();
    for t in 1..=h {
        u.add_weight(t, mass * rho[t]);
        match mode {
            CostMode::PerStep => u.add_cost(t, mass * rho[t] * costs[t - 1]),
            CostMode::Terminal if t == h => u.add_cost(t, mass * rho[t] * costs.iter().sum::<f64>()),
            CostMode::Terminal => {}
        }
    }
}

fn retro_bit_probs(prop: &PropensityModel, r: &Record) -> Vec<Vec<f64>> {
    (1..=r.horizon())
        .map(|t| prop.bit_probs(t, &r.observed, &r.masks.steps()[..t - 1]))
        .collect()
}

/// Semi-offline table. With `weighted = false` every weight is one (the
/// blocking baseline); with a value model the augmentation columns are filled.
pub fn semi_table(inp: &Inputs<'_>, weighted: bool, q: Option<&QSemiModel>) -> Result<TermTable> {
    let sim = inp.sim()?;
    let prop = if weighted { Some(inp.prop()?) } else { None };
    if q.is_some() {
        inp.per_step_only("the doubly robust estimator")?;
    }
    let h = inp.horizon();
    let map = inp.ctx.map;
    let policy = inp.ctx.policy;
    let units: Vec<Result<UnitTerms>> = (0..inp.test.len())
        .into_par_iter()
        .map(|i| {
            let parent = &inp.test.records[i];
            let probs = prop.map(|p| retro_bit_probs(p, parent));
            let mut u = UnitTerms::new(h);
            let v0 = q.map(|q| q.v_value(0, &[], parent, policy, map));
            // value-model outputs of the previous leaf, reused along shared prefixes
            let mut prev: Option<&[StepMask]> = None;
            let mut q_cache = vec![0.0; h + 1];
            let mut v_cache = vec![0.0; h + 1];
            for rec in sim.of_parent(i) {
                let rho = match &probs {
                    Some(bp) => semi_weights(
                        inp.variant,
                        bp,
                        parent.masks.steps(),
                        &rec.masks,
                        &rec.p_alpha,
                        &rec.p_sim,
                        parent.id,
                    )?,
                    None => vec![1.0; h + 1],
                };
                add_weighted(&mut u, &rho, &rec.costs, rec.mass, inp.mode);
                if let (Some(q), Some(v0)) = (q, v0) {
                    let shared = prev.map_or(0, |p| p.iter().zip(&rec.masks).take_while(|(a, b)| a == b).count());
                    for t in 1..=h {
                        if t > shared {
                            q_cache[t] = if rho[t] != 0.0 { q.q_value(t, &rec.masks, parent) } else { f64::NAN };
                            if t >= 2 {
                                v_cache[t - 1] = if rho[t - 1] != 0.0 {
                                    q.v_value(t - 1, &rec.masks, parent, policy, map)
                                } else {
                                    f64::NAN
                                };
                            }
                        }
                        if rho[t] != 0.0 {
                            u.add_q(t, rec.mass * rho[t] * q_cache[t]);
                        }
                        let v_prev = if t == 1 { v0 } else { v_cache[t - 1] };
                        if rho[t - 1] != 0.0 {
                            u.add_v(t, rec.mass * rho[t - 1] * v_prev);
                        }
                    }
                    prev = Some(&rec.masks);
                }
            }
            Ok(u)
        })
        .collect();
    collect_units(h, units)
}

/// Offline importance weighting along the retrospective trajectory.
pub fn ipw_off_table(inp: &Inputs<'_>) -> Result<TermTable> {
    let prop = inp.prop()?;
    let h = inp.horizon();
    let ctx = inp.ctx;
    let units: Vec<Result<UnitTerms>> = inp
        .test
        .records
        .par_iter()
        .map(|r| {
            let masks = r.masks.steps();
            let mut rho = vec![1.0; h + 1];
            let mut costs = vec![0.0; h];
            for t in 1..=h {
                let a = masks[t - 1];
                let pa = ctx.policy.prob(t, &r.observed, &masks[..t - 1], a);
                let pb = mask_prob(&prop.bit_probs(t, &r.observed, &masks[..t - 1]), a);
                if pb <= 0.0 {
                    return Err(AfapeError::Positivity {
                        t,
                        record: r.id,
                        detail: format!("estimated probability of the observed mask {a} is zero"),
                    });
                }
                rho[t] = rho[t - 1] * pa / pb;
                let pred = ctx.classifier.predict(t, &r.observed, &masks[..t]);
                costs[t - 1] = step_cost(a, pred, r.labels.at(t), ctx.costs);
            }
            let mut u = UnitTerms::new(h);
            add_weighted(&mut u, &rho, &costs, 1.0, inp.mode);
            Ok(u)
        })
        .collect();
    collect_units(h, units)
}

/// Complete-case weighting: step `t` counts only while every superfeature
/// has been acquired at every step so far.
pub fn ipw_miss_table(inp: &Inputs<'_>) -> Result<TermTable> {
    let prop = inp.prop()?;
    let h = inp.horizon();
    if !inp.test.records.iter().any(Record::is_complete_case) {
        return Err(AfapeError::Positivity {
            t: h,
            record: 0,
            detail: "the test split has no complete cases".into(),
        });
    }
    let ctx = inp.ctx;
    let units: Vec<Result<UnitTerms>> = inp
        .test
        .records
        .par_iter()
        .map(|r| {
            let masks = r.masks.steps();
            let complete = masks.iter().take_while(|m| m.is_all_ones()).count();
            let mut rho = vec![0.0; h + 1];
            rho[0] = 1.0;
            for t in 1..=complete {
                let p1 = mask_prob(&prop.bit_probs(t, &r.observed, &masks[..t - 1]), masks[t - 1]);
                if p1 <= 0.0 {
                    return Err(AfapeError::Positivity {
                        t,
                        record: r.id,
                        detail: "estimated probability of a complete step is zero".into(),
                    });
                }
                rho[t] = rho[t - 1] / p1;
            }
            let mut costs = vec![0.0; h];
            if complete > 0 {
                let ep = PanelEpisode {
                    panel: &r.observed,
                    labels: &r.labels,
                };
                let c = expected_step_costs(ctx, &ep, complete, inp.inner, inp.seed, r.id);
                costs[..complete].copy_from_slice(&c);
            }
            let mut u = UnitTerms::new(h);
            add_weighted(&mut u, &rho, &costs, 1.0, inp.mode);
            Ok(u)
        })
        .collect();
    collect_units(h, units)
}

fn rollout_costs(ctx: Context<'_>, full: &FullPanel, r: &Record, inner: Inner, seed: u64) -> Vec<f64> {
    let ep = FullEpisode {
        panel: full,
        labels: &r.labels,
    };
    expected_step_costs(ctx, &ep, r.horizon(), inner, seed, r.id)
}

/// Multiple imputation: average rollouts over completions of each record.
pub fn mi_table(inp: &Inputs<'_>) -> Result<TermTable> {
    let imputer = inp
        .imputer
        .ok_or_else(|| AfapeError::Unsupported("no oracle imputer for this configuration".into()))?;
    if inp.m_imp == 0 {
        return Err(AfapeError::config("m_imp must be positive"));
    }
    let h = inp.horizon();
    let units: Vec<Result<UnitTerms>> = inp
        .test
        .records
        .par_iter()
        .map(|r| {
            let mut rng = stream(inp.seed, r.id, Purpose::Imputation);
            let mut acc = vec![0.0; h];
            let m = if r.observed.n_missing() == 0 { 1 } else { inp.m_imp };
            for _ in 0..m {
                let full = imputer.complete_record(&r.observed, &r.labels, &mut rng)?;
                for (a, c) in acc.iter_mut().zip(rollout_costs(inp.ctx, &full, r, inp.inner, inp.seed)) {
                    *a += c / m as f64;
                }
            }
            Ok(plain_unit(&acc, inp.mode))
        })
        .collect();
    collect_units(h, units)
}

/// Mean imputation with per-row training means.
pub fn imp_mean_table(inp: &Inputs<'_>) -> Result<TermTable> {
    let means = inp
        .train_means
        .ok_or_else(|| AfapeError::invalid("training means are required"))?;
    let h = inp.horizon();
    let units: Vec<UnitTerms> = inp
        .test
        .records
        .par_iter()
        .map(|r| {
            let mut full = FullPanel::zeros(r.observed.rows(), r.observed.cols());
            for t in 0..r.observed.rows() {
                for j in 0..r.observed.cols() {
                    full.set(t, j, r.observed.get(t, j).unwrap_or(means[t][j]));
                }
            }
            plain_unit(&rollout_costs(inp.ctx, &full, r, inp.inner, inp.seed), inp.mode)
        })
        .collect();
    Ok(TermTable::from_units(h, units))
}

/// Unweighted mean over complete cases.
pub fn cc_table(inp: &Inputs<'_>) -> Result<TermTable> {
    let h = inp.horizon();
    let units: Vec<UnitTerms> = inp
        .test
        .records
        .par_iter()
        .filter_map(|r| {
            let full = r.observed.to_full(h)?;
            Some(plain_unit(&rollout_costs(inp.ctx, &full, r, inp.inner, inp.seed), inp.mode))
        })
        .collect();
    if units.is_empty() {
        return Err(AfapeError::Positivity {
            t: h,
            record: 0,
            detail: "the test split has no complete cases".into(),
        });
    }
    Ok(TermTable::from_units(h, units))
}

/// Direct method: the initial value function averaged over records.
pub fn dm_table(inp: &Inputs<'_>) -> Result<TermTable> {
    inp.per_step_only("the direct method")?;
    let q = inp.q()?;
    let h = inp.horizon();
    let units: Vec<UnitTerms> = inp
        .test
        .records
        .par_iter()
        .map(|r| {
            let mut v = vec![0.0; h];
            v[0] = q.v_value(0, &[], r, inp.ctx.policy, inp.ctx.map);
            UnitTerms::plain(&v)
        })
        .collect();
    Ok(TermTable::from_units(h, units))
}

pub fn blocking_table(inp: &Inputs<'_>) -> Result<TermTable> {
    let sim = inp.sim()?;
    if !sim.blocked_target {
        return Err(AfapeError::invalid(
            "the blocking baseline needs a dataset simulated with the blocked target policy",
        ));
    }
    semi_table(inp, false, None)
}

pub fn term_table(est: Estimator, inp: &Inputs<'_>) -> Result<TermTable> {
    match est {
        Estimator::IpwOff => ipw_off_table(inp),
        Estimator::IpwMiss => ipw_miss_table(inp),
        Estimator::MiMiss => mi_table(inp),
        Estimator::IpwSemi => semi_table(inp, true, None),
        Estimator::DmSemi => dm_table(inp),
        Estimator::DrlSemi => semi_table(inp, true, Some(inp.q()?)),
        Estimator::ImpMean => imp_mean_table(inp),
        Estimator::Blocking => blocking_table(inp),
        Estimator::Cc => cc_table(inp),
    }
}

fn report(est: Estimator, table: &TermTable, inp: &Inputs<'_>, opts: &Options) -> Result<EstimateReport> {
    let augment = est == Estimator::DrlSemi;
    let normalize = opts.normalize && est.is_weighted();
    let estimate = table.estimate(normalize, augment)?;
    let ci = if opts.bootstrap > 0 {
        let (lo, hi) = table.bootstrap(normalize, augment, opts.bootstrap, opts.level, inp.seed)?;
        Some((lo.min(estimate), hi.max(estimate)))
    } else {
        None
    };
    Ok(EstimateReport {
        estimator: est,
        estimate,
        ci,
        n: table.len(),
        seed: inp.seed,
        normalized: normalize,
    })
}

pub fn evaluate(est: Estimator, inp: &Inputs<'_>, opts: &Options) -> Result<EstimateReport> {
    let table = term_table(est, inp)?;
    report(est, &table, inp, opts)
}

/// Several estimators at once; the semi-offline table is built once and
/// shared by the weighting and doubly robust estimators.
pub fn evaluate_many(ests: &[Estimator], inp: &Inputs<'_>, opts: &Options) -> Vec<(Estimator, Result<EstimateReport>)> {
    let need_semi = ests.iter().any(|e| e.uses_semi_table());
    let with_q = ests.contains(&Estimator::DrlSemi);
    let shared = if need_semi {
        let q = if with_q { inp.q } else { None };
        Some(semi_table(inp, true, q))
    } else {
        None
    };
    ests.iter()
        .map(|&e| {
            let res = match (&shared, e) {
                (Some(Ok(t)), Estimator::IpwSemi) => report(e, t, inp, opts),
                (Some(Ok(t)), Estimator::DrlSemi) if inp.q.is_some() => report(e, t, inp, opts),
                _ => evaluate(e, inp, opts),
            };
            (e, res)
        })
        .collect()
}

/// Mean and standard error of per-unit values.
pub fn mean_and_se(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let m = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// Draws a uniform record subsample of size `n` (without replacement).
pub fn subsample(data: &Dataset, n: usize, seed: u64, rep: u64) -> Result<Vec<usize>> {
    if n > data.len() {
        return Err(AfapeError::config(format!("subsample of {n} exceeds {} records", data.len())));
    }
    let mut rng = stream(seed, rep, Purpose::Subsample);
    let mut idx: Vec<usize> = (0..data.len()).collect();
    for i in 0..n {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    idx.truncate(n);
    idx.sort_unstable();
    Ok(idx)
}
