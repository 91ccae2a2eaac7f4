//! End-to-end runs: generate, split, fit, simulate, estimate.
//!
//! Run configuration is a flat TOML table; every key is optional and the
//! defaults reproduce the published experiment setup.

use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{fit_classifier, ClassifierConfig, ClassifierModel};
use crate::cost::CostSpec;
use crate::data::{fmt_f64, Dataset, Splits};
use crate::dgp::{generate, DgpConfig, EnvironmentEpisode, Experiment};
use crate::error::{AfapeError, Result};
use crate::estimators::{
    evaluate_many, subsample, CostMode, EstimateReport, Estimator, GaussianImputer, Inputs, Options,
};
use crate::nuisance::{fit_q_semi, Optimizer, PropensityModel, PropensitySpec, QEncoder, QSemiModel, TrainConfig};
use crate::policy::{IdVariant, Policy, SimPolicy};
use crate::simulate::{expected_step_costs, mean_rollout_on_truth, sample_dprime, Context, Inner, SimDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropensityChoice {
    /// Logistic model on the covariates the mechanism uses.
    Correct,
    /// The same model without column 0.
    DropX0,
    /// The data-generating mechanism itself.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QChoice {
    Fitted,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    pub agents: Vec<String>,
    pub estimators: Vec<String>,
    pub n: usize,
    pub seed: u64,
    /// Convergence study: subsample sizes and replicates per size.
    pub ns: Vec<usize>,
    pub seeds: usize,
    pub bootstrap: usize,
    pub level: f64,
    pub normalize: bool,
    pub split: [f64; 3],
    /// Simulated trajectories per test record (0 = exact enumeration).
    pub n_mc: usize,
    /// Simulated trajectories per nuisance record for the value model (0 = exact).
    pub q_replicates: usize,
    /// Trajectories per full-data rollout (0 = exact enumeration).
    pub rollout_mc: usize,
    pub m_imp: usize,
    pub impute_with_labels: bool,
    pub variant: String,
    /// `target` or any agent name; the simulation is always blocked.
    pub sim_policy: String,
    pub terminal_cost: bool,
    pub acquisition_costs: Vec<f64>,
    pub misclassification_cost: f64,
    pub classifier_subsample: f64,
    pub classifier_learning_rate: f64,
    pub classifier_epochs: usize,
    pub classifier_l2: f64,
    pub propensity: PropensityChoice,
    pub q_model: QChoice,
    pub q_hidden: Vec<usize>,
    pub q_learning_rate: f64,
    pub q_batch: usize,
    pub q_epochs: usize,
    pub q_optimizer: String,
    /// Online episodes for the ground truth when acquisitions change the
    /// features; defaults to the test-split size.
    pub n_eval: Option<usize>,
    pub positivity_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let c = ClassifierConfig::default();
        let t = TrainConfig::default();
        let costs = CostSpec::default();
        Self {
            experiment: "1".into(),
            agents: vec!["random50".into(), "fixed100".into()],
            estimators: vec!["all".into()],
            n: 100_000,
            seed: 0,
            ns: vec![500, 2000, 8000],
            seeds: 20,
            bootstrap: 200,
            level: 0.95,
            normalize: true,
            split: [0.3, 0.3, 0.4],
            n_mc: 0,
            q_replicates: 2,
            rollout_mc: 0,
            m_imp: 10,
            impute_with_labels: false,
            variant: "truncated-beta".into(),
            sim_policy: "target".into(),
            terminal_cost: false,
            acquisition_costs: costs.acquisition,
            misclassification_cost: costs.misclassification,
            classifier_subsample: c.subsample_p,
            classifier_learning_rate: c.learning_rate,
            classifier_epochs: c.epochs,
            classifier_l2: c.l2,
            propensity: PropensityChoice::Correct,
            q_model: QChoice::Fitted,
            q_hidden: t.hidden,
            q_learning_rate: t.learning_rate,
            q_batch: t.batch,
            q_epochs: t.epochs,
            q_optimizer: "sgd".into(),
            n_eval: None,
            positivity_threshold: 0.01,
        }
    }
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| AfapeError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| AfapeError::config(e.to_string()))
    }

    pub fn experiment(&self) -> Result<Experiment> {
        self.experiment.parse()
    }

    pub fn estimator_list(&self) -> Result<Vec<Estimator>> {
        Estimator::parse_list(&self.estimators.join(","))
    }

    pub fn variant(&self) -> Result<IdVariant> {
        IdVariant::from_str(&self.variant)
    }

    pub fn options(&self) -> Options {
        Options {
            normalize: self.normalize,
            bootstrap: self.bootstrap,
            level: self.level,
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            subsample_p: self.classifier_subsample,
            learning_rate: self.classifier_learning_rate,
            epochs: self.classifier_epochs,
            l2: self.classifier_l2,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let optimizer = match self.q_optimizer.to_ascii_lowercase().as_str() {
            "adam" => Optimizer::Adam,
            "sgd" => Optimizer::Sgd,
            other => return Err(AfapeError::config(format!("unknown optimizer {other:?}"))),
        };
        let t = TrainConfig {
            hidden: self.q_hidden.clone(),
            learning_rate: self.q_learning_rate,
            batch: self.q_batch,
            epochs: self.q_epochs,
            optimizer,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn costs(&self) -> CostSpec {
        CostSpec {
            acquisition: self.acquisition_costs.clone(),
            misclassification: self.misclassification_cost,
        }
    }

    pub fn cost_mode(&self) -> CostMode {
        if self.terminal_cost {
            CostMode::Terminal
        } else {
            CostMode::PerStep
        }
    }

    pub fn dgp(&self) -> Result<DgpConfig> {
        let cfg = DgpConfig::new(self.experiment()?).with_n(self.n).with_seed(self.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment()?;
        self.estimator_list()?;
        self.variant()?;
        self.train_config()?;
        if self.agents.is_empty() {
            return Err(AfapeError::config("agent list is empty"));
        }
        if self.n == 0 {
            return Err(AfapeError::config("n must be positive"));
        }
        if self.n_eval == Some(0) {
            return Err(AfapeError::config("n_eval must be positive"));
        }
        let total: f64 = self.split.iter().sum();
        if self.split.iter().any(|f| *f <= 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(AfapeError::config("split fractions must be positive and sum to 1"));
        }
        Ok(())
    }
}

/// Agent-independent artifacts of a run.
pub struct Prepared {
    pub dgp: DgpConfig,
    pub splits: Splits,
    pub classifier: ClassifierModel,
    pub propensity: PropensityModel,
    pub encoder: QEncoder,
    pub train_means: Vec<Vec<f64>>,
    pub imputer: Option<GaussianImputer>,
    pub costs: CostSpec,
}

pub fn fit_propensity(run: &RunConfig, dgp: &DgpConfig, nuisance: &Dataset) -> Result<PropensityModel> {
    let spec = PropensitySpec::for_experiment(dgp.experiment);
    match run.propensity {
        PropensityChoice::Correct => PropensityModel::fit(nuisance, &spec),
        PropensityChoice::DropX0 => PropensityModel::fit(nuisance, &spec.without(0)),
        PropensityChoice::Oracle => PropensityModel::oracle(&dgp.missingness, &dgp.map, dgp.horizon),
    }
}

pub fn prepare(run: &RunConfig) -> Result<Prepared> {
    run.validate()?;
    let dgp = run.dgp().map_err(|e| e.at_stage("generate"))?;
    let costs = run.costs();
    costs.validate(&dgp.map)?;
    let data = generate(&dgp).map_err(|e| e.at_stage("generate"))?;
    prepare_from(run, dgp, &data)
}

/// [`prepare`] on an existing dataset.
pub fn prepare_from(run: &RunConfig, dgp: DgpConfig, data: &Dataset) -> Result<Prepared> {
    let costs = run.costs();
    let splits = data.split(run.split).map_err(|e| e.at_stage("split"))?;
    let classifier =
        fit_classifier(&splits.train, &run.classifier_config(), run.seed).map_err(|e| e.at_stage("classifier"))?;
    let propensity = fit_propensity(run, &dgp, &splits.nuisance).map_err(|e| e.at_stage("propensity"))?;
    let encoder = QEncoder::new(&splits.train).map_err(|e| e.at_stage("q-model"))?;
    let train_means = splits.train.row_means();
    let imputer = GaussianImputer::new(&dgp).ok().map(|imp| {
        if run.impute_with_labels {
            imp.conditioned_on_labels(&dgp)
        } else {
            imp
        }
    });
    Ok(Prepared {
        dgp,
        splits,
        classifier,
        propensity,
        encoder,
        train_means,
        imputer,
        costs,
    })
}

/// Artifacts that depend on the evaluated agent.
pub struct AgentRun {
    pub policy: Policy,
    pub sim_policy: SimPolicy,
    pub q: Option<QSemiModel>,
    pub sim_test: Option<SimDataset>,
    pub truth: f64,
}

impl Prepared {
    pub fn context<'a>(&'a self, policy: &'a Policy) -> Context<'a> {
        Context {
            map: &self.dgp.map,
            policy,
            classifier: &self.classifier,
            costs: &self.costs,
        }
    }

    pub fn policy(&self, agent: &str) -> Result<Policy> {
        Policy::parse(agent, &self.dgp.map, &self.dgp.w)
    }

    pub fn sim_policy(&self, run: &RunConfig) -> Result<SimPolicy> {
        if run.sim_policy.eq_ignore_ascii_case("target") {
            Ok(SimPolicy::Target)
        } else {
            Ok(SimPolicy::Other(self.policy(&run.sim_policy)?))
        }
    }

    pub fn fit_q(&self, run: &RunConfig, policy: &Policy, sim: &SimPolicy) -> Result<QSemiModel> {
        if run.q_model == QChoice::Zero {
            return Ok(QSemiModel::zero(self.encoder.clone()));
        }
        let ctx = self.context(policy);
        let nuisance = &self.splits.nuisance;
        let dprime = sample_dprime(nuisance, ctx, sim, Inner::from_count(run.q_replicates), run.seed)?;
        fit_q_semi(nuisance, &dprime, policy, self.encoder.clone(), &run.train_config()?, run.seed)
    }

    /// Ground truth on the test split: rollouts on the complete panels, or
    /// online episodes when acquisitions change the features.
    pub fn ground_truth(&self, run: &RunConfig, policy: &Policy) -> Result<f64> {
        let ctx = self.context(policy);
        let inner = Inner::from_count(run.rollout_mc);
        let test = &self.splits.test;
        if self.dgp.experiment.has_no_direct_effect() {
            return mean_rollout_on_truth(test, ctx, inner, run.seed);
        }
        let n = run.n_eval.unwrap_or(test.len());
        if n == 0 {
            return Err(AfapeError::config("no online episodes to evaluate"));
        }
        let total: f64 = (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let ep = EnvironmentEpisode::new(&self.dgp, i);
                expected_step_costs(ctx, &ep, self.dgp.horizon, inner, run.seed, i).iter().sum::<f64>()
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        Ok(total / n as f64)
    }

    pub fn run_agent(&self, run: &RunConfig, agent: &str, ests: &[Estimator]) -> Result<AgentRun> {
        let policy = self.policy(agent).map_err(|e| e.at_stage("agent"))?;
        let sim_policy = self.sim_policy(run).map_err(|e| e.at_stage("agent"))?;
        let needs_q = ests.iter().any(|e| matches!(e, Estimator::DmSemi | Estimator::DrlSemi));
        let needs_sim = ests
            .iter()
            .any(|e| matches!(e, Estimator::IpwSemi | Estimator::DrlSemi | Estimator::Blocking));
        let q = if needs_q {
            Some(self.fit_q(run, &policy, &sim_policy).map_err(|e| e.at_stage("q-model"))?)
        } else {
            None
        };
        let sim_test = if needs_sim {
            let ctx = self.context(&policy);
            Some(
                sample_dprime(&self.splits.test, ctx, &sim_policy, Inner::from_count(run.n_mc), run.seed)
                    .map_err(|e| e.at_stage("simulate"))?,
            )
        } else {
            None
        };
        let truth = self.ground_truth(run, &policy).map_err(|e| e.at_stage("ground-truth"))?;
        Ok(AgentRun {
            policy,
            sim_policy,
            q,
            sim_test,
            truth,
        })
    }

    pub fn inputs<'a>(
        &'a self,
        run: &RunConfig,
        agent: &'a AgentRun,
        test: &'a Dataset,
        sim: Option<&'a SimDataset>,
    ) -> Result<Inputs<'a>> {
        Ok(Inputs {
            test,
            ctx: self.context(&agent.policy),
            prop: Some(&self.propensity),
            q: agent.q.as_ref(),
            sim,
            imputer: self.imputer.as_ref(),
            train_means: Some(&self.train_means),
            variant: run.variant()?,
            inner: Inner::from_count(run.rollout_mc),
            m_imp: run.m_imp,
            mode: run.cost_mode(),
            seed: run.seed,
        })
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub estimator: String,
    pub agent: String,
    pub experiment: String,
    pub n: usize,
    pub estimate: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub truth: f64,
    pub seed: u64,
}

impl ResultRow {
    fn new(r: &EstimateReport, agent: &str, experiment: Experiment, truth: f64) -> Self {
        Self {
            estimator: r.estimator.to_string(),
            agent: agent.to_string(),
            experiment: experiment.to_string(),
            n: r.n,
            estimate: r.estimate,
            ci_lo: r.ci.map(|c| c.0),
            ci_hi: r.ci.map(|c| c.1),
            truth,
            seed: r.seed,
        }
    }

    pub fn relative_error(&self) -> f64 {
        (self.estimate - self.truth).abs() / self.truth.abs()
    }
}

/// Estimates that could not be produced, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct Skipped {
    pub estimator: Estimator,
    pub agent: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub skipped: Vec<Skipped>,
}

/// Estimator failures that are a property of the data rather than a bug:
/// reported and skipped instead of aborting the run.
fn is_expected_failure(e: &AfapeError) -> bool {
    matches!(
        e,
        AfapeError::Unsupported(_) | AfapeError::Positivity { .. } | AfapeError::EmptyEffectiveSample { .. }
    )
}

pub fn run_experiment(run: &RunConfig) -> Result<ExperimentOutput> {
    let prep = prepare(run)?;
    run_prepared(run, &prep)
}

pub fn run_prepared(run: &RunConfig, prep: &Prepared) -> Result<ExperimentOutput> {
    let ests = run.estimator_list()?;
    let opts = run.options();
    let mut out = ExperimentOutput::default();
    for agent in &run.agents {
        let ar = prep.run_agent(run, agent, &ests)?;
        let inp = prep.inputs(run, &ar, &prep.splits.test, ar.sim_test.as_ref())?;
        for (est, res) in evaluate_many(&ests, &inp, &opts) {
            match res {
                Ok(r) => out.rows.push(ResultRow::new(&r, agent, prep.dgp.experiment, ar.truth)),
                Err(e) if is_expected_failure(&e) => out.skipped.push(Skipped {
                    estimator: est,
                    agent: agent.clone(),
                    reason: e.to_string(),
                }),
                Err(e) => return Err(e.at_stage("estimate")),
            }
        }
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["estimator", "agent", "experiment", "n", "estimate", "ci_lo", "ci_hi", "truth", "seed"])?;
    for r in rows {
        wr.write_record([
            r.estimator.clone(),
            r.agent.clone(),
            r.experiment.clone(),
            r.n.to_string(),
            fmt_f64(r.estimate),
            opt(r.ci_lo),
            opt(r.ci_hi),
            fmt_f64(r.truth),
            r.seed.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub estimator: String,
    pub agent: String,
    pub experiment: String,
    pub n: usize,
    pub rep: usize,
    pub estimate: f64,
    pub truth: f64,
    pub abs_error: f64,
    pub seed: u64,
}

pub const CONVERGENCE_ESTIMATORS: [Estimator; 3] = [Estimator::IpwOff, Estimator::IpwMiss, Estimator::IpwSemi];

/// Error of the weighting estimators on random subsamples of the test split,
/// against the ground truth of the whole test split.
pub fn run_convergence(run: &RunConfig) -> Result<Vec<ConvergenceRow>> {
    let prep = prepare(run)?;
    run_convergence_prepared(run, &prep)
}

pub fn run_convergence_prepared(run: &RunConfig, prep: &Prepared) -> Result<Vec<ConvergenceRow>> {
    let test = &prep.splits.test;
    if let Some(&n) = run.ns.iter().find(|&&n| n > test.len() || n == 0) {
        return Err(AfapeError::config(format!(
            "subsample size {n} outside 1..={} test records",
            test.len()
        )));
    }
    let opts = Options {
        bootstrap: 0,
        ..run.options()
    };
    let mut rows = Vec::new();
    for agent in &run.agents {
        let ar = prep.run_agent(run, agent, &CONVERGENCE_ESTIMATORS)?;
        let full_sim = ar.sim_test.as_ref().expect("simulated for the semi-offline estimator");
        for &n in &run.ns {
            for rep in 0..run.seeds {
                let key = ((n as u64) << 32) | rep as u64;
                let idx = subsample(test, n, run.seed, key)?;
                let sub = test.subset(&idx);
                let sim = full_sim.subset(&idx);
                let inp = prep.inputs(run, &ar, &sub, Some(&sim))?;
                for (est, res) in evaluate_many(&CONVERGENCE_ESTIMATORS, &inp, &opts) {
                    let estimate = match res {
                        Ok(r) => r.estimate,
                        Err(e) if is_expected_failure(&e) => f64::NAN,
                        Err(e) => return Err(e.at_stage("estimate")),
                    };
                    rows.push(ConvergenceRow {
                        estimator: est.to_string(),
                        agent: agent.clone(),
                        experiment: prep.dgp.experiment.to_string(),
                        n,
                        rep,
                        estimate,
                        truth: ar.truth,
                        abs_error: (estimate - ar.truth).abs(),
                        seed: run.seed,
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_convergence_csv<W: Write>(rows: &[ConvergenceRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["estimator", "agent", "experiment", "n", "rep", "estimate", "truth", "abs_error", "seed"])?;
    for r in rows {
        wr.write_record([
            r.estimator.clone(),
            r.agent.clone(),
            r.experiment.clone(),
            r.n.to_string(),
            r.rep.to_string(),
            fmt_f64(r.estimate),
            fmt_f64(r.truth),
            fmt_f64(r.abs_error),
            r.seed.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
