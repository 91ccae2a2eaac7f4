//! A binary process small enough to enumerate.
//!
//! One costly feature per step takes values in {-1, +1} and follows a Markov
//! chain. Retrospective and agent acquisition probabilities depend on what
//! the acting party saw of the previous value: negative, positive or missing.
//! Exact values, conditional expectations and the positivity sets are
//! computed by brute force, which makes the toy an oracle for the
//! estimators and for the positivity definitions.

use rand::Rng;

use crate::classify::Classifier;
use crate::cost::CostSpec;
use crate::data::{Dataset, Record};
use crate::error::{AfapeError, Result};
use crate::mask::{MaskTrajectory, StepMask, SuperfeatureMap};
use crate::panel::{apply_mask, FullPanel, LabelSeq, ObservedPanel};
use crate::policy::{Policy, PolicySpec};
use crate::estimators::{evaluate_many, CostMode, Estimator, Inputs, Options};
use crate::nuisance::{fit_q_semi, FitRows, PropensityModel, PropensitySpec, QEncoder, QSemiModel, TrainConfig};
use crate::policy::{IdVariant, SimPolicy};
use crate::rng::{stream, Purpose};
use crate::simulate::{sample_dprime, Context, Inner};

/// What a party knows about a previous value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Seen {
    Neg = 0,
    Pos = 1,
    Missing = 2,
}

impl Seen {
    fn of(x: usize) -> Self {
        if x == 1 {
            Seen::Pos
        } else {
            Seen::Neg
        }
    }

    fn after(acquired: bool, x: usize) -> Self {
        if acquired {
            Seen::of(x)
        } else {
            Seen::Missing
        }
    }

    fn from_cell(v: Option<f64>) -> Self {
        match v {
            Some(v) if v > 0.0 => Seen::Pos,
            Some(_) => Seen::Neg,
            None => Seen::Missing,
        }
    }
}

/// Value index 0 is -1, index 1 is +1.
fn value(x: usize) -> f64 {
    if x == 1 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteToy {
    pub horizon: usize,
    /// `P(x^0 = +1)`.
    pub p_first: f64,
    /// `P(x^t = +1 | x^{t-1})`, indexed by the previous value.
    pub up: [f64; 2],
    /// `retro[t - 1][seen]`: retrospective `P(A^t = 1)`.
    pub retro: Vec<[f64; 3]>,
    /// `agent[t - 1][seen]`: agent `P(A'^t = 1)`.
    pub agent: Vec<[f64; 3]>,
    /// `P(Y^t = 1 | x^{t-1}, x^t)`.
    pub label: [[f64; 2]; 2],
    /// Prediction at step `t` from what is known of `x^t`.
    pub predict: [u8; 3],
    pub acquisition_cost: f64,
    pub misclassification_cost: f64,
}

/// Looks up the prediction table on the current row.
#[derive(Debug, Clone, PartialEq)]
pub struct TableClassifier {
    pub predict: [u8; 3],
}

impl Classifier for TableClassifier {
    fn predict(&self, t: usize, panel: &ObservedPanel, _masks: &[StepMask]) -> u8 {
        self.predict[Seen::from_cell(panel.get(t, 0)) as usize]
    }
}

fn pick(p: f64, on: bool) -> f64 {
    if on {
        p
    } else {
        1.0 - p
    }
}

impl DiscreteToy {
    /// One step, agent acquires with probability one half, retrospective
    /// acquisition more likely after a negative first value.
    pub fn single_step() -> Self {
        Self {
            horizon: 1,
            p_first: 0.4,
            up: [0.3, 0.8],
            retro: vec![[0.7, 0.4, 0.5]],
            agent: vec![[0.5; 3]],
            label: [[0.1, 0.8], [0.3, 0.95]],
            predict: [0, 1, 1],
            acquisition_cost: 1.0,
            misclassification_cost: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = self
            .retro
            .iter()
            .chain(&self.agent)
            .flatten()
            .chain(&self.up)
            .chain(self.label.iter().flatten())
            .chain(std::iter::once(&self.p_first));
        if probs.into_iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(AfapeError::invalid("toy probabilities must lie in [0, 1]"));
        }
        if self.horizon == 0 || self.retro.len() != self.horizon || self.agent.len() != self.horizon {
            return Err(AfapeError::invalid("toy tables must cover every step"));
        }
        if self.predict.iter().any(|&p| p > 1) {
            return Err(AfapeError::invalid("predictions are binary"));
        }
        Ok(())
    }

    pub fn map(&self) -> SuperfeatureMap {
        SuperfeatureMap::new(vec![vec![0]], &[]).expect("one costly column")
    }

    pub fn costs(&self) -> CostSpec {
        CostSpec {
            acquisition: vec![self.acquisition_cost],
            misclassification: self.misclassification_cost,
        }
    }

    pub fn classifier(&self) -> TableClassifier {
        TableClassifier { predict: self.predict }
    }

    /// The agent as a [`Policy`]; only agents that ignore the history are
    /// expressible.
    pub fn agent_policy(&self) -> Result<Policy> {
        let p = self.agent[0][0];
        if self.agent.iter().flatten().any(|&q| q != p) {
            return Err(AfapeError::Unsupported("history-dependent toy agent".into()));
        }
        Policy::new(PolicySpec::RandomP(p), &self.map())
    }

    fn p_next(&self, prev: usize, next: usize) -> f64 {
        pick(self.up[prev], next == 1)
    }

    /// Expected step cost given the values and what the classifier sees.
    fn step_cost(&self, acquired: bool, prev: usize, cur: usize) -> f64 {
        let p1 = self.label[prev][cur];
        let pred = self.predict[Seen::after(acquired, cur) as usize];
        let miss = if pred == 1 { 1.0 - p1 } else { p1 };
        f64::from(u8::from(acquired)) * self.acquisition_cost + self.misclassification_cost * miss
    }

    /// Expected cost from step `t` on, given `x^{t-1}` and the agent's view of it.
    fn cost_to_go(&self, t: usize, prev: usize, seen: Seen) -> f64 {
        if t > self.horizon {
            return 0.0;
        }
        [false, true]
            .iter()
            .map(|&a| {
                let pa = pick(self.agent[t - 1][seen as usize], a);
                if pa == 0.0 {
                    return 0.0;
                }
                pa * self.q(t, a, prev)
            })
            .sum()
    }

    /// Expected cost from step `t` on when the agent takes `a` at `t`.
    fn q(&self, t: usize, a: bool, prev: usize) -> f64 {
        (0..2)
            .map(|x| {
                let px = self.p_next(prev, x);
                if px == 0.0 {
                    return 0.0;
                }
                px * (self.step_cost(a, prev, x) + self.cost_to_go(t + 1, x, Seen::after(a, x)))
            })
            .sum()
    }

    /// Exact expected total cost of the agent.
    pub fn exact_value(&self) -> f64 {
        (0..2)
            .map(|x0| pick(self.p_first, x0 == 1) * self.cost_to_go(1, x0, Seen::of(x0)))
            .sum()
    }

    /// Exact expected cost from step 1 on, given `x^0` and the first action.
    pub fn exact_first_q(&self, a: bool, x0: f64) -> f64 {
        let x = usize::from(x0 > 0.0);
        self.q(1, a, x)
    }

    /// Exact expected cost given `x^0` alone.
    pub fn exact_first_v(&self, x0: f64) -> f64 {
        let x = usize::from(x0 > 0.0);
        self.cost_to_go(1, x, Seen::of(x))
    }

    pub fn generate_record(&self, id: u64, seed: u64) -> Record {
        let h = self.horizon;
        let mut f = stream(seed, id, Purpose::Features);
        let mut xs = Vec::with_capacity(h + 1);
        xs.push(usize::from(f.random::<f64>() < self.p_first));
        for t in 1..=h {
            let prev = xs[t - 1];
            xs.push(usize::from(f.random::<f64>() < self.up[prev]));
        }
        let mut a = stream(seed, id, Purpose::Acquisition);
        let mut seen = Seen::of(xs[0]);
        let mut steps = Vec::with_capacity(h);
        for t in 1..=h {
            let on = a.random::<f64>() < self.retro[t - 1][seen as usize];
            steps.push(StepMask::from_bits(u32::from(on), 1));
            seen = Seen::after(on, xs[t]);
        }
        let mut l = stream(seed, id, Purpose::Labels);
        let labels: Vec<u8> = (1..=h)
            .map(|t| u8::from(l.random::<f64>() < self.label[xs[t - 1]][xs[t]]))
            .collect();
        let full = FullPanel::new(h + 1, 1, xs.iter().map(|&x| value(x)).collect()).expect("one column");
        let masks = MaskTrajectory::new(steps).expect("uniform widths");
        let map = self.map();
        let observed = apply_mask(&full, &masks, &map).expect("shapes agree");
        Record::new(id, observed, masks, LabelSeq::new(labels).expect("binary"), Some(full), &map)
            .expect("consistent by construction")
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<Dataset> {
        self.validate()?;
        let records = (0..n as u64).map(|id| self.generate_record(id, seed)).collect();
        Ok(Dataset::new(self.map(), self.horizon, records))
    }

    fn retro_p(&self, t: usize, seen: Seen, a: bool) -> f64 {
        pick(self.retro[t - 1][seen as usize], a)
    }

    fn agent_p(&self, t: usize, seen: Seen, a: bool) -> f64 {
        pick(self.agent[t - 1][seen as usize], a)
    }

    /// Reachable first values and first desired actions.
    fn starts(&self) -> Vec<(usize, bool)> {
        let mut out = Vec::new();
        for x0 in 0..2 {
            if pick(self.p_first, x0 == 1) == 0.0 {
                continue;
            }
            for a in [false, true] {
                if self.agent_p(1, Seen::of(x0), a) > 0.0 {
                    out.push((x0, a));
                }
            }
        }
        out
    }

    /// Next values and next desired actions with positive probability.
    fn futures(&self, t: usize, prev: usize, a_prime: bool) -> Vec<(usize, bool)> {
        let mut out = Vec::new();
        for x in 0..2 {
            if self.p_next(prev, x) == 0.0 {
                continue;
            }
            let seen = Seen::after(a_prime, x);
            for a in [false, true] {
                if self.agent_p(t + 1, seen, a) > 0.0 {
                    out.push((x, a));
                }
            }
        }
        out
    }

    /// Retrospective actions at step `t` that cover `a_prime` with positive
    /// probability, given the retrospective view of `x^{t-1}`.
    pub fn local_admissible(&self, t: usize, retro_seen: Seen, a_prime: bool) -> Vec<bool> {
        [false, true]
            .into_iter()
            .filter(|&a| (a || !a_prime) && self.retro_p(t, retro_seen, a) > 0.0)
            .collect()
    }

    /// Local admissible actions from which every reachable future desired
    /// action can still be simulated.
    pub fn regional_admissible(&self, t: usize, prev: usize, retro_seen: Seen, a_prime: bool) -> Vec<bool> {
        self.local_admissible(t, retro_seen, a_prime)
            .into_iter()
            .filter(|&a| {
                t == self.horizon
                    || self.futures(t, prev, a_prime).into_iter().all(|(x, next)| {
                        !self
                            .regional_admissible(t + 1, x, Seen::after(a, x), next)
                            .is_empty()
                    })
            })
            .collect()
    }

    /// Every reachable start has a nonempty regional admissible set.
    pub fn global_positivity(&self) -> bool {
        self.starts()
            .into_iter()
            .all(|(x0, a)| !self.regional_admissible(1, x0, Seen::of(x0), a).is_empty())
    }

    fn maximal_at(&self, t: usize, prev: usize, retro_seen: Seen, a_prime: bool) -> bool {
        let local = self.local_admissible(t, retro_seen, a_prime);
        if local.is_empty() || self.regional_admissible(t, prev, retro_seen, a_prime) != local {
            return false;
        }
        t == self.horizon
            || local.into_iter().all(|a| {
                self.futures(t, prev, a_prime)
                    .into_iter()
                    .all(|(x, next)| self.maximal_at(t + 1, x, Seen::after(a, x), next))
            })
    }

    /// Regional and local admissible sets agree everywhere reachable.
    pub fn maximal_global_positivity(&self) -> bool {
        self.starts()
            .into_iter()
            .all(|(x0, a)| self.maximal_at(1, x0, Seen::of(x0), a))
    }

    /// The retrospective mechanism can take every action the agent takes,
    /// along the agent's own trajectories.
    pub fn offline_positivity(&self) -> bool {
        fn go(toy: &DiscreteToy, t: usize, prev: usize, seen: Seen) -> bool {
            if t > toy.horizon {
                return true;
            }
            [false, true].into_iter().all(|a| {
                if toy.agent_p(t, seen, a) == 0.0 {
                    return true;
                }
                toy.retro_p(t, seen, a) > 0.0
                    && (0..2).all(|x| toy.p_next(prev, x) == 0.0 || go(toy, t + 1, x, Seen::after(a, x)))
            })
        }
        (0..2).all(|x0| pick(self.p_first, x0 == 1) == 0.0 || go(self, 1, x0, Seen::of(x0)))
    }

    /// Complete acquisition has positive probability along complete histories.
    pub fn missing_positivity(&self) -> bool {
        fn go(toy: &DiscreteToy, t: usize, prev: usize) -> bool {
            if t > toy.horizon {
                return true;
            }
            toy.retro_p(t, Seen::of(prev), true) > 0.0
                && (0..2).all(|x| toy.p_next(prev, x) == 0.0 || go(toy, t + 1, x))
        }
        (0..2).all(|x0| pick(self.p_first, x0 == 1) == 0.0 || go(self, 1, x0))
    }

    /// A toy with random tables; each probability is forced to 0 or 1 with
    /// probability `p_extreme`.
    pub fn random<R: Rng + ?Sized>(horizon: usize, p_extreme: f64, rng: &mut R) -> Self {
        let draw = |rng: &mut R| {
            if rng.random::<f64>() < p_extreme {
                f64::from(u8::from(rng.random::<bool>()))
            } else {
                rng.random::<f64>()
            }
        };
        let table = |rng: &mut R| (0..horizon).map(|_| [draw(rng), draw(rng), draw(rng)]).collect::<Vec<_>>();
        let retro = table(rng);
        let agent = table(rng);
        Self {
            horizon,
            p_first: rng.random_range(0.05..0.95),
            up: [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)].map(|p: f64| {
                if rng.random::<f64>() < p_extreme {
                    p.round()
                } else {
                    p
                }
            }),
            retro,
            agent,
            label: [[rng.random(), rng.random()], [rng.random(), rng.random()]],
            predict: [rng.random_range(0..2), rng.random_range(0..2), rng.random_range(0..2)],
            acquisition_cost: 1.0,
            misclassification_cost: 4.0,
        }
    }
}

/// Estimates from a toy run, with the exact value.
#[derive(Debug)]
pub struct ToyRun {
    pub exact: f64,
    pub estimates: Vec<(Estimator, Result<f64>)>,
    pub q: QSemiModel,
    pub nuisance: Dataset,
}

impl DiscreteToy {
    /// Fits the propensity and value models on `n` records and evaluates
    /// `ests` (unnormalized when `normalize` is false) on another `n`.
    pub fn evaluate(&self, n: usize, seed: u64, ests: &[Estimator], normalize: bool, train: &TrainConfig) -> Result<ToyRun> {
        let all = self.generate(2 * n, seed)?;
        let nuisance = all.subset(&(0..n).collect::<Vec<_>>());
        let test = all.subset(&(n..2 * n).collect::<Vec<_>>());
        let map = self.map();
        let policy = self.agent_policy()?;
        let classifier = self.classifier();
        let costs = self.costs();
        let ctx = Context {
            map: &map,
            policy: &policy,
            classifier: &classifier,
            costs: &costs,
        };
        let spec = PropensitySpec {
            covariates: vec![0],
            rows: FitRows::All,
        };
        let prop = PropensityModel::fit(&nuisance, &spec)?;
        let sim_policy = SimPolicy::Target;
        let q = if ests.iter().any(|e| matches!(e, Estimator::DmSemi | Estimator::DrlSemi)) {
            let dprime = sample_dprime(&nuisance, ctx, &sim_policy, Inner::Exact, seed)?;
            fit_q_semi(&nuisance, &dprime, &policy, QEncoder::new(&nuisance)?, train, seed)?
        } else {
            QSemiModel::zero(QEncoder::new(&nuisance)?)
        };
        let sim = sample_dprime(&test, ctx, &sim_policy, Inner::Exact, seed)?;
        let means = nuisance.row_means();
        let inp = Inputs {
            test: &test,
            ctx,
            prop: Some(&prop),
            q: Some(&q),
            sim: Some(&sim),
            imputer: None,
            train_means: Some(&means),
            variant: IdVariant::TruncatedBeta,
            inner: Inner::Exact,
            m_imp: 1,
            mode: CostMode::PerStep,
            seed,
        };
        let opts = Options {
            normalize,
            bootstrap: 0,
            ..Options::default()
        };
        let estimates = evaluate_many(ests, &inp, &opts)
            .into_iter()
            .map(|(e, r)| (e, r.map(|r| r.estimate)))
            .collect();
        Ok(ToyRun {
            exact: self.exact_value(),
            estimates,
            q,
            nuisance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::mean_rollout_on_truth;
    use rand::SeedableRng;

    /// Two steps where a negative value seen by the retrospective mechanism
    /// rules out acquisition at step 2. With `reachable_negative` off the
    /// chain never moves to -1.
    fn counterexample(reachable_negative: bool) -> DiscreteToy {
        DiscreteToy {
            horizon: 2,
            p_first: 0.5,
            up: if reachable_negative { [0.5, 0.5] } else { [1.0, 1.0] },
            retro: vec![[0.5; 3], [0.0, 0.5, 0.5]],
            agent: vec![[0.0; 3], [0.5; 3]],
            label: [[0.2, 0.7], [0.4, 0.9]],
            predict: [0, 1, 1],
            acquisition_cost: 1.0,
            misclassification_cost: 4.0,
        }
    }

    #[test]
    fn exact_value_matches_rollouts_on_the_truth() {
        let toy = DiscreteToy::single_step();
        let data = toy.generate(40_000, 3).unwrap();
        let policy = toy.agent_policy().unwrap();
        let classifier = toy.classifier();
        let costs = toy.costs();
        let map = toy.map();
        let ctx = Context {
            map: &map,
            policy: &policy,
            classifier: &classifier,
            costs: &costs,
        };
        let mc = mean_rollout_on_truth(&data, ctx, Inner::Exact, 0).unwrap();
        let exact = toy.exact_value();
        assert!((mc - exact).abs() / exact < 0.01, "{mc} vs {exact}");
    }

    #[test]
    fn hand_computed_single_step_values() {
        let toy = DiscreteToy::single_step();
        // x0 = -1, acquire: x1 = +1 w.p. 0.3
        // cost 1 + 4 * (0.7 * P(Y=1 | -1,-1) + 0.3 * P(Y=0 | -1,+1)) = 1 + 4 * (0.07 + 0.06)
        assert!((toy.exact_first_q(true, -1.0) - 1.52).abs() < 1e-12);
        // skip: predict 1, miss when Y = 0: 4 * (0.7 * 0.9 + 0.3 * 0.2)
        assert!((toy.exact_first_q(false, -1.0) - 2.76).abs() < 1e-12);
        assert!((toy.exact_first_v(-1.0) - 0.5 * (1.52 + 2.76)).abs() < 1e-12);
    }

    #[test]
    fn counterexample_sets() {
        let on = counterexample(true);
        for x0 in 0..2 {
            let s = Seen::of(x0);
            assert_eq!(on.local_admissible(1, s, false), vec![false, true]);
            assert_eq!(on.regional_admissible(1, x0, s, false), vec![false]);
        }
        assert!(on.global_positivity());
        assert!(!on.maximal_global_positivity());
        // the agent never acquires at step 1, so its own histories stay supported
        assert!(on.offline_positivity());
        assert!(!on.missing_positivity());

        let off = counterexample(false);
        let s = Seen::Pos;
        assert_eq!(off.regional_admissible(1, 1, s, false), vec![false, true]);
        assert!(off.global_positivity());
        assert!(off.maximal_global_positivity());
    }

    #[test]
    fn local_set_examples() {
        let mut toy = DiscreteToy::single_step();
        toy.retro = vec![[0.3, 0.3, 0.3]];
        assert_eq!(toy.local_admissible(1, Seen::Neg, true), vec![true]);
        assert_eq!(toy.local_admissible(1, Seen::Neg, false), vec![false, true]);
        toy.retro = vec![[0.0, 0.3, 0.3]];
        assert!(toy.local_admissible(1, Seen::Neg, true).is_empty());
    }

    #[test]
    fn random_toys_are_valid() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let toy = DiscreteToy::random(3, 0.3, &mut rng);
            toy.validate().unwrap();
            if toy.maximal_global_positivity() {
                assert!(toy.global_positivity());
            }
            for seen in [Seen::Neg, Seen::Pos, Seen::Missing] {
                for want in [false, true] {
                    let local = toy.local_admissible(1, seen, want);
                    let regional = toy.regional_admissible(1, usize::from(seen == Seen::Pos), seen, want);
                    assert!(regional.iter().all(|a| local.contains(a)));
                }
            }
        }
    }
}
