//! Simulated datasets and full-data rollouts.
//!
//! Both are driven by one trajectory walker. At every step it asks the target
//! policy for its distribution, derives the simulation distribution (blocked
//! by the retrospective mask when simulating from data), reveals the chosen
//! cells, predicts, and charges the step cost. `Inner::Exact` enumerates every
//! trajectory with its probability as `mass`; `Inner::Sampled(n)` draws `n`
//! trajectories with mass `1/n` each.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::Classifier;
use crate::cost::{step_cost, CostSpec};
use crate::data::{fmt_f64, Dataset, Record};
use crate::error::{AfapeError, Result};
use crate::mask::{MaskDist, MaskTrajectory, StepMask, SuperfeatureMap};
use crate::panel::{remask, FullPanel, LabelSeq, ObservedPanel};
use crate::policy::{block, Policy, SimPolicy};
use crate::rng::{substream, Purpose};

/// Source of feature rows and labels for one subject.
pub trait Episode: Sync {
    fn horizon(&self) -> usize;
    fn cols(&self) -> usize;
    /// Cells of row `t` given the masks of steps `1..t` (for `t = 0`, none).
    fn row(&self, t: usize, prior: &[StepMask], out: &mut [Option<f64>]);
    fn label(&self, t: usize, prior: &[StepMask]) -> u8;
}

/// A stored panel; rows do not react to acquisitions.
pub struct PanelEpisode<'a> {
    pub panel: &'a ObservedPanel,
    pub labels: &'a LabelSeq,
}

impl Episode for PanelEpisode<'_> {
    fn horizon(&self) -> usize {
        self.labels.horizon()
    }

    fn cols(&self) -> usize {
        self.panel.cols()
    }

    fn row(&self, t: usize, _prior: &[StepMask], out: &mut [Option<f64>]) {
        out.copy_from_slice(self.panel.row(t));
    }

    fn label(&self, t: usize, _prior: &[StepMask]) -> u8 {
        self.labels.at(t)
    }
}

pub struct FullEpisode<'a> {
    pub panel: &'a FullPanel,
    pub labels: &'a LabelSeq,
}

impl Episode for FullEpisode<'_> {
    fn horizon(&self) -> usize {
        self.labels.horizon()
    }

    fn cols(&self) -> usize {
        self.panel.cols()
    }

    fn row(&self, t: usize, _prior: &[StepMask], out: &mut [Option<f64>]) {
        for (o, &v) in out.iter_mut().zip(self.panel.row(t)) {
            *o = Some(v);
        }
    }

    fn label(&self, t: usize, _prior: &[StepMask]) -> u8 {
        self.labels.at(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Inner {
    Exact,
    Sampled(usize),
}

impl Inner {
    /// `0` means exact enumeration.
    pub fn from_count(n: usize) -> Self {
        if n == 0 {
            Inner::Exact
        } else {
            Inner::Sampled(n)
        }
    }
}

/// The fixed ingredients of a rollout.
#[derive(Clone, Copy)]
pub struct Context<'a> {
    pub map: &'a SuperfeatureMap,
    pub policy: &'a Policy,
    pub classifier: &'a dyn Classifier,
    pub costs: &'a CostSpec,
}

/// A finished trajectory as seen by a visitor.
pub struct Leaf<'b> {
    pub masks: &'b [StepMask],
    pub costs: &'b [f64],
    pub p_alpha: &'b [f64],
    pub p_sim: &'b [f64],
    pub mass: f64,
}

struct Walk<'a, 'e, E: Episode + ?Sized> {
    ctx: Context<'a>,
    ep: &'e E,
    sim: &'a SimPolicy,
    blocker: Option<&'a [StepMask]>,
    until: usize,
    panel: ObservedPanel,
    masks: Vec<StepMask>,
    costs: Vec<f64>,
    pa: Vec<f64>,
    ps: Vec<f64>,
    row: Vec<Option<f64>>,
}

impl<E: Episode + ?Sized> Walk<'_, '_, E> {
    fn dists(&self, t: usize) -> (MaskDist, MaskDist) {
        let alpha = self.ctx.policy.dist(t, &self.panel, &self.masks).into_owned();
        let base = match self.sim {
            SimPolicy::Target => alpha.clone(),
            SimPolicy::Other(p) => p.dist(t, &self.panel, &self.masks).into_owned(),
        };
        let sim = match self.blocker {
            Some(b) => block(&base, b[t - 1]),
            None => base,
        };
        (alpha, sim)
    }

    fn push(&mut self, t: usize, a: StepMask, p_alpha: f64, p_sim: f64) {
        self.ep.row(t, &self.masks, &mut self.row);
        for j in 0..self.row.len() {
            let v = if a.get(self.ctx.map.owner(j)) { self.row[j] } else { None };
            self.panel.set(t, j, v);
        }
        let label = self.ep.label(t, &self.masks);
        self.masks.push(a);
        let pred = self.ctx.classifier.predict(t, &self.panel, &self.masks);
        self.costs.push(step_cost(a, pred, label, self.ctx.costs));
        self.pa.push(p_alpha);
        self.ps.push(p_sim);
    }

    fn pop(&mut self, t: usize) {
        self.masks.pop();
        self.costs.pop();
        self.pa.pop();
        self.ps.pop();
        for j in 0..self.row.len() {
            self.panel.set(t, j, None);
        }
    }

    fn leaf(&self, mass: f64) -> Leaf<'_> {
        Leaf {
            masks: &self.masks,
            costs: &self.costs,
            p_alpha: &self.pa,
            p_sim: &self.ps,
            mass,
        }
    }

    fn exact(&mut self, t: usize, mass: f64, visit: &mut dyn FnMut(&Leaf<'_>)) {
        if t > self.until {
            visit(&self.leaf(mass));
            return;
        }
        let (alpha, sim) = self.dists(t);
        for &(a, p) in sim.support() {
            self.push(t, a, alpha.prob(a), p);
            self.exact(t + 1, mass * p, visit);
            self.pop(t);
        }
    }

    fn sampled<R: Rng>(&mut self, rng: &mut R, mass: f64, visit: &mut dyn FnMut(&Leaf<'_>)) {
        for t in 1..=self.until {
            let (alpha, sim) = self.dists(t);
            let a = sim.sample(rng);
            self.push(t, a, alpha.prob(a), sim.prob(a));
        }
        visit(&self.leaf(mass));
        for t in (1..=self.until).rev() {
            self.pop(t);
        }
    }
}

/// Options for one walk.
#[derive(Clone, Copy)]
pub struct WalkSpec<'a> {
    pub sim: &'a SimPolicy,
    /// Retrospective masks that cap the simulated ones.
    pub blocker: Option<&'a [StepMask]>,
    /// Last step to simulate.
    pub until: usize,
    pub inner: Inner,
    pub seed: u64,
    pub id: u64,
}

/// Visits every (exact) or every sampled trajectory of one episode.
pub fn walk<E: Episode + ?Sized>(ctx: Context<'_>, ep: &E, spec: WalkSpec<'_>, visit: &mut dyn FnMut(&Leaf<'_>)) {
    let cols = ep.cols();
    let rows = ep.horizon() + 1;
    let mut panel = ObservedPanel::missing(rows, cols);
    let mut row0 = vec![None; cols];
    ep.row(0, &[], &mut row0);
    for (j, v) in row0.iter().enumerate() {
        panel.set(0, j, *v);
    }
    let mut w = Walk {
        ctx,
        ep,
        sim: spec.sim,
        blocker: spec.blocker,
        until: spec.until.min(ep.horizon()),
        panel,
        masks: Vec::with_capacity(rows),
        costs: Vec::with_capacity(rows),
        pa: Vec::with_capacity(rows),
        ps: Vec::with_capacity(rows),
        row: vec![None; cols],
    };
    match spec.inner {
        Inner::Exact => w.exact(1, 1.0, visit),
        Inner::Sampled(n) => {
            let mass = 1.0 / n as f64;
            let purpose = if spec.blocker.is_some() { Purpose::Simulation } else { Purpose::Rollout };
            for r in 0..n {
                let mut rng = substream(spec.seed, spec.id, r as u64, purpose);
                w.sampled(&mut rng, mass, visit);
            }
        }
    }
}

/// Expected cost of each step `1..=until` when the target policy acts with
/// full access to the episode's rows.
pub fn expected_step_costs<E: Episode + ?Sized>(
    ctx: Context<'_>,
    ep: &E,
    until: usize,
    inner: Inner,
    seed: u64,
    id: u64,
) -> Vec<f64> {
    let mut out = vec![0.0; until.min(ep.horizon())];
    let spec = WalkSpec {
        sim: &SimPolicy::Target,
        blocker: None,
        until,
        inner,
        seed,
        id,
    };
    walk(ctx, ep, spec, &mut |leaf| {
        for (o, c) in out.iter_mut().zip(leaf.costs) {
            *o += leaf.mass * c;
        }
    });
    out
}

/// Mean total cost over `inner` trajectories of the target policy on a
/// complete panel.
pub fn rollout_full(ctx: Context<'_>, full: &FullPanel, y: &LabelSeq, inner: Inner, seed: u64, id: u64) -> f64 {
    let ep = FullEpisode { panel: full, labels: y };
    expected_step_costs(ctx, &ep, y.horizon(), inner, seed, id).iter().sum()
}

/// One simulated trajectory of a parent record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    /// Index of the parent within the simulated dataset.
    pub parent: usize,
    pub replicate: u32,
    pub masks: Vec<StepMask>,
    pub costs: Vec<f64>,
    /// Target-policy probability of each simulated mask.
    pub p_alpha: Vec<f64>,
    /// Simulation-policy probability of each simulated mask.
    pub p_sim: Vec<f64>,
    /// Probability of the whole trajectory (exact) or `1/n` (sampled).
    pub mass: f64,
}

impl SimRecord {
    pub fn horizon(&self) -> usize {
        self.masks.len()
    }

    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }

    /// The simulated acquired panel, rebuilt from the parent.
    pub fn panel(&self, parent: &Record, map: &SuperfeatureMap) -> ObservedPanel {
        let traj = MaskTrajectory::new(self.masks.clone()).expect("uniform widths");
        remask(&parent.observed, &traj, map).expect("shapes from parent")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub records: Vec<SimRecord>,
    /// `ranges[i]` spans the simulated records of parent `i`.
    pub ranges: Vec<std::ops::Range<usize>>,
    pub parent_ids: Vec<u64>,
    pub inner: Inner,
    pub target: String,
    pub sim_policy: String,
    /// Simulation followed the blocked target policy.
    pub blocked_target: bool,
    pub seed: u64,
}

impl SimDataset {
    pub fn n_parents(&self) -> usize {
        self.ranges.len()
    }

    pub fn of_parent(&self, i: usize) -> &[SimRecord] {
        &self.records[self.ranges[i].clone()]
    }

    /// The simulated records of the selected parents, in the given order.
    pub fn subset(&self, parents: &[usize]) -> SimDataset {
        let mut records = Vec::new();
        let mut ranges = Vec::with_capacity(parents.len());
        for (new, &i) in parents.iter().enumerate() {
            let start = records.len();
            records.extend(self.of_parent(i).iter().map(|r| SimRecord { parent: new, ..r.clone() }));
            ranges.push(start..records.len());
        }
        SimDataset {
            records,
            ranges,
            parent_ids: parents.iter().map(|&i| self.parent_ids[i]).collect(),
            target: self.target.clone(),
            sim_policy: self.sim_policy.clone(),
            ..*self
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let k = self.records.first().map_or(0, |r| r.masks.first().map_or(0, |m| m.len()));
        let mut header = vec!["parent_id".to_string(), "replicate".into(), "t".into()];
        header.extend((0..k).map(|i| format!("a{i}")));
        header.extend(["cost", "p_alpha", "p_sim", "mass"].map(String::from));
        wr.write_record(&header)?;
        for r in &self.records {
            for t in 1..=r.horizon() {
                let mut row = vec![
                    self.parent_ids[r.parent].to_string(),
                    r.replicate.to_string(),
                    t.to_string(),
                ];
                row.extend(r.masks[t - 1].iter().map(|b| u8::from(b).to_string()));
                row.push(fmt_f64(r.costs[t - 1]));
                row.push(fmt_f64(r.p_alpha[t - 1]));
                row.push(fmt_f64(r.p_sim[t - 1]));
                row.push(fmt_f64(r.mass));
                wr.write_record(&row)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Simulates the semi-offline dataset from retrospective records.
pub fn sample_dprime(data: &Dataset, ctx: Context<'_>, sim: &SimPolicy, inner: Inner, seed: u64) -> Result<SimDataset> {
    if let Inner::Sampled(0) = inner {
        return Err(AfapeError::config("replicate count must be positive"));
    }
    let per_parent: Vec<Vec<SimRecord>> = data
        .records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let ep = PanelEpisode {
                panel: &r.observed,
                labels: &r.labels,
            };
            let spec = WalkSpec {
                sim,
                blocker: Some(r.masks.steps()),
                until: data.horizon,
                inner,
                seed,
                id: r.id,
            };
            let mut out = Vec::new();
            walk(ctx, &ep, spec, &mut |leaf| {
                out.push(SimRecord {
                    parent: i,
                    replicate: out.len() as u32,
                    masks: leaf.masks.to_vec(),
                    costs: leaf.costs.to_vec(),
                    p_alpha: leaf.p_alpha.to_vec(),
                    p_sim: leaf.p_sim.to_vec(),
                    mass: leaf.mass,
                });
            });
            out
        })
        .collect();
    let mut records = Vec::with_capacity(per_parent.iter().map(Vec::len).sum());
    let mut ranges = Vec::with_capacity(per_parent.len());
    for group in per_parent {
        let start = records.len();
        records.extend(group);
        ranges.push(start..records.len());
    }
    Ok(SimDataset {
        records,
        ranges,
        parent_ids: data.records.iter().map(|r| r.id).collect(),
        inner,
        target: ctx.policy.name().to_string(),
        sim_policy: sim.name(ctx.policy),
        blocked_target: matches!(sim, SimPolicy::Target),
        seed,
    })
}

/// Mean over records of the per-record expected total cost under the
/// target policy, reading each record's complete panel.
pub fn mean_rollout_on_truth(data: &Dataset, ctx: Context<'_>, inner: Inner, seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Err(AfapeError::invalid("no records to evaluate"));
    }
    let vals: Vec<Result<f64>> = data
        .records
        .par_iter()
        .map(|r| {
            let full = r
                .truth
                .as_ref()
                .ok_or_else(|| AfapeError::invalid(format!("record {} has no complete panel", r.id)))?;
            Ok(rollout_full(ctx, full, &r.labels, inner, seed, r.id))
        })
        .collect();
    let mut s = 0.0;
    for v in vals {
        s += v?;
    }
    Ok(s / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::ClassifierModel;
    use crate::data::Record;
    use crate::panel::apply_mask;

    struct Constant(u8);
    impl Classifier for Constant {
        fn predict(&self, _t: usize, _p: &ObservedPanel, _m: &[StepMask]) -> u8 {
            self.0
        }
    }

    fn record(masks: Vec<u32>) -> Record {
        let map = SuperfeatureMap::experiment_default();
        let full = FullPanel::new(4, 4, (0..16).map(|i| i as f64 / 10.0).collect()).unwrap();
        let masks = MaskTrajectory::new(masks.into_iter().map(|b| StepMask::from_bits(b, 3)).collect()).unwrap();
        let obs = apply_mask(&full, &masks, &map).unwrap();
        Record::new(3, obs, masks, LabelSeq::new(vec![1, 0, 1]).unwrap(), Some(full), &map).unwrap()
    }

    #[test]
    fn blocked_zero_policy() {
        let map = SuperfeatureMap::experiment_default();
        let pol = Policy::new(crate::policy::PolicySpec::FixedMask(StepMask::zeros(3)), &map).unwrap();
        let costs = CostSpec::default();
        let clf = Constant(1);
        let ctx = Context {
            map: &map,
            policy: &pol,
            classifier: &clf,
            costs: &costs,
        };
        let ds = Dataset::new(map.clone(), 3, vec![record(vec![7, 3, 1])]);
        let sim = sample_dprime(&ds, ctx, &SimPolicy::Target, Inner::Sampled(4), 1).unwrap();
        assert_eq!(sim.records.len(), 4);
        for r in &sim.records {
            assert!(r.masks.iter().all(|m| m.count() == 0));
            assert_eq!(r.costs, vec![0.0, 12.0, 0.0]);
            let p = r.panel(&ds.records[0], &map);
            assert_eq!(p.n_missing(), 12);
        }
    }

    #[test]
    fn exact_masses_sum_to_one_and_respect_blocking() {
        let map = SuperfeatureMap::experiment_default();
        let pol = Policy::parse("random50", &map, &[]).unwrap();
        let costs = CostSpec::default();
        let clf = Constant(0);
        let ctx = Context {
            map: &map,
            policy: &pol,
            classifier: &clf,
            costs: &costs,
        };
        let ds = Dataset::new(map.clone(), 3, vec![record(vec![7, 3, 5])]);
        let sim = sample_dprime(&ds, ctx, &SimPolicy::Target, Inner::Exact, 1).unwrap();
        assert_eq!(sim.records.len(), 4 * 2 * 2);
        let total: f64 = sim.records.iter().map(|r| r.mass).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for r in &sim.records {
            for (t, m) in r.masks.iter().enumerate() {
                assert!(m.leq(ds.records[0].masks.at(t + 1)));
            }
        }
    }

    #[test]
    fn rollout_examples() {
        let map = SuperfeatureMap::experiment_default();
        let costs = CostSpec::default();
        let clf = Constant(1);
        let r = record(vec![7, 7, 7]);
        let full = r.truth.clone().unwrap();
        let none = Policy::parse("fixed0", &map, &[]).unwrap();
        let ctx = Context {
            map: &map,
            policy: &none,
            classifier: &clf,
            costs: &costs,
        };
        // labels 1,0,1 and prediction 1: one miss
        assert_eq!(rollout_full(ctx, &full, &r.labels, Inner::Exact, 0, 0), 12.0);
        let all = Policy::parse("fixed100", &map, &[]).unwrap();
        let ctx = Context { policy: &all, ..ctx };
        let a = rollout_full(ctx, &full, &r.labels, Inner::Sampled(1), 0, 0);
        let b = rollout_full(ctx, &full, &r.labels, Inner::Sampled(7), 0, 0);
        assert_eq!(a, 18.0);
        assert_eq!(a, b);
        let half = Policy::parse("random50", &map, &[]).unwrap();
        let ctx = Context { policy: &half, ..ctx };
        let exact = rollout_full(ctx, &full, &r.labels, Inner::Exact, 0, 0);
        assert!((exact - (12.0 + 3.0 * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn truth_cells_outside_masks_are_ignored() {
        let map = SuperfeatureMap::experiment_default();
        let pol = Policy::parse("random50", &map, &[]).unwrap();
        let costs = CostSpec::default();
        let model = ClassifierModel {
            means: vec![vec![0.0; 4]; 4],
            weights: (1..=3).map(|t| vec![0.3; (t + 1) * 4 + t * 3 + 1]).collect(),
            loss_trace: vec![],
        };
        let ctx = Context {
            map: &map,
            policy: &pol,
            classifier: &model,
            costs: &costs,
        };
        let r = record(vec![1, 3, 5]);
        let mut corrupted = r.clone();
        let mut truth = corrupted.truth.take().unwrap();
        truth.set(1, 2, 99.0);
        truth.set(2, 3, -99.0);
        corrupted.truth = Some(truth);
        let a = sample_dprime(&Dataset::new(map.clone(), 3, vec![r]), ctx, &SimPolicy::Target, Inner::Sampled(20), 4).unwrap();
        let b = sample_dprime(&Dataset::new(map.clone(), 3, vec![corrupted]), ctx, &SimPolicy::Target, Inner::Sampled(20), 4).unwrap();
        assert_eq!(a.records, b.records);
    }
}
