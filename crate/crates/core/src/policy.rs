//! Acquisition policies, the blocking transform, and identifying policies.

use std::borrow::Cow;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AfapeError, Result};
use crate::mask::{MaskDist, MaskTrajectory, StepMask, SuperfeatureMap};
use crate::panel::{consistent_with_masks, ObservedPanel};

/// Deterministic linear-score rule: superfeature `k` is acquired at step `t`
/// iff `bias[k] + weights[k] . x^{t-1} > 0`, with missing cells of the
/// previous row replaced by `fill`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub bias: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    pub fill: Vec<f64>,
}

impl ThresholdRule {
    /// Acquire every costly superfeature when the previous-step label score
    /// `w . x^{t-1}` is below `margin`.
    pub fn from_label_weights(w: &[f64], margin: f64, map: &SuperfeatureMap) -> Self {
        let k = map.len();
        Self {
            bias: vec![margin; k],
            weights: vec![w.iter().map(|v| -v).collect(); k],
            fill: vec![0.0; w.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicySpec {
    /// Each costly superfeature acquired independently with probability `p`.
    RandomP(f64),
    /// Independent per-superfeature probabilities.
    Factorized(Vec<f64>),
    FixedMask(StepMask),
    Threshold(ThresholdRule),
}

impl PolicySpec {
    pub fn is_deterministic(&self) -> bool {
        match self {
            PolicySpec::RandomP(p) => *p == 0.0 || *p == 1.0,
            PolicySpec::Factorized(ps) => ps.iter().all(|&p| p == 0.0 || p == 1.0),
            PolicySpec::FixedMask(_) | PolicySpec::Threshold(_) => true,
        }
    }
}

/// A policy bound to a superfeature map. Free superfeatures are always
/// acquired by the history-independent kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    spec: PolicySpec,
    name: String,
    k: usize,
    free: StepMask,
    cols: usize,
    constant: Option<MaskDist>,
}

impl Policy {
    pub fn new(spec: PolicySpec, map: &SuperfeatureMap) -> Result<Self> {
        let k = map.len();
        let free = map.free_mask();
        let constant = match &spec {
            PolicySpec::RandomP(p) => {
                if !(0.0..=1.0).contains(p) {
                    return Err(AfapeError::config(format!("probability {p} outside [0, 1]")));
                }
                let probs: Vec<f64> = (0..k).map(|i| if free.get(i) { 1.0 } else { *p }).collect();
                Some(MaskDist::factorized(&probs))
            }
            PolicySpec::Factorized(ps) => {
                if ps.len() != k || ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(AfapeError::config("factorized policy needs one probability in [0, 1] per superfeature"));
                }
                Some(MaskDist::factorized(ps))
            }
            PolicySpec::FixedMask(m) => {
                if m.len() != k {
                    return Err(AfapeError::config("fixed mask width differs from superfeature count"));
                }
                Some(MaskDist::point(*m))
            }
            PolicySpec::Threshold(rule) => {
                if rule.bias.len() != k
                    || rule.weights.len() != k
                    || rule.weights.iter().any(|w| w.len() != map.n_sub())
                    || rule.fill.len() != map.n_sub()
                {
                    return Err(AfapeError::config("threshold rule shape does not match the map"));
                }
                None
            }
        };
        let name = match &spec {
            PolicySpec::RandomP(p) => format!("random{}", fmt_percent(*p)),
            PolicySpec::Factorized(ps) => {
                format!("factorized[{}]", ps.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(","))
            }
            PolicySpec::FixedMask(m) if m.is_all_ones() => "fixed100".to_string(),
            PolicySpec::FixedMask(m) => format!("fixed{m}"),
            PolicySpec::Threshold(_) => "threshold".to_string(),
        };
        Ok(Self {
            spec,
            name,
            k,
            free,
            cols: map.n_sub(),
            constant,
        })
    }

    /// Parses `random<pct>`, `fixed100`, `fixed0`, or `threshold` (label-score rule).
    pub fn parse(name: &str, map: &SuperfeatureMap, label_weights: &[f64]) -> Result<Self> {
        let s = name.trim().to_ascii_lowercase();
        let spec = if let Some(p) = s.strip_prefix("random") {
            let pct = f64::from_str(p).map_err(|_| AfapeError::config(format!("bad agent {name:?}")))?;
            PolicySpec::RandomP(pct / 100.0)
        } else if s == "fixed100" {
            PolicySpec::FixedMask(StepMask::ones(map.len()))
        } else if s == "fixed0" {
            PolicySpec::FixedMask(map.free_mask())
        } else if s == "threshold" {
            if label_weights.len() != map.n_sub() {
                return Err(AfapeError::config("threshold agent needs one label weight per subfeature"));
            }
            PolicySpec::Threshold(ThresholdRule::from_label_weights(label_weights, 0.25, map))
        } else {
            return Err(AfapeError::config(format!("unknown agent {name:?}")));
        };
        let mut p = Self::new(spec, map)?;
        p.name = s;
        Ok(p)
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn width(&self) -> usize {
        self.k
    }

    pub fn is_deterministic(&self) -> bool {
        self.spec.is_deterministic()
    }

    /// Distribution of the step-`t` mask given rows `0..t-1` of `hist` and
    /// the masks of steps `1..t-1`. Cells of rows `>= t` are ignored.
    pub fn dist(&self, t: usize, hist: &ObservedPanel, masks: &[StepMask]) -> Cow<'_, MaskDist> {
        debug_assert_eq!(masks.len() + 1, t);
        if let Some(d) = &self.constant {
            return Cow::Borrowed(d);
        }
        let PolicySpec::Threshold(rule) = &self.spec else {
            unreachable!("only threshold rules depend on history")
        };
        let prev = hist.row(t - 1);
        let mut m = self.free;
        for k in 0..self.k {
            if self.free.get(k) {
                continue;
            }
            let score = rule.bias[k]
                + rule.weights[k]
                    .iter()
                    .zip(prev)
                    .zip(&rule.fill)
                    .map(|((w, c), f)| w * c.unwrap_or(*f))
                    .sum::<f64>();
            m = m.with(k, score > 0.0);
        }
        Cow::Owned(MaskDist::point(m))
    }

    /// [`Policy::dist`] with history validation.
    pub fn checked_dist(
        &self,
        t: usize,
        hist: &ObservedPanel,
        masks: &[StepMask],
        map: &SuperfeatureMap,
    ) -> Result<MaskDist> {
        if t == 0 || masks.len() + 1 != t || hist.rows() < t || hist.cols() != self.cols {
            return Err(AfapeError::invalid(format!("history does not cover steps 0..{t}")));
        }
        let traj = MaskTrajectory::new(masks.to_vec())?;
        let mut head = ObservedPanel::missing(t, hist.cols());
        for r in 0..t {
            for j in 0..hist.cols() {
                head.set(r, j, hist.get(r, j));
            }
        }
        if !consistent_with_masks(&head, &traj, map) {
            return Err(AfapeError::invalid("history cells are inconsistent with its masks"));
        }
        Ok(self.dist(t, hist, masks).into_owned())
    }

    pub fn prob(&self, t: usize, hist: &ObservedPanel, masks: &[StepMask], a: StepMask) -> f64 {
        self.dist(t, hist, masks).prob(a)
    }
}

fn fmt_percent(p: f64) -> String {
    let v = p * 100.0;
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v}")
    }
}

/// Blocking transform: drop masks not below `available` and renormalize.
/// With no remaining mass, falls back to the all-zeros mask.
pub fn block(dist: &MaskDist, available: StepMask) -> MaskDist {
    let allowed: Vec<(StepMask, f64)> = dist
        .support()
        .iter()
        .filter(|(m, _)| m.leq(available))
        .copied()
        .collect();
    let mass: f64 = allowed.iter().map(|&(_, p)| p).sum();
    if mass <= 0.0 {
        return MaskDist::point(StepMask::zeros(available.len()));
    }
    if allowed.len() == dist.support().len() {
        return dist.clone();
    }
    MaskDist::from_support(allowed.into_iter().map(|(m, p)| (m, p / mass)).collect())
}

/// Which policy drives the simulated actions (before blocking).
#[derive(Debug, Clone, PartialEq)]
pub enum SimPolicy {
    Target,
    Other(Policy),
}

impl SimPolicy {
    pub fn name(&self, target: &Policy) -> String {
        match self {
            SimPolicy::Target => format!("blocked({})", target.name()),
            SimPolicy::Other(p) => format!("blocked({})", p.name()),
        }
    }
}

/// Choice of identifying distribution over retrospective masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdVariant {
    /// `pi_beta` truncated to `{a >= a'}`.
    TruncatedBeta,
    /// Point mass at `a = a'`; reproduces the offline weights.
    OfflineDelta,
    /// Point mass at the all-ones mask; reproduces the complete-case weights.
    MissingDelta,
}

impl FromStr for IdVariant {
    type Err = AfapeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "truncatedbeta" | "truncated" => Ok(Self::TruncatedBeta),
            "offlinedelta" | "offline" => Ok(Self::OfflineDelta),
            "missingdelta" | "missing" => Ok(Self::MissingDelta),
            _ => Err(AfapeError::config(format!("unknown identifying variant {s:?}"))),
        }
    }
}

/// Factorized truncation of per-superfeature acquisition probabilities:
/// bits required by `a_prime` are forced on, others keep their probability.
pub fn truncated_beta(bit_probs: &[f64], a_prime: StepMask, t: usize, record: u64) -> Result<MaskDist> {
    let mut probs = bit_probs.to_vec();
    let mut denom = 1.0;
    for (k, p) in probs.iter_mut().enumerate() {
        if a_prime.get(k) {
            denom *= *p;
            *p = 1.0;
        }
    }
    if denom <= 0.0 {
        return Err(AfapeError::Positivity {
            t,
            record,
            detail: format!("retrospective mass on masks >= {a_prime} is zero"),
        });
    }
    Ok(MaskDist::factorized(&probs))
}

/// General truncation of an arbitrary retrospective distribution.
pub fn truncate_dist(beta: &MaskDist, a_prime: StepMask, t: usize, record: u64) -> Result<MaskDist> {
    let kept: Vec<(StepMask, f64)> = beta.support().iter().filter(|(m, _)| a_prime.leq(*m)).copied().collect();
    let mass: f64 = kept.iter().map(|&(_, p)| p).sum();
    if mass <= 0.0 {
        return Err(AfapeError::Positivity {
            t,
            record,
            detail: format!("retrospective mass on masks >= {a_prime} is zero"),
        });
    }
    Ok(MaskDist::from_support(kept.into_iter().map(|(m, p)| (m, p / mass)).collect()))
}

pub fn pi_id(variant: IdVariant, bit_probs: &[f64], a_prime: StepMask, t: usize, record: u64) -> Result<MaskDist> {
    match variant {
        IdVariant::TruncatedBeta => truncated_beta(bit_probs, a_prime, t, record),
        IdVariant::OfflineDelta => Ok(MaskDist::point(a_prime)),
        IdVariant::MissingDelta => Ok(MaskDist::point(StepMask::ones(a_prime.len()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(bits: &[u8]) -> StepMask {
        StepMask::from_bools(&bits.iter().map(|&b| b == 1).collect::<Vec<_>>())
    }

    fn hist(t: usize) -> (ObservedPanel, Vec<StepMask>) {
        let mut p = ObservedPanel::missing(4, 4);
        for j in 0..4 {
            p.set(0, j, Some(0.1 * j as f64));
        }
        let masks = vec![StepMask::zeros(3).with(0, true); t - 1];
        for r in 1..t {
            p.set(r, 0, Some(0.5));
        }
        (p, masks)
    }

    #[test]
    fn random50_probabilities() {
        let map = SuperfeatureMap::experiment_default();
        let pol = Policy::parse("random50", &map, &[]).unwrap();
        let (h, ms) = hist(1);
        let d = pol.dist(1, &h, &ms);
        assert_eq!(d.prob(m(&[1, 1, 1])), 0.25);
        assert_eq!(d.prob(m(&[1, 0, 0])), 0.25);
        assert_eq!(d.prob(m(&[0, 1, 1])), 0.0);
        let fixed = Policy::parse("fixed100", &map, &[]).unwrap();
        assert!(fixed.dist(1, &h, &ms).is_point_mass());
        assert_eq!(fixed.dist(1, &h, &ms).prob(StepMask::ones(3)), 1.0);
    }

    #[test]
    fn threshold_is_deterministic_and_normalized() {
        let map = SuperfeatureMap::experiment_default();
        let w = [1.0, 1.0, 2.0, 2.0].map(|v| v / 6.0);
        let pol = Policy::parse("threshold", &map, &w).unwrap();
        for t in 1..=3 {
            let (h, ms) = hist(t);
            let d = pol.checked_dist(t, &h, &ms, &map).unwrap();
            assert!(d.is_point_mass());
            assert!((d.total() - 1.0).abs() < 1e-15);
            assert!(d.support()[0].0.get(0));
        }
        let (mut h, ms) = hist(2);
        h.set(1, 1, Some(3.0));
        assert!(pol.checked_dist(2, &h, &ms, &map).is_err());
    }

    #[test]
    fn block_examples() {
        let uni1 = MaskDist::factorized(&[0.5]);
        let b = block(&uni1, m(&[0]));
        assert_eq!(b.prob(m(&[0])), 1.0);
        assert_eq!(b.prob(m(&[1])), 0.0);
        let uni2 = MaskDist::factorized(&[0.5, 0.5]);
        let b = block(&uni2, m(&[1, 0]));
        assert_eq!(b.prob(m(&[0, 0])), 0.5);
        assert_eq!(b.prob(m(&[1, 0])), 0.5);
        assert_eq!(b.prob(m(&[1, 1])), 0.0);
        assert_eq!(block(&uni2, m(&[1, 1])), uni2);
        let point = MaskDist::point(m(&[1, 1, 1]));
        assert_eq!(block(&point, m(&[1, 0, 1])), MaskDist::point(m(&[0, 0, 0])));
        assert_eq!(block(&point, m(&[1, 1, 1])), point);
    }

    #[test]
    fn truncation_examples() {
        let d = truncated_beta(&[0.8], m(&[1]), 1, 0).unwrap();
        assert_eq!(d.prob(m(&[1])), 1.0);
        let d = truncated_beta(&[0.8], m(&[0]), 1, 0).unwrap();
        assert!((d.prob(m(&[0])) - 0.2).abs() < 1e-15);
        assert!((d.prob(m(&[1])) - 0.8).abs() < 1e-15);
        let d = truncated_beta(&[0.5, 0.5], m(&[1, 0]), 1, 0).unwrap();
        assert_eq!(d.support().len(), 2);
        assert_eq!(d.prob(m(&[1, 0])), 0.5);
        assert_eq!(d.prob(m(&[1, 1])), 0.5);
        let d = truncated_beta(&[1.0, 0.3, 0.6], StepMask::ones(3), 1, 0).unwrap();
        assert_eq!(d.prob(StepMask::ones(3)), 1.0);
        let e = truncated_beta(&[1.0, 0.0, 0.5], m(&[1, 1, 0]), 2, 17).unwrap_err();
        assert!(matches!(e, AfapeError::Positivity { t: 2, record: 17, .. }));
    }

    #[test]
    fn variant_examples() {
        let d = pi_id(IdVariant::OfflineDelta, &[0.5, 0.5], m(&[1, 0]), 1, 0).unwrap();
        assert_eq!(d.prob(m(&[1, 0])), 1.0);
        let d = pi_id(IdVariant::MissingDelta, &[0.5, 0.5], m(&[0, 0]), 1, 0).unwrap();
        assert_eq!(d.prob(m(&[1, 1])), 1.0);
        assert_eq!("offline-delta".parse::<IdVariant>().unwrap(), IdVariant::OfflineDelta);
    }

    fn arb_dist(k: usize) -> impl Strategy<Value = MaskDist> {
        proptest::collection::vec(prop_oneof![Just(0.0), 0.01f64..1.0], 1 << k).prop_map(move |w| {
            let total: f64 = w.iter().sum();
            let total = if total == 0.0 { 1.0 } else { total };
            MaskDist::from_support(
                StepMask::all(k).zip(w).map(|(m, p)| (m, p / total)).collect(),
            )
        })
    }

    proptest! {
        #[test]
        fn blocking_conditions(k in 1usize..=3, seed in 0u32..8, d in arb_dist(3)) {
            let d = if k == 3 { d } else { MaskDist::factorized(&vec![0.5; k]) };
            let a = StepMask::from_bits(seed, k);
            if d.support().is_empty() { return Ok(()); }
            let b = block(&d, a);
            prop_assert!((b.total() - 1.0).abs() < 1e-12);
            for &(m, p) in b.support() {
                prop_assert!(p > 0.0);
                prop_assert!(m.leq(a));
            }
            let has_allowed = d.support().iter().any(|(m, _)| m.leq(a));
            if has_allowed {
                for &(m, _) in d.support() {
                    if m.leq(a) { prop_assert!(b.prob(m) > 0.0); }
                }
            } else {
                prop_assert_eq!(b, MaskDist::point(StepMask::zeros(k)));
            }
        }

        #[test]
        fn truncation_sums_to_one(ps in proptest::collection::vec(0.01f64..1.0, 3), bits in 0u32..8) {
            let a = StepMask::from_bits(bits, 3);
            let d = truncated_beta(&ps, a, 1, 0).unwrap();
            prop_assert!((d.total() - 1.0).abs() < 1e-12);
            for &(m, _) in d.support() { prop_assert!(a.leq(m)); }
            let beta = MaskDist::factorized(&ps);
            let g = truncate_dist(&beta, a, 1, 0).unwrap();
            for &(m, p) in d.support() { prop_assert!((g.prob(m) - p).abs() < 1e-12); }
        }
    }
}
