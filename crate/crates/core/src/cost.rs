use serde::{Deserialize, Serialize};

use crate::classify::Classifier;
use crate::error::{AfapeError, Result};
use crate::mask::{StepMask, SuperfeatureMap};
use crate::panel::ObservedPanel;

/// Acquisition cost per superfeature and the misclassification cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub acquisition: Vec<f64>,
    pub misclassification: f64,
}

impl Default for CostSpec {
    fn default() -> Self {
        Self {
            acquisition: vec![0.0, 1.0, 1.0],
            misclassification: 12.0,
        }
    }
}

impl CostSpec {
    pub fn zero(k: usize) -> Self {
        Self {
            acquisition: vec![0.0; k],
            misclassification: 0.0,
        }
    }

    pub fn validate(&self, map: &SuperfeatureMap) -> Result<()> {
        if self.acquisition.len() != map.len() {
            return Err(AfapeError::invalid(format!(
                "{} acquisition costs for {} superfeatures",
                self.acquisition.len(),
                map.len()
            )));
        }
        if self.acquisition.iter().any(|&c| !(c >= 0.0)) || !(self.misclassification >= 0.0) {
            return Err(AfapeError::invalid("costs must be nonnegative"));
        }
        if (0..map.len()).any(|k| map.is_free(k) && self.acquisition[k] != 0.0) {
            return Err(AfapeError::invalid("free superfeatures must have zero acquisition cost"));
        }
        Ok(())
    }

    pub fn acquisition_cost(&self, mask: StepMask) -> f64 {
        self.acquisition
            .iter()
            .enumerate()
            .filter(|&(k, _)| mask.get(k))
            .map(|(_, c)| c)
            .sum()
    }

    /// Largest possible single-step cost.
    pub fn max_step_cost(&self) -> f64 {
        self.acquisition.iter().sum::<f64>() + self.misclassification
    }
}

/// Cost of one step given the prediction already made.
pub fn step_cost(mask: StepMask, predicted: u8, label: u8, costs: &CostSpec) -> f64 {
    let mc = if predicted != label { costs.misclassification } else { 0.0 };
    costs.acquisition_cost(mask) + mc
}

/// Cost of step `t` when the classifier predicts from the acquired history.
///
/// `panel` must hold the acquired cells of rows `0..=t` and `masks` the
/// masks of steps `1..=t`.
pub fn step_cost_with<C: Classifier + ?Sized>(
    classifier: &C,
    t: usize,
    panel: &ObservedPanel,
    masks: &[StepMask],
    label: u8,
    costs: &CostSpec,
) -> f64 {
    let predicted = classifier.predict(t, panel, masks);
    step_cost(masks[t - 1], predicted, label, costs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(bits: &[u8]) -> StepMask {
        StepMask::from_bools(&bits.iter().map(|&b| b == 1).collect::<Vec<_>>())
    }

    #[test]
    fn default_cost_examples() {
        let c = CostSpec::default();
        assert_eq!(step_cost(m(&[1, 1, 1]), 1, 1, &c), 2.0);
        assert_eq!(step_cost(m(&[1, 0, 0]), 0, 1, &c), 12.0);
        assert_eq!(step_cost(m(&[0, 0, 0]), 1, 1, &c), 0.0);
        assert_eq!(c.max_step_cost(), 14.0);
        c.validate(&SuperfeatureMap::experiment_default()).unwrap();
    }

    #[test]
    fn validation_rejects_bad_costs() {
        let map = SuperfeatureMap::experiment_default();
        let mut c = CostSpec::default();
        c.acquisition[0] = 1.0;
        assert!(c.validate(&map).is_err());
        let c = CostSpec {
            acquisition: vec![0.0, -1.0, 1.0],
            misclassification: 1.0,
        };
        assert!(c.validate(&map).is_err());
    }

    #[test]
    fn step_cost_is_bounded() {
        let c = CostSpec::default();
        for mask in StepMask::all(3) {
            for (p, y) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let v = step_cost(mask, p, y, &c);
                assert!((0.0..=c.max_step_cost()).contains(&v));
            }
        }
    }
}
