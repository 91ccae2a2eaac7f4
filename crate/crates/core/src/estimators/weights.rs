//! Importance weights along simulated and retrospective trajectories.

use crate::error::{AfapeError, Result};
use crate::mask::StepMask;
use crate::policy::IdVariant;

/// Retrospective probability of exactly `a` under factorized bit probabilities.
pub fn mask_prob(bit_probs: &[f64], a: StepMask) -> f64 {
    bit_probs
        .iter()
        .enumerate()
        .map(|(k, &p)| if a.get(k) { p } else { 1.0 - p })
        .product()
}

/// Probability of acquiring at least `a_prime`.
pub fn geq_prob(bit_probs: &[f64], a_prime: StepMask) -> f64 {
    bit_probs
        .iter()
        .enumerate()
        .filter(|&(k, _)| a_prime.get(k))
        .map(|(_, &p)| p)
        .product()
}

/// Second factor of the semi-offline weight at one step: the identifying
/// distribution over retrospective masks divided by the propensity of the
/// mask that occurred.
pub fn retro_factor(
    variant: IdVariant,
    bit_probs: &[f64],
    a: StepMask,
    a_prime: StepMask,
    t: usize,
    record: u64,
) -> Result<f64> {
    let (hit, denom, what) = match variant {
        IdVariant::TruncatedBeta => (a_prime.leq(a), geq_prob(bit_probs, a_prime), "P(A >= a')"),
        IdVariant::OfflineDelta => (a == a_prime, mask_prob(bit_probs, a), "P(A = a)"),
        IdVariant::MissingDelta => (a.is_all_ones(), mask_prob(bit_probs, a), "P(A = 1)"),
    };
    if !hit {
        return Ok(0.0);
    }
    if denom <= 0.0 {
        return Err(AfapeError::Positivity {
            t,
            record,
            detail: format!("estimated {what} is zero for a' = {a_prime}, A = {a}"),
        });
    }
    Ok(1.0 / denom)
}

/// `rho^0..rho^T` for one simulated trajectory.
///
/// `bit_probs[t - 1]` are the retrospective bit probabilities at step `t`,
/// `retro` the retrospective masks, and `p_alpha`, `p_sim` the probabilities
/// recorded when the trajectory was simulated.
pub fn semi_weights(
    variant: IdVariant,
    bit_probs: &[Vec<f64>],
    retro: &[StepMask],
    sim_masks: &[StepMask],
    p_alpha: &[f64],
    p_sim: &[f64],
    record: u64,
) -> Result<Vec<f64>> {
    let mut rho = Vec::with_capacity(sim_masks.len() + 1);
    rho.push(1.0);
    let mut cur = 1.0;
    for t in 1..=sim_masks.len() {
        if p_sim[t - 1] <= 0.0 {
            return Err(AfapeError::invalid(format!(
                "record {record}: simulated action with zero simulation probability at step {t}"
            )));
        }
        if cur != 0.0 {
            let f1 = p_alpha[t - 1] / p_sim[t - 1];
            let f2 = retro_factor(variant, &bit_probs[t - 1], retro[t - 1], sim_masks[t - 1], t, record)?;
            cur *= f1 * f2;
        }
        rho.push(cur);
    }
    Ok(rho)
}
