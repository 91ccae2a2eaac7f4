//! Per-unit sums that every estimator reduces to, and the bootstrap.
//!
//! A unit is a parent record. For each step `t` it carries
//! `c = sum mass rho^t C^t`, `q = sum mass rho^t Q^t`,
//! `v = sum mass rho^{t-1} V^{t-1}` and `r = sum mass rho^t`. Plain
//! averages put the per-step cost in `c` and 1 in `r`.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{AfapeError, Result};
use crate::rng::{stream, Purpose};

const C: usize = 0;
const Q: usize = 1;
const V: usize = 2;
const R: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TermTable {
    horizon: usize,
    /// Row-major units x `[c(1..T), q(1..T), v(1..T), r(1..T)]`.
    cells: Vec<f64>,
}

/// One unit's row under construction.
#[derive(Debug, Clone)]
pub struct UnitTerms {
    horizon: usize,
    cells: Vec<f64>,
}

impl UnitTerms {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            cells: vec![0.0; 4 * horizon],
        }
    }

    fn at(&mut self, kind: usize, t: usize) -> &mut f64 {
        &mut self.cells[kind * self.horizon + t - 1]
    }

    pub fn add_cost(&mut self, t: usize, v: f64) {
        *self.at(C, t) += v;
    }

    pub fn add_q(&mut self, t: usize, v: f64) {
        *self.at(Q, t) += v;
    }

    pub fn add_v(&mut self, t: usize, v: f64) {
        *self.at(V, t) += v;
    }

    pub fn add_weight(&mut self, t: usize, v: f64) {
        *self.at(R, t) += v;
    }

    /// A unit that contributes `costs[t - 1]` at weight one.
    pub fn plain(costs: &[f64]) -> Self {
        let mut u = Self::new(costs.len());
        for (i, &c) in costs.iter().enumerate() {
            u.add_cost(i + 1, c);
            u.add_weight(i + 1, 1.0);
        }
        u
    }
}

impl TermTable {
    pub fn from_units(horizon: usize, units: impl IntoIterator<Item = UnitTerms>) -> Self {
        let mut cells = Vec::new();
        for u in units {
            debug_assert_eq!(u.horizon, horizon);
            cells.extend(u.cells);
        }
        Self { horizon, cells }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        if self.horizon == 0 {
            0
        } else {
            self.cells.len() / (4 * self.horizon)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn unit(&self, i: usize) -> &[f64] {
        let w = 4 * self.horizon;
        &self.cells[i * w..(i + 1) * w]
    }

    /// Column means, optionally with bootstrap multiplicities.
    fn means(&self, counts: Option<&[u32]>) -> Vec<f64> {
        let w = 4 * self.horizon;
        let mut s = vec![0.0; w];
        let mut total = 0.0;
        for i in 0..self.len() {
            let m = counts.map_or(1.0, |c| f64::from(c[i]));
            if m == 0.0 {
                continue;
            }
            total += m;
            for (a, b) in s.iter_mut().zip(self.unit(i)) {
                *a += m * b;
            }
        }
        s.iter_mut().for_each(|v| *v /= total);
        s
    }

    fn combine(&self, m: &[f64], normalize: bool, augment: bool) -> Result<f64> {
        let h = self.horizon;
        let mut est = 0.0;
        for t in 1..=h {
            let (c, q, v, r) = (m[t - 1], m[h + t - 1], m[2 * h + t - 1], m[3 * h + t - 1]);
            let r_prev = if t == 1 { 1.0 } else { m[3 * h + t - 2] };
            if !normalize {
                est += c;
                if augment {
                    est += v - q;
                }
                continue;
            }
            if r <= 0.0 {
                return Err(AfapeError::EmptyEffectiveSample { t });
            }
            est += c / r;
            if augment {
                if r_prev <= 0.0 {
                    return Err(AfapeError::EmptyEffectiveSample { t: t - 1 });
                }
                est += v / r_prev - q / r;
            }
        }
        Ok(est)
    }

    pub fn estimate(&self, normalize: bool, augment: bool) -> Result<f64> {
        if self.is_empty() {
            return Err(AfapeError::invalid("no units to average"));
        }
        self.combine(&self.means(None), normalize, augment)
    }

    /// Mean weight `E[rho^t]` per step (unnormalized).
    pub fn mean_weights(&self) -> Vec<f64> {
        let m = self.means(None);
        m[3 * self.horizon..].to_vec()
    }

    /// Per-unit `r_t`, the mass-weighted `rho^t` of each unit.
    pub fn unit_weights(&self, t: usize) -> Vec<f64> {
        assert!((1..=self.horizon).contains(&t), "step {t} outside 1..={}", self.horizon);
        (0..self.len()).map(|i| self.unit(i)[3 * self.horizon + t - 1]).collect()
    }

    /// Per-unit values of the augmentation `sum_t (v_t - q_t)`.
    pub fn augmentation_terms(&self) -> Vec<f64> {
        let h = self.horizon;
        (0..self.len())
            .map(|i| {
                let u = self.unit(i);
                (0..h).map(|j| u[2 * h + j] - u[h + j]).sum()
            })
            .collect()
    }

    /// Per-unit values of `sum_t c_t` (the unnormalized statistic).
    pub fn unit_totals(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.unit(i)[..self.horizon].iter().sum()).collect()
    }

    /// Percentile interval from `b` resamples of units. Replicates whose
    /// normalized statistic is undefined are dropped.
    pub fn bootstrap(&self, normalize: bool, augment: bool, b: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
        if b < 2 {
            return Err(AfapeError::invalid("bootstrap needs at least 2 replicates"));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(AfapeError::config("confidence level must lie in (0, 1)"));
        }
        let n = self.len();
        if n == 0 {
            return Err(AfapeError::invalid("no units to resample"));
        }
        let stats: Vec<Option<f64>> = (0..b as u64)
            .into_par_iter()
            .map(|rep| {
                let mut rng = stream(seed, rep, Purpose::Bootstrap);
                let mut counts = vec![0u32; n];
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1;
                }
                self.combine(&self.means(Some(&counts)), normalize, augment).ok()
            })
            .collect();
        let mut vals: Vec<f64> = stats.into_iter().flatten().collect();
        if vals.len() < 2 {
            return Err(AfapeError::EmptyEffectiveSample { t: self.horizon });
        }
        vals.sort_by(f64::total_cmp);
        let lo = quantile(&vals, (1.0 - level) / 2.0);
        let hi = quantile(&vals, (1.0 + level) / 2.0);
        Ok((lo, hi))
    }
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(c: &[f64], r: &[f64]) -> UnitTerms {
        let mut u = UnitTerms::new(c.len());
        for t in 1..=c.len() {
            u.add_cost(t, c[t - 1]);
            u.add_weight(t, r[t - 1]);
        }
        u
    }

    #[test]
    fn plain_mean() {
        let t = TermTable::from_units(2, [UnitTerms::plain(&[1.0, 2.0]), UnitTerms::plain(&[3.0, 4.0])]);
        assert_eq!(t.estimate(false, false).unwrap(), 5.0);
        assert_eq!(t.estimate(true, false).unwrap(), 5.0);
    }

    #[test]
    fn hajek_divides_by_mean_weight() {
        // weights 2 and 0 on costs 1 and 5
        let t = TermTable::from_units(1, [unit(&[2.0], &[2.0]), unit(&[0.0], &[0.0])]);
        assert_eq!(t.estimate(false, false).unwrap(), 1.0);
        assert_eq!(t.estimate(true, false).unwrap(), 1.0 / 1.0);
        let z = TermTable::from_units(1, [unit(&[0.0], &[0.0])]);
        assert!(matches!(z.estimate(true, false), Err(AfapeError::EmptyEffectiveSample { t: 1 })));
    }

    #[test]
    fn augmentation_uses_previous_weight() {
        let mut u = UnitTerms::new(2);
        u.add_cost(1, 1.0);
        u.add_cost(2, 1.0);
        u.add_weight(1, 2.0);
        u.add_weight(2, 4.0);
        u.add_q(2, 8.0);
        u.add_v(2, 2.0);
        let t = TermTable::from_units(2, [u]);
        assert_eq!(t.estimate(false, true).unwrap(), 2.0 + 2.0 - 8.0);
        assert_eq!(t.estimate(true, true).unwrap(), 0.5 + 0.25 + 1.0 - 2.0);
        assert_eq!(t.augmentation_terms(), vec![-6.0]);
    }

    #[test]
    fn constant_statistic_has_zero_width_interval() {
        let t = TermTable::from_units(1, (0..50).map(|_| UnitTerms::plain(&[3.0])));
        let (lo, hi) = t.bootstrap(true, false, 50, 0.95, 1).unwrap();
        assert_eq!((lo, hi), (3.0, 3.0));
        assert!(t.bootstrap(true, false, 1, 0.95, 1).is_err());
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let t = TermTable::from_units(1, (0..100).map(|i| UnitTerms::plain(&[f64::from(i)])));
        let a = t.bootstrap(false, false, 100, 0.9, 4).unwrap();
        let b = t.bootstrap(false, false, 100, 0.9, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.0 < 49.5 && a.1 > 49.5);
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[0.0, 10.0], 0.25), 2.5);
        assert_eq!(quantile(&[1.0], 0.9), 1.0);
    }
}
