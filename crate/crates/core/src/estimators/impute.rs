//! Oracle Gaussian imputation for the autoregressive feature process.
//!
//! Each column follows `X^0 = e^0`, `X^t = g X^{t-1} + (1 - g) e^t`, columns
//! independent, so a column's missing cells are drawn from the exact normal
//! conditional given its acquired cells.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dgp::DgpConfig;
use crate::error::{AfapeError, Result};
use crate::panel::{FullPanel, LabelSeq, ObservedPanel};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianImputer {
    rows: usize,
    /// Covariance of one column across rows.
    cov: DMatrix<f64>,
    /// When set, completions are drawn given the labels too (by rejection).
    label_rule: Option<DgpConfig>,
}

/// Attempts per completion before label-conditional sampling gives up.
const MAX_REJECTIONS: usize = 10_000;

/// Mean and covariance of the missing cells given the observed ones.
#[derive(Debug, Clone)]
pub struct Conditional {
    pub missing: Vec<usize>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianImputer {
    pub fn new(cfg: &DgpConfig) -> Result<Self> {
        if !cfg.experiment.is_mar() {
            return Err(AfapeError::Unsupported(format!(
                "oracle imputation needs missingness at random; {} is not",
                cfg.experiment
            )));
        }
        if cfg.acquisition_shift != 0.0 {
            return Err(AfapeError::Unsupported(
                "acquisitions shift the features; the conditional is not Gaussian".into(),
            ));
        }
        let rows = cfg.horizon + 1;
        let var: Vec<f64> = (0..rows).map(|t| cfg.feature_variance(t)).collect();
        let cov = DMatrix::from_fn(rows, rows, |s, t| {
            let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
            cfg.gamma.powi((hi - lo) as i32) * var[lo]
        });
        Ok(Self {
            rows,
            cov,
            label_rule: None,
        })
    }

    /// Also condition completions on the observed labels.
    pub fn conditioned_on_labels(mut self, cfg: &DgpConfig) -> Self {
        self.label_rule = Some(cfg.clone());
        self
    }

    pub fn uses_labels(&self) -> bool {
        self.label_rule.is_some()
    }

    /// One completion, drawn given the labels when label conditioning is on.
    pub fn complete_record<R: Rng + ?Sized>(&self, panel: &ObservedPanel, labels: &LabelSeq, rng: &mut R) -> Result<FullPanel> {
        let Some(cfg) = &self.label_rule else {
            return self.complete(panel, rng);
        };
        for _ in 0..MAX_REJECTIONS {
            let full = self.complete(panel, rng)?;
            // acceptance probability = p(labels | completion) <= 1
            let mut p = 1.0;
            for t in 1..=labels.horizon() {
                let positive = cfg.label_score(full.row(t - 1), full.row(t)) > 0.0;
                p *= match (positive, labels.at(t)) {
                    (true, 1) => 1.0,
                    (true, _) => 0.0,
                    (false, 1) => cfg.fallback_label_p,
                    (false, _) => 1.0 - cfg.fallback_label_p,
                };
            }
            if rng.random::<f64>() < p {
                return Ok(full);
            }
        }
        Err(AfapeError::Fit(format!(
            "label-conditional imputation rejected {MAX_REJECTIONS} draws"
        )))
    }

    /// Conditional law of the missing rows of one column.
    pub fn conditional(&self, column: &[Option<f64>]) -> Result<Conditional> {
        let missing: Vec<usize> = (0..self.rows).filter(|&r| column[r].is_none()).collect();
        let observed: Vec<usize> = (0..self.rows).filter(|&r| column[r].is_some()).collect();
        let sub = |a: &[usize], b: &[usize]| DMatrix::from_fn(a.len(), b.len(), |i, j| self.cov[(a[i], b[j])]);
        let s_mm = sub(&missing, &missing);
        if observed.is_empty() {
            return Ok(Conditional {
                mean: DVector::zeros(missing.len()),
                cov: s_mm,
                missing,
            });
        }
        let s_mo = sub(&missing, &observed);
        let s_oo = sub(&observed, &observed);
        let x_o = DVector::from_iterator(observed.len(), observed.iter().map(|&r| column[r].expect("observed")));
        let chol = s_oo
            .cholesky()
            .ok_or_else(|| AfapeError::Fit("observed covariance is not positive definite".into()))?;
        let mean = &s_mo * chol.solve(&x_o);
        let cov = &s_mm - &s_mo * chol.solve(&s_mo.transpose());
        Ok(Conditional { missing, mean, cov })
    }

    /// One completion of `panel`.
    pub fn complete<R: Rng + ?Sized>(&self, panel: &ObservedPanel, rng: &mut R) -> Result<FullPanel> {
        let cols = panel.cols();
        let mut full = FullPanel::zeros(self.rows, cols);
        for j in 0..cols {
            let column: Vec<Option<f64>> = (0..self.rows).map(|r| panel.get(r, j)).collect();
            for (r, v) in column.iter().enumerate() {
                if let Some(v) = v {
                    full.set(r, j, *v);
                }
            }
            if column.iter().all(Option::is_some) {
                continue;
            }
            let cond = self.conditional(&column)?;
            let draw = sample_normal(&cond.mean, &cond.cov, rng)?;
            for (i, &r) in cond.missing.iter().enumerate() {
                full.set(r, j, draw[i]);
            }
        }
        Ok(full)
    }
}

fn sample_normal<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    let n = mean.len();
    // a tiny ridge keeps the factorization stable for near-degenerate rows
    let ridge = DMatrix::<f64>::identity(n, n) * 1e-12;
    let l = (cov + ridge)
        .cholesky()
        .ok_or_else(|| AfapeError::Fit("conditional covariance is not positive definite".into()))?
        .l();
    let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    Ok(mean + l * z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::Experiment;
    use rand::SeedableRng;

    #[test]
    fn unsupported_outside_mar_gaussian() {
        assert!(matches!(
            GaussianImputer::new(&DgpConfig::new(Experiment::E4)),
            Err(AfapeError::Unsupported(_))
        ));
        assert!(GaussianImputer::new(&DgpConfig::new(Experiment::E5)).is_err());
    }

    #[test]
    fn single_missing_cell_matches_closed_form() {
        let cfg = DgpConfig::new(Experiment::E1);
        let imp = GaussianImputer::new(&cfg).unwrap();
        // only row 1 missing: conditional on rows 0, 2, 3
        let column = [Some(0.5), None, Some(-0.2), Some(0.1)];
        let cond = imp.conditional(&column).unwrap();
        let v1 = cfg.feature_variance(1);
        assert!(cond.cov[(0, 0)] > 0.0 && cond.cov[(0, 0)] < v1);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let panel = ObservedPanel::new(4, 1, column.to_vec()).unwrap();
        let n = 40_000;
        let draws: Vec<f64> = (0..n).map(|_| imp.complete(&panel, &mut rng).unwrap().get(1, 0)).collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        let v = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
        assert!((m - cond.mean[0]).abs() < 0.01);
        assert!((v / cond.cov[(0, 0)] - 1.0).abs() < 0.05, "{v} vs {}", cond.cov[(0, 0)]);
    }

    #[test]
    fn label_conditioning_respects_labels() {
        let cfg = DgpConfig::new(Experiment::E1);
        let imp = GaussianImputer::new(&cfg).unwrap().conditioned_on_labels(&cfg);
        let mut cells = vec![None; 16];
        for c in cells.iter_mut().take(4) {
            *c = Some(-1.0);
        }
        let panel = ObservedPanel::new(4, 4, cells).unwrap();
        let labels = LabelSeq::new(vec![1, 0, 0]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let full = imp.complete_record(&panel, &labels, &mut rng).unwrap();
            // a zero label rules out a positive score
            assert!(cfg.label_score(full.row(1), full.row(2)) <= 0.0);
        }
    }

    #[test]
    fn markov_structure() {
        // with rows 0 and 2 observed, row 1 does not depend on row 3's absence
        let cfg = DgpConfig::new(Experiment::E1);
        let imp = GaussianImputer::new(&cfg).unwrap();
        let a = imp.conditional(&[Some(1.0), None, Some(0.0), None]).unwrap();
        let b = imp.conditional(&[Some(1.0), None, Some(0.0), Some(0.0)]).unwrap();
        assert!((a.mean[0] - b.mean[0]).abs() < 1e-12);
        assert!((a.cov[(0, 0)] - b.cov[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn complete_panel_is_unchanged() {
        let cfg = DgpConfig::new(Experiment::E2);
        let imp = GaussianImputer::new(&cfg).unwrap();
        let vals: Vec<Option<f64>> = (0..16).map(|i| Some(i as f64)).collect();
        let p = ObservedPanel::new(4, 4, vals).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let full = imp.complete(&p, &mut rng).unwrap();
        assert_eq!(full.get(3, 3), 15.0);
    }
}
