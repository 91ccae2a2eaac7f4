//! Feature panels: rows are time steps `0..=T`, columns are subfeatures.

use crate::error::{AfapeError, Result};
use crate::mask::{MaskTrajectory, StepMask, SuperfeatureMap};

/// Counterfactual feature values under full acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct FullPanel {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FullPanel {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(AfapeError::invalid(format!(
                "panel expects {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AfapeError::invalid("panel contains non-finite values"));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, t: usize, j: usize) -> f64 {
        self.values[t * self.cols + j]
    }

    pub fn set(&mut self, t: usize, j: usize, v: f64) {
        self.values[t * self.cols + j] = v;
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.cols..(t + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Every cell observed.
    pub fn to_observed(&self) -> ObservedPanel {
        ObservedPanel {
            rows: self.rows,
            cols: self.cols,
            cells: self.values.iter().map(|&v| Some(v)).collect(),
        }
    }
}

/// Feature panel with explicit missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedPanel {
    rows: usize,
    cols: usize,
    cells: Vec<Option<f64>>,
}

impl ObservedPanel {
    pub fn new(rows: usize, cols: usize, cells: Vec<Option<f64>>) -> Result<Self> {
        if cells.len() != rows * cols {
            return Err(AfapeError::invalid(format!(
                "panel expects {} cells, got {}",
                rows * cols,
                cells.len()
            )));
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn missing(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            cells: vec![None; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, t: usize, j: usize) -> Option<f64> {
        self.cells[t * self.cols + j]
    }

    pub fn set(&mut self, t: usize, j: usize, v: Option<f64>) {
        self.cells[t * self.cols + j] = v;
    }

    pub fn row(&self, t: usize) -> &[Option<f64>] {
        &self.cells[t * self.cols..(t + 1) * self.cols]
    }

    pub fn cells(&self) -> &[Option<f64>] {
        &self.cells
    }

    pub fn n_missing(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }

    /// Copies row `t` of `src` restricted to the superfeatures set in `mask`.
    pub fn reveal_row(&mut self, t: usize, src: &ObservedPanel, mask: StepMask, map: &SuperfeatureMap) {
        for k in 0..map.len() {
            if mask.get(k) {
                for &c in map.columns(k) {
                    self.set(t, c, src.get(t, c));
                }
            }
        }
    }

    /// Appends row `t` to `out`, replacing missing cells with `fill`.
    pub fn extend_imputed(&self, t: usize, fill: &[f64], out: &mut Vec<f64>) {
        out.extend(self.row(t).iter().zip(fill).map(|(c, &f)| c.unwrap_or(f)));
    }

    /// Panel as complete values, if no cell in rows `0..=last_row` is missing.
    pub fn to_full(&self, last_row: usize) -> Option<FullPanel> {
        let mut values = vec![0.0; self.rows * self.cols];
        for t in 0..=last_row {
            for j in 0..self.cols {
                values[t * self.cols + j] = self.get(t, j)?;
            }
        }
        Some(FullPanel {
            rows: self.rows,
            cols: self.cols,
            values,
        })
    }
}

/// Per-step binary labels `Y^1..Y^T`; `labels.at(t)` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSeq {
    y: Vec<u8>,
}

impl LabelSeq {
    pub fn new(y: Vec<u8>) -> Result<Self> {
        if y.iter().any(|&v| v > 1) {
            return Err(AfapeError::invalid("labels must be 0 or 1"));
        }
        Ok(Self { y })
    }

    pub fn horizon(&self) -> usize {
        self.y.len()
    }

    pub fn at(&self, t: usize) -> u8 {
        self.y[t - 1]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.y
    }
}

/// Observation function: row 0 is always observed, row `t >= 1` shows the
/// columns of the superfeatures acquired at step `t`.
pub fn apply_mask(full: &FullPanel, masks: &MaskTrajectory, map: &SuperfeatureMap) -> Result<ObservedPanel> {
    check_shapes(full.rows(), full.cols(), masks, map)?;
    let mut out = ObservedPanel::missing(full.rows(), full.cols());
    for j in 0..full.cols() {
        out.set(0, j, Some(full.get(0, j)));
    }
    for t in 1..full.rows() {
        let mask = masks.at(t);
        for j in 0..full.cols() {
            if mask.get(map.owner(j)) {
                out.set(t, j, Some(full.get(t, j)));
            }
        }
    }
    Ok(out)
}

/// Re-masks an observed panel with a (smaller) mask trajectory.
pub fn remask(observed: &ObservedPanel, masks: &MaskTrajectory, map: &SuperfeatureMap) -> Result<ObservedPanel> {
    check_shapes(observed.rows(), observed.cols(), masks, map)?;
    let mut out = ObservedPanel::missing(observed.rows(), observed.cols());
    for j in 0..observed.cols() {
        out.set(0, j, observed.get(0, j));
    }
    for t in 1..observed.rows() {
        out.reveal_row(t, observed, masks.at(t), map);
    }
    Ok(out)
}

fn check_shapes(rows: usize, cols: usize, masks: &MaskTrajectory, map: &SuperfeatureMap) -> Result<()> {
    if cols != map.n_sub() {
        return Err(AfapeError::invalid(format!(
            "panel has {cols} columns but the map covers {}",
            map.n_sub()
        )));
    }
    if rows != masks.horizon() + 1 {
        return Err(AfapeError::invalid(format!(
            "panel has {rows} rows but masks cover {} steps",
            masks.horizon()
        )));
    }
    if masks.steps().iter().any(|m| m.len() != map.len()) {
        return Err(AfapeError::invalid("mask width differs from superfeature count"));
    }
    Ok(())
}

/// Checks the observed-panel invariant against masks: row 0 complete, and a
/// cell at `t >= 1` is observed exactly when its superfeature was acquired.
pub fn consistent_with_masks(observed: &ObservedPanel, masks: &MaskTrajectory, map: &SuperfeatureMap) -> bool {
    if check_shapes(observed.rows(), observed.cols(), masks, map).is_err() {
        return false;
    }
    if observed.row(0).iter().any(Option::is_none) {
        return false;
    }
    (1..observed.rows()).all(|t| {
        let mask = masks.at(t);
        (0..observed.cols()).all(|j| observed.get(t, j).is_some() == mask.get(map.owner(j)))
    })
}
