//! Records, datasets, splits, and the dataset file formats.
//!
//! CSV layout: one row per `(record, t)` for `t = 0..=T` with columns
//! `id, t, x0..x{d-1}, a0..a{K-1}, y`, followed by `u0..u{d-1}` when the
//! records carry their counterfactual panel. Missing cells are empty fields.
//! Row `t = 0` has empty mask and label fields. The JSON-lines format carries
//! the same fields per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{AfapeError, Result};
use crate::mask::{MaskTrajectory, StepMask, SuperfeatureMap};
use crate::panel::{consistent_with_masks, FullPanel, LabelSeq, ObservedPanel};

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: u64,
    pub observed: ObservedPanel,
    pub masks: MaskTrajectory,
    pub labels: LabelSeq,
    pub truth: Option<FullPanel>,
}

impl Record {
    pub fn new(
        id: u64,
        observed: ObservedPanel,
        masks: MaskTrajectory,
        labels: LabelSeq,
        truth: Option<FullPanel>,
        map: &SuperfeatureMap,
    ) -> Result<Self> {
        if !consistent_with_masks(&observed, &masks, map) {
            return Err(AfapeError::invalid(format!(
                "record {id}: observed cells do not match the acquisition masks"
            )));
        }
        if labels.horizon() != masks.horizon() {
            return Err(AfapeError::invalid(format!("record {id}: label/mask horizon mismatch")));
        }
        if let Some(full) = &truth {
            if full.rows() != observed.rows() || full.cols() != observed.cols() {
                return Err(AfapeError::invalid(format!("record {id}: truth panel shape mismatch")));
            }
            let agrees = (0..full.rows()).all(|t| {
                (0..full.cols()).all(|j| observed.get(t, j).is_none_or(|v| v.to_bits() == full.get(t, j).to_bits()))
            });
            if !agrees {
                return Err(AfapeError::invalid(format!(
                    "record {id}: truth disagrees with an observed cell"
                )));
            }
        }
        Ok(Self {
            id,
            observed,
            masks,
            labels,
            truth,
        })
    }

    pub fn horizon(&self) -> usize {
        self.masks.horizon()
    }

    pub fn is_complete_case(&self) -> bool {
        self.masks.is_complete()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Nuisance,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub map: SuperfeatureMap,
    pub horizon: usize,
    pub records: Vec<Record>,
}

/// The three disjoint parts of a dataset.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub nuisance: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn get(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Nuisance => &self.nuisance,
            Split::Test => &self.test,
        }
    }
}

pub const DEFAULT_SPLIT_FRACTIONS: [f64; 3] = [0.30, 0.30, 0.40];

impl Dataset {
    pub fn new(map: SuperfeatureMap, horizon: usize, records: Vec<Record>) -> Self {
        Self { map, horizon, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn complete_case_ratio(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.is_complete_case()).count() as f64 / self.len() as f64
    }

    fn with_records(&self, records: Vec<Record>) -> Dataset {
        Dataset {
            map: self.map.clone(),
            horizon: self.horizon,
            records,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        self.with_records(indices.iter().map(|&i| self.records[i].clone()).collect())
    }

    /// Contiguous train / nuisance / test split in record order.
    pub fn split(&self, fractions: [f64; 3]) -> Result<Splits> {
        let total: f64 = fractions.iter().sum();
        if fractions.iter().any(|&f| !(f >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(AfapeError::config("split fractions must be nonnegative and sum to 1"));
        }
        let n = self.len();
        let n_train = (fractions[0] * n as f64).round() as usize;
        let n_nuis = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
        let (train, rest) = self.records.split_at(n_train);
        let (nuis, test) = rest.split_at(n_nuis);
        Ok(Splits {
            train: self.with_records(train.to_vec()),
            nuisance: self.with_records(nuis.to_vec()),
            test: self.with_records(test.to_vec()),
        })
    }

    /// Per panel row, the mean of each column over its acquired cells
    /// (0 when a column is never acquired in that row).
    pub fn row_means(&self) -> Vec<Vec<f64>> {
        let Some(first) = self.records.first() else { return vec![] };
        let (rows, cols) = (first.observed.rows(), first.observed.cols());
        let mut sum = vec![vec![0.0; cols]; rows];
        let mut cnt = vec![vec![0usize; cols]; rows];
        for r in &self.records {
            for t in 0..rows {
                for (j, c) in r.observed.row(t).iter().enumerate() {
                    if let Some(v) = c {
                        sum[t][j] += v;
                        cnt[t][j] += 1;
                    }
                }
            }
        }
        for (s, c) in sum.iter_mut().zip(&cnt) {
            for (v, &n) in s.iter_mut().zip(c) {
                if n > 0 {
                    *v /= n as f64;
                }
            }
        }
        sum
    }

    pub fn has_truth(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.truth.is_some())
    }

    // ----- CSV ---------------------------------------------------------

    fn header(&self, with_truth: bool) -> Vec<String> {
        let d = self.map.n_sub();
        let mut h = vec!["id".to_string(), "t".to_string()];
        h.extend((0..d).map(|j| format!("x{j}")));
        h.extend((0..self.map.len()).map(|k| format!("a{k}")));
        h.push("y".to_string());
        if with_truth {
            h.extend((0..d).map(|j| format!("u{j}")));
        }
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let with_truth = self.has_truth();
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.header(with_truth))?;
        for r in &self.records {
            for t in 0..=self.horizon {
                let mut row = vec![r.id.to_string(), t.to_string()];
                row.extend(r.observed.row(t).iter().map(|c| c.map(fmt_f64).unwrap_or_default()));
                if t == 0 {
                    row.extend(std::iter::repeat_n(String::new(), self.map.len() + 1));
                } else {
                    let m = r.masks.at(t);
                    row.extend(m.iter().map(|b| u8::from(b).to_string()));
                    row.push(r.labels.at(t).to_string());
                }
                if with_truth {
                    let full = r.truth.as_ref().expect("checked by has_truth");
                    row.extend(full.row(t).iter().map(|&v| fmt_f64(v)));
                }
                wr.write_record(&row)?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(rd: R, map: SuperfeatureMap, horizon: usize) -> Result<Dataset> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(rd);
        let headers = reader.headers()?.clone();
        let d = map.n_sub();
        let k = map.len();
        let base = 2 + d + k + 1;
        let with_truth = match headers.len() {
            n if n == base => false,
            n if n == base + d => true,
            n => {
                return Err(AfapeError::Parse {
                    line: 1,
                    msg: format!("expected {base} or {} columns, found {n}", base + d),
                })
            }
        };
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let field = |c: usize| rec.get(c).unwrap_or("");
            let id = parse_u64(field(0), line)?;
            let t = parse_u64(field(1), line)? as usize;
            let x = (0..d).map(|j| parse_opt_f64(field(2 + j), line)).collect::<Result<Vec<_>>>()?;
            let a = (0..k)
                .map(|j| parse_opt_bit(field(2 + d + j), line).map(|b| b.map(|b| b == 1)))
                .collect::<Result<Vec<_>>>()?;
            let y = parse_opt_bit(field(2 + d + k), line)?;
            let u = if with_truth {
                Some((0..d).map(|j| parse_f64(field(base + j), line)).collect::<Result<Vec<_>>>()?)
            } else {
                None
            };
            rows.push(FlatRow { id, t, x, a, y, u });
        }
        assemble(rows, map, horizon)
    }

    // ----- JSON lines --------------------------------------------------

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            for t in 0..=self.horizon {
                let row = JsonRow {
                    id: r.id,
                    t,
                    x: r.observed.row(t).to_vec(),
                    a: (t > 0).then(|| r.masks.at(t).iter().map(u8::from).collect()),
                    y: (t > 0).then(|| r.labels.at(t)),
                    u: r.truth.as_ref().map(|f| f.row(t).to_vec()),
                };
                serde_json::to_writer(&mut w, &row)?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(rd: R, map: SuperfeatureMap, horizon: usize) -> Result<Dataset> {
        let mut rows = Vec::new();
        for (i, line) in rd.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: JsonRow = serde_json::from_str(&line).map_err(|e| AfapeError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            let a = match row.a {
                Some(bits) => bits.into_iter().map(|b| Some(b == 1)).collect(),
                None => vec![None; map.len()],
            };
            rows.push(FlatRow {
                id: row.id,
                t: row.t,
                x: row.x,
                a,
                y: row.y,
                u: row.u,
            });
        }
        assemble(rows, map, horizon)
    }
}

#[derive(Serialize, Deserialize)]
struct JsonRow {
    id: u64,
    t: usize,
    x: Vec<Option<f64>>,
    a: Option<Vec<u8>>,
    y: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    u: Option<Vec<f64>>,
}

struct FlatRow {
    id: u64,
    t: usize,
    x: Vec<Option<f64>>,
    a: Vec<Option<bool>>,
    y: Option<u8>,
    u: Option<Vec<f64>>,
}

fn assemble(rows: Vec<FlatRow>, map: SuperfeatureMap, horizon: usize) -> Result<Dataset> {
    let d = map.n_sub();
    let per = horizon + 1;
    if rows.len() % per != 0 {
        return Err(AfapeError::invalid(format!(
            "{} rows is not a multiple of T+1 = {per}",
            rows.len()
        )));
    }
    let mut records = Vec::with_capacity(rows.len() / per);
    for chunk in rows.chunks(per) {
        let id = chunk[0].id;
        let mut cells = Vec::with_capacity(per * d);
        let mut steps = Vec::with_capacity(horizon);
        let mut labels = Vec::with_capacity(horizon);
        let mut truth_vals = Vec::with_capacity(per * d);
        let with_truth = chunk[0].u.is_some();
        for (t, row) in chunk.iter().enumerate() {
            if row.id != id || row.t != t || row.x.len() != d {
                return Err(AfapeError::invalid(format!(
                    "record {id}: rows must be contiguous with t = 0..={horizon}"
                )));
            }
            cells.extend_from_slice(&row.x);
            if t > 0 {
                let bits = row
                    .a
                    .iter()
                    .map(|b| b.ok_or_else(|| AfapeError::invalid(format!("record {id}: missing mask at t={t}"))))
                    .collect::<Result<Vec<_>>>()?;
                steps.push(StepMask::from_bools(&bits));
                labels.push(row.y.ok_or_else(|| AfapeError::invalid(format!("record {id}: missing label at t={t}")))?);
            }
            match (&row.u, with_truth) {
                (Some(u), true) if u.len() == d => truth_vals.extend_from_slice(u),
                (None, false) => {}
                _ => return Err(AfapeError::invalid(format!("record {id}: inconsistent truth columns"))),
            }
        }
        let observed = ObservedPanel::new(per, d, cells)?;
        let truth = if with_truth { Some(FullPanel::new(per, d, truth_vals)?) } else { None };
        records.push(Record::new(
            id,
            observed,
            MaskTrajectory::new(steps)?,
            LabelSeq::new(labels)?,
            truth,
            &map,
        )?);
    }
    Ok(Dataset::new(map, horizon, records))
}

/// Shortest decimal that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_u64(s: &str, line: usize) -> Result<u64> {
    s.trim().parse().map_err(|e| AfapeError::Parse {
        line,
        msg: format!("bad integer {s:?}: {e}"),
    })
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse().map_err(|e| AfapeError::Parse {
        line,
        msg: format!("bad number {s:?}: {e}"),
    })
}

fn parse_opt_f64(s: &str, line: usize) -> Result<Option<f64>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(s, line).map(Some)
    }
}

fn parse_opt_bit(s: &str, line: usize) -> Result<Option<u8>> {
    match s.trim() {
        "" => Ok(None),
        "0" => Ok(Some(0)),
        "1" => Ok(Some(1)),
        other => Err(AfapeError::Parse {
            line,
            msg: format!("expected 0/1, found {other:?}"),
        }),
    }
}
