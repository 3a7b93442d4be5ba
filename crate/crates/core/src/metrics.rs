//! Continual-learning metrics over a lower-triangular matrix of per-task Dice.
//!
//! `rows[t][i]` is the mean Dice on task `i` after training session `t`, for `i <= t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{dice, LabelMask};

pub const RESULTS_VERSION: u64 = 1;
pub const METRICS_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMatrix {
    pub version: u64,
    pub tasks: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ResultMatrix {
    pub fn new(tasks: Vec<String>) -> Self {
        Self {
            version: RESULTS_VERSION,
            tasks,
            rows: Vec::new(),
        }
    }

    pub fn from_rows(tasks: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self {
            version: RESULTS_VERSION,
            tasks,
            rows,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != RESULTS_VERSION {
            return Err(Error::SchemaMismatch {
                document: "results",
                found: self.version,
                expected: RESULTS_VERSION,
            });
        }
        if self.rows.len() > self.tasks.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows for {} tasks",
                self.rows.len(),
                self.tasks.len()
            )));
        }
        for (t, row) in self.rows.iter().enumerate() {
            if row.len() > t + 1 {
                return Err(Error::ShapeMismatch(format!(
                    "row {t} has {} entries; at most {} tasks are seen by then",
                    row.len(),
                    t + 1
                )));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidConfig(format!("row {t}: Dice {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Append the evaluation row of the next session.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        self.rows.push(row);
        let r = self.validate();
        if r.is_err() {
            self.rows.pop();
        }
        r
    }

    fn complete_row(&self, t: usize) -> Result<&[f64]> {
        match self.rows.get(t) {
            Some(r) if r.len() == t + 1 => Ok(r),
            _ => Err(Error::IncompleteRow(t)),
        }
    }

    fn last_index(&self) -> Result<usize> {
        self.validate()?;
        self.tasks.len().checked_sub(1).ok_or(Error::Empty)
    }
}

/// Running mean; returns `c` exactly for a constant sequence.
fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut m = 0.0;
    for (k, v) in values.into_iter().enumerate() {
        m += (v - m) / (k + 1) as f64;
    }
    m
}

/// Mean Dice over all tasks after the final session.
pub fn avg(r: &ResultMatrix) -> Result<f64> {
    let last = r.last_index()?;
    Ok(mean(r.complete_row(last)?.iter().copied()))
}

/// Mean over sessions of the mean Dice on every task seen so far.
pub fn ilm(r: &ResultMatrix) -> Result<f64> {
    let last = r.last_index()?;
    let mut row_means = Vec::with_capacity(last + 1);
    for t in 0..=last {
        row_means.push(mean(r.complete_row(t)?.iter().copied()));
    }
    Ok(mean(row_means))
}

/// Mean of final-minus-just-learned Dice over all but the last task.
/// Negative values mean forgetting.
pub fn bwt(r: &ResultMatrix) -> Result<f64> {
    let last = r.last_index()?;
    if last == 0 {
        return Err(Error::SingleTask);
    }
    let final_row = r.complete_row(last)?;
    let mut deltas = Vec::with_capacity(last);
    for (i, &after) in final_row.iter().enumerate().take(last) {
        let learned = *r.rows[i].get(i).ok_or(Error::IncompleteRow(i))?;
        deltas.push(after - learned);
    }
    Ok(mean(deltas))
}

/// Unweighted mean of per-sample Dice.
pub fn episode_dsc(preds: &[LabelMask], gts: &[LabelMask]) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: gts.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::Empty);
    }
    let mut total = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        total += dice(p, g)?;
    }
    Ok(total / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: u64,
    pub avg: f64,
    pub ilm: f64,
    /// Undefined for a single task.
    pub bwt: Option<f64>,
    pub per_task_final: Vec<f64>,
}

pub fn metrics_report(r: &ResultMatrix) -> Result<MetricsReport> {
    let avg = avg(r)?;
    let ilm = ilm(r)?;
    let bwt = match bwt(r) {
        Ok(v) => Some(v),
        Err(Error::SingleTask) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        version: METRICS_VERSION,
        avg,
        ilm,
        bwt,
        per_task_final: r.rows[r.tasks.len() - 1].clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> ResultMatrix {
        ResultMatrix::from_rows(vec!["a".into(), "b".into()], vec![vec![0.8], vec![0.6, 0.7]]).unwrap()
    }

    fn constant(t: usize, c: f64) -> ResultMatrix {
        let tasks = (0..t).map(|i| format!("t{i}")).collect();
        let rows = (0..t).map(|i| vec![c; i + 1]).collect();
        ResultMatrix::from_rows(tasks, rows).unwrap()
    }

    #[test]
    fn fixture_values() {
        let r = fixture();
        assert!((avg(&r).unwrap() - 0.65).abs() < 1e-12);
        assert!((ilm(&r).unwrap() - 0.725).abs() < 1e-12);
        assert!((bwt(&r).unwrap() + 0.2).abs() < 1e-12);
    }

    #[test]
    fn positive_transfer() {
        let r = ResultMatrix::from_rows(vec!["a".into(), "b".into()], vec![vec![0.5], vec![0.6, 0.7]]).unwrap();
        assert!((bwt(&r).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn constant_matrices() {
        for t in 1..6 {
            let r = constant(t, 0.42);
            assert_eq!(avg(&r).unwrap(), 0.42);
            assert_eq!(ilm(&r).unwrap(), 0.42);
            if t > 1 {
                assert_eq!(bwt(&r).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn single_task() {
        let r = constant(1, 0.8);
        assert_eq!(avg(&r).unwrap(), 0.8);
        assert_eq!(ilm(&r).unwrap(), 0.8);
        assert!(matches!(bwt(&r), Err(Error::SingleTask)));
        assert_eq!(metrics_report(&r).unwrap().bwt, None);
    }

    #[test]
    fn incomplete_rows() {
        let r = ResultMatrix::from_rows(vec!["a".into(), "b".into()], vec![vec![0.8], vec![0.6]]).unwrap();
        assert!(matches!(avg(&r), Err(Error::IncompleteRow(1))));
        assert!(matches!(ilm(&r), Err(Error::IncompleteRow(1))));
        let short = ResultMatrix::from_rows(vec!["a".into(), "b".into()], vec![vec![0.8]]).unwrap();
        assert!(matches!(avg(&short), Err(Error::IncompleteRow(1))));
        assert!(ResultMatrix::from_rows(vec!["a".into()], vec![vec![0.8, 0.9]]).is_err());
        assert!(ResultMatrix::from_rows(vec!["a".into()], vec![vec![1.8]]).is_err());
    }

    #[test]
    fn push_row_rolls_back_on_error() {
        let mut r = ResultMatrix::new(vec!["a".into()]);
        assert!(r.push_row(vec![0.1, 0.2]).is_err());
        assert!(r.rows.is_empty());
        r.push_row(vec![0.3]).unwrap();
        assert_eq!(r.rows.len(), 1);
    }

    #[test]
    fn dsc_aggregation() {
        let a = LabelMask::new([1, 1, 2], vec![1, 1]).unwrap();
        let b = LabelMask::new([1, 1, 2], vec![1, 0]).unwrap();
        let e = LabelMask::empty([1, 1, 2]).unwrap();
        assert_eq!(episode_dsc(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap(), 1.0);
        // dice(a, {1,0}) = 2/3, dice(e, e) = 1
        let v = episode_dsc(&[a.clone(), e.clone()], &[b.clone(), e.clone()]).unwrap();
        assert!((v - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-12);
        assert!(matches!(episode_dsc(&[], &[]), Err(Error::Empty)));
        assert!(matches!(
            episode_dsc(&[a], &[]),
            Err(Error::LengthMismatch { left: 1, right: 0 })
        ));
    }
}
