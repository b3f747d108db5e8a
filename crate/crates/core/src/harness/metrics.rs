//! Accuracy matrix and the incremental metrics derived from it.
//!
//! `a[i][b]` is the accuracy on task `i`'s test set after learning task `b`
//! (`i <= b`). `A_b` is the mean of stage `b`'s row; LA is `A_K`, AIA the
//! mean of all `A_b`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower-triangular accuracies stored stage-major: `rows[b][i] = a[i][b]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Metric("accuracy matrix needs at least one stage".into()));
        }
        for (b, row) in rows.iter().enumerate() {
            if row.len() != b + 1 {
                return Err(Error::Metric(format!(
                    "stage {b} has {} entries, expected {}",
                    row.len(),
                    b + 1
                )));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Metric(format!("accuracy {v} outside [0, 1]")));
            }
        }
        Ok(Self { rows })
    }

    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    /// `a[i][b]`, zero-based.
    pub fn get(&self, i: usize, b: usize) -> Option<f64> {
        self.rows.get(b).and_then(|r| r.get(i)).copied()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// `A_b` for zero-based stage `b`.
    pub fn stage_mean(&self, b: usize) -> f64 {
        let row = &self.rows[b];
        row.iter().sum::<f64>() / row.len() as f64
    }

    pub fn la(&self) -> f64 {
        self.stage_mean(self.tasks() - 1)
    }

    pub fn aia(&self) -> f64 {
        let k = self.tasks();
        (0..k).map(|b| self.stage_mean(b)).sum::<f64>() / k as f64
    }

    /// Mean over past tasks of the best earlier accuracy minus the final one.
    pub fn af(&self) -> Result<f64> {
        let k = self.tasks();
        if k < 2 {
            return Err(Error::Metric("forgetting needs at least two tasks".into()));
        }
        let total: f64 = (0..k - 1)
            .map(|i| {
                let peak = (i..k - 1)
                    .map(|b| self.rows[b][i])
                    .fold(f64::NEG_INFINITY, f64::max);
                peak - self.rows[k - 1][i]
            })
            .sum();
        Ok(total / (k - 1) as f64)
    }

    /// Mean accuracy on each task right after learning it.
    pub fn new_task_acc(&self) -> f64 {
        let k = self.tasks();
        (0..k).map(|b| self.rows[b][b]).sum::<f64>() / k as f64
    }

    /// Square CSV, `a[i][b]` at row `i`, column `b`; undefined cells empty.
    pub fn to_csv(&self) -> String {
        let k = self.tasks();
        let mut out = String::from("task");
        for b in 0..k {
            out.push_str(&format!(",after_{}", b + 1));
        }
        out.push('\n');
        for i in 0..k {
            out.push_str(&format!("{}", i + 1));
            for b in 0..k {
                match self.get(i, b) {
                    Some(v) => out.push_str(&format!(",{v:.6}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}
