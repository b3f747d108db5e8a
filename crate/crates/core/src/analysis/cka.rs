use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::builder::Network;
use crate::error::{Error, Result};
use crate::harness::LabeledDataset;
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::seed;

pub const PROBE_SIZE: usize = 256;

/// Row-major `n × d` matrix of features, one row per probe example.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows < 2 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Similarity(format!(
                "feature matrix needs n >= 2 rows and {rows}x{cols} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Similarity("non-finite feature".into()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Flattens every dimension after the first.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let n = t.shape()[0];
        Self::new(n, t.numel() / n, t.data().iter().map(|v| v.as_f64()).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn centered(&self) -> Vec<f64> {
        let mut out = self.data.clone();
        for j in 0..self.cols {
            let mean = (0..self.rows).map(|i| self.data[i * self.cols + j]).sum::<f64>() / self.rows as f64;
            for i in 0..self.rows {
                out[i * self.cols + j] -= mean;
            }
        }
        out
    }
}

/// `Aᵀ B` for row-major `n × p` and `n × q`.
fn cross(n: usize, a: &[f64], p: usize, b: &[f64], q: usize) -> Vec<f64> {
    let mut c = vec![0.0; p * q];
    f64::gemm(p, n, q, 1.0, a, 1, p, b, q, 1, 0.0, &mut c, q, 1);
    c
}

fn frobenius_sq(m: &[f64]) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Linear CKA in feature space:
/// `‖Ȳᵀ X̄‖²_F / (‖X̄ᵀ X̄‖_F · ‖Ȳᵀ Ȳ‖_F)` with column-centered `X̄`, `Ȳ`.
pub fn linear_cka(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<f64> {
    if x.rows != y.rows {
        return Err(Error::Similarity(format!(
            "feature matrices have {} and {} rows",
            x.rows, y.rows
        )));
    }
    let n = x.rows;
    let xc = x.centered();
    let yc = y.centered();
    let xx = frobenius_sq(&cross(n, &xc, x.cols, &xc, x.cols)).sqrt();
    let yy = frobenius_sq(&cross(n, &yc, y.cols, &yc, y.cols)).sqrt();
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::Similarity("centered features are all zero".into()));
    }
    let xy = frobenius_sq(&cross(n, &yc, y.cols, &xc, x.cols));
    Ok((xy / (xx * yy)).clamp(0.0, 1.0))
}

/// Symmetric stage-by-stage similarity matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CkaMatrix {
    pub stages: Vec<usize>,
    pub values: Vec<f64>,
}

impl CkaMatrix {
    pub fn size(&self) -> usize {
        self.stages.len()
    }

    pub fn get(&self, s: usize, t: usize) -> f64 {
        self.values[s * self.size() + t]
    }

    /// Header row of stage ids, then one row per stage led by its id.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage");
        for s in &self.stages {
            out.push_str(&format!(",{s}"));
        }
        out.push('\n');
        for (i, s) in self.stages.iter().enumerate() {
            out.push_str(&s.to_string());
            for j in 0..self.size() {
                out.push_str(&format!(",{:?}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// CKA between eval-mode trunk features of every pair of checkpoints on one
/// probe batch. `stages` labels the rows; `None` numbers them from 0.
pub fn cka_across_stages<T: Scalar>(
    checkpoints: &[&Network<T>],
    probe: &Tensor<T>,
    stages: Option<Vec<usize>>,
) -> Result<CkaMatrix> {
    let Some(first) = checkpoints.first() else {
        return Err(Error::Similarity("no checkpoints".into()));
    };
    let stages = stages.unwrap_or_else(|| (0..checkpoints.len()).collect());
    if stages.len() != checkpoints.len() {
        return Err(Error::Similarity("one stage id per checkpoint required".into()));
    }
    for net in checkpoints {
        if net.plan().input != first.plan().input {
            return Err(Error::Similarity(format!(
                "checkpoint inputs differ: {:?} vs {:?}",
                net.plan().input.dims(),
                first.plan().input.dims()
            )));
        }
    }
    let features = checkpoints
        .iter()
        .map(|net| FeatureMatrix::from_tensor(&net.features(probe)?))
        .collect::<Result<Vec<_>>>()?;
    let s = features.len();
    let mut values = vec![0.0; s * s];
    for i in 0..s {
        for j in i..s {
            let v = linear_cka(&features[i], &features[j])?;
            values[i * s + j] = v;
            values[j * s + i] = v;
        }
    }
    Ok(CkaMatrix { stages, values })
}

/// Up to `n` examples drawn round-robin over shuffled classes, so every class
/// is represented when `n` allows.
pub fn probe_indices(ds: &LabeledDataset, n: usize, probe_seed: u64) -> Vec<usize> {
    let mut rng = seed::rng(probe_seed, &[0x9_0be]);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in ds.labels().iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    for v in by_class.values_mut() {
        v.shuffle(&mut rng);
    }
    let mut out = Vec::with_capacity(n.min(ds.len()));
    let mut round = 0;
    while out.len() < n {
        let before = out.len();
        for v in by_class.values() {
            if out.len() == n {
                break;
            }
            if let Some(&i) = v.get(round) {
                out.push(i);
            }
        }
        if out.len() == before {
            break;
        }
        round += 1;
    }
    out.sort_unstable();
    out
}
