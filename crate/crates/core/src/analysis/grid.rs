use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::builder::{ComponentConfig, DownsampleKind};
use crate::error::{Error, Result};
use crate::genotype::{Bounds, Genotype};
use crate::harness::{run_continual, RunOptions, Scenario, TaskStream, TrainConfig};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "grid", rename_all = "snake_case")]
pub enum GridCell {
    Components {
        downsample: DownsampleKind,
        use_skip: bool,
        use_gap: bool,
    },
    Scaling {
        width: usize,
        depth: usize,
        final_width: Option<usize>,
    },
}

impl GridCell {
    pub fn label(&self) -> String {
        match self {
            GridCell::Components {
                downsample,
                use_skip,
                use_gap,
            } => format!(
                "{} skip={} gap={}",
                downsample.name(),
                if *use_skip { "on" } else { "off" },
                if *use_gap { "on" } else { "off" }
            ),
            GridCell::Scaling {
                width,
                depth,
                final_width,
            } => match final_width {
                Some(f) => format!("W={width} D={depth} final={f}"),
                None => format!("W={width} D={depth}"),
            },
        }
    }

    fn genotype(&self, skeleton: &Genotype) -> Genotype {
        match self {
            GridCell::Components { .. } => *skeleton,
            GridCell::Scaling { width, depth, .. } => Genotype {
                width: *width,
                ..skeleton.with_depth(*depth, Bounds::default().code_max.max(*depth))
            },
        }
    }

    fn component(&self, base: &ComponentConfig) -> ComponentConfig {
        match self {
            GridCell::Components {
                downsample,
                use_skip,
                use_gap,
            } => ComponentConfig::custom(*downsample, *use_skip, *use_gap),
            GridCell::Scaling { final_width, .. } => base.clone().with_pre_classifier(*final_width),
        }
    }
}

/// Every downsampling kind crossed with skip and GAP on/off: 12 cells.
pub fn component_cells() -> Vec<GridCell> {
    let mut cells = Vec::with_capacity(12);
    for downsample in DownsampleKind::ALL {
        for use_skip in [false, true] {
            for use_gap in [false, true] {
                cells.push(GridCell::Components {
                    downsample,
                    use_skip,
                    use_gap,
                });
            }
        }
    }
    cells
}

pub fn scaling_cells(widths: &[usize], depths: &[usize], final_width: Option<usize>) -> Vec<GridCell> {
    let mut cells = Vec::with_capacity(widths.len() * depths.len());
    for &width in widths {
        for &depth in depths {
            cells.push(GridCell::Scaling {
                width,
                depth,
                final_width,
            });
        }
    }
    cells
}

/// One run of one cell, as persisted in the records file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    #[serde(flatten)]
    pub cell: GridCell,
    pub seed: u64,
    pub la: f64,
    pub aia: f64,
    pub af: Option<f64>,
    pub new_task_acc: f64,
    pub param_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub scenario: Scenario,
    pub train: TrainConfig,
    /// Training seeds; every cell runs once per seed.
    pub seeds: Vec<u64>,
    /// Concurrent runs; 0 means available parallelism.
    pub workers: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::TaskIl,
            train: TrainConfig::default(),
            seeds: (0..5).collect(),
            workers: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub cell: GridCell,
    pub runs: usize,
    pub param_count: usize,
    pub la: MeanStd,
    pub aia: MeanStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
}

impl GridReport {
    /// Aligned text table; accuracies in percent.
    pub fn to_table(&self) -> String {
        let header = ["configuration", "runs", "params", "LA (%)", "AIA (%)"];
        let body: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.cell.label(),
                    r.runs.to_string(),
                    r.param_count.to_string(),
                    r.la.to_string(),
                    r.aia.to_string(),
                ]
            })
            .collect();
        let mut widths = header.map(|h| h.chars().count());
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: [&str; 5]| {
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
                let pad = w - c.chars().count();
                if i == 0 {
                    s.push_str(c);
                    s.push_str(&" ".repeat(pad));
                } else {
                    s.push_str("  ");
                    s.push_str(&" ".repeat(pad));
                    s.push_str(c);
                }
            }
            s.push('\n');
            s
        };
        let mut out = line(header);
        out.push_str(&line(widths.map(|w| "-".repeat(w)).each_ref().map(|s| s.as_str())));
        for row in &body {
            out.push_str(&line(row.each_ref().map(|s| s.as_str())));
        }
        out
    }
}

/// Mean AIA with GAP off minus with GAP on, over component cells.
pub fn gap_trend(report: &GridReport) -> Option<f64> {
    let mean_of = |gap: bool| {
        let v: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| matches!(r.cell, GridCell::Components { use_gap, .. } if use_gap == gap))
            .map(|r| r.aia.mean)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Some(mean_of(false)? - mean_of(true)?)
}

fn run_cell(
    cell: &GridCell,
    seed: u64,
    skeleton: &Genotype,
    stream: &TaskStream,
    cfg: &GridConfig,
) -> Result<GridRecord> {
    let train = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let out = run_continual::<f32>(
        &cell.genotype(skeleton),
        &cell.component(&cfg.scenario.preset()),
        cfg.scenario,
        stream,
        &train,
        RunOptions::default(),
    )?;
    Ok(GridRecord {
        cell: cell.clone(),
        seed,
        la: out.matrix.la(),
        aia: out.matrix.aia(),
        af: out.matrix.af().ok(),
        new_task_acc: out.matrix.new_task_acc(),
        param_count: out.param_count,
    })
}

/// Runs every (cell, seed) pair not already in `existing`, handing each new
/// record to `sink` as soon as its batch of concurrent runs completes.
pub fn run_grid(
    cells: &[GridCell],
    skeleton: &Genotype,
    stream: &TaskStream,
    cfg: &GridConfig,
    existing: &[GridRecord],
    sink: &mut dyn FnMut(&GridRecord) -> Result<()>,
) -> Result<GridReport> {
    if cells.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::Config("grid needs at least one cell and one seed".into()));
    }
    cfg.train.validate()?;
    let mut records: Vec<GridRecord> = existing
        .iter()
        .filter(|r| cells.contains(&r.cell) && cfg.seeds.contains(&r.seed))
        .cloned()
        .collect();
    let done = |r: &[GridRecord], c: &GridCell, s: u64| r.iter().any(|x| &x.cell == c && x.seed == s);
    let jobs: Vec<(GridCell, u64)> = cells
        .iter()
        .flat_map(|c| cfg.seeds.iter().map(move |&s| (c.clone(), s)))
        .filter(|(c, s)| !done(&records, c, *s))
        .collect();
    let workers = match cfg.workers {
        0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        n => n,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    for chunk in jobs.chunks(workers.max(1)) {
        let fresh: Vec<Result<GridRecord>> = pool.install(|| {
            chunk
                .par_iter()
                .map(|(c, s)| run_cell(c, *s, skeleton, stream, cfg))
                .collect()
        });
        for r in fresh {
            let r = r?;
            sink(&r)?;
            records.push(r);
        }
    }
    let rows = cells
        .iter()
        .map(|cell| {
            let mine: Vec<&GridRecord> = cfg
                .seeds
                .iter()
                .filter_map(|s| records.iter().find(|r| &r.cell == cell && r.seed == *s))
                .collect();
            let la: Vec<f64> = mine.iter().map(|r| r.la).collect();
            let aia: Vec<f64> = mine.iter().map(|r| r.aia).collect();
            GridRow {
                cell: cell.clone(),
                runs: mine.len(),
                param_count: mine[0].param_count,
                la: MeanStd::of(&la),
                aia: MeanStd::of(&aia),
            }
        })
        .collect();
    Ok(GridReport { rows })
}

/// The 12-cell downsampling × skip × GAP study on a fixed skeleton genotype.
pub fn run_component_grid(
    skeleton: &Genotype,
    stream: &TaskStream,
    cfg: &GridConfig,
    existing: &[GridRecord],
    sink: &mut dyn FnMut(&GridRecord) -> Result<()>,
) -> Result<GridReport> {
    run_grid(&component_cells(), skeleton, stream, cfg, existing, sink)
}

/// Width × depth study. `final_width_probe` inserts a 1×1 convolution of that
/// width before the classifier in every cell.
#[allow(clippy::too_many_arguments)]
pub fn run_scaling_grid(
    widths: &[usize],
    depths: &[usize],
    skeleton: &Genotype,
    final_width_probe: Option<usize>,
    stream: &TaskStream,
    cfg: &GridConfig,
    existing: &[GridRecord],
    sink: &mut dyn FnMut(&GridRecord) -> Result<()>,
) -> Result<GridReport> {
    run_grid(&scaling_cells(widths, depths, final_width_probe), skeleton, stream, cfg, existing, sink)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_component_cells() {
        let cells = component_cells();
        assert_eq!(cells.len(), 12);
        for (i, a) in cells.iter().enumerate() {
            assert!(!cells[i + 1..].contains(a));
        }
        assert_eq!(scaling_cells(&[8, 16, 32], &[1, 2, 3], None).len(), 9);
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[0.5, 0.7]);
        assert!((m.mean - 0.6).abs() < 1e-12);
        assert!((m.std - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!(MeanStd::of(&[0.3]).std, 0.0);
    }

    #[test]
    fn record_json_is_flat() {
        let r = GridRecord {
            cell: component_cells()[0].clone(),
            seed: 1,
            la: 0.5,
            aia: 0.6,
            af: None,
            new_task_acc: 0.7,
            param_count: 10,
        };
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.starts_with("{\"grid\":\"components\""));
        assert_eq!(serde_json::from_str::<GridRecord>(&text).unwrap(), r);
    }
}
