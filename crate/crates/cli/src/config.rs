//! JSON run configuration. Unknown keys are rejected; command-line flags
//! override file values.

use std::path::{Path, PathBuf};

use clnas::analysis::GridConfig;
use clnas::harness::{split_tasks, Benchmark, LabeledDataset, Scenario, TaskStream, TrainConfig};
use clnas::search::{FitnessMode, SearchConfig, Surrogate};
use clnas::{Bounds, ComponentConfig, Genotype};
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    /// ACDS1 file with train and test examples of every class.
    pub data: Option<PathBuf>,
    /// Trailing share of each class held out for testing.
    pub test_fraction: f64,
    pub tasks: usize,
    /// Defaults to classes / tasks.
    pub classes_per_task: Option<usize>,
    pub split_seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            data: None,
            test_fraction: 1.0 / 3.0,
            tasks: 5,
            classes_per_task: None,
            split_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSettings {
    pub population_size: usize,
    pub generations: usize,
    pub offspring_per_generation: Option<usize>,
    /// Analytic fitness instead of training.
    pub surrogate: Option<Surrogate>,
}

impl Default for SearchSettings {
    fn default() -> Self {
        let d = SearchConfig::default();
        Self {
            population_size: d.population_size,
            generations: d.generations,
            offspring_per_generation: None,
            surrogate: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSettings {
    /// Number of training seeds per cell.
    pub seeds: usize,
    pub skeleton: Genotype,
    pub widths: Vec<usize>,
    pub depths: Vec<usize>,
    pub final_width: Option<usize>,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            seeds: 5,
            skeleton: Genotype::new(4, 16, [0, 2, 19, 19, 19], [2, 19, 19, 19, 19]),
            widths: vec![8, 16, 32],
            depths: vec![2, 4, 8],
            final_width: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: Scenario,
    /// Overrides the scenario's component preset.
    pub component: Option<ComponentConfig>,
    pub bounds: Bounds,
    pub train: TrainConfig,
    pub search: SearchSettings,
    pub grid: GridSettings,
    pub benchmark: BenchmarkConfig,
    pub output_dir: PathBuf,
    /// 0 means available parallelism.
    pub workers: usize,
    pub master_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::ClassIl { buffer: 100 },
            component: None,
            bounds: Bounds::default(),
            train: TrainConfig::default(),
            search: SearchSettings::default(),
            grid: GridSettings::default(),
            benchmark: BenchmarkConfig::default(),
            output_dir: PathBuf::from("runs"),
            workers: 0,
            master_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    pub fn component(&self) -> ComponentConfig {
        self.component.clone().unwrap_or_else(|| self.scenario.preset())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.bounds.validate().map_err(|e| UsageError(e.to_string()))?;
        self.train.validate().map_err(|e| UsageError(e.to_string()))?;
        if self.benchmark.tasks == 0 {
            return Err(UsageError("benchmark.tasks must be positive".into()).into());
        }
        Ok(())
    }

    /// The dataset file split into train and test examples.
    pub fn load_split(&self) -> anyhow::Result<Benchmark> {
        let path = self
            .benchmark
            .data
            .as_ref()
            .ok_or_else(|| UsageError("no dataset given (--data or benchmark.data)".into()))?;
        let ds = LabeledDataset::read(path)
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Ok(Benchmark::holdout(&ds, self.benchmark.test_fraction)?)
    }

    pub fn load_benchmark(&self) -> anyhow::Result<(Benchmark, TaskStream)> {
        let bench = self.load_split()?;
        let ds = &bench.train;
        let per = self
            .benchmark
            .classes_per_task
            .unwrap_or(ds.num_classes() / self.benchmark.tasks);
        let stream = split_tasks(&bench, self.benchmark.tasks, per, self.benchmark.split_seed)
            .map_err(|e| UsageError(e.to_string()))?;
        Ok((bench, stream))
    }

    pub fn search_config(&self, stream: Option<&TaskStream>) -> SearchConfig {
        let mode = match &self.search.surrogate {
            Some(s) => FitnessMode::Surrogate(s.clone()),
            None => match self.scenario {
                Scenario::TaskIl => FitnessMode::TaskIl,
                Scenario::ClassIl { buffer } => FitnessMode::ClassIl { buffer },
            },
        };
        let defaults = SearchConfig::default();
        let (input, num_classes) = match stream {
            Some(s) => (s.benchmark.train.shape(), s.benchmark.train.num_classes()),
            None => (defaults.input, defaults.num_classes),
        };
        SearchConfig {
            population_size: self.search.population_size,
            generations: self.search.generations,
            offspring_per_generation: self.search.offspring_per_generation,
            bounds: self.bounds.clone(),
            mode,
            component: self.component.clone(),
            input,
            num_classes,
            train: self.train.clone(),
            master_seed: self.master_seed,
            workers: self.workers,
        }
    }

    pub fn grid_config(&self) -> GridConfig {
        GridConfig {
            scenario: self.scenario,
            train: self.train.clone(),
            seeds: (0..self.grid.seeds as u64).map(|i| self.master_seed + i).collect(),
            workers: self.workers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>("{\"populaton\": 3}").is_err());
        assert!(serde_json::from_str::<RunConfig>("{\"search\": {\"generation\": 3}}").is_err());
        let c: RunConfig = serde_json::from_str("{\"master_seed\": 4}").unwrap();
        assert_eq!(c.master_seed, 4);
        assert_eq!(c.search.population_size, 10);
    }

    #[test]
    fn round_trips() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    }
}
