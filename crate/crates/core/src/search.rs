//! Evolutionary search over genotypes.
//!
//! Initialization samples a random population (budget-scaled when a
//! parameter limit is set) and evaluates it. Each generation then produces
//! offspring by binary tournament and single-code mutation, evaluates them,
//! and keeps the best `population_size` of parents and offspring together.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::builder::{ComponentConfig, InputShape};
use crate::error::{Error, Result};
use crate::genotype::{Bounds, Genotype, SearchSpace};
use crate::harness::{run_continual, RunOptions, Scenario, TaskStream, TrainConfig};
use crate::seed;

const INIT_STREAM: u64 = 0x1417;
const OFFSPRING_STREAM: u64 = 0x0ff5;
const EVAL_STREAM: u64 = 0xe7a1;
const MAX_SAMPLE_ATTEMPTS: usize = 1000;

/// Analytic test landscape peaking at `(target_width, target_depth)`:
/// `1 - |W - W*| / W_range - |D - D*| / D_range`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Surrogate {
    pub target_width: usize,
    pub target_depth: usize,
}

impl Surrogate {
    pub fn value(&self, g: &Genotype, bounds: &Bounds) -> f64 {
        let term = |v: usize, target: usize, lo: usize, hi: usize| {
            if hi == lo {
                0.0
            } else {
                (v as f64 - target as f64).abs() / (hi - lo) as f64
            }
        };
        1.0 - term(g.width, self.target_width, bounds.w_min, bounds.w_max)
            - term(g.depth, self.target_depth, bounds.d_min, bounds.d_max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitnessMode {
    TaskIl,
    ClassIl { buffer: usize },
    Surrogate(Surrogate),
}

impl FitnessMode {
    fn scenario(&self) -> Option<Scenario> {
        match self {
            FitnessMode::TaskIl => Some(Scenario::TaskIl),
            FitnessMode::ClassIl { buffer } => Some(Scenario::ClassIl { buffer: *buffer }),
            FitnessMode::Surrogate(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub population_size: usize,
    pub generations: usize,
    /// Defaults to `population_size`.
    pub offspring_per_generation: Option<usize>,
    pub bounds: Bounds,
    pub mode: FitnessMode,
    /// Overrides the scenario's component preset.
    pub component: Option<ComponentConfig>,
    pub input: InputShape,
    pub num_classes: usize,
    pub train: TrainConfig,
    pub master_seed: u64,
    /// Concurrent fitness evaluations; 0 means available parallelism.
    pub workers: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            population_size: 10,
            generations: 20,
            offspring_per_generation: None,
            bounds: Bounds::default(),
            mode: FitnessMode::ClassIl { buffer: 100 },
            component: None,
            input: InputShape::square(3, 16),
            num_classes: 10,
            train: TrainConfig::default(),
            master_seed: 0,
            workers: 0,
        }
    }
}

impl SearchConfig {
    pub fn offspring(&self) -> usize {
        self.offspring_per_generation.unwrap_or(self.population_size)
    }

    pub fn component_config(&self) -> ComponentConfig {
        self.component.clone().unwrap_or_else(|| match self.mode {
            FitnessMode::TaskIl => ComponentConfig::task_il(),
            _ => ComponentConfig::class_il(),
        })
    }

    pub fn space(&self) -> SearchSpace {
        SearchSpace {
            bounds: self.bounds.clone(),
            config: self.component_config(),
            input: self.input,
            num_classes: self.num_classes,
        }
    }

    /// Seed every fitness evaluation trains with.
    pub fn eval_seed(&self) -> u64 {
        seed::derive(self.master_seed, &[EVAL_STREAM])
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if self.population_size < 2 {
            return Err(Error::Config("population size must be at least 2".into()));
        }
        if self.offspring() == 0 {
            return Err(Error::Config("offspring per generation must be positive".into()));
        }
        if self.mode.scenario().is_some() {
            self.train.validate()?;
        }
        Ok(())
    }
}

/// Outcome of one fitness evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub fitness: f64,
    pub param_count: usize,
    pub diagnostic: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genotype: Genotype,
    pub fitness: Option<f64>,
    pub eval_seed: u64,
    pub param_count: usize,
}

impl Individual {
    fn fitness_or_err(&self) -> Result<f64> {
        self.fitness
            .ok_or_else(|| Error::Config(format!("individual {} is not evaluated", self.genotype)))
    }
}

/// One evaluated individual, as persisted in the history file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub generation: usize,
    pub index: usize,
    pub genotype: Genotype,
    pub fitness: f64,
    pub param_count: usize,
    /// Served from an earlier evaluation of the same genotype.
    pub cached: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    /// Training time; the only non-deterministic field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_wall_ms: Option<f64>,
}

impl EvalRecord {
    /// The record without its timing, for reproducibility comparisons.
    pub fn canonical(&self) -> Self {
        Self {
            eval_wall_ms: None,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub best: Genotype,
}

#[derive(Clone, Debug)]
pub struct SearchState {
    pub generation: usize,
    pub population: Vec<Individual>,
    pub history: Vec<EvalRecord>,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best: Individual,
    pub history: Vec<EvalRecord>,
    pub generations: Vec<GenerationSummary>,
}

/// Better-first ordering: fitness, then fewer parameters, then lower index.
fn ranks_before(a: (&Individual, usize), b: (&Individual, usize)) -> std::cmp::Ordering {
    let fa = a.0.fitness.unwrap_or(f64::NEG_INFINITY);
    let fb = b.0.fitness.unwrap_or(f64::NEG_INFINITY);
    fb.total_cmp(&fa)
        .then(a.0.param_count.cmp(&b.0.param_count))
        .then(a.1.cmp(&b.1))
}

/// Fitness of `g`. Undecodable genotypes and failed runs score 0 with a
/// diagnostic instead of aborting.
pub fn evaluate_fitness(g: &Genotype, config: &SearchConfig, stream: Option<&TaskStream>) -> Evaluation {
    let space = config.space();
    let (param_count, count_err) = match space.count(g) {
        Ok(n) => (n, None),
        Err(e) => (0, Some(e.to_string())),
    };
    match &config.mode {
        FitnessMode::Surrogate(s) => Evaluation {
            fitness: s.value(g, &config.bounds),
            param_count,
            diagnostic: count_err,
        },
        mode => {
            if let Some(e) = count_err {
                return Evaluation {
                    fitness: 0.0,
                    param_count,
                    diagnostic: Some(e),
                };
            }
            let Some(stream) = stream else {
                return Evaluation {
                    fitness: 0.0,
                    param_count,
                    diagnostic: Some("no task stream for a training fitness".into()),
                };
            };
            let train = TrainConfig {
                seed: config.eval_seed(),
                ..config.train.clone()
            };
            let scenario = mode.scenario().expect("training mode");
            match run_continual::<f32>(
                g,
                &space.config,
                scenario,
                stream,
                &train,
                RunOptions::default(),
            ) {
                Ok(out) => Evaluation {
                    fitness: out.matrix.aia(),
                    param_count,
                    diagnostic: None,
                },
                Err(e) => Evaluation {
                    fitness: 0.0,
                    param_count,
                    diagnostic: Some(e.to_string()),
                },
            }
        }
    }
}

/// Binary tournament: two distinct members drawn uniformly, the better wins.
pub fn select_parent<'p, R: rand::Rng + ?Sized>(
    population: &'p [Individual],
    rng: &mut R,
) -> Result<&'p Individual> {
    if population.len() < 2 {
        return Err(Error::Config("tournament needs at least two individuals".into()));
    }
    for ind in population {
        ind.fitness_or_err()?;
    }
    let a = rng.gen_range(0..population.len());
    let mut b = rng.gen_range(0..population.len() - 1);
    if b >= a {
        b += 1;
    }
    let winner = if ranks_before((&population[a], a), (&population[b], b)).is_le() {
        a
    } else {
        b
    };
    Ok(&population[winner])
}

/// Drives a search, evaluating through a shared cache keyed by genotype.
pub struct Searcher<'a> {
    config: SearchConfig,
    stream: Option<&'a TaskStream>,
    space: SearchSpace,
    /// Keyed by decoded plan, so genotypes differing only in inert codes share
    /// one evaluation.
    cache: HashMap<String, Evaluation>,
    pool: rayon::ThreadPool,
    /// Generations already persisted; their records are not re-emitted.
    persisted: usize,
}

impl<'a> Searcher<'a> {
    pub fn new(config: SearchConfig, stream: Option<&'a TaskStream>) -> Result<Self> {
        config.validate()?;
        if config.mode.scenario().is_some() {
            let stream = stream.ok_or_else(|| Error::Config("training fitness needs a task stream".into()))?;
            let train = &stream.benchmark.train;
            if train.shape() != config.input || train.num_classes() != config.num_classes {
                return Err(Error::Config(format!(
                    "search expects {:?} inputs with {} classes, the stream has {:?} with {}",
                    config.input.dims(),
                    config.num_classes,
                    train.shape().dims(),
                    train.num_classes()
                )));
            }
        }
        let workers = match config.workers {
            0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            n => n,
        }
        .min(config.offspring().max(config.population_size));
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            space: config.space(),
            config,
            stream,
            cache: HashMap::new(),
            pool,
            persisted: 0,
        })
    }

    /// Seeds the cache from a previous run's records so completed generations
    /// replay without training. Returns the number of complete generations.
    pub fn resume_from(&mut self, records: &[EvalRecord]) -> usize {
        for r in records {
            let key = self.cache_key(&r.genotype);
            self.cache.entry(key).or_insert_with(|| Evaluation {
                fitness: r.fitness,
                param_count: r.param_count,
                diagnostic: r.diagnostic.clone(),
            });
        }
        let mut complete = 0;
        loop {
            let want = if complete == 0 {
                self.config.population_size
            } else {
                self.config.offspring()
            };
            let have = records.iter().filter(|r| r.generation == complete).count();
            if have < want {
                break;
            }
            complete += 1;
        }
        self.persisted = complete;
        complete
    }

    fn cache_key(&self, g: &Genotype) -> String {
        if matches!(self.config.mode, FitnessMode::Surrogate(_)) {
            return g.to_string();
        }
        match crate::builder::decode(g, &self.space.config, self.space.input, self.space.num_classes) {
            Ok(plan) => format!("{:?}", plan.layers),
            Err(_) => format!("undecodable {g}"),
        }
    }

    fn evaluate_batch(&mut self, genotypes: &[Genotype], generation: usize) -> Vec<EvalRecord> {
        let keys: Vec<String> = genotypes.iter().map(|g| self.cache_key(g)).collect();
        let mut pending: Vec<(String, Genotype)> = Vec::new();
        for (k, g) in keys.iter().zip(genotypes) {
            if !self.cache.contains_key(k) && !pending.iter().any(|(p, _)| p == k) {
                pending.push((k.clone(), *g));
            }
        }
        let config = &self.config;
        let stream = self.stream;
        let fresh: Vec<(String, Evaluation, f64)> = self.pool.install(|| {
            pending
                .par_iter()
                .map(|(k, g)| {
                    let t = Instant::now();
                    let e = evaluate_fitness(g, config, stream);
                    (k.clone(), e, t.elapsed().as_secs_f64() * 1e3)
                })
                .collect()
        });
        let mut timing: HashMap<String, f64> = HashMap::new();
        for (k, e, ms) in fresh {
            self.cache.insert(k.clone(), e);
            timing.insert(k, ms);
        }
        genotypes
            .iter()
            .zip(&keys)
            .enumerate()
            .map(|(index, (g, k))| {
                let e = &self.cache[k];
                let first = timing.remove(k);
                EvalRecord {
                    generation,
                    index,
                    genotype: *g,
                    fitness: e.fitness,
                    param_count: e.param_count,
                    cached: first.is_none(),
                    diagnostic: e.diagnostic.clone(),
                    eval_wall_ms: Some(first.unwrap_or(0.0)),
                }
            })
            .collect()
    }

    fn individuals(&self, records: &[EvalRecord]) -> Vec<Individual> {
        records
            .iter()
            .map(|r| Individual {
                genotype: r.genotype,
                fitness: Some(r.fitness),
                eval_seed: self.config.eval_seed(),
                param_count: r.param_count,
            })
            .collect()
    }

    fn emit(
        &self,
        generation: usize,
        records: &[EvalRecord],
        sink: &mut dyn FnMut(&EvalRecord) -> Result<()>,
    ) -> Result<()> {
        if generation >= self.persisted {
            for r in records {
                sink(r)?;
            }
        }
        Ok(())
    }

    /// Samples and evaluates the initial population.
    pub fn initialize(&mut self, sink: &mut dyn FnMut(&EvalRecord) -> Result<()>) -> Result<SearchState> {
        let mut genotypes = Vec::with_capacity(self.config.population_size);
        for i in 0..self.config.population_size {
            let mut rng = seed::rng(self.config.master_seed, &[INIT_STREAM, i as u64]);
            let mut last_err = None;
            let mut found = None;
            for _ in 0..MAX_SAMPLE_ATTEMPTS {
                match self.space.sample(&mut rng) {
                    Ok(g) => {
                        found = Some(g);
                        break;
                    }
                    Err(e @ (Error::InvalidBounds(_) | Error::Config(_))) => return Err(e),
                    Err(e) => last_err = Some(e),
                }
            }
            match found {
                Some(g) => genotypes.push(g),
                None => {
                    return Err(Error::InvalidBounds(format!(
                        "no feasible genotype after {MAX_SAMPLE_ATTEMPTS} samples: {}",
                        last_err.map(|e| e.to_string()).unwrap_or_default()
                    )))
                }
            }
        }
        let records = self.evaluate_batch(&genotypes, 0);
        self.emit(0, &records, sink)?;
        Ok(SearchState {
            generation: 0,
            population: self.individuals(&records),
            history: records,
        })
    }

    fn make_offspring(&self, population: &[Individual], generation: usize, index: usize) -> Result<Genotype> {
        let mut rng = seed::rng(
            self.config.master_seed,
            &[OFFSPRING_STREAM, generation as u64, index as u64],
        );
        let parent = select_parent(population, &mut rng)?.genotype;
        for _ in 0..MAX_SAMPLE_ATTEMPTS {
            match self.space.mutate(&parent, &mut rng) {
                Ok(child) => return Ok(child),
                Err(Error::FrozenSearchSpace) => return Ok(parent),
                // budget scaling failed for this child; draw another mutation
                Err(_) => continue,
            }
        }
        Ok(parent)
    }

    /// One generation: offspring, evaluation, best-of-union survivors.
    pub fn step(
        &mut self,
        mut state: SearchState,
        sink: &mut dyn FnMut(&EvalRecord) -> Result<()>,
    ) -> Result<SearchState> {
        let generation = state.generation + 1;
        let children = (0..self.config.offspring())
            .map(|i| self.make_offspring(&state.population, generation, i))
            .collect::<Result<Vec<_>>>()?;
        let records = self.evaluate_batch(&children, generation);
        self.emit(generation, &records, sink)?;
        let mut union = state.population;
        union.extend(self.individuals(&records));
        let mut order: Vec<usize> = (0..union.len()).collect();
        order.sort_by(|&a, &b| ranks_before((&union[a], a), (&union[b], b)));
        state.population = order
            .into_iter()
            .take(self.config.population_size)
            .map(|i| union[i].clone())
            .collect();
        state.history.extend(records);
        state.generation = generation;
        Ok(state)
    }

    pub fn run(&mut self, sink: &mut dyn FnMut(&EvalRecord) -> Result<()>) -> Result<SearchOutcome> {
        let mut state = self.initialize(sink)?;
        let mut generations = vec![summarize(&state)];
        for _ in 0..self.config.generations {
            state = self.step(state, sink)?;
            generations.push(summarize(&state));
        }
        let best = best_of(&state.population).clone();
        Ok(SearchOutcome {
            best,
            history: state.history,
            generations,
        })
    }
}

fn best_of(population: &[Individual]) -> &Individual {
    let mut idx: Vec<usize> = (0..population.len()).collect();
    idx.sort_by(|&a, &b| ranks_before((&population[a], a), (&population[b], b)));
    &population[idx[0]]
}

fn summarize(state: &SearchState) -> GenerationSummary {
    let best = best_of(&state.population);
    let n = state.population.len() as f64;
    GenerationSummary {
        generation: state.generation,
        best_fitness: best.fitness.unwrap_or(0.0),
        mean_fitness: state.population.iter().filter_map(|i| i.fitness).sum::<f64>() / n,
        best: best.genotype,
    }
}

/// Runs a full search and returns the best individual ever kept plus the
/// evaluation history.
pub fn run_search(config: &SearchConfig, stream: Option<&TaskStream>) -> Result<SearchOutcome> {
    Searcher::new(config.clone(), stream)?.run(&mut |_| Ok(()))
}
