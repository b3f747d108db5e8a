use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clnas::analysis::{
    cka_across_stages, component_cells, gap_trend, probe_indices, run_grid, scaling_cells, MeanStd,
};
use clnas::builder::{decode as decode_plan, Network, Preset};
use clnas::checkpoint::{self, Checkpoint};
use clnas::genotype::scale_to_budget;
use clnas::harness::{make_synthetic_benchmark, run_continual, AccuracyMatrix, RunOptions, Scenario, SyntheticSpec, TaskStream, TrainConfig};
use clnas::records::{read_jsonl, JsonlWriter};
use clnas::search::{EvalRecord, Searcher, Surrogate};
use clnas::{Bounds, ComponentConfig, DownsampleKind, Genotype, InputShape, Scalar};
use serde_json::json;

use crate::config::RunConfig;
use crate::output::{prepare, Prepared};
use crate::{
    CkaArgs, CommonArgs, ComponentFlags, DecodeArgs, DownsampleArg, EvalArgs, GenDataArgs, GridArgs, GridKind,
    Precision, ScenarioArg, SearchArgs, UsageError,
};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_genotype(text: &str) -> Result<Genotype> {
    text.parse().map_err(|e: clnas::Error| usage(e.to_string()))
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn apply_component(mut c: ComponentConfig, flags: &ComponentFlags) -> ComponentConfig {
    let before = c.clone();
    if let Some(d) = flags.downsample {
        c.downsample = match d {
            DownsampleArg::MaxPool => DownsampleKind::MaxPool,
            DownsampleArg::AvgPool => DownsampleKind::AvgPool,
            DownsampleArg::StridedConv => DownsampleKind::StridedConv,
        };
    }
    if let Some(s) = flags.skip {
        c.use_skip = s;
    }
    if let Some(g) = flags.gap {
        c.use_gap = g;
    }
    if flags.pre_classifier.is_some() {
        c.pre_classifier = flags.pre_classifier;
    }
    if c != before {
        c.preset = Preset::Custom;
    }
    c
}

fn has_component_flags(f: &ComponentFlags) -> bool {
    f.downsample.is_some() || f.skip.is_some() || f.gap.is_some() || f.pre_classifier.is_some()
}

fn resolve(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(d) = &common.data {
        cfg.benchmark.data = Some(d.clone());
    }
    if let Some(o) = &common.out_dir {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(t) = common.tasks {
        cfg.benchmark.tasks = t;
    }
    let buffer_default = match cfg.scenario {
        Scenario::ClassIl { buffer } => buffer,
        Scenario::TaskIl => 100,
    };
    cfg.scenario = match (common.scenario, common.buffer) {
        (Some(ScenarioArg::TaskIl), Some(_)) => return Err(usage("--buffer only applies to class-il")),
        (Some(ScenarioArg::TaskIl), None) => Scenario::TaskIl,
        (Some(ScenarioArg::ClassIl), b) | (None, b @ Some(_)) => Scenario::ClassIl {
            buffer: b.unwrap_or(buffer_default),
        },
        (None, None) => cfg.scenario,
    };
    if let Some(e) = common.epochs_first {
        cfg.train.epochs_first = e;
    }
    if let Some(e) = common.epochs_rest {
        cfg.train.epochs_rest = e;
    }
    if let Some(lr) = common.lr {
        cfg.train.lr = lr;
    }
    if let Some(b) = common.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(p) = common.param_limit {
        cfg.bounds.param_limit = Some(p);
    }
    if has_component_flags(&common.component) {
        cfg.component = Some(apply_component(cfg.component(), &common.component));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The configuration as it affects results: worker count and output location
/// do not change any output.
fn result_key(cfg: &RunConfig) -> RunConfig {
    RunConfig {
        workers: 0,
        output_dir: PathBuf::new(),
        ..cfg.clone()
    }
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let spec = SyntheticSpec {
        num_classes: a.classes,
        per_class_train: a.train,
        per_class_test: a.test,
        image_size: a.size,
        channels: a.channels,
        noise_level: a.noise,
        seed: a.seed,
    };
    if a.size % 2 == 1 {
        eprintln!("warning: size {} is odd, so no downsampling layer can halve it", a.size);
    }
    let bench = make_synthetic_benchmark(&spec).map_err(|e| usage(e.to_string()))?;
    let ds = bench.combined()?;
    ds.write(&a.out)
        .with_context(|| format!("cannot write {}", a.out.display()))?;
    println!(
        "wrote {}: N={} images of {}x{}x{}, {} classes ({} train + {} test per class)",
        a.out.display(),
        ds.len(),
        a.channels,
        a.size,
        a.size,
        a.classes,
        a.train,
        a.test
    );
    Ok(())
}

pub fn decode(a: DecodeArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let g = parse_genotype(&a.genotype)?;
    let base = match a.scenario {
        Some(ScenarioArg::TaskIl) => ComponentConfig::task_il(),
        Some(ScenarioArg::ClassIl) => ComponentConfig::class_il(),
        None => cfg.component(),
    };
    let component = apply_component(base, &a.component);
    let input = InputShape::square(a.channels, a.size);
    let plan = decode_plan(&g, &component, input, a.classes)?;
    println!("{plan}");
    if let Some(limit) = a.param_limit.or(cfg.bounds.param_limit) {
        let scaled = scale_to_budget(&g, limit, &cfg.bounds, &component, input, a.classes)?;
        let p = decode_plan(&scaled, &component, input, a.classes)?;
        println!();
        println!("budget-scaled genotype (limit {limit}): {scaled}");
        println!("{p}");
    }
    Ok(())
}

fn run_one<T: Scalar>(
    g: &Genotype,
    cfg: &RunConfig,
    stream: &TaskStream,
    train: &TrainConfig,
    checkpoints: Option<&Path>,
) -> Result<(AccuracyMatrix, usize)> {
    let out = run_continual::<T>(
        g,
        &cfg.component(),
        cfg.scenario,
        stream,
        train,
        RunOptions {
            capture_checkpoints: checkpoints.is_some(),
        },
    )?;
    if let Some(dir) = checkpoints {
        std::fs::create_dir_all(dir)?;
        for (b, net) in out.checkpoints.iter().enumerate() {
            let path = dir.join(format!("stage_{:02}.acnn", b + 1));
            checkpoint::save(net, Some(cfg.scenario), Some(b + 1), &path)
                .with_context(|| format!("cannot write {}", path.display()))?;
        }
    }
    Ok((out.matrix, out.param_count))
}

fn scenario_label(s: Scenario) -> String {
    match s {
        Scenario::TaskIl => "task-il".into(),
        Scenario::ClassIl { buffer } => format!("class-il, buffer {buffer}"),
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let cfg = resolve(&a.common)?;
    let g = parse_genotype(&a.genotype)?;
    if a.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let (_, stream) = cfg.load_benchmark()?;
    let key = json!({
        "genotype": g.to_string(),
        "seeds": a.seeds,
        "precision": format!("{:?}", a.precision),
        "checkpoint_dir": a.checkpoint_dir,
        "config": result_key(&cfg),
    });
    let dir = match prepare(&cfg.output_dir, "eval", &key, a.common.force, true)? {
        Prepared::Done(r) => {
            println!("already evaluated; record in {}", cfg.output_dir.display());
            println!("{}", serde_json::to_string_pretty(&r.metrics["summary"])?);
            return Ok(());
        }
        Prepared::Fresh(d) | Prepared::Resume(d) => d,
    };
    println!("genotype {g} | {}", scenario_label(cfg.scenario));
    let mut runs = Vec::new();
    let mut artifacts = Vec::new();
    let (mut las, mut aias) = (Vec::new(), Vec::new());
    for i in 0..a.seeds {
        let seed = cfg.master_seed + i as u64;
        let train = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let ckpt = a.checkpoint_dir.as_ref().map(|d| {
            if a.seeds == 1 {
                d.clone()
            } else {
                d.join(format!("seed_{seed}"))
            }
        });
        let (m, params) = match a.precision {
            Precision::F32 => run_one::<f32>(&g, &cfg, &stream, &train, ckpt.as_deref())?,
            Precision::F64 => run_one::<f64>(&g, &cfg, &stream, &train, ckpt.as_deref())?,
        };
        let af = m.af().ok();
        println!(
            "seed {seed}: params {params}  LA {}  AIA {}  AF {}  new-task {}",
            pct(m.la()),
            pct(m.aia()),
            af.map(pct).unwrap_or_else(|| "n/a".into()),
            pct(m.new_task_acc())
        );
        if a.seeds == 1 {
            println!("accuracy per task (rows) after each stage (columns):");
            print!("{}", m.to_csv());
        }
        let csv = dir.file(&format!("matrix_seed{seed}.csv"));
        std::fs::write(&csv, m.to_csv())?;
        artifacts.push(csv);
        if let Some(d) = ckpt {
            artifacts.push(d);
        }
        las.push(m.la());
        aias.push(m.aia());
        runs.push(json!({
            "seed": seed,
            "param_count": params,
            "la": m.la(),
            "aia": m.aia(),
            "af": af,
            "new_task_acc": m.new_task_acc(),
            "matrix": m.rows(),
        }));
    }
    let (la, aia) = (MeanStd::of(&las), MeanStd::of(&aias));
    if a.seeds > 1 {
        println!("over {} seeds: LA {la}  AIA {aia}", a.seeds);
    }
    let record = dir.finish(
        &cfg,
        json!({ "genotype": g.to_string(), "seeds": a.seeds }),
        json!({ "runs": runs, "summary": { "la": la, "aia": aia } }),
        artifacts,
    )?;
    println!("record: {}", dir.file("run.json").display());
    let _ = record;
    Ok(())
}

fn default_surrogate(b: &Bounds) -> Surrogate {
    Surrogate {
        target_width: b.w_min + b.w_step * ((b.width_choices() - 1) / 2),
        target_depth: (b.d_min + b.d_max) / 2,
    }
}

pub fn search(a: SearchArgs) -> Result<()> {
    let mut cfg = resolve(&a.common)?;
    if let Some(p) = a.population {
        cfg.search.population_size = p;
    }
    if let Some(g) = a.generations {
        cfg.search.generations = g;
    }
    if a.surrogate && cfg.search.surrogate.is_none() {
        cfg.search.surrogate = Some(default_surrogate(&cfg.bounds));
    }
    let stream = match cfg.search.surrogate {
        Some(_) => None,
        None => Some(cfg.load_benchmark()?.1),
    };
    let scfg = cfg.search_config(stream.as_ref());
    scfg.validate().map_err(|e| usage(e.to_string()))?;
    let mut searcher = Searcher::new(scfg, stream.as_ref())?;
    let dir = match prepare(&cfg.output_dir, "search", &json!({ "config": result_key(&cfg) }), a.common.force, a.resume)? {
        Prepared::Done(r) => {
            println!("search already complete");
            println!("{}", serde_json::to_string_pretty(&r.metrics["best"])?);
            return Ok(());
        }
        Prepared::Fresh(d) => d,
        Prepared::Resume(d) => {
            let prior: Vec<EvalRecord> = read_jsonl(d.file("history.jsonl"))?;
            let complete = searcher.resume_from(&prior);
            let mut w = JsonlWriter::create(d.file("history.jsonl"))?;
            for r in prior.iter().filter(|r| r.generation < complete) {
                w.write(r)?;
            }
            println!("resuming after {complete} completed generation(s)");
            d
        }
    };
    let history = dir.file("history.jsonl");
    let mut writer = JsonlWriter::append(&history)?;
    let out = searcher.run(&mut |r| writer.write(r))?;
    for s in &out.generations {
        println!(
            "generation {:>3}: best {:.4}  mean {:.4}  {}",
            s.generation, s.best_fitness, s.mean_fitness, s.best
        );
    }
    let best = &out.best;
    println!(
        "best genotype {}  fitness {:.4}  parameters {}",
        best.genotype,
        best.fitness.unwrap_or(0.0),
        best.param_count
    );
    dir.finish(
        &cfg,
        json!({ "surrogate": cfg.search.surrogate.is_some() }),
        json!({
            "best": { "genotype": best.genotype.to_string(), "fitness": best.fitness, "param_count": best.param_count },
            "generations": out.generations,
            "evaluations": out.history.len(),
        }),
        vec![history],
    )?;
    println!("history: {}", dir.file("history.jsonl").display());
    Ok(())
}

pub fn grid(a: GridArgs) -> Result<()> {
    let mut cfg = resolve(&a.common)?;
    if let Some(s) = &a.skeleton {
        cfg.grid.skeleton = parse_genotype(s)?;
    }
    if let Some(w) = &a.widths {
        cfg.grid.widths = w.clone();
    }
    if let Some(d) = &a.depths {
        cfg.grid.depths = d.clone();
    }
    if a.final_width.is_some() {
        cfg.grid.final_width = a.final_width;
    }
    if let Some(s) = a.seeds {
        cfg.grid.seeds = s;
    }
    if cfg.grid.seeds == 0 {
        return Err(usage("grid needs at least one seed"));
    }
    let (kind, cells) = match a.kind {
        GridKind::Components => ("components", component_cells()),
        GridKind::Scaling => {
            if cfg.grid.widths.is_empty() || cfg.grid.depths.is_empty() {
                return Err(usage("scaling grid needs non-empty widths and depths"));
            }
            if cfg.grid.widths.contains(&0) || cfg.grid.depths.contains(&0) {
                return Err(usage("widths and depths must be positive"));
            }
            ("scaling", scaling_cells(&cfg.grid.widths, &cfg.grid.depths, cfg.grid.final_width))
        }
    };
    let (_, stream) = cfg.load_benchmark()?;
    let key = json!({ "kind": kind, "config": result_key(&cfg) });
    let (dir, existing) = match prepare(&cfg.output_dir, &format!("grid-{kind}"), &key, a.common.force, a.resume)? {
        Prepared::Done(r) => {
            println!("grid already complete");
            if let Some(t) = r.metrics["table"].as_str() {
                print!("{t}");
            }
            return Ok(());
        }
        Prepared::Fresh(d) => (d, Vec::new()),
        Prepared::Resume(d) => {
            let existing = read_jsonl(d.file("records.jsonl"))?;
            println!("resuming with {} completed run(s)", existing.len());
            (d, existing)
        }
    };
    let records = dir.file("records.jsonl");
    let mut writer = JsonlWriter::append(&records)?;
    let gcfg = cfg.grid_config();
    let report = run_grid(&cells, &cfg.grid.skeleton, &stream, &gcfg, &existing, &mut |r| writer.write(r))?;
    let table = report.to_table();
    print!("{table}");
    let trend = match a.kind {
        GridKind::Components => gap_trend(&report),
        GridKind::Scaling => None,
    };
    if let Some(t) = trend {
        println!("mean AIA, GAP off minus GAP on: {:+.2} points", 100.0 * t);
    }
    std::fs::write(dir.file("table.txt"), &table)?;
    std::fs::write(dir.file("report.json"), serde_json::to_string_pretty(&report)?)?;
    dir.finish(
        &cfg,
        json!({ "kind": kind }),
        json!({ "table": table, "rows": report.rows.len(), "gap_off_minus_on": trend }),
        vec![records, dir.file("table.txt"), dir.file("report.json")],
    )?;
    Ok(())
}

pub fn cka(a: CkaArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(d) = &a.data {
        cfg.benchmark.data = Some(d.clone());
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&a.checkpoint_dir)
        .with_context(|| format!("cannot read {}", a.checkpoint_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "acnn"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        anyhow::bail!("no .acnn checkpoints in {}", a.checkpoint_dir.display());
    }
    let mut cps: Vec<Checkpoint<f32>> = paths
        .iter()
        .map(|p| checkpoint::load(p).with_context(|| format!("cannot load {}", p.display())))
        .collect::<Result<_>>()?;
    let ids: Vec<usize> = cps
        .iter()
        .enumerate()
        .map(|(i, c)| c.header.stage.unwrap_or(i + 1))
        .collect();
    let mut order: Vec<usize> = (0..cps.len()).collect();
    order.sort_by_key(|&i| ids[i]);
    let stages: Vec<usize> = order.iter().map(|&i| ids[i]).collect();
    let mut sorted: Vec<Option<Checkpoint<f32>>> = cps.drain(..).map(Some).collect();
    let cps: Vec<Checkpoint<f32>> = order.iter().map(|&i| sorted[i].take().expect("each once")).collect();

    let bench = cfg.load_split()?;
    let shape = cps[0].network.plan().input;
    if bench.test.shape() != shape {
        anyhow::bail!(
            "dataset images are {:?} but the checkpoints expect {:?}",
            bench.test.shape().dims(),
            shape.dims()
        );
    }
    let idx = probe_indices(&bench.test, a.probe_size, a.probe_seed);
    let probe = bench.test.batch::<f32>(&idx);
    let nets: Vec<&Network<f32>> = cps.iter().map(|c| &c.network).collect();
    let m = cka_across_stages(&nets, &probe, Some(stages))?;
    let csv = m.to_csv();
    match &a.out {
        Some(p) => {
            std::fs::write(p, &csv).with_context(|| format!("cannot write {}", p.display()))?;
            println!("{}x{} CKA matrix over {} probe images written to {}", m.size(), m.size(), idx.len(), p.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}
