//! The subcommands. Each one computes everything first and writes its output
//! directory only after every step has succeeded.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use astrec::checkpoint;
use astrec::data::{
    dedup_pairs, load_matrix_ascii, load_triples_joint, split_uniform, Dataset, IdMap, Source, TripleOptions,
    ValueColumn,
};
use astrec::eval::{diagnose, evaluate, Diagnostics, MetricsReport};
use astrec::models::Model;
use astrec::numcore::Rng;
use astrec::synth::{generate_dataset, stream, SynthWorld};
use astrec::trainer::{self, Component, TrainConfig, TrainResult, HISTORY_HEADER};
use astrec::{Error, Result};
use serde_json::Value;

use crate::config::{set_path, RawFormat, RunConfig};
use crate::dataset_dir::{self, create_dir, write_json, DatasetDir, Manifest};
use crate::output::{fmt_f64, fmt_opt, RunInfo, Table};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const RUN_INFO: &str = "run.json";

fn log(msg: impl AsRef<str>) {
    eprintln!("[astrec] {}", msg.as_ref());
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `resolved_config.json` and `run.json`.
fn write_run_files(out: &Path, config: &RunConfig, command: &str, seeds: Vec<u64>, inputs: &[PathBuf]) -> Result<()> {
    write_text(&out.join(RESOLVED_CONFIG), &config.to_json())?;
    write_json(&out.join(RUN_INFO), &RunInfo::new(command, seeds, inputs)?)
}

fn seeds(config: &RunConfig) -> Vec<u64> {
    (0..config.seeds as u64).map(|s| config.trainer.seed + s).collect()
}

fn check_model_fits(model: &Model, dataset: &Dataset) -> Result<()> {
    let c = &model.config;
    if c.n_users != dataset.n_users || c.n_items != dataset.n_items {
        return Err(Error::Validation(format!(
            "checkpoint is {}x{} (users x items) but the dataset is {}x{}",
            c.n_users, c.n_items, dataset.n_users, dataset.n_items
        )));
    }
    Ok(())
}

fn history_csv(result: &TrainResult) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for row in &result.history {
        s.push_str(&row.csv());
        s.push('\n');
    }
    s
}

/// Test metrics, or `None` when the dataset has no test split.
fn test_metrics(model: &Model, dataset: &Dataset, config: &RunConfig) -> Result<Option<MetricsReport>> {
    if dataset.test.is_empty() {
        return Ok(None);
    }
    evaluate(model, &dataset.test, config.eval.k, config.eval.hr_mode).map(Some)
}

fn metric_cols(report: &Option<MetricsReport>) -> [String; 2] {
    match report {
        Some(r) => [fmt_f64(r.ndcg_at_k), fmt_f64(r.hr_at_k)],
        None => [String::new(), String::new()],
    }
}

// ---------------------------------------------------------------- synth

pub fn synth(config: &RunConfig, out: &Path) -> Result<()> {
    let cfg = &config.synth;
    log(format!(
        "synthesizing {}x{} world, seed {}, confounding {}",
        cfg.n_users, cfg.n_items, cfg.seed, cfg.confounding
    ));
    let generated = generate_dataset(cfg, config.data.split)?;
    let dataset = &generated.dataset;
    let n_truth = config.ground_truth.pairs.min(dataset.test.len());
    let mut rng = Rng::new(cfg.seed, stream::ORACLE);
    let mut truth = Table::new(["user", "item", "g", "k", "exposure"]);
    for x in &dataset.test[..n_truth] {
        let o = generated
            .world
            .oracle_pair(x.user, x.item, config.ground_truth.mc_draws, &mut rng);
        truth.push(vec![
            x.user.to_string(),
            x.item.to_string(),
            fmt_f64(o.g),
            fmt_f64(o.k),
            fmt_f64(generated.world.exposure_marginal(x.user, x.item)),
        ]);
    }
    let manifest = Manifest::new("synth", dataset, Some(cfg.clone()), cfg.seed);
    dataset_dir::write(out, dataset, &manifest)?;
    astrec::data::write_triples(&out.join("uniform.tsv"), &generated.uniform, ValueColumn::Label)?;
    write_text(&out.join("ground_truth.tsv"), &truth.to_csv().replace(',', "\t"))?;
    write_run_files(out, config, "synth", vec![cfg.seed], &[])?;
    println!(
        "logged {} uniform {} (train {} validation {} test {}) -> {}",
        dataset.biased_train.len(),
        generated.uniform.len(),
        dataset.uniform_train.len(),
        dataset.validation.len(),
        dataset.test.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- prepare

fn separator(config: &RunConfig) -> Result<char> {
    let mut chars = config.data.separator.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(Error::Config(format!(
            "data.separator must be a single character, got {:?}",
            config.data.separator
        ))),
    }
}

pub fn prepare(config: &RunConfig, out: &Path) -> Result<()> {
    let data = &config.data;
    let biased_path = data
        .raw_biased
        .as_deref()
        .ok_or_else(|| Error::Config("prepare needs data.raw_biased (--biased)".into()))?;
    let uniform_path = data
        .raw_uniform
        .as_deref()
        .ok_or_else(|| Error::Config("prepare needs data.raw_uniform (--uniform)".into()))?;
    let (n_users, n_items, biased, uniform, maps) = match data.format {
        RawFormat::Triples => {
            let opts = TripleOptions {
                separator: separator(config)?,
                one_based: data.one_based,
                values: ValueColumn::Rating {
                    threshold: data.threshold,
                },
                remap: true,
                source: Source::Logged,
            };
            let joint = load_triples_joint(&[(biased_path, Source::Logged), (uniform_path, Source::Uniform)], &opts)?;
            let mut parts = joint.interactions.into_iter();
            let biased = parts.next().unwrap_or_default();
            let uniform = parts.next().unwrap_or_default();
            (
                joint.n_users,
                joint.n_items,
                biased,
                uniform,
                Some((joint.user_map, joint.item_map)),
            )
        }
        RawFormat::Matrix => {
            let b = load_matrix_ascii(biased_path, data.threshold, Source::Logged)?;
            let u = load_matrix_ascii(uniform_path, data.threshold, Source::Uniform)?;
            if (b.n_users, b.n_items) != (u.n_users, u.n_items) {
                return Err(Error::Validation(format!(
                    "matrix shapes differ: {} is {}x{}, {} is {}x{}",
                    biased_path.display(),
                    b.n_users,
                    b.n_items,
                    uniform_path.display(),
                    u.n_users,
                    u.n_items
                )));
            }
            (b.n_users, b.n_items, b.interactions, u.interactions, None)
        }
    };
    let uniform = dedup_pairs(&uniform);
    let (uniform_train, validation, test) = split_uniform(&uniform, data.split, &mut Rng::new(data.split_seed, 0))?;
    let dataset = Dataset {
        n_users,
        n_items,
        biased_train: biased,
        uniform_train,
        validation,
        test,
    };
    dataset.validate()?;
    let manifest = Manifest::new("prepare", &dataset, None, data.split_seed);
    dataset_dir::write(out, &dataset, &manifest)?;
    let (user_map, item_map) = maps.unwrap_or_else(|| (IdMap::identity(n_users), IdMap::identity(n_items)));
    user_map.write(&out.join("user_map.tsv"))?;
    item_map.write(&out.join("item_map.tsv"))?;
    write_run_files(
        out,
        config,
        "prepare",
        vec![data.split_seed],
        &[biased_path.to_path_buf(), uniform_path.to_path_buf()],
    )?;
    println!(
        "{} users, {} items; logged {}, uniform train {} validation {} test {} -> {}",
        n_users,
        n_items,
        dataset.biased_train.len(),
        dataset.uniform_train.len(),
        dataset.validation.len(),
        dataset.test.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- train

struct TrainedSeed {
    seed: u64,
    result: TrainResult,
    test: Option<MetricsReport>,
}

fn train_seed(dataset: &Dataset, trainer_config: &TrainConfig, config: &RunConfig) -> Result<TrainedSeed> {
    log(format!(
        "training {} seed {} for up to {} steps",
        trainer_config.objective.as_str(),
        trainer_config.seed,
        trainer_config.max_steps
    ));
    let result = trainer::train(dataset, trainer_config)?;
    let test = test_metrics(&result.best_model, dataset, config)?;
    log(format!(
        "seed {}: best step {} validation NDCG@{} {}",
        trainer_config.seed, result.best_step, trainer_config.eval_k, result.best_val_ndcg
    ));
    Ok(TrainedSeed {
        seed: trainer_config.seed,
        result,
        test,
    })
}

fn write_trained(dir: &Path, trained: &TrainedSeed) -> Result<()> {
    create_dir(dir)?;
    checkpoint::save(&trained.result.best_model, &dir.join("model.ckpt"))?;
    write_text(&dir.join("history.csv"), &history_csv(&trained.result))
}

pub fn train(config: &RunConfig, out: &Path) -> Result<()> {
    let data = DatasetDir::read(config.data_dir()?)?;
    let seeds = seeds(config);
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let mut tc = config.trainer.clone();
        tc.seed = seed;
        runs.push(train_seed(&data.dataset, &tc, config)?);
    }
    let k = config.eval.k;
    let mut summary = Table::new([
        "seed".to_string(),
        "objective".into(),
        "steps_run".into(),
        "best_step".into(),
        "val_ndcg5".into(),
        format!("test_ndcg_at_{k}"),
        format!("test_hr_at_{k}"),
    ]);
    let mut rows = Vec::new();
    for run in &runs {
        let [ndcg, hr] = metric_cols(&run.test);
        rows.push(vec![
            run.seed.to_string(),
            config.trainer.objective.as_str().into(),
            run.result.steps_run.to_string(),
            run.result.best_step.to_string(),
            fmt_f64(run.result.best_val_ndcg),
            ndcg,
            hr,
        ]);
    }
    for r in &rows {
        summary.push(r.clone());
    }
    if runs.len() > 1 {
        summary.push_mean_stderr(&rows, 0, &[1]);
    }
    create_dir(out)?;
    if let [single] = runs.as_slice() {
        write_trained(out, single)?;
    } else {
        for run in &runs {
            write_trained(&out.join(format!("seed_{}", run.seed)), run)?;
        }
    }
    summary.write(&out.join("summary.csv"))?;
    write_run_files(out, config, "train", seeds, &data.files())?;
    print!("{}", summary.to_csv());
    Ok(())
}

// ---------------------------------------------------------------- evaluate / diagnose

fn load_checkpoint(config: &RunConfig, dataset: &Dataset) -> Result<(Model, PathBuf)> {
    let path = config
        .eval
        .checkpoint
        .clone()
        .ok_or_else(|| Error::Config("no checkpoint: pass --checkpoint or set eval.checkpoint".into()))?;
    let model = checkpoint::load(&path)?;
    check_model_fits(&model, dataset)?;
    Ok((model, path))
}

fn run_diagnostics(model: &Model, data: &DatasetDir, config: &RunConfig) -> Result<Diagnostics> {
    let world: Option<SynthWorld> = data.world()?;
    diagnose(model, &data.dataset, world.as_ref(), &config.eval.diagnostic)
}

const DIAGNOSTIC_COLUMNS: [&str; 5] = [
    "a_distance",
    "cond_shift",
    "kl_estimate",
    "labeling_distance",
    "labeling_distance_exposed",
];

fn diagnostic_cols(d: &Diagnostics) -> Vec<String> {
    vec![
        fmt_f64(d.a_distance),
        fmt_f64(d.cond_shift),
        fmt_f64(d.kl_estimate),
        fmt_opt(d.labeling_distance),
        fmt_opt(d.labeling_distance_exposed),
    ]
}

pub fn evaluate_cmd(config: &RunConfig, out: &Path) -> Result<()> {
    let data = DatasetDir::read(config.data_dir()?)?;
    let (model, ckpt) = load_checkpoint(config, &data.dataset)?;
    let mut report = evaluate(&model, &data.dataset.test, config.eval.k, config.eval.hr_mode)?;
    if config.eval.diagnostics {
        report.diagnostics = Some(run_diagnostics(&model, &data, config)?);
    }
    let mut header: Vec<String> = [
        "k",
        "hr_mode",
        "ndcg_at_k",
        "hr_at_k",
        "hr_recall",
        "hr_any_hit",
        "n_users_evaluated",
        "n_users_skipped",
    ]
    .map(String::from)
    .to_vec();
    let mut row = vec![
        report.k.to_string(),
        report.hr_mode.as_str().into(),
        fmt_f64(report.ndcg_at_k),
        fmt_f64(report.hr_at_k),
        fmt_f64(report.hr_recall),
        fmt_f64(report.hr_any_hit),
        report.n_users_evaluated.to_string(),
        report.n_users_skipped.to_string(),
    ];
    if let Some(d) = &report.diagnostics {
        header.extend(DIAGNOSTIC_COLUMNS.map(String::from));
        row.extend(diagnostic_cols(d));
    }
    let mut table = Table::new(header);
    table.push(row);
    create_dir(out)?;
    table.write(&out.join("metrics.csv"))?;
    let mut inputs = data.files();
    inputs.push(ckpt);
    write_run_files(out, config, "evaluate", vec![model.seed], &inputs)?;
    println!(
        "NDCG@{k} {ndcg:.4}  HR@{k} ({mode}) {hr:.4}  users {n} (skipped {s})",
        k = report.k,
        ndcg = report.ndcg_at_k,
        mode = report.hr_mode.as_str(),
        hr = report.hr_at_k,
        n = report.n_users_evaluated,
        s = report.n_users_skipped
    );
    if let Some(d) = &report.diagnostics {
        print_diagnostics(d);
    }
    Ok(())
}

fn print_diagnostics(d: &Diagnostics) {
    println!(
        "a_distance {:.4}  cond_shift {:.4}  kl_estimate {:.4}",
        d.a_distance, d.cond_shift, d.kl_estimate
    );
    if let (Some(u), Some(e)) = (d.labeling_distance, d.labeling_distance_exposed) {
        println!("labeling_distance {u:.4} (exposure-weighted {e:.4})");
    }
}

pub fn diagnose_cmd(config: &RunConfig, out: &Path) -> Result<()> {
    let data = DatasetDir::read(config.data_dir()?)?;
    let (model, ckpt) = load_checkpoint(config, &data.dataset)?;
    let d = run_diagnostics(&model, &data, config)?;
    let mut table = Table::new(DIAGNOSTIC_COLUMNS);
    table.push(diagnostic_cols(&d));
    create_dir(out)?;
    table.write(&out.join("diagnostics.csv"))?;
    let mut inputs = data.files();
    inputs.push(ckpt);
    write_run_files(out, config, "diagnose", vec![model.seed], &inputs)?;
    print_diagnostics(&d);
    Ok(())
}

// ---------------------------------------------------------------- ablate

pub fn parse_components(names: &[String]) -> Result<Vec<Component>> {
    names
        .iter()
        .map(|n| {
            Component::parse(n).ok_or_else(|| Error::Config(format!("unknown component {n:?}, expected A, S or E")))
        })
        .collect()
}

pub fn ablate(config: &RunConfig, out: &Path) -> Result<()> {
    let data = DatasetDir::read(config.data_dir()?)?;
    let components = parse_components(&config.ablation.components)?;
    let seeds = seeds(config);
    let k = config.eval.k;
    let mut table = Table::new([
        "seed".to_string(),
        "variant".into(),
        "best_step".into(),
        "val_ndcg5".into(),
        format!("test_ndcg_at_{k}"),
        format!("test_hr_at_{k}"),
        "a_distance".into(),
    ]);
    let mut by_variant: Vec<(String, Vec<Vec<String>>)> = Vec::new();
    for &seed in &seeds {
        let mut tc = config.trainer.clone();
        tc.seed = seed;
        log(format!(
            "ablation seed {seed}: full AST and {} variants",
            components.len()
        ));
        for (label, result) in trainer::ablate(&data.dataset, &tc, &components)? {
            let test = test_metrics(&result.best_model, &data.dataset, config)?;
            let a_dist = match diagnose(&result.best_model, &data.dataset, None, &config.eval.diagnostic) {
                Ok(d) => fmt_f64(d.a_distance),
                Err(e) => {
                    log(format!("seed {seed} {label}: no a_distance ({e})"));
                    String::new()
                }
            };
            let [ndcg, hr] = metric_cols(&test);
            let row = vec![
                seed.to_string(),
                label.clone(),
                result.best_step.to_string(),
                fmt_f64(result.best_val_ndcg),
                ndcg,
                hr,
                a_dist,
            ];
            table.push(row.clone());
            match by_variant.iter_mut().find(|(l, _)| *l == label) {
                Some((_, rows)) => rows.push(row),
                None => by_variant.push((label, vec![row])),
            }
        }
    }
    if seeds.len() > 1 {
        for (_, rows) in &by_variant {
            table.push_mean_stderr(rows, 0, &[1]);
        }
    }
    create_dir(out)?;
    table.write(&out.join("ablation.csv"))?;
    write_run_files(out, config, "ablate", seeds, &data.files())?;
    print!("{}", table.to_csv());
    Ok(())
}

// ---------------------------------------------------------------- sweep

/// Every combination of grid values, first axis varying slowest.
pub fn grid_cells(config: &RunConfig) -> Vec<Vec<Value>> {
    let mut cells: Vec<Vec<Value>> = vec![Vec::new()];
    for axis in &config.sweep.grid {
        cells = cells
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push(v.clone());
                    c
                })
            })
            .collect();
    }
    cells
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn cell_config(config: &RunConfig, values: &[Value]) -> Result<RunConfig> {
    let mut root = config.to_value();
    for (axis, v) in config.sweep.grid.iter().zip(values) {
        set_path(&mut root, &axis.key, v.clone())?;
    }
    let cell = RunConfig::from_value(root)?;
    cell.validate()?;
    Ok(cell)
}

/// Index of the largest validation score; NaN never wins, ties keep the first.
pub fn best_index(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn sweep(config: &RunConfig, out: &Path) -> Result<()> {
    let data = DatasetDir::read(config.data_dir()?)?;
    let cells = grid_cells(config);
    let configs = cells
        .iter()
        .map(|v| cell_config(config, v))
        .collect::<Result<Vec<_>>>()?;
    log(format!(
        "sweep over {} cells with {} worker(s)",
        configs.len(),
        config.sweep.parallel
    ));
    let results: Vec<Mutex<Option<Result<TrainedSeed>>>> = configs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = config.sweep.parallel.min(configs.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= configs.len() {
                    break;
                }
                let r = train_seed(&data.dataset, &configs[idx].trainer, &configs[idx]);
                *results[idx].lock().expect("result slot") = Some(r);
            });
        }
    });
    let runs = results
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every cell ran"))
        .collect::<Result<Vec<_>>>()?;
    let k = config.eval.k;
    let mut header = vec!["cell".to_string()];
    header.extend(config.sweep.grid.iter().map(|a| a.key.clone()));
    header.extend([
        "best_step".to_string(),
        "val_ndcg5".into(),
        format!("test_ndcg_at_{k}"),
        format!("test_hr_at_{k}"),
        "best".into(),
    ]);
    let best = best_index(&runs.iter().map(|r| r.result.best_val_ndcg).collect::<Vec<_>>());
    let mut table = Table::new(header);
    for (idx, (run, values)) in runs.iter().zip(&cells).enumerate() {
        let mut row = vec![idx.to_string()];
        row.extend(values.iter().map(value_text));
        let [ndcg, hr] = metric_cols(&run.test);
        row.extend([
            run.result.best_step.to_string(),
            fmt_f64(run.result.best_val_ndcg),
            ndcg,
            hr,
            u8::from(best == Some(idx)).to_string(),
        ]);
        table.push(row);
    }
    create_dir(out)?;
    for (idx, (run, cell)) in runs.iter().zip(&configs).enumerate() {
        let dir = out.join(format!("cell_{idx:03}"));
        write_trained(&dir, run)?;
        write_text(&dir.join(RESOLVED_CONFIG), &cell.to_json())?;
    }
    table.write(&out.join("sweep.csv"))?;
    write_run_files(out, config, "sweep", vec![config.trainer.seed], &data.files())?;
    print!("{}", table.to_csv());
    Ok(())
}
