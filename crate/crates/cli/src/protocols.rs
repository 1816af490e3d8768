//! The four end-to-end experiment protocols. Each consumes an
//! `ExperimentConfig`, trains/evaluates deterministically per seed, and
//! returns a results table plus per-epoch training curves. Independent
//! (unit, seed) cells run in parallel; rows are merged in sorted order, so
//! the emitted bytes never depend on scheduling.
//!
//! Rows use three shared phase vocabularies:
//! - lodo / random-split: `prior` (meta-trained, no adaptation),
//!   `finetuned` (prior + P adaptation steps), `scratch` (random init + the
//!   same P steps).
//! - ablation: `meta-prior`, `meta-finetuned`, `baseline`,
//!   `baseline-finetuned`, plus per-seed and overall `margin` rows carrying
//!   mean finetuned-SROCC differences in the srocc column.
//! - sweep: `adapted` per valid (k,S) cell, `invalid` markers for cells
//!   violating 1 < k <= N, and seed-mean `mean` rows.
//!
//! Aggregate rows always use unit `average` (mean over concrete units at
//! fixed seed) or seed 0 + unit `overall` for whole-run summaries.

use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use miqa_core::data::{split_checksum, MetaTrainingSet, ScoredImage, TargetTask};
use miqa_core::eval::{evaluate_model, fine_tune, EvalReport};
use miqa_core::meta::{meta_train, pooled_train, EpochLog};
use miqa_core::model::{build_model, ParamSet};
use miqa_core::seeds;
use miqa_core::taskgen::{build_task, gen_base_images, lodo_split};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Protocol};
use crate::error::{CliError, Result};
use crate::results::{emit_results, emit_train_log, Row, TrainLogRow};

#[derive(Debug, Clone, Default)]
pub struct ProtocolOutput {
    pub results: Vec<Row>,
    pub train_log: Vec<TrainLogRow>,
}

/// Initialization stream: offset so parameter draws never alias any
/// data-generation stream derived from the same experiment seed.
pub fn theta0_seed(seed: u64) -> u64 {
    seed + 100
}

fn run_id(cfg: &ExperimentConfig) -> String {
    let hash = cfg.hash();
    let hex: String = hash[..4].iter().map(|b| format!("{b:02x}")).collect();
    format!("{}-{hex}", cfg.run.protocol.name())
}

fn wall(cfg: &ExperimentConfig, start: Instant) -> Option<u64> {
    cfg.run
        .record_timing
        .then(|| u64::try_from(start.elapsed().as_millis()).unwrap_or(u64::MAX))
}

fn metric_row(
    cfg: &ExperimentConfig,
    id: &str,
    seed: u64,
    unit: &str,
    phase: &str,
    report: &EvalReport<f32>,
    wall_ms: Option<u64>,
) -> Row {
    Row {
        run_id: id.to_string(),
        seed,
        protocol: cfg.run.protocol.name().to_string(),
        unit: unit.to_string(),
        phase: phase.to_string(),
        plcc: report.plcc,
        srocc: report.srocc,
        loss: Some(f64::from(report.mse)),
        wall_ms,
    }
}

fn log_rows(id: &str, seed: u64, unit: &str, logs: &[EpochLog<f32>]) -> Vec<TrainLogRow> {
    logs.iter()
        .map(|l| TrainLogRow {
            run_id: id.to_string(),
            seed,
            unit: unit.to_string(),
            epoch: l.epoch,
            query_loss: f64::from(l.mean_query_loss),
        })
        .collect()
}

/// Mean of the defined values; None when every input is undefined.
fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Per-seed `average` rows over concrete units for each phase present.
fn average_rows(cfg: &ExperimentConfig, id: &str, rows: &[Row], phases: &[&str]) -> Vec<Row> {
    let mut out = Vec::new();
    for &seed in &cfg.run.seeds {
        for &phase in phases {
            let cells: Vec<&Row> = rows
                .iter()
                .filter(|r| r.seed == seed && r.phase == phase && r.unit != "average")
                .collect();
            if cells.is_empty() {
                continue;
            }
            out.push(Row {
                run_id: id.to_string(),
                seed,
                protocol: cfg.run.protocol.name().to_string(),
                unit: "average".into(),
                phase: phase.to_string(),
                plcc: mean_defined(cells.iter().map(|r| r.plcc)),
                srocc: mean_defined(cells.iter().map(|r| r.srocc)),
                loss: mean_defined(cells.iter().map(|r| r.loss)),
                wall_ms: None,
            });
        }
    }
    out
}

/// Run cells in parallel, flushing completed rows to `flush_to` as each
/// cell lands so an aborted run still leaves its finished work on disk.
fn run_cells<C, F>(cells: Vec<C>, flush_to: Option<&Path>, f: F) -> Result<ProtocolOutput>
where
    C: Sync,
    F: Fn(&C) -> Result<ProtocolOutput> + Sync,
{
    let done: Mutex<ProtocolOutput> = Mutex::new(ProtocolOutput::default());
    let result: std::result::Result<Vec<()>, CliError> = cells
        .par_iter()
        .map(|cell| {
            let part = f(cell)?;
            let mut acc = done.lock().expect("results mutex");
            acc.results.extend(part.results);
            acc.train_log.extend(part.train_log);
            if let Some(path) = flush_to {
                if !acc.results.is_empty() {
                    emit_results(&acc.results, path)?;
                }
            }
            Ok(())
        })
        .collect();
    let output = done.into_inner().expect("results mutex");
    match result {
        Ok(_) => Ok(output),
        Err(e) => {
            // completed cells are already flushed; surface the failure
            Err(e)
        }
    }
}

fn family_names(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let tg = cfg.taskgen.to_taskgen_config(0)?;
    Ok(tg.families.iter().map(|f| f.name().to_string()).collect())
}

/// Leave-one-family-out: for every (held-out family, seed), meta-train on
/// the rest, then report the prior as-is, after P fine-tune steps, and the
/// same P steps from a fresh random init.
pub fn run_lodo(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ProtocolOutput> {
    let id = run_id(cfg);
    let spec = cfg.backbone.to_spec();
    let results_path = out_dir.map(|d| d.join("results.csv"));
    let cells: Vec<(String, u64)> = family_names(cfg)?
        .into_iter()
        .flat_map(|f| cfg.run.seeds.iter().map(move |&s| (f.clone(), s)))
        .collect();

    let mut output = run_cells(cells, results_path.as_deref(), |(family, seed)| {
        let tg = cfg.taskgen.to_taskgen_config(*seed)?;
        let (meta_set, target) = lodo_split::<f32>(&tg, family)?;
        let theta0 = build_model::<f32>(&spec, theta0_seed(*seed))?;
        let opt = cfg.meta.opt_hyper();

        let t0 = Instant::now();
        let (prior, logs) =
            meta_train(&spec, &meta_set, theta0.clone(), &cfg.meta.to_meta_config(*seed))?;
        let train_ms = wall(cfg, t0);
        let prior_report = evaluate_model(&spec, &prior, &target)?;

        let t1 = Instant::now();
        let tuned = fine_tune(
            &spec,
            &prior,
            &target,
            cfg.finetune.steps,
            cfg.finetune.rate as f32,
            &opt,
        )?;
        assert_eq!(
            tuned.params.param_count(),
            prior.param_count(),
            "fine-tuning must not change the parameter count"
        );
        let tuned_ms = wall(cfg, t1);
        let tuned_report = evaluate_model(&spec, &tuned.params, &target)?;

        let t2 = Instant::now();
        let scratch = fine_tune(
            &spec,
            &theta0,
            &target,
            cfg.finetune.steps,
            cfg.finetune.rate as f32,
            &opt,
        )?;
        let scratch_ms = wall(cfg, t2);
        let scratch_report = evaluate_model(&spec, &scratch.params, &target)?;

        Ok(ProtocolOutput {
            results: vec![
                metric_row(cfg, &id, *seed, family, "prior", &prior_report, train_ms),
                metric_row(cfg, &id, *seed, family, "finetuned", &tuned_report, tuned_ms),
                metric_row(cfg, &id, *seed, family, "scratch", &scratch_report, scratch_ms),
            ],
            train_log: log_rows(&id, *seed, family, &logs),
        })
    })?;

    let aggregates = average_rows(cfg, &id, &output.results, &["prior", "finetuned", "scratch"]);
    output.results.extend(aggregates);
    finish(out_dir, &mut output)?;
    Ok(output)
}

/// Source-vs-target generalization: meta-train on every family, then
/// fine-tune on 80% of a mixed-family image set built from unseen bases and
/// test on the remaining 20%.
pub fn run_random_split(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ProtocolOutput> {
    let id = run_id(cfg);
    let spec = cfg.backbone.to_spec();
    let results_path = out_dir.map(|d| d.join("results.csv"));
    let cells: Vec<u64> = cfg.run.seeds.clone();

    let mut output = run_cells(cells, results_path.as_deref(), |&seed| {
        let tg = cfg.taskgen.to_taskgen_config(seed)?;
        let meta_set = all_family_tasks(&tg)?;
        let target = mixed_target(&tg)?;
        let theta0 = build_model::<f32>(&spec, theta0_seed(seed))?;
        let opt = cfg.meta.opt_hyper();

        let t0 = Instant::now();
        let (prior, logs) =
            meta_train(&spec, &meta_set, theta0.clone(), &cfg.meta.to_meta_config(seed))?;
        let train_ms = wall(cfg, t0);
        let prior_report = evaluate_model(&spec, &prior, &target)?;

        let t1 = Instant::now();
        let tuned = fine_tune(
            &spec,
            &prior,
            &target,
            cfg.finetune.steps,
            cfg.finetune.rate as f32,
            &opt,
        )?;
        let tuned_ms = wall(cfg, t1);
        let tuned_report = evaluate_model(&spec, &tuned.params, &target)?;

        let t2 = Instant::now();
        let scratch = fine_tune(
            &spec,
            &theta0,
            &target,
            cfg.finetune.steps,
            cfg.finetune.rate as f32,
            &opt,
        )?;
        let scratch_ms = wall(cfg, t2);
        let scratch_report = evaluate_model(&spec, &scratch.params, &target)?;

        Ok(ProtocolOutput {
            results: vec![
                metric_row(cfg, &id, seed, "80-20", "prior", &prior_report, train_ms),
                metric_row(cfg, &id, seed, "80-20", "finetuned", &tuned_report, tuned_ms),
                metric_row(cfg, &id, seed, "80-20", "scratch", &scratch_report, scratch_ms),
            ],
            train_log: log_rows(&id, seed, "80-20", &logs),
        })
    })?;

    // whole-run means across seeds
    for phase in ["prior", "finetuned", "scratch"] {
        let cells: Vec<&Row> =
            output.results.iter().filter(|r| r.phase == phase && r.unit == "80-20").collect();
        output.results.push(Row {
            run_id: id.clone(),
            seed: 0,
            protocol: cfg.run.protocol.name().to_string(),
            unit: "overall".into(),
            phase: phase.into(),
            plcc: mean_defined(cells.iter().map(|r| r.plcc)),
            srocc: mean_defined(cells.iter().map(|r| r.srocc)),
            loss: mean_defined(cells.iter().map(|r| r.loss)),
            wall_ms: None,
        });
    }
    finish(out_dir, &mut output)?;
    Ok(output)
}

/// One task per family over the shared base pool (the leave-one-out split
/// with nothing left out).
pub fn all_family_tasks(tg: &miqa_core::taskgen::TaskGenConfig) -> Result<MetaTrainingSet<f32>> {
    tg.validate()?;
    let bases = gen_base_images::<f32>(
        tg.bases_per_family,
        tg.resolution,
        seeds::derive(tg.seed, "bases"),
    )?;
    let mut tasks = Vec::new();
    for family in &tg.families {
        let mut rng = rand_seed(seeds::derive(tg.seed, &format!("split:{}", family.name())));
        tasks.push(build_task(family, &bases, tg.support_fraction, tg.tau, &mut rng)?);
    }
    let set = MetaTrainingSet { tasks };
    set.validate()?;
    Ok(set)
}

/// A mixed-family target: fresh bases (never seen during meta-training),
/// every family and severity applied, split 80/20 at the base level.
fn mixed_target(tg: &miqa_core::taskgen::TaskGenConfig) -> Result<TargetTask<f32>> {
    let mut bases = gen_base_images::<f32>(
        tg.bases_per_family,
        tg.resolution,
        seeds::derive(tg.seed, "target-bases"),
    )?;
    for b in &mut bases {
        b.name = format!("tgt-{}", b.name);
    }
    let n = bases.len();
    let n_train = ((0.8 * n as f64).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    {
        use rand::seq::SliceRandom;
        let mut rng = rand_seed(seeds::derive(tg.seed, "target-split"));
        order.shuffle(&mut rng);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (slot, &bi) in order.iter().enumerate() {
        let base = &bases[bi];
        let side = if slot < n_train { &mut train } else { &mut test };
        for family in &tg.families {
            for level in 0..family.levels.len() {
                let distorted =
                    miqa_core::taskgen::apply_distortion(&base.pixels, family, level, base.seed)?;
                let score = miqa_core::taskgen::pseudo_mos(&base.pixels, &distorted, tg.tau)?;
                side.push(ScoredImage {
                    name: format!("{}_{}_l{level}", base.name, family.name()),
                    family: family.name().to_string(),
                    severity: level,
                    pixels: distorted,
                    score: score as f32,
                });
            }
        }
    }
    train.sort_by(|a, b| a.name.cmp(&b.name));
    test.sort_by(|a, b| a.name.cmp(&b.name));
    let target =
        TargetTask { family: "all-families".into(), train, test, score_range: (0.0, 1.0) };
    target.validate()?;
    Ok(target)
}

fn rand_seed(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// Meta-training against conventional pooled Adam training, seed-paired:
/// identical splits, identical random init, identical fine-tuning. The
/// pooled arm trains on the union of all meta-training images with the same
/// schedule, loss, epochs, and backbone.
pub fn run_ablation(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ProtocolOutput> {
    let id = run_id(cfg);
    let spec = cfg.backbone.to_spec();
    let results_path = out_dir.map(|d| d.join("results.csv"));
    let cells: Vec<(String, u64)> = family_names(cfg)?
        .into_iter()
        .flat_map(|f| cfg.run.seeds.iter().map(move |&s| (f.clone(), s)))
        .collect();

    let mut output = run_cells(cells, results_path.as_deref(), |(family, seed)| {
        let tg = cfg.taskgen.to_taskgen_config(*seed)?;
        let (meta_set, target) = lodo_split::<f32>(&tg, family)?;
        let theta0 = build_model::<f32>(&spec, theta0_seed(*seed))?;
        let opt = cfg.meta.opt_hyper();

        // both arms must consume the same split: checksum the meta-training
        // images once per arm's view of them
        let meta_view: Vec<ScoredImage<f32>> = meta_set
            .tasks
            .iter()
            .flat_map(|t| t.support.iter().chain(t.query.iter()).cloned())
            .collect();
        let pooled_view = meta_view.clone();
        assert_eq!(
            split_checksum(&meta_view),
            split_checksum(&pooled_view),
            "ablation arms must see identical task splits"
        );

        let t0 = Instant::now();
        let (prior, logs) =
            meta_train(&spec, &meta_set, theta0.clone(), &cfg.meta.to_meta_config(*seed))?;
        let meta_ms = wall(cfg, t0);

        let t1 = Instant::now();
        let (base_net, base_logs) =
            pooled_train(&spec, &pooled_view, theta0.clone(), &cfg.meta.to_pooled_config(*seed))?;
        let base_ms = wall(cfg, t1);
        assert_eq!(
            prior.param_count(),
            base_net.param_count(),
            "ablation arms must share the parameter count"
        );

        let ft = |net: &ParamSet<f32>| -> Result<EvalReport<f32>> {
            let out = fine_tune(
                &spec,
                net,
                &target,
                cfg.finetune.steps,
                cfg.finetune.rate as f32,
                &opt,
            )?;
            assert_eq!(out.params.param_count(), net.param_count());
            Ok(evaluate_model(&spec, &out.params, &target)?)
        };
        let prior_report = evaluate_model(&spec, &prior, &target)?;
        let base_report = evaluate_model(&spec, &base_net, &target)?;
        let meta_tuned = ft(&prior)?;
        let base_tuned = ft(&base_net)?;

        let mut train_log = log_rows(&id, *seed, &format!("{family}/meta"), &logs);
        train_log.extend(log_rows(&id, *seed, &format!("{family}/baseline"), &base_logs));
        Ok(ProtocolOutput {
            results: vec![
                metric_row(cfg, &id, *seed, family, "meta-prior", &prior_report, meta_ms),
                metric_row(cfg, &id, *seed, family, "meta-finetuned", &meta_tuned, None),
                metric_row(cfg, &id, *seed, family, "baseline", &base_report, base_ms),
                metric_row(cfg, &id, *seed, family, "baseline-finetuned", &base_tuned, None),
            ],
            train_log,
        })
    })?;

    let aggregates = average_rows(
        cfg,
        &id,
        &output.results,
        &["meta-prior", "meta-finetuned", "baseline", "baseline-finetuned"],
    );
    // per-seed margin: mean over families of (meta-finetuned − baseline-finetuned)
    let mut margin_rows = Vec::new();
    for &seed in &cfg.run.seeds {
        let meta = mean_defined(
            aggregates
                .iter()
                .filter(|r| r.seed == seed && r.phase == "meta-finetuned")
                .map(|r| r.srocc),
        );
        let base = mean_defined(
            aggregates
                .iter()
                .filter(|r| r.seed == seed && r.phase == "baseline-finetuned")
                .map(|r| r.srocc),
        );
        margin_rows.push(Row {
            run_id: id.clone(),
            seed,
            protocol: cfg.run.protocol.name().to_string(),
            unit: "average".into(),
            phase: "margin".into(),
            plcc: None,
            srocc: match (meta, base) {
                (Some(m), Some(b)) => Some(m - b),
                _ => None,
            },
            loss: None,
            wall_ms: None,
        });
    }
    // overall margin across every (family, seed) cell
    let cell = |phase: &str| {
        mean_defined(
            output
                .results
                .iter()
                .filter(|r| r.phase == phase && r.unit != "average")
                .map(|r| r.srocc),
        )
    };
    let overall = match (cell("meta-finetuned"), cell("baseline-finetuned")) {
        (Some(m), Some(b)) => Some(m - b),
        _ => None,
    };
    margin_rows.push(Row {
        run_id: id.clone(),
        seed: 0,
        protocol: cfg.run.protocol.name().to_string(),
        unit: "overall".into(),
        phase: "margin".into(),
        plcc: None,
        srocc: overall,
        loss: None,
        wall_ms: None,
    });
    output.results.extend(aggregates);
    output.results.extend(margin_rows);
    finish(out_dir, &mut output)?;
    Ok(output)
}

/// Grid sweep over (tasks-per-batch, adaptation-steps) with one family held
/// out. Cells whose k violates 1 < k <= N are marked invalid and skipped.
pub fn run_sweep(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ProtocolOutput> {
    let id = run_id(cfg);
    let spec = cfg.backbone.to_spec();
    let held_out = cfg.sweep.held_out.clone();
    let results_path = out_dir.map(|d| d.join("results.csv"));
    let n_tasks = family_names(cfg)?
        .iter()
        .filter(|f| **f != held_out)
        .count();
    if n_tasks == 0 {
        return Err(CliError::Config(format!(
            "sweep held-out family `{held_out}` is not in the configured set"
        )));
    }

    let mut cells: Vec<(usize, usize, u64)> = Vec::new();
    for &k in &cfg.sweep.k_values {
        for &s in &cfg.sweep.s_values {
            for &seed in &cfg.run.seeds {
                cells.push((k, s, seed));
            }
        }
    }

    let mut output = run_cells(cells, results_path.as_deref(), |&(k, s, seed)| {
        let unit = format!("k{k}S{s}");
        if k <= 1 || k > n_tasks {
            return Ok(ProtocolOutput {
                results: vec![Row {
                    run_id: id.clone(),
                    seed,
                    protocol: cfg.run.protocol.name().to_string(),
                    unit,
                    phase: "invalid".into(),
                    plcc: None,
                    srocc: None,
                    loss: None,
                    wall_ms: None,
                }],
                train_log: Vec::new(),
            });
        }
        let tg = cfg.taskgen.to_taskgen_config(seed)?;
        let (meta_set, target) = lodo_split::<f32>(&tg, &held_out)?;
        let theta0 = build_model::<f32>(&spec, theta0_seed(seed))?;
        let mut mc = cfg.meta.to_meta_config(seed);
        mc.tasks_per_batch = k;
        mc.inner_steps = s;
        mc.query_steps = s;
        let t0 = Instant::now();
        let (prior, logs) = meta_train(&spec, &meta_set, theta0, &mc)?;
        let ms = wall(cfg, t0);
        let tuned = fine_tune(
            &spec,
            &prior,
            &target,
            cfg.finetune.steps,
            cfg.finetune.rate as f32,
            &cfg.meta.opt_hyper(),
        )?;
        let report = evaluate_model(&spec, &tuned.params, &target)?;
        Ok(ProtocolOutput {
            results: vec![metric_row(cfg, &id, seed, &unit, "adapted", &report, ms)],
            train_log: log_rows(&id, seed, &unit, &logs),
        })
    })?;

    // seed-mean per cell
    let mut means = Vec::new();
    for &k in &cfg.sweep.k_values {
        for &s in &cfg.sweep.s_values {
            let unit = format!("k{k}S{s}");
            let cells: Vec<&Row> = output
                .results
                .iter()
                .filter(|r| r.unit == unit && r.phase == "adapted")
                .collect();
            if cells.is_empty() {
                continue;
            }
            means.push(Row {
                run_id: id.clone(),
                seed: 0,
                protocol: cfg.run.protocol.name().to_string(),
                unit,
                phase: "mean".into(),
                plcc: mean_defined(cells.iter().map(|r| r.plcc)),
                srocc: mean_defined(cells.iter().map(|r| r.srocc)),
                loss: mean_defined(cells.iter().map(|r| r.loss)),
                wall_ms: None,
            });
        }
    }
    output.results.extend(means);
    finish(out_dir, &mut output)?;
    Ok(output)
}

/// Dispatch on the configured protocol.
pub fn run_protocol(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ProtocolOutput> {
    match cfg.run.protocol {
        Protocol::Lodo => run_lodo(cfg, out_dir),
        Protocol::RandomSplit => run_random_split(cfg, out_dir),
        Protocol::Ablation => run_ablation(cfg, out_dir),
        Protocol::Sweep => run_sweep(cfg, out_dir),
    }
}

fn finish(out_dir: Option<&Path>, output: &mut ProtocolOutput) -> Result<()> {
    if let Some(dir) = out_dir {
        emit_results(&output.results, &dir.join("results.csv"))?;
        emit_train_log(&output.train_log, &dir.join("train_log.csv"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::results::parse_results;

    fn stub_row(unit: &str) -> Row {
        Row {
            run_id: "stub".into(),
            seed: 0,
            protocol: "lodo".into(),
            unit: unit.into(),
            phase: "prior".into(),
            plcc: Some(0.5),
            srocc: Some(0.5),
            loss: None,
            wall_ms: None,
        }
    }

    #[test]
    fn completed_cells_are_flushed_before_an_abort_surfaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        // one worker => cells run in submission order, deterministically
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let result = pool.install(|| {
            run_cells(vec!["a", "b", "boom", "d"], Some(path.as_path()), |cell| {
                if *cell == "boom" {
                    Err(CliError::Config("injected failure".into()))
                } else {
                    Ok(ProtocolOutput { results: vec![stub_row(cell)], train_log: Vec::new() })
                }
            })
        });
        assert!(matches!(result, Err(CliError::Config(_))));
        let rows = parse_results(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let units: Vec<&str> = rows.iter().map(|r| r.unit.as_str()).collect();
        assert_eq!(units, ["a", "b"], "work finished before the failure is on disk");
    }
}
