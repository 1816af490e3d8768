//! Acceptance gate: one test per shipped guarantee, each printing a single
//! PASS/FAIL line (visible under `--nocapture`). The heavy experiment runs
//! serialize behind a mutex so their wall-clock budgets hold even when the
//! harness schedules tests in parallel.

mod common;

use std::sync::Mutex;
use std::time::Instant;

use miqa::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use miqa::config::{ExperimentConfig, Protocol};
use miqa::protocols::{run_ablation, run_lodo, run_sweep, theta0_seed};
use miqa::results::Row;
use miqa_core::eval::{fine_tune, fractional_ranks, plcc, srocc};
use miqa_core::gradcheck::check_gradients;
use miqa_core::graph::{Graph, NodeId};
use miqa_core::meta::{outer_update, OptHyper};
use miqa_core::model::{build_model, ParamSet};
use miqa_core::optim::{AdamHyper, AdamState};
use miqa_core::taskgen::lodo_split;
use miqa_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static HEAVY: Mutex<()> = Mutex::new(());

/// The shipped desk-scale experiment configuration.
const TOY_TOML: &str = include_str!("../../../configs/toy.toml");

fn toy(protocol: Protocol) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(TOY_TOML).unwrap();
    cfg.run.protocol = protocol;
    cfg
}

fn verdict(tag: &str, pass: bool, detail: &str) {
    println!("[{tag}] {} — {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{tag}: {detail}");
}

// ---------------------------------------------------------------------------
// 1. every registered op matches central finite differences

fn draw(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.1..1.0f64);
            (if rng.gen_bool(0.5) { mag } else { -mag }) as f32
        })
        .collect()
}

fn leaf(g: &mut Graph<f32>, name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> NodeId {
    let data = draw(rng, shape.iter().product());
    g.param(name, Tensor::new(shape, data).unwrap()).unwrap()
}

fn with_loss(g: &mut Graph<f32>, y: NodeId, shape: &[usize], rng: &mut ChaCha8Rng) -> NodeId {
    let t = g.input("target", shape).unwrap();
    let tv = Tensor::new(shape, draw(rng, shape.iter().product())).unwrap();
    g.forward(&[("target", &tv)]).unwrap();
    g.mse_loss(y, t).unwrap()
}

fn op_instance(op: &str, rng: &mut ChaCha8Rng) -> (Graph<f32>, NodeId) {
    let mut g = Graph::new();
    let out = match op {
        "matmul" => {
            let (m, k, n) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4));
            let a = leaf(&mut g, "a", &[m, k], rng);
            let b = leaf(&mut g, "b", &[k, n], rng);
            let y = g.matmul(a, b).unwrap();
            with_loss(&mut g, y, &[m, n], rng)
        }
        "conv2d" => {
            let (b, c, oc) = (rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(1..3));
            let k = rng.gen_range(1..4);
            let stride = rng.gen_range(1..3);
            let padding = rng.gen_range(0..2);
            let h = rng.gen_range(k + 1..8);
            let w = rng.gen_range(k + 1..8);
            let x = leaf(&mut g, "x", &[b, c, h, w], rng);
            let wt = leaf(&mut g, "w", &[oc, c, k, k], rng);
            let y = g.conv2d(x, wt, stride, padding).unwrap();
            let oh = (h + 2 * padding - k) / stride + 1;
            let ow = (w + 2 * padding - k) / stride + 1;
            with_loss(&mut g, y, &[b, oc, oh, ow], rng)
        }
        "bias_add" => {
            let (b, f) = (rng.gen_range(1..4), rng.gen_range(1..5));
            let x = leaf(&mut g, "x", &[b, f], rng);
            let bias = leaf(&mut g, "bias", &[f], rng);
            let y = g.bias_add(x, bias).unwrap();
            with_loss(&mut g, y, &[b, f], rng)
        }
        "relu" => {
            let n = rng.gen_range(2..8);
            let x = leaf(&mut g, "x", &[n, 1], rng);
            let y = g.relu(x).unwrap();
            with_loss(&mut g, y, &[n, 1], rng)
        }
        "global_avg_pool" => {
            let (b, c) = (rng.gen_range(1..3), rng.gen_range(1..4));
            let (h, w) = (rng.gen_range(1..5), rng.gen_range(1..5));
            let x = leaf(&mut g, "x", &[b, c, h, w], rng);
            let y = g.global_avg_pool(x).unwrap();
            with_loss(&mut g, y, &[b, c], rng)
        }
        "add" => {
            let (n, m) = (rng.gen_range(1..5), rng.gen_range(1..5));
            let a = leaf(&mut g, "a", &[n, m], rng);
            let b = leaf(&mut g, "b", &[n, m], rng);
            let y = g.add(a, b).unwrap();
            with_loss(&mut g, y, &[n, m], rng)
        }
        "scale" => {
            let n = rng.gen_range(2..8);
            let f = rng.gen_range(0.2..2.0f64) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let x = leaf(&mut g, "x", &[n, 1], rng);
            let y = g.scale(x, f as f32).unwrap();
            with_loss(&mut g, y, &[n, 1], rng)
        }
        "sum" => {
            let (n, m) = (rng.gen_range(2..8), rng.gen_range(1..4));
            let x = leaf(&mut g, "x", &[n, m], rng);
            g.sum(x).unwrap()
        }
        "mse_loss" => {
            let n = rng.gen_range(2..8);
            let pred = leaf(&mut g, "pred", &[n, 1], rng);
            with_loss(&mut g, pred, &[n, 1], rng)
        }
        other => panic!("unknown op {other}"),
    };
    (g, out)
}

#[test]
fn c1_every_op_matches_central_differences() {
    let ops = [
        "matmul",
        "conv2d",
        "bias_add",
        "relu",
        "global_avg_pool",
        "add",
        "scale",
        "sum",
        "mse_loss",
    ];
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (oi, op) in ops.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(71_000 + oi as u64);
        for _ in 0..100 {
            let (mut g, out) = op_instance(op, &mut rng);
            let report = check_gradients(&mut g, out).unwrap();
            worst = worst.max(report.max_rel_err);
            assert!(report.passed(), "{op}: {}", report.max_rel_err);
        }
    }
    let elapsed = start.elapsed();
    verdict(
        "C1",
        worst < 1e-3 && elapsed.as_secs() < 30,
        &format!(
            "9 ops x 100 instances, worst rel err {worst:.3e} (< 1e-3), {:.2?} (< 30 s)",
            elapsed
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. the optimizer reproduces a hand-computed 20-step trajectory

const TWENTY_STEP_TABLE: [f64; 20] = [
    -0.099999990000001,
    -0.2346874094038468,
    -0.39193490225082918,
    -0.5651804385883466,
    -0.75015941062752256,
    -0.94385184693507238,
    -1.1440120453518606,
    -1.3489179908869445,
    -1.5572220343428978,
    -1.7678547285582527,
    -1.9799592892165904,
    -2.1928449743593851,
    -2.4059528032077199,
    -2.6188296790953279,
    -2.8311084411795447,
    -3.0424922216255906,
    -3.2527420058038501,
    -3.4616666241750949,
    -3.6691146222782644,
    -3.8749676026595611,
];

fn scalar_param(name: &str, value: f64) -> (String, Tensor<f64>) {
    (name.to_string(), Tensor::new(&[1], vec![value]).unwrap())
}

#[test]
fn c2_adam_matches_the_frozen_trajectory() {
    let mut params = ParamSet::from_entries(vec![scalar_param("w", 0.0)], [0u8; 32]).unwrap();
    let mut state = AdamState::new(&params, AdamHyper::default());
    let grad = vec![scalar_param("w", 1.0)];
    let mut worst = 0.0f64;
    for expected in TWENTY_STEP_TABLE {
        state.step(&mut params, &grad, 0.1).unwrap();
        worst = worst.max((params.entries()[0].1.data()[0] - expected).abs());
    }
    let first_ok = (TWENTY_STEP_TABLE[0] + 0.1).abs() < 1e-7;
    verdict(
        "C2",
        worst < 1e-6 && first_ok,
        &format!("20 steps, worst abs dev {worst:.3e} (< 1e-6); first step ≈ -rate"),
    );
}

// ---------------------------------------------------------------------------
// 3. outer-update algebra

fn random_params(seed: u64) -> ParamSet<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = [("a", 5usize), ("b", 17), ("c", 3)]
        .iter()
        .map(|&(name, n)| {
            let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (name.to_string(), Tensor::new(&[n], data).unwrap())
        })
        .collect();
    ParamSet::from_entries(entries, [3u8; 32]).unwrap()
}

#[test]
fn c3_outer_update_algebra_holds() {
    let theta = random_params(1);
    let adapted: Vec<ParamSet<f32>> = (2..7).map(random_params).collect();

    let full = outer_update(&theta, &adapted, 1.0).unwrap();
    let mut mean_dev = 0.0f64;
    for (ti, (_, tensor)) in full.entries().iter().enumerate() {
        for (ei, &v) in tensor.data().iter().enumerate() {
            let mean: f32 = adapted.iter().map(|a| a.entries()[ti].1.data()[ei]).sum::<f32>()
                / adapted.len() as f32;
            mean_dev = mean_dev.max((f64::from(v) - f64::from(mean)).abs());
        }
    }

    let frozen = outer_update(&theta, &adapted, 0.0).unwrap();
    let bitwise = theta
        .entries()
        .iter()
        .zip(frozen.entries())
        .all(|(a, b)| {
            a.1.data()
                .iter()
                .zip(b.1.data())
                .all(|(x, y)| x.to_bits() == y.to_bits())
        });

    let t = ParamSet::from_entries(vec![scalar_param("w", 1.0)], [0u8; 32]).unwrap();
    let sets = vec![
        ParamSet::from_entries(vec![scalar_param("w", 0.8)], [0u8; 32]).unwrap(),
        ParamSet::from_entries(vec![scalar_param("w", 0.6)], [0u8; 32]).unwrap(),
    ];
    let worked = outer_update(&t, &sets, 0.5).unwrap().entries()[0].1.data()[0];

    verdict(
        "C3",
        mean_dev <= 1e-7 && bitwise && worked == 0.85,
        &format!(
            "full step vs elementwise mean dev {mean_dev:.2e} (≤ 1e-7); zero step bitwise: \
             {bitwise}; worked example → {worked} (0.85 exact)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. correlation metric oracles and invariances

fn tie_free(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1e3..1e3)).collect();
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        if s.windows(2).all(|w| w[1] - w[0] > 1e-6) {
            return v;
        }
    }
}

#[test]
fn c4_metric_oracles_and_invariances_hold() {
    let worked = srocc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    let worked_ok = (worked - 0.8).abs() < 1e-9;

    let mut rng = ChaCha8Rng::seed_from_u64(4_000);
    let mut worst_affine = 0.0f64;
    let mut worst_mono = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(4..24);
        let x = tie_free(&mut rng, n);
        let y = tie_free(&mut rng, n);
        let a = rng.gen_range(0.01..50.0);
        let b = rng.gen_range(-100.0..100.0);
        let xa: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        worst_affine =
            worst_affine.max((plcc(&xa, &y).unwrap() - plcc(&x, &y).unwrap()).abs());
        // strictly increasing: d/dv (1e-4 v^3 + 2 v) = 3e-4 v^2 + 2 > 0
        let ym: Vec<f64> = y.iter().map(|v| 1e-4 * v * v * v + 2.0 * v).collect();
        worst_mono = worst_mono.max((srocc(&x, &ym).unwrap() - srocc(&x, &y).unwrap()).abs());
    }

    let mut worst_tie = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(4..24);
        let (x, y) = loop {
            let x: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..6u8))).collect();
            let y: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..6u8))).collect();
            let spread = |v: &[f64]| v.iter().any(|&e| e != v[0]);
            if spread(&x) && spread(&y) {
                break (x, y);
            }
        };
        let via_ranks = plcc(&fractional_ranks(&x), &fractional_ranks(&y)).unwrap();
        worst_tie = worst_tie.max((srocc(&x, &y).unwrap() - via_ranks).abs());
    }

    verdict(
        "C4",
        worked_ok && worst_affine <= 1e-9 && worst_mono <= 1e-9 && worst_tie <= 1e-9,
        &format!(
            "worked example {worked:.12} (0.8 ± 1e-9); 1000 cases: affine dev \
             {worst_affine:.2e}, monotone dev {worst_mono:.2e}, tie path vs rank-Pearson \
             {worst_tie:.2e} (all ≤ 1e-9)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 5. meta-training beats the seed-paired pooled baseline after fine-tuning

fn cell_mean(rows: &[Row], phase: &str) -> f64 {
    let vals: Vec<f64> = rows
        .iter()
        .filter(|r| r.phase == phase && r.unit != "average" && r.unit != "overall")
        .filter_map(|r| r.srocc)
        .collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

#[test]
fn c5_meta_exceeds_pooled_baseline_by_margin() {
    let _serial = HEAVY.lock().unwrap();
    let cfg = toy(Protocol::Ablation);
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = run_ablation(&cfg, Some(dir.path())).unwrap();
    let elapsed = start.elapsed();
    let margin = out
        .results
        .iter()
        .find(|r| r.unit == "overall" && r.phase == "margin")
        .and_then(|r| r.srocc)
        .unwrap();
    let meta = cell_mean(&out.results, "meta-finetuned");
    let base = cell_mean(&out.results, "baseline-finetuned");
    verdict(
        "C5",
        margin >= 0.05 && elapsed.as_secs() < 900,
        &format!(
            "8 families x 5 seeds: fine-tuned SROCC meta {meta:.4} vs baseline {base:.4}, \
             margin {margin:+.4} (≥ 0.05); {:.1} min (< 15 min)",
            elapsed.as_secs_f64() / 60.0
        ),
    );
}

// ---------------------------------------------------------------------------
// 6. the meta prior adapts better than a random initialization

#[test]
fn c6_prior_beats_random_init_after_fifteen_steps() {
    let _serial = HEAVY.lock().unwrap();
    let cfg = toy(Protocol::Lodo);
    let out = run_lodo(&cfg, None).unwrap();
    let mut wins = 0usize;
    let mut pairs = Vec::new();
    for &seed in &cfg.run.seeds {
        let avg = |phase: &str| {
            out.results
                .iter()
                .find(|r| r.seed == seed && r.unit == "average" && r.phase == phase)
                .and_then(|r| r.srocc)
                .unwrap()
        };
        let (tuned, scratch) = (avg("finetuned"), avg("scratch"));
        if tuned > scratch {
            wins += 1;
        }
        pairs.push(format!("s{seed} {tuned:.3}/{scratch:.3}"));
    }
    verdict(
        "C6",
        wins >= 4,
        &format!(
            "prior+15 steps vs random-init+15 steps (mean SROCC over held-out families): \
             {} — {wins}/5 seeds favor the prior (≥ 4)",
            pairs.join(", ")
        ),
    );
}

// ---------------------------------------------------------------------------
// 7. more adaptation steps do not hurt: (k=5, S=6) vs (k=5, S=1)

#[test]
fn c7_six_adaptation_steps_beat_one() {
    let _serial = HEAVY.lock().unwrap();
    let mut cfg = toy(Protocol::Sweep);
    cfg.sweep.k_values = vec![5];
    cfg.sweep.s_values = vec![1, 6];
    let dir = tempfile::tempdir().unwrap();
    let out = run_sweep(&cfg, Some(dir.path())).unwrap();
    let mean = |unit: &str| {
        out.results
            .iter()
            .find(|r| r.unit == unit && r.phase == "mean")
            .and_then(|r| r.srocc)
            .unwrap()
    };
    let (s6, s1) = (mean("k5S6"), mean("k5S1"));
    verdict(
        "C7",
        s6 >= s1,
        &format!("seed-mean held-out SROCC: k5S6 {s6:.4} ≥ k5S1 {s1:.4}"),
    );
}

// ---------------------------------------------------------------------------
// 8. determinism and persistence

#[test]
fn c8_reruns_reproduce_bytes_and_checkpoints_round_trip() {
    let mut cfg = ExperimentConfig::from_toml(common::TINY_TOML).unwrap();
    cfg.run.protocol = Protocol::Lodo;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_lodo(&cfg, Some(a.path())).unwrap();
    run_lodo(&cfg, Some(b.path())).unwrap();
    let bytes_equal = ["results.csv", "train_log.csv"].iter().all(|f| {
        std::fs::read(a.path().join(f)).unwrap() == std::fs::read(b.path().join(f)).unwrap()
    });

    let spec = cfg.backbone.to_spec();
    let params = build_model::<f32>(&spec, theta0_seed(0)).unwrap();
    let path = a.path().join("roundtrip.ckpt");
    save_checkpoint(
        &Checkpoint { params: params.clone(), config_hash: cfg.hash(), epoch: 17 },
        &path,
    )
    .unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let roundtrip_bitwise = loaded.epoch == 17
        && loaded.config_hash == cfg.hash()
        && params.entries().iter().zip(loaded.params.entries()).all(|(x, y)| {
            x.0 == y.0
                && x.1.data().iter().zip(y.1.data()).all(|(p, q)| p.to_bits() == q.to_bits())
        });

    let tg = cfg.taskgen.to_taskgen_config(0).unwrap();
    let (_, target) = lodo_split::<f32>(&tg, "gaussian-blur").unwrap();
    let tuned = fine_tune(&spec, &params, &target, 15, 1e-3, &OptHyper::default()).unwrap();
    let count_kept = tuned.params.param_count() == params.param_count();

    verdict(
        "C8",
        bytes_equal && roundtrip_bitwise && count_kept,
        &format!(
            "rerun CSVs byte-identical: {bytes_equal}; checkpoint round-trip bitwise: \
             {roundtrip_bitwise}; fine-tune kept {} parameters: {count_kept}",
            params.param_count()
        ),
    );
}
