//! Central-difference verification of every graph operation, en masse:
//! 100 random instances per op at f32 precision must stay under a 1e-3
//! relative error, and the whole sweep must finish inside 30 seconds of
//! wall clock on a single core.

use std::time::Instant;

use miqa_core::gradcheck::{check_gradients, check_gradients_with};
use miqa_core::graph::{Graph, NodeId};
use miqa_core::tensor::Tensor;
use miqa_core::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random values bounded away from zero so ReLU kinks and tiny
/// denominators cannot poison the finite-difference slope.
fn draw<S: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> Vec<S> {
    (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.1..1.0f64);
            S::from_f64(if rng.gen_bool(0.5) { mag } else { -mag })
        })
        .collect()
}

fn param<S: Scalar>(
    g: &mut Graph<S>,
    name: &str,
    shape: &[usize],
    rng: &mut ChaCha8Rng,
) -> NodeId {
    let data = draw(rng, shape.iter().product());
    g.param(name, Tensor::new(shape, data).unwrap()).unwrap()
}

fn bind_target<S: Scalar>(g: &mut Graph<S>, shape: &[usize], rng: &mut ChaCha8Rng) -> NodeId {
    let id = g.input("target", shape).unwrap();
    let t = Tensor::new(shape, draw(rng, shape.iter().product())).unwrap();
    g.forward(&[("target", &t)]).unwrap();
    id
}

/// Build one random instance of the op under test, returning the graph and
/// its scalar output node. Every differentiable leaf is a parameter so the
/// checker sweeps it.
fn instance<S: Scalar>(op: &str, rng: &mut ChaCha8Rng) -> (Graph<S>, NodeId) {
    let mut g = Graph::new();
    let out = match op {
        "matmul" => {
            let m = rng.gen_range(1..4);
            let k = rng.gen_range(1..4);
            let n = rng.gen_range(1..4);
            let a = param(&mut g, "a", &[m, k], rng);
            let b = param(&mut g, "b", &[k, n], rng);
            let y = g.matmul(a, b).unwrap();
            let t = bind_target(&mut g, &[m, n], rng);
            g.mse_loss(y, t).unwrap()
        }
        "conv2d" => {
            let b = rng.gen_range(1..3);
            let c = rng.gen_range(1..3);
            let oc = rng.gen_range(1..3);
            let k = rng.gen_range(1..4);
            let stride = rng.gen_range(1..3);
            let padding = rng.gen_range(0..2);
            let h = rng.gen_range(k + 1..8);
            let w = rng.gen_range(k + 1..8);
            let x = param(&mut g, "x", &[b, c, h, w], rng);
            let wt = param(&mut g, "w", &[oc, c, k, k], rng);
            let y = g.conv2d(x, wt, stride, padding).unwrap();
            let oh = (h + 2 * padding - k) / stride + 1;
            let ow = (w + 2 * padding - k) / stride + 1;
            let t = bind_target(&mut g, &[b, oc, oh, ow], rng);
            g.mse_loss(y, t).unwrap()
        }
        "bias_add" => {
            let b = rng.gen_range(1..4);
            let f = rng.gen_range(1..5);
            let x = param(&mut g, "x", &[b, f], rng);
            let bias = param(&mut g, "bias", &[f], rng);
            let y = g.bias_add(x, bias).unwrap();
            let t = bind_target(&mut g, &[b, f], rng);
            g.mse_loss(y, t).unwrap()
        }
        "relu" => {
            let n = rng.gen_range(2..8);
            let x = param(&mut g, "x", &[n, 1], rng);
            let y = g.relu(x).unwrap();
            let t = bind_target(&mut g, &[n, 1], rng);
            g.mse_loss(y, t).unwrap()
        }
        "global_avg_pool" => {
            let b = rng.gen_range(1..3);
            let c = rng.gen_range(1..4);
            let h = rng.gen_range(1..5);
            let w = rng.gen_range(1..5);
            let x = param(&mut g, "x", &[b, c, h, w], rng);
            let y = g.global_avg_pool(x).unwrap();
            let t = bind_target(&mut g, &[b, c], rng);
            g.mse_loss(y, t).unwrap()
        }
        "add" => {
            let n = rng.gen_range(1..5);
            let m = rng.gen_range(1..5);
            let a = param(&mut g, "a", &[n, m], rng);
            let b = param(&mut g, "b", &[n, m], rng);
            let y = g.add(a, b).unwrap();
            let t = bind_target(&mut g, &[n, m], rng);
            g.mse_loss(y, t).unwrap()
        }
        "scale" => {
            let n = rng.gen_range(2..8);
            let factor =
                S::from_f64(rng.gen_range(0.2..2.0f64) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
            let x = param(&mut g, "x", &[n, 1], rng);
            let y = g.scale(x, factor).unwrap();
            let t = bind_target(&mut g, &[n, 1], rng);
            g.mse_loss(y, t).unwrap()
        }
        "sum" => {
            let n = rng.gen_range(2..8);
            let m = rng.gen_range(1..4);
            let x = param(&mut g, "x", &[n, m], rng);
            g.sum(x).unwrap()
        }
        "mse_loss" => {
            let n = rng.gen_range(2..8);
            let pred = param(&mut g, "pred", &[n, 1], rng);
            let t = bind_target(&mut g, &[n, 1], rng);
            g.mse_loss(pred, t).unwrap()
        }
        "composite" => return composite(rng),
        other => panic!("unknown op {other}"),
    };
    (g, out)
}

/// conv → relu → pool → linear → bias → scale: the regressor in miniature,
/// checked end to end through every op at once. Instances whose conv
/// pre-activations sit within 5e-2 of the ReLU kink are redrawn: a ±h nudge
/// could flip them, which breaks the finite-difference slope itself, not
/// the gradient under test.
fn composite<S: Scalar>(rng: &mut ChaCha8Rng) -> (Graph<S>, NodeId) {
    for _ in 0..256 {
        let mut g = Graph::new();
        let b = rng.gen_range(1..3);
        let x = param(&mut g, "x", &[b, 1, 6, 6], rng);
        let w1 = param(&mut g, "w1", &[2, 1, 3, 3], rng);
        let c1 = g.conv2d(x, w1, 2, 1).unwrap();
        let r1 = g.relu(c1).unwrap();
        let p = g.global_avg_pool(r1).unwrap();
        let w2 = param(&mut g, "w2", &[2, 1], rng);
        let fc = g.matmul(p, w2).unwrap();
        let bias = param(&mut g, "b2", &[1], rng);
        let y = g.bias_add(fc, bias).unwrap();
        let s = g.scale(y, S::from_f64(1.5)).unwrap();
        let t = bind_target(&mut g, &[b, 1], rng);
        let loss = g.mse_loss(s, t).unwrap();
        g.forward(&[]).unwrap();
        let safe = g
            .value(c1)
            .unwrap()
            .data()
            .iter()
            .all(|v| v.as_f64().abs() > 5e-2);
        if safe {
            return (g, loss);
        }
    }
    panic!("could not draw a kink-safe composite instance");
}

const OPS: [&str; 10] = [
    "matmul",
    "conv2d",
    "bias_add",
    "relu",
    "global_avg_pool",
    "add",
    "scale",
    "sum",
    "mse_loss",
    "composite",
];

#[test]
fn every_op_passes_central_difference_checks_at_f32() {
    let start = Instant::now();
    let mut worst: (f64, String) = (0.0, String::new());
    for (oi, op) in OPS.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(90_000 + oi as u64);
        for i in 0..100 {
            let (mut g, out) = instance::<f32>(op, &mut rng);
            // The composite chain is piecewise-linear into one quadratic
            // loss, so central differences carry no truncation error at any
            // step; a wider step only suppresses 32-bit cancellation noise.
            let report = if *op == "composite" {
                check_gradients_with(&mut g, out, 1e-2f32, 1e-3)
            } else {
                check_gradients(&mut g, out)
            }
            .unwrap_or_else(|e| panic!("{op} instance {i}: {e}"));
            if report.max_rel_err > worst.0 {
                worst = (report.max_rel_err, format!("{op} instance {i}"));
            }
            assert!(
                report.passed(),
                "{op} instance {i}: max rel err {} >= {}",
                report.max_rel_err,
                report.tolerance
            );
        }
    }
    let elapsed = start.elapsed();
    println!(
        "worst rel err {:.3e} at {}; {} ops x 100 instances in {:.2?}",
        worst.0,
        worst.1,
        OPS.len(),
        elapsed
    );
    assert!(worst.0 < 1e-3);
    assert!(
        elapsed.as_secs() < 30,
        "gradient sweep took {elapsed:.2?}, budget is 30 s"
    );
}

#[test]
fn spot_checks_tighten_to_1e6_at_f64() {
    for (oi, op) in OPS.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(91_000 + oi as u64);
        for i in 0..10 {
            let (mut g, out) = instance::<f64>(op, &mut rng);
            let report = check_gradients(&mut g, out).unwrap();
            assert!(
                report.passed(),
                "{op} instance {i} at f64: max rel err {}",
                report.max_rel_err
            );
        }
    }
}
