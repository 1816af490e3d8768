//! Fine-tuning on a target task, correlation metrics, full-image scoring
//! via a deterministic patch grid, and input-gradient saliency maps.

use std::io::Write;
use std::path::Path;

use crate::data::{stack, ScoredImage, TargetTask};
use crate::error::{Error, Result};
use crate::meta::{adapt_steps, AdaptOutcome, OptHyper};
use crate::model::{build_loss_graph, build_predict_graph, BackboneSpec, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// P Adam steps on the target task's training set, starting from the prior
/// with fresh optimizer state. Names, shapes, and parameter count are
/// preserved exactly — fine-tuning learns no additional parameters.
pub fn fine_tune<S: Scalar>(
    spec: &BackboneSpec,
    prior: &ParamSet<S>,
    task: &TargetTask<S>,
    steps: usize,
    rate: S,
    opt: &OptHyper<S>,
) -> Result<AdaptOutcome<S>> {
    task.validate()?;
    if steps == 0 {
        return Err(Error::InvalidArgument("fine-tuning needs P >= 1 steps".into()));
    }
    if rate <= S::zero() {
        return Err(Error::InvalidArgument("fine-tuning rate must be positive".into()));
    }
    let (images, targets) = stack(&task.train)?;
    let mut mg = build_loss_graph(spec, prior, task.train.len())?;
    let loss = mg.loss.expect("loss graph has a loss node");
    let out = adapt_steps(
        &mut mg.graph,
        loss,
        &[("images", &images), ("targets", &targets)],
        prior,
        steps,
        rate,
        opt,
    )?;
    debug_assert_eq!(out.params.param_count(), prior.param_count());
    Ok(out)
}

fn check_finite_pair<S: Scalar>(truth: &[S], predicted: &[S]) -> Result<()> {
    if truth.len() != predicted.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} truth vs {} predicted",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.len() < 2 {
        return Err(Error::InsufficientData("correlation needs >= 2 samples".into()));
    }
    if truth.iter().chain(predicted).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite score in correlation input".into()));
    }
    Ok(())
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "an input has zero variance; correlation is undefined".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Pearson linear correlation of raw scores.
pub fn plcc<S: Scalar>(truth: &[S], predicted: &[S]) -> Result<f64> {
    check_finite_pair(truth, predicted)?;
    let x: Vec<f64> = truth.iter().map(|v| v.as_f64()).collect();
    let y: Vec<f64> = predicted.iter().map(|v| v.as_f64()).collect();
    pearson(&x, &y)
}

/// Fractional (average) 1-based ranks; tied values share the mean of the
/// positions they occupy.
pub fn fractional_ranks<S: Scalar>(xs: &[S]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite scores"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share rank mean of (i+1)..=(j+1)
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = shared;
        }
        i = j + 1;
    }
    ranks
}

fn has_ties(ranks: &[f64]) -> bool {
    ranks.iter().any(|r| r.fract() != 0.0) || {
        let mut sorted: Vec<f64> = ranks.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.windows(2).any(|w| w[0] == w[1])
    }
}

/// Spearman rank-order correlation. Tie-free inputs use the closed form
/// 1 − 6·Σd²/(N(N²−1)); with ties present the general form (Pearson over
/// fractional ranks) applies.
pub fn srocc<S: Scalar>(truth: &[S], predicted: &[S]) -> Result<f64> {
    check_finite_pair(truth, predicted)?;
    let rx = fractional_ranks(truth);
    let ry = fractional_ranks(predicted);
    if has_ties(&rx) || has_ties(&ry) {
        if rx.iter().all(|&r| r == rx[0]) || ry.iter().all(|&r| r == ry[0]) {
            return Err(Error::UndefinedCorrelation(
                "an input has all-equal values; rank correlation is undefined".into(),
            ));
        }
        return pearson(&rx, &ry);
    }
    let n = truth.len() as f64;
    let sum_d2: f64 = rx.iter().zip(&ry).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(1.0 - 6.0 * sum_d2 / (n * (n * n - 1.0)))
}

/// Correlation metrics for one evaluated task. `None` marks an undefined
/// correlation (zero-variance predictions or truth), kept distinct from any
/// numeric value so averages cannot silently absorb it.
#[derive(Debug, Clone)]
pub struct EvalReport<S: Scalar> {
    pub plcc: Option<f64>,
    pub srocc: Option<f64>,
    pub n: usize,
    pub predictions: Vec<S>,
    /// Mean squared error of predictions against ground truth.
    pub mse: S,
}

fn undefined_to_none(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedCorrelation(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Score every test image of `task` with `params` and correlate against
/// ground truth. Images larger than the backbone input are covered by a
/// deterministic grid of non-overlapping patches whose scores are averaged
/// (ragged edges are truncated); images exactly at the input size take a
/// single forward pass.
pub fn evaluate_model<S: Scalar>(
    spec: &BackboneSpec,
    params: &ParamSet<S>,
    task: &TargetTask<S>,
) -> Result<EvalReport<S>> {
    if task.test.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "evaluation needs >= 2 test images, target task `{}` has {}",
            task.family,
            task.test.len()
        )));
    }
    let predictions = predict_images(spec, params, &task.test)?;
    let truth: Vec<S> = task.test.iter().map(|im| im.score).collect();
    let plcc_v = undefined_to_none(plcc(&truth, &predictions))?;
    let srocc_v = undefined_to_none(srocc(&truth, &predictions))?;
    let mse = crate::model::loss(&predictions, &truth)?;
    Ok(EvalReport { plcc: plcc_v, srocc: srocc_v, n: task.test.len(), predictions, mse })
}

/// Patch-grid scores for a list of images (mean over each image's grid).
pub fn predict_images<S: Scalar>(
    spec: &BackboneSpec,
    params: &ParamSet<S>,
    images: &[ScoredImage<S>],
) -> Result<Vec<S>> {
    let p = spec.input_hw;
    let c = spec.input_channels;
    let mut patches: Vec<S> = Vec::new();
    let mut counts: Vec<usize> = Vec::with_capacity(images.len());
    for img in images {
        let shape = img.pixels.shape();
        if shape.len() != 3 || shape[0] != c {
            return Err(Error::InvalidArgument(format!(
                "image `{}` has shape {:?}, expected ({c},h,w)",
                img.name, shape
            )));
        }
        let (h, w) = (shape[1], shape[2]);
        if h < p || w < p {
            return Err(Error::InvalidArgument(format!(
                "image `{}` is {h}x{w}, smaller than the {p}x{p} backbone input",
                img.name
            )));
        }
        let (gy, gx) = (h / p, w / p);
        counts.push(gy * gx);
        let data = img.pixels.data();
        for ty in 0..gy {
            for tx in 0..gx {
                for ci in 0..c {
                    for py in 0..p {
                        let row = (ci * h + ty * p + py) * w + tx * p;
                        patches.extend_from_slice(&data[row..row + p]);
                    }
                }
            }
        }
    }
    let total: usize = counts.iter().sum();
    let batch = Tensor::new(&[total, c, p, p], patches)?;
    let mut mg = build_predict_graph(spec, params, total)?;
    mg.graph.forward(&[("images", &batch)])?;
    let scores = mg.graph.value(mg.scores)?.data().to_vec();
    let mut out = Vec::with_capacity(images.len());
    let mut offset = 0;
    for &k in &counts {
        let mut acc = S::zero();
        for &s in &scores[offset..offset + k] {
            acc += s;
        }
        out.push(acc / S::from_usize(k));
        offset += k;
    }
    Ok(out)
}

/// |∂ŷ/∂pixel| of a single image, reduced over channels by max and
/// max-normalized to [0,1] (all zeros if the gradient vanishes).
pub fn saliency_map<S: Scalar>(
    spec: &BackboneSpec,
    params: &ParamSet<S>,
    image: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (c, hw) = (spec.input_channels, spec.input_hw);
    if image.shape() != [c, hw, hw] {
        return Err(Error::InvalidArgument(format!(
            "image shape {:?} does not match backbone input ({c},{hw},{hw})",
            image.shape()
        )));
    }
    let batch = Tensor::new(&[1, c, hw, hw], image.data().to_vec())?;
    let mut mg = build_predict_graph(spec, params, 1)?;
    mg.graph.forward(&[("images", &batch)])?;
    mg.graph.backward(mg.scores)?;
    let grad = mg.graph.node_grad(mg.images)?;
    let gd = grad.data();
    let mut map = vec![S::zero(); hw * hw];
    for ci in 0..c {
        for (slot, &g) in map.iter_mut().zip(&gd[ci * hw * hw..(ci + 1) * hw * hw]) {
            let a = g.abs();
            if a > *slot {
                *slot = a;
            }
        }
    }
    let max = map.iter().cloned().fold(S::zero(), S::max);
    if max > S::zero() {
        for v in map.iter_mut() {
            *v = *v / max;
        }
    }
    Tensor::new(&[hw, hw], map)
}

/// Write a [0,1] map as an 8-bit binary PGM (P5).
pub fn write_pgm<S: Scalar>(path: &Path, map: &Tensor<S>) -> Result<()> {
    if map.shape().len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "PGM export needs a rank-2 map, got {:?}",
            map.shape()
        )));
    }
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let mut file = std::fs::File::create(path)?;
    write!(file, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = map
        .data()
        .iter()
        .map(|&v| {
            let clamped = v.as_f64().clamp(0.0, 1.0);
            (clamped * 255.0).round() as u8
        })
        .collect();
    file.write_all(&bytes)?;
    Ok(())
}
