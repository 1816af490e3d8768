//! Bi-level gradient optimization over distortion-specific tasks.
//!
//! Each sampled task adapts a private copy of the shared parameters in two
//! phases — support set, then query set — with a freshly zeroed Adam state
//! per phase, first-order gradients only. The outer update then pulls the
//! shared parameters toward the per-task results:
//!
//!   θ ← θ − β · (1/k) · Σ_i (θ − θ_i)
//!
//! All floating-point accumulation happens in fixed task-index order so a
//! run is reproducible bit-for-bit from its seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{stack, DistortionTask, MetaTrainingSet, ScoredImage};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::model::{build_loss_graph, BackboneSpec, ParamSet};
use crate::optim::{apply_weight_decay, AdamHyper, AdamState, Schedule};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Optimizer hyperparameters shared by every adaptation phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptHyper<S: Scalar> {
    pub adam: AdamHyper<S>,
    pub weight_decay: S,
}

impl<S: Scalar> Default for OptHyper<S> {
    fn default() -> Self {
        Self { adam: AdamHyper::default(), weight_decay: S::from_f64(1e-5) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaConfig<S: Scalar> {
    /// k: tasks per mini-batch, 1 < k <= N.
    pub tasks_per_batch: usize,
    /// S: Adam steps in the support phase.
    pub inner_steps: usize,
    /// Steps in the query phase; the shared-S reading of the procedure keeps
    /// this equal to `inner_steps`, but sweeps may split them.
    pub query_steps: usize,
    /// α: learning rate for both adaptation phases.
    pub inner_rate: S,
    /// β: outer update rate.
    pub outer_rate: S,
    pub epochs: usize,
    pub opt: OptHyper<S>,
    pub schedule: Schedule,
    pub seed: u64,
}

impl<S: Scalar> Default for MetaConfig<S> {
    fn default() -> Self {
        Self {
            tasks_per_batch: 5,
            inner_steps: 6,
            query_steps: 6,
            inner_rate: S::from_f64(1e-4),
            outer_rate: S::from_f64(1e-2),
            epochs: 100,
            opt: OptHyper::default(),
            schedule: Schedule::default(),
            seed: 0,
        }
    }
}

impl<S: Scalar> MetaConfig<S> {
    pub fn validate(&self, n_tasks: usize) -> Result<()> {
        if self.tasks_per_batch <= 1 || self.tasks_per_batch > n_tasks {
            return Err(Error::InvalidArgument(format!(
                "tasks_per_batch must satisfy 1 < k <= {} tasks, got {}",
                n_tasks, self.tasks_per_batch
            )));
        }
        if self.inner_steps == 0 || self.query_steps == 0 {
            return Err(Error::InvalidArgument("adaptation step counts must be >= 1".into()));
        }
        if self.inner_rate <= S::zero() || self.outer_rate <= S::zero() {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Result of one adaptation phase. `losses[i]` is the batch loss before
/// step i; `losses[steps]` is the loss after the final step.
#[derive(Debug, Clone)]
pub struct AdaptOutcome<S: Scalar> {
    pub params: ParamSet<S>,
    pub losses: Vec<S>,
}

/// Run `steps` full-batch Adam steps against the loss node of an already
/// constructed graph, starting from `theta` with freshly zeroed moments.
/// The graph's own parameter storage is used as scratch; `theta` is not
/// mutated.
pub fn adapt_steps<S: Scalar>(
    graph: &mut Graph<S>,
    loss_node: NodeId,
    bindings: &[(&str, &Tensor<S>)],
    theta: &ParamSet<S>,
    steps: usize,
    rate: S,
    opt: &OptHyper<S>,
) -> Result<AdaptOutcome<S>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("adaptation needs >= 1 step".into()));
    }
    let mut current = theta.clone();
    let mut state = AdamState::new(&current, opt.adam);
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        write_params(graph, &current)?;
        graph.forward(bindings)?;
        losses.push(graph.value(loss_node)?.item()?);
        graph.backward(loss_node)?;
        let mut grads = graph.gradients()?;
        apply_weight_decay(&mut grads, &current, opt.weight_decay)?;
        state.step(&mut current, &grads, rate)?;
    }
    write_params(graph, &current)?;
    graph.forward(bindings)?;
    losses.push(graph.value(loss_node)?.item()?);
    Ok(AdaptOutcome { params: current, losses })
}

fn write_params<S: Scalar>(graph: &mut Graph<S>, params: &ParamSet<S>) -> Result<()> {
    for (name, tensor) in params.entries() {
        let slot = graph.param_data_mut(name)?;
        if slot.len() != tensor.numel() {
            return Err(Error::IncompatibleParams(format!(
                "tensor `{name}` has {} elements, graph expects {}",
                tensor.numel(),
                slot.len()
            )));
        }
        slot.copy_from_slice(tensor.data());
    }
    Ok(())
}

/// Support-phase adaptation: S steps on the support batch from θ.
pub fn inner_adapt<S: Scalar>(
    spec: &BackboneSpec,
    theta: &ParamSet<S>,
    support: &[ScoredImage<S>],
    steps: usize,
    rate: S,
    opt: &OptHyper<S>,
) -> Result<AdaptOutcome<S>> {
    let (images, targets) = stack(support)?;
    let mut mg = build_loss_graph(spec, theta, support.len())?;
    let loss = mg.loss.expect("loss graph has a loss node");
    adapt_steps(
        &mut mg.graph,
        loss,
        &[("images", &images), ("targets", &targets)],
        theta,
        steps,
        rate,
        opt,
    )
}

/// Query-phase adaptation: starts from θ′ with fresh optimizer state; the
/// support phase's moments never leak in because no state object survives
/// between phases.
pub fn query_adapt<S: Scalar>(
    spec: &BackboneSpec,
    theta_prime: &ParamSet<S>,
    query: &[ScoredImage<S>],
    steps: usize,
    rate: S,
    opt: &OptHyper<S>,
) -> Result<AdaptOutcome<S>> {
    inner_adapt(spec, theta_prime, query, steps, rate, opt)
}

/// θ ← θ − β·(1/k)·Σ(θ − θ_i). Accumulates in adapted-list order.
pub fn outer_update<S: Scalar>(
    theta: &ParamSet<S>,
    adapted: &[ParamSet<S>],
    beta: S,
) -> Result<ParamSet<S>> {
    if adapted.is_empty() {
        return Err(Error::InvalidArgument("outer update needs >= 1 adapted parameter set".into()));
    }
    for a in adapted {
        theta.compatible_with(a)?;
    }
    if beta == S::zero() {
        return Ok(theta.clone());
    }
    let inv_k = S::one() / S::from_usize(adapted.len());
    let mut out = theta.clone();
    for (ti, (_, tensor)) in out.entries_mut().iter_mut().enumerate() {
        let base = theta.entries()[ti].1.data();
        let data = tensor.data_mut();
        for (ei, slot) in data.iter_mut().enumerate() {
            let th = base[ei];
            let mut acc = S::zero();
            for a in adapted {
                acc += th - a.entries()[ti].1.data()[ei];
            }
            *slot = th - beta * acc * inv_k;
        }
    }
    Ok(out)
}

/// Draw k distinct task indices without replacement.
pub fn sample_minibatch<S: Scalar>(
    meta_set: &MetaTrainingSet<S>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let n = meta_set.tasks.len();
    if k <= 1 || k > n {
        return Err(Error::InvalidArgument(format!(
            "mini-batch size must satisfy 1 < k <= {n}, got {k}"
        )));
    }
    Ok(rand::seq::index::sample(rng, n, k).into_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog<S: Scalar> {
    pub epoch: usize,
    /// Mean query loss at θ′ over all tasks touched this epoch.
    pub mean_query_loss: S,
    pub inner_rate: S,
    pub outer_rate: S,
}

/// The full training loop: epochs × ⌈N/k⌉ mini-batches, each mini-batch
/// adapting its tasks independently from the current θ and applying one
/// outer update. Deterministic given `config.seed` and `theta0`.
pub fn meta_train<S: Scalar>(
    spec: &BackboneSpec,
    meta_set: &MetaTrainingSet<S>,
    theta0: ParamSet<S>,
    config: &MetaConfig<S>,
) -> Result<(ParamSet<S>, Vec<EpochLog<S>>)> {
    meta_set.validate()?;
    config.validate(meta_set.tasks.len())?;
    if theta0.fingerprint() != &spec.fingerprint() {
        return Err(Error::IncompatibleParams(
            "initial parameters do not match the backbone spec".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = meta_set.tasks.len();
    let batches_per_epoch = n.div_ceil(config.tasks_per_batch);
    let mut theta = theta0;
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let alpha = config.schedule.rate_at(config.inner_rate, epoch);
        let beta = config.schedule.rate_at(config.outer_rate, epoch);
        let mut query_loss_sum = S::zero();
        let mut query_loss_count = 0usize;
        for _ in 0..batches_per_epoch {
            let picked = sample_minibatch(meta_set, config.tasks_per_batch, &mut rng)?;
            let mut adapted = Vec::with_capacity(picked.len());
            for &ti in &picked {
                let task: &DistortionTask<S> = &meta_set.tasks[ti];
                let prime = inner_adapt(spec, &theta, &task.support, config.inner_steps, alpha, &config.opt)?;
                let outcome =
                    query_adapt(spec, &prime.params, &task.query, config.query_steps, alpha, &config.opt)?;
                query_loss_sum += outcome.losses[0];
                query_loss_count += 1;
                adapted.push(outcome.params);
            }
            theta = outer_update(&theta, &adapted, beta)?;
        }
        logs.push(EpochLog {
            epoch,
            mean_query_loss: query_loss_sum / S::from_usize(query_loss_count),
            inner_rate: alpha,
            outer_rate: beta,
        });
    }
    Ok((theta, logs))
}

/// Settings for conventional single-level training over a pooled image
/// set — the comparison arm that shares the loss, schedule, epoch count,
/// and backbone with meta-training but optimizes one model directly.
#[derive(Debug, Clone)]
pub struct PooledConfig<S: Scalar> {
    pub batch_size: usize,
    pub rate: S,
    pub epochs: usize,
    pub opt: OptHyper<S>,
    pub schedule: Schedule,
    pub seed: u64,
}

impl<S: Scalar> Default for PooledConfig<S> {
    fn default() -> Self {
        Self {
            batch_size: 16,
            rate: S::from_f64(1e-4),
            epochs: 100,
            opt: OptHyper::default(),
            schedule: Schedule::default(),
            seed: 0,
        }
    }
}

/// Ordinary epoch-based Adam over a pooled image list: shuffled
/// mini-batches, one persistent optimizer state across the whole run, the
/// same staircase schedule as meta-training.
pub fn pooled_train<S: Scalar>(
    spec: &BackboneSpec,
    images: &[ScoredImage<S>],
    theta0: ParamSet<S>,
    config: &PooledConfig<S>,
) -> Result<(ParamSet<S>, Vec<EpochLog<S>>)> {
    if images.is_empty() {
        return Err(Error::InsufficientData("pooled training needs >= 1 image".into()));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::InvalidArgument(
            "pooled training needs batch_size >= 1 and epochs >= 1".into(),
        ));
    }
    if config.rate <= S::zero() {
        return Err(Error::InvalidArgument(format!("rate must be > 0, got {}", config.rate)));
    }
    if theta0.fingerprint() != &spec.fingerprint() {
        return Err(Error::IncompatibleParams(
            "initial parameters do not match the backbone spec".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut theta = theta0;
    let mut state = AdamState::new(&theta, config.opt.adam);
    // One graph per distinct batch size (full batches plus the remainder).
    let mut graphs: std::collections::HashMap<usize, crate::model::ModelGraph<S>> =
        std::collections::HashMap::new();
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let rate = config.schedule.rate_at(config.rate, epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = S::zero();
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<ScoredImage<S>> = chunk.iter().map(|&i| images[i].clone()).collect();
            let (xb, tb) = stack(&batch)?;
            let mg = match graphs.entry(batch.len()) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(build_loss_graph(spec, &theta, batch.len())?)
                }
            };
            let loss_node = mg.loss.expect("loss graph has a loss node");
            for (name, tensor) in theta.entries() {
                mg.graph.param_data_mut(name)?.copy_from_slice(tensor.data());
            }
            mg.graph.forward(&[("images", &xb), ("targets", &tb)])?;
            loss_sum += mg.graph.value(loss_node)?.item()?;
            batches += 1;
            mg.graph.backward(loss_node)?;
            let mut grads = mg.graph.gradients()?;
            apply_weight_decay(&mut grads, &theta, config.opt.weight_decay)?;
            state.step(&mut theta, &grads, rate)?;
        }
        logs.push(EpochLog {
            epoch,
            mean_query_loss: loss_sum / S::from_usize(batches),
            inner_rate: rate,
            outer_rate: rate,
        });
    }
    Ok((theta, logs))
}
