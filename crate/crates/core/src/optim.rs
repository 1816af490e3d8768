//! Adam in the exact form used by the training procedure: moment
//! accumulators without bias correction, optional coupled L2 weight decay
//! folded into the gradient, and a staircase learning-rate schedule.

use crate::error::{Error, Result};
use crate::model::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper<S: Scalar> {
    pub mu1: S,
    pub mu2: S,
    pub epsilon: S,
}

impl<S: Scalar> Default for AdamHyper<S> {
    fn default() -> Self {
        Self {
            mu1: S::from_f64(0.9),
            mu2: S::from_f64(0.99),
            epsilon: S::from_f64(1e-8),
        }
    }
}

/// Per-parameter first and second moment buffers. Freshly zeroed state is
/// part of the training procedure's contract: every adaptation phase starts
/// from m = v = 0.
#[derive(Debug, Clone)]
pub struct AdamState<S: Scalar> {
    hyper: AdamHyper<S>,
    m: Vec<(String, Vec<S>)>,
    v: Vec<(String, Vec<S>)>,
    steps: u64,
}

impl<S: Scalar> AdamState<S> {
    /// Zeroed moments shaped after `params`.
    pub fn new(params: &ParamSet<S>, hyper: AdamHyper<S>) -> Self {
        let m = params
            .entries()
            .iter()
            .map(|(n, t)| (n.clone(), vec![S::zero(); t.numel()]))
            .collect();
        let v = params
            .entries()
            .iter()
            .map(|(n, t)| (n.clone(), vec![S::zero(); t.numel()]))
            .collect();
        Self { hyper, m, v, steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn hyper(&self) -> &AdamHyper<S> {
        &self.hyper
    }

    /// One Adam step over named gradient tensors, updating `params` in
    /// place:
    ///   m ← μ1·m + (1−μ1)·g
    ///   v ← μ2·v + (1−μ2)·g²
    ///   θ ← θ − rate · m / (√v + ε)
    /// No bias correction is applied.
    pub fn step(
        &mut self,
        params: &mut ParamSet<S>,
        grads: &[(String, Tensor<S>)],
        rate: S,
    ) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::IncompatibleParams(format!(
                "{} gradient tensors for {} state slots",
                grads.len(),
                self.m.len()
            )));
        }
        let AdamHyper { mu1, mu2, epsilon } = self.hyper;
        let one = S::one();
        for (i, (name, grad)) in grads.iter().enumerate() {
            let (mname, m) = &mut self.m[i];
            let (_, v) = &mut self.v[i];
            if mname != name {
                return Err(Error::IncompatibleParams(format!(
                    "gradient `{name}` does not match state slot `{mname}`"
                )));
            }
            let entry = &mut params.entries_mut()[i];
            if entry.0 != *name {
                return Err(Error::IncompatibleParams(format!(
                    "gradient `{name}` does not match parameter `{}`",
                    entry.0
                )));
            }
            let theta = entry.1.data_mut();
            if theta.len() != grad.numel() || theta.len() != m.len() {
                return Err(Error::IncompatibleParams(format!(
                    "size mismatch for `{name}`"
                )));
            }
            for ((th, &g), (mi, vi)) in theta
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = mu1 * *mi + (one - mu1) * g;
                *vi = mu2 * *vi + (one - mu2) * g * g;
                *th = *th - rate * *mi / (vi.sqrt() + epsilon);
            }
        }
        self.steps += 1;
        Ok(())
    }
}

/// Coupled L2 weight decay: g ← g + λ·θ, applied before the Adam step.
pub fn apply_weight_decay<S: Scalar>(
    grads: &mut [(String, Tensor<S>)],
    params: &ParamSet<S>,
    lambda: S,
) -> Result<()> {
    if lambda == S::zero() {
        return Ok(());
    }
    if grads.len() != params.entries().len() {
        return Err(Error::IncompatibleParams(format!(
            "{} gradient tensors for {} parameters",
            grads.len(),
            params.entries().len()
        )));
    }
    for ((gname, grad), (pname, theta)) in grads.iter_mut().zip(params.entries()) {
        if gname != pname {
            return Err(Error::IncompatibleParams(format!(
                "gradient `{gname}` does not match parameter `{pname}`"
            )));
        }
        for (g, &t) in grad.data_mut().iter_mut().zip(theta.data()) {
            *g += lambda * t;
        }
    }
    Ok(())
}

/// Staircase decay: rate(epoch) = base · factor^⌊epoch / every⌋.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub factor: f64,
    pub every: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { factor: 0.8, every: 5 }
    }
}

impl Schedule {
    pub fn rate_at<S: Scalar>(&self, base: S, epoch: usize) -> S {
        if self.every == 0 {
            return base;
        }
        let k = (epoch / self.every) as i32;
        base * S::from_f64(self.factor.powi(k))
    }
}
