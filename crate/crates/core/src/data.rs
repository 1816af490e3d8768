//! Task containers shared by the training loops: scored images, per-family
//! distortion tasks with support/query splits, the meta-training set, and
//! the fine-tuning target task.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeds::fnv1a64;
use crate::tensor::Tensor;

/// One image with its normalized quality score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredImage<S: Scalar> {
    /// Unique name within a task set; doubles as the export file stem.
    pub name: String,
    pub family: String,
    pub severity: usize,
    /// (channels, height, width), values in [0,1].
    pub pixels: Tensor<S>,
    /// Normalized score in [0,1], higher = better quality.
    pub score: S,
}

/// A distortion-specific regression task: disjoint support and query sets
/// drawn from one family.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionTask<S: Scalar> {
    pub task_id: String,
    pub support: Vec<ScoredImage<S>>,
    pub query: Vec<ScoredImage<S>>,
}

impl<S: Scalar> DistortionTask<S> {
    pub fn validate(&self) -> Result<()> {
        if self.support.is_empty() || self.query.is_empty() {
            return Err(Error::InsufficientData(format!(
                "task `{}` needs non-empty support and query sets",
                self.task_id
            )));
        }
        for img in self.support.iter().chain(&self.query) {
            if img.score < S::zero() || img.score > S::one() {
                return Err(Error::InvalidArgument(format!(
                    "task `{}`: image `{}` has score {} outside [0,1]",
                    self.task_id, img.name, img.score
                )));
            }
        }
        for s in &self.support {
            if self.query.iter().any(|q| q.name == s.name) {
                return Err(Error::InvalidArgument(format!(
                    "task `{}`: image `{}` appears in both support and query",
                    self.task_id, s.name
                )));
            }
        }
        Ok(())
    }
}

/// The collection of tasks the bi-level loop samples from.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaTrainingSet<S: Scalar> {
    pub tasks: Vec<DistortionTask<S>>,
}

impl<S: Scalar> MetaTrainingSet<S> {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "meta-training set needs >= 2 tasks, has {}",
                self.tasks.len()
            )));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            t.validate()?;
            if self.tasks[..i].iter().any(|o| o.task_id == t.task_id) {
                return Err(Error::InvalidArgument(format!("duplicate task id `{}`", t.task_id)));
            }
        }
        Ok(())
    }
}

/// Fine-tuning target: a train/test split on one unseen family, plus the
/// original score range (used when loading real data; synthetic scores are
/// already in [0,1]).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTask<S: Scalar> {
    pub family: String,
    pub train: Vec<ScoredImage<S>>,
    pub test: Vec<ScoredImage<S>>,
    pub score_range: (f64, f64),
}

impl<S: Scalar> TargetTask<S> {
    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::InsufficientData(format!(
                "target task `{}` has an empty training set",
                self.family
            )));
        }
        for t in &self.train {
            if self.test.iter().any(|q| q.name == t.name) {
                return Err(Error::InvalidArgument(format!(
                    "target task `{}`: image `{}` appears in both train and test",
                    self.family, t.name
                )));
            }
        }
        Ok(())
    }
}

/// Stack scored images into an (n,c,h,w) batch and an (n,1) target tensor.
pub fn stack<S: Scalar>(images: &[ScoredImage<S>]) -> Result<(Tensor<S>, Tensor<S>)> {
    if images.is_empty() {
        return Err(Error::InsufficientData("cannot stack an empty image list".into()));
    }
    let shape = images[0].pixels.shape();
    if shape.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "image `{}` has shape {:?}, expected (c,h,w)",
            images[0].name, shape
        )));
    }
    let mut pixels = Vec::with_capacity(images.len() * images[0].pixels.numel());
    let mut targets = Vec::with_capacity(images.len());
    for img in images {
        if img.pixels.shape() != shape {
            return Err(Error::InvalidArgument(format!(
                "image `{}` has shape {:?}, others have {:?}",
                img.name,
                img.pixels.shape(),
                shape
            )));
        }
        pixels.extend_from_slice(img.pixels.data());
        targets.push(img.score);
    }
    let batch_shape = [images.len(), shape[0], shape[1], shape[2]];
    Ok((
        Tensor::new(&batch_shape, pixels)?,
        Tensor::new(&[images.len(), 1], targets)?,
    ))
}

/// Order-sensitive content hash of a set of scored images — used to assert
/// that paired experiment arms really consumed identical splits.
pub fn split_checksum<S: Scalar>(images: &[ScoredImage<S>]) -> u64 {
    let mut bytes = Vec::new();
    for img in images {
        bytes.extend_from_slice(img.name.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(&(img.severity as u64).to_le_bytes());
        bytes.extend_from_slice(&img.score.as_f64().to_le_bytes());
        for &p in img.pixels.data() {
            bytes.extend_from_slice(&p.as_f64().to_le_bytes());
        }
    }
    fnv1a64(&bytes)
}
