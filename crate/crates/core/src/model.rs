//! The quality-regression network: configurable conv stack, global average
//! pooling, a hidden fully-connected layer with ReLU, and a linear scalar
//! head. Parameters live in a named, ordered `ParamSet` tagged with an
//! architecture fingerprint so checkpoints and training loops can refuse
//! mismatched shapes early.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneSpec {
    pub input_channels: usize,
    /// Square input resolution (height = width).
    pub input_hw: usize,
    pub convs: Vec<ConvSpec>,
    /// Width of the hidden fully-connected layer between GAP and the head.
    pub hidden: usize,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self {
            input_channels: 1,
            input_hw: 32,
            convs: [16, 32, 64, 64]
                .iter()
                .map(|&oc| ConvSpec { out_channels: oc, kernel: 3, stride: 2 })
                .collect(),
            hidden: 64,
        }
    }
}

impl BackboneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.input_hw == 0 {
            return Err(Error::InvalidArgument("input resolution and channels must be nonzero".into()));
        }
        if self.convs.is_empty() {
            return Err(Error::InvalidArgument("backbone needs at least one conv layer".into()));
        }
        if self.hidden == 0 {
            return Err(Error::InvalidArgument("hidden width must be nonzero".into()));
        }
        let mut hw = self.input_hw;
        for (i, c) in self.convs.iter().enumerate() {
            if c.out_channels == 0 || c.kernel == 0 || c.stride == 0 {
                return Err(Error::InvalidArgument(format!(
                    "conv layer {} has a zero field: {c:?}",
                    i + 1
                )));
            }
            if c.kernel > hw {
                return Err(Error::InvalidArgument(format!(
                    "conv layer {} kernel {} exceeds its {}x{} input",
                    i + 1,
                    c.kernel,
                    hw,
                    hw
                )));
            }
            hw = (hw - c.kernel) / c.stride + 1;
        }
        Ok(())
    }

    /// Spatial size after each conv layer (no padding in the backbone).
    pub fn spatial_chain(&self) -> Vec<usize> {
        let mut hw = self.input_hw;
        let mut chain = vec![hw];
        for c in &self.convs {
            hw = (hw - c.kernel) / c.stride + 1;
            chain.push(hw);
        }
        chain
    }

    /// Named parameter shapes in graph order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = Vec::new();
        let mut ic = self.input_channels;
        for (i, c) in self.convs.iter().enumerate() {
            shapes.push((format!("conv{}.weight", i + 1), vec![c.out_channels, ic, c.kernel, c.kernel]));
            shapes.push((format!("conv{}.bias", i + 1), vec![c.out_channels]));
            ic = c.out_channels;
        }
        shapes.push(("fc1.weight".into(), vec![ic, self.hidden]));
        shapes.push(("fc1.bias".into(), vec![self.hidden]));
        shapes.push(("fc2.weight".into(), vec![self.hidden, 1]));
        shapes.push(("fc2.bias".into(), vec![1]));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    fn canonical_string(&self) -> String {
        let mut s = format!("in:{}x{}x{}", self.input_channels, self.input_hw, self.input_hw);
        for c in &self.convs {
            s.push_str(&format!(";conv:{}k{}s{}", c.out_channels, c.kernel, c.stride));
        }
        s.push_str(&format!(";fc:{};out:1", self.hidden));
        s
    }

    /// SHA-256 of the canonical architecture description.
    pub fn fingerprint(&self) -> [u8; 32] {
        let digest = Sha256::digest(self.canonical_string().as_bytes());
        digest.into()
    }
}

/// Ordered, named parameter tensors plus the architecture fingerprint of the
/// backbone they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<S: Scalar> {
    entries: Vec<(String, Tensor<S>)>,
    fingerprint: [u8; 32],
}

impl<S: Scalar> ParamSet<S> {
    pub fn from_entries(entries: Vec<(String, Tensor<S>)>, fingerprint: [u8; 32]) -> Result<Self> {
        for (i, (name, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::IncompatibleParams(format!("duplicate tensor name `{name}`")));
            }
        }
        Ok(Self { entries, fingerprint })
    }

    pub fn entries(&self) -> &[(String, Tensor<S>)] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [(String, Tensor<S>)] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    pub fn tensor_count(&self) -> usize {
        self.entries.len()
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn compatible_with(&self, other: &Self) -> Result<()> {
        if self.fingerprint != other.fingerprint {
            return Err(Error::IncompatibleParams("architecture fingerprints differ".into()));
        }
        if self.entries.len() != other.entries.len() {
            return Err(Error::IncompatibleParams(format!(
                "tensor counts differ: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((an, at), (bn, bt)) in self.entries.iter().zip(&other.entries) {
            if an != bn {
                return Err(Error::IncompatibleParams(format!("tensor name `{an}` vs `{bn}`")));
            }
            if at.shape() != bt.shape() {
                return Err(Error::IncompatibleParams(format!(
                    "tensor `{an}` shapes differ: {:?} vs {:?}",
                    at.shape(),
                    bt.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
            fingerprint: self.fingerprint,
        }
    }
}

/// Initialize parameters for `spec`: weights fan-in-scaled uniform
/// (±√(6/fan_in), the scale that preserves activation variance through
/// ReLU stacks), biases zero. Deterministic in `seed`; draws happen in f64
/// so f32 and f64 instantiations see the same values.
pub fn build_model<S: Scalar>(spec: &BackboneSpec, seed: u64) -> Result<ParamSet<S>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for (name, shape) in spec.param_shapes() {
        let numel: usize = shape.iter().product();
        let tensor = if name.ends_with(".bias") {
            Tensor::zeros(&shape)
        } else {
            let fan_in: usize = match shape.len() {
                4 => shape[1] * shape[2] * shape[3],
                2 => shape[0],
                _ => unreachable!("weights are rank 2 or 4"),
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            let data = (0..numel)
                .map(|_| S::from_f64(rng.gen_range(-bound..bound)))
                .collect();
            Tensor::new(&shape, data)?
        };
        entries.push((name, tensor));
    }
    ParamSet::from_entries(entries, spec.fingerprint())
}

/// A built graph for one backbone plus handles to its interface nodes.
pub struct ModelGraph<S: Scalar> {
    pub graph: Graph<S>,
    pub images: NodeId,
    pub targets: Option<NodeId>,
    /// Per-image scores, shape (batch, 1).
    pub scores: NodeId,
    pub loss: Option<NodeId>,
    fingerprint: [u8; 32],
}

impl<S: Scalar> ModelGraph<S> {
    /// Snapshot the graph's current parameter values as a ParamSet.
    pub fn params(&self) -> Result<ParamSet<S>> {
        let entries = self
            .graph
            .param_names()
            .into_iter()
            .map(|name| {
                let t = self.graph.param_value(&name)?.clone();
                Ok((name, t))
            })
            .collect::<Result<Vec<_>>>()?;
        ParamSet::from_entries(entries, self.fingerprint)
    }

    /// Overwrite the graph's parameter values from a compatible ParamSet.
    pub fn set_params(&mut self, params: &ParamSet<S>) -> Result<()> {
        if params.fingerprint() != &self.fingerprint {
            return Err(Error::IncompatibleParams("architecture fingerprints differ".into()));
        }
        for (name, tensor) in params.entries() {
            let slot = self.graph.param_data_mut(name)?;
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
}

fn build_graph<S: Scalar>(
    spec: &BackboneSpec,
    params: &ParamSet<S>,
    batch: usize,
    with_loss: bool,
) -> Result<ModelGraph<S>> {
    spec.validate()?;
    if batch == 0 {
        return Err(Error::InvalidArgument("batch must be >= 1".into()));
    }
    let expected = spec.fingerprint();
    if params.fingerprint() != &expected {
        return Err(Error::IncompatibleParams(
            "parameter set does not match this backbone spec".into(),
        ));
    }
    let mut g = Graph::new();
    let images = g.input("images", &[batch, spec.input_channels, spec.input_hw, spec.input_hw])?;
    let mut x = images;
    for (i, _) in spec.convs.iter().enumerate() {
        let wname = format!("conv{}.weight", i + 1);
        let bname = format!("conv{}.bias", i + 1);
        let w = g.param(&wname, fetch(params, &wname)?)?;
        let b = g.param(&bname, fetch(params, &bname)?)?;
        let stride = spec.convs[i].stride;
        x = g.conv2d(x, w, stride, 0)?;
        x = g.bias_add(x, b)?;
        x = g.relu(x)?;
    }
    x = g.global_avg_pool(x)?;
    let w = g.param("fc1.weight", fetch(params, "fc1.weight")?)?;
    let b = g.param("fc1.bias", fetch(params, "fc1.bias")?)?;
    x = g.matmul(x, w)?;
    x = g.bias_add(x, b)?;
    x = g.relu(x)?;
    let w = g.param("fc2.weight", fetch(params, "fc2.weight")?)?;
    let b = g.param("fc2.bias", fetch(params, "fc2.bias")?)?;
    x = g.matmul(x, w)?;
    let scores = g.bias_add(x, b)?;
    let (targets, loss) = if with_loss {
        let t = g.input("targets", &[batch, 1])?;
        let l = g.mse_loss(scores, t)?;
        (Some(t), Some(l))
    } else {
        (None, None)
    };
    Ok(ModelGraph { graph: g, images, targets, scores, loss, fingerprint: expected })
}

fn fetch<S: Scalar>(params: &ParamSet<S>, name: &str) -> Result<Tensor<S>> {
    params
        .get(name)
        .cloned()
        .ok_or_else(|| Error::IncompatibleParams(format!("missing tensor `{name}`")))
}

/// Graph computing scores only.
pub fn build_predict_graph<S: Scalar>(
    spec: &BackboneSpec,
    params: &ParamSet<S>,
    batch: usize,
) -> Result<ModelGraph<S>> {
    build_graph(spec, params, batch, false)
}

/// Graph computing scores and mean-squared-error loss against bound targets.
pub fn build_loss_graph<S: Scalar>(
    spec: &BackboneSpec,
    params: &ParamSet<S>,
    batch: usize,
) -> Result<ModelGraph<S>> {
    build_graph(spec, params, batch, true)
}

/// Score a batch of images. Accepts (c,h,w) for a single image or (n,c,h,w).
pub fn predict<S: Scalar>(
    spec: &BackboneSpec,
    params: &ParamSet<S>,
    images: &Tensor<S>,
) -> Result<Vec<S>> {
    let (batch, bound);
    let single_shape = [spec.input_channels, spec.input_hw, spec.input_hw];
    if images.shape() == single_shape {
        batch = 1;
        bound = Tensor::new(
            &[1, spec.input_channels, spec.input_hw, spec.input_hw],
            images.data().to_vec(),
        )?;
    } else if images.shape().len() == 4 && images.shape()[1..] == single_shape {
        batch = images.shape()[0];
        bound = images.clone();
    } else {
        return Err(Error::InvalidArgument(format!(
            "image shape {:?} does not match backbone input {:?}",
            images.shape(),
            single_shape
        )));
    }
    let mut mg = build_predict_graph(spec, params, batch)?;
    mg.graph.forward(&[("images", &bound)])?;
    Ok(mg.graph.value(mg.scores)?.data().to_vec())
}

/// Mean squared error between two equal-length score lists.
pub fn loss<S: Scalar>(predictions: &[S], targets: &[S]) -> Result<S> {
    if predictions.is_empty() {
        return Err(Error::InsufficientData("loss over an empty batch".into()));
    }
    if predictions.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let inv = S::one() / S::from_usize(predictions.len());
    let mut acc = S::zero();
    for (&p, &t) in predictions.iter().zip(targets) {
        let d = p - t;
        acc += d * d;
    }
    Ok(acc * inv)
}
