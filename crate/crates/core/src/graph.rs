//! Re-runnable reverse-mode differentiation graph.
//!
//! Shapes are inferred and checked when nodes are added, so malformed wiring
//! fails at build time with the offending node named. `forward` binds fresh
//! input tensors and re-executes the whole graph, keeping every activation;
//! `backward` then walks the node list in reverse and accumulates gradients
//! for all parameters. Parameter values live inside the graph and may be
//! mutated in place between runs (this is what the optimizers do).

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op<S: Scalar> {
    Input,
    Param,
    MatMul(NodeId, NodeId),
    Conv2d { x: NodeId, w: NodeId, stride: usize, padding: usize },
    BiasAdd(NodeId, NodeId),
    Relu(NodeId),
    GlobalAvgPool(NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, S),
    Sum(NodeId),
    MseLoss { pred: NodeId, target: NodeId },
}

#[derive(Debug)]
struct Node<S: Scalar> {
    op: Op<S>,
    shape: Vec<usize>,
    name: String,
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    values: Vec<Tensor<S>>,
    grads: Vec<Vec<S>>,
    params: Vec<NodeId>,
    param_index: HashMap<String, NodeId>,
    input_index: HashMap<String, NodeId>,
    bound: Vec<bool>,
    values_valid: bool,
    grads_valid: bool,
    fault_node: Option<NodeId>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            params: Vec::new(),
            param_index: HashMap::new(),
            input_index: HashMap::new(),
            bound: Vec::new(),
            values_valid: false,
            grads_valid: false,
            fault_node: None,
        }
    }

    fn push(&mut self, op: Op<S>, shape: Vec<usize>, name: String) -> NodeId {
        let id = self.nodes.len();
        self.values.push(Tensor::zeros(&shape));
        self.grads.push(Vec::new());
        self.bound.push(false);
        self.nodes.push(Node { op, shape, name });
        self.values_valid = false;
        self.grads_valid = false;
        id
    }

    fn check_node(&self, id: NodeId, ctx: &str) -> Result<()> {
        if id >= self.nodes.len() {
            return Err(Error::GraphState(format!("{ctx}: unknown node id {id}")));
        }
        Ok(())
    }

    fn shape_err(&self, name: &str, detail: String) -> Error {
        Error::ShapeMismatch { node: name.to_string(), detail }
    }

    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        if self.input_index.contains_key(name) || self.param_index.contains_key(name) {
            return Err(Error::GraphState(format!("duplicate node name `{name}`")));
        }
        let id = self.push(Op::Input, shape.to_vec(), name.to_string());
        self.input_index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn param(&mut self, name: &str, init: Tensor<S>) -> Result<NodeId> {
        if self.input_index.contains_key(name) || self.param_index.contains_key(name) {
            return Err(Error::GraphState(format!("duplicate node name `{name}`")));
        }
        let shape = init.shape().to_vec();
        let id = self.push(Op::Param, shape, name.to_string());
        self.values[id] = init;
        self.param_index.insert(name.to_string(), id);
        self.params.push(id);
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_node(a, "matmul")?;
        self.check_node(b, "matmul")?;
        let name = format!("matmul_{}", self.nodes.len());
        let (sa, sb) = (&self.nodes[a].shape, &self.nodes[b].shape);
        if sa.len() != 2 || sb.len() != 2 {
            return Err(self.shape_err(&name, format!("operands must be rank 2, got {sa:?} and {sb:?}")));
        }
        if sa[1] != sb[0] {
            return Err(self.shape_err(&name, format!("inner dimensions differ: {sa:?} vs {sb:?}")));
        }
        let shape = vec![sa[0], sb[1]];
        Ok(self.push(Op::MatMul(a, b), shape, name))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, padding: usize) -> Result<NodeId> {
        self.check_node(x, "conv2d")?;
        self.check_node(w, "conv2d")?;
        let name = format!("conv2d_{}", self.nodes.len());
        let (sx, sw) = (&self.nodes[x].shape, &self.nodes[w].shape);
        if sx.len() != 4 || sw.len() != 4 {
            return Err(self.shape_err(&name, format!("input and weight must be rank 4, got {sx:?} and {sw:?}")));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument(format!("{name}: stride must be >= 1")));
        }
        let (n, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (oc, ic, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
        if ic != c {
            return Err(self.shape_err(&name, format!("input has {c} channels but weight expects {ic}")));
        }
        if h + 2 * padding < kh || wd + 2 * padding < kw {
            return Err(self.shape_err(&name, format!("kernel {kh}x{kw} larger than padded input {h}x{wd}+{padding}")));
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (wd + 2 * padding - kw) / stride + 1;
        Ok(self.push(Op::Conv2d { x, w, stride, padding }, vec![n, oc, oh, ow], name))
    }

    pub fn bias_add(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_node(x, "bias_add")?;
        self.check_node(b, "bias_add")?;
        let name = format!("bias_add_{}", self.nodes.len());
        let (sx, sb) = (&self.nodes[x].shape, &self.nodes[b].shape);
        if sb.len() != 1 {
            return Err(self.shape_err(&name, format!("bias must be rank 1, got {sb:?}")));
        }
        let features = match sx.len() {
            4 => sx[1],
            2 => sx[1],
            _ => {
                return Err(self.shape_err(&name, format!("input must be rank 2 or 4, got {sx:?}")));
            }
        };
        if sb[0] != features {
            return Err(self.shape_err(&name, format!("bias has {} entries for {} features", sb[0], features)));
        }
        let shape = sx.clone();
        Ok(self.push(Op::BiasAdd(x, b), shape, name))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_node(x, "relu")?;
        let name = format!("relu_{}", self.nodes.len());
        let shape = self.nodes[x].shape.clone();
        Ok(self.push(Op::Relu(x), shape, name))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_node(x, "global_avg_pool")?;
        let name = format!("global_avg_pool_{}", self.nodes.len());
        let sx = &self.nodes[x].shape;
        if sx.len() != 4 {
            return Err(self.shape_err(&name, format!("input must be rank 4, got {sx:?}")));
        }
        let shape = vec![sx[0], sx[1]];
        Ok(self.push(Op::GlobalAvgPool(x), shape, name))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_node(a, "add")?;
        self.check_node(b, "add")?;
        let name = format!("add_{}", self.nodes.len());
        let (sa, sb) = (&self.nodes[a].shape, &self.nodes[b].shape);
        if sa != sb {
            return Err(self.shape_err(&name, format!("operand shapes differ: {sa:?} vs {sb:?}")));
        }
        let shape = sa.clone();
        Ok(self.push(Op::Add(a, b), shape, name))
    }

    pub fn scale(&mut self, x: NodeId, factor: S) -> Result<NodeId> {
        self.check_node(x, "scale")?;
        let name = format!("scale_{}", self.nodes.len());
        let shape = self.nodes[x].shape.clone();
        Ok(self.push(Op::Scale(x, factor), shape, name))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_node(x, "sum")?;
        let name = format!("sum_{}", self.nodes.len());
        Ok(self.push(Op::Sum(x), vec![], name))
    }

    /// Mean squared error over all elements of `pred` vs `target`.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.check_node(pred, "mse_loss")?;
        self.check_node(target, "mse_loss")?;
        let name = format!("mse_loss_{}", self.nodes.len());
        let (sp, st) = (&self.nodes[pred].shape, &self.nodes[target].shape);
        if sp != st {
            return Err(self.shape_err(&name, format!("prediction {sp:?} vs target {st:?}")));
        }
        if sp.iter().product::<usize>() == 0 {
            return Err(self.shape_err(&name, "empty tensors".to_string()));
        }
        Ok(self.push(Op::MseLoss { pred, target }, vec![], name))
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.nodes[id].name
    }

    pub fn node_shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|&id| self.nodes[id].name.clone()).collect()
    }

    /// Bind the given inputs and execute every node in order. All inputs
    /// must be bound (now or on an earlier call); activations are retained
    /// for `backward` and for `value`.
    pub fn forward(&mut self, bindings: &[(&str, &Tensor<S>)]) -> Result<()> {
        self.values_valid = false;
        self.grads_valid = false;
        for (name, tensor) in bindings {
            let &id = self
                .input_index
                .get(*name)
                .ok_or_else(|| Error::GraphState(format!("no input named `{name}`")))?;
            if tensor.shape() != self.nodes[id].shape.as_slice() {
                return Err(self.shape_err(
                    name,
                    format!("bound tensor has shape {:?}, expected {:?}", tensor.shape(), self.nodes[id].shape),
                ));
            }
            self.values[id] = (*tensor).clone();
            self.bound[id] = true;
        }
        for &id in self.input_index.values() {
            if !self.bound[id] {
                return Err(Error::GraphState(format!(
                    "input `{}` was never bound",
                    self.nodes[id].name
                )));
            }
        }
        for id in 0..self.nodes.len() {
            self.eval_node(id)?;
            if !self.values[id].is_finite() {
                return Err(Error::NonFinite { node: self.nodes[id].name.clone() });
            }
        }
        self.values_valid = true;
        self.grads_valid = false;
        Ok(())
    }

    fn eval_node(&mut self, id: NodeId) -> Result<()> {
        // Values are stored in a parallel vec; split off the output slot to
        // borrow operand values immutably while writing the result.
        let op = self.nodes[id].op.clone();
        match op {
            Op::Input | Op::Param => Ok(()),
            Op::MatMul(a, b) => {
                let (m, k) = (self.values[a].shape()[0], self.values[a].shape()[1]);
                let n = self.values[b].shape()[1];
                let mut out = vec![S::zero(); m * n];
                kernels::matmul_acc(self.values[a].data(), self.values[b].data(), m, k, n, &mut out);
                self.values[id] = Tensor::new(&[m, n], out)?;
                Ok(())
            }
            Op::Conv2d { x, w, stride, padding } => {
                let sx = self.values[x].shape().to_vec();
                let sw = self.values[w].shape().to_vec();
                let (nb, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
                let (oc, _, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
                let (oh, ow) = {
                    let s = &self.nodes[id].shape;
                    (s[2], s[3])
                };
                let ckk = c * kh * kw;
                let ohow = oh * ow;
                let mut out = vec![S::zero(); nb * oc * ohow];
                let mut col_t = vec![S::zero(); ohow * ckk];
                let mut y_t = vec![S::zero(); ohow * oc];
                // y^T = col^T . w^T so the matmul's inner loop runs over
                // output channels, which stay wide even when oh*ow doesn't.
                let mut w_t = vec![S::zero(); ckk * oc];
                kernels::transpose(self.values[w].data(), oc, ckk, &mut w_t);
                for img in 0..nb {
                    let xi = &self.values[x].data()[img * c * h * wd..(img + 1) * c * h * wd];
                    kernels::im2col_t(xi, c, h, wd, kh, kw, stride, padding, oh, ow, &mut col_t);
                    for v in y_t.iter_mut() {
                        *v = S::zero();
                    }
                    kernels::matmul_acc(&col_t, &w_t, ohow, ckk, oc, &mut y_t);
                    let oi = &mut out[img * oc * ohow..(img + 1) * oc * ohow];
                    kernels::transpose(&y_t, ohow, oc, oi);
                }
                self.values[id] = Tensor::new(&[nb, oc, oh, ow], out)?;
                Ok(())
            }
            Op::BiasAdd(x, b) => {
                let sx = self.values[x].shape().to_vec();
                let bias = self.values[b].data().to_vec();
                let mut out = self.values[x].data().to_vec();
                if sx.len() == 4 {
                    let (nb, c, hw) = (sx[0], sx[1], sx[2] * sx[3]);
                    for img in 0..nb {
                        for ci in 0..c {
                            let base = (img * c + ci) * hw;
                            let bv = bias[ci];
                            for v in &mut out[base..base + hw] {
                                *v += bv;
                            }
                        }
                    }
                } else {
                    let (nb, f) = (sx[0], sx[1]);
                    for img in 0..nb {
                        for (v, &bv) in out[img * f..(img + 1) * f].iter_mut().zip(&bias) {
                            *v += bv;
                        }
                    }
                }
                self.values[id] = Tensor::new(&sx, out)?;
                Ok(())
            }
            Op::Relu(x) => {
                self.values[id] = self.values[x].map(|v| if v > S::zero() { v } else { S::zero() });
                Ok(())
            }
            Op::GlobalAvgPool(x) => {
                let sx = self.values[x].shape().to_vec();
                let (nb, c, hw) = (sx[0], sx[1], sx[2] * sx[3]);
                let inv = S::one() / S::from_usize(hw);
                let mut out = vec![S::zero(); nb * c];
                let data = self.values[x].data();
                for (slot, chunk) in out.iter_mut().zip(data.chunks_exact(hw)) {
                    let mut acc = S::zero();
                    for &v in chunk {
                        acc += v;
                    }
                    *slot = acc * inv;
                }
                self.values[id] = Tensor::new(&[nb, c], out)?;
                Ok(())
            }
            Op::Add(a, b) => {
                let mut out = self.values[a].data().to_vec();
                for (v, &bv) in out.iter_mut().zip(self.values[b].data()) {
                    *v += bv;
                }
                self.values[id] = Tensor::new(&self.nodes[id].shape.clone(), out)?;
                Ok(())
            }
            Op::Scale(x, factor) => {
                self.values[id] = self.values[x].map(|v| v * factor);
                Ok(())
            }
            Op::Sum(x) => {
                let mut acc = S::zero();
                for &v in self.values[x].data() {
                    acc += v;
                }
                self.values[id] = Tensor::scalar(acc);
                Ok(())
            }
            Op::MseLoss { pred, target } => {
                let p = self.values[pred].data();
                let t = self.values[target].data();
                let inv = S::one() / S::from_usize(p.len());
                let mut acc = S::zero();
                for (&pv, &tv) in p.iter().zip(t) {
                    let d = pv - tv;
                    acc += d * d;
                }
                self.values[id] = Tensor::scalar(acc * inv);
                Ok(())
            }
        }
    }

    /// Activation of a node from the most recent `forward`.
    pub fn value(&self, id: NodeId) -> Result<&Tensor<S>> {
        if !self.values_valid {
            return Err(Error::GraphState("no valid forward pass; call forward first".to_string()));
        }
        self.check_node(id, "value")?;
        Ok(&self.values[id])
    }

    /// Reverse sweep from a scalar output; fills gradient buffers for every
    /// node at or below `output`.
    pub fn backward(&mut self, output: NodeId) -> Result<()> {
        self.check_node(output, "backward")?;
        if !self.values_valid {
            return Err(Error::GraphState("backward requires a completed forward pass".to_string()));
        }
        if self.nodes[output].shape.iter().product::<usize>() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar output, but `{}` has shape {:?}",
                self.nodes[output].name, self.nodes[output].shape
            )));
        }
        for id in 0..self.nodes.len() {
            let numel = self.values[id].numel();
            self.grads[id].clear();
            self.grads[id].resize(numel, S::zero());
        }
        self.grads[output][0] = S::one();
        for id in (0..=output).rev() {
            if let Some(fault) = self.fault_node {
                if fault == id {
                    for g in self.grads[id].iter_mut() {
                        *g = S::nan();
                    }
                }
            }
            self.propagate(id)?;
        }
        for &pid in &self.params {
            if self.grads[pid].iter().any(|g| !g.is_finite()) {
                self.grads_valid = false;
                return Err(Error::NonFiniteGrad { name: self.nodes[pid].name.clone() });
            }
        }
        self.grads_valid = true;
        Ok(())
    }

    fn propagate(&mut self, id: NodeId) -> Result<()> {
        let op = self.nodes[id].op.clone();
        match op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.values[a].shape()[0], self.values[a].shape()[1]);
                let n = self.values[b].shape()[1];
                let dc = std::mem::take(&mut self.grads[id]);
                {
                    let bv = self.values[b].data().to_vec();
                    kernels::matmul_a_bt_acc(&dc, &bv, m, n, k, &mut self.grads[a]);
                }
                {
                    let av = self.values[a].data().to_vec();
                    kernels::matmul_at_b_acc(&av, &dc, m, k, n, &mut self.grads[b]);
                }
                self.grads[id] = dc;
            }
            Op::Conv2d { x, w, stride, padding } => {
                let sx = self.values[x].shape().to_vec();
                let sw = self.values[w].shape().to_vec();
                let (nb, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
                let (oc, _, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
                let (oh, ow) = (self.nodes[id].shape[2], self.nodes[id].shape[3]);
                let ckk = c * kh * kw;
                let ohow = oh * ow;
                let dy = std::mem::take(&mut self.grads[id]);
                let wv = self.values[w].data().to_vec();
                let mut col_t = vec![S::zero(); ohow * ckk];
                let mut dy_t = vec![S::zero(); ohow * oc];
                let mut dcol_t = vec![S::zero(); ohow * ckk];
                for img in 0..nb {
                    let dyi = &dy[img * oc * ohow..(img + 1) * oc * ohow];
                    {
                        let xi = &self.values[x].data()[img * c * h * wd..(img + 1) * c * h * wd];
                        kernels::im2col_t(xi, c, h, wd, kh, kw, stride, padding, oh, ow, &mut col_t);
                    }
                    // dW += dY . col; both operands already have the wide
                    // c*kh*kw dimension innermost.
                    kernels::matmul_acc(dyi, &col_t, oc, ohow, ckk, &mut self.grads[w]);
                    kernels::transpose(dyi, oc, ohow, &mut dy_t);
                    for v in dcol_t.iter_mut() {
                        *v = S::zero();
                    }
                    // dcol^T = dY^T . W
                    kernels::matmul_acc(&dy_t, &wv, ohow, oc, ckk, &mut dcol_t);
                    let dxi = &mut self.grads[x][img * c * h * wd..(img + 1) * c * h * wd];
                    kernels::col2im_t_acc(&dcol_t, c, h, wd, kh, kw, stride, padding, oh, ow, dxi);
                }
                self.grads[id] = dy;
            }
            Op::BiasAdd(x, b) => {
                let sx = self.values[x].shape().to_vec();
                let dy = std::mem::take(&mut self.grads[id]);
                for (g, &d) in self.grads[x].iter_mut().zip(&dy) {
                    *g += d;
                }
                if sx.len() == 4 {
                    let (nb, c, hw) = (sx[0], sx[1], sx[2] * sx[3]);
                    for img in 0..nb {
                        for ci in 0..c {
                            let base = (img * c + ci) * hw;
                            let mut acc = S::zero();
                            for &d in &dy[base..base + hw] {
                                acc += d;
                            }
                            self.grads[b][ci] += acc;
                        }
                    }
                } else {
                    let (nb, f) = (sx[0], sx[1]);
                    for img in 0..nb {
                        for (g, &d) in self.grads[b].iter_mut().zip(&dy[img * f..(img + 1) * f]) {
                            *g += d;
                        }
                    }
                }
                self.grads[id] = dy;
            }
            Op::Relu(x) => {
                let dy = std::mem::take(&mut self.grads[id]);
                let xv = self.values[x].data();
                for ((g, &d), &v) in self.grads[x].iter_mut().zip(&dy).zip(xv) {
                    if v > S::zero() {
                        *g += d;
                    }
                }
                self.grads[id] = dy;
            }
            Op::GlobalAvgPool(x) => {
                let sx = self.values[x].shape().to_vec();
                let hw = sx[2] * sx[3];
                let inv = S::one() / S::from_usize(hw);
                let dy = std::mem::take(&mut self.grads[id]);
                for (chunk, &d) in self.grads[x].chunks_exact_mut(hw).zip(&dy) {
                    let dv = d * inv;
                    for g in chunk {
                        *g += dv;
                    }
                }
                self.grads[id] = dy;
            }
            Op::Add(a, b) => {
                let dy = std::mem::take(&mut self.grads[id]);
                for (g, &d) in self.grads[a].iter_mut().zip(&dy) {
                    *g += d;
                }
                for (g, &d) in self.grads[b].iter_mut().zip(&dy) {
                    *g += d;
                }
                self.grads[id] = dy;
            }
            Op::Scale(x, factor) => {
                let dy = std::mem::take(&mut self.grads[id]);
                for (g, &d) in self.grads[x].iter_mut().zip(&dy) {
                    *g += d * factor;
                }
                self.grads[id] = dy;
            }
            Op::Sum(x) => {
                let d = self.grads[id][0];
                for g in self.grads[x].iter_mut() {
                    *g += d;
                }
            }
            Op::MseLoss { pred, target } => {
                let d = self.grads[id][0];
                let p = self.values[pred].data().to_vec();
                let t = self.values[target].data().to_vec();
                let two_inv = S::from_f64(2.0) / S::from_usize(p.len());
                for ((g, &pv), &tv) in self.grads[pred].iter_mut().zip(&p).zip(&t) {
                    *g += d * two_inv * (pv - tv);
                }
                for ((g, &pv), &tv) in self.grads[target].iter_mut().zip(&p).zip(&t) {
                    *g += d * two_inv * (tv - pv);
                }
            }
        }
        Ok(())
    }

    /// Gradient of the last `backward` output with respect to one parameter.
    pub fn param_grad(&self, name: &str) -> Result<Tensor<S>> {
        if !self.grads_valid {
            return Err(Error::GraphState("no valid backward pass; call backward first".to_string()));
        }
        let &id = self
            .param_index
            .get(name)
            .ok_or_else(|| Error::GraphState(format!("no parameter named `{name}`")))?;
        Tensor::new(&self.nodes[id].shape, self.grads[id].clone())
    }

    /// All parameter gradients in registration order.
    pub fn gradients(&self) -> Result<Vec<(String, Tensor<S>)>> {
        if !self.grads_valid {
            return Err(Error::GraphState("no valid backward pass; call backward first".to_string()));
        }
        self.params
            .iter()
            .map(|&id| {
                Ok((
                    self.nodes[id].name.clone(),
                    Tensor::new(&self.nodes[id].shape, self.grads[id].clone())?,
                ))
            })
            .collect()
    }

    /// Gradient buffer of any node (inputs included) after `backward`.
    pub fn node_grad(&self, id: NodeId) -> Result<Tensor<S>> {
        if !self.grads_valid {
            return Err(Error::GraphState("no valid backward pass; call backward first".to_string()));
        }
        self.check_node(id, "node_grad")?;
        Tensor::new(&self.nodes[id].shape, self.grads[id].clone())
    }

    /// Current value of a parameter.
    pub fn param_value(&self, name: &str) -> Result<&Tensor<S>> {
        let &id = self
            .param_index
            .get(name)
            .ok_or_else(|| Error::GraphState(format!("no parameter named `{name}`")))?;
        Ok(&self.values[id])
    }

    /// In-place mutable access to a parameter's storage. Invalidates cached
    /// activations so a stale backward cannot follow.
    pub fn param_data_mut(&mut self, name: &str) -> Result<&mut [S]> {
        let &id = self
            .param_index
            .get(name)
            .ok_or_else(|| Error::GraphState(format!("no parameter named `{name}`")))?;
        self.values_valid = false;
        self.grads_valid = false;
        Ok(self.values[id].data_mut())
    }

    /// Poison the gradient flowing out of `node` with NaN on the next
    /// backward pass. Test hook for the non-finite-gradient detector.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, node: NodeId) {
        self.fault_node = Some(node);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t<S: Scalar>(shape: &[usize], vals: &[f64]) -> Tensor<S> {
        Tensor::new(shape, vals.iter().map(|&v| S::from_f64(v)).collect()).unwrap()
    }

    #[test]
    fn two_layer_linear_forward_matches_hand_computation() {
        // x=[1,2]; W1=[[1,-1],[2,0]] (row i = input i) -> h=[5,-1];
        // W2=[[3],[1]] -> y=14
        let mut g = Graph::<f64>::new();
        let x = g.input("x", &[1, 2]).unwrap();
        let w1 = g.param("w1", t(&[2, 2], &[1.0, -1.0, 2.0, 0.0])).unwrap();
        let h = g.matmul(x, w1).unwrap();
        let w2 = g.param("w2", t(&[2, 1], &[3.0, 1.0])).unwrap();
        let y = g.matmul(h, w2).unwrap();
        g.forward(&[("x", &t(&[1, 2], &[1.0, 2.0]))]).unwrap();
        assert_eq!(g.value(h).unwrap().data(), &[5.0, -1.0]);
        assert_eq!(g.value(y).unwrap().item().unwrap(), 14.0);
    }

    #[test]
    fn mse_gradient_matches_hand_computation() {
        // pred = w*x with w=2, x=3; target 5 -> loss (6-5)^2 = 1; dL/dw = 2*1*3 = 6
        let mut g = Graph::<f64>::new();
        let x = g.input("x", &[1, 1]).unwrap();
        let w = g.param("w", t(&[1, 1], &[2.0])).unwrap();
        let pred = g.matmul(x, w).unwrap();
        let target = g.input("t", &[1, 1]).unwrap();
        let loss = g.mse_loss(pred, target).unwrap();
        g.forward(&[("x", &t(&[1, 1], &[3.0])), ("t", &t(&[1, 1], &[5.0]))]).unwrap();
        assert_eq!(g.value(loss).unwrap().item().unwrap(), 1.0);
        g.backward(loss).unwrap();
        assert_eq!(g.param_grad("w").unwrap().data(), &[6.0]);
    }

    #[test]
    fn mean_form_loss_value() {
        // mse([1,3],[0,1]) = (1+4)/2 = 2.5
        let mut g = Graph::<f64>::new();
        let p = g.input("p", &[2, 1]).unwrap();
        let t_in = g.input("t", &[2, 1]).unwrap();
        let loss = g.mse_loss(p, t_in).unwrap();
        g.forward(&[("p", &t(&[2, 1], &[1.0, 3.0])), ("t", &t(&[2, 1], &[0.0, 1.0]))]).unwrap();
        assert_eq!(g.value(loss).unwrap().item().unwrap(), 2.5);
    }

    #[test]
    fn build_time_shape_mismatch_names_offending_node() {
        let mut g = Graph::<f32>::new();
        let a = g.input("a", &[2, 3]).unwrap();
        let b = g.input("b", &[2, 3]).unwrap();
        let err = g.matmul(a, b).unwrap_err();
        match err {
            Error::ShapeMismatch { node, .. } => assert!(node.starts_with("matmul_")),
            other => panic!("expected ShapeMismatch, got {other:?}"),
        }
    }

    #[test]
    fn forward_rejects_unbound_input() {
        let mut g = Graph::<f32>::new();
        let a = g.input("a", &[1]).unwrap();
        let b = g.input("b", &[1]).unwrap();
        let _ = g.add(a, b).unwrap();
        let one = Tensor::full(&[1], 1.0f32);
        let err = g.forward(&[("a", &one)]).unwrap_err();
        assert!(matches!(err, Error::GraphState(ref m) if m.contains('b')));
    }

    #[test]
    fn forward_detects_non_finite_activation() {
        let mut g = Graph::<f32>::new();
        let a = g.input("a", &[1]).unwrap();
        let s = g.scale(a, f32::MAX).unwrap();
        let _ = g.scale(s, f32::MAX).unwrap();
        let big = Tensor::full(&[1], f32::MAX);
        let err = g.forward(&[("a", &big)]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "got {err:?}");
    }

    #[test]
    fn backward_requires_scalar_output() {
        let mut g = Graph::<f32>::new();
        let a = g.input("a", &[2]).unwrap();
        let r = g.relu(a).unwrap();
        let two = Tensor::full(&[2], 1.0f32);
        g.forward(&[("a", &two)]).unwrap();
        assert!(matches!(g.backward(r), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn backward_before_forward_is_an_error() {
        let mut g = Graph::<f32>::new();
        let a = g.input("a", &[1]).unwrap();
        let s = g.sum(a).unwrap();
        assert!(matches!(g.backward(s), Err(Error::GraphState(_))));
    }

    #[test]
    fn param_mutation_invalidates_activations() {
        let mut g = Graph::<f64>::new();
        let w = g.param("w", Tensor::scalar(2.0)).unwrap();
        let s = g.sum(w).unwrap();
        g.forward(&[]).unwrap();
        assert_eq!(g.value(s).unwrap().item().unwrap(), 2.0);
        g.param_data_mut("w").unwrap()[0] = 3.0;
        assert!(g.value(s).is_err());
        assert!(g.backward(s).is_err());
        g.forward(&[]).unwrap();
        assert_eq!(g.value(s).unwrap().item().unwrap(), 3.0);
    }

    #[test]
    fn rerun_with_new_bindings_updates_values() {
        let mut g = Graph::<f64>::new();
        let x = g.input("x", &[1]).unwrap();
        let s = g.scale(x, 2.0).unwrap();
        let out = g.sum(s).unwrap();
        g.forward(&[("x", &Tensor::full(&[1], 3.0))]).unwrap();
        assert_eq!(g.value(out).unwrap().item().unwrap(), 6.0);
        g.forward(&[("x", &Tensor::full(&[1], -1.0))]).unwrap();
        assert_eq!(g.value(out).unwrap().item().unwrap(), -2.0);
    }

    #[test]
    fn gradients_accumulate_across_consumers() {
        // y = sum(x) + sum(x) -> dy/dx_i = 2
        let mut g = Graph::<f64>::new();
        let x = g.param("x", Tensor::full(&[3], 1.0)).unwrap();
        let s1 = g.sum(x).unwrap();
        let s2 = g.sum(x).unwrap();
        let s1t = g.add(s1, s2).unwrap();
        g.forward(&[]).unwrap();
        g.backward(s1t).unwrap();
        assert_eq!(g.param_grad("x").unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn injected_fault_surfaces_as_non_finite_gradient() {
        let mut g = Graph::<f32>::new();
        let w = g.param("w", Tensor::full(&[2], 1.0f32)).unwrap();
        let r = g.relu(w).unwrap();
        let s = g.sum(r).unwrap();
        g.forward(&[]).unwrap();
        g.inject_backward_fault(r);
        let err = g.backward(s).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGrad { ref name } if name == "w"), "got {err:?}");
    }

    #[test]
    fn conv_stride_and_padding_shapes() {
        let mut g = Graph::<f32>::new();
        let x = g.input("x", &[2, 1, 32, 32]).unwrap();
        let w = g.param("w", Tensor::zeros(&[16, 1, 3, 3])).unwrap();
        let y = g.conv2d(x, w, 2, 0).unwrap();
        assert_eq!(g.node_shape(y), &[2, 16, 15, 15]);
        let mut g2 = Graph::<f32>::new();
        let x2 = g2.input("x", &[1, 3, 8, 8]).unwrap();
        let w2 = g2.param("w", Tensor::zeros(&[4, 3, 3, 3])).unwrap();
        let y2 = g2.conv2d(x2, w2, 1, 1).unwrap();
        assert_eq!(g2.node_shape(y2), &[1, 4, 8, 8]);
    }

    #[test]
    fn conv_channel_mismatch_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.input("x", &[1, 2, 8, 8]).unwrap();
        let w = g.param("w", Tensor::zeros(&[4, 3, 3, 3])).unwrap();
        assert!(matches!(g.conv2d(x, w, 1, 0), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn const_input_conv_chain_matches_hand_computation() {
        // const 0.5 image, 1x1 conv W=2 b=0.1 -> 1.1 everywhere; GAP -> 1.1;
        // fc W=3 b=-0.3 -> 3.0; relu; head W=0.5 b=0.2 -> 1.7
        let mut g = Graph::<f64>::new();
        let x = g.input("x", &[1, 1, 4, 4]).unwrap();
        let w = g.param("cw", Tensor::full(&[1, 1, 1, 1], 2.0)).unwrap();
        let cb = g.param("cb", Tensor::full(&[1], 0.1)).unwrap();
        let conv = g.conv2d(x, w, 1, 0).unwrap();
        let conv = g.bias_add(conv, cb).unwrap();
        let pooled = g.global_avg_pool(conv).unwrap();
        let fw = g.param("fw", Tensor::full(&[1, 1], 3.0)).unwrap();
        let fb = g.param("fb", Tensor::full(&[1], -0.3)).unwrap();
        let fc = g.matmul(pooled, fw).unwrap();
        let fc = g.bias_add(fc, fb).unwrap();
        let fc = g.relu(fc).unwrap();
        let hw = g.param("hw", Tensor::full(&[1, 1], 0.5)).unwrap();
        let hb = g.param("hb", Tensor::full(&[1], 0.2)).unwrap();
        let out = g.matmul(fc, hw).unwrap();
        let out = g.bias_add(out, hb).unwrap();
        g.forward(&[("x", &Tensor::full(&[1, 1, 4, 4], 0.5))]).unwrap();
        let y = g.value(out).unwrap().item().unwrap();
        assert!((y - 1.7).abs() < 1e-12, "got {y}");
    }
}
