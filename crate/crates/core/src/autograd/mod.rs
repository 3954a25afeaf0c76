//! Reverse-mode differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and `backward` is a single reverse sweep.

mod kernels;

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, shape_err, Result};
use crate::rng;
use crate::tensor::{window_out, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl Default for Conv3dSpec {
    fn default() -> Self {
        Self {
            stride: [1; 3],
            pad: [0; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool3dSpec {
    pub mode: PoolMode,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

/// User-defined primitive. The backward returns one optional gradient per input.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &[f64]) -> Vec<Option<Vec<f64>>>;
}

#[derive(Clone)]
pub enum Primitive {
    /// inputs: x (B,Ci,T,H,W), weight (Co,Ci,kt,kh,kw), optional bias (Co)
    Conv3d(Conv3dSpec),
    Pool3d(Pool3dSpec),
    /// inputs: x (B,in), weight (out,in), optional bias (out)
    Linear,
    Relu,
    /// 2·σ(x) − 1, strictly inside (−1, 1)
    ScaledSigmoid,
    Add,
    /// Elementwise product; the second operand may broadcast along size-1 dims.
    Mul,
    ConcatChannels,
    /// (B,C,...) -> (B,C)
    GlobalAvgPool,
    /// inputs: x (B,C,...), scale (C), shift (C)
    ChannelAffine,
    /// inputs: alpha (B) or (B,1), binary mask (B or 1, 1, T, H, W).
    /// Output (B,1,T,H,W) = (1+α)·M + (1−α)·(1−M). No gradient flows to the mask.
    WeightedMask,
    Sum,
    Scale(f64),
    /// inputs: logits (B,C); output: mean negative log-likelihood.
    SoftmaxCrossEntropy(Vec<usize>),
    Custom(Arc<dyn CustomOp>),
}

impl fmt::Debug for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Primitive::Conv3d(s) => write!(f, "Conv3d({s:?})"),
            Primitive::Pool3d(s) => write!(f, "Pool3d({s:?})"),
            Primitive::Linear => f.write_str("Linear"),
            Primitive::Relu => f.write_str("Relu"),
            Primitive::ScaledSigmoid => f.write_str("ScaledSigmoid"),
            Primitive::Add => f.write_str("Add"),
            Primitive::Mul => f.write_str("Mul"),
            Primitive::ConcatChannels => f.write_str("ConcatChannels"),
            Primitive::GlobalAvgPool => f.write_str("GlobalAvgPool"),
            Primitive::ChannelAffine => f.write_str("ChannelAffine"),
            Primitive::WeightedMask => f.write_str("WeightedMask"),
            Primitive::Sum => f.write_str("Sum"),
            Primitive::Scale(c) => write!(f, "Scale({c})"),
            Primitive::SoftmaxCrossEntropy(t) => write!(f, "SoftmaxCrossEntropy({} targets)", t.len()),
            Primitive::Custom(op) => write!(f, "Custom({})", op.name()),
        }
    }
}

#[derive(Debug)]
enum Saved {
    None,
    Geom(kernels::Geom),
    MaxPool(Vec<usize>),
    Probs(Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Option<Primitive>,
    inputs: Vec<Var>,
    requires_grad: bool,
    saved: Saved,
}

/// Records primitive applications and replays them in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Accumulated gradients for leaf nodes, persisted across `backward` calls.
    leaf_grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf. Its `requires_grad` flag decides whether gradients are kept.
    pub fn leaf(&mut self, mut t: Tensor) -> Var {
        let requires_grad = t.requires_grad;
        t.grad = None;
        self.push(t, None, Vec::new(), requires_grad, Saved::None)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated on a leaf by previous `backward` calls.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn zero_grads(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(
        &mut self,
        value: Tensor,
        op: Option<Primitive>,
        inputs: Vec<Var>,
        requires_grad: bool,
        saved: Saved,
    ) -> Var {
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
            saved,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `prim` on `inputs` and records the node.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        for v in inputs {
            if v.0 >= self.nodes.len() {
                return Err(invalid!("variable {} does not belong to this tape", v.0));
            }
        }
        let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let (value, saved) = forward(&prim, &vals)?;
        let requires_grad = match prim {
            Primitive::WeightedMask => self.nodes[inputs[0].0].requires_grad,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        Ok(self.push(value, Some(prim), inputs.to_vec(), requires_grad, saved))
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv3dSpec) -> Result<Var> {
        match b {
            Some(b) => self.apply(Primitive::Conv3d(spec), &[x, w, b]),
            None => self.apply(Primitive::Conv3d(spec), &[x, w]),
        }
    }

    pub fn pool3d(&mut self, x: Var, spec: Pool3dSpec) -> Result<Var> {
        self.apply(Primitive::Pool3d(spec), &[x])
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        match b {
            Some(b) => self.apply(Primitive::Linear, &[x, w, b]),
            None => self.apply(Primitive::Linear, &[x, w]),
        }
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[x])
    }

    pub fn scaled_sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::ScaledSigmoid, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        self.apply(Primitive::ConcatChannels, xs)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::GlobalAvgPool, &[x])
    }

    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        self.apply(Primitive::ChannelAffine, &[x, scale, shift])
    }

    pub fn weighted_mask(&mut self, alpha: Var, mask: Var) -> Result<Var> {
        self.apply(Primitive::WeightedMask, &[alpha, mask])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::Scale(c), &[x])
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        self.apply(Primitive::SoftmaxCrossEntropy(targets.to_vec()), &[logits])
    }

    /// Propagates d(loss)/d(node) to every leaf that requires a gradient.
    /// Leaf gradients accumulate across calls until [`Tape::zero_grads`].
    /// Fingerprint of every piecewise choice on the tape: the sign of each
    /// relu input and each max-pool winner. Two evaluations with equal
    /// fingerprints lie on the same smooth piece of the function.
    pub fn activation_pattern(&self) -> u64 {
        let mut h = 0u64;
        let mut feed = |x: u64| h = rng::mix(h, x);
        for node in &self.nodes {
            match (&node.op, &node.saved) {
                (Some(Primitive::Relu), _) => {
                    let x = &self.nodes[node.inputs[0].0].value;
                    for chunk in x.data().chunks(64) {
                        feed(
                            chunk
                                .iter()
                                .enumerate()
                                .fold(0u64, |m, (i, v)| m | (((*v > 0.0) as u64) << i)),
                        );
                    }
                }
                (_, Saved::MaxPool(arg)) => arg.iter().for_each(|&a| feed(a as u64)),
                _ => {}
            }
        }
        h
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| invalid!("loss variable {} is not on this tape", loss.0))?;
        if node.value.numel() != 1 {
            return Err(shape_err!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(op) = &node.op else {
                match &mut self.leaf_grads[idx] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
                continue;
            };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let input_grads = backward_rule(op, &inputs, &node.value, &node.saved, &g);
            for (v, ig) in node.inputs.iter().zip(input_grads) {
                let (Some(ig), true) = (ig, self.nodes[v.0].requires_grad) else {
                    continue;
                };
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(ig),
                }
            }
        }
        Ok(())
    }
}

fn dims5(t: &Tensor, what: &str) -> Result<[usize; 5]> {
    t.shape()
        .try_into()
        .map_err(|_| shape_err!("{what} must be 5-D (B,C,T,H,W), got {:?}", t.shape()))
}

fn window_geom(
    input: [usize; 5],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    out_ch: usize,
) -> Result<kernels::Geom> {
    const AXES: [&str; 3] = ["time", "height", "width"];
    let mut output = [0; 3];
    for d in 0..3 {
        output[d] = window_out(input[2 + d], kernel[d], stride[d], pad[d]).ok_or_else(|| {
            shape_err!(
                "{} dimension {} too small for kernel {} (stride {}, pad {})",
                AXES[d],
                input[2 + d],
                kernel[d],
                stride[d],
                pad[d]
            )
        })?;
    }
    Ok(kernels::Geom {
        batch: input[0],
        in_ch: input[1],
        input: [input[2], input[3], input[4]],
        out_ch,
        kernel,
        stride,
        pad,
        output,
    })
}

fn expect_arity(prim: &Primitive, got: usize, allowed: &[usize]) -> Result<()> {
    if allowed.contains(&got) {
        Ok(())
    } else {
        Err(invalid!("{prim:?} takes {allowed:?} inputs, got {got}"))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-major strides for `shape`.
fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Maps each flat index of `big` to the flat index of the broadcast operand.
fn broadcast_index(big: &[usize], small: &[usize]) -> Vec<usize> {
    let bs = strides(big);
    let ss = strides(small);
    let numel: usize = big.iter().product();
    (0..numel)
        .map(|flat| {
            let mut rem = flat;
            let mut idx = 0;
            for d in 0..big.len() {
                let coord = rem / bs[d];
                rem %= bs[d];
                if small[d] != 1 {
                    idx += coord * ss[d];
                }
            }
            idx
        })
        .collect()
}

fn forward(prim: &Primitive, x: &[&Tensor]) -> Result<(Tensor, Saved)> {
    let n = x.len();
    match prim {
        Primitive::Conv3d(spec) => {
            expect_arity(prim, n, &[2, 3])?;
            let xs = dims5(x[0], "conv3d input")?;
            let ws = dims5(x[1], "conv3d kernel")?;
            if ws[1] != xs[1] {
                return Err(shape_err!(
                    "conv3d channel dimension: kernel expects {} input channels, input has {}",
                    ws[1],
                    xs[1]
                ));
            }
            if n == 3 && x[2].shape() != [ws[0]] {
                return Err(shape_err!("conv3d bias shape {:?} must be [{}]", x[2].shape(), ws[0]));
            }
            let g = window_geom(xs, [ws[2], ws[3], ws[4]], spec.stride, spec.pad, ws[0])?;
            let out = kernels::conv3d_forward(x[0].data(), x[1].data(), x.get(2).map(|b| b.data()), &g);
            let shape = [g.batch, g.out_ch, g.output[0], g.output[1], g.output[2]];
            Ok((Tensor::new(&shape, out)?, Saved::Geom(g)))
        }
        Primitive::Pool3d(spec) => {
            expect_arity(prim, n, &[1])?;
            let xs = dims5(x[0], "pool3d input")?;
            if spec.kernel.iter().zip(&spec.pad).any(|(&k, &p)| k == 0 || p >= k) {
                return Err(invalid!("pool3d kernel {:?} with pad {:?}", spec.kernel, spec.pad));
            }
            let g = window_geom(xs, spec.kernel, spec.stride, spec.pad, xs[1])?;
            let shape = [g.batch, g.in_ch, g.output[0], g.output[1], g.output[2]];
            match spec.mode {
                PoolMode::Max => {
                    let (out, arg) = kernels::max_pool3d_forward(x[0].data(), &g);
                    Ok((Tensor::new(&shape, out)?, Saved::MaxPool(arg)))
                }
                PoolMode::Avg => {
                    let out = kernels::avg_pool3d_forward(x[0].data(), &g);
                    Ok((Tensor::new(&shape, out)?, Saved::Geom(g)))
                }
            }
        }
        Primitive::Linear => {
            expect_arity(prim, n, &[2, 3])?;
            let (xs, ws) = (x[0].shape(), x[1].shape());
            if xs.len() != 2 || ws.len() != 2 {
                return Err(shape_err!("linear expects 2-D input and weight, got {xs:?} and {ws:?}"));
            }
            let (b, fin, fout) = (xs[0], xs[1], ws[0]);
            if ws[1] != fin {
                return Err(shape_err!(
                    "linear feature dimension: weight expects {}, input has {}",
                    ws[1],
                    fin
                ));
            }
            if n == 3 && x[2].shape() != [fout] {
                return Err(shape_err!("linear bias shape {:?} must be [{}]", x[2].shape(), fout));
            }
            let (xd, wd) = (x[0].data(), x[1].data());
            let mut out = vec![0.0; b * fout];
            for i in 0..b {
                for o in 0..fout {
                    let mut acc = if n == 3 { x[2].data()[o] } else { 0.0 };
                    for k in 0..fin {
                        acc += xd[i * fin + k] * wd[o * fin + k];
                    }
                    out[i * fout + o] = acc;
                }
            }
            Ok((Tensor::new(&[b, fout], out)?, Saved::None))
        }
        Primitive::Relu => {
            expect_arity(prim, n, &[1])?;
            let out = x[0].data().iter().map(|&v| v.max(0.0)).collect();
            Ok((Tensor::new(x[0].shape(), out)?, Saved::None))
        }
        Primitive::ScaledSigmoid => {
            expect_arity(prim, n, &[1])?;
            let edge = 1.0 - f64::EPSILON;
            let out = x[0]
                .data()
                .iter()
                .map(|&v| (2.0 * sigmoid(v) - 1.0).clamp(-edge, edge))
                .collect();
            Ok((Tensor::new(x[0].shape(), out)?, Saved::None))
        }
        Primitive::Add => {
            expect_arity(prim, n, &[2])?;
            same_shape(x[0], x[1], "add")?;
            let out = x[0].data().iter().zip(x[1].data()).map(|(a, b)| a + b).collect();
            Ok((Tensor::new(x[0].shape(), out)?, Saved::None))
        }
        Primitive::Mul => {
            expect_arity(prim, n, &[2])?;
            let (a, b) = (x[0].shape(), x[1].shape());
            if a.len() != b.len() || a.iter().zip(b).any(|(&p, &q)| q != p && q != 1) {
                let dim = a.iter().zip(b).position(|(&p, &q)| q != p && q != 1);
                return Err(match dim {
                    Some(d) => shape_err!("mul dimension {d}: {} cannot broadcast to {}", b[d], a[d]),
                    None => shape_err!("mul rank mismatch: {a:?} vs {b:?}"),
                });
            }
            let map = broadcast_index(a, b);
            let (ad, bd) = (x[0].data(), x[1].data());
            let out = ad.iter().zip(&map).map(|(v, &j)| v * bd[j]).collect();
            Ok((Tensor::new(a, out)?, Saved::None))
        }
        Primitive::ConcatChannels => {
            if n == 0 {
                return Err(invalid!("concat_channels needs at least one input"));
            }
            let first = x[0].shape();
            if first.len() < 2 {
                return Err(shape_err!("concat_channels needs rank >= 2, got {first:?}"));
            }
            for t in &x[1..] {
                let s = t.shape();
                if s.len() != first.len() {
                    return Err(shape_err!("concat_channels rank mismatch: {first:?} vs {s:?}"));
                }
                if let Some(d) = (0..s.len()).find(|&d| d != 1 && s[d] != first[d]) {
                    return Err(shape_err!("concat_channels dimension {d}: {} vs {}", first[d], s[d]));
                }
            }
            let batch = first[0];
            let inner: usize = first[2..].iter().product();
            let total_c: usize = x.iter().map(|t| t.shape()[1]).sum();
            let mut out = Vec::with_capacity(batch * total_c * inner);
            for b in 0..batch {
                for t in x {
                    let c = t.shape()[1];
                    out.extend_from_slice(&t.data()[b * c * inner..(b + 1) * c * inner]);
                }
            }
            let mut shape = first.to_vec();
            shape[1] = total_c;
            Ok((Tensor::new(&shape, out)?, Saved::None))
        }
        Primitive::GlobalAvgPool => {
            expect_arity(prim, n, &[1])?;
            let s = x[0].shape();
            if s.len() < 3 {
                return Err(shape_err!("global_avg_pool needs rank >= 3, got {s:?}"));
            }
            let inner: usize = s[2..].iter().product();
            let out = x[0]
                .data()
                .chunks(inner)
                .map(|c| c.iter().sum::<f64>() / inner as f64)
                .collect();
            Ok((Tensor::new(&s[..2], out)?, Saved::None))
        }
        Primitive::ChannelAffine => {
            expect_arity(prim, n, &[3])?;
            let s = x[0].shape();
            if s.len() < 2 {
                return Err(shape_err!("channel_affine needs rank >= 2, got {s:?}"));
            }
            let c = s[1];
            if x[1].shape() != [c] || x[2].shape() != [c] {
                return Err(shape_err!(
                    "channel_affine channel dimension {c}: scale {:?}, shift {:?}",
                    x[1].shape(),
                    x[2].shape()
                ));
            }
            let inner: usize = s[2..].iter().product();
            let (sc, sh) = (x[1].data(), x[2].data());
            let out = x[0]
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let ch = (i / inner) % c;
                    v * sc[ch] + sh[ch]
                })
                .collect();
            Ok((Tensor::new(s, out)?, Saved::None))
        }
        Primitive::WeightedMask => {
            expect_arity(prim, n, &[2])?;
            let a = x[0];
            let batch = a.shape().first().copied().unwrap_or(1);
            if a.numel() != batch || !(a.rank() == 1 || a.shape() == [batch, 1]) {
                return Err(shape_err!(
                    "weighted_mask alpha must be (B) or (B,1), got {:?}",
                    a.shape()
                ));
            }
            let m = dims5(x[1], "weighted_mask mask")?;
            if m[1] != 1 || (m[0] != 1 && m[0] != batch) {
                return Err(shape_err!(
                    "weighted_mask mask batch/channel {:?} incompatible with batch {batch}",
                    &m[..2]
                ));
            }
            if let Some(&al) = a.data().iter().find(|v| v.abs() >= 1.0 || v.is_nan()) {
                return Err(invalid!("alpha must lie strictly inside (-1, 1), got {al}"));
            }
            if x[1].data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(invalid!("mask values must be exactly 0 or 1"));
            }
            let inner = m[2] * m[3] * m[4];
            let md = x[1].data();
            let mut out = Vec::with_capacity(batch * inner);
            for b in 0..batch {
                let al = a.data()[b];
                let mb = if m[0] == 1 { 0 } else { b };
                out.extend(
                    md[mb * inner..(mb + 1) * inner]
                        .iter()
                        .map(|&mv| (1.0 + al) * mv + (1.0 - al) * (1.0 - mv)),
                );
            }
            Ok((Tensor::new(&[batch, 1, m[2], m[3], m[4]], out)?, Saved::None))
        }
        Primitive::Sum => {
            expect_arity(prim, n, &[1])?;
            Ok((Tensor::scalar(x[0].data().iter().sum()), Saved::None))
        }
        Primitive::Scale(c) => {
            expect_arity(prim, n, &[1])?;
            let out = x[0].data().iter().map(|v| v * c).collect();
            Ok((Tensor::new(x[0].shape(), out)?, Saved::None))
        }
        Primitive::SoftmaxCrossEntropy(targets) => {
            expect_arity(prim, n, &[1])?;
            let s = x[0].shape();
            if s.len() != 2 {
                return Err(shape_err!("cross entropy expects (batch, classes) logits, got {s:?}"));
            }
            let (b, c) = (s[0], s[1]);
            if targets.len() != b {
                return Err(shape_err!(
                    "cross entropy batch dimension: {} logits rows, {} targets",
                    b,
                    targets.len()
                ));
            }
            if let Some(&t) = targets.iter().find(|&&t| t >= c) {
                return Err(invalid!("target class {t} out of range for {c} classes"));
            }
            let mut probs = vec![0.0; b * c];
            let mut loss = 0.0;
            for (i, row) in x[0].data().chunks(c).enumerate() {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let log_z = z.ln() + max;
                loss += log_z - row[targets[i]];
                for k in 0..c {
                    probs[i * c + k] = (row[k] - log_z).exp();
                }
            }
            Ok((Tensor::scalar(loss / b as f64), Saved::Probs(probs)))
        }
        Primitive::Custom(op) => Ok((op.forward(x)?, Saved::None)),
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() == b.shape() {
        return Ok(());
    }
    match a.shape().iter().zip(b.shape()).position(|(p, q)| p != q) {
        Some(d) if a.rank() == b.rank() => {
            Err(shape_err!("{what} dimension {d}: {} vs {}", a.shape()[d], b.shape()[d]))
        }
        _ => Err(shape_err!("{what} rank mismatch: {:?} vs {:?}", a.shape(), b.shape())),
    }
}

fn backward_rule(prim: &Primitive, x: &[&Tensor], out: &Tensor, saved: &Saved, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    match prim {
        Primitive::Conv3d(_) => {
            let Saved::Geom(geom) = saved else {
                unreachable!("conv3d saves geometry")
            };
            let (gx, gw, gb) = kernels::conv3d_backward(x[0].data(), x[1].data(), g, geom);
            let mut v = vec![Some(gx), Some(gw)];
            if x.len() == 3 {
                v.push(Some(gb));
            }
            v
        }
        Primitive::Pool3d(_) => match saved {
            Saved::MaxPool(arg) => {
                let mut gx = vec![0.0; x[0].numel()];
                for (&i, &gv) in arg.iter().zip(g) {
                    gx[i] += gv;
                }
                vec![Some(gx)]
            }
            Saved::Geom(geom) => vec![Some(kernels::avg_pool3d_backward(g, x[0].numel(), geom))],
            _ => unreachable!("pool3d saves geometry"),
        },
        Primitive::Linear => {
            let (b, fin) = (x[0].shape()[0], x[0].shape()[1]);
            let fout = x[1].shape()[0];
            let (xd, wd) = (x[0].data(), x[1].data());
            let mut gx = vec![0.0; b * fin];
            let mut gw = vec![0.0; fout * fin];
            let mut gb = vec![0.0; fout];
            for i in 0..b {
                for o in 0..fout {
                    let gv = g[i * fout + o];
                    gb[o] += gv;
                    for k in 0..fin {
                        gx[i * fin + k] += gv * wd[o * fin + k];
                        gw[o * fin + k] += gv * xd[i * fin + k];
                    }
                }
            }
            let mut v = vec![Some(gx), Some(gw)];
            if x.len() == 3 {
                v.push(Some(gb));
            }
            v
        }
        Primitive::Relu => {
            let gx = x[0]
                .data()
                .iter()
                .zip(g)
                .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                .collect();
            vec![Some(gx)]
        }
        Primitive::ScaledSigmoid => {
            let gx = x[0]
                .data()
                .iter()
                .zip(g)
                .map(|(&v, &gv)| {
                    let s = sigmoid(v);
                    2.0 * s * (1.0 - s) * gv
                })
                .collect();
            vec![Some(gx)]
        }
        Primitive::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
        Primitive::Mul => {
            let map = broadcast_index(x[0].shape(), x[1].shape());
            let (ad, bd) = (x[0].data(), x[1].data());
            let ga = g.iter().zip(&map).map(|(gv, &j)| gv * bd[j]).collect();
            let mut gb = vec![0.0; bd.len()];
            for ((gv, &j), av) in g.iter().zip(&map).zip(ad) {
                gb[j] += gv * av;
            }
            vec![Some(ga), Some(gb)]
        }
        Primitive::ConcatChannels => {
            let batch = out.shape()[0];
            let total_c = out.shape()[1];
            let inner: usize = out.shape()[2..].iter().product();
            let mut offset = 0;
            x.iter()
                .map(|t| {
                    let c = t.shape()[1];
                    let mut gx = Vec::with_capacity(t.numel());
                    for b in 0..batch {
                        let start = (b * total_c + offset) * inner;
                        gx.extend_from_slice(&g[start..start + c * inner]);
                    }
                    offset += c;
                    Some(gx)
                })
                .collect()
        }
        Primitive::GlobalAvgPool => {
            let inner: usize = x[0].shape()[2..].iter().product();
            let gx = (0..x[0].numel()).map(|i| g[i / inner] / inner as f64).collect();
            vec![Some(gx)]
        }
        Primitive::ChannelAffine => {
            let c = x[0].shape()[1];
            let inner: usize = x[0].shape()[2..].iter().product();
            let (xd, sc) = (x[0].data(), x[1].data());
            let mut gx = vec![0.0; xd.len()];
            let mut gs = vec![0.0; c];
            let mut gh = vec![0.0; c];
            for (i, (&v, &gv)) in xd.iter().zip(g).enumerate() {
                let ch = (i / inner) % c;
                gx[i] = gv * sc[ch];
                gs[ch] += gv * v;
                gh[ch] += gv;
            }
            vec![Some(gx), Some(gs), Some(gh)]
        }
        Primitive::WeightedMask => {
            // d/dα [(1+α)M + (1−α)(1−M)] = 2M − 1
            let batch = x[0].numel();
            let m = x[1].shape();
            let inner = m[2] * m[3] * m[4];
            let md = x[1].data();
            let ga = (0..batch)
                .map(|b| {
                    let mb = if m[0] == 1 { 0 } else { b };
                    g[b * inner..(b + 1) * inner]
                        .iter()
                        .zip(&md[mb * inner..(mb + 1) * inner])
                        .map(|(gv, mv)| gv * (2.0 * mv - 1.0))
                        .sum()
                })
                .collect();
            vec![Some(ga), None]
        }
        Primitive::Sum => vec![Some(vec![g[0]; x[0].numel()])],
        Primitive::Scale(c) => vec![Some(g.iter().map(|v| v * c).collect())],
        Primitive::SoftmaxCrossEntropy(targets) => {
            let Saved::Probs(p) = saved else {
                unreachable!("cross entropy saves probabilities")
            };
            let (b, c) = (x[0].shape()[0], x[0].shape()[1]);
            let scale = g[0] / b as f64;
            let mut gx: Vec<f64> = p.iter().map(|v| v * scale).collect();
            for (i, &t) in targets.iter().enumerate() {
                gx[i * c + t] -= scale;
            }
            vec![Some(gx)]
        }
        Primitive::Custom(op) => op.backward(x, out, g),
    }
}
