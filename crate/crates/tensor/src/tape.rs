//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records one node per operation whose result depends on a
//! trainable leaf. Operations on constants produce constants and record
//! nothing, so an inference pass through the same code keeps no activations
//! alive. [`Tape::backward`] walks the recorded nodes once, newest first, and
//! consumes the tape.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::conv::{self, Conv2dSpec, ConvGeom, ConvTransposeSpec};
use crate::error::{contract_err, dim_err, Result, TensorError};
use crate::tensor::Tensor;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

fn fresh_tape_id() -> u64 {
    NEXT_TAPE.fetch_add(1, Ordering::Relaxed)
}

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f32),
    Tanh,
    Sigmoid,
}

/// A value flowing through a computation, optionally tied to a tape node.
#[derive(Clone, Debug)]
pub struct Var {
    value: Tensor,
    slot: Option<(u64, usize)>,
}

impl Var {
    /// A value that takes no part in differentiation.
    pub fn constant(value: Tensor) -> Self {
        Self { value, slot: None }
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn into_value(self) -> Tensor {
        self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.slot.is_some()
    }

    /// Same value, cut off from the tape.
    pub fn detach(&self) -> Self {
        Self::constant(self.value.clone())
    }
}

type Slot = Option<usize>;

enum Op {
    Leaf(Vec<usize>),
    Conv2d {
        x: Slot,
        w: Slot,
        b: Slot,
        xv: Tensor,
        wv: Tensor,
        geom: ConvGeom,
    },
    ConvTranspose {
        x: Slot,
        w: Slot,
        b: Slot,
        xv: Tensor,
        wv: Tensor,
        geom: ConvGeom,
    },
    InstanceNorm {
        x: Slot,
        gamma: Slot,
        beta: Slot,
        gv: Tensor,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        dims: [usize; 4],
    },
    Activation {
        x: Slot,
        kind: Activation,
        input: Tensor,
        output: Tensor,
    },
    Dropout {
        x: Slot,
        scale: Vec<f32>,
    },
    Concat {
        parts: Vec<(Slot, usize)>,
        dims: [usize; 4],
    },
    SliceChannels {
        x: Slot,
        start: usize,
        dims: [usize; 4],
    },
    Add {
        a: Slot,
        b: Slot,
    },
    Sub {
        a: Slot,
        b: Slot,
    },
    Mul {
        a: Slot,
        b: Slot,
        av: Tensor,
        bv: Tensor,
    },
    Scale {
        x: Slot,
        factor: f32,
    },
    Sum {
        x: Slot,
        len: usize,
    },
    Mean {
        x: Slot,
        len: usize,
    },
    BceWithLogits {
        logits: Slot,
        target: Slot,
        lv: Tensor,
        tv: Tensor,
    },
    L1 {
        a: Slot,
        b: Slot,
        av: Tensor,
        bv: Tensor,
    },
}

/// Records operations for one forward pass. Single-owner, not `Sync`.
pub struct Tape {
    id: Cell<u64>,
    nodes: RefCell<Vec<Op>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: Cell::new(fresh_tape_id()),
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a trainable leaf whose gradient [`Tape::backward`] reports.
    pub fn leaf(&self, value: Tensor) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Op::Leaf(value.shape().to_vec()));
        Var {
            value,
            slot: Some((self.id.get(), nodes.len() - 1)),
        }
    }

    fn slot(&self, v: &Var) -> Result<Slot> {
        match v.slot {
            None => Ok(None),
            Some((tape, idx)) if tape == self.id.get() => Ok(Some(idx)),
            Some(_) => Err(TensorError::ForeignVar),
        }
    }

    fn record(&self, name: &'static str, value: Tensor, tracked: bool, op: impl FnOnce() -> Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        if !tracked {
            return Ok(Var::constant(value));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(op());
        Ok(Var {
            value,
            slot: Some((self.id.get(), nodes.len() - 1)),
        })
    }

    pub fn conv2d(&self, x: &Var, w: &Var, b: &Var, spec: Conv2dSpec) -> Result<Var> {
        let geom = ConvGeom::conv2d(x.shape(), w.shape(), b.shape(), spec)?;
        let (xs, ws, bs) = (self.slot(x)?, self.slot(w)?, self.slot(b)?);
        let out = conv::conv2d_forward(x.value.data(), w.value.data(), b.value.data(), &geom);
        let value = Tensor::from_parts(geom.conv_out_shape(), out);
        self.record("conv2d", value, xs.or(ws).or(bs).is_some(), || Op::Conv2d {
            x: xs,
            w: ws,
            b: bs,
            xv: x.value.clone(),
            wv: w.value.clone(),
            geom,
        })
    }

    /// Transposed convolution; `w` is laid out `Cin×Cout×K×K`.
    pub fn conv2d_transpose(&self, x: &Var, w: &Var, b: &Var, spec: ConvTransposeSpec) -> Result<Var> {
        let geom = ConvGeom::conv_transpose(x.shape(), w.shape(), b.shape(), spec)?;
        let (xs, ws, bs) = (self.slot(x)?, self.slot(w)?, self.slot(b)?);
        let out = conv::conv_transpose_forward(x.value.data(), w.value.data(), b.value.data(), &geom);
        let value = Tensor::from_parts(geom.transpose_out_shape(), out);
        self.record("conv2d_transpose", value, xs.or(ws).or(bs).is_some(), || Op::ConvTranspose {
            x: xs,
            w: ws,
            b: bs,
            xv: x.value.clone(),
            wv: w.value.clone(),
            geom,
        })
    }

    /// Per-sample, per-channel normalization over the spatial plane.
    pub fn instance_norm(&self, x: &Var, gamma: &Var, beta: &Var, eps: f32) -> Result<Var> {
        let op = "instance_norm";
        let dims = x.value.dims4()?;
        let [n, c, h, w] = dims;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(dim_err(op, format!("affine terms must be [{c}]")));
        }
        let plane = h * w;
        if plane < 2 {
            return Err(contract_err(op, "spatial plane needs at least two elements"));
        }
        let (xs, gs, bs) = (self.slot(x)?, self.slot(gamma)?, self.slot(beta)?);
        let (src, g, b) = (x.value.data(), gamma.value.data(), beta.value.data());
        let mut xhat = vec![0.0f32; src.len()];
        let mut out = vec![0.0f32; src.len()];
        let mut inv_std = vec![0.0f32; n * c];
        for (s, istd) in inv_std.iter_mut().enumerate() {
            let ch = s % c;
            let range = s * plane..(s + 1) * plane;
            let slice = &src[range.clone()];
            let mean = slice.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
            let var = slice.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / plane as f64;
            let inv = (1.0 / (var + eps as f64).sqrt()) as f32;
            *istd = inv;
            let mean = mean as f32;
            for ((xh, o), &v) in xhat[range.clone()].iter_mut().zip(&mut out[range]).zip(slice) {
                *xh = (v - mean) * inv;
                *o = g[ch] * *xh + b[ch];
            }
        }
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        self.record(op, value, xs.or(gs).or(bs).is_some(), || Op::InstanceNorm {
            x: xs,
            gamma: gs,
            beta: bs,
            gv: gamma.value.clone(),
            xhat,
            inv_std,
            dims,
        })
    }

    pub fn activation(&self, x: &Var, kind: Activation) -> Result<Var> {
        let xs = self.slot(x)?;
        let out: Vec<f32> = x.value.data().iter().map(|&v| activate(kind, v)).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        let output = value.clone();
        self.record("activation", value, xs.is_some(), || Op::Activation {
            x: xs,
            kind,
            input: x.value.clone(),
            output,
        })
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1/(1-p)` while training; identity otherwise.
    pub fn dropout<R: Rng + ?Sized>(&self, x: &Var, p: f32, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(contract_err("dropout", format!("probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x.clone());
        }
        let xs = self.slot(x)?;
        let keep = 1.0 / (1.0 - p);
        let scale: Vec<f32> = (0..x.value.numel())
            .map(|_| if rng.gen::<f32>() < p { 0.0 } else { keep })
            .collect();
        let out = x.value.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        self.record("dropout", value, xs.is_some(), || Op::Dropout { x: xs, scale })
    }

    /// Stacks `N×Ci×H×W` inputs along the channel axis in argument order.
    pub fn concat_channels(&self, parts: &[&Var]) -> Result<Var> {
        let op = "concat_channels";
        let first = parts.first().ok_or_else(|| dim_err(op, "nothing to concatenate"))?;
        let [n, _, h, w] = first.value.dims4()?;
        let mut channels = 0;
        let mut slots = Vec::with_capacity(parts.len());
        for p in parts {
            let [pn, pc, ph, pw] = p.value.dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(dim_err(
                    op,
                    format!("{:?} does not share batch and spatial extent with {:?}", p.shape(), first.shape()),
                ));
            }
            channels += pc;
            slots.push((self.slot(p)?, pc));
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * channels * plane);
        for b in 0..n {
            for (p, &(_, pc)) in parts.iter().zip(&slots) {
                out.extend_from_slice(&p.value.data()[b * pc * plane..(b + 1) * pc * plane]);
            }
        }
        let tracked = slots.iter().any(|(s, _)| s.is_some());
        let value = Tensor::from_parts(vec![n, channels, h, w], out);
        self.record(op, value, tracked, || Op::Concat {
            parts: slots,
            dims: [n, channels, h, w],
        })
    }

    /// Channels `start..start + len` of an `N×C×H×W` tensor.
    pub fn slice_channels(&self, x: &Var, start: usize, len: usize) -> Result<Var> {
        let dims = x.value.dims4()?;
        let [n, c, h, w] = dims;
        if len == 0 || start + len > c {
            return Err(dim_err("slice_channels", format!("{start}..{} outside {c} channels", start + len)));
        }
        let xs = self.slot(x)?;
        let plane = h * w;
        let mut out = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            out.extend_from_slice(&x.value.data()[base..base + len * plane]);
        }
        let value = Tensor::from_parts(vec![n, len, h, w], out);
        self.record("slice_channels", value, xs.is_some(), || Op::SliceChannels { x: xs, start, dims })
    }

    pub fn add(&self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("add", a, b)?;
        let (as_, bs) = (self.slot(a)?, self.slot(b)?);
        let out = zip_map(a, b, |x, y| x + y);
        self.record("add", out, as_.or(bs).is_some(), || Op::Add { a: as_, b: bs })
    }

    pub fn sub(&self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("sub", a, b)?;
        let (as_, bs) = (self.slot(a)?, self.slot(b)?);
        let out = zip_map(a, b, |x, y| x - y);
        self.record("sub", out, as_.or(bs).is_some(), || Op::Sub { a: as_, b: bs })
    }

    pub fn mul(&self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("mul", a, b)?;
        let (as_, bs) = (self.slot(a)?, self.slot(b)?);
        let out = zip_map(a, b, |x, y| x * y);
        self.record("mul", out, as_.or(bs).is_some(), || Op::Mul {
            a: as_,
            b: bs,
            av: a.value.clone(),
            bv: b.value.clone(),
        })
    }

    pub fn scale(&self, x: &Var, factor: f32) -> Result<Var> {
        let xs = self.slot(x)?;
        let out = x.value.data().iter().map(|v| v * factor).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        self.record("scale", value, xs.is_some(), || Op::Scale { x: xs, factor })
    }

    pub fn sum(&self, x: &Var) -> Result<Var> {
        let xs = self.slot(x)?;
        let total = x.value.data().iter().map(|&v| v as f64).sum::<f64>() as f32;
        let len = x.value.numel();
        self.record("sum", Tensor::scalar(total), xs.is_some(), || Op::Sum { x: xs, len })
    }

    pub fn mean(&self, x: &Var) -> Result<Var> {
        let xs = self.slot(x)?;
        let len = x.value.numel();
        let total = x.value.data().iter().map(|&v| v as f64).sum::<f64>() / len as f64;
        self.record("mean", Tensor::scalar(total as f32), xs.is_some(), || Op::Mean { x: xs, len })
    }

    /// Mean binary cross-entropy on raw logits, in the overflow-free form
    /// `max(l, 0) − l·t + ln(1 + e^−|l|)`.
    pub fn bce_with_logits(&self, logits: &Var, target: &Var) -> Result<Var> {
        let op = "bce_with_logits";
        same_shape(op, logits, target)?;
        if target.value.data().iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(contract_err(op, "targets must lie in [0, 1]"));
        }
        let (ls, ts) = (self.slot(logits)?, self.slot(target)?);
        let len = logits.value.numel();
        let total: f64 = logits
            .value
            .data()
            .iter()
            .zip(target.value.data())
            .map(|(&l, &t)| {
                let l = l as f64;
                l.max(0.0) - l * t as f64 + (-l.abs()).exp().ln_1p()
            })
            .sum();
        let value = Tensor::scalar((total / len as f64) as f32);
        self.record(op, value, ls.or(ts).is_some(), || Op::BceWithLogits {
            logits: ls,
            target: ts,
            lv: logits.value.clone(),
            tv: target.value.clone(),
        })
    }

    /// Mean absolute difference.
    pub fn l1_loss(&self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("l1_loss", a, b)?;
        let (as_, bs) = (self.slot(a)?, self.slot(b)?);
        let len = a.value.numel();
        let total: f64 = a
            .value
            .data()
            .iter()
            .zip(b.value.data())
            .map(|(&x, &y)| (x as f64 - y as f64).abs())
            .sum();
        let value = Tensor::scalar((total / len as f64) as f32);
        self.record("l1_loss", value, as_.or(bs).is_some(), || Op::L1 {
            a: as_,
            b: bs,
            av: a.value.clone(),
            bv: b.value.clone(),
        })
    }

    /// Propagates `d loss / d node` from a scalar `loss` back to every leaf.
    ///
    /// The tape is consumed: its nodes are dropped and every `Var` recorded
    /// on it becomes foreign. Gradients accumulate across calls only in the
    /// caller's own buffers (see `ParamSet` in the model crate).
    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        if loss.value.numel() != 1 {
            return Err(contract_err(
                "backward",
                format!("loss must be a scalar, got shape {:?}", loss.shape()),
            ));
        }
        let root = self
            .slot(loss)?
            .ok_or_else(|| contract_err("backward", "loss does not depend on any leaf of this tape"))?;
        let nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        let tape_id = self.id.replace(fresh_tape_id());

        let mut grads: Vec<Option<Vec<f32>>> = Vec::new();
        grads.resize_with(root + 1, || None);
        grads[root] = Some(vec![1.0]);
        let mut leaves = HashMap::new();
        for idx in (0..=root).rev() {
            let Some(g) = grads[idx].take() else { continue };
            propagate(&nodes[idx], idx, g, &mut grads, &mut leaves);
        }
        Ok(Gradients { tape_id, leaves })
    }
}

/// Leaf gradients produced by one [`Tape::backward`] call.
#[derive(Debug)]
pub struct Gradients {
    tape_id: u64,
    leaves: HashMap<usize, Tensor>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf, `None` when the loss does
    /// not depend on it.
    pub fn get(&self, leaf: &Var) -> Option<&Tensor> {
        match leaf.slot {
            Some((tape, idx)) if tape == self.tape_id => self.leaves.get(&idx),
            _ => None,
        }
    }

    pub fn take(&mut self, leaf: &Var) -> Option<Tensor> {
        match leaf.slot {
            Some((tape, idx)) if tape == self.tape_id => self.leaves.remove(&idx),
            _ => None,
        }
    }
}

pub(crate) fn activate(kind: Activation, v: f32) -> f32 {
    match kind {
        Activation::Relu => v.max(0.0),
        Activation::LeakyRelu(slope) => {
            if v > 0.0 {
                v
            } else {
                slope * v
            }
        }
        Activation::Tanh => v.tanh(),
        Activation::Sigmoid => sigmoid(v),
    }
}

pub fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn same_shape(op: &'static str, a: &Var, b: &Var) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_map(a: &Var, b: &Var, f: impl Fn(f32, f32) -> f32) -> Tensor {
    let out = a.value.data().iter().zip(b.value.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), out)
}

fn accumulate(grads: &mut [Option<Vec<f32>>], slot: Slot, g: Vec<f32>) {
    let Some(i) = slot else { return };
    match &mut grads[i] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a += v),
        empty => *empty = Some(g),
    }
}

fn accumulate_with(grads: &mut [Option<Vec<f32>>], slot: Slot, len: usize, f: impl Fn(usize) -> f32) {
    if slot.is_some() {
        accumulate(grads, slot, (0..len).map(f).collect());
    }
}

fn propagate(op: &Op, idx: usize, g: Vec<f32>, grads: &mut [Option<Vec<f32>>], leaves: &mut HashMap<usize, Tensor>) {
    match op {
        Op::Leaf(shape) => {
            leaves.insert(idx, Tensor::from_parts(shape.clone(), g));
        }
        Op::Conv2d { x, w, b, xv, wv, geom } => {
            let r = conv::conv2d_backward(xv.data(), wv.data(), &g, geom, [x.is_some(), w.is_some(), b.is_some()]);
            scatter_conv(grads, [*x, *w, *b], r);
        }
        Op::ConvTranspose { x, w, b, xv, wv, geom } => {
            let r = conv::conv_transpose_backward(xv.data(), wv.data(), &g, geom, [x.is_some(), w.is_some(), b.is_some()]);
            scatter_conv(grads, [*x, *w, *b], r);
        }
        Op::InstanceNorm {
            x,
            gamma,
            beta,
            gv,
            xhat,
            inv_std,
            dims,
        } => {
            let [n, c, h, w] = *dims;
            let plane = h * w;
            let m = plane as f64;
            let mut dx = x.map(|_| vec![0.0f32; g.len()]);
            let mut dgamma = vec![0.0f64; c];
            let mut dbeta = vec![0.0f64; c];
            for s in 0..n * c {
                let ch = s % c;
                let range = s * plane..(s + 1) * plane;
                let (dy, xh) = (&g[range.clone()], &xhat[range.clone()]);
                let sum_dy: f64 = dy.iter().map(|&v| v as f64).sum();
                let sum_dy_xh: f64 = dy.iter().zip(xh).map(|(&a, &b)| a as f64 * b as f64).sum();
                dgamma[ch] += sum_dy_xh;
                dbeta[ch] += sum_dy;
                if let Some(dx) = dx.as_mut() {
                    let k = gv.data()[ch] as f64 * inv_std[s] as f64 / m;
                    for ((o, &d), &xv) in dx[range].iter_mut().zip(dy).zip(xh) {
                        *o = (k * (m * d as f64 - sum_dy - xv as f64 * sum_dy_xh)) as f32;
                    }
                }
            }
            if let Some(dx) = dx {
                accumulate(grads, *x, dx);
            }
            accumulate(grads, *gamma, dgamma.into_iter().map(|v| v as f32).collect());
            accumulate(grads, *beta, dbeta.into_iter().map(|v| v as f32).collect());
        }
        Op::Activation { x, kind, input, output } => {
            let (xi, yo) = (input.data(), output.data());
            accumulate_with(grads, *x, g.len(), |i| {
                let d = match kind {
                    Activation::Relu => {
                        if xi[i] > 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Activation::LeakyRelu(slope) => {
                        if xi[i] > 0.0 {
                            1.0
                        } else {
                            *slope
                        }
                    }
                    Activation::Tanh => 1.0 - yo[i] * yo[i],
                    Activation::Sigmoid => yo[i] * (1.0 - yo[i]),
                };
                g[i] * d
            });
        }
        Op::Dropout { x, scale } => {
            accumulate_with(grads, *x, g.len(), |i| g[i] * scale[i]);
        }
        Op::Concat { parts, dims } => {
            let [n, c, h, w] = *dims;
            let plane = h * w;
            let mut offset = 0;
            for &(slot, pc) in parts {
                if slot.is_some() {
                    let mut part = Vec::with_capacity(n * pc * plane);
                    for b in 0..n {
                        let base = (b * c + offset) * plane;
                        part.extend_from_slice(&g[base..base + pc * plane]);
                    }
                    accumulate(grads, slot, part);
                }
                offset += pc;
            }
        }
        Op::SliceChannels { x, start, dims } => {
            let [n, c, h, w] = *dims;
            let plane = h * w;
            let len = g.len() / (n * plane);
            if x.is_some() {
                let mut full = vec![0.0; n * c * plane];
                for b in 0..n {
                    let dst = (b * c + start) * plane;
                    let src = b * len * plane;
                    full[dst..dst + len * plane].copy_from_slice(&g[src..src + len * plane]);
                }
                accumulate(grads, *x, full);
            }
        }
        Op::Add { a, b } => {
            if b.is_some() {
                accumulate(grads, *b, g.clone());
            }
            accumulate(grads, *a, g);
        }
        Op::Sub { a, b } => {
            accumulate_with(grads, *b, g.len(), |i| -g[i]);
            accumulate(grads, *a, g);
        }
        Op::Mul { a, b, av, bv } => {
            accumulate_with(grads, *a, g.len(), |i| g[i] * bv.data()[i]);
            accumulate_with(grads, *b, g.len(), |i| g[i] * av.data()[i]);
        }
        Op::Scale { x, factor } => {
            accumulate_with(grads, *x, g.len(), |i| g[i] * factor);
        }
        Op::Sum { x, len } => {
            accumulate(grads, *x, vec![g[0]; *len]);
        }
        Op::Mean { x, len } => {
            accumulate(grads, *x, vec![g[0] / *len as f32; *len]);
        }
        Op::BceWithLogits { logits, target, lv, tv } => {
            let k = g[0] / lv.numel() as f32;
            let (l, t) = (lv.data(), tv.data());
            accumulate_with(grads, *logits, l.len(), |i| k * (sigmoid(l[i]) - t[i]));
            accumulate_with(grads, *target, l.len(), |i| -k * l[i]);
        }
        Op::L1 { a, b, av, bv } => {
            let k = g[0] / av.numel() as f32;
            let sign = |i: usize| {
                let d = av.data()[i] - bv.data()[i];
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            };
            accumulate_with(grads, *a, av.numel(), |i| k * sign(i));
            accumulate_with(grads, *b, av.numel(), |i| -k * sign(i));
        }
    }
}

fn scatter_conv(grads: &mut [Option<Vec<f32>>], slots: [Slot; 3], r: conv::ConvGrads) {
    for (slot, g) in slots.into_iter().zip([r.input, r.weight, r.bias]) {
        if let Some(g) = g {
            accumulate(grads, slot, g);
        }
    }
}
