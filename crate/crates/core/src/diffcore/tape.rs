use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvDims, BN_EPS};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicUsize = AtomicUsize::new(0);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: usize,
    idx: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

/// Exponential moving averages of per-channel batch statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub const MOMENTUM: f64 = 0.99;

    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    fn update(&mut self, mean: &[f64], var: &[f64]) {
        let m = Self::MOMENTUM;
        for (r, &v) in self.mean.iter_mut().zip(mean) {
            *r = m * *r + (1.0 - m) * v;
        }
        for (r, &v) in self.var.iter_mut().zip(var) {
            *r = m * *r + (1.0 - m) * v;
        }
    }
}

pub enum BnMode<'a> {
    /// Normalise by batch statistics and fold them into the running averages.
    Train(&'a mut RunningStats),
    /// Normalise by the running averages.
    Infer(&'a RunningStats),
}

enum Op {
    Leaf,
    Param(ParamId),
    Dense {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Conv {
        x: usize,
        k: usize,
        b: Option<usize>,
        dims: ConvDims,
    },
    MaxPool {
        x: usize,
        argmax: Vec<usize>,
    },
    Upscale {
        x: usize,
        factor: usize,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        channels: usize,
        len: usize,
        batch_stats: bool,
    },
    Act {
        x: usize,
        kind: Activation,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Exp(usize),
    Scale(usize, f64),
    Shift(usize),
    SumAll(usize),
    RowSum(usize),
    Reshape(usize),
    BroadcastChannels {
        p: usize,
        channels: usize,
        len: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations in execution order; [`Tape::backprop`] replays them in
/// reverse.
pub struct Tape {
    id: usize,
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        v.idx
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[self.idx(v)].value
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.val(v)
    }

    /// Gradient of the last backpropagated loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(self.idx(v)).and_then(|g| g.as_ref())
    }

    /// A constant input (gradients are still recorded for inspection).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.val(x).shape(), self.val(w).shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::shape(
                "dense",
                format!("input {xs:?} incompatible with weights {ws:?}"),
            ));
        }
        let (batch, n_in, n_out) = (xs[0], xs[1], ws[1]);
        if let Some(b) = b {
            let bs = self.val(b).shape();
            if bs != [n_out] {
                return Err(Error::shape("dense", format!("bias {bs:?}, expected [{n_out}]")));
            }
        }
        let out = kernels::dense_forward(
            self.val(x).data(),
            self.val(w).data(),
            b.map(|b| self.val(b).data()),
            batch,
            n_in,
            n_out,
        );
        let op = Op::Dense {
            x: self.idx(x),
            w: self.idx(w),
            b: b.map(|b| self.idx(b)),
        };
        Ok(self.push(Tensor::new(vec![batch, n_out], out)?, op))
    }

    pub fn conv1d(&mut self, x: Var, k: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ks) = (self.val(x).shape(), self.val(k).shape());
        if xs.len() != 3 || ks.len() != 3 || xs[1] != ks[1] {
            return Err(Error::shape(
                "conv1d",
                format!("input {xs:?} incompatible with kernels {ks:?}"),
            ));
        }
        let dims = ConvDims {
            batch: xs[0],
            c_in: xs[1],
            c_out: ks[0],
            len: xs[2],
            filter: ks[2],
        };
        if dims.filter.is_multiple_of(2) {
            return Err(Error::shape(
                "conv1d",
                format!("filter size {} must be odd", dims.filter),
            ));
        }
        if dims.len < dims.filter {
            return Err(Error::shape(
                "conv1d",
                format!("length {} shorter than filter {}", dims.len, dims.filter),
            ));
        }
        if let Some(b) = b {
            let bs = self.val(b).shape();
            if bs != [dims.c_out] {
                return Err(Error::shape(
                    "conv1d",
                    format!("bias {bs:?}, expected [{}]", dims.c_out),
                ));
            }
        }
        let out = kernels::conv1d_forward(
            self.val(x).data(),
            self.val(k).data(),
            b.map(|b| self.val(b).data()),
            dims,
        );
        let op = Op::Conv {
            x: self.idx(x),
            k: self.idx(k),
            b: b.map(|b| self.idx(b)),
            dims,
        };
        Ok(self.push(Tensor::new(vec![dims.batch, dims.c_out, dims.len], out)?, op))
    }

    pub fn maxpool1d(&mut self, x: Var, pool: usize) -> Result<Var> {
        let xs = self.val(x).shape().to_vec();
        if xs.len() != 3 || pool == 0 || !xs[2].is_multiple_of(pool) {
            return Err(Error::shape(
                "maxpool1d",
                format!("length of {xs:?} not divisible by pool size {pool}"),
            ));
        }
        let (out, argmax) = kernels::maxpool_forward(self.val(x).data(), xs[0] * xs[1], xs[2], pool);
        let op = Op::MaxPool {
            x: self.idx(x),
            argmax,
        };
        Ok(self.push(Tensor::new(vec![xs[0], xs[1], xs[2] / pool], out)?, op))
    }

    pub fn upscale1d(&mut self, x: Var, factor: usize) -> Result<Var> {
        let xs = self.val(x).shape().to_vec();
        if xs.len() != 3 || factor == 0 {
            return Err(Error::shape(
                "upscale1d",
                format!("input {xs:?}, factor {factor}"),
            ));
        }
        let out = kernels::upscale_forward(self.val(x).data(), factor);
        let op = Op::Upscale {
            x: self.idx(x),
            factor,
        };
        Ok(self.push(Tensor::new(vec![xs[0], xs[1], xs[2] * factor], out)?, op))
    }

    /// Batch normalisation over `[batch, features]` or, per channel,
    /// over `[batch, channels, len]`.
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, mode: BnMode<'_>) -> Result<Var> {
        let xs = self.val(x).shape().to_vec();
        let (batch, channels, len) = match xs[..] {
            [b, f] => (b, f, 1),
            [b, c, l] => (b, c, l),
            _ => return Err(Error::shape("batchnorm", format!("input {xs:?}"))),
        };
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.val(v).shape() != [channels] {
                return Err(Error::shape(
                    "batchnorm",
                    format!("{name} {:?}, expected [{channels}]", self.val(v).shape()),
                ));
            }
        }
        let (mean, var, batch_stats) = match mode {
            BnMode::Train(running) => {
                if batch < 2 {
                    return Err(Error::shape(
                        "batchnorm",
                        "train mode needs a batch of at least 2",
                    ));
                }
                if running.mean.len() != channels {
                    return Err(Error::shape("batchnorm", "running statistics size"));
                }
                let (m, v) = kernels::channel_moments(self.val(x).data(), batch, channels, len);
                running.update(&m, &v);
                (m, v, true)
            }
            BnMode::Infer(running) => {
                if running.mean.len() != channels {
                    return Err(Error::shape("batchnorm", "running statistics size"));
                }
                (running.mean.clone(), running.var.clone(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (y, xhat) = kernels::batchnorm_forward(
            self.val(x).data(),
            self.val(gamma).data(),
            self.val(beta).data(),
            &mean,
            &inv_std,
            channels,
            len,
        );
        let op = Op::BatchNorm {
            x: self.idx(x),
            gamma: self.idx(gamma),
            beta: self.idx(beta),
            xhat,
            inv_std,
            channels,
            len,
            batch_stats,
        };
        Ok(self.push(Tensor::new(xs, y)?, op))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let out = match kind {
            Activation::Relu => self.val(x).map(|v| if v > 0.0 { v } else { 0.0 }),
            Activation::Tanh => self.val(x).map(f64::tanh),
            Activation::Identity => self.val(x).clone(),
        };
        let op = Op::Act {
            x: self.idx(x),
            kind,
        };
        self.push(out, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a).zip_map(self.val(b), |x, y| x + y)?;
        let op = Op::Add(self.idx(a), self.idx(b));
        Ok(self.push(out, op))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a).zip_map(self.val(b), |x, y| x - y)?;
        let op = Op::Sub(self.idx(a), self.idx(b));
        Ok(self.push(out, op))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a).zip_map(self.val(b), |x, y| x * y)?;
        let op = Op::Mul(self.idx(a), self.idx(b));
        Ok(self.push(out, op))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.val(x).map(f64::exp);
        let op = Op::Exp(self.idx(x));
        self.push(out, op)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.val(x).map(|v| v * factor);
        let op = Op::Scale(self.idx(x), factor);
        self.push(out, op)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.val(x).map(|v| v + c);
        let op = Op::Shift(self.idx(x));
        self.push(out, op)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.val(x).sum());
        let op = Op::SumAll(self.idx(x));
        self.push(out, op)
    }

    /// Sums everything but the leading axis: `[B, ...] → [B]`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let t = self.val(x);
        let b = t.batch();
        let row = t.len() / b;
        let data = t.data().chunks(row).map(|c| c.iter().sum()).collect();
        let out = Tensor::new(vec![b], data).expect("row sums");
        let op = Op::RowSum(self.idx(x));
        self.push(out, op)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.val(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.val(x).reshape(shape)?;
        let op = Op::Reshape(self.idx(x));
        Ok(self.push(out, op))
    }

    /// Repeats a `[channels]` vector to `[batch, channels, len]`.
    pub fn broadcast_channels(&mut self, p: Var, batch: usize, len: usize) -> Result<Var> {
        let ps = self.val(p).shape();
        if ps.len() != 1 {
            return Err(Error::shape("broadcast_channels", format!("{ps:?}")));
        }
        let channels = ps[0];
        let src = self.val(p).data();
        let mut data = Vec::with_capacity(batch * channels * len);
        for _ in 0..batch {
            for &v in src {
                data.extend(std::iter::repeat_n(v, len));
            }
        }
        let out = Tensor::new(vec![batch, channels, len], data)?;
        let op = Op::BroadcastChannels {
            p: self.idx(p),
            channels,
            len,
        };
        Ok(self.push(out, op))
    }

    fn acc(grads: &mut [Option<Tensor>], i: usize, g: Tensor) {
        match &mut grads[i] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse sweep from a scalar `loss`, accumulating into every parameter's
    /// `grad` that the loss depends on.
    pub fn backprop(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if loss.tape != self.id || loss.idx >= self.nodes.len() {
            return Err(Error::shape("backprop", "loss was not recorded on this tape"));
        }
        if !self.val(loss).is_scalar() {
            return Err(Error::shape(
                "backprop",
                format!("loss must be scalar, got {:?}", self.val(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.idx] = Some(Tensor::full(self.val(loss).shape(), 1.0));
        for i in (0..=loss.idx).rev() {
            let Some(g) = grads[i].clone() else { continue };
            let node = &self.nodes[i];
            let shaped = |src: usize, data: Vec<f64>| {
                Tensor::new(self.nodes[src].value.shape().to_vec(), data).expect("gradient shape")
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    if p.grad.shape() != g.shape() {
                        return Err(Error::shape(
                            "backprop",
                            format!("parameter {} changed shape", p.name),
                        ));
                    }
                    p.grad.add_assign(&g);
                }
                Op::Dense { x, w, b } => {
                    let xs = self.nodes[*x].value.shape();
                    let (batch, n_in) = (xs[0], xs[1]);
                    let n_out = g.shape()[1];
                    let r = kernels::dense_backward(
                        self.nodes[*x].value.data(),
                        self.nodes[*w].value.data(),
                        g.data(),
                        batch,
                        n_in,
                        n_out,
                    );
                    Self::acc(&mut grads, *x, shaped(*x, r.dx));
                    Self::acc(&mut grads, *w, shaped(*w, r.dw));
                    if let Some(b) = b {
                        Self::acc(&mut grads, *b, shaped(*b, r.db));
                    }
                }
                Op::Conv { x, k, b, dims } => {
                    let r = kernels::conv1d_backward(
                        self.nodes[*x].value.data(),
                        self.nodes[*k].value.data(),
                        g.data(),
                        *dims,
                    );
                    Self::acc(&mut grads, *x, shaped(*x, r.dx));
                    Self::acc(&mut grads, *k, shaped(*k, r.dk));
                    if let Some(b) = b {
                        Self::acc(&mut grads, *b, shaped(*b, r.db));
                    }
                }
                Op::MaxPool { x, argmax } => {
                    let dx = kernels::maxpool_backward(g.data(), argmax, self.nodes[*x].value.len());
                    Self::acc(&mut grads, *x, shaped(*x, dx));
                }
                Op::Upscale { x, factor } => {
                    let dx = kernels::upscale_backward(g.data(), *factor);
                    Self::acc(&mut grads, *x, shaped(*x, dx));
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    channels,
                    len,
                    batch_stats,
                } => {
                    let r = kernels::batchnorm_backward(
                        g.data(),
                        xhat,
                        self.nodes[*gamma].value.data(),
                        inv_std,
                        *channels,
                        *len,
                        *batch_stats,
                    );
                    Self::acc(&mut grads, *x, shaped(*x, r.dx));
                    Self::acc(&mut grads, *gamma, shaped(*gamma, r.dgamma));
                    Self::acc(&mut grads, *beta, shaped(*beta, r.dbeta));
                }
                Op::Act { x, kind } => {
                    let dx = match kind {
                        Activation::Relu => self.nodes[*x]
                            .value
                            .zip_map(&g, |v, g| if v > 0.0 { g } else { 0.0 })?,
                        Activation::Tanh => node.value.zip_map(&g, |y, g| g * (1.0 - y * y))?,
                        Activation::Identity => g,
                    };
                    Self::acc(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    Self::acc(&mut grads, *a, g.clone());
                    Self::acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    Self::acc(&mut grads, *a, g.clone());
                    Self::acc(&mut grads, *b, g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(&self.nodes[*b].value, |g, v| g * v)?;
                    let db = g.zip_map(&self.nodes[*a].value, |g, v| g * v)?;
                    Self::acc(&mut grads, *a, da);
                    Self::acc(&mut grads, *b, db);
                }
                Op::Exp(x) => {
                    let dx = g.zip_map(&node.value, |g, y| g * y)?;
                    Self::acc(&mut grads, *x, dx);
                }
                Op::Scale(x, f) => Self::acc(&mut grads, *x, g.map(|v| v * f)),
                Op::Shift(x) => Self::acc(&mut grads, *x, g),
                Op::SumAll(x) => {
                    let gv = g.data()[0];
                    let dx = Tensor::full(self.nodes[*x].value.shape(), gv);
                    Self::acc(&mut grads, *x, dx);
                }
                Op::RowSum(x) => {
                    let xt = &self.nodes[*x].value;
                    let row = xt.len() / xt.batch();
                    let data = g
                        .data()
                        .iter()
                        .flat_map(|&v| std::iter::repeat_n(v, row))
                        .collect();
                    Self::acc(&mut grads, *x, shaped(*x, data));
                }
                Op::Reshape(x) => Self::acc(&mut grads, *x, shaped(*x, g.into_data())),
                Op::BroadcastChannels { p, channels, len } => {
                    let mut dp = vec![0.0; *channels];
                    for (i, v) in g.data().iter().enumerate() {
                        dp[(i / len) % channels] += v;
                    }
                    Self::acc(&mut grads, *p, shaped(*p, dp));
                }
            }
        }
        self.grads = grads;
        Ok(())
    }
}
