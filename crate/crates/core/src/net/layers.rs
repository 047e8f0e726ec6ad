//! Convolution layers and residual blocks, bound to parameters by id.

use std::collections::HashMap;

use crate::autodiff::{BatchStats, Tape, Var};
use crate::error::{Error, Result};
use crate::net::params::{ParamId, ParamKind, ParamSink, ParamStore};
use crate::net::spec::{BlockSpec, DecoderSpec, KernelSpec, POINTWISE};
use crate::tensor::Element;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward state: the tape, parameter bindings, and pending running-stat updates.
pub struct Ctx<'a, T: Element> {
    pub tape: &'a mut Tape<T>,
    pub mode: Mode,
    store: &'a ParamStore<T>,
    bound: HashMap<ParamId, Var>,
    pending_stats: Vec<(BatchNorm, BatchStats)>,
    trainable: bool,
}

impl<'a, T: Element> Ctx<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, store: &'a ParamStore<T>, mode: Mode) -> Self {
        Self {
            tape,
            mode,
            store,
            bound: HashMap::new(),
            pending_stats: Vec::new(),
            trainable: true,
        }
    }

    /// Binds parameters as constants (no gradients requested).
    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let requires_grad = self.trainable && self.store.entry(id).kind.trainable();
        let v = self.tape.leaf_shared(self.store.shared(id), requires_grad);
        self.bound.insert(id, v);
        v
    }

    pub fn bindings(&self) -> Vec<(ParamId, Var)> {
        let mut b: Vec<_> = self.bound.iter().map(|(&p, &v)| (p, v)).collect();
        b.sort();
        b
    }

    pub(crate) fn take_pending_stats(&mut self) -> Vec<(BatchNorm, BatchStats)> {
        std::mem::take(&mut self.pending_stats)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: KernelSpec,
}

impl Conv {
    pub fn declare(sink: &mut dyn ParamSink, name: &str, in_c: usize, out_c: usize, kernel: KernelSpec) -> Self {
        let weight = sink.declare(
            format!("{name}.weight"),
            ParamKind::ConvWeight,
            vec![out_c, in_c, kernel.kernel.0, kernel.kernel.1],
        );
        let bias = sink.declare(format!("{name}.bias"), ParamKind::ConvBias, vec![out_c]);
        Self { weight, bias, kernel }
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        ctx.tape.conv2d(x, w, Some(b), self.kernel.padding)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn declare(sink: &mut dyn ParamSink, name: &str, c: usize) -> Self {
        Self {
            gamma: sink.declare(format!("{name}.gamma"), ParamKind::BnGamma, vec![c]),
            beta: sink.declare(format!("{name}.beta"), ParamKind::BnBeta, vec![c]),
            running_mean: sink.declare(format!("{name}.running_mean"), ParamKind::BnRunningMean, vec![c]),
            running_var: sink.declare(format!("{name}.running_var"), ParamKind::BnRunningVar, vec![c]),
        }
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = ctx.tape.batchnorm_train(x, gamma, beta, BN_EPS)?;
                ctx.pending_stats.push((*self, stats));
                Ok(y)
            }
            Mode::Eval => {
                let mean = ctx.store.get(self.running_mean).data();
                let var = ctx.store.get(self.running_var).data();
                ctx.tape.batchnorm_eval(x, gamma, beta, mean, var, BN_EPS)
            }
        }
    }

    /// `running ← (1−momentum)·running + momentum·batch`.
    pub fn update_running<T: Element>(&self, store: &mut ParamStore<T>, stats: &BatchStats) {
        let keep = 1.0 - BN_MOMENTUM;
        let m = store.get_mut(self.running_mean);
        for (r, &b) in m.data_mut().iter_mut().zip(&stats.mean) {
            *r = T::of(keep * r.as_f64() + BN_MOMENTUM * b);
        }
        let v = store.get_mut(self.running_var);
        for (r, &b) in v.data_mut().iter_mut().zip(&stats.var_unbiased) {
            *r = T::of(keep * r.as_f64() + BN_MOMENTUM * b);
        }
    }
}

/// Three consecutive conv+BN stages with a residual connection
/// (1×1 projection when the channel count changes).
#[derive(Clone, Debug)]
pub struct RConv {
    pub stages: Vec<(Conv, BatchNorm)>,
    pub projection: Option<Conv>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl RConv {
    pub fn declare(sink: &mut dyn ParamSink, name: &str, in_c: usize, out_c: usize, kernel: KernelSpec) -> Self {
        let stages = (0..3)
            .map(|s| {
                let cin = if s == 0 { in_c } else { out_c };
                (
                    Conv::declare(sink, &format!("{name}.conv{s}"), cin, out_c, kernel),
                    BatchNorm::declare(sink, &format!("{name}.bn{s}"), out_c),
                )
            })
            .collect();
        let projection = (in_c != out_c).then(|| Conv::declare(sink, &format!("{name}.proj"), in_c, out_c, POINTWISE));
        Self {
            stages,
            projection,
            in_channels: in_c,
            out_channels: out_c,
        }
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.stages.len() - 1;
        for (s, (conv, bn)) in self.stages.iter().enumerate() {
            h = conv.forward(ctx, h)?;
            h = bn.forward(ctx, h)?;
            if s < last {
                h = ctx.tape.relu(h);
            }
        }
        let residual = match &self.projection {
            Some(p) => p.forward(ctx, x)?,
            None => x,
        };
        if ctx.tape.shape(residual)[1] != self.out_channels {
            return Err(Error::shape(
                "rconv",
                "C (residual)",
                format!("residual has {} channels, path has {}", ctx.tape.shape(residual)[1], self.out_channels),
            ));
        }
        let sum = ctx.tape.add(h, residual)?;
        Ok(ctx.tape.relu(sum))
    }
}

/// Encoder block: `ReLU(shortcut(x) + fuse(concat(paths(x))))`.
#[derive(Clone, Debug)]
pub struct Crb {
    pub spec: BlockSpec,
    pub shortcut: Conv,
    pub paths: Vec<RConv>,
    pub fuse: Conv,
}

impl Crb {
    pub fn declare(sink: &mut dyn ParamSink, spec: &BlockSpec) -> Self {
        let name = &spec.name;
        let shortcut = Conv::declare(
            sink,
            &format!("{name}.shortcut"),
            spec.in_channels,
            spec.fused_channels,
            POINTWISE,
        );
        let paths = spec
            .path_kernels
            .iter()
            .enumerate()
            .map(|(i, &k)| RConv::declare(sink, &format!("{name}.path{i}"), spec.in_channels, spec.out_channels, k))
            .collect();
        let fuse = Conv::declare(
            sink,
            &format!("{name}.fuse"),
            spec.concat_width(),
            spec.fused_channels,
            POINTWISE,
        );
        Self {
            spec: spec.clone(),
            shortcut,
            paths,
            fuse,
        }
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let shortcut = self.shortcut.forward(ctx, x)?;
        let outs = self
            .paths
            .iter()
            .map(|p| p.forward(ctx, x))
            .collect::<Result<Vec<_>>>()?;
        let cat = ctx.tape.concat_channels(&outs)?;
        let fused = self.fuse.forward(ctx, cat)?;
        let sum = ctx.tape.add(shortcut, fused)?;
        Ok(ctx.tape.relu(sum))
    }
}

/// Decoder block.
#[derive(Clone, Debug)]
pub struct Ucrb {
    pub spec: DecoderSpec,
    pub body: RConv,
}

impl Ucrb {
    pub fn declare(sink: &mut dyn ParamSink, spec: &DecoderSpec) -> Self {
        Self {
            spec: spec.clone(),
            body: RConv::declare(sink, &spec.name, spec.in_channels, spec.out_channels, spec.kernel),
        }
    }
}
