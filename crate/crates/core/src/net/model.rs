use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::net::layers::{Conv, Crb, Ctx, Mode, Ucrb};
use crate::net::params::{ParamId, ParamSink, ParamStore, ShapeCollector};
use crate::net::spec::{Architecture, NetworkVariant, DEPTH, POINTWISE};
use crate::tensor::{Element, Tensor};

/// Result of one forward pass.
#[derive(Clone, Debug)]
pub struct NetworkOutput {
    /// `N×1×H×W` pre-sigmoid scores.
    pub logits: Var,
    /// `branch_features[b][k]`: post-ReLU, pre-pool output of encoder block `k+1` in branch `b`.
    pub branch_features: Vec<Vec<Var>>,
    /// `(block name, output shape)` in execution order.
    pub block_shapes: Vec<(String, Vec<usize>)>,
    /// Tape leaves bound to each parameter.
    pub bindings: Vec<(ParamId, Var)>,
}

impl NetworkOutput {
    /// Feature pair feeding the attention loss at encoder block `block` (1-based).
    /// Single-branch networks supply their one branch twice.
    pub fn attention_features(&self, block: usize) -> Result<(Var, Var)> {
        if !(1..=DEPTH).contains(&block) {
            return Err(Error::InvalidArgument(format!("attention block must be in 1..={DEPTH}, got {block}")));
        }
        let first = self.branch_features[0][block - 1];
        let second = self.branch_features.get(1).map_or(first, |b| b[block - 1]);
        Ok((first, second))
    }

    pub fn shape_of(&self, block: &str) -> Option<&[usize]> {
        self.block_shapes
            .iter()
            .find(|(name, _)| name == block)
            .map(|(_, s)| s.as_slice())
    }
}

struct Layers {
    branches: Vec<Vec<Crb>>,
    decoder: Vec<Ucrb>,
    head: Conv,
}

fn declare_layers(arch: &Architecture, sink: &mut dyn ParamSink) -> Layers {
    let branches = arch
        .branches
        .iter()
        .map(|b| b.iter().map(|spec| Crb::declare(sink, spec)).collect())
        .collect();
    let decoder = arch.decoder.iter().map(|d| Ucrb::declare(sink, d)).collect();
    let head = Conv::declare(sink, "head", arch.head_in, 1, POINTWISE);
    Layers {
        branches,
        decoder,
        head,
    }
}

/// An assembled segmentation network and its parameters.
pub struct Network<T: Element> {
    arch: Architecture,
    store: ParamStore<T>,
    layers: Layers,
}

impl<T: Element> Network<T> {
    /// Builds a network with zero convolution weights and identity batch norms.
    pub fn new(variant: NetworkVariant, base_width: usize) -> Result<Self> {
        let arch = Architecture::new(variant, base_width)?;
        let mut store = ParamStore::new();
        let layers = declare_layers(&arch, &mut store);
        Ok(Self { arch, store, layers })
    }

    pub fn variant(&self) -> NetworkVariant {
        self.arch.variant
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn cast<U: Element>(&self) -> Network<U> {
        let layers = declare_layers(&self.arch, &mut ShapeCollector::default());
        Network {
            arch: self.arch.clone(),
            store: self.store.cast::<U>(),
            layers,
        }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let &[_, c, h, w] = shape else {
            return Err(Error::shape("forward", "rank", format!("expected N×1×H×W, got {shape:?}")));
        };
        if c != 1 {
            return Err(Error::shape("forward", "C", format!("expected 1 grayscale channel, got {c}")));
        }
        let d = self.arch.required_divisor();
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(Error::shape(
                "forward",
                "H/W",
                format!("input {h}×{w} must have height and width divisible by {d} (pad the image to a multiple of {d})"),
            ));
        }
        Ok(())
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, input: &Tensor<T>, mode: Mode) -> Result<NetworkOutput> {
        let x = tape.leaf(input.clone(), false);
        self.forward_var(tape, x, mode, true)
    }

    /// Forward from a tape value. With `trainable = false` no parameter gradients are requested.
    pub fn forward_var(&mut self, tape: &mut Tape<T>, input: Var, mode: Mode, trainable: bool) -> Result<NetworkOutput> {
        self.check_input(tape.shape(input))?;
        let mut ctx = Ctx::new(tape, &self.store, mode);
        if !trainable {
            ctx = ctx.frozen();
        }
        let layers = &self.layers;
        let mut block_shapes = Vec::new();
        let mut branch_features = Vec::with_capacity(layers.branches.len());
        let mut pooled = Vec::with_capacity(layers.branches.len());
        for branch in &layers.branches {
            let mut x = input;
            let mut feats = Vec::with_capacity(DEPTH);
            for block in branch {
                let f = block.forward(&mut ctx, x)?;
                block_shapes.push((block.spec.name.clone(), ctx.tape.shape(f).to_vec()));
                feats.push(f);
                x = ctx.tape.max_pool2x2(f)?;
            }
            branch_features.push(feats);
            pooled.push(x);
        }
        let mut deeper = pooled[0];
        for &p in &pooled[1..] {
            deeper = ctx.tape.add(deeper, p)?;
        }
        block_shapes.push(("bottleneck".to_string(), ctx.tape.shape(deeper).to_vec()));
        for (i, ucrb) in layers.decoder.iter().enumerate() {
            let level = DEPTH - 1 - i;
            let up = ctx.tape.upsample2x(deeper)?;
            let mut parts = vec![up];
            parts.extend(branch_features.iter().map(|b| b[level]));
            let cat = ctx.tape.concat_channels(&parts)?;
            deeper = ucrb.body.forward(&mut ctx, cat)?;
            block_shapes.push((ucrb.spec.name.clone(), ctx.tape.shape(deeper).to_vec()));
        }
        let logits = layers.head.forward(&mut ctx, deeper)?;
        block_shapes.push(("head".to_string(), ctx.tape.shape(logits).to_vec()));
        let bindings = ctx.bindings();
        let pending = ctx.take_pending_stats();
        drop(ctx);
        for (bn, stats) in pending {
            bn.update_running(&mut self.store, &stats);
        }
        Ok(NetworkOutput {
            logits,
            branch_features,
            block_shapes,
            bindings,
        })
    }

    /// Runs a single encoder block (`block` is 1-based) on its own.
    /// Returns the block output and the tape leaves bound to its parameters.
    pub fn block_forward(
        &mut self,
        tape: &mut Tape<T>,
        branch: usize,
        block: usize,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Vec<(ParamId, Var)>)> {
        let crb = self
            .layers
            .branches
            .get(branch)
            .and_then(|b| b.get(block.wrapping_sub(1)))
            .ok_or_else(|| Error::InvalidArgument(format!("no encoder block {block} in branch {branch}")))?;
        let mut ctx = Ctx::new(tape, &self.store, mode);
        let y = crb.forward(&mut ctx, x)?;
        let bindings = ctx.bindings();
        let pending = ctx.take_pending_stats();
        drop(ctx);
        for (bn, stats) in pending {
            bn.update_running(&mut self.store, &stats);
        }
        Ok((y, bindings))
    }

    /// Eval-mode foreground probabilities, `N×1×H×W`.
    pub fn predict(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone(), false);
        let out = self.forward_var(&mut tape, x, Mode::Eval, false)?;
        Ok(tape.value(out.logits).map(crate::autodiff::sigmoid))
    }
}

/// Parameter counts per block for one variant, computed without allocating weights.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct ParameterReport {
    pub variant: NetworkVariant,
    pub base_width: usize,
    /// Trainable scalars per top-level block (`vcrb1`, …, `ucrb1`, `head`).
    pub blocks: Vec<(String, usize)>,
    pub total: usize,
}

impl ParameterReport {
    /// Storage for the trainable parameters at 32-bit precision.
    pub fn bytes_f32(&self) -> usize {
        self.total * 4
    }
}

pub fn parameter_report(variant: NetworkVariant, base_width: usize) -> Result<ParameterReport> {
    let arch = Architecture::new(variant, base_width)?;
    let mut collector = ShapeCollector::default();
    declare_layers(&arch, &mut collector);
    let mut blocks: Vec<(String, usize)> = Vec::new();
    for (name, kind, shape) in &collector.declared {
        if !kind.trainable() {
            continue;
        }
        let block = name.split('.').next().unwrap_or(name).to_string();
        let count: usize = shape.iter().product();
        match blocks.last_mut() {
            Some((b, c)) if *b == block => *c += count,
            _ => blocks.push((block, count)),
        }
    }
    let total = blocks.iter().map(|(_, c)| c).sum();
    Ok(ParameterReport {
        variant,
        base_width,
        blocks,
        total,
    })
}
