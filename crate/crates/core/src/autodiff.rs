//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every differentiable operation appends one node holding its output value and
//! whatever it needs to replay gradients. [`Tape::backward`] walks the nodes in
//! reverse execution order, visiting each exactly once.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::kernels::{self, ConvGeometry};
use crate::tensor::{Element, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A user-defined differentiable operation.
///
/// `backward` returns one optional gradient per input, each with the same
/// length as that input.
pub trait Function<T: Element>: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad_output: &[T]) -> Vec<Option<Vec<T>>>;
}

enum Op<T: Element> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geometry: ConvGeometry,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    AvgPool {
        x: Var,
    },
    Upsample {
        x: Var,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Concat {
        xs: Vec<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Affine {
        x: Var,
        scale: T,
    },
    Sum {
        x: Var,
    },
    WeightedSum {
        terms: Vec<(Var, T)>,
    },
    Custom {
        inputs: Vec<Var>,
        function: Box<dyn Function<T>>,
    },
}

impl<T: Element> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool { .. } => "max_pool2x2",
            Op::AvgPool { .. } => "avg_pool2x2",
            Op::Upsample { .. } => "bilinear_upsample2x",
            Op::BatchNormTrain { .. } | Op::BatchNormEval { .. } => "batchnorm",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Concat { .. } => "concat_channels",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Affine { .. } => "affine",
            Op::Sum { .. } => "sum",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::Custom { function, .. } => function.name(),
        }
    }
}

struct Node<T: Element> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Batch statistics produced by a training-mode batch norm, for running-average updates.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n−1) variance.
    pub var_unbiased: Vec<f64>,
}

/// Ordered record of executed operations.
pub struct Tape<T: Element> {
    nodes: Vec<Node<T>>,
    fault: Option<String>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], retained for leaf variables.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn accumulate<T: Element>(slot: &mut Option<Vec<T>>, contribution: Vec<T>) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e = *e + c;
            }
        }
        None => *slot = Some(contribution),
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Debug hook: the backward rule of every op named `op` is perturbed by 10%.
    pub fn inject_fault(&mut self, op: impl Into<String>) {
        self.fault = Some(op.into());
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shared_value(&self, var: Var) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes[var.0].value)
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Name of the operation that produced `var`.
    pub fn op_name(&self, var: Var) -> &'static str {
        self.nodes[var.0].op.name()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.leaf_shared(Arc::new(value), requires_grad)
    }

    /// Records a leaf without copying its values.
    pub fn leaf_shared(&mut self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims4(&self, op: &'static str, var: Var) -> Result<[usize; 4]> {
        self.value(var)
            .dims4()
            .map_err(|_| Error::shape(op, "rank", format!("expected N×C×H×W, got {:?}", self.shape(var))))
    }

    /// Stride-1 zero-padded cross-correlation. `w` is `O×I×Kh×Kw`, `b` has `O` values.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, padding: (usize, usize)) -> Result<Var> {
        let [n, c, h, wd] = self.dims4("conv2d", x)?;
        let [o, i, kh, kw] = self.dims4("conv2d", w)?;
        if i != c {
            return Err(Error::shape(
                "conv2d",
                "C (input channels)",
                format!("input has {c} channels but weight expects {i}"),
            ));
        }
        if kh == 0 || kw == 0 {
            return Err(Error::shape("conv2d", "Kh/Kw", "kernel extents must be positive"));
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(Error::shape(
                    "conv2d",
                    "O (bias)",
                    format!("bias shape {:?} does not match {o} output channels", self.shape(b)),
                ));
            }
        }
        let geometry = ConvGeometry {
            batch: n,
            in_channels: c,
            out_channels: o,
            height: h,
            width: wd,
            kernel: (kh, kw),
            padding,
        };
        let (ho, wo) = match geometry.output_size() {
            Some((ho, wo)) if ho > 0 && wo > 0 => (ho, wo),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    "H/W",
                    format!("kernel {kh}×{kw} with padding {padding:?} leaves no output for {h}×{wd} input"),
                ))
            }
        };
        let mut out = vec![T::zero(); n * o * ho * wo];
        kernels::conv2d_forward(
            &geometry,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &mut out,
        );
        let value = Tensor::new([n, o, ho, wo], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, geometry }, &inputs))
    }

    fn even_spatial(&self, op: &'static str, x: Var) -> Result<[usize; 4]> {
        let dims = self.dims4(op, x)?;
        if dims[2] % 2 != 0 || dims[3] % 2 != 0 || dims[2] == 0 || dims[3] == 0 {
            return Err(Error::shape(
                op,
                "H/W",
                format!("2×2 pooling needs even positive spatial extents, got {}×{}", dims[2], dims[3]),
            ));
        }
        Ok(dims)
    }

    pub fn max_pool2x2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.even_spatial("max_pool2x2", x)?;
        let mut out = vec![T::zero(); n * c * h * w / 4];
        let argmax = kernels::max_pool2x2_forward(n * c, h, w, self.value(x).data(), &mut out);
        let value = Tensor::new([n, c, h / 2, w / 2], out)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }, &[x]))
    }

    pub fn avg_pool2x2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.even_spatial("avg_pool2x2", x)?;
        let mut out = vec![T::zero(); n * c * h * w / 4];
        kernels::avg_pool2x2_forward(n * c, h, w, self.value(x).data(), &mut out);
        let value = Tensor::new([n, c, h / 2, w / 2], out)?;
        Ok(self.push(value, Op::AvgPool { x }, &[x]))
    }

    /// 2× bilinear upsampling, half-pixel (align-corners-false) sampling.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.dims4("bilinear_upsample2x", x)?;
        if h == 0 || w == 0 {
            return Err(Error::shape("bilinear_upsample2x", "H/W", "spatial extents must be ≥ 1"));
        }
        let mut out = vec![T::zero(); n * c * h * w * 4];
        kernels::upsample2x_forward(n * c, h, w, self.value(x).data(), &mut out);
        let value = Tensor::new([n, c, 2 * h, 2 * w], out)?;
        Ok(self.push(value, Op::Upsample { x }, &[x]))
    }

    fn check_affine(&self, op: &'static str, c: usize, gamma: Var, beta: Var) -> Result<()> {
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(Error::shape(
                    op,
                    format!("C ({name})"),
                    format!("{name} shape {:?} does not match {c} channels", self.shape(v)),
                ));
            }
        }
        Ok(())
    }

    /// Training-mode batch norm: normalizes per channel over N, H, W.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let dims @ [n, c, h, w] = self.dims4("batchnorm", x)?;
        self.check_affine("batchnorm", c, gamma, beta)?;
        let count = n * h * w;
        if count < 2 {
            return Err(Error::shape(
                "batchnorm",
                "N·H·W",
                "training mode needs at least two values per channel (variance undefined)",
            ));
        }
        let (mean, var) = kernels::channel_stats(dims, self.value(x).data());
        let inv_std: Vec<T> = var.iter().map(|&v| T::of(1.0 / (v + eps).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();
        let mut out = vec![T::zero(); n * c * h * w];
        let mut xhat = vec![T::zero(); n * c * h * w];
        kernels::batchnorm_apply(
            dims,
            self.value(x).data(),
            &mean_t,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
            &mut out,
            Some(&mut xhat),
        );
        let correction = count as f64 / (count - 1) as f64;
        let stats = BatchStats {
            mean,
            var_unbiased: var.iter().map(|v| v * correction).collect(),
        };
        let value = Tensor::new(dims, out)?;
        let var_out = self.push(
            value,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        );
        Ok((var_out, stats))
    }

    /// Inference-mode batch norm using supplied running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let dims @ [_, c, _, _] = self.dims4("batchnorm", x)?;
        self.check_affine("batchnorm", c, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape("batchnorm", "C (running stats)", "running statistics length differs from channels"));
        }
        let inv_std: Vec<T> = running_var.iter().map(|&v| T::of(1.0 / (v.as_f64() + eps).sqrt())).collect();
        let mean = running_mean.to_vec();
        let mut out = vec![T::zero(); self.value(x).len()];
        kernels::batchnorm_apply(
            dims,
            self.value(x).data(),
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
            &mut out,
            None,
        );
        let value = Tensor::new(dims, out)?;
        Ok(self.push(
            value,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu { x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid { x }, &[x])
    }

    /// Concatenates along the channel axis; all inputs must share N, H, W.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_channels: empty input list".into()))?;
        let [n, _, h, w] = self.dims4("concat_channels", first)?;
        let mut total_c = 0;
        for &v in xs {
            let [ni, ci, hi, wi] = self.dims4("concat_channels", v)?;
            if (ni, hi, wi) != (n, h, w) {
                let axis = if ni != n { "N" } else if hi != h { "H" } else { "W" };
                return Err(Error::shape(
                    "concat_channels",
                    axis,
                    format!("expected N×H×W = {n}×{h}×{w}, got {ni}×{hi}×{wi}"),
                ));
            }
            total_c += ci;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total_c * hw);
        for b in 0..n {
            for &v in xs {
                let t = self.value(v);
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[b * c * hw..(b + 1) * c * hw]);
            }
        }
        let value = Tensor::new([n, total_c, h, w], out)?;
        Ok(self.push(value, Op::Concat { xs: xs.to_vec() }, xs))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                "shape",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Mul { a, b }, &[a, b]))
    }

    /// `scale·x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        self.push(value, Op::Affine { x, scale }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum { x }, &[x])
    }

    /// `Σ wᵢ·xᵢ` over same-shaped inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let (first, _) = *terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("weighted_sum: no terms".into()))?;
        let mut data = vec![T::zero(); self.value(first).len()];
        for &(v, w) in terms {
            self.same_shape("weighted_sum", first, v)?;
            for (d, &x) in data.iter_mut().zip(self.value(v).data()) {
                *d = *d + w * x;
            }
        }
        let value = Tensor::new(self.shape(first).to_vec(), data)?;
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(value, Op::WeightedSum { terms: terms.to_vec() }, &inputs))
    }

    /// Records a user-defined operation whose forward value has already been computed.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, function: Box<dyn Function<T>>) -> Var {
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                function,
            },
            inputs,
        )
    }

    /// Reverse-mode sweep from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out_len = self.value(output).len();
        if out_len != 1 {
            return Err(Error::shape(
                "backward",
                "output",
                format!("needs a scalar output, got shape {:?}", self.shape(output)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![T::one()]);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(mut grad) = grads[idx].take() else {
                continue;
            };
            if self.fault.as_deref() == Some(node.op.name()) {
                let bump = T::of(1.1);
                grad.iter_mut().for_each(|g| *g = *g * bump);
            }
            for (var, contribution) in self.node_backward(node, &grad) {
                if self.nodes[var.0].requires_grad {
                    accumulate(&mut grads[var.0], contribution);
                }
            }
        }
        // keep leaf gradients only
        for (idx, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn node_backward(&self, node: &Node<T>, grad: &[T]) -> Vec<(Var, Vec<T>)> {
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geometry } => {
                let mut dx = self.wants(*x).then(|| vec![T::zero(); self.value(*x).len()]);
                let mut dw = self.wants(*w).then(|| vec![T::zero(); self.value(*w).len()]);
                let mut db = b
                    .filter(|&b| self.wants(b))
                    .map(|b| vec![T::zero(); self.value(b).len()]);
                kernels::conv2d_backward(
                    geometry,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    grad,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                out.extend(dx.map(|g| (*x, g)));
                out.extend(dw.map(|g| (*w, g)));
                if let (Some(b), Some(g)) = (b, db) {
                    out.push((*b, g));
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![T::zero(); self.value(*x).len()];
                for (&src, &g) in argmax.iter().zip(grad) {
                    dx[src as usize] = dx[src as usize] + g;
                }
                out.push((*x, dx));
            }
            Op::AvgPool { x } => {
                let [n, c, h, w] = self.value(*x).dims4().expect("rank checked");
                let mut dx = vec![T::zero(); self.value(*x).len()];
                kernels::avg_pool2x2_backward(n * c, h, w, grad, &mut dx);
                out.push((*x, dx));
            }
            Op::Upsample { x } => {
                let [n, c, h, w] = self.value(*x).dims4().expect("rank checked");
                let mut dx = vec![T::zero(); self.value(*x).len()];
                kernels::upsample2x_backward(n * c, h, w, grad, &mut dx);
                out.push((*x, dx));
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let dims = self.value(*x).dims4().expect("rank checked");
                let mut dx = self.wants(*x).then(|| vec![T::zero(); xhat.len()]);
                let mut dg = self.wants(*gamma).then(|| vec![T::zero(); inv_std.len()]);
                let mut dbeta = self.wants(*beta).then(|| vec![T::zero(); inv_std.len()]);
                kernels::batchnorm_train_backward(
                    dims,
                    xhat,
                    inv_std,
                    self.value(*gamma).data(),
                    grad,
                    dx.as_deref_mut(),
                    dg.as_deref_mut(),
                    dbeta.as_deref_mut(),
                );
                out.extend(dx.map(|g| (*x, g)));
                out.extend(dg.map(|g| (*gamma, g)));
                out.extend(dbeta.map(|g| (*beta, g)));
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let [n, c, h, w] = self.value(*x).dims4().expect("rank checked");
                let hw = h * w;
                let xs = self.value(*x).data();
                let gm = self.value(*gamma).data();
                let mut dx = vec![T::zero(); xs.len()];
                let mut dg = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                            let xn = (xs[i] - mean[ch]) * inv_std[ch];
                            dx[i] = grad[i] * gm[ch] * inv_std[ch];
                            dg[ch] = dg[ch] + grad[i] * xn;
                            dbeta[ch] = dbeta[ch] + grad[i];
                        }
                    }
                }
                out.push((*x, dx));
                out.push((*gamma, dg));
                out.push((*beta, dbeta));
            }
            Op::Relu { x } => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(grad)
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                out.push((*x, dx));
            }
            Op::Sigmoid { x } => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(grad)
                    .map(|(&s, &g)| g * s * (T::one() - s))
                    .collect();
                out.push((*x, dx));
            }
            Op::Concat { xs } => {
                let [n, c_total, h, w] = node.value.dims4().expect("rank checked");
                let hw = h * w;
                let mut offset = 0;
                for &v in xs {
                    let c = self.shape(v)[1];
                    if self.wants(v) {
                        let mut dv = Vec::with_capacity(n * c * hw);
                        for b in 0..n {
                            let start = (b * c_total + offset) * hw;
                            dv.extend_from_slice(&grad[start..start + c * hw]);
                        }
                        out.push((v, dv));
                    }
                    offset += c;
                }
            }
            Op::Add { a, b } => {
                out.push((*a, grad.to_vec()));
                out.push((*b, grad.to_vec()));
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                out.push((*a, grad.iter().zip(bv).map(|(&g, &y)| g * y).collect()));
                out.push((*b, grad.iter().zip(av).map(|(&g, &x)| g * x).collect()));
            }
            Op::Affine { x, scale } => {
                out.push((*x, grad.iter().map(|&g| g * *scale).collect()));
            }
            Op::Sum { x } => {
                out.push((*x, vec![grad[0]; self.value(*x).len()]));
            }
            Op::WeightedSum { terms } => {
                for &(v, w) in terms {
                    out.push((v, grad.iter().map(|&g| g * w).collect()));
                }
            }
            Op::Custom { inputs, function } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let grads = function.backward(&values, &node.value, grad);
                for (&v, g) in inputs.iter().zip(grads) {
                    if let Some(g) = g {
                        debug_assert_eq!(g.len(), self.value(v).len(), "{}: gradient length", function.name());
                        out.push((v, g));
                    }
                }
            }
        }
        out
    }
}

pub(crate) fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
