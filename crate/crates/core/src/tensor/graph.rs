use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu(Var),
    Exp(Var),
    LogSoftmax {
        input: Var,
        k: usize,
        plane: usize,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    AvgPool {
        input: Var,
        factor: usize,
    },
    GlobalAvgPool(Var),
    Concat(Vec<Var>),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Mean(Var),
    GatherMean {
        input: Var,
        picks: Vec<usize>,
        // false where the floor clamped the value
        active: Vec<bool>,
    },
    SoftDice {
        probs: Var,
        indicator: Vec<f64>,
        weights: Vec<f64>,
        smoothing: f64,
        overlap: f64,
        denom: f64,
    },
    ScaleGrad(Var, f64),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, kernel, bias, .. } => vec![*input, *kernel, *bias],
            Op::Linear { input, weight, bias } => vec![*input, *weight, *bias],
            Op::Relu(v) | Op::Exp(v) | Op::GlobalAvgPool(v) | Op::Mean(v) => vec![*v],
            Op::Scale(v, _) | Op::ScaleGrad(v, _) => vec![*v],
            Op::LogSoftmax { input, .. }
            | Op::Upsample { input, .. }
            | Op::AvgPool { input, .. }
            | Op::GatherMean { input, .. } => vec![*input],
            Op::SoftDice { probs, .. } => vec![*probs],
            Op::Concat(vs) => vs.clone(),
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Append-only record of tensor operations supporting reverse-mode
/// differentiation.
///
/// Every node's inputs precede it, so reverse insertion order is a valid
/// reverse topological order. Gradients persist only on leaves and
/// accumulate across [`Graph::backward`] calls until [`Graph::zero_grad`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// 2-d cross-correlation over NCHW input with an `[F, C, kh, kw]` kernel and
    /// a per-filter bias.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        let [f, kc, kh, kw] = self.value(kernel).dims4()?;
        if kc != c {
            return Err(Error::Dimension(format!(
                "conv2d kernel expects {kc} input channels, input has {c}"
            )));
        }
        if self.value(bias).shape() != [f] {
            return Err(Error::Dimension(format!(
                "conv2d bias shape {:?} does not match {f} filters",
                self.value(bias).shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Config(format!("conv2d kernel {kh}x{kw} must have odd sides")));
        }
        let span_h = (h + 2 * padding)
            .checked_sub(kh)
            .ok_or_else(|| Error::Config(format!("kernel height {kh} exceeds padded input {h}")))?;
        let span_w = (w + 2 * padding)
            .checked_sub(kw)
            .ok_or_else(|| Error::Config(format!("kernel width {kw} exceeds padded input {w}")))?;
        if span_h % stride != 0 || span_w % stride != 0 {
            return Err(Error::Config(format!(
                "conv2d output size is not integral for {h}x{w}, kernel {kh}x{kw}, stride {stride}, padding {padding}"
            )));
        }
        let geom = ConvGeom {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            stride,
            pad: padding,
            oh: span_h / stride + 1,
            ow: span_w / stride + 1,
        };
        let data = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            geom,
        );
        let value = Tensor::new(vec![n, f, geom.oh, geom.ow], data)?;
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, geom }))
    }

    /// Affine map `[N, C] -> [N, M]` with weight `[M, C]` and bias `[M]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let [n, c] = self.value(input).dims2()?;
        let [m, wc] = self.value(weight).dims2()?;
        if wc != c || self.value(bias).shape() != [m] {
            return Err(Error::Dimension(format!(
                "linear: input {:?}, weight {:?}, bias {:?}",
                self.shape(input),
                self.shape(weight),
                self.shape(bias)
            )));
        }
        let data = kernels::linear_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            n,
            c,
            m,
        );
        let value = Tensor::new(vec![n, m], data)?;
        Ok(self.push(value, Op::Linear { input, weight, bias }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let src = self.value(input);
        let data = src.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor {
            shape: src.shape().to_vec(),
            data,
        };
        self.push(value, Op::Relu(input))
    }

    pub fn exp(&mut self, input: Var) -> Var {
        let src = self.value(input);
        let data = src.data().iter().map(|v| v.exp()).collect();
        let value = Tensor {
            shape: src.shape().to_vec(),
            data,
        };
        self.push(value, Op::Exp(input))
    }

    /// Log-softmax over axis 1 of an `[N, K, H, W]` or `[N, K]` tensor.
    pub fn log_softmax_channelwise(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let (n, k, plane) = match shape.as_slice() {
            &[n, k] => (n, k, 1),
            &[n, k, h, w] => (n, k, h * w),
            s => {
                return Err(Error::Dimension(format!(
                    "log_softmax expects [N,K] or [N,K,H,W], got {s:?}"
                )))
            }
        };
        if k < 2 {
            return Err(Error::Config(format!("log_softmax needs at least 2 channels, got {k}")));
        }
        let data = kernels::log_softmax(self.value(input).data(), n, k, plane);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::LogSoftmax { input, k, plane }))
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        if factor == 0 {
            return Err(Error::Config("upsample factor must be positive".into()));
        }
        let data = kernels::upsample_nearest(self.value(input).data(), n * c, h, w, factor);
        let value = Tensor::new(vec![n, c, h * factor, w * factor], data)?;
        Ok(self.push(value, Op::Upsample { input, factor }))
    }

    /// Non-overlapping `factor x factor` average pooling.
    pub fn avg_pool(&mut self, input: Var, factor: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::Dimension(format!(
                "avg_pool factor {factor} does not divide {h}x{w}"
            )));
        }
        let inv = 1.0 / (factor * factor) as f64;
        let mut data = kernels::block_sum(self.value(input).data(), n * c, h, w, factor);
        data.iter_mut().for_each(|v| *v *= inv);
        let value = Tensor::new(vec![n, c, h / factor, w / factor], data)?;
        Ok(self.push(value, Op::AvgPool { input, factor }))
    }

    /// Mean over the spatial axes: `[N, C, H, W] -> [N, C]`.
    pub fn global_average_pool(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        let plane = h * w;
        let data = self
            .value(input)
            .data()
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        let value = Tensor::new(vec![n, c], data)?;
        Ok(self.push(value, Op::GlobalAvgPool(input)))
    }

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let [n, _, h, w] = self.value(first).dims4()?;
        let mut channels = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let [vn, vc, vh, vw] = self.value(v).dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::Dimension(format!(
                    "concat: {:?} does not match [{n}, _, {h}, {w}]",
                    self.shape(v)
                )));
            }
            channels.push(vc);
        }
        let total: usize = channels.iter().sum();
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total * plane);
        for s in 0..n {
            for (&v, &c) in inputs.iter().zip(&channels) {
                data.extend_from_slice(&self.value(v).data()[s * c * plane..][..c * plane]);
            }
        }
        let value = Tensor::new(vec![n, total, h, w], data)?;
        Ok(self.push(value, Op::Concat(inputs.to_vec())))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let src = self.value(input);
        let data = src.data().iter().map(|v| v * factor).collect();
        let value = Tensor {
            shape: src.shape().to_vec(),
            data,
        };
        self.push(value, Op::Scale(input, factor))
    }

    /// Mean of all elements, as a one-element tensor.
    pub fn mean(&mut self, input: Var) -> Var {
        let src = self.value(input);
        let m = src.data().iter().sum::<f64>() / src.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(input))
    }

    /// Identity in the forward pass; multiplies the incoming gradient by
    /// `factor` in the backward pass. `factor = -1` is a gradient reversal.
    pub fn scale_grad(&mut self, input: Var, factor: f64) -> Var {
        let value = self.value(input).clone();
        self.push(value, Op::ScaleGrad(input, factor))
    }

    /// Mean of the elements at flat positions `picks`, each first raised to
    /// `floor` when given. An empty pick list yields 0.
    pub fn gather_mean(&mut self, input: Var, picks: Vec<usize>, floor: Option<f64>) -> Result<Var> {
        let src = self.value(input).data();
        if let Some(&bad) = picks.iter().find(|&&p| p >= src.len()) {
            return Err(Error::Dimension(format!(
                "gather index {bad} out of range for {} elements",
                src.len()
            )));
        }
        let mut sum = 0.0;
        let mut active = Vec::with_capacity(picks.len());
        for &p in &picks {
            let v = src[p];
            match floor {
                Some(lo) if v < lo => {
                    sum += lo;
                    active.push(false);
                }
                _ => {
                    sum += v;
                    active.push(true);
                }
            }
        }
        let m = if picks.is_empty() {
            0.0
        } else {
            sum / picks.len() as f64
        };
        Ok(self.push(Tensor::scalar(m), Op::GatherMean { input, picks, active }))
    }

    /// Soft Dice loss `1 - (2 sum(w g s) + eps) / (sum(w g) + sum(w s) + eps)`
    /// between `probs` (s) and a fixed indicator `g`, with per-element
    /// inclusion weights `w`.
    pub fn soft_dice(&mut self, probs: Var, indicator: Vec<f64>, weights: Vec<f64>, smoothing: f64) -> Result<Var> {
        let s = self.value(probs).data();
        if indicator.len() != s.len() || weights.len() != s.len() {
            return Err(Error::Dimension(format!(
                "soft_dice: {} probabilities, {} indicators, {} weights",
                s.len(),
                indicator.len(),
                weights.len()
            )));
        }
        let mut overlap = 0.0;
        let mut sum_g = 0.0;
        let mut sum_s = 0.0;
        for ((&sv, &gv), &wv) in s.iter().zip(&indicator).zip(&weights) {
            overlap += wv * gv * sv;
            sum_g += wv * gv;
            sum_s += wv * sv;
        }
        let denom = sum_g + sum_s + smoothing;
        if denom == 0.0 {
            return Err(Error::Config(
                "soft_dice: empty masks need a positive smoothing term".into(),
            ));
        }
        let loss = 1.0 - (2.0 * overlap + smoothing) / denom;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftDice {
                probs,
                indicator,
                weights,
                smoothing,
                overlap,
                denom,
            },
        ))
    }

    /// Reverse-mode sweep from a one-element `loss`, seeding its gradient
    /// with 1 and adding the results into every reachable leaf that requires
    /// a gradient. Calling this twice without [`Graph::zero_grad`] doubles
    /// the leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            match &self.nodes[i].op {
                Op::Leaf => leaf_grads.push((i, gout)),
                op => self.backward_op(i, op, &gout, &mut grads)?,
            }
        }
        for (i, g) in leaf_grads {
            let slot = &mut self.nodes[i].grad;
            match slot {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contribution: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
            slot => *slot = Some(contribution),
        }
    }

    fn backward_op(&self, idx: usize, op: &Op, gout: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let out = &self.nodes[idx].value;
        match op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, geom } => {
                if self.requires_grad(*input) {
                    let g = kernels::conv2d_backward_input(self.value(*kernel).data(), gout, *geom);
                    self.accumulate(grads, *input, g);
                }
                if self.requires_grad(*kernel) {
                    let g = kernels::conv2d_backward_kernel(self.value(*input).data(), gout, *geom);
                    self.accumulate(grads, *kernel, g);
                }
                if self.requires_grad(*bias) {
                    self.accumulate(grads, *bias, kernels::conv2d_backward_bias(gout, *geom));
                }
            }
            Op::Linear { input, weight, bias } => {
                let [n, c] = self.value(*input).dims2()?;
                let m = self.value(*bias).len();
                let x = self.value(*input).data();
                let wt = self.value(*weight).data();
                if self.requires_grad(*input) {
                    let mut g = vec![0.0; n * c];
                    for s in 0..n {
                        for j in 0..m {
                            let go = gout[s * m + j];
                            for k in 0..c {
                                g[s * c + k] += go * wt[j * c + k];
                            }
                        }
                    }
                    self.accumulate(grads, *input, g);
                }
                if self.requires_grad(*weight) {
                    let mut g = vec![0.0; m * c];
                    for s in 0..n {
                        for j in 0..m {
                            let go = gout[s * m + j];
                            for k in 0..c {
                                g[j * c + k] += go * x[s * c + k];
                            }
                        }
                    }
                    self.accumulate(grads, *weight, g);
                }
                if self.requires_grad(*bias) {
                    let mut g = vec![0.0; m];
                    for s in 0..n {
                        for j in 0..m {
                            g[j] += gout[s * m + j];
                        }
                    }
                    self.accumulate(grads, *bias, g);
                }
            }
            Op::Relu(input) => {
                let g = self
                    .value(*input)
                    .data()
                    .iter()
                    .zip(gout)
                    .map(|(&x, &go)| if x > 0.0 { go } else { 0.0 })
                    .collect();
                self.accumulate(grads, *input, g);
            }
            Op::Exp(input) => {
                let g = out.data().iter().zip(gout).map(|(o, go)| o * go).collect();
                self.accumulate(grads, *input, g);
            }
            Op::LogSoftmax { input, k, plane } => {
                let g = kernels::log_softmax_backward(out.data(), gout, *k, *plane);
                self.accumulate(grads, *input, g);
            }
            Op::Upsample { input, factor } => {
                let [n, c, h, w] = out.dims4()?;
                let g = kernels::block_sum(gout, n * c, h, w, *factor);
                self.accumulate(grads, *input, g);
            }
            Op::AvgPool { input, factor } => {
                let [n, c, h, w] = out.dims4()?;
                let inv = 1.0 / (factor * factor) as f64;
                let mut g = kernels::upsample_nearest(gout, n * c, h, w, *factor);
                g.iter_mut().for_each(|v| *v *= inv);
                self.accumulate(grads, *input, g);
            }
            Op::GlobalAvgPool(input) => {
                let [_, _, h, w] = self.value(*input).dims4()?;
                let plane = h * w;
                let inv = 1.0 / plane as f64;
                let g = gout
                    .iter()
                    .flat_map(|&go| std::iter::repeat_n(go * inv, plane))
                    .collect();
                self.accumulate(grads, *input, g);
            }
            Op::Concat(inputs) => {
                let [n, total, h, w] = out.dims4()?;
                let plane = h * w;
                let mut offset = 0;
                for &v in inputs {
                    let c = self.shape(v)[1];
                    if self.requires_grad(v) {
                        let mut g = Vec::with_capacity(n * c * plane);
                        for s in 0..n {
                            g.extend_from_slice(&gout[(s * total + offset) * plane..][..c * plane]);
                        }
                        self.accumulate(grads, v, g);
                    }
                    offset += c;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gout.to_vec());
                self.accumulate(grads, *b, gout.to_vec());
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let ga = gout.iter().zip(bv).map(|(g, y)| g * y).collect();
                let gb = gout.iter().zip(av).map(|(g, x)| g * x).collect();
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Scale(input, factor) | Op::ScaleGrad(input, factor) => {
                self.accumulate(grads, *input, gout.iter().map(|g| g * factor).collect());
            }
            Op::Mean(input) => {
                let n = self.value(*input).len();
                self.accumulate(grads, *input, vec![gout[0] / n as f64; n]);
            }
            Op::GatherMean { input, picks, active } => {
                let mut g = vec![0.0; self.value(*input).len()];
                if !picks.is_empty() {
                    let share = gout[0] / picks.len() as f64;
                    for (&p, &a) in picks.iter().zip(active) {
                        if a {
                            g[p] += share;
                        }
                    }
                }
                self.accumulate(grads, *input, g);
            }
            Op::SoftDice {
                probs,
                indicator,
                weights,
                smoothing,
                overlap,
                denom,
            } => {
                let numer = 2.0 * overlap + smoothing;
                let d2 = denom * denom;
                let g = indicator
                    .iter()
                    .zip(weights)
                    .map(|(&gv, &wv)| -gout[0] * wv * (2.0 * gv * denom - numer) / d2)
                    .collect();
                self.accumulate(grads, *probs, g);
            }
        }
        Ok(())
    }
}
