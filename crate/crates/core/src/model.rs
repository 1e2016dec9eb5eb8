//! The two-headed segmentation network.
//!
//! Encoder: four 3x3 conv + ReLU stages, with 2x average pooling between
//! them. Decoder: a 1x1 projection of every stage, nearest upsampling back
//! to full resolution, channel concatenation and a 3x3 fusion conv to K
//! class logits. Domain head: global average pool of the last stage (the
//! latent vector) followed by one affine map to M domain logits.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::MaskIndexed;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub num_domains: usize,
    pub stage_widths: [usize; 4],
    pub decoder_width: usize,
    pub input_size: (usize, usize),
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            num_classes: 6,
            num_domains: 3,
            stage_widths: [8, 16, 32, 64],
            decoder_width: 8,
            input_size: (32, 32),
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be positive".into()));
        }
        if self.num_classes < 2 || self.num_classes > 255 {
            return Err(Error::Config(format!("num_classes {} outside [2, 255]", self.num_classes)));
        }
        if self.num_domains < 2 {
            return Err(Error::Config(format!("num_domains {} must be at least 2", self.num_domains)));
        }
        if self.stage_widths.contains(&0) || self.decoder_width == 0 {
            return Err(Error::Config("stage and decoder widths must be positive".into()));
        }
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::Config(format!("input size {h}x{w} must be positive multiples of 8")));
        }
        Ok(())
    }

    /// Parameter names and shapes in construction order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut prev = self.in_channels;
        for (i, &w) in self.stage_widths.iter().enumerate() {
            let s = i + 1;
            out.push((format!("enc.stage{s}.conv.kernel"), vec![w, prev, 3, 3]));
            out.push((format!("enc.stage{s}.conv.bias"), vec![w]));
            prev = w;
        }
        for (i, &w) in self.stage_widths.iter().enumerate() {
            let s = i + 1;
            out.push((format!("dec.proj{s}.kernel"), vec![self.decoder_width, w, 1, 1]));
            out.push((format!("dec.proj{s}.bias"), vec![self.decoder_width]));
        }
        out.push(("dec.fuse.kernel".into(), vec![self.num_classes, 4 * self.decoder_width, 3, 3]));
        out.push(("dec.fuse.bias".into(), vec![self.num_classes]));
        out.push(("dom.head.weight".into(), vec![self.num_domains, self.stage_widths[3]]));
        out.push(("dom.head.bias".into(), vec![self.num_domains]));
        out
    }
}

/// Named parameter tensors of one network instance.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: ArchConfig,
    pub seed: u64,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Kernels and head weights uniform in `±sqrt(1 / fan_in)`, biases zero.
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seed::rng(seed, &[0x1417]);
        let mut tensors = BTreeMap::new();
        for (name, shape) in arch.param_shapes() {
            let len: usize = shape.iter().product();
            let data = if name.ends_with(".bias") {
                vec![0.0; len]
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let bound = (1.0 / fan_in as f64).sqrt();
                (0..len).map(|_| rng.random_range(-bound..bound)).collect()
            };
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        Ok(Self {
            arch: arch.clone(),
            seed,
            tensors,
        })
    }

    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against the architecture.
    pub fn from_tensors(arch: ArchConfig, seed: u64, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        arch.validate()?;
        let expected = arch.param_shapes();
        if expected.len() != tensors.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (name, shape) in &expected {
            match tensors.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Format(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Format(format!("missing parameter {name}"))),
            }
        }
        Ok(Self { arch, seed, tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Registers every parameter as a graph leaf.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), graph.leaf(v.clone(), trainable)))
            .collect();
        BoundParams { vars }
    }

    /// Forward pass without gradient tracking.
    pub fn infer(&self, images: &Tensor) -> Result<Prediction> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(images.clone());
        let out = forward(&mut g, &self.arch, &bound, x, 1.0)?;
        Ok(Prediction {
            seg_logits: g.value(out.seg_logits).clone(),
            domain_logits: g.value(out.domain_logits).clone(),
            latent: g.value(out.latent).clone(),
        })
    }
}

/// Parameters registered in a [`Graph`], by name.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("no parameter named {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Substitutes `var` for the parameter `name`.
    pub fn replace(&mut self, name: &str, var: Var) -> Result<()> {
        match self.vars.get_mut(name) {
            Some(slot) => {
                *slot = var;
                Ok(())
            }
            None => Err(Error::Contract(format!("no parameter named {name}"))),
        }
    }
}

/// Graph handles for the two heads and the pooled bottleneck.
#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    /// `[N, K, H, W]`
    pub seg_logits: Var,
    /// `[N, M]`
    pub domain_logits: Var,
    /// `[N, C_bottleneck]`
    pub latent: Var,
}

/// Materialized outputs of [`ModelParams::infer`].
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub seg_logits: Tensor,
    pub domain_logits: Tensor,
    pub latent: Tensor,
}

fn conv(g: &mut Graph, p: &BoundParams, prefix: &str, x: Var, pad: usize) -> Result<Var> {
    let k = p.var(&format!("{prefix}.kernel"))?;
    let b = p.var(&format!("{prefix}.bias"))?;
    g.conv2d(x, k, b, 1, pad)
}

/// Builds the network on `images` (`[N, C, H, W]`).
///
/// `domain_grad_scale` multiplies the gradient flowing from the domain head
/// back into the encoder; 1 is plain backpropagation, -1 a gradient
/// reversal.
pub fn forward(
    g: &mut Graph,
    arch: &ArchConfig,
    params: &BoundParams,
    images: Var,
    domain_grad_scale: f64,
) -> Result<ModelOutput> {
    let [_, c, h, w] = g.value(images).dims4()?;
    if c != arch.in_channels || (h, w) != arch.input_size {
        return Err(Error::Dimension(format!(
            "input is {c}x{h}x{w}, network expects {}x{}x{}",
            arch.in_channels, arch.input_size.0, arch.input_size.1
        )));
    }

    let mut stages = Vec::with_capacity(4);
    let mut x = images;
    for s in 1..=4 {
        if s > 1 {
            x = g.avg_pool(x, 2)?;
        }
        let y = conv(g, params, &format!("enc.stage{s}.conv"), x, 1)?;
        x = g.relu(y);
        stages.push(x);
    }

    let mut projected = Vec::with_capacity(4);
    for (i, &feat) in stages.iter().enumerate() {
        let p = conv(g, params, &format!("dec.proj{}", i + 1), feat, 0)?;
        let p = if i == 0 { p } else { g.upsample_nearest(p, 1 << i)? };
        projected.push(p);
    }
    let fused = g.concat_channels(&projected)?;
    let seg_logits = conv(g, params, "dec.fuse", fused, 1)?;

    let latent = g.global_average_pool(stages[3])?;
    let head_in = if domain_grad_scale == 1.0 {
        latent
    } else {
        g.scale_grad(latent, domain_grad_scale)
    };
    let domain_logits = g.linear(head_in, params.var("dom.head.weight")?, params.var("dom.head.bias")?)?;

    Ok(ModelOutput {
        seg_logits,
        domain_logits,
        latent,
    })
}

/// Per-pixel argmax over classes; ties go to the lowest class index.
pub fn predict_mask(seg_logits: &Tensor) -> Result<Vec<MaskIndexed>> {
    let [n, k, h, w] = seg_logits.dims4()?;
    let plane = h * w;
    let d = seg_logits.data();
    (0..n)
        .map(|s| {
            let values = (0..plane)
                .map(|p| {
                    let mut best = 0;
                    for c in 1..k {
                        if d[(s * k + c) * plane + p] > d[(s * k + best) * plane + p] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect();
            MaskIndexed::new(h, w, values)
        })
        .collect()
}
