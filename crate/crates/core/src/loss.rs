//! The training objective `L = L0 + lambda1 * L1 + lambda2 * L2`:
//! pixel-wise cross-entropy, soft Dice, and the domain-misalignment term.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{MaskIndexed, IGNORE};
use crate::error::{Error, Result};
use crate::model::ModelOutput;
use crate::tensor::{Graph, Tensor, Var};

pub const DEFAULT_EPS_CLAMP: f64 = 1e-7;
pub const DEFAULT_DICE_SMOOTHING: f64 = 1e-6;

/// How the domain-misalignment term trains the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainLossMode {
    /// Minimize the mean log-probability of the true domain directly.
    #[default]
    Literal,
    /// The domain head minimizes cross-entropy on the domain tags while a
    /// gradient reversal sends the encoder the opposite signal.
    AdversarialReversal,
}

impl DomainLossMode {
    /// Gradient multiplier between the encoder bottleneck and the domain head.
    pub fn encoder_grad_scale(self) -> f64 {
        match self {
            DomainLossMode::Literal => 1.0,
            DomainLossMode::AdversarialReversal => -1.0,
        }
    }
}

impl FromStr for DomainLossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(Self::Literal),
            "adversarial_reversal" => Ok(Self::AdversarialReversal),
            other => Err(Error::Config(format!("unknown domain loss mode {other:?}"))),
        }
    }
}

impl fmt::Display for DomainLossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Literal => "literal",
            Self::AdversarialReversal => "adversarial_reversal",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub mode: DomainLossMode,
    pub eps_clamp: f64,
    pub dice_smoothing: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            mode: DomainLossMode::Literal,
            eps_clamp: DEFAULT_EPS_CLAMP,
            dice_smoothing: DEFAULT_DICE_SMOOTHING,
        }
    }
}

/// The three loss terms, their weights and the weighted total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l0: f64,
    pub l1: f64,
    pub l2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `l0 + lambda1 * l1 + lambda2 * l2`, in the same order the graph uses.
    pub fn weighted_sum(&self) -> f64 {
        self.l0 + self.lambda1 * self.l1 + self.lambda2 * self.l2
    }

    /// Names the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<(&'static str, f64)> {
        [("l0", self.l0), ("l1", self.l1), ("l2", self.l2), ("total", self.total)]
            .into_iter()
            .find(|(_, v)| !v.is_finite())
    }
}

/// Per-pixel class probabilities `[N, K, H, W]`.
#[derive(Clone, Copy, Debug)]
pub struct SoftMask(pub Var);

pub fn soft_mask(g: &mut Graph, seg_logits: Var) -> Result<SoftMask> {
    let logp = g.log_softmax_channelwise(seg_logits)?;
    Ok(SoftMask(g.exp(logp)))
}

fn check_masks(g: &Graph, logits: Var, truth: &[MaskIndexed]) -> Result<[usize; 4]> {
    let dims = g.value(logits).dims4()?;
    let [n, _, h, w] = dims;
    if truth.len() != n {
        return Err(Error::Dimension(format!("{} masks for a batch of {n}", truth.len())));
    }
    if let Some(m) = truth.iter().find(|m| (m.height(), m.width()) != (h, w)) {
        return Err(Error::Dimension(format!(
            "mask {}x{} does not match logits {h}x{w}",
            m.height(),
            m.width()
        )));
    }
    Ok(dims)
}

/// Mean over non-ignored pixels of `-log softmax(logits)[true class]`.
pub fn cross_entropy_pixelwise(
    g: &mut Graph,
    seg_logits: Var,
    truth: &[MaskIndexed],
    ignore_index: Option<u8>,
) -> Result<Var> {
    let [_, k, h, w] = check_masks(g, seg_logits, truth)?;
    let plane = h * w;
    let mut picks = Vec::new();
    for (s, m) in truth.iter().enumerate() {
        for (p, &t) in m.values().iter().enumerate() {
            if Some(t) == ignore_index {
                continue;
            }
            if t as usize >= k {
                return Err(Error::Label(format!("class {t} in a {k}-class problem")));
            }
            picks.push((s * k + t as usize) * plane + p);
        }
    }
    let logp = g.log_softmax_channelwise(seg_logits)?;
    let mean = g.gather_mean(logp, picks, None)?;
    Ok(g.scale(mean, -1.0))
}

/// Soft Dice loss between `probs` and a fixed indicator, counting only
/// entries with weight 1.
pub fn soft_dice(g: &mut Graph, probs: Var, indicator: Vec<f64>, weights: Vec<f64>, smoothing: f64) -> Result<Var> {
    g.soft_dice(probs, indicator, weights, smoothing)
}

/// Dice loss with one-hot ground truth, summing over samples, pixels and
/// classes together. Ignored pixels drop out of every sum.
pub fn dice_loss(g: &mut Graph, soft: SoftMask, truth: &[MaskIndexed], smoothing: f64) -> Result<Var> {
    let [_, k, h, w] = check_masks(g, soft.0, truth)?;
    let plane = h * w;
    let len = g.value(soft.0).len();
    let mut indicator = vec![0.0; len];
    let mut weights = vec![0.0; len];
    for (s, m) in truth.iter().enumerate() {
        for (p, &t) in m.values().iter().enumerate() {
            if t == IGNORE {
                continue;
            }
            if t as usize >= k {
                return Err(Error::Label(format!("class {t} in a {k}-class problem")));
            }
            for c in 0..k {
                weights[(s * k + c) * plane + p] = 1.0;
            }
            indicator[(s * k + t as usize) * plane + p] = 1.0;
        }
    }
    soft_dice(g, soft.0, indicator, weights, smoothing)
}

/// `(1/J) sum_j log softmax(domain_logits_j)[z_j]`, with each probability
/// floored at `eps_clamp`. Always in `[ln eps_clamp, 0]`.
pub fn domain_misalignment_loss(g: &mut Graph, domain_logits: Var, true_domains: &[usize], eps_clamp: f64) -> Result<Var> {
    let [j, m] = g.value(domain_logits).dims2()?;
    if true_domains.len() != j {
        return Err(Error::Dimension(format!("{} domain labels for {j} samples", true_domains.len())));
    }
    if !(eps_clamp > 0.0 && eps_clamp < 1.0) {
        return Err(Error::Config(format!("eps_clamp {eps_clamp} outside (0, 1)")));
    }
    let picks = true_domains
        .iter()
        .enumerate()
        .map(|(s, &z)| {
            if z >= m {
                Err(Error::Label(format!("domain label {z} with only {m} domains")))
            } else {
                Ok(s * m + z)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let logp = g.log_softmax_channelwise(domain_logits)?;
    g.gather_mean(logp, picks, Some(eps_clamp.ln()))
}

/// Builds the full objective for one batch.
///
/// `truth[i]` is `None` for unlabelled samples; L0 and L1 see labelled
/// samples only, L2 sees all of them. With no labelled sample L0 = L1 = 0.
/// In [`DomainLossMode::AdversarialReversal`] the caller must have built
/// the forward pass with [`DomainLossMode::encoder_grad_scale`].
pub fn total_loss(
    g: &mut Graph,
    output: &ModelOutput,
    truth: &[Option<MaskIndexed>],
    domains: &[usize],
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    if cfg.lambda1 < 0.0 || cfg.lambda2 < 0.0 {
        return Err(Error::Config("loss weights must be non-negative".into()));
    }
    let [n, _, h, w] = g.value(output.seg_logits).dims4()?;
    let labelled = truth.iter().any(Option::is_some);
    if !labelled && domains.is_empty() {
        return Err(Error::Contract("batch has neither masks nor domain tags".into()));
    }
    if truth.len() != n {
        return Err(Error::Dimension(format!("{} mask slots for a batch of {n}", truth.len())));
    }

    let (l0, l1) = if labelled {
        let masks = truth
            .iter()
            .map(|t| match t {
                Some(m) => Ok(m.clone()),
                None => MaskIndexed::filled(h, w, IGNORE),
            })
            .collect::<Result<Vec<_>>>()?;
        let l0 = cross_entropy_pixelwise(g, output.seg_logits, &masks, Some(IGNORE))?;
        let soft = soft_mask(g, output.seg_logits)?;
        let l1 = dice_loss(g, soft, &masks, cfg.dice_smoothing)?;
        (l0, l1)
    } else {
        (g.constant(Tensor::scalar(0.0)), g.constant(Tensor::scalar(0.0)))
    };

    let l2 = if domains.is_empty() {
        g.constant(Tensor::scalar(0.0))
    } else {
        let raw = domain_misalignment_loss(g, output.domain_logits, domains, cfg.eps_clamp)?;
        match cfg.mode {
            DomainLossMode::Literal => raw,
            DomainLossMode::AdversarialReversal => g.scale_grad(raw, -1.0),
        }
    };

    let w1 = g.scale(l1, cfg.lambda1);
    let w2 = g.scale(l2, cfg.lambda2);
    let partial = g.add(l0, w1)?;
    let total = g.add(partial, w2)?;
    let item = |g: &Graph, v: Var| g.value(v).item();
    let breakdown = LossBreakdown {
        l0: item(g, l0)?,
        l1: item(g, l1)?,
        l2: item(g, l2)?,
        lambda1: cfg.lambda1,
        lambda2: cfg.lambda2,
        total: item(g, total)?,
    };
    Ok((total, breakdown))
}
