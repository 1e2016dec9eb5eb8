//! Finite-difference gradient checks over every differentiable operation,
//! each loss term and the full objective through the network, on small
//! random inputs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{MaskIndexed, IGNORE};
use crate::error::Result;
use crate::loss::{self, LossConfig};
use crate::model::{forward, ArchConfig, ModelParams};
use crate::seed;
use crate::tensor::gradcheck::{compare_gradients, finite_difference_check_subset};
use crate::tensor::{Graph, Tensor, Var};

pub const GRAD_STEP: f64 = 1e-6;
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Worst relative error of one named check across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub seeds: u64,
    pub worst_rel_error: f64,
    pub passed: bool,
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("positive dims")
}

// Values in ±[0.1, 1], so ReLU kinks stay far from the step size.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::new(shape, data).expect("positive dims")
}

/// Reduces `y` to a scalar with fixed random weights so every output element
/// carries a distinct gradient.
fn weighted_sum(g: &mut Graph, y: Var, rng_seed: u64) -> Result<Var> {
    let mut rng = seed::rng(rng_seed, &[0x5e1f]);
    let w = uniform(&mut rng, g.shape(y).to_vec(), -1.0, 1.0);
    let n = w.len() as f64;
    let wv = g.constant(w);
    let p = g.mul(y, wv)?;
    let m = g.mean(p);
    Ok(g.scale(m, n))
}

struct Case {
    point: Tensor,
    f: Box<dyn Fn(&mut Graph, Var) -> Result<Var> + Sync>,
}

fn run_cases(name: &str, seeds: u64, make: impl Fn(u64) -> Case) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    let mut passed = true;
    for s in 0..seeds {
        let case = make(s);
        let r = finite_difference_check_subset(&case.f, &case.point, GRAD_STEP, GRAD_TOLERANCE, None)?;
        passed &= r.passed;
        worst = if r.max_rel_error.is_nan() { f64::INFINITY } else { worst.max(r.max_rel_error) };
    }
    Ok(CheckOutcome {
        name: name.to_string(),
        seeds,
        worst_rel_error: worst,
        passed,
    })
}

fn conv_case(s: u64, wrt: usize, stride: usize, pad: usize) -> Case {
    let mut rng = seed::rng(s, &[0xc0, wrt as u64, stride as u64]);
    let (c, f, h) = (2, 3, 7 + stride);
    let h = if (h + 2 * pad - 3).is_multiple_of(stride) { h } else { h + 1 };
    let x = uniform(&mut rng, vec![1, c, h, h], -1.0, 1.0);
    let k = uniform(&mut rng, vec![f, c, 3, 3], -1.0, 1.0);
    let b = uniform(&mut rng, vec![f], -1.0, 1.0);
    let parts = [x, k, b];
    let point = parts[wrt].clone();
    Case {
        point,
        f: Box::new(move |g, v| {
            let mut vars = parts.clone().map(|t| g.constant(t));
            vars[wrt] = v;
            let y = g.conv2d(vars[0], vars[1], vars[2], stride, pad)?;
            weighted_sum(g, y, s)
        }),
    }
}

fn unary_case(s: u64, shape: Vec<usize>, op: fn(&mut Graph, Var) -> Result<Var>) -> Case {
    let mut rng = seed::rng(s, &[0x0a, shape.len() as u64]);
    Case {
        point: away_from_zero(&mut rng, shape),
        f: Box::new(move |g, v| {
            let y = op(g, v)?;
            weighted_sum(g, y, s)
        }),
    }
}

fn binary_case(s: u64, first: bool, op: fn(&mut Graph, Var, Var) -> Result<Var>) -> Case {
    let mut rng = seed::rng(s, &[0xb1, first as u64]);
    let a = uniform(&mut rng, vec![1, 2, 4, 4], -1.0, 1.0);
    let b = uniform(&mut rng, vec![1, 2, 4, 4], -1.0, 1.0);
    let other = if first { b.clone() } else { a.clone() };
    Case {
        point: if first { a } else { b },
        f: Box::new(move |g, v| {
            let o = g.constant(other.clone());
            let y = if first { op(g, v, o)? } else { op(g, o, v)? };
            weighted_sum(g, y, s)
        }),
    }
}

fn linear_case(s: u64, wrt: usize) -> Case {
    let mut rng = seed::rng(s, &[0x11, wrt as u64]);
    let parts = [
        uniform(&mut rng, vec![3, 5], -1.0, 1.0),
        uniform(&mut rng, vec![4, 5], -1.0, 1.0),
        uniform(&mut rng, vec![4], -1.0, 1.0),
    ];
    Case {
        point: parts[wrt].clone(),
        f: Box::new(move |g, v| {
            let mut vars = parts.clone().map(|t| g.constant(t));
            vars[wrt] = v;
            let y = g.linear(vars[0], vars[1], vars[2])?;
            weighted_sum(g, y, s)
        }),
    }
}

fn concat_case(s: u64, wrt: usize) -> Case {
    let mut rng = seed::rng(s, &[0xca, wrt as u64]);
    let parts = [
        uniform(&mut rng, vec![2, 1, 3, 3], -1.0, 1.0),
        uniform(&mut rng, vec![2, 2, 3, 3], -1.0, 1.0),
    ];
    Case {
        point: parts[wrt].clone(),
        f: Box::new(move |g, v| {
            let mut vars = parts.clone().map(|t| g.constant(t));
            vars[wrt] = v;
            let y = g.concat_channels(&vars)?;
            weighted_sum(g, y, s)
        }),
    }
}

fn gather_case(s: u64) -> Case {
    let mut rng = seed::rng(s, &[0x6a]);
    let x = uniform(&mut rng, vec![2, 3, 2, 2], -2.0, 2.0);
    let picks: Vec<usize> = (0..10).map(|_| rng.random_range(0..x.len())).collect();
    // values near the floor are nudged off the kink
    let floor = -1.5;
    Case {
        point: Tensor::new(
            x.shape().to_vec(),
            x.data().iter().map(|&v| if (v - floor).abs() < 0.05 { v + 0.1 } else { v }).collect(),
        )
        .expect("same shape"),
        f: Box::new(move |g, v| g.gather_mean(v, picks.clone(), Some(floor))),
    }
}

fn soft_dice_case(s: u64) -> Case {
    let mut rng = seed::rng(s, &[0xd1]);
    let probs = uniform(&mut rng, vec![1, 2, 4, 4], 0.05, 0.95);
    let n = probs.len();
    let indicator: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
    let weights: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.9) { 1.0 } else { 0.0 }).collect();
    Case {
        point: probs,
        f: Box::new(move |g, v| g.soft_dice(v, indicator.clone(), weights.clone(), 1e-6)),
    }
}

/// Checks `scale_grad`: its gradient must equal `factor` times the numeric
/// derivative of the identity it computes.
fn scale_grad_check(seeds: u64) -> Result<CheckOutcome> {
    let factor = -0.7;
    let mut worst = 0.0f64;
    let mut passed = true;
    for s in 0..seeds {
        let mut rng = seed::rng(s, &[0x56]);
        let x = uniform(&mut rng, vec![1, 2, 3, 3], -1.0, 1.0);
        let mut g = Graph::new();
        let v = g.param(x.clone());
        let y = g.scale_grad(v, factor);
        let out = weighted_sum(&mut g, y, s)?;
        g.backward(out)?;
        let undone: Vec<f64> = g.grad(v).expect("param").iter().map(|d| d / factor).collect();
        let eval = |t: &Tensor| {
            let mut g = Graph::new();
            let v = g.constant(t.clone());
            let y = g.scale_grad(v, factor);
            let out = weighted_sum(&mut g, y, s)?;
            g.value(out).item()
        };
        let r = compare_gradients(eval, &x, &undone, GRAD_STEP, GRAD_TOLERANCE, None)?;
        passed &= r.passed;
        worst = worst.max(r.max_rel_error);
    }
    Ok(CheckOutcome {
        name: "scale_grad".into(),
        seeds,
        worst_rel_error: worst,
        passed,
    })
}

/// Every tensor primitive, checked against central differences on
/// `seeds` random inputs each.
pub fn primitive_checks(seeds: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for (wrt, label) in ["input", "kernel", "bias"].iter().enumerate() {
        out.push(run_cases(&format!("conv2d/{label}"), seeds, |s| conv_case(s, wrt, 1, 1))?);
        out.push(run_cases(&format!("conv2d_stride2/{label}"), seeds, |s| conv_case(s, wrt, 2, 0))?);
    }
    for (wrt, label) in ["input", "weight", "bias"].iter().enumerate() {
        out.push(run_cases(&format!("linear/{label}"), seeds, |s| linear_case(s, wrt))?);
    }
    out.push(run_cases("relu", seeds, |s| unary_case(s, vec![1, 2, 4, 4], |g, v| Ok(g.relu(v))))?);
    out.push(run_cases("exp", seeds, |s| unary_case(s, vec![1, 2, 4, 4], |g, v| Ok(g.exp(v))))?);
    out.push(run_cases("log_softmax/4d", seeds, |s| {
        unary_case(s, vec![2, 3, 3, 3], |g, v| g.log_softmax_channelwise(v))
    })?);
    out.push(run_cases("log_softmax/2d", seeds, |s| {
        unary_case(s, vec![3, 4], |g, v| g.log_softmax_channelwise(v))
    })?);
    out.push(run_cases("upsample_nearest", seeds, |s| {
        unary_case(s, vec![1, 2, 3, 3], |g, v| g.upsample_nearest(v, 2))
    })?);
    out.push(run_cases("avg_pool", seeds, |s| unary_case(s, vec![1, 2, 4, 4], |g, v| g.avg_pool(v, 2)))?);
    out.push(run_cases("global_average_pool", seeds, |s| {
        unary_case(s, vec![2, 3, 4, 4], |g, v| g.global_average_pool(v))
    })?);
    out.push(run_cases("scale", seeds, |s| unary_case(s, vec![1, 2, 3, 3], |g, v| Ok(g.scale(v, -2.5))))?);
    out.push(run_cases("mean", seeds, |s| {
        unary_case(s, vec![1, 2, 3, 3], |g, v| {
            let m = g.mean(v);
            Ok(g.scale(m, 3.0))
        })
    })?);
    for (wrt, label) in ["a", "b"].iter().enumerate() {
        out.push(run_cases(&format!("concat_channels/{label}"), seeds, |s| concat_case(s, wrt))?);
        out.push(run_cases(&format!("add/{label}"), seeds, |s| binary_case(s, wrt == 0, |g, a, b| g.add(a, b)))?);
        out.push(run_cases(&format!("mul/{label}"), seeds, |s| binary_case(s, wrt == 0, |g, a, b| g.mul(a, b)))?);
    }
    out.push(run_cases("gather_mean", seeds, gather_case)?);
    out.push(run_cases("soft_dice", seeds, soft_dice_case)?);
    out.push(scale_grad_check(seeds)?);
    Ok(out)
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, k: usize) -> MaskIndexed {
    let values = (0..h * w)
        .map(|_| if rng.random_bool(0.1) { IGNORE } else { rng.random_range(0..k as u8) })
        .collect();
    MaskIndexed::new(h, w, values).expect("valid dims")
}

/// Each loss term against its logits on random 8x8 single-sample inputs.
pub fn loss_checks(seeds: u64) -> Result<Vec<CheckOutcome>> {
    let k = 4;
    let ce = run_cases("cross_entropy", seeds, |s| {
        let mut rng = seed::rng(s, &[0x1c]);
        let truth = random_mask(&mut rng, 8, 8, k);
        Case {
            point: uniform(&mut rng, vec![1, k, 8, 8], -3.0, 3.0),
            f: Box::new(move |g, v| loss::cross_entropy_pixelwise(g, v, std::slice::from_ref(&truth), Some(IGNORE))),
        }
    })?;
    let dice = run_cases("dice", seeds, |s| {
        let mut rng = seed::rng(s, &[0xd2]);
        let truth = random_mask(&mut rng, 8, 8, k);
        Case {
            point: uniform(&mut rng, vec![1, k, 8, 8], -3.0, 3.0),
            f: Box::new(move |g, v| {
                let soft = loss::soft_mask(g, v)?;
                loss::dice_loss(g, soft, std::slice::from_ref(&truth), loss::DEFAULT_DICE_SMOOTHING)
            }),
        }
    })?;
    let l2 = run_cases("domain_misalignment", seeds, |s| {
        let mut rng = seed::rng(s, &[0xd3]);
        let z = vec![rng.random_range(0..3)];
        Case {
            point: uniform(&mut rng, vec![1, 3], -3.0, 3.0),
            f: Box::new(move |g, v| loss::domain_misalignment_loss(g, v, &z, loss::DEFAULT_EPS_CLAMP)),
        }
    })?;
    Ok(vec![ce, dice, l2])
}

/// The literal-mode objective against every named parameter of a network on
/// a single 16x16 labelled sample, at `coords_per_param` random coordinates
/// per parameter tensor.
pub fn end_to_end_check(seeds: u64, coords_per_param: usize) -> Result<CheckOutcome> {
    let arch = ArchConfig {
        num_classes: 4,
        input_size: (16, 16),
        stage_widths: [4, 6, 8, 8],
        decoder_width: 4,
        ..ArchConfig::default()
    };
    let cfg = LossConfig::default();
    let mut worst = 0.0f64;
    let mut passed = true;
    for s in 0..seeds {
        let mut params = ModelParams::init(&arch, seed::derive(s, &[0xe2e]))?;
        let mut rng = seed::rng(s, &[0xe2e, 1]);
        // non-zero biases so no unit starts exactly at a ReLU kink
        for (name, t) in params.iter_mut() {
            if name.ends_with(".bias") {
                t.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
            }
        }
        let image = uniform(&mut rng, vec![1, 3, 16, 16], 0.0, 1.0);
        let truth = vec![Some(random_mask(&mut rng, 16, 16, arch.num_classes))];
        let domains = vec![rng.random_range(0..arch.num_domains)];
        let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let point = params.get(&name).expect("listed").clone();
            let n = point.len();
            let coords: Vec<usize> = if n <= coords_per_param {
                (0..n).collect()
            } else {
                (0..coords_per_param).map(|_| rng.random_range(0..n)).collect()
            };
            let f = |g: &mut Graph, v: Var| -> Result<Var> {
                let mut bound = params.bind(g, false);
                bound.replace(&name, v)?;
                let x = g.constant(image.clone());
                let out = forward(g, &arch, &bound, x, 1.0)?;
                Ok(loss::total_loss(g, &out, &truth, &domains, &cfg)?.0)
            };
            let r = finite_difference_check_subset(f, &point, GRAD_STEP, GRAD_TOLERANCE, Some(&coords))?;
            passed &= r.passed;
            worst = worst.max(r.max_rel_error);
        }
    }
    Ok(CheckOutcome {
        name: "total_loss/end_to_end".into(),
        seeds,
        worst_rel_error: worst,
        passed,
    })
}
