//! Lesion mask extraction, two ways: a deterministic contrast-stretch
//! threshold segmenter, and a small encoder-decoder network with skip
//! connections trained on mask supervision.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::imaging::{self, Image, Mask, PiecewiseParams};
use crate::models::{Gradients, ModelWeights};
use crate::rng::{hash_bytes, SeededRng};
use crate::tensor::kernels::{dot_wide, sum_wide};
use crate::tensor::{self as ops, Tensor};
use crate::training::{adam_step, AdamState, TrainConfig};

/// Contrast-stretch, grayscale, and binarize; then keep only the largest
/// 4-connected foreground component. Components of equal size are broken
/// toward the one met first in row-major order.
pub fn threshold_segment(img: &Image, params: &PiecewiseParams, threshold: u8) -> Result<Mask> {
    let bright = imaging::piecewise_linear(img, params)?;
    let gray = imaging::to_grayscale(&bright)?;
    let (h, w) = (gray.height(), gray.width());
    let set: Vec<bool> = gray.pixels().iter().map(|&v| v >= threshold).collect();
    if !set.iter().any(|&b| b) {
        return Err(Error::EmptyMask { threshold });
    }

    let mut component = vec![0u32; h * w];
    let mut best_label = 0u32;
    let mut best_size = 0usize;
    let mut next = 1u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !set[start] || component[start] != 0 {
            continue;
        }
        let label = next;
        next += 1;
        let mut size = 0usize;
        stack.push(start);
        component[start] = label;
        while let Some(p) = stack.pop() {
            size += 1;
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if set[q] && component[q] == 0 {
                    component[q] = label;
                    stack.push(q);
                }
            };
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
        }
        if size > best_size {
            best_size = size;
            best_label = label;
        }
    }
    let bits = component.iter().map(|&c| u8::from(c == best_label)).collect();
    Mask::new(h, w, bits)
}

/// Overlap score `2|A∩B| / (|A|+|B|)`; two empty masks count as perfect
/// agreement.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::shape(
            "dice",
            format!("{}x{}", a.height(), a.width()),
            format!("{}x{}", b.height(), b.width()),
        ));
    }
    let mut inter = 0u64;
    let mut total = 0u64;
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x & y) as u64;
        total += (x + y) as u64;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Sizing of the encoder-decoder segmenter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    /// Encoder levels; each halves the spatial dims once.
    pub depth: usize,
    /// Filters at the first level; doubled per level.
    pub base_channels: usize,
    /// Square input edge, divisible by `2^depth`.
    pub input_size: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig { depth: 3, base_channels: 8, input_size: 64 }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::param("UNetConfig", "depth must be at least 1"));
        }
        if self.base_channels == 0 {
            return Err(Error::param("UNetConfig", "base_channels must be at least 1"));
        }
        let granularity = 1usize << self.depth;
        if self.input_size == 0 || self.input_size % granularity != 0 {
            return Err(Error::param(
                "UNetConfig",
                format!(
                    "input_size {} is not divisible by 2^depth = {granularity}",
                    self.input_size
                ),
            ));
        }
        Ok(())
    }
}

/// Segmentation network: config plus name-keyed weights. Layout per level
/// `l` (0 outermost): `enc{l}` and `dec{l}` double-conv blocks, a `mid`
/// block at the bottom, and a pointwise `out` projection. Grayscale in,
/// per-pixel foreground probability out.
#[derive(Debug, Clone, PartialEq)]
pub struct UNet {
    pub cfg: UNetConfig,
    pub weights: ModelWeights,
}

/// (name prefix, in channels, out channels) of every double-conv block.
fn block_plan(cfg: &UNetConfig) -> Vec<(String, usize, usize)> {
    let b = cfg.base_channels;
    let mut plan = Vec::new();
    for l in 0..cfg.depth {
        let inc = if l == 0 { 1 } else { b << (l - 1) };
        plan.push((format!("enc{l}"), inc, b << l));
    }
    plan.push(("mid".to_string(), b << (cfg.depth - 1), b << cfg.depth));
    for l in 0..cfg.depth {
        // upsampled channels plus the skip
        plan.push((format!("dec{l}"), (b << (l + 1)) + (b << l), b << l));
    }
    plan
}

fn init_kernels(
    tensors: &mut BTreeMap<String, Tensor>,
    rng: &SeededRng,
    name: String,
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
) -> Result<()> {
    let mut stream = rng.derive(hash_bytes(name.as_bytes()));
    tensors.insert(name, ops::xavier_uniform_init(&shape, fan_in, fan_out, &mut stream)?);
    Ok(())
}

pub fn build_unet(cfg: &UNetConfig, rng: &SeededRng) -> Result<UNet> {
    cfg.validate()?;
    let mut tensors = BTreeMap::new();
    for (prefix, inc, out) in block_plan(cfg) {
        init_kernels(&mut tensors, rng, format!("{prefix}.conv1.kernels"), vec![out, inc, 3, 3], inc * 9, out * 9)?;
        init_kernels(&mut tensors, rng, format!("{prefix}.conv2.kernels"), vec![out, out, 3, 3], out * 9, out * 9)?;
        tensors.insert(format!("{prefix}.conv1.bias"), Tensor::zeros(&[out]));
        tensors.insert(format!("{prefix}.conv2.bias"), Tensor::zeros(&[out]));
    }
    let b = cfg.base_channels;
    init_kernels(&mut tensors, rng, "out.conv.kernels".to_string(), vec![1, b], b, 1)?;
    tensors.insert("out.conv.bias".to_string(), Tensor::zeros(&[1]));
    Ok(UNet { cfg: *cfg, weights: ModelWeights { tensors } })
}

struct BlockTrace {
    input: Tensor,
    pre1: Tensor,
    mid: Tensor,
    pre2: Tensor,
    out: Tensor,
}

fn block_forward(w: &ModelWeights, prefix: &str, input: &Tensor) -> Result<BlockTrace> {
    let pre1 = ops::conv2d_same(
        input,
        w.get(&format!("{prefix}.conv1.kernels"))?,
        w.get(&format!("{prefix}.conv1.bias"))?,
    )?;
    let mid = ops::relu(&pre1)?;
    let pre2 = ops::conv2d_same(
        &mid,
        w.get(&format!("{prefix}.conv2.kernels"))?,
        w.get(&format!("{prefix}.conv2.bias"))?,
    )?;
    let out = ops::relu(&pre2)?;
    Ok(BlockTrace { input: input.clone(), pre1, mid, pre2, out })
}

fn block_backward(
    w: &ModelWeights,
    prefix: &str,
    tr: &BlockTrace,
    g_out: &Tensor,
    grads: &mut Gradients,
) -> Result<Tensor> {
    let g2 = ops::relu_backward(&tr.pre2, g_out)?;
    let (g_mid, gk2, gb2) =
        ops::conv2d_same_backward(&tr.mid, w.get(&format!("{prefix}.conv2.kernels"))?, &g2)?;
    grads.insert(format!("{prefix}.conv2.kernels"), gk2);
    grads.insert(format!("{prefix}.conv2.bias"), gb2);
    let g1 = ops::relu_backward(&tr.pre1, &g_mid)?;
    let (g_in, gk1, gb1) =
        ops::conv2d_same_backward(&tr.input, w.get(&format!("{prefix}.conv1.kernels"))?, &g1)?;
    grads.insert(format!("{prefix}.conv1.kernels"), gk1);
    grads.insert(format!("{prefix}.conv1.bias"), gb1);
    Ok(g_in)
}

struct UNetTrace {
    enc: Vec<BlockTrace>,
    mid: BlockTrace,
    dec: Vec<BlockTrace>,
    /// Input to the upsampling at each decoder level.
    up_in: Vec<Tensor>,
    /// Upsampled tensor at each decoder level (first half of the concat).
    up_out: Vec<Tensor>,
    probs: Tensor,
}

fn forward_trace(net: &UNet, input: &Tensor) -> Result<UNetTrace> {
    let s = net.cfg.input_size;
    crate::tensor::expect_shape("unet_forward", input, &[1, s, s])?;
    let w = &net.weights;
    let depth = net.cfg.depth;

    let mut enc = Vec::with_capacity(depth);
    let mut a = input.clone();
    for l in 0..depth {
        let tr = block_forward(w, &format!("enc{l}"), &a)?;
        a = ops::maxpool2d(&tr.out, 2, 2)?;
        enc.push(tr);
    }
    let mid = block_forward(w, "mid", &a)?;
    a = mid.out.clone();

    let mut dec: Vec<Option<BlockTrace>> = (0..depth).map(|_| None).collect();
    let mut up_in: Vec<Option<Tensor>> = (0..depth).map(|_| None).collect();
    let mut up_out: Vec<Option<Tensor>> = (0..depth).map(|_| None).collect();
    for l in (0..depth).rev() {
        let up = ops::upsample_nearest_2x(&a)?;
        let cat = ops::concat_channels(&up, &enc[l].out)?;
        let tr = block_forward(w, &format!("dec{l}"), &cat)?;
        up_in[l] = Some(a);
        up_out[l] = Some(up);
        a = tr.out.clone();
        dec[l] = Some(tr);
    }

    let pre = ops::conv1x1(&a, w.get("out.conv.kernels")?, w.get("out.conv.bias")?)?;
    let probs = ops::sigmoid(&pre)?;
    Ok(UNetTrace {
        enc,
        mid,
        dec: dec.into_iter().map(Option::unwrap).collect(),
        up_in: up_in.into_iter().map(Option::unwrap).collect(),
        up_out: up_out.into_iter().map(Option::unwrap).collect(),
        probs,
    })
}

/// Per-pixel foreground probabilities for a `[1, S, S]` input.
pub fn unet_forward(net: &UNet, input: &Tensor) -> Result<Tensor> {
    Ok(forward_trace(net, input)?.probs)
}

fn add_tensors(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    crate::tensor::expect_shape("add_tensors", b, a.shape())?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

fn backward(net: &UNet, trace: &UNetTrace, d_probs: &Tensor) -> Result<Gradients> {
    let w = &net.weights;
    let depth = net.cfg.depth;
    let mut grads: Gradients = BTreeMap::new();

    let g_pre = ops::sigmoid_backward(&trace.probs, d_probs)?;
    let (mut g, gk, gb) = ops::conv1x1_backward(&trace.dec[0].out, w.get("out.conv.kernels")?, &g_pre)?;
    grads.insert("out.conv.kernels".to_string(), gk);
    grads.insert("out.conv.bias".to_string(), gb);

    let mut skip_grads = Vec::with_capacity(depth);
    for l in 0..depth {
        let g_cat = block_backward(w, &format!("dec{l}"), &trace.dec[l], &g, &mut grads)?;
        let (g_up, g_skip) = ops::concat_channels_backward(&trace.up_out[l], &trace.enc[l].out, &g_cat)?;
        skip_grads.push(g_skip);
        g = ops::upsample_nearest_2x_backward(&trace.up_in[l], &g_up)?;
    }

    g = block_backward(w, "mid", &trace.mid, &g, &mut grads)?;
    for l in (0..depth).rev() {
        let g_pool = ops::maxpool2d_backward(&trace.enc[l].out, &g)?;
        let total = add_tensors(&g_pool, &skip_grads[l])?;
        g = block_backward(w, &format!("enc{l}"), &trace.enc[l], &total, &mut grads)?;
    }
    Ok(grads)
}

const DICE_SMOOTH: f64 = 1.0;

fn soft_dice(probs: &Tensor, target: &Tensor) -> f64 {
    let inter = dot_wide(probs.data(), target.data());
    let total = sum_wide(probs.data()) + sum_wide(target.data());
    (2.0 * inter + DICE_SMOOTH) / (total + DICE_SMOOTH)
}

/// Training loss: per-pixel binary cross-entropy plus smoothed soft-Dice
/// loss, equally weighted.
pub fn segmentation_loss(probs: &Tensor, target: &Tensor) -> Result<f32> {
    let bce = ops::binary_cross_entropy_mean(probs, target)?;
    Ok((bce as f64 + (1.0 - soft_dice(probs, target))) as f32)
}

/// Gradient of [`segmentation_loss`] with respect to the probabilities.
pub fn segmentation_loss_backward(probs: &Tensor, target: &Tensor) -> Result<Tensor> {
    let g_bce = ops::binary_cross_entropy_mean_backward(probs, target)?;
    let inter = dot_wide(probs.data(), target.data());
    let total = sum_wide(probs.data()) + sum_wide(target.data());
    let denom = (total + DICE_SMOOTH) * (total + DICE_SMOOTH);
    let data = g_bce
        .data()
        .iter()
        .zip(target.data())
        .map(|(&gb, &t)| {
            let d_dice = (2.0 * t as f64 * (total + DICE_SMOOTH) - (2.0 * inter + DICE_SMOOTH)) / denom;
            (gb as f64 - d_dice) as f32
        })
        .collect();
    Tensor::new(probs.shape().to_vec(), data)
}

/// Mask as a `[1, H, W]` float tensor of zeros and ones.
pub fn mask_to_tensor(mask: &Mask) -> Tensor {
    let data = mask.bits().iter().map(|&b| b as f32).collect();
    Tensor::new(vec![1, mask.height(), mask.width()], data).expect("mask dims are valid")
}

fn tensorize(net: &UNet, img: &Image) -> Result<Tensor> {
    let gray = imaging::to_grayscale(img)?;
    let s = net.cfg.input_size;
    if gray.height() != s || gray.width() != s {
        return Err(Error::shape(
            "unet input",
            format!("{s}x{s}"),
            format!("{}x{}", gray.height(), gray.width()),
        ));
    }
    Ok(imaging::to_tensor(&gray))
}

/// Forward pass plus binarization at 0.5.
pub fn predict_mask(net: &UNet, img: &Image) -> Result<Mask> {
    let probs = unet_forward(net, &tensorize(net, img)?)?;
    let bits = probs.data().iter().map(|&p| u8::from(p >= 0.5)).collect();
    Mask::new(net.cfg.input_size, net.cfg.input_size, bits)
}

/// Mean Dice of binarized predictions against ground truth over `indices`.
fn mean_dice(net: &UNet, data: &[(Image, Mask)], indices: &[usize]) -> Result<f64> {
    let mut sum = 0.0;
    for &i in indices {
        let (img, truth) = &data[i];
        sum += dice(&predict_mask(net, img)?, truth)?;
    }
    Ok(sum / indices.len() as f64)
}

/// Trains the segmenter on `train_idx`, reporting mean validation Dice
/// before training and after every epoch (so the history has
/// `epochs + 1` entries; zero epochs measures the untrained net and
/// changes nothing).
pub fn train_unet(
    net: &mut UNet,
    data: &[(Image, Mask)],
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if data.is_empty() || train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::param("train_unet", "empty dataset or split"));
    }
    for (img, mask) in data {
        if img.height() != mask.height() || img.width() != mask.width() {
            return Err(Error::shape(
                "train_unet",
                format!("{}x{}", img.height(), img.width()),
                format!("mask {}x{}", mask.height(), mask.width()),
            ));
        }
    }
    if cfg.batch_size == 0 {
        return Err(Error::param("train_unet", "batch_size must be at least 1"));
    }
    let train: Vec<(Tensor, Tensor)> = train_idx
        .iter()
        .map(|&i| Ok((tensorize(net, &data[i].0)?, mask_to_tensor(&data[i].1))))
        .collect::<Result<_>>()?;

    let root = SeededRng::new(cfg.seed);
    let mut adam = AdamState::new(cfg.adam);
    let mut history = vec![mean_dice(net, data, val_idx)?];
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        root.derive(1 + epoch as u64).shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for &i in batch {
                let (x, t) = &train[i];
                let trace = forward_trace(net, x)?;
                let d_probs = segmentation_loss_backward(&trace.probs, t)?;
                for (name, g) in backward(net, &trace, &d_probs)? {
                    let buf = acc.entry(name).or_insert_with(|| vec![0.0; g.data().len()]);
                    for (b, &v) in buf.iter_mut().zip(g.data()) {
                        *b += v as f64;
                    }
                }
            }
            let n = batch.len() as f64;
            let mut averaged: Gradients = BTreeMap::new();
            for (name, buf) in acc {
                let shape = net.weights.get(&name)?.shape().to_vec();
                averaged.insert(name, Tensor::new(shape, buf.iter().map(|&v| (v / n) as f32).collect())?);
            }
            adam_step(&mut net.weights, &averaged, &mut adam)?;
        }
        history.push(mean_dice(net, data, val_idx)?);
    }
    Ok(history)
}
