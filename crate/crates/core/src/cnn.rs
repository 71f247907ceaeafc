//! Spatial feature extractor: a block-structured CNN (3x3 same-padding convs
//! with ReLU, 2x2 max-pool per block) with per-block freezing, a feature tap
//! after the first fully connected layer, and a replaceable class head.
//!
//! The desk-scale default is three single-conv blocks of 8/16/32 channels on
//! 32x32x1 inputs with a 64-wide feature layer; deeper two-conv blocks and
//! larger inputs are expressible through [`CnnConfig`].
//!
//! Activations are kept channel-major (`C x H x W`) internally; images enter
//! as `H x W x ch` tensors in [0, 1].

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::image_dims;
use crate::io::Checkpoint;
use crate::rng::Rng;
use crate::tensor::{softmax_cross_entropy, Tensor};
use crate::train::{TrainConfig, TrainingLog};

/// One labeled image: `H x W x ch` pixels in [0, 1] plus a class index.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub pixels: Tensor,
    pub label: usize,
}

/// One 3x3 convolution: kernels `out_ch x in_ch x 3 x 3` plus per-channel
/// bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams {
    pub kernels: Tensor,
    pub bias: Tensor,
}

impl ConvLayerParams {
    fn init(rng: &mut Rng, in_ch: usize, out_ch: usize) -> Self {
        let fan_in = in_ch * 9;
        let fan_out = out_ch * 9;
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let kernels = Tensor::new(
            vec![out_ch, in_ch, 3, 3],
            (0..out_ch * in_ch * 9)
                .map(|_| rng.uniform(-bound, bound))
                .collect(),
        )
        .expect("shape matches data");
        ConvLayerParams {
            kernels,
            bias: Tensor::zeros(vec![out_ch]),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }
}

/// Convolutions of one block followed by an implicit 2x2 stride-2 max-pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub convs: Vec<ConvLayerParams>,
    /// Frozen blocks are bitwise untouched by any training step.
    pub frozen: bool,
}

/// Channel/conv-count layout of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub channels: usize,
    pub convs: usize,
}

/// CNN hyperparameters.
#[derive(Debug, Clone)]
pub struct CnnConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub blocks: Vec<BlockSpec>,
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl CnnConfig {
    pub fn new(num_classes: usize) -> Self {
        CnnConfig {
            input_height: 32,
            input_width: 32,
            input_channels: 1,
            blocks: vec![
                BlockSpec {
                    channels: 8,
                    convs: 1,
                },
                BlockSpec {
                    channels: 16,
                    convs: 1,
                },
                BlockSpec {
                    channels: 32,
                    convs: 1,
                },
            ],
            feature_dim: 64,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config("cnn needs at least one block".into()));
        }
        if self.feature_dim == 0 || self.num_classes == 0 {
            return Err(Error::Config(
                "feature_dim and num_classes must be positive".into(),
            ));
        }
        let div = 1usize << self.blocks.len();
        if self.input_height % div != 0 || self.input_width % div != 0 {
            return Err(Error::Config(format!(
                "input {}x{} not divisible by 2^{} (one pool per block)",
                self.input_height,
                self.input_width,
                self.blocks.len()
            )));
        }
        if self.blocks.iter().any(|b| b.channels == 0 || b.convs == 0) {
            return Err(Error::Config(
                "block channels and convs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// The full extractor: conv blocks, feature layer, class head.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNetModel {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub blocks: Vec<ConvBlock>,
    /// Feature map, `feature_dim x flattened`.
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    /// Feature layer follows the block freeze policy when true.
    pub fc1_frozen: bool,
    /// Class head, `num_classes x feature_dim`.
    pub head_w: Tensor,
    pub head_b: Tensor,
    pub num_classes: usize,
}

impl ConvNetModel {
    pub fn init(cfg: &CnnConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut blocks = Vec::with_capacity(cfg.blocks.len());
        let mut in_ch = cfg.input_channels;
        for spec in &cfg.blocks {
            let mut convs = Vec::with_capacity(spec.convs);
            for _ in 0..spec.convs {
                convs.push(ConvLayerParams::init(rng, in_ch, spec.channels));
                in_ch = spec.channels;
            }
            blocks.push(ConvBlock {
                convs,
                frozen: false,
            });
        }
        let ph = cfg.input_height >> cfg.blocks.len();
        let pw = cfg.input_width >> cfg.blocks.len();
        let flat = in_ch * ph * pw;
        let bound = (6.0 / (flat + cfg.feature_dim) as f64).sqrt();
        let fc1_w = Tensor::new(
            vec![cfg.feature_dim, flat],
            (0..cfg.feature_dim * flat)
                .map(|_| rng.uniform(-bound, bound))
                .collect(),
        )?;
        let head_bound = (6.0 / (cfg.feature_dim + cfg.num_classes) as f64).sqrt();
        let head_w = Tensor::new(
            vec![cfg.num_classes, cfg.feature_dim],
            (0..cfg.num_classes * cfg.feature_dim)
                .map(|_| rng.uniform(-head_bound, head_bound))
                .collect(),
        )?;
        Ok(ConvNetModel {
            input_height: cfg.input_height,
            input_width: cfg.input_width,
            input_channels: cfg.input_channels,
            blocks,
            fc1_w,
            fc1_b: Tensor::zeros(vec![cfg.feature_dim]),
            fc1_frozen: false,
            head_w,
            head_b: Tensor::zeros(vec![cfg.num_classes]),
            num_classes: cfg.num_classes,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.fc1_w.rows()
    }

    /// Swap in a freshly initialized class head.
    pub fn replace_head(&mut self, rng: &mut Rng) {
        let bound = (6.0 / (self.feature_dim() + self.num_classes) as f64).sqrt();
        self.head_w = Tensor::new(
            vec![self.num_classes, self.feature_dim()],
            (0..self.num_classes * self.feature_dim())
                .map(|_| rng.uniform(-bound, bound))
                .collect(),
        )
        .expect("shape matches data");
        self.head_b = Tensor::zeros(vec![self.num_classes]);
    }

    /// FNV-1a digest over a block's parameter bytes; freeze-contract checks
    /// compare these before and after training.
    pub fn block_digest(&self, block: usize) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut eat = |v: f64| {
            for byte in v.to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        };
        for conv in &self.blocks[block].convs {
            conv.kernels.data().iter().copied().for_each(&mut eat);
            conv.bias.data().iter().copied().for_each(&mut eat);
        }
        hash
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set("kind", "conv_net");
        ck.set("input_height", self.input_height);
        ck.set("input_width", self.input_width);
        ck.set("input_channels", self.input_channels);
        ck.set("num_blocks", self.blocks.len());
        ck.set("num_classes", self.num_classes);
        ck.set("fc1_frozen", self.fc1_frozen);
        for (i, block) in self.blocks.iter().enumerate() {
            ck.set(&format!("block{i}.convs"), block.convs.len());
            ck.set(&format!("block{i}.frozen"), block.frozen);
            for (j, conv) in block.convs.iter().enumerate() {
                ck.push_tensor(&format!("block{i}.conv{j}.k"), conv.kernels.clone());
                ck.push_tensor(&format!("block{i}.conv{j}.b"), conv.bias.clone());
            }
        }
        ck.push_tensor("fc1.w", self.fc1_w.clone());
        ck.push_tensor("fc1.b", self.fc1_b.clone());
        ck.push_tensor("head.w", self.head_w.clone());
        ck.push_tensor("head.b", self.head_b.clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let kind = ck.get("kind")?;
        if kind != "conv_net" {
            return Err(Error::Format(format!(
                "checkpoint holds {kind:?}, expected \"conv_net\""
            )));
        }
        let num_blocks: usize = ck.get_parsed("num_blocks")?;
        let mut blocks = Vec::with_capacity(num_blocks);
        for i in 0..num_blocks {
            let convs_n: usize = ck.get_parsed(&format!("block{i}.convs"))?;
            let frozen: bool = ck.get_parsed(&format!("block{i}.frozen"))?;
            let mut convs = Vec::with_capacity(convs_n);
            for j in 0..convs_n {
                convs.push(ConvLayerParams {
                    kernels: ck.tensor(&format!("block{i}.conv{j}.k"))?.clone(),
                    bias: ck.tensor(&format!("block{i}.conv{j}.b"))?.clone(),
                });
            }
            blocks.push(ConvBlock { convs, frozen });
        }
        Ok(ConvNetModel {
            input_height: ck.get_parsed("input_height")?,
            input_width: ck.get_parsed("input_width")?,
            input_channels: ck.get_parsed("input_channels")?,
            blocks,
            fc1_w: ck.tensor("fc1.w")?.clone(),
            fc1_b: ck.tensor("fc1.b")?.clone(),
            fc1_frozen: ck.get_parsed("fc1_frozen")?,
            head_w: ck.tensor("head.w")?.clone(),
            head_b: ck.tensor("head.b")?.clone(),
            num_classes: ck.get_parsed("num_classes")?,
        })
    }
}

/// Channel-major activation stack: `channels` planes of `h x w`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl FeatureMaps {
    fn zeros(channels: usize, h: usize, w: usize) -> Self {
        FeatureMaps {
            channels,
            h,
            w,
            data: vec![0.0; channels * h * w],
        }
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }
}

/// Everything one block's forward pass produced.
#[derive(Debug, Clone)]
struct BlockTrace {
    /// Per conv: pre-activation and post-ReLU maps.
    conv_pre: Vec<FeatureMaps>,
    conv_act: Vec<FeatureMaps>,
    pool_out: FeatureMaps,
    /// Flat index (into the pool input) of each output cell's maximum.
    pool_argmax: Vec<usize>,
}

/// Forward cache: per-block activations (the final block's last conv maps are
/// the Grad-CAM target), the flattened vector, the feature vector, and the
/// raw class scores.
#[derive(Debug, Clone)]
pub struct CnnTrace {
    blocks: Vec<BlockTrace>,
    flatten: Vec<f64>,
    fc1_pre: Vec<f64>,
    pub feature: Vec<f64>,
    /// Raw scores, `1 x C`.
    pub logits: Tensor,
}

impl CnnTrace {
    /// Post-ReLU activation maps of the final conv layer (pre-pool), the
    /// `A^k` maps that class-activation mapping weights.
    pub fn final_conv_maps(&self) -> &FeatureMaps {
        let last = self.blocks.last().expect("at least one block");
        last.conv_act.last().expect("at least one conv")
    }
}

fn conv3x3_forward(params: &ConvLayerParams, input: &FeatureMaps) -> FeatureMaps {
    let (h, w) = (input.h, input.w);
    let out_ch = params.out_channels();
    let in_ch = params.in_channels();
    debug_assert_eq!(in_ch, input.channels);
    let mut out = FeatureMaps::zeros(out_ch, h, w);
    for oc in 0..out_ch {
        let out_plane = &mut out.data[oc * h * w..(oc + 1) * h * w];
        out_plane.fill(params.bias.data()[oc]);
        for ic in 0..in_ch {
            let in_plane = input.plane(ic);
            let k_base = (oc * in_ch + ic) * 9;
            let k = &params.kernels.data()[k_base..k_base + 9];
            for y in 0..h {
                for ky in 0..3usize {
                    let iy = y + ky;
                    if !(1..=h).contains(&iy) {
                        continue;
                    }
                    let iy = iy - 1;
                    let in_row = &in_plane[iy * w..(iy + 1) * w];
                    let out_row = &mut out_plane[y * w..(y + 1) * w];
                    for kx in 0..3usize {
                        let kv = k[ky * 3 + kx];
                        // x + kx - 1 stays in bounds for x in lo..hi.
                        let lo = usize::from(kx == 0);
                        let hi = if kx == 2 { w - 1 } else { w };
                        for x in lo..hi {
                            out_row[x] += kv * in_row[x + kx - 1];
                        }
                    }
                }
            }
        }
    }
    out
}

fn relu_maps(input: &FeatureMaps) -> FeatureMaps {
    FeatureMaps {
        channels: input.channels,
        h: input.h,
        w: input.w,
        data: input.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

fn maxpool2x2(input: &FeatureMaps) -> (FeatureMaps, Vec<usize>) {
    let (h, w) = (input.h / 2, input.w / 2);
    let mut out = FeatureMaps::zeros(input.channels, h, w);
    let mut argmax = vec![0usize; input.channels * h * w];
    for c in 0..input.channels {
        let plane = input.plane(c);
        for py in 0..h {
            for px in 0..w {
                // First maximum wins; scan order is fixed.
                let mut best_idx = (2 * py) * input.w + 2 * px;
                let mut best = plane[best_idx];
                for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                    let idx = (2 * py + dy) * input.w + 2 * px + dx;
                    if plane[idx] > best {
                        best = plane[idx];
                        best_idx = idx;
                    }
                }
                let o = c * h * w + py * w + px;
                out.data[o] = best;
                argmax[o] = c * input.h * input.w + best_idx;
            }
        }
    }
    (out, argmax)
}

/// Convert an `H x W x ch` image tensor into channel-major planes.
fn image_to_maps(model: &ConvNetModel, image: &Tensor) -> Result<FeatureMaps> {
    let (h, w, ch) = image_dims(image)?;
    if (h, w, ch) != (model.input_height, model.input_width, model.input_channels) {
        return Err(Error::Dimension {
            what: "cnn input image".into(),
            expected: format!(
                "{}x{}x{}",
                model.input_height, model.input_width, model.input_channels
            ),
            got: format!("{h}x{w}x{ch}"),
        });
    }
    let mut maps = FeatureMaps::zeros(ch, h, w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                maps.data[c * h * w + y * w + x] = image.data()[(y * w + x) * ch + c];
            }
        }
    }
    Ok(maps)
}

/// Full forward pass with activation cache.
pub fn cnn_forward(model: &ConvNetModel, image: &Tensor) -> Result<CnnTrace> {
    let mut current = image_to_maps(model, image)?;
    let mut blocks = Vec::with_capacity(model.blocks.len());
    for block in &model.blocks {
        let mut conv_pre = Vec::with_capacity(block.convs.len());
        let mut conv_act = Vec::with_capacity(block.convs.len());
        for conv in &block.convs {
            let pre = conv3x3_forward(conv, &current);
            let act = relu_maps(&pre);
            conv_pre.push(pre);
            current = act.clone();
            conv_act.push(act);
        }
        let (pooled, argmax) = maxpool2x2(&current);
        current = pooled.clone();
        blocks.push(BlockTrace {
            conv_pre,
            conv_act,
            pool_out: pooled,
            pool_argmax: argmax,
        });
    }
    let flatten = current.data.clone();
    let feature_dim = model.feature_dim();
    if flatten.len() != model.fc1_w.cols() {
        return Err(Error::Dimension {
            what: "flattened conv output".into(),
            expected: format!("{}", model.fc1_w.cols()),
            got: format!("{}", flatten.len()),
        });
    }
    let mut fc1_pre = vec![0.0; feature_dim];
    for i in 0..feature_dim {
        let row = model.fc1_w.row(i);
        let mut acc = model.fc1_b.data()[i];
        for (rv, fv) in row.iter().zip(&flatten) {
            acc += rv * fv;
        }
        fc1_pre[i] = acc;
    }
    let feature: Vec<f64> = fc1_pre.iter().map(|&v| v.max(0.0)).collect();
    let c = model.num_classes;
    let mut logits = Tensor::zeros(vec![1, c]);
    for k in 0..c {
        let row = model.head_w.row(k);
        let mut acc = model.head_b.data()[k];
        for (rv, fv) in row.iter().zip(&feature) {
            acc += rv * fv;
        }
        logits.row_mut(0)[k] = acc;
    }
    Ok(CnnTrace {
        blocks,
        flatten,
        fc1_pre,
        feature,
        logits,
    })
}

/// Gradients mirroring [`ConvNetModel`].
#[derive(Debug, Clone)]
pub struct CnnGradients {
    pub blocks: Vec<Vec<(Tensor, Tensor)>>,
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl CnnGradients {
    pub fn zeros_like(model: &ConvNetModel) -> Self {
        CnnGradients {
            blocks: model
                .blocks
                .iter()
                .map(|b| {
                    b.convs
                        .iter()
                        .map(|c| {
                            (
                                Tensor::zeros(c.kernels.shape().to_vec()),
                                Tensor::zeros(c.bias.shape().to_vec()),
                            )
                        })
                        .collect()
                })
                .collect(),
            fc1_w: Tensor::zeros(model.fc1_w.shape().to_vec()),
            fc1_b: Tensor::zeros(model.fc1_b.shape().to_vec()),
            head_w: Tensor::zeros(model.head_w.shape().to_vec()),
            head_b: Tensor::zeros(model.head_b.shape().to_vec()),
        }
    }

    pub fn add_in_place(&mut self, other: &CnnGradients) {
        for (a_block, b_block) in self.blocks.iter_mut().zip(&other.blocks) {
            for ((ak, ab), (bk, bb)) in a_block.iter_mut().zip(b_block) {
                ak.add_scaled_in_place(bk, 1.0);
                ab.add_scaled_in_place(bb, 1.0);
            }
        }
        self.fc1_w.add_scaled_in_place(&other.fc1_w, 1.0);
        self.fc1_b.add_scaled_in_place(&other.fc1_b, 1.0);
        self.head_w.add_scaled_in_place(&other.head_w, 1.0);
        self.head_b.add_scaled_in_place(&other.head_b, 1.0);
    }

    pub fn scale_in_place(&mut self, k: f64) {
        for block in self.blocks.iter_mut() {
            for (gk, gb) in block.iter_mut() {
                gk.scale_in_place(k);
                gb.scale_in_place(k);
            }
        }
        self.fc1_w.scale_in_place(k);
        self.fc1_b.scale_in_place(k);
        self.head_w.scale_in_place(k);
        self.head_b.scale_in_place(k);
    }

    pub fn is_finite(&self) -> bool {
        self.blocks
            .iter()
            .flatten()
            .all(|(k, b)| k.is_finite() && b.is_finite())
            && self.fc1_w.is_finite()
            && self.fc1_b.is_finite()
            && self.head_w.is_finite()
            && self.head_b.is_finite()
    }
}

fn conv3x3_backward(
    params: &ConvLayerParams,
    input: &FeatureMaps,
    delta: &FeatureMaps,
    grad_k: &mut Tensor,
    grad_b: &mut Tensor,
) -> FeatureMaps {
    let (h, w) = (input.h, input.w);
    let out_ch = params.out_channels();
    let in_ch = params.in_channels();
    let mut d_in = FeatureMaps::zeros(in_ch, h, w);
    for oc in 0..out_ch {
        let d_plane = delta.plane(oc);
        grad_b.data_mut()[oc] += d_plane.iter().sum::<f64>();
        for ic in 0..in_ch {
            let in_plane = input.plane(ic);
            let k_base = (oc * in_ch + ic) * 9;
            let d_in_plane = &mut d_in.data[ic * h * w..(ic + 1) * h * w];
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let kv = params.kernels.data()[k_base + ky * 3 + kx];
                    let mut acc = 0.0;
                    for y in 0..h {
                        let iy = y + ky;
                        if !(1..=h).contains(&iy) {
                            continue;
                        }
                        let iy = iy - 1;
                        let lo = usize::from(kx == 0);
                        let hi = if kx == 2 { w - 1 } else { w };
                        let d_row = &d_plane[y * w..(y + 1) * w];
                        let in_row = &in_plane[iy * w..(iy + 1) * w];
                        let d_in_row = &mut d_in_plane[iy * w..(iy + 1) * w];
                        for x in lo..hi {
                            let dv = d_row[x];
                            acc += dv * in_row[x + kx - 1];
                            d_in_row[x + kx - 1] += kv * dv;
                        }
                    }
                    grad_k.data_mut()[k_base + ky * 3 + kx] += acc;
                }
            }
        }
    }
    d_in
}

/// Backward pass from a raw-score gradient (length C). Returns parameter
/// gradients and the gradient at the final conv layer's post-ReLU maps, the
/// quantity class-activation mapping needs.
pub fn cnn_backward(
    model: &ConvNetModel,
    image: &Tensor,
    trace: &CnnTrace,
    dscore: &[f64],
) -> Result<(CnnGradients, FeatureMaps)> {
    let input_maps = image_to_maps(model, image)?;
    if dscore.len() != model.num_classes {
        return Err(Error::Dimension {
            what: "score gradient".into(),
            expected: format!("{} classes", model.num_classes),
            got: format!("{}", dscore.len()),
        });
    }
    if trace.blocks.len() != model.blocks.len() || trace.flatten.len() != model.fc1_w.cols() {
        return Err(Error::TraceMismatch(
            "cnn trace does not match model layout".into(),
        ));
    }
    let mut grads = CnnGradients::zeros_like(model);
    let feature_dim = model.feature_dim();

    // Head.
    let mut d_feature = vec![0.0; feature_dim];
    for k in 0..model.num_classes {
        grads.head_b.data_mut()[k] += dscore[k];
        let w_row = model.head_w.row(k);
        let g_row = grads.head_w.row_mut(k);
        for j in 0..feature_dim {
            g_row[j] += dscore[k] * trace.feature[j];
            d_feature[j] += w_row[j] * dscore[k];
        }
    }

    // Feature layer (ReLU at the feature tap).
    let mut d_fc1_pre = vec![0.0; feature_dim];
    for i in 0..feature_dim {
        d_fc1_pre[i] = if trace.fc1_pre[i] > 0.0 {
            d_feature[i]
        } else {
            0.0
        };
    }
    let flat = model.fc1_w.cols();
    let mut d_flatten = vec![0.0; flat];
    for i in 0..feature_dim {
        grads.fc1_b.data_mut()[i] += d_fc1_pre[i];
        let di = d_fc1_pre[i];
        if di == 0.0 {
            continue;
        }
        let w_row = model.fc1_w.row(i);
        let g_row = grads.fc1_w.row_mut(i);
        for j in 0..flat {
            g_row[j] += di * trace.flatten[j];
            d_flatten[j] += w_row[j] * di;
        }
    }

    // Blocks, last to first.
    let last_pool = &trace.blocks.last().expect("blocks").pool_out;
    let mut d_pool = FeatureMaps {
        channels: last_pool.channels,
        h: last_pool.h,
        w: last_pool.w,
        data: d_flatten,
    };
    let mut d_final_act: Option<FeatureMaps> = None;
    for (bi, (block, bt)) in model.blocks.iter().zip(&trace.blocks).enumerate().rev() {
        // Pool backward: route each pooled gradient to its argmax cell.
        let pool_in = bt.conv_act.last().expect("convs");
        let mut d_cur = FeatureMaps::zeros(pool_in.channels, pool_in.h, pool_in.w);
        for (o, &src) in bt.pool_argmax.iter().enumerate() {
            d_cur.data[src] += d_pool.data[o];
        }
        if bi + 1 == model.blocks.len() {
            d_final_act = Some(d_cur.clone());
        }
        // Convs in reverse.
        for (ci, conv) in block.convs.iter().enumerate().rev() {
            // ReLU backward at this conv's output.
            let pre = &bt.conv_pre[ci];
            for (d, p) in d_cur.data.iter_mut().zip(&pre.data) {
                if *p <= 0.0 {
                    *d = 0.0;
                }
            }
            let conv_input: &FeatureMaps = if ci > 0 {
                &bt.conv_act[ci - 1]
            } else if bi > 0 {
                &trace.blocks[bi - 1].pool_out
            } else {
                &input_maps
            };
            let (gk, gb) = &mut grads.blocks[bi][ci];
            d_cur = conv3x3_backward(conv, conv_input, &d_cur, gk, gb);
        }
        if bi > 0 {
            d_pool = d_cur;
        }
    }
    Ok((grads, d_final_act.expect("at least one block")))
}

/// Apply one SGD step, skipping frozen blocks (and the feature layer when it
/// is frozen).
pub fn cnn_sgd_step(model: &mut ConvNetModel, grads: &CnnGradients, lr: f64) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            path: "cnn gradients".into(),
        });
    }
    for (block, g_block) in model.blocks.iter_mut().zip(&grads.blocks) {
        if block.frozen {
            continue;
        }
        for (conv, (gk, gb)) in block.convs.iter_mut().zip(g_block) {
            conv.kernels.add_scaled_in_place(gk, -lr);
            conv.bias.add_scaled_in_place(gb, -lr);
        }
    }
    if !model.fc1_frozen {
        model.fc1_w.add_scaled_in_place(&grads.fc1_w, -lr);
        model.fc1_b.add_scaled_in_place(&grads.fc1_b, -lr);
    }
    model.head_w.add_scaled_in_place(&grads.head_w, -lr);
    model.head_b.add_scaled_in_place(&grads.head_b, -lr);
    Ok(())
}

/// Fine-tune: replace the head with a fresh class layer, freeze the first
/// `freeze_prefix` blocks, and train the remaining blocks plus the feature
/// layer plus the head with mini-batch SGD. Frozen parameters are bitwise
/// preserved.
pub fn fine_tune(
    model: &mut ConvNetModel,
    dataset: &[ImageSample],
    freeze_prefix: usize,
    cfg: &TrainConfig,
) -> Result<TrainingLog> {
    cfg.validate()?;
    if freeze_prefix > model.blocks.len() {
        return Err(Error::Config(format!(
            "freeze_prefix {} exceeds {} blocks",
            freeze_prefix,
            model.blocks.len()
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Config("fine-tune dataset is empty".into()));
    }
    for (i, block) in model.blocks.iter_mut().enumerate() {
        block.frozen = i < freeze_prefix;
    }
    let mut rng = Rng::new(cfg.seed);
    model.replace_head(&mut rng);
    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr(epoch);
        if cfg.shuffle {
            rng.shuffle(&mut order);
        }
        let mut epoch_loss = 0.0;
        let mut epoch_images = 0usize;
        let mut epoch_correct = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<(f64, CnnGradients, bool)>> = chunk
                .par_iter()
                .map(|&i| {
                    let sample = &dataset[i];
                    let trace = cnn_forward(model, &sample.pixels)?;
                    let (loss, dlogits) = softmax_cross_entropy(&trace.logits, &[sample.label])?;
                    let (grads, _) =
                        cnn_backward(model, &sample.pixels, &trace, dlogits.row(0))?;
                    let predicted = crate::indrnn::argmax_rows(&trace.logits)[0];
                    Ok((loss, grads, predicted == sample.label))
                })
                .collect();
            let mut grad_sum = CnnGradients::zeros_like(model);
            let mut loss_sum = 0.0;
            for r in results {
                let (loss, grads, correct) = r?;
                loss_sum += loss;
                grad_sum.add_in_place(&grads);
                epoch_correct += usize::from(correct);
            }
            if !loss_sum.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            grad_sum.scale_in_place(1.0 / chunk.len() as f64);
            cnn_sgd_step(model, &grad_sum, lr)?;
            epoch_loss += loss_sum;
            epoch_images += chunk.len();
        }
        log.epochs.push(crate::train::EpochStats {
            epoch,
            mean_loss: epoch_loss / epoch_images as f64,
            frame_accuracy: epoch_correct as f64 / epoch_images as f64,
            lr,
        });
    }
    Ok(log)
}

/// Forward pass truncated after the feature layer (head removed): the
/// compact vector fed to the sequence model.
pub fn extract_features(model: &ConvNetModel, image: &Tensor) -> Result<Tensor> {
    let trace = cnn_forward(model, image)?;
    Ok(Tensor::vector(trace.feature))
}

/// Class prediction for one image (argmax, lowest index on ties).
pub fn cnn_predict(model: &ConvNetModel, image: &Tensor) -> Result<usize> {
    let trace = cnn_forward(model, image)?;
    Ok(crate::indrnn::argmax_rows(&trace.logits)[0])
}
