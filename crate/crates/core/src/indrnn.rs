//! Bidirectional multi-layer IndRNN: stacked recurrent layers where each
//! neuron carries a single scalar recurrent weight applied element-wise to its
//! own previous state, run in normal and reverse time order with fused
//! outputs, topped by a per-frame linear classification head.
//!
//! This module is forward-pass only; gradients live in [`crate::train`].

use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::rng::Rng;
use crate::tensor::{matvec, Activation, Tensor};

/// Parameters of a single-direction IndRNN layer:
/// `h_t = act(W x_t + u (*) h_{t-1} + b)` with `(*)` element-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct IndRnnLayerParams {
    /// Input weights, `N x M`.
    pub w: Tensor,
    /// Per-neuron recurrent weights, length N.
    pub u: Tensor,
    /// Bias, length N.
    pub b: Tensor,
    pub activation: Activation,
    /// Clamp bound: `|u_i| <= u_max` after construction and every update,
    /// keeping `|u|^T` bounded over long sequences.
    pub u_max: f64,
}

impl IndRnnLayerParams {
    /// Random initialization: `W ~ U(+-sqrt(6/(M+N)))` (variance-preserving),
    /// `u ~ U(0, u_max)`, `b = 0`.
    pub fn init(
        rng: &mut Rng,
        input_dim: usize,
        hidden: usize,
        activation: Activation,
        u_max: f64,
    ) -> Self {
        let bound = (6.0 / (input_dim + hidden) as f64).sqrt();
        let w = Tensor::new(
            vec![hidden, input_dim],
            (0..hidden * input_dim)
                .map(|_| rng.uniform(-bound, bound))
                .collect(),
        )
        .expect("shape matches data");
        // ReLU stacks start with recurrent weights in the lower half of the
        // clamp range: steady-state activations grow like 1/(1-u), and u near
        // 1 at initialization blows up deep unbounded stacks on long
        // sequences before training can react. Saturating tanh is safe with
        // the full range.
        let u_hi = match activation {
            Activation::Relu => 0.5 * u_max,
            Activation::Tanh => u_max,
        };
        let u = Tensor::vector((0..hidden).map(|_| rng.uniform(0.0, u_hi)).collect());
        let b = Tensor::zeros(vec![hidden]);
        IndRnnLayerParams {
            w,
            u,
            b,
            activation,
            u_max,
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    /// Clamp every recurrent weight into `[-u_max, u_max]`.
    pub fn clamp_u(&mut self) {
        let bound = self.u_max;
        for v in self.u.data_mut() {
            *v = v.clamp(-bound, bound);
        }
    }

    pub fn max_abs_u(&self) -> f64 {
        self.u.max_abs()
    }
}

/// How the two directions of a bidirectional layer are fused.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    /// Forward and backward outputs side by side (`T x 2N`). Preserves both
    /// directions separately; the default.
    Concat,
    /// Element-wise sum (`T x N`).
    Sum,
}

impl Fusion {
    pub fn name(self) -> &'static str {
        match self {
            Fusion::Concat => "concat",
            Fusion::Sum => "sum",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "concat" => Ok(Fusion::Concat),
            "sum" => Ok(Fusion::Sum),
            other => Err(Error::Config(format!("unknown fusion {other:?}"))),
        }
    }
}

/// One stacked layer: a forward-time IndRNN plus, unless running the
/// forward-only ablation, a reverse-time IndRNN whose output is re-aligned to
/// input frames.
#[derive(Debug, Clone, PartialEq)]
pub struct BidirectionalLayer {
    pub fwd: IndRnnLayerParams,
    pub bwd: Option<IndRnnLayerParams>,
    pub fusion: Fusion,
}

impl BidirectionalLayer {
    pub fn output_dim(&self) -> usize {
        match (&self.bwd, self.fusion) {
            (Some(_), Fusion::Concat) => 2 * self.fwd.hidden(),
            _ => self.fwd.hidden(),
        }
    }
}

/// Model hyperparameters.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub num_classes: usize,
    /// Hidden units per layer, per direction. Default three layers of 64.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub u_max: f64,
    pub fusion: Fusion,
    pub bidirectional: bool,
}

impl ModelConfig {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        ModelConfig {
            input_dim,
            num_classes,
            layer_widths: vec![64, 64, 64],
            activation: Activation::Relu,
            u_max: 1.0,
            fusion: Fusion::Concat,
            bidirectional: true,
        }
    }
}

/// Stacked bidirectional IndRNN layers plus a shared per-frame linear head
/// (raw scores; no softmax).
#[derive(Debug, Clone, PartialEq)]
pub struct BmlIndRnnModel {
    pub layers: Vec<BidirectionalLayer>,
    /// Head map, `C x H` where H is the last layer's fused width.
    pub head_w: Tensor,
    pub head_b: Tensor,
    pub num_classes: usize,
}

impl BmlIndRnnModel {
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let mut layers = Vec::with_capacity(cfg.layer_widths.len());
        let mut input_dim = cfg.input_dim;
        for &width in &cfg.layer_widths {
            let fwd = IndRnnLayerParams::init(rng, input_dim, width, cfg.activation, cfg.u_max);
            let bwd = cfg
                .bidirectional
                .then(|| IndRnnLayerParams::init(rng, input_dim, width, cfg.activation, cfg.u_max));
            let layer = BidirectionalLayer {
                fwd,
                bwd,
                fusion: cfg.fusion,
            };
            input_dim = layer.output_dim();
            layers.push(layer);
        }
        let head_in = input_dim;
        let bound = (6.0 / (head_in + cfg.num_classes) as f64).sqrt();
        let head_w = Tensor::new(
            vec![cfg.num_classes, head_in],
            (0..cfg.num_classes * head_in)
                .map(|_| rng.uniform(-bound, bound))
                .collect(),
        )
        .expect("shape matches data");
        let head_b = Tensor::zeros(vec![cfg.num_classes]);
        BmlIndRnnModel {
            layers,
            head_w,
            head_b,
            num_classes: cfg.num_classes,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fwd.input_dim()
    }

    pub fn head_input_dim(&self) -> usize {
        self.head_w.cols()
    }

    /// Largest `|u_i|` across all layers and directions.
    pub fn max_abs_u(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(&l.fwd).chain(l.bwd.as_ref()))
            .fold(0.0, |m, p| m.max(p.max_abs_u()))
    }

    /// Human-readable architecture description, including how fusion widths
    /// feed the next layer.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let mut input_dim = self.input_dim();
        for (i, layer) in self.layers.iter().enumerate() {
            let dirs = if layer.bwd.is_some() {
                "bidirectional"
            } else {
                "forward-only"
            };
            s.push_str(&format!(
                "layer {i}: {dirs} indrnn, in {input_dim}, hidden {} per direction, {} fusion -> out {}\n",
                layer.fwd.hidden(),
                layer.fusion.name(),
                layer.output_dim(),
            ));
            input_dim = layer.output_dim();
        }
        s.push_str(&format!(
            "head: linear {} -> {} classes (per frame)\n",
            input_dim, self.num_classes
        ));
        s
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set("kind", "bml_indrnn");
        ck.set("num_layers", self.layers.len());
        ck.set("num_classes", self.num_classes);
        ck.set("activation", self.layers[0].fwd.activation.name());
        ck.set("u_max", self.layers[0].fwd.u_max);
        ck.set("fusion", self.layers[0].fusion.name());
        ck.set("bidirectional", self.layers[0].bwd.is_some());
        for (i, layer) in self.layers.iter().enumerate() {
            ck.push_tensor(&format!("layer{i}.fwd.w"), layer.fwd.w.clone());
            ck.push_tensor(&format!("layer{i}.fwd.u"), layer.fwd.u.clone());
            ck.push_tensor(&format!("layer{i}.fwd.b"), layer.fwd.b.clone());
            if let Some(bwd) = &layer.bwd {
                ck.push_tensor(&format!("layer{i}.bwd.w"), bwd.w.clone());
                ck.push_tensor(&format!("layer{i}.bwd.u"), bwd.u.clone());
                ck.push_tensor(&format!("layer{i}.bwd.b"), bwd.b.clone());
            }
        }
        ck.push_tensor("head.w", self.head_w.clone());
        ck.push_tensor("head.b", self.head_b.clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let kind = ck.get("kind")?;
        if kind != "bml_indrnn" {
            return Err(Error::Format(format!(
                "checkpoint holds {kind:?}, expected \"bml_indrnn\""
            )));
        }
        let num_layers: usize = ck.get_parsed("num_layers")?;
        let num_classes: usize = ck.get_parsed("num_classes")?;
        let activation = Activation::from_name(ck.get("activation")?)?;
        let u_max: f64 = ck.get_parsed("u_max")?;
        let fusion = Fusion::from_name(ck.get("fusion")?)?;
        let bidirectional: bool = ck.get_parsed("bidirectional")?;
        let mut layers = Vec::with_capacity(num_layers);
        for i in 0..num_layers {
            let fwd = IndRnnLayerParams {
                w: ck.tensor(&format!("layer{i}.fwd.w"))?.clone(),
                u: ck.tensor(&format!("layer{i}.fwd.u"))?.clone(),
                b: ck.tensor(&format!("layer{i}.fwd.b"))?.clone(),
                activation,
                u_max,
            };
            let bwd = if bidirectional {
                Some(IndRnnLayerParams {
                    w: ck.tensor(&format!("layer{i}.bwd.w"))?.clone(),
                    u: ck.tensor(&format!("layer{i}.bwd.u"))?.clone(),
                    b: ck.tensor(&format!("layer{i}.bwd.b"))?.clone(),
                    activation,
                    u_max,
                })
            } else {
                None
            };
            layers.push(BidirectionalLayer { fwd, bwd, fusion });
        }
        Ok(BmlIndRnnModel {
            layers,
            head_w: ck.tensor("head.w")?.clone(),
            head_b: ck.tensor("head.b")?.clone(),
            num_classes,
        })
    }
}

/// Hidden states and pre-activations of one direction, in processing order
/// (the backward direction stores time-reversed rows).
#[derive(Debug, Clone)]
pub struct DirectionTrace {
    /// Hidden states, `T x N`.
    pub h: Tensor,
    /// Pre-activations, `T x N`.
    pub pre: Tensor,
}

/// Everything one stacked layer produced.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub fwd: DirectionTrace,
    /// Backward direction, computed over the reversed sequence; rows are in
    /// reversed time order.
    pub bwd: Option<DirectionTrace>,
    /// Frame-aligned fused output, `T x output_dim`.
    pub fused: Tensor,
}

/// Full forward record: everything backpropagation through time needs.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// The original input sequence, `T x D`.
    pub input: Tensor,
    pub layers: Vec<LayerTrace>,
    /// Raw per-frame scores, `T x C`.
    pub logits: Tensor,
}

impl ForwardTrace {
    pub fn seq_len(&self) -> usize {
        self.input.rows()
    }
}

/// Run one IndRNN direction over a `T x M` sequence from initial state `h0`.
/// Returns hidden states and pre-activations, both `T x N`.
pub fn indrnn_forward(
    params: &IndRnnLayerParams,
    x: &Tensor,
    h0: &[f64],
) -> Result<(Tensor, Tensor)> {
    let n = params.hidden();
    let m = params.input_dim();
    if x.rank() != 2 || x.cols() != m {
        return Err(Error::Dimension {
            what: "indrnn layer input".into(),
            expected: format!("T x {m}"),
            got: format!("{:?}", x.shape()),
        });
    }
    if h0.len() != n {
        return Err(Error::Dimension {
            what: "indrnn initial state".into(),
            expected: format!("{n} units"),
            got: format!("{}", h0.len()),
        });
    }
    let t_len = x.rows();
    if t_len == 0 {
        return Err(Error::Dimension {
            what: "indrnn sequence length".into(),
            expected: "T >= 1".into(),
            got: "0".into(),
        });
    }
    let mut h = Tensor::zeros(vec![t_len, n]);
    let mut pre = Tensor::zeros(vec![t_len, n]);
    let mut prev: Vec<f64> = h0.to_vec();
    let mut wx = vec![0.0; n];
    let act = params.activation;
    for t in 0..t_len {
        matvec(&params.w, x.row(t), &mut wx);
        let u = params.u.data();
        let b = params.b.data();
        let pre_row = pre.row_mut(t);
        for i in 0..n {
            pre_row[i] = wx[i] + u[i] * prev[i] + b[i];
        }
        for i in 0..n {
            prev[i] = act.apply_scalar(pre_row[i]);
        }
        h.row_mut(t).copy_from_slice(&prev);
    }
    Ok((h, pre))
}

/// Run both directions of a layer over a frame sequence. The backward pass is
/// computed over the time-reversed sequence and re-reversed so that row `t` of
/// the fused output aligns with input frame `t`. Initial states are zero in
/// both directions.
pub fn bidirectional_layer_forward(layer: &BidirectionalLayer, x: &Tensor) -> Result<LayerTrace> {
    let n = layer.fwd.hidden();
    let zeros = vec![0.0; n];
    let (h_f, pre_f) = indrnn_forward(&layer.fwd, x, &zeros)?;
    let t_len = x.rows();
    let (bwd, fused) = match &layer.bwd {
        Some(bwd_params) => {
            if bwd_params.hidden() != n {
                return Err(Error::Dimension {
                    what: "backward direction width".into(),
                    expected: format!("{n}"),
                    got: format!("{}", bwd_params.hidden()),
                });
            }
            let x_rev = x.reverse_rows();
            let (h_b, pre_b) = indrnn_forward(bwd_params, &x_rev, &zeros)?;
            let h_b_aligned = h_b.reverse_rows();
            let fused = match layer.fusion {
                Fusion::Concat => {
                    let mut out = Tensor::zeros(vec![t_len, 2 * n]);
                    for t in 0..t_len {
                        let row = out.row_mut(t);
                        row[..n].copy_from_slice(h_f.row(t));
                        row[n..].copy_from_slice(h_b_aligned.row(t));
                    }
                    out
                }
                Fusion::Sum => h_f.add(&h_b_aligned)?,
            };
            (Some(DirectionTrace { h: h_b, pre: pre_b }), fused)
        }
        None => (None, h_f.clone()),
    };
    Ok(LayerTrace {
        fwd: DirectionTrace { h: h_f, pre: pre_f },
        bwd,
        fused,
    })
}

/// Chain all layers and apply the per-frame head. Returns the complete trace;
/// `logits` holds raw scores (no softmax).
pub fn model_forward(model: &BmlIndRnnModel, x: &Tensor) -> Result<ForwardTrace> {
    if x.rank() != 2 || x.cols() != model.input_dim() {
        return Err(Error::Dimension {
            what: "model input".into(),
            expected: format!("T x {}", model.input_dim()),
            got: format!("{:?}", x.shape()),
        });
    }
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut current = x;
    for (i, layer) in model.layers.iter().enumerate() {
        let trace = bidirectional_layer_forward(layer, current).map_err(|e| match e {
            Error::Dimension {
                what,
                expected,
                got,
            } => Error::Dimension {
                what: format!("layer {i}: {what}"),
                expected,
                got,
            },
            other => other,
        })?;
        layers.push(trace);
        current = &layers.last().expect("just pushed").fused;
    }
    let t_len = x.rows();
    let c = model.num_classes;
    let mut logits = Tensor::zeros(vec![t_len, c]);
    let mut score = vec![0.0; c];
    for t in 0..t_len {
        matvec(&model.head_w, current.row(t), &mut score);
        let row = logits.row_mut(t);
        let hb = model.head_b.data();
        for j in 0..c {
            row[j] = score[j] + hb[j];
        }
    }
    Ok(ForwardTrace {
        input: x.clone(),
        layers,
        logits,
    })
}

/// Per-frame argmax over classes; ties go to the lowest class index.
pub fn predict_labels(model: &BmlIndRnnModel, x: &Tensor) -> Result<Vec<usize>> {
    let trace = model_forward(model, x)?;
    Ok(argmax_rows(&trace.logits))
}

/// Row-wise argmax with lowest-index tie-breaking.
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    (0..scores.rows())
        .map(|t| {
            let row = scores.row(t);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
