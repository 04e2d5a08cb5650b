//! Dual-backbone classifier.
//!
//! Backbone A stacks VGG-style stages (`[3×3 conv + ReLU] ×2, maxpool`);
//! backbone B stacks depthwise-separable stages (`depthwise 3×3, pointwise
//! 1×1 + ReLU, maxpool`). Each output passes through its own attention
//! block, the two maps are aligned and concatenated, fused by a 1×1 conv,
//! pooled, and classified.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, CbamBlock, FgaBlock};
use crate::error::{Error, Result};
use crate::layers::{self, conv_specs, dense_specs, ParamInit, ParamSpec};
use crate::tensor::{ConvSpec, ParamStore, PoolKind, ResizeKind, Tape, Tensor, Var};

/// Default Grad-CAM tap: the fused 1×1-conv output shared by both backbones.
pub const DEFAULT_TAP: &str = "fuse";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    None,
    Cbam,
    Fga,
}

/// Attention hyperparameters shared by both backbones; the channel count is
/// taken from each backbone's output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionSettings {
    pub kind: AttentionKind,
    pub reduction: usize,
    pub spatial_kernel: usize,
    pub gate_hidden: usize,
    pub freq_kernel: usize,
    pub bias: bool,
    pub cbam_residual: bool,
}

impl Default for AttentionSettings {
    fn default() -> Self {
        let c = AttentionConfig::new(1);
        AttentionSettings {
            kind: AttentionKind::Fga,
            reduction: c.reduction,
            spatial_kernel: c.spatial_kernel,
            gate_hidden: c.gate_hidden,
            freq_kernel: c.freq_kernel,
            bias: c.bias,
            cbam_residual: c.cbam_residual,
        }
    }
}

impl AttentionSettings {
    pub fn for_channels(&self, channels: usize) -> AttentionConfig {
        AttentionConfig {
            channels,
            reduction: self.reduction,
            spatial_kernel: self.spatial_kernel,
            gate_hidden: self.gate_hidden,
            freq_kernel: self.freq_kernel,
            bias: self.bias,
            cbam_residual: self.cbam_residual,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    /// `[height, width]` of preprocessed inputs.
    pub input_size: [usize; 2],
    pub input_channels: usize,
    /// Output channels of each VGG-style stage.
    pub backbone_a: Vec<usize>,
    /// Output channels of each separable stage.
    pub backbone_b: Vec<usize>,
    pub fuse_channels: usize,
    pub dropout: f64,
    pub classes: usize,
    pub attention: AttentionSettings,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            input_size: [64, 64],
            input_channels: 3,
            backbone_a: vec![8, 16, 32],
            backbone_b: vec![8, 16, 32],
            fuse_channels: 64,
            dropout: 0.3,
            classes: 4,
            attention: AttentionSettings::default(),
        }
    }
}

impl ModelSpec {
    /// Smallest useful configuration; used by tests and smoke runs.
    pub fn tiny(input: usize, classes: usize) -> Self {
        ModelSpec {
            input_size: [input, input],
            input_channels: 3,
            backbone_a: vec![4, 8],
            backbone_b: vec![4, 8],
            fuse_channels: 16,
            dropout: 0.3,
            classes,
            attention: AttentionSettings { gate_hidden: 8, ..AttentionSettings::default() },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.input_size;
        if self.classes < 2 {
            return Err(Error::Config(format!("classes must be >= 2, got {}", self.classes)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.fuse_channels == 0 || self.input_channels == 0 {
            return Err(Error::Config("zero-width layer".into()));
        }
        for (name, stages) in [("backbone_a", &self.backbone_a), ("backbone_b", &self.backbone_b)] {
            if stages.is_empty() || stages.contains(&0) {
                return Err(Error::Config(format!("{name} needs at least one non-empty stage")));
            }
            let stride = 1usize << stages.len();
            if h % stride != 0 || w % stride != 0 {
                return Err(Error::InvalidShape(format!(
                    "input {h}x{w} is not divisible by the {name} pool stride {stride}"
                )));
            }
        }
        if self.attention.kind != AttentionKind::None {
            self.attention.for_channels(1).validate()?;
        }
        Ok(())
    }

    /// `(H, W, C)` of a backbone's output map.
    pub fn backbone_output(&self, which: Backbone) -> (usize, usize, usize) {
        let stages = self.stages(which);
        let stride = 1usize << stages.len();
        (self.input_size[0] / stride, self.input_size[1] / stride, *stages.last().unwrap_or(&0))
    }

    fn stages(&self, which: Backbone) -> &[usize] {
        match which {
            Backbone::A => &self.backbone_a,
            Backbone::B => &self.backbone_b,
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut v = Vec::new();
        let mut cin = self.input_channels;
        for (i, &c) in self.backbone_a.iter().enumerate() {
            v.extend(conv_specs(&format!("a.s{i}.conv0"), 3, cin, c, true, ParamInit::He));
            v.extend(conv_specs(&format!("a.s{i}.conv1"), 3, c, c, true, ParamInit::He));
            cin = c;
        }
        cin = self.input_channels;
        for (i, &c) in self.backbone_b.iter().enumerate() {
            v.extend(conv_specs(&format!("b.s{i}.dw"), 3, 1, cin, false, ParamInit::He));
            v.extend(conv_specs(&format!("b.s{i}.pw"), 1, cin, c, true, ParamInit::He));
            cin = c;
        }
        for (prefix, which) in [("a.attn", Backbone::A), ("b.attn", Backbone::B)] {
            if let Some(block) = self.attention_block(prefix, which) {
                v.extend(block.param_specs());
            }
        }
        let concat = self.concat_channels();
        v.extend(conv_specs("fuse", 1, concat, self.fuse_channels, true, ParamInit::He));
        v.extend(dense_specs("head", self.fuse_channels, self.classes, true, ParamInit::Glorot));
        v
    }

    pub fn concat_channels(&self) -> usize {
        self.backbone_output(Backbone::A).2 + self.backbone_output(Backbone::B).2
    }

    fn attention_block(&self, prefix: &str, which: Backbone) -> Option<AttentionBlock> {
        let cfg = self.attention.for_channels(self.backbone_output(which).2);
        match self.attention.kind {
            AttentionKind::None => None,
            AttentionKind::Fga => FgaBlock::new(prefix, cfg).ok().map(AttentionBlock::Fga),
            AttentionKind::Cbam => CbamBlock::new(prefix, cfg).ok().map(AttentionBlock::Cbam),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backbone {
    A,
    B,
}

#[derive(Clone, Debug)]
enum AttentionBlock {
    Fga(FgaBlock),
    Cbam(CbamBlock),
}

impl AttentionBlock {
    fn param_specs(&self) -> Vec<ParamSpec> {
        match self {
            AttentionBlock::Fga(b) => b.param_specs(),
            AttentionBlock::Cbam(b) => b.param_specs(),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        match self {
            AttentionBlock::Fga(b) => Ok(b.forward(tape, store, x)?.out),
            AttentionBlock::Cbam(b) => Ok(b.forward(tape, store, x)?.out),
        }
    }
}

/// Training mode enables dropout with the given mask seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardMode {
    pub training: bool,
    pub dropout_seed: u64,
}

impl ForwardMode {
    pub const INFERENCE: ForwardMode = ForwardMode { training: false, dropout_seed: 0 };

    pub fn training(dropout_seed: u64) -> Self {
        ForwardMode { training: true, dropout_seed }
    }
}

pub struct ForwardOutput {
    /// Pre-softmax scores, `N×C`.
    pub logits: Var,
    pub probs: Var,
    /// Named intermediate feature maps available to Grad-CAM.
    pub taps: BTreeMap<String, Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub confidence: f64,
    pub probs: Vec<f64>,
}

/// Argmax with lowest-index tie-breaking.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    params: ParamStore,
    attn_a: Option<AttentionBlock>,
    attn_b: Option<AttentionBlock>,
}

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        layers::register(&mut params, &spec.param_specs(), seed)?;
        Ok(Self::assemble(spec, params))
    }

    /// Wraps existing parameters; names and shapes must match `spec` exactly.
    pub fn from_params(spec: ModelSpec, params: ParamStore) -> Result<Self> {
        spec.validate()?;
        let expected = spec.param_specs();
        if expected.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "spec declares {} parameters, got {}",
                expected.len(),
                params.len()
            )));
        }
        for p in &expected {
            let v = params
                .get(&p.name)
                .ok_or_else(|| Error::ShapeMismatch(format!("missing parameter `{}`", p.name)))?;
            if v.value.dims() != p.dims.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter `{}` is {:?}, spec expects {:?}",
                    p.name,
                    v.value.dims(),
                    p.dims
                )));
            }
        }
        Ok(Self::assemble(spec, params))
    }

    fn assemble(spec: ModelSpec, params: ParamStore) -> Self {
        let attn_a = spec.attention_block("a.attn", Backbone::A);
        let attn_b = spec.attention_block("b.attn", Backbone::B);
        Model { spec, params, attn_a, attn_b }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn tap_names() -> &'static [&'static str] {
        &["backbone_a", "backbone_b", "attn_a", "attn_b", "concat", "fuse"]
    }

    pub fn backbone_forward(&self, tape: &mut Tape, x: Var, which: Backbone) -> Result<Var> {
        let store = &self.params;
        let mut h = x;
        for i in 0..self.spec.stages(which).len() {
            match which {
                Backbone::A => {
                    for conv in ["conv0", "conv1"] {
                        h = layers::conv(tape, store, &format!("a.s{i}.{conv}"), h, ConvSpec::default())?;
                        h = tape.relu(h)?;
                    }
                }
                Backbone::B => {
                    let dw = ConvSpec { depthwise: true, ..ConvSpec::default() };
                    h = layers::conv(tape, store, &format!("b.s{i}.dw"), h, dw)?;
                    h = layers::conv(tape, store, &format!("b.s{i}.pw"), h, ConvSpec::default())?;
                    h = tape.relu(h)?;
                }
            }
            h = tape.pool(h, PoolKind::MaxPool2x2)?;
        }
        Ok(h)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, h, w, c) = x.shape().nhwc()?;
        let [eh, ew] = self.spec.input_size;
        if (h, w, c) != (eh, ew, self.spec.input_channels) {
            return Err(Error::InvalidShape(format!(
                "model expects {eh}x{ew}x{} inputs, got {}",
                self.spec.input_channels,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, mode: ForwardMode) -> Result<ForwardOutput> {
        self.check_input(tape.value(x))?;
        let store = &self.params;
        let mut taps = BTreeMap::new();

        let fa = self.backbone_forward(tape, x, Backbone::A)?;
        let fb = self.backbone_forward(tape, x, Backbone::B)?;
        taps.insert("backbone_a".to_string(), fa);
        taps.insert("backbone_b".to_string(), fb);

        let fa = match &self.attn_a {
            Some(block) => block.forward(tape, store, fa)?,
            None => fa,
        };
        let fb = match &self.attn_b {
            Some(block) => block.forward(tape, store, fb)?,
            None => fb,
        };
        taps.insert("attn_a".to_string(), fa);
        taps.insert("attn_b".to_string(), fb);

        let (fa, fb) = self.align(tape, fa, fb)?;
        let concat = tape.concat_channels(&[fa, fb])?;
        taps.insert("concat".to_string(), concat);

        let fused = layers::conv(tape, store, "fuse", concat, ConvSpec::default())?;
        let fused = tape.relu(fused)?;
        taps.insert("fuse".to_string(), fused);

        let pooled = tape.pool(fused, PoolKind::GlobalAvg)?;
        let dropped = tape.dropout(pooled, self.spec.dropout, mode.training, mode.dropout_seed)?;
        let n = tape.value(x).dims()[0];
        let flat = tape.reshape(dropped, &[n, self.spec.fuse_channels])?;
        let logits = layers::dense(tape, store, "head", flat)?;
        let probs = tape.softmax(logits)?;
        Ok(ForwardOutput { logits, probs, taps })
    }

    /// Bilinearly resizes the spatially smaller map to the larger one; a
    /// no-op when both already agree.
    fn align(&self, tape: &mut Tape, a: Var, b: Var) -> Result<(Var, Var)> {
        let (_, ha, wa, _) = tape.value(a).shape().nhwc()?;
        let (_, hb, wb, _) = tape.value(b).shape().nhwc()?;
        if (ha, wa) == (hb, wb) {
            return Ok((a, b));
        }
        if ha * wa >= hb * wb {
            let b = tape.resize(b, ha, wa, ResizeKind::Bilinear)?;
            Ok((a, b))
        } else {
            let a = tape.resize(a, hb, wb, ResizeKind::Bilinear)?;
            Ok((a, b))
        }
    }

    /// Class probabilities for a batch, inference mode.
    pub fn infer_probs(&self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.leaf(batch.clone());
        let out = self.forward(&mut tape, x, ForwardMode::INFERENCE)?;
        Ok(tape.value(out.probs).clone())
    }

    /// Classifies one preprocessed `H×W×C` (or `1×H×W×C`) image.
    pub fn predict(&self, image: &Tensor) -> Result<Prediction> {
        let batch = match image.dims() {
            [h, w, c] => image.reshape(&[1, *h, *w, *c])?,
            [1, _, _, _] => image.clone(),
            _ => {
                return Err(Error::InvalidShape(format!(
                    "predict expects one image, got {}",
                    image.shape()
                )))
            }
        };
        self.check_input(&batch)?;
        let probs = self.infer_probs(&batch)?.into_data();
        let class = argmax(&probs);
        Ok(Prediction { class, confidence: probs[class], probs })
    }
}
