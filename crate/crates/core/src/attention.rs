//! Frequency-gated attention (FGA) and the CBAM baseline.
//!
//! FGA refines a feature map `x` along three paths:
//!
//! * channel-spatial co-attention: `X_co = (x ⊗ M_c) ⊗ (x ⊗ M_s)`,
//! * frequency attention: `X_f = x ⊗ σ(ReLU(conv_k(ReLU(conv_1x1(|FFT2D(x)|)))))`,
//! * a per-sample scalar gate `G = σ(dense(ReLU(dense(GAP(X_co)))))`,
//!
//! fused as `X_out = x + G·X_co + (1−G)·X_f`. Every intermediate is
//! returned so callers can inspect the masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{self, conv_specs, dense_specs, ParamInit, ParamSpec};
use crate::tensor::{ConvSpec, ParamStore, PoolKind, Tape, Var};

fn default_reduction() -> usize {
    16
}
fn default_spatial_kernel() -> usize {
    7
}
fn default_gate_hidden() -> usize {
    32
}
fn default_freq_kernel() -> usize {
    3
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub channels: usize,
    #[serde(default = "default_reduction")]
    pub reduction: usize,
    #[serde(default = "default_spatial_kernel")]
    pub spatial_kernel: usize,
    #[serde(default = "default_gate_hidden")]
    pub gate_hidden: usize,
    /// Kernel of the channel-restoring frequency convolution; 1 gives the
    /// pointwise-only variant.
    #[serde(default = "default_freq_kernel")]
    pub freq_kernel: usize,
    /// Bias terms on every dense and conv layer inside the block.
    #[serde(default = "default_true")]
    pub bias: bool,
    /// Residual add on the CBAM block, for parity with FGA.
    #[serde(default = "default_true")]
    pub cbam_residual: bool,
}

impl AttentionConfig {
    pub fn new(channels: usize) -> Self {
        AttentionConfig {
            channels,
            reduction: default_reduction(),
            spatial_kernel: default_spatial_kernel(),
            gate_hidden: default_gate_hidden(),
            freq_kernel: default_freq_kernel(),
            bias: true,
            cbam_residual: true,
        }
    }

    /// Bottleneck width `max(1, ⌊C/r⌋)`.
    pub fn hidden(&self) -> usize {
        (self.channels / self.reduction).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.reduction == 0 || self.gate_hidden == 0 {
            return Err(Error::Config(format!("degenerate attention config {self:?}")));
        }
        for k in [self.spatial_kernel, self.freq_kernel] {
            if k % 2 == 0 {
                return Err(Error::UnsupportedKernel(format!("attention kernel {k} must be odd")));
            }
        }
        Ok(())
    }
}

fn channel_mlp_specs(prefix: &str, cfg: &AttentionConfig) -> Vec<ParamSpec> {
    let (c, hid) = (cfg.channels, cfg.hidden());
    let mut v = dense_specs(&format!("{prefix}.channel.fc1"), c, hid, cfg.bias, ParamInit::He);
    v.extend(dense_specs(&format!("{prefix}.channel.fc2"), hid, c, cfg.bias, ParamInit::Glorot));
    v
}

fn spatial_specs(prefix: &str, cfg: &AttentionConfig) -> Vec<ParamSpec> {
    conv_specs(&format!("{prefix}.spatial"), cfg.spatial_kernel, 2, 1, cfg.bias, ParamInit::Glorot)
}

/// Channel mask `σ(W₂ ReLU(W₁ GAP(x)))` and the refined `x ⊗ M_c`.
fn channel_attention(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<(Var, Var)> {
    let gap = tape.pool(x, PoolKind::GlobalAvg)?;
    let h = layers::dense(tape, store, &format!("{prefix}.channel.fc1"), gap)?;
    let h = tape.relu(h)?;
    let logits = layers::dense(tape, store, &format!("{prefix}.channel.fc2"), h)?;
    let m_c = tape.sigmoid(logits)?;
    let x_c = tape.mul(x, m_c)?;
    Ok((m_c, x_c))
}

/// Spatial mask `σ(conv_k([avg_c(x), max_c(x)]))` and the refined `x ⊗ M_s`.
fn spatial_attention(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<(Var, Var)> {
    let avg = tape.pool(x, PoolKind::ChannelAvg)?;
    let max = tape.pool(x, PoolKind::ChannelMax)?;
    let f_s = tape.concat_channels(&[avg, max])?;
    let logits = layers::conv(tape, store, &format!("{prefix}.spatial"), f_s, ConvSpec::default())?;
    let m_s = tape.sigmoid(logits)?;
    let x_s = tape.mul(x, m_s)?;
    Ok((m_s, x_s))
}

fn check_channels(tape: &Tape, x: Var, cfg: &AttentionConfig) -> Result<()> {
    let (_, _, _, c) = tape.value(x).shape().nhwc()?;
    if c != cfg.channels {
        return Err(Error::ShapeMismatch(format!(
            "attention block built for {} channels received {c}",
            cfg.channels
        )));
    }
    Ok(())
}

/// Handles to every intermediate of one FGA forward pass.
#[derive(Clone, Copy, Debug)]
pub struct FgaOutputs {
    pub m_c: Var,
    pub x_c: Var,
    pub m_s: Var,
    pub x_s: Var,
    pub x_co: Var,
    pub m_f: Var,
    pub x_f: Var,
    /// `N×1×1×1`.
    pub gate: Var,
    pub x_fuse: Var,
    pub out: Var,
}

#[derive(Clone, Debug)]
pub struct FgaBlock {
    prefix: String,
    cfg: AttentionConfig,
}

impl FgaBlock {
    pub fn new(prefix: impl Into<String>, cfg: AttentionConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(FgaBlock { prefix: prefix.into(), cfg })
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.cfg
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let (p, cfg) = (&self.prefix, &self.cfg);
        let (c, hid) = (cfg.channels, cfg.hidden());
        let mut v = channel_mlp_specs(p, cfg);
        v.extend(spatial_specs(p, cfg));
        v.extend(conv_specs(&format!("{p}.freq.reduce"), 1, c, hid, cfg.bias, ParamInit::He));
        v.extend(conv_specs(&format!("{p}.freq.expand"), cfg.freq_kernel, hid, c, cfg.bias, ParamInit::He));
        v.extend(dense_specs(&format!("{p}.gate.fc1"), c, cfg.gate_hidden, cfg.bias, ParamInit::He));
        v.extend(dense_specs(&format!("{p}.gate.fc2"), cfg.gate_hidden, 1, cfg.bias, ParamInit::Glorot));
        v
    }

    pub fn register(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        layers::register(store, &self.param_specs(), seed)
    }

    pub fn channel_attention(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
        check_channels(tape, x, &self.cfg)?;
        channel_attention(tape, store, &self.prefix, x)
    }

    pub fn spatial_attention(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
        check_channels(tape, x, &self.cfg)?;
        spatial_attention(tape, store, &self.prefix, x)
    }

    /// Frequency mask `M_f` (each entry in `[0.5, 1)`) and `x ⊗ M_f`.
    pub fn frequency_attention(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
        check_channels(tape, x, &self.cfg)?;
        let p = &self.prefix;
        let f = tape.fft_magnitude(x)?;
        let f = layers::conv(tape, store, &format!("{p}.freq.reduce"), f, ConvSpec::default())?;
        let f = tape.relu(f)?;
        let f = layers::conv(tape, store, &format!("{p}.freq.expand"), f, ConvSpec::default())?;
        let f = tape.relu(f)?;
        let m_f = tape.sigmoid(f)?;
        let x_f = tape.mul(x, m_f)?;
        Ok((m_f, x_f))
    }

    /// Per-sample gate `G` of shape `N×1×1×1`.
    pub fn dynamic_gate(&self, tape: &mut Tape, store: &ParamStore, x_co: Var) -> Result<Var> {
        check_channels(tape, x_co, &self.cfg)?;
        let p = &self.prefix;
        let gap = tape.pool(x_co, PoolKind::GlobalAvg)?;
        let h = layers::dense(tape, store, &format!("{p}.gate.fc1"), gap)?;
        let h = tape.relu(h)?;
        let g = layers::dense(tape, store, &format!("{p}.gate.fc2"), h)?;
        tape.sigmoid(g)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<FgaOutputs> {
        let (m_c, x_c) = self.channel_attention(tape, store, x)?;
        let (m_s, x_s) = self.spatial_attention(tape, store, x)?;
        let x_co = tape.mul(x_c, x_s)?;
        let (m_f, x_f) = self.frequency_attention(tape, store, x)?;
        let gate = self.dynamic_gate(tape, store, x_co)?;
        let co_part = tape.mul(x_co, gate)?;
        let one_minus = tape.affine(gate, -1.0, 1.0)?;
        let f_part = tape.mul(x_f, one_minus)?;
        let x_fuse = tape.add(co_part, f_part)?;
        let out = tape.add(x, x_fuse)?;
        Ok(FgaOutputs { m_c, x_c, m_s, x_s, x_co, m_f, x_f, gate, x_fuse, out })
    }
}

/// Handles to the intermediates of one CBAM forward pass.
#[derive(Clone, Copy, Debug)]
pub struct CbamOutputs {
    pub m_c: Var,
    pub m_s: Var,
    /// `(x ⊗ M_c) ⊗ M_s`, before any residual add.
    pub refined: Var,
    pub out: Var,
}

#[derive(Clone, Debug)]
pub struct CbamBlock {
    prefix: String,
    cfg: AttentionConfig,
}

impl CbamBlock {
    pub fn new(prefix: impl Into<String>, cfg: AttentionConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(CbamBlock { prefix: prefix.into(), cfg })
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.cfg
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut v = channel_mlp_specs(&self.prefix, &self.cfg);
        v.extend(spatial_specs(&self.prefix, &self.cfg));
        v
    }

    pub fn register(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        layers::register(store, &self.param_specs(), seed)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<CbamOutputs> {
        check_channels(tape, x, &self.cfg)?;
        let p = &self.prefix;
        // One MLP, bound once, applied to both pooled descriptors.
        let mlp = |tape: &mut Tape, d: Var| -> Result<Var> {
            let h = layers::dense(tape, store, &format!("{p}.channel.fc1"), d)?;
            let h = tape.relu(h)?;
            layers::dense(tape, store, &format!("{p}.channel.fc2"), h)
        };
        let avg = tape.pool(x, PoolKind::GlobalAvg)?;
        let max = tape.pool(x, PoolKind::GlobalMax)?;
        let a = mlp(tape, avg)?;
        let m = mlp(tape, max)?;
        let logits = tape.add(a, m)?;
        let m_c = tape.sigmoid(logits)?;
        let x1 = tape.mul(x, m_c)?;
        let (m_s, refined) = spatial_attention(tape, store, p, x1)?;
        let out = if self.cfg.cbam_residual { tape.add(x, refined)? } else { refined };
        Ok(CbamOutputs { m_c, m_s, refined, out })
    }
}

/// Closed-form FGA parameter count.
pub fn fga_param_count(cfg: &AttentionConfig) -> usize {
    let (c, hid, k, g, fk) = (cfg.channels, cfg.hidden(), cfg.spatial_kernel, cfg.gate_hidden, cfg.freq_kernel);
    let b = usize::from(cfg.bias);
    let channel = 2 * c * hid + b * (hid + c);
    let spatial = 2 * k * k + b;
    let freq = c * hid + fk * fk * hid * c + b * (hid + c);
    let gate = c * g + g + b * (g + 1);
    channel + spatial + freq + gate
}

/// Closed-form CBAM parameter count.
pub fn cbam_param_count(cfg: &AttentionConfig) -> usize {
    let (c, hid, k) = (cfg.channels, cfg.hidden(), cfg.spatial_kernel);
    let b = usize::from(cfg.bias);
    2 * c * hid + b * (hid + c) + 2 * k * k + b
}
