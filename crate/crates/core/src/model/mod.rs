//! The two-branch network: a classification branch producing the class
//! activation sequence (CAS) and an attention branch producing per-snippet
//! foreground attention, plus the hybrid attention paths built from them.

pub(crate) mod checkpoint;
mod params;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::{HamNetConfig, HamNetParams, ParamVars, PARAM_NAMES};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Which snippets the semi-soft and hard attentions keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DropMode {
    /// Keep `a_i < gamma`, dropping the most discriminative snippets.
    #[default]
    Discriminative,
    /// Keep `a_i > gamma`, dropping the least discriminative snippets.
    Inverse,
}

impl DropMode {
    fn keeps(self, a: f64, gamma: f64) -> bool {
        match self {
            DropMode::Discriminative => a < gamma,
            DropMode::Inverse => a > gamma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardOptions {
    pub gamma: f64,
    /// Top-k pooling size; clamped to `T` per video.
    pub k: usize,
    pub drop_mode: DropMode,
    /// Let gradients reach the attention branch through the values retained
    /// by the semi-soft attention. Off: they are detached constants.
    pub semisoft_grad: bool,
}

impl ForwardOptions {
    pub fn new(gamma: f64, k: usize) -> Self {
        Self {
            gamma,
            k,
            drop_mode: DropMode::Discriminative,
            semisoft_grad: false,
        }
    }
}

/// Graph handles for every quantity of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct OutputVars {
    pub cas: Var,
    pub attn: Var,
    pub cas_attn: Var,
    pub attn_semisoft: Var,
    pub attn_hard: Var,
    pub p_base: Var,
    pub p_attn: Var,
    pub p_semisoft: Var,
    pub p_hard: Var,
}

/// Plain values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    /// `T x (c+1)` logits; the last column is background.
    pub cas: Tensor,
    pub attn: Vec<f64>,
    pub cas_attn: Tensor,
    pub attn_semisoft: Vec<f64>,
    pub attn_hard: Vec<f64>,
    pub p_base: Vec<f64>,
    pub p_attn: Vec<f64>,
    pub p_semisoft: Vec<f64>,
    pub p_hard: Vec<f64>,
}

impl ModelOutput {
    pub fn num_snippets(&self) -> usize {
        self.attn.len()
    }

    /// Number of foreground classes `c`.
    pub fn num_classes(&self) -> usize {
        self.p_attn.len() - 1
    }
}

impl OutputVars {
    pub fn values(&self, g: &Graph) -> ModelOutput {
        let vec = |v: Var| g.value(v).data().to_vec();
        ModelOutput {
            cas: g.value(self.cas).clone(),
            attn: vec(self.attn),
            cas_attn: g.value(self.cas_attn).clone(),
            attn_semisoft: vec(self.attn_semisoft),
            attn_hard: vec(self.attn_hard),
            p_base: vec(self.p_base),
            p_attn: vec(self.p_attn),
            p_semisoft: vec(self.p_semisoft),
            p_hard: vec(self.p_hard),
        }
    }
}

fn check_features(g: &Graph, x: Var, config: &HamNetConfig) -> Result<()> {
    match g.value(x).shape() {
        [t, f] if *f == config.feature_dim && *t >= 1 => Ok(()),
        [_, f] if *f != config.feature_dim => Err(Error::invalid(format!(
            "feature dimension {f} does not match model feature_dim {}",
            config.feature_dim
        ))),
        s => Err(Error::invalid(format!("features must be T x F with T >= 1, got {s:?}"))),
    }
}

/// conv -> leaky relu -> conv -> leaky relu -> linear; raw `T x (c+1)` logits.
pub fn forward_classification(g: &mut Graph, x: Var, p: &ParamVars, config: &HamNetConfig) -> Result<Var> {
    check_features(g, x, config)?;
    let h = g.conv1d(x, p.cls_conv1_w, p.cls_conv1_b)?;
    let h = g.leaky_relu(h, config.slope);
    let h = g.conv1d(h, p.cls_conv2_w, p.cls_conv2_b)?;
    let h = g.leaky_relu(h, config.slope);
    g.linear(h, p.cls_linear_w, p.cls_linear_b)
}

/// conv -> leaky relu -> conv -> sigmoid; one attention value per snippet.
pub fn forward_attention(g: &mut Graph, x: Var, p: &ParamVars, config: &HamNetConfig) -> Result<Var> {
    check_features(g, x, config)?;
    let t_len = g.value(x).shape()[0];
    let h = g.conv1d(x, p.attn_conv1_w, p.attn_conv1_b)?;
    let h = g.leaky_relu(h, config.slope);
    let h = g.conv1d(h, p.attn_conv2_w, p.attn_conv2_b)?;
    let a = g.sigmoid(h);
    g.reshape(a, vec![t_len])
}

/// `s_attn[i][j] = s[i][j] * a[i]`.
pub fn modulate(g: &mut Graph, cas: Var, attn: Var) -> Result<Var> {
    g.modulate(cas, attn)
}

/// Soft attention with dropped snippets zeroed.
pub fn semi_soft(attn: &[f64], gamma: f64, mode: DropMode) -> Vec<f64> {
    attn.iter()
        .map(|&a| if mode.keeps(a, gamma) { a } else { 0.0 })
        .collect()
}

/// Indicator of the snippets the semi-soft attention keeps.
pub fn hard(attn: &[f64], gamma: f64, mode: DropMode) -> Vec<f64> {
    attn.iter()
        .map(|&a| if mode.keeps(a, gamma) { 1.0 } else { 0.0 })
        .collect()
}

/// Top-k temporal mean followed by a softmax over classes. `k` is clamped
/// to the sequence length.
pub fn video_scores(g: &mut Graph, cas_like: Var, k: usize) -> Result<Var> {
    let t_len = g.value(cas_like).shape()[0];
    let v = g.topk_mean(cas_like, k.clamp(1, t_len.max(1)))?;
    g.softmax(v)
}

/// Full forward pass over one video's `T x F` features.
pub fn forward(
    g: &mut Graph,
    x: Var,
    p: &ParamVars,
    config: &HamNetConfig,
    opts: &ForwardOptions,
) -> Result<OutputVars> {
    forward_impl(g, x, p, config, opts, None)
}

/// Like [`forward`], but the detached semi-soft and hard attentions are
/// taken from `frozen` instead of being recomputed from the current soft
/// attention. Finite-difference checks use this to hold the detached
/// quantities at their base-point values.
pub fn forward_frozen(
    g: &mut Graph,
    x: Var,
    p: &ParamVars,
    config: &HamNetConfig,
    opts: &ForwardOptions,
    frozen: &FrozenAttention,
) -> Result<OutputVars> {
    forward_impl(g, x, p, config, opts, Some(frozen))
}

/// Semi-soft and hard attention values captured from an earlier pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenAttention {
    pub semisoft: Vec<f64>,
    pub hard: Vec<f64>,
}

impl FrozenAttention {
    pub fn capture(attn: &[f64], gamma: f64, mode: DropMode) -> Self {
        Self {
            semisoft: semi_soft(attn, gamma, mode),
            hard: hard(attn, gamma, mode),
        }
    }
}

fn forward_impl(
    g: &mut Graph,
    x: Var,
    p: &ParamVars,
    config: &HamNetConfig,
    opts: &ForwardOptions,
    frozen: Option<&FrozenAttention>,
) -> Result<OutputVars> {
    if !(0.0..=1.0).contains(&opts.gamma) {
        return Err(Error::invalid(format!("gamma {} outside [0, 1]", opts.gamma)));
    }
    let cas = forward_classification(g, x, p, config)?;
    let attn = forward_attention(g, x, p, config)?;
    let cas_attn = modulate(g, cas, attn)?;

    let a = g.value(attn).data().to_vec();
    let drop = match frozen {
        Some(f) if f.semisoft.len() == a.len() && f.hard.len() == a.len() => f.clone(),
        Some(f) => {
            return Err(Error::invalid(format!(
                "frozen attention length {} vs {} snippets",
                f.hard.len(),
                a.len()
            )))
        }
        None => FrozenAttention::capture(&a, opts.gamma, opts.drop_mode),
    };
    let attn_semisoft = if opts.semisoft_grad {
        let mask = g.constant(Tensor::vector(drop.hard.clone()));
        g.mul(attn, mask)?
    } else {
        g.constant(Tensor::vector(drop.semisoft))
    };
    let attn_hard = g.constant(Tensor::vector(drop.hard));
    let cas_semisoft = modulate(g, cas, attn_semisoft)?;
    let cas_hard = modulate(g, cas, attn_hard)?;

    Ok(OutputVars {
        cas,
        attn,
        cas_attn,
        attn_semisoft,
        attn_hard,
        p_base: video_scores(g, cas, opts.k)?,
        p_attn: video_scores(g, cas_attn, opts.k)?,
        p_semisoft: video_scores(g, cas_semisoft, opts.k)?,
        p_hard: video_scores(g, cas_hard, opts.k)?,
    })
}

/// Inference-only forward pass.
pub fn predict(params: &HamNetParams, features: &Tensor, opts: &ForwardOptions) -> Result<ModelOutput> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(features.clone());
    let out = forward(&mut g, x, &p, &params.config, opts)?;
    Ok(out.values(&g))
}
