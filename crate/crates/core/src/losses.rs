//! The joint training objective: four attention-pathway cross-entropies,
//! attention sparsity, and the guide term tying attention to the CAS
//! background probability.

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, BackgroundMode, GradCheckOptions, GradCheckReport, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{forward_frozen, ForwardOptions, FrozenAttention, HamNetParams, OutputVars, ParamVars};

/// Probabilities are clamped to this before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelVariant {
    /// Background entry set to 1.
    WithBackground,
    /// Background entry set to 0.
    ForegroundOnly,
}

/// Multi-hot video label of length `c + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector {
    values: Vec<f64>,
    variant: LabelVariant,
}

impl LabelVector {
    pub fn new(classes: &[usize], num_classes: usize, variant: LabelVariant) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::invalid("label needs at least one foreground class"));
        }
        let mut values = vec![0.0; num_classes + 1];
        for &c in classes {
            if c >= num_classes {
                return Err(Error::invalid(format!(
                    "class {c} out of range for {num_classes} classes"
                )));
            }
            values[c] = 1.0;
        }
        if variant == LabelVariant::WithBackground {
            values[num_classes] = 1.0;
        }
        Ok(Self { values, variant })
    }

    pub fn with_background(classes: &[usize], num_classes: usize) -> Result<Self> {
        Self::new(classes, num_classes, LabelVariant::WithBackground)
    }

    pub fn foreground_only(classes: &[usize], num_classes: usize) -> Result<Self> {
        Self::new(classes, num_classes, LabelVariant::ForegroundOnly)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn variant(&self) -> LabelVariant {
        self.variant
    }
}

/// `lambda0..lambda3`, `alpha`, `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub bcl: f64,
    pub sal: f64,
    pub ssal: f64,
    pub hal: f64,
    pub sparsity: f64,
    pub guide: f64,
}

impl Default for LossWeights {
    /// The THUMOS14 setting.
    fn default() -> Self {
        Self {
            bcl: 0.8,
            sal: 0.8,
            ssal: 0.2,
            hal: 0.2,
            sparsity: 0.8,
            guide: 0.8,
        }
    }
}

impl LossWeights {
    pub const TERMS: [&'static str; 6] = ["bcl", "sal", "ssal", "hal", "sparsity", "guide"];

    pub fn zero() -> Self {
        Self {
            bcl: 0.0,
            sal: 0.0,
            ssal: 0.0,
            hal: 0.0,
            sparsity: 0.0,
            guide: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.bcl, self.sal, self.ssal, self.hal, self.sparsity, self.guide]
    }

    pub fn get_mut(&mut self, term: &str) -> Option<&mut f64> {
        Some(match term {
            "bcl" | "lambda0" => &mut self.bcl,
            "sal" | "lambda1" => &mut self.sal,
            "ssal" | "lambda2" => &mut self.ssal,
            "hal" | "lambda3" => &mut self.hal,
            "sparsity" | "alpha" => &mut self.sparsity,
            "guide" | "beta" => &mut self.guide,
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (w, name) in self.as_array().iter().zip(Self::TERMS) {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::invalid(format!("loss weight {name}={w} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossOptions {
    pub background_mode: BackgroundModeConfig,
    /// Divide the sparsity term by `T`.
    pub sparsity_mean: bool,
    /// Divide the guide term by `T`.
    pub guide_mean: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            background_mode: BackgroundModeConfig::Softmax,
            sparsity_mean: false,
            guide_mean: false,
        }
    }
}

/// Serializable mirror of [`BackgroundMode`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundModeConfig {
    Softmax,
    Literal,
}

impl From<BackgroundModeConfig> for BackgroundMode {
    fn from(m: BackgroundModeConfig) -> Self {
        match m {
            BackgroundModeConfig::Softmax => BackgroundMode::Softmax,
            BackgroundModeConfig::Literal => BackgroundMode::Literal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bcl: f64,
    pub sal: f64,
    pub ssal: f64,
    pub hal: f64,
    pub sparsity: f64,
    pub guide: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    pub fn components(&self) -> [f64; 6] {
        [self.bcl, self.sal, self.ssal, self.hal, self.sparsity, self.guide]
    }
}

/// `-sum_j y_j * ln(max(p_j, 1e-12))`.
pub fn cross_entropy_multihot(g: &mut Graph, p: Var, y: &LabelVector) -> Result<Var> {
    let n = g.value(p).len();
    if n != y.values.len() {
        return Err(Error::invalid(format!(
            "cross entropy: {n} probabilities vs label length {}",
            y.values.len()
        )));
    }
    let logp = g.log(p, LOG_FLOOR);
    let yv = g.constant(Tensor::vector(y.values.clone()));
    let prod = g.mul(logp, yv)?;
    let s = g.sum(prod);
    Ok(g.scale(s, -1.0))
}

fn num_classes(g: &Graph, out: &OutputVars) -> usize {
    g.value(out.p_base).len() - 1
}

/// Base classification loss on `p_base` with the background label set.
pub fn bcl(g: &mut Graph, out: &OutputVars, classes: &[usize]) -> Result<Var> {
    let y = LabelVector::with_background(classes, num_classes(g, out))?;
    cross_entropy_multihot(g, out.p_base, &y)
}

/// Soft-attention loss on `p_attn` with the foreground-only label.
pub fn sal(g: &mut Graph, out: &OutputVars, classes: &[usize]) -> Result<Var> {
    let y = LabelVector::foreground_only(classes, num_classes(g, out))?;
    cross_entropy_multihot(g, out.p_attn, &y)
}

/// Semi-soft attention loss on `p_semisoft` with the foreground-only label.
pub fn ssal(g: &mut Graph, out: &OutputVars, classes: &[usize]) -> Result<Var> {
    let y = LabelVector::foreground_only(classes, num_classes(g, out))?;
    cross_entropy_multihot(g, out.p_semisoft, &y)
}

/// Hard attention loss on `p_hard` with the background label set.
pub fn hal(g: &mut Graph, out: &OutputVars, classes: &[usize]) -> Result<Var> {
    let y = LabelVector::with_background(classes, num_classes(g, out))?;
    cross_entropy_multihot(g, out.p_hard, &y)
}

/// L1 norm of the soft attention (optionally averaged over `T`).
pub fn sparsity_loss(g: &mut Graph, attn: Var, mean: bool) -> Var {
    let t_len = g.value(attn).len();
    let a = g.abs(attn);
    let s = g.sum(a);
    if mean {
        g.scale(s, 1.0 / t_len as f64)
    } else {
        s
    }
}

/// `sum_i |1 - a_i - bg_i|` where `bg_i` is the CAS background probability
/// of snippet `i`.
pub fn guide_loss(g: &mut Graph, attn: Var, cas: Var, mode: BackgroundMode, mean: bool) -> Result<Var> {
    let t_len = g.value(attn).len();
    if g.value(cas).shape().first() != Some(&t_len) {
        return Err(Error::invalid(format!(
            "guide loss: attention length {t_len} vs CAS shape {:?}",
            g.value(cas).shape()
        )));
    }
    let bg = g.background_probability(cas, mode)?;
    let both = g.add(attn, bg)?;
    let neg = g.scale(both, -1.0);
    let diff = g.add_scalar(neg, 1.0);
    let a = g.abs(diff);
    let s = g.sum(a);
    Ok(if mean { g.scale(s, 1.0 / t_len as f64) } else { s })
}

/// Weighted sum of all six terms. Terms with zero weight are left out of
/// the differentiable total entirely.
pub fn total_loss(
    g: &mut Graph,
    out: &OutputVars,
    classes: &[usize],
    weights: &LossWeights,
    opts: &LossOptions,
) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    let terms = [
        bcl(g, out, classes)?,
        sal(g, out, classes)?,
        ssal(g, out, classes)?,
        hal(g, out, classes)?,
        sparsity_loss(g, out.attn, opts.sparsity_mean),
        guide_loss(g, out.attn, out.cas, opts.background_mode.into(), opts.guide_mean)?,
    ];
    let w = weights.as_array();
    let mut total: Option<Var> = None;
    for (&term, &wi) in terms.iter().zip(&w) {
        if wi == 0.0 {
            continue;
        }
        let scaled = g.scale(term, wi);
        total = Some(match total {
            Some(acc) => g.add(acc, scaled)?,
            None => scaled,
        });
    }
    let total = total.unwrap_or_else(|| g.constant(Tensor::scalar(0.0)));
    let v = |x: Var| g.value(x).data()[0];
    let breakdown = LossBreakdown {
        bcl: v(terms[0]),
        sal: v(terms[1]),
        ssal: v(terms[2]),
        hal: v(terms[3]),
        sparsity: v(terms[4]),
        guide: v(terms[5]),
        total: v(total),
        weights: *weights,
    };
    Ok((total, breakdown))
}

/// Finite-difference check of the total loss gradient for one video.
/// Detached semi-soft and hard attentions are frozen at the unperturbed
/// parameters.
pub fn check_total_gradient(
    params: &HamNetParams,
    features: &Tensor,
    classes: &[usize],
    fwd: &ForwardOptions,
    weights: &LossWeights,
    opts: &LossOptions,
    check: GradCheckOptions,
) -> Result<GradCheckReport> {
    let base = crate::model::predict(params, features, fwd)?;
    let frozen = FrozenAttention::capture(&base.attn, fwd.gamma, fwd.drop_mode);
    let config = &params.config;
    grad_check(
        |g, vars| {
            let pv = ParamVars::from_slice(vars);
            let x = g.constant(features.clone());
            let out = forward_frozen(g, x, &pv, config, fwd, &frozen)?;
            Ok(total_loss(g, &out, classes, weights, opts)?.0)
        },
        params.tensors(),
        check,
    )
}
