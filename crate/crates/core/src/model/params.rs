use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamNetConfig {
    pub feature_dim: usize,
    /// Foreground classes `c`; the classifier emits `c + 1` logits.
    pub num_classes: usize,
    pub cls_hidden: usize,
    pub attn_hidden: usize,
    pub kernel_size: usize,
    pub slope: f64,
}

impl HamNetConfig {
    /// Hidden widths default to twice the feature dimension.
    pub fn new(feature_dim: usize, num_classes: usize) -> Self {
        Self {
            feature_dim,
            num_classes,
            cls_hidden: 2 * feature_dim,
            attn_hidden: 2 * feature_dim,
            kernel_size: 3,
            slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.num_classes == 0 {
            return Err(Error::invalid("feature_dim and num_classes must be positive"));
        }
        if self.cls_hidden == 0 || self.attn_hidden == 0 {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "kernel_size {} must be odd",
                self.kernel_size
            )));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::invalid(format!("leaky relu slope {} outside (0, 1)", self.slope)));
        }
        Ok(())
    }

    /// Expected shape of each parameter tensor, in [`PARAM_NAMES`] order.
    pub fn shapes(&self) -> [Vec<usize>; 10] {
        let (f, c1, h, ha, k) = (
            self.feature_dim,
            self.num_classes + 1,
            self.cls_hidden,
            self.attn_hidden,
            self.kernel_size,
        );
        [
            vec![h, f, k],
            vec![h],
            vec![h, h, k],
            vec![h],
            vec![c1, h],
            vec![c1],
            vec![ha, f, k],
            vec![ha],
            vec![1, ha, k],
            vec![1],
        ]
    }
}

pub const PARAM_NAMES: [&str; 10] = [
    "cls_conv1.weight",
    "cls_conv1.bias",
    "cls_conv2.weight",
    "cls_conv2.bias",
    "cls_linear.weight",
    "cls_linear.bias",
    "attn_conv1.weight",
    "attn_conv1.bias",
    "attn_conv2.weight",
    "attn_conv2.bias",
];

#[derive(Debug, Clone, PartialEq)]
pub struct HamNetParams {
    pub config: HamNetConfig,
    tensors: [Tensor; 10],
}

#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub cls_conv1_w: Var,
    pub cls_conv1_b: Var,
    pub cls_conv2_w: Var,
    pub cls_conv2_b: Var,
    pub cls_linear_w: Var,
    pub cls_linear_b: Var,
    pub attn_conv1_w: Var,
    pub attn_conv1_b: Var,
    pub attn_conv2_w: Var,
    pub attn_conv2_b: Var,
}

impl ParamVars {
    pub fn all(&self) -> [Var; 10] {
        [
            self.cls_conv1_w,
            self.cls_conv1_b,
            self.cls_conv2_w,
            self.cls_conv2_b,
            self.cls_linear_w,
            self.cls_linear_b,
            self.attn_conv1_w,
            self.attn_conv1_b,
            self.attn_conv2_w,
            self.attn_conv2_b,
        ]
    }

    pub fn from_slice(v: &[Var]) -> Self {
        Self {
            cls_conv1_w: v[0],
            cls_conv1_b: v[1],
            cls_conv2_w: v[2],
            cls_conv2_b: v[3],
            cls_linear_w: v[4],
            cls_linear_b: v[5],
            attn_conv1_w: v[6],
            attn_conv1_b: v[7],
            attn_conv2_w: v[8],
            attn_conv2_b: v[9],
        }
    }
}

impl HamNetParams {
    pub fn zeros(config: HamNetConfig) -> Self {
        let tensors = config.shapes().map(Tensor::zeros);
        Self { config, tensors }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(config: HamNetConfig, rng: &mut R) -> Self {
        let mut params = Self::zeros(config);
        for t in params.tensors.iter_mut() {
            let (fan_in, fan_out) = match t.shape() {
                [o, i, k] => (i * k, o * k),
                [o, i] => (*i, *o),
                _ => continue,
            };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            t.data_mut()
                .iter_mut()
                .for_each(|w| *w = rng.random_range(-bound..bound));
        }
        params
    }

    pub fn from_tensors(config: HamNetConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.shapes();
        if tensors.len() != shapes.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((t, s), name) in tensors.iter().zip(&shapes).zip(PARAM_NAMES) {
            if t.shape() != s.as_slice() {
                return Err(Error::invalid(format!(
                    "{name}: shape {:?} != expected {s:?}",
                    t.shape()
                )));
            }
        }
        let tensors: [Tensor; 10] = tensors.try_into().expect("length checked");
        Ok(Self { config, tensors })
    }

    pub fn tensors(&self) -> &[Tensor; 10] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor; 10] {
        &mut self.tensors
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Put every parameter on `g`, as gradient-receiving leaves when
    /// `trainable`, else as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ParamVars {
        let vars: Vec<Var> = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        ParamVars::from_slice(&vars)
    }
}
