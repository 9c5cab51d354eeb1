//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in execution order, so node indices
//! are already a topological order and the backward pass is a single reverse
//! sweep. Leaves created with [`Graph::param`] accumulate gradients across
//! calls to [`Graph::backward`] until [`Graph::zero_grad`].

use crate::autodiff::tensor::{dims1, dims2, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundMode {
    /// Background entry of the softmax over all `c + 1` logits.
    Softmax,
    /// `exp(s_bg) / sum_{j < c} exp(s_j)`; unbounded above.
    Literal,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Abs(Var),
    Log { x: Var, floor: f64 },
    LeakyRelu { x: Var, slope: f64 },
    Sigmoid(Var),
    Reshape(Var),
    Conv1d { input: Var, weight: Var, bias: Var },
    Linear { input: Var, weight: Var, bias: Var },
    Softmax(Var),
    TopkMean { x: Var, k: usize, selected: Vec<usize> },
    Modulate { cas: Var, attn: Var },
    BackgroundProb { cas: Var, mode: BackgroundMode },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        let n = value.len();
        self.nodes.push(Node {
            value,
            requires_grad: true,
            grad: Some(vec![0.0; n]),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: false,
            grad: None,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a parameter leaf; `None` for constants and
    /// intermediate nodes.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    fn push(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::invalid(format!(
                "{what}: shape mismatch {sa:?} vs {sb:?}"
            )));
        }
        Ok(())
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        Tensor::new(t.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, &[a, b], Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.map(x, |v| v * c);
        self.push(out, &[x], Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.map(x, |v| v + c);
        self.push(out, &[x], Op::AddScalar(x))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), &[x], Op::Sum(x))
    }

    /// Elementwise `|x|`; subgradient 0 at 0.
    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::abs);
        self.push(out, &[x], Op::Abs(x))
    }

    /// Elementwise `ln(max(x, floor))`. Entries at or below the floor get
    /// zero gradient.
    pub fn log(&mut self, x: Var, floor: f64) -> Var {
        let out = self.map(x, |v| v.max(floor).ln());
        self.push(out, &[x], Op::Log { x, floor })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.map(x, |v| if v > 0.0 { v } else { slope * v });
        self.push(out, &[x], Op::LeakyRelu { x, slope })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.map(x, sigmoid);
        self.push(out, &[x], Op::Sigmoid(x))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(out, &[x], Op::Reshape(x)))
    }

    /// Same-length temporal convolution over a `T x Cin` sequence with a
    /// `Cout x Cin x K` kernel, zero padded by `(K - 1) / 2` on both ends.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (t_len, c_in) = dims2(self.value(input), "conv1d input")?;
        let (c_out, w_in, k) = match self.value(weight).shape() {
            [o, i, k] => (*o, *i, *k),
            s => {
                return Err(Error::invalid(format!(
                    "conv1d weight: expected Cout x Cin x K, got {s:?}"
                )))
            }
        };
        if w_in != c_in {
            return Err(Error::invalid(format!(
                "conv1d: input channels {c_in} != weight Cin {w_in}"
            )));
        }
        if k % 2 == 0 {
            return Err(Error::invalid(format!("conv1d: kernel size K={k} must be odd")));
        }
        let b_len = dims1(self.value(bias), "conv1d bias")?;
        if b_len != c_out {
            return Err(Error::invalid(format!(
                "conv1d: bias length {b_len} != Cout {c_out}"
            )));
        }
        if t_len == 0 {
            return Err(Error::invalid("conv1d: input T must be >= 1"));
        }

        let x = self.value(input).data();
        let w = self.value(weight).data();
        let b = self.value(bias).data();
        let pad = (k - 1) / 2;
        let mut out = vec![0.0; t_len * c_out];
        for t in 0..t_len {
            let row = &mut out[t * c_out..(t + 1) * c_out];
            row.copy_from_slice(b);
            for tap in 0..k {
                let Some(src) = (t + tap).checked_sub(pad).filter(|&s| s < t_len) else {
                    continue;
                };
                let xs = &x[src * c_in..(src + 1) * c_in];
                for (o, acc) in row.iter_mut().enumerate() {
                    let wo = &w[o * c_in * k..(o + 1) * c_in * k];
                    let mut s = 0.0;
                    for (c, &xv) in xs.iter().enumerate() {
                        s += xv * wo[c * k + tap];
                    }
                    *acc += s;
                }
            }
        }
        let out = Tensor::matrix(t_len, c_out, out)?;
        Ok(self.push(out, &[input, weight, bias], Op::Conv1d { input, weight, bias }))
    }

    /// Per-timestep affine map `x W^T + b` for `x: T x Cin`, `W: Cout x Cin`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (t_len, c_in) = dims2(self.value(input), "linear input")?;
        let (c_out, w_in) = dims2(self.value(weight), "linear weight")?;
        if w_in != c_in {
            return Err(Error::invalid(format!(
                "linear: input width {c_in} != weight Cin {w_in}"
            )));
        }
        let b_len = dims1(self.value(bias), "linear bias")?;
        if b_len != c_out {
            return Err(Error::invalid(format!(
                "linear: bias length {b_len} != Cout {c_out}"
            )));
        }
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let b = self.value(bias).data();
        let mut out = Vec::with_capacity(t_len * c_out);
        for t in 0..t_len {
            let xs = &x[t * c_in..(t + 1) * c_in];
            for o in 0..c_out {
                let wo = &w[o * c_in..(o + 1) * c_in];
                out.push(b[o] + xs.iter().zip(wo).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        let out = Tensor::matrix(t_len, c_out, out)?;
        Ok(self.push(out, &[input, weight, bias], Op::Linear { input, weight, bias }))
    }

    /// Softmax of a length-C vector.
    pub fn softmax(&mut self, v: Var) -> Result<Var> {
        let n = dims1(self.value(v), "softmax")?;
        if n == 0 {
            return Err(Error::invalid("softmax: empty input"));
        }
        let out = Tensor::vector(softmax(self.value(v).data()));
        Ok(self.push(out, &[v], Op::Softmax(v)))
    }

    /// Per-column mean of the `k` largest entries of a `T x C` matrix.
    /// Ties are broken toward the lower time index.
    pub fn topk_mean(&mut self, x: Var, k: usize) -> Result<Var> {
        let (t_len, cols) = dims2(self.value(x), "topk_mean")?;
        if k == 0 || k > t_len {
            return Err(Error::invalid(format!(
                "topk_mean: k={k} outside 1..=T (T={t_len})"
            )));
        }
        let t = self.value(x);
        let mut selected = Vec::with_capacity(k * cols);
        let mut out = Vec::with_capacity(cols);
        let mut order: Vec<usize> = Vec::with_capacity(t_len);
        for j in 0..cols {
            order.clear();
            order.extend(0..t_len);
            let col = |i: usize| t.at(i, j);
            if k < t_len {
                order.select_nth_unstable_by(k - 1, |&a, &b| {
                    col(b).total_cmp(&col(a)).then(a.cmp(&b))
                });
            }
            let top = &mut order[..k];
            top.sort_unstable();
            out.push(top.iter().map(|&i| col(i)).sum::<f64>() / k as f64);
            selected.extend_from_slice(top);
        }
        Ok(self.push(Tensor::vector(out), &[x], Op::TopkMean { x, k, selected }))
    }

    /// Scale every row `i` of a `T x C` matrix by `attn[i]`.
    pub fn modulate(&mut self, cas: Var, attn: Var) -> Result<Var> {
        let (t_len, cols) = dims2(self.value(cas), "modulate cas")?;
        let a_len = dims1(self.value(attn), "modulate attn")?;
        if a_len != t_len {
            return Err(Error::invalid(format!(
                "modulate: attention length {a_len} != T {t_len}"
            )));
        }
        let s = self.value(cas).data();
        let a = self.value(attn).data();
        let data = s
            .chunks_exact(cols)
            .zip(a)
            .flat_map(|(row, &w)| row.iter().map(move |v| v * w))
            .collect();
        let out = Tensor::matrix(t_len, cols, data)?;
        Ok(self.push(out, &[cas, attn], Op::Modulate { cas, attn }))
    }

    /// Per-row background probability of a `T x (c+1)` logit matrix whose
    /// last column is the background class.
    pub fn background_probability(&mut self, cas: Var, mode: BackgroundMode) -> Result<Var> {
        let (t_len, cols) = dims2(self.value(cas), "background_probability")?;
        if cols < 2 {
            return Err(Error::invalid(
                "background_probability: need at least one foreground column",
            ));
        }
        let s = self.value(cas);
        let out: Vec<f64> = (0..t_len)
            .map(|i| background_probability(s.row(i), mode))
            .collect();
        Ok(self.push(Tensor::vector(out), &[cas], Op::BackgroundProb { cas, mode }))
    }

    /// Backpropagate from a one-element tensor, adding into every parameter
    /// leaf's gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let acc = self.nodes[idx].grad.as_mut().expect("param leaf has grad slot");
                acc.iter_mut().zip(&g).for_each(|(a, d)| *a += d);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !needs(v) {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                send(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                send(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * vb[i];
                    }
                });
                send(*b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * va[i];
                    }
                });
            }
            Op::Scale(x, c) => send(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g)),
            Op::AddScalar(x) | Op::Reshape(x) => {
                send(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g))
            }
            Op::Sum(x) => send(*x, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                send(*x, &mut |d| {
                    for i in 0..d.len() {
                        let s = if xv[i] > 0.0 {
                            1.0
                        } else if xv[i] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        d[i] += g[i] * s;
                    }
                });
            }
            Op::Log { x, floor } => {
                let xv = self.value(*x).data();
                send(*x, &mut |d| {
                    for i in 0..d.len() {
                        if xv[i] > *floor {
                            d[i] += g[i] / xv[i];
                        }
                    }
                });
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x).data();
                send(*x, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * if xv[i] > 0.0 { 1.0 } else { *slope };
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                send(*x, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let dot: f64 = y.iter().zip(g).map(|(y, g)| y * g).sum();
                send(*x, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += y[i] * (g[i] - dot);
                    }
                });
            }
            Op::TopkMean { x, k, selected } => {
                let cols = self.value(*x).shape()[1];
                let inv = 1.0 / *k as f64;
                send(*x, &mut |d| {
                    for (j, top) in selected.chunks_exact(*k).enumerate() {
                        for &i in top {
                            d[i * cols + j] += g[j] * inv;
                        }
                    }
                });
            }
            Op::Modulate { cas, attn } => {
                let s = self.value(*cas).data();
                let a = self.value(*attn).data();
                let cols = self.value(*cas).shape()[1];
                send(*cas, &mut |d| {
                    for (i, &w) in a.iter().enumerate() {
                        for j in 0..cols {
                            d[i * cols + j] += g[i * cols + j] * w;
                        }
                    }
                });
                send(*attn, &mut |d| {
                    for (i, di) in d.iter_mut().enumerate() {
                        let row = i * cols..(i + 1) * cols;
                        *di += s[row.clone()].iter().zip(&g[row]).map(|(s, g)| s * g).sum::<f64>();
                    }
                });
            }
            Op::BackgroundProb { cas, mode } => {
                let s = self.value(*cas);
                let cols = s.shape()[1];
                let bg = cols - 1;
                let p = node.value.data();
                send(*cas, &mut |d| {
                    for (i, (&gi, &pi)) in g.iter().zip(p).enumerate() {
                        let row = s.row(i);
                        let dr = &mut d[i * cols..(i + 1) * cols];
                        match mode {
                            BackgroundMode::Softmax => {
                                let y = softmax(row);
                                for j in 0..cols {
                                    let delta = if j == bg { 1.0 } else { 0.0 };
                                    dr[j] += gi * pi * (delta - y[j]);
                                }
                            }
                            BackgroundMode::Literal => {
                                let fg = softmax(&row[..bg]);
                                for j in 0..bg {
                                    dr[j] -= gi * pi * fg[j];
                                }
                                dr[bg] += gi * pi;
                            }
                        }
                    }
                });
            }
            Op::Conv1d { input, weight, bias } => {
                let (t_len, c_in) = {
                    let s = self.value(*input).shape();
                    (s[0], s[1])
                };
                let (c_out, k) = {
                    let s = self.value(*weight).shape();
                    (s[0], s[2])
                };
                let pad = (k - 1) / 2;
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                send(*input, &mut |d| {
                    for t in 0..t_len {
                        let gt = &g[t * c_out..(t + 1) * c_out];
                        for tap in 0..k {
                            let Some(src) = (t + tap).checked_sub(pad).filter(|&s| s < t_len) else {
                                continue;
                            };
                            let ds = &mut d[src * c_in..(src + 1) * c_in];
                            for (o, &go) in gt.iter().enumerate() {
                                let wo = &w[o * c_in * k..(o + 1) * c_in * k];
                                for (c, dv) in ds.iter_mut().enumerate() {
                                    *dv += go * wo[c * k + tap];
                                }
                            }
                        }
                    }
                });
                send(*weight, &mut |d| {
                    for t in 0..t_len {
                        let gt = &g[t * c_out..(t + 1) * c_out];
                        for tap in 0..k {
                            let Some(src) = (t + tap).checked_sub(pad).filter(|&s| s < t_len) else {
                                continue;
                            };
                            let xs = &x[src * c_in..(src + 1) * c_in];
                            for (o, &go) in gt.iter().enumerate() {
                                let dwo = &mut d[o * c_in * k..(o + 1) * c_in * k];
                                for (c, &xv) in xs.iter().enumerate() {
                                    dwo[c * k + tap] += go * xv;
                                }
                            }
                        }
                    }
                });
                send(*bias, &mut |d| {
                    for gt in g.chunks_exact(c_out) {
                        d.iter_mut().zip(gt).for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::Linear { input, weight, bias } => {
                let c_in = self.value(*input).shape()[1];
                let c_out = self.value(*weight).shape()[0];
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                send(*input, &mut |d| {
                    for (dt, gt) in d.chunks_exact_mut(c_in).zip(g.chunks_exact(c_out)) {
                        for (o, &go) in gt.iter().enumerate() {
                            let wo = &w[o * c_in..(o + 1) * c_in];
                            dt.iter_mut().zip(wo).for_each(|(d, w)| *d += go * w);
                        }
                    }
                });
                send(*weight, &mut |d| {
                    for (xt, gt) in x.chunks_exact(c_in).zip(g.chunks_exact(c_out)) {
                        for (o, &go) in gt.iter().enumerate() {
                            let dwo = &mut d[o * c_in..(o + 1) * c_in];
                            dwo.iter_mut().zip(xt).for_each(|(d, x)| *d += go * x);
                        }
                    }
                });
                send(*bias, &mut |d| {
                    for gt in g.chunks_exact(c_out) {
                        d.iter_mut().zip(gt).for_each(|(d, g)| *d += g);
                    }
                });
            }
        }
    }
}

/// Logistic function, branching on sign so neither side overflows.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Background probability of one CAS row (last entry is background).
pub fn background_probability(row: &[f64], mode: BackgroundMode) -> f64 {
    let bg = row.len() - 1;
    match mode {
        BackgroundMode::Softmax => softmax(row)[bg],
        BackgroundMode::Literal => {
            let fg = &row[..bg];
            let m = fg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + fg.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            (row[bg] - lse).exp()
        }
    }
}
