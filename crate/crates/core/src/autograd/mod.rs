//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every op as it is evaluated. Leaves carry a
//! `requires_grad` flag; an op node requires a gradient when any of its
//! inputs does, and ops that need no gradient skip saving backward buffers.
//! [`Tape::detach`] copies a value into a fresh constant leaf, which is how
//! stop-gradient is expressed.

pub(crate) mod kernels;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use kernels::{col2im, conv_out_len, gemm, im2col, linear_taps, ConvGeom};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

struct ConvSaved {
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: ConvGeom,
    /// Per-sample patch matrices, kept only when the weight needs a gradient.
    cols: Option<Vec<f64>>,
}

struct NormSaved {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Abs(Var),
    Square(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    Conv2d(Box<ConvSaved>),
    InstanceNorm(Box<NormSaved>),
    UpsampleNearest(Var, usize),
    ResizeBilinear(Var),
    Gram(Var),
    GlobalAvgPool(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every leaf that required one.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, with an all-zero array when nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: operand shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copies the value of `var` into a new leaf that blocks gradient flow.
    pub fn detach(&mut self, var: Var) -> Var {
        let value = self.value(var).clone();
        self.constant(value)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires_grad(*v))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, what: &str) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(va, vb, what)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, |v| v * factor, Op::Scale(x, factor))
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Var {
        self.unary(x, |v| v + offset, Op::AddScalar(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Tensor::scalar(v.data().iter().sum::<f64>() / v.numel() as f64);
        let rg = self.rg(&[x]);
        self.push(value, Op::Mean(x), rg)
    }

    /// 2-D cross-correlation of `(N, C, H, W)` input with `(O, C, kh, kw)`
    /// weights and optional `(O)` bias, zero padding on every side.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (o, wc, kh, kw) = self.value(w).dims4()?;
        if wc != c {
            return Err(Error::Shape(format!(
                "conv2d: input has {c} channels but weight expects {wc}"
            )));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [o] {
                return Err(Error::Shape(format!(
                    "conv2d: bias shape {:?} does not match {o} output channels",
                    self.value(b).shape()
                )));
            }
        }
        let (ho, wo) = match (conv_out_len(h, kh, stride, pad), conv_out_len(wd, kw, stride, pad)) {
            (Some(ho), Some(wo)) => (ho, wo),
            _ => {
                return Err(Error::Shape(format!(
                    "conv2d: kernel {kh}x{kw} (stride {stride}, pad {pad}) does not fit a {h}x{wd} input"
                )))
            }
        };
        let geom = ConvGeom { c, h, w: wd, kh, kw, stride, pad, ho, wo };
        let (k, p) = (geom.rows(), geom.cols());
        let keep_cols = self.requires_grad(w);
        let mut saved_cols = if keep_cols { vec![0.0; n * k * p] } else { Vec::new() };
        let mut scratch = if keep_cols { Vec::new() } else { vec![0.0; k * p] };
        let mut out = vec![0.0; n * o * p];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for s in 0..n {
                let cols: &mut [f64] = if keep_cols {
                    &mut saved_cols[s * k * p..(s + 1) * k * p]
                } else {
                    &mut scratch
                };
                im2col(&xv[s * c * h * wd..(s + 1) * c * h * wd], &geom, cols);
                gemm(o, k, p, wv, (k as isize, 1), cols, (p as isize, 1), 0.0, &mut out[s * o * p..(s + 1) * o * p]);
            }
            if let Some(b) = b {
                let bv = self.value(b).data();
                for s in 0..n {
                    for (oc, &bias) in bv.iter().enumerate() {
                        let start = (s * o + oc) * p;
                        out[start..start + p].iter_mut().for_each(|v| *v += bias);
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, o, ho, wo], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        let saved = ConvSaved {
            x,
            w,
            b,
            geom,
            cols: keep_cols.then_some(saved_cols),
        };
        Ok(self.push(value, Op::Conv2d(Box::new(saved)), rg))
    }

    /// Per-sample, per-channel normalization over the spatial extent followed
    /// by a learned per-channel affine map.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(Error::Shape(format!(
                    "instance_norm: {name} shape {:?} does not match {c} channels",
                    self.value(v).shape()
                )));
            }
        }
        let m = h * w;
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![0.0; n * c * m];
        let mut inv_std = vec![0.0; n * c];
        let mut out = vec![0.0; n * c * m];
        for plane in 0..n * c {
            let ch = plane % c;
            let src = &xv[plane * m..(plane + 1) * m];
            let mean = src.iter().sum::<f64>() / m as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[plane] = istd;
            for i in 0..m {
                let xh = (src[i] - mean) * istd;
                xhat[plane * m + i] = xh;
                out[plane * m + i] = gv[ch] * xh + bv[ch];
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        let rg = self.rg(&[x, gamma, beta]);
        let saved = NormSaved { x, gamma, beta, xhat, inv_std };
        Ok(self.push(value, Op::InstanceNorm(Box::new(saved)), rg))
    }

    /// Nearest-neighbour spatial upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (ho, wo) = (h * factor, w * factor);
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * c * ho * wo];
        for plane in 0..n * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    out[(plane * ho + oy) * wo + ox] = xv[(plane * h + oy / factor) * w + ox / factor];
                }
            }
        }
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::UpsampleNearest(x, factor), rg))
    }

    /// Bilinear resize with half-pixel centers to `(out_h, out_w)`.
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "resize_bilinear: cannot resize {h}x{w} to {out_h}x{out_w}"
            )));
        }
        let ty = linear_taps(h, out_h);
        let tx = linear_taps(w, out_w);
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * c * out_h * out_w];
        for plane in 0..n * c {
            let src = &xv[plane * h * w..(plane + 1) * h * w];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                    let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                    out[(plane * out_h + oy) * out_w + ox] = top * (1.0 - fy) + bottom * fy;
                }
            }
        }
        let value = Tensor::new(vec![n, c, out_h, out_w], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::ResizeBilinear(x), rg))
    }

    /// Per-sample Gram matrix `F Fᵀ / (C H W)` of `(N, C, H, W)` features,
    /// returned as `(N, C, C)`.
    pub fn gram(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let p = h * w;
        let norm = 1.0 / (c * p) as f64;
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * c * c];
        for s in 0..n {
            let f = &xv[s * c * p..(s + 1) * c * p];
            gemm(c, p, c, f, (p as isize, 1), f, (1, p as isize), 0.0, &mut out[s * c * c..(s + 1) * c * c]);
        }
        out.iter_mut().for_each(|v| *v *= norm);
        let value = Tensor::new(vec![n, c, c], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Gram(x), rg))
    }

    /// Spatial mean of `(N, C, H, W)` features, returned as `(N, C)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let m = (h * w) as f64;
        let xv = self.value(x).data();
        let out = (0..n * c)
            .map(|plane| xv[plane * h * w..(plane + 1) * h * w].iter().sum::<f64>() / m)
            .collect();
        let value = Tensor::new(vec![n, c], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::GlobalAvgPool(x), rg))
    }

    /// Reverse sweep from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Grads> {
        if self.value(root).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if !self.requires_grad(root) {
            return Ok(Grads { grads });
        }
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads)?;
        }
        Ok(Grads { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, contribution: Tensor) {
        if !self.requires_grad(var) {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot => *slot = Some(contribution),
        }
    }

    fn elementwise(&self, grads: &mut [Option<Tensor>], x: Var, g: &Tensor, f: impl Fn(f64, f64, f64) -> f64, out: &Tensor) {
        if !self.requires_grad(x) {
            return;
        }
        let xv = self.value(x);
        let data = g
            .data()
            .iter()
            .zip(xv.data())
            .zip(out.data())
            .map(|((&gi, &xi), &yi)| f(gi, xi, yi))
            .collect();
        let contribution = Tensor::new(xv.shape().to_vec(), data).expect("shape preserved");
        self.accumulate(grads, x, contribution);
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.requires_grad(a) {
                    let vb = self.value(b);
                    let data = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, a, Tensor::new(g.shape().to_vec(), data)?);
                }
                if self.requires_grad(b) {
                    let va = self.value(a);
                    let data = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, b, Tensor::new(g.shape().to_vec(), data)?);
                }
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, g.map(|v| v * f)),
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::Abs(x) => self.elementwise(grads, *x, g, |gi, xi, _| if xi > 0.0 { gi } else if xi < 0.0 { -gi } else { 0.0 }, out),
            Op::Square(x) => self.elementwise(grads, *x, g, |gi, xi, _| 2.0 * xi * gi, out),
            Op::Log(x) => self.elementwise(grads, *x, g, |gi, xi, _| gi / xi, out),
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                self.elementwise(grads, *x, g, |gi, xi, _| if xi >= lo && xi <= hi { gi } else { 0.0 }, out)
            }
            Op::Relu(x) => self.elementwise(grads, *x, g, |gi, xi, _| if xi > 0.0 { gi } else { 0.0 }, out),
            Op::LeakyRelu(x, slope) => {
                let slope = *slope;
                self.elementwise(grads, *x, g, |gi, xi, _| if xi > 0.0 { gi } else { slope * gi }, out)
            }
            Op::Tanh(x) => self.elementwise(grads, *x, g, |gi, _, yi| gi * (1.0 - yi * yi), out),
            Op::Sigmoid(x) => self.elementwise(grads, *x, g, |gi, _, yi| gi * yi * (1.0 - yi), out),
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::full(&shape, g.item()));
            }
            Op::Mean(x) => {
                let v = self.value(*x);
                let fill = g.item() / v.numel() as f64;
                self.accumulate(grads, *x, Tensor::full(v.shape(), fill));
            }
            Op::Conv2d(saved) => self.backprop_conv(saved, g, grads)?,
            Op::InstanceNorm(saved) => self.backprop_norm(saved, g, grads)?,
            Op::UpsampleNearest(x, factor) => {
                if self.requires_grad(*x) {
                    let (n, c, h, w) = self.value(*x).dims4()?;
                    let (ho, wo) = (h * factor, w * factor);
                    let mut dx = vec![0.0; n * c * h * w];
                    for plane in 0..n * c {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                dx[(plane * h + oy / factor) * w + ox / factor] += g.data()[(plane * ho + oy) * wo + ox];
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![n, c, h, w], dx)?);
                }
            }
            Op::ResizeBilinear(x) => {
                if self.requires_grad(*x) {
                    let (n, c, h, w) = self.value(*x).dims4()?;
                    let (_, _, oh, ow) = out.dims4()?;
                    let ty = linear_taps(h, oh);
                    let tx = linear_taps(w, ow);
                    let mut dx = vec![0.0; n * c * h * w];
                    for plane in 0..n * c {
                        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
                        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                                let gv = g.data()[(plane * oh + oy) * ow + ox];
                                dst[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                                dst[y0 * w + x1] += gv * (1.0 - fy) * fx;
                                dst[y1 * w + x0] += gv * fy * (1.0 - fx);
                                dst[y1 * w + x1] += gv * fy * fx;
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![n, c, h, w], dx)?);
                }
            }
            Op::Gram(x) => {
                if self.requires_grad(*x) {
                    let (n, c, h, w) = self.value(*x).dims4()?;
                    let p = h * w;
                    let norm = 1.0 / (c * p) as f64;
                    let xv = self.value(*x).data();
                    let mut dx = vec![0.0; n * c * p];
                    let mut sym = vec![0.0; c * c];
                    for s in 0..n {
                        let gs = &g.data()[s * c * c..(s + 1) * c * c];
                        for a in 0..c {
                            for b in 0..c {
                                sym[a * c + b] = (gs[a * c + b] + gs[b * c + a]) * norm;
                            }
                        }
                        let f = &xv[s * c * p..(s + 1) * c * p];
                        gemm(c, c, p, &sym, (c as isize, 1), f, (p as isize, 1), 0.0, &mut dx[s * c * p..(s + 1) * c * p]);
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![n, c, h, w], dx)?);
                }
            }
            Op::GlobalAvgPool(x) => {
                if self.requires_grad(*x) {
                    let (n, c, h, w) = self.value(*x).dims4()?;
                    let m = h * w;
                    let mut dx = vec![0.0; n * c * m];
                    for plane in 0..n * c {
                        let gv = g.data()[plane] / m as f64;
                        dx[plane * m..(plane + 1) * m].fill(gv);
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![n, c, h, w], dx)?);
                }
            }
        }
        Ok(())
    }

    fn backprop_conv(&self, saved: &ConvSaved, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let geom = saved.geom;
        let (n, o, _, _) = g.dims4()?;
        let (k, p) = (geom.rows(), geom.cols());
        let gd = g.data();
        if let Some(b) = saved.b {
            if self.requires_grad(b) {
                let mut db = vec![0.0; o];
                for s in 0..n {
                    for (oc, slot) in db.iter_mut().enumerate() {
                        let start = (s * o + oc) * p;
                        *slot += gd[start..start + p].iter().sum::<f64>();
                    }
                }
                self.accumulate(grads, b, Tensor::new(vec![o], db)?);
            }
        }
        if self.requires_grad(saved.w) {
            let cols = saved
                .cols
                .as_ref()
                .ok_or_else(|| Error::Numerical("conv2d patch buffer missing".into()))?;
            let mut dw = vec![0.0; o * k];
            for s in 0..n {
                // dW += dY_s (o x p) * cols_sᵀ (p x k)
                gemm(o, p, k, &gd[s * o * p..(s + 1) * o * p], (p as isize, 1), &cols[s * k * p..(s + 1) * k * p], (1, p as isize), 1.0, &mut dw);
            }
            let shape = self.value(saved.w).shape().to_vec();
            self.accumulate(grads, saved.w, Tensor::new(shape, dw)?);
        }
        if self.requires_grad(saved.x) {
            let wv = self.value(saved.w).data();
            let sample = geom.c * geom.h * geom.w;
            let mut dx = vec![0.0; n * sample];
            let mut dcols = vec![0.0; k * p];
            for s in 0..n {
                // dcols = Wᵀ (k x o) * dY_s (o x p)
                gemm(k, o, p, wv, (1, k as isize), &gd[s * o * p..(s + 1) * o * p], (p as isize, 1), 0.0, &mut dcols);
                col2im(&dcols, &geom, &mut dx[s * sample..(s + 1) * sample]);
            }
            let shape = self.value(saved.x).shape().to_vec();
            self.accumulate(grads, saved.x, Tensor::new(shape, dx)?);
        }
        Ok(())
    }

    fn backprop_norm(&self, saved: &NormSaved, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let (n, c, h, w) = g.dims4()?;
        let m = h * w;
        let gd = g.data();
        let gamma = self.value(saved.gamma).data();
        if self.rg(&[saved.gamma, saved.beta]) {
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for plane in 0..n * c {
                let ch = plane % c;
                let gs = &gd[plane * m..(plane + 1) * m];
                let xs = &saved.xhat[plane * m..(plane + 1) * m];
                dgamma[ch] += gs.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                dbeta[ch] += gs.iter().sum::<f64>();
            }
            self.accumulate(grads, saved.gamma, Tensor::new(vec![c], dgamma)?);
            self.accumulate(grads, saved.beta, Tensor::new(vec![c], dbeta)?);
        }
        if self.requires_grad(saved.x) {
            let mut dx = vec![0.0; n * c * m];
            for plane in 0..n * c {
                let ch = plane % c;
                let gs = &gd[plane * m..(plane + 1) * m];
                let xs = &saved.xhat[plane * m..(plane + 1) * m];
                let mean_g = gs.iter().sum::<f64>() * gamma[ch] / m as f64;
                let mean_gx = gs.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>() * gamma[ch] / m as f64;
                let istd = saved.inv_std[plane];
                for i in 0..m {
                    dx[plane * m + i] = istd * (gs[i] * gamma[ch] - mean_g - xs[i] * mean_gx);
                }
            }
            self.accumulate(grads, saved.x, Tensor::new(vec![n, c, h, w], dx)?);
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
