//! Reverse-mode tape over dense f64 tensors.
//!
//! Ops evaluate eagerly as they are recorded, so the node list is already in
//! topological order; `backward` walks it in exact reverse order. A graph is
//! single-threaded by construction — distinct graphs may run on distinct
//! threads.

use crate::error::{Error, Result};
use crate::tensor::{kernels, Tensor};

/// Handle to a value held by a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: ValueId,
        w: ValueId,
        b: ValueId,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: ValueId,
        w: ValueId,
        b: ValueId,
        stride: usize,
        pad: usize,
    },
    Linear {
        x: ValueId,
        w: ValueId,
        b: ValueId,
    },
    Relu(ValueId),
    Sigmoid(ValueId),
    SoftmaxChannels(ValueId),
    GlobalAvgPool(ValueId),
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Div(ValueId, ValueId),
    L2Normalize(ValueId),
    Sum(ValueId),
    Mean(ValueId),
    /// x * c
    Scale(ValueId, f64),
    /// x + c (the constant is not needed for backward)
    Offset(ValueId),
    /// ln(max(x, floor)); gradient 0 below the floor
    LogClamped(ValueId, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::Linear { .. } => "linear",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::SoftmaxChannels(_) => "softmax_channels",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::L2Normalize(_) => "l2_normalize",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::LogClamped(..) => "log_clamped",
        }
    }
}

struct Val {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
}

/// Eagerly-evaluated compute tape.
#[derive(Default)]
pub struct Graph {
    vals: Vec<Val>,
    grads: Vec<Vec<f64>>,
    backward_run: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Number of recorded values (leaves and op outputs).
    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    /// Records a leaf value. Leaves receive gradients like any other value;
    /// whether they are parameters or fixed inputs is the caller's concern.
    pub fn input(&mut self, t: &Tensor) -> ValueId {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf)
    }

    /// Leaf from raw parts.
    pub fn input_parts(&mut self, shape: Vec<usize>, data: Vec<f64>) -> ValueId {
        self.push(shape, data, Op::Leaf)
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        &self.vals[id.0].shape
    }

    pub fn data(&self, id: ValueId) -> &[f64] {
        &self.vals[id.0].data
    }

    /// Copies a value out of the graph.
    pub fn tensor(&self, id: ValueId) -> Tensor {
        Tensor::new(self.vals[id.0].shape.clone(), self.vals[id.0].data.clone())
            .expect("graph values are shape-consistent")
    }

    /// Gradient of the last `backward` target with respect to `id`.
    ///
    /// Panics if `backward` has not been run on this graph.
    pub fn grad(&self, id: ValueId) -> &[f64] {
        assert!(self.backward_run, "Graph::grad called before backward");
        &self.grads[id.0]
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> ValueId {
        self.vals.push(Val { shape, data, op });
        ValueId(self.vals.len() - 1)
    }

    fn push_checked(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<ValueId> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{} (node {})",
                op.name(),
                self.vals.len()
            )));
        }
        Ok(self.push(shape, data, op))
    }

    fn add_grad(&mut self, id: ValueId, delta: &[f64]) {
        for (g, d) in self.grads[id.0].iter_mut().zip(delta) {
            *g += d;
        }
    }

    fn same_shape(&self, op: &str, a: ValueId, b: ValueId) -> Result<()> {
        if self.vals[a.0].shape != self.vals[b.0].shape {
            return Err(Error::shape(
                op,
                format!(
                    "{:?} vs {:?} (nodes {}, {})",
                    self.vals[a.0].shape, self.vals[b.0].shape, a.0, b.0
                ),
            ));
        }
        Ok(())
    }

    // ---- structured ops ----

    /// 2-D convolution: x (Cin,H,W), w (Cout,Cin,kh,kw), b (Cout).
    pub fn conv2d(
        &mut self,
        x: ValueId,
        w: ValueId,
        b: ValueId,
        stride: usize,
        pad: usize,
    ) -> Result<ValueId> {
        let xs = self.vals[x.0].shape.clone();
        let ws = self.vals[w.0].shape.clone();
        let bs = self.vals[b.0].shape.clone();
        if xs.len() != 3 || ws.len() != 4 || bs.len() != 1 {
            return Err(Error::shape(
                "conv2d",
                format!("ranks x{:?} w{:?} b{:?}", xs, ws, bs),
            ));
        }
        let (cin, h, wd) = (xs[0], xs[1], xs[2]);
        let (cout, kcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if kcin != cin || bs[0] != cout {
            return Err(Error::shape(
                "conv2d",
                format!("x has {} channels, w expects {}, bias {}", cin, kcin, bs[0]),
            ));
        }
        let oh = kernels::conv_out_size(h, kh, stride, pad);
        let ow = kernels::conv_out_size(wd, kw, stride, pad);
        let (oh, ow) = match (oh, ow) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernel {}x{} too large for input {}x{}", kh, kw, h, wd),
                ))
            }
        };
        let mut out = vec![0.0; cout * oh * ow];
        kernels::conv2d(
            &self.vals[x.0].data,
            cin,
            h,
            wd,
            &self.vals[w.0].data,
            cout,
            kh,
            kw,
            &self.vals[b.0].data,
            stride,
            pad,
            &mut out,
            oh,
            ow,
        );
        self.push_checked(vec![cout, oh, ow], out, Op::Conv2d { x, w, b, stride, pad })
    }

    /// Transposed 2-D convolution: x (Cin,H,W), w (Cin,Cout,kh,kw), b (Cout).
    pub fn conv_transpose2d(
        &mut self,
        x: ValueId,
        w: ValueId,
        b: ValueId,
        stride: usize,
        pad: usize,
    ) -> Result<ValueId> {
        let xs = self.vals[x.0].shape.clone();
        let ws = self.vals[w.0].shape.clone();
        let bs = self.vals[b.0].shape.clone();
        if xs.len() != 3 || ws.len() != 4 || bs.len() != 1 {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("ranks x{:?} w{:?} b{:?}", xs, ws, bs),
            ));
        }
        let (cin, h, wd) = (xs[0], xs[1], xs[2]);
        let (kcin, cout, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if kcin != cin || bs[0] != cout {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("x has {} channels, w expects {}, bias {}", cin, kcin, bs[0]),
            ));
        }
        let oh = kernels::conv_transpose_out_size(h, kh, stride, pad);
        let ow = kernels::conv_transpose_out_size(wd, kw, stride, pad);
        let (oh, ow) = match (oh, ow) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => {
                return Err(Error::shape(
                    "conv_transpose2d",
                    format!("padding {} too large for output of input {}x{}", pad, h, wd),
                ))
            }
        };
        let mut out = vec![0.0; cout * oh * ow];
        kernels::conv_transpose2d(
            &self.vals[x.0].data,
            cin,
            h,
            wd,
            &self.vals[w.0].data,
            cout,
            kh,
            kw,
            &self.vals[b.0].data,
            stride,
            pad,
            &mut out,
            oh,
            ow,
        );
        self.push_checked(
            vec![cout, oh, ow],
            out,
            Op::ConvTranspose2d { x, w, b, stride, pad },
        )
    }

    /// Fully-connected layer: x (In), w (Out,In), b (Out).
    pub fn linear(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
        let xs = self.vals[x.0].shape.clone();
        let ws = self.vals[w.0].shape.clone();
        let bs = self.vals[b.0].shape.clone();
        if xs.len() != 1 || ws.len() != 2 || bs.len() != 1 || ws[1] != xs[0] || ws[0] != bs[0] {
            return Err(Error::shape(
                "linear",
                format!("x{:?} w{:?} b{:?}", xs, ws, bs),
            ));
        }
        let (out_dim, in_dim) = (ws[0], ws[1]);
        let mut out = vec![0.0; out_dim];
        kernels::linear(
            &self.vals[x.0].data,
            &self.vals[w.0].data,
            &self.vals[b.0].data,
            out_dim,
            in_dim,
            &mut out,
        );
        self.push_checked(vec![out_dim], out, Op::Linear { x, w, b })
    }

    pub fn relu(&mut self, x: ValueId) -> Result<ValueId> {
        let data: Vec<f64> = self.vals[x.0].data.iter().map(|v| v.max(0.0)).collect();
        let shape = self.vals[x.0].shape.clone();
        self.push_checked(shape, data, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: ValueId) -> Result<ValueId> {
        let data: Vec<f64> = self.vals[x.0]
            .data
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let shape = self.vals[x.0].shape.clone();
        self.push_checked(shape, data, Op::Sigmoid(x))
    }

    /// Softmax over the channel axis of a (C,H,W) value.
    pub fn softmax_channels(&mut self, x: ValueId) -> Result<ValueId> {
        let shape = self.vals[x.0].shape.clone();
        if shape.len() != 3 {
            return Err(Error::shape(
                "softmax_channels",
                format!("expected rank 3, got {:?}", shape),
            ));
        }
        let (c, hw) = (shape[0], shape[1] * shape[2]);
        let mut out = vec![0.0; c * hw];
        kernels::softmax_channels(&self.vals[x.0].data, c, hw, &mut out);
        self.push_checked(shape, out, Op::SoftmaxChannels(x))
    }

    /// (C,H,W) -> (C), mean over the spatial axes.
    pub fn global_avg_pool(&mut self, x: ValueId) -> Result<ValueId> {
        let shape = self.vals[x.0].shape.clone();
        if shape.len() != 3 {
            return Err(Error::shape(
                "global_avg_pool",
                format!("expected rank 3, got {:?}", shape),
            ));
        }
        let (c, hw) = (shape[0], shape[1] * shape[2]);
        let data = &self.vals[x.0].data;
        let out: Vec<f64> = (0..c)
            .map(|ch| data[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        self.push_checked(vec![c], out, Op::GlobalAvgPool(x))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.same_shape("add", a, b)?;
        let data: Vec<f64> = self.vals[a.0]
            .data
            .iter()
            .zip(&self.vals[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.vals[a.0].shape.clone();
        self.push_checked(shape, data, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.same_shape("sub", a, b)?;
        let data: Vec<f64> = self.vals[a.0]
            .data
            .iter()
            .zip(&self.vals[b.0].data)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.vals[a.0].shape.clone();
        self.push_checked(shape, data, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.same_shape("mul", a, b)?;
        let data: Vec<f64> = self.vals[a.0]
            .data
            .iter()
            .zip(&self.vals[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.vals[a.0].shape.clone();
        self.push_checked(shape, data, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.same_shape("div", a, b)?;
        let data: Vec<f64> = self.vals[a.0]
            .data
            .iter()
            .zip(&self.vals[b.0].data)
            .map(|(x, y)| x / y)
            .collect();
        let shape = self.vals[a.0].shape.clone();
        self.push_checked(shape, data, Op::Div(a, b))
    }

    /// x / ||x||_2 over the flattened value. Errors if the norm is below 1e-12.
    pub fn l2_normalize(&mut self, x: ValueId) -> Result<ValueId> {
        let norm = self.vals[x.0].data.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::DegenerateEmbedding(norm));
        }
        let data: Vec<f64> = self.vals[x.0].data.iter().map(|v| v / norm).collect();
        let shape = self.vals[x.0].shape.clone();
        self.push_checked(shape, data, Op::L2Normalize(x))
    }

    pub fn sum(&mut self, x: ValueId) -> Result<ValueId> {
        let s = self.vals[x.0].data.iter().sum::<f64>();
        self.push_checked(vec![1], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: ValueId) -> Result<ValueId> {
        let n = self.vals[x.0].data.len();
        let s = self.vals[x.0].data.iter().sum::<f64>() / n as f64;
        self.push_checked(vec![1], vec![s], Op::Mean(x))
    }

    pub fn scale(&mut self, x: ValueId, c: f64) -> Result<ValueId> {
        let data: Vec<f64> = self.vals[x.0].data.iter().map(|v| v * c).collect();
        let shape = self.vals[x.0].shape.clone();
        self.push_checked(shape, data, Op::Scale(x, c))
    }

    pub fn offset(&mut self, x: ValueId, c: f64) -> Result<ValueId> {
        let data: Vec<f64> = self.vals[x.0].data.iter().map(|v| v + c).collect();
        let shape = self.vals[x.0].shape.clone();
        self.push_checked(shape, data, Op::Offset(x))
    }

    /// ln(max(x, floor)). Used by the cross-entropy loss; the floor keeps the
    /// log finite at p = 0 and zeros the gradient there.
    pub fn log_clamped(&mut self, x: ValueId, floor: f64) -> Result<ValueId> {
        let data: Vec<f64> = self.vals[x.0].data.iter().map(|v| v.max(floor).ln()).collect();
        let shape = self.vals[x.0].shape.clone();
        self.push_checked(shape, data, Op::LogClamped(x, floor))
    }

    // ---- backward ----

    /// Fills gradients of every value with respect to the scalar `loss`,
    /// visiting nodes in exact reverse recording order. Values not on a path
    /// to the loss keep zero gradients.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if self.vals[loss.0].data.len() != 1 {
            return Err(Error::Gradient(format!(
                "backward target must be scalar, got shape {:?}",
                self.vals[loss.0].shape
            )));
        }
        self.grads = self.vals.iter().map(|v| vec![0.0; v.data.len()]).collect();
        self.grads[loss.0][0] = 1.0;

        for i in (0..=loss.0).rev() {
            // Take the output gradient out to appease the borrow checker;
            // a node never feeds itself.
            let dy = std::mem::take(&mut self.grads[i]);
            if dy.iter().all(|g| *g == 0.0) {
                self.grads[i] = dy;
                continue;
            }
            let op = self.vals[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Conv2d { x, w, b, stride, pad } => {
                    let xs = &self.vals[x.0].shape;
                    let ws = &self.vals[w.0].shape;
                    let os = &self.vals[i].shape;
                    let (cin, h, wd) = (xs[0], xs[1], xs[2]);
                    let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
                    let (oh, ow) = (os[1], os[2]);
                    // Local buffers keep accumulation correct even if inputs alias.
                    let mut dx = vec![0.0; self.vals[x.0].data.len()];
                    let mut dw = vec![0.0; self.vals[w.0].data.len()];
                    let mut db = vec![0.0; self.vals[b.0].data.len()];
                    kernels::conv2d_backward(
                        &self.vals[x.0].data,
                        cin,
                        h,
                        wd,
                        &self.vals[w.0].data,
                        cout,
                        kh,
                        kw,
                        stride,
                        pad,
                        &dy,
                        oh,
                        ow,
                        &mut dx,
                        &mut dw,
                        &mut db,
                    );
                    self.add_grad(x, &dx);
                    self.add_grad(w, &dw);
                    self.add_grad(b, &db);
                }
                Op::ConvTranspose2d { x, w, b, stride, pad } => {
                    let xs = &self.vals[x.0].shape;
                    let ws = &self.vals[w.0].shape;
                    let os = &self.vals[i].shape;
                    let (cin, h, wd) = (xs[0], xs[1], xs[2]);
                    let (cout, kh, kw) = (ws[1], ws[2], ws[3]);
                    let (oh, ow) = (os[1], os[2]);
                    let mut dx = vec![0.0; self.vals[x.0].data.len()];
                    let mut dw = vec![0.0; self.vals[w.0].data.len()];
                    let mut db = vec![0.0; self.vals[b.0].data.len()];
                    kernels::conv_transpose2d_backward(
                        &self.vals[x.0].data,
                        cin,
                        h,
                        wd,
                        &self.vals[w.0].data,
                        cout,
                        kh,
                        kw,
                        stride,
                        pad,
                        &dy,
                        oh,
                        ow,
                        &mut dx,
                        &mut dw,
                        &mut db,
                    );
                    self.add_grad(x, &dx);
                    self.add_grad(w, &dw);
                    self.add_grad(b, &db);
                }
                Op::Linear { x, w, b } => {
                    let ws = &self.vals[w.0].shape;
                    let (out_dim, in_dim) = (ws[0], ws[1]);
                    let mut dx = vec![0.0; self.vals[x.0].data.len()];
                    let mut dw = vec![0.0; self.vals[w.0].data.len()];
                    let mut db = vec![0.0; self.vals[b.0].data.len()];
                    kernels::linear_backward(
                        &self.vals[x.0].data,
                        &self.vals[w.0].data,
                        out_dim,
                        in_dim,
                        &dy,
                        &mut dx,
                        &mut dw,
                        &mut db,
                    );
                    self.add_grad(x, &dx);
                    self.add_grad(w, &dw);
                    self.add_grad(b, &db);
                }
                Op::Relu(x) => {
                    // Subgradient at exactly 0 is defined as 0.
                    for (j, g) in dy.iter().enumerate() {
                        if self.vals[x.0].data[j] > 0.0 {
                            self.grads[x.0][j] += g;
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    for (j, g) in dy.iter().enumerate() {
                        let y = self.vals[i].data[j];
                        self.grads[x.0][j] += g * y * (1.0 - y);
                    }
                }
                Op::SoftmaxChannels(x) => {
                    let os = &self.vals[i].shape;
                    let (c, hw) = (os[0], os[1] * os[2]);
                    let mut dx = vec![0.0; self.vals[x.0].data.len()];
                    kernels::softmax_channels_backward(&self.vals[i].data, c, hw, &dy, &mut dx);
                    self.add_grad(x, &dx);
                }
                Op::GlobalAvgPool(x) => {
                    let xs = &self.vals[x.0].shape;
                    let (c, hw) = (xs[0], xs[1] * xs[2]);
                    for ch in 0..c {
                        let g = dy[ch] / hw as f64;
                        for v in self.grads[x.0][ch * hw..(ch + 1) * hw].iter_mut() {
                            *v += g;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (j, g) in dy.iter().enumerate() {
                        self.grads[a.0][j] += g;
                    }
                    for (j, g) in dy.iter().enumerate() {
                        self.grads[b.0][j] += g;
                    }
                }
                Op::Sub(a, b) => {
                    for (j, g) in dy.iter().enumerate() {
                        self.grads[a.0][j] += g;
                    }
                    for (j, g) in dy.iter().enumerate() {
                        self.grads[b.0][j] -= g;
                    }
                }
                Op::Mul(a, b) => {
                    for (j, g) in dy.iter().enumerate() {
                        self.grads[a.0][j] += g * self.vals[b.0].data[j];
                    }
                    for (j, g) in dy.iter().enumerate() {
                        self.grads[b.0][j] += g * self.vals[a.0].data[j];
                    }
                }
                Op::Div(a, b) => {
                    for (j, g) in dy.iter().enumerate() {
                        let bv = self.vals[b.0].data[j];
                        self.grads[a.0][j] += g / bv;
                        self.grads[b.0][j] -= g * self.vals[a.0].data[j] / (bv * bv);
                    }
                }
                Op::L2Normalize(x) => {
                    let y = &self.vals[i].data;
                    let norm = self.vals[x.0].data.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = dy.iter().zip(y).map(|(g, v)| g * v).sum();
                    for (j, g) in dy.iter().enumerate() {
                        self.grads[x.0][j] += (g - y[j] * dot) / norm;
                    }
                }
                Op::Sum(x) => {
                    let g = dy[0];
                    for v in self.grads[x.0].iter_mut() {
                        *v += g;
                    }
                }
                Op::Mean(x) => {
                    let g = dy[0] / self.vals[x.0].data.len() as f64;
                    for v in self.grads[x.0].iter_mut() {
                        *v += g;
                    }
                }
                Op::Scale(x, c) => {
                    for (j, g) in dy.iter().enumerate() {
                        self.grads[x.0][j] += g * c;
                    }
                }
                Op::Offset(x) => {
                    for (j, g) in dy.iter().enumerate() {
                        self.grads[x.0][j] += g;
                    }
                }
                Op::LogClamped(x, floor) => {
                    for (j, g) in dy.iter().enumerate() {
                        let v = self.vals[x.0].data[j];
                        if v > floor {
                            self.grads[x.0][j] += g / v;
                        }
                    }
                }
            }
            self.grads[i] = dy;
            if !self.grads[i].iter().all(|g| g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "backward of {} (node {})",
                    self.vals[i].op.name(),
                    i
                )));
            }
        }
        self.backward_run = true;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_matches_definition() {
        let mut g = Graph::new();
        let x = g.input(&Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x).unwrap();
        assert_eq!(g.data(y), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn l2_normalize_three_four_five() {
        let mut g = Graph::new();
        let x = g.input(&Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let y = g.l2_normalize(x).unwrap();
        assert!((g.data(y)[0] - 0.6).abs() < 1e-15);
        assert!((g.data(y)[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn l2_normalize_rejects_near_zero() {
        let mut g = Graph::new();
        let x = g.input(&Tensor::new(vec![2], vec![1e-13, 0.0]).unwrap());
        assert!(matches!(
            g.l2_normalize(x),
            Err(Error::DegenerateEmbedding(_))
        ));
    }

    #[test]
    fn backward_square_gives_two_x() {
        // loss = x^2 at x = 3 -> grad 6
        let mut g = Graph::new();
        let x = g.input(&Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let loss = g.sum(y).unwrap();
        g.backward(loss).unwrap();
        assert!((g.grad(x)[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn backward_mean_spreads_quarter() {
        let mut g = Graph::new();
        let x = g.input(&Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let loss = g.mean(x).unwrap();
        g.backward(loss).unwrap();
        for v in g.grad(x) {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_relu_subgradient_zero_at_negative() {
        let mut g = Graph::new();
        let x = g.input(&Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
        let y = g.relu(x).unwrap();
        let loss = g.sum(y).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x), &[0.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.input(&Tensor::zeros(vec![3]));
        let y = g.relu(x).unwrap();
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn unreachable_leaf_keeps_zero_grad() {
        let mut g = Graph::new();
        let x = g.input(&Tensor::scalar(2.0));
        let unused = g.input(&Tensor::scalar(5.0));
        let loss = g.mul(x, x).and_then(|y| g.sum(y)).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(unused), &[0.0]);
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        // grad of (a*f + b*g) == a*grad(f) + b*grad(g)
        let xv = Tensor::new(vec![3], vec![0.3, -0.7, 1.2]).unwrap();
        let grad_of = |a: f64, b: f64| -> Vec<f64> {
            let mut g = Graph::new();
            let x = g.input(&xv);
            let sq = g.mul(x, x).unwrap();
            let f = g.sum(sq).unwrap();
            let m = g.mean(x).unwrap();
            let fa = g.scale(f, a).unwrap();
            let gb = g.scale(m, b).unwrap();
            let loss = g.add(fa, gb).unwrap();
            g.backward(loss).unwrap();
            g.grad(x).to_vec()
        };
        let gf = grad_of(1.0, 0.0);
        let gg = grad_of(0.0, 1.0);
        let gc = grad_of(2.5, -1.5);
        for j in 0..3 {
            assert!((gc[j] - (2.5 * gf[j] - 1.5 * gg[j])).abs() < 1e-10);
        }
    }
}
