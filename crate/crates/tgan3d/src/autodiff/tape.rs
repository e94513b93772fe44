//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! Ops append nodes in topological order; `backward` walks the tape once in
//! reverse, accumulating gradients additively over fan-out. The tape is
//! single-owner and never shared between threads.

use super::kernels::{
    conv_backward, conv_forward, conv_transpose_backward, conv_transpose_forward, ConvGeom,
};
use super::tensor::{broadcast_zip, reduce_to_shape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Matmul,
    Reshape,
    Concat { axis: usize },
    Slice { axis: usize, start: usize },
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
    Mean,
    Sum,
    Linear,
    Conv { geom: ConvGeom },
    ConvTranspose { geom: ConvGeom },
    InstanceNorm { eps: f64 },
    GlobalAvgPool,
}

struct Node {
    op: OpKind,
    inputs: Vec<usize>,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    parallel: bool,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            parallel: cfg!(feature = "parallel"),
        }
    }

    /// Force the sequential kernel path (used by benches and tests).
    pub fn sequential() -> Self {
        Tape {
            nodes: Vec::new(),
            parallel: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(OpKind::Leaf, vec![], value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: OpKind, inputs: Vec<usize>, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- elementwise binary -------------------------------------------------

    fn binary(&mut self, op: OpKind, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let value = broadcast_zip(self.value(a), self.value(b), f)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(op, vec![a.0, b.0], value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(OpKind::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(OpKind::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(OpKind::Mul, a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(OpKind::Div, a, b, |x, y| x / y)
    }

    // ---- unary activations --------------------------------------------------

    fn unary(&mut self, op: OpKind, a: Var, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.nodes[a.0].requires_grad;
        self.push(op, vec![a.0], value, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(OpKind::Relu, a, |x| x.max(0.0))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(OpKind::LeakyRelu { slope }, a, move |x| {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(OpKind::Tanh, a, f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(OpKind::Sigmoid, a, |x| 1.0 / (1.0 + (-x).exp()))
    }

    // ---- shape ops ----------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshaped(shape)?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(OpKind::Reshape, vec![a.0], value, rg))
    }

    pub fn concat(&mut self, vars: &[Var], axis: usize) -> Result<Var> {
        if vars.is_empty() {
            return Err(Error::invalid("concat of zero tensors"));
        }
        let first = self.value(vars[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(Error::invalid(format!(
                "concat axis {axis} out of range for rank {}",
                first.len()
            )));
        }
        let mut axis_total = 0;
        for v in vars {
            let s = self.value(*v).shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape(&first, s, "concat"));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![0.0; out_shape.iter().product()];
        let row = axis_total * inner;
        let mut off = 0;
        for v in vars {
            let t = self.value(*v);
            let a = t.shape()[axis];
            for o in 0..outer {
                let src = &t.data()[o * a * inner..(o + 1) * a * inner];
                data[o * row + off..o * row + off + a * inner].copy_from_slice(src);
            }
            off += a * inner;
        }
        let value = Tensor::from_vec(&out_shape, data)?;
        let rg = self.any_grad(vars);
        Ok(self.push(
            OpKind::Concat { axis },
            vars.iter().map(|v| v.0).collect(),
            value,
            rg,
        ))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::invalid(format!(
                "slice [{start}, {}) out of range on axis {axis} of {:?}",
                start + len,
                shape
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut data = vec![0.0; outer * len * inner];
        let t = self.value(a);
        for o in 0..outer {
            let src_base = (o * shape[axis] + start) * inner;
            data[o * len * inner..(o + 1) * len * inner]
                .copy_from_slice(&t.data()[src_base..src_base + len * inner]);
        }
        let value = Tensor::from_vec(&out_shape, data)?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(OpKind::Slice { axis, start }, vec![a.0], value, rg))
    }

    // ---- reductions ---------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push(OpKind::Sum, vec![a.0], Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.nodes[a.0].requires_grad;
        self.push(OpKind::Mean, vec![a.0], Tensor::scalar(m), rg)
    }

    /// [N, C, spatial...] -> [N, C] mean over the spatial axes.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() < 3 {
            return Err(Error::invalid("global_avg_pool needs rank >= 3"));
        }
        let (n, c) = (t.shape()[0], t.shape()[1]);
        let sp: usize = t.shape()[2..].iter().product();
        let mut data = vec![0.0; n * c];
        for i in 0..n * c {
            data[i] = t.data()[i * sp..(i + 1) * sp].iter().sum::<f64>() / sp as f64;
        }
        let value = Tensor::from_vec(&[n, c], data)?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(OpKind::GlobalAvgPool, vec![a.0], value, rg))
    }

    // ---- linear algebra -----------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape(ta.shape(), tb.shape(), "matmul"));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = ta.data()[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for j in 0..n {
                    data[i * n + j] += av * tb.data()[p * n + j];
                }
            }
        }
        let value = Tensor::from_vec(&[m, n], data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(OpKind::Matmul, vec![a.0, b.0], value, rg))
    }

    /// x [N, in] * w [out, in]^T + b [out] -> [N, out]
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tx.rank() != 2 || tw.rank() != 2 || tx.shape()[1] != tw.shape()[1] {
            return Err(Error::shape(tx.shape(), tw.shape(), "linear"));
        }
        let (n, din, dout) = (tx.shape()[0], tx.shape()[1], tw.shape()[0]);
        if tb.shape() != [dout] {
            return Err(Error::shape(&[dout], tb.shape(), "linear bias"));
        }
        let mut data = vec![0.0; n * dout];
        for i in 0..n {
            for o in 0..dout {
                let mut acc = tb.data()[o];
                for p in 0..din {
                    acc += tx.data()[i * din + p] * tw.data()[o * din + p];
                }
                data[i * dout + o] = acc;
            }
        }
        let value = Tensor::from_vec(&[n, dout], data)?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(OpKind::Linear, vec![x.0, w.0, b.0], value, rg))
    }

    // ---- convolutions -------------------------------------------------------

    fn conv_common(
        &mut self,
        input: Var,
        weight: Var,
        stride: usize,
        pad: usize,
        spatial: usize,
        transposed: bool,
    ) -> Result<Var> {
        let (ti, tw) = (self.value(input), self.value(weight));
        let rank = 2 + spatial;
        if ti.rank() != rank || tw.rank() != rank {
            return Err(Error::shape(
                &vec![rank],
                &[ti.rank(), tw.rank()],
                "conv rank",
            ));
        }
        let n = ti.shape()[0];
        let cin = ti.shape()[1];
        let (w_cin, cout) = if transposed {
            (tw.shape()[0], tw.shape()[1])
        } else {
            (tw.shape()[1], tw.shape()[0])
        };
        if w_cin != cin {
            return Err(Error::shape(ti.shape(), tw.shape(), "conv channels"));
        }
        let mut in_sp = [1usize; 3];
        let mut k = [1usize; 3];
        let mut pads = [0usize; 3];
        for d in 0..spatial {
            in_sp[3 - spatial + d] = ti.shape()[2 + d];
            k[3 - spatial + d] = tw.shape()[2 + d];
            pads[3 - spatial + d] = pad;
        }
        let geom = if transposed {
            ConvGeom::conv_transpose(n, cin, cout, in_sp, k, stride, pads)?
        } else {
            ConvGeom::conv(n, cin, cout, in_sp, k, stride, pads)?
        };
        let data = if transposed {
            conv_transpose_forward(ti.data(), tw.data(), &geom, self.parallel)
        } else {
            conv_forward(ti.data(), tw.data(), &geom, self.parallel)
        };
        let mut out_shape = vec![n, cout];
        out_shape.extend_from_slice(&geom.out_sp[3 - spatial..]);
        let value = Tensor::from_vec(&out_shape, data)?;
        let rg = self.any_grad(&[input, weight]);
        let op = if transposed {
            OpKind::ConvTranspose { geom }
        } else {
            OpKind::Conv { geom }
        };
        Ok(self.push(op, vec![input.0, weight.0], value, rg))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, pad: usize) -> Result<Var> {
        self.conv_common(input, weight, stride, pad, 2, false)
    }

    pub fn conv3d(&mut self, input: Var, weight: Var, stride: usize, pad: usize) -> Result<Var> {
        self.conv_common(input, weight, stride, pad, 3, false)
    }

    pub fn conv1d_transpose(
        &mut self,
        input: Var,
        weight: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        self.conv_common(input, weight, stride, pad, 1, true)
    }

    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        self.conv_common(input, weight, stride, pad, 2, true)
    }

    pub fn conv_transpose3d(
        &mut self,
        input: Var,
        weight: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        self.conv_common(input, weight, stride, pad, 3, true)
    }

    // ---- normalization ------------------------------------------------------

    /// Per-(sample, channel) normalization over the spatial axes, no affine.
    pub fn instance_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let t = self.value(a);
        if t.rank() < 3 {
            return Err(Error::invalid("instance_norm needs rank >= 3"));
        }
        let groups = t.shape()[0] * t.shape()[1];
        let sp: usize = t.shape()[2..].iter().product();
        let mut data = vec![0.0; t.len()];
        for g in 0..groups {
            let x = &t.data()[g * sp..(g + 1) * sp];
            let mean = x.iter().sum::<f64>() / sp as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / sp as f64;
            let istd = 1.0 / (var + eps).sqrt();
            for (o, &v) in data[g * sp..(g + 1) * sp].iter_mut().zip(x.iter()) {
                *o = (v - mean) * istd;
            }
        }
        let value = Tensor::from_vec(t.shape(), data)?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(OpKind::InstanceNorm { eps }, vec![a.0], value, rg))
    }

    // ---- backward -----------------------------------------------------------

    /// Reverse sweep from a scalar root. Returns one gradient slot per node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_val = self.value(root);
        if root_val.len() != 1 {
            return Err(Error::invalid(format!(
                "backward root must be scalar, got shape {:?}",
                root_val.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::from_vec(root_val.shape(), vec![1.0])?);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].clone() else { continue };
            match &node.op {
                OpKind::Leaf => {}
                OpKind::Add => {
                    self.acc_reduced(&mut grads, node.inputs[0], &g);
                    self.acc_reduced(&mut grads, node.inputs[1], &g);
                }
                OpKind::Sub => {
                    self.acc_reduced(&mut grads, node.inputs[0], &g);
                    let neg = g.map(|x| -x);
                    self.acc_reduced(&mut grads, node.inputs[1], &neg);
                }
                OpKind::Mul => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let da = broadcast_zip(&g, &self.nodes[b].value, |x, y| x * y)?;
                    let db = broadcast_zip(&g, &self.nodes[a].value, |x, y| x * y)?;
                    self.acc_reduced(&mut grads, a, &da);
                    self.acc_reduced(&mut grads, b, &db);
                }
                OpKind::Div => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let da = broadcast_zip(&g, &self.nodes[b].value, |x, y| x / y)?;
                    // db = -g * a / b^2
                    let ga = broadcast_zip(&g, &self.nodes[a].value, |x, y| x * y)?;
                    let db = broadcast_zip(&ga, &self.nodes[b].value, |x, y| -x / (y * y))?;
                    self.acc_reduced(&mut grads, a, &da);
                    self.acc_reduced(&mut grads, b, &db);
                }
                OpKind::Relu => {
                    let x = &self.nodes[node.inputs[0]].value;
                    let dx = zipped(&g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    self.acc(&mut grads, node.inputs[0], dx);
                }
                OpKind::LeakyRelu { slope } => {
                    let s = *slope;
                    let x = &self.nodes[node.inputs[0]].value;
                    let dx = zipped(&g, x, |gv, xv| if xv > 0.0 { gv } else { gv * s });
                    self.acc(&mut grads, node.inputs[0], dx);
                }
                OpKind::Tanh => {
                    let y = &node.value;
                    let dx = zipped(&g, y, |gv, yv| gv * (1.0 - yv * yv));
                    self.acc(&mut grads, node.inputs[0], dx);
                }
                OpKind::Sigmoid => {
                    let y = &node.value;
                    let dx = zipped(&g, y, |gv, yv| gv * yv * (1.0 - yv));
                    self.acc(&mut grads, node.inputs[0], dx);
                }
                OpKind::Reshape => {
                    let in_shape = self.nodes[node.inputs[0]].value.shape().to_vec();
                    let dx = g.reshaped(&in_shape)?;
                    self.acc(&mut grads, node.inputs[0], dx);
                }
                OpKind::Concat { axis } => {
                    let axis = *axis;
                    let mut start = 0;
                    for &inp in &node.inputs {
                        let len = self.nodes[inp].value.shape()[axis];
                        let piece = slice_tensor(&g, axis, start, len);
                        start += len;
                        self.acc(&mut grads, inp, piece);
                    }
                }
                OpKind::Slice { axis, start } => {
                    let src = &self.nodes[node.inputs[0]].value;
                    let mut dx = Tensor::zeros(src.shape());
                    scatter_slice(&mut dx, &g, *axis, *start);
                    self.acc(&mut grads, node.inputs[0], dx);
                }
                OpKind::Sum => {
                    let x = &self.nodes[node.inputs[0]].value;
                    let dx = Tensor::full(x.shape(), g.item());
                    self.acc(&mut grads, node.inputs[0], dx);
                }
                OpKind::Mean => {
                    let x = &self.nodes[node.inputs[0]].value;
                    let dx = Tensor::full(x.shape(), g.item() / x.len() as f64);
                    self.acc(&mut grads, node.inputs[0], dx);
                }
                OpKind::GlobalAvgPool => {
                    let x = &self.nodes[node.inputs[0]].value;
                    let sp: usize = x.shape()[2..].iter().product();
                    let mut dx = Tensor::zeros(x.shape());
                    for i in 0..g.len() {
                        let gv = g.data()[i] / sp as f64;
                        for v in &mut dx.data_mut()[i * sp..(i + 1) * sp] {
                            *v = gv;
                        }
                    }
                    self.acc(&mut grads, node.inputs[0], dx);
                }
                OpKind::Matmul => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let ta = &self.nodes[a].value;
                    let tb = &self.nodes[b].value;
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    let mut da = vec![0.0; m * k];
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for j in 0..n {
                            let gv = g.data()[i * n + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] += gv * tb.data()[p * n + j];
                                db[p * n + j] += gv * ta.data()[i * k + p];
                            }
                        }
                    }
                    self.acc(&mut grads, a, Tensor::from_vec(&[m, k], da)?);
                    self.acc(&mut grads, b, Tensor::from_vec(&[k, n], db)?);
                }
                OpKind::Linear => {
                    let (x, w, b) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                    let tx = &self.nodes[x].value;
                    let tw = &self.nodes[w].value;
                    let (n, din, dout) = (tx.shape()[0], tx.shape()[1], tw.shape()[0]);
                    let mut dx = vec![0.0; n * din];
                    let mut dw = vec![0.0; dout * din];
                    let mut dbias = vec![0.0; dout];
                    for i in 0..n {
                        for o in 0..dout {
                            let gv = g.data()[i * dout + o];
                            if gv == 0.0 {
                                continue;
                            }
                            dbias[o] += gv;
                            for p in 0..din {
                                dx[i * din + p] += gv * tw.data()[o * din + p];
                                dw[o * din + p] += gv * tx.data()[i * din + p];
                            }
                        }
                    }
                    self.acc(&mut grads, x, Tensor::from_vec(&[n, din], dx)?);
                    self.acc(&mut grads, w, Tensor::from_vec(&[dout, din], dw)?);
                    self.acc(&mut grads, b, Tensor::from_vec(&[dout], dbias)?);
                }
                OpKind::Conv { geom } => {
                    let (inp, w) = (node.inputs[0], node.inputs[1]);
                    let ti = &self.nodes[inp].value;
                    let tw = &self.nodes[w].value;
                    let (di, dw) = conv_backward(ti.data(), tw.data(), g.data(), geom);
                    self.acc(&mut grads, inp, Tensor::from_vec(ti.shape(), di)?);
                    self.acc(&mut grads, w, Tensor::from_vec(tw.shape(), dw)?);
                }
                OpKind::ConvTranspose { geom } => {
                    let (inp, w) = (node.inputs[0], node.inputs[1]);
                    let ti = &self.nodes[inp].value;
                    let tw = &self.nodes[w].value;
                    let (di, dw) = conv_transpose_backward(ti.data(), tw.data(), g.data(), geom);
                    self.acc(&mut grads, inp, Tensor::from_vec(ti.shape(), di)?);
                    self.acc(&mut grads, w, Tensor::from_vec(tw.shape(), dw)?);
                }
                OpKind::InstanceNorm { eps } => {
                    let x = &self.nodes[node.inputs[0]].value;
                    let sp: usize = x.shape()[2..].iter().product();
                    let groups = x.len() / sp;
                    let y = &node.value;
                    let mut dx = Tensor::zeros(x.shape());
                    for gi in 0..groups {
                        let xs = &x.data()[gi * sp..(gi + 1) * sp];
                        let ys = &y.data()[gi * sp..(gi + 1) * sp];
                        let gs = &g.data()[gi * sp..(gi + 1) * sp];
                        let mean = xs.iter().sum::<f64>() / sp as f64;
                        let var =
                            xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / sp as f64;
                        let istd = 1.0 / (var + eps).sqrt();
                        let g_mean = gs.iter().sum::<f64>() / sp as f64;
                        let gy_mean = gs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>()
                            / sp as f64;
                        for j in 0..sp {
                            dx.data_mut()[gi * sp + j] =
                                istd * (gs[j] - g_mean - ys[j] * gy_mean);
                        }
                    }
                    self.acc(&mut grads, node.inputs[0], dx);
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], idx: usize, dx: Tensor) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        match &mut grads[idx] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(dx.data()) {
                    *e += d;
                }
            }
            slot => *slot = Some(dx),
        }
    }

    fn acc_reduced(&self, grads: &mut [Option<Tensor>], idx: usize, g: &Tensor) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        let dx = reduce_to_shape(g, self.nodes[idx].value.shape());
        self.acc(grads, idx, dx);
    }
}

fn zipped(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g
        .data()
        .iter()
        .zip(x.data())
        .map(|(&gv, &xv)| f(gv, xv))
        .collect();
    Tensor::from_vec(g.shape(), data).expect("same shape")
}

fn slice_tensor(t: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let shape = t.shape();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape[axis] = len;
    let mut data = vec![0.0; outer * len * inner];
    for o in 0..outer {
        let src = (o * shape[axis] + start) * inner;
        data[o * len * inner..(o + 1) * len * inner]
            .copy_from_slice(&t.data()[src..src + len * inner]);
    }
    Tensor::from_vec(&out_shape, data).expect("slice shape")
}

fn scatter_slice(dst: &mut Tensor, piece: &Tensor, axis: usize, start: usize) {
    let shape = dst.shape().to_vec();
    let len = piece.shape()[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    for o in 0..outer {
        let d = (o * shape[axis] + start) * inner;
        for (dv, pv) in dst.data_mut()[d..d + len * inner]
            .iter_mut()
            .zip(&piece.data()[o * len * inner..(o + 1) * len * inner])
        {
            *dv += pv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn mean_relu_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap(), true);
        let r = tape.relu(x);
        let m = tape.mean(r);
        let grads = tape.backward(m).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.5]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap(), true);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn concat_splits_gradient_exactly() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap(), true);
        let b = tape.leaf(Tensor::from_vec(&[3], vec![3.0, 4.0, 5.0]).unwrap(), true);
        let c = tape.concat(&[a, b], 0).unwrap();
        assert_eq!(tape.value(c).len(), 5);
        let w = tape.constant(Tensor::from_vec(&[5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
        let p = tape.mul(c, w).unwrap();
        let s = tape.sum(p);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn concat_latent_lengths() {
        let mut tape = Tape::new();
        let z0 = tape.constant(Tensor::zeros(&[1, 50]));
        let z1 = tape.constant(Tensor::zeros(&[1, 50]));
        let c = tape.concat(&[z0, z1], 1).unwrap();
        assert_eq!(tape.value(c).shape(), &[1, 100]);
    }

    #[test]
    fn unknown_shape_mismatch_reports_extents() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[4, 4]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 4]"), "{msg}");
    }
}
