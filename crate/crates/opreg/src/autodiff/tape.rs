//! Define-by-run reverse-mode automatic differentiation over tensors.
//!
//! A [`Tape`] is an append-only arena of op records; node inputs always
//! precede the node, so the arena order is a topological order and the
//! backward pass is a single reverse sweep that visits each node once.
//! Tapes are rebuilt per forward pass.

use std::sync::Arc;

use rand::Rng;

use super::kernels::{self, ConvDims};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// x[..., c] + bias[c], bias broadcast over all leading axes.
    AddBias(usize, usize),
    /// x + s with s of shape [1].
    AddScalar(usize, usize),
    Scale(usize, f64),
    Matmul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Reshape(usize),
    Concat(Vec<usize>, usize),
    /// [m,n] -> [m,1] row sums.
    RowSum(usize),
    Sum(usize),
    Mean(usize),
    Conv2d {
        input: usize,
        kernel: usize,
        bias: usize,
        dims: ConvDims,
    },
    ConvTranspose2d {
        input: usize,
        kernel: usize,
        bias: usize,
        dims: ConvDims,
    },
    /// Mask entries are 0 or the survivor scale 1/(1-rate).
    Dropout(usize, Arc<Vec<f64>>),
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_ran: bool,
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

    /// Register an input tensor. Gradients are only tracked through nodes
    /// with `requires_grad` somewhere below them.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    // ---- elementwise ----------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let t = Tensor::new(self.shape(a).to_vec(), data).unwrap();
        Ok(self.push(t, self.needs(&[a.0, b.0]), Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x - y);
        let t = Tensor::new(self.shape(a).to_vec(), data).unwrap();
        Ok(self.push(t, self.needs(&[a.0, b.0]), Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let t = Tensor::new(self.shape(a).to_vec(), data).unwrap();
        Ok(self.push(t, self.needs(&[a.0, b.0]), Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data().iter().map(|&x| x * c).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).unwrap();
        self.push(t, self.needs(&[a.0]), Op::Scale(a.0, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { 0.0 })
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).unwrap();
        self.push(t, self.needs(&[a.0]), Op::Relu(a.0))
    }

    /// Broadcast a `[c]` bias over the trailing axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = *self.shape(x).last().ok_or_else(|| Error::ShapeMismatch {
            op: "add_bias",
            lhs: self.shape(x).to_vec(),
            rhs: self.shape(bias).to_vec(),
        })?;
        if self.shape(bias) != [c] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let bdata = self.value(bias).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_exact_mut(c) {
            for (o, &b) in chunk.iter_mut().zip(&bdata) {
                *o += b;
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), data).unwrap();
        Ok(self.push(t, self.needs(&[x.0, bias.0]), Op::AddBias(x.0, bias.0)))
    }

    /// Add a `[1]`-shaped scalar node to every entry of `x`.
    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.shape(s) != [1] {
            return Err(Error::ShapeMismatch {
                op: "add_scalar",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(s).to_vec(),
            });
        }
        let sv = self.value(s).data()[0];
        let data = self.value(x).data().iter().map(|&v| v + sv).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).unwrap();
        Ok(self.push(t, self.needs(&[x.0, s.0]), Op::AddScalar(x.0, s.0)))
    }

    // ---- structure ------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshaped(shape)?;
        Ok(self.push(t, self.needs(&[a.0]), Op::Reshape(a.0)))
    }

    /// Concatenate along an existing axis; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero parts".into()));
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidArgument(format!(
                "concat axis {} out of range for rank {}",
                axis,
                first.len()
            )));
        }
        let mut total_axis = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total_axis += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total_axis;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![0.0; out_shape.iter().product()];
        let row = total_axis * inner;
        for o in 0..outer {
            let mut off = 0;
            for &p in parts {
                let ext = self.shape(p)[axis];
                let block = ext * inner;
                let src = &self.value(p).data()[o * block..(o + 1) * block];
                data[o * row + off..o * row + off + block].copy_from_slice(src);
                off += block;
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let needs = self.needs(&ids);
        let t = Tensor::new(out_shape, data).unwrap();
        Ok(self.push(t, needs, Op::Concat(ids, axis)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        let (m, n) = match s {
            [m, n] => (*m, *n),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "transpose expects a matrix, got {:?}",
                    s
                )))
            }
        };
        let x = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = x[i * n + j];
            }
        }
        let t = Tensor::new(vec![n, m], data).unwrap();
        Ok(self.push(t, self.needs(&[a.0]), Op::Transpose(a.0)))
    }

    // ---- reductions -----------------------------------------------------

    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        let (m, n) = match s {
            [m, n] => (*m, *n),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "row_sum expects a matrix, got {:?}",
                    s
                )))
            }
        };
        let x = self.value(a).data();
        let data: Vec<f64> = (0..m).map(|i| x[i * n..(i + 1) * n].iter().sum()).collect();
        let t = Tensor::new(vec![m, 1], data).unwrap();
        Ok(self.push(t, self.needs(&[a.0]), Op::RowSum(a.0)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), self.needs(&[a.0]), Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let total: f64 = self.value(a).data().iter().sum();
        self.push(
            Tensor::scalar(total / n as f64),
            self.needs(&[a.0]),
            Op::Mean(a.0),
        )
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, k2, n) = match (sa, sb) {
            ([m, k], [k2, n]) => (*m, *k, *k2, *n),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: sa.to_vec(),
                    rhs: sb.to_vec(),
                })
            }
        };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let data = kernels::matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor::new(vec![m, n], data).unwrap();
        Ok(self.push(t, self.needs(&[a.0, b.0]), Op::Matmul(a.0, b.0)))
    }

    // ---- convolution ----------------------------------------------------

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: (usize, usize),
    ) -> Result<Var> {
        let (si, sk) = (self.shape(input), self.shape(kernel));
        let (batch, h, w, cin) = match si {
            [n, h, w, c] => (*n, *h, *w, *c),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    lhs: si.to_vec(),
                    rhs: sk.to_vec(),
                })
            }
        };
        let (kh, kw, kcin, cout) = match sk {
            [kh, kw, kc, co] => (*kh, *kw, *kc, *co),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    lhs: si.to_vec(),
                    rhs: sk.to_vec(),
                })
            }
        };
        if kcin != cin || self.shape(bias) != [cout] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: si.to_vec(),
                rhs: sk.to_vec(),
            });
        }
        if kh > h || kw > w {
            return Err(Error::InvalidArgument(format!(
                "conv2d kernel {}x{} larger than input {}x{}",
                kh, kw, h, w
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        let dims = ConvDims {
            batch,
            in_h: h,
            in_w: w,
            in_c: cin,
            k_h: kh,
            k_w: kw,
            out_c: cout,
            stride_h: stride.0,
            stride_w: stride.1,
            out_h: (h - kh) / stride.0 + 1,
            out_w: (w - kw) / stride.1 + 1,
        };
        let data = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            &dims,
        );
        let t = Tensor::new(vec![batch, dims.out_h, dims.out_w, cout], data).unwrap();
        Ok(self.push(
            t,
            self.needs(&[input.0, kernel.0, bias.0]),
            Op::Conv2d {
                input: input.0,
                kernel: kernel.0,
                bias: bias.0,
                dims,
            },
        ))
    }

    pub fn conv2d_transpose(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: (usize, usize),
    ) -> Result<Var> {
        let (si, sk) = (self.shape(input), self.shape(kernel));
        let (batch, h, w, cin) = match si {
            [n, h, w, c] => (*n, *h, *w, *c),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "conv2d_transpose",
                    lhs: si.to_vec(),
                    rhs: sk.to_vec(),
                })
            }
        };
        let (kh, kw, cout, kcin) = match sk {
            [kh, kw, co, kc] => (*kh, *kw, *co, *kc),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "conv2d_transpose",
                    lhs: si.to_vec(),
                    rhs: sk.to_vec(),
                })
            }
        };
        if kcin != cin || self.shape(bias) != [cout] {
            return Err(Error::ShapeMismatch {
                op: "conv2d_transpose",
                lhs: si.to_vec(),
                rhs: sk.to_vec(),
            });
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidArgument(
                "conv2d_transpose stride must be >= 1".into(),
            ));
        }
        let dims = ConvDims {
            batch,
            in_h: h,
            in_w: w,
            in_c: cin,
            k_h: kh,
            k_w: kw,
            out_c: cout,
            stride_h: stride.0,
            stride_w: stride.1,
            out_h: h * stride.0,
            out_w: w * stride.1,
        };
        let data = kernels::conv2d_transpose_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            &dims,
        );
        let t = Tensor::new(vec![batch, dims.out_h, dims.out_w, cout], data).unwrap();
        Ok(self.push(
            t,
            self.needs(&[input.0, kernel.0, bias.0]),
            Op::ConvTranspose2d {
                input: input.0,
                kernel: kernel.0,
                bias: bias.0,
                dims,
            },
        ))
    }

    // ---- stochastic -----------------------------------------------------

    /// Inverted dropout. In eval mode (or at rate 0) this is the identity.
    pub fn dropout(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {} outside [0, 1)",
                rate
            )));
        }
        if !training || rate == 0.0 {
            let t = self.value(x).clone();
            return Ok(self.push(t, self.needs(&[x.0]), Op::Reshape(x.0)));
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = zip_map(self.value(x).data(), &mask, |v, m| v * m);
        let t = Tensor::new(self.shape(x).to_vec(), data).unwrap();
        Ok(self.push(t, self.needs(&[x.0]), Op::Dropout(x.0, Arc::new(mask))))
    }

    // ---- backward -------------------------------------------------------

    /// Reverse sweep from a single-element output node. Gradients accumulate
    /// (sum) where a node feeds several consumers.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.value(out).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar output, got shape {:?}",
                self.shape(out)
            )));
        }
        if self.backward_ran {
            return Err(Error::InvalidArgument(
                "backward already ran on this tape; call reset_grads first".into(),
            ));
        }
        self.backward_ran = true;
        self.grads[out.0] = Some(vec![1.0]);

        for id in (0..=out.0).rev() {
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            // Re-stash so callers can read gradients of interior nodes too.
            let apply = |tape: &mut Tape, src: usize, contrib: Vec<f64>| {
                if !tape.nodes[src].needs_grad {
                    return;
                }
                match &mut tape.grads[src] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(contrib) {
                            *a += v;
                        }
                    }
                    slot => *slot = Some(contrib),
                }
            };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    apply(self, a, g.clone());
                    apply(self, b, g.clone());
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    apply(self, a, g.clone());
                    apply(self, b, g.iter().map(|v| -v).collect());
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga = zip_map(&g, self.nodes[b].value.data(), |gv, bv| gv * bv);
                    let gb = zip_map(&g, self.nodes[a].value.data(), |gv, av| gv * av);
                    apply(self, a, ga);
                    apply(self, b, gb);
                }
                Op::AddBias(x, bias) => {
                    let (x, bias) = (*x, *bias);
                    let c = self.nodes[bias].value.len();
                    let mut gb = vec![0.0; c];
                    for chunk in g.chunks_exact(c) {
                        for (acc, &v) in gb.iter_mut().zip(chunk) {
                            *acc += v;
                        }
                    }
                    apply(self, x, g.clone());
                    apply(self, bias, gb);
                }
                Op::AddScalar(x, s) => {
                    let (x, s) = (*x, *s);
                    let gs = vec![g.iter().sum()];
                    apply(self, x, g.clone());
                    apply(self, s, gs);
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    apply(self, a, g.iter().map(|v| v * c).collect());
                }
                Op::Relu(a) => {
                    let a = *a;
                    let ga = zip_map(&g, self.nodes[a].value.data(), |gv, xv| {
                        if xv > 0.0 {
                            gv
                        } else {
                            0.0
                        }
                    });
                    apply(self, a, ga);
                }
                Op::Reshape(a) => {
                    let a = *a;
                    apply(self, a, g.clone());
                }
                Op::Concat(parts, axis) => {
                    let parts = parts.clone();
                    let axis = *axis;
                    let out_shape = self.nodes[id].value.shape().to_vec();
                    let outer: usize = out_shape[..axis].iter().product();
                    let inner: usize = out_shape[axis + 1..].iter().product();
                    let row = out_shape[axis] * inner;
                    let mut off = 0;
                    for &p in &parts {
                        let ext = self.nodes[p].value.shape()[axis];
                        let block = ext * inner;
                        let mut gp = vec![0.0; outer * block];
                        for o in 0..outer {
                            gp[o * block..(o + 1) * block]
                                .copy_from_slice(&g[o * row + off..o * row + off + block]);
                        }
                        apply(self, p, gp);
                        off += block;
                    }
                }
                Op::Transpose(a) => {
                    let a = *a;
                    let [n, m] = self.nodes[id].value.shape() else {
                        unreachable!()
                    };
                    let (n, m) = (*n, *m);
                    let mut ga = vec![0.0; m * n];
                    for j in 0..n {
                        for i in 0..m {
                            ga[i * n + j] = g[j * m + i];
                        }
                    }
                    apply(self, a, ga);
                }
                Op::RowSum(a) => {
                    let a = *a;
                    let [m, n] = self.nodes[a].value.shape() else {
                        unreachable!()
                    };
                    let (m, n) = (*m, *n);
                    let mut ga = vec![0.0; m * n];
                    for i in 0..m {
                        ga[i * n..(i + 1) * n].fill(g[i]);
                    }
                    apply(self, a, ga);
                }
                Op::Sum(a) => {
                    let a = *a;
                    apply(self, a, vec![g[0]; self.nodes[a].value.len()]);
                }
                Op::Mean(a) => {
                    let a = *a;
                    let n = self.nodes[a].value.len().max(1);
                    apply(self, a, vec![g[0] / n as f64; self.nodes[a].value.len()]);
                }
                Op::Matmul(a, b) => {
                    let (a, b) = (*a, *b);
                    let [m, k] = self.nodes[a].value.shape() else {
                        unreachable!()
                    };
                    let (m, k) = (*m, *k);
                    let n = self.nodes[b].value.shape()[1];
                    if self.nodes[a].needs_grad {
                        let ga = kernels::matmul_nt(&g, self.nodes[b].value.data(), m, n, k);
                        apply(self, a, ga);
                    }
                    if self.nodes[b].needs_grad {
                        let gb = kernels::matmul_tn(self.nodes[a].value.data(), &g, m, k, n);
                        apply(self, b, gb);
                    }
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    dims,
                } => {
                    let (input, kernel, bias, dims) = (*input, *kernel, *bias, *dims);
                    let (gi, gk, gb) = kernels::conv2d_backward(
                        self.nodes[input].value.data(),
                        self.nodes[kernel].value.data(),
                        &g,
                        &dims,
                    );
                    apply(self, input, gi);
                    apply(self, kernel, gk);
                    apply(self, bias, gb);
                }
                Op::ConvTranspose2d {
                    input,
                    kernel,
                    bias,
                    dims,
                } => {
                    let (input, kernel, bias, dims) = (*input, *kernel, *bias, *dims);
                    let (gi, gk, gb) = kernels::conv2d_transpose_backward(
                        self.nodes[input].value.data(),
                        self.nodes[kernel].value.data(),
                        &g,
                        &dims,
                    );
                    apply(self, input, gi);
                    apply(self, kernel, gk);
                    apply(self, bias, gb);
                }
                Op::Dropout(a, mask) => {
                    let a = *a;
                    let mask = Arc::clone(mask);
                    apply(self, a, zip_map(&g, &mask, |gv, m| gv * m));
                }
            }
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    /// Gradient buffer of `v`, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of `v` shaped like its value.
    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shape(v).to_vec(), g.clone()).unwrap())
    }

    /// Clear all gradients so another backward pass may run.
    pub fn reset_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
        self.backward_ran = false;
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

impl Tape {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }
}

/// Max relative error between analytic and central-difference gradients of a
/// scalar-valued graph over every entry of every input.
///
/// The builder must be deterministic: it is re-invoked for each perturbed
/// evaluation, so any internal randomness has to be re-seeded per call.
pub fn grad_check<F>(build: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone(), true))
        .collect();
    let out = build(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::InvalidArgument(
            "grad_check requires a scalar-valued builder".into(),
        ));
    }
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();

    let eval = |points: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = points
            .iter()
            .map(|t| tape.leaf(t.clone(), false))
            .collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let orig = t.data()[j];
            probe[ti].data_mut()[j] = orig + eps;
            let plus = eval(&probe)?;
            probe[ti].data_mut()[j] = orig - eps;
            let minus = eval(&probe)?;
            probe[ti].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let exact = analytic[ti][j];
            let rel = (exact - numeric).abs() / (exact.abs() + numeric.abs() + 1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
