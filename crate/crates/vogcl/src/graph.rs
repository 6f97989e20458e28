//! Define-by-run compute graph with reverse-mode differentiation.
//!
//! The graph is a flat tape: every operation appends a node holding its output
//! tensor and a record of its input node ids, so insertion order is a
//! topological order by construction. A graph is built per batch, `backward`
//! walks the tape once in reverse, and gradients accumulate additively across
//! fan-out. Gradients reach any leaf marked `requires_grad`, including input
//! images, which is what the difficulty scoring needs.

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Spatial bookkeeping for a convolution node.
#[derive(Debug, Clone)]
struct ConvDims {
    batch: usize,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    filters: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: NodeId,
        b: NodeId,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        dims: ConvDims,
    },
    Relu {
        x: NodeId,
    },
    MaxPool2d {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Reshape {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Sum {
        x: NodeId,
    },
    Select {
        x: NodeId,
        index: usize,
    },
    AddRowBias {
        x: NodeId,
        bias: NodeId,
        rows: usize,
        cols: usize,
    },
    AddChannelBias {
        x: NodeId,
        bias: NodeId,
        channels: usize,
        spatial: usize,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    op: Op,
    out: Tensor,
}

/// `out[m x n] += a[m x k] * b[k x n]`, row-major.
fn mat_mul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m x n] += a[m x k] * b^T` where `b` is stored `[n x k]`.
fn mat_mul_bt_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (av, bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

/// `out[k x n] += a^T * b` where `a` is stored `[m x k]` and `b` is `[m x n]`.
fn mat_mul_at_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// Unfolds one image `[C x H x W]` into columns `[C*kh*kw x out_h*out_w]`.
fn im2col(img: &[f64], d: &ConvDims, cols: &mut [f64]) {
    let ohw = d.out_h * d.out_w;
    let mut r = 0usize;
    for c in 0..d.in_c {
        let plane = &img[c * d.in_h * d.in_w..(c + 1) * d.in_h * d.in_w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = &mut cols[r * ohw..(r + 1) * ohw];
                let mut idx = 0usize;
                for oy in 0..d.out_h {
                    let iy = (oy * d.stride + ki) as isize - d.padding as isize;
                    if iy < 0 || iy >= d.in_h as isize {
                        for _ in 0..d.out_w {
                            row[idx] = 0.0;
                            idx += 1;
                        }
                        continue;
                    }
                    let line = &plane[iy as usize * d.in_w..(iy as usize + 1) * d.in_w];
                    for ox in 0..d.out_w {
                        let ix = (ox * d.stride + kj) as isize - d.padding as isize;
                        row[idx] = if ix < 0 || ix >= d.in_w as isize {
                            0.0
                        } else {
                            line[ix as usize]
                        };
                        idx += 1;
                    }
                }
                r += 1;
            }
        }
    }
}

/// Scatter-adds columns `[C*kh*kw x out_h*out_w]` back into an image gradient.
fn col2im_acc(cols: &[f64], d: &ConvDims, img_grad: &mut [f64]) {
    let ohw = d.out_h * d.out_w;
    let mut r = 0usize;
    for c in 0..d.in_c {
        let plane = &mut img_grad[c * d.in_h * d.in_w..(c + 1) * d.in_h * d.in_w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = &cols[r * ohw..(r + 1) * ohw];
                let mut idx = 0usize;
                for oy in 0..d.out_h {
                    let iy = (oy * d.stride + ki) as isize - d.padding as isize;
                    if iy < 0 || iy >= d.in_h as isize {
                        idx += d.out_w;
                        continue;
                    }
                    let line = &mut plane[iy as usize * d.in_w..(iy as usize + 1) * d.in_w];
                    for ox in 0..d.out_w {
                        let ix = (ox * d.stride + kj) as isize - d.padding as isize;
                        if ix >= 0 && ix < d.in_w as isize {
                            line[ix as usize] += row[idx];
                        }
                        idx += 1;
                    }
                }
                r += 1;
            }
        }
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        self.push(Op::Leaf, tensor)
    }

    pub fn output(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].out
    }

    /// Scalar value of a node; panics if the node is not scalar.
    pub fn value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].out.item()
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].out.grad()
    }

    fn push(&mut self, op: Op, out: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, out });
        id
    }

    fn push_derived(&mut self, op: Op, mut out: Tensor, inputs: &[NodeId]) -> NodeId {
        if inputs.iter().any(|id| self.nodes[id.0].out.requires_grad()) {
            out = out.with_grad();
        }
        self.push(op, out)
    }

    fn data(&self, id: NodeId) -> &[f64] {
        self.nodes[id.0].out.data()
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].out.shape()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::Dimension {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        mat_mul_acc(self.data(a), self.data(b), m, k, n, &mut out);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push_derived(Op::MatMul { a, b, m, k, n }, t, &[a, b]))
    }

    /// Cross-correlation of `input` (`[C,H,W]` or `[B,C,H,W]`) with `kernels`
    /// `[F,C,kh,kw]`. Output spatial dims follow the usual floor formula.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernels: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, TensorError> {
        let in_shape = self.shape(input).to_vec();
        let k_shape = self.shape(kernels).to_vec();
        if stride < 1 {
            return Err(TensorError::Shape {
                op: "conv2d",
                shape: in_shape,
                reason: "stride must be >= 1".into(),
            });
        }
        let (batch, in_c, in_h, in_w, batched) = match in_shape.as_slice() {
            [c, h, w] => (1usize, *c, *h, *w, false),
            [b, c, h, w] => (*b, *c, *h, *w, true),
            _ => {
                return Err(TensorError::Shape {
                    op: "conv2d",
                    shape: in_shape,
                    reason: "input must be [C,H,W] or [B,C,H,W]".into(),
                })
            }
        };
        let [filters, kc, kh, kw] = match k_shape.as_slice() {
            [f, c, h, w] => [*f, *c, *h, *w],
            _ => {
                return Err(TensorError::Shape {
                    op: "conv2d",
                    shape: k_shape,
                    reason: "kernels must be [F,C,kh,kw]".into(),
                })
            }
        };
        if kc != in_c || kh > in_h + 2 * padding || kw > in_w + 2 * padding {
            return Err(TensorError::Dimension {
                op: "conv2d",
                lhs: in_shape,
                rhs: k_shape,
            });
        }
        let out_h = (in_h + 2 * padding - kh) / stride + 1;
        let out_w = (in_w + 2 * padding - kw) / stride + 1;
        let dims = ConvDims {
            batch,
            in_c,
            in_h,
            in_w,
            filters,
            kh,
            kw,
            stride,
            padding,
            out_h,
            out_w,
        };

        let ckk = in_c * kh * kw;
        let ohw = out_h * out_w;
        let mut out = vec![0.0; batch * filters * ohw];
        let mut cols = vec![0.0; ckk * ohw];
        let img_len = in_c * in_h * in_w;
        for b in 0..batch {
            im2col(
                &self.data(input)[b * img_len..(b + 1) * img_len],
                &dims,
                &mut cols,
            );
            mat_mul_acc(
                self.data(kernels),
                &cols,
                filters,
                ckk,
                ohw,
                &mut out[b * filters * ohw..(b + 1) * filters * ohw],
            );
        }
        let out_shape = if batched {
            vec![batch, filters, out_h, out_w]
        } else {
            vec![filters, out_h, out_w]
        };
        let t = Tensor::new(out_shape, out)?;
        Ok(self.push_derived(
            Op::Conv2d {
                input,
                kernels,
                dims,
            },
            t,
            &[input, kernels],
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let data: Vec<f64> = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        self.push_derived(Op::Relu { x }, t, &[x])
    }

    /// Non-overlapping `k x k` window max over the two trailing spatial dims.
    pub fn maxpool2d(&mut self, x: NodeId, k: usize) -> Result<NodeId, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 3 {
            return Err(TensorError::Shape {
                op: "maxpool2d",
                shape,
                reason: "need at least [C,H,W]".into(),
            });
        }
        let w = shape[shape.len() - 1];
        let h = shape[shape.len() - 2];
        if k == 0 || !h.is_multiple_of(k) || !w.is_multiple_of(k) {
            return Err(TensorError::Shape {
                op: "maxpool2d",
                shape,
                reason: format!("spatial dims {h}x{w} not divisible by window {k}"),
            });
        }
        let planes: usize = shape[..shape.len() - 2].iter().product();
        let (oh, ow) = (h / k, w / k);
        let mut out = vec![0.0; planes * oh * ow];
        let mut argmax = vec![0usize; planes * oh * ow];
        let data = self.data(x);
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best_idx = base + (oy * k) * w + ox * k;
                    let mut best = data[best_idx];
                    for dy in 0..k {
                        for dx in 0..k {
                            let idx = base + (oy * k + dy) * w + (ox * k + dx);
                            if data[idx] > best {
                                best = data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = p * oh * ow + oy * ow + ox;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        let mut out_shape = shape[..shape.len() - 2].to_vec();
        out_shape.push(oh);
        out_shape.push(ow);
        let t = Tensor::new(out_shape, out)?;
        Ok(self.push_derived(Op::MaxPool2d { x, argmax }, t, &[x]))
    }

    pub fn reshape(&mut self, x: NodeId, new_shape: Vec<usize>) -> Result<NodeId, TensorError> {
        let numel: usize = new_shape.iter().product();
        if numel != self.data(x).len() {
            return Err(TensorError::Dimension {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: new_shape,
            });
        }
        let t = Tensor::new(new_shape, self.data(x).to_vec())?;
        Ok(self.push_derived(Op::Reshape { x }, t, &[x]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Dimension {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push_derived(Op::Add { a, b }, t, &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Dimension {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push_derived(Op::Mul { a, b }, t, &[a, b]))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.data(x).iter().sum();
        self.push_derived(Op::Sum { x }, Tensor::scalar(total), &[x])
    }

    /// Picks one element by flat index as a scalar node; backward routes the
    /// seed gradient to exactly that element. Used to differentiate a single
    /// pre-softmax logit.
    pub fn select(&mut self, x: NodeId, index: usize) -> Result<NodeId, TensorError> {
        let data = self.data(x);
        if index >= data.len() {
            return Err(TensorError::IndexOutOfBounds {
                index,
                len: data.len(),
            });
        }
        let t = Tensor::scalar(data[index]);
        Ok(self.push_derived(Op::Select { x, index }, t, &[x]))
    }

    /// `x[rows x cols] + bias[cols]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 2 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(TensorError::Dimension {
                op: "add_row_bias",
                lhs: xs,
                rhs: bs,
            });
        }
        let (rows, cols) = (xs[0], xs[1]);
        let b = self.data(bias).to_vec();
        let data: Vec<f64> = self
            .data(x)
            .chunks_exact(cols)
            .flat_map(|row| row.iter().zip(&b).map(|(v, bv)| v + bv))
            .collect();
        let t = Tensor::new(xs, data)?;
        Ok(self.push_derived(
            Op::AddRowBias {
                x,
                bias,
                rows,
                cols,
            },
            t,
            &[x, bias],
        ))
    }

    /// `x[..,C,H,W] + bias[C]` broadcast over batch and spatial positions.
    pub fn add_channel_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() < 3 || bs.len() != 1 || bs[0] != xs[xs.len() - 3] {
            return Err(TensorError::Dimension {
                op: "add_channel_bias",
                lhs: xs,
                rhs: bs,
            });
        }
        let channels = xs[xs.len() - 3];
        let spatial = xs[xs.len() - 2] * xs[xs.len() - 1];
        let b = self.data(bias).to_vec();
        let mut data = self.data(x).to_vec();
        for chunk in data.chunks_exact_mut(channels * spatial) {
            for (c, bv) in b.iter().enumerate() {
                for v in &mut chunk[c * spatial..(c + 1) * spatial] {
                    *v += bv;
                }
            }
        }
        let t = Tensor::new(xs, data)?;
        Ok(self.push_derived(
            Op::AddChannelBias {
                x,
                bias,
                channels,
                spatial,
            },
            t,
            &[x, bias],
        ))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, stabilized by
    /// max-subtraction. `logits` must be `[B x C]`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
    ) -> Result<NodeId, TensorError> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() || shape[0] == 0 {
            return Err(TensorError::Shape {
                op: "softmax_cross_entropy",
                shape,
                reason: format!("need [B x C] logits with B == {} labels", labels.len()),
            });
        }
        let (batch, classes) = (shape[0], shape[1]);
        for (position, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(TensorError::LabelOutOfRange {
                    position,
                    label,
                    classes,
                });
            }
        }
        let data = self.data(logits);
        let mut probs = vec![0.0; batch * classes];
        let mut loss = 0.0;
        for b in 0..batch {
            let row = &data[b * classes..(b + 1) * classes];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (c, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs[b * classes + c] = e;
                denom += e;
            }
            for p in &mut probs[b * classes..(b + 1) * classes] {
                *p /= denom;
            }
            loss -= (row[labels[b]] - max) - denom.ln();
        }
        loss /= batch as f64;
        let t = Tensor::scalar(loss);
        Ok(self.push_derived(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            t,
            &[logits],
        ))
    }

    /// Softmax probabilities of a `[B x C]` logits node, computed outside the
    /// graph (no backward through this path).
    pub fn softmax_rows(&self, logits: NodeId) -> Vec<Vec<f64>> {
        let shape = self.shape(logits);
        let classes = shape[shape.len() - 1];
        self.data(logits)
            .chunks_exact(classes)
            .map(|row| {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                let denom: f64 = exps.iter().sum();
                exps.iter().map(|e| e / denom).collect()
            })
            .collect()
    }

    /// Reverse pass from a scalar loss node. Fills gradient buffers on every
    /// node that requires grad and is reachable from `loss`.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        if !self.nodes[loss.0].out.is_scalar() {
            return Err(TensorError::NonScalarBackward {
                shape: self.shape(loss).to_vec(),
            });
        }
        for node in &mut self.nodes {
            node.out.clear_grad();
        }
        self.nodes[loss.0].out.grad_mut_or_init()[0] = 1.0;

        for i in (0..=loss.0).rev() {
            if self.nodes[i].out.grad().is_none() || !self.nodes[i].out.requires_grad() {
                continue;
            }
            // Take the node's grad out to satisfy the borrow checker while we
            // accumulate into its inputs.
            let grad = self.nodes[i].out.grad().unwrap().to_vec();
            self.dispatch_backward(i, &grad);
        }
        Ok(())
    }

    fn wants_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].out.requires_grad()
    }

    fn acc_into(&mut self, id: NodeId, delta: &[f64]) {
        let buf = self.nodes[id.0].out.grad_mut_or_init();
        for (g, d) in buf.iter_mut().zip(delta) {
            *g += d;
        }
    }

    fn dispatch_backward(&mut self, i: usize, grad: &[f64]) {
        // Ops are matched by moving small copies of the metadata out first,
        // so the mutable accumulation below does not alias node storage.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (a, b, m, k, n) = (*a, *b, *m, *k, *n);
                if self.wants_grad(a) {
                    let mut da = vec![0.0; m * k];
                    mat_mul_bt_acc(grad, self.data(b), m, n, k, &mut da);
                    self.acc_into(a, &da);
                }
                if self.wants_grad(b) {
                    let mut db = vec![0.0; k * n];
                    mat_mul_at_acc(self.data(a), grad, m, k, n, &mut db);
                    self.acc_into(b, &db);
                }
            }
            Op::Conv2d {
                input,
                kernels,
                dims,
            } => {
                let (input, kernels) = (*input, *kernels);
                let d = dims.clone();
                let ckk = d.in_c * d.kh * d.kw;
                let ohw = d.out_h * d.out_w;
                let img_len = d.in_c * d.in_h * d.in_w;
                let mut cols = vec![0.0; ckk * ohw];
                let want_input = self.wants_grad(input);
                let want_kernels = self.wants_grad(kernels);
                let mut d_input = if want_input {
                    vec![0.0; d.batch * img_len]
                } else {
                    Vec::new()
                };
                let mut d_kernels = if want_kernels {
                    vec![0.0; d.filters * ckk]
                } else {
                    Vec::new()
                };
                for b in 0..d.batch {
                    let g_b = &grad[b * d.filters * ohw..(b + 1) * d.filters * ohw];
                    if want_kernels {
                        im2col(
                            &self.data(input)[b * img_len..(b + 1) * img_len],
                            &d,
                            &mut cols,
                        );
                        // dK += dOut_b * cols^T
                        mat_mul_bt_acc(g_b, &cols, d.filters, ohw, ckk, &mut d_kernels);
                    }
                    if want_input {
                        // dCols = K^T * dOut_b, scattered back to the image.
                        let mut d_cols = vec![0.0; ckk * ohw];
                        mat_mul_at_acc(self.data(kernels), g_b, d.filters, ckk, ohw, &mut d_cols);
                        col2im_acc(&d_cols, &d, &mut d_input[b * img_len..(b + 1) * img_len]);
                    }
                }
                if want_input {
                    self.acc_into(input, &d_input);
                }
                if want_kernels {
                    self.acc_into(kernels, &d_kernels);
                }
            }
            Op::Relu { x } => {
                let x = *x;
                if self.wants_grad(x) {
                    let mask: Vec<f64> = self
                        .data(x)
                        .iter()
                        .zip(grad)
                        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                        .collect();
                    self.acc_into(x, &mask);
                }
            }
            Op::MaxPool2d { x, argmax } => {
                let x = *x;
                let argmax = argmax.clone();
                if self.wants_grad(x) {
                    let mut dx = vec![0.0; self.data(x).len()];
                    for (o, &src) in argmax.iter().enumerate() {
                        dx[src] += grad[o];
                    }
                    self.acc_into(x, &dx);
                }
            }
            Op::Reshape { x } => {
                let x = *x;
                if self.wants_grad(x) {
                    self.acc_into(x, grad);
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                if self.wants_grad(a) {
                    self.acc_into(a, grad);
                }
                if self.wants_grad(b) {
                    self.acc_into(b, grad);
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                if self.wants_grad(a) {
                    let da: Vec<f64> = grad.iter().zip(self.data(b)).map(|(g, v)| g * v).collect();
                    self.acc_into(a, &da);
                }
                if self.wants_grad(b) {
                    let db: Vec<f64> = grad.iter().zip(self.data(a)).map(|(g, v)| g * v).collect();
                    self.acc_into(b, &db);
                }
            }
            Op::Sum { x } => {
                let x = *x;
                if self.wants_grad(x) {
                    let dx = vec![grad[0]; self.data(x).len()];
                    self.acc_into(x, &dx);
                }
            }
            Op::Select { x, index } => {
                let (x, index) = (*x, *index);
                if self.wants_grad(x) {
                    let mut dx = vec![0.0; self.data(x).len()];
                    dx[index] = grad[0];
                    self.acc_into(x, &dx);
                }
            }
            Op::AddRowBias {
                x,
                bias,
                rows,
                cols,
            } => {
                let (x, bias, rows, cols) = (*x, *bias, *rows, *cols);
                if self.wants_grad(x) {
                    self.acc_into(x, grad);
                }
                if self.wants_grad(bias) {
                    let mut db = vec![0.0; cols];
                    for r in 0..rows {
                        for (d, g) in db.iter_mut().zip(&grad[r * cols..(r + 1) * cols]) {
                            *d += g;
                        }
                    }
                    self.acc_into(bias, &db);
                }
            }
            Op::AddChannelBias {
                x,
                bias,
                channels,
                spatial,
            } => {
                let (x, bias, channels, spatial) = (*x, *bias, *channels, *spatial);
                if self.wants_grad(x) {
                    self.acc_into(x, grad);
                }
                if self.wants_grad(bias) {
                    let mut db = vec![0.0; channels];
                    for chunk in grad.chunks_exact(channels * spatial) {
                        for (c, d) in db.iter_mut().enumerate() {
                            *d += chunk[c * spatial..(c + 1) * spatial].iter().sum::<f64>();
                        }
                    }
                    self.acc_into(bias, &db);
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let logits = *logits;
                if self.wants_grad(logits) {
                    let batch = labels.len();
                    let classes = probs.len() / batch;
                    let scale = grad[0] / batch as f64;
                    let mut dl = probs.clone();
                    for (b, &label) in labels.iter().enumerate() {
                        dl[b * classes + label] -= 1.0;
                    }
                    for v in &mut dl {
                        *v *= scale;
                    }
                    self.acc_into(logits, &dl);
                }
            }
        }
    }
}
