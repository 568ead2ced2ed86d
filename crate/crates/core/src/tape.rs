//! Recorded forward operations with reverse-mode gradient propagation.
//!
//! A [`Tape`] owns one computation: leaves go in, operations append nodes,
//! and [`Tape::backward`] walks the record in reverse to fill gradient
//! buffers. Tapes are plain values, so independent computations can run on
//! separate threads without shared state.

use crate::error::{Error, Result};
use crate::tensor::{channel_axis_of, sigmoid, SpikeBackward, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, f64),
    AddScalar(TensorId),
    /// Broadcast a per-channel vector additively over the channel axis.
    AddChannel(TensorId, TensorId),
    /// Broadcast a per-channel vector multiplicatively over the channel axis.
    MulChannel(TensorId, TensorId),
    Sigmoid(TensorId),
    Spike(TensorId, SpikeBackward),
    Linear {
        x: TensorId,
        w: TensorId,
        b: TensorId,
    },
    Conv2d {
        x: TensorId,
        k: TensorId,
        stride: usize,
        pad: usize,
    },
    AvgPool2(TensorId),
    Sum(TensorId),
    Mean(TensorId),
    Reshape(TensorId),
    /// Select index `t` along the leading axis.
    StepSlice {
        x: TensorId,
        index: usize,
    },
    /// Concatenate equal-shaped inputs along a new leading axis.
    Stack(Vec<TensorId>),
    SoftmaxCrossEntropy {
        logits: TensorId,
        labels: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    values: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Loop geometry of one convolution: for a kernel offset, the valid output
/// rows and the output-column range whose input columns stay in bounds.
#[derive(Clone, Copy)]
struct ConvGeom {
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    /// Calls `f(oi, xi, oj_lo, oj_hi, xj_lo)` for every valid output row;
    /// output columns `oj_lo..oj_hi` read input columns starting at `xj_lo`
    /// with step `stride`, all guaranteed in bounds.
    #[inline]
    fn for_each_row<F: FnMut(usize, usize, usize, usize, usize)>(&self, di: usize, dj: usize, mut f: F) {
        let stride = self.stride as isize;
        let pad = self.pad as isize;
        // oj * stride + dj - pad in [0, w) <=> oj in [ceil((pad-dj)/s), ceil((w+pad-dj)/s)).
        let lo_num = pad - dj as isize;
        let oj_lo = lo_num.div_euclid(stride) + if lo_num.rem_euclid(stride) != 0 { 1 } else { 0 };
        let hi_num = self.w as isize + pad - dj as isize;
        let oj_hi = hi_num.div_euclid(stride) + if hi_num.rem_euclid(stride) != 0 { 1 } else { 0 };
        let oj_lo = oj_lo.clamp(0, self.ow as isize) as usize;
        let oj_hi = oj_hi.clamp(0, self.ow as isize) as usize;
        if oj_lo >= oj_hi {
            return;
        }
        let xj_lo = oj_lo * self.stride + dj - self.pad;
        for oi in 0..self.oh {
            let xi = (oi * self.stride + di) as isize - pad;
            if xi < 0 || xi >= self.h as isize {
                continue;
            }
            f(oi, xi as usize, oj_lo, oj_hi, xj_lo);
        }
    }
}

/// Records a computation over dense tensors and differentiates it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Register an input tensor. Its `requires_grad` flag decides whether
    /// `backward` fills a gradient for it.
    pub fn leaf(&mut self, tensor: &Tensor) -> TensorId {
        self.push(
            tensor.values().to_vec(),
            tensor.shape().to_vec(),
            Op::Leaf,
            tensor.requires_grad(),
        )
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Materialize a node as a standalone [`Tensor`] (gradient included).
    pub fn tensor(&self, id: TensorId) -> Tensor {
        let node = &self.nodes[id.0];
        let mut t = Tensor::new(node.shape.clone(), node.values.clone()).expect("node is valid");
        if node.requires_grad {
            t = t.with_grad();
        }
        t.set_grad(node.grad.clone());
        t
    }

    fn push(&mut self, values: Vec<f64>, shape: Vec<usize>, op: Op, requires_grad: bool) -> TensorId {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            values,
            shape,
            op,
            requires_grad,
            grad: None,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn needs_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn same_shape(&self, a: TensorId, b: TensorId, what: &str) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "add")?;
        let values = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(values, shape, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "sub")?;
        let values = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(values, shape, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "mul")?;
        let values = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(values, shape, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: TensorId, k: f64) -> TensorId {
        let values = self.nodes[a.0].values.iter().map(|x| x * k).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.needs_grad(&[a]);
        self.push(values, shape, Op::Scale(a, k), rg)
    }

    pub fn add_scalar(&mut self, a: TensorId, k: f64) -> TensorId {
        let values = self.nodes[a.0].values.iter().map(|x| x + k).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.needs_grad(&[a]);
        self.push(values, shape, Op::AddScalar(a), rg)
    }

    fn channel_layout(&self, x: TensorId, c: TensorId, what: &str) -> Result<(usize, usize, usize)> {
        let xs = &self.nodes[x.0].shape;
        let cs = &self.nodes[c.0].shape;
        let axis = channel_axis_of(xs);
        let channels = xs[axis];
        if cs.len() != 1 || cs[0] != channels {
            return Err(Error::Dimension(format!(
                "{what}: per-channel vector {cs:?} does not match channel axis {axis} of {xs:?}"
            )));
        }
        let inner: usize = xs[axis + 1..].iter().product();
        let outer: usize = xs[..axis].iter().product();
        Ok((outer, channels, inner))
    }

    /// `x + c[channel]`, broadcast over the channel axis of `x`.
    pub fn add_channel(&mut self, x: TensorId, c: TensorId) -> Result<TensorId> {
        let (outer, channels, inner) = self.channel_layout(x, c, "add_channel")?;
        let mut values = self.nodes[x.0].values.clone();
        let cv = &self.nodes[c.0].values;
        for o in 0..outer {
            for ch in 0..channels {
                let base = (o * channels + ch) * inner;
                let add = cv[ch];
                for v in &mut values[base..base + inner] {
                    *v += add;
                }
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.needs_grad(&[x, c]);
        Ok(self.push(values, shape, Op::AddChannel(x, c), rg))
    }

    /// `x * c[channel]`, broadcast over the channel axis of `x`.
    pub fn mul_channel(&mut self, x: TensorId, c: TensorId) -> Result<TensorId> {
        let (outer, channels, inner) = self.channel_layout(x, c, "mul_channel")?;
        let mut values = self.nodes[x.0].values.clone();
        let cv = &self.nodes[c.0].values;
        for o in 0..outer {
            for ch in 0..channels {
                let base = (o * channels + ch) * inner;
                let m = cv[ch];
                for v in &mut values[base..base + inner] {
                    *v *= m;
                }
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.needs_grad(&[x, c]);
        Ok(self.push(values, shape, Op::MulChannel(x, c), rg))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let values = self.nodes[a.0].values.iter().map(|&x| sigmoid(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.needs_grad(&[a]);
        self.push(values, shape, Op::Sigmoid(a), rg)
    }

    /// Elementwise spike nonlinearity.
    ///
    /// `ExactZero` and `Surrogate` emit the Heaviside step with ties firing;
    /// `Relaxed` emits `sigmoid(alpha * u)` so the whole path stays smooth.
    pub fn spike(&mut self, u: TensorId, bw: SpikeBackward) -> Result<TensorId> {
        bw.validate()?;
        let values: Vec<f64> = match bw {
            SpikeBackward::Relaxed { alpha } => self.nodes[u.0]
                .values
                .iter()
                .map(|&x| sigmoid(alpha * x))
                .collect(),
            _ => self.nodes[u.0]
                .values
                .iter()
                .map(|&x| if x >= 0.0 { 1.0 } else { 0.0 })
                .collect(),
        };
        let shape = self.nodes[u.0].shape.clone();
        let rg = self.needs_grad(&[u]);
        Ok(self.push(values, shape, Op::Spike(u, bw), rg))
    }

    /// `out[i, j] = sum_k x[i, k] * w[j, k] + b[j]`.
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let (xs, ws, bs) = (
            &self.nodes[x.0].shape,
            &self.nodes[w.0].shape,
            &self.nodes[b.0].shape,
        );
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[1] || ws[0] != bs[0] {
            return Err(Error::Dimension(format!(
                "linear: incompatible shapes x{xs:?} w{ws:?} b{bs:?}"
            )));
        }
        let (batch, n, m) = (xs[0], xs[1], ws[0]);
        let mut values = vec![0.0; batch * m];
        let xv = &self.nodes[x.0].values;
        let wv = &self.nodes[w.0].values;
        let bv = &self.nodes[b.0].values;
        for i in 0..batch {
            let xrow = &xv[i * n..(i + 1) * n];
            let orow = &mut values[i * m..(i + 1) * m];
            for (j, out) in orow.iter_mut().enumerate() {
                let wrow = &wv[j * n..(j + 1) * n];
                let mut acc = 0.0;
                for k in 0..n {
                    acc += xrow[k] * wrow[k];
                }
                *out = acc + bv[j];
            }
        }
        let rg = self.needs_grad(&[x, w, b]);
        Ok(self.push(values, vec![batch, m], Op::Linear { x, w, b }, rg))
    }

    /// 2-D cross-correlation with zero padding.
    pub fn conv2d(&mut self, x: TensorId, k: TensorId, stride: usize, pad: usize) -> Result<TensorId> {
        let (xs, ks) = (&self.nodes[x.0].shape, &self.nodes[k.0].shape);
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::Dimension(format!(
                "conv2d: expected 4-d input and kernel, got x{xs:?} k{ks:?}"
            )));
        }
        let (batch, chans, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (out_c, k_c, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if k_c != chans {
            return Err(Error::Dimension(format!(
                "conv2d: kernel channels {k_c} != input channels {chans}"
            )));
        }
        if stride < 1 {
            return Err(Error::Dimension("conv2d: stride must be >= 1".into()));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::Dimension(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        if (h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0 {
            return Err(Error::Dimension(format!(
                "conv2d: non-integral output size for input {h}x{w}, kernel {kh}x{kw}, stride {stride}, pad {pad}"
            )));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;

        let mut values = vec![0.0; batch * out_c * oh * ow];
        let xv = &self.nodes[x.0].values;
        let kv = &self.nodes[k.0].values;
        let geom = ConvGeom { h, w, oh, ow, stride, pad };
        for b in 0..batch {
            for oc in 0..out_c {
                let obase = (b * out_c + oc) * oh * ow;
                for ic in 0..chans {
                    let xbase = (b * chans + ic) * h * w;
                    let kbase = (oc * chans + ic) * kh * kw;
                    for di in 0..kh {
                        for dj in 0..kw {
                            let kval = kv[kbase + di * kw + dj];
                            if kval == 0.0 {
                                continue;
                            }
                            geom.for_each_row(di, dj, |oi, xi, oj_lo, oj_hi, xj_lo| {
                                let orow = obase + oi * ow;
                                let xrow = xbase + xi * w;
                                if stride == 1 {
                                    let out = &mut values[orow + oj_lo..orow + oj_hi];
                                    let inp = &xv[xrow + xj_lo..xrow + xj_lo + (oj_hi - oj_lo)];
                                    for (o, &v) in out.iter_mut().zip(inp) {
                                        *o += kval * v;
                                    }
                                } else {
                                    for oj in oj_lo..oj_hi {
                                        let xj = xj_lo + (oj - oj_lo) * stride;
                                        values[orow + oj] += kval * xv[xrow + xj];
                                    }
                                }
                            });
                        }
                    }
                }
            }
        }
        let rg = self.needs_grad(&[x, k]);
        Ok(self.push(
            values,
            vec![batch, out_c, oh, ow],
            Op::Conv2d { x, k, stride, pad },
            rg,
        ))
    }

    /// 2x2 average pooling with stride 2; trailing odd rows/columns are dropped.
    pub fn avg_pool2(&mut self, x: TensorId) -> Result<TensorId> {
        let xs = &self.nodes[x.0].shape;
        if xs.len() != 4 {
            return Err(Error::Dimension(format!(
                "avg_pool2: expected 4-d input, got {xs:?}"
            )));
        }
        let (batch, chans, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::Dimension(format!(
                "avg_pool2: input {h}x{w} too small"
            )));
        }
        let mut values = vec![0.0; batch * chans * oh * ow];
        let xv = &self.nodes[x.0].values;
        for bc in 0..batch * chans {
            let xbase = bc * h * w;
            let obase = bc * oh * ow;
            for oi in 0..oh {
                let r0 = xbase + (2 * oi) * w;
                let r1 = r0 + w;
                for oj in 0..ow {
                    let c = 2 * oj;
                    values[obase + oi * ow + oj] =
                        0.25 * (xv[r0 + c] + xv[r0 + c + 1] + xv[r1 + c] + xv[r1 + c + 1]);
                }
            }
        }
        let rg = self.needs_grad(&[x]);
        Ok(self.push(values, vec![batch, chans, oh, ow], Op::AvgPool2(x), rg))
    }

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let total: f64 = self.nodes[a.0].values.iter().sum();
        let rg = self.needs_grad(&[a]);
        self.push(vec![total], vec![1], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let n = self.nodes[a.0].values.len() as f64;
        let total: f64 = self.nodes[a.0].values.iter().sum();
        let rg = self.needs_grad(&[a]);
        self.push(vec![total / n], vec![1], Op::Mean(a), rg)
    }

    pub fn reshape(&mut self, a: TensorId, shape: impl Into<Vec<usize>>) -> Result<TensorId> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != self.nodes[a.0].values.len() {
            return Err(Error::Dimension(format!(
                "reshape: {:?} -> {shape:?} changes element count",
                self.nodes[a.0].shape
            )));
        }
        let values = self.nodes[a.0].values.clone();
        let rg = self.needs_grad(&[a]);
        Ok(self.push(values, shape, Op::Reshape(a), rg))
    }

    /// Select index `t` along the leading axis of a stacked tensor.
    pub fn step_slice(&mut self, x: TensorId, t: usize) -> Result<TensorId> {
        let xs = &self.nodes[x.0].shape;
        if xs.is_empty() || t >= xs[0] {
            return Err(Error::Dimension(format!(
                "step_slice: index {t} out of range for shape {xs:?}"
            )));
        }
        let rest: usize = xs[1..].iter().product();
        let shape = if xs.len() == 1 {
            vec![1]
        } else {
            xs[1..].to_vec()
        };
        let values = self.nodes[x.0].values[t * rest..(t + 1) * rest].to_vec();
        let rg = self.needs_grad(&[x]);
        Ok(self.push(values, shape, Op::StepSlice { x, index: t }, rg))
    }

    /// Stack equal-shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Contract("stack: no inputs".into()));
        }
        for &p in &parts[1..] {
            self.same_shape(parts[0], p, "stack")?;
        }
        let each = self.nodes[parts[0].0].values.len();
        let mut values = Vec::with_capacity(each * parts.len());
        for &p in parts {
            values.extend_from_slice(&self.nodes[p.0].values);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&self.nodes[parts[0].0].shape);
        let rg = self.needs_grad(parts);
        Ok(self.push(values, shape, Op::Stack(parts.to_vec()), rg))
    }

    /// Mean softmax cross-entropy over a batch of logits.
    pub fn softmax_cross_entropy(&mut self, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        let ls = &self.nodes[logits.0].shape;
        if ls.len() != 2 || ls[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "softmax_cross_entropy: logits {ls:?} vs {} labels",
                labels.len()
            )));
        }
        let classes = ls[1];
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Contract(format!(
                "softmax_cross_entropy: label {bad} out of range for {classes} classes"
            )));
        }
        let lv = &self.nodes[logits.0].values;
        let batch = ls[0];
        let mut loss = 0.0;
        for i in 0..batch {
            let row = &lv[i * classes..(i + 1) * classes];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let logsum = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
            loss += logsum - row[labels[i]];
        }
        loss /= batch as f64;
        let rg = self.needs_grad(&[logits]);
        Ok(self.push(
            vec![loss],
            vec![1],
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    fn grad_buf(&mut self, id: TensorId) -> &mut Vec<f64> {
        let numel = self.nodes[id.0].values.len();
        self.nodes[id.0].grad.get_or_insert_with(|| vec![0.0; numel])
    }

    /// Populate gradients of `loss` with respect to every grad-requiring
    /// node at or below it. Leaves registered with `requires_grad` always
    /// end up with a buffer, zero-filled when no gradient reaches them.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        self.grad_buf(loss)[0] = 1.0;

        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let go = self.nodes[i].grad.clone().expect("checked above");
            self.apply_backward(i, &op, &go);
        }

        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf)
                && self.nodes[i].requires_grad
                && self.nodes[i].grad.is_none()
            {
                self.grad_buf(TensorId(i));
            }
        }
        Ok(())
    }

    fn apply_backward(&mut self, node: usize, op: &Op, go: &[f64]) {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(a, |ga| {
                    for (g, &u) in ga.iter_mut().zip(go) {
                        *g += u;
                    }
                });
                self.accumulate(b, |gb| {
                    for (g, &u) in gb.iter_mut().zip(go) {
                        *g += u;
                    }
                });
            }
            Op::Sub(a, b) => {
                self.accumulate(a, |ga| {
                    for (g, &u) in ga.iter_mut().zip(go) {
                        *g += u;
                    }
                });
                self.accumulate(b, |gb| {
                    for (g, &u) in gb.iter_mut().zip(go) {
                        *g -= u;
                    }
                });
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    let bv = self.nodes[b.0].values.clone();
                    self.accumulate(a, |ga| {
                        for ((g, &u), &v) in ga.iter_mut().zip(go).zip(&bv) {
                            *g += u * v;
                        }
                    });
                }
                if self.nodes[b.0].requires_grad {
                    let av = self.nodes[a.0].values.clone();
                    self.accumulate(b, |gb| {
                        for ((g, &u), &v) in gb.iter_mut().zip(go).zip(&av) {
                            *g += u * v;
                        }
                    });
                }
            }
            Op::Scale(a, k) => {
                self.accumulate(a, |ga| {
                    for (g, &u) in ga.iter_mut().zip(go) {
                        *g += u * k;
                    }
                });
            }
            Op::AddScalar(a) => {
                self.accumulate(a, |ga| {
                    for (g, &u) in ga.iter_mut().zip(go) {
                        *g += u;
                    }
                });
            }
            Op::AddChannel(x, c) => {
                let (outer, channels, inner) =
                    self.channel_layout(x, c, "add_channel").expect("validated at record time");
                self.accumulate(x, |gx| {
                    for (g, &u) in gx.iter_mut().zip(go) {
                        *g += u;
                    }
                });
                if self.nodes[c.0].requires_grad {
                    self.accumulate(c, |gc| {
                        for o in 0..outer {
                            for ch in 0..channels {
                                let base = (o * channels + ch) * inner;
                                let mut acc = 0.0;
                                for &u in &go[base..base + inner] {
                                    acc += u;
                                }
                                gc[ch] += acc;
                            }
                        }
                    });
                }
            }
            Op::MulChannel(x, c) => {
                let (outer, channels, inner) =
                    self.channel_layout(x, c, "mul_channel").expect("validated at record time");
                if self.nodes[x.0].requires_grad {
                    let cv = self.nodes[c.0].values.clone();
                    self.accumulate(x, |gx| {
                        for o in 0..outer {
                            for ch in 0..channels {
                                let base = (o * channels + ch) * inner;
                                let m = cv[ch];
                                for (g, &u) in gx[base..base + inner].iter_mut().zip(&go[base..base + inner]) {
                                    *g += u * m;
                                }
                            }
                        }
                    });
                }
                if self.nodes[c.0].requires_grad {
                    let xv = self.nodes[x.0].values.clone();
                    self.accumulate(c, |gc| {
                        for o in 0..outer {
                            for ch in 0..channels {
                                let base = (o * channels + ch) * inner;
                                let mut acc = 0.0;
                                for (&u, &v) in go[base..base + inner].iter().zip(&xv[base..base + inner]) {
                                    acc += u * v;
                                }
                                gc[ch] += acc;
                            }
                        }
                    });
                }
            }
            Op::Sigmoid(a) => {
                let out = self.nodes[node].values.clone();
                self.accumulate(a, |ga| {
                    for ((g, &u), &s) in ga.iter_mut().zip(go).zip(&out) {
                        *g += u * s * (1.0 - s);
                    }
                });
            }
            Op::Spike(u, bw) => match bw {
                SpikeBackward::ExactZero => {
                    // Gradient blockage: the step's derivative is zero, so
                    // nothing flows upstream, but the buffer still exists.
                    self.accumulate(u, |_| {});
                }
                SpikeBackward::Surrogate { alpha } | SpikeBackward::Relaxed { alpha } => {
                    let uv = self.nodes[u.0].values.clone();
                    self.accumulate(u, |gu| {
                        for ((g, &up), &x) in gu.iter_mut().zip(go).zip(&uv) {
                            let s = sigmoid(alpha * x);
                            *g += up * alpha * s * (1.0 - s);
                        }
                    });
                }
            },
            Op::Linear { x, w, b } => {
                let (batch, n) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                let m = self.nodes[w.0].shape[0];
                if self.nodes[x.0].requires_grad {
                    let wv = self.nodes[w.0].values.clone();
                    self.accumulate(x, |gx| {
                        for i in 0..batch {
                            for j in 0..m {
                                let u = go[i * m + j];
                                if u == 0.0 {
                                    continue;
                                }
                                let wrow = &wv[j * n..(j + 1) * n];
                                let grow = &mut gx[i * n..(i + 1) * n];
                                for k in 0..n {
                                    grow[k] += u * wrow[k];
                                }
                            }
                        }
                    });
                }
                if self.nodes[w.0].requires_grad {
                    let xv = self.nodes[x.0].values.clone();
                    self.accumulate(w, |gw| {
                        for i in 0..batch {
                            let xrow = &xv[i * n..(i + 1) * n];
                            for j in 0..m {
                                let u = go[i * m + j];
                                if u == 0.0 {
                                    continue;
                                }
                                let grow = &mut gw[j * n..(j + 1) * n];
                                for k in 0..n {
                                    grow[k] += u * xrow[k];
                                }
                            }
                        }
                    });
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(b, |gb| {
                        for i in 0..batch {
                            for j in 0..m {
                                gb[j] += go[i * m + j];
                            }
                        }
                    });
                }
            }
            Op::Conv2d { x, k, stride, pad } => {
                self.conv2d_backward(node, x, k, stride, pad, go);
            }
            Op::AvgPool2(x) => {
                let xs = &self.nodes[x.0].shape;
                let (h, w) = (xs[2], xs[3]);
                let (oh, ow) = (h / 2, w / 2);
                let planes = xs[0] * xs[1];
                self.accumulate(x, |gx| {
                    for bc in 0..planes {
                        let xbase = bc * h * w;
                        let obase = bc * oh * ow;
                        for oi in 0..oh {
                            let r0 = xbase + (2 * oi) * w;
                            let r1 = r0 + w;
                            for oj in 0..ow {
                                let u = 0.25 * go[obase + oi * ow + oj];
                                let c = 2 * oj;
                                gx[r0 + c] += u;
                                gx[r0 + c + 1] += u;
                                gx[r1 + c] += u;
                                gx[r1 + c + 1] += u;
                            }
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let u = go[0];
                self.accumulate(a, |ga| {
                    for g in ga.iter_mut() {
                        *g += u;
                    }
                });
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].values.len() as f64;
                let u = go[0] / n;
                self.accumulate(a, |ga| {
                    for g in ga.iter_mut() {
                        *g += u;
                    }
                });
            }
            Op::Reshape(a) => {
                self.accumulate(a, |ga| {
                    for (g, &u) in ga.iter_mut().zip(go) {
                        *g += u;
                    }
                });
            }
            Op::StepSlice { x, index } => {
                let rest = go.len();
                self.accumulate(x, |gx| {
                    for (g, &u) in gx[index * rest..(index + 1) * rest].iter_mut().zip(go) {
                        *g += u;
                    }
                });
            }
            Op::Stack(ref parts) => {
                let each = if parts.is_empty() {
                    0
                } else {
                    self.nodes[parts[0].0].values.len()
                };
                for (slot, &p) in parts.iter().enumerate() {
                    let seg = &go[slot * each..(slot + 1) * each];
                    self.accumulate(p, |gp| {
                        for (g, &u) in gp.iter_mut().zip(seg) {
                            *g += u;
                        }
                    });
                }
            }
            Op::SoftmaxCrossEntropy { logits, ref labels } => {
                let classes = self.nodes[logits.0].shape[1];
                let batch = labels.len();
                let lv = self.nodes[logits.0].values.clone();
                let u = go[0] / batch as f64;
                let labels = labels.clone();
                self.accumulate(logits, |gl| {
                    for i in 0..batch {
                        let row = &lv[i * classes..(i + 1) * classes];
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                        let grow = &mut gl[i * classes..(i + 1) * classes];
                        for kk in 0..classes {
                            let p = (row[kk] - max).exp() / denom;
                            let target = if labels[i] == kk { 1.0 } else { 0.0 };
                            grow[kk] += u * (p - target);
                        }
                    }
                });
            }
        }
    }

    fn conv2d_backward(&mut self, node: usize, x: TensorId, k: TensorId, stride: usize, pad: usize, go: &[f64]) {
        let xs = self.nodes[x.0].shape.clone();
        let os = self.nodes[node].shape.clone();
        let ks = self.nodes[k.0].shape.clone();
        let (batch, chans, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (out_c, oh, ow) = (os[1], os[2], os[3]);
        let (kh, kw) = (ks[2], ks[3]);

        if self.nodes[x.0].requires_grad {
            let kv = self.nodes[k.0].values.clone();
            let geom = ConvGeom { h, w, oh, ow, stride, pad };
            self.accumulate(x, |gx| {
                for b in 0..batch {
                    for oc in 0..out_c {
                        let obase = (b * out_c + oc) * oh * ow;
                        for ic in 0..chans {
                            let xbase = (b * chans + ic) * h * w;
                            let kbase = (oc * chans + ic) * kh * kw;
                            for di in 0..kh {
                                for dj in 0..kw {
                                    let kval = kv[kbase + di * kw + dj];
                                    if kval == 0.0 {
                                        continue;
                                    }
                                    geom.for_each_row(di, dj, |oi, xi, oj_lo, oj_hi, xj_lo| {
                                        let orow = obase + oi * ow;
                                        let xrow = xbase + xi * w;
                                        if stride == 1 {
                                            let gxs = &mut gx[xrow + xj_lo..xrow + xj_lo + (oj_hi - oj_lo)];
                                            let gos = &go[orow + oj_lo..orow + oj_hi];
                                            for (g, &u) in gxs.iter_mut().zip(gos) {
                                                *g += kval * u;
                                            }
                                        } else {
                                            for oj in oj_lo..oj_hi {
                                                let xj = xj_lo + (oj - oj_lo) * stride;
                                                gx[xrow + xj] += kval * go[orow + oj];
                                            }
                                        }
                                    });
                                }
                            }
                        }
                    }
                }
            });
        }

        if self.nodes[k.0].requires_grad {
            let xv = self.nodes[x.0].values.clone();
            let geom = ConvGeom { h, w, oh, ow, stride, pad };
            self.accumulate(k, |gk| {
                for b in 0..batch {
                    for oc in 0..out_c {
                        let obase = (b * out_c + oc) * oh * ow;
                        for ic in 0..chans {
                            let xbase = (b * chans + ic) * h * w;
                            let kbase = (oc * chans + ic) * kh * kw;
                            for di in 0..kh {
                                for dj in 0..kw {
                                    let mut acc = 0.0;
                                    geom.for_each_row(di, dj, |oi, xi, oj_lo, oj_hi, xj_lo| {
                                        let orow = obase + oi * ow;
                                        let xrow = xbase + xi * w;
                                        if stride == 1 {
                                            let gos = &go[orow + oj_lo..orow + oj_hi];
                                            let xs = &xv[xrow + xj_lo..xrow + xj_lo + (oj_hi - oj_lo)];
                                            let mut dot = 0.0;
                                            for (&u, &v) in gos.iter().zip(xs) {
                                                dot += u * v;
                                            }
                                            acc += dot;
                                        } else {
                                            for oj in oj_lo..oj_hi {
                                                let xj = xj_lo + (oj - oj_lo) * stride;
                                                acc += go[orow + oj] * xv[xrow + xj];
                                            }
                                        }
                                    });
                                    gk[kbase + di * kw + dj] += acc;
                                }
                            }
                        }
                    }
                }
            });
        }
    }

    /// Run `f` against the gradient buffer of `id` if that node wants one.
    fn accumulate<F: FnOnce(&mut [f64])>(&mut self, id: TensorId, f: F) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        f(self.grad_buf(id));
    }
}

/// Evaluate a recorded scalar function once, without gradients.
pub fn eval_scalar<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
{
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = params
        .iter()
        .map(|p| {
            let frozen = Tensor::new(p.shape().to_vec(), p.values().to_vec()).expect("valid");
            tape.leaf(&frozen)
        })
        .collect();
    let loss = f(&mut tape, &ids)?;
    tape.tensor(loss).item()
}

/// Compare analytic gradients of a recorded scalar function against central
/// finite differences; returns the max relative error over all parameters.
///
/// The function must be smooth along the recorded path (spike ops in
/// `Relaxed` mode only) and `eps` must lie in `[1e-6, 1e-3]`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!(
            "grad_check: eps {eps} outside [1e-6, 1e-3]"
        )));
    }

    let mut tape = Tape::new();
    let ids: Vec<TensorId> = params
        .iter()
        .map(|p| tape.leaf(&p.clone().with_grad()))
        .collect();
    let loss = f(&mut tape, &ids)?;
    let loss_value = tape.tensor(loss).item()?;
    if !loss_value.is_finite() {
        return Err(Error::Numeric(format!(
            "grad_check: non-finite loss {loss_value}"
        )));
    }
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).expect("leaf requires grad").to_vec())
        .collect();

    let mut worst: f64 = 0.0;
    let mut probe = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for ci in 0..param.numel() {
            let original = param.values()[ci];

            probe[pi].values_mut()[ci] = original + eps;
            let plus = eval_scalar(&f, &probe)?;
            probe[pi].values_mut()[ci] = original - eps;
            let minus = eval_scalar(&f, &probe)?;
            probe[pi].values_mut()[ci] = original;

            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(
                    "grad_check: non-finite finite-difference probe".into(),
                ));
            }
            let fd = (plus - minus) / (2.0 * eps);
            let a = analytic[pi][ci];
            let rel = (a - fd).abs() / (a.abs() + fd.abs() + 1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
