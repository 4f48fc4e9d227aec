use super::conv::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Handle to a node on a [`Graph`]. Only meaningful for the graph that
/// issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates.
    Eval,
}

/// Per-channel running mean and variance carried outside the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Concat { a: Var, b: Var, axis: usize },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    Conv2d { x: Var, k: Var, geom: ConvGeom },
    ConvTransposed { x: Var, k: Var, geom: ConvGeom },
    BatchNorm(Box<BatchNormSaved>),
}

#[derive(Debug)]
struct BatchNormSaved {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mode: BatchNormMode,
    channels: usize,
    spatial: usize,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only tape of tensor operations.
///
/// Nodes are recorded in evaluation order, so the append order is already a
/// topological order and [`Graph::backward`] simply walks it in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
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

    /// A leaf that accumulates gradients.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass, if `v` took part in it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Drop every stored gradient, leaves included.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Forget every node. Outstanding [`Var`]s become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).map(f);
        let rg = self.any_grad(&[x]);
        self.push(value, op, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::from_vec(vec![m, n], out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Add `bias[c]` along axis 1 of a `[b, c]` or `[b, c, h, w]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if !(sx.len() == 2 || sx.len() == 4) || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::dim("add_bias", sx, sb));
        }
        let (c, inner) = (sx[1], sx[2..].iter().product::<usize>());
        let bv = self.value(bias).data().to_vec();
        let mut value = self.value(x).clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += bv[(i / inner) % c];
        }
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, Op::Affine(x, scale), |v| scale * v + shift)
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    /// Rectifier; the derivative at exactly zero is taken as zero.
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), f64::ln)
    }

    /// Clamp to `[lo, hi]`; clamped elements pass no gradient.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let compatible = sa.len() == sb.len()
            && axis < sa.len()
            && sa.iter().zip(&sb).enumerate().all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(Error::dim("concat", &sa, &sb));
        }
        let outer: usize = sa[..axis].iter().product();
        let ca: usize = sa[axis..].iter().product();
        let cb: usize = sb[axis..].iter().product();
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(da.len() + db.len());
        for o in 0..outer {
            data.extend_from_slice(&da[o * ca..(o + 1) * ca]);
            data.extend_from_slice(&db[o * cb..(o + 1) * cb]);
        }
        let mut shape = sa.clone();
        shape[axis] += sb[axis];
        let value = Tensor::from_vec(shape, data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Concat { a, b, axis }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean());
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Mean(x), rg)
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let ss: f64 = da.iter().zip(db).map(|(x, y)| (x - y) * (x - y)).sum();
        let value = Tensor::scalar(ss / da.len() as f64);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mse(a, b), rg))
    }

    fn conv_geom(
        &self,
        op: &'static str,
        x: Var,
        k: Var,
        transposed: bool,
        stride: usize,
        pad: usize,
    ) -> Result<ConvGeom> {
        let (sx, sk) = (self.shape(x), self.shape(k));
        // Transposed kernels are laid out [c_in_t, c_out_t, kh, kw], i.e. the
        // forward kernel of the conv whose input adjoint they compute.
        let channel_ok = if transposed {
            sx.get(1) == sk.first()
        } else {
            sx.get(1) == sk.get(1)
        };
        if sx.len() != 4 || sk.len() != 4 || !channel_ok {
            return Err(Error::dim(op, sx, sk));
        }
        let (kh, kw) = (sk[2], sk[3]);
        if transposed {
            let h = super::conv2d_transposed_output_extent(sx[2], kh, stride, pad)?;
            let w = super::conv2d_transposed_output_extent(sx[3], kw, stride, pad)?;
            // The forward conv must map (h, w) back onto x's extents exactly.
            if super::conv2d_output_extent(h, kh, stride, pad)? != sx[2]
                || super::conv2d_output_extent(w, kw, stride, pad)? != sx[3]
            {
                return Err(Error::Config(format!("{op}: extents are not invertible")));
            }
            Ok(ConvGeom {
                batch: sx[0],
                c_in: sk[1],
                c_out: sk[0],
                h,
                w,
                kh,
                kw,
                oh: sx[2],
                ow: sx[3],
                stride,
                pad,
            })
        } else {
            Ok(ConvGeom {
                batch: sx[0],
                c_in: sx[1],
                c_out: sk[0],
                h: sx[2],
                w: sx[3],
                kh,
                kw,
                oh: super::conv2d_output_extent(sx[2], kh, stride, pad)?,
                ow: super::conv2d_output_extent(sx[3], kw, stride, pad)?,
                stride,
                pad,
            })
        }
    }

    /// Strided cross-correlation of `x[b, c_in, h, w]` with `k[c_out, c_in, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = self.conv_geom("conv2d", x, k, false, stride, pad)?;
        let out = conv::forward(self.value(x).data(), self.value(k).data(), &geom);
        let value = Tensor::from_vec(vec![geom.batch, geom.c_out, geom.oh, geom.ow], out)?;
        let rg = self.any_grad(&[x, k]);
        Ok(self.push(value, Op::Conv2d { x, k, geom }, rg))
    }

    /// Input adjoint of [`Graph::conv2d`]: `x[b, c_in_t, h, w]` with
    /// `k[c_in_t, c_out_t, kh, kw]` gives `[b, c_out_t, (h-1)*stride - 2*pad + kh, ..]`.
    pub fn conv2d_transposed(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = self.conv_geom("conv2d_transposed", x, k, true, stride, pad)?;
        let out = conv::input_adjoint(self.value(x).data(), self.value(k).data(), &geom);
        let value = Tensor::from_vec(vec![geom.batch, geom.c_in, geom.h, geom.w], out)?;
        let rg = self.any_grad(&[x, k]);
        Ok(self.push(value, Op::ConvTransposed { x, k, geom }, rg))
    }

    /// Per-channel batch normalization over every axis but 1. In
    /// [`BatchNormMode::Train`] the running statistics are updated in place
    /// (unbiased variance, momentum [`BN_MOMENTUM`]).
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats,
        mode: BatchNormMode,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 && sx.len() != 4 {
            return Err(Error::dim("batchnorm", &sx, self.shape(gamma)));
        }
        let c = sx[1];
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(Error::dim("batchnorm", &sx, self.shape(p)));
            }
        }
        if running.mean.len() != c || running.var.len() != c {
            return Err(Error::dim("batchnorm", &sx, &[running.mean.len()]));
        }
        let batch = sx[0];
        if mode == BatchNormMode::Train && batch < 2 {
            return Err(Error::DegenerateBatch(batch));
        }
        let spatial: usize = sx[2..].iter().product();
        let count = (batch * spatial) as f64;
        let xd = self.value(x).data();

        let (mean, var) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for (i, &v) in xd.iter().enumerate() {
                    mean[(i / spatial) % c] += v;
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for (i, &v) in xd.iter().enumerate() {
                    let ch = (i / spatial) % c;
                    var[ch] += (v - mean[ch]) * (v - mean[ch]);
                }
                var.iter_mut().for_each(|s| *s /= count);
                for ch in 0..c {
                    let unbiased = var[ch] * count / (count - 1.0);
                    running.mean[ch] = (1.0 - BN_MOMENTUM) * running.mean[ch] + BN_MOMENTUM * mean[ch];
                    running.var[ch] = (1.0 - BN_MOMENTUM) * running.var[ch] + BN_MOMENTUM * unbiased;
                }
                (mean, var)
            }
            BatchNormMode::Eval => (running.mean.clone(), running.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for (i, &v) in xd.iter().enumerate() {
            let ch = (i / spatial) % c;
            xhat[i] = (v - mean[ch]) * inv_std[ch];
            out[i] = gd[ch] * xhat[i] + bd[ch];
        }
        let value = Tensor::from_vec(sx, out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        let saved = BatchNormSaved {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            mode,
            channels: c,
            spatial,
        };
        Ok(self.push(value, Op::BatchNorm(Box::new(saved)), rg))
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate across
    /// calls; intermediate gradients are recomputed each time. Every
    /// requires-grad leaf ends up with a gradient, zero if unreachable.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for (node, grad) in self.nodes.iter().zip(self.grads.iter_mut()) {
            let is_leaf = matches!(node.op, Op::Leaf);
            if !is_leaf {
                *grad = None;
            } else if node.requires_grad && grad.is_none() {
                *grad = Some(Tensor::zeros(node.value.shape()));
            }
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let seed = Tensor::full(self.shape(loss), 1.0);
        let mut pending: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        pending[loss.0] = Some(seed);

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = pending[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Op::Leaf = node.op {
                if let Some(g) = self.grads[idx].as_mut() {
                    for (a, b) in g.data_mut().iter_mut().zip(upstream.data()) {
                        *a += b;
                    }
                }
                continue;
            }
            let contributions = self.local_grads(idx, &upstream)?;
            self.grads[idx] = Some(upstream);
            for (input, g) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match pending[input.0].as_mut() {
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                    None => pending[input.0] = Some(g),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, idx: usize, up: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let same = |v: Var, data: Vec<f64>| Tensor::from_vec(val(v).shape().to_vec(), data);

        let grads = match node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (m, k) = (val(a).shape()[0], val(a).shape()[1]);
                let n = val(b).shape()[1];
                let mut res = Vec::new();
                if rg(a) {
                    let bt = transpose(val(b).data(), k, n);
                    res.push((a, same(a, matmul_raw(up.data(), &bt, m, n, k))?));
                }
                if rg(b) {
                    let at = transpose(val(a).data(), m, k);
                    res.push((b, same(b, matmul_raw(&at, up.data(), k, m, n))?));
                }
                res
            }
            Op::AddBias(x, bias) => {
                let sx = val(x).shape();
                let (c, inner) = (sx[1], sx[2..].iter().product::<usize>());
                let mut db = vec![0.0; c];
                for (i, &g) in up.data().iter().enumerate() {
                    db[(i / inner) % c] += g;
                }
                vec![(x, up.clone()), (bias, same(bias, db)?)]
            }
            Op::Add(a, b) => vec![(a, up.clone()), (b, up.clone())],
            Op::Sub(a, b) => vec![(a, up.clone()), (b, up.map(|g| -g))],
            Op::Mul(a, b) => vec![
                (a, up.zip_map(val(b), |g, y| g * y)?),
                (b, up.zip_map(val(a), |g, x| g * x)?),
            ],
            Op::Affine(x, s) => vec![(x, up.map(|g| g * s))],
            Op::Relu(x) => vec![(x, up.zip_map(val(x), |g, v| if v > 0.0 { g } else { 0.0 })?)],
            Op::Sigmoid(x) => vec![(x, up.zip_map(out, |g, s| g * s * (1.0 - s))?)],
            Op::Tanh(x) => vec![(x, up.zip_map(out, |g, t| g * (1.0 - t * t))?)],
            Op::Log(x) => vec![(x, up.zip_map(val(x), |g, v| g / v)?)],
            Op::Clamp(x, lo, hi) => vec![(x, up.zip_map(val(x), |g, v| if v < lo || v > hi { 0.0 } else { g })?)],
            Op::Concat { a, b, axis } => {
                let (sa, sb) = (val(a).shape(), val(b).shape());
                let outer: usize = sa[..axis].iter().product();
                let ca: usize = sa[axis..].iter().product();
                let cb: usize = sb[axis..].iter().product();
                let mut ga = Vec::with_capacity(outer * ca);
                let mut gb = Vec::with_capacity(outer * cb);
                for o in 0..outer {
                    let row = &up.data()[o * (ca + cb)..(o + 1) * (ca + cb)];
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                vec![(a, same(a, ga)?), (b, same(b, gb)?)]
            }
            Op::Reshape(x) => vec![(x, up.reshape(val(x).shape())?)],
            Op::Sum(x) => vec![(x, Tensor::full(val(x).shape(), up.data()[0]))],
            Op::Mean(x) => {
                let n = val(x).len() as f64;
                vec![(x, Tensor::full(val(x).shape(), up.data()[0] / n))]
            }
            Op::Mse(a, b) => {
                let n = val(a).len() as f64;
                let s = 2.0 * up.data()[0] / n;
                let da = val(a).zip_map(val(b), |x, y| s * (x - y))?;
                let db = da.map(|g| -g);
                vec![(a, da), (b, db)]
            }
            Op::Conv2d { x, k, geom } => {
                let mut res = Vec::new();
                if rg(x) {
                    res.push((x, same(x, conv::input_adjoint(up.data(), val(k).data(), &geom))?));
                }
                if rg(k) {
                    res.push((k, same(k, conv::kernel_adjoint(val(x).data(), up.data(), &geom))?));
                }
                res
            }
            Op::ConvTransposed { x, k, geom } => {
                let mut res = Vec::new();
                if rg(x) {
                    res.push((x, same(x, conv::forward(up.data(), val(k).data(), &geom))?));
                }
                if rg(k) {
                    res.push((k, same(k, conv::kernel_adjoint(up.data(), val(x).data(), &geom))?));
                }
                res
            }
            Op::BatchNorm(ref s) => {
                let (c, spatial) = (s.channels, s.spatial);
                let gd = val(s.gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (i, &g) in up.data().iter().enumerate() {
                    let ch = (i / spatial) % c;
                    dgamma[ch] += g * s.xhat[i];
                    dbeta[ch] += g;
                }
                let dx = match s.mode {
                    BatchNormMode::Eval => up
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &g)| {
                            let ch = (i / spatial) % c;
                            g * gd[ch] * s.inv_std[ch]
                        })
                        .collect(),
                    BatchNormMode::Train => {
                        // dx = inv_std / N * (N*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat)),
                        // with dxhat = up * gamma, so both sums follow from dbeta and dgamma.
                        let count = (up.len() / c) as f64;
                        up.data()
                            .iter()
                            .enumerate()
                            .map(|(i, &g)| {
                                let ch = (i / spatial) % c;
                                gd[ch] * s.inv_std[ch] / count * (count * g - dbeta[ch] - s.xhat[i] * dgamma[ch])
                            })
                            .collect()
                    }
                };
                vec![
                    (s.x, same(s.x, dx)?),
                    (s.gamma, same(s.gamma, dgamma)?),
                    (s.beta, same(s.beta, dbeta)?),
                ]
            }
        };
        Ok(grads)
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

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    c
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}
