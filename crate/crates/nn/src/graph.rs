//! Reverse-mode autograd tape over 5-D activations.
//!
//! A [`Graph`] records every operation of one forward pass together with what its backward
//! pass needs. Parameters are read from a borrowed [`ParamStore`]; batch-norm running
//! statistics computed in training mode are queued as [`BufferUpdate`]s for the caller to
//! apply once the graph is dropped.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, ShapeBuilder};

use crate::error::{Error, Result};
use crate::params::{BufferId, BufferUpdate, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Conv {
        x: NodeId,
        w: ParamId,
        b: Option<ParamId>,
        k: usize,
    },
    UpConv {
        x: NodeId,
        w: ParamId,
        b: ParamId,
    },
    MaxPool {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Relu {
        x: NodeId,
    },
    Sigmoid {
        x: NodeId,
    },
    BatchNorm {
        x: NodeId,
        gamma: ParamId,
        beta: ParamId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Concat {
        xs: Vec<NodeId>,
    },
    Select {
        x: NodeId,
        start: usize,
    },
    Mean {
        xs: Vec<NodeId>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    train: bool,
    nodes: Vec<Node>,
    updates: Vec<BufferUpdate>,
}

/// Flat geometry of a zero-padded volume. Output voxel `(x, y, z)` lives at padded flat index
/// `base + t`; a kernel tap `(dx, dy, dz)` reads from `t + dx*sx + dy*sy + dz`.
struct Padded {
    p: usize,
    dims: [usize; 3],
    sx: usize,
    sy: usize,
    np: usize,
    base: usize,
    len: usize,
}

impl Padded {
    fn new(dims: [usize; 3], p: usize) -> Self {
        let pd = dims.map(|d| d + 2 * p);
        let (sx, sy) = (pd[1] * pd[2], pd[2]);
        let base = p * sx + p * sy + p;
        let last = (dims[0] - 1 + p) * sx + (dims[1] - 1 + p) * sy + dims[2] - 1 + p;
        Self {
            p,
            dims,
            sx,
            sy,
            np: pd[0] * sx,
            base,
            len: last - base + 1,
        }
    }

    fn taps(&self, k: usize) -> Vec<usize> {
        let mut v = Vec::with_capacity(k * k * k);
        for dx in 0..k {
            for dy in 0..k {
                for dz in 0..k {
                    v.push(dx * self.sx + dy * self.sy + dz);
                }
            }
        }
        v
    }

    /// Offset of the start of row `(x, y, ·)` relative to `base`.
    fn row(&self, x: usize, y: usize) -> usize {
        (x + self.p) * self.sx + (y + self.p) * self.sy + self.p - self.base
    }

    fn pad(&self, src: &[f64], channels: usize) -> Vec<f64> {
        let [nx, ny, nz] = self.dims;
        let v = nx * ny * nz;
        let mut out = vec![0.0; channels * self.np];
        for c in 0..channels {
            for x in 0..nx {
                for y in 0..ny {
                    let s = c * v + (x * ny + y) * nz;
                    let d = c * self.np + self.base + self.row(x, y);
                    out[d..d + nz].copy_from_slice(&src[s..s + nz]);
                }
            }
        }
        out
    }
}

fn kernel_mats(w: &Tensor, cout: usize, cin: usize, taps: usize) -> Vec<Array2<f64>> {
    let d = w.data();
    (0..taps)
        .map(|k| Array2::from_shape_fn((cout, cin), |(o, i)| d[(o * cin + i) * taps + k]))
        .collect()
}

fn upconv_mats(w: &Tensor, cin: usize, cout: usize) -> Vec<Array2<f64>> {
    let d = w.data();
    (0..8)
        .map(|k| Array2::from_shape_fn((cout, cin), |(o, i)| d[(i * cout + o) * 8 + k]))
        .collect()
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore, train: bool) -> Self {
        Self {
            store,
            train,
            nodes: Vec::new(),
            updates: Vec::new(),
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Running-statistic updates queued by training-mode batch norms.
    pub fn take_updates(&mut self) -> Vec<BufferUpdate> {
        std::mem::take(&mut self.updates)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, x: NodeId) -> bool {
        self.nodes[x.0].needs_grad
    }

    pub fn input(&mut self, t: Tensor) -> Result<NodeId> {
        t.dims5()?;
        Ok(self.push(t, Op::Input, false))
    }

    /// "Same"-padded 3-D convolution with odd cubic kernel `k`; weight `(cout, cin, k, k, k)`.
    pub fn conv(&mut self, x: NodeId, w: ParamId, b: Option<ParamId>, k: usize) -> Result<NodeId> {
        let (n, cin, dims) = self.value(x).dims5()?;
        let wt = self.store.param(w);
        let cout = wt.shape()[0];
        if wt.shape() != [cout, cin, k, k, k] || k.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "conv weight {:?} for {cin} input channels, kernel {k}",
                wt.shape()
            )));
        }
        let g = Padded::new(dims, k / 2);
        let taps = g.taps(k);
        let wk = kernel_mats(wt, cout, cin, taps.len());
        let v: usize = dims.iter().product();
        let [nx, ny, nz] = dims;
        let bias = b.map(|b| self.store.param(b).data());
        let mut out = vec![0.0; n * cout * v];
        let xin = self.value(x).data();
        for s in 0..n {
            let xp = g.pad(&xin[s * cin * v..(s + 1) * cin * v], cin);
            let mut yf = Array2::<f64>::zeros((cout, g.len));
            for (m, &t) in wk.iter().zip(&taps) {
                let xv = ArrayView2::from_shape((cin, g.len).strides((g.np, 1)), &xp[t..])
                    .expect("padded view in bounds");
                general_mat_mul(1.0, m, &xv, 1.0, &mut yf);
            }
            let yf = yf.as_slice().expect("standard layout");
            for o in 0..cout {
                let bo = bias.map_or(0.0, |b| b[o]);
                for ix in 0..nx {
                    for iy in 0..ny {
                        let src = o * g.len + g.row(ix, iy);
                        let dst = (s * cout + o) * v + (ix * ny + iy) * nz;
                        for (d, s) in out[dst..dst + nz].iter_mut().zip(&yf[src..src + nz]) {
                            *d = s + bo;
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![n, cout, nx, ny, nz], out)?;
        Ok(self.push(t, Op::Conv { x, w, b, k }, true))
    }

    /// 2×2×2 transposed convolution with stride 2; weight `(cin, cout, 2, 2, 2)`.
    pub fn upconv(&mut self, x: NodeId, w: ParamId, b: ParamId) -> Result<NodeId> {
        let (n, cin, [nx, ny, nz]) = self.value(x).dims5()?;
        let wt = self.store.param(w);
        let cout = wt.shape()[1];
        if wt.shape() != [cin, cout, 2, 2, 2] {
            return Err(Error::Shape(format!(
                "up-convolution weight {:?} for {cin} input channels",
                wt.shape()
            )));
        }
        let wk = upconv_mats(wt, cin, cout);
        let bias = self.store.param(b).data();
        let v = nx * ny * nz;
        let (ox, oy, oz) = (2 * nx, 2 * ny, 2 * nz);
        let ov = ox * oy * oz;
        let mut out = vec![0.0; n * cout * ov];
        let xin = self.value(x).data();
        for s in 0..n {
            let xv = ArrayView2::from_shape((cin, v), &xin[s * cin * v..(s + 1) * cin * v])
                .expect("contiguous");
            for (k, m) in wk.iter().enumerate() {
                let (a, bb, c) = (k >> 2, (k >> 1) & 1, k & 1);
                let z = m.dot(&xv);
                for o in 0..cout {
                    let zo = z.row(o);
                    let base = (s * cout + o) * ov;
                    for ix in 0..nx {
                        for iy in 0..ny {
                            for iz in 0..nz {
                                let dst = base + ((2 * ix + a) * oy + 2 * iy + bb) * oz + 2 * iz + c;
                                out[dst] = zo[(ix * ny + iy) * nz + iz] + bias[o];
                            }
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![n, cout, ox, oy, oz], out)?;
        Ok(self.push(t, Op::UpConv { x, w, b }, true))
    }

    /// 2×2×2 max pooling with stride 2; every spatial axis must be even.
    pub fn maxpool(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c, [nx, ny, nz]) = self.value(x).dims5()?;
        if nx % 2 + ny % 2 + nz % 2 != 0 {
            return Err(Error::Shape(format!("cannot halve {:?}", [nx, ny, nz])));
        }
        let (ox, oy, oz) = (nx / 2, ny / 2, nz / 2);
        let v = nx * ny * nz;
        let xin = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ox * oy * oz);
        let mut argmax = Vec::with_capacity(out.capacity());
        for nc in 0..n * c {
            let base = nc * v;
            for ix in 0..ox {
                for iy in 0..oy {
                    for iz in 0..oz {
                        let mut best = usize::MAX;
                        let mut bv = f64::NEG_INFINITY;
                        for k in 0..8 {
                            let i = base
                                + ((2 * ix + (k >> 2)) * ny + 2 * iy + ((k >> 1) & 1)) * nz
                                + 2 * iz
                                + (k & 1);
                            if xin[i] > bv || best == usize::MAX {
                                bv = xin[i];
                                best = i;
                            }
                        }
                        out.push(bv);
                        argmax.push(best);
                    }
                }
            }
        }
        let needs = self.needs(x);
        let t = Tensor::new(vec![n, c, ox, oy, oz], out)?;
        Ok(self.push(t, Op::MaxPool { x, argmax }, needs))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut t = self.value(x).clone();
        t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let needs = self.needs(x);
        self.push(t, Op::Relu { x }, needs)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let mut t = self.value(x).clone();
        t.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        let needs = self.needs(x);
        self.push(t, Op::Sigmoid { x }, needs)
    }

    /// Per-channel batch normalization. Training mode normalizes with batch statistics and
    /// queues running-statistic updates; inference mode uses the running statistics.
    pub fn batchnorm(
        &mut self,
        x: NodeId,
        gamma: ParamId,
        beta: ParamId,
        running_mean: BufferId,
        running_var: BufferId,
    ) -> Result<NodeId> {
        let (n, c, dims) = self.value(x).dims5()?;
        let v: usize = dims.iter().product();
        let m = (n * v) as f64;
        let xin = self.value(x).data();
        let g = self.store.param(gamma).data();
        let bt = self.store.param(beta).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        let mut pending = Vec::new();
        if self.train {
            for ch in 0..c {
                let chunks = (0..n).map(|s| &xin[(s * c + ch) * v..(s * c + ch + 1) * v]);
                let mu = chunks.clone().flatten().sum::<f64>() / m;
                mean[ch] = mu;
                var[ch] = chunks.flatten().map(|x| (x - mu) * (x - mu)).sum::<f64>() / m;
            }
            let rm = self.store.buffer(running_mean).data();
            let rv = self.store.buffer(running_var).data();
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            pending.push(BufferUpdate {
                id: running_mean,
                value: (0..c)
                    .map(|ch| (1.0 - BN_MOMENTUM) * rm[ch] + BN_MOMENTUM * mean[ch])
                    .collect(),
            });
            pending.push(BufferUpdate {
                id: running_var,
                value: (0..c)
                    .map(|ch| (1.0 - BN_MOMENTUM) * rv[ch] + BN_MOMENTUM * var[ch] * unbias)
                    .collect(),
            });
        } else {
            mean.copy_from_slice(self.store.buffer(running_mean).data());
            var.copy_from_slice(self.store.buffer(running_var).data());
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; xin.len()];
        let mut out = vec![0.0; xin.len()];
        for s in 0..n {
            for ch in 0..c {
                let r = (s * c + ch) * v..(s * c + ch + 1) * v;
                for i in r {
                    let h = (xin[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g[ch] * h + bt[ch];
                }
            }
        }
        let t = Tensor::new(self.value(x).shape().to_vec(), out)?;
        self.updates.extend(pending);
        let batch_stats = self.train;
        Ok(self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            true,
        ))
    }

    /// Channelwise concatenation.
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let (n, _, dims) = self.value(xs[0]).dims5()?;
        let v: usize = dims.iter().product();
        let mut channels = 0;
        for &x in xs {
            let (n2, c, d2) = self.value(x).dims5()?;
            if n2 != n || d2 != dims {
                return Err(Error::Shape(format!(
                    "concat {:?} with {:?}",
                    self.value(xs[0]).shape(),
                    self.value(x).shape()
                )));
            }
            channels += c;
        }
        let mut out = Vec::with_capacity(n * channels * v);
        for s in 0..n {
            for &x in xs {
                let t = self.value(x);
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[s * c * v..(s + 1) * c * v]);
            }
        }
        let needs = xs.iter().any(|&x| self.needs(x));
        let t = Tensor::new(vec![n, channels, dims[0], dims[1], dims[2]], out)?;
        Ok(self.push(t, Op::Concat { xs: xs.to_vec() }, needs))
    }

    /// Channels `start..start + len`.
    pub fn select(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (n, c, dims) = self.value(x).dims5()?;
        if start + len > c || len == 0 {
            return Err(Error::Shape(format!("channels {start}..{} of {c}", start + len)));
        }
        let v: usize = dims.iter().product();
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(n * len * v);
        for s in 0..n {
            out.extend_from_slice(&d[(s * c + start) * v..(s * c + start + len) * v]);
        }
        let needs = self.needs(x);
        let t = Tensor::new(vec![n, len, dims[0], dims[1], dims[2]], out)?;
        Ok(self.push(t, Op::Select { x, start }, needs))
    }

    /// Elementwise arithmetic mean of equally shaped nodes.
    pub fn mean(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let mut acc = self.value(xs[0]).clone();
        for &x in &xs[1..] {
            if self.value(x).shape() != acc.shape() {
                return Err(Error::Shape(format!(
                    "mean of {:?} and {:?}",
                    acc.shape(),
                    self.value(x).shape()
                )));
            }
            acc.add_assign(self.value(x));
        }
        acc.scale(1.0 / xs.len() as f64);
        let needs = xs.iter().any(|&x| self.needs(x));
        Ok(self.push(acc, Op::Mean { xs: xs.to_vec() }, needs))
    }

    /// Propagates the seed gradients back to the parameters. The result is aligned with
    /// `store.params`; unused parameters get zero tensors.
    pub fn backward(&self, seeds: Vec<(NodeId, Tensor)>) -> Result<Vec<Tensor>> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, g) in seeds {
            if g.shape() != self.value(id).shape() {
                return Err(Error::Shape(format!(
                    "seed gradient {:?} for node {:?}",
                    g.shape(),
                    self.value(id).shape()
                )));
            }
            accumulate(&mut grads, id, g);
        }
        let mut pg: Vec<Tensor> = self
            .store
            .params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        for i in (0..self.nodes.len()).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Conv { x, w, b, k } => {
                    let gx = self.conv_backward(*x, *w, *b, *k, &gy, &mut pg);
                    if let Some(gx) = gx {
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::UpConv { x, w, b } => {
                    let gx = self.upconv_backward(*x, *w, *b, &gy, &mut pg);
                    if let Some(gx) = gx {
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::MaxPool { x, argmax } => {
                    let mut gx = Tensor::zeros(self.value(*x).shape());
                    let d = gx.data_mut();
                    for (&a, g) in argmax.iter().zip(gy.data()) {
                        d[a] += g;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Relu { x } => {
                    let mut gx = gy;
                    for (g, y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        if *y <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid { x } => {
                    let mut gx = gy;
                    for (g, y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        *g *= y * (1.0 - y);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let gx = self.bn_backward(
                        &gy,
                        xhat,
                        inv_std,
                        *batch_stats,
                        *gamma,
                        *beta,
                        &mut pg,
                    );
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::Concat { xs } => {
                    let (n, c, dims) = gy.dims5()?;
                    let v: usize = dims.iter().product();
                    let mut off = 0;
                    for &x in xs {
                        let shape = self.value(x).shape();
                        let cx = shape[1];
                        if self.needs(x) {
                            let mut out = Vec::with_capacity(n * cx * v);
                            for s in 0..n {
                                let a = (s * c + off) * v;
                                out.extend_from_slice(&gy.data()[a..a + cx * v]);
                            }
                            accumulate(&mut grads, x, Tensor::new(shape.to_vec(), out)?);
                        }
                        off += cx;
                    }
                }
                Op::Select { x, start } => {
                    let (n, len, dims) = gy.dims5()?;
                    let v: usize = dims.iter().product();
                    let shape = self.value(*x).shape();
                    let c = shape[1];
                    let mut gx = Tensor::zeros(shape);
                    for s in 0..n {
                        let dst = (s * c + start) * v;
                        gx.data_mut()[dst..dst + len * v]
                            .copy_from_slice(&gy.data()[s * len * v..(s + 1) * len * v]);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Mean { xs } => {
                    let k = 1.0 / xs.len() as f64;
                    for &x in xs {
                        if self.needs(x) {
                            let mut g = gy.clone();
                            g.scale(k);
                            accumulate(&mut grads, x, g);
                        }
                    }
                }
            }
        }
        Ok(pg)
    }

    fn conv_backward(
        &self,
        x: NodeId,
        w: ParamId,
        b: Option<ParamId>,
        k: usize,
        gy: &Tensor,
        pg: &mut [Tensor],
    ) -> Option<Tensor> {
        let xt = self.value(x);
        let (n, cin, dims) = xt.dims5().expect("5-D");
        let cout = gy.shape()[1];
        let g = Padded::new(dims, k / 2);
        let taps = g.taps(k);
        let wk = kernel_mats(self.store.param(w), cout, cin, taps.len());
        let mut gwk: Vec<Array2<f64>> = (0..taps.len()).map(|_| Array2::zeros((cout, cin))).collect();
        let want_gx = self.needs(x);
        let mut gx = want_gx.then(|| Tensor::zeros(xt.shape()));
        let [nx, ny, nz] = dims;
        let v = nx * ny * nz;
        let mut gb = vec![0.0; cout];
        for s in 0..n {
            let xp = g.pad(&xt.data()[s * cin * v..(s + 1) * cin * v], cin);
            let mut gyf = Array2::<f64>::zeros((cout, g.len));
            {
                let f = gyf.as_slice_mut().expect("standard layout");
                for o in 0..cout {
                    for ix in 0..nx {
                        for iy in 0..ny {
                            let src = (s * cout + o) * v + (ix * ny + iy) * nz;
                            let dst = o * g.len + g.row(ix, iy);
                            let row = &gy.data()[src..src + nz];
                            f[dst..dst + nz].copy_from_slice(row);
                            gb[o] += row.iter().sum::<f64>();
                        }
                    }
                }
            }
            for (gm, &t) in gwk.iter_mut().zip(&taps) {
                let xv = ArrayView2::from_shape((cin, g.len).strides((g.np, 1)), &xp[t..])
                    .expect("padded view in bounds");
                general_mat_mul(1.0, &gyf, &xv.t(), 1.0, gm);
            }
            if let Some(gx) = gx.as_mut() {
                let mut gxp = vec![0.0; cin * g.np];
                for (m, &t) in wk.iter().zip(&taps) {
                    let mut gv =
                        ArrayViewMut2::from_shape((cin, g.len).strides((g.np, 1)), &mut gxp[t..])
                            .expect("padded view in bounds");
                    general_mat_mul(1.0, &m.t(), &gyf, 1.0, &mut gv);
                }
                let d = gx.data_mut();
                for c in 0..cin {
                    for ix in 0..nx {
                        for iy in 0..ny {
                            let dst = (s * cin + c) * v + (ix * ny + iy) * nz;
                            let src = c * g.np + g.base + g.row(ix, iy);
                            d[dst..dst + nz].copy_from_slice(&gxp[src..src + nz]);
                        }
                    }
                }
            }
        }
        let tapn = taps.len();
        let gwd = pg[w.0].data_mut();
        for (t, gm) in gwk.iter().enumerate() {
            for ((o, i), val) in gm.indexed_iter() {
                gwd[(o * cin + i) * tapn + t] += val;
            }
        }
        if let Some(b) = b {
            for (d, g) in pg[b.0].data_mut().iter_mut().zip(&gb) {
                *d += g;
            }
        }
        gx
    }

    fn upconv_backward(
        &self,
        x: NodeId,
        w: ParamId,
        b: ParamId,
        gy: &Tensor,
        pg: &mut [Tensor],
    ) -> Option<Tensor> {
        let xt = self.value(x);
        let (n, cin, [nx, ny, nz]) = xt.dims5().expect("5-D");
        let cout = gy.shape()[1];
        let wk = upconv_mats(self.store.param(w), cin, cout);
        let v = nx * ny * nz;
        let (oy, oz) = (2 * ny, 2 * nz);
        let ov = 8 * v;
        let want_gx = self.needs(x);
        let mut gx = want_gx.then(|| Tensor::zeros(xt.shape()));
        let mut gwk: Vec<Array2<f64>> = (0..8).map(|_| Array2::zeros((cout, cin))).collect();
        let mut gb = vec![0.0; cout];
        for s in 0..n {
            let xv = ArrayView2::from_shape((cin, v), &xt.data()[s * cin * v..(s + 1) * cin * v])
                .expect("contiguous");
            let mut gxs = Array2::<f64>::zeros((cin, v));
            for k in 0..8 {
                let (a, bb, c) = (k >> 2, (k >> 1) & 1, k & 1);
                let gz = Array2::from_shape_fn((cout, v), |(o, q)| {
                    let (ix, iy, iz) = (q / (ny * nz), (q / nz) % ny, q % nz);
                    gy.data()[(s * cout + o) * ov + ((2 * ix + a) * oy + 2 * iy + bb) * oz + 2 * iz + c]
                });
                for (o, row) in gz.rows().into_iter().enumerate() {
                    gb[o] += row.sum();
                }
                general_mat_mul(1.0, &gz, &xv.t(), 1.0, &mut gwk[k]);
                if want_gx {
                    general_mat_mul(1.0, &wk[k].t(), &gz, 1.0, &mut gxs);
                }
            }
            if let Some(gx) = gx.as_mut() {
                gx.data_mut()[s * cin * v..(s + 1) * cin * v]
                    .copy_from_slice(gxs.as_slice().expect("standard layout"));
            }
        }
        let gwd = pg[w.0].data_mut();
        for (k, gm) in gwk.iter().enumerate() {
            for ((o, i), val) in gm.indexed_iter() {
                gwd[(i * cout + o) * 8 + k] += val;
            }
        }
        for (d, g) in pg[b.0].data_mut().iter_mut().zip(&gb) {
            *d += g;
        }
        gx
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_backward(
        &self,
        gy: &Tensor,
        xhat: &[f64],
        inv_std: &[f64],
        batch_stats: bool,
        gamma: ParamId,
        beta: ParamId,
        pg: &mut [Tensor],
    ) -> Tensor {
        let (n, c, dims) = gy.dims5().expect("5-D");
        let v: usize = dims.iter().product();
        let m = (n * v) as f64;
        let g = self.store.param(gamma).data();
        let gyd = gy.data();
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for s in 0..n {
            for ch in 0..c {
                for i in (s * c + ch) * v..(s * c + ch + 1) * v {
                    sum_g[ch] += gyd[i];
                    sum_gx[ch] += gyd[i] * xhat[i];
                }
            }
        }
        for ch in 0..c {
            pg[gamma.0].data_mut()[ch] += sum_gx[ch];
            pg[beta.0].data_mut()[ch] += sum_g[ch];
        }
        let mut gx = vec![0.0; gyd.len()];
        for s in 0..n {
            for ch in 0..c {
                let k = g[ch] * inv_std[ch];
                for i in (s * c + ch) * v..(s * c + ch + 1) * v {
                    gx[i] = if batch_stats {
                        k * (gyd[i] - sum_g[ch] / m - xhat[i] * sum_gx[ch] / m)
                    } else {
                        k * gyd[i]
                    };
                }
            }
        }
        Tensor::new(gy.shape().to_vec(), gx).expect("same shape")
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
