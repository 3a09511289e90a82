//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s together with
//! the forward values. [`Graph::backward`] walks the tape in reverse and
//! returns gradients for every node that depends on a parameter or leaf.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::kernels::{self, ConvGeometry, DeformGradients};
use crate::nn::{ParamId, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Constant,
    Leaf,
    Param,
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeometry },
    Deform { x: Var, offsets: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    MulChannels(Var, Var),
    MulSpatial(Var, Var),
    GlobalAvgPool(Var),
    ConcatChannels(Vec<Var>),
    ConcatBatch(Vec<Var>),
    SliceChannels { x: Var, start: usize },
    IndexBatch(Var, Vec<usize>),
    Reshape(Var),
    DepthToSpace(Var, usize),
    Resize(Var),
    BatchMatMul { a: Var, b: Var, ta: bool, tb: bool },
    Softmax(Var),
    /// Scalar output whose gradient w.r.t. `input` was computed in the forward pass.
    Precomputed { input: Var, grad: Tensor<T> },
    Mean(Var),
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    tracked: bool,
}

pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(id.index()).and_then(Option::as_ref)
    }

    pub fn into_params(self) -> Vec<Option<Tensor<T>>> {
        self.params
    }
}

fn acc<'a, T: Real>(grads: &'a mut [Option<Tensor<T>>], v: Var, shape: &[usize]) -> &'a mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self { params, nodes: Vec::new(), param_vars: vec![None; params.len()] }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|&v| self.tracked(v));
        self.push(value, op, tracked)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Input whose gradient is reported by [`Graph::backward`].
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param, tracked: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeometry) -> Var {
        let out = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom);
        let mut ins = vec![x, w];
        ins.extend(b);
        self.push_op(out, Op::Conv { x, w, b, geom }, &ins)
    }

    pub fn deform_conv2d(&mut self, x: Var, offsets: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = kernels::deform_conv2d_forward(self.value(x), self.value(offsets), self.value(w), b.map(|b| self.value(b)))?;
        let mut ins = vec![x, offsets, w];
        ins.extend(b);
        Ok(self.push_op(out, Op::Deform { x, offsets, w, b }, &ins))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push_op(out, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push_op(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push_op(out, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.push_op(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push_op(out, Op::Sigmoid(a), &[a])
    }

    /// `x[N,C,H,W] · a[N,C,1,1]`
    pub fn mul_channels(&mut self, x: Var, a: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert_eq!(self.shape(a), [n, c, 1, 1], "channel weights shape");
        let mut out = self.value(x).clone();
        let av = self.value(a).data();
        for (plane, &s) in out.data_mut().chunks_mut(h * w).zip(av) {
            plane.iter_mut().for_each(|v| *v *= s);
        }
        self.push_op(out, Op::MulChannels(x, a), &[x, a])
    }

    /// `x[N,C,H,W] · a[N,1,H,W]`
    pub fn mul_spatial(&mut self, x: Var, a: Var) -> Var {
        let (n, _, h, w) = self.value(x).dims4();
        assert_eq!(self.shape(a), [n, 1, h, w], "spatial weights shape");
        let mut out = self.value(x).clone();
        let av = self.value(a);
        for i in 0..n {
            let m = av.item(i);
            for plane in out.item_mut(i).chunks_mut(h * w) {
                plane.iter_mut().zip(m).for_each(|(v, &s)| *v *= s);
            }
        }
        self.push_op(out, Op::MulSpatial(x, a), &[x, a])
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let inv = T::one() / T::of((h * w) as f64);
        let data = self.value(x).data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let out = Tensor::from_vec(&[n, c, 1, 1], data).expect("pool shape");
        self.push_op(out, Op::GlobalAvgPool(x), &[x])
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Var {
        let (n, _, h, w) = self.value(xs[0]).dims4();
        let total: usize = xs.iter().map(|&v| self.value(v).dims4().1).sum();
        let mut data = Vec::with_capacity(n * total * h * w);
        for i in 0..n {
            for &v in xs {
                let t = self.value(v);
                assert_eq!((t.dims4().0, t.dims4().2, t.dims4().3), (n, h, w), "concat_channels geometry");
                data.extend_from_slice(t.item(i));
            }
        }
        let out = Tensor::from_vec(&[n, total, h, w], data).expect("concat shape");
        self.push_op(out, Op::ConcatChannels(xs.to_vec()), xs)
    }

    pub fn concat_batch(&mut self, xs: &[Var]) -> Var {
        let rest = self.value(xs[0]).shape()[1..].to_vec();
        let mut data = Vec::new();
        let mut n = 0;
        for &v in xs {
            let t = self.value(v);
            assert_eq!(&t.shape()[1..], &rest[..], "concat_batch geometry");
            n += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&rest);
        let out = Tensor::from_vec(&shape, data).expect("concat shape");
        self.push_op(out, Op::ConcatBatch(xs.to_vec()), xs)
    }

    /// Channels `start..start + len` of `x[N, C, H, W]`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let t = self.value(x);
        let (n, c, h, w) = t.dims4();
        assert!(start + len <= c, "channel slice {start}..{} of {c}", start + len);
        let mut data = Vec::with_capacity(n * len * h * w);
        for i in 0..n {
            data.extend_from_slice(&t.item(i)[start * h * w..(start + len) * h * w]);
        }
        let out = Tensor::from_vec(&[n, len, h, w], data).expect("slice shape");
        self.push_op(out, Op::SliceChannels { x, start }, &[x])
    }

    /// Gathers items along the leading axis; indices may repeat.
    pub fn index_batch(&mut self, x: Var, idx: &[usize]) -> Var {
        let t = self.value(x);
        let mut shape = t.shape().to_vec();
        shape[0] = idx.len();
        let mut data = Vec::with_capacity(idx.len() * t.item(0).len());
        for &i in idx {
            data.extend_from_slice(t.item(i));
        }
        let out = Tensor::from_vec(&shape, data).expect("index shape");
        self.push_op(out, Op::IndexBatch(x, idx.to_vec()), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self.value(x).clone().reshape(shape).expect("reshape element count");
        self.push_op(out, Op::Reshape(x), &[x])
    }

    pub fn depth_to_space(&mut self, x: Var, r: usize) -> Var {
        let out = kernels::depth_to_space(self.value(x), r);
        self.push_op(out, Op::DepthToSpace(x, r), &[x])
    }

    pub fn resize(&mut self, x: Var, h: usize, w: usize) -> Var {
        let out = kernels::resize_bilinear(self.value(x), h, w);
        self.push_op(out, Op::Resize(x), &[x])
    }

    /// Batched `op(a)·op(b)` over 3-D tensors; `ta`/`tb` transpose the last two axes.
    pub fn batch_matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0], "batch_matmul operands {sa:?} {sb:?}");
        let (m, k) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (k2, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        assert_eq!(k, k2, "batch_matmul inner dimension");
        let mut out = Tensor::zeros(&[sa[0], m, n]);
        for i in 0..sa[0] {
            T::gemm(m, k, n, self.value(a).item(i), ta, self.value(b).item(i), tb, T::zero(), out.item_mut(i));
        }
        self.push_op(out, Op::BatchMatMul { a, b, ta, tb }, &[a, b])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let d = *t.shape().last().expect("softmax of scalar");
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(d) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        self.push_op(out, Op::Softmax(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.sum() / T::of(t.len() as f64);
        self.push_op(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    /// Records a scalar computed outside the graph along with its gradient w.r.t. `input`.
    pub fn precomputed(&mut self, input: Var, value: T, grad: Tensor<T>) -> Var {
        assert_eq!(grad.shape(), self.shape(input), "precomputed gradient shape");
        self.push_op(Tensor::scalar(value), Op::Precomputed { input, grad }, &[input])
    }

    /// Mean per-pixel cross-entropy of `[N, K, H, W]` logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Var {
        let (n, k, h, w) = self.value(logits).dims4();
        assert_eq!(labels.len(), n * h * w, "one label per pixel");
        let p = h * w;
        let t = self.value(logits);
        let mut grad = Tensor::zeros(t.shape());
        let mut loss = T::zero();
        let inv = T::one() / T::of((n * p) as f64);
        for i in 0..n {
            let x = t.item(i);
            let g = grad.item_mut(i);
            for j in 0..p {
                let m = (0..k).map(|c| x[c * p + j]).fold(T::neg_infinity(), T::max);
                let z: T = (0..k).map(|c| (x[c * p + j] - m).exp()).sum();
                let label = labels[i * p + j] as usize;
                loss += (z.ln() + m - x[label * p + j]) * inv;
                for c in 0..k {
                    let prob = (x[c * p + j] - m).exp() / z;
                    g[c * p + j] = (prob - if c == label { T::one() } else { T::zero() }) * inv;
                }
            }
        }
        self.precomputed(logits, loss, grad)
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.shape(root), T::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let keep = matches!(node.op, Op::Leaf | Op::Param);
            let Some(g) = (if keep { grads[i].clone() } else { grads[i].take() }) else {
                continue;
            };
            self.backward_node(i, &g, &mut grads);
        }
        let mut params = vec![None; self.params.len()];
        for (pid, v) in self.param_vars.iter().enumerate() {
            if let Some(v) = v {
                params[pid] = grads[v.0].take();
            }
        }
        Gradients { nodes: grads, params }
    }

    fn backward_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let tr = |v: Var| self.tracked(v);
        match &self.nodes[i].op {
            Op::Constant | Op::Leaf | Op::Param => {}
            &Op::Conv { x, w, b, geom } => {
                let (xv, wv) = (self.value(x), self.value(w));
                let mut gx = tr(x).then(|| grads[x.0].take().unwrap_or_else(|| Tensor::zeros(xv.shape())));
                let mut gw = tr(w).then(|| grads[w.0].take().unwrap_or_else(|| Tensor::zeros(wv.shape())));
                let mut gb = b.filter(|&b| tr(b)).map(|b| grads[b.0].take().unwrap_or_else(|| Tensor::zeros(self.shape(b))));
                kernels::conv2d_backward(xv, wv, geom, g, gx.as_mut(), gw.as_mut(), gb.as_mut());
                if let Some(t) = gx {
                    grads[x.0] = Some(t);
                }
                if let Some(t) = gw {
                    grads[w.0] = Some(t);
                }
                if let (Some(b), Some(t)) = (b, gb) {
                    grads[b.0] = Some(t);
                }
            }
            &Op::Deform { x, offsets, w, b } => {
                let take = |grads: &mut [Option<Tensor<T>>], v: Var| {
                    tr(v).then(|| grads[v.0].take().unwrap_or_else(|| Tensor::zeros(self.shape(v))))
                };
                let mut gx = take(grads, x);
                let mut go = take(grads, offsets);
                let mut gw = take(grads, w);
                let mut gb = b.and_then(|b| take(grads, b));
                kernels::deform_conv2d_backward(
                    self.value(x),
                    self.value(offsets),
                    self.value(w),
                    g,
                    DeformGradients { x: gx.as_mut(), offsets: go.as_mut(), weight: gw.as_mut(), bias: gb.as_mut() },
                )
                .expect("offsets validated in forward pass");
                for (v, t) in [(Some(x), gx), (Some(offsets), go), (Some(w), gw), (b, gb)] {
                    if let (Some(v), Some(t)) = (v, t) {
                        grads[v.0] = Some(t);
                    }
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if tr(v) {
                        acc(grads, v, g.shape()).add_assign(g);
                    }
                }
            }
            &Op::Mul(a, b) => {
                if tr(a) {
                    let t = g.zip_map(self.value(b), |x, y| x * y);
                    acc(grads, a, g.shape()).add_assign(&t);
                }
                if tr(b) {
                    let t = g.zip_map(self.value(a), |x, y| x * y);
                    acc(grads, b, g.shape()).add_assign(&t);
                }
            }
            &Op::Scale(a, s) => {
                acc(grads, a, g.shape()).add_assign(&g.map(|x| x * s));
            }
            &Op::Relu(a) => {
                let y = self.value(Var(i));
                acc(grads, a, g.shape()).add_assign(&g.zip_map(y, |gv, yv| if yv > T::zero() { gv } else { T::zero() }));
            }
            &Op::Sigmoid(a) => {
                let y = self.value(Var(i));
                acc(grads, a, g.shape()).add_assign(&g.zip_map(y, |gv, yv| gv * yv * (T::one() - yv)));
            }
            &Op::MulChannels(x, a) => {
                let (_, _, h, w) = g.dims4();
                let (xv, av) = (self.value(x), self.value(a));
                if tr(x) {
                    let gx = acc(grads, x, xv.shape());
                    for ((dst, src), &s) in gx.data_mut().chunks_mut(h * w).zip(g.data().chunks(h * w)).zip(av.data()) {
                        dst.iter_mut().zip(src).for_each(|(d, &gv)| *d += gv * s);
                    }
                }
                if tr(a) {
                    let ga = acc(grads, a, av.shape());
                    for ((d, gp), xp) in ga.data_mut().iter_mut().zip(g.data().chunks(h * w)).zip(xv.data().chunks(h * w)) {
                        *d += gp.iter().zip(xp).map(|(&p, &q)| p * q).sum::<T>();
                    }
                }
            }
            &Op::MulSpatial(x, a) => {
                let (n, _, h, w) = g.dims4();
                let (xv, av) = (self.value(x), self.value(a));
                if tr(x) {
                    let gx = acc(grads, x, xv.shape());
                    for j in 0..n {
                        let m = av.item(j);
                        for (dst, src) in gx.item_mut(j).chunks_mut(h * w).zip(g.item(j).chunks(h * w)) {
                            dst.iter_mut().zip(src).zip(m).for_each(|((d, &gv), &s)| *d += gv * s);
                        }
                    }
                }
                if tr(a) {
                    let ga = acc(grads, a, av.shape());
                    for j in 0..n {
                        let dst = ga.item_mut(j);
                        for (gp, xp) in g.item(j).chunks(h * w).zip(xv.item(j).chunks(h * w)) {
                            dst.iter_mut().zip(gp).zip(xp).for_each(|((d, &p), &q)| *d += p * q);
                        }
                    }
                }
            }
            &Op::GlobalAvgPool(x) => {
                let xv = self.value(x);
                let (_, _, h, w) = xv.dims4();
                let inv = T::one() / T::of((h * w) as f64);
                let gx = acc(grads, x, xv.shape());
                for (plane, &gv) in gx.data_mut().chunks_mut(h * w).zip(g.data()) {
                    plane.iter_mut().for_each(|d| *d += gv * inv);
                }
            }
            Op::ConcatChannels(xs) => {
                let (n, _, h, w) = g.dims4();
                let mut off = 0;
                let total = g.item(0).len();
                for &v in xs {
                    let c = self.value(v).dims4().1;
                    let len = c * h * w;
                    if tr(v) {
                        let gv = acc(grads, v, self.shape(v));
                        for j in 0..n {
                            let src = &g.data()[j * total + off..j * total + off + len];
                            gv.item_mut(j).iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                        }
                    }
                    off += len;
                }
            }
            Op::ConcatBatch(xs) => {
                let mut off = 0;
                for &v in xs {
                    let len = self.value(v).len();
                    if tr(v) {
                        let gv = acc(grads, v, self.shape(v));
                        gv.data_mut().iter_mut().zip(&g.data()[off..off + len]).for_each(|(d, &s)| *d += s);
                    }
                    off += len;
                }
            }
            &Op::SliceChannels { x, start } => {
                let (n, len, h, w) = g.dims4();
                let off = start * h * w;
                let gx = acc(grads, x, self.value(x).shape());
                for j in 0..n {
                    gx.item_mut(j)[off..off + len * h * w].iter_mut().zip(g.item(j)).for_each(|(d, &s)| *d += s);
                }
            }
            Op::IndexBatch(x, idx) => {
                let gx = acc(grads, *x, self.value(*x).shape());
                for (j, &src) in idx.iter().enumerate() {
                    gx.item_mut(src).iter_mut().zip(g.item(j)).for_each(|(d, &s)| *d += s);
                }
            }
            &Op::Reshape(x) => {
                let gx = acc(grads, x, self.value(x).shape());
                gx.data_mut().iter_mut().zip(g.data()).for_each(|(d, &s)| *d += s);
            }
            &Op::DepthToSpace(x, r) => {
                let gx = acc(grads, x, self.value(x).shape());
                kernels::depth_to_space_backward(g, r, gx);
            }
            &Op::Resize(x) => {
                let (_, _, h, w) = self.value(x).dims4();
                let gx = acc(grads, x, self.value(x).shape());
                kernels::resize_bilinear_backward(g, h, w, gx);
            }
            &Op::BatchMatMul { a, b, ta, tb } => {
                let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
                let (m, k) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
                let n = if tb { sb[1] } else { sb[2] };
                if tr(a) {
                    let av = self.value(b);
                    let ga = acc(grads, a, &sa);
                    for j in 0..sa[0] {
                        if ta {
                            T::gemm(k, n, m, av.item(j), tb, g.item(j), true, T::one(), ga.item_mut(j));
                        } else {
                            T::gemm(m, n, k, g.item(j), false, av.item(j), !tb, T::one(), ga.item_mut(j));
                        }
                    }
                }
                if tr(b) {
                    let av = self.value(a);
                    let gb = acc(grads, b, &sb);
                    for j in 0..sa[0] {
                        if tb {
                            T::gemm(n, m, k, g.item(j), true, av.item(j), ta, T::one(), gb.item_mut(j));
                        } else {
                            T::gemm(k, m, n, av.item(j), !ta, g.item(j), false, T::one(), gb.item_mut(j));
                        }
                    }
                }
            }
            &Op::Softmax(x) => {
                let y = self.value(Var(i));
                let d = *y.shape().last().expect("softmax shape");
                let gx = acc(grads, x, y.shape());
                for ((dst, yr), gr) in gx.data_mut().chunks_mut(d).zip(y.data().chunks(d)).zip(g.data().chunks(d)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    dst.iter_mut().zip(yr).zip(gr).for_each(|((o, &yv), &gv)| *o += yv * (gv - dot));
                }
            }
            Op::Precomputed { input, grad } => {
                let s = g.data()[0];
                let gi = acc(grads, *input, grad.shape());
                gi.data_mut().iter_mut().zip(grad.data()).for_each(|(d, &v)| *d += v * s);
            }
            &Op::Mean(x) => {
                let xv = self.value(x);
                let s = g.data()[0] / T::of(xv.len() as f64);
                acc(grads, x, xv.shape()).data_mut().iter_mut().for_each(|d| *d += s);
            }
        }
    }
}
