//! A small define-by-run reverse-mode tape over [`Tensor`]s.
//!
//! Every op records its operands; [`Graph::backward`] walks the tape in reverse.
//! Nodes that do not depend on a grad-requiring leaf are skipped entirely, so
//! frozen networks (the oracle, the feature extractor) only pay for the
//! input-gradient path.

use crate::tensor::{col2im, im2col, Real, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        pad: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    /// `x * coef[n]` with one constant coefficient per batch item.
    ScaleSamples(usize, Vec<f64>),
    Silu(usize),
    Sigmoid(usize),
    Square(usize),
    Sqrt(usize),
    Abs(usize),
    Relu(usize),
    Clamp(usize, f64, f64),
    AvgPool2(usize),
    Upsample2(usize),
    Concat(usize, usize),
    ChannelNorm(usize, f64),
    Gram(usize),
    SumSamples(usize),
    MeanAll(usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn silu<T: Real>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn acc<T: Real>(slot: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    /// A leaf that receives a gradient.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf with no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(T) -> T) -> Var {
        let src = &self.nodes[x.0].value;
        let out = Tensor::new(src.shape, src.data.iter().map(|&v| f(v)).collect());
        let ng = self.nodes[x.0].needs_grad;
        self.push(out, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(T, T) -> T) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape, vb.shape, "elementwise shape mismatch");
        let out = Tensor::new(
            va.shape,
            va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect(),
        );
        let ng = self.needs(&[a.0, b.0]);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let k = T::of(s);
        self.unary(x, Op::Scale(x.0, s), |v| v * k)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let k = T::of(s);
        self.unary(x, Op::AddScalar(x.0), |v| v + k)
    }

    pub fn scale_samples(&mut self, x: Var, coef: &[f64]) -> Var {
        let src = &self.nodes[x.0].value;
        assert_eq!(coef.len(), src.shape.n, "one coefficient per sample");
        let per = src.shape.per_sample();
        let data = src
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v * T::of(coef[i / per]))
            .collect();
        let out = Tensor::new(src.shape, data);
        let ng = self.nodes[x.0].needs_grad;
        self.push(out, Op::ScaleSamples(x.0, coef.to_vec()), ng)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Silu(x.0), silu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x.0), sigmoid)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x.0), |v| v * v)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sqrt(x.0), |v| v.max(T::zero()).sqrt())
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x.0), |v| v.abs())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x.0), |v| v.max(T::zero()))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::of(lo), T::of(hi));
        self.unary(x, Op::Clamp(x.0, lo, hi), |v| v.max(l).min(h))
    }

    /// 2-D convolution. `w` is `[cout, cin, k, k]` (stored in a [`Shape`]), `b` is `[1, cout, 1, 1]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x);
        let ws = self.shape(w);
        assert_eq!(ws.h, ws.w, "square kernels only");
        assert_eq!(xs.c, ws.c, "conv input has {} channels, kernel expects {}", xs.c, ws.c);
        let (k, cout, cin) = (ws.h, ws.n, ws.c);
        assert!(xs.h + 2 * pad >= k && xs.w + 2 * pad >= k, "input smaller than kernel");
        let ho = (xs.h + 2 * pad - k) / stride + 1;
        let wo = (xs.w + 2 * pad - k) / stride + 1;
        let p = ho * wo;
        let kk = cin * k * k;
        let out_shape = Shape::new(xs.n, cout, ho, wo);
        let mut out = vec![T::zero(); out_shape.numel()];
        let direct = k == 1 && stride == 1 && pad == 0;
        let mut cols = if direct { Vec::new() } else { vec![T::zero(); kk * p] };
        {
            let xv = &self.nodes[x.0].value;
            let wv = &self.nodes[w.0].value.data;
            for n in 0..xs.n {
                let xin = xv.sample(n);
                let patches: &[T] = if direct {
                    xin
                } else {
                    im2col(xin, cin, xs.h, xs.w, k, stride, pad, &mut cols);
                    &cols
                };
                let dst = &mut out[n * cout * p..(n + 1) * cout * p];
                if let Some(b) = b {
                    let bv = &self.nodes[b.0].value.data;
                    for (co, row) in dst.chunks_mut(p).enumerate() {
                        row.fill(bv[co]);
                    }
                }
                let beta = if b.is_some() { T::one() } else { T::zero() };
                T::gemm(
                    cout, kk, p, wv, kk as isize, 1, patches, p as isize, 1, beta, dst, p as isize,
                    1,
                );
            }
        }
        let mut ids = vec![x.0, w.0];
        ids.extend(b.map(|b| b.0));
        let ng = self.needs(&ids);
        self.push(
            Tensor::new(out_shape, out),
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
                stride,
                pad,
            },
            ng,
        )
    }

    /// 2×2 average pooling with stride 2.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let src = &self.nodes[x.0].value;
        let s = src.shape;
        assert!(s.h % 2 == 0 && s.w % 2 == 0, "avg_pool2 needs even spatial dims, got {s}");
        let os = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
        let mut out = Vec::with_capacity(os.numel());
        let quarter = T::of(0.25);
        for plane in src.data.chunks(s.plane()) {
            for oy in 0..os.h {
                let r0 = &plane[2 * oy * s.w..(2 * oy + 1) * s.w];
                let r1 = &plane[(2 * oy + 1) * s.w..(2 * oy + 2) * s.w];
                for ox in 0..os.w {
                    out.push((r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * quarter);
                }
            }
        }
        let ng = self.nodes[x.0].needs_grad;
        self.push(Tensor::new(os, out), Op::AvgPool2(x.0), ng)
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let src = &self.nodes[x.0].value;
        let s = src.shape;
        let os = Shape::new(s.n, s.c, s.h * 2, s.w * 2);
        let mut out = Vec::with_capacity(os.numel());
        for plane in src.data.chunks(s.plane()) {
            for oy in 0..os.h {
                let row = &plane[(oy / 2) * s.w..(oy / 2 + 1) * s.w];
                for ox in 0..os.w {
                    out.push(row[ox / 2]);
                }
            }
        }
        let ng = self.nodes[x.0].needs_grad;
        self.push(Tensor::new(os, out), Op::Upsample2(x.0), ng)
    }

    /// Channel concatenation `[a; b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (va.shape, vb.shape);
        assert_eq!((sa.n, sa.h, sa.w), (sb.n, sb.h, sb.w), "concat shape mismatch");
        let os = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let mut out = Vec::with_capacity(os.numel());
        for n in 0..sa.n {
            out.extend_from_slice(va.sample(n));
            out.extend_from_slice(vb.sample(n));
        }
        let ng = self.needs(&[a.0, b.0]);
        self.push(Tensor::new(os, out), Op::Concat(a.0, b.0), ng)
    }

    /// Divides every channel vector by its Euclidean norm: `x / sqrt(Σ_c x² + eps)`.
    pub fn channel_norm(&mut self, x: Var, eps: f64) -> Var {
        let src = &self.nodes[x.0].value;
        let s = src.shape;
        let e = T::of(eps);
        let mut out = src.data.clone();
        for n in 0..s.n {
            let base = n * s.per_sample();
            for p in 0..s.plane() {
                let mut ss = e;
                for c in 0..s.c {
                    let v = src.data[base + c * s.plane() + p];
                    ss = ss + v * v;
                }
                let inv = T::one() / ss.sqrt();
                for c in 0..s.c {
                    out[base + c * s.plane() + p] = out[base + c * s.plane() + p] * inv;
                }
            }
        }
        let ng = self.nodes[x.0].needs_grad;
        self.push(Tensor::new(s, out), Op::ChannelNorm(x.0, eps), ng)
    }

    /// Per-sample Gram matrix `G[p][q] = Σ_xy F[p]F[q] / (h·w·c)`, shaped `[n, 1, c, c]`.
    pub fn gram(&mut self, x: Var) -> Var {
        let src = &self.nodes[x.0].value;
        let s = src.shape;
        let p = s.plane();
        let norm = T::of(1.0 / (s.per_sample() as f64));
        let os = Shape::new(s.n, 1, s.c, s.c);
        let mut out = vec![T::zero(); os.numel()];
        for n in 0..s.n {
            let f = src.sample(n);
            let dst = &mut out[n * s.c * s.c..(n + 1) * s.c * s.c];
            T::gemm(s.c, p, s.c, f, p as isize, 1, f, 1, p as isize, T::zero(), dst, s.c as isize, 1);
            for v in dst.iter_mut() {
                *v = *v * norm;
            }
        }
        let ng = self.nodes[x.0].needs_grad;
        self.push(Tensor::new(os, out), Op::Gram(x.0), ng)
    }

    /// Sum over everything except the batch axis, shaped `[n, 1, 1, 1]`.
    pub fn sum_samples(&mut self, x: Var) -> Var {
        let src = &self.nodes[x.0].value;
        let s = src.shape;
        let out = (0..s.n)
            .map(|n| src.sample(n).iter().fold(T::zero(), |a, &b| a + b))
            .collect();
        let ng = self.nodes[x.0].needs_grad;
        self.push(Tensor::new(Shape::new(s.n, 1, 1, 1), out), Op::SumSamples(x.0), ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let src = &self.nodes[x.0].value;
        let sum = src.data.iter().fold(T::zero(), |a, &b| a + b);
        let out = Tensor::scalar(sum / T::of(src.data.len() as f64));
        let ng = self.nodes[x.0].needs_grad;
        self.push(out, Op::MeanAll(x.0), ng)
    }

    /// Mean over each sample, shaped `[n, 1, 1, 1]`.
    pub fn mean_samples(&mut self, x: Var) -> Var {
        let per = self.shape(x).per_sample();
        let s = self.sum_samples(x);
        self.scale(s, 1.0 / per as f64)
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, out: Var) -> Gradients<T> {
        let root = &self.nodes[out.0];
        assert_eq!(root.value.data.len(), 1, "backward needs a scalar output, got {}", root.value.shape);
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![T::one()]);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn len_of(&self, i: usize) -> usize {
        self.nodes[i].value.data.len()
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let val = |j: usize| &self.nodes[j].value.data;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &(j, sign) in &[(*a, T::one()), (*b, T::one())] {
                    if self.wants(j) {
                        let dst = acc(&mut grads[j], self.len_of(j));
                        for (d, &gv) in dst.iter_mut().zip(g) {
                            *d = *d + sign * gv;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                for &(j, sign) in &[(*a, T::one()), (*b, -T::one())] {
                    if self.wants(j) {
                        let dst = acc(&mut grads[j], self.len_of(j));
                        for (d, &gv) in dst.iter_mut().zip(g) {
                            *d = *d + sign * gv;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                for &(j, other) in &[(*a, *b), (*b, *a)] {
                    if self.wants(j) {
                        let o = val(other);
                        let dst = acc(&mut grads[j], self.len_of(j));
                        for ((d, &gv), &ov) in dst.iter_mut().zip(g).zip(o) {
                            *d = *d + gv * ov;
                        }
                    }
                }
            }
            Op::Scale(x, s) => {
                let k = T::of(*s);
                self.elementwise(*x, g, &node.value.data, grads, |gv, _, _| gv * k);
            }
            Op::AddScalar(x) => self.elementwise(*x, g, &node.value.data, grads, |gv, _, _| gv),
            Op::ScaleSamples(x, coef) => {
                let per = self.nodes[*x].value.shape.per_sample();
                if self.wants(*x) {
                    let dst = acc(&mut grads[*x], self.len_of(*x));
                    for (idx, (d, &gv)) in dst.iter_mut().zip(g).enumerate() {
                        *d = *d + gv * T::of(coef[idx / per]);
                    }
                }
            }
            Op::Silu(x) => self.elementwise(*x, g, &node.value.data, grads, |gv, xv, _| {
                let s = sigmoid(xv);
                gv * s * (T::one() + xv * (T::one() - s))
            }),
            Op::Sigmoid(x) => self.elementwise(*x, g, &node.value.data, grads, |gv, _, yv| gv * yv * (T::one() - yv)),
            Op::Square(x) => self.elementwise(*x, g, &node.value.data, grads, |gv, xv, _| gv * (xv + xv)),
            Op::Sqrt(x) => self.elementwise(*x, g, &node.value.data, grads, |gv, _, yv| {
                if yv > T::zero() {
                    gv / (yv + yv)
                } else {
                    T::zero()
                }
            }),
            Op::Abs(x) => self.elementwise(*x, g, &node.value.data, grads, |gv, xv, _| {
                if xv > T::zero() {
                    gv
                } else if xv < T::zero() {
                    -gv
                } else {
                    T::zero()
                }
            }),
            Op::Relu(x) => {
                self.elementwise(*x, g, &node.value.data, grads, |gv, xv, _| if xv > T::zero() { gv } else { T::zero() })
            }
            Op::Clamp(x, lo, hi) => {
                let (l, h) = (T::of(*lo), T::of(*hi));
                self.elementwise(*x, g, &node.value.data, grads, |gv, xv, _| {
                    if xv >= l && xv <= h {
                        gv
                    } else {
                        T::zero()
                    }
                })
            }
            Op::Conv2d { x, w, b, stride, pad } => self.conv_backward(*x, *w, *b, *stride, *pad, g, grads),
            Op::AvgPool2(x) => {
                if self.wants(*x) {
                    let s = self.nodes[*x].value.shape;
                    let (oh, ow) = (s.h / 2, s.w / 2);
                    let quarter = T::of(0.25);
                    let dst = acc(&mut grads[*x], s.numel());
                    for (pi, gp) in g.chunks(oh * ow).enumerate() {
                        let plane = &mut dst[pi * s.plane()..(pi + 1) * s.plane()];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let v = gp[oy * ow + ox] * quarter;
                                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                    let idx = (2 * oy + dy) * s.w + 2 * ox + dx;
                                    plane[idx] = plane[idx] + v;
                                }
                            }
                        }
                    }
                }
            }
            Op::Upsample2(x) => {
                if self.wants(*x) {
                    let s = self.nodes[*x].value.shape;
                    let (oh, ow) = (s.h * 2, s.w * 2);
                    let dst = acc(&mut grads[*x], s.numel());
                    for (pi, gp) in g.chunks(oh * ow).enumerate() {
                        let plane = &mut dst[pi * s.plane()..(pi + 1) * s.plane()];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let idx = (oy / 2) * s.w + ox / 2;
                                plane[idx] = plane[idx] + gp[oy * ow + ox];
                            }
                        }
                    }
                }
            }
            Op::Concat(a, b) => {
                let sa = self.nodes[*a].value.shape;
                let sb = self.nodes[*b].value.shape;
                let (la, lb) = (sa.per_sample(), sb.per_sample());
                for n in 0..sa.n {
                    let chunk = &g[n * (la + lb)..(n + 1) * (la + lb)];
                    if self.wants(*a) {
                        let dst = acc(&mut grads[*a], sa.numel());
                        for (d, &gv) in dst[n * la..(n + 1) * la].iter_mut().zip(&chunk[..la]) {
                            *d = *d + gv;
                        }
                    }
                    if self.wants(*b) {
                        let dst = acc(&mut grads[*b], sb.numel());
                        for (d, &gv) in dst[n * lb..(n + 1) * lb].iter_mut().zip(&chunk[la..]) {
                            *d = *d + gv;
                        }
                    }
                }
            }
            Op::ChannelNorm(x, eps) => {
                if self.wants(*x) {
                    let s = self.nodes[*x].value.shape;
                    let xv = val(*x);
                    let yv = &node.value.data;
                    let e = T::of(*eps);
                    let dst = acc(&mut grads[*x], s.numel());
                    for n in 0..s.n {
                        let base = n * s.per_sample();
                        for p in 0..s.plane() {
                            let mut ss = e;
                            let mut dot = T::zero();
                            for c in 0..s.c {
                                let idx = base + c * s.plane() + p;
                                ss = ss + xv[idx] * xv[idx];
                                dot = dot + g[idx] * yv[idx];
                            }
                            let inv = T::one() / ss.sqrt();
                            // dy/dx = (g - y·<g,y>) / r
                            for c in 0..s.c {
                                let idx = base + c * s.plane() + p;
                                dst[idx] = dst[idx] + (g[idx] - yv[idx] * dot) * inv;
                            }
                        }
                    }
                }
            }
            Op::Gram(x) => {
                if self.wants(*x) {
                    let s = self.nodes[*x].value.shape;
                    let p = s.plane();
                    let norm = T::of(1.0 / (s.per_sample() as f64));
                    let dst = acc(&mut grads[*x], s.numel());
                    let mut sym = vec![T::zero(); s.c * s.c];
                    for n in 0..s.n {
                        let gg = &g[n * s.c * s.c..(n + 1) * s.c * s.c];
                        for r in 0..s.c {
                            for q in 0..s.c {
                                sym[r * s.c + q] = (gg[r * s.c + q] + gg[q * s.c + r]) * norm;
                            }
                        }
                        let f = self.nodes[*x].value.sample(n);
                        let d = &mut dst[n * s.per_sample()..(n + 1) * s.per_sample()];
                        // dF = (G + Gᵀ) F / (hwc)
                        T::gemm(s.c, s.c, p, &sym, s.c as isize, 1, f, p as isize, 1, T::one(), d, p as isize, 1);
                    }
                }
            }
            Op::SumSamples(x) => {
                if self.wants(*x) {
                    let per = self.nodes[*x].value.shape.per_sample();
                    let dst = acc(&mut grads[*x], self.len_of(*x));
                    for (idx, d) in dst.iter_mut().enumerate() {
                        *d = *d + g[idx / per];
                    }
                }
            }
            Op::MeanAll(x) => {
                if self.wants(*x) {
                    let len = self.len_of(*x);
                    let k = g[0] / T::of(len as f64);
                    let dst = acc(&mut grads[*x], len);
                    for d in dst.iter_mut() {
                        *d = *d + k;
                    }
                }
            }
        }
    }

    /// Accumulates `f(g, x, y)` into the operand's gradient.
    fn elementwise(
        &self,
        x: usize,
        g: &[T],
        yv: &[T],
        grads: &mut [Option<Vec<T>>],
        f: impl Fn(T, T, T) -> T,
    ) {
        if !self.wants(x) {
            return;
        }
        let xv = &self.nodes[x].value.data;
        let dst = acc(&mut grads[x], xv.len());
        for (((d, &gv), &xv), &yv) in dst.iter_mut().zip(g).zip(xv).zip(yv) {
            *d = *d + f(gv, xv, yv);
        }
    }

    fn conv_backward(
        &self,
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        pad: usize,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let xs = self.nodes[x].value.shape;
        let ws = self.nodes[w].value.shape;
        let (k, cout, cin) = (ws.h, ws.n, ws.c);
        let ho = (xs.h + 2 * pad - k) / stride + 1;
        let wo = (xs.w + 2 * pad - k) / stride + 1;
        let p = ho * wo;
        let kk = cin * k * k;
        let direct = k == 1 && stride == 1 && pad == 0;
        let want_x = self.wants(x);
        let want_w = self.wants(w);
        if let Some(b) = b {
            if self.wants(b) {
                let dst = acc(&mut grads[b], cout);
                for n in 0..xs.n {
                    for co in 0..cout {
                        let row = &g[(n * cout + co) * p..(n * cout + co + 1) * p];
                        dst[co] = dst[co] + row.iter().fold(T::zero(), |a, &v| a + v);
                    }
                }
            }
        }
        if !want_x && !want_w {
            return;
        }
        let mut cols = vec![T::zero(); kk * p];
        let mut dcols = if want_x && !direct { vec![T::zero(); kk * p] } else { Vec::new() };
        let xv = &self.nodes[x].value;
        let wv = &self.nodes[w].value.data;
        for n in 0..xs.n {
            let gy = &g[n * cout * p..(n + 1) * cout * p];
            if want_w {
                let patches: &[T] = if direct {
                    xv.sample(n)
                } else {
                    im2col(xv.sample(n), cin, xs.h, xs.w, k, stride, pad, &mut cols);
                    &cols
                };
                let dst = acc(&mut grads[w], ws.numel());
                // dW[cout, kk] += dY[cout, p] · colsᵀ[p, kk]
                T::gemm(cout, p, kk, gy, p as isize, 1, patches, 1, p as isize, T::one(), dst, kk as isize, 1);
            }
            if want_x {
                let per = xs.per_sample();
                let dst = acc(&mut grads[x], xs.numel());
                let dx = &mut dst[n * per..(n + 1) * per];
                if direct {
                    T::gemm(kk, cout, p, wv, 1, kk as isize, gy, p as isize, 1, T::one(), dx, p as isize, 1);
                } else {
                    // dcols[kk, p] = Wᵀ[kk, cout] · dY[cout, p]
                    T::gemm(kk, cout, p, wv, 1, kk as isize, gy, p as isize, 1, T::zero(), &mut dcols, p as isize, 1);
                    col2im(&dcols, cin, xs.h, xs.w, k, stride, pad, dx);
                }
            }
        }
    }
}
