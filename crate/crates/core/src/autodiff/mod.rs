//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every op applied to its [`Var`]s. Calling
//! [`Tape::backward`] sweeps the record in reverse and returns gradients for
//! every leaf that requires them. Tapes are cheap; build a fresh one per
//! forward pass.

use std::cell::RefCell;

use crate::error::{shape_err, Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Conv2d { x: usize, k: usize, geom: ConvGeom },
    Conv1d { x: usize, k: usize },
    Pool { x: usize, c: usize, h: usize, w: usize, th: usize, tw: usize },
    GlobalAvgPool { x: usize, hw: usize },
    Relu(usize),
    Sigmoid(usize),
    Ln(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    AddRowBias { x: usize, b: usize },
    AddChannelBias { x: usize, b: usize, hw: usize },
    ChannelScale { x: usize, s: usize, hw: usize },
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    Softmax { x: usize, row: usize },
    LogSoftmax { x: usize, row: usize },
    Gather { x: usize, idx: Vec<usize> },
    Stack(Vec<usize>),
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul { a, b, .. } => vec![*a, *b],
            Conv2d { x, k, .. } | Conv1d { x, k } => vec![*x, *k],
            Pool { x, .. } | GlobalAvgPool { x, .. } => vec![*x],
            Relu(a) | Sigmoid(a) | Ln(a) | Scale(a, _) | AddScalar(a) | Reshape(a) | Sum(a)
            | Mean(a) => vec![*a],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => vec![*a, *b],
            AddRowBias { x, b } | AddChannelBias { x, b, .. } => vec![*x, *b],
            ChannelScale { x, s, .. } => vec![*x, *s],
            Softmax { x, .. } | LogSoftmax { x, .. } | Gather { x, .. } => vec![*x],
            Stack(parts) => parts.clone(),
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of ops. Inputs always precede the ops that consume them.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a tensor recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("dims", &self.dims()).finish()
    }
}

/// Leaf gradients produced by one backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `var`; all zeros when `var` does not influence
    /// the output.
    pub fn wrt(&self, var: Var<'_, T>) -> Tensor<T> {
        let dims = var.dims();
        match self.grads.get(var.id).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::from_parts(dims, g.clone()),
            None => Tensor::zeros(dims),
        }
    }

    pub fn contains(&self, var: Var<'_, T>) -> bool {
        matches!(self.grads.get(var.id), Some(Some(_)))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    /// Stacks equally shaped tensors along a new leading axis. Stacking
    /// single-element tensors yields a plain vector.
    pub fn stack<'t>(&'t self, parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let Some(first) = parts.first() else {
            return shape_err("stack of zero tensors");
        };
        let (data, dims) = {
            let nodes = self.nodes.borrow();
            let inner = nodes[first.id].value.dims().to_vec();
            let mut data = Vec::with_capacity(parts.len() * nodes[first.id].value.len());
            for p in parts {
                let v = &nodes[p.id].value;
                if v.dims() != inner.as_slice() {
                    return shape_err(format!("stack: {:?} vs {:?}", v.dims(), inner));
                }
                data.extend_from_slice(v.data());
            }
            let dims = if inner == [1] {
                vec![parts.len()]
            } else {
                let mut d = vec![parts.len()];
                d.extend(inner);
                d
            };
            (data, dims)
        };
        self.push(data, dims, Op::Stack(parts.iter().map(|p| p.id).collect()), "stack")
    }

    fn push(&self, data: Vec<T>, dims: Vec<usize>, op: Op<T>, name: &'static str) -> Result<Var<'_, T>> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.parents().iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node { value: Tensor::from_parts(dims, data), op, requires_grad });
        Ok(Var { tape: self, id: nodes.len() - 1 })
    }

    fn check_owner(&self, v: Var<'_, T>) -> Result<()> {
        if std::ptr::eq(self, v.tape) {
            Ok(())
        } else {
            Err(Error::Tape("variable belongs to a different tape".into()))
        }
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, output: Var<'_, T>) -> Result<Gradients<T>> {
        if output.dims().iter().product::<usize>() != 1 {
            return shape_err(format!("backward needs a scalar output, got {:?}", output.dims()));
        }
        let seed = Tensor::full(output.dims(), T::one());
        self.backward_with_seed(output, &seed)
    }

    /// Reverse sweep seeded with an arbitrary cotangent of the output's shape.
    pub fn backward_with_seed(&self, output: Var<'_, T>, seed: &Tensor<T>) -> Result<Gradients<T>> {
        self.check_owner(output)?;
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        if seed.dims() != out.value.dims() {
            return shape_err(format!("seed {:?} vs output {:?}", seed.dims(), out.value.dims()));
        }
        if !out.requires_grad {
            return Err(Error::Tape("output is detached from every parameter".into()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; output.id + 1];
        grads[output.id] = Some(seed.data().to_vec());
        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(&nodes, id, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    /// Gradient of each component of `loss_vector` with respect to `params`.
    ///
    /// Returns one entry per sample, each holding one tensor per parameter.
    pub fn per_sample_gradients<'t>(
        &'t self,
        loss_vector: Var<'t, T>,
        params: &[Var<'t, T>],
    ) -> Result<Vec<Vec<Tensor<T>>>> {
        if !loss_vector.requires_grad() {
            return Err(Error::Tape("loss vector is not connected to the tape parameters".into()));
        }
        let n = loss_vector.dims().iter().product::<usize>();
        let dims = loss_vector.dims();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut seed = Tensor::zeros(dims.clone());
            seed.data_mut()[i] = T::one();
            let g = self.backward_with_seed(loss_vector, &seed)?;
            out.push(params.iter().map(|&p| g.wrt(p)).collect());
        }
        Ok(out)
    }

    /// Same as [`per_sample_gradients`](Self::per_sample_gradients) for losses
    /// that live in separate scalar nodes; each sweep starts at its own loss.
    pub fn per_sample_gradients_of<'t>(
        &'t self,
        losses: &[Var<'t, T>],
        params: &[Var<'t, T>],
    ) -> Result<Vec<Vec<Tensor<T>>>> {
        losses
            .iter()
            .map(|&l| {
                if !l.requires_grad() {
                    return Err(Error::Tape("sample loss is detached".into()));
                }
                let g = self.backward(l)?;
                Ok(params.iter().map(|&p| g.wrt(p)).collect())
            })
            .collect()
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], id: usize, contrib: &[T]) {
    match &mut grads[id] {
        Some(g) => {
            for (a, &b) in g.iter_mut().zip(contrib) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(contrib.to_vec()),
    }
}

fn accumulate_owned<T: Scalar>(grads: &mut [Option<Vec<T>>], id: usize, contrib: Vec<T>) {
    match &mut grads[id] {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(contrib) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn propagate<T: Scalar>(nodes: &[Node<T>], id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let need = |p: usize| nodes[p].requires_grad;
    let val = |p: usize| nodes[p].value.data();
    match &nodes[id].op {
        Op::Leaf => {}
        &Op::MatMul { a, b, m, k, n } => {
            if need(a) {
                accumulate_owned(grads, a, kernels::matmul_a_bt(g, val(b), m, k, n));
            }
            if need(b) {
                accumulate_owned(grads, b, kernels::matmul_at_b(val(a), g, m, k, n));
            }
        }
        &Op::Conv2d { x, k, ref geom } => {
            let (gx, gk) = kernels::conv2d_backward(g, val(x), val(k), geom, need(x), need(k));
            if need(x) {
                accumulate_owned(grads, x, gx);
            }
            if need(k) {
                accumulate_owned(grads, k, gk);
            }
        }
        &Op::Conv1d { x, k } => {
            let (gx, gk) = kernels::conv1d_same_backward(g, val(x), val(k));
            if need(x) {
                accumulate_owned(grads, x, gx);
            }
            if need(k) {
                accumulate_owned(grads, k, gk);
            }
        }
        &Op::Pool { x, c, h, w, th, tw } => {
            accumulate_owned(grads, x, kernels::adaptive_avg_pool2d_backward(g, c, h, w, th, tw));
        }
        &Op::GlobalAvgPool { x, hw } => {
            let scale = T::one() / T::from_usize_lossy(hw);
            let gx: Vec<T> = g
                .iter()
                .flat_map(|&gc| std::iter::repeat_n(gc * scale, hw))
                .collect();
            accumulate_owned(grads, x, gx);
        }
        &Op::Relu(a) => {
            let gx = val(a)
                .iter()
                .zip(g)
                .map(|(&x, &gv)| if x > T::zero() { gv } else { T::zero() })
                .collect();
            accumulate_owned(grads, a, gx);
        }
        &Op::Sigmoid(a) => {
            let y = nodes[id].value.data();
            let gx = y.iter().zip(g).map(|(&y, &gv)| gv * y * (T::one() - y)).collect();
            accumulate_owned(grads, a, gx);
        }
        &Op::Ln(a) => {
            let gx = val(a).iter().zip(g).map(|(&x, &gv)| gv / x).collect();
            accumulate_owned(grads, a, gx);
        }
        &Op::Add(a, b) => {
            if need(a) {
                accumulate(grads, a, g);
            }
            if need(b) {
                accumulate(grads, b, g);
            }
        }
        &Op::Sub(a, b) => {
            if need(a) {
                accumulate(grads, a, g);
            }
            if need(b) {
                accumulate_owned(grads, b, g.iter().map(|&v| -v).collect());
            }
        }
        &Op::Mul(a, b) => {
            if need(a) {
                accumulate_owned(grads, a, g.iter().zip(val(b)).map(|(&gv, &y)| gv * y).collect());
            }
            if need(b) {
                accumulate_owned(grads, b, g.iter().zip(val(a)).map(|(&gv, &x)| gv * x).collect());
            }
        }
        &Op::Div(a, b) => {
            let (x, y) = (val(a), val(b));
            if need(a) {
                accumulate_owned(grads, a, g.iter().zip(y).map(|(&gv, &yv)| gv / yv).collect());
            }
            if need(b) {
                let gb = g.iter().zip(x).zip(y).map(|((&gv, &xv), &yv)| -gv * xv / (yv * yv)).collect();
                accumulate_owned(grads, b, gb);
            }
        }
        &Op::Scale(a, s) => accumulate_owned(grads, a, g.iter().map(|&v| v * s).collect()),
        &Op::AddScalar(a) | &Op::Reshape(a) => accumulate(grads, a, g),
        &Op::AddRowBias { x, b } => {
            if need(x) {
                accumulate(grads, x, g);
            }
            if need(b) {
                let n = val(b).len();
                let mut gb = vec![T::zero(); n];
                for row in g.chunks(n) {
                    for (o, &v) in gb.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                accumulate_owned(grads, b, gb);
            }
        }
        &Op::AddChannelBias { x, b, hw } => {
            if need(x) {
                accumulate(grads, x, g);
            }
            if need(b) {
                let gb = g.chunks(hw).map(|plane| plane.iter().copied().sum()).collect();
                accumulate_owned(grads, b, gb);
            }
        }
        &Op::ChannelScale { x, s, hw } => {
            let (xv, sv) = (val(x), val(s));
            if need(x) {
                let gx = g
                    .chunks(hw)
                    .zip(sv)
                    .flat_map(|(plane, &sc)| plane.iter().map(move |&v| v * sc))
                    .collect();
                accumulate_owned(grads, x, gx);
            }
            if need(s) {
                let gs = g
                    .chunks(hw)
                    .zip(xv.chunks(hw))
                    .map(|(gp, xp)| gp.iter().zip(xp).map(|(&a, &b)| a * b).sum())
                    .collect();
                accumulate_owned(grads, s, gs);
            }
        }
        &Op::Sum(a) => {
            let n = val(a).len();
            accumulate_owned(grads, a, vec![g[0]; n]);
        }
        &Op::Mean(a) => {
            let n = val(a).len();
            accumulate_owned(grads, a, vec![g[0] / T::from_usize_lossy(n); n]);
        }
        &Op::Softmax { x, row } => {
            let y = nodes[id].value.data();
            let mut gx = Vec::with_capacity(y.len());
            for (yr, gr) in y.chunks(row).zip(g.chunks(row)) {
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                gx.extend(yr.iter().zip(gr).map(|(&yi, &gi)| yi * (gi - dot)));
            }
            accumulate_owned(grads, x, gx);
        }
        &Op::LogSoftmax { x, row } => {
            let y = nodes[id].value.data();
            let mut gx = Vec::with_capacity(y.len());
            for (yr, gr) in y.chunks(row).zip(g.chunks(row)) {
                let total: T = gr.iter().copied().sum();
                gx.extend(yr.iter().zip(gr).map(|(&yi, &gi)| gi - yi.exp() * total));
            }
            accumulate_owned(grads, x, gx);
        }
        Op::Gather { x, idx } => {
            let mut gx = vec![T::zero(); val(*x).len()];
            for (&i, &gv) in idx.iter().zip(g) {
                gx[i] += gv;
            }
            accumulate_owned(grads, *x, gx);
        }
        Op::Stack(parts) => {
            let chunk = g.len() / parts.len();
            for (&p, gp) in parts.iter().zip(g.chunks(chunk)) {
                if need(p) {
                    accumulate(grads, p, gp);
                }
            }
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn dims(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.dims().to_vec()
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn item(&self) -> Result<T> {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(
        &self,
        name: &'static str,
        f: impl Fn(&Tensor<T>) -> Vec<T>,
        op: Op<T>,
    ) -> Result<Var<'t, T>> {
        let (data, dims) = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].value;
            (f(v), v.dims().to_vec())
        };
        self.tape.push(data, dims, op, name)
    }

    fn same_tape(&self, other: &Var<'t, T>) -> Result<()> {
        self.tape.check_owner(*other)
    }

    fn elementwise(
        &self,
        other: Var<'t, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let (data, dims) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.dims() != b.dims() {
                return shape_err(format!("{name}: {:?} vs {:?}", a.dims(), b.dims()));
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            (data, a.dims().to_vec())
        };
        self.tape.push(data, dims, op, name)
    }

    /// `self: m×k` times `other: k×n`.
    pub fn matmul(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let (data, m, k, n) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.rank() != 2 || b.rank() != 2 || a.dims()[1] != b.dims()[0] {
                return shape_err(format!("matmul: {:?} x {:?}", a.dims(), b.dims()));
            }
            let (m, k, n) = (a.dims()[0], a.dims()[1], b.dims()[1]);
            (kernels::matmul(a.data(), b.data(), m, k, n), m, k, n)
        };
        self.tape.push(data, vec![m, n], Op::MatMul { a: self.id, b: other.id, m, k, n }, "matmul")
    }

    /// 2-D convolution of a `C_in×H×W` map with `C_out×C_in×k×k` kernels.
    pub fn conv2d(&self, kernels: Var<'t, T>, stride: usize, padding: usize) -> Result<Var<'t, T>> {
        self.same_tape(&kernels)?;
        let (data, geom) = {
            let nodes = self.tape.nodes.borrow();
            let (x, k) = (&nodes[self.id].value, &nodes[kernels.id].value);
            if x.rank() != 3 || k.rank() != 4 || k.dims()[1] != x.dims()[0] || k.dims()[2] != k.dims()[3] {
                return shape_err(format!("conv2d: input {:?}, kernels {:?}", x.dims(), k.dims()));
            }
            let ks = k.dims()[2];
            if ks % 2 == 0 {
                return Err(Error::Param(format!("conv2d kernel size {ks} must be odd")));
            }
            if stride == 0 {
                return Err(Error::Param("conv2d stride must be positive".into()));
            }
            let (c_in, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
            let (Some(ho), Some(wo)) = (
                ConvGeom::out_extent(h, ks, stride, padding),
                ConvGeom::out_extent(w, ks, stride, padding),
            ) else {
                return shape_err(format!("conv2d output extent < 1 for input {h}x{w}, k={ks}, pad={padding}"));
            };
            let geom = ConvGeom { c_in, h, w, c_out: k.dims()[0], ks, stride, pad: padding, ho, wo };
            (kernels::conv2d_forward(x.data(), k.data(), &geom), geom)
        };
        self.tape.push(
            data,
            vec![geom.c_out, geom.ho, geom.wo],
            Op::Conv2d { x: self.id, k: kernels.id, geom },
            "conv2d",
        )
    }

    /// Zero-padded 1-D convolution of a length-`C` vector with an odd kernel.
    pub fn conv1d_same(&self, kernel: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&kernel)?;
        let (data, dims) = {
            let nodes = self.tape.nodes.borrow();
            let (x, k) = (&nodes[self.id].value, &nodes[kernel.id].value);
            if x.rank() != 1 || k.rank() != 1 {
                return shape_err(format!("conv1d: input {:?}, kernel {:?}", x.dims(), k.dims()));
            }
            if k.len() % 2 == 0 {
                return Err(Error::Param(format!("conv1d kernel size {} must be odd", k.len())));
            }
            if k.len() > x.len() {
                return Err(Error::Param(format!("conv1d kernel {} exceeds length {}", k.len(), x.len())));
            }
            (kernels::conv1d_same(x.data(), k.data()), x.dims().to_vec())
        };
        self.tape.push(data, dims, Op::Conv1d { x: self.id, k: kernel.id }, "conv1d")
    }

    pub fn adaptive_avg_pool2d(&self, th: usize, tw: usize) -> Result<Var<'t, T>> {
        let (data, c, h, w) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            if x.rank() != 3 {
                return shape_err(format!("adaptive pool on {:?}", x.dims()));
            }
            let (c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
            if th == 0 || tw == 0 || th > h || tw > w {
                return shape_err(format!("adaptive pool target {th}x{tw} exceeds input {h}x{w}"));
            }
            (kernels::adaptive_avg_pool2d(x.data(), c, h, w, th, tw), c, h, w)
        };
        self.tape.push(data, vec![c, th, tw], Op::Pool { x: self.id, c, h, w, th, tw }, "adaptive_avg_pool2d")
    }

    /// `C×H×W` to a length-`C` vector of channel means.
    pub fn global_avg_pool(&self) -> Result<Var<'t, T>> {
        let (data, c, hw) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            if x.rank() != 3 {
                return shape_err(format!("global pool on {:?}", x.dims()));
            }
            let (c, hw) = (x.dims()[0], x.dims()[1] * x.dims()[2]);
            let inv = T::one() / T::from_usize_lossy(hw);
            let data = x.data().chunks(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
            (data, c, hw)
        };
        self.tape.push(data, vec![c], Op::GlobalAvgPool { x: self.id, hw }, "global_avg_pool")
    }

    pub fn relu(&self) -> Result<Var<'t, T>> {
        self.unary("relu", |v| v.data().iter().map(|&x| x.max(T::zero())).collect(), Op::Relu(self.id))
    }

    pub fn sigmoid(&self) -> Result<Var<'t, T>> {
        self.unary("sigmoid", |v| v.data().iter().map(|&x| sigmoid(x)).collect(), Op::Sigmoid(self.id))
    }

    /// Natural log; non-positive inputs surface as a non-finite error.
    pub fn ln(&self) -> Result<Var<'t, T>> {
        self.unary("ln", |v| v.data().iter().map(|&x| x.ln()).collect(), Op::Ln(self.id))
    }

    pub fn add(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.elementwise(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.elementwise(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.elementwise(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.elementwise(other, "div", |a, b| a / b, Op::Div(self.id, other.id))
    }

    pub fn scale(&self, s: T) -> Result<Var<'t, T>> {
        self.unary("scale", |v| v.data().iter().map(|&x| x * s).collect(), Op::Scale(self.id, s))
    }

    pub fn add_scalar(&self, s: T) -> Result<Var<'t, T>> {
        self.unary("add_scalar", |v| v.data().iter().map(|&x| x + s).collect(), Op::AddScalar(self.id))
    }

    pub fn square(&self) -> Result<Var<'t, T>> {
        self.mul(*self)
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_row_bias(&self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&bias)?;
        let (data, dims) = {
            let nodes = self.tape.nodes.borrow();
            let (x, b) = (&nodes[self.id].value, &nodes[bias.id].value);
            if x.rank() != 2 || b.len() != x.dims()[1] {
                return shape_err(format!("row bias {:?} on {:?}", b.dims(), x.dims()));
            }
            let n = b.len();
            let data = x
                .data()
                .chunks(n)
                .flat_map(|row| row.iter().zip(b.data()).map(|(&a, &c)| a + c))
                .collect();
            (data, x.dims().to_vec())
        };
        self.tape.push(data, dims, Op::AddRowBias { x: self.id, b: bias.id }, "add_row_bias")
    }

    /// Adds one bias per channel of a `C×H×W` map.
    pub fn add_channel_bias(&self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        self.channelwise(bias, "add_channel_bias", |a, b| a + b, |hw| Op::AddChannelBias { x: self.id, b: bias.id, hw })
    }

    /// Multiplies each channel of a `C×H×W` map by its own factor.
    pub fn channel_scale(&self, factors: Var<'t, T>) -> Result<Var<'t, T>> {
        self.channelwise(factors, "channel_scale", |a, b| a * b, |hw| Op::ChannelScale { x: self.id, s: factors.id, hw })
    }

    fn channelwise(
        &self,
        per_channel: Var<'t, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: impl Fn(usize) -> Op<T>,
    ) -> Result<Var<'t, T>> {
        self.same_tape(&per_channel)?;
        let (data, dims, hw) = {
            let nodes = self.tape.nodes.borrow();
            let (x, c) = (&nodes[self.id].value, &nodes[per_channel.id].value);
            if x.rank() != 3 || c.len() != x.dims()[0] {
                return shape_err(format!("{name}: {:?} on {:?}", c.dims(), x.dims()));
            }
            let hw = x.dims()[1] * x.dims()[2];
            let data = x
                .data()
                .chunks(hw)
                .zip(c.data())
                .flat_map(|(plane, &cv)| plane.iter().map(move |&v| (v, cv)))
                .map(|(v, cv)| f(v, cv))
                .collect();
            (data, x.dims().to_vec(), hw)
        };
        self.tape.push(data, dims, op(hw), name)
    }

    pub fn reshape(&self, dims: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        let dims = dims.into();
        let data = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].value;
            if dims.iter().product::<usize>() != v.len() || dims.contains(&0) {
                return shape_err(format!("reshape {:?} into {dims:?}", v.dims()));
            }
            v.data().to_vec()
        };
        self.tape.push(data, dims, Op::Reshape(self.id), "reshape")
    }

    pub fn flatten(&self) -> Result<Var<'t, T>> {
        let n = self.dims().iter().product::<usize>();
        self.reshape(vec![n])
    }

    pub fn sum(&self) -> Result<Var<'t, T>> {
        let s = self.tape.nodes.borrow()[self.id].value.sum();
        self.tape.push(vec![s], vec![1], Op::Sum(self.id), "sum")
    }

    pub fn mean(&self) -> Result<Var<'t, T>> {
        let s = self.tape.nodes.borrow()[self.id].value.mean();
        self.tape.push(vec![s], vec![1], Op::Mean(self.id), "mean")
    }

    /// Softmax along the last axis, with max subtraction.
    pub fn softmax(&self) -> Result<Var<'t, T>> {
        let row = *self.dims().last().expect("rank >= 1");
        self.unary(
            "softmax",
            |v| v.data().chunks(row).flat_map(softmax_row).collect(),
            Op::Softmax { x: self.id, row },
        )
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&self) -> Result<Var<'t, T>> {
        let row = *self.dims().last().expect("rank >= 1");
        self.unary(
            "log_softmax",
            |v| v.data().chunks(row).flat_map(log_softmax_row).collect(),
            Op::LogSoftmax { x: self.id, row },
        )
    }

    /// Picks elements by flat index into a vector of the same length as `indices`.
    pub fn gather(&self, indices: &[usize]) -> Result<Var<'t, T>> {
        let data = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].value;
            if let Some(&bad) = indices.iter().find(|&&i| i >= v.len()) {
                return shape_err(format!("gather index {bad} out of range {}", v.len()));
            }
            if indices.is_empty() {
                return shape_err("gather with no indices");
            }
            indices.iter().map(|&i| v.data()[i]).collect()
        };
        self.tape.push(data, vec![indices.len()], Op::Gather { x: self.id, idx: indices.to_vec() }, "gather")
    }

    pub fn pick(&self, index: usize) -> Result<Var<'t, T>> {
        self.gather(&[index])
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_row<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn log_softmax_row<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
    row.iter().map(|&z| z - lse).collect()
}
