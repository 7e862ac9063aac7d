//! Minimal define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] records operations as they are applied; node indices double as a
//! topological order, so [`Graph::backward`] simply walks the nodes in reverse.
//! Activations are rank-3 `[channels, height, width]` tensors; convolution
//! weights are rank 4 and biases rank 1. Batching happens one level up by
//! building one graph per sample.

mod gradcheck;
mod kernels;
mod params;

pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckEntry, GradCheckReport, SampleStatus};
pub use params::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointTensor, ParamId, ParamStore};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};
use kernels::ConvGeom;

/// Floating-point element type of the engine (`f32` for training, `f64` for
/// gradient checks).
pub trait Scalar:
    Float
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = a · b + beta · c` for strided row/column views.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        c: &mut [Self],
        rsc: usize,
        csc: usize,
        beta: Self,
    );
}

fn check_view(len: usize, rows: usize, cols: usize, rs: usize, cs: usize) {
    if rows > 0 && cols > 0 {
        assert!((rows - 1) * rs + (cols - 1) * cs < len, "gemm view out of bounds");
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                c: &mut [Self],
                rsc: usize,
                csc: usize,
                beta: Self,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                check_view(a.len(), m, k, rsa, csa);
                check_view(b.len(), k, n, rsb, csb);
                check_view(c.len(), m, n, rsc, csc);
                // SAFETY: every view was bounds-checked above and `c` does not alias `a` or `b`.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Dense row-major tensor value.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("dims {dims:?} need {n} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims,
            data: vec![T::zero(); n],
        }
    }

    pub fn chw(c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![c, h, w], data)
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            dims: vec![],
            data: vec![v],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Var, k: usize, cols: Vec<T> },
    ConvT { x: Var, w: Var, b: Var },
    MaxPool { x: Var, argmax: Vec<u32> },
    AvgPool { x: Var },
    Sigmoid(Var),
    Relu(Var),
    Log(Var),
    Mul(Var, Var),
    Add(Var, Var),
    Affine { x: Var, scale: T },
    MulConst { x: Var, c: Vec<T> },
    Concat(Var, Var),
    Channel { x: Var, c: usize },
    Repeat { x: Var, n: usize },
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Select { mask: Vec<bool>, a: Var, b: Var },
}

struct Node<T> {
    dims: Vec<usize>,
    value: Vec<T>,
    grad: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// A single define-by-run computation. Build, call [`Graph::backward`] once, read
/// gradients, drop.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn chw(dims: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    match dims {
        &[c, h, w] => Ok((c, h, w)),
        other => Err(Error::shape(op, format!("expected [c, h, w], got {other:?}"))),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, dims: Vec<usize>, value: Vec<T>, op: Op<T>, parents: &[Var]) -> Var {
        debug_assert_eq!(dims.iter().product::<usize>(), value.len());
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            dims,
            value,
            grad: Vec::new(),
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_leaf(&mut self, t: Tensor<T>, needs_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            dims: t.dims,
            value: t.data,
            grad: Vec::new(),
            op: Op::Leaf,
            needs_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(t, false, None)
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(t, true, None)
    }

    /// Differentiable leaf tied to a parameter slot.
    pub fn param(&mut self, id: ParamId, t: Tensor<T>) -> Var {
        self.push_leaf(t, true, Some(id))
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].dims
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor {
            dims: n.dims.clone(),
            data: n.value.clone(),
        }
    }

    /// Gradient after [`Graph::backward`]; `None` for nodes the root does not depend on.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        let n = &self.nodes[v.0];
        (!n.grad.is_empty()).then_some(n.grad.as_slice())
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    /// 3×3 (or any odd k) stride-1 convolution with replicate padding.
    /// `w` is `[cout, cin, k, k]`, `b` is `[cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (cin, h, wd) = chw(self.dims(x), "conv2d")?;
        let (cout, k) = match *self.dims(w) {
            [co, ci, k1, k2] if ci == cin && k1 == k2 && k1 % 2 == 1 => (co, k1),
            ref d => {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernel {d:?} incompatible with {cin}-channel input"),
                ))
            }
        };
        if self.dims(b) != [cout] {
            return Err(Error::shape("conv2d", format!("bias {:?} for {cout} outputs", self.dims(b))));
        }
        let geom = ConvGeom { cin, cout, h, w: wd, k };
        let (out, cols) = kernels::conv_forward(self.value(x), self.value(w), self.value(b), &geom);
        Ok(self.push(vec![cout, h, wd], out, Op::Conv { x, w, b, k, cols }, &[x, w, b]))
    }

    /// 3×3 transposed convolution doubling the spatial extent.
    /// `w` is `[cin, cout, 3, 3]`, `b` is `[cout]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (cin, h, wd) = chw(self.dims(x), "conv_transpose2d")?;
        let cout = match *self.dims(w) {
            [ci, co, 3, 3] if ci == cin => co,
            ref d => {
                return Err(Error::shape(
                    "conv_transpose2d",
                    format!("kernel {d:?} incompatible with {cin}-channel input"),
                ))
            }
        };
        if self.dims(b) != [cout] {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("bias {:?} for {cout} outputs", self.dims(b)),
            ));
        }
        let geom = ConvGeom { cin, cout, h, w: wd, k: 3 };
        let out = kernels::conv_t_forward(self.value(x), self.value(w), self.value(b), &geom);
        Ok(self.push(vec![cout, 2 * h, 2 * wd], out, Op::ConvT { x, w, b }, &[x, w, b]))
    }

    fn even_dims(&self, x: Var, op: &'static str) -> Result<(usize, usize, usize)> {
        let (c, h, w) = chw(self.dims(x), op)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(op, format!("odd spatial extent {h}x{w}")));
        }
        Ok((c, h, w))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.even_dims(x, "max_pool2")?;
        let (out, argmax) = kernels::max_pool2(self.value(x), c, h, w);
        Ok(self.push(vec![c, h / 2, w / 2], out, Op::MaxPool { x, argmax }, &[x]))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.even_dims(x, "avg_pool2")?;
        let out = kernels::avg_pool2(self.value(x), c, h, w);
        Ok(self.push(vec![c, h / 2, w / 2], out, Op::AvgPool { x }, &[x]))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let dims = self.dims(x).to_vec();
        self.push(dims, out, op, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, T::ln, Op::Log(x))
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        self.unary(x, |v| scale * v + shift, Op::Affine { x, scale })
    }

    fn same_dims(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.dims(a), self.dims(b)),
            ));
        }
        Ok(())
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims(a, b, "mul")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let dims = self.dims(a).to_vec();
        Ok(self.push(dims, out, Op::Mul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims(a, b, "add")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let dims = self.dims(a).to_vec();
        Ok(self.push(dims, out, Op::Add(a, b), &[a, b]))
    }

    /// Element-wise product with a constant of the same length.
    pub fn mul_const(&mut self, x: Var, c: Vec<T>) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(Error::shape(
                "mul_const",
                format!("{} constants for {:?}", c.len(), self.dims(x)),
            ));
        }
        let out = self.value(x).iter().zip(&c).map(|(&v, &k)| v * k).collect();
        let dims = self.dims(x).to_vec();
        Ok(self.push(dims, out, Op::MulConst { x, c }, &[x]))
    }

    /// Stacks channels of `a` then `b`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, h, w) = chw(self.dims(a), "concat_channels")?;
        let (cb, hb, wb) = chw(self.dims(b), "concat_channels")?;
        if (h, w) != (hb, wb) {
            return Err(Error::shape("concat_channels", format!("{h}x{w} vs {hb}x{wb}")));
        }
        let mut out = self.value(a).to_vec();
        out.extend_from_slice(self.value(b));
        Ok(self.push(vec![ca + cb, h, w], out, Op::Concat(a, b), &[a, b]))
    }

    /// Plane `c` as a one-channel tensor.
    pub fn channel(&mut self, x: Var, c: usize) -> Result<Var> {
        let (cs, h, w) = chw(self.dims(x), "channel")?;
        if c >= cs {
            return Err(Error::shape("channel", format!("channel {c} of {cs}")));
        }
        let out = self.value(x)[c * h * w..(c + 1) * h * w].to_vec();
        Ok(self.push(vec![1, h, w], out, Op::Channel { x, c }, &[x]))
    }

    /// Tiles a one-channel tensor `n` times along the channel axis.
    pub fn repeat_channels(&mut self, x: Var, n: usize) -> Result<Var> {
        let (c, h, w) = chw(self.dims(x), "repeat_channels")?;
        if c != 1 {
            return Err(Error::shape("repeat_channels", format!("expected 1 channel, got {c}")));
        }
        let out = self.value(x).repeat(n);
        Ok(self.push(vec![n, h, w], out, Op::Repeat { x, n }, &[x]))
    }

    /// Per-pixel softmax across channels (max-shifted).
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = chw(self.dims(x), "softmax_channels")?;
        let out = channel_softmax(self.value(x), c, h * w, false);
        Ok(self.push(vec![c, h, w], out, Op::Softmax(x), &[x]))
    }

    /// Per-pixel log-softmax across channels.
    pub fn log_softmax_channels(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = chw(self.dims(x), "log_softmax_channels")?;
        let out = channel_softmax(self.value(x), c, h * w, true);
        Ok(self.push(vec![c, h, w], out, Op::LogSoftmax(x), &[x]))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        self.push(vec![], vec![s], Op::Sum(x), &[x])
    }

    /// `mask ? a : b` element-wise; gradients follow the selected branch.
    pub fn select(&mut self, mask: Vec<bool>, a: Var, b: Var) -> Result<Var> {
        self.same_dims(a, b, "select")?;
        if mask.len() != self.value(a).len() {
            return Err(Error::shape("select", "mask length"));
        }
        let out = mask
            .iter()
            .zip(self.value(a).iter().zip(self.value(b)))
            .map(|(&m, (&x, &y))| if m { x } else { y })
            .collect();
        let dims = self.dims(a).to_vec();
        Ok(self.push(dims, out, Op::Select { mask, a, b }, &[a, b]))
    }

    fn add_grad_at(&mut self, v: Var, offset: usize, g: &[T]) {
        let node = &mut self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        if node.grad.is_empty() {
            node.grad = vec![T::zero(); node.value.len()];
        }
        for (a, &b) in node.grad[offset..offset + g.len()].iter_mut().zip(g) {
            *a += b;
        }
    }

    /// Reverse pass from a scalar root. Nodes are visited in reverse
    /// construction order, so accumulation order is deterministic.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, got {:?}", self.nodes[root.0].dims),
            ));
        }
        for n in &mut self.nodes {
            n.grad.clear();
        }
        if !self.nodes[root.0].needs_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = vec![T::one()];
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].grad.is_empty() {
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            let gout = std::mem::take(&mut self.nodes[i].grad);
            for (v, offset, g) in self.local_grads(i, &op, &gout) {
                self.add_grad_at(v, offset, &g);
            }
            self.nodes[i].op = op;
            self.nodes[i].grad = gout;
        }
        Ok(())
    }

    /// Gradient contributions `(parent, offset, values)` of node `i`.
    fn local_grads(&self, i: usize, op: &Op<T>, gout: &[T]) -> Vec<(Var, usize, Vec<T>)> {
        let out = &self.nodes[i].value;
        let val = |v: &Var| self.nodes[v.0].value.as_slice();
        let dims = |v: &Var| self.nodes[v.0].dims.as_slice();
        let zero = T::zero();
        match op {
            Op::Leaf => vec![],
            Op::Conv { x, w, b, k, cols } => {
                let (cin, h, wd) = chw(dims(x), "conv2d").expect("checked at construction");
                let geom = ConvGeom { cin, cout: dims(w)[0], h, w: wd, k: *k };
                let need_dx = self.nodes[x.0].needs_grad;
                let (dx, dw, db) = kernels::conv_backward(gout, cols, val(w), &geom, need_dx);
                let mut out = vec![(*w, 0, dw), (*b, 0, db)];
                if need_dx {
                    out.push((*x, 0, dx));
                }
                out
            }
            Op::ConvT { x, w, b } => {
                let (cin, h, wd) = chw(dims(x), "conv_transpose2d").expect("checked at construction");
                let geom = ConvGeom { cin, cout: dims(w)[1], h, w: wd, k: 3 };
                let (dx, dw, db) = kernels::conv_t_backward(gout, val(x), val(w), &geom);
                vec![(*x, 0, dx), (*w, 0, dw), (*b, 0, db)]
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![zero; val(x).len()];
                for (&a, &g) in argmax.iter().zip(gout) {
                    dx[a as usize] += g;
                }
                vec![(*x, 0, dx)]
            }
            Op::AvgPool { x } => {
                let (c, h, w) = chw(dims(x), "avg_pool2").expect("checked at construction");
                let (oh, ow) = (h / 2, w / 2);
                let quarter = T::of(0.25);
                let mut dx = vec![zero; c * h * w];
                for ci in 0..c {
                    for y in 0..h {
                        for xx in 0..w {
                            dx[(ci * h + y) * w + xx] = gout[(ci * oh + y / 2) * ow + xx / 2] * quarter;
                        }
                    }
                }
                vec![(*x, 0, dx)]
            }
            Op::Sigmoid(x) => {
                let dx = out.iter().zip(gout).map(|(&s, &g)| g * s * (T::one() - s)).collect();
                vec![(*x, 0, dx)]
            }
            Op::Relu(x) => {
                let dx = out
                    .iter()
                    .zip(gout)
                    .map(|(&o, &g)| if o > zero { g } else { zero })
                    .collect();
                vec![(*x, 0, dx)]
            }
            Op::Log(x) => {
                let dx = val(x).iter().zip(gout).map(|(&v, &g)| g / v).collect();
                vec![(*x, 0, dx)]
            }
            Op::Mul(a, b) => {
                let da = val(b).iter().zip(gout).map(|(&v, &g)| g * v).collect();
                let db = val(a).iter().zip(gout).map(|(&v, &g)| g * v).collect();
                vec![(*a, 0, da), (*b, 0, db)]
            }
            Op::Add(a, b) => vec![(*a, 0, gout.to_vec()), (*b, 0, gout.to_vec())],
            Op::Affine { x, scale } => vec![(*x, 0, gout.iter().map(|&g| g * *scale).collect())],
            Op::MulConst { x, c } => vec![(*x, 0, gout.iter().zip(c).map(|(&g, &k)| g * k).collect())],
            Op::Concat(a, b) => {
                let na = val(a).len();
                vec![(*a, 0, gout[..na].to_vec()), (*b, 0, gout[na..].to_vec())]
            }
            Op::Channel { x, c } => vec![(*x, c * gout.len(), gout.to_vec())],
            Op::Repeat { x, n } => {
                let plane = gout.len() / n;
                let mut dx = vec![zero; plane];
                for chunk in gout.chunks_exact(plane) {
                    for (d, &g) in dx.iter_mut().zip(chunk) {
                        *d += g;
                    }
                }
                vec![(*x, 0, dx)]
            }
            Op::Softmax(x) => {
                let c = self.nodes[i].dims[0];
                let hw = out.len() / c;
                let mut dx = vec![zero; out.len()];
                for p in 0..hw {
                    let dot: T = (0..c).map(|k| out[k * hw + p] * gout[k * hw + p]).sum();
                    for k in 0..c {
                        dx[k * hw + p] = out[k * hw + p] * (gout[k * hw + p] - dot);
                    }
                }
                vec![(*x, 0, dx)]
            }
            Op::LogSoftmax(x) => {
                let c = self.nodes[i].dims[0];
                let hw = out.len() / c;
                let mut dx = vec![zero; out.len()];
                for p in 0..hw {
                    let gsum: T = (0..c).map(|k| gout[k * hw + p]).sum();
                    for k in 0..c {
                        dx[k * hw + p] = gout[k * hw + p] - out[k * hw + p].exp() * gsum;
                    }
                }
                vec![(*x, 0, dx)]
            }
            Op::Sum(x) => vec![(*x, 0, vec![gout[0]; val(x).len()])],
            Op::Select { mask, a, b } => {
                let da = mask.iter().zip(gout).map(|(&m, &g)| if m { g } else { zero }).collect();
                let db = mask.iter().zip(gout).map(|(&m, &g)| if m { zero } else { g }).collect();
                vec![(*a, 0, da), (*b, 0, db)]
            }
        }
    }

    /// Adds every parameter leaf's gradient into `grads` (indexed by [`ParamId`]).
    pub fn accumulate_param_grads(&self, grads: &mut [Vec<T>]) {
        for n in &self.nodes {
            if let (Some(id), false) = (n.param, n.grad.is_empty()) {
                for (a, &g) in grads[id.index()].iter_mut().zip(&n.grad) {
                    *a += g;
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn channel_softmax<T: Scalar>(x: &[T], c: usize, hw: usize, log: bool) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for p in 0..hw {
        let m = (0..c).map(|k| x[k * hw + p]).fold(T::neg_infinity(), T::max);
        let z: T = (0..c).map(|k| (x[k * hw + p] - m).exp()).sum();
        let lz = z.ln();
        for k in 0..c {
            let s = x[k * hw + p] - m;
            out[k * hw + p] = if log { s - lz } else { s.exp() / z };
        }
    }
    out
}
