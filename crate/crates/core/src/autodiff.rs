//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation as a node whose inputs are earlier
//! nodes, so node order is already a topological order. [`Tape::backward`]
//! walks it once in reverse from a scalar output.
//!
//! ```
//! use exifgmm_core::autodiff::Tape;
//! use exifgmm_core::tensor::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
//! ```

use crate::scalar::Scalar;
use crate::special;
use crate::tensor::{Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    /// `[b, c] + [c]` broadcast over rows.
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor<T>),
    /// `a * x + b`.
    Affine(Var, T, T),
    Relu(Var),
    Sigmoid(Var),
    /// Value is the exact root; the derivative uses `max(u, eps)`.
    Sqrt(Var, T),
    NormalCdf(Var),
    Clamp(Var, T, T),
    Sum(Var),
    /// Column `[b, 1]` to `[p]` with `v[a] - v[b]` for each pair.
    PairDiff(Var, Vec<(usize, usize)>),
    /// `[b, c, h, w] -> [b, c]`.
    MeanPool(Var),
    #[cfg(feature = "conv")]
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeometry,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulConst(..) => "mul_const",
            Op::Affine(..) => "affine",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Sqrt(..) => "sqrt",
            Op::NormalCdf(..) => "normal_cdf",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum",
            Op::PairDiff(..) => "pair_diff",
            Op::MeanPool(..) => "mean_pool",
            #[cfg(feature = "conv")]
            Op::Conv2d { .. } => "conv2d",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                vec![*a, *b]
            }
            Op::MulConst(a, _)
            | Op::Affine(a, ..)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Sqrt(a, _)
            | Op::NormalCdf(a)
            | Op::Clamp(a, ..)
            | Op::Sum(a)
            | Op::PairDiff(a, _)
            | Op::MeanPool(a) => vec![*a],
            #[cfg(feature = "conv")]
            Op::Conv2d {
                input, weight, bias, ..
            } => vec![*input, *weight, *bias],
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Single-owner recording of a computation.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one scalar output with respect to every node.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when the output does not depend on `var`.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, zeros shaped like `like` when it is unreachable.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

impl<T: Scalar> Tape<T> {
    /// Non-finite values are rejected when built with debug assertions.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    fn get(&self, var: Var) -> Result<&Tensor<T>, TensorError> {
        self.nodes
            .get(var.0)
            .map(|n| &n.value)
            .ok_or(TensorError::UnknownVar(var.0))
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var, TensorError> {
        if self.check_finite && !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var, TensorError> {
        let v = self.get(a)?.map(f);
        self.push(v, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.get(a)?.matmul(self.get(b)?)?;
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let xv = self.get(x)?;
        let bv = self.get(bias)?;
        let cols = bv.len();
        let ok = matches!(xv.dims2(), Some((_, c)) if c == cols);
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(cols) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddBias(x, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.get(a)?.zip_map(self.get(b)?, "add", |x, y| x + y)?;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.get(a)?.zip_map(self.get(b)?, "sub", |x, y| x - y)?;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.get(a)?.zip_map(self.get(b)?, "mul", |x, y| x * y)?;
        self.push(v, Op::Mul(a, b))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, a: Var, c: Tensor<T>) -> Result<Var, TensorError> {
        let v = self.get(a)?.zip_map(&c, "mul_const", |x, y| x * y)?;
        self.push(v, Op::MulConst(a, c))
    }

    pub fn affine(&mut self, a: Var, scale: T, shift: T) -> Result<Var, TensorError> {
        self.unary(a, Op::Affine(a, scale, shift), |x| scale * x + shift)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var, TensorError> {
        self.affine(a, s, T::zero())
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Op::Sigmoid(a), special::sigmoid)
    }

    /// Square root whose derivative is evaluated at `max(u, eps)`.
    pub fn sqrt(&mut self, a: Var, eps: T) -> Result<Var, TensorError> {
        self.unary(a, Op::Sqrt(a, eps), |x| x.max(T::zero()).sqrt())
    }

    pub fn normal_cdf(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Op::NormalCdf(a), special::normal_cdf)
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Result<Var, TensorError> {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.max(lo).min(hi))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.get(a)?.sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Differences `v[i] - v[j]` of a column vector for each `(i, j)`.
    pub fn pair_diff(&mut self, a: Var, pairs: Vec<(usize, usize)>) -> Result<Var, TensorError> {
        let v = self.get(a)?;
        let n = v.len();
        if v.shape().len() != 2 || v.shape()[1] != 1 || pairs.iter().any(|&(i, j)| i >= n || j >= n) {
            return Err(TensorError::ShapeMismatch {
                op: "pair_diff",
                lhs: v.shape().to_vec(),
                rhs: vec![pairs.len()],
            });
        }
        let d = v.data();
        let out: Vec<T> = pairs.iter().map(|&(i, j)| d[i] - d[j]).collect();
        self.push(Tensor::vector(out), Op::PairDiff(a, pairs))
    }

    /// Global average over the two trailing spatial axes of `[b, c, h, w]`.
    pub fn mean_pool(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = self.get(a)?;
        let [b, c, h, w] = match v.shape() {
            &[b, c, h, w] => [b, c, h, w],
            s => {
                return Err(TensorError::ShapeMismatch {
                    op: "mean_pool",
                    lhs: s.to_vec(),
                    rhs: vec![],
                })
            }
        };
        let area = T::from_count(h * w);
        let out: Vec<T> = v
            .data()
            .chunks(h * w)
            .map(|plane| plane.iter().copied().sum::<T>() / area)
            .collect();
        self.push(Tensor::new(vec![b, c], out)?, Op::MeanPool(a))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>, TensorError> {
        let out = self.get(output)?;
        if !out.is_scalar() {
            return Err(TensorError::NotScalar(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::full(out.shape(), T::one()));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            for input in node.op.inputs() {
                if input.0 >= idx {
                    return Err(TensorError::CycleDetected {
                        node: idx,
                        input: input.0,
                    });
                }
            }
            let Some(g) = grads[idx].take() else { continue };
            for (input, contrib) in self.local_grads(node, &g)? {
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>, TensorError> {
        let val = |v: Var| &self.nodes[v.0].value;
        let zero = T::zero();
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let da = g.matmul(&val(*b).transpose()?)?;
                let db = val(*a).transpose()?.matmul(g)?;
                vec![(*a, da), (*b, db)]
            }
            Op::AddBias(x, b) => {
                let cols = val(*b).len();
                let mut db = vec![zero; cols];
                for row in g.data().chunks(cols) {
                    for (acc, &v) in db.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                let db = Tensor::new(val(*b).shape().to_vec(), db)?;
                vec![(*x, g.clone()), (*b, db)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => {
                let da = g.zip_map(val(*b), "mul", |x, y| x * y)?;
                let db = g.zip_map(val(*a), "mul", |x, y| x * y)?;
                vec![(*a, da), (*b, db)]
            }
            Op::MulConst(a, c) => vec![(*a, g.zip_map(c, "mul_const", |x, y| x * y)?)],
            Op::Affine(a, s, _) => {
                let s = *s;
                vec![(*a, g.map(|v| v * s))]
            }
            Op::Relu(a) => {
                let d = g.zip_map(val(*a), "relu", |gv, x| if x > zero { gv } else { zero })?;
                vec![(*a, d)]
            }
            Op::Sigmoid(a) => {
                let d = g.zip_map(&node.value, "sigmoid", |gv, s| gv * s * (T::one() - s))?;
                vec![(*a, d)]
            }
            Op::Sqrt(a, eps) => {
                let eps = *eps;
                let two = T::lit(2.0);
                let d = g.zip_map(val(*a), "sqrt", |gv, u| gv / (two * u.max(eps).sqrt()))?;
                vec![(*a, d)]
            }
            Op::NormalCdf(a) => {
                let d = g.zip_map(val(*a), "normal_cdf", |gv, x| gv * special::normal_pdf(x))?;
                vec![(*a, d)]
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let d = g.zip_map(val(*a), "clamp", |gv, x| if x >= lo && x <= hi { gv } else { zero })?;
                vec![(*a, d)]
            }
            Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.data()[0]))],
            Op::PairDiff(a, pairs) => {
                let mut d = Tensor::zeros(val(*a).shape());
                let dd = d.data_mut();
                for (&(i, j), &gv) in pairs.iter().zip(g.data()) {
                    dd[i] += gv;
                    dd[j] -= gv;
                }
                vec![(*a, d)]
            }
            Op::MeanPool(a) => {
                let shape = val(*a).shape().to_vec();
                let area = shape[2] * shape[3];
                let inv = T::one() / T::from_count(area);
                let mut d = Vec::with_capacity(val(*a).len());
                for &gv in g.data() {
                    d.extend(std::iter::repeat_n(gv * inv, area));
                }
                vec![(*a, Tensor::new(shape, d)?)]
            }
            #[cfg(feature = "conv")]
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let (dx, dw, db) = conv::backward(geom, val(*input), val(*weight), g);
                vec![(*input, dx), (*weight, dw), (*bias, db)]
            }
        })
    }
}

/// Static geometry of a square-kernel 2-D convolution.
#[cfg(feature = "conv")]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[cfg(feature = "conv")]
impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

#[cfg(feature = "conv")]
impl<T: Scalar> Tape<T> {
    /// `[b, ci, h, w]` convolved with `[co, ci, k, k]` plus bias `[co]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        let x = self.get(input)?;
        let w = self.get(weight)?;
        let b = self.get(bias)?;
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        };
        let (&[bn, ci, h, wd], &[co, ci2, k, k2]) = (x.shape(), w.shape()) else {
            return Err(mismatch());
        };
        if ci != ci2 || k != k2 || b.len() != co || stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(mismatch());
        }
        let geom = ConvGeometry {
            batch: bn,
            in_channels: ci,
            out_channels: co,
            height: h,
            width: wd,
            kernel: k,
            stride,
            pad,
        };
        let out = conv::forward(&geom, x, w, b);
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        )
    }
}

#[cfg(feature = "conv")]
mod conv {
    use super::ConvGeometry;
    use crate::scalar::Scalar;
    use crate::tensor::Tensor;

    /// Input coordinate for output index `o` and kernel tap `t`, if inside.
    #[inline]
    fn src(o: usize, t: usize, g: &ConvGeometry, limit: usize) -> Option<usize> {
        let p = (o * g.stride + t).checked_sub(g.pad)?;
        (p < limit).then_some(p)
    }

    pub(super) fn forward<T: Scalar>(g: &ConvGeometry, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        let (oh, ow) = (g.out_height(), g.out_width());
        let (xd, wd_, bd) = (x.data(), w.data(), b.data());
        let mut out = vec![T::zero(); g.batch * g.out_channels * oh * ow];
        for n in 0..g.batch {
            for co in 0..g.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bd[co];
                        for ci in 0..g.in_channels {
                            for ky in 0..g.kernel {
                                let Some(iy) = src(oy, ky, g, g.height) else { continue };
                                for kx in 0..g.kernel {
                                    let Some(ix) = src(ox, kx, g, g.width) else { continue };
                                    let xi = ((n * g.in_channels + ci) * g.height + iy) * g.width + ix;
                                    let wi = ((co * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx;
                                    acc += xd[xi] * wd_[wi];
                                }
                            }
                        }
                        out[((n * g.out_channels + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        Tensor::new(vec![g.batch, g.out_channels, oh, ow], out).expect("conv output shape")
    }

    pub(super) fn backward<T: Scalar>(
        g: &ConvGeometry,
        x: &Tensor<T>,
        w: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
        let (oh, ow) = (g.out_height(), g.out_width());
        let (xd, wd_, gd) = (x.data(), w.data(), grad.data());
        let mut dx = vec![T::zero(); xd.len()];
        let mut dw = vec![T::zero(); wd_.len()];
        let mut db = vec![T::zero(); g.out_channels];
        for n in 0..g.batch {
            for co in 0..g.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let gv = gd[((n * g.out_channels + co) * oh + oy) * ow + ox];
                        db[co] += gv;
                        for ci in 0..g.in_channels {
                            for ky in 0..g.kernel {
                                let Some(iy) = src(oy, ky, g, g.height) else { continue };
                                for kx in 0..g.kernel {
                                    let Some(ix) = src(ox, kx, g, g.width) else { continue };
                                    let xi = ((n * g.in_channels + ci) * g.height + iy) * g.width + ix;
                                    let wi = ((co * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx;
                                    dx[xi] += gv * wd_[wi];
                                    dw[wi] += gv * xd[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
        (
            Tensor::new(x.shape().to_vec(), dx).expect("dx shape"),
            Tensor::new(w.shape().to_vec(), dw).expect("dw shape"),
            Tensor::new(vec![g.out_channels], db).expect("db shape"),
        )
    }
}
