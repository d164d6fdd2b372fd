//! Reverse-mode differentiation over the small operation set the pose losses
//! need, including exact derivatives through the SVD rotation projection.
//!
//! A [`Tape`] records nodes in creation order, so every node's inputs precede
//! it and [`Tape::backward`] is a single reverse sweep. Values are small dense
//! row-major matrices ([`Tensor`]); scalars are `1×1`.

pub mod gradcheck;

use crate::error::{Error, Result};
use crate::geometry::{procrustes_factors, Mat3, ProcrustesFactors};

pub use gradcheck::{grad_check, CheckOp, GradCheckReport};

/// Arguments of `acos` are clamped to this band inside the derivative.
pub const ACOS_GRAD_CLAMP: f64 = 1.0 - 1e-7;

/// Minimum `|sᵢ + sⱼ|` for the SVD-projection derivative.
pub const SVD_GAP_TOL: f64 = 1e-6;

/// Floor on the argument of `sqrt` inside its derivative.
const SQRT_GRAD_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data length");
        Tensor { rows, cols, data }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor::new(1, 1, vec![x])
    }

    pub fn vector(v: &[f64]) -> Self {
        Tensor::new(v.len(), 1, v.to_vec())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_mat3(m: &Mat3) -> Self {
        let mut data = Vec::with_capacity(9);
        for r in 0..3 {
            for c in 0..3 {
                data.push(m[(r, c)]);
            }
        }
        Tensor::new(3, 3, data)
    }

    pub fn to_mat3(&self) -> Mat3 {
        Mat3::from_row_slice(&self.data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `k·x + b` (only `k` is kept)
    Affine(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Trace(Var),
    Sum(Var),
    Sqrt(Var),
    Atan(Var),
    Min(Var, Var),
    Max(Var, Var),
    AcosClamped(Var),
    Sigmoid(Var),
    /// Σ smooth-L1(a − b) with threshold β.
    SmoothL1(Var, Var, f64),
    /// Σ (a − b)²
    SquaredDistance(Var, Var),
    /// Elements `[start, start+len)` of the row-major data, as a column.
    Slice(Var, usize),
    Reshape(Var),
    SvdProject(Var, ProcrustesFactors),
    GsoToRot(Var),
    QuatToRot(Var),
    EulerToRot(Var),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Recording of a computation, built eagerly (values are computed as nodes
/// are added).
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// `∂output/∂node` for every node that the output depends on.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when the output does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape(format!("{op}: {}×{} vs {}×{}", a.rows, a.cols, b.rows, b.cols))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    pub fn leaf_scalar(&mut self, x: f64) -> Var {
        self.leaf(Tensor::scalar(x))
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Const, t)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(shape_err(name, ta, tb));
        }
        Ok(Tensor::new(
            ta.rows,
            ta.cols,
            ta.data.iter().zip(&tb.data).map(|(x, y)| f(*x, *y)).collect(),
        ))
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::new(t.rows, t.cols, t.data.iter().map(|x| f(*x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "div", |x, y| x / y)?;
        Ok(self.push(Op::Div(a, b), v))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "min", |x, y| if y < x { y } else { x })?;
        Ok(self.push(Op::Min(a, b), v))
    }

    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "max", |x, y| if y > x { y } else { x })?;
        Ok(self.push(Op::Max(a, b), v))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.affine(a, k, 0.0)
    }

    /// `k·a + b` elementwise.
    pub fn affine(&mut self, a: Var, k: f64, b: f64) -> Var {
        let v = self.map(a, |x| k * x + b);
        self.push(Op::Affine(a, k), v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols != tb.rows {
            return Err(shape_err("matmul", ta, tb));
        }
        let (n, k, m) = (ta.rows, ta.cols, tb.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = (0..k).map(|l| ta.data[i * k + l] * tb.data[l * m + j]).sum();
            }
        }
        let v = Tensor::new(n, m, out);
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = vec![0.0; t.len()];
        for i in 0..t.rows {
            for j in 0..t.cols {
                out[j * t.rows + i] = t.data[i * t.cols + j];
            }
        }
        let v = Tensor::new(t.cols, t.rows, out);
        self.push(Op::Transpose(a), v)
    }

    pub fn trace(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rows != t.cols {
            return Err(Error::Shape(format!("trace of {}×{}", t.rows, t.cols)));
        }
        let s = (0..t.rows).map(|i| t.data[i * t.cols + i]).sum();
        Ok(self.push(Op::Trace(a), Tensor::scalar(s)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x.max(0.0).sqrt());
        self.push(Op::Sqrt(a), v)
    }

    pub fn atan(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::atan);
        self.push(Op::Atan(a), v)
    }

    /// `acos` with the argument clamped to `[-1, 1]`. The derivative is
    /// evaluated at the argument clamped to `±(1 − 1e-7)`, keeping it bounded.
    pub fn acos_clamped(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x.clamp(-1.0, 1.0).acos());
        self.push(Op::AcosClamped(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.map(a, sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    /// Σ smooth-L1(a − b) with threshold `beta`.
    pub fn smooth_l1(&mut self, a: Var, b: Var, beta: f64) -> Result<Var> {
        let d = self.zip(a, b, "smooth_l1", |x, y| smooth_l1_value(x - y, beta))?;
        let s = d.data.iter().sum();
        Ok(self.push(Op::SmoothL1(a, b, beta), Tensor::scalar(s)))
    }

    /// Σ (a − b)²
    pub fn squared_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.zip(a, b, "squared_distance", |x, y| (x - y) * (x - y))?;
        let s = d.data.iter().sum();
        Ok(self.push(Op::SquaredDistance(a, b), Tensor::scalar(s)))
    }

    /// Elements `[start, start + len)` of the row-major data as a column vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.len() {
            return Err(Error::Shape(format!(
                "slice [{start}, {}) of {} elements",
                start + len,
                t.len()
            )));
        }
        let v = Tensor::vector(&t.data[start..start + len]);
        Ok(self.push(Op::Slice(a, start), v))
    }

    /// Single element as a scalar node.
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        self.slice(a, i, 1)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(a);
        if rows * cols != t.len() {
            return Err(Error::Shape(format!("reshape {} elements to {rows}×{cols}", t.len())));
        }
        let v = Tensor::new(rows, cols, t.data.clone());
        Ok(self.push(Op::Reshape(a), v))
    }

    /// Nearest rotation to a 3×3 (or 9-element, row-major) node.
    pub fn svd_project(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.len() != 9 {
            return Err(Error::Shape(format!("svd_project of {} elements", t.len())));
        }
        let f = procrustes_factors(&t.to_mat3())?;
        let r = f.u * f.v.transpose();
        Ok(self.push(Op::SvdProject(a, f), Tensor::from_mat3(&r)))
    }

    /// Gram-Schmidt rotation from a 6-element node `(a, b)`.
    pub fn gso_to_rot(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.len() != 6 {
            return Err(Error::Shape(format!("gso_to_rot of {} elements", t.len())));
        }
        let r = crate::geometry::gso_to_rot(&crate::geometry::SixD {
            a: crate::geometry::Vec3::new(t.data[0], t.data[1], t.data[2]),
            b: crate::geometry::Vec3::new(t.data[3], t.data[4], t.data[5]),
        })?;
        Ok(self.push(Op::GsoToRot(a), Tensor::from_mat3(r.matrix())))
    }

    /// Rotation from a 4-element `(w, x, y, z)` node, normalized internally.
    pub fn quat_to_rot(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.len() != 4 {
            return Err(Error::Shape(format!("quat_to_rot of {} elements", t.len())));
        }
        let d = &t.data;
        let r = crate::geometry::quat_to_rot(&crate::geometry::Quat::new(d[0], d[1], d[2], d[3]))?;
        Ok(self.push(Op::QuatToRot(a), Tensor::from_mat3(r.matrix())))
    }

    /// Rotation from a `(yaw, pitch, roll)` node.
    pub fn euler_to_rot(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.len() != 3 {
            return Err(Error::Shape(format!("euler_to_rot of {} elements", t.len())));
        }
        let r = crate::geometry::euler_to_rot(t.data[0], t.data[1], t.data[2]);
        Ok(self.push(Op::EulerToRot(a), Tensor::from_mat3(r.matrix())))
    }

    /// Gradients of a scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if !out.is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar output, got {}×{}",
                out.rows, out.cols
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::scalar(1.0));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| (n.value.rows, n.value.cols)).collect(),
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |v: Var, contrib: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let like = |t: &Tensor, data: Vec<f64>| Tensor::new(t.rows, t.cols, data);
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Const => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, like(g, g.data.iter().map(|x| -x).collect()));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, like(g, g.data.iter().zip(&tb.data).map(|(g, y)| g * y).collect()));
                acc(*b, like(g, g.data.iter().zip(&ta.data).map(|(g, x)| g * x).collect()));
            }
            Op::Div(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, like(g, g.data.iter().zip(&tb.data).map(|(g, y)| g / y).collect()));
                acc(
                    *b,
                    like(
                        g,
                        g.data
                            .iter()
                            .zip(ta.data.iter().zip(&tb.data))
                            .map(|(g, (x, y))| -g * x / (y * y))
                            .collect(),
                    ),
                );
            }
            Op::Affine(a, k) => acc(*a, like(g, g.data.iter().map(|x| k * x).collect())),
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, k, m) = (ta.rows, ta.cols, tb.cols);
                let mut ga = vec![0.0; n * k];
                let mut gb = vec![0.0; k * m];
                for r in 0..n {
                    for c in 0..m {
                        let gv = g.data[r * m + c];
                        for l in 0..k {
                            ga[r * k + l] += gv * tb.data[l * m + c];
                            gb[l * m + c] += gv * ta.data[r * k + l];
                        }
                    }
                }
                acc(*a, Tensor::new(n, k, ga));
                acc(*b, Tensor::new(k, m, gb));
            }
            Op::Transpose(a) => {
                let mut out = vec![0.0; g.len()];
                for r in 0..g.rows {
                    for c in 0..g.cols {
                        out[c * g.rows + r] = g.data[r * g.cols + c];
                    }
                }
                acc(*a, Tensor::new(g.cols, g.rows, out));
            }
            Op::Trace(a) => {
                let t = val(*a);
                let mut out = Tensor::zeros(t.rows, t.cols);
                for d in 0..t.rows {
                    out.data[d * t.cols + d] = g.data[0];
                }
                acc(*a, out);
            }
            Op::Sum(a) => {
                let t = val(*a);
                acc(*a, Tensor::new(t.rows, t.cols, vec![g.data[0]; t.len()]));
            }
            Op::Sqrt(a) => {
                let t = val(*a);
                acc(
                    *a,
                    like(
                        t,
                        g.data
                            .iter()
                            .zip(&t.data)
                            .map(|(g, x)| g * 0.5 / x.max(SQRT_GRAD_FLOOR).sqrt())
                            .collect(),
                    ),
                );
            }
            Op::Atan(a) => {
                let t = val(*a);
                acc(
                    *a,
                    like(t, g.data.iter().zip(&t.data).map(|(g, x)| g / (1.0 + x * x)).collect()),
                );
            }
            Op::Min(a, b) | Op::Max(a, b) => {
                let is_min = matches!(node.op, Op::Min(..));
                let (ta, tb) = (val(*a), val(*b));
                let mut ga = vec![0.0; g.len()];
                let mut gb = vec![0.0; g.len()];
                for k in 0..g.len() {
                    let pick_b = if is_min {
                        tb.data[k] < ta.data[k]
                    } else {
                        tb.data[k] > ta.data[k]
                    };
                    if pick_b {
                        gb[k] = g.data[k];
                    } else {
                        ga[k] = g.data[k];
                    }
                }
                acc(*a, like(g, ga));
                acc(*b, like(g, gb));
            }
            Op::AcosClamped(a) => {
                let t = val(*a);
                acc(
                    *a,
                    like(
                        t,
                        g.data
                            .iter()
                            .zip(&t.data)
                            .map(|(g, x)| {
                                let c = x.clamp(-ACOS_GRAD_CLAMP, ACOS_GRAD_CLAMP);
                                -g / (1.0 - c * c).sqrt()
                            })
                            .collect(),
                    ),
                );
            }
            Op::Sigmoid(a) => {
                let s = &node.value;
                acc(
                    *a,
                    like(s, g.data.iter().zip(&s.data).map(|(g, s)| g * s * (1.0 - s)).collect()),
                );
            }
            Op::SmoothL1(a, b, beta) => {
                let (ta, tb) = (val(*a), val(*b));
                let d: Vec<f64> = ta
                    .data
                    .iter()
                    .zip(&tb.data)
                    .map(|(x, y)| g.data[0] * smooth_l1_grad(x - y, *beta))
                    .collect();
                acc(*b, like(ta, d.iter().map(|x| -x).collect()));
                acc(*a, like(ta, d));
            }
            Op::SquaredDistance(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let d: Vec<f64> = ta
                    .data
                    .iter()
                    .zip(&tb.data)
                    .map(|(x, y)| 2.0 * g.data[0] * (x - y))
                    .collect();
                acc(*b, like(ta, d.iter().map(|x| -x).collect()));
                acc(*a, like(ta, d));
            }
            Op::Slice(a, start) => {
                let t = val(*a);
                let mut out = Tensor::zeros(t.rows, t.cols);
                out.data[*start..*start + g.len()].copy_from_slice(&g.data);
                acc(*a, out);
            }
            Op::Reshape(a) => {
                let t = val(*a);
                acc(*a, like(t, g.data.clone()));
            }
            Op::SvdProject(a, f) => {
                let gm = svd_project_vjp(f, &g.to_mat3())?;
                let t = val(*a);
                acc(*a, like(t, Tensor::from_mat3(&gm).data));
            }
            Op::GsoToRot(a) => {
                let t = val(*a);
                acc(*a, like(t, gso_vjp(&t.data, &node.value, g).to_vec()));
            }
            Op::QuatToRot(a) => {
                let t = val(*a);
                acc(*a, like(t, quat_vjp(&t.data, g).to_vec()));
            }
            Op::EulerToRot(a) => {
                let t = val(*a);
                acc(*a, like(t, euler_vjp(&t.data, g).to_vec()));
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Piecewise smooth-L1 of a residual `d`.
pub fn smooth_l1_value(d: f64, beta: f64) -> f64 {
    let a = d.abs();
    if a < beta {
        0.5 * d * d / beta
    } else {
        a - 0.5 * beta
    }
}

/// Derivative of [`smooth_l1_value`]; at `|d| = β` both branches give `±1`.
pub fn smooth_l1_grad(d: f64, beta: f64) -> f64 {
    if d.abs() < beta {
        d / beta
    } else {
        d.signum()
    }
}

/// Vector-Jacobian product of the special-orthogonal Procrustes projection.
///
/// With `M = U' diag(s) Vᵀ` (reflection folded into `U'` and `s₃`), the
/// projection is `R = U'Vᵀ` and `dR = U' Ω Vᵀ` with
/// `Ωᵢⱼ = (Xᵢⱼ − Xⱼᵢ)/(sᵢ + sⱼ)`, `X = U'ᵀ dM V`. The adjoint is therefore
/// `∂L/∂M = U' B Vᵀ` with `Bᵢⱼ = (Aᵢⱼ − Aⱼᵢ)/(sᵢ + sⱼ)`, `A = U'ᵀ G V`.
fn svd_project_vjp(f: &ProcrustesFactors, upstream: &Mat3) -> Result<Mat3> {
    let a = f.u.transpose() * upstream * f.v;
    let mut b = Mat3::zeros();
    for i in 0..3 {
        for j in (i + 1)..3 {
            let denom = f.s[i] + f.s[j];
            if denom.abs() < SVD_GAP_TOL {
                return Err(Error::NearDegenerateSvd { gap: denom.abs() });
            }
            let w = (a[(i, j)] - a[(j, i)]) / denom;
            b[(i, j)] = w;
            b[(j, i)] = -w;
        }
    }
    Ok(f.u * b * f.v.transpose())
}

/// Gradient of a scalar loss with respect to `M`, given the upstream
/// gradient with respect to `svd_project_so3(M)`.
pub fn svd_project_backward(m: &Mat3, upstream: &Mat3) -> Result<Mat3> {
    svd_project_vjp(&procrustes_factors(m)?, upstream)
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn column(t: &Tensor, c: usize) -> [f64; 3] {
    [t.data[c], t.data[3 + c], t.data[6 + c]]
}

fn gso_vjp(x: &[f64], r: &Tensor, g: &Tensor) -> [f64; 6] {
    let a = [x[0], x[1], x[2]];
    let b = [x[3], x[4], x[5]];
    let (c1, c2) = (column(r, 0), column(r, 1));
    let (g1, g2, g3) = (column(g, 0), column(g, 1), column(g, 2));
    let na = dot(a, a).sqrt();
    let bc = dot(b, c1);
    let u = [b[0] - bc * c1[0], b[1] - bc * c1[1], b[2] - bc * c1[2]];
    let nu = dot(u, u).sqrt();

    // c3 = c1 × c2
    let mut gc1 = g1;
    let mut gc2 = g2;
    let t1 = cross(c2, g3);
    let t2 = cross(g3, c1);
    for k in 0..3 {
        gc1[k] += t1[k];
        gc2[k] += t2[k];
    }
    // c2 = u / |u|
    let p = dot(c2, gc2);
    let gu: [f64; 3] = std::array::from_fn(|k| (gc2[k] - c2[k] * p) / nu);
    // u = b − (b·c1) c1
    let c1gu = dot(c1, gu);
    let gb: [f64; 3] = std::array::from_fn(|k| gu[k] - c1[k] * c1gu);
    for k in 0..3 {
        gc1[k] -= bc * gu[k] + b[k] * c1gu;
    }
    // c1 = a / |a|
    let q = dot(c1, gc1);
    let ga: [f64; 3] = std::array::from_fn(|k| (gc1[k] - c1[k] * q) / na);
    [ga[0], ga[1], ga[2], gb[0], gb[1], gb[2]]
}

fn frob(g: &Tensor, m: [[f64; 3]; 3]) -> f64 {
    let mut s = 0.0;
    for (r, row) in m.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            s += g.data[3 * r + c] * v;
        }
    }
    s
}

fn quat_vjp(x: &[f64], g: &Tensor) -> [f64; 4] {
    let n = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + x[3] * x[3]).sqrt();
    let (w, a, b, c) = (x[0] / n, x[1] / n, x[2] / n, x[3] / n);
    let dw = [
        [0.0, -2.0 * c, 2.0 * b],
        [2.0 * c, 0.0, -2.0 * a],
        [-2.0 * b, 2.0 * a, 0.0],
    ];
    let dx = [
        [0.0, 2.0 * b, 2.0 * c],
        [2.0 * b, -4.0 * a, -2.0 * w],
        [2.0 * c, 2.0 * w, -4.0 * a],
    ];
    let dy = [
        [-4.0 * b, 2.0 * a, 2.0 * w],
        [2.0 * a, 0.0, 2.0 * c],
        [-2.0 * w, 2.0 * c, -4.0 * b],
    ];
    let dz = [
        [-4.0 * c, -2.0 * w, 2.0 * a],
        [2.0 * w, -4.0 * c, 2.0 * b],
        [2.0 * a, 2.0 * b, 0.0],
    ];
    let gh = [frob(g, dw), frob(g, dx), frob(g, dy), frob(g, dz)];
    let qh = [w, a, b, c];
    let p: f64 = gh.iter().zip(&qh).map(|(g, q)| g * q).sum();
    std::array::from_fn(|k| (gh[k] - qh[k] * p) / n)
}

fn mat_mul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

fn euler_vjp(x: &[f64], g: &Tensor) -> [f64; 3] {
    let (sy, cy) = x[0].sin_cos();
    let (sp, cp) = x[1].sin_cos();
    let (sr, cr) = x[2].sin_cos();
    let rz = [[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]];
    let drz = [[-sy, -cy, 0.0], [cy, -sy, 0.0], [0.0, 0.0, 0.0]];
    let ry = [[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]];
    let dry = [[-sp, 0.0, cp], [0.0, 0.0, 0.0], [-cp, 0.0, -sp]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]];
    let drx = [[0.0, 0.0, 0.0], [0.0, -sr, -cr], [0.0, cr, -sr]];
    [
        frob(g, mat_mul(mat_mul(drz, ry), rx)),
        frob(g, mat_mul(mat_mul(rz, dry), rx)),
        frob(g, mat_mul(mat_mul(rz, ry), drx)),
    ]
}
