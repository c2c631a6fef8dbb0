use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MatMul(Var, Var),
    Sum(Var),
    Mean(Var),
    RowSums(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Silu(Var),
    Square(Var),
    Sqrt(Var),
    Exp(Var),
    Recip(Var),
    Gather(Var, Rc<Vec<usize>>),
    ScatterAdd(Var, Rc<Vec<usize>>),
    Concat(Vec<Var>),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulCol(..) => "mul_col",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::MatMul(..) => "matmul",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowSums(..) => "row_sums",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Silu(..) => "silu",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::Exp(..) => "exp",
            Op::Recip(..) => "recip",
            Op::Gather(..) => "gather",
            Op::ScatterAdd(..) => "scatter_add",
            Op::Concat(..) => "concat",
            Op::Clamp(..) => "clamp",
            Op::Minimum(..) => "minimum",
            Op::Reshape(..) => "reshape",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run recording of primitive tensor operations.
///
/// Nodes are appended in evaluation order, so inputs always precede their
/// consumers and the backward sweep is a single reverse scan.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Accumulated adjoints, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient with respect to `v`, zero-filled when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

/// `c (+)= a · b` for row-major operands given by (rows, cols) and strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths cover m×k, k×n and m×n under the given strides,
    // which callers derive from validated tensor shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable leaf.
    pub fn param(&self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.item()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                node: idx,
                op: op.name(),
            });
        }
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(idx))
    }

    fn rg(&self, vs: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vs.iter().any(|v| nodes[v.0].requires_grad)
    }

    fn unary(&self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = self.nodes.borrow()[a.0].value.map(f);
        let rg = self.rg(&[a]);
        self.push(out, op, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let nodes = self.nodes.borrow();
        let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let out = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            va.with_data(
                va.data()
                    .iter()
                    .zip(vb.data())
                    .map(|(&x, &y)| f(x, y))
                    .collect(),
            )
        };
        let rg = self.rg(&[a, b]);
        self.push(out, op, rg)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.zip(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.zip(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.zip(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&self, a: Var, b: Var) -> Result<Var> {
        self.zip(Op::Minimum(a, b), a, b, |x, y| if x <= y { x } else { y })
    }

    /// `a[n, d] + b[d]`: `b` is expanded along the leading dimension.
    pub fn add_row(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            if va.shape().len() != 2 || vb.len() != va.cols() || vb.shape().len() > 2 || vb.rows() != 1 {
                return Err(shape_err(
                    "add_row",
                    format!("{:?} + {:?}", va.shape(), vb.shape()),
                ));
            }
            let d = va.cols();
            let bd = vb.data();
            let data = va
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + bd[i % d])
                .collect();
            va.with_data(data)
        };
        let rg = self.rg(&[a, b]);
        self.push(out, Op::AddRow(a, b), rg)
    }

    /// `a[n, d] * c[n, 1]`: every row of `a` scaled by the matching entry of `c`.
    pub fn mul_col(&self, a: Var, c: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (va, vc) = (&nodes[a.0].value, &nodes[c.0].value);
            if va.shape().len() != 2 || vc.shape() != [va.rows(), 1] {
                return Err(shape_err(
                    "mul_col",
                    format!("{:?} * {:?}", va.shape(), vc.shape()),
                ));
            }
            let d = va.cols();
            let cd = vc.data();
            let data = va
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x * cd[i / d])
                .collect();
            va.with_data(data)
        };
        let rg = self.rg(&[a, c]);
        self.push(out, Op::MulCol(a, c), rg)
    }

    pub fn scale(&self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn shift(&self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, Op::Shift(a), |x| x + s)
    }

    pub fn neg(&self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            if va.shape().len() != 2 || vb.shape().len() != 2 || va.cols() != vb.rows() {
                return Err(shape_err(
                    "matmul",
                    format!("{:?} x {:?}", va.shape(), vb.shape()),
                ));
            }
            let (m, k, n) = (va.rows(), va.cols(), vb.cols());
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, va.data(), k as isize, 1, vb.data(), n as isize, 1, &mut c, false);
            Tensor::matrix(m, n, c)?
        };
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMul(a, b), rg)
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        let s = self.nodes.borrow()[a.0].value.data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let (s, n) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            (v.data().iter().sum::<f64>(), v.len())
        };
        if n == 0 {
            return Err(shape_err("mean", "empty tensor".into()));
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s / n as f64), Op::Mean(a), rg)
    }

    /// `[n, d] -> [n, 1]`, summing each row.
    pub fn row_sums(&self, a: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            if va.shape().len() != 2 {
                return Err(shape_err("row_sums", format!("{:?}", va.shape())));
            }
            let d = va.cols();
            let data = if d == 0 {
                vec![0.0; va.rows()]
            } else {
                va.data().chunks(d).map(|r| r.iter().sum()).collect()
            };
            Tensor::column(data)
        };
        let rg = self.rg(&[a]);
        self.push(out, Op::RowSums(a), rg)
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn softplus(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Softplus(a), softplus)
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Silu(a), |x| x * sigmoid(x))
    }

    pub fn square(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sqrt(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn recip(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Recip(a), |x| 1.0 / x)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Rows of `a` selected by `idx`.
    pub fn gather_rows(&self, a: Var, idx: Rc<Vec<usize>>) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            if va.shape().len() != 2 {
                return Err(shape_err("gather", format!("{:?}", va.shape())));
            }
            let (n, d) = (va.rows(), va.cols());
            let mut data = Vec::with_capacity(idx.len() * d);
            for &i in idx.iter() {
                if i >= n {
                    return Err(shape_err("gather", format!("row {i} out of {n}")));
                }
                data.extend_from_slice(&va.data()[i * d..(i + 1) * d]);
            }
            Tensor::matrix(idx.len(), d, data)?
        };
        let rg = self.rg(&[a]);
        self.push(out, Op::Gather(a, idx), rg)
    }

    /// Sums row `r` of `a` into output row `idx[r]` of an `[n_out, d]` result.
    pub fn scatter_add_rows(&self, a: Var, idx: Rc<Vec<usize>>, n_out: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            if va.shape().len() != 2 || va.rows() != idx.len() {
                return Err(shape_err(
                    "scatter_add",
                    format!("{:?} with {} indices", va.shape(), idx.len()),
                ));
            }
            let d = va.cols();
            let mut data = vec![0.0; n_out * d];
            for (r, &i) in idx.iter().enumerate() {
                if i >= n_out {
                    return Err(shape_err("scatter_add", format!("row {i} out of {n_out}")));
                }
                for c in 0..d {
                    data[i * d + c] += va.data()[r * d + c];
                }
            }
            Tensor::matrix(n_out, d, data)?
        };
        let rg = self.rg(&[a]);
        self.push(out, Op::ScatterAdd(a, idx), rg)
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let vals: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.0].value).collect();
            let rows = vals.first().map(|v| v.rows()).unwrap_or(0);
            if vals.iter().any(|v| v.shape().len() != 2 || v.rows() != rows) {
                let shapes: Vec<_> = vals.iter().map(|v| v.shape().to_vec()).collect();
                return Err(shape_err("concat", format!("{shapes:?}")));
            }
            let total: usize = vals.iter().map(|v| v.cols()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for v in &vals {
                    let d = v.cols();
                    data.extend_from_slice(&v.data()[r * d..(r + 1) * d]);
                }
            }
            Tensor::matrix(rows, total, data)?
        };
        let rg = self.rg(parts);
        self.push(out, Op::Concat(parts.to_vec()), rg)
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            Tensor::new(shape.to_vec(), va.data().to_vec())?
        };
        let rg = self.rg(&[a]);
        self.push(out, Op::Reshape(a), rg)
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[out.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                nodes[out.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[out.0] = Some(nodes[out.0].value.with_data(vec![1.0]));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=out.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    node: idx,
                    op: node.op.name(),
                });
            }
            let val = |v: Var| &nodes[v.0].value;
            let needs = |v: Var| nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    if needs(*b) {
                        acc(&mut grads, *b, g.clone());
                    }
                    if needs(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*b) {
                        acc(&mut grads, *b, g.map(|x| -x));
                    }
                    if needs(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    if needs(*a) {
                        let d = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                        acc(&mut grads, *a, va.with_data(d));
                    }
                    if needs(*b) {
                        let d = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                        acc(&mut grads, *b, vb.with_data(d));
                    }
                }
                Op::Minimum(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let pick_a: Vec<bool> =
                        va.data().iter().zip(vb.data()).map(|(x, y)| x <= y).collect();
                    if needs(*a) {
                        let d = g
                            .data()
                            .iter()
                            .zip(&pick_a)
                            .map(|(x, &p)| if p { *x } else { 0.0 })
                            .collect();
                        acc(&mut grads, *a, va.with_data(d));
                    }
                    if needs(*b) {
                        let d = g
                            .data()
                            .iter()
                            .zip(&pick_a)
                            .map(|(x, &p)| if p { 0.0 } else { *x })
                            .collect();
                        acc(&mut grads, *b, vb.with_data(d));
                    }
                }
                Op::AddRow(a, b) => {
                    if needs(*b) {
                        let vb = val(*b);
                        let d = vb.len();
                        let mut gb = vec![0.0; d];
                        for (i, x) in g.data().iter().enumerate() {
                            gb[i % d] += x;
                        }
                        acc(&mut grads, *b, vb.with_data(gb));
                    }
                    if needs(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::MulCol(a, c) => {
                    let (va, vc) = (val(*a), val(*c));
                    let d = va.cols();
                    if needs(*c) {
                        let gc = if d == 0 {
                            vec![0.0; vc.len()]
                        } else {
                            g.data()
                                .chunks(d)
                                .zip(va.data().chunks(d))
                                .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                                .collect()
                        };
                        acc(&mut grads, *c, vc.with_data(gc));
                    }
                    if needs(*a) {
                        let ga = g
                            .data()
                            .iter()
                            .enumerate()
                            .map(|(i, x)| x * vc.data()[i / d])
                            .collect();
                        acc(&mut grads, *a, va.with_data(ga));
                    }
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    acc(&mut grads, *a, g.map(|x| x * s));
                }
                Op::Shift(a) | Op::Reshape(a) => {
                    let va = val(*a);
                    acc(&mut grads, *a, va.with_data(g.into_data()));
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                    if needs(*a) {
                        // dA = dC · Bᵀ
                        let mut ga = vec![0.0; m * k];
                        gemm(m, n, k, g.data(), n as isize, 1, vb.data(), 1, n as isize, &mut ga, false);
                        acc(&mut grads, *a, va.with_data(ga));
                    }
                    if needs(*b) {
                        // dB = Aᵀ · dC
                        let mut gb = vec![0.0; k * n];
                        gemm(k, m, n, va.data(), 1, k as isize, g.data(), n as isize, 1, &mut gb, false);
                        acc(&mut grads, *b, vb.with_data(gb));
                    }
                }
                Op::Sum(a) => {
                    let va = val(*a);
                    let s = g.item();
                    acc(&mut grads, *a, va.map(|_| s));
                }
                Op::Mean(a) => {
                    let va = val(*a);
                    let s = g.item() / va.len() as f64;
                    acc(&mut grads, *a, va.map(|_| s));
                }
                Op::RowSums(a) => {
                    let va = val(*a);
                    let d = va.cols();
                    let ga = (0..va.len()).map(|i| g.data()[i / d]).collect();
                    acc(&mut grads, *a, va.with_data(ga));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let d = g.data().iter().zip(y.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                    acc(&mut grads, *a, y.with_data(d));
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let d = g.data().iter().zip(y.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                    acc(&mut grads, *a, y.with_data(d));
                }
                Op::Softplus(a) => {
                    let va = val(*a);
                    let d = g.data().iter().zip(va.data()).map(|(g, x)| g * sigmoid(*x)).collect();
                    acc(&mut grads, *a, va.with_data(d));
                }
                Op::Silu(a) => {
                    let va = val(*a);
                    let d = g
                        .data()
                        .iter()
                        .zip(va.data())
                        .map(|(g, &x)| {
                            let s = sigmoid(x);
                            g * (s + x * s * (1.0 - s))
                        })
                        .collect();
                    acc(&mut grads, *a, va.with_data(d));
                }
                Op::Square(a) => {
                    let va = val(*a);
                    let d = g.data().iter().zip(va.data()).map(|(g, x)| 2.0 * g * x).collect();
                    acc(&mut grads, *a, va.with_data(d));
                }
                Op::Sqrt(a) => {
                    let y = &node.value;
                    let d = g.data().iter().zip(y.data()).map(|(g, y)| 0.5 * g / y).collect();
                    acc(&mut grads, *a, y.with_data(d));
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    let d = g.data().iter().zip(y.data()).map(|(g, y)| g * y).collect();
                    acc(&mut grads, *a, y.with_data(d));
                }
                Op::Recip(a) => {
                    let y = &node.value;
                    let d = g.data().iter().zip(y.data()).map(|(g, y)| -g * y * y).collect();
                    acc(&mut grads, *a, y.with_data(d));
                }
                Op::Clamp(a, lo, hi) => {
                    let va = val(*a);
                    let d = g
                        .data()
                        .iter()
                        .zip(va.data())
                        .map(|(g, x)| if x < lo || x > hi { 0.0 } else { *g })
                        .collect();
                    acc(&mut grads, *a, va.with_data(d));
                }
                Op::Gather(a, ix) => {
                    let va = val(*a);
                    let d = va.cols();
                    let mut ga = vec![0.0; va.len()];
                    for (r, &i) in ix.iter().enumerate() {
                        for c in 0..d {
                            ga[i * d + c] += g.data()[r * d + c];
                        }
                    }
                    acc(&mut grads, *a, va.with_data(ga));
                }
                Op::ScatterAdd(a, ix) => {
                    let va = val(*a);
                    let d = va.cols();
                    let mut ga = Vec::with_capacity(va.len());
                    for &i in ix.iter() {
                        ga.extend_from_slice(&g.data()[i * d..(i + 1) * d]);
                    }
                    acc(&mut grads, *a, va.with_data(ga));
                }
                Op::Concat(parts) => {
                    let total = g.cols();
                    let rows = g.rows();
                    let mut offset = 0;
                    for p in parts {
                        let vp = val(*p);
                        let d = vp.cols();
                        if needs(*p) {
                            let mut gp = Vec::with_capacity(rows * d);
                            for r in 0..rows {
                                gp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + d]);
                            }
                            acc(&mut grads, *p, vp.with_data(gp));
                        }
                        offset += d;
                    }
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}
