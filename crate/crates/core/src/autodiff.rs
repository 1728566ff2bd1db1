//! A small reverse-mode tape over dense matrices.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is
//! a valid reverse topological order. Every op caches whatever its
//! vector-Jacobian product needs at forward time.

use crate::linalg::{dot, Matrix};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) const LN_EPS: f64 = 1e-5;
/// Row norms below this are clamped before division.
pub const NORM_FLOOR: f64 = 1e-12;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix<T>,
        rstd: Vec<T>,
    },
    SoftmaxRows(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    ReplaceRows {
        x: Var,
        token: Var,
        mask: Vec<bool>,
    },
    MeanRows(Var),
    NormalizeRows {
        x: Var,
        norms: Vec<T>,
    },
    CosineMean {
        x: Var,
        target: Matrix<T>,
        rows: Vec<bool>,
    },
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_nt(self.value(b));
        self.push(v, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// `a + 1·row` with `row` of shape 1 x cols.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        debug_assert_eq!(r.rows(), 1);
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            for (x, &b) in v.row_mut(i).iter_mut().zip(r.as_slice()) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).scaled(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a))
    }

    /// Row-wise layer normalization with affine `gamma`/`beta` rows.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (n, c) = xv.shape();
        let g = self.value(gamma).as_slice();
        let b = self.value(beta).as_slice();
        let eps = T::lit(LN_EPS);
        let inv_c = T::one() / T::of_usize(c);
        let mut xhat = Matrix::zeros(n, c);
        let mut out = Matrix::zeros(n, c);
        let mut rstd = Vec::with_capacity(n);
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().copied().sum::<T>() * inv_c;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[(i, j)] = h;
                out[(i, j)] = h * g[j] + b[j];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            let row = v.row_mut(i);
            let m = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let mut s = T::zero();
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let src = self.value(a);
        let v = Matrix::from_fn(src.rows(), width, |i, j| src[(i, start + j)]);
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let src = self.value(p);
            for i in 0..rows {
                v.row_mut(i)[off..off + src.cols()].copy_from_slice(src.row(i));
            }
            off += src.cols();
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Row-major reshape; consecutive rows merge into one when `cols` grows.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = self
            .value(a)
            .clone()
            .reshaped(rows, cols)
            .expect("reshape preserves element count");
        self.push(v, Op::Reshape(a))
    }

    /// Rows flagged in `mask` are overwritten by the 1 x cols `token`.
    pub fn replace_rows(&mut self, x: Var, token: Var, mask: &[bool]) -> Var {
        let mut v = self.value(x).clone();
        let t = self.value(token).as_slice();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                v.row_mut(i).copy_from_slice(t);
            }
        }
        self.push(
            v,
            Op::ReplaceRows {
                x,
                token,
                mask: mask.to_vec(),
            },
        )
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let (n, c) = src.shape();
        let inv = T::one() / T::of_usize(n);
        let mut v = Matrix::zeros(1, c);
        for i in 0..n {
            for (o, &x) in v.as_mut_slice().iter_mut().zip(src.row(i)) {
                *o += x;
            }
        }
        let v = v.scaled(inv);
        self.push(v, Op::MeanRows(a))
    }

    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let floor = T::lit(NORM_FLOOR);
        let mut v = src.clone();
        let mut norms = Vec::with_capacity(src.rows());
        for i in 0..src.rows() {
            let nrm = dot(src.row(i), src.row(i)).sqrt().max(floor);
            norms.push(nrm);
            for e in v.row_mut(i) {
                *e /= nrm;
            }
        }
        self.push(v, Op::NormalizeRows { x, norms })
    }

    /// Mean over rows of cos(x_r, target_r); `target` is a constant.
    pub fn cosine_mean(&mut self, x: Var, target: &Matrix<T>) -> Var {
        let rows = vec![true; target.rows()];
        self.cosine_mean_rows(x, target, &rows)
    }

    /// As [`Tape::cosine_mean`], averaging only over the selected rows.
    pub fn cosine_mean_rows(&mut self, x: Var, target: &Matrix<T>, rows: &[bool]) -> Var {
        let v = Matrix::from_vec(
            1,
            1,
            vec![cosine_rows_mean_selected(self.value(x), target, rows)],
        )
        .expect("1x1");
        self.push(
            v,
            Op::CosineMean {
                x,
                target: target.clone(),
                rows: rows.to_vec(),
            },
        )
    }

    /// Reverse sweep seeded with upstream gradients for the given outputs.
    pub fn backward(&self, seeds: &[(Var, Matrix<T>)]) -> Gradients<T> {
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            accumulate(&mut grads, *v, g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_nt(self.value(*b));
                    let gb = self.value(*a).matmul_tn(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulNt(a, b) => {
                    // y = a bᵀ: da = g b, db = gᵀ a
                    let ga = g.matmul(self.value(*b));
                    let gb = g.matmul_tn(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &x) in gr.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => {
                    accumulate(&mut grads, *a, g.scaled(*s));
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    for (o, &xv) in ga.as_mut_slice().iter_mut().zip(x.as_slice()) {
                        *o *= gelu_grad(xv);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let gam = self.value(*gamma).as_slice();
                    let (n, c) = g.shape();
                    let inv_c = T::one() / T::of_usize(c);
                    let mut gx = Matrix::zeros(n, c);
                    let mut gg = Matrix::zeros(1, c);
                    let mut gb = Matrix::zeros(1, c);
                    let mut dxhat = vec![T::zero(); c];
                    for i in 0..n {
                        let gr = g.row(i);
                        let hr = xhat.row(i);
                        for j in 0..c {
                            gg.as_mut_slice()[j] += gr[j] * hr[j];
                            gb.as_mut_slice()[j] += gr[j];
                            dxhat[j] = gr[j] * gam[j];
                        }
                        let mean_d = dxhat.iter().copied().sum::<T>() * inv_c;
                        let mean_dh = dot(&dxhat, hr) * inv_c;
                        let out = gx.row_mut(i);
                        for j in 0..c {
                            out[j] = rstd[i] * (dxhat[j] - mean_d - hr[j] * mean_dh);
                        }
                    }
                    accumulate(&mut grads, *gamma, gg);
                    accumulate(&mut grads, *beta, gb);
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = g;
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let s = dot(ga.row(i), yr);
                        for (o, &yv) in ga.row_mut(i).iter_mut().zip(yr) {
                            *o = yv * (*o - s);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(rows, cols);
                    for i in 0..rows {
                        ga.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let gp = Matrix::from_fn(g.rows(), w, |i, j| g[(i, off + j)]);
                        off += w;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::Reshape(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, g.reshaped(r, c).expect("same size"));
                }
                Op::ReplaceRows { x, token, mask } => {
                    let mut gt = Matrix::zeros(1, g.cols());
                    let mut gx = g;
                    for (i, &m) in mask.iter().enumerate() {
                        if m {
                            for (o, e) in gt.as_mut_slice().iter_mut().zip(gx.row_mut(i)) {
                                *o += *e;
                                *e = T::zero();
                            }
                        }
                    }
                    accumulate(&mut grads, *token, gt);
                    accumulate(&mut grads, *x, gx);
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).rows();
                    let inv = T::one() / T::of_usize(n);
                    let ga = Matrix::from_fn(n, g.cols(), |_, j| g[(0, j)] * inv);
                    accumulate(&mut grads, *a, ga);
                }
                Op::NormalizeRows { x, norms } => {
                    let y = &node.value;
                    let mut gx = g;
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let s = dot(gx.row(i), yr);
                        for (o, &yv) in gx.row_mut(i).iter_mut().zip(yr) {
                            *o = (*o - yv * s) / norms[i];
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::CosineMean { x, target, rows } => {
                    let xv = self.value(*x);
                    let n = xv.rows();
                    let floor = T::lit(NORM_FLOOR);
                    let count = rows.iter().filter(|&&r| r).count().max(1);
                    let up = g[(0, 0)] / T::of_usize(count);
                    let mut gx = Matrix::zeros(n, xv.cols());
                    for i in (0..n).filter(|&i| rows[i]) {
                        let xr = xv.row(i);
                        let tr = target.row(i);
                        let raw_x = dot(xr, xr).sqrt();
                        let nx = raw_x.max(floor);
                        let nt = dot(tr, tr).sqrt().max(floor);
                        let cos = dot(xr, tr) / (nx * nt);
                        let clamped = raw_x < floor;
                        let out = gx.row_mut(i);
                        for j in 0..xr.len() {
                            let mut d = tr[j] / (nx * nt);
                            if !clamped {
                                d -= cos * xr[j] / (nx * nx);
                            }
                            out[j] = up * d;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of leaves after a reverse sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<T>> {
        self.grads[v.0].take()
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// tanh approximation of GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let k = T::lit(SQRT_2_OVER_PI);
    let c = T::lit(GELU_C);
    let half = T::lit(0.5);
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::lit(SQRT_2_OVER_PI);
    let c = T::lit(GELU_C);
    let half = T::lit(0.5);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::lit(3.0) * c * x * x)
}

/// Mean row-wise cosine similarity with the small-norm clamp.
pub fn cosine_rows_mean<T: Scalar>(x: &Matrix<T>, target: &Matrix<T>) -> T {
    cosine_rows_mean_selected(x, target, &vec![true; x.rows()])
}

pub fn cosine_rows_mean_selected<T: Scalar>(x: &Matrix<T>, target: &Matrix<T>, rows: &[bool]) -> T {
    assert_eq!(x.shape(), target.shape(), "cosine operands must match");
    assert_eq!(rows.len(), x.rows(), "row selector length");
    let floor = T::lit(NORM_FLOOR);
    let n = rows.iter().filter(|&&r| r).count().max(1);
    let mut acc = T::zero();
    for i in (0..x.rows()).filter(|&i| rows[i]) {
        let (a, b) = (x.row(i), target.row(i));
        let na = dot(a, a).sqrt().max(floor);
        let nb = dot(b, b).sqrt().max(floor);
        acc += dot(a, b) / (na * nb);
    }
    acc / T::of_usize(n)
}
