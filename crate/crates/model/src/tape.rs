//! A small reverse-mode autodiff tape over 2-D arrays.
//!
//! Every value is an `Array2`; vectors are `1 x n` rows and scalars `1 x 1`.
//! The tape is generic over the scalar so the same model code runs in `f32`
//! for training and in `f64` for finite-difference checks.

use std::fmt::{Debug, Display};

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};

pub trait Scalar:
    Float + NumAssign + FromPrimitive + LinalgScalar + ScalarOperand + Debug + Display + Default + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn cast<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 converts to every scalar type")
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Const,
    Param(usize),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    MulConst(Var, Array2<T>),
    Scale(Var, T),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<T>,
        inv_std: Vec<T>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    /// Mean negative log-likelihood of `targets` under row-wise softmax.
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Array2<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn shape<T>(a: &Array2<T>) -> (usize, usize) {
    (a.nrows(), a.ncols())
}

fn sum_rows<T: Scalar>(a: &Array2<T>) -> Array2<T> {
    a.sum_axis(Axis(0)).insert_axis(Axis(0))
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

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape(self.value(v))
    }

    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Const)
    }

    /// Leaf whose gradient is reported under parameter id `id`.
    pub fn param(&mut self, id: usize, value: Array2<T>) -> Var {
        self.push(value, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row), (1, self.shape(a).1), "add_row shape mismatch");
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// Multiplies every row of `a` elementwise by a `1 x n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row), (1, self.shape(a).1), "mul_row shape mismatch");
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    /// Elementwise product with a constant (masks, dropout).
    pub fn mul_const(&mut self, a: Var, c: Array2<T>) -> Var {
        assert_eq!(self.shape(a), shape(&c), "mul_const shape mismatch");
        let v = self.value(a) * &c;
        self.push(v, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| if x > T::zero() { x } else { T::zero() });
        self.push(v, Op::Relu(a))
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` for `j > i` is
    /// excluded (probability exactly zero).
    pub fn softmax_rows(&mut self, a: Var, causal: bool) -> Var {
        let x = self.value(a);
        let mut out = Array2::zeros(x.raw_dim());
        for (i, (row, mut o)) in x.rows().into_iter().zip(out.rows_mut()).enumerate() {
            let end = if causal { (i + 1).min(row.len()) } else { row.len() };
            if end == 0 {
                continue;
            }
            let m = row.iter().take(end).fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut z = T::zero();
            for j in 0..end {
                let e = (row[j] - m).exp();
                o[j] = e;
                z += e;
            }
            for j in 0..end {
                o[j] /= z;
            }
        }
        self.push(out, Op::Softmax(a))
    }

    /// Row-wise layer normalization with affine `1 x n` gamma and beta.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(gamma), (1, c));
        assert_eq!(self.shape(beta), (1, c));
        let eps: T = cast(eps);
        let n: T = cast(c as f64);
        let xv = self.value(x);
        let mut xhat = Array2::zeros((r, c));
        let mut inv_std = Vec::with_capacity(r);
        for (row, mut h) in xv.rows().into_iter().zip(xhat.rows_mut()) {
            let mean = row.iter().fold(T::zero(), |a, &b| a + b) / n;
            let var = row.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean)) / n;
            let is = T::one() / (var + eps).sqrt();
            for (hv, &xv) in h.iter_mut().zip(row.iter()) {
                *hv = (xv - mean) * is;
            }
            inv_std.push(is);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<T>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<T>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let src = self.value(a);
        let mut v = Array2::zeros((idx.len(), src.ncols()));
        for (mut row, &i) in v.rows_mut().into_iter().zip(idx) {
            row.assign(&src.row(i));
        }
        self.push(v, Op::GatherRows(a, idx.to_vec()))
    }

    /// Mean over rows of `-log softmax(logits)[row, target]`, as a `1 x 1`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let x = self.value(logits);
        assert_eq!(x.nrows(), targets.len(), "one target per row");
        let mut probs = Array2::zeros(x.raw_dim());
        let mut total = T::zero();
        for ((row, mut p), &t) in x.rows().into_iter().zip(probs.rows_mut()).zip(targets) {
            let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut z = T::zero();
            for (pv, &xv) in p.iter_mut().zip(row.iter()) {
                *pv = (xv - m).exp();
                z += *pv;
            }
            p.mapv_inplace(|v| v / z);
            total += m + z.ln() - row[t];
        }
        let n: T = cast(targets.len().max(1) as f64);
        let v = Array2::from_elem((1, 1), total / n);
        self.push(
            v,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Gradients of the `1 x 1` node `root` with respect to every parameter
    /// leaf, indexed by parameter id (`None` for unused parameters).
    pub fn backward(&self, root: Var, n_params: usize) -> Vec<Option<Array2<T>>> {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));
        let mut out: Vec<Option<Array2<T>>> = (0..n_params).map(|_| None).collect();

        fn acc<T: Scalar>(slot: &mut Option<Array2<T>>, g: Array2<T>) {
            match slot {
                Some(s) => *s += &g,
                None => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Param(id) => acc(&mut out[*id], g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads[a.0], ga);
                    acc(&mut grads[b.0], gb);
                }
                Op::MatMulNt(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads[a.0], ga);
                    acc(&mut grads[b.0], gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads[a.0], g.clone());
                    acc(&mut grads[b.0], g);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads[row.0], sum_rows(&g));
                    acc(&mut grads[a.0], g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads[a.0], ga);
                    acc(&mut grads[b.0], gb);
                }
                Op::MulRow(a, row) => {
                    let gr = sum_rows(&(&g * self.value(*a)));
                    let ga = &g * self.value(*row);
                    acc(&mut grads[row.0], gr);
                    acc(&mut grads[a.0], ga);
                }
                Op::MulConst(a, c) => acc(&mut grads[a.0], &g * c),
                Op::Scale(a, k) => acc(&mut grads[a.0], g * *k),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    ga.zip_mut_with(x, |gv, &xv| {
                        if xv <= T::zero() {
                            *gv = T::zero()
                        }
                    });
                    acc(&mut grads[a.0], ga);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let gy = &g * y;
                    let dot = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = gy - &(y * &dot);
                    acc(&mut grads[a.0], ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    acc(&mut grads[beta.0], sum_rows(&g));
                    acc(&mut grads[gamma.0], sum_rows(&(&g * xhat)));
                    let gh = &g * self.value(*gamma);
                    let n: T = cast(xhat.ncols() as f64);
                    let mut gx = Array2::zeros(xhat.raw_dim());
                    for (r, mut out_row) in gx.rows_mut().into_iter().enumerate() {
                        let ghr = gh.row(r);
                        let xh = xhat.row(r);
                        let m1 = ghr.iter().fold(T::zero(), |a, &b| a + b) / n;
                        let m2 = ghr.iter().zip(xh.iter()).fold(T::zero(), |a, (&p, &q)| a + p * q) / n;
                        for j in 0..out_row.len() {
                            out_row[j] = inv_std[r] * (ghr[j] - m1 - xh[j] * m2);
                        }
                    }
                    acc(&mut grads[x.0], gx);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let r = self.shape(*p).0;
                        acc(&mut grads[p.0], g.slice(s![off..off + r, ..]).to_owned());
                        off += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let c = self.shape(*p).1;
                        acc(&mut grads[p.0], g.slice(s![.., off..off + c]).to_owned());
                        off += c;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    acc(&mut grads[a.0], ga);
                }
                Op::GatherRows(a, idx) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    for (r, &i) in idx.iter().enumerate() {
                        let mut dst = ga.row_mut(i);
                        dst += &g.row(r);
                    }
                    acc(&mut grads[a.0], ga);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let n: T = cast(targets.len().max(1) as f64);
                    let mut ga = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        ga[[r, t]] -= T::one();
                    }
                    let k = g[[0, 0]] / n;
                    ga.mapv_inplace(|v| v * k);
                    acc(&mut grads[logits.0], ga);
                }
            }
        }
        out
    }
}
