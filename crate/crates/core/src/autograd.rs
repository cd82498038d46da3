//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value and the indices of its inputs. [`Graph::backward`] walks the tape in
//! reverse and accumulates gradients for every parameter leaf, keyed by
//! [`ParamId`]. Graphs are built per forward pass and dropped afterwards.

use crate::matrix::Matrix;
use crate::params::{Gradients, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Square(Var),
    Abs(Var),
    Gather(Var, Vec<Option<usize>>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    SoftmaxRows(Var),
    MeanRows(Var),
    StandardizeCols {
        src: Var,
        sigma: Vec<T>,
        clamped: Vec<bool>,
    },
    L2NormalizeRows {
        src: Var,
        norms: Vec<T>,
        clamped: Vec<bool>,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = match op {
            Op::Param(_) => true,
            Op::Leaf => false,
            _ => parents.iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    #[inline]
    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// A trainable parameter leaf.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id), &[])
    }

    /// A parameter read as a constant (frozen subsystem).
    pub fn frozen(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.constant(store.get(id).clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    /// `a + b` with the `1 × c` row `b` broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(b), (1, c), "add_row expects a 1x{c} row");
        let bv = self.value(b).as_slice();
        let av = self.value(a);
        let v = Matrix::from_fn(r, c, |i, j| av[(i, j)] + bv[j]);
        self.push(v, Op::AddRow(a, b), &[a, b])
    }

    /// `a ⊙ b` with the `1 × c` row `b` broadcast over every row of `a`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(b), (1, c), "mul_row expects a 1x{c} row");
        let bv = self.value(b).as_slice();
        let av = self.value(a);
        let v = Matrix::from_fn(r, c, |i, j| av[(i, j)] * bv[j]);
        self.push(v, Op::MulRow(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let v = self.value(a).scale(k);
        self.push(v, Op::Scale(a, k), &[a])
    }

    pub fn offset(&mut self, a: Var, k: T) -> Var {
        let v = self.value(a).map(|x| x + k);
        self.push(v, Op::Offset(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(T::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(num_traits::Float::abs);
        self.push(v, Op::Abs(a), &[a])
    }

    /// Output row `t` is source row `index[t]`, or zeros for `None`.
    pub fn gather_rows(&mut self, src: Var, index: Vec<Option<usize>>) -> Var {
        let sv = self.value(src);
        let c = sv.cols();
        let mut out = Matrix::zeros(index.len(), c);
        for (t, ix) in index.iter().enumerate() {
            if let Some(i) = *ix {
                out.row_mut(t).copy_from_slice(sv.row(i));
            }
        }
        self.push(out, Op::Gather(src, index), &[src])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        assert!(
            parts.iter().all(|&p| self.shape(p).0 == rows),
            "concat_cols row mismatch"
        );
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Matrix::zeros(rows, total);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            let c = pv.cols();
            for r in 0..rows {
                out.row_mut(r)[off..off + c].copy_from_slice(pv.row(r));
            }
            off += c;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        assert!(
            parts.iter().all(|&p| self.shape(p).1 == cols),
            "concat_rows col mismatch"
        );
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).as_slice());
        }
        let rows = data.len() / cols.max(1);
        let out = Matrix::from_vec(rows, cols, data).expect("consistent concat");
        self.push(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Var {
        let sv = self.value(src);
        assert!(start + len <= sv.cols());
        let out = Matrix::from_fn(sv.rows(), len, |r, c| sv[(r, start + c)]);
        self.push(out, Op::SliceCols(src, start), &[src])
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Var {
        let sv = self.value(src);
        assert!(start + len <= sv.rows());
        let c = sv.cols();
        let out = Matrix::from_vec(len, c, sv.as_slice()[start * c..(start + len) * c].to_vec())
            .expect("slice within bounds");
        self.push(out, Op::SliceRows(src, start), &[src])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            softmax_in_place(v.row_mut(r));
        }
        self.push(v, Op::SoftmaxRows(a), &[a])
    }

    /// Mean over rows: `r × c → 1 × c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = Matrix::row_vector(self.value(a).column_means());
        self.push(v, Op::MeanRows(a), &[a])
    }

    /// Per-column standardisation over rows with `σ = max(std, eps)`.
    pub fn standardize_cols(&mut self, a: Var, eps: T) -> Var {
        let av = self.value(a);
        let (r, c) = av.shape();
        let means = av.column_means();
        let n = T::of_usize(r.max(1));
        let mut sigma = vec![T::zero(); c];
        let mut clamped = vec![false; c];
        for j in 0..c {
            let var = (0..r).map(|i| (av[(i, j)] - means[j]).powi(2)).sum::<T>() / n;
            let sd = var.sqrt();
            if sd > eps {
                sigma[j] = sd;
            } else {
                sigma[j] = eps;
                clamped[j] = true;
            }
        }
        let out = Matrix::from_fn(r, c, |i, j| (av[(i, j)] - means[j]) / sigma[j]);
        self.push(out, Op::StandardizeCols { src: a, sigma, clamped }, &[a])
    }

    /// Per-row division by `max(‖row‖₂, eps)`.
    pub fn l2_normalize_rows(&mut self, a: Var, eps: T) -> Var {
        let av = self.value(a);
        let mut norms = Vec::with_capacity(av.rows());
        let mut clamped = Vec::with_capacity(av.rows());
        for row in av.iter_rows() {
            let n = row.iter().map(|&x| x * x).sum::<T>().sqrt();
            clamped.push(n <= eps);
            norms.push(n.max(eps));
        }
        let out = Matrix::from_fn(av.rows(), av.cols(), |i, j| av[(i, j)] / norms[i]);
        self.push(out, Op::L2NormalizeRows { src: a, norms, clamped }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::filled(1, 1, self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Matrix::filled(1, 1, self.value(a).mean());
        self.push(v, Op::Mean(a), &[a])
    }

    /// Mean absolute difference, a `1 × 1` node.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Var {
        let d = self.sub(pred, target);
        let a = self.abs(d);
        self.mean(a)
    }

    /// Mean squared difference, a `1 × 1` node.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Var {
        let d = self.sub(pred, target);
        let s = self.square(d);
        self.mean(s)
    }

    /// Weighted sum of `1 × 1` nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        let mut acc: Option<Var> = None;
        for &(v, w) in terms {
            let s = self.scale(v, w);
            acc = Some(match acc {
                None => s,
                Some(prev) => self.add(prev, s),
            });
        }
        acc.expect("weighted_sum needs at least one term")
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[(0, 0)]
    }

    /// Back-propagates from the `1 × 1` node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.shape(loss), (1, 1), "backward expects a scalar loss");
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, T::one()));
        let mut out = Gradients::new();

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, &dy),
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        acc(&mut grads, *a, dy.matmul_t(self.value(*b)));
                    }
                    if self.nodes[b.0].requires_grad {
                        acc(&mut grads, *b, self.value(*a).t_matmul(&dy));
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, dy.clone());
                    acc(&mut grads, *b, dy);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, dy.scale(-T::one()));
                    acc(&mut grads, *a, dy);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, dy.zip_map(self.value(*b), |g, x| g * x));
                    acc(&mut grads, *b, dy.zip_map(self.value(*a), |g, x| g * x));
                }
                Op::AddRow(a, b) => {
                    acc(&mut grads, *b, Matrix::row_vector(col_sums(&dy)));
                    acc(&mut grads, *a, dy);
                }
                Op::MulRow(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b).as_slice();
                    let da = Matrix::from_fn(dy.rows(), dy.cols(), |i, j| dy[(i, j)] * bv[j]);
                    let db = Matrix::row_vector(col_sums(&dy.zip_map(av, |g, x| g * x)));
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, dy.scale(*k)),
                Op::Offset(a) => acc(&mut grads, *a, dy),
                Op::Tanh(a) => acc(&mut grads, *a, dy.zip_map(y, |g, t| g * (T::one() - t * t))),
                Op::Sigmoid(a) => acc(&mut grads, *a, dy.zip_map(y, |g, s| g * s * (T::one() - s))),
                Op::Softplus(a) => acc(&mut grads, *a, dy.zip_map(self.value(*a), |g, x| g * sigmoid(x))),
                Op::Square(a) => {
                    let two = T::of(2.0);
                    acc(&mut grads, *a, dy.zip_map(self.value(*a), |g, x| g * two * x))
                }
                Op::Abs(a) => acc(
                    &mut grads,
                    *a,
                    dy.zip_map(self.value(*a), |g, x| {
                        if x > T::zero() {
                            g
                        } else if x < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    }),
                ),
                Op::Gather(src, index) => {
                    let (r, c) = self.shape(*src);
                    let mut ds = Matrix::zeros(r, c);
                    for (t, ix) in index.iter().enumerate() {
                        if let Some(i) = *ix {
                            for (d, &g) in ds.row_mut(i).iter_mut().zip(dy.row(t)) {
                                *d += g;
                            }
                        }
                    }
                    acc(&mut grads, *src, ds);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        let dp = Matrix::from_fn(r, c, |i, j| dy[(i, off + j)]);
                        off += c;
                        acc(&mut grads, p, dp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        let dp = Matrix::from_vec(r, c, dy.as_slice()[off * c..(off + r) * c].to_vec())
                            .expect("consistent split");
                        off += r;
                        acc(&mut grads, p, dp);
                    }
                }
                Op::SliceCols(src, start) => {
                    let (r, c) = self.shape(*src);
                    let mut ds = Matrix::zeros(r, c);
                    for i in 0..r {
                        ds.row_mut(i)[*start..*start + dy.cols()].copy_from_slice(dy.row(i));
                    }
                    acc(&mut grads, *src, ds);
                }
                Op::SliceRows(src, start) => {
                    let (r, c) = self.shape(*src);
                    let mut ds = Matrix::zeros(r, c);
                    ds.as_mut_slice()[start * c..(start + dy.rows()) * c].copy_from_slice(dy.as_slice());
                    acc(&mut grads, *src, ds);
                }
                Op::Transpose(a) => acc(&mut grads, *a, dy.transpose()),
                Op::SoftmaxRows(a) => {
                    let mut dx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: T = y.row(r).iter().zip(dy.row(r)).map(|(&s, &g)| s * g).sum();
                        for ((d, &s), &g) in dx.row_mut(r).iter_mut().zip(y.row(r)).zip(dy.row(r)) {
                            *d = s * (g - dot);
                        }
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.shape(*a);
                    let n = T::of_usize(r);
                    acc(&mut grads, *a, Matrix::from_fn(r, c, |_, j| dy[(0, j)] / n));
                }
                Op::StandardizeCols { src, sigma, clamped } => {
                    let (r, c) = y.shape();
                    let n = T::of_usize(r);
                    let mut dx = Matrix::zeros(r, c);
                    for j in 0..c {
                        let mean_g = (0..r).map(|i| dy[(i, j)]).sum::<T>() / n;
                        let mean_gy = if clamped[j] {
                            T::zero()
                        } else {
                            (0..r).map(|i| dy[(i, j)] * y[(i, j)]).sum::<T>() / n
                        };
                        for i in 0..r {
                            dx[(i, j)] = (dy[(i, j)] - mean_g - y[(i, j)] * mean_gy) / sigma[j];
                        }
                    }
                    acc(&mut grads, *src, dx);
                }
                Op::L2NormalizeRows { src, norms, clamped } => {
                    let mut dx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: T = if clamped[r] {
                            T::zero()
                        } else {
                            y.row(r).iter().zip(dy.row(r)).map(|(&a, &g)| a * g).sum()
                        };
                        for ((d, &a), &g) in dx.row_mut(r).iter_mut().zip(y.row(r)).zip(dy.row(r)) {
                            *d = (g - a * dot) / norms[r];
                        }
                    }
                    acc(&mut grads, *src, dx);
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut grads, *a, Matrix::filled(r, c, dy[(0, 0)]));
                }
                Op::Mean(a) => {
                    let (r, c) = self.shape(*a);
                    let g = dy[(0, 0)] / T::of_usize((r * c).max(1));
                    acc(&mut grads, *a, Matrix::filled(r, c, g));
                }
            }
        }
        out
    }
}

fn acc<T: Scalar>(grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn col_sums<T: Scalar>(m: &Matrix<T>) -> Vec<T> {
    let mut s = vec![T::zero(); m.cols()];
    for row in m.iter_rows() {
        for (a, &v) in s.iter_mut().zip(row) {
            *a += v;
        }
    }
    s
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    // log(1 + e^x), stable for large |x|
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix<f64> {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Checks every parameter entry of a small graph against central differences.
    fn check(build: impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Var, store: ParamStore<f64>) {
        let mut g = Graph::new();
        let loss = build(&mut g, &store);
        let grads = g.backward(loss);
        let h = 1e-6;
        for id in store.ids() {
            let analytic = grads.get(id).cloned().unwrap_or_else(|| {
                let (r, c) = store.get(id).shape();
                Matrix::zeros(r, c)
            });
            for k in 0..store.get(id).len() {
                let mut plus = store.clone();
                plus.get_mut(id).as_mut_slice()[k] += h;
                let mut minus = store.clone();
                minus.get_mut(id).as_mut_slice()[k] -= h;
                let mut gp = Graph::new();
                let lp = build(&mut gp, &plus);
                let mut gm = Graph::new();
                let lm = build(&mut gm, &minus);
                let numeric = (gp.scalar(lp) - gm.scalar(lm)) / (2.0 * h);
                let a = analytic.as_slice()[k];
                let denom = a.abs().max(numeric.abs()).max(1e-7);
                assert!(
                    (a - numeric).abs() / denom < 1e-5,
                    "{}[{k}]: analytic {a} numeric {numeric}",
                    store.name(id)
                );
            }
        }
    }

    #[test]
    fn gradients_of_every_op_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let a = store.insert("a", rand_matrix(&mut rng, 4, 3));
        let b = store.insert("b", rand_matrix(&mut rng, 3, 5));
        let row = store.insert("row", rand_matrix(&mut rng, 1, 5));
        let sq = store.insert("sq", rand_matrix(&mut rng, 4, 5));
        let target = rand_matrix(&mut rng, 4, 5);
        check(
            |g, s| {
                let a = g.param(s, a);
                let b = g.param(s, b);
                let row = g.param(s, row);
                let sq = g.param(s, sq);
                let x = g.matmul(a, b);
                let x = g.add_row(x, row);
                let x = g.mul_row(x, row);
                let t = g.tanh(x);
                let sp = g.softplus(sq);
                let sg = g.sigmoid(sq);
                let m = g.mul(t, sp);
                let m = g.add(m, sg);
                let m = g.scale(m, 0.7);
                let m = g.offset(m, 0.1);
                let st = g.standardize_cols(m, 1e-5);
                let sm = g.softmax_rows(st);
                let gathered = g.gather_rows(sm, vec![Some(0), None, Some(3), Some(3), Some(1)]);
                let sl = g.slice_rows(gathered, 1, 4);
                let left = g.slice_cols(sl, 0, 2);
                let right = g.slice_cols(sl, 2, 3);
                let cat = g.concat_cols(&[right, left]);
                let tr = g.transpose(cat);
                let tr2 = g.transpose(tr);
                let nrm = g.l2_normalize_rows(tr2, 1e-9);
                let both = g.concat_rows(&[nrm, m]);
                let pooled = g.mean_rows(both);
                let tgt = g.constant(target.clone());
                let l1 = g.l1_loss(m, tgt);
                let sqr = g.square(pooled);
                let s = g.sum(sqr);
                let m2 = g.mse_loss(st, tgt);
                g.weighted_sum(&[(l1, 1.0), (s, 0.5), (m2, 0.25)])
            },
            store,
        );
    }

    #[test]
    fn frozen_parameters_receive_no_gradient() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Matrix::<f64>::filled(2, 2, 0.5));
        let mut g = Graph::new();
        let v = g.frozen(&store, w);
        let s = g.sum(v);
        let grads = g.backward(s);
        assert!(grads.get(w).is_none());
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(1000.0f64) - 1000.0).abs() < 1e-9);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-12);
    }
}
