//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass; `backward`
//! replays it in reverse. Nodes that do not depend on a trainable parameter
//! (or an explicit `variable`) get no gradient, so frozen weights cost
//! nothing in the backward pass.

pub mod checkpoint;
pub mod optim;

use std::rc::Rc;

use ndarray::{concatenate, s, Array2, Axis};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use optim::{clip_grad_norm, xavier_uniform, Adam, ParamStore};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulT(Var, Var),
    Add(Var, Var),
    /// a + row vector b broadcast over rows.
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Rc<Mat>),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, inv_std: Vec<f64> },
    Softmax(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    MeanRows(Var),
    BroadcastRows(Var),
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Mat, count: usize },
    Mse { a: Var, target: Rc<Mat> },
}

struct Node {
    value: Rc<Mat>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.push_rc(Rc::new(value), op, needs_grad)
    }

    fn push_rc(&mut self, value: Rc<Mat>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, false)
    }

    pub fn constant_rc(&mut self, m: Rc<Mat>) -> Var {
        self.push_rc(m, Op::Leaf, false)
    }

    /// A leaf whose gradient is kept (see [`Grads::get`]).
    pub fn variable(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, true)
    }

    pub fn param(&mut self, id: usize, value: Rc<Mat>) -> Var {
        self.push_rc(value, Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(&[a, b]);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let ng = self.ng(&[a, b]);
        self.push(v, Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a 1 × n row");
        let v = self.value(a) + self.value(row);
        let ng = self.ng(&[a, row]);
        self.push(v, Op::AddRow(a, row), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn mul_const(&mut self, a: Var, c: Mat) -> Var {
        let v = self.value(a) * &c;
        let ng = self.ng(&[a]);
        self.push(v, Op::MulConst(a, Rc::new(c)), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        let ng = self.ng(&[a]);
        self.push(v, Op::Scale(a, s), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        let ng = self.ng(&[a]);
        self.push(v, Op::Gelu(a), ng)
    }

    /// Row-wise layer normalisation with affine rows `gamma`, `beta` [1 × n].
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        const EPS: f64 = 1e-5;
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let is = 1.0 / (var + EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let v = &xhat * self.value(gamma) + self.value(beta);
        let ng = self.ng(&[x, gamma, beta]);
        self.push(v, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, ng)
    }

    /// Row-wise softmax. With `causal`, entry (i, j > i) gets probability 0.
    pub fn softmax(&mut self, x: Var, causal: bool) -> Var {
        let mut p = self.value(x).clone();
        for (i, mut row) in p.rows_mut().into_iter().enumerate() {
            let lim = if causal { (i + 1).min(row.len()) } else { row.len() };
            let m = row.iter().take(lim).cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, v) in row.iter_mut().enumerate() {
                *v = if j < lim { (*v - m).exp() } else { 0.0 };
                z += *v;
            }
            row.mapv_inplace(|v| v / z);
        }
        let ng = self.ng(&[x]);
        self.push(p, Op::Softmax(x), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        let ng = self.ng(parts);
        self.push(v, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let ng = self.ng(parts);
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Rows [start, end).
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        let ng = self.ng(&[a]);
        self.push(v, Op::SliceRows(a, start), ng)
    }

    /// Columns [start, end).
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        let ng = self.ng(&[a]);
        self.push(v, Op::SliceCols(a, start), ng)
    }

    /// Rows gathered by index (embedding lookup).
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), idx);
        let ng = self.ng(&[a]);
        self.push(v, Op::SelectRows(a, idx.to_vec()), ng)
    }

    /// Column means as a 1 × n row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let v = av.sum_axis(Axis(0)).insert_axis(Axis(0)) / av.nrows() as f64;
        let ng = self.ng(&[a]);
        self.push(v, Op::MeanRows(a), ng)
    }

    /// A 1 × n row repeated `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        let row = self.value(a).row(0).to_owned();
        let v = Array2::from_shape_fn((n, row.len()), |(_, j)| row[j]);
        let ng = self.ng(&[a]);
        self.push(v, Op::BroadcastRows(a), ng)
    }

    /// Mean next-token cross-entropy over rows with a target; rows with
    /// `None` are ignored. Returns a 1 × 1 loss.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len(), "cross_entropy: one target per row");
        let mut probs = lv.clone();
        let mut loss = 0.0;
        let mut count = 0;
        for (mut row, t) in probs.rows_mut().into_iter().zip(targets) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - m).exp());
            let z = row.sum();
            row.mapv_inplace(|v| v / z);
            if let Some(t) = *t {
                loss -= row[t].max(f64::MIN_POSITIVE).ln();
                count += 1;
            }
        }
        let v = Array2::from_elem((1, 1), if count > 0 { loss / count as f64 } else { 0.0 });
        let ng = self.ng(&[logits]);
        self.push(v, Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count }, ng)
    }

    /// Mean squared error against a constant target, 1 × 1.
    pub fn mse(&mut self, a: Var, target: Mat) -> Var {
        let d = self.value(a) - &target;
        let v = Array2::from_elem((1, 1), d.mapv(|x| x * x).mean().unwrap_or(0.0));
        let ng = self.ng(&[a]);
        self.push(v, Op::Mse { a, target: Rc::new(target) }, ng)
    }

    /// Gradients of the 1 × 1 node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut g: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(Array2::ones(self.value(loss).dim()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gi) = g[i].take() else { continue };
            self.propagate(node, &gi, &mut g);
            g[i] = Some(gi);
        }
        let param_ids = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| if let Op::Param(id) = n.op { Some((i, id)) } else { None })
            .collect();
        Grads { grads: g, param_ids }
    }

    fn acc(&self, g: &mut [Option<Mat>], v: Var, d: Mat) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut g[v.0] {
            Some(x) => *x += &d,
            slot @ None => *slot = Some(d),
        }
    }

    fn propagate(&self, node: &Node, gi: &Mat, g: &mut [Option<Mat>]) {
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    self.acc(g, *a, gi.dot(&self.value(*b).t()));
                }
                if self.nodes[b.0].needs_grad {
                    self.acc(g, *b, self.value(*a).t().dot(gi));
                }
            }
            Op::MatMulT(a, b) => {
                if self.nodes[a.0].needs_grad {
                    self.acc(g, *a, gi.dot(self.value(*b)));
                }
                if self.nodes[b.0].needs_grad {
                    self.acc(g, *b, gi.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.acc(g, *a, gi.clone());
                self.acc(g, *b, gi.clone());
            }
            Op::AddRow(a, r) => {
                self.acc(g, *a, gi.clone());
                self.acc(g, *r, gi.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    self.acc(g, *a, gi * self.value(*b));
                }
                if self.nodes[b.0].needs_grad {
                    self.acc(g, *b, gi * self.value(*a));
                }
            }
            Op::MulConst(a, c) => self.acc(g, *a, gi * &**c),
            Op::Scale(a, s) => self.acc(g, *a, gi * *s),
            Op::Gelu(a) => {
                let mut d = self.value(*a).mapv(gelu_grad);
                d *= gi;
                self.acc(g, *a, d);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let gam = self.value(*gamma);
                self.acc(g, *gamma, (gi * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                self.acc(g, *beta, gi.sum_axis(Axis(0)).insert_axis(Axis(0)));
                if self.nodes[x.0].needs_grad {
                    let n = xhat.ncols() as f64;
                    let dxhat = gi * gam;
                    let mut dx = dxhat.clone();
                    for (r, mut row) in dx.rows_mut().into_iter().enumerate() {
                        let xh = xhat.row(r);
                        let dh = dxhat.row(r);
                        let m1 = dh.sum() / n;
                        let m2 = dh.dot(&xh) / n;
                        for j in 0..row.len() {
                            row[j] = inv_std[r] * (dh[j] - m1 - xh[j] * m2);
                        }
                    }
                    self.acc(g, *x, dx);
                }
            }
            Op::Softmax(a) => {
                let p = &*node.value;
                let mut d = gi * p;
                for (r, mut row) in d.rows_mut().into_iter().enumerate() {
                    let s = row.sum();
                    for (j, v) in row.iter_mut().enumerate() {
                        *v -= p[[r, j]] * s;
                    }
                }
                self.acc(g, *a, d);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).nrows();
                    self.acc(g, *p, gi.slice(s![off..off + n, ..]).to_owned());
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).ncols();
                    self.acc(g, *p, gi.slice(s![.., off..off + n]).to_owned());
                    off += n;
                }
            }
            Op::SliceRows(a, start) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                d.slice_mut(s![*start..*start + gi.nrows(), ..]).assign(gi);
                self.acc(g, *a, d);
            }
            Op::SliceCols(a, start) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                d.slice_mut(s![.., *start..*start + gi.ncols()]).assign(gi);
                self.acc(g, *a, d);
            }
            Op::SelectRows(a, idx) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                for (r, &i) in idx.iter().enumerate() {
                    let mut row = d.row_mut(i);
                    row += &gi.row(r);
                }
                self.acc(g, *a, d);
            }
            Op::MeanRows(a) => {
                let n = self.value(*a).nrows();
                let row = gi.row(0).to_owned() / n as f64;
                self.acc(g, *a, Array2::from_shape_fn((n, row.len()), |(_, j)| row[j]));
            }
            Op::BroadcastRows(a) => self.acc(g, *a, gi.sum_axis(Axis(0)).insert_axis(Axis(0))),
            Op::CrossEntropy { logits, targets, probs, count } => {
                if *count == 0 {
                    return;
                }
                let scale = gi[[0, 0]] / *count as f64;
                let mut d = probs.clone();
                for (mut row, t) in d.rows_mut().into_iter().zip(targets) {
                    match t {
                        Some(t) => {
                            row[*t] -= 1.0;
                            row.mapv_inplace(|v| v * scale);
                        }
                        None => row.fill(0.0),
                    }
                }
                self.acc(g, *logits, d);
            }
            Op::Mse { a, target } => {
                let av = self.value(*a);
                let k = 2.0 * gi[[0, 0]] / av.len() as f64;
                self.acc(g, *a, (av - &**target) * k);
            }
        }
    }
}

pub struct Grads {
    grads: Vec<Option<Mat>>,
    param_ids: Vec<(usize, usize)>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Parameter gradients summed over every binding of each parameter id.
    pub fn param_grads(&self, n_params: usize) -> Vec<Option<Mat>> {
        let mut out: Vec<Option<Mat>> = vec![None; n_params];
        for &(node, id) in &self.param_ids {
            if let Some(gr) = &self.grads[node] {
                match &mut out[id] {
                    Some(x) => *x += gr,
                    slot @ None => *slot = Some(gr.clone()),
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central differences of `f` at `x` against the tape gradient.
    fn check(x: Mat, f: impl Fn(&mut Tape, Var) -> Var) {
        let mut t = Tape::new();
        let v = t.variable(x.clone());
        let loss = f(&mut t, v);
        let g = t.backward(loss).get(v).cloned().unwrap();
        let h = 1e-6;
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let eval = |delta: f64| {
                let mut xp = x.clone();
                xp[[r, c]] += delta;
                let mut t = Tape::new();
                let v = t.constant(xp);
                let l = f(&mut t, v);
                t.scalar(l)
            };
            let num = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (num - g[[r, c]]).abs() / num.abs().max(g[[r, c]].abs()).max(1e-6);
            assert!(err < 1e-5, "({r},{c}): numeric {num} analytic {}", g[[r, c]]);
        }
    }

    fn x0() -> Mat {
        array![[0.3, -1.2, 0.5], [1.1, 0.4, -0.7], [-0.2, 0.9, 0.05]]
    }

    fn w0() -> Mat {
        array![[0.2, -0.4], [0.7, 0.1], [-0.3, 0.5]]
    }

    #[test]
    fn grad_matmul_gelu_mse() {
        check(x0(), |t, x| {
            let w = t.constant(w0());
            let h = t.matmul(x, w);
            let h = t.gelu(h);
            t.mse(h, array![[0.1, 0.2], [0.3, -0.1], [0.0, 0.5]])
        });
    }

    #[test]
    fn grad_layer_norm_and_rows() {
        check(x0(), |t, x| {
            let g = t.constant(array![[1.5, 0.7, -0.3]]);
            let b = t.constant(array![[0.1, 0.0, 0.2]]);
            let y = t.layer_norm(x, g, b);
            let m = t.mean_rows(y);
            let bb = t.broadcast_rows(m, 2);
            let s = t.slice_rows(y, 1, 3);
            let z = t.mul(bb, s);
            t.mse(z, Array2::zeros((2, 3)))
        });
    }

    #[test]
    fn grad_causal_attention_and_ce() {
        check(x0(), |t, x| {
            let sc = t.matmul_t(x, x);
            let p = t.softmax(sc, true);
            let o = t.matmul(p, x);
            let a = t.slice_cols(o, 0, 2);
            let b = t.slice_cols(o, 1, 3);
            let c = t.concat_cols(&[a, b]);
            let sel = t.select_rows(c, &[2, 0, 2]);
            let sel = t.slice_cols(sel, 1, 4);
            let r = t.concat_rows(&[sel, x]);
            t.cross_entropy(r, &[Some(1), None, Some(0), Some(2), Some(1), None])
        });
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut t = Tape::new();
        let x = t.constant(x0());
        let p = t.softmax(x, true);
        let p = t.value(p);
        assert_eq!(p[[0, 1]], 0.0);
        assert_eq!(p[[1, 2]], 0.0);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let a = t.constant(x0());
        let b = t.variable(w0());
        let y = t.matmul(a, b);
        let l = t.mse(y, Array2::zeros((3, 2)));
        let g = t.backward(l);
        assert!(g.get(a).is_none());
        assert!(g.get(b).is_some());
    }
}
