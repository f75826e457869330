//! Reverse-mode differentiation over [`Mat`] values.
//!
//! Operations append nodes to a [`Tape`]; [`Tape::backward`] walks the nodes
//! in reverse and accumulates adjoints. Nodes whose inputs never require a
//! gradient are skipped, so frozen weights cost no backward work.

use super::tensor::{gemm, Mat, View};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    AddAt(Var, Var, usize),
    ConcatRows(Var, Var),
    SliceRows(Var, usize),
    LayerNorm {
        x: Var,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Attention {
        qkv: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    Mse {
        a: Var,
        target: Mat,
    },
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads[v.0].take()
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn col_sums(m: &Mat) -> Mat {
    let mut out = Mat::zeros(1, m.cols);
    for r in 0..m.rows {
        for (o, v) in out.data.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
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

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Mat, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "add shapes");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let out = Mat {
            rows: x.rows,
            cols: x.cols,
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).sub(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    /// `a + row` with `row` (1 x cols) broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((1, x.cols), r.shape(), "add_row shapes");
        let mut out = x.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(out, Op::AddRow(a, row), rg)
    }

    /// `a * row` element-wise with `row` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((1, x.cols), r.shape(), "mul_row shapes");
        let mut out = x.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r.data) {
                *o *= b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(out, Op::MulRow(a, row), rg)
    }

    /// `a * s` for a 1x1 variable `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.value(s).shape(), (1, 1), "scale_by expects a scalar");
        let k = self.value(s).data[0];
        let out = self.value(a).scale(k);
        let rg = self.rg(a) || self.rg(s);
        self.push(out, Op::ScaleBy(a, s), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).scale(k);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, k), rg)
    }

    /// Adds `b` into rows `start..start + b.rows` of `a`.
    pub fn add_at(&mut self, a: Var, b: Var, start: usize) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert!(
            x.cols == y.cols && start + y.rows <= x.rows,
            "add_at shapes"
        );
        let mut out = x.clone();
        let off = start * x.cols;
        for (o, v) in out.data[off..off + y.data.len()].iter_mut().zip(&y.data) {
            *o += v;
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::AddAt(a, b, start), rg)
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.cols, y.cols, "concat_rows widths");
        let mut data = Vec::with_capacity(x.data.len() + y.data.len());
        data.extend_from_slice(&x.data);
        data.extend_from_slice(&y.data);
        let out = Mat {
            rows: x.rows + y.rows,
            cols: x.cols,
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::ConcatRows(a, b), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.rows, "slice_rows range");
        let out = Mat {
            rows: len,
            cols: x.cols,
            data: x.data[start * x.cols..(start + len) * x.cols].to_vec(),
        };
        let rg = self.rg(a);
        self.push(out, Op::SliceRows(a, start), rg)
    }

    /// Per-row standardisation without affine parameters.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.cols as f64;
        let mut out = x.clone();
        let mut rstd = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let s = 1.0 / (var + LN_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * s;
            }
            rstd.push(s);
        }
        let rg = self.rg(a);
        self.push(out, Op::LayerNorm { x: a, rstd }, rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).data.iter().map(|&v| gelu(v)).collect();
        let x = self.value(a);
        let out = Mat {
            rows: x.rows,
            cols: x.cols,
            data: out,
        };
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg)
    }

    /// Multi-head softmax attention over all rows. `qkv` packs queries, keys
    /// and values as `[T, 3D]`; the result is `[T, D]`.
    pub fn attention(&mut self, qkv: Var, heads: usize) -> Var {
        let x = self.value(qkv);
        let t = x.rows;
        assert_eq!(x.cols % 3, 0, "attention expects packed qkv");
        let d = x.cols / 3;
        assert_eq!(d % heads, 0, "width must divide into heads");
        let dh = d / heads;
        let ld = x.cols;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; heads * t * t];
        let mut out = Mat::zeros(t, d);
        for h in 0..heads {
            let p = &mut probs[h * t * t..(h + 1) * t * t];
            let q = View::row_major(&x.data, ld).offset(h * dh);
            let k = View::transposed(&x.data, ld).offset(d + h * dh);
            gemm(t, dh, t, q, k, p, t, 0.0);
            for row in p.chunks_exact_mut(t) {
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) * scale;
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v * scale - mx).exp();
                    sum += *v;
                }
                let inv = 1.0 / sum;
                for v in row.iter_mut() {
                    *v *= inv;
                }
            }
            let v = View::row_major(&x.data, ld).offset(2 * d + h * dh);
            gemm(
                t,
                t,
                dh,
                View::row_major(p, t),
                v,
                &mut out.data[h * dh..],
                d,
                0.0,
            );
        }
        let rg = self.rg(qkv);
        self.push(out, Op::Attention { qkv, heads, probs }, rg)
    }

    /// Mean squared error against a constant target, as a 1x1 value.
    pub fn mse(&mut self, a: Var, target: Mat) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape(), target.shape(), "mse shapes");
        let n = x.data.len().max(1) as f64;
        let s: f64 = x
            .data
            .iter()
            .zip(&target.data)
            .map(|(p, q)| (p - q) * (p - q))
            .sum();
        let rg = self.rg(a);
        self.push(Mat::scalar(s / n), Op::Mse { a, target }, rg)
    }

    /// Adjoints of a scalar output with respect to every node that needs one.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(1.0));

        fn accum(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        let mut da = Mat::zeros(av.rows, av.cols);
                        gemm(
                            g.rows,
                            g.cols,
                            bv.rows,
                            View::row_major(&g.data, g.cols),
                            View::transposed(&bv.data, bv.cols),
                            &mut da.data,
                            av.cols,
                            0.0,
                        );
                        accum(&mut grads, *a, da);
                    }
                    if self.rg(*b) {
                        let mut db = Mat::zeros(bv.rows, bv.cols);
                        gemm(
                            av.cols,
                            av.rows,
                            g.cols,
                            View::transposed(&av.data, av.cols),
                            View::row_major(&g.data, g.cols),
                            &mut db.data,
                            bv.cols,
                            0.0,
                        );
                        accum(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accum(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        accum(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        accum(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        accum(&mut grads, *b, g.scale(-1.0));
                    }
                }
                Op::AddRow(a, row) => {
                    if self.rg(*row) {
                        accum(&mut grads, *row, col_sums(&g));
                    }
                    if self.rg(*a) {
                        accum(&mut grads, *a, g);
                    }
                }
                Op::MulRow(a, row) => {
                    let (av, rv) = (self.value(*a), self.value(*row));
                    if self.rg(*row) {
                        let mut dr = Mat::zeros(1, rv.cols);
                        for r in 0..g.rows {
                            for ((o, gv), x) in dr.data.iter_mut().zip(g.row(r)).zip(av.row(r)) {
                                *o += gv * x;
                            }
                        }
                        accum(&mut grads, *row, dr);
                    }
                    if self.rg(*a) {
                        let mut da = g;
                        for r in 0..da.rows {
                            for (o, s) in da.row_mut(r).iter_mut().zip(&rv.data) {
                                *o *= s;
                            }
                        }
                        accum(&mut grads, *a, da);
                    }
                }
                Op::ScaleBy(a, s) => {
                    let k = self.value(*s).data[0];
                    if self.rg(*s) {
                        let ds: f64 = g
                            .data
                            .iter()
                            .zip(&self.value(*a).data)
                            .map(|(p, q)| p * q)
                            .sum();
                        accum(&mut grads, *s, Mat::scalar(ds));
                    }
                    if self.rg(*a) {
                        accum(&mut grads, *a, g.scale(k));
                    }
                }
                Op::Scale(a, k) => accum(&mut grads, *a, g.scale(*k)),
                Op::AddAt(a, b, start) => {
                    if self.rg(*b) {
                        let bv = self.value(*b);
                        let off = start * g.cols;
                        let db = Mat {
                            rows: bv.rows,
                            cols: bv.cols,
                            data: g.data[off..off + bv.data.len()].to_vec(),
                        };
                        accum(&mut grads, *b, db);
                    }
                    if self.rg(*a) {
                        accum(&mut grads, *a, g);
                    }
                }
                Op::ConcatRows(a, b) => {
                    let ar = self.value(*a).rows;
                    let split = ar * g.cols;
                    if self.rg(*a) {
                        accum(
                            &mut grads,
                            *a,
                            Mat {
                                rows: ar,
                                cols: g.cols,
                                data: g.data[..split].to_vec(),
                            },
                        );
                    }
                    if self.rg(*b) {
                        accum(
                            &mut grads,
                            *b,
                            Mat {
                                rows: g.rows - ar,
                                cols: g.cols,
                                data: g.data[split..].to_vec(),
                            },
                        );
                    }
                }
                Op::SliceRows(a, start) => {
                    let av = self.value(*a);
                    let mut da = Mat::zeros(av.rows, av.cols);
                    let off = start * av.cols;
                    da.data[off..off + g.data.len()].copy_from_slice(&g.data);
                    accum(&mut grads, *a, da);
                }
                Op::LayerNorm { x, rstd } => {
                    let xhat = &node.value;
                    let n = xhat.cols as f64;
                    let mut dx = Mat::zeros(xhat.rows, xhat.cols);
                    for r in 0..xhat.rows {
                        let (gr, hr) = (g.row(r), xhat.row(r));
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gh = gr.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((o, gv), hv) in dx.row_mut(r).iter_mut().zip(gr).zip(hr) {
                            *o = rstd[r] * (gv - mean_g - hv * mean_gh);
                        }
                    }
                    accum(&mut grads, *x, dx);
                }
                Op::Gelu(a) => {
                    let av = self.value(*a);
                    let mut da = g;
                    for (o, x) in da.data.iter_mut().zip(&av.data) {
                        *o *= gelu_grad(*x);
                    }
                    accum(&mut grads, *a, da);
                }
                Op::Attention { qkv, heads, probs } => {
                    let x = self.value(*qkv);
                    let t = x.rows;
                    let ld = x.cols;
                    let d = ld / 3;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dx = Mat::zeros(t, ld);
                    let mut dp = vec![0.0; t * t];
                    for h in 0..*heads {
                        let p = &probs[h * t * t..(h + 1) * t * t];
                        let go = View::row_major(&g.data, d).offset(h * dh);
                        // dV = Pᵀ dO
                        gemm(
                            t,
                            t,
                            dh,
                            View::transposed(p, t),
                            go,
                            &mut dx.data[2 * d + h * dh..],
                            ld,
                            0.0,
                        );
                        // dP = dO Vᵀ
                        let vt = View::transposed(&x.data, ld).offset(2 * d + h * dh);
                        gemm(t, dh, t, go, vt, &mut dp, t, 0.0);
                        // dS = P ⊙ (dP - rowsum(dP ⊙ P)), folded with the scale
                        for (dprow, prow) in dp.chunks_exact_mut(t).zip(p.chunks_exact(t)) {
                            let dot: f64 = dprow.iter().zip(prow).map(|(a, b)| a * b).sum();
                            for (o, pv) in dprow.iter_mut().zip(prow) {
                                *o = pv * (*o - dot) * scale;
                            }
                        }
                        // dQ = dS K, dK = dSᵀ Q
                        let k = View::row_major(&x.data, ld).offset(d + h * dh);
                        gemm(
                            t,
                            t,
                            dh,
                            View::row_major(&dp, t),
                            k,
                            &mut dx.data[h * dh..],
                            ld,
                            0.0,
                        );
                        let q = View::row_major(&x.data, ld).offset(h * dh);
                        gemm(
                            t,
                            t,
                            dh,
                            View::transposed(&dp, t),
                            q,
                            &mut dx.data[d + h * dh..],
                            ld,
                            0.0,
                        );
                    }
                    accum(&mut grads, *qkv, dx);
                }
                Op::Mse { a, target } => {
                    let av = self.value(*a);
                    let k = g.data[0] * 2.0 / av.data.len().max(1) as f64;
                    let data = av
                        .data
                        .iter()
                        .zip(&target.data)
                        .map(|(p, q)| (p - q) * k)
                        .collect();
                    accum(
                        &mut grads,
                        *a,
                        Mat {
                            rows: av.rows,
                            cols: av.cols,
                            data,
                        },
                    );
                }
            }
        }
        Gradients { grads }
    }
}
