//! Dense-matrix computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as an immutable node. Nodes are
//! appended in evaluation order, so walking them backwards from the root
//! is a reverse topological traversal that visits each node once. All
//! values are `f64` matrices; scalars are `1 x 1`.

mod gradcheck;
mod param;

pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};
pub use param::{GradMap, ParamStore, ParamTensor};

use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, Axis, Zip};

use crate::error::{EngineError, Shape};

/// Variance floor used by [`Graph::col_normalize`].
pub const NORM_EPS: f64 = 1e-5;

type EResult<T> = std::result::Result<T, EngineError>;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Square(Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    RowSoftmax(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Ln(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    AddRow(Var, Var),
    ColNormalize {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Mask(Var, Array2<f64>),
    PairDiff(Var),
    Reshape(Var),
    Clamp(Var, f64, f64),
}

#[derive(Debug)]
struct Node {
    data: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// A single-threaded computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
}

fn mismatch(op: &'static str, left: Shape, right: Shape) -> EngineError {
    EngineError::ShapeMismatch { op, left, right }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Array2<f64>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            data,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiated input.
    pub fn constant(&mut self, data: Array2<f64>) -> Var {
        self.nodes.push(Node {
            data,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// Differentiable leaf not tied to any parameter store.
    pub fn variable(&mut self, data: Array2<f64>) -> Var {
        self.nodes.push(Node {
            data,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers (once) the named parameter of `store` as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> EResult<Var> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| EngineError::UnknownParam(name.to_string()))?;
        if let Some(v) = self.params.get(&idx) {
            return Ok(*v);
        }
        let v = self.variable(store.tensors()[idx].value.clone());
        self.params.insert(idx, v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].data.dim()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a `1 x 1` node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].data[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> EResult<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(mismatch("matmul", sa, sb));
        }
        let data = self.value(a).dot(self.value(b));
        Ok(self.push(data, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let data = self.value(a).t().to_owned();
        self.push(data, Op::Transpose(a), &[a])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> EResult<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> EResult<Var> {
        self.same_shape("add", a, b)?;
        let data = self.value(a) + self.value(b);
        Ok(self.push(data, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> EResult<Var> {
        self.same_shape("sub", a, b)?;
        let data = self.value(a) - self.value(b);
        Ok(self.push(data, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> EResult<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.value(a) * self.value(b);
        Ok(self.push(data, Op::Mul(a, b), &[a, b]))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let data = self.value(a).mapv(|x| x * x);
        self.push(data, Op::Square(a), &[a])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let data = self.value(a) * k;
        self.push(data, Op::Scale(a, k), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let data = self.value(a) + k;
        self.push(data, Op::AddScalar(a), &[a])
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> EResult<Var> {
        let Some(&first) = parts.first() else {
            return Err(EngineError::Invalid {
                op: "concat_cols",
                reason: "no operands".into(),
            });
        };
        let rows = self.shape(first).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(mismatch("concat_cols", self.shape(first), self.shape(p)));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let data = concatenate(Axis(1), &views).expect("row counts checked");
        Ok(self.push(data, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> EResult<Var> {
        let sa = self.shape(a);
        if start >= end || end > sa.1 {
            return Err(EngineError::Invalid {
                op: "slice_cols",
                reason: format!("range {start}..{end} out of bounds for shape {sa:?}"),
            });
        }
        let data = self.value(a).slice(s![.., start..end]).to_owned();
        Ok(self.push(data, Op::SliceCols(a, start), &[a]))
    }

    /// Softmax along each row, max-shifted.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut data = self.value(a).clone();
        for mut row in data.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let total: f64 = row.sum();
            row.mapv_inplace(|x| x / total);
        }
        self.push(data, Op::RowSoftmax(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self.value(a).mapv(sigmoid);
        self.push(data, Op::Sigmoid(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let data = self.value(a).mapv(|x| leaky_relu(x, slope));
        self.push(data, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn ln(&mut self, a: Var) -> EResult<Var> {
        if let Some(((row, col), &value)) = self.value(a).indexed_iter().find(|(_, &x)| !(x > 0.0)) {
            return Err(EngineError::NonPositiveLog { value, row, col });
        }
        let data = self.value(a).mapv(f64::ln);
        Ok(self.push(data, Op::Ln(a), &[a]))
    }

    /// Sum of all entries, as a `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let data = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(data, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let data = Array2::from_elem((1, 1), self.value(a).sum() / n);
        self.push(data, Op::Mean(a), &[a])
    }

    /// Per-row sums, `rows x 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let data = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(data, Op::RowSum(a), &[a])
    }

    /// Adds the `1 x cols` row vector `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> EResult<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.0 != 1 || sb.1 != sa.1 {
            return Err(mismatch("add_row", sa, sb));
        }
        let data = self.value(a) + self.value(b);
        Ok(self.push(data, Op::AddRow(a, b), &[a, b]))
    }

    /// Normalizes each column over the row (node) axis with this batch's
    /// statistics, then applies the learned `1 x cols` scale and shift.
    pub fn col_normalize(&mut self, x: Var, gamma: Var, beta: Var) -> EResult<Var> {
        let sx = self.shape(x);
        for p in [gamma, beta] {
            let sp = self.shape(p);
            if sp != (1, sx.1) {
                return Err(mismatch("col_normalize", sx, sp));
            }
        }
        let xv = self.value(x);
        let n = sx.0 as f64;
        let mean = xv.sum_axis(Axis(0)) / n;
        let centered = xv - &mean;
        let var = centered.mapv(|c| c * c).sum_axis(Axis(0)) / n;
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let mut xhat = centered;
        for (mut col, &is) in xhat.columns_mut().into_iter().zip(&inv_std) {
            col.mapv_inplace(|c| c * is);
        }
        let data = &xhat * self.value(gamma) + self.value(beta);
        Ok(self.push(
            data,
            Op::ColNormalize {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Elementwise product with a non-differentiated matrix.
    pub fn mask(&mut self, a: Var, m: &Array2<f64>) -> EResult<Var> {
        let sa = self.shape(a);
        if sa != m.dim() {
            return Err(mismatch("mask", sa, m.dim()));
        }
        let data = self.value(a) * m;
        Ok(self.push(data, Op::Mask(a, m.clone()), &[a]))
    }

    /// Row differences for every ordered pair: row `m * r + n` of the
    /// `r^2 x c` output is `a[m] - a[n]`.
    pub fn pair_diff(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (r, c) = av.dim();
        let mut data = Array2::zeros((r * r, c));
        for m in 0..r {
            for n in 0..r {
                let mut row = data.row_mut(m * r + n);
                Zip::from(&mut row)
                    .and(av.row(m))
                    .and(av.row(n))
                    .for_each(|o, &x, &y| *o = x - y);
            }
        }
        self.push(data, Op::PairDiff(a), &[a])
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> EResult<Var> {
        let sa = self.shape(a);
        if sa.0 * sa.1 != rows * cols {
            return Err(mismatch("reshape", sa, (rows, cols)));
        }
        let flat: Vec<f64> = self.value(a).iter().cloned().collect();
        let data = Array2::from_shape_vec((rows, cols), flat).expect("sizes checked");
        Ok(self.push(data, Op::Reshape(a), &[a]))
    }

    /// Clamps into `[lo, hi]`; gradient flows only through unclamped entries.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let data = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(data, Op::Clamp(a, lo, hi), &[a])
    }

    /// `a · W + b` with `W` of shape `in x out` and `b` of shape `1 x out`.
    pub fn affine(&mut self, a: Var, w: Var, b: Var) -> EResult<Var> {
        let h = self.matmul(a, w)?;
        self.add_row(h, b)
    }

    /// Reverse-mode sweep from a scalar root.
    pub fn backward(&self, root: Var) -> EResult<Gradients> {
        let rs = self.shape(root);
        if rs != (1, 1) {
            return Err(EngineError::NonScalarRoot(rs));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        if !self.nodes[root.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(Array2::ones((1, 1)));
        for i in (0..=root.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, gout: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.data;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, gout.dot(&self.value(*b).t()));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, self.value(*a).t().dot(gout));
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, gout.t().to_owned()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, gout.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, -gout);
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, gout * self.value(*b));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, gout * self.value(*a));
                }
            }
            Op::Square(a) => self.accumulate(grads, *a, gout * self.value(*a) * 2.0),
            Op::Scale(a, k) => self.accumulate(grads, *a, gout * *k),
            Op::AddScalar(a) => self.accumulate(grads, *a, gout.clone()),
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let c = self.shape(*p).1;
                    self.accumulate(grads, *p, gout.slice(s![.., start..start + c]).to_owned());
                    start += c;
                }
            }
            Op::SliceCols(a, start) => {
                let mut g = Array2::zeros(self.shape(*a));
                let c = gout.ncols();
                g.slice_mut(s![.., *start..*start + c]).assign(gout);
                self.accumulate(grads, *a, g);
            }
            Op::RowSoftmax(a) => {
                let mut g = gout * out;
                for (mut row, y) in g.rows_mut().into_iter().zip(out.rows()) {
                    let dot: f64 = row.sum();
                    Zip::from(&mut row).and(y).for_each(|gr, &yv| *gr -= yv * dot);
                }
                self.accumulate(grads, *a, g);
            }
            Op::Sigmoid(a) => {
                let g = Zip::from(gout).and(out).map_collect(|&go, &y| go * y * (1.0 - y));
                self.accumulate(grads, *a, g);
            }
            Op::LeakyRelu(a, slope) => {
                let g = Zip::from(gout)
                    .and(self.value(*a))
                    .map_collect(|&go, &x| if x >= 0.0 { go } else { go * slope });
                self.accumulate(grads, *a, g);
            }
            Op::Ln(a) => self.accumulate(grads, *a, gout / self.value(*a)),
            Op::Sum(a) => {
                let g = Array2::from_elem(self.shape(*a), gout[[0, 0]]);
                self.accumulate(grads, *a, g);
            }
            Op::Mean(a) => {
                let sa = self.shape(*a);
                let n = (sa.0 * sa.1) as f64;
                self.accumulate(grads, *a, Array2::from_elem(sa, gout[[0, 0]] / n));
            }
            Op::RowSum(a) => {
                let sa = self.shape(*a);
                let g = gout.broadcast(sa).expect("column broadcast").to_owned();
                self.accumulate(grads, *a, g);
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, gout.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::ColNormalize {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                if self.requires_grad(*beta) {
                    self.accumulate(grads, *beta, gout.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.requires_grad(*gamma) {
                    let dg = (gout * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, *gamma, dg);
                }
                if self.requires_grad(*x) {
                    let n = xhat.nrows() as f64;
                    let dxhat = gout * self.value(*gamma);
                    let sum_d = dxhat.sum_axis(Axis(0));
                    let sum_dx = (&dxhat * xhat).sum_axis(Axis(0));
                    let mut dx = Array2::zeros(xhat.dim());
                    for j in 0..xhat.ncols() {
                        let k = inv_std[j] / n;
                        for r in 0..xhat.nrows() {
                            dx[[r, j]] =
                                k * (n * dxhat[[r, j]] - sum_d[j] - xhat[[r, j]] * sum_dx[j]);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Mask(a, m) => self.accumulate(grads, *a, gout * m),
            Op::PairDiff(a) => {
                let (r, c) = self.shape(*a);
                let mut g = Array2::zeros((r, c));
                for m in 0..r {
                    for n in 0..r {
                        let go = gout.row(m * r + n);
                        Zip::from(g.row_mut(m)).and(go).for_each(|d, &v| *d += v);
                        Zip::from(g.row_mut(n)).and(go).for_each(|d, &v| *d -= v);
                    }
                }
                self.accumulate(grads, *a, g);
            }
            Op::Reshape(a) => {
                let (r, c) = self.shape(*a);
                let flat: Vec<f64> = gout.iter().cloned().collect();
                self.accumulate(grads, *a, Array2::from_shape_vec((r, c), flat).expect("size"));
            }
            Op::Clamp(a, lo, hi) => {
                let g = Zip::from(gout).and(self.value(*a)).map_collect(|&go, &x| {
                    if x > *lo && x < *hi {
                        go
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *a, g);
            }
        }
    }

    /// Parameters registered on this graph, by store index.
    pub(crate) fn registered_params(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.params.iter().map(|(&i, &v)| (i, v))
    }
}

/// Result of [`Graph::backward`]: one optional gradient per node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for every entry of `store`, zero where the graph never used it.
    pub fn for_params(&self, graph: &Graph, store: &ParamStore) -> GradMap {
        let mut out = GradMap::zeros_like(store);
        for (idx, v) in graph.registered_params() {
            if let Some(g) = self.get(v) {
                out.as_mut_slice()[idx].assign(g);
            }
        }
        out
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

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}
