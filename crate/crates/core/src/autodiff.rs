//! Minimal reverse-mode differentiation over `f64` matrices.
//!
//! A [`Tape`] records matrix operations during the forward pass; calling
//! [`Tape::backward`] on a scalar output propagates vector-Jacobian products
//! back to every node. The op set is exactly what the projection network and
//! the loss stack need: dense products, row-wise normalization/clipping, the
//! exponential map onto the Poincaré ball, pairwise geodesic distances built
//! from Gram matrices, and masked log-sum-exp reductions.
//!
//! Clamped ops (`sqrt`, `arctanh`, `max`) propagate a zero gradient through
//! entries that hit their clamp, which keeps boundary-guarded hyperbolic
//! distances finite and differentiable everywhere they are used.

use ndarray::{Array2, Axis};
use std::rc::Rc;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    /// matrix + broadcast row vector `[1, n]`
    AddRow(NodeId, NodeId),
    /// matrix ⊙ broadcast column vector `[m, 1]`
    MulCol(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId, f64),
    Neg(NodeId),
    Tanh(NodeId),
    /// `sqrt(max(x, lo))`; gradient is zero where `x <= lo`
    SqrtClamped(NodeId, f64),
    /// `atanh(min(x, hi))`; gradient is zero where `x >= hi`
    AtanhClamped(NodeId, f64),
    /// `max(x, lo)`; gradient is zero where `x <= lo`
    ClampMin(NodeId, f64),
    MatMul(NodeId, NodeId),
    /// `X Xᵀ`
    Gram(NodeId),
    Transpose(NodeId),
    /// per-row squared norm, shape `[m, 1]`
    RowSumSq(NodeId),
    /// all-pairs squared Euclidean distances between rows, shape `[m, m]`;
    /// computed from explicit row differences so the diagonal is exactly zero
    PairwiseSqDist(NodeId),
    /// horizontal concatenation `[A | B]`
    ConcatCols(NodeId, NodeId),
    /// per-row L2 normalization; an exactly-zero row maps to e₁ with zero gradient
    RowNormalize(NodeId),
    /// per-row norm clipping to radius `r`; rows with `‖x‖ ≥ r` use the
    /// rescaling branch's gradient
    ClipRows(NodeId, f64),
    /// per-row exponential map at the origin for curvature `c`
    ExpMapRows(NodeId, f64),
    /// per-row `log Σ_j mask_ij · exp(x_ij)`, shape `[m, 1]`; every row must
    /// have at least one masked entry
    LogSumExpRowsMasked(NodeId, Rc<Array2<f64>>),
    /// picks `x[i, idx[i]]` per row, shape `[m, 1]`
    GatherCols(NodeId, Rc<Vec<usize>>),
    SumAll(NodeId),
    /// `Σ w ⊙ x` with constant weights, shape `[1, 1]`
    WeightedSumAll(NodeId, Rc<Array2<f64>>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Recorded computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every tape node.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient for a node; zero-shaped `None` means the node does not
    /// influence the output.
    pub fn get(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for a node, materializing zeros when it has none.
    pub fn wrt(&self, tape: &Tape, id: NodeId) -> Array2<f64> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(tape.value(id).dim()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) / self.value(b);
        self.push(v, Op::Div(a, b))
    }

    /// Broadcast-adds a `[1, n]` row vector to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        debug_assert_eq!(self.value(row).nrows(), 1);
        debug_assert_eq!(self.value(a).ncols(), self.value(row).ncols());
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    /// Broadcast-multiplies every row of `a` by a `[m, 1]` column vector.
    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        debug_assert_eq!(self.value(col).ncols(), 1);
        debug_assert_eq!(self.value(a).nrows(), self.value(col).nrows());
        let v = self.value(a) * self.value(col);
        self.push(v, Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_const(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a) + k;
        self.push(v, Op::AddConst(a, k))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = -self.value(a);
        self.push(v, Op::Neg(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sqrt_clamped(&mut self, a: NodeId, lo: f64) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(lo).sqrt());
        self.push(v, Op::SqrtClamped(a, lo))
    }

    pub fn atanh_clamped(&mut self, a: NodeId, hi: f64) -> NodeId {
        let v = self.value(a).mapv(|x| x.min(hi).atanh());
        self.push(v, Op::AtanhClamped(a, hi))
    }

    pub fn clamp_min(&mut self, a: NodeId, lo: f64) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(lo));
        self.push(v, Op::ClampMin(a, lo))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn gram(&mut self, a: NodeId) -> NodeId {
        let m = self.value(a);
        let v = m.dot(&m.t());
        self.push(v, Op::Gram(a))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn row_sum_sq(&mut self, a: NodeId) -> NodeId {
        let m = self.value(a);
        let mut v = Array2::zeros((m.nrows(), 1));
        for (i, row) in m.rows().into_iter().enumerate() {
            v[[i, 0]] = row.dot(&row);
        }
        self.push(v, Op::RowSumSq(a))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        debug_assert_eq!(av.nrows(), bv.nrows());
        let mut v = Array2::zeros((av.nrows(), av.ncols() + bv.ncols()));
        v.slice_mut(ndarray::s![.., ..av.ncols()]).assign(av);
        v.slice_mut(ndarray::s![.., av.ncols()..]).assign(bv);
        self.push(v, Op::ConcatCols(a, b))
    }

    pub fn pairwise_sq_dist(&mut self, a: NodeId) -> NodeId {
        let m = self.value(a);
        let n = m.nrows();
        let mut v = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                let mut q = 0.0;
                for k in 0..m.ncols() {
                    let d = m[[i, k]] - m[[j, k]];
                    q += d * d;
                }
                v[[i, j]] = q;
                v[[j, i]] = q;
            }
        }
        self.push(v, Op::PairwiseSqDist(a))
    }

    pub fn row_normalize(&mut self, a: NodeId) -> NodeId {
        let m = self.value(a);
        let mut v = m.clone();
        for mut row in v.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n == 0.0 {
                row.fill(0.0);
                row[0] = 1.0;
            } else {
                row.mapv_inplace(|x| x / n);
            }
        }
        self.push(v, Op::RowNormalize(a))
    }

    pub fn clip_rows(&mut self, a: NodeId, r: f64) -> NodeId {
        let m = self.value(a);
        let mut v = m.clone();
        for mut row in v.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n >= r && n > 0.0 {
                row.mapv_inplace(|x| x * r / n);
            }
        }
        self.push(v, Op::ClipRows(a, r))
    }

    pub fn exp_map_rows(&mut self, a: NodeId, c: f64) -> NodeId {
        let m = self.value(a);
        let s = c.sqrt();
        let mut v = m.clone();
        for mut row in v.rows_mut() {
            let n = row.dot(&row).sqrt();
            let g = tanh_over_u(s * n);
            row.mapv_inplace(|x| x * g);
        }
        self.push(v, Op::ExpMapRows(a, c))
    }

    pub fn log_sum_exp_rows_masked(&mut self, a: NodeId, mask: Rc<Array2<f64>>) -> NodeId {
        let m = self.value(a);
        debug_assert_eq!(m.dim(), mask.dim());
        let mut v = Array2::zeros((m.nrows(), 1));
        for i in 0..m.nrows() {
            let mut hi = f64::NEG_INFINITY;
            for j in 0..m.ncols() {
                if mask[[i, j]] != 0.0 && m[[i, j]] > hi {
                    hi = m[[i, j]];
                }
            }
            debug_assert!(hi.is_finite(), "log-sum-exp over an empty mask row");
            let mut sum = 0.0;
            for j in 0..m.ncols() {
                if mask[[i, j]] != 0.0 {
                    sum += (m[[i, j]] - hi).exp();
                }
            }
            v[[i, 0]] = hi + sum.ln();
        }
        self.push(v, Op::LogSumExpRowsMasked(a, mask))
    }

    pub fn gather_cols(&mut self, a: NodeId, idx: Rc<Vec<usize>>) -> NodeId {
        let m = self.value(a);
        debug_assert_eq!(m.nrows(), idx.len());
        let mut v = Array2::zeros((m.nrows(), 1));
        for (i, &j) in idx.iter().enumerate() {
            v[[i, 0]] = m[[i, j]];
        }
        self.push(v, Op::GatherCols(a, idx))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn weighted_sum_all(&mut self, a: NodeId, w: Rc<Array2<f64>>) -> NodeId {
        let m = self.value(a);
        debug_assert_eq!(m.dim(), w.dim());
        let total = m
            .iter()
            .zip(w.iter())
            .map(|(x, wi)| x * wi)
            .sum::<f64>();
        self.push(Array2::from_elem((1, 1), total), Op::WeightedSumAll(a, w))
    }

    /// Scalar value of a `[1, 1]` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    /// Backpropagates from a scalar `[1, 1]` output node.
    pub fn backward(&self, output: NodeId) -> Gradients {
        assert_eq!(
            self.value(output).dim(),
            (1, 1),
            "backward expects a scalar output"
        );
        let mut grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(Array2::ones((1, 1)));

        for i in (0..=output.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Gradients { grads }
    }

    fn propagate(&self, i: usize, dy: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        fn accum(grads: &mut [Option<Array2<f64>>], id: NodeId, delta: Array2<f64>) {
            match &mut grads[id.0] {
                Some(g) => *g += &delta,
                slot @ None => *slot = Some(delta),
            }
        }

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accum(grads, *a, dy.clone());
                accum(grads, *b, dy.clone());
            }
            Op::Sub(a, b) => {
                accum(grads, *a, dy.clone());
                accum(grads, *b, -dy);
            }
            Op::Mul(a, b) => {
                accum(grads, *a, dy * self.value(*b));
                accum(grads, *b, dy * self.value(*a));
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                accum(grads, *a, dy / bv);
                accum(grads, *b, -&(dy * &self.nodes[i].value / bv));
            }
            Op::AddRow(a, row) => {
                accum(grads, *a, dy.clone());
                let col_sums = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                accum(grads, *row, col_sums);
            }
            Op::MulCol(a, col) => {
                accum(grads, *a, dy * self.value(*col));
                let prod = dy * self.value(*a);
                let row_sums = prod.sum_axis(Axis(1)).insert_axis(Axis(1));
                accum(grads, *col, row_sums);
            }
            Op::Scale(a, k) => accum(grads, *a, dy * *k),
            Op::AddConst(a, _) => accum(grads, *a, dy.clone()),
            Op::Neg(a) => accum(grads, *a, -dy),
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                accum(grads, *a, dy * &y.mapv(|t| 1.0 - t * t));
            }
            Op::SqrtClamped(a, lo) => {
                let x = self.value(*a);
                let y = &self.nodes[i].value;
                let mut d = dy.clone();
                for ((g, &xv), &yv) in d.iter_mut().zip(x.iter()).zip(y.iter()) {
                    *g = if xv > *lo { *g / (2.0 * yv) } else { 0.0 };
                }
                accum(grads, *a, d);
            }
            Op::AtanhClamped(a, hi) => {
                let x = self.value(*a);
                let mut d = dy.clone();
                for (g, &xv) in d.iter_mut().zip(x.iter()) {
                    *g = if xv < *hi { *g / (1.0 - xv * xv) } else { 0.0 };
                }
                accum(grads, *a, d);
            }
            Op::ClampMin(a, lo) => {
                let x = self.value(*a);
                let mut d = dy.clone();
                for (g, &xv) in d.iter_mut().zip(x.iter()) {
                    if xv <= *lo {
                        *g = 0.0;
                    }
                }
                accum(grads, *a, d);
            }
            Op::MatMul(a, b) => {
                accum(grads, *a, dy.dot(&self.value(*b).t()));
                accum(grads, *b, self.value(*a).t().dot(dy));
            }
            Op::Gram(a) => {
                let av = self.value(*a);
                accum(grads, *a, (dy + &dy.t()).dot(av));
            }
            Op::Transpose(a) => accum(grads, *a, dy.t().to_owned()),
            Op::RowSumSq(a) => {
                let x = self.value(*a);
                let mut d = Array2::zeros(x.dim());
                for i in 0..x.nrows() {
                    let g = 2.0 * dy[[i, 0]];
                    for j in 0..x.ncols() {
                        d[[i, j]] = g * x[[i, j]];
                    }
                }
                accum(grads, *a, d);
            }
            Op::ConcatCols(a, b) => {
                let a_cols = self.value(*a).ncols();
                accum(grads, *a, dy.slice(ndarray::s![.., ..a_cols]).to_owned());
                accum(grads, *b, dy.slice(ndarray::s![.., a_cols..]).to_owned());
            }
            Op::PairwiseSqDist(a) => {
                // ∂q_ij/∂x_r = 2(x_i − x_j)(δ_ri − δ_rj), so row i collects
                // 2(dY_ij + dY_ji)(x_i − x_j) over all j
                let x = self.value(*a);
                let n = x.nrows();
                let mut d = Array2::zeros(x.dim());
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let w = 2.0 * (dy[[i, j]] + dy[[j, i]]);
                        if w == 0.0 {
                            continue;
                        }
                        for k in 0..x.ncols() {
                            d[[i, k]] += w * (x[[i, k]] - x[[j, k]]);
                        }
                    }
                }
                accum(grads, *a, d);
            }
            Op::RowNormalize(a) => {
                let x = self.value(*a);
                let y = &self.nodes[i].value;
                let mut d = Array2::zeros(x.dim());
                for r in 0..x.nrows() {
                    let xr = x.row(r);
                    let n = xr.dot(&xr).sqrt();
                    if n == 0.0 {
                        continue; // guard row: constant output, zero gradient
                    }
                    let yr = y.row(r);
                    let dyr = dy.row(r);
                    let dot = dyr.dot(&yr);
                    for j in 0..x.ncols() {
                        d[[r, j]] = (dy[[r, j]] - dot * yr[j]) / n;
                    }
                }
                accum(grads, *a, d);
            }
            Op::ClipRows(a, r) => {
                let x = self.value(*a);
                let mut d = Array2::zeros(x.dim());
                for row in 0..x.nrows() {
                    let xr = x.row(row);
                    let n = xr.dot(&xr).sqrt();
                    if n >= *r && n > 0.0 {
                        let scale = *r / n;
                        let mut dot = 0.0;
                        for j in 0..x.ncols() {
                            dot += dy[[row, j]] * xr[j] / n;
                        }
                        for j in 0..x.ncols() {
                            let hat = xr[j] / n;
                            d[[row, j]] = scale * (dy[[row, j]] - dot * hat);
                        }
                    } else {
                        for j in 0..x.ncols() {
                            d[[row, j]] = dy[[row, j]];
                        }
                    }
                }
                accum(grads, *a, d);
            }
            Op::ExpMapRows(a, c) => {
                let x = self.value(*a);
                let s = c.sqrt();
                let mut d = Array2::zeros(x.dim());
                for row in 0..x.nrows() {
                    let xr = x.row(row);
                    let n = xr.dot(&xr).sqrt();
                    let u = s * n;
                    let g = tanh_over_u(u);
                    // d/du [tanh(u)/u] / u, finite as u → 0
                    let gprime_over_u = if u < 1e-4 {
                        -2.0 / 3.0 + 8.0 * u * u / 15.0
                    } else {
                        let t = u.tanh();
                        (u * (1.0 - t * t) - t) / (u * u * u)
                    };
                    let factor = s * s * gprime_over_u;
                    let dot = dy.row(row).dot(&xr);
                    for j in 0..x.ncols() {
                        d[[row, j]] = g * dy[[row, j]] + factor * dot * xr[j];
                    }
                }
                accum(grads, *a, d);
            }
            Op::LogSumExpRowsMasked(a, mask) => {
                let x = self.value(*a);
                let y = &self.nodes[i].value;
                let mut d = Array2::zeros(x.dim());
                for r in 0..x.nrows() {
                    let g = dy[[r, 0]];
                    for j in 0..x.ncols() {
                        if mask[[r, j]] != 0.0 {
                            d[[r, j]] = g * (x[[r, j]] - y[[r, 0]]).exp();
                        }
                    }
                }
                accum(grads, *a, d);
            }
            Op::GatherCols(a, idx) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                for (r, &j) in idx.iter().enumerate() {
                    d[[r, j]] = dy[[r, 0]];
                }
                accum(grads, *a, d);
            }
            Op::SumAll(a) => {
                let d = Array2::from_elem(self.value(*a).dim(), dy[[0, 0]]);
                accum(grads, *a, d);
            }
            Op::WeightedSumAll(a, w) => {
                accum(grads, *a, w.as_ref() * dy[[0, 0]]);
            }
        }
    }
}

/// `tanh(u)/u`, continuous at zero.
fn tanh_over_u(u: f64) -> f64 {
    if u < 1e-4 {
        let u2 = u * u;
        1.0 - u2 / 3.0 + 2.0 * u2 * u2 / 15.0
    } else {
        u.tanh() / u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| scale * (rng.random::<f64>() - 0.5))
    }

    /// Central finite differences against the analytic gradient of a scalar
    /// function of one leaf.
    fn check_gradient<F>(build: F, x0: Array2<f64>, tol: f64)
    where
        F: Fn(&mut Tape, NodeId) -> NodeId,
    {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let out = build(&mut tape, x);
        let grads = tape.backward(out);
        let analytic = grads.wrt(&tape, x);

        let h = 1e-6;
        for idx in 0..x0.len() {
            let (r, c) = (idx / x0.ncols(), idx % x0.ncols());
            let eval = |v: f64| {
                let mut xp = x0.clone();
                xp[[r, c]] = v;
                let mut t = Tape::new();
                let leaf = t.leaf(xp);
                let o = build(&mut t, leaf);
                t.scalar(o)
            };
            let fd = (eval(x0[[r, c]] + h) - eval(x0[[r, c]] - h)) / (2.0 * h);
            let a = analytic[[r, c]];
            let denom = fd.abs().max(a.abs()).max(1e-6);
            assert!(
                (fd - a).abs() / denom < tol,
                "gradient mismatch at ({r},{c}): analytic {a} vs fd {fd}"
            );
        }
    }

    #[test]
    fn elementwise_op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 3, 4, 1.0);
        let y0 = random_matrix(&mut rng, 3, 4, 1.0).mapv(|v| v + 2.0);

        check_gradient(
            |t, x| {
                let s = t.tanh(x);
                t.sum_all(s)
            },
            x.clone(),
            1e-5,
        );
        check_gradient(
            |t, x| {
                let y = t.leaf(Array2::from_elem((3, 4), 0.7));
                let m = t.mul(x, y);
                t.sum_all(m)
            },
            x.clone(),
            1e-5,
        );
        let yc = y0.clone();
        check_gradient(
            move |t, x| {
                let y = t.leaf(yc.clone());
                let d = t.div(x, y);
                t.sum_all(d)
            },
            x.clone(),
            1e-5,
        );
        check_gradient(
            |t, x| {
                let a = t.scale(x, 2.5);
                let b = t.add_const(a, 1.0);
                let c = t.neg(b);
                t.sum_all(c)
            },
            x,
            1e-5,
        );
    }

    #[test]
    fn clamped_op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // positive inputs away from the clamps
        let x = random_matrix(&mut rng, 3, 3, 0.5).mapv(|v| v.abs() + 0.1);
        check_gradient(
            |t, x| {
                let s = t.sqrt_clamped(x, 1e-30);
                t.sum_all(s)
            },
            x.clone(),
            1e-5,
        );
        check_gradient(
            |t, x| {
                let s = t.atanh_clamped(x, 1.0 - 1e-7);
                t.sum_all(s)
            },
            x.mapv(|v| v.min(0.8)),
            1e-5,
        );
        check_gradient(
            |t, x| {
                let s = t.clamp_min(x, 0.05);
                let sq = t.mul(s, s);
                t.sum_all(sq)
            },
            x,
            1e-5,
        );
    }

    #[test]
    fn clamped_entries_have_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Array2::from_elem((1, 2), -1.0));
        let s = tape.sqrt_clamped(x, 1e-12);
        let out = tape.sum_all(s);
        let grads = tape.backward(out);
        assert_eq!(grads.wrt(&tape, x), Array2::zeros((1, 2)));
    }

    #[test]
    fn matmul_and_gram_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 3, 4, 1.0);
        let w0 = random_matrix(&mut rng, 4, 2, 1.0);

        let wc = w0.clone();
        check_gradient(
            move |t, x| {
                let w = t.leaf(wc.clone());
                let y = t.matmul(x, w);
                let sq = t.mul(y, y);
                t.sum_all(sq)
            },
            x.clone(),
            1e-5,
        );

        // gradient with respect to the right operand
        let xc = x.clone();
        check_gradient(
            move |t, w| {
                let x = t.leaf(xc.clone());
                let y = t.matmul(x, w);
                let sq = t.mul(y, y);
                t.sum_all(sq)
            },
            w0,
            1e-5,
        );

        check_gradient(
            |t, x| {
                let g = t.gram(x);
                let sq = t.mul(g, g);
                t.sum_all(sq)
            },
            x.clone(),
            1e-5,
        );

        check_gradient(
            |t, x| {
                let tr = t.transpose(x);
                let g = t.matmul(tr, x);
                t.sum_all(g)
            },
            x,
            1e-5,
        );
    }

    #[test]
    fn broadcast_op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 3, 4, 1.0);
        let row0 = random_matrix(&mut rng, 1, 4, 1.0);
        let col0 = random_matrix(&mut rng, 3, 1, 1.0);

        // wrt the matrix
        let (rc, cc) = (row0.clone(), col0.clone());
        check_gradient(
            move |t, x| {
                let row = t.leaf(rc.clone());
                let col = t.leaf(cc.clone());
                let a = t.add_row(x, row);
                let b = t.mul_col(a, col);
                let sq = t.mul(b, b);
                t.sum_all(sq)
            },
            x.clone(),
            1e-5,
        );
        // wrt the row vector
        let xc = x.clone();
        check_gradient(
            move |t, row| {
                let x = t.leaf(xc.clone());
                let a = t.add_row(x, row);
                let sq = t.mul(a, a);
                t.sum_all(sq)
            },
            row0,
            1e-5,
        );
        // wrt the column vector
        let xc = x.clone();
        check_gradient(
            move |t, col| {
                let x = t.leaf(xc.clone());
                let a = t.mul_col(x, col);
                let sq = t.mul(a, a);
                t.sum_all(sq)
            },
            col0,
            1e-5,
        );
    }

    #[test]
    fn row_structure_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 4, 3, 1.0).mapv(|v| v + 0.3);

        check_gradient(
            |t, x| {
                let n = t.row_sum_sq(x);
                let sq = t.mul(n, n);
                t.sum_all(sq)
            },
            x.clone(),
            1e-5,
        );
        check_gradient(
            |t, x| {
                let n = t.row_normalize(x);
                let w = t.leaf(Array2::from_shape_fn((4, 3), |(i, j)| {
                    0.3 + (i + 2 * j) as f64 * 0.1
                }));
                let m = t.mul(n, w);
                t.sum_all(m)
            },
            x.clone(),
            1e-4,
        );
        // rows straddling the clip radius exercise both branches; keep norms
        // away from the boundary itself
        check_gradient(
            |t, x| {
                let cl = t.clip_rows(x, 1.0);
                let sq = t.mul(cl, cl);
                let w = t.leaf(Array2::from_shape_fn((4, 3), |(i, j)| {
                    1.0 + (i as f64) * 0.2 + (j as f64) * 0.1
                }));
                let m = t.mul(sq, w);
                t.sum_all(m)
            },
            x.clone(),
            1e-4,
        );
        check_gradient(
            |t, x| {
                let e = t.exp_map_rows(x, 0.7);
                let sq = t.mul(e, e);
                t.sum_all(sq)
            },
            x,
            1e-4,
        );
    }

    #[test]
    fn pairwise_sq_dist_gradient_and_exact_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_matrix(&mut rng, 4, 3, 1.0);
        check_gradient(
            |t, x| {
                let q = t.pairwise_sq_dist(x);
                let w = t.leaf(Array2::from_shape_fn((4, 4), |(i, j)| {
                    0.1 + ((3 * i + j) % 5) as f64 * 0.2
                }));
                let m = t.mul(q, w);
                t.sum_all(m)
            },
            x.clone(),
            1e-5,
        );
        // identical rows give an exactly-zero distance
        let mut dup = x.clone();
        let row0 = dup.row(0).to_owned();
        dup.row_mut(2).assign(&row0);
        let mut tape = Tape::new();
        let leaf = tape.leaf(dup);
        let q = tape.pairwise_sq_dist(leaf);
        assert_eq!(tape.value(q)[[0, 2]], 0.0);
        assert_eq!(tape.value(q)[[2, 0]], 0.0);
        for i in 0..4 {
            assert_eq!(tape.value(q)[[i, i]], 0.0);
        }
    }

    #[test]
    fn concat_cols_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_matrix(&mut rng, 3, 2, 1.0);
        let y0 = random_matrix(&mut rng, 3, 4, 1.0);
        let yc = y0.clone();
        check_gradient(
            move |t, x| {
                let y = t.leaf(yc.clone());
                let cat = t.concat_cols(x, y);
                let sq = t.mul(cat, cat);
                t.sum_all(sq)
            },
            x.clone(),
            1e-5,
        );
        let xc = x.clone();
        check_gradient(
            move |t, y| {
                let x = t.leaf(xc.clone());
                let cat = t.concat_cols(x, y);
                let n = t.row_normalize(cat);
                let w = t.leaf(Array2::from_shape_fn((3, 6), |(i, j)| 0.2 + (i + j) as f64 * 0.1));
                let m = t.mul(n, w);
                t.sum_all(m)
            },
            y0,
            1e-4,
        );
    }

    #[test]
    fn reduction_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_matrix(&mut rng, 4, 5, 2.0);

        let mask = Rc::new(Array2::from_shape_fn((4, 5), |(i, j)| {
            if (i + j) % 2 == 0 { 1.0 } else { 0.0 }
        }));
        let mc = Rc::clone(&mask);
        check_gradient(
            move |t, x| {
                let l = t.log_sum_exp_rows_masked(x, Rc::clone(&mc));
                t.sum_all(l)
            },
            x.clone(),
            1e-5,
        );

        let idx = Rc::new(vec![0usize, 2, 4, 1]);
        let ic = Rc::clone(&idx);
        check_gradient(
            move |t, x| {
                let g = t.gather_cols(x, Rc::clone(&ic));
                let sq = t.mul(g, g);
                t.sum_all(sq)
            },
            x.clone(),
            1e-5,
        );

        let w = Rc::new(random_matrix(&mut rng, 4, 5, 1.0));
        let wc = Rc::clone(&w);
        check_gradient(
            move |t, x| t.weighted_sum_all(x, Rc::clone(&wc)),
            x,
            1e-5,
        );
    }

    #[test]
    fn node_reuse_accumulates_gradients() {
        // f(x) = sum(x ⊙ x) + sum(x): reused node must receive both paths
        let x0 = Array2::from_shape_fn((2, 2), |(i, j)| 1.0 + i as f64 + j as f64);
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let sq = tape.mul(x, x);
        let s1 = tape.sum_all(sq);
        let s2 = tape.sum_all(x);
        let out = tape.add(s1, s2);
        let grads = tape.backward(out);
        let g = grads.wrt(&tape, x);
        for (gv, xv) in g.iter().zip(x0.iter()) {
            assert!((gv - (2.0 * xv + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn logsumexp_matches_naive() {
        let x = Array2::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64 * 0.5 - 1.0);
        let mask = Rc::new(Array2::ones((2, 3)));
        let mut tape = Tape::new();
        let leaf = tape.leaf(x.clone());
        let lse = tape.log_sum_exp_rows_masked(leaf, mask);
        for i in 0..2 {
            let naive: f64 = (0..3).map(|j| x[[i, j]].exp()).sum::<f64>().ln();
            assert!((tape.value(lse)[[i, 0]] - naive).abs() < 1e-12);
        }
    }
}
