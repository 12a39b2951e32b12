//! The joint embedding loss stack: hypersphere compactness and disparity,
//! supervised hyperbolic contrastive loss, cross-entropy, and their sum.
//!
//! One temperature `τ` (default 0.1) is shared by the compactness posterior,
//! the disparity loss, and the hyperbolic contrastive loss. Loss values are
//! computed directly with stable log-sum-exp; the `*_grads` variants rebuild
//! the same expressions on an autodiff tape, so the two routes cross-check
//! each other in tests.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::geometry::{Curvature, PoincareVector, ATANH_CLAMP, DENOM_FLOOR};
use crate::linalg::l2_norm;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, RngExt};
use std::rc::Rc;

/// Shared temperature default.
pub const DEFAULT_TAU: f64 = 0.1;
/// Default EMA decay for prototype maintenance.
pub const DEFAULT_PROTOTYPE_DECAY: f64 = 0.95;

const UNIT_NORM_TOL: f64 = 1e-6;

/// K unit-norm class prototypes on the hypersphere plus the shared
/// temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    prototypes: Array2<f64>,
    tau: f64,
}

impl PrototypeSet {
    /// Validates unit-norm rows (±1e−6), `K ≥ 1`, and `τ > 0`.
    pub fn new(prototypes: Array2<f64>, tau: f64) -> Result<Self> {
        if prototypes.nrows() == 0 || prototypes.ncols() == 0 {
            return Err(Error::contract("prototype matrix must be non-empty"));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::contract(format!("temperature must be positive, got {tau}")));
        }
        for (i, row) in prototypes.rows().into_iter().enumerate() {
            let n = l2_norm(row);
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::contract(format!(
                    "prototype {i} has norm {n}, expected unit length"
                )));
            }
        }
        Ok(PrototypeSet { prototypes, tau })
    }

    /// Random unit prototypes, for training initialization.
    pub fn random<R: Rng>(num_classes: usize, dim: usize, tau: f64, rng: &mut R) -> Result<Self> {
        let mut m = Array2::from_shape_fn((num_classes, dim), |_| rng.random::<f64>() - 0.5);
        crate::linalg::normalize_rows(&mut m);
        PrototypeSet::new(m, tau)
    }

    pub fn prototypes(&self) -> ArrayView2<'_, f64> {
        self.prototypes.view()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.nrows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.ncols()
    }
}

/// A batch of points on a shared Poincaré ball, stored as matrix rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PoincareBatch {
    points: Array2<f64>,
    curvature: Curvature,
}

impl PoincareBatch {
    pub fn new(points: Array2<f64>, curvature: Curvature) -> Result<Self> {
        for (i, row) in points.rows().into_iter().enumerate() {
            let ns = row.dot(&row);
            if !curvature.contains_norm_sq(ns) {
                return Err(Error::contract(format!(
                    "hyperbolic row {i} violates the ball invariant (c·‖u‖² = {})",
                    curvature.value() * ns
                )));
            }
        }
        Ok(PoincareBatch { points, curvature })
    }

    pub fn from_vectors(points: &[PoincareVector]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::contract("empty hyperbolic batch"))?;
        let dim = first.dim();
        let curvature = first.curvature();
        let mut m = Array2::zeros((points.len(), dim));
        for (i, p) in points.iter().enumerate() {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch(format!("{} vs {dim}", p.dim())));
            }
            if p.curvature() != curvature {
                return Err(Error::CurvatureMismatch {
                    left: p.curvature().value(),
                    right: curvature.value(),
                });
            }
            m.row_mut(i).assign(&p.components());
        }
        Ok(PoincareBatch {
            points: m,
            curvature,
        })
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn row(&self, i: usize) -> PoincareVector {
        PoincareVector::project(self.points.row(i).to_owned(), self.curvature)
    }
}

/// One training batch over the full set ℐ = originals ∪ augmented views.
///
/// `view_ids` pair each augmented row with its original (rows sharing an id
/// are views of the same underlying sample); `augmented` marks membership in
/// the contrastive denominator set 𝒜.
#[derive(Debug, Clone)]
pub struct LabeledEmbeddingBatch {
    sphere: Array2<f64>,
    hyperbolic: PoincareBatch,
    logits: Array2<f64>,
    labels: Vec<usize>,
    view_ids: Vec<usize>,
    augmented: Vec<bool>,
}

impl LabeledEmbeddingBatch {
    pub fn new(
        sphere: Array2<f64>,
        hyperbolic: PoincareBatch,
        logits: Array2<f64>,
        labels: Vec<usize>,
        view_ids: Vec<usize>,
        augmented: Vec<bool>,
    ) -> Result<Self> {
        let n = sphere.nrows();
        if n == 0 {
            return Err(Error::contract("empty batch"));
        }
        if hyperbolic.len() != n
            || logits.nrows() != n
            || labels.len() != n
            || view_ids.len() != n
            || augmented.len() != n
        {
            return Err(Error::DimensionMismatch(
                "batch fields disagree on sample count".into(),
            ));
        }
        let k = logits.ncols();
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        for (i, row) in sphere.rows().into_iter().enumerate() {
            let norm = l2_norm(row);
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::contract(format!(
                    "sphere embedding {i} has norm {norm}, expected unit length"
                )));
            }
        }
        Ok(LabeledEmbeddingBatch {
            sphere,
            hyperbolic,
            logits,
            labels,
            view_ids,
            augmented,
        })
    }

    pub fn len(&self) -> usize {
        self.sphere.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sphere(&self) -> ArrayView2<'_, f64> {
        self.sphere.view()
    }

    pub fn hyperbolic(&self) -> &PoincareBatch {
        &self.hyperbolic
    }

    pub fn logits(&self) -> ArrayView2<'_, f64> {
        self.logits.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn view_ids(&self) -> &[usize] {
        &self.view_ids
    }

    pub fn augmented(&self) -> &[bool] {
        &self.augmented
    }
}

/// Per-component loss values; `l_total` is always their exact sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l_com: f64,
    pub l_dis: f64,
    pub l_hypb: f64,
    pub l_ce: f64,
    pub l_total: f64,
}

impl LossReport {
    pub fn from_components(l_com: f64, l_dis: f64, l_hypb: f64, l_ce: f64) -> Self {
        LossReport {
            l_com,
            l_dis,
            l_hypb,
            l_ce,
            l_total: l_com + l_dis + l_hypb + l_ce,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_total.is_finite()
    }
}

/// Gradients of the joint loss with respect to the batch tensors and the
/// prototypes.
#[derive(Debug, Clone)]
pub struct JointLossGrads {
    pub sphere: Array2<f64>,
    pub hyperbolic: Array2<f64>,
    pub logits: Array2<f64>,
    pub prototypes: Array2<f64>,
}

fn softmax_rows_scaled(dots: ArrayView2<f64>, tau: f64) -> Array2<f64> {
    let mut out = Array2::zeros(dots.dim());
    for (i, row) in dots.rows().into_iter().enumerate() {
        let hi = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b / tau));
        let mut sum = 0.0;
        for (j, &x) in row.iter().enumerate() {
            let e = (x / tau - hi).exp();
            out[[i, j]] = e;
            sum += e;
        }
        for j in 0..row.len() {
            out[[i, j]] /= sum;
        }
    }
    out
}

/// Posterior over classes for a unit sphere embedding:
/// `softmax(μ_k·z / τ)`, summing to one.
pub fn vmf_class_posterior(z: ArrayView1<f64>, protos: &PrototypeSet) -> Result<Array1<f64>> {
    if z.len() != protos.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {}",
            z.len(),
            protos.dim()
        )));
    }
    let dots = protos.prototypes().dot(&z).insert_axis(Axis(0));
    let sm = softmax_rows_scaled(dots.view(), protos.tau());
    Ok(sm.row(0).to_owned())
}

fn check_sphere_batch(batch: &LabeledEmbeddingBatch, protos: &PrototypeSet) -> Result<()> {
    if batch.sphere.ncols() != protos.dim() {
        return Err(Error::DimensionMismatch(format!(
            "sphere dim {} vs prototype dim {}",
            batch.sphere.ncols(),
            protos.dim()
        )));
    }
    if let Some(&bad) = batch.labels.iter().find(|&&l| l >= protos.num_classes()) {
        return Err(Error::contract(format!(
            "label {bad} out of range for {} prototypes",
            protos.num_classes()
        )));
    }
    Ok(())
}

/// Mean over samples of `−log P(y_i | z_s,i)`; non-negative, `ln K` under
/// uniform posteriors, zero when `K = 1`.
pub fn compactness_loss(batch: &LabeledEmbeddingBatch, protos: &PrototypeSet) -> Result<f64> {
    check_sphere_batch(batch, protos)?;
    let posteriors = softmax_rows_scaled(
        batch.sphere.dot(&protos.prototypes().t()).view(),
        protos.tau(),
    );
    let mut total = 0.0;
    for (i, &label) in batch.labels.iter().enumerate() {
        total -= posteriors[[i, label]].max(DENOM_FLOOR).ln();
    }
    Ok(total / batch.len() as f64)
}

/// Mean over prototypes of `log[(1/(K−1)) Σ_{j≠i} exp(μ_i·μ_j / τ)]`;
/// requires `K ≥ 2`.
pub fn disparity_loss(protos: &PrototypeSet) -> Result<f64> {
    let k = protos.num_classes();
    if k < 2 {
        return Err(Error::contract(
            "disparity loss needs at least two prototypes",
        ));
    }
    let tau = protos.tau();
    let gram = protos.prototypes().dot(&protos.prototypes().t());
    let mut total = 0.0;
    for i in 0..k {
        let mut hi = f64::NEG_INFINITY;
        for j in 0..k {
            if j != i {
                hi = hi.max(gram[[i, j]] / tau);
            }
        }
        let mut sum = 0.0;
        for j in 0..k {
            if j != i {
                sum += (gram[[i, j]] / tau - hi).exp();
            }
        }
        total += hi + sum.ln() - ((k - 1) as f64).ln();
    }
    Ok(total / k as f64)
}

/// Supervised contrastive loss over geodesic distances on the ball.
///
/// Positives for anchor `i` are all other batch elements with the same
/// label; the denominator runs over the augmented subset 𝒜. Anchors with no
/// positives contribute nothing and are counted in the returned diagnostic.
pub fn hyperbolic_contrastive_loss_detailed(
    batch: &LabeledEmbeddingBatch,
    tau: f64,
) -> Result<(f64, usize)> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::contract(format!("temperature must be positive, got {tau}")));
    }
    let n = batch.len();
    let aug_count = batch.augmented.iter().filter(|&&a| a).count();
    if aug_count == 0 {
        return Err(Error::contract(
            "contrastive denominator set is empty: batch has no augmented views",
        ));
    }
    let dist = pairwise_geodesic(batch.hyperbolic());
    let mut loss = 0.0;
    let mut skipped = 0usize;
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != i && batch.labels[j] == batch.labels[i])
            .collect();
        if positives.is_empty() {
            skipped += 1;
            continue;
        }
        // log Σ_{a∈𝒜} exp(−D_ia/τ), stabilized
        let mut hi = f64::NEG_INFINITY;
        for a in 0..n {
            if batch.augmented[a] {
                hi = hi.max(-dist[[i, a]] / tau);
            }
        }
        let mut denom = 0.0;
        for a in 0..n {
            if batch.augmented[a] {
                denom += (-dist[[i, a]] / tau - hi).exp();
            }
        }
        let log_denom = hi + denom.ln();
        let mut anchor = 0.0;
        for &p in &positives {
            anchor += -dist[[i, p]] / tau - log_denom;
        }
        loss -= anchor / positives.len() as f64;
    }
    Ok((loss, skipped))
}

/// [`hyperbolic_contrastive_loss_detailed`] without the diagnostic counter.
pub fn hyperbolic_contrastive_loss(batch: &LabeledEmbeddingBatch, tau: f64) -> Result<f64> {
    hyperbolic_contrastive_loss_detailed(batch, tau).map(|(l, _)| l)
}

fn pairwise_geodesic(batch: &PoincareBatch) -> Array2<f64> {
    let n = batch.len();
    let mut dist = Array2::zeros((n, n));
    for i in 0..n {
        let pi = batch.row(i);
        for j in (i + 1)..n {
            let d = pi.distance(&batch.row(j)).expect("shared ball");
            dist[[i, j]] = d;
            dist[[j, i]] = d;
        }
    }
    dist
}

/// Mean negative log softmax of the true class.
pub fn cross_entropy_loss(logits: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    if logits.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} logit rows vs {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if logits.nrows() == 0 {
        return Err(Error::contract("empty logits"));
    }
    let k = logits.ncols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::contract(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let mut total = 0.0;
    for (row, &label) in logits.rows().into_iter().zip(labels.iter()) {
        let hi = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = hi + row.iter().map(|&x| (x - hi).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok(total / labels.len() as f64)
}

/// Unweighted joint loss. The disparity term is defined as zero for `K = 1`,
/// where the pairwise sum is empty.
pub fn joint_loss(batch: &LabeledEmbeddingBatch, protos: &PrototypeSet) -> Result<LossReport> {
    check_sphere_batch(batch, protos)?;
    let l_com = compactness_loss(batch, protos)?;
    let l_dis = if protos.num_classes() >= 2 {
        disparity_loss(protos)?
    } else {
        0.0
    };
    let l_hypb = hyperbolic_contrastive_loss(batch, protos.tau())?;
    let l_ce = cross_entropy_loss(batch.logits(), batch.labels())?;
    Ok(LossReport::from_components(l_com, l_dis, l_hypb, l_ce))
}

/// EMA prototype maintenance: for each class present in the batch,
/// `μ_k ← normalize(decay·μ_k + (1−decay)·mean(z_s of class k))`.
/// Classes absent from the batch are unchanged.
pub fn update_prototypes(
    protos: &PrototypeSet,
    batch: &LabeledEmbeddingBatch,
    decay: f64,
) -> Result<PrototypeSet> {
    check_sphere_batch(batch, protos)?;
    update_prototypes_from_rows(protos, batch.sphere(), &batch.labels, decay)
}

pub(crate) fn update_prototypes_from_rows(
    protos: &PrototypeSet,
    sphere: ArrayView2<f64>,
    labels: &[usize],
    decay: f64,
) -> Result<PrototypeSet> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::contract(format!(
            "prototype decay must lie in [0, 1], got {decay}"
        )));
    }
    let k = protos.num_classes();
    let d = protos.dim();
    let mut sums = Array2::<f64>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (i, &label) in labels.iter().enumerate() {
        let mut row = sums.row_mut(label);
        row += &sphere.row(i);
        counts[label] += 1;
    }
    let mut updated = protos.prototypes.clone();
    for class in 0..k {
        if counts[class] == 0 {
            continue;
        }
        let mean = &sums.row(class) / counts[class] as f64;
        let blended = &updated.row(class) * decay + &mean * (1.0 - decay);
        let norm = l2_norm(blended.view());
        if norm < 1e-12 {
            continue; // degenerate blend; keep the previous prototype
        }
        updated.row_mut(class).assign(&(&blended / norm));
    }
    PrototypeSet::new(updated, protos.tau)
}

// ---------------------------------------------------------------------------
// Tape graph builders shared with the training engine.
// ---------------------------------------------------------------------------

/// Pairwise geodesic distance matrix `[N, N]` for ball points given as rows
/// of node `z`. With `q = ‖u − v‖²` and `P = (1 − c‖u‖²)(1 − c‖v‖²)` the
/// Möbius difference norm satisfies
/// `‖−u ⊕_c v‖² = q·(c·q + P) / (c·q + P)²`,
/// in which every term is non-negative, so coincident pairs (the diagonal in
/// particular) come out exactly zero instead of as cancellation residue.
pub(crate) fn geodesic_matrix_graph(tape: &mut Tape, z: NodeId, c: f64) -> NodeId {
    let q = tape.pairwise_sq_dist(z); // [N,N], exact zeros on the diagonal
    let a = tape.row_sum_sq(z); // [N,1] squared norms
    let p_col = {
        let t = tape.scale(a, -c);
        tape.add_const(t, 1.0) // 1 − c‖u‖², positive inside the ball
    };
    let p_row = tape.transpose(p_col);
    let p = tape.matmul(p_col, p_row); // P_ij, outer product
    let cq = tape.scale(q, c);
    let cq_p = tape.add(cq, p);
    let num = tape.mul(q, cq_p);
    let den = {
        let sq = tape.mul(cq_p, cq_p);
        tape.clamp_min(sq, DENOM_FLOOR)
    };
    let s = tape.div(num, den);
    // exact zeros stay zeros through the clamped sqrt, with zero gradient at
    // the (non-differentiable) coincidence point
    let norm = tape.sqrt_clamped(s, 0.0);
    let arg = tape.scale(norm, c.sqrt());
    let at = tape.atanh_clamped(arg, ATANH_CLAMP);
    tape.scale(at, 2.0 / c.sqrt())
}

pub(crate) fn compactness_graph(
    tape: &mut Tape,
    sphere: NodeId,
    protos: NodeId,
    labels: &[usize],
    tau: f64,
) -> NodeId {
    let n = labels.len();
    let k = tape.value(protos).nrows();
    let pt = tape.transpose(protos);
    let dots = tape.matmul(sphere, pt);
    let logits = tape.scale(dots, 1.0 / tau);
    let all = Rc::new(Array2::ones((n, k)));
    let lse = tape.log_sum_exp_rows_masked(logits, all);
    let picked = tape.gather_cols(logits, Rc::new(labels.to_vec()));
    let diff = tape.sub(lse, picked);
    let total = tape.sum_all(diff);
    tape.scale(total, 1.0 / n as f64)
}

pub(crate) fn disparity_graph(tape: &mut Tape, protos: NodeId, tau: f64) -> NodeId {
    let k = tape.value(protos).nrows();
    debug_assert!(k >= 2);
    let gram = tape.gram(protos);
    let logits = tape.scale(gram, 1.0 / tau);
    let offdiag = Rc::new(Array2::from_shape_fn((k, k), |(i, j)| {
        if i == j { 0.0 } else { 1.0 }
    }));
    let lse = tape.log_sum_exp_rows_masked(logits, offdiag);
    let total = tape.sum_all(lse);
    let mean = tape.scale(total, 1.0 / k as f64);
    tape.add_const(mean, -((k - 1) as f64).ln())
}

pub(crate) fn hyperbolic_graph(
    tape: &mut Tape,
    hyper: NodeId,
    labels: &[usize],
    augmented: &[bool],
    c: f64,
    tau: f64,
) -> (NodeId, usize) {
    let n = labels.len();
    let dist = geodesic_matrix_graph(tape, hyper, c);
    let w = tape.scale(dist, -1.0 / tau);

    let denom_mask = Rc::new(Array2::from_shape_fn((n, n), |(_, j)| {
        if augmented[j] { 1.0 } else { 0.0 }
    }));
    let log_denom = tape.log_sum_exp_rows_masked(w, denom_mask);

    let mut pos_weights = Array2::<f64>::zeros((n, n));
    let mut anchor_weights = Array2::<f64>::zeros((n, 1));
    let mut skipped = 0usize;
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if positives.is_empty() {
            skipped += 1;
            continue;
        }
        let wgt = 1.0 / positives.len() as f64;
        for j in positives {
            pos_weights[[i, j]] = wgt;
        }
        anchor_weights[[i, 0]] = 1.0;
    }
    let pos_term = tape.weighted_sum_all(w, Rc::new(pos_weights));
    let denom_term = tape.weighted_sum_all(log_denom, Rc::new(anchor_weights));
    (tape.sub(denom_term, pos_term), skipped)
}

pub(crate) fn cross_entropy_graph(tape: &mut Tape, logits: NodeId, labels: &[usize]) -> NodeId {
    let n = labels.len();
    let k = tape.value(logits).ncols();
    let all = Rc::new(Array2::ones((n, k)));
    let lse = tape.log_sum_exp_rows_masked(logits, all);
    let picked = tape.gather_cols(logits, Rc::new(labels.to_vec()));
    let diff = tape.sub(lse, picked);
    let total = tape.sum_all(diff);
    tape.scale(total, 1.0 / n as f64)
}

/// Builds the four-component joint loss on an existing tape. Returns the
/// component nodes so callers can read them off as a [`LossReport`].
pub(crate) struct JointLossNodes {
    pub l_com: NodeId,
    pub l_dis: Option<NodeId>,
    pub l_hypb: NodeId,
    pub l_ce: NodeId,
    pub l_total: NodeId,
    pub skipped_anchors: usize,
}

pub(crate) fn joint_loss_graph(
    tape: &mut Tape,
    sphere: NodeId,
    hyper: NodeId,
    logits: NodeId,
    protos: NodeId,
    labels: &[usize],
    augmented: &[bool],
    c: f64,
    tau: f64,
) -> JointLossNodes {
    let k = tape.value(protos).nrows();
    let l_com = compactness_graph(tape, sphere, protos, labels, tau);
    let l_dis = (k >= 2).then(|| disparity_graph(tape, protos, tau));
    let (l_hypb, skipped_anchors) = hyperbolic_graph(tape, hyper, labels, augmented, c, tau);
    let l_ce = cross_entropy_graph(tape, logits, labels);
    let mut acc = tape.add(l_com, l_hypb);
    acc = tape.add(acc, l_ce);
    if let Some(dis) = l_dis {
        acc = tape.add(acc, dis);
    }
    JointLossNodes {
        l_com,
        l_dis,
        l_hypb,
        l_ce,
        l_total: acc,
        skipped_anchors,
    }
}

impl JointLossNodes {
    pub(crate) fn report(&self, tape: &Tape) -> LossReport {
        LossReport::from_components(
            tape.scalar(self.l_com),
            self.l_dis.map_or(0.0, |n| tape.scalar(n)),
            tape.scalar(self.l_hypb),
            tape.scalar(self.l_ce),
        )
    }
}

// ---------------------------------------------------------------------------
// Analytic gradients via the tape.
// ---------------------------------------------------------------------------

/// Value and gradients (w.r.t. sphere embeddings, prototypes) of the
/// compactness loss.
pub fn compactness_loss_grads(
    batch: &LabeledEmbeddingBatch,
    protos: &PrototypeSet,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    check_sphere_batch(batch, protos)?;
    let mut tape = Tape::new();
    let zs = tape.leaf(batch.sphere.clone());
    let mu = tape.leaf(protos.prototypes.clone());
    let out = compactness_graph(&mut tape, zs, mu, &batch.labels, protos.tau());
    let grads = tape.backward(out);
    Ok((
        tape.scalar(out),
        grads.wrt(&tape, zs),
        grads.wrt(&tape, mu),
    ))
}

/// Value and gradient (w.r.t. prototypes) of the disparity loss.
pub fn disparity_loss_grads(protos: &PrototypeSet) -> Result<(f64, Array2<f64>)> {
    if protos.num_classes() < 2 {
        return Err(Error::contract(
            "disparity loss needs at least two prototypes",
        ));
    }
    let mut tape = Tape::new();
    let mu = tape.leaf(protos.prototypes.clone());
    let out = disparity_graph(&mut tape, mu, protos.tau());
    let grads = tape.backward(out);
    Ok((tape.scalar(out), grads.wrt(&tape, mu)))
}

/// Value and ambient-coordinate gradient (w.r.t. the hyperbolic embeddings)
/// of the contrastive loss.
pub fn hyperbolic_contrastive_loss_grads(
    batch: &LabeledEmbeddingBatch,
    tau: f64,
) -> Result<(f64, Array2<f64>)> {
    if batch.augmented.iter().all(|&a| !a) {
        return Err(Error::contract(
            "contrastive denominator set is empty: batch has no augmented views",
        ));
    }
    let mut tape = Tape::new();
    let zh = tape.leaf(batch.hyperbolic.points.clone());
    let (out, _) = hyperbolic_graph(
        &mut tape,
        zh,
        &batch.labels,
        &batch.augmented,
        batch.hyperbolic.curvature.value(),
        tau,
    );
    let grads = tape.backward(out);
    Ok((tape.scalar(out), grads.wrt(&tape, zh)))
}

/// Value and gradient (w.r.t. logits) of the cross-entropy loss.
pub fn cross_entropy_loss_grads(
    logits: ArrayView2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>)> {
    cross_entropy_loss(logits, labels)?; // validates
    let mut tape = Tape::new();
    let lg = tape.leaf(logits.to_owned());
    let out = cross_entropy_graph(&mut tape, lg, labels);
    let grads = tape.backward(out);
    Ok((tape.scalar(out), grads.wrt(&tape, lg)))
}

/// Joint loss with gradients for every batch tensor and the prototypes.
pub fn joint_loss_with_grads(
    batch: &LabeledEmbeddingBatch,
    protos: &PrototypeSet,
) -> Result<(LossReport, JointLossGrads)> {
    check_sphere_batch(batch, protos)?;
    if batch.augmented.iter().all(|&a| !a) {
        return Err(Error::contract(
            "contrastive denominator set is empty: batch has no augmented views",
        ));
    }
    let mut tape = Tape::new();
    let zs = tape.leaf(batch.sphere.clone());
    let zh = tape.leaf(batch.hyperbolic.points.clone());
    let lg = tape.leaf(batch.logits.clone());
    let mu = tape.leaf(protos.prototypes.clone());
    let nodes = joint_loss_graph(
        &mut tape,
        zs,
        zh,
        lg,
        mu,
        &batch.labels,
        &batch.augmented,
        batch.hyperbolic.curvature.value(),
        protos.tau(),
    );
    let grads = tape.backward(nodes.l_total);
    Ok((
        nodes.report(&tape),
        JointLossGrads {
            sphere: grads.wrt(&tape, zs),
            hyperbolic: grads.wrt(&tape, zh),
            logits: grads.wrt(&tape, lg),
            prototypes: grads.wrt(&tape, mu),
        },
    ))
}


#[cfg(test)]
mod distance_route_tests {
    use super::*;
    use crate::autodiff::Tape;
    use ndarray::Array2;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// The vectorized tape route and the scalar gyrovector route are two
    /// independent evaluations of the same geodesic; they must agree tightly,
    /// with exact zeros on the diagonal.
    #[test]
    fn tape_distance_matrix_matches_scalar_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for &c in &[0.01, 0.5, 1.0] {
            let curv = Curvature::new(c).unwrap();
            let mut pts = Array2::from_shape_fn((6, 5), |_| rng.random::<f64>() - 0.5);
            for mut row in pts.rows_mut() {
                let n = row.dot(&row).sqrt();
                let target = rng.random::<f64>() * 0.9 / c.sqrt();
                row.mapv_inplace(|x| x * target / n);
            }
            let batch = PoincareBatch::new(pts.clone(), curv).unwrap();
            let mut tape = Tape::new();
            let z = tape.leaf(pts.clone());
            let d_node = geodesic_matrix_graph(&mut tape, z, c);
            let d_tape = tape.value(d_node);
            for i in 0..6 {
                assert_eq!(d_tape[[i, i]], 0.0, "diagonal must be exactly zero");
                for j in 0..6 {
                    let d_scalar = batch.row(i).distance(&batch.row(j)).unwrap();
                    let diff = (d_tape[[i, j]] - d_scalar).abs();
                    assert!(
                        diff < 1e-11,
                        "routes diverge at ({i},{j}), c={c}: tape {} vs scalar {d_scalar}",
                        d_tape[[i, j]]
                    );
                }
            }
        }
    }
}
