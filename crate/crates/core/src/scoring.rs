//! OOD scoring over the shared latent space.
//!
//! Every score is a squared L2 distance on the trained network's normalized
//! latent `z` (never a geodesic): the k-th-neighbor score, the mean distance
//! to the `p` nearest class centers, their sum (PKNN), and a shared-covariance
//! Mahalanobis ablation. Test-time enrollment subtracts the distance to an
//! enrolled OOD prototype and adds the distance to the nearest novel-class
//! prototype, modifying scores without touching the trained model.
//!
//! The [`ReferenceIndex`] is immutable after construction; all queries are
//! read-only and deterministic, with neighbor/center ties broken by
//! ascending storage index.

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, l2_norm, squared_distance};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

/// Default neighbor rank (capped at the index size).
pub const DEFAULT_K: usize = 300;
/// Default number of nearest class centers.
pub const DEFAULT_P: usize = 3;
const UNIT_NORM_TOL: f64 = 1e-6;
const COVARIANCE_RIDGE: f64 = 1e-6;

/// Immutable store of unit-norm ID training embeddings with per-class
/// centers (normalized class means).
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceIndex {
    embeddings: Array2<f64>,
    labels: Vec<usize>,
    class_centers: Array2<f64>,
}

impl ReferenceIndex {
    /// Builds the index. Labels must be contiguous `0..K` with every class
    /// populated; embedding rows must be unit norm (±1e−6).
    pub fn build(embeddings: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        let m = embeddings.nrows();
        if m == 0 {
            return Err(Error::contract("reference index needs at least one row"));
        }
        if labels.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{m} embedding rows vs {} labels",
                labels.len()
            )));
        }
        for (i, row) in embeddings.rows().into_iter().enumerate() {
            let n = l2_norm(row);
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::contract(format!(
                    "embedding {i} has norm {n}, expected unit length"
                )));
            }
        }
        let num_classes = labels.iter().max().map_or(0, |&l| l + 1);
        let mut counts = vec![0usize; num_classes];
        for &l in &labels {
            counts[l] += 1;
        }
        if let Some(gap) = counts.iter().position(|&c| c == 0) {
            return Err(Error::contract(format!(
                "label gap: class {gap} has no samples"
            )));
        }
        let d = embeddings.ncols();
        let mut centers = Array2::<f64>::zeros((num_classes, d));
        for (i, &l) in labels.iter().enumerate() {
            let mut row = centers.row_mut(l);
            row += &embeddings.row(i);
        }
        for (k, &count) in counts.iter().enumerate() {
            let mut row = centers.row_mut(k);
            row /= count as f64;
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                row /= n;
            }
        }
        Ok(ReferenceIndex {
            embeddings,
            labels,
            class_centers: centers,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_centers.nrows()
    }

    pub fn embeddings(&self) -> ArrayView2<'_, f64> {
        self.embeddings.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_centers(&self) -> ArrayView2<'_, f64> {
        self.class_centers.view()
    }

    fn check_query(&self, z: ArrayView1<f64>) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "query dim {} vs index dim {}",
                z.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// `k`/`p` configuration for PKNN scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoringConfig {
    pub k: usize,
    pub p: usize,
}

impl ScoringConfig {
    /// Defaults adapted to an index: `k = min(300, M)`, `p = min(3, K)`.
    pub fn for_index(index: &ReferenceIndex) -> Self {
        ScoringConfig {
            k: DEFAULT_K.min(index.len()),
            p: DEFAULT_P.min(index.num_classes()),
        }
    }

    pub fn validate(&self, index: &ReferenceIndex) -> Result<()> {
        if self.k == 0 || self.k > index.len() {
            return Err(Error::contract(format!(
                "k must lie in [1, {}], got {}",
                index.len(),
                self.k
            )));
        }
        if self.p > index.num_classes() {
            return Err(Error::contract(format!(
                "p must lie in [0, {}], got {}",
                index.num_classes(),
                self.p
            )));
        }
        Ok(())
    }
}

/// Squared L2 distance to the k-th nearest stored embedding (ascending
/// distance, ties by ascending storage index). Exact full scan.
pub fn knn_score(z: ArrayView1<f64>, index: &ReferenceIndex, k: usize) -> Result<f64> {
    index.check_query(z)?;
    if k == 0 || k > index.len() {
        return Err(Error::contract(format!(
            "k must lie in [1, {}], got {k}",
            index.len()
        )));
    }
    let mut dists: Vec<(f64, usize)> = index
        .embeddings
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| (squared_distance(z, row), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    dists.select_nth_unstable_by(k - 1, cmp);
    Ok(dists[k - 1].0)
}

/// Mean squared L2 distance to the `p` nearest class centers; zero when
/// `p = 0`.
pub fn prototype_score(z: ArrayView1<f64>, index: &ReferenceIndex, p: usize) -> Result<f64> {
    index.check_query(z)?;
    if p > index.num_classes() {
        return Err(Error::contract(format!(
            "p must lie in [0, {}], got {p}",
            index.num_classes()
        )));
    }
    if p == 0 {
        return Ok(0.0);
    }
    let mut dists: Vec<(f64, usize)> = index
        .class_centers
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| (squared_distance(z, row), i))
        .collect();
    dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(dists[..p].iter().map(|(d, _)| d).sum::<f64>() / p as f64)
}

/// Prototype-aware KNN score: `S(z) = S_k(z) + S_p(z)`. With `p = 0` this is
/// exactly the plain k-NN score.
pub fn pknn_score(
    z: ArrayView1<f64>,
    index: &ReferenceIndex,
    config: &ScoringConfig,
) -> Result<f64> {
    let base = knn_score(z, index, config.k)?;
    if config.p == 0 {
        return Ok(base);
    }
    Ok(base + prototype_score(z, index, config.p)?)
}

/// Shared-covariance Mahalanobis scorer (minimum squared Mahalanobis
/// distance over class centers). The within-class covariance is estimated
/// around the index's normalized centers and ridged by `1e−6·I`.
#[derive(Debug, Clone)]
pub struct MahalanobisScorer {
    centers: Array2<f64>,
    cholesky_factor: Array2<f64>,
}

impl MahalanobisScorer {
    pub fn fit(index: &ReferenceIndex) -> Result<Self> {
        let d = index.dim();
        let m = index.len();
        let mut sigma = Array2::<f64>::zeros((d, d));
        for (i, &label) in index.labels.iter().enumerate() {
            let dev = &index.embeddings.row(i) - &index.class_centers.row(label);
            for a in 0..d {
                for b in 0..d {
                    sigma[[a, b]] += dev[a] * dev[b];
                }
            }
        }
        sigma /= m as f64;
        for a in 0..d {
            sigma[[a, a]] += COVARIANCE_RIDGE;
        }
        let cholesky_factor = cholesky(sigma.view()).ok_or_else(|| {
            Error::contract("covariance is singular even after regularization")
        })?;
        Ok(MahalanobisScorer {
            centers: index.class_centers.clone(),
            cholesky_factor,
        })
    }

    /// `min_k (z − c_k)ᵀ Σ⁻¹ (z − c_k)`.
    pub fn score(&self, z: ArrayView1<f64>) -> Result<f64> {
        if z.len() != self.centers.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "query dim {} vs scorer dim {}",
                z.len(),
                self.centers.ncols()
            )));
        }
        let mut best = f64::INFINITY;
        for center in self.centers.rows() {
            let dev: Array1<f64> = &z - &center;
            let solved = cholesky_solve(&self.cholesky_factor, dev.view());
            best = best.min(dev.dot(&solved));
        }
        Ok(best.max(0.0))
    }
}

/// One-shot Mahalanobis score; fit the scorer once for batch use.
pub fn mahalanobis_score(z: ArrayView1<f64>, index: &ReferenceIndex) -> Result<f64> {
    MahalanobisScorer::fit(index)?.score(z)
}

/// Test-time enrollment state: an optional OOD prototype `z_e` plus optional
/// novel-class prototypes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnrollmentSet {
    ood_prototype: Option<Array1<f64>>,
    novel_prototypes: Option<Array2<f64>>,
}

impl EnrollmentSet {
    pub fn empty() -> Self {
        EnrollmentSet::default()
    }

    pub fn is_empty(&self) -> bool {
        self.ood_prototype.is_none() && self.novel_prototypes.is_none()
    }

    pub fn ood_prototype(&self) -> Option<ArrayView1<'_, f64>> {
        self.ood_prototype.as_ref().map(|v| v.view())
    }

    pub fn novel_prototypes(&self) -> Option<ArrayView2<'_, f64>> {
        self.novel_prototypes.as_ref().map(|m| m.view())
    }

    pub fn with_ood_prototype(mut self, z_e: Array1<f64>) -> Result<Self> {
        if z_e.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("enrolled OOD prototype".into()));
        }
        self.ood_prototype = Some(z_e);
        Ok(self)
    }

    pub fn with_novel_prototypes(mut self, protos: Array2<f64>) -> Result<Self> {
        if protos.nrows() == 0 {
            return Err(Error::contract("novel prototype list must be non-empty"));
        }
        if protos.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("novel-class prototypes".into()));
        }
        self.novel_prototypes = Some(protos);
        Ok(self)
    }
}

/// Enrolls OOD samples: `z_e` is the plain arithmetic mean of the sample
/// embeddings (no re-normalization).
pub fn enroll_ood(samples: ArrayView2<f64>) -> Result<EnrollmentSet> {
    if samples.nrows() == 0 {
        return Err(Error::contract("enrollment needs at least one sample"));
    }
    let mut mean = Array1::<f64>::zeros(samples.ncols());
    for row in samples.rows() {
        mean += &row;
    }
    mean /= samples.nrows() as f64;
    EnrollmentSet::empty().with_ood_prototype(mean)
}

/// Per-class mean prototypes for novel-class enrollment.
pub fn novel_class_prototypes(
    samples: ArrayView2<f64>,
    labels: &[usize],
) -> Result<Array2<f64>> {
    if samples.nrows() == 0 || samples.nrows() != labels.len() {
        return Err(Error::contract(
            "novel-class enrollment needs one label per sample",
        ));
    }
    let num_classes = labels.iter().max().map_or(0, |&l| l + 1);
    let mut sums = Array2::<f64>::zeros((num_classes, samples.ncols()));
    let mut counts = vec![0usize; num_classes];
    for (i, &l) in labels.iter().enumerate() {
        let mut row = sums.row_mut(l);
        row += &samples.row(i);
        counts[l] += 1;
    }
    if let Some(gap) = counts.iter().position(|&c| c == 0) {
        return Err(Error::contract(format!(
            "novel-class label gap: class {gap} has no samples"
        )));
    }
    for (k, &count) in counts.iter().enumerate() {
        let mut row = sums.row_mut(k);
        row /= count as f64;
    }
    Ok(sums)
}

fn enrollment_adjustment(z: ArrayView1<f64>, enrollment: &EnrollmentSet) -> Result<f64> {
    let mut delta = 0.0;
    if let Some(z_e) = &enrollment.ood_prototype {
        if z_e.len() != z.len() {
            return Err(Error::DimensionMismatch(format!(
                "enrolled prototype dim {} vs query dim {}",
                z_e.len(),
                z.len()
            )));
        }
        delta -= squared_distance(z, z_e.view());
    }
    if let Some(novel) = &enrollment.novel_prototypes {
        if novel.ncols() != z.len() {
            return Err(Error::DimensionMismatch(format!(
                "novel prototype dim {} vs query dim {}",
                novel.ncols(),
                z.len()
            )));
        }
        let nearest = novel
            .rows()
            .into_iter()
            .map(|row| squared_distance(z, row))
            .fold(f64::INFINITY, f64::min);
        delta += nearest;
    }
    Ok(delta)
}

/// Enrollment-adjusted PKNN score:
/// `S(z) − ‖z − z_e‖² + min_j ‖z − novel_j‖²`, with each term present only
/// when enrolled. An empty enrollment reproduces [`pknn_score`] exactly.
pub fn adjusted_score(
    z: ArrayView1<f64>,
    index: &ReferenceIndex,
    config: &ScoringConfig,
    enrollment: &EnrollmentSet,
) -> Result<f64> {
    let base = pknn_score(z, index, config)?;
    if enrollment.is_empty() {
        return Ok(base);
    }
    Ok(base + enrollment_adjustment(z, enrollment)?)
}

/// Binary detection verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Id,
    Ood,
}

/// Outcome of the thresholded decision rule, retaining its inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OodDecision {
    pub score: f64,
    pub verdict: Verdict,
    pub threshold: f64,
}

/// The decision rule: ID iff `score ≤ λ`.
pub fn detect(score: f64, lambda: f64) -> OodDecision {
    OodDecision {
        score,
        verdict: if score <= lambda {
            Verdict::Id
        } else {
            Verdict::Ood
        },
        threshold: lambda,
    }
}

/// Which base scoring function a batch run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scorer {
    Pknn,
    Knn,
    Mahalanobis,
}

impl Scorer {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "pknn" => Ok(Scorer::Pknn),
            "knn" => Ok(Scorer::Knn),
            "maha" => Ok(Scorer::Mahalanobis),
            other => Err(Error::contract(format!(
                "unknown scorer '{other}' (expected 'pknn', 'knn', or 'maha')"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scorer::Pknn => "pknn",
            Scorer::Knn => "knn",
            Scorer::Mahalanobis => "maha",
        }
    }
}

/// Scores a batch of query rows in parallel with deterministic output order;
/// enrollment adjustments apply on top of any base scorer.
pub fn score_batch(
    queries: ArrayView2<f64>,
    index: &ReferenceIndex,
    config: &ScoringConfig,
    enrollment: &EnrollmentSet,
    scorer: Scorer,
) -> Result<Vec<f64>> {
    config.validate(index)?;
    let maha = match scorer {
        Scorer::Mahalanobis => Some(MahalanobisScorer::fit(index)?),
        _ => None,
    };
    (0..queries.nrows())
        .into_par_iter()
        .map(|i| {
            let z = queries.row(i);
            let base = match scorer {
                Scorer::Pknn => pknn_score(z, index, config)?,
                Scorer::Knn => knn_score(z, index, config.k)?,
                Scorer::Mahalanobis => maha.as_ref().expect("fitted").score(z)?,
            };
            if enrollment.is_empty() {
                Ok(base)
            } else {
                Ok(base + enrollment_adjustment(z, enrollment)?)
            }
        })
        .collect()
}
