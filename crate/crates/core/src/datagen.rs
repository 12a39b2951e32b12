//! Deterministic synthetic ID/OOD dataset generators.
//!
//! Everything is a pure function of a [`SynthesisSpec`]: identical specs
//! yield identical datasets. The sphere mixture places near-orthogonal class
//! directions on the unit sphere; the tree hierarchy grows a balanced binary
//! tree of centroids by random-walk branching so the leaf classes carry a
//! low Gromov delta. OOD sets come in three shift modes, each constructed to
//! be disjoint from the ID class directions.

use crate::error::{Error, Result};
use crate::linalg::l2_norm;
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const DEFAULT_NUM_CLASSES: usize = 4;
pub const DEFAULT_SAMPLES_PER_CLASS: usize = 500;
pub const DEFAULT_INPUT_DIM: usize = 16;
pub const DEFAULT_NOISE: f64 = 0.25;
pub const DEFAULT_OOD_COUNT: usize = 500;
pub const DEFAULT_OOD_NOISE: f64 = 0.5;
pub const DEFAULT_OOD_SCALE: f64 = 2.0;
pub const DEFAULT_OOD_SOURCES: usize = 2;

/// Labeled feature matrix with contiguous class labels `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Per-class empirical means of the raw feature rows.
    pub fn class_centroids(&self) -> Array2<f64> {
        let mut sums = Array2::<f64>::zeros((self.num_classes, self.dim()));
        let counts = self.class_counts();
        for (i, &l) in self.labels.iter().enumerate() {
            let mut row = sums.row_mut(l);
            row += &self.features.row(i);
        }
        for (k, &count) in counts.iter().enumerate() {
            if count > 0 {
                let mut row = sums.row_mut(k);
                row /= count as f64;
            }
        }
        sums
    }

    /// Splits off the last `test_per_class` samples of every class as a
    /// held-out test set (generators emit class blocks in order, so the
    /// split is deterministic and uses disjoint draws).
    pub fn split_train_test(&self, test_per_class: usize) -> Result<(LabeledDataset, LabeledDataset)> {
        let counts = self.class_counts();
        if let Some(class) = counts.iter().position(|&c| c <= test_per_class) {
            return Err(Error::contract(format!(
                "class {class} has {} samples, cannot hold out {test_per_class}",
                counts[class]
            )));
        }
        let mut seen = vec![0usize; self.num_classes];
        let mut train_rows = Vec::new();
        let mut test_rows = Vec::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if seen[l] < counts[l] - test_per_class {
                train_rows.push(i);
            } else {
                test_rows.push(i);
            }
            seen[l] += 1;
        }
        let take = |rows: &[usize]| {
            let mut features = Array2::zeros((rows.len(), self.dim()));
            let mut labels = Vec::with_capacity(rows.len());
            for (out, &i) in rows.iter().enumerate() {
                features.row_mut(out).assign(&self.features.row(i));
                labels.push(self.labels[i]);
            }
            LabeledDataset {
                features,
                labels,
                num_classes: self.num_classes,
            }
        };
        Ok((take(&train_rows), take(&test_rows)))
    }

    /// Keeps only samples whose label passes the filter, relabeling classes
    /// contiguously in ascending original order.
    pub fn filter_classes(&self, keep: impl Fn(usize) -> bool) -> LabeledDataset {
        let kept: Vec<usize> = (0..self.num_classes).filter(|&k| keep(k)).collect();
        let remap: std::collections::HashMap<usize, usize> =
            kept.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let rows: Vec<usize> = (0..self.len())
            .filter(|&i| remap.contains_key(&self.labels[i]))
            .collect();
        let mut features = Array2::zeros((rows.len(), self.dim()));
        let mut labels = Vec::with_capacity(rows.len());
        for (out, &i) in rows.iter().enumerate() {
            features.row_mut(out).assign(&self.features.row(i));
            labels.push(remap[&self.labels[i]]);
        }
        LabeledDataset {
            features,
            labels,
            num_classes: kept.len(),
        }
    }
}

/// Which family of ID data to synthesize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    SphereMixture,
    TreeHierarchy,
}

impl GeneratorKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sphere" => Ok(GeneratorKind::SphereMixture),
            "tree" => Ok(GeneratorKind::TreeHierarchy),
            other => Err(Error::contract(format!(
                "unknown generator '{other}' (expected 'sphere' or 'tree')"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GeneratorKind::SphereMixture => "sphere",
            GeneratorKind::TreeHierarchy => "tree",
        }
    }
}

/// Distribution-shift mode for the OOD set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OodMode {
    /// ID-like samples pushed through a random global rotation.
    RotatedSubspace,
    /// ID-like samples with norms multiplied by a fixed scale.
    ScaledRadius,
    /// Samples around fresh class directions orthogonal to every ID centroid.
    HeldOutClass,
}

impl OodMode {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "rotated" => Ok(OodMode::RotatedSubspace),
            "scaled" => Ok(OodMode::ScaledRadius),
            "heldout" => Ok(OodMode::HeldOutClass),
            other => Err(Error::contract(format!(
                "unknown OOD mode '{other}' (expected 'rotated', 'scaled', or 'heldout')"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OodMode::RotatedSubspace => "rotated",
            OodMode::ScaledRadius => "scaled",
            OodMode::HeldOutClass => "heldout",
        }
    }
}

/// OOD-shift parameters nested inside [`SynthesisSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct OodSpec {
    pub mode: OodMode,
    pub count: usize,
    pub noise: f64,
    /// Norm multiplier for the scaled-radius mode.
    pub scale: f64,
    /// Number of held-out class directions.
    pub num_sources: usize,
}

impl Default for OodSpec {
    fn default() -> Self {
        OodSpec {
            mode: OodMode::HeldOutClass,
            count: DEFAULT_OOD_COUNT,
            noise: DEFAULT_OOD_NOISE,
            scale: DEFAULT_OOD_SCALE,
            num_sources: DEFAULT_OOD_SOURCES,
        }
    }
}

/// Full description of a synthetic dataset; the seed is mandatory.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisSpec {
    pub generator: GeneratorKind,
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub noise: f64,
    pub seed: u64,
    pub ood: OodSpec,
}

impl SynthesisSpec {
    pub fn new(seed: u64) -> Self {
        SynthesisSpec {
            generator: GeneratorKind::SphereMixture,
            num_classes: DEFAULT_NUM_CLASSES,
            samples_per_class: DEFAULT_SAMPLES_PER_CLASS,
            input_dim: DEFAULT_INPUT_DIM,
            noise: DEFAULT_NOISE,
            seed,
            ood: OodSpec::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.samples_per_class == 0 || self.input_dim == 0 {
            return Err(Error::contract(
                "num_classes, samples_per_class, and input_dim must be positive",
            ));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::contract(format!(
                "noise must be non-negative, got {}",
                self.noise
            )));
        }
        Ok(())
    }

    /// Generates the ID dataset for this spec's generator kind.
    pub fn generate(&self) -> Result<LabeledDataset> {
        match self.generator {
            GeneratorKind::SphereMixture => gen_sphere_mixture(self),
            GeneratorKind::TreeHierarchy => gen_tree_hierarchy(self),
        }
    }
}

fn standard_normal_vec(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    Array1::from_iter((0..dim).map(|_| StandardNormal.sample(rng)))
}

/// Gram-Schmidt step: removes the components of `v` along `basis` rows and
/// normalizes; fails when `v` is (numerically) inside their span.
fn orthonormalize_against(v: &mut Array1<f64>, basis: &[Array1<f64>]) -> Result<()> {
    for b in basis {
        let proj = v.dot(b);
        *v -= &(b * proj);
    }
    let n = l2_norm(v.view());
    if n < 1e-9 {
        return Err(Error::contract(
            "orthogonalization degenerated; too many directions for the dimension",
        ));
    }
    *v /= n;
    Ok(())
}

fn orthonormal_directions(
    rng: &mut ChaCha8Rng,
    count: usize,
    dim: usize,
    against: &[Array1<f64>],
) -> Result<Vec<Array1<f64>>> {
    let mut dirs: Vec<Array1<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut v = standard_normal_vec(rng, dim);
        let mut all: Vec<Array1<f64>> = against.to_vec();
        all.extend(dirs.iter().cloned());
        orthonormalize_against(&mut v, &all)?;
        dirs.push(v);
    }
    Ok(dirs)
}

/// Unit-norm sample around a direction: `normalize(dir + noise·g)`.
fn sphere_sample(rng: &mut ChaCha8Rng, dir: &Array1<f64>, noise: f64) -> Array1<f64> {
    let g = standard_normal_vec(rng, dir.len());
    let raw = dir + &(g * noise);
    let n = l2_norm(raw.view());
    if n == 0.0 {
        dir.clone()
    } else {
        raw / n
    }
}

/// Mixture of tight clusters around near-orthogonal unit directions.
/// Requires `num_classes ≤ input_dim` so the directions can be
/// orthogonalized.
pub fn gen_sphere_mixture(spec: &SynthesisSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    if spec.num_classes > spec.input_dim {
        return Err(Error::contract(format!(
            "cannot orthogonalize {} class directions in dimension {}",
            spec.num_classes, spec.input_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dirs = orthonormal_directions(&mut rng, spec.num_classes, spec.input_dim, &[])?;
    let n = spec.num_classes * spec.samples_per_class;
    let mut features = Array2::zeros((n, spec.input_dim));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (class, dir) in dirs.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            features
                .row_mut(row)
                .assign(&sphere_sample(&mut rng, dir, spec.noise));
            labels.push(class);
            row += 1;
        }
    }
    LabeledDataset::new(features, labels, spec.num_classes)
}

/// Class centroids grown as leaves of a balanced binary tree: each child
/// steps away from its parent along a fresh random direction whose length
/// halves with depth, giving hierarchically clustered classes.
pub fn gen_tree_hierarchy(spec: &SynthesisSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let depth = (spec.num_classes.max(2) as f64).log2().ceil() as u32;
    let base_step = 1.0;
    let decay = 0.5f64;

    let mut level: Vec<Array1<f64>> = vec![Array1::zeros(spec.input_dim)];
    for d in 0..depth {
        let step = base_step * decay.powi(d as i32);
        let mut next = Vec::with_capacity(level.len() * 2);
        for parent in &level {
            for _ in 0..2 {
                let g = standard_normal_vec(&mut rng, spec.input_dim);
                let dir = &g / l2_norm(g.view()).max(1e-12);
                next.push(parent + &(dir * step));
            }
        }
        level = next;
    }
    let centroids = &level[..spec.num_classes];

    let n = spec.num_classes * spec.samples_per_class;
    let mut features = Array2::zeros((n, spec.input_dim));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (class, centroid) in centroids.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let g = standard_normal_vec(&mut rng, spec.input_dim);
            features.row_mut(row).assign(&(centroid + &(g * spec.noise)));
            labels.push(class);
            row += 1;
        }
    }
    LabeledDataset::new(features, labels, spec.num_classes)
}

fn mean_row_norm(data: &LabeledDataset) -> f64 {
    data.features
        .rows()
        .into_iter()
        .map(|r| l2_norm(r))
        .sum::<f64>()
        / data.len().max(1) as f64
}

/// Normalized class centroids of the ID set, used as construction anchors.
fn unit_centroids(data: &LabeledDataset) -> Vec<Array1<f64>> {
    data.class_centroids()
        .rows()
        .into_iter()
        .map(|r| {
            let n = l2_norm(r);
            if n == 0.0 {
                r.to_owned()
            } else {
                r.to_owned() / n
            }
        })
        .collect()
}

/// Generates the OOD set described by `spec.ood` against an ID dataset.
/// All modes draw from a seed stream derived from (but distinct from) the ID
/// stream, so the pair is reproducible from the spec alone.
pub fn gen_ood(spec: &SynthesisSpec, id_dataset: &LabeledDataset) -> Result<Array2<f64>> {
    spec.validate()?;
    if id_dataset.is_empty() {
        return Err(Error::contract("OOD generation needs a non-empty ID set"));
    }
    let dim = id_dataset.dim();
    let count = spec.ood.count;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let radius = mean_row_norm(id_dataset);
    let centroids = unit_centroids(id_dataset);
    let mut out = Array2::zeros((count, dim));

    match spec.ood.mode {
        OodMode::HeldOutClass => {
            if centroids.len() + spec.ood.num_sources > dim {
                return Err(Error::contract(format!(
                    "cannot fit {} held-out directions orthogonal to {} centroids in dimension {dim}",
                    spec.ood.num_sources,
                    centroids.len()
                )));
            }
            let dirs =
                orthonormal_directions(&mut rng, spec.ood.num_sources.max(1), dim, &centroids)?;
            for i in 0..count {
                let dir = &dirs[i % dirs.len()];
                let s = sphere_sample(&mut rng, dir, spec.ood.noise) * radius;
                out.row_mut(i).assign(&s);
            }
        }
        OodMode::ScaledRadius => {
            if !(spec.ood.scale.is_finite() && spec.ood.scale > 0.0) {
                return Err(Error::contract(format!(
                    "scaled-radius mode needs a positive scale, got {}",
                    spec.ood.scale
                )));
            }
            for i in 0..count {
                let dir = &centroids[i % centroids.len()];
                let s = sphere_sample(&mut rng, dir, spec.ood.noise) * (radius * spec.ood.scale);
                out.row_mut(i).assign(&s);
            }
        }
        OodMode::RotatedSubspace => {
            // random orthogonal matrix via Gram-Schmidt of a Gaussian basis
            let q = orthonormal_directions(&mut rng, dim, dim, &[])?;
            for i in 0..count {
                let dir = &centroids[i % centroids.len()];
                let s = sphere_sample(&mut rng, dir, spec.ood.noise) * radius;
                let mut rotated = Array1::zeros(dim);
                for (j, basis) in q.iter().enumerate() {
                    rotated[j] = s.dot(basis);
                }
                out.row_mut(i).assign(&rotated);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{euclidean_distance, gromov_delta};
    use crate::linalg::squared_distance;

    #[test]
    fn sphere_mixture_is_deterministic() {
        let spec = SynthesisSpec::new(7);
        let a = gen_sphere_mixture(&spec).unwrap();
        let b = gen_sphere_mixture(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sphere_mixture_zero_noise_collapses_to_directions() {
        let mut spec = SynthesisSpec::new(3);
        spec.noise = 0.0;
        spec.samples_per_class = 5;
        let data = gen_sphere_mixture(&spec).unwrap();
        // every sample of a class equals its first sample
        for class in 0..spec.num_classes {
            let rows: Vec<usize> = (0..data.len())
                .filter(|&i| data.labels[i] == class)
                .collect();
            for &i in &rows[1..] {
                assert_eq!(data.features.row(i), data.features.row(rows[0]));
            }
        }
    }

    #[test]
    fn sphere_mixture_class_means_align_with_directions() {
        let mut spec = SynthesisSpec::new(11);
        spec.noise = 0.1;
        spec.samples_per_class = 1000;
        let data = gen_sphere_mixture(&spec).unwrap();
        // zero-noise run identifies the true directions
        let mut clean = spec.clone();
        clean.noise = 0.0;
        clean.samples_per_class = 1;
        let dirs = gen_sphere_mixture(&clean).unwrap();

        let centroids = data.class_centroids();
        for class in 0..spec.num_classes {
            let mean = centroids.row(class);
            let dir = dirs.features.row(class);
            let cos = mean.dot(&dir) / l2_norm(mean).max(1e-12);
            assert!(
                cos >= 0.9,
                "class {class} mean drifted from its direction: cos = {cos}"
            );
        }
    }

    #[test]
    fn sphere_mixture_rejects_too_many_classes() {
        let mut spec = SynthesisSpec::new(1);
        spec.num_classes = 20;
        spec.input_dim = 8;
        assert!(gen_sphere_mixture(&spec).is_err());
    }

    #[test]
    fn tree_hierarchy_depth_one_gives_two_classes() {
        let mut spec = SynthesisSpec::new(5);
        spec.generator = GeneratorKind::TreeHierarchy;
        spec.num_classes = 2;
        spec.samples_per_class = 3;
        let data = gen_tree_hierarchy(&spec).unwrap();
        assert_eq!(data.num_classes, 2);
        assert_eq!(data.len(), 6);
    }

    #[test]
    fn tree_hierarchy_centroids_are_tree_like() {
        for seed in [3u64, 17, 99] {
            let mut spec = SynthesisSpec::new(seed);
            spec.generator = GeneratorKind::TreeHierarchy;
            spec.num_classes = 8;
            spec.samples_per_class = 1;
            spec.noise = 0.0;
            let centroids = gen_tree_hierarchy(&spec).unwrap().features;
            let delta = gromov_delta(&centroids, euclidean_distance, 10_000, 0).unwrap();
            let mut diameter = 0.0f64;
            for i in 0..centroids.nrows() {
                for j in (i + 1)..centroids.nrows() {
                    diameter =
                        diameter.max(euclidean_distance(centroids.row(i), centroids.row(j)));
                }
            }
            let ratio = delta / diameter;
            assert!(
                ratio < 0.2,
                "tree centroids not hyperbolic enough: δ/diam = {ratio} at seed {seed}"
            );
        }
    }

    #[test]
    fn tree_hierarchy_is_deterministic() {
        let mut spec = SynthesisSpec::new(13);
        spec.generator = GeneratorKind::TreeHierarchy;
        spec.num_classes = 4;
        spec.samples_per_class = 10;
        assert_eq!(
            gen_tree_hierarchy(&spec).unwrap(),
            gen_tree_hierarchy(&spec).unwrap()
        );
    }

    #[test]
    fn ood_heldout_is_disjoint_and_deterministic() {
        let spec = SynthesisSpec::new(21);
        let id = gen_sphere_mixture(&spec).unwrap();
        let a = gen_ood(&spec, &id).unwrap();
        let b = gen_ood(&spec, &id).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.nrows(), spec.ood.count);
        // held-out directions are orthogonal to the ID centroids, so OOD
        // samples should sit far from every centroid on average
        let centroids = unit_centroids(&id);
        let mut mean_abs_cos = 0.0;
        for row in a.rows() {
            let best = centroids
                .iter()
                .map(|c| (row.dot(c) / l2_norm(row).max(1e-12)).abs())
                .fold(0.0f64, f64::max);
            mean_abs_cos += best;
        }
        mean_abs_cos /= a.nrows() as f64;
        assert!(
            mean_abs_cos < 0.6,
            "held-out OOD aligns with ID directions: mean |cos| = {mean_abs_cos}"
        );
    }

    #[test]
    fn ood_scaled_radius_matches_configured_scale() {
        let mut spec = SynthesisSpec::new(23);
        spec.ood.mode = OodMode::ScaledRadius;
        spec.ood.scale = 2.5;
        let id = gen_sphere_mixture(&spec).unwrap();
        let ood = gen_ood(&spec, &id).unwrap();
        let id_mean = mean_row_norm(&id);
        let ood_mean = ood.rows().into_iter().map(|r| l2_norm(r)).sum::<f64>() / ood.nrows() as f64;
        let ratio = ood_mean / id_mean;
        assert!(
            (ratio - 2.5).abs() <= 0.05 * 2.5,
            "mean norm ratio {ratio} deviates from scale 2.5"
        );
    }

    #[test]
    fn ood_rotated_subspace_moves_samples() {
        let mut spec = SynthesisSpec::new(29);
        spec.ood.mode = OodMode::RotatedSubspace;
        let id = gen_sphere_mixture(&spec).unwrap();
        let ood = gen_ood(&spec, &id).unwrap();
        assert_eq!(ood.nrows(), spec.ood.count);
        // a generic rotation should leave OOD samples far from the centroids
        let centroids = unit_centroids(&id);
        let mut near = 0usize;
        for row in ood.rows() {
            let best: f64 = centroids
                .iter()
                .map(|c| squared_distance(row, c.view()))
                .fold(f64::INFINITY, f64::min);
            if best < 0.5 {
                near += 1;
            }
        }
        assert!(
            near < ood.nrows() / 10,
            "{near} rotated OOD samples landed on ID centroids"
        );
    }

    #[test]
    fn nearest_centroid_oracle_separates_id_from_ood() {
        // sanity floor: defaults must give an easily separable pair
        let mut spec = SynthesisSpec::new(31);
        spec.samples_per_class += 100;
        let full = gen_sphere_mixture(&spec).unwrap();
        let (id_train, id_test) = full.split_train_test(100).unwrap();
        let ood = gen_ood(&spec, &id_train).unwrap();

        let centroids = id_train.class_centroids();
        let score = |row: ndarray::ArrayView1<f64>| -> f64 {
            (0..centroids.nrows())
                .map(|k| squared_distance(row, centroids.row(k)))
                .fold(f64::INFINITY, f64::min)
        };
        let id_scores: Vec<f64> = id_test.features.rows().into_iter().map(score).collect();
        let ood_scores: Vec<f64> = ood.rows().into_iter().map(score).collect();
        let auc = crate::metrics::auc(&id_scores, &ood_scores).unwrap();
        assert!(auc > 0.9, "oracle nearest-centroid AUC too low: {auc}");
    }

    #[test]
    fn split_train_test_is_per_class_and_disjoint() {
        let mut spec = SynthesisSpec::new(41);
        spec.num_classes = 3;
        spec.samples_per_class = 10;
        spec.input_dim = 8;
        let full = gen_sphere_mixture(&spec).unwrap();
        let (train, test) = full.split_train_test(4).unwrap();
        assert_eq!(train.class_counts(), vec![6, 6, 6]);
        assert_eq!(test.class_counts(), vec![4, 4, 4]);
        assert_eq!(train.len() + test.len(), full.len());
        // rows must partition the original set
        for i in 0..train.len() {
            let row = train.features.row(i);
            assert!((0..test.len()).all(|j| test.features.row(j) != row));
        }
        // not enough samples to hold out
        assert!(full.split_train_test(10).is_err());
    }

    #[test]
    fn filter_classes_relabels_contiguously() {
        let spec = SynthesisSpec {
            num_classes: 6,
            samples_per_class: 2,
            ..SynthesisSpec::new(37)
        };
        let data = gen_sphere_mixture(&spec).unwrap();
        let first_four = data.filter_classes(|k| k < 4);
        assert_eq!(first_four.num_classes, 4);
        assert_eq!(first_four.len(), 8);
        assert!(first_four.labels.iter().all(|&l| l < 4));
        let last_two = data.filter_classes(|k| k >= 4);
        assert_eq!(last_two.num_classes, 2);
        assert!(last_two.labels.iter().all(|&l| l < 2));
    }
}
