//! Partially labelled feature datasets.
//!
//! A [`GcdDataset`] pairs a feature matrix with a labelled subset drawn from
//! a restricted class set. The labels of unlabelled points are hidden from
//! the training-side API and are only reachable through [`GcdDataset::eval_view`],
//! so model code cannot accidentally peek at ground truth.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GcdError, Result};
use crate::seed::rng_from;

/// Dense matrix of row-major feature vectors, one row per point.
///
/// Every entry is finite and both dimensions are at least one; constructors
/// reject anything else.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(GcdError::InvalidInput(format!(
                "feature matrix must be at least 1x1, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if let Some(((i, j), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(GcdError::InvalidInput(format!(
                "non-finite feature value {v} at point {i}, column {j}"
            )));
        }
        Ok(Self { values })
    }

    /// Builds from a flat row-major buffer.
    pub fn from_rows(n_points: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_points * dim {
            return Err(GcdError::InvalidInput(format!(
                "expected {} values for a {n_points}x{dim} matrix, got {}",
                n_points * dim,
                data.len()
            )));
        }
        let values = Array2::from_shape_vec((n_points, dim), data)
            .map_err(|e| GcdError::InvalidInput(e.to_string()))?;
        Self::new(values)
    }

    pub fn n_points(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    /// Returns a copy with every row scaled to unit L2 norm. Zero rows are
    /// left untouched.
    pub fn l2_normalized(&self) -> Self {
        let mut values = self.values.clone();
        for mut row in values.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
            }
        }
        Self { values }
    }
}

/// How labelled classes are picked when building a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassSelection {
    /// The lowest class indices become the labelled classes.
    FirstIndices,
    /// A seeded random subset of classes becomes labelled.
    Random,
}

/// Parameters for carving a fully labelled dataset into labelled/unlabelled
/// parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Fraction of classes that get labels, in (0, 1].
    pub labelled_class_fraction: f64,
    /// Fraction of each labelled class's points that get labels, in (0, 1].
    pub labelled_image_fraction: f64,
    pub class_selection: ClassSelection,
    pub seed: u64,
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("labelled_class_fraction", self.labelled_class_fraction),
            ("labelled_image_fraction", self.labelled_image_fraction),
        ] {
            if !(f.is_finite() && f > 0.0 && f <= 1.0) {
                return Err(GcdError::InvalidSpec(format!(
                    "{name} must lie in (0, 1], got {f}"
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of [`generate_split`]: the labelled mask plus the labelled class
/// set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub labelled_mask: Vec<bool>,
    pub y_l: BTreeSet<usize>,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Chooses labelled classes and, within each, a labelled subset of points.
///
/// `ceil(labelled_class_fraction * C)` classes are selected (first-by-index
/// or seeded-random). Within each selected class,
/// `round(labelled_image_fraction * class_size)` points are labelled, with
/// the count clamped to at least one and, when the fraction is below one and
/// the class has at least two points, to at most `class_size - 1` so the
/// class also appears among the unlabelled data.
///
/// Labels must be contiguous class ids `0..C-1` and every class must occur.
pub fn generate_split(labels: &[usize], spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if labels.is_empty() {
        return Err(GcdError::InvalidSpec("labels must be non-empty".into()));
    }
    let n_classes = labels.iter().max().unwrap() + 1;
    let mut class_members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        class_members[c].push(i);
    }
    if let Some(missing) = class_members.iter().position(Vec::is_empty) {
        return Err(GcdError::InvalidSpec(format!(
            "class ids must be contiguous 0..{}, class {missing} has no points",
            n_classes - 1
        )));
    }
    if n_classes < 2 {
        return Err(GcdError::InvalidSpec(
            "need at least 2 classes to build a split".into(),
        ));
    }

    let n_labelled_classes = (spec.labelled_class_fraction * n_classes as f64).ceil() as usize;
    let n_labelled_classes = n_labelled_classes.clamp(1, n_classes);

    let mut rng = rng_from(spec.seed);
    let y_l: BTreeSet<usize> = match spec.class_selection {
        ClassSelection::FirstIndices => (0..n_labelled_classes).collect(),
        ClassSelection::Random => {
            let mut ids: Vec<usize> = (0..n_classes).collect();
            ids.shuffle(&mut rng);
            ids.truncate(n_labelled_classes);
            ids.into_iter().collect()
        }
    };

    let mut labelled_mask = vec![false; labels.len()];
    for &class in &y_l {
        let members = &class_members[class];
        let size = members.len();
        let mut count = round_half_up(spec.labelled_image_fraction * size as f64).max(1);
        if spec.labelled_image_fraction < 1.0 && size >= 2 {
            count = count.min(size - 1);
        }
        if count == 0 {
            return Err(GcdError::InvalidSpec(format!(
                "image fraction {} selects zero points in class {class}",
                spec.labelled_image_fraction
            )));
        }
        let mut chosen = members.clone();
        chosen.shuffle(&mut rng);
        for &i in chosen.iter().take(count) {
            labelled_mask[i] = true;
        }
    }

    Ok(Split { labelled_mask, y_l })
}

/// Remaps arbitrary integer labels onto contiguous ids `0..C-1`, remembering
/// the originals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    originals: Vec<i64>,
}

impl LabelMap {
    /// Fits the map on the distinct values (sorted ascending) and encodes.
    pub fn fit(labels: &[i64]) -> (Self, Vec<usize>) {
        let originals: Vec<i64> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let encoded = labels
            .iter()
            .map(|l| originals.binary_search(l).expect("value came from the set"))
            .collect();
        (Self { originals }, encoded)
    }

    pub fn decode(&self, id: usize) -> Option<i64> {
        self.originals.get(id).copied()
    }

    pub fn n_classes(&self) -> usize {
        self.originals.len()
    }
}

/// Feature dataset with a partially labelled class structure.
#[derive(Debug, Clone)]
pub struct GcdDataset {
    features: FeatureMatrix,
    labelled_mask: Vec<bool>,
    train_labels: Vec<Option<usize>>,
    truth: Option<Vec<usize>>,
    y_l: BTreeSet<usize>,
    y_u_true: Option<BTreeSet<usize>>,
}

impl GcdDataset {
    /// Builds a dataset where ground truth is known for every point, keeping
    /// the unlabelled portion hidden behind [`Self::eval_view`].
    pub fn with_ground_truth(
        features: FeatureMatrix,
        truth: Vec<usize>,
        labelled_mask: Vec<bool>,
    ) -> Result<Self> {
        let n = features.n_points();
        if truth.len() != n || labelled_mask.len() != n {
            return Err(GcdError::InvalidInput(format!(
                "labels ({}) and mask ({}) must both cover {n} points",
                truth.len(),
                labelled_mask.len()
            )));
        }
        let n_classes = truth.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; n_classes];
        for &c in &truth {
            seen[c] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(GcdError::InvalidInput(format!(
                "ground-truth class ids must be contiguous, class {missing} has no points"
            )));
        }
        let train_labels: Vec<Option<usize>> = truth
            .iter()
            .zip(&labelled_mask)
            .map(|(&c, &m)| m.then_some(c))
            .collect();
        let y_l: BTreeSet<usize> = train_labels.iter().flatten().copied().collect();
        let y_u_true: BTreeSet<usize> = truth
            .iter()
            .zip(&labelled_mask)
            .filter(|(_, &m)| !m)
            .map(|(&c, _)| c)
            .collect();
        Ok(Self {
            features,
            labelled_mask,
            train_labels,
            truth: Some(truth),
            y_l,
            y_u_true: Some(y_u_true),
        })
    }

    /// Builds a dataset where only the labelled points carry labels; no
    /// evaluation view is available.
    pub fn from_partial_labels(
        features: FeatureMatrix,
        train_labels: Vec<Option<usize>>,
        labelled_mask: Vec<bool>,
    ) -> Result<Self> {
        let n = features.n_points();
        if train_labels.len() != n || labelled_mask.len() != n {
            return Err(GcdError::InvalidInput(format!(
                "labels ({}) and mask ({}) must both cover {n} points",
                train_labels.len(),
                labelled_mask.len()
            )));
        }
        let mut cleaned = vec![None; n];
        for i in 0..n {
            if labelled_mask[i] {
                match train_labels[i] {
                    Some(c) => cleaned[i] = Some(c),
                    None => {
                        return Err(GcdError::InvalidInput(format!(
                            "point {i} is marked labelled but has no label"
                        )))
                    }
                }
            }
        }
        let y_l: BTreeSet<usize> = cleaned.iter().flatten().copied().collect();
        Ok(Self {
            features,
            labelled_mask,
            train_labels: cleaned,
            truth: None,
            y_l,
            y_u_true: None,
        })
    }

    pub fn n_points(&self) -> usize {
        self.features.n_points()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labelled_mask(&self) -> &[bool] {
        &self.labelled_mask
    }

    pub fn is_labelled(&self, i: usize) -> bool {
        self.labelled_mask[i]
    }

    /// Label visible at training time: `Some` only for labelled points.
    pub fn train_label(&self, i: usize) -> Option<usize> {
        self.train_labels[i]
    }

    pub fn y_l(&self) -> &BTreeSet<usize> {
        &self.y_l
    }

    pub fn n_labelled(&self) -> usize {
        self.labelled_mask.iter().filter(|&&m| m).count()
    }

    pub fn labelled_indices(&self) -> Vec<usize> {
        (0..self.n_points()).filter(|&i| self.labelled_mask[i]).collect()
    }

    pub fn unlabelled_indices(&self) -> Vec<usize> {
        (0..self.n_points()).filter(|&i| !self.labelled_mask[i]).collect()
    }

    /// Swaps in a transformed feature matrix (e.g. a projection of the
    /// original features), keeping labels and masks.
    pub fn replace_features(&self, features: FeatureMatrix) -> Result<Self> {
        if features.n_points() != self.n_points() {
            return Err(GcdError::InvalidInput(format!(
                "replacement features have {} points, dataset has {}",
                features.n_points(),
                self.n_points()
            )));
        }
        let mut out = self.clone();
        out.features = features;
        Ok(out)
    }

    /// Evaluation-only access to ground truth.
    pub fn eval_view(&self) -> Result<EvalView<'_>> {
        match &self.truth {
            Some(truth) => Ok(EvalView {
                truth,
                y_u_true: self.y_u_true.as_ref().expect("set with truth"),
                dataset: self,
            }),
            None => Err(GcdError::EvaluationUnavailable(
                "dataset was built without ground-truth labels".into(),
            )),
        }
    }
}

/// Read-only window onto the ground truth of a dataset, for evaluation code.
#[derive(Debug, Clone, Copy)]
pub struct EvalView<'a> {
    truth: &'a [usize],
    y_u_true: &'a BTreeSet<usize>,
    dataset: &'a GcdDataset,
}

impl<'a> EvalView<'a> {
    pub fn truth(&self) -> &'a [usize] {
        self.truth
    }

    /// Ground-truth labels of the unlabelled points, in point-index order.
    pub fn unlabelled_truth(&self) -> Vec<usize> {
        self.truth
            .iter()
            .zip(self.dataset.labelled_mask())
            .filter(|(_, &m)| !m)
            .map(|(&c, _)| c)
            .collect()
    }

    /// Classes present in the unlabelled data.
    pub fn y_u_true(&self) -> &'a BTreeSet<usize> {
        self.y_u_true
    }

    /// Whether a class belongs to the labelled ("Old") class set.
    pub fn is_old_class(&self, class: usize) -> bool {
        self.dataset.y_l().contains(&class)
    }
}

/// Draws `n_classes` isotropic Gaussian blobs with centers on a hypersphere.
///
/// Centers are sampled uniformly on a sphere whose radius starts at the
/// requested separation and grows across retry rounds until all pairwise
/// center distances reach `separation`. Class `c` occupies rows
/// `c * points_per_class .. (c + 1) * points_per_class`.
pub fn make_blobs(
    n_classes: usize,
    points_per_class: usize,
    dim: usize,
    separation: f64,
    spread: f64,
    seed: u64,
) -> Result<(FeatureMatrix, Vec<usize>)> {
    if n_classes == 0 || points_per_class == 0 || dim == 0 {
        return Err(GcdError::InvalidSpec(
            "n_classes, points_per_class and dim must all be at least 1".into(),
        ));
    }
    if !(spread.is_finite() && spread > 0.0) {
        return Err(GcdError::InvalidSpec(format!("spread must be > 0, got {spread}")));
    }
    if !(separation.is_finite() && separation >= 0.0) {
        return Err(GcdError::InvalidSpec(format!(
            "separation must be >= 0, got {separation}"
        )));
    }

    let mut rng = rng_from(seed);
    let centers = place_centers(n_classes, dim, separation, &mut rng)?;

    let n = n_classes * points_per_class;
    let mut values = Array2::<f64>::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for p in 0..points_per_class {
            let i = c * points_per_class + p;
            for j in 0..dim {
                let noise: f64 = rng.sample(StandardNormal);
                values[(i, j)] = center[j] + spread * noise;
            }
            labels.push(c);
        }
    }
    Ok((FeatureMatrix::new(values)?, labels))
}

const CENTER_ROUNDS: usize = 32;
const CENTER_ATTEMPTS: usize = 256;

fn place_centers(
    n_classes: usize,
    dim: usize,
    separation: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Array1<f64>>> {
    let base_radius = if separation > 0.0 { separation } else { 1.0 };
    let mut radius = base_radius;
    for _ in 0..CENTER_ROUNDS {
        if let Some(centers) = try_place(n_classes, dim, separation, radius, rng) {
            return Ok(centers);
        }
        radius *= 1.5;
    }
    Err(GcdError::Generation(format!(
        "could not place {n_classes} centers at separation {separation} in {dim} dimensions"
    )))
}

fn try_place(
    n_classes: usize,
    dim: usize,
    separation: f64,
    radius: f64,
    rng: &mut impl Rng,
) -> Option<Vec<Array1<f64>>> {
    let mut centers: Vec<Array1<f64>> = Vec::with_capacity(n_classes);
    while centers.len() < n_classes {
        let mut placed = false;
        for _ in 0..CENTER_ATTEMPTS {
            let candidate = sphere_point(dim, radius, rng);
            let ok = separation == 0.0
                || centers.iter().all(|c| {
                    let d2: f64 = (&candidate - c).mapv(|v| v * v).sum();
                    d2.sqrt() >= separation
                });
            if ok {
                centers.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(centers)
}

fn sphere_point(dim: usize, radius: f64, rng: &mut impl Rng) -> Array1<f64> {
    loop {
        let v = Array1::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal));
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            return v * (radius / norm);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_labels(n_classes: usize, per_class: usize) -> Vec<usize> {
        (0..n_classes * per_class).map(|i| i / per_class).collect()
    }

    #[test]
    fn feature_matrix_rejects_non_finite_and_empty() {
        assert!(FeatureMatrix::from_rows(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(FeatureMatrix::from_rows(1, 2, vec![0.0, f64::INFINITY]).is_err());
        assert!(FeatureMatrix::new(Array2::zeros((0, 3))).is_err());
        assert!(FeatureMatrix::from_rows(2, 2, vec![1.0; 4]).is_ok());
    }

    #[test]
    fn split_matches_cifar10_shaped_counts() {
        // 10 classes x 5000 points, half the classes, half the images.
        let labels = block_labels(10, 5000);
        let spec = SplitSpec {
            labelled_class_fraction: 0.5,
            labelled_image_fraction: 0.5,
            class_selection: ClassSelection::FirstIndices,
            seed: 0,
        };
        let split = generate_split(&labels, &spec).unwrap();
        assert_eq!(split.y_l, (0..5).collect());
        let n_labelled = split.labelled_mask.iter().filter(|&&m| m).count();
        assert_eq!(n_labelled, 12_500);
        assert_eq!(split.labelled_mask.len() - n_labelled, 37_500);
    }

    #[test]
    fn split_full_fractions_label_everything() {
        let labels = block_labels(2, 4);
        let spec = SplitSpec {
            labelled_class_fraction: 1.0,
            labelled_image_fraction: 1.0,
            class_selection: ClassSelection::FirstIndices,
            seed: 3,
        };
        let split = generate_split(&labels, &spec).unwrap();
        assert!(split.labelled_mask.iter().all(|&m| m));
        assert_eq!(split.y_l.len(), 2);
    }

    #[test]
    fn random_split_is_seed_deterministic_and_seed_sensitive() {
        let labels = block_labels(100, 10);
        let spec = |seed| SplitSpec {
            labelled_class_fraction: 0.5,
            labelled_image_fraction: 0.5,
            class_selection: ClassSelection::Random,
            seed,
        };
        let a = generate_split(&labels, &spec(1)).unwrap();
        let b = generate_split(&labels, &spec(1)).unwrap();
        assert_eq!(a, b);
        // Different seeds should generally pick different class sets.
        let distinct = (2..12)
            .map(|s| generate_split(&labels, &spec(s)).unwrap().y_l)
            .any(|y_l| y_l != a.y_l);
        assert!(distinct);
    }

    #[test]
    fn split_classes_keep_labelled_and_unlabelled_points() {
        let labels = block_labels(6, 9);
        let spec = SplitSpec {
            labelled_class_fraction: 0.5,
            labelled_image_fraction: 0.5,
            class_selection: ClassSelection::Random,
            seed: 11,
        };
        let split = generate_split(&labels, &spec).unwrap();
        for &class in &split.y_l {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
            let labelled = members.iter().filter(|&&i| split.labelled_mask[i]).count();
            assert!(labelled >= 1);
            assert!(labelled < members.len(), "class {class} needs unlabelled points too");
        }
        for &class in (0..6).collect::<BTreeSet<_>>().difference(&split.y_l) {
            let any_labelled = (0..labels.len())
                .any(|i| labels[i] == class && split.labelled_mask[i]);
            assert!(!any_labelled);
        }
    }

    #[test]
    fn split_rejects_degenerate_specs() {
        let labels = block_labels(3, 4);
        let bad = SplitSpec {
            labelled_class_fraction: 0.0,
            labelled_image_fraction: 0.5,
            class_selection: ClassSelection::FirstIndices,
            seed: 0,
        };
        assert!(matches!(generate_split(&labels, &bad), Err(GcdError::InvalidSpec(_))));
        let single = vec![0usize; 5];
        let spec = SplitSpec {
            labelled_class_fraction: 1.0,
            labelled_image_fraction: 1.0,
            class_selection: ClassSelection::FirstIndices,
            seed: 0,
        };
        assert!(matches!(generate_split(&single, &spec), Err(GcdError::InvalidSpec(_))));
    }

    #[test]
    fn blobs_are_seed_deterministic() {
        let (a, la) = make_blobs(4, 10, 3, 5.0, 1.0, 42).unwrap();
        let (b, lb) = make_blobs(4, 10, 3, 5.0, 1.0, 42).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(la, lb);
        let (c, _) = make_blobs(4, 10, 3, 5.0, 1.0, 43).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn single_blob_with_tiny_spread_collapses_to_center() {
        let (m, labels) = make_blobs(1, 8, 4, 0.0, 1e-12, 7).unwrap();
        assert_eq!(labels, vec![0; 8]);
        let first = m.row(0).to_owned();
        for i in 1..8 {
            let diff = (&m.row(i) - &first).mapv(f64::abs).sum();
            assert!(diff < 1e-9, "row {i} strays from the center by {diff}");
        }
    }

    #[test]
    fn blob_centers_respect_separation() {
        let sep = 3.0;
        let (m, labels) = make_blobs(6, 20, 2, sep, 1e-9, 5).unwrap();
        let mut means = vec![Array1::<f64>::zeros(2); 6];
        let mut counts = vec![0usize; 6];
        for (i, &c) in labels.iter().enumerate() {
            means[c] = &means[c] + &m.row(i);
            counts[c] += 1;
        }
        for (mean, count) in means.iter_mut().zip(counts) {
            *mean /= count as f64;
        }
        for a in 0..6 {
            for b in a + 1..6 {
                let d = (&means[a] - &means[b]).mapv(|v| v * v).sum().sqrt();
                assert!(d >= sep - 1e-6, "centers {a},{b} only {d} apart");
            }
        }
    }

    #[test]
    fn impossible_center_placement_errors() {
        // A 1-D sphere holds two points; three classes cannot be separated.
        let err = make_blobs(3, 2, 1, 4.0, 1.0, 0);
        assert!(matches!(err, Err(GcdError::Generation(_))));
    }

    #[test]
    fn dataset_hides_unlabelled_truth() {
        let (m, labels) = make_blobs(3, 4, 2, 4.0, 0.1, 9).unwrap();
        let mask: Vec<bool> = labels.iter().map(|&c| c == 0).collect();
        let ds = GcdDataset::with_ground_truth(m, labels.clone(), mask).unwrap();
        for i in 0..ds.n_points() {
            if ds.is_labelled(i) {
                assert_eq!(ds.train_label(i), Some(labels[i]));
            } else {
                assert_eq!(ds.train_label(i), None);
            }
        }
        assert_eq!(ds.y_l().iter().copied().collect::<Vec<_>>(), vec![0]);
        let view = ds.eval_view().unwrap();
        assert_eq!(view.unlabelled_truth().len(), 8);
        assert!(view.y_u_true().contains(&1) && view.y_u_true().contains(&2));
    }

    #[test]
    fn partial_dataset_has_no_eval_view() {
        let m = FeatureMatrix::from_rows(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let ds = GcdDataset::from_partial_labels(
            m,
            vec![Some(0), None, None],
            vec![true, false, false],
        )
        .unwrap();
        assert!(matches!(
            ds.eval_view(),
            Err(GcdError::EvaluationUnavailable(_))
        ));
    }

    #[test]
    fn masked_point_without_label_is_rejected() {
        let m = FeatureMatrix::from_rows(2, 1, vec![0.0, 1.0]).unwrap();
        let err = GcdDataset::from_partial_labels(m, vec![None, None], vec![true, false]);
        assert!(matches!(err, Err(GcdError::InvalidInput(_))));
    }

    #[test]
    fn label_map_round_trips_sparse_ids() {
        let raw = vec![30i64, -5, 30, 100, -5];
        let (map, encoded) = LabelMap::fit(&raw);
        assert_eq!(encoded, vec![1, 0, 1, 2, 0]);
        assert_eq!(map.n_classes(), 3);
        let decoded: Vec<i64> = encoded.iter().map(|&e| map.decode(e).unwrap()).collect();
        assert_eq!(decoded, raw);
    }

    #[test]
    fn l2_normalization_produces_unit_rows() {
        let m = FeatureMatrix::from_rows(2, 2, vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        let n = m.l2_normalized();
        let norm0 = n.row(0).dot(&n.row(0)).sqrt();
        assert!((norm0 - 1.0).abs() < 1e-12);
        assert_eq!(n.row(1).sum(), 0.0);
    }
}
