//! Plain and semi-supervised k-means over feature vectors.
//!
//! The semi-supervised variant pins every labelled point to its class's
//! cluster on each assignment pass and seeds the first `|Y_L|` centroids at
//! the labelled class means; the remaining centroids are drawn from the
//! unlabelled points with k-means++. Centroid updates always average all
//! points in a cluster, labelled and unlabelled alike. With no labelled
//! points at all the variant degenerates to plain k-means, bit for bit.
//!
//! Distances are squared Euclidean throughout; callers working with
//! embeddings that live on the unit sphere should L2-normalize first (see
//! [`crate::dataset::FeatureMatrix::l2_normalized`]), which makes squared
//! Euclidean distance a monotone image of cosine similarity.

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureMatrix, GcdDataset};
use crate::error::{GcdError, Result};
use crate::seed::{derive_seed, rng_from};

/// Below this many points the assignment pass stays single-threaded; the
/// restart loop above it is already parallel.
const PAR_ASSIGN_MIN: usize = 4096;

/// Settings shared by plain and semi-supervised fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Convergence threshold on the largest centroid displacement, in
    /// feature-space units.
    pub tol: f64,
    pub n_restarts: usize,
    pub seed: u64,
}

impl KMeansConfig {
    /// Defaults: 300 iterations, tol 1e-6, 10 restarts. Semi-supervised fits
    /// usually run with one restart since the labelled anchors already pin
    /// the seeding.
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_iters: 300,
            tol: 1e-6,
            n_restarts: 10,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_restarts(mut self, n_restarts: usize) -> Self {
        self.n_restarts = n_restarts;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    fn validate(&self, n_points: usize) -> Result<()> {
        if self.k == 0 {
            return Err(GcdError::InvalidConfig("k must be at least 1".into()));
        }
        if self.k > n_points {
            return Err(GcdError::InvalidConfig(format!(
                "k = {} exceeds the {} available points",
                self.k, n_points
            )));
        }
        if self.max_iters == 0 || self.n_restarts == 0 {
            return Err(GcdError::InvalidConfig(
                "max_iters and n_restarts must be at least 1".into(),
            ));
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(GcdError::InvalidConfig(format!(
                "tol must be finite and non-negative, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// A fitted clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    /// k x D centroid matrix.
    pub centroids: Array2<f64>,
    /// Per-point cluster id in `[0, k)`.
    pub assignments: Vec<usize>,
    /// Sum of squared distances from each point to its assigned centroid.
    pub inertia: f64,
    pub n_iters: usize,
    pub converged: bool,
    /// Inertia recorded after each assignment pass, one entry per iteration;
    /// non-increasing by Lloyd's argument.
    pub inertia_history: Vec<f64>,
    /// How many empty clusters were re-seeded from a farthest point.
    pub reseeded_clusters: usize,
    /// Set when k-means++ had to fall back to uniform sampling because every
    /// candidate coincided with an existing centroid.
    pub uniform_seed_fallback: bool,
}

/// Pinning rules for the semi-supervised fit.
///
/// Class clusters occupy the low cluster indices `0..|Y_L|-1` in ascending
/// class-id order; `forced[i]` holds the cluster a labelled point must join.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraints {
    pub forced: Vec<Option<usize>>,
    /// Cluster index -> class id for the pinned class clusters.
    pub class_of_cluster: Vec<usize>,
}

impl Constraints {
    pub fn n_class_clusters(&self) -> usize {
        self.class_of_cluster.len()
    }

    pub fn cluster_of_class(&self, class: usize) -> Option<usize> {
        self.class_of_cluster.binary_search(&class).ok()
    }

    fn validate(&self, k: usize, n_points: usize) -> Result<()> {
        if self.forced.len() != n_points {
            return Err(GcdError::InvalidConfig(format!(
                "constraints cover {} points, dataset has {n_points}",
                self.forced.len()
            )));
        }
        if self.class_of_cluster.len() > k {
            return Err(GcdError::InvalidConfig(format!(
                "{} pinned class clusters do not fit into k = {k}",
                self.class_of_cluster.len()
            )));
        }
        if let Some(bad) = self.forced.iter().flatten().find(|&&c| c >= k) {
            return Err(GcdError::InvalidConfig(format!(
                "forced cluster id {bad} is out of range for k = {k}"
            )));
        }
        Ok(())
    }
}

/// Result of a k-means++ seeding round.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSelection {
    /// `n_new` x D matrix of chosen centroids.
    pub centroids: Array2<f64>,
    /// Candidate row index of each chosen centroid, in selection order.
    pub chosen: Vec<usize>,
    /// True when every candidate sat at distance zero from the existing
    /// centroids and selection fell back to uniform sampling.
    pub uniform_fallback: bool,
}

fn squared_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Draws `n_new` centroids from the rows of `features` with k-means++ D²
/// weighting against `existing` plus the already-chosen centroids.
///
/// With no existing centroids the first draw is uniform. When every
/// candidate has zero distance to the current centroid set, selection falls
/// back to uniform sampling and the result is flagged.
pub fn kmeans_pp_seed(
    features: &FeatureMatrix,
    n_new: usize,
    existing: &[Array1<f64>],
    seed: u64,
) -> Result<SeedSelection> {
    if n_new == 0 {
        return Err(GcdError::InvalidConfig(
            "kmeans++ asked for zero new centroids".into(),
        ));
    }
    let dim = features.dim();
    if let Some(bad) = existing.iter().find(|c| c.len() != dim) {
        return Err(GcdError::InvalidConfig(format!(
            "existing centroid has dimension {}, features have {dim}",
            bad.len()
        )));
    }
    let n = features.n_points();
    let mut rng = rng_from(seed);
    // Squared distance of every candidate to its nearest centroid so far;
    // infinity encodes "no centroids yet", which makes the first draw
    // uniform.
    let mut d2: Vec<f64> = if existing.is_empty() {
        vec![f64::INFINITY; n]
    } else {
        (0..n)
            .map(|i| {
                existing
                    .iter()
                    .map(|c| squared_dist(features.row(i), c.view()))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };

    let mut centroids = Array2::<f64>::zeros((n_new, dim));
    let mut chosen = Vec::with_capacity(n_new);
    let mut uniform_fallback = false;
    for slot in 0..n_new {
        let pick = if d2.iter().all(|&d| d == f64::INFINITY) {
            rng.random_range(0..n)
        } else {
            let total: f64 = d2.iter().sum();
            if total <= 0.0 {
                uniform_fallback = true;
                rng.random_range(0..n)
            } else {
                weighted_pick(&d2, total, &mut rng)
            }
        };
        centroids.row_mut(slot).assign(&features.row(pick));
        chosen.push(pick);
        for (i, d) in d2.iter_mut().enumerate() {
            let cand = squared_dist(features.row(i), features.row(pick));
            if cand < *d {
                *d = cand;
            }
        }
    }
    Ok(SeedSelection {
        centroids,
        chosen,
        uniform_fallback,
    })
}

/// Samples an index with probability proportional to its weight. Zero-weight
/// entries are never chosen: the strict comparison means the running sum
/// only overtakes `r` on a positive-weight entry.
fn weighted_pick(weights: &[f64], total: f64, rng: &mut impl Rng) -> usize {
    let r: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut fallback = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            fallback = i;
            acc += w;
            if r < acc {
                return i;
            }
        }
    }
    // Rounding can leave r marginally above the final accumulator; the last
    // positive-weight entry is the correct owner of that sliver.
    fallback
}

/// Plain Lloyd k-means with k-means++ seeding, best of `n_restarts` by
/// inertia. Deterministic for a fixed config, independent of thread count.
pub fn kmeans_fit(features: &FeatureMatrix, config: &KMeansConfig) -> Result<ClusterModel> {
    config.validate(features.n_points())?;
    let models: Vec<Result<ClusterModel>> = (0..config.n_restarts)
        .into_par_iter()
        .map(|r| {
            let restart_seed = derive_seed(config.seed, "kmeans-restart", &[r as u64]);
            let seeding = kmeans_pp_seed(features, config.k, &[], restart_seed)?;
            Ok(lloyd_run(
                features,
                seeding.centroids,
                None,
                config,
                seeding.uniform_fallback,
            ))
        })
        .collect();
    pick_best(models)
}

/// Builds the semi-supervised starting point: labelled class means first (in
/// ascending class-id order), then `k - |Y_L|` k-means++ draws from the
/// unlabelled points with the class means as existing centroids.
pub fn ss_kmeans_init(
    dataset: &GcdDataset,
    k: usize,
    seed: u64,
) -> Result<(Array2<f64>, Constraints, bool)> {
    let classes: Vec<usize> = dataset.y_l().iter().copied().collect();
    if k < classes.len() {
        return Err(GcdError::InvalidConfig(format!(
            "k = {k} is below the {} labelled classes",
            classes.len()
        )));
    }
    let dim = dataset.dim();
    let mut centroids = Array2::<f64>::zeros((k, dim));
    for (slot, &class) in classes.iter().enumerate() {
        let mut sum = Array1::<f64>::zeros(dim);
        let mut count = 0usize;
        for i in 0..dataset.n_points() {
            if dataset.train_label(i) == Some(class) {
                sum += &dataset.features().row(i);
                count += 1;
            }
        }
        // y_l only contains observed labels, so count >= 1.
        centroids.row_mut(slot).assign(&(sum / count as f64));
    }

    let n_new = k - classes.len();
    let mut uniform_fallback = false;
    if n_new > 0 {
        let pool_indices = dataset.unlabelled_indices();
        if pool_indices.is_empty() {
            return Err(GcdError::InvalidConfig(format!(
                "k = {k} needs {n_new} unlabelled seed points but none exist"
            )));
        }
        let mut pool = Array2::<f64>::zeros((pool_indices.len(), dim));
        for (r, &i) in pool_indices.iter().enumerate() {
            pool.row_mut(r).assign(&dataset.features().row(i));
        }
        let existing: Vec<Array1<f64>> = (0..classes.len())
            .map(|s| centroids.row(s).to_owned())
            .collect();
        let seeding = kmeans_pp_seed(&FeatureMatrix::new(pool)?, n_new, &existing, seed)?;
        uniform_fallback = seeding.uniform_fallback;
        for slot in 0..n_new {
            centroids
                .row_mut(classes.len() + slot)
                .assign(&seeding.centroids.row(slot));
        }
    }

    let forced: Vec<Option<usize>> = (0..dataset.n_points())
        .map(|i| {
            dataset
                .train_label(i)
                .map(|c| classes.binary_search(&c).expect("label observed in y_l"))
        })
        .collect();
    let constraints = Constraints {
        forced,
        class_of_cluster: classes,
    };
    constraints.validate(k, dataset.n_points())?;
    Ok((centroids, constraints, uniform_fallback))
}

/// Constrained k-means: labelled points are assigned to their class cluster
/// on every pass regardless of distance, and centroid updates average all
/// member points. With zero labelled points this equals [`kmeans_fit`] on
/// the same config, bit for bit (the per-restart seed derivation and the
/// seeding pool coincide).
pub fn ss_kmeans_fit(dataset: &GcdDataset, config: &KMeansConfig) -> Result<ClusterModel> {
    config.validate(dataset.n_points())?;
    let models: Vec<Result<ClusterModel>> = (0..config.n_restarts)
        .into_par_iter()
        .map(|r| {
            let restart_seed = derive_seed(config.seed, "kmeans-restart", &[r as u64]);
            let (centroids, constraints, fallback) =
                ss_kmeans_init(dataset, config.k, restart_seed)?;
            Ok(lloyd_run(
                dataset.features(),
                centroids,
                Some(&constraints),
                config,
                fallback,
            ))
        })
        .collect();
    pick_best(models)
}

fn pick_best(models: Vec<Result<ClusterModel>>) -> Result<ClusterModel> {
    let mut best: Option<ClusterModel> = None;
    for model in models {
        let model = model?;
        let better = best
            .as_ref()
            .is_none_or(|b| model.inertia < b.inertia);
        if better {
            best = Some(model);
        }
    }
    Ok(best.expect("n_restarts >= 1 was validated"))
}

/// One Lloyd run from a fixed starting point.
///
/// Each iteration assigns (pinned points to their forced cluster, the rest
/// to the nearest centroid, ties to the lowest index), records the inertia
/// of that assignment, then moves centroids to their cluster means. Empty
/// clusters are re-seeded from the farthest unpinned point, which leaves the
/// current assignment's inertia untouched and so preserves monotonicity.
fn lloyd_run(
    features: &FeatureMatrix,
    mut centroids: Array2<f64>,
    constraints: Option<&Constraints>,
    config: &KMeansConfig,
    uniform_seed_fallback: bool,
) -> ClusterModel {
    let n = features.n_points();
    let k = config.k;
    let mut assignments = vec![0usize; n];
    let mut inertia_history = Vec::new();
    let mut reseeded_clusters = 0usize;
    let mut converged = false;
    let mut n_iters = 0usize;

    for _ in 0..config.max_iters {
        n_iters += 1;
        let (assign, d2, inertia) = assign_step(features, &centroids, constraints);
        assignments = assign;
        inertia_history.push(inertia);

        let new_centroids = mean_update(
            features,
            &assignments,
            k,
            &centroids,
            constraints,
            &d2,
            &mut reseeded_clusters,
        );
        let mut shift: f64 = 0.0;
        for c in 0..k {
            shift = shift.max(squared_dist(new_centroids.row(c), centroids.row(c)).sqrt());
        }
        centroids = new_centroids;
        if shift <= config.tol {
            converged = true;
            break;
        }
    }

    // The stored centroids are the means of the stored assignments; the
    // inertia is recomputed against them so the triple is self-consistent.
    let mut inertia = 0.0;
    for i in 0..n {
        inertia += squared_dist(features.row(i), centroids.row(assignments[i]));
    }
    ClusterModel {
        centroids,
        assignments,
        inertia,
        n_iters,
        converged,
        inertia_history,
        reseeded_clusters,
        uniform_seed_fallback,
    }
}

fn assign_step(
    features: &FeatureMatrix,
    centroids: &Array2<f64>,
    constraints: Option<&Constraints>,
) -> (Vec<usize>, Vec<f64>, f64) {
    let n = features.n_points();
    let k = centroids.nrows();
    let one = |i: usize| -> (usize, f64) {
        if let Some(cons) = constraints {
            if let Some(c) = cons.forced[i] {
                return (c, squared_dist(features.row(i), centroids.row(c)));
            }
        }
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for c in 0..k {
            let d = squared_dist(features.row(i), centroids.row(c));
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        (best, best_d)
    };
    let pairs: Vec<(usize, f64)> = if n >= PAR_ASSIGN_MIN {
        (0..n).into_par_iter().map(one).collect()
    } else {
        (0..n).map(one).collect()
    };
    let assignments: Vec<usize> = pairs.iter().map(|&(c, _)| c).collect();
    let d2: Vec<f64> = pairs.iter().map(|&(_, d)| d).collect();
    let inertia = d2.iter().sum();
    (assignments, d2, inertia)
}

fn mean_update(
    features: &FeatureMatrix,
    assignments: &[usize],
    k: usize,
    old_centroids: &Array2<f64>,
    constraints: Option<&Constraints>,
    d2: &[f64],
    reseeded_clusters: &mut usize,
) -> Array2<f64> {
    let n = features.n_points();
    let dim = features.dim();
    let mut sums = Array2::<f64>::zeros((k, dim));
    let mut counts = vec![0usize; k];
    for i in 0..n {
        let c = assignments[i];
        counts[c] += 1;
        let mut row = sums.row_mut(c);
        row += &features.row(i);
    }
    let mut centroids = Array2::<f64>::zeros((k, dim));
    let mut taken = vec![false; n];
    for c in 0..k {
        if counts[c] > 0 {
            centroids
                .row_mut(c)
                .assign(&(&sums.row(c) / counts[c] as f64));
            continue;
        }
        // Empty cluster: re-seed from the farthest unpinned point not yet
        // spent on another re-seed this round. Pinned clusters can never be
        // empty, so this only touches k-means++-seeded clusters.
        let candidate = (0..n)
            .filter(|&i| {
                !taken[i] && constraints.is_none_or(|cons| cons.forced[i].is_none())
            })
            .max_by(|&a, &b| d2[a].total_cmp(&d2[b]).then(b.cmp(&a)));
        match candidate {
            Some(i) => {
                taken[i] = true;
                centroids.row_mut(c).assign(&features.row(i));
                *reseeded_clusters += 1;
            }
            // No unpinned points exist; keep the old centroid.
            None => centroids.row_mut(c).assign(&old_centroids.row(c)),
        }
    }
    centroids
}
