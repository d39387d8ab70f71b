//! The eight subcommands. Each one resolves its flags against the config
//! file, runs the underlying module, writes its artifacts plus a run
//! manifest into `--out`, and prints a one-line summary.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use serde_json::Value;

use gcd_core::assignment::{acc_report, AccReport};
use gcd_core::class_count::KSearchConfig;
use gcd_core::clustering::{kmeans_fit, ss_kmeans_fit, ClusterModel, KMeansConfig};
use gcd_core::contrastive::{
    grad_total_loss, total_loss, train_toy, ContrastiveConfig, ProjectionHead, TrainConfig,
    ViewBatch,
};
use gcd_core::dataset::{generate_split, make_blobs, ClassSelection, FeatureMatrix, GcdDataset, LabelMap, SplitSpec};
use gcd_core::io::{
    load_assignments, load_features, load_head, load_label_sidecar, save_assignments,
    save_features, save_features_binary, save_head, save_k_scores, save_loss_curve,
    save_label_sidecar, LabelSidecar,
};
use gcd_core::{derive_seed, rng_from, GcdError};

use crate::config::{ConfigFile, Resolver, ToParam};
use crate::errors::{usage, CliResult};
use crate::manifest::{ensure_out_dir, write_json, ManifestBuilder, RunManifest};

/// Which k-means variant `cluster` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClusterMode {
    /// Ignore labels entirely.
    Plain,
    /// Pin labelled points to their class clusters.
    SemiSup,
}

impl fmt::Display for ClusterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterMode::Plain => "plain",
            ClusterMode::SemiSup => "semi-sup",
        })
    }
}

impl FromStr for ClusterMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

impl ToParam for ClusterMode {
    fn to_param(&self) -> Value {
        Value::String(self.to_string())
    }
}

/// How `split` picks the labelled classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectionMode {
    /// The lowest class ids become the labelled classes.
    FirstIndices,
    /// A seeded random subset becomes the labelled classes.
    Random,
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMode::FirstIndices => "first-indices",
            SelectionMode::Random => "random",
        })
    }
}

impl FromStr for SelectionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

impl ToParam for SelectionMode {
    fn to_param(&self) -> Value {
        Value::String(self.to_string())
    }
}

/// Generate a synthetic Gaussian-blob benchmark with ground-truth labels.
#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Number of classes.
    #[arg(long)]
    classes: Option<usize>,
    /// Points per class.
    #[arg(long)]
    per_class: Option<usize>,
    /// Feature dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Minimum pairwise distance between class centers.
    #[arg(long)]
    sep: Option<f64>,
    /// Standard deviation of each class around its center.
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl GenDataArgs {
    pub fn run(self, file: ConfigFile) -> CliResult<()> {
        let mut r = Resolver::new(file);
        let classes = r.required(self.classes, "classes")?;
        let per_class = r.required(self.per_class, "per-class")?;
        let dim = r.required(self.dim, "dim")?;
        let sep = r.required(self.sep, "sep")?;
        let spread = r.or_default(self.spread, "spread", 1.0)?;
        let seed = r.or_default(self.seed, "seed", 0)?;
        let out = ensure_out_dir(&r.required(self.out, "out")?)?;
        let manifest = ManifestBuilder::new("gen-data", seed, r.finish()?);

        let (features, labels) =
            make_blobs(classes, per_class, dim, sep, spread, derive_seed(seed, "gen-data", &[]))?;
        let labels_i64: Vec<i64> = labels.iter().map(|&c| c as i64).collect();
        let path = out.join("features.gcdf");
        save_features(&path, &features, Some(&labels_i64))?;
        manifest.write(&out)?;
        println!(
            "gen-data: {} points, {classes} classes, dim {dim} -> {}",
            features.n_points(),
            path.display()
        );
        Ok(())
    }
}

/// Split a labelled dataset into labelled and unlabelled portions.
#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Feature file carrying a ground-truth label for every point.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Fraction of classes that become labelled classes.
    #[arg(long)]
    class_fraction: Option<f64>,
    /// Fraction of each labelled class's images that keep their labels.
    #[arg(long)]
    image_fraction: Option<f64>,
    /// first-indices or random.
    #[arg(long)]
    selection: Option<SelectionMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl SplitArgs {
    pub fn run(self, file: ConfigFile) -> CliResult<()> {
        let mut r = Resolver::new(file);
        let features_path = r.required(self.features, "features")?;
        let class_fraction = r.or_default(self.class_fraction, "class-fraction", 0.5)?;
        let image_fraction = r.or_default(self.image_fraction, "image-fraction", 0.5)?;
        let selection = r.or_default(self.selection, "selection", SelectionMode::FirstIndices)?;
        let seed = r.or_default(self.seed, "seed", 0)?;
        let out = ensure_out_dir(&r.required(self.out, "out")?)?;
        let mut manifest = ManifestBuilder::new("split", seed, r.finish()?);
        manifest.input("features", &features_path)?;

        let (_, labels) = load_features(&features_path)?;
        let labels = labels.ok_or_else(|| {
            GcdError::InvalidInput(format!(
                "{} carries no labels; splitting needs ground truth",
                features_path.display()
            ))
        })?;
        if labels.contains(&-1) {
            return Err(GcdError::InvalidInput(
                "some points are already unlabelled; splitting needs full ground truth".into(),
            )
            .into());
        }
        let (_, contiguous) = LabelMap::fit(&labels);
        let spec = SplitSpec {
            labelled_class_fraction: class_fraction,
            labelled_image_fraction: image_fraction,
            class_selection: match selection {
                SelectionMode::FirstIndices => ClassSelection::FirstIndices,
                SelectionMode::Random => ClassSelection::Random,
            },
            seed: derive_seed(seed, "split", &[]),
        };
        let split = generate_split(&contiguous, &spec)?;
        let sidecar = LabelSidecar::new(
            labels.iter().map(|&l| Some(l)).collect(),
            split.labelled_mask.clone(),
        )?;
        let path = out.join("labels.csv");
        save_label_sidecar(&path, &sidecar)?;
        manifest.write(&out)?;
        let n_labelled = split.labelled_mask.iter().filter(|&&m| m).count();
        let n_classes = contiguous.iter().max().map_or(0, |m| m + 1);
        println!(
            "split: {}/{} classes labelled, {}/{} points labelled -> {}",
            split.y_l.len(),
            n_classes,
            n_labelled,
            contiguous.len(),
            path.display()
        );
        Ok(())
    }
}

/// Loads a sidecar and splits it into the training view (visible labels
/// only) and, when every point carries a label, the evaluation truth.
struct SidecarView {
    visible: Vec<Option<usize>>,
    mask: Vec<bool>,
    truth: Option<Vec<usize>>,
}

fn read_sidecar(path: &Path, n_points: usize) -> CliResult<SidecarView> {
    let sidecar = load_label_sidecar(path)?;
    if sidecar.len() != n_points {
        return Err(GcdError::InvalidInput(format!(
            "{} covers {} points but the feature file has {n_points}",
            path.display(),
            sidecar.len()
        ))
        .into());
    }
    let visible: Vec<Option<usize>> = sidecar
        .labels
        .iter()
        .zip(&sidecar.is_labelled)
        .map(|(&l, &m)| if m { l.map(|v| v as usize) } else { None })
        .collect();
    let truth = if sidecar.labels.iter().all(Option::is_some) {
        let raw: Vec<i64> = sidecar.labels.iter().map(|l| l.unwrap()).collect();
        let (_, contiguous) = LabelMap::fit(&raw);
        Some(contiguous)
    } else {
        None
    };
    Ok(SidecarView {
        visible,
        mask: sidecar.is_labelled,
        truth,
    })
}

/// Loads features and, when a head file is given, replaces them with the
/// head's projections.
fn load_feature_space(
    features_path: &Path,
    head_path: Option<&Path>,
    normalize: bool,
) -> CliResult<FeatureMatrix> {
    let (features, _) = load_features(features_path)?;
    let Some(head_path) = head_path else {
        return Ok(features);
    };
    let head = load_head(head_path)?;
    if head.d_in() != features.dim() {
        return Err(GcdError::InvalidInput(format!(
            "head expects dimension {}, features have {}",
            head.d_in(),
            features.dim()
        ))
        .into());
    }
    let projected = head.project(features.values(), normalize)?;
    Ok(FeatureMatrix::new(projected)?)
}

#[derive(Serialize)]
struct EvalReportFile {
    manifest: RunManifest,
    report: AccReport,
}

/// Runs k-means (plain or semi-supervised) and writes assignments,
/// centroids, and -- when the sidecar carries full ground truth -- an
/// accuracy report.
#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    features: Option<PathBuf>,
    /// Label sidecar (required for --mode semi-sup).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// plain or semi-sup.
    #[arg(long)]
    mode: Option<ClusterMode>,
    /// Number of clusters.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Trained projection head; features are projected through it first.
    #[arg(long)]
    head: Option<PathBuf>,
    /// L2-normalize projections (only with --head).
    #[arg(long)]
    normalize: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ClusterArgs {
    pub fn run(self, file: ConfigFile) -> CliResult<()> {
        let mut r = Resolver::new(file);
        let features_path: PathBuf = r.required(self.features, "features")?;
        let labels_path: Option<PathBuf> = r.optional(self.labels, "labels")?;
        let mode = r.required(self.mode, "mode")?;
        let k = r.required(self.k, "k")?;
        let restarts = r.or_default(self.restarts, "restarts", 10)?;
        let max_iters = r.or_default(self.max_iters, "max-iters", 300)?;
        let tol = r.or_default(self.tol, "tol", 1e-6)?;
        let head_path: Option<PathBuf> = r.optional(self.head, "head")?;
        let normalize = r.or_default(self.normalize, "normalize", true)?;
        let seed = r.or_default(self.seed, "seed", 0)?;
        let out = ensure_out_dir(&r.required(self.out, "out")?)?;
        let mut manifest = ManifestBuilder::new("cluster", seed, r.finish()?);
        manifest.input("features", &features_path)?;
        if let Some(p) = &labels_path {
            manifest.input("labels", p)?;
        }
        if let Some(p) = &head_path {
            manifest.input("head", p)?;
        }

        let features = load_feature_space(&features_path, head_path.as_deref(), normalize)?;
        let sidecar = labels_path
            .as_deref()
            .map(|p| read_sidecar(p, features.n_points()))
            .transpose()?;

        let config = KMeansConfig::new(k)
            .with_seed(derive_seed(seed, "cluster", &[]))
            .with_restarts(restarts)
            .with_max_iters(max_iters)
            .with_tol(tol);
        let (model, dataset): (ClusterModel, Option<GcdDataset>) = match mode {
            ClusterMode::Plain => (kmeans_fit(&features, &config)?, None),
            ClusterMode::SemiSup => {
                let view = sidecar
                    .as_ref()
                    .ok_or_else(|| usage("--mode semi-sup requires --labels"))?;
                let ds = GcdDataset::from_partial_labels(
                    features.clone(),
                    view.visible.clone(),
                    view.mask.clone(),
                )?;
                (ss_kmeans_fit(&ds, &config)?, Some(ds))
            }
        };

        save_assignments(&out.join("assignments.csv"), &model.assignments)?;
        let centroids = FeatureMatrix::new(model.centroids.clone())?;
        save_features_binary(&out.join("centroids.gcdf"), &centroids, None)?;
        let manifest = manifest.write(&out)?;

        // Evaluation convenience: when the sidecar carries truth for every
        // point, score the unlabelled portion the same way `eval` would.
        // The fit above never saw these labels; the dataset type only
        // exposes them through its evaluation view.
        let mut acc_note = String::new();
        if let Some(view) = &sidecar {
            if let Some(truth) = &view.truth {
                let eval_ds = GcdDataset::with_ground_truth(
                    features.clone(),
                    truth.clone(),
                    view.mask.clone(),
                )?;
                let preds: Vec<usize> = eval_ds
                    .unlabelled_indices()
                    .iter()
                    .map(|&i| model.assignments[i])
                    .collect();
                let report = acc_report(&eval_ds, &preds)?;
                write_json(&out.join("report.json"), &EvalReportFile { manifest, report: report.clone() })?;
                acc_note = format!(
                    " acc_all={:.4} acc_old={:.4} acc_new={:.4}",
                    report.acc_all, report.acc_old, report.acc_new
                );
            }
        }
        let _ = dataset;
        println!(
            "cluster[{mode}]: k={k} inertia={:.4} iters={} converged={}{acc_note} -> {}",
            model.inertia,
            model.n_iters,
            model.converged,
            out.join("assignments.csv").display()
        );
        Ok(())
    }
}

#[derive(Serialize)]
struct EstimateFile {
    manifest: RunManifest,
    best_k: usize,
    best_score: f64,
    evaluations: Vec<(usize, f64)>,
}

/// Estimate the number of classes by scoring candidate k values on the
/// labelled subset.
#[derive(Debug, Args)]
pub struct EstimateKArgs {
    #[arg(long)]
    features: Option<PathBuf>,
    /// Label sidecar with the visible labels.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Budget of distinct k evaluations.
    #[arg(long)]
    max_evals: Option<usize>,
    /// k-means restarts averaged into each score.
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    head: Option<PathBuf>,
    #[arg(long)]
    normalize: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl EstimateKArgs {
    pub fn run(self, file: ConfigFile) -> CliResult<()> {
        let mut r = Resolver::new(file);
        let features_path: PathBuf = r.required(self.features, "features")?;
        let labels_path: PathBuf = r.required(self.labels, "labels")?;
        let k_min = r.required(self.k_min, "k-min")?;
        let k_max = r.required(self.k_max, "k-max")?;
        let max_evals = r.or_default(self.max_evals, "max-evals", 25)?;
        let restarts = r.or_default(self.restarts, "restarts", 3)?;
        let head_path: Option<PathBuf> = r.optional(self.head, "head")?;
        let normalize = r.or_default(self.normalize, "normalize", true)?;
        let seed = r.or_default(self.seed, "seed", 0)?;
        let out = ensure_out_dir(&r.required(self.out, "out")?)?;
        let mut manifest = ManifestBuilder::new("estimate-k", seed, r.finish()?);
        manifest.input("features", &features_path)?;
        manifest.input("labels", &labels_path)?;
        if let Some(p) = &head_path {
            manifest.input("head", p)?;
        }

        let features = load_feature_space(&features_path, head_path.as_deref(), normalize)?;
        let view = read_sidecar(&labels_path, features.n_points())?;
        let dataset = GcdDataset::from_partial_labels(features, view.visible, view.mask)?;
        let config = KSearchConfig::new(k_min, k_max)
            .with_seed(derive_seed(seed, "estimate-k", &[]))
            .with_max_evals(max_evals)
            .with_restarts_per_eval(restarts);
        let trace = gcd_core::estimate_k(&dataset, &config)?;

        save_k_scores(&out.join("k_scores.csv"), &trace.evaluations)?;
        let manifest = manifest.write(&out)?;
        write_json(
            &out.join("estimate.json"),
            &EstimateFile {
                manifest,
                best_k: trace.best_k,
                best_score: trace.best_score,
                evaluations: trace.evaluations.clone(),
            },
        )?;
        println!(
            "estimate-k: best_k={} best_score={:.4} ({} evaluations) -> {}",
            trace.best_k,
            trace.best_score,
            trace.evaluations.len(),
            out.join("estimate.json").display()
        );
        Ok(())
    }
}

/// Score saved assignments against ground truth.
#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    features: Option<PathBuf>,
    /// Label sidecar carrying ground truth for every point.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Assignments CSV from `cluster`.
    #[arg(long)]
    assignments: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl EvalArgs {
    pub fn run(self, file: ConfigFile) -> CliResult<()> {
        let mut r = Resolver::new(file);
        let features_path: PathBuf = r.required(self.features, "features")?;
        let labels_path: PathBuf = r.required(self.labels, "labels")?;
        let assignments_path: PathBuf = r.required(self.assignments, "assignments")?;
        let seed = r.or_default(self.seed, "seed", 0)?;
        let out = ensure_out_dir(&r.required(self.out, "out")?)?;
        let mut manifest = ManifestBuilder::new("eval", seed, r.finish()?);
        manifest.input("features", &features_path)?;
        manifest.input("labels", &labels_path)?;
        manifest.input("assignments", &assignments_path)?;

        let (features, _) = load_features(&features_path)?;
        let view = read_sidecar(&labels_path, features.n_points())?;
        let truth = view.truth.ok_or_else(|| {
            GcdError::EvaluationUnavailable(format!(
                "{} does not carry a label for every point",
                labels_path.display()
            ))
        })?;
        let dataset = GcdDataset::with_ground_truth(features, truth, view.mask)?;
        let assignments = load_assignments(&assignments_path)?;
        let unlabelled = dataset.unlabelled_indices();
        let preds: Vec<usize> = if assignments.len() == dataset.n_points() {
            unlabelled.iter().map(|&i| assignments[i]).collect()
        } else if assignments.len() == unlabelled.len() {
            assignments
        } else {
            return Err(GcdError::InvalidInput(format!(
                "{} assignments for {} points ({} unlabelled)",
                assignments.len(),
                dataset.n_points(),
                unlabelled.len()
            ))
            .into());
        };
        let report = acc_report(&dataset, &preds)?;
        let manifest = manifest.write(&out)?;
        write_json(&out.join("report.json"), &EvalReportFile { manifest, report: report.clone() })?;
        println!(
            "eval: acc_all={:.4} acc_old={:.4} acc_new={:.4} (n={}) -> {}",
            report.acc_all,
            report.acc_old,
            report.acc_new,
            report.counts.all,
            out.join("report.json").display()
        );
        Ok(())
    }
}

/// Fine-tune a projection head on jittered feature views.
#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[arg(long)]
    features: Option<PathBuf>,
    /// Label sidecar with the visible labels.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Images per mini-batch.
    #[arg(long)]
    batch_images: Option<usize>,
    /// Initial learning rate (cosine-annealed to zero).
    #[arg(long)]
    lr: Option<f64>,
    /// View jitter; defaults to 0.05 x the global feature std.
    #[arg(long)]
    sigma: Option<f64>,
    /// Hidden width of the projection head.
    #[arg(long)]
    hidden: Option<usize>,
    /// Output dimension of the projection head.
    #[arg(long)]
    proj_dim: Option<usize>,
    /// Softmax temperature.
    #[arg(long)]
    tau: Option<f64>,
    /// Weight of the supervised term, in [0, 1].
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    normalize: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl TrainToyArgs {
    pub fn run(self, file: ConfigFile) -> CliResult<()> {
        let mut r = Resolver::new(file);
        let features_path: PathBuf = r.required(self.features, "features")?;
        let labels_path: PathBuf = r.required(self.labels, "labels")?;
        let epochs = r.or_default(self.epochs, "epochs", 30)?;
        let batch_images = r.or_default(self.batch_images, "batch-images", 64)?;
        let lr = r.or_default(self.lr, "lr", 0.05)?;
        let sigma = r.optional(self.sigma, "sigma")?;
        let hidden = r.or_default(self.hidden, "hidden", 2048)?;
        let proj_dim = r.or_default(self.proj_dim, "proj-dim", 128)?;
        let tau = r.or_default(self.tau, "tau", 0.1)?;
        let lambda = r.or_default(self.lambda, "lambda", 0.35)?;
        let normalize = r.or_default(self.normalize, "normalize", true)?;
        let seed = r.or_default(self.seed, "seed", 0)?;
        let out = ensure_out_dir(&r.required(self.out, "out")?)?;
        let mut manifest = ManifestBuilder::new("train-toy", seed, r.finish()?);
        manifest.input("features", &features_path)?;
        manifest.input("labels", &labels_path)?;

        let (features, _) = load_features(&features_path)?;
        let view = read_sidecar(&labels_path, features.n_points())?;
        let dim = features.dim();
        let dataset = GcdDataset::from_partial_labels(features, view.visible, view.mask)?;
        let head = ProjectionHead::new_random(dim, hidden, proj_dim, derive_seed(seed, "train-toy-init", &[]))?;
        let contrastive = ContrastiveConfig {
            tau,
            lambda,
            normalize,
        };
        let train = TrainConfig {
            epochs,
            batch_images,
            lr,
            view_sigma: sigma,
            seed: derive_seed(seed, "train-toy", &[]),
        };
        let (trained, curve) = train_toy(&dataset, head, &contrastive, &train)?;

        let head_path = out.join("head.gcdh");
        save_head(&head_path, &trained)?;
        save_loss_curve(&out.join("loss_curve.csv"), &curve)?;
        manifest.write(&out)?;
        println!(
            "train-toy: mean loss {:.4} -> {:.4} over {epochs} epochs -> {}",
            curve.first().copied().unwrap_or(f64::NAN),
            curve.last().copied().unwrap_or(f64::NAN),
            head_path.display()
        );
        Ok(())
    }
}

#[derive(Serialize)]
struct LossCheckFile {
    manifest: RunManifest,
    batches: usize,
    max_relative_error: f64,
    tolerance: f64,
    pass: bool,
}

/// Compare analytic loss gradients against central finite differences on
/// random batches.
#[derive(Debug, Args)]
pub struct LossCheckArgs {
    /// Number of random batches to check.
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Optional output directory for loss_check.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

const GRAD_CHECK_TOLERANCE: f64 = 1e-5;
const GRAD_CHECK_STEP: f64 = 1e-5;

impl LossCheckArgs {
    pub fn run(self, file: ConfigFile) -> CliResult<()> {
        let mut r = Resolver::new(file);
        let batches = r.or_default(self.batches, "batches", 50)?;
        let seed = r.or_default(self.seed, "seed", 0)?;
        let out: Option<PathBuf> = r.optional(self.out, "out")?;
        let params = r.finish()?;

        let max_err = gradient_check_suite(batches, seed)?;
        let pass = max_err < GRAD_CHECK_TOLERANCE;
        if let Some(out) = &out {
            let out = ensure_out_dir(out)?;
            let manifest = ManifestBuilder::new("loss-check", seed, params).write(&out)?;
            write_json(
                &out.join("loss_check.json"),
                &LossCheckFile {
                    manifest,
                    batches,
                    max_relative_error: max_err,
                    tolerance: GRAD_CHECK_TOLERANCE,
                    pass,
                },
            )?;
        }
        println!(
            "loss-check: {batches} batches, max relative error {max_err:.3e}, tolerance {GRAD_CHECK_TOLERANCE:.0e} -> {}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            return Err(GcdError::InvalidInput(format!(
                "gradient check failed: max relative error {max_err:.3e} exceeds {GRAD_CHECK_TOLERANCE:.0e}"
            ))
            .into());
        }
        Ok(())
    }
}

/// Runs `batches` random head-gradient checks and returns the worst guarded
/// relative error. Batch shapes, labels and the (lambda, normalize) grid
/// follow the acceptance contract: B <= 8 images, projection dim <= 16,
/// lambda in {0, 0.35, 1}, normalization both on and off.
pub fn gradient_check_suite(batches: usize, seed: u64) -> CliResult<f64> {
    let lambdas = [0.0, 0.35, 1.0];
    let mut worst = 0.0f64;
    for b in 0..batches as u64 {
        let mut rng = rng_from(derive_seed(seed, "loss-check", &[b]));
        let n_images = rng.random_range(2..=8usize);
        let proj_dim = rng.random_range(2..=16usize);
        let d_in = rng.random_range(2..=6usize);
        let hidden = rng.random_range(2..=10usize);
        let lambda = lambdas[(b % 3) as usize];
        let normalize = (b / 3) % 2 == 0;
        let config = ContrastiveConfig {
            tau: 0.5,
            lambda,
            normalize,
        };

        let head = ProjectionHead::new_random(d_in, hidden, proj_dim, derive_seed(seed, "loss-check-head", &[b]))?;
        let inputs = Array2::from_shape_fn((2 * n_images, d_in), |_| {
            rng.sample::<f64, _>(StandardNormal)
        });
        let labels: Vec<Option<usize>> = (0..n_images)
            .map(|_| {
                if rng.random_range(0..10) < 7 {
                    Some(rng.random_range(0..3usize))
                } else {
                    None
                }
            })
            .collect();

        let z = head.project(&inputs, normalize)?;
        let batch = ViewBatch::from_interleaved(z, labels.clone())?;
        let analytic = grad_total_loss(&batch, &head, &inputs, &config)?;

        let params = head.params_flat();
        for j in 0..params.len() {
            let eval = |delta: f64| -> CliResult<f64> {
                let mut p = params.clone();
                p[j] += delta;
                let perturbed = ProjectionHead::from_flat(d_in, hidden, proj_dim, &p)?;
                let z = perturbed.project(&inputs, normalize)?;
                let batch = ViewBatch::from_interleaved(z, labels.clone())?;
                Ok(total_loss(&batch, &config)?.sum)
            };
            let fd = (eval(GRAD_CHECK_STEP)? - eval(-GRAD_CHECK_STEP)?) / (2.0 * GRAD_CHECK_STEP);
            let a = analytic.values[j];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Reassemble a human-readable summary from the manifests and reports in
/// one or more run directories.
#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories to summarize.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    /// Write the summary here instead of only printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ReportArgs {
    pub fn run(self, file: ConfigFile) -> CliResult<()> {
        // `report` takes no config keys; reject any to catch typos.
        Resolver::new(file).finish()?;
        let mut text = String::new();
        for dir in &self.dirs {
            summarize_dir(dir, &mut text)?;
        }
        print!("{text}");
        if let Some(out) = &self.out {
            std::fs::write(out, &text)?;
        }
        Ok(())
    }
}

fn summarize_dir(dir: &Path, text: &mut String) -> CliResult<()> {
    use std::fmt::Write;

    let mut manifest_paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(".manifest.json"))
        })
        .collect();
    manifest_paths.sort();
    if manifest_paths.is_empty() {
        let _ = writeln!(text, "== {} ==\n(no manifests found)\n", dir.display());
        return Ok(());
    }
    for path in manifest_paths {
        let value: Value = serde_json::from_str(&std::fs::read_to_string(&path)?)
            .map_err(|e| GcdError::InvalidInput(format!("{}: {e}", path.display())))?;
        let command = value["command"].as_str().unwrap_or("?");
        let _ = writeln!(text, "== {} ({command}) ==", dir.display());
        let _ = writeln!(text, "seed: {}", value["seed"]);
        if let Some(secs) = value["wall_clock_seconds"].as_f64() {
            let _ = writeln!(text, "wall clock: {secs:.3} s");
        }
        if let Some(params) = value["parameters"].as_object() {
            let line: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(text, "parameters: {}", line.join(" "));
        }
        if let Some(inputs) = value["inputs"].as_object() {
            for (role, digest) in inputs {
                let _ = writeln!(
                    text,
                    "input {role}: {} sha256={}",
                    digest["path"].as_str().unwrap_or("?"),
                    digest["sha256"].as_str().map(|s| &s[..16]).unwrap_or("?")
                );
            }
        }
        append_results(dir, command, text)?;
        text.push('\n');
    }
    Ok(())
}

fn append_results(dir: &Path, command: &str, text: &mut String) -> CliResult<()> {
    use std::fmt::Write;

    let read = |name: &str| -> CliResult<Option<Value>> {
        let path = dir.join(name);
        if !path.exists() {
            return Ok(None);
        }
        let value = serde_json::from_str(&std::fs::read_to_string(&path)?)
            .map_err(|e| GcdError::InvalidInput(format!("{}: {e}", path.display())))?;
        Ok(Some(value))
    };
    match command {
        "cluster" | "eval" => {
            if let Some(v) = read("report.json")? {
                let r = &v["report"];
                let _ = writeln!(
                    text,
                    "results: acc_all={} acc_old={} acc_new={} (n={})",
                    r["acc_all"], r["acc_old"], r["acc_new"], r["counts"]["all"]
                );
            }
        }
        "estimate-k" => {
            if let Some(v) = read("estimate.json")? {
                let _ = writeln!(
                    text,
                    "results: best_k={} best_score={} evaluations={}",
                    v["best_k"],
                    v["best_score"],
                    v["evaluations"].as_array().map_or(0, Vec::len)
                );
            }
        }
        "loss-check" => {
            if let Some(v) = read("loss_check.json")? {
                let _ = writeln!(
                    text,
                    "results: max_relative_error={} pass={}",
                    v["max_relative_error"], v["pass"]
                );
            }
        }
        _ => {}
    }
    Ok(())
}
