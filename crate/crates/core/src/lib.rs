//! Category discovery on feature vectors: cluster a dataset where only part
//! of the points carry labels and the labelled classes are a subset of the
//! classes present.
//!
//! The crate provides the pieces end to end:
//!
//! - [`dataset`]: feature matrices, labelled/unlabelled splits, synthetic
//!   Gaussian-blob benchmarks;
//! - [`assignment`]: minimum-cost bipartite matching and the matched
//!   clustering-accuracy metric with its All/Old/New decomposition;
//! - [`clustering`]: k-means and its semi-supervised variant that pins
//!   labelled points to their class clusters;
//! - [`class_count`]: estimating the number of classes by scoring candidate
//!   k values on the labelled subset;
//! - [`contrastive`]: paired-view representation losses, analytic
//!   gradients, and a small projection-head trainer;
//! - [`io`]: binary and CSV serialization for every artifact.
//!
//! Everything randomized takes an explicit seed and is deterministic given
//! it, including parallel sections.

pub mod assignment;
pub mod class_count;
pub mod clustering;
pub mod contrastive;
pub mod dataset;
pub mod error;
pub mod io;
pub mod seed;

pub use assignment::{acc_report, clustering_accuracy, hungarian, AccReport, Assignment, ClusterMapping, CostMatrix, SubsetCounts};
pub use class_count::{brent_maximize, estimate_k, score_k, KScoreTrace, KSearchConfig};
pub use clustering::{kmeans_fit, ss_kmeans_fit, ClusterModel, Constraints, KMeansConfig};
pub use contrastive::{
    grad_total_loss, grad_total_loss_z, make_views, sup_loss, total_loss, train_toy, unsup_loss,
    ContrastiveConfig, HeadGradient, ProjectionHead, SupLoss, TotalLoss, TrainConfig, ViewBatch,
};
pub use dataset::{
    generate_split, make_blobs, ClassSelection, FeatureMatrix, GcdDataset, LabelMap, Split,
    SplitSpec,
};
pub use error::{FormatError, GcdError, Result};
pub use seed::{derive_seed, rng_from};
