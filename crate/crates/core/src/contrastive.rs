//! Contrastive losses over paired views, their analytic gradients, and a
//! small trainer that fine-tunes a projection head on feature vectors.
//!
//! A batch holds two "views" per image, interleaved (rows `2i` and `2i+1`
//! belong to image `i`). The unsupervised loss pulls an anchor towards its
//! partner view against all other rows; the supervised loss pulls labelled
//! anchors towards every row of the same class (other images' views plus the
//! anchor's own partner). The total objective mixes the two with a weight
//! `lambda`, as a sum over anchors; the batch-mean form is also exposed for
//! scale-stable training curves.
//!
//! All softmax denominators use max-subtraction, so small temperatures do
//! not overflow.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureMatrix, GcdDataset};
use crate::error::{GcdError, Result};
use crate::seed::{derive_seed, rng_from};

/// Temperature, loss balance, and the projection-normalization switch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    /// Softmax temperature; must be positive.
    pub tau: f64,
    /// Weight of the supervised term, in `[0, 1]`.
    pub lambda: f64,
    /// L2-normalize projections so dot products are cosine similarities.
    pub normalize: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            lambda: 0.35,
            normalize: true,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(GcdError::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.tau
            )));
        }
        if !(self.lambda.is_finite() && (0.0..=1.0).contains(&self.lambda)) {
            return Err(GcdError::InvalidConfig(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Projected embeddings of a two-view mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewBatch {
    z: Array2<f64>,
    /// Row of the other view of the same image; a perfect matching.
    partner: Vec<usize>,
    /// Per-image labels; `None` for unlabelled images.
    labels: Vec<Option<usize>>,
    labelled_mask: Vec<bool>,
}

impl ViewBatch {
    /// Builds a batch from interleaved rows: `z` row `2i` and `2i+1` are the
    /// two views of image `i`, which carries `labels[i]`.
    pub fn from_interleaved(z: Array2<f64>, labels: Vec<Option<usize>>) -> Result<Self> {
        let rows = z.nrows();
        if rows == 0 || rows % 2 != 0 {
            return Err(GcdError::InvalidInput(format!(
                "a view batch needs a positive even row count, got {rows}"
            )));
        }
        if labels.len() * 2 != rows {
            return Err(GcdError::InvalidInput(format!(
                "{} labels for {rows} rows; expected one label per image",
                labels.len()
            )));
        }
        if let Some(((i, j), v)) = z.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(GcdError::InvalidInput(format!(
                "non-finite embedding value {v} at row {i}, column {j}"
            )));
        }
        let partner: Vec<usize> = (0..rows).map(|r| r ^ 1).collect();
        let labelled_mask: Vec<bool> = labels.iter().map(Option::is_some).collect();
        Ok(Self {
            z,
            partner,
            labels,
            labelled_mask,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.z.nrows()
    }

    pub fn n_images(&self) -> usize {
        self.labels.len()
    }

    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn partner_of(&self, row: usize) -> usize {
        self.partner[row]
    }

    pub fn label_of_row(&self, row: usize) -> Option<usize> {
        self.labels[row / 2]
    }

    pub fn is_labelled_row(&self, row: usize) -> bool {
        self.labelled_mask[row / 2]
    }

    /// Maximum deviation of any row norm from one; near zero when the batch
    /// was built from normalized projections.
    pub fn max_norm_deviation(&self) -> f64 {
        self.z
            .rows()
            .into_iter()
            .map(|r| (r.dot(&r).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Same-label rows of other images plus the anchor's own partner view.
    fn neighborhood(&self, anchor: usize) -> Vec<usize> {
        let mut n = vec![self.partner[anchor]];
        if let Some(label) = self.label_of_row(anchor) {
            for r in 0..self.n_rows() {
                if r / 2 != anchor / 2 && self.label_of_row(r) == Some(label) {
                    n.push(r);
                }
            }
        }
        n.sort_unstable();
        n
    }
}

/// Per-anchor log-denominator and softmax over the non-anchor rows.
///
/// Returns `(lse, p)` with `lse = log Σ_{n≠i} exp(s_n)` and `p[n]` the
/// softmax weight (zero at the anchor itself).
fn masked_log_softmax(scores: ArrayView1<'_, f64>, anchor: usize) -> (f64, Vec<f64>) {
    let mut m = f64::NEG_INFINITY;
    for (n, &s) in scores.iter().enumerate() {
        if n != anchor && s > m {
            m = s;
        }
    }
    let mut total = 0.0;
    let mut p = vec![0.0; scores.len()];
    for (n, &s) in scores.iter().enumerate() {
        if n != anchor {
            let e = (s - m).exp();
            p[n] = e;
            total += e;
        }
    }
    for w in &mut p {
        *w /= total;
    }
    (m + total.ln(), p)
}

fn similarity_rows(batch: &ViewBatch, tau: f64) -> Array2<f64> {
    let z = &batch.z;
    let mut s = z.dot(&z.t());
    s.mapv_inplace(|v| v / tau);
    s
}

/// Per-anchor unsupervised loss: pull each row towards its partner view
/// against every other row. Returns the mean over all rows and the
/// per-anchor values.
pub fn unsup_loss(batch: &ViewBatch, config: &ContrastiveConfig) -> Result<(f64, Vec<f64>)> {
    config.validate()?;
    let s = similarity_rows(batch, config.tau);
    let rows = batch.n_rows();
    let mut per_anchor = Vec::with_capacity(rows);
    for i in 0..rows {
        let (lse, _) = masked_log_softmax(s.row(i), i);
        per_anchor.push(lse - s[(i, batch.partner[i])]);
    }
    let mean = per_anchor.iter().sum::<f64>() / rows as f64;
    Ok((mean, per_anchor))
}

/// Supervised loss over the labelled anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct SupLoss {
    /// Mean over labelled anchor rows.
    pub mean: f64,
    /// `(row, loss)` for each labelled anchor row, in row order.
    pub per_anchor: Vec<(usize, f64)>,
    /// Anchors whose neighborhood was empty (contributed zero); cannot
    /// happen while the partner view is part of the neighborhood, but
    /// callers are told if it ever does.
    pub empty_neighborhoods: usize,
}

/// Per-labelled-anchor supervised loss: average log-likelihood of the
/// anchor's same-class rows against all other rows.
pub fn sup_loss(batch: &ViewBatch, config: &ContrastiveConfig) -> Result<SupLoss> {
    config.validate()?;
    let anchors: Vec<usize> = (0..batch.n_rows())
        .filter(|&r| batch.is_labelled_row(r))
        .collect();
    if anchors.is_empty() {
        return Err(GcdError::EmptySupervision);
    }
    let s = similarity_rows(batch, config.tau);
    let mut per_anchor = Vec::with_capacity(anchors.len());
    let mut empty_neighborhoods = 0usize;
    for &i in &anchors {
        let neighbors = batch.neighborhood(i);
        if neighbors.is_empty() {
            empty_neighborhoods += 1;
            per_anchor.push((i, 0.0));
            continue;
        }
        let (lse, _) = masked_log_softmax(s.row(i), i);
        let mean_sim = neighbors.iter().map(|&q| s[(i, q)]).sum::<f64>() / neighbors.len() as f64;
        per_anchor.push((i, lse - mean_sim));
    }
    let mean = per_anchor.iter().map(|&(_, l)| l).sum::<f64>() / anchors.len() as f64;
    Ok(SupLoss {
        mean,
        per_anchor,
        empty_neighborhoods,
    })
}

/// The mixed objective in both printed-sum and batch-mean form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TotalLoss {
    /// `(1-lambda) * Σ unsupervised + lambda * Σ supervised`, the sum form.
    pub sum: f64,
    /// `(1-lambda) * mean unsupervised + lambda * mean supervised`.
    pub mean: f64,
    pub unsup_sum: f64,
    pub sup_sum: f64,
    pub n_unsup_anchors: usize,
    pub n_sup_anchors: usize,
}

/// Mixes the unsupervised and supervised losses. A batch without labelled
/// images has an empty supervised sum, which contributes zero.
pub fn total_loss(batch: &ViewBatch, config: &ContrastiveConfig) -> Result<TotalLoss> {
    config.validate()?;
    let (unsup_mean, unsup_per) = unsup_loss(batch, config)?;
    let n_unsup = unsup_per.len();
    let (sup_mean, sup_sum, n_sup) = match sup_loss(batch, config) {
        Ok(s) => {
            let sum = s.per_anchor.iter().map(|&(_, l)| l).sum::<f64>();
            (s.mean, sum, s.per_anchor.len())
        }
        Err(GcdError::EmptySupervision) => (0.0, 0.0, 0),
        Err(e) => return Err(e),
    };
    let unsup_sum = unsup_mean * n_unsup as f64;
    let l = config.lambda;
    Ok(TotalLoss {
        sum: (1.0 - l) * unsup_sum + l * sup_sum,
        mean: (1.0 - l) * unsup_mean + l * sup_mean,
        unsup_sum,
        sup_sum,
        n_unsup_anchors: n_unsup,
        n_sup_anchors: n_sup,
    })
}

/// Which form of the objective a gradient differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LossForm {
    Sum,
    Mean,
}

/// Analytic gradient of the total loss with respect to the embeddings `z`,
/// for the sum form, together with the loss values.
pub fn grad_total_loss_z(
    batch: &ViewBatch,
    config: &ContrastiveConfig,
) -> Result<(Array2<f64>, TotalLoss)> {
    grad_z(batch, config, LossForm::Sum)
}

fn grad_z(
    batch: &ViewBatch,
    config: &ContrastiveConfig,
    form: LossForm,
) -> Result<(Array2<f64>, TotalLoss)> {
    config.validate()?;
    let rows = batch.n_rows();
    let dim = batch.z.ncols();
    let s = similarity_rows(batch, config.tau);
    let z = &batch.z;
    let lambda = config.lambda;

    let sup_anchors: Vec<usize> = (0..rows).filter(|&r| batch.is_labelled_row(r)).collect();
    let (w_unsup, w_sup) = match form {
        LossForm::Sum => (1.0 - lambda, lambda),
        LossForm::Mean => (
            (1.0 - lambda) / rows as f64,
            if sup_anchors.is_empty() {
                0.0
            } else {
                lambda / sup_anchors.len() as f64
            },
        ),
    };

    let mut grad = Array2::<f64>::zeros((rows, dim));
    let mut unsup_sum = 0.0;
    let mut sup_sum = 0.0;

    for i in 0..rows {
        let (lse, p) = masked_log_softmax(s.row(i), i);
        let partner = batch.partner[i];
        unsup_sum += lse - s[(i, partner)];

        // d/dz_i: softmax-weighted sum of the other rows, minus the target
        // mix; d/dz_q: the anchor scaled by (p_q - target weight). All terms
        // carry 1/tau from the similarity scale.
        if w_unsup != 0.0 {
            let wu = w_unsup / config.tau;
            let mut self_term = Array1::<f64>::zeros(dim);
            for q in 0..rows {
                if q == i {
                    continue;
                }
                let target = if q == partner { 1.0 } else { 0.0 };
                self_term.scaled_add(p[q], &z.row(q));
                let coeff = wu * (p[q] - target);
                grad.row_mut(q).scaled_add(coeff, &z.row(i));
            }
            self_term.scaled_add(-1.0, &z.row(partner));
            grad.row_mut(i).scaled_add(wu, &self_term);
        }

        if batch.is_labelled_row(i) {
            let neighbors = batch.neighborhood(i);
            if neighbors.is_empty() {
                continue;
            }
            let inv = 1.0 / neighbors.len() as f64;
            let mean_sim = neighbors.iter().map(|&q| s[(i, q)]).sum::<f64>() * inv;
            sup_sum += lse - mean_sim;
            if w_sup != 0.0 {
                let ws = w_sup / config.tau;
                let mut in_n = vec![false; rows];
                for &q in &neighbors {
                    in_n[q] = true;
                }
                let mut self_term = Array1::<f64>::zeros(dim);
                for q in 0..rows {
                    if q == i {
                        continue;
                    }
                    let target = if in_n[q] { inv } else { 0.0 };
                    self_term.scaled_add(p[q], &z.row(q));
                    if target != 0.0 {
                        self_term.scaled_add(-target, &z.row(q));
                    }
                    let coeff = ws * (p[q] - target);
                    grad.row_mut(q).scaled_add(coeff, &z.row(i));
                }
                grad.row_mut(i).scaled_add(ws, &self_term);
            }
        }
    }

    let n_sup = sup_anchors.len();
    let loss = TotalLoss {
        sum: (1.0 - lambda) * unsup_sum + lambda * sup_sum,
        mean: (1.0 - lambda) * unsup_sum / rows as f64
            + if n_sup == 0 {
                0.0
            } else {
                lambda * sup_sum / n_sup as f64
            },
        unsup_sum,
        sup_sum,
        n_unsup_anchors: rows,
        n_sup_anchors: n_sup,
    };
    if !loss.sum.is_finite() {
        return Err(GcdError::NumericalOverflow(format!(
            "contrastive loss is not finite: {}",
            loss.sum
        )));
    }
    Ok((grad, loss))
}

/// Two-layer perceptron `D -> hidden -> P` with a tanh nonlinearity,
/// projecting backbone features into the contrastive space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

/// Intermediate activations kept for backpropagation.
struct HeadForward {
    /// tanh outputs, rows x hidden.
    h: Array2<f64>,
    /// Pre-normalization projections, rows x P.
    z0: Array2<f64>,
    /// Final embeddings (normalized when asked), rows x P.
    z: Array2<f64>,
    /// Row norms of z0; all 1.0 when normalization is off.
    norms: Vec<f64>,
}

impl ProjectionHead {
    /// Random head with weights scaled by `1/sqrt(fan_in)` and zero biases.
    pub fn new_random(d_in: usize, hidden: usize, d_out: usize, seed: u64) -> Result<Self> {
        if d_in == 0 || hidden == 0 || d_out == 0 {
            return Err(GcdError::InvalidConfig(
                "projection head dimensions must all be at least 1".into(),
            ));
        }
        let mut rng = rng_from(seed);
        let mut sample = |rows: usize, cols: usize, scale: f64| {
            Array2::from_shape_fn((rows, cols), |_| {
                scale * rng.sample::<f64, _>(StandardNormal)
            })
        };
        let w1 = sample(hidden, d_in, 1.0 / (d_in as f64).sqrt());
        let w2 = sample(d_out, hidden, 1.0 / (hidden as f64).sqrt());
        Ok(Self {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(d_out),
        })
    }

    /// The default shape used when no sizes are given: `D -> 2048 -> 128`.
    pub fn with_default_shape(d_in: usize, seed: u64) -> Result<Self> {
        Self::new_random(d_in, 2048, 128, seed)
    }

    pub fn d_in(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.w2.nrows()
    }

    pub fn n_params(&self) -> usize {
        let (h, d, p) = (self.hidden(), self.d_in(), self.d_out());
        h * d + h + p * h + p
    }

    /// Flat parameter vector in the fixed layout `w1, b1, w2, b2`
    /// (matrices row-major); gradients use the same layout.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend(self.w1.iter());
        out.extend(self.b1.iter());
        out.extend(self.w2.iter());
        out.extend(self.b2.iter());
        out
    }

    /// Rebuilds a head from the flat layout of [`Self::params_flat`].
    pub fn from_flat(d_in: usize, hidden: usize, d_out: usize, values: &[f64]) -> Result<Self> {
        let expected = hidden * d_in + hidden + d_out * hidden + d_out;
        if values.len() != expected {
            return Err(GcdError::InvalidInput(format!(
                "expected {expected} parameters for a {d_in}->{hidden}->{d_out} head, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(GcdError::InvalidInput(format!(
                "non-finite head parameter {v}"
            )));
        }
        let mut at = 0usize;
        let mut take = |n: usize| {
            let s = &values[at..at + n];
            at += n;
            s.to_vec()
        };
        let w1 = Array2::from_shape_vec((hidden, d_in), take(hidden * d_in))
            .map_err(|e| GcdError::InvalidInput(e.to_string()))?;
        let b1 = Array1::from_vec(take(hidden));
        let w2 = Array2::from_shape_vec((d_out, hidden), take(d_out * hidden))
            .map_err(|e| GcdError::InvalidInput(e.to_string()))?;
        let b2 = Array1::from_vec(take(d_out));
        Ok(Self { w1, b1, w2, b2 })
    }

    /// Projects each row of `inputs`; optionally L2-normalizes the outputs.
    pub fn project(&self, inputs: &Array2<f64>, normalize: bool) -> Result<Array2<f64>> {
        Ok(self.forward(inputs, normalize)?.z)
    }

    fn forward(&self, inputs: &Array2<f64>, normalize: bool) -> Result<HeadForward> {
        if inputs.ncols() != self.d_in() {
            return Err(GcdError::InvalidInput(format!(
                "inputs have dimension {}, head expects {}",
                inputs.ncols(),
                self.d_in()
            )));
        }
        let mut h = inputs.dot(&self.w1.t());
        for mut row in h.rows_mut() {
            row += &self.b1;
        }
        h.mapv_inplace(f64::tanh);
        let mut z0 = h.dot(&self.w2.t());
        for mut row in z0.rows_mut() {
            row += &self.b2;
        }
        let mut z = z0.clone();
        let mut norms = vec![1.0; z.nrows()];
        if normalize {
            for (r, mut row) in z.rows_mut().into_iter().enumerate() {
                let norm = row.dot(&row).sqrt();
                if norm < 1e-12 {
                    return Err(GcdError::NumericalOverflow(format!(
                        "projection of row {r} collapsed to zero norm; cannot normalize"
                    )));
                }
                row.mapv_inplace(|v| v / norm);
                norms[r] = norm;
            }
        }
        Ok(HeadForward { h, z0, z, norms })
    }
}

/// Flat head-parameter gradient plus the loss it was taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    /// Same layout as [`ProjectionHead::params_flat`].
    pub values: Vec<f64>,
    pub loss: TotalLoss,
}

/// Analytic gradient of the sum-form total loss with respect to every head
/// parameter, backpropagated through the optional normalization and the
/// tanh layer.
///
/// `inputs` are the 2B pre-head view rows in the batch's row order;
/// `batch.z` must equal the head's projection of them.
pub fn grad_total_loss(
    batch: &ViewBatch,
    head: &ProjectionHead,
    inputs: &Array2<f64>,
    config: &ContrastiveConfig,
) -> Result<HeadGradient> {
    grad_head(batch, head, inputs, config, LossForm::Sum)
}

fn grad_head(
    batch: &ViewBatch,
    head: &ProjectionHead,
    inputs: &Array2<f64>,
    config: &ContrastiveConfig,
    form: LossForm,
) -> Result<HeadGradient> {
    if inputs.nrows() != batch.n_rows() {
        return Err(GcdError::InvalidInput(format!(
            "{} input rows for a batch of {} rows",
            inputs.nrows(),
            batch.n_rows()
        )));
    }
    let fwd = head.forward(inputs, config.normalize)?;
    let drift = (&fwd.z - batch.z())
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if drift > 1e-9 {
        return Err(GcdError::InvalidInput(format!(
            "batch embeddings differ from head(inputs) by up to {drift}; \
             rebuild the batch after changing the head"
        )));
    }

    let (dz, loss) = grad_z(batch, config, form)?;

    // Through the normalization: with zhat = z0/|z0|, the Jacobian is
    // (I - zhat zhat^T)/|z0|, i.e. project out the radial component.
    let rows = batch.n_rows();
    let mut dz0 = dz;
    if config.normalize {
        for r in 0..rows {
            let zhat = fwd.z.row(r);
            let g = dz0.row(r).to_owned();
            let radial = g.dot(&zhat);
            let mut row = dz0.row_mut(r);
            row.scaled_add(-radial, &zhat);
            row.mapv_inplace(|v| v / fwd.norms[r]);
        }
    }

    // z0 = W2 h + b2; h = tanh(W1 x + b1).
    let d_w2 = dz0.t().dot(&fwd.h);
    let d_b2 = dz0.sum_axis(ndarray::Axis(0));
    let mut dh = dz0.dot(&head.w2);
    ndarray::Zip::from(&mut dh).and(&fwd.h).for_each(|g, &h| {
        *g *= 1.0 - h * h;
    });
    let d_w1 = dh.t().dot(inputs);
    let d_b1 = dh.sum_axis(ndarray::Axis(0));

    let mut values: Vec<f64> = Vec::with_capacity(head.n_params());
    values.extend(d_w1.iter());
    values.extend(d_b1.iter());
    values.extend(d_w2.iter());
    values.extend(d_b2.iter());
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(GcdError::NumericalOverflow(format!(
            "non-finite gradient component {v}"
        )));
    }
    let _ = fwd.z0;
    Ok(HeadGradient { values, loss })
}

/// Two jittered copies of each selected feature row, interleaved. The
/// "views" of a feature vector are the vector plus independent Gaussian
/// noise; image augmentations need images.
pub fn make_views(
    features: &FeatureMatrix,
    indices: &[usize],
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let dim = features.dim();
    let mut out = Array2::<f64>::zeros((indices.len() * 2, dim));
    for (slot, &i) in indices.iter().enumerate() {
        for view in 0..2 {
            let mut row = out.row_mut(slot * 2 + view);
            for (j, v) in row.iter_mut().enumerate() {
                let noise: f64 = rng.sample(StandardNormal);
                *v = features.row(i)[j] + sigma * noise;
            }
        }
    }
    out
}

/// Standard deviation over all feature entries; scales the default view
/// jitter.
pub fn global_feature_std(features: &FeatureMatrix) -> f64 {
    let values = features.values();
    let n = values.len() as f64;
    let mean = values.sum() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt()
}

/// Mini-batch settings for [`train_toy`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Images per mini-batch (each contributes two view rows).
    pub batch_images: usize,
    /// Initial learning rate, cosine-annealed to zero across the epochs.
    pub lr: f64,
    /// Jitter scale for view generation; `None` selects 0.05 x the global
    /// feature standard deviation.
    pub view_sigma: Option<f64>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize) -> Self {
        Self {
            epochs,
            batch_images: 64,
            lr: 0.05,
            view_sigma: None,
            seed: 0,
        }
    }
}

/// Fine-tunes a projection head by mini-batch gradient descent on the
/// mean-form total loss over jittered views. Returns the trained head and
/// the per-epoch mean loss curve. Deterministic given the seed.
pub fn train_toy(
    dataset: &GcdDataset,
    head: ProjectionHead,
    config: &ContrastiveConfig,
    train: &TrainConfig,
) -> Result<(ProjectionHead, Vec<f64>)> {
    config.validate()?;
    if dataset.y_l().len() < 2 {
        if dataset.n_labelled() == 0 {
            return Err(GcdError::EmptySupervision);
        }
        return Err(GcdError::InvalidConfig(format!(
            "training needs at least 2 labelled classes, got {}",
            dataset.y_l().len()
        )));
    }
    if train.epochs == 0 || train.batch_images == 0 {
        return Err(GcdError::InvalidConfig(
            "epochs and batch_images must be at least 1".into(),
        ));
    }
    if !(train.lr.is_finite() && train.lr >= 0.0) {
        return Err(GcdError::InvalidConfig(format!(
            "learning rate must be finite and non-negative, got {}",
            train.lr
        )));
    }
    let sigma = match train.view_sigma {
        Some(s) if s.is_finite() && s >= 0.0 => s,
        Some(s) => {
            return Err(GcdError::InvalidConfig(format!(
                "view sigma must be finite and non-negative, got {s}"
            )))
        }
        None => 0.05 * global_feature_std(dataset.features()),
    };

    let mut rng = rng_from(derive_seed(train.seed, "train-toy", &[]));
    let mut params = head.params_flat();
    let (d_in, hidden, d_out) = (head.d_in(), head.hidden(), head.d_out());
    let mut order: Vec<usize> = (0..dataset.n_points()).collect();
    let mut curve = Vec::with_capacity(train.epochs);

    for epoch in 0..train.epochs {
        let lr = train.lr * 0.5
            * (1.0 + (std::f64::consts::PI * epoch as f64 / train.epochs as f64).cos());
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(train.batch_images) {
            let current = ProjectionHead::from_flat(d_in, hidden, d_out, &params)?;
            let inputs = make_views(dataset.features(), chunk, sigma, &mut rng);
            let labels: Vec<Option<usize>> =
                chunk.iter().map(|&i| dataset.train_label(i)).collect();
            let z = current.project(&inputs, config.normalize)?;
            let batch = ViewBatch::from_interleaved(z, labels)?;
            let grad = grad_head(&batch, &current, &inputs, config, LossForm::Mean)?;
            if !grad.loss.mean.is_finite() {
                return Err(GcdError::TrainingDiverged {
                    epoch,
                    loss: grad.loss.mean,
                });
            }
            for (p, g) in params.iter_mut().zip(&grad.values) {
                *p -= lr * g;
            }
            epoch_loss += grad.loss.mean;
            n_batches += 1;
        }
        let mean = epoch_loss / n_batches as f64;
        if !mean.is_finite() {
            return Err(GcdError::TrainingDiverged { epoch, loss: mean });
        }
        curve.push(mean);
    }
    let trained = ProjectionHead::from_flat(d_in, hidden, d_out, &params)?;
    Ok((trained, curve))
}
