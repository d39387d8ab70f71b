//! Optimal cluster-to-class assignment and clustering accuracy.
//!
//! Clustering accuracy is the best fraction of points matched under an
//! injective mapping from cluster ids to class ids. The maximization is
//! solved exactly with the Hungarian algorithm on the negated contingency
//! matrix; when cluster and class counts differ, the surplus side is mapped
//! to a null set and its points count as incorrect.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::GcdDataset;
use crate::error::{GcdError, Result};

/// Rectangular matrix of finite assignment costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    values: Array2<f64>,
}

impl CostMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(GcdError::InvalidInput(
                "cost matrix must have at least one row and one column".into(),
            ));
        }
        if let Some(((row, col), &value)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(GcdError::InvalidCost { row, col, value });
        }
        Ok(Self { values })
    }

    pub fn from_rows(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(GcdError::InvalidInput(format!(
                "expected {} cost entries for a {n_rows}x{n_cols} matrix, got {}",
                n_rows * n_cols,
                data.len()
            )));
        }
        let values = Array2::from_shape_vec((n_rows, n_cols), data)
            .map_err(|e| GcdError::InvalidInput(e.to_string()))?;
        Self::new(values)
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[(row, col)]
    }
}

/// A minimum-cost assignment: `min(n_rows, n_cols)` row/column pairs sorted
/// by row, plus the total cost summed over those pairs in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

/// Internal square solution: matching plus the dual potentials that certify
/// optimality (`cost[i][j] - u[i+1] - v[j+1] >= 0`, equality on matched
/// edges).
struct SquareSolution {
    row_to_col: Vec<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
}

/// Minimum-cost perfect matching on a square matrix via shortest augmenting
/// paths with dual potentials, O(n^3).
fn solve_square(a: &Array2<f64>) -> SquareSolution {
    let n = a.nrows();
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j] = 1-based row matched to column j
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    SquareSolution { row_to_col, u, v }
}

/// Pads a rectangular cost matrix with zero rows or columns to a square.
///
/// Only one side is ever padded, so a minimum matching of the square matrix
/// restricted to real rows and columns covers exactly `min(n_rows, n_cols)`
/// real pairs, and the zero padding adds nothing to the cost; the
/// restriction is therefore an optimal rectangular assignment.
fn pad_square(cost: &CostMatrix) -> Array2<f64> {
    let n = cost.n_rows().max(cost.n_cols());
    let mut a = Array2::<f64>::zeros((n, n));
    a.slice_mut(ndarray::s![..cost.n_rows(), ..cost.n_cols()])
        .assign(&cost.values);
    a
}

/// Rewrites an optimal matching into the lexicographically smallest one.
///
/// With optimal duals, an assignment is minimum-cost exactly when it uses
/// only zero-reduced-cost edges, so ties are resolved by walking rows in
/// ascending order and granting each the smallest feasible column (real
/// columns first, padding columns last) for which the remaining rows can
/// still be rematched inside the zero-edge subgraph.
fn lexicographic_polish(a: &Array2<f64>, n_real_rows: usize, sol: &mut SquareSolution) {
    let n = a.nrows();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let eps = 1e-9 * (1.0 + scale);
    let zero: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| a[(i, j)] - sol.u[i + 1] - sol.v[j + 1] <= eps)
                .collect()
        })
        .collect();
    let mut col_to_row = vec![0usize; n];
    for (i, &j) in sol.row_to_col.iter().enumerate() {
        col_to_row[j] = i;
    }
    let mut fixed_col = vec![false; n];
    for i in 0..n_real_rows {
        for j in 0..n {
            if !zero[i][j] || fixed_col[j] {
                continue;
            }
            if sol.row_to_col[i] == j {
                fixed_col[j] = true;
                break;
            }
            // Hand row i column j, then re-seat the displaced row onto row
            // i's old column through an alternating path of zero edges.
            let freed = sol.row_to_col[i];
            let displaced = col_to_row[j];
            let mut visited = vec![false; n];
            visited[j] = true;
            if rematch(
                displaced,
                freed,
                &zero,
                &fixed_col,
                &mut visited,
                &mut sol.row_to_col,
                &mut col_to_row,
            ) {
                sol.row_to_col[i] = j;
                col_to_row[j] = i;
                fixed_col[j] = true;
                break;
            }
        }
        // The row's current column is always feasible, so one was fixed.
    }
}

/// Depth-first alternating-path search giving `row` a new column; succeeds
/// when the path reaches `target`, the single free column. Matching state is
/// rewritten only along a successful path.
fn rematch(
    row: usize,
    target: usize,
    zero: &[Vec<bool>],
    fixed_col: &[bool],
    visited: &mut [bool],
    row_to_col: &mut [usize],
    col_to_row: &mut [usize],
) -> bool {
    for q in 0..zero[row].len() {
        if visited[q] || fixed_col[q] || !zero[row][q] {
            continue;
        }
        visited[q] = true;
        let owner = col_to_row[q];
        if q == target
            || rematch(owner, target, zero, fixed_col, visited, row_to_col, col_to_row)
        {
            row_to_col[row] = q;
            col_to_row[q] = row;
            return true;
        }
    }
    false
}

/// Minimum-cost assignment of rows to columns.
///
/// Rectangular matrices are padded to square with zeros, so the result pairs
/// up `min(n_rows, n_cols)` rows and columns and leaves the surplus side
/// unmatched. Among equally cheap assignments the lexicographically smallest
/// is returned: rows are compared in ascending order, real columns order
/// before "unmatched".
pub fn hungarian(cost: &CostMatrix) -> Result<Assignment> {
    let a = pad_square(cost);
    let mut sol = solve_square(&a);
    lexicographic_polish(&a, cost.n_rows(), &mut sol);
    Ok(extract(cost, &sol.row_to_col))
}

/// Total cost of a minimum assignment, skipping the tie-breaking pass.
///
/// Same value as [`hungarian`], cheaper on hot paths that never look at the
/// mapping itself.
pub fn hungarian_min_cost(cost: &CostMatrix) -> Result<f64> {
    let a = pad_square(cost);
    let sol = solve_square(&a);
    Ok(extract(cost, &sol.row_to_col).total_cost)
}

fn extract(cost: &CostMatrix, row_to_col: &[usize]) -> Assignment {
    let mut pairs = Vec::with_capacity(cost.n_rows().min(cost.n_cols()));
    let mut total = 0.0;
    for (i, &j) in row_to_col.iter().enumerate().take(cost.n_rows()) {
        if j < cost.n_cols() {
            pairs.push((i, j));
            total += cost.get(i, j);
        }
    }
    Assignment {
        pairs,
        total_cost: total,
    }
}

/// Injective map from observed cluster ids to class ids; `None` marks a
/// cluster assigned to the null set.
pub type ClusterMapping = BTreeMap<usize, Option<usize>>;

/// Contingency counts between observed cluster ids (rows) and class ids
/// (columns), with the sorted distinct ids of each side.
fn contingency(y_true: &[usize], y_pred: &[usize]) -> (Array2<f64>, Vec<usize>, Vec<usize>) {
    let mut cluster_ids: Vec<usize> = y_pred.to_vec();
    cluster_ids.sort_unstable();
    cluster_ids.dedup();
    let mut class_ids: Vec<usize> = y_true.to_vec();
    class_ids.sort_unstable();
    class_ids.dedup();
    let mut counts = Array2::<f64>::zeros((cluster_ids.len(), class_ids.len()));
    for (&t, &p) in y_true.iter().zip(y_pred) {
        let r = cluster_ids.binary_search(&p).expect("observed id");
        let c = class_ids.binary_search(&t).expect("observed id");
        counts[(r, c)] += 1.0;
    }
    (counts, cluster_ids, class_ids)
}

fn check_lengths(y_true: &[usize], y_pred: &[usize]) -> Result<()> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(GcdError::InvalidInput(format!(
            "need equal non-empty label vectors, got {} true and {} predicted",
            y_true.len(),
            y_pred.len()
        )));
    }
    Ok(())
}

/// Best fraction of points whose mapped cluster equals their class, over all
/// injective cluster-to-class mappings, together with the maximizing map.
///
/// Surplus clusters (or classes) fall into the null set and their points
/// count as incorrect.
pub fn clustering_accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<(f64, ClusterMapping)> {
    check_lengths(y_true, y_pred)?;
    let (counts, cluster_ids, class_ids) = contingency(y_true, y_pred);
    let assignment = hungarian(&CostMatrix::new(counts.mapv(|v| -v))?)?;
    let mut mapping: ClusterMapping = cluster_ids.iter().map(|&c| (c, None)).collect();
    let mut matches = 0.0;
    for &(r, c) in &assignment.pairs {
        mapping.insert(cluster_ids[r], Some(class_ids[c]));
        matches += counts[(r, c)];
    }
    Ok((matches / y_true.len() as f64, mapping))
}

/// Accuracy value only, skipping mapping extraction and tie-breaking; used
/// where the score is evaluated in bulk.
pub(crate) fn accuracy_value(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    check_lengths(y_true, y_pred)?;
    let (counts, _, _) = contingency(y_true, y_pred);
    let min_cost = hungarian_min_cost(&CostMatrix::new(counts.mapv(|v| -v))?)?;
    Ok(-min_cost / y_true.len() as f64)
}

/// Point counts behind each accuracy figure in an [`AccReport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetCounts {
    pub all: usize,
    pub old: usize,
    pub new: usize,
}

/// Clustering accuracy over the unlabelled data, decomposed into "Old"
/// classes (those with labels) and "New" classes (the rest), under one
/// shared cluster-to-class mapping.
///
/// An empty subset scores 1.0 and is flagged by its zero count; the weighted
/// identity `acc_all * all = acc_old * old + acc_new * new` holds exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccReport {
    pub acc_all: f64,
    pub acc_old: f64,
    pub acc_new: f64,
    /// Cluster id to class id; `None` is the null set.
    pub mapping: Vec<(usize, Option<usize>)>,
    pub counts: SubsetCounts,
}

/// Evaluates predictions for the unlabelled points of `dataset`, given in
/// point-index order.
///
/// The Hungarian mapping is computed once over all unlabelled points and the
/// Old/New accuracies are fractions under that same mapping; remapping each
/// subset separately would inflate the scores.
pub fn acc_report(dataset: &GcdDataset, y_pred: &[usize]) -> Result<AccReport> {
    let view = dataset.eval_view()?;
    let truth = view.unlabelled_truth();
    if y_pred.len() != truth.len() {
        return Err(GcdError::InvalidInput(format!(
            "got {} predictions for {} unlabelled points",
            y_pred.len(),
            truth.len()
        )));
    }
    let (_, mapping) = clustering_accuracy(&truth, y_pred)?;
    let mut hits_old = 0usize;
    let mut n_old = 0usize;
    let mut hits_new = 0usize;
    let mut n_new = 0usize;
    for (&t, &p) in truth.iter().zip(y_pred) {
        let hit = mapping.get(&p).copied().flatten() == Some(t);
        if view.is_old_class(t) {
            n_old += 1;
            hits_old += hit as usize;
        } else {
            n_new += 1;
            hits_new += hit as usize;
        }
    }
    let frac = |hits: usize, n: usize| if n == 0 { 1.0 } else { hits as f64 / n as f64 };
    Ok(AccReport {
        acc_all: frac(hits_old + hits_new, n_old + n_new),
        acc_old: frac(hits_old, n_old),
        acc_new: frac(hits_new, n_new),
        mapping: mapping.into_iter().collect(),
        counts: SubsetCounts {
            all: n_old + n_new,
            old: n_old,
            new: n_new,
        },
    })
}
