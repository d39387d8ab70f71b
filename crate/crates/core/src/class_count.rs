//! Estimating the number of classes in the unlabelled data.
//!
//! The scoring function clusters the *entire* dataset with plain
//! (unconstrained) k-means and reports clustering accuracy on the labelled
//! points only: too few clusters merge labelled classes, too many shatter
//! them into null-set clusters, so the score peaks near the true class
//! count. The score is treated as a black box and maximized with a
//! Brent-style derivative-free search over a continuous relaxation of k,
//! evaluating only rounded integers (memoized) and polishing the result by
//! local steps so plateaus resolve toward the smallest k.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::accuracy_value;
use crate::clustering::{kmeans_fit, KMeansConfig};
use crate::dataset::GcdDataset;
use crate::error::{GcdError, Result};
use crate::seed::derive_seed;

/// Search-space and budget settings for [`estimate_k`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KSearchConfig {
    /// Smallest k considered; must be at least `max(2, |Y_L|)`.
    pub k_min: usize,
    pub k_max: usize,
    /// Cap on distinct k evaluations; each one is a full k-means run.
    pub max_evals: usize,
    /// k-means restarts averaged into each score; smooths the noise that
    /// would otherwise break the bell shape of the score curve.
    pub restarts_per_eval: usize,
    pub seed: u64,
}

impl KSearchConfig {
    pub fn new(k_min: usize, k_max: usize) -> Self {
        Self {
            k_min,
            k_max,
            max_evals: 25,
            restarts_per_eval: 3,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_evals(mut self, max_evals: usize) -> Self {
        self.max_evals = max_evals;
        self
    }

    pub fn with_restarts_per_eval(mut self, restarts_per_eval: usize) -> Self {
        self.restarts_per_eval = restarts_per_eval;
        self
    }
}

/// Every (k, score) pair a search evaluated, sorted by k, with the argmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KScoreTrace {
    pub evaluations: Vec<(usize, f64)>,
    pub best_k: usize,
    pub best_score: f64,
}

/// Scores one candidate class count: plain k-means over all features, then
/// clustering accuracy restricted to the labelled points, averaged over
/// `restarts` independently seeded fits.
///
/// The labelled points participate in the clustering itself; only the
/// scoring is restricted to them. Per-(k, restart) seeds are derived from
/// the base seed, so scores do not depend on evaluation order.
pub fn score_k(dataset: &GcdDataset, k: usize, restarts: usize, seed: u64) -> Result<f64> {
    if restarts == 0 {
        return Err(GcdError::InvalidConfig(
            "score_k needs at least one restart".into(),
        ));
    }
    if dataset.n_labelled() == 0 {
        return Err(GcdError::EmptySupervision);
    }
    let labelled = dataset.labelled_indices();
    let y_true: Vec<usize> = labelled
        .iter()
        .map(|&i| dataset.train_label(i).expect("labelled index"))
        .collect();
    let scores: Vec<Result<f64>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let config = KMeansConfig::new(k)
                .with_restarts(1)
                .with_seed(derive_seed(seed, "score-k", &[k as u64, r as u64]));
            let model = kmeans_fit(dataset.features(), &config)?;
            let y_pred: Vec<usize> = labelled.iter().map(|&i| model.assignments[i]).collect();
            accuracy_value(&y_true, &y_pred)
        })
        .collect();
    let mut total = 0.0;
    for s in scores {
        total += s?;
    }
    Ok(total / restarts as f64)
}

/// Memoized, budgeted access to the black-box score.
struct Search<F> {
    f: F,
    memo: BTreeMap<usize, f64>,
    budget: usize,
}

impl<F: FnMut(usize) -> Result<f64>> Search<F> {
    /// `Ok(None)` means the evaluation budget is spent; memoized hits are
    /// free and never recomputed.
    fn eval(&mut self, k: usize) -> Result<Option<f64>> {
        if let Some(&s) = self.memo.get(&k) {
            return Ok(Some(s));
        }
        if self.memo.len() >= self.budget {
            return Ok(None);
        }
        let s = (self.f)(k)?;
        if s.is_nan() {
            return Err(GcdError::InvalidInput(format!(
                "scoring function returned NaN at k = {k}"
            )));
        }
        self.memo.insert(k, s);
        Ok(Some(s))
    }

    /// Argmax over everything evaluated; ties go to the smallest k because
    /// the map iterates in ascending order and only strict improvements win.
    fn best(&self) -> (usize, f64) {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (&k, &s) in &self.memo {
            if s > best.1 {
                best = (k, s);
            }
        }
        best
    }
}

fn clamp_round(x: f64, k_min: usize, k_max: usize) -> usize {
    (x.round() as i64).clamp(k_min as i64, k_max as i64) as usize
}

/// Maximizes a black-box score over the integers of `[k_min, k_max]`.
///
/// The continuous relaxation is searched with Brent's method (golden-section
/// bracketing plus parabolic-interpolation steps) applied to the negated
/// score, evaluating only rounded integers through a memo table. The
/// bracketing phase stops once the bracket is narrower than one integer;
/// afterwards the incumbent is polished by greedy unit steps and equal
/// scores are walked down to the smallest k, which keeps plateau ties
/// consistent with an exhaustive scan. Never evaluates outside the range,
/// never evaluates an integer twice, and spends at most `max_evals`
/// evaluations overall.
pub fn brent_maximize<F>(
    f: F,
    k_min: usize,
    k_max: usize,
    max_evals: usize,
) -> Result<KScoreTrace>
where
    F: FnMut(usize) -> Result<f64>,
{
    if k_min >= k_max {
        return Err(GcdError::InvalidConfig(format!(
            "need k_min < k_max, got [{k_min}, {k_max}]"
        )));
    }
    if max_evals < 3 {
        return Err(GcdError::InvalidConfig(format!(
            "max_evals must be at least 3, got {max_evals}"
        )));
    }
    let mut search = Search {
        f,
        memo: BTreeMap::new(),
        budget: max_evals,
    };

    // The interval ends are checked explicitly: the score curve is often
    // monotone up to one boundary, which pure bracketing visits last or
    // not at all.
    search.eval(k_min)?;
    search.eval(k_max)?;

    brent_bracket(&mut search, k_min, k_max)?;

    // Greedy unit polish around the incumbent, then walk ties leftwards so
    // a flat top resolves to its smallest k.
    let (mut best_k, mut best_score) = search.best();
    loop {
        let mut moved = false;
        for next in [best_k + 1, best_k.wrapping_sub(1)] {
            if next < k_min || next > k_max {
                continue;
            }
            if let Some(s) = search.eval(next)? {
                if s > best_score {
                    best_k = next;
                    best_score = s;
                    moved = true;
                    break;
                }
            }
        }
        if !moved {
            break;
        }
    }
    while best_k > k_min {
        match search.eval(best_k - 1)? {
            Some(s) if s >= best_score => {
                best_k -= 1;
                best_score = s;
            }
            _ => break,
        }
    }

    let (best_k, best_score) = search.best();
    Ok(KScoreTrace {
        evaluations: search.memo.into_iter().collect(),
        best_k,
        best_score,
    })
}

/// Golden-section/parabolic bracketing on the negated score, after Brent's
/// localmin. Runs until the bracket holds at most one integer, the
/// evaluation budget is spent, or an iteration cap (the memo can absorb
/// steps without consuming budget).
fn brent_bracket<F: FnMut(usize) -> Result<f64>>(
    search: &mut Search<F>,
    k_min: usize,
    k_max: usize,
) -> Result<()> {
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    const MAX_ITERS: usize = 100;

    let mut a = k_min as f64;
    let mut b = k_max as f64;
    let mut x = a + GOLDEN * (b - a);
    let mut w = x;
    let mut v = x;
    let mut fx = match search.eval(clamp_round(x, k_min, k_max))? {
        Some(s) => -s,
        None => return Ok(()),
    };
    let mut fw = fx;
    let mut fv = fx;
    let mut d = 0.0f64;
    let mut e = 0.0f64;
    let sqrt_eps = f64::EPSILON.sqrt();

    for _ in 0..MAX_ITERS {
        if b - a < 1.0 {
            break;
        }
        let mid = 0.5 * (a + b);
        let tol1 = sqrt_eps * x.abs() + 1e-9;
        let tol2 = 2.0 * tol1;

        // Try a parabolic step through (x, w, v); fall back to golden
        // section when it is unstable or leaves the bracket.
        let mut use_golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if mid > x { tol1 } else { -tol1 };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x < mid { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + tol1 * d.signum()
        };
        let fu = match search.eval(clamp_round(u, k_min, k_max))? {
            Some(s) => -s,
            None => return Ok(()),
        };

        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Ok(())
}

/// Estimates the class count of a dataset by maximizing [`score_k`] over
/// `[k_min, k_max]` and returns the full evaluation trace.
pub fn estimate_k(dataset: &GcdDataset, config: &KSearchConfig) -> Result<KScoreTrace> {
    if dataset.n_labelled() == 0 {
        return Err(GcdError::EmptySupervision);
    }
    let floor = dataset.y_l().len().max(2);
    if config.k_min < floor {
        return Err(GcdError::InvalidConfig(format!(
            "k_min = {} is below max(2, |Y_L|) = {floor}",
            config.k_min
        )));
    }
    if config.k_max < config.k_min {
        return Err(GcdError::InvalidConfig(format!(
            "k_max = {} is below k_min = {}",
            config.k_max, config.k_min
        )));
    }
    if config.k_max > dataset.n_points() {
        return Err(GcdError::InvalidConfig(format!(
            "k_max = {} exceeds the {} available points",
            config.k_max,
            dataset.n_points()
        )));
    }
    if config.restarts_per_eval == 0 {
        return Err(GcdError::InvalidConfig(
            "restarts_per_eval must be at least 1".into(),
        ));
    }
    if config.k_min == config.k_max {
        let s = score_k(dataset, config.k_min, config.restarts_per_eval, config.seed)?;
        return Ok(KScoreTrace {
            evaluations: vec![(config.k_min, s)],
            best_k: config.k_min,
            best_score: s,
        });
    }
    brent_maximize(
        |k| score_k(dataset, k, config.restarts_per_eval, config.seed),
        config.k_min,
        config.k_max,
        config.max_evals,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_blobs, GcdDataset};
    use proptest::prelude::*;
    use std::cell::Cell;

    /// Exhaustive-scan oracle with the same tie rule (smallest k wins).
    fn scan_argmax(values: &[(usize, f64)]) -> (usize, f64) {
        let mut best = (0usize, f64::NEG_INFINITY);
        for &(k, s) in values {
            if s > best.1 {
                best = (k, s);
            }
        }
        best
    }

    /// Wraps a scores-by-k table as the search's black box, counting calls.
    fn table_fn<'a>(
        table: &'a BTreeMap<usize, f64>,
        calls: &'a Cell<usize>,
    ) -> impl FnMut(usize) -> Result<f64> + 'a {
        move |k| {
            calls.set(calls.get() + 1);
            Ok(*table.get(&k).expect("evaluation inside the search range"))
        }
    }

    #[test]
    fn exact_quadratic_lands_on_the_vertex() {
        let table: BTreeMap<usize, f64> =
            (2..=100).map(|k| (k, -((k as f64) - 37.0).powi(2))).collect();
        let calls = Cell::new(0);
        let trace = brent_maximize(table_fn(&table, &calls), 2, 100, 25).unwrap();
        assert_eq!(trace.best_k, 37);
        assert_eq!(trace.best_score, 0.0);
        assert!(calls.get() <= 25, "spent {} evaluations", calls.get());
        // One call per distinct k: the memo absorbed every repeat.
        assert_eq!(calls.get(), trace.evaluations.len());
    }

    #[test]
    fn constant_score_resolves_to_k_min() {
        let table: BTreeMap<usize, f64> = (5..=80).map(|k| (k, 0.5)).collect();
        let calls = Cell::new(0);
        let trace = brent_maximize(table_fn(&table, &calls), 5, 80, 25).unwrap();
        assert_eq!(trace.best_k, 5);
        assert_eq!(trace.best_score, 0.5);
        assert!(calls.get() <= 25);
    }

    #[test]
    fn piecewise_constant_bell_is_resolved_exactly() {
        // Plateaus of width three descending from a unique peak at 20.
        let step = |k: usize| 10.0 - (k.abs_diff(20) as f64 / 3.0).ceil();
        let table: BTreeMap<usize, f64> = (5..=200).map(|k| (k, step(k))).collect();
        let calls = Cell::new(0);
        let trace = brent_maximize(table_fn(&table, &calls), 5, 200, 40).unwrap();
        let oracle: Vec<(usize, f64)> = (5..=200).map(|k| (k, step(k))).collect();
        assert_eq!(trace.best_k, scan_argmax(&oracle).0);
        assert_eq!(trace.best_k, 20);
    }

    #[test]
    fn search_respects_bounds_and_budget() {
        let table: BTreeMap<usize, f64> = (10..=30).map(|k| (k, (k as f64).sin())).collect();
        let calls = Cell::new(0);
        let trace = brent_maximize(table_fn(&table, &calls), 10, 30, 8).unwrap();
        assert!(calls.get() <= 8);
        for &(k, _) in &trace.evaluations {
            assert!((10..=30).contains(&k));
        }
        let (k, s) = scan_argmax(&trace.evaluations);
        assert_eq!((trace.best_k, trace.best_score), (k, s));
    }

    #[test]
    fn degenerate_bounds_are_rejected() {
        assert!(matches!(
            brent_maximize(|_| Ok(0.0), 10, 10, 25),
            Err(GcdError::InvalidConfig(_))
        ));
        assert!(matches!(
            brent_maximize(|_| Ok(0.0), 2, 10, 2),
            Err(GcdError::InvalidConfig(_))
        ));
        assert!(matches!(
            brent_maximize(|_| Ok(f64::NAN), 2, 10, 25),
            Err(GcdError::InvalidInput(_))
        ));
    }

    proptest! {
        /// On unimodal sequences (strict slopes, optional flat top) the
        /// search must agree with the exhaustive scan, including the
        /// smallest-k tie rule on the flat top.
        #[test]
        fn unimodal_sequences_match_exhaustive_scan(
            up in proptest::collection::vec(1u32..6, 0..12),
            down in proptest::collection::vec(1u32..6, 0..12),
            plateau in 0usize..3,
        ) {
            let k_min = 5usize;
            let mut values: Vec<f64> = Vec::new();
            let mut level = 0i64;
            for &d in &up {
                values.push(level as f64);
                level += d as i64;
            }
            for _ in 0..=plateau {
                values.push(level as f64);
            }
            for &d in &down {
                level -= d as i64;
                values.push(level as f64);
            }
            prop_assume!(values.len() >= 2);
            let table: BTreeMap<usize, f64> = values
                .iter()
                .enumerate()
                .map(|(i, &s)| (k_min + i, s))
                .collect();
            let k_max = k_min + values.len() - 1;
            let oracle: Vec<(usize, f64)> = table.iter().map(|(&k, &s)| (k, s)).collect();
            let budget = 2 * values.len() + 10;
            let calls = Cell::new(0);
            let trace = brent_maximize(table_fn(&table, &calls), k_min, k_max, budget).unwrap();
            prop_assert_eq!(trace.best_k, scan_argmax(&oracle).0);
            prop_assert_eq!(calls.get(), trace.evaluations.len());
        }
    }

    /// Four tight, well-separated blobs; every point labelled.
    fn labelled_blobs() -> GcdDataset {
        let (features, labels) = make_blobs(4, 30, 3, 10.0, 0.1, 77).unwrap();
        let n = labels.len();
        GcdDataset::with_ground_truth(features, labels, vec![true; n]).unwrap()
    }

    #[test]
    fn perfectly_separated_blobs_score_one_at_the_true_k() {
        let ds = labelled_blobs();
        let score = score_k(&ds, 4, 2, 123).unwrap();
        assert_eq!(score, 1.0);
    }

    #[test]
    fn single_cluster_scores_the_largest_class_share() {
        let (features, labels) = make_blobs(2, 20, 2, 5.0, 0.5, 3).unwrap();
        let n = labels.len();
        let ds = GcdDataset::with_ground_truth(features, labels, vec![true; n]).unwrap();
        // One cluster can match only one of the two equal-size classes.
        let score = score_k(&ds, 1, 1, 0).unwrap();
        assert_eq!(score, 0.5);
    }

    #[test]
    fn scores_are_deterministic_and_in_range() {
        let ds = labelled_blobs();
        for k in [2, 4, 7] {
            let a = score_k(&ds, k, 3, 9).unwrap();
            let b = score_k(&ds, k, 3, 9).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn estimate_recovers_the_labelled_class_count() {
        let ds = labelled_blobs();
        let config = KSearchConfig::new(4, 12).with_seed(5);
        let trace = estimate_k(&ds, &config).unwrap();
        assert_eq!(trace.best_k, 4);
        assert_eq!(trace.best_score, 1.0);
        let (k, s) = scan_argmax(&trace.evaluations);
        assert_eq!((trace.best_k, trace.best_score), (k, s));
        assert!(trace.evaluations.iter().all(|&(_, s)| (0.0..=1.0).contains(&s)));
    }

    #[test]
    fn equal_bounds_degenerate_to_one_evaluation() {
        let ds = labelled_blobs();
        let config = KSearchConfig::new(4, 4).with_seed(1);
        let trace = estimate_k(&ds, &config).unwrap();
        assert_eq!(trace.evaluations.len(), 1);
        assert_eq!(trace.best_k, 4);
    }

    #[test]
    fn estimate_validates_its_preconditions() {
        let ds = labelled_blobs();
        assert!(matches!(
            estimate_k(&ds, &KSearchConfig::new(2, 12)),
            Err(GcdError::InvalidConfig(_))
        ), "k_min below |Y_L| must be rejected");
        assert!(matches!(
            estimate_k(&ds, &KSearchConfig::new(4, 3)),
            Err(GcdError::InvalidConfig(_))
        ));
        assert!(matches!(
            estimate_k(&ds, &KSearchConfig::new(4, 10_000)),
            Err(GcdError::InvalidConfig(_))
        ));

        let (features, labels) = make_blobs(2, 5, 2, 4.0, 0.5, 0).unwrap();
        let n = labels.len();
        let unlabelled = GcdDataset::from_partial_labels(
            features,
            vec![None; n],
            vec![false; n],
        )
        .unwrap();
        assert!(matches!(
            estimate_k(&unlabelled, &KSearchConfig::new(2, 5)),
            Err(GcdError::EmptySupervision)
        ));
    }
}
