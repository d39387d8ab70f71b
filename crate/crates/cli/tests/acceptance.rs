//! Acceptance checks for the whole toolkit, one per shipped guarantee:
//! exact oracles for the matching and accuracy code, paired benchmark
//! comparisons for the clustering and class-count search, closed-form and
//! finite-difference checks for the losses, and full CLI pipeline runs.
//!
//! Each check prints one `PASS`/`FAIL` line (run with `--nocapture` to see
//! them as they complete); the line is printed before the assertion fires
//! so a red run still says which guarantee broke and by how much.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use gcd_core::dataset::FeatureMatrix;
use gcd_core::error::{FormatError, GcdError};
use gcd_core::io::{
    load_features_binary, load_features_csv, save_features_binary, save_features_csv,
};
use gcd_core::{
    acc_report, clustering_accuracy, derive_seed, estimate_k, generate_split, hungarian,
    kmeans_fit, make_blobs, rng_from, score_k, ss_kmeans_fit, sup_loss, unsup_loss,
    ClassSelection, ContrastiveConfig, CostMatrix, GcdDataset, KMeansConfig, KSearchConfig,
    SplitSpec, ViewBatch,
};
use ndarray::Array2;
use rand::prelude::*;

fn verdict(number: usize, what: &str, pass: bool, detail: &str) {
    println!(
        "check {number} — {what}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
}

/// Calls `f` with every permutation of `0..m`.
fn for_each_permutation(m: usize, f: &mut dyn FnMut(&[usize])) {
    fn go(vals: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
        if k == vals.len() {
            f(vals);
            return;
        }
        for i in k..vals.len() {
            vals.swap(k, i);
            go(vals, k + 1, f);
            vals.swap(k, i);
        }
    }
    go(&mut (0..m).collect::<Vec<usize>>(), 0, f);
}

// ---------------------------------------------------------------------------
// 1. Minimum-cost matching vs brute force over all permutations.
// ---------------------------------------------------------------------------

fn brute_force_min_cost(n: usize, cost: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for_each_permutation(n, &mut |perm| {
        let total: f64 = (0..n).map(|row| cost[row * n + perm[row]]).sum();
        if total < best {
            best = total;
        }
    });
    best
}

#[test]
fn matching_equals_brute_force_on_small_square_costs() {
    let start = Instant::now();
    let mut rng = rng_from(derive_seed(11, "acceptance-matching", &[]));
    let mut failure = None;
    for case in 0..500 {
        let n = rng.random_range(1..=7usize);
        // Integer-valued entries keep every permutation total exact in f64,
        // so "equals" below means bit equality, not a tolerance.
        let data: Vec<f64> = (0..n * n)
            .map(|_| rng.random_range(-50..=50i32) as f64)
            .collect();
        let cost = CostMatrix::from_rows(n, n, data.clone()).unwrap();
        let solved = hungarian(&cost).unwrap();

        let mut row_seen = vec![false; n];
        let mut col_seen = vec![false; n];
        let mut pair_total = 0.0;
        for &(r, c) in &solved.pairs {
            row_seen[r] = true;
            col_seen[c] = true;
            pair_total += data[r * n + c];
        }
        let valid = row_seen.iter().all(|&s| s) && col_seen.iter().all(|&s| s);

        let oracle = brute_force_min_cost(n, &data);
        if !valid || solved.total_cost != oracle || pair_total != solved.total_cost {
            failure = Some(format!(
                "case {case} (n = {n}): got {} from pairs summing to {pair_total}, brute force {oracle}",
                solved.total_cost
            ));
            break;
        }
    }
    let elapsed = start.elapsed();
    let in_time = elapsed < Duration::from_secs(10);
    let pass = failure.is_none() && in_time;
    verdict(
        1,
        "matching equals brute force on 500 random squares (n <= 7)",
        pass,
        &format!(
            "{} in {:.2?}",
            failure.clone().unwrap_or_else(|| "all exact".into()),
            elapsed
        ),
    );
    assert!(pass, "{:?}, in_time = {in_time}", failure);
}

// ---------------------------------------------------------------------------
// 2. Matched clustering accuracy vs exhaustive search over all mappings.
// ---------------------------------------------------------------------------

fn exhaustive_accuracy(y_true: &[usize], y_pred: &[usize]) -> f64 {
    let n_classes = y_true.iter().max().unwrap() + 1;
    let n_clusters = y_pred.iter().max().unwrap() + 1;
    // Pad to a square so unmatched clusters or classes pair with a
    // zero-count column, which is exactly the null-set convention.
    let m = n_classes.max(n_clusters);
    let mut counts = vec![0usize; m * m];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        counts[p * m + t] += 1;
    }
    let mut best = 0usize;
    for_each_permutation(m, &mut |perm| {
        let matched: usize = (0..m).map(|cluster| counts[cluster * m + perm[cluster]]).sum();
        if matched > best {
            best = matched;
        }
    });
    best as f64 / y_true.len() as f64
}

#[test]
fn matched_accuracy_equals_exhaustive_mapping_search() {
    let mut rng = rng_from(derive_seed(12, "acceptance-accuracy", &[]));
    let mut failure = None;
    for case in 0..200 {
        let n_classes = rng.random_range(1..=6usize);
        let n_clusters = rng.random_range(1..=6usize);
        let n = rng.random_range(5..=60usize);
        let y_true: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_classes)).collect();
        let y_pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_clusters)).collect();

        let (acc, _) = clustering_accuracy(&y_true, &y_pred).unwrap();
        let oracle = exhaustive_accuracy(&y_true, &y_pred);
        if (acc - oracle).abs() > 1e-12 {
            failure = Some(format!("case {case}: got {acc}, exhaustive {oracle}"));
            break;
        }

        // Relabelling the points (jointly) must not change the score at all.
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let shuffled_true: Vec<usize> = order.iter().map(|&i| y_true[i]).collect();
        let shuffled_pred: Vec<usize> = order.iter().map(|&i| y_pred[i]).collect();
        let (shuffled_acc, _) = clustering_accuracy(&shuffled_true, &shuffled_pred).unwrap();
        if shuffled_acc != acc {
            failure = Some(format!(
                "case {case}: accuracy changed under point permutation ({acc} -> {shuffled_acc})"
            ));
            break;
        }
    }
    let pass = failure.is_none();
    verdict(
        2,
        "matched accuracy equals exhaustive mapping search on 200 random pairs",
        pass,
        &failure.clone().unwrap_or_else(|| "all exact, permutation-invariant".into()),
    );
    assert!(pass, "{:?}", failure);
}

// ---------------------------------------------------------------------------
// 3 + 4. Pinned clustering on the separable benchmark, shared across the two
// checks so the 50 paired fits run once.
// ---------------------------------------------------------------------------

struct BenchmarkRuns {
    pin_violations: usize,
    pinned_mean_acc: f64,
    plain_mean_acc: f64,
    /// (seed, model name, inertia after each assignment pass).
    histories: Vec<(u64, &'static str, Vec<f64>)>,
    elapsed: Duration,
}

fn benchmark_runs() -> &'static BenchmarkRuns {
    static RUNS: OnceLock<BenchmarkRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let mut pin_violations = 0;
        let mut pinned_total = 0.0;
        let mut plain_total = 0.0;
        let mut histories = Vec::new();
        for seed in 0..50u64 {
            let (features, labels) =
                make_blobs(20, 50, 16, 8.0, 1.0, derive_seed(31, "acceptance-blobs", &[seed]))
                    .unwrap();
            let split = generate_split(
                &labels,
                &SplitSpec {
                    labelled_class_fraction: 0.5,
                    labelled_image_fraction: 0.5,
                    class_selection: ClassSelection::FirstIndices,
                    seed: derive_seed(31, "acceptance-split", &[seed]),
                },
            )
            .unwrap();
            let dataset =
                GcdDataset::with_ground_truth(features, labels.clone(), split.labelled_mask.clone())
                    .unwrap();

            let config = KMeansConfig::new(20)
                .with_restarts(5)
                .with_seed(derive_seed(31, "acceptance-fit", &[seed]));
            let pinned = ss_kmeans_fit(&dataset, &config).unwrap();
            let plain = kmeans_fit(dataset.features(), &config).unwrap();

            // A labelled point's cluster id is the rank of its class among
            // the labelled classes (ascending class id).
            let classes: Vec<usize> = dataset.y_l().iter().copied().collect();
            for i in 0..labels.len() {
                if split.labelled_mask[i] {
                    let expected = classes.binary_search(&labels[i]).unwrap();
                    if pinned.assignments[i] != expected {
                        pin_violations += 1;
                    }
                }
            }

            let unlabelled: Vec<usize> = dataset.unlabelled_indices();
            let pinned_pred: Vec<usize> =
                unlabelled.iter().map(|&i| pinned.assignments[i]).collect();
            let plain_pred: Vec<usize> =
                unlabelled.iter().map(|&i| plain.assignments[i]).collect();
            pinned_total += acc_report(&dataset, &pinned_pred).unwrap().acc_all;
            plain_total += acc_report(&dataset, &plain_pred).unwrap().acc_all;

            histories.push((seed, "semi-sup", pinned.inertia_history.clone()));
            histories.push((seed, "plain", plain.inertia_history.clone()));
        }
        BenchmarkRuns {
            pin_violations,
            pinned_mean_acc: pinned_total / 50.0,
            plain_mean_acc: plain_total / 50.0,
            histories,
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn pinned_clustering_keeps_labels_and_beats_plain_kmeans() {
    let runs = benchmark_runs();
    let in_time = runs.elapsed < Duration::from_secs(120);
    let pass = runs.pin_violations == 0
        && runs.pinned_mean_acc >= runs.plain_mean_acc
        && in_time;
    verdict(
        3,
        "labelled points stay pinned and mean accuracy >= plain k-means (50 runs)",
        pass,
        &format!(
            "pin violations {}, mean acc {:.4} vs {:.4}, {:.2?}",
            runs.pin_violations, runs.pinned_mean_acc, runs.plain_mean_acc, runs.elapsed
        ),
    );
    assert!(
        pass,
        "violations = {}, pinned = {}, plain = {}, in_time = {in_time}",
        runs.pin_violations, runs.pinned_mean_acc, runs.plain_mean_acc
    );
}

#[test]
fn inertia_never_increases_between_iterations() {
    let runs = benchmark_runs();
    let mut failure = None;
    'outer: for (seed, name, history) in &runs.histories {
        for pair in history.windows(2) {
            if pair[1] > pair[0] {
                failure = Some(format!(
                    "seed {seed} ({name}): inertia rose {} -> {}",
                    pair[0], pair[1]
                ));
                break 'outer;
            }
        }
    }
    let pass = failure.is_none();
    verdict(
        4,
        "inertia is non-increasing at every iteration of all 100 fits",
        pass,
        &failure.clone().unwrap_or_else(|| "monotone throughout".into()),
    );
    assert!(pass, "{:?}", failure);
}

// ---------------------------------------------------------------------------
// 5. Class-count search vs exhaustive integer scan.
// ---------------------------------------------------------------------------

/// KNOWN RED. The labelled-subset score cannot peak reliably at the true
/// class count on well-separated blobs with half the classes unlabelled:
/// a fit at k < 20 that merges only unlabelled blobs keeps every labelled
/// point correct, so the curve ties with its peak left of 20 on roughly
/// half the seeds, and single-fit scoring noise hedges the argmax right of
/// 20 (surplus centroids absorb seeding misses). Measured across scoring
/// variants the argmax lands in [19, 21] on only 2-6 of 10 seeds, and the
/// search cannot match a full-scan argmax hiding in plateau noise it never
/// sampled. The check states the intended guarantee and reports the
/// honest measurement; see the search's own unimodal-input property tests
/// for the guarantee that does hold.
#[test]
fn class_count_search_matches_full_scan_and_curve_is_bell_shaped() {
    let start = Instant::now();
    let (k_min, k_max) = (10usize, 60usize);
    let mut in_window = 0;
    let mut argmax_matches = 0;
    let mut bell_shaped = 0;
    let mut outcomes = Vec::new();
    for seed in 0..10u64 {
        let (features, labels) =
            make_blobs(20, 50, 16, 8.0, 1.0, derive_seed(51, "acceptance-blobs", &[seed])).unwrap();
        let split = generate_split(
            &labels,
            &SplitSpec {
                labelled_class_fraction: 0.5,
                labelled_image_fraction: 0.5,
                class_selection: ClassSelection::FirstIndices,
                seed: derive_seed(51, "acceptance-split", &[seed]),
            },
        )
        .unwrap();
        let dataset =
            GcdDataset::with_ground_truth(features, labels, split.labelled_mask).unwrap();

        let search_seed = derive_seed(51, "acceptance-search", &[seed]);
        let config = KSearchConfig::new(k_min, k_max)
            .with_seed(search_seed)
            .with_max_evals(60)
            .with_restarts_per_eval(3);
        let trace = estimate_k(&dataset, &config).unwrap();

        // The scan feeds score_k the same seed, so any k the search visited
        // gets the identical score and "equals" is exact.
        let scan: Vec<f64> = (k_min..=k_max)
            .map(|k| score_k(&dataset, k, 3, search_seed).unwrap())
            .collect();
        let mut scan_best = k_min;
        for k in k_min..=k_max {
            if scan[k - k_min] > scan[scan_best - k_min] {
                scan_best = k;
            }
        }

        if trace.best_k == scan_best {
            argmax_matches += 1;
        }
        if (19..=21).contains(&trace.best_k) {
            in_window += 1;
        }

        // "Bell-shaped": a clear interior peak, both edges well below it,
        // and nothing far from the peak comes close to it.
        let peak = scan[scan_best - k_min];
        let off_peak_near_max = (k_min..=k_max)
            .any(|k| k.abs_diff(scan_best) > 10 && scan[k - k_min] > peak - 0.02);
        if scan[0] <= peak - 0.1 && scan[k_max - k_min] <= peak - 0.1 && !off_peak_near_max {
            bell_shaped += 1;
        }

        outcomes.push(format!("s{seed}: {}|{scan_best}", trace.best_k));
    }
    let elapsed = start.elapsed();
    let in_time = elapsed < Duration::from_secs(300);
    let pass = argmax_matches == 10 && in_window >= 9 && bell_shaped == 10 && in_time;
    verdict(
        5,
        "class-count search equals the full scan and lands within +/-1 of 20",
        pass,
        &format!(
            "search==scan {argmax_matches}/10, in [19, 21] {in_window}/10 (need 9), \
             bell-shaped {bell_shaped}/10, search|scan per seed [{}], {elapsed:.2?}",
            outcomes.join(", ")
        ),
    );
    assert!(
        pass,
        "argmax_matches = {argmax_matches}/10, in_window = {in_window}/10, \
         bell_shaped = {bell_shaped}/10, in_time = {in_time}; {outcomes:?}"
    );
}

// ---------------------------------------------------------------------------
// 6. Closed-form loss value on uniform batches and temperature rescaling.
// ---------------------------------------------------------------------------

#[test]
fn uniform_batches_hit_the_closed_form_and_rescaling_is_exact() {
    let config = ContrastiveConfig::default();
    let mut worst = 0.0f64;
    // When every projection is the same vector, each anchor's loss reduces
    // to log(R - 1) where R is the number of rows in the batch.
    for n_images in [2usize, 4, 32, 128] {
        let rows = 2 * n_images;
        let z = Array2::from_elem((rows, 5), 0.3);
        let labels = vec![Some(0usize); n_images];
        let batch = ViewBatch::from_interleaved(z, labels).unwrap();
        let expected = ((rows - 1) as f64).ln();

        let (unsup_mean, per_anchor) = unsup_loss(&batch, &config).unwrap();
        let sup = sup_loss(&batch, &config).unwrap();
        for value in per_anchor
            .iter()
            .chain(sup.per_anchor.iter().map(|(_, v)| v))
            .chain([&unsup_mean, &sup.mean])
        {
            worst = worst.max((value - expected).abs() / expected);
        }
    }
    let closed_form_ok = worst <= 1e-12;

    // Dividing every projection by sqrt(c) while dividing tau by c leaves
    // all pairwise scores, hence both losses, unchanged.
    let mut rng = rng_from(derive_seed(61, "acceptance-rescale", &[]));
    let z = Array2::from_shape_fn((16, 8), |_| rng.random_range(-1.0..1.0));
    let labels = vec![Some(0), Some(1), None, Some(0), None, Some(1), Some(2), None];
    let batch = ViewBatch::from_interleaved(z.clone(), labels.clone()).unwrap();
    let c = 2.5f64;
    let scaled = ViewBatch::from_interleaved(z.mapv(|v| v / c.sqrt()), labels).unwrap();
    let base = ContrastiveConfig { tau: c * 0.4, ..ContrastiveConfig::default() };
    let small = ContrastiveConfig { tau: 0.4, ..ContrastiveConfig::default() };
    let (u_base, _) = unsup_loss(&batch, &base).unwrap();
    let (u_scaled, _) = unsup_loss(&scaled, &small).unwrap();
    let s_base = sup_loss(&batch, &base).unwrap().mean;
    let s_scaled = sup_loss(&scaled, &small).unwrap().mean;
    let rescale_err = ((u_base - u_scaled).abs() / u_base.abs())
        .max((s_base - s_scaled).abs() / s_base.abs());
    let rescaling_ok = rescale_err <= 1e-12;

    let pass = closed_form_ok && rescaling_ok;
    verdict(
        6,
        "uniform batches give log(rows - 1) and temperature rescaling is exact",
        pass,
        &format!("closed-form rel err {worst:.2e}, rescaling rel err {rescale_err:.2e}"),
    );
    assert!(pass, "closed form {worst:.3e}, rescaling {rescale_err:.3e}");
}

// ---------------------------------------------------------------------------
// 7. Analytic gradients vs finite differences, through the CLI.
// ---------------------------------------------------------------------------

#[test]
fn analytic_gradients_match_finite_differences() {
    let output = Command::new(env!("CARGO_BIN_EXE_gcd"))
        .args(["loss-check", "--batches", "50", "--seed", "1"])
        .output()
        .expect("run gcd loss-check");
    let stdout = String::from_utf8_lossy(&output.stdout);
    let pass = output.status.success() && stdout.contains("PASS");
    verdict(
        7,
        "gradients match finite differences on 50 random batches",
        pass,
        stdout.trim(),
    );
    assert!(
        pass,
        "status {:?}, stdout: {stdout}, stderr: {}",
        output.status,
        String::from_utf8_lossy(&output.stderr)
    );
}

// ---------------------------------------------------------------------------
// 8. The full CLI pipeline: deterministic and no worse after training.
// ---------------------------------------------------------------------------

fn run_gcd(root: &Path, args: &[&str]) {
    let output = Command::new(env!("CARGO_BIN_EXE_gcd"))
        .args(args)
        .current_dir(root)
        .output()
        .expect("run gcd");
    assert!(
        output.status.success(),
        "gcd {:?} failed: {}",
        args,
        String::from_utf8_lossy(&output.stderr)
    );
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).expect("read json")).expect("parse json")
}

/// Runs the whole pipeline under `root` and returns (pre, post, eval)
/// accuracies plus the estimated class count.
fn run_pipeline(root: &Path) -> (f64, f64, f64, u64) {
    run_gcd(
        root,
        &[
            "gen-data", "--classes", "20", "--per-class", "50", "--dim", "16", "--sep", "8",
            "--spread", "1", "--seed", "7", "--out", "data",
        ],
    );
    run_gcd(
        root,
        &[
            "split", "--features", "data/features.gcdf", "--class-fraction", "0.5",
            "--image-fraction", "0.5", "--selection", "first-indices", "--seed", "7", "--out",
            "data",
        ],
    );
    run_gcd(
        root,
        &[
            "cluster", "--features", "data/features.gcdf", "--labels", "data/labels.csv",
            "--mode", "semi-sup", "--k", "20", "--seed", "7", "--out", "pre",
        ],
    );
    run_gcd(
        root,
        &[
            "train-toy", "--features", "data/features.gcdf", "--labels", "data/labels.csv",
            "--epochs", "80", "--batch-images", "64", "--lr", "0.05", "--tau", "0.5",
            "--lambda", "0.5", "--hidden", "128", "--proj-dim", "64", "--seed", "7", "--out",
            "train",
        ],
    );
    run_gcd(
        root,
        &[
            "cluster", "--features", "data/features.gcdf", "--labels", "data/labels.csv",
            "--mode", "semi-sup", "--k", "20", "--head", "train/head.gcdh", "--seed", "7",
            "--out", "post",
        ],
    );
    run_gcd(
        root,
        &[
            "estimate-k", "--features", "data/features.gcdf", "--labels", "data/labels.csv",
            "--k-min", "10", "--k-max", "30", "--seed", "7", "--out", "est",
        ],
    );
    run_gcd(
        root,
        &[
            "eval", "--features", "data/features.gcdf", "--labels", "data/labels.csv",
            "--assignments", "post/assignments.csv", "--seed", "7", "--out", "eval",
        ],
    );
    let acc = |dir: &str| read_json(&root.join(dir).join("report.json"))["report"]["acc_all"]
        .as_f64()
        .expect("acc_all");
    let best_k = read_json(&root.join("est").join("estimate.json"))["best_k"]
        .as_u64()
        .expect("best_k");
    (acc("pre"), acc("post"), acc("eval"), best_k)
}

#[test]
fn cli_pipeline_is_deterministic_and_training_does_not_hurt() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let (pre, post, evald, best_k) = run_pipeline(first.path());
    let (pre2, post2, _, _) = run_pipeline(second.path());

    // Standalone *.manifest.json files carry wall-clock timings and are the
    // only artifacts allowed to differ between identical runs.
    let compared = [
        "data/features.gcdf",
        "data/labels.csv",
        "pre/assignments.csv",
        "pre/report.json",
        "train/head.gcdh",
        "train/loss_curve.csv",
        "post/assignments.csv",
        "post/report.json",
        "est/k_scores.csv",
        "est/estimate.json",
        "eval/report.json",
    ];
    let mut differing = Vec::new();
    for rel in compared {
        let a = std::fs::read(first.path().join(rel)).expect(rel);
        let b = std::fs::read(second.path().join(rel)).expect(rel);
        if a != b {
            differing.push(rel);
        }
    }

    let pass = differing.is_empty()
        && post >= pre
        && evald == post
        && (19..=21).contains(&best_k)
        && pre == pre2
        && post == post2;
    verdict(
        8,
        "end-to-end pipeline reruns byte-identical and training does not hurt",
        pass,
        &format!(
            "acc pre {pre:.4} -> post {post:.4}, estimated k = {best_k}, {} file(s) differ",
            differing.len()
        ),
    );
    assert!(
        pass,
        "pre = {pre}/{pre2}, post = {post}/{post2}, eval = {evald}, best_k = {best_k}, differing = {differing:?}"
    );
}

// ---------------------------------------------------------------------------
// 9. Binary format roundtrip and malformed-input handling.
// ---------------------------------------------------------------------------

#[test]
fn feature_files_roundtrip_and_malformed_inputs_fail_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let mut problems: Vec<String> = Vec::new();

    // Byte-identical roundtrip: save, load, save again, compare bytes.
    // Quarter-integer values are exactly representable in the f32 payload.
    let matrix = FeatureMatrix::from_rows(
        4,
        3,
        (0..12).map(|i| (i as f64 - 5.0) * 0.25).collect(),
    )
    .unwrap();
    let labels = vec![-1i64, 0, 7, 2];
    let first = dir.path().join("first.gcdf");
    let second = dir.path().join("second.gcdf");
    save_features_binary(&first, &matrix, Some(&labels)).unwrap();
    let (loaded, loaded_labels) = load_features_binary(&first).unwrap();
    save_features_binary(&second, &loaded, loaded_labels.as_deref()).unwrap();
    let bytes = std::fs::read(&first).unwrap();
    if bytes != std::fs::read(&second).unwrap() {
        problems.push("binary roundtrip changed bytes".into());
    }

    // Each corruption must surface as its named format error.
    let reload = |name: &str, mutate: &dyn Fn(&mut Vec<u8>)| {
        let path = dir.path().join(name);
        let mut copy = bytes.clone();
        mutate(&mut copy);
        std::fs::write(&path, &copy).unwrap();
        load_features_binary(&path)
    };
    let cases: Vec<(&str, Box<dyn Fn(&mut Vec<u8>)>, fn(&FormatError) -> bool)> = vec![
        (
            "bad-magic",
            Box::new(|b: &mut Vec<u8>| b[0] = b'X'),
            |e| matches!(e, FormatError::BadMagic { .. }),
        ),
        (
            "bad-version",
            Box::new(|b: &mut Vec<u8>| b[4] = 9),
            |e| matches!(e, FormatError::UnsupportedVersion { found: 9, .. }),
        ),
        (
            "truncated",
            Box::new(|b: &mut Vec<u8>| b.truncate(b.len() - 40)),
            |e| matches!(e, FormatError::Truncated { .. }),
        ),
        (
            "trailing",
            Box::new(|b: &mut Vec<u8>| b.push(0)),
            |e| matches!(e, FormatError::BadValue { .. }),
        ),
        (
            "bad-label-flag",
            Box::new(|b: &mut Vec<u8>| {
                let flag = 18 + 12 * 4;
                b[flag] = 3;
            }),
            |e| matches!(e, FormatError::BadValue { .. }),
        ),
        (
            "nan-payload",
            Box::new(|b: &mut Vec<u8>| {
                b[18..22].copy_from_slice(&f32::NAN.to_le_bytes());
            }),
            |e| matches!(e, FormatError::NonFinite { .. }),
        ),
    ];
    for (name, mutate, expected) in &cases {
        match reload(name, mutate.as_ref()) {
            Err(GcdError::Format(e)) if expected(&e) => {}
            other => problems.push(format!(
                "{name}: wanted its named format error, got {other:?}"
            )),
        }
    }

    // The declared-shape-vs-payload mismatch: a 3x2 header with only 5 floats.
    let short = dir.path().join("short.gcdf");
    let mut header = Vec::new();
    header.extend_from_slice(b"GCDF");
    header.extend_from_slice(&1u16.to_le_bytes());
    header.extend_from_slice(&3u64.to_le_bytes());
    header.extend_from_slice(&2u32.to_le_bytes());
    for v in [1.0f32, 2.0, 3.0, 4.0, 5.0] {
        header.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(&short, &header).unwrap();
    match load_features_binary(&short) {
        Err(GcdError::Format(FormatError::Truncated { .. })) => {}
        other => problems.push(format!("5-of-6 floats: wanted Truncated, got {other:?}")),
    }

    // CSV: a literal "nan" is rejected by value, not parse failure.
    let nan_csv = dir.path().join("nan.csv");
    std::fs::write(&nan_csv, "dim=2\n1.0,nan\n").unwrap();
    match load_features_csv(&nan_csv) {
        Err(GcdError::Format(FormatError::NonFinite { .. })) => {}
        other => problems.push(format!("csv nan: wanted NonFinite, got {other:?}")),
    }

    // CSV: wrong arity and a non-numeric field each get their own error.
    let ragged = dir.path().join("ragged.csv");
    std::fs::write(&ragged, "dim=3\n1.0,2.0,3.0\n1.0,2.0\n").unwrap();
    match load_features_csv(&ragged) {
        Err(GcdError::Format(FormatError::RowLengthMismatch { line: 3, .. })) => {}
        other => problems.push(format!("ragged csv: wanted RowLengthMismatch, got {other:?}")),
    }
    let garbled = dir.path().join("garbled.csv");
    std::fs::write(&garbled, "dim=2\n1.0,two\n").unwrap();
    match load_features_csv(&garbled) {
        Err(GcdError::Format(FormatError::BadField { .. })) => {}
        other => problems.push(format!("garbled csv: wanted BadField, got {other:?}")),
    }

    // CSV roundtrip with labels for completeness of the text path.
    let csv = dir.path().join("round.csv");
    save_features_csv(&csv, &matrix, Some(&labels)).unwrap();
    let (csv_matrix, csv_labels) = load_features_csv(&csv).unwrap();
    if csv_matrix != matrix || csv_labels.as_deref() != Some(labels.as_slice()) {
        problems.push("csv roundtrip changed values".into());
    }

    let pass = problems.is_empty();
    verdict(
        9,
        "binary roundtrip is byte-identical and malformed inputs fail by name",
        pass,
        &if pass {
            "roundtrip exact, 10 malformed cases named".to_string()
        } else {
            problems.join("; ")
        },
    );
    assert!(pass, "{problems:?}");
}
