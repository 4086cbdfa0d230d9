//! Acceptance gate. Each test pins one end-to-end guarantee of the crate at
//! a stated tolerance and time budget and prints the measured numbers; run
//! with `--nocapture` to see them on success.

use std::collections::BTreeSet;
use std::time::Instant;

use kacl::bench::{run_scaling_bench, BenchConfig};
use kacl::dataset::{default_weak_labels, generate_synthetic, planted_partner_graph, split};
use kacl::eval::{evaluate, predict_dataset};
use kacl::kgraph::{rwr_from, KnowledgeGraph};
use kacl::train::{feature_cost, knowledge_cost, train, train_feature_only};
use kacl::{
    ConceptId, ConsistencyMatrix, ModelKind, ModelParams, RwrConfig, SynthConfig, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn sparse_and_pairwise_quadratic_routes_agree() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let size = [2usize, 10, 50][case % 3];
        let mut triples = Vec::new();
        for i in 0..size {
            for j in i + 1..size {
                if rng.random::<f64>() < 0.3 {
                    triples.push((i, j, rng.random_range(0.001..=1.0)));
                }
            }
        }
        if triples.is_empty() {
            triples.push((0, 1, 0.7));
        }
        let matrix = ConsistencyMatrix::from_entries(size, triples).unwrap();
        let p: Vec<f64> = (0..size).map(|_| rng.random()).collect();
        let sparse = matrix.laplacian_quadratic(&p).unwrap();
        let dense = matrix.pairwise_quadratic(&p).unwrap();
        let gap = (sparse - dense).abs();
        worst = worst.max(gap);
        assert!(gap < 1e-10, "case {case} (L = {size}): routes disagree by {gap:e}");
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "quadratic route comparison took {elapsed:.2}s, budget 1s");
    println!("PASS quadratic routes agree: worst gap {worst:.3e} over 100 cases, {elapsed:.3}s");
}

#[test]
fn combined_objective_gradient_matches_central_differences() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut checked = 0usize;
    let mut skipped = 0usize;
    for case in 0..100 {
        let kind =
            if case % 2 == 0 { ModelKind::Logistic } else { ModelKind::MixtureOfExperts };
        let num_labels = rng.random_range(2..=6);
        let dim = rng.random_range(2..=8);
        let mut triples = Vec::new();
        for i in 0..num_labels {
            for j in i + 1..num_labels {
                if rng.random::<f64>() < 0.5 {
                    triples.push((i, j, rng.random_range(0.1..=1.0)));
                }
            }
        }
        if triples.is_empty() {
            triples.push((0, 1, 0.7));
        }
        let matrix = ConsistencyMatrix::from_entries(num_labels, triples).unwrap();
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let truth: BTreeSet<usize> =
            (0..num_labels).filter(|_| rng.random::<f64>() < 0.4).collect();
        let lambda = rng.random_range(0.05..0.5);
        let epsilon = 1e-12;

        let mut params = ModelParams::init(kind, num_labels, dim, 2, 1000 + case as u64).unwrap();
        params.visit_mut(|value| *value += rng.random_range(-0.5..0.5));

        let forward = params.forward(&x).unwrap();
        // The square root flattens near a zero quadratic, where central
        // differences lose their accuracy; such draws are not informative.
        if matrix.laplacian_quadratic(&forward.probabilities).unwrap() <= 1e-6 {
            skipped += 1;
            continue;
        }

        let (_, feature_grad) = feature_cost(&forward.probabilities, &truth);
        let (_, knowledge_grad) =
            knowledge_cost(&matrix, &forward.probabilities, lambda, epsilon).unwrap();
        let upstream: Vec<f64> =
            feature_grad.iter().zip(&knowledge_grad).map(|(a, b)| a + b).collect();
        let mut grad = params.zeros_like();
        params.accumulate_backward(&x, &forward, &upstream, &mut grad).unwrap();
        let mut analytic = Vec::new();
        grad.visit(|value| analytic.push(value));

        let objective = |candidate: &ModelParams| -> f64 {
            let out = candidate.forward(&x).unwrap();
            let (c, _) = feature_cost(&out.probabilities, &truth);
            let (k, _) = knowledge_cost(&matrix, &out.probabilities, lambda, epsilon).unwrap();
            c + k
        };
        let h = 1e-6;
        for (index, &exact) in analytic.iter().enumerate() {
            let up = objective(&nudged(&params, index, h));
            let down = objective(&nudged(&params, index, -h));
            let numeric = (up - down) / (2.0 * h);
            let scale = numeric.abs().max(exact.abs()).max(1e-7);
            assert!(
                (numeric - exact).abs() / scale < 1e-4,
                "case {case} ({kind:?}, L = {num_labels}, F = {dim}) param {index}: \
                 analytic {exact} vs numeric {numeric}"
            );
        }
        checked += 1;
    }
    assert!(checked >= 90, "only {checked}/100 draws had a usable quadratic");
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "gradient comparison took {elapsed:.2}s, budget 10s");
    println!(
        "PASS parameter gradients match central differences: \
         {checked} checked, {skipped} flat draws skipped, {elapsed:.2}s"
    );
}

#[test]
fn knowledge_coupled_training_lifts_test_map() {
    let started = Instant::now();
    let weak = default_weak_labels(50);
    let graph: ConsistencyMatrix = planted_partner_graph(50, &weak, 1.0, 0.2, 2, 77).unwrap();
    let mut gains = Vec::new();
    for seed in 1..=5u64 {
        let mut synth = SynthConfig::new(50, 32, 4_000, graph.clone());
        synth.seed = 1000 * seed + 1;
        let (dataset, matrix) = generate_synthetic(&synth).unwrap();
        let (train_set, test_set) = split(dataset, 0.5, 1000 * seed + 2).unwrap();
        assert_eq!(train_set.len(), 2_000);
        assert_eq!(test_set.len(), 2_000);
        let truths: Vec<BTreeSet<usize>> =
            test_set.instances.iter().map(|v| v.labels.clone()).collect();

        let mut config = TrainConfig {
            learning_rate: 0.1,
            epochs: 15,
            batch_size: 256,
            seed: 1000 * seed + 3,
            ..TrainConfig::default()
        };
        config.lambda = 0.01;
        let (coupled, _) = train(ModelKind::Logistic, &train_set, &matrix, &config).unwrap();
        config.lambda = 0.0;
        let (feature_only, _) =
            train(ModelKind::Logistic, &train_set, &matrix, &config).unwrap();

        let coupled_map =
            evaluate(&predict_dataset(&coupled, &test_set).unwrap(), &truths, 20).unwrap().map;
        let baseline_map =
            evaluate(&predict_dataset(&feature_only, &test_set).unwrap(), &truths, 20)
                .unwrap()
                .map;
        gains.push(coupled_map - baseline_map);
    }
    let wins = gains.iter().filter(|&&g| g > 0.0).count();
    let mean_gain = gains.iter().sum::<f64>() / gains.len() as f64;
    assert!(wins >= 4, "consistency term won only {wins}/5 seeds: {gains:?}");
    assert!(mean_gain >= 0.01, "mean test MAP gain {mean_gain:+.4} under +0.01: {gains:?}");
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "gain experiment took {elapsed:.1}s, budget 300s");
    println!(
        "PASS knowledge gain: mean {mean_gain:+.4} MAP over 5 seeds, {wins}/5 wins, {elapsed:.1}s"
    );
}

#[test]
fn lambda_zero_training_is_bit_identical_to_the_feature_only_loop() {
    let started = Instant::now();
    let weak = default_weak_labels(20);
    let graph: ConsistencyMatrix = planted_partner_graph(20, &weak, 1.0, 0.2, 2, 5).unwrap();
    let mut synth = SynthConfig::new(20, 16, 600, graph);
    synth.seed = 31;
    let (dataset, matrix) = generate_synthetic(&synth).unwrap();
    for kind in [ModelKind::Logistic, ModelKind::MixtureOfExperts] {
        let config = TrainConfig {
            lambda: 0.0,
            learning_rate: 0.1,
            epochs: 3,
            batch_size: 128,
            seed: 9,
            ..TrainConfig::default()
        };
        let (with_matrix, _) = train(kind, &dataset, &matrix, &config).unwrap();
        let (pure, _) = train_feature_only(kind, &dataset, &config).unwrap();
        let mut left = Vec::new();
        with_matrix.visit(|value| left.push(value.to_bits()));
        let mut right = Vec::new();
        pure.visit(|value| right.push(value.to_bits()));
        assert_eq!(left, right, "{kind:?} parameters diverge at lambda zero");
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "bit-identity check took {elapsed:.1}s, budget 60s");
    println!("PASS lambda-zero training is bit-identical for both heads, {elapsed:.2}s");
}

#[test]
fn restart_walk_matches_a_direct_linear_solve() {
    let started = Instant::now();
    let config = RwrConfig { tolerance: 1e-12, max_iterations: 10_000, ..RwrConfig::default() };

    // Two nodes joined by one edge, from the first node.
    let pair = KnowledgeGraph::from_edges(vec![("x", "y")]).unwrap();
    let outcome = rwr_from(&pair, ConceptId(0), &config).unwrap();
    assert!(outcome.converged);
    for (value, expected) in outcome.probabilities.iter().zip([20.0 / 37.0, 17.0 / 37.0]) {
        assert!((value - expected).abs() <= 1e-8, "two-node walk: {value} vs {expected}");
    }

    // Three-node path, from one end.
    let path = KnowledgeGraph::from_edges(vec![("a", "b"), ("b", "c")]).unwrap();
    let outcome = rwr_from(&path, path.lookup("a").unwrap(), &config).unwrap();
    assert!(outcome.converged);
    let frozen = [511.0 / 1480.0, 680.0 / 1480.0, 289.0 / 1480.0];
    for (index, (value, expected)) in outcome.probabilities.iter().zip(frozen).enumerate() {
        assert!(
            (value - expected).abs() <= 1e-8,
            "path walk node {index}: {value} vs {expected}"
        );
    }
    let solved = walk_by_solve(&path, 0, 0.15);
    for (value, expected) in outcome.probabilities.iter().zip(&solved) {
        assert!((value - expected).abs() <= 1e-8);
    }

    // Random connected graphs up to twenty nodes, every source.
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for n in 2..=20usize {
        let mut edges: Vec<(String, String)> =
            (0..n - 1).map(|i| (format!("n{i}"), format!("n{}", i + 1))).collect();
        for i in 0..n {
            for j in i + 2..n {
                if rng.random::<f64>() < 0.3 {
                    edges.push((format!("n{i}"), format!("n{j}")));
                }
            }
        }
        let graph = KnowledgeGraph::from_edges(edges).unwrap();
        let alpha = [0.15, 0.3, 0.5][n % 3];
        let config = RwrConfig { restart_prob: alpha, ..config.clone() };
        for source in 0..n {
            let outcome = rwr_from(&graph, ConceptId(source), &config).unwrap();
            assert!(outcome.converged, "{n} nodes, source {source} hit the iteration cap");
            let solved = walk_by_solve(&graph, source, alpha);
            for (node, (value, expected)) in
                outcome.probabilities.iter().zip(&solved).enumerate()
            {
                assert!(
                    (value - expected).abs() <= 1e-8,
                    "{n} nodes, alpha {alpha}, source {source}, node {node}: \
                     power {value} vs solve {expected}"
                );
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "walk comparison took {elapsed:.2}s, budget 1s");
    println!("PASS restart walks match the linear solve on all graphs, {elapsed:.3}s");
}

#[test]
fn ranking_metrics_match_an_exact_rational_reference() {
    let started = Instant::now();

    // Hand-checkable two-video case.
    let predictions: Vec<Vec<f64>> = vec![vec![0.9, 0.1, 0.0], vec![0.0, 0.7, 0.8]];
    let truths = vec![truth_set(&[0]), truth_set(&[1])];
    let report = evaluate(&predictions, &truths, 20).unwrap();
    assert!((report.map - 0.75).abs() < 1e-12);
    assert!((report.hit - 0.5).abs() < 1e-12);
    assert!((report.gap - 5.0 / 6.0).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(777);
    for case in 0..100 {
        let num_videos = rng.random_range(1..=5);
        let num_labels = rng.random_range(2..=10);
        let k = rng.random_range(1..=num_labels + 2);
        let mut predictions = Vec::with_capacity(num_videos);
        let mut truths = Vec::with_capacity(num_videos);
        for _ in 0..num_videos {
            // A coarse grid forces ties through the tie-breaking path.
            predictions.push(
                (0..num_labels).map(|_| rng.random_range(0..8) as f64 / 8.0).collect::<Vec<_>>(),
            );
            truths.push(
                (0..num_labels).filter(|_| rng.random::<f64>() < 0.4).collect::<BTreeSet<_>>(),
            );
        }
        let report = evaluate(&predictions, &truths, k).unwrap();
        let (map, hit, gap) = reference_metrics(&predictions, &truths, k);
        assert!(
            (report.map - map.to_f64()).abs() < 1e-12,
            "case {case}: map {} vs exact {}",
            report.map,
            map.to_f64()
        );
        assert!((report.hit - hit.to_f64()).abs() < 1e-12, "case {case}: hit");
        assert!(
            (report.gap - gap.to_f64()).abs() < 1e-12,
            "case {case}: gap {} vs exact {}",
            report.gap,
            gap.to_f64()
        );
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "metric comparison took {elapsed:.2}s, budget 1s");
    println!("PASS metrics match the exact rational reference on 100 cases, {elapsed:.3}s");
}

#[test]
fn pairwise_route_scales_quadratically_and_sparse_route_stays_linear() {
    let started = Instant::now();
    let records = run_scaling_bench::<f64>(&BenchConfig::default()).unwrap();
    assert_eq!(records.len(), 3);
    for pair in records.windows(2) {
        let pairwise_ratio = pair[1].pairwise_seconds / pair[0].pairwise_seconds;
        let sparse_ratio = pair[1].laplacian_seconds / pair[0].laplacian_seconds;
        assert!(
            pairwise_ratio >= 3.0,
            "pairwise route grew only {pairwise_ratio:.2}x from {} to {} labels",
            pair[0].num_labels,
            pair[1].num_labels
        );
        assert!(
            sparse_ratio <= 3.0,
            "sparse route grew {sparse_ratio:.2}x from {} to {} labels",
            pair[0].num_labels,
            pair[1].num_labels
        );
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "scaling bench took {elapsed:.1}s, budget 60s");
    let ratios: Vec<String> = records
        .windows(2)
        .map(|pair| {
            format!(
                "{}x/{:.2}x pairwise/sparse at {}",
                (pair[1].pairwise_seconds / pair[0].pairwise_seconds).round(),
                pair[1].laplacian_seconds / pair[0].laplacian_seconds,
                pair[1].num_labels
            )
        })
        .collect();
    println!("PASS scaling separation: {}, {elapsed:.1}s", ratios.join("; "));
}

#[test]
fn knowledge_gradient_moves_parameters_only_when_lambda_is_positive() {
    // Saturated probabilities sit beyond the cross-entropy clamp, so the
    // feature gradient is exactly zero and only the consistency term can
    // reach the parameters.
    let params = ModelParams::Logistic { weights: vec![vec![0.0, 20.0], vec![0.0, -20.0]] };
    let matrix = ConsistencyMatrix::from_entries(2, vec![(0, 1, 1.0)]).unwrap();
    let x = vec![0.0];
    let truth = truth_set(&[0]);
    let forward = params.forward(&x).unwrap();
    let (_, feature_grad) = feature_cost(&forward.probabilities, &truth);
    assert!(feature_grad.iter().all(|&g| g == 0.0));

    for lambda in [0.0, 0.01] {
        let (_, knowledge_grad) =
            knowledge_cost(&matrix, &forward.probabilities, lambda, 1e-12).unwrap();
        let upstream: Vec<f64> =
            feature_grad.iter().zip(&knowledge_grad).map(|(a, b)| a + b).collect();
        let mut grad = params.zeros_like();
        params.accumulate_backward(&x, &forward, &upstream, &mut grad).unwrap();
        let mut stepped = params.clone();
        stepped.scaled_add(&grad, -0.01).unwrap();
        let mut before = Vec::new();
        params.visit(|value| before.push(value.to_bits()));
        let mut moved = false;
        let mut cursor = 0;
        stepped.visit(|value| {
            moved |= value.to_bits() != before[cursor];
            cursor += 1;
        });
        assert_eq!(moved, lambda > 0.0, "lambda {lambda}");
    }
    println!("PASS a silent feature gradient still lets the consistency term move parameters");
}

fn nudged(params: &ModelParams, index: usize, delta: f64) -> ModelParams {
    let mut out = params.clone();
    let mut cursor = 0;
    out.visit_mut(|value| {
        if cursor == index {
            *value += delta;
        }
        cursor += 1;
    });
    out
}

fn truth_set(labels: &[usize]) -> BTreeSet<usize> {
    labels.iter().copied().collect()
}

/// Solves `(I - (1 - alpha) Pᵀ) r = alpha e_source` densely, with `P` the
/// uniform transition matrix of the graph.
fn walk_by_solve(graph: &KnowledgeGraph, source: usize, alpha: f64) -> Vec<f64> {
    let n = graph.len();
    let mut a = vec![vec![0.0; n]; n];
    for (v, row) in a.iter_mut().enumerate() {
        row[v] = 1.0;
    }
    for (v, row) in a.iter_mut().enumerate() {
        for &u in graph.neighbors(ConceptId(v)) {
            row[u] -= (1.0 - alpha) / graph.neighbors(ConceptId(u)).len() as f64;
        }
    }
    let mut b = vec![0.0; n];
    b[source] = alpha;
    solve_dense(a, b)
}

/// Gaussian elimination with partial pivoting; the walk system is strictly
/// diagonally dominant, so the pivot never vanishes.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let lead = a[col][col];
        assert!(lead.abs() > 1e-12, "singular walk system");
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = a[row][col] / lead;
            if factor == 0.0 {
                continue;
            }
            let (source_row, target_row) = if row < col {
                let (head, tail) = a.split_at_mut(col);
                (&tail[0], &mut head[row])
            } else {
                let (head, tail) = a.split_at_mut(row);
                (&head[col], &mut tail[0])
            };
            for (target, source) in target_row.iter_mut().zip(source_row).skip(col) {
                *target -= factor * source;
            }
            b[row] -= factor * b[col];
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

// Exact-fraction reference for the ranking metrics; integrates the
// precision-recall steps instead of summing precisions at hits.
#[derive(Clone, Copy, Debug)]
struct Frac {
    num: i128,
    den: i128,
}

impl Frac {
    fn new(num: i128, den: i128) -> Self {
        assert!(den != 0);
        let sign = den.signum();
        let (num, den) = (num * sign, den * sign);
        let g = gcd(num.unsigned_abs(), den.unsigned_abs()).max(1) as i128;
        Frac { num: num / g, den: den / g }
    }

    fn zero() -> Self {
        Frac { num: 0, den: 1 }
    }

    fn add(self, other: Self) -> Self {
        Frac::new(self.num * other.den + other.num * self.den, self.den * other.den)
    }

    fn sub(self, other: Self) -> Self {
        Frac::new(self.num * other.den - other.num * self.den, self.den * other.den)
    }

    fn mul(self, other: Self) -> Self {
        Frac::new(self.num * other.num, self.den * other.den)
    }

    fn div_int(self, k: i128) -> Self {
        Frac::new(self.num, self.den * k)
    }

    fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn reference_ap(ranked: &[usize], truth: &BTreeSet<usize>, k: usize) -> Frac {
    let denominator = truth.len().min(k) as i128;
    if denominator == 0 {
        return Frac::zero();
    }
    let mut hits = 0i128;
    let mut area = Frac::zero();
    for (rank, label) in ranked.iter().take(k).enumerate() {
        let before = Frac::new(hits, denominator);
        if truth.contains(label) {
            hits += 1;
        }
        let after = Frac::new(hits, denominator);
        area = area.add(after.sub(before).mul(Frac::new(hits, rank as i128 + 1)));
    }
    area
}

fn reference_rank(probabilities: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut order: Vec<(usize, f64)> = probabilities.iter().copied().enumerate().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.truncate(k.min(probabilities.len()));
    order
}

fn reference_metrics(
    predictions: &[Vec<f64>],
    truths: &[BTreeSet<usize>],
    k: usize,
) -> (Frac, Frac, Frac) {
    let count = predictions.len() as i128;
    let mut map = Frac::zero();
    let mut hit = 0i128;
    let mut pooled: Vec<(f64, usize, usize, bool)> = Vec::new();
    let mut denominator = 0i128;
    for (video, (probabilities, truth)) in predictions.iter().zip(truths).enumerate() {
        let ranked = reference_rank(probabilities, k);
        let labels: Vec<usize> = ranked.iter().map(|&(label, _)| label).collect();
        map = map.add(reference_ap(&labels, truth, k));
        if truth.contains(&labels[0]) {
            hit += 1;
        }
        denominator += truth.len().min(k) as i128;
        for &(label, probability) in &ranked {
            pooled.push((probability, video, label, truth.contains(&label)));
        }
    }
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut hits = 0i128;
    let mut gap = Frac::zero();
    for (rank, &(_, _, _, is_hit)) in pooled.iter().enumerate() {
        let before = Frac::new(hits, denominator.max(1));
        if is_hit {
            hits += 1;
        }
        let after = Frac::new(hits, denominator.max(1));
        gap = gap.add(after.sub(before).mul(Frac::new(hits, rank as i128 + 1)));
    }
    if denominator == 0 {
        gap = Frac::zero();
    }
    (map.div_int(count), Frac::new(hit, count), gap)
}
