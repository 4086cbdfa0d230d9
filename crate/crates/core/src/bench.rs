//! Micro-benchmark comparing the two consistency-quadratic routes.
//!
//! The sparse route visits each stored entry once, so doubling the label
//! count at fixed entries-per-row roughly doubles its cost. The pairwise
//! route scans all label pairs and quadruples instead. The harness measures
//! both over batches of random prediction vectors with adaptive repetition
//! counts and median-of-samples timing.

use std::collections::BTreeMap;
use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::consistency::ConsistencyMatrix;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub label_counts: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    /// Target incident entries per row; actual counts vary slightly with
    /// collisions.
    pub nnz_per_row: usize,
    pub seed: u64,
    /// Minimum wall time per measured block, in seconds.
    pub min_duration: f64,
    /// Blocks per measurement; the median is reported.
    pub samples: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            label_counts: vec![256, 512, 1024],
            batch_sizes: vec![4],
            nnz_per_row: 8,
            seed: 0,
            min_duration: 0.01,
            samples: 5,
        }
    }
}

/// Timing for one (label count, batch size) cell; seconds cover one pass
/// over the whole batch.
#[derive(Clone, Debug)]
pub struct BenchRecord {
    pub num_labels: usize,
    pub batch: usize,
    pub nnz: usize,
    pub laplacian_seconds: f64,
    pub pairwise_seconds: f64,
}

/// Random symmetric sparse matrix with roughly `nnz_per_row` incident
/// entries per row; deterministic under `seed`.
pub fn random_sparse_matrix<T: Real>(
    size: usize,
    nnz_per_row: usize,
    seed: u64,
) -> Result<ConsistencyMatrix<T>> {
    if size == 0 {
        return Err(Error::InvalidInput("matrix size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_row = (nnz_per_row / 2).max(1);
    let mut edges: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for i in 0..size {
        for _ in 0..per_row {
            let j = rng.random_range(0..size);
            if j == i {
                continue;
            }
            let key = (i.min(j), i.max(j));
            let weight = 0.05 + 0.95 * rng.random::<f64>();
            edges.entry(key).or_insert(weight);
        }
    }
    let triples: Vec<(usize, usize, T)> =
        edges.into_iter().map(|((i, j), w)| (i, j, T::of(w))).collect();
    ConsistencyMatrix::from_entries(size, triples)
}

fn time_block(mut work: impl FnMut(), min_duration: f64, samples: usize) -> f64 {
    let mut repetitions = 1usize;
    loop {
        let clock = Instant::now();
        for _ in 0..repetitions {
            work();
        }
        let elapsed = clock.elapsed().as_secs_f64();
        if elapsed >= min_duration || repetitions >= 1 << 22 {
            break;
        }
        let factor = (min_duration / elapsed.max(1e-9)).ceil().max(2.0);
        repetitions = ((repetitions as f64) * factor).min(f64::from(1 << 22)) as usize;
    }
    let mut times: Vec<f64> = (0..samples.max(1))
        .map(|_| {
            let clock = Instant::now();
            for _ in 0..repetitions {
                work();
            }
            clock.elapsed().as_secs_f64() / repetitions as f64
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

/// Times both quadratic routes over every (label count, batch size) pair.
pub fn run_scaling_bench<T: Real>(config: &BenchConfig) -> Result<Vec<BenchRecord>> {
    if config.label_counts.is_empty() || config.batch_sizes.is_empty() {
        return Err(Error::InvalidInput("nothing to benchmark".into()));
    }
    if config.min_duration <= 0.0 {
        return Err(Error::InvalidInput("min_duration must be positive".into()));
    }
    let mut records = Vec::new();
    for &num_labels in &config.label_counts {
        let matrix: ConsistencyMatrix<T> =
            random_sparse_matrix(num_labels, config.nnz_per_row, config.seed ^ num_labels as u64)?;
        for &batch in &config.batch_sizes {
            if batch == 0 {
                return Err(Error::InvalidInput("batch sizes must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(batch as u64));
            let vectors: Vec<Vec<T>> = (0..batch)
                .map(|_| (0..num_labels).map(|_| T::of(rng.random())).collect())
                .collect();

            let laplacian_seconds = time_block(
                || {
                    for p in &vectors {
                        black_box(matrix.laplacian_quadratic(black_box(p)).unwrap());
                    }
                },
                config.min_duration,
                config.samples,
            );
            let pairwise_seconds = time_block(
                || {
                    for p in &vectors {
                        black_box(matrix.pairwise_quadratic(black_box(p)).unwrap());
                    }
                },
                config.min_duration,
                config.samples,
            );
            records.push(BenchRecord {
                num_labels,
                batch,
                nnz: matrix.nnz(),
                laplacian_seconds,
                pairwise_seconds,
            });
        }
    }
    Ok(records)
}
