//! Ranking metrics: per-video average precision, MAP, HIT, and the pooled
//! GAP with a top-k cutoff per video.

use std::collections::{BTreeSet, HashSet};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{aoff_pool, topk, ModelParams};
use crate::scalar::Real;

/// Per-video ranking depth used by the standard reports.
pub const DEFAULT_TOP_K: usize = 20;

/// One video's ranked predictions and score, by position in the evaluated
/// list.
#[derive(Clone, Debug)]
pub struct PerVideo<T> {
    pub index: usize,
    pub ranked: Vec<(usize, T)>,
    pub average_precision: T,
}

#[derive(Clone, Debug)]
pub struct EvalReport<T> {
    pub map: T,
    pub hit: T,
    pub gap: T,
    pub per_video: Vec<PerVideo<T>>,
}

/// Average precision of one ranking against a truth set, looking at the
/// first `k` entries and normalizing by `min(|truth|, k)`. Empty truth
/// scores zero.
pub fn average_precision<T: Real>(
    ranked: &[usize],
    truth: &BTreeSet<usize>,
    k: usize,
) -> Result<T> {
    let mut seen = HashSet::with_capacity(ranked.len());
    for &label in ranked {
        if !seen.insert(label) {
            return Err(Error::InvalidInput(format!("duplicate label {label} in ranking")));
        }
    }
    let denominator = truth.len().min(k);
    if denominator == 0 {
        return Ok(T::zero());
    }
    let mut hits = 0usize;
    let mut total = T::zero();
    for (rank, label) in ranked.iter().take(k).enumerate() {
        if truth.contains(label) {
            hits += 1;
            total += T::of(hits as f64) / T::of((rank + 1) as f64);
        }
    }
    Ok(total / T::of(denominator as f64))
}

/// Scores per-video probability vectors against truth sets.
///
/// MAP is the mean per-video average precision, HIT the fraction of videos
/// whose top prediction is in the truth set, and GAP the average precision
/// of the single global list pooling every video's top `k`, sorted by
/// probability with ties broken by (video, label) position.
pub fn evaluate<T: Real>(
    predictions: &[Vec<T>],
    truths: &[BTreeSet<usize>],
    k: usize,
) -> Result<EvalReport<T>> {
    if predictions.len() != truths.len() {
        return Err(Error::Dimension(format!(
            "{} prediction vectors against {} truth sets",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidInput("nothing to evaluate".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let num_labels = predictions[0].len();
    if num_labels == 0 {
        return Err(Error::InvalidInput("empty prediction vectors".into()));
    }

    let mut per_video = Vec::with_capacity(predictions.len());
    let mut pooled: Vec<(T, usize, usize, bool)> = Vec::new();
    let mut ap_sum = T::zero();
    let mut hit_count = 0usize;
    let mut gap_denominator = 0usize;

    for (index, (probabilities, truth)) in predictions.iter().zip(truths).enumerate() {
        if probabilities.len() != num_labels {
            return Err(Error::Dimension(format!(
                "video {index} predicts {} labels, expected {num_labels}",
                probabilities.len()
            )));
        }
        if let Some(&label) = truth.iter().next_back() {
            if label >= num_labels {
                return Err(Error::InvalidInput(format!(
                    "video {index} truth references label {label}, only {num_labels} exist"
                )));
            }
        }
        let ranked = topk(probabilities, k);
        let labels_only: Vec<usize> = ranked.iter().map(|&(label, _)| label).collect();
        let ap = average_precision::<T>(&labels_only, truth, k)?;
        ap_sum += ap;
        if truth.contains(&labels_only[0]) {
            hit_count += 1;
        }
        gap_denominator += truth.len().min(k);
        for &(label, probability) in &ranked {
            pooled.push((probability, index, label, truth.contains(&label)));
        }
        per_video.push(PerVideo { index, ranked, average_precision: ap });
    }

    pooled.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut hits = 0usize;
    let mut gap_sum = T::zero();
    for (rank, &(_, _, _, hit)) in pooled.iter().enumerate() {
        if hit {
            hits += 1;
            gap_sum += T::of(hits as f64) / T::of((rank + 1) as f64);
        }
    }
    let gap = if gap_denominator == 0 {
        T::zero()
    } else {
        gap_sum / T::of(gap_denominator as f64)
    };

    let count = T::of(predictions.len() as f64);
    Ok(EvalReport {
        map: ap_sum / count,
        hit: T::of(hit_count as f64) / count,
        gap,
        per_video,
    })
}

/// Pools each instance's frames and runs the model forward, preserving
/// dataset order.
pub fn predict_dataset<T: Real>(
    params: &ModelParams<T>,
    dataset: &Dataset<T>,
) -> Result<Vec<Vec<T>>> {
    if params.num_labels() != dataset.num_labels() {
        return Err(Error::Dimension(format!(
            "model scores {} labels, dataset has {}",
            params.num_labels(),
            dataset.num_labels()
        )));
    }
    dataset
        .instances
        .iter()
        .map(|instance| {
            let pooled = aoff_pool(&instance.frames)?;
            Ok(params.forward(&pooled)?.probabilities)
        })
        .collect()
}
