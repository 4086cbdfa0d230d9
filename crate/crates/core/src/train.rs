//! Mini-batch gradient descent on the combined objective, plus the
//! knowledgeless and post-hoc smoothing baselines.
//!
//! The per-instance objective is `K = C + λ·reg`, where `C` is mean binary
//! cross-entropy over labels and `reg` is the smoothed square-root
//! consistency penalty. Setting `λ = 0` is an exact switch: the knowledge
//! code path is never entered and training is bit-identical to
//! [`train_feature_only`].

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::consistency::ConsistencyMatrix;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{aoff_pool, ModelKind, ModelParams};
use crate::scalar::Real;

/// Probability clamp for the cross-entropy logs.
pub const PROB_FLOOR: f64 = 1e-7;
/// Default smoothing constant for the square-root penalty.
pub const DEFAULT_EPSILON_SQRT: f64 = 1e-12;

/// Hyperparameters for one training run.
#[derive(Clone, Debug)]
pub struct TrainConfig<T> {
    /// Knowledge trade-off; zero disables the knowledge term exactly.
    pub lambda: T,
    pub learning_rate: T,
    pub epochs: usize,
    pub batch_size: usize,
    /// Experts per label for the mixture head; ignored by the logistic head.
    pub num_experts: usize,
    /// Smoothing constant inside the square root.
    pub epsilon_sqrt: T,
    pub seed: u64,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            lambda: T::of(0.01),
            learning_rate: T::of(0.01),
            epochs: 5,
            batch_size: 1024,
            num_experts: 2,
            epsilon_sqrt: T::of(DEFAULT_EPSILON_SQRT),
            seed: 0,
        }
    }
}

/// Mean losses observed while passing over the data in one epoch, measured
/// at the parameters in effect when each batch was scored.
#[derive(Clone, Debug)]
pub struct EpochRecord<T> {
    pub epoch: usize,
    pub mean_feature_cost: T,
    /// Raw consistency penalty, before the λ scale.
    pub mean_regularizer: T,
    /// `mean_feature_cost + λ · mean_regularizer`.
    pub mean_total: T,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport<T> {
    pub epochs: Vec<EpochRecord<T>>,
}

impl<T> Default for TrainReport<T> {
    fn default() -> Self {
        TrainReport { epochs: Vec::new() }
    }
}

/// Mean binary cross-entropy over all labels and its gradient in the
/// probabilities.
///
/// Probabilities are clamped to `[1e-7, 1 - 1e-7]` inside the logs; where
/// the clamp is active the corresponding gradient entry is exactly zero.
pub fn feature_cost<T: Real>(probabilities: &[T], labels: &BTreeSet<usize>) -> (T, Vec<T>) {
    let count = probabilities.len();
    let scale = T::one() / T::of(count as f64);
    let floor = T::of(PROB_FLOOR);
    let ceiling = T::one() - floor;
    let mut value = T::zero();
    let mut grad = vec![T::zero(); count];
    for (i, (&p, g)) in probabilities.iter().zip(&mut grad).enumerate() {
        let clamped = p.max(floor).min(ceiling);
        if labels.contains(&i) {
            value -= clamped.ln();
            if p == clamped {
                *g = -scale / clamped;
            }
        } else {
            value -= (T::one() - clamped).ln();
            if p == clamped {
                *g = scale / (T::one() - clamped);
            }
        }
    }
    (value * scale, grad)
}

/// λ-scaled consistency penalty and gradient; `λ = 0` short-circuits to
/// exact zeros without touching the matrix.
pub fn knowledge_cost<T: Real>(
    matrix: &ConsistencyMatrix<T>,
    probabilities: &[T],
    lambda: T,
    epsilon: T,
) -> Result<(T, Vec<T>)> {
    if lambda == T::zero() {
        return Ok((T::zero(), vec![T::zero(); probabilities.len()]));
    }
    let (value, mut grad) = matrix.regularizer(probabilities, epsilon)?;
    for g in &mut grad {
        *g *= lambda;
    }
    Ok((lambda * value, grad))
}

/// Trains with the combined objective. Deterministic under
/// `(config.seed, config)`; aborts with a batch-naming diagnostic if the
/// loss or model output turns non-finite.
pub fn train<T: Real>(
    kind: ModelKind,
    dataset: &Dataset<T>,
    matrix: &ConsistencyMatrix<T>,
    config: &TrainConfig<T>,
) -> Result<(ModelParams<T>, TrainReport<T>)> {
    if matrix.size() != dataset.num_labels() {
        return Err(Error::Dimension(format!(
            "consistency matrix covers {} labels, dataset has {}",
            matrix.size(),
            dataset.num_labels()
        )));
    }
    if config.lambda < T::zero() || config.lambda.is_nan() {
        return Err(Error::InvalidInput("lambda must be non-negative".into()));
    }
    descend(kind, dataset, Some(matrix), config)
}

/// The same loop with the knowledge code path removed; `config.lambda` is
/// ignored.
pub fn train_feature_only<T: Real>(
    kind: ModelKind,
    dataset: &Dataset<T>,
    config: &TrainConfig<T>,
) -> Result<(ModelParams<T>, TrainReport<T>)> {
    descend(kind, dataset, None, config)
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15)
}

fn descend<T: Real>(
    kind: ModelKind,
    dataset: &Dataset<T>,
    matrix: Option<&ConsistencyMatrix<T>>,
    config: &TrainConfig<T>,
) -> Result<(ModelParams<T>, TrainReport<T>)> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("cannot train on an empty dataset".into()));
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::InvalidInput("epochs and batch_size must be positive".into()));
    }
    if config.learning_rate <= T::zero() || config.learning_rate.is_nan() {
        return Err(Error::InvalidInput("learning_rate must be positive".into()));
    }
    if config.epsilon_sqrt <= T::zero() || config.epsilon_sqrt.is_nan() {
        return Err(Error::InvalidInput("epsilon_sqrt must be positive".into()));
    }
    let knowledge = matrix.filter(|_| config.lambda > T::zero());

    let pooled: Vec<Vec<T>> = dataset
        .instances
        .iter()
        .map(|instance| aoff_pool(&instance.frames))
        .collect::<Result<_>>()?;
    let mut params =
        ModelParams::init(kind, dataset.num_labels(), dataset.feature_dim, config.num_experts, config.seed)?;

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = shuffle_rng(config.seed);
    let mut report = TrainReport::default();

    for epoch in 0..config.epochs {
        let clock = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_feature = T::zero();
        let mut epoch_reg = T::zero();

        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grad = params.zeros_like();
            let mut batch_feature = T::zero();
            let mut batch_reg = T::zero();
            for &index in batch {
                let forward = params.forward(&pooled[index])?;
                if forward.probabilities.iter().any(|p| !p.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite model output in epoch {epoch}, batch {batch_index}"
                    )));
                }
                let (cost, mut upstream) =
                    feature_cost(&forward.probabilities, &dataset.instances[index].labels);
                batch_feature += cost;
                if let Some(matrix) = knowledge {
                    let (reg, reg_grad) =
                        matrix.regularizer(&forward.probabilities, config.epsilon_sqrt)?;
                    batch_reg += reg;
                    for (u, &g) in upstream.iter_mut().zip(&reg_grad) {
                        *u += config.lambda * g;
                    }
                }
                params.accumulate_backward(&pooled[index], &forward, &upstream, &mut grad)?;
            }
            if !batch_feature.is_finite() || !batch_reg.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss in epoch {epoch}, batch {batch_index}"
                )));
            }
            let count = T::of(batch.len() as f64);
            params.scaled_add(&grad, -config.learning_rate / count)?;
            epoch_feature += batch_feature;
            epoch_reg += batch_reg;
        }

        let total = T::of(dataset.len() as f64);
        let mean_feature_cost = epoch_feature / total;
        let mean_regularizer = epoch_reg / total;
        report.epochs.push(EpochRecord {
            epoch,
            mean_feature_cost,
            mean_regularizer,
            mean_total: mean_feature_cost + effective_lambda(knowledge, config) * mean_regularizer,
            seconds: clock.elapsed().as_secs_f64(),
        });
    }

    let mut finite = true;
    params.visit(|v| finite &= v.is_finite());
    if !finite {
        return Err(Error::Numerical("non-finite parameters after training".into()));
    }
    Ok((params, report))
}

fn effective_lambda<T: Real>(knowledge: Option<&ConsistencyMatrix<T>>, config: &TrainConfig<T>) -> T {
    if knowledge.is_some() {
        config.lambda
    } else {
        T::zero()
    }
}

/// Post-hoc smoothing baseline: gradient steps on the consistency penalty
/// alone, per prediction vector, each step clipped back to `[0, 1]`. Model
/// parameters never see these updates.
pub fn two_stage_baseline<T: Real>(
    predictions: &[Vec<T>],
    matrix: &ConsistencyMatrix<T>,
    steps: usize,
    step_size: T,
) -> Result<Vec<Vec<T>>> {
    if step_size < T::zero() || step_size.is_nan() {
        return Err(Error::InvalidInput("step_size must be non-negative".into()));
    }
    let epsilon = T::of(DEFAULT_EPSILON_SQRT);
    let mut smoothed = Vec::with_capacity(predictions.len());
    for prediction in predictions {
        let mut current = prediction.clone();
        for _ in 0..steps {
            let (_, grad) = matrix.regularizer(&current, epsilon)?;
            for (value, &g) in current.iter_mut().zip(&grad) {
                *value = (*value - step_size * g).max(T::zero()).min(T::one());
            }
        }
        smoothed.push(current);
    }
    Ok(smoothed)
}
