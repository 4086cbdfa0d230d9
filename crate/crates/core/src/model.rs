//! Frame pooling, the two classifier heads, and checkpoint files.
//!
//! Both heads score a pooled feature vector with a trailing constant 1
//! appended, so the last column of every weight row is a bias. The logistic
//! head is one sigmoid per label; the mixture head blends per-label expert
//! sigmoids with a softmax gate over the same input.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Real};

const CHECKPOINT_MAGIC: &str = "kacl checkpoint v1";
const INIT_SPREAD: f64 = 0.01;

/// Which classifier head to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Logistic,
    MixtureOfExperts,
}

/// Averages per-frame feature vectors into one video-level vector.
pub fn aoff_pool<T: Real>(frames: &[Vec<T>]) -> Result<Vec<T>> {
    let Some(first) = frames.first() else {
        return Err(Error::InvalidInput("cannot pool zero frames".into()));
    };
    let dim = first.len();
    if dim == 0 {
        return Err(Error::InvalidInput("cannot pool zero-dimensional frames".into()));
    }
    let mut pooled = vec![T::zero(); dim];
    for frame in frames {
        if frame.len() != dim {
            return Err(Error::Dimension(format!(
                "frame of dimension {} in a clip of dimension {dim}",
                frame.len()
            )));
        }
        for (acc, &v) in pooled.iter_mut().zip(frame) {
            *acc += v;
        }
    }
    let count = T::of(frames.len() as f64);
    for acc in &mut pooled {
        *acc /= count;
    }
    Ok(pooled)
}

/// Classifier weights. Every row has `feature_dim + 1` entries; the last is
/// the bias. Canonical parameter order (used by checkpoints and
/// [`ModelParams::visit`]) is label-major: for the mixture head, each
/// label's gate rows come first, then its expert rows.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelParams<T> {
    Logistic {
        /// `num_labels` rows of `feature_dim + 1`.
        weights: Vec<Vec<T>>,
    },
    MixtureOfExperts {
        /// `num_labels × num_experts` rows of `feature_dim + 1`; softmax scores.
        gates: Vec<Vec<Vec<T>>>,
        /// `num_labels × num_experts` rows of `feature_dim + 1`; expert sigmoids.
        experts: Vec<Vec<Vec<T>>>,
    },
}

/// Cached activations from [`ModelParams::forward`], consumed by
/// [`ModelParams::accumulate_backward`].
#[derive(Clone, Debug)]
pub struct Forward<T> {
    pub probabilities: Vec<T>,
    detail: Detail<T>,
}

#[derive(Clone, Debug)]
enum Detail<T> {
    Logistic,
    MixtureOfExperts { gates: Vec<Vec<T>>, sigmas: Vec<Vec<T>> },
}

fn uniform_row<T: Real>(rng: &mut ChaCha8Rng, feature_dim: usize) -> Vec<T> {
    let mut row: Vec<T> =
        (0..feature_dim).map(|_| T::of(rng.random_range(-INIT_SPREAD..INIT_SPREAD))).collect();
    row.push(T::zero());
    row
}

impl<T: Real> ModelParams<T> {
    /// Small uniform weights, zero biases, deterministic under `seed`.
    pub fn init_logistic(num_labels: usize, feature_dim: usize, seed: u64) -> Result<Self> {
        if num_labels == 0 || feature_dim == 0 {
            return Err(Error::InvalidInput("num_labels and feature_dim must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..num_labels).map(|_| uniform_row(&mut rng, feature_dim)).collect();
        Ok(ModelParams::Logistic { weights })
    }

    /// Small uniform gate and expert weights, zero biases, deterministic
    /// under `seed`.
    pub fn init_mixture(
        num_labels: usize,
        feature_dim: usize,
        num_experts: usize,
        seed: u64,
    ) -> Result<Self> {
        if num_labels == 0 || feature_dim == 0 || num_experts == 0 {
            return Err(Error::InvalidInput(
                "num_labels, feature_dim and num_experts must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gates = Vec::with_capacity(num_labels);
        let mut experts = Vec::with_capacity(num_labels);
        for _ in 0..num_labels {
            gates.push((0..num_experts).map(|_| uniform_row(&mut rng, feature_dim)).collect());
            experts.push((0..num_experts).map(|_| uniform_row(&mut rng, feature_dim)).collect());
        }
        Ok(ModelParams::MixtureOfExperts { gates, experts })
    }

    /// Dispatches to the head-specific initializer; `num_experts` is ignored
    /// for the logistic head.
    pub fn init(
        kind: ModelKind,
        num_labels: usize,
        feature_dim: usize,
        num_experts: usize,
        seed: u64,
    ) -> Result<Self> {
        match kind {
            ModelKind::Logistic => Self::init_logistic(num_labels, feature_dim, seed),
            ModelKind::MixtureOfExperts => {
                Self::init_mixture(num_labels, feature_dim, num_experts, seed)
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelParams::Logistic { .. } => "logistic",
            ModelParams::MixtureOfExperts { .. } => "moe",
        }
    }

    pub fn num_labels(&self) -> usize {
        match self {
            ModelParams::Logistic { weights } => weights.len(),
            ModelParams::MixtureOfExperts { gates, .. } => gates.len(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            ModelParams::Logistic { weights } => weights[0].len() - 1,
            ModelParams::MixtureOfExperts { gates, .. } => gates[0][0].len() - 1,
        }
    }

    /// Experts per label; zero for the logistic head.
    pub fn num_experts(&self) -> usize {
        match self {
            ModelParams::Logistic { .. } => 0,
            ModelParams::MixtureOfExperts { gates, .. } => gates[0].len(),
        }
    }

    pub fn param_count(&self) -> usize {
        let row = self.feature_dim() + 1;
        match self {
            ModelParams::Logistic { .. } => self.num_labels() * row,
            ModelParams::MixtureOfExperts { .. } => 2 * self.num_labels() * self.num_experts() * row,
        }
    }

    /// Per-label probabilities for one pooled feature vector.
    pub fn forward(&self, features: &[T]) -> Result<Forward<T>> {
        if features.len() != self.feature_dim() {
            return Err(Error::Dimension(format!(
                "input has dimension {}, model expects {}",
                features.len(),
                self.feature_dim()
            )));
        }
        match self {
            ModelParams::Logistic { weights } => {
                let probabilities =
                    weights.iter().map(|row| sigmoid(affine(row, features))).collect();
                Ok(Forward { probabilities, detail: Detail::Logistic })
            }
            ModelParams::MixtureOfExperts { gates, experts } => {
                let mut probabilities = Vec::with_capacity(gates.len());
                let mut gate_values = Vec::with_capacity(gates.len());
                let mut sigma_values = Vec::with_capacity(gates.len());
                for (gate_rows, expert_rows) in gates.iter().zip(experts) {
                    let scores: Vec<T> =
                        gate_rows.iter().map(|row| affine(row, features)).collect();
                    let mix = softmax(&scores);
                    let sigmas: Vec<T> =
                        expert_rows.iter().map(|row| sigmoid(affine(row, features))).collect();
                    let p = mix.iter().zip(&sigmas).map(|(&g, &s)| g * s).sum();
                    probabilities.push(p);
                    gate_values.push(mix);
                    sigma_values.push(sigmas);
                }
                Ok(Forward {
                    probabilities,
                    detail: Detail::MixtureOfExperts { gates: gate_values, sigmas: sigma_values },
                })
            }
        }
    }

    /// Adds `d loss / d params` for one instance into `grad`, given
    /// `upstream[i] = d loss / d probability[i]` and the matching forward
    /// pass.
    pub fn accumulate_backward(
        &self,
        features: &[T],
        forward: &Forward<T>,
        upstream: &[T],
        grad: &mut ModelParams<T>,
    ) -> Result<()> {
        let num_labels = self.num_labels();
        if upstream.len() != num_labels || forward.probabilities.len() != num_labels {
            return Err(Error::Dimension(format!(
                "upstream carries {} labels, model has {num_labels}",
                upstream.len()
            )));
        }
        if features.len() != self.feature_dim() {
            return Err(Error::Dimension(format!(
                "input has dimension {}, model expects {}",
                features.len(),
                self.feature_dim()
            )));
        }
        if !self.same_shape(grad) {
            return Err(Error::Dimension("gradient buffer shape differs from model".into()));
        }
        match (&forward.detail, grad) {
            (Detail::Logistic, ModelParams::Logistic { weights: grad_rows }) => {
                for (i, grad_row) in grad_rows.iter_mut().enumerate() {
                    let p = forward.probabilities[i];
                    let g = upstream[i] * p * (T::one() - p);
                    add_scaled(grad_row, features, g);
                }
                Ok(())
            }
            (
                Detail::MixtureOfExperts { gates, sigmas },
                ModelParams::MixtureOfExperts { gates: grad_gates, experts: grad_experts },
            ) => {
                if gates.len() != num_labels || gates[0].len() != self.num_experts() {
                    return Err(Error::Dimension(
                        "forward pass shape differs from model".into(),
                    ));
                }
                for i in 0..num_labels {
                    let p = forward.probabilities[i];
                    for e in 0..gates[i].len() {
                        let g = gates[i][e];
                        let s = sigmas[i][e];
                        let gate_pull = upstream[i] * g * (s - p);
                        let expert_pull = upstream[i] * g * s * (T::one() - s);
                        add_scaled(&mut grad_gates[i][e], features, gate_pull);
                        add_scaled(&mut grad_experts[i][e], features, expert_pull);
                    }
                }
                Ok(())
            }
            _ => Err(Error::InvalidInput(
                "forward pass and gradient buffer come from a different model kind".into(),
            )),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            ModelParams::Logistic { weights } => ModelParams::Logistic {
                weights: weights.iter().map(|row| vec![T::zero(); row.len()]).collect(),
            },
            ModelParams::MixtureOfExperts { gates, experts } => {
                let blank = |rows: &Vec<Vec<Vec<T>>>| {
                    rows.iter()
                        .map(|label| label.iter().map(|row| vec![T::zero(); row.len()]).collect())
                        .collect()
                };
                ModelParams::MixtureOfExperts { gates: blank(gates), experts: blank(experts) }
            }
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        match (self, other) {
            (ModelParams::Logistic { .. }, ModelParams::Logistic { .. }) => {
                self.num_labels() == other.num_labels()
                    && self.feature_dim() == other.feature_dim()
            }
            (ModelParams::MixtureOfExperts { .. }, ModelParams::MixtureOfExperts { .. }) => {
                self.num_labels() == other.num_labels()
                    && self.feature_dim() == other.feature_dim()
                    && self.num_experts() == other.num_experts()
            }
            _ => false,
        }
    }

    /// `self += scale * other`; shapes must match.
    pub fn scaled_add(&mut self, other: &Self, scale: T) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Dimension("parameter shapes differ in scaled_add".into()));
        }
        let mut sources = Vec::new();
        other.visit(|v| sources.push(v));
        let mut cursor = 0;
        self.visit_mut(|v| {
            *v += scale * sources[cursor];
            cursor += 1;
        });
        Ok(())
    }

    /// Calls `f` on every parameter in canonical order.
    pub fn visit(&self, mut f: impl FnMut(T)) {
        match self {
            ModelParams::Logistic { weights } => {
                for row in weights {
                    for &v in row {
                        f(v);
                    }
                }
            }
            ModelParams::MixtureOfExperts { gates, experts } => {
                for (gate_rows, expert_rows) in gates.iter().zip(experts) {
                    for row in gate_rows {
                        for &v in row {
                            f(v);
                        }
                    }
                    for row in expert_rows {
                        for &v in row {
                            f(v);
                        }
                    }
                }
            }
        }
    }

    /// Calls `f` on every parameter, mutably, in canonical order.
    pub fn visit_mut(&mut self, mut f: impl FnMut(&mut T)) {
        match self {
            ModelParams::Logistic { weights } => {
                for row in weights {
                    for v in row {
                        f(v);
                    }
                }
            }
            ModelParams::MixtureOfExperts { gates, experts } => {
                for (gate_rows, expert_rows) in gates.iter_mut().zip(experts) {
                    for row in gate_rows {
                        for v in row {
                            f(v);
                        }
                    }
                    for row in expert_rows {
                        for v in row {
                            f(v);
                        }
                    }
                }
            }
        }
    }
}

fn affine<T: Real>(row: &[T], features: &[T]) -> T {
    let mut acc = row[features.len()];
    for (&w, &x) in row.iter().zip(features) {
        acc += w * x;
    }
    acc
}

fn add_scaled<T: Real>(row: &mut [T], features: &[T], scale: T) {
    for (r, &x) in row.iter_mut().zip(features) {
        *r += scale * x;
    }
    let last = row.len() - 1;
    row[last] += scale;
}

fn softmax<T: Real>(scores: &[T]) -> Vec<T> {
    let max = scores.iter().copied().fold(scores[0], T::max);
    let exps: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Indices of the `k` highest probabilities, descending, ties broken by
/// ascending label index. Returns all labels when `k` exceeds the count.
pub fn topk<T: Real>(probabilities: &[T], k: usize) -> Vec<(usize, T)> {
    let mut ranked: Vec<(usize, T)> =
        probabilities.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0))
    });
    ranked.truncate(k.min(probabilities.len()));
    ranked
}

/// Writes parameters plus the training seed as a text checkpoint, one value
/// per line at full precision.
pub fn save_checkpoint<T: Real>(
    path: impl AsRef<Path>,
    params: &ModelParams<T>,
    seed: u64,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut emit = |text: String| writeln!(out, "{text}").map_err(|e| Error::io(path, e));
    emit(CHECKPOINT_MAGIC.to_string())?;
    emit(format!("kind {}", params.kind_name()))?;
    emit(format!("labels {}", params.num_labels()))?;
    emit(format!("feature_dim {}", params.feature_dim()))?;
    emit(format!("experts {}", params.num_experts()))?;
    emit(format!("seed {seed}"))?;
    let mut failed = None;
    params.visit(|v| {
        if failed.is_none() {
            if let Err(e) = writeln!(out, "{:.16e}", v.to_double()) {
                failed = Some(Error::io(path, e));
            }
        }
    });
    if let Some(e) = failed {
        return Err(e);
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint back into parameters and the recorded seed.
pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<(ModelParams<T>, u64)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let mut next = |expect: &str| -> Result<String> {
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, format!("missing {expect} line")))?;
        line.map_err(|e| Error::io(path, e)).and_then(|line| {
            if expect.is_empty() {
                return Ok(line);
            }
            let Some(rest) = line.strip_prefix(expect).map(str::trim) else {
                return Err(Error::parse(path, lineno + 1, format!("expected `{expect} ...`")));
            };
            Ok(rest.to_string())
        })
    };

    let magic = next("")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::parse(path, 1, "not a checkpoint file"));
    }
    let kind = next("kind")?;
    let labels: usize = parse_header(path, &next("labels")?, "labels")?;
    let feature_dim: usize = parse_header(path, &next("feature_dim")?, "feature_dim")?;
    let experts: usize = parse_header(path, &next("experts")?, "experts")?;
    let seed: u64 = parse_header(path, &next("seed")?, "seed")?;

    if labels == 0 || feature_dim == 0 {
        return Err(Error::parse(path, 3, "labels and feature_dim must be positive"));
    }
    let mut params: ModelParams<T> = match kind.as_str() {
        "logistic" => {
            if experts != 0 {
                return Err(Error::parse(path, 5, "logistic checkpoint with experts"));
            }
            ModelParams::Logistic { weights: vec![vec![T::zero(); feature_dim + 1]; labels] }
        }
        "moe" => {
            if experts == 0 {
                return Err(Error::parse(path, 5, "moe checkpoint without experts"));
            }
            let block = vec![vec![vec![T::zero(); feature_dim + 1]; experts]; labels];
            ModelParams::MixtureOfExperts { gates: block.clone(), experts: block }
        }
        other => return Err(Error::parse(path, 2, format!("unknown model kind {other:?}"))),
    };

    let mut values = Vec::with_capacity(params.param_count());
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: f64 = line.trim().parse().map_err(|_| {
            Error::parse(path, lineno + 1, format!("bad parameter value {:?}", line.trim()))
        })?;
        let converted = T::of(value);
        if !converted.is_finite() {
            return Err(Error::parse(path, lineno + 1, "parameter value out of range"));
        }
        values.push(converted);
    }
    if values.len() != params.param_count() {
        return Err(Error::parse(
            path,
            0,
            format!("expected {} parameters, found {}", params.param_count(), values.len()),
        ));
    }
    let mut cursor = 0;
    params.visit_mut(|v| {
        *v = values[cursor];
        cursor += 1;
    });
    Ok((params, seed))
}

fn parse_header<V: std::str::FromStr>(path: &Path, text: &str, field: &str) -> Result<V> {
    text.parse()
        .map_err(|_| Error::parse(path, 0, format!("bad {field} value {text:?}")))
}
