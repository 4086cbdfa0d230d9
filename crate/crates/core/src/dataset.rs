//! Video instances, dataset files, the synthetic generator, and splits.
//!
//! On disk a dataset is three text files sharing instance ids: frame
//! features (`id<TAB>frame_count<TAB>flat floats`), label sets
//! (`id<TAB>comma-separated indices`), and the label vocabulary (one name
//! per line, line number = label index). Features are stored at 32-bit
//! precision; arithmetic happens in the working scalar type.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::consistency::ConsistencyMatrix;
use crate::error::{Error, Result};
use crate::kgraph::normalize_name;
use crate::scalar::Real;

/// One video: an id, per-frame feature vectors, and its ground-truth labels.
#[derive(Clone, Debug)]
pub struct VideoInstance<T> {
    pub id: String,
    pub frames: Vec<Vec<T>>,
    pub labels: BTreeSet<usize>,
}

/// Instances plus the label vocabulary they index into.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub instances: Vec<VideoInstance<T>>,
    pub vocabulary: Vec<String>,
    pub feature_dim: usize,
}

impl<T: Real> Dataset<T> {
    /// Validates per-instance frame shapes and label ranges against the
    /// vocabulary.
    pub fn new(instances: Vec<VideoInstance<T>>, vocabulary: Vec<String>) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::InvalidInput("dataset has no instances".into()));
        }
        check_vocabulary(&vocabulary)?;
        let num_labels = vocabulary.len();
        let feature_dim = instances[0].frames.first().map(Vec::len).unwrap_or(0);
        if feature_dim == 0 {
            return Err(Error::InvalidInput(format!(
                "instance {} has no frame features",
                instances[0].id
            )));
        }
        for instance in &instances {
            if instance.frames.is_empty() {
                return Err(Error::InvalidInput(format!("instance {} has no frames", instance.id)));
            }
            for frame in &instance.frames {
                if frame.len() != feature_dim {
                    return Err(Error::Dimension(format!(
                        "instance {} has a frame of dimension {}, expected {feature_dim}",
                        instance.id,
                        frame.len()
                    )));
                }
            }
            if let Some(&label) = instance.labels.iter().next_back() {
                if label >= num_labels {
                    return Err(Error::InvalidInput(format!(
                        "instance {} references label {label}, vocabulary has {num_labels}",
                        instance.id
                    )));
                }
            }
        }
        Ok(Dataset { instances, vocabulary, feature_dim })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.vocabulary.len()
    }
}

fn check_vocabulary(vocabulary: &[String]) -> Result<()> {
    if vocabulary.is_empty() {
        return Err(Error::InvalidInput("vocabulary is empty".into()));
    }
    let mut seen = HashSet::new();
    for name in vocabulary {
        let normalized = normalize_name(name);
        if normalized.is_empty() {
            return Err(Error::InvalidInput("vocabulary contains a blank name".into()));
        }
        if !seen.insert(normalized.clone()) {
            return Err(Error::InvalidInput(format!(
                "vocabulary contains duplicate normalized name {normalized:?}"
            )));
        }
    }
    Ok(())
}

/// Reads one label name per line; the line number is the label index.
pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut vocabulary = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let name = line.trim_end_matches('\r');
        if name.trim().is_empty() {
            return Err(Error::parse(path, lineno + 1, "blank vocabulary line"));
        }
        vocabulary.push(name.to_string());
    }
    check_vocabulary(&vocabulary)?;
    Ok(vocabulary)
}

/// Loads and joins the three dataset files; instance order follows the
/// features file.
pub fn load_dataset<T: Real>(
    features_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    vocab_path: impl AsRef<Path>,
) -> Result<Dataset<T>> {
    let vocabulary = load_vocabulary(vocab_path)?;
    let labels_path = labels_path.as_ref();
    let features_path = features_path.as_ref();

    let mut label_map: HashMap<String, BTreeSet<usize>> = HashMap::new();
    let labels_file = File::open(labels_path).map_err(|e| Error::io(labels_path, e))?;
    for (lineno, line) in BufReader::new(labels_file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(labels_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, rest)) = line.split_once('\t') else {
            return Err(Error::parse(labels_path, lineno, "expected `id<TAB>labels`"));
        };
        let mut labels = BTreeSet::new();
        for token in rest.split(',') {
            let token = token.trim();
            if token.is_empty() {
                continue;
            }
            let index: usize = token.parse().map_err(|_| {
                Error::parse(labels_path, lineno, format!("label index {token:?} is not an integer"))
            })?;
            if index >= vocabulary.len() {
                return Err(Error::InvalidInput(format!(
                    "instance {id} references label {index}, vocabulary has {}",
                    vocabulary.len()
                )));
            }
            labels.insert(index);
        }
        if label_map.insert(id.to_string(), labels).is_some() {
            return Err(Error::parse(labels_path, lineno, format!("duplicate instance id {id:?}")));
        }
    }

    let mut instances = Vec::new();
    let mut seen_ids = HashSet::new();
    let mut feature_dim: Option<usize> = None;
    let features_file = File::open(features_path).map_err(|e| Error::io(features_path, e))?;
    for (lineno, line) in BufReader::new(features_file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(features_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                features_path,
                lineno,
                "expected `id<TAB>frame_count<TAB>values`",
            ));
        }
        let id = fields[0].to_string();
        if !seen_ids.insert(id.clone()) {
            return Err(Error::parse(features_path, lineno, format!("duplicate instance id {id:?}")));
        }
        let frame_count: usize = fields[1].parse().map_err(|_| {
            Error::parse(features_path, lineno, format!("frame count {:?} is not an integer", fields[1]))
        })?;
        if frame_count == 0 {
            return Err(Error::parse(features_path, lineno, "frame count must be at least 1"));
        }
        let mut values: Vec<f32> = Vec::new();
        for token in fields[2].split_whitespace() {
            let value: f32 = token.parse().map_err(|_| {
                Error::parse(features_path, lineno, format!("feature value {token:?} is not a number"))
            })?;
            if !value.is_finite() {
                return Err(Error::parse(features_path, lineno, "feature values must be finite"));
            }
            values.push(value);
        }
        if values.is_empty() || !values.len().is_multiple_of(frame_count) {
            return Err(Error::parse(
                features_path,
                lineno,
                format!("{} values do not divide into {frame_count} frames", values.len()),
            ));
        }
        let dim = values.len() / frame_count;
        match feature_dim {
            None => feature_dim = Some(dim),
            Some(expected) if expected != dim => {
                return Err(Error::Dimension(format!(
                    "instance {id} has feature dimension {dim}, expected {expected}"
                )));
            }
            _ => {}
        }
        let frames = values
            .chunks(dim)
            .map(|chunk| chunk.iter().map(|&v| T::of(f64::from(v))).collect())
            .collect();
        let labels = label_map.remove(&id).ok_or_else(|| {
            Error::InvalidInput(format!("instance {id} has features but no label line"))
        })?;
        instances.push(VideoInstance { id, frames, labels });
    }
    if let Some(id) = label_map.keys().next() {
        return Err(Error::InvalidInput(format!("instance {id} has labels but no feature line")));
    }
    Dataset::new(instances, vocabulary)
}

/// Writes the three dataset files; features are rounded to 32-bit precision
/// (9 significant digits), so save-then-load is exact at that precision.
pub fn save_dataset<T: Real>(
    dataset: &Dataset<T>,
    features_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    vocab_path: impl AsRef<Path>,
) -> Result<()> {
    let vocab_path = vocab_path.as_ref();
    let mut vocab = create(vocab_path)?;
    for name in &dataset.vocabulary {
        writeln!(vocab, "{name}").map_err(|e| Error::io(vocab_path, e))?;
    }
    vocab.flush().map_err(|e| Error::io(vocab_path, e))?;

    let features_path = features_path.as_ref();
    let mut features = create(features_path)?;
    for instance in &dataset.instances {
        write!(features, "{}\t{}\t", instance.id, instance.frames.len())
            .map_err(|e| Error::io(features_path, e))?;
        let mut first = true;
        for frame in &instance.frames {
            for value in frame {
                let sep = if first { "" } else { " " };
                write!(features, "{sep}{:.8e}", value.to_double() as f32)
                    .map_err(|e| Error::io(features_path, e))?;
                first = false;
            }
        }
        writeln!(features).map_err(|e| Error::io(features_path, e))?;
    }
    features.flush().map_err(|e| Error::io(features_path, e))?;

    let labels_path = labels_path.as_ref();
    let mut labels = create(labels_path)?;
    for instance in &dataset.instances {
        let joined: Vec<String> = instance.labels.iter().map(usize::to_string).collect();
        writeln!(labels, "{}\t{}", instance.id, joined.join(","))
            .map_err(|e| Error::io(labels_path, e))?;
    }
    labels.flush().map_err(|e| Error::io(labels_path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Controls for the synthetic generator.
///
/// Labels listed in `weak_labels` get prototypes scaled down to
/// `weak_prototype_scale`, so their presence is barely visible in features
/// and must be inferred through co-occurring labels.
#[derive(Clone, Debug)]
pub struct SynthConfig<T> {
    pub num_labels: usize,
    pub feature_dim: usize,
    pub num_instances: usize,
    /// Target expected label-set size; drives neighbor inclusion rates.
    pub avg_labels_per_instance: f64,
    /// Ground-truth co-occurrence weights; also returned as the knowledge
    /// source.
    pub correlation_graph: ConsistencyMatrix<T>,
    /// Standard deviation of per-frame Gaussian noise.
    pub feature_noise: f64,
    pub weak_labels: Vec<usize>,
    pub frames_per_instance: usize,
    pub weak_prototype_scale: f64,
    pub seed: u64,
}

impl<T: Real> SynthConfig<T> {
    pub fn new(
        num_labels: usize,
        feature_dim: usize,
        num_instances: usize,
        correlation_graph: ConsistencyMatrix<T>,
    ) -> Self {
        SynthConfig {
            num_labels,
            feature_dim,
            num_instances,
            avg_labels_per_instance: 3.4,
            correlation_graph,
            feature_noise: 0.25,
            weak_labels: default_weak_labels(num_labels),
            frames_per_instance: 4,
            weak_prototype_scale: 0.02,
            seed: 0,
        }
    }
}

/// Default weak subset: the first 30% of the vocabulary.
pub fn default_weak_labels(num_labels: usize) -> Vec<usize> {
    (0..(num_labels as f64 * 0.3).round() as usize).collect()
}

/// Samples a dataset with planted label correlations and returns the planted
/// graph as the knowledge source.
///
/// Each instance draws a seed label uniformly, then adds each graph neighbor
/// `j` with probability proportional to the edge weight, calibrated so the
/// expected set size approaches `avg_labels_per_instance`. Frames are the
/// mean of the chosen labels' prototypes plus Gaussian noise.
pub fn generate_synthetic<T: Real>(
    config: &SynthConfig<T>,
) -> Result<(Dataset<T>, ConsistencyMatrix<T>)> {
    let l = config.num_labels;
    if l == 0 || config.feature_dim == 0 || config.num_instances == 0 {
        return Err(Error::InvalidInput(
            "num_labels, feature_dim and num_instances must all be positive".into(),
        ));
    }
    if config.correlation_graph.size() != l {
        return Err(Error::Dimension(format!(
            "correlation graph covers {} labels, config says {l}",
            config.correlation_graph.size()
        )));
    }
    if config.avg_labels_per_instance < 1.0 {
        return Err(Error::InvalidInput("avg_labels_per_instance must be at least 1".into()));
    }
    if config.feature_noise < 0.0 || config.weak_prototype_scale < 0.0 {
        return Err(Error::InvalidInput("noise and prototype scales must be non-negative".into()));
    }
    if config.frames_per_instance == 0 {
        return Err(Error::InvalidInput("frames_per_instance must be at least 1".into()));
    }
    if config.weak_labels.iter().any(|&w| w >= l) {
        return Err(Error::InvalidInput("weak label index out of range".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let weak: HashSet<usize> = config.weak_labels.iter().copied().collect();

    let prototypes: Vec<Vec<f64>> = (0..l)
        .map(|label| {
            let scale = if weak.contains(&label) { config.weak_prototype_scale } else { 1.0 };
            (0..config.feature_dim)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * scale
                })
                .collect()
        })
        .collect();

    let mut neighbor_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); l];
    for (i, j, value) in config.correlation_graph.entries() {
        neighbor_rows[i].push((j, value.to_double()));
        neighbor_rows[j].push((i, value.to_double()));
    }
    for row in &mut neighbor_rows {
        row.sort_unstable_by_key(|entry| entry.0);
    }

    let width = config.num_instances.to_string().len().max(6);
    let mut instances = Vec::with_capacity(config.num_instances);
    for n in 0..config.num_instances {
        let seed_label = rng.random_range(0..l);
        let mut labels = BTreeSet::new();
        labels.insert(seed_label);
        let row = &neighbor_rows[seed_label];
        let weight_sum: f64 = row.iter().map(|(_, w)| w).sum();
        if weight_sum > 0.0 && config.avg_labels_per_instance > 1.0 {
            let scale = (config.avg_labels_per_instance - 1.0) / weight_sum;
            for &(j, w) in row {
                if rng.random::<f64>() < (scale * w).min(1.0) {
                    labels.insert(j);
                }
            }
        }

        let mut mixture = vec![0.0_f64; config.feature_dim];
        for &label in &labels {
            for (m, p) in mixture.iter_mut().zip(&prototypes[label]) {
                *m += p;
            }
        }
        let count = labels.len() as f64;
        for m in &mut mixture {
            *m /= count;
        }

        let frames = (0..config.frames_per_instance)
            .map(|_| {
                mixture
                    .iter()
                    .map(|&m| {
                        let z: f64 = rng.sample(StandardNormal);
                        T::of(m + config.feature_noise * z)
                    })
                    .collect()
            })
            .collect();

        instances.push(VideoInstance { id: format!("synth-{n:0width$}"), frames, labels });
    }

    let vocabulary = (0..l).map(|i| format!("label_{i:03}")).collect();
    let dataset = Dataset::new(instances, vocabulary)?;
    Ok((dataset, config.correlation_graph.clone()))
}

/// Deterministic planted graph: each weak label is tied to one strong
/// partner at `partner_weight`, and strong labels pick up
/// `background_per_label` random edges among themselves at
/// `background_weight`.
pub fn planted_partner_graph<T: Real>(
    num_labels: usize,
    weak_labels: &[usize],
    partner_weight: f64,
    background_weight: f64,
    background_per_label: usize,
    seed: u64,
) -> Result<ConsistencyMatrix<T>> {
    let weak: BTreeSet<usize> = weak_labels.iter().copied().collect();
    if weak.iter().any(|&w| w >= num_labels) {
        return Err(Error::InvalidInput("weak label index out of range".into()));
    }
    let strong: Vec<usize> = (0..num_labels).filter(|i| !weak.contains(i)).collect();
    if strong.len() < weak.len() {
        return Err(Error::InvalidInput(format!(
            "{} weak labels need at least as many strong partners, have {}",
            weak.len(),
            strong.len()
        )));
    }

    let mut edges: HashMap<(usize, usize), f64> = HashMap::new();
    for (&w, &s) in weak.iter().zip(strong.iter()) {
        let key = if w < s { (w, s) } else { (s, w) };
        edges.insert(key, partner_weight);
    }
    if background_per_label > 0 && strong.len() > 1 && background_weight > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &s in &strong {
            for _ in 0..background_per_label {
                let other = strong[rng.random_range(0..strong.len())];
                if other == s {
                    continue;
                }
                let key = if s < other { (s, other) } else { (other, s) };
                edges.entry(key).or_insert(background_weight);
            }
        }
    }
    let mut triples: Vec<(usize, usize, T)> =
        edges.into_iter().map(|((i, j), w)| (i, j, T::of(w))).collect();
    triples.sort_unstable_by_key(|&(i, j, _)| (i, j));
    ConsistencyMatrix::from_entries(num_labels, triples)
}

/// Simulates incomplete annotation: each occurrence of one of the given
/// labels survives with probability `keep_probability`, independently,
/// deterministic under `seed`. Features are untouched, so the content is
/// still present; only the truth sets forget it.
pub fn censor_labels<T: Real>(
    dataset: &mut Dataset<T>,
    labels: &[usize],
    keep_probability: f64,
    seed: u64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&keep_probability) {
        return Err(Error::InvalidInput(format!(
            "keep_probability must lie in [0, 1], got {keep_probability}"
        )));
    }
    let targets: HashSet<usize> = labels.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for instance in &mut dataset.instances {
        let mut survivors = BTreeSet::new();
        for &label in &instance.labels {
            if targets.contains(&label) && rng.random::<f64>() >= keep_probability {
                continue;
            }
            survivors.insert(label);
        }
        instance.labels = survivors;
    }
    Ok(())
}

/// Deterministic shuffle-and-cut split; both sides keep the vocabulary.
pub fn split<T: Real>(
    dataset: Dataset<T>,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "split fraction must lie strictly between 0 and 1, got {fraction}"
        )));
    }
    let n = dataset.len();
    let take = (n as f64 * fraction).floor() as usize;
    if take == 0 || take == n {
        return Err(Error::InvalidInput(format!(
            "fraction {fraction} leaves an empty side for {n} instances"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let picked: HashSet<usize> = order[..take].iter().copied().collect();

    let mut first = Vec::with_capacity(take);
    let mut second = Vec::with_capacity(n - take);
    for (index, instance) in dataset.instances.into_iter().enumerate() {
        if picked.contains(&index) {
            first.push(instance);
        } else {
            second.push(instance);
        }
    }
    let vocabulary = dataset.vocabulary;
    Ok((
        Dataset { instances: first, vocabulary: vocabulary.clone(), feature_dim: dataset.feature_dim },
        Dataset { instances: second, vocabulary, feature_dim: dataset.feature_dim },
    ))
}
