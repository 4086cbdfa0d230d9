//! Knowledge-graph loading and random walk with restart.
//!
//! The graph is an undirected, unweighted concept graph read from a tab
//! separated edge list. Relation semantics are reduced to a block list:
//! edges whose relation is blocked never enter the graph. Node proximity is
//! measured by the stationary distribution of a random walk that restarts at
//! the source with fixed probability.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense node handle assigned in first-appearance order at load time.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct ConceptId(pub usize);

/// Canonical spelling used for both concept and relation matching:
/// lowercase, trimmed, internal whitespace runs collapsed to one underscore.
pub fn normalize_name(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_gap = false;
    for ch in raw.trim().chars() {
        if ch.is_whitespace() {
            pending_gap = true;
            continue;
        }
        if pending_gap && !out.is_empty() {
            out.push('_');
        }
        pending_gap = false;
        for low in ch.to_lowercase() {
            out.push(low);
        }
    }
    out
}

/// Relation block list; membership is exact string equality after
/// normalization.
#[derive(Clone, Debug)]
pub struct RelationFilter {
    blocked: BTreeSet<String>,
}

impl RelationFilter {
    pub fn new<I, S>(blocked: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        RelationFilter {
            blocked: blocked.into_iter().map(|s| normalize_name(s.as_ref())).collect(),
        }
    }

    /// Filter that blocks nothing.
    pub fn allow_all() -> Self {
        RelationFilter { blocked: BTreeSet::new() }
    }

    pub fn blocks(&self, relation: &str) -> bool {
        self.blocked.contains(&normalize_name(relation))
    }

    pub fn blocked_relations(&self) -> impl Iterator<Item = &str> {
        self.blocked.iter().map(String::as_str)
    }
}

impl Default for RelationFilter {
    /// Blocks the contrast/negation relations that would otherwise link
    /// concepts whose co-occurrence should not be encouraged.
    fn default() -> Self {
        RelationFilter::new(["NotDesires", "NotCapableOf", "Antonym", "DistinctFrom"])
    }
}

/// Undirected concept graph with sorted neighbor lists.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    names: Vec<String>,
    index: HashMap<String, usize>,
    adjacency: Vec<Vec<usize>>,
}

impl KnowledgeGraph {
    /// Builds a graph from already-normalized undirected edges. Self-loops
    /// and duplicate edges are ignored; nodes exist only through edges.
    pub fn from_edges<I, S>(edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S)>,
        S: AsRef<str>,
    {
        let mut names: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut neighbor_sets: Vec<BTreeSet<usize>> = Vec::new();

        let intern = |name: &str,
                      names: &mut Vec<String>,
                      index: &mut HashMap<String, usize>,
                      sets: &mut Vec<BTreeSet<usize>>| {
            if let Some(&i) = index.get(name) {
                return i;
            }
            let i = names.len();
            names.push(name.to_string());
            index.insert(name.to_string(), i);
            sets.push(BTreeSet::new());
            i
        };

        for (head, tail) in edges {
            let head = normalize_name(head.as_ref());
            let tail = normalize_name(tail.as_ref());
            if head.is_empty() || tail.is_empty() {
                return Err(Error::InvalidInput("empty concept name in edge".into()));
            }
            if head == tail {
                continue;
            }
            let h = intern(&head, &mut names, &mut index, &mut neighbor_sets);
            let t = intern(&tail, &mut names, &mut index, &mut neighbor_sets);
            neighbor_sets[h].insert(t);
            neighbor_sets[t].insert(h);
        }

        if names.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let adjacency = neighbor_sets.into_iter().map(|s| s.into_iter().collect()).collect();
        Ok(KnowledgeGraph { names, index, adjacency })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ConceptId) -> &str {
        &self.names[id.0]
    }

    /// Looks up an already-normalized name.
    pub fn lookup(&self, normalized: &str) -> Option<ConceptId> {
        self.index.get(normalized).copied().map(ConceptId)
    }

    pub fn neighbors(&self, id: ConceptId) -> &[usize] {
        &self.adjacency[id.0]
    }

    pub fn degree(&self, id: ConceptId) -> usize {
        self.adjacency[id.0].len()
    }
}

/// Reads a `head<TAB>relation<TAB>tail[<TAB>weight]` edge list.
///
/// Lines starting with `#` and blank lines are skipped, the optional weight
/// column is ignored, blocked relations drop the whole line, and self-loops
/// after name normalization add nothing.
pub fn load_edge_list(path: impl AsRef<Path>, filter: &RelationFilter) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(BufReader::new(file), path, filter)
}

fn parse_edge_list<R: BufRead>(
    reader: R,
    path: &Path,
    filter: &RelationFilter,
) -> Result<KnowledgeGraph> {
    let mut edges: Vec<(String, String)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected at least 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let head = normalize_name(fields[0]);
        let tail = normalize_name(fields[2]);
        if head.is_empty() || tail.is_empty() {
            return Err(Error::parse(path, lineno, "empty concept name"));
        }
        if filter.blocks(fields[1]) {
            continue;
        }
        edges.push((head, tail));
    }
    KnowledgeGraph::from_edges(edges)
}

/// Maps label names onto graph nodes; `None` marks labels absent from the
/// graph. Matching uses the same normalization as loading.
pub fn map_labels<S: AsRef<str>>(graph: &KnowledgeGraph, label_names: &[S]) -> Vec<Option<ConceptId>> {
    label_names
        .iter()
        .map(|name| graph.lookup(&normalize_name(name.as_ref())))
        .collect()
}

/// Settings for the restarting random walk.
#[derive(Clone, Debug)]
pub struct RwrConfig<T> {
    /// Probability of jumping back to the source at each step.
    pub restart_prob: T,
    /// Convergence threshold on the max-abs change between iterations.
    pub tolerance: T,
    pub max_iterations: usize,
}

impl<T: Real> Default for RwrConfig<T> {
    fn default() -> Self {
        RwrConfig {
            restart_prob: T::of(0.15),
            tolerance: T::of(1e-10),
            max_iterations: 1000,
        }
    }
}

/// Result of one source's walk. `converged` is false when the iteration cap
/// was reached first; the probabilities are still the best iterate.
#[derive(Clone, Debug)]
pub struct RwrOutcome<T> {
    pub probabilities: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration for `r = restart_prob * e_source + (1 - restart_prob) * P^T r`
/// with uniform transitions over neighbors.
pub fn rwr_from<T: Real>(
    graph: &KnowledgeGraph,
    source: ConceptId,
    config: &RwrConfig<T>,
) -> Result<RwrOutcome<T>> {
    if graph.is_empty() {
        return Err(Error::InvalidInput("random walk on an empty graph".into()));
    }
    if source.0 >= graph.len() {
        return Err(Error::InvalidInput(format!(
            "source node {} out of range for graph of {} nodes",
            source.0,
            graph.len()
        )));
    }
    let alpha = config.restart_prob;
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(Error::InvalidInput(format!(
            "restart probability must lie in (0, 1), got {alpha}"
        )));
    }
    if config.tolerance <= T::zero() || config.tolerance.is_nan() {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    if config.max_iterations == 0 {
        return Err(Error::InvalidInput("max_iterations must be at least 1".into()));
    }

    let n = graph.len();
    let keep = T::one() - alpha;
    let mut current = vec![T::zero(); n];
    current[source.0] = T::one();
    let mut next = vec![T::zero(); n];

    for iteration in 1..=config.max_iterations {
        for value in next.iter_mut() {
            *value = T::zero();
        }
        next[source.0] = alpha;
        for (neighbors, &mass) in graph.adjacency.iter().zip(current.iter()) {
            if neighbors.is_empty() {
                continue;
            }
            let share = mass * keep / T::of(neighbors.len() as f64);
            for &v in neighbors {
                next[v] += share;
            }
        }
        let mut diff = T::zero();
        for (a, b) in next.iter().zip(current.iter()) {
            let d = (*a - *b).abs();
            if d > diff {
                diff = d;
            }
        }
        std::mem::swap(&mut current, &mut next);
        if diff < config.tolerance {
            return Ok(RwrOutcome { probabilities: current, iterations: iteration, converged: true });
        }
    }
    Ok(RwrOutcome {
        probabilities: current,
        iterations: config.max_iterations,
        converged: false,
    })
}

/// Pairwise walk probabilities restricted to the label-mapped nodes.
///
/// Row `i` holds the walk from label `i`'s node evaluated at every label's
/// node; unmapped labels contribute zero rows and columns.
#[derive(Clone, Debug)]
pub struct ProximityTable<T> {
    size: usize,
    values: Vec<T>,
    sources: Vec<Option<ConceptId>>,
    /// Labels whose walk hit the iteration cap before reaching tolerance.
    pub unconverged: Vec<usize>,
}

impl<T: Real> ProximityTable<T> {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, from: usize, to: usize) -> T {
        self.values[from * self.size + to]
    }

    pub fn sources(&self) -> &[Option<ConceptId>] {
        &self.sources
    }
}

/// Runs one restarting walk per mapped label and tabulates the probabilities
/// at all mapped labels.
pub fn proximity_table<T: Real>(
    graph: &KnowledgeGraph,
    mapped: &[Option<ConceptId>],
    config: &RwrConfig<T>,
) -> Result<ProximityTable<T>> {
    for id in mapped.iter().flatten() {
        if id.0 >= graph.len() {
            return Err(Error::InvalidInput(format!(
                "mapped node {} out of range for graph of {} nodes",
                id.0,
                graph.len()
            )));
        }
    }
    let size = mapped.len();
    let mut values = vec![T::zero(); size * size];
    let mut unconverged = Vec::new();
    for (i, source) in mapped.iter().enumerate() {
        let Some(source) = source else { continue };
        let outcome = rwr_from(graph, *source, config)?;
        if !outcome.converged {
            unconverged.push(i);
        }
        for (j, target) in mapped.iter().enumerate() {
            if let Some(target) = target {
                values[i * size + j] = outcome.probabilities[target.0];
            }
        }
    }
    Ok(ProximityTable { size, values, sources: mapped.to_vec(), unconverged })
}
