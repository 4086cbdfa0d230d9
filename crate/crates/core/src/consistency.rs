//! Label-consistency matrix: construction from walk proximities, KNN
//! sparsification, and the smoothed quadratic penalty used during training.
//!
//! Two mathematically equivalent evaluations of the quadratic form are kept
//! deliberately separate: `pairwise_quadratic` walks every index pair and is
//! quadratic in the label count, `laplacian_quadratic` visits only stored
//! entries plus the degree diagonal. Tests and the scaling bench rely on the
//! two routes staying independent.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kgraph::ProximityTable;
use crate::scalar::Real;

/// Symmetric non-negative label affinity with zero diagonal, stored as upper
/// triangle coordinates plus a dense degree vector.
#[derive(Clone, Debug)]
pub struct ConsistencyMatrix<T> {
    size: usize,
    entries: Vec<(usize, usize, T)>,
    degree: Vec<T>,
}

impl<T: Real> ConsistencyMatrix<T> {
    /// Builds from `(i, j, value)` triples. Pairs are canonicalized to
    /// `i < j`, zero values are dropped, duplicates and diagonal or negative
    /// entries are rejected.
    pub fn from_entries<I>(size: usize, triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, T)>,
    {
        let mut entries: Vec<(usize, usize, T)> = Vec::new();
        for (i, j, value) in triples {
            if i >= size || j >= size {
                return Err(Error::InvalidInput(format!(
                    "entry ({i}, {j}) out of range for {size} labels"
                )));
            }
            if i == j {
                return Err(Error::InvalidInput(format!("diagonal entry at index {i}")));
            }
            if !value.is_finite() || value < T::zero() {
                return Err(Error::InvalidInput(format!(
                    "consistency value at ({i}, {j}) must be finite and non-negative, got {value}"
                )));
            }
            if value == T::zero() {
                continue;
            }
            let (lo, hi) = if i < j { (i, j) } else { (j, i) };
            entries.push((lo, hi, value));
        }
        entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
                return Err(Error::InvalidInput(format!(
                    "duplicate entry ({}, {})",
                    pair[0].0, pair[0].1
                )));
            }
        }
        let mut degree = vec![T::zero(); size];
        for &(i, j, value) in &entries {
            degree[i] += value;
            degree[j] += value;
        }
        Ok(ConsistencyMatrix { size, entries, degree })
    }

    /// Matrix with no stored entries.
    pub fn zero(size: usize) -> Self {
        ConsistencyMatrix { size, entries: Vec::new(), degree: vec![T::zero(); size] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Row sums of the symmetric matrix.
    pub fn degrees(&self) -> &[T] {
        &self.degree
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.entries.iter().copied()
    }

    /// Symmetric lookup; absent pairs and the diagonal read as zero.
    pub fn get(&self, i: usize, j: usize) -> T {
        if i == j {
            return T::zero();
        }
        let key = if i < j { (i, j) } else { (j, i) };
        match self.entries.binary_search_by(|e| (e.0, e.1).cmp(&key)) {
            Ok(pos) => self.entries[pos].2,
            Err(_) => T::zero(),
        }
    }

    fn check_len(&self, p: &[T]) -> Result<()> {
        if p.len() != self.size {
            return Err(Error::Dimension(format!(
                "probability vector has length {}, matrix has {} labels",
                p.len(),
                self.size
            )));
        }
        Ok(())
    }

    /// Quadratic form through the degree decomposition,
    /// `sum_i D_i p_i^2 - 2 sum_(i<j) S_ij p_i p_j`, touching only stored
    /// entries plus one degree term per label. Clamps the result to zero when
    /// cancellation leaves a negative remainder.
    pub fn laplacian_quadratic(&self, p: &[T]) -> Result<T> {
        Ok(self.laplacian_quadratic_counted(p)?.0)
    }

    /// Same computation, also reporting the number of visited terms (stored
    /// entries plus degree terms) so tests can pin the work to nnz + L.
    pub fn laplacian_quadratic_counted(&self, p: &[T]) -> Result<(T, usize)> {
        self.check_len(p)?;
        let mut visited = 0usize;
        let mut diagonal = T::zero();
        for (i, &d) in self.degree.iter().enumerate() {
            diagonal += d * p[i] * p[i];
            visited += 1;
        }
        let mut cross = T::zero();
        for &(i, j, value) in &self.entries {
            cross += value * p[i] * p[j];
            visited += 1;
        }
        let two = T::of(2.0);
        let q = diagonal - two * cross;
        Ok((q.max(T::zero()), visited))
    }

    /// Direct double sum over all index pairs; quadratic in the label count
    /// by construction. Serves as the reference route for the sparse form.
    pub fn pairwise_quadratic(&self, p: &[T]) -> Result<T> {
        self.check_len(p)?;
        let mut total = T::zero();
        for i in 0..self.size {
            for j in (i + 1)..self.size {
                let s = self.get(i, j);
                if s != T::zero() {
                    let d = p[i] - p[j];
                    total += s * d * d;
                }
            }
        }
        Ok(total)
    }

    /// Smoothed square root of the quadratic form and its gradient,
    /// `sqrt(q + eps^2) - eps` and `(D - S) p / sqrt(q + eps^2)`.
    /// The gradient is exactly zero when `q` is zero.
    pub fn regularizer(&self, p: &[T], epsilon: T) -> Result<(T, Vec<T>)> {
        let (value, gradient, _) = self.regularizer_counted(p, epsilon)?;
        Ok((value, gradient))
    }

    /// Counted variant of [`Self::regularizer`]; see
    /// [`Self::laplacian_quadratic_counted`] for the meaning of the count.
    pub fn regularizer_counted(&self, p: &[T], epsilon: T) -> Result<(T, Vec<T>, usize)> {
        if epsilon < T::zero() || !epsilon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "smoothing epsilon must be finite and non-negative, got {epsilon}"
            )));
        }
        let (q, mut visited) = self.laplacian_quadratic_counted(p)?;
        let root = (q + epsilon * epsilon).sqrt();
        let value = root - epsilon;
        if q == T::zero() {
            return Ok((value, vec![T::zero(); self.size], visited));
        }
        let mut neighbor_sum = vec![T::zero(); self.size];
        for &(i, j, s) in &self.entries {
            neighbor_sum[i] += s * p[j];
            neighbor_sum[j] += s * p[i];
            visited += 1;
        }
        let gradient = (0..self.size)
            .map(|i| {
                visited += 1;
                (self.degree[i] * p[i] - neighbor_sum[i]) / root
            })
            .collect();
        Ok((value, gradient, visited))
    }

    /// Keeps an entry when its value ranks among the `k` largest of its row
    /// or of its column; ties with the k-th largest value are all kept.
    pub fn knn_reduce(&self, k: usize) -> Result<ConsistencyMatrix<T>> {
        if k == 0 {
            return Err(Error::InvalidInput("knn parameter must be at least 1".into()));
        }
        let mut row_values: Vec<Vec<T>> = vec![Vec::new(); self.size];
        for &(i, j, value) in &self.entries {
            row_values[i].push(value);
            row_values[j].push(value);
        }
        let thresholds: Vec<Option<T>> = row_values
            .into_iter()
            .map(|mut values| {
                if values.len() <= k {
                    None
                } else {
                    values.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
                    Some(values[k - 1])
                }
            })
            .collect();
        let kept = self.entries.iter().copied().filter(|&(i, j, value)| {
            let in_row = thresholds[i].is_none_or(|t| value >= t);
            let in_col = thresholds[j].is_none_or(|t| value >= t);
            in_row || in_col
        });
        ConsistencyMatrix::from_entries(self.size, kept)
    }

    /// Writes the `"L nnz"` header followed by one `i j value` line per
    /// stored entry, 17 significant digits.
    pub fn write_coo<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        writeln!(writer, "{} {}", self.size, self.entries.len())?;
        for &(i, j, value) in &self.entries {
            writeln!(writer, "{} {} {:.16e}", i, j, value.to_double())?;
        }
        Ok(())
    }

    pub fn write_coo_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = BufWriter::new(file);
        self.write_coo(&mut writer).map_err(|e| Error::io(path, e))?;
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_coo<R: BufRead>(reader: R, origin: &Path) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "missing header line"))?;
        let header = header.map_err(|e| Error::io(origin, e))?;
        let mut parts = header.split_whitespace();
        let size: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::parse(origin, 1, "header must start with the label count"))?;
        let nnz: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::parse(origin, 1, "header must contain the entry count"))?;
        if parts.next().is_some() {
            return Err(Error::parse(origin, 1, "header has trailing fields"));
        }

        let mut triples = Vec::with_capacity(nnz);
        for (lineno, line) in lines {
            let lineno = lineno + 1;
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let parse_index = |field: Option<&str>| -> Result<usize> {
                field
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::parse(origin, lineno, "expected `i j value`"))
            };
            let i = parse_index(fields.next())?;
            let j = parse_index(fields.next())?;
            let value: f64 = fields
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::parse(origin, lineno, "expected `i j value`"))?;
            if fields.next().is_some() {
                return Err(Error::parse(origin, lineno, "trailing fields after value"));
            }
            if i >= j {
                return Err(Error::parse(origin, lineno, "entries must satisfy i < j"));
            }
            if value <= 0.0 || !value.is_finite() {
                return Err(Error::parse(origin, lineno, "values must be finite and positive"));
            }
            triples.push((i, j, T::of(value)));
        }
        if triples.len() != nnz {
            return Err(Error::InvalidInput(format!(
                "{} declares {nnz} entries but contains {}",
                origin.display(),
                triples.len()
            )));
        }
        ConsistencyMatrix::from_entries(size, triples)
    }

    pub fn read_coo_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_coo(BufReader::new(file), path)
    }
}

/// Geometric mean of the two directed walk probabilities for every label
/// pair, `S_ij = sqrt(R_ij R_ji)`, diagonal excluded.
pub fn build_consistency<T: Real>(table: &ProximityTable<T>) -> Result<ConsistencyMatrix<T>> {
    let size = table.size();
    for i in 0..size {
        for j in 0..size {
            let value = table.get(i, j);
            if !value.is_finite() || value < T::zero() {
                return Err(Error::InvalidInput(format!(
                    "proximity entry ({i}, {j}) must be finite and non-negative, got {value}"
                )));
            }
        }
    }
    let mut triples = Vec::new();
    for i in 0..size {
        for j in (i + 1)..size {
            let value = (table.get(i, j) * table.get(j, i)).sqrt();
            if value > T::zero() {
                triples.push((i, j, value));
            }
        }
    }
    ConsistencyMatrix::from_entries(size, triples)
}
