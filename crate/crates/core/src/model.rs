//! Topic-model domain types and population-level quantities.
//!
//! A topic matrix `beta` is `W x K` and column-stochastic. Topic proportions
//! `theta` are drawn from a [`PriorModel`] with mean `a` and correlation
//! `R = E[theta theta^T]`; the detector's geometry is governed by the
//! normalized correlation `R' = diag(a)^-1 R diag(a)^-1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column sums must be within this of 1.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub column_stochastic: bool,
    pub separable: bool,
}

/// Checks column-stochasticity and separability of a raw `W x K` matrix.
///
/// An entry counts as zero when its absolute value is `<= zero_tol`.
pub fn validate_topic_matrix(entries: &DMatrix<f64>, zero_tol: f64) -> Result<ValidationReport> {
    let (w, k) = entries.shape();
    if k == 0 || w < k {
        return Err(Error::Dimension(format!(
            "topic matrix needs W >= K >= 1, got W = {w}, K = {k}"
        )));
    }
    let nonnegative = entries.iter().all(|&v| v >= 0.0 && v.is_finite());
    let column_stochastic = nonnegative
        && entries
            .column_iter()
            .all(|col| (col.sum() - 1.0).abs() <= STOCHASTIC_TOL);
    let separable = (0..k).all(|topic| {
        (0..w).any(|i| support_topic(entries, i, zero_tol) == Some(topic))
    });
    Ok(ValidationReport {
        column_stochastic,
        separable,
    })
}

/// The single topic on which row `i` is positive, if the row is novel.
fn support_topic(entries: &DMatrix<f64>, i: usize, zero_tol: f64) -> Option<usize> {
    let mut found = None;
    for (k, &v) in entries.row(i).iter().enumerate() {
        if v.abs() > zero_tol {
            if found.is_some() {
                return None;
            }
            found = Some(k);
        }
    }
    found
}

/// A column-stochastic `W x K` topic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicMatrix {
    beta: DMatrix<f64>,
}

impl TopicMatrix {
    pub fn new(beta: DMatrix<f64>) -> Result<Self> {
        let report = validate_topic_matrix(&beta, 0.0)?;
        if !report.column_stochastic {
            return Err(Error::InvalidInput(
                "topic matrix must be nonnegative with columns summing to 1".into(),
            ));
        }
        Ok(Self { beta })
    }

    /// Scales every column to sum to one. Columns must have positive mass.
    pub fn from_column_masses(mut beta: DMatrix<f64>) -> Result<Self> {
        for (k, mut col) in beta.column_iter_mut().enumerate() {
            let s = col.sum();
            if !(s > 0.0) {
                return Err(Error::InvalidInput(format!("column {k} has no mass")));
            }
            col /= s;
        }
        Self::new(beta)
    }

    /// Row-major construction, mostly for tests and fixtures.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let w = rows.len();
        let k = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(DMatrix::from_fn(w, k, |i, j| rows[i][j]))
    }

    pub fn vocab_size(&self) -> usize {
        self.beta.nrows()
    }

    pub fn num_topics(&self) -> usize {
        self.beta.ncols()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.beta
    }

    pub fn validate(&self, zero_tol: f64) -> ValidationReport {
        validate_topic_matrix(&self.beta, zero_tol).expect("dimensions checked at construction")
    }

    /// Document word distribution `beta * theta`.
    pub fn mix(&self, theta: &[f64]) -> DVector<f64> {
        &self.beta * DVector::from_column_slice(theta)
    }

    /// Same model with topics reordered: new topic `t` is old topic `perm[t]`.
    pub fn permute_topics(&self, perm: &[usize]) -> Self {
        let beta = DMatrix::from_fn(self.vocab_size(), self.num_topics(), |i, t| {
            self.beta[(i, perm[t])]
        });
        Self { beta }
    }
}

/// All novel words of every topic. Group `k` belongs to topic `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NovelWordSets {
    pub groups: Vec<Vec<usize>>,
}

impl NovelWordSets {
    /// Groups sorted by smallest member, which removes the topic-permutation
    /// ambiguity.
    pub fn canonical(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = self
            .groups
            .iter()
            .map(|g| {
                let mut g = g.clone();
                g.sort_unstable();
                g
            })
            .collect();
        groups.sort();
        groups
    }

    pub fn equivalent(&self, other: &NovelWordSets) -> bool {
        self.canonical() == other.canonical()
    }

    pub fn is_novel(&self, word: usize) -> bool {
        self.topic_of(word).is_some()
    }

    pub fn topic_of(&self, word: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&word))
    }

    /// True iff `selected` picks exactly one word from each group.
    pub fn is_transversal(&self, selected: &[usize]) -> bool {
        if selected.len() != self.groups.len() {
            return false;
        }
        let mut hit = vec![false; self.groups.len()];
        for &w in selected {
            match self.topic_of(w) {
                Some(t) if !hit[t] => hit[t] = true,
                _ => return false,
            }
        }
        true
    }
}

pub fn novel_words_of(beta: &TopicMatrix, zero_tol: f64) -> Result<NovelWordSets> {
    let mut groups = vec![Vec::new(); beta.num_topics()];
    for i in 0..beta.vocab_size() {
        if let Some(k) = support_topic(beta.entries(), i, zero_tol) {
            groups[k].push(i);
        }
    }
    if let Some(topic) = groups.iter().position(Vec::is_empty) {
        return Err(Error::NotSeparable { topic });
    }
    Ok(NovelWordSets { groups })
}

/// `diag(a)^-1 R diag(a)^-1`.
pub fn normalized_correlation(corr: &DMatrix<f64>, mean: &DVector<f64>) -> Result<DMatrix<f64>> {
    let k = mean.len();
    if corr.shape() != (k, k) {
        return Err(Error::Dimension(format!(
            "correlation is {:?}, mean has length {k}",
            corr.shape()
        )));
    }
    if let Some(j) = mean.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::DegeneratePrior(format!(
            "mean component {j} is {} (must be > 0)",
            mean[j]
        )));
    }
    Ok(DMatrix::from_fn(k, k, |i, j| corr[(i, j)] / mean[i] / mean[j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorKind {
    Dirichlet { concentration: Vec<f64> },
    /// Finitely supported prior: `support[s]` is drawn with probability `weights[s]`.
    Mixture {
        support: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
}

/// Prior on topic-proportion columns, with its exact first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorModel {
    kind: PriorKind,
    mean: DVector<f64>,
    corr: DMatrix<f64>,
}

const SIMPLEX_TOL: f64 = 1e-9;

impl PriorModel {
    pub fn new(kind: PriorKind) -> Result<Self> {
        let (mean, corr) = match &kind {
            PriorKind::Dirichlet { concentration } => dirichlet_moments(concentration)?,
            PriorKind::Mixture { support, weights } => mixture_moments(support, weights)?,
        };
        if let Some(j) = mean.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::DegeneratePrior(format!(
                "topic {j} has zero expected proportion"
            )));
        }
        Ok(Self { kind, mean, corr })
    }

    pub fn dirichlet(concentration: Vec<f64>) -> Result<Self> {
        Self::new(PriorKind::Dirichlet { concentration })
    }

    pub fn symmetric_dirichlet(k: usize, alpha: f64) -> Result<Self> {
        Self::dirichlet(vec![alpha; k])
    }

    pub fn mixture(support: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        Self::new(PriorKind::Mixture { support, weights })
    }

    /// Prior concentrated on a single point of the simplex.
    pub fn point_mass(theta: Vec<f64>) -> Result<Self> {
        Self::mixture(vec![theta], vec![1.0])
    }

    pub fn kind(&self) -> &PriorKind {
        &self.kind
    }

    pub fn num_topics(&self) -> usize {
        self.mean.len()
    }

    /// `a = E[theta]`.
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// `R = E[theta theta^T]`.
    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.corr
    }

    pub fn normalized_correlation(&self) -> DMatrix<f64> {
        normalized_correlation(&self.corr, &self.mean).expect("mean is positive by construction")
    }

    pub fn permute_topics(&self, perm: &[usize]) -> Result<Self> {
        let kind = match &self.kind {
            PriorKind::Dirichlet { concentration } => PriorKind::Dirichlet {
                concentration: perm.iter().map(|&p| concentration[p]).collect(),
            },
            PriorKind::Mixture { support, weights } => PriorKind::Mixture {
                support: support
                    .iter()
                    .map(|pt| perm.iter().map(|&p| pt[p]).collect())
                    .collect(),
                weights: weights.clone(),
            },
        };
        Self::new(kind)
    }
}

fn dirichlet_moments(alpha: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if alpha.is_empty() {
        return Err(Error::DegeneratePrior("empty concentration vector".into()));
    }
    if alpha.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::DegeneratePrior(
            "Dirichlet concentrations must be positive and finite".into(),
        ));
    }
    let k = alpha.len();
    let a0: f64 = alpha.iter().sum();
    let mean = DVector::from_iterator(k, alpha.iter().map(|&v| v / a0));
    let denom = a0 * (a0 + 1.0);
    let corr = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i] * (alpha[i] + 1.0) / denom
        } else {
            alpha[i] * alpha[j] / denom
        }
    });
    Ok((mean, corr))
}

fn mixture_moments(support: &[Vec<f64>], weights: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if support.is_empty() || support.len() != weights.len() {
        return Err(Error::DegeneratePrior(
            "mixture needs one weight per support point and at least one point".into(),
        ));
    }
    let k = support[0].len();
    if k == 0 || support.iter().any(|p| p.len() != k) {
        return Err(Error::Dimension("support points must share a dimension".into()));
    }
    for (s, p) in support.iter().enumerate() {
        let total: f64 = p.iter().sum();
        if p.iter().any(|&v| v < 0.0 || !v.is_finite()) || (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::DegeneratePrior(format!(
                "support point {s} is not on the simplex"
            )));
        }
    }
    let wsum: f64 = weights.iter().sum();
    if weights.iter().any(|&v| v < 0.0 || !v.is_finite()) || (wsum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::DegeneratePrior(
            "mixture weights must be nonnegative and sum to 1".into(),
        ));
    }
    let mut mean = DVector::zeros(k);
    let mut corr = DMatrix::zeros(k, k);
    for (p, &w) in support.iter().zip(weights) {
        let v = DVector::from_column_slice(p);
        mean.axpy(w, &v, 1.0);
        corr.ger(w, &v, &v, 1.0);
    }
    Ok((mean, corr))
}

/// Rows of `beta diag(a)` normalized to sum to one. Row `i` is the
/// posterior topic distribution of word `i` under the prior mean.
pub fn topic_posteriors(beta: &TopicMatrix, mean: &DVector<f64>) -> Result<DMatrix<f64>> {
    let (w, k) = (beta.vocab_size(), beta.num_topics());
    if mean.len() != k {
        return Err(Error::Dimension(format!(
            "prior has {} topics, topic matrix has {k}",
            mean.len()
        )));
    }
    let b = beta.entries();
    let mut out = DMatrix::zeros(w, k);
    for i in 0..w {
        let mass: f64 = (0..k).map(|t| b[(i, t)] * mean[t]).sum();
        if !(mass > 0.0) {
            return Err(Error::DegenerateWord { word: i });
        }
        for t in 0..k {
            out[(i, t)] = b[(i, t)] * mean[t] / mass;
        }
    }
    Ok(out)
}

/// The `M -> infinity` limit of the co-occurrence statistic:
/// `C[i][j] = beta_i R beta_j^T / ((beta_i a)(beta_j a))`, computed as
/// `B~ R' B~^T` so rows of novel words of one topic come out bit-identical.
pub fn population_cooc(beta: &TopicMatrix, prior: &PriorModel) -> Result<DMatrix<f64>> {
    let post = topic_posteriors(beta, prior.mean())?;
    let rp = prior.normalized_correlation();
    Ok(&post * rp * post.transpose())
}

/// `C_ii - 2 C_ij + C_jj`, the separation statistic used for neighborhoods.
#[inline]
pub fn pair_statistic(c: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    c[(i, i)] - 2.0 * c[(i, j)] + c[(j, j)]
}

/// Separation constants of a separable model, read off `population_cooc`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Separation {
    /// Smallest statistic over novel words of distinct topics.
    pub cross_topic: f64,
    /// Smallest statistic between a novel word and any word that is not a
    /// novel word of the same topic.
    pub novel_to_rest: f64,
}

pub fn population_separation(
    beta: &TopicMatrix,
    prior: &PriorModel,
    zero_tol: f64,
) -> Result<Separation> {
    let novel = novel_words_of(beta, zero_tol)?;
    let c = population_cooc(beta, prior)?;
    let w = beta.vocab_size();
    let mut cross_topic = f64::INFINITY;
    let mut novel_to_rest = f64::INFINITY;
    for (k, group) in novel.groups.iter().enumerate() {
        for &i in group {
            for j in 0..w {
                if group.contains(&j) {
                    continue;
                }
                let s = pair_statistic(&c, i, j);
                novel_to_rest = novel_to_rest.min(s);
                if novel.topic_of(j).is_some_and(|t| t != k) {
                    cross_topic = cross_topic.min(s);
                }
            }
        }
    }
    Ok(Separation {
        cross_topic,
        novel_to_rest,
    })
}

/// Sparse `W x M` count matrix stored by document (compressed columns).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    vocab_size: usize,
    doc_ptr: Vec<usize>,
    words: Vec<u32>,
    counts: Vec<u32>,
}

impl CountMatrix {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            doc_ptr: vec![0],
            words: Vec::new(),
            counts: Vec::new(),
        }
    }

    /// Appends one document. Entries may arrive in any order; zero counts
    /// are dropped and duplicate words are merged.
    pub fn push_doc<I>(&mut self, entries: I) -> Result<()>
    where
        I: IntoIterator<Item = (usize, u32)>,
    {
        let mut doc: Vec<(u32, u32)> = Vec::new();
        for (w, c) in entries {
            if w >= self.vocab_size {
                return Err(Error::Dimension(format!(
                    "word {w} outside vocabulary of size {}",
                    self.vocab_size
                )));
            }
            if c > 0 {
                doc.push((w as u32, c));
            }
        }
        doc.sort_unstable_by_key(|&(w, _)| w);
        let start = self.words.len();
        for (w, c) in doc {
            if self.words.len() > start && *self.words.last().unwrap() == w {
                *self.counts.last_mut().unwrap() += c;
            } else {
                self.words.push(w);
                self.counts.push(c);
            }
        }
        self.doc_ptr.push(self.words.len());
        Ok(())
    }

    pub fn from_docs<I, D>(vocab_size: usize, docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = (usize, u32)>,
    {
        let mut m = Self::new(vocab_size);
        for d in docs {
            m.push_doc(d)?;
        }
        Ok(m)
    }

    /// Assembles from per-document sorted `(words, counts)` pairs without checks.
    pub(crate) fn from_sorted_parts(vocab_size: usize, parts: Vec<(Vec<u32>, Vec<u32>)>) -> Self {
        let nnz = parts.iter().map(|(w, _)| w.len()).sum();
        let mut m = Self {
            vocab_size,
            doc_ptr: Vec::with_capacity(parts.len() + 1),
            words: Vec::with_capacity(nnz),
            counts: Vec::with_capacity(nnz),
        };
        m.doc_ptr.push(0);
        for (w, c) in parts {
            m.words.extend_from_slice(&w);
            m.counts.extend_from_slice(&c);
            m.doc_ptr.push(m.words.len());
        }
        m
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.words.len()
    }

    /// `(word indices, counts)` of document `m`, sorted by word.
    pub fn doc(&self, m: usize) -> (&[u32], &[u32]) {
        let r = self.doc_ptr[m]..self.doc_ptr[m + 1];
        (&self.words[r.clone()], &self.counts[r])
    }

    pub fn doc_len(&self, m: usize) -> u64 {
        self.doc(m).1.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn get(&self, word: usize, doc: usize) -> u32 {
        let (w, c) = self.doc(doc);
        w.binary_search(&(word as u32)).map_or(0, |p| c[p])
    }

    /// Total count of each word over all documents.
    pub fn row_sums(&self) -> Vec<u64> {
        let mut sums = vec![0u64; self.vocab_size];
        for (&w, &c) in self.words.iter().zip(&self.counts) {
            sums[w as usize] += u64::from(c);
        }
        sums
    }

    /// Documents `range` as a new matrix.
    pub fn slice_docs(&self, range: std::ops::Range<usize>) -> Self {
        let lo = self.doc_ptr[range.start];
        let hi = self.doc_ptr[range.end];
        Self {
            vocab_size: self.vocab_size,
            doc_ptr: self.doc_ptr[range.start..=range.end]
                .iter()
                .map(|p| p - lo)
                .collect(),
            words: self.words[lo..hi].to_vec(),
            counts: self.counts[lo..hi].to_vec(),
        }
    }

    /// Appends all documents of `other`.
    pub fn extend(&mut self, other: &CountMatrix) -> Result<()> {
        if other.vocab_size != self.vocab_size {
            return Err(Error::Dimension("vocabulary sizes differ".into()));
        }
        let base = self.words.len();
        self.words.extend_from_slice(&other.words);
        self.counts.extend_from_slice(&other.counts);
        self.doc_ptr
            .extend(other.doc_ptr[1..].iter().map(|p| p + base));
        Ok(())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.vocab_size, self.num_docs());
        for m in 0..self.num_docs() {
            let (w, c) = self.doc(m);
            for (&wi, &ci) in w.iter().zip(c) {
                d[(wi as usize, m)] = f64::from(ci);
            }
        }
        d
    }
}

/// Bag-of-words corpus. `doc_len` is `Some(N)` when every document has
/// exactly `N` tokens, which holds for all synthetic corpora.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    counts: CountMatrix,
    doc_len: Option<u64>,
}

impl Corpus {
    pub fn new(counts: CountMatrix) -> Self {
        let mut lens = (0..counts.num_docs()).map(|m| counts.doc_len(m));
        let first = lens.next();
        let doc_len = match first {
            Some(n) if lens.all(|l| l == n) => Some(n),
            _ => None,
        };
        Self { counts, doc_len }
    }

    /// Requires every document to have exactly `n` tokens.
    pub fn with_doc_len(counts: CountMatrix, n: u64) -> Result<Self> {
        if let Some(m) = (0..counts.num_docs()).find(|&m| counts.doc_len(m) != n) {
            return Err(Error::InvalidInput(format!(
                "document {m} has {} tokens, expected {n}",
                counts.doc_len(m)
            )));
        }
        Ok(Self {
            counts,
            doc_len: Some(n),
        })
    }

    pub fn counts(&self) -> &CountMatrix {
        &self.counts
    }

    pub fn vocab_size(&self) -> usize {
        self.counts.vocab_size()
    }

    pub fn num_docs(&self) -> usize {
        self.counts.num_docs()
    }

    pub fn doc_len(&self) -> Option<u64> {
        self.doc_len
    }
}
