//! The detector's input statistic `C = M X~' X~^T`.
//!
//! Each document is split into two halves of (almost) equal size by drawing
//! half its tokens without replacement, each half is row-normalized over the whole corpus, and `C[i][j]` pairs word `i` of
//! the second half with word `j` of the first. Because
//! `C[i][j] = M * G[i][j] / (r2[i] * r1[j])` with the integer co-count
//! `G = sum_m x'_m x_m^T`, accumulation is exact in `f64` and therefore
//! independent of document order, thread count and sharding.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Hypergeometric};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{CountMatrix, Corpus};
use crate::rng;

/// The two independent halves of a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPair {
    /// Half behind `X~` (columns of `C`).
    pub first: CountMatrix,
    /// Half behind `X~'` (rows of `C`).
    pub second: CountMatrix,
}

impl SplitPair {
    pub fn vocab_size(&self) -> usize {
        self.first.vocab_size()
    }

    pub fn num_docs(&self) -> usize {
        self.first.num_docs()
    }

    pub fn totals(&self) -> RowTotals {
        RowTotals {
            first: self.first.row_sums(),
            second: self.second.row_sums(),
        }
    }
}

/// Splits every document of `n` tokens into a uniformly random subset of
/// `n / 2` tokens and the rest (a fair coin gives the odd token). For iid
/// tokens the halves are independent given the topic mixture, which
/// per-cell binomial thinning does not achieve: there the half sizes are
/// anti-correlated and `E[C]` shrinks by `1 - 1/n`.
pub fn split_corpus(corpus: &Corpus, seed: u64) -> SplitPair {
    split_counts(corpus.counts(), seed, 0)
}

/// As [`split_corpus`], for a block of documents whose first document has
/// global index `doc_offset`. Randomness is keyed by global document index.
pub fn split_counts(counts: &CountMatrix, seed: u64, doc_offset: usize) -> SplitPair {
    let parts: Vec<((Vec<u32>, Vec<u32>), (Vec<u32>, Vec<u32>))> = (0..counts.num_docs())
        .into_par_iter()
        .map(|m| {
            let mut r = rng::stream(seed, rng::SPLIT, (doc_offset + m) as u64);
            let (words, cnts) = counts.doc(m);
            let mut left: u64 = cnts.iter().map(|&c| u64::from(c)).sum();
            let mut draws = left / 2 + u64::from(left % 2 == 1 && r.random::<bool>());
            let mut a = (Vec::new(), Vec::new());
            let mut b = (Vec::new(), Vec::new());
            for (&w, &c) in words.iter().zip(cnts) {
                let c64 = u64::from(c);
                let x = if draws == 0 {
                    0
                } else if c64 == left {
                    draws
                } else {
                    Hypergeometric::new(left, c64, draws).expect("valid urn").sample(&mut r)
                };
                left -= c64;
                draws -= x;
                let x = x as u32;
                if x > 0 {
                    a.0.push(w);
                    a.1.push(x);
                }
                if c - x > 0 {
                    b.0.push(w);
                    b.1.push(c - x);
                }
            }
            (a, b)
        })
        .collect();
    let (first, second): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    SplitPair {
        first: CountMatrix::from_sorted_parts(counts.vocab_size(), first),
        second: CountMatrix::from_sorted_parts(counts.vocab_size(), second),
    }
}

/// A count matrix viewed with its rows scaled to sum to one.
#[derive(Debug, Clone)]
pub struct RowNormalized<'a> {
    counts: &'a CountMatrix,
    row_sums: Vec<u64>,
}

pub fn row_normalize(counts: &CountMatrix) -> RowNormalized<'_> {
    RowNormalized {
        counts,
        row_sums: counts.row_sums(),
    }
}

impl RowNormalized<'_> {
    pub fn value(&self, word: usize, doc: usize) -> f64 {
        match self.row_sums[word] {
            0 => 0.0,
            s => f64::from(self.counts.get(word, doc)) / s as f64,
        }
    }

    pub fn zero_rows(&self) -> Vec<usize> {
        (0..self.row_sums.len()).filter(|&w| self.row_sums[w] == 0).collect()
    }

    pub fn row_sums(&self) -> &[u64] {
        &self.row_sums
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = self.counts.to_dense();
        for (w, &s) in self.row_sums.iter().enumerate() {
            if s > 0 {
                d.row_mut(w).scale_mut(1.0 / s as f64);
            }
        }
        d
    }
}

/// Corpus-wide per-word totals of each half: the row-normalization
/// constants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowTotals {
    pub first: Vec<u64>,
    pub second: Vec<u64>,
}

impl RowTotals {
    pub fn zeros(vocab_size: usize) -> Self {
        Self {
            first: vec![0; vocab_size],
            second: vec![0; vocab_size],
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.first.len()
    }

    pub fn add(&mut self, other: &RowTotals) {
        for (a, b) in self.first.iter_mut().zip(&other.first) {
            *a += b;
        }
        for (a, b) in self.second.iter_mut().zip(&other.second) {
            *a += b;
        }
    }

    /// Words absent from either half.
    pub fn zero_rows(&self) -> Vec<usize> {
        (0..self.vocab_size())
            .filter(|&w| self.first[w] == 0 || self.second[w] == 0)
            .collect()
    }

    fn inverse(v: &[u64]) -> Vec<f64> {
        v.iter().map(|&s| if s == 0 { 0.0 } else { 1.0 / s as f64 }).collect()
    }
}

/// Dense `W x W` co-occurrence statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct CoocMatrix {
    c: DMatrix<f64>,
    zero_rows: Vec<usize>,
    num_docs: usize,
}

impl CoocMatrix {
    /// Wraps a dense matrix, e.g. a population-level statistic. Rows listed
    /// in `zero_rows` are cleared.
    pub fn from_dense(mut c: DMatrix<f64>, mut zero_rows: Vec<usize>, num_docs: usize) -> Result<Self> {
        if !c.is_square() {
            return Err(Error::Dimension(format!("statistic is {:?}", c.shape())));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("statistic has non-finite entries".into()));
        }
        zero_rows.sort_unstable();
        zero_rows.dedup();
        if zero_rows.last().is_some_and(|&w| w >= c.nrows()) {
            return Err(Error::Dimension("zero row index out of range".into()));
        }
        for &w in &zero_rows {
            c.row_mut(w).fill(0.0);
        }
        Ok(Self {
            c,
            zero_rows,
            num_docs,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn vocab_size(&self) -> usize {
        self.c.nrows()
    }

    pub fn zero_rows(&self) -> &[usize] {
        &self.zero_rows
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    /// Mask of words eligible as candidates (not zero rows).
    pub fn active(&self) -> Vec<bool> {
        let mut a = vec![true; self.vocab_size()];
        for &w in &self.zero_rows {
            a[w] = false;
        }
        a
    }

    /// Multiplies every entry by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            c: &self.c * s,
            zero_rows: self.zero_rows.clone(),
            num_docs: self.num_docs,
        }
    }
}

/// `G = sum_m second_m first_m^T`, exact in `f64` for counts below 2^53.
pub fn co_counts(split: &SplitPair) -> Result<DMatrix<f64>> {
    check_shapes(split)?;
    let w = split.vocab_size();
    let mut g = DMatrix::<f64>::zeros(w, w);
    if w == 0 {
        return Ok(g);
    }
    let band = w.div_ceil(4 * rayon::current_num_threads()).max(1);
    g.as_mut_slice()
        .par_chunks_mut(w * band)
        .enumerate()
        .for_each(|(chunk, block)| {
            let lo = (chunk * band) as u32;
            let hi = lo + (block.len() / w) as u32;
            for m in 0..split.num_docs() {
                let (fw, fc) = split.first.doc(m);
                let start = fw.partition_point(|&x| x < lo);
                let end = fw.partition_point(|&x| x < hi);
                if start == end {
                    continue;
                }
                let (sw, sc) = split.second.doc(m);
                for (&j, &xj) in fw[start..end].iter().zip(&fc[start..end]) {
                    let col = &mut block[(j - lo) as usize * w..][..w];
                    let xj = f64::from(xj);
                    for (&i, &xi) in sw.iter().zip(sc) {
                        col[i as usize] += f64::from(xi) * xj;
                    }
                }
            }
        });
    Ok(g)
}

/// Applies `C = M * D2^-1 G D1^-1` in place and clears zero rows.
pub fn normalize_co_counts(mut g: DMatrix<f64>, totals: &RowTotals, num_docs: usize) -> Result<CoocMatrix> {
    let w = totals.vocab_size();
    if g.shape() != (w, w) {
        return Err(Error::Dimension("co-count matrix does not match totals".into()));
    }
    let inv1 = RowTotals::inverse(&totals.first);
    let inv2 = RowTotals::inverse(&totals.second);
    let m = num_docs as f64;
    g.as_mut_slice()
        .par_chunks_mut(w.max(1))
        .enumerate()
        .for_each(|(j, col)| {
            for (i, v) in col.iter_mut().enumerate() {
                *v = m * *v * inv2[i] * inv1[j];
            }
        });
    CoocMatrix::from_dense(g, totals.zero_rows(), num_docs)
}

pub fn cooc_matrix(split: &SplitPair) -> Result<CoocMatrix> {
    let g = co_counts(split)?;
    normalize_co_counts(g, &split.totals(), split.num_docs())
}

/// A block of documents' additive contribution to `C`, formed with the
/// corpus-wide normalization `totals` and document count `num_docs`.
pub fn partial_cooc(block: &SplitPair, totals: &RowTotals, num_docs: usize) -> Result<DMatrix<f64>> {
    let g = co_counts(block)?;
    Ok(normalize_co_counts(g, totals, num_docs)?.c)
}

/// `C_block u` for each column `u` of `dirs` (`W x P`), without forming
/// `C`: `M * sum_m D2^-1 x'_m (x_m^T D1^-1 u)`. Returns `W x P`.
pub fn partial_cooc_times(
    block: &SplitPair,
    totals: &RowTotals,
    num_docs: usize,
    dirs: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_shapes(block)?;
    let w = block.vocab_size();
    if dirs.nrows() != w || totals.vocab_size() != w {
        return Err(Error::Dimension("directions do not match vocabulary".into()));
    }
    let inv1 = RowTotals::inverse(&totals.first);
    let inv2 = RowTotals::inverse(&totals.second);
    let m = num_docs as f64;
    let mut out = DMatrix::zeros(w, dirs.ncols());
    out.as_mut_slice()
        .par_chunks_mut(w.max(1))
        .zip(dirs.as_slice().par_chunks(w.max(1)))
        .for_each(|(col, u)| {
            for d in 0..block.num_docs() {
                let (fw, fc) = block.first.doc(d);
                let s: f64 = fw
                    .iter()
                    .zip(fc)
                    .map(|(&j, &x)| f64::from(x) * inv1[j as usize] * u[j as usize])
                    .sum();
                if s == 0.0 {
                    continue;
                }
                let (sw, sc) = block.second.doc(d);
                for (&i, &x) in sw.iter().zip(sc) {
                    col[i as usize] += m * f64::from(x) * inv2[i as usize] * s;
                }
            }
        });
    for w in totals.zero_rows() {
        out.row_mut(w).fill(0.0);
    }
    Ok(out)
}

fn check_shapes(split: &SplitPair) -> Result<()> {
    if split.first.vocab_size() != split.second.vocab_size()
        || split.first.num_docs() != split.second.num_docs()
    {
        return Err(Error::Dimension("split halves differ in shape".into()));
    }
    Ok(())
}
