//! Random-projection novel-word detection.
//!
//! Given the co-occurrence statistic `C`, each word gets a neighborhood of
//! words that are "far" from it, a score `phat` equal to the fraction of
//! isotropic random directions on which its row of `C` beats every row in
//! its neighborhood, and then `K` mutually far words are picked in
//! decreasing order of score.

use std::time::Instant;

use fixedbitset::FixedBitSet;
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cooc::{cooc_matrix, split_corpus, CoocMatrix};
use crate::error::{Error, Result};
use crate::model::{pair_statistic, Corpus};
use crate::rng;

/// Default quantile for [`estimate_d`].
pub const D_QUANTILE: f64 = 0.1;

/// Projections are generated and evaluated in blocks of this many.
const PROJECTION_BLOCK: usize = 32;

/// Above this many ordered pairs, [`estimate_d`] uses a strided subset.
const MAX_QUANTILE_PAIRS: usize = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DPolicy {
    Given { d: f64 },
    Estimated { quantile: f64 },
}

impl Default for DPolicy {
    fn default() -> Self {
        DPolicy::Estimated {
            quantile: D_QUANTILE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub k: usize,
    pub projections: usize,
    pub d: DPolicy,
    pub seed: u64,
    /// Seed for the corpus split; derived from `seed` when absent.
    #[serde(default)]
    pub split_seed: Option<u64>,
    /// Words excluded from candidacy in addition to zero rows.
    #[serde(default)]
    pub exclude: Vec<usize>,
}

impl DetectorConfig {
    pub fn new(k: usize, projections: usize, seed: u64) -> Self {
        Self {
            k,
            projections,
            d: DPolicy::default(),
            seed,
            split_seed: None,
            exclude: Vec::new(),
        }
    }

    pub fn with_d(mut self, d: f64) -> Self {
        self.d = DPolicy::Given { d };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.projections == 0 {
            return Err(Error::InvalidInput("need K >= 1 and P >= 1".into()));
        }
        match self.d {
            DPolicy::Given { d } if !(d > 0.0 && d.is_finite()) => {
                Err(Error::InvalidInput(format!("d must be positive, got {d}")))
            }
            DPolicy::Estimated { quantile } if !(0.0..=1.0).contains(&quantile) => {
                Err(Error::InvalidInput(format!("quantile must be in [0, 1], got {quantile}")))
            }
            _ => Ok(()),
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed
            .unwrap_or_else(|| rng::child_seed(self.seed, rng::SPLIT, 0))
    }

    pub fn projection_seed(&self) -> u64 {
        rng::child_seed(self.seed, rng::PROJECTION, 0)
    }
}

/// `Nbd(i)` for every word, as bitsets over the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhoods {
    sets: Vec<FixedBitSet>,
    active: Vec<bool>,
}

impl Neighborhoods {
    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.sets[i].contains(j)
    }

    pub fn size(&self, i: usize) -> usize {
        self.sets[i].count_ones(..)
    }

    pub fn sizes(&self) -> Vec<usize> {
        (0..self.sets.len()).map(|i| self.size(i)).collect()
    }

    pub fn members(&self, i: usize) -> Vec<usize> {
        self.sets[i].ones().collect()
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active[i]
    }

    pub fn vocab_size(&self) -> usize {
        self.sets.len()
    }

    /// Neighborhoods from explicit lists, all words active.
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let w = lists.len();
        let sets = lists
            .iter()
            .map(|l| {
                let mut s = FixedBitSet::with_capacity(w);
                l.iter().for_each(|&j| s.insert(j));
                s
            })
            .collect();
        Self {
            sets,
            active: vec![true; w],
        }
    }

    pub fn heap_bytes(&self) -> usize {
        self.sets.iter().map(|s| s.len().div_ceil(8)).sum::<usize>() + self.active.len()
    }
}

fn active_mask(c: &CoocMatrix, exclude: &[usize]) -> Vec<bool> {
    let mut a = c.active();
    for &w in exclude {
        if w < a.len() {
            a[w] = false;
        }
    }
    a
}

/// `Nbd(i) = {j : C_ii - 2 C_ij + C_jj >= d/2}` over active words.
pub fn neighborhoods(c: &CoocMatrix, d: f64) -> Neighborhoods {
    neighborhoods_masked(c.matrix(), &c.active(), d)
}

pub(crate) fn neighborhoods_masked(c: &DMatrix<f64>, active: &[bool], d: f64) -> Neighborhoods {
    let w = c.nrows();
    let half = d / 2.0;
    let sets = (0..w)
        .into_par_iter()
        .map(|i| {
            let mut s = FixedBitSet::with_capacity(w);
            if active[i] {
                for j in (0..w).filter(|&j| j != i && active[j]) {
                    if pair_statistic(c, i, j) >= half {
                        s.insert(j);
                    }
                }
            }
            s
        })
        .collect();
    Neighborhoods {
        sets,
        active: active.to_vec(),
    }
}

/// Fills `dirs` (`W x block`) with standard normal directions `first..`.
pub(crate) fn directions(w: usize, first: usize, count: usize, seed: u64) -> DMatrix<f64> {
    let mut dirs = DMatrix::zeros(w, count);
    for (k, mut col) in dirs.column_iter_mut().enumerate() {
        let mut r = rng::stream(seed, rng::PROJECTION, (first + k) as u64);
        for v in col.iter_mut() {
            *v = StandardNormal.sample(&mut r);
        }
    }
    dirs
}

/// The random direction `u_r`.
pub fn projection_direction(w: usize, r: usize, seed: u64) -> Vec<f64> {
    directions(w, r, 1, seed).as_slice().to_vec()
}

/// Words whose projection is at least that of every word in their
/// neighborhood, for one vector of projected values.
pub fn projection_winners(values: &[f64], nbd: &Neighborhoods) -> Vec<usize> {
    let w = values.len();
    let mut order: Vec<usize> = (0..w).filter(|&i| nbd.is_active(i)).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    // `above` holds every word with a strictly larger value than the group
    // currently being examined; a word wins iff no neighbor is in it.
    let mut above = FixedBitSet::with_capacity(w);
    let mut winners = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let v = values[order[start]];
        let end = start + order[start..].iter().take_while(|&&j| values[j] == v).count();
        for &i in &order[start..end] {
            if nbd.sets[i].is_disjoint(&above) {
                winners.push(i);
            }
        }
        order[start..end].iter().for_each(|&j| above.insert(j));
        start = end;
    }
    winners.sort_unstable();
    winners
}

/// Fraction of `p` random directions on which each word wins. Inactive
/// words score 0.
pub fn project_and_count(c: &CoocMatrix, nbd: &Neighborhoods, p: usize, seed: u64) -> Vec<f64> {
    let w = c.vocab_size();
    let blocks: Vec<(usize, usize)> = (0..p)
        .step_by(PROJECTION_BLOCK)
        .map(|s| (s, PROJECTION_BLOCK.min(p - s)))
        .collect();
    let counts: Vec<Vec<u32>> = blocks
        .par_iter()
        .map(|&(first, count)| {
            let values = c.matrix() * directions(w, first, count, seed);
            let mut hits = vec![0u32; w];
            for col in values.column_iter() {
                for i in projection_winners(col.as_slice(), nbd) {
                    hits[i] += 1;
                }
            }
            hits
        })
        .collect();
    let mut total = vec![0u32; w];
    for block in &counts {
        for (t, h) in total.iter_mut().zip(block) {
            *t += h;
        }
    }
    total.into_iter().map(|t| f64::from(t) / p as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Selection {
    pub selected: Vec<usize>,
    /// Number of candidates examined, including the first pick.
    pub scan_depth: usize,
}

/// Candidate order: decreasing score, lower index first on ties.
pub fn scan_order(phat: &[f64], nbd: &Neighborhoods) -> Vec<usize> {
    let mut order: Vec<usize> = (0..phat.len()).filter(|&i| nbd.is_active(i)).collect();
    order.sort_by(|&a, &b| phat[b].total_cmp(&phat[a]).then(a.cmp(&b)));
    order
}

/// Takes the top-scoring word, then accepts each next word that lies in the
/// neighborhood of every word accepted so far, until `k` are accepted.
pub fn select_novel(phat: &[f64], nbd: &Neighborhoods, k: usize) -> Result<Selection> {
    select_from_order(&scan_order(phat, nbd), nbd, k)
}

pub(crate) fn select_from_order(order: &[usize], nbd: &Neighborhoods, k: usize) -> Result<Selection> {
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut scan_depth = 0;
    for &j in order {
        if selected.len() == k {
            break;
        }
        scan_depth += 1;
        if selected.iter().all(|&l| nbd.contains(l, j)) {
            selected.push(j);
        }
    }
    if selected.len() < k {
        return Err(Error::IncompleteRecovery {
            partial: selected,
            wanted: k,
        });
    }
    Ok(Selection {
        selected,
        scan_depth,
    })
}

/// Twice the `quantile` of the positive pair statistics over distinct active
/// words (nearest-rank from below).
pub fn estimate_d(c: &CoocMatrix, quantile: f64) -> Result<f64> {
    estimate_d_masked(c.matrix(), &c.active(), quantile)
}

pub(crate) fn estimate_d_masked(c: &DMatrix<f64>, active: &[bool], quantile: f64) -> Result<f64> {
    let idx: Vec<usize> = (0..c.nrows()).filter(|&i| active[i]).collect();
    let n = idx.len();
    if n < 2 {
        return Err(Error::DegenerateGeometry(
            "fewer than two candidate words".into(),
        ));
    }
    let pairs = n * (n - 1);
    let stride = pairs.div_ceil(MAX_QUANTILE_PAIRS).max(1);
    let stats: Vec<f64> = (0..pairs)
        .step_by(stride)
        .map(|p| {
            let (a, mut b) = (p / (n - 1), p % (n - 1));
            if b >= a {
                b += 1;
            }
            pair_statistic(c, idx[a], idx[b])
        })
        .collect();
    d_from_statistics(stats, quantile)
}

/// Twice the lower nearest-rank `quantile` of the positive statistics.
pub(crate) fn d_from_statistics(mut stats: Vec<f64>, quantile: f64) -> Result<f64> {
    stats.retain(|&s| s > 0.0);
    if stats.is_empty() {
        return Err(Error::DegenerateGeometry(
            "no pair of words is separated".into(),
        ));
    }
    let rank = ((stats.len() - 1) as f64 * quantile).floor() as usize;
    let (_, q, _) = stats.select_nth_unstable_by(rank, f64::total_cmp);
    Ok(2.0 * *q)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub scan_depth: usize,
    pub estimated_d: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionResult {
    pub selected: Vec<usize>,
    pub phat: Vec<f64>,
    pub nbd_sizes: Vec<usize>,
    pub d_used: f64,
    pub diagnostics: Diagnostics,
}

/// Wall time per pipeline stage, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub split: f64,
    pub cooc: f64,
    pub project: f64,
    pub select: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.split + self.cooc + self.project + self.select
    }
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub(crate) fn resolve_d(c: &DMatrix<f64>, active: &[bool], policy: DPolicy) -> Result<(f64, Option<f64>)> {
    match policy {
        DPolicy::Given { d } => Ok((d, None)),
        DPolicy::Estimated { quantile } => {
            let d = estimate_d_masked(c, active, quantile)?;
            Ok((d, Some(d)))
        }
    }
}

/// Neighborhoods, projections and selection on a precomputed statistic.
pub fn detect_on_cooc(c: &CoocMatrix, config: &DetectorConfig) -> Result<DetectionResult> {
    detect_on_cooc_timed(c, config).map(|(r, _, _)| r)
}

fn detect_on_cooc_timed(c: &CoocMatrix, config: &DetectorConfig) -> Result<(DetectionResult, f64, f64)> {
    config.validate()?;
    let t = Instant::now();
    let active = active_mask(c, &config.exclude);
    let (d_used, estimated_d) = resolve_d(c.matrix(), &active, config.d)?;
    let nbd = neighborhoods_masked(c.matrix(), &active, d_used);
    let phat = project_and_count(c, &nbd, config.projections, config.projection_seed());
    let project_ms = elapsed_ms(t);

    let t = Instant::now();
    let sel = select_novel(&phat, &nbd, config.k)?;
    let select_ms = elapsed_ms(t);
    Ok((
        DetectionResult {
            selected: sel.selected,
            phat,
            nbd_sizes: nbd.sizes(),
            d_used,
            diagnostics: Diagnostics {
                scan_depth: sel.scan_depth,
                estimated_d,
            },
        },
        project_ms,
        select_ms,
    ))
}

/// Full pipeline: split, co-occurrence, neighborhoods, projections, selection.
pub fn detect_novel_words(corpus: &Corpus, config: &DetectorConfig) -> Result<DetectionResult> {
    detect_novel_words_timed(corpus, config).map(|(r, _)| r)
}

pub fn detect_novel_words_timed(
    corpus: &Corpus,
    config: &DetectorConfig,
) -> Result<(DetectionResult, StageTimings)> {
    config.validate()?;
    if corpus.num_docs() == 0 {
        return Err(Error::InvalidInput("empty corpus".into()));
    }
    let t = Instant::now();
    let split = split_corpus(corpus, config.split_seed());
    let split_ms = elapsed_ms(t);

    let t = Instant::now();
    let c = cooc_matrix(&split)?;
    drop(split);
    let cooc_ms = elapsed_ms(t);

    let (result, project, select) = detect_on_cooc_timed(&c, config)?;
    Ok((
        result,
        StageTimings {
            split: split_ms,
            cooc: cooc_ms,
            project,
            select,
        },
    ))
}

/// Bytes held by the pipeline's large buffers for a `W`-word vocabulary,
/// `nnz` stored corpus cells and the fixed projection block.
pub fn working_set_bytes(w: usize, nnz: usize, threads: usize) -> usize {
    let dense = w * w * std::mem::size_of::<f64>();
    let nbd = w * w.div_ceil(8) + w;
    // corpus + two halves: word index and count per cell
    let sparse = 3 * nnz * 2 * std::mem::size_of::<u32>();
    let blocks = threads * 2 * w * PROJECTION_BLOCK * std::mem::size_of::<f64>();
    dense + nbd + sparse + blocks
}
