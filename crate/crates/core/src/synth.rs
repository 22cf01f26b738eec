//! Synthetic corpora and the non-identifiable model pairs.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma};
use rayon::prelude::*;

use crate::conditions::{dist_to_hull, SIMPLICIAL_TOL};
use crate::error::{Error, Result};
use crate::model::{
    novel_words_of, CountMatrix, Corpus, PriorKind, PriorModel, TopicMatrix,
};
use crate::rng;

/// Draws `m` iid topic-proportion columns (`K x m`). Column `j` depends only
/// on `(seed, j)`.
pub fn sample_theta(prior: &PriorModel, m: usize, seed: u64) -> Result<DMatrix<f64>> {
    if m == 0 {
        return Err(Error::InvalidInput("need at least one document".into()));
    }
    let k = prior.num_topics();
    let columns: Vec<Vec<f64>> = match prior.kind() {
        PriorKind::Dirichlet { concentration } => {
            let gammas = concentration
                .iter()
                .map(|&a| Gamma::new(a, 1.0))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::DegeneratePrior(e.to_string()))?;
            (0..m)
                .into_par_iter()
                .map(|j| {
                    let mut r = rng::stream(seed, rng::THETA, j as u64);
                    loop {
                        let draw: Vec<f64> = gammas.iter().map(|g| g.sample(&mut r)).collect();
                        let total: f64 = draw.iter().sum();
                        // Very small concentrations can underflow every coordinate.
                        if total > 0.0 {
                            break draw.into_iter().map(|v| v / total).collect();
                        }
                    }
                })
                .collect()
        }
        PriorKind::Mixture { support, weights } => {
            let index = WeightedIndex::new(weights)
                .map_err(|e| Error::DegeneratePrior(e.to_string()))?;
            (0..m)
                .into_par_iter()
                .map(|j| {
                    let mut r = rng::stream(seed, rng::THETA, j as u64);
                    support[index.sample(&mut r)].clone()
                })
                .collect()
        }
    };
    Ok(DMatrix::from_fn(k, m, |t, j| columns[j][t]))
}

/// Multinomial draw of `n` tokens from `p`, by sequential conditional
/// binomials. Returns sorted `(words, counts)`.
fn multinomial<R: Rng>(p: &[f64], n: u64, r: &mut R) -> (Vec<u32>, Vec<u32>) {
    let mut tail = vec![0.0; p.len() + 1];
    for w in (0..p.len()).rev() {
        tail[w] = tail[w + 1] + p[w];
    }
    let last = p.iter().rposition(|&v| v > 0.0);
    let mut words = Vec::new();
    let mut counts = Vec::new();
    let mut left = n;
    for (w, &pw) in p.iter().enumerate() {
        if left == 0 {
            break;
        }
        if pw <= 0.0 {
            continue;
        }
        let x = if Some(w) == last {
            left
        } else {
            let q = (pw / tail[w]).clamp(0.0, 1.0);
            Binomial::new(left, q).expect("probability clamped to [0, 1]").sample(r)
        };
        if x > 0 {
            words.push(w as u32);
            counts.push(x as u32);
            left -= x;
        }
    }
    (words, counts)
}

/// Document `j` is a multinomial draw of `n` words from `beta * theta_j`,
/// using the stream `(seed, j)`.
pub fn sample_corpus(beta: &TopicMatrix, theta: &DMatrix<f64>, n: u64, seed: u64) -> Result<Corpus> {
    if theta.nrows() != beta.num_topics() {
        return Err(Error::Dimension(format!(
            "theta has {} rows, topic matrix has {} topics",
            theta.nrows(),
            beta.num_topics()
        )));
    }
    if n > u64::from(u32::MAX) {
        return Err(Error::InvalidInput("document length exceeds u32".into()));
    }
    let parts: Vec<(Vec<u32>, Vec<u32>)> = (0..theta.ncols())
        .into_par_iter()
        .map(|j| {
            let p = beta.entries() * theta.column(j);
            let mut r = rng::stream(seed, rng::CORPUS, j as u64);
            multinomial(p.as_slice(), n, &mut r)
        })
        .collect();
    let counts = CountMatrix::from_sorted_parts(beta.vocab_size(), parts);
    Corpus::with_doc_len(counts, n)
}

/// Convenience: `sample_theta` then `sample_corpus`, with both seeds derived
/// from `seed`.
pub fn generate_corpus(
    beta: &TopicMatrix,
    prior: &PriorModel,
    m: usize,
    n: u64,
    seed: u64,
) -> Result<(DMatrix<f64>, Corpus)> {
    let theta = sample_theta(prior, m, rng::child_seed(seed, rng::THETA, 0))?;
    let corpus = sample_corpus(beta, &theta, n, rng::child_seed(seed, rng::CORPUS, 0))?;
    Ok((theta, corpus))
}

/// The two separable decompositions of the introductory counterexample.
#[derive(Debug, Clone)]
pub struct Figure1 {
    pub beta1: TopicMatrix,
    pub beta2: TopicMatrix,
    pub prior: PriorModel,
}

/// Mass given to each row of the 4-row cores.
const FIG1_ROW_MASS: f64 = 0.1;

/// Builds the pair of `W x 3` matrices from the counterexample figure.
///
/// Rows 1-4 are `e1, e2, e3, e3` in `beta1` and `e1, e2, e3, (.5, .5, 0)` in
/// `beta2`, each with mass 0.1. Column stochasticity with equal
/// observations forces a fifth row holding the swapped pattern
/// (`(.5, .5, 0)` in `beta1`, `e3` in `beta2`); rows 6..W are a shared block
/// of mixed (non-novel) words scaled to the remaining column mass. The
/// prior keeps `theta_3 = (theta_1 + theta_2) / 2`.
pub fn figure1_models(vocab_size: usize) -> Result<Figure1> {
    if vocab_size < 8 {
        return Err(Error::Dimension(format!(
            "the counterexample needs W >= 8, got {vocab_size}"
        )));
    }
    let s = FIG1_ROW_MASS;
    let core1: [[f64; 3]; 5] = [
        [s, 0.0, 0.0],
        [0.0, s, 0.0],
        [0.0, 0.0, s],
        [0.0, 0.0, s],
        [0.5 * s, 0.5 * s, 0.0],
    ];
    let mut core2 = core1;
    core2.swap(3, 4);
    let used: Vec<f64> = (0..3).map(|k| core1.iter().map(|r| r[k]).sum()).collect();
    let filler = mixed_filler(vocab_size - 5, 3);

    let build = |core: &[[f64; 3]; 5]| {
        TopicMatrix::new(DMatrix::from_fn(vocab_size, 3, |i, k| {
            if i < 5 {
                core[i][k]
            } else {
                filler[(i - 5, k)] * (1.0 - used[k])
            }
        }))
    };

    let support: Vec<Vec<f64>> = [1.0 / 6.0, 0.25, 1.0 / 3.0, 5.0 / 12.0, 0.5]
        .iter()
        .map(|&t: &f64| {
            let t2 = 2.0 / 3.0 - t;
            vec![t, t2, 0.5 * t + 0.5 * t2]
        })
        .collect();
    let weights = vec![0.2; support.len()];
    Ok(Figure1 {
        beta1: build(&core1)?,
        beta2: build(&core2)?,
        prior: PriorModel::mixture(support, weights)?,
    })
}

/// Column-stochastic block whose rows each mix two or three topics, so no
/// row is novel. Deterministic.
fn mixed_filler(rows: usize, k: usize) -> DMatrix<f64> {
    let mut f = DMatrix::zeros(rows, k);
    for i in 0..rows {
        let a = i % k;
        let b = (i + 1 + (i / k) % (k.max(2) - 1)) % k;
        f[(i, a)] = 1.0 + 0.25 * (i % 4) as f64;
        if b != a {
            f[(i, b)] = 0.5 + 0.1 * (i % 5) as f64;
        }
        if k > 2 && i % 4 == 3 {
            let c = (0..k).find(|&c| c != a && c != b).unwrap_or(a);
            f[(i, c)] += 0.3;
        }
    }
    for mut col in f.column_iter_mut() {
        let s = col.sum();
        if s > 0.0 {
            col /= s;
        }
    }
    f
}

/// Parameters of a random separable model.
#[derive(Debug, Clone, Copy)]
pub struct RandomModelSpec {
    pub vocab_size: usize,
    pub num_topics: usize,
    pub novel_per_topic: usize,
}

/// Random separable topic matrix. The first `K * novel_per_topic` rows are
/// novel (topic `i % K`); the rest mix 2 or 3 topics with weights in
/// `[0.2, 1]` before column normalization.
pub fn random_separable(spec: RandomModelSpec, seed: u64) -> Result<TopicMatrix> {
    let RandomModelSpec {
        vocab_size: w,
        num_topics: k,
        novel_per_topic,
    } = spec;
    if k == 0 || novel_per_topic == 0 || w < k * novel_per_topic {
        return Err(Error::Dimension(format!(
            "cannot place {novel_per_topic} novel words per topic for K = {k} in W = {w}"
        )));
    }
    let mut r = rng::stream(seed, "random-model", 0);
    let mut raw = DMatrix::zeros(w, k);
    let novel = k * novel_per_topic;
    for i in 0..w {
        if i < novel || k == 1 {
            raw[(i, i % k)] = r.random_range(0.5..1.5);
        } else {
            let support = r.random_range(2..=k.min(3));
            let mut topics: Vec<usize> = (0..k).collect();
            for s in 0..support {
                let pick = r.random_range(s..k);
                topics.swap(s, pick);
                raw[(i, topics[s])] = r.random_range(0.2..1.0);
            }
        }
    }
    TopicMatrix::from_column_masses(raw)
}

/// Random Dirichlet prior with concentrations in `[lo, hi)`.
pub fn random_dirichlet(k: usize, lo: f64, hi: f64, seed: u64) -> Result<PriorModel> {
    let mut r = rng::stream(seed, "random-dirichlet", 0);
    PriorModel::dirichlet((0..k).map(|_| r.random_range(lo..hi)).collect())
}

/// Finitely supported prior on which `theta_1` is a fixed positive
/// combination of `theta_2..theta_K`, so row 1 of `R'` lies in the convex
/// hull of the others. For `K = 2` this is a point mass.
pub fn random_nonsimplicial_prior(k: usize, seed: u64) -> Result<PriorModel> {
    if k < 2 {
        return Err(Error::Dimension("a non-simplicial prior needs K >= 2".into()));
    }
    let mut r = rng::stream(seed, "nonsimplicial-prior", 0);
    let mix: Vec<f64> = (1..k).map(|_| r.random_range(0.2..1.0) / (k - 1) as f64).collect();
    let points = if k == 2 { 1 } else { k + 3 };
    let support: Vec<Vec<f64>> = (0..points)
        .map(|_| {
            let mut t = vec![0.0; k];
            for v in t.iter_mut().skip(1) {
                *v = r.random_range(0.1..1.0);
            }
            t[0] = (1..k).map(|j| mix[j - 1] * t[j]).sum();
            let total: f64 = t.iter().sum();
            t.into_iter().map(|v| v / total).collect()
        })
        .collect();
    let raw: Vec<f64> = (0..points).map(|_| r.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    PriorModel::mixture(support, raw.into_iter().map(|v| v / total).collect())
}

/// Two separable models with different novel words and the same
/// observation distribution.
#[derive(Debug, Clone)]
pub struct AdversarialPair {
    pub beta1: TopicMatrix,
    pub beta2: TopicMatrix,
    pub prior: PriorModel,
    /// `[-1, c_2, ..., c_K]` with `e^T R' e = 0`.
    pub e: DVector<f64>,
    pub b: f64,
    pub alpha: f64,
    pub b1: DVector<f64>,
    pub b2: DVector<f64>,
    pub filler: TopicMatrix,
}

/// Builds the pair for a prior whose first row of `R'` lies in the convex
/// hull of the remaining rows. `filler` is any separable `(W-2) x K` matrix.
pub fn adversarial_pair(
    prior: &PriorModel,
    filler: &TopicMatrix,
    b: f64,
    alpha: f64,
) -> Result<AdversarialPair> {
    let k = prior.num_topics();
    if k < 2 {
        return Err(Error::Dimension("need at least two topics".into()));
    }
    if filler.num_topics() != k {
        return Err(Error::Dimension(format!(
            "filler has {} topics, prior has {k}",
            filler.num_topics()
        )));
    }
    if !filler.validate(0.0).separable {
        return Err(Error::InvalidInput("filler matrix must be separable".into()));
    }
    if !(b > 0.0) || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!(
            "need b > 0 and 0 < alpha < 1, got b = {b}, alpha = {alpha}"
        )));
    }
    let e = convex_certificate(prior)?;
    let a = prior.mean();
    let mut b1 = DVector::zeros(k);
    b1[0] = b / a[0];
    let mut b2 = DVector::zeros(k);
    b2[0] = b * (1.0 - alpha) / a[0];
    for j in 1..k {
        b2[j] = b * alpha * e[j] / a[j];
    }
    let used = &b1 + &b2;
    if let Some(component) = used.iter().position(|&v| v >= 1.0) {
        return Err(Error::ScaleTooLarge {
            component,
            value: used[component],
        });
    }
    let w = filler.vocab_size() + 2;
    let tail = filler.entries() * DMatrix::from_diagonal(&used.map(|v| 1.0 - v));
    let build = |first: &DVector<f64>, second: &DVector<f64>| {
        TopicMatrix::new(DMatrix::from_fn(w, k, |i, t| match i {
            0 => first[t],
            1 => second[t],
            _ => tail[(i - 2, t)],
        }))
    };
    Ok(AdversarialPair {
        beta1: build(&b1, &b2)?,
        beta2: build(&b2, &b1)?,
        prior: prior.clone(),
        e,
        b,
        alpha,
        b1,
        b2,
        filler: filler.clone(),
    })
}

/// `e = [-1, c_2, ..., c_K]` from the min-norm-point weights of row 1 of
/// `R'` against the hull of rows `2..K`.
pub fn convex_certificate(prior: &PriorModel) -> Result<DVector<f64>> {
    let rp = prior.normalized_correlation();
    let k = rp.nrows();
    let rows: Vec<Vec<f64>> = rp.row_iter().map(|r| r.iter().copied().collect()).collect();
    let others: Vec<&[f64]> = rows[1..].iter().map(Vec::as_slice).collect();
    let hd = dist_to_hull(&rows[0], &others)?;
    if hd.distance > SIMPLICIAL_TOL {
        return Err(Error::SimplicialPrior {
            distance: hd.distance,
        });
    }
    let mut e = DVector::zeros(k);
    e[0] = -1.0;
    for (j, &c) in hd.weights.iter().enumerate() {
        e[j + 1] = c;
    }
    Ok(e)
}

/// Largest `b` for which `b1 + b2 < 1` holds, for the given prior and alpha.
pub fn max_scale(prior: &PriorModel, alpha: f64) -> Result<f64> {
    let e = convex_certificate(prior)?;
    let a = prior.mean();
    let mut worst = (2.0 - alpha) / a[0];
    for j in 1..a.len() {
        worst = worst.max(alpha * e[j] / a[j]);
    }
    Ok(1.0 / worst)
}

/// Reorders topics so the row of `R'` closest to the hull of the others
/// comes first. Returns the permuted prior and the permutation used.
pub fn violating_topic_first(prior: &PriorModel) -> Result<(PriorModel, Vec<usize>)> {
    let report = crate::conditions::is_simplicial(&prior.normalized_correlation(), SIMPLICIAL_TOL)?;
    let Some(row) = report.violating_row else {
        return Err(Error::SimplicialPrior {
            distance: report.gamma_hat,
        });
    };
    let mut perm: Vec<usize> = (0..prior.num_topics()).collect();
    perm.swap(0, row);
    Ok((prior.permute_topics(&perm)?, perm))
}

impl AdversarialPair {
    /// Every structural invariant of the construction that fails, described.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let k = self.prior.num_topics();
        let a = self.prior.mean();
        let rp = self.prior.normalized_correlation();

        if (self.e[0] + 1.0).abs() > 0.0 {
            out.push("e[0] != -1".into());
        }
        let c_sum: f64 = self.e.iter().skip(1).sum();
        if self.e.iter().skip(1).any(|&c| c < 0.0) || (c_sum - 1.0).abs() > 1e-10 {
            out.push(format!("c is not a convex weight vector (sum {c_sum})"));
        }
        let quad = (self.e.transpose() * &rp * &self.e)[(0, 0)];
        if quad.abs() > 1e-10 {
            out.push(format!("e^T R' e = {quad:e}"));
        }
        for t in 0..k {
            let want1 = if t == 0 { self.b / a[0] } else { 0.0 };
            let want2 = if t == 0 {
                self.b * (1.0 - self.alpha) / a[0]
            } else {
                self.b * self.alpha * self.e[t] / a[t]
            };
            if (self.b1[t] - want1).abs() > 1e-15 * want1.abs().max(1.0)
                || (self.b2[t] - want2).abs() > 1e-15 * want2.abs().max(1.0)
            {
                out.push(format!("b1/b2 mismatch at topic {t}"));
            }
            if self.b1[t] + self.b2[t] >= 1.0 {
                out.push(format!("b1 + b2 >= 1 at topic {t}"));
            }
        }
        let used = &self.b1 + &self.b2;
        for i in 0..self.filler.vocab_size() {
            for t in 0..k {
                let want = self.filler.entries()[(i, t)] * (1.0 - used[t]);
                for (name, beta) in [("beta1", &self.beta1), ("beta2", &self.beta2)] {
                    if (beta.entries()[(i + 2, t)] - want).abs() > 1e-15 {
                        out.push(format!("{name} row {} differs from the scaled filler", i + 2));
                    }
                }
            }
        }
        for (name, beta) in [("beta1", &self.beta1), ("beta2", &self.beta2)] {
            let report = beta.validate(0.0);
            if !report.column_stochastic || !report.separable {
                out.push(format!("{name} is not a valid separable topic matrix"));
            }
        }
        match (novel_words_of(&self.beta1, 0.0), novel_words_of(&self.beta2, 0.0)) {
            (Ok(n1), Ok(n2)) => {
                if !n1.is_novel(0) {
                    out.push("word 1 is not novel in beta1".into());
                }
                if n2.is_novel(0) {
                    out.push("word 1 is novel in beta2".into());
                }
            }
            _ => out.push("novel word extraction failed".into()),
        }
        out
    }
}
