use nalgebra::DMatrix;
use proptest::prelude::*;

use novelwords::conditions::{is_diag_dominant, is_full_rank, is_simplicial};
use novelwords::cooc::{cooc_matrix, split_corpus, CoocMatrix};
use novelwords::detect::{detect_novel_words, detect_on_cooc, estimate_d, DetectorConfig};
use novelwords::model::{novel_words_of, population_cooc, population_separation, PriorModel, TopicMatrix};
use novelwords::oracle::{oracle_novel_words, ORACLE_TOL};
use novelwords::synth::{figure1_models, generate_corpus, random_dirichlet, random_separable, RandomModelSpec};

fn random_model(seed: u64) -> (TopicMatrix, PriorModel) {
    let k = 2 + (seed % 4) as usize;
    let per = 1 + (seed % 2) as usize;
    let w = (k * per + 3 + (seed * 7 % 20) as usize).min(40);
    let beta = random_separable(
        RandomModelSpec {
            vocab_size: w,
            num_topics: k,
            novel_per_topic: per,
        },
        seed,
    )
    .unwrap();
    (beta, random_dirichlet(k, 0.3, 3.0, seed + 1000).unwrap())
}

#[test]
fn cooc_close_to_population_on_small_model() {
    let beta = TopicMatrix::from_rows(&[&[0.7, 0.0], &[0.0, 0.6], &[0.3, 0.4]]).unwrap();
    let prior = PriorModel::dirichlet(vec![1.0, 1.5]).unwrap();
    let (_, corpus) = generate_corpus(&beta, &prior, 100_000, 100, 3).unwrap();
    let c = cooc_matrix(&split_corpus(&corpus, 4)).unwrap();
    let inf = population_cooc(&beta, &prior).unwrap();
    assert!((c.matrix() - &inf).amax() < 0.05);
}

#[test]
fn cooc_error_shrinks_with_corpus_size() {
    let (beta, prior) = random_model(7);
    let inf = population_cooc(&beta, &prior).unwrap();
    let medians: Vec<f64> = [1_000, 10_000, 100_000]
        .iter()
        .map(|&m| {
            let (_, corpus) = generate_corpus(&beta, &prior, m, 100, 11).unwrap();
            let c = cooc_matrix(&split_corpus(&corpus, 12)).unwrap();
            let mut err: Vec<f64> = (c.matrix() - &inf).iter().map(|v| v.abs()).collect();
            err.sort_by(f64::total_cmp);
            err[err.len() / 2]
        })
        .collect();
    assert!(medians[0] > medians[1] && medians[1] > medians[2], "{medians:?}");
}

#[test]
fn identity_model_selects_every_word() {
    // With every pair separated there is no near-zero cluster for the
    // quantile rule to skip, so for K >= 4 the model constant is supplied.
    for (k, given) in [(3, false), (4, true), (6, true)] {
        let beta = TopicMatrix::new(DMatrix::identity(k, k)).unwrap();
        let prior = PriorModel::symmetric_dirichlet(k, 0.8).unwrap();
        let (_, corpus) = generate_corpus(&beta, &prior, 10_000, 50, 1).unwrap();
        let mut cfg = DetectorConfig::new(k, 200, 2);
        if given {
            cfg = cfg.with_d(population_separation(&beta, &prior, 0.0).unwrap().cross_topic);
        }
        let mut sel = detect_novel_words(&corpus, &cfg).unwrap().selected;
        sel.sort_unstable();
        assert_eq!(sel, (0..k).collect::<Vec<_>>());
    }
}

#[test]
fn figure1_left_model_is_recovered() {
    let fig = figure1_models(20).unwrap();
    let prior = PriorModel::symmetric_dirichlet(3, 1.0).unwrap();
    let truth = novel_words_of(&fig.beta1, 0.0).unwrap();
    let hits = (0..20u64)
        .filter(|t| {
            let (_, corpus) = generate_corpus(&fig.beta1, &prior, 20_000, 200, 500 + t).unwrap();
            detect_novel_words(&corpus, &DetectorConfig::new(3, 500, 700 + t))
                .is_ok_and(|r| truth.is_transversal(&r.selected))
        })
        .count();
    assert!(hits >= 19, "{hits}/20");
}

#[test]
fn population_input_selects_only_oracle_words() {
    for seed in 0..50 {
        let (beta, prior) = random_model(seed);
        let groups = oracle_novel_words(&beta, &prior, ORACLE_TOL).unwrap();
        let d = population_separation(&beta, &prior, 0.0).unwrap().novel_to_rest;
        let c = CoocMatrix::from_dense(population_cooc(&beta, &prior).unwrap(), vec![], 1).unwrap();
        let cfg = DetectorConfig::new(beta.num_topics(), 1000, seed).with_d(d);
        let res = detect_on_cooc(&c, &cfg).unwrap();
        assert!(groups.is_transversal(&res.selected), "model {seed}: {:?}", res.selected);
    }
}

#[test]
fn estimated_d_on_identity_model_matches_separation() {
    let beta = TopicMatrix::new(DMatrix::identity(3, 3)).unwrap();
    let prior = PriorModel::symmetric_dirichlet(3, 1.0).unwrap();
    let sep = population_separation(&beta, &prior, 0.0).unwrap();
    let (_, corpus) = generate_corpus(&beta, &prior, 100_000, 50, 5).unwrap();
    let d = estimate_d(&cooc_matrix(&split_corpus(&corpus, 6)).unwrap(), 0.1).unwrap();
    let ratio = d / sep.cross_topic;
    assert!((0.25..=4.0).contains(&ratio), "{ratio}");
}

#[test]
fn estimated_d_tracks_usable_separation() {
    // Nbd must keep same-topic novel words out, which needs d / 2 below the
    // novel-to-rest separation; the estimate stays within a factor of 4 of it.
    for seed in 0..5 {
        let beta = random_separable(
            RandomModelSpec {
                vocab_size: 30,
                num_topics: 3,
                novel_per_topic: 1,
            },
            seed,
        )
        .unwrap();
        let prior = PriorModel::symmetric_dirichlet(3, 1.0).unwrap();
        let sep = population_separation(&beta, &prior, 0.0).unwrap();
        let (_, corpus) = generate_corpus(&beta, &prior, 100_000, 200, seed).unwrap();
        let d = estimate_d(&cooc_matrix(&split_corpus(&corpus, seed)).unwrap(), 0.1).unwrap();
        let ratio = d / sep.novel_to_rest;
        assert!((0.25..=4.0).contains(&ratio), "seed {seed}: {ratio}");
    }
}

#[test]
fn detection_is_independent_of_thread_count() {
    let (beta, prior) = random_model(3);
    let (_, corpus) = generate_corpus(&beta, &prior, 5_000, 100, 9).unwrap();
    let cfg = DetectorConfig::new(beta.num_topics(), 150, 4);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| detect_novel_words(&corpus, &cfg))
    };
    let one = run(1);
    for threads in [2, 5] {
        let other = run(threads);
        match (&one, &other) {
            (Ok(a), Ok(b)) => assert_eq!(a, b),
            (Err(a), Err(b)) => assert_eq!(a.to_string(), b.to_string()),
            _ => panic!("outcome depends on thread count"),
        }
    }
}

fn symmetric_psd(k: usize, entries: &[f64]) -> DMatrix<f64> {
    let v = DMatrix::from_column_slice(k, k, &entries[..k * k]);
    &v * v.transpose()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn diagonal_dominance_implies_simplicial(
        k in 2usize..7,
        entries in prop::collection::vec(-1.0f64..1.0, 36),
        shift in prop::collection::vec(0.01f64..0.5, 6),
    ) {
        let mut a = symmetric_psd(k, &entries);
        for i in 0..k {
            let worst = (0..k).filter(|&j| j != i).map(|j| a[(i, j)] - a[(i, i)]).fold(0.0, f64::max);
            a[(i, i)] += worst + shift[i];
        }
        prop_assume!(is_diag_dominant(&a));
        prop_assert!(is_simplicial(&a, 1e-9).unwrap().is_simplicial);
    }

    #[test]
    fn full_rank_implies_simplicial(
        k in 2usize..7,
        entries in prop::collection::vec(-1.0f64..1.0, 36),
    ) {
        let a = symmetric_psd(k, &entries);
        prop_assume!(is_full_rank(&a, 1e-6));
        prop_assert!(is_simplicial(&a, 1e-9).unwrap().is_simplicial);
    }
}
