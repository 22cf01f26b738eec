//! Seeded generate-and-detect experiments and stage-time scaling runs.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cooc::{cooc_matrix, split_corpus};
use crate::detect::{
    detect_novel_words_timed, estimate_d, neighborhoods, project_and_count, select_novel, DPolicy,
    DetectionResult, DetectorConfig, StageTimings, D_QUANTILE,
};
use crate::dist::{run_distributed, Mode};
use crate::error::{Error, Result};
use crate::io::ModelFile;
use crate::model::{novel_words_of, Corpus, NovelWordSets, PriorKind, PriorModel, TopicMatrix};
use crate::rng;
use crate::synth::{generate_corpus, random_separable, RandomModelSpec};

/// Where the model of an experiment comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ModelSource {
    /// `random_separable` with the given shape and a symmetric or explicit prior.
    Generated {
        vocab_size: usize,
        num_topics: usize,
        novel_per_topic: usize,
        prior: PriorKind,
        model_seed: u64,
    },
    Inline(ModelFile),
}

impl ModelSource {
    pub fn build(&self) -> Result<(TopicMatrix, PriorModel)> {
        match self {
            ModelSource::Generated {
                vocab_size,
                num_topics,
                novel_per_topic,
                prior,
                model_seed,
            } => {
                let spec = RandomModelSpec {
                    vocab_size: *vocab_size,
                    num_topics: *num_topics,
                    novel_per_topic: *novel_per_topic,
                };
                let beta = random_separable(spec, *model_seed)?;
                let prior = PriorModel::new(prior.clone())?;
                if prior.num_topics() != *num_topics {
                    return Err(Error::Dimension("prior and model disagree on K".into()));
                }
                Ok((beta, prior))
            }
            ModelSource::Inline(file) => file.clone().into_model(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub model: ModelSource,
    /// Corpus sizes, strictly increasing.
    pub ladder: Vec<usize>,
    pub doc_len: u64,
    pub projections: usize,
    #[serde(default)]
    pub d: DPolicy,
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub shards: usize,
    #[serde(default)]
    pub mode: Mode,
}

fn one() -> usize {
    1
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be at least 1".into()));
        }
        if self.ladder.is_empty() || self.ladder.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::InvalidInput("M ladder must be nonempty and strictly increasing".into()));
        }
        if self.ladder[0] == 0 || self.doc_len == 0 || self.projections == 0 || self.shards == 0 {
            return Err(Error::InvalidInput("M, N, P and shard count must be positive".into()));
        }
        Ok(())
    }

    /// Seed of trial `t` at ladder point `point`.
    pub fn trial_seed(&self, point: usize, t: usize) -> u64 {
        rng::child_seed(rng::child_seed(self.seed, rng::TRIAL, point as u64), rng::TRIAL, t as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub m: usize,
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub selected: Vec<usize>,
    /// Lowest score among selected words minus the highest score among
    /// words that are not novel.
    pub phat_gap: Option<f64>,
    pub timing_ms: StageTimings,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointSummary {
    pub m: usize,
    pub trials: usize,
    pub successes: usize,
    pub failures: usize,
    pub success_rate: f64,
    pub mean_timing_ms: StageTimings,
    pub mean_phat_gap: Option<f64>,
    pub min_phat_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub novel_words: Vec<Vec<usize>>,
    pub points: Vec<PointSummary>,
    pub trials: Vec<TrialRecord>,
}

impl ExperimentReport {
    pub fn success_rates(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.success_rate).collect()
    }

    /// One row per ladder point.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record([
            "m",
            "trials",
            "successes",
            "failures",
            "success_rate",
            "split_ms",
            "cooc_ms",
            "project_ms",
            "select_ms",
            "mean_phat_gap",
            "min_phat_gap",
        ])
        .map_err(io)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for p in &self.points {
            let t = p.mean_timing_ms;
            w.write_record([
                p.m.to_string(),
                p.trials.to_string(),
                p.successes.to_string(),
                p.failures.to_string(),
                p.success_rate.to_string(),
                t.split.to_string(),
                t.cooc.to_string(),
                t.project.to_string(),
                t.select.to_string(),
                opt(p.mean_phat_gap),
                opt(p.min_phat_gap),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn phat_gap(result: &DetectionResult, truth: &NovelWordSets) -> Option<f64> {
    let low = result.selected.iter().map(|&i| result.phat[i]).fold(f64::INFINITY, f64::min);
    let high = (0..result.phat.len())
        .filter(|&i| !truth.is_novel(i))
        .map(|i| result.phat[i])
        .fold(f64::NEG_INFINITY, f64::max);
    (low.is_finite() && high.is_finite()).then_some(low - high)
}

fn run_trial(
    spec: &ExperimentSpec,
    beta: &TopicMatrix,
    prior: &PriorModel,
    truth: &NovelWordSets,
    point: usize,
    t: usize,
) -> TrialRecord {
    let m = spec.ladder[point];
    let seed = spec.trial_seed(point, t);
    let mut record = TrialRecord {
        m,
        trial: t,
        seed,
        success: false,
        selected: Vec::new(),
        phat_gap: None,
        timing_ms: StageTimings::default(),
        error: None,
    };
    let outcome = (|| -> Result<(DetectionResult, StageTimings)> {
        let (_, corpus) = generate_corpus(beta, prior, m, spec.doc_len, seed)?;
        let mut config = DetectorConfig::new(beta.num_topics(), spec.projections, seed);
        config.d = spec.d;
        if spec.shards == 1 && spec.mode == Mode::Faithful {
            detect_novel_words_timed(&corpus, &config)
        } else {
            let start = Instant::now();
            let report = run_distributed(&corpus, &config, spec.shards, spec.mode)?;
            let total = start.elapsed().as_secs_f64() * 1e3;
            // Stages are interleaved across shards; report the total only.
            Ok((report.result, StageTimings { project: total, ..Default::default() }))
        }
    })();
    match outcome {
        Ok((result, timing)) => {
            record.success = truth.is_transversal(&result.selected);
            record.phat_gap = phat_gap(&result, truth);
            record.selected = result.selected;
            record.timing_ms = timing;
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Runs `trials` independent generate-then-detect cycles per ladder point.
/// Trials run in parallel; each is seeded from `(seed, point, trial)`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let (beta, prior) = spec.model.build()?;
    let truth = novel_words_of(&beta, 0.0)?;
    let jobs: Vec<(usize, usize)> = (0..spec.ladder.len())
        .flat_map(|p| (0..spec.trials).map(move |t| (p, t)))
        .collect();
    let trials: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|&(p, t)| run_trial(spec, &beta, &prior, &truth, p, t))
        .collect();

    let points = spec
        .ladder
        .iter()
        .map(|&m| {
            let rows: Vec<&TrialRecord> = trials.iter().filter(|r| r.m == m).collect();
            let ok: Vec<&&TrialRecord> = rows.iter().filter(|r| r.error.is_none()).collect();
            let successes = rows.iter().filter(|r| r.success).count();
            let n = ok.len().max(1) as f64;
            let sum = ok.iter().fold(StageTimings::default(), |a, r| StageTimings {
                split: a.split + r.timing_ms.split,
                cooc: a.cooc + r.timing_ms.cooc,
                project: a.project + r.timing_ms.project,
                select: a.select + r.timing_ms.select,
            });
            let gaps = || rows.iter().filter_map(|r| r.phat_gap);
            PointSummary {
                m,
                trials: rows.len(),
                successes,
                failures: rows.len() - ok.len(),
                success_rate: successes as f64 / rows.len() as f64,
                mean_timing_ms: StageTimings {
                    split: sum.split / n,
                    cooc: sum.cooc / n,
                    project: sum.project / n,
                    select: sum.select / n,
                },
                mean_phat_gap: mean(gaps()),
                min_phat_gap: gaps().reduce(f64::min),
            }
        })
        .collect();

    Ok(ExperimentReport {
        spec: spec.clone(),
        novel_words: truth.canonical(),
        points,
        trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingAxis {
    M,
    P,
    W,
    K,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSpec {
    pub vocab_size: usize,
    pub num_topics: usize,
    pub docs: usize,
    pub doc_len: u64,
    pub projections: usize,
    pub axis: ScalingAxis,
    /// Values taken by the varied parameter, at least two.
    pub values: Vec<usize>,
    /// Runs per value; the median of each stage is reported.
    pub repeats: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub value: usize,
    pub timing_ms: StageTimings,
    /// Stage-wise ratios to the previous row; absent on the first.
    pub ratio: Option<StageTimings>,
    pub total_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub spec: TimingSpec,
    pub rows: Vec<TimingRow>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Stage times of one pipeline run. Selection is timed even when it cannot
/// complete, since only its cost matters here.
fn time_stages(corpus: &Corpus, config: &DetectorConfig) -> Result<StageTimings> {
    let ms = |t: Instant| t.elapsed().as_secs_f64() * 1e3;
    let t = Instant::now();
    let split = split_corpus(corpus, config.split_seed());
    let split_ms = ms(t);
    let t = Instant::now();
    let c = cooc_matrix(&split)?;
    let cooc_ms = ms(t);
    drop(split);
    let t = Instant::now();
    let d = estimate_d(&c, D_QUANTILE)?;
    let nbd = neighborhoods(&c, d);
    let phat = project_and_count(&c, &nbd, config.projections, config.projection_seed());
    let project_ms = ms(t);
    let t = Instant::now();
    let _ = select_novel(&phat, &nbd, config.k);
    Ok(StageTimings {
        split: split_ms,
        cooc: cooc_ms,
        project: project_ms,
        select: ms(t),
    })
}

/// Median stage times of the single-node pipeline while one parameter varies.
pub fn timing_scaling(spec: &TimingSpec) -> Result<TimingReport> {
    if spec.values.len() < 2 || spec.repeats == 0 {
        return Err(Error::InvalidInput("need at least two values and one repeat".into()));
    }
    let mut rows: Vec<TimingRow> = Vec::new();
    for (idx, &value) in spec.values.iter().enumerate() {
        let (mut w, mut k, mut m, mut p) = (spec.vocab_size, spec.num_topics, spec.docs, spec.projections);
        match spec.axis {
            ScalingAxis::M => m = value,
            ScalingAxis::P => p = value,
            ScalingAxis::W => w = value,
            ScalingAxis::K => k = value,
        }
        let model_spec = RandomModelSpec {
            vocab_size: w,
            num_topics: k,
            novel_per_topic: 1,
        };
        let beta = random_separable(model_spec, spec.seed)?;
        let prior = PriorModel::symmetric_dirichlet(k, 1.0)?;
        let seed = rng::child_seed(spec.seed, rng::TRIAL, idx as u64);
        let (_, corpus) = generate_corpus(&beta, &prior, m, spec.doc_len, seed)?;
        let config = DetectorConfig::new(k, p, seed);
        let runs: Vec<StageTimings> = (0..spec.repeats)
            .map(|_| time_stages(&corpus, &config))
            .collect::<Result<_>>()?;
        let timing = StageTimings {
            split: median(runs.iter().map(|t| t.split).collect()),
            cooc: median(runs.iter().map(|t| t.cooc).collect()),
            project: median(runs.iter().map(|t| t.project).collect()),
            select: median(runs.iter().map(|t| t.select).collect()),
        };
        let (ratio, total_ratio) = match rows.last() {
            Some(prev) => {
                let a = prev.timing_ms;
                (
                    Some(StageTimings {
                        split: timing.split / a.split,
                        cooc: timing.cooc / a.cooc,
                        project: timing.project / a.project,
                        select: timing.select / a.select,
                    }),
                    Some(timing.total() / a.total()),
                )
            }
            None => (None, None),
        };
        rows.push(TimingRow {
            value,
            timing_ms: timing,
            ratio,
            total_ratio,
        });
    }
    Ok(TimingReport {
        spec: spec.clone(),
        rows,
    })
}

impl TimingReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["value", "split_ms", "cooc_ms", "project_ms", "select_ms", "total_ms", "total_ratio"])
            .map_err(io)?;
        for r in &self.rows {
            let t = r.timing_ms;
            w.write_record([
                r.value.to_string(),
                t.split.to_string(),
                t.cooc.to_string(),
                t.project.to_string(),
                t.select.to_string(),
                t.total().to_string(),
                r.total_ratio.map_or(String::new(), |x| x.to_string()),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn generated(w: usize, k: usize) -> ModelSource {
        ModelSource::Generated {
            vocab_size: w,
            num_topics: k,
            novel_per_topic: 1,
            prior: PriorKind::Dirichlet {
                concentration: vec![1.0; k],
            },
            model_seed: 3,
        }
    }

    fn spec(model: ModelSource, ladder: Vec<usize>, n: u64, trials: usize) -> ExperimentSpec {
        ExperimentSpec {
            model,
            ladder,
            doc_len: n,
            projections: 100,
            d: DPolicy::default(),
            trials,
            seed: 9,
            shards: 1,
            mode: Mode::Faithful,
        }
    }

    #[test]
    fn tiny_inputs_do_not_crash() {
        let report = run_experiment(&spec(generated(12, 3), vec![10], 5, 1)).unwrap();
        let rate = report.points[0].success_rate;
        assert!(rate == 0.0 || rate == 1.0);
        assert_eq!(report.trials.len(), 1);
    }

    #[test]
    fn identity_model_always_succeeds() {
        let beta = TopicMatrix::new(DMatrix::identity(3, 3)).unwrap();
        let prior = PriorModel::symmetric_dirichlet(3, 1.0).unwrap();
        let model = ModelSource::Inline(ModelFile::new(&beta, &prior));
        let report = run_experiment(&spec(model, vec![50, 200], 20, 4)).unwrap();
        assert_eq!(report.success_rates(), vec![1.0, 1.0]);
    }

    #[test]
    fn report_is_reproducible_and_order_independent() {
        let s = spec(generated(15, 3), vec![100, 300], 30, 3);
        let a = run_experiment(&s).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_experiment(&s).unwrap());
        let strip = |r: &ExperimentReport| -> Vec<(usize, usize, bool, Vec<usize>)> {
            r.trials.iter().map(|t| (t.m, t.trial, t.success, t.selected.clone())).collect()
        };
        assert_eq!(strip(&a), strip(&b));
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(run_experiment(&spec(generated(12, 3), vec![100, 100], 5, 1)).is_err());
        assert!(run_experiment(&spec(generated(12, 3), vec![100], 5, 0)).is_err());
    }

    #[test]
    fn timing_rows_carry_ratios() {
        let t = TimingSpec {
            vocab_size: 20,
            num_topics: 3,
            docs: 200,
            doc_len: 20,
            projections: 32,
            axis: ScalingAxis::P,
            values: vec![32, 64],
            repeats: 1,
            seed: 1,
        };
        let r = timing_scaling(&t).unwrap();
        assert!(r.rows[0].ratio.is_none());
        assert!(r.rows[1].total_ratio.unwrap() > 0.0);
    }
}
