//! `novelwords` command-line tool.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical or solver failure,
//! 4 incomplete recovery. Word indices in JSON and CSV output are 0-based;
//! the corpus text format is 1-based.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use novelwords::conditions::{check_conditions, SIMPLICIAL_TOL};
use novelwords::detect::{detect_novel_words_timed, DPolicy, DetectionResult, DetectorConfig, D_QUANTILE};
use novelwords::dist::{run_distributed, Mode};
use novelwords::experiment::{run_experiment, timing_scaling, ExperimentSpec, ModelSource, ScalingAxis, TimingSpec};
use novelwords::io::{load_csv_matrix, load_model, load_uci, save_model, save_uci, ModelFile};
use novelwords::model::{novel_words_of, PriorKind, PriorModel, TopicMatrix};
use novelwords::oracle::{oracle_novel_words, ORACLE_TOL};
use novelwords::synth::{
    adversarial_pair, figure1_models, generate_corpus, max_scale, random_nonsimplicial_prior, random_separable,
    sample_theta, violating_topic_first, RandomModelSpec,
};

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn from_json(e: serde_json::Error) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<novelwords::Error> for CliError {
    fn from(e: novelwords::Error) -> Self {
        let code = match &e {
            novelwords::Error::IncompleteRecovery { .. } => 4,
            e if e.is_validation() => 2,
            _ => 3,
        };
        let message = match &e {
            novelwords::Error::IncompleteRecovery { partial, .. } => format!("{e}; partial selection {partial:?}"),
            _ => e.to_string(),
        };
        Self { code, message }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::validation(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "novelwords", version, about = "Novel-word detection for separable topic models")]
struct Cli {
    /// TOML file with one table per subcommand; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a corpus from a model.
    Generate(GenerateOpts),
    /// Detect one novel word per topic in a corpus.
    Detect(DetectOpts),
    /// Certify simplicial, diagonal-dominance and full-rank conditions.
    Check(CheckOpts),
    /// Novel-word groups from the extreme rows of the population statistic.
    Oracle(OracleOpts),
    /// Build two models with different novel words and identical observations.
    Adversarial(AdversarialOpts),
    /// Success rate of detection over a ladder of corpus sizes.
    Experiment(ExperimentOpts),
    /// Stage wall-times while one parameter varies.
    Timing(TimingOpts),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FigureMatrix {
    Beta1,
    Beta2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Axis {
    M,
    P,
    W,
    K,
}

/// Model selection shared by `generate` and `experiment`.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct ModelOpts {
    /// Model JSON file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Vocabulary size of a generated model.
    #[arg(long)]
    w: Option<usize>,
    /// Number of topics of a generated model.
    #[arg(long)]
    k: Option<usize>,
    /// Novel words per topic of a generated model.
    #[arg(long)]
    novel_per_topic: Option<usize>,
    /// Symmetric Dirichlet concentration of the prior.
    #[arg(long)]
    alpha: Option<f64>,
    /// Seed of the generated model.
    #[arg(long)]
    model_seed: Option<u64>,
}

impl ModelOpts {
    fn fill(&mut self) {
        if self.model.is_none() {
            self.w.get_or_insert(30);
            self.k.get_or_insert(3);
            self.novel_per_topic.get_or_insert(1);
            self.alpha.get_or_insert(1.0);
            self.model_seed.get_or_insert(0);
        }
    }

    fn source(&self) -> CliResult<ModelSource> {
        if let Some(path) = &self.model {
            let file = novelwords::io::read_model_json(File::open(path)?)?;
            return Ok(ModelSource::Inline(file));
        }
        let k = self.k.expect("filled");
        Ok(ModelSource::Generated {
            vocab_size: self.w.expect("filled"),
            num_topics: k,
            novel_per_topic: self.novel_per_topic.expect("filled"),
            prior: PriorKind::Dirichlet {
                concentration: vec![self.alpha.expect("filled"); k],
            },
            model_seed: self.model_seed.expect("filled"),
        })
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct GenerateOpts {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelOpts,
    /// Use a matrix of the non-uniqueness counterexample (W >= 8).
    #[arg(long, value_enum)]
    figure1: Option<FigureMatrix>,
    /// Number of documents.
    #[arg(long)]
    m: Option<usize>,
    /// Words per document.
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Corpus output path; a `.json` sidecar with the config is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the model JSON here.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct DetectOpts {
    /// Corpus in bag-of-words text format.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Number of topics.
    #[arg(long)]
    k: Option<usize>,
    /// Number of random projections.
    #[arg(long)]
    p: Option<usize>,
    /// Separation constant; estimated from the data when absent.
    #[arg(long)]
    d: Option<f64>,
    /// Quantile used when estimating d.
    #[arg(long)]
    quantile: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long, value_enum)]
    output: Option<OutputFormat>,
    /// Number of document shards.
    #[arg(long)]
    shards: Option<usize>,
    /// Aggregate projections instead of the full statistic.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    light: Option<bool>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct CheckOpts {
    /// Square matrix as headerless CSV.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Model JSON; its prior's normalized correlation is checked.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct OracleOpts {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct AdversarialOpts {
    /// Prior JSON (`{"kind": ...}`); a random non-simplicial prior when absent.
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Topics of the random prior.
    #[arg(long)]
    k: Option<usize>,
    /// Vocabulary size of the constructed models.
    #[arg(long)]
    w: Option<usize>,
    /// Scale of the two constructed rows; half the largest valid value when absent.
    #[arg(long)]
    b: Option<f64>,
    /// Mixing weight in (0, 1).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Writes `<out>.beta1.json` and `<out>.beta2.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct ExperimentOpts {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelOpts,
    /// Comma-separated, strictly increasing corpus sizes.
    #[arg(long, value_delimiter = ',')]
    ladder: Option<Vec<usize>>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    d: Option<f64>,
    #[arg(long)]
    quantile: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    shards: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    light: Option<bool>,
    /// Writes `<out>.csv` and `<out>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct TimingOpts {
    /// Parameter to vary.
    #[arg(long, value_enum)]
    axis: Option<Axis>,
    /// Comma-separated values of the varied parameter.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<usize>>,
    #[arg(long)]
    w: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Writes `<out>.csv` and `<out>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn required<T: Clone>(v: &Option<T>, flag: &str) -> CliResult<T> {
    v.clone().ok_or_else(|| CliError::validation(format!("--{flag} is required")))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json(path: Option<&Path>, value: &Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::from_json)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => print_stdout(&(text + "\n"))?,
    }
    Ok(())
}

/// Writes to stdout, treating a closed pipe (e.g. `| head`) as success.
fn print_stdout(text: &str) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn to_value<T: Serialize>(v: &T) -> CliResult<Value> {
    serde_json::to_value(v).map_err(CliError::from_json)
}

fn generate(mut o: GenerateOpts) -> CliResult<()> {
    let out = required(&o.out, "out")?;
    o.m.get_or_insert(1000);
    o.n.get_or_insert(200);
    o.seed.get_or_insert(0);
    let (beta, prior) = if let Some(which) = o.figure1 {
        let fig = figure1_models(*o.model.w.get_or_insert(20))?;
        let prior = match o.model.alpha {
            Some(a) => PriorModel::symmetric_dirichlet(3, a)?,
            None => fig.prior,
        };
        let beta = match which {
            FigureMatrix::Beta1 => fig.beta1,
            FigureMatrix::Beta2 => fig.beta2,
        };
        (beta, prior)
    } else {
        o.model.fill();
        o.model.source()?.build()?
    };
    let (m, n, seed) = (o.m.unwrap(), o.n.unwrap(), o.seed.unwrap());
    let (_, corpus) = generate_corpus(&beta, &prior, m, n, seed)?;
    save_uci(&out, &corpus)?;
    let config = to_value(&o)?;
    if let Some(path) = &o.model_out {
        save_model(path, &ModelFile::new(&beta, &prior).with_config(config.clone()))?;
    }
    let summary = json!({
        "config": config,
        "W": beta.vocab_size(),
        "K": beta.num_topics(),
        "M": corpus.num_docs(),
        "N": n,
        "nnz": corpus.counts().nnz(),
        "novel_words": novel_words_of(&beta, 0.0).ok().map(|g| g.groups),
    });
    write_json(Some(&with_suffix(&out, ".json")), &summary)?;
    write_json(None, &summary)
}

fn detect(mut o: DetectOpts) -> CliResult<()> {
    let corpus_path = required(&o.corpus, "corpus")?;
    let k = required(&o.k, "k")?;
    o.p.get_or_insert(500);
    o.seed.get_or_insert(0);
    o.output.get_or_insert(OutputFormat::Json);
    o.shards.get_or_insert(1);
    o.light.get_or_insert(false);
    if o.d.is_none() {
        o.quantile.get_or_insert(D_QUANTILE);
    }
    let corpus = load_uci(&corpus_path)?;
    let config = DetectorConfig {
        k,
        projections: o.p.unwrap(),
        d: match o.d {
            Some(d) => DPolicy::Given { d },
            None => DPolicy::Estimated {
                quantile: o.quantile.unwrap(),
            },
        },
        seed: o.seed.unwrap(),
        split_seed: o.split_seed,
        exclude: Vec::new(),
    };
    let resolved = to_value(&o)?;
    let (shards, light) = (o.shards.unwrap(), o.light.unwrap());

    let (result, timing, dist): (DetectionResult, Value, Value) = if shards == 1 && !light {
        let (r, t) = detect_novel_words_timed(&corpus, &config)?;
        let timing = json!({"split": t.split, "cooc": t.cooc, "project": t.project, "select": t.select, "total": t.total()});
        (r, timing, Value::Null)
    } else {
        let start = Instant::now();
        let mode = if light { Mode::Light } else { Mode::Faithful };
        let report = run_distributed(&corpus, &config, shards, mode)?;
        let total = start.elapsed().as_secs_f64() * 1e3;
        let timing = json!({"split": null, "cooc": null, "project": null, "select": null, "total": total});
        let dist = json!({"shards": shards, "mode": mode, "bytes": report.bytes, "shortlist": report.shortlist});
        (report.result, timing, dist)
    };

    let doc = json!({
        "selected": result.selected,
        "phat": result.phat,
        "d_used": result.d_used,
        "seed": config.seed,
        "split_seed": config.split_seed(),
        "timing_ms": timing,
        "nbd_sizes": result.nbd_sizes,
        "diagnostics": result.diagnostics,
        "distributed": dist,
        "config": resolved,
    });
    match o.output.unwrap() {
        OutputFormat::Json => write_json(o.out.as_deref(), &doc),
        OutputFormat::Csv => {
            let mut rank = vec![String::new(); result.phat.len()];
            for (r, &i) in result.selected.iter().enumerate() {
                rank[i] = (r + 1).to_string();
            }
            let mut text = String::from("word,phat,nbd_size,selected_rank\n");
            for (i, p) in result.phat.iter().enumerate() {
                text.push_str(&format!("{i},{p},{},{}\n", result.nbd_sizes[i], rank[i]));
            }
            match &o.out {
                Some(path) => {
                    std::fs::write(path, text)?;
                    write_json(Some(&with_suffix(path, ".json")), &doc)
                }
                None => print_stdout(&text),
            }
        }
    }
}

fn check(mut o: CheckOpts) -> CliResult<()> {
    let tol = *o.tol.get_or_insert(SIMPLICIAL_TOL);
    let matrix = match (&o.matrix, &o.model) {
        (Some(path), None) => load_csv_matrix(path)?,
        (None, Some(path)) => load_model(path)?.1.normalized_correlation(),
        _ => return Err(CliError::validation("give exactly one of --matrix and --model")),
    };
    let report = check_conditions(&matrix, tol)?;
    let mut doc = to_value(&report)?;
    doc["config"] = to_value(&o)?;
    write_json(o.out.as_deref(), &doc)
}

fn oracle(mut o: OracleOpts) -> CliResult<()> {
    let path = required(&o.model, "model")?;
    let tol = *o.tol.get_or_insert(ORACLE_TOL);
    let (beta, prior) = load_model(&path)?;
    let groups = oracle_novel_words(&beta, &prior, tol)?;
    let truth = novel_words_of(&beta, 0.0).ok();
    let doc = json!({
        "groups": groups.canonical(),
        "novel_words": truth.as_ref().map(|t| t.canonical()),
        "agrees": truth.as_ref().map(|t| t.equivalent(&groups)),
        "config": to_value(&o)?,
    });
    write_json(o.out.as_deref(), &doc)
}

fn adversarial(mut o: AdversarialOpts) -> CliResult<()> {
    let seed = *o.seed.get_or_insert(0);
    let alpha = *o.alpha.get_or_insert(0.5);
    let (prior, perm) = match &o.prior {
        Some(path) => {
            let kind: PriorKind = serde_json::from_reader(File::open(path)?).map_err(CliError::from_json)?;
            let (p, perm) = violating_topic_first(&PriorModel::new(kind)?)?;
            (p, Some(perm))
        }
        None => (random_nonsimplicial_prior(*o.k.get_or_insert(3), seed)?, None),
    };
    let k = prior.num_topics();
    let w = *o.w.get_or_insert(10.max(k + 2));
    if w < k + 2 {
        return Err(CliError::validation(format!("--w must be at least K + 2 = {}", k + 2)));
    }
    let filler = random_separable(
        RandomModelSpec {
            vocab_size: w - 2,
            num_topics: k,
            novel_per_topic: 1,
        },
        seed,
    )?;
    let limit = max_scale(&prior, alpha)?;
    let b = *o.b.get_or_insert(0.5 * limit);
    let pair = adversarial_pair(&prior, &filler, b, alpha)?;

    let thetas = sample_theta(&prior, 1000, seed)?;
    let gap = (pair.beta1.entries() * &thetas - pair.beta2.entries() * &thetas).amax();
    let config = to_value(&o)?;
    if let Some(prefix) = &o.out {
        for (name, beta) in [(".beta1.json", &pair.beta1), (".beta2.json", &pair.beta2)] {
            save_model(&with_suffix(prefix, name), &ModelFile::new(beta, &prior).with_config(config.clone()))?;
        }
    }
    let groups = |beta: &TopicMatrix| novel_words_of(beta, 0.0).ok().map(|g| g.canonical());
    let doc = json!({
        "e": pair.e.as_slice(),
        "b": b,
        "max_scale": limit,
        "alpha": alpha,
        "b1": pair.b1.as_slice(),
        "b2": pair.b2.as_slice(),
        "topic_permutation": perm,
        "novel_words_beta1": groups(&pair.beta1),
        "novel_words_beta2": groups(&pair.beta2),
        "max_observation_difference": gap,
        "invariant_violations": pair.invariant_violations(),
        "config": config,
    });
    write_json(None, &doc)
}

fn experiment(mut o: ExperimentOpts) -> CliResult<()> {
    o.model.fill();
    o.ladder.get_or_insert_with(|| vec![100, 1000, 10_000]);
    o.n.get_or_insert(200);
    o.p.get_or_insert(500);
    o.trials.get_or_insert(20);
    o.seed.get_or_insert(0);
    o.shards.get_or_insert(1);
    o.light.get_or_insert(false);
    if o.d.is_none() {
        o.quantile.get_or_insert(D_QUANTILE);
    }
    let spec = ExperimentSpec {
        model: o.model.source()?,
        ladder: o.ladder.clone().unwrap(),
        doc_len: o.n.unwrap(),
        projections: o.p.unwrap(),
        d: match o.d {
            Some(d) => DPolicy::Given { d },
            None => DPolicy::Estimated {
                quantile: o.quantile.unwrap(),
            },
        },
        trials: o.trials.unwrap(),
        seed: o.seed.unwrap(),
        shards: o.shards.unwrap(),
        mode: if o.light.unwrap() { Mode::Light } else { Mode::Faithful },
    };
    let report = run_experiment(&spec)?;
    let config = to_value(&o)?;
    if let Some(prefix) = &o.out {
        let mut csv = BufWriter::new(File::create(with_suffix(prefix, ".csv"))?);
        report.write_csv(&mut csv)?;
        csv.flush()?;
        let mut full = to_value(&report)?;
        full["config"] = config.clone();
        write_json(Some(&with_suffix(prefix, ".json")), &full)?;
    }
    write_json(
        None,
        &json!({"points": report.points, "novel_words": report.novel_words, "config": config}),
    )
}

fn timing(mut o: TimingOpts) -> CliResult<()> {
    let axis = required(&o.axis, "axis")?;
    let values = required(&o.values, "values")?;
    let spec = TimingSpec {
        vocab_size: *o.w.get_or_insert(200),
        num_topics: *o.k.get_or_insert(3),
        docs: *o.m.get_or_insert(2000),
        doc_len: *o.n.get_or_insert(200),
        projections: *o.p.get_or_insert(200),
        axis: match axis {
            Axis::M => ScalingAxis::M,
            Axis::P => ScalingAxis::P,
            Axis::W => ScalingAxis::W,
            Axis::K => ScalingAxis::K,
        },
        values,
        repeats: *o.repeats.get_or_insert(3),
        seed: *o.seed.get_or_insert(0),
    };
    let report = timing_scaling(&spec)?;
    let mut doc = to_value(&report)?;
    doc["config"] = to_value(&o)?;
    if let Some(prefix) = &o.out {
        let mut csv = BufWriter::new(File::create(with_suffix(prefix, ".csv"))?);
        report.write_csv(&mut csv)?;
        csv.flush()?;
        write_json(Some(&with_suffix(prefix, ".json")), &doc)?;
    }
    write_json(None, &doc)
}

fn run(cli: Cli) -> CliResult<()> {
    let file = cli.config.as_deref().map(config::load).transpose()?;
    let file = file.as_ref();
    match cli.command {
        Command::Generate(o) => generate(config::merge(&o, file, "generate")?),
        Command::Detect(o) => detect(config::merge(&o, file, "detect")?),
        Command::Check(o) => check(config::merge(&o, file, "check")?),
        Command::Oracle(o) => oracle(config::merge(&o, file, "oracle")?),
        Command::Adversarial(o) => adversarial(config::merge(&o, file, "adversarial")?),
        Command::Experiment(o) => experiment(config::merge(&o, file, "experiment")?),
        Command::Timing(o) => timing(config::merge(&o, file, "timing")?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
