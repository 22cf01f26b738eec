//! File formats.
//!
//! Model JSON:
//!
//! ```json
//! {"W": 5, "K": 2, "beta": [/* W*K entries, column-major */],
//!  "prior": {"kind": "dirichlet", "concentration": [1.0, 1.0]},
//!  "config": { /* optional provenance, ignored on read */ }}
//! ```
//!
//! `prior` is either `{"kind": "dirichlet", "concentration": [...]}` or
//! `{"kind": "mixture", "support": [[...], ...], "weights": [...]}`.
//! Doubles are written in shortest round-trip form.
//!
//! Corpus text (bag of words): three header lines `W`, `M`, `NNZ`, then one
//! `docID wordID count` line per nonzero cell, 1-indexed, single spaces.
//! Only trailing whitespace is tolerated. Duplicate cells and zero counts
//! are rejected.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CountMatrix, Corpus, PriorKind, PriorModel, TopicMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(rename = "W")]
    pub vocab_size: usize,
    #[serde(rename = "K")]
    pub num_topics: usize,
    pub beta: Vec<f64>,
    pub prior: PriorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl ModelFile {
    pub fn new(beta: &TopicMatrix, prior: &PriorModel) -> Self {
        Self {
            vocab_size: beta.vocab_size(),
            num_topics: beta.num_topics(),
            beta: beta.entries().as_slice().to_vec(),
            prior: prior.kind().clone(),
            config: None,
        }
    }

    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = Some(config);
        self
    }

    /// Validated topic matrix and prior.
    pub fn into_model(self) -> Result<(TopicMatrix, PriorModel)> {
        let (w, k) = (self.vocab_size, self.num_topics);
        if self.beta.len() != w * k {
            return Err(Error::Dimension(format!(
                "beta has {} entries, expected W*K = {}",
                self.beta.len(),
                w * k
            )));
        }
        let beta = TopicMatrix::new(DMatrix::from_vec(w, k, self.beta))?;
        let prior = PriorModel::new(self.prior)?;
        if prior.num_topics() != k {
            return Err(Error::Dimension(format!(
                "prior has {} topics, beta has {k}",
                prior.num_topics()
            )));
        }
        Ok((beta, prior))
    }
}

pub fn write_model_json<W: Write>(out: W, model: &ModelFile) -> Result<()> {
    serde_json::to_writer_pretty(out, model)?;
    Ok(())
}

pub fn read_model_json<R: Read>(input: R) -> Result<ModelFile> {
    Ok(serde_json::from_reader(input)?)
}

pub fn save_model(path: &Path, model: &ModelFile) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_model_json(&mut out, model)?;
    out.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(TopicMatrix, PriorModel)> {
    read_model_json(BufReader::new(File::open(path)?))?.into_model()
}

pub fn write_uci<W: Write>(mut out: W, corpus: &Corpus) -> Result<()> {
    let counts = corpus.counts();
    writeln!(out, "{}", counts.vocab_size())?;
    writeln!(out, "{}", counts.num_docs())?;
    writeln!(out, "{}", counts.nnz())?;
    for m in 0..counts.num_docs() {
        let (words, cnts) = counts.doc(m);
        for (&w, &c) in words.iter().zip(cnts) {
            writeln!(out, "{} {} {}", m + 1, w + 1, c)?;
        }
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    // `FromStr` for integers accepts a leading '+'; the format does not.
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::Parse {
            line,
            message: format!("{what}: expected an unsigned integer, got {s:?}"),
        });
    }
    s.parse().map_err(|_| Error::Parse {
        line,
        message: format!("{what}: {s:?} is out of range"),
    })
}

pub fn read_uci<R: BufRead>(input: R) -> Result<Corpus> {
    let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut header = [0usize; 3];
    for (slot, name) in header.iter_mut().zip(["W", "M", "NNZ"]) {
        let (n, line) = lines.next().ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("missing header line {name}"),
        })?;
        *slot = parse_field(line?.trim_end(), n, name)?;
    }
    let [w, m, nnz] = header;
    let mut docs: Vec<Vec<(usize, u32)>> = vec![Vec::new(); m];
    let mut seen = 0usize;
    let mut trailing_blank = None;
    for (n, line) in lines {
        let line = line?;
        let body = line.trim_end();
        if body.is_empty() {
            trailing_blank.get_or_insert(n);
            continue;
        }
        if let Some(blank) = trailing_blank {
            return Err(Error::Parse {
                line: blank,
                message: "blank line inside data".into(),
            });
        }
        let fields: Vec<&str> = body.split(' ').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: n,
                message: format!("expected 'docID wordID count', got {body:?}"),
            });
        }
        let d: usize = parse_field(fields[0], n, "docID")?;
        let word: usize = parse_field(fields[1], n, "wordID")?;
        let c: u32 = parse_field(fields[2], n, "count")?;
        if d == 0 || d > m {
            return Err(Error::Parse { line: n, message: format!("docID {d} outside 1..={m}") });
        }
        if word == 0 || word > w {
            return Err(Error::Parse { line: n, message: format!("wordID {word} outside 1..={w}") });
        }
        if c == 0 {
            return Err(Error::Parse { line: n, message: "zero count".into() });
        }
        docs[d - 1].push((word - 1, c));
        seen += 1;
    }
    if seen != nnz {
        return Err(Error::Parse {
            line: 3,
            message: format!("header declares {nnz} entries, found {seen}"),
        });
    }
    for (d, doc) in docs.iter_mut().enumerate() {
        doc.sort_unstable();
        if let Some(pair) = doc.windows(2).find(|p| p[0].0 == p[1].0) {
            return Err(Error::Parse {
                line: 0,
                message: format!("duplicate cell (doc {}, word {})", d + 1, pair[0].0 + 1),
            });
        }
    }
    Ok(Corpus::new(CountMatrix::from_docs(w, docs)?))
}

pub fn save_uci(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_uci(&mut out, corpus)?;
    out.flush()?;
    Ok(())
}

pub fn load_uci(path: &Path) -> Result<Corpus> {
    read_uci(BufReader::new(File::open(path)?))
}

/// Dense matrix from headerless CSV, one row per line.
pub fn read_csv_matrix<R: Read>(input: R) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { line: n + 1, message: e.to_string() })?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line: n + 1,
                    message: format!("not a number: {f:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn load_csv_matrix(path: &Path) -> Result<DMatrix<f64>> {
    read_csv_matrix(File::open(path)?)
}

pub fn write_csv_matrix<W: Write>(out: W, a: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in a.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{figure1_models, generate_corpus};
    use proptest::prelude::*;

    #[test]
    fn model_json_round_trips_exactly() {
        let fig = figure1_models(12).unwrap();
        let file = ModelFile::new(&fig.beta1, &fig.prior).with_config(serde_json::json!({"seed": 3}));
        let mut buf = Vec::new();
        write_model_json(&mut buf, &file).unwrap();
        let back = read_model_json(buf.as_slice()).unwrap();
        assert_eq!(back, file);
        let (beta, prior) = back.into_model().unwrap();
        assert_eq!(beta, fig.beta1);
        assert_eq!(prior, fig.prior);
    }

    #[test]
    fn model_json_field_names() {
        let beta = TopicMatrix::new(DMatrix::identity(2, 2)).unwrap();
        let prior = PriorModel::dirichlet(vec![1.0, 2.0]).unwrap();
        let v: serde_json::Value = serde_json::to_value(ModelFile::new(&beta, &prior)).unwrap();
        assert_eq!(v["W"], 2);
        assert_eq!(v["K"], 2);
        assert_eq!(v["beta"], serde_json::json!([1.0, 0.0, 0.0, 1.0]));
        assert_eq!(v["prior"]["kind"], "dirichlet");
    }

    #[test]
    fn bad_model_shape_is_rejected() {
        let text = r#"{"W": 2, "K": 2, "beta": [1, 0, 0], "prior": {"kind": "dirichlet", "concentration": [1, 1]}}"#;
        assert!(matches!(read_model_json(text.as_bytes()).unwrap().into_model(), Err(Error::Dimension(_))));
    }

    #[test]
    fn uci_round_trip() {
        let fig = figure1_models(10).unwrap();
        let prior = PriorModel::symmetric_dirichlet(3, 1.0).unwrap();
        let (_, c) = generate_corpus(&fig.beta1, &prior, 25, 30, 4).unwrap();
        let mut buf = Vec::new();
        write_uci(&mut buf, &c).unwrap();
        let back = read_uci(buf.as_slice()).unwrap();
        assert_eq!(back.counts(), c.counts());
        assert_eq!(back.doc_len(), Some(30));
    }

    #[test]
    fn uci_accepts_trailing_whitespace_only() {
        let ok = "3 \n2\n2\t\n1 1 2  \n2 3 1\n\n";
        let c = read_uci(ok.as_bytes()).unwrap();
        assert_eq!(c.counts().get(0, 0), 2);
        assert_eq!(c.counts().get(2, 1), 1);
        for bad in [
            " 3\n2\n1\n1 1 1\n",
            "3\n2\n1\n1  1 1\n",
            "3\n2\n1\n\n1 1 1\n",
            "3\n2\n2\n1 1 1\n1 1 2\n",
            "3\n2\n1\n1 4 1\n",
            "3\n2\n1\n3 1 1\n",
            "3\n2\n1\n1 1 0\n",
            "3\n2\n2\n1 1 1\n",
            "3\n2\n1\n1 1 +1\n",
            "3\n2\n",
        ] {
            assert!(read_uci(bad.as_bytes()).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn csv_matrix() {
        let a = read_csv_matrix("1, 2.5\n-3,4e-1\n".as_bytes()).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[1.0, 2.5, -3.0, 0.4]));
        assert!(read_csv_matrix("1,2\n3\n".as_bytes()).is_err());
        assert!(read_csv_matrix("1,x\n".as_bytes()).is_err());
        let mut buf = Vec::new();
        write_csv_matrix(&mut buf, &a).unwrap();
        assert_eq!(read_csv_matrix(buf.as_slice()).unwrap(), a);
    }

    proptest! {
        #[test]
        fn uci_round_trips_arbitrary_counts(
            docs in prop::collection::vec(prop::collection::vec((0usize..7, 1u32..50), 0..6), 0..8)
        ) {
            let c = Corpus::new(CountMatrix::from_docs(7, docs).unwrap());
            let mut buf = Vec::new();
            write_uci(&mut buf, &c).unwrap();
            let back = read_uci(buf.as_slice()).unwrap();
            prop_assert_eq!(back.counts(), c.counts());
        }
    }
}
