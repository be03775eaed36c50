//! Labeled review corpora: ingest from CSV or JSONL, word-count filtering
//! and seeded train/validation/test splits.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};
use crate::prompting::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewExample {
    pub id: String,
    pub text: String,
    pub label: Label,
    pub split: Option<Split>,
    pub word_count: usize,
}

impl ReviewExample {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Label) -> Self {
        let text = text.into();
        Self {
            id: id.into(),
            word_count: word_count(&text),
            text,
            label,
            split: None,
        }
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(Format::Csv),
            Some("jsonl") | Some("json") => Ok(Format::Jsonl),
            _ => Err(Error::Config(format!(
                "cannot infer input format from {}",
                path.display()
            ))),
        }
    }
}

/// Column names and label spellings of an input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub id: String,
    pub text: String,
    pub label: String,
    /// Extra raw label values mapped onto a task label, e.g. `("spam", Deceptive)`.
    /// The label names themselves are always accepted, case-insensitively.
    #[serde(default)]
    pub label_values: Vec<(String, Label)>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            id: "id".into(),
            text: "text".into(),
            label: "label".into(),
            label_values: Vec::new(),
        }
    }
}

impl Schema {
    fn map_label(&self, raw: &str) -> Option<Label> {
        let raw = raw.trim();
        self.label_values
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(raw))
            .map(|(_, l)| *l)
            .or_else(|| raw.parse().ok())
    }
}

fn build_example(
    schema: &Schema,
    row: usize,
    id: Option<&str>,
    text: Option<&str>,
    label: Option<&str>,
) -> Result<ReviewExample> {
    let id = id
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::data(Some(row), format!("missing {:?} value", schema.id)))?;
    let text = text
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::data(Some(row), "empty review text"))?;
    let raw =
        label.ok_or_else(|| Error::data(Some(row), format!("missing {:?} value", schema.label)))?;
    let label = schema
        .map_label(raw)
        .ok_or_else(|| Error::data(Some(row), format!("unknown label value {raw:?}")))?;
    Ok(ReviewExample::new(id, text, label))
}

fn read_csv(path: &Path, schema: &Schema) -> Result<Vec<ReviewExample>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, None, e))?;
    let headers = reader
        .headers()
        .map_err(|e| csv_error(path, Some(1), e))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::data(Some(1), format!("missing column {name:?}")))
    };
    let (ci, ct, cl) = (
        column(&schema.id)?,
        column(&schema.text)?,
        column(&schema.label)?,
    );
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        // header is row 1
        let row = i + 2;
        let rec = rec.map_err(|e| csv_error(path, Some(row), e))?;
        out.push(build_example(
            schema,
            row,
            rec.get(ci),
            rec.get(ct),
            rec.get(cl),
        )?);
    }
    Ok(out)
}

fn csv_error(path: &Path, row: Option<usize>, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::data(row, format!("malformed CSV: {other:?}")),
    }
}

fn read_jsonl_rows(path: &Path, schema: &Schema) -> Result<Vec<ReviewExample>> {
    let rows: Vec<serde_json::Map<String, serde_json::Value>> = read_jsonl(path)?;
    let field = |m: &serde_json::Map<String, serde_json::Value>, k: &str| -> Option<String> {
        match m.get(k)? {
            serde_json::Value::String(s) => Some(s.clone()),
            serde_json::Value::Number(n) => Some(n.to_string()),
            _ => None,
        }
    };
    rows.iter()
        .enumerate()
        .map(|(i, m)| {
            build_example(
                schema,
                i + 1,
                field(m, &schema.id).as_deref(),
                field(m, &schema.text).as_deref(),
                field(m, &schema.label).as_deref(),
            )
        })
        .collect()
}

/// Reads and validates a corpus; duplicate ids are rejected.
pub fn ingest(path: &Path, format: Format, schema: &Schema) -> Result<Vec<ReviewExample>> {
    let examples = match format {
        Format::Csv => read_csv(path, schema)?,
        Format::Jsonl => read_jsonl_rows(path, schema)?,
    };
    let mut seen = HashSet::new();
    for (i, e) in examples.iter().enumerate() {
        if !seen.insert(e.id.as_str()) {
            let row = match format {
                Format::Csv => i + 2,
                Format::Jsonl => i + 1,
            };
            return Err(Error::data(Some(row), format!("duplicate id {:?}", e.id)));
        }
    }
    Ok(examples)
}

pub fn filter_min_words(examples: Vec<ReviewExample>, min_words: usize) -> Vec<ReviewExample> {
    examples
        .into_iter()
        .filter(|e| e.word_count >= min_words)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
    #[serde(default)]
    pub min_words: usize,
    /// Keep at most this many examples per label before splitting.
    #[serde(default)]
    pub per_class_cap: Option<usize>,
}

impl SplitSpec {
    /// 0.6 / 0.2 / 0.2.
    pub fn standard(seed: u64) -> Self {
        Self {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
            seed,
            min_words: 0,
            per_class_cap: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config("split fractions must lie in [0, 1]".into()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions sum to {}, not 1",
                parts.iter().sum::<f64>()
            )));
        }
        Ok(())
    }

    /// Validation and test sizes are floored; the remainder goes to train.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
        let validation = floor(self.validation);
        let test = floor(self.test);
        (n - validation - test, validation, test)
    }
}

/// Filters, optionally caps per label, shuffles and assigns splits.
/// The result is in shuffled order.
pub fn split(examples: Vec<ReviewExample>, spec: &SplitSpec) -> Result<Vec<ReviewExample>> {
    spec.validate()?;
    let mut pool = filter_min_words(examples, spec.min_words);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    if let Some(cap) = spec.per_class_cap {
        pool.shuffle(&mut rng);
        let mut kept = [0usize; 2];
        pool.retain(|e| {
            let k = &mut kept[e.label.index()];
            *k += 1;
            *k <= cap
        });
    }
    pool.shuffle(&mut rng);
    let (train, validation, _) = spec.counts(pool.len());
    for (i, e) in pool.iter_mut().enumerate() {
        e.split = Some(if i < train {
            Split::Train
        } else if i < train + validation {
            Split::Validation
        } else {
            Split::Test
        });
    }
    Ok(pool)
}

pub fn of_split(examples: &[ReviewExample], which: Split) -> Vec<ReviewExample> {
    examples
        .iter()
        .filter(|e| e.split == Some(which))
        .cloned()
        .collect()
}

pub fn write_examples(path: &Path, examples: &[ReviewExample]) -> Result<()> {
    write_jsonl(path, examples)
}

pub fn read_examples(path: &Path) -> Result<Vec<ReviewExample>> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(n: usize) -> Vec<ReviewExample> {
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 {
                    Label::Truthful
                } else {
                    Label::Deceptive
                };
                ReviewExample::new(format!("r{i}"), "word ".repeat(i % 7 + 1), label)
            })
            .collect()
    }

    fn sizes(ex: &[ReviewExample]) -> (usize, usize, usize) {
        let c = |s| ex.iter().filter(|e| e.split == Some(s)).count();
        (c(Split::Train), c(Split::Validation), c(Split::Test))
    }

    #[test]
    fn split_counts_for_paper_sizes() {
        let spec = SplitSpec::standard(1);
        assert_eq!(sizes(&split(corpus(1600), &spec).unwrap()), (960, 320, 320));
        assert_eq!(
            sizes(&split(corpus(2000), &spec).unwrap()),
            (1200, 400, 400)
        );
        assert_eq!(spec.counts(7), (5, 1, 1));
    }

    #[test]
    fn split_is_seeded() {
        let spec = SplitSpec::standard(4);
        assert_eq!(
            split(corpus(50), &spec).unwrap(),
            split(corpus(50), &spec).unwrap()
        );
        let other = split(corpus(50), &SplitSpec::standard(5)).unwrap();
        assert_ne!(split(corpus(50), &spec).unwrap(), other);
    }

    #[test]
    fn bad_fractions() {
        let mut spec = SplitSpec::standard(0);
        spec.test = 0.3;
        assert!(split(corpus(10), &spec).is_err());
    }

    #[test]
    fn filter_is_monotone() {
        let c = corpus(100);
        let mut last = usize::MAX;
        for t in 0..10 {
            let n = filter_min_words(c.clone(), t).len();
            assert!(n <= last);
            last = n;
        }
    }

    #[test]
    fn per_class_cap() {
        let mut spec = SplitSpec::standard(2);
        spec.per_class_cap = Some(10);
        let out = split(corpus(100), &spec).unwrap();
        assert_eq!(out.len(), 20);
        assert_eq!(
            out.iter().filter(|e| e.label == Label::Truthful).count(),
            10
        );
    }

    #[test]
    fn csv_ingest_errors_carry_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        std::fs::write(&p, "id,text,label\n1,good stay,truthful\n2,,deceptive\n").unwrap();
        match ingest(&p, Format::Csv, &Schema::default()) {
            Err(Error::Data { row: Some(3), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&p, "id,text,label\n1,good stay,maybe\n").unwrap();
        assert!(matches!(
            ingest(&p, Format::Csv, &Schema::default()),
            Err(Error::Data { row: Some(2), .. })
        ));
        std::fs::write(&p, "id,text,label\n1,a,truthful\n1,b,deceptive\n").unwrap();
        assert!(ingest(&p, Format::Csv, &Schema::default()).is_err());
    }

    #[test]
    fn mapped_columns_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        std::fs::write(
            &p,
            "{\"rid\": 7, \"body\": \"nice  clean room\", \"y\": \"spam\"}\n",
        )
        .unwrap();
        let schema = Schema {
            id: "rid".into(),
            text: "body".into(),
            label: "y".into(),
            label_values: vec![("spam".into(), Label::Deceptive)],
        };
        let ex = ingest(&p, Format::Jsonl, &schema).unwrap();
        assert_eq!(ex[0].id, "7");
        assert_eq!(ex[0].label, Label::Deceptive);
        assert_eq!(ex[0].word_count, 3);
    }
}
