//! Sentence-pair corpora: TSV I/O, train/test overlap removal, label
//! rescaling, merging and positive-pair extraction.
//!
//! Files are UTF-8 with no header, one pair per line:
//! `score<TAB>sentence1<TAB>sentence2` for graded corpora or
//! `label<TAB>sentence1<TAB>sentence2` for categorical ones.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelmap::LabelMapping;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gold {
    Score(f64),
    Label(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePair {
    pub s1: String,
    pub s2: String,
    pub gold: Gold,
}

impl SentencePair {
    pub fn scored(s1: impl Into<String>, s2: impl Into<String>, score: f64) -> Self {
        SentencePair {
            s1: s1.into(),
            s2: s2.into(),
            gold: Gold::Score(score),
        }
    }

    pub fn labelled(s1: impl Into<String>, s2: impl Into<String>, label: impl Into<String>) -> Self {
        SentencePair {
            s1: s1.into(),
            s2: s2.into(),
            gold: Gold::Label(label.into()),
        }
    }

    pub fn score(&self) -> Option<f64> {
        match self.gold {
            Gold::Score(s) => Some(s),
            Gold::Label(_) => None,
        }
    }
}

/// What the gold column of a dataset holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSet {
    /// Real-valued scores within `[low, high]`.
    Scores { low: f64, high: f64 },
    /// Category names, in first-seen order unless declared otherwise.
    Categories(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub pairs: Vec<SentencePair>,
    pub labels: LabelSet,
}

impl Dataset {
    /// A graded dataset; every score must fall in `[low, high]`.
    pub fn scored(name: impl Into<String>, pairs: Vec<SentencePair>, low: f64, high: f64) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            pairs,
            labels: LabelSet::Scores { low, high },
        };
        ds.validate()?;
        Ok(ds)
    }

    /// A categorical dataset; every label must be one of `categories`.
    pub fn categorical(name: impl Into<String>, pairs: Vec<SentencePair>, categories: Vec<String>) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            pairs,
            labels: LabelSet::Categories(categories),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.labels, LabelSet::Categories(_))
    }

    fn validate(&self) -> Result<()> {
        match &self.labels {
            LabelSet::Scores { low, high } => {
                if !(low.is_finite() && high.is_finite() && low <= high) {
                    return Err(Error::InvalidInput(format!(
                        "{}: bad score range [{low}, {high}]",
                        self.name
                    )));
                }
                for (i, p) in self.pairs.iter().enumerate() {
                    match p.gold {
                        Gold::Score(s) if s.is_finite() && s >= *low && s <= *high => {}
                        Gold::Score(s) => {
                            return Err(Error::InvalidInput(format!(
                                "{}: pair {} score {s} outside [{low}, {high}]",
                                self.name,
                                i + 1
                            )))
                        }
                        Gold::Label(_) => {
                            return Err(Error::InvalidInput(format!(
                                "{}: pair {} has a label in a graded dataset",
                                self.name,
                                i + 1
                            )))
                        }
                    }
                }
            }
            LabelSet::Categories(cats) => {
                for (i, p) in self.pairs.iter().enumerate() {
                    match &p.gold {
                        Gold::Label(l) if cats.contains(l) => {}
                        Gold::Label(l) => return Err(Error::UnknownCategory(l.clone())),
                        Gold::Score(_) => {
                            return Err(Error::InvalidInput(format!(
                                "{}: pair {} has a score in a categorical dataset",
                                self.name,
                                i + 1
                            )))
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Re-declare the score range of a graded dataset.
    pub fn with_score_range(mut self, low: f64, high: f64) -> Result<Self> {
        if self.is_categorical() {
            return Err(Error::InvalidInput(format!(
                "{}: categorical dataset has no score range",
                self.name
            )));
        }
        self.labels = LabelSet::Scores { low, high };
        self.validate()?;
        Ok(self)
    }

    /// Re-declare the categories, e.g. to impose the order of a mapping.
    pub fn with_categories(mut self, mapping: &LabelMapping) -> Result<Self> {
        if !self.is_categorical() {
            return Err(Error::InvalidInput(format!(
                "{}: graded dataset has no categories",
                self.name
            )));
        }
        self.labels = LabelSet::Categories(mapping.categories().to_vec());
        self.validate()?;
        Ok(self)
    }

    pub fn scores(&self) -> Option<Vec<f64>> {
        self.pairs.iter().map(SentencePair::score).collect()
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Read a TSV corpus. Graded files get the observed `[min, max]` as their
/// declared range; categorical files list labels in first-seen order.
pub fn load_tsv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        path: path.to_owned(),
        line: 0,
        message: format!("not valid UTF-8: {e}"),
    })?;
    parse_tsv(&text, &dataset_name(path), path)
}

fn parse_tsv(text: &str, name: &str, path: &Path) -> Result<Dataset> {
    let mut pairs = Vec::new();
    let mut graded: Option<bool> = None;
    let mut categories: Vec<String> = Vec::new();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_owned(),
        line,
        message,
    };
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(parse_err(
                line_no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let head = fields[0].trim();
        let score = head.parse::<f64>().ok().filter(|s| s.is_finite());
        let is_graded = score.is_some();
        match graded {
            None => graded = Some(is_graded),
            Some(g) if g != is_graded => {
                return Err(parse_err(
                    line_no,
                    format!("mixes numeric scores and category labels ({head:?})"),
                ))
            }
            _ => {}
        }
        let gold = match score {
            Some(s) => Gold::Score(s),
            None => {
                if head.is_empty() {
                    return Err(parse_err(line_no, "empty label".into()));
                }
                if !categories.iter().any(|c| c == head) {
                    categories.push(head.to_owned());
                }
                Gold::Label(head.to_owned())
            }
        };
        pairs.push(SentencePair {
            s1: fields[1].to_owned(),
            s2: fields[2].to_owned(),
            gold,
        });
    }
    let labels = if graded == Some(false) {
        LabelSet::Categories(categories)
    } else {
        let scores = pairs.iter().filter_map(SentencePair::score);
        let low = scores.clone().fold(f64::INFINITY, f64::min);
        let high = scores.fold(f64::NEG_INFINITY, f64::max);
        if low.is_finite() {
            LabelSet::Scores { low, high }
        } else {
            LabelSet::Scores { low: 0.0, high: 0.0 }
        }
    };
    Ok(Dataset {
        name: name.to_owned(),
        pairs,
        labels,
    })
}

fn format_gold(gold: &Gold) -> String {
    match gold {
        Gold::Score(s) => format!("{s}"),
        Gold::Label(l) => l.clone(),
    }
}

fn check_field(s: &str) -> Result<()> {
    if s.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidInput(format!(
            "field contains a tab or line break: {s:?}"
        )));
    }
    Ok(())
}

/// Serialise in the same TSV layout [`load_tsv`] reads.
pub fn to_tsv(dataset: &Dataset) -> Result<String> {
    let mut out = String::new();
    for p in &dataset.pairs {
        check_field(&p.s1)?;
        check_field(&p.s2)?;
        let gold = format_gold(&p.gold);
        check_field(&gold)?;
        out.push_str(&gold);
        out.push('\t');
        out.push_str(&p.s1);
        out.push('\t');
        out.push_str(&p.s2);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_tsv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = to_tsv(dataset)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A training pair dropped because it also occurs in a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub pair: SentencePair,
    pub test_dataset: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupOutcome {
    pub filtered: Dataset,
    pub removed: Vec<Removal>,
}

fn key(s1: &str, s2: &str) -> (String, String) {
    (s1.trim().to_owned(), s2.trim().to_owned())
}

/// Drop every training pair whose two sentences occur in some test set, in
/// either order, whatever the scores. Duplicates inside the training set are
/// kept; test sets are only read.
pub fn dedup_filter(train: &Dataset, tests: &[Dataset]) -> DedupOutcome {
    let mut seen: HashMap<(String, String), &str> = HashMap::new();
    for test in tests {
        for p in &test.pairs {
            seen.entry(key(&p.s1, &p.s2)).or_insert(&test.name);
            seen.entry(key(&p.s2, &p.s1)).or_insert(&test.name);
        }
    }
    let mut kept = Vec::with_capacity(train.len());
    let mut removed = Vec::new();
    for p in &train.pairs {
        match seen.get(&key(&p.s1, &p.s2)) {
            Some(test) => removed.push(Removal {
                pair: p.clone(),
                test_dataset: (*test).to_owned(),
            }),
            None => kept.push(p.clone()),
        }
    }
    DedupOutcome {
        filtered: Dataset {
            name: train.name.clone(),
            pairs: kept,
            labels: train.labels.clone(),
        },
        removed,
    }
}

/// Removal audit as JSON lines, one removed pair per line.
pub fn audit_jsonl(removed: &[Removal]) -> Result<String> {
    let mut out = Vec::new();
    for r in removed {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").expect("writing to a Vec cannot fail");
    }
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

/// Map a 1..5 relatedness score onto 0..5.
pub fn rescale_sick(score: f64) -> Result<f64> {
    if !(1.0..=5.0).contains(&score) {
        return Err(Error::InvalidInput(format!("relatedness score {score} outside [1, 5]")));
    }
    Ok(5.0 * (score - 1.0) / 4.0)
}

/// [`rescale_sick`] over a whole graded dataset; the result is declared
/// on `[0, 5]`.
pub fn rescale_sick_dataset(dataset: &Dataset) -> Result<Dataset> {
    let pairs = dataset
        .pairs
        .iter()
        .map(|p| match p.gold {
            Gold::Score(s) => Ok(SentencePair {
                gold: Gold::Score(rescale_sick(s)?),
                ..p.clone()
            }),
            Gold::Label(_) => Err(Error::InvalidInput(format!(
                "{}: cannot rescale a categorical dataset",
                dataset.name
            ))),
        })
        .collect::<Result<_>>()?;
    Dataset::scored(dataset.name.clone(), pairs, 0.0, 5.0)
}

/// Concatenate datasets in order. All inputs must declare the same label set.
pub fn merge(name: impl Into<String>, datasets: &[Dataset]) -> Result<Dataset> {
    let name = name.into();
    let Some(first) = datasets.first() else {
        return Ok(Dataset {
            name,
            pairs: Vec::new(),
            labels: LabelSet::Scores { low: 0.0, high: 0.0 },
        });
    };
    for ds in &datasets[1..] {
        if ds.labels != first.labels {
            return Err(Error::InvalidInput(format!(
                "cannot merge {} ({:?}) with {} ({:?})",
                first.name, first.labels, ds.name, ds.labels
            )));
        }
    }
    Ok(Dataset {
        name,
        pairs: datasets.iter().flat_map(|d| d.pairs.iter().cloned()).collect(),
        labels: first.labels.clone(),
    })
}

/// contradiction -> 0, neutral -> 1, entailment -> 2.
pub fn map_nli(label: &str) -> Result<f64> {
    match label {
        "contradiction" => Ok(0.0),
        "neutral" => Ok(1.0),
        "entailment" => Ok(2.0),
        other => Err(Error::UnknownCategory(other.to_owned())),
    }
}

pub const POSITIVE_THRESHOLD: f64 = 4.0;

/// `(s1, s2)` for every pair scored at or above `threshold`.
pub fn extract_positive_pairs(dataset: &Dataset, threshold: f64) -> Result<Vec<(String, String)>> {
    if dataset.is_categorical() {
        return Err(Error::InvalidInput(format!(
            "{}: positive pairs need graded scores",
            dataset.name
        )));
    }
    Ok(dataset
        .pairs
        .iter()
        .filter(|p| p.score().is_some_and(|s| s >= threshold))
        .map(|p| (p.s1.clone(), p.s2.clone()))
        .collect())
}
