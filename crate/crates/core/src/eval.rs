//! Rank correlation, cosine similarity and per-dataset reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Gold};
use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::labelmap::LabelMapping;

/// 1-based ranks; tied values share the mean of the ranks they cover.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(predictions: &[f64], golds: &[f64]) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::Shape {
            what: "spearman inputs",
            expected: golds.len(),
            got: predictions.len(),
        });
    }
    if predictions.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two observations"));
    }
    if predictions.iter().chain(golds).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in spearman input".into()));
    }
    pearson(&average_ranks(predictions), &average_ranks(golds))
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape {
            what: "cosine operands",
            expected: u.len(),
            got: v.len(),
        });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::InvalidInput("cosine of a zero vector".into()));
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Fraction of pairs whose prediction rounds to the gold category.
pub fn accuracy(model: &Model, dataset: &Dataset, mapping: &LabelMapping) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset(dataset.name.clone()));
    }
    let mut hits = 0usize;
    for pair in &dataset.pairs {
        let Gold::Label(gold) = &pair.gold else {
            return Err(Error::InvalidInput(format!(
                "{}: accuracy needs a categorical dataset",
                dataset.name
            )));
        };
        mapping.index_of(gold)?;
        if mapping.classify(model.score(&pair.s1, &pair.s2)?) == gold {
            hits += 1;
        }
    }
    Ok(hits as f64 / dataset.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub name: String,
    pub spearman: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub datasets: Vec<DatasetScore>,
    pub average: f64,
}

impl EvalReport {
    pub fn from_scores(datasets: Vec<DatasetScore>) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::InvalidInput("report needs at least one dataset".into()));
        }
        let average = datasets.iter().map(|d| d.spearman).sum::<f64>() / datasets.len() as f64;
        Ok(EvalReport { datasets, average })
    }

    /// Spearman x100 per dataset, one column each, then the average.
    pub fn to_table(&self) -> String {
        let mut header: Vec<String> = self.datasets.iter().map(|d| d.name.clone()).collect();
        header.push("Avg.".into());
        let mut row: Vec<String> = self
            .datasets
            .iter()
            .map(|d| format!("{:.2}", d.spearman * 100.0))
            .collect();
        row.push(format!("{:.2}", self.average * 100.0));
        let mut acc_row = None;
        if self.datasets.iter().any(|d| d.accuracy.is_some()) {
            let mut r: Vec<String> = self
                .datasets
                .iter()
                .map(|d| d.accuracy.map_or("-".into(), |a| format!("{:.2}", a * 100.0)))
                .collect();
            r.push(String::new());
            acc_row = Some(r);
        }
        let widths: Vec<usize> = header
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let acc_w = acc_row.as_ref().map_or(0, |r| r[i].len());
                h.len().max(row[i].len()).max(acc_w)
            })
            .collect();
        let mut out = String::new();
        let mut line = |label: &str, cells: &[String]| {
            let _ = write!(out, "{label:<10}");
            for (c, w) in cells.iter().zip(&widths) {
                let _ = write!(out, "  {c:>w$}");
            }
            out.push('\n');
        };
        line("", &header);
        line("spearman", &row);
        if let Some(r) = &acc_row {
            line("accuracy", r);
        }
        out
    }
}

/// Per-dataset Spearman of model scores against gold values, plus rounding
/// accuracy for categorical datasets when a mapping is supplied.
pub fn evaluate(model: &Model, datasets: &[Dataset], mapping: Option<&LabelMapping>) -> Result<EvalReport> {
    let mut scores = Vec::with_capacity(datasets.len());
    for ds in datasets {
        if ds.is_empty() {
            return Err(Error::EmptyDataset(ds.name.clone()));
        }
        let mut preds = Vec::with_capacity(ds.len());
        let mut golds = Vec::with_capacity(ds.len());
        let mut categorical = false;
        for pair in &ds.pairs {
            preds.push(model.score(&pair.s1, &pair.s2)?);
            golds.push(match &pair.gold {
                Gold::Score(s) => *s,
                Gold::Label(l) => {
                    categorical = true;
                    mapping
                        .ok_or_else(|| {
                            Error::InvalidInput(format!("{}: categorical dataset needs a label mapping", ds.name))
                        })?
                        .encode(l)?
                }
            });
        }
        let accuracy = match (categorical, mapping) {
            (true, Some(m)) => Some(accuracy(model, ds, m)?),
            _ => None,
        };
        scores.push(DatasetScore {
            name: ds.name.clone(),
            spearman: spearman(&preds, &golds)?,
            accuracy,
            pairs: ds.len(),
        });
    }
    EvalReport::from_scores(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_examples() {
        let g = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&[10.0, 20.0, 30.0, 40.0], &g).unwrap(), 1.0);
        assert_eq!(spearman(&[4.0, 3.0, 2.0, 1.0], &g).unwrap(), -1.0);
    }

    #[test]
    fn spearman_with_ties_hand_value() {
        // golds (1,2,2,4) rank to (1, 2.5, 2.5, 4); preds (1,3,2,4) to (1,3,2,4).
        // centred: g = (-1.5, 0, 0, 1.5), p = (-1.5, 0.5, -0.5, 1.5)
        // sxy = 4.5, sxx = 4.5, syy = 5  ->  rho = 4.5 / sqrt(22.5) = 3/sqrt(10)
        let rho = spearman(&[1.0, 3.0, 2.0, 4.0], &[1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!((rho - 3.0 / 10f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn spearman_errors() {
        assert!(matches!(spearman(&[1.0], &[1.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(
            spearman(&[1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(spearman(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn average_ranks_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[0.3, -2.0], &[0.3, -2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - 2f64.sqrt() / 2.0).abs() < 1e-15);
        assert!(cosine(&[0.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(cosine(&[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn report_average_and_json() {
        let r = EvalReport::from_scores(vec![DatasetScore {
            name: "only".into(),
            spearman: 0.625,
            accuracy: None,
            pairs: 3,
        }])
        .unwrap();
        assert_eq!(r.average, 0.625);
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
        assert!(EvalReport::from_scores(vec![]).is_err());
        assert!(r.to_table().contains("62.50"));
    }
}
