//! Ordered categories mapped onto evenly spaced numeric nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Categories in ascending order of similarity, placed at
/// `start, start + d, start + 2d, ...`.
///
/// Serialises as `{"categories": [...], "start": s, "interval": d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MappingDoc", into = "MappingDoc")]
pub struct LabelMapping {
    categories: Vec<String>,
    nodes: Vec<f64>,
    start: f64,
    interval: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MappingDoc {
    categories: Vec<String>,
    start: f64,
    interval: f64,
}

impl TryFrom<MappingDoc> for LabelMapping {
    type Error = Error;

    fn try_from(doc: MappingDoc) -> Result<Self> {
        LabelMapping::build(&doc.categories, doc.start, doc.interval)
    }
}

impl From<LabelMapping> for MappingDoc {
    fn from(m: LabelMapping) -> Self {
        MappingDoc {
            categories: m.categories,
            start: m.start,
            interval: m.interval,
        }
    }
}

impl LabelMapping {
    pub fn build<S: AsRef<str>>(categories: &[S], start: f64, interval: f64) -> Result<Self> {
        if categories.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a label mapping needs at least 2 categories, got {}",
                categories.len()
            )));
        }
        if !(interval.is_finite() && interval > 0.0) {
            return Err(Error::InvalidInput(format!(
                "node interval must be positive, got {interval}"
            )));
        }
        if !start.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite start node {start}")));
        }
        let categories: Vec<String> = categories.iter().map(|c| c.as_ref().to_owned()).collect();
        for (i, c) in categories.iter().enumerate() {
            if categories[..i].contains(c) {
                return Err(Error::InvalidInput(format!("duplicate category {c:?}")));
            }
        }
        let nodes = (0..categories.len()).map(|i| start + i as f64 * interval).collect();
        Ok(LabelMapping {
            categories,
            nodes,
            start,
            interval,
        })
    }

    /// contradiction / neutral / entailment at 0, 1, 2.
    pub fn nli() -> Self {
        Self::build(&["contradiction", "neutral", "entailment"], 0.0, 1.0).expect("static mapping is valid")
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    /// The spacing `d` between adjacent nodes.
    pub fn interval(&self) -> f64 {
        self.interval
    }

    pub fn lowest(&self) -> f64 {
        self.nodes[0]
    }

    pub fn highest(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn index_of(&self, category: &str) -> Result<usize> {
        self.categories
            .iter()
            .position(|c| c == category)
            .ok_or_else(|| Error::UnknownCategory(category.to_owned()))
    }

    pub fn encode(&self, category: &str) -> Result<f64> {
        self.index_of(category).map(|i| self.nodes[i])
    }

    pub fn decode(&self, index: usize) -> Result<&str> {
        self.categories
            .get(index)
            .map(String::as_str)
            .ok_or(Error::IndexOutOfRange {
                index,
                len: self.categories.len(),
            })
    }

    /// Index of the node nearest to `prediction`; exact midpoints go to the
    /// higher node. Predictions past either end land on the terminal node.
    pub fn nearest_index(&self, prediction: f64) -> usize {
        let last = self.nodes.len() - 1;
        if prediction.is_nan() {
            return 0;
        }
        let guess = ((prediction - self.start) / self.interval + 0.5).floor();
        let guess = guess.clamp(0.0, last as f64) as usize;
        // settle rounding noise in the division against the true distances
        let lo = guess.saturating_sub(1);
        let hi = (guess + 1).min(last);
        let mut best = lo;
        for i in lo + 1..=hi {
            let di = (prediction - self.nodes[i]).abs();
            let db = (prediction - self.nodes[best]).abs();
            if di <= db {
                best = i;
            }
        }
        best
    }

    pub fn classify(&self, prediction: f64) -> &str {
        &self.categories[self.nearest_index(prediction)]
    }

    /// Largest residual that still rounds to the right interior node.
    pub fn correctness_radius(&self) -> f64 {
        self.interval / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four() -> LabelMapping {
        LabelMapping::build(
            &[
                "irrelevant",
                "slightly relevant",
                "moderately relevant",
                "highly relevant",
            ],
            0.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn build_examples() {
        assert_eq!(four().nodes(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(LabelMapping::nli().nodes(), &[0.0, 1.0, 2.0]);
        let m = LabelMapping::build(&["low", "high"], 0.0, 0.5).unwrap();
        assert_eq!(m.nodes(), &[0.0, 0.5]);
    }

    #[test]
    fn build_rejects_bad_input() {
        assert!(LabelMapping::build(&["only"], 0.0, 1.0).is_err());
        assert!(LabelMapping::build(&["a", "b"], 0.0, 0.0).is_err());
        assert!(LabelMapping::build(&["a", "b"], 0.0, -1.0).is_err());
        assert!(LabelMapping::build(&["a", "a"], 0.0, 1.0).is_err());
    }

    #[test]
    fn encode_decode() {
        let m = LabelMapping::nli();
        assert_eq!(m.encode("entailment").unwrap(), 2.0);
        assert_eq!(m.decode(0).unwrap(), "contradiction");
        for i in 0..m.len() {
            assert_eq!(m.encode(m.decode(i).unwrap()).unwrap(), m.nodes()[i]);
        }
        assert!(matches!(m.encode("maybe"), Err(Error::UnknownCategory(_))));
        assert!(matches!(m.decode(3), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn classify_examples() {
        let m = four();
        assert_eq!(m.classify(2.875), "highly relevant");
        assert_eq!(m.classify(1.333), "slightly relevant");
        assert_eq!(m.classify(1.5), "moderately relevant");
        assert_eq!(m.classify(3.57), "highly relevant");
        assert_eq!(m.classify(-7.0), "irrelevant");
        for (i, &n) in m.nodes().iter().enumerate() {
            assert_eq!(m.nearest_index(n), i);
        }
    }

    #[test]
    fn correctness_radius_examples() {
        let m = four();
        assert_eq!(m.correctness_radius(), 0.5);
        let half = LabelMapping::build(&["low", "high"], 0.0, 0.5).unwrap();
        assert_eq!(half.correctness_radius(), 0.25);
        for i in 1..m.len() - 1 {
            let n = m.nodes()[i];
            for eps in [0.0, 0.1, 0.25, 0.49, 0.499_999] {
                assert_eq!(m.nearest_index(n + eps), i);
                assert_eq!(m.nearest_index(n - eps), i);
            }
        }
    }

    #[test]
    fn json_document_round_trip() {
        let m = LabelMapping::build(&["low", "mid", "high"], -1.0, 0.5).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(
            json,
            r#"{"categories":["low","mid","high"],"start":-1.0,"interval":0.5}"#
        );
        assert_eq!(serde_json::from_str::<LabelMapping>(&json).unwrap(), m);
        assert!(serde_json::from_str::<LabelMapping>(r#"{"categories":["x"],"start":0,"interval":1}"#).is_err());
    }
}
