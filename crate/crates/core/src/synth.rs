//! Synthetic sentence-pair corpora whose similarity is fully determined by
//! how many tokens the two sentences share.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, SentencePair};
use crate::error::{Error, Result};

pub const FOUR_LEVELS: [&str; 4] = [
    "irrelevant",
    "slightly relevant",
    "moderately relevant",
    "highly relevant",
];

pub const NLI_LEVELS: [&str; 3] = ["contradiction", "neutral", "entailment"];

/// Seven graded evaluation sets, one per benchmark the tables report on.
pub const EVAL_SUITE: [&str; 7] = ["sts12", "sts13", "sts14", "sts15", "sts16", "stsb", "sickr"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusShape {
    /// Distinct words available to sentences.
    pub vocab: usize,
    /// Tokens per sentence.
    pub sentence_len: usize,
}

impl Default for CorpusShape {
    fn default() -> Self {
        CorpusShape {
            vocab: 40,
            sentence_len: 6,
        }
    }
}

impl CorpusShape {
    fn validate(&self) -> Result<()> {
        if self.sentence_len == 0 || self.vocab < 2 * self.sentence_len {
            return Err(Error::InvalidInput(format!(
                "need a vocabulary of at least twice the sentence length, got {} for {}",
                self.vocab, self.sentence_len
            )));
        }
        Ok(())
    }
}

fn word(id: usize) -> String {
    format!("w{id:03}")
}

/// Two sentences of `shape.sentence_len` distinct words sharing exactly
/// `shared` of them.
fn pair_with_overlap<R: Rng>(rng: &mut R, shape: CorpusShape, shared: usize) -> (String, String) {
    let len = shape.sentence_len;
    let mut pool: Vec<usize> = (0..shape.vocab).collect();
    pool.shuffle(rng);
    let first: Vec<usize> = pool[..len].to_vec();
    let mut second: Vec<usize> = first[..shared].to_vec();
    second.extend_from_slice(&pool[len..2 * len - shared]);
    second.shuffle(rng);
    let join = |ids: &[usize]| ids.iter().map(|&i| word(i)).collect::<Vec<_>>().join(" ");
    (join(&first), join(&second))
}

/// Shared-word count for class `c` of `k` evenly spread over `0..=len`.
fn shared_for_class(c: usize, k: usize, len: usize) -> usize {
    ((c * len) as f64 / (k - 1) as f64).round() as usize
}

/// Balanced categorical corpus: class `c` of `categories.len()` shares
/// `round(c * len / (K - 1))` words.
pub fn ordinal_corpus(name: &str, categories: &[&str], pairs: usize, shape: CorpusShape, seed: u64) -> Result<Dataset> {
    shape.validate()?;
    if categories.len() < 2 {
        return Err(Error::InvalidInput("need at least two categories".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = categories.len();
    let mut labels: Vec<usize> = (0..pairs).map(|i| i % k).collect();
    labels.shuffle(&mut rng);
    let out = labels
        .into_iter()
        .map(|c| {
            let (s1, s2) = pair_with_overlap(&mut rng, shape, shared_for_class(c, k, shape.sentence_len));
            SentencePair::labelled(s1, s2, categories[c])
        })
        .collect();
    Dataset::categorical(name, out, categories.iter().map(|c| c.to_string()).collect())
}

/// Graded corpus on `[0, 5]`: score = 5 * shared / len with the overlap drawn
/// uniformly.
pub fn graded_corpus(name: &str, pairs: usize, shape: CorpusShape, seed: u64) -> Result<Dataset> {
    shape.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.sentence_len;
    let out = (0..pairs)
        .map(|_| {
            let shared = rng.gen_range(0..=len);
            let (s1, s2) = pair_with_overlap(&mut rng, shape, shared);
            SentencePair::scored(s1, s2, 5.0 * shared as f64 / len as f64)
        })
        .collect();
    Dataset::scored(name, out, 0.0, 5.0)
}

/// The seven graded evaluation sets, each from its own seed.
pub fn eval_suite(pairs: usize, shape: CorpusShape, seed: u64) -> Result<Vec<Dataset>> {
    EVAL_SUITE
        .iter()
        .enumerate()
        .map(|(i, name)| graded_corpus(name, pairs, shape, seed.wrapping_add(1000 + i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Gold;
    use std::collections::HashSet;

    fn overlap(a: &str, b: &str) -> usize {
        let a: HashSet<&str> = a.split(' ').collect();
        b.split(' ').filter(|w| a.contains(w)).count()
    }

    #[test]
    fn ordinal_overlap_matches_class() {
        let ds = ordinal_corpus("o", &FOUR_LEVELS, 200, CorpusShape::default(), 1).unwrap();
        assert_eq!(ds.len(), 200);
        for p in &ds.pairs {
            let Gold::Label(l) = &p.gold else { panic!() };
            let c = FOUR_LEVELS.iter().position(|x| x == l).unwrap();
            assert_eq!(overlap(&p.s1, &p.s2), 2 * c);
        }
        let counts: Vec<usize> = FOUR_LEVELS
            .iter()
            .map(|l| ds.pairs.iter().filter(|p| p.gold == Gold::Label(l.to_string())).count())
            .collect();
        assert_eq!(counts, vec![50; 4]);
    }

    #[test]
    fn graded_scores_follow_overlap() {
        let ds = graded_corpus("g", 100, CorpusShape::default(), 2).unwrap();
        for p in &ds.pairs {
            let s = p.score().unwrap();
            assert_eq!(s, 5.0 * overlap(&p.s1, &p.s2) as f64 / 6.0);
        }
    }

    #[test]
    fn deterministic_and_validated() {
        let a = ordinal_corpus("o", &NLI_LEVELS, 30, CorpusShape::default(), 9).unwrap();
        let b = ordinal_corpus("o", &NLI_LEVELS, 30, CorpusShape::default(), 9).unwrap();
        assert_eq!(a, b);
        let tiny = CorpusShape {
            vocab: 5,
            sentence_len: 3,
        };
        assert!(graded_corpus("g", 3, tiny, 0).is_err());
        assert_eq!(eval_suite(10, CorpusShape::default(), 0).unwrap().len(), 7);
    }
}
