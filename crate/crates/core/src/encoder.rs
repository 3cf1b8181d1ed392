//! Siamese mean-pooling encoder with a linear head on pair features.
//!
//! Both sentences go through the same embedding table, are averaged into
//! `u` and `v`, combined into `(u, v, |u - v|)` (or a subset of it), and fed
//! to a linear layer with one output (regression) or `K` outputs
//! (classification). The backward pass is written out by hand.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::cosine;
use crate::losses::{self, ClampRange, LossKind, LossSpec};

pub const OOV_ID: usize = 0;
pub const PAD_ID: usize = 1;
const OOV_TOKEN: &str = "<oov>";
const PAD_TOKEN: &str = "<pad>";

/// Token table. Ids are dense; `<oov>` is 0 and `<pad>` is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let tokens = vec![OOV_TOKEN.to_owned(), PAD_TOKEN.to_owned()];
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, ids }
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[OOV_ID] != OOV_TOKEN || tokens[PAD_ID] != PAD_TOKEN {
            return Err(Error::Checkpoint(
                "vocabulary must start with the reserved <oov> and <pad> tokens".into(),
            ));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Checkpoint(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Vocabulary over every word in `texts`, in first-seen order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = Vocabulary::default();
        for text in texts {
            for word in words(text) {
                if !vocab.ids.contains_key(&word) {
                    vocab.ids.insert(word.clone(), vocab.tokens.len());
                    vocab.tokens.push(word);
                }
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}

/// Lowercased runs of alphanumeric characters.
fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Token ids for `text`, truncated to `max_tokens`. Never empty: text with no
/// words becomes a single `<oov>`.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_tokens: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = words(text).take(max_tokens.max(1)).map(|w| vocab.id(&w)).collect();
    if ids.is_empty() {
        ids.push(OOV_ID);
    }
    ids
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// `(u, v)`
    Uv,
    /// `|u - v|`
    AbsDiff,
    /// `(u, v, |u - v|)`
    #[default]
    UvAbsDiff,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 3] = [FeatureMode::Uv, FeatureMode::AbsDiff, FeatureMode::UvAbsDiff];

    pub fn feature_len(self, dim: usize) -> usize {
        match self {
            FeatureMode::Uv => 2 * dim,
            FeatureMode::AbsDiff => dim,
            FeatureMode::UvAbsDiff => 3 * dim,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureMode::Uv => "uv",
            FeatureMode::AbsDiff => "abs_diff",
            FeatureMode::UvAbsDiff => "uv_abs_diff",
        }
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// All trainable state. `head_weights` is row-major `outputs x feature_len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dim: usize,
    pub vocab_size: usize,
    pub mode: FeatureMode,
    pub embeddings: Vec<f64>,
    pub head_weights: Vec<f64>,
    pub head_bias: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type Gradients = ModelParams;

impl ModelParams {
    /// All-zero parameters with the given head width.
    pub fn zeros(vocab_size: usize, dim: usize, mode: FeatureMode, outputs: usize) -> Self {
        ModelParams {
            dim,
            vocab_size,
            mode,
            embeddings: vec![0.0; vocab_size * dim],
            head_weights: vec![0.0; outputs * mode.feature_len(dim)],
            head_bias: vec![0.0; outputs],
        }
    }

    /// Embeddings ~ U(-0.05, 0.05), head weights ~ U(-s, s) with
    /// `s = feature_len^-1/2`, every bias set to `bias`.
    pub fn init<R: Rng>(
        vocab_size: usize,
        dim: usize,
        mode: FeatureMode,
        outputs: usize,
        bias: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 || outputs == 0 || vocab_size < 2 {
            return Err(Error::InvalidInput(format!(
                "degenerate model shape: vocab {vocab_size}, dim {dim}, outputs {outputs}"
            )));
        }
        let mut p = Self::zeros(vocab_size, dim, mode, outputs);
        for e in &mut p.embeddings {
            *e = rng.gen_range(-0.05..0.05);
        }
        let s = (mode.feature_len(dim) as f64).powf(-0.5);
        for w in &mut p.head_weights {
            *w = rng.gen_range(-s..s);
        }
        p.head_bias.fill(bias);
        Ok(p)
    }

    pub fn outputs(&self) -> usize {
        self.head_bias.len()
    }

    pub fn feature_len(&self) -> usize {
        self.mode.feature_len(self.dim)
    }

    pub fn head_param_count(&self) -> usize {
        self.head_weights.len()
    }

    pub fn embedding(&self, id: usize) -> &[f64] {
        &self.embeddings[id * self.dim..(id + 1) * self.dim]
    }

    pub fn zeros_like(&self) -> Gradients {
        Self::zeros(self.vocab_size, self.dim, self.mode, self.outputs())
    }

    pub fn check_consistent(&self) -> Result<()> {
        let checks = [
            ("embedding table", self.vocab_size * self.dim, self.embeddings.len()),
            (
                "head weights",
                self.outputs() * self.feature_len(),
                self.head_weights.len(),
            ),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(Error::Shape { what, expected, got });
            }
        }
        if self.outputs() == 0 {
            return Err(Error::Shape {
                what: "head bias",
                expected: 1,
                got: 0,
            });
        }
        Ok(())
    }

    /// Flat view over every parameter, in a fixed order.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.embeddings.iter().chain(&self.head_weights).chain(&self.head_bias)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.embeddings
            .iter_mut()
            .chain(&mut self.head_weights)
            .chain(&mut self.head_bias)
    }
}

/// Mean of the embedding rows for `tokens`.
pub fn embed_sentence(tokens: &[usize], params: &ModelParams) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::InvalidInput("cannot pool an empty token sequence".into()));
    }
    let mut out = vec![0.0; params.dim];
    for &t in tokens {
        if t >= params.vocab_size {
            return Err(Error::IndexOutOfRange {
                index: t,
                len: params.vocab_size,
            });
        }
        for (o, e) in out.iter_mut().zip(params.embedding(t)) {
            *o += e;
        }
    }
    let inv = 1.0 / tokens.len() as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    Ok(out)
}

pub fn features(u: &[f64], v: &[f64], mode: FeatureMode) -> Result<Vec<f64>> {
    if u.len() != v.len() {
        return Err(Error::Shape {
            what: "pair embeddings",
            expected: u.len(),
            got: v.len(),
        });
    }
    let absdiff = u.iter().zip(v).map(|(a, b)| (a - b).abs());
    let out = match mode {
        FeatureMode::Uv => u.iter().chain(v).copied().collect(),
        FeatureMode::AbsDiff => absdiff.collect(),
        FeatureMode::UvAbsDiff => u.iter().chain(v).copied().chain(absdiff).collect(),
    };
    Ok(out)
}

/// Head outputs (one per row of the head) for a feature vector.
pub fn head_outputs(feat: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    let n = params.feature_len();
    if feat.len() != n || params.head_weights.len() != n * params.outputs() {
        return Err(Error::Shape {
            what: "head input",
            expected: n,
            got: feat.len(),
        });
    }
    Ok(params
        .head_weights
        .chunks_exact(n)
        .zip(&params.head_bias)
        .map(|(row, b)| row.iter().zip(feat).map(|(w, f)| w * f).sum::<f64>() + b)
        .collect())
}

/// Scalar prediction of a single-output head for a tokenised pair.
pub fn predict(left: &[usize], right: &[usize], params: &ModelParams) -> Result<f64> {
    if params.outputs() != 1 {
        return Err(Error::Shape {
            what: "regression head outputs",
            expected: 1,
            got: params.outputs(),
        });
    }
    let u = embed_sentence(left, params)?;
    let v = embed_sentence(right, params)?;
    let f = features(&u, &v, params.mode)?;
    Ok(head_outputs(&f, params)?[0])
}

/// How a pair is turned into a single similarity score at evaluation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scorer {
    /// Output of the single-unit regression head.
    Regression,
    /// Softmax-weighted mean of the node values of a K-way head.
    ExpectedNode { nodes: Vec<f64> },
    /// Cosine similarity of the pooled embeddings.
    Cosine,
}

impl Scorer {
    pub fn score(&self, left: &[usize], right: &[usize], params: &ModelParams) -> Result<f64> {
        match self {
            Scorer::Regression => predict(left, right, params),
            Scorer::ExpectedNode { nodes } => {
                let u = embed_sentence(left, params)?;
                let v = embed_sentence(right, params)?;
                let logits = head_outputs(&features(&u, &v, params.mode)?, params)?;
                if logits.len() != nodes.len() {
                    return Err(Error::Shape {
                        what: "classification head outputs",
                        expected: nodes.len(),
                        got: logits.len(),
                    });
                }
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                Ok(exps.iter().zip(nodes).map(|(e, n)| e / z * n).sum())
            }
            Scorer::Cosine => {
                let u = embed_sentence(left, params)?;
                let v = embed_sentence(right, params)?;
                cosine(&u, &v)
            }
        }
    }
}

/// Supervision for one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// Numeric label for the regression losses; ignored by InfoNCE.
    Score(f64),
    /// Class index for cross-entropy.
    Class(usize),
}

/// A tokenised training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub target: Target,
}

/// Batch-mean loss and its exact gradient with respect to every parameter.
///
/// Regression losses clamp the prediction into `clamp` first when it is set.
/// InfoNCE treats `(left_i, right_i)` as anchor/positive and every other
/// `right_j` in the batch as a negative; it never touches the head.
pub fn forward_backward(
    batch: &[Example],
    params: &ModelParams,
    loss: &LossSpec,
    clamp: Option<ClampRange>,
) -> Result<(f64, Gradients)> {
    forward_backward_impl(batch, params, loss, clamp, 1.0)
}

/// `absdiff_sign` multiplies the subgradient of `|u - v|`; anything but 1.0
/// is a deliberately broken backward pass used to show the gradient checker
/// catches it.
pub(crate) fn forward_backward_impl(
    batch: &[Example],
    params: &ModelParams,
    loss: &LossSpec,
    clamp: Option<ClampRange>,
    absdiff_sign: f64,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    params.check_consistent()?;
    let dim = params.dim;
    let mut grads = params.zeros_like();
    let inv_n = 1.0 / batch.len() as f64;

    let pooled: Vec<(Vec<f64>, Vec<f64>)> = batch
        .iter()
        .map(|ex| Ok((embed_sentence(&ex.left, params)?, embed_sentence(&ex.right, params)?)))
        .collect::<Result<_>>()?;

    // d(loss)/du and d(loss)/dv for every pair
    let mut d_pooled: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(batch.len());
    let total;

    if loss.kind() == LossKind::InfoNce {
        let anchors: Vec<Vec<f64>> = pooled.iter().map(|p| p.0.clone()).collect();
        let positives: Vec<Vec<f64>> = pooled.iter().map(|p| p.1.clone()).collect();
        let out = losses::info_nce(&anchors, &positives, loss.tau())?;
        total = out.value;
        d_pooled.extend(out.d_anchors.into_iter().zip(out.d_positives));
    } else {
        let outputs = params.outputs();
        let flen = params.feature_len();
        let mut sum = 0.0;
        for (ex, (u, v)) in batch.iter().zip(&pooled) {
            let feat = features(u, v, params.mode)?;
            let out = head_outputs(&feat, params)?;

            // d(sample loss)/d(head outputs)
            let (value, d_out) = match (loss.kind(), ex.target) {
                (LossKind::CrossEntropy, Target::Class(c)) => losses::cross_entropy(&out, c)?,
                (LossKind::CrossEntropy, Target::Score(_)) => {
                    return Err(Error::InvalidInput("cross-entropy needs class-index targets".into()))
                }
                (_, Target::Score(label)) => {
                    if outputs != 1 {
                        return Err(Error::Shape {
                            what: "regression head outputs",
                            expected: 1,
                            got: outputs,
                        });
                    }
                    let (value, dpred) = losses::regression_loss(loss, out[0], label, clamp)?;
                    (value, vec![dpred])
                }
                (_, Target::Class(_)) => {
                    return Err(Error::InvalidInput(format!("{} needs numeric targets", loss.kind())))
                }
            };
            sum += value;

            let mut d_feat = vec![0.0; flen];
            for (o, &g) in d_out.iter().enumerate() {
                let g = g * inv_n;
                if g == 0.0 {
                    continue;
                }
                grads.head_bias[o] += g;
                let row = &params.head_weights[o * flen..(o + 1) * flen];
                let grow = &mut grads.head_weights[o * flen..(o + 1) * flen];
                for i in 0..flen {
                    grow[i] += g * feat[i];
                    d_feat[i] += g * row[i];
                }
            }

            let mut du = vec![0.0; dim];
            let mut dv = vec![0.0; dim];
            let diff_offset = match params.mode {
                FeatureMode::Uv | FeatureMode::UvAbsDiff => {
                    du.copy_from_slice(&d_feat[..dim]);
                    dv.copy_from_slice(&d_feat[dim..2 * dim]);
                    2 * dim
                }
                FeatureMode::AbsDiff => 0,
            };
            if params.mode != FeatureMode::Uv {
                for t in 0..dim {
                    let s = absdiff_sign * sign(u[t] - v[t]);
                    let g = d_feat[diff_offset + t] * s;
                    du[t] += g;
                    dv[t] -= g;
                }
            }
            d_pooled.push((du, dv));
        }
        total = sum * inv_n;
    }

    for (ex, (du, dv)) in batch.iter().zip(&d_pooled) {
        scatter_mean_grad(&mut grads, &ex.left, du);
        scatter_mean_grad(&mut grads, &ex.right, dv);
    }
    Ok((total, grads))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean pooling hands `1/len` of the pooled gradient to each token row.
fn scatter_mean_grad(grads: &mut Gradients, tokens: &[usize], d_pooled: &[f64]) {
    let dim = grads.dim;
    let w = 1.0 / tokens.len() as f64;
    for &t in tokens {
        let row = &mut grads.embeddings[t * dim..(t + 1) * dim];
        for (r, g) in row.iter_mut().zip(d_pooled) {
            *r += w * g;
        }
    }
}

/// A trained model together with everything needed to score raw text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub vocab: Vocabulary,
    pub params: ModelParams,
    pub scorer: Scorer,
    pub max_tokens: usize,
}

impl Model {
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        tokenize(text, &self.vocab, self.max_tokens)
    }

    /// Similarity score for a raw sentence pair.
    pub fn score(&self, s1: &str, s2: &str) -> Result<f64> {
        self.scorer.score(&self.tokenize(s1), &self.tokenize(s2), &self.params)
    }

    pub fn check_consistent(&self) -> Result<()> {
        self.params.check_consistent()?;
        if self.vocab.len() != self.params.vocab_size {
            return Err(Error::Shape {
                what: "vocabulary vs embedding table",
                expected: self.params.vocab_size,
                got: self.vocab.len(),
            });
        }
        match &self.scorer {
            Scorer::Regression if self.params.outputs() != 1 => Err(Error::Shape {
                what: "regression head outputs",
                expected: 1,
                got: self.params.outputs(),
            }),
            Scorer::ExpectedNode { nodes } if nodes.len() != self.params.outputs() => Err(Error::Shape {
                what: "classification head outputs",
                expected: nodes.len(),
                got: self.params.outputs(),
            }),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn abc_vocab() -> Vocabulary {
        Vocabulary::build(["a man runs"])
    }

    #[test]
    fn tokenize_examples() {
        let v = abc_vocab();
        let (a, man, runs) = (v.id("a"), v.id("man"), v.id("runs"));
        assert_eq!((a, man, runs), (2, 3, 4));
        assert_eq!(tokenize("A man runs", &v, 256), vec![a, man, runs]);
        assert_eq!(tokenize("A MAN runs!", &v, 256), vec![a, man, runs]);
        assert_eq!(tokenize("", &v, 256), vec![OOV_ID]);
        assert_eq!(tokenize("?!", &v, 256), vec![OOV_ID]);
        assert_eq!(tokenize("a dog runs", &v, 256), vec![a, OOV_ID, runs]);
        assert_eq!(tokenize("a man runs", &v, 2), vec![a, man]);
    }

    #[test]
    fn vocab_round_trip_and_validation() {
        let v = Vocabulary::build(["the cat", "the dog"]);
        assert_eq!(v.len(), 5);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&json).unwrap(), v);
        assert!(serde_json::from_str::<Vocabulary>(r#"["cat","dog"]"#).is_err());
        assert!(serde_json::from_str::<Vocabulary>(r#"["<oov>","<pad>","x","x"]"#).is_err());
    }

    fn table(rows: &[[f64; 2]], mode: FeatureMode) -> ModelParams {
        let mut p = ModelParams::zeros(rows.len(), 2, mode, 1);
        p.embeddings = rows.iter().flatten().copied().collect();
        p
    }

    #[test]
    fn mean_pooling() {
        let p = table(&[[0.0, 0.0], [1.0, 3.0], [3.0, 5.0]], FeatureMode::UvAbsDiff);
        assert_eq!(embed_sentence(&[1], &p).unwrap(), vec![1.0, 3.0]);
        assert_eq!(embed_sentence(&[1, 2], &p).unwrap(), vec![2.0, 4.0]);
        assert_eq!(
            embed_sentence(&[2, 1, 1], &p).unwrap(),
            embed_sentence(&[1, 2, 1], &p).unwrap()
        );
        assert!(embed_sentence(&[], &p).is_err());
        assert!(embed_sentence(&[3], &p).is_err());
    }

    #[test]
    fn feature_modes() {
        let (u, v) = ([1.0, 2.0], [3.0, 0.0]);
        assert_eq!(
            features(&u, &v, FeatureMode::UvAbsDiff).unwrap(),
            vec![1.0, 2.0, 3.0, 0.0, 2.0, 2.0]
        );
        assert_eq!(features(&u, &v, FeatureMode::AbsDiff).unwrap(), vec![2.0, 2.0]);
        assert_eq!(features(&u, &v, FeatureMode::Uv).unwrap(), vec![1.0, 2.0, 3.0, 0.0]);
        let same = features(&u, &u, FeatureMode::UvAbsDiff).unwrap();
        assert!(same[4..].iter().all(|&x| x == 0.0));
        assert!(features(&u, &[1.0], FeatureMode::Uv).is_err());
    }

    #[test]
    fn head_parameter_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for dim in [1, 4, 32] {
            let reg = ModelParams::init(10, dim, FeatureMode::UvAbsDiff, 1, 0.0, &mut rng).unwrap();
            assert_eq!(reg.head_param_count(), 3 * dim);
            let cls = ModelParams::init(10, dim, FeatureMode::UvAbsDiff, 3, 0.0, &mut rng).unwrap();
            assert_eq!(cls.head_param_count(), 3 * dim * 3);
            for (mode, n) in [(FeatureMode::Uv, 2 * dim), (FeatureMode::AbsDiff, dim)] {
                let p = ModelParams::init(10, dim, mode, 1, 0.0, &mut rng).unwrap();
                assert_eq!(p.head_param_count(), n);
            }
        }
    }

    #[test]
    fn init_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ModelParams::init(50, 8, FeatureMode::UvAbsDiff, 1, 2.5, &mut rng).unwrap();
        assert!(p.embeddings.iter().all(|e| e.abs() <= 0.05));
        let s = 24f64.powf(-0.5);
        assert!(p.head_weights.iter().all(|w| w.abs() <= s));
        assert_eq!(p.head_bias, vec![2.5]);
    }

    #[test]
    fn predict_basics() {
        let mut p = table(&[[0.0, 0.0], [1.0, 3.0], [3.0, 5.0]], FeatureMode::UvAbsDiff);
        p.head_bias = vec![0.7];
        assert_eq!(predict(&[1], &[2], &p).unwrap(), 0.7);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = ModelParams::init(6, 3, FeatureMode::AbsDiff, 1, 0.4, &mut rng).unwrap();
        assert_eq!(predict(&[2, 3], &[3, 2], &p).unwrap(), 0.4);
        p.head_bias = vec![-0.1];
        assert_eq!(predict(&[1, 4], &[5], &p).unwrap(), predict(&[5], &[1, 4], &p).unwrap());
    }

    #[test]
    fn predict_matches_direct_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ModelParams::init(7, 4, FeatureMode::UvAbsDiff, 1, 0.3, &mut rng).unwrap();
        let (l, r) = ([2usize, 5, 5], [6usize, 3]);
        let row = |i: usize| &p.embeddings[i * 4..i * 4 + 4];
        let mut expect = p.head_bias[0];
        for t in 0..4 {
            let u = (row(2)[t] + row(5)[t] + row(5)[t]) / 3.0;
            let v = (row(6)[t] + row(3)[t]) / 2.0;
            expect += p.head_weights[t] * u + p.head_weights[4 + t] * v + p.head_weights[8 + t] * (u - v).abs();
        }
        assert!((predict(&l, &r, &p).unwrap() - expect).abs() < 1e-14);
    }

    fn random_batch(rng: &mut ChaCha8Rng, vocab: usize, n: usize) -> Vec<Example> {
        (0..n)
            .map(|_| {
                let len_l = rng.gen_range(1..5);
                let len_r = rng.gen_range(1..5);
                Example {
                    left: (0..len_l).map(|_| rng.gen_range(2..vocab)).collect(),
                    right: (0..len_r).map(|_| rng.gen_range(2..vocab)).collect(),
                    target: Target::Score(rng.gen_range(0.0..3.0)),
                }
            })
            .collect()
    }

    #[test]
    fn buffer_zone_zeroes_every_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = ModelParams::init(12, 4, FeatureMode::UvAbsDiff, 1, 1.5, &mut rng).unwrap();
        let mut batch = random_batch(&mut rng, 12, 3);
        for ex in &mut batch {
            let pred = predict(&ex.left, &ex.right, &p).unwrap();
            ex.target = Target::Score(pred + 0.1);
        }
        let spec = LossSpec::smooth_k2(2.0, 0.25, 1.0).unwrap();
        let (value, g) = forward_backward(&batch, &p, &spec, None).unwrap();
        assert_eq!(value, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn absent_tokens_get_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = ModelParams::init(20, 4, FeatureMode::UvAbsDiff, 1, 0.0, &mut rng).unwrap();
        let batch = random_batch(&mut rng, 10, 4);
        let (_, g) = forward_backward(&batch, &p, &LossSpec::mse(), None).unwrap();
        for id in 10..20 {
            assert!(g.embedding(id).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn target_kind_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::init(8, 2, FeatureMode::Uv, 1, 0.0, &mut rng).unwrap();
        let ex = Example {
            left: vec![2],
            right: vec![3],
            target: Target::Class(0),
        };
        assert!(forward_backward(std::slice::from_ref(&ex), &p, &LossSpec::mse(), None).is_err());
        assert!(forward_backward(&[], &p, &LossSpec::mse(), None).is_err());
        let cls = ModelParams::init(8, 2, FeatureMode::Uv, 3, 0.0, &mut rng).unwrap();
        let scored = Example {
            target: Target::Score(1.0),
            ..ex
        };
        assert!(forward_backward(std::slice::from_ref(&scored), &cls, &LossSpec::cross_entropy(), None).is_err());
        assert!(forward_backward(&[scored], &cls, &LossSpec::mse(), None).is_err());
    }

    #[test]
    fn flipped_absdiff_backward_fails_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = ModelParams::init(10, 4, FeatureMode::AbsDiff, 1, 1.0, &mut rng).unwrap();
        let batch = random_batch(&mut rng, 10, 4);
        let spec = LossSpec::mse();
        let good = gradcheck::max_relative_error(&p, |q| forward_backward_impl(&batch, q, &spec, None, 1.0)).unwrap();
        assert!(good < 1e-6, "{good}");
        let bad = gradcheck::max_relative_error(&p, |q| forward_backward_impl(&batch, q, &spec, None, -1.0)).unwrap();
        assert!(bad > 1e-4, "{bad}");
    }
}
