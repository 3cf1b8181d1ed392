//! Loss functions over the scalar similarity prediction, plus the two
//! baselines that do not fit the regression mould (softmax cross-entropy over
//! a K-way head, and in-batch InfoNCE over sentence embeddings).
//!
//! The regression losses are all expressed as `f(x)` of the residual
//! `x = |prediction - label|` and return `(f(x), f'(x))`. Chain-rule glue back
//! to the prediction lives in [`regression_loss`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::cosine;
use crate::labelmap::LabelMapping;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    TranslatedRelu,
    SmoothK2,
    L1,
    Mse,
    CrossEntropy,
    InfoNce,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::TranslatedRelu,
        LossKind::SmoothK2,
        LossKind::L1,
        LossKind::Mse,
        LossKind::CrossEntropy,
        LossKind::InfoNce,
    ];

    /// Losses that score a single scalar prediction against a numeric label.
    pub fn is_regression(self) -> bool {
        matches!(
            self,
            LossKind::TranslatedRelu | LossKind::SmoothK2 | LossKind::L1 | LossKind::Mse
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::TranslatedRelu => "translated_relu",
            LossKind::SmoothK2 => "smooth_k2",
            LossKind::L1 => "l1",
            LossKind::Mse => "mse",
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::InfoNce => "info_nce",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown loss kind {s:?}")))
    }
}

/// A validated loss configuration.
///
/// `k` scales the penalty, `x0` is the width of the zero-gradient buffer zone
/// around the label and `d` is the spacing between adjacent label nodes.
/// Construction enforces `k > 0`, `0 <= x0 <= d / 2` and `tau > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLossSpec", into = "RawLossSpec")]
pub struct LossSpec {
    kind: LossKind,
    k: f64,
    x0: f64,
    d: f64,
    tau: f64,
}

#[derive(Serialize, Deserialize)]
struct RawLossSpec {
    kind: LossKind,
    k: f64,
    x0: f64,
    d: f64,
    tau: f64,
}

impl TryFrom<RawLossSpec> for LossSpec {
    type Error = Error;

    fn try_from(r: RawLossSpec) -> Result<Self> {
        LossSpec::new(r.kind, r.k, r.x0, r.d, r.tau)
    }
}

impl From<LossSpec> for RawLossSpec {
    fn from(s: LossSpec) -> Self {
        RawLossSpec {
            kind: s.kind,
            k: s.k,
            x0: s.x0,
            d: s.d,
            tau: s.tau,
        }
    }
}

pub const DEFAULT_TAU: f64 = 0.05;

impl LossSpec {
    pub fn new(kind: LossKind, k: f64, x0: f64, d: f64, tau: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::InvalidInput(format!("k must be positive, got {k}")));
        }
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::InvalidInput(format!(
                "node interval d must be positive, got {d}"
            )));
        }
        if !(x0.is_finite() && x0 >= 0.0 && x0 <= d / 2.0) {
            return Err(Error::InvalidInput(format!(
                "x0 must satisfy 0 <= x0 <= d/2 = {}, got {x0}",
                d / 2.0
            )));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidInput(format!("temperature must be positive, got {tau}")));
        }
        Ok(LossSpec { kind, k, x0, d, tau })
    }

    pub fn translated_relu(k: f64, x0: f64, d: f64) -> Result<Self> {
        Self::new(LossKind::TranslatedRelu, k, x0, d, DEFAULT_TAU)
    }

    pub fn smooth_k2(k: f64, x0: f64, d: f64) -> Result<Self> {
        Self::new(LossKind::SmoothK2, k, x0, d, DEFAULT_TAU)
    }

    pub fn l1() -> Self {
        Self::plain(LossKind::L1)
    }

    pub fn mse() -> Self {
        Self::plain(LossKind::Mse)
    }

    pub fn cross_entropy() -> Self {
        Self::plain(LossKind::CrossEntropy)
    }

    pub fn info_nce(tau: f64) -> Result<Self> {
        Self::new(LossKind::InfoNce, 1.0, 0.0, 1.0, tau)
    }

    fn plain(kind: LossKind) -> Self {
        LossSpec {
            kind,
            k: 1.0,
            x0: 0.0,
            d: 1.0,
            tau: DEFAULT_TAU,
        }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }
    pub fn k(&self) -> f64 {
        self.k
    }
    pub fn x0(&self) -> f64 {
        self.x0
    }
    pub fn d(&self) -> f64 {
        self.d
    }
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Same loss with different `(k, x0)`, revalidated.
    pub fn with_k_x0(&self, k: f64, x0: f64) -> Result<Self> {
        Self::new(self.kind, k, x0, self.d, self.tau)
    }

    /// `(f(x), f'(x))` for the regression kinds; `None` otherwise.
    pub fn eval(&self, x: Residual) -> Option<(f64, f64)> {
        match self.kind {
            LossKind::TranslatedRelu => Some(translated_relu(x, self)),
            LossKind::SmoothK2 => Some(smooth_k2(x, self)),
            LossKind::L1 => Some(l1_loss(x)),
            LossKind::Mse => Some(mse_loss(x)),
            LossKind::CrossEntropy | LossKind::InfoNce => None,
        }
    }
}

/// Absolute deviation of a prediction from its label, with the sign of
/// `prediction - label` kept for the chain rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    x: f64,
    sign: f64,
}

impl Residual {
    /// A bare residual magnitude (sign taken as +1 unless `x == 0`).
    pub fn from_abs(x: f64) -> Result<Self> {
        if !(x.is_finite() && x >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "residual must be finite and non-negative, got {x}"
            )));
        }
        Ok(Residual {
            x,
            sign: if x == 0.0 { 0.0 } else { 1.0 },
        })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    /// -1, 0 or +1.
    pub fn sign(&self) -> f64 {
        self.sign
    }
}

pub fn residual(prediction: f64, label: f64) -> Result<Residual> {
    if !prediction.is_finite() || !label.is_finite() {
        return Err(Error::InvalidInput(format!(
            "non-finite residual operands ({prediction}, {label})"
        )));
    }
    let diff = prediction - label;
    let sign = if diff > 0.0 {
        1.0
    } else if diff < 0.0 {
        -1.0
    } else {
        0.0
    };
    Ok(Residual { x: diff.abs(), sign })
}

/// `max(0, k (x - x0))`. At the knot the right-sided derivative `k` is used.
pub fn translated_relu(x: Residual, spec: &LossSpec) -> (f64, f64) {
    let x = x.x;
    if x < spec.x0 {
        (0.0, 0.0)
    } else {
        (spec.k * (x - spec.x0), spec.k)
    }
}

/// `k (x - x0)^2` beyond the buffer zone, zero inside it.
pub fn smooth_k2(x: Residual, spec: &LossSpec) -> (f64, f64) {
    let x = x.x;
    if x < spec.x0 {
        (0.0, 0.0)
    } else {
        let t = x - spec.x0;
        (spec.k * t * t, 2.0 * spec.k * t)
    }
}

pub fn l1_loss(x: Residual) -> (f64, f64) {
    let x = x.x;
    (x, if x == 0.0 { 0.0 } else { 1.0 })
}

pub fn mse_loss(x: Residual) -> (f64, f64) {
    let x = x.x;
    (x * x, 2.0 * x)
}

/// Pull out-of-range predictions back onto the nearest terminal node.
pub fn clamp_to_range(prediction: f64, mapping: &LabelMapping) -> f64 {
    clamp_to_bounds(prediction, mapping.lowest(), mapping.highest()).0
}

/// Clamp into `[lo, hi]`, returning the value and its derivative with respect
/// to the input (0 outside the range, 1 inside).
pub fn clamp_to_bounds(prediction: f64, lo: f64, hi: f64) -> (f64, f64) {
    if prediction < lo {
        (lo, 0.0)
    } else if prediction > hi {
        (hi, 0.0)
    } else {
        (prediction, 1.0)
    }
}

/// Inclusive score interval that predictions are clamped into before the loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampRange {
    pub lo: f64,
    pub hi: f64,
}

/// Loss value and gradient with respect to the raw prediction, for one
/// regression sample.
pub fn regression_loss(spec: &LossSpec, prediction: f64, label: f64, clamp: Option<ClampRange>) -> Result<(f64, f64)> {
    let (effective, dclamp) = match clamp {
        Some(r) => clamp_to_bounds(prediction, r.lo, r.hi),
        None => (prediction, 1.0),
    };
    let res = residual(effective, label)?;
    let (value, dx) = spec
        .eval(res)
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a regression loss", spec.kind)))?;
    Ok((value, dx * res.sign * dclamp))
}

/// Softmax cross-entropy, log-sum-exp stabilised.
pub fn cross_entropy(logits: &[f64], class_index: usize) -> Result<(f64, Vec<f64>)> {
    if class_index >= logits.len() {
        return Err(Error::IndexOutOfRange {
            index: class_index,
            len: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let log_z = max + sum.ln();
    let value = log_z - logits[class_index];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[class_index] -= 1.0;
    Ok((value, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceOutput {
    pub value: f64,
    pub d_anchors: Vec<Vec<f64>>,
    pub d_positives: Vec<Vec<f64>>,
}

/// Batch-mean InfoNCE with in-batch negatives and cosine similarity.
///
/// Row `i` of the similarity matrix is `cos(anchor_i, positive_j) / tau`; the
/// loss for anchor `i` is the cross-entropy of that row against column `i`.
pub fn info_nce(anchors: &[Vec<f64>], positives: &[Vec<f64>], tau: f64) -> Result<InfoNceOutput> {
    let n = anchors.len();
    if n == 0 {
        return Err(Error::InvalidInput("InfoNCE needs a nonempty batch".into()));
    }
    if positives.len() != n {
        return Err(Error::Shape {
            what: "InfoNCE positives",
            expected: n,
            got: positives.len(),
        });
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidInput(format!("temperature must be positive, got {tau}")));
    }
    let dim = anchors[0].len();
    for v in anchors.iter().chain(positives) {
        if v.len() != dim {
            return Err(Error::Shape {
                what: "InfoNCE embedding",
                expected: dim,
                got: v.len(),
            });
        }
    }
    let a_norm: Vec<f64> = anchors.iter().map(|v| norm(v)).collect();
    let p_norm: Vec<f64> = positives.iter().map(|v| norm(v)).collect();

    let mut sims = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            sims[i][j] = cosine(&anchors[i], &positives[j])?;
        }
    }

    let mut value = 0.0;
    let mut d_anchors = vec![vec![0.0; dim]; n];
    let mut d_positives = vec![vec![0.0; dim]; n];
    let scale = 1.0 / (tau * n as f64);
    for i in 0..n {
        let logits: Vec<f64> = sims[i].iter().map(|s| s / tau).collect();
        let (li, dlogits) = cross_entropy(&logits, i)?;
        value += li;
        for j in 0..n {
            // d(mean loss) / d cos(a_i, p_j)
            let g = dlogits[j] * scale;
            if g == 0.0 {
                continue;
            }
            let c = sims[i][j];
            let inv = 1.0 / (a_norm[i] * p_norm[j]);
            let (a, p) = (&anchors[i], &positives[j]);
            for t in 0..dim {
                d_anchors[i][t] += g * (p[t] * inv - c * a[t] / (a_norm[i] * a_norm[i]));
                d_positives[j][t] += g * (a[t] * inv - c * p[t] / (p_norm[j] * p_norm[j]));
            }
        }
    }
    Ok(InfoNceOutput {
        value: value / n as f64,
        d_anchors,
        d_positives,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
