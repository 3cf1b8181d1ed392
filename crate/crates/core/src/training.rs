//! Mini-batch training with dev-set checkpoint selection, and the
//! freeze-the-encoder-then-train-everything schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Gold};
use crate::encoder::{forward_backward, tokenize, Example, Gradients, ModelParams, Scorer, Target, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::spearman;
use crate::labelmap::LabelMapping;
use crate::losses::{ClampRange, LossSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Only the head moves; the embedding table is frozen.
    HeadOnly,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub max_tokens: usize,
    pub clamp_predictions: bool,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 1,
            learning_rate: 0.01,
            seed: 0,
            eval_every: 50,
            max_tokens: 256,
            clamp_predictions: true,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("eval_every", self.eval_every),
            ("max_tokens", self.max_tokens),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        // zero is allowed: it makes a dry run that only evaluates
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be a non-negative number, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Plain gradient descent on every parameter the stage leaves unfrozen.
pub fn sgd_step(params: &mut ModelParams, grads: &Gradients, learning_rate: f64, stage: Stage) -> Result<()> {
    check_same_shape(params, grads)?;
    if stage == Stage::Joint {
        for (p, g) in params.embeddings.iter_mut().zip(&grads.embeddings) {
            *p -= learning_rate * g;
        }
    }
    for (p, g) in params.head_weights.iter_mut().zip(&grads.head_weights) {
        *p -= learning_rate * g;
    }
    for (p, g) in params.head_bias.iter_mut().zip(&grads.head_bias) {
        *p -= learning_rate * g;
    }
    Ok(())
}

fn check_same_shape(params: &ModelParams, grads: &Gradients) -> Result<()> {
    let pairs = [
        ("embedding gradient", params.embeddings.len(), grads.embeddings.len()),
        (
            "head weight gradient",
            params.head_weights.len(),
            grads.head_weights.len(),
        ),
        ("head bias gradient", params.head_bias.len(), grads.head_bias.len()),
    ];
    for (what, expected, got) in pairs {
        if expected != got {
            return Err(Error::Shape { what, expected, got });
        }
    }
    Ok(())
}

/// Adam moments over the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        let n = params.iter().count();
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &Gradients,
        learning_rate: f64,
        stage: Stage,
    ) -> Result<()> {
        check_same_shape(params, grads)?;
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let frozen = match stage {
            Stage::HeadOnly => params.embeddings.len(),
            Stage::Joint => 0,
        };
        for (i, (p, g)) in params.iter_mut().zip(grads.iter()).enumerate().skip(frozen) {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + EPS);
        }
        Ok(())
    }
}

enum Optimizer {
    Sgd,
    Adam(Box<Adam>),
}

impl Optimizer {
    fn new(kind: OptimizerKind, params: &ModelParams) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(Box::new(Adam::new(params))),
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64, stage: Stage) -> Result<()> {
        match self {
            Optimizer::Sgd => sgd_step(params, grads, lr, stage),
            Optimizer::Adam(a) => a.step(params, grads, lr, stage),
        }
    }
}

/// Tokenised dev pairs with numeric gold values.
#[derive(Debug, Clone, PartialEq)]
pub struct DevSet {
    pub pairs: Vec<(Vec<usize>, Vec<usize>)>,
    pub golds: Vec<f64>,
}

impl DevSet {
    pub fn from_dataset(
        dataset: &Dataset,
        vocab: &Vocabulary,
        max_tokens: usize,
        mapping: Option<&LabelMapping>,
    ) -> Result<Self> {
        let mut pairs = Vec::with_capacity(dataset.len());
        let mut golds = Vec::with_capacity(dataset.len());
        for p in &dataset.pairs {
            pairs.push((tokenize(&p.s1, vocab, max_tokens), tokenize(&p.s2, vocab, max_tokens)));
            golds.push(match &p.gold {
                Gold::Score(s) => *s,
                Gold::Label(l) => mapping
                    .ok_or_else(|| {
                        Error::InvalidInput(format!("{}: categorical dev set needs a mapping", dataset.name))
                    })?
                    .encode(l)?,
            });
        }
        Ok(DevSet { pairs, golds })
    }

    pub fn spearman(&self, params: &ModelParams, scorer: &Scorer) -> Result<f64> {
        let preds = self
            .pairs
            .iter()
            .map(|(l, r)| scorer.score(l, r, params))
            .collect::<Result<Vec<_>>>()?;
        spearman(&preds, &self.golds)
    }
}

/// How gold values become training targets.
#[derive(Debug, Clone, Copy)]
pub enum TargetEncoding<'a> {
    /// Scores pass through; categories go to their node value.
    Numeric(Option<&'a LabelMapping>),
    /// Categories go to their class index.
    ClassIndex(&'a LabelMapping),
}

pub fn encode_examples(
    dataset: &Dataset,
    vocab: &Vocabulary,
    max_tokens: usize,
    encoding: TargetEncoding<'_>,
) -> Result<Vec<Example>> {
    dataset
        .pairs
        .iter()
        .map(|p| {
            let target = match (&p.gold, encoding) {
                (Gold::Score(s), TargetEncoding::Numeric(_)) => Target::Score(*s),
                (Gold::Label(l), TargetEncoding::Numeric(Some(m))) => Target::Score(m.encode(l)?),
                (Gold::Label(l), TargetEncoding::ClassIndex(m)) => Target::Class(m.index_of(l)?),
                (Gold::Label(_), TargetEncoding::Numeric(None)) => {
                    return Err(Error::InvalidInput(format!(
                        "{}: categorical labels need a mapping",
                        dataset.name
                    )))
                }
                (Gold::Score(_), TargetEncoding::ClassIndex(_)) => {
                    return Err(Error::InvalidInput(format!(
                        "{}: class targets need a categorical dataset",
                        dataset.name
                    )))
                }
            };
            Ok(Example {
                left: tokenize(&p.s1, vocab, max_tokens),
                right: tokenize(&p.s2, vocab, max_tokens),
                target,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub epoch: usize,
    /// Batch-mean loss of this step; absent for the step-0 evaluation.
    pub train_loss: Option<f64>,
    pub dev_spearman: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_params: ModelParams,
    pub best_step: usize,
    pub best_dev_spearman: f64,
    pub history: Vec<HistoryEntry>,
}

impl TrainOutcome {
    /// `step,epoch,train_loss,dev_spearman` with empty cells where absent.
    pub fn history_csv(&self) -> String {
        history_csv(&self.history)
    }
}

pub fn history_csv(history: &[HistoryEntry]) -> String {
    let mut out = String::from("step,epoch,train_loss,dev_spearman\n");
    let cell = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for h in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            h.step,
            h.epoch,
            cell(h.train_loss),
            cell(h.dev_spearman)
        ));
    }
    out
}

/// Run `config.epochs` passes of shuffled mini-batches, scoring the dev set at
/// step 0, every `eval_every` steps and at each epoch end. Returns the first
/// parameters that reached the best dev Spearman.
#[allow(clippy::too_many_arguments)]
pub fn train(
    init: &ModelParams,
    train_set: &[Example],
    dev: &DevSet,
    scorer: &Scorer,
    config: &TrainConfig,
    loss: &LossSpec,
    clamp: Option<ClampRange>,
    stage: Stage,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training set".into()));
    }
    if dev.pairs.is_empty() {
        return Err(Error::EmptyDataset("dev set".into()));
    }
    init.check_consistent()?;
    let clamp = if config.clamp_predictions { clamp } else { None };

    let mut params = init.clone();
    let mut optimizer = Optimizer::new(config.optimizer, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let initial = dev.spearman(&params, scorer)?;
    let mut history = vec![HistoryEntry {
        step: 0,
        epoch: 0,
        train_loss: None,
        dev_spearman: Some(initial),
    }];
    let mut best = (initial, 0usize, params.clone());

    let mut step = 0usize;
    let mut batch = Vec::with_capacity(config.batch_size);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let steps_in_epoch = order.len().div_ceil(config.batch_size);
        for (i, chunk) in order.chunks(config.batch_size).enumerate() {
            step += 1;
            batch.clear();
            batch.extend(chunk.iter().map(|&j| train_set[j].clone()));
            let (value, grads) = forward_backward(&batch, &params, loss, clamp)?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { step, value });
            }
            optimizer.step(&mut params, &grads, config.learning_rate, stage)?;

            let mut entry = HistoryEntry {
                step,
                epoch,
                train_loss: Some(value),
                dev_spearman: None,
            };
            if step.is_multiple_of(config.eval_every) || i + 1 == steps_in_epoch {
                let rho = dev.spearman(&params, scorer)?;
                entry.dev_spearman = Some(rho);
                if rho > best.0 {
                    best = (rho, step, params.clone());
                }
            }
            history.push(entry);
        }
    }
    Ok(TrainOutcome {
        best_params: best.2,
        best_step: best.1,
        best_dev_spearman: best.0,
        history,
    })
}

/// Training inputs for one stage of [`two_stage_finetune`].
#[derive(Debug, Clone, Copy)]
pub struct StageInput<'a> {
    pub examples: &'a [Example],
    pub config: &'a TrainConfig,
    /// Same loss in both stages, but each stage validates `x0` against its
    /// own node spacing.
    pub loss: &'a LossSpec,
    pub clamp: Option<ClampRange>,
}

#[derive(Debug, Clone)]
pub struct TwoStageOutcome {
    pub head_only: TrainOutcome,
    pub joint: TrainOutcome,
}

impl TwoStageOutcome {
    pub fn best_params(&self) -> &ModelParams {
        &self.joint.best_params
    }

    /// Both histories, the joint stage's steps offset past the first stage.
    pub fn combined_history(&self) -> Vec<HistoryEntry> {
        let offset = self.head_only.history.last().map_or(0, |h| h.step);
        let mut out = self.head_only.history.clone();
        out.extend(self.joint.history.iter().skip(1).map(|h| HistoryEntry {
            step: h.step + offset,
            ..h.clone()
        }));
        out
    }
}

/// Stage 1 fits only the head on `nli`; stage 2 starts from the stage-1
/// checkpoint and trains everything on `sts`. Both stages must use the same
/// regression loss kind with the same `(k, x0)`.
pub fn two_stage_finetune(
    params: &ModelParams,
    nli: StageInput<'_>,
    sts: StageInput<'_>,
    dev: &DevSet,
) -> Result<TwoStageOutcome> {
    for loss in [nli.loss, sts.loss] {
        if !loss.kind().is_regression() {
            return Err(Error::InvalidConfig(format!(
                "two-stage fine-tuning needs a regression loss, got {}",
                loss.kind()
            )));
        }
    }
    if (nli.loss.kind(), nli.loss.k(), nli.loss.x0()) != (sts.loss.kind(), sts.loss.k(), sts.loss.x0()) {
        return Err(Error::InvalidConfig("both stages must share one loss".into()));
    }
    let scorer = Scorer::Regression;
    let head_only = train(
        params,
        nli.examples,
        dev,
        &scorer,
        nli.config,
        nli.loss,
        nli.clamp,
        Stage::HeadOnly,
    )?;
    let joint = train(
        &head_only.best_params,
        sts.examples,
        dev,
        &scorer,
        sts.config,
        sts.loss,
        sts.clamp,
        Stage::Joint,
    )?;
    Ok(TwoStageOutcome { head_only, joint })
}
