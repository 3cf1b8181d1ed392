//! End-to-end runs driven by a [`RunConfig`]: load corpora, build the
//! vocabulary, initialise, train (one or two stages) and package the result.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{sha256_hex, Checkpoint};
use crate::config::{LabelSpace, RunConfig};
use crate::data::{extract_positive_pairs, load_tsv, Dataset, Gold, LabelSet};
use crate::encoder::{tokenize, Example, FeatureMode, Model, ModelParams, Scorer, Target, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::losses::{LossKind, LossSpec};
use crate::training::{
    encode_examples, history_csv, train, two_stage_finetune, DevSet, HistoryEntry, Stage, StageInput, TargetEncoding,
};

/// Corpora for one run, already checked against the configured labels.
#[derive(Debug, Clone)]
pub struct RunData {
    pub train: Dataset,
    pub dev: Dataset,
    pub head_only_train: Option<Dataset>,
    pub tests: Vec<Dataset>,
}

impl RunData {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let labels = cfg.label_space()?;
        let train = conform(load_tsv(&cfg.data.train)?, &labels)?;
        let dev = load_tsv(&cfg.data.dev)?;
        let head_only_train = match &cfg.data.head_only_train {
            Some(p) => Some(conform(load_tsv(p)?, &cfg.head_only_label_space()?)?),
            None => None,
        };
        let tests = cfg.data.test.iter().map(load_tsv).collect::<Result<_>>()?;
        Ok(RunData {
            train,
            dev,
            head_only_train,
            tests,
        })
    }
}

/// Impose the configured label layout on a loaded corpus.
fn conform(ds: Dataset, labels: &LabelSpace) -> Result<Dataset> {
    match labels {
        LabelSpace::Categorical(m) => ds.with_categories(m),
        LabelSpace::Graded { low, high, .. } => ds.with_score_range(*low, *high),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub loss: LossSpec,
    pub two_stage: bool,
    pub vocab_size: usize,
    pub head_parameters: usize,
    pub train_pairs: usize,
    pub dev_pairs: usize,
    pub best_step: usize,
    pub dev_spearman: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_only_dev_spearman: Option<f64>,
    pub checkpoint_sha256: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<HistoryEntry>,
    pub manifest: Manifest,
    pub test_report: Option<EvalReport>,
}

impl RunOutcome {
    pub fn dev_spearman(&self) -> f64 {
        self.manifest.dev_spearman
    }

    /// checkpoint.json, history.csv, manifest.json, plus mapping.json for
    /// categorical labels and test_report.json when test sets were given.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
        };
        write("checkpoint.json", &self.checkpoint.to_bytes()?)?;
        write("history.csv", history_csv(&self.history).as_bytes())?;
        write("manifest.json", &pretty(&self.manifest)?)?;
        if let Some(m) = self.checkpoint.labels.mapping() {
            write("mapping.json", &pretty(m)?)?;
        }
        if let Some(r) = &self.test_report {
            write("test_report.json", &pretty(r)?)?;
        }
        Ok(())
    }
}

pub(crate) fn pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

/// InfoNCE trains on positive pairs only: graded pairs at or above the
/// threshold, or pairs in the top category.
fn positive_examples(ds: &Dataset, threshold: f64, vocab: &Vocabulary, max_tokens: usize) -> Result<Vec<Example>> {
    let pairs: Vec<(String, String)> = match &ds.labels {
        LabelSet::Scores { .. } => extract_positive_pairs(ds, threshold)?,
        LabelSet::Categories(cats) => {
            let top = cats.last().ok_or_else(|| Error::EmptyDataset(ds.name.clone()))?;
            ds.pairs
                .iter()
                .filter(|p| matches!(&p.gold, Gold::Label(l) if l == top))
                .map(|p| (p.s1.clone(), p.s2.clone()))
                .collect()
        }
    };
    if pairs.is_empty() {
        return Err(Error::EmptyDataset(format!("{}: no positive pairs", ds.name)));
    }
    // the target is unused: the other positives in the batch are the negatives
    Ok(pairs
        .iter()
        .map(|(a, b)| Example {
            left: tokenize(a, vocab, max_tokens),
            right: tokenize(b, vocab, max_tokens),
            target: Target::Score(0.0),
        })
        .collect())
}

/// Train according to `cfg` on already-loaded data.
pub fn run_with_data(cfg: &RunConfig, data: &RunData) -> Result<RunOutcome> {
    cfg.validate()?;
    let labels = cfg.label_space()?;
    let loss = cfg.loss_spec()?;
    let max_tokens = cfg.train.max_tokens;

    let mut texts: Vec<&str> = Vec::new();
    for ds in std::iter::once(&data.train).chain(data.head_only_train.as_ref()) {
        for p in &ds.pairs {
            texts.push(&p.s1);
            texts.push(&p.s2);
        }
    }
    let vocab = Vocabulary::build(texts);

    let (train_examples, scorer, outputs, bias) = match loss.kind() {
        LossKind::CrossEntropy => {
            let m = labels.mapping().expect("validated: categorical");
            (
                encode_examples(&data.train, &vocab, max_tokens, TargetEncoding::ClassIndex(m))?,
                Scorer::ExpectedNode {
                    nodes: m.nodes().to_vec(),
                },
                m.len(),
                0.0,
            )
        }
        LossKind::InfoNce => (
            positive_examples(&data.train, cfg.loss.positive_threshold, &vocab, max_tokens)?,
            Scorer::Cosine,
            1,
            0.0,
        ),
        _ => (
            encode_examples(
                &data.train,
                &vocab,
                max_tokens,
                TargetEncoding::Numeric(labels.mapping()),
            )?,
            Scorer::Regression,
            1,
            labels.midpoint(),
        ),
    };
    if train_examples.is_empty() {
        return Err(Error::EmptyDataset(data.train.name.clone()));
    }
    let dev = DevSet::from_dataset(&data.dev, &vocab, max_tokens, labels.mapping())?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let init = ModelParams::init(vocab.len(), cfg.model.dim, cfg.model.mode, outputs, bias, &mut rng)?;
    let clamp = Some(labels.clamp_range());

    let (best_params, best_step, dev_rho, head_only_rho, history) = match &data.head_only_train {
        Some(stage1_ds) => {
            let stage1_labels = cfg.head_only_label_space()?;
            let stage1_examples = encode_examples(
                stage1_ds,
                &vocab,
                max_tokens,
                TargetEncoding::Numeric(stage1_labels.mapping()),
            )?;
            let stage1_loss = cfg.loss.spec(stage1_labels.interval())?;
            let both = two_stage_finetune(
                &init,
                StageInput {
                    examples: &stage1_examples,
                    config: &cfg.head_only_train,
                    loss: &stage1_loss,
                    clamp: Some(stage1_labels.clamp_range()),
                },
                StageInput {
                    examples: &train_examples,
                    config: &cfg.train,
                    loss: &loss,
                    clamp,
                },
                &dev,
            )?;
            let history = both.combined_history();
            (
                both.joint.best_params,
                both.joint.best_step,
                both.joint.best_dev_spearman,
                Some(both.head_only.best_dev_spearman),
                history,
            )
        }
        None => {
            let out = train(
                &init,
                &train_examples,
                &dev,
                &scorer,
                &cfg.train,
                &loss,
                clamp,
                Stage::Joint,
            )?;
            (out.best_params, out.best_step, out.best_dev_spearman, None, out.history)
        }
    };

    let head_parameters = best_params.head_param_count();
    let model = Model {
        vocab,
        params: best_params,
        scorer,
        max_tokens,
    };
    let checkpoint = Checkpoint::new(model, labels.clone(), loss);
    let test_report = if data.tests.is_empty() {
        None
    } else {
        Some(evaluate(&checkpoint.model, &data.tests, labels.mapping())?)
    };
    let manifest = Manifest {
        config: cfg.clone(),
        loss,
        two_stage: data.head_only_train.is_some(),
        vocab_size: checkpoint.model.vocab.len(),
        head_parameters,
        train_pairs: train_examples.len(),
        dev_pairs: dev.pairs.len(),
        best_step,
        dev_spearman: dev_rho,
        head_only_dev_spearman: head_only_rho,
        checkpoint_sha256: sha256_hex(&checkpoint.to_bytes()?),
    };
    Ok(RunOutcome {
        checkpoint,
        history,
        manifest,
        test_report,
    })
}

pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    run_with_data(cfg, &RunData::load(cfg)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: f64,
    pub x0: f64,
    pub seed: u64,
    pub dev_spearman: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Grid points rejected before training, with the reason.
    pub skipped: Vec<(f64, f64, String)>,
}

/// Train once per `(k, x0)` grid point. Point `i` (row-major over `ks` then
/// `x0s`) runs with seed `base + i`. Rows come back sorted by dev Spearman,
/// best first.
pub fn sweep(cfg: &RunConfig, data: &RunData, ks: &[f64], x0s: &[f64]) -> Result<SweepResult> {
    let base = cfg.train.seed;
    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    for (i, (k, x0)) in ks.iter().flat_map(|&k| x0s.iter().map(move |&x0| (k, x0))).enumerate() {
        let mut point = cfg.clone();
        point.loss.k = k;
        point.loss.x0 = x0;
        point.set_seed(base.wrapping_add(i as u64));
        match point.validate() {
            Ok(()) => jobs.push((k, x0, point)),
            Err(e) => skipped.push((k, x0, e.to_string())),
        }
    }
    let mut rows = jobs
        .par_iter()
        .map(|(k, x0, point)| {
            run_with_data(point, data).map(|out| SweepRow {
                k: *k,
                x0: *x0,
                seed: point.train.seed,
                dev_spearman: out.dev_spearman(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.dev_spearman.total_cmp(&a.dev_spearman));
    Ok(SweepResult { rows, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: FeatureMode,
    pub head_parameters: usize,
    pub dev_spearman: f64,
}

/// One run per feature mode, everything else (seed included) held fixed.
pub fn ablate(cfg: &RunConfig, data: &RunData) -> Result<Vec<AblationRow>> {
    FeatureMode::ALL
        .par_iter()
        .map(|&mode| {
            let mut c = cfg.clone();
            c.model.mode = mode;
            let out = run_with_data(&c, data)?;
            Ok(AblationRow {
                mode,
                head_parameters: out.manifest.head_parameters,
                dev_spearman: out.dev_spearman(),
            })
        })
        .collect()
}
