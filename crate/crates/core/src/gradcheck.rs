//! Central finite-difference check of the hand-written backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::encoder::{embed_sentence, forward_backward, predict, Example, FeatureMode, Gradients, ModelParams, Target};
use crate::error::Result;
use crate::losses::{LossKind, LossSpec};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Minimum distance a sample must keep from any kink of the loss surface.
pub const KINK_MARGIN: f64 = 1e-4;
/// Floor on the denominator of the relative error, so that two gradients
/// that are both ~0 do not blow up the ratio.
const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest relative error between the gradient returned by `f` and central
/// differences of the loss returned by `f`, over every parameter.
pub fn max_relative_error<F>(params: &ModelParams, f: F) -> Result<f64>
where
    F: Fn(&ModelParams) -> Result<(f64, Gradients)>,
{
    let (_, analytic) = f(params)?;
    let analytic: Vec<f64> = analytic.iter().copied().collect();
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *probe.iter().nth(i).expect("same layout");
        set(&mut probe, i, orig + STEP);
        let up = f(&probe)?.0;
        set(&mut probe, i, orig - STEP);
        let down = f(&probe)?.0;
        set(&mut probe, i, orig);
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}

fn set(p: &mut ModelParams, i: usize, value: f64) {
    *p.iter_mut().nth(i).expect("index within parameter count") = value;
}

/// Where regression targets sit relative to the buffer zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetPlacement {
    OutsideBuffer,
    InsideBuffer,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub loss: LossKind,
    pub mode: FeatureMode,
    pub placement: TargetPlacement,
    pub parameters: usize,
    pub max_relative_error: f64,
    /// Sum of |gradient| over every parameter.
    pub gradient_l1: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= TOLERANCE
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CheckShape {
    pub dim: usize,
    pub vocab: usize,
    pub batch: usize,
}

impl Default for CheckShape {
    fn default() -> Self {
        CheckShape {
            dim: 8,
            vocab: 30,
            batch: 4,
        }
    }
}

/// Random model + batch for one configuration, with every sample kept at
/// least [`KINK_MARGIN`] away from the non-smooth points of `|u - v|` and of
/// the loss.
pub fn random_case(
    seed: u64,
    shape: CheckShape,
    kind: LossKind,
    mode: FeatureMode,
    placement: TargetPlacement,
) -> Result<(ModelParams, Vec<Example>, LossSpec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 1.0;
    let spec = match kind {
        LossKind::TranslatedRelu | LossKind::SmoothK2 => LossSpec::new(
            kind,
            rng.gen_range(0.5..3.0),
            rng.gen_range(0.05..=d / 2.0),
            d,
            crate::losses::DEFAULT_TAU,
        )?,
        LossKind::L1 => LossSpec::l1(),
        LossKind::Mse => LossSpec::mse(),
        LossKind::CrossEntropy => LossSpec::cross_entropy(),
        LossKind::InfoNce => LossSpec::info_nce(rng.gen_range(0.05..1.0))?,
    };
    let outputs = if kind == LossKind::CrossEntropy { 3 } else { 1 };
    let vocab = shape.vocab.max(4);

    for _attempt in 0..1000 {
        let mut params = ModelParams::zeros(vocab, shape.dim, mode, outputs);
        for p in params.iter_mut() {
            *p = rng.gen_range(-1.0..1.0);
        }
        let mut batch = Vec::with_capacity(shape.batch);
        for _ in 0..shape.batch.max(1) {
            let left = (0..rng.gen_range(1..=4)).map(|_| rng.gen_range(0..vocab)).collect();
            let right = (0..rng.gen_range(1..=4)).map(|_| rng.gen_range(0..vocab)).collect();
            batch.push(Example {
                left,
                right,
                target: Target::Score(0.0),
            });
        }
        if !clear_of_absdiff_kinks(&params, &batch, mode)? {
            continue;
        }
        for ex in &mut batch {
            ex.target = match kind {
                LossKind::CrossEntropy => Target::Class(rng.gen_range(0..outputs)),
                LossKind::InfoNce => Target::Score(0.0),
                _ => {
                    let pred = predict(&ex.left, &ex.right, &params)?;
                    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    let offset = match placement {
                        TargetPlacement::OutsideBuffer => spec.x0() + rng.gen_range(0.05..0.5),
                        TargetPlacement::InsideBuffer if spec.x0() > 2.0 * KINK_MARGIN => {
                            rng.gen_range(KINK_MARGIN..spec.x0() - KINK_MARGIN)
                        }
                        // L1 / MSE have no buffer zone; land exactly on the label
                        TargetPlacement::InsideBuffer => 0.0,
                    };
                    Target::Score(pred + side * offset)
                }
            };
        }
        return Ok((params, batch, spec));
    }
    Err(crate::error::Error::InvalidInput(
        "could not draw a batch clear of |u - v| kinks".into(),
    ))
}

fn clear_of_absdiff_kinks(params: &ModelParams, batch: &[Example], mode: FeatureMode) -> Result<bool> {
    if mode == FeatureMode::Uv {
        return Ok(true);
    }
    for ex in batch {
        let u = embed_sentence(&ex.left, params)?;
        let v = embed_sentence(&ex.right, params)?;
        if u.iter().zip(&v).any(|(a, b)| (a - b).abs() < KINK_MARGIN) {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn check_case(
    seed: u64,
    shape: CheckShape,
    kind: LossKind,
    mode: FeatureMode,
    placement: TargetPlacement,
) -> Result<CheckRow> {
    let (params, batch, spec) = random_case(seed, shape, kind, mode, placement)?;
    let run = |p: &ModelParams| forward_backward(&batch, p, &spec, None);
    let (_, g) = run(&params)?;
    Ok(CheckRow {
        loss: kind,
        mode,
        placement,
        parameters: g.iter().count(),
        max_relative_error: max_relative_error(&params, run)?,
        gradient_l1: g.iter().map(|x| x.abs()).sum(),
    })
}

/// Every loss kind under every feature mode, plus the buffer-zone placement
/// for the two buffered losses.
pub fn check_all(seed: u64, shape: CheckShape) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let mut case = 0u64;
    for kind in LossKind::ALL {
        for mode in FeatureMode::ALL {
            let mut placements = vec![TargetPlacement::OutsideBuffer];
            if matches!(kind, LossKind::TranslatedRelu | LossKind::SmoothK2) {
                placements.push(TargetPlacement::InsideBuffer);
            }
            for placement in placements {
                let case_seed = seed.wrapping_mul(1_000_003).wrapping_add(case);
                case += 1;
                rows.push(check_case(case_seed, shape, kind, mode, placement)?);
            }
        }
    }
    Ok(rows)
}
