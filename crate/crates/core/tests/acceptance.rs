//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stsreg::cli::run_cli;
use stsreg::config::RunConfig;
use stsreg::data::{dedup_filter, load_tsv, rescale_sick_dataset, SentencePair};
use stsreg::encoder::{FeatureMode, ModelParams, Scorer};
use stsreg::eval::{accuracy, spearman};
use stsreg::gradcheck::{check_all, CheckShape, TOLERANCE};
use stsreg::labelmap::LabelMapping;
use stsreg::losses::{info_nce, l1_loss, mse_loss, smooth_k2, translated_relu, LossSpec, Residual};
use stsreg::pipeline::{run_with_data, RunData};
use stsreg::synth::{self, CorpusShape};
use stsreg::training::{encode_examples, train, DevSet, Stage, TargetEncoding};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn fixtures() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures"))
}

fn r(x: f64) -> Residual {
    Residual::from_abs(x).unwrap()
}

fn loss_values() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = 1.0;
    for _ in 0..10_000 {
        let k = rng.gen_range(0.01..10.0);
        let x0 = rng.gen_range(0.0..=d / 2.0);
        let x = rng.gen_range(0.0..3.0);
        let tr = LossSpec::translated_relu(k, x0, d).unwrap();
        let sk = LossSpec::smooth_k2(k, x0, d).unwrap();
        let (vt, _) = translated_relu(r(x), &tr);
        let (vs, _) = smooth_k2(r(x), &sk);
        let want_t = f64::max(0.0, k * (x - x0));
        let want_s = if x >= x0 { k * (x - x0) * (x - x0) } else { 0.0 };
        check((vt - want_t).abs() <= 1e-12, || {
            format!("translated relu at x={x} k={k} x0={x0}")
        })?;
        check((vs - want_s).abs() <= 1e-12, || {
            format!("smooth k2 at x={x} k={k} x0={x0}")
        })?;
        // anywhere in the buffer zone both value and gradient vanish
        let inside = x0 * rng.gen::<f64>();
        if inside < x0 {
            check(translated_relu(r(inside), &tr) == (0.0, 0.0), || {
                format!("trelu buffer at {inside}")
            })?;
            check(smooth_k2(r(inside), &sk) == (0.0, 0.0), || {
                format!("sk2 buffer at {inside}")
            })?;
        }
    }
    let took = start.elapsed();
    check(took < Duration::from_secs(1), || format!("took {took:?}"))?;
    Ok(format!("10^4 samples in {took:.2?}"))
}

fn continuity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.gen_range(0.1..5.0);
        let x0 = rng.gen_range(0.01..=0.5);
        let eps = 1e-9;
        let sk = LossSpec::smooth_k2(k, x0, 1.0).unwrap();
        let (vl, gl) = smooth_k2(r(x0 - eps), &sk);
        let (vr, gr) = smooth_k2(r(x0 + eps), &sk);
        check((vl - vr).abs() < 1e-8 && (gl - gr).abs() < 1e-8, || {
            format!("smooth k2 not C1 at x0={x0}, k={k}")
        })?;
        worst = worst.max((gl - gr).abs());
        let tr = LossSpec::translated_relu(k, x0, 1.0).unwrap();
        let (vl, gl) = translated_relu(r(x0 - eps), &tr);
        let (vk, gk) = translated_relu(r(x0), &tr);
        let (vr, gr) = translated_relu(r(x0 + eps), &tr);
        // no jump: the left limit, the knot and the right side agree to within k * eps
        check(
            vl == 0.0 && vk == 0.0 && (vr - vk).abs() <= k * eps * (1.0 + 1e-6),
            || format!("trelu value jump at x0={x0}"),
        )?;
        check(gl == 0.0 && gr - gl == k && gk == k, || {
            format!("trelu gradient jump at x0={x0}, k={k}")
        })?;
    }
    Ok(format!("1000 knots; worst smooth k2 gradient gap {worst:.1e}"))
}

fn reduction() -> Outcome {
    let tr = LossSpec::translated_relu(1.0, 0.0, 1.0).unwrap();
    let sk = LossSpec::smooth_k2(1.0, 0.0, 1.0).unwrap();
    for i in 0..10_000 {
        let x = i as f64 * 5e-4;
        let (a, b) = (translated_relu(r(x), &tr).0, l1_loss(r(x)).0);
        check((a - b).abs() <= 1e-12, || format!("trelu vs L1 at {x}"))?;
        let (a, b) = (smooth_k2(r(x), &sk).0, mse_loss(r(x)).0);
        check((a - b).abs() <= 1e-12, || format!("smooth k2 vs MSE at {x}"))?;
    }
    Ok("10^4 grid points".into())
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let shape = CheckShape {
        dim: 8,
        vocab: 30,
        batch: 4,
    };
    let mut worst = 0.0f64;
    let mut rows = 0;
    for seed in 0..20 {
        for row in check_all(seed, shape).map_err(|e| e.to_string())? {
            rows += 1;
            worst = worst.max(row.max_relative_error);
            check(row.passed(), || {
                format!(
                    "seed {seed}: {} / {} rel err {:.2e}",
                    row.loss.name(),
                    row.mode.name(),
                    row.max_relative_error
                )
            })?;
        }
    }
    let took = start.elapsed();
    check(took < Duration::from_secs(30), || format!("took {took:?}"))?;
    Ok(format!(
        "{rows} cases, worst {worst:.1e} (tol {TOLERANCE:.0e}) in {took:.2?}"
    ))
}

fn brute_nearest(nodes: &[f64], p: f64) -> usize {
    let mut best = 0;
    for (i, n) in nodes.iter().enumerate() {
        if (p - n).abs() <= (p - nodes[best]).abs() {
            best = i;
        }
    }
    best
}

fn rounding() -> Outcome {
    let m = LabelMapping::build(&["a", "b", "c", "d"], 0.0, 1.0).map_err(|e| e.to_string())?;
    let n = 100_000;
    for i in 0..=n {
        // exact multiples of 1/8 land on every midpoint
        let p = -1.0 + 5.0 * i as f64 / n as f64;
        let want = brute_nearest(m.nodes(), p);
        check(m.nearest_index(p) == want, || format!("classify({p}) != node {want}"))?;
    }
    check(m.nearest_index(2.875) == 3, || "2.875 should round to 3".into())?;
    check(m.nearest_index(1.333) == 1, || "1.333 should round to 1".into())?;
    check(m.nearest_index(1.5) == 2, || "1.5 should round up to 2".into())?;
    Ok(format!("{} grid points", n + 1))
}

fn trimmed_key(p: &SentencePair) -> (String, String) {
    (p.s1.trim().to_owned(), p.s2.trim().to_owned())
}

fn dedup() -> Outcome {
    let dir = fixtures().join("dedup");
    let load = |f: &str| load_tsv(dir.join(f)).map_err(|e| e.to_string());
    let tests = vec![load("sickr_test.tsv")?, load("stsb_test.tsv")?];
    let sick = rescale_sick_dataset(&load("sick_train.tsv")?).map_err(|e| e.to_string())?;
    let trains = [sick, load("stsb_train.tsv")?];
    let mut removed_total = 0;
    for train in &trains {
        let out = dedup_filter(train, &tests);
        // independent pairwise scan
        let mut keep = Vec::new();
        let mut drop = 0;
        for p in &train.pairs {
            let (a, b) = trimmed_key(p);
            let hit = tests.iter().flat_map(|t| &t.pairs).any(|q| {
                let (c, d) = trimmed_key(q);
                (a == c && b == d) || (a == d && b == c)
            });
            if hit {
                drop += 1;
            } else {
                keep.push(p.clone());
            }
        }
        check(out.filtered.pairs == keep && out.removed.len() == drop, || {
            format!("{}: filter disagrees with brute force", train.name)
        })?;
        let again = dedup_filter(&out.filtered, &tests);
        check(
            again.removed.is_empty() && again.filtered.pairs == out.filtered.pairs,
            || format!("{}: not idempotent", train.name),
        )?;
        removed_total += drop;
    }
    check(removed_total == 2, || {
        format!("expected the 2 planted overlaps, removed {removed_total}")
    })?;
    Ok("2 planted overlaps removed (one swapped), idempotent".into())
}

fn oracle_spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn spearman_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut compared = 0;
    while compared < 1000 {
        let n = rng.gen_range(2..=50);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            for _ in 0..rng.gen_range(0..=n / 2) {
                let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
                v[i] = v[j];
            }
            if rng.gen_bool(0.3) {
                v.iter_mut().for_each(|a| *a = a.round());
            }
            v
        };
        let (x, y) = (draw(&mut rng), draw(&mut rng));
        let Ok(rho) = spearman(&x, &y) else {
            check(x.iter().all(|a| *a == x[0]) || y.iter().all(|b| *b == y[0]), || {
                format!("spearman failed on non-constant input {x:?}")
            })?;
            continue;
        };
        let want = oracle_spearman(&x, &y);
        check((rho - want).abs() <= 1e-12, || format!("rho {rho} vs oracle {want}"))?;
        for t in [
            &(|a: f64| a.exp()) as &dyn Fn(f64) -> f64,
            &|a: f64| 3.0 * a - 7.0,
            &|a: f64| a * a * a,
        ] {
            let tx: Vec<f64> = x.iter().map(|a| t(*a)).collect();
            let rt = spearman(&tx, &y).map_err(|e| e.to_string())?;
            check((rt - rho).abs() <= 1e-12, || {
                "not invariant under a monotone transform".into()
            })?;
        }
        compared += 1;
    }
    Ok("1000 vectors with ties; exp/affine/cube invariant".into())
}

fn end_to_end() -> Outcome {
    let shape = CorpusShape::default();
    let err = |e: stsreg::Error| e.to_string();
    let train_set = synth::ordinal_corpus("ordinal_train", &synth::FOUR_LEVELS, 2000, shape, 0).map_err(err)?;
    let dev = synth::ordinal_corpus("ordinal_dev", &synth::FOUR_LEVELS, 400, shape, 1).map_err(err)?;
    let nli = synth::ordinal_corpus("nli_train", &synth::NLI_LEVELS, 2000, shape, 2).map_err(err)?;
    let cfg = RunConfig::from_toml_str(
        r#"
[data]
train = "ordinal_train.tsv"
dev = "ordinal_dev.tsv"
head_only_train = "nli_train.tsv"

[labels]
categories = ["irrelevant", "slightly relevant", "moderately relevant", "highly relevant"]

[loss]
kind = "smooth_k2"
k = 2.0
x0 = 0.25

[model]
dim = 48

[train]
epochs = 8
learning_rate = 0.01
optimizer = "adam"

[head_only_train]
epochs = 2
learning_rate = 0.01
optimizer = "adam"
"#,
    )
    .map_err(err)?;
    let data = RunData {
        train: train_set,
        dev: dev.clone(),
        head_only_train: Some(nli.clone()),
        tests: Vec::new(),
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let start = Instant::now();
    let outcome = pool.install(|| run_with_data(&cfg, &data)).map_err(err)?;
    let took = start.elapsed();
    let mapping = outcome.checkpoint.labels.mapping().expect("categorical").clone();
    let rho = outcome.dev_spearman();
    let acc = accuracy(&outcome.checkpoint.model, &dev, &mapping).map_err(err)?;
    check(rho >= 0.90, || format!("dev spearman {rho:.4} < 0.90"))?;
    check(acc >= 0.85, || format!("rounding accuracy {acc:.4} < 0.85"))?;
    check(took < Duration::from_secs(60), || format!("took {took:?}"))?;

    // the head-only stage must not touch the embedding table
    let vocab = &outcome.checkpoint.model.vocab;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let init = ModelParams::init(vocab.len(), 48, FeatureMode::UvAbsDiff, 1, 1.5, &mut rng).map_err(err)?;
    let nli_map = LabelMapping::nli();
    let ex = encode_examples(&nli, vocab, 256, TargetEncoding::Numeric(Some(&nli_map))).map_err(err)?;
    let dev_set = DevSet::from_dataset(&dev, vocab, 256, Some(&mapping)).map_err(err)?;
    let stage = train(
        &init,
        &ex,
        &dev_set,
        &Scorer::Regression,
        &cfg.head_only_train,
        &LossSpec::smooth_k2(2.0, 0.25, 1.0).map_err(err)?,
        None,
        Stage::HeadOnly,
    )
    .map_err(err)?;
    let same = stage
        .best_params
        .embeddings
        .iter()
        .zip(&init.embeddings)
        .all(|(a, b)| a.to_bits() == b.to_bits());
    check(same, || "head-only stage changed the embeddings".into())?;
    check(stage.best_params.head_weights != init.head_weights, || {
        "head did not train".into()
    })?;
    Ok(format!(
        "dev spearman {rho:.4}, accuracy {acc:.4}, {took:.2?}; embeddings frozen in head-only stage"
    ))
}

fn info_nce_sanity() -> Outcome {
    let one = info_nce(&[vec![0.3, -1.2, 2.0]], &[vec![-0.7, 0.1, 0.4]], 0.05).map_err(|e| e.to_string())?;
    check(one.value == 0.0, || format!("batch of one gives {}", one.value))?;
    let e1 = vec![1.0, 0.0];
    let e2 = vec![0.0, 1.0];
    let two = info_nce(&[e1.clone(), e2.clone()], &[e1, e2], 1.0).map_err(|e| e.to_string())?;
    let want = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
    check((two.value - want).abs() <= 1e-9, || format!("{} vs {want}", two.value))?;
    Ok(format!("batch 1 = 0, orthogonal batch 2 = {:.12}", two.value))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fx = fixtures();
    let config = format!(
        r#"
[data]
train = "{0}/ordinal_train.tsv"
dev = "{0}/ordinal_dev.tsv"
head_only_train = "{0}/nli_train.tsv"

[labels]
categories = ["irrelevant", "slightly relevant", "moderately relevant", "highly relevant"]

[loss]
kind = "smooth_k2"
k = 2.0
x0 = 0.25

[model]
dim = 16

[train]
epochs = 1
seed = 11
"#,
        fx.display()
    );
    let cfg_path = tmp.path().join("run.toml");
    fs::write(&cfg_path, config).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let args = [
            "stsreg",
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        let (mut so, mut se) = (Vec::new(), Vec::new());
        let code = run_cli(args, &mut so, &mut se);
        check(code == 0, || {
            format!("train exited {code}: {}", String::from_utf8_lossy(&se))
        })?;
        let read = |f: &str| fs::read(out.join(f)).map_err(|e| e.to_string());
        outputs.push((read("checkpoint.json")?, read("history.csv")?));
    }
    check(outputs[0].0 == outputs[1].0, || "checkpoints differ".into())?;
    check(outputs[0].1 == outputs[1].1, || "histories differ".into())?;
    Ok(format!("{} checkpoint bytes identical", outputs[0].0.len()))
}

fn parameter_counts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for dim in [1, 8, 32, 768] {
        let reg = ModelParams::init(10, dim, FeatureMode::UvAbsDiff, 1, 0.0, &mut rng).map_err(|e| e.to_string())?;
        check(reg.head_weights.len() == 3 * dim, || {
            format!("regression head at dim {dim}")
        })?;
        for k in [3, 4, 6] {
            let cls =
                ModelParams::init(10, dim, FeatureMode::UvAbsDiff, k, 0.0, &mut rng).map_err(|e| e.to_string())?;
            check(cls.head_weights.len() == 3 * dim * k, || {
                format!("classification head at dim {dim}, K {k}")
            })?;
            check(cls.head_bias.len() == k, || "bias length".into())?;
        }
    }
    Ok("3*dim regression weights, 3*dim*K classification weights".into())
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("loss values and buffer zone", loss_values),
        ("continuity at the knot", continuity),
        ("reduction to L1 / MSE", reduction),
        ("whole-model gradient check", gradients),
        ("rounding classifier", rounding),
        ("dedup filter", dedup),
        ("spearman vs oracle", spearman_oracle),
        ("end-to-end two-stage regression", end_to_end),
        ("InfoNCE sanity", info_nce_sanity),
        ("determinism", determinism),
        ("head parameter counts", parameter_counts),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
