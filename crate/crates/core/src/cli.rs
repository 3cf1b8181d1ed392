//! Command-line front end. `stsreg <command> ...`; exit status 0 on success,
//! 1 for invalid input or configuration, 2 for failures while running.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{self, audit_jsonl, dedup_filter, load_tsv, merge, rescale_sick_dataset, save_tsv};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::gradcheck::{self, CheckShape};
use crate::pipeline::{self, pretty, RunData};
use crate::synth::{self, CorpusShape};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "STSREG_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "stsreg",
    version,
    about = "Regression fine-tuning and evaluation for graded sentence similarity"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Drop training pairs that occur in any test set, then merge.
    FilterData(FilterArgs),
    /// Train per a run config; writes checkpoint, history and manifest.
    Train(RunArgs),
    /// Score a checkpoint on one or more datasets.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Train over a grid of (k, x0) values.
    Sweep(SweepArgs),
    /// Compare the three pair-feature layouts.
    Ablate(RunArgs),
    /// Write the synthetic fixture corpora.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Training corpus already on the target score range.
    #[arg(long = "train")]
    pub train: Vec<PathBuf>,
    /// Training corpus scored on [1, 5]; rescaled to [0, 5] before merging.
    #[arg(long = "sick")]
    pub sick: Vec<PathBuf>,
    /// Test corpus to check against (never modified).
    #[arg(long = "test", required = true)]
    pub test: Vec<PathBuf>,
    /// Declared score range of the merged output.
    #[arg(long, default_value = "0,5", value_parser = parse_range)]
    pub range: (f64, f64),
    /// Filtered, merged TSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Removal audit (JSON lines); defaults to `<out>.removed.jsonl`.
    #[arg(long)]
    pub audit: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// TSV datasets to score.
    #[arg(required = true)]
    pub datasets: Vec<PathBuf>,
    /// Directory for report.json / report.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 30)]
    pub vocab: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated k values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub k: Vec<f64>,
    /// Comma-separated x0 values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub x0: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub train_pairs: usize,
    #[arg(long, default_value_t = 400)]
    pub dev_pairs: usize,
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LOW,HIGH")?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if lo >= hi || lo.is_nan() || hi.is_nan() {
        return Err(format!("empty range {lo},{hi}"));
    }
    Ok((lo, hi))
}

/// Parse `args` (program name first) and run, writing normal output to `out`
/// and diagnostics to `err`. Returns the process exit status.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::FilterData(a) => cmd_filter_data(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out, err),
        Command::Ablate(a) => cmd_ablate(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
    }
}

fn emit(out: &mut dyn Write, text: impl AsRef<str>) -> Result<()> {
    out.write_all(text.as_ref().as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// `--out` beats the environment variable, which beats the config file.
fn output_dir(flag: Option<&Path>, configured: Option<&Path>, fallback: &str) -> PathBuf {
    if let Some(p) = flag {
        return p.to_owned();
    }
    if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    configured.map_or_else(|| PathBuf::from(fallback), Path::to_owned)
}

fn load_run_config(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        Some(n) => {
            if n == 0 {
                return Err(Error::InvalidInput("--threads must be positive".into()));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
            pool.install(f)
        }
        None => f(),
    }
}

pub fn cmd_filter_data(a: &FilterArgs, out: &mut dyn Write) -> Result<i32> {
    if a.train.is_empty() && a.sick.is_empty() {
        return Err(Error::InvalidInput("give at least one --train or --sick corpus".into()));
    }
    // read everything before writing anything
    let tests = a.test.iter().map(load_tsv).collect::<Result<Vec<_>>>()?;
    let mut trains = Vec::new();
    for p in &a.train {
        trains.push(load_tsv(p)?.with_score_range(a.range.0, a.range.1)?);
    }
    for p in &a.sick {
        let ds = load_tsv(p)?.with_score_range(1.0, 5.0)?;
        trains.push(rescale_sick_dataset(&ds)?.with_score_range(a.range.0, a.range.1)?);
    }

    let mut filtered = Vec::new();
    let mut removed = Vec::new();
    for t in &trains {
        let res = dedup_filter(t, &tests);
        emit(
            out,
            format!(
                "{}: input {}, removed {}, kept {}\n",
                t.name,
                t.len(),
                res.removed.len(),
                res.filtered.len()
            ),
        )?;
        filtered.push(res.filtered);
        removed.extend(res.removed);
    }
    let name = a
        .out
        .file_stem()
        .map_or_else(|| "merged".to_owned(), |s| s.to_string_lossy().into_owned());
    let merged = merge(name, &filtered)?;
    let tsv = data::to_tsv(&merged)?;
    let audit = audit_jsonl(&removed)?;
    let audit_path = a.audit.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".removed.jsonl");
        PathBuf::from(s)
    });
    write_file(&a.out, tsv.as_bytes())?;
    write_file(&audit_path, audit.as_bytes())?;
    let input: usize = trains.iter().map(|t| t.len()).sum();
    emit(
        out,
        format!(
            "total: input {input}, removed {}, kept {}\n",
            removed.len(),
            merged.len()
        ),
    )?;
    Ok(EXIT_OK)
}

pub fn cmd_train(a: &RunArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_run_config(a)?;
    let dir = output_dir(a.out.as_deref(), cfg.out_dir.as_deref(), "runs/train");
    let outcome = with_threads(a.threads, || pipeline::run(&cfg))?;
    outcome.write(&dir)?;
    let m = &outcome.manifest;
    let mut text = format!(
        "loss {} k={} x0={} d={}\n",
        m.loss.kind(),
        m.loss.k(),
        m.loss.x0(),
        m.loss.d()
    );
    if let Some(r) = m.head_only_dev_spearman {
        text.push_str(&format!("head-only stage dev spearman {r:.4}\n"));
    }
    text.push_str(&format!(
        "best dev spearman {:.4} at step {}\ncheckpoint {} (sha256 {})\n",
        m.dev_spearman,
        m.best_step,
        dir.join("checkpoint.json").display(),
        m.checkpoint_sha256
    ));
    if let Some(r) = &outcome.test_report {
        text.push_str(&r.to_table());
    }
    emit(out, text)?;
    Ok(EXIT_OK)
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let datasets = a.datasets.iter().map(load_tsv).collect::<Result<Vec<_>>>()?;
    let report = evaluate(&ckpt.model, &datasets, ckpt.labels.mapping())?;
    let json = pretty(&report)?;
    let dir = a.out.clone().or_else(|| {
        std::env::var_os(OUT_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
    });
    if let Some(dir) = dir {
        write_file(&dir.join("report.json"), &json)?;
        write_file(&dir.join("report.txt"), report.to_table().as_bytes())?;
    }
    if a.json {
        out.write_all(&json).map_err(|e| Error::io("<stdout>", e))?;
    } else {
        emit(out, report.to_table())?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let shape = CheckShape {
        dim: a.dim,
        vocab: a.vocab,
        batch: a.batch,
    };
    if a.dim == 0 || a.batch == 0 || a.seeds == 0 {
        return Err(Error::InvalidInput("dim, batch and seeds must be positive".into()));
    }
    let mut worst = 0.0f64;
    let mut failures = 0usize;
    emit(
        out,
        format!(
            "{:<16} {:<12} {:<15} {:>7} {:>12}\n",
            "loss", "mode", "targets", "params", "max rel err"
        ),
    )?;
    for seed in a.seed..a.seed + a.seeds {
        for row in gradcheck::check_all(seed, shape)? {
            worst = worst.max(row.max_relative_error);
            if !row.passed() {
                failures += 1;
            }
            let placement = match row.placement {
                gradcheck::TargetPlacement::OutsideBuffer => "outside-buffer",
                gradcheck::TargetPlacement::InsideBuffer => "inside-buffer",
            };
            emit(
                out,
                format!(
                    "{:<16} {:<12} {:<15} {:>7} {:>12.3e}{}\n",
                    row.loss.name(),
                    row.mode.name(),
                    placement,
                    row.parameters,
                    row.max_relative_error,
                    if row.passed() { "" } else { "  FAIL" }
                ),
            )?;
        }
    }
    emit(
        out,
        format!(
            "worst relative error {worst:.3e} (tolerance {:.0e}); {failures} failing\n",
            gradcheck::TOLERANCE
        ),
    )?;
    Ok(if failures == 0 { EXIT_OK } else { EXIT_RUNTIME })
}

pub fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let cfg = load_run_config(&a.run)?;
    let dir = output_dir(a.run.out.as_deref(), cfg.out_dir.as_deref(), "runs/sweep");
    let data = RunData::load(&cfg)?;
    let result = with_threads(a.run.threads, || pipeline::sweep(&cfg, &data, &a.k, &a.x0))?;
    for (k, x0, why) in &result.skipped {
        let _ = writeln!(err, "warning: skipping k={k} x0={x0}: {why}");
    }
    let mut table = format!("{:>8} {:>8} {:>14}\n", "k", "x0", "dev spearman");
    let mut tsv = String::from("k\tx0\tseed\tdev_spearman\n");
    for r in &result.rows {
        table.push_str(&format!("{:>8} {:>8} {:>14.4}\n", r.k, r.x0, r.dev_spearman));
        tsv.push_str(&format!("{}\t{}\t{}\t{}\n", r.k, r.x0, r.seed, r.dev_spearman));
    }
    write_file(&dir.join("sweep.tsv"), tsv.as_bytes())?;
    emit(out, table)?;
    Ok(EXIT_OK)
}

pub fn cmd_ablate(a: &RunArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_run_config(a)?;
    let dir = output_dir(a.out.as_deref(), cfg.out_dir.as_deref(), "runs/ablate");
    let data = RunData::load(&cfg)?;
    let rows = with_threads(a.threads, || pipeline::ablate(&cfg, &data))?;
    let mut table = format!("{:<14} {:>12} {:>14}\n", "features", "head params", "dev spearman");
    for r in &rows {
        table.push_str(&format!(
            "{:<14} {:>12} {:>14.4}\n",
            r.mode.name(),
            r.head_parameters,
            r.dev_spearman
        ));
    }
    write_file(&dir.join("ablation.json"), &pretty(&rows)?)?;
    emit(out, table)?;
    Ok(EXIT_OK)
}

/// Fixture corpora: a 4-level ordinal train/dev pair, a 3-way NLI-style
/// corpus for the head-only stage, and the seven graded evaluation sets.
pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<i32> {
    let shape = CorpusShape::default();
    let s = a.seed;
    let mut sets = vec![
        synth::ordinal_corpus("ordinal_train", &synth::FOUR_LEVELS, a.train_pairs, shape, s)?,
        synth::ordinal_corpus("ordinal_dev", &synth::FOUR_LEVELS, a.dev_pairs, shape, s + 1)?,
        synth::ordinal_corpus("nli_train", &synth::NLI_LEVELS, a.train_pairs, shape, s + 2)?,
        synth::graded_corpus("graded_train", a.train_pairs, shape, s + 3)?,
        synth::graded_corpus("graded_dev", a.dev_pairs, shape, s + 4)?,
    ];
    sets.extend(synth::eval_suite(a.dev_pairs, shape, s)?);
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for ds in &sets {
        let path = a.out.join(format!("{}.tsv", ds.name));
        save_tsv(ds, &path)?;
        emit(out, format!("{} ({} pairs)\n", path.display(), ds.len()))?;
    }
    Ok(EXIT_OK)
}
