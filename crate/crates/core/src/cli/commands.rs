use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::{CommandKind, RunManifest};
use crate::datastore::{
    denormalize, fit_normalizer, load_csv_with_schema, make_benchmark_dataset, normalize, split,
    FeatureSchema, RecordMatrix,
};
use crate::error::{Error, Result};
use crate::evalsuite::{emit_report, evaluate, EvalOptions, EvalReport};
use crate::trainer::{generate, train_to_dir, Checkpoint, PPOConfig, RunLayout, TrainState};

/// Rows in the generated benchmark dataset.
pub const BENCHMARK_ROWS: usize = 2000;
pub const UTILITY_GAP_BOUND: f64 = 0.05;
pub const NMI_BOUND: f64 = 0.05;
pub const MARGINAL_BOUND: f64 = 0.05;
pub const MIA_AUC_BOUND: f64 = 0.60;
pub const REWARD_BAND: (f64, f64) = (0.3, 0.7);
/// Trailing iterations inspected for the reward band.
pub const REWARD_WINDOW: usize = 500;

/// Builds a config: built-in profile, then the file, then flag overrides.
pub fn resolve_config(
    config: Option<&Path>,
    profile: Option<&str>,
    seed: Option<u64>,
    iterations: Option<usize>,
) -> Result<PPOConfig> {
    let mut table: toml::Table = match config {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?.parse()?,
        None => toml::Table::new(),
    };
    if let Some(name) = profile {
        table.insert("profile".into(), toml::Value::String(name.to_string()));
    }
    if let Some(s) = seed {
        let v = i64::try_from(s)
            .map_err(|_| Error::Config(vec![format!("seed = {s} exceeds the TOML integer range")]))?;
        table.insert("seed".into(), toml::Value::Integer(v));
    }
    if let Some(t) = iterations {
        let v = i64::try_from(t).map_err(|_| Error::Config(vec![format!("iterations = {t} too large")]))?;
        table.insert("iterations".into(), toml::Value::Integer(v));
    }
    PPOConfig::from_toml_str(&toml::to_string(&table).map_err(|e| Error::Config(vec![e.to_string()]))?)
}

/// Runs `body`, then finalizes the manifest with its outcome.
fn with_manifest<T>(
    mut manifest: RunManifest,
    body: impl FnOnce(&mut RunManifest) -> Result<T>,
) -> Result<T> {
    manifest.write()?;
    let out = body(&mut manifest);
    // A failure to record the outcome must not mask the command's own error.
    match (manifest.finish(out.as_ref().err()), out) {
        (Err(e), Ok(_)) => Err(e),
        (Err(e), Err(orig)) => {
            log::warn!("could not finalize manifest: {e}");
            Err(orig)
        }
        (Ok(()), out) => out,
    }
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub profile: Option<String>,
    pub data: PathBuf,
    pub schema: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub resume: bool,
}

/// File names written by `train` next to the checkpoints.
pub const FITTED_SCHEMA_FILE: &str = "schema.json";
pub const REAL_TRAIN_FILE: &str = "real_train.csv";
pub const REAL_TEST_FILE: &str = "real_test.csv";

/// Splits, normalizes and trains; writes the fitted schema, both raw splits,
/// the loss log and checkpoints into `args.out`.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainState> {
    let cfg = resolve_config(
        args.config.as_deref(),
        args.profile.as_deref(),
        args.seed,
        args.iterations,
    )?;
    let mut manifest = RunManifest::start(CommandKind::Train, &args.out, cfg.seed);
    manifest.config_path = args.config.clone();
    manifest.config_fingerprint = Some(cfg.fingerprint());
    manifest.inputs = vec![args.data.clone(), args.schema.clone()];
    with_manifest(manifest, |m| {
        let schema = FeatureSchema::load(&args.schema)?;
        let raw = load_csv_with_schema(&args.data, &schema)?;
        let (state, files) = train_on_raw(&raw, &cfg, &args.out, args.resume)?;
        for f in files {
            m.add_output(f);
        }
        Ok(state)
    })
}

fn train_on_raw(
    raw: &RecordMatrix,
    cfg: &PPOConfig,
    out: &Path,
    resume: bool,
) -> Result<(TrainState, Vec<PathBuf>)> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let parts = split(raw, cfg.split_fraction, cfg.seed)?;
    let fitted = fit_normalizer(&parts.train)?;
    let schema_path = out.join(FITTED_SCHEMA_FILE);
    fitted.save(&schema_path)?;
    let train_path = out.join(REAL_TRAIN_FILE);
    let test_path = out.join(REAL_TEST_FILE);
    parts.train.write_csv(&train_path)?;
    parts.test.write_csv(&test_path)?;
    let train = normalize(&parts.train, &fitted)?;
    let outcome = train_to_dir(&train, cfg, out, resume)?;
    let mut files = vec![schema_path, train_path, test_path];
    files.extend(outcome.files);
    Ok((outcome.state, files))
}

#[derive(Debug, Clone)]
pub struct GenerateArgs {
    pub checkpoint: PathBuf,
    pub n: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
    /// Optional schema that must match the checkpoint's layout.
    pub schema: Option<PathBuf>,
}

/// Samples records and writes them in original units. The manifest goes to
/// `<out>.manifest.json`.
pub fn cmd_generate(args: &GenerateArgs) -> Result<RecordMatrix> {
    let dir = args.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = RunManifest::start(CommandKind::Generate, &dir, args.seed);
    manifest.file = PathBuf::from(format!("{}.manifest.json", args.out.display()));
    manifest.inputs = vec![args.checkpoint.clone()];
    with_manifest(manifest, |m| {
        let ck = Checkpoint::load(&args.checkpoint)?;
        m.config_fingerprint = Some(ck.config.fingerprint());
        if let Some(p) = &args.schema {
            m.inputs.push(p.clone());
            ck.check_schema(&FeatureSchema::load(p)?)?;
        }
        let rows = generate_raw(&ck, args.n.unwrap_or(ck.train_rows), args.seed)?;
        rows.write_csv(&args.out)?;
        m.add_output(&args.out);
        Ok(rows)
    })
}

/// Draws `n` records from a checkpoint and maps them back to original units.
pub fn generate_raw(ck: &Checkpoint, n: usize, seed: u64) -> Result<RecordMatrix> {
    let norm = generate(&ck.generator, &ck.schema, n, seed)?;
    denormalize(&norm, &ck.schema)
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub real_train: PathBuf,
    pub real_test: PathBuf,
    pub syn_train: PathBuf,
    pub syn_test: PathBuf,
    pub schema: PathBuf,
    pub out: PathBuf,
    pub mia_cap: Option<usize>,
    pub seed: u64,
}

/// Normalizes the four raw CSVs with the schema's stats (fitted on the real
/// training split when absent) and writes the report and plot data.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvalReport> {
    let mut manifest = RunManifest::start(CommandKind::Evaluate, &args.out, args.seed);
    manifest.inputs = vec![
        args.real_train.clone(),
        args.real_test.clone(),
        args.syn_train.clone(),
        args.syn_test.clone(),
        args.schema.clone(),
    ];
    with_manifest(manifest, |m| {
        let schema = FeatureSchema::load(&args.schema)?;
        let load = |p: &Path| load_csv_with_schema(p, &schema);
        let (rt, re, st, se) = (
            load(&args.real_train)?,
            load(&args.real_test)?,
            load(&args.syn_train)?,
            load(&args.syn_test)?,
        );
        let opts = EvalOptions {
            seed: args.seed,
            mia_cap: args.mia_cap,
            ..EvalOptions::default()
        };
        let (report, files) = evaluate_raw(&rt, &re, &st, &se, &opts, &args.out)?;
        for f in files {
            m.add_output(f);
        }
        Ok(report)
    })
}

fn evaluate_raw(
    real_train: &RecordMatrix,
    real_test: &RecordMatrix,
    syn_train: &RecordMatrix,
    syn_test: &RecordMatrix,
    opts: &EvalOptions,
    out: &Path,
) -> Result<(EvalReport, Vec<PathBuf>)> {
    let schema = if real_train.schema.has_stats() {
        real_train.schema.clone()
    } else {
        fit_normalizer(real_train)?
    };
    let norm = |m: &RecordMatrix| normalize(m, &schema);
    let (rt, re, st, se) = (
        norm(real_train)?,
        norm(real_test)?,
        norm(syn_train)?,
        norm(syn_test)?,
    );
    let report = evaluate(&rt, &re, &st, &se, opts)?;
    let files = emit_report(&report, &rt, &st, out, opts.histogram_bins)?;
    Ok((report, files.all().iter().map(|p| p.to_path_buf()).collect()))
}

/// One acceptance check of the benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub measured: f64,
    pub bound: String,
    pub passed: bool,
}

impl Criterion {
    fn at_most(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            bound: format!("<= {bound}"),
            passed: measured <= bound,
        }
    }

    fn below(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            bound: format!("< {bound}"),
            passed: measured < bound,
        }
    }

    fn at_least(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            bound: format!(">= {bound}"),
            passed: measured >= bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkVerdict {
    pub seed: u64,
    pub rows: usize,
    pub iterations: usize,
    pub config_fingerprint: String,
    pub passed: bool,
    pub criteria: Vec<Criterion>,
}

impl BenchmarkVerdict {
    pub fn failures(&self) -> impl Iterator<Item = &Criterion> {
        self.criteria.iter().filter(|c| !c.passed)
    }
}

/// Checks a finished run against the benchmark thresholds.
pub fn judge(report: &EvalReport, state: &TrainState) -> Vec<Criterion> {
    let mut out = Vec::new();
    match &report.utility {
        Some(u) => {
            out.push(Criterion::at_most("utility.s2r_gap", u.s2r_gap(), UTILITY_GAP_BOUND));
            out.push(Criterion::at_most("utility.r2s_gap", u.r2s_gap(), UTILITY_GAP_BOUND));
        }
        None => out.push(Criterion {
            name: "utility".into(),
            measured: f64::NAN,
            bound: "label column present".into(),
            passed: false,
        }),
    }
    out.push(Criterion::below("fidelity.nmi", report.fidelity.nmi, NMI_BOUND));
    for f in &report.fidelity.apd_per_feature {
        out.push(Criterion::below(format!("fidelity.apd.{}", f.feature), f.value, MARGINAL_BOUND));
    }
    for f in &report.fidelity.awd_per_feature {
        out.push(Criterion::below(format!("fidelity.awd.{}", f.feature), f.value, MARGINAL_BOUND));
    }
    out.push(Criterion::at_most("privacy.mia_auc", report.privacy.auc, MIA_AUC_BOUND));
    let tail = &state.history[state.history.len().saturating_sub(REWARD_WINDOW)..];
    let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r.mean_reward), hi.max(r.mean_reward))
    });
    out.push(Criterion::at_least("training.reward_min", lo, REWARD_BAND.0));
    out.push(Criterion::at_most("training.reward_max", hi, REWARD_BAND.1));
    out
}

#[derive(Debug, Clone)]
pub struct BenchmarkArgs {
    pub seed: u64,
    pub out: PathBuf,
    /// TOML overrides layered over `bench-small`.
    pub config: Option<PathBuf>,
    /// Overrides the profile's iteration count.
    pub iterations: Option<usize>,
}

pub const VERDICT_FILE: &str = "verdict.json";

/// End-to-end run on the generated benchmark dataset with the `bench-small` profile.
///
/// Layout of `out`: `data.csv` and `schema_input.json` (raw benchmark data),
/// `train/` (training outputs), `synthetic_train.csv`, `synthetic_test.csv`,
/// `eval/` (report and plot data) and `verdict.json`.
pub fn cmd_benchmark(args: &BenchmarkArgs) -> Result<BenchmarkVerdict> {
    let cfg = resolve_config(
        args.config.as_deref(),
        Some("bench-small"),
        Some(args.seed),
        args.iterations,
    )?;
    let mut manifest = RunManifest::start(CommandKind::Benchmark, &args.out, args.seed);
    manifest.config_path = args.config.clone();
    manifest.config_fingerprint = Some(cfg.fingerprint());
    with_manifest(manifest, |m| {
        let out = &args.out;
        let (raw, schema) = make_benchmark_dataset(BENCHMARK_ROWS, args.seed)?;
        let data_path = out.join("data.csv");
        let schema_path = out.join("schema_input.json");
        raw.write_csv(&data_path)?;
        schema.save(&schema_path)?;
        m.add_output(&data_path);
        m.add_output(&schema_path);

        let train_dir = out.join("train");
        let (state, files) = train_on_raw(&raw, &cfg, &train_dir, false)?;
        files.into_iter().for_each(|f| m.add_output(f));
        let ck = Checkpoint::load(RunLayout::new(&train_dir).final_checkpoint())?;

        let real_train = load_csv_with_schema(train_dir.join(REAL_TRAIN_FILE), &ck.schema)?;
        let real_test = load_csv_with_schema(train_dir.join(REAL_TEST_FILE), &ck.schema)?;
        let syn_train = generate_raw(&ck, real_train.rows(), args.seed.wrapping_add(1))?;
        let syn_test = generate_raw(&ck, real_test.rows(), args.seed.wrapping_add(2))?;
        for (name, mtx) in [("synthetic_train.csv", &syn_train), ("synthetic_test.csv", &syn_test)] {
            let p = out.join(name);
            mtx.write_csv(&p)?;
            m.add_output(p);
        }

        let opts = EvalOptions {
            seed: args.seed,
            config_fingerprint: Some(cfg.fingerprint()),
            ..EvalOptions::default()
        };
        let (report, files) =
            evaluate_raw(&real_train, &real_test, &syn_train, &syn_test, &opts, &out.join("eval"))?;
        files.into_iter().for_each(|f| m.add_output(f));

        let criteria = judge(&report, &state);
        let verdict = BenchmarkVerdict {
            seed: args.seed,
            rows: BENCHMARK_ROWS,
            iterations: state.iteration,
            config_fingerprint: cfg.fingerprint(),
            passed: criteria.iter().all(|c| c.passed),
            criteria,
        };
        let vpath = out.join(VERDICT_FILE);
        fs::write(&vpath, serde_json::to_string_pretty(&verdict)?).map_err(|e| Error::io(&vpath, e))?;
        m.add_output(vpath);
        Ok(verdict)
    })
}
