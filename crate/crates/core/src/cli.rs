//! Command-line front end: `gen-data`, `train`, `eval`, `gradcheck` and
//! `compare`.
//!
//! Settings come from an optional TOML file (unknown keys rejected) and are
//! then overridden by flags. Exit codes: 0 success, 2 usage or
//! configuration error, 3 numeric abort, 4 I/O or compatibility error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit;
use crate::grouping::{AggregationMode, Repetitions};
use crate::losses::{LossKind, MfhConfig, SimilarityMatrix};
use crate::synthdata::{generate, Dataset, GenConfig, MultifoldBatch};
use crate::teacher::TeacherPair;
use crate::tensorgrad::{finite_diff_check, Tape};
use crate::train::{
    compute_loss, forward_similarity, history_csv, train_run, Checkpoint, EncoderConfig, EncoderPair, Seeds,
    TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Sampling(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_IO,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mxmclr",
    version,
    about = "Multifold cross-modal contrastive learning toolkit"
)]
pub struct Cli {
    /// TOML settings file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multifold dataset.
    GenData(GenArgs),
    /// Train dual encoders and write a checkpoint plus per-epoch history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Finite-difference check through encoders and a loss.
    Gradcheck(GradArgs),
    /// Train every registered loss variant under shared seeds.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of instances.
    #[arg(long)]
    pub instances: Option<usize>,
    /// Image folds per instance.
    #[arg(long)]
    pub m: Option<usize>,
    /// Text folds per instance.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Training options shared by `train` and `compare`.
#[derive(Debug, Args, Default)]
pub struct TrainOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Instances per batch.
    #[arg(long)]
    pub b: Option<usize>,
    #[arg(long)]
    pub mode: Option<AggregationMode>,
    /// Use only the first M image folds of each instance.
    #[arg(long)]
    pub m: Option<usize>,
    /// Use only the first N text folds of each instance.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Masked-random repetitions: N, ncol or 10ncol.
    #[arg(long)]
    pub p: Option<Repetitions>,
    #[command(flatten)]
    pub train: TrainOverrides,
    /// Checkpoint path; the history CSV goes next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Val,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<AggregationMode>,
    #[arg(long, value_enum, default_value = "val")]
    pub split: Split,
    /// Report CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradArgs {
    /// Loss to check; `all` runs every loss, one line each.
    #[arg(long, default_value = "all")]
    pub loss: String,
    #[arg(long, default_value_t = 2)]
    pub b: usize,
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long, default_value = "2")]
    pub p: Repetitions,
    #[arg(long, default_value_t = 0.6)]
    pub alpha: f64,
    #[arg(long, default_value = "none")]
    pub mode: AggregationMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Momentum of the teacher's single EMA step from the student towards an
    /// independent reference encoder (0 gives the reference, 1 a copy).
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Single seed, shorthand for `--seeds N`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub train: TrainOverrides,
    /// Record wall-clock seconds instead of `-`.
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Output and input locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub report: PathBuf,
    pub comparison: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "dataset.jsonl".into(),
            checkpoint: "checkpoint.json".into(),
            report: "report.csv".into(),
            comparison: "compare.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub seeds: Vec<u64>,
    pub timing: bool,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            timing: false,
        }
    }
}

/// Everything a command can be configured with.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: GenConfig,
    pub train: TrainConfig,
    pub compare: CompareConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(b) = self.b {
            cfg.batch_size = b;
        }
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        if let Some(lr) = self.lr {
            cfg.optim.lr = lr;
            cfg.optim.lr_min = cfg.optim.lr_min.min(lr);
        }
        if let Some(mu) = self.momentum {
            cfg.teacher.momentum = mu;
        }
    }

    fn restrict(&self, dataset: Dataset) -> Result<Dataset> {
        if self.m.is_none() && self.n.is_none() {
            return Ok(dataset);
        }
        dataset.with_folds(
            self.m.unwrap_or(dataset.image_folds),
            self.n.unwrap_or(dataset.text_folds),
        )
    }
}

/// Parses arguments and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(cfg, a),
        Command::Train(a) => cmd_train(cfg, a),
        Command::Eval(a) => cmd_eval(cfg, a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Compare(a) => cmd_compare(cfg, a),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn cmd_gen_data(mut cfg: RunConfig, a: &GenArgs) -> Result<i32> {
    let g = &mut cfg.data;
    if let Some(s) = a.seed {
        g.seed = s;
    }
    if let Some(c) = a.instances {
        g.instances = c;
    }
    if let Some(m) = a.m {
        g.image_folds = m;
    }
    if let Some(n) = a.n {
        g.text_folds = n;
    }
    if let Some(s) = a.noise {
        g.noise = s;
    }
    let out = a.out.clone().unwrap_or(cfg.paths.dataset);
    let dataset = generate(&cfg.data)?;
    dataset.save(&out)?;
    println!(
        "wrote {}: C={} m={} n={} image_dim={} text_dim={} seed={}",
        out.display(),
        dataset.len(),
        dataset.image_folds,
        dataset.text_folds,
        dataset.image_dim,
        dataset.text_dim,
        dataset.seed
    );
    Ok(EXIT_OK)
}

fn cmd_train(mut cfg: RunConfig, a: &TrainArgs) -> Result<i32> {
    let t = &mut cfg.train;
    if let Some(s) = a.seed {
        t.seeds = Seeds::from_base(s);
    }
    if let Some(loss) = a.loss {
        t.loss = loss;
    }
    if let Some(alpha) = a.alpha {
        t.mfh.alpha = alpha;
    }
    if let Some(p) = a.p {
        t.mfh.repetitions = p;
    }
    a.train.apply(t);
    t.validate()?;
    let data_path = a.data.clone().unwrap_or(cfg.paths.dataset);
    let dataset = a.train.restrict(Dataset::load(&data_path)?)?;
    let out = a.out.clone().unwrap_or(cfg.paths.checkpoint);
    let history_path = out.with_extension("history.csv");

    let outcome = train_run::<f64>(&dataset, &cfg.train)?;
    Checkpoint::from_outcome(&dataset, &cfg.train, &outcome).save(&out)?;
    let csv = history_csv(&outcome.history);
    write_file(&history_path, &csv)?;
    print!("{csv}");
    if let Some(abort) = &outcome.abort {
        eprintln!(
            "error: training aborted at epoch {} step {}: {}; checkpoint of the last completed epoch written to {}",
            abort.epoch,
            abort.step,
            abort.reason,
            out.display()
        );
        return Ok(EXIT_NUMERIC);
    }
    println!("wrote {} and {}", out.display(), history_path.display());
    Ok(EXIT_OK)
}

fn cmd_eval(cfg: RunConfig, a: &EvalArgs) -> Result<i32> {
    let ck_path = a.checkpoint.clone().unwrap_or(cfg.paths.checkpoint);
    let ck = Checkpoint::load(&ck_path)?;
    let data_path = a.data.clone().unwrap_or(cfg.paths.dataset);
    let mut dataset = Dataset::load(&data_path)?;
    if (dataset.image_folds, dataset.text_folds) != (ck.image_folds, ck.text_folds) {
        dataset = dataset
            .with_folds(ck.image_folds, ck.text_folds)
            .map_err(|e| Error::Incompatible(e.to_string()))?;
    }
    ck.check_compatible(&dataset)?;
    let student = ck.student::<f64>()?;
    let mode = a.mode.unwrap_or(ck.config.mode);
    let (train_ids, val_ids) = dataset.train_val_split();
    let ids = match a.split {
        Split::Train => train_ids,
        Split::Val => val_ids,
        Split::All => (0..dataset.len()).collect(),
    };
    let reports = evalkit::evaluate(&student, &dataset, &ids, mode)?;
    let csv = evalkit::report_csv(&reports);
    let out = a.out.clone().unwrap_or(cfg.paths.report);
    write_file(&out, &csv)?;
    print!("{csv}");
    Ok(EXIT_OK)
}

/// One line of gradient-check output.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckLine {
    pub loss: LossKind,
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Largest absolute gradient reaching teacher parameters (losses with
    /// a teacher only).
    pub teacher_grad: Option<f64>,
    pub passed: bool,
}

/// Sizes and settings of an end-to-end gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckSetup {
    pub b: usize,
    pub m: usize,
    pub n: usize,
    pub repetitions: Repetitions,
    pub alpha: f64,
    pub mode: AggregationMode,
    pub seed: u64,
    pub momentum: f64,
    pub step: f64,
    pub tol: f64,
}

impl Default for GradcheckSetup {
    fn default() -> Self {
        Self {
            b: 2,
            m: 2,
            n: 2,
            repetitions: Repetitions::Fixed(2),
            alpha: 0.6,
            mode: AggregationMode::None,
            seed: 0,
            momentum: 0.0,
            step: 1e-5,
            tol: 1e-4,
        }
    }
}

const GRADCHECK_ENCODER: EncoderConfig = EncoderConfig {
    hidden: 4,
    embed_dim: 3,
};

/// Finite-difference check of `loss` composed with freshly initialized
/// encoders on one `b`-instance batch, in f64.
pub fn gradcheck_loss(loss: LossKind, s: &GradcheckSetup) -> Result<GradcheckLine> {
    if s.b < 2 || s.b > 4 {
        return Err(Error::config(format!("gradcheck needs 2 <= b <= 4, got {}", s.b)));
    }
    let data = generate(&GenConfig {
        instances: s.b,
        image_folds: s.m,
        text_folds: s.n,
        image_dim: 5,
        text_dim: 4,
        latent_dim: 3,
        seed: s.seed,
        ..GenConfig::default()
    })?;
    let ids: Vec<usize> = (0..s.b).collect();
    let batch = MultifoldBatch::from_ids(&data, &ids)?;
    let student = EncoderPair::<f64>::init(5, 4, &GRADCHECK_ENCODER, s.seed);
    // Teacher: one EMA step from the student towards an independent
    // reference encoder, so that μ=0 yields the reference and μ=1 a copy.
    let mut teacher = TeacherPair::init_from_student(&student);
    let reference = EncoderPair::<f64>::init(5, 4, &GRADCHECK_ENCODER, s.seed.wrapping_add(1));
    teacher.ema_update(&reference, s.momentum)?;
    let mfh = MfhConfig {
        alpha: s.alpha,
        repetitions: s.repetitions,
    };
    let sim_cfg = Default::default();
    let pair = loss.uses_pair_layout();
    let teacher_sim = teacher.similarity(&batch, s.mode, pair, &sim_cfg)?;

    let report = finite_diff_check(
        |tape, vars| {
            let enc = student.vars(vars)?;
            let (sim, labels) = forward_similarity(&enc, &batch, s.mode, pair, &sim_cfg)?;
            let t = SimilarityMatrix {
                node: tape.constant(teacher_sim.clone()),
                temperature: sim.temperature,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            Ok(compute_loss(loss, &mfh, &sim, Some(&t), &labels, &mut rng)?.total)
        },
        student.tensors(),
        s.step,
        s.tol,
    )?;

    let teacher_grad = if loss.needs_teacher() {
        let tape = Tape::new();
        let enc = student.leaves(&tape);
        let tvars = teacher.encoders.leaves(&tape);
        let (sim, labels) = forward_similarity(&enc, &batch, s.mode, pair, &sim_cfg)?;
        let (t, _) = forward_similarity(&tvars, &batch, s.mode, pair, &sim_cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let l = compute_loss(loss, &mfh, &sim, Some(&t), &labels, &mut rng)?;
        tape.backward(l.total)?;
        Some(tvars.all().iter().map(|v| v.grad().max_abs()).fold(0.0, f64::max))
    } else {
        None
    };
    Ok(GradcheckLine {
        loss,
        max_rel_error: report.max_rel_error,
        coordinates: report.coordinates,
        teacher_grad,
        passed: report.passed && teacher_grad.is_none_or(|g| g == 0.0),
    })
}

fn cmd_gradcheck(a: &GradArgs) -> Result<i32> {
    let kinds: Vec<LossKind> = if a.loss == "all" {
        LossKind::ALL.to_vec()
    } else {
        vec![a.loss.parse()?]
    };
    let setup = GradcheckSetup {
        b: a.b,
        m: a.m,
        n: a.n,
        repetitions: a.p,
        alpha: a.alpha,
        mode: a.mode,
        seed: a.seed,
        momentum: a.momentum,
        ..GradcheckSetup::default()
    };
    let mut all_pass = true;
    for kind in kinds {
        let line = gradcheck_loss(kind, &setup)?;
        all_pass &= line.passed;
        let teacher = line
            .teacher_grad
            .map(|g| format!(" teacher_grad={g:e}"))
            .unwrap_or_default();
        println!(
            "{:<13} {} max_rel_error={:.3e} coords={}{teacher}",
            kind.as_str(),
            if line.passed { "PASS" } else { "FAIL" },
            line.max_rel_error,
            line.coordinates
        );
    }
    Ok(if all_pass { EXIT_OK } else { EXIT_NUMERIC })
}

/// A loss configuration trained by `compare`.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub loss: LossKind,
    pub repetitions: Repetitions,
}

/// Every variant `compare` trains, in output order.
pub fn variant_registry() -> Vec<Variant> {
    let plain = |loss: LossKind| Variant {
        name: loss.as_str().to_string(),
        loss,
        repetitions: Repetitions::default(),
    };
    let mut out: Vec<Variant> = [
        LossKind::Infonce,
        LossKind::InfonceMask,
        LossKind::InfonceSoft,
        LossKind::Clipg,
        LossKind::ClipgMask,
        LossKind::All,
        LossKind::Soft,
    ]
    .into_iter()
    .map(plain)
    .collect();
    for loss in [LossKind::Hard, LossKind::Mfh] {
        for repetitions in [Repetitions::Fixed(1), Repetitions::Ncol, Repetitions::TenNcol] {
            out.push(Variant {
                name: format!("{loss}({repetitions})"),
                loss,
                repetitions,
            });
        }
    }
    out
}

/// Final metrics of one (variant, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub variant: String,
    pub seed: u64,
    pub r1_t2i: f64,
    pub r1_i2t: f64,
    pub ndcg5: f64,
    pub epochs: usize,
    pub wall_seconds: f64,
    pub status: String,
}

/// Trains `variant` with `base` settings and the given seed and evaluates
/// on the validation split. Failures become rows with a status message.
pub fn run_variant(dataset: &Dataset, base: &TrainConfig, variant: &Variant, seed: u64) -> CompareRow {
    let start = Instant::now();
    let mut cfg = base.clone();
    cfg.loss = variant.loss;
    cfg.mfh.repetitions = variant.repetitions;
    cfg.seeds = Seeds::from_base(seed);
    let mut row = CompareRow {
        variant: variant.name.clone(),
        seed,
        r1_t2i: f64::NAN,
        r1_i2t: f64::NAN,
        ndcg5: f64::NAN,
        epochs: 0,
        wall_seconds: 0.0,
        status: "ok".into(),
    };
    let result = train_run::<f64>(dataset, &cfg).and_then(|out| {
        let (_, val) = dataset.train_val_split();
        let [t2i, i2t] = evalkit::evaluate(&out.student, dataset, &val, cfg.mode)?;
        Ok((out, t2i, i2t))
    });
    match result {
        Ok((out, t2i, i2t)) => {
            row.r1_t2i = t2i.r1;
            row.r1_i2t = i2t.r1;
            row.ndcg5 = t2i.ndcg5;
            row.epochs = out.history.len();
            if let Some(a) = out.abort {
                row.status = format!("aborted: {}", a.reason);
            }
        }
        Err(e) => row.status = format!("error: {e}"),
    }
    row.wall_seconds = start.elapsed().as_secs_f64();
    row
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    })
}

/// Median of each metric over the successful rows of one variant.
pub fn variant_median(rows: &[CompareRow], variant: &str) -> Option<CompareRow> {
    let ok: Vec<&CompareRow> = rows
        .iter()
        .filter(|r| r.variant == variant && r.status == "ok")
        .collect();
    let col = |f: fn(&CompareRow) -> f64| median(&mut ok.iter().map(|r| f(r)).collect::<Vec<_>>());
    Some(CompareRow {
        variant: variant.to_string(),
        seed: 0,
        r1_t2i: col(|r| r.r1_t2i)?,
        r1_i2t: col(|r| r.r1_i2t)?,
        ndcg5: col(|r| r.ndcg5)?,
        epochs: ok.iter().map(|r| r.epochs).max().unwrap_or(0),
        wall_seconds: col(|r| r.wall_seconds)?,
        status: format!("median of {}", ok.len()),
    })
}

fn fmt_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "-".into()
    }
}

/// `variant,seed,r1_t2i,r1_i2t,ndcg5,epochs,wall_seconds,status`, per-seed
/// rows first, then one `median` row per variant.
pub fn compare_csv(rows: &[CompareRow], variants: &[Variant], timing: bool) -> String {
    let mut out = String::from("variant,seed,r1_t2i,r1_i2t,ndcg5,epochs,wall_seconds,status\n");
    let wall = |r: &CompareRow| if timing { fmt_value(r.wall_seconds) } else { "-".into() };
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.variant,
            r.seed,
            fmt_value(r.r1_t2i),
            fmt_value(r.r1_i2t),
            fmt_value(r.ndcg5),
            r.epochs,
            wall(r),
            r.status.replace(',', ";")
        );
    }
    for v in variants {
        match variant_median(rows, &v.name) {
            Some(m) => {
                let _ = writeln!(
                    out,
                    "{},median,{},{},{},{},{},{}",
                    m.variant,
                    fmt_value(m.r1_t2i),
                    fmt_value(m.r1_i2t),
                    fmt_value(m.ndcg5),
                    m.epochs,
                    wall(&m),
                    m.status
                );
            }
            None => {
                let _ = writeln!(out, "{},median,-,-,-,0,-,no successful runs", v.name);
            }
        }
    }
    out
}

fn cmd_compare(mut cfg: RunConfig, a: &CompareArgs) -> Result<i32> {
    a.train.apply(&mut cfg.train);
    cfg.train.validate()?;
    let seeds = match (&a.seeds, a.seed) {
        (Some(s), _) => s.clone(),
        (None, Some(s)) => vec![s],
        (None, None) => cfg.compare.seeds.clone(),
    };
    if seeds.is_empty() {
        return Err(Error::config("compare needs at least one seed"));
    }
    let timing = a.timing || cfg.compare.timing;
    let data_path = a.data.clone().unwrap_or(cfg.paths.dataset.clone());
    let dataset = a.train.restrict(Dataset::load(&data_path)?)?;
    let variants = variant_registry();
    let mut rows = Vec::new();
    for v in &variants {
        for &seed in &seeds {
            let row = run_variant(&dataset, &cfg.train, v, seed);
            eprintln!(
                "{} seed {}: r1_t2i={} {}",
                row.variant,
                seed,
                fmt_value(row.r1_t2i),
                row.status
            );
            rows.push(row);
        }
    }
    let csv = compare_csv(&rows, &variants, timing);
    let out = a.out.clone().unwrap_or(cfg.paths.comparison);
    write_file(&out, &csv)?;
    print!("{csv}");
    Ok(EXIT_OK)
}
