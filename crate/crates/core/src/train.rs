//! Toy dual encoders, Adam with a cosine schedule, and the training loop.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit;
use crate::grouping::{aggregate_features, build_label_matrix, build_pair_layout, AggregationMode, LabelMatrix};
use crate::losses::{
    all_positive_loss, clip_group_info, hard_loss_sampled, infonce, infonce_mask, infonce_soft, mfh_loss,
    similarity_matrix, soft_loss, LossKind, LossValue, MfhConfig, SimilarityConfig, SimilarityMatrix,
};
use crate::scalar::Scalar;
use crate::synthdata::{Dataset, MultifoldBatch};
use crate::teacher::{TeacherConfig, TeacherPair};
use crate::tensorgrad::{Tape, Tensor, Var, NORM_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Width of the tanh hidden layer; 0 gives a single affine map.
    pub hidden: usize,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            embed_dim: 16,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::config("embed_dim must be at least 1"));
        }
        Ok(())
    }

    /// Parameter names and shapes, image encoder first.
    pub fn layout(&self, image_dim: usize, text_dim: usize) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        for (prefix, input) in [("image", image_dim), ("text", text_dim)] {
            if self.hidden == 0 {
                out.push((format!("{prefix}.w"), (input, self.embed_dim)));
                out.push((format!("{prefix}.b"), (1, self.embed_dim)));
            } else {
                out.push((format!("{prefix}.w1"), (input, self.hidden)));
                out.push((format!("{prefix}.b1"), (1, self.hidden)));
                out.push((format!("{prefix}.w2"), (self.hidden, self.embed_dim)));
                out.push((format!("{prefix}.b2"), (1, self.embed_dim)));
            }
        }
        out
    }
}

/// Named parameter tensors of the image and text encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPair<S: Scalar> {
    config: EncoderConfig,
    image_dim: usize,
    text_dim: usize,
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> EncoderPair<S> {
    /// Weights drawn as `N(0, 1/fan_in)`, biases zero.
    pub fn init(image_dim: usize, text_dim: usize, config: &EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (names, tensors) = config
            .layout(image_dim, text_dim)
            .into_iter()
            .map(|(name, (r, c))| {
                let t = if r == 1 {
                    Tensor::zeros(r, c)
                } else {
                    let scale = 1.0 / (r as f64).sqrt();
                    Tensor::from_fn(r, c, |_, _| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        S::lit(z * scale)
                    })
                };
                (name, t)
            })
            .unzip();
        Self {
            config: *config,
            image_dim,
            text_dim,
            names,
            tensors,
        }
    }

    /// Rebuilds encoders from named tensors, checking names and shapes.
    pub fn from_named(
        config: EncoderConfig,
        image_dim: usize,
        text_dim: usize,
        named: Vec<(String, Tensor<S>)>,
    ) -> Result<Self> {
        let layout = config.layout(image_dim, text_dim);
        if layout.len() != named.len() {
            return Err(Error::Incompatible(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                named.len()
            )));
        }
        for ((name, shape), (got, t)) in layout.iter().zip(&named) {
            if name != got || *shape != t.shape() {
                return Err(Error::Incompatible(format!(
                    "expected {name} {shape:?}, found {got} {:?}",
                    t.shape()
                )));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self {
            config,
            image_dim,
            text_dim,
            names,
            tensors,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn image_dim(&self) -> usize {
        self.image_dim
    }

    pub fn text_dim(&self) -> usize {
        self.text_dim
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// Parameters as differentiable leaves.
    pub fn leaves<'t>(&self, tape: &'t Tape<S>) -> EncoderVars<'t, S> {
        self.wrap(self.tensors.iter().map(|t| tape.leaf(t.clone())).collect())
    }

    /// Parameters as gradient-free constants.
    pub fn constants<'t>(&self, tape: &'t Tape<S>) -> EncoderVars<'t, S> {
        self.wrap(self.tensors.iter().map(|t| tape.constant(t.clone())).collect())
    }

    /// Wraps externally created nodes, in `names()` order.
    pub fn vars<'t>(&self, vars: &[Var<'t, S>]) -> Result<EncoderVars<'t, S>> {
        if vars.len() != self.tensors.len() || vars.iter().zip(&self.tensors).any(|(v, t)| v.shape() != t.shape()) {
            return Err(Error::contract("nodes do not match the encoder parameter layout"));
        }
        Ok(self.wrap(vars.to_vec()))
    }

    fn wrap<'t>(&self, vars: Vec<Var<'t, S>>) -> EncoderVars<'t, S> {
        let half = vars.len() / 2;
        let mut image = vars;
        let text = image.split_off(half);
        EncoderVars {
            image,
            text,
            image_dim: self.image_dim,
            text_dim: self.text_dim,
        }
    }

    /// Embeds raw observations without recording gradients.
    pub fn embed_images(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let tape = Tape::new();
        Ok(self.constants(&tape).encode_images(x)?.value())
    }

    pub fn embed_texts(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let tape = Tape::new();
        Ok(self.constants(&tape).encode_texts(x)?.value())
    }
}

/// Encoder parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct EncoderVars<'t, S: Scalar> {
    image: Vec<Var<'t, S>>,
    text: Vec<Var<'t, S>>,
    image_dim: usize,
    text_dim: usize,
}

impl<'t, S: Scalar> EncoderVars<'t, S> {
    pub fn all(&self) -> Vec<Var<'t, S>> {
        self.image.iter().chain(&self.text).copied().collect()
    }

    pub fn encode_images(&self, x: &Tensor<S>) -> Result<Var<'t, S>> {
        encode(&self.image, self.image_dim, x, "image")
    }

    pub fn encode_texts(&self, x: &Tensor<S>) -> Result<Var<'t, S>> {
        encode(&self.text, self.text_dim, x, "text")
    }
}

fn encode<'t, S: Scalar>(layers: &[Var<'t, S>], dim: usize, x: &Tensor<S>, what: &str) -> Result<Var<'t, S>> {
    if x.cols() != dim {
        return Err(Error::contract(format!(
            "{what} encoder expects {dim} features, got {}",
            x.cols()
        )));
    }
    let tape = layers[0].tape();
    let mut h = tape.constant(x.clone());
    let depth = layers.len() / 2;
    for (i, pair) in layers.chunks(2).enumerate() {
        h = h.matmul(&pair[0])?.add_row(&pair[1])?;
        if i + 1 < depth {
            h = h.tanh();
        }
    }
    Ok(h.row_l2_normalize(S::lit(NORM_EPS)))
}

/// Encodes a batch, applies the aggregation mode and builds the similarity
/// matrix with its labels. With `pair_layout` the rows and columns are the
/// one-to-one pairs used by the InfoNCE family.
pub fn forward_similarity<'t, S: Scalar>(
    vars: &EncoderVars<'t, S>,
    batch: &MultifoldBatch<'_>,
    mode: AggregationMode,
    pair_layout: bool,
    cfg: &SimilarityConfig,
) -> Result<(SimilarityMatrix<'t, S>, LabelMatrix)> {
    let mut img = vars.encode_images(&batch.image_matrix())?;
    let mut txt = vars.encode_texts(&batch.text_matrix())?;
    if mode.aggregates_images() {
        img = aggregate_features(img, batch.image_folds)?;
    }
    if mode.aggregates_texts() {
        txt = aggregate_features(txt, batch.text_folds)?;
    }
    let labels = if pair_layout {
        let layout = build_pair_layout(batch, mode);
        img = img.gather_rows(&layout.image_rows)?;
        txt = txt.gather_rows(&layout.text_rows)?;
        layout.labels
    } else {
        build_label_matrix(batch, mode)
    };
    Ok((similarity_matrix(img, txt, cfg)?, labels))
}

/// Evaluates the selected loss on a student (and, where needed, teacher)
/// similarity matrix.
pub fn compute_loss<'t, S: Scalar, R: rand::Rng + ?Sized>(
    kind: LossKind,
    mfh: &MfhConfig,
    student: &SimilarityMatrix<'t, S>,
    teacher: Option<&SimilarityMatrix<'t, S>>,
    labels: &LabelMatrix,
    rng: &mut R,
) -> Result<LossValue<'t, S>> {
    let teacher = || teacher.ok_or_else(|| Error::contract(format!("loss {kind} needs a teacher similarity matrix")));
    match kind {
        LossKind::Infonce => infonce(student, labels),
        LossKind::InfonceMask => infonce_mask(student, labels),
        LossKind::InfonceSoft => infonce_soft(student, teacher()?, labels, mfh.alpha),
        LossKind::Clipg => clip_group_info(student, labels, false),
        LossKind::ClipgMask => clip_group_info(student, labels, true),
        LossKind::All => all_positive_loss(student, labels),
        LossKind::Soft => soft_loss(student, teacher()?),
        LossKind::Hard => hard_loss_sampled(student, labels, mfh.repetitions, rng),
        LossKind::Mfh => mfh_loss(student, teacher()?, labels, mfh, rng),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    /// Peak learning rate of the cosine schedule.
    pub lr: f64,
    /// Final learning rate of the cosine schedule.
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradients before the moment updates.
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            lr_min: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-4,
            weight_decay: 0.01,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr_min >= 0.0
            && self.lr_min <= self.lr
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<S: Scalar> {
    pub config: OptimConfig,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
    step: u64,
}

impl<S: Scalar> OptimState<S> {
    pub fn new(config: OptimConfig, params: &[Tensor<S>]) -> Self {
        let zeros: Vec<_> = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update with coupled weight decay.
    pub fn step(&mut self, params: &mut [Tensor<S>], grads: &[Tensor<S>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::contract("parameter, gradient and moment counts differ"));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != p.shape() {
                return Err(Error::contract(format!("shape mismatch at parameter {i}")));
            }
            if let Some(bad) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in parameter {i} at entry {bad}"
                )));
            }
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let (one, wd, eps, lr) = (S::one(), S::lit(c.weight_decay), S::lit(c.eps), S::lit(lr));
        let t = self.step as i32;
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let entries = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((theta, &grad), (mi, vi)) in entries {
                let g = grad + wd * *theta;
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *theta -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total))`, clamped to `lr_min`
/// past the horizon.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> f64 {
    if step >= total_steps {
        return if total_steps == 0 { lr_max } else { lr_min };
    }
    let frac = step as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// The three independent random streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Batch shuffling.
    pub data: u64,
    /// Masked-random selection.
    pub selection: u64,
    /// Encoder initialization.
    pub init: u64,
}

impl Seeds {
    pub fn from_base(seed: u64) -> Self {
        Self {
            data: seed,
            selection: seed.wrapping_add(1),
            init: seed.wrapping_add(2),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Self::from_base(2022)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Instances per batch.
    pub batch_size: usize,
    pub loss: LossKind,
    pub mfh: MfhConfig,
    pub teacher: TeacherConfig,
    pub similarity: SimilarityConfig,
    pub mode: AggregationMode,
    pub encoder: EncoderConfig,
    pub optim: OptimConfig,
    pub seeds: Seeds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            loss: LossKind::Mfh,
            mfh: MfhConfig::default(),
            teacher: TeacherConfig::default(),
            similarity: SimilarityConfig::default(),
            mode: AggregationMode::None,
            encoder: EncoderConfig::default(),
            optim: OptimConfig::default(),
            seeds: Seeds::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.mfh.alpha) {
            return Err(Error::config(format!(
                "alpha must lie in [0, 1], got {}",
                self.mfh.alpha
            )));
        }
        self.teacher.validate()?;
        self.similarity.validate()?;
        self.encoder.validate()?;
        self.optim.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean total loss over the epoch's batches.
    pub loss: f64,
    /// Mean hard part (the whole loss for losses without a soft part).
    pub hard: f64,
    /// Mean soft part (zero for losses without one).
    pub soft: f64,
    /// Text→image R@1 on the validation split after the epoch.
    pub val_r1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Abort {
    pub epoch: usize,
    pub step: usize,
    pub reason: String,
}

/// Result of a run. On abort the parameters are those of the last
/// completed epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome<S: Scalar> {
    pub student: EncoderPair<S>,
    pub teacher: TeacherPair<S>,
    pub history: Vec<EpochRecord>,
    pub abort: Option<Abort>,
}

/// Splits shuffled ids into batches of `b`; a trailing single instance
/// joins the previous batch.
fn batches(ids: &[usize], b: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = ids.chunks(b).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|l| l.len() == 1) {
        let last = out.pop().unwrap_or_default();
        if let Some(prev) = out.last_mut() {
            prev.extend(last);
        }
    }
    out
}

fn split_terms(kind: LossKind, loss: &LossValue<'_, impl Scalar>) -> (f64, f64) {
    match (loss.term("hard"), loss.term("soft")) {
        (Some(h), Some(s)) => (h, s),
        _ if kind == LossKind::Soft => (0.0, loss.value()),
        _ => (loss.value(), 0.0),
    }
}

/// Trains student encoders on the training split and tracks the teacher.
pub fn train_run<S: Scalar>(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    let (train_ids, val_ids) = dataset.train_val_split();
    if train_ids.len() < 2 {
        return Err(Error::config("training split needs at least 2 instances"));
    }
    let mut student = EncoderPair::<S>::init(dataset.image_dim, dataset.text_dim, &cfg.encoder, cfg.seeds.init);
    let mut teacher = TeacherPair::init_from_student(&student);
    let mut opt = OptimState::new(cfg.optim, student.tensors());
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.data);
    let mut sel_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.selection);
    let per_epoch = batches(&train_ids, cfg.batch_size.min(train_ids.len())).len();
    let total_steps = per_epoch * cfg.epochs;
    let pair_layout = cfg.loss.uses_pair_layout();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut good = (student.clone(), teacher.clone());
    let mut step = 0;
    let mut order = train_ids.clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut data_rng);
        let (mut loss_sum, mut hard_sum, mut soft_sum) = (0.0, 0.0, 0.0);
        let chunks = batches(&order, cfg.batch_size.min(order.len()));
        for ids in &chunks {
            let batch = MultifoldBatch::from_ids(dataset, ids)?;
            let tape = Tape::new();
            let vars = student.leaves(&tape);
            let (sim, labels) = forward_similarity(&vars, &batch, cfg.mode, pair_layout, &cfg.similarity)?;
            let teacher_sim = if cfg.loss.needs_teacher() {
                let t = teacher.similarity(&batch, cfg.mode, pair_layout, &cfg.similarity)?;
                Some(SimilarityMatrix {
                    node: tape.constant(t),
                    temperature: cfg.similarity.temperature,
                })
            } else {
                None
            };
            let loss = compute_loss(cfg.loss, &cfg.mfh, &sim, teacher_sim.as_ref(), &labels, &mut sel_rng)?;
            let abort = |reason: String| TrainOutcome {
                student: good.0.clone(),
                teacher: good.1.clone(),
                history: history.clone(),
                abort: Some(Abort { epoch, step, reason }),
            };
            if !loss.value().is_finite() {
                return Ok(abort(format!("non-finite loss {} at step {step}", loss.value())));
            }
            tape.backward(loss.total)?;
            let grads: Vec<_> = vars.all().iter().map(Var::grad).collect();
            let lr = cosine_lr(step, total_steps, cfg.optim.lr, cfg.optim.lr_min);
            match opt.step(student.tensors_mut(), &grads, lr) {
                Ok(()) => {}
                Err(Error::Numeric(msg)) => return Ok(abort(msg)),
                Err(e) => return Err(e),
            }
            teacher.ema_update(&student, cfg.teacher.momentum)?;
            step += 1;
            let (h, s) = split_terms(cfg.loss, &loss);
            loss_sum += loss.value();
            hard_sum += h;
            soft_sum += s;
        }
        let n = chunks.len() as f64;
        let val_r1 = if val_ids.is_empty() {
            0.0
        } else {
            let [t2i, _] = evalkit::evaluate(&student, dataset, &val_ids, cfg.mode)?;
            t2i.r1
        };
        history.push(EpochRecord {
            epoch,
            loss: loss_sum / n,
            hard: hard_sum / n,
            soft: soft_sum / n,
            val_r1,
        });
        good = (student.clone(), teacher.clone());
    }
    Ok(TrainOutcome {
        student,
        teacher,
        history,
        abort: None,
    })
}

/// Writes the per-epoch history as CSV.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,hard,soft,val_r1\n");
    for r in history {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4}\n",
            r.epoch, r.loss, r.hard, r.soft, r.val_r1
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Self-describing record of student and teacher parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub image_dim: usize,
    pub text_dim: usize,
    pub image_folds: usize,
    pub text_folds: usize,
    pub config: TrainConfig,
    pub student: Vec<NamedTensor>,
    pub teacher: Vec<NamedTensor>,
    pub history: Vec<EpochRecord>,
    pub aborted: Option<String>,
}

const CHECKPOINT_FORMAT: &str = "mxmclr-checkpoint";

fn named<S: Scalar>(p: &EncoderPair<S>) -> Vec<NamedTensor> {
    p.names()
        .iter()
        .zip(p.tensors())
        .map(|(name, t)| NamedTensor {
            name: name.clone(),
            rows: t.rows(),
            cols: t.cols(),
            data: t.data().iter().map(|v| v.as_f64()).collect(),
        })
        .collect()
}

impl Checkpoint {
    pub fn from_outcome<S: Scalar>(dataset: &Dataset, cfg: &TrainConfig, outcome: &TrainOutcome<S>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            image_dim: dataset.image_dim,
            text_dim: dataset.text_dim,
            image_folds: dataset.image_folds,
            text_folds: dataset.text_folds,
            config: cfg.clone(),
            student: named(&outcome.student),
            teacher: named(&outcome.teacher.encoders),
            history: outcome.history.clone(),
            aborted: outcome.abort.as_ref().map(|a| a.reason.clone()),
        }
    }

    fn encoders<S: Scalar>(&self, tensors: &[NamedTensor]) -> Result<EncoderPair<S>> {
        let named = tensors
            .iter()
            .map(|t| {
                let data = t.data.iter().map(|&v| S::lit(v)).collect();
                Ok((t.name.clone(), Tensor::from_vec(t.rows, t.cols, data)?))
            })
            .collect::<Result<Vec<_>>>()?;
        EncoderPair::from_named(self.config.encoder, self.image_dim, self.text_dim, named)
    }

    pub fn student<S: Scalar>(&self) -> Result<EncoderPair<S>> {
        self.encoders(&self.student)
    }

    pub fn teacher<S: Scalar>(&self) -> Result<TeacherPair<S>> {
        Ok(TeacherPair {
            encoders: self.encoders(&self.teacher)?,
        })
    }

    /// Errors unless the checkpoint's input dimensions match the dataset.
    pub fn check_compatible(&self, dataset: &Dataset) -> Result<()> {
        if self.image_dim != dataset.image_dim || self.text_dim != dataset.text_dim {
            return Err(Error::Incompatible(format!(
                "checkpoint expects dims ({}, {}), dataset has ({}, {})",
                self.image_dim, self.text_dim, dataset.image_dim, dataset.text_dim
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self).map_err(|e| Error::Numeric(e.to_string()))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| Error::Schema {
            line: Some(e.line()),
            msg: e.to_string(),
        })?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != 1 {
            return Err(Error::Schema {
                line: None,
                msg: format!("unsupported checkpoint {} v{}", ck.format, ck.version),
            });
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests;
