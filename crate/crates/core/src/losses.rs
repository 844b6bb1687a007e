//! Similarity matrices and the contrastive loss family.
//!
//! Every loss consumes a temperature-scaled similarity matrix (rows are
//! images, columns are texts) plus the pairing structure, and averages an
//! image→text and a text→image term with weight 1/2 each. The text→image
//! term is the image→text kernel applied to the transposed matrix.
//!
//! Two kernels cover all variants:
//!
//! * `own_target_ce`: each target `(r, c)` is scored against its own entry
//!   plus the negatives of row `r`, i.e. `softplus(lse_neg(r) − s_rc)`.
//!   Other positives of the row never enter the denominator. Used by the
//!   InfoNCE, all-positives and masked-random hard losses.
//! * `restricted_softmax_ce`: the negative log-softmax of the target over an
//!   explicit allowed set of the row. Used by the fixed-diagonal group
//!   baselines, whose columns may carry several targets at once.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{draw_selections, Direction, LabelMatrix, Repetitions, SelectionMask};
use crate::scalar::Scalar;
use crate::tensorgrad::{Tensor, Var, MASK_FILL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimilarityConfig {
    pub temperature: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self { temperature: 0.03 }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature > 0.0 && self.temperature.is_finite() {
            Ok(())
        } else {
            Err(Error::config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )))
        }
    }
}

/// Temperature-scaled cosine similarities between two sets of unit rows.
#[derive(Debug, Clone, Copy)]
pub struct SimilarityMatrix<'t, S: Scalar> {
    pub node: Var<'t, S>,
    pub temperature: f64,
}

impl<'t, S: Scalar> SimilarityMatrix<'t, S> {
    pub fn shape(&self) -> (usize, usize) {
        self.node.shape()
    }

    pub fn value(&self) -> Tensor<S> {
        self.node.value()
    }
}

/// `entry(r, c) = ⟨a_r, b_c⟩ / τ`.
pub fn similarity_matrix<'t, S: Scalar>(
    a: Var<'t, S>,
    b: Var<'t, S>,
    cfg: &SimilarityConfig,
) -> Result<SimilarityMatrix<'t, S>> {
    cfg.validate()?;
    let (da, db) = (a.shape().1, b.shape().1);
    if da != db {
        return Err(Error::dim(format!("embedding dims differ: {da} vs {db}")));
    }
    let node = a.matmul(&b.transpose())?.scale(S::lit(1.0 / cfg.temperature));
    Ok(SimilarityMatrix {
        node,
        temperature: cfg.temperature,
    })
}

/// Loss node plus named scalar sub-terms.
#[derive(Debug, Clone)]
pub struct LossValue<'t, S: Scalar> {
    pub total: Var<'t, S>,
    pub terms: Vec<(&'static str, f64)>,
}

impl<'t, S: Scalar> LossValue<'t, S> {
    pub fn value(&self) -> f64 {
        self.total.item().as_f64()
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }
}

fn not(mask: &[bool]) -> Vec<bool> {
    mask.iter().map(|&m| !m).collect()
}

/// `Σ_rc W_rc · softplus(lse_{h ∈ neg(r)} s_rh − s_rc)`.
fn own_target_ce<'t, S: Scalar>(sim: Var<'t, S>, weights: &Tensor<S>, negatives: &[bool]) -> Result<Var<'t, S>> {
    let lse_neg = sim.masked_fill(&not(negatives), S::lit(MASK_FILL))?.logsumexp_rows();
    sim.neg().add_col(&lse_neg)?.softplus().weighted_sum(weights)
}

/// `−Σ_rc W_rc · log_softmax_{allowed(r)}(s_r)_c`.
fn restricted_softmax_ce<'t, S: Scalar>(sim: Var<'t, S>, weights: &Tensor<S>, allowed: &[bool]) -> Result<Var<'t, S>> {
    Ok(sim
        .masked_fill(&not(allowed), S::lit(MASK_FILL))?
        .log_softmax_rows()
        .weighted_sum(weights)?
        .neg())
}

fn transpose_mask(mask: &[bool], rows: usize, cols: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = mask[r * cols + c];
        }
    }
    out
}

fn check_shape<S: Scalar>(sim: &SimilarityMatrix<'_, S>, labels: &LabelMatrix) -> Result<()> {
    if sim.shape() != labels.shape() {
        return Err(Error::dim(format!(
            "similarity {:?} vs labels {:?}",
            sim.shape(),
            labels.shape()
        )));
    }
    Ok(())
}

/// Averages two directional sums with their normalizers.
fn symmetric<'t, S: Scalar>(i2t: Var<'t, S>, n_i2t: usize, t2i: Var<'t, S>, n_t2i: usize) -> Result<LossValue<'t, S>> {
    let i2t = i2t.scale(S::one() / S::from_count(n_i2t));
    let t2i = t2i.scale(S::one() / S::from_count(n_t2i));
    let total = i2t.add(&t2i)?.scale(S::lit(0.5));
    Ok(LossValue {
        total,
        terms: vec![("i2t", i2t.item().as_f64()), ("t2i", t2i.item().as_f64())],
    })
}

/// Both directions of `own_target_ce` with row-major weights and negative
/// flags given in image x text orientation.
fn own_target_both<'t, S: Scalar>(
    sim: &SimilarityMatrix<'t, S>,
    w_i2t: &Tensor<S>,
    n_i2t: usize,
    w_t2i: &Tensor<S>,
    n_t2i: usize,
    negatives: &[bool],
) -> Result<LossValue<'t, S>> {
    let (rows, cols) = sim.shape();
    let i2t = own_target_ce(sim.node, w_i2t, negatives)?;
    let t2i = own_target_ce(
        sim.node.transpose(),
        &w_t2i.transpose(),
        &transpose_mask(negatives, rows, cols),
    )?;
    symmetric(i2t, n_i2t, t2i, n_t2i)
}

fn require_square<S: Scalar>(sim: &SimilarityMatrix<'_, S>, labels: &LabelMatrix, what: &str) -> Result<()> {
    check_shape(sim, labels)?;
    let (r, c) = sim.shape();
    if r != c {
        return Err(Error::contract(format!(
            "{what} needs a square similarity matrix, got {r}x{c}"
        )));
    }
    if let Some(r) = (0..r).find(|&i| !labels.is_positive(i, i)) {
        return Err(Error::contract(format!(
            "{what}: diagonal entry {r} is not a positive pair"
        )));
    }
    Ok(())
}

/// Single-positive InfoNCE: the main diagonal is positive and every other
/// entry, including same-instance pairs, is a negative.
pub fn infonce<'t, S: Scalar>(sim: &SimilarityMatrix<'t, S>, labels: &LabelMatrix) -> Result<LossValue<'t, S>> {
    require_square(sim, labels, "infonce")?;
    let n = sim.shape().0;
    let negatives: Vec<bool> = (0..n * n).map(|i| i / n != i % n).collect();
    let eye = Tensor::identity(n);
    own_target_both(sim, &eye, n, &eye, n, &negatives)
}

/// InfoNCE with same-instance off-diagonal entries removed from every
/// denominator.
pub fn infonce_mask<'t, S: Scalar>(sim: &SimilarityMatrix<'t, S>, labels: &LabelMatrix) -> Result<LossValue<'t, S>> {
    require_square(sim, labels, "infonce-mask")?;
    let n = sim.shape().0;
    let negatives = not(&labels.positive_mask());
    let eye = Tensor::identity(n);
    own_target_both(sim, &eye, n, &eye, n, &negatives)
}

/// Fixed per-block diagonal: row `i` of a block pairs with column `i mod n`.
fn block_diagonal(labels: &LabelMatrix) -> Vec<bool> {
    let (rows, cols) = labels.shape();
    let mut diag = vec![false; rows * cols];
    for g in 0..labels.groups() {
        let gcols = labels.cols_of_group(g);
        for (i, &r) in labels.rows_of_group(g).iter().enumerate() {
            diag[r * cols + gcols[i % gcols.len()]] = true;
        }
    }
    diag
}

/// Group-wise CLIP baseline: positives fixed on the per-block diagonal.
/// Unmasked, the other block positives act as negatives; masked, they are
/// excluded from the denominators. Both directions are averaged over the
/// `b·m` diagonal pairs.
pub fn clip_group_info<'t, S: Scalar>(
    sim: &SimilarityMatrix<'t, S>,
    labels: &LabelMatrix,
    masked: bool,
) -> Result<LossValue<'t, S>> {
    check_shape(sim, labels)?;
    let (rows, cols) = sim.shape();
    let diag = block_diagonal(labels);
    let allowed: Vec<bool> = if masked {
        labels
            .positive_mask()
            .iter()
            .zip(&diag)
            .map(|(&pos, &d)| !pos || d)
            .collect()
    } else {
        vec![true; rows * cols]
    };
    let w = Tensor::from_raw(
        rows,
        cols,
        diag.iter().map(|&d| if d { S::one() } else { S::zero() }).collect(),
    );
    let pairs = diag.iter().filter(|&&d| d).count();
    let i2t = restricted_softmax_ce(sim.node, &w, &allowed)?;
    let t2i = restricted_softmax_ce(
        sim.node.transpose(),
        &w.transpose(),
        &transpose_mask(&allowed, rows, cols),
    )?;
    symmetric(i2t, pairs, t2i, pairs)
}

/// Every block positive is a target scored against itself plus the
/// negatives of its anchor; normalized by `b·m·n` per direction.
pub fn all_positive_loss<'t, S: Scalar>(
    sim: &SimilarityMatrix<'t, S>,
    labels: &LabelMatrix,
) -> Result<LossValue<'t, S>> {
    check_shape(sim, labels)?;
    let (rows, cols) = sim.shape();
    let pos = labels.positive_mask();
    let w = Tensor::from_raw(
        rows,
        cols,
        pos.iter().map(|&p| if p { S::one() } else { S::zero() }).collect(),
    );
    let n = labels.positive_count();
    own_target_both(sim, &w, n, &w, n, &not(&pos))
}

/// How often each entry was selected over a list of repetitions, in
/// image x text orientation.
fn selection_counts<S: Scalar>(
    labels: &LabelMatrix,
    masks: &[SelectionMask],
    direction: Direction,
) -> Result<Tensor<S>> {
    let (rows, cols) = labels.shape();
    let mut counts = Tensor::zeros(rows, cols);
    for mask in masks {
        if mask.direction() != direction {
            return Err(Error::contract(format!(
                "expected {direction:?} masks, got {:?}",
                mask.direction()
            )));
        }
        if mask.labels() != labels {
            return Err(Error::contract("selection mask built for a different label matrix"));
        }
        for (anchor, &partner) in mask.selected().iter().enumerate() {
            let (r, c) = match direction {
                Direction::ImageToText => (anchor, partner),
                Direction::TextToImage => (partner, anchor),
            };
            let v = counts.get(r, c);
            counts.set(r, c, v + S::one());
        }
    }
    Ok(counts)
}

/// Masked-random hard loss. Each repetition contributes, for every anchor,
/// the cross-entropy of its selected positive against that positive plus all
/// negatives of the anchor; unselected positives are excluded. Normalized by
/// `N = p·(number of anchors)` per direction.
pub fn hard_loss<'t, S: Scalar>(
    sim: &SimilarityMatrix<'t, S>,
    labels: &LabelMatrix,
    i2t_masks: &[SelectionMask],
    t2i_masks: &[SelectionMask],
) -> Result<LossValue<'t, S>> {
    check_shape(sim, labels)?;
    if i2t_masks.is_empty() || t2i_masks.is_empty() {
        return Err(Error::contract("hard loss needs at least one repetition per direction"));
    }
    let (rows, cols) = sim.shape();
    let w_i2t = selection_counts(labels, i2t_masks, Direction::ImageToText)?;
    let w_t2i = selection_counts(labels, t2i_masks, Direction::TextToImage)?;
    let negatives = not(&labels.positive_mask());
    own_target_both(
        sim,
        &w_i2t,
        i2t_masks.len() * rows,
        &w_t2i,
        t2i_masks.len() * cols,
        &negatives,
    )
}

/// Soft relationship loss: cross-entropy of the student's row (and column)
/// log-softmax against the teacher's softmax, averaged over rows (columns).
/// Only the teacher's values are read, so no gradient reaches it.
pub fn soft_loss<'t, S: Scalar>(
    student: &SimilarityMatrix<'t, S>,
    teacher: &SimilarityMatrix<'t, S>,
) -> Result<LossValue<'t, S>> {
    if student.shape() != teacher.shape() {
        return Err(Error::dim(format!(
            "student {:?} vs teacher {:?}",
            student.shape(),
            teacher.shape()
        )));
    }
    let (rows, cols) = student.shape();
    let t = teacher.value();
    let i2t = student.node.log_softmax_rows().weighted_sum(&t.softmax_rows())?.neg();
    let t2i = student
        .node
        .transpose()
        .log_softmax_rows()
        .weighted_sum(&t.transpose().softmax_rows())?
        .neg();
    symmetric(i2t, rows, t2i, cols)
}

/// `α·a + (1−α)·b`, keeping both parts' sub-terms under prefixes.
fn mix<'t, S: Scalar>(
    a: LossValue<'t, S>,
    a_name: &'static str,
    b: LossValue<'t, S>,
    b_name: &'static str,
    alpha: f64,
) -> Result<LossValue<'t, S>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let total = a.total.scale(S::lit(alpha)).add(&b.total.scale(S::lit(1.0 - alpha)))?;
    let terms = vec![(a_name, a.value()), (b_name, b.value())];
    Ok(LossValue { total, terms })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfhConfig {
    pub alpha: f64,
    pub repetitions: Repetitions,
}

impl Default for MfhConfig {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            repetitions: Repetitions::TenNcol,
        }
    }
}

/// Hard loss with freshly drawn selections: `p` image→text repetitions
/// followed by `p` text→image repetitions from the same stream.
pub fn hard_loss_sampled<'t, S: Scalar, R: Rng + ?Sized>(
    sim: &SimilarityMatrix<'t, S>,
    labels: &LabelMatrix,
    repetitions: Repetitions,
    rng: &mut R,
) -> Result<LossValue<'t, S>> {
    let p_i2t = repetitions.resolve(labels, Direction::ImageToText);
    let p_t2i = repetitions.resolve(labels, Direction::TextToImage);
    let i2t = draw_selections(labels, Direction::ImageToText, p_i2t, rng);
    let t2i = draw_selections(labels, Direction::TextToImage, p_t2i, rng);
    hard_loss(sim, labels, &i2t, &t2i)
}

/// `α·L_hard + (1−α)·L_soft`.
pub fn mfh_loss<'t, S: Scalar, R: Rng + ?Sized>(
    student: &SimilarityMatrix<'t, S>,
    teacher: &SimilarityMatrix<'t, S>,
    labels: &LabelMatrix,
    cfg: &MfhConfig,
    rng: &mut R,
) -> Result<LossValue<'t, S>> {
    let hard = hard_loss_sampled(student, labels, cfg.repetitions, rng)?;
    let soft = soft_loss(student, teacher)?;
    mix(hard, "hard", soft, "soft", cfg.alpha)
}

/// Same combination with explicit selections.
pub fn mfh_loss_with_masks<'t, S: Scalar>(
    student: &SimilarityMatrix<'t, S>,
    teacher: &SimilarityMatrix<'t, S>,
    labels: &LabelMatrix,
    i2t_masks: &[SelectionMask],
    t2i_masks: &[SelectionMask],
    alpha: f64,
) -> Result<LossValue<'t, S>> {
    let hard = hard_loss(student, labels, i2t_masks, t2i_masks)?;
    let soft = soft_loss(student, teacher)?;
    mix(hard, "hard", soft, "soft", alpha)
}

/// `α·L_InfoNCE + (1−α)·L_soft`.
pub fn infonce_soft<'t, S: Scalar>(
    student: &SimilarityMatrix<'t, S>,
    teacher: &SimilarityMatrix<'t, S>,
    labels: &LabelMatrix,
    alpha: f64,
) -> Result<LossValue<'t, S>> {
    let hard = infonce(student, labels)?;
    let soft = soft_loss(student, teacher)?;
    mix(hard, "hard", soft, "soft", alpha)
}

/// Loss selector shared by the trainer, the gradient checker and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Infonce,
    InfonceMask,
    InfonceSoft,
    Clipg,
    ClipgMask,
    All,
    Soft,
    Hard,
    Mfh,
}

impl LossKind {
    pub const ALL: [LossKind; 9] = [
        Self::Infonce,
        Self::InfonceMask,
        Self::InfonceSoft,
        Self::Clipg,
        Self::ClipgMask,
        Self::All,
        Self::Soft,
        Self::Hard,
        Self::Mfh,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Infonce => "infonce",
            Self::InfonceMask => "infonce-mask",
            Self::InfonceSoft => "infonce-soft",
            Self::Clipg => "clipg",
            Self::ClipgMask => "clipg-mask",
            Self::All => "all",
            Self::Soft => "soft",
            Self::Hard => "hard",
            Self::Mfh => "mfh",
        }
    }

    /// Trains on the one-to-one pair layout instead of the group matrix.
    pub fn uses_pair_layout(self) -> bool {
        matches!(self, Self::Infonce | Self::InfonceMask | Self::InfonceSoft)
    }

    pub fn needs_teacher(self) -> bool {
        matches!(self, Self::InfonceSoft | Self::Soft | Self::Mfh)
    }

    pub fn uses_selection(self) -> bool {
        matches!(self, Self::Hard | Self::Mfh)
    }

    /// Uses several positives per anchor from the group-wise pairing.
    pub fn is_multifold_aware(self) -> bool {
        matches!(self, Self::All | Self::Hard | Self::Mfh)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown loss {s:?}")))
    }
}
