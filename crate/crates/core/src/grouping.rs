//! Group-wise pairing of multifold observations and masked-random selection
//! of positive pairs.
//!
//! Rows of every pairing matrix index the image modality and columns the
//! text modality. An entry is positive exactly when its row and column
//! belong to the same instance; those entries form one contiguous block per
//! instance along the diagonal.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::synthdata::MultifoldBatch;
use crate::tensorgrad::{Var, NORM_EPS};

/// Which modality's multifold features are replaced by a per-instance mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationMode {
    #[default]
    None,
    AggText,
    AggImage,
    AggBoth,
}

impl AggregationMode {
    pub const ALL: [AggregationMode; 4] = [Self::None, Self::AggImage, Self::AggText, Self::AggBoth];

    pub fn aggregates_images(self) -> bool {
        matches!(self, Self::AggImage | Self::AggBoth)
    }

    pub fn aggregates_texts(self) -> bool {
        matches!(self, Self::AggText | Self::AggBoth)
    }

    /// Effective `(image folds, text folds)` after aggregation.
    pub fn effective_folds(self, m: usize, n: usize) -> (usize, usize) {
        (
            if self.aggregates_images() { 1 } else { m },
            if self.aggregates_texts() { 1 } else { n },
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::AggText => "agg-text",
            Self::AggImage => "agg-image",
            Self::AggBoth => "agg-both",
        }
    }
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown aggregation mode {s:?}")))
    }
}

#[derive(Debug, PartialEq, Eq)]
struct Layout {
    row_groups: Vec<usize>,
    col_groups: Vec<usize>,
    rows_of_group: Vec<Vec<usize>>,
    cols_of_group: Vec<Vec<usize>>,
}

/// Positive/negative structure of an image x text pairing matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    layout: Arc<Layout>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairLabel {
    Positive,
    Negative,
}

impl LabelMatrix {
    /// Builds the matrix from group ids per row and per column. Group ids
    /// must be `0..groups`.
    pub fn from_groups(row_groups: Vec<usize>, col_groups: Vec<usize>) -> Result<Self> {
        let groups = row_groups.iter().chain(&col_groups).max().map_or(0, |g| g + 1);
        let mut rows_of_group = vec![Vec::new(); groups];
        let mut cols_of_group = vec![Vec::new(); groups];
        for (r, &g) in row_groups.iter().enumerate() {
            rows_of_group[g].push(r);
        }
        for (c, &g) in col_groups.iter().enumerate() {
            cols_of_group[g].push(c);
        }
        if let Some(g) = (0..groups).find(|&g| rows_of_group[g].is_empty() || cols_of_group[g].is_empty()) {
            return Err(Error::contract(format!("group {g} lacks rows or columns")));
        }
        Ok(Self {
            layout: Arc::new(Layout {
                row_groups,
                col_groups,
                rows_of_group,
                cols_of_group,
            }),
        })
    }

    /// Contiguous blocks: `groups` instances with `row_fold` rows and
    /// `col_fold` columns each.
    pub fn blocks(groups: usize, row_fold: usize, col_fold: usize) -> Self {
        let rows = (0..groups * row_fold).map(|r| r / row_fold).collect();
        let cols = (0..groups * col_fold).map(|c| c / col_fold).collect();
        Self::from_groups(rows, cols).expect("non-empty blocks")
    }

    pub fn rows(&self) -> usize {
        self.layout.row_groups.len()
    }

    pub fn cols(&self) -> usize {
        self.layout.col_groups.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn groups(&self) -> usize {
        self.layout.rows_of_group.len()
    }

    pub fn group_of_row(&self, r: usize) -> usize {
        self.layout.row_groups[r]
    }

    pub fn group_of_col(&self, c: usize) -> usize {
        self.layout.col_groups[c]
    }

    pub fn rows_of_group(&self, g: usize) -> &[usize] {
        &self.layout.rows_of_group[g]
    }

    pub fn cols_of_group(&self, g: usize) -> &[usize] {
        &self.layout.cols_of_group[g]
    }

    #[inline]
    pub fn is_positive(&self, r: usize, c: usize) -> bool {
        self.layout.row_groups[r] == self.layout.col_groups[c]
    }

    pub fn entry(&self, r: usize, c: usize) -> PairLabel {
        if self.is_positive(r, c) {
            PairLabel::Positive
        } else {
            PairLabel::Negative
        }
    }

    pub fn positive_count(&self) -> usize {
        self.layout
            .rows_of_group
            .iter()
            .zip(&self.layout.cols_of_group)
            .map(|(r, c)| r.len() * c.len())
            .sum()
    }

    /// Row-major flags of positive entries.
    pub fn positive_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for r in 0..self.rows() {
            out.extend((0..self.cols()).map(|c| self.is_positive(r, c)));
        }
        out
    }

    /// Same structure with rows and columns swapped.
    pub fn transpose(&self) -> Self {
        Self {
            layout: Arc::new(Layout {
                row_groups: self.layout.col_groups.clone(),
                col_groups: self.layout.row_groups.clone(),
                rows_of_group: self.layout.cols_of_group.clone(),
                cols_of_group: self.layout.rows_of_group.clone(),
            }),
        }
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }
}

/// Group-wise pairing matrix of a batch: `(b·m) x (b·n)` without
/// aggregation, with the aggregated side collapsed to one row or column per
/// instance otherwise.
pub fn build_label_matrix(batch: &MultifoldBatch<'_>, mode: AggregationMode) -> LabelMatrix {
    let (m, n) = mode.effective_folds(batch.image_folds, batch.text_folds);
    LabelMatrix::blocks(batch.len(), m, n)
}

/// One-to-one pairing used by the single-fold baselines: each instance
/// contributes `max(m, n)` pairs, pair `q` joining image fold `q mod m` with
/// text fold `q mod n`. Several pairs of the same instance therefore share a
/// batch, and their cross entries are positives off the main diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairLayout {
    /// Row index into the (possibly aggregated) image feature matrix.
    pub image_rows: Vec<usize>,
    /// Row index into the (possibly aggregated) text feature matrix.
    pub text_rows: Vec<usize>,
    pub labels: LabelMatrix,
}

pub fn build_pair_layout(batch: &MultifoldBatch<'_>, mode: AggregationMode) -> PairLayout {
    let (m, n) = mode.effective_folds(batch.image_folds, batch.text_folds);
    let per = m.max(n);
    let mut image_rows = Vec::with_capacity(batch.len() * per);
    let mut text_rows = Vec::with_capacity(batch.len() * per);
    for k in 0..batch.len() {
        for q in 0..per {
            image_rows.push(k * m + q % m);
            text_rows.push(k * n + q % n);
        }
    }
    PairLayout {
        image_rows,
        text_rows,
        labels: LabelMatrix::blocks(batch.len(), per, per),
    }
}

/// Anchor axis of a contrastive direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Rows (images) are anchors; one text column is selected per row.
    ImageToText,
    /// Columns (texts) are anchors; one image row is selected per column.
    TextToImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskEntry {
    Selected,
    MaskedOut,
    Negative,
}

/// One repetition of masked-random positive selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMask {
    labels: LabelMatrix,
    direction: Direction,
    /// Per anchor (row or column), the selected index on the other axis.
    selected: Vec<usize>,
}

impl SelectionMask {
    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn labels(&self) -> &LabelMatrix {
        &self.labels
    }

    /// Selected partner of each anchor.
    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn entry(&self, r: usize, c: usize) -> MaskEntry {
        if !self.labels.is_positive(r, c) {
            return MaskEntry::Negative;
        }
        let hit = match self.direction {
            Direction::ImageToText => self.selected[r] == c,
            Direction::TextToImage => self.selected[c] == r,
        };
        if hit {
            MaskEntry::Selected
        } else {
            MaskEntry::MaskedOut
        }
    }

    pub fn count(&self, which: MaskEntry) -> usize {
        let (rows, cols) = self.labels.shape();
        (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .filter(|&(r, c)| self.entry(r, c) == which)
            .count()
    }
}

/// Repetition count `p` of the masked-random selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Repetitions {
    Fixed(usize),
    /// One repetition per column of a group block (`N_col`).
    Ncol,
    /// `10 · N_col`.
    #[default]
    TenNcol,
}

impl Repetitions {
    /// `N_col` counts the partner observations of one anchor: text folds for
    /// image anchors and image folds for text anchors.
    pub fn resolve(self, labels: &LabelMatrix, direction: Direction) -> usize {
        let ncol = || match direction {
            Direction::ImageToText => labels.cols_of_group(0).len(),
            Direction::TextToImage => labels.rows_of_group(0).len(),
        };
        match self {
            Self::Fixed(p) => p,
            Self::Ncol => ncol(),
            Self::TenNcol => 10 * ncol(),
        }
    }

    pub fn label(self) -> String {
        match self {
            Self::Fixed(p) => p.to_string(),
            Self::Ncol => "ncol".into(),
            Self::TenNcol => "10ncol".into(),
        }
    }
}

impl fmt::Display for Repetitions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl From<Repetitions> for String {
    fn from(r: Repetitions) -> String {
        r.label()
    }
}

impl TryFrom<String> for Repetitions {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for Repetitions {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ncol" => Ok(Self::Ncol),
            "10ncol" => Ok(Self::TenNcol),
            _ => match s.parse::<usize>() {
                Ok(p) if p >= 1 => Ok(Self::Fixed(p)),
                _ => Err(Error::config(format!(
                    "repetitions must be a positive integer, ncol or 10ncol, got {s:?}"
                ))),
            },
        }
    }
}

/// Draws one repetition: every anchor picks one positive partner of its own
/// group uniformly at random; the remaining positives of that anchor are
/// masked out. Anchors with a single positive consume no randomness.
pub fn masked_random_selection<R: Rng + ?Sized>(
    labels: &LabelMatrix,
    direction: Direction,
    rng: &mut R,
) -> SelectionMask {
    let anchors = match direction {
        Direction::ImageToText => labels.rows(),
        Direction::TextToImage => labels.cols(),
    };
    let selected = (0..anchors)
        .map(|a| {
            let partners = match direction {
                Direction::ImageToText => labels.cols_of_group(labels.group_of_row(a)),
                Direction::TextToImage => labels.rows_of_group(labels.group_of_col(a)),
            };
            if partners.len() == 1 {
                partners[0]
            } else {
                partners[rng.random_range(0..partners.len())]
            }
        })
        .collect();
    SelectionMask {
        labels: labels.clone(),
        direction,
        selected,
    }
}

/// `p` independent repetitions in stream order.
pub fn draw_selections<R: Rng + ?Sized>(
    labels: &LabelMatrix,
    direction: Direction,
    p: usize,
    rng: &mut R,
) -> Vec<SelectionMask> {
    (0..p)
        .map(|_| masked_random_selection(labels, direction, rng))
        .collect()
}

/// Rebuilds a mask from explicit choices; each choice must be a positive
/// partner of its anchor.
pub fn selection_from_choices(
    labels: &LabelMatrix,
    direction: Direction,
    selected: Vec<usize>,
) -> Result<SelectionMask> {
    let anchors = match direction {
        Direction::ImageToText => labels.rows(),
        Direction::TextToImage => labels.cols(),
    };
    if selected.len() != anchors {
        return Err(Error::contract(format!(
            "{} choices for {anchors} anchors",
            selected.len()
        )));
    }
    for (a, &s) in selected.iter().enumerate() {
        let ok = match direction {
            Direction::ImageToText => s < labels.cols() && labels.is_positive(a, s),
            Direction::TextToImage => s < labels.rows() && labels.is_positive(s, a),
        };
        if !ok {
            return Err(Error::contract(format!("choice {s} for anchor {a} is not a positive")));
        }
    }
    Ok(SelectionMask {
        labels: labels.clone(),
        direction,
        selected,
    })
}

/// Per-instance mean of `fold` contiguous rows, re-normalized to unit length.
/// With `fold == 1` the input is returned untouched.
pub fn aggregate_features<'t, S: Scalar>(features: Var<'t, S>, fold: usize) -> Result<Var<'t, S>> {
    if fold == 0 {
        return Err(Error::dim("aggregation fold must be at least 1"));
    }
    if fold == 1 {
        let (r, _) = features.shape();
        return if r == 0 {
            Err(Error::dim("no rows to aggregate"))
        } else {
            Ok(features)
        };
    }
    Ok(features.group_mean_rows(fold)?.row_l2_normalize(S::lit(NORM_EPS)))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::synthdata::{generate, GenConfig};
    use crate::tensorgrad::{Tape, Tensor};

    fn dataset(m: usize, n: usize) -> crate::synthdata::Dataset {
        generate(&GenConfig {
            instances: 4,
            image_folds: m,
            text_folds: n,
            image_dim: 3,
            text_dim: 3,
            latent_dim: 2,
            ..GenConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn label_matrix_shapes_per_mode() {
        let d = dataset(2, 3);
        let batch = MultifoldBatch::from_ids(&d, &[0, 1]).unwrap();
        let none = build_label_matrix(&batch, AggregationMode::None);
        assert_eq!(none.shape(), (4, 6));
        assert_eq!(none.positive_count(), 12);
        assert!(none.is_positive(1, 2) && !none.is_positive(1, 3) && none.is_positive(3, 5));

        let agg_img = build_label_matrix(&batch, AggregationMode::AggImage);
        assert_eq!(agg_img.shape(), (2, 6));
        assert_eq!(agg_img.positive_count(), 6);
        assert_eq!(build_label_matrix(&batch, AggregationMode::AggText).shape(), (4, 2));
        assert_eq!(build_label_matrix(&batch, AggregationMode::AggBoth).shape(), (2, 2));
    }

    #[test]
    fn single_fold_is_diagonal() {
        let d = dataset(1, 1);
        let batch = MultifoldBatch::from_ids(&d, &[0, 1, 2]).unwrap();
        let l = build_label_matrix(&batch, AggregationMode::None);
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(l.is_positive(r, c), r == c);
            }
        }
    }

    #[test]
    fn selection_counts_per_block() {
        let l = LabelMatrix::blocks(2, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = masked_random_selection(&l, Direction::ImageToText, &mut rng);
        assert_eq!(s.count(MaskEntry::Selected), 4);
        assert_eq!(s.count(MaskEntry::MaskedOut), 8);
        assert_eq!(s.count(MaskEntry::Negative), 12);

        let t = masked_random_selection(&l, Direction::TextToImage, &mut rng);
        assert_eq!(t.count(MaskEntry::Selected), 6);
        assert_eq!(t.count(MaskEntry::MaskedOut), 6);
        for c in 0..6 {
            let sel = (0..4).filter(|&r| t.entry(r, c) == MaskEntry::Selected).count();
            assert_eq!(sel, 1);
        }
    }

    #[test]
    fn single_column_blocks_select_deterministically() {
        let l = LabelMatrix::blocks(3, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = masked_random_selection(&l, Direction::ImageToText, &mut rng);
        assert_eq!(s.count(MaskEntry::MaskedOut), 0);
        assert_eq!(s.selected(), &[0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn selection_stream_reproducible() {
        let l = LabelMatrix::blocks(3, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = draw_selections(&l, Direction::ImageToText, 4, &mut rng);
        assert_ne!(a[0], a[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(a, draw_selections(&l, Direction::ImageToText, 4, &mut rng));
    }

    #[test]
    fn repetitions_resolve_by_direction() {
        let l = LabelMatrix::blocks(2, 6, 5);
        assert_eq!(Repetitions::Ncol.resolve(&l, Direction::ImageToText), 5);
        assert_eq!(Repetitions::TenNcol.resolve(&l, Direction::TextToImage), 60);
        assert_eq!(Repetitions::Fixed(3).resolve(&l, Direction::TextToImage), 3);
        assert_eq!("10ncol".parse::<Repetitions>().unwrap(), Repetitions::TenNcol);
        assert!("0".parse::<Repetitions>().is_err());
    }

    #[test]
    fn pair_layout_repeats_folds() {
        let d = dataset(3, 2);
        let batch = MultifoldBatch::from_ids(&d, &[2, 0]).unwrap();
        let p = build_pair_layout(&batch, AggregationMode::None);
        assert_eq!(p.image_rows, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(p.text_rows, vec![0, 1, 0, 2, 3, 2]);
        assert_eq!(p.labels.shape(), (6, 6));
    }

    #[test]
    fn aggregation_examples() {
        let tape = Tape::<f64>::new();
        let unit = tape.leaf(Tensor::from_rows(&[vec![0.6, 0.8], vec![1.0, 0.0]]).unwrap());
        assert_eq!(aggregate_features(unit, 1).unwrap().value(), unit.value());

        let same = tape.leaf(Tensor::from_rows(&[vec![0.6, 0.8], vec![0.6, 0.8]]).unwrap());
        let v = aggregate_features(same, 2).unwrap().value();
        assert!((v.get(0, 0) - 0.6).abs() < 1e-15 && (v.get(0, 1) - 0.8).abs() < 1e-15);

        let ortho = tape.leaf(Tensor::identity(2));
        let v = aggregate_features(ortho, 2).unwrap().value();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v.get(0, 0) - h).abs() < 1e-15 && (v.get(0, 1) - h).abs() < 1e-15);

        assert!(aggregate_features(tape.leaf(Tensor::zeros(3, 2)), 2).is_err());
    }
}
