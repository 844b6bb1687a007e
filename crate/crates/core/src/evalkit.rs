//! Cross-modal retrieval metrics: ranking, Recall@k and NDCG@k.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grouping::AggregationMode;
use crate::scalar::Scalar;
use crate::synthdata::{Dataset, MultifoldBatch};
use crate::tensorgrad::Tensor;
use crate::train::EncoderPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Image,
    Text,
}

/// Embedding rows with the instance id of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<S: Scalar> {
    pub features: Tensor<S>,
    pub ids: Vec<usize>,
    pub modality: Modality,
    pub aggregated: bool,
}

impl<S: Scalar> EmbeddingSet<S> {
    pub fn new(features: Tensor<S>, ids: Vec<usize>, modality: Modality, aggregated: bool) -> Result<Self> {
        if features.rows() != ids.len() {
            return Err(Error::dim(format!("{} rows but {} ids", features.rows(), ids.len())));
        }
        Ok(Self {
            features,
            ids,
            modality,
            aggregated,
        })
    }

    /// `agg-image`, `image`, `agg-text` or `text`.
    pub fn label(&self) -> String {
        let base = match self.modality {
            Modality::Image => "image",
            Modality::Text => "text",
        };
        if self.aggregated {
            format!("agg-{base}")
        } else {
            base.to_string()
        }
    }
}

/// Per query, gallery indices by descending cosine similarity; ties go to
/// the lower gallery index.
pub fn rank_gallery<S: Scalar>(queries: &EmbeddingSet<S>, gallery: &EmbeddingSet<S>) -> Result<Vec<Vec<usize>>> {
    if queries.features.cols() != gallery.features.cols() {
        return Err(Error::contract(format!(
            "query dim {} vs gallery dim {}",
            queries.features.cols(),
            gallery.features.cols()
        )));
    }
    let eps = S::lit(crate::tensorgrad::NORM_EPS);
    let q = queries.features.row_l2_normalize(eps);
    let g = gallery.features.row_l2_normalize(eps);
    let sims = q.matmul_t(&g)?;
    Ok((0..sims.rows())
        .map(|r| {
            let row = sims.row(r);
            let mut idx: Vec<usize> = (0..row.len()).collect();
            idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
            idx
        })
        .collect())
}

/// Percentage of queries with at least one same-instance item in the top
/// `k` (clamped to the gallery size).
pub fn recall_at_k(ranked: &[Vec<usize>], query_ids: &[usize], gallery_ids: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Evaluation("k must be at least 1".into()));
    }
    if ranked.len() != query_ids.len() {
        return Err(Error::Evaluation("one ranking per query required".into()));
    }
    if ranked.is_empty() {
        return Ok(0.0);
    }
    let hits = ranked
        .iter()
        .zip(query_ids)
        .filter(|(list, &q)| list.iter().take(k).any(|&g| gallery_ids[g] == q))
        .count();
    Ok(100.0 * hits as f64 / ranked.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ndcg {
    pub value: f64,
    /// Queries without any relevant gallery item, left out of the mean.
    pub skipped: usize,
}

/// Binary-relevance NDCG@k averaged over queries.
pub fn ndcg_at_k(ranked: &[Vec<usize>], query_ids: &[usize], gallery_ids: &[usize], k: usize) -> Result<Ndcg> {
    if k == 0 {
        return Err(Error::Evaluation("k must be at least 1".into()));
    }
    if ranked.len() != query_ids.len() {
        return Err(Error::Evaluation("one ranking per query required".into()));
    }
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let (mut total, mut counted, mut skipped) = (0.0, 0usize, 0usize);
    for (list, &q) in ranked.iter().zip(query_ids) {
        let relevant = gallery_ids.iter().filter(|&&g| g == q).count();
        if relevant == 0 {
            skipped += 1;
            continue;
        }
        let dcg: f64 = list
            .iter()
            .take(k)
            .enumerate()
            .filter(|(_, &g)| gallery_ids[g] == q)
            .map(|(i, _)| discount(i))
            .sum();
        let idcg: f64 = (0..relevant.min(k)).map(discount).sum();
        total += dcg / idcg;
        counted += 1;
    }
    let value = if counted == 0 { 0.0 } else { total / counted as f64 };
    Ok(Ndcg { value, skipped })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    /// E.g. `text->agg-image`.
    pub direction: String,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub ndcg5: f64,
    /// 1-based rank of the first correct item per query.
    pub first_hit: Vec<Option<usize>>,
    pub ndcg_skipped: usize,
}

pub fn retrieval_report<S: Scalar>(queries: &EmbeddingSet<S>, gallery: &EmbeddingSet<S>) -> Result<RetrievalReport> {
    let ranked = rank_gallery(queries, gallery)?;
    let (q, g) = (&queries.ids, &gallery.ids);
    let ndcg = ndcg_at_k(&ranked, q, g, 5)?;
    let first_hit = ranked
        .iter()
        .zip(q)
        .map(|(list, &id)| list.iter().position(|&j| g[j] == id).map(|p| p + 1))
        .collect();
    Ok(RetrievalReport {
        direction: format!("{}->{}", queries.label(), gallery.label()),
        r1: recall_at_k(&ranked, q, g, 1)?,
        r5: recall_at_k(&ranked, q, g, 5)?,
        r10: recall_at_k(&ranked, q, g, 10)?,
        ndcg5: ndcg.value,
        first_hit,
        ndcg_skipped: ndcg.skipped,
    })
}

/// Image and text embedding sets of the given instances under a mode.
pub fn embed_split<S: Scalar>(
    encoders: &EncoderPair<S>,
    dataset: &Dataset,
    ids: &[usize],
    mode: AggregationMode,
) -> Result<(EmbeddingSet<S>, EmbeddingSet<S>)> {
    let batch = MultifoldBatch::from_ids(dataset, ids)?;
    let (m, n) = (dataset.image_folds, dataset.text_folds);
    let mut img = encoders.embed_images(&batch.image_matrix())?;
    let mut txt = encoders.embed_texts(&batch.text_matrix())?;
    let eps = S::lit(crate::tensorgrad::NORM_EPS);
    if mode.aggregates_images() {
        img = img.group_mean_rows(m)?.row_l2_normalize(eps);
    }
    if mode.aggregates_texts() {
        txt = txt.group_mean_rows(n)?.row_l2_normalize(eps);
    }
    let (fm, fn_) = mode.effective_folds(m, n);
    let img_ids = ids.iter().flat_map(|&i| std::iter::repeat_n(i, fm)).collect();
    let txt_ids = ids.iter().flat_map(|&i| std::iter::repeat_n(i, fn_)).collect();
    Ok((
        EmbeddingSet::new(img, img_ids, Modality::Image, mode.aggregates_images())?,
        EmbeddingSet::new(txt, txt_ids, Modality::Text, mode.aggregates_texts())?,
    ))
}

/// Text→image and image→text reports, in that order.
pub fn evaluate<S: Scalar>(
    encoders: &EncoderPair<S>,
    dataset: &Dataset,
    ids: &[usize],
    mode: AggregationMode,
) -> Result<[RetrievalReport; 2]> {
    if encoders.image_dim() != dataset.image_dim || encoders.text_dim() != dataset.text_dim {
        return Err(Error::Incompatible(format!(
            "encoders expect dims ({}, {}), dataset has ({}, {})",
            encoders.image_dim(),
            encoders.text_dim(),
            dataset.image_dim,
            dataset.text_dim
        )));
    }
    let (img, txt) = embed_split(encoders, dataset, ids, mode)?;
    Ok([retrieval_report(&txt, &img)?, retrieval_report(&img, &txt)?])
}

/// `direction,metric,k,value` rows with 4-decimal values.
pub fn report_csv(reports: &[RetrievalReport]) -> String {
    let mut out = String::from("direction,metric,k,value\n");
    for r in reports {
        for (metric, k, v) in [
            ("recall", 1, r.r1),
            ("recall", 5, r.r5),
            ("recall", 10, r.r10),
            ("ndcg", 5, r.ndcg5),
        ] {
            let _ = writeln!(out, "{},{metric},{k},{v:.4}", r.direction);
        }
    }
    out
}
