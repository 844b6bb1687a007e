//! Literal scalar-loop re-implementations of the losses, used as oracles.
#![allow(dead_code, clippy::needless_range_loop)]

use mxmclr::grouping::{Direction, LabelMatrix, SelectionMask};
use mxmclr::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn neg_log_ratio(target: f64, denominator: &[f64]) -> f64 {
    let total: f64 = denominator.iter().map(|v| v.exp()).sum();
    -(target.exp() / total).ln()
}

/// Symmetric InfoNCE with only the main diagonal positive.
pub fn infonce(s: &Tensor) -> f64 {
    let n = s.rows();
    let mut i2t = 0.0;
    let mut t2i = 0.0;
    for k in 0..n {
        let row: Vec<f64> = (0..n).map(|c| s.get(k, c)).collect();
        let col: Vec<f64> = (0..n).map(|r| s.get(r, k)).collect();
        i2t += neg_log_ratio(s.get(k, k), &row);
        t2i += neg_log_ratio(s.get(k, k), &col);
    }
    (i2t / n as f64 + t2i / n as f64) / 2.0
}

/// InfoNCE whose denominators drop same-group off-diagonal entries.
pub fn infonce_mask(s: &Tensor, labels: &LabelMatrix) -> f64 {
    let n = s.rows();
    let mut i2t = 0.0;
    let mut t2i = 0.0;
    for k in 0..n {
        let mut row = vec![s.get(k, k)];
        let mut col = vec![s.get(k, k)];
        for j in 0..n {
            if !labels.is_positive(k, j) {
                row.push(s.get(k, j));
            }
            if !labels.is_positive(j, k) {
                col.push(s.get(j, k));
            }
        }
        i2t += neg_log_ratio(s.get(k, k), &row);
        t2i += neg_log_ratio(s.get(k, k), &col);
    }
    (i2t / n as f64 + t2i / n as f64) / 2.0
}

/// Hard loss summed over repetitions x, instances k and anchors r, each
/// term scored against its selected partner plus everything outside the
/// anchor's block.
pub fn hard(s: &Tensor, labels: &LabelMatrix, i2t: &[SelectionMask], t2i: &[SelectionMask]) -> f64 {
    let (rows, cols) = (s.rows(), s.cols());
    let mut sum_i2t = 0.0;
    for mask in i2t {
        assert_eq!(mask.direction(), Direction::ImageToText);
        for k in 0..labels.groups() {
            for &r in labels.rows_of_group(k) {
                let u = mask.selected()[r];
                let mut den = vec![s.get(r, u)];
                for h in 0..cols {
                    if labels.group_of_col(h) != k {
                        den.push(s.get(r, h));
                    }
                }
                sum_i2t += neg_log_ratio(s.get(r, u), &den);
            }
        }
    }
    let mut sum_t2i = 0.0;
    for mask in t2i {
        assert_eq!(mask.direction(), Direction::TextToImage);
        for k in 0..labels.groups() {
            for &c in labels.cols_of_group(k) {
                let u = mask.selected()[c];
                let mut den = vec![s.get(u, c)];
                for h in 0..rows {
                    if labels.group_of_row(h) != k {
                        den.push(s.get(h, c));
                    }
                }
                sum_t2i += neg_log_ratio(s.get(u, c), &den);
            }
        }
    }
    let n_i2t = (i2t.len() * rows) as f64;
    let n_t2i = (t2i.len() * cols) as f64;
    (sum_i2t / n_i2t + sum_t2i / n_t2i) / 2.0
}

/// Every block positive as a target against its anchor's negatives.
pub fn all_positive(s: &Tensor, labels: &LabelMatrix) -> f64 {
    let (rows, cols) = (s.rows(), s.cols());
    let (mut i2t, mut t2i, mut count) = (0.0, 0.0, 0.0);
    for r in 0..rows {
        for c in 0..cols {
            if !labels.is_positive(r, c) {
                continue;
            }
            count += 1.0;
            let mut row = vec![s.get(r, c)];
            row.extend((0..cols).filter(|&h| !labels.is_positive(r, h)).map(|h| s.get(r, h)));
            let mut col = vec![s.get(r, c)];
            col.extend((0..rows).filter(|&h| !labels.is_positive(h, c)).map(|h| s.get(h, c)));
            i2t += neg_log_ratio(s.get(r, c), &row);
            t2i += neg_log_ratio(s.get(r, c), &col);
        }
    }
    (i2t / count + t2i / count) / 2.0
}

/// Per-block diagonal baseline: row i of a block targets column i mod n.
pub fn clip_group(s: &Tensor, labels: &LabelMatrix, masked: bool) -> f64 {
    let (rows, cols) = (s.rows(), s.cols());
    let mut diag = vec![vec![false; cols]; rows];
    for k in 0..labels.groups() {
        let gc = labels.cols_of_group(k);
        for (i, &r) in labels.rows_of_group(k).iter().enumerate() {
            diag[r][gc[i % gc.len()]] = true;
        }
    }
    let allowed = |r: usize, c: usize| !masked || !labels.is_positive(r, c) || diag[r][c];
    let (mut i2t, mut t2i, mut count) = (0.0, 0.0, 0.0);
    for r in 0..rows {
        for c in 0..cols {
            if !diag[r][c] {
                continue;
            }
            count += 1.0;
            let row: Vec<f64> = (0..cols).filter(|&h| allowed(r, h)).map(|h| s.get(r, h)).collect();
            let col: Vec<f64> = (0..rows).filter(|&h| allowed(h, c)).map(|h| s.get(h, c)).collect();
            i2t += neg_log_ratio(s.get(r, c), &row);
            t2i += neg_log_ratio(s.get(r, c), &col);
        }
    }
    (i2t / count + t2i / count) / 2.0
}

/// Row-mean cross-entropy of student log-softmax against teacher softmax,
/// both directions.
pub fn soft(student: &Tensor, teacher: &Tensor) -> f64 {
    let (rows, cols) = (student.rows(), student.cols());
    let ce = |t: &[f64], s: &[f64]| {
        let tz: f64 = t.iter().map(|v| v.exp()).sum();
        let sz: f64 = s.iter().map(|v| v.exp()).sum();
        t.iter()
            .zip(s)
            .map(|(a, b)| -(a.exp() / tz) * (b.exp() / sz).ln())
            .sum::<f64>()
    };
    let mut i2t = 0.0;
    for r in 0..rows {
        let t: Vec<f64> = (0..cols).map(|c| teacher.get(r, c)).collect();
        let s: Vec<f64> = (0..cols).map(|c| student.get(r, c)).collect();
        i2t += ce(&t, &s);
    }
    let mut t2i = 0.0;
    for c in 0..cols {
        let t: Vec<f64> = (0..rows).map(|r| teacher.get(r, c)).collect();
        let s: Vec<f64> = (0..rows).map(|r| student.get(r, c)).collect();
        t2i += ce(&t, &s);
    }
    (i2t / rows as f64 + t2i / cols as f64) / 2.0
}
