use std::io::Cursor;

use mxmclr::synthdata::{generate, generate_with_truth, sample_batch, Dataset, GenConfig};
use mxmclr::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(seed: u64) -> GenConfig {
    GenConfig {
        instances: 5,
        image_folds: 2,
        text_folds: 3,
        image_dim: 4,
        text_dim: 3,
        latent_dim: 2,
        seed,
        ..GenConfig::default()
    }
}

fn to_string(d: &Dataset) -> String {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    d.save(&path).unwrap();
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn save_load_round_trip_and_byte_determinism() {
    let d = generate(&tiny(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    d.save(&path).unwrap();
    assert_eq!(Dataset::load(&path).unwrap(), d);
    assert_eq!(to_string(&d), to_string(&generate(&tiny(3)).unwrap()));
    assert_ne!(to_string(&d), to_string(&generate(&tiny(4)).unwrap()));
}

#[test]
fn vector_length_mismatch_names_its_line() {
    let text = to_string(&generate(&tiny(1)).unwrap());
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // Line 3 holds instance 1; drop one coordinate of its first image.
    let mut inst: serde_json::Value = serde_json::from_str(&lines[2]).unwrap();
    inst["images"][0].as_array_mut().unwrap().pop();
    lines[2] = inst.to_string();
    let err = Dataset::read(Cursor::new(lines.join("\n"))).unwrap_err();
    assert!(matches!(err, Error::Schema { line: Some(3), .. }), "{err}");
}

#[test]
fn malformed_record_is_a_parse_error_with_line() {
    let text = to_string(&generate(&tiny(1)).unwrap());
    let mut lines: Vec<&str> = text.lines().collect();
    lines[4] = "{not json";
    let err = Dataset::read(Cursor::new(lines.join("\n"))).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 5, .. }), "{err}");
}

#[test]
fn empty_instance_list_is_rejected() {
    let text = to_string(&generate(&tiny(1)).unwrap());
    let header = text
        .lines()
        .next()
        .unwrap()
        .replace("\"instances\":5", "\"instances\":0");
    let err = Dataset::read(Cursor::new(header)).unwrap_err();
    assert!(matches!(err, Error::Schema { .. }), "{err}");
}

#[allow(clippy::needless_range_loop)]
/// Least-squares latent estimate `(AᵀA)⁻¹Aᵀ(x − offset)`.
fn recover(map: &mxmclr::Tensor, x: &[f64], offset: &[f64]) -> Vec<f64> {
    let l = map.cols();
    let y: Vec<f64> = x.iter().zip(offset).map(|(a, b)| a - b).collect();
    let ata = map.t_matmul(map).unwrap();
    let mut aug: Vec<Vec<f64>> = (0..l)
        .map(|i| {
            let mut row: Vec<f64> = (0..l).map(|j| ata.get(i, j)).collect();
            row.push((0..map.rows()).map(|k| map.get(k, i) * y[k]).sum());
            row
        })
        .collect();
    for col in 0..l {
        let piv = (col..l)
            .max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs()))
            .unwrap();
        aug.swap(col, piv);
        for r in 0..l {
            if r != col {
                let f = aug[r][col] / aug[col][col];
                for c in col..=l {
                    aug[r][c] -= f * aug[col][c];
                }
            }
        }
    }
    (0..l).map(|i| aug[i][l] / aug[i][i]).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Without noise or confusable instances, every text observation's nearest
/// image observation, compared through the generator's modality maps,
/// belongs to the same instance.
#[test]
fn noiseless_nearest_neighbour_is_same_instance() {
    let cfg = GenConfig {
        instances: 100,
        noise: 0.0,
        confusable_fraction: 0.0,
        ..GenConfig::default()
    };
    let (d, truth) = generate_with_truth(&cfg).unwrap();
    let images: Vec<(usize, Vec<f64>)> = d
        .instances
        .iter()
        .flat_map(|inst| {
            inst.images
                .iter()
                .enumerate()
                .map(|(r, x)| (inst.id, recover(&truth.image_map, x, &truth.image_offsets[r])))
                .collect::<Vec<_>>()
        })
        .collect();
    for inst in &d.instances {
        for (c, t) in inst.texts.iter().enumerate() {
            let z = recover(&truth.text_map, t, &truth.text_offsets[c]);
            let best = images
                .iter()
                .max_by(|a, b| cosine(&z, &a.1).total_cmp(&cosine(&z, &b.1)))
                .unwrap();
            assert_eq!(best.0, inst.id);
        }
    }
}

#[test]
fn full_batch_is_a_permutation() {
    let d = generate(&tiny(2)).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let b = sample_batch(&d, 5, &mut r).unwrap();
    let mut ids = b.ids();
    ids.sort();
    assert_eq!(ids, vec![0, 1, 2, 3, 4]);
    assert!(matches!(sample_batch(&d, 6, &mut r), Err(Error::Sampling(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn round_trip_any_small_dataset(
        c in 2usize..6, m in 1usize..4, n in 1usize..4, seed in 0u64..1000, noise in 0.0f64..2.0,
    ) {
        let d = generate(&GenConfig { instances: c, image_folds: m, text_folds: n, noise, ..tiny(seed) }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        d.save(&path).unwrap();
        prop_assert_eq!(Dataset::load(&path).unwrap(), d);
    }
}
