//! Multifold instance/batch model and a synthetic latent-factor generator.
//!
//! Every instance `k` owns a latent vector `z_k`. Image observation `r` is
//! `A_img·z_k + v_r + σ·ε` and text observation `c` is `A_txt·z_k + w_c + σ·ε`,
//! where the modality maps `A` and the per-fold offsets `v_r`, `w_c` are
//! shared by all instances. A fraction of instances are "confusable": their
//! latent is a small perturbation of another instance's latent.
//!
//! All randomness comes from one ChaCha8 stream (`rand_chacha::ChaCha8Rng`)
//! seeded with `GenConfig::seed`, with normals drawn by
//! `rand_distr::StandardNormal`, in this order: `A_img`, `A_txt`, image
//! offsets, text offsets, latents, confusable assignment, then per-instance
//! image and text noise.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorgrad::Tensor;

/// Per-entry standard deviation of the fold offsets `v_r`, `w_c`.
pub const FOLD_OFFSET_SCALE: f64 = 0.3;

/// Standard deviation of the latent perturbation for confusable instances.
pub const CONFUSABLE_PERTURBATION: f64 = 0.35;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: usize,
    pub images: Vec<Vec<f64>>,
    pub texts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub instances: usize,
    pub image_folds: usize,
    pub text_folds: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    pub latent_dim: usize,
    pub noise: f64,
    pub confusable_fraction: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            instances: 200,
            image_folds: 6,
            text_folds: 5,
            image_dim: 32,
            text_dim: 24,
            latent_dim: 8,
            noise: 0.5,
            confusable_fraction: 0.2,
            seed: 2022,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(m));
        if self.instances < 2 {
            return fail("instances must be at least 2");
        }
        if self.image_folds == 0 {
            return fail("image_folds (m) must be at least 1");
        }
        if self.text_folds == 0 {
            return fail("text_folds (n) must be at least 1");
        }
        if self.image_dim == 0 || self.text_dim == 0 {
            return fail("observation dimensions must be at least 1");
        }
        if self.latent_dim == 0 {
            return fail("latent_dim must be at least 1");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail("noise must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.confusable_fraction) {
            return fail("confusable_fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    pub image_dim: usize,
    pub text_dim: usize,
    pub image_folds: usize,
    pub text_folds: usize,
    pub seed: u64,
}

/// Ground truth behind a generated dataset, for verification only.
#[derive(Debug, Clone)]
pub struct LatentTruth {
    pub latents: Vec<Vec<f64>>,
    /// `image_dim x latent_dim`.
    pub image_map: Tensor<f64>,
    /// `text_dim x latent_dim`.
    pub text_map: Tensor<f64>,
    pub image_offsets: Vec<Vec<f64>>,
    pub text_offsets: Vec<Vec<f64>>,
    /// `(confusable instance, source instance)` pairs.
    pub confusable: Vec<(usize, usize)>,
}

fn normal_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn project(map: &Tensor<f64>, z: &[f64], offset: &[f64], noise: &[f64]) -> Vec<f64> {
    (0..map.rows())
        .map(|i| {
            let signal: f64 = map.row(i).iter().zip(z).map(|(a, b)| a * b).sum();
            signal + offset[i] + noise[i]
        })
        .collect()
}

pub fn generate(config: &GenConfig) -> Result<Dataset> {
    generate_with_truth(config).map(|(d, _)| d)
}

pub fn generate_with_truth(config: &GenConfig) -> Result<(Dataset, LatentTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let l = config.latent_dim;
    let map_scale = 1.0 / (l as f64).sqrt();

    let image_map = Tensor::from_raw(
        config.image_dim,
        l,
        normal_vec(&mut rng, config.image_dim * l, map_scale),
    );
    let text_map = Tensor::from_raw(config.text_dim, l, normal_vec(&mut rng, config.text_dim * l, map_scale));
    let image_offsets: Vec<_> = (0..config.image_folds)
        .map(|_| normal_vec(&mut rng, config.image_dim, FOLD_OFFSET_SCALE))
        .collect();
    let text_offsets: Vec<_> = (0..config.text_folds)
        .map(|_| normal_vec(&mut rng, config.text_dim, FOLD_OFFSET_SCALE))
        .collect();
    let mut latents: Vec<_> = (0..config.instances).map(|_| normal_vec(&mut rng, l, 1.0)).collect();

    let n_conf = ((config.confusable_fraction * config.instances as f64).floor() as usize).min(config.instances - 1);
    let mut order: Vec<usize> = (0..config.instances).collect();
    order.shuffle(&mut rng);
    let (conf_ids, sources) = order.split_at(n_conf);
    let mut confusable = Vec::with_capacity(n_conf);
    for &k in conf_ids {
        let src = sources[rng.random_range(0..sources.len())];
        let delta = normal_vec(&mut rng, l, CONFUSABLE_PERTURBATION);
        latents[k] = latents[src].iter().zip(&delta).map(|(a, d)| a + d).collect();
        confusable.push((k, src));
    }
    confusable.sort_unstable();

    let instances = latents
        .iter()
        .enumerate()
        .map(|(id, z)| {
            let images = image_offsets
                .iter()
                .map(|v| project(&image_map, z, v, &normal_vec(&mut rng, config.image_dim, config.noise)))
                .collect();
            let texts = text_offsets
                .iter()
                .map(|w| project(&text_map, z, w, &normal_vec(&mut rng, config.text_dim, config.noise)))
                .collect();
            Instance { id, images, texts }
        })
        .collect();

    let dataset = Dataset {
        instances,
        image_dim: config.image_dim,
        text_dim: config.text_dim,
        image_folds: config.image_folds,
        text_folds: config.text_folds,
        seed: config.seed,
    };
    let truth = LatentTruth {
        latents,
        image_map,
        text_map,
        image_offsets,
        text_offsets,
        confusable,
    };
    Ok((dataset, truth))
}

/// A mini-batch of `b` distinct instances with all their observations.
#[derive(Debug, Clone)]
pub struct MultifoldBatch<'a> {
    pub instances: Vec<&'a Instance>,
    pub image_folds: usize,
    pub text_folds: usize,
}

impl<'a> MultifoldBatch<'a> {
    pub fn from_ids(dataset: &'a Dataset, ids: &[usize]) -> Result<Self> {
        let mut seen = vec![false; dataset.len()];
        let mut instances = Vec::with_capacity(ids.len());
        for &id in ids {
            let inst = dataset
                .instances
                .get(id)
                .ok_or_else(|| Error::Sampling(format!("instance {id} not in dataset")))?;
            if std::mem::replace(&mut seen[id], true) {
                return Err(Error::Sampling(format!("instance {id} repeated in batch")));
            }
            instances.push(inst);
        }
        if instances.is_empty() {
            return Err(Error::Sampling("empty batch".into()));
        }
        Ok(Self {
            instances,
            image_folds: dataset.image_folds,
            text_folds: dataset.text_folds,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.instances.iter().map(|i| i.id).collect()
    }

    pub fn image_count(&self) -> usize {
        self.len() * self.image_folds
    }

    pub fn text_count(&self) -> usize {
        self.len() * self.text_folds
    }

    /// `(b·m) x D_img`, rows of one instance contiguous.
    pub fn image_matrix<S: Scalar>(&self) -> Tensor<S> {
        stack(self.instances.iter().flat_map(|i| i.images.iter()))
    }

    /// `(b·n) x D_txt`, rows of one instance contiguous.
    pub fn text_matrix<S: Scalar>(&self) -> Tensor<S> {
        stack(self.instances.iter().flat_map(|i| i.texts.iter()))
    }
}

fn stack<'v, S: Scalar>(rows: impl Iterator<Item = &'v Vec<f64>>) -> Tensor<S> {
    let mut data = Vec::new();
    let mut n = 0;
    let mut cols = 0;
    for row in rows {
        cols = row.len();
        data.extend(row.iter().map(|&v| S::lit(v)));
        n += 1;
    }
    Tensor::from_raw(n, cols, data)
}

/// Draws `b` distinct instances uniformly without replacement.
pub fn sample_batch<'a, R: Rng + ?Sized>(dataset: &'a Dataset, b: usize, rng: &mut R) -> Result<MultifoldBatch<'a>> {
    if b == 0 || b > dataset.len() {
        return Err(Error::Sampling(format!(
            "cannot draw {b} instances from a dataset of {}",
            dataset.len()
        )));
    }
    let ids = rand::seq::index::sample(rng, dataset.len(), b).into_vec();
    MultifoldBatch::from_ids(dataset, &ids)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    instances: usize,
    image_folds: usize,
    text_folds: usize,
    image_dim: usize,
    text_dim: usize,
    seed: u64,
}

const FORMAT_TAG: &str = "mxmclr-dataset";

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Checks ids, fold counts and dimensions. `line_of(i)` maps an
    /// instance index to the file line for error reporting.
    fn check(&self, line_of: impl Fn(usize) -> Option<usize>) -> Result<()> {
        let schema = |line: Option<usize>, msg: String| Err(Error::Schema { line, msg });
        if self.instances.len() < 2 {
            return schema(
                None,
                format!("dataset needs at least 2 instances, found {}", self.instances.len()),
            );
        }
        for (k, inst) in self.instances.iter().enumerate() {
            let line = line_of(k);
            if inst.id != k {
                return schema(line, format!("expected id {k}, found {}", inst.id));
            }
            if inst.images.len() != self.image_folds {
                return schema(
                    line,
                    format!("{} images, expected {}", inst.images.len(), self.image_folds),
                );
            }
            if inst.texts.len() != self.text_folds {
                return schema(
                    line,
                    format!("{} texts, expected {}", inst.texts.len(), self.text_folds),
                );
            }
            for (what, obs, dim) in [
                ("image", &inst.images, self.image_dim),
                ("text", &inst.texts, self.text_dim),
            ] {
                for (j, v) in obs.iter().enumerate() {
                    if v.len() != dim {
                        return schema(line, format!("{what} {j} has length {}, expected {dim}", v.len()));
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        return schema(line, format!("{what} {j} has a non-finite value"));
                    }
                }
            }
        }
        if self.image_folds == 0 || self.text_folds == 0 {
            return schema(None, "fold counts must be at least 1".into());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check(|_| None)
    }

    /// Writes the line-delimited JSON format: one header record, then one
    /// record per instance.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.validate()?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = Header {
            format: FORMAT_TAG.into(),
            version: 1,
            instances: self.len(),
            image_folds: self.image_folds,
            text_folds: self.text_folds,
            image_dim: self.image_dim,
            text_dim: self.text_dim,
            seed: self.seed,
        };
        let io = |e: std::io::Error| Error::io(path, e);
        serde_json::to_writer(&mut w, &header).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(io)?;
        for inst in &self.instances {
            serde_json::to_writer(&mut w, inst).map_err(|e| Error::io(path, e.into()))?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, first) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header record".into(),
        })?;
        let first = first.map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?;
        let header: Header = serde_json::from_str(&first).map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?;
        if header.format != FORMAT_TAG {
            return Err(Error::Schema {
                line: Some(1),
                msg: format!("unknown format tag {:?}", header.format),
            });
        }

        let mut instances = Vec::new();
        let mut line_numbers = Vec::new();
        for (line, text) in lines {
            let text = text.map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?;
            if text.trim().is_empty() {
                continue;
            }
            let inst: Instance = serde_json::from_str(&text).map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?;
            instances.push(inst);
            line_numbers.push(line);
        }
        let dataset = Dataset {
            instances,
            image_dim: header.image_dim,
            text_dim: header.text_dim,
            image_folds: header.image_folds,
            text_folds: header.text_folds,
            seed: header.seed,
        };
        dataset.check(|k| line_numbers.get(k).copied())?;
        if dataset.len() != header.instances {
            return Err(Error::Schema {
                line: Some(1),
                msg: format!(
                    "header announces {} instances, file has {}",
                    header.instances,
                    dataset.len()
                ),
            });
        }
        Ok(dataset)
    }

    /// Keeps the first `m` image folds and `n` text folds of every instance.
    pub fn with_folds(&self, m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 || m > self.image_folds || n > self.text_folds {
            return Err(Error::config(format!(
                "folds ({m}, {n}) must lie in 1..=({}, {})",
                self.image_folds, self.text_folds
            )));
        }
        let instances = self
            .instances
            .iter()
            .map(|i| Instance {
                id: i.id,
                images: i.images[..m].to_vec(),
                texts: i.texts[..n].to_vec(),
            })
            .collect();
        Ok(Self {
            instances,
            image_folds: m,
            text_folds: n,
            ..*self
        })
    }

    /// Splits off the last `ceil(C/10)` ids as validation (at least one
    /// instance on each side).
    pub fn train_val_split(&self) -> (Vec<usize>, Vec<usize>) {
        let c = self.len();
        let val = c.div_ceil(10).clamp(1, c.saturating_sub(1).max(1));
        let cut = c - val;
        ((0..cut).collect(), (cut..c).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig {
            instances: 6,
            image_folds: 2,
            text_folds: 3,
            image_dim: 5,
            text_dim: 4,
            latent_dim: 2,
            ..GenConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let other = generate(&GenConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn degenerate_single_fold_accepted() {
        let d = generate(&GenConfig {
            instances: 2,
            image_folds: 1,
            text_folds: 1,
            ..small()
        })
        .unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.instances[1].images.len(), 1);
    }

    #[test]
    fn invalid_configs_rejected() {
        for bad in [
            GenConfig {
                instances: 1,
                ..small()
            },
            GenConfig {
                image_folds: 0,
                ..small()
            },
            GenConfig {
                latent_dim: 0,
                ..small()
            },
            GenConfig { noise: -0.1, ..small() },
            GenConfig {
                confusable_fraction: 1.5,
                ..small()
            },
        ] {
            assert!(matches!(generate(&bad), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn confusable_instances_follow_their_source() {
        let cfg = GenConfig {
            instances: 20,
            confusable_fraction: 0.25,
            ..small()
        };
        let (_, truth) = generate_with_truth(&cfg).unwrap();
        assert_eq!(truth.confusable.len(), 5);
        for &(k, src) in &truth.confusable {
            assert_ne!(k, src);
            assert!(truth.confusable.iter().all(|&(c, _)| c != src));
        }
    }

    #[test]
    fn batches() {
        let d = generate(&small()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let full = sample_batch(&d, 6, &mut rng).unwrap();
        let mut ids = full.ids();
        ids.sort_unstable();
        assert_eq!(ids, (0..6).collect::<Vec<_>>());

        let one = sample_batch(&d, 1, &mut rng).unwrap();
        assert_eq!(one.image_matrix::<f64>().shape(), (2, 5));
        assert_eq!(one.text_matrix::<f64>().shape(), (3, 4));

        assert!(matches!(sample_batch(&d, 7, &mut rng), Err(Error::Sampling(_))));

        let seq = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5)
                .map(|_| sample_batch(&d, 3, &mut rng).unwrap().ids())
                .collect::<Vec<_>>()
        };
        assert_eq!(seq(9), seq(9));
    }

    #[test]
    fn batch_rows_are_contiguous_per_instance() {
        let d = generate(&small()).unwrap();
        let batch = MultifoldBatch::from_ids(&d, &[4, 1]).unwrap();
        let imgs = batch.image_matrix::<f64>();
        assert_eq!(imgs.row(0), d.instances[4].images[0].as_slice());
        assert_eq!(imgs.row(1), d.instances[4].images[1].as_slice());
        assert_eq!(imgs.row(2), d.instances[1].images[0].as_slice());
        assert!(MultifoldBatch::from_ids(&d, &[1, 1]).is_err());
    }

    #[test]
    fn split_holds_out_tail_ids() {
        let d = generate(&GenConfig {
            instances: 25,
            ..small()
        })
        .unwrap();
        let (train, val) = d.train_val_split();
        assert_eq!(val, vec![22, 23, 24]);
        assert_eq!(train.len(), 22);
    }
}
