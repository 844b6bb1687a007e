//! Momentum teacher: an exponential moving average of the student encoders.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::AggregationMode;
use crate::losses::SimilarityConfig;
use crate::scalar::Scalar;
use crate::synthdata::MultifoldBatch;
use crate::tensorgrad::{Tape, Tensor};
use crate::train::{forward_similarity, EncoderPair};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    pub momentum: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self { momentum: 0.8 }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.momentum) {
            Ok(())
        } else {
            Err(Error::config(format!(
                "momentum must lie in [0, 1], got {}",
                self.momentum
            )))
        }
    }
}

/// EMA copy of a student's parameters, mirrored by name and shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherPair<S: Scalar> {
    pub encoders: EncoderPair<S>,
}

impl<S: Scalar> TeacherPair<S> {
    pub fn init_from_student(student: &EncoderPair<S>) -> Self {
        Self {
            encoders: student.clone(),
        }
    }

    /// `θ_m ← μ·θ_m + (1−μ)·θ` for every mirrored tensor.
    pub fn ema_update(&mut self, student: &EncoderPair<S>, momentum: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1], got {momentum}")));
        }
        if !self.encoders.same_layout(student) {
            return Err(Error::contract("teacher and student parameter layouts differ"));
        }
        let mu = S::lit(momentum);
        let keep = S::lit(1.0 - momentum);
        for (t, s) in self.encoders.tensors_mut().iter_mut().zip(student.tensors()) {
            for (a, &b) in t.data_mut().iter_mut().zip(s.data()) {
                *a = mu * *a + keep * b;
            }
        }
        Ok(())
    }

    /// Teacher similarity matrix for a batch, evaluated on a private tape so
    /// that no teacher node ever reaches a training graph.
    pub fn similarity(
        &self,
        batch: &MultifoldBatch<'_>,
        mode: AggregationMode,
        pair_layout: bool,
        cfg: &SimilarityConfig,
    ) -> Result<Tensor<S>> {
        let tape = Tape::new();
        let vars = self.encoders.constants(&tape);
        let (sim, _) = forward_similarity(&vars, batch, mode, pair_layout, cfg)?;
        Ok(sim.value())
    }
}
