use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use ssdn_engine::{Real, Tensor};

use super::rotation::make_rotation_batch;
use super::ttt::{TttConfig, TttLearner, TttMode};
use super::Metrics;
use crate::error::{contract, Error, Result};
use crate::model::{BridgeConfig, Model};
use crate::shifts::ImageDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    /// Main loss only, shared encoder.
    Standard,
    /// Main plus rotation loss, shared encoder.
    JointTraining,
    /// Joint training, then test-time training per sample.
    OriginalTtt,
    /// Bridged model, one forward pass at test time.
    SsdnOnePass,
    /// Bridged model with test-time training.
    SsdnPlusTtt,
}

impl RegimeKind {
    pub const ALL: [RegimeKind; 5] = [
        RegimeKind::Standard,
        RegimeKind::JointTraining,
        RegimeKind::OriginalTtt,
        RegimeKind::SsdnOnePass,
        RegimeKind::SsdnPlusTtt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegimeKind::Standard => "standard",
            RegimeKind::JointTraining => "joint_training",
            RegimeKind::OriginalTtt => "original_ttt",
            RegimeKind::SsdnOnePass => "ssdn_one_pass",
            RegimeKind::SsdnPlusTtt => "ssdn_plus_ttt",
        }
    }

    pub fn bridge(self) -> BridgeConfig {
        if self.is_bridged() { BridgeConfig::ssdn() } else { BridgeConfig::none() }
    }

    pub fn is_bridged(self) -> bool {
        matches!(self, RegimeKind::SsdnOnePass | RegimeKind::SsdnPlusTtt)
    }

    pub fn uses_ttt(self) -> bool {
        matches!(self, RegimeKind::OriginalTtt | RegimeKind::SsdnPlusTtt)
    }

    /// Whether training includes the rotation loss.
    pub fn self_supervised(self) -> bool {
        self != RegimeKind::Standard
    }

    /// Fails unless the model's bridges agree with the regime.
    pub fn check<T: Real>(self, model: &Model<T>) -> Result<()> {
        if self.is_bridged() != model.bridge.is_enabled() {
            return Err(contract(format!(
                "regime {self} needs a {} model, got bridges {}",
                if self.is_bridged() { "bridged" } else { "bridge-free" },
                model.bridge.flags_code()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegimeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegimeKind::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| contract(format!("unknown regime `{s}`")))
    }
}

/// Anything that labels test images.
pub trait Predictor {
    /// Main-task classes for `indices` of `data`, which arrive in this order.
    fn predict(&mut self, data: &ImageDataset, indices: &[usize]) -> Result<Vec<usize>>;
}

/// Frozen model, one batched forward pass.
pub struct OnePass<'a, T: Real>(pub &'a Model<T>);

impl<T: Real> Predictor for OnePass<'_, T> {
    fn predict(&mut self, data: &ImageDataset, indices: &[usize]) -> Result<Vec<usize>> {
        Ok(self.0.predict_logits(&data.batch::<T>(indices)?)?.argmax_rows())
    }
}

/// Test-time training, one sample at a time. Keeps each sample's final
/// rotation loss.
pub struct TttPredictor<T: Real> {
    pub learner: TttLearner<T>,
    pub final_ss_losses: Vec<f64>,
}

impl<T: Real> Predictor for TttPredictor<T> {
    fn predict(&mut self, data: &ImageDataset, indices: &[usize]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            let r = self.learner.adapt(&data.batch::<T>(&[i])?)?;
            self.final_ss_losses.push(*r.ss_losses.last().expect("at least one loss"));
            out.push(r.prediction);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Batch size of frozen forward passes.
    pub batch_size: usize,
    pub ttt: TttConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { batch_size: 100, ttt: TttConfig::default() }
    }
}

/// Percentage of `indices` the predictor gets wrong, visiting them in the
/// given order in chunks of `batch_size`.
pub fn error_percent(pred: &mut dyn Predictor, data: &ImageDataset, order: &[usize], batch_size: usize) -> Result<f64> {
    if order.is_empty() {
        return Err(contract("evaluation on an empty dataset"));
    }
    let mut wrong = 0;
    for chunk in order.chunks(batch_size.max(1)) {
        let labels = pred.predict(data, chunk)?;
        if labels.len() != chunk.len() {
            return Err(contract(format!("predictor returned {} labels for {} samples", labels.len(), chunk.len())));
        }
        wrong += labels.iter().zip(chunk).filter(|(&p, &i)| p != data.label(i)).count();
    }
    Ok(100.0 * wrong as f64 / order.len() as f64)
}

/// Rotation-prediction error of the frozen model over all four rotations
/// of every image.
pub fn rotation_error_percent<T: Real>(model: &Model<T>, data: &ImageDataset, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(contract("evaluation on an empty dataset"));
    }
    let [c, h, w] = data.shape();
    let per_chunk = (batch_size / 4).max(1);
    let mut wrong = 0;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(per_chunk) {
        let mut pixels = Vec::with_capacity(chunk.len() * 4 * c * h * w);
        for &i in chunk {
            let (b, _) = make_rotation_batch(&data.batch::<T>(&[i])?)?;
            pixels.extend_from_slice(b.data());
        }
        let x = Tensor::new([chunk.len() * 4, c, h, w], pixels)?;
        let tape = ssdn_engine::Tape::new();
        let p = model.bind(&tape, |_, _| false);
        let xv = tape.constant(x);
        let logits = tape.value_of(model.forward_ss(&tape, &p, xv)?.rotation_logits)?;
        wrong += logits.argmax_rows().iter().enumerate().filter(|&(k, &r)| r != k % 4).count();
    }
    Ok(100.0 * wrong as f64 / (4 * data.len()) as f64)
}

/// Order in which test samples are presented: dataset order, shuffled by
/// `stream_seed` in Online mode.
pub fn stream_order(n: usize, ttt: &TttConfig) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if ttt.mode == TttMode::Online {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(ttt.stream_seed));
    }
    order
}

/// Main and rotation error of `model` on `data` under `regime`.
pub fn evaluate<T: Real>(model: &Model<T>, data: &ImageDataset, regime: RegimeKind, cfg: &EvalConfig) -> Result<Metrics> {
    regime.check(model)?;
    let mut metrics = Metrics { samples: data.len(), ..Metrics::default() };
    if regime.uses_ttt() {
        let mut pred = TttPredictor { learner: TttLearner::new(model.clone(), cfg.ttt.clone())?, final_ss_losses: vec![] };
        let order = stream_order(data.len(), &cfg.ttt);
        metrics.main_error_pct = error_percent(&mut pred, data, &order, cfg.batch_size)?;
        metrics.ss_losses = pred.final_ss_losses;
    } else {
        let order: Vec<usize> = (0..data.len()).collect();
        metrics.main_error_pct = error_percent(&mut OnePass(model), data, &order, cfg.batch_size)?;
    }
    metrics.ss_error_pct = rotation_error_percent(model, data, cfg.batch_size)?;
    Ok(metrics)
}
