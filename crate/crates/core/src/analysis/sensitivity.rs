use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use ssdn_engine::{Real, Tape};

use super::cka::{linear_cka, ActivationMatrix};
use crate::error::{contract, Result};
use crate::model::{build_model, BlockId, BridgeConfig, Model};
use crate::nn::{sgd_step_where, ArchConfig, SgdState};
use crate::regimes::{joint_train, TrainConfig};
use crate::shifts::{substream, ImageDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityConfig {
    pub tune_steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Probe images used for CKA (the first this many).
    pub probe_size: usize,
    pub max_columns: usize,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig { tune_steps: 500, lr: 0.001, momentum: 0.9, batch_size: 32, probe_size: 256, max_columns: 4096 }
    }
}

/// Fixed, so every model probed at one block keeps the same features.
const COLUMN_SEED: u64 = 0x5eed;

fn probe_indices(probe: &ImageDataset, cfg: &SensitivityConfig) -> Result<Vec<usize>> {
    let n = probe.len().min(cfg.probe_size);
    if n < 2 {
        return Err(contract(format!("probe set needs at least 2 images, got {n}")));
    }
    Ok((0..n).collect())
}

/// Post-block main-path activations over the probe images.
pub fn block_activations<T: Real>(
    model: &Model<T>,
    probe: &ImageDataset,
    block: BlockId,
    cfg: &SensitivityConfig,
) -> Result<ActivationMatrix> {
    let idx = probe_indices(probe, cfg)?;
    let mut rows = Vec::new();
    let mut width = 0;
    for chunk in idx.chunks(64) {
        let tape = Tape::new();
        let p = model.bind(&tape, |_, _| false);
        let xv = tape.constant(probe.batch::<T>(chunk)?);
        let out = model.forward_main(&tape, &p, xv)?;
        let stage = out.encoded.stage(block).ok_or_else(|| contract(format!("model has no block `{block}`")))?;
        let value = tape.value_of(stage)?;
        width = value.numel() / chunk.len();
        rows.extend(value.to_f64_vec());
    }
    Ok(ActivationMatrix::new(idx.len(), width, &rows)?.subsample_columns(cfg.max_columns, COLUMN_SEED))
}

/// Copy of `reference` with only `block` fine-tuned on the main loss over
/// `shifted`; every other parameter stays frozen.
pub fn fine_tune_block<T: Real>(
    reference: &Model<T>,
    shifted: &ImageDataset,
    block: BlockId,
    cfg: &SensitivityConfig,
    seed: u64,
) -> Result<Model<T>> {
    let names: HashSet<String> = reference.stage_params(block)?.into_iter().collect();
    let mut model = reference.clone();
    if cfg.tune_steps == 0 {
        return Ok(model);
    }
    if shifted.is_empty() {
        return Err(contract("fine-tuning on an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, 3));
    let mut opt = SgdState::new(&model.registry, cfg.lr, cfg.momentum, 0.0);
    for _ in 0..cfg.tune_steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..shifted.len())).collect();
        let tape = Tape::new();
        let p = model.bind(&tape, |n, _| names.contains(n));
        let xv = tape.constant(shifted.batch::<T>(&idx)?);
        let logits = model.forward_main(&tape, &p, xv)?.logits;
        let loss = tape.softmax_cross_entropy(logits, &shifted.labels_at(&idx))?;
        let grads = p.grads(&tape.backward(loss)?);
        sgd_step_where(&mut model.registry, &grads, &mut opt, |n, _| names.contains(n))?;
    }
    Ok(model)
}

/// CKA between the reference and a block-tuned copy at that block's output.
pub fn block_sensitivity<T: Real>(
    reference: &Model<T>,
    shifted: &ImageDataset,
    block: BlockId,
    probe: &ImageDataset,
    cfg: &SensitivityConfig,
    seed: u64,
) -> Result<f64> {
    let tuned = fine_tune_block(reference, shifted, block, cfg, seed)?;
    linear_cka(&block_activations(reference, probe, block, cfg)?, &block_activations(&tuned, probe, block, cfg)?)
}

/// Pairwise per-block CKA between independently trained models.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlBand {
    pub scores: BTreeMap<String, Vec<f64>>,
}

impl ControlBand {
    pub fn min(&self, block: BlockId) -> Option<f64> {
        self.scores.get(&block.to_string()).map(|v| v.iter().copied().fold(f64::INFINITY, f64::min))
    }

    pub fn mean(&self, block: BlockId) -> Option<f64> {
        self.scores.get(&block.to_string()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Smallest score over every block.
    pub fn overall_min(&self) -> Option<f64> {
        self.scores.values().flatten().copied().reduce(f64::min)
    }
}

/// Control band from already-trained models of one architecture.
pub fn control_from_models<T: Real>(
    models: &[Model<T>],
    blocks: &[BlockId],
    probe: &ImageDataset,
    cfg: &SensitivityConfig,
) -> Result<ControlBand> {
    if models.len() < 2 {
        return Err(contract(format!("control band needs at least 2 models, got {}", models.len())));
    }
    let mut band = ControlBand::default();
    for &block in blocks {
        let acts: Vec<ActivationMatrix> =
            models.iter().map(|m| block_activations(m, probe, block, cfg)).collect::<Result<_>>()?;
        let entry = band.scores.entry(block.to_string()).or_default();
        for i in 0..acts.len() {
            for j in i + 1..acts.len() {
                entry.push(linear_cka(&acts[i], &acts[j])?);
            }
        }
    }
    Ok(band)
}

/// Trains one reference model per seed and measures their pairwise similarity.
#[allow(clippy::too_many_arguments)]
pub fn control_similarity<T: Real>(
    arch: &ArchConfig,
    bridge: &BridgeConfig,
    train: &ImageDataset,
    seeds: &[u64],
    train_cfg: &TrainConfig,
    blocks: &[BlockId],
    probe: &ImageDataset,
    cfg: &SensitivityConfig,
) -> Result<ControlBand> {
    if seeds.len() < 2 {
        return Err(contract(format!("control similarity needs at least 2 seeds, got {}", seeds.len())));
    }
    let mut models = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut m = build_model::<T>(arch, bridge, seed)?;
        joint_train(&mut m, train, train_cfg, seed)?;
        models.push(m);
    }
    control_from_models(&models, blocks, probe, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityScore {
    pub block: String,
    pub corruption: String,
    pub seed: u64,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub seeds: Vec<u64>,
    pub scores: Vec<SensitivityScore>,
    pub control: ControlBand,
}

impl SensitivityReport {
    /// Rows `block,corruption,seed,score`; control pairs use corruption
    /// `control` and seed 0.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["block", "corruption", "seed", "score"])?;
        for s in &self.scores {
            w.write_record([s.block.clone(), s.corruption.clone(), s.seed.to_string(), format!("{:.6}", s.score)])?;
        }
        for (block, scores) in &self.control.scores {
            for s in scores {
                w.write_record([block.clone(), "control".into(), "0".into(), format!("{s:.6}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
