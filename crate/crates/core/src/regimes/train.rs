use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use ssdn_engine::{Real, Tape};

use super::rotation::{rotate_batch, RotationLabel};
use super::Metrics;
use crate::error::{contract, Result};
use crate::model::Model;
use crate::nn::{cosine_lr, sgd_step, Group, SgdState};
use crate::shifts::{substream, ImageDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Stops early after this many steps.
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Weight of the rotation loss.
    pub lambda: f64,
    /// Whether `l_s` is computed at all. Off for plain supervised training.
    pub self_supervised: bool,
    /// Cosine decay of `lr` over the run.
    pub cosine: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            max_steps: None,
            batch_size: 32,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            lambda: 1.0,
            self_supervised: true,
            cosine: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(contract("train: batch_size must be positive"));
        }
        for (name, v) in [("lr", self.lr), ("momentum", self.momentum), ("weight_decay", self.weight_decay), ("lambda", self.lambda)] {
            if !v.is_finite() || v < 0.0 {
                return Err(contract(format!("train: {name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn total_steps(&self, samples: usize) -> usize {
        let per_epoch = samples.div_ceil(self.batch_size.max(1));
        let steps = self.epochs * per_epoch;
        self.max_steps.map_or(steps, |m| steps.min(m))
    }
}

fn error_count(logits: &ssdn_engine::Tensor<impl Real>, labels: &[usize]) -> usize {
    logits.argmax_rows().iter().zip(labels).filter(|(p, l)| p != l).count()
}

/// Minibatch SGD on `l_m + λ·l_s`. `l_m` sees the clean minibatch through
/// `forward_main`; `l_s` sees the same images, each rotated by a random
/// quarter turn, through `forward_ss`.
///
/// The returned errors are over the minibatches of the final epoch (or the
/// final `⌈n/batch⌉` steps).
pub fn joint_train<T: Real>(model: &mut Model<T>, data: &ImageDataset, cfg: &TrainConfig, seed: u64) -> Result<Metrics> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(contract("joint_train: empty dataset"));
    }
    let n = data.len();
    let total = cfg.total_steps(n);
    let per_epoch = n.div_ceil(cfg.batch_size);
    let window_start = total.saturating_sub(per_epoch);
    let mut order_rng = ChaCha8Rng::seed_from_u64(substream(seed, 1));
    let mut rot_rng = ChaCha8Rng::seed_from_u64(substream(seed, 2));
    let mut opt = SgdState::new(&model.registry, cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut order: Vec<usize> = (0..n).collect();
    let mut metrics = Metrics::default();
    let (mut main_wrong, mut ss_wrong, mut seen) = (0usize, 0usize, 0usize);

    for step in 0..total {
        let offset = (step % per_epoch) * cfg.batch_size;
        if offset == 0 {
            order.shuffle(&mut order_rng);
        }
        let idx = &order[offset..(offset + cfg.batch_size).min(n)];
        let labels = data.labels_at(idx);
        let x = data.batch::<T>(idx)?;

        let tape = Tape::new();
        let p = model.bind(&tape, |_, _| true);
        let xv = tape.constant(x.clone());
        let main = model.forward_main(&tape, &p, xv)?;
        let l_m = tape.softmax_cross_entropy(main.logits, &labels)?;
        let mut loss = l_m;
        let mut ss = None;
        if cfg.self_supervised {
            let rot: Vec<RotationLabel> =
                idx.iter().map(|_| RotationLabel::ALL[rot_rng.random_range(0..4)]).collect();
            let rot_labels: Vec<usize> = rot.iter().map(|r| r.index()).collect();
            let rv = tape.constant(rotate_batch(&x, &rot)?);
            let out = model.forward_ss(&tape, &p, rv)?;
            let l_s = tape.softmax_cross_entropy(out.rotation_logits, &rot_labels)?;
            loss = tape.add(l_m, tape.scale(l_s, cfg.lambda)?)?;
            ss = Some((l_s, out.rotation_logits, rot_labels));
        }

        let grads = tape.backward(loss)?;
        let pg = p.grads(&grads);
        if cfg.cosine {
            opt.lr = cosine_lr(cfg.lr, step, total);
        }
        sgd_step(&mut model.registry, &pg, &mut opt, &Group::ALL)?;

        metrics.main_losses.push(tape.value(l_m)?.item().to_f64_lossy());
        if let Some((l_s, _, _)) = &ss {
            metrics.ss_losses.push(tape.value(*l_s)?.item().to_f64_lossy());
        }
        if step >= window_start {
            main_wrong += error_count(&*tape.value(main.logits)?, &labels);
            if let Some((_, logits, rl)) = &ss {
                ss_wrong += error_count(&*tape.value(*logits)?, rl);
            }
            seen += idx.len();
        }
    }
    if seen > 0 {
        metrics.samples = seen;
        metrics.main_error_pct = 100.0 * main_wrong as f64 / seen as f64;
        metrics.ss_error_pct = if cfg.self_supervised { 100.0 * ss_wrong as f64 / seen as f64 } else { 0.0 };
    }
    Ok(metrics)
}
