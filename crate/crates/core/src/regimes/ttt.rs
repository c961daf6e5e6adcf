use serde::{Deserialize, Serialize};
use ssdn_engine::{Real, Tape, Tensor};

use super::rotation::make_rotation_batch;
use crate::error::{contract, Result};
use crate::model::Model;
use crate::nn::{sgd_step, Group, SgdState, Snapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TttMode {
    /// Every test sample starts from the trained parameters.
    Single,
    /// Updates carry over from one sample to the next.
    Online,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TttConfig {
    /// Inner steps K.
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub update_groups: Vec<Group>,
    pub mode: TttMode,
    /// Order of the Online test stream.
    pub stream_seed: u64,
}

impl Default for TttConfig {
    fn default() -> Self {
        TttConfig {
            steps: 16,
            lr: 0.001,
            momentum: 0.0,
            weight_decay: 0.0,
            update_groups: vec![Group::EncoderShared, Group::EncoderSs, Group::SsHead],
            mode: TttMode::Single,
            stream_seed: 0,
        }
    }
}

impl TttConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lr", self.lr), ("momentum", self.momentum), ("weight_decay", self.weight_decay)] {
            if !v.is_finite() || v < 0.0 {
                return Err(contract(format!("ttt: {name} must be finite and non-negative, got {v}")));
            }
        }
        if self.update_groups.contains(&Group::EncoderMainDerived) {
            return Err(contract("ttt: encoder_main_derived has no trainable parameters"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TttOutcome {
    pub prediction: usize,
    pub logits: Vec<f64>,
    /// `l_s` before each inner step, then after the last one (K+1 values).
    pub ss_losses: Vec<f64>,
}

fn rotation_loss<T: Real>(
    model: &Model<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    trainable: impl Fn(&str, Group) -> bool,
) -> Result<(Tape<T>, crate::nn::BoundParams, ssdn_engine::Var)> {
    let tape = Tape::new();
    let p = model.bind(&tape, trainable);
    let xv = tape.constant(batch.clone());
    let out = model.forward_ss(&tape, &p, xv)?;
    let loss = tape.softmax_cross_entropy(out.rotation_logits, labels)?;
    Ok((tape, p, loss))
}

/// Carries a model and its inner-loop optimizer across test samples.
#[derive(Debug, Clone)]
pub struct TttLearner<T: Real> {
    pub model: Model<T>,
    pub opt: SgdState<T>,
    pub cfg: TttConfig,
}

impl<T: Real> TttLearner<T> {
    pub fn new(model: Model<T>, cfg: TttConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = SgdState::new(&model.registry, cfg.lr, cfg.momentum, cfg.weight_decay);
        Ok(TttLearner { model, opt, cfg })
    }

    /// K steps on the rotation loss of `x` (`[C,H,W]` or `[1,C,H,W]`), then a
    /// main prediction with the updated parameters. Single mode restores the
    /// parameters and optimizer buffers afterwards.
    pub fn adapt(&mut self, x: &Tensor<T>) -> Result<TttOutcome> {
        let (rot, labels) = make_rotation_batch(x)?;
        let groups = self.cfg.update_groups.clone();
        let snapshot = match self.cfg.mode {
            TttMode::Single => Some(Snapshot::capture(&self.model.registry, Some(&self.opt), &groups)),
            TttMode::Online => None,
        };
        let mut ss_losses = Vec::with_capacity(self.cfg.steps + 1);
        for _ in 0..self.cfg.steps {
            // α^d is bound as a gradient leaf only to confirm no gradient reaches it.
            let (tape, p, loss) =
                rotation_loss(&self.model, &rot, &labels, |_, g| groups.contains(&g) || g == Group::BridgeData)?;
            ss_losses.push(tape.value(loss)?.item().to_f64_lossy());
            let pg = p.grads(&tape.backward(loss)?);
            for (name, param) in self.model.registry.iter() {
                if param.group == Group::BridgeData {
                    if let Some(g) = pg.get(name) {
                        if g.data().iter().any(|v| *v != T::zero()) {
                            return Err(contract(format!("rotation loss reached data bridge `{name}`")));
                        }
                    }
                }
            }
            sgd_step(&mut self.model.registry, &pg, &mut self.opt, &groups)?;
        }
        let (tape, _, loss) = rotation_loss(&self.model, &rot, &labels, |_, _| false)?;
        ss_losses.push(tape.value(loss)?.item().to_f64_lossy());

        let single = Tensor::new([1, rot.shape()[1], rot.shape()[2], rot.shape()[3]], x.data().to_vec())?;
        let logits = self.model.predict_logits(&single)?;
        let prediction = logits.argmax_rows()[0];
        if let Some(s) = snapshot {
            s.restore(&mut self.model.registry, Some(&mut self.opt))?;
        }
        Ok(TttOutcome { prediction, logits: logits.to_f64_vec(), ss_losses })
    }
}

/// Test-time training on one unlabeled sample with a fresh optimizer.
pub fn ttt_adapt<T: Real>(model: &mut Model<T>, x: &Tensor<T>, cfg: &TttConfig) -> Result<TttOutcome> {
    let mut learner = TttLearner::new(model.clone(), cfg.clone())?;
    let out = learner.adapt(x)?;
    if cfg.mode == TttMode::Online {
        *model = learner.model;
    }
    Ok(out)
}
