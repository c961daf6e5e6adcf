//! Rotation self-supervision, joint training, test-time training and the
//! evaluation regimes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

mod eval;
mod rotation;
mod train;
mod ttt;

pub use eval::{
    error_percent, evaluate, rotation_error_percent, stream_order, EvalConfig, OnePass, Predictor, RegimeKind,
    TttPredictor,
};
pub use rotation::{make_rotation_batch, rotate_batch, rotate_image, RotationLabel};
pub use train::{joint_train, TrainConfig};
pub use ttt::{ttt_adapt, TttConfig, TttLearner, TttMode, TttOutcome};

/// Error rates in percent plus per-step loss curves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub main_error_pct: f64,
    pub ss_error_pct: f64,
    pub samples: usize,
    /// Main error per shift label.
    pub per_shift: BTreeMap<String, f64>,
    pub main_losses: Vec<f64>,
    pub ss_losses: Vec<f64>,
}
