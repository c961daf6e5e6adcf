//! Representation similarity (linear CKA), block sensitivity to shifts,
//! and clustering of the predicted bridge signals.

mod alphas;
mod cka;
mod sensitivity;

pub use alphas::{alpha_projection, collect_alphas, silhouette, AlphaRecord, ClusterReport};
pub use cka::{linear_cka, ActivationMatrix};
pub use sensitivity::{
    block_activations, block_sensitivity, control_from_models, control_similarity, fine_tune_block, ControlBand,
    SensitivityConfig, SensitivityReport, SensitivityScore,
};
