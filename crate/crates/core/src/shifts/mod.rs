//! Datasets and covariate-shift generators.

mod corrupt;
mod dataset;
mod formats;
mod synthetic;

pub use corrupt::{apply_corruption, apply_with_parameter, corrupt_dataset, CorruptionKind, CorruptionSpec};
pub use dataset::{normalize_pixel, ImageDataset};
pub use formats::{
    load_cifar10_binary, load_mnist_idx, parse_cifar_records, parse_mnist_idx, to_cifar_records, to_mnist_idx,
    write_cifar_records, CIFAR_RECORD, CIFAR_SHAPE,
};
pub use synthetic::{gen_synthetic, ShapeKind, SyntheticSpec};

/// Seed of the `index`-th independent stream derived from `seed`
/// (SplitMix64 finalizer over both words).
pub fn substream(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
