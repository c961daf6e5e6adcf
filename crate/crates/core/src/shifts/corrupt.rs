use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::dataset::ImageDataset;
use super::substream;
use crate::error::{contract, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    GaussianBlur,
    Brightness,
    Contrast,
    Pixelate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 7] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::GaussianBlur,
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
        CorruptionKind::Pixelate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::GaussianBlur => "gaussian_blur",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Pixelate => "pixelate",
        }
    }

    /// Severity table, indexed by severity − 1. Noise and brightness are in
    /// units of the full [0,1] range.
    fn table(self) -> [f64; 5] {
        match self {
            CorruptionKind::GaussianNoise => [8.0, 13.0, 18.0, 26.0, 38.0].map(|v| v / 255.0),
            CorruptionKind::ShotNoise => [60.0, 25.0, 12.0, 5.0, 3.0],
            CorruptionKind::ImpulseNoise => [0.03, 0.06, 0.09, 0.17, 0.27],
            CorruptionKind::GaussianBlur => [0.4, 0.6, 0.9, 1.3, 1.8],
            CorruptionKind::Brightness => [0.1, 0.2, 0.3, 0.4, 0.5],
            CorruptionKind::Contrast => [0.75, 0.6, 0.45, 0.3, 0.2],
            CorruptionKind::Pixelate => [0.8, 0.65, 0.5, 0.4, 0.3],
        }
    }

    pub fn parameter(self, severity: u8) -> Result<f64> {
        if !(1..=5).contains(&severity) {
            return Err(contract(format!("corruption severity {severity} outside 1..=5")));
        }
        Ok(self.table()[usize::from(severity) - 1])
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| contract(format!("unknown corruption kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    #[serde(default)]
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self> {
        kind.parameter(severity)?;
        Ok(CorruptionSpec { kind, severity, seed })
    }

    /// `gaussian_noise-3` style label.
    pub fn label(&self) -> String {
        format!("{}-{}", self.kind, self.severity)
    }
}

fn to_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Corrupts one `[C,H,W]` image; randomness comes from `spec.seed` alone.
pub fn apply_corruption(image: &[u8], shape: [usize; 3], spec: &CorruptionSpec) -> Result<Vec<u8>> {
    apply_with_parameter(image, shape, spec.kind, spec.kind.parameter(spec.severity)?, spec.seed)
}

/// [`apply_corruption`] with an explicit table value instead of a severity.
pub fn apply_with_parameter(
    image: &[u8],
    shape: [usize; 3],
    kind: CorruptionKind,
    param: f64,
    seed: u64,
) -> Result<Vec<u8>> {
    let [c, h, w] = shape;
    if image.len() != c * h * w {
        return Err(contract(format!("corruption: {} bytes for image {shape:?}", image.len())));
    }
    let x: Vec<f64> = image.iter().map(|&p| f64::from(p) / 255.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out: Vec<f64> = match kind {
        CorruptionKind::GaussianNoise => {
            let noise = Normal::new(0.0, param).map_err(|e| contract(format!("gaussian_noise: {e}")))?;
            x.iter().map(|v| v + noise.sample(&mut rng)).collect()
        }
        CorruptionKind::ShotNoise => x
            .iter()
            .map(|&v| {
                let rate = v * param;
                if rate <= 0.0 {
                    0.0
                } else {
                    Poisson::new(rate).expect("positive rate").sample(&mut rng) / param
                }
            })
            .collect(),
        CorruptionKind::ImpulseNoise => x
            .iter()
            .map(|&v| {
                if rng.random_bool(param) {
                    if rng.random_bool(0.5) { 1.0 } else { 0.0 }
                } else {
                    v
                }
            })
            .collect(),
        CorruptionKind::GaussianBlur => blur(&x, shape, param),
        CorruptionKind::Brightness => x.iter().map(|v| v + param).collect(),
        CorruptionKind::Contrast => {
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            x.iter().map(|v| (v - mean) * param + mean).collect()
        }
        CorruptionKind::Pixelate => pixelate(&x, shape, param),
    };
    Ok(out.into_iter().map(to_byte).collect())
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

fn blur(x: &[f64], [c, h, w]: [usize; 3], sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let mut tmp = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let base = ch * h * w;
        for r in 0..h {
            for col in 0..w {
                tmp[base + r * w + col] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * x[base + r * w + reflect(col as isize + k as isize - radius, w)])
                    .sum();
            }
        }
        for r in 0..h {
            for col in 0..w {
                out[base + r * w + col] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * tmp[base + reflect(r as isize + k as isize - radius, h) * w + col])
                    .sum();
            }
        }
    }
    out
}

/// Nearest-neighbour down to `factor` of the size and back up.
fn pixelate(x: &[f64], [c, h, w]: [usize; 3], factor: f64) -> Vec<f64> {
    let sh = ((h as f64 * factor).round() as usize).max(1);
    let sw = ((w as f64 * factor).round() as usize).max(1);
    // Centre of small cell i in big coordinates, and the small cell covering big pixel j.
    let down = |i: usize, small: usize, big: usize| (((i as f64 + 0.5) * big as f64 / small as f64) as usize).min(big - 1);
    let up = |j: usize, small: usize, big: usize| (j * small / big).min(small - 1);
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let base = ch * h * w;
        for r in 0..h {
            let sr = down(up(r, sh, h), sh, h);
            for col in 0..w {
                let sc = down(up(col, sw, w), sw, w);
                out[base + r * w + col] = x[base + sr * w + sc];
            }
        }
    }
    out
}

/// Corrupts every image of `ds`; image `i` uses `substream(spec.seed, i)`.
pub fn corrupt_dataset(ds: &ImageDataset, spec: &CorruptionSpec) -> Result<ImageDataset> {
    let shape = ds.shape();
    let param = spec.kind.parameter(spec.severity)?;
    let out = ds.map_images(|i, img| apply_with_parameter(img, shape, spec.kind, param, substream(spec.seed, i as u64)))?;
    Ok(out.with_name(format!("{}+{}", ds.name(), spec.label())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_round_trip_and_unknown_fails() {
        for k in CorruptionKind::ALL {
            assert_eq!(k.as_str().parse::<CorruptionKind>().unwrap(), k);
        }
        assert!("fog".parse::<CorruptionKind>().is_err());
        assert!(CorruptionSpec::new(CorruptionKind::Contrast, 6, 0).is_err());
        assert!(CorruptionSpec::new(CorruptionKind::Contrast, 0, 0).is_err());
    }

    #[test]
    fn reflect_mirrors_without_edge_repeat() {
        let idx: Vec<usize> = (-3..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, [3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
    }

    #[test]
    fn blur_preserves_constant_images() {
        let img = vec![77u8; 3 * 8 * 8];
        for sev in 1..=5 {
            let out = apply_corruption(&img, [3, 8, 8], &CorruptionSpec::new(CorruptionKind::GaussianBlur, sev, 0).unwrap()).unwrap();
            assert_eq!(out, img);
        }
    }

    #[test]
    fn pixelate_factor_one_is_identity() {
        let img: Vec<u8> = (0..=255).collect();
        let out = apply_with_parameter(&img, [1, 16, 16], CorruptionKind::Pixelate, 1.0, 0).unwrap();
        assert_eq!(out, img);
        let half = apply_with_parameter(&img, [1, 16, 16], CorruptionKind::Pixelate, 0.5, 0).unwrap();
        // 2x2 cells share a value.
        assert_eq!(half[0], half[1]);
        assert_eq!(half[0], half[16]);
        assert_ne!(half[0], half[2]);
    }

    #[test]
    fn contrast_keeps_the_mean_level() {
        let img = vec![0u8, 100, 200, 100];
        let out = apply_corruption(&img, [1, 2, 2], &CorruptionSpec::new(CorruptionKind::Contrast, 5, 0).unwrap()).unwrap();
        assert_eq!(out, [80, 100, 120, 100]);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let spec = CorruptionSpec::new(CorruptionKind::Brightness, 1, 0).unwrap();
        assert!(apply_corruption(&[0; 5], [1, 2, 2], &spec).is_err());
    }
}
