use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::ImageDataset;
use super::substream;
use crate::error::{contract, Result};

/// Shape drawn for class `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Square,
    Cross,
    Disc,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Square, ShapeKind::Cross, ShapeKind::Disc, ShapeKind::Triangle];

    /// Whether pixel `(row, col)` of an `s×s` box belongs to the shape.
    fn covers(self, row: usize, col: usize, s: usize) -> bool {
        let c = (s as f64 - 1.0) / 2.0;
        let (dy, dx) = (row as f64 - c, col as f64 - c);
        match self {
            ShapeKind::Square => true,
            ShapeKind::Cross => {
                let half = (s as f64 / 3.0).max(1.0) / 2.0;
                dx.abs() < half || dy.abs() < half
            }
            ShapeKind::Disc => dx * dx + dy * dy <= (s as f64 / 2.0).powi(2),
            // Apex at the top, base on the last row.
            ShapeKind::Triangle => dx.abs() <= (row as f64 + 1.0) / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub image_side: usize,
    pub class_count: usize,
    pub samples_per_class: usize,
    pub channels: usize,
    /// Range of the top-row background level.
    pub top_level: [u8; 2],
    /// Range of the bottom-row background level.
    pub bottom_level: [u8; 2],
    /// Shape side range as a fraction of the image side.
    pub shape_fraction: [f64; 2],
    /// Amplitude of uniform per-pixel texture noise, in levels.
    pub texture: u8,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            image_side: 16,
            class_count: 4,
            samples_per_class: 500,
            channels: 3,
            top_level: [170, 230],
            bottom_level: [20, 80],
            shape_fraction: [0.3, 0.6],
            texture: 6,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 || self.class_count > ShapeKind::ALL.len() {
            return Err(contract(format!("synthetic: class_count must be 1..=4, got {}", self.class_count)));
        }
        if self.channels == 0 || self.image_side < 4 {
            return Err(contract("synthetic: need at least one channel and a side of 4"));
        }
        let [lo, hi] = self.shape_fraction;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(contract(format!("synthetic: shape_fraction {:?} must satisfy 0 < lo <= hi <= 1", self.shape_fraction)));
        }
        if self.top_level[0] > self.top_level[1] || self.bottom_level[0] > self.bottom_level[1] {
            return Err(contract("synthetic: level ranges must be ordered"));
        }
        Ok(())
    }

    fn shape_sides(&self) -> (usize, usize) {
        let side = self.image_side as f64;
        let lo = ((self.shape_fraction[0] * side).round() as usize).max(2);
        let hi = ((self.shape_fraction[1] * side).round() as usize).clamp(lo, self.image_side);
        (lo, hi)
    }
}

/// Bright-top, dark-bottom gradient (for the rotation task) plus one
/// class shape at a random offset, size and contrast. Labels cycle through
/// the classes, so the histogram is exactly uniform. Image `i` is drawn
/// from its own stream, `substream(seed, i)`.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<ImageDataset> {
    spec.validate()?;
    let n = spec.class_count * spec.samples_per_class;
    let side = spec.image_side;
    let per = spec.channels * side * side;
    let (smin, smax) = spec.shape_sides();
    let mut pixels = Vec::with_capacity(n * per);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % spec.class_count;
        let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, i as u64));
        let top = f64::from(rng.random_range(spec.top_level[0]..=spec.top_level[1]));
        let bottom = f64::from(rng.random_range(spec.bottom_level[0]..=spec.bottom_level[1]));
        let tint: Vec<f64> = (0..spec.channels).map(|_| rng.random_range(0.85..=1.15)).collect();
        let s = rng.random_range(smin..=smax);
        let (r0, c0) = (rng.random_range(0..=side - s), rng.random_range(0..=side - s));
        let delta = rng.random_range(70.0..=120.0);
        let background = |row: usize| top + (bottom - top) * row as f64 / (side - 1) as f64;
        // Darker than a bright surround, brighter than a dark one.
        let sign = if background(r0 + s / 2) > 128.0 { -1.0 } else { 1.0 };
        let shape = ShapeKind::ALL[label];
        let amp = i32::from(spec.texture);
        for ch in 0..spec.channels {
            for row in 0..side {
                for col in 0..side {
                    let mut v = background(row) * tint[ch];
                    let inside = (r0..r0 + s).contains(&row) && (c0..c0 + s).contains(&col);
                    if inside && shape.covers(row - r0, col - c0, s) {
                        v += sign * delta;
                    }
                    let noise = if amp > 0 { rng.random_range(-amp..=amp) } else { 0 };
                    pixels.push((v.round() as i32 + noise).clamp(0, 255) as u8);
                }
            }
        }
        labels.push(label);
    }
    ImageDataset::new(format!("synthetic-{seed}"), [spec.channels, side, side], spec.class_count, pixels, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec { samples_per_class: 25, ..SyntheticSpec::default() }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = gen_synthetic(&small(), 3).unwrap();
        assert_eq!(a, gen_synthetic(&small(), 3).unwrap());
        assert_ne!(a.pixels(), gen_synthetic(&small(), 4).unwrap().pixels());
    }

    #[test]
    fn histogram_is_uniform() {
        let d = gen_synthetic(&small(), 0).unwrap();
        assert_eq!(d.histogram(), vec![25; 4]);
        assert_eq!(d.shape(), [3, 16, 16]);
    }

    #[test]
    fn top_rows_are_brighter_than_bottom_rows() {
        let d = gen_synthetic(&SyntheticSpec { texture: 0, ..small() }, 1).unwrap();
        let side = 16;
        let mut brighter = 0;
        for i in 0..d.len() {
            let img = &d.image(i)[..side * side];
            let top: u32 = img[..side].iter().map(|&p| u32::from(p)).sum();
            let bottom: u32 = img[side * (side - 1)..].iter().map(|&p| u32::from(p)).sum();
            brighter += usize::from(top > bottom);
        }
        assert_eq!(brighter, d.len());
    }

    #[test]
    fn shapes_differ_in_area() {
        let count = |k: ShapeKind| (0..9).flat_map(|r| (0..9).map(move |c| (r, c))).filter(|&(r, c)| k.covers(r, c, 9)).count();
        let areas: Vec<usize> = ShapeKind::ALL.iter().map(|&k| count(k)).collect();
        assert_eq!(areas[0], 81);
        assert!(areas[1] < areas[2] && areas[2] < areas[0]);
        assert!(areas[3] < areas[2]);
    }

    #[test]
    fn invalid_spec_is_rejected() {
        assert!(gen_synthetic(&SyntheticSpec { class_count: 5, ..small() }, 0).is_err());
        assert!(gen_synthetic(&SyntheticSpec { shape_fraction: [0.5, 0.2], ..small() }, 0).is_err());
    }
}
