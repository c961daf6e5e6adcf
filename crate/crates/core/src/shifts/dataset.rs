use ssdn_engine::{Real, Tensor};

use crate::error::{contract, Result};

/// Labelled 8-bit images of one common `[C,H,W]` shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageDataset {
    name: String,
    shape: [usize; 3],
    class_count: usize,
    /// Images back to back, `C·H·W` bytes each.
    pixels: Vec<u8>,
    labels: Vec<usize>,
}

/// Maps a byte to the network's input scale: `(p/255 − 0.5)/0.25`.
pub fn normalize_pixel(p: u8) -> f64 {
    (f64::from(p) / 255.0 - 0.5) / 0.25
}

impl ImageDataset {
    pub fn new(
        name: impl Into<String>,
        shape: [usize; 3],
        class_count: usize,
        pixels: Vec<u8>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let name = name.into();
        let per = shape.iter().product::<usize>();
        if per == 0 {
            return Err(contract(format!("dataset {name}: empty image shape {shape:?}")));
        }
        if pixels.len() != per * labels.len() {
            return Err(contract(format!(
                "dataset {name}: {} pixel bytes for {} images of {shape:?}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(contract(format!("dataset {name}: label {bad} with {class_count} classes")));
        }
        Ok(ImageDataset { name, shape, class_count, pixels, labels })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn image_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Per-class counts.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// The images at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<ImageDataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(contract(format!("dataset {}: index {bad} of {}", self.name, self.len())));
        }
        let mut pixels = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        ImageDataset::new(self.name.clone(), self.shape, self.class_count, pixels, labels)
    }

    /// First `n` images (all of them when `n` exceeds the length).
    pub fn take(&self, n: usize) -> ImageDataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx).expect("indices in range")
    }

    /// Replaces every image through `f(index, pixels)`, keeping labels.
    pub fn map_images(&self, mut f: impl FnMut(usize, &[u8]) -> Result<Vec<u8>>) -> Result<ImageDataset> {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for i in 0..self.len() {
            let out = f(i, self.image(i))?;
            if out.len() != self.image_len() {
                return Err(contract(format!("image map changed size {} -> {}", self.image_len(), out.len())));
            }
            pixels.extend_from_slice(&out);
        }
        ImageDataset::new(self.name.clone(), self.shape, self.class_count, pixels, self.labels.clone())
    }

    /// Normalized `[N,C,H,W]` batch of the images at `indices`.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            if i >= self.len() {
                return Err(contract(format!("dataset {}: index {i} of {}", self.name, self.len())));
            }
            data.extend(self.image(i).iter().map(|&p| T::from_f64_lossy(normalize_pixel(p))));
        }
        let [c, h, w] = self.shape;
        Ok(Tensor::new([indices.len(), c, h, w], data)?)
    }

    pub fn labels_at(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}
