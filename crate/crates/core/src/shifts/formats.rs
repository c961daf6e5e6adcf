//! CIFAR-10 binary records and MNIST IDX files.

use std::fs;
use std::path::Path;

use super::dataset::ImageDataset;
use crate::error::{Error, Result};

pub const CIFAR_SHAPE: [usize; 3] = [3, 32, 32];
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

pub fn load_cifar10_binary(path: impl AsRef<Path>) -> Result<ImageDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let name = path.file_stem().map_or("cifar10".into(), |s| s.to_string_lossy().into_owned());
    parse_cifar_records(&bytes, CIFAR_SHAPE, 10, &name)
}

/// Records of one label byte followed by `C·H·W` channel-major pixels.
pub fn parse_cifar_records(bytes: &[u8], shape: [usize; 3], class_count: usize, name: &str) -> Result<ImageDataset> {
    let per = shape.iter().product::<usize>();
    let record = per + 1;
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(Error::Format(format!("{name}: {} bytes is not a multiple of the {record}-byte record", bytes.len())));
    }
    let n = bytes.len() / record;
    let mut pixels = Vec::with_capacity(n * per);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(record).enumerate() {
        let label = usize::from(rec[0]);
        if label >= class_count {
            return Err(Error::Format(format!("{name}: record {i} has label {label} (max {})", class_count - 1)));
        }
        labels.push(label);
        pixels.extend_from_slice(&rec[1..]);
    }
    ImageDataset::new(name, shape, class_count, pixels, labels)
}

/// Serializes in the CIFAR record layout (any image shape, labels < 256).
pub fn to_cifar_records(ds: &ImageDataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(ds.len() * (ds.image_len() + 1));
    for i in 0..ds.len() {
        let label = u8::try_from(ds.label(i))
            .map_err(|_| Error::Format(format!("label {} does not fit a byte", ds.label(i))))?;
        out.push(label);
        out.extend_from_slice(ds.image(i));
    }
    Ok(out)
}

pub fn write_cifar_records(ds: &ImageDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_cifar_records(ds)?)?;
    Ok(())
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<ImageDataset> {
    parse_mnist_idx(&fs::read(images_path)?, &fs::read(labels_path)?)
}

/// IDX image file (magic 0x803, count, rows, cols) plus label file
/// (magic 0x801, count). Images come out as `[1,rows,cols]`, 10 classes.
pub fn parse_mnist_idx(images: &[u8], labels: &[u8]) -> Result<ImageDataset> {
    let magic = be_u32(images, 0, "mnist images")?;
    if magic != IDX_IMAGES {
        return Err(Error::Format(format!("mnist images: magic {magic:#010x}, expected {IDX_IMAGES:#010x}")));
    }
    let n = be_u32(images, 4, "mnist images")? as usize;
    let rows = be_u32(images, 8, "mnist images")? as usize;
    let cols = be_u32(images, 12, "mnist images")? as usize;
    let payload = &images[16..];
    if payload.len() != n * rows * cols {
        return Err(Error::Format(format!(
            "mnist images: {n}×{rows}×{cols} header but {} payload bytes",
            payload.len()
        )));
    }
    let magic = be_u32(labels, 0, "mnist labels")?;
    if magic != IDX_LABELS {
        return Err(Error::Format(format!("mnist labels: magic {magic:#010x}, expected {IDX_LABELS:#010x}")));
    }
    let m = be_u32(labels, 4, "mnist labels")? as usize;
    let label_bytes = &labels[8..];
    if m != n || label_bytes.len() != m {
        return Err(Error::Format(format!(
            "mnist: {n} images but {m} labels in header and {} label bytes",
            label_bytes.len()
        )));
    }
    let labels: Vec<usize> = label_bytes.iter().map(|&b| usize::from(b)).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= 10) {
        return Err(Error::Format(format!("mnist labels: label {bad}")));
    }
    ImageDataset::new("mnist", [1, rows, cols], 10, payload.to_vec(), labels)
}

/// Inverse of [`parse_mnist_idx`] for single-channel datasets.
pub fn to_mnist_idx(ds: &ImageDataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let [c, rows, cols] = ds.shape();
    if c != 1 {
        return Err(Error::Format(format!("IDX images need one channel, got {c}")));
    }
    let mut images = Vec::with_capacity(16 + ds.pixels().len());
    for v in [IDX_IMAGES, ds.len() as u32, rows as u32, cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend_from_slice(ds.pixels());
    let mut labels = Vec::with_capacity(8 + ds.len());
    for v in [IDX_LABELS, ds.len() as u32] {
        labels.extend_from_slice(&v.to_be_bytes());
    }
    for &l in ds.labels() {
        labels.push(u8::try_from(l).map_err(|_| Error::Format(format!("label {l} does not fit a byte")))?);
    }
    Ok((images, labels))
}
