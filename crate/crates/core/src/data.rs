//! Labelled image sets: the seeded synthetic blob generator and the IDX (MNIST)
//! file format.

use std::fs;
use std::path::Path;

use crate::rng::SplitMix64;
use crate::{Error, Result, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Standard deviation of the per-pixel noise around each class template.
pub const SYNTHETIC_NOISE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `n × (h·w·c)`, values in `[0, 1]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    /// `(height, width, channels)`.
    pub dims: [usize; 3],
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, dims: [usize; 3]) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(Error::Input(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        let width: usize = dims.iter().product();
        if images.row_len() != width {
            return Err(Error::Shape(format!(
                "image rows have {} values, dims {dims:?} need {width}",
                images.row_len()
            )));
        }
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { images, labels, dims })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let images = self.images.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(Self { images, labels, dims: self.dims })
    }

    /// The first `n` samples (or all of them, if fewer).
    pub fn head(&self, n: usize) -> Result<Self> {
        let take: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&take)
    }

    /// Splits into the first `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> Result<(Self, Self)> {
        if n == 0 || n >= self.len() {
            return Err(Error::Input(format!("cannot split {} samples at {n}", self.len())));
        }
        let first: Vec<usize> = (0..n).collect();
        let rest: Vec<usize> = (n..self.len()).collect();
        Ok((self.subset(&first)?, self.subset(&rest)?))
    }
}

/// Gaussian blobs around per-class template images.
///
/// Each class gets a template whose pixels are 0.15 or 0.85 with equal
/// probability; samples add `N(0, SYNTHETIC_NOISE²)` noise and clip to `[0, 1]`.
/// Labels cycle through the classes in a shuffled order. The result depends on
/// `(seed, n, num_classes, dims)` only.
pub fn gen_synthetic(seed: u64, n: usize, num_classes: usize, dims: [usize; 3]) -> Result<Dataset> {
    if n == 0 || num_classes < 2 {
        return Err(Error::Input(format!(
            "synthetic data needs n >= 1 and >= 2 classes, got n={n}, classes={num_classes}"
        )));
    }
    let width: usize = dims.iter().product();
    if width == 0 {
        return Err(Error::Input(format!("image dims must be >= 1, got {dims:?}")));
    }
    let mut template_rng = SplitMix64::derive(seed, 0x7e3);
    let templates: Vec<Vec<f32>> = (0..num_classes)
        .map(|_| {
            (0..width)
                .map(|_| if template_rng.bernoulli(0.5) { 0.85 } else { 0.15 })
                .collect()
        })
        .collect();

    let mut label_rng = SplitMix64::derive(seed, 0x1ab);
    let mut labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    label_rng.shuffle(&mut labels);

    let mut noise_rng = SplitMix64::derive(seed, 0x4015e);
    let mut data = Vec::with_capacity(n * width);
    for &label in &labels {
        for &t in &templates[label] {
            let v = t as f64 + SYNTHETIC_NOISE * noise_rng.normal();
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Dataset::new(Tensor::new(vec![n, width], data)?, labels, dims)
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            message: format!("truncated header: missing {what}"),
        })
}

fn expect_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_be_u32(bytes, 0, "magic")?;
    if magic != expected {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad IDX magic {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

/// Parses an IDX image file (magic `0x00000803`) into `(n, rows, cols, pixels/255)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f32>)> {
    expect_magic(bytes, IDX_IMAGES_MAGIC)?;
    let n = read_be_u32(bytes, 4, "image count")? as usize;
    let rows = read_be_u32(bytes, 8, "row count")? as usize;
    let cols = read_be_u32(bytes, 12, "column count")? as usize;
    let total = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format { offset: 4, message: format!("dimensions {n}x{rows}x{cols} overflow") })?;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format { offset: 4, message: format!("empty image set {n}x{rows}x{cols}") });
    }
    let body = &bytes[16..];
    if body.len() != total {
        return Err(Error::Format {
            offset: 16 + body.len().min(total) as u64,
            message: format!("expected {total} pixel bytes, found {}", body.len()),
        });
    }
    Ok((n, rows, cols, body.iter().map(|&b| b as f32 / 255.0).collect()))
}

/// Parses an IDX label file (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    expect_magic(bytes, IDX_LABELS_MAGIC)?;
    let n = read_be_u32(bytes, 4, "label count")? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Format {
            offset: 8 + body.len().min(n) as u64,
            message: format!("expected {n} label bytes, found {}", body.len()),
        });
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    if labels.len() != n {
        return Err(Error::Input(format!(
            "{} has {n} images but {} has {} labels",
            images_path.display(),
            labels_path.display(),
            labels.len()
        )));
    }
    Dataset::new(Tensor::new(vec![n, rows * cols], pixels)?, labels, [rows, cols, 1])
}

/// Writes a single-channel dataset as an IDX image/label file pair, quantizing
/// pixels to bytes.
pub fn write_idx(data: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let [rows, cols, channels] = data.dims;
    if channels != 1 {
        return Err(Error::Input(format!("IDX export supports one channel, got {channels}")));
    }
    let n = data.len();
    let mut images = Vec::with_capacity(16 + data.images.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend(data.images.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));

    let mut labels = Vec::with_capacity(8 + n);
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    for &l in &data.labels {
        let byte = u8::try_from(l).map_err(|_| Error::Input(format!("label {l} does not fit in a byte")))?;
        labels.push(byte);
    }
    fs::write(images_path, images)?;
    fs::write(labels_path, labels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-built fixture: four 2×3 images with bytes 0, 51, 102, ... and labels 3, 1, 4, 1.
    fn fixture() -> (Vec<u8>, Vec<u8>, Vec<u8>) {
        let pixels: Vec<u8> = (0..24u8).map(|i| i.wrapping_mul(51)).collect();
        let mut images = vec![0, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 3];
        images.extend_from_slice(&pixels);
        let labels = vec![0, 0, 8, 1, 0, 0, 0, 4, 3, 1, 4, 1];
        (images, labels, pixels)
    }

    #[test]
    fn parses_hand_written_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels, pixels) = fixture();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lbl.idx");
        fs::write(&ip, &images).unwrap();
        fs::write(&lp, &labels).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.dims, [2, 3, 1]);
        assert_eq!(ds.labels, vec![3, 1, 4, 1]);
        let expected: Vec<f32> = pixels.iter().map(|&b| b as f32 / 255.0).collect();
        assert_eq!(ds.images.data(), expected.as_slice());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let (mut images, labels, _) = fixture();
        assert!(matches!(parse_idx_labels(&images), Err(Error::Format { offset: 0, .. })));
        images.pop();
        assert!(matches!(parse_idx_images(&images), Err(Error::Format { .. })));
        assert!(parse_idx_labels(&labels[..6]).is_err());
    }

    #[test]
    fn rejects_dimension_overflow() {
        let header = [0, 0, 8, 3, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255];
        let err = parse_idx_images(&header).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn mismatched_counts_error() {
        let dir = tempfile::tempdir().unwrap();
        let (images, _, _) = fixture();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lbl.idx");
        fs::write(&ip, &images).unwrap();
        fs::write(&lp, [0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Input(_))));
    }

    #[test]
    fn synthetic_is_reproducible_and_in_range() {
        let a = gen_synthetic(17, 50, 10, [6, 6, 1]).unwrap();
        let b = gen_synthetic(17, 50, 10, [6, 6, 1]).unwrap();
        assert_eq!(a, b);
        assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.labels.iter().all(|&l| l < 10));
        let c = gen_synthetic(18, 50, 10, [6, 6, 1]).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn idx_write_then_load_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_synthetic(3, 12, 4, [5, 5, 1]).unwrap();
        let ip = dir.path().join("i");
        let lp = dir.path().join("l");
        write_idx(&ds, &ip, &lp).unwrap();
        let back = load_idx(&ip, &lp).unwrap();
        assert_eq!(back.labels, ds.labels);
        for (a, b) in back.images.data().iter().zip(ds.images.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
