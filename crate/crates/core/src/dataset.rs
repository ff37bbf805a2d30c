//! Dataset ingestion: CIFAR-10 binary files, a deterministic synthetic
//! generator, and a small container format for non-CIFAR shapes.
//!
//! Images are NCHW `f64` in [0, 1]; labels are integers below the class
//! count.

use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        images: Vec<f64>,
        labels: Vec<usize>,
        (channels, height, width): (usize, usize, usize),
        classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self, DataError> {
        let per_image = channels * height * width;
        if per_image == 0 || labels.len() * per_image != images.len() {
            return Err(DataError::Invalid(format!(
                "{} pixel values do not form {} images of {channels}x{height}x{width}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::Invalid(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        if images.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DataError::Invalid("pixel outside [0, 1]".into()));
        }
        Ok(Dataset {
            images,
            labels,
            channels,
            height,
            width,
            classes,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// Gathers the given sample indices into an NCHW batch tensor.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let per = self.channels * self.height * self.width;
        let mut values = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(&self.images[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        let tensor = Tensor::new(
            vec![indices.len(), self.channels, self.height, self.width],
            values,
        )
        .expect("batch shape");
        (tensor, labels)
    }

    /// FNV-1a over pixels and labels, for determinism checks.
    pub fn content_hash(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |byte: u8| {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for v in &self.images {
            v.to_le_bytes().into_iter().for_each(&mut eat);
        }
        for &l in &self.labels {
            (l as u64).to_le_bytes().into_iter().for_each(&mut eat);
        }
        hash
    }
}

const CIFAR_RECORD: usize = 3073; // 1 label byte + 3 * 1024 pixels (R, G, B planes)

/// Loads a CIFAR-10 binary batch file (3073-byte records), keeping at
/// most `limit` records when given.
pub fn load_cifar10_bin(path: &Path, limit: Option<usize>) -> Result<Dataset, DataError> {
    let bytes = std::fs::read(path)?;
    cifar10_from_bytes(&bytes, limit)
}

pub fn cifar10_from_bytes(bytes: &[u8], limit: Option<usize>) -> Result<Dataset, DataError> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(DataError::Format(format!(
            "{} bytes is not a whole number of 3073-byte records",
            bytes.len()
        )));
    }
    let total = bytes.len() / CIFAR_RECORD;
    let keep = limit.unwrap_or(total).min(total);
    let mut images = Vec::with_capacity(keep * 3072);
    let mut labels = Vec::with_capacity(keep);
    for rec in bytes.chunks(CIFAR_RECORD).take(keep) {
        let label = rec[0];
        if label > 9 {
            return Err(DataError::Format(format!(
                "label byte {label} exceeds 9 in record {}",
                labels.len()
            )));
        }
        labels.push(label as usize);
        images.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Dataset::new(images, labels, (3, 32, 32), 10, "cifar10")
}

/// Writes records in the CIFAR-10 binary layout. Pixels are quantized to
/// 1/255 steps; inputs already on that grid round-trip exactly.
pub fn write_cifar10_bin<W: Write>(w: &mut W, data: &Dataset) -> Result<(), DataError> {
    if data.image_shape() != (3, 32, 32) || data.classes > 10 {
        return Err(DataError::Invalid(
            "CIFAR-10 layout requires 3x32x32 images and at most 10 classes".into(),
        ));
    }
    for i in 0..data.len() {
        w.write_all(&[data.labels[i] as u8])?;
        let px: Vec<u8> = data.images[i * 3072..(i + 1) * 3072]
            .iter()
            .map(|&v| (v * 255.0).round() as u8)
            .collect();
        w.write_all(&px)?;
    }
    Ok(())
}

pub const SYNTH_SIGNAL: f64 = 0.08;
pub const SYNTH_NOISE: f64 = 0.12;

/// Deterministic class-conditional blob images: class k has a fixed
/// sign pattern scaled by `signal` around mid-gray, plus Gaussian pixel
/// noise, clipped to [0, 1]. Labels are balanced (`i mod classes`).
pub fn gen_synthetic_with(
    seed: u64,
    n: usize,
    size: usize,
    classes: usize,
    signal: f64,
    noise: f64,
) -> Result<Dataset, DataError> {
    if classes == 0 || n < classes {
        return Err(DataError::Invalid(format!(
            "need at least one sample per class (n={n}, classes={classes})"
        )));
    }
    let per = 3 * size * size;
    // Class patterns depend only on the class index, not the dataset seed.
    let patterns: Vec<Vec<f64>> = (0..classes)
        .map(|k| {
            let mut rng = ChaCha20Rng::seed_from_u64(0x7061_7474_u64 ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            (0..per)
                .map(|_| {
                    if rng.random::<bool>() {
                        0.5 + signal
                    } else {
                        0.5 - signal
                    }
                })
                .collect()
        })
        .collect();

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n * per);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % classes;
        labels.push(k);
        for &mu in &patterns[k] {
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random::<f64>();
            let gauss = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            images.push((mu + noise * gauss).clamp(0.0, 1.0));
        }
    }
    Dataset::new(images, labels, (3, size, size), classes, "synthetic")
}

/// [`gen_synthetic_with`] using the stock signal/noise amplitudes.
pub fn gen_synthetic(seed: u64, n: usize, size: usize, classes: usize) -> Result<Dataset, DataError> {
    gen_synthetic_with(seed, n, size, classes, SYNTH_SIGNAL, SYNTH_NOISE)
}

const CONTAINER_MAGIC: &[u8; 8] = b"RADSET01";

/// Container format for arbitrary-shape datasets: magic, u32 counts
/// (n, c, h, w, classes), then per sample a label byte and c*h*w pixel
/// bytes (1/255 quantization).
pub fn write_dataset<W: Write>(w: &mut W, data: &Dataset) -> Result<(), DataError> {
    if data.classes > 256 {
        return Err(DataError::Invalid("container labels are single bytes".into()));
    }
    w.write_all(CONTAINER_MAGIC)?;
    for v in [
        data.len(),
        data.channels,
        data.height,
        data.width,
        data.classes,
    ] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    let per = data.channels * data.height * data.width;
    for i in 0..data.len() {
        w.write_all(&[data.labels[i] as u8])?;
        let px: Vec<u8> = data.images[i * per..(i + 1) * per]
            .iter()
            .map(|&v| (v * 255.0).round() as u8)
            .collect();
        w.write_all(&px)?;
    }
    Ok(())
}

pub fn read_dataset<R: Read>(r: &mut R) -> Result<Dataset, DataError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CONTAINER_MAGIC {
        return Err(DataError::Format("not a rarch dataset container".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut next = || -> Result<usize, DataError> {
        r.read_exact(&mut u32buf)?;
        Ok(u32::from_le_bytes(u32buf) as usize)
    };
    let (n, c, h, w, classes) = (next()?, next()?, next()?, next()?, next()?);
    let per = c * h * w;
    let mut images = Vec::with_capacity(n * per);
    let mut labels = Vec::with_capacity(n);
    let mut rec = vec![0u8; 1 + per];
    for _ in 0..n {
        r.read_exact(&mut rec)?;
        labels.push(rec[0] as usize);
        images.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Dataset::new(images, labels, (c, h, w), classes, "container")
}

/// Loads either a rarch container or a raw CIFAR-10 batch, deciding by
/// the magic header.
pub fn load_auto(path: &Path, limit: Option<usize>) -> Result<Dataset, DataError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() >= 8 && &bytes[..8] == CONTAINER_MAGIC {
        let mut data = read_dataset(&mut bytes.as_slice())?;
        if let Some(limit) = limit {
            let keep = limit.min(data.len());
            let per = data.channels * data.height * data.width;
            data.images.truncate(keep * per);
            data.labels.truncate(keep);
        }
        Ok(data)
    } else {
        cifar10_from_bytes(&bytes, limit)
    }
}
