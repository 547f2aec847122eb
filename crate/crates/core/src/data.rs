//! MNIST in the IDX container: parsing, normalization, and encoding into
//! initial network states.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use num_complex::Complex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::scalar::Scalar;
use crate::spectral::SpectralConfig;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_PIXELS: usize = 784;
pub const CLASSES: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, one image after another.
    pub pixels: Vec<u8>,
}

impl RawImages {
    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let p = self.pixels_per_image();
        &self.pixels[i * p..(i + 1) * p]
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated { expected: at + 4, actual: bytes.len() })
}

fn check_payload(bytes: &[u8], header: usize, payload: usize) -> Result<()> {
    let expected = header + payload;
    if bytes.len() < expected {
        return Err(Error::Truncated { expected, actual: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(Error::LengthMismatch { expected, actual: bytes.len() });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<RawImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::WrongMagic { expected: IMAGE_MAGIC, found: magic });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    check_payload(bytes, 16, count * rows * cols)?;
    Ok(RawImages { count, rows, cols, pixels: bytes[16..].to_vec() })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::WrongMagic { expected: LABEL_MAGIC, found: magic });
    }
    let count = be_u32(bytes, 4)? as usize;
    check_payload(bytes, 8, count)?;
    let labels = bytes[8..].to_vec();
    if let Some(index) = labels.iter().position(|&l| l as usize >= CLASSES) {
        return Err(Error::CorruptLabels { index, label: labels[index] });
    }
    Ok(labels)
}

pub fn serialize_idx_images(images: &RawImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn serialize_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Maps raw intensities in `[0, 255]` to `[0, 1]`.
pub fn normalize(raw: &[f64]) -> Result<Vec<f64>> {
    raw.iter()
        .enumerate()
        .map(|(index, &value)| {
            if (0.0..=255.0).contains(&value) {
                Ok(value / 255.0)
            } else {
                Err(Error::PixelOutOfRange { index, value })
            }
        })
        .collect()
}

/// Places the image row-major on nodes `1..=784` as real parts; everything else is zero.
pub fn encode_input<T: Scalar>(image: &[f64], config: &SpectralConfig) -> Result<CMat<T>> {
    encode_batch(&[image], config)
}

/// One encoded MNIST image per column.
pub fn encode_batch<T: Scalar, I: AsRef<[f64]>>(images: &[I], config: &SpectralConfig) -> Result<CMat<T>> {
    encode_pixels(images, IMAGE_PIXELS, config)
}

/// Encodes images of `pixels` values each onto nodes `1..=pixels`, one per column.
pub fn encode_pixels<T: Scalar, I: AsRef<[f64]>>(images: &[I], pixels: usize, config: &SpectralConfig) -> Result<CMat<T>> {
    if config.n_nonlinear < pixels {
        return Err(Error::InvalidConfig(format!(
            "images need {pixels} non-linear nodes, config has L={}",
            config.n_nonlinear
        )));
    }
    let n = config.n_total;
    let mut re = vec![T::zero(); n * images.len()];
    for (j, img) in images.iter().enumerate() {
        let img = img.as_ref();
        if img.len() != pixels {
            return Err(Error::LengthMismatch { expected: pixels, actual: img.len() });
        }
        for (slot, &p) in re[j * n..j * n + pixels].iter_mut().zip(img) {
            *slot = T::lit(p);
        }
    }
    let im = vec![T::zero(); re.len()];
    CMat::from_parts(n, images.len(), re, im)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn files(self) -> (&'static PinnedFile, &'static PinnedFile) {
        match self {
            Split::Train => (&MNIST_FILES[0], &MNIST_FILES[1]),
            Split::Test => (&MNIST_FILES[2], &MNIST_FILES[3]),
        }
    }
}

/// Expected length and SHA-256 of an official MNIST file (uncompressed).
#[derive(Debug)]
pub struct PinnedFile {
    pub name: &'static str,
    pub len: u64,
    pub sha256: &'static str,
}

pub const MNIST_FILES: [PinnedFile; 4] = [
    PinnedFile {
        name: "train-images-idx3-ubyte",
        len: 47_040_016,
        sha256: "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    },
    PinnedFile {
        name: "train-labels-idx1-ubyte",
        len: 60_008,
        sha256: "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    },
    PinnedFile {
        name: "t10k-images-idx3-ubyte",
        len: 7_840_016,
        sha256: "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    },
    PinnedFile {
        name: "t10k-labels-idx1-ubyte",
        len: 10_008,
        sha256: "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
    },
];

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl PinnedFile {
    pub fn verify(&self, bytes: &[u8]) -> Result<()> {
        if bytes.len() as u64 != self.len {
            return Err(Error::DataMissing(format!(
                "{}: expected {} bytes, got {}",
                self.name,
                self.len,
                bytes.len()
            )));
        }
        let digest = sha256_hex(bytes);
        if digest != self.sha256 {
            return Err(Error::DataMissing(format!("{}: checksum mismatch ({digest})", self.name)));
        }
        Ok(())
    }
}

/// Reads `dir/name`, falling back to `dir/name.gz`; gzip is detected by its magic bytes.
pub fn read_maybe_gz(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let plain = dir.join(name);
    let gz: PathBuf = dir.join(format!("{name}.gz"));
    let path = if plain.is_file() {
        plain
    } else if gz.is_file() {
        gz
    } else {
        return Err(Error::DataMissing(format!("{} not found (also tried .gz)", plain.display())));
    };
    let bytes = fs::read(&path)?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    split: Split,
    raw: RawImages,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(split: Split, raw: RawImages, labels: Vec<u8>) -> Result<Self> {
        if raw.count != labels.len() {
            return Err(Error::LengthMismatch { expected: raw.count, actual: labels.len() });
        }
        if let Some(index) = labels.iter().position(|&l| l as usize >= CLASSES) {
            return Err(Error::CorruptLabels { index, label: labels[index] });
        }
        Ok(Dataset { split, raw, labels })
    }

    /// Loads one split from `dir`. With `verify`, file lengths and checksums
    /// must match the official release.
    pub fn load(dir: &Path, split: Split, verify: bool) -> Result<Self> {
        let (img_file, lbl_file) = split.files();
        let img_bytes = read_maybe_gz(dir, img_file.name)?;
        let lbl_bytes = read_maybe_gz(dir, lbl_file.name)?;
        if verify {
            img_file.verify(&img_bytes)?;
            lbl_file.verify(&lbl_bytes)?;
        }
        Self::new(split, parse_idx_images(&img_bytes)?, parse_idx_labels(&lbl_bytes)?)
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn raw(&self) -> &RawImages {
        &self.raw
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Image `i` scaled to `[0, 1]`.
    pub fn image(&self, i: usize) -> Vec<f64> {
        self.raw.image(i).iter().map(|&p| f64::from(p) / 255.0).collect()
    }

    /// The first `n` samples (all of them if `n` exceeds the size).
    pub fn head(&self, n: usize) -> Self {
        self.select(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let p = self.raw.pixels_per_image();
        let mut pixels = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            pixels.extend_from_slice(self.raw.image(i));
        }
        Dataset {
            split: self.split,
            raw: RawImages { count: indices.len(), rows: self.raw.rows, cols: self.raw.cols, pixels },
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Encoded states for the samples at `indices`, one per column.
    pub fn encode<T: Scalar>(&self, indices: &[usize], config: &SpectralConfig) -> Result<CMat<T>> {
        let images: Vec<Vec<f64>> = indices.iter().map(|&i| self.image(i)).collect();
        encode_pixels(&images, self.raw.pixels_per_image(), config)
    }

    pub fn label_histogram(&self) -> [usize; CLASSES] {
        let mut h = [0; CLASSES];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }
}

/// Unit entry at component `k` (0-based) of an otherwise zero state; handy for tests.
pub fn basis_state<T: Scalar>(n: usize, k: usize) -> CMat<T> {
    CMat::from_fn(n, 1, |i, _| if i == k { Complex::new(T::one(), T::zero()) } else { Complex::new(T::zero(), T::zero()) })
}
