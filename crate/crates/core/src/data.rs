//! Labelled grayscale image sets and the bundled 8x8 digits data.
//!
//! Binary layout: four little-endian `u32` (count, height, width, classes),
//! then `count * height * width` pixel bytes, then `count` label bytes.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

static DIGITS: &[u8] = include_bytes!("../data/digits.bin");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("dataset truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("dataset header invalid: {0}")]
    Header(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatasetError> {
        if bytes.len() < 16 {
            return Err(DatasetError::Truncated { expected: 16, found: bytes.len() });
        }
        let field = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        let (count, height, width, classes) = (field(0), field(1), field(2), field(3));
        if height == 0 || width == 0 || classes == 0 || classes > 256 {
            return Err(DatasetError::Header(format!("{count} x {height}x{width}, {classes} classes")));
        }
        let record = height * width;
        let expected = count
            .checked_mul(record + 1)
            .and_then(|n| n.checked_add(16))
            .ok_or_else(|| DatasetError::Header("size overflow".into()))?;
        if bytes.len() != expected {
            return Err(DatasetError::Truncated { expected, found: bytes.len() });
        }
        let pixels = bytes[16..16 + count * record].to_vec();
        let labels = bytes[16 + count * record..].to_vec();
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(DatasetError::Header(format!("label {l} outside {classes} classes")));
        }
        Ok(Self { height, width, classes, pixels, labels })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len() + self.labels.len());
        for v in [self.len(), self.height, self.width, self.classes] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.pixels);
        out.extend_from_slice(&self.labels);
        out
    }

    /// The bundled 1797-sample handwritten digits set (pixels 0..=16).
    pub fn digits() -> Self {
        Self::from_bytes(DIGITS).expect("bundled dataset is well formed")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let r = self.height * self.width;
        &self.pixels[i * r..(i + 1) * r]
    }

    pub fn pixel_max(&self) -> u8 {
        self.pixels.iter().copied().max().unwrap_or(0).max(1)
    }

    /// Pixels scaled into `[0, 1]` by the dataset maximum.
    pub fn float_image(&self, i: usize) -> Vec<f32> {
        let m = self.pixel_max() as f32;
        self.image(i).iter().map(|&p| p as f32 / m).collect()
    }

    pub fn float_images(&self, idx: &[usize]) -> Vec<Vec<f32>> {
        idx.iter().map(|&i| self.float_image(i)).collect()
    }

    pub fn labels_of(&self, idx: &[usize]) -> Vec<u8> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    /// Deterministic shuffled split: `test_fraction` held out, and the
    /// first `calib_fraction` of the training part used for calibration.
    pub fn split(&self, seed: u64, test_fraction: f64, calib_fraction: f64) -> Split {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (self.len() as f64 * test_fraction).round() as usize;
        let test = idx[..n_test].to_vec();
        let train = idx[n_test..].to_vec();
        let n_cal = ((train.len() as f64 * calib_fraction).round() as usize).max(1).min(train.len());
        let calib = train[..n_cal].to_vec();
        Split { train, test, calib }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub calib: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digits_framing() {
        let d = Dataset::digits();
        assert_eq!(d.len(), 1797);
        assert_eq!((d.height, d.width, d.classes), (8, 8, 10));
        assert_eq!(d.pixels.len(), d.len() * 64);
        assert_eq!(Dataset::from_bytes(&d.to_bytes()).unwrap(), d);
    }

    #[test]
    fn truncated() {
        let mut b = Dataset::digits().to_bytes();
        b.pop();
        assert!(matches!(Dataset::from_bytes(&b), Err(DatasetError::Truncated { .. })));
    }

    #[test]
    fn split_is_deterministic() {
        let d = Dataset::digits();
        let a = d.split(7, 0.2, 0.1);
        assert_eq!(a, d.split(7, 0.2, 0.1));
        assert_eq!(a.train.len() + a.test.len(), d.len());
        assert_eq!(a.calib.len(), (a.train.len() as f64 * 0.1).round() as usize);
    }
}
