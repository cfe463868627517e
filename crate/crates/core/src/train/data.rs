//! Training data: seeded synthetic generators and the flat binary format.
//!
//! Binary layout, all little-endian: the magic `SAMD`, then `n_samples`,
//! `n_features`, `n_targets` as u32, then `n_samples · n_features` f32
//! features (row-major), then `n_samples · n_targets` f32 targets.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

const MAGIC: &[u8; 4] = b"SAMD";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n_features: usize,
    n_targets: usize,
    features: Vec<f32>,
    targets: Vec<f32>,
}

/// One minibatch: inputs as a tensor, targets as flat single values.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub y: Vec<f32>,
}

impl Dataset {
    pub fn new(
        n_features: usize,
        n_targets: usize,
        features: Vec<f32>,
        targets: Vec<f32>,
    ) -> Result<Self> {
        if n_features == 0 || n_targets == 0 {
            return Err(Error::Config("dataset needs features and targets".into()));
        }
        let n = features.len() / n_features;
        if n == 0 || features.len() != n * n_features || targets.len() != n * n_targets {
            return Err(Error::Dimension(format!(
                "{} features and {} targets do not form whole samples of {n_features}/{n_targets}",
                features.len(),
                targets.len()
            )));
        }
        Ok(Self {
            n_features,
            n_targets,
            features,
            targets,
        })
    }

    /// Inputs uniform in `[-1, 1)`, targets from a random linear teacher.
    pub fn synthetic_regression(
        n_samples: usize,
        n_features: usize,
        n_targets: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a);
        let scale = 1.0 / (n_features as f32).sqrt();
        let teacher: Vec<f32> = (0..n_features * n_targets)
            .map(|_| rng.gen_range(-1.0f32..1.0) * scale)
            .collect();
        let features: Vec<f32> = (0..n_samples * n_features)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect();
        let mut targets = vec![0.0f32; n_samples * n_targets];
        for s in 0..n_samples {
            for t in 0..n_targets {
                let mut acc = 0.0f32;
                for f in 0..n_features {
                    acc += features[s * n_features + f] * teacher[f * n_targets + t];
                }
                targets[s * n_targets + t] = acc;
            }
        }
        Self::new(n_features, n_targets, features, targets)
    }

    /// One-hot labels from the argmax of a random linear teacher.
    pub fn synthetic_classification(
        n_samples: usize,
        n_features: usize,
        n_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let reg = Self::synthetic_regression(n_samples, n_features, n_classes, seed)?;
        let mut targets = vec![0.0f32; reg.targets.len()];
        for s in 0..n_samples {
            let row = &reg.targets[s * n_classes..(s + 1) * n_classes];
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            targets[s * n_classes + best] = 1.0;
        }
        Self::new(n_features, n_classes, reg.features, targets)
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.n_features
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    /// Samples `step·size .. step·size + size`, wrapping around the dataset.
    pub fn batch(&self, step: usize, size: usize, dtype: DType) -> Result<Batch> {
        let n = self.len();
        let size = size.min(n).max(1);
        let mut x = Vec::with_capacity(size * self.n_features);
        let mut y = Vec::with_capacity(size * self.n_targets);
        for i in 0..size {
            let s = (step * size + i) % n;
            x.extend_from_slice(&self.features[s * self.n_features..(s + 1) * self.n_features]);
            y.extend_from_slice(&self.targets[s * self.n_targets..(s + 1) * self.n_targets]);
        }
        Ok(Batch {
            x: Tensor::from_values(&[size, self.n_features], &x, dtype)?,
            y,
        })
    }

    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [self.len(), self.n_features, self.n_targets] {
            let v = u32::try_from(v)
                .map_err(|_| Error::Config("dataset too large for u32 header".into()))?;
            w.write_all(&v.to_le_bytes())?;
        }
        for v in self.features.iter().chain(&self.targets) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[..4] != MAGIC {
            return Err(Error::Config(
                "dataset file does not start with SAMD".into(),
            ));
        }
        let field = |i: usize| {
            u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize
        };
        let (n, nf, nt) = (field(0), field(1), field(2));
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        let expected = 4 * n * (nf + nt);
        if body.len() != expected {
            return Err(Error::Dimension(format!(
                "dataset body has {} bytes, header implies {expected}",
                body.len()
            )));
        }
        let values: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (features, targets) = values.split_at(n * nf);
        Self::new(nf, nt, features.to_vec(), targets.to_vec())
    }
}
