//! In-memory image datasets, splits and per-epoch batch plans.

mod folder;
mod synth;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub use folder::{load_image_folder, save_image_folder, FolderLoad};
pub use synth::{synth_dataset, SynthParams};

/// Images stored channel-last, `[N, H, W, C]`, as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<f64>,
    labels: Vec<usize>,
    image_size: usize,
    channels: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        images: Vec<f64>,
        labels: Vec<usize>,
        image_size: usize,
        channels: usize,
        num_classes: usize,
    ) -> Result<Self> {
        let per = image_size * image_size * channels;
        if per == 0 || images.len() != labels.len() * per {
            return Err(Error::Data(format!(
                "{} values for {} images of {image_size}×{image_size}×{channels}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Data(format!("label {bad} outside 0..{num_classes}")));
        }
        if images.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite pixel value".into()));
        }
        Ok(Dataset {
            images,
            labels,
            image_size,
            channels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample_len(&self) -> usize {
        self.image_size * self.image_size * self.channels
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            image_size: self.image_size,
            channels: self.channels,
            num_classes: self.num_classes,
        }
    }

    /// Stack the given samples into `[B, H, W, C]`, mirroring left-right
    /// wherever `flips[k]` is set.
    pub fn batch(&self, indices: &[usize], flips: &[bool]) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() || flips.len() != indices.len() {
            return Err(Error::Usage(format!(
                "batch of {} indices with {} flip flags",
                indices.len(),
                flips.len()
            )));
        }
        let (s, c) = (self.image_size, self.channels);
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for (&i, &flip) in indices.iter().zip(flips) {
            if i >= self.len() {
                return Err(Error::Usage(format!("sample {i} outside dataset of {}", self.len())));
            }
            let img = self.image(i);
            if flip {
                for y in 0..s {
                    for x in (0..s).rev() {
                        let at = (y * s + x) * c;
                        data.extend_from_slice(&img[at..at + c]);
                    }
                }
            } else {
                data.extend_from_slice(img);
            }
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::new(&[indices.len(), s, s, c], data)?, labels))
    }

    /// SHA-256 over labels and pixel bits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for &y in &self.labels {
            h.update((y as u64).to_le_bytes());
        }
        for v in &self.images {
            h.update(v.to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }

    /// Randomly hold out `fraction` of the samples: `(kept, held_out)`.
    pub fn split_off(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Config(format!("split fraction {fraction} outside [0, 1)")));
        }
        let held = ((self.len() as f64) * fraction).round() as usize;
        if held == 0 || held == self.len() {
            return Err(Error::Data(format!(
                "cannot hold out {fraction} of {} samples",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::stream(seed, "validation-split"));
        let (kept, out) = order.split_at(self.len() - held);
        let mut kept = kept.to_vec();
        let mut out = out.to_vec();
        kept.sort_unstable();
        out.sort_unstable();
        Ok((self.subset(&kept), self.subset(&out)))
    }
}

/// Disjoint train / validation / test sets.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Splits {
    /// Validation carved as `val_fraction` of `train`.
    pub fn carve(train: Dataset, test: Dataset, val_fraction: f64, seed: u64) -> Result<Self> {
        let (train, val) = train.split_off(val_fraction, seed)?;
        Ok(Splits { train, val, test })
    }

    pub fn num_classes(&self) -> usize {
        self.train.num_classes()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub flips: Vec<bool>,
}

/// Sample order and flip decisions for one epoch. Teacher and student read
/// the same plan, so both see identical images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batches: Vec<Batch>,
}

impl BatchPlan {
    pub fn for_epoch(len: usize, batch_size: usize, seed: u64, epoch: usize, augment: bool) -> Result<Self> {
        if batch_size == 0 || len == 0 {
            return Err(Error::Config("batch size and dataset length must be positive".into()));
        }
        let mut rng = rng::stream(seed, &format!("batch-plan/{epoch}"));
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        let flips: Vec<bool> = (0..len).map(|_| augment && rng.random_bool(0.5)).collect();
        let batches = order
            .chunks(batch_size)
            .zip(flips.chunks(batch_size))
            .map(|(i, f)| Batch {
                indices: i.to_vec(),
                flips: f.to_vec(),
            })
            .collect();
        Ok(BatchPlan { batches })
    }

    /// Sequential batches without flips, for evaluation.
    pub fn sequential(len: usize, batch_size: usize) -> Self {
        let order: Vec<usize> = (0..len).collect();
        BatchPlan {
            batches: order
                .chunks(batch_size.max(1))
                .map(|c| Batch {
                    indices: c.to_vec(),
                    flips: vec![false; c.len()],
                })
                .collect(),
        }
    }

    pub fn num_samples(&self) -> usize {
        self.batches.iter().map(|b| b.indices.len()).sum()
    }
}
