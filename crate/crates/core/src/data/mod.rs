//! Datasets: the point text format, manifests, synthetic shapes and
//! mini-batch ordering.

mod manifest;
mod points;
mod synth;

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use manifest::{load_manifest, write_manifest, DatasetManifest, Split};
pub use points::{format_points, load_point_file, parse_points, write_point_file};
pub use synth::{generate_synthetic, sample_shape, ShapeKind, SyntheticSpec};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::model::Task;

/// One labeled cloud. `label` is the class for classification and the
/// category for segmentation; part labels live on the cloud itself.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub cloud: PointCloud,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    /// Class names, or category names for segmentation.
    pub names: Vec<String>,
    /// Global part-label range of each category (segmentation only).
    pub part_ranges: Vec<Range<usize>>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.names.len()
    }

    /// Total number of part labels across categories.
    pub fn num_parts(&self) -> usize {
        self.part_ranges.iter().map(|r| r.end).max().unwrap_or(0)
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.names.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// An empty dataset with the same label layout.
    pub fn empty_like(&self) -> Dataset {
        Dataset {
            samples: Vec::new(),
            ..self.clone()
        }
    }

    /// Checks labels against the declared classes, categories and part ranges.
    pub fn validate(&self) -> Result<()> {
        if self.task == Task::Segmentation && self.part_ranges.len() != self.names.len() {
            return Err(Error::Data(format!(
                "{} categories but {} part ranges",
                self.names.len(),
                self.part_ranges.len()
            )));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.label >= self.names.len() {
                return Err(Error::Data(format!(
                    "sample {i} has label {} but only {} are declared",
                    s.label,
                    self.names.len()
                )));
            }
            if self.task == Task::Segmentation {
                let range = &self.part_ranges[s.label];
                let parts = s.cloud.labels().ok_or_else(|| {
                    Error::Data(format!("sample {i} has no per-point part labels"))
                })?;
                if let Some(bad) = parts.iter().find(|p| !range.contains(p)) {
                    return Err(Error::Data(format!(
                        "sample {i}: part {bad} outside {:?} for category {}",
                        range, self.names[s.label]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sample indices split into mini-batches. The order is a shuffle that
/// depends only on `(seed, epoch)`; the final short batch is kept.
pub fn batch_iterator(
    len: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // stream 0 is the run's main stream; each epoch shuffles on its own
    rng.set_stream(epoch as u64 + 1);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
