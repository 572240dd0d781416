//! Datasets and federated partitioning.

mod idx;
mod partition;
mod synth;
mod transforms;

use serde::{Deserialize, Serialize};

pub use idx::{
    idx_dataset, load_idx, mnist_2k, read_idx_images, read_idx_labels, write_idx_images,
    write_idx_labels,
};
pub use partition::{
    dirichlet_label_partition, feature_shift_partition, DirichletOptions, FeatureShiftOptions,
    PartitionPlan, PlanClient,
};
pub use synth::{synth_gaussian_clients, synth_gaussian_dataset, SynthClientsSpec};
pub use transforms::DomainTransform;

use crate::error::{FedError, Result};
use crate::numerics::Tensor;

/// Pooled labeled dataset before partitioning.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `n × features`, values in `[0, 1]` for image data.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// `(rows, cols)` when each feature row is a flattened grayscale image.
    pub image: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(
        features: Tensor,
        labels: Vec<usize>,
        classes: usize,
        image: Option<(usize, usize)>,
    ) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(FedError::Validation(format!(
                "{} labels for features of shape {:?}",
                labels.len(),
                features.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(FedError::Validation(format!(
                "label {bad} outside 0..{classes}"
            )));
        }
        if let Some((h, w)) = image {
            if h * w != features.cols() {
                return Err(FedError::Validation(format!(
                    "image {h}x{w} does not match {} features",
                    features.cols()
                )));
            }
        }
        Ok(Dataset {
            features,
            labels,
            classes,
            image,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// First `n` samples.
    pub fn truncated(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        Dataset {
            features: self.features.select_rows(&idx),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
            image: self.image,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Participates in training.
    Train,
    /// Held out: never contributes updates, only evaluated.
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Labeled rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One client's private data, already split into a local-train part (used
/// for training and fine-tuning) and a local-test part (used for metrics).
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub group_id: usize,
    pub split: Split,
    pub train: Samples,
    pub test: Samples,
    /// Dataset row of every instance, local-train rows first.
    pub source_indices: Vec<usize>,
}

impl ClientShard {
    /// Builds a shard and splits it: rows are shuffled with the given rng and
    /// the first `round(fraction · N)` (at least one, leaving at least one for
    /// testing when `N ≥ 2`) become local-train.
    pub(crate) fn assemble(
        client_id: usize,
        group_id: usize,
        split: Split,
        features: Tensor,
        labels: Vec<usize>,
        mut source_indices: Vec<usize>,
        train_fraction: f64,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        use rand::seq::SliceRandom;
        let n = labels.len();
        if n == 0 {
            return Err(FedError::Partition(format!(
                "client {client_id} (group {group_id}) received no instances"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let n_train = if n == 1 {
            1
        } else {
            ((train_fraction * n as f64).round() as usize).clamp(1, n - 1)
        };
        let take = |rows: &[usize]| Samples {
            features: features.select_rows(rows),
            labels: rows.iter().map(|&i| labels[i]).collect(),
        };
        let train = take(&order[..n_train]);
        // A single-instance client is evaluated on its only sample.
        let test = if n == 1 {
            train.clone()
        } else {
            take(&order[n_train..])
        };
        source_indices = order.iter().map(|&i| source_indices[i]).collect();
        Ok(ClientShard {
            client_id,
            group_id,
            split,
            train,
            test,
            source_indices,
        })
    }

    /// Number of instances `N_i` held by the client.
    pub fn len(&self) -> usize {
        self.source_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_indices.is_empty()
    }

    /// All labels, local-train first.
    pub fn labels(&self) -> Vec<usize> {
        let mut l = self.train.labels.clone();
        if self.source_indices.len() > 1 {
            l.extend(&self.test.labels);
        }
        l
    }
}
