//! Declarative experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    dirichlet_label_partition, feature_shift_partition, load_idx, mnist_2k, synth_gaussian_clients,
    ClientShard, Dataset, DirichletOptions, FeatureShiftOptions, PartitionPlan, SynthClientsSpec,
};
use crate::error::{FedError, Result};
use crate::federation::{FedConfig, Strategy};
use crate::model::{ModelConfig, ModelDims};

/// How a pooled dataset is split across clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionSpec {
    Dirichlet(DirichletOptions),
    FeatureShift(FeatureShiftOptions),
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec::Dirichlet(DirichletOptions::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Gaussian-blob clients generated on the fly.
    Synthetic(SynthClientsSpec),
    /// The 2000-image MNIST subset compiled into the binary.
    Mnist2k {
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default)]
        partition: PartitionSpec,
    },
    /// An IDX image/label file pair.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default)]
        partition: PartitionSpec,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic(SynthClientsSpec::default())
    }
}

/// One file fully determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub strategy: Strategy,
    pub federation: FedConfig,
    pub model: ModelConfig,
    pub output_dir: Option<PathBuf>,
    /// Save a checkpoint every this many rounds (0: only after the last).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::default(),
            strategy: Strategy::FedCs,
            federation: FedConfig::default(),
            model: ModelConfig::default(),
            output_dir: None,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

/// Where each protocol default comes from, echoed with every run.
pub const PROVENANCE: &[(&str, &str)] = &[
    (
        "federation.sampled_per_round",
        "10: reference protocol samples ten clients per round",
    ),
    (
        "federation.lr0",
        "0.005: reference protocol initial client learning rate",
    ),
    (
        "federation.lr_decay",
        "0.8: reference protocol decay factor",
    ),
    (
        "federation.lr_decay_every",
        "50: reference protocol decays every 50 rounds",
    ),
    (
        "federation.ra_cadence",
        "5: reference protocol updates the projection every five rounds",
    ),
    (
        "federation.ra.eta",
        "0.001: reference protocol alignment learning rate",
    ),
    (
        "federation.ra.lambda",
        "0.001: reference protocol alignment learning rate",
    ),
    ("federation.local_epochs", "1: one local epoch per round"),
    (
        "federation.fine_tune_epochs",
        "1: reference protocol fine-tunes baselines for one epoch",
    ),
    (
        "federation.batch_size",
        "16: not fixed by the reference protocol; simulator choice",
    ),
    (
        "dataset.partition.clients",
        "50 clients in 10 label groups, 8 training: reference label-shift layout",
    ),
    (
        "dataset.partition.alpha",
        "0.5: Dirichlet concentration, not fixed by the reference protocol",
    ),
    (
        "dataset.partition.clients_per_domain",
        "9 per domain (8 train, 1 held out) plus 5 mixed: reference feature-shift layout",
    ),
    (
        "model.insertion",
        "fc2: alignment on the second fully connected layer",
    ),
];

impl ExperimentConfig {
    /// Parses JSON; errors carry the line and column.
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        // serde_json's message already ends with "at line L column C".
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| FedError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| FedError::io(path, e))?;
        ExperimentConfig::from_json(&text).map_err(|e| match e {
            FedError::Config(m) => FedError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.fed_config().validate()?;
        if self.federation.rounds == 0 {
            return Err(FedError::Config(
                "federation.rounds must be at least 1".into(),
            ));
        }
        match &self.dataset {
            DatasetSpec::Synthetic(s) => s.validate(),
            DatasetSpec::Mnist2k { limit, .. } | DatasetSpec::Idx { limit, .. } => {
                if *limit == Some(0) {
                    return Err(FedError::Config("dataset.limit must be positive".into()));
                }
                Ok(())
            }
        }
    }

    /// Federation settings with the experiment seed applied.
    pub fn fed_config(&self) -> FedConfig {
        FedConfig {
            seed: self.seed,
            ..self.federation.clone()
        }
    }

    /// SHA-256 of the canonical JSON with run-length and output settings
    /// blanked, so a checkpoint can be resumed with more rounds or
    /// elsewhere but not under different training settings.
    pub fn hash(&self) -> [u8; 32] {
        let mut c = self.clone();
        c.federation.rounds = 0;
        c.output_dir = None;
        c.checkpoint_every = 0;
        let json = serde_json::to_string(&c).unwrap_or_default();
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        h.update(self.seed.to_le_bytes());
        h.finalize().into()
    }

    /// The resolved configuration plus provenance notes.
    pub fn echo(&self) -> serde_json::Value {
        let notes: serde_json::Map<String, serde_json::Value> = PROVENANCE
            .iter()
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v.to_string())))
            .collect();
        serde_json::json!({
            "config": self,
            "config_hash": hex(&self.hash()),
            "notes": notes,
        })
    }

    /// Builds client shards and the audit plan.
    pub fn build_shards(&self) -> Result<Built> {
        match &self.dataset {
            DatasetSpec::Synthetic(spec) => {
                let spec = SynthClientsSpec {
                    seed: self.seed,
                    ..spec.clone()
                };
                let shards = synth_gaussian_clients(&spec)?;
                let plan =
                    PartitionPlan::from_shards("synthetic", &shards, spec.classes, self.seed);
                Ok(Built {
                    dims: ModelDims {
                        input: spec.dim,
                        classes: spec.classes,
                        image: None,
                    },
                    shards,
                    plan,
                })
            }
            DatasetSpec::Mnist2k { limit, partition } => {
                self.partition(limited(mnist_2k()?, *limit), partition)
            }
            DatasetSpec::Idx {
                images,
                labels,
                limit,
                partition,
            } => self.partition(limited(load_idx(images, labels)?, *limit), partition),
        }
    }

    fn partition(&self, ds: Dataset, spec: &PartitionSpec) -> Result<Built> {
        let dims = ModelDims {
            input: ds.feature_dim(),
            classes: ds.classes,
            image: ds.image,
        };
        let (plan, shards) = match spec {
            PartitionSpec::Dirichlet(o) => dirichlet_label_partition(
                &ds,
                &DirichletOptions {
                    seed: self.seed,
                    ..o.clone()
                },
            )?,
            PartitionSpec::FeatureShift(o) => feature_shift_partition(
                &ds,
                &FeatureShiftOptions {
                    seed: self.seed,
                    ..o.clone()
                },
            )?,
        };
        Ok(Built { dims, shards, plan })
    }
}

fn limited(ds: Dataset, limit: Option<usize>) -> Dataset {
    match limit {
        Some(n) => ds.truncated(n),
        None => ds,
    }
}

/// Partitioned data ready for a simulation.
#[derive(Debug, Clone)]
pub struct Built {
    pub dims: ModelDims,
    pub shards: Vec<ClientShard>,
    pub plan: PartitionPlan,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_describe_the_desk_scale_run() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let built = c.build_shards().unwrap();
        assert_eq!(built.shards.len(), 20);
        assert_eq!(built.plan.split_counts(), (16, 4));
        assert_eq!(c.federation.rounds, 60);
        assert_eq!(c.federation.sampled_per_round, 10);
    }

    #[test]
    fn parse_errors_point_at_lines() {
        let text = "{\n  \"strategy\": \"fedcs\",\n  \"bogus\": 1\n}";
        match ExperimentConfig::from_json(text) {
            Err(FedError::Config(msg)) => assert!(msg.contains("line 3"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let seed_inside = r#"{"federation": {"seed": 3}}"#;
        assert!(ExperimentConfig::from_json(seed_inside).is_err());
        let bad_lr = r#"{"federation": {"lr_decay": 1.5}}"#;
        assert!(ExperimentConfig::from_json(bad_lr).is_err());
    }

    #[test]
    fn nested_specs_parse() {
        let text = r#"{
            "dataset": {"source": "mnist2k", "limit": 400,
                        "partition": {"mode": "feature_shift", "clients_per_domain": 3,
                                      "mixed_test_clients": 2,
                                      "domains": [{"kind": "identity"}, {"kind": "invert"}]}},
            "strategy": "fedavg_ft",
            "model": {"insertion": "fc1", "rank": 32},
            "seed": 4
        }"#;
        let c = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(c.strategy, Strategy::FedAvgFt);
        let built = c.build_shards().unwrap();
        assert_eq!(built.shards.len(), 8);
        assert_eq!(built.dims.input, 784);
        assert_eq!(built.plan.seed, 4);
    }

    #[test]
    fn hash_ignores_run_length_only() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.federation.rounds = 500;
        b.output_dir = Some("elsewhere".into());
        b.checkpoint_every = 7;
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.federation.lr0 = 0.01;
        assert_ne!(a.hash(), c.hash());
        let mut d = a.clone();
        d.seed = 1;
        assert_ne!(a.hash(), d.hash());
    }

    #[test]
    fn echo_carries_notes() {
        let e = ExperimentConfig::default().echo();
        assert!(e["notes"]["federation.sampled_per_round"]
            .as_str()
            .unwrap()
            .contains("ten"));
        assert_eq!(e["config_hash"].as_str().unwrap().len(), 64);
    }
}
