//! Gaussian-blob corpora for fast experiments.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ClientShard, Dataset, Split};
use crate::error::{FedError, Result};
use crate::numerics::Tensor;
use crate::rng::{derived, tag};

/// Synthetic clients: sample = class mean + client offset + isotropic noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthClientsSpec {
    pub clients: usize,
    pub groups: usize,
    /// Groups `0..train_groups` train; the rest are held out.
    pub train_groups: usize,
    pub samples_per_client: usize,
    pub dim: usize,
    pub classes: usize,
    /// Standard deviation of each client's mean offset.
    pub client_shift: f64,
    /// Standard deviation of the class means.
    pub class_sep: f64,
    pub noise: f64,
    pub train_fraction: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SynthClientsSpec {
    fn default() -> Self {
        SynthClientsSpec {
            clients: 20,
            groups: 5,
            train_groups: 4,
            samples_per_client: 100,
            dim: 32,
            classes: 10,
            client_shift: 1.0,
            class_sep: 1.0,
            noise: 1.0,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl SynthClientsSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clients", self.clients),
            ("groups", self.groups),
            ("samples_per_client", self.samples_per_client),
            ("dim", self.dim),
            ("classes", self.classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(FedError::Config(format!(
                "synthetic {name} must be positive"
            )));
        }
        if self.groups > self.clients {
            return Err(FedError::Config(format!(
                "{} groups for {} clients",
                self.groups, self.clients
            )));
        }
        if self.train_groups == 0 || self.train_groups > self.groups {
            return Err(FedError::Config(format!(
                "train_groups must be in 1..={}",
                self.groups
            )));
        }
        for (name, v) in [
            ("client_shift", self.client_shift),
            ("class_sep", self.class_sep),
            ("noise", self.noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(FedError::Config(format!("synthetic {name} must be ≥ 0")));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(FedError::Config("train_fraction must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Group of client `i`: contiguous, as equal as possible.
    pub fn group_of(&self, client: usize) -> usize {
        client * self.groups / self.clients
    }
}

fn normal_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            scale * e
        })
        .collect()
}

fn class_means(seed: u64, classes: usize, dim: usize, sep: f64) -> Vec<Vec<f64>> {
    let mut rng = derived(seed, &[tag::SYNTH, 0]);
    (0..classes)
        .map(|_| normal_vec(&mut rng, dim, sep))
        .collect()
}

/// Generates one shard per client. Labels are uniform over classes.
pub fn synth_gaussian_clients(spec: &SynthClientsSpec) -> Result<Vec<ClientShard>> {
    spec.validate()?;
    let means = class_means(spec.seed, spec.classes, spec.dim, spec.class_sep);
    let n = spec.samples_per_client;
    (0..spec.clients)
        .map(|i| {
            let mut rng = derived(spec.seed, &[tag::SYNTH, 1, i as u64]);
            let offset = normal_vec(&mut rng, spec.dim, spec.client_shift);
            let mut data = Vec::with_capacity(n * spec.dim);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let y = rng.random_range(0..spec.classes);
                labels.push(y);
                for (m, o) in means[y].iter().zip(&offset) {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    data.push(m + o + spec.noise * e);
                }
            }
            let group = spec.group_of(i);
            let split = if group < spec.train_groups {
                Split::Train
            } else {
                Split::Test
            };
            let mut split_rng = derived(spec.seed, &[tag::LOCAL_SPLIT, i as u64]);
            ClientShard::assemble(
                i,
                group,
                split,
                Tensor::matrix(n, spec.dim, data)?,
                labels,
                (i * n..(i + 1) * n).collect(),
                spec.train_fraction,
                &mut split_rng,
            )
        })
        .collect()
}

/// Pooled Gaussian-blob dataset with no client structure. When `image` is
/// given, `dim` must equal `rows · cols` and values are squashed into
/// `[0, 1]` by a logistic map so pixel transforms apply.
pub fn synth_gaussian_dataset(
    n: usize,
    dim: usize,
    classes: usize,
    class_sep: f64,
    image: Option<(usize, usize)>,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || dim == 0 || classes == 0 {
        return Err(FedError::Config(
            "synthetic dataset sizes must be positive".into(),
        ));
    }
    let means = class_means(seed, classes, dim, class_sep);
    let mut rng = derived(seed, &[tag::SYNTH, 2]);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for k in 0..n {
        // cycle classes so every class is present whenever n ≥ classes
        let y = k % classes;
        labels.push(y);
        for m in &means[y] {
            let e: f64 = StandardNormal.sample(&mut rng);
            let v = m + e;
            data.push(if image.is_some() {
                1.0 / (1.0 + (-v).exp())
            } else {
                v
            });
        }
    }
    Dataset::new(Tensor::matrix(n, dim, data)?, labels, classes, image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ra::{between_client_scatter, within_client_scatter};

    fn spec() -> SynthClientsSpec {
        SynthClientsSpec {
            clients: 6,
            groups: 3,
            train_groups: 2,
            samples_per_client: 40,
            dim: 4,
            classes: 3,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn layout_and_determinism() {
        let a = synth_gaussian_clients(&spec()).unwrap();
        let b = synth_gaussian_clients(&spec()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        let groups: Vec<usize> = a.iter().map(|s| s.group_id).collect();
        assert_eq!(groups, vec![0, 0, 1, 1, 2, 2]);
        assert_eq!(a[4].split, Split::Test);
        assert_eq!(a[3].split, Split::Train);
        for s in &a {
            assert_eq!(s.len(), 40);
            assert_eq!(s.train.len(), 32);
            assert_eq!(s.test.len(), 8);
            assert!(s.labels().iter().all(|&y| y < 3));
        }
        let mut other = spec();
        other.seed = 12;
        assert_ne!(synth_gaussian_clients(&other).unwrap(), a);
    }

    #[test]
    fn zero_shift_means_identical_distribution() {
        // With no client offset every client draws from the same mixture, so
        // same-label samples at the same stream position differ only by noise.
        let mut s = spec();
        s.client_shift = 0.0;
        s.noise = 0.0;
        let shards = synth_gaussian_clients(&s).unwrap();
        let means = class_means(s.seed, s.classes, s.dim, s.class_sep);
        for shard in &shards {
            for (row, &y) in shard.train.labels.iter().enumerate() {
                assert_eq!(shard.train.features.row(row), means[y].as_slice());
            }
        }
    }

    fn client_batches(shards: &[ClientShard]) -> Vec<Vec<Vec<f64>>> {
        shards
            .iter()
            .map(|s| {
                let mut rows: Vec<Vec<f64>> = (0..s.train.len())
                    .map(|r| s.train.features.row(r).to_vec())
                    .collect();
                rows.extend((0..s.test.len()).map(|r| s.test.features.row(r).to_vec()));
                rows
            })
            .collect()
    }

    #[test]
    fn large_shift_dominates_within_scatter() {
        let s = SynthClientsSpec {
            clients: 2,
            groups: 1,
            train_groups: 1,
            client_shift: 10.0,
            ..spec()
        };
        let shards = synth_gaussian_clients(&s).unwrap();
        let batches: Vec<Tensor> = client_batches(&shards)
            .iter()
            .map(|rows| Tensor::from_rows(rows).unwrap())
            .collect();
        let sw = within_client_scatter(&batches).unwrap();
        let sb = between_client_scatter(&batches).unwrap();
        assert!(
            sb.as_tensor().trace() > sw.as_tensor().trace(),
            "between {} within {}",
            sb.as_tensor().trace(),
            sw.as_tensor().trace()
        );
    }

    #[test]
    fn rejects_bad_specs() {
        for bad in [
            SynthClientsSpec {
                clients: 0,
                ..spec()
            },
            SynthClientsSpec {
                train_groups: 4,
                ..spec()
            },
            SynthClientsSpec {
                groups: 7,
                ..spec()
            },
            SynthClientsSpec {
                noise: -1.0,
                ..spec()
            },
        ] {
            assert!(matches!(
                synth_gaussian_clients(&bad),
                Err(FedError::Config(_))
            ));
        }
    }

    #[test]
    fn pooled_dataset_covers_classes() {
        let ds = synth_gaussian_dataset(30, 16, 3, 1.0, Some((4, 4)), 1).unwrap();
        assert_eq!(ds.len(), 30);
        for c in 0..3 {
            assert_eq!(ds.labels.iter().filter(|&&y| y == c).count(), 10);
        }
        assert!(ds.features.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
