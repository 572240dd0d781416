//! Label-shift and feature-shift federated partitions.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{ClientShard, Dataset, DomainTransform, Split};
use crate::error::{FedError, Result};
use crate::numerics::Tensor;
use crate::rng::{derived, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirichletOptions {
    pub clients: usize,
    pub groups: usize,
    pub train_groups: usize,
    pub alpha: f64,
    pub train_fraction: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for DirichletOptions {
    fn default() -> Self {
        DirichletOptions {
            clients: 50,
            groups: 10,
            train_groups: 8,
            alpha: 0.5,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureShiftOptions {
    pub domains: Vec<DomainTransform>,
    pub clients_per_domain: usize,
    pub mixed_test_clients: usize,
    pub train_fraction: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for FeatureShiftOptions {
    fn default() -> Self {
        FeatureShiftOptions {
            domains: DomainTransform::default_domains(),
            clients_per_domain: 9,
            mixed_test_clients: 5,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanClient {
    pub client_id: usize,
    pub group_id: usize,
    pub split: Split,
    pub instances: usize,
    pub class_counts: Vec<usize>,
}

/// Audit record of a partition, exportable as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub mode: String,
    pub num_clients: usize,
    pub num_groups: usize,
    pub train_groups: Vec<usize>,
    /// Per-group class proportions: the Dirichlet draw for label shift, the
    /// realized label histogram for feature shift.
    pub label_distributions: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub domains: Vec<String>,
    pub clients: Vec<PlanClient>,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| FedError::Format(format!("partition plan: {e}")))
    }

    /// Plan describing already-built shards, with realized per-group label
    /// histograms.
    pub fn from_shards(
        mode: &str,
        shards: &[ClientShard],
        classes: usize,
        seed: u64,
    ) -> PartitionPlan {
        let num_groups = shards.iter().map(|s| s.group_id + 1).max().unwrap_or(0);
        let mut train_groups: Vec<usize> = shards
            .iter()
            .filter(|s| s.split == Split::Train)
            .map(|s| s.group_id)
            .collect();
        train_groups.sort_unstable();
        train_groups.dedup();
        PartitionPlan {
            mode: mode.into(),
            num_clients: shards.len(),
            num_groups,
            train_groups,
            label_distributions: realized_distributions(shards, num_groups, classes),
            alpha: None,
            domains: Vec::new(),
            clients: shards.iter().map(|s| plan_client(s, classes)).collect(),
            seed,
        }
    }

    pub fn split_counts(&self) -> (usize, usize) {
        let train = self
            .clients
            .iter()
            .filter(|c| c.split == Split::Train)
            .count();
        (train, self.clients.len() - train)
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f <= 1.0 {
        Ok(())
    } else {
        Err(FedError::Config(format!(
            "train_fraction {f} outside (0, 1]"
        )))
    }
}

fn dirichlet(rng: &mut impl Rng, alpha: f64, k: usize) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| FedError::Config(format!("dirichlet alpha {alpha}: {e}")))?;
    let mut p: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = p.iter().sum();
    if total > 0.0 && total.is_finite() {
        p.iter_mut().for_each(|v| *v /= total);
    } else {
        // every draw underflowed (tiny alpha): the limit is a one-hot vector
        p.iter_mut().for_each(|v| *v = 0.0);
        p[rng.random_range(0..k)] = 1.0;
    }
    Ok(p)
}

/// Integer counts summing to `total`, proportional to `weights`; leftover
/// units go to the largest fractional parts, ties to the lower index.
fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = if sum > 0.0 {
        weights.iter().map(|w| total as f64 * w / sum).collect()
    } else {
        vec![total as f64 / weights.len() as f64; weights.len()]
    };
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &g in order.iter().take(total.saturating_sub(assigned)) {
        counts[g] += 1;
    }
    counts
}

fn class_counts(labels: &[usize], classes: usize) -> Vec<usize> {
    let mut c = vec![0; classes];
    for &y in labels {
        c[y] += 1;
    }
    c
}

fn realized_distributions(shards: &[ClientShard], groups: usize, classes: usize) -> Vec<Vec<f64>> {
    (0..groups)
        .map(|g| {
            let mut counts = vec![0usize; classes];
            for s in shards.iter().filter(|s| s.group_id == g) {
                for (c, n) in class_counts(&s.labels(), classes).into_iter().enumerate() {
                    counts[c] += n;
                }
            }
            let total = counts.iter().sum::<usize>().max(1);
            counts.iter().map(|&n| n as f64 / total as f64).collect()
        })
        .collect()
}

fn plan_client(shard: &ClientShard, classes: usize) -> PlanClient {
    PlanClient {
        client_id: shard.client_id,
        group_id: shard.group_id,
        split: shard.split,
        instances: shard.len(),
        class_counts: class_counts(&shard.labels(), classes),
    }
}

/// Label-shift partition: one Dirichlet class-proportion vector per group;
/// each class's instances are divided among groups in those proportions and
/// dealt round-robin to the group's clients.
pub fn dirichlet_label_partition(
    dataset: &Dataset,
    opts: &DirichletOptions,
) -> Result<(PartitionPlan, Vec<ClientShard>)> {
    let (k, groups) = (opts.clients, opts.groups);
    if groups == 0 || k == 0 || k % groups != 0 {
        return Err(FedError::Config(format!(
            "{k} clients cannot be split evenly into {groups} groups"
        )));
    }
    if opts.train_groups == 0 || opts.train_groups >= groups {
        return Err(FedError::Config(format!(
            "train_groups must be in 1..{groups} so held-out groups exist"
        )));
    }
    if !(opts.alpha > 0.0 && opts.alpha.is_finite()) {
        return Err(FedError::Config(format!(
            "alpha {} must be positive",
            opts.alpha
        )));
    }
    check_fraction(opts.train_fraction)?;
    let classes = dataset.classes;
    let per_group = k / groups;

    let mut rng = derived(opts.seed, &[tag::PARTITION]);
    let proportions = (0..groups)
        .map(|_| dirichlet(&mut rng, opts.alpha, classes))
        .collect::<Result<Vec<_>>>()?;

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in dataset.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    if let Some(c) = by_class.iter().position(|v| v.is_empty()) {
        return Err(FedError::Partition(format!(
            "class {c} has no instances to allocate"
        )));
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut cursor = vec![0usize; groups];
    for (c, idx) in by_class.iter_mut().enumerate() {
        idx.shuffle(&mut rng);
        let weights: Vec<f64> = proportions.iter().map(|p| p[c]).collect();
        let counts = largest_remainder(idx.len(), &weights);
        let mut taken = 0;
        for (g, &cnt) in counts.iter().enumerate() {
            for &inst in &idx[taken..taken + cnt] {
                members[g * per_group + cursor[g] % per_group].push(inst);
                cursor[g] += 1;
            }
            taken += cnt;
        }
    }

    let mut shards = Vec::with_capacity(k);
    for (client, mut idx) in members.into_iter().enumerate() {
        let group = client / per_group;
        if idx.is_empty() {
            return Err(FedError::Partition(format!(
                "client {client} in group {group} received no instances; \
                 use fewer clients or a larger dataset"
            )));
        }
        idx.sort_unstable();
        let split = if group < opts.train_groups {
            Split::Train
        } else {
            Split::Test
        };
        let mut split_rng = derived(opts.seed, &[tag::LOCAL_SPLIT, client as u64]);
        shards.push(ClientShard::assemble(
            client,
            group,
            split,
            dataset.features.select_rows(&idx),
            idx.iter().map(|&i| dataset.labels[i]).collect(),
            idx,
            opts.train_fraction,
            &mut split_rng,
        )?);
    }

    let plan = PartitionPlan {
        mode: "dirichlet".into(),
        num_clients: k,
        num_groups: groups,
        train_groups: (0..opts.train_groups).collect(),
        label_distributions: proportions,
        alpha: Some(opts.alpha),
        domains: Vec::new(),
        clients: shards.iter().map(|s| plan_client(s, classes)).collect(),
        seed: opts.seed,
    };
    Ok((plan, shards))
}

/// Feature-shift partition. The shuffled dataset is dealt round-robin over
/// `domains · clients_per_domain + mixed_test_clients` slots. A domain
/// client's instances all pass through that domain's transform; a mixed
/// client cycles through the domains instance by instance. In each domain
/// the last client is held out; mixed clients form one extra held-out group.
pub fn feature_shift_partition(
    dataset: &Dataset,
    opts: &FeatureShiftOptions,
) -> Result<(PartitionPlan, Vec<ClientShard>)> {
    let domains = opts.domains.len();
    let cpd = opts.clients_per_domain;
    if domains == 0 {
        return Err(FedError::Config(
            "feature shift needs at least one domain".into(),
        ));
    }
    if cpd < 2 {
        return Err(FedError::Config(
            "clients_per_domain must be ≥ 2 (train clients plus one held out)".into(),
        ));
    }
    check_fraction(opts.train_fraction)?;
    for t in &opts.domains {
        t.validate()?;
    }
    let slots = domains * cpd + opts.mixed_test_clients;
    if dataset.len() < slots {
        return Err(FedError::Partition(format!(
            "{} instances cannot fill {slots} clients",
            dataset.len()
        )));
    }

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut derived(opts.seed, &[tag::PARTITION]));
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); slots];
    for (k, &inst) in order.iter().enumerate() {
        members[k % slots].push(inst);
    }

    let width = dataset.feature_dim();
    let mut shards = Vec::with_capacity(slots);
    for (client, idx) in members.into_iter().enumerate() {
        let (group, split) = if client < domains * cpd {
            let split = if client % cpd == cpd - 1 {
                Split::Test
            } else {
                Split::Train
            };
            (client / cpd, split)
        } else {
            (domains, Split::Test)
        };
        let mut data = Vec::with_capacity(idx.len() * width);
        for (j, &inst) in idx.iter().enumerate() {
            let domain = if group < domains { group } else { j % domains };
            let out = opts.domains[domain].apply(dataset.features.row(inst), dataset.image)?;
            data.extend(out);
        }
        let mut split_rng = derived(opts.seed, &[tag::LOCAL_SPLIT, client as u64]);
        shards.push(ClientShard::assemble(
            client,
            group,
            split,
            Tensor::matrix(idx.len(), width, data)?,
            idx.iter().map(|&i| dataset.labels[i]).collect(),
            idx,
            opts.train_fraction,
            &mut split_rng,
        )?);
    }

    let num_groups = domains + usize::from(opts.mixed_test_clients > 0);
    let classes = dataset.classes;
    let label_distributions = realized_distributions(&shards, num_groups, classes);
    let plan = PartitionPlan {
        mode: "feature_shift".into(),
        num_clients: slots,
        num_groups,
        train_groups: (0..domains).collect(),
        label_distributions,
        alpha: None,
        domains: opts.domains.iter().map(DomainTransform::name).collect(),
        clients: shards.iter().map(|s| plan_client(s, classes)).collect(),
        seed: opts.seed,
    };
    Ok((plan, shards))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_gaussian_dataset;
    use proptest::prelude::*;

    fn pooled(n: usize, classes: usize) -> Dataset {
        synth_gaussian_dataset(n, 16, classes, 1.0, Some((4, 4)), 3).unwrap()
    }

    fn assert_complete(ds: &Dataset, shards: &[ClientShard]) {
        let mut seen = vec![false; ds.len()];
        let mut total = 0;
        for s in shards {
            assert!(!s.is_empty());
            total += s.len();
            for &i in &s.source_indices {
                assert!(!seen[i], "instance {i} duplicated");
                seen[i] = true;
            }
        }
        assert_eq!(total, ds.len());
        assert!(seen.iter().all(|&b| b));
    }

    fn tv(p: &[f64], q: &[f64]) -> f64 {
        0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    #[test]
    fn fifty_clients_ten_groups() {
        let ds = pooled(2000, 10);
        let opts = DirichletOptions::default();
        let (plan, shards) = dirichlet_label_partition(&ds, &opts).unwrap();
        assert_eq!(plan.split_counts(), (40, 10));
        assert_eq!(plan.train_groups, (0..8).collect::<Vec<_>>());
        for g in 0..10 {
            assert_eq!(shards.iter().filter(|s| s.group_id == g).count(), 5);
        }
        for p in &plan.label_distributions {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_complete(&ds, &shards);
        // labels and features travel together
        for s in &shards {
            for (row, &src) in s.source_indices.iter().enumerate().take(s.train.len()) {
                assert_eq!(s.train.features.row(row), ds.features.row(src));
                assert_eq!(s.train.labels[row], ds.labels[src]);
            }
        }
    }

    #[test]
    fn huge_alpha_is_near_uniform() {
        let ds = pooled(500, 5);
        let opts = DirichletOptions {
            clients: 10,
            groups: 5,
            train_groups: 4,
            alpha: 1e6,
            ..Default::default()
        };
        let (plan, _) = dirichlet_label_partition(&ds, &opts).unwrap();
        for p in &plan.label_distributions {
            assert!(p.iter().all(|v| (v - 0.2).abs() < 0.01), "{p:?}");
        }
    }

    #[test]
    fn half_alpha_is_non_iid() {
        let ds = pooled(2000, 10);
        for seed in 0..5 {
            let opts = DirichletOptions {
                seed,
                ..Default::default()
            };
            let (plan, _) = dirichlet_label_partition(&ds, &opts).unwrap();
            let d = &plan.label_distributions;
            let worst = (0..d.len())
                .flat_map(|a| (0..d.len()).map(move |b| (a, b)))
                .map(|(a, b)| tv(&d[a], &d[b]))
                .fold(0.0, f64::max);
            assert!(worst > 0.2, "seed {seed}: max TV {worst}");
        }
    }

    #[test]
    fn deterministic_plan_and_json() {
        let ds = pooled(400, 4);
        let opts = DirichletOptions {
            clients: 8,
            groups: 4,
            train_groups: 3,
            seed: 9,
            ..Default::default()
        };
        let a = dirichlet_label_partition(&ds, &opts).unwrap();
        let b = dirichlet_label_partition(&ds, &opts).unwrap();
        assert_eq!(a, b);
        let json = a.0.to_json().unwrap();
        let back: PartitionPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a.0);
    }

    #[test]
    fn partition_errors() {
        let ds = pooled(100, 4);
        let bad_div = DirichletOptions {
            clients: 7,
            groups: 2,
            train_groups: 1,
            ..Default::default()
        };
        assert!(matches!(
            dirichlet_label_partition(&ds, &bad_div),
            Err(FedError::Config(_))
        ));
        let no_test = DirichletOptions {
            clients: 4,
            groups: 2,
            train_groups: 2,
            ..Default::default()
        };
        assert!(matches!(
            dirichlet_label_partition(&ds, &no_test),
            Err(FedError::Config(_))
        ));

        let mut missing = ds.clone();
        missing.classes = 5;
        let opts = DirichletOptions {
            clients: 4,
            groups: 2,
            train_groups: 1,
            ..Default::default()
        };
        match dirichlet_label_partition(&missing, &opts) {
            Err(FedError::Partition(msg)) => assert!(msg.contains("class 4")),
            other => panic!("{other:?}"),
        }

        let tiny = pooled(6, 2);
        let many = DirichletOptions {
            clients: 20,
            groups: 2,
            train_groups: 1,
            ..Default::default()
        };
        assert!(matches!(
            dirichlet_label_partition(&tiny, &many),
            Err(FedError::Partition(_))
        ));
    }

    #[test]
    fn remainder_allocation() {
        assert_eq!(largest_remainder(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(largest_remainder(7, &[0.5, 0.25, 0.25]), vec![3, 2, 2]);
        assert_eq!(largest_remainder(5, &[0.0, 1.0]), vec![0, 5]);
    }

    #[test]
    fn default_feature_shift_layout() {
        let ds = pooled(1000, 10);
        let (plan, shards) = feature_shift_partition(&ds, &FeatureShiftOptions::default()).unwrap();
        assert_eq!(shards.len(), 50);
        assert_eq!(plan.split_counts(), (40, 10));
        for d in 0..5 {
            let in_domain: Vec<_> = shards.iter().filter(|s| s.group_id == d).collect();
            assert_eq!(in_domain.len(), 9);
            assert_eq!(
                in_domain.iter().filter(|s| s.split == Split::Train).count(),
                8
            );
        }
        let mixed: Vec<_> = shards.iter().filter(|s| s.group_id == 5).collect();
        assert_eq!(mixed.len(), 5);
        assert!(mixed.iter().all(|s| s.split == Split::Test));
        assert_complete(&ds, &shards);
        for p in &plan.label_distributions {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_identity_domain_is_even_iid_split() {
        let ds = pooled(103, 3);
        let opts = FeatureShiftOptions {
            domains: vec![DomainTransform::Identity],
            clients_per_domain: 4,
            mixed_test_clients: 0,
            ..Default::default()
        };
        let (_, shards) = feature_shift_partition(&ds, &opts).unwrap();
        let sizes: Vec<usize> = shards.iter().map(ClientShard::len).collect();
        assert_eq!(sizes, vec![26, 26, 26, 25]);
        assert_complete(&ds, &shards);
        for s in &shards {
            for (row, &src) in s.source_indices.iter().enumerate().take(s.train.len()) {
                assert_eq!(s.train.features.row(row), ds.features.row(src));
            }
        }
    }

    #[test]
    fn inversion_separates_mean_intensity() {
        let ds = pooled(400, 4);
        let opts = FeatureShiftOptions {
            domains: vec![DomainTransform::Identity, DomainTransform::Invert],
            clients_per_domain: 3,
            mixed_test_clients: 0,
            ..Default::default()
        };
        let (_, shards) = feature_shift_partition(&ds, &opts).unwrap();
        let pooled_mean = ds.features.data().iter().sum::<f64>() / ds.features.len() as f64;
        let mean = |s: &ClientShard| {
            let t = &s.train.features;
            t.data().iter().sum::<f64>() / t.len() as f64
        };
        // inversion maps mean m to 1 − m, so the domains sit on opposite
        // sides of 1/2 whenever the base mean is away from it
        let gap = (pooled_mean - 0.5).abs();
        assert!(gap > 0.005, "{pooled_mean}");
        for s in &shards {
            let m = mean(s);
            let expect = if s.group_id == 0 {
                pooled_mean
            } else {
                1.0 - pooled_mean
            };
            assert!((m - expect).abs() < gap, "client {} mean {m}", s.client_id);
        }
    }

    #[test]
    fn feature_shift_rejects_bad_geometry() {
        let flat = synth_gaussian_dataset(50, 10, 2, 1.0, None, 1).unwrap();
        let opts = FeatureShiftOptions {
            domains: vec![
                DomainTransform::Identity,
                DomainTransform::Rotate { degrees: 15.0 },
            ],
            clients_per_domain: 2,
            mixed_test_clients: 1,
            ..Default::default()
        };
        assert!(matches!(
            feature_shift_partition(&flat, &opts),
            Err(FedError::Validation(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn dirichlet_partition_is_complete(
            seed in 0u64..1000,
            alpha in 0.05f64..5.0,
            groups in 1usize..5,
            per_group in 1usize..4,
        ) {
            let ds = pooled(300, 5);
            let opts = DirichletOptions {
                clients: (groups + 1) * per_group,
                groups: groups + 1,
                train_groups: groups,
                alpha,
                seed,
                ..Default::default()
            };
            match dirichlet_label_partition(&ds, &opts) {
                Ok((plan, shards)) => {
                    assert_complete(&ds, &shards);
                    for p in &plan.label_distributions {
                        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    }
                }
                // skewed draws with small alpha may starve a client
                Err(FedError::Partition(_)) => {}
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
    }
}
