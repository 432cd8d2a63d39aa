use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::{ClientShard, LabeledDataset};
use crate::error::{Error, Result};
use crate::seed::{derive_rng, Purpose};

/// Result of [`filter_labels`].
#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    pub dataset: LabeledDataset,
    /// `original_labels[new] == old` when re-indexed, identity otherwise.
    pub original_labels: Vec<usize>,
    /// Row of each kept sample in the input dataset.
    pub source_indices: Vec<usize>,
}

/// Keeps samples whose label is in `keep`, preserving order. With `reindex`
/// the kept labels are renumbered densely in ascending order.
pub fn filter_labels(
    ds: &LabeledDataset,
    keep: &BTreeSet<usize>,
    reindex: bool,
) -> Result<Filtered> {
    let source_indices: Vec<usize> = (0..ds.len())
        .filter(|&i| keep.contains(&ds.label(i)))
        .collect();
    if source_indices.is_empty() {
        return Err(Error::Empty(format!(
            "no samples carry any of the labels {keep:?}"
        )));
    }
    let mut dataset = ds.select(&source_indices);
    let original_labels = if reindex {
        let order: Vec<usize> = keep.iter().copied().collect();
        for l in dataset.labels.iter_mut() {
            *l = order.binary_search(l).expect("label was filtered by keep");
        }
        dataset.classes = order.len();
        order
    } else {
        (0..ds.classes()).collect()
    };
    Ok(Filtered {
        dataset,
        original_labels,
        source_indices,
    })
}

/// Which labels each client holds.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub n_clients: usize,
    pub labels_per_client: Vec<BTreeSet<usize>>,
    pub per_client_cap: Option<usize>,
    pub seed: u64,
}

impl PartitionPlan {
    /// Clients `2k` and `2k+1` share the label pair `{2k, 2k+1}`.
    pub fn pairwise(n_clients: usize, per_client_cap: Option<usize>, seed: u64) -> Self {
        let labels_per_client = (0..n_clients)
            .map(|c| {
                let base = 2 * (c / 2);
                BTreeSet::from([base, base + 1])
            })
            .collect();
        Self {
            n_clients,
            labels_per_client,
            per_client_cap,
            seed,
        }
    }
}

/// Splits `ds` across clients.
///
/// Clients with identical label sets form a group; the group's samples are
/// shuffled and divided evenly (earlier clients take any remainder), then
/// each shard is truncated to the cap. Distinct groups must use disjoint
/// label sets so shards never overlap.
pub fn partition(ds: &LabeledDataset, plan: &PartitionPlan) -> Result<Vec<ClientShard>> {
    if plan.labels_per_client.len() != plan.n_clients {
        return Err(Error::Invalid(format!(
            "plan lists label sets for {} clients, expected {}",
            plan.labels_per_client.len(),
            plan.n_clients
        )));
    }
    if plan.per_client_cap == Some(0) {
        return Err(Error::Invalid("per-client cap must be positive".into()));
    }
    let mut groups: Vec<(&BTreeSet<usize>, Vec<usize>)> = Vec::new();
    for (client, set) in plan.labels_per_client.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::Invalid(format!(
                "client {client} has an empty label set"
            )));
        }
        match groups.iter_mut().find(|(s, _)| *s == set) {
            Some((_, members)) => members.push(client),
            None => groups.push((set, vec![client])),
        }
    }
    for (i, (a, _)) in groups.iter().enumerate() {
        for (b, _) in &groups[i + 1..] {
            if !a.is_disjoint(b) {
                return Err(Error::Invalid(format!(
                    "label sets {a:?} and {b:?} overlap without being identical"
                )));
            }
        }
    }

    let mut shards: Vec<Option<ClientShard>> = vec![None; plan.n_clients];
    for (g, (set, members)) in groups.iter().enumerate() {
        let mut pool: Vec<usize> = (0..ds.len())
            .filter(|&i| set.contains(&ds.label(i)))
            .collect();
        if pool.is_empty() {
            return Err(Error::Empty(format!(
                "dataset holds no samples with labels {set:?}"
            )));
        }
        pool.shuffle(&mut derive_rng(plan.seed, Purpose::Partition, g as u64, 0));
        let (base, extra) = (pool.len() / members.len(), pool.len() % members.len());
        let mut start = 0;
        for (slot, &client) in members.iter().enumerate() {
            let take = base + usize::from(slot < extra);
            let mut idx = pool[start..start + take].to_vec();
            start += take;
            if let Some(cap) = plan.per_client_cap {
                idx.truncate(cap);
            }
            if idx.is_empty() {
                return Err(Error::Empty(format!(
                    "client {client} would receive no samples"
                )));
            }
            shards[client] = Some(ClientShard {
                client_id: client,
                dataset: ds.select(&idx),
                source_indices: idx,
            });
        }
    }
    Ok(shards
        .into_iter()
        .map(|s| s.expect("every client belongs to a group"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::InputShape;

    /// `per_label` samples for each of `classes` labels, feature = row index.
    fn toy(classes: usize, per_label: usize) -> LabeledDataset {
        let labels: Vec<usize> = (0..classes * per_label).map(|i| i % classes).collect();
        let features = (0..labels.len()).map(|i| i as f64).collect();
        LabeledDataset::new(InputShape::flat(1), classes, features, labels).unwrap()
    }

    #[test]
    fn keep_all_is_identity() {
        let ds = toy(4, 5);
        let f = filter_labels(&ds, &(0..4).collect(), true).unwrap();
        assert_eq!(f.dataset, ds);
    }

    #[test]
    fn keep_none_is_error() {
        assert!(filter_labels(&toy(3, 2), &BTreeSet::new(), false).is_err());
    }

    #[test]
    fn reindex_is_dense_and_reports_map() {
        let ds = toy(10, 3);
        let f = filter_labels(&ds, &BTreeSet::from([3, 7]), true).unwrap();
        assert_eq!(f.dataset.classes(), 2);
        assert_eq!(f.original_labels, vec![3, 7]);
        assert_eq!(f.dataset.len(), 6);
        for (i, &src) in f.source_indices.iter().enumerate() {
            assert_eq!(f.original_labels[f.dataset.label(i)], ds.label(src));
        }
    }

    #[test]
    fn pairwise_client_five_holds_four_and_five() {
        let ds = toy(8, 40);
        let shards = partition(&ds, &PartitionPlan::pairwise(8, None, 1)).unwrap();
        let labels: BTreeSet<usize> = shards[5].dataset.labels().iter().copied().collect();
        assert_eq!(labels, BTreeSet::from([4, 5]));
    }

    #[test]
    fn shards_are_disjoint_and_complete_without_cap() {
        let ds = toy(8, 41);
        let shards = partition(&ds, &PartitionPlan::pairwise(8, None, 9)).unwrap();
        let mut seen: Vec<usize> = shards
            .iter()
            .flat_map(|s| s.source_indices.clone())
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..ds.len()).collect::<Vec<_>>());
        // Even split: 82 samples per pair -> 41 each.
        assert!(shards.iter().all(|s| s.sample_count() == 41));
    }

    #[test]
    fn cap_truncates_each_shard() {
        let ds = toy(8, 30);
        let shards = partition(&ds, &PartitionPlan::pairwise(8, Some(20), 2)).unwrap();
        assert!(shards.iter().all(|s| s.sample_count() == 20));
        let shards = partition(&ds, &PartitionPlan::pairwise(8, Some(512), 2)).unwrap();
        assert!(shards.iter().all(|s| s.sample_count() == 30));
    }

    #[test]
    fn client_without_samples_is_error() {
        // Labels 8/9 absent -> clients 8 and 9 would be empty.
        let ds = toy(8, 4);
        assert!(partition(&ds, &PartitionPlan::pairwise(10, None, 0)).is_err());
        // One sample shared by two clients -> the second gets nothing.
        let one = LabeledDataset::new(InputShape::flat(1), 2, vec![0.0], vec![1]).unwrap();
        assert!(partition(&one, &PartitionPlan::pairwise(2, None, 0)).is_err());
    }

    #[test]
    fn overlapping_label_sets_rejected() {
        let plan = PartitionPlan {
            n_clients: 2,
            labels_per_client: vec![BTreeSet::from([0, 1]), BTreeSet::from([1, 2])],
            per_client_cap: None,
            seed: 0,
        };
        assert!(partition(&toy(3, 4), &plan).is_err());
    }
}
