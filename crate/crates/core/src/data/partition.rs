use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};

/// Assignment of dataset rows to clients. Index lists are disjoint and
/// weights are exactly |D_i| / |union of D_i|.
#[derive(Debug, Clone)]
pub struct PartitionSpec {
    pub client_indices: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
}

impl PartitionSpec {
    pub fn from_indices(client_indices: Vec<Vec<usize>>) -> Result<Self> {
        if client_indices.is_empty() {
            return Err(Error::Partition("zero clients".into()));
        }
        let mut seen = HashSet::new();
        let mut total = 0usize;
        for (i, list) in client_indices.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::Partition(format!("client {i} received no samples")));
            }
            total += list.len();
            for &idx in list {
                if !seen.insert(idx) {
                    return Err(Error::Partition(format!(
                        "sample {idx} assigned to more than one client"
                    )));
                }
            }
        }
        let weights = client_indices
            .iter()
            .map(|l| l.len() as f64 / total as f64)
            .collect();
        Ok(PartitionSpec {
            client_indices,
            weights,
        })
    }

    pub fn client_count(&self) -> usize {
        self.client_indices.len()
    }

    /// Indices covered by the partition, in client order. This is the
    /// union dataset the centralized oracle trains on.
    pub fn union_indices(&self) -> Vec<usize> {
        self.client_indices.iter().flatten().copied().collect()
    }
}

/// Seeded shuffle, then equal split with the remainder going to the
/// earliest clients.
pub fn partition_iid(dataset: &LabeledDataset, clients: usize, seed: u64) -> Result<PartitionSpec> {
    if clients == 0 {
        return Err(Error::Partition("zero clients".into()));
    }
    if clients > dataset.len() {
        return Err(Error::Partition(format!(
            "{clients} clients but only {} samples",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let base = dataset.len() / clients;
    let remainder = dataset.len() % clients;
    let mut lists = Vec::with_capacity(clients);
    let mut cursor = 0;
    for i in 0..clients {
        let size = base + usize::from(i < remainder);
        lists.push(order[cursor..cursor + size].to_vec());
        cursor += size;
    }
    PartitionSpec::from_indices(lists)
}

/// Label-shard partition: client i holds `classes_per_client` consecutive
/// classes starting at i * (class_count / clients), wrapping around. For
/// ten classes and five clients this reproduces the published tables:
/// k=2 gives client i classes {2i, 2i+1}; k >= 4 gives the overlapping
/// wrap-around rows, with each class's samples split evenly (and
/// disjointly) among the clients sharing it.
pub fn partition_by_label(
    dataset: &LabeledDataset,
    clients: usize,
    classes_per_client: usize,
) -> Result<PartitionSpec> {
    let class_count = dataset.class_count;
    if clients == 0 || classes_per_client == 0 {
        return Err(Error::Partition("zero clients or classes per client".into()));
    }
    if classes_per_client > class_count {
        return Err(Error::Partition(format!(
            "{classes_per_client} classes per client exceeds {class_count} classes"
        )));
    }
    if class_count % clients != 0 {
        return Err(Error::Partition(format!(
            "incompatible combination: {clients} clients do not divide {class_count} classes"
        )));
    }
    let stride = class_count / clients;

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (idx, &label) in dataset.labels.iter().enumerate() {
        by_class[label].push(idx);
    }

    let class_sets: Vec<Vec<usize>> = (0..clients)
        .map(|i| {
            (0..classes_per_client)
                .map(|j| (i * stride + j) % class_count)
                .collect()
        })
        .collect();

    let mut lists: Vec<Vec<usize>> = vec![Vec::new(); clients];
    for class in 0..class_count {
        let holders: Vec<usize> = (0..clients)
            .filter(|&i| class_sets[i].contains(&class))
            .collect();
        if holders.is_empty() {
            continue;
        }
        let samples = &by_class[class];
        if samples.len() < holders.len() {
            return Err(Error::Partition(format!(
                "class {class} has {} samples for {} holders",
                samples.len(),
                holders.len()
            )));
        }
        let base = samples.len() / holders.len();
        let remainder = samples.len() % holders.len();
        let mut cursor = 0;
        for (j, &client) in holders.iter().enumerate() {
            let size = base + usize::from(j < remainder);
            lists[client].extend_from_slice(&samples[cursor..cursor + size]);
            cursor += size;
        }
    }
    for list in &mut lists {
        list.sort_unstable();
    }
    PartitionSpec::from_indices(lists)
}
