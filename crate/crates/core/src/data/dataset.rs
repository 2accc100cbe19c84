use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, LabelVocab};
use crate::ndiff::Tensor;

/// One instance: sparse features as (index, value) pairs plus a sorted,
/// duplicate-free set of label ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub features: Vec<(usize, f64)>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetRole {
    Train,
    Test,
    Unspecified,
}

/// A loaded multi-label dataset. Immutable after construction apart from
/// widening the feature dimension to align train/test spaces.
#[derive(Clone, Debug)]
pub struct MultiLabelDataset {
    instances: Vec<Instance>,
    feature_dim: usize,
    n_labels: usize,
    role: DatasetRole,
    duplicate_labels_collapsed: usize,
    empty_label_instances: usize,
}

/// Dense view of a sampled subset: features are |B|×D, targets |B|×N with
/// entries in {0, 1}.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub features: Tensor,
    pub targets: Tensor,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }
}

/// Wire format of one JSONL line.
#[derive(Serialize, Deserialize)]
struct RawInstance {
    features: Vec<(usize, f64)>,
    labels: Vec<String>,
}

impl MultiLabelDataset {
    pub fn new(
        instances: Vec<Instance>,
        feature_dim: usize,
        n_labels: usize,
        role: DatasetRole,
    ) -> Self {
        MultiLabelDataset {
            instances,
            feature_dim,
            n_labels,
            role,
            duplicate_labels_collapsed: 0,
            empty_label_instances: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn role(&self) -> DatasetRole {
        self.role
    }

    pub fn set_role(&mut self, role: DatasetRole) {
        self.role = role;
    }

    /// Instances whose label set was empty on load; permitted but reported.
    pub fn empty_label_instances(&self) -> usize {
        self.empty_label_instances
    }

    /// Duplicate labels collapsed to set semantics on load.
    pub fn duplicate_labels_collapsed(&self) -> usize {
        self.duplicate_labels_collapsed
    }

    /// Widen the feature space, e.g. to align a test set with its train set.
    pub fn set_feature_dim(&mut self, dim: usize) -> Result<(), DataError> {
        if dim < self.feature_dim {
            return Err(DataError::InvalidConfig(format!(
                "feature dim {dim} below observed dimension {}",
                self.feature_dim
            )));
        }
        self.feature_dim = dim;
        Ok(())
    }

    /// Fraction of instances carrying each label.
    pub fn label_priors(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.n_labels];
        for inst in &self.instances {
            for &l in &inst.labels {
                counts[l] += 1;
            }
        }
        let denom = self.instances.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / denom).collect()
    }

    /// Densify the given instances into a batch.
    pub fn batch_from_indices(&self, indices: &[usize]) -> Batch {
        let mut features = Tensor::zeros(indices.len(), self.feature_dim);
        let mut targets = Tensor::zeros(indices.len(), self.n_labels);
        for (row, &idx) in indices.iter().enumerate() {
            let inst = &self.instances[idx];
            for &(col, value) in &inst.features {
                features.set(row, col, value);
            }
            for &label in &inst.labels {
                targets.set(row, label, 1.0);
            }
        }
        Batch { features, targets }
    }

    /// The whole dataset as a single batch.
    pub fn full_batch(&self) -> Batch {
        let indices: Vec<usize> = (0..self.len()).collect();
        self.batch_from_indices(&indices)
    }

    /// Keep only the selected instances (used for tuning splits).
    pub fn subset(&self, indices: &[usize]) -> MultiLabelDataset {
        let instances = indices.iter().map(|&i| self.instances[i].clone()).collect();
        MultiLabelDataset {
            instances,
            feature_dim: self.feature_dim,
            n_labels: self.n_labels,
            role: self.role,
            duplicate_labels_collapsed: 0,
            empty_label_instances: 0,
        }
    }
}

/// Uniform sample without replacement within the batch; a size larger than
/// the dataset clamps to a full-set batch.
pub fn sample_batch(
    dataset: &MultiLabelDataset,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Batch, DataError> {
    if dataset.is_empty() {
        return Err(DataError::EmptyDataset("cannot sample from an empty dataset".into()));
    }
    let take = size.min(dataset.len()).max(1);
    let indices = rand::seq::index::sample(rng, dataset.len(), take).into_vec();
    Ok(dataset.batch_from_indices(&indices))
}

/// Shuffled epoch partition: every instance appears in exactly one batch.
pub fn epoch_batches(
    dataset: &MultiLabelDataset,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Batch>, DataError> {
    if dataset.is_empty() {
        return Err(DataError::EmptyDataset("cannot partition an empty dataset".into()));
    }
    let size = batch_size.max(1);
    let order = rand::seq::index::sample(rng, dataset.len(), dataset.len()).into_vec();
    Ok(order.chunks(size).map(|chunk| dataset.batch_from_indices(chunk)).collect())
}

/// Load a JSONL dataset. With `vocab = None` the vocabulary is built from
/// the file; otherwise every label must already exist in the given one.
pub fn load_dataset(
    path: &Path,
    vocab: Option<&LabelVocab>,
) -> Result<(MultiLabelDataset, LabelVocab), DataError> {
    let file = File::open(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    load_dataset_from_reader(BufReader::new(file), vocab)
}

pub fn load_dataset_from_reader<R: Read>(
    reader: BufReader<R>,
    vocab: Option<&LabelVocab>,
) -> Result<(MultiLabelDataset, LabelVocab), DataError> {
    let mut raw = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DataError::Io { path: format!("line {}", lineno + 1), source: e })?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: RawInstance = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        raw.push((lineno + 1, inst));
    }

    let vocab = match vocab {
        Some(v) => v.clone(),
        None => {
            if raw.is_empty() {
                return Err(DataError::EmptyDataset(
                    "empty dataset and no vocabulary provided".into(),
                ));
            }
            LabelVocab::from_names(raw.iter().flat_map(|(_, r)| r.labels.iter().cloned()))
        }
    };

    let mut instances = Vec::with_capacity(raw.len());
    let mut feature_dim = 0usize;
    let mut duplicates = 0usize;
    let mut empties = 0usize;
    for (lineno, inst) in raw {
        let mut labels = Vec::with_capacity(inst.labels.len());
        for name in &inst.labels {
            let id = vocab.id(name).ok_or_else(|| DataError::UnknownLabel {
                line: lineno,
                label: name.clone(),
            })?;
            labels.push(id);
        }
        labels.sort_unstable();
        let before = labels.len();
        labels.dedup();
        duplicates += before - labels.len();
        if labels.is_empty() {
            empties += 1;
        }
        for &(idx, _) in &inst.features {
            feature_dim = feature_dim.max(idx + 1);
        }
        instances.push(Instance { features: inst.features, labels });
    }
    if duplicates > 0 {
        log::warn!("collapsed {duplicates} duplicate label occurrences");
    }

    let mut dataset =
        MultiLabelDataset::new(instances, feature_dim, vocab.len(), DatasetRole::Unspecified);
    dataset.duplicate_labels_collapsed = duplicates;
    dataset.empty_label_instances = empties;
    Ok((dataset, vocab))
}

/// Write a dataset back out in the same JSONL format `load_dataset` reads.
pub fn dump_dataset(
    dataset: &MultiLabelDataset,
    vocab: &LabelVocab,
    path: &Path,
) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut out = BufWriter::new(file);
    for inst in dataset.instances() {
        let raw = RawInstance {
            features: inst.features.clone(),
            labels: inst.labels.iter().map(|&l| vocab.name(l).to_string()).collect(),
        };
        let line = serde_json::to_string(&raw).expect("instances serialize");
        writeln!(out, "{line}").map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    }
    out.flush().map_err(|e| DataError::Io { path: path.display().to_string(), source: e })
}

/// Count child-without-parent violations across the dataset.
pub struct HierarchyReport {
    /// (child label present, parent label present) pairs inspected.
    pub checked: usize,
    /// Cases where a child label appeared without its parent.
    pub violations: usize,
}

pub fn validate_hierarchy(dataset: &MultiLabelDataset, vocab: &LabelVocab) -> HierarchyReport {
    let mut checked = 0;
    let mut violations = 0;
    for inst in dataset.instances() {
        for &label in &inst.labels {
            if let Some(parent) = vocab.parent(label) {
                checked += 1;
                if !inst.labels.contains(&parent) {
                    violations += 1;
                }
            }
        }
    }
    HierarchyReport { checked, violations }
}
