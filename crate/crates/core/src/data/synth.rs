use std::collections::BTreeSet;
use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, DatasetRole, Instance, LabelVocab, MultiLabelDataset};

/// Parameters of the planted-dependency generator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Total number of labels in the planted tree.
    pub n_labels: usize,
    /// Maximum hierarchy depth (path components).
    pub depth: usize,
    pub n_instances: usize,
    pub feature_dim: usize,
    /// Per-edge probability that a parent label is dropped from an instance
    /// that carries the child. Must stay below 0.5.
    pub noise: f64,
    /// Number of planted co-occurrence pairs between unrelated labels.
    pub n_co_pairs: usize,
    /// P(target | anchor) for each planted pair.
    pub co_strength: f64,
    /// Standard deviation of the Gaussian feature noise.
    pub feature_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_labels: 12,
            depth: 3,
            n_instances: 2500,
            feature_dim: 32,
            noise: 0.1,
            n_co_pairs: 2,
            co_strength: 0.8,
            feature_noise: 0.3,
        }
    }
}

/// A planted implicit dependency: when `anchor` is present, `target` joins
/// with probability `strength`; `target` never appears otherwise.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoPair {
    pub anchor: usize,
    pub target: usize,
    pub strength: f64,
}

pub struct SynthOutput {
    pub dataset: MultiLabelDataset,
    pub vocab: LabelVocab,
    pub co_pairs: Vec<CoPair>,
}

/// Deterministic label tree: a spine guarantees the requested depth, then
/// breadth is distributed round-robin over root and internal nodes.
fn build_label_tree(n_labels: usize, depth: usize) -> Vec<String> {
    struct Node {
        path: String,
        depth: usize,
        children: usize,
    }
    let mut names = Vec::with_capacity(n_labels);
    let mut nodes = vec![Node { path: String::new(), depth: 0, children: 0 }];
    let mut queue: VecDeque<usize> = VecDeque::new();

    let spine_len = depth.min(n_labels);
    let mut parent = 0usize;
    for _ in 0..spine_len {
        let path = format!("{}/t0", nodes[parent].path);
        names.push(path.clone());
        nodes[parent].children = 1;
        let d = nodes[parent].depth + 1;
        nodes.push(Node { path, depth: d, children: 0 });
        parent = nodes.len() - 1;
    }
    for (i, node) in nodes.iter().enumerate() {
        if node.depth < depth {
            queue.push_back(i);
        }
    }
    while names.len() < n_labels {
        let idx = queue.pop_front().expect("queue never empties while depth < max");
        let path = format!("{}/t{}", nodes[idx].path, nodes[idx].children);
        names.push(path.clone());
        nodes[idx].children += 1;
        let d = nodes[idx].depth + 1;
        nodes.push(Node { path, depth: d, children: 0 });
        if d < depth {
            queue.push_back(nodes.len() - 1);
        }
        queue.push_back(idx);
    }
    names
}

fn ancestors(vocab: &LabelVocab, id: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut cur = vocab.parent(id);
    while let Some(p) = cur {
        out.push(p);
        cur = vocab.parent(p);
    }
    out
}

/// Generate a dataset with a planted hierarchy and planted co-occurrence
/// pairs. Feature vectors are noisy linear projections of the binary label
/// vector, so the labels are recoverable from the features.
pub fn synth_generate(
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SynthOutput, DataError> {
    if config.noise >= 0.5 {
        return Err(DataError::InvalidConfig(format!(
            "noise rate {} leaves the planted hierarchy unlearnable (must be < 0.5)",
            config.noise
        )));
    }
    if config.noise < 0.0 || !(0.0..=1.0).contains(&config.co_strength) {
        return Err(DataError::InvalidConfig("noise and co_strength must be probabilities".into()));
    }
    if config.n_labels == 0 || config.depth == 0 || config.feature_dim == 0 {
        return Err(DataError::InvalidConfig(
            "n_labels, depth and feature_dim must be positive".into(),
        ));
    }

    let names = build_label_tree(config.n_labels, config.depth);
    let vocab = LabelVocab::from_names(names);
    let n = vocab.len();

    // Leaves in id order; anchors come from the front, targets from the back.
    let is_parent: BTreeSet<usize> = (0..n).filter_map(|id| vocab.parent(id)).collect();
    let leaves: Vec<usize> = (0..n).filter(|id| !is_parent.contains(id)).collect();
    if leaves.len() < 2 * config.n_co_pairs {
        return Err(DataError::InvalidConfig(format!(
            "{} leaves cannot host {} co-occurrence pairs",
            leaves.len(),
            config.n_co_pairs
        )));
    }
    let co_pairs: Vec<CoPair> = (0..config.n_co_pairs)
        .map(|k| CoPair {
            anchor: leaves[k],
            target: leaves[leaves.len() - 1 - k],
            strength: config.co_strength,
        })
        .collect();
    let targets: BTreeSet<usize> = co_pairs.iter().map(|p| p.target).collect();
    // Targets only ever appear through their anchor, so P(target | anchor)
    // is exactly the configured strength.
    let pool: Vec<usize> = (0..n).filter(|id| !targets.contains(id)).collect();

    let projection: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..config.feature_dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect();

    let mut instances = Vec::with_capacity(config.n_instances);
    for _ in 0..config.n_instances {
        let primary = pool[rng.gen_range(0..pool.len())];
        let mut labels: BTreeSet<usize> = BTreeSet::new();
        labels.insert(primary);
        for anc in ancestors(&vocab, primary) {
            if rng.gen::<f64>() >= config.noise {
                labels.insert(anc);
            }
        }
        for pair in &co_pairs {
            if labels.contains(&pair.anchor) && rng.gen::<f64>() < pair.strength {
                labels.insert(pair.target);
                for anc in ancestors(&vocab, pair.target) {
                    if !labels.contains(&anc) && rng.gen::<f64>() >= config.noise {
                        labels.insert(anc);
                    }
                }
            }
        }

        let mut features = Vec::with_capacity(config.feature_dim);
        for d in 0..config.feature_dim {
            let signal: f64 = labels.iter().map(|&l| projection[l][d]).sum();
            let eps: f64 = StandardNormal.sample(rng);
            features.push((d, signal + config.feature_noise * eps));
        }
        instances.push(Instance { features, labels: labels.into_iter().collect() });
    }

    let dataset =
        MultiLabelDataset::new(instances, config.feature_dim, n, DatasetRole::Unspecified);
    Ok(SynthOutput { dataset, vocab, co_pairs })
}
