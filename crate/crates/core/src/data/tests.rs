use std::io::BufReader;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn load_str(content: &str, vocab: Option<&LabelVocab>) -> Result<(MultiLabelDataset, LabelVocab), DataError> {
    load_dataset_from_reader(BufReader::new(content.as_bytes()), vocab)
}

#[test]
fn loads_two_line_file_with_path_hierarchy() {
    let content = r#"{"features": [[0, 1.0]], "labels": ["/a"]}
{"features": [[1, 2.0]], "labels": ["/a", "/a/b"]}"#;
    let (ds, vocab) = load_str(content, None).unwrap();
    assert_eq!(vocab.len(), 2);
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.feature_dim(), 2);
    let child = vocab.id("/a/b").unwrap();
    assert_eq!(vocab.parent(child), Some(vocab.id("/a").unwrap()));
}

#[test]
fn empty_input_needs_a_vocab() {
    assert!(matches!(load_str("", None), Err(DataError::EmptyDataset(_))));
    let vocab = LabelVocab::from_names(["/a"]);
    let (ds, v) = load_str("", Some(&vocab)).unwrap();
    assert_eq!(ds.len(), 0);
    assert_eq!(v.len(), 1);
}

#[test]
fn malformed_line_reports_line_number() {
    let content = "{\"features\": [], \"labels\": [\"/a\"]}\nnot json";
    match load_str(content, None) {
        Err(DataError::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn unknown_label_under_fixed_vocab_is_rejected() {
    let vocab = LabelVocab::from_names(["/a"]);
    let content = r#"{"features": [], "labels": ["/b"]}"#;
    match load_str(content, Some(&vocab)) {
        Err(DataError::UnknownLabel { line, label }) => {
            assert_eq!(line, 1);
            assert_eq!(label, "/b");
        }
        other => panic!("expected unknown label error, got {other:?}"),
    }
}

#[test]
fn duplicate_labels_collapse_to_set_semantics() {
    let content = r#"{"features": [], "labels": ["/a", "/a", "/b"]}"#;
    let (ds, _) = load_str(content, None).unwrap();
    assert_eq!(ds.duplicate_labels_collapsed(), 1);
    assert_eq!(ds.instances()[0].labels.len(), 2);
    // rebuilt dataset keeps set semantics
    let mut sorted = ds.instances()[0].labels.clone();
    sorted.dedup();
    assert_eq!(sorted, ds.instances()[0].labels);
}

#[test]
fn empty_label_sets_are_permitted_and_counted() {
    let vocab = LabelVocab::from_names(["/a"]);
    let content = r#"{"features": [[0, 1.0]], "labels": []}"#;
    let (ds, _) = load_str(content, Some(&vocab)).unwrap();
    assert_eq!(ds.len(), 1);
    assert_eq!(ds.empty_label_instances(), 1);
}

#[test]
fn dump_then_load_round_trips() {
    let content = r#"{"features": [[0, 1.5], [3, -0.25]], "labels": ["/a", "/a/b"]}
{"features": [[2, 0.5]], "labels": ["/c"]}"#;
    let (ds, vocab) = load_str(content, None).unwrap();
    let dir = std::env::temp_dir().join("metapolicy-data-tests");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("roundtrip.jsonl");
    dump_dataset(&ds, &vocab, &path).unwrap();
    let (ds2, vocab2) = load_dataset(&path, None).unwrap();
    assert_eq!(ds.instances(), ds2.instances());
    assert_eq!(vocab, vocab2);
    // dumping again is byte-stable
    let bytes1 = std::fs::read(&path).unwrap();
    let path2 = dir.join("roundtrip2.jsonl");
    dump_dataset(&ds2, &vocab2, &path2).unwrap();
    assert_eq!(bytes1, std::fs::read(&path2).unwrap());
}

fn four_instance_dataset() -> MultiLabelDataset {
    let instances = (0..4)
        .map(|i| Instance { features: vec![(0, i as f64)], labels: vec![i % 2] })
        .collect();
    MultiLabelDataset::new(instances, 1, 2, DatasetRole::Train)
}

#[test]
fn full_size_sample_is_the_whole_set() {
    let ds = four_instance_dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = sample_batch(&ds, 4, &mut rng).unwrap();
    assert_eq!(batch.len(), 4);
    let mut seen: Vec<f64> = (0..4).map(|i| batch.features.get(i, 0)).collect();
    seen.sort_by(f64::total_cmp);
    assert_eq!(seen, vec![0.0, 1.0, 2.0, 3.0]);
    // oversized requests clamp to a full-set batch
    let batch = sample_batch(&ds, 10, &mut rng).unwrap();
    assert_eq!(batch.len(), 4);
}

#[test]
fn sampling_is_deterministic_under_a_fixed_seed() {
    let ds = four_instance_dataset();
    let a = sample_batch(&ds, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = sample_batch(&ds, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_draws_are_uniform() {
    let ds = four_instance_dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut counts = [0usize; 4];
    for _ in 0..10_000 {
        let batch = sample_batch(&ds, 1, &mut rng).unwrap();
        counts[batch.features.get(0, 0) as usize] += 1;
    }
    for c in counts {
        let freq = c as f64 / 10_000.0;
        assert!((freq - 0.25).abs() < 0.02, "frequency {freq}");
    }
}

#[test]
fn epoch_partition_covers_every_instance_once() {
    let ds = four_instance_dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batches = epoch_batches(&ds, 3, &mut rng).unwrap();
    assert_eq!(batches.len(), 2);
    let mut seen: Vec<f64> = batches
        .iter()
        .flat_map(|b| (0..b.len()).map(|i| b.features.get(i, 0)).collect::<Vec<_>>())
        .collect();
    seen.sort_by(f64::total_cmp);
    assert_eq!(seen, vec![0.0, 1.0, 2.0, 3.0]);
}

#[test]
fn sampling_empty_dataset_fails() {
    let ds = MultiLabelDataset::new(Vec::new(), 1, 1, DatasetRole::Train);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(sample_batch(&ds, 1, &mut rng).is_err());
}

#[test]
fn batch_targets_are_binary() {
    let ds = four_instance_dataset();
    let batch = ds.full_batch();
    assert!(batch.targets.data().iter().all(|&v| v == 0.0 || v == 1.0));
}

#[test]
fn synth_rejects_high_noise() {
    let config = SynthConfig { noise: 0.5, ..SynthConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(matches!(synth_generate(&config, &mut rng), Err(DataError::InvalidConfig(_))));
}

#[test]
fn synth_without_noise_plants_a_consistent_hierarchy() {
    let config = SynthConfig { noise: 0.0, n_instances: 500, ..SynthConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let out = synth_generate(&config, &mut rng).unwrap();
    let report = validate_hierarchy(&out.dataset, &out.vocab);
    assert!(report.checked > 0);
    assert_eq!(report.violations, 0);
}

#[test]
fn synth_noise_rate_matches_parent_drop_frequency() {
    let config = SynthConfig { noise: 0.1, n_instances: 10_000, ..SynthConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let out = synth_generate(&config, &mut rng).unwrap();
    let report = validate_hierarchy(&out.dataset, &out.vocab);
    let parent_given_child = 1.0 - report.violations as f64 / report.checked as f64;
    assert!((parent_given_child - 0.9).abs() < 0.02, "observed {parent_given_child}");
}

#[test]
fn synth_co_occurrence_matches_planted_strength() {
    let config = SynthConfig { n_instances: 10_000, ..SynthConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let out = synth_generate(&config, &mut rng).unwrap();
    assert_eq!(out.co_pairs.len(), 2);
    for pair in &out.co_pairs {
        let mut anchor_count = 0usize;
        let mut joint_count = 0usize;
        let mut target_without_anchor = 0usize;
        for inst in out.dataset.instances() {
            let has_anchor = inst.labels.contains(&pair.anchor);
            let has_target = inst.labels.contains(&pair.target);
            if has_anchor {
                anchor_count += 1;
                if has_target {
                    joint_count += 1;
                }
            } else if has_target {
                target_without_anchor += 1;
            }
        }
        assert!(anchor_count > 300, "anchor too rare: {anchor_count}");
        let observed = joint_count as f64 / anchor_count as f64;
        assert!((observed - 0.8).abs() < 0.03, "observed {observed}");
        assert_eq!(target_without_anchor, 0);
    }
}

#[test]
fn synth_is_deterministic_under_a_fixed_seed() {
    let config = SynthConfig { n_instances: 50, ..SynthConfig::default() };
    let a = synth_generate(&config, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let b = synth_generate(&config, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    assert_eq!(a.dataset.instances(), b.dataset.instances());
}

#[test]
fn synth_tree_has_requested_depth_and_size() {
    let config = SynthConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let out = synth_generate(&config, &mut rng).unwrap();
    assert_eq!(out.vocab.len(), 12);
    let max_depth = (0..out.vocab.len()).map(|i| out.vocab.depth(i)).max().unwrap();
    assert_eq!(max_depth, 3);
    assert!(out.vocab.missing_parents().is_empty());
}

#[test]
fn label_priors_count_fractions() {
    let ds = four_instance_dataset();
    let priors = ds.label_priors();
    assert_eq!(priors, vec![0.5, 0.5]);
}

#[test]
fn widening_feature_dim_is_monotone() {
    let mut ds = four_instance_dataset();
    assert!(ds.set_feature_dim(0).is_err());
    ds.set_feature_dim(8).unwrap();
    assert_eq!(ds.feature_dim(), 8);
    assert_eq!(ds.full_batch().features.cols(), 8);
}

#[test]
fn subset_keeps_selected_instances() {
    let ds = four_instance_dataset();
    let sub = ds.subset(&[2, 0]);
    assert_eq!(sub.len(), 2);
    assert_eq!(sub.instances()[0].features[0].1, 2.0);
    assert_eq!(sub.instances()[1].features[0].1, 0.0);
}

#[test]
fn rng_draw_helper_consumes_stream_deterministically() {
    // two generators with the same seed stay in lockstep across mixed draws
    let mut a = ChaCha8Rng::seed_from_u64(100);
    let mut b = ChaCha8Rng::seed_from_u64(100);
    let _: f64 = a.gen();
    let _: f64 = b.gen();
    assert_eq!(a.gen::<u64>(), b.gen::<u64>());
}
