use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::Batch;
use crate::ndiff::sgd_step;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn random_batch(rows: usize, d: usize, n: usize, rng: &mut ChaCha8Rng) -> Batch {
    let mut features = Tensor::zeros(rows, d);
    let mut targets = Tensor::zeros(rows, n);
    for i in 0..rows {
        for j in 0..d {
            features.set(i, j, rng.gen_range(-1.0..1.0));
        }
        for j in 0..n {
            if rng.gen_bool(0.4) {
                targets.set(i, j, 1.0);
            }
        }
    }
    Batch { features, targets }
}

fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Plain-loop rebuild of the loss, mirroring the graph's evaluation order.
fn weighted_ce_by_hand(probs: &ProbMatrix, targets: &Tensor, w: &[f64]) -> f64 {
    let n = w.len() as f64;
    let mut acc = 0.0;
    for i in 0..probs.rows() {
        for j in 0..probs.cols() {
            let y = probs.get(i, j);
            let t = targets.get(i, j);
            let term = t * y.ln() + (1.0 - t) * (-y + 1.0).ln();
            acc += term * (w[j] * n);
        }
    }
    acc * -1.0
}

#[test]
fn zero_parameters_predict_half_everywhere() {
    let clf = MlpClassifier::zeroed(3, 4, 2);
    let batch = random_batch(5, 3, 2, &mut ChaCha8Rng::seed_from_u64(1));
    let probs = clf.predict_proba(&batch).unwrap();
    assert!(probs.tensor().data().iter().all(|&v| v == 0.5));
}

#[test]
fn output_layer_matches_hand_sigmoid() {
    // zero hidden path, logits reduce to b2 = (2, -2)
    let mut clf = MlpClassifier::zeroed(1, 3, 2);
    clf.b2 = Tensor::row_vector(&[2.0, -2.0]);
    let batch = Batch {
        features: Tensor::row_vector(&[1.0]),
        targets: Tensor::zeros(1, 2),
    };
    let probs = clf.predict_proba(&batch).unwrap();
    assert!((probs.get(0, 0) - sigmoid(2.0)).abs() < 1e-15);
    assert!((probs.get(0, 1) - sigmoid(-2.0)).abs() < 1e-15);
    assert!((probs.get(0, 0) - 0.8808).abs() < 1e-4);
    assert!((probs.get(0, 1) - 0.1192).abs() < 1e-4);
}

#[test]
fn hidden_path_matches_hand_evaluation() {
    // h = tanh(atanh(0.5)) = 0.5, logits = h * (4, -4) = (2, -2)
    let mut clf = MlpClassifier::zeroed(1, 1, 2);
    clf.b1 = Tensor::row_vector(&[0.5f64.atanh()]);
    clf.w2 = Tensor::from_rows(&[&[4.0, -4.0]]);
    let batch = Batch { features: Tensor::row_vector(&[0.0]), targets: Tensor::zeros(1, 2) };
    let probs = clf.predict_proba(&batch).unwrap();
    assert!((probs.get(0, 0) - sigmoid(2.0)).abs() < 1e-12);
    assert!((probs.get(0, 1) - sigmoid(-2.0)).abs() < 1e-12);
}

#[test]
fn permuting_rows_permutes_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let clf = MlpClassifier::new(4, 6, 3, &mut rng);
    let batch = random_batch(4, 4, 3, &mut rng);
    let probs = clf.predict_proba(&batch).unwrap();

    let perm = [2usize, 0, 3, 1];
    let mut features = Tensor::zeros(4, 4);
    for (new_row, &old_row) in perm.iter().enumerate() {
        for j in 0..4 {
            features.set(new_row, j, batch.features.get(old_row, j));
        }
    }
    let shuffled = Batch { features, targets: batch.targets.clone() };
    let probs2 = clf.predict_proba(&shuffled).unwrap();
    for (new_row, &old_row) in perm.iter().enumerate() {
        assert_eq!(probs2.row(new_row), probs.row(old_row));
    }
}

#[test]
fn loss_matches_hand_derived_values() {
    let probs = ProbMatrix::new(Tensor::row_vector(&[0.8, 0.4])).unwrap();
    let targets = Tensor::row_vector(&[1.0, 0.0]);
    // -(ln 0.8 + ln 0.6)
    let loss = weighted_cross_entropy(&probs, &targets, &[0.5, 0.5]).unwrap();
    assert!((loss - 0.7339691750802004).abs() < 1e-12);
    // w = (1, 0): -2 ln 0.8
    let loss = weighted_cross_entropy(&probs, &targets, &[1.0, 0.0]).unwrap();
    assert!((loss - 0.4462871026284195).abs() < 1e-12);
}

#[test]
fn uniform_weights_reduce_to_standard_cross_entropy_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = rng.gen_range(2..=16);
        let rows = rng.gen_range(1..=8);
        let values: Vec<f64> = (0..rows * n).map(|_| rng.gen_range(0.01..0.99)).collect();
        let probs = ProbMatrix::new(Tensor::from_vec(rows, n, values).unwrap()).unwrap();
        let targets = {
            let data = (0..rows * n).map(|_| f64::from(rng.gen_bool(0.3))).collect();
            Tensor::from_vec(rows, n, data).unwrap()
        };
        let weighted = weighted_cross_entropy(&probs, &targets, &uniform_weights(n)).unwrap();
        let standard = {
            let mut acc = 0.0;
            for i in 0..rows {
                for j in 0..n {
                    let y = probs.get(i, j);
                    let t = targets.get(i, j);
                    acc += t * y.ln() + (1.0 - t) * (-y + 1.0).ln();
                }
            }
            acc * -1.0
        };
        assert_eq!(weighted.to_bits(), standard.to_bits());
    }
}

#[test]
fn loss_agrees_with_plain_loop_for_arbitrary_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let n = rng.gen_range(2..=8);
        let rows = rng.gen_range(1..=6);
        let values: Vec<f64> = (0..rows * n).map(|_| rng.gen_range(0.05..0.95)).collect();
        let probs = ProbMatrix::new(Tensor::from_vec(rows, n, values).unwrap()).unwrap();
        let targets = {
            let data = (0..rows * n).map(|_| f64::from(rng.gen_bool(0.5))).collect();
            Tensor::from_vec(rows, n, data).unwrap()
        };
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let loss = weighted_cross_entropy(&probs, &targets, &w).unwrap();
        let by_hand = weighted_ce_by_hand(&probs, &targets, &w);
        assert!((loss - by_hand).abs() < 1e-12);
        assert!(loss >= 0.0);
    }
}

#[test]
fn loss_is_invariant_under_simultaneous_label_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 4;
    let rows = 3;
    let values: Vec<f64> = (0..rows * n).map(|_| rng.gen_range(0.05..0.95)).collect();
    let probs_t = Tensor::from_vec(rows, n, values).unwrap();
    let targets = {
        let data = (0..rows * n).map(|_| f64::from(rng.gen_bool(0.5))).collect();
        Tensor::from_vec(rows, n, data).unwrap()
    };
    let w = [0.1, 0.2, 0.3, 0.4];
    let perm = [3usize, 1, 0, 2];

    let mut probs_p = Tensor::zeros(rows, n);
    let mut targets_p = Tensor::zeros(rows, n);
    let mut w_p = [0.0; 4];
    for (new_col, &old_col) in perm.iter().enumerate() {
        w_p[new_col] = w[old_col];
        for i in 0..rows {
            probs_p.set(i, new_col, probs_t.get(i, old_col));
            targets_p.set(i, new_col, targets.get(i, old_col));
        }
    }
    let a = weighted_cross_entropy(&ProbMatrix::new(probs_t).unwrap(), &targets, &w).unwrap();
    let b = weighted_cross_entropy(&ProbMatrix::new(probs_p).unwrap(), &targets_p, &w_p).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn loss_vanishes_as_probs_approach_targets() {
    let probs = ProbMatrix::new(Tensor::row_vector(&[1.0 - 1e-9, 1e-9])).unwrap();
    let targets = Tensor::row_vector(&[1.0, 0.0]);
    let loss = weighted_cross_entropy(&probs, &targets, &[0.5, 0.5]).unwrap();
    assert!(loss > 0.0 && loss < 1e-8);
}

#[test]
fn weight_contract_is_enforced() {
    let probs = ProbMatrix::new(Tensor::row_vector(&[0.5, 0.5])).unwrap();
    let targets = Tensor::row_vector(&[1.0, 0.0]);
    let err = weighted_cross_entropy(&probs, &targets, &[0.6, 0.6]).unwrap_err();
    assert!(matches!(err, ClassifierError::Weights(_)));
    let err = weighted_cross_entropy(&probs, &targets, &[1.2, -0.2]).unwrap_err();
    assert!(matches!(err, ClassifierError::Weights(_)));
}

#[test]
fn zero_lr_step_keeps_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut clf = MlpClassifier::new(3, 4, 2, &mut rng);
    let before = clf.clone();
    let batch = random_batch(4, 3, 2, &mut rng);
    clf.train_step(&batch, &uniform_weights(2), 0.0).unwrap();
    assert_eq!(clf.w1, before.w1);
    assert_eq!(clf.b1, before.b1);
    assert_eq!(clf.w2, before.w2);
    assert_eq!(clf.b2, before.b2);
}

#[test]
fn uniform_weight_step_is_bitwise_identical_to_standard_ce_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let (d, h, n, rows) = (3, 4, rng.gen_range(2..=6), 5);
        let mut clf = MlpClassifier::new(d, h, n, &mut rng);
        let mut twin = clf.clone();
        let batch = random_batch(rows, d, n, &mut rng);
        let lr = 0.05;

        clf.train_step(&batch, &uniform_weights(n), lr).unwrap();

        // independent standard-CE step: same forward graph, no weight coefficients
        let mut tape = Tape::new();
        let w1 = tape.leaf(twin.w1.clone());
        let b1 = tape.leaf(twin.b1.clone());
        let w2 = tape.leaf(twin.w2.clone());
        let b2 = tape.leaf(twin.b2.clone());
        let x = tape.leaf(batch.features.clone());
        let hdn = tape.matmul(x, w1).unwrap();
        let hdn = tape.add_row(hdn, b1).unwrap();
        let hdn = tape.tanh(hdn);
        let logits = tape.matmul(hdn, w2).unwrap();
        let logits = tape.add_row(logits, b2).unwrap();
        let sig = tape.sigmoid(logits);
        let probs = tape.clamp(sig, PROB_EPS, 1.0 - PROB_EPS);
        let ones_minus_t = {
            let data = batch.targets.data().iter().map(|&t| 1.0 - t).collect();
            Tensor::from_vec(rows, n, data).unwrap()
        };
        let tgt = tape.leaf(batch.targets.clone());
        let inv_tgt = tape.leaf(ones_minus_t);
        let ones = tape.leaf(Tensor::filled(1, n, 1.0));
        let log_p = tape.log(probs).unwrap();
        let pos = tape.mul(tgt, log_p).unwrap();
        let neg_p = tape.scale(probs, -1.0);
        let one_minus_p = tape.add_scalar(neg_p, 1.0);
        let log_1p = tape.log(one_minus_p).unwrap();
        let neg = tape.mul(inv_tgt, log_1p).unwrap();
        let term = tape.add(pos, neg).unwrap();
        let weighted = tape.mul_row(term, ones).unwrap();
        let total = tape.sum(weighted);
        let loss = tape.scale(total, -1.0);
        let grads = tape.backward(loss).unwrap();
        sgd_step(&mut twin.w1, grads.wrt(w1), lr).unwrap();
        sgd_step(&mut twin.b1, grads.wrt(b1), lr).unwrap();
        sgd_step(&mut twin.w2, grads.wrt(w2), lr).unwrap();
        sgd_step(&mut twin.b2, grads.wrt(b2), lr).unwrap();

        assert_eq!(clf.w1, twin.w1);
        assert_eq!(clf.b1, twin.b1);
        assert_eq!(clf.w2, twin.w2);
        assert_eq!(clf.b2, twin.b2);
    }
}

#[test]
fn zero_weight_label_gets_zero_output_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut clf = MlpClassifier::new(3, 4, 2, &mut rng);
    let before = clf.clone();
    let batch = random_batch(5, 3, 2, &mut rng);
    clf.train_step(&batch, &[1.0, 0.0], 0.1).unwrap();
    // label 2's output column and bias must be untouched
    for r in 0..4 {
        assert_eq!(clf.w2.get(r, 1), before.w2.get(r, 1));
    }
    assert_eq!(clf.b2.get(0, 1), before.b2.get(0, 1));
    // label 1's column moved
    assert!((0..4).any(|r| clf.w2.get(r, 0) != before.w2.get(r, 0)));
}

#[test]
fn small_lr_step_reduces_loss_on_the_same_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let mut clf = MlpClassifier::new(4, 6, 3, &mut rng);
        let batch = random_batch(6, 4, 3, &mut rng);
        let w = uniform_weights(3);
        let before = clf.train_step(&batch, &w, 1e-3).unwrap();
        let probs = clf.predict_proba(&batch).unwrap();
        let after = weighted_cross_entropy(&probs, &batch.targets, &w).unwrap();
        assert!(after < before, "loss went {before} -> {after}");
    }
}

#[test]
fn training_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (d, h, n, rows) = (3, 4, 2, 4);
    let clf = MlpClassifier::new(d, h, n, &mut rng);
    let batch = random_batch(rows, d, n, &mut rng);
    let w = [0.3, 0.7];

    let mut tape = Tape::new();
    let nodes = clf.build_forward(&mut tape, &batch.features).unwrap();
    let loss = build_weighted_ce(&mut tape, nodes.probs, &batch.targets, &w).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut reverse = Vec::new();
    for id in [nodes.w1, nodes.b1, nodes.w2, nodes.b2] {
        reverse.extend_from_slice(grads.wrt(id).data());
    }

    let flat: Vec<f64> = clf
        .w1
        .data()
        .iter()
        .chain(clf.b1.data())
        .chain(clf.w2.data())
        .chain(clf.b2.data())
        .cloned()
        .collect();
    let shapes = [(d, h), (1, h), (h, n), (1, n)];
    let eval = |params: &[f64]| -> f64 {
        let mut c = MlpClassifier::zeroed(d, h, n);
        let mut offset = 0;
        let fields: [&mut Tensor; 4] = [&mut c.w1, &mut c.b1, &mut c.w2, &mut c.b2];
        for (field, (r, cl)) in fields.into_iter().zip(shapes) {
            *field = Tensor::from_vec(r, cl, params[offset..offset + r * cl].to_vec()).unwrap();
            offset += r * cl;
        }
        let probs = c.predict_proba(&batch).unwrap();
        weighted_cross_entropy(&probs, &batch.targets, &w).unwrap()
    };
    let h_step = 1e-5;
    let mut numeric = vec![0.0; flat.len()];
    let mut probe = flat.clone();
    for k in 0..flat.len() {
        let orig = probe[k];
        probe[k] = orig + h_step;
        let up = eval(&probe);
        probe[k] = orig - h_step;
        let down = eval(&probe);
        probe[k] = orig;
        numeric[k] = (up - down) / (2.0 * h_step);
    }
    let max_rel = reverse
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1.0))
        .fold(0.0, f64::max);
    assert!(max_rel < 1e-4, "max rel err {max_rel}");
}

#[test]
fn predict_labels_thresholds_per_label() {
    let probs = ProbMatrix::new(Tensor::row_vector(&[0.6, 0.4])).unwrap();
    let pred = predict_labels(&probs, &[0.5, 0.5]).unwrap();
    assert_eq!(pred.data(), &[1.0, 0.0]);
    let pred = predict_labels(&probs, &[0.7, 0.3]).unwrap();
    assert_eq!(pred.data(), &[0.0, 1.0]);
    let pred = predict_labels(&probs, &[PROB_EPS, PROB_EPS]).unwrap();
    assert_eq!(pred.data(), &[1.0, 1.0]);
}

#[test]
fn lowering_a_threshold_never_removes_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let values: Vec<f64> = (0..40).map(|_| rng.gen_range(0.01..0.99)).collect();
    let probs = ProbMatrix::new(Tensor::from_vec(10, 4, values).unwrap()).unwrap();
    let hi: Vec<f64> = (0..4).map(|_| rng.gen_range(0.3..0.9)).collect();
    let lo: Vec<f64> = hi.iter().map(|v| v - 0.2).collect();
    let pred_hi = predict_labels(&probs, &hi).unwrap();
    let pred_lo = predict_labels(&probs, &lo).unwrap();
    for (a, b) in pred_hi.data().iter().zip(pred_lo.data()) {
        assert!(b >= a);
    }
}

#[test]
fn reinit_resets_parameters_deterministically() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut clf = MlpClassifier::new(3, 4, 2, &mut rng);
    let mut a = clf.clone();
    let mut b = clf.clone();
    a.reinit(&mut ChaCha8Rng::seed_from_u64(99));
    b.reinit(&mut ChaCha8Rng::seed_from_u64(99));
    assert_eq!(a.w1, b.w1);
    assert_ne!(a.w1, clf.w1);
    let _ = &mut clf;
}

#[test]
fn feature_dim_mismatch_is_reported() {
    let clf = MlpClassifier::zeroed(3, 4, 2);
    let batch = random_batch(2, 5, 2, &mut ChaCha8Rng::seed_from_u64(13));
    assert!(matches!(clf.predict_proba(&batch), Err(ClassifierError::Dim(_))));
}
