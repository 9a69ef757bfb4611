use nalgebra::{DMatrix, DVector};
use picdiar::bandwidth::{classify_recording, classify_segment, majority_vote, Band, MlpClassifier};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Identity hidden layer of width 2 whose outputs copy the two inputs, so the
/// logits equal the input vector when it is non-negative.
fn passthrough() -> MlpClassifier {
    MlpClassifier::new(
        DMatrix::identity(2, 2),
        DVector::zeros(2),
        DMatrix::identity(2, 2),
        DVector::zeros(2),
    )
    .unwrap()
}

fn counting_oracle(labels: &[Band]) -> Band {
    let nb = labels.iter().filter(|l| **l == Band::Narrowband).count();
    let wb = labels.len() - nb;
    if nb > wb {
        Band::Narrowband
    } else {
        Band::Wideband
    }
}

#[test]
fn softmax_probability_for_a_three_logit_margin() {
    let p = classify_segment(&passthrough(), &DVector::from_vec(vec![3.0, 0.0])).unwrap();
    assert_eq!(p.label, Band::Narrowband);
    assert!((p.probabilities[0] - 0.9526).abs() < 1e-4);
    assert!((p.probabilities[0] + p.probabilities[1] - 1.0).abs() < 1e-15);
}

#[test]
fn equal_logits_resolve_to_wideband() {
    let p = classify_segment(&passthrough(), &DVector::from_vec(vec![1.0, 1.0])).unwrap();
    assert_eq!(p.label, Band::Wideband);
    assert_eq!(p.probabilities, [0.5, 0.5]);
}

#[test]
fn probabilities_ignore_a_shared_logit_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for _ in 0..200 {
        let (a, b, c) = (rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0));
        let p = classify_segment(&passthrough(), &DVector::from_vec(vec![a, b])).unwrap();
        let q = classify_segment(&passthrough(), &DVector::from_vec(vec![a + c, b + c])).unwrap();
        assert!((p.probabilities[0] - q.probabilities[0]).abs() < 1e-12);
        let want = a.exp() / (a.exp() + b.exp());
        assert!((p.probabilities[0] - want).abs() < 1e-12);
    }
}

#[test]
fn vote_over_101_labels_matches_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    for _ in 0..500 {
        let p = rng.gen_range(0.0..1.0);
        let labels: Vec<Band> = (0..101)
            .map(|_| if rng.gen_bool(p) { Band::Narrowband } else { Band::Wideband })
            .collect();
        assert_eq!(majority_vote(&labels).unwrap(), counting_oracle(&labels));
    }
    assert_eq!(majority_vote(&[Band::Narrowband, Band::Wideband]).unwrap(), Band::Wideband);
    assert!(majority_vote(&[]).is_err());
}

#[test]
fn file_label_is_the_vote_over_segment_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let model = MlpClassifier::new(
        DMatrix::from_fn(4, 6, |_, _| rng.gen_range(-1.0..1.0)),
        DVector::from_fn(6, |_, _| rng.gen_range(-0.5..0.5)),
        DMatrix::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0)),
        DVector::zeros(2),
    )
    .unwrap();
    for _ in 0..50 {
        let n = rng.gen_range(1..40);
        let x = DMatrix::from_fn(n, 4, |_, _| rng.gen_range(-2.0..2.0));
        let d = classify_recording(&model, "r", &x).unwrap();
        assert_eq!(d.segment_labels.len(), n);
        for (i, label) in d.segment_labels.iter().enumerate() {
            assert_eq!(*label, classify_segment(&model, &x.row(i).transpose()).unwrap().label);
        }
        assert_eq!(d.file_label, majority_vote(&d.segment_labels).unwrap());
    }
}

#[test]
fn classifier_file_round_trip_and_shape_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("band.mlp");
    let m = MlpClassifier::new(
        DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 * 0.25),
        DVector::from_vec(vec![0.5, -0.5]),
        DMatrix::from_fn(2, 2, |i, j| (i as f64 - j as f64) * 0.5),
        DVector::from_vec(vec![0.125, 0.0]),
    )
    .unwrap();
    m.save(&path).unwrap();
    assert_eq!(MlpClassifier::load(&path).unwrap(), m);
    assert!(m.logits(&DVector::zeros(2)).is_err());
    assert!(MlpClassifier::new(DMatrix::zeros(3, 2), DVector::zeros(3), DMatrix::zeros(2, 2), DVector::zeros(2)).is_err());
}

proptest! {
    #[test]
    fn vote_ignores_label_order(labels in prop::collection::vec(any::<bool>(), 1..60), seed in any::<u64>()) {
        let mut bands: Vec<Band> = labels.iter().map(|&b| if b { Band::Narrowband } else { Band::Wideband }).collect();
        let before = majority_vote(&bands).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..bands.len()).rev() {
            bands.swap(i, rng.gen_range(0..=i));
        }
        prop_assert_eq!(majority_vote(&bands).unwrap(), before);
    }
}
