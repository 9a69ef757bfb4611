mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::cases::*;
use common::*;
use picdiar::annotation::Annotation;
use picdiar::metrics::{aggregate, der, domain_breakdown, format_tsv, jer, optimal_mapping, ScoringOptions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn hand_computed_cases() {
    for c in hand_cases() {
        if let Err(e) = check_case(&c) {
            panic!("{}: {e}", c.name);
        }
    }
}

#[test]
fn undefined_rates_are_reported_as_such() {
    let r = der(&Annotation::new("r"), &ann("r", &[(0.0, 1.0, "X")]), None, &ScoringOptions::default()).unwrap();
    assert_eq!(r.der, None);
    assert_eq!(r.jer, None);
    assert!((r.false_alarm - 1.0).abs() < TOL);
    assert_eq!(jer(&Annotation::new("r"), &Annotation::new("r")), None);
    assert!(format_tsv(&[r.clone()], &r).contains("NA"));
}

#[test]
fn single_speaker_matches_interval_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        // Arbitrary real-valued boundaries, not aligned with the grid.
        let (r0, r1) = (rng.gen_range(0.0..10.0), rng.gen_range(10.0..20.0));
        let (h0, h1) = (rng.gen_range(0.0..10.0), rng.gen_range(10.0..20.0));
        let rep = der(&ann("r", &[(r0, r1, "A")]), &ann("r", &[(h0, h1, "X")]), None, &ScoringOptions::default())
            .unwrap();
        let missed = (h0 - r0).max(0.0) + (r1 - h1).max(0.0);
        let fa = (r0 - h0).max(0.0) + (h1 - r1).max(0.0);
        // Four boundaries, each off by at most one 10 ms frame.
        assert!((rep.missed - missed).abs() <= 0.02 + 1e-9, "{} vs {missed}", rep.missed);
        assert!((rep.false_alarm - fa).abs() <= 0.02 + 1e-9);
        assert!((rep.scored_speech - (r1 - r0)).abs() <= 0.02 + 1e-9);
        assert_eq!(rep.confusion, 0.0);
    }
}

#[test]
fn mapping_matches_permutation_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..200 {
        let (rs, rn) = (rng.gen_range(1..=6), rng.gen_range(1..12));
        let (hs, hn) = (rng.gen_range(1..=6), rng.gen_range(1..12));
        let reference = random_annotation(&mut rng, "r", rs, rn);
        let hypothesis = random_annotation(&mut rng, "r", hs, hn);
        let map = optimal_mapping(&reference, &hypothesis);
        assert_eq!(agreement_of(&reference, &hypothesis, &map), brute_force_agreement(&reference, &hypothesis));
        let refs: BTreeSet<&String> = map.iter().map(|(a, _)| a).collect();
        let hyps: BTreeSet<&String> = map.iter().map(|(_, b)| b).collect();
        assert_eq!(refs.len(), map.len());
        assert_eq!(hyps.len(), map.len());
    }
}

#[test]
fn mapping_recovers_renaming_and_ignores_disjoint_speakers() {
    let reference = ann("r", &[(0.0, 2.0, "A"), (2.0, 5.0, "B"), (5.0, 6.0, "C")]);
    let hypothesis = reference.relabel(|s| format!("spk_{}", s.to_lowercase()));
    let map = optimal_mapping(&reference, &hypothesis);
    assert_eq!(
        map,
        vec![("A".into(), "spk_a".into()), ("B".into(), "spk_b".into()), ("C".into(), "spk_c".into())]
    );
    let disjoint = ann("r", &[(10.0, 12.0, "X")]);
    assert!(optimal_mapping(&reference, &disjoint).is_empty());
}

#[test]
fn aggregation_pools_error_time() {
    let r1 = der(&ann("a", &[(0.0, 10.0, "A")]), &ann("a", &[(0.0, 9.0, "A")]), None, &Default::default()).unwrap();
    let r2 = der(&ann("b", &[(0.0, 10.0, "A")]), &ann("b", &[(0.0, 7.0, "A")]), None, &Default::default()).unwrap();
    let all = aggregate(&[r1.clone(), r2.clone()], None).unwrap();
    assert!((all.der.unwrap() - 0.2).abs() < TOL);
    assert_eq!(all.recording_id, "ALL");
    let only_a: BTreeSet<String> = ["a".to_string()].into();
    let core = aggregate(&[r1.clone(), r2.clone()], Some(&only_a)).unwrap();
    assert!((core.der.unwrap() - 0.1).abs() < TOL);
    assert_eq!(aggregate(&[r1.clone()], None).unwrap().der, r1.der);

    let domains: BTreeMap<String, String> = [("a".into(), "x".into()), ("b".into(), "y".into())].into();
    let table = domain_breakdown(&[r1, r2], &domains);
    assert_eq!(table.len(), 2);
    assert!((table[1].mean_der.unwrap() - 0.3).abs() < TOL);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn scoring_a_reference_against_itself_is_perfect(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spk = rng.gen_range(1..5);
        let segs = rng.gen_range(1..15);
        let a = random_annotation(&mut rng, "r", spk, segs);
        let r = der(&a, &a, None, &ScoringOptions::default()).unwrap();
        prop_assert_eq!(r.der, Some(0.0));
        prop_assert_eq!(r.jer, Some(0.0));
        prop_assert_eq!(jer(&a, &a), Some(0.0));
    }

    #[test]
    fn renaming_hypothesis_speakers_keeps_der(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference = random_annotation(&mut rng, "r", 3, 8);
        let hypothesis = random_annotation(&mut rng, "r", 3, 8);
        let renamed = hypothesis.relabel(|s| format!("zz{s}"));
        let a = der(&reference, &hypothesis, None, &ScoringOptions::default()).unwrap();
        let b = der(&reference, &renamed, None, &ScoringOptions::default()).unwrap();
        prop_assert_eq!(a.der, b.der);
        prop_assert_eq!(a.jer, b.jer);
    }

    #[test]
    fn wider_collars_never_increase_der(seed in any::<u64>(), c1 in 0.0f64..0.5, extra in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference = random_annotation(&mut rng, "r", 2, 6);
        let hypothesis = random_annotation(&mut rng, "r", 2, 6);
        let narrow = der(&reference, &hypothesis, None, &opts(c1, true)).unwrap();
        let wide = der(&reference, &hypothesis, None, &opts(c1 + extra, true)).unwrap();
        prop_assert!(narrow.error_time() + 1e-9 >= wide.error_time());
    }

    #[test]
    fn report_components_are_consistent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference = random_annotation(&mut rng, "r", 3, 8);
        let hypothesis = random_annotation(&mut rng, "r", 4, 8);
        let r = der(&reference, &hypothesis, None, &ScoringOptions::default()).unwrap();
        prop_assert!(r.missed >= 0.0 && r.false_alarm >= 0.0 && r.confusion >= 0.0);
        prop_assert!(r.missed + r.confusion <= r.scored_speech + 1e-9);
        let der_value = r.error_time() / r.scored_speech;
        prop_assert!((r.der.unwrap() - der_value).abs() < 1e-12);
    }
}
