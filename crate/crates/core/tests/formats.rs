use nalgebra::DMatrix;
use picdiar::annotation::{parse_rttm, parse_uem, write_rttm, write_uem, Annotation, ScoringRegions, Segment};
use picdiar::container::{Container, EMBEDDING_TAG};
use picdiar::embeddings::{read_embeddings, speech_windows, write_embeddings, EmbeddingSequence};
use picdiar::reseg::{parse_overlaps, write_overlaps, OverlapRegions, PosteriorMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rttm_corpus(rng: &mut impl Rng) -> Vec<Annotation> {
    let recs = rng.gen_range(1..4);
    (0..recs)
        .map(|r| {
            let rec = format!("rec_{r}");
            let segments = (0..rng.gen_range(0..20))
                .map(|_| {
                    // Millisecond grid: the three-decimal text form is exact.
                    let on = rng.gen_range(0..600_000) as f64 / 1000.0;
                    let dur = rng.gen_range(1..20_000) as f64 / 1000.0;
                    Segment::new(rec.as_str(), on, dur, format!("spk{}", rng.gen_range(0..5))).unwrap()
                })
                .collect();
            Annotation::from_segments(rec.as_str(), segments).unwrap()
        })
        .filter(|a| !a.is_empty())
        .collect()
}

#[test]
fn rttm_round_trips_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..1000 {
        let corpus = random_rttm_corpus(&mut rng);
        let text = write_rttm(&corpus);
        let back = parse_rttm(&text).unwrap();
        assert_eq!(back.len(), corpus.len());
        for (a, b) in corpus.iter().zip(&back) {
            assert_eq!(a.recording_id(), b.recording_id());
            assert_eq!(a.len(), b.len());
            for (x, y) in a.segments().iter().zip(b.segments()) {
                assert_eq!(x.onset.to_bits(), y.onset.to_bits());
                assert_eq!(x.duration.to_bits(), y.duration.to_bits());
                assert_eq!(x.speaker, y.speaker);
            }
        }
        assert_eq!(write_rttm(&back), text);
    }
}

#[test]
fn emb1_round_trips_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..1000 {
        let (rows, cols) = (rng.gen_range(1..20), rng.gen_range(1..20));
        // Arbitrary finite bit patterns, including subnormals and signed zeros.
        let data: Vec<f32> = (0..rows * cols)
            .map(|_| loop {
                let v = f32::from_bits(rng.gen());
                if v.is_finite() {
                    break v;
                }
            })
            .collect();
        let c = Container::new(EMBEDDING_TAG, rows, cols, data.clone()).unwrap();
        let bytes = c.to_bytes();
        assert_eq!(bytes.len(), 12 + 4 * rows * cols);
        let back = Container::from_bytes(&bytes, EMBEDDING_TAG).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, c);
    }
}

#[test]
fn emb1_rejects_bad_input() {
    let c = Container::new(EMBEDDING_TAG, 2, 2, vec![1.0; 4]).unwrap();
    let bytes = c.to_bytes();
    assert!(Container::from_bytes(&bytes[..bytes.len() - 1], EMBEDDING_TAG).is_err());
    assert!(Container::from_bytes(&bytes, *b"PLDA").is_err());
    assert!(Container::new(EMBEDDING_TAG, 2, 2, vec![1.0; 3]).is_err());
}

#[test]
fn embedding_sequence_files_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let dir = tempfile::tempdir().unwrap();
    for i in 0..20 {
        let regions = vec![(0.3, 4.2), (5.0, 9.75)];
        let n = speech_windows(&regions, 1.5, 0.25).unwrap().len();
        let dim = rng.gen_range(1..8);
        let v = DMatrix::from_fn(n, dim, |_, _| rng.gen::<f32>());
        let seq = EmbeddingSequence::new(format!("r{i}"), v, 1.5, 0.25, 10.0, Some(regions)).unwrap();
        let path = dir.path().join(format!("r{i}.emb"));
        write_embeddings(&seq, &path).unwrap();
        assert_eq!(read_embeddings(&path).unwrap(), seq);
    }
}

#[test]
fn posterior_and_overlap_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let values = DMatrix::from_fn(30, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 / 10.0);
    let p = PosteriorMatrix::new("r", values, 0.01, 10, Some(vec!["A".into(), "B".into()])).unwrap();
    let path = dir.path().join("r.post");
    p.save(&path).unwrap();
    let back = PosteriorMatrix::load(&path).unwrap();
    assert_eq!(back.speakers(), p.speakers());
    assert_eq!(back.num_frames(), 30);
    for (a, b) in back.values().iter().zip(p.values().iter()) {
        assert_eq!(*a, (*b as f32) as f64);
    }

    let regions = vec![OverlapRegions::new("r", vec![(1.25, 2.5), (7.0, 7.125)]).unwrap()];
    assert_eq!(parse_overlaps(&write_overlaps(&regions)).unwrap(), regions);
}

#[test]
fn uem_round_trips() {
    let regions = vec![
        ScoringRegions::new("a", vec![(0.0, 10.5)]).unwrap(),
        ScoringRegions::new("b", vec![(1.0, 2.0), (3.0, 4.0)]).unwrap(),
    ];
    assert_eq!(parse_uem(&write_uem(&regions)).unwrap(), regions);
}

proptest! {
    #[test]
    fn rttm_parser_never_panics(text in "[ -~\n]{0,200}") {
        let _ = parse_rttm(&text);
    }

    #[test]
    fn rttm_text_is_a_fixed_point(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = random_rttm_corpus(&mut rng);
        let once = write_rttm(&corpus);
        let twice = write_rttm(&parse_rttm(&once).unwrap());
        prop_assert_eq!(once, twice);
    }
}
