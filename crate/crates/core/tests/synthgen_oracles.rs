use pflow_core::synthgen::{gen_corpus, SynthConfig};

#[test]
fn voiced_fraction_matches_run_length_expectation() {
    for seed in [0, 1, 2] {
        let cfg = SynthConfig { seed, utterances: 200, ..SynthConfig::default() };
        let corpus = gen_corpus(&cfg).unwrap();
        let voiced: usize = corpus.iter().map(|(t, _)| t.voiced_count()).sum();
        let total: usize = corpus.iter().map(|(t, _)| t.len()).sum();
        let frac = voiced as f64 / total as f64;
        let want = cfg.expected_voiced_fraction();
        assert!((frac - want).abs() < 0.05, "seed {seed}: {frac} vs {want}");
    }
}

#[test]
fn corpus_replays_and_seeds_differ() {
    let cfg = SynthConfig { utterances: 25, ..SynthConfig::default() };
    let a = gen_corpus(&cfg).unwrap();
    let b = gen_corpus(&cfg).unwrap();
    assert_eq!(a, b);
    let c = gen_corpus(&SynthConfig { seed: 99, ..cfg.clone() }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn tracks_satisfy_their_contracts() {
    let cfg = SynthConfig { utterances: 100, ..SynthConfig::default() };
    for (track, seq) in gen_corpus(&cfg).unwrap() {
        track.validate().unwrap();
        assert!((cfg.min_frames..=cfg.max_frames).contains(&track.len()));
        assert_eq!(seq.frames(), track.len());
        assert!(track.voiced_count() > 0);
        for ((&f, &v), &e) in track.f0_hz.iter().zip(&track.voiced).zip(&track.energy) {
            assert_eq!(f > 0.0, v);
            if v {
                assert!((80.0..=800.0).contains(&f));
            }
            assert!(e > 0.0 && e.is_finite());
        }
        for (&id, fid) in seq.frame_ids().iter().zip(0..) {
            if id < cfg.unvoiced_ids {
                assert!(!track.voiced[fid]);
            }
        }
    }
}
