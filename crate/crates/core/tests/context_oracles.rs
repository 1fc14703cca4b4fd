use pflow_core::context::{
    apply_unvoiced_bias, build_phi_text, voiced_merge, PhonemeSeq, VoicedClassifier, VoicedMerge,
};
use pflow_core::dcore::{grad_check, Adam, ParamStore, Probe, Tape, Tensor};
use pflow_core::synthgen::{gen_corpus, SynthConfig};
use pflow_core::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn permuting_phonemes_permutes_column_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let table = random(&mut rng, 10, 4);
    for _ in 0..50 {
        let n = rng.random_range(1..7);
        let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let durs: Vec<usize> = (0..n).map(|_| rng.random_range(1..5)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let seq = PhonemeSeq::new(ids.clone(), durs.clone()).unwrap();
        let pseq = PhonemeSeq::new(perm.iter().map(|&i| ids[i]).collect(), perm.iter().map(|&i| durs[i]).collect()).unwrap();
        let a = build_phi_text(&seq, &table).unwrap().phi;
        let b = build_phi_text(&pseq, &table).unwrap().phi;
        let starts: Vec<usize> = durs.iter().scan(0, |s, d| { let v = *s; *s += d; Some(v) }).collect();
        let mut row = 0;
        for &p in &perm {
            for k in 0..durs[p] {
                assert_eq!(b.row_slice(row), a.row_slice(starts[p] + k));
                row += 1;
            }
        }
        assert_eq!(b.rows(), durs.iter().sum::<usize>());
    }
}

fn merge_setup(rng: &mut ChaCha8Rng, t: usize, c: usize) -> (ParamStore, VoicedMerge, Tensor, Vec<bool>) {
    let mut store = ParamStore::new();
    let merge = VoicedMerge::new(&mut store, "m", c);
    let flat: Vec<f64> = (0..store.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    store.set_flat_values(&flat).unwrap();
    let phi = random(rng, t, c);
    let voiced: Vec<bool> = (0..t).map(|_| rng.random_bool(0.5)).collect();
    (store, merge, phi, voiced)
}

#[test]
fn merge_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut store, merge, phi, voiced) = merge_setup(&mut rng, 7, 5);
    let w = random(&mut rng, 7, 5);
    let loss = |tape: &mut Tape, store: &ParamStore| -> Result<pflow_core::dcore::Var> {
        let p = tape.constant(phi.clone())?;
        let y = merge.forward(tape, store, p, &voiced)?;
        let w = tape.constant(w.clone())?;
        let m = tape.mul(y, w)?;
        tape.sum(m)
    };
    let mut tape = Tape::new();
    let l = loss(&mut tape, &store).unwrap();
    let g = tape.backward(l).unwrap();
    store.zero_grads();
    store.accumulate(&g);
    let analytic = store.flat_grads();
    let params = store.flat_values();
    let mut probe = store.clone();
    let eval = |p: &[f64]| -> Result<Probe> {
        probe.set_flat_values(p)?;
        let mut tape = Tape::new();
        let l = loss(&mut tape, &probe)?;
        Ok(tape.value(l).item()?.into())
    };
    let r = grad_check(eval, &params, &analytic, 1e-6, None).unwrap();
    assert!(r.max_rel_err < 1e-5, "{}", r.max_rel_err);
}

#[test]
fn voiced_columns_ignore_unvoiced_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (store, merge, phi, voiced) = merge_setup(&mut rng, 12, 4);
        let p = merge.params(&store);
        let base = voiced_merge(&phi, &voiced, &p).unwrap();
        let mut q = p.clone();
        q.s_unvoiced.iter_mut().for_each(|v| *v += rng.random_range(-3.0..3.0));
        q.b_unvoiced.iter_mut().for_each(|v| *v += rng.random_range(-3.0..3.0));
        let out = voiced_merge(&phi, &voiced, &q).unwrap();
        for t in 0..12 {
            if voiced[t] {
                assert_eq!(base.row_slice(t), out.row_slice(t));
            }
        }
        // tape and value paths agree
        let mut tape = Tape::new();
        let pv = tape.constant(phi.clone()).unwrap();
        let y = merge.forward(&mut tape, &store, pv, &voiced).unwrap();
        assert!(tape.value(y).max_abs_diff(&base) < 1e-15);
    }
}

#[test]
fn classifier_separates_synthetic_voicing() {
    let synth = SynthConfig { utterances: 60, vocab_size: 24, shared_id_rate: 0.0, ..SynthConfig::default() };
    let corpus = gen_corpus(&synth).unwrap();
    let (train, held) = corpus.split_at(40);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let emb = store.add("emb", random(&mut rng, 24, 8));
    let clf = VoicedClassifier::new(&mut store, "clf", 8, 8, &mut rng);
    let mut opt = Adam::new(&store, 1e-2);
    for step in 0..300 {
        let (track, seq) = &train[step % train.len()];
        let mut tape = Tape::new();
        let table = tape.param(&store, emb).unwrap();
        let phi = tape.gather_rows(table, &seq.frame_ids()).unwrap();
        let l = clf.bce(&mut tape, &store, phi, &track.voiced).unwrap();
        let g = tape.backward(l).unwrap();
        store.zero_grads();
        store.accumulate(&g);
        opt.step(&mut store).unwrap();
    }
    let (mut right, mut total) = (0usize, 0usize);
    for (track, seq) in held {
        let phi = build_phi_text(seq, store.value(emb)).unwrap().phi;
        let pred = clf.predict_voiced(&store, &phi).unwrap();
        right += pred.iter().zip(&track.voiced).filter(|(a, b)| a == b).count();
        total += pred.len();
    }
    let acc = right as f64 / total as f64;
    assert!(acc > 0.95, "held-out accuracy {acc}");
}

proptest! {
    #[test]
    fn unvoiced_bias_never_raises_or_touches_voiced(
        durs in prop::collection::vec(1usize..5, 1..8),
        head in prop::collection::vec(-1.0f64..1.0, 8),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<usize> = durs.iter().map(|_| rng.random_range(0..8)).collect();
        let seq = PhonemeSeq::new(ids, durs).unwrap();
        let t = seq.frames();
        let x: Vec<f64> = (0..t).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v: Vec<bool> = (0..t).map(|_| rng.random_bool(0.5)).collect();
        let y = apply_unvoiced_bias(&x, &seq, &v, &head).unwrap();
        for i in 0..t {
            prop_assert!(y[i] <= x[i]);
            if v[i] {
                prop_assert_eq!(y[i], x[i]);
            }
        }
    }

    #[test]
    fn phi_has_one_row_per_frame(durs in prop::collection::vec(1usize..6, 1..10)) {
        let table = Tensor::zeros(&[3, 2]);
        let seq = PhonemeSeq::new(vec![1; durs.len()], durs.clone()).unwrap();
        prop_assert_eq!(build_phi_text(&seq, &table).unwrap().phi.rows(), durs.iter().sum::<usize>());
    }
}
