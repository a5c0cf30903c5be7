use dimt_core::bleu::{corpus_bleu, sentence_bleu, BleuConfig, Smoothing};
use dimt_core::text::TokenScheme;
use dimt_testkit::bleu as oracle;
use proptest::prelude::*;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: [&str; 5] = ["a", "b", "c", "d", "e"];

fn random_sentence(rng: &mut ChaCha8Rng, vocab: usize) -> Vec<String> {
    let len = (rng.next_u32() % 13) as usize;
    (0..len).map(|_| VOCAB[(rng.next_u32() as usize) % vocab].to_string()).collect()
}

fn assert_close(a: f64, b: f64, what: &str) {
    assert!((a - b).abs() <= 1e-12, "{what}: {a} vs {b}");
}

#[test]
fn sentence_bleu_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(20250901);
    for case in 0..1000 {
        let vocab = 1 + (rng.next_u32() % 5) as usize;
        let max_order = 1 + (rng.next_u32() % 4) as usize;
        let smoothing = if rng.next_u32() % 2 == 0 { Smoothing::None } else { Smoothing::FloorEpsilon };
        let n_refs = 1 + (rng.next_u32() % 3) as usize;
        let hyp = random_sentence(&mut rng, vocab);
        let refs: Vec<Vec<String>> = (0..n_refs).map(|_| random_sentence(&mut rng, vocab)).collect();

        let cfg = BleuConfig::default()
            .with_max_order(max_order)
            .with_smoothing(smoothing)
            .with_tokenization(TokenScheme::Whitespace);
        let floor = (smoothing == Smoothing::FloorEpsilon).then_some(cfg.epsilon);
        let ref_texts: Vec<String> = refs.iter().map(|r| r.join(" ")).collect();
        let got = sentence_bleu(&hyp.join(" "), &ref_texts, &cfg).unwrap();
        let want = oracle::sentence(&hyp, &refs, max_order, floor);

        let what = format!("case {case}: {hyp:?} vs {refs:?} order {max_order} {smoothing}");
        assert_close(got.score, want.score, &what);
        assert_close(got.brevity_penalty, want.brevity_penalty, &what);
        for (g, w) in got.precisions.iter().zip(&want.precisions) {
            assert_close(*g, *w, &what);
        }
        assert_eq!(got.hypothesis_length, want.hyp_len, "{what}");
        assert_eq!(got.reference_length, want.ref_len, "{what}");
    }
}

#[test]
fn corpus_bleu_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let pairs: Vec<(Vec<String>, Vec<Vec<String>>)> = (0..1 + rng.next_u32() % 6)
            .map(|_| (random_sentence(&mut rng, 4), vec![random_sentence(&mut rng, 4)]))
            .collect();
        let cfg = BleuConfig::corpus().with_tokenization(TokenScheme::Whitespace);
        let text_pairs: Vec<(String, Vec<String>)> = pairs
            .iter()
            .map(|(h, rs)| (h.join(" "), rs.iter().map(|r| r.join(" ")).collect()))
            .collect();
        let got = corpus_bleu(text_pairs, &cfg).unwrap();
        let want = oracle::corpus(&pairs, 4, None);
        assert_close(got.score, want.score, "corpus");
    }
}

#[test]
fn mixed_tokenization_matches_independent_tokenizer() {
    let cfg = BleuConfig::default();
    let hyp = "今天 天气很好 ok。";
    let refs = ["今天天气 真好 ok。"];
    let got = sentence_bleu(hyp, &refs, &cfg).unwrap();
    let want = oracle::sentence(
        &dimt_testkit::tokens::mixed(hyp),
        &[dimt_testkit::tokens::mixed(refs[0])],
        4,
        Some(0.1),
    );
    assert_close(got.score, want.score, "mixed");
}

fn sentence() -> impl Strategy<Value = String> {
    proptest::collection::vec(proptest::sample::select(&VOCAB[..]), 0..12).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn self_bleu_is_one(h in sentence()) {
        prop_assume!(!h.is_empty());
        for cfg in [BleuConfig::default(), BleuConfig::corpus()] {
            prop_assert_eq!(sentence_bleu(&h, &[&h], &cfg).unwrap().score, 1.0);
        }
    }

    #[test]
    fn scores_in_unit_interval(h in sentence(), r in sentence(), order in 1usize..=9) {
        let cfg = BleuConfig::default().with_max_order(order);
        let s = sentence_bleu(&h, &[&r], &cfg).unwrap();
        prop_assert!((0.0..=1.0).contains(&s.score));
        prop_assert!(s.precisions.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn corpus_is_permutation_invariant(pairs in proptest::collection::vec((sentence(), sentence()), 1..8)) {
        let cfg = BleuConfig::corpus();
        let forward = corpus_bleu(pairs.iter().map(|(h, r)| (h, [r])), &cfg).unwrap();
        let backward = corpus_bleu(pairs.iter().rev().map(|(h, r)| (h, [r])), &cfg).unwrap();
        prop_assert_eq!(forward, backward);
    }

    #[test]
    fn score_formula_holds(h in sentence(), r in sentence()) {
        let cfg = BleuConfig::default();
        let s = sentence_bleu(&h, &[&r], &cfg).unwrap();
        if s.precisions.iter().all(|&p| p > 0.0) {
            let mean = s.precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
            prop_assert!((s.score - s.brevity_penalty * mean.exp()).abs() < 1e-12);
        }
    }
}
