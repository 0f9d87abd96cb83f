mod oracles;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reelcrowd_core::gateway::{CallLog, MockEmbedder};
use reelcrowd_core::metrics::{
    embedding_group_score, rouge_l_precision, rouge_n_precision, self_bleu, tokenize, BLEU_EPSILON,
};

const VOCAB: &[&str] = &[
    "the", "cat", "sat", "on", "mat", "garlic", "bread", "space", "wow", "a", "great", "video",
];

fn random_corpus(rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    let size = rng.gen_range(2..=10);
    (0..size)
        .map(|_| {
            let len = rng.gen_range(1..=20);
            (0..len)
                .map(|_| VOCAB[rng.gen_range(0..VOCAB.len())].to_string())
                .collect()
        })
        .collect()
}

#[test]
fn lexical_metrics_match_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let corpus = random_corpus(&mut rng);
        let summary: Vec<String> = (0..rng.gen_range(1..=20))
            .map(|_| VOCAB[rng.gen_range(0..VOCAB.len())].to_string())
            .collect();
        for max_n in 1..=4 {
            let got = self_bleu(&corpus, max_n, None, 0).unwrap();
            let want = oracles::self_bleu(&corpus, max_n, BLEU_EPSILON);
            assert!((got - want).abs() < 1e-9, "self-bleu {got} vs {want}");
        }
        for c in &corpus {
            for n in 1..=2 {
                assert!(
                    (rouge_n_precision(c, &summary, n) - oracles::rouge_n(c, &summary, n)).abs()
                        < 1e-9
                );
            }
            assert!((rouge_l_precision(c, &summary) - oracles::rouge_l(c, &summary)).abs() < 1e-9);
        }
    }
}

#[tokio::test]
async fn group_score_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let embedder = MockEmbedder::new(16, CallLog::new());
    for _ in 0..10 {
        let corpus = random_corpus(&mut rng);
        let got = embedding_group_score(&corpus, &embedder, 1000, 0)
            .await
            .unwrap();
        let want = oracles::group_score(&corpus, &|t| MockEmbedder::vector_for(t, 16));
        assert!((got.value - want).abs() < 1e-9, "{} vs {want}", got.value);
        assert_eq!(got.pairs, corpus.len() * (corpus.len() - 1) / 2);
    }
}

#[test]
fn hand_computed_fixtures() {
    let c = tokenize("garlic bread space");
    let s = tokenize("they bake garlic bread in a vacuum chamber");
    assert!((rouge_n_precision(&c, &s, 1) - 2.0 / 3.0).abs() < 1e-12);
    let dup = vec![tokenize("so good"), tokenize("so good")];
    assert_eq!(self_bleu(&dup, 4, None, 0).unwrap(), 1.0);
}

proptest! {
    #[test]
    fn duplicating_a_comment_never_lowers_self_bleu(seed in 0u64..10_000, pick in 0usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = random_corpus(&mut rng);
        let before = self_bleu(&corpus, 4, None, 0).unwrap();
        let mut grown = corpus.clone();
        grown.push(corpus[pick % corpus.len()].clone());
        let after = self_bleu(&grown, 4, None, 0).unwrap();
        prop_assert!(after >= before - 1e-12, "{} < {}", after, before);
    }

    #[test]
    fn scores_ignore_corpus_order(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = random_corpus(&mut rng);
        let mut shuffled = corpus.clone();
        shuffled.reverse();
        prop_assert_eq!(self_bleu(&corpus, 4, Some(2), 5).unwrap(), self_bleu(&shuffled, 4, Some(2), 5).unwrap());
        let a = self_bleu(&corpus, 4, None, 0).unwrap();
        let b = self_bleu(&shuffled, 4, None, 0).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }
}
