use std::collections::HashSet;

use hwr_adapt::dataset::sample_corpus;
use hwr_adapt::synth::{make_language_pair, PairOptions, RenderOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn bigram_frequencies_follow_the_table() {
    let (_, target) = make_language_pair(&PairOptions::default()).unwrap();
    let n = target.chars.len();
    let mut counts = vec![vec![0u64; n]; n];
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100_000 {
        let text: Vec<char> = target.sample_text(12, &mut rng).chars().collect();
        for w in text.windows(2) {
            let i = target.chars.binary_search(&w[0]).unwrap();
            let j = target.chars.binary_search(&w[1]).unwrap();
            counts[i][j] += 1;
        }
    }
    for (i, row) in counts.iter().enumerate() {
        let total: u64 = row.iter().sum();
        for (j, &c) in row.iter().enumerate() {
            let diff = (c as f64 / total as f64 - target.markov[i][j]).abs();
            assert!(diff < 0.01, "{:?}->{:?}: {diff}", target.chars[i], target.chars[j]);
        }
    }
}

#[test]
fn source_texts_never_contain_target_only_characters() {
    let (source, target) = make_language_pair(&PairOptions::default()).unwrap();
    let extra: HashSet<char> = target.chars.iter().filter(|c| !source.contains(**c)).copied().collect();
    assert_eq!(extra.len(), 3);
    let corpus = sample_corpus(&source, 2000, 5..=20, 4, "check");
    assert!(corpus.iter().all(|l| !l.chars().any(|c| extra.contains(&c))));
    let target_corpus = sample_corpus(&target, 2000, 5..=20, 4, "check");
    assert!(target_corpus.iter().any(|l| l.chars().any(|c| extra.contains(&c))));
}

#[test]
fn markov_rows_are_stochastic() {
    let (source, target) = make_language_pair(&PairOptions::default()).unwrap();
    for spec in [&source, &target] {
        for row in &spec.markov {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!((spec.start.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_ne!(source.markov, target.markov[..source.markov.len()].to_vec());
}

#[test]
fn rendering_is_reproducible_per_seed() {
    let (_, target) = make_language_pair(&PairOptions::default()).unwrap();
    let render = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        target.render("abé c", &mut rng, RenderOptions::default()).unwrap()
    };
    assert_eq!(render(3), render(3));
    assert_ne!(render(3), render(4));
    assert!(target.render("z", &mut ChaCha8Rng::seed_from_u64(0), RenderOptions::default()).is_err());
}
