mod common;

use std::collections::BTreeMap;

use hwr_adapt::ctc::PosteriorMatrix;
use hwr_adapt::decoder::{
    estimate_priors, label_to_lm_map, lm_beam_decode, DecoderConfig, LabelPriors, LmScorer,
};
use hwr_adapt::trainer::pseudo_label;
use hwr_adapt::{NgramLm, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{collapse_oracle, for_each_path, random_posteriors, sequence_probs};

const EXHAUSTIVE: usize = 100_000;

fn cfg(w: f64, alpha: f64, beam_width: usize) -> DecoderConfig {
    DecoderConfig {
        w,
        alpha,
        beam_width,
        ..DecoderConfig::default()
    }
}

/// Decoder objective of every collapsed sequence, by path enumeration:
/// log Σ_paths exp(Σ_t w·(log p − α log prior)) + LM(y, EOS).
fn scored_hypotheses(
    post: &PosteriorMatrix,
    priors: &LabelPriors,
    dec: &DecoderConfig,
    lm: Option<(&NgramLm, &Vocabulary)>,
) -> BTreeMap<Vec<u32>, f64> {
    let mut mass: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    let emit = |t: usize, c: usize| dec.w * (post.get(t, c) - dec.alpha * priors.probs()[c].ln());
    for_each_path(post.frames(), post.labels(), emit, |path, s| {
        *mass.entry(collapse_oracle(path)).or_insert(0.0) += s.exp();
    });
    mass.into_iter()
        .map(|(y, m)| {
            let lm_score = match lm {
                Some((lm, labels)) => lm.sequence_log_prob(&labels.decode(&y)).unwrap(),
                None => 0.0,
            };
            (y, m.ln() + lm_score)
        })
        .collect()
}

fn best(scores: &BTreeMap<Vec<u32>, f64>) -> (Vec<u32>, f64) {
    // BTreeMap iterates in lexicographic order, so `>` keeps the first of ties.
    let mut out: Option<(Vec<u32>, f64)> = None;
    for (y, &s) in scores {
        if out.as_ref().is_none_or(|b| s > b.1) {
            out = Some((y.clone(), s));
        }
    }
    out.unwrap()
}

#[test]
fn flat_lm_exhaustive_beam_finds_max_probability_sequence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..150 {
        let t = rng.random_range(1..=4);
        let l = rng.random_range(2..=3);
        let post = random_posteriors(&mut rng, t, l);
        let priors = LabelPriors::uniform(l);
        let got = lm_beam_decode(&post, LmScorer::Flat, &priors, &cfg(1.0, 0.0, EXHAUSTIVE)).unwrap();
        let probs = sequence_probs(&post);
        let (y, p) = probs
            .iter()
            .fold((Vec::new(), f64::NEG_INFINITY), |acc, (y, &p)| {
                if p > acc.1 {
                    (y.clone(), p)
                } else {
                    acc
                }
            });
        assert_eq!(got.labels, y, "case {case}");
        assert!((got.score - p.ln()).abs() < 1e-9, "case {case}");
    }
}

#[test]
fn score_never_decreases_with_beam_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..150 {
        let t = rng.random_range(1..=4);
        let l = rng.random_range(2..=3);
        let post = random_posteriors(&mut rng, t, l);
        let priors = LabelPriors::uniform(l);
        let mut prev = f64::NEG_INFINITY;
        for width in [1, 2, 4, 8, 16, EXHAUSTIVE] {
            let s = lm_beam_decode(&post, LmScorer::Flat, &priors, &cfg(1.0, 0.0, width))
                .unwrap()
                .score;
            assert!(s >= prev - 1e-12, "case {case} width {width}: {s} < {prev}");
            prev = s;
        }
    }
}

#[test]
fn exhaustive_beam_matches_oracle_with_lm_and_priors() {
    let lm = NgramLm::build(&["abba", "ab", "ba", "bab"], 3, 0.1, []).unwrap();
    let labels = Vocabulary::new(['a', 'b']);
    let map = label_to_lm_map(&labels, &lm).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..60 {
        let t = rng.random_range(1..=5);
        let post = random_posteriors(&mut rng, t, 3);
        let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let priors = LabelPriors::from_probs(&raw.iter().map(|p| p / total).collect::<Vec<_>>(), 1e-6).unwrap();
        let dec = cfg(rng.random_range(0.2..1.5), rng.random_range(0.0..1.0), EXHAUSTIVE);
        let got = lm_beam_decode(&post, LmScorer::Ngram { lm: &lm, map: &map }, &priors, &dec).unwrap();
        let (y, s) = best(&scored_hypotheses(&post, &priors, &dec, Some((&lm, &labels))));
        assert_eq!(got.labels, y, "case {case}");
        assert!((got.score - s).abs() < 1e-9, "case {case}: {} vs {s}", got.score);
    }
}

#[test]
fn alpha_zero_ignores_priors() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..30 {
        let post = random_posteriors(&mut rng, 4, 3);
        let a = lm_beam_decode(&post, LmScorer::Flat, &LabelPriors::uniform(3), &cfg(0.7, 0.0, 4)).unwrap();
        let skewed = LabelPriors::from_probs(&[0.8, 0.15, 0.05], 1e-6).unwrap();
        let b = lm_beam_decode(&post, LmScorer::Flat, &skewed, &cfg(0.7, 0.0, 4)).unwrap();
        assert_eq!(a, b);
    }
}

/// Six frames that mildly spell "teh".
fn teh_posteriors(labels: &Vocabulary) -> PosteriorMatrix {
    let t = labels.id('t').unwrap() as usize;
    let h = labels.id('h').unwrap() as usize;
    let e = labels.id('e').unwrap() as usize;
    let mut rows: Vec<[f64; 4]> = Vec::new();
    let mut row = |weights: &[(usize, f64)]| {
        let mut r = [0.0; 4];
        for &(k, p) in weights {
            r[k] = p;
        }
        rows.push(r);
    };
    row(&[(t, 0.9), (0, 0.1)]);
    row(&[(0, 0.9), (t, 0.1)]);
    row(&[(e, 0.5), (h, 0.4), (0, 0.1)]);
    row(&[(0, 0.9), (e, 0.05), (h, 0.05)]);
    row(&[(h, 0.5), (e, 0.4), (0, 0.1)]);
    row(&[(0, 0.9), (h, 0.05), (e, 0.05)]);
    let flat: Vec<f64> = rows.concat().iter().map(|p: &f64| p.max(1e-9)).collect();
    let norm: Vec<f64> = flat
        .chunks(4)
        .flat_map(|r| {
            let s: f64 = r.iter().sum();
            r.iter().map(move |p| p / s).collect::<Vec<_>>()
        })
        .collect();
    PosteriorMatrix::from_probs(6, 4, &norm).unwrap()
}

#[test]
fn lm_overrides_mild_emission_preference() {
    let labels = Vocabulary::new("the".chars());
    let lm = NgramLm::build(&vec!["the"; 50], 4, 0.1, []).unwrap();
    let map = label_to_lm_map(&labels, &lm).unwrap();
    let post = teh_posteriors(&labels);
    let priors = LabelPriors::uniform(4);

    let greedy_like = lm_beam_decode(&post, LmScorer::Flat, &priors, &cfg(1.0, 0.0, 64)).unwrap();
    assert_eq!(labels.decode(&greedy_like.labels), "teh");

    let dec = cfg(0.4, 0.0, 64);
    let got = lm_beam_decode(&post, LmScorer::Ngram { lm: &lm, map: &map }, &priors, &dec).unwrap();
    let scores = scored_hypotheses(&post, &priors, &dec, Some((&lm, &labels)));
    let (y, s) = best(&scores);
    assert_eq!(labels.decode(&y), "the");
    assert_eq!(labels.decode(&got.labels), "the");
    assert!((got.score - s).abs() < 1e-9);
    // Every hypothesis of at most three characters scores below "the".
    for (h, hs) in &scores {
        if h.len() <= 3 && *h != y {
            assert!(*hs < s, "{} scores {hs} >= {s}", labels.decode(h));
        }
    }
}

#[test]
fn pseudo_label_recovers_accented_character() {
    // The recognizer prefers 'e' where the target language writes 'é'.
    let labels = Vocabulary::new("lé e".chars());
    let (l, e, ea) = (
        labels.id('l').unwrap() as usize,
        labels.id('e').unwrap() as usize,
        labels.id('é').unwrap() as usize,
    );
    let n = labels.label_count();
    let mut probs = vec![1e-6; 3 * n];
    probs[l] = 0.95;
    probs[n + e] = 0.5;
    probs[n + ea] = 0.4;
    probs[2 * n] = 0.95;
    let norm: Vec<f64> = probs
        .chunks(n)
        .flat_map(|r| {
            let s: f64 = r.iter().sum();
            r.iter().map(move |p| p / s).collect::<Vec<_>>()
        })
        .collect();
    let post = PosteriorMatrix::from_probs(3, n, &norm).unwrap();

    let corpus: Vec<&str> = std::iter::repeat_n("lé", 40).chain(["le e"]).collect();
    let lm = NgramLm::build(&corpus, 3, 0.1, labels.chars().iter().copied()).unwrap();
    let map = label_to_lm_map(&labels, &lm).unwrap();
    let priors = estimate_priors([&post], 1e-6).unwrap();
    let dec = DecoderConfig::default();
    let scorer = LmScorer::Ngram { lm: &lm, map: &map };

    let got = pseudo_label(&post, scorer, &priors, &dec).unwrap().unwrap();
    assert_eq!(labels.decode(&got), "lé");
    let (y, _) = best(&scored_hypotheses(&post, &priors, &dec, Some((&lm, &labels))));
    assert_eq!(y, got);

    // Without the LM the same posteriors decode to the unaccented letter.
    let flat = pseudo_label(&post, LmScorer::Flat, &priors, &cfg(1.0, 0.0, 64)).unwrap().unwrap();
    assert_eq!(labels.decode(&flat), "le");
}

#[test]
fn pseudo_label_of_blank_frames_is_skipped() {
    let post = PosteriorMatrix::from_probs(3, 3, &[0.98, 0.01, 0.01].repeat(3)).unwrap();
    let out = pseudo_label(&post, LmScorer::Flat, &LabelPriors::uniform(3), &cfg(1.0, 0.0, 8)).unwrap();
    assert_eq!(out, None);
}

#[test]
fn one_hot_spelling_decodes_with_benign_lm() {
    let labels = Vocabulary::new("ab".chars());
    let lm = NgramLm::build(&["ab", "ba", "a", "b"], 2, 0.1, []).unwrap();
    let map = label_to_lm_map(&labels, &lm).unwrap();
    let one_hot = |k: usize| {
        let mut r = vec![1e-6; 3];
        r[k] = 1.0 - 2e-6;
        r
    };
    let probs: Vec<f64> = [0, 1, 0, 2, 0].iter().flat_map(|&k| one_hot(k)).collect();
    let post = PosteriorMatrix::from_probs(5, 3, &probs).unwrap();
    let out = pseudo_label(
        &post,
        LmScorer::Ngram { lm: &lm, map: &map },
        &LabelPriors::uniform(3),
        &DecoderConfig::default(),
    )
    .unwrap();
    assert_eq!(out.map(|y| labels.decode(&y)).as_deref(), Some("ab"));
}
