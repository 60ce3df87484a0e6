//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use hwr_adapt::ctc::PosteriorMatrix;
use rand::Rng;

/// Random `T × L` posteriors from Gaussian-ish logits.
pub fn random_posteriors<R: Rng>(rng: &mut R, t: usize, l: usize) -> PosteriorMatrix {
    let logits: Vec<f64> = (0..t * l).map(|_| rng.random_range(-2.0..2.0)).collect();
    PosteriorMatrix::from_logits(t, l, &logits).unwrap()
}

pub fn random_logits<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

/// Visits every frame-label path as `(path, Σ_t score(t, label))`.
pub fn for_each_path(t: usize, l: usize, score: impl Fn(usize, usize) -> f64, mut f: impl FnMut(&[u32], f64)) {
    let mut path = vec![0u32; t];
    let total = l.pow(t as u32);
    for mut code in 0..total {
        let mut s = 0.0;
        for (i, slot) in path.iter_mut().enumerate() {
            *slot = (code % l) as u32;
            code /= l;
            s += score(i, *slot as usize);
        }
        f(&path, s);
    }
}

/// Naive collapse: merge repeats, drop zeros.
pub fn collapse_oracle(path: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != 0 {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// Probability of every collapsed sequence, by full path enumeration.
pub fn sequence_probs(post: &PosteriorMatrix) -> BTreeMap<Vec<u32>, f64> {
    let mut out = BTreeMap::new();
    for_each_path(post.frames(), post.labels(), |t, c| post.get(t, c), |path, s| {
        *out.entry(collapse_oracle(path)).or_insert(0.0) += s.exp();
    });
    out
}

/// Recursive edit distance with memoization.
pub fn levenshtein_oracle(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        if let Some(&v) = memo.get(&(a.len(), b.len())) {
            return v;
        }
        let cost = usize::from(a[0] != b[0]);
        let v = (go(&a[1..], &b[1..], memo) + cost)
            .min(go(&a[1..], b, memo) + 1)
            .min(go(a, &b[1..], memo) + 1);
        memo.insert((a.len(), b.len()), v);
        v
    }
    go(a, b, &mut HashMap::new())
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}
