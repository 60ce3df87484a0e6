//! Edit distance and corpus-pooled character error rate.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Levenshtein distance over Unicode scalar values with unit costs.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    edit_distance_slices(&a, &b)
}

pub fn edit_distance_slices<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Reference positions matched (identical character, aligned) by one
/// minimum-cost alignment of `reference` against `hypothesis`.
pub fn matched_positions(reference: &str, hypothesis: &str) -> Vec<usize> {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hypothesis.chars().collect();
    let (n, m) = (r.len(), h.len());
    let mut dp = vec![0usize; (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        dp[idx(i, 0)] = i;
    }
    for j in 0..=m {
        dp[idx(0, j)] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[idx(i - 1, j - 1)] + usize::from(r[i - 1] != h[j - 1]);
            dp[idx(i, j)] = sub.min(dp[idx(i - 1, j)] + 1).min(dp[idx(i, j - 1)] + 1);
        }
    }
    let mut out = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        let here = dp[idx(i, j)];
        if r[i - 1] == h[j - 1] && here == dp[idx(i - 1, j - 1)] {
            out.push(i - 1);
            i -= 1;
            j -= 1;
        } else if here == dp[idx(i - 1, j - 1)] + 1 {
            i -= 1;
            j -= 1;
        } else if here == dp[idx(i - 1, j)] + 1 {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    out.reverse();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleScore {
    pub reference: String,
    pub hypothesis: String,
    pub edits: usize,
    pub ref_chars: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub total_edits: usize,
    pub total_ref_chars: usize,
    pub cer: f64,
    pub samples: Vec<SampleScore>,
}

impl EvalReport {
    /// Tab-separated rows `reference, hypothesis, edits, ref_chars` followed
    /// by a `# CER` summary line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("reference\thypothesis\tedits\tref_chars\n");
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                s.reference, s.hypothesis, s.edits, s.ref_chars
            );
        }
        let _ = writeln!(
            out,
            "# CER\t{:.6}\t{}\t{}",
            self.cer, self.total_edits, self.total_ref_chars
        );
        out
    }
}

/// Corpus-level CER: total edits over total reference characters.
pub fn cer<R: AsRef<str>, H: AsRef<str>>(refs: &[R], hyps: &[H]) -> Result<EvalReport> {
    if refs.len() != hyps.len() {
        return Err(Error::InvalidArgument(format!(
            "{} references but {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let samples: Vec<SampleScore> = refs
        .iter()
        .zip(hyps)
        .map(|(r, h)| SampleScore {
            reference: r.as_ref().to_string(),
            hypothesis: h.as_ref().to_string(),
            edits: edit_distance(r.as_ref(), h.as_ref()),
            ref_chars: r.as_ref().chars().count(),
        })
        .collect();
    let total_edits: usize = samples.iter().map(|s| s.edits).sum();
    let total_ref_chars: usize = samples.iter().map(|s| s.ref_chars).sum();
    if total_ref_chars == 0 {
        return Err(Error::InvalidArgument("references contain no characters".into()));
    }
    Ok(EvalReport {
        total_edits,
        total_ref_chars,
        cer: total_edits as f64 / total_ref_chars as f64,
        samples,
    })
}

/// Fraction of reference occurrences of `chars` that an optimal alignment
/// matches in the hypothesis. `None` when the references contain none.
pub fn char_recall<R: AsRef<str>, H: AsRef<str>>(
    refs: &[R],
    hyps: &[H],
    chars: &HashSet<char>,
) -> Option<f64> {
    let mut total = 0usize;
    let mut hit = 0usize;
    for (r, h) in refs.iter().zip(hyps) {
        let rc: Vec<char> = r.as_ref().chars().collect();
        total += rc.iter().filter(|c| chars.contains(c)).count();
        hit += matched_positions(r.as_ref(), h.as_ref())
            .into_iter()
            .filter(|&i| chars.contains(&rc[i]))
            .count();
    }
    (total > 0).then(|| hit as f64 / total as f64)
}
