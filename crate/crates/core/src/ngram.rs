//! Character n-gram language model with interpolated absolute discounting.
//!
//! The model is stored in backoff form: for every observed context `h` the
//! smoothed probabilities of its observed continuations plus the backoff
//! weight `γ(h)`. A query for an unlisted continuation falls back to
//! `γ(h) · p(c | h')` where `h'` drops the oldest token. This is the same
//! layout an ARPA file carries, so [`crate::arpa`] round-trips it directly.
//!
//! Predictable tokens are the characters plus EOS; BOS only appears in
//! contexts and the CTC blank never reaches the model.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

pub const DEFAULT_ORDER: usize = 10;
pub const DEFAULT_DISCOUNT: f64 = 0.1;

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct ContextEntry {
    /// Natural-log backoff weight; `0.0` when the context has none.
    pub(crate) backoff: f64,
    /// Sorted `(token, ln p)` pairs for listed continuations.
    pub(crate) next: Vec<(u32, f64)>,
}

impl ContextEntry {
    fn find(&self, token: u32) -> Option<f64> {
        self.next
            .binary_search_by_key(&token, |&(t, _)| t)
            .ok()
            .map(|i| self.next[i].1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramLm {
    pub(crate) order: usize,
    /// `None` for models loaded from ARPA files.
    pub(crate) discount: Option<f64>,
    pub(crate) vocab: Vocabulary,
    pub(crate) contexts: HashMap<Vec<u32>, ContextEntry>,
}

fn check_params(order: usize, discount: f64) -> Result<()> {
    if order == 0 {
        return Err(Error::InvalidArgument("LM order must be at least 1".into()));
    }
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "discount must lie in (0, 1), got {discount}"
        )));
    }
    Ok(())
}

impl NgramLm {
    /// Builds a model over the union of the corpus characters and `extra`.
    pub fn build<S, E>(corpus: &[S], order: usize, discount: f64, extra: E) -> Result<Self>
    where
        S: AsRef<str>,
        E: IntoIterator<Item = char>,
    {
        let vocab = Vocabulary::from_texts(corpus.iter().map(AsRef::as_ref), extra);
        Self::build_with_vocab(corpus, order, discount, vocab)
    }

    /// Builds a model over a fixed vocabulary; corpus characters outside it
    /// are rejected.
    pub fn build_with_vocab<S: AsRef<str>>(
        corpus: &[S],
        order: usize,
        discount: f64,
        vocab: Vocabulary,
    ) -> Result<Self> {
        check_params(order, discount)?;
        if corpus.is_empty() {
            return Err(Error::InvalidArgument("LM corpus is empty".into()));
        }

        // context -> (continuation -> count)
        let mut counts: HashMap<Vec<u32>, BTreeMap<u32, u64>> = HashMap::new();
        let mut padded = Vec::new();
        for line in corpus {
            padded.clear();
            padded.push(vocab.bos());
            padded.extend(vocab.encode(line.as_ref())?);
            padded.push(vocab.eos());
            for i in 1..padded.len() {
                let max_ctx = (order - 1).min(i);
                for k in 0..=max_ctx {
                    let ctx = padded[i - k..i].to_vec();
                    *counts.entry(ctx).or_default().entry(padded[i]).or_default() += 1;
                }
            }
        }

        let usable = vocab.char_count() + 1;
        let base = -(usable as f64).ln();
        let mut keys: Vec<Vec<u32>> = counts.keys().cloned().collect();
        keys.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));

        let mut lm = NgramLm {
            order,
            discount: Some(discount),
            vocab,
            contexts: HashMap::with_capacity(keys.len()),
        };

        for ctx in keys {
            let next_counts = &counts[&ctx];
            let total: u64 = next_counts.values().sum();
            let total = total as f64;
            let gamma = discount * next_counts.len() as f64 / total;
            let mut entry = ContextEntry {
                backoff: gamma.ln(),
                next: Vec::with_capacity(next_counts.len()),
            };
            if ctx.is_empty() {
                // Unigrams list every predictable token so lookups always
                // terminate at the empty context.
                for token in 1..=usable as u32 {
                    let c = next_counts.get(&token).copied().unwrap_or(0) as f64;
                    let p = (c - discount).max(0.0) / total + gamma * base.exp();
                    entry.next.push((token, p.ln()));
                }
            } else {
                for (&token, &c) in next_counts {
                    let lower = lm.lookup(&ctx[1..], token);
                    let p = (c as f64 - discount) / total + gamma * lower.exp();
                    entry.next.push((token, p.ln()));
                }
            }
            lm.contexts.insert(ctx, entry);
        }
        Ok(lm)
    }

    /// A model that assigns `1 / V` to every predictable token in every
    /// context.
    pub fn uniform(vocab: Vocabulary) -> Self {
        let usable = vocab.char_count() + 1;
        let lp = -(usable as f64).ln();
        let entry = ContextEntry {
            backoff: 0.0,
            next: (1..=usable as u32).map(|t| (t, lp)).collect(),
        };
        let mut contexts = HashMap::new();
        contexts.insert(Vec::new(), entry);
        NgramLm {
            order: 1,
            discount: None,
            vocab,
            contexts,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> Option<f64> {
        self.discount
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Number of tokens that carry probability mass (characters plus EOS).
    pub fn usable_tokens(&self) -> usize {
        self.vocab.char_count() + 1
    }

    /// Number of stored n-grams per order, index 0 holding unigrams.
    pub fn ngram_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.order];
        for (ctx, entry) in &self.contexts {
            counts[ctx.len()] += entry.next.len();
        }
        // BOS is listed as a unigram so its backoff weight has a home.
        counts[0] += 1;
        counts
    }

    /// Stored contexts, for diagnostics and normalization checks.
    pub fn contexts(&self) -> impl Iterator<Item = &[u32]> {
        self.contexts.keys().map(Vec::as_slice)
    }

    fn truncate<'a>(&self, context: &'a [u32]) -> &'a [u32] {
        let keep = (self.order - 1).min(context.len());
        &context[context.len() - keep..]
    }

    fn lookup(&self, context: &[u32], token: u32) -> f64 {
        let mut ctx = context;
        let mut acc = 0.0;
        loop {
            if let Some(entry) = self.contexts.get(ctx) {
                if let Some(lp) = entry.find(token) {
                    return acc + lp;
                }
                acc += entry.backoff;
            }
            if ctx.is_empty() {
                // Only reachable for malformed loaded models.
                return f64::NEG_INFINITY;
            }
            ctx = &ctx[1..];
        }
    }

    fn check_next(&self, next: u32) -> Result<()> {
        if next == 0 || next == self.vocab.bos() || next > self.vocab.eos() {
            return Err(Error::InvalidArgument(format!(
                "token {} cannot be predicted by the LM",
                self.vocab.token_name(next)
            )));
        }
        Ok(())
    }

    fn check_context(&self, context: &[u32]) -> Result<()> {
        for &t in context {
            if t == 0 || t > self.vocab.bos() {
                return Err(Error::InvalidArgument(format!(
                    "token id {t} is not a valid LM context token"
                )));
            }
        }
        Ok(())
    }

    /// Natural-log probability of token `next` after the token history
    /// `context` (ids as laid out by [`Vocabulary`]). Only the last
    /// `order - 1` tokens of the context matter.
    pub fn log_prob(&self, context: &[u32], next: u32) -> Result<f64> {
        self.check_next(next)?;
        self.check_context(context)?;
        Ok(self.lookup(self.truncate(context), next))
    }

    /// Character-level convenience wrapper; the context carries no BOS.
    pub fn log_prob_chars(&self, context: &str, next: char) -> Result<f64> {
        let ctx = self.vocab.encode(context)?;
        let next = self.vocab.id(next)?;
        self.log_prob(&ctx, next)
    }

    /// Log-probabilities of every predictable token after `context`,
    /// indexed by `token - 1` (characters first, EOS last).
    pub fn distribution(&self, context: &[u32]) -> Vec<f64> {
        let ctx = self.truncate(context);
        let mut out = vec![f64::NEG_INFINITY; self.usable_tokens()];
        self.fill_distribution(ctx, &mut out);
        out
    }

    fn fill_distribution(&self, ctx: &[u32], out: &mut [f64]) {
        let entry = self.contexts.get(ctx);
        if !ctx.is_empty() {
            self.fill_distribution(&ctx[1..], out);
            if let Some(e) = entry {
                if e.backoff != 0.0 {
                    out.iter_mut().for_each(|v| *v += e.backoff);
                }
            }
        }
        if let Some(e) = entry {
            for &(t, lp) in &e.next {
                if let Some(slot) = out.get_mut(t as usize - 1) {
                    *slot = lp;
                }
            }
        }
    }

    /// Log-probability of a whole line: BOS-padded context and a terminal
    /// EOS factor.
    pub fn sequence_log_prob(&self, text: &str) -> Result<f64> {
        let ids = self.vocab.encode(text)?;
        Ok(self.sequence_log_prob_ids(&ids))
    }

    pub(crate) fn sequence_log_prob_ids(&self, ids: &[u32]) -> f64 {
        let mut history = Vec::with_capacity(ids.len() + 1);
        history.push(self.vocab.bos());
        let mut total = 0.0;
        for &id in ids.iter().chain(std::iter::once(&self.vocab.eos())) {
            total += self.lookup(self.truncate(&history), id);
            history.push(id);
        }
        total
    }

    /// `exp(-Σ log p / N)` where `N` counts every predicted token including
    /// the EOS of each line.
    pub fn perplexity<S: AsRef<str>>(&self, corpus: &[S]) -> Result<f64> {
        if corpus.is_empty() {
            return Err(Error::InvalidArgument("perplexity corpus is empty".into()));
        }
        let mut total = 0.0;
        let mut tokens = 0usize;
        for line in corpus {
            let line = line.as_ref();
            total += self.sequence_log_prob(line)?;
            tokens += line.chars().count() + 1;
        }
        Ok((-total / tokens as f64).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab_model() -> NgramLm {
        let corpus = vec!["ab"; 100];
        NgramLm::build(&corpus, 2, 0.1, []).unwrap()
    }

    #[test]
    fn bigram_hand_evaluation() {
        let lm = ab_model();
        // Vocab {a, b}: usable tokens a, b, EOS (V = 3).
        // Unigram continuation counts: a 100, b 100, EOS 100; total 300.
        let uni = |c: f64| (c - 0.1) / 300.0 + 0.1 * 3.0 / 300.0 / 3.0;
        // Context "a" is always followed by b: count 100, one type.
        let gamma_a = 0.1 * 1.0 / 100.0;
        let expected = (100.0 - 0.1) / 100.0 + gamma_a * uni(100.0);
        let got = lm.log_prob_chars("a", 'b').unwrap().exp();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!(got >= 0.999);
    }

    #[test]
    fn unseen_char_has_support() {
        let lm = NgramLm::build(&["ab"], 3, 0.1, ['z']).unwrap();
        assert!(lm.log_prob_chars("a", 'z').unwrap().is_finite());
        assert!(lm.log_prob_chars("ba", 'z').unwrap() > f64::NEG_INFINITY);
    }

    #[test]
    fn repeated_char_context() {
        // "a" continues with a 150 times and EOS 50 times, so the terminal
        // EOS factor caps p(a|a) near 0.75.
        let corpus = vec!["aaaa"; 50];
        let lm = NgramLm::build(&corpus, 2, 0.1, []).unwrap();
        let p_uni = (200.0 - 0.1) / 250.0 + (0.1 * 2.0 / 250.0) * 0.5;
        let expected = (150.0 - 0.1) / 200.0 + (0.1 * 2.0 / 200.0) * p_uni;
        let got = lm.log_prob_chars("a", 'a').unwrap();
        assert!((got - f64::ln(expected)).abs() < 1e-12);
        assert!(got > 0.75f64.ln());
    }

    #[test]
    fn long_context_is_truncated() {
        let corpus = ["abcab", "bcabca", "cab"];
        let lm = NgramLm::build(&corpus, 3, 0.1, []).unwrap();
        let long = lm.log_prob_chars("cabcab", 'c').unwrap();
        let short = lm.log_prob_chars("ab", 'c').unwrap();
        assert_eq!(long.to_bits(), short.to_bits());
    }

    #[test]
    fn rejects_bad_queries_and_params() {
        let lm = ab_model();
        let v = lm.vocab().clone();
        assert!(lm.log_prob(&[], 0).is_err());
        assert!(lm.log_prob(&[], v.bos()).is_err());
        assert!(lm.log_prob(&[v.bos()], v.eos()).is_ok());
        assert!(NgramLm::build::<&str, _>(&[], 2, 0.1, []).is_err());
        assert!(NgramLm::build(&["a"], 0, 0.1, []).is_err());
        assert!(NgramLm::build(&["a"], 2, 1.0, []).is_err());
        let fixed = Vocabulary::new("ab".chars());
        assert!(matches!(
            NgramLm::build_with_vocab(&["abc"], 2, 0.1, fixed),
            Err(Error::OutOfVocabulary('c'))
        ));
    }

    #[test]
    fn sequence_matches_per_position_sum() {
        let lm = ab_model();
        let v = lm.vocab().clone();
        let (a, b, bos, eos) = (v.id('a').unwrap(), v.id('b').unwrap(), v.bos(), v.eos());
        let expected = lm.log_prob(&[bos], a).unwrap()
            + lm.log_prob(&[bos, a], b).unwrap()
            + lm.log_prob(&[bos, a, b], eos).unwrap();
        let got = lm.sequence_log_prob("ab").unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!(got <= 0.0);
    }

    #[test]
    fn distribution_matches_pointwise_queries() {
        let corpus = ["the cat", "the hat", "a cat sat"];
        let lm = NgramLm::build(&corpus, 4, 0.2, []).unwrap();
        let v = lm.vocab().clone();
        let mut ctx = vec![v.bos()];
        ctx.extend(v.encode("the c").unwrap());
        let dist = lm.distribution(&ctx);
        for (i, &lp) in dist.iter().enumerate() {
            let q = lm.log_prob(&ctx, i as u32 + 1).unwrap();
            assert!((lp - q).abs() < 1e-12);
        }
        let total: f64 = dist.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn perplexity_edge_cases() {
        let v = Vocabulary::new("abcd".chars());
        let uniform = NgramLm::uniform(v);
        let ppl = uniform.perplexity(&["abc", "d", ""]).unwrap();
        assert!((ppl - 5.0).abs() < 1e-9);

        let det = NgramLm::build(&["abc"], 4, 1e-7, []).unwrap();
        let ppl = det.perplexity(&["abc"]).unwrap();
        assert!((1.0..1.0 + 1e-5).contains(&ppl), "{ppl}");
    }

    #[test]
    fn build_is_deterministic() {
        let corpus = ["hello world", "held", "yellow"];
        let a = NgramLm::build(&corpus, 5, 0.1, []).unwrap();
        let b = NgramLm::build(&corpus, 5, 0.1, []).unwrap();
        assert_eq!(a, b);
    }
}
