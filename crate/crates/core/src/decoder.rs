//! Language-model fused CTC prefix beam search with prior-scaled emissions,
//! and estimation of the label priors it divides by.
//!
//! The score of a transcription `y` is
//!
//! ```text
//! log Σ_paths Π_t exp(w · (log p(c_t | x_t) − α · log p(c_t)))  +  log p_LM(y, EOS)
//! ```
//!
//! i.e. the emission term is weighted by `w` while the LM carries weight one.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::ctc::{log_add, PosteriorMatrix};
use crate::error::{Error, Result};
use crate::ngram::NgramLm;
use crate::vocab::{Vocabulary, BLANK};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    /// Emission weight.
    pub w: f64,
    /// Prior-scaling exponent.
    pub alpha: f64,
    pub beam_width: usize,
    pub prior_floor: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            w: 0.4,
            alpha: 0.5,
            beam_width: 64,
            prior_floor: 1e-6,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w >= 0.0 && self.alpha >= 0.0) {
            return Err(Error::InvalidArgument("w and alpha must be non-negative".into()));
        }
        if self.beam_width == 0 {
            return Err(Error::InvalidArgument("beam width must be at least 1".into()));
        }
        if !(self.prior_floor > 0.0 && self.prior_floor < 1.0) {
            return Err(Error::InvalidArgument("prior floor must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Marginal label distribution `p(h)` over all labels including blank.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPriors {
    probs: Vec<f64>,
}

impl LabelPriors {
    pub fn uniform(labels: usize) -> Self {
        LabelPriors {
            probs: vec![1.0 / labels as f64; labels],
        }
    }

    /// Floors `probs` at `floor` and renormalizes, taking the mass for
    /// floored entries from the others so every entry stays `>= floor`.
    pub fn from_probs(probs: &[f64], floor: f64) -> Result<Self> {
        let n = probs.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty prior vector".into()));
        }
        if floor * n as f64 >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "floor {floor} too large for {n} labels"
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::NonFinite("prior estimate".into()));
        }
        let mut fixed = vec![false; n];
        let mut out = probs.to_vec();
        loop {
            let n_fixed = fixed.iter().filter(|&&f| f).count();
            let free_sum: f64 = (0..n).filter(|&i| !fixed[i]).map(|i| probs[i]).sum();
            let budget = 1.0 - n_fixed as f64 * floor;
            let mut changed = false;
            for i in 0..n {
                if fixed[i] {
                    out[i] = floor;
                    continue;
                }
                let v = if free_sum > 0.0 {
                    probs[i] * budget / free_sum
                } else {
                    0.0
                };
                if v < floor {
                    fixed[i] = true;
                    changed = true;
                }
                out[i] = v;
            }
            if !changed {
                break;
            }
        }
        Ok(LabelPriors { probs: out })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Running mean of frame posteriors, used for the prior pass.
#[derive(Debug, Clone)]
pub struct PriorAccumulator {
    sums: Vec<f64>,
    frames: usize,
}

impl PriorAccumulator {
    pub fn new(labels: usize) -> Self {
        PriorAccumulator {
            sums: vec![0.0; labels],
            frames: 0,
        }
    }

    pub fn add(&mut self, posteriors: &PosteriorMatrix) -> Result<()> {
        if posteriors.labels() != self.sums.len() {
            return Err(Error::Shape(format!(
                "posteriors have {} labels, accumulator {}",
                posteriors.labels(),
                self.sums.len()
            )));
        }
        for row in posteriors.rows() {
            for (s, v) in self.sums.iter_mut().zip(row) {
                *s += v.exp();
            }
        }
        self.frames += posteriors.frames();
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn finish(&self, floor: f64) -> Result<LabelPriors> {
        if self.frames == 0 {
            return Err(Error::InvalidArgument("no frames to estimate priors from".into()));
        }
        let mean: Vec<f64> = self.sums.iter().map(|s| s / self.frames as f64).collect();
        LabelPriors::from_probs(&mean, floor)
    }
}

pub fn estimate_priors<'a, I>(batches: I, floor: f64) -> Result<LabelPriors>
where
    I: IntoIterator<Item = &'a PosteriorMatrix>,
{
    let mut iter = batches.into_iter().peekable();
    let labels = iter
        .peek()
        .map(|p| p.labels())
        .ok_or_else(|| Error::InvalidArgument("empty posterior stream".into()))?;
    let mut acc = PriorAccumulator::new(labels);
    for p in iter {
        acc.add(p)?;
    }
    acc.finish(floor)
}

/// Character-sequence scorer used during decoding.
#[derive(Debug, Clone, Copy)]
pub enum LmScorer<'a> {
    /// N-gram model; `map[label]` is the LM token for each recognizer label.
    Ngram { lm: &'a NgramLm, map: &'a [u32] },
    /// Every transcription equally likely: contributes nothing to scores.
    Flat,
}

/// Label → LM token mapping for an n-gram scorer.
pub fn label_to_lm_map(labels: &Vocabulary, lm: &NgramLm) -> Result<Vec<u32>> {
    let mut map = vec![0u32; labels.label_count()];
    for (i, &c) in labels.chars().iter().enumerate() {
        map[i + 1] = lm.vocab().id(c)?;
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub labels: Vec<u32>,
    pub score: f64,
}

#[derive(Clone, Copy)]
struct Node {
    parent: u32,
    label: u32,
}

/// Prefix trie: node 0 is the empty prefix.
struct PrefixTrie {
    nodes: Vec<Node>,
    children: HashMap<(u32, u32), u32>,
}

impl PrefixTrie {
    fn new() -> Self {
        PrefixTrie {
            nodes: vec![Node {
                parent: u32::MAX,
                label: BLANK,
            }],
            children: HashMap::new(),
        }
    }

    fn child(&mut self, parent: u32, label: u32) -> u32 {
        let next_id = self.nodes.len() as u32;
        let id = *self.children.entry((parent, label)).or_insert(next_id);
        if id == next_id {
            self.nodes.push(Node { parent, label });
        }
        id
    }

    fn labels(&self, mut id: u32) -> Vec<u32> {
        let mut out = Vec::new();
        while id != 0 {
            let n = self.nodes[id as usize];
            out.push(n.label);
            id = n.parent;
        }
        out.reverse();
        out
    }

    fn last(&self, id: u32) -> Option<u32> {
        (id != 0).then(|| self.nodes[id as usize].label)
    }
}

#[derive(Clone, Copy)]
struct BeamScore {
    blank: f64,
    non_blank: f64,
}

impl BeamScore {
    const EMPTY: BeamScore = BeamScore {
        blank: f64::NEG_INFINITY,
        non_blank: f64::NEG_INFINITY,
    };

    fn total(&self) -> f64 {
        log_add(self.blank, self.non_blank)
    }
}

struct LmCache<'a> {
    scorer: LmScorer<'a>,
    dists: HashMap<u32, Vec<f64>>,
}

impl LmCache<'_> {
    /// LM log-probabilities (indexed by LM token − 1) after prefix `node`.
    fn dist(&mut self, trie: &PrefixTrie, node: u32) -> Option<&[f64]> {
        let LmScorer::Ngram { lm, map } = self.scorer else {
            return None;
        };
        let dist = self.dists.entry(node).or_insert_with(|| {
            let mut ctx = vec![lm.vocab().bos()];
            ctx.extend(trie.labels(node).iter().map(|&l| map[l as usize]));
            lm.distribution(&ctx)
        });
        Some(dist)
    }

    fn char_score(&mut self, trie: &PrefixTrie, node: u32, label: u32) -> f64 {
        let map = match self.scorer {
            LmScorer::Ngram { map, .. } => map,
            LmScorer::Flat => return 0.0,
        };
        let token = map[label as usize];
        self.dist(trie, node).map_or(0.0, |d| d[token as usize - 1])
    }

    fn eos_score(&mut self, trie: &PrefixTrie, node: u32) -> f64 {
        self.dist(trie, node).map_or(0.0, |d| *d.last().expect("EOS slot"))
    }
}

fn rank(trie: &PrefixTrie, a: (u32, f64), b: (u32, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| trie.labels(a.0).cmp(&trie.labels(b.0)))
}

/// CTC prefix beam search fusing prior-scaled emissions with an LM.
pub fn lm_beam_decode(
    posteriors: &PosteriorMatrix,
    scorer: LmScorer<'_>,
    priors: &LabelPriors,
    cfg: &DecoderConfig,
) -> Result<Decoded> {
    cfg.validate()?;
    let l_len = posteriors.labels();
    if priors.len() != l_len {
        return Err(Error::Shape(format!(
            "{} priors for {l_len} labels",
            priors.len()
        )));
    }
    if let LmScorer::Ngram { lm, map } = scorer {
        if map.len() != l_len {
            return Err(Error::Shape(format!(
                "label map covers {} labels, posteriors have {l_len}",
                map.len()
            )));
        }
        if map[1..]
            .iter()
            .any(|&t| t == 0 || t >= lm.vocab().eos())
        {
            return Err(Error::InvalidArgument("label outside LM vocabulary".into()));
        }
    }

    let prior_term: Vec<f64> = priors.probs().iter().map(|p| cfg.alpha * p.ln()).collect();
    let mut trie = PrefixTrie::new();
    let mut lm = LmCache {
        scorer,
        dists: HashMap::new(),
    };

    let mut beams: Vec<(u32, BeamScore)> = vec![(
        0,
        BeamScore {
            blank: 0.0,
            non_blank: f64::NEG_INFINITY,
        },
    )];
    let mut emit = vec![0.0; l_len];
    let mut next: HashMap<u32, BeamScore> = HashMap::new();

    for t in 0..posteriors.frames() {
        let row = posteriors.row(t);
        for k in 0..l_len {
            emit[k] = cfg.w * (row[k] - prior_term[k]);
        }
        next.clear();
        for &(node, score) in &beams {
            let total = score.total();
            let entry = next.entry(node).or_insert(BeamScore::EMPTY);
            entry.blank = log_add(entry.blank, total + emit[BLANK as usize]);
            let last = trie.last(node);
            if let Some(last) = last {
                entry.non_blank = log_add(entry.non_blank, score.non_blank + emit[last as usize]);
            }
            for c in 1..l_len as u32 {
                let lm_score = lm.char_score(&trie, node, c);
                let from = if Some(c) == last { score.blank } else { total };
                let child = trie.child(node, c);
                let e = next.entry(child).or_insert(BeamScore::EMPTY);
                e.non_blank = log_add(e.non_blank, from + emit[c as usize] + lm_score);
            }
        }

        let mut ranked: Vec<(u32, f64)> = next.iter().map(|(&n, s)| (n, s.total())).collect();
        if ranked.len() > cfg.beam_width {
            ranked.select_nth_unstable_by(cfg.beam_width - 1, |a, b| rank(&trie, *a, *b));
            ranked.truncate(cfg.beam_width);
        }
        ranked.sort_by(|a, b| rank(&trie, *a, *b));
        beams = ranked.iter().map(|&(n, _)| (n, next[&n])).collect();
    }

    let mut finals: Vec<(u32, f64)> = beams
        .iter()
        .map(|&(node, s)| (node, s.total() + lm.eos_score(&trie, node)))
        .collect();
    finals.sort_by(|a, b| rank(&trie, *a, *b));
    let (best, score) = finals[0];
    Ok(Decoded {
        labels: trie.labels(best),
        score,
    })
}
