//! Synthetic "languages": glyph prototypes rendered into frame sequences,
//! Markov-chain text, and a per-language style transform.
//!
//! Two languages built from the same base seed share the prototypes of
//! their common characters, so the domain shift between them comes only
//! from the style transform, the character statistics and the characters
//! one of them lacks.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};

pub const DEFAULT_INPUT_DIM: usize = 16;
pub const DEFAULT_STYLE_STRENGTH: f64 = 0.5;
pub const DEFAULT_NOISE: f64 = 0.3;

/// Probability that a prototype row is dropped while rendering.
pub const DROP_PROB: f64 = 0.1;
/// Probability that a prototype row is emitted twice.
pub const DUP_PROB: f64 = 0.2;

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn mix_seed(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for a named stream (`tag`) and item index under `base`.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h = mix_seed(base);
    for b in tag.bytes() {
        h = mix_seed(h ^ b as u64);
    }
    mix_seed(h ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Base letter for the accented variants the generator knows about.
pub fn accent_base(c: char) -> Option<char> {
    Some(match c {
        'à' | 'á' | 'â' | 'ä' => 'a',
        'é' | 'è' | 'ê' | 'ë' => 'e',
        'ì' | 'í' | 'î' | 'ï' => 'i',
        'ò' | 'ó' | 'ô' | 'ö' => 'o',
        'ù' | 'ú' | 'û' | 'ü' => 'u',
        'ç' => 'c',
        'ñ' => 'n',
        _ => return None,
    })
}

/// Shared characters of the default pair: 24 lowercase letters and space.
pub fn default_shared_chars() -> Vec<char> {
    ('a'..='x').chain(std::iter::once(' ')).collect()
}

pub fn default_target_extra() -> Vec<char> {
    vec!['à', 'ç', 'é']
}

/// A `k × D` glyph prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct Glyph {
    pub rows: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageSpec {
    pub name: String,
    pub input_dim: usize,
    /// Sorted character subset of this language.
    pub chars: Vec<char>,
    pub glyphs: BTreeMap<char, Glyph>,
    /// Row-stochastic transition table indexed like `chars`.
    pub markov: Vec<Vec<f64>>,
    /// Stationary distribution of `markov`; the chain starts from it.
    pub start: Vec<f64>,
    /// Row-major `D × D` style matrix applied to every frame.
    pub style: Vec<f64>,
    pub style_bias: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub stretch: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { stretch: true }
    }
}

fn glyph_for(base_seed: u64, c: char, dim: usize) -> Glyph {
    if let Some(base) = accent_base(c) {
        // Same strokes as the base letter plus a mark on the first rows.
        let mut g = glyph_for(base_seed, base, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base_seed, "accent", c as u64));
        let marked = g.rows.min(2);
        for v in &mut g.data[..marked * dim] {
            let n: f64 = rng.sample(StandardNormal);
            *v = (*v + 0.9 * n) as f32 as f64;
        }
        return g;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base_seed, "glyph", c as u64));
    let rows = rng.random_range(3..=7);
    let data = (0..rows * dim)
        .map(|_| {
            let n: f64 = rng.sample(StandardNormal);
            n as f32 as f64
        })
        .collect();
    Glyph { rows, data }
}

/// Sparse-ish transition rows: most mass on three preferred successors.
fn markov_table(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut row = vec![0.15 / n as f64; n];
            let picks = rand::seq::index::sample(rng, n, 3.min(n));
            let weights: Vec<f64> = (0..picks.len()).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = weights.iter().sum();
            for (j, w) in picks.iter().zip(&weights) {
                row[j] += 0.85 * w / total;
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            row
        })
        .collect()
}

fn stationary(markov: &[Vec<f64>]) -> Vec<f64> {
    let n = markov.len();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..2000 {
        let mut next = vec![0.0; n];
        for (i, row) in markov.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                next[j] += pi[i] * p;
            }
        }
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= s);
        let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if delta < 1e-15 {
            break;
        }
    }
    pi
}

impl LanguageSpec {
    /// Builds one language. Glyphs depend only on `base_seed` and the
    /// character; the Markov table depends on `lang_seed`.
    pub fn new(
        name: &str,
        base_seed: u64,
        lang_seed: u64,
        chars: impl IntoIterator<Item = char>,
        style_strength: f64,
        noise_sigma: f64,
    ) -> Result<Self> {
        let chars: Vec<char> = chars.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        if chars.is_empty() {
            return Err(Error::InvalidArgument("language needs at least one character".into()));
        }
        if !(noise_sigma >= 0.0 && style_strength >= 0.0) {
            return Err(Error::InvalidArgument("noise and style strength must be >= 0".into()));
        }
        let dim = DEFAULT_INPUT_DIM;
        let glyphs = chars.iter().map(|&c| (c, glyph_for(base_seed, c, dim))).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(lang_seed, "markov", 0));
        let markov = markov_table(chars.len(), &mut rng);
        let start = stationary(&markov);

        // Style: identity plus a scaled random perturbation, and a bias.
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(lang_seed, "style", 0));
        let scale = 1.0 / (dim as f64).sqrt();
        let mut style = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                let n: f64 = rng.sample(StandardNormal);
                style[i * dim + j] = f64::from(u8::from(i == j)) + style_strength * scale * n;
            }
        }
        let style_bias = (0..dim)
            .map(|_| {
                let n: f64 = rng.sample(StandardNormal);
                style_strength * 0.5 * n
            })
            .collect();

        Ok(LanguageSpec {
            name: name.to_string(),
            input_dim: dim,
            chars,
            glyphs,
            markov,
            start,
            style,
            style_bias,
            noise_sigma,
            seed: lang_seed,
        })
    }

    pub fn contains(&self, c: char) -> bool {
        self.chars.binary_search(&c).is_ok()
    }

    fn index(&self, c: char) -> Result<usize> {
        self.chars.binary_search(&c).map_err(|_| Error::OutOfVocabulary(c))
    }

    /// Samples `length` characters from the Markov chain.
    pub fn sample_text<R: Rng>(&self, length: usize, rng: &mut R) -> String {
        let mut out = String::with_capacity(length);
        let mut dist: &[f64] = &self.start;
        for _ in 0..length {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = dist.len() - 1;
            for (i, p) in dist.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            out.push(self.chars[pick]);
            dist = &self.markov[pick];
        }
        out
    }

    /// Renders `text` into a `T × D` row-major frame buffer. Values are
    /// rounded to `f32` so frame files round-trip exactly.
    pub fn render<R: Rng>(&self, text: &str, rng: &mut R, opts: RenderOptions) -> Result<Vec<f64>> {
        let d = self.input_dim;
        let mut raw: Vec<&[f64]> = Vec::new();
        for c in text.chars() {
            self.index(c)?;
            let g = &self.glyphs[&c];
            let rows: Vec<&[f64]> = g.data.chunks(d).collect();
            if !opts.stretch {
                raw.extend(rows);
                continue;
            }
            let mut emitted: Vec<&[f64]> = Vec::with_capacity(2 * rows.len());
            for row in &rows {
                let u: f64 = rng.random();
                if u < DROP_PROB {
                    continue;
                }
                emitted.push(row);
                if u < DROP_PROB + DUP_PROB {
                    emitted.push(row);
                }
            }
            if emitted.is_empty() {
                emitted.push(rows[rows.len() / 2]);
            }
            raw.extend(emitted);
        }

        let noise = Normal::new(0.0, self.noise_sigma.max(0.0))
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut out = Vec::with_capacity(raw.len() * d);
        for row in raw {
            for i in 0..d {
                let styled: f64 = self.style_bias[i]
                    + self.style[i * d..(i + 1) * d]
                        .iter()
                        .zip(row)
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                let n = if self.noise_sigma > 0.0 {
                    noise.sample(rng)
                } else {
                    0.0
                };
                out.push((styled + n) as f32 as f64);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairOptions {
    pub base_seed: u64,
    pub shared: Vec<char>,
    pub source_extra: Vec<char>,
    pub target_extra: Vec<char>,
    pub style_strength: f64,
    pub noise_sigma: f64,
}

impl Default for PairOptions {
    fn default() -> Self {
        PairOptions {
            base_seed: 1,
            shared: default_shared_chars(),
            source_extra: Vec::new(),
            target_extra: default_target_extra(),
            style_strength: DEFAULT_STYLE_STRENGTH,
            noise_sigma: DEFAULT_NOISE,
        }
    }
}

/// Source language (identity style) and target language (perturbed style)
/// sharing glyph prototypes for their common characters.
pub fn make_language_pair(opts: &PairOptions) -> Result<(LanguageSpec, LanguageSpec)> {
    if opts.shared.is_empty() {
        return Err(Error::InvalidArgument("shared character set is empty".into()));
    }
    let shared: BTreeSet<char> = opts.shared.iter().copied().collect();
    for &c in opts.source_extra.iter().chain(&opts.target_extra) {
        if shared.contains(&c) {
            return Err(Error::InvalidArgument(format!(
                "extra character {c:?} overlaps the shared set"
            )));
        }
    }
    let source = LanguageSpec::new(
        "source",
        opts.base_seed,
        derive_seed(opts.base_seed, "source", 0),
        shared.iter().copied().chain(opts.source_extra.iter().copied()),
        0.0,
        opts.noise_sigma,
    )?;
    let target = LanguageSpec::new(
        "target",
        opts.base_seed,
        derive_seed(opts.base_seed, "target", 0),
        shared.iter().copied().chain(opts.target_extra.iter().copied()),
        opts.style_strength,
        opts.noise_sigma,
    )?;
    Ok((source, target))
}
