//! Browser bindings: a character n-gram model built from pasted text, CTC
//! decoding fused with that model, and the CTC loss of a transcription.
//!
//! Recognizer output is simulated from a typed spelling: each character
//! becomes one frame holding `confidence` on that character, followed by a
//! blank frame. The remaining mass is spread evenly over the other labels.

use hwr_adapt::ctc::{ctc_loss, greedy_decode, PosteriorMatrix};
use hwr_adapt::decoder::{estimate_priors, label_to_lm_map, lm_beam_decode, DecoderConfig, LmScorer};
use hwr_adapt::{NgramLm, Vocabulary};
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub struct CharModel {
    lm: NgramLm,
    labels: Vocabulary,
}

#[wasm_bindgen(getter_with_clone)]
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeView {
    pub greedy: String,
    pub fused: String,
    pub score: f64,
}

impl CharModel {
    /// One training text per non-empty line of `corpus`.
    pub fn build(corpus: &str, order: usize, discount: f64) -> Result<Self, String> {
        let lines: Vec<&str> = corpus.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        if lines.is_empty() {
            return Err("corpus has no text".into());
        }
        let lm = NgramLm::build(&lines, order, discount, []).map_err(|e| e.to_string())?;
        let labels = Vocabulary::new(lm.vocab().chars().iter().copied());
        Ok(CharModel { lm, labels })
    }

    /// The `top` most likely continuations of `context`, most likely first.
    /// End of text is reported as `</s>`.
    pub fn continuations(&self, context: &str, top: usize) -> Result<Vec<(String, f64)>, String> {
        let vocab = self.lm.vocab();
        let mut ctx = vec![vocab.bos()];
        ctx.extend(vocab.encode(context).map_err(|e| e.to_string())?);
        let mut out: Vec<(String, f64)> = self
            .lm
            .distribution(&ctx)
            .iter()
            .enumerate()
            .map(|(i, lp)| (vocab.token_name(i as u32 + 1), lp.exp()))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out.truncate(top);
        Ok(out)
    }

    pub fn posteriors(&self, spelling: &str, confidence: f64) -> Result<PosteriorMatrix, String> {
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err("confidence must lie in (0, 1)".into());
        }
        let ids = self.labels.encode(spelling).map_err(|e| e.to_string())?;
        if ids.is_empty() {
            return Err("spelling is empty".into());
        }
        let n = self.labels.label_count();
        let rest = (1.0 - confidence) / (n - 1) as f64;
        let mut probs = Vec::with_capacity(2 * ids.len() * n);
        for &id in &ids {
            for peak in [id as usize, 0] {
                probs.extend((0..n).map(|k| if k == peak { confidence } else { rest }));
            }
        }
        PosteriorMatrix::from_probs(2 * ids.len(), n, &probs).map_err(|e| e.to_string())
    }

    pub fn fused_decode(
        &self,
        spelling: &str,
        confidence: f64,
        w: f64,
        alpha: f64,
        beam: usize,
    ) -> Result<DecodeView, String> {
        let post = self.posteriors(spelling, confidence)?;
        let cfg = DecoderConfig {
            w,
            alpha,
            beam_width: beam,
            ..DecoderConfig::default()
        };
        let priors = estimate_priors([&post], cfg.prior_floor).map_err(|e| e.to_string())?;
        let map = label_to_lm_map(&self.labels, &self.lm).map_err(|e| e.to_string())?;
        let scorer = LmScorer::Ngram { lm: &self.lm, map: &map };
        let best = lm_beam_decode(&post, scorer, &priors, &cfg).map_err(|e| e.to_string())?;
        Ok(DecodeView {
            greedy: self.labels.decode(&greedy_decode(&post)),
            fused: self.labels.decode(&best.labels),
            score: best.score,
        })
    }

    /// Negative log-likelihood of `transcription` under the simulated output.
    pub fn transcription_loss(&self, spelling: &str, confidence: f64, transcription: &str) -> Result<f64, String> {
        let post = self.posteriors(spelling, confidence)?;
        let y = self.labels.encode(transcription).map_err(|e| e.to_string())?;
        ctc_loss(&post, &y).map(|o| o.loss).map_err(|e| e.to_string())
    }
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen]
impl CharModel {
    #[wasm_bindgen(constructor)]
    pub fn new(corpus: &str, order: usize, discount: f64) -> Result<CharModel, JsError> {
        Self::build(corpus, order, discount).map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn alphabet(&self) -> String {
        self.labels.chars().iter().collect()
    }

    /// Tab-separated `token\tprobability` lines.
    #[wasm_bindgen(js_name = nextChars)]
    pub fn next_chars(&self, context: &str, top: usize) -> Result<String, JsError> {
        let rows = self.continuations(context, top).map_err(js)?;
        Ok(rows.iter().map(|(t, p)| format!("{t}\t{p:.6}\n")).collect())
    }

    pub fn decode(
        &self,
        spelling: &str,
        confidence: f64,
        w: f64,
        alpha: f64,
        beam: usize,
    ) -> Result<DecodeView, JsError> {
        self.fused_decode(spelling, confidence, w, alpha, beam).map_err(js)
    }

    #[wasm_bindgen(js_name = ctcLoss)]
    pub fn ctc_loss(&self, spelling: &str, confidence: f64, transcription: &str) -> Result<f64, JsError> {
        self.transcription_loss(spelling, confidence, transcription).map_err(js)
    }
}
