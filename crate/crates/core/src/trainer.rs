//! Source-supervised training and the hybrid bootstrap loop.
//!
//! Both use the same two-head loss
//! `λ · CTC(aux) + (1 − λ) · CTC(main)` and Adam updates; the hybrid loop
//! additionally re-estimates label priors from target posteriors and
//! pseudo-labels target samples with LM-fused decoding.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ctc::{ctc_loss, greedy_decode, min_frames, PosteriorMatrix};
use crate::dataset::{Dataset, Sample};
use crate::decoder::{lm_beam_decode, DecoderConfig, LabelPriors, LmScorer, PriorAccumulator};
use crate::error::{Error, Result};
use crate::metrics::{cer, EvalReport};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::recognizer::{Params, Recognizer};
use crate::synth::derive_seed;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Weight of the auxiliary head.
    pub lambda: f64,
    pub batch_size: usize,
    /// Share of each hybrid batch drawn from labeled source data.
    pub source_fraction: f64,
    pub outer_iters: usize,
    pub prior_pass_batches: usize,
    pub train_pass_batches: usize,
    /// Source-training epochs.
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Return the hybrid iterate with the lowest validation CER instead of
    /// the last one (only when a labeled validation set is supplied).
    pub select_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.25,
            batch_size: 8,
            source_fraction: 0.5,
            outer_iters: 10,
            prior_pass_batches: 20,
            train_pass_batches: 20,
            epochs: 10,
            adam: AdamConfig::default(),
            seed: 0,
            select_best: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument("lambda must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.source_fraction) {
            return Err(Error::InvalidArgument("source_fraction must lie in [0, 1]".into()));
        }
        if self.batch_size == 0
            || self.outer_iters == 0
            || self.prior_pass_batches == 0
            || self.train_pass_batches == 0
            || self.epochs == 0
        {
            return Err(Error::InvalidArgument("batch sizes and loop counts must be >= 1".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// `(source, target)` sample counts per hybrid batch.
    pub fn batch_split(&self) -> (usize, usize) {
        let src = (self.source_fraction * self.batch_size as f64).round() as usize;
        let src = src.min(self.batch_size);
        (src, self.batch_size - src)
    }
}

/// Loss and per-head breakdown for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub aux: f64,
    pub main: f64,
}

/// `λ · CTC(aux) + (1 − λ) · CTC(main)`; gradients are accumulated into
/// `grads` scaled by `weight`.
pub fn composite_loss(
    model: &Recognizer,
    frames: &[f64],
    labels: &[u32],
    lambda: f64,
    grads: &mut Params,
    weight: f64,
) -> Result<LossParts> {
    let out = model.forward(frames)?;
    let aux = ctc_loss(&out.aux, labels)?;
    let main = ctc_loss(&out.main, labels)?;
    let total = lambda * aux.loss + (1.0 - lambda) * main.loss;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("loss {total}")));
    }
    let aux_grad: Vec<f64> = aux.grad.iter().map(|g| g * lambda * weight).collect();
    let main_grad: Vec<f64> = main.grad.iter().map(|g| g * (1.0 - lambda) * weight).collect();
    model.backward(&out.cache, &aux_grad, &main_grad, grads)?;
    Ok(LossParts {
        total,
        aux: aux.loss,
        main: main.loss,
    })
}

/// One row of the tab-separated metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub split: String,
    pub loss: Option<f64>,
    pub cer: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

fn opt_field(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

impl MetricsLog {
    pub fn push(&mut self, iteration: usize, split: &str, loss: Option<f64>, cer: Option<f64>) {
        self.rows.push(MetricsRow {
            iteration,
            split: split.to_string(),
            loss,
            cer,
        });
    }

    pub const HEADER: &'static str = "iteration\tsplit\tloss\tcer";

    pub fn row_tsv(row: &MetricsRow) -> String {
        format!(
            "{}\t{}\t{}\t{}",
            row.iteration,
            row.split,
            opt_field(row.loss),
            opt_field(row.cer)
        )
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let _ = writeln!(out, "{}", Self::row_tsv(r));
        }
        out
    }

    pub fn find(&self, iteration: usize, split: &str) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.iteration == iteration && r.split == split)
    }
}

/// Shuffled, epoch-based index stream. `next_batch` never crosses an epoch
/// boundary, so the last batch of an epoch may be short.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut s = BatchSampler {
            order: (0..len).collect(),
            pos: len,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        if self.order.is_empty() || size == 0 {
            return Vec::new();
        }
        if self.pos >= self.order.len() {
            self.reshuffle();
        }
        let end = (self.pos + size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }

    pub fn batches_per_epoch(len: usize, size: usize) -> usize {
        len.div_ceil(size)
    }
}

fn labels_for(sample: &Sample, vocab: &Vocabulary) -> Result<Option<Vec<u32>>> {
    match &sample.transcription {
        Some(t) if !t.is_empty() => Ok(Some(vocab.encode(t)?)),
        _ => Ok(None),
    }
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub mean_loss: Option<f64>,
    pub used: usize,
    pub skipped: usize,
}

/// Averages the composite loss over `items` (frames, labels) and applies
/// one Adam update. Samples that cannot be aligned are skipped.
fn train_step(
    model: &mut Recognizer,
    items: &[(&[f64], &[u32])],
    cfg: &TrainConfig,
    adam: &mut AdamState,
    grads: &mut Params,
) -> Result<StepStats> {
    let mut stats = StepStats::default();
    let usable: Vec<&(&[f64], &[u32])> = items
        .iter()
        .filter(|(frames, labels)| {
            let t = frames.len() / model.config().input_dim;
            !labels.is_empty() && t >= min_frames(labels)
        })
        .collect();
    stats.skipped = items.len() - usable.len();
    if usable.is_empty() {
        return Ok(stats);
    }
    grads.fill(0.0);
    let weight = 1.0 / usable.len() as f64;
    let mut total = 0.0;
    for (frames, labels) in &usable {
        total += composite_loss(model, frames, labels, cfg.lambda, grads, weight)?.total;
    }
    adam_step(model.params_mut(), grads, adam, &cfg.adam)?;
    model.settle();
    stats.used = usable.len();
    stats.mean_loss = Some(total / usable.len() as f64);
    Ok(stats)
}

/// Greedy-decodes every sample with the main head.
pub fn greedy_transcribe(model: &Recognizer, data: &Dataset, vocab: &Vocabulary) -> Result<Vec<String>> {
    data.samples
        .iter()
        .map(|s| Ok(vocab.decode(&greedy_decode(&model.predict(&s.frames)?))))
        .collect()
}

/// LM-fused transcription of every sample.
pub fn lm_transcribe(
    model: &Recognizer,
    data: &Dataset,
    vocab: &Vocabulary,
    scorer: LmScorer<'_>,
    priors: &LabelPriors,
    dec: &DecoderConfig,
) -> Result<Vec<String>> {
    data.samples
        .iter()
        .map(|s| {
            let post = model.predict(&s.frames)?;
            Ok(vocab.decode(&lm_beam_decode(&post, scorer, priors, dec)?.labels))
        })
        .collect()
}

fn references(data: &Dataset) -> Result<Vec<&str>> {
    data.samples
        .iter()
        .map(|s| {
            s.transcription
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument(format!("sample {} is unlabeled", s.id)))
        })
        .collect()
}

pub fn evaluate_greedy(model: &Recognizer, data: &Dataset, vocab: &Vocabulary) -> Result<EvalReport> {
    let refs = references(data)?;
    cer(&refs, &greedy_transcribe(model, data, vocab)?)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SourceTrainReport {
    pub log: MetricsLog,
    pub updates: usize,
    pub skipped: usize,
    /// Mean batch loss of every update, in order.
    pub step_losses: Vec<f64>,
}

/// Epochs of shuffled minibatch updates on labeled data. Logs one `train`
/// row per epoch and one `val` row when `val` is given.
pub fn train_source(
    model: &mut Recognizer,
    data: &Dataset,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    val: Option<&Dataset>,
) -> Result<SourceTrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if !data.is_labeled() {
        return Err(Error::InvalidArgument("source training needs transcriptions".into()));
    }
    let labels: Vec<Vec<u32>> = data
        .samples
        .iter()
        .map(|s| labels_for(s, vocab).map(Option::unwrap_or_default))
        .collect::<Result<_>>()?;

    let mut sampler = BatchSampler::new(data.len(), derive_seed(cfg.seed, "source-batches", 0));
    let mut adam = AdamState::new(model.params());
    let mut grads = Params::zeros(model.config());
    let mut report = SourceTrainReport::default();
    let per_epoch = BatchSampler::batches_per_epoch(data.len(), cfg.batch_size);

    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for _ in 0..per_epoch {
            let idx = sampler.next_batch(cfg.batch_size);
            let items: Vec<(&[f64], &[u32])> = idx
                .iter()
                .map(|&i| (data.samples[i].frames.as_slice(), labels[i].as_slice()))
                .collect();
            let stats = train_step(model, &items, cfg, &mut adam, &mut grads)?;
            report.skipped += stats.skipped;
            if let Some(l) = stats.mean_loss {
                report.updates += 1;
                report.step_losses.push(l);
                loss_sum += l * stats.used as f64;
                loss_n += stats.used;
            }
        }
        let train_cer = evaluate_greedy(model, data, vocab)?.cer;
        let train_loss = (loss_n > 0).then(|| loss_sum / loss_n as f64);
        report.log.push(epoch, "train", train_loss, Some(train_cer));
        if let Some(v) = val {
            let vr = evaluate_greedy(model, v, vocab)?;
            report.log.push(epoch, "val", None, Some(vr.cer));
        }
    }
    Ok(report)
}

/// Decodes the main head with the LM; `None` when the decode is empty.
pub fn make_pseudo_label(
    model: &Recognizer,
    frames: &[f64],
    scorer: LmScorer<'_>,
    priors: &LabelPriors,
    dec: &DecoderConfig,
) -> Result<Option<Vec<u32>>> {
    pseudo_label(&model.predict(frames)?, scorer, priors, dec)
}

/// [`make_pseudo_label`] on precomputed main-head posteriors.
pub fn pseudo_label(
    posteriors: &PosteriorMatrix,
    scorer: LmScorer<'_>,
    priors: &LabelPriors,
    dec: &DecoderConfig,
) -> Result<Option<Vec<u32>>> {
    let decoded = lm_beam_decode(posteriors, scorer, priors, dec)?;
    Ok((!decoded.labels.is_empty()).then_some(decoded.labels))
}

/// Forwards `batches` target minibatches and returns the mean posterior.
/// Does not touch the model.
pub fn prior_pass(
    model: &Recognizer,
    target: &Dataset,
    sampler: &mut BatchSampler,
    batches: usize,
    batch_size: usize,
    floor: f64,
) -> Result<LabelPriors> {
    let mut acc = PriorAccumulator::new(model.config().label_count);
    for _ in 0..batches {
        for i in sampler.next_batch(batch_size) {
            acc.add(&model.predict(&target.samples[i].frames)?)?;
        }
    }
    acc.finish(floor)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HybridReport {
    pub log: MetricsLog,
    /// Priors estimated at the start of each outer iteration.
    pub priors: Vec<(usize, LabelPriors)>,
    pub updates: usize,
    /// Target samples excluded because their pseudo-label was empty.
    pub skipped_pseudo: usize,
    /// Train-pass batches whose target part was entirely skipped.
    pub source_only_batches: usize,
    /// Iteration whose model was returned (0 = the initial model).
    pub selected_iteration: usize,
    pub step_losses: Vec<f64>,
}

/// Alternates prior estimation on target data with mixed source/target
/// training on ground truth and LM pseudo-labels.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_train(
    model: &mut Recognizer,
    source: &Dataset,
    target: &Dataset,
    vocab: &Vocabulary,
    scorer: LmScorer<'_>,
    cfg: &TrainConfig,
    dec: &DecoderConfig,
    val: Option<&Dataset>,
) -> Result<HybridReport> {
    cfg.validate()?;
    dec.validate()?;
    let (n_src, n_tgt) = cfg.batch_split();
    if n_src > 0 && (source.is_empty() || !source.is_labeled()) {
        return Err(Error::InvalidArgument("hybrid training needs labeled source data".into()));
    }
    if target.is_empty() {
        return Err(Error::InvalidArgument("target set is empty".into()));
    }
    let src_labels: Vec<Vec<u32>> = source
        .samples
        .iter()
        .map(|s| labels_for(s, vocab).map(Option::unwrap_or_default))
        .collect::<Result<_>>()?;

    let mut src_sampler = BatchSampler::new(source.len(), derive_seed(cfg.seed, "source-batches", 0));
    let mut tgt_sampler = BatchSampler::new(target.len(), derive_seed(cfg.seed, "target-batches", 0));
    let mut prior_sampler = BatchSampler::new(target.len(), derive_seed(cfg.seed, "prior-batches", 0));
    let mut adam = AdamState::new(model.params());
    let mut grads = Params::zeros(model.config());
    let mut priors = LabelPriors::uniform(model.config().label_count);
    let mut report = HybridReport::default();
    let mut best: Option<(f64, usize, Recognizer)> = None;

    if let Some(v) = val {
        let c = evaluate_greedy(model, v, vocab)?.cer;
        report.log.push(0, "val", None, Some(c));
        best = Some((c, 0, model.clone()));
    }

    for k in 1..=cfg.outer_iters {
        if n_tgt > 0 {
            priors = prior_pass(
                model,
                target,
                &mut prior_sampler,
                cfg.prior_pass_batches,
                cfg.batch_size,
                dec.prior_floor,
            )?;
        }
        report.priors.push((k, priors.clone()));

        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for _ in 0..cfg.train_pass_batches {
            let mut pseudo: Vec<(usize, Vec<u32>)> = Vec::with_capacity(n_tgt);
            let mut skipped_here = 0;
            for i in tgt_sampler.next_batch(n_tgt) {
                match make_pseudo_label(model, &target.samples[i].frames, scorer, &priors, dec)? {
                    Some(l) => pseudo.push((i, l)),
                    None => skipped_here += 1,
                }
            }
            report.skipped_pseudo += skipped_here;
            if n_tgt > 0 && pseudo.is_empty() {
                report.source_only_batches += 1;
            }

            // Source first, then target.
            let mut items: Vec<(&[f64], &[u32])> = src_sampler
                .next_batch(n_src)
                .into_iter()
                .map(|i| (source.samples[i].frames.as_slice(), src_labels[i].as_slice()))
                .collect();
            items.extend(
                pseudo
                    .iter()
                    .map(|(i, l)| (target.samples[*i].frames.as_slice(), l.as_slice())),
            );
            let stats = train_step(model, &items, cfg, &mut adam, &mut grads)?;
            if let Some(l) = stats.mean_loss {
                report.updates += 1;
                report.step_losses.push(l);
                loss_sum += l * stats.used as f64;
                loss_n += stats.used;
            }
        }
        report
            .log
            .push(k, "hybrid", (loss_n > 0).then(|| loss_sum / loss_n as f64), None);
        if let Some(v) = val {
            let c = evaluate_greedy(model, v, vocab)?.cer;
            report.log.push(k, "val", None, Some(c));
            if cfg.select_best && best.as_ref().is_none_or(|b| c < b.0) {
                best = Some((c, k, model.clone()));
            }
        }
        report.selected_iteration = k;
    }

    if cfg.select_best {
        if let Some((_, k, m)) = best {
            *model = m;
            report.selected_iteration = k;
        }
    }
    Ok(report)
}

/// Writes prior snapshots as `iteration \t label \t probability` rows.
pub fn priors_tsv(report: &HybridReport, vocab: &Vocabulary) -> String {
    let mut out = String::from("iteration\tlabel\tprob\n");
    for (k, p) in &report.priors {
        for (label, prob) in p.probs().iter().enumerate() {
            let _ = writeln!(out, "{k}\t{}\t{prob:.9}", vocab.token_name(label as u32));
        }
    }
    out
}
