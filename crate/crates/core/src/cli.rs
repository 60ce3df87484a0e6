//! The `hwr-adapt` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error,
//! 3 numeric failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::arpa::{load_arpa, save_arpa};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::ExperimentConfig;
use crate::dataset::{
    load_dataset, read_corpus, sample_corpus, sample_dataset, save_dataset, write_corpus, Dataset,
    MANIFEST,
};
use crate::decoder::{label_to_lm_map, DecoderConfig, LabelPriors, LmScorer, PriorAccumulator};
use crate::error::{Error, Result};
use crate::metrics::cer;
use crate::ngram::{NgramLm, DEFAULT_DISCOUNT, DEFAULT_ORDER};
use crate::recognizer::Recognizer;
use crate::synth::{make_language_pair, PairOptions, DEFAULT_NOISE, DEFAULT_STYLE_STRENGTH};
use crate::trainer::{greedy_transcribe, hybrid_train, lm_transcribe, priors_tsv, train_source};
use crate::vocab::Vocabulary;

pub const CHARSET_FILE: &str = "charset.txt";

#[derive(Debug, Parser)]
#[command(
    name = "hwr-adapt",
    version,
    about = "Train CTC recognizers and adapt them to a new language with LM pseudo-labels"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic source/target language pair.
    GenData(GenDataArgs),
    /// Train a character n-gram LM and write it as ARPA.
    TrainLm(TrainLmArgs),
    /// Train a recognizer on labeled data.
    TrainSource(TrainSourceArgs),
    /// Adapt a trained recognizer to unlabeled target data.
    Hybrid(HybridArgs),
    /// Transcribe a dataset.
    Decode(DecodeArgs),
    /// Transcribe a labeled dataset and report CER.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub base_seed: u64,
    /// Training samples per language.
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_train: u64,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_val: u64,
    #[arg(long, default_value_t = 300, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_test: u64,
    /// Lines of the independent text corpus per language.
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_unrelated: u64,
    #[arg(long, default_value_t = DEFAULT_STYLE_STRENGTH)]
    pub style_strength: f64,
    #[arg(long, default_value_t = DEFAULT_NOISE)]
    pub noise: f64,
    /// Shortest transcription length.
    #[arg(long, default_value_t = 6)]
    pub min_len: usize,
    /// Longest transcription length.
    #[arg(long, default_value_t = 14)]
    pub max_len: usize,
}

#[derive(Debug, Args)]
pub struct TrainLmArgs {
    /// Training text, one line per sequence. Repeatable.
    #[arg(long, required = true)]
    pub corpus: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    pub order: usize,
    #[arg(long, default_value_t = DEFAULT_DISCOUNT)]
    pub discount: f64,
    /// Extra characters to include in the LM vocabulary.
    #[arg(long)]
    pub charset: Option<PathBuf>,
    /// Output ARPA file.
    #[arg(long)]
    pub out: PathBuf,
    /// Report perplexity on this held-out text.
    #[arg(long)]
    pub perplexity: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainSourceArgs {
    /// Language directory (with train/ and optional val/) or a dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Experiment config file (`key = value`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_checkpoint: PathBuf,
    /// Training epochs [default: 10].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seed for initialization and batch order [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Label characters [default: charset.txt next to the data].
    #[arg(long)]
    pub charset: Option<PathBuf>,
    /// Metrics log [default: <out-checkpoint>.metrics.tsv].
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HybridArgs {
    /// Labeled source language or dataset directory.
    #[arg(long)]
    pub source_data: Option<PathBuf>,
    /// Target language or dataset directory; labels of train/ are ignored.
    #[arg(long)]
    pub target_data: Option<PathBuf>,
    #[arg(long)]
    pub init_checkpoint: Option<PathBuf>,
    /// Target character LM (ARPA). Without it every transcription is equally likely.
    #[arg(long)]
    pub lm: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_checkpoint: Option<PathBuf>,
    /// Emission weight [default: 0.4].
    #[arg(long)]
    pub w: Option<f64>,
    /// Prior-scaling exponent [default: 0.5].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Source share of each batch [default: 0.5].
    #[arg(long)]
    pub rho: Option<f64>,
    /// Outer iterations [default: 10].
    #[arg(long)]
    pub outer_iters: Option<usize>,
    /// Target batches per prior pass [default: 20].
    #[arg(long)]
    pub prior_pass_batches: Option<usize>,
    /// Updates per train pass [default: 20].
    #[arg(long)]
    pub train_pass_batches: Option<usize>,
    /// Beam width [default: 64].
    #[arg(long)]
    pub beam: Option<usize>,
    /// Seed for batch order [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Metrics log [default: <out-checkpoint>.metrics.tsv]; priors go to <log>.priors.tsv.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecodeOpts {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory (containing manifest.tsv).
    #[arg(long)]
    pub data: PathBuf,
    /// Character LM (ARPA); greedy decoding when omitted.
    #[arg(long)]
    pub lm: Option<PathBuf>,
    #[arg(long, default_value_t = 0.4)]
    pub w: f64,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 64)]
    pub beam: usize,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub opts: DecodeOpts,
    /// Write `id \t hypothesis` rows here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub opts: DecodeOpts,
    /// Per-sample report (TSV).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Comma-separated emission weights; with --sweep-alpha prints one CER per cell.
    #[arg(long, value_delimiter = ',')]
    pub sweep_w: Vec<f64>,
    /// Comma-separated prior exponents for the sweep.
    #[arg(long, value_delimiter = ',')]
    pub sweep_alpha: Vec<f64>,
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) => 1,
        Error::NonFinite(_) => 3,
        _ => 2,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("usage error"));
            return ExitCode::from(1);
        }
    };
    match run(cli.command, out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(&a, out),
        Command::TrainLm(a) => train_lm(&a, out),
        Command::TrainSource(a) => cmd_train_source(&a, out),
        Command::Hybrid(a) => cmd_hybrid(&a, out),
        Command::Decode(a) => decode(&a, out),
        Command::Eval(a) => eval(&a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_charset(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let line: String = vocab.chars().iter().collect();
    write_file(path, &format!("{line}\n"))
}

pub fn read_charset(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let line = text.strip_suffix('\n').unwrap_or(&text);
    if line.is_empty() || line.contains('\n') {
        return Err(Error::format(path, "expected a single line of characters"));
    }
    Ok(Vocabulary::new(line.chars()))
}

fn gen_data(a: &GenDataArgs, out: &mut dyn Write) -> Result<()> {
    if a.min_len == 0 || a.min_len > a.max_len {
        return Err(Error::InvalidArgument(
            "--min-len must be >= 1 and <= --max-len".into(),
        ));
    }
    let opts = PairOptions {
        base_seed: a.base_seed,
        style_strength: a.style_strength,
        noise_sigma: a.noise,
        ..PairOptions::default()
    };
    let (source, target) = make_language_pair(&opts)?;
    let range = a.min_len..=a.max_len;
    let vocab = Vocabulary::new(source.chars.iter().chain(&target.chars).copied());
    for spec in [&source, &target] {
        let lang_dir = a.out.join(&spec.name);
        for (split, n) in [("train", a.n_train), ("val", a.n_val), ("test", a.n_test)] {
            let tag = format!("{}-{split}", spec.name);
            let data = sample_dataset(spec, n as usize, range.clone(), a.base_seed, &tag)?;
            let corpus: Vec<String> = data.transcriptions().into_iter().map(String::from).collect();
            // Target training data is the unlabeled adaptation set.
            let stored = if spec.name == "target" && split == "train" {
                data.unlabeled()
            } else {
                data
            };
            let dir = lang_dir.join(split);
            save_dataset(&dir, &stored)?;
            write_corpus(dir.join("corpus.txt"), &corpus)?;
        }
        let tag = format!("{}-unrelated", spec.name);
        let unrelated = sample_corpus(spec, a.n_unrelated as usize, range.clone(), a.base_seed, &tag);
        write_corpus(lang_dir.join("unrelated.txt"), &unrelated)?;
    }
    write_charset(&a.out.join(CHARSET_FILE), &vocab)?;
    emit(out, &format!("wrote {}\n", a.out.display()))
}

fn train_lm(a: &TrainLmArgs, out: &mut dyn Write) -> Result<()> {
    let mut lines = Vec::new();
    for c in &a.corpus {
        lines.extend(read_corpus(c)?);
    }
    let extra: Vec<char> = match &a.charset {
        Some(p) => read_charset(p)?.chars().to_vec(),
        None => Vec::new(),
    };
    let lm = NgramLm::build(&lines, a.order, a.discount, extra)?;
    save_arpa(&lm, &a.out)?;
    let counts: Vec<String> = lm.ngram_counts().iter().map(usize::to_string).collect();
    emit(out, &format!("ngrams\t{}\n", counts.join("\t")))?;
    if let Some(p) = &a.perplexity {
        let held_out = read_corpus(p)?;
        emit(out, &format!("perplexity\t{:.6}\n", lm.perplexity(&held_out)?))?;
    }
    Ok(())
}

/// `(train, val)` for a language directory, or `(dir, None)` for a dataset
/// directory.
fn load_splits(dir: &Path) -> Result<(Dataset, Option<Dataset>)> {
    if dir.join(MANIFEST).exists() {
        return Ok((load_dataset(dir)?, None));
    }
    let train = load_dataset(dir.join("train"))?;
    let val_dir = dir.join("val");
    let val = if val_dir.join(MANIFEST).exists() {
        Some(load_dataset(val_dir)?).filter(|v| !v.is_empty() && v.is_labeled())
    } else {
        None
    };
    Ok((train, val))
}

fn find_charset(data: &Path) -> Option<PathBuf> {
    data.ancestors()
        .take(3)
        .map(|d| d.join(CHARSET_FILE))
        .find(|p| p.exists())
}

fn input_dim(data: &Dataset) -> Result<usize> {
    let dim = data.samples.first().map(|s| s.dim).unwrap_or(0);
    if dim == 0 || data.samples.iter().any(|s| s.dim != dim) {
        return Err(Error::Shape("samples disagree on frame width".into()));
    }
    Ok(dim)
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn default_log(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".metrics.tsv");
    PathBuf::from(s)
}

fn cmd_train_source(a: &TrainSourceArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    let (train, val) = load_splits(&a.data)?;
    let vocab = match a.charset.clone().or_else(|| find_charset(&a.data)) {
        Some(p) => read_charset(&p)?,
        None => Vocabulary::from_texts(train.transcriptions(), []),
    };
    let rc = cfg
        .arch
        .recognizer(input_dim(&train)?, vocab.label_count(), cfg.train.seed);
    let mut model = Recognizer::init(rc)?;
    let report = train_source(&mut model, &train, &vocab, &cfg.train, val.as_ref())?;
    save_checkpoint(&model, Some(&vocab), &a.out_checkpoint)?;
    let log = a.log.clone().unwrap_or_else(|| default_log(&a.out_checkpoint));
    write_file(&log, &report.log.to_tsv())?;
    if let Some(last) = report.log.rows.iter().rev().find(|r| r.split == "train") {
        emit(
            out,
            &format!(
                "epochs\t{}\tupdates\t{}\tskipped\t{}\ttrain_cer\t{:.6}\n",
                cfg.train.epochs,
                report.updates,
                report.skipped,
                last.cer.unwrap_or(f64::NAN)
            ),
        )?;
    }
    Ok(())
}

fn required<'a>(flag: &'a Option<PathBuf>, cfg: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    flag.as_deref()
        .or(cfg.as_deref())
        .ok_or_else(|| Error::InvalidArgument(format!("--{name} is required")))
}

fn load_model(path: &Path) -> Result<(Recognizer, Vocabulary)> {
    let (model, vocab) = load_checkpoint(path)?;
    let vocab = vocab.ok_or_else(|| Error::format(path, "checkpoint stores no vocabulary"))?;
    Ok((model, vocab))
}

fn cmd_hybrid(a: &HybridArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let t = &mut cfg.train;
    let d = &mut cfg.decoder;
    a.w.inspect(|&v| d.w = v);
    a.alpha.inspect(|&v| d.alpha = v);
    a.beam.inspect(|&v| d.beam_width = v);
    a.rho.inspect(|&v| t.source_fraction = v);
    a.outer_iters.inspect(|&v| t.outer_iters = v);
    a.prior_pass_batches.inspect(|&v| t.prior_pass_batches = v);
    a.train_pass_batches.inspect(|&v| t.train_pass_batches = v);
    a.seed.inspect(|&v| t.seed = v);
    cfg.validate()?;
    let p = &cfg.paths;
    let source_dir = required(&a.source_data, &p.source_data, "source-data")?;
    let target_dir = required(&a.target_data, &p.target_data, "target-data")?;
    let init = required(&a.init_checkpoint, &p.init_checkpoint, "init-checkpoint")?;
    let out_ckpt = required(&a.out_checkpoint, &p.out_checkpoint, "out-checkpoint")?;
    let lm_path = a.lm.as_deref().or(p.lm.as_deref());

    let (mut model, vocab) = load_model(init)?;
    let (source, _) = load_splits(source_dir)?;
    let (target, target_val) = load_splits(target_dir)?;
    let target = target.unlabeled();
    let lm = lm_path.map(load_arpa).transpose()?;
    let map = lm.as_ref().map(|lm| label_to_lm_map(&vocab, lm)).transpose()?;
    let scorer = match (&lm, &map) {
        (Some(lm), Some(map)) => LmScorer::Ngram { lm, map },
        _ => LmScorer::Flat,
    };
    let report = hybrid_train(
        &mut model,
        &source,
        &target,
        &vocab,
        scorer,
        &cfg.train,
        &cfg.decoder,
        target_val.as_ref(),
    )?;
    save_checkpoint(&model, Some(&vocab), out_ckpt)?;
    let log = a
        .log
        .clone()
        .or_else(|| p.log.clone())
        .unwrap_or_else(|| default_log(out_ckpt));
    write_file(&log, &report.log.to_tsv())?;
    let mut priors = log.as_os_str().to_owned();
    priors.push(".priors.tsv");
    write_file(Path::new(&priors), &priors_tsv(&report, &vocab))?;
    emit(
        out,
        &format!(
            "outer_iters\t{}\tupdates\t{}\tskipped_pseudo\t{}\tselected\t{}\n",
            cfg.train.outer_iters, report.updates, report.skipped_pseudo, report.selected_iteration
        ),
    )
}

/// Mean main-head posterior over a dataset.
fn dataset_priors(model: &Recognizer, data: &Dataset, floor: f64) -> Result<LabelPriors> {
    let mut acc = PriorAccumulator::new(model.config().label_count);
    for s in &data.samples {
        acc.add(&model.predict(&s.frames)?)?;
    }
    acc.finish(floor)
}

struct Prepared {
    model: Recognizer,
    vocab: Vocabulary,
    data: Dataset,
    lm: Option<(NgramLm, Vec<u32>)>,
    priors: Option<LabelPriors>,
}

impl Prepared {
    fn load(o: &DecodeOpts) -> Result<Self> {
        let (model, vocab) = load_model(&o.checkpoint)?;
        let data = load_dataset(&o.data)?;
        let lm = match &o.lm {
            Some(p) => {
                let lm = load_arpa(p)?;
                let map = label_to_lm_map(&vocab, &lm)?;
                Some((lm, map))
            }
            None => None,
        };
        let priors = match lm {
            Some(_) => Some(dataset_priors(&model, &data, DecoderConfig::default().prior_floor)?),
            None => None,
        };
        Ok(Prepared {
            model,
            vocab,
            data,
            lm,
            priors,
        })
    }

    fn transcribe(&self, w: f64, alpha: f64, beam: usize) -> Result<Vec<String>> {
        match (&self.lm, &self.priors) {
            (Some((lm, map)), Some(priors)) => {
                let dec = DecoderConfig {
                    w,
                    alpha,
                    beam_width: beam,
                    ..DecoderConfig::default()
                };
                dec.validate()?;
                let scorer = LmScorer::Ngram { lm, map };
                lm_transcribe(&self.model, &self.data, &self.vocab, scorer, priors, &dec)
            }
            _ => greedy_transcribe(&self.model, &self.data, &self.vocab),
        }
    }
}

fn decode(a: &DecodeArgs, out: &mut dyn Write) -> Result<()> {
    let p = Prepared::load(&a.opts)?;
    let hyps = p.transcribe(a.opts.w, a.opts.alpha, a.opts.beam)?;
    let mut text = String::new();
    for (s, h) in p.data.samples.iter().zip(&hyps) {
        text.push_str(&format!("{}\t{h}\n", s.id));
    }
    match &a.out {
        Some(path) => write_file(path, &text),
        None => emit(out, &text),
    }
}

fn eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let p = Prepared::load(&a.opts)?;
    if !p.data.is_labeled() {
        return Err(Error::format(&a.opts.data, "evaluation needs transcriptions"));
    }
    let refs = p.data.transcriptions();
    if !a.sweep_w.is_empty() || !a.sweep_alpha.is_empty() {
        if p.lm.is_none() {
            return Err(Error::InvalidArgument("a sweep needs --lm".into()));
        }
        let ws = if a.sweep_w.is_empty() { vec![a.opts.w] } else { a.sweep_w.clone() };
        let alphas = if a.sweep_alpha.is_empty() {
            vec![a.opts.alpha]
        } else {
            a.sweep_alpha.clone()
        };
        let mut text = String::from("w\talpha\tcer\n");
        for &w in &ws {
            for &alpha in &alphas {
                let c = cer(&refs, &p.transcribe(w, alpha, a.opts.beam)?)?.cer;
                text.push_str(&format!("{w}\t{alpha}\t{c:.6}\n"));
            }
        }
        return emit(out, &text);
    }
    let report = cer(&refs, &p.transcribe(a.opts.w, a.opts.alpha, a.opts.beam)?)?;
    if let Some(path) = &a.report {
        write_file(path, &report.to_tsv())?;
    }
    emit(
        out,
        &format!(
            "CER\t{:.6}\t{}\t{}\n",
            report.cer, report.total_edits, report.total_ref_chars
        ),
    )
}
