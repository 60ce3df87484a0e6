//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test --test acceptance`.

mod common;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hwr_adapt::arpa::{parse_arpa, to_arpa_string};
use hwr_adapt::checkpoint::load_checkpoint;
use hwr_adapt::cli::run_from;
use hwr_adapt::ctc::{ctc_loss, ctc_loss_bruteforce, min_frames, PosteriorMatrix};
use hwr_adapt::dataset::{load_dataset, sample_corpus};
use hwr_adapt::decoder::{lm_beam_decode, DecoderConfig, LabelPriors, LmScorer};
use hwr_adapt::metrics::{cer, char_recall, edit_distance};
use hwr_adapt::ngram::NgramLm;
use hwr_adapt::recognizer::{Params, Precision, Recognizer, RecognizerConfig};
use hwr_adapt::synth::{make_language_pair, PairOptions};
use hwr_adapt::trainer::{composite_loss, greedy_transcribe, prior_pass, BatchSampler, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{levenshtein_oracle, random_logits, random_posteriors, rel_err, sequence_probs};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cli(args: &[&str]) -> Result<String, String> {
    let mut out = Vec::new();
    let argv = std::iter::once("hwr-adapt").chain(args.iter().copied());
    let code = run_from(argv, &mut out);
    if code != ExitCode::SUCCESS {
        return Err(format!("`{}` failed", args.join(" ")));
    }
    Ok(String::from_utf8(out).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

// 1
fn ctc_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < 300 {
        let t = rng.random_range(1..=6);
        let l = rng.random_range(2..=4);
        let len = rng.random_range(1..=3);
        let y: Vec<u32> = (0..len).map(|_| rng.random_range(1..l as u32)).collect();
        if min_frames(&y) > t {
            continue;
        }
        let post = random_posteriors(&mut rng, t, l);
        let fast = ctc_loss(&post, &y).map_err(|e| e.to_string())?.loss;
        let slow = ctc_loss_bruteforce(&post, &y).map_err(|e| e.to_string())?;
        worst = worst.max(rel_err(fast, slow));
        n += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-9 && secs < 10.0,
        format!("{n} instances, max relative error {worst:.1e}, {secs:.2} s"),
    )
}

// 2
fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-5;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
    let mut worst: f64 = 0.0;
    for seed in 0..4 {
        let mut model = Recognizer::init(RecognizerConfig {
            input_dim: 3,
            context_radius: 1,
            feature_dim: 4,
            recurrent_dim: 3,
            label_count: 3,
            seed,
        })
        .unwrap();
        model.set_precision(Precision::F64);
        let frames = random_logits(&mut rng, 4 * 3);
        let labels = [1, 2];
        let mut grads = Params::zeros(model.config());
        composite_loss(&model, &frames, &labels, 0.25, &mut grads, 1.0).map_err(|e| e.to_string())?;
        let mut scratch = Params::zeros(model.config());
        for k in 0..grads.tensors.len() {
            for i in 0..grads.tensors[k].data.len() {
                let orig = model.params().tensors[k].data[i];
                let mut eval = |v: f64| {
                    model.params_mut().tensors[k].data[i] = v;
                    composite_loss(&model, &frames, &labels, 0.25, &mut scratch, 1.0).unwrap().total
                };
                let numeric = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
                model.params_mut().tensors[k].data[i] = orig;
                worst = worst.max(rel(grads.tensors[k].data[i], numeric));
            }
        }
    }
    // CTC gradient with respect to logits.
    for _ in 0..50 {
        let (t, l) = (rng.random_range(2..=5), rng.random_range(2..=4));
        let y = vec![1u32; 1];
        let z = random_logits(&mut rng, t * l);
        let loss = |z: &[f64]| ctc_loss(&PosteriorMatrix::from_logits(t, l, z).unwrap(), &y).unwrap().loss;
        let g = ctc_loss(&PosteriorMatrix::from_logits(t, l, &z).unwrap(), &y).unwrap().grad;
        for i in 0..z.len() {
            let (mut up, mut down) = (z.clone(), z.clone());
            up[i] += h;
            down[i] -= h;
            worst = worst.max(rel(g[i], (loss(&up) - loss(&down)) / (2.0 * h)));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && secs < 30.0,
        format!("max relative error {worst:.1e}, {secs:.2} s"),
    )
}

// 3
fn lm_normalization() -> Outcome {
    let (_, target) = make_language_pair(&PairOptions::default()).unwrap();
    let corpus = sample_corpus(&target, 500, 6..=14, 3, "acceptance-lm");
    let lm = NgramLm::build(&corpus, 10, 0.1, []).map_err(|e| e.to_string())?;
    let mass = |ctx: &[u32]| lm.distribution(ctx).iter().map(|lp| lp.exp()).sum::<f64>();
    let mut worst: f64 = 0.0;
    let mut stored = 0;
    for ctx in lm.contexts() {
        worst = worst.max((mass(ctx) - 1.0).abs());
        stored += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let chars = lm.vocab().char_count() as u32;
    let mut queries = Vec::new();
    for _ in 0..100 {
        let len = rng.random_range(0..12);
        let mut ctx: Vec<u32> = (0..len).map(|_| rng.random_range(1..=chars)).collect();
        if rng.random_bool(0.5) {
            ctx.insert(0, lm.vocab().bos());
        }
        worst = worst.max((mass(&ctx) - 1.0).abs());
        queries.push((ctx, rng.random_range(1..=chars + 1)));
    }
    let loaded = parse_arpa(&to_arpa_string(&lm)).map_err(|e| e.to_string())?;
    let mut arpa_err: f64 = 0.0;
    for (ctx, next) in &queries {
        let a = lm.log_prob(ctx, *next).unwrap();
        let b = loaded.log_prob(ctx, *next).unwrap();
        arpa_err = arpa_err.max((a - b).abs());
    }
    check(
        worst < 1e-6 && arpa_err < 1e-6,
        format!(
            "{stored} stored + 100 random contexts, max |Σp − 1| {worst:.1e}; ARPA max |Δ ln p| {arpa_err:.1e}"
        ),
    )
}

// 4
fn decoder_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    let mut non_monotone = 0;
    let n = 200;
    for _ in 0..n {
        let t = rng.random_range(1..=4);
        let l = rng.random_range(2..=3);
        let post = random_posteriors(&mut rng, t, l);
        let priors = LabelPriors::uniform(l);
        let dec = |width| DecoderConfig {
            w: 1.0,
            alpha: 0.0,
            beam_width: width,
            ..DecoderConfig::default()
        };
        let got = lm_beam_decode(&post, LmScorer::Flat, &priors, &dec(100_000)).unwrap();
        let mut best: Option<(Vec<u32>, f64)> = None;
        for (y, p) in sequence_probs(&post) {
            if best.as_ref().is_none_or(|b| p > b.1) {
                best = Some((y, p));
            }
        }
        if best.map(|b| b.0) != Some(got.labels) {
            mismatches += 1;
        }
        let mut prev = f64::NEG_INFINITY;
        for width in [1, 2, 4, 8, 100_000] {
            let sc = lm_beam_decode(&post, LmScorer::Flat, &priors, &dec(width)).unwrap().score;
            if sc < prev - 1e-12 {
                non_monotone += 1;
                break;
            }
            prev = sc;
        }
    }
    check(
        mismatches == 0 && non_monotone == 0,
        format!("{n} instances: {mismatches} mismatches vs brute force, {non_monotone} monotonicity violations"),
    )
}

struct Transfer {
    root: PathBuf,
    source_test: f64,
    target_before: f64,
    target_lm: f64,
    target_flat: f64,
    elapsed: Duration,
}

fn transfer_experiment(root: &Path) -> Result<Transfer, String> {
    let start = Instant::now();
    let data = root.join("data");
    cli(&["gen-data", "--out", s(&data)])?;
    let arpa = root.join("target.arpa");
    cli(&[
        "train-lm", "--corpus", s(&data.join("target/train/corpus.txt")), "--charset",
        s(&data.join("charset.txt")), "--out", s(&arpa),
    ])?;
    let src = root.join("source.ckpt");
    cli(&["train-source", "--data", s(&data.join("source")), "--out-checkpoint", s(&src)])?;
    let hybrid = |name: &str, lm: Option<&Path>| -> Result<PathBuf, String> {
        let out = root.join(name);
        let (sd, td) = (data.join("source"), data.join("target"));
        let mut args = vec![
            "hybrid", "--source-data", s(&sd), "--target-data", s(&td), "--init-checkpoint", s(&src), "--out-checkpoint", s(&out),
            "--w", "0.4", "--alpha", "0.5", "--rho", "0.5",
        ];
        if let Some(lm) = lm {
            args.extend(["--lm", s(lm)]);
        }
        cli(&args)?;
        Ok(out)
    };
    let with_lm = hybrid("hybrid-lm.ckpt", Some(&arpa))?;
    let flat = hybrid("hybrid-flat.ckpt", None)?;
    let eval = |ckpt: &Path, split: &str| -> Result<f64, String> {
        let out = cli(&["eval", "--checkpoint", s(ckpt), "--data", s(&data.join(split))])?;
        out.split('\t').nth(1).and_then(|v| v.parse().ok()).ok_or(out)
    };
    Ok(Transfer {
        root: root.to_path_buf(),
        source_test: eval(&src, "source/test")?,
        target_before: eval(&src, "target/test")?,
        target_lm: eval(&with_lm, "target/test")?,
        target_flat: eval(&flat, "target/test")?,
        elapsed: start.elapsed(),
    })
}

// 5
fn synthetic_transfer(t: &Transfer) -> Outcome {
    let a = t.source_test <= 0.10 && t.target_before >= 0.30;
    let b = t.target_lm <= 0.5 * t.target_before;
    let c = t.target_flat > t.target_lm;
    let fast = t.elapsed <= Duration::from_secs(15 * 60);
    check(
        a && b && c && fast,
        format!(
            "(a) source {:.3} ≤ 0.10, target {:.3} ≥ 0.30 [{}]; (b) hybrid+LM {:.3} ≤ {:.3} [{}]; \
             (c) uniform LM {:.3} > {:.3} [{}]; {:.0} s",
            t.source_test,
            t.target_before,
            ok(a),
            t.target_lm,
            0.5 * t.target_before,
            ok(b),
            t.target_flat,
            t.target_lm,
            ok(c),
            t.elapsed.as_secs_f64()
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

// 6
fn character_emergence(t: &Transfer) -> Outcome {
    let data = t.root.join("data");
    let val = load_dataset(data.join("target/val")).map_err(|e| e.to_string())?;
    let source_chars: HashSet<char> = fs::read_to_string(data.join("source/train/corpus.txt"))
        .unwrap()
        .chars()
        .collect();
    let (src_model, vocab) = load_checkpoint(t.root.join("source.ckpt")).map_err(|e| e.to_string())?;
    let vocab = vocab.unwrap();
    let target_only: HashSet<char> = vocab
        .chars()
        .iter()
        .filter(|c| !source_chars.contains(c))
        .copied()
        .collect();
    let before = greedy_transcribe(&src_model, &val, &vocab).unwrap();
    let emitted = before
        .iter()
        .flat_map(|h| h.chars())
        .filter(|c| target_only.contains(c))
        .count();
    let (hy_model, _) = load_checkpoint(t.root.join("hybrid-lm.ckpt")).map_err(|e| e.to_string())?;
    let after = greedy_transcribe(&hy_model, &val, &vocab).unwrap();
    let refs = val.transcriptions();
    let recall = char_recall(&refs, &after, &target_only).unwrap_or(0.0);
    let test = load_dataset(data.join("target/test")).map_err(|e| e.to_string())?;
    let test_hyp = greedy_transcribe(&hy_model, &test, &vocab).unwrap();
    let test_recall = char_recall(&test.transcriptions(), &test_hyp, &target_only).unwrap_or(0.0);
    let mut chars: Vec<char> = target_only.iter().copied().collect();
    chars.sort();
    check(
        emitted == 0 && recall >= 0.5 && !target_only.is_empty(),
        format!(
            "target-only {chars:?}: emitted before hybrid {emitted}, val recall after {recall:.3} ≥ 0.5 (test {test_recall:.3})"
        ),
    )
}

// 7
fn prior_purity(t: &Transfer) -> Outcome {
    let (model, _) = load_checkpoint(t.root.join("source.ckpt")).map_err(|e| e.to_string())?;
    let target = load_dataset(t.root.join("data/target/train")).map_err(|e| e.to_string())?;
    let bits = |m: &Recognizer| m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let before = bits(&model);
    let cfg = TrainConfig::default();
    let mut sampler = BatchSampler::new(target.len(), 7);
    prior_pass(&model, &target, &mut sampler, cfg.prior_pass_batches, cfg.batch_size, 1e-6)
        .map_err(|e| e.to_string())?;
    let same = bits(&model) == before;
    check(
        same,
        format!(
            "{} parameters bit-identical after a {}-batch prior pass",
            before.len(),
            cfg.prior_pass_batches
        ),
    )
}

fn small_run(root: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let data = root.join("data");
    cli(&[
        "gen-data", "--out", s(&data), "--base-seed", "5", "--n-train", "120", "--n-val", "20",
        "--n-test", "20",
    ])?;
    let arpa = root.join("t.arpa");
    cli(&["train-lm", "--corpus", s(&data.join("target/train/corpus.txt")), "--out", s(&arpa)])?;
    let src = root.join("src.ckpt");
    cli(&[
        "train-source", "--data", s(&data.join("source")), "--out-checkpoint", s(&src),
        "--epochs", "2", "--seed", "9",
    ])?;
    let hy = root.join("hy.ckpt");
    cli(&[
        "hybrid", "--source-data", s(&data.join("source")), "--target-data",
        s(&data.join("target")), "--init-checkpoint", s(&src), "--lm", s(&arpa),
        "--out-checkpoint", s(&hy), "--outer-iters", "2", "--train-pass-batches", "5",
        "--prior-pass-batches", "5", "--seed", "9",
    ])?;
    let eval = cli(&[
        "eval", "--checkpoint", s(&hy), "--data", s(&data.join("target/test")), "--lm", s(&arpa),
        "--report", s(&root.join("eval.tsv")),
    ])?;
    let mut files = vec![("eval stdout".to_string(), eval.into_bytes())];
    for f in ["src.ckpt.metrics.tsv", "hy.ckpt.metrics.tsv", "hy.ckpt.metrics.tsv.priors.tsv", "eval.tsv", "hy.ckpt"] {
        files.push((f.to_string(), fs::read(root.join(f)).map_err(|e| e.to_string())?));
    }
    Ok(files)
}

// 8
fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = small_run(a.path())?;
    let rb = small_run(b.path())?;
    let differing: Vec<&str> = ra
        .iter()
        .zip(&rb)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    check(
        differing.is_empty(),
        format!("two seeded runs compared on {} artifacts, differing: {differing:?}", ra.len()),
    )
}

// 9
fn metric_axioms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let alphabet = ['a', 'b', 'c', 'é'];
    let mut random = || -> String {
        let n = rng.random_range(0..=8);
        (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
    };
    let mut failures = 0;
    for _ in 0..1000 {
        let (a, b, c) = (random(), random(), random());
        let ab = edit_distance(&a, &b);
        let va: Vec<char> = a.chars().collect();
        let vb: Vec<char> = b.chars().collect();
        let good = ab == levenshtein_oracle(&va, &vb)
            && ab == edit_distance(&b, &a)
            && (ab == 0) == (a == b)
            && edit_distance(&a, &c) <= ab + edit_distance(&b, &c);
        failures += usize::from(!good);
    }
    let examples = [
        (cer(&["ab"], &["ab"]).unwrap().cer, 0.0),
        (cer(&["abcd"], &["abxd"]).unwrap().cer, 0.25),
        (cer(&["abcd"], &[""]).unwrap().cer, 1.0),
    ];
    let cer_ok = examples.iter().all(|(got, want)| got == want)
        && edit_distance("kitten", "sitting") == 3;
    check(
        failures == 0 && cer_ok,
        format!("1000 triples, {failures} axiom failures; pooled CER examples {}", ok(cer_ok)),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, outcome: Outcome| {
        match &outcome {
            Ok(d) => println!("PASS  {id}. {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {id}. {name}: {d}");
            }
        }
    };
    report(1, "CTC oracle equivalence", ctc_oracle());
    report(2, "gradient checks", gradient_check());
    report(3, "LM normalization and ARPA round trip", lm_normalization());
    report(4, "decoder reduction and beam monotonicity", decoder_reduction());

    let dir = tempfile::tempdir().unwrap();
    match transfer_experiment(dir.path()) {
        Ok(t) => {
            report(5, "synthetic transfer", synthetic_transfer(&t));
            report(6, "target-only character emergence", character_emergence(&t));
            report(7, "prior-pass purity", prior_purity(&t));
        }
        Err(e) => {
            for (id, name) in [
                (5, "synthetic transfer"),
                (6, "target-only character emergence"),
                (7, "prior-pass purity"),
            ] {
                report(id, name, Err(e.clone()));
            }
        }
    }
    report(8, "determinism", determinism());
    report(9, "metric axioms", metric_axioms());

    if failed == 0 {
        println!("all 9 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
