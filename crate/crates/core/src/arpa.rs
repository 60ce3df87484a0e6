//! ARPA text serialization for [`NgramLm`].
//!
//! Entries are tab separated: `log10 p`, the space-separated n-gram tokens,
//! and an optional `log10` backoff weight. Character tokens are written
//! verbatim except for whitespace, which uses `<sp>` for the space and
//! `<U+XXXX>` for anything else. `<s>` and `</s>` mark BOS and EOS.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ngram::{ContextEntry, NgramLm};
use crate::vocab::Vocabulary;

const BOS_PROB_LOG10: f64 = -99.0;

fn char_token(c: char) -> String {
    match c {
        ' ' => "<sp>".to_string(),
        c if c.is_whitespace() => format!("<U+{:04X}>", c as u32),
        c => c.to_string(),
    }
}

fn parse_char_token(tok: &str) -> Option<char> {
    if tok == "<sp>" {
        return Some(' ');
    }
    if let Some(hex) = tok.strip_prefix("<U+").and_then(|t| t.strip_suffix('>')) {
        return u32::from_str_radix(hex, 16).ok().and_then(char::from_u32);
    }
    let mut chars = tok.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Some(c),
        _ => None,
    }
}

fn token_str(vocab: &Vocabulary, id: u32) -> String {
    if id == vocab.bos() {
        "<s>".into()
    } else if id == vocab.eos() {
        "</s>".into()
    } else {
        char_token(vocab.char_of(id).expect("character id"))
    }
}

/// Renders the model as ARPA text. Entries are sorted so identical models
/// produce identical files.
pub fn to_arpa_string(lm: &NgramLm) -> String {
    let ln10 = std::f64::consts::LN_10;
    let vocab = lm.vocab();
    // Group n-grams by order: (ngram ids, ln p, optional ln backoff)
    let mut by_order: Vec<Vec<(Vec<u32>, f64, Option<f64>)>> = vec![Vec::new(); lm.order()];

    let bos_backoff = lm.contexts.get(&vec![vocab.bos()]).map(|e| e.backoff);
    by_order[0].push((vec![vocab.bos()], BOS_PROB_LOG10 * ln10, bos_backoff));

    for (ctx, entry) in &lm.contexts {
        for &(token, lp) in &entry.next {
            let mut gram = ctx.clone();
            gram.push(token);
            let backoff = if gram.len() < lm.order() {
                lm.contexts.get(&gram).map(|e| e.backoff)
            } else {
                None
            };
            by_order[ctx.len()].push((gram, lp, backoff));
        }
    }

    let mut out = String::new();
    out.push_str("\\data\\\n");
    for (n, grams) in by_order.iter().enumerate() {
        let _ = writeln!(out, "ngram {}={}", n + 1, grams.len());
    }
    for (n, grams) in by_order.iter_mut().enumerate() {
        grams.sort_by(|a, b| a.0.cmp(&b.0));
        let _ = write!(out, "\n\\{}-grams:\n", n + 1);
        for (gram, lp, backoff) in grams.iter() {
            let tokens: Vec<String> = gram.iter().map(|&t| token_str(vocab, t)).collect();
            let _ = write!(out, "{}\t{}", lp / ln10, tokens.join(" "));
            if let Some(b) = backoff {
                let _ = write!(out, "\t{}", b / ln10);
            }
            out.push('\n');
        }
    }
    out.push_str("\n\\end\\\n");
    out
}

pub fn save_arpa(lm: &NgramLm, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_arpa_string(lm)).map_err(|e| Error::io(path, e))
}

pub fn load_arpa(path: impl AsRef<Path>) -> Result<NgramLm> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_arpa(&text)
}

fn arpa_err(section: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Arpa {
        section: section.to_string(),
        line,
        message: message.into(),
    }
}

struct RawEntry {
    tokens: Vec<String>,
    log10_prob: f64,
    log10_backoff: Option<f64>,
}

pub fn parse_arpa(text: &str) -> Result<NgramLm> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));

    // Header
    let mut seen_data = false;
    for (no, line) in lines.by_ref() {
        if line.is_empty() {
            continue;
        }
        if line == "\\data\\" {
            seen_data = true;
            break;
        }
        return Err(arpa_err("\\data\\", no, format!("expected \\data\\, found {line:?}")));
    }
    if !seen_data {
        return Err(arpa_err("\\data\\", 0, "missing \\data\\ header"));
    }

    let mut declared: Vec<usize> = Vec::new();
    let mut pending: Option<(usize, &str)> = None;
    for (no, line) in lines.by_ref() {
        if line.is_empty() {
            if !declared.is_empty() {
                break;
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("ngram ") {
            let (n, count) = rest
                .split_once('=')
                .ok_or_else(|| arpa_err("\\data\\", no, "expected `ngram N=COUNT`"))?;
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| arpa_err("\\data\\", no, format!("bad order {n:?}")))?;
            let count: usize = count
                .trim()
                .parse()
                .map_err(|_| arpa_err("\\data\\", no, format!("bad count {count:?}")))?;
            if n != declared.len() + 1 {
                return Err(arpa_err("\\data\\", no, format!("unexpected order {n}")));
            }
            declared.push(count);
        } else {
            pending = Some((no, line));
            break;
        }
    }
    if declared.is_empty() {
        return Err(arpa_err("\\data\\", 0, "no ngram counts declared"));
    }

    let order = declared.len();
    let mut sections: Vec<Vec<RawEntry>> = Vec::with_capacity(order);
    let mut saw_end = false;

    let mut current: Option<usize> = None;
    let mut last_line = 0;
    for (no, line) in pending.into_iter().chain(lines) {
        last_line = no;
        if line.is_empty() {
            continue;
        }
        if line == "\\end\\" {
            saw_end = true;
            break;
        }
        if let Some(n) = line
            .strip_prefix('\\')
            .and_then(|l| l.strip_suffix("-grams:"))
        {
            let n: usize = n
                .parse()
                .map_err(|_| arpa_err(line, no, "bad section header"))?;
            if n != sections.len() + 1 || n > order {
                return Err(arpa_err(line, no, format!("unexpected section for order {n}")));
            }
            if let Some(prev) = current {
                check_count(&sections[prev], declared[prev], prev + 1, no)?;
            }
            sections.push(Vec::with_capacity(declared[n - 1]));
            current = Some(n - 1);
            continue;
        }
        let idx = current.ok_or_else(|| arpa_err("\\data\\", no, "entry outside any section"))?;
        let section = format!("\\{}-grams:", idx + 1);
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(arpa_err(&section, no, "expected 2 or 3 tab-separated fields"));
        }
        let log10_prob: f64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| arpa_err(&section, no, format!("non-numeric probability {:?}", fields[0])))?;
        let tokens: Vec<String> = fields[1].split(' ').map(str::to_string).collect();
        if tokens.len() != idx + 1 {
            return Err(arpa_err(
                &section,
                no,
                format!("expected {} tokens, found {}", idx + 1, tokens.len()),
            ));
        }
        let log10_backoff = match fields.get(2) {
            Some(f) => Some(
                f.trim()
                    .parse()
                    .map_err(|_| arpa_err(&section, no, format!("non-numeric backoff {f:?}")))?,
            ),
            None => None,
        };
        sections[idx].push(RawEntry {
            tokens,
            log10_prob,
            log10_backoff,
        });
    }

    match current {
        Some(idx) => check_count(&sections[idx], declared[idx], idx + 1, last_line)?,
        None => return Err(arpa_err("\\1-grams:", last_line, "missing section")),
    }
    if sections.len() != order {
        let missing = sections.len() + 1;
        return Err(arpa_err(
            &format!("\\{missing}-grams:"),
            last_line,
            "missing section",
        ));
    }
    if !saw_end {
        return Err(arpa_err("\\end\\", last_line, "missing \\end\\ marker (truncated file?)"));
    }

    build_from_entries(order, &sections)
}

fn check_count(entries: &[RawEntry], declared: usize, n: usize, line: usize) -> Result<()> {
    if entries.len() != declared {
        return Err(arpa_err(
            &format!("\\{n}-grams:"),
            line,
            format!("declared {declared} entries, found {}", entries.len()),
        ));
    }
    Ok(())
}

fn build_from_entries(order: usize, sections: &[Vec<RawEntry>]) -> Result<NgramLm> {
    let ln10 = std::f64::consts::LN_10;
    let mut chars = Vec::new();
    let mut has_eos = false;
    for (i, e) in sections[0].iter().enumerate() {
        match e.tokens[0].as_str() {
            "<s>" => {}
            "</s>" => has_eos = true,
            tok => chars.push(parse_char_token(tok).ok_or_else(|| {
                arpa_err("\\1-grams:", i, format!("unrecognized token {tok:?}"))
            })?),
        }
    }
    if !has_eos {
        return Err(arpa_err("\\1-grams:", 0, "no </s> unigram"));
    }
    let vocab = Vocabulary::new(chars);
    let lookup: HashMap<String, u32> = (1..=vocab.bos())
        .map(|id| (token_str(&vocab, id), id))
        .collect();

    let mut contexts: HashMap<Vec<u32>, ContextEntry> = HashMap::new();
    for (n, entries) in sections.iter().enumerate() {
        let section = format!("\\{}-grams:", n + 1);
        for e in entries {
            let ids = e
                .tokens
                .iter()
                .map(|t| {
                    lookup
                        .get(t)
                        .copied()
                        .ok_or_else(|| arpa_err(&section, 0, format!("token {t:?} not in unigrams")))
                })
                .collect::<Result<Vec<u32>>>()?;
            if let Some(b) = e.log10_backoff {
                contexts.entry(ids.clone()).or_default().backoff = b * ln10;
            }
            let (&last, ctx) = ids.split_last().expect("non-empty n-gram");
            if last == vocab.bos() {
                continue;
            }
            contexts
                .entry(ctx.to_vec())
                .or_default()
                .next
                .push((last, e.log10_prob * ln10));
        }
    }
    for entry in contexts.values_mut() {
        entry.next.sort_by_key(|&(t, _)| t);
    }
    let unigrams = contexts.get(&Vec::new()).map_or(0, |e| e.next.len());
    if unigrams != vocab.char_count() + 1 {
        return Err(arpa_err("\\1-grams:", 0, "incomplete unigram table"));
    }

    Ok(NgramLm {
        order,
        discount: None,
        vocab,
        contexts,
    })
}
