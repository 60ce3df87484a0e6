//! Binary recognizer checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "SEQREC1\0"
//! config     5 × u32  input_dim, context_radius, feature_dim, recurrent_dim, label_count
//!            1 × u64  seed
//! sections   u32      section count
//! per section:
//!            u32      name length
//!            bytes    name (UTF-8)
//!            u32      element count
//!            f32 × n  values
//! ```
//!
//! Parameter sections appear in [`RecognizerConfig::param_shapes`] order.
//! An optional trailing `vocab` section stores the label characters as
//! Unicode scalar values (exact in `f32`).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::recognizer::{Params, Recognizer, RecognizerConfig};
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8; 8] = b"SEQREC1\0";
const VOCAB_SECTION: &str = "vocab";

/// Size in bytes of the fixed header (magic, config block, section count).
pub const HEADER_BYTES: usize = 8 + 5 * 4 + 8 + 4;

pub fn encode_checkpoint(model: &Recognizer, vocab: Option<&Vocabulary>) -> Vec<u8> {
    let cfg = model.config();
    let mut out = Vec::with_capacity(HEADER_BYTES + 4 * model.params().len());
    out.extend_from_slice(MAGIC);
    for v in [
        cfg.input_dim,
        cfg.context_radius,
        cfg.feature_dim,
        cfg.recurrent_dim,
        cfg.label_count,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    let sections = model.params().tensors.len() + usize::from(vocab.is_some());
    out.extend_from_slice(&(sections as u32).to_le_bytes());

    let mut write_section = |name: &str, values: &mut dyn Iterator<Item = f32>, n: usize| {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for t in &model.params().tensors {
        write_section(t.name, &mut t.data.iter().map(|&v| v as f32), t.data.len());
    }
    if let Some(v) = vocab {
        let chars = v.chars();
        write_section(
            VOCAB_SECTION,
            &mut chars.iter().map(|&c| c as u32 as f32),
            chars.len(),
        );
    }
    out
}

pub fn save_checkpoint(
    model: &Recognizer,
    vocab: Option<&Vocabulary>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model, vocab)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Recognizer, Option<Vocabulary>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|msg| Error::format(path, msg))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.bytes.len() {
            return Err(format!("truncated while reading {what}"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(
    bytes: &[u8],
) -> std::result::Result<(Recognizer, Option<Vocabulary>), String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err("bad magic (not a SEQREC1 checkpoint)".into());
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u32("config")? as usize;
    }
    let cfg = RecognizerConfig {
        input_dim: dims[0],
        context_radius: dims[1],
        feature_dim: dims[2],
        recurrent_dim: dims[3],
        label_count: dims[4],
        seed: r.u64("config")?,
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let sections = r.u32("section count")? as usize;
    let mut params = Params::zeros(&cfg);
    if sections < params.tensors.len() || sections > params.tensors.len() + 1 {
        return Err(format!(
            "expected {} or {} sections, found {sections}",
            params.tensors.len(),
            params.tensors.len() + 1
        ));
    }
    let mut vocab = None;
    for i in 0..sections {
        let name_len = r.u32("section name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "section name")?)
            .map_err(|_| "section name is not UTF-8".to_string())?
            .to_string();
        let count = r.u32("element count")? as usize;
        let raw = r.take(4 * count, &format!("section {name}"))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        if i < params.tensors.len() {
            let t = &mut params.tensors[i];
            if t.name != name {
                return Err(format!("section {i} is {name:?}, expected {:?}", t.name));
            }
            if t.data.len() != count {
                return Err(format!(
                    "section {name} has {count} values, config implies {}",
                    t.data.len()
                ));
            }
            for (dst, v) in t.data.iter_mut().zip(values) {
                *dst = v as f64;
            }
        } else {
            if name != VOCAB_SECTION {
                return Err(format!("unexpected trailing section {name:?}"));
            }
            let chars = values
                .map(|v| char::from_u32(v as u32).ok_or("invalid code point in vocab"))
                .collect::<std::result::Result<Vec<char>, _>>()?;
            let v = Vocabulary::new(chars);
            if v.label_count() != cfg.label_count {
                return Err(format!(
                    "vocab has {} labels, config {}",
                    v.label_count(),
                    cfg.label_count
                ));
            }
            vocab = Some(v);
        }
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    let model = Recognizer::from_parts(cfg, params).map_err(|e| e.to_string())?;
    Ok((model, vocab))
}
