//! On-disk datasets: `manifest.tsv` plus one `FRM1` frame file per sample.
//!
//! Manifest rows are `id \t relative frame path \t transcription`; an empty
//! transcription marks an unlabeled sample. Frame files hold the magic
//! `FRM1`, `u32 T`, `u32 D` and `T·D` little-endian `f32` values, row-major.

use std::fs;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::synth::{derive_seed, LanguageSpec, RenderOptions};

pub const FRAME_MAGIC: &[u8; 4] = b"FRM1";
pub const MANIFEST: &str = "manifest.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `T × D` row-major.
    pub frames: Vec<f64>,
    pub dim: usize,
    pub transcription: Option<String>,
}

impl Sample {
    pub fn frame_count(&self) -> usize {
        self.frames.len() / self.dim
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn transcriptions(&self) -> Vec<&str> {
        self.samples
            .iter()
            .filter_map(|s| s.transcription.as_deref())
            .collect()
    }

    pub fn is_labeled(&self) -> bool {
        self.samples.iter().all(|s| s.transcription.is_some())
    }

    /// Copy with every transcription removed.
    pub fn unlabeled(&self) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    transcription: None,
                    ..s.clone()
                })
                .collect(),
        }
    }
}

pub fn encode_frames(frames: &[f64], dim: usize) -> Vec<u8> {
    let t = frames.len() / dim;
    let mut out = Vec::with_capacity(12 + 4 * frames.len());
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for &v in frames {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn write_frames(path: impl AsRef<Path>, frames: &[f64], dim: usize) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_frames(frames, dim)).map_err(|e| Error::io(path, e))
}

/// Returns `(frames, dim)`.
pub fn read_frames(path: impl AsRef<Path>) -> Result<(Vec<f64>, usize)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != FRAME_MAGIC {
        return Err(Error::format(path, "missing FRM1 header"));
    }
    let t = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if t == 0 || d == 0 {
        return Err(Error::format(path, "empty frame matrix"));
    }
    if bytes.len() != 12 + 4 * t * d {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes for {t}x{d}, found {}", 4 * t * d, bytes.len() - 12),
        ));
    }
    let frames = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((frames, d))
}

/// Loads `dir/manifest.tsv` and every frame file it references.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut samples = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        if fields.len() != 3 {
            return Err(Error::format(
                &manifest,
                format!("line {}: expected 3 tab-separated fields", no + 1),
            ));
        }
        let (frames, dim) = read_frames(dir.join(fields[1]))?;
        samples.push(Sample {
            id: fields[0].to_string(),
            frames,
            dim,
            transcription: (!fields[2].is_empty()).then(|| fields[2].to_string()),
        });
    }
    Ok(Dataset { samples })
}

pub fn save_dataset(dir: impl AsRef<Path>, data: &Dataset) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let frame_dir = dir.join("frames");
    fs::create_dir_all(&frame_dir).map_err(|e| Error::io(&frame_dir, e))?;
    let mut manifest = String::new();
    for s in &data.samples {
        let rel = format!("frames/{}.frm", s.id);
        write_frames(dir.join(&rel), &s.frames, s.dim)?;
        manifest.push_str(&format!(
            "{}\t{}\t{}\n",
            s.id,
            rel,
            s.transcription.as_deref().unwrap_or("")
        ));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn write_corpus<S: AsRef<str>>(path: impl AsRef<Path>, lines: &[S]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for l in lines {
        writeln!(f, "{}", l.as_ref()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Samples `n` transcriptions and renders them. Every sample draws from its
/// own generator seeded by `(seed, tag, index)`.
pub fn sample_dataset(
    spec: &LanguageSpec,
    n: usize,
    len_range: RangeInclusive<usize>,
    seed: u64,
    tag: &str,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
    }
    if *len_range.start() == 0 || len_range.is_empty() {
        return Err(Error::InvalidArgument("text lengths must be >= 1".into()));
    }
    let samples = (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, i as u64));
            let len = rng.random_range(len_range.clone());
            let text = spec.sample_text(len, &mut rng);
            let frames = spec.render(&text, &mut rng, RenderOptions::default())?;
            Ok(Sample {
                id: format!("{tag}-{i:05}"),
                frames,
                dim: spec.input_dim,
                transcription: Some(text),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { samples })
}

/// Text-only corpus drawn from the same chain, independent of any dataset.
pub fn sample_corpus(
    spec: &LanguageSpec,
    n: usize,
    len_range: RangeInclusive<usize>,
    seed: u64,
    tag: &str,
) -> Vec<String> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, i as u64));
            let len = rng.random_range(len_range.clone());
            spec.sample_text(len, &mut rng)
        })
        .collect()
}

/// Writes a dataset (optionally stripped of labels) plus `corpus.txt` with
/// its transcriptions. Returns the manifest path.
pub fn generate_dataset(
    spec: &LanguageSpec,
    n: usize,
    len_range: RangeInclusive<usize>,
    seed: u64,
    tag: &str,
    labeled: bool,
    out_dir: impl AsRef<Path>,
) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    let data = sample_dataset(spec, n, len_range, seed, tag)?;
    let corpus: Vec<String> = data.transcriptions().into_iter().map(String::from).collect();
    let stored = if labeled { data } else { data.unlabeled() };
    let manifest = save_dataset(out_dir, &stored)?;
    write_corpus(out_dir.join("corpus.txt"), &corpus)?;
    Ok(manifest)
}
