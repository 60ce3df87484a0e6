//! Connectionist temporal classification: loss, gradients and collapse.
//!
//! Label `0` is the blank. All recursions run in log space.

use crate::error::{Error, Result};
use crate::vocab::BLANK;

/// Numerically stable `ln(exp(a) + exp(b))`.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-frame log-distributions over labels, stored row-major `T × L`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    frames: usize,
    labels: usize,
    data: Vec<f64>,
}

impl PosteriorMatrix {
    /// Wraps log-probabilities, checking that every row is normalized.
    pub fn from_log_probs(frames: usize, labels: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || labels == 0 {
            return Err(Error::Shape("posterior matrix needs T >= 1 and L >= 1".into()));
        }
        if data.len() != frames * labels {
            return Err(Error::Shape(format!(
                "expected {} values for {frames}x{labels}, got {}",
                frames * labels,
                data.len()
            )));
        }
        for (t, row) in data.chunks(labels).enumerate() {
            let lse = log_sum_exp(row);
            if !(lse.abs() <= 1e-6) {
                return Err(Error::InvalidArgument(format!(
                    "row {t} log-sums to {lse}, expected 0"
                )));
            }
        }
        Ok(PosteriorMatrix {
            frames,
            labels,
            data,
        })
    }

    /// Normalizes each row of unnormalized scores with a log-softmax.
    pub fn from_logits(frames: usize, labels: usize, logits: &[f64]) -> Result<Self> {
        if frames == 0 || labels == 0 || logits.len() != frames * labels {
            return Err(Error::Shape(format!(
                "logits length {} does not match {frames}x{labels}",
                logits.len()
            )));
        }
        let mut data = logits.to_vec();
        for row in data.chunks_mut(labels) {
            log_softmax_in_place(row);
        }
        Ok(PosteriorMatrix {
            frames,
            labels,
            data,
        })
    }

    /// Takes probabilities (rows summing to one) and stores their logs.
    pub fn from_probs(frames: usize, labels: usize, probs: &[f64]) -> Result<Self> {
        Self::from_log_probs(frames, labels, probs.iter().map(|p| p.ln()).collect())
    }

    pub(crate) fn from_raw(frames: usize, labels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), frames * labels);
        PosteriorMatrix {
            frames,
            labels,
            data,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.labels..(t + 1) * self.labels]
    }

    pub fn get(&self, t: usize, label: usize) -> f64 {
        self.data[t * self.labels + label]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.labels)
    }
}

pub fn log_softmax_in_place(row: &mut [f64]) {
    let lse = log_sum_exp(row);
    row.iter_mut().for_each(|v| *v -= lse);
}

/// Merges adjacent repeats, then drops blanks.
pub fn collapse(frame_labels: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &l in frame_labels {
        if Some(l) != prev && l != BLANK {
            out.push(l);
        }
        prev = Some(l);
    }
    out
}

/// Collapse of the per-frame argmax; ties go to the lowest label id.
pub fn greedy_decode(posteriors: &PosteriorMatrix) -> Vec<u32> {
    let path: Vec<u32> = posteriors
        .rows()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best as u32
        })
        .collect();
    collapse(&path)
}

/// Minimum number of frames that can carry `labels`: one per label plus a
/// separating blank between equal neighbours.
pub fn min_frames(labels: &[u32]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn validate_labels(labels: &[u32], label_count: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty label sequence".into()));
    }
    for &l in labels {
        if l == BLANK {
            return Err(Error::InvalidArgument("blank inside label sequence".into()));
        }
        if l as usize >= label_count {
            return Err(Error::LabelOutOfRange {
                id: l as usize,
                count: label_count,
            });
        }
    }
    Ok(())
}

/// Result of [`ctc_loss`]: negative log-likelihood and its gradient with
/// respect to the pre-softmax logits, `T × L` row-major.
#[derive(Debug, Clone)]
pub struct CtcOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// CTC negative log-likelihood by forward-backward over the
/// blank-interleaved label sequence.
pub fn ctc_loss(posteriors: &PosteriorMatrix, labels: &[u32]) -> Result<CtcOutput> {
    let (t_len, l_len) = (posteriors.frames(), posteriors.labels());
    validate_labels(labels, l_len)?;
    let required = min_frames(labels);
    if t_len < required {
        return Err(Error::Unalignable {
            labels: labels.len(),
            required,
            frames: t_len,
        });
    }

    // Extended sequence: blank, l1, blank, l2, ..., blank
    let s_len = 2 * labels.len() + 1;
    let ext: Vec<usize> = (0..s_len)
        .map(|s| if s % 2 == 0 { BLANK as usize } else { labels[s / 2] as usize })
        .collect();
    let can_skip = |s: usize| s >= 2 && ext[s] != BLANK as usize && ext[s] != ext[s - 2];

    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = posteriors.get(0, ext[0]);
    alpha[1] = posteriors.get(0, ext[1]);
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        let cur = &mut cur[..s_len];
        // Positions that cannot reach the end in time stay at -inf.
        let lo = s_len.saturating_sub(2 * (t_len - t));
        let hi = (2 * (t + 1)).min(s_len);
        for s in lo..hi {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip(s) {
                acc = log_add(acc, prev[s - 2]);
            }
            cur[s] = acc + posteriors.get(t, ext[s]);
        }
    }

    let last = (t_len - 1) * s_len;
    let log_p = log_add(alpha[last + s_len - 1], alpha[last + s_len - 2]);
    if !log_p.is_finite() {
        return Err(Error::NonFinite("CTC path probability underflowed".into()));
    }

    // beta[t][s]: log-probability of completing the labelling from (t, s),
    // excluding the emission at t.
    let mut beta = vec![ninf; t_len * s_len];
    beta[last + s_len - 1] = 0.0;
    beta[last + s_len - 2] = 0.0;
    for t in (0..t_len - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        let next = &next[..s_len];
        for s in 0..s_len {
            let mut acc = next[s] + posteriors.get(t + 1, ext[s]);
            if s + 1 < s_len {
                acc = log_add(acc, next[s + 1] + posteriors.get(t + 1, ext[s + 1]));
            }
            if s + 2 < s_len && can_skip(s + 2) {
                acc = log_add(acc, next[s + 2] + posteriors.get(t + 1, ext[s + 2]));
            }
            cur[s] = acc;
        }
    }

    let mut grad = vec![0.0; t_len * l_len];
    let mut occupancy = vec![ninf; l_len];
    for t in 0..t_len {
        occupancy.iter_mut().for_each(|v| *v = ninf);
        for s in 0..s_len {
            let v = alpha[t * s_len + s] + beta[t * s_len + s];
            occupancy[ext[s]] = log_add(occupancy[ext[s]], v);
        }
        let row = posteriors.row(t);
        let g = &mut grad[t * l_len..(t + 1) * l_len];
        for k in 0..l_len {
            g[k] = row[k].exp() - (occupancy[k] - log_p).exp();
        }
    }

    Ok(CtcOutput {
        loss: -log_p,
        grad,
    })
}

/// Loss by explicit enumeration of all `L^T` frame paths. Returns `+inf`
/// when no path collapses to `labels`.
pub fn ctc_loss_bruteforce(posteriors: &PosteriorMatrix, labels: &[u32]) -> Result<f64> {
    let (t_len, l_len) = (posteriors.frames(), posteriors.labels());
    let total = (l_len as f64).powi(t_len as i32);
    if total > 1e6 {
        return Err(Error::InvalidArgument(format!(
            "{l_len}^{t_len} paths is too many to enumerate"
        )));
    }
    let mut path = vec![0u32; t_len];
    let mut acc = f64::NEG_INFINITY;
    loop {
        if collapse(&path) == labels {
            let lp: f64 = path
                .iter()
                .enumerate()
                .map(|(t, &l)| posteriors.get(t, l as usize))
                .sum();
            acc = log_add(acc, lp);
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == t_len {
                return Ok(-acc);
            }
            path[i] += 1;
            if (path[i] as usize) < l_len {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}
