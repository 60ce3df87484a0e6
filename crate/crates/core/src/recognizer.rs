//! Frame-sequence recognizer with two CTC heads.
//!
//! ```text
//! x_t ──window(2r+1)──► h_t = tanh(W_f · win_t + b_f) ──► aux_t  = log_softmax(W_a h_t + b_a)
//!                           │
//!                           ├─► f_t = tanh(W_fx h_t + W_fh f_{t−1} + b_fr)
//!                           └─► b_t = tanh(W_bx h_t + W_bh b_{t+1} + b_br)
//!                                   main_t = log_softmax(W_m [f_t; b_t] + b_m)
//! ```
//!
//! The auxiliary head only sees a `2r + 1` frame window; the main head sees
//! the whole sequence through the two recurrences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ctc::{log_softmax_in_place, PosteriorMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecognizerConfig {
    pub input_dim: usize,
    pub context_radius: usize,
    pub feature_dim: usize,
    /// Hidden units per recurrent direction.
    pub recurrent_dim: usize,
    /// Output labels including blank.
    pub label_count: usize,
    pub seed: u64,
}

impl RecognizerConfig {
    pub fn new(label_count: usize) -> Self {
        RecognizerConfig {
            input_dim: 16,
            context_radius: 2,
            feature_dim: 64,
            recurrent_dim: 32,
            label_count,
            seed: 0,
        }
    }

    pub fn window_dim(&self) -> usize {
        (2 * self.context_radius + 1) * self.input_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.feature_dim == 0
            || self.recurrent_dim == 0
            || self.label_count < 2
        {
            return Err(Error::InvalidArgument(format!(
                "recognizer dimensions must be positive (and at least 2 labels): {self:?}"
            )));
        }
        Ok(())
    }

    /// `(name, rows, cols)` for every parameter tensor, in storage order.
    /// Biases have one column.
    pub fn param_shapes(&self) -> Vec<(&'static str, usize, usize)> {
        let (w, h, r, l) = (
            self.window_dim(),
            self.feature_dim,
            self.recurrent_dim,
            self.label_count,
        );
        vec![
            ("feat.w", h, w),
            ("feat.b", h, 1),
            ("aux.w", l, h),
            ("aux.b", l, 1),
            ("fwd.wx", r, h),
            ("fwd.wh", r, r),
            ("fwd.b", r, 1),
            ("bwd.wx", r, h),
            ("bwd.wh", r, r),
            ("bwd.b", r, 1),
            ("main.w", l, 2 * r),
            ("main.b", l, 1),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, r, c)| r * c).sum()
    }
}

// Indices into `Params::tensors`, matching `param_shapes`.
const FEAT_W: usize = 0;
const FEAT_B: usize = 1;
const AUX_W: usize = 2;
const AUX_B: usize = 3;
const FWD_WX: usize = 4;
const FWD_WH: usize = 5;
const FWD_B: usize = 6;
const BWD_WX: usize = 7;
const BWD_WH: usize = 8;
const BWD_B: usize = 9;
const MAIN_W: usize = 10;
const MAIN_B: usize = 11;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Named flat parameter (or gradient) arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tensors: Vec<Tensor>,
}

impl Params {
    pub fn zeros(cfg: &RecognizerConfig) -> Self {
        Params {
            tensors: cfg
                .param_shapes()
                .into_iter()
                .map(|(name, rows, cols)| Tensor {
                    name,
                    rows,
                    cols,
                    data: vec![0.0; rows * cols],
                })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut())
    }

    pub fn same_shape(&self, other: &Params) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.rows == b.rows && a.cols == b.cols)
    }

    pub fn fill(&mut self, v: f64) {
        self.iter_mut().for_each(|x| *x = v);
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Storage precision for parameters. Computation is always 64-bit; in
/// `F32` mode parameters are kept exactly representable as `f32` so
/// checkpoints round-trip bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recognizer {
    cfg: RecognizerConfig,
    params: Params,
    precision: Precision,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    frames: usize,
    windows: Vec<f64>,
    hidden: Vec<f64>,
    fwd: Vec<f64>,
    bwd: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub aux: PosteriorMatrix,
    pub main: PosteriorMatrix,
    pub cache: ForwardCache,
}

// out[i] += Σ_j w[i, j] x[j]
fn matvec_add(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

// out[j] += Σ_i w[i, j] dy[i]
fn matvec_t_add(out: &mut [f64], w: &[f64], dy: &[f64]) {
    let cols = out.len();
    for (d, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if *d == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * d;
        }
    }
}

// dw[i, j] += dy[i] x[j]
fn outer_add(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (d, row) in dy.iter().zip(dw.chunks_exact_mut(cols)) {
        if *d == 0.0 {
            continue;
        }
        for (o, a) in row.iter_mut().zip(x) {
            *o += d * a;
        }
    }
}

fn add_into(out: &mut [f64], x: &[f64]) {
    out.iter_mut().zip(x).for_each(|(o, v)| *o += v);
}

impl Recognizer {
    /// Glorot-uniform weights from a generator seeded by `cfg.seed`; zero biases.
    pub fn init(cfg: RecognizerConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = Params::zeros(&cfg);
        for t in &mut params.tensors {
            if t.cols == 1 {
                continue;
            }
            let s = (6.0 / (t.rows + t.cols) as f64).sqrt();
            for v in &mut t.data {
                *v = rng.random_range(-s..=s) as f32 as f64;
            }
        }
        Ok(Recognizer {
            cfg,
            params,
            precision: Precision::F32,
        })
    }

    pub(crate) fn from_parts(cfg: RecognizerConfig, params: Params) -> Result<Self> {
        cfg.validate()?;
        if !params.same_shape(&Params::zeros(&cfg)) {
            return Err(Error::Shape("parameters do not match config".into()));
        }
        Ok(Recognizer {
            cfg,
            params,
            precision: Precision::F32,
        })
    }

    pub fn config(&self) -> &RecognizerConfig {
        &self.cfg
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Switches storage precision. Going to `F32` rounds every parameter.
    pub fn set_precision(&mut self, precision: Precision) {
        self.precision = precision;
        if precision == Precision::F32 {
            self.params.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    /// Mutable access for optimizers; call [`Recognizer::settle`] afterwards.
    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// Re-applies the storage precision after external modification.
    pub fn settle(&mut self) {
        if self.precision == Precision::F32 {
            self.params.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    fn check_frames(&self, frames: &[f64]) -> Result<usize> {
        let d = self.cfg.input_dim;
        if frames.is_empty() || !frames.len().is_multiple_of(d) {
            return Err(Error::Shape(format!(
                "frame buffer of length {} is not a non-empty multiple of D = {d}",
                frames.len()
            )));
        }
        Ok(frames.len() / d)
    }

    /// Runs both heads over a `T × D` row-major frame buffer.
    pub fn forward(&self, frames: &[f64]) -> Result<ForwardOutput> {
        let t_len = self.check_frames(frames)?;
        let cfg = &self.cfg;
        let (d, r_ctx, h, r, l) = (
            cfg.input_dim,
            cfg.context_radius as isize,
            cfg.feature_dim,
            cfg.recurrent_dim,
            cfg.label_count,
        );
        let wd = cfg.window_dim();
        let p = &self.params.tensors;

        let mut windows = vec![0.0; t_len * wd];
        for t in 0..t_len {
            let win = &mut windows[t * wd..(t + 1) * wd];
            for (slot, off) in (-r_ctx..=r_ctx).enumerate() {
                let src = t as isize + off;
                if src >= 0 && (src as usize) < t_len {
                    let src = src as usize;
                    win[slot * d..(slot + 1) * d].copy_from_slice(&frames[src * d..(src + 1) * d]);
                }
            }
        }

        let mut hidden = vec![0.0; t_len * h];
        let mut aux = vec![0.0; t_len * l];
        for t in 0..t_len {
            let hv = &mut hidden[t * h..(t + 1) * h];
            hv.copy_from_slice(&p[FEAT_B].data);
            matvec_add(hv, &p[FEAT_W].data, &windows[t * wd..(t + 1) * wd]);
            hv.iter_mut().for_each(|v| *v = v.tanh());
            let av = &mut aux[t * l..(t + 1) * l];
            av.copy_from_slice(&p[AUX_B].data);
            matvec_add(av, &p[AUX_W].data, hv);
            log_softmax_in_place(av);
        }

        let mut fwd = vec![0.0; t_len * r];
        for t in 0..t_len {
            let mut z = p[FWD_B].data.clone();
            matvec_add(&mut z, &p[FWD_WX].data, &hidden[t * h..(t + 1) * h]);
            if t > 0 {
                matvec_add(&mut z, &p[FWD_WH].data, &fwd[(t - 1) * r..t * r]);
            }
            for (o, v) in fwd[t * r..(t + 1) * r].iter_mut().zip(&z) {
                *o = v.tanh();
            }
        }
        let mut bwd = vec![0.0; t_len * r];
        for t in (0..t_len).rev() {
            let mut z = p[BWD_B].data.clone();
            matvec_add(&mut z, &p[BWD_WX].data, &hidden[t * h..(t + 1) * h]);
            if t + 1 < t_len {
                matvec_add(&mut z, &p[BWD_WH].data, &bwd[(t + 1) * r..(t + 2) * r]);
            }
            for (o, v) in bwd[t * r..(t + 1) * r].iter_mut().zip(&z) {
                *o = v.tanh();
            }
        }

        let mut main = vec![0.0; t_len * l];
        let mut g = vec![0.0; 2 * r];
        for t in 0..t_len {
            g[..r].copy_from_slice(&fwd[t * r..(t + 1) * r]);
            g[r..].copy_from_slice(&bwd[t * r..(t + 1) * r]);
            let mv = &mut main[t * l..(t + 1) * l];
            mv.copy_from_slice(&p[MAIN_B].data);
            matvec_add(mv, &p[MAIN_W].data, &g);
            log_softmax_in_place(mv);
        }

        Ok(ForwardOutput {
            aux: PosteriorMatrix::from_raw(t_len, l, aux),
            main: PosteriorMatrix::from_raw(t_len, l, main),
            cache: ForwardCache {
                frames: t_len,
                windows,
                hidden,
                fwd,
                bwd,
            },
        })
    }

    /// Main-head posteriors only.
    pub fn predict(&self, frames: &[f64]) -> Result<PosteriorMatrix> {
        Ok(self.forward(frames)?.main)
    }

    /// Accumulates into `grads` the parameter gradients given the loss
    /// gradients with respect to the aux and main logits (`T × L` each).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        aux_grad: &[f64],
        main_grad: &[f64],
        grads: &mut Params,
    ) -> Result<()> {
        let cfg = &self.cfg;
        let (h, r, l, wd) = (
            cfg.feature_dim,
            cfg.recurrent_dim,
            cfg.label_count,
            cfg.window_dim(),
        );
        let t_len = cache.frames;
        if aux_grad.len() != t_len * l || main_grad.len() != t_len * l {
            return Err(Error::Shape(format!(
                "head gradients must be {t_len}x{l}, got {} and {}",
                aux_grad.len(),
                main_grad.len()
            )));
        }
        if !grads.same_shape(&self.params) {
            return Err(Error::Shape("gradient buffer does not match parameters".into()));
        }
        let p = &self.params.tensors;
        let gt = &mut grads.tensors;

        let mut dhidden = vec![0.0; t_len * h];
        let mut dfwd = vec![0.0; t_len * r];
        let mut dbwd = vec![0.0; t_len * r];

        // Main head.
        let mut g = vec![0.0; 2 * r];
        let mut dg = vec![0.0; 2 * r];
        for t in 0..t_len {
            let dy = &main_grad[t * l..(t + 1) * l];
            if dy.iter().all(|&v| v == 0.0) {
                continue;
            }
            g[..r].copy_from_slice(&cache.fwd[t * r..(t + 1) * r]);
            g[r..].copy_from_slice(&cache.bwd[t * r..(t + 1) * r]);
            outer_add(&mut gt[MAIN_W].data, dy, &g);
            add_into(&mut gt[MAIN_B].data, dy);
            dg.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_add(&mut dg, &p[MAIN_W].data, dy);
            add_into(&mut dfwd[t * r..(t + 1) * r], &dg[..r]);
            add_into(&mut dbwd[t * r..(t + 1) * r], &dg[r..]);
        }

        // Forward recurrence, back through time.
        let mut carry = vec![0.0; r];
        let mut dz = vec![0.0; r];
        for t in (0..t_len).rev() {
            let state = &cache.fwd[t * r..(t + 1) * r];
            for i in 0..r {
                let total = dfwd[t * r + i] + carry[i];
                dz[i] = total * (1.0 - state[i] * state[i]);
            }
            let hv = &cache.hidden[t * h..(t + 1) * h];
            outer_add(&mut gt[FWD_WX].data, &dz, hv);
            add_into(&mut gt[FWD_B].data, &dz);
            matvec_t_add(&mut dhidden[t * h..(t + 1) * h], &p[FWD_WX].data, &dz);
            carry.iter_mut().for_each(|v| *v = 0.0);
            if t > 0 {
                outer_add(&mut gt[FWD_WH].data, &dz, &cache.fwd[(t - 1) * r..t * r]);
                matvec_t_add(&mut carry, &p[FWD_WH].data, &dz);
            }
        }

        // Backward recurrence, forward through time.
        carry.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..t_len {
            let state = &cache.bwd[t * r..(t + 1) * r];
            for i in 0..r {
                let total = dbwd[t * r + i] + carry[i];
                dz[i] = total * (1.0 - state[i] * state[i]);
            }
            let hv = &cache.hidden[t * h..(t + 1) * h];
            outer_add(&mut gt[BWD_WX].data, &dz, hv);
            add_into(&mut gt[BWD_B].data, &dz);
            matvec_t_add(&mut dhidden[t * h..(t + 1) * h], &p[BWD_WX].data, &dz);
            carry.iter_mut().for_each(|v| *v = 0.0);
            if t + 1 < t_len {
                outer_add(&mut gt[BWD_WH].data, &dz, &cache.bwd[(t + 1) * r..(t + 2) * r]);
                matvec_t_add(&mut carry, &p[BWD_WH].data, &dz);
            }
        }

        // Aux head and the feature layer.
        let mut dzh = vec![0.0; h];
        for t in 0..t_len {
            let hv = &cache.hidden[t * h..(t + 1) * h];
            let dy = &aux_grad[t * l..(t + 1) * l];
            let dh = &mut dhidden[t * h..(t + 1) * h];
            if dy.iter().any(|&v| v != 0.0) {
                outer_add(&mut gt[AUX_W].data, dy, hv);
                add_into(&mut gt[AUX_B].data, dy);
                matvec_t_add(dh, &p[AUX_W].data, dy);
            }
            for i in 0..h {
                dzh[i] = dh[i] * (1.0 - hv[i] * hv[i]);
            }
            outer_add(&mut gt[FEAT_W].data, &dzh, &cache.windows[t * wd..(t + 1) * wd]);
            add_into(&mut gt[FEAT_B].data, &dzh);
        }
        Ok(())
    }
}
