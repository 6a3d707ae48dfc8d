//! Toy masked-position encoder.
//!
//! Each layer adds a mean-of-context vector to every position, applies a dense
//! `H x H` mixing matrix with bias and a tanh. In bidirectional mode the
//! context of a position is the whole sequence; in causal mode it is the
//! prefix ending at that position. A fixed sinusoidal position signal is added
//! to the token embeddings so that otherwise identical mask tokens differ.
//! Logits come from an untied `H x V` output head.
//!
//! All arithmetic is `f64`; representation sets are stored as `f32`.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::prompt::TokenizedPrompt;
use crate::repr::{Logits, RepresentationSet, Source};
use crate::tokenizer::{MASK_ID, QUOTE_ID};

pub const DPRM_MAGIC: &[u8; 4] = b"DPRM";
pub const DPRM_VERSION: u32 = 1;

/// Model dimensions plus the initialisation seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize, hidden_dim: usize, n_layers: usize, seed: u64) -> Self {
        Self { vocab_size, hidden_dim, n_layers, seed }
    }

    /// Number of scalar parameters for these dimensions.
    pub fn param_count(&self) -> usize {
        let (v, h) = (self.vocab_size, self.hidden_dim);
        v * h + self.n_layers * (h * h + h) + h * v
    }
}

/// Encoder weights in one flat buffer.
///
/// Layout: token embeddings `V x H`, then per layer the mixing matrix `H x H`
/// (row = output unit) followed by its bias `H`, then the output head `H x V`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    data: Vec<f64>,
}

impl EncoderParams {
    /// Random initialisation, reproducible from the config alone.
    pub fn init(config: EncoderConfig) -> Result<Self> {
        if config.vocab_size == 0 || config.hidden_dim == 0 || config.n_layers == 0 {
            return Err(Error::InvalidArgument(format!("all encoder dimensions must be > 0: {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut normal = |scale: f64| -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        };
        let (v, h) = (config.vocab_size, config.hidden_dim);
        let mut data = Vec::with_capacity(config.param_count());
        data.extend((0..v * h).map(|_| normal(1.0)));
        let w_scale = MIXING_INIT_NOISE / (h as f64).sqrt();
        for _ in 0..config.n_layers {
            data.extend((0..h * h).map(|i| normal(w_scale) + if i / h == i % h { 1.0 } else { 0.0 }));
            data.extend(std::iter::repeat_n(0.0, h));
        }
        let head_scale = HEAD_INIT_GAIN / (h as f64).sqrt();
        let head: Vec<f64> = (0..h * v).map(|i| head_scale * data[(i % v) * h + i / v]).collect();
        data.extend(head);
        Ok(Self { config, data })
    }

    /// Sets the embedding rows of `tokens` to zero, typically the prompt
    /// scaffold, so that fixed template text adds no direction to the context.
    pub fn zero_embeddings(&mut self, tokens: impl IntoIterator<Item = u32>) -> Result<()> {
        let (v, h) = (self.config.vocab_size, self.config.hidden_dim);
        for t in tokens {
            let t = t as usize;
            if t >= v {
                return Err(Error::InvalidArgument(format!("token {t} outside vocabulary of {v}")));
            }
            self.data[t * h..(t + 1) * h].fill(0.0);
        }
        Ok(())
    }

    pub fn from_flat(config: EncoderConfig, data: Vec<f64>) -> Result<Self> {
        if data.len() != config.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a model that needs {}",
                data.len(),
                config.param_count()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(Self { config, data })
    }

    pub fn config(&self) -> EncoderConfig {
        self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn layer_offset(&self, layer: usize) -> usize {
        let h = self.hidden_dim();
        self.vocab_size() * h + layer * (h * h + h)
    }

    fn head_offset(&self) -> usize {
        self.layer_offset(self.n_layers())
    }

    pub fn embedding(&self, token: u32) -> &[f64] {
        let h = self.hidden_dim();
        &self.data[token as usize * h..(token as usize + 1) * h]
    }

    /// Mixing matrix of `layer`, row-major with one row per output unit.
    pub fn mixing_weight(&self, layer: usize) -> &[f64] {
        let o = self.layer_offset(layer);
        &self.data[o..o + self.hidden_dim() * self.hidden_dim()]
    }

    pub fn mixing_weight_mut(&mut self, layer: usize) -> &mut [f64] {
        let o = self.layer_offset(layer);
        let n = self.hidden_dim() * self.hidden_dim();
        &mut self.data[o..o + n]
    }

    pub fn mixing_bias(&self, layer: usize) -> &[f64] {
        let h = self.hidden_dim();
        let o = self.layer_offset(layer) + h * h;
        &self.data[o..o + h]
    }

    /// Output head, row-major `H x V`.
    pub fn output_head(&self) -> &[f64] {
        &self.data[self.head_offset()..]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(fs::File::create(path)?))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DPRM_MAGIC)?;
        w.write_u32::<LE>(DPRM_VERSION)?;
        w.write_u32::<LE>(self.config.vocab_size as u32)?;
        w.write_u32::<LE>(self.config.hidden_dim as u32)?;
        w.write_u32::<LE>(self.config.n_layers as u32)?;
        w.write_u64::<LE>(self.config.seed)?;
        w.write_u64::<LE>(self.data.len() as u64)?;
        for &x in &self.data {
            w.write_f64::<LE>(x)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(fs::File::open(path)?))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DPRM_MAGIC {
            return Err(Error::Format("not a DPRM checkpoint (bad magic)".into()));
        }
        let version = r.read_u32::<LE>()?;
        if version != DPRM_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let config = EncoderConfig {
            vocab_size: r.read_u32::<LE>()? as usize,
            hidden_dim: r.read_u32::<LE>()? as usize,
            n_layers: r.read_u32::<LE>()? as usize,
            seed: r.read_u64::<LE>()?,
        };
        let n = r.read_u64::<LE>()? as usize;
        if n != config.param_count() {
            return Err(Error::Format(format!("checkpoint holds {n} values, dims need {}", config.param_count())));
        }
        let mut data = vec![0f64; n];
        r.read_f64_into::<LE>(&mut data)?;
        Self::from_flat(config, data)
    }
}

/// Which positions each position's context vector averages over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContextMode {
    /// Every position sees the whole sequence.
    Bidirectional,
    /// Position `t` sees positions `0..=t`.
    Causal,
    /// Bidirectional, except that the listed positions do not see each other.
    Exclusive(Vec<usize>),
}

/// Amplitude of the sinusoidal position signal relative to unit-variance
/// embeddings.
pub const POSITION_SCALE: f64 = 0.1;

/// The output head starts as the transposed embedding table scaled by
/// `HEAD_INIT_GAIN / sqrt(H)`; it is not tied to it afterwards.
pub const HEAD_INIT_GAIN: f64 = 6.0;

/// Mixing matrices start as identity plus Gaussian noise of standard
/// deviation `MIXING_INIT_NOISE / sqrt(H)`.
pub const MIXING_INIT_NOISE: f64 = 0.5;

fn position_signal(t: usize, h: usize, out: &mut [f64]) {
    for (d, o) in out.iter_mut().enumerate().take(h) {
        let pair = (d / 2) as f64;
        let angle = t as f64 / 10000f64.powf(2.0 * pair / h as f64);
        *o = POSITION_SCALE * if d % 2 == 0 { angle.sin() } else { angle.cos() };
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct ForwardTrace {
    pub tokens: Vec<u32>,
    pub mode: ContextMode,
    /// Rows whose final-layer output was computed.
    pub out_rows: Vec<usize>,
    /// Layer inputs, each `T x H`.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-mixing vectors `x + c` for the rows each layer computed.
    pub mixed: Vec<Vec<f64>>,
    /// Final hidden states at `out_rows`, `R x H`.
    pub hidden: Vec<f64>,
}

impl EncoderParams {
    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("empty token sequence".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.vocab_size()) {
            return Err(Error::DimensionMismatch(format!(
                "token id {bad} outside vocabulary of {}",
                self.vocab_size()
            )));
        }
        Ok(())
    }

    /// Context vectors for `rows`, computed from the layer input `x` (`T x H`).
    fn contexts(&self, x: &[f64], t_len: usize, mode: &ContextMode, rows: &[usize]) -> Vec<f64> {
        let h = self.hidden_dim();
        let mut out = vec![0f64; rows.len() * h];
        let mut total = vec![0f64; h];
        for row in x.chunks_exact(h) {
            for (s, &v) in total.iter_mut().zip(row) {
                *s += v;
            }
        }
        match mode {
            ContextMode::Bidirectional => {
                for c in out.chunks_exact_mut(h) {
                    for (o, &s) in c.iter_mut().zip(&total) {
                        *o = s / t_len as f64;
                    }
                }
            }
            ContextMode::Causal => {
                let mut prefix = vec![0f64; h];
                let mut next = 0usize;
                for (i, &r) in rows.iter().enumerate() {
                    debug_assert!(i == 0 || r > rows[i - 1]);
                    while next <= r {
                        for (p, &v) in prefix.iter_mut().zip(&x[next * h..(next + 1) * h]) {
                            *p += v;
                        }
                        next += 1;
                    }
                    for (o, &p) in out[i * h..(i + 1) * h].iter_mut().zip(&prefix) {
                        *o = p / (r + 1) as f64;
                    }
                }
            }
            ContextMode::Exclusive(set) => {
                let mut set_sum = vec![0f64; h];
                for &s in set {
                    for (a, &v) in set_sum.iter_mut().zip(&x[s * h..(s + 1) * h]) {
                        *a += v;
                    }
                }
                for (i, &r) in rows.iter().enumerate() {
                    let c = &mut out[i * h..(i + 1) * h];
                    if set.contains(&r) {
                        let n = (t_len - set.len() + 1) as f64;
                        for d in 0..h {
                            c[d] = (total[d] - set_sum[d] + x[r * h + d]) / n;
                        }
                    } else {
                        for d in 0..h {
                            c[d] = total[d] / t_len as f64;
                        }
                    }
                }
            }
        }
        out
    }

    /// Applies layer `l` to `rows` of `x`; returns (mixed inputs, outputs).
    fn apply_layer(&self, l: usize, x: &[f64], t_len: usize, mode: &ContextMode, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let h = self.hidden_dim();
        let mut mixed = self.contexts(x, t_len, mode, rows);
        for (i, &r) in rows.iter().enumerate() {
            for (m, &v) in mixed[i * h..(i + 1) * h].iter_mut().zip(&x[r * h..(r + 1) * h]) {
                *m += v;
            }
        }
        let w = self.mixing_weight(l);
        let b = self.mixing_bias(l);
        let mut out = vec![0f64; rows.len() * h];
        for (u, y) in mixed.chunks_exact(h).zip(out.chunks_exact_mut(h)) {
            for o in 0..h {
                let wrow = &w[o * h..(o + 1) * h];
                let z: f64 = wrow.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() + b[o];
                y[o] = z.tanh();
            }
        }
        (mixed, out)
    }

    /// Runs all layers. Intermediate layers compute every position; the last
    /// layer only `out_rows` (ascending).
    pub(crate) fn forward(&self, tokens: &[u32], mode: ContextMode, out_rows: &[usize]) -> Result<ForwardTrace> {
        self.check_tokens(tokens)?;
        let t_len = tokens.len();
        if let Some(&r) = out_rows.iter().find(|&&r| r >= t_len) {
            return Err(Error::InvalidArgument(format!("output row {r} outside sequence of {t_len}")));
        }
        if let ContextMode::Exclusive(set) = &mode {
            if set.iter().any(|&s| s >= t_len) {
                return Err(Error::InvalidArgument("exclusive position outside sequence".into()));
            }
        }
        let h = self.hidden_dim();
        let mut x = vec![0f64; t_len * h];
        for (t, &tok) in tokens.iter().enumerate() {
            let row = &mut x[t * h..(t + 1) * h];
            position_signal(t, h, row);
            for (a, &e) in row.iter_mut().zip(self.embedding(tok)) {
                *a += e;
            }
        }
        let all: Vec<usize> = (0..t_len).collect();
        let n_layers = self.n_layers();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut mixed_all = Vec::with_capacity(n_layers);
        let mut hidden = Vec::new();
        for l in 0..n_layers {
            let last = l + 1 == n_layers;
            let rows = if last { out_rows } else { &all[..] };
            let (mixed, y) = self.apply_layer(l, &x, t_len, &mode, rows);
            inputs.push(std::mem::take(&mut x));
            mixed_all.push(mixed);
            if last {
                hidden = y;
            } else {
                x = y;
            }
        }
        Ok(ForwardTrace {
            tokens: tokens.to_vec(),
            mode,
            out_rows: out_rows.to_vec(),
            inputs,
            mixed: mixed_all,
            hidden,
        })
    }

    /// Logit rows for hidden rows (`R x H` -> `R x V`).
    pub(crate) fn logits_for(&self, hidden: &[f64]) -> Vec<f64> {
        let (h, v) = (self.hidden_dim(), self.vocab_size());
        let head = self.output_head();
        let mut out = vec![0f64; hidden.len() / h * v];
        for (hrow, lrow) in hidden.chunks_exact(h).zip(out.chunks_exact_mut(v)) {
            for (d, &hd) in hrow.iter().enumerate() {
                if hd == 0.0 {
                    continue;
                }
                for (l, &w) in lrow.iter_mut().zip(&head[d * v..(d + 1) * v]) {
                    *l += hd * w;
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` (same layout as the flat
    /// parameters) given gradients w.r.t. the final hidden rows and logit rows.
    pub(crate) fn backward(&self, trace: &ForwardTrace, d_hidden: &[f64], d_logits: Option<&[f64]>, grad: &mut [f64]) {
        let (h, v) = (self.hidden_dim(), self.vocab_size());
        let t_len = trace.tokens.len();
        let n_rows = trace.out_rows.len();
        debug_assert_eq!(d_hidden.len(), n_rows * h);
        let mut dy = d_hidden.to_vec();

        if let Some(dl) = d_logits {
            let head = self.output_head();
            let head_off = self.head_offset();
            for i in 0..n_rows {
                let hrow = &trace.hidden[i * h..(i + 1) * h];
                let lrow = &dl[i * v..(i + 1) * v];
                for d in 0..h {
                    let hw = &head[d * v..(d + 1) * v];
                    dy[i * h + d] += hw.iter().zip(lrow).map(|(a, b)| a * b).sum::<f64>();
                    let hd = hrow[d];
                    if hd != 0.0 {
                        let g = &mut grad[head_off + d * v..head_off + (d + 1) * v];
                        for (gv, &l) in g.iter_mut().zip(lrow) {
                            *gv += hd * l;
                        }
                    }
                }
            }
        }

        let all: Vec<usize> = (0..t_len).collect();
        for l in (0..self.n_layers()).rev() {
            let last = l + 1 == self.n_layers();
            let rows: &[usize] = if last { &trace.out_rows } else { &all };
            let mixed = &trace.mixed[l];
            let out_vals: &[f64] = if last { &trace.hidden } else { &trace.inputs[l + 1] };
            let w_off = self.layer_offset(l);
            let b_off = w_off + h * h;
            let w = self.mixing_weight(l);
            let mut dx = vec![0f64; t_len * h];
            let mut du_rows = vec![0f64; rows.len() * h];
            let mut dz = vec![0f64; h];
            for (i, &r) in rows.iter().enumerate() {
                let yrow: &[f64] = if last { &out_vals[i * h..(i + 1) * h] } else { &out_vals[r * h..(r + 1) * h] };
                let dyrow = &dy[i * h..(i + 1) * h];
                for o in 0..h {
                    dz[o] = dyrow[o] * (1.0 - yrow[o] * yrow[o]);
                }
                let urow = &mixed[i * h..(i + 1) * h];
                for o in 0..h {
                    let g = dz[o];
                    if g == 0.0 {
                        continue;
                    }
                    grad[b_off + o] += g;
                    let gw = &mut grad[w_off + o * h..w_off + (o + 1) * h];
                    for (gw, &u) in gw.iter_mut().zip(urow) {
                        *gw += g * u;
                    }
                }
                let du = &mut du_rows[i * h..(i + 1) * h];
                for o in 0..h {
                    let g = dz[o];
                    if g == 0.0 {
                        continue;
                    }
                    for (d, &wv) in du.iter_mut().zip(&w[o * h..(o + 1) * h]) {
                        *d += g * wv;
                    }
                }
                for (a, &b) in dx[r * h..(r + 1) * h].iter_mut().zip(du.iter()) {
                    *a += b;
                }
            }
            self.context_backward(&trace.mode, t_len, rows, &du_rows, &mut dx);
            dy = dx;
        }

        for (t, &tok) in trace.tokens.iter().enumerate() {
            let g = &mut grad[tok as usize * h..(tok as usize + 1) * h];
            for (a, &b) in g.iter_mut().zip(&dy[t * h..(t + 1) * h]) {
                *a += b;
            }
        }
    }

    fn context_backward(&self, mode: &ContextMode, t_len: usize, rows: &[usize], du: &[f64], dx: &mut [f64]) {
        let h = self.hidden_dim();
        match mode {
            ContextMode::Bidirectional => {
                let mut sum = vec![0f64; h];
                for row in du.chunks_exact(h) {
                    for (s, &v) in sum.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                for row in dx.chunks_exact_mut(h) {
                    for (a, &s) in row.iter_mut().zip(&sum) {
                        *a += s / t_len as f64;
                    }
                }
            }
            ContextMode::Causal => {
                // dx[s] += sum over rows r >= s of du[r] / (r + 1)
                let mut acc = vec![0f64; h];
                let mut idx = rows.len();
                for s in (0..t_len).rev() {
                    while idx > 0 && rows[idx - 1] >= s {
                        idx -= 1;
                        let r = rows[idx];
                        for (a, &v) in acc.iter_mut().zip(&du[idx * h..(idx + 1) * h]) {
                            *a += v / (r + 1) as f64;
                        }
                    }
                    for (a, &v) in dx[s * h..(s + 1) * h].iter_mut().zip(&acc) {
                        *a += v;
                    }
                }
            }
            ContextMode::Exclusive(set) => {
                for (i, &r) in rows.iter().enumerate() {
                    let g = &du[i * h..(i + 1) * h];
                    let in_set = set.contains(&r);
                    let n = if in_set { (t_len - set.len() + 1) as f64 } else { t_len as f64 };
                    for s in 0..t_len {
                        if in_set && s != r && set.contains(&s) {
                            continue;
                        }
                        for (a, &v) in dx[s * h..(s + 1) * h].iter_mut().zip(g) {
                            *a += v / n;
                        }
                    }
                }
            }
        }
    }
}

/// Hidden and logit rows at the mask positions, in `f64`.
#[derive(Debug, Clone)]
pub(crate) struct MaskOutputs {
    pub trace: ForwardTrace,
    pub logits: Vec<f64>,
}

impl MaskOutputs {
    pub fn into_set(self, params: &EncoderParams, source: Source) -> Result<RepresentationSet> {
        to_set(params, &self.trace.hidden, &self.logits, source)
    }
}

fn to_set(params: &EncoderParams, hidden: &[f64], logits: &[f64], source: Source) -> Result<RepresentationSet> {
    RepresentationSet::new(
        hidden.iter().map(|&x| x as f32).collect(),
        params.hidden_dim(),
        Some(Logits::Dense(logits.iter().map(|&x| x as f32).collect())),
        params.vocab_size(),
        source,
    )
}

pub(crate) fn forward_masks(params: &EncoderParams, prompt: &TokenizedPrompt, mode: ContextMode) -> Result<MaskOutputs> {
    if prompt.mask_positions.is_empty() {
        return Err(Error::InvalidArgument("prompt has no mask positions".into()));
    }
    let trace = params.forward(&prompt.token_ids, mode, &prompt.mask_positions)?;
    let logits = params.logits_for(&trace.hidden);
    Ok(MaskOutputs { trace, logits })
}

/// One bidirectional forward pass; returns the rows at the mask positions.
pub fn encode_parallel(params: &EncoderParams, prompt: &TokenizedPrompt) -> Result<RepresentationSet> {
    forward_masks(params, prompt, ContextMode::Bidirectional)?.into_set(params, Source::Parallel)
}

/// Like [`encode_parallel`] but with an explicit context mode.
pub fn encode_with_mode(params: &EncoderParams, prompt: &TokenizedPrompt, mode: ContextMode) -> Result<RepresentationSet> {
    forward_masks(params, prompt, mode)?.into_set(params, Source::Parallel)
}

fn argmax_non_mask(row: &[f64]) -> u32 {
    let mut best = usize::MAX;
    for (i, &x) in row.iter().enumerate() {
        if i as u32 == MASK_ID {
            continue;
        }
        if best == usize::MAX || x > row[best] {
            best = i;
        }
    }
    best as u32
}

/// When the sequential decoder stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequentialStop {
    /// After the step whose argmax is the closing quote, or at the cap.
    AtQuote,
    /// Always run exactly `cap` steps.
    AtCap,
}

/// Output of the sequential decoder.
#[derive(Debug, Clone)]
pub struct SequentialOutput {
    pub reps: RepresentationSet,
    /// Tokens appended after the prefix, one per step.
    pub generated: Vec<u32>,
    pub forward_passes: usize,
}

/// Autoregressive baseline: causal passes over the prefix, one new
/// representation per pass, the argmax token appended after each step.
pub fn encode_sequential(params: &EncoderParams, prompt: &TokenizedPrompt, cap: usize) -> Result<RepresentationSet> {
    Ok(encode_sequential_with(params, prompt.prefix(), cap, SequentialStop::AtQuote)?.reps)
}

pub fn encode_sequential_with(
    params: &EncoderParams,
    prefix: &[u32],
    cap: usize,
    stop: SequentialStop,
) -> Result<SequentialOutput> {
    if cap == 0 {
        return Err(Error::InvalidArgument("generation cap must be at least 1".into()));
    }
    let mut tokens = prefix.to_vec();
    let mut hidden = Vec::new();
    let mut logits = Vec::new();
    let mut generated = Vec::new();
    let mut passes = 0;
    for _ in 0..cap {
        let last = tokens.len().saturating_sub(1);
        let trace = params.forward(&tokens, ContextMode::Causal, &[last])?;
        passes += 1;
        let row_logits = params.logits_for(&trace.hidden);
        let next = argmax_non_mask(&row_logits);
        hidden.extend_from_slice(&trace.hidden);
        logits.extend_from_slice(&row_logits);
        generated.push(next);
        if stop == SequentialStop::AtQuote && next == QUOTE_ID {
            break;
        }
        tokens.push(next);
    }
    Ok(SequentialOutput {
        reps: to_set(params, &hidden, &logits, Source::Sequential)?,
        generated,
        forward_passes: passes,
    })
}

/// Number of mask positions revealed at each denoising step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenoiseSchedule {
    per_step_unmask: Vec<usize>,
}

impl DenoiseSchedule {
    /// Splits `k` positions over `steps` as evenly as possible, larger
    /// shares first.
    pub fn balanced(k: usize, steps: usize) -> Result<Self> {
        if steps == 0 || steps > k {
            return Err(Error::BadSchedule(format!("cannot split {k} positions over {steps} steps")));
        }
        let base = k / steps;
        let extra = k % steps;
        Ok(Self { per_step_unmask: (0..steps).map(|s| base + usize::from(s < extra)).collect() })
    }

    pub fn new(per_step_unmask: Vec<usize>) -> Result<Self> {
        if per_step_unmask.is_empty() || per_step_unmask.contains(&0) {
            return Err(Error::BadSchedule("every step must unmask at least one position".into()));
        }
        let (lo, hi) = (per_step_unmask.iter().min().unwrap(), per_step_unmask.iter().max().unwrap());
        if hi - lo > 1 {
            return Err(Error::BadSchedule(format!("unbalanced schedule {per_step_unmask:?}")));
        }
        Ok(Self { per_step_unmask })
    }

    pub fn steps(&self) -> usize {
        self.per_step_unmask.len()
    }

    pub fn total(&self) -> usize {
        self.per_step_unmask.iter().sum()
    }

    pub fn per_step_unmask(&self) -> &[usize] {
        &self.per_step_unmask
    }
}

fn max_softmax_prob(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|&x| (x - m).exp()).sum();
    1.0 / z
}

/// Result of multi-step decoding, with the step at which each position was
/// revealed.
#[derive(Debug, Clone)]
pub struct MultistepOutput {
    pub reps: RepresentationSet,
    /// For each mask position (in order), the 0-based step that revealed it.
    pub unmask_step: Vec<usize>,
    /// Final token sequence with every mask replaced.
    pub tokens: Vec<u32>,
}

/// Iterative denoising: each step runs one pass, reveals the most confident
/// remaining masks (ties to the lower position), and freezes their rows.
pub fn encode_multistep(params: &EncoderParams, prompt: &TokenizedPrompt, schedule: &DenoiseSchedule) -> Result<RepresentationSet> {
    Ok(encode_multistep_detailed(params, prompt, schedule)?.reps)
}

pub fn encode_multistep_detailed(
    params: &EncoderParams,
    prompt: &TokenizedPrompt,
    schedule: &DenoiseSchedule,
) -> Result<MultistepOutput> {
    let k = prompt.k();
    if schedule.total() != k {
        return Err(Error::BadSchedule(format!("schedule reveals {} positions but the prompt has {k}", schedule.total())));
    }
    let (h, v) = (params.hidden_dim(), params.vocab_size());
    let mut tokens = prompt.token_ids.clone();
    let mut buf_hidden = vec![0f64; k * h];
    let mut buf_logits = vec![0f64; k * v];
    let mut unmask_step = vec![usize::MAX; k];
    for (step, &count) in schedule.per_step_unmask().iter().enumerate() {
        let out = forward_masks(params, &TokenizedPrompt { token_ids: tokens.clone(), ..prompt.clone() }, ContextMode::Bidirectional)?;
        let mut remaining: Vec<(usize, f64)> = (0..k)
            .filter(|&i| unmask_step[i] == usize::MAX)
            .map(|i| (i, max_softmax_prob(&out.logits[i * v..(i + 1) * v])))
            .collect();
        remaining.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(i, _) in remaining.iter().take(count) {
            buf_hidden[i * h..(i + 1) * h].copy_from_slice(&out.trace.hidden[i * h..(i + 1) * h]);
            buf_logits[i * v..(i + 1) * v].copy_from_slice(&out.logits[i * v..(i + 1) * v]);
            unmask_step[i] = step;
            tokens[prompt.mask_positions[i]] = argmax_non_mask(&out.logits[i * v..(i + 1) * v]);
        }
    }
    let source = if schedule.steps() == 1 { Source::Parallel } else { Source::Multistep };
    Ok(MultistepOutput { reps: to_set(params, &buf_hidden, &buf_logits, source)?, unmask_step, tokens })
}
