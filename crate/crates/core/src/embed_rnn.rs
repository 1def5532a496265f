//! Autoregressive GRU/LSTM embedders.
//!
//! Each model reads the hourly feature vector (plus the encoded statics,
//! repeated at every step) and predicts the next hour's features through an
//! affine readout. Training minimizes MSE with AdamW and exact full-sequence
//! BPTT; the embedding of a stay is the hidden state after its last hour.
//!
//! In per-feature mode the model is a bank of independent small cells, one
//! per feature, each seeing its own feature plus the statics and predicting
//! only that feature. The embedding concatenates their final hidden states.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Split, SplitAssignment};
use crate::embedding::{Embedder, EmbeddingMatrix};
use crate::par::map_indexed;
use crate::preprocess::{PreparedCohort, PreparedStay};
use crate::rng::stream;

#[derive(Debug, Error, PartialEq)]
pub enum RnnError {
    #[error("non-finite activation in stay `{0}`")]
    NonFiniteActivation(String),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    DivergedLoss { epoch: usize, loss: f64 },
    #[error("training split is empty")]
    EmptyTrainSplit,
    #[error("invalid RNN config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }

    pub fn embedder(self) -> Embedder {
        match self {
            CellKind::Gru => Embedder::Gru,
            CellKind::Lstm => Embedder::Lstm,
        }
    }
}

/// Which prediction cells enter the loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossWeighting {
    /// Every (hour, feature) target, imputed or not.
    #[default]
    None,
    /// Only targets that were observed before imputation.
    ObservedOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RnnConfig {
    pub cell: CellKind,
    pub hidden_size: usize,
    pub per_feature: bool,
    pub per_feature_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub grad_clip_norm: f64,
    pub loss_weighting: LossWeighting,
    pub seed: u64,
}

impl Default for RnnConfig {
    fn default() -> Self {
        Self {
            cell: CellKind::Gru,
            hidden_size: 64,
            per_feature: false,
            per_feature_hidden: 8,
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            betas: [0.9, 0.999],
            eps: 1e-8,
            grad_clip_norm: 1.0,
            loss_weighting: LossWeighting::None,
            seed: 0,
        }
    }
}

impl RnnConfig {
    pub fn validate(&self) -> Result<(), RnnError> {
        let bad = |m: &str| Err(RnnError::InvalidConfig(m.to_string()));
        if self.hidden_size == 0 || self.per_feature_hidden == 0 {
            return bad("hidden sizes must be >= 1");
        }
        if !(self.learning_rate >= 0.0) || self.batch_size == 0 {
            return bad("learning_rate must be >= 0 and batch_size >= 1");
        }
        if !(0.0..1.0).contains(&self.betas[0]) || !(0.0..1.0).contains(&self.betas[1]) {
            return bad("betas must be in [0, 1)");
        }
        Ok(())
    }
}

/// One recurrent cell with its readout head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    /// Time-series feature indices fed to the cell (statics are appended).
    pub inputs: Vec<usize>,
    /// Feature indices predicted at the next hour.
    pub targets: Vec<usize>,
    pub hidden: usize,
    /// Start of this channel's parameters in the model's flat vector.
    pub offset: usize,
}

/// Offsets of each tensor inside one channel's parameter block.
#[derive(Debug, Clone, Copy)]
struct Layout {
    g: usize,
    h: usize,
    i: usize,
    o: usize,
    w_x: usize,
    w_h: usize,
    b_x: usize,
    b_h: usize,
    w_out: usize,
    b_out: usize,
    len: usize,
}

impl Layout {
    fn new(cell: CellKind, hidden: usize, input: usize, output: usize) -> Self {
        let g = cell.gates();
        let gh = g * hidden;
        let w_x = 0;
        let w_h = w_x + gh * input;
        let b_x = w_h + gh * hidden;
        let b_h = b_x + gh;
        let w_out = b_h + gh;
        let b_out = w_out + output * hidden;
        Self { g, h: hidden, i: input, o: output, w_x, w_h, b_x, b_h, w_out, b_out, len: b_out + output }
    }

    fn tensors(&self) -> [(&'static str, usize, [usize; 2]); 6] {
        let gh = self.g * self.h;
        [
            ("w_x", self.w_x, [gh, self.i]),
            ("w_h", self.w_h, [gh, self.h]),
            ("b_x", self.b_x, [gh, 1]),
            ("b_h", self.b_h, [gh, 1]),
            ("w_out", self.w_out, [self.o, self.h]),
            ("b_out", self.b_out, [self.o, 1]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnModel {
    pub cell: CellKind,
    pub n_features: usize,
    pub n_statics: usize,
    pub channels: Vec<ChannelSpec>,
    pub params: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out[r] += Σ_k w[r*cols + k] * x[k]`
fn matvec_add(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out[k] += Σ_r w[r*cols + k] * d[r]`
fn matvec_t_add(w: &[f64], cols: usize, d: &[f64], out: &mut [f64]) {
    for (r, &dr) in d.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * dr;
        }
    }
}

/// `g[r*cols + k] += d[r] * x[k]`
fn outer_add(g: &mut [f64], cols: usize, d: &[f64], x: &[f64]) {
    for (r, &dr) in d.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        let row = &mut g[r * cols..(r + 1) * cols];
        for (gv, xv) in row.iter_mut().zip(x) {
            *gv += dr * xv;
        }
    }
}

/// Activations of one channel over one stay, kept for the backward pass.
struct Trace {
    xs: Vec<Vec<f64>>,
    /// `hours + 1` states, `hs[0] = 0`.
    hs: Vec<Vec<f64>>,
    /// LSTM cell states, `cs[0] = 0`; empty for GRU.
    cs: Vec<Vec<f64>>,
    /// Gate activations per step (GRU r,z,n; LSTM i,f,g,o).
    acts: Vec<Vec<f64>>,
    /// GRU: W_hn h + b_hn; LSTM: tanh(c).
    aux: Vec<Vec<f64>>,
    /// Readout of `hs[t + 1]` for `t < hours - 1`.
    preds: Vec<Vec<f64>>,
}

/// Hidden states and next-hour predictions for one stay.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `hours` rows, channel states concatenated.
    pub hidden: Vec<Vec<f64>>,
    /// `hours - 1` rows of `n_features` predictions in feature order.
    pub predictions: Vec<Vec<f64>>,
}

impl RnnModel {
    /// Weights uniform in ±1/√H, biases zero.
    pub fn init(config: &RnnConfig, n_features: usize, n_statics: usize) -> Result<Self, RnnError> {
        config.validate()?;
        let specs: Vec<(Vec<usize>, Vec<usize>, usize)> = if config.per_feature {
            (0..n_features).map(|j| (vec![j], vec![j], config.per_feature_hidden)).collect()
        } else {
            vec![((0..n_features).collect(), (0..n_features).collect(), config.hidden_size)]
        };
        let mut channels = Vec::with_capacity(specs.len());
        let mut offset = 0;
        for (inputs, targets, hidden) in specs {
            let lay = Layout::new(config.cell, hidden, inputs.len() + n_statics, targets.len());
            channels.push(ChannelSpec { inputs, targets, hidden, offset });
            offset += lay.len;
        }
        let mut model = Self { cell: config.cell, n_features, n_statics, channels, params: vec![0.0; offset] };
        let mut rng = stream(config.seed, "rnn-init", 0);
        for c in 0..model.channels.len() {
            let lay = model.layout(c);
            let base = model.channels[c].offset;
            let bound = 1.0 / (lay.h as f64).sqrt();
            for (_, start, [rows, cols]) in lay.tensors() {
                if cols == 1 {
                    continue; // bias
                }
                for p in &mut model.params[base + start..base + start + rows * cols] {
                    *p = rng.random_range(-bound..=bound);
                }
            }
        }
        Ok(model)
    }

    fn layout(&self, c: usize) -> Layout {
        let ch = &self.channels[c];
        Layout::new(self.cell, ch.hidden, ch.inputs.len() + self.n_statics, ch.targets.len())
    }

    pub fn embedding_dim(&self) -> usize {
        self.channels.iter().map(|c| c.hidden).sum()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn channel_params(&self, c: usize) -> &[f64] {
        let start = self.channels[c].offset;
        &self.params[start..start + self.layout(c).len]
    }

    fn run_channel(&self, c: usize, stay: &PreparedStay) -> Trace {
        let lay = self.layout(c);
        let p = self.channel_params(c);
        let ch = &self.channels[c];
        let f = self.n_features;
        let (h, g) = (lay.h, lay.g);
        let mut tr = Trace {
            xs: Vec::with_capacity(stay.hours),
            hs: vec![vec![0.0; h]],
            cs: if self.cell == CellKind::Lstm { vec![vec![0.0; h]] } else { Vec::new() },
            acts: Vec::with_capacity(stay.hours),
            aux: Vec::with_capacity(stay.hours),
            preds: Vec::with_capacity(stay.hours.saturating_sub(1)),
        };
        for t in 0..stay.hours {
            let mut x: Vec<f64> = ch.inputs.iter().map(|&j| stay.values[t * f + j]).collect();
            x.extend_from_slice(&stay.statics);
            let h_prev = &tr.hs[t];
            let mut ax = p[lay.b_x..lay.b_x + g * h].to_vec();
            matvec_add(&p[lay.w_x..lay.w_h], lay.i, &x, &mut ax);
            let mut ah = p[lay.b_h..lay.b_h + g * h].to_vec();
            matvec_add(&p[lay.w_h..lay.b_x], h, h_prev, &mut ah);
            let mut acts = vec![0.0; g * h];
            let mut h_new = vec![0.0; h];
            let aux = match self.cell {
                CellKind::Gru => {
                    for k in 0..h {
                        let r = sigmoid(ax[k] + ah[k]);
                        let z = sigmoid(ax[h + k] + ah[h + k]);
                        let n = (ax[2 * h + k] + r * ah[2 * h + k]).tanh();
                        acts[k] = r;
                        acts[h + k] = z;
                        acts[2 * h + k] = n;
                        h_new[k] = (1.0 - z) * n + z * h_prev[k];
                    }
                    ah[2 * h..].to_vec()
                }
                CellKind::Lstm => {
                    let c_prev = &tr.cs[t];
                    let mut c_new = vec![0.0; h];
                    let mut tc = vec![0.0; h];
                    for k in 0..h {
                        let i = sigmoid(ax[k] + ah[k]);
                        let fg = sigmoid(ax[h + k] + ah[h + k]);
                        let gg = (ax[2 * h + k] + ah[2 * h + k]).tanh();
                        let o = sigmoid(ax[3 * h + k] + ah[3 * h + k]);
                        acts[k] = i;
                        acts[h + k] = fg;
                        acts[2 * h + k] = gg;
                        acts[3 * h + k] = o;
                        c_new[k] = fg * c_prev[k] + i * gg;
                        tc[k] = c_new[k].tanh();
                        h_new[k] = o * tc[k];
                    }
                    tr.cs.push(c_new);
                    tc
                }
            };
            if t + 1 < stay.hours {
                let mut y = p[lay.b_out..lay.b_out + lay.o].to_vec();
                matvec_add(&p[lay.w_out..lay.b_out], h, &h_new, &mut y);
                tr.preds.push(y);
            }
            tr.xs.push(x);
            tr.acts.push(acts);
            tr.aux.push(aux);
            tr.hs.push(h_new);
        }
        tr
    }

    /// Accumulates this channel's parameter gradients into `grad` given the
    /// loss gradients w.r.t. its predictions.
    fn backprop_channel(&self, c: usize, tr: &Trace, dpreds: &[Vec<f64>], grad: &mut [f64]) {
        let lay = self.layout(c);
        let p = self.channel_params(c);
        let (h, g) = (lay.h, lay.g);
        let hours = tr.xs.len();
        let gw = &mut grad[..lay.len];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut da_x = vec![0.0; g * h];
        let mut da_h = vec![0.0; g * h];
        for t in (0..hours).rev() {
            let mut dh = std::mem::take(&mut dh_next);
            if t + 1 < hours {
                let dy = &dpreds[t];
                outer_add(&mut gw[lay.w_out..lay.b_out], h, dy, &tr.hs[t + 1]);
                for (gb, d) in gw[lay.b_out..lay.b_out + lay.o].iter_mut().zip(dy) {
                    *gb += d;
                }
                matvec_t_add(&p[lay.w_out..lay.b_out], h, dy, &mut dh);
            }
            let h_prev = &tr.hs[t];
            let acts = &tr.acts[t];
            let aux = &tr.aux[t];
            let mut dh_prev = vec![0.0; h];
            match self.cell {
                CellKind::Gru => {
                    for k in 0..h {
                        let (r, z, n) = (acts[k], acts[h + k], acts[2 * h + k]);
                        let dn = dh[k] * (1.0 - z);
                        let dz = dh[k] * (h_prev[k] - n);
                        dh_prev[k] = dh[k] * z;
                        let da_n = dn * (1.0 - n * n);
                        let dr = da_n * aux[k];
                        let da_r = dr * r * (1.0 - r);
                        let da_z = dz * z * (1.0 - z);
                        da_x[k] = da_r;
                        da_x[h + k] = da_z;
                        da_x[2 * h + k] = da_n;
                        da_h[k] = da_r;
                        da_h[h + k] = da_z;
                        da_h[2 * h + k] = da_n * r;
                    }
                }
                CellKind::Lstm => {
                    let c_prev = &tr.cs[t];
                    for k in 0..h {
                        let (i, fg, gg, o) = (acts[k], acts[h + k], acts[2 * h + k], acts[3 * h + k]);
                        let tc = aux[k];
                        let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
                        let d_o = dh[k] * tc;
                        dc_next[k] = dc * fg;
                        da_x[k] = dc * gg * i * (1.0 - i);
                        da_x[h + k] = dc * c_prev[k] * fg * (1.0 - fg);
                        da_x[2 * h + k] = dc * i * (1.0 - gg * gg);
                        da_x[3 * h + k] = d_o * o * (1.0 - o);
                    }
                    da_h.copy_from_slice(&da_x);
                }
            }
            outer_add(&mut gw[lay.w_x..lay.w_h], lay.i, &da_x, &tr.xs[t]);
            outer_add(&mut gw[lay.w_h..lay.b_x], h, &da_h, h_prev);
            for (gb, d) in gw[lay.b_x..lay.b_x + g * h].iter_mut().zip(&da_x) {
                *gb += d;
            }
            for (gb, d) in gw[lay.b_h..lay.b_h + g * h].iter_mut().zip(&da_h) {
                *gb += d;
            }
            matvec_t_add(&p[lay.w_h..lay.b_x], h, &da_h, &mut dh_prev);
            dh_next = dh_prev;
        }
    }

    /// Hidden states for every hour and next-hour predictions. `h_0` (and
    /// `c_0`) start at zero.
    pub fn forward(&self, stay: &PreparedStay) -> Result<ForwardOutput, RnnError> {
        let traces: Vec<Trace> = (0..self.channels.len()).map(|c| self.run_channel(c, stay)).collect();
        let hidden: Vec<Vec<f64>> = (1..=stay.hours)
            .map(|t| traces.iter().flat_map(|tr| tr.hs[t].iter().copied()).collect())
            .collect();
        let mut predictions = vec![vec![0.0; self.n_features]; stay.hours.saturating_sub(1)];
        for (ch, tr) in self.channels.iter().zip(&traces) {
            for (row, pred) in predictions.iter_mut().zip(&tr.preds) {
                for (&j, &v) in ch.targets.iter().zip(pred) {
                    row[j] = v;
                }
            }
        }
        if hidden.iter().chain(&predictions).flatten().any(|v| !v.is_finite()) {
            return Err(RnnError::NonFiniteActivation(stay.stay_id.clone()));
        }
        Ok(ForwardOutput { hidden, predictions })
    }

    /// Final hidden state (all channels concatenated).
    pub fn embed_stay(&self, stay: &PreparedStay) -> Result<Vec<f64>, RnnError> {
        let mut out = Vec::with_capacity(self.embedding_dim());
        for c in 0..self.channels.len() {
            let tr = self.run_channel(c, stay);
            out.extend_from_slice(tr.hs.last().expect("h_0 present"));
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(RnnError::NonFiniteActivation(stay.stay_id.clone()));
        }
        Ok(out)
    }

    fn target_weight(stay: &PreparedStay, f: usize, t: usize, j: usize, weighting: LossWeighting) -> f64 {
        match weighting {
            LossWeighting::None => 1.0,
            LossWeighting::ObservedOnly => f64::from(u8::from(stay.observed[(t + 1) * f + j])),
        }
    }

    fn total_weight(&self, stay: &PreparedStay, weighting: LossWeighting) -> f64 {
        let f = self.n_features;
        let mut w = 0.0;
        for t in 0..stay.hours.saturating_sub(1) {
            for ch in &self.channels {
                for &j in &ch.targets {
                    w += Self::target_weight(stay, f, t, j, weighting);
                }
            }
        }
        w
    }

    /// Next-hour MSE of one stay, or `None` when it has no prediction target
    /// (a single hour, or no observed target under `ObservedOnly`).
    pub fn stay_loss(&self, stay: &PreparedStay, weighting: LossWeighting) -> Option<f64> {
        let total = self.total_weight(stay, weighting);
        if total == 0.0 {
            return None;
        }
        let f = self.n_features;
        let mut sum = 0.0;
        for c in 0..self.channels.len() {
            let tr = self.run_channel(c, stay);
            for (t, pred) in tr.preds.iter().enumerate() {
                for (&j, &y) in self.channels[c].targets.iter().zip(pred) {
                    let w = Self::target_weight(stay, f, t, j, weighting);
                    sum += w * (y - stay.values[(t + 1) * f + j]).powi(2);
                }
            }
        }
        Some(sum / total)
    }

    /// Loss and its exact gradient w.r.t. every parameter; `None` when the
    /// stay contributes no target.
    pub fn stay_loss_grad(
        &self,
        stay: &PreparedStay,
        weighting: LossWeighting,
    ) -> Option<(f64, Vec<f64>)> {
        self.stay_loss_grad_scaled(stay, weighting, 1.0)
    }

    /// As [`Self::stay_loss_grad`] with the residual weights multiplied by
    /// `scale`.
    pub fn stay_loss_grad_scaled(
        &self,
        stay: &PreparedStay,
        weighting: LossWeighting,
        scale: f64,
    ) -> Option<(f64, Vec<f64>)> {
        let total = self.total_weight(stay, weighting);
        if total == 0.0 {
            return None;
        }
        let f = self.n_features;
        let mut grad = vec![0.0; self.params.len()];
        let mut sum = 0.0;
        for c in 0..self.channels.len() {
            let tr = self.run_channel(c, stay);
            let dpreds: Vec<Vec<f64>> = tr
                .preds
                .iter()
                .enumerate()
                .map(|(t, pred)| {
                    self.channels[c]
                        .targets
                        .iter()
                        .zip(pred)
                        .map(|(&j, &y)| {
                            let w = scale * Self::target_weight(stay, f, t, j, weighting);
                            let r = y - stay.values[(t + 1) * f + j];
                            sum += w * r * r;
                            2.0 * w * r / total
                        })
                        .collect()
                })
                .collect();
            let off = self.channels[c].offset;
            self.backprop_channel(c, &tr, &dpreds, &mut grad[off..]);
        }
        Some((sum / total, grad))
    }

    /// Mean loss and mean gradient over the contributing stays of a batch.
    /// Per-stay work may run in parallel; the reduction is in stay order.
    pub fn batch_gradient(
        &self,
        stays: &[&PreparedStay],
        weighting: LossWeighting,
    ) -> Result<Option<(f64, Vec<f64>, usize)>, RnnError> {
        let parts = map_indexed(stays.len(), |i| self.stay_loss_grad(stays[i], weighting));
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let mut n = 0usize;
        for (l, g) in parts.into_iter().flatten() {
            loss += l;
            n += 1;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        if n == 0 {
            return Ok(None);
        }
        let inv = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(RnnError::NonFiniteGradient);
        }
        Ok(Some((loss, grad, n)))
    }

    /// Serializes every tensor with its shape.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        for (c, ch) in self.channels.iter().enumerate() {
            let lay = self.layout(c);
            for (name, start, shape) in lay.tensors() {
                let s = ch.offset + start;
                tensors.push(Tensor {
                    name: format!("channel{c}.{name}"),
                    shape: shape.to_vec(),
                    data: self.params[s..s + shape[0] * shape[1]].to_vec(),
                });
            }
        }
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            cell: self.cell,
            n_features: self.n_features,
            n_statics: self.n_statics,
            channels: self
                .channels
                .iter()
                .map(|c| ChannelShape { inputs: c.inputs.clone(), targets: c.targets.clone(), hidden: c.hidden })
                .collect(),
            tensors,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, RnnError> {
        let bad = |m: String| Err(RnnError::Checkpoint(m));
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return bad(format!("unsupported checkpoint {} v{}", ck.format, ck.version));
        }
        let mut model = RnnModel {
            cell: ck.cell,
            n_features: ck.n_features,
            n_statics: ck.n_statics,
            channels: Vec::new(),
            params: Vec::new(),
        };
        let mut offset = 0;
        for c in &ck.channels {
            if c.inputs.iter().chain(&c.targets).any(|&j| j >= ck.n_features) {
                return bad("channel feature index out of range".into());
            }
            let lay = Layout::new(ck.cell, c.hidden, c.inputs.len() + ck.n_statics, c.targets.len());
            model.channels.push(ChannelSpec {
                inputs: c.inputs.clone(),
                targets: c.targets.clone(),
                hidden: c.hidden,
                offset,
            });
            offset += lay.len;
        }
        model.params = vec![0.0; offset];
        let mut tensors = ck.tensors.iter();
        for c in 0..model.channels.len() {
            let lay = model.layout(c);
            for (name, start, shape) in lay.tensors() {
                let Some(t) = tensors.next() else {
                    return bad("missing tensors".into());
                };
                let expected = format!("channel{c}.{name}");
                if t.name != expected || t.shape != shape || t.data.len() != shape[0] * shape[1] {
                    return bad(format!("tensor `{}` does not match expected `{expected}` {shape:?}", t.name));
                }
                let s = model.channels[c].offset + start;
                model.params[s..s + t.data.len()].copy_from_slice(&t.data);
            }
        }
        if tensors.next().is_some() {
            return bad("unexpected extra tensors".into());
        }
        if model.params.iter().any(|p| !p.is_finite()) {
            return bad("non-finite parameter".into());
        }
        Ok(model)
    }
}

pub const CHECKPOINT_FORMAT: &str = "tsb-rnn";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelShape {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub cell: CellKind,
    pub n_features: usize,
    pub n_statics: usize,
    pub channels: Vec<ChannelShape>,
    pub tensors: Vec<Tensor>,
}

/// Mean of squared residuals over all cells, optionally weighted per cell
/// (the mean then divides by the weight sum).
pub fn loss_mse(predictions: &[Vec<f64>], targets: &[Vec<f64>], weights: Option<&[Vec<f64>]>) -> f64 {
    let mut sum = 0.0;
    let mut total = 0.0;
    for (t, (p, y)) in predictions.iter().zip(targets).enumerate() {
        for (j, (a, b)) in p.iter().zip(y).enumerate() {
            let w = weights.map_or(1.0, |w| w[t][j]);
            sum += w * (a - b).powi(2);
            total += w;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        sum / total
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamW {
    pub fn new(n: usize, learning_rate: f64, weight_decay: f64, betas: [f64; 2], eps: f64) -> Self {
        Self { learning_rate, weight_decay, beta1: betas[0], beta2: betas[1], eps, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    pub fn from_config(n: usize, config: &RnnConfig) -> Self {
        Self::new(n, config.learning_rate, config.weight_decay, config.betas, config.eps)
    }

    /// θ ← θ(1 − lr·wd), then θ ← θ − lr·m̂/(√v̂ + ε).
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let decay = 1.0 - self.learning_rate * self.weight_decay;
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p *= decay;
            *p -= self.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

pub fn loss_curve_csv(curve: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,train_mse,val_mse\n");
    for e in curve {
        let val = e.val_mse.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", e.epoch, e.train_mse, val));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RnnModel,
    pub curve: Vec<EpochLoss>,
}

fn indices_of(cohort: &PreparedCohort, split: &SplitAssignment, which: Split) -> Vec<usize> {
    let mut idx: Vec<usize> =
        (0..cohort.stays.len()).filter(|&i| split.get(&cohort.stays[i].stay_id) == Some(which)).collect();
    // canonical order so training does not depend on input file order
    idx.sort_by(|&a, &b| cohort.stays[a].stay_id.cmp(&cohort.stays[b].stay_id));
    idx
}

/// Mean per-stay MSE over `indices` (stays without targets excluded).
pub fn mean_loss(model: &RnnModel, cohort: &PreparedCohort, indices: &[usize], weighting: LossWeighting) -> Option<f64> {
    let losses = map_indexed(indices.len(), |k| model.stay_loss(&cohort.stays[indices[k]], weighting));
    let (sum, n) = losses.into_iter().flatten().fold((0.0, 0usize), |(s, n), l| (s + l, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Minibatch AdamW training with a seed-determined shuffle per epoch.
///
/// `train_mse` is the stay-weighted mean of the batch losses seen during the
/// epoch; `val_mse` is evaluated after the epoch's last update.
pub fn train(cohort: &PreparedCohort, split: &SplitAssignment, config: &RnnConfig) -> Result<TrainOutcome, RnnError> {
    train_with(cohort, split, config, |_| {})
}

/// [`train`] with a per-epoch callback (progress reporting).
pub fn train_with(
    cohort: &PreparedCohort,
    split: &SplitAssignment,
    config: &RnnConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome, RnnError> {
    let train_idx = indices_of(cohort, split, Split::Train);
    if train_idx.is_empty() {
        return Err(RnnError::EmptyTrainSplit);
    }
    let val_idx = indices_of(cohort, split, Split::Val);
    let mut model = RnnModel::init(config, cohort.n_features(), cohort.n_statics())?;
    let mut opt = AdamW::from_config(model.n_params(), config);
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut stream(config.seed, "rnn-shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(config.batch_size) {
            let stays: Vec<&PreparedStay> = batch.iter().map(|&i| &cohort.stays[i]).collect();
            let Some((loss, mut grad, n)) = model.batch_gradient(&stays, config.loss_weighting)? else {
                continue;
            };
            loss_sum += loss;
            seen += n;
            clip_global_norm(&mut grad, config.grad_clip_norm);
            opt.step(&mut model.params, &grad);
        }
        let train_mse = if seen > 0 { loss_sum / seen as f64 } else { 0.0 };
        let val_mse = mean_loss(&model, cohort, &val_idx, config.loss_weighting);
        for loss in std::iter::once(train_mse).chain(val_mse) {
            if !loss.is_finite() {
                return Err(RnnError::DivergedLoss { epoch, loss });
            }
        }
        let e = EpochLoss { epoch, train_mse, val_mse };
        on_epoch(&e);
        curve.push(e);
    }
    Ok(TrainOutcome { model, curve })
}

/// Last-hour hidden state of every stay, tagged with the cell type.
pub fn embed_rnn(model: &RnnModel, cohort: &PreparedCohort) -> Result<EmbeddingMatrix, crate::Error> {
    let rows = map_indexed(cohort.stays.len(), |i| model.embed_stay(&cohort.stays[i]));
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let ids = cohort.stays.iter().map(|s| s.stay_id.clone()).collect();
    Ok(EmbeddingMatrix::from_rows(ids, rows, model.cell.embedder())?)
}
