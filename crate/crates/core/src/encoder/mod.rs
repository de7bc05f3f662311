//! Brain encoding model: a [T × C] epoch becomes K brain-embedding slots
//! of width E that are spliced into the frozen LM's prompt.
//!
//! Encoder stage: linear input projection to the hidden width, sinusoidal
//! positions, one post-LN self-attention block. Decoder stage: K learned
//! queries cross-attend over the encoded sequence, followed by a residual
//! LayerNorm and a linear projection to E.

pub mod align;

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{read_checkpoint, write_checkpoint, xavier_uniform, Checkpoint, Mat, ParamStore, Tape, Var};
use crate::rng::{derived_rng, streams};

pub use align::{apply_alignment, fit_alignment, AlignmentModel, ALIGNED_WIDTH};

pub const CHECKPOINT_KIND: &str = "brain_encoder";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub input_channels: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub encoder_layers: usize,
    pub dropout: f64,
    pub output_width: usize,
    pub brain_slots: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_channels: 388,
            hidden: 100,
            heads: 4,
            ff_dim: 200,
            encoder_layers: 1,
            dropout: 0.3,
            output_width: 64,
            brain_slots: 4,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.input_channels, self.hidden, self.heads, self.ff_dim, self.encoder_layers, self.output_width, self.brain_slots];
        if dims.contains(&0) {
            return Err(Error::config(format!("encoder dimensions must be positive: {self:?}")));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::config(format!("hidden {} is not divisible by {} heads", self.hidden, self.heads)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

const PER_LAYER: usize = 16;
const LAYER_NAMES: [&str; PER_LAYER] =
    ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g", "ln2_b"];
const DECODER_NAMES: [&str; 13] =
    ["queries", "cq", "cbq", "ck", "cbk", "cv", "cbv", "co", "cbo", "lnc_g", "lnc_b", "out_w", "out_b"];

#[derive(Debug, Clone, PartialEq)]
pub struct BrainEncoder {
    pub config: EncoderConfig,
    pub params: ParamStore,
}

/// Sinusoidal position table [T × d].
pub fn positional_encoding(t: usize, d: usize) -> Mat {
    Array2::from_shape_fn((t, d), |(p, i)| {
        let k = (i / 2) as f64 * 2.0;
        let angle = p as f64 / 10000f64.powf(k / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Dropout state for one forward pass.
pub struct Dropout<'r, R: Rng> {
    pub p: f64,
    pub rng: &'r mut R,
}

fn dropout<R: Rng>(tape: &mut Tape, x: Var, d: &mut Option<Dropout<'_, R>>) -> Var {
    let Some(d) = d else { return x };
    if d.p == 0.0 {
        return x;
    }
    let keep = 1.0 - d.p;
    let (r, c) = tape.value(x).dim();
    let mask = Array2::from_shape_fn((r, c), |_| if d.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 });
    tape.mul_const(x, mask)
}

/// Multi-head attention of `q` rows over `kv` rows (no masking).
fn attention(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize) -> Var {
    let h = tape.value(q).ncols();
    let dh = h / heads;
    let inv = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for hd in 0..heads {
        let (a, b) = (hd * dh, (hd + 1) * dh);
        let qh = tape.slice_cols(q, a, b);
        let kh = tape.slice_cols(k, a, b);
        let vh = tape.slice_cols(v, a, b);
        let s = tape.matmul_t(qh, kh);
        let s = tape.scale(s, inv);
        let p = tape.softmax(s, false);
        outs.push(tape.matmul(p, vh));
    }
    if outs.len() == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)
    }
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}

impl BrainEncoder {
    /// Xavier-uniform weights, zero biases, unit LayerNorm gains.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = derived_rng(seed, &[streams::ENCODER_INIT]);
        let (c, h, f, e, k) = (config.input_channels, config.hidden, config.ff_dim, config.output_width, config.brain_slots);
        let mut p = ParamStore::new();
        p.add("in_w", xavier_uniform(&mut rng, c, h));
        p.add("in_b", Array2::zeros((1, h)));
        for l in 0..config.encoder_layers {
            for name in LAYER_NAMES {
                let m = match name {
                    "w1" => xavier_uniform(&mut rng, h, f),
                    "b1" => Array2::zeros((1, f)),
                    "w2" => xavier_uniform(&mut rng, f, h),
                    "ln1_g" | "ln2_g" => Array2::ones((1, h)),
                    n if n.starts_with('w') => xavier_uniform(&mut rng, h, h),
                    _ => Array2::zeros((1, h)),
                };
                p.add(format!("layer{l}.{name}"), m);
            }
        }
        for name in DECODER_NAMES {
            let m = match name {
                "queries" => xavier_uniform(&mut rng, k, h),
                "cq" | "ck" | "cv" | "co" => xavier_uniform(&mut rng, h, h),
                "lnc_g" => Array2::ones((1, h)),
                "out_w" => xavier_uniform(&mut rng, h, e),
                "out_b" => Array2::zeros((1, e)),
                _ => Array2::zeros((1, h)),
            };
            p.add(format!("dec.{name}"), m);
        }
        Ok(BrainEncoder { config, params: p })
    }

    /// Encodes several trials in one tape. `vars` come from
    /// `self.params.bind`; `drop` is `None` in eval mode.
    pub fn forward<R: Rng>(&self, tape: &mut Tape, vars: &[Var], trials: &[Var], mut drop: Option<Dropout<'_, R>>) -> Result<Vec<Var>> {
        let cfg = &self.config;
        if trials.is_empty() {
            return Err(Error::data("no trials to encode"));
        }
        let mut lens = Vec::with_capacity(trials.len());
        for t in trials {
            let (n, c) = tape.value(*t).dim();
            if c != cfg.input_channels {
                return Err(Error::data(format!("trial has {c} channels but the encoder expects {}", cfg.input_channels)));
            }
            if n == 0 {
                return Err(Error::data("trial has no samples"));
            }
            lens.push(n);
        }
        let x = if trials.len() == 1 { trials[0] } else { tape.concat_rows(trials) };
        let mut x = linear(tape, x, vars[0], vars[1]);
        let pe: Vec<Mat> = lens.iter().map(|&n| positional_encoding(n, cfg.hidden)).collect();
        let pe = ndarray::concatenate(ndarray::Axis(0), &pe.iter().map(|m| m.view()).collect::<Vec<_>>()).expect("same width");
        let pe = tape.constant(pe);
        x = tape.add(x, pe);
        x = dropout(tape, x, &mut drop);
        let split = |tape: &mut Tape, v: Var| -> Vec<Var> {
            if lens.len() == 1 {
                return vec![v];
            }
            let mut off = 0;
            lens.iter()
                .map(|&n| {
                    off += n;
                    tape.slice_rows(v, off - n, off)
                })
                .collect()
        };
        for l in 0..cfg.encoder_layers {
            let p = |k: usize| vars[2 + l * PER_LAYER + k];
            let q = linear(tape, x, p(0), p(1));
            let k = linear(tape, x, p(2), p(3));
            let v = linear(tape, x, p(4), p(5));
            let (qs, ks, vs) = (split(tape, q), split(tape, k), split(tape, v));
            let outs: Vec<Var> = (0..lens.len()).map(|i| attention(tape, qs[i], ks[i], vs[i], cfg.heads)).collect();
            let a = if outs.len() == 1 { outs[0] } else { tape.concat_rows(&outs) };
            let a = linear(tape, a, p(6), p(7));
            let a = dropout(tape, a, &mut drop);
            let r = tape.add(x, a);
            x = tape.layer_norm(r, p(8), p(9));
            let f = linear(tape, x, p(10), p(11));
            let f = tape.gelu(f);
            let f = linear(tape, f, p(12), p(13));
            let f = dropout(tape, f, &mut drop);
            let r = tape.add(x, f);
            x = tape.layer_norm(r, p(14), p(15));
        }
        let d = |k: usize| vars[2 + cfg.encoder_layers * PER_LAYER + k];
        let k = linear(tape, x, d(3), d(4));
        let v = linear(tape, x, d(5), d(6));
        let q = linear(tape, d(0), d(1), d(2));
        let (ks, vs) = (split(tape, k), split(tape, v));
        let mut out = Vec::with_capacity(lens.len());
        for i in 0..lens.len() {
            let c = attention(tape, q, ks[i], vs[i], cfg.heads);
            let c = linear(tape, c, d(7), d(8));
            let c = dropout(tape, c, &mut drop);
            let r = tape.add(d(0), c);
            let y = tape.layer_norm(r, d(9), d(10));
            out.push(linear(tape, y, d(11), d(12)));
        }
        Ok(out)
    }

    /// [K × E] slots for one trial. Eval mode is deterministic; train mode
    /// applies dropout drawn from `seed`.
    pub fn encode(&self, trial: &Mat, mode: Mode, seed: u64) -> Result<Mat> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let x = tape.constant(trial.clone());
        let mut rng = derived_rng(seed, &[streams::TRAIN, 99]);
        let drop = (mode == Mode::Train).then(|| Dropout { p: self.config.dropout, rng: &mut rng });
        let y = self.forward(&mut tape, &vars, &[x], drop)?[0];
        Ok(tape.value(y).clone())
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        Checkpoint {
            kind: CHECKPOINT_KIND.into(),
            meta: serde_json::json!({ "config": self.config, "extra": meta }),
            params: self.params.clone(),
        }
    }

    pub fn save(&self, path: &Path, meta: serde_json::Value) -> Result<()> {
        write_checkpoint(path, &self.to_checkpoint(meta))
    }

    /// Encoder plus the extra metadata stored with it.
    pub fn from_checkpoint(ck: Checkpoint) -> Result<(Self, serde_json::Value)> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::data(format!("expected a {CHECKPOINT_KIND} checkpoint, got {}", ck.kind)));
        }
        let config: EncoderConfig = serde_json::from_value(ck.meta["config"].clone())
            .map_err(|e| Error::data(format!("encoder checkpoint config: {e}")))?;
        let fresh = BrainEncoder::init(config, 0)?;
        if fresh.params.names != ck.params.names
            || fresh.params.values.iter().zip(&ck.params.values).any(|(a, b)| a.dim() != b.dim())
        {
            return Err(Error::data("encoder checkpoint tensors do not match its config"));
        }
        Ok((BrainEncoder { config, params: ck.params }, ck.meta["extra"].clone()))
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        Self::from_checkpoint(read_checkpoint(path)?)
    }
}
