use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::attention::{entity_attention, AttentionSpec, ForwardStats};
use super::config::{AttentionMode, EncoderConfig};
use super::tokenizer::tokenize;
use crate::entity::EntitySet;
use crate::error::{Error, Result};
use crate::numeric::{ParamId, ParamStore, Tape, Tensor, Var};

const NORM_EPS: f64 = 1e-6;
const BIAS_INIT_STD: f64 = 0.1;

/// Name of the learnable neutral-edge similarity in the parameter store.
pub const NEUTRAL_PARAM: &str = "neutral_similarity";

#[derive(Clone, Debug)]
struct LayerParams {
    attn_norm: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    rel_bias: ParamId,
    ffn_norm: ParamId,
    w1: ParamId,
    w2: ParamId,
}

/// Token ids of one set, concatenated, with the row range of every entity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedSet {
    pub tokens: Vec<usize>,
    pub segments: Vec<Range<usize>>,
}

impl TokenizedSet {
    pub fn lengths(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.len()).collect()
    }
}

/// Pre-norm Transformer encoder producing one embedding per entity.
#[derive(Clone, Debug)]
pub struct SetEncoder {
    config: EncoderConfig,
    params: ParamStore,
    embed: ParamId,
    layers: Vec<LayerParams>,
    final_norm: ParamId,
    neutral: ParamId,
}

impl SetEncoder {
    /// Fresh encoder initialised from `config.seed`.
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let mut params = ParamStore::new();

        let gaussian = |shape: &[usize], std: f64, rng: &mut ChaCha8Rng| {
            let normal = Normal::new(0.0, std).expect("positive std");
            let n: usize = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect()).expect("shape")
        };
        let embed = params.insert("embed", gaussian(&[config.vocab_size, d], 1.0, &mut rng), true);
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            let proj = 1.0 / (d as f64).sqrt();
            let attn_norm = params.insert(p("attn_norm"), Tensor::full(&[d], 1.0), true);
            let wq = params.insert(p("wq"), gaussian(&[d, d], proj, &mut rng), true);
            let wk = params.insert(p("wk"), gaussian(&[d, d], proj, &mut rng), true);
            let wv = params.insert(p("wv"), gaussian(&[d, d], proj, &mut rng), true);
            let wo = params.insert(p("wo"), gaussian(&[d, d], proj, &mut rng), true);
            let rel_bias = params.insert(
                p("rel_bias"),
                gaussian(&[config.n_heads, config.rel_pos_buckets], BIAS_INIT_STD, &mut rng),
                true,
            );
            let ffn_norm = params.insert(p("ffn_norm"), Tensor::full(&[d], 1.0), true);
            let w1 = params.insert(p("w1"), gaussian(&[d, config.ffn_dim], proj, &mut rng), true);
            let w2 = params.insert(
                p("w2"),
                gaussian(&[config.ffn_dim, d], 1.0 / (config.ffn_dim as f64).sqrt(), &mut rng),
                true,
            );
            layers.push(LayerParams {
                attn_norm,
                wq,
                wk,
                wv,
                wo,
                rel_bias,
                ffn_norm,
                w1,
                w2,
            });
        }
        let final_norm = params.insert("final_norm", Tensor::full(&[d], 1.0), true);
        let neutral = params.insert(NEUTRAL_PARAM, Tensor::scalar(0.0), true);
        Ok(Self {
            config,
            params,
            embed,
            layers,
            final_norm,
            neutral,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn neutral_id(&self) -> ParamId {
        self.neutral
    }

    pub fn neutral_similarity(&self) -> f64 {
        self.params.get(self.neutral).item()
    }

    /// Same weights, different attention wiring. All modes share one
    /// parameter layout, so this is always valid.
    pub fn with_mode(&self, mode: AttentionMode) -> Self {
        let mut out = self.clone();
        out.config.attention_mode = mode;
        out
    }

    pub fn tokenize_set(&self, set: &EntitySet) -> Result<TokenizedSet> {
        let mut tokens = Vec::new();
        let mut segments = Vec::with_capacity(set.len());
        for e in &set.entities {
            let start = tokens.len();
            tokens.extend(
                tokenize(&e.text, self.config.vocab_size)
                    .into_iter()
                    .map(|t| t as usize),
            );
            segments.push(start..tokens.len());
        }
        if set.is_empty() {
            return Err(Error::Invalid(format!("set `{}` has no entities", set.set_id)));
        }
        if tokens.len() > self.config.token_budget {
            return Err(Error::TokenBudget {
                set_id: set.set_id.clone(),
                tokens: tokens.len(),
                budget: self.config.token_budget,
            });
        }
        Ok(TokenizedSet { tokens, segments })
    }

    /// Records the encoder on `tape` and returns the `N×d` entity embeddings.
    pub fn forward(&self, tape: &mut Tape, set: &TokenizedSet, stats: &mut ForwardStats) -> Result<Var> {
        let cfg = &self.config;
        let spec = AttentionSpec {
            mode: cfg.attention_mode,
            n_heads: cfg.n_heads,
            buckets: cfg.rel_pos_buckets,
            max_distance: cfg.max_rel_distance,
        };
        let p = |tape: &mut Tape, id| tape.param(&self.params, id);
        let embed = p(tape, self.embed);
        let mut x = tape.gather_rows(embed, &set.tokens)?;
        for layer in &self.layers {
            let attn_norm = p(tape, layer.attn_norm);
            let (wq, wk, wv) = (p(tape, layer.wq), p(tape, layer.wk), p(tape, layer.wv));
            let h = tape.rms_norm(x, attn_norm, NORM_EPS)?;
            let q = tape.matmul(h, wq)?;
            let k = tape.matmul(h, wk)?;
            let v = tape.matmul(h, wv)?;
            let reps = match cfg.attention_mode {
                AttentionMode::SiaHidMean => {
                    // pool the residual stream, then normalise and project
                    let pooled = tape.segment_mean(x, &set.segments)?;
                    let normed = tape.rms_norm(pooled, attn_norm, NORM_EPS)?;
                    Some((tape.matmul(normed, wk)?, tape.matmul(normed, wv)?))
                }
                AttentionMode::SiaKvMean => Some((
                    tape.segment_mean(k, &set.segments)?,
                    tape.segment_mean(v, &set.segments)?,
                )),
                AttentionMode::SiaFirst => {
                    let firsts: Vec<usize> = set.segments.iter().map(|s| s.start).collect();
                    Some((tape.gather_rows(k, &firsts)?, tape.gather_rows(v, &firsts)?))
                }
                AttentionMode::Nia | AttentionMode::Fia => None,
            };
            let bias = p(tape, layer.rel_bias);
            let a = entity_attention(tape, q, k, v, bias, reps, &set.segments, spec, stats)?;
            let wo = p(tape, layer.wo);
            let o = tape.matmul(a, wo)?;
            x = tape.add(x, o)?;

            let ffn_norm = p(tape, layer.ffn_norm);
            let (w1, w2) = (p(tape, layer.w1), p(tape, layer.w2));
            let h = tape.rms_norm(x, ffn_norm, NORM_EPS)?;
            let f = tape.matmul(h, w1)?;
            let margin = tape.value(f).data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
            stats.relu_margin = stats.relu_margin.min(margin);
            let f = tape.relu(f);
            let f = tape.matmul(f, w2)?;
            x = tape.add(x, f)?;
        }
        let final_norm = p(tape, self.final_norm);
        let y = tape.rms_norm(x, final_norm, NORM_EPS)?;
        Ok(tape.segment_mean(y, &set.segments)?)
    }

    /// Records the neutral similarity scalar on `tape`.
    pub fn neutral(&self, tape: &mut Tape) -> Var {
        tape.param(&self.params, self.neutral)
    }

    /// Entity embeddings (`N×d`) for one set.
    pub fn encode_set(&self, set: &EntitySet) -> Result<Tensor> {
        self.encode_set_with_stats(set).map(|(t, _)| t)
    }

    pub fn encode_set_with_stats(&self, set: &EntitySet) -> Result<(Tensor, ForwardStats)> {
        let tokens = self.tokenize_set(set)?;
        let mut tape = Tape::new();
        let mut stats = ForwardStats::default();
        let out = self.forward(&mut tape, &tokens, &mut stats)?;
        Ok((tape.value(out).clone(), stats))
    }
}
