//! Fused multi-head attention over the tokens of an entity set.
//!
//! Each query token scores, in one softmax, the tokens of its own entity
//! (with a relative-position bias) and an inter-entity part that depends on
//! the mode: nothing (NIA), one representative key/value per other entity
//! (SIA), or every token of every other entity (FIA). Inter-entity scores
//! never carry a positional term.

use std::ops::Range;

use super::config::AttentionMode;
use super::relpos;
use crate::numeric::{dot, BackwardRule, NumericError, Tape, Tensor, Var};

/// Counters collected during one encoder forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardStats {
    /// Logits evaluated per head, summed over layers.
    pub logits_per_head: usize,
    /// Bytes of scoring buffers: attention probabilities of all heads plus
    /// the stacked representative keys and values.
    pub buffer_bytes: usize,
    /// Peak scoring-buffer bytes of a single layer.
    pub peak_layer_bytes: usize,
    /// Smallest `|x|` fed to a ReLU; tells how close the pass is to a kink.
    pub relu_margin: f64,
}

impl Default for ForwardStats {
    fn default() -> Self {
        Self {
            logits_per_head: 0,
            buffer_bytes: 0,
            peak_layer_bytes: 0,
            relu_margin: f64::INFINITY,
        }
    }
}

impl ForwardStats {
    fn record(&mut self, logits: usize, bytes: usize) {
        self.logits_per_head += logits;
        self.buffer_bytes += bytes;
        self.peak_layer_bytes = self.peak_layer_bytes.max(bytes);
    }
}

/// Number of attention logits per layer and head, from entity lengths alone.
pub fn count_attention_logits(lengths: &[usize], mode: AttentionMode) -> usize {
    let n = lengths.len();
    let total: usize = lengths.iter().sum();
    match mode {
        AttentionMode::Nia => lengths.iter().map(|l| l * l).sum(),
        AttentionMode::Fia => total * total,
        _ => lengths.iter().map(|l| l * (l + n - 1)).sum(),
    }
}

#[derive(Clone, Copy, Debug)]
enum Target {
    /// Token of the same entity, with its relative-position bucket.
    Intra { key: usize, bucket: usize },
    /// Token of another entity.
    Cross { key: usize },
    /// Representative of another entity.
    Rep { entity: usize },
}

struct Plan {
    targets: Vec<Target>,
    /// `offsets[t]..offsets[t + 1]` indexes the targets of query `t`.
    offsets: Vec<usize>,
}

fn plan(segments: &[Range<usize>], mode: AttentionMode, buckets: usize, max_distance: usize) -> Plan {
    let total = segments.last().map_or(0, |s| s.end);
    let mut targets = Vec::new();
    let mut offsets = Vec::with_capacity(total + 1);
    offsets.push(0);
    for (e, seg) in segments.iter().enumerate() {
        for t in seg.clone() {
            for key in seg.clone() {
                let bucket = relpos::bucket(key as i64 - t as i64, buckets, max_distance);
                targets.push(Target::Intra { key, bucket });
            }
            match mode {
                AttentionMode::Nia => {}
                AttentionMode::Fia => {
                    for (m, other) in segments.iter().enumerate() {
                        if m != e {
                            targets.extend(other.clone().map(|key| Target::Cross { key }));
                        }
                    }
                }
                _ => {
                    targets.extend(
                        (0..segments.len())
                            .filter(|&m| m != e)
                            .map(|entity| Target::Rep { entity }),
                    );
                }
            }
            offsets.push(targets.len());
        }
    }
    Plan { targets, offsets }
}

/// Shape parameters of one attention call.
#[derive(Clone, Copy, Debug)]
pub struct AttentionSpec {
    pub mode: AttentionMode,
    pub n_heads: usize,
    pub buckets: usize,
    pub max_distance: usize,
}

/// Runs attention for all heads and records it as a single tape node.
///
/// `q`, `k`, `v` are `T×d` with heads occupying consecutive column blocks,
/// `bias` is `heads×buckets`, and `reps` holds the `N×d` representative keys
/// and values required by the SIA modes. Returns the concatenated head
/// outputs (`T×d`, before the output projection).
#[allow(clippy::too_many_arguments)]
pub fn entity_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    bias: Var,
    reps: Option<(Var, Var)>,
    segments: &[Range<usize>],
    spec: AttentionSpec,
    stats: &mut ForwardStats,
) -> Result<Var, NumericError> {
    let (qv, kv, vv) = (tape.value(q), tape.value(k), tape.value(v));
    let (t_len, d) = (qv.rows(), qv.cols());
    if kv.shape() != qv.shape() || vv.shape() != qv.shape() {
        return Err(NumericError::ShapeMismatch {
            op: "entity_attention",
            left: qv.shape().to_vec(),
            right: kv.shape().to_vec(),
        });
    }
    if segments.last().map_or(0, |s| s.end) != t_len {
        return Err(NumericError::ShapeMismatch {
            op: "entity_attention",
            left: qv.shape().to_vec(),
            right: vec![segments.len()],
        });
    }
    if spec.mode.is_sia() != reps.is_some() {
        return Err(NumericError::EmptyInput {
            op: "entity_attention representatives",
        });
    }
    let heads = spec.n_heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let plan = plan(segments, spec.mode, spec.buckets, spec.max_distance);
    let per_head = plan.targets.len();
    let bv = tape.value(bias);
    let (rk, rv) = match reps {
        Some((a, b)) => (Some(tape.value(a)), Some(tape.value(b))),
        None => (None, None),
    };

    let mut probs = vec![0.0; heads * per_head];
    let mut out = Tensor::zeros(&[t_len, d]);
    let mut logits = Vec::new();
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let bias_row = &bv.row(h);
        for t in 0..t_len {
            let query = &qv.row(t)[cols.clone()];
            let span = plan.offsets[t]..plan.offsets[t + 1];
            logits.clear();
            for target in &plan.targets[span.clone()] {
                let z = match *target {
                    Target::Intra { key, bucket } => scale * dot(query, &kv.row(key)[cols.clone()]) + bias_row[bucket],
                    Target::Cross { key } => scale * dot(query, &kv.row(key)[cols.clone()]),
                    Target::Rep { entity } => scale * dot(query, &rk.unwrap().row(entity)[cols.clone()]),
                };
                logits.push(z);
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for z in logits.iter_mut() {
                *z = (*z - max).exp();
                denom += *z;
            }
            let p_row = &mut probs[h * per_head + span.start..h * per_head + span.end];
            let out_row = &mut out.row_mut(t)[cols.clone()];
            for ((p, z), target) in p_row.iter_mut().zip(&logits).zip(&plan.targets[span.clone()]) {
                *p = z / denom;
                let value = match *target {
                    Target::Intra { key, .. } | Target::Cross { key } => &vv.row(key)[cols.clone()],
                    Target::Rep { entity } => &rv.unwrap().row(entity)[cols.clone()],
                };
                for (o, &x) in out_row.iter_mut().zip(value) {
                    *o += *p * x;
                }
            }
        }
    }

    let rep_bytes = rk.map_or(0, |r| 2 * r.len() * std::mem::size_of::<f64>());
    stats.record(per_head, probs.len() * std::mem::size_of::<f64>() + rep_bytes);

    let mut inputs = vec![q, k, v, bias];
    if let Some((a, b)) = reps {
        inputs.push(a);
        inputs.push(b);
    }
    Ok(tape.apply(
        &inputs,
        out,
        Box::new(AttentionRule {
            plan,
            probs,
            heads,
            scale,
        }),
    ))
}

struct AttentionRule {
    plan: Plan,
    probs: Vec<f64>,
    heads: usize,
    scale: f64,
}

impl BackwardRule for AttentionRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let (qv, kv, vv, bv) = (inputs[0], inputs[1], inputs[2], inputs[3]);
        let reps = (inputs.len() == 6).then(|| (inputs[4], inputs[5]));
        let (t_len, d) = (qv.rows(), qv.cols());
        let dh = d / self.heads;
        let per_head = self.plan.targets.len();

        let mut dq = Tensor::zeros(qv.shape());
        let mut dk = Tensor::zeros(kv.shape());
        let mut dv = Tensor::zeros(vv.shape());
        let mut db = Tensor::zeros(bv.shape());
        let (mut drk, mut drv) = match reps {
            Some((a, b)) => (Some(Tensor::zeros(a.shape())), Some(Tensor::zeros(b.shape()))),
            None => (None, None),
        };

        let mut dz = Vec::new();
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            for t in 0..t_len {
                let span = self.plan.offsets[t]..self.plan.offsets[t + 1];
                let targets = &self.plan.targets[span.clone()];
                let p_row = &self.probs[h * per_head + span.start..h * per_head + span.end];
                let g_row = &g.row(t)[cols.clone()];

                // dp_j = g·v_j, and dv_j += p_j g
                dz.clear();
                let mut weighted = 0.0;
                for (&p, target) in p_row.iter().zip(targets) {
                    let (value, dvalue) = match *target {
                        Target::Intra { key, .. } | Target::Cross { key } => {
                            (&vv.row(key)[cols.clone()], dv.row_mut(key))
                        }
                        Target::Rep { entity } => (
                            &reps.unwrap().1.row(entity)[cols.clone()],
                            drv.as_mut().unwrap().row_mut(entity),
                        ),
                    };
                    let dp = dot(g_row, value);
                    for (o, &gx) in dvalue[cols.clone()].iter_mut().zip(g_row) {
                        *o += p * gx;
                    }
                    weighted += p * dp;
                    dz.push(dp);
                }
                for (z, &p) in dz.iter_mut().zip(p_row) {
                    *z = p * (*z - weighted);
                }

                let query = qv.row(t)[cols.clone()].to_vec();
                let mut dquery = vec![0.0; dh];
                for (&z, target) in dz.iter().zip(targets) {
                    if z == 0.0 {
                        continue;
                    }
                    let sz = self.scale * z;
                    let (key, dkey) = match *target {
                        Target::Intra { key, bucket } => {
                            db.row_mut(h)[bucket] += z;
                            (&kv.row(key)[cols.clone()], dk.row_mut(key))
                        }
                        Target::Cross { key } => (&kv.row(key)[cols.clone()], dk.row_mut(key)),
                        Target::Rep { entity } => (
                            &reps.unwrap().0.row(entity)[cols.clone()],
                            drk.as_mut().unwrap().row_mut(entity),
                        ),
                    };
                    for ((dqi, &ki), (dki, &qi)) in dquery
                        .iter_mut()
                        .zip(key)
                        .zip(dkey[cols.clone()].iter_mut().zip(&query))
                    {
                        *dqi += sz * ki;
                        *dki += sz * qi;
                    }
                }
                for (o, x) in dq.row_mut(t)[cols.clone()].iter_mut().zip(dquery) {
                    *o += x;
                }
            }
        }
        let mut out = vec![Some(dq), Some(dk), Some(dv), Some(db)];
        if reps.is_some() {
            out.push(drk);
            out.push(drv);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_counts() {
        let l = [8, 8, 8, 8];
        assert_eq!(count_attention_logits(&l, AttentionMode::Nia), 256);
        assert_eq!(count_attention_logits(&l, AttentionMode::SiaHidMean), 352);
        assert_eq!(count_attention_logits(&l, AttentionMode::Fia), 1024);
        for mode in AttentionMode::ALL {
            assert_eq!(count_attention_logits(&[5], mode), 25);
        }
    }

    #[test]
    fn plan_sizes_match_counts() {
        let lengths = [3, 1, 4];
        let mut segs = Vec::new();
        let mut at = 0;
        for l in lengths {
            segs.push(at..at + l);
            at += l;
        }
        for mode in AttentionMode::ALL {
            let p = plan(&segs, mode, 16, 32);
            assert_eq!(p.targets.len(), count_attention_logits(&lengths, mode));
        }
    }
}
