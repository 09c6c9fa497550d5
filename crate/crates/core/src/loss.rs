//! Pairwise cosine similarities and the clustering training objectives.
//!
//! Every loss is implemented once as a function of the similarity values that
//! returns its value together with its gradient; the plain functions and the
//! tape operations both go through that single path.

use std::sync::Arc;

use crate::agglomerative::Clustering;
use crate::error::{Error, Result};
use crate::numeric::{dot, norm, BackwardRule, NumericError, Tape, Tensor, Var};

/// Default triplet margin.
pub const DEFAULT_MARGIN: f64 = 0.3;
/// Fixed logit scale applied to cosine similarities in the pairwise BCE loss.
pub const BCE_LOGIT_SCALE: f64 = 5.0;

/// Symmetric matrix of pairwise cosine similarities with unit diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Validates symmetry (within 1e-12), unit diagonal and range.
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || values.len() != n * n {
            return Err(Error::Invalid(format!(
                "similarity matrix of size {n} needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        for i in 0..n {
            if values[i * n + i] != 1.0 {
                return Err(Error::Invalid(format!("diagonal entry {i} is not 1")));
            }
            for k in 0..n {
                let v = values[i * n + k];
                if !(-1.0..=1.0).contains(&v) {
                    return Err(Error::Invalid(format!("similarity ({i},{k}) = {v} outside [-1, 1]")));
                }
                if (v - values[k * n + i]).abs() > 1e-12 {
                    return Err(Error::Invalid(format!("similarity ({i},{k}) is not symmetric")));
                }
            }
        }
        Ok(Self { n, values })
    }

    /// Cosine similarities between the rows of an `n×d` embedding matrix.
    pub fn from_embeddings(embeddings: &Tensor) -> Result<Self> {
        let (values, _) = cosine_matrix_value(embeddings)?;
        Ok(Self {
            n: embeddings.rows(),
            values,
        })
    }

    pub(crate) fn from_tensor_unchecked(t: &Tensor) -> Self {
        Self {
            n: t.rows(),
            values: t.data().to_vec(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.n + k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.n, self.n], self.values.clone()).expect("square matrix")
    }
}

fn cosine_matrix_value(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>), NumericError> {
    let (n, d) = (x.rows(), x.cols());
    if x.shape().len() != 2 || n == 0 || d == 0 {
        return Err(NumericError::EmptyInput {
            op: "similarity_matrix",
        });
    }
    let norms: Vec<f64> = (0..n).map(|i| norm(x.row(i))).collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(NumericError::ZeroNorm { index: i });
    }
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        s[i * n + i] = 1.0;
        for k in i + 1..n {
            // identical rows are exactly similar; the quotient can round below 1
            let c = if x.row(i) == x.row(k) {
                1.0
            } else {
                (dot(x.row(i), x.row(k)) / (norms[i] * norms[k])).clamp(-1.0, 1.0)
            };
            s[i * n + k] = c;
            s[k * n + i] = c;
        }
    }
    Ok((s, norms))
}

/// Records the cosine similarity matrix of `embeddings` (`n×d`) on the tape.
pub fn similarity_matrix(tape: &mut Tape, embeddings: Var) -> Result<Var, NumericError> {
    let x = tape.value(embeddings);
    let n = x.rows();
    let (values, norms) = cosine_matrix_value(x)?;
    let out = Tensor::new(vec![n, n], values)?;
    Ok(tape.apply(&[embeddings], out, Box::new(CosineMatrixRule { norms })))
}

struct CosineMatrixRule {
    norms: Vec<f64>,
}

impl BackwardRule for CosineMatrixRule {
    fn backward(&self, inputs: &[&Tensor], s: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let n = x.rows();
        let mut dx = Tensor::zeros(x.shape());
        for i in 0..n {
            for k in 0..n {
                if i == k {
                    continue;
                }
                // S_ik = u_i·u_k with u = x/|x|; both (i,k) and (k,i) entries
                // contribute through their own upstream gradient.
                let gik = g.at(i, k) + g.at(k, i);
                if gik == 0.0 {
                    continue;
                }
                let sik = s.at(i, k);
                let (ni, nk) = (self.norms[i], self.norms[k]);
                let (xi, xk) = (x.row(i).to_vec(), x.row(k));
                for (o, (&a, &b)) in dx.row_mut(i).iter_mut().zip(xi.iter().zip(xk)) {
                    *o += gik * (b / (ni * nk) - sik * a / (ni * ni));
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Anchor/positive/negative triples of a clustering and their pair projections.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripletIndex {
    pub n: usize,
    pub triplets: Vec<(usize, usize, usize)>,
    /// Ordered same-cluster pairs `(a, p)` that occur in some triplet.
    pub intra: Vec<(usize, usize)>,
    /// Ordered cross-cluster pairs `(a, n)` that occur in some triplet.
    pub inter: Vec<(usize, usize)>,
}

impl TripletIndex {
    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// `|T| + |P_intra| + |P_inter|`.
    pub fn term_count(&self) -> usize {
        self.triplets.len() + self.intra.len() + self.inter.len()
    }
}

/// Enumerates every triplet `(a, p, n)` with `a ≠ p`, `a ~ p` and `a ≁ n`.
pub fn build_triplets(clustering: &Clustering) -> TripletIndex {
    let n = clustering.len();
    let sizes = clustering.cluster_sizes();
    let mut idx = TripletIndex {
        n,
        ..Default::default()
    };
    for a in 0..n {
        let own = sizes[clustering.label(a)];
        // a pair only appears in T if the complementary role can be filled
        let has_positive = own >= 2;
        let has_negative = own < n;
        for b in 0..n {
            if a == b {
                continue;
            }
            if clustering.co_clustered(a, b) {
                if has_negative {
                    idx.intra.push((a, b));
                    for c in 0..n {
                        if !clustering.co_clustered(a, c) {
                            idx.triplets.push((a, b, c));
                        }
                    }
                }
            } else if has_positive {
                idx.inter.push((a, b));
            }
        }
    }
    idx
}

/// Loss value with gradients wrt the similarity matrix and the neutral scalar.
struct LossEval {
    value: f64,
    dsim: Vec<f64>,
    dneutral: f64,
}

fn triplet_eval(sim: &[f64], idx: &TripletIndex, margin: f64) -> LossEval {
    let n = idx.n;
    let mut out = LossEval {
        value: 0.0,
        dsim: vec![0.0; n * n],
        dneutral: 0.0,
    };
    if idx.triplets.is_empty() {
        return out;
    }
    let w = 1.0 / idx.triplets.len() as f64;
    for &(a, p, q) in &idx.triplets {
        let h = margin - sim[a * n + p] + sim[a * n + q];
        if h > 0.0 {
            out.value += h;
            out.dsim[a * n + p] -= w;
            out.dsim[a * n + q] += w;
        }
    }
    out.value *= w;
    out
}

fn augmented_eval(sim: &[f64], idx: &TripletIndex, margin: f64, neutral: f64) -> LossEval {
    let n = idx.n;
    let mut out = LossEval {
        value: 0.0,
        dsim: vec![0.0; n * n],
        dneutral: 0.0,
    };
    let terms = idx.term_count();
    if terms == 0 {
        return out;
    }
    let w = 1.0 / terms as f64;
    let half = 0.5 * margin;
    for &(a, p, q) in &idx.triplets {
        let h = margin - sim[a * n + p] + sim[a * n + q];
        if h > 0.0 {
            out.value += h;
            out.dsim[a * n + p] -= w;
            out.dsim[a * n + q] += w;
        }
    }
    for &(a, p) in &idx.intra {
        let h = half - sim[a * n + p] + neutral;
        if h > 0.0 {
            out.value += h;
            out.dsim[a * n + p] -= w;
            out.dneutral += w;
        }
    }
    for &(a, q) in &idx.inter {
        let h = half - neutral + sim[a * n + q];
        if h > 0.0 {
            out.value += h;
            out.dsim[a * n + q] += w;
            out.dneutral -= w;
        }
    }
    out.value *= w;
    out
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn bce_eval(sim: &[f64], clustering: &Clustering) -> LossEval {
    let n = clustering.len();
    let mut out = LossEval {
        value: 0.0,
        dsim: vec![0.0; n * n],
        dneutral: 0.0,
    };
    if n < 2 {
        return out;
    }
    let pairs = (n * (n - 1) / 2) as f64;
    for i in 0..n {
        for k in i + 1..n {
            let y = if clustering.co_clustered(i, k) { 1.0 } else { 0.0 };
            let z = BCE_LOGIT_SCALE * sim[i * n + k];
            out.value += softplus(z) - y * z;
            out.dsim[i * n + k] += BCE_LOGIT_SCALE * (sigmoid(z) - y) / pairs;
        }
    }
    out.value /= pairs;
    out
}

fn check_size(sim: &SimilarityMatrix, n: usize) -> Result<()> {
    if sim.n() != n {
        return Err(Error::MismatchedSets(format!(
            "similarity matrix has {} entities, clustering has {n}",
            sim.n()
        )));
    }
    Ok(())
}

/// Mean hinge `(γ − s(a,p) + s(a,n))⁺` over all triplets; 0 when there are none.
pub fn triplet_loss(sim: &SimilarityMatrix, idx: &TripletIndex, margin: f64) -> Result<f64> {
    check_size(sim, idx.n)?;
    Ok(triplet_eval(sim.values(), idx, margin).value)
}

/// Triplet hinges plus neutral-edge hinges on every intra and inter pair,
/// averaged over the total number of terms.
pub fn augmented_triplet_loss(sim: &SimilarityMatrix, idx: &TripletIndex, margin: f64, neutral: f64) -> Result<f64> {
    check_size(sim, idx.n)?;
    Ok(augmented_eval(sim.values(), idx, margin, neutral).value)
}

/// Mean binary cross-entropy over unordered pairs between `σ(α·s)` and the
/// co-cluster indicator.
pub fn pairwise_bce_loss(sim: &SimilarityMatrix, clustering: &Clustering) -> Result<f64> {
    check_size(sim, clustering.len())?;
    if clustering.len() < 2 {
        return Err(Error::Invalid("pairwise BCE needs at least 2 entities".into()));
    }
    Ok(bce_eval(sim.values(), clustering).value)
}

/// Smallest `|argument|` over the hinge terms of the chosen loss: how far
/// the similarities are from a point where the loss is not differentiable.
/// Infinite for BCE, which is smooth.
pub fn hinge_margin(sim: &SimilarityMatrix, truth: &Clustering, kind: LossKind, margin: f64, neutral: f64) -> f64 {
    let mut best = f64::INFINITY;
    if kind == LossKind::Bce {
        return best;
    }
    let idx = build_triplets(truth);
    for &(a, p, q) in &idx.triplets {
        best = best.min((margin - sim.get(a, p) + sim.get(a, q)).abs());
    }
    if kind == LossKind::AugTriplet {
        for &(a, p) in &idx.intra {
            best = best.min((0.5 * margin - sim.get(a, p) + neutral).abs());
        }
        for &(a, q) in &idx.inter {
            best = best.min((0.5 * margin - neutral + sim.get(a, q)).abs());
        }
    }
    best
}

/// Training objective selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Triplet,
    AugTriplet,
    Bce,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Triplet, LossKind::AugTriplet, LossKind::Bce];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Triplet => "triplet",
            LossKind::AugTriplet => "aug-triplet",
            LossKind::Bce => "bce",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triplet" => Ok(LossKind::Triplet),
            "aug-triplet" | "augmented" | "augmented-triplet" => Ok(LossKind::AugTriplet),
            "bce" | "cross-entropy" => Ok(LossKind::Bce),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Records the selected loss for one set on the tape.
///
/// Returns `None` when the set contributes nothing: no triplets for the
/// triplet losses, fewer than two entities for BCE.
pub fn loss_on_tape(
    tape: &mut Tape,
    kind: LossKind,
    sim: Var,
    truth: &Clustering,
    margin: f64,
    neutral: Var,
) -> Result<Option<Var>> {
    let n = tape.value(sim).rows();
    if n != truth.len() {
        return Err(Error::MismatchedSets(format!(
            "similarity matrix has {n} entities, clustering has {}",
            truth.len()
        )));
    }
    match kind {
        LossKind::Triplet | LossKind::AugTriplet => {
            let idx = Arc::new(build_triplets(truth));
            if idx.is_empty() {
                return Ok(None);
            }
            Ok(Some(if kind == LossKind::Triplet {
                triplet_loss_op(tape, sim, idx, margin)
            } else {
                augmented_triplet_loss_op(tape, sim, neutral, idx, margin)
            }))
        }
        LossKind::Bce => {
            if n < 2 {
                return Ok(None);
            }
            Ok(Some(pairwise_bce_loss_op(tape, sim, Arc::new(truth.clone()))))
        }
    }
}

pub fn triplet_loss_op(tape: &mut Tape, sim: Var, idx: Arc<TripletIndex>, margin: f64) -> Var {
    let eval = triplet_eval(tape.value(sim).data(), &idx, margin);
    tape.apply(
        &[sim],
        Tensor::scalar(eval.value),
        Box::new(SimLossRule {
            dsim: eval.dsim,
            dneutral: None,
        }),
    )
}

pub fn augmented_triplet_loss_op(tape: &mut Tape, sim: Var, neutral: Var, idx: Arc<TripletIndex>, margin: f64) -> Var {
    let s = tape.value(neutral).item();
    let eval = augmented_eval(tape.value(sim).data(), &idx, margin, s);
    tape.apply(
        &[sim, neutral],
        Tensor::scalar(eval.value),
        Box::new(SimLossRule {
            dsim: eval.dsim,
            dneutral: Some(eval.dneutral),
        }),
    )
}

pub fn pairwise_bce_loss_op(tape: &mut Tape, sim: Var, truth: Arc<Clustering>) -> Var {
    let eval = bce_eval(tape.value(sim).data(), &truth);
    tape.apply(
        &[sim],
        Tensor::scalar(eval.value),
        Box::new(SimLossRule {
            dsim: eval.dsim,
            dneutral: None,
        }),
    )
}

/// Hinge and BCE losses are piecewise smooth in the similarities, so the
/// gradient computed during the forward evaluation is stored and scaled.
struct SimLossRule {
    dsim: Vec<f64>,
    dneutral: Option<f64>,
}

impl BackwardRule for SimLossRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let gv = g.item();
        let mut ds = Tensor::zeros(inputs[0].shape());
        for (o, &d) in ds.data_mut().iter_mut().zip(&self.dsim) {
            *o = gv * d;
        }
        let mut out = vec![Some(ds)];
        if let Some(dn) = self.dneutral {
            out.push(needs[1].then(|| Tensor::full(inputs[1].shape(), gv * dn)));
        }
        out
    }
}
