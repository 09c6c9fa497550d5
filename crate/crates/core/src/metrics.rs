//! Extrinsic clustering metrics computed from a contingency table.
//!
//! Entropies use the natural logarithm. Pair-counting metrics (RI, ARI) use
//! exact integer arithmetic and divide once at the end. Conventions for
//! degenerate inputs:
//!
//! - NMI is 1 when both clusterings have a single cluster.
//! - AMI is 1 when the chance-adjusted denominator vanishes, which happens
//!   exactly when both clusterings are a single cluster or both are all
//!   singletons (MI equals its expectation in both cases).
//! - ARI is 1 when its denominator is zero and the numerator is zero, else 0.

use serde::{Deserialize, Serialize};

use crate::agglomerative::Clustering;
use crate::error::{Error, Result};

/// Co-occurrence counts between a ground truth (rows) and a prediction
/// (columns) over the same entity set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
    row_sums: Vec<u64>,
    col_sums: Vec<u64>,
    n: u64,
}

impl ContingencyTable {
    pub fn from_counts(rows: usize, cols: usize, counts: Vec<u64>) -> Result<Self> {
        if rows == 0 || cols == 0 || counts.len() != rows * cols {
            return Err(Error::Invalid(format!(
                "contingency table {rows}x{cols} cannot hold {} counts",
                counts.len()
            )));
        }
        let row_sums: Vec<u64> = (0..rows)
            .map(|i| counts[i * cols..(i + 1) * cols].iter().sum())
            .collect();
        let col_sums: Vec<u64> = (0..cols)
            .map(|j| (0..rows).map(|i| counts[i * cols + j]).sum())
            .collect();
        let n = row_sums.iter().sum();
        if n == 0 {
            return Err(Error::Invalid("contingency table is empty".into()));
        }
        Ok(Self {
            rows,
            cols,
            counts,
            row_sums,
            col_sums,
            n,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.cols + j]
    }

    pub fn row_sums(&self) -> &[u64] {
        &self.row_sums
    }

    pub fn col_sums(&self) -> &[u64] {
        &self.col_sums
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0; self.counts.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                counts[j * self.rows + i] = self.count(i, j);
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            counts,
            row_sums: self.col_sums.clone(),
            col_sums: self.row_sums.clone(),
            n: self.n,
        }
    }

    fn cells(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        (0..self.rows).flat_map(move |i| (0..self.cols).map(move |j| (i, j, self.count(i, j))))
    }
}

/// Builds the contingency table of `truth` (rows) against `pred` (columns).
pub fn contingency(truth: &Clustering, pred: &Clustering) -> Result<ContingencyTable> {
    truth.check_same_set(pred)?;
    if truth.is_empty() {
        return Err(Error::Invalid(format!("set `{}` is empty", truth.set_id())));
    }
    let (r, s) = (truth.num_clusters(), pred.num_clusters());
    let mut counts = vec![0u64; r * s];
    for (&a, &b) in truth.labels().iter().zip(pred.labels()) {
        counts[a * s + b] += 1;
    }
    ContingencyTable::from_counts(r, s, counts)
}

fn entropy(marginals: &[u64], n: u64) -> f64 {
    let nf = n as f64;
    marginals
        .iter()
        .filter(|&&a| a > 0)
        .map(|&a| (a as f64 / nf) * (nf / a as f64).ln())
        .sum()
}

/// Mutual information (nats).
pub fn mutual_information(t: &ContingencyTable) -> f64 {
    let nf = t.n as f64;
    t.cells()
        .filter(|&(_, _, c)| c > 0)
        .map(|(i, j, c)| {
            let c = c as f64;
            let ratio = (c * nf) / (t.row_sums[i] as f64 * t.col_sums[j] as f64);
            (c / nf) * ratio.ln()
        })
        .sum()
}

pub fn entropies(t: &ContingencyTable) -> (f64, f64) {
    (entropy(&t.row_sums, t.n), entropy(&t.col_sums, t.n))
}

/// Normalized mutual information, `2·MI / (H(A) + H(B))`.
pub fn nmi(t: &ContingencyTable) -> f64 {
    let (ha, hb) = entropies(t);
    if ha + hb == 0.0 {
        return 1.0;
    }
    (2.0 * mutual_information(t) / (ha + hb)).clamp(0.0, 1.0)
}

fn ln_factorials(n: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Expected mutual information under the hypergeometric permutation model,
/// summed exactly over every feasible cell count.
pub fn expected_mi(t: &ContingencyTable) -> f64 {
    let n = t.n;
    let nf = n as f64;
    let lf = ln_factorials(n);
    let mut total = 0.0;
    for &a in &t.row_sums {
        for &b in &t.col_sums {
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            let fixed = lf[a as usize] + lf[b as usize] + lf[(n - a) as usize] + lf[(n - b) as usize] - lf[n as usize];
            for nij in lo..=hi {
                let log_p = fixed
                    - lf[nij as usize]
                    - lf[(a - nij) as usize]
                    - lf[(b - nij) as usize]
                    - lf[(n + nij - a - b) as usize];
                let x = nij as f64;
                let term = (x / nf) * ((nf * x) / (a as f64 * b as f64)).ln();
                total += term * log_p.exp();
            }
        }
    }
    total
}

/// Adjusted mutual information with arithmetic-mean normalisation.
pub fn ami(t: &ContingencyTable) -> f64 {
    let degenerate = (t.rows == 1 && t.cols == 1) || (t.rows as u64 == t.n && t.cols as u64 == t.n);
    if degenerate {
        return 1.0;
    }
    let (ha, hb) = entropies(t);
    let mi = mutual_information(t);
    let emi = expected_mi(t);
    let denom = 0.5 * (ha + hb) - emi;
    if denom == 0.0 {
        return if mi == emi { 1.0 } else { 0.0 };
    }
    (mi - emi) / denom
}

fn choose2(k: u64) -> i128 {
    let k = k as i128;
    k * (k - 1) / 2
}

struct PairSums {
    cells: i128,
    rows: i128,
    cols: i128,
    total: i128,
}

fn pair_sums(t: &ContingencyTable) -> Result<PairSums> {
    if t.n < 2 {
        return Err(Error::Invalid(format!(
            "pair-counting metrics need at least 2 entities, got {}",
            t.n
        )));
    }
    Ok(PairSums {
        cells: t.counts.iter().map(|&c| choose2(c)).sum(),
        rows: t.row_sums.iter().map(|&c| choose2(c)).sum(),
        cols: t.col_sums.iter().map(|&c| choose2(c)).sum(),
        total: choose2(t.n),
    })
}

/// Rand index: fraction of entity pairs on which both clusterings agree.
pub fn rand_index(t: &ContingencyTable) -> Result<f64> {
    let p = pair_sums(t)?;
    let agree = p.total + 2 * p.cells - p.rows - p.cols;
    Ok(agree as f64 / p.total as f64)
}

/// Adjusted Rand index (Hubert–Arabie form).
pub fn adjusted_rand_index(t: &ContingencyTable) -> Result<f64> {
    let p = pair_sums(t)?;
    // Both terms scaled by 2·C(n,2) so everything stays integral.
    let num = 2 * (p.total * p.cells - p.rows * p.cols);
    let den = p.total * (p.rows + p.cols) - 2 * p.rows * p.cols;
    if den == 0 {
        return Ok(if num == 0 { 1.0 } else { 0.0 });
    }
    Ok(num as f64 / den as f64)
}

/// Harmonic mean of matching-based precision and recall.
pub fn f1(t: &ContingencyTable) -> f64 {
    let precision: u64 = (0..t.cols)
        .map(|j| (0..t.rows).map(|i| t.count(i, j)).max().unwrap_or(0))
        .sum();
    let recall: u64 = (0..t.rows)
        .map(|i| (0..t.cols).map(|j| t.count(i, j)).max().unwrap_or(0))
        .sum();
    2.0 * precision as f64 * recall as f64 / (t.n as f64 * (precision + recall) as f64)
}

/// All five metrics for one set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub nmi: f64,
    pub ami: f64,
    pub ri: f64,
    pub ari: f64,
    pub f1: f64,
    pub k_true: usize,
    pub k_pred: usize,
}

impl Scores {
    /// Scores `pred` against `truth`. With a single entity both clusterings
    /// are necessarily identical, so RI and ARI are reported as 1.
    pub fn compute(truth: &Clustering, pred: &Clustering) -> Result<Self> {
        let t = contingency(truth, pred)?;
        let (ri, ari) = if t.n() < 2 {
            (1.0, 1.0)
        } else {
            (rand_index(&t)?, adjusted_rand_index(&t)?)
        };
        Ok(Self {
            nmi: nmi(&t),
            ami: ami(&t),
            ri,
            ari,
            f1: f1(&t),
            k_true: t.rows(),
            k_pred: t.cols(),
        })
    }
}

/// Unweighted means of per-set scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub nmi: f64,
    pub ami: f64,
    pub ri: f64,
    pub ari: f64,
    pub f1: f64,
}

impl MetricMeans {
    /// Means in the order given; callers fix the order for reproducibility.
    pub fn of(scores: &[Scores]) -> Self {
        if scores.is_empty() {
            return Self::default();
        }
        let k = scores.len() as f64;
        let mut m = Self::default();
        for s in scores {
            m.nmi += s.nmi;
            m.ami += s.ami;
            m.ri += s.ri;
            m.ari += s.ari;
            m.f1 += s.f1;
        }
        m.nmi /= k;
        m.ami /= k;
        m.ri /= k;
        m.ari /= k;
        m.f1 /= k;
        m
    }

    pub fn combined(&self) -> f64 {
        self.nmi + self.ami + self.ri + self.ari
    }
}
