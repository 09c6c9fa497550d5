//! Brute-force reference implementations of the clustering metrics.
//!
//! Everything here works on raw label vectors and counts entity pairs or
//! permutations directly; nothing goes through a contingency table.

#![allow(dead_code)]

use std::collections::HashMap;

use cactus_kit_core::agglomerative::Clustering;
use cactus_kit_core::metrics::Scores;

/// Every partition of `n` items as a restricted growth string.
pub fn partitions(n: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, max: usize, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for l in 0..=max + 1 {
            prefix.push(l);
            grow(prefix, max.max(l), n, out);
            prefix.pop();
        }
    }
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    let mut prefix = vec![0];
    grow(&mut prefix, 0, n, &mut out);
    out
}

/// (same in both, same in a only, same in b only, different in both).
pub fn pair_counts(a: &[usize], b: &[usize]) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => c.0 += 1,
                (true, false) => c.1 += 1,
                (false, true) => c.2 += 1,
                (false, false) => c.3 += 1,
            }
        }
    }
    c
}

pub fn rand_index(a: &[usize], b: &[usize]) -> f64 {
    let (s, x, y, d) = pair_counts(a, b);
    (s + d) as f64 / (s + x + y + d) as f64
}

pub fn ari(a: &[usize], b: &[usize]) -> f64 {
    let (s, x, y, d) = pair_counts(a, b);
    let (s, x, y, d) = (s as f64, x as f64, y as f64, d as f64);
    let num = 2.0 * (s * d - x * y);
    let den = (s + x) * (x + d) + (s + y) * (y + d);
    if den == 0.0 {
        return if num == 0.0 { 1.0 } else { 0.0 };
    }
    num / den
}

fn freq(labels: &[usize]) -> HashMap<usize, f64> {
    let mut m: HashMap<usize, usize> = HashMap::new();
    for &l in labels {
        *m.entry(l).or_insert(0) += 1;
    }
    m.into_iter()
        .map(|(l, c)| (l, c as f64 / labels.len() as f64))
        .collect()
}

pub fn entropy(a: &[usize]) -> f64 {
    freq(a).values().map(|p| -p * p.ln()).sum()
}

pub fn mi(a: &[usize], b: &[usize]) -> f64 {
    let (pa, pb) = (freq(a), freq(b));
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0) += 1;
    }
    joint
        .iter()
        .map(|(&(x, y), &c)| {
            let p = c as f64 / a.len() as f64;
            p * (p / (pa[&x] * pb[&y])).ln()
        })
        .sum()
}

pub fn nmi(a: &[usize], b: &[usize]) -> f64 {
    let h = entropy(a) + entropy(b);
    if h == 0.0 {
        return 1.0;
    }
    2.0 * mi(a, b) / h
}

/// Mean MI over every permutation of `b`'s entries: the exact expectation
/// under the permutation model. Only feasible for small `n`.
pub fn expected_mi_by_permutation(a: &[usize], b: &[usize]) -> f64 {
    let n = b.len();
    let mut perm: Vec<usize> = b.to_vec();
    let mut c = vec![0; n];
    let mut total = mi(a, &perm);
    let mut count = 1.0;
    // Heap's algorithm
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            total += mi(a, &perm);
            count += 1.0;
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    total / count
}

pub fn ami(a: &[usize], b: &[usize], emi: f64) -> f64 {
    let m = mi(a, b);
    let den = 0.5 * (entropy(a) + entropy(b)) - emi;
    if den.abs() < 1e-12 {
        return if (m - emi).abs() < 1e-12 { 1.0 } else { 0.0 };
    }
    (m - emi) / den
}

/// Matching F1: precision credits each predicted cluster with its largest
/// overlap with a true cluster, recall the other way round.
pub fn f1(truth: &[usize], pred: &[usize]) -> f64 {
    let best = |x: &[usize], y: &[usize]| -> f64 {
        let mut hit = 0usize;
        let ids: std::collections::BTreeSet<usize> = x.iter().copied().collect();
        for id in ids {
            let mut overlap: HashMap<usize, usize> = HashMap::new();
            for (k, &l) in x.iter().enumerate() {
                if l == id {
                    *overlap.entry(y[k]).or_insert(0) += 1;
                }
            }
            hit += overlap.values().max().copied().unwrap_or(0);
        }
        hit as f64 / x.len() as f64
    };
    let p = best(pred, truth);
    let r = best(truth, pred);
    2.0 * p * r / (p + r)
}

fn sorted_sizes(labels: &[usize]) -> Vec<usize> {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    let mut v: Vec<usize> = counts.into_values().collect();
    v.sort_unstable();
    v
}

/// Outcome of comparing the library against the oracles over all pairs of
/// partitions of every `n` in `1..=max_n`.
#[derive(Debug, Default)]
pub struct ExhaustiveReport {
    pub pairs: usize,
    pub worst: f64,
    pub worst_case: String,
    /// Identical clusterings that did not score exactly 1 where required.
    pub identity_failures: Vec<String>,
}

pub fn exhaustive_metric_check(max_n: usize) -> ExhaustiveReport {
    let mut report = ExhaustiveReport::default();
    let mut emi_cache: HashMap<(Vec<usize>, Vec<usize>), f64> = HashMap::new();
    for n in 1..=max_n {
        let parts = partitions(n);
        for a in &parts {
            for b in &parts {
                let key = (sorted_sizes(a), sorted_sizes(b));
                let emi = *emi_cache.entry(key).or_insert_with(|| expected_mi_by_permutation(a, b));
                let lib = Scores::compute(&Clustering::from_labels("p", a), &Clustering::from_labels("p", b))
                    .expect("valid clusterings");
                let mut pairs = vec![
                    ("nmi", lib.nmi, nmi(a, b)),
                    ("ami", lib.ami, ami(a, b, emi)),
                    ("f1", lib.f1, f1(a, b)),
                ];
                if n >= 2 {
                    pairs.push(("ri", lib.ri, rand_index(a, b)));
                    pairs.push(("ari", lib.ari, ari(a, b)));
                }
                for (name, got, want) in pairs {
                    let err = (got - want).abs();
                    if !(err <= report.worst) {
                        report.worst = err;
                        report.worst_case = format!("{name} {a:?} vs {b:?}: library {got}, oracle {want}");
                    }
                }
                if a == b {
                    let non_degenerate = n >= 2 && sorted_sizes(a).len() > 1 && sorted_sizes(a).len() < n;
                    let mut exact = vec![("nmi", lib.nmi), ("f1", lib.f1)];
                    if n >= 2 {
                        exact.push(("ri", lib.ri));
                    }
                    if non_degenerate {
                        exact.push(("ami", lib.ami));
                        exact.push(("ari", lib.ari));
                    }
                    for (name, v) in exact {
                        if v != 1.0 {
                            report
                                .identity_failures
                                .push(format!("{name} of {a:?} with itself is {v}"));
                        }
                    }
                }
                report.pairs += 1;
            }
        }
    }
    report
}
