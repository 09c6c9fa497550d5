//! Average-link agglomerative clustering over cosine similarities.

use crate::error::{Error, Result};
use crate::loss::SimilarityMatrix;
use crate::metrics::{MetricMeans, Scores};

/// Assignment of every entity of one set to a cluster.
///
/// Labels are canonical: dense `0..K` in order of first appearance, so two
/// clusterings that induce the same partition compare equal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clustering {
    set_id: String,
    labels: Vec<usize>,
    num_clusters: usize,
}

impl Clustering {
    /// Builds a clustering from arbitrary labels, relabelling them densely.
    pub fn from_labels(set_id: impl Into<String>, labels: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let dense: Vec<usize> = labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Self {
            set_id: set_id.into(),
            num_clusters: map.len(),
            labels: dense,
        }
    }

    /// Builds a clustering from member lists that must cover `0..n` exactly once.
    pub fn from_clusters(set_id: impl Into<String>, n: usize, clusters: &[Vec<usize>]) -> Result<Self> {
        let set_id = set_id.into();
        let mut labels = vec![usize::MAX; n];
        for (c, members) in clusters.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::Invalid(format!("set `{set_id}`: cluster {c} is empty")));
            }
            for &m in members {
                if m >= n {
                    return Err(Error::Invalid(format!(
                        "set `{set_id}`: entity index {m} out of range for {n} entities"
                    )));
                }
                if labels[m] != usize::MAX {
                    return Err(Error::Invalid(format!(
                        "set `{set_id}`: entity index {m} assigned twice"
                    )));
                }
                labels[m] = c;
            }
        }
        if let Some(missing) = labels.iter().position(|&l| l == usize::MAX) {
            return Err(Error::Invalid(format!(
                "set `{set_id}`: entity index {missing} is not assigned to any cluster"
            )));
        }
        Ok(Self::from_labels(set_id, &labels))
    }

    pub fn singletons(set_id: impl Into<String>, n: usize) -> Self {
        Self::from_labels(set_id, &(0..n).collect::<Vec<_>>())
    }

    pub fn single_cluster(set_id: impl Into<String>, n: usize) -> Self {
        Self::from_labels(set_id, &vec![0; n])
    }

    pub fn set_id(&self) -> &str {
        &self.set_id
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, entity: usize) -> usize {
        self.labels[entity]
    }

    pub fn co_clustered(&self, a: usize, b: usize) -> bool {
        self.labels[a] == self.labels[b]
    }

    /// Member lists in label order, members ascending.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.num_clusters];
        for &l in &self.labels {
            out[l] += 1;
        }
        out
    }

    pub(crate) fn check_same_set(&self, other: &Clustering) -> Result<()> {
        if self.set_id != other.set_id || self.len() != other.len() {
            return Err(Error::MismatchedSets(format!(
                "`{}` ({} entities) vs `{}` ({} entities)",
                self.set_id,
                self.len(),
                other.set_id,
                other.len()
            )));
        }
        Ok(())
    }
}

/// True iff both clusterings induce the same co-cluster relation.
pub fn clusterings_equivalent(a: &Clustering, b: &Clustering) -> Result<bool> {
    a.check_same_set(b)?;
    let n = a.len();
    Ok((0..n).all(|i| (i + 1..n).all(|j| a.co_clustered(i, j) == b.co_clustered(i, j))))
}

/// One merge step: cluster ids are the smallest original entity index in
/// each cluster.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub similarity: f64,
}

/// Merge history of one agglomeration run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MergeTrace {
    pub n: usize,
    pub merges: Vec<Merge>,
}

impl MergeTrace {
    /// Replays the merges whose link similarity reaches `threshold`, stopping
    /// at the first one that does not.
    pub fn clustering_at(&self, set_id: &str, threshold: f64) -> Clustering {
        let mut parent: Vec<usize> = (0..self.n).collect();
        for m in &self.merges {
            if m.similarity < threshold {
                break;
            }
            parent[m.b] = m.a;
        }
        let labels: Vec<usize> = (0..self.n)
            .map(|mut i| {
                while parent[i] != i {
                    i = parent[i];
                }
                i
            })
            .collect();
        Clustering::from_labels(set_id, &labels)
    }
}

/// Average-link agglomeration: starting from singletons, repeatedly merge the
/// pair of clusters with the highest mean cross-pair similarity while that
/// similarity is at least `threshold`. Ties go to the lowest cluster-id pair.
pub fn agglomerate(set_id: &str, sim: &SimilarityMatrix, threshold: f64) -> (Clustering, MergeTrace) {
    let n = sim.n();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut trace = MergeTrace {
        n,
        merges: Vec::with_capacity(n.saturating_sub(1)),
    };
    while clusters.len() > 1 {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let link = average_link(sim, &clusters[a].1, &clusters[b].1);
                if best.is_none_or(|(_, _, s)| link > s) {
                    best = Some((a, b, link));
                }
            }
        }
        let (a, b, link) = best.expect("at least two clusters");
        if link < threshold {
            break;
        }
        let (b_id, absorbed) = clusters.remove(b);
        trace.merges.push(Merge {
            a: clusters[a].0,
            b: b_id,
            similarity: link,
        });
        clusters[a].1.extend(absorbed);
    }
    let mut labels = vec![0; n];
    for (c, (_, members)) in clusters.iter().enumerate() {
        for &m in members {
            labels[m] = c;
        }
    }
    (Clustering::from_labels(set_id, &labels), trace)
}

fn average_link(sim: &SimilarityMatrix, a: &[usize], b: &[usize]) -> f64 {
    let mut total = 0.0;
    for &i in a {
        for &j in b {
            total += sim.get(i, j);
        }
    }
    total / (a.len() * b.len()) as f64
}

/// Quantity maximised when picking a stopping threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionCriterion {
    /// NMI + AMI + RI + ARI.
    #[default]
    CombinedSum,
    Ami,
    Ari,
    F1,
}

impl SelectionCriterion {
    pub fn score(self, m: &MetricMeans) -> f64 {
        match self {
            SelectionCriterion::CombinedSum => m.nmi + m.ami + m.ri + m.ari,
            SelectionCriterion::Ami => m.ami,
            SelectionCriterion::Ari => m.ari,
            SelectionCriterion::F1 => m.f1,
        }
    }
}

/// The grid `-1.0, -0.9, …, 1.0`.
pub fn threshold_grid() -> Vec<f64> {
    (-10..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    pub means: MetricMeans,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub best_threshold: f64,
    pub best_score: f64,
    pub rows: Vec<SweepRow>,
}

/// Evaluates every grid threshold on labelled similarity matrices and picks
/// the best one; ties resolve to the smaller threshold.
pub fn sweep_threshold(
    validation: &[(SimilarityMatrix, Clustering)],
    criterion: SelectionCriterion,
) -> Result<SweepResult> {
    if validation.is_empty() {
        return Err(Error::Invalid(
            "threshold sweep needs at least one validation sample".into(),
        ));
    }
    let traces: Vec<MergeTrace> = validation
        .iter()
        .map(|(sim, truth)| agglomerate(truth.set_id(), sim, f64::NEG_INFINITY).1)
        .collect();
    let mut rows = Vec::with_capacity(21);
    for threshold in threshold_grid() {
        let scores = validation
            .iter()
            .zip(&traces)
            .map(|((_, truth), trace)| {
                let pred = trace.clustering_at(truth.set_id(), threshold);
                Scores::compute(truth, &pred)
            })
            .collect::<Result<Vec<_>>>()?;
        let means = MetricMeans::of(&scores);
        let score = criterion.score(&means);
        rows.push(SweepRow {
            threshold,
            means,
            score,
        });
    }
    let mut best = 0;
    for (i, row) in rows.iter().enumerate() {
        if row.score > rows[best].score {
            best = i;
        }
    }
    Ok(SweepResult {
        best_threshold: rows[best].threshold,
        best_score: rows[best].score,
        rows,
    })
}
