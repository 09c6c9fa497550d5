//! Topic-structured synthetic benchmark.
//!
//! Each topic owns a lexicon of pseudo-words, every pair of topics shares a
//! pool of homonyms, and noise words belong to no topic. Topics are grouped
//! into families of sibling topics, and the right granularity depends on the
//! set: a *fine* set holds the topics of one family and is clustered by
//! topic, while a *coarse* set mixes several families and is clustered by
//! family, so siblings belong together there. A context-free embedding
//! cannot serve both cases with one threshold.
//!
//! Every set also has a confuser: a topic absent from the set (when there is
//! one). An entity is a short bag of words; each word slot independently
//! becomes a noise word, a homonym shared by the entity's topic and the
//! confuser, or a lexicon word of the topic.

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LabeledSample, Split};
use crate::agglomerative::Clustering;
use crate::encoder::tokenizer::words;
use crate::entity::{Entity, EntitySet};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_topics: usize,
    pub words_per_topic: usize,
    /// Homonyms shared by each unordered pair of topics.
    pub homonyms_per_pair: usize,
    /// Probability that a word slot holds a homonym.
    pub homonym_rate: f64,
    pub noise_words: usize,
    /// Probability that a word slot holds a noise word.
    pub noise_rate: f64,
    /// Sibling topics per family; 1 turns every set into a plain topic mix.
    pub topics_per_family: usize,
    /// Probability that a set is drawn inside one family and clustered by topic.
    pub fine_set_rate: f64,
    pub sets: usize,
    /// Inclusive range of clusters in a coarse set.
    pub topics_per_set: (usize, usize),
    /// Inclusive range of entities per cluster.
    pub entities_per_topic: (usize, usize),
    /// Inclusive range of words per entity.
    pub words_per_entity: (usize, usize),
    /// Sets tagged `test`, then `valid`; the rest are `train`.
    pub test_sets: usize,
    pub valid_sets: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_topics: 6,
            words_per_topic: 40,
            homonyms_per_pair: 4,
            homonym_rate: 0.3,
            noise_words: 40,
            noise_rate: 0.1,
            topics_per_family: 2,
            fine_set_rate: 0.15,
            sets: 700,
            topics_per_set: (2, 3),
            entities_per_topic: (1, 4),
            words_per_entity: (2, 4),
            test_sets: 100,
            valid_sets: 100,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_topics < 2 {
            return bad("the benchmark needs at least 2 topics".into());
        }
        if self.words_per_topic == 0 {
            return bad("words_per_topic must be at least 1".into());
        }
        if self.topics_per_family == 0 || !self.n_topics.is_multiple_of(self.topics_per_family) {
            return bad(format!(
                "topics_per_family ({}) must divide n_topics ({})",
                self.topics_per_family, self.n_topics
            ));
        }
        for (name, p) in [
            ("homonym_rate", self.homonym_rate),
            ("noise_rate", self.noise_rate),
            ("fine_set_rate", self.fine_set_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if self.homonym_rate + self.noise_rate > 1.0 {
            return bad("homonym_rate + noise_rate must not exceed 1".into());
        }
        if self.homonym_rate > 0.0 && self.homonyms_per_pair == 0 {
            return bad("homonym_rate > 0 needs homonyms_per_pair > 0".into());
        }
        if self.noise_rate > 0.0 && self.noise_words == 0 {
            return bad("noise_rate > 0 needs noise_words > 0".into());
        }
        for (name, (lo, hi)) in [
            ("topics_per_set", self.topics_per_set),
            ("entities_per_topic", self.entities_per_topic),
            ("words_per_entity", self.words_per_entity),
        ] {
            if lo == 0 || lo > hi {
                return bad(format!("invalid {name} range [{lo}, {hi}]"));
            }
        }
        if self.topics_per_set.1 > self.families() {
            return bad(format!(
                "a coarse set cannot mix more than {} families",
                self.families()
            ));
        }
        if self.test_sets + self.valid_sets > self.sets {
            return bad("held-out sets exceed the total".into());
        }
        Ok(())
    }

    pub fn families(&self) -> usize {
        self.n_topics / self.topics_per_family.max(1)
    }
}

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr", "pl",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

fn pseudo_words<R: Rng + ?Sized>(count: usize, taken: &mut HashSet<String>, rng: &mut R) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let syllables = rng.gen_range(2..=3);
        let w: String = (0..syllables)
            .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
            .collect();
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

struct Vocabulary {
    lexicons: Vec<Vec<String>>,
    /// `homonyms[a][b]` (and `[b][a]`) is the pool shared by topics a and b.
    homonyms: Vec<Vec<Vec<String>>>,
    noise: Vec<String>,
}

fn vocabulary<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R) -> Vocabulary {
    let mut taken = HashSet::new();
    let lexicons: Vec<Vec<String>> = (0..cfg.n_topics)
        .map(|_| pseudo_words(cfg.words_per_topic, &mut taken, rng))
        .collect();
    let mut homonyms = vec![vec![Vec::new(); cfg.n_topics]; cfg.n_topics];
    for a in 0..cfg.n_topics {
        for b in a + 1..cfg.n_topics {
            let pool = pseudo_words(cfg.homonyms_per_pair, &mut taken, rng);
            homonyms[a][b] = pool.clone();
            homonyms[b][a] = pool;
        }
    }
    let noise = pseudo_words(cfg.noise_words, &mut taken, rng);
    Vocabulary {
        lexicons,
        homonyms,
        noise,
    }
}

/// Generates `cfg.sets` labelled sets with their split tags.
pub fn generate_synthetic_benchmark<R: Rng + ?Sized>(
    cfg: &SyntheticConfig,
    rng: &mut R,
) -> Result<Vec<(LabeledSample, Option<Split>)>> {
    cfg.validate()?;
    let vocab = vocabulary(cfg, rng);
    let mut out = Vec::with_capacity(cfg.sets);
    let per_family = cfg.topics_per_family;
    for s in 0..cfg.sets {
        // clusters as lists of topics an entity may come from
        let clusters: Vec<Vec<usize>> = if per_family > 1 && rng.gen_bool(cfg.fine_set_rate) {
            let family = rng.gen_range(0..cfg.families());
            (family * per_family..(family + 1) * per_family)
                .map(|t| vec![t])
                .collect()
        } else {
            let k = rng.gen_range(cfg.topics_per_set.0..=cfg.topics_per_set.1);
            index::sample(rng, cfg.families(), k)
                .into_iter()
                .map(|f| (f * per_family..(f + 1) * per_family).collect())
                .collect()
        };
        let present: Vec<usize> = clusters.iter().flatten().copied().collect();
        let absent: Vec<usize> = (0..cfg.n_topics).filter(|t| !present.contains(t)).collect();
        let confuser = absent.choose(rng).copied();
        let mut members: Vec<(String, usize)> = Vec::new();
        for (label, topics) in clusters.iter().enumerate() {
            let count = rng.gen_range(cfg.entities_per_topic.0..=cfg.entities_per_topic.1);
            for _ in 0..count {
                let topic = *topics.choose(rng).unwrap();
                let len = rng.gen_range(cfg.words_per_entity.0..=cfg.words_per_entity.1);
                let text: Vec<&str> = (0..len)
                    .map(|_| {
                        let u: f64 = rng.gen();
                        let pool = if u < cfg.noise_rate {
                            &vocab.noise
                        } else if u < cfg.noise_rate + cfg.homonym_rate {
                            // with every topic present, pair with a random other topic
                            let other = confuser.unwrap_or_else(|| {
                                let o = rng.gen_range(0..cfg.n_topics - 1);
                                o + usize::from(o >= topic)
                            });
                            &vocab.homonyms[topic][other]
                        } else {
                            &vocab.lexicons[topic]
                        };
                        pool.choose(rng).unwrap().as_str()
                    })
                    .collect();
                members.push((text.join(" "), label));
            }
        }
        members.shuffle(rng);
        let set_id = format!("syn-{s:05}");
        let entities = members
            .iter()
            .enumerate()
            .map(|(i, (text, _))| Entity::new(format!("e{i}"), text.clone()))
            .collect();
        let labels: Vec<usize> = members.iter().map(|m| m.1).collect();
        let split = if s < cfg.test_sets {
            Split::Test
        } else if s < cfg.test_sets + cfg.valid_sets {
            Split::Valid
        } else {
            Split::Train
        };
        out.push((
            LabeledSample::from_labels(EntitySet::new(set_id, entities)?, &labels),
            Some(split),
        ));
    }
    Ok(out)
}

/// Groups entities that are connected through shared words.
pub fn word_overlap_clustering(set: &EntitySet) -> Clustering {
    let bags: Vec<HashSet<String>> = set
        .entities
        .iter()
        .map(|e| words(&e.text).into_iter().collect())
        .collect();
    let n = set.len();
    let mut labels: Vec<usize> = (0..n).collect();
    fn find(labels: &mut [usize], mut i: usize) -> usize {
        while labels[i] != i {
            labels[i] = labels[labels[i]];
            i = labels[i];
        }
        i
    }
    for i in 0..n {
        for k in i + 1..n {
            if !bags[i].is_disjoint(&bags[k]) {
                let (a, b) = (find(&mut labels, i), find(&mut labels, k));
                labels[a.max(b)] = a.min(b);
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut labels, i)).collect();
    Clustering::from_labels(set.set_id.clone(), &roots)
}
