//! Datasets on disk, the LLM-output parser, and the two sample generators.
//!
//! Every file is line-delimited JSON whose first line is a header
//! `{"format": ..., "version": 1}`.

mod llm;
mod selfsup;
mod synthetic;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agglomerative::Clustering;
use crate::entity::{Entity, EntitySet};
use crate::error::{Error, Result};

pub use llm::{
    ingest_llm_outputs, parse_llm_clustering, IngestReport, ParseOutcome, RawOutput, RejectReason, PARSER_VERSION,
};
pub use selfsup::{generate_selfsup_sample, SelfSupConfig, SelfSupSample, WordDrop};
pub use synthetic::{generate_synthetic_benchmark, word_overlap_clustering, SyntheticConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const DATASET_FORMAT: &str = "cactus-kit/dataset";
pub const UNIVERSE_FORMAT: &str = "cactus-kit/universe";
pub const LLM_RAW_FORMAT: &str = "cactus-kit/llm-raw";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
}

/// Which part of a dataset a sample belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// One line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetRecord {
    pub set_id: String,
    pub entities: Vec<Entity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

/// An entity set with its ground-truth clustering.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub set: EntitySet,
    pub truth: Clustering,
}

impl LabeledSample {
    /// Validates that `clusters` (lists of entity ids) partition `set`.
    pub fn from_id_clusters(set: EntitySet, clusters: &[Vec<String>]) -> Result<Self> {
        set.validate()?;
        let mut index_clusters = Vec::with_capacity(clusters.len());
        for members in clusters {
            let mut c = Vec::with_capacity(members.len());
            for id in members {
                let i = set.index_of(id).ok_or_else(|| {
                    Error::Invalid(format!(
                        "set `{}`: cluster references unknown entity `{id}`",
                        set.set_id
                    ))
                })?;
                c.push(i);
            }
            index_clusters.push(c);
        }
        let truth = Clustering::from_clusters(set.set_id.clone(), set.len(), &index_clusters).map_err(|e| match e {
            Error::Invalid(m) => Error::Invalid(named_entities(&m, &set)),
            other => other,
        })?;
        Ok(Self { set, truth })
    }

    pub fn from_labels(set: EntitySet, labels: &[usize]) -> Self {
        let truth = Clustering::from_labels(set.set_id.clone(), labels);
        Self { set, truth }
    }

    pub fn set_id(&self) -> &str {
        &self.set.set_id
    }

    /// Clusters as lists of entity ids.
    pub fn id_clusters(&self) -> Vec<Vec<String>> {
        id_clusters(&self.set, &self.truth)
    }

    pub fn to_record(&self, split: Option<Split>) -> SetRecord {
        SetRecord {
            set_id: self.set.set_id.clone(),
            entities: self.set.entities.clone(),
            clusters: Some(self.id_clusters()),
            split,
        }
    }
}

// "entity index 3" is less useful than the id in diagnostics
fn named_entities(message: &str, set: &EntitySet) -> String {
    match message
        .split("entity index ")
        .nth(1)
        .and_then(|r| r.split_whitespace().next())
    {
        Some(i) => match i.parse::<usize>().ok().and_then(|i| set.entities.get(i)) {
            Some(e) => format!("{message} (entity `{}`)", e.id),
            None => message.to_string(),
        },
        None => message.to_string(),
    }
}

/// Clusters of `clustering` as entity-id lists, in cluster-label order.
pub fn id_clusters(set: &EntitySet, clustering: &Clustering) -> Vec<Vec<String>> {
    clustering
        .clusters()
        .into_iter()
        .map(|c| c.into_iter().map(|i| set.entities[i].id.clone()).collect())
        .collect()
}

/// Reads a header-prefixed JSONL file, checking the format name and version.
/// Returns `(line number, record)` pairs for the non-blank lines.
pub fn read_records<T: serde::de::DeserializeOwned>(
    path: &Path,
    formats: &[&str],
) -> Result<(Header, Vec<(usize, T)>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let dataset_err = |line: usize, message: String| Error::Dataset {
        path: path.display().to_string(),
        line,
        message,
    };
    let header: Header = loop {
        match lines.next() {
            None => return Err(dataset_err(1, "missing header line".into())),
            Some((i, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| dataset_err(i + 1, format!("bad header: {e}")))?;
            }
        }
    };
    if !formats.contains(&header.format.as_str()) {
        return Err(dataset_err(
            1,
            format!("format `{}` where {} was expected", header.format, formats.join(" or ")),
        ));
    }
    if header.version != FORMAT_VERSION {
        return Err(dataset_err(1, format!("unsupported format version {}", header.version)));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| dataset_err(i + 1, e.to_string()))?;
        out.push((i + 1, record));
    }
    Ok((header, out))
}

/// Writes a header line followed by one JSON line per record.
pub fn write_records<T: Serialize>(path: &Path, format: &str, records: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let header = Header {
        format: format.to_string(),
        version: FORMAT_VERSION,
    };
    let mut write = |value: String| writeln!(w, "{value}").map_err(|e| Error::io(path, e));
    write(serde_json::to_string(&header)?)?;
    for r in records {
        write(serde_json::to_string(r)?)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads entity sets, ignoring any clusters the records carry.
pub fn load_entity_sets(path: &Path) -> Result<Vec<EntitySet>> {
    let (_, records) = read_records::<SetRecord>(path, &[DATASET_FORMAT])?;
    let mut seen = std::collections::HashSet::new();
    records
        .into_iter()
        .map(|(line, r)| {
            let set = EntitySet::new(r.set_id, r.entities).map_err(|e| at_line(path, line, e))?;
            if !seen.insert(set.set_id.clone()) {
                return Err(at_line(
                    path,
                    line,
                    Error::Invalid(format!("duplicate set id `{}`", set.set_id)),
                ));
            }
            Ok(set)
        })
        .collect()
}

fn at_line(path: &Path, line: usize, e: Error) -> Error {
    let message = match e {
        Error::Invalid(m) => m,
        other => other.to_string(),
    };
    Error::Dataset {
        path: path.display().to_string(),
        line,
        message,
    }
}

/// Reads labelled samples with their optional pre-assigned split.
pub fn load_samples(path: &Path) -> Result<Vec<(LabeledSample, Option<Split>)>> {
    let (_, records) = read_records::<SetRecord>(path, &[DATASET_FORMAT])?;
    let mut seen = std::collections::HashSet::new();
    records
        .into_iter()
        .map(|(line, r)| {
            let clusters = r.clusters.ok_or_else(|| {
                at_line(
                    path,
                    line,
                    Error::Invalid(format!("set `{}` has no clusters", r.set_id)),
                )
            })?;
            let set = EntitySet::new(r.set_id, r.entities).map_err(|e| at_line(path, line, e))?;
            if !seen.insert(set.set_id.clone()) {
                return Err(at_line(
                    path,
                    line,
                    Error::Invalid(format!("duplicate set id `{}`", set.set_id)),
                ));
            }
            let sample = LabeledSample::from_id_clusters(set, &clusters).map_err(|e| at_line(path, line, e))?;
            Ok((sample, r.split))
        })
        .collect()
}

pub fn write_samples(path: &Path, samples: &[(LabeledSample, Option<Split>)]) -> Result<()> {
    let records: Vec<SetRecord> = samples.iter().map(|(s, split)| s.to_record(*split)).collect();
    write_records(path, DATASET_FORMAT, &records)
}

/// Sizes of the held-out parts for datasets without pre-assigned splits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test: usize,
    pub valid: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test: 3000,
            valid: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<LabeledSample>,
    pub valid: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[LabeledSample] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// Uses the recorded splits when every sample has one; otherwise shuffles
/// with `spec.seed` and takes `test`, then `valid`, then the rest for training.
pub fn split_samples(samples: Vec<(LabeledSample, Option<Split>)>, spec: &SplitSpec) -> Result<Splits> {
    let assigned = samples.iter().filter(|(_, s)| s.is_some()).count();
    let mut out = Splits::default();
    if assigned == samples.len() && !samples.is_empty() {
        for (s, split) in samples {
            match split.unwrap() {
                Split::Train => out.train.push(s),
                Split::Valid => out.valid.push(s),
                Split::Test => out.test.push(s),
            }
        }
        return Ok(out);
    }
    if assigned != 0 {
        return Err(Error::Invalid(format!(
            "{assigned} of {} samples carry a split; assign all or none",
            samples.len()
        )));
    }
    if spec.test + spec.valid > samples.len() {
        return Err(Error::Config(format!(
            "cannot hold out {} test and {} valid sets from {} samples",
            spec.test,
            spec.valid,
            samples.len()
        )));
    }
    let mut all: Vec<LabeledSample> = samples.into_iter().map(|(s, _)| s).collect();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    out.train = all.split_off(spec.test + spec.valid);
    out.valid = all.split_off(spec.test);
    out.test = all;
    Ok(out)
}

pub fn load_dataset(path: &Path, spec: &SplitSpec) -> Result<Splits> {
    split_samples(load_samples(path)?, spec)
}

/// Universe file record for self-supervised generation.
pub fn load_universe(path: &Path) -> Result<Vec<Entity>> {
    let (_, records) = read_records::<Entity>(path, &[UNIVERSE_FORMAT])?;
    if records.is_empty() {
        return Err(Error::Dataset {
            path: path.display().to_string(),
            line: 1,
            message: "universe is empty".into(),
        });
    }
    // generated member ids derive from seed ids, so those must be unique
    let mut seen = std::collections::HashSet::new();
    for (line, e) in &records {
        if !seen.insert(e.id.as_str()) {
            return Err(at_line(
                path,
                *line,
                Error::Invalid(format!("duplicate universe entity id `{}`", e.id)),
            ));
        }
    }
    Ok(records.into_iter().map(|(_, e)| e).collect())
}
