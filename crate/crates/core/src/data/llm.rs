//! Parser for free-text clusterings as written by a language model.
//!
//! Grammar, version 1:
//! - Blocks are separated by blank lines.
//! - The first line of a block is a cluster title (a leading `Title:` is
//!   stripped; titles are discarded).
//! - Member lines follow, optionally bulleted with `-`, `*`, `•`, `1.` or `1)`.
//! - Inside a block, an unbulleted line that follows bulleted members starts
//!   a new cluster and is its title. A line starting with `Title:` always
//!   starts a new cluster.
//! - Members are matched to entities by exact text, then by text compared
//!   case-insensitively with runs of whitespace collapsed. Each entity is
//!   claimed at most once; later mentions are ignored.
//!
//! Entities never matched are dropped from the sample. Empty outputs and
//! outputs without a single matched member are rejected.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::LabeledSample;
use crate::entity::EntitySet;

pub const PARSER_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Empty,
    Unparseable,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParseOutcome {
    /// Clustering over the matched entities; `dropped` counts the rest.
    Accepted {
        sample: LabeledSample,
        dropped: usize,
    },
    Rejected(RejectReason),
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Text of a bulleted line without its marker, or `None` if not bulleted.
fn strip_bullet(line: &str) -> Option<&str> {
    for marker in ["- ", "* ", "• "] {
        if let Some(rest) = line.strip_prefix(marker) {
            return Some(rest.trim());
        }
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return Some(r.trim());
        }
    }
    None
}

fn strip_title(line: &str) -> Option<&str> {
    let lower = line.to_lowercase();
    lower.starts_with("title:").then(|| line["title:".len()..].trim())
}

/// Splits raw text into clusters of member strings.
fn parse_blocks(raw: &str) -> Vec<Vec<String>> {
    let mut clusters: Vec<Vec<String>> = Vec::new();
    let mut in_block = false;
    let mut saw_bullet = false;
    for line in raw.lines().map(str::trim) {
        if line.is_empty() {
            in_block = false;
            continue;
        }
        if !in_block || strip_title(line).is_some() {
            in_block = true;
            saw_bullet = false;
            clusters.push(Vec::new());
            continue;
        }
        match strip_bullet(line) {
            Some(member) => {
                saw_bullet = true;
                clusters.last_mut().unwrap().push(member.to_string());
            }
            None if saw_bullet => {
                saw_bullet = false;
                clusters.push(Vec::new());
            }
            None => clusters.last_mut().unwrap().push(line.to_string()),
        }
    }
    clusters
}

pub fn parse_llm_clustering(raw: &str, set: &EntitySet) -> ParseOutcome {
    if raw.trim().is_empty() {
        return ParseOutcome::Rejected(RejectReason::Empty);
    }
    let mut exact: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut loose: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, e) in set.entities.iter().enumerate() {
        exact.entry(e.text.trim()).or_default().push(i);
        loose.entry(normalize(&e.text)).or_default().push(i);
    }
    let mut claimed = vec![false; set.len()];
    let take = |candidates: Option<&Vec<usize>>, claimed: &mut Vec<bool>| {
        let i = candidates?.iter().copied().find(|&i| !claimed[i])?;
        claimed[i] = true;
        Some(i)
    };

    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for members in parse_blocks(raw) {
        let mut c = Vec::new();
        for m in &members {
            let hit =
                take(exact.get(m.as_str()), &mut claimed).or_else(|| take(loose.get(&normalize(m)), &mut claimed));
            if let Some(i) = hit {
                c.push(i);
            }
        }
        if !c.is_empty() {
            clusters.push(c);
        }
    }
    if clusters.is_empty() {
        return ParseOutcome::Rejected(RejectReason::Unparseable);
    }

    // keep matched entities in their original order
    let kept: Vec<usize> = (0..set.len()).filter(|&i| claimed[i]).collect();
    let mut position = vec![usize::MAX; set.len()];
    for (new, &old) in kept.iter().enumerate() {
        position[old] = new;
    }
    let mut labels = vec![0; kept.len()];
    for (label, c) in clusters.iter().enumerate() {
        for &i in c {
            labels[position[i]] = label;
        }
    }
    let sub = EntitySet {
        set_id: set.set_id.clone(),
        entities: kept.iter().map(|&i| set.entities[i].clone()).collect(),
    };
    ParseOutcome::Accepted {
        sample: LabeledSample::from_labels(sub, &labels),
        dropped: set.len() - kept.len(),
    }
}

/// Raw model output for one set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawOutput {
    pub set_id: String,
    pub raw_text: String,
}

/// Parse statistics over a batch of raw outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub parser_version: u32,
    pub records: usize,
    pub accepted: usize,
    pub rejected_empty: usize,
    pub rejected_unparseable: usize,
    /// Raw outputs whose set id is absent from the entity-set file.
    pub unknown_sets: usize,
    /// Entities of accepted sets that no cluster mentioned.
    pub dropped_entities: usize,
    pub entities_in_accepted: usize,
    /// Percentage of records rejected.
    pub reject_rate_pct: f64,
    /// Mean over accepted sets of the percentage of entities dropped.
    pub mean_drop_rate_pct: f64,
    pub rejected_set_ids: Vec<String>,
}

/// Parses every raw output against its entity set.
pub fn ingest_llm_outputs(raw: &[RawOutput], sets: &[EntitySet]) -> (Vec<LabeledSample>, IngestReport) {
    let by_id: HashMap<&str, &EntitySet> = sets.iter().map(|s| (s.set_id.as_str(), s)).collect();
    let mut report = IngestReport {
        parser_version: PARSER_VERSION,
        records: raw.len(),
        ..Default::default()
    };
    let mut accepted = Vec::new();
    let mut drop_rate_sum = 0.0;
    for r in raw {
        let Some(set) = by_id.get(r.set_id.as_str()) else {
            report.unknown_sets += 1;
            report.rejected_set_ids.push(r.set_id.clone());
            continue;
        };
        match parse_llm_clustering(&r.raw_text, set) {
            ParseOutcome::Accepted { sample, dropped } => {
                report.dropped_entities += dropped;
                report.entities_in_accepted += set.len();
                drop_rate_sum += dropped as f64 / set.len() as f64;
                accepted.push(sample);
            }
            ParseOutcome::Rejected(reason) => {
                match reason {
                    RejectReason::Empty => report.rejected_empty += 1,
                    RejectReason::Unparseable => report.rejected_unparseable += 1,
                }
                report.rejected_set_ids.push(r.set_id.clone());
            }
        }
    }
    report.accepted = accepted.len();
    if report.records > 0 {
        report.reject_rate_pct = 100.0 * (report.records - report.accepted) as f64 / report.records as f64;
    }
    if report.accepted > 0 {
        report.mean_drop_rate_pct = 100.0 * drop_rate_sum / report.accepted as f64;
    }
    (accepted, report)
}
