//! Two-tier temporal context built from per-timepoint scene graphs: a
//! short-term buffer of the last `k` graphs and the long-term list of unique
//! triplets in first-occurrence order.
//!
//! Rendered form:
//!
//! ```text
//! SHORT_TERM
//! @clip_000_t0003 (head_surgeon,drill,holding);(nurse,patient,assisting)
//! @clip_000_t0004 -
//! LONG_TERM
//! (head_surgeon,drill,holding);(nurse,patient,assisting)
//! ```
//!
//! `-` marks an empty triplet list.

use std::collections::HashSet;

use thiserror::Error;

use crate::domain::{canonical_triplet_string, TimepointRecord, Triplet};

pub const DEFAULT_SHORT_TERM: usize = 5;
pub const MEMORY_FORMAT_VERSION: &str = "1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MemoryError {
    #[error("{0}")]
    Usage(String),
    #[error("malformed memory text at line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemoryGraphs {
    pub short_term: Vec<(String, Vec<Triplet>)>,
    pub long_term: Vec<Triplet>,
}

/// Build memory from any ordered source of `(timepoint_id, triplets)`, be it
/// ground truth or model predictions.
pub fn build_memory_from<S: AsRef<str>>(
    graphs: &[(S, Vec<Triplet>)],
    at: usize,
    k: usize,
) -> Result<MemoryGraphs, MemoryError> {
    if at >= graphs.len() {
        return Err(MemoryError::Usage(format!("index {at} outside clip of {} timepoints", graphs.len())));
    }
    if k == 0 {
        return Err(MemoryError::Usage("short-term buffer length must be at least 1".into()));
    }
    let first = (at + 1).saturating_sub(k);
    let short_term = graphs[first..=at]
        .iter()
        .map(|(id, ts)| (id.as_ref().to_string(), ts.clone()))
        .collect();
    let mut seen = HashSet::new();
    let long_term = graphs[..=at]
        .iter()
        .flat_map(|(_, ts)| ts)
        .filter(|t| seen.insert(*t))
        .cloned()
        .collect();
    Ok(MemoryGraphs { short_term, long_term })
}

pub fn build_memory(clip: &[TimepointRecord], at: usize, k: usize) -> Result<MemoryGraphs, MemoryError> {
    let graphs: Vec<(&str, Vec<Triplet>)> = clip
        .iter()
        .map(|r| (r.timepoint_id.as_str(), r.scene_graph.clone()))
        .collect();
    build_memory_from(&graphs, at, k)
}

/// Incremental builder for streams where records of one clip arrive in order.
#[derive(Debug, Clone)]
pub struct MemoryTracker {
    k: usize,
    clip_id: Option<String>,
    memory: MemoryGraphs,
    seen: HashSet<Triplet>,
}

impl MemoryTracker {
    pub fn new(k: usize) -> Result<Self, MemoryError> {
        if k == 0 {
            return Err(MemoryError::Usage("short-term buffer length must be at least 1".into()));
        }
        Ok(Self {
            k,
            clip_id: None,
            memory: MemoryGraphs::default(),
            seen: HashSet::new(),
        })
    }

    /// Advance to `record`; a new clip id resets both tiers.
    pub fn push(&mut self, record: &TimepointRecord) -> &MemoryGraphs {
        if self.clip_id.as_deref() != Some(record.clip_id.as_str()) {
            self.clip_id = Some(record.clip_id.clone());
            self.memory = MemoryGraphs::default();
            self.seen.clear();
        }
        self.memory
            .short_term
            .push((record.timepoint_id.clone(), record.scene_graph.clone()));
        if self.memory.short_term.len() > self.k {
            self.memory.short_term.remove(0);
        }
        for t in &record.scene_graph {
            if self.seen.insert(t.clone()) {
                self.memory.long_term.push(t.clone());
            }
        }
        &self.memory
    }
}

fn render_list(ts: &[Triplet]) -> String {
    if ts.is_empty() {
        return "-".into();
    }
    ts.iter()
        .map(|t| canonical_triplet_string(t).unwrap_or_else(|_| format!("({},{},{})", t.subject, t.object, t.predicate)))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn render_memory(m: &MemoryGraphs) -> String {
    let mut out = String::from("SHORT_TERM\n");
    for (id, ts) in &m.short_term {
        out.push('@');
        out.push_str(id);
        out.push(' ');
        out.push_str(&render_list(ts));
        out.push('\n');
    }
    out.push_str("LONG_TERM\n");
    out.push_str(&render_list(&m.long_term));
    out.push('\n');
    out
}

fn parse_list(s: &str, line: usize) -> Result<Vec<Triplet>, MemoryError> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|p| {
            Triplet::parse_canonical(p).map_err(|e| MemoryError::Parse {
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Inverse of [`render_memory`].
pub fn parse_memory(text: &str) -> Result<MemoryGraphs, MemoryError> {
    let lines: Vec<&str> = text.lines().collect();
    let err = |line: usize, message: &str| MemoryError::Parse {
        line: line + 1,
        message: message.to_string(),
    };
    if lines.first() != Some(&"SHORT_TERM") {
        return Err(err(0, "expected SHORT_TERM"));
    }
    let mut m = MemoryGraphs::default();
    let mut i = 1;
    while i < lines.len() && lines[i].starts_with('@') {
        let (id, rest) = lines[i][1..].split_once(' ').ok_or_else(|| err(i, "expected '@<id> <triplets>'"))?;
        m.short_term.push((id.to_string(), parse_list(rest, i + 1)?));
        i += 1;
    }
    if lines.get(i) != Some(&"LONG_TERM") {
        return Err(err(i, "expected LONG_TERM"));
    }
    let body = lines.get(i + 1).ok_or_else(|| err(i + 1, "missing long-term line"))?;
    m.long_term = parse_list(body, i + 2)?;
    if lines.len() > i + 2 {
        return Err(err(i + 2, "trailing content"));
    }
    Ok(m)
}
