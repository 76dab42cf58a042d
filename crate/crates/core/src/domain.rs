//! Domain types shared by every stage: the task taxonomy, annotated timepoints,
//! scene-graph triplets and QA pairs.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Characters reserved by the answer and memory wire formats.
pub const RESERVED_CHARS: [char; 4] = [',', ';', '(', ')'];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("invalid label {0:?}")]
    InvalidLabel(String),
    #[error("invalid triplet {0}")]
    InvalidTriplet(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
}

macro_rules! task_kinds {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// The benchmark tasks. Each one owns exactly one question template
        /// (see `qagen`) and one scoring rule (see `scorer`).
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum TaskKind {
            $($variant),+
        }

        impl TaskKind {
            pub const ALL: [TaskKind; 23] = [$(TaskKind::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $(TaskKind::$variant => $name),+
                }
            }
        }

        impl FromStr for TaskKind {
            type Err = DomainError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok(TaskKind::$variant),)+
                    other => Err(DomainError::UnknownTask(other.to_string())),
                }
            }
        }
    };
}

task_kinds! {
    PeopleCounting => "people_counting",
    RoleDetection => "role_detection",
    InteractionDetection => "interaction_detection",
    AttributeDetection => "attribute_detection",
    ActionDetection => "action_detection",
    EstimateTimeUntil => "estimate_time_until",
    EstimateStatus => "estimate_status",
    IsCompleted => "is_completed",
    IsBaseArrayVisible => "is_base_array_visible",
    IsRobotCalibrated => "is_robot_calibrated",
    SterilityBreachDetection => "sterility_breach_detection",
    RobotStepDetection => "robot_step_detection",
    NextRobotStepEstimation => "next_robot_step_estimation",
    Detection2D => "detection_2d",
    Detection3D => "detection_3d",
    Distance3D => "distance_3d",
    ToolDetection => "tool_detection",
    SceneGraphGeneration => "scene_graph_generation",
    EntityDetection => "entity_detection",
    SortedEntityDetection => "sorted_entity_detection",
    GazeLocation => "gaze_location",
    GazeObjectDetection => "gaze_object_detection",
    MonitorTextOCR => "monitor_text_ocr",
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for TaskKind {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for TaskKind {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Lowercase, trim, and collapse internal whitespace runs to a single `_`.
pub fn normalize_label(raw: &str) -> Result<String, DomainError> {
    let joined = raw
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("_");
    if joined.is_empty() {
        return Err(DomainError::InvalidLabel(raw.to_string()));
    }
    Ok(joined)
}

/// True when `s` is already in canonical label form and carries no reserved
/// wire-format characters.
pub fn is_canonical_label(s: &str) -> bool {
    !s.is_empty()
        && !s.contains(RESERVED_CHARS)
        && normalize_label(s).map(|n| n == s).unwrap_or(false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Person,
    Tool,
    Equipment,
    Patient,
}

/// Axis-aligned box in pixels: `[x, y, w, h]`, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center_x(&self) -> f64 {
        self.x + self.w / 2.0
    }

    /// Inclusive on all four edges.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.x + self.w && py >= self.y && py <= self.y + self.h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        let inter = ix.max(0.0) * iy.max(0.0);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub label: String,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid3d: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bbox2d: BTreeMap<String, BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sterile: Option<bool>,
}

impl Entity {
    pub fn new(id: impl Into<String>, label: impl Into<String>, category: Category) -> Self {
        Self {
            id: id.into(),
            label: label.into(),
            category,
            role: None,
            attributes: BTreeMap::new(),
            centroid3d: None,
            bbox2d: BTreeMap::new(),
            sterile: None,
        }
    }
}

/// A `(subject, object, predicate)` scene-graph relation, e.g. a surgeon
/// holding a drill is `(head_surgeon, drill, holding)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[String; 3]", into = "[String; 3]")]
pub struct Triplet {
    pub subject: String,
    pub object: String,
    pub predicate: String,
}

impl Triplet {
    pub fn new(subject: impl Into<String>, object: impl Into<String>, predicate: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            object: object.into(),
            predicate: predicate.into(),
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        for part in [&self.subject, &self.object, &self.predicate] {
            if !is_canonical_label(part) {
                return Err(DomainError::InvalidTriplet(format!(
                    "({}, {}, {})",
                    self.subject, self.object, self.predicate
                )));
            }
        }
        Ok(())
    }

    /// Parse a canonical `(s,o,p)` string. Surrounding whitespace and the
    /// parentheses are optional; inner whitespace around commas is tolerated.
    pub fn parse_canonical(s: &str) -> Result<Triplet, DomainError> {
        let inner = s.trim();
        let inner = inner.strip_prefix('(').unwrap_or(inner);
        let inner = inner.strip_suffix(')').unwrap_or(inner);
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(DomainError::InvalidTriplet(s.to_string()));
        }
        let t = Triplet::new(parts[0], parts[1], parts[2]);
        t.validate()?;
        Ok(t)
    }
}

impl From<[String; 3]> for Triplet {
    fn from([subject, object, predicate]: [String; 3]) -> Self {
        Triplet { subject, object, predicate }
    }
}

impl From<Triplet> for [String; 3] {
    fn from(t: Triplet) -> Self {
        [t.subject, t.object, t.predicate]
    }
}

/// `"(subject,object,predicate)"` with no spaces.
pub fn canonical_triplet_string(t: &Triplet) -> Result<String, DomainError> {
    t.validate()?;
    Ok(format!("({},{},{})", t.subject, t.object, t.predicate))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Action,
    Phase,
    RobotStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub name: String,
    pub kind: EventKind,
    pub start_s: f64,
    pub end_s: f64,
}

impl TimelineEvent {
    pub fn new(name: impl Into<String>, kind: EventKind, start_s: f64, end_s: f64) -> Self {
        Self {
            name: name.into(),
            kind,
            start_s,
            end_s,
        }
    }

    /// Closed interval containment.
    pub fn contains(&self, t: f64) -> bool {
        self.start_s <= t && t <= self.end_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaze {
    pub x: f64,
    pub y: f64,
    pub view: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimepointRecord {
    pub dataset: String,
    pub clip_id: String,
    pub timepoint_id: String,
    pub time_s: f64,
    #[serde(default)]
    pub entities: Vec<Entity>,
    #[serde(default)]
    pub scene_graph: Vec<Triplet>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub timeline: Vec<TimelineEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaze: Option<Gaze>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor_text: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub robot_flags: BTreeMap<String, bool>,
    pub reference_view: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub image_dims: BTreeMap<String, [u32; 2]>,
}

/// A violated record invariant, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct InvariantViolation {
    pub field: String,
    pub message: String,
}

fn violation(field: impl Into<String>, message: impl Into<String>) -> InvariantViolation {
    InvariantViolation {
        field: field.into(),
        message: message.into(),
    }
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || c.is_control())
}

impl TimepointRecord {
    pub fn entity(&self, label: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.label == label)
    }

    pub fn events(&self, kind: EventKind) -> impl Iterator<Item = &TimelineEvent> {
        self.timeline.iter().filter(move |e| e.kind == kind)
    }

    /// Check every record-level invariant.
    pub fn validate(&self) -> Result<(), InvariantViolation> {
        if self.dataset.is_empty() {
            return Err(violation("dataset", "empty"));
        }
        for (field, v) in [
            ("clip_id", &self.clip_id),
            ("timepoint_id", &self.timepoint_id),
            ("reference_view", &self.reference_view),
        ] {
            if !is_identifier(v) {
                return Err(violation(field, format!("{v:?} is empty or contains whitespace")));
            }
        }
        if !self.time_s.is_finite() || self.time_s < 0.0 {
            return Err(violation("time_s", format!("{} is not a non-negative finite time", self.time_s)));
        }

        let mut labels = HashSet::new();
        for (i, e) in self.entities.iter().enumerate() {
            let field = |f: &str| format!("entities[{i}].{f}");
            if !is_canonical_label(&e.label) {
                return Err(violation(field("label"), format!("{:?} is not a canonical label", e.label)));
            }
            if !labels.insert(e.label.as_str()) {
                return Err(violation(field("label"), format!("duplicate label {:?}", e.label)));
            }
            if let Some(role) = &e.role {
                if e.category != Category::Person {
                    return Err(violation(field("role"), "only person entities carry a role"));
                }
                if !is_canonical_label(role) {
                    return Err(violation(field("role"), format!("{role:?} is not a canonical label")));
                }
            }
            for (k, v) in &e.attributes {
                if !is_canonical_label(k) || !is_canonical_label(v) {
                    return Err(violation(field("attributes"), format!("{k:?} -> {v:?} is not canonical")));
                }
            }
            if let Some(c) = e.centroid3d {
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(violation(field("centroid3d"), "non-finite coordinate"));
                }
            }
            for (view, b) in &e.bbox2d {
                if !(b.w > 0.0 && b.h > 0.0) || !b.x.is_finite() || !b.y.is_finite() || !b.w.is_finite() || !b.h.is_finite() {
                    return Err(violation(field("bbox2d"), format!("view {view}: box must be finite with positive size")));
                }
            }
        }

        for (i, t) in self.scene_graph.iter().enumerate() {
            t.validate()
                .map_err(|e| violation(format!("scene_graph[{i}]"), e.to_string()))?;
            for endpoint in [&t.subject, &t.object] {
                if !labels.contains(endpoint.as_str()) {
                    return Err(violation(
                        format!("scene_graph[{i}]"),
                        format!("endpoint {endpoint:?} names no entity"),
                    ));
                }
            }
        }

        let mut max_end = f64::NEG_INFINITY;
        for kind in [EventKind::Action, EventKind::Phase, EventKind::RobotStep] {
            let mut prev_end = f64::NEG_INFINITY;
            for e in self.events(kind) {
                if e.name.is_empty() || !is_canonical_label(&e.name) {
                    return Err(violation("timeline", format!("event name {:?} is not canonical", e.name)));
                }
                if !(e.start_s.is_finite() && e.end_s.is_finite() && e.end_s > e.start_s) {
                    return Err(violation("timeline", format!("event {} needs end_s > start_s", e.name)));
                }
                if e.start_s < prev_end {
                    return Err(violation(
                        "timeline",
                        format!("{kind:?} events overlap or are unsorted at {}", e.name),
                    ));
                }
                prev_end = e.end_s;
                max_end = max_end.max(e.end_s);
            }
        }
        if !self.timeline.is_empty() && self.time_s > max_end {
            return Err(violation("time_s", format!("{} lies past the timeline end {max_end}", self.time_s)));
        }

        if let Some(g) = &self.gaze {
            let Some([w, h]) = self.image_dims.get(&g.view) else {
                return Err(violation("gaze", format!("view {:?} has no image_dims", g.view)));
            };
            if !(g.x >= 0.0 && g.y >= 0.0 && g.x <= *w as f64 && g.y <= *h as f64) {
                return Err(violation("gaze", format!("({}, {}) lies outside {w}x{h}", g.x, g.y)));
            }
        }
        if let Some(text) = &self.monitor_text {
            if text.trim().is_empty() || text.contains(['\n', '\r']) {
                return Err(violation("monitor_text", "must be a non-empty single line"));
            }
        }
        Ok(())
    }
}

/// One benchmark item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAPair {
    pub id: String,
    pub dataset: String,
    pub clip_id: String,
    pub timepoint_id: String,
    pub task: TaskKind,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
}

impl QAPair {
    pub fn new(record: &TimepointRecord, task: TaskKind, question: String, answer: String) -> Self {
        let id = qa_id(&record.dataset, &record.clip_id, &record.timepoint_id, task, &question);
        Self {
            id,
            dataset: record.dataset.clone(),
            clip_id: record.clip_id.clone(),
            timepoint_id: record.timepoint_id.clone(),
            task,
            question,
            answer,
            context: None,
        }
    }

    /// Normalized answer used for frequency counting.
    pub fn answer_key(&self) -> String {
        self.answer.trim().to_lowercase()
    }

    /// Normalized question used for frequency counting.
    pub fn question_key(&self) -> String {
        self.question.trim().to_lowercase()
    }
}

/// 64-bit hex digest of the provenance tuple.
pub fn qa_id(dataset: &str, clip_id: &str, timepoint_id: &str, task: TaskKind, question: &str) -> String {
    let mut h = Sha256::new();
    for part in [dataset, clip_id, timepoint_id, task.name(), question] {
        h.update(part.as_bytes());
        h.update([0x1f]);
    }
    hex::encode(&h.finalize()[..8])
}

/// Derive an independent 64-bit seed for a named stage or item.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
