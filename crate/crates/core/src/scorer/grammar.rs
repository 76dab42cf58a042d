//! Answer wire grammar per task.
//!
//! | shape      | tasks                                              | canonical form            |
//! |------------|----------------------------------------------------|---------------------------|
//! | count      | people_counting                                    | `4`                       |
//! | integer    | estimate_time_until, estimate_status               | `15`                      |
//! | decimal    | distance_3d                                        | `2.35`                    |
//! | boolean    | is_completed, is_base_array_visible, ...           | `true` / `false`          |
//! | label      | interaction, attribute, action, robot steps, gaze object | `drill` or `none`   |
//! | label set  | role_detection, tool_detection, entity_detection   | `drill,saw` or `none`     |
//! | sequence   | sorted_entity_detection                            | `nurse,drill,patient`     |
//! | bbox       | detection_2d                                       | `x,y,w,h` integers        |
//! | point3     | detection_3d                                       | `1.20,0.50,1.00`          |
//! | point2     | gaze_location                                      | `x,y` integers            |
//! | triplets   | scene_graph_generation                             | `(s,o,p);(s,o,p)` or `none` |
//! | text       | monitor_text_ocr                                   | verbatim single line      |
//!
//! Ground truth is parsed strictly; predictions are parsed leniently.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::domain::{is_canonical_label, normalize_label, TaskKind, Triplet};

pub const NONE: &str = "none";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerShape {
    Count,
    Integer,
    Decimal,
    Boolean,
    Label,
    LabelSet,
    Sequence,
    BBox,
    Point3,
    Point2,
    Triplets,
    Text,
}

pub fn shape(task: TaskKind) -> AnswerShape {
    use TaskKind::*;
    match task {
        PeopleCounting => AnswerShape::Count,
        EstimateTimeUntil | EstimateStatus => AnswerShape::Integer,
        Distance3D => AnswerShape::Decimal,
        IsCompleted | IsBaseArrayVisible | IsRobotCalibrated | SterilityBreachDetection => AnswerShape::Boolean,
        InteractionDetection | AttributeDetection | ActionDetection | RobotStepDetection
        | NextRobotStepEstimation | GazeObjectDetection => AnswerShape::Label,
        RoleDetection | ToolDetection | EntityDetection => AnswerShape::LabelSet,
        SortedEntityDetection => AnswerShape::Sequence,
        Detection2D => AnswerShape::BBox,
        Detection3D => AnswerShape::Point3,
        GazeLocation => AnswerShape::Point2,
        SceneGraphGeneration => AnswerShape::Triplets,
        MonitorTextOCR => AnswerShape::Text,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Answer {
    Number(f64),
    Label(String),
    Set(BTreeSet<String>),
    Seq(Vec<String>),
    Coords(Vec<f64>),
    Triplets(BTreeSet<Triplet>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("answer {answer:?} does not match the {task} grammar")]
pub struct GrammarError {
    pub task: TaskKind,
    pub answer: String,
}

// ---- formatting -----------------------------------------------------------

pub fn fmt_bool(b: bool) -> String {
    if b { "true" } else { "false" }.to_string()
}

pub fn fmt_decimal(v: f64, dp: usize) -> String {
    let s = format!("{v:.dp$}");
    // -0.00 is not a distinct answer
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn fmt_int(v: f64) -> String {
    fmt_decimal(v.round(), 0)
}

/// Sorted, deduplicated, comma-joined; `none` when empty.
pub fn fmt_set<I, S>(labels: I) -> String
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let set: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
    if set.is_empty() {
        NONE.to_string()
    } else {
        set.into_iter().collect::<Vec<_>>().join(",")
    }
}

pub fn fmt_seq(labels: &[String]) -> String {
    if labels.is_empty() {
        NONE.to_string()
    } else {
        labels.join(",")
    }
}

pub fn fmt_coords(values: &[f64], dp: usize) -> String {
    values.iter().map(|v| fmt_decimal(*v, dp)).collect::<Vec<_>>().join(",")
}

pub fn fmt_triplets<'a, I: IntoIterator<Item = &'a Triplet>>(triplets: I) -> String {
    let set: BTreeSet<String> = triplets
        .into_iter()
        .map(|t| format!("({},{},{})", t.subject, t.object, t.predicate))
        .collect();
    if set.is_empty() {
        NONE.to_string()
    } else {
        set.into_iter().collect::<Vec<_>>().join(";")
    }
}

// ---- strict parsing -------------------------------------------------------

fn is_uint(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

fn is_int(s: &str) -> bool {
    is_uint(s.strip_prefix('-').unwrap_or(s))
}

fn is_fixed(s: &str, max_dp: usize) -> bool {
    let body = s.strip_prefix('-').unwrap_or(s);
    match body.split_once('.') {
        None => is_uint(body),
        Some((int, frac)) => is_uint(int) && is_uint(frac) && frac.len() <= max_dp,
    }
}

fn strict_labels(s: &str) -> Option<Vec<String>> {
    if s == NONE {
        return Some(Vec::new());
    }
    let parts: Vec<String> = s.split(',').map(str::to_string).collect();
    parts.iter().all(|p| is_canonical_label(p)).then_some(parts)
}

/// Parse a ground-truth answer, rejecting anything outside canonical form.
pub fn parse_strict(task: TaskKind, s: &str) -> Result<Answer, GrammarError> {
    let err = || GrammarError {
        task,
        answer: s.to_string(),
    };
    let ok = match shape(task) {
        AnswerShape::Count | AnswerShape::Integer => is_uint(s).then(|| Answer::Number(s.parse().unwrap())),
        AnswerShape::Decimal => {
            (is_fixed(s, 4) && !s.starts_with('-')).then(|| Answer::Number(s.parse().unwrap()))
        }
        AnswerShape::Boolean => matches!(s, "true" | "false").then(|| Answer::Label(s.to_string())),
        AnswerShape::Label => is_canonical_label(s).then(|| Answer::Label(s.to_string())),
        AnswerShape::LabelSet => strict_labels(s).and_then(|parts| {
            let set: BTreeSet<String> = parts.iter().cloned().collect();
            // canonical sets are sorted and duplicate-free
            (set.iter().eq(parts.iter()) && (set.is_empty() || !set.contains(NONE))).then_some(Answer::Set(set))
        }),
        AnswerShape::Sequence => strict_labels(s).map(Answer::Seq),
        AnswerShape::BBox => {
            let parts: Vec<&str> = s.split(',').collect();
            (parts.len() == 4 && parts.iter().all(|p| is_int(p)))
                .then(|| parts.iter().map(|p| p.parse::<f64>().unwrap()).collect::<Vec<_>>())
                .filter(|v| v[2] > 0.0 && v[3] > 0.0)
                .map(Answer::Coords)
        }
        AnswerShape::Point3 => {
            let parts: Vec<&str> = s.split(',').collect();
            (parts.len() == 3 && parts.iter().all(|p| is_fixed(p, 4)))
                .then(|| Answer::Coords(parts.iter().map(|p| p.parse().unwrap()).collect()))
        }
        AnswerShape::Point2 => {
            let parts: Vec<&str> = s.split(',').collect();
            (parts.len() == 2 && parts.iter().all(|p| is_int(p)))
                .then(|| Answer::Coords(parts.iter().map(|p| p.parse().unwrap()).collect()))
        }
        AnswerShape::Triplets => {
            if s == NONE {
                Some(Answer::Triplets(BTreeSet::new()))
            } else {
                let parts: Vec<&str> = s.split(';').collect();
                let parsed: Option<Vec<Triplet>> = parts
                    .iter()
                    .map(|p| {
                        (p.starts_with('(') && p.ends_with(')') && !p.contains(' '))
                            .then(|| Triplet::parse_canonical(p).ok())
                            .flatten()
                    })
                    .collect();
                parsed.and_then(|ts| {
                    let canonical = fmt_triplets(&ts);
                    (canonical == s).then(|| Answer::Triplets(ts.into_iter().collect()))
                })
            }
        }
        AnswerShape::Text => {
            (!s.trim().is_empty() && !s.contains(['\n', '\r'])).then(|| Answer::Text(s.to_string()))
        }
    };
    ok.ok_or_else(err)
}

// ---- lenient parsing ------------------------------------------------------

/// Every decimal number appearing in `s`, in order.
pub fn extract_numbers(s: &str) -> Vec<f64> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let neg = bytes[i] == b'-' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit();
        if bytes[i].is_ascii_digit() || neg {
            let start = i;
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if let Ok(v) = s[start..i].parse::<f64>() {
                out.push(v);
            }
        } else {
            i += 1;
        }
    }
    out
}

fn clean(s: &str) -> &str {
    s.trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '[' | ']' | '{' | '}'))
        .trim_end_matches('.')
        .trim()
}

fn lenient_label(s: &str) -> Option<String> {
    let l = normalize_label(clean(s)).ok()?;
    Some(l.trim_matches(|c: char| !c.is_alphanumeric() && c != '_').to_string()).filter(|l| !l.is_empty())
}

fn lenient_labels(s: &str) -> Vec<String> {
    let c = clean(s);
    if c.eq_ignore_ascii_case(NONE) || c.is_empty() {
        return Vec::new();
    }
    c.split([',', ';', '\n']).filter_map(lenient_label).collect()
}

fn lenient_bool(s: &str) -> Option<String> {
    match lenient_label(s)?.as_str() {
        "true" | "yes" | "y" | "1" => Some("true".into()),
        "false" | "no" | "n" | "0" => Some("false".into()),
        _ => None,
    }
}

fn lenient_triplets(s: &str) -> Option<BTreeSet<Triplet>> {
    let c = clean(s);
    if c.eq_ignore_ascii_case(NONE) || c.is_empty() {
        return Some(BTreeSet::new());
    }
    let groups: Vec<&str> = if c.contains('(') {
        c.split('(')
            .filter_map(|g| g.split_once(')').map(|(inner, _)| inner))
            .collect()
    } else {
        c.split(';').collect()
    };
    let mut out = BTreeSet::new();
    for g in groups {
        let parts: Vec<Option<String>> = g.split(',').map(lenient_label).collect();
        if let [Some(a), Some(b), Some(p)] = parts.as_slice() {
            out.insert(Triplet::new(a.clone(), b.clone(), p.clone()));
        }
    }
    (!out.is_empty()).then_some(out)
}

/// Parse a free-text prediction. `None` marks it unparseable.
pub fn parse_lenient(task: TaskKind, s: &str) -> Option<Answer> {
    match shape(task) {
        AnswerShape::Count | AnswerShape::Integer | AnswerShape::Decimal => {
            extract_numbers(s).first().copied().map(Answer::Number)
        }
        AnswerShape::Boolean => lenient_bool(s).map(Answer::Label),
        AnswerShape::Label => lenient_label(s).map(Answer::Label),
        AnswerShape::LabelSet => Some(Answer::Set(lenient_labels(s).into_iter().collect())),
        AnswerShape::Sequence => Some(Answer::Seq(lenient_labels(s))),
        AnswerShape::BBox => {
            let n = extract_numbers(s);
            (n.len() >= 4).then(|| Answer::Coords(n[..4].to_vec()))
        }
        AnswerShape::Point3 => {
            let n = extract_numbers(s);
            (n.len() >= 3).then(|| Answer::Coords(n[..3].to_vec()))
        }
        AnswerShape::Point2 => {
            let n = extract_numbers(s);
            (n.len() >= 2).then(|| Answer::Coords(n[..2].to_vec()))
        }
        AnswerShape::Triplets => lenient_triplets(s).map(Answer::Triplets),
        AnswerShape::Text => Some(Answer::Text(s.to_string())),
    }
}
