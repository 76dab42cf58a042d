//! QA generation: one canonical question template per task, answered from a
//! single annotated timepoint.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{derive_seed, Category, EventKind, QAPair, TaskKind, TimelineEvent, TimepointRecord, Triplet};
use crate::scorer::grammar::{fmt_bool, fmt_coords, fmt_decimal, fmt_int, fmt_seq, fmt_set, fmt_triplets, NONE};

/// Bumped whenever any question wording or answer format changes.
pub const TEMPLATE_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub seed: u64,
    /// Fraction of non-interacting ordered entity pairs asked about, answer `none`.
    pub negative_pair_rate: f64,
    pub distance_round_dp: usize,
    /// Views for 2D detection questions; the record's reference view when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub views: Option<Vec<String>>,
    /// Predicates that count as physical contact.
    pub contact_predicates: BTreeSet<String>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            negative_pair_rate: 0.2,
            distance_round_dp: 2,
            views: None,
            contact_predicates: ["holding", "touching"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid generation config: {0}")]
pub struct GenConfigError(String);

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenConfigError> {
        if !(0.0..=1.0).contains(&self.negative_pair_rate) {
            return Err(GenConfigError(format!("negative_pair_rate {} outside [0,1]", self.negative_pair_rate)));
        }
        if self.distance_round_dp > 4 {
            return Err(GenConfigError(format!("distance_round_dp {} outside [0,4]", self.distance_round_dp)));
        }
        Ok(())
    }
}

struct Emitter<'a> {
    record: &'a TimepointRecord,
    out: Vec<QAPair>,
}

impl Emitter<'_> {
    fn emit(&mut self, task: TaskKind, question: String, answer: String) {
        self.out.push(QAPair::new(self.record, task, question, answer));
    }
}

/// Event of `kind` active at `t`: the one with `start <= t < end`, else one
/// ending exactly at `t`.
pub fn active_event(record: &TimepointRecord, kind: EventKind, t: f64) -> Option<&TimelineEvent> {
    record
        .events(kind)
        .find(|e| e.start_s <= t && t < e.end_s)
        .or_else(|| record.events(kind).find(|e| e.end_s == t))
}

fn hash_unit(seed: u64, key: &str) -> f64 {
    (derive_seed(seed, key) >> 11) as f64 / (1u64 << 53) as f64
}

fn is_contact(cfg: &GenConfig, t: &Triplet) -> bool {
    cfg.contact_predicates.contains(&t.predicate)
}

pub fn gen_people_counting(record: &TimepointRecord) -> QAPair {
    let n = record.entities.iter().filter(|e| e.category == Category::Person).count();
    QAPair::new(
        record,
        TaskKind::PeopleCounting,
        "How many people are in the operating room?".into(),
        n.to_string(),
    )
}

pub fn gen_distance_3d(record: &TimepointRecord, cfg: &GenConfig) -> Vec<QAPair> {
    let mut located: Vec<(&str, [f64; 3])> = record
        .entities
        .iter()
        .filter_map(|e| e.centroid3d.map(|c| (e.label.as_str(), c)))
        .collect();
    located.sort_by(|a, b| a.0.cmp(b.0));
    let mut out = Vec::new();
    for (i, (a, ca)) in located.iter().enumerate() {
        for (b, cb) in &located[i + 1..] {
            let d = ca.iter().zip(cb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            out.push(QAPair::new(
                record,
                TaskKind::Distance3D,
                format!("What is the distance between the {a} and the {b} in meters?"),
                fmt_decimal(d, cfg.distance_round_dp),
            ));
        }
    }
    out
}

/// True when a contact predicate joins a sterile and a non-sterile entity.
pub fn sterility_breach(record: &TimepointRecord, cfg: &GenConfig) -> bool {
    record.scene_graph.iter().filter(|t| is_contact(cfg, t)).any(|t| {
        let s = record.entity(&t.subject).and_then(|e| e.sterile);
        let o = record.entity(&t.object).and_then(|e| e.sterile);
        matches!((s, o), (Some(a), Some(b)) if a != b)
    })
}

pub fn gen_sterility_breach(record: &TimepointRecord, cfg: &GenConfig) -> Option<QAPair> {
    record.entities.iter().any(|e| e.sterile.is_some()).then(|| {
        QAPair::new(
            record,
            TaskKind::SterilityBreachDetection,
            "Is there a sterility breach?".into(),
            fmt_bool(sterility_breach(record, cfg)),
        )
    })
}

/// Label of the smallest tool box in the gaze view containing the gaze point.
pub fn gaze_target(record: &TimepointRecord) -> Option<String> {
    let gaze = record.gaze.as_ref()?;
    let hit = record
        .entities
        .iter()
        .filter(|e| e.category == Category::Tool)
        .filter_map(|e| e.bbox2d.get(&gaze.view).map(|b| (e, b)))
        .filter(|(_, b)| b.contains(gaze.x, gaze.y))
        .min_by(|(ea, a), (eb, b)| a.area().total_cmp(&b.area()).then_with(|| ea.label.cmp(&eb.label)));
    Some(hit.map_or_else(|| NONE.to_string(), |(e, _)| e.label.clone()))
}

pub fn gen_gaze(record: &TimepointRecord) -> Vec<QAPair> {
    let Some(gaze) = &record.gaze else {
        return Vec::new();
    };
    vec![
        QAPair::new(
            record,
            TaskKind::GazeLocation,
            "Where is the surgeon looking in the image?".into(),
            fmt_coords(&[gaze.x.round(), gaze.y.round()], 0),
        ),
        QAPair::new(
            record,
            TaskKind::GazeObjectDetection,
            "What is the surgeon looking at?".into(),
            gaze_target(record).expect("gaze present"),
        ),
    ]
}

pub fn gen_temporal(record: &TimepointRecord) -> Vec<QAPair> {
    let t = record.time_s;
    let mut out = Vec::new();
    // earliest upcoming start per action name
    let mut upcoming: BTreeMap<&str, f64> = BTreeMap::new();
    let mut completed: BTreeMap<&str, bool> = BTreeMap::new();
    for e in record.events(EventKind::Action) {
        if e.start_s > t {
            let s = upcoming.entry(e.name.as_str()).or_insert(e.start_s);
            *s = s.min(e.start_s);
        }
        *completed.entry(e.name.as_str()).or_default() |= e.end_s <= t;
    }
    for (name, start) in upcoming {
        out.push(QAPair::new(
            record,
            TaskKind::EstimateTimeUntil,
            format!("How many seconds until {name} starts?"),
            fmt_int(start - t),
        ));
    }
    if let Some(e) = record.events(EventKind::Action).find(|e| e.start_s < t && t < e.end_s) {
        out.push(QAPair::new(
            record,
            TaskKind::EstimateStatus,
            "What is the progress of the current action in percent?".into(),
            fmt_int(100.0 * (t - e.start_s) / (e.end_s - e.start_s)),
        ));
    }
    for (name, done) in completed {
        out.push(QAPair::new(
            record,
            TaskKind::IsCompleted,
            format!("Has {name} already been performed?"),
            fmt_bool(done),
        ));
    }
    out
}

fn gen_interactions(em: &mut Emitter, cfg: &GenConfig) {
    let record = em.record;
    let mut edges: BTreeMap<(&str, &str), BTreeSet<&str>> = BTreeMap::new();
    for tr in &record.scene_graph {
        edges
            .entry((tr.subject.as_str(), tr.object.as_str()))
            .or_default()
            .insert(tr.predicate.as_str());
    }
    for ((s, o), preds) in &edges {
        // several predicates on one pair: the first in sort order is the answer
        let p = preds.iter().next().expect("non-empty");
        em.emit(
            TaskKind::InteractionDetection,
            format!("What is the interaction between the {s} and the {o}?"),
            p.to_string(),
        );
    }
    if cfg.negative_pair_rate <= 0.0 {
        return;
    }
    for a in &record.entities {
        for b in &record.entities {
            if a.label == b.label || edges.contains_key(&(a.label.as_str(), b.label.as_str())) {
                continue;
            }
            let key = format!("neg\x1f{}\x1f{}\x1f{}\x1f{}\x1f{}", record.dataset, record.clip_id, record.timepoint_id, a.label, b.label);
            if hash_unit(cfg.seed, &key) < cfg.negative_pair_rate {
                em.emit(
                    TaskKind::InteractionDetection,
                    format!("What is the interaction between the {} and the {}?", a.label, b.label),
                    NONE.to_string(),
                );
            }
        }
    }
}

fn gen_remaining(em: &mut Emitter, cfg: &GenConfig) {
    let record = em.record;
    let persons: Vec<_> = record.entities.iter().filter(|e| e.category == Category::Person).collect();
    if !persons.is_empty() {
        em.emit(
            TaskKind::RoleDetection,
            "What roles are present in the operating room?".into(),
            fmt_set(persons.iter().filter_map(|e| e.role.clone())),
        );
    }

    gen_interactions(em, cfg);

    for e in &record.entities {
        for (attr, value) in &e.attributes {
            em.emit(
                TaskKind::AttributeDetection,
                format!("What is the {attr} of the {}?", e.label),
                value.clone(),
            );
        }
    }

    let t = record.time_s;
    if record.events(EventKind::Action).next().is_some() {
        em.emit(
            TaskKind::ActionDetection,
            "What is the current action?".into(),
            active_event(record, EventKind::Action, t).map_or_else(|| NONE.to_string(), |e| e.name.clone()),
        );
    }
    if record.events(EventKind::RobotStep).next().is_some() {
        em.emit(
            TaskKind::RobotStepDetection,
            "What is the current robot step?".into(),
            active_event(record, EventKind::RobotStep, t).map_or_else(|| NONE.to_string(), |e| e.name.clone()),
        );
        em.emit(
            TaskKind::NextRobotStepEstimation,
            "What is the next robot step?".into(),
            record
                .events(EventKind::RobotStep)
                .find(|e| e.start_s > t)
                .map_or_else(|| NONE.to_string(), |e| e.name.clone()),
        );
    }

    for (flag, task, question) in [
        ("base_array_visible", TaskKind::IsBaseArrayVisible, "Is the robot base array visible?"),
        ("calibrated", TaskKind::IsRobotCalibrated, "Is the robot calibrated?"),
    ] {
        if let Some(v) = record.robot_flags.get(flag) {
            em.emit(task, question.into(), fmt_bool(*v));
        }
    }

    let default_views = [record.reference_view.clone()];
    let views: &[String] = cfg.views.as_deref().unwrap_or(&default_views);
    for view in views {
        for e in &record.entities {
            if let Some(b) = e.bbox2d.get(view) {
                let coords = [b.x.round(), b.y.round(), b.w.round().max(1.0), b.h.round().max(1.0)];
                em.emit(
                    TaskKind::Detection2D,
                    format!("Where is the {} in the {view} image?", e.label),
                    fmt_coords(&coords, 0),
                );
            }
        }
    }
    for e in &record.entities {
        if let Some(c) = e.centroid3d {
            em.emit(
                TaskKind::Detection3D,
                format!("Where is the center of the {} in 3D?", e.label),
                fmt_coords(&c, cfg.distance_round_dp),
            );
        }
    }

    if record.entities.iter().any(|e| e.category == Category::Tool) {
        let used: BTreeSet<&str> = record
            .scene_graph
            .iter()
            .filter(|t| is_contact(cfg, t))
            .flat_map(|t| [t.subject.as_str(), t.object.as_str()])
            .filter(|l| record.entity(l).is_some_and(|e| e.category == Category::Tool))
            .collect();
        em.emit(TaskKind::ToolDetection, "Which tools are currently used?".into(), fmt_set(used));
    }

    if !record.scene_graph.is_empty() {
        em.emit(
            TaskKind::SceneGraphGeneration,
            "What is the current scene graph?".into(),
            fmt_triplets(&record.scene_graph),
        );
    }

    if !record.entities.is_empty() {
        em.emit(
            TaskKind::EntityDetection,
            "Which entities are in the operating room?".into(),
            fmt_set(record.entities.iter().map(|e| e.label.clone())),
        );
    }

    let mut placed: Vec<(f64, &str)> = record
        .entities
        .iter()
        .filter_map(|e| e.bbox2d.get(&record.reference_view).map(|b| (b.center_x(), e.label.as_str())))
        .collect();
    if !placed.is_empty() {
        placed.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        let labels: Vec<String> = placed.iter().map(|(_, l)| l.to_string()).collect();
        em.emit(
            TaskKind::SortedEntityDetection,
            "List all entities from left to right.".into(),
            fmt_seq(&labels),
        );
    }

    if let Some(text) = &record.monitor_text {
        em.emit(TaskKind::MonitorTextOCR, "What is shown on the monitor?".into(), text.clone());
    }
}

/// Every QA pair derivable from one record, ordered by (task, question).
pub fn generate_record(record: &TimepointRecord, cfg: &GenConfig) -> Vec<QAPair> {
    let mut em = Emitter {
        record,
        out: Vec::new(),
    };
    em.out.push(gen_people_counting(record));
    em.out.extend(gen_distance_3d(record, cfg));
    em.out.extend(gen_sterility_breach(record, cfg));
    em.out.extend(gen_gaze(record));
    em.out.extend(gen_temporal(record));
    gen_remaining(&mut em, cfg);
    let mut out = em.out;
    out.sort_by(|a, b| (a.task, &a.question).cmp(&(b.task, &b.question)));
    out
}

/// Generate over a batch in parallel, preserving record order.
pub fn generate_all(records: &[TimepointRecord], cfg: &GenConfig) -> Vec<QAPair> {
    records
        .par_iter()
        .map(|r| generate_record(r, cfg))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Stream records through the generator in parallel chunks, handing pairs to
/// `sink` in deterministic order. Returns the number of pairs emitted.
pub fn generate_stream<I, E, F>(records: I, cfg: &GenConfig, chunk: usize, mut sink: F) -> Result<usize, E>
where
    I: IntoIterator<Item = Result<TimepointRecord, E>>,
    F: FnMut(&TimepointRecord, Vec<QAPair>) -> Result<(), E>,
{
    let mut buf = Vec::with_capacity(chunk);
    let mut n = 0;
    let mut flush = |buf: &mut Vec<TimepointRecord>, n: &mut usize| -> Result<(), E> {
        let per_record: Vec<Vec<QAPair>> = buf.par_iter().map(|r| generate_record(r, cfg)).collect();
        for (r, pairs) in buf.iter().zip(per_record) {
            *n += pairs.len();
            sink(r, pairs)?;
        }
        buf.clear();
        Ok(())
    };
    for r in records {
        buf.push(r?);
        if buf.len() >= chunk.max(1) {
            flush(&mut buf, &mut n)?;
        }
    }
    flush(&mut buf, &mut n)?;
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BBox, Entity, Gaze};

    fn person(label: &str, x: f64) -> Entity {
        let mut e = Entity::new(format!("id_{label}"), label, Category::Person);
        e.role = Some(label.into());
        e.bbox2d.insert("cam".into(), BBox::new(x, 0.0, 10.0, 10.0));
        e
    }

    fn record() -> TimepointRecord {
        TimepointRecord {
            dataset: "d".into(),
            clip_id: "c".into(),
            timepoint_id: "t".into(),
            time_s: 10.0,
            entities: vec![],
            scene_graph: vec![],
            timeline: vec![],
            gaze: None,
            monitor_text: None,
            robot_flags: BTreeMap::new(),
            reference_view: "cam".into(),
            image_dims: BTreeMap::from([("cam".to_string(), [640, 480])]),
        }
    }

    fn answers(pairs: &[QAPair], task: TaskKind) -> Vec<&str> {
        pairs.iter().filter(|p| p.task == task).map(|p| p.answer.as_str()).collect()
    }

    #[test]
    fn people_counting() {
        let mut r = record();
        assert_eq!(gen_people_counting(&r).answer, "0");
        r.entities = (0..4).map(|i| person(&format!("p{i}"), 0.0)).collect();
        r.entities.push(Entity::new("x", "drill", Category::Tool));
        assert_eq!(gen_people_counting(&r).answer, "4");
    }

    #[test]
    fn distances() {
        let mut r = record();
        let mut a = Entity::new("a", "a", Category::Tool);
        a.centroid3d = Some([0.0, 0.0, 0.0]);
        let mut b = Entity::new("b", "b", Category::Tool);
        b.centroid3d = Some([3.0, 4.0, 0.0]);
        let mut c = Entity::new("c", "c", Category::Tool);
        c.centroid3d = Some([0.0, 0.0, 0.0]);
        r.entities = vec![a, b, c];
        let d = gen_distance_3d(&r, &GenConfig::default());
        assert_eq!(d.len(), 3);
        assert_eq!(d[0].answer, "5.00");
        assert_eq!(d[1].answer, "0.00");
        assert!(d[0].question.contains("the a and the b"));
    }

    #[test]
    fn sterility() {
        let cfg = GenConfig::default();
        let mut r = record();
        let mut s = person("surgeon", 0.0);
        s.sterile = Some(true);
        let mut saw = Entity::new("s", "saw", Category::Tool);
        saw.sterile = Some(false);
        r.entities = vec![s, saw];
        assert_eq!(gen_sterility_breach(&r, &cfg).unwrap().answer, "false");
        r.scene_graph = vec![Triplet::new("surgeon", "saw", "looking_at")];
        assert_eq!(gen_sterility_breach(&r, &cfg).unwrap().answer, "false");
        r.scene_graph = vec![Triplet::new("surgeon", "saw", "touching")];
        assert_eq!(gen_sterility_breach(&r, &cfg).unwrap().answer, "true");
        r.entities[1].sterile = Some(true);
        assert_eq!(gen_sterility_breach(&r, &cfg).unwrap().answer, "false");
    }

    fn tool_box(label: &str, b: BBox) -> Entity {
        let mut e = Entity::new(label, label, Category::Tool);
        e.bbox2d.insert("cam".into(), b);
        e
    }

    #[test]
    fn gaze_targets() {
        let mut r = record();
        r.entities = vec![
            tool_box("tray", BBox::new(0.0, 0.0, 100.0, 100.0)),
            tool_box("drill", BBox::new(10.0, 10.0, 20.0, 20.0)),
        ];
        r.gaze = Some(Gaze { x: 15.0, y: 15.0, view: "cam".into() });
        assert_eq!(gaze_target(&r).unwrap(), "drill");
        r.gaze = Some(Gaze { x: 50.0, y: 50.0, view: "cam".into() });
        assert_eq!(gaze_target(&r).unwrap(), "tray");
        r.gaze = Some(Gaze { x: 300.0, y: 300.0, view: "cam".into() });
        assert_eq!(gaze_target(&r).unwrap(), "none");
        let pairs = gen_gaze(&r);
        assert_eq!(answers(&pairs, TaskKind::GazeLocation), vec!["300,300"]);
    }

    #[test]
    fn temporal_answers() {
        let mut r = record();
        r.time_s = 10.0;
        r.timeline = vec![
            TimelineEvent::new("cutting", EventKind::Action, 0.0, 5.0),
            TimelineEvent::new("drilling", EventKind::Action, 6.0, 14.0),
            TimelineEvent::new("sawing", EventKind::Action, 25.0, 30.0),
        ];
        let pairs = gen_temporal(&r);
        assert_eq!(answers(&pairs, TaskKind::EstimateTimeUntil), vec!["15"]);
        assert_eq!(answers(&pairs, TaskKind::EstimateStatus), vec!["50"]);
        let done: Vec<_> = pairs
            .iter()
            .filter(|p| p.task == TaskKind::IsCompleted)
            .map(|p| (p.question.as_str(), p.answer.as_str()))
            .collect();
        assert_eq!(
            done,
            vec![
                ("Has cutting already been performed?", "true"),
                ("Has drilling already been performed?", "false"),
                ("Has sawing already been performed?", "false"),
            ]
        );
        // boundary instants produce no status question
        r.time_s = 6.0;
        assert!(answers(&gen_temporal(&r), TaskKind::EstimateStatus).is_empty());
    }

    #[test]
    fn sorted_entities_left_to_right() {
        let mut r = record();
        r.entities = vec![person("b", 35.0), person("a", 5.0), person("c", 295.0)];
        let pairs = generate_record(&r, &GenConfig::default());
        assert_eq!(answers(&pairs, TaskKind::SortedEntityDetection), vec!["a,b,c"]);
        assert_eq!(answers(&pairs, TaskKind::EntityDetection), vec!["a,b,c"]);
        assert_eq!(answers(&pairs, TaskKind::RoleDetection), vec!["a,b,c"]);
    }

    #[test]
    fn robot_flags_and_steps() {
        let mut r = record();
        r.robot_flags.insert("calibrated".into(), true);
        r.timeline = vec![
            TimelineEvent::new("registration", EventKind::RobotStep, 0.0, 12.0),
            TimelineEvent::new("resection", EventKind::RobotStep, 20.0, 30.0),
        ];
        let pairs = generate_record(&r, &GenConfig::default());
        assert_eq!(answers(&pairs, TaskKind::IsRobotCalibrated), vec!["true"]);
        assert!(answers(&pairs, TaskKind::IsBaseArrayVisible).is_empty());
        assert_eq!(answers(&pairs, TaskKind::RobotStepDetection), vec!["registration"]);
        assert_eq!(answers(&pairs, TaskKind::NextRobotStepEstimation), vec!["resection"]);
        r.time_s = 25.0;
        let pairs = generate_record(&r, &GenConfig::default());
        assert_eq!(answers(&pairs, TaskKind::NextRobotStepEstimation), vec!["none"]);
    }

    #[test]
    fn absent_data_is_silent() {
        let r = record();
        let pairs = generate_record(&r, &GenConfig::default());
        for task in [TaskKind::GazeLocation, TaskKind::GazeObjectDetection, TaskKind::MonitorTextOCR, TaskKind::SceneGraphGeneration] {
            assert!(answers(&pairs, task).is_empty(), "{task}");
        }
    }

    #[test]
    fn interactions_and_negatives() {
        let mut r = record();
        r.entities = vec![person("surgeon", 0.0), person("nurse", 50.0), Entity::new("d", "drill", Category::Tool)];
        r.scene_graph = vec![Triplet::new("surgeon", "drill", "holding")];
        let cfg = GenConfig { negative_pair_rate: 0.0, ..GenConfig::default() };
        let pairs = generate_record(&r, &cfg);
        assert_eq!(answers(&pairs, TaskKind::InteractionDetection), vec!["holding"]);
        assert_eq!(answers(&pairs, TaskKind::ToolDetection), vec!["drill"]);
        let cfg = GenConfig { negative_pair_rate: 1.0, ..GenConfig::default() };
        let pairs = generate_record(&r, &cfg);
        let inter = answers(&pairs, TaskKind::InteractionDetection);
        assert_eq!(inter.len(), 6);
        assert_eq!(inter.iter().filter(|a| **a == "none").count(), 5);
    }

    #[test]
    fn deterministic() {
        let mut r = record();
        r.entities = vec![person("surgeon", 0.0), person("nurse", 50.0)];
        let cfg = GenConfig::default();
        assert_eq!(generate_record(&r, &cfg), generate_record(&r, &cfg));
    }

    #[test]
    fn config_validation() {
        assert!(GenConfig { negative_pair_rate: 1.5, ..GenConfig::default() }.validate().is_err());
        assert!(GenConfig { distance_round_dp: 5, ..GenConfig::default() }.validate().is_err());
        GenConfig::default().validate().unwrap();
    }
}
