//! Per-task scoring rules, each bounded in [0, 1].
//!
//! Band edges are exclusive for error bands and inclusive for IoU bands: a
//! relative error of exactly 10% scores 0.5, an IoU of exactly 0.75 scores
//! 1.0. Values within [`BAND_TOLERANCE`] of an edge are treated as sitting on
//! it, so decimal inputs like `2.20` vs `2.00` land on the edge despite
//! binary rounding.

use crate::domain::TaskKind;

use super::grammar::{self, parse_lenient, parse_strict, Answer, AnswerShape, GrammarError};
use super::metrics::{bleu1, levenshtein_similarity, macro_f1_by_predicate, set_iou};

/// Version tag for this rule set, written into every score report.
pub const RULES_VERSION: &str = "1";

pub const BAND_TOLERANCE: f64 = 1e-9;
/// Guard for relative errors against a zero truth.
pub const REL_EPSILON: f64 = 1e-6;
/// Diagonal of a 1920x1080 frame, used for gaze scoring without image context.
pub const DEFAULT_IMAGE_DIAG: f64 = 2202.9071700822983;

/// Record-derived context some rules need.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScoreContext {
    pub image_diag: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub score: f64,
    /// False when the prediction could not be parsed under the task grammar.
    pub parsed: bool,
}

impl Scored {
    fn unparseable() -> Self {
        Scored { score: 0.0, parsed: false }
    }
}

/// 1.0 below 10%, 0.5 below 25%, else 0.0.
pub fn relative_band(pred: f64, truth: f64) -> f64 {
    if truth.abs() < REL_EPSILON {
        return if (pred - truth).abs() < REL_EPSILON { 1.0 } else { 0.0 };
    }
    let err = (pred - truth).abs() / truth.abs();
    error_band(err, 0.10, 0.25)
}

fn error_band(err: f64, full: f64, half: f64) -> f64 {
    if err < full - BAND_TOLERANCE {
        1.0
    } else if err < half - BAND_TOLERANCE {
        0.5
    } else {
        0.0
    }
}

pub fn counting_score(pred: f64, truth: f64) -> f64 {
    let diff = (pred.round() - truth.round()).abs();
    if diff == 0.0 {
        1.0
    } else if diff == 1.0 {
        0.5
    } else {
        0.0
    }
}

pub fn iou_band(iou: f64) -> f64 {
    const BANDS: [(f64, f64); 4] = [(0.75, 1.0), (0.5, 0.75), (0.25, 0.5), (0.125, 0.25)];
    BANDS
        .iter()
        .find(|(edge, _)| iou >= edge - BAND_TOLERANCE)
        .map_or(0.0, |&(_, s)| s)
}

fn coords_to_bbox(c: &[f64]) -> crate::domain::BBox {
    crate::domain::BBox::new(c[0], c[1], c[2], c[3])
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Score a prediction against canonical ground truth.
///
/// Fails only when the truth itself violates the task grammar; an
/// unparseable prediction scores 0 with `parsed = false`.
pub fn score_answer(task: TaskKind, predicted: &str, truth: &str, ctx: &ScoreContext) -> Result<Scored, GrammarError> {
    let truth = parse_strict(task, truth)?;
    let Some(pred) = parse_lenient(task, predicted) else {
        return Ok(Scored::unparseable());
    };
    let score = match (grammar::shape(task), &pred, &truth) {
        (AnswerShape::Count, Answer::Number(p), Answer::Number(t)) => counting_score(*p, *t),
        (AnswerShape::Integer | AnswerShape::Decimal, Answer::Number(p), Answer::Number(t)) => relative_band(*p, *t),
        (AnswerShape::Boolean | AnswerShape::Label, Answer::Label(p), Answer::Label(t)) => f64::from(u8::from(p == t)),
        (AnswerShape::LabelSet, Answer::Set(p), Answer::Set(t)) => set_iou(p, t),
        (AnswerShape::Sequence, Answer::Seq(p), Answer::Seq(t)) => levenshtein_similarity(p, t),
        (AnswerShape::BBox, Answer::Coords(p), Answer::Coords(t)) => {
            let pb = coords_to_bbox(p);
            if !(pb.w > 0.0 && pb.h > 0.0) {
                0.0
            } else {
                iou_band(pb.iou(&coords_to_bbox(t)))
            }
        }
        (AnswerShape::Point3, Answer::Coords(p), Answer::Coords(t)) => {
            let err = euclid(p, t);
            if err < 0.10 - BAND_TOLERANCE {
                1.0
            } else if err < 0.25 - BAND_TOLERANCE {
                0.5
            } else {
                0.0
            }
        }
        (AnswerShape::Point2, Answer::Coords(p), Answer::Coords(t)) => {
            let diag = ctx.image_diag.unwrap_or(DEFAULT_IMAGE_DIAG);
            error_band(euclid(p, t) / diag, 0.10, 0.25)
        }
        (AnswerShape::Triplets, Answer::Triplets(p), Answer::Triplets(t)) => macro_f1_by_predicate(p, t),
        (AnswerShape::Text, Answer::Text(p), Answer::Text(t)) => bleu1(p, t),
        _ => unreachable!("parse_strict and parse_lenient agree on shapes"),
    };
    let score = if score.is_finite() { score.clamp(0.0, 1.0) } else { 0.0 };
    Ok(Scored { score, parsed: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use TaskKind::*;

    fn s(task: TaskKind, p: &str, t: &str) -> f64 {
        score_answer(task, p, t, &ScoreContext::default()).unwrap().score
    }

    #[test]
    fn examples() {
        assert_eq!(s(PeopleCounting, "5", "4"), 0.5);
        assert_eq!(s(ToolDetection, "drill", "drill,saw"), 0.5);
        assert_eq!(s(Distance3D, "2.10", "2.00"), 1.0);
        assert_eq!(s(Distance3D, "2.40", "2.00"), 0.5);
        assert_eq!(s(Detection2D, "5,0,10,10", "0,0,10,10"), 0.5);
        assert!((s(SortedEntityDetection, "a,b,c", "a,c") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s(SceneGraphGeneration, "(a,b,c);(d,e,f)", "(a,b,c);(d,e,f)"), 1.0);
        assert_eq!(s(MonitorTextOCR, "HR 80 SPO2 97", "HR 80 SPO2 97"), 1.0);
    }

    #[test]
    fn relative_bands_use_truth_denominator() {
        // |2.5-2|/2 = 25% -> 0; |2-2.5|/2.5 = 20% -> 0.5
        assert_eq!(s(Distance3D, "2.50", "2.00"), 0.0);
        assert_eq!(s(Distance3D, "2.00", "2.50"), 0.5);
    }

    #[test]
    fn zero_truth_needs_exact_match() {
        assert_eq!(s(EstimateTimeUntil, "0", "0"), 1.0);
        assert_eq!(s(EstimateTimeUntil, "1", "0"), 0.0);
    }

    #[test]
    fn gaze_uses_image_diagonal() {
        let ctx = ScoreContext { image_diag: Some(100.0) };
        let sc = |p: &str| score_answer(GazeLocation, p, "0,0", &ctx).unwrap().score;
        assert_eq!(sc("6,8"), 0.5); // exactly 10%
        assert_eq!(sc("3,4"), 1.0);
        assert_eq!(sc("12,16"), 0.5);
        assert_eq!(sc("15,20"), 0.0);
    }

    #[test]
    fn detection3d_bands() {
        assert_eq!(s(Detection3D, "0.05,0.00,0.00", "0.00,0.00,0.00"), 1.0);
        assert_eq!(s(Detection3D, "0.20,0.00,0.00", "0.00,0.00,0.00"), 0.5);
        assert_eq!(s(Detection3D, "0.30,0.00,0.00", "0.00,0.00,0.00"), 0.0);
    }

    #[test]
    fn unparseable_is_flagged() {
        let r = score_answer(Distance3D, "far away", "2.00", &ScoreContext::default()).unwrap();
        assert_eq!(r, Scored { score: 0.0, parsed: false });
    }

    #[test]
    fn bad_truth_is_an_error() {
        assert!(score_answer(Distance3D, "1", "x", &ScoreContext::default()).is_err());
    }
}
