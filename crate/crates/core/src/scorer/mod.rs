//! Scoring: per-task rules, hierarchical aggregation with bootstrap
//! intervals, and the most-frequent-answer baseline.

pub mod aggregate;
pub mod baseline;
pub mod grammar;
pub mod metrics;
pub mod rules;

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::QAPair;
use crate::qagen::TEMPLATE_VERSION;

pub use aggregate::{aggregate, bootstrap_ci, Aggregate, Hierarchy, Intervals, SampleScore};
pub use baseline::BaselinePredictor;
pub use grammar::{parse_lenient, parse_strict, Answer, GrammarError};
pub use rules::{score_answer, ScoreContext, Scored, RULES_VERSION};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("bootstrap needs at least 2 samples, got {0}")]
    InsufficientData(usize),
    #[error("{0}")]
    Usage(String),
    #[error("prediction for unknown qa_id {0:?}")]
    UnknownPrediction(String),
    #[error("duplicate prediction for qa_id {0:?}")]
    DuplicatePrediction(String),
    #[error("ground truth of {qa_id}: {source}")]
    Truth {
        qa_id: String,
        #[source]
        source: GrammarError,
    },
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub qa_id: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub hierarchy: Hierarchy,
    pub n_resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            hierarchy: Hierarchy::Equal,
            n_resamples: 1000,
            level: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci95: Option<(f64, f64)>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub tool_version: String,
    pub template_version: String,
    pub rules_version: String,
    pub options: ScoreOptions,
    pub n_samples: usize,
    pub n_missing: usize,
    pub n_unparseable: usize,
    pub overall: Stat,
    pub per_dataset: BTreeMap<String, Stat>,
    pub per_task: BTreeMap<String, Stat>,
    pub per_dataset_task: BTreeMap<String, BTreeMap<String, Stat>>,
    pub per_sample: BTreeMap<String, f64>,
}

/// Score every benchmark item. Missing predictions score 0 and are counted.
pub fn score_benchmark(
    benchmark: &[QAPair],
    predictions: &[Prediction],
    opts: &ScoreOptions,
) -> Result<ScoreReport, ScoreError> {
    let mut by_id: HashMap<&str, &str> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_id.insert(p.qa_id.as_str(), p.answer.as_str()).is_some() {
            return Err(ScoreError::DuplicatePrediction(p.qa_id.clone()));
        }
    }
    let known: HashMap<&str, ()> = benchmark.iter().map(|q| (q.id.as_str(), ())).collect();
    if let Some(p) = predictions.iter().find(|p| !known.contains_key(p.qa_id.as_str())) {
        return Err(ScoreError::UnknownPrediction(p.qa_id.clone()));
    }

    let ctx = ScoreContext::default();
    let scored: Vec<(Option<Scored>, &QAPair)> = benchmark
        .par_iter()
        .map(|qa| {
            let s = match by_id.get(qa.id.as_str()) {
                None => {
                    // still validate the truth
                    parse_strict(qa.task, &qa.answer).map(|_| None)
                }
                Some(pred) => score_answer(qa.task, pred, &qa.answer, &ctx).map(Some),
            };
            s.map(|s| (s, qa)).map_err(|source| ScoreError::Truth {
                qa_id: qa.id.clone(),
                source,
            })
        })
        .collect::<Result<_, _>>()?;

    let n_missing = scored.iter().filter(|(s, _)| s.is_none()).count();
    let n_unparseable = scored.iter().filter(|(s, _)| matches!(s, Some(x) if !x.parsed)).count();
    let samples: Vec<SampleScore> = scored
        .iter()
        .map(|(s, qa)| SampleScore {
            qa_id: qa.id.clone(),
            dataset: qa.dataset.clone(),
            task: qa.task,
            score: s.map_or(0.0, |s| s.score),
        })
        .collect();

    Ok(build_report(&samples, n_missing, n_unparseable, opts))
}

/// Assemble a report from already-scored samples.
pub fn build_report(samples: &[SampleScore], n_missing: usize, n_unparseable: usize, opts: &ScoreOptions) -> ScoreReport {
    let agg = aggregate(samples, opts.hierarchy);
    let ci = bootstrap_ci(samples, opts.hierarchy, opts.n_resamples, opts.level, opts.seed).ok();

    let mut n_dataset: BTreeMap<&str, usize> = BTreeMap::new();
    let mut n_task: BTreeMap<_, usize> = BTreeMap::new();
    let mut n_group: BTreeMap<(&str, _), usize> = BTreeMap::new();
    for s in samples {
        *n_dataset.entry(s.dataset.as_str()).or_default() += 1;
        *n_task.entry(s.task).or_default() += 1;
        *n_group.entry((s.dataset.as_str(), s.task)).or_default() += 1;
    }

    let per_dataset = agg
        .per_dataset
        .iter()
        .map(|(d, m)| {
            let stat = Stat {
                mean: *m,
                ci95: ci.as_ref().map(|c| c.per_dataset[d]),
                n: n_dataset[d.as_str()],
            };
            (d.clone(), stat)
        })
        .collect();
    let per_task = agg
        .per_task
        .iter()
        .map(|(t, m)| {
            let stat = Stat {
                mean: *m,
                ci95: ci.as_ref().map(|c| c.per_task[t]),
                n: n_task[t],
            };
            (t.name().to_string(), stat)
        })
        .collect();
    let mut per_dataset_task: BTreeMap<String, BTreeMap<String, Stat>> = BTreeMap::new();
    for ((d, t), m) in &agg.per_dataset_task {
        let key = (d.clone(), *t);
        per_dataset_task.entry(d.clone()).or_default().insert(
            t.name().to_string(),
            Stat {
                mean: *m,
                ci95: ci.as_ref().map(|c| c.per_dataset_task[&key]),
                n: n_group[&(d.as_str(), *t)],
            },
        );
    }

    ScoreReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        template_version: TEMPLATE_VERSION.to_string(),
        rules_version: RULES_VERSION.to_string(),
        options: opts.clone(),
        n_samples: samples.len(),
        n_missing,
        n_unparseable,
        overall: Stat {
            mean: agg.overall,
            ci95: ci.as_ref().map(|c| c.overall),
            n: samples.len(),
        },
        per_dataset,
        per_task,
        per_dataset_task,
        per_sample: samples.iter().map(|s| (s.qa_id.clone(), s.score)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TaskKind;

    fn qa(id: &str, dataset: &str, task: TaskKind, answer: &str) -> QAPair {
        QAPair {
            id: id.into(),
            dataset: dataset.into(),
            clip_id: "c".into(),
            timepoint_id: "t".into(),
            task,
            question: "q".into(),
            answer: answer.into(),
            context: None,
        }
    }

    fn bench() -> Vec<QAPair> {
        vec![
            qa("a", "d1", TaskKind::PeopleCounting, "4"),
            qa("b", "d1", TaskKind::IsCompleted, "true"),
            qa("c", "d2", TaskKind::Distance3D, "2.00"),
        ]
    }

    #[test]
    fn echo_scores_one() {
        let b = bench();
        let preds: Vec<_> = b.iter().map(|q| Prediction { qa_id: q.id.clone(), answer: q.answer.clone() }).collect();
        let r = score_benchmark(&b, &preds, &ScoreOptions::default()).unwrap();
        assert_eq!(r.overall.mean, 1.0);
        assert_eq!(r.overall.ci95, Some((1.0, 1.0)));
        assert_eq!(r.n_missing, 0);
    }

    #[test]
    fn missing_predictions_score_zero() {
        let b = bench();
        let r = score_benchmark(&b, &[], &ScoreOptions::default()).unwrap();
        assert_eq!(r.overall.mean, 0.0);
        assert_eq!(r.n_missing, 3);
    }

    #[test]
    fn unknown_and_duplicate_predictions_fail() {
        let b = bench();
        let p = Prediction { qa_id: "zz".into(), answer: "1".into() };
        assert!(matches!(score_benchmark(&b, &[p], &ScoreOptions::default()), Err(ScoreError::UnknownPrediction(_))));
        let p = Prediction { qa_id: "a".into(), answer: "1".into() };
        assert!(matches!(
            score_benchmark(&b, &[p.clone(), p], &ScoreOptions::default()),
            Err(ScoreError::DuplicatePrediction(_))
        ));
    }

    #[test]
    fn unparseable_counted() {
        let b = bench();
        let p = Prediction { qa_id: "c".into(), answer: "far".into() };
        let r = score_benchmark(&b, &[p], &ScoreOptions::default()).unwrap();
        assert_eq!(r.n_unparseable, 1);
        assert_eq!(r.n_missing, 2);
    }
}
