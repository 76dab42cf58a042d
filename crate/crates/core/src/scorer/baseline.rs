//! Most-frequent-answer baseline: the modal answer per (dataset, task) for
//! categorical tasks and the training mean for numeric and coordinate tasks.

use std::collections::{BTreeMap, HashMap};

use crate::domain::{QAPair, TaskKind};

use super::grammar::{self, extract_numbers, fmt_coords, fmt_decimal, AnswerShape};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BaselinePredictor {
    answers: BTreeMap<(String, TaskKind), String>,
}

#[derive(Default)]
struct Acc {
    modes: HashMap<String, usize>,
    sums: Vec<f64>,
    n: usize,
    max_dp: usize,
}

fn decimals(s: &str) -> usize {
    s.split(',')
        .map(|p| p.split_once('.').map_or(0, |(_, f)| f.len()))
        .max()
        .unwrap_or(0)
}

fn mode(counts: &HashMap<String, usize>) -> String {
    // highest count, ties to the lexicographically smallest answer
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(k, _)| k.clone())
        .unwrap_or_default()
}

impl BaselinePredictor {
    pub fn fit<'a, I: IntoIterator<Item = &'a QAPair>>(train: I) -> Self {
        let mut accs: BTreeMap<(String, TaskKind), Acc> = BTreeMap::new();
        for qa in train {
            let acc = accs.entry((qa.dataset.clone(), qa.task)).or_default();
            match grammar::shape(qa.task) {
                AnswerShape::Count
                | AnswerShape::Integer
                | AnswerShape::Decimal
                | AnswerShape::BBox
                | AnswerShape::Point3
                | AnswerShape::Point2 => {
                    let nums = extract_numbers(&qa.answer);
                    if acc.sums.is_empty() {
                        acc.sums = vec![0.0; nums.len()];
                    }
                    if nums.len() != acc.sums.len() {
                        continue;
                    }
                    for (s, v) in acc.sums.iter_mut().zip(&nums) {
                        *s += v;
                    }
                    acc.n += 1;
                    acc.max_dp = acc.max_dp.max(decimals(&qa.answer));
                }
                AnswerShape::Boolean | AnswerShape::Label => {
                    *acc.modes.entry(qa.answer_key()).or_default() += 1;
                }
                AnswerShape::LabelSet | AnswerShape::Sequence | AnswerShape::Triplets | AnswerShape::Text => {
                    *acc.modes.entry(qa.answer.clone()).or_default() += 1;
                }
            }
        }
        let answers = accs
            .into_iter()
            .map(|((dataset, task), acc)| {
                let answer = if acc.n > 0 {
                    let means: Vec<f64> = acc.sums.iter().map(|s| s / acc.n as f64).collect();
                    match grammar::shape(task) {
                        AnswerShape::Decimal => fmt_decimal(means[0], acc.max_dp),
                        AnswerShape::Point3 => fmt_coords(&means, acc.max_dp),
                        _ => fmt_coords(&means.iter().map(|m| m.round()).collect::<Vec<_>>(), 0),
                    }
                } else {
                    mode(&acc.modes)
                };
                ((dataset, task), answer)
            })
            .collect();
        BaselinePredictor { answers }
    }

    /// Empty string for a (dataset, task) never seen in training.
    pub fn predict(&self, qa: &QAPair) -> String {
        self.answers
            .get(&(qa.dataset.clone(), qa.task))
            .cloned()
            .unwrap_or_default()
    }

    pub fn answers(&self) -> &BTreeMap<(String, TaskKind), String> {
        &self.answers
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qa(task: TaskKind, answer: &str, i: usize) -> QAPair {
        QAPair {
            id: format!("{i}"),
            dataset: "d".into(),
            clip_id: "c".into(),
            timepoint_id: "t".into(),
            task,
            question: "q".into(),
            answer: answer.into(),
            context: None,
        }
    }

    #[test]
    fn modal_answer() {
        let train: Vec<_> = (0..10)
            .map(|i| qa(TaskKind::SterilityBreachDetection, if i == 0 { "true" } else { "false" }, i))
            .collect();
        let b = BaselinePredictor::fit(&train);
        assert_eq!(b.predict(&train[0]), "false");
    }

    #[test]
    fn ties_break_lexicographically() {
        let train = vec![qa(TaskKind::ActionDetection, "sawing", 0), qa(TaskKind::ActionDetection, "drilling", 1)];
        assert_eq!(BaselinePredictor::fit(&train).predict(&train[0]), "drilling");
    }

    #[test]
    fn mean_distance() {
        let train = vec![qa(TaskKind::Distance3D, "1.00", 0), qa(TaskKind::Distance3D, "3.00", 1)];
        assert_eq!(BaselinePredictor::fit(&train).predict(&train[0]), "2.00");
    }

    #[test]
    fn component_wise_mean() {
        let train = vec![qa(TaskKind::Detection2D, "0,0,10,10", 0), qa(TaskKind::Detection2D, "10,20,20,31", 1)];
        assert_eq!(BaselinePredictor::fit(&train).predict(&train[0]), "5,10,15,21");
        let train = vec![qa(TaskKind::Detection3D, "1.00,2.00,0.00", 0), qa(TaskKind::Detection3D, "2.00,2.50,1.00", 1)];
        assert_eq!(BaselinePredictor::fit(&train).predict(&train[0]), "1.50,2.25,0.50");
    }

    #[test]
    fn unseen_task_predicts_empty() {
        let train = vec![qa(TaskKind::Distance3D, "1.00", 0)];
        assert_eq!(BaselinePredictor::fit(&train).predict(&qa(TaskKind::IsCompleted, "true", 1)), "");
    }
}
