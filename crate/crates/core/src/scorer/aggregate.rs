//! Hierarchical averaging (task within dataset, dataset, overall) and
//! percentile bootstrap intervals over the same hierarchy.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{derive_seed, TaskKind};

use super::ScoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hierarchy {
    /// Task means within a dataset, dataset means of task means, overall
    /// mean of dataset means.
    #[default]
    Equal,
    /// Plain sample means at every level.
    Flat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleScore {
    pub qa_id: String,
    pub dataset: String,
    pub task: TaskKind,
    pub score: f64,
}

/// Point estimates at every level of the hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub overall: f64,
    pub per_dataset: BTreeMap<String, f64>,
    pub per_task: BTreeMap<TaskKind, f64>,
    pub per_dataset_task: BTreeMap<(String, TaskKind), f64>,
}

/// Overall, per dataset, per task, per (dataset, task).
type Levels<T> = (T, BTreeMap<String, T>, BTreeMap<TaskKind, T>, BTreeMap<(String, TaskKind), T>);

/// Interned (dataset, task) layout so resamples aggregate over flat arrays.
struct Layout {
    datasets: Vec<String>,
    tasks: Vec<TaskKind>,
    /// group index per sample
    group_of: Vec<usize>,
    /// (dataset index, task index) per group
    groups: Vec<(usize, usize)>,
}

impl Layout {
    fn new(samples: &[SampleScore]) -> Self {
        let mut datasets: Vec<String> = samples.iter().map(|s| s.dataset.clone()).collect();
        datasets.sort();
        datasets.dedup();
        let mut tasks: Vec<TaskKind> = samples.iter().map(|s| s.task).collect();
        tasks.sort();
        tasks.dedup();
        let mut group_ids: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let keyed: Vec<(usize, usize)> = samples
            .iter()
            .map(|s| {
                (
                    datasets.binary_search(&s.dataset).unwrap(),
                    tasks.binary_search(&s.task).unwrap(),
                )
            })
            .collect();
        for k in &keyed {
            let n = group_ids.len();
            group_ids.entry(*k).or_insert(n);
        }
        let mut groups = vec![(0, 0); group_ids.len()];
        for (k, &g) in &group_ids {
            groups[g] = *k;
        }
        let group_of = keyed.iter().map(|k| group_ids[k]).collect();
        Layout {
            datasets,
            tasks,
            group_of,
            groups,
        }
    }

    /// Number of statistics: overall, datasets, tasks, groups.
    fn n_stats(&self) -> usize {
        1 + self.datasets.len() + self.tasks.len() + self.groups.len()
    }

    /// Aggregate from per-group sums and counts into a flat stat vector;
    /// statistics with no support are NaN.
    fn stats(&self, sums: &[f64], counts: &[usize], hierarchy: Hierarchy) -> Vec<f64> {
        let nd = self.datasets.len();
        let nt = self.tasks.len();
        let mut out = vec![f64::NAN; self.n_stats()];
        let group_mean: Vec<f64> = sums
            .iter()
            .zip(counts)
            .map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
            .collect();

        // (sum, n) accumulators per dataset / task / overall
        let mut ds = vec![(0.0, 0usize); nd];
        let mut ts = vec![(0.0, 0usize); nt];
        let mut all = (0.0, 0usize);
        for (g, &(d, t)) in self.groups.iter().enumerate() {
            if counts[g] == 0 {
                continue;
            }
            let (v, w) = match hierarchy {
                Hierarchy::Equal => (group_mean[g], 1),
                Hierarchy::Flat => (sums[g], counts[g]),
            };
            ds[d].0 += v;
            ds[d].1 += w;
            ts[t].0 += v;
            ts[t].1 += w;
            if hierarchy == Hierarchy::Flat {
                all.0 += v;
                all.1 += w;
            }
        }
        let mean = |(s, n): (f64, usize)| if n == 0 { f64::NAN } else { s / n as f64 };
        for d in 0..nd {
            out[1 + d] = mean(ds[d]);
        }
        for t in 0..nt {
            out[1 + nd + t] = mean(ts[t]);
        }
        for (g, m) in group_mean.iter().enumerate() {
            out[1 + nd + nt + g] = *m;
        }
        out[0] = match hierarchy {
            Hierarchy::Flat => mean(all),
            Hierarchy::Equal => {
                let present: Vec<f64> = out[1..=nd].iter().copied().filter(|v| !v.is_nan()).collect();
                if present.is_empty() {
                    f64::NAN
                } else {
                    present.iter().sum::<f64>() / present.len() as f64
                }
            }
        };
        out
    }

    fn stats_for_indices(&self, samples: &[SampleScore], indices: impl Iterator<Item = usize>, h: Hierarchy) -> Vec<f64> {
        let mut sums = vec![0.0; self.groups.len()];
        let mut counts = vec![0usize; self.groups.len()];
        for i in indices {
            let g = self.group_of[i];
            sums[g] += samples[i].score;
            counts[g] += 1;
        }
        self.stats(&sums, &counts, h)
    }

    fn unflatten<T: Clone>(&self, v: &[T]) -> Levels<T> {
        let nd = self.datasets.len();
        let nt = self.tasks.len();
        let per_dataset = self.datasets.iter().cloned().zip(v[1..=nd].iter().cloned()).collect();
        let per_task = self.tasks.iter().copied().zip(v[1 + nd..1 + nd + nt].iter().cloned()).collect();
        let per_group = self
            .groups
            .iter()
            .map(|&(d, t)| (self.datasets[d].clone(), self.tasks[t]))
            .zip(v[1 + nd + nt..].iter().cloned())
            .collect();
        (v[0].clone(), per_dataset, per_task, per_group)
    }
}

pub fn aggregate(samples: &[SampleScore], hierarchy: Hierarchy) -> Aggregate {
    let layout = Layout::new(samples);
    let v = layout.stats_for_indices(samples, 0..samples.len(), hierarchy);
    let (overall, per_dataset, per_task, per_dataset_task) = layout.unflatten(&v);
    Aggregate {
        overall: if overall.is_nan() { 0.0 } else { overall },
        per_dataset,
        per_task,
        per_dataset_task,
    }
}

/// Percentile intervals for every aggregate, same shape as [`Aggregate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Intervals {
    pub overall: (f64, f64),
    pub per_dataset: BTreeMap<String, (f64, f64)>,
    pub per_task: BTreeMap<TaskKind, (f64, f64)>,
    pub per_dataset_task: BTreeMap<(String, TaskKind), (f64, f64)>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn percentile_intervals(layout: &Layout, point: &[f64], resamples: &[Vec<f64>], level: f64) -> Intervals {
    let alpha = (1.0 - level) / 2.0;
    let intervals: Vec<(f64, f64)> = (0..layout.n_stats())
        .map(|k| {
            let mut vals: Vec<f64> = resamples.iter().map(|r| r[k]).filter(|v| !v.is_nan()).collect();
            if vals.is_empty() {
                return (point[k], point[k]);
            }
            vals.sort_by(f64::total_cmp);
            let lo = quantile_sorted(&vals, alpha);
            let hi = quantile_sorted(&vals, 1.0 - alpha);
            // the reported interval always brackets its own point estimate
            (lo.min(point[k]), hi.max(point[k]))
        })
        .collect();
    let (overall, per_dataset, per_task, per_dataset_task) = layout.unflatten(&intervals);
    Intervals {
        overall,
        per_dataset,
        per_task,
        per_dataset_task,
    }
}

/// Nonparametric bootstrap: resample samples with replacement and recompute
/// the full hierarchy each time. Resample `i` draws from its own seed
/// derived from `(seed, i)`, so results do not depend on thread count.
pub fn bootstrap_ci(
    samples: &[SampleScore],
    hierarchy: Hierarchy,
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<Intervals, ScoreError> {
    if samples.len() < 2 {
        return Err(ScoreError::InsufficientData(samples.len()));
    }
    if !(level > 0.0 && level < 1.0) || n_resamples == 0 {
        return Err(ScoreError::Usage(format!(
            "bootstrap needs level in (0,1) and at least one resample, got {level} / {n_resamples}"
        )));
    }
    let n = samples.len();
    bootstrap_with(samples, hierarchy, level, n_resamples, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("resample:{i}")));
        (0..n).map(|_| rng.random_range(0..n)).collect()
    })
}

/// Bootstrap with caller-supplied resample index sets.
pub fn bootstrap_with<F>(
    samples: &[SampleScore],
    hierarchy: Hierarchy,
    level: f64,
    n_resamples: usize,
    draw: F,
) -> Result<Intervals, ScoreError>
where
    F: Fn(usize) -> Vec<usize> + Sync,
{
    if samples.len() < 2 {
        return Err(ScoreError::InsufficientData(samples.len()));
    }
    let layout = Layout::new(samples);
    let point = layout.stats_for_indices(samples, 0..samples.len(), hierarchy);
    let resamples: Vec<Vec<f64>> = (0..n_resamples)
        .into_par_iter()
        .map(|i| layout.stats_for_indices(samples, draw(i).into_iter(), hierarchy))
        .collect();
    Ok(percentile_intervals(&layout, &point, &resamples, level))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(i: usize, dataset: &str, task: TaskKind, score: f64) -> SampleScore {
        SampleScore {
            qa_id: format!("q{i}"),
            dataset: dataset.into(),
            task,
            score,
        }
    }

    #[test]
    fn flat_single_group() {
        let s = vec![
            sample(0, "d", TaskKind::IsCompleted, 1.0),
            sample(1, "d", TaskKind::IsCompleted, 0.0),
        ];
        let a = aggregate(&s, Hierarchy::Equal);
        assert_eq!(a.overall, 0.5);
        assert_eq!(a.per_dataset["d"], 0.5);
        assert_eq!(a.per_task[&TaskKind::IsCompleted], 0.5);
    }

    #[test]
    fn datasets_weigh_equally() {
        // dataset a: 0.2 from 5 samples, dataset b: 0.6 from 1 sample
        let mut s: Vec<SampleScore> = (0..5).map(|i| sample(i, "a", TaskKind::IsCompleted, if i == 0 { 1.0 } else { 0.0 })).collect();
        s.push(sample(9, "b", TaskKind::Distance3D, 0.6));
        let a = aggregate(&s, Hierarchy::Equal);
        assert!((a.overall - 0.4).abs() < 1e-12);
        let flat = aggregate(&s, Hierarchy::Flat);
        assert!((flat.overall - 1.6 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn tasks_weigh_equally_within_dataset() {
        let s = vec![
            sample(0, "d", TaskKind::IsCompleted, 1.0),
            sample(1, "d", TaskKind::IsCompleted, 1.0),
            sample(2, "d", TaskKind::IsCompleted, 1.0),
            sample(3, "d", TaskKind::Distance3D, 0.0),
        ];
        let a = aggregate(&s, Hierarchy::Equal);
        assert_eq!(a.per_dataset["d"], 0.5);
        assert_eq!(a.per_dataset_task[&("d".to_string(), TaskKind::IsCompleted)], 1.0);
    }

    #[test]
    fn constant_scores_give_zero_width() {
        let s: Vec<_> = (0..50).map(|i| sample(i, "d", TaskKind::IsCompleted, 0.7)).collect();
        let ci = bootstrap_ci(&s, Hierarchy::Equal, 200, 0.95, 3).unwrap();
        assert!((ci.overall.0 - 0.7).abs() < 1e-12 && (ci.overall.1 - 0.7).abs() < 1e-12);
    }

    #[test]
    fn identity_resample_reproduces_point_estimate() {
        let s: Vec<_> = (0..40)
            .map(|i| sample(i, if i % 3 == 0 { "a" } else { "b" }, TaskKind::ALL[i % 5], (i % 7) as f64 / 7.0))
            .collect();
        let point = aggregate(&s, Hierarchy::Equal);
        let n = s.len();
        let ci = bootstrap_with(&s, Hierarchy::Equal, 0.95, 1, |_| (0..n).collect()).unwrap();
        assert!((ci.overall.0 - point.overall).abs() < 1e-12);
        assert!((ci.overall.1 - point.overall).abs() < 1e-12);
        for (k, v) in &point.per_task {
            assert!((ci.per_task[k].0 - v).abs() < 1e-12);
        }
    }

    #[test]
    fn needs_two_samples() {
        let s = vec![sample(0, "d", TaskKind::IsCompleted, 1.0)];
        assert!(matches!(bootstrap_ci(&s, Hierarchy::Equal, 10, 0.95, 0), Err(ScoreError::InsufficientData(1))));
    }

    #[test]
    fn deterministic_in_seed() {
        let s: Vec<_> = (0..100).map(|i| sample(i, "d", TaskKind::IsCompleted, (i % 2) as f64)).collect();
        let a = bootstrap_ci(&s, Hierarchy::Equal, 100, 0.95, 11).unwrap();
        let b = bootstrap_ci(&s, Hierarchy::Equal, 100, 0.95, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.25), 2.0);
        assert!((quantile_sorted(&v, 0.1) - 1.4).abs() < 1e-12);
    }
}
