//! Inverse-frequency diversity sampling.
//!
//! Two passes over the QA stream: [`count_frequencies`] builds exact
//! per-group counts, then [`Sampler`] keeps, per split and per
//! `(dataset, task)` group, the items with the smallest exponential keys
//! `-ln(u) / w`. `u` is a hash of `(seed, qa_id)`, so the selection does not
//! depend on the order or chunking of the stream.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{derive_seed, QAPair, TaskKind};

#[derive(Debug, Error, PartialEq)]
pub enum SampleError {
    #[error("frequency table out of sync with stream: {0}")]
    Consistency(String),
    #[error("invalid sample spec: {0}")]
    Spec(String),
}

pub type GroupKey = (String, TaskKind);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroupCounts {
    pub questions: BTreeMap<String, u64>,
    pub answers: BTreeMap<String, u64>,
    /// Items per clip; drives split availability.
    pub clips: BTreeMap<String, u64>,
    pub total: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrequencyTable {
    pub groups: BTreeMap<GroupKey, GroupCounts>,
}

fn bump(map: &mut BTreeMap<String, u64>, key: &str, by: u64) {
    match map.get_mut(key) {
        Some(v) => *v += by,
        None => {
            map.insert(key.to_string(), by);
        }
    }
}

impl FrequencyTable {
    pub fn add(&mut self, pair: &QAPair) {
        let g = self.groups.entry((pair.dataset.clone(), pair.task)).or_default();
        bump(&mut g.questions, &pair.question_key(), 1);
        bump(&mut g.answers, &pair.answer_key(), 1);
        bump(&mut g.clips, &pair.clip_id, 1);
        g.total += 1;
    }

    /// Commutative merge.
    pub fn merge(&mut self, other: FrequencyTable) {
        for (k, o) in other.groups {
            let g = self.groups.entry(k).or_default();
            for (q, c) in o.questions {
                bump(&mut g.questions, &q, c);
            }
            for (a, c) in o.answers {
                bump(&mut g.answers, &a, c);
            }
            for (cl, c) in o.clips {
                bump(&mut g.clips, &cl, c);
            }
            g.total += o.total;
        }
    }

    pub fn total(&self) -> u64 {
        self.groups.values().map(|g| g.total).sum()
    }

    /// Hex sha256 over a canonical rendering of every count.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for ((dataset, task), g) in &self.groups {
            h.update(format!("G\x1f{dataset}\x1f{}\x1f{}\n", task.name(), g.total));
            for (tag, map) in [("Q", &g.questions), ("A", &g.answers), ("C", &g.clips)] {
                for (k, c) in map {
                    h.update(format!("{tag}\x1f{k}\x1f{c}\n"));
                }
            }
        }
        hex::encode(h.finalize())
    }
}

/// One pass over any stream of pairs.
pub fn count_frequencies<'a>(pairs: impl IntoIterator<Item = &'a QAPair>) -> FrequencyTable {
    let mut t = FrequencyTable::default();
    for p in pairs {
        t.add(p);
    }
    t
}

/// Parallel map-reduce over an in-memory batch.
pub fn count_frequencies_par(pairs: &[QAPair]) -> FrequencyTable {
    pairs
        .par_chunks(4096)
        .map(count_frequencies)
        .reduce(FrequencyTable::default, |mut a, b| {
            a.merge(b);
            a
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    #[default]
    EqualPerGroup,
    Proportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSpec {
    pub seed: u64,
    pub train: u64,
    pub val: u64,
    pub test: u64,
    pub alpha: f64,
    pub beta: f64,
    pub allocation: Allocation,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            train: 1_000_000,
            val: 10_000,
            test: 10_000,
            alpha: 1.0,
            beta: 1.0,
            allocation: Allocation::EqualPerGroup,
        }
    }
}

impl SampleSpec {
    pub fn validate(&self) -> Result<(), SampleError> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SampleError::Spec(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    fn sizes(&self) -> [u64; 3] {
        [self.train, self.val, self.test]
    }
}

/// `f_q^-alpha * f_a^-beta` within the pair's group.
pub fn weight(pair: &QAPair, table: &FrequencyTable, spec: &SampleSpec) -> Result<f64, SampleError> {
    let g = table
        .groups
        .get(&(pair.dataset.clone(), pair.task))
        .ok_or_else(|| SampleError::Consistency(format!("no group ({}, {})", pair.dataset, pair.task)))?;
    let fq = *g
        .questions
        .get(&pair.question_key())
        .ok_or_else(|| SampleError::Consistency(format!("question of {} not counted", pair.id)))?;
    let fa = *g
        .answers
        .get(&pair.answer_key())
        .ok_or_else(|| SampleError::Consistency(format!("answer of {} not counted", pair.id)))?;
    Ok((fq as f64).powf(-spec.alpha) * (fa as f64).powf(-spec.beta))
}

/// Uniform in (0, 1], from the item hash.
fn unit_hash(seed: u64, id: &str) -> f64 {
    let h = derive_seed(seed, id);
    ((h >> 11) + 1) as f64 / (1u64 << 53) as f64
}

/// Exponential sort key; smaller is more likely kept.
pub fn sample_key(seed: u64, id: &str, w: f64) -> f64 {
    -unit_hash(seed, id).ln() / w
}

struct Candidate {
    key: f64,
    pair: QAPair,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.total_cmp(&other.key).then_with(|| self.pair.id.cmp(&other.pair.id))
    }
}

/// Keep the `k` smallest candidates.
#[derive(Default)]
struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    fn offer(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(top) = self.heap.peek() {
            if c < *top {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }
}

/// Weighted sampling without replacement of `k` items from one group.
/// Returns selected indices in ascending order.
pub fn sample_group(items: &[(&str, f64)], k: usize, seed: u64) -> Vec<usize> {
    let mut keyed: Vec<(f64, &str, usize)> = items
        .iter()
        .enumerate()
        .map(|(i, (id, w))| (sample_key(seed, id, *w), *id, i))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    let mut out: Vec<usize> = keyed.into_iter().take(k).map(|(_, _, i)| i).collect();
    out.sort_unstable();
    out
}

/// Distribute `total` over `weights` by largest remainder; ties go to the
/// lower index.
pub fn largest_remainder(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        out[i] += 1;
    }
    out
}

/// Per-group quotas for one split given per-group availability.
pub fn allocate(size: u64, available: &[u64], allocation: Allocation) -> Vec<u64> {
    let total: u64 = available.iter().sum();
    if size >= total {
        return available.to_vec();
    }
    let mut q = match allocation {
        Allocation::Proportional => largest_remainder(size, &available.iter().map(|&a| a as f64).collect::<Vec<_>>()),
        Allocation::EqualPerGroup => {
            let nonempty: Vec<f64> = available.iter().map(|&a| if a > 0 { 1.0 } else { 0.0 }).collect();
            largest_remainder(size, &nonempty)
        }
    };
    // spill what exhausted groups could not take, proportionally to spare capacity
    loop {
        for (qi, &a) in q.iter_mut().zip(available) {
            *qi = (*qi).min(a);
        }
        let spill = size - q.iter().sum::<u64>();
        if spill == 0 {
            break;
        }
        let spare: Vec<f64> = q.iter().zip(available).map(|(&qi, &a)| (a - qi) as f64).collect();
        for (qi, add) in q.iter_mut().zip(largest_remainder(spill, &spare)) {
            *qi += add;
        }
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Assign whole clips to splits so that no clip feeds two splits. Clips are
/// shuffled by hash and dealt out in proportion to the requested sizes, with
/// at least one clip for every requested split while clips last.
pub fn assign_clips(table: &FrequencyTable, spec: &SampleSpec) -> HashMap<String, Split> {
    let mut clips: Vec<&String> = table.groups.values().flat_map(|g| g.clips.keys()).collect();
    clips.sort();
    clips.dedup();
    clips.sort_by_key(|c| (derive_seed(spec.seed, &format!("clip:{c}")), (*c).clone()));
    let sizes = spec.sizes();
    let n = clips.len() as u64;
    let mut counts = largest_remainder(n, &sizes.map(|s| s as f64));
    // guarantee one clip per requested split, taking from the largest
    for s in [Split::Test, Split::Val, Split::Train] {
        let i = s.index();
        if sizes[i] > 0 && counts[i] == 0 {
            let (donor, &c) = counts.iter().enumerate().max_by_key(|(j, c)| (**c, std::cmp::Reverse(*j))).expect("3 splits");
            if c > 1 {
                counts[donor] -= 1;
                counts[i] += 1;
            }
        }
    }
    let mut out = HashMap::new();
    let mut it = clips.into_iter();
    // evaluation splits first in shuffled order
    for s in [Split::Test, Split::Val, Split::Train] {
        for c in it.by_ref().take(counts[s.index()] as usize) {
            out.insert(c.clone(), s);
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<QAPair>,
    pub val: Vec<QAPair>,
    pub test: Vec<QAPair>,
}

impl Splits {
    pub fn get(&self, s: Split) -> &Vec<QAPair> {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Second-pass state: feed every pair of the counted stream, then finish.
pub struct Sampler<'a> {
    table: &'a FrequencyTable,
    spec: SampleSpec,
    clips: HashMap<String, Split>,
    keep: HashMap<(Split, GroupKey), TopK>,
}

impl<'a> Sampler<'a> {
    pub fn new(table: &'a FrequencyTable, spec: &SampleSpec) -> Result<Self, SampleError> {
        spec.validate()?;
        let clips = assign_clips(table, spec);
        let keys: Vec<&GroupKey> = table.groups.keys().collect();
        let mut keep = HashMap::new();
        for s in Split::ALL {
            let available: Vec<u64> = table
                .groups
                .values()
                .map(|g| g.clips.iter().filter(|(c, _)| clips.get(*c) == Some(&s)).map(|(_, n)| n).sum())
                .collect();
            let quotas = allocate(spec.sizes()[s.index()], &available, spec.allocation);
            for (k, q) in keys.iter().zip(quotas) {
                if q > 0 {
                    keep.insert(
                        (s, (*k).clone()),
                        TopK {
                            k: q as usize,
                            heap: BinaryHeap::new(),
                        },
                    );
                }
            }
        }
        Ok(Self {
            table,
            spec: spec.clone(),
            clips,
            keep,
        })
    }

    /// Per-(split, group) quotas in effect.
    pub fn quotas(&self) -> BTreeMap<(Split, GroupKey), u64> {
        self.keep.iter().map(|(k, v)| (k.clone(), v.k as u64)).collect()
    }

    fn keyed(&self, pair: QAPair) -> Result<Option<(Split, Candidate)>, SampleError> {
        let w = weight(&pair, self.table, &self.spec)?;
        let split = *self
            .clips
            .get(&pair.clip_id)
            .ok_or_else(|| SampleError::Consistency(format!("clip {} not counted", pair.clip_id)))?;
        if !self.keep.contains_key(&(split, (pair.dataset.clone(), pair.task))) {
            return Ok(None);
        }
        let key = sample_key(self.spec.seed, &pair.id, w);
        Ok(Some((split, Candidate { key, pair })))
    }

    fn insert(&mut self, split: Split, c: Candidate) {
        let gk = (split, (c.pair.dataset.clone(), c.pair.task));
        if let Some(top) = self.keep.get_mut(&gk) {
            top.offer(c);
        }
    }

    pub fn offer(&mut self, pair: QAPair) -> Result<(), SampleError> {
        if let Some((s, c)) = self.keyed(pair)? {
            self.insert(s, c);
        }
        Ok(())
    }

    /// Keys are computed in parallel; insertion order does not affect the
    /// result.
    pub fn offer_chunk(&mut self, pairs: Vec<QAPair>) -> Result<(), SampleError> {
        let keyed: Vec<_> = pairs
            .into_par_iter()
            .map(|p| self.keyed(p))
            .collect::<Result<Vec<_>, _>>()?;
        for (s, c) in keyed.into_iter().flatten() {
            self.insert(s, c);
        }
        Ok(())
    }

    /// Splits sorted by id.
    pub fn finish(self) -> Splits {
        let mut out = Splits::default();
        for ((s, _), top) in self.keep {
            let v = match s {
                Split::Train => &mut out.train,
                Split::Val => &mut out.val,
                Split::Test => &mut out.test,
            };
            v.extend(top.heap.into_iter().map(|c| c.pair));
        }
        for v in [&mut out.train, &mut out.val, &mut out.test] {
            v.sort_by(|a, b| a.id.cmp(&b.id));
        }
        out
    }
}

/// Both passes over an in-memory batch.
pub fn sample(pairs: &[QAPair], spec: &SampleSpec) -> Result<(FrequencyTable, Splits), SampleError> {
    let table = count_frequencies_par(pairs);
    let splits = sample_with(pairs.iter().cloned(), &table, spec)?;
    Ok((table, splits))
}

/// Second pass over a stream already counted into `table`.
pub fn sample_with(
    pairs: impl IntoIterator<Item = QAPair>,
    table: &FrequencyTable,
    spec: &SampleSpec,
) -> Result<Splits, SampleError> {
    let mut sampler = Sampler::new(table, spec)?;
    let mut buf = Vec::with_capacity(8192);
    for p in pairs {
        buf.push(p);
        if buf.len() == 8192 {
            sampler.offer_chunk(std::mem::take(&mut buf))?;
        }
    }
    sampler.offer_chunk(buf)?;
    Ok(sampler.finish())
}
