//! Fixed-capacity global replay buffer, partitioned per episode.
//!
//! Each episode contributes a partition of top-ranked representative and
//! difficult samples. When the buffer is over capacity, slots are shared out
//! across partitions as evenly as their contents allow (ties go to the most
//! recent partitions) and each partition drops its own lowest-ranked entries.
//! Scores are only ever compared inside one partition, since they are
//! normalised per dataset.

use std::collections::{BTreeMap, BTreeSet};
use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::scoring::SampleScores;

pub const BUFFER_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Representative,
    Difficult,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeRefs {
    #[serde(default)]
    pub prob_path: String,
    #[serde(default)]
    pub gt_path: String,
    /// Modality name → volume path.
    #[serde(default)]
    pub modalities: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub sample_id: String,
    /// Filled from the owning partition; not repeated on disk.
    #[serde(skip)]
    pub episode: u32,
    pub category: Category,
    /// The normalised combined score the entry was selected under.
    pub stored_score: f64,
    #[serde(flatten)]
    pub refs: VolumeRefs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub episode: u32,
    pub entries: Vec<BufferEntry>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, category: Category) -> usize {
        self.entries.iter().filter(|e| e.category == category).count()
    }

    /// Attach volume references by sample id.
    pub fn with_refs(mut self, mut lookup: impl FnMut(&str) -> Option<VolumeRefs>) -> Self {
        for e in &mut self.entries {
            if let Some(r) = lookup(&e.sample_id) {
                e.refs = r;
            }
        }
        self
    }
}

/// Descending score, then ascending sample id.
fn rank_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Pick `ceil(n/2)` representative and `floor(n/2)` difficult samples.
///
/// A sample at the top of both rankings stays representative and the
/// difficult list moves on to its next candidate. When fewer than `n`
/// samples exist, all of them are taken with the same balanced split.
pub fn select_partition(scores: &[SampleScores], n: usize, episode: u32) -> Result<Partition> {
    if scores.is_empty() {
        return Err(Error::NoValidSamples);
    }
    if n == 0 {
        return Err(Error::InvalidConfig("partition size must be at least 1".into()));
    }
    let ids: BTreeSet<&str> = scores.iter().map(|s| s.sample_id.as_str()).collect();
    if ids.len() != scores.len() {
        return Err(Error::DuplicateSampleId(
            "scores contain repeated sample ids".into(),
        ));
    }
    let n = n.min(scores.len());
    let n_rep = n.div_ceil(2);
    let n_diff = n / 2;

    let mut by_rep: Vec<&SampleScores> = scores.iter().collect();
    by_rep.sort_by(|a, b| rank_order((a.r_rep, &a.sample_id), (b.r_rep, &b.sample_id)));
    let mut by_diff: Vec<&SampleScores> = scores.iter().collect();
    by_diff.sort_by(|a, b| rank_order((a.r_diff, &a.sample_id), (b.r_diff, &b.sample_id)));

    let mut entries = Vec::with_capacity(n);
    let mut taken = BTreeSet::new();
    for s in by_rep.into_iter().take(n_rep) {
        taken.insert(s.sample_id.as_str());
        entries.push(BufferEntry {
            sample_id: s.sample_id.clone(),
            episode,
            category: Category::Representative,
            stored_score: s.r_rep,
            refs: VolumeRefs::default(),
        });
    }
    for s in by_diff
        .into_iter()
        .filter(|s| !taken.contains(s.sample_id.as_str()))
        .take(n_diff)
    {
        entries.push(BufferEntry {
            sample_id: s.sample_id.clone(),
            episode,
            category: Category::Difficult,
            stored_score: s.r_diff,
            refs: VolumeRefs::default(),
        });
    }
    Ok(Partition { episode, entries })
}

/// Share `beta` slots among partitions holding `available[i]` entries.
///
/// Slots are handed out one at a time to the partition with the fewest slots
/// that can still use one, ties going to the most recent. With enough entries
/// everywhere this is `floor(beta/t)` each plus one extra for the
/// `beta mod t` newest partitions.
pub fn allocate_slots(beta: usize, available: &[usize]) -> Vec<usize> {
    let mut alloc = vec![0usize; available.len()];
    for _ in 0..beta {
        let pick = (0..alloc.len())
            .rev()
            .filter(|&i| alloc[i] < available[i])
            .min_by_key(|&i| alloc[i]);
        match pick {
            Some(i) => alloc[i] += 1,
            None => break,
        }
    }
    alloc
}

/// Base quotas ignoring how many entries each partition holds.
pub fn parity_quotas(beta: usize, t: usize) -> Vec<usize> {
    allocate_slots(beta, &vec![usize::MAX; t])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eviction {
    pub episode: u32,
    pub sample_id: String,
    pub category: Category,
    pub stored_score: f64,
}

/// What one buffer update did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub episode: u32,
    /// Entries per partition before trimming, oldest first.
    pub available: Vec<usize>,
    /// Slots granted per partition, oldest first.
    pub allocation: Vec<usize>,
    pub evicted: Vec<Eviction>,
}

impl UpdateReport {
    /// Sizes differ by more than one only where the smaller partition ran out of entries.
    pub fn parity_ok(&self) -> bool {
        self.allocation.iter().enumerate().all(|(i, &a)| {
            a == self.available[i] || self.allocation.iter().all(|&b| b <= a + 1)
        })
    }
}

/// Remove lowest-ranked entries until `target` remain, alternating categories
/// so the representative/difficult split stays balanced.
fn evict_down_to(p: &mut Partition, target: usize) -> Vec<BufferEntry> {
    let mut out = Vec::new();
    while p.entries.len() > target {
        let rep = p.count(Category::Representative);
        let diff = p.count(Category::Difficult);
        let cat = if rep > diff || diff == 0 {
            Category::Representative
        } else {
            Category::Difficult
        };
        let victim = p
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.category == cat)
            .max_by(|(_, a), (_, b)| {
                rank_order((a.stored_score, &a.sample_id), (b.stored_score, &b.sample_id))
            })
            .map(|(i, _)| i)
            .expect("category has entries");
        out.push(p.entries.remove(victim));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalBuffer {
    beta: usize,
    partitions: Vec<Partition>,
}

#[derive(Serialize, Deserialize)]
struct BufferStateDoc {
    version: u64,
    beta: usize,
    partitions: Vec<Partition>,
}

impl GlobalBuffer {
    pub fn new(beta: usize) -> Result<Self> {
        if beta == 0 {
            return Err(Error::InvalidConfig("buffer capacity must be at least 1".into()));
        }
        Ok(Self {
            beta,
            partitions: Vec::new(),
        })
    }

    pub fn beta(&self) -> usize {
        self.beta
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    pub fn total(&self) -> usize {
        self.partitions.iter().map(Partition::len).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.partitions.iter().map(Partition::len).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn latest_episode(&self) -> Option<u32> {
        self.partitions.last().map(|p| p.episode)
    }

    pub fn entries(&self) -> impl Iterator<Item = &BufferEntry> {
        self.partitions.iter().flat_map(|p| p.entries.iter())
    }

    /// Insert the partition of a newly finished episode and trim to capacity.
    pub fn update(&mut self, mut new_partition: Partition) -> Result<UpdateReport> {
        if let Some(latest) = self.latest_episode() {
            if new_partition.episode <= latest {
                return Err(Error::NonMonotonicEpisode {
                    latest,
                    new: new_partition.episode,
                });
            }
        }
        for e in &mut new_partition.entries {
            e.episode = new_partition.episode;
        }
        self.partitions.push(new_partition);

        let available = self.sizes();
        let allocation = allocate_slots(self.beta, &available);
        let mut evicted = Vec::new();
        for (p, &target) in self.partitions.iter_mut().zip(&allocation) {
            for e in evict_down_to(p, target) {
                evicted.push(Eviction {
                    episode: p.episode,
                    sample_id: e.sample_id,
                    category: e.category,
                    stored_score: e.stored_score,
                });
            }
        }
        Ok(UpdateReport {
            episode: self.partitions.last().map(|p| p.episode).unwrap_or_default(),
            available,
            allocation,
            evicted,
        })
    }

    /// `k` entries drawn uniformly without replacement, in draw order.
    pub fn sample_replay_batch(&self, k: usize, seed: u64) -> Result<Vec<BufferEntry>> {
        let all: Vec<&BufferEntry> = self.entries().collect();
        if all.is_empty() {
            return Err(Error::BufferEmpty);
        }
        if k == 0 || k > all.len() {
            return Err(Error::KTooLarge {
                k,
                available: all.len(),
            });
        }
        let mut rng = Prng::new(seed);
        Ok(rng
            .sample_indices(all.len(), k)
            .into_iter()
            .map(|i| all[i].clone())
            .collect())
    }

    /// Structural invariants that must hold for any persisted buffer.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.total() > self.beta {
            return Err(format!("{} entries exceed capacity {}", self.total(), self.beta));
        }
        for w in self.partitions.windows(2) {
            if w[1].episode <= w[0].episode {
                return Err(format!(
                    "partitions out of episode order: {} then {}",
                    w[0].episode, w[1].episode
                ));
            }
        }
        for p in &self.partitions {
            let mut ids = BTreeSet::new();
            for e in &p.entries {
                if !ids.insert(e.sample_id.as_str()) {
                    return Err(format!("episode {} repeats sample {}", p.episode, e.sample_id));
                }
                if !(0.0..=1.0).contains(&e.stored_score) {
                    return Err(format!("stored score {} outside [0, 1]", e.stored_score));
                }
            }
            let rep = p.count(Category::Representative);
            let diff = p.count(Category::Difficult);
            if rep.abs_diff(diff) > 1 {
                return Err(format!(
                    "episode {} split {rep} representative / {diff} difficult",
                    p.episode
                ));
            }
        }
        Ok(())
    }

    pub fn save_state(&self) -> Result<String> {
        let doc = BufferStateDoc {
            version: BUFFER_VERSION,
            beta: self.beta,
            partitions: self.partitions.clone(),
        };
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    pub fn load_state(json: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(json).map_err(|e| Error::CorruptState(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::CorruptState("missing or non-integer version".into()))?;
        if version != BUFFER_VERSION {
            return Err(Error::SchemaMismatch {
                document: "buffer state",
                found: version,
                expected: BUFFER_VERSION,
            });
        }
        let doc: BufferStateDoc =
            serde_json::from_value(value).map_err(|e| Error::CorruptState(e.to_string()))?;
        let mut buf = GlobalBuffer::new(doc.beta).map_err(|e| Error::CorruptState(e.to_string()))?;
        buf.partitions = doc.partitions;
        for p in &mut buf.partitions {
            for e in &mut p.entries {
                e.episode = p.episode;
            }
        }
        buf.check_invariants().map_err(Error::CorruptState)?;
        Ok(buf)
    }
}

/// Functional form of [`GlobalBuffer::update`].
pub fn update_global(mut buffer: GlobalBuffer, new_partition: Partition) -> Result<GlobalBuffer> {
    buffer.update(new_partition)?;
    Ok(buffer)
}
