//! PK batch construction, random and hard-mined.
//!
//! Hard mining ranks every class by the cosine similarity of its class-weight
//! row to a randomly drawn anchor class, then cuts the ranked list into
//! consecutive groups of `P` classes. Similar classes therefore share a batch,
//! which is where the batch-hard triplet loss can push them apart.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::common::{cosine_similarity, Matrix, RngState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Random,
    HardMined,
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerKind::Random => "random",
            SamplerKind::HardMined => "hard_mined",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    /// `P·K` sample indices, grouped by class.
    pub indices: Vec<usize>,
    /// The `P` classes in batch order.
    pub classes: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochPlan {
    pub batches: Vec<Batch>,
    pub sampler_kind: SamplerKind,
    pub anchor_class: Option<usize>,
}

/// Sample indices per class, for classes with at least one sample.
fn indices_by_class(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    by_class
}

fn check_geometry(num_classes: usize, p: usize, k: usize) -> Result<()> {
    if p < 2 || k < 2 {
        return Err(Error::invalid(format!("need P >= 2 and K >= 2, got P={p} K={k}")));
    }
    if num_classes < p {
        return Err(Error::Contract(format!(
            "only {num_classes} classes available for P={p}"
        )));
    }
    Ok(())
}

/// K draws from one class: without replacement when the class is large
/// enough, otherwise every sample once plus uniform fills, shuffled.
fn draw_k(members: &[usize], k: usize, rng: &mut RngState) -> Vec<usize> {
    let mut pool = members.to_vec();
    if pool.len() >= k {
        for i in 0..k {
            let j = i + rng.next_int(pool.len() - i).expect("non-empty");
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    } else {
        while pool.len() < k {
            let j = rng.next_int(members.len()).expect("non-empty");
            pool.push(members[j]);
        }
        rng.shuffle(&mut pool);
        pool
    }
}

fn build_batches(
    class_order: &[usize],
    by_class: &BTreeMap<usize, Vec<usize>>,
    p: usize,
    k: usize,
    rng: &mut RngState,
) -> Vec<Batch> {
    class_order
        .chunks_exact(p)
        .map(|group| {
            let indices = group
                .iter()
                .flat_map(|c| draw_k(&by_class[c], k, rng))
                .collect();
            Batch {
                indices,
                classes: group.to_vec(),
            }
        })
        .collect()
}

/// Plain PK sampling: shuffle the classes, cut into groups of `P`, draw `K`
/// samples per class. A trailing group with fewer than `P` classes is dropped.
pub fn pk_random_epoch(labels: &[usize], p: usize, k: usize, rng: &mut RngState) -> Result<EpochPlan> {
    let by_class = indices_by_class(labels);
    check_geometry(by_class.len(), p, k)?;
    let mut order: Vec<usize> = by_class.keys().copied().collect();
    rng.shuffle(&mut order);
    Ok(EpochPlan {
        batches: build_batches(&order, &by_class, p, k, rng),
        sampler_kind: SamplerKind::Random,
        anchor_class: None,
    })
}

/// Similarity grid for sorting. Rounding makes classes whose cosines differ
/// only by floating-point noise compare equal, so the id tie-break decides.
const SIMILARITY_RESOLUTION: f64 = 1e9;

/// All `C` classes ordered by cosine similarity of their weight row to the
/// anchor's, descending; anchor first, ties by ascending class id.
pub fn class_similarity_ranking(class_weights: &Matrix, anchor_class: usize) -> Result<Vec<usize>> {
    Ok(ranked_similarities(class_weights, anchor_class)?
        .into_iter()
        .map(|(c, _)| c)
        .collect())
}

/// Like [`class_similarity_ranking`], with the similarity of each class.
pub fn ranked_similarities(class_weights: &Matrix, anchor_class: usize) -> Result<Vec<(usize, f64)>> {
    let c = class_weights.rows();
    if anchor_class >= c {
        return Err(Error::LabelOutOfRange {
            label: anchor_class,
            classes: c,
        });
    }
    let anchor = class_weights.row(anchor_class);
    let mut scored = Vec::with_capacity(c);
    for class in 0..c {
        let s = cosine_similarity(anchor, class_weights.row(class))?;
        let key = if class == anchor_class {
            i64::MAX
        } else {
            (s * SIMILARITY_RESOLUTION).round() as i64
        };
        scored.push((key, class, s));
    }
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().map(|(_, class, s)| (class, s)).collect())
}

/// Hard-mined PK epoch from a snapshot of the class weights.
///
/// The anchor is drawn uniformly from the classes present in `labels`;
/// classes absent from `labels` (e.g. held-out identities) are skipped when
/// grouping the ranked list.
pub fn hard_batch_epoch(
    class_weights: &Matrix,
    labels: &[usize],
    p: usize,
    k: usize,
    rng: &mut RngState,
) -> Result<EpochPlan> {
    let by_class = indices_by_class(labels);
    check_geometry(by_class.len(), p, k)?;
    let present: Vec<usize> = by_class.keys().copied().collect();
    let anchor = present[rng.next_int(present.len())?];
    hard_batch_epoch_with_anchor(class_weights, &by_class, anchor, p, k, rng)
}

/// [`hard_batch_epoch`] with the anchor class fixed by the caller.
pub fn hard_batch_epoch_from(
    class_weights: &Matrix,
    labels: &[usize],
    anchor_class: usize,
    p: usize,
    k: usize,
    rng: &mut RngState,
) -> Result<EpochPlan> {
    let by_class = indices_by_class(labels);
    check_geometry(by_class.len(), p, k)?;
    hard_batch_epoch_with_anchor(class_weights, &by_class, anchor_class, p, k, rng)
}

fn hard_batch_epoch_with_anchor(
    class_weights: &Matrix,
    by_class: &BTreeMap<usize, Vec<usize>>,
    anchor: usize,
    p: usize,
    k: usize,
    rng: &mut RngState,
) -> Result<EpochPlan> {
    if let Some(&max) = by_class.keys().next_back() {
        if max >= class_weights.rows() {
            return Err(Error::LabelOutOfRange {
                label: max,
                classes: class_weights.rows(),
            });
        }
    }
    let order: Vec<usize> = class_similarity_ranking(class_weights, anchor)?
        .into_iter()
        .filter(|c| by_class.contains_key(c))
        .collect();
    Ok(EpochPlan {
        batches: build_batches(&order, by_class, p, k, rng),
        sampler_kind: SamplerKind::HardMined,
        anchor_class: Some(anchor),
    })
}

/// Random sampling during warmup, hard mining afterwards.
pub fn schedule(epoch_index: usize, warmup_epochs: usize) -> SamplerKind {
    if epoch_index < warmup_epochs {
        SamplerKind::Random
    } else {
        SamplerKind::HardMined
    }
}

/// Mean pairwise cosine similarity among the class-weight rows of a batch.
pub fn intra_batch_similarity(class_weights: &Matrix, batch: &Batch) -> Result<f64> {
    let classes = &batch.classes;
    if classes.len() < 2 {
        return Err(Error::invalid("intra_batch_similarity needs P >= 2"));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..classes.len() {
        for j in i + 1..classes.len() {
            total += cosine_similarity(class_weights.row(classes[i]), class_weights.row(classes[j]))?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}
