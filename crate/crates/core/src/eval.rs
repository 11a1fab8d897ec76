//! Ranked retrieval evaluation: mAP, CMC and k-reciprocal re-ranking.
//!
//! Gallery items sharing both identity and scene with the query are removed
//! from that query's ranking, as in cross-camera ReID protocols. AP is the
//! non-interpolated mean of precision@k over the relevant positions.

use serde::{Deserialize, Serialize};

use crate::common::{pairwise_sq_euclidean, Matrix};
use crate::error::{Error, Result};

/// Embeddings with identity and scene labels, one row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSet {
    pub embeddings: Matrix,
    pub class_ids: Vec<usize>,
    pub scene_ids: Vec<usize>,
}

impl EmbeddedSet {
    pub fn new(embeddings: Matrix, class_ids: Vec<usize>, scene_ids: Vec<usize>) -> Result<Self> {
        if class_ids.len() != embeddings.rows() || scene_ids.len() != embeddings.rows() {
            return Err(Error::shape(
                "EmbeddedSet::new",
                embeddings.rows(),
                format!("{} ids / {} scenes", class_ids.len(), scene_ids.len()),
            ));
        }
        Ok(Self {
            embeddings,
            class_ids,
            scene_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub map: f64,
    /// `cmc[r]`: fraction of queries whose first match is within rank `r + 1`.
    pub cmc: Vec<f64>,
    pub per_query_ap: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankParams {
    pub k1: usize,
    pub k2: usize,
    pub lambda_rr: f64,
}

impl Default for RerankParams {
    fn default() -> Self {
        Self {
            k1: 20,
            k2: 6,
            lambda_rr: 0.3,
        }
    }
}

impl RerankParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= self.k2 && self.k2 >= 1) {
            return Err(Error::invalid(format!(
                "re-ranking needs k1 >= k2 >= 1, got k1={} k2={}",
                self.k1, self.k2
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda_rr) {
            return Err(Error::invalid(format!("lambda_rr {} not in [0, 1]", self.lambda_rr)));
        }
        Ok(())
    }

    /// Shrinks the neighborhoods to fit a gallery of `gallery_size` items.
    pub fn fitted(&self, gallery_size: usize) -> Self {
        let k1 = self.k1.min(gallery_size.saturating_sub(1)).max(1);
        Self {
            k1,
            k2: self.k2.min(k1).max(1),
            lambda_rr: self.lambda_rr,
        }
    }
}

/// JSON evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    pub cmc: Vec<f64>,
    pub n_query: usize,
    pub n_gallery: usize,
    pub reranked: bool,
    pub params: Option<RerankParams>,
}

impl EvalReport {
    pub fn new(result: &EvalResult, n_query: usize, n_gallery: usize, params: Option<RerankParams>) -> Self {
        Self {
            map: result.map,
            cmc: result.cmc.clone(),
            n_query,
            n_gallery,
            reranked: params.is_some(),
            params,
        }
    }
}

/// Average precision of a ranked 0/1 relevance list.
pub fn compute_ap(relevance: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::Contract("compute_ap: no relevant item".into()));
    }
    Ok(sum / hits as f64)
}

/// Indices of `row` sorted by value, ties by index.
fn argsort(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    idx
}

/// Scores a query/gallery split. With `rerank`, neighborhoods are first
/// shrunk via [`RerankParams::fitted`].
pub fn evaluate(query: &EmbeddedSet, gallery: &EmbeddedSet, rerank: Option<&RerankParams>) -> Result<EvalResult> {
    if query.is_empty() || gallery.is_empty() {
        return Err(Error::invalid("evaluate needs non-empty query and gallery sets"));
    }
    let dist = match rerank {
        Some(p) => k_reciprocal_rerank(&query.embeddings, &gallery.embeddings, &p.fitted(gallery.len()))?,
        None => {
            let mut d = pairwise_sq_euclidean(&query.embeddings, &gallery.embeddings)?;
            d.data_mut().iter_mut().for_each(|v| *v = v.sqrt());
            d
        }
    };
    evaluate_distances(&dist, query, gallery)
}

/// Scores a precomputed `Q×G` distance matrix.
pub fn evaluate_distances(dist: &Matrix, query: &EmbeddedSet, gallery: &EmbeddedSet) -> Result<EvalResult> {
    let g = gallery.len();
    if dist.shape() != (query.len(), g) {
        return Err(Error::shape(
            "evaluate_distances",
            format!("{}x{g}", query.len()),
            format!("{:?}", dist.shape()),
        ));
    }
    let mut per_query_ap = Vec::with_capacity(query.len());
    let mut first_hits = vec![0usize; g];
    for q in 0..query.len() {
        let (qc, qs) = (query.class_ids[q], query.scene_ids[q]);
        let relevance: Vec<bool> = argsort(dist.row(q))
            .into_iter()
            .filter(|&j| !(gallery.class_ids[j] == qc && gallery.scene_ids[j] == qs))
            .map(|j| gallery.class_ids[j] == qc)
            .collect();
        let first = relevance.iter().position(|&r| r).ok_or_else(|| {
            Error::Contract(format!(
                "query {q} (class {qc}, scene {qs}) has no valid gallery match"
            ))
        })?;
        first_hits[first] += 1;
        per_query_ap.push(compute_ap(&relevance)?);
    }
    let nq = query.len() as f64;
    let mut cmc = Vec::with_capacity(g);
    let mut acc = 0usize;
    for hits in first_hits {
        acc += hits;
        cmc.push(acc as f64 / nq);
    }
    Ok(EvalResult {
        map: per_query_ap.iter().sum::<f64>() / nq,
        cmc,
        per_query_ap,
    })
}

/// `k`-reciprocal neighbors of `i`: members of its top-`k+1` list whose own
/// top-`k+1` list contains `i`.
fn k_reciprocal(ranks: &[Vec<usize>], i: usize, k: usize) -> Vec<usize> {
    ranks[i][..=k]
        .iter()
        .copied()
        .filter(|&j| ranks[j][..=k].contains(&i))
        .collect()
}

/// k-reciprocal encoding re-ranking over the pooled query+gallery set.
///
/// Squared Euclidean distances are scaled per row by the row maximum. Each
/// item is encoded as a weighted indicator over its k1-reciprocal set,
/// expanded with the k1/2-reciprocal sets of its members when two thirds of
/// such a set already lies inside, then averaged over the k2 nearest
/// neighbors. The result is
/// `lambda_rr * original + (1 - lambda_rr) * jaccard`, restricted to
/// query rows and gallery columns.
pub fn k_reciprocal_rerank(q_emb: &Matrix, g_emb: &Matrix, params: &RerankParams) -> Result<Matrix> {
    params.validate()?;
    let (nq, ng) = (q_emb.rows(), g_emb.rows());
    if params.k1 >= ng {
        return Err(Error::invalid(format!(
            "k1 = {} must be smaller than the gallery size {ng}",
            params.k1
        )));
    }
    if q_emb.cols() != g_emb.cols() {
        return Err(Error::shape("k_reciprocal_rerank", q_emb.cols(), g_emb.cols()));
    }
    let all = Matrix::from_rows(&q_emb.iter_rows().chain(g_emb.iter_rows()).collect::<Vec<_>>())?;
    let n = nq + ng;
    let mut original = pairwise_sq_euclidean(&all, &all)?;
    for i in 0..n {
        let row = original.row_mut(i);
        let max = row.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            row.iter_mut().for_each(|v| *v /= max);
        }
    }
    let ranks: Vec<Vec<usize>> = (0..n).map(|i| argsort(original.row(i))).collect();
    let k1 = params.k1;
    let half = ((k1 as f64) / 2.0).round_ties_even() as usize;

    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        let base = k_reciprocal(&ranks, i, k1);
        let mut expanded = base.clone();
        for &cand in &base {
            let cand_set = k_reciprocal(&ranks, cand, half);
            let overlap = cand_set.iter().filter(|c| base.contains(c)).count();
            if overlap as f64 > 2.0 / 3.0 * cand_set.len() as f64 {
                expanded.extend(cand_set);
            }
        }
        expanded.sort_unstable();
        expanded.dedup();
        let weights: Vec<f64> = expanded.iter().map(|&j| (-original.get(i, j)).exp()).collect();
        let total: f64 = weights.iter().sum();
        for (&j, w) in expanded.iter().zip(weights) {
            v.set(i, j, w / total);
        }
    }

    if params.k2 != 1 {
        let mut qe = Matrix::zeros(n, n);
        for i in 0..n {
            let nbrs = &ranks[i][..params.k2];
            let out = qe.row_mut(i);
            for &j in nbrs {
                for (o, x) in out.iter_mut().zip(v.row(j)) {
                    *o += x;
                }
            }
            out.iter_mut().for_each(|o| *o /= params.k2 as f64);
        }
        v = qe;
    }

    // rows holding a nonzero entry, per column
    let mut inverted: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for (j, &x) in v.row(i).iter().enumerate() {
            if x != 0.0 {
                inverted[j].push(i);
            }
        }
    }

    let lambda = params.lambda_rr;
    let mut out = Matrix::zeros(nq, ng);
    let mut shared = vec![0.0; n];
    for i in 0..nq {
        shared.iter_mut().for_each(|s| *s = 0.0);
        for (j, &vij) in v.row(i).iter().enumerate() {
            if vij == 0.0 {
                continue;
            }
            for &r in &inverted[j] {
                shared[r] += vij.min(v.get(r, j));
            }
        }
        for g in 0..ng {
            let s = shared[nq + g];
            let jaccard = 1.0 - s / (2.0 - s);
            out.set(i, g, jaccard * (1.0 - lambda) + original.get(i, nq + g) * lambda);
        }
    }
    Ok(out)
}
