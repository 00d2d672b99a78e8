//! Retrieval evaluation: L2-normalized Euclidean ranking, CMC at selected
//! ranks and non-interpolated mean average precision.
//!
//! With cross-camera filtering on, gallery entries that share both the
//! query's identity and camera are removed from that query's ranking.
//! Queries left without any relevant gallery entry are excluded from the
//! averages and counted separately.

mod io;
mod report;

pub use io::{load_embeddings, save_embeddings};
pub use report::{EvalReport, Protocol};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::tensor::kernels::gemm;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("row {0} has zero norm")]
    ZeroNorm(usize),
    #[error("feature width mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("{0}")]
    Invalid(String),
    #[error("no query has a relevant gallery entry")]
    NoValidQueries,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Features with their identity and camera labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub features: Tensor,
    pub identities: Vec<u64>,
    pub cameras: Vec<u32>,
}

impl EmbeddingSet {
    pub fn new(features: Tensor, identities: Vec<u64>, cameras: Vec<u32>) -> Result<Self, EvalError> {
        if features.ndim() != 2 {
            return Err(EvalError::Invalid(format!("features must be N x F, got {:?}", features.shape())));
        }
        let n = features.shape()[0];
        if identities.len() != n || cameras.len() != n {
            return Err(EvalError::Invalid(format!(
                "{n} feature rows but {} identities and {} cameras",
                identities.len(),
                cameras.len()
            )));
        }
        if !features.is_finite() {
            return Err(EvalError::Invalid("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            identities,
            cameras,
        })
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }
}

/// Scale each row to unit Euclidean norm.
pub fn l2_normalize(features: &Tensor) -> Result<Tensor, EvalError> {
    if features.ndim() != 2 {
        return Err(EvalError::Invalid(format!("features must be N x F, got {:?}", features.shape())));
    }
    let f = features.shape()[1];
    let mut out = features.clone();
    for (i, row) in out.data_mut().chunks_mut(f).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EvalError::ZeroNorm(i));
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}

/// Dense `rows x cols` distance matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            data: crate::tensor::kernels::transpose(&self.data, self.rows, self.cols),
        }
    }
}

/// `d(i, j) = ||q_i - g_j||`, evaluated as
/// `sqrt(|q_i|^2 + |g_j|^2 - 2 <q_i, g_j>)` (`2 - 2 <q_i, g_j>` for unit
/// rows). Near-zero entries, where that identity cancels badly, are
/// recomputed from the difference vector.
pub fn pairwise_euclidean(q: &Tensor, g: &Tensor) -> Result<DistanceMatrix, EvalError> {
    if q.ndim() != 2 || g.ndim() != 2 {
        return Err(EvalError::Invalid("distance inputs must be matrices".into()));
    }
    let (nq, f) = (q.shape()[0], q.shape()[1]);
    let (ng, fg) = (g.shape()[0], g.shape()[1]);
    if f != fg {
        return Err(EvalError::DimensionMismatch(f, fg));
    }
    let sq = |t: &Tensor| -> Vec<f64> { t.data().chunks(f).map(|r| r.iter().map(|v| v * v).sum()).collect() };
    let (qn, gn) = (sq(q), sq(g));
    let mut data = vec![0.0; nq * ng];
    exec::for_each_chunk_mut(&mut data, ng, |i, row| {
        let qi = &q.data()[i * f..(i + 1) * f];
        gemm(1, f, ng, -2.0, qi, false, g.data(), true, 0.0, row);
        for (j, d) in row.iter_mut().enumerate() {
            let d2 = qn[i] + gn[j] + *d;
            *d = if d2 < 1e-6 {
                let gj = &g.data()[j * f..(j + 1) * f];
                qi.iter().zip(gj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            } else {
                d2.sqrt()
            };
        }
    });
    Ok(DistanceMatrix { rows: nq, cols: ng, data })
}

/// One ranked gallery entry of a query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub gallery_index: usize,
    pub distance: f64,
    pub is_match: bool,
}

/// A query's ranking after junk removal.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryRanking {
    pub query_index: usize,
    pub entries: Vec<RankedEntry>,
}

impl QueryRanking {
    pub fn num_relevant(&self) -> usize {
        self.entries.iter().filter(|e| e.is_match).count()
    }

    /// 1-based position of the first relevant entry.
    pub fn first_hit(&self) -> Option<usize> {
        self.entries.iter().position(|e| e.is_match).map(|p| p + 1)
    }

    /// Mean over relevant entries of the precision at their positions.
    pub fn average_precision(&self) -> Option<f64> {
        let mut hits = 0usize;
        let mut total = 0.0;
        for (p, e) in self.entries.iter().enumerate() {
            if e.is_match {
                hits += 1;
                total += hits as f64 / (p + 1) as f64;
            }
        }
        (hits > 0).then(|| total / hits as f64)
    }
}

/// Sort gallery by ascending distance (ties by gallery index) and drop
/// same-identity same-camera entries when `filter_junk` is set.
pub fn rank_gallery(
    distances: &DistanceMatrix,
    query: (&[u64], &[u32]),
    gallery: (&[u64], &[u32]),
    filter_junk: bool,
) -> Vec<QueryRanking> {
    let (q_ids, q_cams) = query;
    let (g_ids, g_cams) = gallery;
    exec::map_indexed(distances.rows, |i| {
        let row = distances.row(i);
        let mut order: Vec<usize> = (0..distances.cols)
            .filter(|&j| !(filter_junk && g_ids[j] == q_ids[i] && g_cams[j] == q_cams[i]))
            .collect();
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        QueryRanking {
            query_index: i,
            entries: order
                .into_iter()
                .map(|j| RankedEntry {
                    gallery_index: j,
                    distance: row[j],
                    is_match: g_ids[j] == q_ids[i],
                })
                .collect(),
        }
    })
}

/// CMC and mAP from a precomputed distance matrix.
pub fn evaluate_distances(
    distances: &DistanceMatrix,
    query: (&[u64], &[u32]),
    gallery: (&[u64], &[u32]),
    protocol: &Protocol,
) -> Result<EvalReport, EvalError> {
    if distances.rows == 0 || distances.cols == 0 {
        return Err(EvalError::Invalid("empty query or gallery".into()));
    }
    if query.0.len() != distances.rows || gallery.0.len() != distances.cols {
        return Err(EvalError::Invalid("label counts do not match the distance matrix".into()));
    }
    let rankings = rank_gallery(distances, query, gallery, protocol.cross_camera_filtering);
    let per_query: Vec<(usize, f64)> = rankings
        .iter()
        .filter_map(|r| Some((r.first_hit()?, r.average_precision()?)))
        .collect();
    if per_query.is_empty() {
        return Err(EvalError::NoValidQueries);
    }
    let valid = per_query.len() as f64;
    let cmc = protocol
        .ranks
        .iter()
        .map(|&k| (k, per_query.iter().filter(|(hit, _)| *hit <= k).count() as f64 / valid))
        .collect();
    let map_score = per_query.iter().map(|(_, ap)| ap).sum::<f64>() / valid;
    Ok(EvalReport {
        cmc,
        map_score,
        protocol: protocol.clone(),
        num_queries: distances.rows,
        num_valid_queries: per_query.len(),
    })
}

/// Full protocol: L2-normalize both sets, rank by Euclidean distance and
/// score.
pub fn evaluate(query: &EmbeddingSet, gallery: &EmbeddingSet, protocol: &Protocol) -> Result<EvalReport, EvalError> {
    if query.is_empty() || gallery.is_empty() {
        return Err(EvalError::Invalid("empty query or gallery".into()));
    }
    protocol.validate()?;
    let d = normalized_distances(query, gallery)?;
    evaluate_distances(
        &d,
        (&query.identities, &query.cameras),
        (&gallery.identities, &gallery.cameras),
        protocol,
    )
}

/// Euclidean distances between L2-normalized query and gallery features.
pub fn normalized_distances(query: &EmbeddingSet, gallery: &EmbeddingSet) -> Result<DistanceMatrix, EvalError> {
    let q = l2_normalize(&query.features)?;
    let g = l2_normalize(&gallery.features)?;
    pairwise_euclidean(&q, &g)
}

/// Mean mAP of `draws` independent Gaussian embeddings of width `dim` for
/// the given query and gallery labels: the chance level a trained
/// embedding has to beat.
pub fn random_embedding_baseline<R: rand::Rng + ?Sized>(
    query: (&[u64], &[u32]),
    gallery: (&[u64], &[u32]),
    dim: usize,
    protocol: &Protocol,
    draws: usize,
    rng: &mut R,
) -> Result<f64, EvalError> {
    if draws == 0 || dim == 0 {
        return Err(EvalError::Invalid("baseline needs at least one draw and one dimension".into()));
    }
    let mut total = 0.0;
    for _ in 0..draws {
        let q = EmbeddingSet::new(Tensor::randn(&[query.0.len(), dim], rng), query.0.to_vec(), query.1.to_vec())?;
        let g = EmbeddingSet::new(Tensor::randn(&[gallery.0.len(), dim], rng), gallery.0.to_vec(), gallery.1.to_vec())?;
        total += evaluate(&q, &g, protocol)?.map_score;
    }
    Ok(total / draws as f64)
}
