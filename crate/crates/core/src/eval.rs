//! Retrieval metrics: AP, mAP, mAP@k, MRR, Chamfer similarity and the
//! ensemble-mean baseline.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::similarity::format_significant;
use crate::tensor::{self, Matrix};

/// Queries, gallery, and the relevant gallery indices of every query.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalTask {
    query: Matrix,
    gallery: Matrix,
    relevant: Vec<Vec<usize>>,
    excluded: Vec<Option<usize>>,
}

impl RetrievalTask {
    pub fn new(query: Matrix, gallery: Matrix, relevant: Vec<Vec<usize>>) -> Result<Self> {
        let excluded = vec![None; query.rows()];
        Self::build(query, gallery, relevant, excluded)
    }

    fn build(
        query: Matrix,
        gallery: Matrix,
        mut relevant: Vec<Vec<usize>>,
        excluded: Vec<Option<usize>>,
    ) -> Result<Self> {
        if relevant.len() != query.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} relevance lists for {} queries",
                relevant.len(),
                query.rows()
            )));
        }
        if query.cols() != gallery.cols() {
            return Err(Error::DimMismatch {
                expected: gallery.cols(),
                got: query.cols(),
            });
        }
        for (q, rel) in relevant.iter_mut().enumerate() {
            rel.sort_unstable();
            rel.dedup();
            if rel.is_empty() {
                return Err(Error::NoRelevant(q));
            }
            if let Some(&g) = rel.iter().find(|&&g| g >= gallery.rows()) {
                return Err(Error::ShapeMismatch(format!(
                    "query {q} lists gallery index {g} of {}",
                    gallery.rows()
                )));
            }
        }
        Ok(Self {
            query,
            gallery,
            relevant,
            excluded,
        })
    }

    /// Every row queries all other rows; items sharing its label are relevant.
    pub fn leave_one_out(embeddings: Matrix, labels: &[usize]) -> Result<Self> {
        if labels.len() != embeddings.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                embeddings.rows()
            )));
        }
        let relevant = (0..labels.len())
            .map(|q| {
                (0..labels.len())
                    .filter(|&g| g != q && labels[g] == labels[q])
                    .collect()
            })
            .collect();
        let excluded = (0..labels.len()).map(Some).collect();
        Self::build(embeddings.clone(), embeddings, relevant, excluded)
    }

    /// Same relevance structure over different embeddings of the same items.
    pub fn with_embeddings(&self, query: Matrix, gallery: Matrix) -> Result<Self> {
        if query.rows() != self.query.rows() || gallery.rows() != self.gallery.rows() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} queries and {} gallery rows, got {} and {}",
                self.query.rows(),
                self.gallery.rows(),
                query.rows(),
                gallery.rows()
            )));
        }
        Self::build(query, gallery, self.relevant.clone(), self.excluded.clone())
    }

    pub fn query(&self) -> &Matrix {
        &self.query
    }

    pub fn gallery(&self) -> &Matrix {
        &self.gallery
    }

    pub fn relevant(&self, q: usize) -> &[usize] {
        &self.relevant[q]
    }

    pub fn excluded(&self, q: usize) -> Option<usize> {
        self.excluded[q]
    }

    pub fn num_queries(&self) -> usize {
        self.query.rows()
    }

    pub fn gallery_size(&self) -> usize {
        self.gallery.rows()
    }

    /// Dot-product scores `query · galleryᵀ`.
    pub fn cosine_scores(&self) -> Result<Matrix> {
        tensor::gemm_nt(&self.query, &self.gallery)
    }

    /// Relevance flags of query `q` in descending-score order, ties by ascending index.
    pub fn ranked_relevance(&self, q: usize, scores: &[f64]) -> Vec<bool> {
        let mut order: Vec<usize> = (0..scores.len())
            .filter(|&g| Some(g) != self.excluded[q])
            .collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        let rel = &self.relevant[q];
        order.iter().map(|g| rel.binary_search(g).is_ok()).collect()
    }

    fn check_scores(&self, scores: &Matrix) -> Result<()> {
        if scores.shape() != (self.num_queries(), self.gallery_size()) {
            return Err(Error::ShapeMismatch(format!(
                "scores are {:?}, task is {}x{}",
                scores.shape(),
                self.num_queries(),
                self.gallery_size()
            )));
        }
        Ok(())
    }
}

fn truncated_ap(ranked: &[bool], k: usize, total: usize) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (idx, _) in ranked.iter().take(k).enumerate().filter(|(_, &r)| r) {
        hits += 1;
        sum += hits as f64 / (idx + 1) as f64;
    }
    sum / total.min(k) as f64
}

/// AP of a ranked binary relevance list.
pub fn average_precision(ranked_relevance: &[bool]) -> Result<f64> {
    let total = ranked_relevance.iter().filter(|&&r| r).count();
    if total == 0 {
        return Err(Error::NoRelevant(0));
    }
    Ok(truncated_ap(ranked_relevance, ranked_relevance.len(), total))
}

fn mean_over_queries(task: &RetrievalTask, scores: &Matrix, k: Option<usize>) -> Result<f64> {
    task.check_scores(scores)?;
    let mut sum = 0.0;
    for q in 0..task.num_queries() {
        let ranked = task.ranked_relevance(q, scores.row(q));
        let total = ranked.iter().filter(|&&r| r).count();
        if total == 0 {
            return Err(Error::NoRelevant(q));
        }
        sum += truncated_ap(&ranked, k.unwrap_or(ranked.len()), total);
    }
    Ok(sum / task.num_queries() as f64)
}

pub fn mean_ap(task: &RetrievalTask, scores: &Matrix) -> Result<f64> {
    mean_over_queries(task, scores, None)
}

/// AP over the top `k` results, normalized by `min(R, k)`.
pub fn map_at_k(task: &RetrievalTask, scores: &Matrix, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::BadConfig("k must be >= 1".into()));
    }
    mean_over_queries(task, scores, Some(k))
}

/// Mean reciprocal rank of the diagonal; ties count against the diagonal.
pub fn mrr(m: &Matrix) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if m.rows() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let n = m.rows();
    let total: f64 = (0..n)
        .map(|i| {
            let d = m.get(i, i);
            let rank = 1 + (0..n).filter(|&j| j != i && m.get(i, j) >= d).count();
            1.0 / rank as f64
        })
        .sum();
    Ok(total / n as f64)
}

/// Running mean of a per-batch metric.
pub fn cumulative_mean(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let mut sum = 0.0;
    Ok(values
        .iter()
        .enumerate()
        .map(|(t, v)| {
            sum += v;
            sum / (t + 1) as f64
        })
        .collect())
}

pub fn cumulative_mrr(history: &[Matrix]) -> Result<Vec<f64>> {
    let per_batch = history.iter().map(mrr).collect::<Result<Vec<_>>>()?;
    cumulative_mean(&per_batch)
}

/// Mean over query frames (rows) of the best-matching frame similarity.
pub fn chamfer_similarity(frame_sim: &Matrix) -> Result<f64> {
    if frame_sim.rows() == 0 || frame_sim.cols() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let total: f64 = frame_sim
        .iter_rows()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    Ok(total / frame_sim.rows() as f64)
}

/// Average over teachers of `query_k · gallery_kᵀ`; each pair is (query, gallery).
pub fn ensemble_mean_scores(task: &RetrievalTask, teachers: &[(Matrix, Matrix)]) -> Result<Matrix> {
    if teachers.is_empty() {
        return Err(Error::EmptyTeacherList);
    }
    let mut acc = Matrix::zeros(task.num_queries(), task.gallery_size());
    for (k, (q, g)) in teachers.iter().enumerate() {
        if q.rows() != task.num_queries() || g.rows() != task.gallery_size() || q.cols() != g.cols() {
            return Err(Error::ShapeMismatch(format!(
                "teacher {k}: query {:?}, gallery {:?}",
                q.shape(),
                g.shape()
            )));
        }
        let s = tensor::gemm_nt(q, g)?;
        for (a, v) in acc.as_mut_slice().iter_mut().zip(s.as_slice()) {
            *a += v;
        }
    }
    let inv = 1.0 / teachers.len() as f64;
    Ok(acc.scaled(inv))
}

/// `metric\tvalue` lines with six decimals.
pub fn metrics_tsv(metrics: &[(String, f64)]) -> String {
    let mut out = String::from("metric\tvalue\n");
    for (name, v) in metrics {
        out.push_str(&format!("{name}\t{v:.6}\n"));
    }
    out
}

/// Nine-significant-digit rendering shared by the TSV writers.
pub fn fmt9(x: f64) -> String {
    format_significant(x, 9)
}
