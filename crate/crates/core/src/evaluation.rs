//! Retrieval metrics under the paired-node protocol plus the diagnostic
//! suite: V/T kNN overlap, neighbor purity, the fixed-depth structural
//! smoothing sweep, and hard-query structural support.

use crate::data::{MagDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::{l2_normalize_rows, spmm, DenseMatrix, SeededRng, SparseRowMatrix, NORM_EPS};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    /// Percentages.
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    pub mrr: f64,
    /// Mean rank of the paired counterpart (1 = best).
    pub mean_rank: f64,
}

impl DirectionMetrics {
    fn average(a: &DirectionMetrics, b: &DirectionMetrics) -> DirectionMetrics {
        DirectionMetrics {
            r_at_1: (a.r_at_1 + b.r_at_1) / 2.0,
            r_at_5: (a.r_at_5 + b.r_at_5) / 2.0,
            r_at_10: (a.r_at_10 + b.r_at_10) / 2.0,
            mrr: (a.mrr + b.mrr) / 2.0,
            mean_rank: (a.mean_rank + b.mean_rank) / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub v2t: DirectionMetrics,
    pub t2v: DirectionMetrics,
    pub averaged: DirectionMetrics,
    pub queries: usize,
    pub gallery: usize,
}

/// Rank of each query's own counterpart with pessimistic tie handling: tied
/// scores count as ranked ahead, so collapsed embeddings cannot score well.
fn direction_metrics(
    queries_m: &DenseMatrix,
    gallery_m: &DenseMatrix,
    queries: &[usize],
    gallery: &[usize],
) -> DirectionMetrics {
    let mut r1 = 0usize;
    let mut r5 = 0usize;
    let mut r10 = 0usize;
    let mut mrr = 0.0;
    let mut mean_rank = 0.0;
    for &q in queries {
        let q_row = queries_m.row(q);
        let own: f64 = q_row.iter().zip(gallery_m.row(q)).map(|(a, b)| a * b).sum();
        let mut ahead = 0usize;
        for &g in gallery {
            if g == q {
                continue;
            }
            let s: f64 = q_row.iter().zip(gallery_m.row(g)).map(|(a, b)| a * b).sum();
            if s >= own {
                ahead += 1;
            }
        }
        let rank = 1 + ahead;
        if rank <= 1 {
            r1 += 1;
        }
        if rank <= 5 {
            r5 += 1;
        }
        if rank <= 10 {
            r10 += 1;
        }
        mrr += 1.0 / rank as f64;
        mean_rank += rank as f64;
    }
    let nq = queries.len() as f64;
    DirectionMetrics {
        r_at_1: 100.0 * r1 as f64 / nq,
        r_at_5: 100.0 * r5 as f64 / nq,
        r_at_10: 100.0 * r10 as f64 / nq,
        mrr: 100.0 * mrr / nq,
        mean_rank: mean_rank / nq,
    }
}

/// Paired-node retrieval in both directions. Similarity is the dot product;
/// rows are expected unit-norm. Every query must appear in the gallery so its
/// counterpart is scoreable.
pub fn retrieval_metrics(
    z_v: &DenseMatrix,
    z_t: &DenseMatrix,
    queries: &[usize],
    gallery: &[usize],
) -> Result<RetrievalReport> {
    if queries.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    if z_v.rows() != z_t.rows() || z_v.cols() != z_t.cols() {
        return Err(Error::DimMismatch {
            op: "retrieval_metrics",
            detail: format!(
                "{}x{} vs {}x{}",
                z_v.rows(),
                z_v.cols(),
                z_t.rows(),
                z_t.cols()
            ),
        });
    }
    let mut in_gallery = vec![false; z_v.rows()];
    for &g in gallery {
        in_gallery[g] = true;
    }
    for &q in queries {
        if !in_gallery[q] {
            return Err(Error::BatchNotInGallery { node: q });
        }
    }
    let v2t = direction_metrics(z_v, z_t, queries, gallery);
    let t2v = direction_metrics(z_t, z_v, queries, gallery);
    Ok(RetrievalReport {
        v2t,
        t2v,
        averaged: DirectionMetrics::average(&v2t, &t2v),
        queries: queries.len(),
        gallery: gallery.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OverlapReport {
    pub per_node: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub k: usize,
}

/// Fraction of shared neighbors between the visual and textual kNN graphs.
pub fn knn_overlap(
    features_v: &DenseMatrix,
    features_t: &DenseMatrix,
    k: usize,
) -> Result<OverlapReport> {
    let n = features_v.rows();
    if features_t.rows() != n {
        return Err(Error::ModalityRowMismatch {
            visual: n,
            textual: features_t.rows(),
        });
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidParameter {
            what: "k",
            detail: format!("need 0 < k < N, got k={} N={}", k, n),
        });
    }
    let knn_v = crate::topology::knn_rows(features_v, features_v, k, true);
    let knn_t = crate::topology::knn_rows(features_t, features_t, k, true);
    let mut per_node = Vec::with_capacity(n);
    for i in 0..n {
        let set_v: std::collections::BTreeSet<usize> = knn_v[i].iter().copied().collect();
        let shared = knn_t[i].iter().filter(|j| set_v.contains(j)).count();
        per_node.push(shared as f64 / k as f64);
    }
    let mean = per_node.iter().sum::<f64>() / n as f64;
    let mut sorted = per_node.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Ok(OverlapReport {
        per_node,
        mean,
        median,
        k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborhoodSource {
    Structural,
    KnnV,
    KnnT,
}

/// Mean over nodes of the fraction of neighbors sharing the node's category.
/// Nodes without neighbors are skipped.
pub fn neighbor_purity(
    ds: &MagDataset,
    source: NeighborhoodSource,
    k: usize,
) -> Result<f64> {
    let categories = ds.categories.as_ref().ok_or(Error::MissingCategories)?;
    let neighborhoods: Vec<Vec<usize>> = match source {
        NeighborhoodSource::Structural => ds.adjacency(),
        NeighborhoodSource::KnnV => {
            crate::topology::knn_rows(&ds.features_v, &ds.features_v, k, true)
        }
        NeighborhoodSource::KnnT => {
            crate::topology::knn_rows(&ds.features_t, &ds.features_t, k, true)
        }
    };
    let mut total = 0.0;
    let mut counted = 0usize;
    for (i, nbrs) in neighborhoods.iter().enumerate() {
        if nbrs.is_empty() {
            continue;
        }
        let same = nbrs.iter().filter(|&&j| categories[j] == categories[i]).count();
        total += same as f64 / nbrs.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::InvalidParameter {
            what: "neighborhoods",
            detail: "no node has any neighbor".to_string(),
        });
    }
    Ok(total / counted as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct DepthSweepEntry {
    pub depth: usize,
    pub mean_rank: f64,
    /// Mean intra-category cosine minus mean inter-category cosine on the
    /// smoothed states; absent without category ids.
    pub separation: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DepthSweepReport {
    pub entries: Vec<DepthSweepEntry>,
}

impl DepthSweepReport {
    pub fn mean_rank_at(&self, depth: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.depth == depth)
            .map(|e| e.mean_rank)
    }

    /// Two-column plot-ready CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("depth,mean_rank\n");
        for e in &self.entries {
            out.push_str(&format!("{},{}\n", e.depth, e.mean_rank));
        }
        out
    }
}

/// Uniform degree-normalized structural operator; isolated nodes fall back to
/// a self-loop.
pub fn uniform_structural_operator(ds: &MagDataset) -> SparseRowMatrix {
    let n = ds.node_count();
    let adj = ds.adjacency();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    offsets.push(0);
    for (i, nbrs) in adj.iter().enumerate() {
        if nbrs.is_empty() {
            indices.push(i);
            values.push(1.0);
        } else {
            let w = 1.0 / nbrs.len() as f64;
            for &j in nbrs {
                indices.push(j);
                values.push(w);
            }
        }
        offsets.push(indices.len());
    }
    SparseRowMatrix::new(n, n, offsets, indices, values, true)
        .expect("uniform operator rows are valid")
}

/// Smooths the frozen features k steps with the uniform structural operator
/// (no restart, no per-step normalization) and reports paired MeanR plus the
/// semantic separation score at each requested depth.
///
/// Depths must be strictly increasing and start at 0; depth 0 reproduces the
/// raw-feature metrics exactly.
pub fn depth_sweep(ds: &MagDataset, depths: &[usize]) -> Result<DepthSweepReport> {
    if depths.is_empty() || depths[0] != 0 {
        return Err(Error::InvalidParameter {
            what: "depths",
            detail: "must start at 0".to_string(),
        });
    }
    if depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter {
            what: "depths",
            detail: "must be strictly increasing".to_string(),
        });
    }
    if ds.features_v.cols() != ds.features_t.cols() {
        return Err(Error::DimMismatch {
            op: "depth_sweep",
            detail: format!(
                "paired scoring needs equal dims, got {} vs {}",
                ds.features_v.cols(),
                ds.features_t.cols()
            ),
        });
    }
    let op = uniform_structural_operator(ds);
    let all: Vec<usize> = (0..ds.node_count()).collect();
    let mut state_v = ds.features_v.clone();
    let mut state_t = ds.features_t.clone();
    let mut entries = Vec::new();
    let mut current_depth = 0usize;
    for &target in depths {
        while current_depth < target {
            state_v = spmm(&op, &state_v)?;
            state_t = spmm(&op, &state_t)?;
            current_depth += 1;
        }
        let nv = l2_normalize_rows(&state_v, NORM_EPS);
        let nt = l2_normalize_rows(&state_t, NORM_EPS);
        let report = retrieval_metrics(&nv, &nt, &all, &all)?;
        let separation = ds
            .categories
            .as_ref()
            .map(|cats| semantic_separation(&nv, &nt, cats, 50_000));
        entries.push(DepthSweepEntry {
            depth: target,
            mean_rank: report.averaged.mean_rank,
            separation,
        });
    }
    Ok(DepthSweepReport { entries })
}

/// Sampled mean intra-category cosine minus mean inter-category cosine,
/// averaged over the two modalities. Sampling is seeded and capped.
fn semantic_separation(
    nv: &DenseMatrix,
    nt: &DenseMatrix,
    categories: &[usize],
    max_pairs: usize,
) -> f64 {
    let n = nv.rows();
    let mut rng = SeededRng::with_tag(0x5e9a_11ce, "separation");
    let total_pairs = n * (n - 1) / 2;
    let samples = total_pairs.min(max_pairs);
    let mut intra_sum = 0.0;
    let mut intra_count = 0usize;
    let mut inter_sum = 0.0;
    let mut inter_count = 0usize;
    for _ in 0..samples {
        let i = rng.next_range(n as u64) as usize;
        let mut j = rng.next_range(n as u64) as usize;
        if i == j {
            j = (j + 1) % n;
        }
        for m in [(nv, nt), (nt, nv)] {
            let (a, _) = m;
            let cos: f64 = a.row(i).iter().zip(a.row(j)).map(|(x, y)| x * y).sum();
            if categories[i] == categories[j] {
                intra_sum += cos;
                intra_count += 1;
            } else {
                inter_sum += cos;
                inter_count += 1;
            }
        }
    }
    if intra_count == 0 || inter_count == 0 {
        return 0.0;
    }
    intra_sum / intra_count as f64 - inter_sum / inter_count as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct HardQueryReport {
    /// Fraction of test nodes with self-pair similarity strictly below the
    /// low quantile and structural support strictly above the high quantile.
    pub fraction: f64,
    pub count: usize,
    pub test_nodes: usize,
    pub similarity_threshold: f64,
    pub support_threshold: f64,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Classifies test nodes by (self-pair similarity quantile, mean neighbor
/// cross-modal support quantile) and reports the low-similarity /
/// high-support fraction. A neighbor's support is its own cross-modal
/// alignment `cos(v_j, t_j)`: well-aligned neighbors carry clean evidence a
/// propagation step can deliver, independently of the query's own noise.
pub fn hard_query_support(ds: &MagDataset, low_q: f64, high_q: f64) -> Result<HardQueryReport> {
    if ds.features_v.cols() != ds.features_t.cols() {
        return Err(Error::DimMismatch {
            op: "hard_query_support",
            detail: "paired scoring needs equal feature dims".to_string(),
        });
    }
    let nv = l2_normalize_rows(&ds.features_v, NORM_EPS);
    let nt = l2_normalize_rows(&ds.features_t, NORM_EPS);
    let adj = ds.adjacency();
    let test_nodes = ds.nodes_in(Split::Test);
    if test_nodes.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let pair_sim: Vec<f64> = (0..ds.node_count())
        .map(|i| dot(nv.row(i), nt.row(i)))
        .collect();
    let mut sims = Vec::with_capacity(test_nodes.len());
    let mut supports = Vec::with_capacity(test_nodes.len());
    for &i in &test_nodes {
        sims.push(pair_sim[i]);
        let nbrs = &adj[i];
        if nbrs.is_empty() {
            supports.push(0.0);
        } else {
            let s: f64 = nbrs.iter().map(|&j| pair_sim[j]).sum();
            supports.push(s / nbrs.len() as f64);
        }
    }
    let mut sim_sorted = sims.clone();
    sim_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut sup_sorted = supports.clone();
    sup_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let sim_thr = quantile(&sim_sorted, low_q);
    let sup_thr = quantile(&sup_sorted, high_q);
    let count = sims
        .iter()
        .zip(&supports)
        .filter(|(s, p)| **s < sim_thr && **p > sup_thr)
        .count();
    Ok(HardQueryReport {
        fraction: count as f64 / test_nodes.len() as f64,
        count,
        test_nodes: test_nodes.len(),
        similarity_threshold: sim_thr,
        support_threshold: sup_thr,
    })
}
