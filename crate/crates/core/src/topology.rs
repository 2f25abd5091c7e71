//! Candidate edge construction per propagation channel, edge scoring, and
//! row-softmax normalization into four learned row-stochastic propagation
//! operators.

use crate::data::MagDataset;
use crate::error::{Error, Result};
use crate::tensor::{
    l2_normalize_rows, row_softmax_grouped, row_softmax_grouped_allow_empty,
    row_softmax_grouped_backward, DenseMatrix, SparseRowMatrix, NORM_EPS,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

/// Propagation channels. Cross channels are named target-source: `CrossVt`
/// delivers textual source states to visual target states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    IntraV = 0,
    IntraT = 1,
    CrossVt = 2,
    CrossTv = 3,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::IntraV,
        Channel::IntraT,
        Channel::CrossVt,
        Channel::CrossTv,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::IntraV => "intra_v",
            Channel::IntraT => "intra_t",
            Channel::CrossVt => "cross_vt",
            Channel::CrossTv => "cross_tv",
        }
    }

    pub fn is_cross(self) -> bool {
        matches!(self, Channel::CrossVt | Channel::CrossTv)
    }

    /// (target modality, source modality); `true` selects visual.
    pub fn endpoint_is_visual(self) -> (bool, bool) {
        match self {
            Channel::IntraV => (true, true),
            Channel::IntraT => (false, false),
            Channel::CrossVt => (true, false),
            Channel::CrossTv => (false, true),
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMode {
    /// Structural edges plus per-channel kNN completion plus intra self-loops.
    Hybrid,
    /// Observed structural edges as candidate routes for every channel.
    StructureOnly,
}

impl fmt::Display for CandidateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CandidateMode::Hybrid => "hybrid",
            CandidateMode::StructureOnly => "structure_only",
        })
    }
}

/// One channel's directed candidate edges in compressed-row form:
/// `sources(i)` lists the deduplicated, ascending source ids for target `i`.
/// The offsets double as softmax group offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPattern {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
}

impl ChannelPattern {
    pub fn from_pairs(n: usize, pairs: &BTreeSet<(usize, usize)>) -> Self {
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(pairs.len());
        offsets.push(0);
        let mut row = 0usize;
        for &(i, j) in pairs {
            debug_assert!(i < n && j < n);
            while row < i {
                offsets.push(cols.len());
                row += 1;
            }
            cols.push(j);
        }
        while row < n {
            offsets.push(cols.len());
            row += 1;
        }
        Self { n, offsets, cols }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.cols.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn sources(&self, target: usize) -> &[usize] {
        &self.cols[self.offsets[target]..self.offsets[target + 1]]
    }

    pub fn contains(&self, target: usize, source: usize) -> bool {
        self.sources(target).binary_search(&source).is_ok()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.sources(i).iter().map(move |&j| (i, j)))
    }
}

/// The four deduplicated directed candidate edge sets.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGraphs {
    pub n: usize,
    pub mode: CandidateMode,
    pub k_intra: usize,
    pub k_cross: usize,
    channels: [ChannelPattern; 4],
}

impl CandidateGraphs {
    pub fn channel(&self, c: Channel) -> &ChannelPattern {
        &self.channels[c.index()]
    }

    pub fn total_edges(&self) -> usize {
        self.channels.iter().map(|c| c.edge_count()).sum()
    }

    /// Control variant: injects the diagonal answer edge (i, i) into both
    /// cross-modal channels.
    pub fn with_self_pairs_added(&self) -> CandidateGraphs {
        let mut out = self.clone();
        for c in [Channel::CrossVt, Channel::CrossTv] {
            let mut pairs: BTreeSet<(usize, usize)> =
                self.channel(c).pairs().collect();
            for i in 0..self.n {
                pairs.insert((i, i));
            }
            out.channels[c.index()] = ChannelPattern::from_pairs(self.n, &pairs);
        }
        out
    }

    /// Control variant: cross-modal channels carry only the diagonal answer
    /// edges.
    pub fn with_self_pairs_only(&self) -> CandidateGraphs {
        let mut out = self.clone();
        let diag: BTreeSet<(usize, usize)> = (0..self.n).map(|i| (i, i)).collect();
        for c in [Channel::CrossVt, Channel::CrossTv] {
            out.channels[c.index()] = ChannelPattern::from_pairs(self.n, &diag);
        }
        out
    }

    pub fn has_cross_self_pair(&self) -> bool {
        [Channel::CrossVt, Channel::CrossTv]
            .iter()
            .any(|&c| (0..self.n).any(|i| self.channel(c).contains(i, i)))
    }
}

/// Top-k source rows by cosine similarity for every target row. Inputs are
/// L2-normalized first; ties break toward the smaller source index.
pub(crate) fn knn_rows(
    targets: &DenseMatrix,
    sources: &DenseMatrix,
    k: usize,
    exclude_diagonal: bool,
) -> Vec<Vec<usize>> {
    let tn = l2_normalize_rows(targets, NORM_EPS);
    let sn = l2_normalize_rows(sources, NORM_EPS);
    let n = tn.rows();
    let m = sn.rows();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let trow = tn.row(i);
        let mut scored: Vec<(f64, usize)> = (0..m)
            .filter(|&j| !(exclude_diagonal && j == i))
            .map(|j| {
                let dot: f64 = trow.iter().zip(sn.row(j)).map(|(a, b)| a * b).sum();
                (dot, j)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        out.push(scored.into_iter().take(k).map(|(_, j)| j).collect());
    }
    out
}

/// Builds the per-channel candidate edge sets.
///
/// Hybrid mode unions directed structural edges, within- or cross-modality
/// kNN completion on the supplied features, and intra-modal self-loops.
/// Cross-modal channels never contain a diagonal (i, i) pair; the reverse
/// cross channel mirrors the forward pairs with roles swapped. Structure-only
/// mode uses structural edges everywhere (plus intra self-loops).
pub fn build_candidates(
    ds: &MagDataset,
    feats_v: &DenseMatrix,
    feats_t: &DenseMatrix,
    k_intra: usize,
    k_cross: usize,
    mode: CandidateMode,
) -> Result<CandidateGraphs> {
    let n = ds.node_count();
    if feats_v.rows() != n || feats_t.rows() != n {
        return Err(Error::DimMismatch {
            op: "build_candidates",
            detail: format!(
                "feature rows {}/{} vs {} nodes",
                feats_v.rows(),
                feats_t.rows(),
                n
            ),
        });
    }
    let clamp = |k: usize, what: &str| -> usize {
        let max = n.saturating_sub(1);
        if k > max {
            log::warn!("{} = {} clamped to {} (N - 1)", what, k, max);
            max
        } else {
            k
        }
    };
    let k_intra = clamp(k_intra, "k_intra");
    let k_cross = clamp(k_cross, "k_cross");

    let mut structural: BTreeSet<(usize, usize)> = BTreeSet::new();
    for &(a, b) in &ds.edges {
        structural.insert((a, b));
        structural.insert((b, a));
    }

    let mut intra_v = structural.clone();
    let mut intra_t = structural.clone();
    let mut cross_vt = structural.clone();

    if mode == CandidateMode::Hybrid {
        if k_intra > 0 {
            for (i, nbrs) in knn_rows(feats_v, feats_v, k_intra, true).into_iter().enumerate() {
                for j in nbrs {
                    intra_v.insert((i, j));
                }
            }
            for (i, nbrs) in knn_rows(feats_t, feats_t, k_intra, true).into_iter().enumerate() {
                for j in nbrs {
                    intra_t.insert((i, j));
                }
            }
        }
        if k_cross > 0 {
            if feats_v.cols() != feats_t.cols() {
                return Err(Error::DimMismatch {
                    op: "build_candidates",
                    detail: format!(
                        "cross-modal kNN needs matching feature dims, got {} vs {}; \
                         use adapted features or k_cross = 0",
                        feats_v.cols(),
                        feats_t.cols()
                    ),
                });
            }
            for (i, nbrs) in knn_rows(feats_v, feats_t, k_cross, true).into_iter().enumerate() {
                for j in nbrs {
                    cross_vt.insert((i, j));
                }
            }
        }
    }

    for i in 0..n {
        intra_v.insert((i, i));
        intra_t.insert((i, i));
    }
    // Self-pair exclusion: the cross channels must never offer a node its own
    // paired-modality state.
    cross_vt.retain(|&(i, j)| i != j);
    let cross_tv: BTreeSet<(usize, usize)> = cross_vt.iter().map(|&(i, j)| (j, i)).collect();

    Ok(CandidateGraphs {
        n,
        mode,
        k_intra,
        k_cross,
        channels: [
            ChannelPattern::from_pairs(n, &intra_v),
            ChannelPattern::from_pairs(n, &intra_t),
            ChannelPattern::from_pairs(n, &cross_vt),
            ChannelPattern::from_pairs(n, &cross_tv),
        ],
    })
}

/// Edge scorer for one channel: `logit = proj . tanh(weight (e_i * e_j) + bias)`
/// over the element-wise product of the target and source embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeScorerParams {
    /// h x d
    pub weight: DenseMatrix,
    /// h
    pub bias: Vec<f64>,
    /// h
    pub proj: Vec<f64>,
}

impl EdgeScorerParams {
    pub fn zeros(hidden: usize, dim: usize) -> Self {
        Self {
            weight: DenseMatrix::zeros(hidden, dim),
            bias: vec![0.0; hidden],
            proj: vec![0.0; hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Per-channel logit arrays aligned with each channel's candidate entries.
#[derive(Debug, Clone)]
pub struct ChannelLogits {
    pub per_channel: [Vec<f64>; 4],
}

/// Tanh activations saved by the forward scorer, one h-vector per candidate
/// edge, flattened per channel.
#[derive(Debug, Clone)]
pub struct ScorerTrace {
    pub hidden: [Vec<f64>; 4],
}

/// Scores one (target, source) embedding pair, writing the tanh hidden layer
/// into `hidden`.
pub fn score_pair(
    params: &EdgeScorerParams,
    e_target: &[f64],
    e_source: &[f64],
    hidden: &mut [f64],
) -> f64 {
    let h = params.hidden();
    debug_assert_eq!(hidden.len(), h);
    let d = params.dim();
    debug_assert_eq!(e_target.len(), d);
    debug_assert_eq!(e_source.len(), d);
    let mut logit = 0.0;
    for r in 0..h {
        let w_row = params.weight.row(r);
        let mut acc = params.bias[r];
        for c in 0..d {
            acc += w_row[c] * e_target[c] * e_source[c];
        }
        let s = acc.tanh();
        hidden[r] = s;
        logit += params.proj[r] * s;
    }
    logit
}

/// Accumulates gradients for one scored pair given `d_logit`.
#[allow(clippy::too_many_arguments)]
pub fn score_pair_backward(
    params: &EdgeScorerParams,
    e_target: &[f64],
    e_source: &[f64],
    hidden: &[f64],
    d_logit: f64,
    grads: &mut EdgeScorerParams,
    d_e_target: &mut [f64],
    d_e_source: &mut [f64],
) {
    let h = params.hidden();
    let d = params.dim();
    for r in 0..h {
        let s = hidden[r];
        grads.proj[r] += d_logit * s;
        // d pre-activation = d_logit * proj * (1 - tanh^2)
        let d_pre = d_logit * params.proj[r] * (1.0 - s * s);
        if d_pre == 0.0 {
            continue;
        }
        grads.bias[r] += d_pre;
        let w_row = params.weight.row(r).to_vec();
        let g_row = grads.weight.row_mut(r);
        for c in 0..d {
            let x = e_target[c] * e_source[c];
            g_row[c] += d_pre * x;
            let dw = d_pre * w_row[c];
            d_e_target[c] += dw * e_source[c];
            d_e_source[c] += dw * e_target[c];
        }
    }
}

/// Scores every candidate edge in every channel.
pub fn score_edges(
    graphs: &CandidateGraphs,
    e_v: &DenseMatrix,
    e_t: &DenseMatrix,
    scorers: &[EdgeScorerParams; 4],
) -> Result<(ChannelLogits, ScorerTrace)> {
    let n = graphs.n;
    if e_v.rows() != n || e_t.rows() != n || e_v.cols() != e_t.cols() {
        return Err(Error::DimMismatch {
            op: "score_edges",
            detail: format!(
                "embeddings {}x{} and {}x{} for {} nodes",
                e_v.rows(),
                e_v.cols(),
                e_t.rows(),
                e_t.cols(),
                n
            ),
        });
    }
    let mut logits: [Vec<f64>; 4] = Default::default();
    let mut hidden: [Vec<f64>; 4] = Default::default();
    for ch in Channel::ALL {
        let params = &scorers[ch.index()];
        if params.dim() != e_v.cols() {
            return Err(Error::DimMismatch {
                op: "score_edges",
                detail: format!(
                    "channel {} scorer expects dim {}, embeddings have {}",
                    ch,
                    params.dim(),
                    e_v.cols()
                ),
            });
        }
        let pattern = graphs.channel(ch);
        let (tgt_visual, src_visual) = ch.endpoint_is_visual();
        let targets = if tgt_visual { e_v } else { e_t };
        let sources = if src_visual { e_v } else { e_t };
        let h = params.hidden();
        let mut ch_logits = Vec::with_capacity(pattern.edge_count());
        let mut ch_hidden = vec![0.0; pattern.edge_count() * h];
        for (k, (i, j)) in pattern.pairs().enumerate() {
            let logit = score_pair(
                params,
                targets.row(i),
                sources.row(j),
                &mut ch_hidden[k * h..(k + 1) * h],
            );
            ch_logits.push(logit);
        }
        logits[ch.index()] = ch_logits;
        hidden[ch.index()] = ch_hidden;
    }
    Ok((
        ChannelLogits {
            per_channel: logits,
        },
        ScorerTrace { hidden },
    ))
}

/// The four learned propagation operators. Intra-modal operators are flagged
/// row-stochastic (self-loops guarantee nonempty rows); cross-modal operators
/// may carry explicit zero rows for nodes with no candidates.
#[derive(Debug, Clone)]
pub struct PropagationOperators {
    ops: [SparseRowMatrix; 4],
}

impl PropagationOperators {
    pub fn get(&self, c: Channel) -> &SparseRowMatrix {
        &self.ops[c.index()]
    }

    pub fn p_v(&self) -> &SparseRowMatrix {
        self.get(Channel::IntraV)
    }

    pub fn p_t(&self) -> &SparseRowMatrix {
        self.get(Channel::IntraT)
    }

    pub fn p_vt(&self) -> &SparseRowMatrix {
        self.get(Channel::CrossVt)
    }

    pub fn p_tv(&self) -> &SparseRowMatrix {
        self.get(Channel::CrossTv)
    }

    pub fn n(&self) -> usize {
        self.p_v().rows()
    }

    pub fn from_parts(
        p_v: SparseRowMatrix,
        p_t: SparseRowMatrix,
        p_vt: SparseRowMatrix,
        p_tv: SparseRowMatrix,
    ) -> Self {
        Self {
            ops: [p_v, p_t, p_vt, p_tv],
        }
    }
}

/// Row softmax per channel over the candidate groups. Cross-modal rows with
/// no candidates become explicit zero rows.
pub fn normalize_operators(
    graphs: &CandidateGraphs,
    logits: &ChannelLogits,
) -> Result<PropagationOperators> {
    let mut ops = Vec::with_capacity(4);
    for ch in Channel::ALL {
        let pattern = graphs.channel(ch);
        let ch_logits = &logits.per_channel[ch.index()];
        if ch_logits.len() != pattern.edge_count() {
            return Err(Error::DimMismatch {
                op: "normalize_operators",
                detail: format!(
                    "channel {}: {} logits for {} candidates",
                    ch,
                    ch_logits.len(),
                    pattern.edge_count()
                ),
            });
        }
        let values = if ch.is_cross() {
            row_softmax_grouped_allow_empty(ch_logits, pattern.offsets())
        } else {
            row_softmax_grouped(ch_logits, pattern.offsets())?
        };
        ops.push(SparseRowMatrix::new(
            graphs.n,
            graphs.n,
            pattern.offsets().to_vec(),
            pattern.cols().to_vec(),
            values,
            !ch.is_cross(),
        )?);
    }
    let mut it = ops.into_iter();
    Ok(PropagationOperators::from_parts(
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
    ))
}

/// Pulls gradients on operator values back to candidate logits through the
/// per-row softmax.
pub fn operators_backward(
    graphs: &CandidateGraphs,
    operators: &PropagationOperators,
    d_values: &[Vec<f64>; 4],
) -> ChannelLogits {
    let mut out: [Vec<f64>; 4] = Default::default();
    for ch in Channel::ALL {
        let pattern = graphs.channel(ch);
        out[ch.index()] = row_softmax_grouped_backward(
            operators.get(ch).values(),
            pattern.offsets(),
            &d_values[ch.index()],
        );
    }
    ChannelLogits { per_channel: out }
}

/// Writes candidate graphs to an edge-list text file with one section per
/// channel and a header recording mode, k values, and the originating seed.
pub fn save_candidates(graphs: &CandidateGraphs, seed: u64, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("# magalign candidate graphs v1\n");
    out.push_str(&format!(
        "# mode={} k_intra={} k_cross={} seed={} n={}\n",
        graphs.mode, graphs.k_intra, graphs.k_cross, seed, graphs.n
    ));
    for ch in Channel::ALL {
        out.push_str(&format!("[channel {}]\n", ch.name()));
        for (i, j) in graphs.channel(ch).pairs() {
            out.push_str(&format!("{} {}\n", i, j));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_candidates(path: &Path) -> Result<CandidateGraphs> {
    let text = std::fs::read_to_string(path)?;
    let malformed = |detail: String| Error::MalformedFile {
        path: path.display().to_string(),
        detail,
    };
    let mut mode = None;
    let mut k_intra = 0usize;
    let mut k_cross = 0usize;
    let mut n = None;
    let mut sets: [BTreeSet<(usize, usize)>; 4] = Default::default();
    let mut current: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            for field in rest.split_whitespace() {
                if let Some((key, value)) = field.split_once('=') {
                    match key {
                        "mode" => {
                            mode = Some(match value {
                                "hybrid" => CandidateMode::Hybrid,
                                "structure_only" => CandidateMode::StructureOnly,
                                other => {
                                    return Err(malformed(format!("unknown mode '{}'", other)))
                                }
                            })
                        }
                        "k_intra" => k_intra = value.parse().map_err(|_| {
                            malformed(format!("bad k_intra '{}'", value))
                        })?,
                        "k_cross" => k_cross = value.parse().map_err(|_| {
                            malformed(format!("bad k_cross '{}'", value))
                        })?,
                        "n" => n = Some(value.parse().map_err(|_| {
                            malformed(format!("bad n '{}'", value))
                        })?),
                        _ => {}
                    }
                }
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("[channel ") {
            let name = rest.trim_end_matches(']');
            current = Channel::ALL
                .iter()
                .position(|c| c.name() == name)
                .map(Some)
                .ok_or_else(|| malformed(format!("unknown channel '{}'", name)))?;
            continue;
        }
        let idx = current.ok_or_else(|| {
            malformed(format!("line {}: edge before any channel section", lineno + 1))
        })?;
        let mut fields = line.split_whitespace();
        let i: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| malformed(format!("line {}: bad edge", lineno + 1)))?;
        let j: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| malformed(format!("line {}: bad edge", lineno + 1)))?;
        sets[idx].insert((i, j));
    }
    let n = n.ok_or_else(|| malformed("missing n in header".to_string()))?;
    let mode = mode.ok_or_else(|| malformed("missing mode in header".to_string()))?;
    Ok(CandidateGraphs {
        n,
        mode,
        k_intra,
        k_cross,
        channels: [
            ChannelPattern::from_pairs(n, &sets[0]),
            ChannelPattern::from_pairs(n, &sets[1]),
            ChannelPattern::from_pairs(n, &sets[2]),
            ChannelPattern::from_pairs(n, &sets[3]),
        ],
    })
}
