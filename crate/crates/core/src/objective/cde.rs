//! Coupled Dirichlet energy over the candidate channels: operator-weighted
//! squared distances between endpoint embeddings, with intra channels at
//! weight 1 and cross channels at gamma / 2.

use crate::tensor::DenseMatrix;
use crate::topology::{CandidateGraphs, Channel, PropagationOperators};

#[derive(Debug, Clone)]
pub struct CdeGrads {
    pub d_e_v: DenseMatrix,
    pub d_e_t: DenseMatrix,
    /// Aligned with each operator's stored values; the weights depend on the
    /// edge logits through the row softmax.
    pub d_values: [Vec<f64>; 4],
}

pub fn cde_loss(
    graphs: &CandidateGraphs,
    ops: &PropagationOperators,
    e_v: &DenseMatrix,
    e_t: &DenseMatrix,
    gamma: f64,
) -> (f64, CdeGrads) {
    let mut loss = 0.0;
    let mut d_e_v = DenseMatrix::zeros(e_v.rows(), e_v.cols());
    let mut d_e_t = DenseMatrix::zeros(e_t.rows(), e_t.cols());
    let mut d_values: [Vec<f64>; 4] = [
        vec![0.0; ops.get(Channel::IntraV).nnz()],
        vec![0.0; ops.get(Channel::IntraT).nnz()],
        vec![0.0; ops.get(Channel::CrossVt).nnz()],
        vec![0.0; ops.get(Channel::CrossTv).nnz()],
    ];

    let dim = e_v.cols();
    let mut diff = vec![0.0; dim];
    for ch in Channel::ALL {
        let lambda = if ch.is_cross() { gamma / 2.0 } else { 1.0 };
        if lambda == 0.0 {
            continue;
        }
        let pattern = graphs.channel(ch);
        let values = ops.get(ch).values();
        let (tgt_visual, src_visual) = ch.endpoint_is_visual();
        for (k, (i, j)) in pattern.pairs().enumerate() {
            let w = values[k];
            let targets = if tgt_visual { e_v } else { e_t };
            let sources = if src_visual { e_v } else { e_t };
            let mut sq = 0.0;
            for ((slot, a), b) in diff.iter_mut().zip(targets.row(i)).zip(sources.row(j)) {
                let d = a - b;
                *slot = d;
                sq += d * d;
            }
            loss += lambda * w * sq;
            d_values[ch.index()][k] += lambda * sq;
            let coeff = 2.0 * lambda * w;
            let d_targets = if tgt_visual { &mut d_e_v } else { &mut d_e_t };
            for (g, &d) in d_targets.row_mut(i).iter_mut().zip(&diff) {
                *g += coeff * d;
            }
            let d_sources = if src_visual { &mut d_e_v } else { &mut d_e_t };
            for (g, &d) in d_sources.row_mut(j).iter_mut().zip(&diff) {
                *g -= coeff * d;
            }
        }
    }

    (
        loss,
        CdeGrads {
            d_e_v,
            d_e_t,
            d_values,
        },
    )
}
