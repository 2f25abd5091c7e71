//! Symmetric full-gallery contrastive loss on paired embeddings.

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone)]
pub struct InfoNceGrads {
    pub d_z_v: DenseMatrix,
    pub d_z_t: DenseMatrix,
}

/// Mean over the batch of the negative log softmax of each node's own
/// counterpart against the gallery, in both directions, halved.
///
/// Gradients are exact and land only on batch query rows and gallery rows.
pub fn info_nce_symmetric(
    z_v: &DenseMatrix,
    z_t: &DenseMatrix,
    batch: &[usize],
    gallery: &[usize],
    tau: f64,
) -> Result<(f64, InfoNceGrads)> {
    if batch.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    if tau <= 0.0 {
        return Err(Error::InvalidParameter {
            what: "temperature",
            detail: format!("must be positive, got {}", tau),
        });
    }
    if z_v.rows() != z_t.rows() || z_v.cols() != z_t.cols() {
        return Err(Error::DimMismatch {
            op: "info_nce_symmetric",
            detail: format!(
                "{}x{} vs {}x{}",
                z_v.rows(),
                z_v.cols(),
                z_t.rows(),
                z_t.cols()
            ),
        });
    }
    // Gallery position of each batch node; the positive must be scoreable.
    let mut gallery_pos = vec![usize::MAX; z_v.rows()];
    for (pos, &g) in gallery.iter().enumerate() {
        gallery_pos[g] = pos;
    }
    for &b in batch {
        if gallery_pos[b] == usize::MAX {
            return Err(Error::BatchNotInGallery { node: b });
        }
    }

    let mut d_z_v = DenseMatrix::zeros(z_v.rows(), z_v.cols());
    let mut d_z_t = DenseMatrix::zeros(z_t.rows(), z_t.cols());
    let scale = 1.0 / (2.0 * batch.len() as f64);
    let mut loss = 0.0;

    // One direction: queries from `from`, gallery counterparts from `to`.
    let mut direction = |from: &DenseMatrix,
                         to: &DenseMatrix,
                         d_from: &mut DenseMatrix,
                         d_to: &mut DenseMatrix| {
        let mut probs = vec![0.0; gallery.len()];
        for &i in batch {
            let q = from.row(i);
            let mut max = f64::NEG_INFINITY;
            for (slot, &g) in probs.iter_mut().zip(gallery) {
                let dot: f64 = q.iter().zip(to.row(g)).map(|(a, b)| a * b).sum();
                *slot = dot / tau;
                max = max.max(*slot);
            }
            let mut denom = 0.0;
            for slot in probs.iter_mut() {
                *slot = (*slot - max).exp();
                denom += *slot;
            }
            let pos = gallery_pos[i];
            loss += -(probs[pos] / denom).ln() * scale;
            // Gradient of -log softmax: (p_j - [j == pos]).
            for (slot, &g) in probs.iter_mut().zip(gallery) {
                let p = *slot / denom;
                let coeff = (p - if g == i { 1.0 } else { 0.0 }) * scale / tau;
                if coeff == 0.0 {
                    continue;
                }
                let to_row = to.row(g);
                for (dq, &t) in d_from.row_mut(i).iter_mut().zip(to_row) {
                    *dq += coeff * t;
                }
                let q_row = from.row(i);
                for (dt, &qv) in d_to.row_mut(g).iter_mut().zip(q_row) {
                    *dt += coeff * qv;
                }
            }
        }
    };

    direction(z_v, z_t, &mut d_z_v, &mut d_z_t);
    direction(z_t, z_v, &mut d_z_t, &mut d_z_v);

    Ok((loss, InfoNceGrads { d_z_v, d_z_t }))
}
