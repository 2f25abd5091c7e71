use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Default threshold below which a row is treated as degenerate and passed
/// through normalization unchanged.
pub const NORM_EPS: f64 = 1e-12;

/// Scales every row to unit Euclidean norm. Rows with norm below `eps` are
/// returned unchanged rather than erroring, so degenerate inputs cannot abort
/// a run.
pub fn l2_normalize_rows(m: &DenseMatrix, eps: f64) -> DenseMatrix {
    l2_normalize_rows_traced(m, eps).0
}

/// Normalization plus per-row norms; rows recorded with norm 0.0 were passed
/// through. The norms are what the backward pass needs.
pub fn l2_normalize_rows_traced(m: &DenseMatrix, eps: f64) -> (DenseMatrix, Vec<f64>) {
    assert!(eps > 0.0, "normalization eps must be positive");
    let mut out = m.clone();
    let mut norms = vec![0.0; m.rows()];
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm >= eps {
            for v in row.iter_mut() {
                *v /= norm;
            }
            norms[r] = norm;
        }
    }
    (out, norms)
}

/// Pulls a loss gradient back through `l2_normalize_rows_traced`.
///
/// For a normalized row `y = x / n`, `dx = (dy - (dy . y) y) / n`; passthrough
/// rows (recorded norm 0.0) propagate the gradient unchanged.
pub fn l2_normalize_rows_backward(
    normalized: &DenseMatrix,
    norms: &[f64],
    d_out: &DenseMatrix,
) -> DenseMatrix {
    debug_assert_eq!(normalized.rows(), d_out.rows());
    debug_assert_eq!(normalized.cols(), d_out.cols());
    let mut d_in = d_out.clone();
    for r in 0..normalized.rows() {
        let n = norms[r];
        if n == 0.0 {
            continue;
        }
        let y = normalized.row(r);
        let d_row = d_in.row_mut(r);
        let dot: f64 = d_row.iter().zip(y).map(|(d, v)| d * v).sum();
        for (d, v) in d_row.iter_mut().zip(y) {
            *d = (*d - dot * v) / n;
        }
    }
    d_in
}

/// Softmax within each contiguous group of `logits`; `offsets` has one more
/// entry than there are groups. Stabilized by per-group max subtraction.
pub fn row_softmax_grouped(logits: &[f64], offsets: &[usize]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; logits.len()];
    for g in 0..offsets.len().saturating_sub(1) {
        let (start, end) = (offsets[g], offsets[g + 1]);
        if start == end {
            return Err(Error::EmptySoftmaxGroup { group: g });
        }
        softmax_into(&logits[start..end], &mut out[start..end]);
    }
    Ok(out)
}

/// Like `row_softmax_grouped` but empty groups yield no output entries
/// instead of an error; used for channels that legitimately carry zero rows.
pub fn row_softmax_grouped_allow_empty(logits: &[f64], offsets: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for g in 0..offsets.len().saturating_sub(1) {
        let (start, end) = (offsets[g], offsets[g + 1]);
        if start < end {
            softmax_into(&logits[start..end], &mut out[start..end]);
        }
    }
    out
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        let e = (l - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Backward of a grouped softmax: `d_logit = p * (d_p - sum(p * d_p))`
/// within each group.
pub fn row_softmax_grouped_backward(
    probs: &[f64],
    offsets: &[usize],
    d_probs: &[f64],
) -> Vec<f64> {
    debug_assert_eq!(probs.len(), d_probs.len());
    let mut d_logits = vec![0.0; probs.len()];
    for g in 0..offsets.len().saturating_sub(1) {
        let (start, end) = (offsets[g], offsets[g + 1]);
        let p = &probs[start..end];
        let dp = &d_probs[start..end];
        let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for ((dl, &pi), &dpi) in d_logits[start..end].iter_mut().zip(p).zip(dp) {
            *dl = pi * (dpi - inner);
        }
    }
    d_logits
}

/// Softmax over the columns of each row of a dense matrix.
pub fn softmax_rows(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Backward of `softmax_rows`.
pub fn softmax_rows_backward(probs: &DenseMatrix, d_probs: &DenseMatrix) -> DenseMatrix {
    let mut d_in = DenseMatrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let dp = d_probs.row(r);
        let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for ((d, &pi), &dpi) in d_in.row_mut(r).iter_mut().zip(p).zip(dp) {
            *d = pi * (dpi - inner);
        }
    }
    d_in
}
