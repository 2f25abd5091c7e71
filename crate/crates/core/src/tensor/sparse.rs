use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Row-sum tolerance for matrices flagged row-stochastic.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Row-compressed sparse matrix with sorted, duplicate-free column indices per row.
///
/// When `row_stochastic` is set, every row is non-empty with nonnegative values
/// summing to 1 within `ROW_SUM_TOL`. Matrices without the flag may carry empty
/// rows (explicit zero rows).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRowMatrix {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    row_stochastic: bool,
}

impl SparseRowMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        offsets: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
        row_stochastic: bool,
    ) -> Result<Self> {
        if offsets.len() != rows + 1 || *offsets.last().unwrap_or(&0) != indices.len() {
            return Err(Error::DimMismatch {
                op: "SparseRowMatrix::new",
                detail: format!(
                    "offsets length {} for {} rows, terminal {:?} vs {} entries",
                    offsets.len(),
                    rows,
                    offsets.last(),
                    indices.len()
                ),
            });
        }
        if indices.len() != values.len() {
            return Err(Error::DimMismatch {
                op: "SparseRowMatrix::new",
                detail: format!("{} indices vs {} values", indices.len(), values.len()),
            });
        }
        let m = Self {
            rows,
            cols,
            offsets,
            indices,
            values,
            row_stochastic,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        for r in 0..self.rows {
            let (start, end) = (self.offsets[r], self.offsets[r + 1]);
            if start > end {
                return Err(Error::InvalidParameter {
                    what: "sparse offsets",
                    detail: format!("row {} offsets decrease: {} > {}", r, start, end),
                });
            }
            let cols = &self.indices[start..end];
            for w in cols.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::InvalidParameter {
                        what: "sparse indices",
                        detail: format!("row {} has unsorted or duplicate columns", r),
                    });
                }
            }
            if let Some(&last) = cols.last() {
                if last >= self.cols {
                    return Err(Error::InvalidParameter {
                        what: "sparse indices",
                        detail: format!("row {} column {} out of range {}", r, last, self.cols),
                    });
                }
            }
            if self.row_stochastic {
                if start == end {
                    return Err(Error::InvalidParameter {
                        what: "row-stochastic matrix",
                        detail: format!("row {} is empty", r),
                    });
                }
                let vals = &self.values[start..end];
                if vals.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                    return Err(Error::InvalidParameter {
                        what: "row-stochastic matrix",
                        detail: format!("row {} has negative or non-finite weight", r),
                    });
                }
                let sum: f64 = vals.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidParameter {
                        what: "row-stochastic matrix",
                        detail: format!("row {} sums to {}", r, sum),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            offsets: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
            row_stochastic: true,
        }
    }

    /// Builds from a dense matrix, keeping every nonzero entry.
    pub fn from_dense(m: &DenseMatrix, row_stochastic: bool) -> Result<Self> {
        let mut offsets = Vec::with_capacity(m.rows() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for r in 0..m.rows() {
            for (c, &v) in m.row(r).iter().enumerate() {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            offsets.push(indices.len());
        }
        Self::new(m.rows(), m.cols(), offsets, indices, values, row_stochastic)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_row_stochastic_flagged(&self) -> bool {
        self.row_stochastic
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_entries(&self, r: usize) -> (&[usize], &[f64]) {
        let (start, end) = (self.offsets[r], self.offsets[r + 1]);
        (&self.indices[start..end], &self.values[start..end])
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let (cols, vals) = self.row_entries(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out.set(r, c, v);
            }
        }
        out
    }
}

/// Sparse-dense product `a * b`. Accumulation within a row follows the stored
/// column order, so results are bit-identical across runs.
pub fn spmm(a: &SparseRowMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.rows() {
        return Err(Error::DimMismatch {
            op: "spmm",
            detail: format!("{}x{} * {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        });
    }
    let d = b.cols();
    let mut out = DenseMatrix::zeros(a.rows(), d);
    for r in 0..a.rows() {
        let (cols, vals) = a.row_entries(r);
        let out_row = out.row_mut(r);
        for (&c, &v) in cols.iter().zip(vals) {
            let b_row = b.row(c);
            for (o, &x) in out_row.iter_mut().zip(b_row) {
                *o += v * x;
            }
        }
    }
    Ok(out)
}

/// Transposed sparse-dense product `a^T * b` without materializing `a^T`.
pub fn spmm_transpose(a: &SparseRowMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows() != b.rows() {
        return Err(Error::DimMismatch {
            op: "spmm_transpose",
            detail: format!(
                "({}x{})^T * {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            ),
        });
    }
    let d = b.cols();
    let mut out = DenseMatrix::zeros(a.cols(), d);
    for r in 0..a.rows() {
        let (cols, vals) = a.row_entries(r);
        let b_row = b.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            let out_row = out.row_mut(c);
            for (o, &x) in out_row.iter_mut().zip(b_row) {
                *o += v * x;
            }
        }
    }
    Ok(out)
}

/// Gradient of `spmm(a, b)` with respect to the stored values of `a`:
/// `d_values[k] = dot(d_out[row(k)], b[col(k)])`, aligned with `a.values()`.
pub fn spmm_value_grad(a: &SparseRowMatrix, b: &DenseMatrix, d_out: &DenseMatrix) -> Vec<f64> {
    debug_assert_eq!(a.rows(), d_out.rows());
    debug_assert_eq!(a.cols(), b.rows());
    debug_assert_eq!(b.cols(), d_out.cols());
    let mut grads = vec![0.0; a.nnz()];
    for r in 0..a.rows() {
        let (start, end) = (a.offsets[r], a.offsets[r + 1]);
        let d_row = d_out.row(r);
        for k in start..end {
            let b_row = b.row(a.indices[k]);
            let mut acc = 0.0;
            for (d, x) in d_row.iter().zip(b_row) {
                acc += d * x;
            }
            grads[k] = acc;
        }
    }
    grads
}
