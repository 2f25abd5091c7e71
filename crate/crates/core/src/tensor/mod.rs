//! Deterministic dense/sparse numeric kernels shared by every other module.

mod dense;
mod ops;
mod rng;
mod sparse;

pub use dense::{lu_solve, DenseMatrix};
pub use ops::{
    l2_normalize_rows, l2_normalize_rows_backward, l2_normalize_rows_traced,
    row_softmax_grouped, row_softmax_grouped_allow_empty, row_softmax_grouped_backward,
    softmax_rows, softmax_rows_backward, NORM_EPS,
};
pub use rng::SeededRng;
pub use sparse::{spmm, spmm_transpose, spmm_value_grad, SparseRowMatrix, ROW_SUM_TOL};
