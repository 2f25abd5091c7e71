//! Finite-step coupled smoothing with restart anchoring, the joint block
//! dynamics, and the numerical machinery behind the convergence, collapse,
//! and gap-contraction checks.

use crate::error::{Error, Result};
use crate::tensor::{
    l2_normalize_rows_backward, l2_normalize_rows_traced, lu_solve, spmm, spmm_transpose,
    spmm_value_grad, DenseMatrix, SparseRowMatrix, NORM_EPS,
};
use crate::topology::PropagationOperators;
use serde::{Deserialize, Serialize};

/// Largest joint dimension (2N) accepted by the dense resolvent solver.
pub const DENSE_SOLVE_GUARD: usize = 1024;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoothingConfig {
    /// Number of propagation steps K; the trajectory retains K + 1 states.
    pub depth: usize,
    /// Cross-modal coupling strength in [0, 1].
    pub coupling: f64,
    /// Restart coefficient in [0, 1]; each step re-injects the fixed anchor.
    pub restart: f64,
    /// Row-normalize after every step. The convergence/contraction checks
    /// run with this off, training keeps it on.
    pub normalize_each_step: bool,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            coupling: 0.3,
            restart: 0.3,
            normalize_each_step: true,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(Error::InvalidParameter {
                what: "coupling",
                detail: format!("must be in [0, 1], got {}", self.coupling),
            });
        }
        if !(0.0..=1.0).contains(&self.restart) {
            return Err(Error::InvalidParameter {
                what: "restart",
                detail: format!("must be in [0, 1], got {}", self.restart),
            });
        }
        Ok(())
    }
}

/// Per-modality sequence of node-state matrices H^(0..K).
#[derive(Debug, Clone)]
pub struct SmoothingTrajectory {
    pub states_v: Vec<DenseMatrix>,
    pub states_t: Vec<DenseMatrix>,
}

impl SmoothingTrajectory {
    pub fn depth(&self) -> usize {
        self.states_v.len() - 1
    }
}

/// Forward intermediates needed by the backward pass: per-step row norms of
/// the pre-normalization states (0.0 marks a passthrough row).
#[derive(Debug, Clone)]
pub struct SmoothingTrace {
    norms_v: Vec<Vec<f64>>,
    norms_t: Vec<Vec<f64>>,
}

/// Runs the coupled smoothing recurrence
/// `H_v <- (1-b) P_v H_v + b P_vt H_t` (and symmetrically for t), followed by
/// the restart mix `(1-a) H + a E` and optional row normalization.
pub fn coupled_smooth(
    ops: &PropagationOperators,
    e_v: &DenseMatrix,
    e_t: &DenseMatrix,
    cfg: &SmoothingConfig,
) -> Result<SmoothingTrajectory> {
    coupled_smooth_traced(ops, e_v, e_t, cfg).map(|(traj, _)| traj)
}

pub fn coupled_smooth_traced(
    ops: &PropagationOperators,
    e_v: &DenseMatrix,
    e_t: &DenseMatrix,
    cfg: &SmoothingConfig,
) -> Result<(SmoothingTrajectory, SmoothingTrace)> {
    cfg.validate()?;
    let n = ops.n();
    if e_v.rows() != n || e_t.rows() != n || e_v.cols() != e_t.cols() {
        return Err(Error::DimMismatch {
            op: "coupled_smooth",
            detail: format!(
                "embeddings {}x{} / {}x{} for operators on {} nodes",
                e_v.rows(),
                e_v.cols(),
                e_t.rows(),
                e_t.cols(),
                n
            ),
        });
    }
    let beta = cfg.coupling;
    let alpha = cfg.restart;
    let mut states_v = vec![e_v.clone()];
    let mut states_t = vec![e_t.clone()];
    let mut norms_v = Vec::with_capacity(cfg.depth);
    let mut norms_t = Vec::with_capacity(cfg.depth);

    for _ in 0..cfg.depth {
        let prev_v = states_v.last().unwrap();
        let prev_t = states_t.last().unwrap();

        let mut next_v = spmm(ops.p_v(), prev_v)?;
        next_v.scale(1.0 - beta);
        next_v.add_scaled(&spmm(ops.p_vt(), prev_t)?, beta);
        next_v.scale(1.0 - alpha);
        next_v.add_scaled(e_v, alpha);

        let mut next_t = spmm(ops.p_t(), prev_t)?;
        next_t.scale(1.0 - beta);
        next_t.add_scaled(&spmm(ops.p_tv(), prev_v)?, beta);
        next_t.scale(1.0 - alpha);
        next_t.add_scaled(e_t, alpha);

        if cfg.normalize_each_step {
            let (nv, norm_v) = l2_normalize_rows_traced(&next_v, NORM_EPS);
            let (nt, norm_t) = l2_normalize_rows_traced(&next_t, NORM_EPS);
            states_v.push(nv);
            states_t.push(nt);
            norms_v.push(norm_v);
            norms_t.push(norm_t);
        } else {
            states_v.push(next_v);
            states_t.push(next_t);
        }
    }
    Ok((
        SmoothingTrajectory { states_v, states_t },
        SmoothingTrace { norms_v, norms_t },
    ))
}

/// Gradients produced by the smoothing backward pass.
#[derive(Debug, Clone)]
pub struct SmoothingGrads {
    pub d_e_v: DenseMatrix,
    pub d_e_t: DenseMatrix,
    /// Aligned with the stored values of P_v, P_t, P_vt, P_tv.
    pub d_values: [Vec<f64>; 4],
}

/// Reverse pass through `coupled_smooth_traced`.
///
/// `d_states_*[k]` is the loss gradient with respect to the retained state
/// H^(k); all K + 1 entries must be present (zero matrices where unused).
pub fn coupled_smooth_backward(
    ops: &PropagationOperators,
    traj: &SmoothingTrajectory,
    trace: &SmoothingTrace,
    e_v: &DenseMatrix,
    e_t: &DenseMatrix,
    cfg: &SmoothingConfig,
    d_states_v: &[DenseMatrix],
    d_states_t: &[DenseMatrix],
) -> Result<SmoothingGrads> {
    let depth = traj.depth();
    assert_eq!(d_states_v.len(), depth + 1);
    assert_eq!(d_states_t.len(), depth + 1);
    let beta = cfg.coupling;
    let alpha = cfg.restart;

    let mut d_e_v = DenseMatrix::zeros(e_v.rows(), e_v.cols());
    let mut d_e_t = DenseMatrix::zeros(e_t.rows(), e_t.cols());
    let mut d_values = [
        vec![0.0; ops.p_v().nnz()],
        vec![0.0; ops.p_t().nnz()],
        vec![0.0; ops.p_vt().nnz()],
        vec![0.0; ops.p_tv().nnz()],
    ];

    let mut run_v = d_states_v[depth].clone();
    let mut run_t = d_states_t[depth].clone();

    for k in (1..=depth).rev() {
        // Undo the optional normalization of step k.
        let (mut d_mix_v, mut d_mix_t) = if cfg.normalize_each_step {
            (
                l2_normalize_rows_backward(&traj.states_v[k], &trace.norms_v[k - 1], &run_v),
                l2_normalize_rows_backward(&traj.states_t[k], &trace.norms_t[k - 1], &run_t),
            )
        } else {
            (run_v.clone(), run_t.clone())
        };

        // Restart mix: d_anchor += alpha * d, d_propagated = (1 - alpha) * d.
        d_e_v.add_scaled(&d_mix_v, alpha);
        d_e_t.add_scaled(&d_mix_t, alpha);
        d_mix_v.scale(1.0 - alpha);
        d_mix_t.scale(1.0 - alpha);

        let prev_v = &traj.states_v[k - 1];
        let prev_t = &traj.states_t[k - 1];

        // Coupling split. d_mix_v feeds (1-b) P_v H_v + b P_vt H_t.
        let mut d_intra_v = d_mix_v.clone();
        d_intra_v.scale(1.0 - beta);
        let mut d_cross_v = d_mix_v;
        d_cross_v.scale(beta);
        let mut d_intra_t = d_mix_t.clone();
        d_intra_t.scale(1.0 - beta);
        let mut d_cross_t = d_mix_t;
        d_cross_t.scale(beta);

        for (vals, grad) in d_values[0]
            .iter_mut()
            .zip(spmm_value_grad(ops.p_v(), prev_v, &d_intra_v))
        {
            *vals += grad;
        }
        for (vals, grad) in d_values[1]
            .iter_mut()
            .zip(spmm_value_grad(ops.p_t(), prev_t, &d_intra_t))
        {
            *vals += grad;
        }
        for (vals, grad) in d_values[2]
            .iter_mut()
            .zip(spmm_value_grad(ops.p_vt(), prev_t, &d_cross_v))
        {
            *vals += grad;
        }
        for (vals, grad) in d_values[3]
            .iter_mut()
            .zip(spmm_value_grad(ops.p_tv(), prev_v, &d_cross_t))
        {
            *vals += grad;
        }

        let mut next_run_v = spmm_transpose(ops.p_v(), &d_intra_v)?;
        next_run_v.add_scaled(&spmm_transpose(ops.p_tv(), &d_cross_t)?, 1.0);
        next_run_v.add_scaled(&d_states_v[k - 1], 1.0);
        let mut next_run_t = spmm_transpose(ops.p_t(), &d_intra_t)?;
        next_run_t.add_scaled(&spmm_transpose(ops.p_vt(), &d_cross_v)?, 1.0);
        next_run_t.add_scaled(&d_states_t[k - 1], 1.0);
        run_v = next_run_v;
        run_t = next_run_t;
    }

    // H^(0) is the anchor itself.
    d_e_v.add_scaled(&run_v, 1.0);
    d_e_t.add_scaled(&run_t, 1.0);

    Ok(SmoothingGrads {
        d_e_v,
        d_e_t,
        d_values,
    })
}

/// The 2N x 2N block operator
/// `[[ (1-b) P_v, b P_vt ], [ b P_tv, (1-b) P_t ]]`.
pub fn joint_operator(ops: &PropagationOperators, beta: f64) -> SparseRowMatrix {
    let n = ops.n();
    let mut offsets = Vec::with_capacity(2 * n + 1);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    offsets.push(0);
    for i in 0..n {
        let (cols, vals) = ops.p_v().row_entries(i);
        for (&c, &v) in cols.iter().zip(vals) {
            indices.push(c);
            values.push((1.0 - beta) * v);
        }
        let (cols, vals) = ops.p_vt().row_entries(i);
        for (&c, &v) in cols.iter().zip(vals) {
            indices.push(c + n);
            values.push(beta * v);
        }
        offsets.push(indices.len());
    }
    for i in 0..n {
        let (cols, vals) = ops.p_tv().row_entries(i);
        for (&c, &v) in cols.iter().zip(vals) {
            indices.push(c);
            values.push(beta * v);
        }
        let (cols, vals) = ops.p_t().row_entries(i);
        for (&c, &v) in cols.iter().zip(vals) {
            indices.push(c + n);
            values.push((1.0 - beta) * v);
        }
        offsets.push(indices.len());
    }
    SparseRowMatrix::new(2 * n, 2 * n, offsets, indices, values, false)
        .expect("blocks are valid sparse rows")
}

/// Stationary state `alpha (I - (1-alpha) M)^{-1} E` by dense LU.
pub fn resolvent_fixed_point(
    ops: &PropagationOperators,
    beta: f64,
    alpha: f64,
    e_joint: &DenseMatrix,
) -> Result<DenseMatrix> {
    if !(0.0 < alpha && alpha <= 1.0) {
        return Err(Error::InvalidParameter {
            what: "restart",
            detail: format!("resolvent needs alpha in (0, 1], got {}", alpha),
        });
    }
    let m = joint_operator(ops, beta);
    resolvent_of_operator(&m, alpha, e_joint)
}

/// Same resolvent for an arbitrary row-stochastic operator.
pub fn resolvent_of_operator(
    m: &SparseRowMatrix,
    alpha: f64,
    e: &DenseMatrix,
) -> Result<DenseMatrix> {
    let dim = m.rows();
    if dim > DENSE_SOLVE_GUARD {
        return Err(Error::SizeGuard {
            what: "joint operator",
            size: dim,
            max: DENSE_SOLVE_GUARD,
        });
    }
    if e.rows() != dim {
        return Err(Error::DimMismatch {
            op: "resolvent_fixed_point",
            detail: format!("E has {} rows for operator of size {}", e.rows(), dim),
        });
    }
    let mut a = m.to_dense();
    a.scale(-(1.0 - alpha));
    for i in 0..dim {
        a.set(i, i, a.get(i, i) + 1.0);
    }
    let mut rhs = e.clone();
    rhs.scale(alpha);
    lu_solve(&a, &rhs)
}

/// Frobenius norm of the cross-modal discrepancy H_v^(k) - H_t^(k).
pub fn gap_norm(traj: &SmoothingTrajectory, k: usize) -> Result<f64> {
    if k > traj.depth() {
        return Err(Error::StepOutOfRange {
            step: k,
            depth: traj.depth(),
        });
    }
    Ok(traj.states_v[k].sub(&traj.states_t[k]).frobenius_norm())
}

/// Mean over columns of the across-row variance of `M^k E` for k = 0..steps.
pub fn row_variance_series(m: &SparseRowMatrix, e: &DenseMatrix, steps: usize) -> Vec<f64> {
    let mut series = Vec::with_capacity(steps + 1);
    let mut state = e.clone();
    series.push(mean_column_variance(&state));
    for _ in 0..steps {
        state = spmm(m, &state).expect("shapes fixed by caller");
        series.push(mean_column_variance(&state));
    }
    series
}

/// Collapse diagnostic for the restart-free joint dynamics.
pub fn collapse_monitor(
    ops: &PropagationOperators,
    beta: f64,
    e_joint: &DenseMatrix,
    steps: usize,
) -> Vec<f64> {
    let m = joint_operator(ops, beta);
    row_variance_series(&m, e_joint, steps)
}

fn mean_column_variance(m: &DenseMatrix) -> f64 {
    let (rows, cols) = (m.rows(), m.cols());
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for c in 0..cols {
        let mut mean = 0.0;
        for r in 0..rows {
            mean += m.get(r, c);
        }
        mean /= rows as f64;
        let mut var = 0.0;
        for r in 0..rows {
            let d = m.get(r, c) - mean;
            var += d * d;
        }
        total += var / rows as f64;
    }
    total / cols as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SeededRng;

    fn uniform_ops(n: usize) -> PropagationOperators {
        // All four operators: uniform all-pairs averaging.
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for _ in 0..n {
            for j in 0..n {
                indices.push(j);
            }
            offsets.push(indices.len());
        }
        let values = vec![1.0 / n as f64; n * n];
        let m = SparseRowMatrix::new(n, n, offsets, indices, values, true).unwrap();
        PropagationOperators::from_parts(m.clone(), m.clone(), m.clone(), m)
    }

    fn identity_ops(n: usize) -> PropagationOperators {
        let i = SparseRowMatrix::identity(n);
        PropagationOperators::from_parts(i.clone(), i.clone(), i.clone(), i)
    }

    #[test]
    fn identity_propagation_is_stationary() {
        let e = DenseMatrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let cfg = SmoothingConfig {
            depth: 4,
            coupling: 0.0,
            restart: 0.0,
            normalize_each_step: false,
        };
        let traj = coupled_smooth(&identity_ops(2), &e, &e, &cfg).unwrap();
        for k in 0..=4 {
            assert_eq!(traj.states_v[k], e);
        }
    }

    #[test]
    fn full_restart_pins_states_to_anchor() {
        let e_v = DenseMatrix::from_vec(2, 2, vec![0.6, 0.8, 1.0, 0.0]).unwrap();
        let e_t = DenseMatrix::from_vec(2, 2, vec![0.0, 1.0, 0.8, 0.6]).unwrap();
        let cfg = SmoothingConfig {
            depth: 3,
            coupling: 0.5,
            restart: 1.0,
            normalize_each_step: true,
        };
        let traj = coupled_smooth(&uniform_ops(2), &e_v, &e_t, &cfg).unwrap();
        // Anchors are unit rows already, so Norm(E) = E.
        for k in 1..=3 {
            for (a, b) in traj.states_v[k].data().iter().zip(e_v.data()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn one_step_hand_computation() {
        let e_v = DenseMatrix::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        let e_t = DenseMatrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let cfg = SmoothingConfig {
            depth: 1,
            coupling: 0.5,
            restart: 0.0,
            normalize_each_step: false,
        };
        let traj = coupled_smooth(&uniform_ops(2), &e_v, &e_t, &cfg).unwrap();
        assert!((traj.states_v[1].get(0, 0) - 0.5).abs() < 1e-15);
        assert!((traj.states_v[1].get(1, 0) - 0.5).abs() < 1e-15);
        assert!((traj.states_t[1].get(0, 0) - 0.5).abs() < 1e-15);
        assert!((traj.states_t[1].get(1, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn beta_zero_ignores_cross_operators() {
        let n = 4;
        let mut rng = SeededRng::new(3);
        let e_v = random_matrix(n, 3, &mut rng);
        let e_t = random_matrix(n, 3, &mut rng);
        let intra = random_stochastic(n, &mut rng);
        let cross_a = random_stochastic(n, &mut rng);
        let cross_b = random_stochastic(n, &mut rng);
        let cfg = SmoothingConfig {
            depth: 3,
            coupling: 0.0,
            restart: 0.2,
            normalize_each_step: true,
        };
        let ops_a = PropagationOperators::from_parts(
            intra.clone(),
            intra.clone(),
            cross_a.clone(),
            cross_a,
        );
        let ops_b =
            PropagationOperators::from_parts(intra.clone(), intra, cross_b.clone(), cross_b);
        let ta = coupled_smooth(&ops_a, &e_v, &e_t, &cfg).unwrap();
        let tb = coupled_smooth(&ops_b, &e_v, &e_t, &cfg).unwrap();
        for k in 0..=3 {
            assert_eq!(ta.states_v[k], tb.states_v[k]);
            assert_eq!(ta.states_t[k], tb.states_t[k]);
        }
    }

    #[test]
    fn trajectory_is_deterministic() {
        let n = 5;
        let mut rng = SeededRng::new(8);
        let e_v = random_matrix(n, 2, &mut rng);
        let e_t = random_matrix(n, 2, &mut rng);
        let p = random_stochastic(n, &mut rng);
        let ops = PropagationOperators::from_parts(p.clone(), p.clone(), p.clone(), p);
        let cfg = SmoothingConfig::default();
        let a = coupled_smooth(&ops, &e_v, &e_t, &cfg).unwrap();
        let b = coupled_smooth(&ops, &e_v, &e_t, &cfg).unwrap();
        for k in 0..=cfg.depth {
            assert_eq!(a.states_v[k], b.states_v[k]);
        }
    }

    #[test]
    fn joint_operator_blocks() {
        let ops = identity_ops(2);
        let m0 = joint_operator(&ops, 0.0).to_dense();
        assert_eq!(m0, DenseMatrix::identity(4));
        let m1 = joint_operator(&ops, 1.0).to_dense();
        for i in 0..2 {
            assert_eq!(m1.get(i, i + 2), 1.0);
            assert_eq!(m1.get(i + 2, i), 1.0);
            assert_eq!(m1.get(i, i), 0.0);
        }
        let m = joint_operator(&ops, 0.3).to_dense();
        for i in 0..2 {
            assert!((m.get(i, i) - 0.7).abs() < 1e-15);
            assert!((m.get(i, i + 2) - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn resolvent_alpha_one_returns_anchor() {
        let ops = uniform_ops(3);
        let e = DenseMatrix::from_vec(6, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let h = resolvent_fixed_point(&ops, 0.4, 1.0, &e).unwrap();
        for (a, b) in h.data().iter().zip(e.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resolvent_identity_operator_closed_form() {
        // M = I: alpha (I - (1-alpha) I)^{-1} = I.
        let ops = identity_ops(3);
        let e = DenseMatrix::from_vec(6, 2, (0..12).map(|i| i as f64).collect()).unwrap();
        let h = resolvent_fixed_point(&ops, 0.0, 0.5, &e).unwrap();
        for (a, b) in h.data().iter().zip(e.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resolvent_matches_long_iteration() {
        let n = 4; // joint dimension 8
        let mut rng = SeededRng::new(21);
        let p_v = random_stochastic(n, &mut rng);
        let p_t = random_stochastic(n, &mut rng);
        let p_vt = random_stochastic(n, &mut rng);
        let p_tv = random_stochastic(n, &mut rng);
        let ops = PropagationOperators::from_parts(p_v, p_t, p_vt, p_tv);
        let e = random_matrix(2 * n, 3, &mut rng);
        let alpha = 0.2;
        let beta = 0.35;
        let h_star = resolvent_fixed_point(&ops, beta, alpha, &e).unwrap();
        let m = joint_operator(&ops, beta);
        let mut h = e.clone();
        for _ in 0..10_000 {
            let mut next = spmm(&m, &h).unwrap();
            next.scale(1.0 - alpha);
            next.add_scaled(&e, alpha);
            h = next;
        }
        let diff = h.sub(&h_star).max_abs();
        assert!(diff < 1e-8, "residual {}", diff);
    }

    #[test]
    fn resolvent_guard_rejects_large_systems() {
        let n = 600;
        let i = SparseRowMatrix::identity(2 * n);
        let e = DenseMatrix::zeros(2 * n, 1);
        let res = resolvent_of_operator(&i, 0.5, &e);
        assert!(matches!(res, Err(Error::SizeGuard { .. })));
    }

    #[test]
    fn gap_norm_cases() {
        let mk = |vals: Vec<f64>| DenseMatrix::from_vec(vals.len(), 1, vals).unwrap();
        let traj = SmoothingTrajectory {
            states_v: vec![mk(vec![1.0, 0.0])],
            states_t: vec![mk(vec![0.0, 1.0])],
        };
        assert!((gap_norm(&traj, 0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(gap_norm(&traj, 1).is_err());

        let same = SmoothingTrajectory {
            states_v: vec![mk(vec![0.3])],
            states_t: vec![mk(vec![0.3])],
        };
        assert_eq!(gap_norm(&same, 0).unwrap(), 0.0);

        let one = SmoothingTrajectory {
            states_v: vec![mk(vec![1.0])],
            states_t: vec![mk(vec![0.0])],
        };
        assert_eq!(gap_norm(&one, 0).unwrap(), 1.0);
    }

    #[test]
    fn uniform_averaging_collapses_in_one_step() {
        // Uniform all-pairs averaging matrix: variance vanishes after one step.
        let n = 6;
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        for _ in 0..n {
            indices.extend(0..n);
            offsets.push(indices.len());
        }
        let m = SparseRowMatrix::new(n, n, offsets, indices, vec![1.0 / n as f64; n * n], true)
            .unwrap();
        let e = DenseMatrix::from_vec(n, 2, (0..2 * n).map(|i| i as f64 * 0.5).collect()).unwrap();
        let series = row_variance_series(&m, &e, 2);
        assert!(series[0] > 0.0);
        assert!(series[1] < 1e-25);
    }

    #[test]
    fn joint_uniform_blocks_collapse_geometrically() {
        // The block operator mixes the two modality means at rate |1 - 2b|;
        // variance across the joint rows decays to zero over steps.
        let ops = uniform_ops(3);
        let e = DenseMatrix::from_vec(6, 2, (0..12).map(|i| i as f64 * 0.5).collect()).unwrap();
        let series = collapse_monitor(&ops, 0.4, &e, 50);
        assert!(series[50] < 1e-12 * series[0].max(1e-300));
    }

    #[test]
    fn constant_rows_have_zero_variance_at_step_zero() {
        let e = DenseMatrix::from_vec(4, 2, vec![1.0, 2.0].repeat(4)).unwrap();
        let series = row_variance_series(&SparseRowMatrix::identity(4), &e, 0);
        assert_eq!(series[0], 0.0);
    }

    #[test]
    fn lazy_walk_variance_decays() {
        // 4-node cycle with self-loops: irreducible and aperiodic.
        let n = 4;
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..n {
            let mut row = vec![i, (i + 1) % n, (i + n - 1) % n];
            row.sort_unstable();
            for j in row {
                indices.push(j);
                values.push(1.0 / 3.0);
            }
            offsets.push(indices.len());
        }
        let m = SparseRowMatrix::new(n, n, offsets, indices, values, true).unwrap();
        let mut rng = SeededRng::new(17);
        let e = random_matrix(n, 3, &mut rng);
        let series = row_variance_series(&m, &e, 50);
        assert!(series[50] < 1e-6 * series[0]);
    }

    #[test]
    fn smoothing_backward_matches_finite_difference() {
        let n = 3;
        let d = 2;
        let mut rng = SeededRng::new(4);
        let e_v = random_matrix(n, d, &mut rng);
        let e_t = random_matrix(n, d, &mut rng);
        let ops = PropagationOperators::from_parts(
            random_stochastic(n, &mut rng),
            random_stochastic(n, &mut rng),
            random_stochastic(n, &mut rng),
            random_stochastic(n, &mut rng),
        );
        let cfg = SmoothingConfig {
            depth: 2,
            coupling: 0.4,
            restart: 0.25,
            normalize_each_step: true,
        };
        // Loss: weighted sum over all retained states.
        let mut weight_rng = SeededRng::new(5);
        let weights_v: Vec<DenseMatrix> =
            (0..=2).map(|_| random_matrix(n, d, &mut weight_rng)).collect();
        let weights_t: Vec<DenseMatrix> =
            (0..=2).map(|_| random_matrix(n, d, &mut weight_rng)).collect();
        let loss = |ev: &DenseMatrix, et: &DenseMatrix| -> f64 {
            let traj = coupled_smooth(&ops, ev, et, &cfg).unwrap();
            let mut total = 0.0;
            for k in 0..=2 {
                total += dot(&traj.states_v[k], &weights_v[k]);
                total += dot(&traj.states_t[k], &weights_t[k]);
            }
            total
        };
        let (traj, trace) = coupled_smooth_traced(&ops, &e_v, &e_t, &cfg).unwrap();
        let grads = coupled_smooth_backward(
            &ops, &traj, &trace, &e_v, &e_t, &cfg, &weights_v, &weights_t,
        )
        .unwrap();
        let h = 1e-6;
        for idx in 0..(n * d) {
            let mut plus = e_v.clone();
            plus.data_mut()[idx] += h;
            let mut minus = e_v.clone();
            minus.data_mut()[idx] -= h;
            let fd = (loss(&plus, &e_t) - loss(&minus, &e_t)) / (2.0 * h);
            assert!(
                (grads.d_e_v.data()[idx] - fd).abs() < 1e-6,
                "d_e_v[{}] {} vs {}",
                idx,
                grads.d_e_v.data()[idx],
                fd
            );
        }
    }

    fn dot(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> DenseMatrix {
        let data = (0..rows * cols).map(|_| rng.next_gaussian()).collect();
        DenseMatrix::from_vec(rows, cols, data).unwrap()
    }

    fn random_stochastic(n: usize, rng: &mut SeededRng) -> SparseRowMatrix {
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for _ in 0..n {
            let mut row: Vec<f64> = (0..n).map(|_| rng.next_f64() + 0.05).collect();
            let sum: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= sum;
            }
            // Exact renormalization for the flag's 1e-9 tolerance.
            for (j, v) in row.into_iter().enumerate() {
                indices.push(j);
                values.push(v);
            }
            offsets.push(indices.len());
        }
        SparseRowMatrix::new(n, n, offsets, indices, values, true).unwrap()
    }
}
