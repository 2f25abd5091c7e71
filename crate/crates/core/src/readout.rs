//! Trajectory readout: per-node attention over smoothing depths with a
//! mean-trajectory context, blended with the direct embedding through a
//! residual coefficient, then row-normalized.

use crate::error::{Error, Result};
use crate::smoothing::SmoothingTrajectory;
use crate::tensor::{
    l2_normalize_rows_backward, l2_normalize_rows_traced, softmax_rows, softmax_rows_backward,
    DenseMatrix, NORM_EPS,
};
use serde::{Deserialize, Serialize};

/// Attention parameters for one modality. These are independent of the
/// adapter weights despite the similar role.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutParams {
    /// d_a x d, projects the per-depth state.
    pub w_att: DenseMatrix,
    /// d_a x d, projects the mean trajectory context.
    pub u_att: DenseMatrix,
    /// d_a, score projection.
    pub q: Vec<f64>,
}

impl ReadoutParams {
    pub fn zeros(attention_width: usize, dim: usize) -> Self {
        Self {
            w_att: DenseMatrix::zeros(attention_width, dim),
            u_att: DenseMatrix::zeros(attention_width, dim),
            q: vec![0.0; attention_width],
        }
    }

    pub fn attention_width(&self) -> usize {
        self.q.len()
    }

    pub fn dim(&self) -> usize {
        self.w_att.cols()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReadoutConfig {
    /// Residual blend in [0, 1]: 1 keeps only the weighted trajectory sum,
    /// 0 keeps only the direct embedding.
    pub residual: f64,
    pub attention_width: usize,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self {
            residual: 0.7,
            attention_width: 16,
        }
    }
}

impl ReadoutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.residual) {
            return Err(Error::InvalidParameter {
                what: "residual",
                detail: format!("must be in [0, 1], got {}", self.residual),
            });
        }
        if self.attention_width == 0 {
            return Err(Error::InvalidParameter {
                what: "attention_width",
                detail: "must be at least 1".to_string(),
            });
        }
        Ok(())
    }
}

/// Forward intermediates for one modality's readout.
#[derive(Debug, Clone)]
pub struct ReadoutTrace {
    /// tanh activations per depth, each N x d_a.
    hidden: Vec<DenseMatrix>,
    /// N x (K+1) attention weights.
    pub omega: DenseMatrix,
    /// Mean trajectory context, N x d.
    hbar: DenseMatrix,
    /// Row norms of the pre-normalization output.
    norms: Vec<f64>,
    /// Normalized output.
    z: DenseMatrix,
    uniform: bool,
}

fn check_shapes(
    states: &[DenseMatrix],
    e: &DenseMatrix,
    params: &ReadoutParams,
) -> Result<()> {
    if states.is_empty() {
        return Err(Error::InvalidParameter {
            what: "trajectory",
            detail: "readout requires at least one state".to_string(),
        });
    }
    let (n, d) = (e.rows(), e.cols());
    for s in states {
        if s.rows() != n || s.cols() != d {
            return Err(Error::DimMismatch {
                op: "trajectory_readout",
                detail: format!(
                    "state {}x{} vs embeddings {}x{}",
                    s.rows(),
                    s.cols(),
                    n,
                    d
                ),
            });
        }
    }
    if params.dim() != d || params.u_att.cols() != d || params.u_att.rows() != params.w_att.rows()
    {
        return Err(Error::DimMismatch {
            op: "trajectory_readout",
            detail: format!(
                "attention shapes {}x{} / {}x{} vs dim {}",
                params.w_att.rows(),
                params.w_att.cols(),
                params.u_att.rows(),
                params.u_att.cols(),
                d
            ),
        });
    }
    Ok(())
}

/// Readout for one modality. `uniform` replaces the learned attention with
/// fixed weights 1/(K+1) (the no-adaptive-readout ablation).
pub fn readout_modality(
    states: &[DenseMatrix],
    e: &DenseMatrix,
    params: &ReadoutParams,
    cfg: &ReadoutConfig,
    uniform: bool,
) -> Result<(DenseMatrix, ReadoutTrace)> {
    cfg.validate()?;
    check_shapes(states, e, params)?;
    let n = e.rows();
    let steps = states.len();
    let rho = cfg.residual;

    let mut hbar = DenseMatrix::zeros(n, e.cols());
    for s in states {
        hbar.add_scaled(s, 1.0 / steps as f64);
    }

    let (omega, hidden) = if uniform {
        let omega = DenseMatrix::from_vec(
            n,
            steps,
            vec![1.0 / steps as f64; n * steps],
        )
        .expect("shape by construction");
        (omega, Vec::new())
    } else {
        let context = hbar.matmul_transpose_b(&params.u_att)?;
        let mut scores = DenseMatrix::zeros(n, steps);
        let mut hidden = Vec::with_capacity(steps);
        for (k, state) in states.iter().enumerate() {
            let mut pre = state.matmul_transpose_b(&params.w_att)?;
            pre.add_scaled(&context, 1.0);
            for v in pre.data_mut() {
                *v = v.tanh();
            }
            for i in 0..n {
                let u: f64 = pre.row(i).iter().zip(&params.q).map(|(a, b)| a * b).sum();
                scores.set(i, k, u);
            }
            hidden.push(pre);
        }
        (softmax_rows(&scores), hidden)
    };

    let mut y = e.clone();
    y.scale(1.0 - rho);
    for (k, state) in states.iter().enumerate() {
        for i in 0..n {
            let w = rho * omega.get(i, k);
            let s_row = state.row(i);
            for (out, &s) in y.row_mut(i).iter_mut().zip(s_row) {
                *out += w * s;
            }
        }
    }
    let (z, norms) = l2_normalize_rows_traced(&y, NORM_EPS);
    Ok((
        z.clone(),
        ReadoutTrace {
            hidden,
            omega,
            hbar,
            norms,
            z,
            uniform,
        },
    ))
}

/// Gradients from one modality's readout backward pass.
#[derive(Debug, Clone)]
pub struct ReadoutGrads {
    pub d_states: Vec<DenseMatrix>,
    pub d_e: DenseMatrix,
    pub d_params: ReadoutParams,
}

pub fn readout_backward(
    states: &[DenseMatrix],
    e: &DenseMatrix,
    params: &ReadoutParams,
    cfg: &ReadoutConfig,
    trace: &ReadoutTrace,
    d_z: &DenseMatrix,
) -> Result<ReadoutGrads> {
    let n = e.rows();
    let d = e.cols();
    let steps = states.len();
    let rho = cfg.residual;

    let d_y = l2_normalize_rows_backward(&trace.z, &trace.norms, d_z);

    let mut d_e = d_y.clone();
    d_e.scale(1.0 - rho);
    let mut d_states: Vec<DenseMatrix> = (0..steps).map(|_| DenseMatrix::zeros(n, d)).collect();
    let mut d_params = ReadoutParams::zeros(params.attention_width(), d);

    // Weighted-sum path: y += rho * omega[i,k] * states[k][i].
    let mut d_omega = DenseMatrix::zeros(n, steps);
    for (k, state) in states.iter().enumerate() {
        for i in 0..n {
            let dy_row = d_y.row(i);
            let s_row = state.row(i);
            let mut dot = 0.0;
            let w = rho * trace.omega.get(i, k);
            let ds_row = d_states[k].row_mut(i);
            for ((ds, &dy), &s) in ds_row.iter_mut().zip(dy_row).zip(s_row) {
                *ds += w * dy;
                dot += dy * s;
            }
            d_omega.set(i, k, rho * dot);
        }
    }

    if trace.uniform {
        // Fixed weights carry no gradient.
        return Ok(ReadoutGrads {
            d_states,
            d_e,
            d_params,
        });
    }

    let d_scores = softmax_rows_backward(&trace.omega, &d_omega);

    // Score path: u[i,k] = q . tanh(W h_k[i] + U hbar[i]).
    let mut d_hbar = DenseMatrix::zeros(n, d);
    for (k, state) in states.iter().enumerate() {
        let hidden = &trace.hidden[k];
        // d_pre = d_u * q * (1 - s^2), one row per node.
        let mut d_pre = DenseMatrix::zeros(n, params.attention_width());
        for i in 0..n {
            let du = d_scores.get(i, k);
            if du == 0.0 {
                continue;
            }
            let h_row = hidden.row(i);
            let dp_row = d_pre.row_mut(i);
            for ((dp, &q), &s) in dp_row.iter_mut().zip(&params.q).zip(h_row) {
                *dp = du * q * (1.0 - s * s);
            }
            for (dq, &s) in d_params.q.iter_mut().zip(h_row) {
                *dq += du * s;
            }
        }
        // Parameter gradients: dW += d_pre^T state, dU += d_pre^T hbar.
        d_params
            .w_att
            .add_scaled(&d_pre.transpose_matmul(state)?, 1.0);
        d_params
            .u_att
            .add_scaled(&d_pre.transpose_matmul(&trace.hbar)?, 1.0);
        // Input gradients: d_state += d_pre W, d_hbar += d_pre U.
        d_states[k].add_scaled(&d_pre.matmul(&params.w_att)?, 1.0);
        d_hbar.add_scaled(&d_pre.matmul(&params.u_att)?, 1.0);
    }

    // Mean-context path distributes evenly over depths.
    for ds in d_states.iter_mut() {
        ds.add_scaled(&d_hbar, 1.0 / steps as f64);
    }

    Ok(ReadoutGrads {
        d_states,
        d_e,
        d_params,
    })
}

/// Full readout over both modalities.
pub fn trajectory_readout(
    traj: &SmoothingTrajectory,
    e_v: &DenseMatrix,
    e_t: &DenseMatrix,
    params_v: &ReadoutParams,
    params_t: &ReadoutParams,
    cfg: &ReadoutConfig,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let (z_v, _) = readout_modality(&traj.states_v, e_v, params_v, cfg, false)?;
    let (z_t, _) = readout_modality(&traj.states_t, e_t, params_t, cfg, false)?;
    Ok((z_v, z_t))
}

/// Per-node per-depth attention weights for both modalities.
pub fn attention_weights(
    traj: &SmoothingTrajectory,
    params_v: &ReadoutParams,
    params_t: &ReadoutParams,
    cfg: &ReadoutConfig,
) -> Result<(DenseMatrix, DenseMatrix)> {
    // The residual blend does not affect the weights; reuse the forward with
    // a zero anchor of the right shape.
    let n = traj.states_v[0].rows();
    let d = traj.states_v[0].cols();
    let zero = DenseMatrix::zeros(n, d);
    let (_, trace_v) = readout_modality(&traj.states_v, &zero, params_v, cfg, false)?;
    let (_, trace_t) = readout_modality(&traj.states_t, &zero, params_t, cfg, false)?;
    Ok((trace_v.omega, trace_t.omega))
}

/// Argmax depth per node, the "selected smoothing depth" diagnostic.
pub fn selected_depths(omega: &DenseMatrix) -> Vec<usize> {
    (0..omega.rows())
        .map(|i| {
            let row = omega.row(i);
            let mut best = 0usize;
            for (k, &w) in row.iter().enumerate() {
                if w > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}
