//! The training objective: symmetric contrastive alignment on the refined
//! and direct branches, coupled Dirichlet energy, sampled topology contrast,
//! and the exact reverse pass through readout, smoothing (restart and
//! per-step normalization included), row softmax, edge scorers, and adapters.
//!
//! The computation graph is static per run, so the backward pass is
//! hand-derived and validated against central finite differences.

mod cde;
mod infonce;
mod topo;

pub use cde::{cde_loss, CdeGrads};
pub use infonce::{info_nce_symmetric, InfoNceGrads};
pub use topo::{topology_contrast, TopoContrastGrads};

use crate::error::{Error, Result};
use crate::model::{adapter_backward, adapter_forward, ModelParams};
use crate::readout::{readout_backward, readout_modality, ReadoutConfig};
use crate::smoothing::{coupled_smooth_backward, coupled_smooth_traced, SmoothingConfig};
use crate::tensor::{DenseMatrix, SeededRng};
use crate::topology::{
    normalize_operators, operators_backward, score_edges, score_pair_backward,
    CandidateGraphs, Channel, ChannelLogits, EdgeScorerParams, PropagationOperators, ScorerTrace,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cde: f64,
    pub lambda_topo: f64,
    pub lambda_direct: f64,
    /// Cross-channel scale inside the Dirichlet energy.
    pub gamma: f64,
    pub temperature: f64,
    pub negatives_per_positive: usize,
    /// Per-channel positive subsample budget for the topology contrast.
    pub max_topo_positives: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cde: 0.1,
            lambda_topo: 0.05,
            lambda_direct: 0.3,
            gamma: 1.0,
            temperature: 0.07,
            negatives_per_positive: 5,
            max_topo_positives: 2048,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::InvalidParameter {
                what: "temperature",
                detail: format!("must be positive, got {}", self.temperature),
            });
        }
        for (name, v) in [
            ("lambda_cde", self.lambda_cde),
            ("lambda_topo", self.lambda_topo),
            ("lambda_direct", self.lambda_direct),
            ("gamma", self.gamma),
        ] {
            if v < 0.0 {
                return Err(Error::InvalidParameter {
                    what: "loss weight",
                    detail: format!("{} must be nonnegative, got {}", name, v),
                });
            }
        }
        if self.lambda_topo > 0.0 && self.negatives_per_positive == 0 {
            return Err(Error::InvalidParameter {
                what: "negatives_per_positive",
                detail: "must be at least 1 when the topology contrast is active".to_string(),
            });
        }
        Ok(())
    }
}

/// Structural switches of the refinement pipeline (the ablation axes that are
/// not plain hyperparameters).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PipelineOptions {
    /// Replace learned attention over depths with fixed uniform weights.
    pub uniform_readout: bool,
    /// Replace learned operator weights with uniform weights over candidates;
    /// disables the edge scorers and the topology contrast.
    pub uniform_operators: bool,
    /// Skip propagation entirely: the refined embeddings are the adapter
    /// outputs, while the regularizers keep their usual form.
    pub adapter_only: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Shared embedding dimension produced by the adapters.
    pub embed_dim: usize,
    /// Hidden width of the edge scorers.
    pub scorer_hidden: usize,
    pub smoothing: SmoothingConfig,
    pub readout: ReadoutConfig,
    pub options: PipelineOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            scorer_hidden: 32,
            smoothing: SmoothingConfig::default(),
            readout: ReadoutConfig::default(),
            options: PipelineOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub align: f64,
    pub direct: f64,
    pub cde: f64,
    pub topo: f64,
}

/// Embeddings produced by a full forward pass.
pub struct EmbeddingOutputs {
    pub e_v: DenseMatrix,
    pub e_t: DenseMatrix,
    pub z_v: DenseMatrix,
    pub z_t: DenseMatrix,
    pub operators: PropagationOperators,
}

fn channel_logits_for(
    params: &ModelParams,
    graphs: &CandidateGraphs,
    e_v: &DenseMatrix,
    e_t: &DenseMatrix,
    uniform_operators: bool,
) -> Result<(ChannelLogits, Option<ScorerTrace>)> {
    if uniform_operators {
        Ok((
            ChannelLogits {
                per_channel: std::array::from_fn(|c| {
                    vec![0.0; graphs.channel(Channel::ALL[c]).edge_count()]
                }),
            },
            None,
        ))
    } else {
        let (logits, trace) = score_edges(graphs, e_v, e_t, &params.scorers)?;
        Ok((logits, Some(trace)))
    }
}

/// Forward-only pipeline for evaluation and diagnostics.
pub fn forward_embeddings(
    params: &ModelParams,
    x_v: &DenseMatrix,
    x_t: &DenseMatrix,
    graphs: &CandidateGraphs,
    cfg: &PipelineConfig,
) -> Result<EmbeddingOutputs> {
    let (e_v, _) = adapter_forward(x_v, &params.adapter_v)?;
    let (e_t, _) = adapter_forward(x_t, &params.adapter_t)?;
    let (logits, _) =
        channel_logits_for(params, graphs, &e_v, &e_t, cfg.options.uniform_operators)?;
    let operators = normalize_operators(graphs, &logits)?;
    if cfg.options.adapter_only {
        return Ok(EmbeddingOutputs {
            z_v: e_v.clone(),
            z_t: e_t.clone(),
            e_v,
            e_t,
            operators,
        });
    }
    let (traj, _) = coupled_smooth_traced(&operators, &e_v, &e_t, &cfg.smoothing)?;
    let (z_v, _) = readout_modality(
        &traj.states_v,
        &e_v,
        &params.readout_v,
        &cfg.readout,
        cfg.options.uniform_readout,
    )?;
    let (z_t, _) = readout_modality(
        &traj.states_t,
        &e_t,
        &params.readout_t,
        &cfg.readout,
        cfg.options.uniform_readout,
    )?;
    Ok(EmbeddingOutputs {
        e_v,
        e_t,
        z_v,
        z_t,
        operators,
    })
}

fn check_finite(term: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss { term })
    }
}

/// Full objective with exact gradients for every trainable parameter.
///
/// `sample_seed` fixes the negative sampling of the topology contrast, so a
/// repeated call on identical inputs is bit-identical (and finite-difference
/// probes see a smooth function).
#[allow(clippy::too_many_arguments)]
pub fn total_loss_and_grad(
    params: &ModelParams,
    x_v: &DenseMatrix,
    x_t: &DenseMatrix,
    graphs: &CandidateGraphs,
    cfg: &PipelineConfig,
    weights: &LossWeights,
    batch: &[usize],
    gallery: &[usize],
    sample_seed: u64,
) -> Result<(LossBreakdown, ModelParams)> {
    weights.validate()?;
    let dims = params.dims();
    let mut grads = ModelParams::zeros(&dims);

    // ---- forward ----
    let (e_v, norms_v) = adapter_forward(x_v, &params.adapter_v)?;
    let (e_t, norms_t) = adapter_forward(x_t, &params.adapter_t)?;

    let uniform_ops = cfg.options.uniform_operators;
    let (logits, scorer_trace) = channel_logits_for(params, graphs, &e_v, &e_t, uniform_ops)?;
    let operators = normalize_operators(graphs, &logits)?;

    let refined = if cfg.options.adapter_only {
        None
    } else {
        let (traj, sm_trace) = coupled_smooth_traced(&operators, &e_v, &e_t, &cfg.smoothing)?;
        let (z_v, ro_trace_v) = readout_modality(
            &traj.states_v,
            &e_v,
            &params.readout_v,
            &cfg.readout,
            cfg.options.uniform_readout,
        )?;
        let (z_t, ro_trace_t) = readout_modality(
            &traj.states_t,
            &e_t,
            &params.readout_t,
            &cfg.readout,
            cfg.options.uniform_readout,
        )?;
        Some((traj, sm_trace, z_v, ro_trace_v, z_t, ro_trace_t))
    };

    // ---- losses ----
    let (align, align_grads) = match &refined {
        Some((_, _, z_v, _, z_t, _)) => {
            info_nce_symmetric(z_v, z_t, batch, gallery, weights.temperature)?
        }
        None => info_nce_symmetric(&e_v, &e_t, batch, gallery, weights.temperature)?,
    };
    let align = check_finite("align", align)?;

    let (direct, direct_grads) = if weights.lambda_direct > 0.0 {
        let (l, g) = info_nce_symmetric(&e_v, &e_t, batch, gallery, weights.temperature)?;
        (check_finite("direct", l)?, Some(g))
    } else {
        (0.0, None)
    };

    let (cde, cde_grads) = if weights.lambda_cde > 0.0 {
        let (l, g) = cde_loss(graphs, &operators, &e_v, &e_t, weights.gamma);
        (check_finite("cde", l)?, Some(g))
    } else {
        (0.0, None)
    };

    let (topo, topo_grads) = if weights.lambda_topo > 0.0 && !uniform_ops {
        let mut rng = SeededRng::with_tag(sample_seed, "topo-negatives");
        let (l, g) = topology_contrast(
            graphs,
            &logits,
            &e_v,
            &e_t,
            &params.scorers,
            weights.negatives_per_positive,
            weights.max_topo_positives,
            &mut rng,
        )?;
        (check_finite("topo", l)?, Some(g))
    } else {
        (0.0, None)
    };

    let total = check_finite(
        "total",
        align
            + weights.lambda_direct * direct
            + weights.lambda_cde * cde
            + weights.lambda_topo * topo,
    )?;

    // ---- backward ----
    let n = e_v.rows();
    let d = e_v.cols();
    let mut d_e_v = DenseMatrix::zeros(n, d);
    let mut d_e_t = DenseMatrix::zeros(n, d);
    let mut d_values: [Vec<f64>; 4] = std::array::from_fn(|c| {
        vec![0.0; operators.get(Channel::ALL[c]).nnz()]
    });

    match &refined {
        Some((traj, sm_trace, _, ro_trace_v, _, ro_trace_t)) => {
            let ro_v = readout_backward(
                &traj.states_v,
                &e_v,
                &params.readout_v,
                &cfg.readout,
                ro_trace_v,
                &align_grads.d_z_v,
            )?;
            let ro_t = readout_backward(
                &traj.states_t,
                &e_t,
                &params.readout_t,
                &cfg.readout,
                ro_trace_t,
                &align_grads.d_z_t,
            )?;
            add_readout(&mut grads.readout_v, &ro_v.d_params);
            add_readout(&mut grads.readout_t, &ro_t.d_params);
            d_e_v.add_scaled(&ro_v.d_e, 1.0);
            d_e_t.add_scaled(&ro_t.d_e, 1.0);

            let sm = coupled_smooth_backward(
                &operators,
                traj,
                sm_trace,
                &e_v,
                &e_t,
                &cfg.smoothing,
                &ro_v.d_states,
                &ro_t.d_states,
            )?;
            d_e_v.add_scaled(&sm.d_e_v, 1.0);
            d_e_t.add_scaled(&sm.d_e_t, 1.0);
            for (dst, src) in d_values.iter_mut().zip(sm.d_values.iter()) {
                for (a, b) in dst.iter_mut().zip(src) {
                    *a += b;
                }
            }
        }
        None => {
            d_e_v.add_scaled(&align_grads.d_z_v, 1.0);
            d_e_t.add_scaled(&align_grads.d_z_t, 1.0);
        }
    }

    if let Some(g) = &cde_grads {
        d_e_v.add_scaled(&g.d_e_v, weights.lambda_cde);
        d_e_t.add_scaled(&g.d_e_t, weights.lambda_cde);
        for (dst, src) in d_values.iter_mut().zip(g.d_values.iter()) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += weights.lambda_cde * b;
            }
        }
    }

    if !uniform_ops {
        // Softmax backward, then the topology-contrast gradient lands on the
        // positive logits directly (pre-softmax).
        let mut d_logits = operators_backward(graphs, &operators, &d_values);
        if let Some(g) = &topo_grads {
            for (dst, src) in d_logits.per_channel.iter_mut().zip(g.d_logits.iter()) {
                for (a, b) in dst.iter_mut().zip(src) {
                    *a += weights.lambda_topo * b;
                }
            }
            for (dst, src) in grads.scorers.iter_mut().zip(g.d_scorers.iter()) {
                add_scorer(dst, src, weights.lambda_topo);
            }
            d_e_v.add_scaled(&g.d_e_v, weights.lambda_topo);
            d_e_t.add_scaled(&g.d_e_t, weights.lambda_topo);
        }

        // Candidate-edge scorer backward.
        let trace = scorer_trace.as_ref().expect("trace exists when scorers run");
        let mut d_tgt = vec![0.0; d];
        let mut d_src = vec![0.0; d];
        for ch in Channel::ALL {
            let pattern = graphs.channel(ch);
            let (tgt_visual, src_visual) = ch.endpoint_is_visual();
            let h = params.scorers[ch.index()].hidden();
            let hidden = &trace.hidden[ch.index()];
            for (k, (i, j)) in pattern.pairs().enumerate() {
                let d_logit = d_logits.per_channel[ch.index()][k];
                if d_logit == 0.0 {
                    continue;
                }
                d_tgt.iter_mut().for_each(|v| *v = 0.0);
                d_src.iter_mut().for_each(|v| *v = 0.0);
                let e_tgt = if tgt_visual { e_v.row(i) } else { e_t.row(i) };
                let e_src = if src_visual { e_v.row(j) } else { e_t.row(j) };
                score_pair_backward(
                    &params.scorers[ch.index()],
                    e_tgt,
                    e_src,
                    &hidden[k * h..(k + 1) * h],
                    d_logit,
                    &mut grads.scorers[ch.index()],
                    &mut d_tgt,
                    &mut d_src,
                );
                let dt = if tgt_visual { &mut d_e_v } else { &mut d_e_t };
                for (g, v) in dt.row_mut(i).iter_mut().zip(&d_tgt) {
                    *g += v;
                }
                let ds = if src_visual { &mut d_e_v } else { &mut d_e_t };
                for (g, v) in ds.row_mut(j).iter_mut().zip(&d_src) {
                    *g += v;
                }
            }
        }
    }

    if let Some(g) = &direct_grads {
        d_e_v.add_scaled(&g.d_z_v, weights.lambda_direct);
        d_e_t.add_scaled(&g.d_z_t, weights.lambda_direct);
    }

    adapter_backward(x_v, &e_v, &norms_v, &d_e_v, &mut grads.adapter_v)?;
    adapter_backward(x_t, &e_t, &norms_t, &d_e_t, &mut grads.adapter_t)?;

    Ok((
        LossBreakdown {
            total,
            align,
            direct,
            cde,
            topo,
        },
        grads,
    ))
}

/// Warm-up objective: the direct contrastive loss alone at weight 1.0, with
/// gradients flowing only into the adapters.
pub fn warmup_loss_and_grad(
    params: &ModelParams,
    x_v: &DenseMatrix,
    x_t: &DenseMatrix,
    batch: &[usize],
    gallery: &[usize],
    temperature: f64,
) -> Result<(f64, ModelParams)> {
    let dims = params.dims();
    let mut grads = ModelParams::zeros(&dims);
    let (e_v, norms_v) = adapter_forward(x_v, &params.adapter_v)?;
    let (e_t, norms_t) = adapter_forward(x_t, &params.adapter_t)?;
    let (loss, g) = info_nce_symmetric(&e_v, &e_t, batch, gallery, temperature)?;
    let loss = check_finite("direct", loss)?;
    adapter_backward(x_v, &e_v, &norms_v, &g.d_z_v, &mut grads.adapter_v)?;
    adapter_backward(x_t, &e_t, &norms_t, &g.d_z_t, &mut grads.adapter_t)?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub violations: usize,
    pub pass: bool,
}

/// Central finite-difference validation of the analytic gradients.
///
/// For each parameter: relative error `|g - fd| / max(|g|, |fd|)` must stay
/// under `rel_tol` whenever the larger magnitude exceeds 1e-5; smaller
/// gradients are held to the absolute floor instead (a stricter bound at
/// that scale), since the difference quotient itself carries roundoff of
/// about `eps * |loss| / step`, which is 1e-11-ish here and swamps the
/// relative comparison for near-zero gradients.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_check(
    params: &ModelParams,
    x_v: &DenseMatrix,
    x_t: &DenseMatrix,
    graphs: &CandidateGraphs,
    cfg: &PipelineConfig,
    weights: &LossWeights,
    batch: &[usize],
    gallery: &[usize],
    sample_seed: u64,
    step: f64,
    rel_tol: f64,
    abs_floor: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = total_loss_and_grad(
        params, x_v, x_t, graphs, cfg, weights, batch, gallery, sample_seed,
    )?;
    let loss_of = |p: &ModelParams| -> Result<f64> {
        let (breakdown, _) = total_loss_and_grad(
            p, x_v, x_t, graphs, cfg, weights, batch, gallery, sample_seed,
        )?;
        Ok(breakdown.total)
    };
    let mut checked = 0usize;
    let mut violations = 0usize;
    let mut max_rel = 0.0f64;
    let mut worst_tensor = String::new();
    let mut worst_index = 0usize;
    let tensor_names: Vec<&'static str> = params.tensors().iter().map(|(n, _)| *n).collect();
    let tensor_lens: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
    for (t_idx, (&name, &len)) in tensor_names.iter().zip(&tensor_lens).enumerate() {
        for i in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[t_idx].1[i] += step;
            let mut minus = params.clone();
            minus.tensors_mut()[t_idx].1[i] -= step;
            let fd = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * step);
            let g = grads.tensors()[t_idx].1[i];
            let denom = g.abs().max(fd.abs());
            checked += 1;
            if denom >= 1e-5 {
                let rel = (g - fd).abs() / denom;
                if rel > max_rel {
                    max_rel = rel;
                    worst_tensor = name.to_string();
                    worst_index = i;
                }
                if rel > rel_tol {
                    violations += 1;
                }
            } else if (g - fd).abs() > abs_floor {
                violations += 1;
            }
        }
    }
    Ok(GradCheckReport {
        checked,
        max_rel_error: max_rel,
        worst_tensor,
        worst_index,
        violations,
        pass: violations == 0,
    })
}

fn add_scorer(dst: &mut EdgeScorerParams, src: &EdgeScorerParams, scale: f64) {
    dst.weight.add_scaled(&src.weight, scale);
    for (a, b) in dst.bias.iter_mut().zip(&src.bias) {
        *a += scale * b;
    }
    for (a, b) in dst.proj.iter_mut().zip(&src.proj) {
        *a += scale * b;
    }
}

fn add_readout(dst: &mut crate::readout::ReadoutParams, src: &crate::readout::ReadoutParams) {
    dst.w_att.add_scaled(&src.w_att, 1.0);
    dst.u_att.add_scaled(&src.u_att, 1.0);
    for (a, b) in dst.q.iter_mut().zip(&src.q) {
        *a += b;
    }
}
