//! Trainable parameter containers. One `ModelParams` instance holds the
//! adapters, the four edge scorers, and the two readout attentions; gradient
//! buffers and Adam moments reuse the same type so every consumer walks the
//! tensors in one fixed order.

use crate::readout::ReadoutParams;
use crate::tensor::{DenseMatrix, SeededRng};
use crate::topology::EdgeScorerParams;

/// Linear adapter mapping frozen features (dim F) into the shared space
/// (dim d): `e = Norm(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    /// d x F
    pub weight: DenseMatrix,
    /// d
    pub bias: Vec<f64>,
}

impl AdapterParams {
    pub fn zeros(embed: usize, feat: usize) -> Self {
        Self {
            weight: DenseMatrix::zeros(embed, feat),
            bias: vec![0.0; embed],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub feat_v: usize,
    pub feat_t: usize,
    pub embed: usize,
    pub scorer_hidden: usize,
    pub attention_width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub adapter_v: AdapterParams,
    pub adapter_t: AdapterParams,
    /// Indexed by `Channel::index()`.
    pub scorers: [EdgeScorerParams; 4],
    pub readout_v: ReadoutParams,
    pub readout_t: ReadoutParams,
}

impl ModelParams {
    pub fn zeros(dims: &ModelDims) -> Self {
        Self {
            adapter_v: AdapterParams::zeros(dims.embed, dims.feat_v),
            adapter_t: AdapterParams::zeros(dims.embed, dims.feat_t),
            scorers: std::array::from_fn(|_| {
                EdgeScorerParams::zeros(dims.scorer_hidden, dims.embed)
            }),
            readout_v: ReadoutParams::zeros(dims.attention_width, dims.embed),
            readout_t: ReadoutParams::zeros(dims.attention_width, dims.embed),
        }
    }

    /// Seeded initialization.
    ///
    /// Adapters start at (truncated) identity so the shared space initially
    /// preserves the frozen-feature geometry; the frozen features are already
    /// a meaningful retrieval space and a random projection would discard it.
    /// Scorer and readout output layers start at zero, so the initial
    /// operators and depth weights are exactly uniform and training learns
    /// deviations from that baseline. Hidden layers are seeded gaussians at
    /// 1/sqrt(fan-in) scale.
    pub fn init(dims: &ModelDims, rng: &mut SeededRng) -> Self {
        let mut params = Self::zeros(dims);
        let fill = |m: &mut [f64], scale: f64, rng: &mut SeededRng| {
            for v in m {
                *v = rng.next_gaussian() * scale;
            }
        };
        for (adapter, feat) in [
            (&mut params.adapter_v, dims.feat_v),
            (&mut params.adapter_t, dims.feat_t),
        ] {
            for i in 0..dims.embed.min(feat) {
                adapter.weight.set(i, i, 1.0);
            }
            if dims.embed > feat {
                // Extra output rows would stay identically zero; give them a
                // small random projection instead.
                for r in feat..dims.embed {
                    let row = adapter.weight.row_mut(r);
                    for v in row {
                        *v = rng.next_gaussian() / (feat as f64).sqrt();
                    }
                }
            }
        }
        let d_scale = 1.0 / (dims.embed as f64).sqrt();
        for scorer in params.scorers.iter_mut() {
            fill(scorer.weight.data_mut(), d_scale, rng);
            // proj stays zero: initial logits are 0, operators uniform.
        }
        for readout in [&mut params.readout_v, &mut params.readout_t] {
            fill(readout.w_att.data_mut(), d_scale, rng);
            fill(readout.u_att.data_mut(), d_scale, rng);
            // q stays zero: initial depth attention is uniform.
        }
        params
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            feat_v: self.adapter_v.weight.cols(),
            feat_t: self.adapter_t.weight.cols(),
            embed: self.adapter_v.weight.rows(),
            scorer_hidden: self.scorers[0].hidden(),
            attention_width: self.readout_v.attention_width(),
        }
    }

    /// Flat views over every tensor in the canonical order. The order is the
    /// contract shared by `tensors_mut`, Adam, and the finite-difference
    /// checker.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![
            ("adapter_v.weight", self.adapter_v.weight.data()),
            ("adapter_v.bias", &self.adapter_v.bias),
            ("adapter_t.weight", self.adapter_t.weight.data()),
            ("adapter_t.bias", &self.adapter_t.bias),
        ];
        const SCORER_NAMES: [[&str; 3]; 4] = [
            ["scorer_v.weight", "scorer_v.bias", "scorer_v.proj"],
            ["scorer_t.weight", "scorer_t.bias", "scorer_t.proj"],
            ["scorer_vt.weight", "scorer_vt.bias", "scorer_vt.proj"],
            ["scorer_tv.weight", "scorer_tv.bias", "scorer_tv.proj"],
        ];
        for (scorer, names) in self.scorers.iter().zip(SCORER_NAMES) {
            out.push((names[0], scorer.weight.data()));
            out.push((names[1], &scorer.bias));
            out.push((names[2], &scorer.proj));
        }
        out.push(("readout_v.w_att", self.readout_v.w_att.data()));
        out.push(("readout_v.u_att", self.readout_v.u_att.data()));
        out.push(("readout_v.q", &self.readout_v.q));
        out.push(("readout_t.w_att", self.readout_t.w_att.data()));
        out.push(("readout_t.u_att", self.readout_t.u_att.data()));
        out.push(("readout_t.q", &self.readout_t.q));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = Vec::with_capacity(22);
        out.push(("adapter_v.weight", self.adapter_v.weight.data_mut()));
        out.push(("adapter_v.bias", &mut self.adapter_v.bias));
        out.push(("adapter_t.weight", self.adapter_t.weight.data_mut()));
        out.push(("adapter_t.bias", &mut self.adapter_t.bias));
        const SCORER_NAMES: [[&str; 3]; 4] = [
            ["scorer_v.weight", "scorer_v.bias", "scorer_v.proj"],
            ["scorer_t.weight", "scorer_t.bias", "scorer_t.proj"],
            ["scorer_vt.weight", "scorer_vt.bias", "scorer_vt.proj"],
            ["scorer_tv.weight", "scorer_tv.bias", "scorer_tv.proj"],
        ];
        for (scorer, names) in self.scorers.iter_mut().zip(SCORER_NAMES) {
            out.push((names[0], scorer.weight.data_mut()));
            out.push((names[1], &mut scorer.bias));
            out.push((names[2], &mut scorer.proj));
        }
        out.push(("readout_v.w_att", self.readout_v.w_att.data_mut()));
        out.push(("readout_v.u_att", self.readout_v.u_att.data_mut()));
        out.push(("readout_v.q", &mut self.readout_v.q));
        out.push(("readout_t.w_att", self.readout_t.w_att.data_mut()));
        out.push(("readout_t.u_att", self.readout_t.u_att.data_mut()));
        out.push(("readout_t.q", &mut self.readout_t.q));
        out
    }

    pub fn zero_out(&mut self) {
        for (_, t) in self.tensors_mut() {
            for v in t {
                *v = 0.0;
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn max_abs_difference(&self, other: &ModelParams) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .flat_map(|((_, a), (_, b))| a.iter().zip(b.iter()))
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }
}

/// Adapter forward: `E = Norm(X W^T + b)`, returning the normalized output
/// and the row norms for the backward pass.
pub fn adapter_forward(
    x: &DenseMatrix,
    adapter: &AdapterParams,
) -> crate::error::Result<(DenseMatrix, Vec<f64>)> {
    let mut pre = x.matmul_transpose_b(&adapter.weight)?;
    for r in 0..pre.rows() {
        for (v, b) in pre.row_mut(r).iter_mut().zip(&adapter.bias) {
            *v += b;
        }
    }
    let (e, norms) = crate::tensor::l2_normalize_rows_traced(&pre, crate::tensor::NORM_EPS);
    Ok((e, norms))
}

/// Adapter backward: accumulates into `d_adapter` given the gradient on the
/// normalized output.
pub fn adapter_backward(
    x: &DenseMatrix,
    e: &DenseMatrix,
    norms: &[f64],
    d_e: &DenseMatrix,
    d_adapter: &mut AdapterParams,
) -> crate::error::Result<()> {
    let d_pre = crate::tensor::l2_normalize_rows_backward(e, norms, d_e);
    d_adapter
        .weight
        .add_scaled(&d_pre.transpose_matmul(x)?, 1.0);
    for r in 0..d_pre.rows() {
        for (db, v) in d_adapter.bias.iter_mut().zip(d_pre.row(r)) {
            *db += v;
        }
    }
    Ok(())
}
