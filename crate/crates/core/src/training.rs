//! The optimization loop: Adam updates with a warm-up phase that trains only
//! the adapters, epoch scheduling over shuffled train batches against the
//! full train gallery, validation-based checkpoint selection, and multi-seed
//! orchestration.

use crate::data::{MagDataset, Split};
use crate::error::{Error, Result};
use crate::evaluation::{retrieval_metrics, DirectionMetrics, RetrievalReport};
use crate::model::{ModelDims, ModelParams};
use crate::objective::{
    forward_embeddings, total_loss_and_grad, warmup_loss_and_grad, LossBreakdown, LossWeights,
    PipelineConfig,
};
use crate::tensor::SeededRng;
use crate::topology::CandidateGraphs;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointMetric {
    RecallAt10,
    /// Named by the evaluation protocol of some corpora but never defined;
    /// selecting it is a configuration error.
    WeightedRecall,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    /// Epochs without validation improvement before stopping early.
    pub patience: usize,
    pub checkpoint_metric: CheckpointMetric,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 512,
            epochs: 60,
            warmup_epochs: 5,
            patience: 15,
            checkpoint_metric: CheckpointMetric::RecallAt10,
            seed: 43,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 {
            return Err(Error::InvalidParameter {
                what: "learning_rate",
                detail: format!("must be nonnegative, got {}", self.learning_rate),
            });
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 < b && b < 1.0) {
                return Err(Error::InvalidParameter {
                    what: "adam betas",
                    detail: format!("{} must be in (0, 1), got {}", name, b),
                });
            }
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::InvalidParameter {
                what: "warmup_epochs",
                detail: format!("{} exceeds epochs {}", self.warmup_epochs, self.epochs),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter {
                what: "batch_size",
                detail: "must be positive".to_string(),
            });
        }
        if self.checkpoint_metric == CheckpointMetric::WeightedRecall {
            return Err(Error::Unsupported {
                what: "checkpoint metric",
                detail: "weighted-recall has no published definition; use recall_at_10".to_string(),
            });
        }
        Ok(())
    }
}

/// Adam moment buffers; shapes mirror the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: ModelParams,
    v: ModelParams,
    pub step: usize,
}

impl AdamState {
    pub fn new(dims: &ModelDims) -> Self {
        Self {
            m: ModelParams::zeros(dims),
            v: ModelParams::zeros(dims),
            step: 0,
        }
    }
}

/// Standard bias-corrected Adam update applied in the fixed tensor order.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let g_tensors = grads.tensors();
    for (((_, p), (_, g)), ((_, m), (_, v))) in params
        .tensors_mut()
        .into_iter()
        .zip(g_tensors)
        .zip(state.m.tensors_mut().into_iter().zip(state.v.tensors_mut()))
    {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: ModelParams,
    pub val_metric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: &'static str,
    pub loss: LossBreakdown,
    /// Node set the per-epoch retrieval metric was computed on.
    pub evaluated_split: &'static str,
    pub val_metric: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub epochs: Vec<EpochRecord>,
    /// Set when a non-finite loss aborted training; the best checkpoint up to
    /// that point is retained.
    pub aborted: Option<String>,
}

fn val_metric_of(report: &RetrievalReport, metric: CheckpointMetric) -> f64 {
    match metric {
        CheckpointMetric::RecallAt10 => report.averaged.r_at_10,
        CheckpointMetric::WeightedRecall => f64::NAN,
    }
}

fn evaluate_split(
    params: &ModelParams,
    ds: &MagDataset,
    graphs: &CandidateGraphs,
    pipeline: &PipelineConfig,
    split: Split,
) -> Result<RetrievalReport> {
    let nodes = ds.nodes_in(split);
    let out = forward_embeddings(params, &ds.features_v, &ds.features_t, graphs, pipeline)?;
    retrieval_metrics(&out.z_v, &out.z_t, &nodes, &nodes)
}

/// Full training run. Warm-up epochs optimize only the adapters through the
/// direct contrastive loss; later epochs use the complete objective. The
/// checkpoint metric is computed on validation nodes only; test nodes are
/// never touched here.
pub fn train(
    ds: &MagDataset,
    graphs: &CandidateGraphs,
    pipeline: &PipelineConfig,
    weights: &LossWeights,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    weights.validate()?;
    pipeline.smoothing.validate()?;
    pipeline.readout.validate()?;

    let dims = ModelDims {
        feat_v: ds.features_v.cols(),
        feat_t: ds.features_t.cols(),
        embed: pipeline.embed_dim,
        scorer_hidden: pipeline.scorer_hidden,
        attention_width: pipeline.readout.attention_width,
    };
    let mut params = ModelParams::init(&dims, &mut SeededRng::with_tag(cfg.seed, "init"));
    let mut adam = AdamState::new(&dims);

    let train_nodes = ds.nodes_in(Split::Train);
    if train_nodes.is_empty() {
        return Err(Error::InvalidParameter {
            what: "split",
            detail: "no train nodes".to_string(),
        });
    }
    let batch_size = cfg.batch_size.min(train_nodes.len());

    let init_report = evaluate_split(&params, ds, graphs, pipeline, Split::Val)?;
    let init_metric = val_metric_of(&init_report, cfg.checkpoint_metric);
    let mut best = Checkpoint {
        epoch: 0,
        params: params.clone(),
        val_metric: init_metric,
    };
    let mut records = vec![EpochRecord {
        epoch: 0,
        phase: "init",
        loss: LossBreakdown {
            total: f64::NAN,
            align: f64::NAN,
            direct: f64::NAN,
            cde: f64::NAN,
            topo: f64::NAN,
        },
        evaluated_split: "val",
        val_metric: init_metric,
    }];

    let mut shuffle_rng = SeededRng::with_tag(cfg.seed, "batches");
    let mut epochs_without_improvement = 0usize;
    let mut aborted = None;
    let mut step_counter = 0u64;

    'epochs: for epoch in 1..=cfg.epochs {
        let warmup = epoch <= cfg.warmup_epochs;
        let mut order = train_nodes.clone();
        shuffle_rng.shuffle(&mut order);

        let mut epoch_loss = LossBreakdown {
            total: 0.0,
            align: 0.0,
            direct: 0.0,
            cde: 0.0,
            topo: 0.0,
        };
        let mut batches = 0usize;

        for batch in order.chunks(batch_size) {
            step_counter += 1;
            let result = if warmup {
                warmup_loss_and_grad(
                    &params,
                    &ds.features_v,
                    &ds.features_t,
                    batch,
                    &train_nodes,
                    weights.temperature,
                )
                .map(|(loss, grads)| {
                    (
                        LossBreakdown {
                            total: loss,
                            align: 0.0,
                            direct: loss,
                            cde: 0.0,
                            topo: 0.0,
                        },
                        grads,
                    )
                })
            } else {
                total_loss_and_grad(
                    &params,
                    &ds.features_v,
                    &ds.features_t,
                    graphs,
                    pipeline,
                    weights,
                    batch,
                    &train_nodes,
                    cfg.seed ^ step_counter.wrapping_mul(0x9E37_79B9_7F4A_7C15),
                )
            };
            match result {
                Ok((loss, grads)) => {
                    epoch_loss.total += loss.total;
                    epoch_loss.align += loss.align;
                    epoch_loss.direct += loss.direct;
                    epoch_loss.cde += loss.cde;
                    epoch_loss.topo += loss.topo;
                    batches += 1;
                    adam_step(
                        &mut params,
                        &grads,
                        &mut adam,
                        cfg.learning_rate,
                        cfg.beta1,
                        cfg.beta2,
                        cfg.epsilon,
                    );
                }
                Err(Error::NonFiniteLoss { term }) => {
                    aborted = Some(format!("non-finite loss in term {} at epoch {}", term, epoch));
                    log::error!("{}; retaining checkpoint from epoch {}", aborted.as_ref().unwrap(), best.epoch);
                    break 'epochs;
                }
                Err(other) => return Err(other),
            }
        }
        if batches > 0 {
            let inv = 1.0 / batches as f64;
            epoch_loss.total *= inv;
            epoch_loss.align *= inv;
            epoch_loss.direct *= inv;
            epoch_loss.cde *= inv;
            epoch_loss.topo *= inv;
        }

        let report = evaluate_split(&params, ds, graphs, pipeline, Split::Val)?;
        let metric = val_metric_of(&report, cfg.checkpoint_metric);
        records.push(EpochRecord {
            epoch,
            phase: if warmup { "warmup" } else { "full" },
            loss: epoch_loss,
            evaluated_split: "val",
            val_metric: metric,
        });
        if metric > best.val_metric {
            best = Checkpoint {
                epoch,
                params: params.clone(),
                val_metric: metric,
            };
            epochs_without_improvement = 0;
        } else {
            epochs_without_improvement += 1;
            if epochs_without_improvement >= cfg.patience {
                log::info!(
                    "early stop at epoch {} (no improvement for {} epochs)",
                    epoch,
                    cfg.patience
                );
                break;
            }
        }
    }

    Ok(TrainOutcome {
        best,
        epochs: records,
        aborted,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedRunRecord {
    pub seed: u64,
    pub report: Option<RetrievalReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiSeedReport {
    pub runs: Vec<SeedRunRecord>,
    pub mean: Option<DirectionMetrics>,
    /// Population-corrected (n - 1) standard deviation; 0 for a single run.
    pub stddev: Option<DirectionMetrics>,
}

/// Runs `runner` once per seed and aggregates the averaged-direction metrics.
/// A failing seed is recorded and excluded from the aggregate.
pub fn multi_seed_run(
    seeds: &[u64],
    mut runner: impl FnMut(u64) -> Result<RetrievalReport>,
) -> MultiSeedReport {
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        match runner(seed) {
            Ok(report) => runs.push(SeedRunRecord {
                seed,
                report: Some(report),
                error: None,
            }),
            Err(e) => runs.push(SeedRunRecord {
                seed,
                report: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let ok: Vec<&RetrievalReport> = runs.iter().filter_map(|r| r.report.as_ref()).collect();
    let (mean, stddev) = aggregate(&ok);
    MultiSeedReport { runs, mean, stddev }
}

fn aggregate(reports: &[&RetrievalReport]) -> (Option<DirectionMetrics>, Option<DirectionMetrics>) {
    if reports.is_empty() {
        return (None, None);
    }
    let n = reports.len() as f64;
    let fields = |m: &DirectionMetrics| [m.r_at_1, m.r_at_5, m.r_at_10, m.mrr, m.mean_rank];
    let mut sums = [0.0; 5];
    for r in reports {
        for (s, v) in sums.iter_mut().zip(fields(&r.averaged)) {
            *s += v;
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let mut sq = [0.0; 5];
    for r in reports {
        for ((s, v), mean) in sq.iter_mut().zip(fields(&r.averaged)).zip(&means) {
            *s += (v - mean) * (v - mean);
        }
    }
    let std: Vec<f64> = if reports.len() > 1 {
        sq.iter().map(|s| (s / (n - 1.0)).sqrt()).collect()
    } else {
        vec![0.0; 5]
    };
    let pack = |v: &[f64]| DirectionMetrics {
        r_at_1: v[0],
        r_at_5: v[1],
        r_at_10: v[2],
        mrr: v[3],
        mean_rank: v[4],
    };
    (Some(pack(&means)), Some(pack(&std)))
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    schema_version: u32,
    feat_v: usize,
    feat_t: usize,
    embed: usize,
    scorer_hidden: usize,
    attention_width: usize,
    epoch: usize,
    val_metric: f64,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
    file: String,
}

/// Writes a checkpoint as one feature-container block per tensor plus a JSON
/// manifest, under `dir`.
pub fn save_checkpoint(checkpoint: &Checkpoint, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let dims = checkpoint.params.dims();
    let mut entries = Vec::new();
    for (name, data) in checkpoint.params.tensors() {
        let file = format!("{}.magf", name.replace('.', "_"));
        let m = crate::tensor::DenseMatrix::from_vec(1, data.len(), data.to_vec())?;
        crate::data::write_feature_file(&m, &dir.join(&file))?;
        entries.push(TensorEntry {
            name: name.to_string(),
            len: data.len(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        schema_version: 1,
        feat_v: dims.feat_v,
        feat_t: dims.feat_t,
        embed: dims.embed,
        scorer_hidden: dims.scorer_hidden,
        attention_width: dims.attention_width,
        epoch: checkpoint.epoch,
        val_metric: checkpoint.val_metric,
        tensors: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path)?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
            path: manifest_path.display().to_string(),
            detail: e.to_string(),
        })?;
    let dims = ModelDims {
        feat_v: manifest.feat_v,
        feat_t: manifest.feat_t,
        embed: manifest.embed,
        scorer_hidden: manifest.scorer_hidden,
        attention_width: manifest.attention_width,
    };
    let mut params = ModelParams::zeros(&dims);
    {
        let mut tensors = params.tensors_mut();
        for entry in &manifest.tensors {
            let slot = tensors
                .iter_mut()
                .find(|(name, _)| *name == entry.name)
                .ok_or_else(|| Error::MalformedFile {
                    path: manifest_path.display().to_string(),
                    detail: format!("unknown tensor {}", entry.name),
                })?;
            let m = crate::data::read_feature_file(&dir.join(&entry.file))?;
            if m.data().len() != slot.1.len() {
                return Err(Error::MalformedFile {
                    path: entry.file.clone(),
                    detail: format!(
                        "tensor {} has {} values, expected {}",
                        entry.name,
                        m.data().len(),
                        slot.1.len()
                    ),
                });
            }
            slot.1.copy_from_slice(m.data());
        }
    }
    Ok(Checkpoint {
        epoch: manifest.epoch,
        params,
        val_metric: manifest.val_metric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dims() -> ModelDims {
        ModelDims {
            feat_v: 3,
            feat_t: 3,
            embed: 2,
            scorer_hidden: 2,
            attention_width: 2,
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let dims = tiny_dims();
        let mut params = ModelParams::init(&dims, &mut SeededRng::new(1));
        let before = params.clone();
        let grads = ModelParams::zeros(&dims);
        let mut state = AdamState::new(&dims);
        for _ in 0..5 {
            adam_step(&mut params, &grads, &mut state, 1e-3, 0.9, 0.999, 1e-8);
        }
        assert_eq!(params, before);
    }

    #[test]
    fn adam_constant_gradient_approaches_sign_step() {
        let dims = tiny_dims();
        let mut params = ModelParams::zeros(&dims);
        let mut grads = ModelParams::zeros(&dims);
        for (_, t) in grads.tensors_mut() {
            for v in t {
                *v = 0.37;
            }
        }
        let mut state = AdamState::new(&dims);
        let lr = 1e-3;
        for _ in 0..999 {
            adam_step(&mut params, &grads, &mut state, lr, 0.9, 0.999, 1e-8);
        }
        let prev = params.clone();
        adam_step(&mut params, &grads, &mut state, lr, 0.9, 0.999, 1e-8);
        // Step magnitude approaches lr * sign(g) componentwise.
        let delta = prev.max_abs_difference(&params);
        assert!((delta - lr).abs() < 0.01 * lr, "delta {}", delta);
    }

    #[test]
    fn adam_is_deterministic() {
        let dims = tiny_dims();
        let run = || {
            let mut params = ModelParams::init(&dims, &mut SeededRng::new(7));
            let mut grads = ModelParams::zeros(&dims);
            for (_, t) in grads.tensors_mut() {
                for (i, v) in t.iter_mut().enumerate() {
                    *v = (i as f64 * 0.11).sin();
                }
            }
            let mut state = AdamState::new(&dims);
            for _ in 0..10 {
                adam_step(&mut params, &grads, &mut state, 2e-3, 0.9, 0.999, 1e-8);
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn weighted_recall_is_rejected() {
        let cfg = TrainConfig {
            checkpoint_metric: CheckpointMetric::WeightedRecall,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn multi_seed_aggregation_identical_seeds() {
        let report = RetrievalReport {
            v2t: DirectionMetrics {
                r_at_1: 50.0,
                r_at_5: 80.0,
                r_at_10: 90.0,
                mrr: 60.0,
                mean_rank: 3.0,
            },
            t2v: DirectionMetrics {
                r_at_1: 40.0,
                r_at_5: 70.0,
                r_at_10: 85.0,
                mrr: 55.0,
                mean_rank: 4.0,
            },
            averaged: DirectionMetrics {
                r_at_1: 45.0,
                r_at_5: 75.0,
                r_at_10: 87.5,
                mrr: 57.5,
                mean_rank: 3.5,
            },
            queries: 10,
            gallery: 10,
        };
        let out = multi_seed_run(&[43, 43], |_| Ok(report));
        let std = out.stddev.unwrap();
        assert_eq!(std.r_at_1, 0.0);
        assert_eq!(out.mean.unwrap().r_at_1, 45.0);
    }

    #[test]
    fn multi_seed_single_seed_zero_stddev() {
        let report = RetrievalReport {
            v2t: DirectionMetrics {
                r_at_1: 10.0,
                r_at_5: 20.0,
                r_at_10: 30.0,
                mrr: 15.0,
                mean_rank: 9.0,
            },
            t2v: DirectionMetrics {
                r_at_1: 10.0,
                r_at_5: 20.0,
                r_at_10: 30.0,
                mrr: 15.0,
                mean_rank: 9.0,
            },
            averaged: DirectionMetrics {
                r_at_1: 10.0,
                r_at_5: 20.0,
                r_at_10: 30.0,
                mrr: 15.0,
                mean_rank: 9.0,
            },
            queries: 5,
            gallery: 5,
        };
        let out = multi_seed_run(&[43], |_| Ok(report));
        assert_eq!(out.stddev.unwrap().r_at_10, 0.0);
    }

    #[test]
    fn multi_seed_hand_recomputed_stddev() {
        let mk = |r1: f64| RetrievalReport {
            v2t: DirectionMetrics {
                r_at_1: r1,
                r_at_5: 0.0,
                r_at_10: 0.0,
                mrr: 0.0,
                mean_rank: 1.0,
            },
            t2v: DirectionMetrics {
                r_at_1: r1,
                r_at_5: 0.0,
                r_at_10: 0.0,
                mrr: 0.0,
                mean_rank: 1.0,
            },
            averaged: DirectionMetrics {
                r_at_1: r1,
                r_at_5: 0.0,
                r_at_10: 0.0,
                mrr: 0.0,
                mean_rank: 1.0,
            },
            queries: 1,
            gallery: 1,
        };
        let values = [40.0, 50.0, 60.0];
        let mut it = values.iter();
        let out = multi_seed_run(&[43, 44, 45], |_| Ok(mk(*it.next().unwrap())));
        let mean = out.mean.unwrap().r_at_1;
        let std = out.stddev.unwrap().r_at_1;
        assert!((mean - 50.0).abs() < 1e-12);
        // (n-1) formula: sqrt(((100 + 0 + 100) / 2)) = 10.
        assert!((std - 10.0).abs() < 1e-12);
    }

    #[test]
    fn multi_seed_records_failures() {
        let out = multi_seed_run(&[1, 2], |seed| {
            if seed == 2 {
                Err(Error::EmptyQuerySet)
            } else {
                Ok(RetrievalReport {
                    v2t: DirectionMetrics {
                        r_at_1: 1.0,
                        r_at_5: 1.0,
                        r_at_10: 1.0,
                        mrr: 1.0,
                        mean_rank: 1.0,
                    },
                    t2v: DirectionMetrics {
                        r_at_1: 1.0,
                        r_at_5: 1.0,
                        r_at_10: 1.0,
                        mrr: 1.0,
                        mean_rank: 1.0,
                    },
                    averaged: DirectionMetrics {
                        r_at_1: 1.0,
                        r_at_5: 1.0,
                        r_at_10: 1.0,
                        mrr: 1.0,
                        mean_rank: 1.0,
                    },
                    queries: 1,
                    gallery: 1,
                })
            }
        });
        assert!(out.runs[1].error.is_some());
        assert!(out.mean.is_some());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let dims = tiny_dims();
        let params = ModelParams::init(&dims, &mut SeededRng::new(11));
        let ckpt = Checkpoint {
            epoch: 7,
            params: params.clone(),
            val_metric: 42.5,
        };
        save_checkpoint(&ckpt, dir.path()).unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded.epoch, 7);
        assert_eq!(loaded.val_metric, 42.5);
        assert_eq!(loaded.params, params);
    }
}
