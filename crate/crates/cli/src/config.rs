//! Run configuration: a TOML file with sections mirroring the pipeline
//! stages, plus dotted-path overrides. Every field has a default, and the
//! fully resolved configuration is echoed next to the results so a run can be
//! reproduced from its own output.

use magalign::data::{RandomizeMode, SplitConfig, SynthConfig};
use magalign::objective::{LossWeights, PipelineConfig, PipelineOptions};
use magalign::readout::ReadoutConfig;
use magalign::smoothing::SmoothingConfig;
use magalign::topology::CandidateMode;
use magalign::training::{CheckpointMetric, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic,
    Files,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DatasetSource,
    pub features_v: Option<PathBuf>,
    pub features_t: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub categories: Option<PathBuf>,
    pub nodes: usize,
    pub classes: usize,
    pub feature_dim: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub sigma_v: f64,
    pub sigma_t: f64,
    pub mismatch_angle: f64,
    pub noise_correlation: f64,
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Self {
            source: DatasetSource::Synthetic,
            features_v: None,
            features_t: None,
            edges: None,
            categories: None,
            nodes: synth.nodes,
            classes: synth.classes,
            feature_dim: synth.feature_dim,
            p_in: synth.p_in,
            p_out: synth.p_out,
            sigma_v: synth.sigma_v,
            sigma_t: synth.sigma_t,
            mismatch_angle: synth.mismatch_angle,
            noise_correlation: synth.noise_correlation,
            seed: synth.seed,
        }
    }
}

impl DatasetSection {
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            nodes: self.nodes,
            classes: self.classes,
            feature_dim: self.feature_dim,
            p_in: self.p_in,
            p_out: self.p_out,
            sigma_v: self.sigma_v,
            sigma_t: self.sigma_t,
            mismatch_angle: self.mismatch_angle,
            noise_correlation: self.noise_correlation,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let s = SplitConfig::default();
        Self {
            train_fraction: s.train_fraction,
            val_fraction: s.val_fraction,
            test_fraction: s.test_fraction,
            seed: s.seed,
        }
    }
}

impl SplitSection {
    pub fn to_core(&self) -> SplitConfig {
        SplitConfig {
            train_fraction: self.train_fraction,
            val_fraction: self.val_fraction,
            test_fraction: self.test_fraction,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidatesSection {
    pub mode: CandidateMode,
    pub k_intra: usize,
    pub k_cross: usize,
    /// Build kNN candidates on the initial adapter outputs instead of the
    /// frozen features.
    pub knn_on_adapted: bool,
}

impl Default for CandidatesSection {
    fn default() -> Self {
        Self {
            mode: CandidateMode::Hybrid,
            k_intra: 10,
            k_cross: 10,
            knn_on_adapted: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub scorer_hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            scorer_hidden: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingSection {
    pub depth: usize,
    pub coupling: f64,
    pub restart: f64,
    pub normalize_each_step: bool,
}

impl Default for SmoothingSection {
    fn default() -> Self {
        let s = SmoothingConfig::default();
        Self {
            depth: s.depth,
            coupling: s.coupling,
            restart: s.restart,
            normalize_each_step: s.normalize_each_step,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutSection {
    pub residual: f64,
    pub attention_width: usize,
}

impl Default for ReadoutSection {
    fn default() -> Self {
        let r = ReadoutConfig::default();
        Self {
            residual: r.residual,
            attention_width: r.attention_width,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub lambda_cde: f64,
    pub lambda_topo: f64,
    pub lambda_direct: f64,
    pub gamma: f64,
    pub temperature: f64,
    pub negatives_per_positive: usize,
    pub max_topo_positives: usize,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            lambda_cde: w.lambda_cde,
            lambda_topo: w.lambda_topo,
            lambda_direct: w.lambda_direct,
            gamma: w.gamma,
            temperature: w.temperature,
            negatives_per_positive: w.negatives_per_positive,
            max_topo_positives: w.max_topo_positives,
        }
    }
}

impl LossSection {
    pub fn to_core(&self) -> LossWeights {
        LossWeights {
            lambda_cde: self.lambda_cde,
            lambda_topo: self.lambda_topo,
            lambda_direct: self.lambda_direct,
            gamma: self.gamma,
            temperature: self.temperature,
            negatives_per_positive: self.negatives_per_positive,
            max_topo_positives: self.max_topo_positives,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub patience: usize,
    pub checkpoint_metric: CheckpointMetric,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            batch_size: t.batch_size,
            epochs: t.epochs,
            warmup_epochs: t.warmup_epochs,
            patience: t.patience,
            checkpoint_metric: t.checkpoint_metric,
            seed: t.seed,
        }
    }
}

impl TrainSection {
    pub fn to_core(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            batch_size: self.batch_size,
            epochs: self.epochs,
            warmup_epochs: self.warmup_epochs,
            patience: self.patience,
            checkpoint_metric: self.checkpoint_metric,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    /// Sets the cross-modal coupling to zero.
    pub disable_cross_modal: bool,
    /// Sets the restart coefficient to zero.
    pub disable_restart: bool,
    /// Uniform attention weights over depths.
    pub uniform_readout: bool,
    /// Uniform operator weights over candidates (no topology optimization).
    pub uniform_operators: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    /// "none", or an edge perturbation applied before candidate construction.
    pub randomize_edges: Option<RandomizeMode>,
    pub randomize_seed: u64,
    /// Inject diagonal cross-modal answer edges (control-only protocol).
    pub allow_self_pair_edges: bool,
    /// Cross-modal channels carry only the diagonal (control-only protocol).
    pub only_self_pair_edges: bool,
    /// Skip propagation; train the adapters with the full objective.
    pub adapter_only: bool,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            randomize_edges: None,
            randomize_seed: 43,
            allow_self_pair_edges: false,
            only_self_pair_edges: false,
            adapter_only: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Rank test queries against the full corpus instead of the test gallery.
    pub full_gallery: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Export per-step smoothing states of the best checkpoint.
    pub dump_trajectory: bool,
    /// Export per-node argmax attention depth as CSV.
    pub export_attention_depths: bool,
    /// Export the candidate graphs as edge-list text.
    pub export_candidates: bool,
    /// Save the best checkpoint (tensor blocks plus manifest).
    pub save_checkpoint: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OraclesSection {
    /// Per-modality size; the joint operator is twice this.
    pub nodes: usize,
    pub dim: usize,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub gap_trials: usize,
    pub seed: u64,
}

impl Default for OraclesSection {
    fn default() -> Self {
        Self {
            nodes: 32,
            dim: 8,
            alphas: vec![0.1, 0.3, 0.5],
            betas: vec![0.1, 0.25, 0.4],
            gap_trials: 20,
            seed: 43,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub knn_k: usize,
    pub max_depth: usize,
    pub hard_query_low: f64,
    pub hard_query_high: f64,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            knn_k: 10,
            max_depth: 12,
            hard_query_low: 0.25,
            hard_query_high: 0.75,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub split: SplitSection,
    pub candidates: CandidatesSection,
    pub model: ModelSection,
    pub smoothing: SmoothingSection,
    pub readout: ReadoutSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub ablation: AblationSection,
    pub control: ControlSection,
    pub eval: EvalSection,
    pub output: OutputSection,
    pub oracles: OraclesSection,
    pub diagnostics: DiagnosticsSection,
}

impl RunConfig {
    /// Collects every violated field instead of stopping at the first.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errors = Vec::new();

        match self.dataset.source {
            DatasetSource::Files => {
                for (field, value) in [
                    ("dataset.features_v", &self.dataset.features_v),
                    ("dataset.features_t", &self.dataset.features_t),
                    ("dataset.edges", &self.dataset.edges),
                ] {
                    if value.is_none() {
                        errors.push(format!("{}: required when dataset.source = \"files\"", field));
                    }
                }
            }
            DatasetSource::Synthetic => {
                if let Err(e) = self.dataset.synth_config().validate() {
                    errors.push(format!("dataset: {}", e));
                }
            }
        }
        if let Err(e) = self.split.to_core().validate() {
            errors.push(format!("split: {}", e));
        }
        if self.model.embed_dim == 0 {
            errors.push("model.embed_dim: must be positive".to_string());
        }
        if self.model.scorer_hidden == 0 {
            errors.push("model.scorer_hidden: must be positive".to_string());
        }
        let smoothing = SmoothingConfig {
            depth: self.smoothing.depth,
            coupling: self.smoothing.coupling,
            restart: self.smoothing.restart,
            normalize_each_step: self.smoothing.normalize_each_step,
        };
        if let Err(e) = smoothing.validate() {
            errors.push(format!("smoothing: {}", e));
        }
        let readout = ReadoutConfig {
            residual: self.readout.residual,
            attention_width: self.readout.attention_width,
        };
        if let Err(e) = readout.validate() {
            errors.push(format!("readout: {}", e));
        }
        if let Err(e) = self.loss.to_core().validate() {
            errors.push(format!("loss: {}", e));
        }
        if let Err(e) = self.train.to_core().validate() {
            errors.push(format!("train: {}", e));
        }
        if self.control.allow_self_pair_edges && self.control.only_self_pair_edges {
            errors.push(
                "control.allow_self_pair_edges / control.only_self_pair_edges: mutually exclusive"
                    .to_string(),
            );
        }
        if self.control.adapter_only {
            let ab = &self.ablation;
            if ab.disable_cross_modal || ab.disable_restart || ab.uniform_readout || ab.uniform_operators
            {
                errors.push(
                    "control.adapter_only: incompatible with ablation switches (no propagation to ablate)"
                        .to_string(),
                );
            }
            if self.control.allow_self_pair_edges || self.control.only_self_pair_edges {
                errors.push(
                    "control.adapter_only: incompatible with self-pair edge controls".to_string(),
                );
            }
        }
        if !(0.0..=1.0).contains(&self.diagnostics.hard_query_low)
            || !(0.0..=1.0).contains(&self.diagnostics.hard_query_high)
        {
            errors.push("diagnostics.hard_query_low/high: quantiles must lie in [0, 1]".to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    /// The effective pipeline configuration after ablation/control switches.
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            embed_dim: self.model.embed_dim,
            scorer_hidden: self.model.scorer_hidden,
            smoothing: SmoothingConfig {
                depth: self.smoothing.depth,
                coupling: if self.ablation.disable_cross_modal {
                    0.0
                } else {
                    self.smoothing.coupling
                },
                restart: if self.ablation.disable_restart {
                    0.0
                } else {
                    self.smoothing.restart
                },
                normalize_each_step: self.smoothing.normalize_each_step,
            },
            readout: ReadoutConfig {
                residual: self.readout.residual,
                attention_width: self.readout.attention_width,
            },
            options: PipelineOptions {
                uniform_readout: self.ablation.uniform_readout,
                uniform_operators: self.ablation.uniform_operators,
                adapter_only: self.control.adapter_only,
            },
        }
    }

    pub fn protocol_label(&self) -> &'static str {
        if self.control.allow_self_pair_edges || self.control.only_self_pair_edges {
            "control-only"
        } else {
            "in-protocol"
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses a TOML string into a raw value tree (so overrides can be applied
/// before strongly-typed deserialization).
pub fn parse_config_value(text: &str) -> Result<toml::Value, String> {
    text.parse::<toml::Value>().map_err(|e| e.to_string())
}

/// Applies a `key.path=value` override onto the value tree. Values parse as
/// TOML scalars, falling back to strings.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<(), String> {
    let (path, raw_value) = spec
        .split_once('=')
        .ok_or_else(|| format!("override '{}' is not of the form key.path=value", spec))?;
    // Type the scalar through a one-line document; anything that does not
    // parse as a TOML value becomes a string.
    let parsed: toml::Value = match format!("v = {}", raw_value).parse::<toml::Value>() {
        Ok(doc) => doc.get("v").cloned().unwrap_or_else(|| {
            toml::Value::String(raw_value.to_string())
        }),
        Err(_) => toml::Value::String(raw_value.to_string()),
    };
    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.is_empty() {
        return Err(format!("override '{}' has an empty key path", spec));
    }
    for segment in &segments[..segments.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| format!("override '{}': '{}' is not a table", spec, segment))?;
        node = table
            .entry(segment.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| format!("override '{}': parent is not a table", spec))?;
    table.insert(segments[segments.len() - 1].to_string(), parsed);
    Ok(())
}

/// Loads a config file (or defaults when `path` is None), applies overrides,
/// and deserializes into a validated `RunConfig`.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[String],
    seed_override: Option<u64>,
) -> Result<RunConfig, Vec<String>> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| vec![format!("cannot read config {}: {}", p.display(), e)])?,
        None => String::new(),
    };
    let mut value = parse_config_value(&text).map_err(|e| vec![format!("config parse: {}", e)])?;
    for spec in overrides {
        apply_override(&mut value, spec).map_err(|e| vec![e])?;
    }
    if let Some(seed) = seed_override {
        apply_override(&mut value, &format!("train.seed={}", seed)).map_err(|e| vec![e])?;
    }
    let config: RunConfig = value
        .try_into()
        .map_err(|e| vec![format!("config: {}", e)])?;
    config.validate()?;
    Ok(config)
}
