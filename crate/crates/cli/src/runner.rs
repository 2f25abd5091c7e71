//! Executes the pipeline end to end and writes machine-readable results.

use crate::config::{DatasetSource, RunConfig};
use magalign::data::{
    generate_synthetic, load_dataset, randomize_edges, write_feature_file, DatasetPaths,
    MagDataset, Split,
};
use magalign::evaluation::{
    depth_sweep, hard_query_support, knn_overlap, neighbor_purity, retrieval_metrics,
    DepthSweepEntry, HardQueryReport, NeighborhoodSource, RetrievalReport,
};
use magalign::model::{adapter_forward, ModelDims, ModelParams};
use magalign::objective::forward_embeddings;
use magalign::oracles::{run_oracle_battery, OracleReport};
use magalign::readout::{attention_weights, selected_depths};
use magalign::smoothing::coupled_smooth;
use magalign::tensor::{l2_normalize_rows, SeededRng, NORM_EPS};
use magalign::topology::{build_candidates, save_candidates, CandidateGraphs};
use magalign::training::{multi_seed_run, save_checkpoint, train, MultiSeedReport};
use serde::Serialize;
use std::path::Path;
use std::time::Instant;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub enum CliError {
    /// Exit code 2.
    Config(Vec<String>),
    /// Exit code 3.
    Runtime(String),
}

impl From<magalign::Error> for CliError {
    fn from(e: magalign::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub nodes: usize,
    pub structural_edges: usize,
    pub candidate_edges: usize,
    pub train_nodes: usize,
    pub val_nodes: usize,
    pub test_nodes: usize,
}

#[derive(Debug, Serialize)]
pub struct ResultsJson {
    pub schema_version: u32,
    pub protocol: String,
    pub config: RunConfig,
    pub dataset: DatasetSummary,
    pub best_epoch: usize,
    pub val_metric: f64,
    pub aborted: Option<String>,
    /// Retrieval on the normalized frozen features (absent when the two
    /// modality dimensions differ).
    pub raw_test: Option<RetrievalReport>,
    pub test: RetrievalReport,
}

pub fn prepare_dataset(cfg: &RunConfig) -> CliResult<MagDataset> {
    let split = cfg.split.to_core();
    let mut ds = match cfg.dataset.source {
        DatasetSource::Synthetic => generate_synthetic(&cfg.dataset.synth_config(), &split)?,
        DatasetSource::Files => {
            let paths = DatasetPaths {
                features_v: cfg.dataset.features_v.clone().expect("validated"),
                features_t: cfg.dataset.features_t.clone().expect("validated"),
                edges: cfg.dataset.edges.clone().expect("validated"),
                categories: cfg.dataset.categories.clone(),
            };
            load_dataset(&paths, &split)?
        }
    };
    if let Some(mode) = cfg.control.randomize_edges {
        let mut rng = SeededRng::with_tag(cfg.control.randomize_seed, "randomize");
        ds = randomize_edges(&ds, mode, &mut rng)?;
    }
    Ok(ds)
}

pub fn build_graphs(cfg: &RunConfig, ds: &MagDataset) -> CliResult<CandidateGraphs> {
    let (feats_v, feats_t);
    if cfg.candidates.knn_on_adapted {
        let dims = ModelDims {
            feat_v: ds.features_v.cols(),
            feat_t: ds.features_t.cols(),
            embed: cfg.model.embed_dim,
            scorer_hidden: cfg.model.scorer_hidden,
            attention_width: cfg.readout.attention_width,
        };
        let params = ModelParams::init(&dims, &mut SeededRng::with_tag(cfg.train.seed, "init"));
        feats_v = adapter_forward(&ds.features_v, &params.adapter_v)?.0;
        feats_t = adapter_forward(&ds.features_t, &params.adapter_t)?.0;
    } else {
        feats_v = ds.features_v.clone();
        feats_t = ds.features_t.clone();
    }
    let mut graphs = build_candidates(
        ds,
        &feats_v,
        &feats_t,
        cfg.candidates.k_intra,
        cfg.candidates.k_cross,
        cfg.candidates.mode,
    )?;
    if cfg.control.only_self_pair_edges {
        graphs = graphs.with_self_pairs_only();
    } else if cfg.control.allow_self_pair_edges {
        graphs = graphs.with_self_pairs_added();
    }
    Ok(graphs)
}

fn summarize(ds: &MagDataset, graphs: &CandidateGraphs) -> DatasetSummary {
    DatasetSummary {
        nodes: ds.node_count(),
        structural_edges: ds.edges.len(),
        candidate_edges: graphs.total_edges(),
        train_nodes: ds.nodes_in(Split::Train).len(),
        val_nodes: ds.nodes_in(Split::Val).len(),
        test_nodes: ds.nodes_in(Split::Test).len(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serialize {}: {}", path.display(), e)))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn log_resource_usage(label: &str, started: Instant) {
    let peak_kb = std::fs::read_to_string("/proc/self/status")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("VmHWM:"))
                .and_then(|l| l.split_whitespace().nth(1).map(str::to_string))
        })
        .and_then(|v| v.parse::<u64>().ok())
        .unwrap_or(0);
    log::info!(
        "{}: wall-clock {:.2}s, peak RSS {} MB",
        label,
        started.elapsed().as_secs_f64(),
        peak_kb / 1024
    );
}

/// Full experiment: dataset -> candidates (with controls) -> training ->
/// test retrieval report. Writes `results.json`, `epochs.jsonl`, and
/// `resolved_config.toml` under `out_dir`.
pub fn run_experiment(cfg: &RunConfig, out_dir: &Path) -> CliResult<ResultsJson> {
    let started = Instant::now();
    std::fs::create_dir_all(out_dir)?;
    let ds = prepare_dataset(cfg)?;
    let graphs = build_graphs(cfg, &ds)?;
    let pipeline = cfg.pipeline();
    let weights = cfg.loss.to_core();
    let tcfg = cfg.train.to_core();

    let outcome = train(&ds, &graphs, &pipeline, &weights, &tcfg)?;

    let mut lines = String::new();
    for record in &outcome.epochs {
        lines.push_str(&serde_json::to_string(record).expect("epoch record serializes"));
        lines.push('\n');
    }
    std::fs::write(out_dir.join("epochs.jsonl"), lines)?;

    let test_nodes = ds.nodes_in(Split::Test);
    let gallery: Vec<usize> = if cfg.eval.full_gallery {
        (0..ds.node_count()).collect()
    } else {
        test_nodes.clone()
    };
    let out = forward_embeddings(
        &outcome.best.params,
        &ds.features_v,
        &ds.features_t,
        &graphs,
        &pipeline,
    )?;
    let test = retrieval_metrics(&out.z_v, &out.z_t, &test_nodes, &gallery)?;
    let raw_test = if ds.features_v.cols() == ds.features_t.cols() {
        let nv = l2_normalize_rows(&ds.features_v, NORM_EPS);
        let nt = l2_normalize_rows(&ds.features_t, NORM_EPS);
        Some(retrieval_metrics(&nv, &nt, &test_nodes, &gallery)?)
    } else {
        None
    };

    if cfg.output.export_candidates {
        save_candidates(&graphs, cfg.dataset.seed, &out_dir.join("candidates.txt"))?;
    }
    if cfg.output.save_checkpoint {
        save_checkpoint(&outcome.best, &out_dir.join("checkpoint"))?;
    }
    if cfg.output.dump_trajectory || cfg.output.export_attention_depths {
        let e_v = adapter_forward(&ds.features_v, &outcome.best.params.adapter_v)?.0;
        let e_t = adapter_forward(&ds.features_t, &outcome.best.params.adapter_t)?.0;
        let traj = coupled_smooth(&out.operators, &e_v, &e_t, &pipeline.smoothing)?;
        if cfg.output.dump_trajectory {
            let dir = out_dir.join("trajectory");
            std::fs::create_dir_all(&dir)?;
            for (k, state) in traj.states_v.iter().enumerate() {
                write_feature_file(state, &dir.join(format!("h_v_{:02}.magf", k)))?;
            }
            for (k, state) in traj.states_t.iter().enumerate() {
                write_feature_file(state, &dir.join(format!("h_t_{:02}.magf", k)))?;
            }
        }
        if cfg.output.export_attention_depths && !pipeline.options.adapter_only {
            let (omega_v, omega_t) = attention_weights(
                &traj,
                &outcome.best.params.readout_v,
                &outcome.best.params.readout_t,
                &pipeline.readout,
            )?;
            let dv = selected_depths(&omega_v);
            let dt = selected_depths(&omega_t);
            let mut csv = String::from("node,selected_depth_v,selected_depth_t\n");
            for (i, (a, b)) in dv.iter().zip(&dt).enumerate() {
                csv.push_str(&format!("{},{},{}\n", i, a, b));
            }
            std::fs::write(out_dir.join("attention_depths.csv"), csv)?;
        }
    }

    let results = ResultsJson {
        schema_version: SCHEMA_VERSION,
        protocol: cfg.protocol_label().to_string(),
        config: cfg.clone(),
        dataset: summarize(&ds, &graphs),
        best_epoch: outcome.best.epoch,
        val_metric: outcome.best.val_metric,
        aborted: outcome.aborted.clone(),
        raw_test,
        test,
    };
    write_json(&out_dir.join("results.json"), &results)?;
    std::fs::write(
        out_dir.join("resolved_config.toml"),
        cfg.to_toml_string(),
    )?;
    log_resource_usage("run", started);
    Ok(results)
}

#[derive(Debug, Serialize)]
pub struct PuritySection {
    pub k: usize,
    pub structural: f64,
    pub knn_v: f64,
    pub knn_t: f64,
}

#[derive(Debug, Serialize)]
pub struct OverlapSummary {
    pub k: usize,
    pub mean: f64,
    pub median: f64,
}

#[derive(Debug, Serialize)]
pub struct DiagnosticsJson {
    pub schema_version: u32,
    pub config: RunConfig,
    pub notices: Vec<String>,
    pub knn_overlap: Option<OverlapSummary>,
    pub purity: Option<PuritySection>,
    pub depth_sweep: Option<Vec<DepthSweepEntry>>,
    pub hard_query: Option<HardQueryReport>,
}

/// Diagnostic suite: V/T kNN overlap, neighbor purity from three sources,
/// the fixed-depth structural smoothing sweep, and hard-query support.
pub fn run_diagnostics(cfg: &RunConfig, out_dir: &Path) -> CliResult<DiagnosticsJson> {
    let started = Instant::now();
    std::fs::create_dir_all(out_dir)?;
    let ds = prepare_dataset(cfg)?;
    let mut notices = Vec::new();

    let k = cfg.diagnostics.knn_k;
    let overlap = match knn_overlap(&ds.features_v, &ds.features_t, k) {
        Ok(report) => {
            let mut csv = String::from("node,overlap\n");
            for (i, v) in report.per_node.iter().enumerate() {
                csv.push_str(&format!("{},{}\n", i, v));
            }
            std::fs::write(out_dir.join("overlap.csv"), csv)?;
            Some(OverlapSummary {
                k: report.k,
                mean: report.mean,
                median: report.median,
            })
        }
        Err(e) => {
            notices.push(format!("knn_overlap unavailable: {}", e));
            None
        }
    };

    let purity = if ds.categories.is_some() {
        Some(PuritySection {
            k,
            structural: neighbor_purity(&ds, NeighborhoodSource::Structural, k)?,
            knn_v: neighbor_purity(&ds, NeighborhoodSource::KnnV, k)?,
            knn_t: neighbor_purity(&ds, NeighborhoodSource::KnnT, k)?,
        })
    } else {
        notices.push("purity unavailable: dataset has no category ids".to_string());
        None
    };

    let depths: Vec<usize> = (0..=cfg.diagnostics.max_depth).collect();
    let sweep = match depth_sweep(&ds, &depths) {
        Ok(report) => {
            std::fs::write(out_dir.join("depth_sweep.csv"), report.to_csv())?;
            let mut full = String::from("depth,mean_rank,separation\n");
            for e in &report.entries {
                full.push_str(&format!(
                    "{},{},{}\n",
                    e.depth,
                    e.mean_rank,
                    e.separation.map_or(String::new(), |s| s.to_string())
                ));
            }
            std::fs::write(out_dir.join("depth_sweep_full.csv"), full)?;
            Some(report.entries)
        }
        Err(e) => {
            notices.push(format!("depth_sweep unavailable: {}", e));
            None
        }
    };

    let hard_query = match hard_query_support(
        &ds,
        cfg.diagnostics.hard_query_low,
        cfg.diagnostics.hard_query_high,
    ) {
        Ok(r) => Some(r),
        Err(e) => {
            notices.push(format!("hard_query_support unavailable: {}", e));
            None
        }
    };

    let report = DiagnosticsJson {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        notices,
        knn_overlap: overlap,
        purity,
        depth_sweep: sweep,
        hard_query,
    };
    write_json(&out_dir.join("diagnostics.json"), &report)?;
    std::fs::write(out_dir.join("resolved_config.toml"), cfg.to_toml_string())?;
    log_resource_usage("diagnose", started);
    Ok(report)
}

/// Theorem oracle battery at configured sizes; prints one pass/fail line per
/// property.
pub fn run_oracles(cfg: &RunConfig, out_dir: &Path, quiet: bool) -> CliResult<OracleReport> {
    let started = Instant::now();
    std::fs::create_dir_all(out_dir)?;
    if 2 * cfg.oracles.nodes > magalign::smoothing::DENSE_SOLVE_GUARD {
        return Err(CliError::Runtime(format!(
            "oracle size {} exceeds the dense-solve guard {}",
            2 * cfg.oracles.nodes,
            magalign::smoothing::DENSE_SOLVE_GUARD
        )));
    }
    let report = run_oracle_battery(
        cfg.oracles.nodes,
        cfg.oracles.dim,
        &cfg.oracles.alphas,
        &cfg.oracles.betas,
        cfg.oracles.gap_trials,
        cfg.oracles.seed,
    )?;
    if !quiet {
        for t in &report.resolvent {
            println!(
                "resolvent alpha={:.2}: residual {:.3e} within {} steps, fitted rate {:.4} vs {:.4} -> {}",
                t.alpha,
                t.final_residual,
                t.steps,
                t.fitted_rate,
                t.target_rate,
                if t.pass { "pass" } else { "FAIL" }
            );
        }
        for t in &report.collapse {
            println!(
                "collapse seed={}: variance ratio {:.3e} after {} steps -> {}",
                t.seed,
                t.ratio,
                t.steps,
                if t.pass { "pass" } else { "FAIL" }
            );
        }
        let gap_pass = report.gap_contraction.iter().filter(|t| t.pass).count();
        println!(
            "gap contraction: {}/{} trials monotone and strictly decreasing -> {}",
            gap_pass,
            report.gap_contraction.len(),
            if gap_pass == report.gap_contraction.len() {
                "pass"
            } else {
                "FAIL"
            }
        );
    }
    write_json(&out_dir.join("oracles.json"), &report)?;
    std::fs::write(out_dir.join("resolved_config.toml"), cfg.to_toml_string())?;
    log_resource_usage("oracles", started);
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct SweepEntry {
    pub value: String,
    pub best_epoch: usize,
    pub val_metric: f64,
    pub test: RetrievalReport,
}

#[derive(Debug, Serialize)]
pub struct SweepJson {
    pub schema_version: u32,
    pub key: String,
    pub entries: Vec<SweepEntry>,
}

/// Reruns the experiment for each value of a dotted config key.
pub fn run_sweep(
    base_config: Option<&Path>,
    overrides: &[String],
    seed_override: Option<u64>,
    key: &str,
    values: &[String],
    out_dir: &Path,
) -> CliResult<SweepJson> {
    std::fs::create_dir_all(out_dir)?;
    let mut entries = Vec::new();
    for (i, value) in values.iter().enumerate() {
        let mut all = overrides.to_vec();
        all.push(format!("{}={}", key, value));
        let cfg = crate::config::load_config(base_config, &all, seed_override)
            .map_err(CliError::Config)?;
        let sub = out_dir.join(format!("{:02}_{}", i, sanitize(value)));
        let results = run_experiment(&cfg, &sub)?;
        entries.push(SweepEntry {
            value: value.clone(),
            best_epoch: results.best_epoch,
            val_metric: results.val_metric,
            test: results.test,
        });
    }
    let mut csv = String::from("value,r_at_1,r_at_5,r_at_10,mrr,mean_rank\n");
    for e in &entries {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.value,
            e.test.averaged.r_at_1,
            e.test.averaged.r_at_5,
            e.test.averaged.r_at_10,
            e.test.averaged.mrr,
            e.test.averaged.mean_rank
        ));
    }
    std::fs::write(out_dir.join("sweep.csv"), csv)?;
    let report = SweepJson {
        schema_version: SCHEMA_VERSION,
        key: key.to_string(),
        entries,
    };
    write_json(&out_dir.join("sweep.json"), &report)?;
    Ok(report)
}

fn sanitize(value: &str) -> String {
    value
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct MultiSeedJson {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    pub report: MultiSeedReport,
}

/// Independent training runs per seed plus mean / (n-1) stddev aggregation.
pub fn run_multiseed(
    base_config: Option<&Path>,
    overrides: &[String],
    seeds: &[u64],
    out_dir: &Path,
) -> CliResult<MultiSeedJson> {
    if seeds.is_empty() {
        return Err(CliError::Config(vec![
            "multiseed: at least one seed required".to_string(),
        ]));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut failure: Option<CliError> = None;
    let report = multi_seed_run(seeds, |seed| {
        let cfg = match crate::config::load_config(base_config, overrides, Some(seed)) {
            Ok(c) => c,
            Err(errors) => {
                failure = Some(CliError::Config(errors.clone()));
                return Err(magalign::Error::InvalidParameter {
                    what: "config",
                    detail: errors.join("; "),
                });
            }
        };
        let sub = out_dir.join(format!("seed_{}", seed));
        match run_experiment(&cfg, &sub) {
            Ok(results) => Ok(results.test),
            Err(CliError::Runtime(msg)) => Err(magalign::Error::InvalidParameter {
                what: "run",
                detail: msg,
            }),
            Err(CliError::Config(errors)) => Err(magalign::Error::InvalidParameter {
                what: "config",
                detail: errors.join("; "),
            }),
        }
    });
    if let Some(err) = failure {
        return Err(err);
    }
    let json = MultiSeedJson {
        schema_version: SCHEMA_VERSION,
        seeds: seeds.to_vec(),
        report,
    };
    write_json(&out_dir.join("multiseed.json"), &json)?;
    Ok(json)
}
