//! Temporary calibration probe (removed before release).

use magalign::data::{generate_synthetic, Split, SplitConfig, SynthConfig};
use magalign::evaluation::retrieval_metrics;
use magalign::objective::{forward_embeddings, LossWeights, PipelineConfig, PipelineOptions};
use magalign::readout::ReadoutConfig;
use magalign::smoothing::SmoothingConfig;
use magalign::topology::{build_candidates, CandidateMode};
use magalign::training::{train, TrainConfig};

fn standard_dataset() -> magalign::data::MagDataset {
    let cfg = SynthConfig::default(); // N=500 C=8 d=32 sigma=0.8 theta=pi/4 seed 43
    generate_synthetic(&cfg, &SplitConfig::default()).unwrap()
}

fn pipeline(options: PipelineOptions, coupling: f64, restart: f64) -> PipelineConfig {
    PipelineConfig {
        embed_dim: 32,
        scorer_hidden: 32,
        smoothing: SmoothingConfig {
            depth: 3,
            coupling,
            restart,
            normalize_each_step: true,
        },
        readout: ReadoutConfig {
            residual: 0.7,
            attention_width: 16,
        },
        options,
    }
}

#[test]
#[ignore]
fn probe_geometry() {
    let ds = standard_dataset();
    let graphs = build_candidates(
        &ds,
        &ds.features_v,
        &ds.features_t,
        10,
        10,
        CandidateMode::Hybrid,
    )
    .unwrap();
    // Adapters only, trained by warmup.
    let pcfg0 = pipeline(
        PipelineOptions {
            adapter_only: true,
            ..Default::default()
        },
        0.3,
        0.3,
    );
    let tcfg = TrainConfig {
        epochs: 20,
        warmup_epochs: 20,
        learning_rate: 2e-3,
        seed: 43,
        ..TrainConfig::default()
    };
    let outcome = train(&ds, &graphs, &pcfg0, &LossWeights::default(), &tcfg).unwrap();
    let params = outcome.best.params.clone();
    let test_nodes = ds.nodes_in(Split::Test);
    for depth in [8usize, 12, 16, 24, 32] {
        for coupling in [0.45] {
            for restart in [0.0, 0.05, 0.1, 0.2] {
                for rho in [1.0] {
                    let mut cfg = pipeline(
                        PipelineOptions {
                            uniform_operators: true,
                            uniform_readout: true,
                            ..Default::default()
                        },
                        coupling,
                        restart,
                    );
                    cfg.smoothing.depth = depth;
                    cfg.readout.residual = rho;
                    let out = forward_embeddings(
                        &params,
                        &ds.features_v,
                        &ds.features_t,
                        &graphs,
                        &cfg,
                    )
                    .unwrap();
                    let report =
                        retrieval_metrics(&out.z_v, &out.z_t, &test_nodes, &test_nodes).unwrap();
                    eprintln!(
                        "K={} beta={:.2} alpha={:.2} rho={:.1} | R@1={:>6.2} R@10={:>6.2} MeanR={:>6.2}",
                        depth, coupling, restart, rho,
                        report.averaged.r_at_1,
                        report.averaged.r_at_10,
                        report.averaged.mean_rank,
                    );
                }
            }
        }
    }
}

#[test]
#[ignore]
fn probe_restart_tradeoff() {
    for p_out in [0.01, 0.02] {
        for depth in [10usize, 16] {
            for restart in [0.0, 0.1] {
                let cfg = SynthConfig {
                    p_out,
                    ..SynthConfig::default()
                };
                let ds = generate_synthetic(&cfg, &SplitConfig::default()).unwrap();
                let graphs = build_candidates(
                    &ds,
                    &ds.features_v,
                    &ds.features_t,
                    10,
                    10,
                    CandidateMode::Hybrid,
                )
                .unwrap();
                let mut pcfg = pipeline(PipelineOptions::default(), 0.45, restart);
                pcfg.smoothing.depth = depth;
                pcfg.readout.residual = 1.0;
                let tcfg = TrainConfig {
                    epochs: 40,
                    warmup_epochs: 5,
                    learning_rate: 2e-3,
                    patience: 40,
                    seed: 43,
                    ..TrainConfig::default()
                };
                let t0 = std::time::Instant::now();
                let outcome = train(&ds, &graphs, &pcfg, &LossWeights::default(), &tcfg).unwrap();
                let test_nodes = ds.nodes_in(Split::Test);
                let out = forward_embeddings(
                    &outcome.best.params,
                    &ds.features_v,
                    &ds.features_t,
                    &graphs,
                    &pcfg,
                )
                .unwrap();
                let report =
                    retrieval_metrics(&out.z_v, &out.z_t, &test_nodes, &test_nodes).unwrap();
                eprintln!(
                    "p_out={:.3} K={:>2} alpha={:.2} | best_ep={:>2} val={:.2} test R@1={:.2} R@10={:.2} MeanR={:.2} | {:.0}s",
                    p_out, depth, restart,
                    outcome.best.epoch,
                    outcome.best.val_metric,
                    report.averaged.r_at_1,
                    report.averaged.r_at_10,
                    report.averaged.mean_rank,
                    t0.elapsed().as_secs_f64()
                );
            }
        }
    }
}

#[test]
#[ignore]
fn probe_grid2() {
    for k_cross in [10usize, 5, 3] {
        for rho in [0.7, 1.0] {
            for (batch, epochs, lr) in [(512usize, 150usize, 3e-3), (64, 60, 2e-3)] {
                let cfg = SynthConfig::default();
                let ds = generate_synthetic(&cfg, &SplitConfig::default()).unwrap();
                let graphs = build_candidates(
                    &ds,
                    &ds.features_v,
                    &ds.features_t,
                    10,
                    k_cross,
                    CandidateMode::Hybrid,
                )
                .unwrap();
                let mut pcfg = pipeline(PipelineOptions::default(), 0.45, 0.25);
                pcfg.readout.residual = rho;
                let weights = LossWeights::default();
                let tcfg = TrainConfig {
                    epochs,
                    warmup_epochs: 5,
                    learning_rate: lr,
                    batch_size: batch,
                    patience: 40,
                    seed: 43,
                    ..TrainConfig::default()
                };
                let t0 = std::time::Instant::now();
                let outcome = train(&ds, &graphs, &pcfg, &weights, &tcfg).unwrap();
                let test_nodes = ds.nodes_in(Split::Test);
                let out = forward_embeddings(
                    &outcome.best.params,
                    &ds.features_v,
                    &ds.features_t,
                    &graphs,
                    &pcfg,
                )
                .unwrap();
                let report =
                    retrieval_metrics(&out.z_v, &out.z_t, &test_nodes, &test_nodes).unwrap();
                eprintln!(
                    "k_cross={:>2} rho={:.1} B={:>3} ep={:>3} lr={} | best_ep={:>3} val={:.2} test R@1={:.2} R@10={:.2} MeanR={:.2} | {:.0}s",
                    k_cross, rho, batch, epochs, lr,
                    outcome.best.epoch,
                    outcome.best.val_metric,
                    report.averaged.r_at_1,
                    report.averaged.r_at_10,
                    report.averaged.mean_rank,
                    t0.elapsed().as_secs_f64()
                );
            }
        }
    }
}

#[test]
#[ignore]
fn probe_grid() {
    for (p_in, p_out) in [(0.05, 0.005), (0.1, 0.01)] {
        for depth in [3usize, 6] {
            for coupling in [0.3, 0.45] {
                for lr in [2e-3] {
                    let cfg = SynthConfig {
                        p_in,
                        p_out,
                        ..SynthConfig::default()
                    };
                    let ds = generate_synthetic(&cfg, &SplitConfig::default()).unwrap();
                    let graphs = build_candidates(
                        &ds,
                        &ds.features_v,
                        &ds.features_t,
                        10,
                        10,
                        CandidateMode::Hybrid,
                    )
                    .unwrap();
                    let pcfg = pipeline(PipelineOptions::default(), coupling, 0.25);
                    let mut pcfg = pcfg;
                    pcfg.smoothing.depth = depth;
                    let weights = LossWeights::default();
                    let tcfg = TrainConfig {
                        epochs: 60,
                        warmup_epochs: 5,
                        learning_rate: lr,
                        seed: 43,
                        ..TrainConfig::default()
                    };
                    let t0 = std::time::Instant::now();
                    let outcome = train(&ds, &graphs, &pcfg, &weights, &tcfg).unwrap();
                    let test_nodes = ds.nodes_in(Split::Test);
                    let out = forward_embeddings(
                        &outcome.best.params,
                        &ds.features_v,
                        &ds.features_t,
                        &graphs,
                        &pcfg,
                    )
                    .unwrap();
                    let report =
                        retrieval_metrics(&out.z_v, &out.z_t, &test_nodes, &test_nodes).unwrap();
                    eprintln!(
                        "p_in={:.2} K={} beta={:.2} lr={} | best_ep={:>2} val={:.2} test R@1={:.2} R@10={:.2} MeanR={:.2} | {:.1}s",
                        p_in, depth, coupling, lr,
                        outcome.best.epoch,
                        outcome.best.val_metric,
                        report.averaged.r_at_1,
                        report.averaged.r_at_10,
                        report.averaged.mean_rank,
                        t0.elapsed().as_secs_f64()
                    );
                }
            }
        }
    }
}

#[test]
#[ignore]
fn probe_correlated_variants() {
    use magalign::tensor::{l2_normalize_rows, NORM_EPS};
    for corr in [0.25, 0.35, 0.5] {
        for (depth, restart) in [(8usize, 0.1), (8, 0.2), (12, 0.1)] {
            let scfg = SynthConfig {
                noise_correlation: corr,
                ..SynthConfig::default()
            };
            let ds = generate_synthetic(&scfg, &SplitConfig::default()).unwrap();
            let graphs = build_candidates(
                &ds,
                &ds.features_v,
                &ds.features_t,
                10,
                10,
                CandidateMode::Hybrid,
            )
            .unwrap();
            let test_nodes = ds.nodes_in(Split::Test);
            // Raw baseline.
            let nv = l2_normalize_rows(&ds.features_v, NORM_EPS);
            let nt = l2_normalize_rows(&ds.features_t, NORM_EPS);
            let raw = retrieval_metrics(&nv, &nt, &test_nodes, &test_nodes).unwrap();
            eprintln!(
                "--- corr={:.2} K={} alpha={:.2}: raw R@1={:.2} R@10={:.2}",
                corr, depth, restart, raw.averaged.r_at_1, raw.averaged.r_at_10
            );
            let mk = |options: PipelineOptions, coupling: f64, alpha: f64| {
                let mut p = pipeline(options, coupling, alpha);
                p.smoothing.depth = depth;
                p
            };
            let variants: Vec<(&str, PipelineConfig)> = vec![
                ("full", mk(PipelineOptions::default(), 0.45, restart)),
                (
                    "adapter_only",
                    mk(
                        PipelineOptions {
                            adapter_only: true,
                            ..Default::default()
                        },
                        0.45,
                        restart,
                    ),
                ),
                ("beta0", mk(PipelineOptions::default(), 0.0, restart)),
                (
                    "uniform_omega",
                    mk(
                        PipelineOptions {
                            uniform_readout: true,
                            ..Default::default()
                        },
                        0.45,
                        restart,
                    ),
                ),
                (
                    "uniform_ops",
                    mk(
                        PipelineOptions {
                            uniform_operators: true,
                            ..Default::default()
                        },
                        0.45,
                        restart,
                    ),
                ),
                ("alpha0", mk(PipelineOptions::default(), 0.45, 0.0)),
            ];
            let tcfg = TrainConfig {
                epochs: 40,
                warmup_epochs: 5,
                learning_rate: 2e-3,
                patience: 40,
                seed: 43,
                ..TrainConfig::default()
            };
            for (name, cfg) in &variants {
                let outcome = train(&ds, &graphs, cfg, &LossWeights::default(), &tcfg).unwrap();
                let out = forward_embeddings(
                    &outcome.best.params,
                    &ds.features_v,
                    &ds.features_t,
                    &graphs,
                    cfg,
                )
                .unwrap();
                let report =
                    retrieval_metrics(&out.z_v, &out.z_t, &test_nodes, &test_nodes).unwrap();
                eprintln!(
                    "{:>14}: best_ep={:>2} val={:.2} | test R@1={:.2} R@10={:.2} MeanR={:.2}",
                    name,
                    outcome.best.epoch,
                    outcome.best.val_metric,
                    report.averaged.r_at_1,
                    report.averaged.r_at_10,
                    report.averaged.mean_rank,
                );
            }
        }
    }
}

#[test]
#[ignore]
fn probe_variants() {
    let ds = standard_dataset();
    let graphs = build_candidates(
        &ds,
        &ds.features_v,
        &ds.features_t,
        10,
        10,
        CandidateMode::Hybrid,
    )
    .unwrap();
    eprintln!(
        "edges: structural={} total_candidates={}",
        ds.edges.len(),
        graphs.total_edges()
    );
    let weights = LossWeights::default();
    let tcfg = TrainConfig {
        epochs: 30,
        warmup_epochs: 5,
        seed: 43,
        ..TrainConfig::default()
    };

    let variants: Vec<(&str, PipelineConfig)> = vec![
        ("full", pipeline(PipelineOptions::default(), 0.3, 0.3)),
        (
            "adapter_only",
            pipeline(
                PipelineOptions {
                    adapter_only: true,
                    ..Default::default()
                },
                0.3,
                0.3,
            ),
        ),
        ("beta0", pipeline(PipelineOptions::default(), 0.0, 0.3)),
        (
            "uniform_omega",
            pipeline(
                PipelineOptions {
                    uniform_readout: true,
                    ..Default::default()
                },
                0.3,
                0.3,
            ),
        ),
        (
            "uniform_ops",
            pipeline(
                PipelineOptions {
                    uniform_operators: true,
                    ..Default::default()
                },
                0.3,
                0.3,
            ),
        ),
        ("alpha0", pipeline(PipelineOptions::default(), 0.3, 0.0)),
    ];

    let test_nodes = ds.nodes_in(Split::Test);
    for (name, cfg) in &variants {
        let t0 = std::time::Instant::now();
        let outcome = train(&ds, &graphs, cfg, &weights, &tcfg).unwrap();
        let out = forward_embeddings(
            &outcome.best.params,
            &ds.features_v,
            &ds.features_t,
            &graphs,
            cfg,
        )
        .unwrap();
        let report = retrieval_metrics(&out.z_v, &out.z_t, &test_nodes, &test_nodes).unwrap();
        eprintln!(
            "{:>14}: best_epoch={:>2} val={:.2} | test R@1={:.2} R@10={:.2} MRR={:.2} MeanR={:.2} | {:.1}s",
            name,
            outcome.best.epoch,
            outcome.best.val_metric,
            report.averaged.r_at_1,
            report.averaged.r_at_10,
            report.averaged.mrr,
            report.averaged.mean_rank,
            t0.elapsed().as_secs_f64()
        );
    }
}
