//! Finite-difference validation of the full objective's analytic gradients
//! across pipeline variants.

use magalign::data::{generate_synthetic, Split, SplitConfig, SynthConfig};
use magalign::model::{ModelDims, ModelParams};
use magalign::objective::{
    finite_difference_check, total_loss_and_grad, LossWeights, PipelineConfig, PipelineOptions,
};
use magalign::readout::ReadoutConfig;
use magalign::smoothing::SmoothingConfig;
use magalign::tensor::SeededRng;
use magalign::topology::{build_candidates, CandidateGraphs, CandidateMode};

struct Instance {
    ds: magalign::data::MagDataset,
    graphs: CandidateGraphs,
    params: ModelParams,
    batch: Vec<usize>,
    gallery: Vec<usize>,
}

fn instance(seed: u64, embed: usize, hidden: usize, d_a: usize) -> Instance {
    let cfg = SynthConfig {
        nodes: 12,
        classes: 3,
        feature_dim: 6,
        p_in: 0.4,
        p_out: 0.08,
        sigma_v: 0.6,
        sigma_t: 0.6,
        mismatch_angle: 0.5,
        noise_correlation: 0.4,
        edge_affinity: 1.5,
        seed,
    };
    let ds = generate_synthetic(&cfg, &SplitConfig::default()).unwrap();
    let graphs = build_candidates(
        &ds,
        &ds.features_v,
        &ds.features_t,
        2,
        2,
        CandidateMode::Hybrid,
    )
    .unwrap();
    let dims = ModelDims {
        feat_v: 6,
        feat_t: 6,
        embed,
        scorer_hidden: hidden,
        attention_width: d_a,
    };
    let mut params = ModelParams::init(&dims, &mut SeededRng::with_tag(seed, "init"));
    // The zero-initialized output layers are a degenerate point (whole tensors
    // with exactly zero gradient); jitter everything so the check is strict.
    let mut jitter = SeededRng::with_tag(seed, "jitter");
    for (_, tensor) in params.tensors_mut() {
        for v in tensor {
            *v += 0.05 * jitter.next_gaussian();
        }
    }
    let gallery = ds.nodes_in(Split::Train);
    let batch = gallery[..gallery.len().min(5)].to_vec();
    Instance {
        ds,
        graphs,
        params,
        batch,
        gallery,
    }
}

fn pipeline(depth: usize, coupling: f64, restart: f64, options: PipelineOptions) -> PipelineConfig {
    PipelineConfig {
        embed_dim: 5,
        scorer_hidden: 3,
        smoothing: SmoothingConfig {
            depth,
            coupling,
            restart,
            normalize_each_step: true,
        },
        readout: ReadoutConfig {
            residual: 0.6,
            attention_width: 3,
        },
        options,
    }
}

fn weights() -> LossWeights {
    LossWeights {
        lambda_cde: 0.15,
        lambda_topo: 0.1,
        lambda_direct: 0.3,
        gamma: 0.9,
        temperature: 0.2,
        negatives_per_positive: 2,
        max_topo_positives: 1 << 20,
    }
}

fn run_check(seed: u64, cfg: &PipelineConfig, w: &LossWeights) {
    let inst = instance(seed, cfg.embed_dim, cfg.scorer_hidden, cfg.readout.attention_width);
    let report = finite_difference_check(
        &inst.params,
        &inst.ds.features_v,
        &inst.ds.features_t,
        &inst.graphs,
        cfg,
        w,
        &inst.batch,
        &inst.gallery,
        seed ^ 0xABCD,
        1e-5,
        1e-4,
        1e-8,
    )
    .unwrap();
    assert!(
        report.pass,
        "seed {}: {} violations, worst {}[{}] rel {}",
        seed, report.violations, report.worst_tensor, report.worst_index, report.max_rel_error
    );
}

#[test]
fn full_pipeline_gradients_three_instances() {
    for (seed, depth) in [(101u64, 1usize), (202, 2), (303, 3)] {
        let cfg = pipeline(depth, 0.35, 0.25, PipelineOptions::default());
        run_check(seed, &cfg, &weights());
    }
}

#[test]
fn gradients_without_per_step_normalization() {
    let mut cfg = pipeline(2, 0.3, 0.3, PipelineOptions::default());
    cfg.smoothing.normalize_each_step = false;
    run_check(404, &cfg, &weights());
}

#[test]
fn gradients_with_uniform_readout() {
    let cfg = pipeline(
        2,
        0.3,
        0.2,
        PipelineOptions {
            uniform_readout: true,
            ..Default::default()
        },
    );
    run_check(505, &cfg, &weights());
}

#[test]
fn gradients_with_uniform_operators() {
    let cfg = pipeline(
        2,
        0.3,
        0.2,
        PipelineOptions {
            uniform_operators: true,
            ..Default::default()
        },
    );
    run_check(606, &cfg, &weights());
}

#[test]
fn gradients_adapter_only() {
    let cfg = pipeline(
        2,
        0.3,
        0.2,
        PipelineOptions {
            adapter_only: true,
            ..Default::default()
        },
    );
    run_check(707, &cfg, &weights());
}

#[test]
fn gradients_without_restart_or_coupling() {
    let cfg = pipeline(2, 0.0, 0.0, PipelineOptions::default());
    run_check(808, &cfg, &weights());
}

#[test]
fn beta_zero_kills_cross_scorer_gradients_from_smoothing() {
    // With coupling 0 and the regularizers off, cross-modal scorer parameters
    // receive exactly zero gradient.
    let inst = instance(909, 5, 3, 3);
    let cfg = pipeline(3, 0.0, 0.3, PipelineOptions::default());
    let w = LossWeights {
        lambda_cde: 0.0,
        lambda_topo: 0.0,
        ..weights()
    };
    let (_, grads) = total_loss_and_grad(
        &inst.params,
        &inst.ds.features_v,
        &inst.ds.features_t,
        &inst.graphs,
        &cfg,
        &w,
        &inst.batch,
        &inst.gallery,
        1,
    )
    .unwrap();
    for ch in [2usize, 3] {
        assert!(grads.scorers[ch].weight.data().iter().all(|&v| v == 0.0));
        assert!(grads.scorers[ch].bias.iter().all(|&v| v == 0.0));
        assert!(grads.scorers[ch].proj.iter().all(|&v| v == 0.0));
    }
    // Intra scorers still learn through the smoothing path.
    assert!(grads.scorers[0]
        .weight
        .data()
        .iter()
        .any(|&v| v.abs() > 1e-12));
}

#[test]
fn loss_is_permutation_invariant() {
    // Common permutation of node indices applied to every input leaves the
    // loss unchanged (topology contrast off: its negative sampling is not
    // permutation-equivariant).
    let inst = instance(111, 5, 3, 3);
    let cfg = pipeline(2, 0.3, 0.25, PipelineOptions::default());
    let w = LossWeights {
        lambda_topo: 0.0,
        ..weights()
    };
    let (base, _) = total_loss_and_grad(
        &inst.params,
        &inst.ds.features_v,
        &inst.ds.features_t,
        &inst.graphs,
        &cfg,
        &w,
        &inst.batch,
        &inst.gallery,
        7,
    )
    .unwrap();

    let n = inst.ds.node_count();
    let mut perm: Vec<usize> = (0..n).collect();
    SeededRng::new(5).shuffle(&mut perm);
    // perm[new] = old
    let mut inv = vec![0usize; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let permute_matrix = |m: &magalign::tensor::DenseMatrix| {
        let mut out = magalign::tensor::DenseMatrix::zeros(m.rows(), m.cols());
        for new in 0..n {
            out.row_mut(new).copy_from_slice(m.row(perm[new]));
        }
        out
    };
    let edges: Vec<(usize, usize)> = inst
        .ds
        .edges
        .iter()
        .map(|&(a, b)| (inv[a], inv[b]))
        .collect();
    let mut pds = inst.ds.clone();
    pds.features_v = permute_matrix(&inst.ds.features_v);
    pds.features_t = permute_matrix(&inst.ds.features_t);
    let pds = pds.with_edges(edges).unwrap();
    let pgraphs = build_candidates(
        &pds,
        &pds.features_v,
        &pds.features_t,
        2,
        2,
        CandidateMode::Hybrid,
    )
    .unwrap();
    let batch: Vec<usize> = inst.batch.iter().map(|&b| inv[b]).collect();
    let gallery: Vec<usize> = inst.gallery.iter().map(|&g| inv[g]).collect();
    let (permuted, _) = total_loss_and_grad(
        &inst.params,
        &pds.features_v,
        &pds.features_t,
        &pgraphs,
        &cfg,
        &w,
        &batch,
        &gallery,
        7,
    )
    .unwrap();
    assert!(
        (base.total - permuted.total).abs() < 1e-9,
        "{} vs {}",
        base.total,
        permuted.total
    );
}

#[test]
fn doubling_lambda_cde_doubles_contribution() {
    let inst = instance(222, 5, 3, 3);
    let cfg = pipeline(2, 0.3, 0.25, PipelineOptions::default());
    let w1 = weights();
    let mut w2 = weights();
    w2.lambda_cde *= 2.0;
    let run = |w: &LossWeights| {
        total_loss_and_grad(
            &inst.params,
            &inst.ds.features_v,
            &inst.ds.features_t,
            &inst.graphs,
            &cfg,
            w,
            &inst.batch,
            &inst.gallery,
            3,
        )
        .unwrap()
        .0
    };
    let a = run(&w1);
    let b = run(&w2);
    assert!(((b.total - a.total) - w1.lambda_cde * a.cde).abs() < 1e-12);
    assert_eq!(a.cde, b.cde);
}

#[test]
fn lambda_direct_only_reduces_to_linear_baseline_signal() {
    let inst = instance(333, 5, 3, 3);
    let cfg = pipeline(
        2,
        0.3,
        0.25,
        PipelineOptions {
            adapter_only: true,
            ..Default::default()
        },
    );
    let w = LossWeights {
        lambda_cde: 0.0,
        lambda_topo: 0.0,
        lambda_direct: 1.0,
        ..weights()
    };
    let (breakdown, grads) = total_loss_and_grad(
        &inst.params,
        &inst.ds.features_v,
        &inst.ds.features_t,
        &inst.graphs,
        &cfg,
        &w,
        &inst.batch,
        &inst.gallery,
        5,
    )
    .unwrap();
    // align (on Z = E) and direct (on E) coincide.
    assert!((breakdown.align - breakdown.direct).abs() < 1e-12);
    // Only adapters receive gradient.
    for scorer in &grads.scorers {
        assert!(scorer.weight.data().iter().all(|&v| v == 0.0));
    }
    assert!(grads.readout_v.q.iter().all(|&v| v == 0.0));
    assert!(grads
        .adapter_v
        .weight
        .data()
        .iter()
        .any(|&v| v.abs() > 1e-12));
}
