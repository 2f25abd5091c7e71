//! Synthetic attributed-graph generator with a tunable modality-topology
//! mismatch, standing in for non-redistributable retrieval corpora.

use crate::data::{MagDataset, SplitConfig};
use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, SeededRng};
use serde::{Deserialize, Serialize};

/// Generator settings.
///
/// Nodes are assigned round-robin to `classes`; per-class prototypes are
/// standard normal vectors. Visual features are `prototype + sigma_v * noise`;
/// textual features rotate the prototype by a seeded orthogonal transform
/// interpolated by `mismatch_angle` before adding `sigma_t * noise`.
/// Structural edges are sampled independently with `p_in` inside a class and
/// `p_out` across classes.
///
/// Each node's visual and textual noise share a latent component weighted by
/// `noise_correlation` (the shared part is rotated along with the prototypes).
/// Marginally the noise stays `sigma * N(0, I)`; the correlation models the
/// instance-specific content a node's two modalities share beyond their
/// class, which is what makes the paired node retrievable from raw features
/// at all.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub nodes: usize,
    pub classes: usize,
    pub feature_dim: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub sigma_v: f64,
    pub sigma_t: f64,
    /// Rotation angle in radians applied to textual prototypes; 0 means the
    /// two modalities share prototypes exactly.
    pub mismatch_angle: f64,
    /// Fraction of noise variance shared between a node's two modalities,
    /// in [0, 1].
    pub noise_correlation: f64,
    /// Latent affinity of structural edges: pair (i, j) is connected with
    /// probability `p * exp(a u_i . u_j / sqrt(d) - a^2 / 2)` where `u` are
    /// the shared latents and `p` the class-level base rate. The correction
    /// term keeps the expected edge rate at `p`. Zero recovers plain
    /// class-uniform sampling; larger values make neighbors share instance
    /// content, the way co-purchase or co-view links do.
    pub edge_affinity: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            nodes: 500,
            classes: 8,
            feature_dim: 32,
            p_in: 0.05,
            p_out: 0.005,
            sigma_v: 0.8,
            sigma_t: 0.8,
            mismatch_angle: std::f64::consts::FRAC_PI_4,
            noise_correlation: 0.35,
            edge_affinity: 2.0,
            seed: 43,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_out)
            || !(0.0..=1.0).contains(&self.p_in)
            || self.p_in <= self.p_out
        {
            return Err(Error::InvalidParameter {
                what: "synthetic edge probabilities",
                detail: format!("need 0 <= p_out < p_in <= 1, got p_in={} p_out={}", self.p_in, self.p_out),
            });
        }
        if self.sigma_v < 0.0 || self.sigma_t < 0.0 {
            return Err(Error::InvalidParameter {
                what: "synthetic noise scales",
                detail: format!("sigma_v={} sigma_t={}", self.sigma_v, self.sigma_t),
            });
        }
        if self.classes < 2 {
            return Err(Error::InvalidParameter {
                what: "synthetic class count",
                detail: format!("need at least 2 classes, got {}", self.classes),
            });
        }
        if self.classes > self.nodes {
            return Err(Error::InvalidParameter {
                what: "synthetic class count",
                detail: format!("{} classes exceed {} nodes", self.classes, self.nodes),
            });
        }
        if !(0.0..=1.0).contains(&self.noise_correlation) {
            return Err(Error::InvalidParameter {
                what: "noise correlation",
                detail: format!("must be in [0, 1], got {}", self.noise_correlation),
            });
        }
        if self.edge_affinity < 0.0 {
            return Err(Error::InvalidParameter {
                what: "edge affinity",
                detail: format!("must be nonnegative, got {}", self.edge_affinity),
            });
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidParameter {
                what: "synthetic feature dim",
                detail: "feature_dim must be positive".to_string(),
            });
        }
        Ok(())
    }
}

/// Random orthogonal matrix: modified Gram-Schmidt over a seeded gaussian
/// square matrix, columns orthonormalized in index order.
fn random_orthogonal(d: usize, rng: &mut SeededRng) -> DenseMatrix {
    let mut cols: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..d).map(|_| rng.next_gaussian()).collect())
        .collect();
    for j in 0..d {
        for i in 0..j {
            let dot: f64 = cols[j].iter().zip(&cols[i]).map(|(a, b)| a * b).sum();
            let prev = cols[i].clone();
            for (v, p) in cols[j].iter_mut().zip(&prev) {
                *v -= dot * p;
            }
        }
        let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in cols[j].iter_mut() {
            *v /= norm;
        }
    }
    let mut q = DenseMatrix::zeros(d, d);
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            q.set(i, j, v);
        }
    }
    q
}

/// `R(theta) = Q^T B(theta) Q` with `B` rotating disjoint coordinate planes
/// by `theta`. `R(0) = I` exactly (shortcut, no floating-point residue).
fn mismatch_rotation(d: usize, theta: f64, rng: &mut SeededRng) -> Option<DenseMatrix> {
    if theta == 0.0 {
        return None;
    }
    let q = random_orthogonal(d, rng);
    let (sin, cos) = theta.sin_cos();
    // B * Q, mixing row pairs (2k, 2k+1); an odd final coordinate is fixed.
    let mut bq = q.clone();
    for k in 0..d / 2 {
        let (r0, r1) = (2 * k, 2 * k + 1);
        for c in 0..d {
            let a = q.get(r0, c);
            let b = q.get(r1, c);
            bq.set(r0, c, cos * a - sin * b);
            bq.set(r1, c, sin * a + cos * b);
        }
    }
    Some(q.transpose_matmul(&bq).expect("square shapes"))
}

pub fn generate_synthetic(cfg: &SynthConfig, split: &SplitConfig) -> Result<MagDataset> {
    cfg.validate()?;
    let (n, c, d) = (cfg.nodes, cfg.classes, cfg.feature_dim);
    let class_of: Vec<usize> = (0..n).map(|i| i % c).collect();

    let mut proto_rng = SeededRng::with_tag(cfg.seed, "prototypes");
    let mut prototypes = DenseMatrix::zeros(c, d);
    for r in 0..c {
        for v in prototypes.row_mut(r) {
            *v = proto_rng.next_gaussian();
        }
    }

    let mut rot_rng = SeededRng::with_tag(cfg.seed, "rotation");
    let rotation = mismatch_rotation(d, cfg.mismatch_angle, &mut rot_rng);
    let rotated = match &rotation {
        // Row i of `prototypes * R^T` is `R * prototype_i`.
        Some(r) => prototypes.matmul_transpose_b(r)?,
        None => prototypes.clone(),
    };

    // Shared per-node latent; rotated for the textual side together with the
    // prototypes so the two modalities agree on the same instance content.
    let shared_w = cfg.noise_correlation.sqrt();
    let fresh_w = (1.0 - cfg.noise_correlation).sqrt();
    let mut shared = DenseMatrix::zeros(n, d);
    let mut shared_rng = SeededRng::with_tag(cfg.seed, "noise-shared");
    for i in 0..n {
        for v in shared.row_mut(i) {
            *v = shared_rng.next_gaussian();
        }
    }
    let shared_rotated = match &rotation {
        Some(r) => shared.matmul_transpose_b(r)?,
        None => shared.clone(),
    };

    let mut features_v = DenseMatrix::zeros(n, d);
    let mut noise_v = SeededRng::with_tag(cfg.seed, "noise-v");
    for i in 0..n {
        let proto = prototypes.row(class_of[i]).to_vec();
        let shared_row = shared.row(i).to_vec();
        for ((x, p), u) in features_v.row_mut(i).iter_mut().zip(proto).zip(shared_row) {
            *x = p + cfg.sigma_v * (fresh_w * noise_v.next_gaussian() + shared_w * u);
        }
    }
    let mut features_t = DenseMatrix::zeros(n, d);
    let mut noise_t = SeededRng::with_tag(cfg.seed, "noise-t");
    for i in 0..n {
        let proto = rotated.row(class_of[i]).to_vec();
        let shared_row = shared_rotated.row(i).to_vec();
        for ((x, p), u) in features_t.row_mut(i).iter_mut().zip(proto).zip(shared_row) {
            *x = p + cfg.sigma_t * (fresh_w * noise_t.next_gaussian() + shared_w * u);
        }
    }

    let mut edge_rng = SeededRng::with_tag(cfg.seed, "edges");
    let mut edges = Vec::new();
    let kappa = cfg.edge_affinity;
    let affinity_norm = (-kappa * kappa / 2.0).exp();
    let sqrt_d = (d as f64).sqrt();
    for i in 0..n {
        for j in (i + 1)..n {
            let base = if class_of[i] == class_of[j] {
                cfg.p_in
            } else {
                cfg.p_out
            };
            let p = if kappa == 0.0 {
                base
            } else {
                let dot: f64 = shared
                    .row(i)
                    .iter()
                    .zip(shared.row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                (base * (kappa * dot / sqrt_d).exp() * affinity_norm).min(1.0)
            };
            if edge_rng.next_f64() < p {
                edges.push((i, j));
            }
        }
    }

    let split = split.assign(n)?;
    MagDataset::new(features_v, features_t, edges, split, Some(class_of))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_cfg() -> SynthConfig {
        SynthConfig {
            nodes: 60,
            classes: 3,
            feature_dim: 8,
            p_in: 0.2,
            p_out: 0.02,
            sigma_v: 0.5,
            sigma_t: 0.5,
            mismatch_angle: 0.5,
            noise_correlation: 0.0,
            edge_affinity: 0.0,
            seed: 7,
        }
    }

    #[test]
    fn zero_mismatch_zero_noise_gives_identical_modalities() {
        let cfg = SynthConfig {
            sigma_v: 0.0,
            sigma_t: 0.0,
            mismatch_angle: 0.0,
            ..base_cfg()
        };
        let ds = generate_synthetic(&cfg, &SplitConfig::default()).unwrap();
        assert_eq!(ds.features_v, ds.features_t);
    }

    #[test]
    fn zero_p_out_has_no_cross_class_edges() {
        let cfg = SynthConfig {
            p_out: 0.0,
            classes: 2,
            ..base_cfg()
        };
        let ds = generate_synthetic(&cfg, &SplitConfig::default()).unwrap();
        let cats = ds.categories.as_ref().unwrap();
        assert!(!ds.edges.is_empty());
        for &(a, b) in &ds.edges {
            assert_eq!(cats[a], cats[b]);
        }
    }

    #[test]
    fn generation_is_bit_deterministic() {
        let cfg = base_cfg();
        let a = generate_synthetic(&cfg, &SplitConfig::default()).unwrap();
        let b = generate_synthetic(&cfg, &SplitConfig::default()).unwrap();
        assert_eq!(a.features_v, b.features_v);
        assert_eq!(a.features_t, b.features_t);
        assert_eq!(a.edges, b.edges);
        assert_eq!(a.split, b.split);
    }

    #[test]
    fn invalid_probabilities_rejected() {
        let cfg = SynthConfig {
            p_in: 0.1,
            p_out: 0.1,
            ..base_cfg()
        };
        assert!(generate_synthetic(&cfg, &SplitConfig::default()).is_err());
    }

    #[test]
    fn more_classes_than_nodes_rejected() {
        let cfg = SynthConfig {
            nodes: 3,
            classes: 4,
            ..base_cfg()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rotation_is_orthogonal() {
        let mut rng = SeededRng::new(3);
        let r = mismatch_rotation(6, 0.7, &mut rng).unwrap();
        let rtr = r.transpose_matmul(&r).unwrap();
        let eye = DenseMatrix::identity(6);
        for (a, b) in rtr.data().iter().zip(eye.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rotation_angle_controls_prototype_alignment() {
        // Rotating every plane by theta moves a vector by exactly theta.
        let mut rng = SeededRng::new(3);
        let theta = std::f64::consts::FRAC_PI_4;
        let r = mismatch_rotation(8, theta, &mut rng).unwrap();
        let mut v_rng = SeededRng::new(11);
        let v: Vec<f64> = (0..8).map(|_| v_rng.next_gaussian()).collect();
        let m = DenseMatrix::from_vec(1, 8, v.clone()).unwrap();
        let rotated = m.matmul_transpose_b(&r).unwrap();
        let dot: f64 = rotated.row(0).iter().zip(&v).map(|(a, b)| a * b).sum();
        let norm: f64 = v.iter().map(|x| x * x).sum();
        assert!((dot / norm - theta.cos()).abs() < 1e-10);
    }
}
