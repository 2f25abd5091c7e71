//! The multimodal attributed graph data model: loading external feature
//! matrices and edge lists, transductive split management, synthetic
//! generation with controllable modality-topology mismatch, and the edge
//! perturbation controls.

mod io;
mod perturb;
mod synth;

pub use io::{
    load_dataset, parse_edge_list, read_categories, read_feature_file, write_feature_file,
    DatasetPaths,
};
pub use perturb::{randomize_edges, RandomizeMode};
pub use synth::{generate_synthetic, SynthConfig};

use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, SeededRng};
use serde::{Deserialize, Serialize};

/// Transductive role of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Train/val/test fractions plus the shuffle seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.6,
            val_fraction: 0.2,
            test_fraction: 0.2,
            seed: 43,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let fractions = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fractions.iter().any(|f| *f <= 0.0) {
            return Err(Error::InvalidParameter {
                what: "split fractions",
                detail: format!("all fractions must be positive, got {:?}", fractions),
            });
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter {
                what: "split fractions",
                detail: format!("fractions sum to {}", sum),
            });
        }
        Ok(())
    }

    /// Seeded Fisher-Yates shuffle of node ids followed by contiguous slicing.
    pub fn assign(&self, n: usize) -> Result<Vec<Split>> {
        self.validate()?;
        let mut ids: Vec<usize> = (0..n).collect();
        SeededRng::with_tag(self.seed, "split").shuffle(&mut ids);
        let n_train = (self.train_fraction * n as f64).round() as usize;
        let n_val = ((self.val_fraction * n as f64).round() as usize).min(n - n_train.min(n));
        let n_train = n_train.min(n);
        let mut split = vec![Split::Test; n];
        for (pos, &id) in ids.iter().enumerate() {
            split[id] = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        Ok(split)
    }
}

/// An attributed graph whose nodes carry paired visual/textual features.
///
/// Structural edges are undirected, stored as sorted `(low, high)` pairs with
/// no duplicates and no self-loops.
#[derive(Debug, Clone)]
pub struct MagDataset {
    pub features_v: DenseMatrix,
    pub features_t: DenseMatrix,
    pub edges: Vec<(usize, usize)>,
    pub split: Vec<Split>,
    pub categories: Option<Vec<usize>>,
}

impl MagDataset {
    pub fn new(
        features_v: DenseMatrix,
        features_t: DenseMatrix,
        raw_edges: Vec<(usize, usize)>,
        split: Vec<Split>,
        categories: Option<Vec<usize>>,
    ) -> Result<Self> {
        if features_v.rows() != features_t.rows() {
            return Err(Error::ModalityRowMismatch {
                visual: features_v.rows(),
                textual: features_t.rows(),
            });
        }
        let n = features_v.rows();
        if split.len() != n {
            return Err(Error::InvalidParameter {
                what: "split",
                detail: format!("{} labels for {} nodes", split.len(), n),
            });
        }
        if let Some(cats) = &categories {
            if cats.len() != n {
                return Err(Error::InvalidParameter {
                    what: "categories",
                    detail: format!("{} ids for {} nodes", cats.len(), n),
                });
            }
        }
        let (edges, dropped_self, dropped_dup) = dedup_undirected(raw_edges, n)?;
        if dropped_self + dropped_dup > 0 {
            log::info!(
                "edge list cleanup: dropped {} self-loops, {} duplicates",
                dropped_self,
                dropped_dup
            );
        }
        Ok(Self {
            features_v,
            features_t,
            edges,
            split,
            categories,
        })
    }

    pub fn node_count(&self) -> usize {
        self.features_v.rows()
    }

    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        self.split
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.node_count()];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Neighbor lists (both directions of every undirected edge), sorted.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for nbrs in &mut adj {
            nbrs.sort_unstable();
        }
        adj
    }

    /// Same dataset with a replacement structural edge list.
    pub fn with_edges(&self, edges: Vec<(usize, usize)>) -> Result<Self> {
        Self::new(
            self.features_v.clone(),
            self.features_t.clone(),
            edges,
            self.split.clone(),
            self.categories.clone(),
        )
    }
}

/// Sorts each pair, drops self-loops and duplicates, and range-checks ids.
/// Returns (edges, dropped_self_loops, dropped_duplicates).
fn dedup_undirected(
    raw: Vec<(usize, usize)>,
    n: usize,
) -> Result<(Vec<(usize, usize)>, usize, usize)> {
    let mut dropped_self = 0usize;
    let mut edges = Vec::with_capacity(raw.len());
    for (a, b) in raw {
        if a >= n || b >= n {
            return Err(Error::EdgeIndexOutOfRange {
                index: a.max(b),
                nodes: n,
                line: 0,
            });
        }
        if a == b {
            dropped_self += 1;
            continue;
        }
        edges.push((a.min(b), a.max(b)));
    }
    edges.sort_unstable();
    let before = edges.len();
    edges.dedup();
    let dropped_dup = before - edges.len();
    Ok((edges, dropped_self, dropped_dup))
}
