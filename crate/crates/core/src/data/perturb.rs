//! Null-model edge perturbations: uniform rewiring and degree-preserving
//! double-edge swaps.

use crate::data::MagDataset;
use crate::error::{Error, Result};
use crate::tensor::SeededRng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomizeMode {
    /// Replace every edge with a uniformly sampled non-self, non-duplicate pair.
    UniformRandom,
    /// Double-edge swaps preserving every node's degree exactly.
    DegreePreservingRewire,
}

/// Swap budget relative to |E|; standard mixing heuristic for swap null models.
const SWAP_BUDGET_FACTOR: usize = 10;
const ATTEMPT_CAP_FACTOR: usize = 100;

pub fn randomize_edges(
    ds: &MagDataset,
    mode: RandomizeMode,
    rng: &mut SeededRng,
) -> Result<MagDataset> {
    let n = ds.node_count();
    match mode {
        RandomizeMode::UniformRandom => {
            let target = ds.edges.len();
            if n < 2 {
                return Err(Error::RewireInfeasible {
                    mode: "uniform_random",
                });
            }
            let mut chosen: BTreeSet<(usize, usize)> = BTreeSet::new();
            while chosen.len() < target {
                let a = rng.next_range(n as u64) as usize;
                let b = rng.next_range(n as u64) as usize;
                if a == b {
                    continue;
                }
                chosen.insert((a.min(b), a.max(b)));
            }
            ds.with_edges(chosen.into_iter().collect())
        }
        RandomizeMode::DegreePreservingRewire => {
            if ds.edges.len() < 2 {
                return Err(Error::RewireInfeasible {
                    mode: "degree_preserving_rewire",
                });
            }
            let mut edges: Vec<(usize, usize)> = ds.edges.clone();
            let mut present: BTreeSet<(usize, usize)> = edges.iter().copied().collect();
            let budget = SWAP_BUDGET_FACTOR * edges.len();
            let cap = ATTEMPT_CAP_FACTOR * edges.len();
            let mut accepted = 0usize;
            let mut attempts = 0usize;
            while accepted < budget && attempts < cap {
                attempts += 1;
                let i = rng.next_range(edges.len() as u64) as usize;
                let j = rng.next_range(edges.len() as u64) as usize;
                if i == j {
                    continue;
                }
                let (a, b) = edges[i];
                let (c, d) = edges[j];
                // Two pairings preserve degrees; pick one uniformly.
                let (e1, e2) = if rng.next_range(2) == 0 {
                    ((a, c), (b, d))
                } else {
                    ((a, d), (b, c))
                };
                let e1 = (e1.0.min(e1.1), e1.0.max(e1.1));
                let e2 = (e2.0.min(e2.1), e2.0.max(e2.1));
                if e1.0 == e1.1 || e2.0 == e2.1 || e1 == e2 {
                    continue;
                }
                // Membership is checked after removing the two originals, so a
                // proposal recreating them counts as a valid (identity) swap.
                present.remove(&edges[i]);
                present.remove(&edges[j]);
                if present.contains(&e1) || present.contains(&e2) {
                    present.insert(edges[i]);
                    present.insert(edges[j]);
                    continue;
                }
                present.insert(e1);
                present.insert(e2);
                edges[i] = e1;
                edges[j] = e2;
                accepted += 1;
            }
            if accepted == 0 {
                return Err(Error::RewireInfeasible {
                    mode: "degree_preserving_rewire",
                });
            }
            if accepted < budget {
                log::warn!(
                    "degree-preserving rewire accepted {}/{} swaps before the attempt cap",
                    accepted,
                    budget
                );
            }
            ds.with_edges(edges)
        }
    }
}
