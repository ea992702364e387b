//! Differentiable and hard permutations of sets.

mod matching;
mod network;
mod sinkhorn;

pub use matching::{greedy_round, hard_match, PermMatrix};
pub use network::{
    apply_soft, apply_soft_matrix, BoundPermutationNetwork, PermutationNetwork, DEFAULT_SINKHORN_ITERATIONS,
    DEFAULT_TEMPERATURE,
};
pub use sinkhorn::{sinkhorn, sinkhorn_matrix, DoublyStochastic};
