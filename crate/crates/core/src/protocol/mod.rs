//! TITAN: masked inputs plus repeated top-k consensus.

pub mod titan;
pub mod topk;

pub use titan::{
    estimate_node_count, first_observed_perturbed, honest_nodes, perturb_input, perturbation, run_titan,
    run_titan_quantized, RoundCount, TitanNode, TitanOutput, TitanPayload, TitanRun, TitanSnapshot,
};
pub use topk::{run_topk, topk_merge, RankedEntry, Slot, TopKBlock, TopKList};
