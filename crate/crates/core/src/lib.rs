//! Entropy-rate maximizing policy synthesis for finite MDPs, optionally under
//! a surveillance (Büchi) constraint: visit a target set infinitely often with
//! probability one.

pub mod case_study;
pub mod chain;
pub mod constrained;
pub mod graph;
mod linalg;
pub mod mdp;
pub mod simulation;
pub mod solvers;
pub mod text;
pub mod unconstrained;

pub use chain::{
    chain_structure, entropy_rate, huffman_weight, limit_distribution, local_entropy, observation_cost,
    observation_cost_with, probe_weight, transient_value_solve, ChainError, ChainStructure, ObservationModel,
    ObservationOptions,
};
pub use constrained::{synthesize, SurveillanceProblem, SynthesisError, SynthesisResult, Value};
pub use graph::{
    almost_sure_winning, classify_levels, is_communicating, mec_decomposition, reach_set, LevelDecomposition, Mec,
};
pub use mdp::{
    induce_chain, restrict, validate_mdp, ActionId, MarkovChain, Mdp, ModelError, RawAction, RawMdp,
    StationaryPolicy, SubMdp, ValidationError,
};
pub use unconstrained::{max_entropy_rate_policy, CommunicatingSolution, UnconstrainedError};
