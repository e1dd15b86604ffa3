//! Maximum entropy-rate policies for communicating MDPs.

use thiserror::Error;

use crate::graph::is_communicating;
use crate::mdp::{Mdp, StationaryPolicy};
use crate::solvers::entropy::{solve_entropy_program_with, EntropyError, EntropySettings};

/// Occupation mass below which a state counts as unvisited.
pub const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UnconstrainedError {
    #[error("MDP is not communicating")]
    NotCommunicating,
    #[error("optimal occupation of state {0} vanished")]
    DegenerateOccupation(usize),
    #[error(transparent)]
    Solver(EntropyError),
}

impl From<EntropyError> for UnconstrainedError {
    fn from(e: EntropyError) -> Self {
        match e {
            EntropyError::NotCommunicating => UnconstrainedError::NotCommunicating,
            other => UnconstrainedError::Solver(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommunicatingSolution {
    pub policy: StationaryPolicy,
    /// Bits per step.
    pub entropy_rate_value: f64,
    pub gamma: Vec<Vec<f64>>,
    pub gap: f64,
    pub iterations: usize,
}

/// `mu(s, a) = gamma(s, a) / sum_a gamma(s, a)` from the optimal occupation.
pub fn max_entropy_rate_policy(mdp: &Mdp) -> Result<CommunicatingSolution, UnconstrainedError> {
    max_entropy_rate_policy_with(mdp, EntropySettings::default())
}

pub fn max_entropy_rate_policy_with(
    mdp: &Mdp,
    settings: EntropySettings,
) -> Result<CommunicatingSolution, UnconstrainedError> {
    if !is_communicating(mdp) {
        return Err(UnconstrainedError::NotCommunicating);
    }
    let attempts = [settings, EntropySettings { tol: settings.tol * 1e-2, perturbation: 0.1, seed: 1, ..settings }];
    let mut last = UnconstrainedError::DegenerateOccupation(0);
    for (i, attempt) in attempts.iter().enumerate() {
        let sol = solve_entropy_program_with(mdp, *attempt)?;
        let lambda: Vec<f64> = sol.gamma.iter().map(|g| g.iter().sum()).collect();
        if let Some(s) = lambda.iter().position(|&l| l < DEGENERACY_TOL) {
            log::warn!("attempt {i}: occupation of state {s} is {:.3e}; retrying", lambda[s]);
            last = UnconstrainedError::DegenerateOccupation(s);
            continue;
        }
        let rows: Vec<Vec<f64>> =
            sol.gamma.iter().zip(&lambda).map(|(g, &l)| g.iter().map(|x| x / l).collect()).collect();
        let policy = StationaryPolicy::new(mdp, rows).map_err(|_| UnconstrainedError::DegenerateOccupation(0))?;
        return Ok(CommunicatingSolution {
            policy,
            entropy_rate_value: sol.objective,
            gamma: sol.gamma,
            gap: sol.gap,
            iterations: sol.outer_iterations,
        });
    }
    Err(last)
}
