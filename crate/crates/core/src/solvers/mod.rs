//! Optimization kernels: a simplex LP solver and the entropy-rate program.

pub mod entropy;
pub mod lp;

pub use entropy::{
    solve_entropy_program, solve_entropy_program_with, EntropyError, EntropyProgram, EntropySettings,
    EntropySolution, Residuals,
};
pub use lp::{solve_lp, solve_lp_with, LinearProgram, LpError, LpSolution};
