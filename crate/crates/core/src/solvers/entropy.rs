//! The concave entropy-rate program over occupation variables `gamma(s, a)`.
//!
//! Solved in its dual form: soft policy iteration on the average-reward
//! problem whose per-step reward is the entropy of the successor distribution.
//! Evaluation solves `g + h(s) = H(q_s) + sum_t q_s(t) h(t)` exactly; each
//! state's improvement step maximizes the concave map
//! `F_s(mu) = H(q_mu) + q_mu . h` with Blahut-Arimoto updates. A Frank-Wolfe
//! bound on every `F_s` yields a certified optimality gap.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::is_communicating;
use crate::linalg;
use crate::mdp::{induce_chain, Mdp, StationaryPolicy};

const LN2: f64 = std::f64::consts::LN_2;
const MIN_WEIGHT: f64 = 1e-200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EntropyError {
    #[error("MDP is not communicating")]
    NotCommunicating,
    #[error("no convergence after {iterations} iterations (optimality gap {gap:.3e} bits)")]
    NoConvergence { iterations: usize, gap: f64 },
    #[error("singular policy evaluation system")]
    SingularEvaluation,
}

/// Settings for [`solve_entropy_program_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropySettings {
    /// Required certified optimality gap in bits.
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Mixing weight of a uniform perturbation applied to the starting policy.
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for EntropySettings {
    fn default() -> Self {
        Self { tol: 1e-7, max_outer: 400, max_inner: 2000, perturbation: 0.0, seed: 0 }
    }
}

/// Optimal occupation measure and its policy.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropySolution {
    /// `gamma[s][a]` over local action indices.
    pub gamma: Vec<Vec<f64>>,
    /// Entropy rate in bits per step.
    pub objective: f64,
    pub policy: StationaryPolicy,
    /// Certified upper bound on (optimum - objective), bits.
    pub gap: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
}

/// Objective and constraints of the program for one MDP.
#[derive(Debug, Clone, Copy)]
pub struct EntropyProgram<'a> {
    pub mdp: &'a Mdp,
}

/// Constraint residuals of a candidate `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    /// `max_t |lambda(t) - sum_s q(s, t)|`.
    pub balance: f64,
    /// `|sum_s lambda(s) - 1|`.
    pub normalization: f64,
    /// Most negative entry, as a positive number.
    pub negativity: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.balance.max(self.normalization).max(self.negativity)
    }
}

impl<'a> EntropyProgram<'a> {
    pub fn new(mdp: &'a Mdp) -> Self {
        Self { mdp }
    }

    /// `q(s, t) = sum_a gamma(s, a) P(t | s, a)` as dense rows.
    pub fn flows(&self, gamma: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.mdp.num_states();
        (0..n)
            .map(|s| {
                let mut q = vec![0.0; n];
                for (row, &g) in self.mdp.actions(s).iter().zip(&gamma[s]) {
                    for &(t, p) in &row.successors {
                        q[t] += g * p;
                    }
                }
                q
            })
            .collect()
    }

    /// `sum_{s,t} -q(s,t) log2(q(s,t) / lambda(s))`, with `0 log 0 = 0`.
    pub fn objective(&self, gamma: &[Vec<f64>]) -> f64 {
        let q = self.flows(gamma);
        let mut total = 0.0;
        for (s, row) in q.iter().enumerate() {
            let lambda: f64 = gamma[s].iter().sum();
            if lambda <= 0.0 {
                continue;
            }
            for &x in row {
                if x > 0.0 {
                    total -= x * (x / lambda).log2();
                }
            }
        }
        total
    }

    pub fn residuals(&self, gamma: &[Vec<f64>]) -> Residuals {
        let q = self.flows(gamma);
        let n = self.mdp.num_states();
        let lambda: Vec<f64> = gamma.iter().map(|g| g.iter().sum()).collect();
        let balance = (0..n)
            .map(|t| (lambda[t] - (0..n).map(|s| q[s][t]).sum::<f64>()).abs())
            .fold(0.0, f64::max);
        let normalization = (lambda.iter().sum::<f64>() - 1.0).abs();
        let negativity = gamma.iter().flatten().map(|&g| (-g).max(0.0)).fold(0.0, f64::max);
        Residuals { balance, normalization, negativity }
    }

    /// `gamma(s, a) = pi(s) mu(s, a)` for a policy whose chain has limit distribution `pi`.
    pub fn occupation(&self, policy: &StationaryPolicy, pi: &[f64]) -> Vec<Vec<f64>> {
        (0..self.mdp.num_states()).map(|s| policy.row(s).iter().map(|&m| pi[s] * m).collect()).collect()
    }
}

fn entropy_nats(q: &[f64]) -> f64 {
    q.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

/// Mixed successor distribution over the dense state space.
fn mixture(mdp: &Mdp, s: usize, mu: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (row, &w) in mdp.actions(s).iter().zip(mu) {
        for &(t, p) in &row.successors {
            out[t] += w * p;
        }
    }
}

/// Gain and bias of `mu`: `g + h(s) = H(q_s) + sum_t q_s(t) h(t)`, `h(0) = 0`.
fn evaluate(mdp: &Mdp, mu: &[Vec<f64>]) -> Result<(f64, Vec<f64>), EntropyError> {
    let n = mdp.num_states();
    // Unknowns: g, h(1), ..., h(n-1).
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    let mut q = vec![0.0; n];
    for s in 0..n {
        mixture(mdp, s, &mu[s], &mut q);
        b[s] = entropy_nats(&q);
        a[(s, 0)] = 1.0;
        if s > 0 {
            a[(s, s)] += 1.0;
        }
        for (t, &p) in q.iter().enumerate() {
            if t > 0 && p > 0.0 {
                a[(s, t)] -= p;
            }
        }
    }
    let x = linalg::solve(a, &b).ok_or(EntropyError::SingularEvaluation)?;
    let mut h = vec![0.0; n];
    h[1..n].copy_from_slice(&x.as_slice()[1..n]);
    Ok((x[0], h))
}

/// Blahut-Arimoto ascent on `F_s`; returns `(F_s(mu), certified upper bound, steps)`.
fn improve_state(mdp: &Mdp, s: usize, h: &[f64], mu: &mut [f64], tol: f64, max_steps: usize) -> (f64, f64, usize) {
    let n = mdp.num_states();
    let rows = mdp.actions(s);
    let c: Vec<f64> = rows.iter().map(|r| r.successors.iter().map(|&(t, p)| p * h[t]).sum()).collect();
    let mut q = vec![0.0; n];
    let mut g = vec![0.0; rows.len()];
    let mut steps = 0;
    loop {
        mixture(mdp, s, mu, &mut q);
        for (a, row) in rows.iter().enumerate() {
            // Actions whose support lies outside supp(q) only arise with
            // underflowed weights; treat their log as very negative.
            g[a] = c[a]
                + row.successors.iter().map(|&(t, p)| p * if q[t] > 0.0 { -q[t].ln() } else { 700.0 }).sum::<f64>();
        }
        let value = entropy_nats(&q) + q.iter().zip(h).map(|(x, y)| x * y).sum::<f64>();
        let gmax = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let avg: f64 = mu.iter().zip(&g).map(|(m, x)| m * x).sum();
        let gap = (gmax - avg).max(0.0);
        if gap <= tol || steps >= max_steps || rows.len() == 1 {
            return (value, value + gap, steps);
        }
        let mut sum = 0.0;
        for (m, &x) in mu.iter_mut().zip(&g) {
            *m = (*m * (x - gmax).exp()).max(MIN_WEIGHT);
            sum += *m;
        }
        mu.iter_mut().for_each(|m| *m /= sum);
        steps += 1;
    }
}

/// Solves the program on a communicating MDP with default settings.
pub fn solve_entropy_program(mdp: &Mdp, tol: f64) -> Result<EntropySolution, EntropyError> {
    solve_entropy_program_with(mdp, EntropySettings { tol, ..Default::default() })
}

pub fn solve_entropy_program_with(mdp: &Mdp, settings: EntropySettings) -> Result<EntropySolution, EntropyError> {
    if !is_communicating(mdp) {
        return Err(EntropyError::NotCommunicating);
    }
    let n = mdp.num_states();
    let tol = settings.tol * LN2;
    let mut mu: Vec<Vec<f64>> = StationaryPolicy::uniform(mdp).rows().to_vec();
    if settings.perturbation > 0.0 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(settings.seed);
        for row in &mut mu {
            let noise: Vec<f64> = row.iter().map(|_| rng.random::<f64>()).collect();
            let total: f64 = noise.iter().sum();
            for (m, z) in row.iter_mut().zip(noise) {
                *m = (1.0 - settings.perturbation) * *m + settings.perturbation * z / total;
            }
        }
    }
    let mut inner_total = 0;
    let mut gap = f64::INFINITY;
    let mut inner_tol = 1e-2;
    for outer in 0..settings.max_outer {
        let (g, h) = evaluate(mdp, &mu)?;
        let mut next = mu.clone();
        let mut bound = f64::NEG_INFINITY;
        for s in 0..n {
            let (_, upper, steps) = improve_state(mdp, s, &h, &mut next[s], inner_tol, settings.max_inner);
            inner_total += steps;
            bound = bound.max(upper - h[s]);
        }
        gap = (bound - g).max(0.0);
        log::trace!("entropy iteration {outer}: gain {:.12} bits, gap {:.3e}", g / LN2, gap / LN2);
        if gap <= tol {
            return Ok(finish(mdp, &mu, gap / LN2, outer + 1, inner_total));
        }
        mu = next;
        inner_tol = (gap * 1e-2).clamp(tol * 1e-2, 1e-2);
    }
    Err(EntropyError::NoConvergence { iterations: settings.max_outer, gap: gap / LN2 })
}

fn finish(mdp: &Mdp, mu: &[Vec<f64>], gap: f64, outer: usize, inner: usize) -> EntropySolution {
    let rows: Vec<Vec<f64>> = mu
        .iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            row.iter().map(|m| m / s).collect()
        })
        .collect();
    let policy = StationaryPolicy::new(mdp, rows).expect("normalized rows");
    let chain = induce_chain(mdp, &policy).expect("policy matches MDP");
    let pi = crate::chain::limit_distribution(&chain).unwrap_or_else(|_| vec![1.0 / mdp.num_states() as f64; mdp.num_states()]);
    let program = EntropyProgram::new(mdp);
    let gamma = program.occupation(&policy, &pi);
    let objective = program.objective(&gamma);
    EntropySolution { gamma, objective, policy, gap, outer_iterations: outer, inner_iterations: inner }
}
