//! Markov-chain analysis: recurrent classes, limit distributions, entropy
//! rate, absorption values and observation cost.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::tarjan_scc;
use crate::linalg;
use crate::mdp::{induce_chain, MarkovChain, Mdp, ModelError, StationaryPolicy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("singular linear system while computing {0}")]
    SingularSolve(&'static str),
    #[error("state {state} leaves the transient set towards {target}, which has no boundary value")]
    MissingBoundary { state: usize, target: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Recurrent classes, transient states, per-class stationary distributions and
/// the probability of ending up in each class.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainStructure {
    /// Bottom SCCs, ordered by smallest state.
    pub recurrent_classes: Vec<Vec<usize>>,
    pub transient_states: Vec<usize>,
    /// `stationary[k][i]` is the stationary mass of `recurrent_classes[k][i]`.
    pub stationary: Vec<Vec<f64>>,
    /// Absorption probability of each class under the chain's initial distribution.
    pub beta: Vec<f64>,
}

impl ChainStructure {
    /// Class index of each state, `None` for transient states.
    pub fn class_of(&self, n: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n];
        for (k, class) in self.recurrent_classes.iter().enumerate() {
            for &s in class {
                out[s] = Some(k);
            }
        }
        out
    }
}

fn chain_graph(mc: &MarkovChain) -> Vec<Vec<usize>> {
    (0..mc.num_states()).map(|i| mc.row(i).iter().map(|&(j, _)| j).collect()).collect()
}

/// Bottom strongly connected components of the chain digraph.
pub fn recurrent_classes(mc: &MarkovChain) -> Vec<Vec<usize>> {
    let n = mc.num_states();
    let comps = tarjan_scc(&chain_graph(mc), &vec![true; n]);
    let mut comp_of = vec![0; n];
    for (c, comp) in comps.iter().enumerate() {
        for &s in comp {
            comp_of[s] = c;
        }
    }
    let mut bottom: Vec<Vec<usize>> = comps
        .iter()
        .enumerate()
        .filter(|(c, comp)| comp.iter().all(|&s| mc.row(s).iter().all(|&(t, _)| comp_of[t] == *c)))
        .map(|(_, comp)| comp.clone())
        .collect();
    bottom.sort_by_key(|c| c[0]);
    bottom
}

/// Stationary distribution of a closed class, by solving `sigma (P - I) = 0`
/// with one balance equation replaced by normalization.
fn class_stationary(mc: &MarkovChain, class: &[usize]) -> Result<Vec<f64>, ChainError> {
    let m = class.len();
    if m == 1 {
        return Ok(vec![1.0]);
    }
    let index: BTreeMap<usize, usize> = class.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    // Transposed system: (P^T - I) sigma^T = 0.
    let mut a = DMatrix::<f64>::zeros(m, m);
    for (i, &s) in class.iter().enumerate() {
        for &(t, p) in mc.row(s) {
            a[(index[&t], i)] += p;
        }
        a[(i, i)] -= 1.0;
    }
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(m);
    b[m - 1] = 1.0;
    let x = linalg::solve(a, &b).ok_or(ChainError::SingularSolve("stationary distribution"))?;
    let clipped: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    let sum: f64 = clipped.iter().sum();
    Ok(clipped.into_iter().map(|v| v / sum).collect())
}

/// Recurrent classes, their stationary distributions and absorption weights.
pub fn chain_structure(mc: &MarkovChain) -> Result<ChainStructure, ChainError> {
    let n = mc.num_states();
    let classes = recurrent_classes(mc);
    let mut class_of = vec![None; n];
    for (k, class) in classes.iter().enumerate() {
        for &s in class {
            class_of[s] = Some(k);
        }
    }
    let transient: Vec<usize> = (0..n).filter(|&s| class_of[s].is_none()).collect();
    let stationary = classes.iter().map(|c| class_stationary(mc, c)).collect::<Result<Vec<_>, _>>()?;

    let pi0 = mc.initial();
    let mut beta: Vec<f64> = classes.iter().map(|c| c.iter().map(|&s| pi0[s]).sum()).collect();
    let t_mass: f64 = transient.iter().map(|&s| pi0[s]).sum();
    if !transient.is_empty() && t_mass > 0.0 {
        // Expected visits x solves (I - Q0)^T x = pi0_T.
        let index: BTreeMap<usize, usize> = transient.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let m = transient.len();
        let mut a = DMatrix::<f64>::identity(m, m);
        for (i, &s) in transient.iter().enumerate() {
            for &(t, p) in mc.row(s) {
                if let Some(&j) = index.get(&t) {
                    a[(j, i)] -= p;
                }
            }
        }
        let b = DVector::from_iterator(m, transient.iter().map(|&s| pi0[s]));
        let x = linalg::solve(a, &b).ok_or(ChainError::SingularSolve("absorption probabilities"))?;
        for (i, &s) in transient.iter().enumerate() {
            for &(t, p) in mc.row(s) {
                if let Some(k) = class_of[t] {
                    beta[k] += x[i] * p;
                }
            }
        }
    }
    Ok(ChainStructure { recurrent_classes: classes, transient_states: transient, stationary, beta })
}

/// `pi(s) = beta(k) sigma_k(s)` on recurrent states, 0 on transient ones.
pub fn limit_distribution(mc: &MarkovChain) -> Result<Vec<f64>, ChainError> {
    let structure = chain_structure(mc)?;
    Ok(limit_from_structure(mc.num_states(), &structure))
}

pub fn limit_from_structure(n: usize, structure: &ChainStructure) -> Vec<f64> {
    let mut pi = vec![0.0; n];
    for (k, class) in structure.recurrent_classes.iter().enumerate() {
        for (i, &s) in class.iter().enumerate() {
            pi[s] = structure.beta[k] * structure.stationary[k][i];
        }
    }
    pi
}

/// Shannon entropy in bits of a probability row, with `0 log 0 = 0`.
pub fn row_entropy(row: impl IntoIterator<Item = f64>) -> f64 {
    row.into_iter().filter(|&p| p > 0.0).map(|p| -p * p.log2()).sum()
}

/// Local entropy `L(s)` of row `s`, in bits.
pub fn local_entropy(mc: &MarkovChain, s: usize) -> f64 {
    row_entropy(mc.row(s).iter().map(|&(_, p)| p))
}

/// Entropy rate in bits per step: `sum_s pi(s) L(s)`.
pub fn entropy_rate(mc: &MarkovChain) -> Result<f64, ChainError> {
    let pi = limit_distribution(mc)?;
    Ok(pi.iter().enumerate().map(|(s, &p)| if p > 0.0 { p * local_entropy(mc, s) } else { 0.0 }).sum())
}

/// Solves `v = P_T v + P_boundary vals` on the transient set `T`.
///
/// Every successor of a state in `transient` must lie in `transient` or carry
/// a boundary value.
pub fn transient_value_solve(
    mc: &MarkovChain,
    transient: &BTreeSet<usize>,
    boundary: &BTreeMap<usize, f64>,
) -> Result<BTreeMap<usize, f64>, ChainError> {
    if transient.is_empty() {
        return Ok(BTreeMap::new());
    }
    let states: Vec<usize> = transient.iter().copied().collect();
    let index: BTreeMap<usize, usize> = states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let m = states.len();
    let mut a = DMatrix::<f64>::identity(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for (i, &s) in states.iter().enumerate() {
        for &(t, p) in mc.row(s) {
            if let Some(&j) = index.get(&t) {
                a[(i, j)] -= p;
            } else if let Some(&v) = boundary.get(&t) {
                b[i] += p * v;
            } else {
                return Err(ChainError::MissingBoundary { state: s, target: t });
            }
        }
    }
    let x = linalg::solve(a, &b).ok_or(ChainError::SingularSolve("transient values"))?;
    Ok(states.into_iter().zip(x.iter().copied()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Weight(f64);

impl Eq for Weight {}

impl PartialOrd for Weight {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Weight {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Expected codeword length of a binary Huffman code for `dist`.
///
/// Zero-probability symbols are ignored; a point mass has weight 0.
pub fn huffman_weight(dist: &[f64]) -> f64 {
    let mut heap: BinaryHeap<Reverse<Weight>> = dist.iter().filter(|&&p| p > 0.0).map(|&p| Reverse(Weight(p))).collect();
    // Sum of internal node weights equals the expected codeword length.
    let mut total = 0.0;
    while heap.len() > 1 {
        let Reverse(Weight(a)) = heap.pop().unwrap_or(Reverse(Weight(0.0)));
        let Reverse(Weight(b)) = heap.pop().unwrap_or(Reverse(Weight(0.0)));
        total += a + b;
        heap.push(Reverse(Weight(a + b)));
    }
    total
}

/// Expected number of yes/no probes "is it x?" asked in decreasing order of
/// probability until the outcome is known. The last candidate needs no probe.
pub fn probe_weight(dist: &[f64]) -> f64 {
    let mut p: Vec<f64> = dist.iter().copied().filter(|&p| p > 0.0).collect();
    p.sort_by(|a, b| b.total_cmp(a));
    let m = p.len();
    if m <= 1 {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, &q) in p.iter().enumerate().take(m - 1) {
        total += (i + 1) as f64 * q;
    }
    total + (m - 1) as f64 * p[m - 1]
}

/// How an observer resolves one successor state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObservationModel {
    /// Optimal binary Huffman questioning.
    HuffmanCode,
    /// Yes/no probes of single candidates, most likely first.
    #[default]
    SequentialProbe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ObservationOptions {
    pub model: ObservationModel,
    /// Count at least one observation per step even when the successor is certain.
    pub min_probes_one: bool,
}

impl ObservationModel {
    pub fn weight(self, dist: &[f64]) -> f64 {
        match self {
            ObservationModel::HuffmanCode => huffman_weight(dist),
            ObservationModel::SequentialProbe => probe_weight(dist),
        }
    }
}

/// `sum_s pi(s) Y_s` with the Huffman weight of each successor distribution.
pub fn observation_cost(mdp: &Mdp, policy: &StationaryPolicy) -> Result<f64, ChainError> {
    observation_cost_with(
        mdp,
        policy,
        ObservationOptions { model: ObservationModel::HuffmanCode, min_probes_one: false },
    )
}

pub fn observation_cost_with(
    mdp: &Mdp,
    policy: &StationaryPolicy,
    options: ObservationOptions,
) -> Result<f64, ChainError> {
    let mc = induce_chain(mdp, policy)?;
    Ok(chain_observation_cost(&mc, &limit_distribution(&mc)?, options))
}

pub fn chain_observation_cost(mc: &MarkovChain, pi: &[f64], options: ObservationOptions) -> f64 {
    pi.iter()
        .enumerate()
        .filter(|&(_, &p)| p > 0.0)
        .map(|(s, &p)| {
            let row: Vec<f64> = mc.row(s).iter().map(|&(_, q)| q).collect();
            let mut w = options.model.weight(&row);
            if options.min_probes_one {
                w = w.max(1.0);
            }
            p * w
        })
        .sum()
}
