//! Finite MDPs, stationary policies, induced Markov chains and sub-MDPs.
//!
//! States are dense indices `0..n`. Every state carries its own list of
//! available actions; a policy row is indexed by position in that list (the
//! *local* action index), while [`ActionId`] refers to the global alphabet.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

/// Absolute tolerance for every stochasticity check.
pub const PROB_TOL: f64 = 1e-9;

/// Index into the global action alphabet of an [`Mdp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionId(pub usize);

/// One available action at a state: its global id and sparse successor row.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionRow {
    pub action: ActionId,
    /// `(successor, probability)` pairs, sorted by successor, all strictly positive.
    pub successors: Vec<(usize, f64)>,
}

impl ActionRow {
    pub fn prob(&self, t: usize) -> f64 {
        self.successors
            .binary_search_by_key(&t, |&(s, _)| s)
            .map(|i| self.successors[i].1)
            .unwrap_or(0.0)
    }
}

/// A single problem found while validating a [`RawMdp`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    StateCountMismatch { names: usize, action_blocks: usize },
    DuplicateStateName(String),
    EmptyActionSet { state: usize },
    DanglingSuccessor { state: usize, action: String, successor: usize },
    ProbabilityOutOfRange { state: usize, action: String, successor: usize, value: f64 },
    RowSum { state: usize, action: String, sum: f64 },
    DuplicateAction { state: usize, action: String },
    InitialLength { expected: usize, found: usize },
    InitialOutOfRange { state: usize, value: f64 },
    InitialSum { sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::StateCountMismatch { names, action_blocks } => {
                write!(f, "{names} state names but {action_blocks} action blocks")
            }
            Violation::DuplicateStateName(name) => write!(f, "duplicate state name `{name}`"),
            Violation::EmptyActionSet { state } => write!(f, "state {state} has no available action"),
            Violation::DanglingSuccessor { state, action, successor } => {
                write!(f, "state {state} action `{action}`: successor index {successor} does not exist")
            }
            Violation::ProbabilityOutOfRange { state, action, successor, value } => write!(
                f,
                "state {state} action `{action}`: probability {value} to {successor} outside [0, 1]"
            ),
            Violation::RowSum { state, action, sum } => {
                write!(f, "state {state} action `{action}`: row sums to {sum}, expected 1")
            }
            Violation::DuplicateAction { state, action } => {
                write!(f, "state {state}: action `{action}` declared twice")
            }
            Violation::InitialLength { expected, found } => {
                write!(f, "initial distribution has {found} entries, expected {expected}")
            }
            Violation::InitialOutOfRange { state, value } => {
                write!(f, "initial probability {value} of state {state} outside [0, 1]")
            }
            Violation::InitialSum { sum } => write!(f, "initial distribution sums to {sum}, expected 1"),
        }
    }
}

/// Every violation found in a raw description, not just the first.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid MDP: {}", .violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("policy covers {policy} states but the MDP has {mdp}")]
    DimensionMismatch { mdp: usize, policy: usize },
    #[error("policy row for state {state} has {found} entries, state has {expected} actions")]
    RowLengthMismatch { state: usize, expected: usize, found: usize },
    #[error("policy row for state {state} is not a probability distribution")]
    NotADistribution { state: usize },
    #[error("matrix row {row} is not stochastic")]
    NotStochastic { row: usize },
    #[error("state {state} is not part of the model")]
    UnknownState { state: usize },
    #[error("state {state} has no action with index {action}")]
    UnknownAction { state: usize, action: usize },
    #[error("empty state subset")]
    EmptySubset,
    #[error("state {state} has an empty action set")]
    EmptyActionSet { state: usize },
    #[error("action {action} of state {state} leaves the subset to state {target}")]
    NotClosed { state: usize, action: usize, target: usize },
}

/// Unvalidated action description.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAction {
    pub name: String,
    pub successors: Vec<(usize, f64)>,
}

impl RawAction {
    pub fn new(name: impl Into<String>, successors: Vec<(usize, f64)>) -> Self {
        Self { name: name.into(), successors }
    }
}

/// Unvalidated MDP description, as produced by a parser or a generator.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawMdp {
    pub state_names: Vec<String>,
    pub actions: Vec<Vec<RawAction>>,
    pub initial: Vec<f64>,
}

/// A validated finite MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    state_names: Vec<String>,
    action_names: Vec<String>,
    rows: Vec<Vec<ActionRow>>,
    initial: Vec<f64>,
}

/// Checks every invariant of `raw` and builds an [`Mdp`].
///
/// Actions whose row sums to zero are treated as unavailable and dropped with a
/// warning. All other problems are collected into a single [`ValidationError`].
pub fn validate_mdp(raw: RawMdp) -> Result<Mdp, ValidationError> {
    let n = raw.state_names.len();
    let mut violations = Vec::new();
    if raw.actions.len() != n {
        violations.push(Violation::StateCountMismatch { names: n, action_blocks: raw.actions.len() });
    }
    let mut seen = BTreeSet::new();
    for name in &raw.state_names {
        if !seen.insert(name.as_str()) {
            violations.push(Violation::DuplicateStateName(name.clone()));
        }
    }

    let mut action_names: Vec<String> = Vec::new();
    let mut action_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut rows = Vec::with_capacity(raw.actions.len());
    for (s, block) in raw.actions.into_iter().enumerate() {
        let mut state_rows = Vec::with_capacity(block.len());
        let mut names_here = BTreeSet::new();
        for action in block {
            if !names_here.insert(action.name.clone()) {
                violations.push(Violation::DuplicateAction { state: s, action: action.name.clone() });
                continue;
            }
            let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
            let mut ok = true;
            for &(t, p) in &action.successors {
                if t >= n {
                    violations.push(Violation::DanglingSuccessor {
                        state: s,
                        action: action.name.clone(),
                        successor: t,
                    });
                    ok = false;
                } else if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                    violations.push(Violation::ProbabilityOutOfRange {
                        state: s,
                        action: action.name.clone(),
                        successor: t,
                        value: p,
                    });
                    ok = false;
                } else {
                    *merged.entry(t).or_insert(0.0) += p;
                }
            }
            if !ok {
                continue;
            }
            let sum: f64 = merged.values().sum();
            if sum.abs() <= PROB_TOL {
                log::warn!("state {s}: action `{}` has no successors and is dropped", action.name);
                continue;
            }
            if (sum - 1.0).abs() > PROB_TOL {
                violations.push(Violation::RowSum { state: s, action: action.name.clone(), sum });
                continue;
            }
            let id = *action_index.entry(action.name.clone()).or_insert_with(|| {
                action_names.push(action.name.clone());
                action_names.len() - 1
            });
            state_rows.push(ActionRow {
                action: ActionId(id),
                successors: merged.into_iter().filter(|&(_, p)| p > 0.0).collect(),
            });
        }
        if state_rows.is_empty() && !violations.iter().any(|v| matches!(v, Violation::RowSum { state, .. } if *state == s)) {
            violations.push(Violation::EmptyActionSet { state: s });
        }
        rows.push(state_rows);
    }

    if raw.initial.len() != n {
        violations.push(Violation::InitialLength { expected: n, found: raw.initial.len() });
    } else {
        for (s, &p) in raw.initial.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                violations.push(Violation::InitialOutOfRange { state: s, value: p });
            }
        }
        let sum: f64 = raw.initial.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            violations.push(Violation::InitialSum { sum });
        }
    }

    if violations.is_empty() {
        Ok(Mdp { state_names: raw.state_names, action_names, rows, initial: raw.initial })
    } else {
        Err(ValidationError { violations })
    }
}

impl Mdp {
    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn state_name(&self, s: usize) -> &str {
        &self.state_names[s]
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.state_names.iter().position(|n| n == name)
    }

    pub fn action_name(&self, id: ActionId) -> &str {
        &self.action_names[id.0]
    }

    pub fn action_names(&self) -> &[String] {
        &self.action_names
    }

    /// Available actions `A(s)`.
    pub fn actions(&self, s: usize) -> &[ActionRow] {
        &self.rows[s]
    }

    pub fn num_actions(&self, s: usize) -> usize {
        self.rows[s].len()
    }

    /// Local index of the action named `name` at state `s`.
    pub fn local_action(&self, s: usize, name: &str) -> Option<usize> {
        self.rows[s].iter().position(|r| self.action_names[r.action.0] == name)
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// `succ(s, a)` for the local action index `a`.
    pub fn succ(&self, s: usize, a: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[s][a].successors.iter().map(|&(t, _)| t)
    }

    /// Number of distinct `(s, s')` edges of the underlying digraph.
    pub fn edge_count(&self) -> usize {
        (0..self.num_states()).map(|s| self.union_successors(s).len()).sum()
    }

    /// Successors of `s` under any action, sorted and deduplicated.
    pub fn union_successors(&self, s: usize) -> Vec<usize> {
        let set: BTreeSet<usize> = self.rows[s].iter().flat_map(|r| r.successors.iter().map(|&(t, _)| t)).collect();
        set.into_iter().collect()
    }

    /// Returns a copy with a different initial distribution.
    pub fn with_initial(&self, initial: Vec<f64>) -> Result<Mdp, ValidationError> {
        let mut violations = Vec::new();
        if initial.len() != self.num_states() {
            violations.push(Violation::InitialLength { expected: self.num_states(), found: initial.len() });
        } else {
            let sum: f64 = initial.iter().sum();
            if initial.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > PROB_TOL {
                violations.push(Violation::InitialSum { sum });
            }
        }
        if !violations.is_empty() {
            return Err(ValidationError { violations });
        }
        Ok(Mdp { initial, ..self.clone() })
    }

    /// Converts back into the raw description (used by serializers).
    pub fn to_raw(&self) -> RawMdp {
        RawMdp {
            state_names: self.state_names.clone(),
            actions: self
                .rows
                .iter()
                .map(|rows| {
                    rows.iter()
                        .map(|r| RawAction::new(self.action_names[r.action.0].clone(), r.successors.clone()))
                        .collect()
                })
                .collect(),
            initial: self.initial.clone(),
        }
    }
}

/// A stationary randomized policy; row `s` is a distribution over `A(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPolicy {
    rows: Vec<Vec<f64>>,
}

impl StationaryPolicy {
    /// Validates `rows` against `mdp`.
    pub fn new(mdp: &Mdp, rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        if rows.len() != mdp.num_states() {
            return Err(ModelError::DimensionMismatch { mdp: mdp.num_states(), policy: rows.len() });
        }
        for (s, row) in rows.iter().enumerate() {
            if row.len() != mdp.num_actions(s) {
                return Err(ModelError::RowLengthMismatch { state: s, expected: mdp.num_actions(s), found: row.len() });
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0) || p > 1.0 + PROB_TOL) || (sum - 1.0).abs() > PROB_TOL {
                return Err(ModelError::NotADistribution { state: s });
            }
        }
        Ok(Self { rows })
    }

    pub fn uniform(mdp: &Mdp) -> Self {
        Self {
            rows: (0..mdp.num_states())
                .map(|s| {
                    let k = mdp.num_actions(s);
                    vec![1.0 / k as f64; k]
                })
                .collect(),
        }
    }

    /// Picks local action `choice[s]` deterministically at each state.
    pub fn deterministic(mdp: &Mdp, choice: &[usize]) -> Result<Self, ModelError> {
        if choice.len() != mdp.num_states() {
            return Err(ModelError::DimensionMismatch { mdp: mdp.num_states(), policy: choice.len() });
        }
        let mut rows = Vec::with_capacity(choice.len());
        for (s, &a) in choice.iter().enumerate() {
            if a >= mdp.num_actions(s) {
                return Err(ModelError::UnknownAction { state: s, action: a });
            }
            let mut row = vec![0.0; mdp.num_actions(s)];
            row[a] = 1.0;
            rows.push(row);
        }
        Ok(Self { rows })
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.rows[s]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Largest minus smallest action probability at `s`.
    pub fn spread(&self, s: usize) -> f64 {
        let row = &self.rows[s];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = row.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }

    /// Entrywise mixture `theta * self + (1 - theta) * other`.
    pub fn mix(&self, other: &StationaryPolicy, theta: f64) -> StationaryPolicy {
        StationaryPolicy {
            rows: self
                .rows
                .iter()
                .zip(&other.rows)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| theta * x + (1.0 - theta) * y).collect())
                .collect(),
        }
    }
}

/// A row-stochastic matrix (sparse rows) with an initial distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    rows: Vec<Vec<(usize, f64)>>,
    initial: Vec<f64>,
}

impl MarkovChain {
    /// Builds a chain from sparse rows; rows must be stochastic.
    pub fn from_sparse(rows: Vec<Vec<(usize, f64)>>, initial: Vec<f64>) -> Result<Self, ModelError> {
        let n = rows.len();
        if initial.len() != n {
            return Err(ModelError::DimensionMismatch { mdp: n, policy: initial.len() });
        }
        let mut clean = Vec::with_capacity(n);
        for (i, row) in rows.into_iter().enumerate() {
            let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
            for (j, p) in row {
                if j >= n || !(0.0..=1.0 + PROB_TOL).contains(&p) {
                    return Err(ModelError::NotStochastic { row: i });
                }
                *merged.entry(j).or_insert(0.0) += p;
            }
            let sum: f64 = merged.values().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(ModelError::NotStochastic { row: i });
            }
            clean.push(merged.into_iter().filter(|&(_, p)| p > 0.0).collect());
        }
        Ok(Self { rows: clean, initial })
    }

    pub fn from_dense(matrix: &[Vec<f64>], initial: Vec<f64>) -> Result<Self, ModelError> {
        let rows = matrix
            .iter()
            .map(|r| r.iter().enumerate().filter(|&(_, &p)| p != 0.0).map(|(j, &p)| (j, p)).collect())
            .collect();
        Self::from_sparse(rows, initial)
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.rows[i].iter().find(|&&(k, _)| k == j).map(|&(_, p)| p).unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.num_states();
        self.rows
            .iter()
            .map(|row| {
                let mut dense = vec![0.0; n];
                for &(j, p) in row {
                    dense[j] = p;
                }
                dense
            })
            .collect()
    }

    pub fn with_initial(&self, initial: Vec<f64>) -> Self {
        Self { rows: self.rows.clone(), initial }
    }
}

/// `P^mu(i, j) = sum_a mu(i, a) P(j | i, a)`.
pub fn induce_chain(mdp: &Mdp, policy: &StationaryPolicy) -> Result<MarkovChain, ModelError> {
    if policy.num_states() != mdp.num_states() {
        return Err(ModelError::DimensionMismatch { mdp: mdp.num_states(), policy: policy.num_states() });
    }
    let mut rows = Vec::with_capacity(mdp.num_states());
    for s in 0..mdp.num_states() {
        let weights = policy.row(s);
        if weights.len() != mdp.num_actions(s) {
            return Err(ModelError::RowLengthMismatch { state: s, expected: mdp.num_actions(s), found: weights.len() });
        }
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (row, &w) in mdp.actions(s).iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            for &(t, p) in &row.successors {
                *acc.entry(t).or_insert(0.0) += w * p;
            }
        }
        rows.push(acc.into_iter().filter(|&(_, p)| p > 0.0).collect());
    }
    Ok(MarkovChain { rows, initial: mdp.initial().to_vec() })
}

/// A sub-MDP `(S, A)` of a parent MDP: a closed state subset with restricted,
/// nonempty action sets (local action indices of the parent).
#[derive(Debug, Clone, PartialEq)]
pub struct SubMdp<'a> {
    parent: &'a Mdp,
    states: Vec<usize>,
    actions: BTreeMap<usize, Vec<usize>>,
}

/// Restricts `mdp` to `subset` with per-state action sets from `action_map`.
///
/// States missing from `action_map` keep all their actions.
pub fn restrict<'a>(
    mdp: &'a Mdp,
    subset: &BTreeSet<usize>,
    action_map: &BTreeMap<usize, Vec<usize>>,
) -> Result<SubMdp<'a>, ModelError> {
    if subset.is_empty() {
        return Err(ModelError::EmptySubset);
    }
    let mut actions = BTreeMap::new();
    for &s in subset {
        if s >= mdp.num_states() {
            return Err(ModelError::UnknownState { state: s });
        }
        let mut allowed: Vec<usize> = match action_map.get(&s) {
            Some(list) => list.clone(),
            None => (0..mdp.num_actions(s)).collect(),
        };
        allowed.sort_unstable();
        allowed.dedup();
        if allowed.is_empty() {
            return Err(ModelError::EmptyActionSet { state: s });
        }
        for &a in &allowed {
            if a >= mdp.num_actions(s) {
                return Err(ModelError::UnknownAction { state: s, action: a });
            }
            if let Some(t) = mdp.succ(s, a).find(|t| !subset.contains(t)) {
                return Err(ModelError::NotClosed { state: s, action: a, target: t });
            }
        }
        actions.insert(s, allowed);
    }
    Ok(SubMdp { parent: mdp, states: subset.iter().copied().collect(), actions })
}

impl<'a> SubMdp<'a> {
    pub fn parent(&self) -> &'a Mdp {
        self.parent
    }

    /// Parent indices of the member states, ascending.
    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn contains(&self, s: usize) -> bool {
        self.actions.contains_key(&s)
    }

    /// Allowed local action indices (of the parent) at parent state `s`.
    pub fn actions(&self, s: usize) -> &[usize] {
        &self.actions[&s]
    }

    pub fn action_map(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.actions
    }

    /// Materializes the sub-MDP as a standalone [`Mdp`] plus the embedding
    /// `local state -> parent state`. The initial distribution is the parent's,
    /// restricted and renormalized; uniform if the parent puts no mass here.
    pub fn to_mdp(&self) -> Embedded {
        let index: BTreeMap<usize, usize> = self.states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let mut action_names: Vec<String> = Vec::new();
        let mut action_ids: BTreeMap<ActionId, usize> = BTreeMap::new();
        let mut rows = Vec::with_capacity(self.states.len());
        let mut action_embedding = Vec::with_capacity(self.states.len());
        for &s in &self.states {
            let allowed = &self.actions[&s];
            let mut state_rows = Vec::with_capacity(allowed.len());
            for &a in allowed {
                let row = &self.parent.actions(s)[a];
                let id = *action_ids.entry(row.action).or_insert_with(|| {
                    action_names.push(self.parent.action_name(row.action).to_string());
                    action_names.len() - 1
                });
                state_rows.push(ActionRow {
                    action: ActionId(id),
                    successors: row.successors.iter().map(|&(t, p)| (index[&t], p)).collect(),
                });
            }
            rows.push(state_rows);
            action_embedding.push(allowed.clone());
        }
        let mass: f64 = self.states.iter().map(|&s| self.parent.initial()[s]).sum();
        let initial = if mass > PROB_TOL {
            self.states.iter().map(|&s| self.parent.initial()[s] / mass).collect()
        } else {
            vec![1.0 / self.states.len() as f64; self.states.len()]
        };
        Embedded {
            mdp: Mdp {
                state_names: self.states.iter().map(|&s| self.parent.state_name(s).to_string()).collect(),
                action_names,
                rows,
                initial,
            },
            states: self.states.clone(),
            actions: action_embedding,
        }
    }
}

/// A standalone MDP carved out of a parent, with its embedding maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedded {
    pub mdp: Mdp,
    /// `states[i]` is the parent index of local state `i`.
    pub states: Vec<usize>,
    /// `actions[i][a]` is the parent local action index of local action `a` at state `i`.
    pub actions: Vec<Vec<usize>>,
}
