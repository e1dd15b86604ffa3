//! Level-by-level synthesis of a stationary policy that maximizes the entropy
//! rate while visiting a target set infinitely often with probability one.
//!
//! Pipeline: prune to the almost-sure winning region, decompose into MECs and
//! levels, compute stay values of accepting MECs, then settle states level by
//! level with an expected-total-reward LP whose boundary values are the
//! already settled states.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::chain::{self, ChainError};
use crate::graph::{self, LevelDecomposition, Mec};
use crate::mdp::{induce_chain, restrict, Embedded, MarkovChain, Mdp, StationaryPolicy};
use crate::solvers::lp::{solve_lp, LinearProgram, LpError};
use crate::unconstrained::{max_entropy_rate_policy, UnconstrainedError};

/// Constant added to every value before the level LPs so that finite values are positive.
pub const EPSILON_SHIFT: f64 = 1.0;
/// Occupation above which a state counts as visited by an LP solution.
pub const DECODE_THRESHOLD: f64 = 1e-9;
/// Ties between staying and leaving within this margin go to staying.
pub const TIE_TOL: f64 = 1e-9;

/// A real value or the `-inf` of a non-accepting end component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Finite(f64),
    NegInfinity,
}

impl Value {
    pub fn finite(self) -> Option<f64> {
        match self {
            Value::Finite(v) => Some(v),
            Value::NegInfinity => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Value::Finite(_))
    }

    pub fn shifted(self, by: f64) -> Value {
        match self {
            Value::Finite(v) => Value::Finite(v + by),
            Value::NegInfinity => Value::NegInfinity,
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Value::NegInfinity, Value::NegInfinity) => Some(Ordering::Equal),
            (Value::NegInfinity, _) => Some(Ordering::Less),
            (_, Value::NegInfinity) => Some(Ordering::Greater),
            (Value::Finite(a), Value::Finite(b)) => a.partial_cmp(b),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Finite(v) => write!(f, "{v}"),
            Value::NegInfinity => write!(f, "-inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthesisError {
    #[error("target set is empty")]
    EmptyTarget,
    #[error("target state {0} does not exist")]
    TargetOutOfRange(usize),
    #[error("no policy visits the target infinitely often with probability one from initial states {states:?}")]
    NoFeasiblePolicy { states: Vec<usize> },
    #[error("level {level}: {source}")]
    Lp { level: usize, source: LpError },
    #[error("stay value of MEC {mec}: {source}")]
    Stay { mec: usize, source: UnconstrainedError },
    #[error("level {level}: {source}")]
    Chain { level: usize, source: ChainError },
    #[error("level {level}: {detail}")]
    LevelInfeasible { level: usize, detail: String },
}

/// An MDP with a target set `B` to be visited infinitely often.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveillanceProblem {
    pub mdp: Mdp,
    pub target: BTreeSet<usize>,
}

impl SurveillanceProblem {
    pub fn new(mdp: Mdp, target: BTreeSet<usize>) -> Result<Self, SynthesisError> {
        if target.is_empty() {
            return Err(SynthesisError::EmptyTarget);
        }
        if let Some(&s) = target.iter().find(|&&s| s >= mdp.num_states()) {
            return Err(SynthesisError::TargetOutOfRange(s));
        }
        Ok(Self { mdp, target })
    }

    /// Every state is a target: plain entropy-rate maximization.
    pub fn unconstrained(mdp: Mdp) -> Self {
        let target = (0..mdp.num_states()).collect();
        Self { mdp, target }
    }
}

/// The winning region as a standalone MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct Pruned {
    pub embedded: Embedded,
    /// Target states in local indices.
    pub target: BTreeSet<usize>,
    /// Original states outside the winning region.
    pub excluded: Vec<usize>,
}

/// Restricts the problem to its almost-sure winning region.
pub fn prune_to_winning(problem: &SurveillanceProblem) -> Result<Pruned, SynthesisError> {
    let mdp = &problem.mdp;
    let mut mecs = graph::mec_decomposition(mdp);
    graph::mark_accepting(&mut mecs, &problem.target);
    let amecs: Vec<Mec> = mecs.into_iter().filter(|m| m.accepting).collect();
    let win = graph::almost_sure_winning(mdp, &amecs);
    let losing: Vec<usize> =
        (0..mdp.num_states()).filter(|s| mdp.initial()[*s] > 0.0 && !win.states.contains(s)).collect();
    if !losing.is_empty() {
        return Err(SynthesisError::NoFeasiblePolicy { states: losing });
    }
    let sub = restrict(mdp, &win.states, &win.actions).expect("winning region is closed under its actions");
    let embedded = sub.to_mdp();
    let target = embedded.states.iter().enumerate().filter(|(_, s)| problem.target.contains(s)).map(|(i, _)| i).collect();
    let excluded = (0..mdp.num_states()).filter(|s| !win.states.contains(s)).collect();
    Ok(Pruned { embedded, target, excluded })
}

/// Stay value of one MEC and the policy fragment that realizes it.
#[derive(Debug, Clone, PartialEq)]
pub struct Stay {
    pub value: Value,
    /// Policy rows over all local actions of each member state.
    pub rows: BTreeMap<usize, Vec<f64>>,
    pub solver_iterations: usize,
    pub gap: f64,
}

/// Maximal entropy rate inside each accepting MEC; `-inf` with the lowest
/// allowed action elsewhere.
pub fn stay_values(mdp: &Mdp, mecs: &[Mec]) -> Result<Vec<Stay>, SynthesisError> {
    mecs.iter()
        .enumerate()
        .map(|(i, mec)| {
            let point = |s: usize, a: usize| {
                let mut row = vec![0.0; mdp.num_actions(s)];
                row[a] = 1.0;
                row
            };
            if !mec.accepting {
                let rows = mec.actions.iter().map(|(&s, acts)| (s, point(s, acts[0]))).collect();
                return Ok(Stay { value: Value::NegInfinity, rows, solver_iterations: 0, gap: 0.0 });
            }
            let subset: BTreeSet<usize> = mec.states.iter().copied().collect();
            let emb = restrict(mdp, &subset, &mec.actions).expect("MEC is closed").to_mdp();
            let sol = max_entropy_rate_policy(&emb.mdp).map_err(|source| SynthesisError::Stay { mec: i, source })?;
            let rows = emb
                .states
                .iter()
                .enumerate()
                .map(|(local, &s)| {
                    let mut row = vec![0.0; mdp.num_actions(s)];
                    for (a, &p) in sol.policy.row(local).iter().enumerate() {
                        row[emb.actions[local][a]] = p;
                    }
                    (s, row)
                })
                .collect();
            Ok(Stay {
                value: Value::Finite(sol.entropy_rate_value),
                rows,
                solver_iterations: sol.iterations,
                gap: sol.gap,
            })
        })
        .collect()
}

/// Solution of one level LP.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelLpSolution {
    /// `gamma[s][a]` over all local actions of `s` (zero for excluded actions).
    pub gamma: BTreeMap<usize, Vec<f64>>,
    /// Mass absorbed by the stay column of each state that has one.
    pub stay: BTreeMap<usize, f64>,
    /// Actions whose successors stay inside `Q` and the boundary.
    pub allowed: BTreeMap<usize, Vec<usize>>,
    pub objective: f64,
    pub num_vars: usize,
    pub num_constraints: usize,
    pub iterations: usize,
    /// Expected flow into boundary states carrying `-inf`.
    pub sentinel_flow: f64,
}

/// Expected-total-reward LP over `Q` with boundary values on settled states.
///
/// Variables are `gamma(s, a) >= 0` for `s` in `Q`, plus one absorbing column
/// per entry of `stay` whose reward is that stay value. Each `s` in `Q`
/// satisfies `sum_a gamma(s, a) + z(s) - sum_{t in Q, a} gamma(t, a) P(s | t, a) <= alpha(s)`
/// with `alpha` uniform. The objective pays `val(t)` for each unit of flow
/// entering a boundary state `t`; `-inf` boundary values get the coefficient
/// `-(n * max_finite + 1)`.
pub fn level_lp(
    mdp: &Mdp,
    q: &BTreeSet<usize>,
    boundary: &BTreeMap<usize, Value>,
    stay: &BTreeMap<usize, f64>,
) -> Result<LevelLpSolution, LpError> {
    if q.is_empty() {
        return Ok(LevelLpSolution {
            gamma: BTreeMap::new(),
            stay: BTreeMap::new(),
            allowed: BTreeMap::new(),
            objective: 0.0,
            num_vars: 0,
            num_constraints: 0,
            iterations: 0,
            sentinel_flow: 0.0,
        });
    }
    let max_finite = boundary.values().filter_map(|v| v.finite()).chain(stay.values().copied()).fold(0.0f64, f64::max);
    let sentinel = -(mdp.num_states() as f64 * max_finite + 1.0);
    let reward = |t: usize| match boundary.get(&t) {
        Some(Value::Finite(v)) => *v,
        Some(Value::NegInfinity) => sentinel,
        None => 0.0,
    };
    let row_of: BTreeMap<usize, usize> = q.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut allowed: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut columns: Vec<(usize, Option<usize>)> = Vec::new();
    for &s in q {
        let acts: Vec<usize> = (0..mdp.num_actions(s))
            .filter(|&a| mdp.succ(s, a).all(|t| q.contains(&t) || boundary.contains_key(&t)))
            .collect();
        for &a in &acts {
            columns.push((s, Some(a)));
        }
        if stay.contains_key(&s) {
            columns.push((s, None));
        }
        allowed.insert(s, acts);
    }
    let alpha = 1.0 / q.len() as f64;
    let mut lp = LinearProgram::new(columns.len());
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); q.len()];
    for (j, &(s, a)) in columns.iter().enumerate() {
        rows[row_of[&s]].push((j, 1.0));
        match a {
            Some(a) => {
                let mut c = 0.0;
                for &(t, p) in &mdp.actions(s)[a].successors {
                    if let Some(&r) = row_of.get(&t) {
                        rows[r].push((j, -p));
                    } else {
                        c += p * reward(t);
                    }
                }
                lp.objective[j] = c;
            }
            None => lp.objective[j] = stay[&s],
        }
    }
    for coefs in rows {
        lp.add_le(coefs, alpha);
    }
    let sol = solve_lp(&lp)?;
    let mut gamma: BTreeMap<usize, Vec<f64>> = q.iter().map(|&s| (s, vec![0.0; mdp.num_actions(s)])).collect();
    let mut stay_mass = BTreeMap::new();
    let mut sentinel_flow = 0.0;
    for (j, &(s, a)) in columns.iter().enumerate() {
        let x = sol.x[j];
        match a {
            Some(a) => {
                gamma.get_mut(&s).expect("row exists")[a] = x;
                for &(t, p) in &mdp.actions(s)[a].successors {
                    if boundary.get(&t) == Some(&Value::NegInfinity) {
                        sentinel_flow += x * p;
                    }
                }
            }
            None => {
                stay_mass.insert(s, x);
            }
        }
    }
    Ok(LevelLpSolution {
        gamma,
        stay: stay_mass,
        allowed,
        objective: sol.objective,
        num_vars: columns.len(),
        num_constraints: q.len(),
        iterations: sol.iterations,
        sentinel_flow,
    })
}

/// Policy read off an LP solution.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPolicy {
    pub rows: BTreeMap<usize, Vec<f64>>,
    /// States with positive action occupation.
    pub q_star: BTreeSet<usize>,
    /// States whose stay column carries mass.
    pub staying: BTreeSet<usize>,
}

/// `mu(s, a) = gamma(s, a) / sum_a gamma(s, a)` on visited states; the lowest
/// allowed action elsewhere.
pub fn decode_policy(mdp: &Mdp, sol: &LevelLpSolution, q: &BTreeSet<usize>) -> DecodedPolicy {
    let mut rows = BTreeMap::new();
    let mut q_star = BTreeSet::new();
    for &s in q {
        let gamma = &sol.gamma[&s];
        let total: f64 = gamma.iter().sum();
        let row = if total > DECODE_THRESHOLD {
            q_star.insert(s);
            gamma.iter().map(|g| g / total).collect()
        } else {
            let a = sol.allowed.get(&s).and_then(|acts| acts.first().copied()).unwrap_or(0);
            let mut row = vec![0.0; mdp.num_actions(s)];
            row[a] = 1.0;
            row
        };
        rows.insert(s, row);
    }
    let staying = sol.stay.iter().filter(|(_, &z)| z > DECODE_THRESHOLD).map(|(&s, _)| s).collect();
    DecodedPolicy { rows, q_star, staying }
}

/// Expected boundary value collected from each state of `active` under `rows`.
///
/// States that never reach the boundary, or may reach a `-inf` boundary, get `-inf`.
pub fn transient_values(
    mdp: &Mdp,
    rows: &BTreeMap<usize, Vec<f64>>,
    active: &BTreeSet<usize>,
    boundary: &BTreeMap<usize, Value>,
) -> Result<BTreeMap<usize, Value>, ChainError> {
    let n = mdp.num_states();
    let mut sparse: Vec<Vec<(usize, f64)>> = (0..n).map(|s| vec![(s, 1.0)]).collect();
    for &s in active {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (row, &w) in mdp.actions(s).iter().zip(&rows[&s]) {
            if w > 0.0 {
                for &(t, p) in &row.successors {
                    *acc.entry(t).or_insert(0.0) += w * p;
                }
            }
        }
        sparse[s] = acc.into_iter().collect();
    }
    let mc = MarkovChain::from_sparse(sparse, vec![1.0 / n as f64; n])?;
    // Backward search from the finite boundary.
    let mut reaches = BTreeSet::new();
    let mut bad: BTreeSet<usize> = boundary.iter().filter(|(_, v)| !v.is_finite()).map(|(&s, _)| s).collect();
    let mut changed = true;
    while changed {
        changed = false;
        for &s in active {
            if reaches.contains(&s) {
                continue;
            }
            let hits = mc.row(s).iter().any(|&(t, _)| {
                reaches.contains(&t) || matches!(boundary.get(&t), Some(Value::Finite(_)))
            });
            if hits {
                reaches.insert(s);
                changed = true;
            }
        }
    }
    bad.extend(active.iter().copied().filter(|s| !reaches.contains(s)));
    // Anything that can enter a bad state inherits -inf.
    changed = true;
    while changed {
        changed = false;
        for &s in active {
            if !bad.contains(&s) && mc.row(s).iter().any(|&(t, _)| bad.contains(&t)) {
                bad.insert(s);
                changed = true;
            }
        }
    }
    let good: BTreeSet<usize> = active.iter().copied().filter(|s| !bad.contains(s)).collect();
    let finite: BTreeMap<usize, f64> = boundary.iter().filter_map(|(&s, v)| v.finite().map(|x| (s, x))).collect();
    let solved = chain::transient_value_solve(&mc, &good, &finite)?;
    Ok(active
        .iter()
        .map(|&s| (s, solved.get(&s).map_or(Value::NegInfinity, |&v| Value::Finite(v))))
        .collect())
}

/// Whether an accepting MEC keeps its stay policy or leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MecChoice {
    Stay,
    Leave,
}

/// Chooses per MEC between staying and the decoded policy.
///
/// A MEC leaves only if the decoded value exceeds its stay value at every
/// member state by more than [`TIE_TOL`]; ties go to staying.
pub fn fuse_level(
    mecs: &[(usize, &Mec)],
    stays: &[Stay],
    decoded: &DecodedPolicy,
    v_prime: &BTreeMap<usize, Value>,
) -> BTreeMap<usize, MecChoice> {
    mecs.iter()
        .map(|&(i, mec)| {
            let choice = match stays[i].value {
                Value::NegInfinity => MecChoice::Leave,
                Value::Finite(stay) => {
                    let stay = stay + EPSILON_SHIFT;
                    let lp_stays = mec.states.iter().any(|s| decoded.staying.contains(s));
                    let better = mec.states.iter().all(|s| match v_prime.get(s) {
                        Some(Value::Finite(v)) => *v > stay + TIE_TOL,
                        _ => false,
                    });
                    if !lp_stays && better {
                        MecChoice::Leave
                    } else {
                        MecChoice::Stay
                    }
                }
            };
            (i, choice)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MecReport {
    /// Original state indices.
    pub states: Vec<usize>,
    pub accepting: bool,
    pub level: usize,
    pub stay: Value,
    pub choice: MecChoice,
    pub solver_iterations: usize,
    pub solver_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelReport {
    pub level: usize,
    /// Original indices of the states settled by this LP.
    pub settled: Vec<usize>,
    pub lp_vars: usize,
    pub lp_constraints: usize,
    pub lp_iterations: usize,
    pub lp_objective: f64,
    pub mecs_staying: usize,
    pub mecs_leaving: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub winning: Vec<usize>,
    /// States outside the winning region; their policy is the lowest-index action.
    pub excluded: Vec<usize>,
    pub mecs: Vec<MecReport>,
    pub levels: Vec<LevelReport>,
    pub max_level: usize,
    /// Values (shift removed) of all settled original states after each LP.
    pub level_values: Vec<BTreeMap<usize, Value>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub policy: StationaryPolicy,
    /// Achieved entropy rate from each state; `-inf` outside the winning region.
    pub value_map: Vec<Value>,
    /// `sum_s pi0(s) value(s)`.
    pub global_rate: f64,
    /// Entropy rate of the induced chain, computed independently of the values.
    pub induced_rate: f64,
    pub diagnostics: Diagnostics,
}

/// Full pipeline: prune, classify, stay values, level LPs, fuse.
pub fn synthesize(problem: &SurveillanceProblem) -> Result<SynthesisResult, SynthesisError> {
    let pruned = prune_to_winning(problem)?;
    let pm = &pruned.embedded.mdp;
    let n = pm.num_states();
    let to_orig = &pruned.embedded.states;

    let mut mecs = graph::mec_decomposition(pm);
    graph::mark_accepting(&mut mecs, &pruned.target);
    let levels = graph::classify_levels(pm, &mecs);
    let stays = stay_values(pm, &mecs)?;
    log::info!(
        "winning region {} of {} states, {} MECs ({} accepting), level {}",
        n,
        problem.mdp.num_states(),
        mecs.len(),
        mecs.iter().filter(|m| m.accepting).count(),
        levels.max_level
    );

    let mut val: Vec<Option<Value>> = vec![None; n];
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut choice: Vec<MecChoice> = mecs.iter().map(|m| if m.accepting { MecChoice::Stay } else { MecChoice::Leave }).collect();
    for (i, mec) in mecs.iter().enumerate() {
        if levels.mec_level[i] == 0 {
            for &s in &mec.states {
                val[s] = Some(stays[i].value.shifted(EPSILON_SHIFT));
                rows[s] = Some(stays[i].rows[&s].clone());
            }
        }
    }
    let mut diagnostics = Diagnostics {
        winning: to_orig.clone(),
        excluded: pruned.excluded.clone(),
        max_level: levels.max_level,
        ..Default::default()
    };
    diagnostics.level_values.push(snapshot(&val, to_orig));

    let lookahead = same_level_transients(pm, &levels);
    for k in 0..=levels.max_level {
        let next = k + 1;
        let mut q: BTreeSet<usize> = levels.transient_levels[k].iter().copied().filter(|&s| val[s].is_none()).collect();
        let level_mecs: Vec<(usize, &Mec)> =
            mecs.iter().enumerate().filter(|(i, _)| levels.mec_level[*i] == next).collect();
        for (_, mec) in &level_mecs {
            q.extend(mec.states.iter().copied());
        }
        if let Some(x) = lookahead.get(&next) {
            q.extend(x.iter().copied());
        }
        if q.is_empty() {
            diagnostics.level_values.push(snapshot(&val, to_orig));
            continue;
        }
        let boundary: BTreeMap<usize, Value> = (0..n).filter_map(|s| val[s].map(|v| (s, v))).collect();
        let mut stay_cols = BTreeMap::new();
        for &(i, mec) in &level_mecs {
            if let Value::Finite(v) = stays[i].value {
                for &s in &mec.states {
                    stay_cols.insert(s, v + EPSILON_SHIFT);
                }
            }
        }
        let sol = level_lp(pm, &q, &boundary, &stay_cols).map_err(|source| SynthesisError::Lp { level: k, source })?;
        if sol.sentinel_flow > DECODE_THRESHOLD {
            return Err(SynthesisError::LevelInfeasible {
                level: k,
                detail: format!("optimal flow {:.3e} enters a non-accepting end component", sol.sentinel_flow),
            });
        }
        let decoded = decode_policy(pm, &sol, &q);

        // Values of the decoded policy with staying MECs treated as absorbing.
        let evaluate = |stayers: &BTreeSet<usize>| -> Result<BTreeMap<usize, Value>, SynthesisError> {
            let mut bnd = boundary.clone();
            for &s in stayers {
                bnd.insert(s, Value::Finite(stay_cols[&s]));
            }
            let active: BTreeSet<usize> = q.difference(stayers).copied().collect();
            let mut v = transient_values(pm, &decoded.rows, &active, &bnd)
                .map_err(|source| SynthesisError::Chain { level: k, source })?;
            for &s in stayers {
                v.insert(s, Value::Finite(stay_cols[&s]));
            }
            Ok(v)
        };
        let lp_stayers: BTreeSet<usize> = level_mecs
            .iter()
            .filter(|(_, m)| m.states.iter().any(|s| decoded.staying.contains(s)))
            .flat_map(|(_, m)| m.states.iter().copied())
            .collect();
        let v_prime = evaluate(&lp_stayers)?;
        let fused = fuse_level(&level_mecs, &stays, &decoded, &v_prime);
        let stayers: BTreeSet<usize> = level_mecs
            .iter()
            .filter(|(i, _)| fused[i] == MecChoice::Stay)
            .flat_map(|(_, m)| m.states.iter().copied())
            .collect();
        let values = if stayers == lp_stayers { v_prime } else { evaluate(&stayers)? };
        if let Some((&s, _)) = values.iter().find(|(_, v)| !v.is_finite()) {
            return Err(SynthesisError::LevelInfeasible {
                level: k,
                detail: format!("state {} cannot reach a settled state", pm.state_name(s)),
            });
        }
        let mut staying_count = 0;
        for &(i, mec) in &level_mecs {
            choice[i] = fused[&i];
            if fused[&i] == MecChoice::Stay {
                staying_count += 1;
                for &s in &mec.states {
                    rows[s] = Some(stays[i].rows[&s].clone());
                }
            }
        }
        for &s in &q {
            if !stayers.contains(&s) {
                rows[s] = Some(decoded.rows[&s].clone());
            }
            val[s] = Some(values[&s]);
        }
        diagnostics.levels.push(LevelReport {
            level: k,
            settled: q.iter().map(|&s| to_orig[s]).collect(),
            lp_vars: sol.num_vars,
            lp_constraints: sol.num_constraints,
            lp_iterations: sol.iterations,
            lp_objective: sol.objective,
            mecs_staying: staying_count,
            mecs_leaving: level_mecs.len() - staying_count,
        });
        diagnostics.level_values.push(snapshot(&val, to_orig));
        log::debug!("level {k}: settled {} states, LP {} vars / {} pivots", q.len(), sol.num_vars, sol.iterations);
    }

    for (i, mec) in mecs.iter().enumerate() {
        diagnostics.mecs.push(MecReport {
            states: mec.states.iter().map(|&s| to_orig[s]).collect(),
            accepting: mec.accepting,
            level: levels.mec_level[i],
            stay: stays[i].value,
            choice: choice[i],
            solver_iterations: stays[i].solver_iterations,
            solver_gap: stays[i].gap,
        });
    }

    // Lift back to the original MDP.
    let mdp = &problem.mdp;
    let mut full_rows: Vec<Vec<f64>> = (0..mdp.num_states())
        .map(|s| {
            let mut row = vec![0.0; mdp.num_actions(s)];
            row[0] = 1.0;
            row
        })
        .collect();
    let mut value_map = vec![Value::NegInfinity; mdp.num_states()];
    for local in 0..n {
        let s = to_orig[local];
        let local_row = rows[local].as_ref().expect("every winning state is settled");
        let mut row = vec![0.0; mdp.num_actions(s)];
        for (a, &p) in local_row.iter().enumerate() {
            row[pruned.embedded.actions[local][a]] = p;
        }
        full_rows[s] = row;
        value_map[s] = val[local].expect("every winning state has a value").shifted(-EPSILON_SHIFT);
    }
    let policy = StationaryPolicy::new(mdp, full_rows).expect("rows are distributions");
    let global_rate: f64 = mdp
        .initial()
        .iter()
        .zip(&value_map)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, v)| p * v.finite().expect("initial states are winning"))
        .sum();
    let chain = induce_chain(mdp, &policy).expect("policy matches MDP");
    let induced_rate = chain::entropy_rate(&chain).map_err(|source| SynthesisError::Chain { level: levels.max_level, source })?;
    if (induced_rate - global_rate).abs() > 1e-5 {
        log::warn!("value-based rate {global_rate} differs from induced rate {induced_rate}");
    }
    Ok(SynthesisResult { policy, value_map, global_rate, induced_rate, diagnostics })
}

fn snapshot(val: &[Option<Value>], to_orig: &[usize]) -> BTreeMap<usize, Value> {
    val.iter()
        .enumerate()
        .filter_map(|(s, v)| v.map(|v| (to_orig[s], v.shifted(-EPSILON_SHIFT))))
        .collect()
}

/// Transient states of level `k` reachable from a level-`k` MEC, keyed by `k`.
/// They are settled together with those MECs.
fn same_level_transients(mdp: &Mdp, levels: &LevelDecomposition) -> BTreeMap<usize, BTreeSet<usize>> {
    let adj = graph::union_graph(mdp);
    let mut out: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for k in 1..=levels.max_level {
        let mut seen: BTreeSet<usize> = levels.mec_levels[k].clone();
        let mut stack: Vec<usize> = seen.iter().copied().collect();
        while let Some(s) = stack.pop() {
            for &t in &adj[s] {
                if levels.transient_levels[k].contains(&t) && seen.insert(t) {
                    stack.push(t);
                }
            }
        }
        let x: BTreeSet<usize> = seen.intersection(&levels.transient_levels[k]).copied().collect();
        if !x.is_empty() {
            out.insert(k, x);
        }
    }
    out
}

/// Checks the surveillance condition on the induced chain: every recurrent
/// class reachable from `supp(pi0)` meets `target`, and the absorption
/// probability into such classes is one. Returns that absorption probability
/// and whether every reachable class is accepting.
pub fn surveillance_check(mdp: &Mdp, policy: &StationaryPolicy, target: &BTreeSet<usize>) -> Result<(f64, bool), ChainError> {
    let chain = induce_chain(mdp, policy)?;
    let structure = chain::chain_structure(&chain)?;
    let adj: Vec<Vec<usize>> = (0..chain.num_states()).map(|s| chain.row(s).iter().map(|&(t, _)| t).collect()).collect();
    let mut seen = vec![false; chain.num_states()];
    let mut stack: Vec<usize> = (0..chain.num_states()).filter(|&s| chain.initial()[s] > 0.0).collect();
    for &s in &stack {
        seen[s] = true;
    }
    while let Some(s) = stack.pop() {
        for &t in &adj[s] {
            if !seen[t] {
                seen[t] = true;
                stack.push(t);
            }
        }
    }
    let mut all_accepting = true;
    let mut absorbed = 0.0;
    for (k, class) in structure.recurrent_classes.iter().enumerate() {
        let accepting = class.iter().any(|s| target.contains(s));
        if seen[class[0]] && !accepting {
            all_accepting = false;
        }
        if accepting {
            absorbed += structure.beta[k];
        }
    }
    Ok((absorbed, all_accepting))
}
