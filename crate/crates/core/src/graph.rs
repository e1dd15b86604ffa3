//! Reachability, SCCs, maximal end components, level classification and
//! almost-sure winning regions.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use crate::mdp::Mdp;

/// A maximal end component: a closed, strongly connected sub-MDP.
///
/// Action sets hold local action indices of the MDP the component was computed on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mec {
    pub states: Vec<usize>,
    pub actions: BTreeMap<usize, Vec<usize>>,
    pub accepting: bool,
}

impl Mec {
    pub fn contains(&self, s: usize) -> bool {
        self.actions.contains_key(&s)
    }
}

/// Adjacency lists of the union digraph (`s -> t` iff some action reaches `t`).
pub fn union_graph(mdp: &Mdp) -> Vec<Vec<usize>> {
    (0..mdp.num_states()).map(|s| mdp.union_successors(s)).collect()
}

/// States reachable from `s`, including `s`.
pub fn reach_set(mdp: &Mdp, s: usize) -> BTreeSet<usize> {
    let adj = union_graph(mdp);
    bfs(&adj, [s]).into_iter().enumerate().filter(|&(_, r)| r).map(|(t, _)| t).collect()
}

fn bfs(adj: &[Vec<usize>], sources: impl IntoIterator<Item = usize>) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::new();
    for s in sources {
        if !seen[s] {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(s) = queue.pop_front() {
        for &t in &adj[s] {
            if !seen[t] {
                seen[t] = true;
                queue.push_back(t);
            }
        }
    }
    seen
}

/// Strongly connected components by an iterative Tarjan.
///
/// Only vertices with `alive[v]` are visited and edges into dead vertices are
/// ignored. Components come out in reverse topological order (sinks first);
/// each component is sorted ascending.
pub fn tarjan_scc(adj: &[Vec<usize>], alive: &[bool]) -> Vec<Vec<usize>> {
    const UNSEEN: usize = usize::MAX;
    let n = adj.len();
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comps = Vec::new();
    let mut next = 0usize;
    let mut call: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if !alive[root] || index[root] != UNSEEN {
            continue;
        }
        call.push((root, 0));
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if *pos < adj[v].len() {
                let w = adj[v][*pos];
                *pos += 1;
                if !alive[w] {
                    continue;
                }
                if index[w] == UNSEEN {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack underflow");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    comps.push(comp);
                }
            }
        }
    }
    comps
}

/// Maximal end components, ordered by their smallest state. `accepting` is false;
/// use [`mark_accepting`] to set it for a target set.
pub fn mec_decomposition(mdp: &Mdp) -> Vec<Mec> {
    let n = mdp.num_states();
    let mut allowed: Vec<Vec<usize>> = (0..n).map(|s| (0..mdp.num_actions(s)).collect()).collect();
    let mut alive = vec![true; n];
    loop {
        let adj: Vec<Vec<usize>> = (0..n)
            .map(|s| {
                let set: BTreeSet<usize> = allowed[s].iter().flat_map(|&a| mdp.succ(s, a)).collect();
                set.into_iter().collect()
            })
            .collect();
        let comps = tarjan_scc(&adj, &alive);
        let mut comp_of = vec![usize::MAX; n];
        for (c, comp) in comps.iter().enumerate() {
            for &s in comp {
                comp_of[s] = c;
            }
        }
        let mut changed = false;
        for s in 0..n {
            if !alive[s] {
                continue;
            }
            let before = allowed[s].len();
            allowed[s].retain(|&a| mdp.succ(s, a).all(|t| alive[t] && comp_of[t] == comp_of[s]));
            if allowed[s].len() != before {
                changed = true;
            }
            if allowed[s].is_empty() {
                alive[s] = false;
                changed = true;
            }
        }
        if !changed {
            let mut mecs: Vec<Mec> = comps
                .into_iter()
                .filter(|comp| comp.iter().all(|&s| alive[s]))
                .map(|comp| Mec {
                    actions: comp.iter().map(|&s| (s, allowed[s].clone())).collect(),
                    states: comp,
                    accepting: false,
                })
                .collect();
            mecs.sort_by_key(|m| m.states[0]);
            return mecs;
        }
    }
}

/// Sets `accepting` on every MEC that intersects `target`.
pub fn mark_accepting(mecs: &mut [Mec], target: &BTreeSet<usize>) {
    for mec in mecs {
        mec.accepting = mec.states.iter().any(|s| target.contains(s));
    }
}

/// True iff a single MEC covers every state with every action.
pub fn is_communicating(mdp: &Mdp) -> bool {
    let mecs = mec_decomposition(mdp);
    mecs.len() == 1
        && mecs[0].states.len() == mdp.num_states()
        && mecs[0].actions.iter().all(|(&s, a)| a.len() == mdp.num_actions(s))
}

/// Level classification of MEC states and transient states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelDecomposition {
    pub mecs: Vec<Mec>,
    /// Level of each MEC, parallel to `mecs`.
    pub mec_level: Vec<usize>,
    /// `L_k`: states of the MECs at level `k`.
    pub mec_levels: Vec<BTreeSet<usize>>,
    /// `T_k`: transient states whose highest reachable MEC level is `k`.
    pub transient_levels: Vec<BTreeSet<usize>>,
    pub max_level: usize,
    /// Index into `mecs` for MEC states.
    pub mec_of: Vec<Option<usize>>,
}

impl LevelDecomposition {
    pub fn is_transient(&self, s: usize) -> bool {
        self.mec_of[s].is_none()
    }

    /// Level of any state (MEC level or transient level).
    pub fn level_of(&self, s: usize) -> usize {
        if let Some(m) = self.mec_of[s] {
            return self.mec_level[m];
        }
        self.transient_levels.iter().position(|t| t.contains(&s)).expect("state without level")
    }
}

/// Classifies MEC and transient states into levels.
///
/// A MEC gets level `1 + max` over the levels of the other MECs it can reach
/// (0 if none); a transient state gets the highest level among the MECs it can
/// reach. This is the fixpoint of peeling the contracted graph from the bottom.
/// MECs that reach each other are given a common level.
pub fn classify_levels(mdp: &Mdp, mecs: &[Mec]) -> LevelDecomposition {
    let n = mdp.num_states();
    let adj = union_graph(mdp);
    let comps = tarjan_scc(&adj, &vec![true; n]);
    let mut comp_of = vec![0usize; n];
    for (c, comp) in comps.iter().enumerate() {
        for &s in comp {
            comp_of[s] = c;
        }
    }
    let mut mec_of = vec![None; n];
    for (i, mec) in mecs.iter().enumerate() {
        for &s in &mec.states {
            mec_of[s] = Some(i);
        }
    }
    // Components arrive sinks first, so successors are finished before predecessors.
    // below[c]: highest MEC level strictly reachable from c through other components.
    // top[c]: highest MEC level reachable from c, including c itself.
    let mut below: Vec<Option<usize>> = vec![None; comps.len()];
    let mut top: Vec<Option<usize>> = vec![None; comps.len()];
    for (c, comp) in comps.iter().enumerate() {
        let mut best: Option<usize> = None;
        for &s in comp {
            for &t in &adj[s] {
                let d = comp_of[t];
                if d != c {
                    best = best.max(top[d]);
                }
            }
        }
        below[c] = best;
        let has_mec = comp.iter().any(|&s| mec_of[s].is_some());
        top[c] = if has_mec { Some(best.map_or(0, |b| b + 1)) } else { best };
    }
    let mec_level: Vec<usize> = mecs.iter().map(|m| top[comp_of[m.states[0]]].expect("MEC without level")).collect();
    let max_level = mec_level.iter().copied().max().unwrap_or(0);
    let mut mec_levels = vec![BTreeSet::new(); max_level + 1];
    for (i, mec) in mecs.iter().enumerate() {
        mec_levels[mec_level[i]].extend(mec.states.iter().copied());
    }
    let mut transient_levels = vec![BTreeSet::new(); max_level + 1];
    for s in 0..n {
        if mec_of[s].is_none() {
            let level = top[comp_of[s]].expect("every state reaches an end component");
            transient_levels[level].insert(s);
        }
    }
    let shared = mecs.len() - mecs.iter().map(|m| comp_of[m.states[0]]).collect::<BTreeSet<_>>().len();
    if shared > 0 {
        log::warn!("{shared} MEC(s) share a strongly connected component with another MEC; they share a level");
    }
    LevelDecomposition { mecs: mecs.to_vec(), mec_level, mec_levels, transient_levels, max_level, mec_of }
}

/// States from which the union of `amecs` is reachable with probability one
/// under some policy, with the actions that never leave that set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WinningRegion {
    pub states: BTreeSet<usize>,
    pub actions: BTreeMap<usize, Vec<usize>>,
}

/// Iterative removal: drop states that cannot reach the AMEC union, drop
/// actions that may enter dropped states, repeat until stable.
pub fn almost_sure_winning(mdp: &Mdp, amecs: &[Mec]) -> WinningRegion {
    let n = mdp.num_states();
    let mut target = vec![false; n];
    for mec in amecs {
        for &s in &mec.states {
            target[s] = true;
        }
    }
    let mut alive = vec![true; n];
    let mut allowed: Vec<Vec<usize>> = (0..n).map(|s| (0..mdp.num_actions(s)).collect()).collect();
    loop {
        // Backward reachability to the target over allowed actions between live states.
        let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
        for s in 0..n {
            if !alive[s] {
                continue;
            }
            for &a in &allowed[s] {
                for t in mdp.succ(s, a) {
                    rev[t].push(s);
                }
            }
        }
        let reaches = bfs(&rev, (0..n).filter(|&s| target[s] && alive[s]));
        let mut changed = false;
        for s in 0..n {
            if alive[s] && !reaches[s] {
                alive[s] = false;
                changed = true;
            }
        }
        for s in 0..n {
            if !alive[s] {
                continue;
            }
            let before = allowed[s].len();
            allowed[s].retain(|&a| mdp.succ(s, a).all(|t| alive[t]));
            if allowed[s].len() != before {
                changed = true;
            }
            if allowed[s].is_empty() {
                alive[s] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let states: BTreeSet<usize> = (0..n).filter(|&s| alive[s]).collect();
    let actions = states.iter().map(|&s| (s, allowed[s].clone())).collect();
    WinningRegion { states, actions }
}

/// Graphviz rendering of the contracted graph: one node per MEC, one per
/// transient state, clustered by level.
pub fn level_dot(mdp: &Mdp, levels: &LevelDecomposition) -> String {
    let node = |s: usize| match levels.mec_of[s] {
        Some(m) => format!("mec{m}"),
        None => format!("s{s}"),
    };
    let mut out = String::from("digraph levels {\n  rankdir=BT;\n");
    for k in 0..=levels.max_level {
        let _ = writeln!(out, "  subgraph cluster_{k} {{\n    label=\"level {k}\";");
        for (m, mec) in levels.mecs.iter().enumerate() {
            if levels.mec_level[m] == k {
                let names: Vec<&str> = mec.states.iter().map(|&s| mdp.state_name(s)).collect();
                let shape = if mec.accepting { "doubleoctagon" } else { "box" };
                let _ = writeln!(out, "    mec{m} [shape={shape}, label=\"L{k}: {{{}}}\"];", names.join(","));
            }
        }
        for &s in &levels.transient_levels[k] {
            let _ = writeln!(out, "    s{s} [shape=ellipse, label=\"T{k}: {}\"];", mdp.state_name(s));
        }
        out.push_str("  }\n");
    }
    let mut edges = BTreeSet::new();
    for s in 0..mdp.num_states() {
        for t in mdp.union_successors(s) {
            let (a, b) = (node(s), node(t));
            if a != b {
                edges.insert((a, b));
            }
        }
    }
    for (a, b) in edges {
        let _ = writeln!(out, "  {a} -> {b};");
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::tests::{det, five_state};
    use crate::mdp::{validate_mdp, RawAction, RawMdp};
    use proptest::prelude::*;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn reach_sets_of_five_state() {
        let mdp = five_state();
        assert_eq!(reach_set(&mdp, 3), set(&[0, 1, 2, 3, 4]));
        assert_eq!(reach_set(&mdp, 1), set(&[1]));
    }

    #[test]
    fn absorbing_state_reaches_itself() {
        let mdp = validate_mdp(RawMdp {
            state_names: vec!["a".into(), "b".into()],
            actions: vec![vec![det("x", 1)], vec![det("x", 1)]],
            initial: vec![1.0, 0.0],
        })
        .unwrap();
        assert_eq!(reach_set(&mdp, 1), set(&[1]));
        let mecs = mec_decomposition(&mdp);
        assert_eq!(mecs.len(), 1);
        assert_eq!(mecs[0].states, vec![1]);
    }

    #[test]
    fn five_state_mecs() {
        let mdp = five_state();
        let mecs = mec_decomposition(&mdp);
        let a = |s: usize, n: &str| mdp.local_action(s, n).unwrap();
        assert_eq!(mecs.len(), 3);
        assert_eq!(mecs[0].states, vec![1]);
        assert_eq!(mecs[0].actions[&1], vec![a(1, "a1")]);
        assert_eq!(mecs[1].states, vec![2]);
        assert_eq!(mecs[1].actions[&2], vec![a(2, "a3")]);
        assert_eq!(mecs[2].states, vec![3, 4]);
        assert_eq!(mecs[2].actions[&3], vec![a(3, "a3")]);
        // State 5 keeps its self-loop a2 as well as a1.
        assert_eq!(mecs[2].actions[&4], vec![a(4, "a1"), a(4, "a2")]);
        assert!(!is_communicating(&mdp));
    }

    #[test]
    fn five_state_levels() {
        let mdp = five_state();
        let levels = classify_levels(&mdp, &mec_decomposition(&mdp));
        assert_eq!(levels.max_level, 2);
        assert_eq!(levels.mec_levels, vec![set(&[1]), set(&[2]), set(&[3, 4])]);
        assert_eq!(levels.transient_levels, vec![set(&[0]), set(&[]), set(&[])]);
    }

    #[test]
    fn communicating_checks() {
        let cycle = validate_mdp(RawMdp {
            state_names: vec!["a".into(), "b".into()],
            actions: vec![vec![det("x", 1)], vec![det("x", 0)]],
            initial: vec![1.0, 0.0],
        })
        .unwrap();
        assert!(is_communicating(&cycle));
        let levels = classify_levels(&cycle, &mec_decomposition(&cycle));
        assert_eq!(levels.max_level, 0);
        assert!(levels.transient_levels[0].is_empty());

        let loops = validate_mdp(RawMdp {
            state_names: vec!["a".into(), "b".into()],
            actions: vec![vec![det("x", 0)], vec![det("x", 1)]],
            initial: vec![1.0, 0.0],
        })
        .unwrap();
        assert!(!is_communicating(&loops));
    }

    #[test]
    fn transient_feeders_are_level_zero() {
        // States 0..3 absorbing; 3 and 4 feed them.
        let mdp = validate_mdp(RawMdp {
            state_names: (0..5).map(|i| i.to_string()).collect(),
            actions: vec![
                vec![det("x", 0)],
                vec![det("x", 1)],
                vec![det("x", 2)],
                vec![RawAction::new("x", vec![(0, 0.5), (1, 0.5)])],
                vec![det("x", 2), det("y", 1)],
            ],
            initial: vec![0.0, 0.0, 0.0, 0.5, 0.5],
        })
        .unwrap();
        let levels = classify_levels(&mdp, &mec_decomposition(&mdp));
        assert_eq!(levels.max_level, 0);
        assert_eq!(levels.mec_levels[0], set(&[0, 1, 2]));
        assert_eq!(levels.transient_levels[0], set(&[3, 4]));
    }

    #[test]
    fn winning_region_examples() {
        let mdp = five_state();
        let mut mecs = mec_decomposition(&mdp);
        mark_accepting(&mut mecs, &set(&[1]));
        let amecs: Vec<Mec> = mecs.iter().filter(|m| m.accepting).cloned().collect();
        assert_eq!(almost_sure_winning(&mdp, &amecs).states, set(&[0, 1, 2, 3, 4]));

        mark_accepting(&mut mecs, &set(&[4]));
        let amecs: Vec<Mec> = mecs.iter().filter(|m| m.accepting).cloned().collect();
        // State 3 has no edge into {4, 5}; only the end component itself wins.
        let w = almost_sure_winning(&mdp, &amecs);
        assert_eq!(w.states, set(&[3, 4]));
        assert_eq!(w.actions[&3], vec![mdp.local_action(3, "a3").unwrap()]);
    }

    #[test]
    fn sink_trap_is_excluded() {
        // 0 -> {1 (accepting loop) w.p. .5, 2 (bad sink) w.p. .5} only.
        let mdp = validate_mdp(RawMdp {
            state_names: (0..3).map(|i| i.to_string()).collect(),
            actions: vec![
                vec![RawAction::new("x", vec![(1, 0.5), (2, 0.5)])],
                vec![det("x", 1)],
                vec![det("x", 2)],
            ],
            initial: vec![0.0, 1.0, 0.0],
        })
        .unwrap();
        let mut mecs = mec_decomposition(&mdp);
        mark_accepting(&mut mecs, &set(&[1]));
        let amecs: Vec<Mec> = mecs.into_iter().filter(|m| m.accepting).collect();
        assert_eq!(almost_sure_winning(&mdp, &amecs).states, set(&[1]));
    }

    #[test]
    fn deep_chain_does_not_overflow() {
        let n = 200_000;
        let adj: Vec<Vec<usize>> = (0..n).map(|i| vec![(i + 1) % n]).collect();
        let comps = tarjan_scc(&adj, &vec![true; n]);
        assert_eq!(comps.len(), 1);
    }

    #[test]
    fn dot_mentions_every_level() {
        let mdp = five_state();
        let levels = classify_levels(&mdp, &mec_decomposition(&mdp));
        let dot = level_dot(&mdp, &levels);
        assert!(dot.contains("level 2"));
        assert!(dot.contains("T0: 1"));
    }

    pub(crate) fn arb_mdp(max_states: usize, max_actions: usize) -> impl Strategy<Value = Mdp> {
        (1..=max_states).prop_flat_map(move |n| {
            let action = proptest::collection::vec((0..n, 1u32..4), 1..=3);
            proptest::collection::vec(proptest::collection::vec(action, 1..=max_actions), n).prop_map(move |blocks| {
                let actions = blocks
                    .into_iter()
                    .map(|acts| {
                        acts.into_iter()
                            .enumerate()
                            .map(|(i, succ)| {
                                let total: u32 = succ.iter().map(|&(_, w)| w).sum();
                                RawAction::new(
                                    format!("a{i}"),
                                    succ.into_iter().map(|(t, w)| (t, w as f64 / total as f64)).collect(),
                                )
                            })
                            .collect()
                    })
                    .collect();
                let mut initial = vec![0.0; n];
                initial[0] = 1.0;
                validate_mdp(RawMdp { state_names: (0..n).map(|i| format!("s{i}")).collect(), actions, initial }).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn mecs_are_closed_connected_and_disjoint(mdp in arb_mdp(8, 3)) {
            let mecs = mec_decomposition(&mdp);
            let mut seen = BTreeSet::new();
            for mec in &mecs {
                let subset: BTreeSet<usize> = mec.states.iter().copied().collect();
                for &s in &mec.states {
                    prop_assert!(seen.insert(s));
                    prop_assert!(!mec.actions[&s].is_empty());
                }
                let sub = crate::mdp::restrict(&mdp, &subset, &mec.actions).unwrap();
                let emb = sub.to_mdp();
                prop_assert!(is_communicating(&emb.mdp));
            }
        }

        #[test]
        fn levels_satisfy_reachability_conditions(mdp in arb_mdp(8, 3)) {
            let mecs = mec_decomposition(&mdp);
            let levels = classify_levels(&mdp, &mecs);
            let mut mec_states = BTreeSet::new();
            for l in &levels.mec_levels { mec_states.extend(l.iter().copied()); }
            let mut trans = BTreeSet::new();
            for t in &levels.transient_levels { trans.extend(t.iter().copied()); }
            prop_assert_eq!(mec_states.len() + trans.len(), mdp.num_states());
            for s in 0..mdp.num_states() {
                let k = levels.level_of(s);
                for t in reach_set(&mdp, s) {
                    if levels.mec_of[t].is_some() {
                        let kt = levels.level_of(t);
                        prop_assert!(kt <= k);
                        if let (Some(ms), Some(mt)) = (levels.mec_of[s], levels.mec_of[t]) {
                            if ms != mt && kt == k {
                                // Only MECs that reach each other may share a level this way.
                                prop_assert!(reach_set(&mdp, t).contains(&s));
                            }
                        }
                    }
                }
            }
            if is_communicating(&mdp) {
                prop_assert_eq!(levels.max_level, 0);
            }
        }

        #[test]
        fn winning_region_is_closed(mdp in arb_mdp(8, 3), pick in 0usize..8) {
            let target: BTreeSet<usize> = [pick % mdp.num_states()].into();
            let mut mecs = mec_decomposition(&mdp);
            mark_accepting(&mut mecs, &target);
            let amecs: Vec<Mec> = mecs.into_iter().filter(|m| m.accepting).collect();
            let w = almost_sure_winning(&mdp, &amecs);
            if !w.states.is_empty() {
                prop_assert!(crate::mdp::restrict(&mdp, &w.states, &w.actions).is_ok());
            }
        }
    }
}
