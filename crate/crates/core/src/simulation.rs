//! Monte Carlo trajectories, empirical entropy rates and a finite-horizon
//! surveillance monitor.
//!
//! Path `i` of a batch draws from its own `Xoshiro256PlusPlus` generator seeded
//! through SplitMix64 with `seed ^ (i * 0x9E3779B97F4A7C15)`, so batches are
//! reproducible regardless of how paths are scheduled on threads.

use std::collections::BTreeSet;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::chain::{local_entropy, row_entropy};
use crate::mdp::{MarkovChain, Mdp, StationaryPolicy};

const PATH_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Sampled paths of `(state, local action)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectoryBatch {
    pub seed: u64,
    pub num_paths: usize,
    pub horizon: usize,
    pub paths: Vec<Vec<(u32, u32)>>,
    /// Visits of each state over all steps of all paths.
    pub visit_counts: Vec<u64>,
}

pub fn path_seed(seed: u64, path: usize) -> u64 {
    seed ^ (path as u64).wrapping_mul(PATH_STRIDE)
}

fn draw(rng: &mut Xoshiro256PlusPlus, weights: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

fn sample_one(mdp: &Mdp, policy: &StationaryPolicy, horizon: usize, seed: u64) -> Vec<(u32, u32)> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut path = Vec::with_capacity(horizon);
    let mut s = draw(&mut rng, mdp.initial().iter().copied());
    for _ in 0..horizon {
        let a = draw(&mut rng, policy.row(s).iter().copied());
        path.push((s as u32, a as u32));
        let row = &mdp.actions(s)[a].successors;
        s = row[draw(&mut rng, row.iter().map(|&(_, p)| p))].0;
    }
    path
}

/// Samples `num_paths` independent paths of `horizon` steps.
pub fn sample_paths(mdp: &Mdp, policy: &StationaryPolicy, horizon: usize, num_paths: usize, seed: u64) -> TrajectoryBatch {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(num_paths.max(1));
    let mut paths: Vec<Vec<(u32, u32)>> = vec![Vec::new(); num_paths];
    let chunk = num_paths.div_ceil(threads).max(1);
    std::thread::scope(|scope| {
        for (c, slot) in paths.chunks_mut(chunk).enumerate() {
            scope.spawn(move || {
                for (k, path) in slot.iter_mut().enumerate() {
                    *path = sample_one(mdp, policy, horizon, path_seed(seed, c * chunk + k));
                }
            });
        }
    });
    let mut visit_counts = vec![0u64; mdp.num_states()];
    for path in &paths {
        for &(s, _) in path {
            visit_counts[s as usize] += 1;
        }
    }
    TrajectoryBatch { seed, num_paths, horizon, paths, visit_counts }
}

/// Pooled occupancy over the second half of every path.
pub fn second_half_occupancy(batch: &TrajectoryBatch, num_states: usize) -> Vec<f64> {
    let mut counts = vec![0u64; num_states];
    let mut total = 0u64;
    for path in &batch.paths {
        for &(s, _) in &path[path.len() / 2..] {
            counts[s as usize] += 1;
            total += 1;
        }
    }
    counts.into_iter().map(|c| if total > 0 { c as f64 / total as f64 } else { 0.0 }).collect()
}

/// `sum_s f(s) L(s)` with empirical second-half occupancy `f` and exact local entropies.
pub fn empirical_entropy_rate(batch: &TrajectoryBatch, chain: &MarkovChain) -> f64 {
    let f = second_half_occupancy(batch, chain.num_states());
    f.iter().enumerate().filter(|&(_, &p)| p > 0.0).map(|(s, &p)| p * local_entropy(chain, s)).sum()
}

/// Pure plug-in estimate from second-half transition counts.
pub fn plug_in_entropy_rate(batch: &TrajectoryBatch, num_states: usize) -> f64 {
    let mut counts: Vec<std::collections::BTreeMap<u32, u64>> = vec![Default::default(); num_states];
    let mut total = 0u64;
    for path in &batch.paths {
        let start = path.len() / 2;
        for w in path[start..].windows(2) {
            *counts[w[0].0 as usize].entry(w[1].0).or_insert(0) += 1;
            total += 1;
        }
    }
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .map(|row| {
            let n: u64 = row.values().sum();
            if n == 0 {
                return 0.0;
            }
            n as f64 / total as f64 * row_entropy(row.values().map(|&c| c as f64 / n as f64))
        })
        .sum()
}

/// Fraction of paths that visit `target` in every length-`window` block of
/// the second half, blocks aligned to the end of the path. When the window is
/// longer than half the path only the final block is checked.
pub fn surveillance_monitor(batch: &TrajectoryBatch, target: &BTreeSet<usize>, window: usize) -> f64 {
    if batch.paths.is_empty() {
        return 0.0;
    }
    let window = window.max(1);
    let passing = batch
        .paths
        .iter()
        .filter(|path| {
            let h = path.len();
            let mut end = h;
            let mut first = true;
            while end >= window && (first || end - window >= h / 2) {
                if !path[end - window..end].iter().any(|&(s, _)| target.contains(&(s as usize))) {
                    return false;
                }
                end -= window;
                first = false;
            }
            !first || h == 0
        })
        .count();
    passing as f64 / batch.paths.len() as f64
}

/// Writes `path_id,step,state,action` rows with state and action names.
pub fn write_csv(batch: &TrajectoryBatch, mdp: &Mdp, out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "path_id,step,state,action")?;
    for (i, path) in batch.paths.iter().enumerate() {
        for (step, &(s, a)) in path.iter().enumerate() {
            let s = s as usize;
            let action = mdp.action_name(mdp.actions(s)[a as usize].action);
            writeln!(out, "{i},{step},{},{action}", mdp.state_name(s))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::entropy_rate;
    use crate::mdp::tests::det;
    use crate::mdp::{induce_chain, validate_mdp, RawAction, RawMdp};

    fn two_state_coin() -> Mdp {
        validate_mdp(RawMdp {
            state_names: vec!["a".into(), "b".into()],
            actions: vec![
                vec![RawAction::new("flip", vec![(0, 0.5), (1, 0.5)])],
                vec![RawAction::new("flip", vec![(0, 0.5), (1, 0.5)])],
            ],
            initial: vec![1.0, 0.0],
        })
        .unwrap()
    }

    #[test]
    fn deterministic_paths_are_identical() {
        let mdp = validate_mdp(RawMdp {
            state_names: vec!["a".into(), "b".into()],
            actions: vec![vec![det("x", 1)], vec![det("x", 0)]],
            initial: vec![1.0, 0.0],
        })
        .unwrap();
        let policy = StationaryPolicy::uniform(&mdp);
        let batch = sample_paths(&mdp, &policy, 50, 5, 3);
        assert!(batch.paths.iter().all(|p| p == &batch.paths[0]));
        let chain = induce_chain(&mdp, &policy).unwrap();
        assert_eq!(empirical_entropy_rate(&batch, &chain), 0.0);
        assert_eq!(plug_in_entropy_rate(&batch, 2), 0.0);
    }

    #[test]
    fn coin_chain_frequencies_and_rate() {
        let mdp = two_state_coin();
        let policy = StationaryPolicy::uniform(&mdp);
        let batch = sample_paths(&mdp, &policy, 100_000, 1, 42);
        let total = batch.visit_counts.iter().sum::<u64>() as f64;
        assert!((batch.visit_counts[0] as f64 / total - 0.5).abs() < 0.01);
        let chain = induce_chain(&mdp, &policy).unwrap();
        assert!((empirical_entropy_rate(&batch, &chain) - 1.0).abs() < 0.02);
        assert!((plug_in_entropy_rate(&batch, 2) - 1.0).abs() < 0.02);
    }

    #[test]
    fn mixture_rate_across_paths() {
        // 0 -> {1,2} uniform pair (rate 1) w.p. .4, -> 3 absorbing w.p. .6.
        let mdp = validate_mdp(RawMdp {
            state_names: (0..4).map(|i| i.to_string()).collect(),
            actions: vec![
                vec![RawAction::new("x", vec![(1, 0.4), (3, 0.6)])],
                vec![RawAction::new("x", vec![(1, 0.5), (2, 0.5)])],
                vec![RawAction::new("x", vec![(1, 0.5), (2, 0.5)])],
                vec![det("x", 3)],
            ],
            initial: vec![1.0, 0.0, 0.0, 0.0],
        })
        .unwrap();
        let policy = StationaryPolicy::uniform(&mdp);
        let chain = induce_chain(&mdp, &policy).unwrap();
        assert!((entropy_rate(&chain).unwrap() - 0.4).abs() < 1e-12);
        let batch = sample_paths(&mdp, &policy, 2_000, 200, 5);
        assert!((empirical_entropy_rate(&batch, &chain) - 0.4).abs() < 0.03 * 3.0);
    }

    #[test]
    fn seeds_reproduce_batches() {
        let mdp = two_state_coin();
        let policy = StationaryPolicy::uniform(&mdp);
        let a = sample_paths(&mdp, &policy, 1000, 7, 9);
        let b = sample_paths(&mdp, &policy, 1000, 7, 9);
        assert_eq!(a, b);
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        write_csv(&a, &mdp, &mut ca).unwrap();
        write_csv(&b, &mdp, &mut cb).unwrap();
        assert_eq!(ca, cb);
        assert!(String::from_utf8(ca).unwrap().starts_with("path_id,step,state,action\n0,0,a,flip\n"));
        assert_ne!(a, sample_paths(&mdp, &policy, 1000, 7, 10));
    }

    #[test]
    fn monitor_examples() {
        let mdp = two_state_coin();
        let policy = StationaryPolicy::uniform(&mdp);
        let batch = sample_paths(&mdp, &policy, 10_000, 4, 1);
        assert_eq!(surveillance_monitor(&batch, &[0, 1].into(), 100), 1.0);

        let sink = validate_mdp(RawMdp {
            state_names: vec!["a".into(), "b".into()],
            actions: vec![vec![det("x", 1)], vec![det("x", 1)]],
            initial: vec![1.0, 0.0],
        })
        .unwrap();
        let batch = sample_paths(&sink, &StationaryPolicy::uniform(&sink), 1000, 3, 1);
        assert_eq!(surveillance_monitor(&batch, &[0].into(), 100), 0.0);
    }
}
