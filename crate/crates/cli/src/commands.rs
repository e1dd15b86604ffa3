//! Command implementations. Each returns the text it prints on success.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use maxent_mdp::case_study::{build_workspace, Layout};
use maxent_mdp::chain::{chain_observation_cost, chain_structure, limit_from_structure};
use maxent_mdp::constrained::MecChoice;
use maxent_mdp::graph::{level_dot, mark_accepting};
use maxent_mdp::simulation::{empirical_entropy_rate, plug_in_entropy_rate, sample_paths, surveillance_monitor, write_csv};
use maxent_mdp::text::fmt12;
use maxent_mdp::{
    almost_sure_winning, classify_levels, induce_chain, is_communicating, mec_decomposition, synthesize, Mdp,
    ObservationModel, ObservationOptions, StationaryPolicy, SurveillanceProblem, SynthesisError, SynthesisResult,
};
use thiserror::Error;

use crate::format::{parse_mdp, parse_policy, parse_target, target_line, write_mdp, write_policy, ParseError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Input(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("solver failure: {0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Io { .. } | CliError::Input(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Solver(_) => 4,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io { path: path.into(), source })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Io { path: path.into(), source })
}

fn parse_err(path: &Path) -> impl FnOnce(ParseError) -> CliError + '_ {
    move |source| CliError::Parse { path: path.into(), source }
}

pub fn load_mdp(path: &Path) -> Result<(Mdp, Option<BTreeSet<usize>>), CliError> {
    let file = parse_mdp(&read(path)?).map_err(parse_err(path))?;
    Ok((file.mdp, file.target))
}

/// `--target FILE` overrides a `target` line of the MDP file.
fn resolve_target(mdp: &Mdp, inline: Option<BTreeSet<usize>>, file: Option<&Path>) -> Result<Option<BTreeSet<usize>>, CliError> {
    match file {
        Some(path) => Ok(Some(parse_target(&read(path)?, mdp).map_err(parse_err(path))?)),
        None => Ok(inline),
    }
}

fn names(mdp: &Mdp, states: impl IntoIterator<Item = usize>) -> String {
    let v: Vec<&str> = states.into_iter().map(|s| mdp.state_name(s)).collect();
    format!("{{{}}}", v.join(", "))
}

pub struct AnalyzeArgs<'a> {
    pub input: &'a Path,
    pub target: Option<&'a Path>,
    pub dot: Option<&'a Path>,
}

pub fn analyze(args: &AnalyzeArgs) -> Result<String, CliError> {
    let (mdp, inline) = load_mdp(args.input)?;
    let target = resolve_target(&mdp, inline, args.target)?;
    let mut mecs = mec_decomposition(&mdp);
    if let Some(t) = &target {
        mark_accepting(&mut mecs, t);
    }
    let levels = classify_levels(&mdp, &mecs);
    let mut out = String::new();
    let pairs: usize = (0..mdp.num_states()).map(|s| mdp.num_actions(s)).sum();
    let _ = writeln!(out, "states: {}", mdp.num_states());
    let _ = writeln!(out, "state-action pairs: {pairs}");
    let _ = writeln!(out, "edges: {}", mdp.edge_count());
    let _ = writeln!(out, "communicating: {}", is_communicating(&mdp));
    let _ = writeln!(out, "mecs: {}", mecs.len());
    for (i, mec) in mecs.iter().enumerate() {
        let acts: Vec<String> = mec
            .actions
            .iter()
            .map(|(&s, a)| {
                let an: Vec<&str> = a.iter().map(|&a| mdp.action_name(mdp.actions(s)[a].action)).collect();
                format!("{}: [{}]", mdp.state_name(s), an.join(", "))
            })
            .collect();
        let _ = writeln!(out, "mec {i}: states {}; actions {{{}}}", names(&mdp, mec.states.iter().copied()), acts.join(", "));
    }
    let _ = writeln!(out, "levels: {}", levels.max_level);
    for k in 0..=levels.max_level {
        let _ = writeln!(out, "L{k}: {}", names(&mdp, levels.mec_levels[k].iter().copied()));
        let _ = writeln!(out, "T{k}: {}", names(&mdp, levels.transient_levels[k].iter().copied()));
    }
    if let Some(t) = &target {
        let amecs: Vec<_> = mecs.iter().filter(|m| m.accepting).cloned().collect();
        let _ = writeln!(out, "target: {}", names(&mdp, t.iter().copied()));
        let _ = writeln!(out, "amecs: {}", amecs.len());
        for (i, mec) in mecs.iter().enumerate().filter(|(_, m)| m.accepting) {
            let _ = writeln!(out, "amec {i}: {}", names(&mdp, mec.states.iter().copied()));
        }
        let win = almost_sure_winning(&mdp, &amecs);
        let _ = writeln!(out, "winning: {}", names(&mdp, win.states.iter().copied()));
    }
    if let Some(path) = args.dot {
        write(path, &level_dot(&mdp, &levels))?;
    }
    Ok(out)
}

pub struct SynthesizeArgs<'a> {
    pub input: &'a Path,
    pub target: Option<&'a Path>,
    pub unconstrained: bool,
    pub min_probes_one: bool,
    pub huffman: bool,
    pub out: Option<&'a Path>,
}

fn observation_options(min_probes_one: bool, huffman: bool) -> ObservationOptions {
    let model = if huffman { ObservationModel::HuffmanCode } else { ObservationModel::SequentialProbe };
    ObservationOptions { model, min_probes_one }
}

fn map_synthesis(mdp: &Mdp, e: SynthesisError) -> CliError {
    match e {
        SynthesisError::NoFeasiblePolicy { states } => {
            CliError::Infeasible(format!("no almost-sure policy from initial states {}", names(mdp, states)))
        }
        SynthesisError::EmptyTarget | SynthesisError::TargetOutOfRange(_) => CliError::Input(e.to_string()),
        other => CliError::Solver(other.to_string()),
    }
}

/// Structured text report of a synthesis result.
pub fn metrics(mdp: &Mdp, result: &SynthesisResult, options: ObservationOptions) -> Result<String, CliError> {
    let chain = induce_chain(mdp, &result.policy).map_err(|e| CliError::Solver(e.to_string()))?;
    let structure = chain_structure(&chain).map_err(|e| CliError::Solver(e.to_string()))?;
    let pi = limit_from_structure(mdp.num_states(), &structure);
    let cost = chain_observation_cost(&chain, &pi, options);
    let d = &result.diagnostics;
    let mut out = String::new();
    let _ = writeln!(out, "global_rate: {}", fmt12(result.global_rate));
    let _ = writeln!(out, "induced_rate: {}", fmt12(result.induced_rate));
    let model = match options.model {
        ObservationModel::HuffmanCode => "huffman",
        ObservationModel::SequentialProbe => "sequential-probe",
    };
    let _ = writeln!(out, "observation_model: {model}");
    let _ = writeln!(out, "min_probes_one: {}", options.min_probes_one);
    let _ = writeln!(out, "observation_cost: {}", fmt12(cost));
    let _ = writeln!(out, "winning_states: {}", d.winning.len());
    let _ = writeln!(out, "excluded: {}", names(mdp, d.excluded.iter().copied()));
    let _ = writeln!(out, "max_level: {}", d.max_level);
    for l in &d.levels {
        let _ = writeln!(
            out,
            "level {}: settled {}, lp_vars {}, lp_constraints {}, lp_iterations {}, lp_objective {}, mecs_staying {}, mecs_leaving {}",
            l.level,
            l.settled.len(),
            l.lp_vars,
            l.lp_constraints,
            l.lp_iterations,
            fmt12(l.lp_objective),
            l.mecs_staying,
            l.mecs_leaving
        );
    }
    for (i, m) in d.mecs.iter().enumerate() {
        let stay = m.stay.finite().map_or_else(|| "-inf".to_string(), fmt12);
        let choice = match m.choice {
            MecChoice::Stay => "stay",
            MecChoice::Leave => "leave",
        };
        let _ = writeln!(
            out,
            "mec {i}: level {}, accepting {}, states {}, stay {stay}, choice {choice}, solver_iterations {}, solver_gap {}",
            m.level,
            m.accepting,
            m.states.len(),
            m.solver_iterations,
            fmt12(m.solver_gap)
        );
    }
    for (s, v) in result.value_map.iter().enumerate() {
        let v = v.finite().map_or_else(|| "-inf".to_string(), fmt12);
        let _ = writeln!(out, "value {}: {v}", mdp.state_name(s));
    }
    Ok(out)
}

fn run_synthesis(mdp: &Mdp, target: Option<BTreeSet<usize>>, unconstrained: bool) -> Result<SynthesisResult, CliError> {
    let problem = if unconstrained {
        SurveillanceProblem::unconstrained(mdp.clone())
    } else {
        let target = target.ok_or_else(|| CliError::Input("no target: pass --target FILE or --unconstrained".into()))?;
        SurveillanceProblem::new(mdp.clone(), target).map_err(|e| map_synthesis(mdp, e))?
    };
    synthesize(&problem).map_err(|e| map_synthesis(mdp, e))
}

pub fn synthesize_cmd(args: &SynthesizeArgs) -> Result<String, CliError> {
    let (mdp, inline) = load_mdp(args.input)?;
    let target = resolve_target(&mdp, inline, args.target)?;
    let result = run_synthesis(&mdp, target, args.unconstrained)?;
    let report = metrics(&mdp, &result, observation_options(args.min_probes_one, args.huffman))?;
    if let Some(dir) = args.out {
        create_dir(dir)?;
        write(&dir.join("policy.txt"), &write_policy(&mdp, &result.policy))?;
        write(&dir.join("metrics.txt"), &report)?;
    }
    Ok(report)
}

pub struct SimulateArgs<'a> {
    pub input: &'a Path,
    pub policy: &'a Path,
    pub target: Option<&'a Path>,
    pub horizon: usize,
    pub paths: usize,
    pub seed: u64,
    pub window: usize,
    pub out: Option<&'a Path>,
}

pub fn simulate(args: &SimulateArgs) -> Result<String, CliError> {
    let (mdp, inline) = load_mdp(args.input)?;
    let target = resolve_target(&mdp, inline, args.target)?;
    let policy: StationaryPolicy = parse_policy(&read(args.policy)?, &mdp).map_err(parse_err(args.policy))?;
    if args.horizon == 0 || args.paths == 0 {
        return Err(CliError::Input("horizon and paths must be positive".into()));
    }
    let chain = induce_chain(&mdp, &policy).map_err(|e| CliError::Input(e.to_string()))?;
    let exact = maxent_mdp::entropy_rate(&chain).map_err(|e| CliError::Solver(e.to_string()))?;
    let batch = sample_paths(&mdp, &policy, args.horizon, args.paths, args.seed);
    let mut out = String::new();
    let _ = writeln!(out, "paths: {}", args.paths);
    let _ = writeln!(out, "horizon: {}", args.horizon);
    let _ = writeln!(out, "seed: {}", args.seed);
    let _ = writeln!(out, "exact_rate: {}", fmt12(exact));
    let _ = writeln!(out, "empirical_rate: {}", fmt12(empirical_entropy_rate(&batch, &chain)));
    let _ = writeln!(out, "plug_in_rate: {}", fmt12(plug_in_entropy_rate(&batch, mdp.num_states())));
    if let Some(t) = &target {
        if args.window > args.horizon {
            return Err(CliError::Input(format!("window {} exceeds horizon {}", args.window, args.horizon)));
        }
        let _ = writeln!(out, "window: {}", args.window);
        let _ = writeln!(out, "window_pass_fraction: {}", fmt12(surveillance_monitor(&batch, t, args.window)));
    }
    if let Some(path) = args.out {
        let mut buf = Vec::new();
        write_csv(&batch, &mdp, &mut buf).map_err(|source| CliError::Io { path: path.into(), source })?;
        fs::write(path, buf).map_err(|source| CliError::Io { path: path.into(), source })?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Blue,
    Green,
}

pub struct GridworldArgs<'a> {
    pub variant: Variant,
    pub layout: Layout,
    pub min_probes_one: bool,
    pub huffman: bool,
    pub out: &'a Path,
}

pub fn gridworld(args: &GridworldArgs) -> Result<String, CliError> {
    let ws = build_workspace(args.layout);
    let target = match args.variant {
        Variant::Blue => ws.blue.clone(),
        Variant::Green => ws.green.clone(),
    };
    let mut mecs = mec_decomposition(&ws.mdp);
    mark_accepting(&mut mecs, &target);
    let result = run_synthesis(&ws.mdp, Some(target.clone()), false)?;
    let report = metrics(&ws.mdp, &result, observation_options(args.min_probes_one, args.huffman))?;

    create_dir(args.out)?;
    write(&args.out.join("workspace.mdp"), &write_mdp(&ws.mdp, Some(&target)))?;
    write(&args.out.join("target.txt"), &(target_line(&ws.mdp, &target) + "\n"))?;
    write(&args.out.join("policy.txt"), &write_policy(&ws.mdp, &result.policy))?;
    write(&args.out.join("metrics.txt"), &report)?;
    let levels = classify_levels(&ws.mdp, &mecs);
    write(&args.out.join("levels.dot"), &level_dot(&ws.mdp, &levels))?;
    let chain = induce_chain(&ws.mdp, &result.policy).map_err(|e| CliError::Solver(e.to_string()))?;
    let structure = chain_structure(&chain).map_err(|e| CliError::Solver(e.to_string()))?;
    let pi = limit_from_structure(ws.mdp.num_states(), &structure);
    for (region, csv) in ws.export_heatmap(&pi) {
        write(&args.out.join(format!("heatmap_region{region}.csv")), &csv)?;
    }
    for (region, csv) in ws.export_spread(&result.policy) {
        write(&args.out.join(format!("spread_region{region}.csv")), &csv)?;
    }
    let mut out = String::new();
    let _ = writeln!(out, "states: {}", ws.mdp.num_states());
    let _ = writeln!(out, "edges: {}", ws.mdp.edge_count());
    let _ = writeln!(out, "mecs: {}", mecs.len());
    let _ = writeln!(out, "amecs: {}", mecs.iter().filter(|m| m.accepting).count());
    let _ = writeln!(out, "limit_mass: {}", fmt12(pi.iter().sum()));
    out.push_str(&report);
    Ok(out)
}
