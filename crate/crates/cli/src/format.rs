//! Text formats for MDPs, targets and policies.
//!
//! All formats are line based. Blank lines and lines whose first non-blank
//! character is `#` are ignored; everything else is a directive made of
//! whitespace-separated tokens. Names match `[A-Za-z0-9_.:+-]+`. Probabilities
//! are plain decimals (`0.25`, `1`, `2.5e-3`); no signs, `inf` or `nan`.
//!
//! MDP file:
//!
//! ```text
//! states NAME...
//! initial NAME PROB [NAME PROB]...
//! state NAME
//! action NAME SUCC PROB [SUCC PROB]...
//! target NAME...
//! ```
//!
//! `states` comes first. Every state has exactly one `state` block holding at
//! least one `action`. `target` is optional. Policy file: one
//! `mu STATE ACTION PROB [ACTION PROB]...` line per state; omitted actions have
//! probability 0. Target file: one or more `target NAME...` lines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use maxent_mdp::text::fmt12;
use maxent_mdp::{validate_mdp, Mdp, RawAction, RawMdp, StationaryPolicy};
use thiserror::Error;

/// Row sums must be within this distance of one.
pub const SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { line, message: message.into() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpFile {
    pub mdp: Mdp,
    pub target: Option<BTreeSet<usize>>,
}

/// Non-comment lines as `(line number, tokens)`.
fn directives(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let t = line.trim();
        (!t.is_empty() && !t.starts_with('#')).then(|| (i + 1, t.split_whitespace().collect()))
    })
}

fn check_name(line: usize, name: &str) -> Result<(), ParseError> {
    if name.chars().all(|c| c.is_ascii_alphanumeric() || "_.:+-".contains(c)) {
        Ok(())
    } else {
        err(line, format!("invalid name `{name}`"))
    }
}

/// Strict decimal in `[0, 1]`.
pub fn parse_probability(line: usize, token: &str) -> Result<f64, ParseError> {
    let (mantissa, exponent) = match token.find(['e', 'E']) {
        Some(i) => (&token[..i], Some(&token[i + 1..])),
        None => (token, None),
    };
    let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    let digits = |s: &str| s.chars().all(|c| c.is_ascii_digit());
    let exp_ok = exponent.is_none_or(|e| {
        let e = e.strip_prefix(['+', '-']).unwrap_or(e);
        !e.is_empty() && digits(e)
    });
    let well_formed = !int.is_empty()
        && digits(int)
        && digits(frac)
        && (!mantissa.contains('.') || !frac.is_empty())
        && exp_ok;
    if !well_formed {
        return err(line, format!("malformed probability `{token}`"));
    }
    let value: f64 = token.parse().map_err(|_| ParseError { line, message: format!("malformed probability `{token}`") })?;
    if value > 1.0 {
        return err(line, format!("probability {token} exceeds 1"));
    }
    Ok(value)
}

/// `NAME PROB` pairs resolved against `index`, rejecting duplicates.
fn pairs(
    line: usize,
    tokens: &[&str],
    index: &BTreeMap<String, usize>,
    what: &str,
) -> Result<Vec<(usize, f64)>, ParseError> {
    if tokens.is_empty() || tokens.len() % 2 != 0 {
        return err(line, format!("expected {what} NAME PROB pairs"));
    }
    let mut out: Vec<(usize, f64)> = Vec::new();
    for pair in tokens.chunks(2) {
        let &t = index.get(pair[0]).ok_or_else(|| ParseError { line, message: format!("unknown {what} `{}`", pair[0]) })?;
        if out.iter().any(|&(u, _)| u == t) {
            return err(line, format!("{what} `{}` listed twice", pair[0]));
        }
        out.push((t, parse_probability(line, pair[1])?));
    }
    Ok(out)
}

fn check_sum(line: usize, probs: impl Iterator<Item = f64>, context: &str) -> Result<(), ParseError> {
    let sum: f64 = probs.sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return err(line, format!("{context}: probabilities sum to {sum}, expected 1"));
    }
    Ok(())
}

pub fn parse_mdp(text: &str) -> Result<MdpFile, ParseError> {
    let mut names: Option<Vec<String>> = None;
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut initial: Option<Vec<f64>> = None;
    let mut target: Option<BTreeSet<usize>> = None;
    let mut blocks: Vec<Option<(usize, Vec<RawAction>)>> = Vec::new();
    let mut current: Option<usize> = None;
    let mut last_line = 0;

    for (line, tokens) in directives(text) {
        last_line = line;
        let (head, rest) = (tokens[0], &tokens[1..]);
        if names.is_none() && head != "states" {
            return err(line, "first directive must be `states`");
        }
        match head {
            "states" => {
                if names.is_some() {
                    return err(line, "`states` declared twice");
                }
                if rest.is_empty() {
                    return err(line, "`states` needs at least one name");
                }
                for (i, &name) in rest.iter().enumerate() {
                    check_name(line, name)?;
                    if index.insert(name.to_string(), i).is_some() {
                        return err(line, format!("duplicate state `{name}`"));
                    }
                }
                names = Some(rest.iter().map(|s| s.to_string()).collect());
                blocks = vec![None; rest.len()];
            }
            "initial" => {
                if initial.is_some() {
                    return err(line, "`initial` declared twice");
                }
                let entries = pairs(line, rest, &index, "state")?;
                check_sum(line, entries.iter().map(|&(_, p)| p), "initial distribution")?;
                let mut v = vec![0.0; index.len()];
                for (s, p) in entries {
                    v[s] = p;
                }
                initial = Some(v);
            }
            "state" => {
                let [name] = rest else {
                    return err(line, "expected `state NAME`");
                };
                let &s = index.get(*name).ok_or_else(|| ParseError { line, message: format!("unknown state `{name}`") })?;
                if blocks[s].is_some() {
                    return err(line, format!("state `{name}` has two blocks"));
                }
                if let Some(prev) = current {
                    if blocks[prev].as_ref().is_some_and(|b| b.1.is_empty()) {
                        return err(line, format!("state `{}` has no action", rest_name(&names, prev)));
                    }
                }
                blocks[s] = Some((line, Vec::new()));
                current = Some(s);
            }
            "action" => {
                let Some(s) = current else {
                    return err(line, "`action` outside a state block");
                };
                let Some((&name, succ)) = rest.split_first() else {
                    return err(line, "expected `action NAME SUCC PROB...`");
                };
                check_name(line, name)?;
                let block = &mut blocks[s].as_mut().expect("open block").1;
                if block.iter().any(|a| a.name == name) {
                    return err(line, format!("action `{name}` declared twice for state `{}`", rest_name(&names, s)));
                }
                let successors = pairs(line, succ, &index, "successor")?;
                let context = format!("action `{name}` of state `{}`", rest_name(&names, s));
                check_sum(line, successors.iter().map(|&(_, p)| p), &context)?;
                block.push(RawAction::new(name, successors));
            }
            "target" => {
                if target.is_some() {
                    return err(line, "`target` declared twice");
                }
                target = Some(parse_target_tokens(line, rest, &index)?);
            }
            other => return err(line, format!("unknown directive `{other}`")),
        }
    }

    let Some(names) = names else {
        return err(last_line.max(1), "missing `states`");
    };
    let Some(initial) = initial else {
        return err(last_line, "missing `initial`");
    };
    let mut actions = Vec::with_capacity(names.len());
    for (s, block) in blocks.into_iter().enumerate() {
        match block {
            Some((line, acts)) if acts.is_empty() => return err(line, format!("state `{}` has no action", names[s])),
            Some((_, acts)) => actions.push(acts),
            None => return err(last_line, format!("state `{}` has no block", names[s])),
        }
    }
    let mdp = validate_mdp(RawMdp { state_names: names, actions, initial })
        .map_err(|e| ParseError { line: last_line, message: e.to_string() })?;
    Ok(MdpFile { mdp, target })
}

fn rest_name(names: &Option<Vec<String>>, s: usize) -> &str {
    names.as_ref().map_or("?", |n| n[s].as_str())
}

fn parse_target_tokens(line: usize, tokens: &[&str], index: &BTreeMap<String, usize>) -> Result<BTreeSet<usize>, ParseError> {
    if tokens.is_empty() {
        return err(line, "`target` needs at least one state");
    }
    tokens
        .iter()
        .map(|&name| index.get(name).copied().ok_or_else(|| ParseError { line, message: format!("unknown state `{name}`") }))
        .collect()
}

fn state_index(mdp: &Mdp) -> BTreeMap<String, usize> {
    mdp.state_names().iter().enumerate().map(|(i, n)| (n.clone(), i)).collect()
}

pub fn parse_target(text: &str, mdp: &Mdp) -> Result<BTreeSet<usize>, ParseError> {
    let index = state_index(mdp);
    let mut out = BTreeSet::new();
    let mut last = 0;
    for (line, tokens) in directives(text) {
        last = line;
        if tokens[0] != "target" {
            return err(line, format!("unknown directive `{}`", tokens[0]));
        }
        out.extend(parse_target_tokens(line, &tokens[1..], &index)?);
    }
    if out.is_empty() {
        return err(last.max(1), "no target state");
    }
    Ok(out)
}

pub fn parse_policy(text: &str, mdp: &Mdp) -> Result<StationaryPolicy, ParseError> {
    let index = state_index(mdp);
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; mdp.num_states()];
    let mut last = 0;
    for (line, tokens) in directives(text) {
        last = line;
        if tokens[0] != "mu" {
            return err(line, format!("unknown directive `{}`", tokens[0]));
        }
        let Some((&name, rest)) = tokens[1..].split_first() else {
            return err(line, "expected `mu STATE ACTION PROB...`");
        };
        let &s = index.get(name).ok_or_else(|| ParseError { line, message: format!("unknown state `{name}`") })?;
        if rows[s].is_some() {
            return err(line, format!("state `{name}` listed twice"));
        }
        let actions: BTreeMap<String, usize> =
            (0..mdp.num_actions(s)).map(|a| (mdp.action_name(mdp.actions(s)[a].action).to_string(), a)).collect();
        let entries = pairs(line, rest, &actions, "action")?;
        check_sum(line, entries.iter().map(|&(_, p)| p), &format!("policy of state `{name}`"))?;
        let mut row = vec![0.0; mdp.num_actions(s)];
        for (a, p) in entries {
            row[a] = p;
        }
        rows[s] = Some(row);
    }
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(s, r)| r.ok_or_else(|| ParseError { line: last, message: format!("state `{}` has no policy", mdp.state_name(s)) }))
        .collect::<Result<Vec<_>, _>>()?;
    StationaryPolicy::new(mdp, rows).map_err(|e| ParseError { line: last, message: e.to_string() })
}

pub fn write_mdp(mdp: &Mdp, target: Option<&BTreeSet<usize>>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "states {}", mdp.state_names().join(" "));
    let init: Vec<String> = (0..mdp.num_states())
        .filter(|&s| mdp.initial()[s] > 0.0)
        .map(|s| format!("{} {}", mdp.state_name(s), fmt12(mdp.initial()[s])))
        .collect();
    let _ = writeln!(out, "initial {}", init.join(" "));
    for s in 0..mdp.num_states() {
        let _ = writeln!(out, "state {}", mdp.state_name(s));
        for row in mdp.actions(s) {
            let succ: Vec<String> =
                row.successors.iter().map(|&(t, p)| format!("{} {}", mdp.state_name(t), fmt12(p))).collect();
            let _ = writeln!(out, "action {} {}", mdp.action_name(row.action), succ.join(" "));
        }
    }
    if let Some(target) = target {
        let _ = writeln!(out, "{}", target_line(mdp, target));
    }
    out
}

pub fn target_line(mdp: &Mdp, target: &BTreeSet<usize>) -> String {
    let names: Vec<&str> = target.iter().map(|&s| mdp.state_name(s)).collect();
    format!("target {}", names.join(" "))
}

pub fn write_policy(mdp: &Mdp, policy: &StationaryPolicy) -> String {
    let mut out = String::new();
    for s in 0..mdp.num_states() {
        let entries: Vec<String> = policy
            .row(s)
            .iter()
            .enumerate()
            .filter(|&(_, &p)| p > 0.0)
            .map(|(a, &p)| format!("{} {}", mdp.action_name(mdp.actions(s)[a].action), fmt12(p)))
            .collect();
        let _ = writeln!(out, "mu {} {}", mdp.state_name(s), entries.join(" "));
    }
    out
}
