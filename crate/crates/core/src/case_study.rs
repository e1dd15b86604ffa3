//! Five-region gridworld with one-way corridors.
//!
//! Cells use global integer coordinates, `x` to the right and `y` upward. Each
//! region cell has the deterministic actions `left`, `right`, `up`, `down` and
//! `stay`; a move into a wall is a self-loop. A corridor cell has a single
//! action that continues in the corridor direction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::mdp::{validate_mdp, Mdp, RawAction, RawMdp, StationaryPolicy};
use crate::text::fmt12;

/// `(region id, lower-left corner, width, height)`.
pub const REGIONS: [(u8, (i32, i32), i32, i32); 5] = [
    (1, (0, 5), 7, 7),
    (2, (8, 9), 8, 8),
    (3, (8, 0), 8, 8),
    (4, (17, 9), 8, 8),
    (5, (17, 0), 8, 8),
];

/// `(from region, to region, exit cell, corridor cell, entry cell)`.
pub const CORRIDORS: [(u8, u8, (i32, i32), (i32, i32), (i32, i32)); 6] = [
    (1, 2, (6, 11), (7, 11), (8, 11)),
    (1, 3, (6, 5), (7, 5), (8, 5)),
    (5, 3, (17, 5), (16, 5), (15, 5)),
    (3, 5, (15, 2), (16, 2), (17, 2)),
    (2, 4, (15, 11), (16, 11), (17, 11)),
    (5, 4, (20, 7), (20, 8), (20, 9)),
];

pub const INITIAL_CELL: (i32, i32) = (0, 8);
pub const BLUE_CELLS: [(i32, i32); 3] = [(18, 10), (21, 15), (10, 5)];
pub const GREEN_CELLS: [(i32, i32); 1] = [(23, 11)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Layout {
    /// Every corridor except 5 -> 4: 310 states, 1379 edges.
    #[default]
    Standard,
    /// All six corridors: 311 states, 1381 edges.
    AllCorridors,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Region(u8),
    Corridor { from: u8, to: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
    pub kind: CellKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workspace {
    pub mdp: Mdp,
    pub cells: Vec<Cell>,
    pub index: BTreeMap<(i32, i32), usize>,
    pub blue: BTreeSet<usize>,
    pub green: BTreeSet<usize>,
}

const MOVES: [(&str, i32, i32); 5] = [("left", -1, 0), ("right", 1, 0), ("up", 0, 1), ("down", 0, -1), ("stay", 0, 0)];

fn direction(from: (i32, i32), to: (i32, i32)) -> &'static str {
    let d = (to.0 - from.0, to.1 - from.1);
    MOVES.iter().find(|m| (m.1, m.2) == d).expect("corridor steps are unit moves").0
}

pub fn corridors(layout: Layout) -> &'static [(u8, u8, (i32, i32), (i32, i32), (i32, i32))] {
    match layout {
        Layout::Standard => &CORRIDORS[..5],
        Layout::AllCorridors => &CORRIDORS[..],
    }
}

pub fn build_workspace(layout: Layout) -> Workspace {
    let mut cells = Vec::new();
    for &(id, (x0, y0), w, h) in &REGIONS {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                cells.push(Cell { x, y, kind: CellKind::Region(id) });
            }
        }
    }
    let links = corridors(layout);
    for &(from, to, _, (x, y), _) in links {
        cells.push(Cell { x, y, kind: CellKind::Corridor { from, to } });
    }
    let index: BTreeMap<(i32, i32), usize> = cells.iter().enumerate().map(|(i, c)| ((c.x, c.y), i)).collect();
    let exits: BTreeMap<((i32, i32), (i32, i32)), usize> =
        links.iter().map(|&(_, _, exit, corridor, _)| ((exit, corridor), index[&corridor])).collect();

    let mut actions = Vec::with_capacity(cells.len());
    for (i, cell) in cells.iter().enumerate() {
        let here = (cell.x, cell.y);
        match cell.kind {
            CellKind::Region(id) => {
                let row = MOVES
                    .iter()
                    .map(|&(name, dx, dy)| {
                        let next = (cell.x + dx, cell.y + dy);
                        let target = match index.get(&next) {
                            Some(&t) if cells[t].kind == CellKind::Region(id) => t,
                            Some(&t) if exits.contains_key(&(here, next)) => t,
                            _ => i,
                        };
                        RawAction::new(name, vec![(target, 1.0)])
                    })
                    .collect();
                actions.push(row);
            }
            CellKind::Corridor { .. } => {
                let &(_, _, _, corridor, entry) = links.iter().find(|l| l.3 == here).expect("corridor cell");
                actions.push(vec![RawAction::new(direction(corridor, entry), vec![(index[&entry], 1.0)])]);
            }
        }
    }
    let mut initial = vec![0.0; cells.len()];
    initial[index[&INITIAL_CELL]] = 1.0;
    let state_names = cells.iter().map(|c| format!("c{}_{}", c.x, c.y)).collect();
    let mdp = validate_mdp(RawMdp { state_names, actions, initial }).expect("gridworld is well formed");
    let blue = BLUE_CELLS.iter().map(|c| index[c]).collect();
    let green = GREEN_CELLS.iter().map(|c| index[c]).collect();
    Workspace { mdp, cells, index, blue, green }
}

impl Workspace {
    pub fn region_of(&self, s: usize) -> Option<u8> {
        match self.cells[s].kind {
            CellKind::Region(id) => Some(id),
            CellKind::Corridor { .. } => None,
        }
    }

    pub fn region_cells(&self, region: u8) -> Vec<usize> {
        (0..self.cells.len()).filter(|&s| self.region_of(s) == Some(region)).collect()
    }

    /// Cell of a region at offset `(dx, dy)` from its lower-left corner.
    pub fn region_cell(&self, region: u8, dx: i32, dy: i32) -> Option<usize> {
        let &(_, (x0, y0), _, _) = REGIONS.iter().find(|r| r.0 == region)?;
        let s = *self.index.get(&(x0 + dx, y0 + dy))?;
        (self.region_of(s) == Some(region)).then_some(s)
    }

    /// CSV grid of `value(s)` over one region, top row first. `None` renders blank.
    pub fn region_grid(&self, region: u8, value: impl Fn(usize) -> Option<f64>) -> String {
        let &(_, (x0, y0), w, h) = REGIONS.iter().find(|r| r.0 == region).expect("known region");
        let mut out = String::new();
        for y in (y0..y0 + h).rev() {
            let row: Vec<String> = (x0..x0 + w)
                .map(|x| value(self.index[&(x, y)]).map_or_else(String::new, fmt12))
                .collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    /// Percentage heatmaps of a limit distribution per region; cells with zero
    /// mass are blank.
    pub fn export_heatmap(&self, pi: &[f64]) -> BTreeMap<u8, String> {
        REGIONS
            .iter()
            .map(|&(id, ..)| (id, self.region_grid(id, |s| (pi[s] > 1e-12).then(|| 100.0 * pi[s]))))
            .collect()
    }

    /// Per-cell `max - min` action probability per region.
    pub fn export_spread(&self, policy: &StationaryPolicy) -> BTreeMap<u8, String> {
        REGIONS.iter().map(|&(id, ..)| (id, self.region_grid(id, |s| Some(policy.spread(s))))).collect()
    }
}
