//! Two-phase revised simplex with Bland's rule.
//!
//! The basis inverse is kept dense and updated by elementary row operations
//! after each pivot; it is rebuilt from scratch every [`REFACTOR_EVERY`] pivots.

use nalgebra::DMatrix;
use thiserror::Error;

pub const FEAS_TOL: f64 = 1e-8;
pub const OPT_TOL: f64 = 1e-7;
const PIVOT_TOL: f64 = 1e-11;
const REFACTOR_EVERY: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("linear program is infeasible (phase-one residual {0:.3e})")]
    Infeasible(f64),
    #[error("linear program is unbounded along variable {0}")]
    Unbounded(usize),
    #[error("simplex exceeded {0} iterations")]
    IterationLimit(usize),
    #[error("basis became singular")]
    SingularBasis,
    #[error("malformed linear program: {0}")]
    Malformed(String),
}

/// One sparse constraint row `sum_j coef_j x_j (<= | =) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coefs: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// `max c x` subject to equalities, `<=` inequalities and `x >= 0`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub equalities: Vec<Constraint>,
    pub inequalities: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        Self { objective: vec![0.0; num_vars], ..Default::default() }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_le(&mut self, coefs: Vec<(usize, f64)>, rhs: f64) {
        self.inequalities.push(Constraint { coefs, rhs });
    }

    pub fn add_eq(&mut self, coefs: Vec<(usize, f64)>, rhs: f64) {
        self.equalities.push(Constraint { coefs, rhs });
    }

    fn check(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::Malformed("non-finite objective coefficient".into()));
        }
        for c in self.equalities.iter().chain(&self.inequalities) {
            if !c.rhs.is_finite() || c.coefs.iter().any(|&(j, v)| j >= n || !v.is_finite()) {
                return Err(LpError::Malformed("bad constraint coefficient or index".into()));
            }
        }
        Ok(())
    }

    /// Largest constraint violation of `x` (including negativity).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let dot = |c: &Constraint| c.coefs.iter().map(|&(j, v)| v * x[j]).sum::<f64>();
        let eq = self.equalities.iter().map(|c| (dot(c) - c.rhs).abs());
        let le = self.inequalities.iter().map(|c| (dot(c) - c.rhs).max(0.0));
        let neg = x.iter().map(|&v| (-v).max(0.0));
        eq.chain(le).chain(neg).fold(0.0, f64::max)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Basic structural variables at the optimum.
    pub basis: Vec<usize>,
}

/// Column kinds of the standard form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Structural,
    Slack,
    Artificial,
}

struct Tableau {
    m: usize,
    cols: Vec<Vec<(usize, f64)>>,
    kind: Vec<Kind>,
    b: Vec<f64>,
    basis: Vec<usize>,
    binv: DMatrix<f64>,
    xb: Vec<f64>,
    since_refactor: usize,
    iterations: usize,
    max_iterations: usize,
    rc_tol: f64,
}

impl Tableau {
    fn build(lp: &LinearProgram, rc_tol: f64) -> Self {
        let n = lp.num_vars();
        let rows: Vec<(&Constraint, bool)> =
            lp.inequalities.iter().map(|c| (c, true)).chain(lp.equalities.iter().map(|c| (c, false))).collect();
        let m = rows.len();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut kind = vec![Kind::Structural; n];
        let mut b = vec![0.0; m];
        let mut basis = vec![usize::MAX; m];
        for (i, (c, is_le)) in rows.iter().enumerate() {
            let sign = if c.rhs < 0.0 { -1.0 } else { 1.0 };
            b[i] = sign * c.rhs;
            for &(j, v) in &c.coefs {
                if v != 0.0 {
                    cols[j].push((i, sign * v));
                }
            }
            if *is_le {
                cols.push(vec![(i, sign)]);
                kind.push(Kind::Slack);
                if sign > 0.0 {
                    basis[i] = cols.len() - 1;
                }
            }
        }
        for j in 0..n {
            // Merge duplicate row entries of a column.
            let col = &mut cols[j];
            col.sort_by_key(|&(i, _)| i);
            col.dedup_by(|a, b| {
                if a.0 == b.0 {
                    b.1 += a.1;
                    true
                } else {
                    false
                }
            });
        }
        for i in 0..m {
            if basis[i] == usize::MAX {
                cols.push(vec![(i, 1.0)]);
                kind.push(Kind::Artificial);
                basis[i] = cols.len() - 1;
            }
        }
        let xb = b.clone();
        let total = cols.len();
        Tableau {
            m,
            cols,
            kind,
            b,
            basis,
            binv: DMatrix::identity(m, m),
            xb,
            since_refactor: 0,
            iterations: 0,
            max_iterations: 50_000 + 50 * (total + m),
            rc_tol,
        }
    }

    fn refactor(&mut self) -> Result<(), LpError> {
        let m = self.m;
        let mut bmat = DMatrix::<f64>::zeros(m, m);
        for (k, &j) in self.basis.iter().enumerate() {
            for &(i, v) in &self.cols[j] {
                bmat[(i, k)] = v;
            }
        }
        self.binv = bmat.try_inverse().ok_or(LpError::SingularBasis)?;
        for i in 0..m {
            self.xb[i] = (0..m).map(|k| self.binv[(i, k)] * self.b[k]).sum();
        }
        self.since_refactor = 0;
        Ok(())
    }

    /// Runs simplex for costs `c`; `allowed(j)` filters entering candidates.
    fn optimize(&mut self, c: &[f64], allowed: impl Fn(usize) -> bool) -> Result<(), LpError> {
        let m = self.m;
        let mut in_basis = vec![false; self.cols.len()];
        for &j in &self.basis {
            in_basis[j] = true;
        }
        loop {
            if self.iterations >= self.max_iterations {
                return Err(LpError::IterationLimit(self.iterations));
            }
            // Dual prices y = c_B B^-1.
            let mut y = vec![0.0; m];
            for (k, &j) in self.basis.iter().enumerate() {
                let cj = c[j];
                if cj != 0.0 {
                    for (i, yi) in y.iter_mut().enumerate() {
                        *yi += cj * self.binv[(k, i)];
                    }
                }
            }
            // Bland: lowest-index improving column.
            let entering = (0..self.cols.len()).find(|&j| {
                !in_basis[j] && allowed(j) && {
                    let rc = c[j] - self.cols[j].iter().map(|&(i, v)| y[i] * v).sum::<f64>();
                    rc > self.rc_tol
                }
            });
            let Some(q) = entering else { return Ok(()) };
            let mut d = vec![0.0; m];
            for &(i, v) in &self.cols[q] {
                for (k, dk) in d.iter_mut().enumerate() {
                    *dk += self.binv[(k, i)] * v;
                }
            }
            // Ratio test; ties broken by lowest basic variable index.
            let mut leave: Option<(usize, f64)> = None;
            for k in 0..m {
                if d[k] > PIVOT_TOL {
                    let ratio = self.xb[k].max(0.0) / d[k];
                    match leave {
                        None => leave = Some((k, ratio)),
                        Some((lk, lr)) => {
                            if ratio < lr - 1e-12 || (ratio <= lr + 1e-12 && self.basis[k] < self.basis[lk]) {
                                leave = Some((k, ratio));
                            }
                        }
                    }
                }
            }
            let Some((r, theta)) = leave else { return Err(LpError::Unbounded(q)) };
            for k in 0..m {
                self.xb[k] -= theta * d[k];
            }
            self.xb[r] = theta;
            let pivot = d[r];
            for i in 0..m {
                self.binv[(r, i)] /= pivot;
            }
            for k in 0..m {
                if k != r && d[k] != 0.0 {
                    let f = d[k];
                    for i in 0..m {
                        let v = self.binv[(r, i)];
                        self.binv[(k, i)] -= f * v;
                    }
                }
            }
            in_basis[self.basis[r]] = false;
            in_basis[q] = true;
            self.basis[r] = q;
            self.iterations += 1;
            self.since_refactor += 1;
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
        }
    }

    /// Pivots zero-level artificials out of the basis where possible.
    fn expel_artificials(&mut self) -> Result<(), LpError> {
        let m = self.m;
        for r in 0..m {
            if self.kind[self.basis[r]] != Kind::Artificial {
                continue;
            }
            let in_basis: Vec<bool> = {
                let mut v = vec![false; self.cols.len()];
                for &j in &self.basis {
                    v[j] = true;
                }
                v
            };
            let candidate = (0..self.cols.len()).find(|&j| {
                !in_basis[j]
                    && self.kind[j] != Kind::Artificial
                    && self.cols[j].iter().map(|&(i, v)| self.binv[(r, i)] * v).sum::<f64>().abs() > 1e-7
            });
            if let Some(q) = candidate {
                self.basis[r] = q;
                self.refactor()?;
            }
        }
        Ok(())
    }
}

/// Solves `lp`, returning a basic optimal solution.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    solve_lp_with(lp, FEAS_TOL, OPT_TOL)
}

pub fn solve_lp_with(lp: &LinearProgram, feas_tol: f64, opt_tol: f64) -> Result<LpSolution, LpError> {
    lp.check()?;
    let n = lp.num_vars();
    let mut t = Tableau::build(lp, opt_tol * 1e-2);
    let total = t.cols.len();
    let has_artificial = t.kind.iter().any(|&k| k == Kind::Artificial);
    if has_artificial {
        let c1: Vec<f64> = t.kind.iter().map(|&k| if k == Kind::Artificial { -1.0 } else { 0.0 }).collect();
        t.optimize(&c1, |_| true)?;
        let infeas: f64 = t.basis.iter().zip(&t.xb).filter(|(&j, _)| t.kind[j] == Kind::Artificial).map(|(_, &v)| v).sum();
        if infeas > feas_tol {
            return Err(LpError::Infeasible(infeas));
        }
        t.expel_artificials()?;
    }
    let mut c2 = vec![0.0; total];
    c2[..n].copy_from_slice(&lp.objective);
    let kinds = t.kind.clone();
    t.optimize(&c2, |j| kinds[j] != Kind::Artificial)?;
    t.refactor()?;

    let mut x = vec![0.0; n];
    let mut basis = Vec::new();
    for (k, &j) in t.basis.iter().enumerate() {
        if j < n {
            x[j] = t.xb[k].max(0.0);
            basis.push(j);
        }
    }
    basis.sort_unstable();
    let violation = lp.max_violation(&x);
    if violation > feas_tol * (1.0 + lp.objective.len() as f64).sqrt() * 10.0 {
        log::warn!("LP solution violates constraints by {violation:.3e}");
    }
    Ok(LpSolution { objective: lp.value(&x), x, iterations: t.iterations, basis })
}
