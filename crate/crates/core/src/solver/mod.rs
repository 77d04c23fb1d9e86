//! Linear and mixed-integer linear programming.
//!
//! [`solve_lp`] is a bounded-variable primal simplex on a dense tableau;
//! [`solve_milp`] is depth-first branch-and-bound over binary variables on
//! top of it. Both are deterministic.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::props::{LinConstraint, LinExpr, Relation};

mod branch;
mod simplex;

pub use branch::solve_milp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("time budget exceeded")]
    TimeBudgetExceeded,
    #[error("iteration limit of {0} reached")]
    IterationLimit(u64),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub feasibility_tol: f64,
    pub integrality_tol: f64,
    pub optimality_tol: f64,
    pub pivot_tol: f64,
    /// Per LP solve.
    pub max_iterations: u64,
    pub max_nodes: u64,
    pub deadline: Option<Instant>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-7,
            integrality_tol: 1e-6,
            optimality_tol: 1e-6,
            pivot_tol: 1e-9,
            max_iterations: 200_000,
            max_nodes: u64::MAX,
            deadline: None,
        }
    }
}

impl SolverOptions {
    pub fn with_time_budget(mut self, budget: Duration) -> Self {
        self.deadline = Some(Instant::now() + budget);
        self
    }

    pub fn with_deadline(mut self, deadline: Option<Instant>) -> Self {
        self.deadline = deadline;
        self
    }

    pub(crate) fn check_deadline(&self) -> Result<(), SolverError> {
        match self.deadline {
            Some(d) if Instant::now() >= d => Err(SolverError::TimeBudgetExceeded),
            _ => Ok(()),
        }
    }
}

/// Variables are `0..num_vars()`; constraints are `expr rel 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LpProblem {
    lower: Vec<f64>,
    upper: Vec<f64>,
    constraints: Vec<LinConstraint<usize>>,
    objective: LinExpr<usize>,
    sense: Sense,
}

impl Default for LpProblem {
    fn default() -> Self {
        Self::new()
    }
}

impl LpProblem {
    pub fn new() -> Self {
        Self {
            lower: Vec::new(),
            upper: Vec::new(),
            constraints: Vec::new(),
            objective: LinExpr::new(),
            sense: Sense::Minimize,
        }
    }

    pub fn add_var(&mut self, lower: f64, upper: f64) -> usize {
        self.lower.push(lower);
        self.upper.push(upper);
        self.lower.len() - 1
    }

    pub fn set_var_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        self.lower[j] = lower;
        self.upper[j] = upper;
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lower[j], self.upper[j])
    }

    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn add_constraint(&mut self, c: LinConstraint<usize>) {
        self.constraints.push(c);
    }

    pub fn constraints(&self) -> &[LinConstraint<usize>] {
        &self.constraints
    }

    pub fn set_objective(&mut self, objective: LinExpr<usize>, sense: Sense) {
        self.objective = objective;
        self.sense = sense;
    }

    pub fn objective(&self) -> (&LinExpr<usize>, Sense) {
        (&self.objective, self.sense)
    }

    fn validate(&self) -> Result<(), SolverError> {
        for j in 0..self.num_vars() {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(SolverError::InvalidProblem(format!("variable {j} has bounds [{l}, {u}]")));
            }
        }
        let n = self.num_vars();
        for c in self.constraints.iter().chain(std::iter::once(&LinConstraint {
            expr: self.objective.clone(),
            relation: Relation::Eq,
        })) {
            if !c.expr.constant.is_finite() {
                return Err(SolverError::InvalidProblem("non-finite constant".into()));
            }
            for (&j, &a) in &c.expr.terms {
                if j >= n {
                    return Err(SolverError::InvalidProblem(format!("unknown variable {j}")));
                }
                if !a.is_finite() {
                    return Err(SolverError::InvalidProblem(format!("non-finite coefficient on variable {j}")));
                }
            }
        }
        Ok(())
    }

    /// Writes the problem in CPLEX LP text format, for cross-checking with
    /// external solvers.
    pub fn to_lp_text(&self, binaries: &[usize]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", if self.sense == Sense::Minimize { "Minimize" } else { "Maximize" });
        let _ = writeln!(s, " obj: {}", lp_terms(&self.objective));
        let _ = writeln!(s, "Subject To");
        for (i, c) in self.constraints.iter().enumerate() {
            let op = match c.relation {
                Relation::Le => "<=",
                Relation::Ge => ">=",
                Relation::Eq => "=",
            };
            let _ = writeln!(s, " c{i}: {} {op} {}", lp_terms(&LinExpr::from_terms(c.expr.terms.clone(), 0.0)), -c.expr.constant);
        }
        let _ = writeln!(s, "Bounds");
        for j in 0..self.num_vars() {
            let (l, u) = (self.lower[j], self.upper[j]);
            match (l.is_finite(), u.is_finite()) {
                (true, true) => {
                    let _ = writeln!(s, " {l} <= x{j} <= {u}");
                }
                (true, false) => {
                    let _ = writeln!(s, " x{j} >= {l}");
                }
                (false, true) => {
                    let _ = writeln!(s, " -inf <= x{j} <= {u}");
                }
                (false, false) => {
                    let _ = writeln!(s, " x{j} free");
                }
            }
        }
        if !binaries.is_empty() {
            let _ = writeln!(s, "Binary");
            for j in binaries {
                let _ = writeln!(s, " x{j}");
            }
        }
        let _ = writeln!(s, "End");
        s
    }
}

fn lp_terms(e: &LinExpr<usize>) -> String {
    if e.terms.is_empty() {
        return "0 x0".to_string();
    }
    let mut s = String::new();
    for (k, (j, c)) in e.terms.iter().enumerate() {
        if k > 0 {
            s.push_str(if *c < 0.0 { " - " } else { " + " });
            let _ = write!(s, "{} x{j}", c.abs());
        } else {
            let _ = write!(s, "{c} x{j}");
        }
    }
    s
}

/// An LP plus a set of binary variables.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct MilpProblem {
    pub lp: LpProblem,
    binaries: Vec<usize>,
}

impl MilpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, lower: f64, upper: f64) -> usize {
        self.lp.add_var(lower, upper)
    }

    pub fn add_binary(&mut self) -> usize {
        let j = self.lp.add_var(0.0, 1.0);
        self.binaries.push(j);
        j
    }

    pub fn add_constraint(&mut self, c: LinConstraint<usize>) {
        self.lp.add_constraint(c);
    }

    pub fn set_objective(&mut self, objective: LinExpr<usize>, sense: Sense) {
        self.lp.set_objective(objective, sense);
    }

    pub fn binaries(&self) -> &[usize] {
        &self.binaries
    }

    pub fn to_lp_text(&self) -> String {
        self.lp.to_lp_text(&self.binaries)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SolveStatus {
    Optimal { value: f64, x: Vec<f64> },
    Infeasible,
    Unbounded,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub iterations: u64,
    pub nodes: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub stats: SolveStats,
}

impl SolveResult {
    pub fn value(&self) -> Option<f64> {
        match &self.status {
            SolveStatus::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }

    pub fn assignment(&self) -> Option<&[f64]> {
        match &self.status {
            SolveStatus::Optimal { x, .. } => Some(x),
            _ => None,
        }
    }
}

pub fn solve_lp(p: &LpProblem, opts: &SolverOptions) -> Result<SolveResult, SolverError> {
    p.validate()?;
    let mut s = simplex::Simplex::new(p, opts);
    let status = s.solve()?;
    Ok(SolveResult { status: s.result(status, p), stats: SolveStats { iterations: s.iterations, nodes: 0 } })
}

/// Optimises several objectives over one fixed feasible region, reusing the
/// basis between solves.
pub struct LpSweep<'a> {
    p: &'a LpProblem,
    s: simplex::Simplex<'a>,
}

impl<'a> LpSweep<'a> {
    pub fn new(p: &'a LpProblem, opts: &'a SolverOptions) -> Result<Self, SolverError> {
        p.validate()?;
        Ok(Self { p, s: simplex::Simplex::new(p, opts) })
    }

    /// Optimum of `obj` (constant included), warm-started from the last basis.
    pub fn optimize(&mut self, obj: &LinExpr<usize>, sense: Sense) -> Result<SolveStatus, SolverError> {
        for &j in obj.terms.keys() {
            if j >= self.p.num_vars() {
                return Err(SolverError::InvalidProblem(format!("objective mentions unknown variable {j}")));
            }
        }
        self.s.set_objective(obj, sense);
        let outcome = self.s.solve()?;
        Ok(match self.s.result(outcome, self.p) {
            SolveStatus::Optimal { x, .. } => SolveStatus::Optimal { value: obj.eval(|&j| x[j]), x },
            other => other,
        })
    }

    pub fn iterations(&self) -> u64 {
        self.s.iterations
    }
}

/// Adds `y = max(0, x)` for `x` known to lie in `[lo, hi]`.
///
/// Sign-stable ranges need no binary. Otherwise the usual big-M encoding is
/// used with `lo` and `hi` as the constants, and the binary (1 = active) is
/// returned.
pub fn encode_relu(p: &mut MilpProblem, x: &LinExpr<usize>, y: usize, lo: f64, hi: f64) -> Result<Option<usize>, SolverError> {
    if !lo.is_finite() || !hi.is_finite() || lo > hi {
        return Err(SolverError::InvalidProblem(format!("ReLU bounds [{lo}, {hi}] must be finite and ordered")));
    }
    let yv = LinExpr::var(y);
    if lo >= 0.0 {
        p.add_constraint(LinConstraint::new(yv, Relation::Eq, x.clone()));
        return Ok(None);
    }
    if hi <= 0.0 {
        p.add_constraint(LinConstraint::eq(yv, 0.0));
        return Ok(None);
    }
    let d = p.add_binary();
    let dv = LinExpr::var(d);
    // y >= x, y >= 0
    p.add_constraint(LinConstraint::new(yv.clone(), Relation::Ge, x.clone()));
    p.add_constraint(LinConstraint::ge(yv.clone(), 0.0));
    // y <= x - lo (1 - d)
    p.add_constraint(LinConstraint::new(
        yv.clone(),
        Relation::Le,
        x.clone().plus(&LinExpr::constant(-lo)).plus(&dv.scaled(lo)),
    ));
    // y <= hi d
    p.add_constraint(LinConstraint::new(yv, Relation::Le, dv.scaled(hi)));
    Ok(Some(d))
}
