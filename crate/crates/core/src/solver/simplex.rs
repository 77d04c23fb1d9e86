//! Bounded-variable primal simplex on a dense tableau.
//!
//! Every row `a.x + c rel 0` gets a logical variable `s = a.x` whose bounds
//! carry the relation, so the system is `[A | -I] (x, s) = 0` and the slack
//! basis is always available. Phase 1 minimises the sum of bound violations
//! of the basic variables starting from whatever basis is current, which
//! lets branch-and-bound re-solve after bound changes without rebuilding.

use super::{LpProblem, Sense, SolveStatus, SolverError, SolverOptions};
use crate::props::{LinExpr, Relation};

const NONBASIC: usize = usize::MAX;
const BLAND_AFTER: u32 = 50;
const REINVERT_EVERY: u32 = 300;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum LpOutcome {
    Optimal,
    Infeasible,
    Unbounded,
}

pub(crate) struct Simplex<'a> {
    opts: &'a SolverOptions,
    m: usize,
    n: usize,
    /// Original rows as sparse (column, coefficient) lists.
    rows: Vec<Vec<(usize, f64)>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Minimisation costs of the structural variables.
    cost: Vec<f64>,
    /// `m x (n + m)`, row-major.
    t: Vec<f64>,
    basis: Vec<usize>,
    /// Row of each basic variable, `NONBASIC` otherwise.
    row_of: Vec<usize>,
    x: Vec<f64>,
    pub(crate) iterations: u64,
    solve_start: u64,
    since_reinvert: u32,
}

impl<'a> Simplex<'a> {
    pub(crate) fn new(p: &LpProblem, opts: &'a SolverOptions) -> Self {
        let n = p.num_vars();
        let m = p.constraints().len();
        let w = n + m;
        let mut lo = Vec::with_capacity(w);
        let mut hi = Vec::with_capacity(w);
        for j in 0..n {
            let (l, u) = p.bounds(j);
            lo.push(l);
            hi.push(u);
        }
        let mut rows = Vec::with_capacity(m);
        let mut t = vec![0.0; m * w];
        for (i, c) in p.constraints().iter().enumerate() {
            let b = -c.expr.constant;
            let (l, u) = match c.relation {
                Relation::Le => (f64::NEG_INFINITY, b),
                Relation::Ge => (b, f64::INFINITY),
                Relation::Eq => (b, b),
            };
            lo.push(l);
            hi.push(u);
            let row: Vec<(usize, f64)> = c.expr.terms.iter().map(|(&j, &a)| (j, a)).collect();
            for &(j, a) in &row {
                t[i * w + j] = -a;
            }
            t[i * w + n + i] = 1.0;
            rows.push(row);
        }
        let (obj, sense) = p.objective();
        let mut cost = vec![0.0; n];
        for (&j, &c) in &obj.terms {
            cost[j] = if sense == Sense::Maximize { -c } else { c };
        }
        let mut x = vec![0.0; w];
        for j in 0..n {
            x[j] = rest_value(lo[j], hi[j]);
        }
        let basis: Vec<usize> = (n..w).collect();
        let mut row_of = vec![NONBASIC; w];
        for (i, &b) in basis.iter().enumerate() {
            row_of[b] = i;
        }
        let mut s =
            Self { opts, m, n, rows, lo, hi, cost, t, basis, row_of, x, iterations: 0, solve_start: 0, since_reinvert: 0 };
        s.recompute_basics();
        s
    }

    fn w(&self) -> usize {
        self.n + self.m
    }

    /// Replaces the objective, keeping the basis.
    pub(crate) fn set_objective(&mut self, obj: &LinExpr<usize>, sense: Sense) {
        self.cost.iter_mut().for_each(|c| *c = 0.0);
        for (&j, &c) in &obj.terms {
            self.cost[j] = if sense == Sense::Maximize { -c } else { c };
        }
    }

    /// Changes the bounds of structural `j`, keeping the basis.
    pub(crate) fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        if self.lo[j] == lo && self.hi[j] == hi {
            return;
        }
        self.lo[j] = lo;
        self.hi[j] = hi;
        if self.row_of[j] == NONBASIC {
            let old = self.x[j];
            let new = if old == lo || old == hi { old } else { nearest_bound(old, lo, hi) };
            if new != old {
                self.x[j] = new;
                self.recompute_basics();
            }
        }
    }

    pub(crate) fn structurals(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x[j].clamp(self.lo[j], self.hi[j])).collect()
    }

    pub(crate) fn result(&self, outcome: LpOutcome, p: &LpProblem) -> SolveStatus {
        match outcome {
            LpOutcome::Infeasible => SolveStatus::Infeasible,
            LpOutcome::Unbounded => SolveStatus::Unbounded,
            LpOutcome::Optimal => {
                let x = self.structurals();
                let (obj, _) = p.objective();
                let value = obj.eval(|&j| x[j]);
                SolveStatus::Optimal { value, x }
            }
        }
    }

    fn recompute_basics(&mut self) {
        let w = self.w();
        let nonbasic: Vec<(usize, f64)> =
            (0..w).filter(|&j| self.row_of[j] == NONBASIC && self.x[j] != 0.0).map(|j| (j, self.x[j])).collect();
        for r in 0..self.m {
            let row = &self.t[r * w..(r + 1) * w];
            let mut s = 0.0;
            for &(j, v) in &nonbasic {
                s -= row[j] * v;
            }
            let b = self.basis[r];
            self.x[b] = s;
        }
    }

    #[cfg(test)]
    fn infeasibility(&self, j: usize) -> f64 {
        let v = self.x[j];
        let tol = self.opts.feasibility_tol;
        if v < self.lo[j] - tol {
            self.lo[j] - v
        } else if v > self.hi[j] + tol {
            v - self.hi[j]
        } else {
            0.0
        }
    }

    pub(crate) fn solve(&mut self) -> Result<LpOutcome, SolverError> {
        self.solve_start = self.iterations;
        let mut repairs = 0;
        loop {
            if self.since_reinvert >= REINVERT_EVERY {
                self.reinvert();
            }
            match self.run_phase(true)? {
                LpOutcome::Infeasible => {
                    // confirm on a freshly computed tableau before trusting it
                    if self.since_reinvert > 0 {
                        self.reinvert();
                        if self.run_phase(true)? == LpOutcome::Infeasible {
                            return Ok(LpOutcome::Infeasible);
                        }
                    } else {
                        return Ok(LpOutcome::Infeasible);
                    }
                }
                LpOutcome::Unbounded => unreachable!("phase 1 is bounded below"),
                LpOutcome::Optimal => {}
            }
            let outcome = self.run_phase(false)?;
            if outcome == LpOutcome::Unbounded || self.verify() {
                return Ok(outcome);
            }
            repairs += 1;
            if repairs > 2 {
                return Err(SolverError::NumericalFailure("tableau drifted from the original constraints".into()));
            }
            self.reinvert();
        }
    }

    /// Checks the structural solution against the original rows and bounds.
    fn verify(&self) -> bool {
        let tol = self.opts.feasibility_tol * 10.0;
        for j in 0..self.n {
            let v = self.x[j];
            if v < self.lo[j] - tol * (1.0 + self.lo[j].abs()) || v > self.hi[j] + tol * (1.0 + self.hi[j].abs()) {
                return false;
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            let mut act = 0.0;
            let mut mag = 1.0f64;
            for &(j, a) in row {
                let v = self.x[j].clamp(self.lo[j], self.hi[j]);
                act += a * v;
                mag = mag.max((a * v).abs());
            }
            let s = self.n + i;
            let slack = tol * mag;
            if act < self.lo[s] - slack || act > self.hi[s] + slack {
                return false;
            }
        }
        true
    }

    /// Runs phase 1 (`phase1 = true`) or phase 2 to completion.
    fn run_phase(&mut self, phase1: bool) -> Result<LpOutcome, SolverError> {
        let w = self.w();
        let mut degenerate = 0u32;
        let mut d = vec![0.0; w];
        let mut weights = vec![0.0; self.m];
        loop {
            if self.iterations % 32 == 0 {
                self.opts.check_deadline()?;
            }
            if self.since_reinvert >= REINVERT_EVERY {
                self.reinvert();
            }
            // row weights: phase 1 uses violation directions, phase 2 basic costs
            let mut any = false;
            for r in 0..self.m {
                let b = self.basis[r];
                weights[r] = if phase1 {
                    let tol = self.opts.feasibility_tol;
                    if self.x[b] < self.lo[b] - tol {
                        any = true;
                        1.0
                    } else if self.x[b] > self.hi[b] + tol {
                        any = true;
                        -1.0
                    } else {
                        0.0
                    }
                } else if b < self.n {
                    -self.cost[b]
                } else {
                    0.0
                };
            }
            if phase1 && !any {
                return Ok(LpOutcome::Optimal);
            }
            for (j, dj) in d.iter_mut().enumerate() {
                *dj = if !phase1 && j < self.n { self.cost[j] } else { 0.0 };
            }
            for (r, &wr) in weights.iter().enumerate() {
                if wr != 0.0 {
                    let row = &self.t[r * w..(r + 1) * w];
                    for (dj, &tj) in d.iter_mut().zip(row) {
                        *dj += wr * tj;
                    }
                }
            }
            let bland = degenerate > BLAND_AFTER;
            let dtol = if phase1 { self.opts.optimality_tol * 1e-3 } else { self.opts.optimality_tol };
            let mut enter: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..w {
                if self.row_of[j] != NONBASIC {
                    continue;
                }
                let dj = d[j];
                let dir = if dj < -dtol && self.x[j] < self.hi[j] {
                    1.0
                } else if dj > dtol && self.x[j] > self.lo[j] {
                    -1.0
                } else {
                    continue;
                };
                if bland {
                    enter = Some((j, dir));
                    break;
                }
                if dj.abs() > best {
                    best = dj.abs();
                    enter = Some((j, dir));
                }
            }
            let Some((j, dir)) = enter else {
                return Ok(if phase1 { LpOutcome::Infeasible } else { LpOutcome::Optimal });
            };
            let step = self.ratio_test(j, dir, phase1, bland);
            self.iterations += 1;
            if self.iterations - self.solve_start > self.opts.max_iterations {
                return Err(SolverError::IterationLimit(self.opts.max_iterations));
            }
            match step {
                Step::Unbounded => {
                    if phase1 {
                        return Err(SolverError::NumericalFailure("unbounded ray in phase 1".into()));
                    }
                    return Ok(LpOutcome::Unbounded);
                }
                Step::Flip => {
                    self.x[j] = if dir > 0.0 { self.hi[j] } else { self.lo[j] };
                    self.recompute_basics();
                    degenerate = 0;
                }
                Step::Pivot { row, theta, to_upper } => {
                    if theta <= 1e-12 {
                        degenerate += 1;
                    } else {
                        degenerate = 0;
                    }
                    let leaving = self.basis[row];
                    self.x[j] += dir * theta;
                    self.pivot(row, j);
                    self.x[leaving] = if to_upper { self.hi[leaving] } else { self.lo[leaving] };
                    self.recompute_basics();
                }
            }
        }
    }

    fn ratio_test(&self, j: usize, dir: f64, phase1: bool, bland: bool) -> Step {
        let w = self.w();
        let tol = self.opts.feasibility_tol;
        let piv = self.opts.pivot_tol;
        // (row, exact step, relaxed step, heads to upper)
        let mut cands: Vec<(usize, f64, f64, bool)> = Vec::new();
        for r in 0..self.m {
            let a = self.t[r * w + j];
            if a.abs() <= piv {
                continue;
            }
            let rate = -dir * a;
            let b = self.basis[r];
            let (xb, lb, ub) = (self.x[b], self.lo[b], self.hi[b]);
            if phase1 && xb < lb - tol {
                if rate > 0.0 {
                    let th = (lb - xb) / rate;
                    cands.push((r, th, th, false));
                }
            } else if phase1 && xb > ub + tol {
                if rate < 0.0 {
                    let th = (ub - xb) / rate;
                    cands.push((r, th, th, true));
                }
            } else if rate > 0.0 && ub.is_finite() {
                cands.push((r, ((ub - xb) / rate).max(0.0), (ub + tol - xb) / rate, true));
            } else if rate < 0.0 && lb.is_finite() {
                cands.push((r, ((lb - xb) / rate).max(0.0), (lb - tol - xb) / rate, false));
            }
        }
        let flip = self.hi[j] - self.lo[j];
        if bland {
            let min = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
            if flip.is_finite() && flip <= min {
                return Step::Flip;
            }
            if !min.is_finite() {
                return Step::Unbounded;
            }
            let pick = cands
                .iter()
                .filter(|c| c.1 <= min + 1e-12)
                .min_by_key(|c| self.basis[c.0])
                .expect("candidate exists");
            return Step::Pivot { row: pick.0, theta: pick.1, to_upper: pick.3 };
        }
        let max = cands.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
        if flip.is_finite() && flip <= max {
            return Step::Flip;
        }
        if !max.is_finite() {
            return Step::Unbounded;
        }
        let pick = cands
            .iter()
            .filter(|c| c.1 <= max)
            .max_by(|a, b| {
                let pa = self.t[a.0 * w + j].abs();
                let pb = self.t[b.0 * w + j].abs();
                pa.total_cmp(&pb).then(b.0.cmp(&a.0))
            })
            .expect("candidate exists");
        Step::Pivot { row: pick.0, theta: pick.1, to_upper: pick.3 }
    }

    fn pivot(&mut self, row: usize, j: usize) {
        let w = self.w();
        let p = self.t[row * w + j];
        for v in &mut self.t[row * w..(row + 1) * w] {
            *v /= p;
        }
        let (before, rest) = self.t.split_at_mut(row * w);
        let (prow, after) = rest.split_at_mut(w);
        for other in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let f = other[j];
            if f != 0.0 {
                for (o, &pv) in other.iter_mut().zip(prow.iter()) {
                    *o -= f * pv;
                }
                other[j] = 0.0;
            }
        }
        let leaving = self.basis[row];
        self.row_of[leaving] = NONBASIC;
        self.basis[row] = j;
        self.row_of[j] = row;
        self.since_reinvert += 1;
    }

    /// Rebuilds the tableau from the original matrix for the current basis.
    /// Basis columns that turn out dependent are swapped for logicals.
    fn reinvert(&mut self) {
        let (m, n) = (self.m, self.n);
        let w = n + m;
        let mut t = vec![0.0; m * w];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in row {
                t[i * w + j] = a;
            }
            t[i * w + n + i] = -1.0;
        }
        let mut used = vec![false; m];
        let mut new_basis: Vec<Option<usize>> = vec![None; m];
        let order: Vec<usize> = self.basis.clone();
        let eliminate = |t: &mut Vec<f64>, r: usize, j: usize| {
            let p = t[r * w + j];
            for v in &mut t[r * w..(r + 1) * w] {
                *v /= p;
            }
            let prow: Vec<f64> = t[r * w..(r + 1) * w].to_vec();
            for (i, other) in t.chunks_mut(w).enumerate() {
                if i != r {
                    let f = other[j];
                    if f != 0.0 {
                        for (o, &pv) in other.iter_mut().zip(&prow) {
                            *o -= f * pv;
                        }
                        other[j] = 0.0;
                    }
                }
            }
        };
        for &j in &order {
            let best = (0..m).filter(|&r| !used[r]).max_by(|&a, &b| t[a * w + j].abs().total_cmp(&t[b * w + j].abs()));
            match best {
                Some(r) if t[r * w + j].abs() > 1e-10 => {
                    eliminate(&mut t, r, j);
                    used[r] = true;
                    new_basis[r] = Some(j);
                }
                _ => {}
            }
        }
        for s in n..w {
            if used.iter().all(|&u| u) {
                break;
            }
            if new_basis.contains(&Some(s)) {
                continue;
            }
            let best = (0..m).filter(|&r| !used[r]).max_by(|&a, &b| t[a * w + s].abs().total_cmp(&t[b * w + s].abs()));
            if let Some(r) = best {
                if t[r * w + s].abs() > 1e-10 {
                    eliminate(&mut t, r, s);
                    used[r] = true;
                    new_basis[r] = Some(s);
                }
            }
        }
        self.t = t;
        for v in self.row_of.iter_mut() {
            *v = NONBASIC;
        }
        for (r, b) in new_basis.iter().enumerate() {
            let b = b.expect("[A | -I] has full row rank");
            self.basis[r] = b;
            self.row_of[b] = r;
        }
        // nonbasic values must sit at a bound (or 0 if free)
        for j in 0..w {
            if self.row_of[j] == NONBASIC {
                let v = self.x[j];
                if v != self.lo[j] && v != self.hi[j] && !(self.lo[j].is_infinite() && self.hi[j].is_infinite()) {
                    self.x[j] = nearest_bound(v, self.lo[j], self.hi[j]);
                }
            }
        }
        self.since_reinvert = 0;
        self.recompute_basics();
    }

    #[cfg(test)]
    pub(crate) fn max_infeasibility(&self) -> f64 {
        (0..self.w()).map(|j| self.infeasibility(j)).fold(0.0, f64::max)
    }
}

enum Step {
    Unbounded,
    Flip,
    Pivot { row: usize, theta: f64, to_upper: bool },
}

/// Default resting value of a nonbasic variable.
fn rest_value(lo: f64, hi: f64) -> f64 {
    if lo.is_finite() {
        lo
    } else if hi.is_finite() {
        hi
    } else {
        0.0
    }
}

fn nearest_bound(v: f64, lo: f64, hi: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => {
            if (v - lo).abs() <= (hi - v).abs() {
                lo
            } else {
                hi
            }
        }
        (true, false) => lo,
        (false, true) => hi,
        (false, false) => 0.0,
    }
}
