//! Branch-and-bound over binary variables.

use super::simplex::{LpOutcome, Simplex};
use super::{MilpProblem, Sense, SolveResult, SolveStats, SolveStatus, SolverError, SolverOptions};

/// Nodes between best-bound restarts of the depth-first search.
const RESTART_EVERY: u64 = 64;

struct Node {
    /// `(lo, hi)` per binary, in the order of `MilpProblem::binaries`.
    fixed: Vec<(f64, f64)>,
    /// Relaxation value of the parent, in minimisation form.
    bound: f64,
}

/// Exact optimum by LP-based branch-and-bound. With an empty objective the
/// search stops at the first integer-feasible point.
pub fn solve_milp(p: &MilpProblem, opts: &SolverOptions) -> Result<SolveResult, SolverError> {
    opts.check_deadline()?;
    p.lp.validate()?;
    let (obj, sense) = p.lp.objective();
    let feasibility_only = obj.terms.is_empty();
    let sign = if sense == Sense::Maximize { -1.0 } else { 1.0 };
    let bins = p.binaries();
    for &b in bins {
        let (l, u) = p.lp.bounds(b);
        if l < 0.0 || u > 1.0 {
            return Err(SolverError::InvalidProblem(format!("binary variable {b} has bounds [{l}, {u}]")));
        }
    }
    let mut lp = Simplex::new(&p.lp, opts);
    let mut stats = SolveStats::default();
    let root: Vec<(f64, f64)> = bins.iter().map(|&b| p.lp.bounds(b)).collect();
    let mut stack = vec![Node { fixed: root, bound: f64::NEG_INFINITY }];
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let gap = |v: f64| opts.optimality_tol * (1.0 + v.abs());

    while let Some(node) = stack.pop() {
        opts.check_deadline()?;
        if stats.nodes >= opts.max_nodes {
            return Err(SolverError::IterationLimit(stats.nodes));
        }
        if let Some((best, _)) = &incumbent {
            if node.bound >= best - gap(*best) {
                continue;
            }
        }
        stats.nodes += 1;
        for (&b, &(l, u)) in bins.iter().zip(&node.fixed) {
            lp.set_bounds(b, l, u);
        }
        let outcome = lp.solve();
        stats.iterations = lp.iterations;
        match outcome? {
            LpOutcome::Infeasible => continue,
            LpOutcome::Unbounded => {
                // an unbounded relaxation with integer-feasible points means
                // an unbounded MILP; report it as such
                return Ok(SolveResult { status: SolveStatus::Unbounded, stats });
            }
            LpOutcome::Optimal => {}
        }
        let x = lp.structurals();
        let value = sign * obj.eval(|&j| x[j]);
        if let Some((best, _)) = &incumbent {
            if value >= best - gap(*best) {
                continue;
            }
        }
        // most fractional binary, lowest index on ties
        let mut branch: Option<(usize, f64)> = None;
        let mut best_frac = opts.integrality_tol;
        for (k, &b) in bins.iter().enumerate() {
            let f = (x[b] - x[b].round()).abs();
            if f > best_frac {
                best_frac = f;
                branch = Some((k, x[b]));
            }
        }
        match branch {
            None => {
                // round binaries and re-solve the continuous part exactly
                let rounded: Vec<(f64, f64)> = bins.iter().map(|&b| (x[b].round(), x[b].round())).collect();
                for (&b, &(l, u)) in bins.iter().zip(&rounded) {
                    lp.set_bounds(b, l, u);
                }
                let polished = lp.solve();
                stats.iterations = lp.iterations;
                let (pv, px) = match polished? {
                    LpOutcome::Optimal => {
                        let px = lp.structurals();
                        (sign * obj.eval(|&j| px[j]), px)
                    }
                    _ => (value, x),
                };
                incumbent = Some((pv, px));
                if feasibility_only {
                    break;
                }
            }
            Some((k, xv)) => {
                let mut down = node.fixed.clone();
                down[k] = (0.0, 0.0);
                let mut up = node.fixed;
                up[k] = (1.0, 1.0);
                let (near, far) = if xv >= 0.5 { (up, down) } else { (down, up) };
                stack.push(Node { fixed: far, bound: value });
                stack.push(Node { fixed: near, bound: value });
            }
        }
        if stats.nodes % RESTART_EVERY == 0 && stack.len() > 1 {
            // move the open node with the best bound to the top; ties keep
            // the deeper (later) node
            let mut best = stack.len() - 1;
            for (i, n) in stack.iter().enumerate() {
                if n.bound < stack[best].bound {
                    best = i;
                }
            }
            let n = stack.remove(best);
            stack.push(n);
        }
    }
    let status = match incumbent {
        Some((v, x)) => SolveStatus::Optimal { value: sign * v, x },
        None => SolveStatus::Infeasible,
    };
    Ok(SolveResult { status, stats })
}
