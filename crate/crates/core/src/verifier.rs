//! Complete verification of feed-forward ReLU queries.
//!
//! Interval bound propagation, refined layer by layer with LP bounds over
//! the relaxation built so far, fixes the phase of every neuron whose
//! pre-activation range does not straddle zero; those neurons are folded
//! into affine expressions over the inputs. Each remaining ReLU becomes one
//! continuous output variable plus one binary in a big-M encoding whose
//! constants are that neuron's own bounds.

use std::collections::BTreeMap;

use crate::network::{Activation, FfnnNetwork, FfnnValues, Node, Source};
use crate::props::{derive_box, FfnnQuery, Interval, LinConstraint, LinExpr, PropertyError, Relation};
use crate::solver::{self, encode_relu, LpProblem, MilpProblem, Sense, SolveStatus, SolverError, SolverOptions};
use crate::{Error, Result};

/// Relative padding applied to propagated pre-activation bounds so that
/// rounding in interval arithmetic can never cut off a reachable value.
const PAD: f64 = 1e-9;

/// Relative padding on bounds obtained from LP optima.
const LP_PAD: f64 = 1e-6;

/// Largest number of ReLUs [`verify_exhaustive`] accepts.
pub const EXHAUSTIVE_LIMIT: usize = 14;

/// Interval bounds for every neuron.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronBounds {
    pub inputs: Vec<Interval>,
    pub pre: Vec<Vec<Interval>>,
    pub post: Vec<Vec<Interval>>,
}

impl NeuronBounds {
    pub fn node(&self, n: Node) -> Interval {
        match n {
            Node::Input(k) => self.inputs[k],
            Node::Neuron { layer, unit } => self.post[layer][unit],
        }
    }

    pub fn output(&self) -> &[Interval] {
        self.post.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Plain interval arithmetic, layer by layer.
pub fn propagate_bounds(net: &FfnnNetwork, input_box: &[Interval]) -> NeuronBounds {
    let mut pre_all: Vec<Vec<Interval>> = Vec::with_capacity(net.layers().len());
    let mut post_all: Vec<Vec<Interval>> = Vec::with_capacity(net.layers().len());
    for layer in net.layers() {
        let mut pre: Vec<Interval> = layer.bias.iter().map(|&b| Interval::point(b)).collect();
        for block in &layer.blocks {
            let src: &[Interval] = match block.source {
                Source::Input => input_box,
                Source::Layer(j) => &post_all[j],
            };
            let src = &src[block.offset..block.offset + block.weights.cols()];
            for (r, iv) in pre.iter_mut().enumerate() {
                for (&w, s) in block.weights.row(r).iter().zip(src) {
                    *iv = iv.add(&s.scale(w));
                }
            }
        }
        let post = pre
            .iter()
            .map(|iv| match layer.activation {
                Activation::Relu => Interval::new(iv.lo.max(0.0), iv.hi.max(0.0)),
                Activation::Identity => *iv,
            })
            .collect();
        pre_all.push(pre);
        post_all.push(post);
    }
    NeuronBounds { inputs: input_box.to_vec(), pre: pre_all, post: post_all }
}

fn padded(iv: Interval) -> Interval {
    Interval::new(iv.lo - PAD * (1.0 + iv.lo.abs()), iv.hi + PAD * (1.0 + iv.hi.abs()))
}

#[derive(Clone, Debug, PartialEq)]
pub enum FfnnOutcome {
    Sat(FfnnValues),
    Unsat,
}

impl FfnnOutcome {
    pub fn is_sat(&self) -> bool {
        matches!(self, FfnnOutcome::Sat(_))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VerifyStats {
    pub binaries: usize,
    pub nodes: u64,
    pub lp_iterations: u64,
}

pub fn verify(q: &FfnnQuery, opts: &SolverOptions) -> Result<FfnnOutcome> {
    verify_with_stats(q, opts).map(|(o, _)| o)
}

/// Input box of a query, or `None` when P is infeasible.
pub fn query_box(q: &FfnnQuery, opts: &SolverOptions) -> Result<Option<Vec<Interval>>> {
    let d = q.network.input_dim();
    let fixed: BTreeMap<Node, Interval> = (0..d).map(|k| (Node::Input(k), Interval::UNBOUNDED)).collect();
    match derive_box(&q.input, &fixed, opts) {
        Ok(b) => Ok(Some((0..d).map(|k| b[&Node::Input(k)]).collect())),
        Err(Error::Property(PropertyError::Infeasible)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn verify_with_stats(q: &FfnnQuery, opts: &SolverOptions) -> Result<(FfnnOutcome, VerifyStats)> {
    let mut stats = VerifyStats::default();
    let Some(input_box) = query_box(q, opts)? else {
        return Ok((FfnnOutcome::Unsat, stats));
    };
    let net = &q.network;
    let bounds = propagate_bounds(net, &input_box);

    // quick refutation: some output constraint cannot hold anywhere in the box
    for c in &q.output {
        let mut iv = Interval::point(c.expr.constant);
        for (n, &a) in &c.expr.terms {
            iv = iv.add(&padded(bounds.node(*n)).scale(a));
        }
        let tol = opts.feasibility_tol;
        let impossible = match c.relation {
            Relation::Le => iv.lo > tol,
            Relation::Ge => iv.hi < -tol,
            Relation::Eq => iv.lo > tol || iv.hi < -tol,
        };
        if impossible {
            return Ok((FfnnOutcome::Unsat, stats));
        }
    }

    let mut p = MilpProblem::new();
    let inputs: Vec<usize> = input_box.iter().map(|iv| p.add_var(iv.lo, iv.hi)).collect();
    let input_expr = |n: &Node| match *n {
        Node::Input(k) => LinExpr::var(inputs[k]),
        Node::Neuron { .. } => unreachable!("input constraints mention inputs only"),
    };
    let coupled: Vec<&LinConstraint<Node>> = q.input.iter().filter(|c| c.expr.terms.len() > 1).collect();
    for c in &coupled {
        p.add_constraint(expand(c, &input_expr));
    }
    let mut post: Vec<Vec<LinExpr<usize>>> = Vec::with_capacity(net.layers().len());
    for (li, layer) in net.layers().iter().enumerate() {
        let mut exprs: Vec<LinExpr<usize>> = layer.bias.iter().map(|&b| LinExpr::constant(b)).collect();
        for block in &layer.blocks {
            for (r, e) in exprs.iter_mut().enumerate() {
                for (c, &w) in block.weights.row(r).iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let k = block.offset + c;
                    match block.source {
                        Source::Input => e.add_term(inputs[k], w),
                        Source::Layer(j) => e.add_scaled(&post[j][k], w),
                    }
                }
            }
        }
        if layer.activation == Activation::Identity {
            post.push(exprs);
            continue;
        }
        let mut pre: Vec<Interval> = exprs
            .iter()
            .zip(&bounds.pre[li])
            .map(|(e, iv)| padded(*iv).intersect(&padded(expr_interval(e, &p.lp))))
            .collect();
        let affine_in_box = li == 0 && coupled.is_empty();
        if !affine_in_box && pre.iter().any(|iv| iv.lo < 0.0 && iv.hi > 0.0) {
            if !tighten(&p.lp, &exprs, &mut pre, opts)? {
                return Ok((FfnnOutcome::Unsat, stats));
            }
        }
        let mut out = Vec::with_capacity(exprs.len());
        for (e, iv) in exprs.into_iter().zip(&pre) {
            if iv.lo >= 0.0 {
                out.push(e);
            } else if iv.hi <= 0.0 {
                out.push(LinExpr::constant(0.0));
            } else {
                let y = p.add_var(0.0, iv.hi);
                encode_relu(&mut p, &e, y, iv.lo, iv.hi)?;
                stats.binaries += 1;
                out.push(LinExpr::var(y));
            }
        }
        post.push(out);
    }
    let expr_of = |n: &Node| -> LinExpr<usize> {
        match *n {
            Node::Input(k) => LinExpr::var(inputs[k]),
            Node::Neuron { layer, unit } => post[layer][unit].clone(),
        }
    };
    for c in &q.output {
        let e = expand(c, &expr_of);
        if e.expr.is_constant() {
            if !e.holds(|_| 0.0, opts.feasibility_tol) {
                return Ok((FfnnOutcome::Unsat, stats));
            }
            continue;
        }
        p.add_constraint(e);
    }
    let r = solver::solve_milp(&p, opts)?;
    stats.nodes = r.stats.nodes;
    stats.lp_iterations = r.stats.iterations;
    match r.status {
        SolveStatus::Infeasible => Ok((FfnnOutcome::Unsat, stats)),
        SolveStatus::Unbounded => Err(SolverError::NumericalFailure("bounded feasibility problem reported unbounded".into()).into()),
        SolveStatus::Optimal { x, .. } => {
            let point: Vec<f64> = inputs.iter().zip(&input_box).map(|(&j, iv)| x[j].clamp(iv.lo, iv.hi)).collect();
            let values = net.evaluate(&point)?;
            let scale = values.layers.iter().flatten().chain(&values.inputs).fold(1.0f64, |m, v| m.max(v.abs()));
            if !q.satisfied_by(&values, 1e-6 * scale) {
                return Err(SolverError::NumericalFailure("satisfying assignment failed replay".into()).into());
            }
            Ok((FfnnOutcome::Sat(values), stats))
        }
    }
}

/// Range of an affine expression over the variable bounds of `p`.
fn expr_interval(e: &LinExpr<usize>, p: &LpProblem) -> Interval {
    let mut iv = Interval::point(e.constant);
    for (&j, &a) in &e.terms {
        let (lo, hi) = p.bounds(j);
        iv = iv.add(&Interval::new(lo, hi).scale(a));
    }
    iv
}

/// Narrows the unstable entries of `pre` by minimising and maximising each
/// expression over the LP relaxation built so far. Returns `false` if the
/// relaxation is empty. Solver trouble other than a time-out leaves the
/// interval bound in place.
fn tighten(lp: &LpProblem, exprs: &[LinExpr<usize>], pre: &mut [Interval], opts: &SolverOptions) -> Result<bool> {
    let mut sweep = solver::LpSweep::new(lp, opts)?;
    for (e, iv) in exprs.iter().zip(pre.iter_mut()) {
        for sense in [Sense::Minimize, Sense::Maximize] {
            if iv.lo >= 0.0 || iv.hi <= 0.0 {
                break;
            }
            match sweep.optimize(e, sense) {
                Ok(SolveStatus::Optimal { value, .. }) => {
                    let slack = LP_PAD * (1.0 + value.abs());
                    if sense == Sense::Minimize {
                        iv.lo = iv.lo.max(value - slack);
                    } else {
                        iv.hi = iv.hi.min(value + slack);
                    }
                }
                Ok(SolveStatus::Infeasible) => return Ok(false),
                Ok(SolveStatus::Unbounded) => {}
                Err(SolverError::TimeBudgetExceeded) => return Err(SolverError::TimeBudgetExceeded.into()),
                Err(e) => log::debug!("bound tightening skipped: {e}"),
            }
        }
    }
    Ok(true)
}

fn expand(c: &LinConstraint<Node>, f: &impl Fn(&Node) -> LinExpr<usize>) -> LinConstraint<usize> {
    let expr = c.expr.try_expand::<usize, ()>(|n| Ok(f(n))).expect("infallible");
    LinConstraint { expr, relation: c.relation }
}

/// Decides the query by enumerating every ReLU phase pattern and solving one
/// LP per pattern. Exponential; intended as a test oracle.
pub fn verify_exhaustive(q: &FfnnQuery, opts: &SolverOptions) -> Result<FfnnOutcome> {
    let net = &q.network;
    let relus: Vec<Node> = net
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.activation == Activation::Relu)
        .flat_map(|(i, l)| (0..l.size()).map(move |u| Node::neuron(i, u)))
        .collect();
    if relus.len() > EXHAUSTIVE_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "exhaustive verification supports at most {EXHAUSTIVE_LIMIT} ReLUs, query has {}",
            relus.len()
        )));
    }
    let mut base = LpProblem::new();
    let d = net.input_dim();
    let mut var: BTreeMap<Node, usize> = BTreeMap::new();
    for k in 0..d {
        var.insert(Node::Input(k), base.add_var(f64::NEG_INFINITY, f64::INFINITY));
    }
    let mut pre: Vec<(Node, LinExpr<usize>, Activation)> = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        for u in 0..layer.size() {
            let mut e = LinExpr::constant(layer.bias[u]);
            for block in &layer.blocks {
                for (c, &w) in block.weights.row(u).iter().enumerate() {
                    let src = match block.source {
                        Source::Input => Node::Input(block.offset + c),
                        Source::Layer(j) => Node::neuron(j, block.offset + c),
                    };
                    e.add_term(var[&src], w);
                }
            }
            let n = Node::neuron(i, u);
            var.insert(n, base.add_var(f64::NEG_INFINITY, f64::INFINITY));
            pre.push((n, e, layer.activation));
        }
    }
    for c in q.input.iter().chain(&q.output) {
        base.add_constraint(c.map_vars(|n| var[n]));
    }
    for mask in 0u32..(1u32 << relus.len()) {
        opts.check_deadline()?;
        let mut lp = base.clone();
        let mut r = 0;
        for (n, e, act) in &pre {
            let v = LinExpr::var(var[n]);
            let active = match act {
                Activation::Identity => true,
                Activation::Relu => {
                    let a = (mask >> r) & 1 == 1;
                    r += 1;
                    if a {
                        lp.add_constraint(LinConstraint::ge(e.clone(), 0.0));
                    } else {
                        lp.add_constraint(LinConstraint::le(e.clone(), 0.0));
                    }
                    a
                }
            };
            if active {
                lp.add_constraint(LinConstraint::new(v, Relation::Eq, e.clone()));
            } else {
                lp.add_constraint(LinConstraint::eq(v, 0.0));
            }
        }
        match solver::solve_lp(&lp, opts)?.status {
            SolveStatus::Optimal { x, .. } => {
                let point: Vec<f64> = (0..d).map(|k| x[var[&Node::Input(k)]]).collect();
                return Ok(FfnnOutcome::Sat(net.evaluate(&point)?));
            }
            SolveStatus::Unbounded => {
                return Err(SolverError::NumericalFailure("feasibility LP reported unbounded".into()).into())
            }
            SolveStatus::Infeasible => {}
        }
    }
    Ok(FfnnOutcome::Unsat)
}
