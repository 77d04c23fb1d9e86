//! Linear invariants over memory units: certification and inference.
//!
//! A [`LinearInvariant`] claims `alpha_l (t-1) <= m^t <= alpha_u (t-1)` for
//! the memory unit `m` at every step `t`. At `t = 1` both sides are 0, so
//! only the inductive step needs checking, which [`build_phi_i`] phrases as
//! feed-forward queries over the snapshot network.

use std::collections::BTreeMap;
use std::fmt;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::network::{snapshot_prefix, Activation, FfnnValues, Node, RnnNetwork, UnitRef};
use crate::props::{
    Counterexample, FfnnQuery, InputProperty, Interval, LinConstraint, LinExpr, RnnQuery, Var,
};
use crate::solver::{self, MilpProblem, Sense, SolveStatus, SolverOptions};
use crate::verifier::{self, propagate_bounds, FfnnOutcome};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bound {
    Lower,
    Upper,
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bound::Lower => "lower",
            Bound::Upper => "upper",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearInvariant {
    pub unit: UnitRef,
    pub alpha_l: f64,
    pub alpha_u: f64,
}

impl LinearInvariant {
    pub fn new(unit: UnitRef, alpha_l: f64, alpha_u: f64) -> Self {
        Self { unit, alpha_l, alpha_u }
    }

    /// Bounds on the memory value at step `t`.
    pub fn interval_at(&self, t: usize) -> Interval {
        let s = t as f64 - 1.0;
        Interval::new(self.alpha_l * s, self.alpha_u * s)
    }

    pub fn holds_at(&self, value: f64, t: usize, tol: f64) -> bool {
        self.interval_at(t).contains(value, tol)
    }
}

/// At most one invariant per memory unit, ordered by unit.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<LinearInvariant>", into = "Vec<LinearInvariant>")]
pub struct InvariantSet {
    invariants: Vec<LinearInvariant>,
}

impl From<Vec<LinearInvariant>> for InvariantSet {
    fn from(v: Vec<LinearInvariant>) -> Self {
        Self::from_invariants(v)
    }
}

impl From<InvariantSet> for Vec<LinearInvariant> {
    fn from(s: InvariantSet) -> Self {
        s.invariants
    }
}

impl InvariantSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_invariants(invs: impl IntoIterator<Item = LinearInvariant>) -> Self {
        let mut s = Self::new();
        for i in invs {
            s.insert(i);
        }
        s
    }

    /// Inserts or replaces the invariant for `inv.unit`.
    pub fn insert(&mut self, inv: LinearInvariant) {
        match self.invariants.binary_search_by(|x| x.unit.cmp(&inv.unit)) {
            Ok(i) => self.invariants[i] = inv,
            Err(i) => self.invariants.insert(i, inv),
        }
    }

    pub fn get(&self, unit: UnitRef) -> Option<&LinearInvariant> {
        self.invariants.iter().find(|i| i.unit == unit)
    }

    pub fn iter(&self) -> impl Iterator<Item = &LinearInvariant> {
        self.invariants.iter()
    }

    pub fn len(&self) -> usize {
        self.invariants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.invariants.is_empty()
    }

    pub fn layer(&self, layer: usize) -> Vec<LinearInvariant> {
        self.invariants.iter().filter(|i| i.unit.layer == layer).copied().collect()
    }

    pub fn extend(&mut self, invs: &[LinearInvariant]) {
        for &i in invs {
            self.insert(i);
        }
    }

    /// Only the invariants of layers below `layer`.
    pub fn below(&self, layer: usize) -> InvariantSet {
        Self { invariants: self.invariants.iter().filter(|i| i.unit.layer < layer).copied().collect() }
    }

    /// Whether every memory unit of layers `< layer` has an invariant.
    pub fn covers_below(&self, net: &RnnNetwork, layer: usize) -> bool {
        net.memory_units().into_iter().filter(|u| u.layer < layer).all(|u| self.get(u).is_some())
    }
}

/// Memory-unit ranges at step `t` implied by the invariant set; ReLU memory
/// is additionally non-negative.
fn memory_interval(net: &RnnNetwork, inv: &LinearInvariant, t: usize) -> Interval {
    let mut iv = inv.interval_at(t);
    if net.layer(inv.unit.layer).activation == Activation::Relu {
        iv.lo = iv.lo.max(0.0);
        iv.hi = iv.hi.max(0.0);
    }
    iv
}

/// Snapshot-level constraints `alpha_l (t-1) <= m <= alpha_u (t-1)`.
pub(crate) fn invariant_constraints(net: &RnnNetwork, inv: &LinearInvariant, m: Node, t: Node) -> Vec<LinConstraint<Node>> {
    let mv = LinExpr::var(m);
    let mut out = vec![
        // m - alpha_u t + alpha_u <= 0
        LinConstraint::le(mv.clone().plus(&LinExpr::term(t, -inv.alpha_u)), -inv.alpha_u),
        LinConstraint::ge(mv.clone().plus(&LinExpr::term(t, -inv.alpha_l)), -inv.alpha_l),
    ];
    if net.layer(inv.unit.layer).activation == Activation::Relu {
        out.push(LinConstraint::ge(mv, 0.0));
    }
    out
}

pub(crate) fn map_input_var(v: &Var, time: Node) -> Result<Node> {
    match v {
        Var::Input(k) => Ok(Node::Input(*k)),
        Var::Time => Ok(time),
        other => Err(Error::Structure(format!("input property mentions {other}"))),
    }
}

/// One inductive-step query: UNSAT means the bound is preserved.
#[derive(Clone, Debug)]
pub struct PhiQuery {
    pub unit: UnitRef,
    pub bound: Bound,
    pub query: FfnnQuery,
}

/// Builds the queries certifying `candidate` (all memory units of one layer)
/// given already-certified invariants for every earlier memory layer.
///
/// The step is checked for `1 <= t <= t_max - 1`. Lower bounds with
/// `alpha_l <= 0` on ReLU units hold because stored values are non-negative;
/// no query is emitted for them.
pub fn build_phi_i(
    net: &RnnNetwork,
    input: &InputProperty,
    proven: &InvariantSet,
    candidate: &[LinearInvariant],
    t_max: usize,
) -> Result<Vec<PhiQuery>> {
    let Some(first) = candidate.first() else {
        return Err(Error::Structure("empty candidate".into()));
    };
    let layer = first.unit.layer;
    if candidate.iter().any(|c| c.unit.layer != layer) {
        return Err(Error::Structure("candidate spans several layers".into()));
    }
    let expected: Vec<UnitRef> = net.memory_units().into_iter().filter(|u| u.layer == layer).collect();
    let mut given: Vec<UnitRef> = candidate.iter().map(|c| c.unit).collect();
    given.sort();
    if given != expected {
        return Err(Error::Structure(format!("candidate must cover exactly the memory units of layer {layer}")));
    }
    if !proven.covers_below(net, layer) {
        return Err(Error::Structure(format!("earlier memory layers lack invariants for layer {layer}")));
    }
    if t_max < 2 {
        return Ok(Vec::new());
    }
    let s = snapshot_prefix(net, layer + 1);
    let t = s.time_node();
    let mut p: Vec<LinConstraint<Node>> = Vec::new();
    for c in &input.constraints {
        let expr = c.expr.try_expand(|v| map_input_var(v, t).map(LinExpr::var))?;
        p.push(LinConstraint { expr, relation: c.relation });
    }
    p.push(LinConstraint::ge(LinExpr::var(t), 1.0));
    p.push(LinConstraint::le(LinExpr::var(t), (t_max - 1) as f64));
    for &(unit, k) in &s.memory_inputs {
        let inv = if unit.layer == layer {
            candidate.iter().find(|c| c.unit == unit).copied()
        } else {
            proven.get(unit).copied()
        }
        .expect("coverage checked");
        p.extend(invariant_constraints(net, &inv, Node::Input(k), t));
    }
    let relu = net.layer(layer).activation == Activation::Relu;
    let mut out = Vec::new();
    for inv in candidate {
        let v = LinExpr::var(Node::neuron(layer, inv.unit.unit));
        // not (v <= alpha_u t), non-strict
        let q = LinConstraint::ge(v.clone().plus(&LinExpr::term(t, -inv.alpha_u)), 0.0);
        out.push(PhiQuery { unit: inv.unit, bound: Bound::Upper, query: FfnnQuery::new(p.clone(), s.ffnn.clone(), vec![q])? });
        if relu && inv.alpha_l <= 0.0 {
            continue;
        }
        let q = LinConstraint::le(v.plus(&LinExpr::term(t, -inv.alpha_l)), 0.0);
        out.push(PhiQuery { unit: inv.unit, bound: Bound::Lower, query: FfnnQuery::new(p.clone(), s.ffnn.clone(), vec![q])? });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum CheckOutcome {
    Certified,
    /// The bound is not preserved; `witness` is the snapshot assignment.
    Refuted { unit: UnitRef, bound: Bound, witness: Option<FfnnValues> },
}

impl CheckOutcome {
    pub fn is_certified(&self) -> bool {
        matches!(self, CheckOutcome::Certified)
    }
}

/// Time and query counts spent on inductive-step checks.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Effort {
    pub phi_time: Duration,
    pub phi_queries: usize,
    pub milp_time: Duration,
}

/// Certified iff every query is UNSAT; stops at the first SAT query.
pub fn check_invariant(queries: &[PhiQuery], opts: &SolverOptions, effort: &mut Effort) -> Result<CheckOutcome> {
    let start = Instant::now();
    let res = (|| {
        for q in queries {
            effort.phi_queries += 1;
            if let FfnnOutcome::Sat(w) = verifier::verify(&q.query, opts)? {
                return Ok(CheckOutcome::Refuted { unit: q.unit, bound: q.bound, witness: Some(w) });
            }
        }
        Ok(CheckOutcome::Certified)
    })();
    effort.phi_time += start.elapsed();
    res
}

/// [`build_phi_i`] followed by [`check_invariant`]. Candidates with
/// `alpha_u < alpha_l` are refuted without a query.
pub fn certify(
    net: &RnnNetwork,
    input: &InputProperty,
    proven: &InvariantSet,
    candidate: &[LinearInvariant],
    t_max: usize,
    opts: &SolverOptions,
    effort: &mut Effort,
) -> Result<CheckOutcome> {
    if t_max >= 2 {
        if let Some(bad) = candidate.iter().find(|c| c.alpha_u < c.alpha_l) {
            return Ok(CheckOutcome::Refuted { unit: bad.unit, bound: Bound::Upper, witness: None });
        }
    }
    let qs = build_phi_i(net, input, proven, candidate, t_max)?;
    check_invariant(&qs, opts, effort)
}

/// Post-activation boxes of layers `0..=upto` at a concrete step `t`, with
/// every memory unit of those layers bounded by its invariant at `t`.
pub fn affine_bounds(
    net: &RnnNetwork,
    input: &InputProperty,
    proven: &InvariantSet,
    upto: usize,
    t: usize,
    opts: &SolverOptions,
) -> Result<Vec<Vec<Interval>>> {
    let s = snapshot_prefix(net, upto + 1);
    let mut bx = input.input_box(net.input_dim(), Interval::point(t as f64), opts)?;
    bx.push(Interval::point(t as f64));
    for &(unit, _) in &s.memory_inputs {
        let inv = proven
            .get(unit)
            .ok_or_else(|| Error::Structure(format!("memory unit {unit} has no invariant")))?;
        bx.push(memory_interval(net, inv, t));
    }
    Ok(propagate_bounds(&s.ffnn, &bx).post)
}

/// The "large constant" for the binary searches: the memory-free interval
/// upper bound of the unit's neuron times `t_max`, clamped to `[1e3, 1e6]`.
pub fn m_policy(net: &RnnNetwork, input: &InputProperty, units: &[UnitRef], t_max: usize, opts: &SolverOptions) -> Result<f64> {
    let upto = units.iter().map(|u| u.layer).max().unwrap_or(0);
    let s = snapshot_prefix(net, upto + 1);
    let mut bx = input.input_box(net.input_dim(), Interval::new(1.0, t_max as f64), opts)?;
    bx.push(Interval::new(1.0, t_max as f64));
    bx.extend(s.memory_inputs.iter().map(|_| Interval::point(0.0)));
    let b = propagate_bounds(&s.ffnn, &bx);
    let hi = units.iter().map(|u| b.post[u.layer][u.unit].hi.abs()).fold(0.0, f64::max);
    Ok((hi * t_max as f64).clamp(1e3, 1e6))
}

/// What a snapshot query said about a set of invariants.
#[derive(Clone, Debug, PartialEq)]
pub enum SnapshotOutcome {
    Unsat,
    /// Inconclusive: the over-approximation admits a violation.
    Sat,
    /// A genuine counterexample was found while examining the SAT result.
    Violated(Counterexample),
}

#[derive(Clone, Debug, PartialEq)]
pub enum SearchOutcome {
    Holds(InvariantSet),
    Violated(Counterexample),
    Fail(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepResult {
    /// Not inductive: the candidate is too strong.
    Refuted,
    /// Inductive, but the snapshot query is still SAT.
    TooWeak,
    /// Inductive (used by the layer-by-layer search).
    Certified,
    Holds,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    pub unit: UnitRef,
    pub alpha_u: f64,
    pub result: StepResult,
}

#[derive(Clone, Debug)]
pub struct SearchReport {
    pub outcome: SearchOutcome,
    pub steps: Vec<SearchStep>,
    /// Every invariant set that was certified, in order.
    pub certified: Vec<InvariantSet>,
    pub effort: Effort,
    pub refinements: usize,
}

/// Binary search over `alpha_u` for a network with exactly one memory unit
/// (a ReLU unit); `alpha_l` is fixed at 0.
pub fn alg1(
    q: &RnnQuery,
    m: f64,
    epsilon: f64,
    opts: &SolverOptions,
    mut snapshot: impl FnMut(&InvariantSet) -> Result<SnapshotOutcome>,
) -> Result<SearchReport> {
    let units = q.network.memory_units();
    if units.len() != 1 {
        return Err(Error::Structure(format!("binary search needs exactly one memory unit, found {}", units.len())));
    }
    let unit = units[0];
    if q.network.layer(unit.layer).activation != Activation::Relu {
        return Err(Error::Structure("binary search supports ReLU memory units only".into()));
    }
    let mut report = SearchReport {
        outcome: SearchOutcome::Fail(String::new()),
        steps: Vec::new(),
        certified: Vec::new(),
        effort: Effort::default(),
        refinements: 0,
    };
    let (mut lb, mut ub) = (-m, m);
    while ub - lb >= epsilon {
        let alpha = (lb + ub) / 2.0;
        let cand = [LinearInvariant::new(unit, 0.0, alpha)];
        report.refinements += 1;
        let check = certify(&q.network, &q.input, &InvariantSet::new(), &cand, q.t_max, opts, &mut report.effort)?;
        if !check.is_certified() {
            report.steps.push(SearchStep { unit, alpha_u: alpha, result: StepResult::Refuted });
            lb = alpha;
            continue;
        }
        let set = InvariantSet::from_invariants(cand);
        report.certified.push(set.clone());
        match snapshot(&set)? {
            SnapshotOutcome::Unsat => {
                report.steps.push(SearchStep { unit, alpha_u: alpha, result: StepResult::Holds });
                report.outcome = SearchOutcome::Holds(set);
                return Ok(report);
            }
            SnapshotOutcome::Violated(cex) => {
                report.steps.push(SearchStep { unit, alpha_u: alpha, result: StepResult::TooWeak });
                report.outcome = SearchOutcome::Violated(cex);
                return Ok(report);
            }
            SnapshotOutcome::Sat => {
                report.steps.push(SearchStep { unit, alpha_u: alpha, result: StepResult::TooWeak });
                ub = alpha;
            }
        }
    }
    report.outcome = SearchOutcome::Fail(format!("search range [{lb}, {ub}] narrowed below {epsilon}"));
    Ok(report)
}

/// How many times a refuted loose invariant is doubled before giving up.
const LOOSE_DOUBLINGS: usize = 16;

/// Layer-by-layer search for networks whose memory layers each hold exactly
/// one (ReLU) memory unit; upper bounds only, `alpha_l = 0`.
///
/// A refuted initial invariant `M i` is doubled before giving up, and when a
/// layer's bound tightens the search floors of the layers above it are
/// reset, since their refutations assumed the looser bound.
pub fn alg2(
    q: &RnnQuery,
    m: f64,
    epsilon: f64,
    opts: &SolverOptions,
    mut snapshot: impl FnMut(&InvariantSet) -> Result<SnapshotOutcome>,
) -> Result<SearchReport> {
    let net = &q.network;
    let layers = net.memory_layers();
    let mut units = Vec::new();
    for &l in &layers {
        let us: Vec<UnitRef> = net.memory_units().into_iter().filter(|u| u.layer == l).collect();
        if us.len() != 1 || net.layer(l).activation != Activation::Relu {
            return Err(Error::Structure(format!("layer {l} must hold exactly one ReLU memory unit")));
        }
        units.push(us[0]);
    }
    let mut report = SearchReport {
        outcome: SearchOutcome::Fail(String::new()),
        steps: Vec::new(),
        certified: Vec::new(),
        effort: Effort::default(),
        refinements: 0,
    };
    let mut set = InvariantSet::new();
    let mut lb = Vec::new();
    let mut ub = Vec::new();
    for (k, &unit) in units.iter().enumerate() {
        let scale = (k + 1) as f64;
        let mut alpha = m * scale;
        let mut ok = false;
        for _ in 0..=LOOSE_DOUBLINGS {
            let cand = [LinearInvariant::new(unit, 0.0, alpha)];
            let check = certify(net, &q.input, &set, &cand, q.t_max, opts, &mut report.effort)?;
            report.steps.push(SearchStep {
                unit,
                alpha_u: alpha,
                result: if check.is_certified() { StepResult::Certified } else { StepResult::Refuted },
            });
            if check.is_certified() {
                ok = true;
                break;
            }
            alpha *= 2.0;
        }
        if !ok {
            report.outcome = SearchOutcome::Fail(format!("no loose invariant certified for memory unit {unit}"));
            return Ok(report);
        }
        set.insert(LinearInvariant::new(unit, 0.0, alpha));
        lb.push(-m * scale);
        ub.push(alpha);
    }
    report.certified.push(set.clone());
    loop {
        match snapshot(&set)? {
            SnapshotOutcome::Unsat => {
                report.outcome = SearchOutcome::Holds(set);
                return Ok(report);
            }
            SnapshotOutcome::Violated(cex) => {
                report.outcome = SearchOutcome::Violated(cex);
                return Ok(report);
            }
            SnapshotOutcome::Sat => {}
        }
        let mut progress = false;
        for (k, &unit) in units.iter().enumerate() {
            if ub[k] - lb[k] <= epsilon {
                continue;
            }
            progress = true;
            let alpha = (ub[k] + lb[k]) / 2.0;
            let cand = [LinearInvariant::new(unit, 0.0, alpha)];
            report.refinements += 1;
            let check = certify(net, &q.input, &set.below(unit.layer), &cand, q.t_max, opts, &mut report.effort)?;
            if check.is_certified() {
                set.insert(cand[0]);
                ub[k] = alpha;
                // refutations above were made against the looser invariant
                for (h, l) in lb.iter_mut().enumerate().skip(k + 1) {
                    *l = -m * (h + 1) as f64;
                }
                report.certified.push(set.clone());
                report.steps.push(SearchStep { unit, alpha_u: alpha, result: StepResult::Certified });
            } else {
                lb[k] = alpha;
                report.steps.push(SearchStep { unit, alpha_u: alpha, result: StepResult::Refuted });
            }
        }
        if !progress {
            report.outcome = SearchOutcome::Fail("tightest invariants found are too weak".into());
            return Ok(report);
        }
    }
}

/// Lower-bound handling in MILP inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LowerMode {
    /// Optimise `alpha_l` jointly.
    Free,
    /// Fix `alpha_l = 0` (always valid for ReLU memory).
    Zero,
}

/// Joint MILP inference of the invariants of one layer.
#[derive(Clone, Debug)]
pub struct LayerInference<'a> {
    pub net: &'a RnnNetwork,
    pub input: &'a InputProperty,
    pub proven: &'a InvariantSet,
    pub layer: usize,
    pub t_max: usize,
    /// Steps whose obligations are encoded (subset of `1..t_max`).
    pub steps: Vec<usize>,
    pub lower: LowerMode,
    /// Slack added to every obligation so that candidates are strictly
    /// inside the region the non-strict certification queries accept.
    pub margin: f64,
    /// Box for every alpha.
    pub alpha_bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Inference {
    Candidate { invariants: Vec<LinearInvariant>, objective: f64 },
    Infeasible,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Strengthened {
    Candidate { invariants: Vec<LinearInvariant>, no_progress: bool },
    Infeasible,
}

impl<'a> LayerInference<'a> {
    pub fn new(net: &'a RnnNetwork, input: &'a InputProperty, proven: &'a InvariantSet, layer: usize, t_max: usize) -> Self {
        Self {
            net,
            input,
            proven,
            layer,
            t_max,
            steps: (1..t_max).collect(),
            lower: LowerMode::Free,
            margin: 0.0,
            alpha_bound: 1e3,
        }
    }

    pub fn infer(&self, opts: &SolverOptions) -> Result<Inference> {
        self.solve(None, opts)
    }

    /// Re-solves with `alpha_u <= prev_u - eps` and `alpha_l >= prev_l`.
    pub fn strengthen(&self, previous: &[LinearInvariant], eps: f64, opts: &SolverOptions) -> Result<Strengthened> {
        if eps < 0.0 {
            return Err(Error::InvalidArgument("strengthening step must be non-negative".into()));
        }
        if eps == 0.0 {
            return Ok(Strengthened::Candidate { invariants: previous.to_vec(), no_progress: true });
        }
        Ok(match self.solve(Some((previous, eps)), opts)? {
            Inference::Candidate { invariants, .. } => Strengthened::Candidate { invariants, no_progress: false },
            Inference::Infeasible => Strengthened::Infeasible,
        })
    }

    fn solve(&self, tighten: Option<(&[LinearInvariant], f64)>, opts: &SolverOptions) -> Result<Inference> {
        let net = self.net;
        let layer = self.layer;
        let lw = net.layer(layer);
        let units: Vec<usize> = lw.memory_units();
        if units.is_empty() {
            return Err(Error::Structure(format!("layer {layer} has no memory units")));
        }
        if !self.proven.covers_below(net, layer) {
            return Err(Error::Structure(format!("earlier memory layers lack invariants for layer {layer}")));
        }
        if self.steps.iter().any(|&t| t == 0 || t >= self.t_max) {
            return Err(Error::InvalidArgument("inference steps must lie in 1..t_max".into()));
        }
        let relu = lw.activation == Activation::Relu;
        let a = self.alpha_bound;
        let mut p = MilpProblem::new();
        let mut au = BTreeMap::new();
        let mut al = BTreeMap::new();
        for &j in &units {
            au.insert(j, p.add_var(-a, a));
            let l = match self.lower {
                LowerMode::Zero => p.add_var(0.0, 0.0),
                LowerMode::Free => p.add_var(-a, a),
            };
            al.insert(j, l);
            p.add_constraint(LinConstraint::le(LinExpr::var(l).minus(&LinExpr::var(au[&j])), 0.0));
        }
        if let Some((prev, eps)) = tighten {
            for inv in prev {
                let j = inv.unit.unit;
                if let (Some(&u), Some(&l)) = (au.get(&j), al.get(&j)) {
                    p.add_constraint(LinConstraint::le(LinExpr::var(u), inv.alpha_u - eps));
                    if self.lower == LowerMode::Free {
                        p.add_constraint(LinConstraint::ge(LinExpr::var(l), inv.alpha_l));
                    }
                }
            }
        }
        let eta = self.margin;
        for &t in &self.steps {
            let tf = t as f64;
            let s = tf - 1.0;
            // box of the layer's feed-forward inputs at step t
            let src: Vec<Interval> = if layer == 0 {
                self.input.input_box(net.input_dim(), Interval::point(tf), opts)?
            } else {
                affine_bounds(net, self.input, self.proven, layer - 1, t, opts)?.swap_remove(layer - 1)
            };
            for &j in &units {
                let mut wl = lw.bias[j];
                let mut wh = lw.bias[j];
                for (&w, iv) in lw.weights.row(j).iter().zip(&src) {
                    let si = iv.scale(w);
                    wl += si.lo;
                    wh += si.hi;
                }
                // L_max / L_min as affine expressions in the alphas
                let mut lmax = LinExpr::constant(wh);
                let mut lmin = LinExpr::constant(wl);
                for &m in &units {
                    let h = lw.memory.get(j, m);
                    if h > 0.0 {
                        lmax.add_term(au[&m], h * s);
                        lmin.add_term(al[&m], h * s);
                    } else if h < 0.0 {
                        lmax.add_term(al[&m], h * s);
                        lmin.add_term(au[&m], h * s);
                    }
                }
                let u = LinExpr::term(au[&j], tf);
                // alpha_u t >= L_max + eta, and >= eta for ReLU
                p.add_constraint(LinConstraint::new(u.clone(), crate::props::Relation::Ge, lmax.clone().plus(&LinExpr::constant(eta))));
                if relu {
                    p.add_constraint(LinConstraint::ge(u.clone(), eta));
                }
                let l = LinExpr::term(al[&j], tf);
                if !relu {
                    p.add_constraint(LinConstraint::new(l, crate::props::Relation::Le, lmin.minus(&LinExpr::constant(eta))));
                } else if self.lower == LowerMode::Free {
                    // (alpha_l t <= 0) or (alpha_l t <= L_min - eta)
                    let d = p.add_binary();
                    let big_first = a * tf;
                    // alpha_l t - big * d <= 0
                    p.add_constraint(LinConstraint::le(l.clone().plus(&LinExpr::term(d, -big_first)), 0.0));
                    // alpha_l t - L_min + eta <= big2 (1 - d)
                    let gap = l.clone().minus(&lmin).plus(&LinExpr::constant(eta));
                    let big_second = expr_upper(&gap, a).max(0.0) + 1.0;
                    p.add_constraint(LinConstraint::le(gap.plus(&LinExpr::term(d, big_second)), big_second));
                }
            }
        }
        let mut obj = LinExpr::new();
        for &j in &units {
            obj.add_term(au[&j], 1.0);
            obj.add_term(al[&j], -1.0);
        }
        p.set_objective(obj, Sense::Minimize);
        let r = solver::solve_milp(&p, opts)?;
        match r.status {
            SolveStatus::Infeasible => Ok(Inference::Infeasible),
            SolveStatus::Unbounded => Err(Error::Structure("inference MILP unbounded despite boxed alphas".into())),
            SolveStatus::Optimal { value, x } => Ok(Inference::Candidate {
                invariants: units
                    .iter()
                    .map(|&j| LinearInvariant::new(UnitRef::new(layer, j), x[al[&j]], x[au[&j]]))
                    .collect(),
                objective: value,
            }),
        }
    }
}

/// Upper bound of an affine expression whose variables lie in `[-a, a]`,
/// binaries excepted (they only appear after this is computed).
fn expr_upper(e: &LinExpr<usize>, a: f64) -> f64 {
    e.constant + e.terms.values().map(|c| c.abs() * a).sum::<f64>()
}

/// MILP inference with default settings over all steps.
pub fn infer_milp(
    net: &RnnNetwork,
    input: &InputProperty,
    proven: &InvariantSet,
    layer: usize,
    t_max: usize,
    margin: f64,
    opts: &SolverOptions,
) -> Result<Inference> {
    let mut li = LayerInference::new(net, input, proven, layer, t_max);
    li.margin = margin;
    li.alpha_bound = m_policy(net, input, &net.memory_units(), t_max, opts)?;
    li.infer(opts)
}

/// Failure signal driving [`incremental_adjust`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Failure {
    Refuted { unit: UnitRef, bound: Bound },
    SnapshotSat,
}

/// Moves one alpha by `step`: a refuted bound is weakened; a too-weak set
/// has one upper bound tightened, cycling over units via `cursor`.
pub fn incremental_adjust(candidate: &InvariantSet, failure: Failure, step: f64, cursor: &mut usize) -> Result<InvariantSet> {
    if step <= 0.0 || step.is_nan() {
        return Err(Error::InvalidArgument("adjustment step must be positive".into()));
    }
    let mut out = candidate.clone();
    match failure {
        Failure::Refuted { unit, bound } => {
            let mut inv = *candidate
                .get(unit)
                .ok_or_else(|| Error::InvalidArgument(format!("no invariant for unit {unit}")))?;
            match bound {
                Bound::Upper => inv.alpha_u += step,
                Bound::Lower => inv.alpha_l -= step,
            }
            out.insert(inv);
        }
        Failure::SnapshotSat => {
            if candidate.is_empty() {
                return Err(Error::InvalidArgument("empty invariant set".into()));
            }
            let k = *cursor % candidate.len();
            *cursor += 1;
            let mut inv = candidate.invariants[k];
            inv.alpha_u -= step;
            out.insert(inv);
        }
    }
    Ok(out)
}

/// Samples `count` input sequences from P (rejection sampling inside its
/// box) and counts runs in which some memory value leaves its invariant.
pub fn count_trace_violations(
    q: &RnnQuery,
    invariants: &InvariantSet,
    count: usize,
    rng: &mut impl Rng,
    opts: &SolverOptions,
) -> Result<usize> {
    let bx = q.input.input_box(q.network.input_dim(), Interval::new(1.0, q.t_max as f64), opts)?;
    let mut bad = 0;
    for _ in 0..count {
        let Some(inputs) = sample_sequence(q, &bx, rng) else { continue };
        let trace = q.network.evaluate(&inputs)?;
        let violated = (1..=trace.len()).any(|t| {
            invariants.iter().any(|inv| {
                let v = trace.at(t).memory[inv.unit.layer][inv.unit.unit];
                !inv.holds_at(v, t, 1e-9 * (1.0 + v.abs()))
            })
        });
        if violated {
            bad += 1;
        }
    }
    Ok(bad)
}

/// A random input sequence of length `t_max` satisfying P at every step, or
/// `None` if rejection sampling keeps failing.
pub fn sample_sequence(q: &RnnQuery, bx: &[Interval], rng: &mut impl Rng) -> Option<Vec<Vec<f64>>> {
    let mut seq = Vec::with_capacity(q.t_max);
    for t in 1..=q.t_max {
        let mut found = None;
        for _ in 0..1000 {
            let x: Vec<f64> = bx
                .iter()
                .map(|iv| if iv.width() > 0.0 { rng.random_range(iv.lo..=iv.hi) } else { iv.lo })
                .collect();
            if q.input.satisfied_by(&x, t, 0.0) {
                found = Some(x);
                break;
            }
        }
        seq.push(found?);
    }
    Some(seq)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::network::fixtures::{running, crossed, two_layer};
    use crate::props::{OutputProperty, TimeScope};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn box3() -> InputProperty {
        InputProperty::from_box(&[-3.0], &[3.0])
    }

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    fn u(l: usize, j: usize) -> UnitRef {
        UnitRef::new(l, j)
    }

    fn cert(net: &RnnNetwork, proven: &InvariantSet, cand: &[LinearInvariant], t_max: usize) -> CheckOutcome {
        certify(net, &box3(), proven, cand, t_max, &opts(), &mut Effort::default()).unwrap()
    }

    #[test]
    fn running_example_phi_queries() {
        let net = running();
        let cand = [LinearInvariant::new(u(0, 0), 0.0, 3.0)];
        let qs = build_phi_i(&net, &box3(), &InvariantSet::new(), &cand, 5).unwrap();
        // the alpha_l = 0 lower query is discharged statically
        assert_eq!(qs.len(), 1);
        assert_eq!(qs[0].bound, Bound::Upper);
        let q = &qs[0].query;
        // Q' is v - 3t >= 0
        let t = Node::Input(1);
        assert_eq!(q.output, vec![LinConstraint::ge(LinExpr::var(Node::neuron(0, 0)).plus(&LinExpr::term(t, -3.0)), 0.0)]);
        // P' holds x in [-3, 3] and m <= 3(t - 1)
        let m = Node::Input(2);
        assert!(q.input.contains(&LinConstraint::le(LinExpr::var(Node::Input(0)), 3.0)));
        assert!(q.input.contains(&LinConstraint::le(LinExpr::var(m).plus(&LinExpr::term(t, -3.0)), -3.0)));
    }

    #[test]
    fn running_example_certification() {
        let net = running();
        assert!(cert(&net, &InvariantSet::new(), &[LinearInvariant::new(u(0, 0), 0.0, 3.5)], 5).is_certified());
        assert!(!cert(&net, &InvariantSet::new(), &[LinearInvariant::new(u(0, 0), 0.0, 2.0)], 5).is_certified());
        // boundary: 3 is tight at t = 1, rejected under non-strict negation
        assert!(!cert(&net, &InvariantSet::new(), &[LinearInvariant::new(u(0, 0), 0.0, 3.0)], 5).is_certified());
    }

    #[test]
    fn zero_lower_bound_needs_no_query() {
        let net = crossed();
        let cand = [LinearInvariant::new(u(0, 0), 0.0, 50.0), LinearInvariant::new(u(0, 1), 0.0, 50.0)];
        let qs = build_phi_i(&net, &box3(), &InvariantSet::new(), &cand, 3).unwrap();
        assert!(qs.iter().all(|q| q.bound == Bound::Upper));
    }

    #[test]
    fn crossed_certification() {
        let net = crossed();
        let inv = |a: f64, b: f64| [LinearInvariant::new(u(0, 0), 0.0, a), LinearInvariant::new(u(0, 1), 0.0, b)];
        // (9, 6) is tight for unit 0 at t = 2 and unit 1 at t = 1
        assert!(!cert(&net, &InvariantSet::new(), &inv(9.0, 6.0), 3).is_certified());
        assert!(cert(&net, &InvariantSet::new(), &inv(9.2, 6.1), 3).is_certified());
        match cert(&net, &InvariantSet::new(), &inv(50.0, 0.0), 3) {
            CheckOutcome::Refuted { unit, bound, .. } => assert_eq!((unit, bound), (u(0, 1), Bound::Upper)),
            CheckOutcome::Certified => panic!("alpha_u = 0 on unit 1 must fail"),
        }
    }

    #[test]
    fn phi_requires_earlier_layers() {
        let net = two_layer();
        let cand = [LinearInvariant::new(u(1, 0), 0.0, 10.0)];
        assert!(matches!(build_phi_i(&net, &box3(), &InvariantSet::new(), &cand, 5), Err(Error::Structure(_))));
        // incomplete candidate for a layer
        let net = crossed();
        assert!(build_phi_i(&net, &box3(), &InvariantSet::new(), &[LinearInvariant::new(u(0, 0), 0.0, 1.0)], 3).is_err());
    }

    #[test]
    fn single_step_horizon_has_no_queries() {
        let net = running();
        let qs = build_phi_i(&net, &box3(), &InvariantSet::new(), &[LinearInvariant::new(u(0, 0), 0.0, -5.0)], 1).unwrap();
        assert!(qs.is_empty());
    }

    #[test]
    fn affine_bound_examples() {
        let net = running();
        let proven = InvariantSet::from_invariants([LinearInvariant::new(u(0, 0), 0.0, 3.0)]);
        let b = affine_bounds(&net, &box3(), &proven, 0, 5, &opts()).unwrap();
        assert_eq!(b[0], vec![Interval::new(0.0, 15.0)]);
        let b1 = affine_bounds(&net, &box3(), &proven, 0, 1, &opts()).unwrap();
        assert_eq!(b1[0], vec![Interval::new(0.0, 3.0)]);

        let net = two_layer();
        let proven = InvariantSet::from_invariants([
            LinearInvariant::new(u(0, 0), 0.0, 3.0),
            LinearInvariant::new(u(1, 0), 0.0, 9.0),
        ]);
        let b = affine_bounds(&net, &box3(), &proven, 1, 5, &opts()).unwrap();
        assert_eq!(b[1], vec![Interval::new(0.0, 51.0)]);
        assert!(affine_bounds(&net, &box3(), &InvariantSet::new(), 1, 5, &opts()).is_err());
    }

    fn crossed_inference(margin: f64) -> LayerInference<'static> {
        let net: &'static RnnNetwork = Box::leak(Box::new(crossed()));
        let input: &'static InputProperty = Box::leak(Box::new(box3()));
        let proven: &'static InvariantSet = Box::leak(Box::default());
        let mut li = LayerInference::new(net, input, proven, 0, 3);
        li.lower = LowerMode::Zero;
        li.margin = margin;
        li
    }

    /// Closed-form oracle for the Fig. 5 layer: the obligations are
    /// a1 >= 3, a2 >= 6 (t = 1) and a1 >= 3 + a2, a2 >= 6 (t = 2); solve
    /// min a1 + a2 over them as a separate LP.
    fn crossed_oracle() -> (f64, f64) {
        let mut p = crate::solver::LpProblem::new();
        let a1 = p.add_var(-100.0, 100.0);
        let a2 = p.add_var(-100.0, 100.0);
        let v = LinExpr::var;
        p.add_constraint(LinConstraint::ge(v(a1), 3.0));
        p.add_constraint(LinConstraint::ge(v(a2), 6.0));
        p.add_constraint(LinConstraint::ge(v(a1).minus(&v(a2)), 3.0));
        p.set_objective(v(a1).plus(&v(a2)), Sense::Minimize);
        let x = crate::solver::solve_lp(&p, &opts()).unwrap().assignment().unwrap().to_vec();
        (x[0], x[1])
    }

    #[test]
    fn crossed_milp_optimum() {
        let (o1, o2) = crossed_oracle();
        match crossed_inference(0.0).infer(&opts()).unwrap() {
            Inference::Candidate { invariants, .. } => {
                assert!((invariants[0].alpha_u - o1).abs() < 1e-6);
                assert!((invariants[1].alpha_u - o2).abs() < 1e-6);
                assert!((o1 - 9.0).abs() < 1e-9 && (o2 - 6.0).abs() < 1e-9);
            }
            Inference::Infeasible => panic!("inference infeasible"),
        }
    }

    #[test]
    fn crossed_margin_candidate_certifies() {
        let li = crossed_inference(0.025);
        let Inference::Candidate { invariants, .. } = li.infer(&opts()).unwrap() else { panic!() };
        assert!(invariants[0].alpha_u > 9.0 && invariants[0].alpha_u < 9.1);
        assert!(invariants[1].alpha_u > 6.0 && invariants[1].alpha_u < 6.1);
        assert!(cert(li.net, &InvariantSet::new(), &invariants, 3).is_certified());
    }

    #[test]
    fn crossed_free_lower_bounds() {
        let mut li = crossed_inference(0.01);
        li.lower = LowerMode::Free;
        let Inference::Candidate { invariants, .. } = li.infer(&opts()).unwrap() else { panic!() };
        for inv in &invariants {
            assert!(inv.alpha_l <= inv.alpha_u);
        }
        assert!(cert(li.net, &InvariantSet::new(), &invariants, 3).is_certified());
    }

    #[test]
    fn strengthen_examples() {
        let li = crossed_inference(0.0);
        let opt = [LinearInvariant::new(u(0, 0), 0.0, 9.0), LinearInvariant::new(u(0, 1), 0.0, 6.0)];
        assert_eq!(li.strengthen(&opt, 0.1, &opts()).unwrap(), Strengthened::Infeasible);
        let loose = [LinearInvariant::new(u(0, 0), 0.0, 20.0), LinearInvariant::new(u(0, 1), 0.0, 10.0)];
        match li.strengthen(&loose, 0.1, &opts()).unwrap() {
            Strengthened::Candidate { invariants, no_progress } => {
                assert!(!no_progress);
                assert!(invariants[0].alpha_u <= 9.0 + 1e-6 && invariants[1].alpha_u <= 6.0 + 1e-6);
            }
            Strengthened::Infeasible => panic!(),
        }
        assert_eq!(
            li.strengthen(&loose, 0.0, &opts()).unwrap(),
            Strengthened::Candidate { invariants: loose.to_vec(), no_progress: true }
        );
    }

    #[test]
    fn running_example_inference_boundary() {
        let net = running();
        let input = box3();
        let proven = InvariantSet::new();
        let mut li = LayerInference::new(&net, &input, &proven, 0, 5);
        li.lower = LowerMode::Zero;
        let Inference::Candidate { invariants, .. } = li.infer(&opts()).unwrap() else { panic!() };
        assert!((invariants[0].alpha_u - 3.0).abs() < 1e-6);
        li.margin = 0.01;
        let Inference::Candidate { invariants, .. } = li.infer(&opts()).unwrap() else { panic!() };
        assert!(invariants[0].alpha_u > 3.0);
        assert!(cert(&net, &proven, &invariants, 5).is_certified());
    }

    #[test]
    fn negative_memory_row_gives_zero_bound() {
        // pre-activation -m with a zero input box never goes positive
        use crate::network::{LayerWeights, Matrix};
        let hidden = LayerWeights::new(
            Matrix::from_row_major(1, 1, vec![1.0]).unwrap(),
            Some(Matrix::from_row_major(1, 1, vec![-1.0]).unwrap()),
            vec![0.0],
            Activation::Relu,
        )
        .unwrap();
        let out = LayerWeights::new(Matrix::from_row_major(1, 1, vec![1.0]).unwrap(), None, vec![0.0], Activation::Identity).unwrap();
        let net = RnnNetwork::new(1, vec![hidden, out]).unwrap();
        let input = InputProperty::from_box(&[0.0], &[0.0]);
        let proven = InvariantSet::new();
        let mut li = LayerInference::new(&net, &input, &proven, 0, 4);
        li.lower = LowerMode::Zero;
        let Inference::Candidate { invariants, .. } = li.infer(&opts()).unwrap() else { panic!() };
        assert!(invariants[0].alpha_u.abs() < 1e-9);
    }

    #[test]
    fn incremental_examples() {
        let set = InvariantSet::from_invariants([
            LinearInvariant::new(u(0, 0), 0.0, 20.0),
            LinearInvariant::new(u(0, 1), 0.0, 0.0),
        ]);
        let mut cursor = 0;
        let w = incremental_adjust(&set, Failure::Refuted { unit: u(0, 1), bound: Bound::Upper }, 2.0, &mut cursor).unwrap();
        assert_eq!(w.get(u(0, 1)).unwrap().alpha_u, 2.0);
        assert_eq!(w.get(u(0, 0)).unwrap().alpha_u, 20.0);
        let t = incremental_adjust(&set, Failure::SnapshotSat, 1.0, &mut cursor).unwrap();
        assert_eq!(t.get(u(0, 0)).unwrap().alpha_u, 19.0);
        assert_eq!(cursor, 1);
        let t2 = incremental_adjust(&t, Failure::SnapshotSat, 1.0, &mut cursor).unwrap();
        assert_eq!(t2.get(u(0, 1)).unwrap().alpha_u, -1.0);
        assert!(incremental_adjust(&set, Failure::SnapshotSat, 0.0, &mut cursor).is_err());
    }

    fn query(net: RnnNetwork, threshold: f64, out: usize, t_max: usize) -> RnnQuery {
        let q = OutputProperty::new(
            vec![vec![LinConstraint::ge(LinExpr::var(Var::Output(out)), threshold)]],
            TimeScope::AnyStep,
        );
        RnnQuery::new(box3(), net, q, t_max).unwrap()
    }

    /// Snapshot oracle without falsification, built directly from the
    /// snapshot network.
    fn plain_snapshot(q: &RnnQuery) -> impl FnMut(&InvariantSet) -> Result<SnapshotOutcome> + '_ {
        move |inv| {
            let s = crate::network::snapshot(&q.network);
            let t = s.time_node();
            let mut p: Vec<LinConstraint<Node>> = q
                .input
                .constraints
                .iter()
                .map(|c| c.map_vars(|v| map_input_var(v, t).unwrap()))
                .collect();
            p.push(LinConstraint::ge(LinExpr::var(t), 1.0));
            p.push(LinConstraint::le(LinExpr::var(t), q.t_max as f64));
            for &(unit, k) in &s.memory_inputs {
                p.extend(invariant_constraints(&q.network, inv.get(unit).unwrap(), Node::Input(k), t));
            }
            let last = q.network.output_layer();
            for conj in &q.output.disjuncts {
                let out = conj
                    .iter()
                    .map(|c| {
                        c.map_vars(|v| match v {
                            Var::Output(k) => Node::neuron(last, *k),
                            _ => t,
                        })
                    })
                    .collect();
                let fq = FfnnQuery::new(p.clone(), s.ffnn.clone(), out).unwrap();
                if verifier::verify(&fq, &opts())?.is_sat() {
                    return Ok(SnapshotOutcome::Sat);
                }
            }
            Ok(SnapshotOutcome::Unsat)
        }
    }

    #[test]
    fn alg1_trace_with_small_m() {
        let q = query(running(), 16.0, 0, 5);
        let r = alg1(&q, 4.0, 0.1, &opts(), plain_snapshot(&q)).unwrap();
        let trace: Vec<(f64, StepResult)> = r.steps.iter().map(|s| (s.alpha_u, s.result)).collect();
        assert_eq!(
            trace,
            vec![
                (0.0, StepResult::Refuted),
                (2.0, StepResult::Refuted),
                (3.0, StepResult::Refuted),
                (3.5, StepResult::TooWeak),
                (3.25, StepResult::TooWeak),
                (3.125, StepResult::Holds),
            ]
        );
        assert!(matches!(r.outcome, SearchOutcome::Holds(_)));
    }

    #[test]
    fn alg1_with_policy_m() {
        let q = query(running(), 16.0, 0, 5);
        let m = m_policy(&q.network, &q.input, &q.network.memory_units(), 5, &opts()).unwrap();
        assert_eq!(m, 1e3);
        let r = alg1(&q, m, 0.01, &opts(), plain_snapshot(&q)).unwrap();
        let SearchOutcome::Holds(set) = r.outcome else { panic!("{:?}", r.outcome) };
        let a = set.get(u(0, 0)).unwrap().alpha_u;
        assert!(a > 3.0 && a < 3.25, "{a}");
        let bound = (2.0 * m / 0.01f64).log2().ceil() as usize;
        assert!(r.steps.len() <= bound);

        let easy = query(running(), 1e9, 0, 5);
        let r = alg1(&easy, m, 0.01, &opts(), plain_snapshot(&easy)).unwrap();
        assert!(matches!(r.outcome, SearchOutcome::Holds(_)));
        assert_eq!(r.steps.iter().filter(|s| s.result != StepResult::Refuted).count(), 1);

        let violated = query(running(), 3.0, 0, 5);
        let r = alg1(&violated, m, 0.01, &opts(), plain_snapshot(&violated)).unwrap();
        assert!(matches!(r.outcome, SearchOutcome::Fail(_)));
    }

    #[test]
    fn alg2_examples() {
        let m = 1e3;
        let easy = query(two_layer(), 1e6, 0, 5);
        let r = alg2(&easy, m, 0.01, &opts(), plain_snapshot(&easy)).unwrap();
        assert!(matches!(r.outcome, SearchOutcome::Holds(_)));
        assert_eq!(r.refinements, 0);

        let violated = query(two_layer(), 1.0, 0, 5);
        let r = alg2(&violated, m, 0.01, &opts(), plain_snapshot(&violated)).unwrap();
        assert!(matches!(r.outcome, SearchOutcome::Fail(_)));

        // 64 is within reach of the tightest linear invariants (3, 12)
        let q = query(two_layer(), 64.0, 0, 5);
        let r = alg2(&q, m, 0.01, &opts(), plain_snapshot(&q)).unwrap();
        let SearchOutcome::Holds(set) = r.outcome else { panic!("{:?}", r.outcome) };
        assert!(set.get(u(0, 0)).unwrap().alpha_u < 3.1);
        assert!(set.get(u(1, 0)).unwrap().alpha_u < 12.5);
    }

    #[test]
    fn certified_invariants_hold_on_traces() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let q = query(crossed(), 100.0, 0, 3);
        let set = InvariantSet::from_invariants([LinearInvariant::new(u(0, 0), 0.0, 9.2), LinearInvariant::new(u(0, 1), 0.0, 6.1)]);
        assert_eq!(count_trace_violations(&q, &set, 10_000, &mut rng, &opts()).unwrap(), 0);
        let bad = InvariantSet::from_invariants([LinearInvariant::new(u(0, 0), 0.0, 2.0), LinearInvariant::new(u(0, 1), 0.0, 2.0)]);
        assert!(count_trace_violations(&q, &bad, 1000, &mut rng, &opts()).unwrap() > 0);
    }
}
