//! Linear constraints, properties, queries and verdicts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{FfnnNetwork, FfnnValues, Node, RnnNetwork, RnnTrace, UnitRef};
use crate::solver::{self, LpProblem, Sense, SolveStatus, SolverOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropertyError {
    #[error("time step {t} outside 1..={t_max}")]
    TimeOutOfRange { t: usize, t_max: usize },
    #[error("equality constraints cannot be negated")]
    EqualityNegation,
    #[error("variable {0} has no finite bound")]
    UnboundedVariable(String),
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("invalid property: {0}")]
    Invalid(String),
}

/// Variables of RNN-level properties.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Var {
    Input(usize),
    Output(usize),
    Time,
    /// Memory unit value read at the current step.
    Memory(UnitRef),
    /// Post-activation value of a neuron at the current step.
    Neuron(UnitRef),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Input(k) => write!(f, "in:{k}"),
            Var::Output(k) => write!(f, "out:{k}"),
            Var::Time => write!(f, "t"),
            Var::Memory(u) => write!(f, "mem:{u}"),
            Var::Neuron(u) => write!(f, "n:{u}"),
        }
    }
}

/// `sum(coef * var) + constant`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinExpr<V: Ord> {
    pub terms: BTreeMap<V, f64>,
    pub constant: f64,
}

impl<V: Ord> Default for LinExpr<V> {
    fn default() -> Self {
        Self { terms: BTreeMap::new(), constant: 0.0 }
    }
}

impl<V: Ord + Clone> LinExpr<V> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: BTreeMap::new(), constant: c }
    }

    pub fn var(v: V) -> Self {
        Self::term(v, 1.0)
    }

    pub fn term(v: V, c: f64) -> Self {
        let mut e = Self::new();
        e.add_term(v, c);
        e
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (V, f64)>, constant: f64) -> Self {
        let mut e = Self::constant(constant);
        for (v, c) in terms {
            e.add_term(v, c);
        }
        e
    }

    /// Adds `c * v`, merging with an existing term and dropping zeros.
    pub fn add_term(&mut self, v: V, c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(v.clone()).or_insert(0.0);
        *entry += c;
        if *entry == 0.0 {
            self.terms.remove(&v);
        }
    }

    pub fn add_scaled(&mut self, other: &LinExpr<V>, k: f64) {
        for (v, &c) in &other.terms {
            self.add_term(v.clone(), c * k);
        }
        self.constant += other.constant * k;
    }

    pub fn plus(mut self, other: &LinExpr<V>) -> Self {
        self.add_scaled(other, 1.0);
        self
    }

    pub fn minus(mut self, other: &LinExpr<V>) -> Self {
        self.add_scaled(other, -1.0);
        self
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut e = Self::new();
        e.add_scaled(self, k);
        e
    }

    pub fn coeff(&self, v: &V) -> f64 {
        self.terms.get(v).copied().unwrap_or(0.0)
    }

    pub fn vars(&self) -> impl Iterator<Item = &V> {
        self.terms.keys()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    /// Evaluates with `value` supplying each variable.
    pub fn eval(&self, mut value: impl FnMut(&V) -> f64) -> f64 {
        self.terms.iter().fold(self.constant, |acc, (v, &c)| acc + c * value(v))
    }

    /// Replaces `v` by `by`.
    pub fn substitute(&self, v: &V, by: &LinExpr<V>) -> Self {
        match self.terms.get(v) {
            None => self.clone(),
            Some(&c) => {
                let mut e = self.clone();
                e.terms.remove(v);
                e.add_scaled(by, c);
                e
            }
        }
    }

    /// Renames variables; colliding images are summed.
    pub fn map_vars<W: Ord + Clone>(&self, mut f: impl FnMut(&V) -> W) -> LinExpr<W> {
        let mut e = LinExpr::constant(self.constant);
        for (v, &c) in &self.terms {
            e.add_term(f(v), c);
        }
        e
    }

    /// Like `map_vars`, but each variable may become an arbitrary expression.
    pub fn try_expand<W: Ord + Clone, E>(
        &self,
        mut f: impl FnMut(&V) -> Result<LinExpr<W>, E>,
    ) -> Result<LinExpr<W>, E> {
        let mut e = LinExpr::constant(self.constant);
        for (v, &c) in &self.terms {
            e.add_scaled(&f(v)?, c);
        }
        Ok(e)
    }
}

impl<V: Ord + Clone + fmt::Display> fmt::Display for LinExpr<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (v, c) in &self.terms {
            if first {
                write!(f, "{c}*{v}")?;
            } else if *c < 0.0 {
                write!(f, " - {}*{v}", -c)?;
            } else {
                write!(f, " + {c}*{v}")?;
            }
            first = false;
        }
        if first {
            write!(f, "{}", self.constant)
        } else if self.constant < 0.0 {
            write!(f, " - {}", -self.constant)
        } else if self.constant > 0.0 {
            write!(f, " + {}", self.constant)
        } else {
            Ok(())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        })
    }
}

/// `expr relation 0`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinConstraint<V: Ord> {
    pub expr: LinExpr<V>,
    pub relation: Relation,
}

impl<V: Ord + Clone> LinConstraint<V> {
    /// `lhs relation rhs`, normalised to `lhs - rhs relation 0`.
    pub fn new(lhs: LinExpr<V>, relation: Relation, rhs: LinExpr<V>) -> Self {
        Self { expr: lhs.minus(&rhs), relation }
    }

    pub fn le(lhs: LinExpr<V>, rhs: f64) -> Self {
        Self::new(lhs, Relation::Le, LinExpr::constant(rhs))
    }

    pub fn ge(lhs: LinExpr<V>, rhs: f64) -> Self {
        Self::new(lhs, Relation::Ge, LinExpr::constant(rhs))
    }

    pub fn eq(lhs: LinExpr<V>, rhs: f64) -> Self {
        Self::new(lhs, Relation::Eq, LinExpr::constant(rhs))
    }

    /// Satisfaction with an absolute tolerance.
    pub fn holds(&self, value: impl FnMut(&V) -> f64, tol: f64) -> bool {
        let v = self.expr.eval(value);
        match self.relation {
            Relation::Le => v <= tol,
            Relation::Ge => v >= -tol,
            Relation::Eq => v.abs() <= tol,
        }
    }

    /// How far the constraint is from holding (0 when it holds).
    pub fn violation(&self, value: impl FnMut(&V) -> f64) -> f64 {
        let v = self.expr.eval(value);
        match self.relation {
            Relation::Le => v.max(0.0),
            Relation::Ge => (-v).max(0.0),
            Relation::Eq => v.abs(),
        }
    }

    /// Flips `<=` and `>=`. Negation is non-strict: `not (e <= 0)` becomes
    /// `e >= 0`, which over-approximates the strict complement.
    pub fn negate_bound(&self) -> Result<Self, PropertyError> {
        let relation = match self.relation {
            Relation::Le => Relation::Ge,
            Relation::Ge => Relation::Le,
            Relation::Eq => return Err(PropertyError::EqualityNegation),
        };
        Ok(Self { expr: self.expr.clone(), relation })
    }

    pub fn map_vars<W: Ord + Clone>(&self, f: impl FnMut(&V) -> W) -> LinConstraint<W> {
        LinConstraint { expr: self.expr.map_vars(f), relation: self.relation }
    }
}

impl<V: Ord + Clone + fmt::Display> fmt::Display for LinConstraint<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} 0", self.expr, self.relation)
    }
}

/// Substitutes a concrete time step into constraints over `Var`.
pub fn instantiate_at(
    constraints: &[LinConstraint<Var>],
    t: usize,
    t_max: usize,
) -> Result<Vec<LinConstraint<Var>>, PropertyError> {
    if t == 0 || t > t_max {
        return Err(PropertyError::TimeOutOfRange { t, t_max });
    }
    let tv = LinExpr::constant(t as f64);
    Ok(constraints
        .iter()
        .map(|c| LinConstraint { expr: c.expr.substitute(&Var::Time, &tv), relation: c.relation })
        .collect())
}

/// Closed interval, possibly infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const UNBOUNDED: Interval = Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        Interval { lo: self.lo.max(other.lo), hi: self.hi.min(other.hi) }
    }

    /// `k * self` for a scalar `k`.
    pub fn scale(&self, k: f64) -> Interval {
        if k >= 0.0 {
            Interval { lo: mul0(k, self.lo), hi: mul0(k, self.hi) }
        } else {
            Interval { lo: mul0(k, self.hi), hi: mul0(k, self.lo) }
        }
    }

    pub fn add(&self, other: &Interval) -> Interval {
        Interval { lo: self.lo + other.lo, hi: self.hi + other.hi }
    }
}

/// `k * x` with `0 * inf = 0`.
fn mul0(k: f64, x: f64) -> f64 {
    if k == 0.0 {
        0.0
    } else {
        k * x
    }
}

/// Interval bounds for every variable mentioned in `constraints` or in
/// `fixed`. Variables constrained only by single-variable constraints get
/// the intersection of those; others are bounded by LP.
pub fn derive_box<V: Ord + Clone + fmt::Display>(
    constraints: &[LinConstraint<V>],
    fixed: &BTreeMap<V, Interval>,
    opts: &SolverOptions,
) -> crate::Result<BTreeMap<V, Interval>> {
    let mut bounds: BTreeMap<V, Interval> = fixed.clone();
    let mut coupled: BTreeSet<V> = BTreeSet::new();
    for c in constraints {
        match c.expr.terms.len() {
            0 => {
                if !c.holds(|_| 0.0, opts.feasibility_tol) {
                    return Err(PropertyError::Infeasible.into());
                }
            }
            1 => {
                let (v, &a) = c.expr.terms.iter().next().expect("one term");
                let x = -c.expr.constant / a;
                let rel = if a > 0.0 { c.relation } else { flip(c.relation) };
                let iv = match rel {
                    Relation::Le => Interval::new(f64::NEG_INFINITY, x),
                    Relation::Ge => Interval::new(x, f64::INFINITY),
                    Relation::Eq => Interval::point(x),
                };
                let cur = bounds.entry(v.clone()).or_insert(Interval::UNBOUNDED);
                *cur = cur.intersect(&iv);
            }
            _ => {
                for v in c.expr.vars() {
                    bounds.entry(v.clone()).or_insert(Interval::UNBOUNDED);
                    coupled.insert(v.clone());
                }
            }
        }
    }
    for b in bounds.values() {
        if b.lo > b.hi + opts.feasibility_tol {
            return Err(PropertyError::Infeasible.into());
        }
    }
    if !coupled.is_empty() {
        let index: BTreeMap<V, usize> = bounds.keys().cloned().enumerate().map(|(i, v)| (v, i)).collect();
        let mut lp = LpProblem::new();
        for b in bounds.values() {
            lp.add_var(b.lo, b.hi.max(b.lo));
        }
        for c in constraints.iter().filter(|c| c.expr.terms.len() > 1) {
            lp.add_constraint(c.map_vars(|v| index[v]));
        }
        // feasibility first: an infeasible P must not be mistaken for an
        // unbounded one
        let probe = solver::solve_lp(&lp, opts)?;
        if matches!(probe.status, SolveStatus::Infeasible) {
            return Err(PropertyError::Infeasible.into());
        }
        for v in &coupled {
            let j = index[v];
            let mut iv = bounds[v];
            for sense in [Sense::Minimize, Sense::Maximize] {
                lp.set_objective(LinExpr::var(j), sense);
                match solver::solve_lp(&lp, opts)?.status {
                    SolveStatus::Optimal { value, .. } => match sense {
                        Sense::Minimize => iv.lo = iv.lo.max(value),
                        Sense::Maximize => iv.hi = iv.hi.min(value),
                    },
                    SolveStatus::Infeasible => return Err(PropertyError::Infeasible.into()),
                    SolveStatus::Unbounded => {}
                }
            }
            bounds.insert(v.clone(), iv);
        }
    }
    for (v, b) in &bounds {
        if !b.is_finite() {
            return Err(PropertyError::UnboundedVariable(v.to_string()).into());
        }
    }
    Ok(bounds)
}

fn flip(r: Relation) -> Relation {
    match r {
        Relation::Le => Relation::Ge,
        Relation::Ge => Relation::Le,
        Relation::Eq => Relation::Eq,
    }
}

/// Conjunction over input variables and `t`, repeated at every time step.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct InputProperty {
    pub constraints: Vec<LinConstraint<Var>>,
}

impl InputProperty {
    pub fn new(constraints: Vec<LinConstraint<Var>>) -> Self {
        Self { constraints }
    }

    /// Per-coordinate box `lo[k] <= x_k <= hi[k]`.
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Self {
        let mut constraints = Vec::with_capacity(2 * lo.len());
        for (k, (&l, &h)) in lo.iter().zip(hi).enumerate() {
            constraints.push(LinConstraint::ge(LinExpr::var(Var::Input(k)), l));
            constraints.push(LinConstraint::le(LinExpr::var(Var::Input(k)), h));
        }
        Self { constraints }
    }

    pub fn satisfied_by(&self, inputs: &[f64], t: usize, tol: f64) -> bool {
        self.constraints.iter().all(|c| c.holds(|v| input_value(v, inputs, t), tol))
    }

    /// Box over the inputs, with `t` ranging over `t_range`.
    pub fn input_box(&self, input_dim: usize, t_range: Interval, opts: &SolverOptions) -> crate::Result<Vec<Interval>> {
        let mut fixed = BTreeMap::new();
        fixed.insert(Var::Time, t_range);
        for k in 0..input_dim {
            fixed.insert(Var::Input(k), Interval::UNBOUNDED);
        }
        let b = derive_box(&self.constraints, &fixed, opts)?;
        Ok((0..input_dim).map(|k| b[&Var::Input(k)]).collect())
    }
}

fn input_value(v: &Var, inputs: &[f64], t: usize) -> f64 {
    match v {
        Var::Input(k) => inputs[*k],
        Var::Time => t as f64,
        _ => f64::NAN,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeScope {
    AnyStep,
    /// 1-based step.
    FixedStep(usize),
}

/// Disjunction of conjunctions over output variables and `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputProperty {
    pub disjuncts: Vec<Vec<LinConstraint<Var>>>,
    pub scope: TimeScope,
}

impl OutputProperty {
    pub fn new(disjuncts: Vec<Vec<LinConstraint<Var>>>, scope: TimeScope) -> Self {
        Self { disjuncts, scope }
    }

    pub fn any_step(conj: Vec<LinConstraint<Var>>) -> Self {
        Self { disjuncts: vec![conj], scope: TimeScope::AnyStep }
    }

    /// Steps at which the property is checked.
    pub fn steps(&self, t_max: usize) -> Vec<usize> {
        match self.scope {
            TimeScope::AnyStep => (1..=t_max).collect(),
            TimeScope::FixedStep(t0) => vec![t0],
        }
    }

    /// Index of the first disjunct satisfied by `outputs` at step `t`.
    pub fn satisfied_at(&self, outputs: &[f64], t: usize, tol: f64) -> Option<usize> {
        if let TimeScope::FixedStep(t0) = self.scope {
            if t0 != t {
                return None;
            }
        }
        self.disjuncts.iter().position(|conj| {
            conj.iter().all(|c| {
                c.holds(
                    |v| match v {
                        Var::Output(k) => outputs[*k],
                        Var::Time => t as f64,
                        _ => f64::NAN,
                    },
                    tol,
                )
            })
        })
    }
}

/// `<P, N, Q, T_max>`
#[derive(Clone, Debug, PartialEq)]
pub struct RnnQuery {
    pub input: InputProperty,
    pub network: RnnNetwork,
    pub output: OutputProperty,
    pub t_max: usize,
}

impl RnnQuery {
    pub fn new(input: InputProperty, network: RnnNetwork, output: OutputProperty, t_max: usize) -> Result<Self, PropertyError> {
        if t_max == 0 {
            return Err(PropertyError::Invalid("t_max must be at least 1".into()));
        }
        if let TimeScope::FixedStep(t0) = output.scope {
            if t0 == 0 || t0 > t_max {
                return Err(PropertyError::TimeOutOfRange { t: t0, t_max });
            }
        }
        if output.disjuncts.is_empty() {
            return Err(PropertyError::Invalid("output property has no disjuncts".into()));
        }
        for c in &input.constraints {
            for v in c.expr.vars() {
                match v {
                    Var::Input(k) if *k < network.input_dim() => {}
                    Var::Time => {}
                    other => return Err(PropertyError::Invalid(format!("input property mentions {other}"))),
                }
            }
        }
        for c in output.disjuncts.iter().flatten() {
            for v in c.expr.vars() {
                match v {
                    Var::Output(k) if *k < network.output_dim() => {}
                    Var::Time => {}
                    other => return Err(PropertyError::Invalid(format!("output property mentions {other}"))),
                }
            }
        }
        Ok(Self { input, network, output, t_max })
    }

    /// Step at which the trace satisfies the query (P at every step up to it
    /// and Q there), if any.
    pub fn violation_step(&self, trace: &RnnTrace, tol: f64) -> Option<usize> {
        let horizon = trace.len().min(self.t_max);
        for t in 1..=horizon {
            if !self.input.satisfied_by(&trace.at(t).inputs, t, tol) {
                return None;
            }
            if self.output.satisfied_at(trace.outputs(t), t, tol).is_some() {
                return Some(t);
            }
        }
        None
    }
}

/// `<P, N, Q>` over a feed-forward network; `output` is a single conjunction.
#[derive(Clone, Debug, PartialEq)]
pub struct FfnnQuery {
    pub input: Vec<LinConstraint<Node>>,
    pub network: FfnnNetwork,
    pub output: Vec<LinConstraint<Node>>,
}

impl FfnnQuery {
    pub fn new(input: Vec<LinConstraint<Node>>, network: FfnnNetwork, output: Vec<LinConstraint<Node>>) -> Result<Self, PropertyError> {
        for c in input.iter().chain(&output) {
            for v in c.expr.vars() {
                if !network.contains(*v) {
                    return Err(PropertyError::Invalid(format!("constraint mentions unknown neuron {v}")));
                }
            }
        }
        for c in &input {
            if c.expr.vars().any(|v| !matches!(v, Node::Input(_))) {
                return Err(PropertyError::Invalid("input constraints may only mention input neurons".into()));
            }
        }
        Ok(Self { input, network, output })
    }

    /// Checks an assignment against P and Q.
    pub fn satisfied_by(&self, values: &FfnnValues, tol: f64) -> bool {
        self.input.iter().chain(&self.output).all(|c| c.holds(|n| values.node(*n), tol))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Counterexample {
    /// Input sequence whose run violates the property at `step`.
    Rnn { trace: RnnTrace, step: usize },
    Ffnn(FfnnValues),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    Holds,
    Violated(Counterexample),
    Unknown(String),
    Error(String),
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Holds => "holds",
            Verdict::Violated(_) => "violated",
            Verdict::Unknown(_) => "unknown",
            Verdict::Error(_) => "error",
        }
    }

    pub fn is_holds(&self) -> bool {
        matches!(self, Verdict::Holds)
    }

    pub fn is_violated(&self) -> bool {
        matches!(self, Verdict::Violated(_))
    }
}
