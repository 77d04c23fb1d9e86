//! End-to-end RNN verification: infer invariants, certify them, then solve
//! the snapshot query.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::invariant::{
    alg1, alg2, certify, incremental_adjust, invariant_constraints, m_policy, map_input_var, sample_sequence,
    Bound, CheckOutcome, Effort, Failure, Inference, InvariantSet, LayerInference, LinearInvariant, LowerMode,
    SearchOutcome, SnapshotOutcome, Strengthened,
};
use crate::network::{snapshot, unroll, Activation, FfnnValues, Node, RnnTrace, UnitRef};
use crate::props::{
    Counterexample, FfnnQuery, Interval, LinConstraint, LinExpr, RnnQuery, TimeScope, Var, Verdict,
};
use crate::solver::{SolverError, SolverOptions};
use crate::verifier::{self, FfnnOutcome};
use crate::{Error, Result};

/// Version of the JSON run report layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    /// Pick by memory layout.
    Auto,
    /// Binary search, single memory unit.
    Alg1,
    /// Layer-by-layer binary search, one memory unit per layer.
    Alg2,
    Milp,
    Incremental,
}

impl std::str::FromStr for InferenceMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "auto" => Self::Auto,
            "alg1" => Self::Alg1,
            "alg2" => Self::Alg2,
            "milp" => Self::Milp,
            "incremental" => Self::Incremental,
            _ => return Err(format!("unknown mode {s:?}")),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MPolicy {
    /// Memory-free interval bound times `t_max`, clamped to `[1e3, 1e6]`.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Resolution of the binary searches.
    pub epsilon: f64,
    /// Per-round tightening of MILP strengthening.
    pub epsilon_tighten: f64,
    pub m_policy: MPolicy,
    pub max_refinements: usize,
    pub time_budget: Option<Duration>,
    pub mode: InferenceMode,
    /// Slack on MILP obligations; `None` means `max(epsilon / 4, 1e-4)`.
    pub margin: Option<f64>,
    pub lower: LowerMode,
    /// Initial step of incremental adjustment.
    pub incremental_step: f64,
    /// Cap on incremental adjustments.
    pub max_adjustments: usize,
    /// Random replays tried per SAT snapshot witness.
    pub falsify_samples: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            epsilon_tighten: 0.1,
            m_policy: MPolicy::Auto,
            max_refinements: 10,
            time_budget: None,
            mode: InferenceMode::Auto,
            margin: None,
            lower: LowerMode::Zero,
            incremental_step: 1.0,
            max_adjustments: 200,
            falsify_samples: 32,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        pos(self.epsilon, "epsilon")?;
        pos(self.incremental_step, "incremental step")?;
        if !(self.epsilon_tighten >= 0.0) {
            return Err(Error::InvalidArgument("epsilon_tighten must be non-negative".into()));
        }
        if let MPolicy::Fixed(m) = self.m_policy {
            pos(m, "M")?;
        }
        if let Some(m) = self.margin {
            if !(m >= 0.0) {
                return Err(Error::InvalidArgument("margin must be non-negative".into()));
            }
        }
        if self.time_budget.is_some_and(|b| b.is_zero()) {
            return Err(Error::InvalidArgument("time budget must be positive".into()));
        }
        Ok(())
    }

    pub fn margin(&self) -> f64 {
        self.margin.unwrap_or((self.epsilon / 4.0).max(1e-4))
    }
}

/// Wall-clock seconds per phase. `inference` is whatever is not spent in the
/// other phases, so the phases add up to `total`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub inference: f64,
    pub phi_checks: f64,
    pub snapshot: f64,
    pub falsify: f64,
    pub total: f64,
}

impl Timings {
    /// Share of the run spent inside the feed-forward engine.
    pub fn engine_fraction(&self) -> f64 {
        if self.total > 0.0 {
            (self.phi_checks + self.snapshot) / self.total
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub verdict: Verdict,
    pub mode: InferenceMode,
    pub invariants: InvariantSet,
    pub timings: Timings,
    pub engine_fraction: f64,
    pub refinements: usize,
    pub phi_queries: usize,
    pub snapshot_queries: usize,
    /// Certified invariant sets in the order they were produced.
    pub history: Vec<InvariantSet>,
}

/// Snapshot queries, one per disjunct of Q: P with symbolic `t`, the time
/// range (or the fixed step), and every memory unit bounded by `inv`.
pub fn snapshot_queries(q: &RnnQuery, inv: &InvariantSet) -> Result<Vec<FfnnQuery>> {
    let net = &q.network;
    let s = snapshot(net);
    let t = s.time_node();
    let mut p: Vec<LinConstraint<Node>> = Vec::new();
    for c in &q.input.constraints {
        let expr = c.expr.try_expand(|v| map_input_var(v, t).map(LinExpr::var))?;
        p.push(LinConstraint { expr, relation: c.relation });
    }
    match q.output.scope {
        TimeScope::AnyStep => {
            p.push(LinConstraint::ge(LinExpr::var(t), 1.0));
            p.push(LinConstraint::le(LinExpr::var(t), q.t_max as f64));
        }
        TimeScope::FixedStep(t0) => p.push(LinConstraint::eq(LinExpr::var(t), t0 as f64)),
    }
    for &(unit, k) in &s.memory_inputs {
        let i = inv.get(unit).ok_or_else(|| Error::Structure(format!("memory unit {unit} has no invariant")))?;
        p.extend(invariant_constraints(net, i, Node::Input(k), t));
    }
    let out = net.output_layer();
    let mut qs = Vec::with_capacity(q.output.disjuncts.len());
    for conj in &q.output.disjuncts {
        let mut cs = Vec::with_capacity(conj.len());
        for c in conj {
            let expr = c.expr.try_expand(|v| match v {
                Var::Output(k) => Ok(LinExpr::var(Node::neuron(out, *k))),
                Var::Time => Ok(LinExpr::var(t)),
                other => Err(Error::Structure(format!("output property mentions {other}"))),
            })?;
            cs.push(LinConstraint { expr, relation: c.relation });
        }
        qs.push(FfnnQuery::new(p.clone(), s.ffnn.clone(), cs)?);
    }
    Ok(qs)
}

/// Tries to turn a SAT snapshot assignment into a real counterexample: the
/// witness input held constant, then random perturbations of it and random
/// sequences, all inside P. Returns a trace only if it satisfies P and Q
/// exactly.
pub fn falsify_concrete(q: &RnnQuery, witness: &FfnnValues, samples: usize, rng: &mut impl Rng) -> Option<(RnnTrace, usize)> {
    let d = q.network.input_dim();
    let x: Vec<f64> = witness.inputs.iter().take(d).copied().collect();
    let bx = q
        .input
        .input_box(d, Interval::new(1.0, q.t_max as f64), &SolverOptions::default())
        .ok()?;
    let replay = |seq: Vec<Vec<f64>>| -> Option<(RnnTrace, usize)> {
        let trace = q.network.evaluate(&seq).ok()?;
        q.violation_step(&trace, 0.0).map(|t| (trace, t))
    };
    let clamp = |v: &[f64]| -> Vec<f64> {
        v.iter().zip(&bx).map(|(&a, iv)| a.clamp(iv.lo.max(-1e12), iv.hi.min(1e12))).collect()
    };
    let base = clamp(&x);
    if let Some(hit) = replay(vec![base.clone(); q.t_max]) {
        return Some(hit);
    }
    for k in 0..samples {
        let seq = if k % 2 == 0 {
            (0..q.t_max)
                .map(|_| {
                    let v: Vec<f64> = base
                        .iter()
                        .zip(&bx)
                        .map(|(&a, iv)| {
                            let w = if iv.is_finite() { iv.width() } else { 1.0 };
                            a + 0.1 * w * rng.random_range(-1.0..=1.0)
                        })
                        .collect();
                    clamp(&v)
                })
                .collect()
        } else {
            sample_sequence(q, &bx, rng)?
        };
        if seq.iter().enumerate().all(|(i, v)| q.input.satisfied_by(v, i + 1, 0.0)) {
            if let Some(hit) = replay(seq) {
                return Some(hit);
            }
        }
    }
    None
}

/// Exact check by unrolling: one query per checked step and disjunct.
pub fn verify_rnn_unrolled(q: &RnnQuery, opts: &SolverOptions) -> Result<Verdict> {
    let net = &q.network;
    let u = unroll(net, q.t_max)?;
    let out = net.output_layer();
    let mut p: Vec<LinConstraint<Node>> = Vec::new();
    for c in 0..q.t_max {
        let t = (c + 1) as f64;
        for pc in &q.input.constraints {
            let expr = pc.expr.try_expand(|v| match v {
                Var::Input(k) => Ok(LinExpr::var(u.input(c, *k))),
                Var::Time => Ok(LinExpr::constant(t)),
                other => Err(Error::Structure(format!("input property mentions {other}"))),
            })?;
            p.push(LinConstraint { expr, relation: pc.relation });
        }
    }
    for step in q.output.steps(q.t_max) {
        let c = step - 1;
        for conj in &q.output.disjuncts {
            let mut cs = Vec::with_capacity(conj.len());
            for oc in conj {
                let expr = oc.expr.try_expand(|v| match v {
                    Var::Output(k) => Ok(LinExpr::var(u.neuron(c, UnitRef::new(out, *k)))),
                    Var::Time => Ok(LinExpr::constant(step as f64)),
                    other => Err(Error::Structure(format!("output property mentions {other}"))),
                })?;
                cs.push(LinConstraint { expr, relation: oc.relation });
            }
            let fq = FfnnQuery::new(p.clone(), u.ffnn.clone(), cs)?;
            if let FfnnOutcome::Sat(w) = verifier::verify(&fq, opts)? {
                let trace = net.evaluate(&u.split_inputs(&w.inputs))?;
                return Ok(Verdict::Violated(Counterexample::Rnn { trace, step }));
            }
        }
    }
    Ok(Verdict::Holds)
}

struct Run<'a> {
    q: &'a RnnQuery,
    cfg: &'a PipelineConfig,
    opts: SolverOptions,
    rng: ChaCha8Rng,
    effort: Effort,
    snapshot_time: Duration,
    falsify_time: Duration,
    snapshot_queries: usize,
    history: Vec<InvariantSet>,
    refinements: usize,
}

impl Run<'_> {
    fn snapshot(&mut self, inv: &InvariantSet) -> Result<SnapshotOutcome> {
        let qs = snapshot_queries(self.q, inv)?;
        let mut sat = false;
        for fq in &qs {
            self.snapshot_queries += 1;
            let start = Instant::now();
            let r = verifier::verify(fq, &self.opts);
            self.snapshot_time += start.elapsed();
            if let FfnnOutcome::Sat(w) = r? {
                sat = true;
                let start = Instant::now();
                let hit = falsify_concrete(self.q, &w, self.cfg.falsify_samples, &mut self.rng);
                self.falsify_time += start.elapsed();
                if let Some((trace, step)) = hit {
                    return Ok(SnapshotOutcome::Violated(Counterexample::Rnn { trace, step }));
                }
            }
        }
        Ok(if sat { SnapshotOutcome::Sat } else { SnapshotOutcome::Unsat })
    }

    fn m(&self) -> Result<f64> {
        match self.cfg.m_policy {
            MPolicy::Fixed(m) => Ok(m),
            MPolicy::Auto => m_policy(&self.q.network, &self.q.input, &self.q.network.memory_units(), self.q.t_max, &self.opts),
        }
    }

    fn certify(&mut self, proven: &InvariantSet, cand: &[LinearInvariant]) -> Result<CheckOutcome> {
        certify(&self.q.network, &self.q.input, proven, cand, self.q.t_max, &self.opts, &mut self.effort)
    }

    fn search(&mut self, mode: InferenceMode) -> Result<(Verdict, InvariantSet)> {
        let m = self.m()?;
        let q = self.q;
        let eps = self.cfg.epsilon;
        let opts = self.opts.clone();
        let report = {
            let mut oracle = |inv: &InvariantSet| self.snapshot(inv);
            if mode == InferenceMode::Alg1 {
                alg1(q, m, eps, &opts, &mut oracle)?
            } else {
                alg2(q, m, eps, &opts, &mut oracle)?
            }
        };
        self.effort.phi_time += report.effort.phi_time;
        self.effort.phi_queries += report.effort.phi_queries;
        self.refinements += report.refinements;
        self.history.extend(report.certified);
        Ok(match report.outcome {
            SearchOutcome::Holds(set) => (Verdict::Holds, set),
            SearchOutcome::Violated(cex) => (Verdict::Violated(cex), self.history.last().cloned().unwrap_or_default()),
            SearchOutcome::Fail(why) => (Verdict::Unknown(why), self.history.last().cloned().unwrap_or_default()),
        })
    }

    fn inference<'b>(&'b self, proven: &'b InvariantSet, layer: usize, m: f64) -> LayerInference<'b> {
        let mut li = LayerInference::new(&self.q.network, &self.q.input, proven, layer, self.q.t_max);
        li.margin = self.cfg.margin();
        li.alpha_bound = m;
        // a zero lower bound is only sound for non-negative memory
        li.lower = if self.q.network.layer(layer).activation == Activation::Relu { self.cfg.lower } else { LowerMode::Free };
        li
    }

    /// Repairs a refuted MILP candidate by weakening the failing bound.
    fn repair(&mut self, proven: &InvariantSet, mut cand: Vec<LinearInvariant>) -> Result<Option<Vec<LinearInvariant>>> {
        for _ in 0..=self.cfg.max_refinements {
            match self.certify(proven, &cand)? {
                CheckOutcome::Certified => return Ok(Some(cand)),
                CheckOutcome::Refuted { unit, bound, .. } => {
                    let inv = cand.iter_mut().find(|c| c.unit == unit).expect("refuted unit is in the candidate");
                    let step = self.cfg.margin().max(1e-3 * inv.alpha_u.abs().max(inv.alpha_l.abs()));
                    match bound {
                        Bound::Upper => inv.alpha_u += step,
                        Bound::Lower => inv.alpha_l -= step,
                    }
                }
            }
        }
        Ok(None)
    }

    fn milp(&mut self) -> Result<(Verdict, InvariantSet)> {
        let net = &self.q.network;
        let m = self.m()?;
        let layers = net.memory_layers();
        let mut set = InvariantSet::new();
        for &l in &layers {
            let inferred = self.inference(&set, l, m).infer(&self.opts)?;
            let Inference::Candidate { invariants, .. } = inferred else {
                return Ok((Verdict::Unknown(format!("no linear invariant exists for layer {l}")), set));
            };
            let Some(cand) = self.repair(&set, invariants)? else {
                return Ok((Verdict::Unknown(format!("inferred invariant for layer {l} could not be certified")), set));
            };
            set.extend(&cand);
        }
        self.history.push(set.clone());
        for round in 0..=self.cfg.max_refinements {
            match self.snapshot(&set)? {
                SnapshotOutcome::Unsat => return Ok((Verdict::Holds, set)),
                SnapshotOutcome::Violated(cex) => return Ok((Verdict::Violated(cex), set)),
                SnapshotOutcome::Sat => {}
            }
            if round == self.cfg.max_refinements {
                break;
            }
            let mut next = set.clone();
            let mut changed = false;
            for &l in &layers {
                let prev = next.layer(l);
                let below = next.below(l);
                let r = self.inference(&below, l, m).strengthen(&prev, self.cfg.epsilon_tighten, &self.opts)?;
                if let Strengthened::Candidate { invariants, no_progress: false } = r {
                    if self.certify(&below, &invariants)?.is_certified() {
                        next.extend(&invariants);
                        changed = true;
                    }
                }
            }
            if !changed {
                return Ok((Verdict::Unknown("no tighter invariant could be certified".into()), set));
            }
            self.refinements += 1;
            set = next;
            self.history.push(set.clone());
        }
        Ok((Verdict::Unknown(format!("snapshot query still SAT after {} refinements", self.cfg.max_refinements)), set))
    }

    fn incremental(&mut self) -> Result<(Verdict, InvariantSet)> {
        let net = &self.q.network;
        let units = net.memory_units();
        let mut set = InvariantSet::from_invariants(units.iter().map(|&u| LinearInvariant::new(u, 0.0, 0.0)));
        let mut steps: Vec<f64> = vec![self.cfg.incremental_step; units.len()];
        let mut last_tightened: Option<usize> = None;
        let mut cursor = 0;
        let min_step = self.cfg.epsilon;
        for _ in 0..self.cfg.max_adjustments {
            let mut refuted = None;
            for &l in &net.memory_layers() {
                if let CheckOutcome::Refuted { unit, bound, .. } = self.certify(&set.below(l), &set.layer(l))? {
                    refuted = Some((unit, bound));
                    break;
                }
            }
            self.refinements += 1;
            if let Some((unit, bound)) = refuted {
                let k = units.iter().position(|&u| u == unit).expect("refuted unit is a memory unit");
                if last_tightened == Some(k) {
                    // oscillating on this unit; shrink its step
                    steps[k] = (steps[k] / 2.0).max(min_step);
                }
                last_tightened = None;
                set = incremental_adjust(&set, Failure::Refuted { unit, bound }, steps[k], &mut cursor)?;
                continue;
            }
            self.history.push(set.clone());
            match self.snapshot(&set)? {
                SnapshotOutcome::Unsat => return Ok((Verdict::Holds, set)),
                SnapshotOutcome::Violated(cex) => return Ok((Verdict::Violated(cex), set)),
                SnapshotOutcome::Sat => {}
            }
            let k = cursor % units.len();
            last_tightened = Some(k);
            set = incremental_adjust(&set, Failure::SnapshotSat, steps[k], &mut cursor)?;
        }
        let last = self.history.last().cloned().unwrap_or_default();
        Ok((Verdict::Unknown(format!("no conclusion after {} adjustments", self.cfg.max_adjustments)), last))
    }
}

/// Which inference strategy `Auto` picks for this network.
pub fn resolve_mode(q: &RnnQuery, mode: InferenceMode) -> InferenceMode {
    if mode != InferenceMode::Auto {
        return mode;
    }
    let net = &q.network;
    let units = net.memory_units();
    let relu = |u: &UnitRef| net.layer(u.layer).activation == Activation::Relu;
    if units.len() == 1 && relu(&units[0]) {
        InferenceMode::Alg1
    } else if !units.is_empty()
        && units.iter().all(relu)
        && net.memory_layers().iter().all(|&l| units.iter().filter(|u| u.layer == l).count() == 1)
    {
        InferenceMode::Alg2
    } else {
        InferenceMode::Milp
    }
}

/// Verifies `q` by invariant inference. Solver failures and time-outs are
/// reported as `Unknown`; only invalid configurations return an error.
pub fn verify_rnn(q: &RnnQuery, cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mode = resolve_mode(q, cfg.mode);
    let mut run = Run {
        q,
        cfg,
        opts: SolverOptions::default().with_deadline(cfg.time_budget.map(|b| start + b)),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        effort: Effort::default(),
        snapshot_time: Duration::ZERO,
        falsify_time: Duration::ZERO,
        snapshot_queries: 0,
        history: Vec::new(),
        refinements: 0,
    };
    let outcome = if q.network.memory_units().is_empty() {
        run.snapshot(&InvariantSet::new()).map(|o| {
            let v = match o {
                SnapshotOutcome::Unsat => Verdict::Holds,
                SnapshotOutcome::Violated(cex) => Verdict::Violated(cex),
                SnapshotOutcome::Sat => Verdict::Unknown("snapshot query SAT without a concrete witness".into()),
            };
            (v, InvariantSet::new())
        })
    } else {
        match mode {
            InferenceMode::Alg1 | InferenceMode::Alg2 => run.search(mode),
            InferenceMode::Milp => run.milp(),
            InferenceMode::Incremental => run.incremental(),
            InferenceMode::Auto => unreachable!("resolved above"),
        }
    };
    let (verdict, invariants) = match outcome {
        Ok(r) => r,
        Err(e) if e.is_timeout() => (Verdict::Unknown("time budget exceeded".into()), run.history.last().cloned().unwrap_or_default()),
        Err(Error::Solver(SolverError::NumericalFailure(m))) => (Verdict::Unknown(format!("numerical failure: {m}")), InvariantSet::new()),
        Err(e) => (Verdict::Unknown(e.to_string()), run.history.last().cloned().unwrap_or_default()),
    };
    let total = start.elapsed().as_secs_f64();
    let phi = run.effort.phi_time.as_secs_f64();
    let snap = run.snapshot_time.as_secs_f64();
    let fals = run.falsify_time.as_secs_f64();
    let timings = Timings { inference: (total - phi - snap - fals).max(0.0), phi_checks: phi, snapshot: snap, falsify: fals, total };
    Ok(RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        verdict,
        mode,
        invariants,
        engine_fraction: timings.engine_fraction(),
        timings,
        refinements: run.refinements,
        phi_queries: run.effort.phi_queries,
        snapshot_queries: run.snapshot_queries,
        history: run.history,
    })
}
