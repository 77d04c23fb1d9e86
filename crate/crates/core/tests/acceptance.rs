//! Acceptance criteria. Prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` are expected to fail for the reason
//! printed with them; the process exits non-zero on any other failure, or if
//! a known-red criterion unexpectedly passes.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{box_of, fixture, invariant_violations, milp_by_enumeration, random_ffnn_query, random_lp, random_milp, random_rnn_query, replays, rng, vertex_enumeration};
use rnnverify::bench::{build_robustness_query, generate_network, run_benchmark, running_example_query, sample_points, write_cells_csv, BenchConfig, NetShape, RobustnessSpec};
use rnnverify::format::{parse_property, parse_rnn};
use rnnverify::invariant::{Inference, InvariantSet, LayerInference, LowerMode};
use rnnverify::network::{Activation, Block, FfLayer, FfnnNetwork, Matrix, Node, RnnNetwork};
use rnnverify::pipeline::{verify_rnn, verify_rnn_unrolled, InferenceMode, PipelineConfig};
use rnnverify::props::{FfnnQuery, LinConstraint, LinExpr, RnnQuery, Verdict};
use rnnverify::solver::{solve_lp, solve_milp, SolverOptions};
use rnnverify::verifier::{verify, verify_exhaustive, FfnnOutcome};

const TRACE_TOL: f64 = 1e-9;
const TRACE_BUDGET: Duration = Duration::from_millis(1);
const RUNNING_BUDGET: Duration = Duration::from_secs(5);
const WITNESS_TOL: f64 = 1e-6;
const STACKED_BUDGET: Duration = Duration::from_secs(30);
const LP_TOL: f64 = 1e-6;
const SOUNDNESS_CASES: usize = 200;
const SOUNDNESS_BUDGET: Duration = Duration::from_secs(30 * 60);
const ORACLE_CASES: usize = 200;
const ORACLE_TOL: f64 = 1e-6;
const SCALING_BUDGET: Duration = Duration::from_secs(60);
const UNROLL_BUDGET_SECS: f64 = 600.0;
const GROWTH: f64 = 10.0;
const SWEEP_POINTS: usize = 25;
const SWEEP_DELTA: f64 = 0.01;
const TRACES_PER_INVARIANT: usize = 10_000;

const KNOWN_RED: &[usize] = &[4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Certified invariants gathered from every Holds run, with the box they
/// were proven for.
#[derive(Default)]
struct Certified(Vec<(RnnQuery, InvariantSet)>);

impl Certified {
    fn record(&mut self, q: &RnnQuery, v: &Verdict, inv: &InvariantSet) {
        if matches!(v, Verdict::Holds) && !inv.is_empty() {
            self.0.push((q.clone(), inv.clone()));
        }
    }
}

fn running_net() -> RnnNetwork {
    parse_rnn(&std::fs::read_to_string(fixture("running.net")).unwrap()).unwrap()
}

fn query(net: &str, prop: &str) -> RnnQuery {
    let n = parse_rnn(&std::fs::read_to_string(fixture(net)).unwrap()).unwrap();
    parse_property(&std::fs::read_to_string(fixture(prop)).unwrap()).unwrap().query(n).unwrap()
}

fn ac1() -> Outcome {
    let net = running_net();
    let xs = [0.5, 1.5, -1.0, -3.0];
    let seq: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
    let start = Instant::now();
    let trace = net.evaluate(&seq).unwrap();
    let took = start.elapsed();
    // hidden = relu(x + previous hidden), output = hidden
    let mut hidden = 0.0f64;
    let mut err = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let mem = hidden;
        hidden = (x + mem).max(0.0);
        let t = i + 1;
        err = err.max((trace.at(t).memory[0][0] - mem).abs());
        err = err.max((trace.outputs(t)[0] - hidden).abs());
    }
    let outs: Vec<f64> = (1..=4).map(|t| trace.outputs(t)[0]).collect();
    outcome(err <= TRACE_TOL && took < TRACE_BUDGET, format!("outputs {outs:?}, max error {err:e}, {took:?}"))
}

fn ac2(cert: &mut Certified) -> Outcome {
    let q = query("running.net", "running.prop");
    let start = Instant::now();
    let r = verify_rnn(&q, &PipelineConfig::default()).unwrap();
    let took = start.elapsed();
    cert.record(&q, &r.verdict, &r.invariants);
    let alpha = r.invariants.iter().next().map(|i| i.alpha_u).unwrap_or(f64::NAN);
    let pass = matches!(r.verdict, Verdict::Holds) && alpha > 3.0 && alpha < 3.25 && took < RUNNING_BUDGET;
    outcome(pass, format!("{} with alpha_u {alpha}, {took:?}", r.verdict.label()))
}

fn ac3() -> Outcome {
    let hidden = FfLayer {
        blocks: vec![Block { source: rnnverify::network::Source::Input, offset: 0, weights: Matrix::from_rows(&[vec![1.0], vec![-1.0]], 1).unwrap() }],
        bias: vec![0.0, 0.0],
        activation: Activation::Relu,
    };
    let out = FfLayer {
        blocks: vec![Block { source: rnnverify::network::Source::Layer(0), offset: 0, weights: Matrix::from_rows(&[vec![1.0, 2.0]], 2).unwrap() }],
        bias: vec![0.0],
        activation: Activation::Identity,
    };
    let net = FfnnNetwork::new(1, vec![hidden, out]).unwrap();
    let x = LinExpr::var(Node::Input(0));
    let y = Node::neuron(1, 0);
    let q = FfnnQuery::new(
        vec![LinConstraint::ge(x.clone(), -10.0), LinConstraint::le(x, 10.0)],
        net.clone(),
        vec![LinConstraint::ge(LinExpr::var(y), 20.0)],
    )
    .unwrap();
    match verify(&q, &SolverOptions::default()).unwrap() {
        FfnnOutcome::Sat(v) => {
            let x0 = v.inputs[0];
            let replay = net.evaluate(&[x0]).unwrap().output()[0];
            let pass = (-10.0 - WITNESS_TOL..=10.0 + WITNESS_TOL).contains(&x0) && replay >= 20.0 - WITNESS_TOL;
            outcome(pass, format!("sat, x = {x0}, replayed output {replay}"))
        }
        FfnnOutcome::Unsat => outcome(false, "unsat"),
    }
}

fn ac4(cert: &mut Certified) -> Outcome {
    let q = query("stacked.net", "stacked.prop");
    let cfg = PipelineConfig { mode: InferenceMode::Alg2, time_budget: Some(STACKED_BUDGET), ..PipelineConfig::default() };
    let start = Instant::now();
    let r = verify_rnn(&q, &cfg).unwrap();
    let took = start.elapsed();
    cert.record(&q, &r.verdict, &r.invariants);
    let unrolled = verify_rnn_unrolled(&q, &SolverOptions::default()).unwrap();
    let bands: Vec<String> = r.invariants.iter().map(|i| format!("{}: {:.4}", i.unit, i.alpha_u)).collect();
    let dominated = r.invariants.iter().all(|i| i.unit.layer != 1 || i.alpha_u <= 9.0 + 0.1);
    let pass = matches!(r.verdict, Verdict::Holds) && dominated && took < STACKED_BUDGET;

    // the same network one step of slack further out
    let mut q64 = q.clone();
    q64.output = parse_property(&std::fs::read_to_string(fixture("stacked.prop")).unwrap().replace(">= 60", ">= 64")).unwrap().output;
    let r64 = verify_rnn(&q64, &cfg).unwrap();
    cert.record(&q64, &r64.verdict, &r64.invariants);
    // band needed by layer 1 given alpha_1 = 3: alpha_2 >= 3 + 3 * alpha_1
    let snapshot_floor = 3.0 + 4.0 * 3.0 + 4.0 * (3.0 + 3.0 * 3.0);
    outcome(
        pass,
        format!(
            "{} in {took:?} with bands [{}]; unrolling says {} (true maximum 45); any inductive band of this template needs alpha_2 >= 3 + 3 alpha_1 >= 12, so the snapshot bound is at least {snapshot_floor} > 60; threshold 64 gives {}",
            r.verdict.label(),
            bands.join(", "),
            unrolled.label(),
            r64.verdict.label()
        ),
    )
}

fn ac5(cert: &mut Certified) -> Outcome {
    let q = query("crossed.net", "crossed.prop");
    let cfg = PipelineConfig { mode: InferenceMode::Milp, ..PipelineConfig::default() };
    let r = verify_rnn(&q, &cfg).unwrap();
    cert.record(&q, &r.verdict, &r.invariants);

    let proven = InvariantSet::new();
    let mut li = LayerInference::new(&q.network, &q.input, &proven, 0, q.t_max);
    li.margin = 0.0;
    li.lower = LowerMode::Zero;
    let got = match li.infer(&SolverOptions::default()).unwrap() {
        Inference::Candidate { invariants, .. } => invariants.iter().map(|i| i.alpha_u).collect::<Vec<_>>(),
        Inference::Infeasible => vec![],
    };
    // unit 1 = relu(2x - m0 + m1): 2 * 3 + a1 (t-1) <= a1 t  =>  a1 >= 6
    // unit 0 = relu(-x + m0 + m1): 3 + (a0 + a1)(t-1) <= a0 t for t <= T-1  =>  a0 >= 3 + a1 (T-2)
    let (lo, hi) = box_of(&q.input, 1);
    let a1 = 2.0 * hi[0];
    let a0 = -lo[0] + a1 * (q.t_max as f64 - 2.0);
    let close = got.len() == 2 && (got[0] - a0).abs() <= LP_TOL && (got[1] - a1).abs() <= LP_TOL;
    let pass = matches!(r.verdict, Verdict::Holds) && matches!(r.mode, InferenceMode::Milp) && close;
    outcome(pass, format!("{} via {:?}; inference optimum {got:?}, closed form ({a0}, {a1})", r.verdict.label(), r.mode))
}

fn ac6(cert: &mut Certified) -> Outcome {
    let mut r = rng(2024);
    let start = Instant::now();
    let (mut holds, mut violated, mut other, mut bad, mut replay_fail) = (0, 0, 0, 0, 0);
    for _ in 0..SOUNDNESS_CASES {
        let q = random_rnn_query(&mut r);
        let rep = verify_rnn(&q, &PipelineConfig::default()).unwrap();
        cert.record(&q, &rep.verdict, &rep.invariants);
        let base = verify_rnn_unrolled(&q, &SolverOptions::default()).unwrap();
        match &rep.verdict {
            Verdict::Holds => {
                holds += 1;
                if matches!(base, Verdict::Violated(_)) {
                    bad += 1;
                }
            }
            Verdict::Violated(c) => {
                violated += 1;
                if !replays(&q, c, TRACE_TOL) {
                    replay_fail += 1;
                }
            }
            _ => other += 1,
        }
    }
    let took = start.elapsed();
    outcome(
        bad == 0 && replay_fail == 0 && took < SOUNDNESS_BUDGET,
        format!("{holds} holds, {violated} violated, {other} unknown; {bad} contradicted by unrolling, {replay_fail} bad witnesses; {took:?}"),
    )
}

fn ac7() -> Outcome {
    let opts = SolverOptions::default();
    let mut r = rng(77);
    let mut ffnn_bad = 0;
    let mut sat = 0;
    for _ in 0..ORACLE_CASES {
        let q = random_ffnn_query(&mut r, 12);
        let a = verify(&q, &opts).unwrap();
        let b = verify_exhaustive(&q, &opts).unwrap();
        let witness_ok = match &a {
            FfnnOutcome::Sat(v) => q.satisfied_by(v, ORACLE_TOL),
            FfnnOutcome::Unsat => true,
        };
        sat += usize::from(a.is_sat());
        if a.is_sat() != b.is_sat() || !witness_ok {
            ffnn_bad += 1;
        }
    }
    let agree = |got: Option<f64>, want: Option<f64>| match (got, want) {
        (Some(g), Some(w)) => (g - w).abs() <= ORACLE_TOL * (1.0 + w.abs()),
        (None, None) => true,
        _ => false,
    };
    let mut lp_bad = 0;
    for _ in 0..ORACLE_CASES {
        let p = random_lp(&mut r, 5);
        if !agree(solve_lp(&p, &opts).unwrap().value(), vertex_enumeration(&p)) {
            lp_bad += 1;
        }
    }
    let mut milp_bad = 0;
    for _ in 0..ORACLE_CASES {
        let p = random_milp(&mut r);
        if !agree(solve_milp(&p, &opts).unwrap().value(), milp_by_enumeration(&p)) {
            milp_bad += 1;
        }
    }
    outcome(
        ffnn_bad + lp_bad + milp_bad == 0,
        format!("verifier disagreements {ffnn_bad} ({sat} sat), lp {lp_bad}, milp {milp_bad} of {ORACLE_CASES} each"),
    )
}

fn ac8(cert: &mut Certified) -> Outcome {
    let q = running_example_query(180, 4.0).unwrap();
    let start = Instant::now();
    let r = verify_rnn(&q, &PipelineConfig::default()).unwrap();
    let took = start.elapsed();
    cert.record(&q, &r.verdict, &r.invariants);
    let mut times = Vec::new();
    let mut timed_out = false;
    for t in [5, 20, 60, 180] {
        let qt = running_example_query(t, 4.0).unwrap();
        let opts = SolverOptions::default().with_time_budget(Duration::from_secs_f64(UNROLL_BUDGET_SECS));
        // best of three to damp timer noise on the small instances
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let s = Instant::now();
            match verify_rnn_unrolled(&qt, &opts) {
                Ok(_) => best = best.min(s.elapsed().as_secs_f64()),
                Err(e) if e.is_timeout() => {
                    timed_out = true;
                    best = UNROLL_BUDGET_SECS;
                    break;
                }
                Err(e) => panic!("unrolling failed at {t}: {e}"),
            }
        }
        times.push((t, best));
        if timed_out {
            break;
        }
    }
    let growth = times.last().unwrap().1 / times[0].1;
    let pass = matches!(r.verdict, Verdict::Holds) && took < SCALING_BUDGET && (growth >= GROWTH || timed_out);
    let series: Vec<String> = times.iter().map(|(t, s)| format!("{t}: {s:.4}s")).collect();
    outcome(pass, format!("invariant {} in {took:?}; unrolling {} (growth {growth:.1}x{})", r.verdict.label(), series.join(", "), if timed_out { ", budget exhausted" } else { "" }))
}

fn ac9() -> Outcome {
    let shape = NetShape::speaker(&[2], 0);
    let cfg = BenchConfig {
        shapes: vec![shape.clone()],
        points: SWEEP_POINTS,
        t_max: (2..=20).collect(),
        delta: SWEEP_DELTA,
        point_seed: 0,
        time_budget_secs: 60.0,
        parallelism: 1,
        cross_check_max_t: 6,
        series: None,
    };
    let start = Instant::now();
    let res = run_benchmark(&cfg).unwrap();
    let mut csv = Vec::new();
    write_cells_csv(&res.cells, &mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    let complete = res.cells.len() == 19 && res.cells.iter().all(|c| c.total == SWEEP_POINTS && c.errors == 0);
    let contradictions: usize = res.cells.iter().map(|c| c.contradictions).sum();
    let checked: usize = res.cells.iter().map(|c| c.cross_checked).sum();
    let certified: Vec<String> = res.cells.iter().map(|c| format!("{}:{}", c.t_max, c.certified)).collect();

    // independent spot check: unroll every point at the smallest horizon
    let net = generate_network(&shape).unwrap();
    let mut spot_bad = 0;
    for p in sample_points(shape.input_dim, SWEEP_POINTS, 0) {
        let q = build_robustness_query(&net, &RobustnessSpec { point: p, delta: SWEEP_DELTA, t_max: 2 }).unwrap();
        let a = verify_rnn(&q, &PipelineConfig::default()).unwrap();
        let b = verify_rnn_unrolled(&q, &SolverOptions::default()).unwrap();
        if matches!(a.verdict, Verdict::Holds) && matches!(b, Verdict::Violated(_)) {
            spot_bad += 1;
        }
    }
    let pass = complete && contradictions == 0 && spot_bad == 0 && csv.lines().count() == 20;
    outcome(
        pass,
        format!(
            "{} cells, {checked} runs cross-checked by unrolling, {contradictions} contradictions, spot check {spot_bad}; certified per t_max [{}]; {:?}",
            res.cells.len(),
            certified.join(" "),
            start.elapsed()
        ),
    )
}

fn ac10(cert: &Certified) -> Outcome {
    let mut r = rng(10);
    let mut bad = 0;
    let mut bands = 0;
    for (q, inv) in &cert.0 {
        let (lo, hi) = box_of(&q.input, q.network.input_dim());
        bands += inv.len();
        bad += invariant_violations(q, inv, &lo, &hi, TRACES_PER_INVARIANT, &mut r);
    }
    outcome(!cert.0.is_empty() && bad == 0, format!("{} runs, {bands} bands, {TRACES_PER_INVARIANT} traces each, {bad} violating traces", cert.0.len()))
}

fn main() -> ExitCode {
    let mut cert = Certified::default();
    let criteria: Vec<(usize, &str, Box<dyn FnOnce(&mut Certified) -> Outcome>)> = vec![
        (1, "golden trace", Box::new(|_| ac1())),
        (2, "running example end to end", Box::new(ac2)),
        (3, "feed-forward sat witness", Box::new(|_| ac3())),
        (4, "stacked layers via layer-wise search", Box::new(ac4)),
        (5, "multi-unit layer via milp", Box::new(ac5)),
        (6, "soundness against unrolling", Box::new(ac6)),
        (7, "oracle equivalence", Box::new(|_| ac7())),
        (8, "scaling in t_max", Box::new(ac8)),
        (9, "generated-network sweep", Box::new(|_| ac9())),
    ];
    let mut unexpected = 0;
    let mut report = |id: usize, name: &str, o: Outcome| {
        let red = KNOWN_RED.contains(&id);
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let note = match (o.pass, red) {
            (false, true) => " [known red]",
            (true, true) => " [known red passed unexpectedly]",
            _ => "",
        };
        println!("AC{id} {tag} {name}{note}: {}", o.detail);
        if o.pass == red {
            unexpected += 1;
        }
    };
    for (id, name, f) in criteria {
        let o = f(&mut cert);
        report(id, name, o);
    }
    let o = ac10(&cert);
    report(10, "certified invariants on sampled traces", o);
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
