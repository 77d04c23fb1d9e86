//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnnverify::invariant::InvariantSet;
use rnnverify::network::{Activation, Block, FfLayer, FfnnNetwork, LayerWeights, Matrix, Node, RnnNetwork, Source};
use rnnverify::props::{
    Counterexample, FfnnQuery, InputProperty, LinConstraint, LinExpr, OutputProperty, Relation, RnnQuery, TimeScope, Var,
};
use rnnverify::solver::{LpProblem, MilpProblem, Sense};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_row_major(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Up to 3 inputs, 1 or 2 recurrent layers with at most 2 memory units
/// each, up to 2 dense layers and an identity output layer.
pub fn random_rnn(rng: &mut ChaCha8Rng) -> RnnNetwork {
    let d = rng.random_range(1..=3);
    let mut layers = Vec::new();
    let mut prev = d;
    for _ in 0..rng.random_range(1..=2) {
        let n = rng.random_range(1..=3);
        let mut h = Matrix::zeros(n, n);
        let mem = rng.random_range(1..=n.min(2));
        let mut cols: Vec<usize> = (0..n).collect();
        for _ in 0..mem {
            let c = cols.remove(rng.random_range(0..cols.len()));
            for r in 0..n {
                h.set(r, c, rng.random_range(-1.0..1.0));
            }
        }
        let w = matrix(rng, n, prev, 1.0);
        let b = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
        layers.push(LayerWeights::new(w, Some(h), b, Activation::Relu).unwrap());
        prev = n;
    }
    for _ in 0..rng.random_range(0..=2) {
        let n = rng.random_range(1..=3);
        let w = matrix(rng, n, prev, 1.0);
        let b = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
        layers.push(LayerWeights::new(w, None, b, Activation::Relu).unwrap());
        prev = n;
    }
    let o = rng.random_range(1..=2);
    let w = matrix(rng, o, prev, 1.0);
    layers.push(LayerWeights::new(w, None, vec![0.0; o], Activation::Identity).unwrap());
    RnnNetwork::new(d, layers).unwrap()
}

pub fn random_box(rng: &mut ChaCha8Rng, d: usize) -> (Vec<f64>, Vec<f64>) {
    let lo: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..0.5)).collect();
    let hi = lo.iter().map(|l| l + rng.random_range(0.1..1.5)).collect();
    (lo, hi)
}

pub fn random_sequence(rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64], t_max: usize) -> Vec<Vec<f64>> {
    (0..t_max).map(|_| lo.iter().zip(hi).map(|(&l, &h)| rng.random_range(l..=h)).collect()).collect()
}

/// A box query whose threshold sits near the sampled maximum of one output,
/// so both verdicts occur.
pub fn random_rnn_query(rng: &mut ChaCha8Rng) -> RnnQuery {
    let net = random_rnn(rng);
    let (lo, hi) = random_box(rng, net.input_dim());
    let t_max = rng.random_range(1..=6);
    let scope = if rng.random_bool(0.3) { TimeScope::FixedStep(rng.random_range(1..=t_max)) } else { TimeScope::AnyStep };
    let k = rng.random_range(0..net.output_dim());
    let mut best = f64::NEG_INFINITY;
    let mut worst = f64::INFINITY;
    for _ in 0..200 {
        let trace = net.evaluate(&random_sequence(rng, &lo, &hi, t_max)).unwrap();
        for t in 1..=t_max {
            if matches!(scope, TimeScope::FixedStep(s) if s != t) {
                continue;
            }
            best = best.max(trace.outputs(t)[k]);
            worst = worst.min(trace.outputs(t)[k]);
        }
    }
    let th = best + rng.random_range(-0.2..0.6) * (best - worst).max(0.05);
    let out = OutputProperty::new(vec![vec![LinConstraint::ge(LinExpr::var(Var::Output(k)), th)]], scope);
    RnnQuery::new(InputProperty::from_box(&lo, &hi), net, out, t_max).unwrap()
}

/// Replays a recurrent counterexample from its inputs alone.
pub fn replays(q: &RnnQuery, cex: &Counterexample, tol: f64) -> bool {
    let Counterexample::Rnn { trace, step } = cex else { return false };
    let inputs = trace.inputs();
    if inputs.len() != q.t_max || *step == 0 || *step > q.t_max {
        return false;
    }
    let fresh = q.network.evaluate(&inputs).unwrap();
    let in_ok = inputs.iter().enumerate().all(|(i, x)| {
        let t = (i + 1) as f64;
        q.input.constraints.iter().all(|c| c.holds(|v| var_value(v, x, &[], t), tol))
    });
    let t = *step;
    let scope_ok = match q.output.scope {
        TimeScope::AnyStep => true,
        TimeScope::FixedStep(s) => s == t,
    };
    let out = fresh.outputs(t);
    let x = &inputs[t - 1];
    in_ok
        && scope_ok
        && q.output.disjuncts.iter().any(|d| d.iter().all(|c| c.holds(|v| var_value(v, x, out, t as f64), tol)))
}

fn var_value(v: &Var, x: &[f64], out: &[f64], t: f64) -> f64 {
    match *v {
        Var::Input(k) => x[k],
        Var::Output(k) => out[k],
        Var::Time => t,
        _ => panic!("unexpected variable {v}"),
    }
}

/// Samples traces from the input box and counts those in which any memory
/// value leaves its invariant band.
pub fn invariant_violations(q: &RnnQuery, inv: &InvariantSet, lo: &[f64], hi: &[f64], count: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut bad = 0;
    for _ in 0..count {
        let trace = q.network.evaluate(&random_sequence(rng, lo, hi, q.t_max)).unwrap();
        let violated = (1..=q.t_max).any(|t| {
            inv.iter().any(|i| {
                let m = trace.at(t).memory[i.unit.layer][i.unit.unit];
                let s = (t - 1) as f64;
                let slack = 1e-9 * (1.0 + m.abs());
                m < i.alpha_l * s - slack || m > i.alpha_u * s + slack
            })
        });
        bad += usize::from(violated);
    }
    bad
}

/// Bounding box of a box-shaped input property.
pub fn box_of(p: &InputProperty, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::NEG_INFINITY; d];
    let mut hi = vec![f64::INFINITY; d];
    for c in &p.constraints {
        let (&v, &a) = c.expr.terms.iter().next().expect("box constraint");
        assert_eq!(c.expr.terms.len(), 1, "not a box");
        let Var::Input(k) = v else { panic!("not a box") };
        let bound = -c.expr.constant / a;
        let upper = matches!((c.relation, a > 0.0), (Relation::Le, true) | (Relation::Ge, false));
        if upper {
            hi[k] = hi[k].min(bound);
        } else {
            lo[k] = lo[k].max(bound);
        }
    }
    (lo, hi)
}

/// Random feed-forward query with at most `max_relus` ReLUs.
pub fn random_ffnn_query(rng: &mut ChaCha8Rng, max_relus: usize) -> FfnnQuery {
    let net = loop {
        let d = rng.random_range(1..=3);
        let mut sizes: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=4)).collect();
        if sizes.iter().sum::<usize>() > max_relus {
            continue;
        }
        sizes.push(rng.random_range(1..=2));
        let mut layers = Vec::new();
        let mut prev = d;
        for (i, &s) in sizes.iter().enumerate() {
            let mut blocks = vec![Block {
                source: if i == 0 { Source::Input } else { Source::Layer(i - 1) },
                offset: 0,
                weights: matrix(rng, s, prev, 1.5),
            }];
            if i > 0 && rng.random_bool(0.3) {
                blocks.push(Block { source: Source::Input, offset: 0, weights: matrix(rng, s, d, 1.0) });
            }
            let last = i + 1 == sizes.len();
            layers.push(FfLayer {
                blocks,
                bias: (0..s).map(|_| rng.random_range(-0.5..0.5)).collect(),
                activation: if last { Activation::Identity } else { Activation::Relu },
            });
            prev = s;
        }
        break FfnnNetwork::new(d, layers).unwrap();
    };
    let mut input = Vec::new();
    for k in 0..net.input_dim() {
        let lo = rng.random_range(-2.0..1.0);
        input.push(LinConstraint::ge(LinExpr::var(Node::Input(k)), lo));
        input.push(LinConstraint::le(LinExpr::var(Node::Input(k)), lo + rng.random_range(0.1..3.0)));
    }
    let last = net.layers().len() - 1;
    let outs = net.layers()[last].size();
    let mut output = Vec::new();
    for _ in 0..rng.random_range(1..=2) {
        let e = LinExpr::var(Node::neuron(last, rng.random_range(0..outs)));
        let th = rng.random_range(-1.5..1.5);
        output.push(if rng.random_bool(0.5) { LinConstraint::ge(e, th) } else { LinConstraint::le(e, th) });
    }
    FfnnQuery::new(input, net, output).unwrap()
}

pub fn random_lp(rng: &mut ChaCha8Rng, max_vars: usize) -> LpProblem {
    let n = rng.random_range(1..=max_vars);
    let mut p = LpProblem::new();
    for _ in 0..n {
        let l = rng.random_range(-5.0..0.0);
        p.add_var(l, rng.random_range(0.0..5.0));
    }
    for _ in 0..rng.random_range(0..=8) {
        let mut terms = Vec::new();
        for j in 0..n {
            if rng.random_bool(0.7) {
                terms.push((j, rng.random_range(-3.0..3.0)));
            }
        }
        let rel = match rng.random_range(0..10) {
            0 => Relation::Eq,
            1..=5 => Relation::Le,
            _ => Relation::Ge,
        };
        let rhs = rng.random_range(-4.0..4.0);
        p.add_constraint(LinConstraint::new(LinExpr::from_terms(terms, 0.0), rel, LinExpr::constant(rhs)));
    }
    let obj = LinExpr::from_terms((0..n).map(|j| (j, rng.random_range(-2.0..2.0))), 0.0);
    p.set_objective(obj, if rng.random_bool(0.5) { Sense::Maximize } else { Sense::Minimize });
    p
}

pub fn random_milp(rng: &mut ChaCha8Rng) -> MilpProblem {
    let lp = random_lp(rng, 3);
    let mut p = MilpProblem::new();
    for j in 0..lp.num_vars() {
        let (l, u) = lp.bounds(j);
        p.add_var(l, u);
    }
    let bins: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| p.add_binary()).collect();
    let n = p.lp.num_vars();
    for c in lp.constraints() {
        let mut c = c.clone();
        for &b in &bins {
            if rng.random_bool(0.5) {
                c.expr.add_term(b, rng.random_range(-3.0..3.0));
            }
        }
        p.add_constraint(c);
    }
    let (obj, sense) = lp.objective();
    let mut obj = obj.clone();
    for &b in &bins {
        obj.add_term(b, rng.random_range(-2.0..2.0));
    }
    debug_assert_eq!(n, lp.num_vars() + bins.len());
    p.set_objective(obj, sense);
    p
}

/// Optimum over all vertices: every choice of `n` tight constraints or
/// bounds is solved as a square system and kept if feasible.
pub fn vertex_enumeration(p: &LpProblem) -> Option<f64> {
    let n = p.num_vars();
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for c in p.constraints() {
        let mut a = vec![0.0; n];
        for (&j, &w) in &c.expr.terms {
            a[j] = w;
        }
        planes.push((a, -c.expr.constant));
    }
    for j in 0..n {
        let (l, u) = p.bounds(j);
        for b in [l, u].into_iter().filter(|b| b.is_finite()) {
            let mut a = vec![0.0; n];
            a[j] = 1.0;
            planes.push((a, b));
        }
    }
    let (obj, sense) = p.objective();
    let k = planes.len();
    if k < n {
        return None;
    }
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let mut m: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| {
                let mut row = planes[i].0.clone();
                row.push(planes[i].1);
                row
            })
            .collect();
        if let Some(x) = gauss(&mut m, n) {
            let feasible = p.constraints().iter().all(|c| c.holds(|&j| x[j], 1e-8))
                && (0..n).all(|j| {
                    let (l, u) = p.bounds(j);
                    x[j] >= l - 1e-8 && x[j] <= u + 1e-8
                });
            if feasible {
                let v = obj.eval(|&j| x[j]);
                best = Some(match (best, sense) {
                    (None, _) => v,
                    (Some(b), Sense::Maximize) => b.max(v),
                    (Some(b), Sense::Minimize) => b.min(v),
                });
            }
        }
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < k - n + i {
                idx[i] += 1;
                for r in i + 1..n {
                    idx[r] = idx[r - 1] + 1;
                }
                break;
            }
        }
    }
}

fn gauss(m: &mut [Vec<f64>], n: usize) -> Option<Vec<f64>> {
    for c in 0..n {
        let piv = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))?;
        if m[piv][c].abs() < 1e-10 {
            return None;
        }
        m.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    Some((0..n).map(|r| m[r][n] / m[r][r]).collect())
}

/// Fixes every binary both ways and solves each LP by vertex enumeration.
pub fn milp_by_enumeration(p: &MilpProblem) -> Option<f64> {
    let bins = p.binaries().to_vec();
    let (_, sense) = p.lp.objective();
    let mut best: Option<f64> = None;
    for mask in 0..(1u32 << bins.len()) {
        let mut lp = p.lp.clone();
        for (i, &b) in bins.iter().enumerate() {
            let v = f64::from((mask >> i) & 1);
            lp.set_var_bounds(b, v, v);
        }
        if let Some(v) = vertex_enumeration(&lp) {
            best = Some(match (best, sense) {
                (None, _) => v,
                (Some(b), Sense::Maximize) => b.max(v),
                (Some(b), Sense::Minimize) => b.min(v),
            });
        }
    }
    best
}
