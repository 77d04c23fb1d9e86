//! Text formats for networks and properties, and run-report rendering.
//!
//! Network files:
//!
//! ```text
//! rnnverify-network 1
//! rnn 1
//! layer relu 1
//! weights
//! 1
//! memory
//! 1
//! bias 0
//! layer identity 1
//! weights
//! 1
//! bias 0
//! ```
//!
//! The second line is `rnn <input_dim>` or `ffnn <input_dim>`. Each
//! `layer <activation> <size>` is followed by `size` rows of weights (one
//! row per line), an optional `memory` block of `size` rows (rnn only) and
//! a `bias` line. Feed-forward layers list `block input <offset> <cols>` or
//! `block layer <j> <offset> <cols>` sections instead of `weights`.
//!
//! Property files:
//!
//! ```text
//! rnnverify-property 1
//! t_max 5
//! input
//! in:0 1 >= -3
//! in:0 1 <= 3
//! output any
//! disjunct
//! out:0 1 >= 16
//! ```
//!
//! A constraint is a list of `variable coefficient` pairs (variables
//! `in:k`, `out:k`, `t`), a relation (`<=`, `>=`, `=`) and a constant.
//! `output step <t>` checks a single step instead of every step. `#` starts
//! a comment.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::network::{Activation, Block, FfLayer, FfnnNetwork, LayerWeights, Matrix, RnnNetwork, Source};
use crate::pipeline::RunReport;
use crate::props::{Counterexample, InputProperty, LinConstraint, LinExpr, OutputProperty, Relation, RnnQuery, TimeScope, Var, Verdict};

pub const NETWORK_HEADER: &str = "rnnverify-network 1";
pub const PROPERTY_HEADER: &str = "rnnverify-property 1";

/// 1-based position of the offending token.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug)]
struct Tok<'a> {
    text: &'a str,
    line: usize,
    col: usize,
}

impl Tok<'_> {
    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError { line: self.line, col: self.col, message: msg.into() }
    }

    fn num(&self) -> Result<f64, ParseError> {
        match self.text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.err(format!("expected a finite number, found {:?}", self.text))),
        }
    }

    fn count(&self) -> Result<usize, ParseError> {
        self.text.parse::<usize>().map_err(|_| self.err(format!("expected a non-negative integer, found {:?}", self.text)))
    }
}

/// Non-empty lines split into tokens, comments removed.
fn lines(text: &str) -> Vec<Vec<Tok<'_>>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let body = raw.split('#').next().unwrap_or("");
        let mut toks = Vec::new();
        let mut start = None;
        for (k, ch) in body.char_indices().chain(std::iter::once((body.len(), ' '))) {
            match (ch.is_whitespace(), start) {
                (false, None) => start = Some(k),
                (true, Some(s)) => {
                    toks.push(Tok { text: &body[s..k], line: i + 1, col: s + 1 });
                    start = None;
                }
                _ => {}
            }
        }
        if !toks.is_empty() {
            out.push(toks);
        }
    }
    out
}

struct Cursor<'a> {
    lines: Vec<Vec<Tok<'a>>>,
    pos: usize,
    last_line: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        let lines = lines(text);
        let last_line = text.lines().count().max(1);
        Self { lines, pos: 0, last_line }
    }

    fn peek(&self) -> Option<&[Tok<'a>]> {
        self.lines.get(self.pos).map(|v| v.as_slice())
    }

    fn next(&mut self, what: &str) -> Result<Vec<Tok<'a>>, ParseError> {
        match self.lines.get(self.pos) {
            Some(l) => {
                self.pos += 1;
                Ok(l.clone())
            }
            None => Err(ParseError { line: self.last_line, col: 1, message: format!("unexpected end of file, expected {what}") }),
        }
    }

    fn header(&mut self, header: &str) -> Result<(), ParseError> {
        let l = self.next("a header")?;
        let got: Vec<&str> = l.iter().map(|t| t.text).collect();
        if got.join(" ") != header {
            return Err(l[0].err(format!("expected header {header:?}")));
        }
        Ok(())
    }
}

fn expect_len(l: &[Tok<'_>], n: usize, what: &str) -> Result<(), ParseError> {
    if l.len() != n {
        let at = l.get(n).unwrap_or(&l[l.len() - 1]);
        return Err(at.err(format!("{what} takes {} field(s), found {}", n - 1, l.len() - 1)));
    }
    Ok(())
}

fn rows(c: &mut Cursor<'_>, count: usize, width: usize) -> Result<Matrix, ParseError> {
    let mut data = Vec::with_capacity(count * width);
    for _ in 0..count {
        let l = c.next("a weight row")?;
        if l.len() != width {
            let at = l.get(width).unwrap_or(&l[l.len() - 1]);
            return Err(at.err(format!("expected {width} weights in this row, found {}", l.len())));
        }
        for t in &l {
            data.push(t.num()?);
        }
    }
    Ok(Matrix::from_row_major(count, width, data).expect("row lengths checked"))
}

fn activation(t: &Tok<'_>) -> Result<Activation, ParseError> {
    match t.text {
        "relu" => Ok(Activation::Relu),
        "identity" => Ok(Activation::Identity),
        other => Err(t.err(format!("unknown activation {other:?}"))),
    }
}

fn bias(c: &mut Cursor<'_>, size: usize) -> Result<Vec<f64>, ParseError> {
    let l = c.next("a bias line")?;
    if l[0].text != "bias" {
        return Err(l[0].err("expected `bias`"));
    }
    expect_len(&l, size + 1, "bias")?;
    l[1..].iter().map(|t| t.num()).collect()
}

/// A parsed network file.
#[derive(Clone, Debug, PartialEq)]
pub enum NetworkDoc {
    Rnn(RnnNetwork),
    Ffnn(FfnnNetwork),
}

pub fn parse_network(text: &str) -> Result<NetworkDoc, ParseError> {
    let mut c = Cursor::new(text);
    c.header(NETWORK_HEADER)?;
    let kind = c.next("`rnn <inputs>` or `ffnn <inputs>`")?;
    expect_len(&kind, 2, &format!("`{}`", kind[0].text))?;
    let input_dim = kind[1].count()?;
    match kind[0].text {
        "rnn" => parse_rnn_layers(&mut c, input_dim, &kind[0]).map(NetworkDoc::Rnn),
        "ffnn" => parse_ffnn_layers(&mut c, input_dim, &kind[0]).map(NetworkDoc::Ffnn),
        other => Err(kind[0].err(format!("unknown network kind {other:?}"))),
    }
}

/// Parses a network file that must describe a recurrent network.
pub fn parse_rnn(text: &str) -> Result<RnnNetwork, ParseError> {
    match parse_network(text)? {
        NetworkDoc::Rnn(n) => Ok(n),
        NetworkDoc::Ffnn(_) => Err(ParseError { line: 2, col: 1, message: "expected an rnn network".into() }),
    }
}

fn layer_line<'a>(c: &mut Cursor<'a>) -> Result<(Tok<'a>, Activation, usize), ParseError> {
    let l = c.next("a layer")?;
    if l[0].text != "layer" {
        return Err(l[0].err(format!("expected `layer`, found {:?}", l[0].text)));
    }
    expect_len(&l, 3, "layer")?;
    let size = l[2].count()?;
    if size == 0 {
        return Err(l[2].err("layer size must be positive"));
    }
    Ok((l[0], activation(&l[1])?, size))
}

fn parse_rnn_layers(c: &mut Cursor<'_>, input_dim: usize, at: &Tok<'_>) -> Result<RnnNetwork, ParseError> {
    let mut layers = Vec::new();
    let mut prev = input_dim;
    while c.peek().is_some() {
        let (lt, act, size) = layer_line(c)?;
        let w = c.next("`weights`")?;
        if w[0].text != "weights" || w.len() != 1 {
            return Err(w[0].err("expected `weights`"));
        }
        let weights = rows(c, size, prev)?;
        let memory = if c.peek().is_some_and(|l| l[0].text == "memory") {
            let m = c.next("`memory`")?;
            expect_len(&m, 1, "memory")?;
            Some(rows(c, size, size)?)
        } else {
            None
        };
        let b = bias(c, size)?;
        layers.push(LayerWeights::new(weights, memory, b, act).map_err(|e| lt.err(e.to_string()))?);
        prev = size;
    }
    RnnNetwork::new(input_dim, layers).map_err(|e| at.err(e.to_string()))
}

fn parse_ffnn_layers(c: &mut Cursor<'_>, input_dim: usize, at: &Tok<'_>) -> Result<FfnnNetwork, ParseError> {
    let mut layers = Vec::new();
    while c.peek().is_some() {
        let (_, activation, size) = layer_line(c)?;
        let mut blocks = Vec::new();
        while c.peek().is_some_and(|l| l[0].text == "block") {
            let l = c.next("a block")?;
            let (source, rest) = match l.get(1).map(|t| t.text) {
                Some("input") => {
                    expect_len(&l, 4, "block input")?;
                    (Source::Input, &l[2..])
                }
                Some("layer") => {
                    expect_len(&l, 5, "block layer")?;
                    (Source::Layer(l[2].count()?), &l[3..])
                }
                _ => return Err(l[l.len().min(2) - 1].err("expected `block input` or `block layer`")),
            };
            let offset = rest[0].count()?;
            let cols = rest[1].count()?;
            blocks.push(Block { source, offset, weights: rows(c, size, cols)? });
        }
        let b = bias(c, size)?;
        layers.push(FfLayer { blocks, bias: b, activation });
    }
    FfnnNetwork::new(input_dim, layers).map_err(|e| at.err(e.to_string()))
}

/// Shortest text that parses back to the same value.
pub fn fmt_num(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v}")
    } else {
        format!("{v:?}")
    }
}

fn write_rows(out: &mut String, m: &Matrix) {
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|&v| fmt_num(v)).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

fn write_bias(out: &mut String, b: &[f64]) {
    out.push_str("bias");
    for &v in b {
        out.push(' ');
        out.push_str(&fmt_num(v));
    }
    out.push('\n');
}

/// Canonical text of a recurrent network.
pub fn emit_rnn(net: &RnnNetwork) -> String {
    let mut out = format!("{NETWORK_HEADER}\nrnn {}\n", net.input_dim());
    for l in net.layers() {
        let _ = writeln!(out, "layer {} {}", l.activation, l.size());
        out.push_str("weights\n");
        write_rows(&mut out, &l.weights);
        if !l.memory.is_zero() {
            out.push_str("memory\n");
            write_rows(&mut out, &l.memory);
        }
        write_bias(&mut out, &l.bias);
    }
    out
}

/// Canonical text of a feed-forward network.
pub fn emit_ffnn(net: &FfnnNetwork) -> String {
    let mut out = format!("{NETWORK_HEADER}\nffnn {}\n", net.input_dim());
    for l in net.layers() {
        let _ = writeln!(out, "layer {} {}", l.activation, l.size());
        for b in &l.blocks {
            match b.source {
                Source::Input => {
                    let _ = writeln!(out, "block input {} {}", b.offset, b.weights.cols());
                }
                Source::Layer(j) => {
                    let _ = writeln!(out, "block layer {j} {} {}", b.offset, b.weights.cols());
                }
            }
            write_rows(&mut out, &b.weights);
        }
        write_bias(&mut out, &l.bias);
    }
    out
}

/// A parsed property file; turn it into a query with [`PropertyDoc::query`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyDoc {
    pub t_max: usize,
    pub input: InputProperty,
    pub output: OutputProperty,
}

impl PropertyDoc {
    pub fn query(&self, net: RnnNetwork) -> crate::Result<RnnQuery> {
        Ok(RnnQuery::new(self.input.clone(), net, self.output.clone(), self.t_max)?)
    }
}

fn variable(t: &Tok<'_>, output: bool) -> Result<Var, ParseError> {
    if t.text == "t" {
        return Ok(Var::Time);
    }
    let (kind, idx) = t.text.split_once(':').ok_or_else(|| t.err(format!("unknown variable {:?}", t.text)))?;
    let k = idx.parse::<usize>().map_err(|_| t.err(format!("bad variable index in {:?}", t.text)))?;
    match (kind, output) {
        ("in", false) => Ok(Var::Input(k)),
        ("out", true) => Ok(Var::Output(k)),
        ("in", true) => Err(t.err("output constraints may not mention inputs")),
        ("out", false) => Err(t.err("input constraints may not mention outputs")),
        _ => Err(t.err(format!("unknown variable {:?}", t.text))),
    }
}

fn constraint(l: &[Tok<'_>], output: bool) -> Result<LinConstraint<Var>, ParseError> {
    let mut expr = LinExpr::new();
    let mut i = 0;
    loop {
        let Some(t) = l.get(i) else {
            return Err(l[l.len() - 1].err("missing relation"));
        };
        let rel = match t.text {
            "<=" => Some(Relation::Le),
            ">=" => Some(Relation::Ge),
            "=" => Some(Relation::Eq),
            _ => None,
        };
        if let Some(rel) = rel {
            let c = l.get(i + 1).ok_or_else(|| t.err("missing constant after relation"))?;
            if let Some(extra) = l.get(i + 2) {
                return Err(extra.err("unexpected token after constant"));
            }
            return Ok(LinConstraint::new(expr, rel, LinExpr::constant(c.num()?)));
        }
        let v = variable(t, output)?;
        let coef = l.get(i + 1).ok_or_else(|| t.err("missing coefficient"))?;
        expr.add_term(v, coef.num()?);
        i += 2;
    }
}

pub fn parse_property(text: &str) -> Result<PropertyDoc, ParseError> {
    let mut c = Cursor::new(text);
    c.header(PROPERTY_HEADER)?;
    let l = c.next("`t_max <n>`")?;
    if l[0].text != "t_max" {
        return Err(l[0].err("expected `t_max`"));
    }
    expect_len(&l, 2, "t_max")?;
    let t_max = l[1].count()?;
    if t_max == 0 {
        return Err(l[1].err("t_max must be at least 1"));
    }
    let l = c.next("`input`")?;
    if l[0].text != "input" || l.len() != 1 {
        return Err(l[0].err("expected `input`"));
    }
    let mut input = Vec::new();
    while c.peek().is_some_and(|l| l[0].text != "output") {
        input.push(constraint(&c.next("a constraint")?, false)?);
    }
    let l = c.next("`output any` or `output step <t>`")?;
    let scope = match l.get(1).map(|t| t.text) {
        Some("any") if l.len() == 2 => TimeScope::AnyStep,
        Some("step") if l.len() == 3 => {
            let t0 = l[2].count()?;
            if t0 == 0 || t0 > t_max {
                return Err(l[2].err(format!("step must lie in 1..={t_max}")));
            }
            TimeScope::FixedStep(t0)
        }
        _ => return Err(l[0].err("expected `output any` or `output step <t>`")),
    };
    let mut disjuncts: Vec<Vec<LinConstraint<Var>>> = Vec::new();
    while let Some(l) = c.peek() {
        let l = l.to_vec();
        c.pos += 1;
        if l[0].text == "disjunct" {
            expect_len(&l, 1, "disjunct")?;
            disjuncts.push(Vec::new());
            continue;
        }
        let Some(cur) = disjuncts.last_mut() else {
            return Err(l[0].err("expected `disjunct`"));
        };
        cur.push(constraint(&l, true)?);
    }
    if disjuncts.is_empty() {
        return Err(ParseError { line: c.last_line, col: 1, message: "output property needs at least one disjunct".into() });
    }
    Ok(PropertyDoc { t_max, input: InputProperty::new(input), output: OutputProperty::new(disjuncts, scope) })
}

fn write_constraint(out: &mut String, c: &LinConstraint<Var>) {
    for (v, &a) in &c.expr.terms {
        let _ = write!(out, "{v} {} ", fmt_num(a));
    }
    let _ = writeln!(out, "{} {}", c.relation, fmt_num(-c.expr.constant));
}

pub fn emit_property(p: &PropertyDoc) -> String {
    let mut out = format!("{PROPERTY_HEADER}\nt_max {}\ninput\n", p.t_max);
    for c in &p.input.constraints {
        write_constraint(&mut out, c);
    }
    match p.output.scope {
        TimeScope::AnyStep => out.push_str("output any\n"),
        TimeScope::FixedStep(t) => {
            let _ = writeln!(out, "output step {t}");
        }
    }
    for d in &p.output.disjuncts {
        out.push_str("disjunct\n");
        for c in d {
            write_constraint(&mut out, c);
        }
    }
    out
}

struct Nums<'a>(&'a [f64]);

impl fmt::Display for Nums<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.0.iter().map(|v| format!("{v:.6}")).collect();
        write!(f, "[{}]", s.join(", "))
    }
}

/// Human-readable run report.
pub fn render_report(r: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "verdict: {}", r.verdict.label());
    match &r.verdict {
        Verdict::Unknown(why) | Verdict::Error(why) => {
            let _ = writeln!(out, "reason: {why}");
        }
        Verdict::Violated(Counterexample::Rnn { trace, step }) => {
            let _ = writeln!(out, "violation at step {step}");
            for t in 1..=trace.len() {
                let _ = writeln!(out, "  t={t} in={} out={}", Nums(&trace.at(t).inputs), Nums(trace.outputs(t)));
            }
        }
        Verdict::Violated(Counterexample::Ffnn(v)) => {
            let _ = writeln!(out, "witness in={} out={}", Nums(&v.inputs), Nums(v.output()));
        }
        Verdict::Holds => {}
    }
    let _ = writeln!(out, "mode: {}", serde_json::to_string(&r.mode).unwrap_or_default().trim_matches('"'));
    if !r.invariants.is_empty() {
        out.push_str("invariants:\n");
        for i in r.invariants.iter() {
            let _ = writeln!(out, "  mem:{}  {:.6}*(t-1) <= m <= {:.6}*(t-1)", i.unit, i.alpha_l, i.alpha_u);
        }
    }
    let t = &r.timings;
    let _ = writeln!(
        out,
        "timings (s): inference {:.4}  phi {:.4}  snapshot {:.4}  falsify {:.4}  total {:.4}",
        t.inference, t.phi_checks, t.snapshot, t.falsify, t.total
    );
    let _ = writeln!(out, "engine fraction: {:.1}%", 100.0 * r.engine_fraction);
    let _ = writeln!(out, "refinements: {}  phi queries: {}  snapshot queries: {}", r.refinements, r.phi_queries, r.snapshot_queries);
    out
}

pub fn report_json(r: &RunReport) -> String {
    serde_json::to_string_pretty(r).expect("reports serialize")
}

/// Parses a TOML benchmark configuration.
pub fn parse_bench_config(text: &str) -> Result<crate::bench::BenchConfig, ParseError> {
    toml::from_str(text).map_err(|e| {
        let (line, col) = match e.span() {
            Some(s) => {
                let before = &text[..s.start.min(text.len())];
                let line = before.matches('\n').count() + 1;
                let col = before.len() - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
                (line, col)
            }
            None => (1, 1),
        };
        ParseError { line, col, message: e.message().to_string() }
    })
}
