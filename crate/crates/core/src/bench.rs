//! Adversarial-robustness queries, generated networks and benchmark sweeps.
//!
//! Generated weights are reproducible across platforms: a `ChaCha8Rng`
//! seeded with `seed_from_u64(seed)` yields one `u64` per weight, mapped to
//! `u = (x >> 11) * 2^-53` and then to `-b + 2 b u` with
//! `b = 1 / sqrt(fan_in)`. Layers are filled in order; within a layer the
//! input weights come first (row-major), then the memory weights, then the
//! bias.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::network::{Activation, LayerWeights, Matrix, RnnNetwork};
use crate::pipeline::{verify_rnn, verify_rnn_unrolled, PipelineConfig};
use crate::props::{InputProperty, LinConstraint, LinExpr, OutputProperty, RnnQuery, TimeScope, Var, Verdict};
use crate::solver::SolverOptions;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSpec {
    /// Held constant over time.
    pub point: Vec<f64>,
    /// L-infinity radius.
    pub delta: f64,
    pub t_max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetShape {
    pub input_dim: usize,
    /// Sizes of the recurrent ReLU layers; every unit carries memory.
    pub recurrent: Vec<usize>,
    /// Sizes of the dense ReLU layers after them.
    pub dense: Vec<usize>,
    pub output_dim: usize,
    pub seed: u64,
}

impl NetShape {
    /// 40 inputs, recurrent layers of `d` units, five dense layers of 32 and
    /// 20 outputs.
    pub fn speaker(recurrent: &[usize], seed: u64) -> Self {
        Self { input_dim: 40, recurrent: recurrent.to_vec(), dense: vec![32; 5], output_dim: 20, seed }
    }

    pub fn name(&self) -> String {
        let r: Vec<String> = self.recurrent.iter().map(|d| d.to_string()).collect();
        format!("n{}_r{}_d{}_s{}", self.input_dim, r.join("-"), self.dense.len(), self.seed)
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.recurrent.iter().chain(&self.dense).any(|&s| s == 0) {
            return Err(Error::InvalidArgument("network shape dimensions must be positive".into()));
        }
        Ok(())
    }
}

struct WeightStream(ChaCha8Rng);

impl WeightStream {
    fn next(&mut self, b: f64) -> f64 {
        let u = (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        -b + 2.0 * b * u
    }

    fn matrix(&mut self, rows: usize, cols: usize, b: f64) -> Matrix {
        let data = (0..rows * cols).map(|_| self.next(b)).collect();
        Matrix::from_row_major(rows, cols, data).expect("sizes match")
    }
}

pub fn generate_network(shape: &NetShape) -> Result<RnnNetwork> {
    shape.validate()?;
    let mut ws = WeightStream(ChaCha8Rng::seed_from_u64(shape.seed));
    let mut layers = Vec::new();
    let mut prev = shape.input_dim;
    for &n in &shape.recurrent {
        let b = 1.0 / ((prev + n) as f64).sqrt();
        let w = ws.matrix(n, prev, b);
        let h = ws.matrix(n, n, b);
        let bias = (0..n).map(|_| ws.next(b)).collect();
        layers.push(LayerWeights::new(w, Some(h), bias, Activation::Relu)?);
        prev = n;
    }
    for (i, &n) in shape.dense.iter().chain(std::iter::once(&shape.output_dim)).enumerate() {
        let b = 1.0 / (prev as f64).sqrt();
        let w = ws.matrix(n, prev, b);
        let bias = (0..n).map(|_| ws.next(b)).collect();
        let act = if i == shape.dense.len() { Activation::Identity } else { Activation::Relu };
        layers.push(LayerWeights::new(w, None, bias, act)?);
        prev = n;
    }
    Ok(RnnNetwork::new(shape.input_dim, layers)?)
}

/// Top label and runner-up at `t_max` on the constant sequence; ties go to
/// the lower index.
pub fn top_two(net: &RnnNetwork, point: &[f64], t_max: usize) -> Result<(usize, usize)> {
    if net.output_dim() < 2 {
        return Err(Error::InvalidArgument("robustness queries need at least two outputs".into()));
    }
    let trace = net.evaluate(&vec![point.to_vec(); t_max])?;
    let s = trace.outputs(t_max);
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    Ok((idx[0], idx[1]))
}

/// SAT iff some input within `delta` of the point at every step makes the
/// runner-up score at least the top score at `t_max`.
pub fn build_robustness_query(net: &RnnNetwork, spec: &RobustnessSpec) -> Result<RnnQuery> {
    if spec.t_max < 1 {
        return Err(Error::InvalidArgument("t_max must be at least 1".into()));
    }
    if !(spec.delta >= 0.0) {
        return Err(Error::InvalidArgument("delta must be non-negative".into()));
    }
    if spec.point.len() != net.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "point has {} coordinates, network expects {}",
            spec.point.len(),
            net.input_dim()
        )));
    }
    let (l, lsh) = top_two(net, &spec.point, spec.t_max)?;
    let lo: Vec<f64> = spec.point.iter().map(|x| x - spec.delta).collect();
    let hi: Vec<f64> = spec.point.iter().map(|x| x + spec.delta).collect();
    let q = LinConstraint::ge(LinExpr::var(Var::Output(lsh)).minus(&LinExpr::var(Var::Output(l))), 0.0);
    let out = OutputProperty::new(vec![vec![q]], TimeScope::FixedStep(spec.t_max));
    Ok(RnnQuery::new(InputProperty::from_box(&lo, &hi), net.clone(), out, spec.t_max)?)
}

/// Largest radius in `[0, delta_hi]` certified by `verify_rnn`, to within
/// `tolerance`. Anything but `Holds` counts as not certified, so the result
/// is a sound lower bound on the robust radius.
pub fn min_delta_search(
    net: &RnnNetwork,
    point: &[f64],
    t_max: usize,
    delta_hi: f64,
    tolerance: f64,
    cfg: &PipelineConfig,
) -> Result<f64> {
    if !(tolerance > 0.0) || !(delta_hi >= 0.0) {
        return Err(Error::InvalidArgument("need delta_hi >= 0 and tolerance > 0".into()));
    }
    let holds = |delta: f64| -> Result<bool> {
        let q = build_robustness_query(net, &RobustnessSpec { point: point.to_vec(), delta, t_max })?;
        Ok(verify_rnn(&q, cfg)?.verdict.is_holds())
    };
    if holds(delta_hi)? {
        return Ok(delta_hi);
    }
    if !holds(0.0)? {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, delta_hi);
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        if holds(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Uniform points in `[-1, 1]^d`, drawn with the weight stream of `seed`.
pub fn sample_points(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut ws = WeightStream(ChaCha8Rng::seed_from_u64(seed));
    (0..count).map(|_| (0..d).map(|_| ws.next(1.0)).collect()).collect()
}

fn default_parallelism() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn default_cross_check() -> usize {
    6
}

/// Runtime comparison of the invariant method against unrolling on the
/// single-memory-unit running example, with threshold `slope * t_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesConfig {
    pub t_max: Vec<usize>,
    pub slope: f64,
    pub unroll_budget_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub shapes: Vec<NetShape>,
    pub points: usize,
    pub t_max: Vec<usize>,
    pub delta: f64,
    #[serde(default)]
    pub point_seed: u64,
    /// Per verification run.
    pub time_budget_secs: f64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// `Holds` cells up to this horizon are re-checked by unrolling.
    #[serde(default = "default_cross_check")]
    pub cross_check_max_t: usize,
    #[serde(default)]
    pub series: Option<SeriesConfig>,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() || self.points == 0 || self.t_max.is_empty() {
            return Err(Error::InvalidArgument("benchmark needs shapes, points and t_max values".into()));
        }
        if self.t_max.contains(&0) || !(self.delta >= 0.0) || !(self.time_budget_secs > 0.0) || self.parallelism == 0 {
            return Err(Error::InvalidArgument("invalid benchmark parameters".into()));
        }
        for s in &self.shapes {
            s.validate()?;
        }
        Ok(())
    }
}

/// One (shape, t_max) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub t_max: usize,
    pub method: String,
    pub mean_seconds: f64,
    pub certified: usize,
    pub total: usize,
    pub shape: String,
    pub violated: usize,
    pub unknown: usize,
    pub errors: usize,
    pub cross_checked: usize,
    pub contradictions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t_max: usize,
    pub method: String,
    pub seconds: f64,
    pub verdict: String,
}

/// A point certified at some horizon but not at a shorter one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flip {
    pub shape: String,
    pub point: usize,
    pub certified_at: usize,
    pub not_certified_at: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub cells: Vec<CellRow>,
    pub series: Vec<SeriesRow>,
    pub flips: Vec<Flip>,
}

struct PointRun {
    seconds: f64,
    verdict: Verdict,
    cross_checked: bool,
    contradiction: bool,
}

fn run_point(net: &RnnNetwork, point: &[f64], t_max: usize, cfg: &BenchConfig) -> PointRun {
    let start = Instant::now();
    let budget = Duration::from_secs_f64(cfg.time_budget_secs);
    let pc = PipelineConfig { time_budget: Some(budget), ..PipelineConfig::default() };
    let verdict = build_robustness_query(net, &RobustnessSpec { point: point.to_vec(), delta: cfg.delta, t_max })
        .and_then(|q| Ok((verify_rnn(&q, &pc)?.verdict, q)));
    let seconds = start.elapsed().as_secs_f64();
    let (verdict, q) = match verdict {
        Ok(v) => v,
        Err(e) => return PointRun { seconds, verdict: Verdict::Error(e.to_string()), cross_checked: false, contradiction: false },
    };
    let mut run = PointRun { seconds, verdict, cross_checked: false, contradiction: false };
    if run.verdict.is_holds() && t_max <= cfg.cross_check_max_t {
        let opts = SolverOptions::default().with_time_budget(budget);
        match verify_rnn_unrolled(&q, &opts) {
            Ok(v) => {
                run.cross_checked = true;
                run.contradiction = v.is_violated();
                if run.contradiction {
                    log::error!("invariant method certified a point that unrolling refutes (t_max {t_max})");
                }
            }
            Err(e) => log::warn!("unrolled cross-check skipped: {e}"),
        }
    }
    run
}

/// Runs every (shape, t_max, point) combination, in parallel up to
/// `cfg.parallelism`. Failures are recorded in their cells.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchResult> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut result = BenchResult::default();
    for shape in &cfg.shapes {
        let net = generate_network(shape)?;
        let points = sample_points(shape.input_dim, cfg.points, cfg.point_seed ^ shape.seed);
        let jobs: Vec<(usize, usize)> =
            cfg.t_max.iter().flat_map(|&t| (0..points.len()).map(move |p| (t, p))).collect();
        let runs: Vec<PointRun> =
            pool.install(|| jobs.par_iter().map(|&(t, p)| run_point(&net, &points[p], t, cfg)).collect());
        let mut certified_at: BTreeMap<(usize, usize), bool> = BTreeMap::new();
        for &t in &cfg.t_max {
            let cell: Vec<(&(usize, usize), &PointRun)> = jobs.iter().zip(&runs).filter(|(j, _)| j.0 == t).collect();
            let total = cell.len();
            let count = |f: &dyn Fn(&Verdict) -> bool| cell.iter().filter(|(_, r)| f(&r.verdict)).count();
            for ((_, p), r) in &cell {
                certified_at.insert((*p, t), r.verdict.is_holds());
            }
            result.cells.push(CellRow {
                t_max: t,
                method: "invariant".into(),
                mean_seconds: cell.iter().map(|(_, r)| r.seconds).sum::<f64>() / total as f64,
                certified: count(&|v| v.is_holds()),
                total,
                shape: shape.name(),
                violated: count(&|v| v.is_violated()),
                unknown: count(&|v| matches!(v, Verdict::Unknown(_))),
                errors: count(&|v| matches!(v, Verdict::Error(_))),
                cross_checked: cell.iter().filter(|(_, r)| r.cross_checked).count(),
                contradictions: cell.iter().filter(|(_, r)| r.contradiction).count(),
            });
        }
        let mut ts = cfg.t_max.clone();
        ts.sort_unstable();
        ts.dedup();
        for p in 0..points.len() {
            for (i, &hi) in ts.iter().enumerate() {
                for &lo in &ts[..i] {
                    if certified_at[&(p, hi)] && !certified_at[&(p, lo)] {
                        result.flips.push(Flip { shape: shape.name(), point: p, certified_at: hi, not_certified_at: lo });
                    }
                }
            }
        }
    }
    if let Some(series) = &cfg.series {
        result.series = run_series(series, cfg.time_budget_secs)?;
    }
    Ok(result)
}

/// The one-unit running example: `v = relu(x + m)` feeding an identity
/// output, queried with `x` in `[-3, 3]` and `out >= slope * t_max`.
pub fn running_example_query(t_max: usize, slope: f64) -> Result<RnnQuery> {
    let one = || Matrix::from_row_major(1, 1, vec![1.0]).expect("1x1");
    let net = RnnNetwork::new(
        1,
        vec![
            LayerWeights::new(one(), Some(one()), vec![0.0], Activation::Relu)?,
            LayerWeights::new(one(), None, vec![0.0], Activation::Identity)?,
        ],
    )?;
    let q = OutputProperty::any_step(vec![LinConstraint::ge(LinExpr::var(Var::Output(0)), slope * t_max as f64)]);
    Ok(RnnQuery::new(InputProperty::from_box(&[-3.0], &[3.0]), net, q, t_max)?)
}

/// Invariant method and unrolling on the running example for each `t_max`.
pub fn run_series(series: &SeriesConfig, budget_secs: f64) -> Result<Vec<SeriesRow>> {
    let mut rows = Vec::new();
    for &t in &series.t_max {
        let q = running_example_query(t, series.slope)?;
        let pc = PipelineConfig { time_budget: Some(Duration::from_secs_f64(budget_secs)), ..PipelineConfig::default() };
        let r = verify_rnn(&q, &pc)?;
        rows.push(SeriesRow { t_max: t, method: "invariant".into(), seconds: r.timings.total, verdict: r.verdict.label().into() });
        let start = Instant::now();
        let opts = SolverOptions::default().with_time_budget(Duration::from_secs_f64(series.unroll_budget_secs));
        let verdict = match verify_rnn_unrolled(&q, &opts) {
            Ok(v) => v.label().to_string(),
            Err(e) if e.is_timeout() => "timeout".into(),
            Err(e) => format!("error: {e}"),
        };
        rows.push(SeriesRow { t_max: t, method: "unroll".into(), seconds: start.elapsed().as_secs_f64(), verdict });
    }
    Ok(rows)
}

pub fn write_cells_csv(rows: &[CellRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_series_csv(rows: &[SeriesRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}
