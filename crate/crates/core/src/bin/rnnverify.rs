use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};
use rnnverify::bench::{run_benchmark, write_cells_csv, write_series_csv};
use rnnverify::format::{self, NetworkDoc};
use rnnverify::network::unroll;
use rnnverify::pipeline::{verify_rnn, verify_rnn_unrolled, InferenceMode, PipelineConfig};
use rnnverify::props::Verdict;
use rnnverify::solver::SolverOptions;

const EXIT_HOLDS: u8 = 0;
const EXIT_VIOLATED: u8 = 1;
const EXIT_UNKNOWN: u8 = 2;
const EXIT_ERROR: u8 = 3;

#[derive(Parser)]
#[command(name = "rnnverify", version, about = "Verify ReLU recurrent networks with inductive invariants")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a property over every input sequence up to its horizon.
    Verify {
        network: PathBuf,
        property: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
        #[arg(long, default_value_t = 10)]
        max_refinements: usize,
        #[arg(long, default_value = "auto")]
        mode: InferenceMode,
        /// Seconds.
        #[arg(long)]
        time_budget: Option<f64>,
        /// Also decide the query by unrolling and compare.
        #[arg(long)]
        baseline_unroll: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the machine-readable report instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Run a robustness benchmark described by a TOML file.
    Bench {
        config: PathBuf,
        /// Directory for table.csv and series.csv; the table goes to stdout otherwise.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write the unrolled feed-forward network.
    Unroll {
        network: PathBuf,
        #[arg(long)]
        t_max: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug)]
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn located(path: &Path, e: format::ParseError) -> Failure {
    Failure(format!("{}:{e}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Verify { network, property, epsilon, max_refinements, mode, time_budget, baseline_unroll, seed, json } => {
            let cfg = PipelineConfig {
                epsilon,
                max_refinements,
                mode,
                time_budget: time_budget.map(Duration::from_secs_f64),
                seed,
                ..PipelineConfig::default()
            };
            verify(&network, &property, &cfg, baseline_unroll, json)
        }
        Cmd::Bench { config, out_dir } => bench(&config, out_dir.as_deref()),
        Cmd::Unroll { network, t_max, output } => cmd_unroll(&network, t_max, output.as_deref()),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn verify(network: &Path, property: &Path, cfg: &PipelineConfig, baseline: bool, json: bool) -> Result<u8, Failure> {
    if cfg.time_budget.is_some_and(|b| b.is_zero()) {
        return Err(Failure("time budget must be positive".into()));
    }
    let net = format::parse_rnn(&read(network)?).map_err(|e| located(network, e))?;
    let prop = format::parse_property(&read(property)?).map_err(|e| located(property, e))?;
    let q = prop.query(net)?;
    let report = verify_rnn(&q, cfg)?;

    let baseline = if baseline {
        let opts = SolverOptions { deadline: cfg.time_budget.map(|b| Instant::now() + b), ..SolverOptions::default() };
        let start = Instant::now();
        let v = match verify_rnn_unrolled(&q, &opts) {
            Ok(v) => v,
            Err(e) if e.is_timeout() => Verdict::Unknown("time budget exhausted".into()),
            Err(e) => Verdict::Error(e.to_string()),
        };
        Some((v, start.elapsed().as_secs_f64()))
    } else {
        None
    };
    let contradiction = baseline.as_ref().is_some_and(|(v, _)| {
        matches!((&report.verdict, v), (Verdict::Holds, Verdict::Violated(_)) | (Verdict::Violated(_), Verdict::Holds))
    });

    if json {
        let mut doc = serde_json::to_value(&report)?;
        if let Some((v, secs)) = &baseline {
            doc["baseline_unroll"] = serde_json::json!({ "verdict": v, "seconds": secs });
        }
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        print!("{}", format::render_report(&report));
        if let Some((v, secs)) = &baseline {
            println!("baseline unroll: {} ({secs:.4} s)", v.label());
        }
    }
    if contradiction {
        return Err(Failure("the unrolled baseline contradicts the invariant verdict".into()));
    }
    Ok(match report.verdict {
        Verdict::Holds => EXIT_HOLDS,
        Verdict::Violated(_) => EXIT_VIOLATED,
        Verdict::Unknown(_) => EXIT_UNKNOWN,
        Verdict::Error(_) => EXIT_ERROR,
    })
}

fn bench(config: &Path, out_dir: Option<&Path>) -> Result<u8, Failure> {
    let cfg = format::parse_bench_config(&read(config)?).map_err(|e| located(config, e))?;
    cfg.validate()?;
    let res = run_benchmark(&cfg)?;
    let cells: usize = res.cells.iter().map(|c| c.total).sum();
    let errors: usize = res.cells.iter().map(|c| c.errors).sum();
    for f in &res.flips {
        log::warn!("{} point {}: certified at t_max {} but not at {}", f.shape, f.point, f.certified_at, f.not_certified_at);
    }
    match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_cells_csv(&res.cells, fs::File::create(dir.join("table.csv"))?)?;
            if cfg.series.is_some() {
                write_series_csv(&res.series, fs::File::create(dir.join("series.csv"))?)?;
            }
        }
        None => {
            write_cells_csv(&res.cells, std::io::stdout())?;
            if cfg.series.is_some() {
                println!();
                write_series_csv(&res.series, std::io::stdout())?;
            }
        }
    }
    if cells > 0 && errors == cells {
        return Err(Failure("every benchmark run failed".into()));
    }
    Ok(EXIT_HOLDS)
}

fn cmd_unroll(network: &Path, t_max: usize, output: Option<&Path>) -> Result<u8, Failure> {
    let net = match format::parse_network(&read(network)?).map_err(|e| located(network, e))? {
        NetworkDoc::Rnn(n) => n,
        NetworkDoc::Ffnn(_) => return Err(Failure(format!("{}: already feed-forward", network.display()))),
    };
    let text = format::emit_ffnn(&unroll(&net, t_max)?.ffnn);
    match output {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(EXIT_HOLDS)
}
