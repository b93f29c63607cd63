mod io;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ad_market::parallel::{map_items, with_threads};
use ad_market::solver::TraceLine;
use ad_market::{check_equilibrium, solve, Execution, Market, MarketError, Mode, Profile, SolveError, SolverConfig};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::io::{read_instance, read_json, InputError, InstanceFile, ReportFile, SolutionFile};

const OK: u8 = 0;
const UNVERIFIED: u8 = 1;
const BAD_INPUT: u8 = 2;
const NO_EQUILIBRIUM: u8 = 3;
const INTERNAL: u8 = 4;

#[derive(Parser)]
#[command(name = "ad-market", version, about = "Exact equilibrium prices for linear exchange markets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and print its solution file.
    Solve(SolveArgs),
    /// Check a solution against an instance.
    Verify { instance: PathBuf, solution: PathBuf },
    /// Print a random instance.
    Gen(GenArgs),
    /// Summarize a trace written by `solve --trace`.
    Trace { path: PathBuf },
    /// Solve several instance files, one JSON line per file.
    Batch {
        files: Vec<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Solve and verify random irreducible instances.
    Fuzz {
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        umax: u64,
        #[arg(long, default_value_t = 100)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, default_value = "fixed")]
    mode: Mode,
    /// Overridden by AD_SOLVER_PROFILE.
    #[arg(long, default_value = "fast")]
    profile: Profile,
    #[arg(long = "max-iters")]
    max_iters: Option<u64>,
}

#[derive(Args)]
struct SolveArgs {
    input: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    /// Write one JSON object per iteration to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    umax: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Resample until the liking graph is strongly connected.
    #[arg(long)]
    irreducible: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

impl SolverArgs {
    fn config(&self, trace: bool) -> Result<SolverConfig, String> {
        let profile = match std::env::var("AD_SOLVER_PROFILE") {
            Ok(v) if !v.is_empty() => v.parse().map_err(|e| format!("AD_SOLVER_PROFILE: {e}"))?,
            _ => self.profile,
        };
        Ok(SolverConfig {
            mode: self.mode,
            profile,
            max_iterations: self.max_iters,
            record_trace: trace,
            ..Default::default()
        })
    }
}

fn exit_code(e: &SolveError) -> u8 {
    match e {
        SolveError::Market(MarketError::NoEquilibrium(_)) => NO_EQUILIBRIUM,
        SolveError::Market(_) => BAD_INPUT,
        _ => INTERNAL,
    }
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    match out {
        Some(p) => std::fs::write(p, text + "\n"),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct TraceEntry {
    component: usize,
    #[serde(flatten)]
    line: TraceLine,
}

fn write_trace(path: &Path, sol: &ad_market::Solution) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (c, comp) in sol.components.iter().enumerate() {
        for rec in &comp.trace {
            let entry = TraceEntry { component: c, line: rec.to_line() };
            serde_json::to_writer(&mut w, &entry)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()
}

fn cmd_solve(args: &SolveArgs) -> ExitCode {
    let (_, market) = match read_instance(&args.input) {
        Ok(v) => v,
        Err(e) => return fail(BAD_INPUT, e),
    };
    let config = match args.solver.config(args.trace.is_some()) {
        Ok(c) => c,
        Err(e) => return fail(BAD_INPUT, e),
    };
    let sol = match solve(&market, &config) {
        Ok(s) => s,
        Err(e) => return fail(exit_code(&e), e),
    };
    for w in sol.components.iter().flat_map(|c| &c.warnings) {
        eprintln!("warning: {w}");
    }
    if let Some(path) = &args.trace {
        if let Err(e) = write_trace(path, &sol) {
            return fail(INTERNAL, format!("{}: {e}", path.display()));
        }
    }
    let file = SolutionFile::new(&sol);
    if let Err(e) = write_json(&file, args.out.as_deref()) {
        return fail(INTERNAL, e);
    }
    if file.verified {
        ExitCode::from(OK)
    } else {
        ExitCode::from(INTERNAL)
    }
}

fn cmd_verify(instance: &Path, solution: &Path) -> ExitCode {
    let parsed = read_instance(instance).and_then(|(_, m)| {
        let sol: SolutionFile = read_json(solution)?;
        let prices = sol.integer_prices()?;
        if prices.len() != m.n() {
            return Err(InputError::Field(format!("{} prices for {} goods", prices.len(), m.n())));
        }
        Ok((m, prices))
    });
    let (market, prices) = match parsed {
        Ok(v) => v,
        Err(e) => return fail(BAD_INPUT, e),
    };
    let report = ReportFile::new(&check_equilibrium(&market, &prices));
    let _ = write_json(&report, None);
    ExitCode::from(if report.equilibrium { OK } else { UNVERIFIED })
}

fn generate(args: &GenArgs) -> Market {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    loop {
        let m = Market::random_with(&mut rng, args.n, args.umax, false);
        if !args.irreducible || m.validate().strongly_connected {
            return m;
        }
    }
}

fn cmd_gen(args: &GenArgs) -> ExitCode {
    if args.n == 0 || args.umax == 0 {
        return fail(BAD_INPUT, "--n and --umax must be at least 1");
    }
    let inst = InstanceFile { utilities: generate(args).utilities().to_vec(), name: None };
    let text = serde_json::to_string(&inst).expect("serializable");
    match &args.out {
        Some(p) => {
            if let Err(e) = std::fs::write(p, text + "\n") {
                return fail(INTERNAL, e);
            }
        }
        None => println!("{text}"),
    }
    ExitCode::from(OK)
}

#[derive(Default, Serialize)]
struct TraceSummary {
    lines: u64,
    components: usize,
    xmax_iterations: u64,
    balancing_iterations: u64,
    bindings: std::collections::BTreeMap<String, u64>,
    backoffs: u64,
    clamped: u64,
    final_l1: Option<String>,
}

fn cmd_trace(path: &Path) -> ExitCode {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) => return fail(BAD_INPUT, format!("{}: {e}", path.display())),
    };
    let mut s = TraceSummary::default();
    let mut comps = std::collections::BTreeSet::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = match line {
            Ok(l) if l.trim().is_empty() => continue,
            Ok(l) => l,
            Err(e) => return fail(BAD_INPUT, e),
        };
        let v: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => return fail(BAD_INPUT, format!("line {}: {e}", k + 1)),
        };
        s.lines += 1;
        comps.insert(v["component"].as_u64().unwrap_or(0));
        match v["kind"].as_str() {
            Some("XMAX") => s.xmax_iterations += 1,
            _ => s.balancing_iterations += 1,
        }
        if let Some(b) = v["binding"].as_str() {
            *s.bindings.entry(b.to_string()).or_default() += 1;
        }
        s.backoffs += v["backoff"].as_u64().unwrap_or(0);
        s.clamped += v["clamped"].as_bool().unwrap_or(false) as u64;
        s.final_l1 = v["l1_after"].as_str().map(str::to_string);
    }
    s.components = comps.len();
    let _ = write_json(&s, None);
    ExitCode::from(OK)
}

#[derive(Serialize)]
struct BatchLine {
    name: String,
    verified: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prices: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn batch_line(name: String, market: Result<Market, String>, config: &SolverConfig) -> BatchLine {
    let result = market.and_then(|m| solve(&m, config).map_err(|e| e.to_string()));
    match result {
        Ok(sol) => BatchLine {
            name,
            verified: sol.report.is_equilibrium(),
            iterations: Some(sol.iterations()),
            prices: Some(sol.prices.iter().map(|p| p.to_string()).collect()),
            error: None,
        },
        Err(e) => BatchLine { name, verified: false, iterations: None, prices: None, error: Some(e) },
    }
}

fn print_lines(lines: &[BatchLine]) -> ExitCode {
    for l in lines {
        println!("{}", serde_json::to_string(l).expect("serializable"));
    }
    let bad = lines.iter().filter(|l| !l.verified).count();
    eprintln!("{} of {} verified", lines.len() - bad, lines.len());
    ExitCode::from(if bad == 0 { OK } else { UNVERIFIED })
}

fn cmd_batch(files: &[PathBuf], solver: &SolverArgs, jobs: Option<usize>) -> ExitCode {
    let config = match solver.config(false) {
        Ok(c) => SolverConfig { execution: Execution::Sequential, ..c },
        Err(e) => return fail(BAD_INPUT, e),
    };
    let lines = with_threads(jobs, || {
        map_items(Execution::Parallel, files, |p| {
            let market = read_instance(p).map(|(_, m)| m).map_err(|e| e.to_string());
            batch_line(p.display().to_string(), market, &config)
        })
    });
    print_lines(&lines)
}

fn cmd_fuzz(n: usize, umax: u64, count: u64, seed: u64, solver: &SolverArgs, jobs: Option<usize>) -> ExitCode {
    if n == 0 || umax == 0 {
        return fail(BAD_INPUT, "--n and --umax must be at least 1");
    }
    let config = match solver.config(false) {
        Ok(c) => SolverConfig { execution: Execution::Sequential, ..c },
        Err(e) => return fail(BAD_INPUT, e),
    };
    let seeds: Vec<u64> = (seed..seed + count).collect();
    let lines = with_threads(jobs, || {
        map_items(Execution::Parallel, &seeds, |&s| {
            let m = generate(&GenArgs { n, umax, seed: s, irreducible: true, out: None });
            batch_line(format!("seed {s}"), Ok(m), &config)
        })
    });
    print_lines(&lines)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Verify { instance, solution } => cmd_verify(instance, solution),
        Command::Gen(args) => cmd_gen(args),
        Command::Trace { path } => cmd_trace(path),
        Command::Batch { files, solver, jobs } => cmd_batch(files, solver, *jobs),
        Command::Fuzz { n, umax, count, seed, solver, jobs } => cmd_fuzz(*n, *umax, *count, *seed, solver, *jobs),
    }
}
