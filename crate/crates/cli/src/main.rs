use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use hmat_dag::accumulator::{hlu_accu, AccumulatorMap};
use hmat_dag::bench::{self, timed_build, BenchConfig};
use hmat_dag::arith::{hlu, lu_residual};
use hmat_dag::executor::{execute, ExecReport, LuOperands};
use hmat_dag::hmatrix::{rel_error, Ctx, HMatrix, TruncationPolicy};
use hmat_dag::problems::{Problem, ProblemKind};
use hmat_dag::taskgraph::{DagConfig, DagStats, Mode, SparsifyStrategy, TaskGraph};

const AFTER_HELP: &str = "\
CSV output (--csv PATH appends one row, writing the header if the file is empty):
  dag    n,mode,nodes,edges,build_ms
  run    n,mode,workers,exec_ms,tasks,truncations
  bench  n,mode,workers,phase,repeats,median_ms,min_ms,max_ms

--config PATH reads defaults from a file with one key=value per line, keys
being long flag names (e.g. problem=sphere, n=4096, sparsify=true). Flags on
the command line take precedence. Lines starting with # are ignored.";

#[derive(Parser, Debug)]
#[command(name = "hmat-dag", version, about = "Task graphs for H-matrix LU factorization")]
#[command(args_override_self = true, after_help = AFTER_HELP)]
struct Cli {
    /// key=value file with default flag values
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Build the task graph and print its size
    #[command(after_help = AFTER_HELP)]
    Dag(DagArgs),
    /// Build and execute the task graph, optionally verifying the factors
    #[command(after_help = AFTER_HELP)]
    Run(RunArgs),
    /// Time graph construction (and execution) over several repeats
    #[command(after_help = AFTER_HELP)]
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Model problem: sphere, 1d or nd
    #[arg(long, default_value = "1d")]
    problem: ProblemKind,
    /// Number of unknowns (for nd, rounded to a cube)
    #[arg(long, default_value_t = 1024)]
    n: usize,
    /// std, accu-combined or accu-merged
    #[arg(long, default_value = "std")]
    mode: Mode,
    /// Remove edges implied by short alternative paths
    #[arg(long)]
    sparsify: bool,
    /// Longest alternative path considered by --sparsify (0 = unlimited)
    #[arg(long, default_value_t = 2)]
    max_path_len: usize,
    /// Worker threads for graph construction and execution
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Blocks with min(rows, cols) <= this are not refined
    #[arg(long, default_value_t = 0)]
    stop_size: usize,
    /// Sparsification update scheme
    #[arg(long, value_enum, default_value_t = Strategy::Snapshot)]
    strategy: Strategy,
    /// Leaf size of the cluster tree
    #[arg(long, default_value_t = 32)]
    leaf_size: usize,
    /// Diagonal shift factor c (adds c*n to the diagonal)
    #[arg(long, default_value_t = 0.5)]
    shift: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Strategy {
    Snapshot,
    Locked,
}

#[derive(Args, Debug)]
struct DagArgs {
    #[command(flatten)]
    common: Common,
    /// Write the graph in DOT format
    #[arg(long, value_name = "PATH")]
    dot: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
    /// Write the point coordinates as CSV
    #[arg(long, value_name = "PATH")]
    geometry: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// exact, eps=<v> or rank=<k>
    #[arg(long, default_value = "exact")]
    policy: TruncationPolicy,
    /// Compare against the sequential recursive factorization
    #[arg(long)]
    verify: bool,
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "exact")]
    policy: TruncationPolicy,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Also time execution of the graph
    #[arg(long)]
    exec: bool,
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
}

impl Common {
    fn validate(&self) -> std::result::Result<(), clap::Error> {
        let usage = |msg: &str| Err(Cli::command().error(clap::error::ErrorKind::ArgumentConflict, msg));
        if self.sparsify && self.mode == Mode::AccuCombined {
            return usage("--sparsify cannot be used with --mode accu-combined");
        }
        if self.workers == 0 {
            return usage("--workers must be at least 1");
        }
        Ok(())
    }

    fn problem(&self) -> Result<Problem> {
        Problem::with_leaf_size(self.problem, self.n, self.shift, self.leaf_size)
            .with_context(|| format!("building the {} problem", self.problem))
    }

    fn dag_config(&self) -> DagConfig {
        DagConfig {
            mode: self.mode,
            stop_size: self.stop_size,
            sparsify: self.sparsify,
            max_path_len: self.max_path_len,
            strategy: match self.strategy {
                Strategy::Snapshot => SparsifyStrategy::Snapshot,
                Strategy::Locked => SparsifyStrategy::Locked,
            },
            ..DagConfig::default()
        }
    }

    fn build(&self, p: &Problem) -> Result<(TaskGraph, f64)> {
        Ok(timed_build(p, &self.dag_config(), self.workers)?)
    }
}

fn append_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    if f.metadata()?.len() == 0 {
        writeln!(f, "{header}")?;
    }
    for r in rows {
        writeln!(f, "{r}")?;
    }
    Ok(())
}

fn cmd_dag(a: &DagArgs) -> Result<bool> {
    let p = a.common.problem()?;
    let (g, ms) = a.common.build(&p)?;
    let stats = DagStats { n: p.n, mode: g.mode(), nodes: g.len(), edges: g.num_edges(), build_ms: ms };
    println!("nodes={} edges={} build_ms={:.3}", stats.nodes, stats.edges, stats.build_ms);
    if let Some(path) = &a.dot {
        std::fs::write(path, g.to_dot(&p.blocks)).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &a.csv {
        append_csv(path, DagStats::CSV_HEADER, &[stats.to_csv_row()])?;
    }
    if let Some(path) = &a.geometry {
        let Some(geo) = &p.geometry else { bail!("the {} problem has no point geometry", p.kind) };
        std::fs::write(path, geo.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(true)
}

/// Factors by the sequential recursive routine matching the graph mode.
fn oracle(a: &HMatrix, mode: Mode, policy: TruncationPolicy) -> Result<LuOperands> {
    let ops = LuOperands::new(a.clone());
    let ctx = Ctx::new(policy);
    let root = a.tree().root();
    if mode == Mode::Std {
        hlu(&ops.a, &ops.l, &ops.u, root, &ctx)?;
    } else {
        let accs = AccumulatorMap::new(a.tree().clone());
        hlu_accu(&ops.a, &ops.l, &ops.u, root, &accs, &ctx)?;
    }
    Ok(ops)
}

/// Checks the factors in `ops` against the original matrix `a`.
fn verify(a: &HMatrix, ops: &LuOperands, mode: Mode, policy: TruncationPolicy) -> Result<bool> {
    let resid = lu_residual(a, &ops.l, &ops.u);
    println!("residual={resid:.3e}");
    match policy {
        TruncationPolicy::Exact => {
            let r = oracle(a, mode, policy)?;
            let el = rel_error(&r.l.to_dense(), &ops.l.to_dense());
            let eu = rel_error(&r.u.to_dense(), &ops.u.to_dense());
            println!("rel_error_l={el:.3e} rel_error_u={eu:.3e} tolerance=1e-10");
            Ok(el <= 1e-10 && eu <= 1e-10)
        }
        TruncationPolicy::FixedAccuracy(eps) => {
            println!("tolerance={:.3e}", 100.0 * eps);
            Ok(resid <= 100.0 * eps)
        }
        TruncationPolicy::FixedRank(_) => Ok(resid.is_finite()),
    }
}

fn cmd_run(a: &RunArgs) -> Result<bool> {
    let c = &a.common;
    let p = c.problem()?;
    let (g, ms) = c.build(&p)?;
    println!("nodes={} edges={} build_ms={ms:.3}", g.len(), g.num_edges());
    let a0 = HMatrix::assemble(p.blocks.clone(), p.kernel(), a.policy);
    let ops = LuOperands::new(a0.clone());
    let ctx = Ctx::new(a.policy);
    let rep = execute(&g, &ops, c.workers, &ctx)?;
    println!("tasks={} exec_ms={:.3} truncations={}", rep.tasks, rep.exec_ms, rep.truncations);
    if let Some(path) = &a.csv {
        append_csv(path, ExecReport::CSV_HEADER, &[rep.to_csv_row()])?;
    }
    if !a.verify {
        return Ok(true);
    }
    let ok = verify(&a0, &ops, c.mode, a.policy)?;
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}

fn cmd_bench(a: &BenchArgs) -> Result<bool> {
    let c = &a.common;
    if a.repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let p = c.problem()?;
    let cfg = BenchConfig {
        dag: c.dag_config(),
        workers: c.workers,
        repeats: a.repeats,
        exec: a.exec.then_some(a.policy),
    };
    let rows = bench::run(&p, &cfg)?.csv_rows();
    println!("{}", bench::CSV_HEADER);
    for r in &rows {
        println!("{r}");
    }
    if let Some(path) = &a.csv {
        append_csv(path, bench::CSV_HEADER, &rows)?;
    }
    Ok(true)
}

/// Inserts `--key value` flags read from the `--config` file right after the
/// subcommand, so that explicit flags, which come later, override them.
fn expand_config(mut argv: Vec<String>) -> Result<Vec<String>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if a == "--config" {
            path = argv.get(i + 1).cloned();
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let mut flags = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{path}:{}: expected key=value", k + 1);
        };
        let (key, value) = (key.trim().replace('_', "-"), value.trim());
        match value {
            "true" => flags.push(format!("--{key}")),
            "false" => {}
            _ => flags.extend([format!("--{key}"), value.to_string()]),
        }
    }
    let Some(sub) = argv.iter().position(|a| matches!(a.as_str(), "dag" | "run" | "bench")) else {
        return Ok(argv);
    };
    argv.splice(sub + 1..sub + 1, flags);
    Ok(argv)
}

fn main() -> ExitCode {
    let argv = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(argv);
    let common = match &cli.cmd {
        Cmd::Dag(a) => &a.common,
        Cmd::Run(a) => &a.common,
        Cmd::Bench(a) => &a.common,
    };
    if let Err(e) = common.validate() {
        e.exit();
    }
    let res = match &cli.cmd {
        Cmd::Dag(a) => cmd_dag(a),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Bench(a) => cmd_bench(a),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
