//! The `belief-probe` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input, 2 I/O failure, 3 node capacity
//! exceeded. `--horizon` and `--budget` override the problem file.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::ams::{AmsPlanner, SampleSchedule};
use crate::belief::{belief_key, BeliefState};
use crate::exact::{max_probability, solve_exact, PolicyEntry, PolicyMap};
use crate::model::{load_problem, validate_spec, ClassificationSpec, ModelFamily, ProblemError};
use crate::sim::{self, AmsController, ExactController};
use crate::unfold::{stats, unfold_with, write_dump, UnfoldError, UnfoldOptions, DEFAULT_MAX_NODES};

/// `println!` that stays quiet when stdout is closed early (e.g. piped to `head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Capacity(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
            CliError::Capacity(_) => 3,
        }
    }
}

impl From<ProblemError> for CliError {
    fn from(e: ProblemError) -> Self {
        match e {
            ProblemError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<UnfoldError> for CliError {
    fn from(e: UnfoldError) -> Self {
        CliError::Capacity(e.to_string())
    }
}

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "belief-probe", version, about = "Cost-bounded active classification of hidden-model MDPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a problem file and list every violation
    Validate { problem: PathBuf },
    /// Build the belief MDP and print its size
    Unfold {
        #[command(flatten)]
        common: Common,
        /// Write the adjacency-list dump here
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Solve exactly by unfolding and backward induction
    SolveExact(ExactArgs),
    /// Estimate with adaptive multi-stage sampling
    SolveAms(AmsArgs),
    /// Solve with either method
    Solve {
        #[arg(long, value_enum)]
        method: Method,
        #[command(flatten)]
        exact: ExactArgs,
        #[command(flatten)]
        ams: AmsKnobs,
    },
    /// Monte-Carlo success rate of a policy
    Simulate(SimulateArgs),
    /// Probability and run time across horizons, methods and seeds (CSV)
    Sweep(SweepArgs),
    /// Exact vs sampling run times per horizon
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Ams,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Ams => "ams",
        }
    }
}

#[derive(Debug, Args)]
pub struct Common {
    pub problem: PathBuf,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_NODES)]
    pub max_nodes: usize,
}

#[derive(Debug, Args)]
pub struct ExactArgs {
    #[command(flatten)]
    pub common: Common,
    /// Write the policy as JSON here
    #[arg(long)]
    pub policy_out: Option<PathBuf>,
    /// Write the value table as CSV here
    #[arg(long)]
    pub values_out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct AmsKnobs {
    /// Uniform samples per stage
    #[arg(long, default_value_t = 300)]
    pub samples: usize,
    /// Per-stage samples N_0,...,N_H (overrides --samples)
    #[arg(long, value_delimiter = ',')]
    pub schedule: Option<Vec<usize>>,
    #[arg(long, env = "BELIEF_PROBE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Disable memoization of stage estimates
    #[arg(long)]
    pub no_cache: bool,
}

impl AmsKnobs {
    fn schedule(&self, family: &ModelFamily, horizon: usize) -> Result<SampleSchedule, CliError> {
        let schedule = match &self.schedule {
            Some(counts) => SampleSchedule::new(counts.clone()),
            None => SampleSchedule::uniform(self.samples, horizon),
        };
        schedule
            .validate(family.num_actions(), horizon)
            .map_err(|e| CliError::Invalid(e.to_string()))?;
        Ok(schedule)
    }
}

#[derive(Debug, Args)]
pub struct AmsArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub knobs: AmsKnobs,
    /// Write the root action as a one-entry policy here
    #[arg(long)]
    pub policy_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Policy JSON from solve-exact
    #[arg(long, required_unless_present = "ams")]
    pub policy: Option<PathBuf>,
    /// Act with the sampling planner instead of a policy file
    #[arg(long)]
    pub ams: bool,
    #[command(flatten)]
    pub knobs: AmsKnobs,
    #[arg(long, default_value_t = 10_000)]
    pub episodes: usize,
    /// Write every trajectory as JSON lines here
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// Horizons as `a..b` (inclusive) or a comma list
    #[arg(long, default_value = "1..6")]
    pub horizons: String,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "exact,ams")]
    pub methods: Vec<Method>,
    /// Number of sampling seeds, counted up from --seed
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[command(flatten)]
    pub knobs: AmsKnobs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Leave the runtime column empty so output is byte-stable
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "1..6")]
    pub horizons: String,
    #[command(flatten)]
    pub knobs: AmsKnobs,
}

fn load(common: &Common) -> Result<(ModelFamily, ClassificationSpec), CliError> {
    let (family, mut spec) = load_problem(&common.problem)?;
    if let Some(h) = common.horizon {
        spec.horizon = h;
    }
    if let Some(d) = common.budget {
        spec.budget = d;
    }
    let report = validate_spec(&family, &spec);
    if !report.is_valid() {
        return Err(CliError::Invalid(report.to_string()));
    }
    Ok((family, spec))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Parses `a..b` (inclusive), a comma list, or an empty string.
pub fn parse_horizons(text: &str) -> Result<Vec<usize>, CliError> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let bad = || CliError::Invalid(format!("cannot parse horizons {text:?}"));
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        return Ok((lo..=hi).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect()
}

pub fn cmd_validate(path: &Path) -> Result<(), CliError> {
    load_problem(path)?;
    out!("ok");
    Ok(())
}

fn cmd_unfold(common: &Common, dump: Option<&Path>) -> Result<(), CliError> {
    let (family, spec) = load(common)?;
    let mdp = unfold_with(&family, &spec, &UnfoldOptions { max_nodes: common.max_nodes })?;
    let s = stats(&mdp);
    out!("nodes {}", s.nodes);
    out!("transitions {}", s.transitions);
    out!("interior {}", s.interior_nodes);
    out!("unsafe {}", s.unsafe_nodes);
    for (v, count) in s.goal_by_value.iter().enumerate() {
        out!("goal {} {count}", family.attribute_space.target().values[v]);
    }
    for (d, count) in s.depth_histogram.iter().enumerate() {
        out!("depth {d} {count}");
    }
    if let Some(path) = dump {
        let mut w = create(path)?;
        write_dump(&mdp, &mut w).and_then(|_| w.flush()).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

pub fn cmd_solve_exact(args: &ExactArgs) -> Result<f64, CliError> {
    let (family, spec) = load(&args.common)?;
    let start = Instant::now();
    let mdp = unfold_with(&family, &spec, &UnfoldOptions { max_nodes: args.common.max_nodes })?;
    let (table, policy) = solve_exact(&mdp, &spec).expect("horizons agree by construction");
    let value = max_probability(&table, &mdp);
    let elapsed = start.elapsed().as_secs_f64();
    out!("{value:.6}");
    eprintln!("nodes {} transitions {} time {elapsed:.3}s", mdp.len(), mdp.transition_count());
    if let Some(path) = &args.policy_out {
        write_text(path, &policy.to_map(&mdp).to_json())?;
    }
    if let Some(path) = &args.values_out {
        let mut w = create(path)?;
        table.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(path, e))?;
    }
    Ok(value)
}

pub fn cmd_solve_ams(args: &AmsArgs) -> Result<f64, CliError> {
    let (family, spec) = load(&args.common)?;
    let schedule = args.knobs.schedule(&family, spec.horizon)?;
    let mut planner = AmsPlanner::new(schedule, args.knobs.seed, !args.knobs.no_cache);
    let start = Instant::now();
    let value = planner.estimate_root(&family, &spec);
    let elapsed = start.elapsed().as_secs_f64();
    let root = BeliefState::initial(&family);
    let choice = planner.extract_action(&family, &spec, &root, 0.0, 0);
    out!("{value:.6}");
    eprintln!(
        "root action {} cached {} time {elapsed:.3}s",
        family.actions[choice.action],
        planner.cache.len()
    );
    if let Some(path) = &args.policy_out {
        let map = if choice.terminal || spec.horizon == 0 {
            PolicyMap::default()
        } else {
            PolicyMap::from_entries([PolicyEntry {
                node_key: belief_key(&root, 0.0),
                remaining_steps: spec.horizon,
                action: choice.action,
            }])
        };
        write_text(path, &map.to_json())?;
    }
    Ok(value)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<sim::SuccessReport, CliError> {
    let (family, spec) = load(&args.common)?;
    let trajectories = if args.ams {
        let schedule = args.knobs.schedule(&family, spec.horizon)?;
        let mut planner = AmsPlanner::new(schedule, args.knobs.seed, !args.knobs.no_cache);
        let mut c = AmsController { planner: &mut planner };
        sim::run_episodes(&family, &spec, &mut c, args.episodes, args.knobs.seed)
    } else {
        let path = args.policy.as_ref().expect("clap enforces --policy");
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let map = PolicyMap::from_json(&text)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        let mut c = ExactController { policy: &map };
        sim::run_episodes(&family, &spec, &mut c, args.episodes, args.knobs.seed)
    }
    .map_err(|e| CliError::Invalid(e.to_string()))?;
    if let Some(path) = &args.trajectories {
        let mut w = create(path)?;
        for t in &trajectories {
            serde_json::to_writer(&mut w, t).map_err(|e| CliError::Io(e.to_string()))?;
            writeln!(w).map_err(|e| io_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))?;
    }
    let report = sim::SuccessReport::from_trajectories(&trajectories);
    out!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub horizon: usize,
    pub method: Method,
    pub probability: Option<f64>,
    pub runtime_s: Option<f64>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub horizons: Vec<usize>,
    pub methods: Vec<Method>,
    pub seeds: u64,
    pub knobs: AmsKnobs,
    pub max_nodes: usize,
}

/// One row per (horizon, method, seed), sorted in that order.
pub fn run_sweep(family: &ModelFamily, spec: &ClassificationSpec, config: &SweepConfig) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for &h in &config.horizons {
        let spec = spec.with_horizon(h);
        for &method in &config.methods {
            match method {
                Method::Exact => {
                    let start = Instant::now();
                    let result = unfold_with(family, &spec, &UnfoldOptions { max_nodes: config.max_nodes })
                        .map(|mdp| {
                            let (table, _) = solve_exact(&mdp, &spec).expect("same horizon");
                            max_probability(&table, &mdp)
                        });
                    let runtime = start.elapsed().as_secs_f64();
                    rows.push(SweepRow {
                        horizon: h,
                        method,
                        probability: result.as_ref().ok().copied(),
                        runtime_s: Some(runtime),
                        seed: None,
                        samples: None,
                        error: result.err().map(|e| e.to_string()),
                    });
                }
                Method::Ams => {
                    for j in 0..config.seeds {
                        let seed = config.knobs.seed + j;
                        let samples = config.knobs.schedule.as_ref().map_or(config.knobs.samples, |s| s[0]);
                        let row = match config.knobs.schedule(family, h) {
                            Ok(schedule) => {
                                let mut planner = AmsPlanner::new(schedule, seed, !config.knobs.no_cache);
                                let start = Instant::now();
                                let value = planner.estimate_root(family, &spec);
                                SweepRow {
                                    horizon: h,
                                    method,
                                    probability: Some(value),
                                    runtime_s: Some(start.elapsed().as_secs_f64()),
                                    seed: Some(seed),
                                    samples: Some(samples),
                                    error: None,
                                }
                            }
                            Err(e) => SweepRow {
                                horizon: h,
                                method,
                                probability: None,
                                runtime_s: None,
                                seed: Some(seed),
                                samples: Some(samples),
                                error: Some(e.to_string()),
                            },
                        };
                        rows.push(row);
                    }
                }
            }
        }
    }
    rows.sort_by_key(|r| (r.horizon, r.method, r.seed));
    rows
}

/// Header `horizon,method,probability,runtime_s,seed,samples,error`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W, timing: bool) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["horizon", "method", "probability", "runtime_s", "seed", "samples", "error"])
        .map_err(|e| CliError::Io(e.to_string()))?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in rows {
        out.write_record([
            r.horizon.to_string(),
            r.method.name().to_string(),
            opt(r.probability.map(|p| p.to_string())),
            if timing { opt(r.runtime_s.map(|t| format!("{t:.6}"))) } else { String::new() },
            opt(r.seed.map(|s| s.to_string())),
            opt(r.samples.map(|s| s.to_string())),
            opt(r.error.clone()),
        ])
        .map_err(|e| CliError::Io(e.to_string()))?;
    }
    out.flush().map_err(|e| CliError::Io(e.to_string()))
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let (family, spec) = load(&args.common)?;
    let config = SweepConfig {
        horizons: parse_horizons(&args.horizons)?,
        methods: args.methods.clone(),
        seeds: args.seeds,
        knobs: args.knobs.clone(),
        max_nodes: args.common.max_nodes,
    };
    let rows = run_sweep(&family, &spec, &config);
    match &args.out {
        Some(path) => {
            let w = create(path)?;
            write_sweep_csv(&rows, w, !args.no_timing)
        }
        None => write_sweep_csv(&rows, io::stdout().lock(), !args.no_timing),
    }
}

fn cmd_bench(args: &BenchArgs) -> Result<(), CliError> {
    let (family, spec) = load(&args.common)?;
    let config = SweepConfig {
        horizons: parse_horizons(&args.horizons)?,
        methods: vec![Method::Exact, Method::Ams],
        seeds: 1,
        knobs: args.knobs.clone(),
        max_nodes: args.common.max_nodes,
    };
    let rows = run_sweep(&family, &spec, &config);
    out!("{:>3} {:>12} {:>12} {:>10} {:>10}", "H", "exact_s", "ams_s", "exact_p", "ams_p");
    for h in &config.horizons {
        let pick = |m| rows.iter().find(|r| r.horizon == *h && r.method == m);
        let fmt_t = |r: Option<&SweepRow>| r.and_then(|r| r.runtime_s).map_or("-".into(), |t| format!("{t:.4}"));
        let fmt_p = |r: Option<&SweepRow>| r.and_then(|r| r.probability).map_or("-".into(), |p| format!("{p:.6}"));
        let (e, a) = (pick(Method::Exact), pick(Method::Ams));
        out!("{h:>3} {:>12} {:>12} {:>10} {:>10}", fmt_t(e), fmt_t(a), fmt_p(e), fmt_p(a));
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { problem } => cmd_validate(&problem),
        Command::Unfold { common, dump } => cmd_unfold(&common, dump.as_deref()),
        Command::SolveExact(args) => cmd_solve_exact(&args).map(|_| ()),
        Command::SolveAms(args) => cmd_solve_ams(&args).map(|_| ()),
        Command::Solve { method, exact, ams } => match method {
            Method::Exact => cmd_solve_exact(&exact).map(|_| ()),
            Method::Ams => cmd_solve_ams(&AmsArgs {
                common: exact.common,
                knobs: ams,
                policy_out: exact.policy_out,
            })
            .map(|_| ()),
        },
        Command::Simulate(args) => cmd_simulate(&args).map(|_| ()),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Bench(args) => cmd_bench(&args),
    }
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
