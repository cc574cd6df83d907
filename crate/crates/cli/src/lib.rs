//! `fslhd` command-line tool: construct, optimize, evaluate, compare and plot
//! sliced Latin hypercube designs with arbitrary slice sizes.
//!
//! Row, slice and dimension numbers are 1-based on the command line and in
//! every file this tool writes.

pub mod io;
pub mod plot;

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fslhd::construction::generate_level_matrix;
use fslhd::criteria::{
    cd2, csm, min_intersite_distance, phi_t, CriterionConfig, CriterionKind, CriterionValue,
};
use fslhd::design::{DesignMatrix, JitterMode, LevelMatrix, SliceSpec};
use fslhd::sese::{sese_optimize, OptimizeError, SeseParams};
use fslhd::twopart::{self, should_skip_part2, TwoPartParams};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed input: {0}")]
    Format(String),
    #[error("structure: violated ({0})")]
    Structure(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 1 for usage and configuration errors, 2 for I/O and unreadable
    /// input, 3 for structure violations under `--strict`.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io { .. } | CliError::Format(_) => 2,
            CliError::Structure(_) => 3,
        }
    }
}

impl From<OptimizeError> for CliError {
    fn from(e: OptimizeError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "fslhd",
    version,
    about = "Sliced Latin hypercube designs with arbitrary slice sizes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random design.
    Construct(ConstructArgs),
    /// Optimize a random or given design.
    Optimize(OptimizeArgs),
    /// Report criteria and structure of a design file.
    Eval(EvalArgs),
    /// Compare optimizers against random designs.
    Compare(CompareArgs),
    /// Draw a 2-D projection as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SpecArgs {
    /// Run sizes of the slices, e.g. 4,8,12.
    #[arg(long, value_delimiter = ',', required = true)]
    pub slices: Vec<usize>,
    /// Number of factors (columns).
    #[arg(long)]
    pub factors: usize,
}

impl SpecArgs {
    fn spec(&self) -> Result<SliceSpec, CliError> {
        SliceSpec::new(self.slices.clone(), self.factors).map_err(usage)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CriterionArg {
    PhiT,
    Cd2,
}

#[derive(Debug, Args)]
pub struct CriterionArgs {
    #[arg(long, value_enum, default_value = "phi-t")]
    pub criterion: CriterionArg,
    /// Exponent t of the φ_t criterion.
    #[arg(long, default_value_t = 50)]
    pub t: u32,
    /// Distance: 1 rectangular, 2 Euclidean.
    #[arg(long = "dist-power", default_value_t = 2)]
    pub dist_power: u32,
    /// Weight of the whole design in the combined criterion.
    #[arg(long, default_value_t = 0.5)]
    pub weight: f64,
}

impl CriterionArgs {
    fn config(&self) -> Result<CriterionConfig, CliError> {
        let kind = match self.criterion {
            CriterionArg::PhiT => CriterionKind::PhiT,
            CriterionArg::Cd2 => CriterionKind::Cd2,
        };
        CriterionConfig::new(kind, self.t, self.dist_power, self.weight).map_err(usage)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum JitterArg {
    Midpoint,
    Uniform,
}

impl From<JitterArg> for JitterMode {
    fn from(j: JitterArg) -> Self {
        match j {
            JitterArg::Midpoint => JitterMode::Midpoint,
            JitterArg::Uniform => JitterMode::Uniform,
        }
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Design CSV; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Also write the integer level matrix.
    #[arg(long)]
    pub levels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "midpoint")]
    pub jitter: JitterArg,
}

#[derive(Debug, Args)]
pub struct ConstructArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutputArgs,
    /// JSON record of the run.
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    #[command(flatten)]
    pub criterion: CriterionArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Sese,
    Part1,
    Twopart,
    None,
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    /// Inner-loop length P of the evolutionary optimizer (at most 100).
    #[arg(long, default_value_t = 20)]
    pub inner_iters: usize,
    /// Outer-loop cycles N of the evolutionary optimizer.
    #[arg(long, default_value_t = 10)]
    pub outer_iters: usize,
    /// Greedy proposals per slice in part I.
    #[arg(long, default_value_t = 100)]
    pub part1_iters: usize,
    /// Greedy proposals per slice in part II.
    #[arg(long, default_value_t = 100)]
    pub part2_iters: usize,
    /// Cap on de-duplication proposals per slice.
    #[arg(long, default_value_t = 1000)]
    pub dedup_attempts: usize,
    /// Skip part II when every slice grid is sparse enough.
    #[arg(long)]
    pub auto_skip: bool,
}

impl BudgetArgs {
    fn sese(&self, seed: u64) -> SeseParams {
        SeseParams {
            inner_iters: self.inner_iters,
            outer_iters: self.outer_iters,
            seed,
            ..Default::default()
        }
    }

    fn twopart(&self, seed: u64) -> TwoPartParams {
        TwoPartParams {
            part1_iters: self.part1_iters,
            part2_iters: self.part2_iters,
            dedup_attempts: self.dedup_attempts,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long, value_enum, default_value = "sese")]
    pub algorithm: Algorithm,
    /// Start from this level matrix instead of a random design.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Run sizes of the slices when no input is given.
    #[arg(long, value_delimiter = ',')]
    pub slices: Vec<usize>,
    /// Number of factors when no input is given.
    #[arg(long)]
    pub factors: Option<usize>,
    /// Seeds the random start design and the optimizer.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub budgets: BudgetArgs,
    #[command(flatten)]
    pub criterion: CriterionArgs,
    #[command(flatten)]
    pub out: OutputArgs,
    /// Optimizer trace, one JSON record per line.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// JSON summary of the run.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Design CSV.
    #[arg(long, short)]
    pub input: PathBuf,
    #[command(flatten)]
    pub criterion: CriterionArgs,
    /// Exit with status 3 if the design is not a sliced Latin hypercube.
    #[arg(long, alias = "check-structure")]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Random designs in the baseline.
    #[arg(long, default_value_t = 1000)]
    pub repeats: usize,
    /// Optimizer runs per algorithm, each from its own random start.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "sese")]
    pub algorithms: Vec<Algorithm>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub budgets: BudgetArgs,
    #[command(flatten)]
    pub criterion: CriterionArgs,
    /// Also write the table as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Design CSV.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Two 1-based dimensions to plot.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub dims: Vec<usize>,
    /// Overlay an n × n grid.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long, short)]
    pub output: PathBuf,
}

/// Seed of the optimizer's random stream, kept apart from the seed of the
/// initial design.
pub fn optimizer_seed(seed: u64) -> u64 {
    seed ^ 0x5DEE_CE66_D1CE_5EED
}

fn write_outputs(
    out: &OutputArgs,
    levels: &LevelMatrix,
    seed: u64,
) -> Result<DesignMatrix, CliError> {
    let design = levels.to_design(out.jitter.into(), seed);
    io::emit(out.output.as_deref(), |w| io::write_design(w, &design))?;
    if let Some(p) = &out.levels {
        io::emit(Some(p), |w| io::write_levels(w, levels))?;
    }
    Ok(design)
}

#[derive(Serialize)]
struct SpecRecord {
    slices: Vec<usize>,
    factors: usize,
    runs: usize,
    lcm: u64,
}

impl From<&SliceSpec> for SpecRecord {
    fn from(s: &SliceSpec) -> Self {
        Self {
            slices: s.slice_sizes().to_vec(),
            factors: s.factors(),
            runs: s.runs(),
            lcm: s.lcm(),
        }
    }
}

#[derive(Serialize)]
struct ConstructRecord {
    spec: SpecRecord,
    seed: u64,
    jitter: JitterMode,
    criterion: CriterionConfig,
    /// Absent when some slice is too small to score.
    value: Option<CriterionValue>,
}

pub fn cmd_construct(args: &ConstructArgs) -> Result<(), CliError> {
    let spec = args.spec.spec()?;
    let config = args.criterion.config()?;
    let levels = generate_level_matrix(&spec, args.seed);
    let design = write_outputs(&args.out, &levels, args.seed)?;
    if let Some(p) = &args.metadata {
        let record = ConstructRecord {
            spec: (&spec).into(),
            seed: args.seed,
            jitter: args.out.jitter.into(),
            criterion: config,
            value: csm(&design, &config).ok(),
        };
        io::write_json(p, &record)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct OptimizeSummary {
    spec: SpecRecord,
    algorithm: Algorithm,
    seed: u64,
    criterion: CriterionConfig,
    initial: CriterionValue,
    #[serde(rename = "final")]
    final_value: CriterionValue,
    #[serde(skip_serializing_if = "Option::is_none")]
    sese: Option<SeseParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    twopart: Option<TwoPartParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    repeat_free: Option<Vec<Option<bool>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dedup_incomplete: Option<bool>,
    part2_skipped: bool,
    accepted_moves: usize,
    wall_time_secs: f64,
}

/// Result of one optimizer run on one start design.
pub struct RunResult {
    pub levels: LevelMatrix,
    pub initial: CriterionValue,
    pub value: CriterionValue,
    pub repeat_free: Option<Vec<Option<bool>>>,
    pub dedup_incomplete: Option<bool>,
    pub part2_skipped: bool,
    pub accepted_moves: usize,
    /// JSON lines of the trace.
    pub trace: Vec<serde_json::Value>,
}

pub fn run_algorithm(
    algorithm: Algorithm,
    d0: &LevelMatrix,
    config: &CriterionConfig,
    budgets: &BudgetArgs,
    seed: u64,
) -> Result<RunResult, CliError> {
    match algorithm {
        Algorithm::Sese => {
            let out = sese_optimize(d0, config, &budgets.sese(seed))?;
            Ok(RunResult {
                accepted_moves: out.trace.records.iter().filter(|r| r.accepted).count(),
                trace: out.trace.records.iter().map(to_json).collect(),
                levels: out.levels,
                initial: out.initial,
                value: out.value,
                repeat_free: None,
                dedup_incomplete: None,
                part2_skipped: false,
            })
        }
        Algorithm::Part1 | Algorithm::Twopart => {
            let params = budgets.twopart(seed);
            let skip = algorithm == Algorithm::Part1
                || (budgets.auto_skip && should_skip_part2(d0.spec(), params.skip_ratio));
            let out = if skip {
                twopart::part1(d0, config, &params)?
            } else {
                twopart::two_part(d0, config, &params)?
            };
            Ok(RunResult {
                accepted_moves: out.steps.len(),
                trace: out.steps.iter().map(to_json).collect(),
                levels: out.levels,
                initial: out.initial,
                value: out.value,
                repeat_free: Some(out.repeat_free),
                dedup_incomplete: Some(out.dedup_incomplete),
                part2_skipped: algorithm == Algorithm::Twopart && skip,
            })
        }
        Algorithm::None => {
            let value = csm(&d0.to_design(JitterMode::Midpoint, 0), config).map_err(usage)?;
            Ok(RunResult {
                levels: d0.clone(),
                initial: value.clone(),
                value,
                repeat_free: None,
                dedup_incomplete: None,
                part2_skipped: false,
                accepted_moves: 0,
                trace: Vec::new(),
            })
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("trace records serialize")
}

pub fn cmd_optimize(args: &OptimizeArgs) -> Result<(), CliError> {
    let config = args.criterion.config()?;
    let d0 = match &args.input {
        Some(path) => {
            if !args.slices.is_empty() || args.factors.is_some() {
                return Err(usage(
                    "--input takes the slice sizes from the file; drop --slices/--factors",
                ));
            }
            io::read_levels(io::open(path)?)?
        }
        None => {
            let factors = args
                .factors
                .ok_or_else(|| usage("--factors is required without --input"))?;
            if args.slices.is_empty() {
                return Err(usage("--slices is required without --input"));
            }
            let spec = SliceSpec::new(args.slices.clone(), factors).map_err(usage)?;
            generate_level_matrix(&spec, args.seed)
        }
    };
    d0.check_structure()
        .map_err(|v| CliError::Structure(v.to_string()))?;
    let start = Instant::now();
    let run = run_algorithm(
        args.algorithm,
        &d0,
        &config,
        &args.budgets,
        optimizer_seed(args.seed),
    )?;
    let elapsed = start.elapsed().as_secs_f64();
    write_outputs(&args.out, &run.levels, args.seed)?;
    if let Some(p) = &args.trace {
        io::write_jsonl(p, &run.trace)?;
    }
    if let Some(p) = &args.summary {
        let summary = OptimizeSummary {
            spec: d0.spec().into(),
            algorithm: args.algorithm,
            seed: args.seed,
            criterion: config,
            initial: run.initial,
            final_value: run.value,
            sese: (args.algorithm == Algorithm::Sese)
                .then(|| args.budgets.sese(optimizer_seed(args.seed))),
            twopart: matches!(args.algorithm, Algorithm::Part1 | Algorithm::Twopart)
                .then(|| args.budgets.twopart(optimizer_seed(args.seed))),
            repeat_free: run.repeat_free,
            dedup_incomplete: run.dedup_incomplete,
            part2_skipped: run.part2_skipped,
            accepted_moves: run.accepted_moves,
            wall_time_secs: elapsed,
        };
        io::write_json(p, &summary)?;
    }
    Ok(())
}

/// Text report for `eval`.
pub fn eval_report(design: &DesignMatrix, config: &CriterionConfig) -> String {
    let spec = design.spec();
    let mut s = String::new();
    let fmt = |r: Result<f64, fslhd::criteria::CriterionError>| match r {
        Ok(v) => format!("{v:.10}"),
        Err(e) => format!("n/a ({e})"),
    };
    let _ = writeln!(s, "design: {}", spec.label());
    let (t, m) = (config.t(), config.dist_power());
    let _ = writeln!(s, "phi_t whole: {}", fmt(phi_t(design.whole(), t, m)));
    for i in 0..spec.num_slices() {
        let _ = writeln!(
            s,
            "phi_t slice {}: {}",
            i + 1,
            fmt(phi_t(design.slice(i), t, m))
        );
    }
    let _ = writeln!(
        s,
        "phi_csm: {}",
        fmt(csm(design, config).map(|v| v.combined))
    );
    let _ = writeln!(s, "cd2: {}", fmt(cd2(design.whole())));
    let _ = writeln!(
        s,
        "min distance: {}",
        fmt(min_intersite_distance(design.whole(), m))
    );
    match design.check_structure() {
        Ok(()) => s.push_str("structure: ok\n"),
        Err(v) => {
            let _ = writeln!(s, "structure: violated ({v})");
        }
    }
    s
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let config = args.criterion.config()?;
    let design = io::read_design(io::open(&args.input)?)?;
    let report = eval_report(&design, &config);
    print!("{report}");
    std::io::stdout().flush().ok();
    if args.strict {
        if let Err(v) = design.check_structure() {
            return Err(CliError::Structure(v.to_string()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub label: String,
    pub count: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    /// Sample standard deviation; 0 for a single value.
    pub sd: f64,
    pub avg_secs: f64,
}

impl Summary {
    pub fn of(label: impl Into<String>, values: &[f64], avg_secs: f64) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            label: label.into(),
            count: n,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            mean,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            sd: var.sqrt(),
            avg_secs,
        }
    }
}

/// `φ_CSM` of `repeats` random designs with seeds `seed, seed + 1, …`.
pub fn random_baseline(
    spec: &SliceSpec,
    config: &CriterionConfig,
    repeats: usize,
    seed: u64,
) -> Result<Vec<f64>, CliError> {
    (0..repeats as u64)
        .into_par_iter()
        .map(|i| {
            let d = generate_level_matrix(spec, seed.wrapping_add(i))
                .to_design(JitterMode::Midpoint, 0);
            csm(&d, config).map(|v| v.combined).map_err(usage)
        })
        .collect()
}

pub fn compare_table(args: &CompareArgs) -> Result<Vec<Summary>, CliError> {
    let spec = args.spec.spec()?;
    let config = args.criterion.config()?;
    if args.repeats == 0 || args.runs == 0 {
        return Err(usage("--repeats and --runs must be positive"));
    }
    let start = Instant::now();
    let random = random_baseline(&spec, &config, args.repeats, args.seed)?;
    let per = start.elapsed().as_secs_f64() / args.repeats as f64;
    let mut rows = vec![Summary::of("random", &random, per)];
    for &alg in &args.algorithms {
        // Starting designs are taken after the baseline seeds.
        let base = args.seed.wrapping_add(args.repeats as u64);
        let results: Vec<(f64, f64)> = (0..args.runs as u64)
            .into_par_iter()
            .map(|r| {
                let d0 = generate_level_matrix(&spec, base.wrapping_add(r));
                let t = Instant::now();
                let run = run_algorithm(
                    alg,
                    &d0,
                    &config,
                    &args.budgets,
                    optimizer_seed(base.wrapping_add(r)),
                )?;
                Ok((run.value.combined, t.elapsed().as_secs_f64()))
            })
            .collect::<Result<_, CliError>>()?;
        let values: Vec<f64> = results.iter().map(|r| r.0).collect();
        let secs = results.iter().map(|r| r.1).sum::<f64>() / results.len() as f64;
        let label = match alg {
            Algorithm::Sese => "sese",
            Algorithm::Part1 => "part1",
            Algorithm::Twopart => "part1+part2",
            Algorithm::None => "initial",
        };
        rows.push(Summary::of(label, &values, secs));
    }
    Ok(rows)
}

pub fn format_table(spec: &SliceSpec, rows: &[Summary]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:<22} {:>6} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "algorithm", "design", "count", "min", "mean", "max", "sd", "avg_secs"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<12} {:<22} {:>6} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            r.label,
            spec.label(),
            r.count,
            r.min,
            r.mean,
            r.max,
            r.sd,
            r.avg_secs
        );
    }
    s
}

pub fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    let rows = compare_table(args)?;
    print!("{}", format_table(&args.spec.spec()?, &rows));
    if let Some(p) = &args.json {
        io::write_json(p, &rows)?;
    }
    Ok(())
}

pub fn cmd_plot(args: &PlotArgs) -> Result<(), CliError> {
    let design = io::read_design(io::open(&args.input)?)?;
    let q = design.spec().factors();
    let [dx, dy] = args.dims[..] else {
        return Err(usage("--dims takes exactly two dimensions"));
    };
    if dx == 0 || dy == 0 || dx > q || dy > q {
        return Err(usage(format!("--dims must lie in 1..={q}")));
    }
    if args.grid == Some(0) {
        return Err(usage("--grid must be positive"));
    }
    let svg = plot::render_svg(&design, dx - 1, dy - 1, args.grid);
    io::emit(Some(&args.output), |w| w.write_all(svg.as_bytes()))
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Construct(a) => cmd_construct(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

/// Parses `args` (program name first) and runs; returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
