//! `seqweight`: run weighted gap and gap-intersection simulations, sweeps,
//! validation suites and threshold calibration.

mod config;

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seqweight_core::montecarlo::{self, write_plot_csv, write_results_csv, write_summary_csv, WEIGHTING_SCENARIOS};
use seqweight_core::oracle::{self, OracleReport};
use seqweight_core::{
    calibrate_gap, calibrate_gi, c_w, run_sweep, trace_replication, GIThresholds, GapThreshold, ProcedureKind,
    RunOptions, ScenarioResult, ScenarioSpec, WeightVector,
};

use config::{load_config, write_manifest};

const STAMP_FILE: &str = "validation.stamp";
const DESK_GRID: [usize; 2] = [100, 200];
const PAPER_GRID: [usize; 5] = [200, 250, 300, 350, 400];

#[derive(Parser)]
#[command(name = "seqweight", version, about, arg_required_else_help = true)]
struct Cli {
    /// Master seed; every random draw derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replications per scenario.
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "SEQWEIGHT_OUT", default_value = "seqweight-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the weighted gap procedure (known signal count).
    Gap(RunArgs),
    /// Simulate the weighted gap-intersection procedure (signal count in [l, u]).
    Gi(GiArgs),
    /// Run the four weighting scenarios over a grid of J, or a config file.
    Sweep(SweepArgs),
    /// Run the oracle and differential suites; exits 1 on any mismatch.
    Validate(ValidateArgs),
    /// Print thresholds for a given weight vector.
    Calibrate(CalibrateArgs),
}

/// Scenario flags. With `--config` they override every loaded section.
#[derive(Args, Clone, Default)]
struct ScenarioFlags {
    /// Scenario config file (`[name]` sections of `key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario name when no config is given.
    #[arg(long)]
    name: Option<String>,
    /// Number of streams.
    #[arg(long = "J", alias = "j")]
    j: Option<usize>,
    /// Number of signals (sets the signal fraction to m/J).
    #[arg(long, conflicts_with = "signal_fraction")]
    m: Option<usize>,
    /// Fraction of streams that are signals [default: 0.1].
    #[arg(long)]
    signal_fraction: Option<f64>,
    /// Alternative mean of the Gaussian streams [default: 0.15].
    #[arg(long)]
    mu: Option<f64>,
    /// Type-I level [default: 0.05].
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight informativeness: 1 uninformative, >1 informative, <1 misleading [default: 1].
    #[arg(long)]
    eta: Option<f64>,
    /// Weight strength, r >= 1; 1 gives unit weights [default: 1].
    #[arg(long)]
    r: Option<f64>,
    /// Per-replication safety cap [default: derived from the levels and mu].
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct OutputFlags {
    /// Also write per-replication results.csv.
    #[arg(long)]
    results: bool,
    /// Write the step-by-step trace of this replication of each scenario.
    #[arg(long, value_name = "REP")]
    trace: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioFlags,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Args)]
struct GiArgs {
    #[command(flatten)]
    scenario: ScenarioFlags,
    /// Type-II level [default: 0.05].
    #[arg(long)]
    beta: Option<f64>,
    /// Lower bound on the signal count.
    #[arg(long)]
    l: Option<usize>,
    /// Upper bound on the signal count.
    #[arg(long)]
    u: Option<usize>,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Args)]
struct SweepArgs {
    /// Scenario config file; replaces the built-in weighting sweep.
    #[arg(long, conflicts_with_all = ["paper_figure", "full_scale"])]
    config: Option<PathBuf>,
    /// Four weighting scenarios over the J grid, with plot data.
    #[arg(long)]
    paper_figure: bool,
    /// Use J in {200, 250, ..., 400} and 10000 replications instead of
    /// J in {100, 200} and 2000.
    #[arg(long)]
    full_scale: bool,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Args)]
struct ValidateArgs {
    /// Scale factor for trial counts.
    #[arg(long, default_value_t = 1)]
    scale: usize,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Type-I level.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Signal count for the gap threshold.
    #[arg(long, required_unless_present = "l")]
    m: Option<usize>,
    /// Number of streams; required with `--weights ones`.
    #[arg(long = "J", alias = "j")]
    j: Option<usize>,
    /// `ones`, a comma-separated list, or a `stream_index,weight` CSV file.
    #[arg(long, default_value = "ones")]
    weights: String,
    /// Type-II level (gap-intersection mode).
    #[arg(long, default_value_t = 0.05)]
    beta: f64,
    /// Lower count bound; enables gap-intersection mode.
    #[arg(long, requires = "u", conflicts_with = "m")]
    l: Option<usize>,
    /// Upper count bound.
    #[arg(long, requires = "l")]
    u: Option<usize>,
    /// Print a CSV header and row instead of text.
    #[arg(long)]
    csv: bool,
}

/// Failure classes, mapped to exit codes.
enum Failure {
    Validation(String),
    Config(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("validation failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::from(2)
        }
    }
}

fn one_line(e: &anyhow::Error) -> String {
    e.chain().map(|c| c.to_string()).collect::<Vec<_>>().join(": ")
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let options = RunOptions { workers: cli.workers };
    if cli.workers == Some(0) {
        return Err(anyhow!("--workers must be at least 1").into());
    }
    match &cli.command {
        Command::Gap(args) => {
            let specs = scenario_specs(&cli, &args.scenario, Some(ProcedureKind::Gap), None)?;
            run_and_write(&cli, &specs, options, &args.output, false)?;
        }
        Command::Gi(args) => {
            let procedure = match (args.l, args.u) {
                (Some(l), Some(u)) => Some(ProcedureKind::GapIntersection { l, u }),
                (None, None) => None,
                _ => return Err(anyhow!("--l and --u must be given together").into()),
            };
            if procedure.is_none() && args.scenario.config.is_none() {
                return Err(anyhow!("gi needs --l and --u (or a config that sets them)").into());
            }
            let specs = scenario_specs(&cli, &args.scenario, procedure, args.beta)?;
            if let Some(spec) = specs.iter().find(|s| s.procedure == ProcedureKind::Gap) {
                return Err(anyhow!("scenario [{}] has no l and u for gi", spec.name).into());
            }
            run_and_write(&cli, &specs, options, &args.output, false)?;
        }
        Command::Sweep(args) => {
            let specs = sweep_specs(&cli, args)?;
            run_and_write(&cli, &specs, options, &args.output, true)?;
        }
        Command::Validate(args) => validate(&cli, args)?,
        Command::Calibrate(args) => calibrate(args)?,
    }
    Ok(())
}

fn apply_globals(cli: &Cli, spec: &mut ScenarioSpec) {
    if let Some(seed) = cli.seed {
        spec.master_seed = seed;
    }
    if let Some(reps) = cli.reps {
        spec.reps = reps;
    }
}

fn scenario_specs(
    cli: &Cli,
    flags: &ScenarioFlags,
    procedure: Option<ProcedureKind>,
    beta: Option<f64>,
) -> Result<Vec<ScenarioSpec>> {
    let mut specs = match &flags.config {
        Some(path) => {
            let loaded = load_config(path)?;
            for note in &loaded.notes {
                info!("{note}");
            }
            loaded.specs
        }
        None => {
            let j = flags.j.context("--J is required without --config")?;
            let tag = procedure.map_or("gap", |p| p.tag());
            let name = flags.name.clone().unwrap_or_else(|| format!("{tag}-J{j}"));
            vec![ScenarioSpec::gap(name, j)]
        }
    };
    for spec in &mut specs {
        if let Some(j) = flags.j {
            spec.j = j;
        }
        if let Some(m) = flags.m {
            spec.signal_fraction = m as f64 / spec.j as f64;
        }
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(v) = flags.$field { spec.$field = v; })*};
        }
        set!(signal_fraction, mu, alpha, eta, r);
        if let Some(cap) = flags.max_steps {
            spec.max_steps = Some(cap);
        }
        if let Some(b) = beta {
            spec.beta = b;
        }
        if let Some(p) = procedure {
            spec.procedure = p;
        }
        apply_globals(cli, spec);
        if let Some(m) = flags.m {
            if spec.num_signals() != m {
                bail!("--m {m} is not representable with J = {}", spec.j);
            }
        }
    }
    for spec in &specs {
        spec.validate().with_context(|| format!("scenario [{}]", spec.name))?;
    }
    Ok(specs)
}

fn sweep_specs(cli: &Cli, args: &SweepArgs) -> Result<Vec<ScenarioSpec>> {
    let mut specs = match &args.config {
        Some(path) => {
            let loaded = load_config(path)?;
            for note in &loaded.notes {
                info!("{note}");
            }
            loaded.specs
        }
        None => {
            let (grid, reps): (&[usize], usize) =
                if args.full_scale { (&PAPER_GRID, 10_000) } else { (&DESK_GRID, 2000) };
            info!(
                "weighting sweep: {} scenarios x J in {grid:?}, {reps} reps",
                WEIGHTING_SCENARIOS.len()
            );
            montecarlo::weighting_sweep(grid, reps, 0)
        }
    };
    for spec in &mut specs {
        apply_globals(cli, spec);
        spec.validate().with_context(|| format!("scenario [{}]", spec.name))?;
    }
    Ok(specs)
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot write {}", path.display()))?,
    ))
}

fn run_and_write(
    cli: &Cli,
    specs: &[ScenarioSpec],
    options: RunOptions,
    output: &OutputFlags,
    plot: bool,
) -> Result<()> {
    let out = &cli.out;
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    let validated = out.join(STAMP_FILE).exists();
    if !validated {
        warn!("no {STAMP_FILE} in {}; run `seqweight validate` before trusting these results", out.display());
    }
    write_manifest(&out.join("manifest.txt"), specs, validated)?;
    let results = run_sweep(specs, options)?;
    print_summary(&results);

    let mut summary = create_file(&out.join("summary.csv"))?;
    write_summary_csv(&results, &mut summary)?;
    summary.flush()?;
    if output.results {
        let mut f = create_file(&out.join("results.csv"))?;
        write_results_csv(&results, &mut f)?;
        f.flush()?;
    }
    if plot {
        emit_plot_data(&results, &out.join("plot.csv"))?;
    }
    if let Some(rep) = output.trace {
        for spec in specs {
            if rep >= spec.reps as u64 {
                bail!("--trace {rep}: scenario [{}] has only {} reps", spec.name, spec.reps);
            }
            let path = out.join(format!("trace-{}-rep{rep}.csv", spec.name));
            let mut f = create_file(&path)?;
            trace_replication(spec, rep, &mut f)?;
            f.flush()?;
        }
    }
    info!("wrote results to {}", out.display());
    Ok(())
}

/// Writes the `J,scenario,ess,ess_se` plot table.
fn emit_plot_data(results: &[ScenarioResult], path: &Path) -> Result<()> {
    if results.is_empty() {
        bail!("no results to plot");
    }
    let mut f = create_file(path)?;
    write_plot_csv(results, &mut f)?;
    f.flush()?;
    Ok(())
}

fn print_summary(results: &[ScenarioResult]) {
    println!(
        "{:<24} {:>5} {:>4} {:>10} {:>8} {:>7} {:>7} {:>6} {:>6}",
        "scenario", "J", "m", "ess", "se", "fwe1", "fwe2", "cap", "ratio"
    );
    for r in results {
        println!(
            "{:<24} {:>5} {:>4} {:>10.2} {:>8.2} {:>7.4} {:>7.4} {:>6.4} {:>6.2}",
            r.spec.name, r.spec.j, r.m, r.ess.value, r.ess.se, r.fwe1.value, r.fwe2.value, r.cap_rate, r.optimality_ratio
        );
    }
}

fn validate(cli: &Cli, args: &ValidateArgs) -> Result<(), Failure> {
    let seed = cli.seed.unwrap_or(0);
    let k = args.scale.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut run = || -> seqweight_core::Result<Vec<OracleReport>> {
        Ok(vec![
            oracle::verify_cw_closed_form(10, 200 * k, &mut rng)?,
            oracle::verify_gi_maxima(10, 100 * k, &mut rng)?,
            oracle::verify_fwe_bounds(8, 100 * k, &mut rng)?,
            oracle::verify_gap_step(2000 * k, 50, &mut rng)?,
            oracle::verify_gi_step(2000 * k, 50, &mut rng)?,
            oracle::verify_scaling_invariance(100 * k, 7.0, seed)?,
            oracle::verify_conservative_dominance(200 * k, seed)?,
            oracle::verify_intersection_reduction(100 * k, seed)?,
        ])
    };
    let reports = run().map_err(|e| Failure::Config(e.into()))?;
    for r in &reports {
        println!("{r}");
    }
    let out = &cli.out;
    fs::create_dir_all(out)
        .with_context(|| format!("cannot create output directory {}", out.display()))
        .map_err(Failure::Config)?;
    let mut csv = String::from(OracleReport::CSV_HEADER);
    csv.push('\n');
    for r in &reports {
        csv.push_str(&r.to_csv());
    }
    fs::write(out.join("validation.csv"), csv).context("cannot write validation.csv")?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    let stamp = out.join(STAMP_FILE);
    if !failed.is_empty() {
        let _ = fs::remove_file(&stamp);
        return Err(Failure::Validation(failed.join(", ")));
    }
    let checks: usize = reports.iter().map(|r| r.checked).sum();
    fs::write(
        &stamp,
        format!("code_version = {}\nseed = {seed}\nchecks = {checks}\n", env!("CARGO_PKG_VERSION")),
    )
    .context("cannot write validation stamp")?;
    println!("all {} suites passed ({checks} checks)", reports.len());
    Ok(())
}

fn load_weights(spec: &str, j: Option<usize>) -> Result<WeightVector> {
    if spec == "ones" {
        let j = j.context("--J is required with --weights ones")?;
        return Ok(WeightVector::ones(j)?);
    }
    let path = Path::new(spec);
    let weights = if path.is_file() {
        let f = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
        WeightVector::read_csv(BufReader::new(f)).with_context(|| format!("in weight file {}", path.display()))?
    } else {
        let values = spec
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| anyhow!("bad weight {v:?} (expected ones, a file, or a list)")))
            .collect::<Result<Vec<_>>>()?;
        WeightVector::new(values)?
    };
    if let Some(j) = j {
        if j != weights.len() {
            bail!("--J {j} but {} weights given", weights.len());
        }
    }
    Ok(weights)
}

fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let weights = load_weights(&args.weights, args.j)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match (args.l, args.u, args.m) {
        (Some(l), Some(u), _) => {
            let t: GIThresholds = calibrate_gi(args.alpha, args.beta, l, u, &weights)?;
            if args.csv {
                writeln!(out, "{}\n{}", GIThresholds::CSV_HEADER, t.csv_row())?;
            } else {
                writeln!(out, "a = {}\nb = {}\nc = {}\nd = {}", t.a, t.b, t.c, t.d)?;
                writeln!(out, "C_W(l) = {}\nC_W(u) = {}", t.c_w_l, t.c_w_u)?;
            }
        }
        (_, _, Some(m)) => {
            let t: GapThreshold = calibrate_gap(args.alpha, m, &weights)?;
            debug_assert_eq!(t.c_w, c_w(m, &weights)?);
            if args.csv {
                writeln!(out, "{}\n{}", GapThreshold::CSV_HEADER, t.csv_row())?;
            } else {
                writeln!(out, "c = {}\nC_W = {}", t.c, t.c_w)?;
            }
        }
        _ => bail!("give --m, or --l and --u"),
    }
    Ok(())
}
