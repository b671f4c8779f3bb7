mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::warn;
use tensagg::aggregation::{aggregate_views, AggregatedViews, AggregationOperator, Scenario, ScenarioSpec};
use tensagg::eval::{make_synthetic, nde, nde_plot_svg, run_benchmark, write_benchmark_csv, BenchmarkSuite};
use tensagg::io::{load_mask, load_operator, load_tensor, save_mask, save_operator, save_tensor};
use tensagg::solvers::{run_solver, SolverKind, SolverSettings};
use tensagg::MaskTensor3;

use config::{BenchmarkConfig, RunConfig};

const TRUTH: &str = "truth.tns";
const TEMPORAL: &str = "temporal.tns";
const CONTEMPORANEOUS: &str = "contemporaneous.tns";
const TEMPORAL_MASK: &str = "temporal.mask";
const CONTEMPORANEOUS_MASK: &str = "contemporaneous.mask";
const OPERATOR: &str = "operator.txt";

#[derive(Parser)]
#[command(name = "tensagg", version, about = "Recover fine-resolution tensors from aggregated views")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic ground truth and write it with its views.
    Generate(GenerateArgs),
    /// Form the two views of an existing tensor.
    Aggregate(AggregateArgs),
    /// Reconstruct the fine tensor from two views.
    Disaggregate(DisaggregateArgs),
    /// Print the NDE of an estimate against the ground truth.
    Evaluate(EvaluateArgs),
    /// Run every solver of a suite on every instance.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AggregateArgs {
    #[arg(long)]
    tensor: PathBuf,
    /// Operator file; without it the operator comes from `--config`.
    #[arg(long, required_unless_present = "config")]
    operator: Option<PathBuf>,
    /// Run config whose aggregation and missing sections are applied.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DisaggregateArgs {
    /// Directory written by `generate` or `aggregate`.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, required_unless_present = "input")]
    temporal: Option<PathBuf>,
    #[arg(long, required_unless_present = "input")]
    contemporaneous: Option<PathBuf>,
    #[arg(long)]
    mask_t: Option<PathBuf>,
    #[arg(long)]
    mask_c: Option<PathBuf>,
    #[arg(long)]
    operator: Option<PathBuf>,
    /// Ignore any operator and run the blind solver.
    #[arg(long)]
    blind: bool,
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Ground truth; when given the NDE is printed.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Run config whose solver section supplies defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    estimate: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match setup_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn setup_threads() -> Result<()> {
    let Ok(v) = std::env::var("TENSAGG_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .with_context(|| format!("TENSAGG_THREADS must be a positive integer, got `{v}`"))?;
    if n == 0 {
        bail!("TENSAGG_THREADS must be a positive integer, got `{v}`");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Disaggregate(a) => disaggregate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Benchmark(a) => benchmark(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_views(dir: &Path, views: &AggregatedViews, op: &AggregationOperator) -> Result<()> {
    save_tensor(&dir.join(TEMPORAL), &views.y_t, Some(&views.mask_t))?;
    save_tensor(&dir.join(CONTEMPORANEOUS), &views.y_c, Some(&views.mask_c))?;
    save_mask(&dir.join(TEMPORAL_MASK), &views.mask_t)?;
    save_mask(&dir.join(CONTEMPORANEOUS_MASK), &views.mask_c)?;
    save_operator(&dir.join(OPERATOR), op)?;
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let cfg: RunConfig = config::load(&a.config)?;
    let seed = a.seed.unwrap_or(cfg.seed);
    let spec = cfg.scenario_spec(seed);
    let syn = make_synthetic(
        cfg.dims(),
        cfg.problem.rank,
        cfg.problem.distribution.into(),
        cfg.problem.noise,
        &spec,
    )?;
    create_dir(&a.out)?;
    save_tensor(&a.out.join(TRUTH), &syn.truth, None)?;
    write_views(&a.out, &syn.views, &syn.op)?;
    println!("wrote {} ({})", a.out.display(), cfg.dims());
    Ok(())
}

fn aggregate(a: AggregateArgs) -> Result<()> {
    let (x, mask) = load_tensor(&a.tensor)?;
    if !mask.is_full() {
        bail!("{} has unobserved entries; aggregation needs a complete tensor", a.tensor.display());
    }
    let cfg: Option<RunConfig> = a.config.as_deref().map(config::load).transpose()?;
    let seed = a.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
    let spec = match &cfg {
        Some(c) => c.scenario_spec(seed),
        None => ScenarioSpec {
            seed,
            ..ScenarioSpec::default()
        },
    };
    let op = match (&a.operator, &cfg) {
        (Some(p), _) => load_operator(p)?,
        (None, Some(_)) => spec.operator(x.dims())?,
        (None, None) => unreachable!("clap requires --operator or --config"),
    };
    let scenario = if op.v.is_identity() { Scenario::A } else { Scenario::B };
    let spec = ScenarioSpec { scenario, ..spec };
    let views = aggregate_views(&x, &op, &spec)?;
    create_dir(&a.out)?;
    write_views(&a.out, &views, &op)?;
    println!(
        "wrote {} (temporal {}, contemporaneous {})",
        a.out.display(),
        views.y_t.dims(),
        views.y_c.dims()
    );
    Ok(())
}

fn load_view(path: &Path, mask_path: Option<&Path>) -> Result<(tensagg::Tensor3, MaskTensor3)> {
    let (y, from_file) = load_tensor(path)?;
    let mask = match mask_path {
        Some(p) => {
            let m = load_mask(p)?;
            if m.dims() != y.dims() {
                bail!("mask {} is {} but view {} is {}", p.display(), m.dims(), path.display(), y.dims());
            }
            m
        }
        None => from_file,
    };
    Ok((y.masked(&mask)?, mask))
}

fn disaggregate(a: DisaggregateArgs) -> Result<()> {
    let cfg: Option<RunConfig> = a.config.as_deref().map(config::load).transpose()?;
    let in_dir = |name: &str| a.input.as_ref().map(|d| d.join(name));
    let existing = |name: &str| in_dir(name).filter(|p| p.exists());

    let kind = match (&a.solver, a.blind) {
        (Some(s), blind) => {
            let k: SolverKind = s.parse()?;
            if blind && k != SolverKind::BPrema {
                bail!("--blind runs bprema but --solver asks for {k}");
            }
            k
        }
        (None, true) => SolverKind::BPrema,
        (None, false) => cfg
            .as_ref()
            .and_then(|c| c.solver.name)
            .unwrap_or(SolverKind::Prema),
    };

    let t_path = a.temporal.clone().or_else(|| in_dir(TEMPORAL)).context("no temporal view given")?;
    let c_path = a
        .contemporaneous
        .clone()
        .or_else(|| in_dir(CONTEMPORANEOUS))
        .context("no contemporaneous view given")?;
    let mt = a.mask_t.clone().or_else(|| existing(TEMPORAL_MASK));
    let mc = a.mask_c.clone().or_else(|| existing(CONTEMPORANEOUS_MASK));
    let (y_t, mask_t) = load_view(&t_path, mt.as_deref())?;
    let (y_c, mask_c) = load_view(&c_path, mc.as_deref())?;
    let views = AggregatedViews { y_t, mask_t, y_c, mask_c };

    let op = if kind.needs_operator() {
        let p = a
            .operator
            .clone()
            .or_else(|| existing(OPERATOR))
            .with_context(|| format!("solver `{kind}` needs --operator"))?;
        Some(load_operator(&p)?)
    } else {
        if a.operator.is_some() {
            warn!("solver `{kind}` does not use the aggregation operator; ignoring --operator");
        }
        None
    };
    if let Some(op) = &op {
        let (t, c) = (op.temporal_dims(), op.contemporaneous_dims());
        if t != views.y_t.dims() || c != views.y_c.dims() {
            bail!(
                "operator expects views {t} and {c}, got {} and {}",
                views.y_t.dims(),
                views.y_c.dims()
            );
        }
    }
    let truth = a.truth.as_deref().map(load_tensor).transpose()?.map(|(t, _)| t);

    let seed = a.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
    let mut settings = match &cfg {
        Some(c) => c.solver_settings(seed),
        None => SolverSettings {
            seed,
            ..SolverSettings::default()
        },
    };
    if let Some(r) = a.rank {
        settings.rank = r;
    }
    if let Some(n) = a.iters {
        settings.iterations = n;
    }
    if let Some(mu) = a.mu {
        settings.mu = mu;
    }

    let (est, report) = run_solver(kind, &views, op.as_ref(), truth.as_ref(), &settings)?;
    create_dir(&a.out)?;
    save_tensor(&a.out.join("estimate.tns"), &est, None)?;
    let csv = |name: &str| -> Result<BufWriter<File>> {
        let p = a.out.join(name);
        Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
    };
    report.write_trace_csv(csv("report.csv")?)?;
    report.write_summary_csv(csv("summary.csv")?)?;
    println!(
        "{}: {} after {} iterations, cost {:e}",
        report.solver,
        report.status.name(),
        report.iterations,
        report.final_cost
    );
    if let Some(v) = report.nde {
        println!("nde {v:e}");
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let (truth, _) = load_tensor(&a.truth)?;
    let (est, mask) = load_tensor(&a.estimate)?;
    if !mask.is_full() {
        warn!("{} has absent entries; they count as 0", a.estimate.display());
    }
    println!("nde {:e}", nde(&truth, &est)?);
    Ok(())
}

fn benchmark(a: BenchmarkArgs) -> Result<()> {
    let cfg: BenchmarkConfig = config::load(&a.config)?;
    let seed = a.seed.unwrap_or(cfg.seed);
    let rank = cfg.instances.first().map(|i| i.problem.rank).unwrap_or(1);
    let suite = BenchmarkSuite {
        instances: cfg.instance_specs(seed),
        solvers: cfg.solvers.clone(),
        settings: cfg.solver.settings(rank, seed),
    };
    let rows = run_benchmark(&suite);
    create_dir(&a.out)?;
    let p = a.out.join("results.csv");
    write_benchmark_csv(&rows, BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))?;
    fs::write(a.out.join("nde.svg"), nde_plot_svg(&rows))?;
    write_benchmark_csv(&rows, std::io::stdout().lock())?;
    let failed = rows.iter().filter(|r| r.status.starts_with("error")).count();
    if failed > 0 {
        bail!("{failed} of {} runs failed", rows.len());
    }
    Ok(())
}
