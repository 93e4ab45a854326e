use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coop_mtsp::bench::{
    emit_report, generate_dataset, run_ablation, run_benchmark, run_method, AblationAxis, AblationConfig, BenchContext,
    Dataset, Method, MetricsRow, ReportFormat,
};
use coop_mtsp::config::Config;
use coop_mtsp::graph::{Instance, ReturnMode, TaskStateGraph};
use coop_mtsp::policy::{gradient_checks, Policy};
use coop_mtsp::predictor::{sample_predictor_dataset, train_predictor, PredictorMeta};
use coop_mtsp::solvers::ExhaustiveConfig;
use coop_mtsp::train::{load_matrix_source, train_policy, MatrixSourceKind};
use coop_mtsp::{CoopError, Result};
use coop_nn::GradCheckConfig;

#[derive(Parser)]
#[command(name = "coop-mtsp", version, about = "Cooperative dual-arm task allocation")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write benchmark instance sets to `<out>/data/n<N>/`.
    GenData {
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the pair-cost predictor into `<out>/predictor.{ckpt,json}`.
    TrainPredictor {
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the allocation policy into `<out>/`.
    TrainPolicy {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        matrix_source: Option<MatrixSourceKind>,
        #[arg(long)]
        predictor: Option<PathBuf>,
        /// Continue from the checkpoint and report already in `<out>/`.
        #[arg(long)]
        resume: bool,
    },
    /// Plan one instance file and print the plan as JSON.
    Plan {
        instance: PathBuf,
        #[arg(long, default_value = "greedy")]
        method: Method,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        matrix_source: Option<MatrixSourceKind>,
        #[arg(long)]
        predictor: Option<PathBuf>,
        #[arg(long, action = clap::ArgAction::Set, default_value_t = true)]
        step_back: bool,
    },
    /// Run the baseline/policy comparison and write `<out>/bench.<format>`.
    Bench {
        /// Directory of `n<N>/` instance sets; generated from the seed if absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        matrix_source: Option<MatrixSourceKind>,
        #[arg(long)]
        predictor: Option<PathBuf>,
        #[arg(long, action = clap::ArgAction::Set)]
        step_back: Option<bool>,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
    },
    /// Train and evaluate the variants of one ablation axis.
    Ablate {
        #[arg(long)]
        axis: String,
        /// Evaluation set size; defaults to the training size.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
    },
    /// Finite-difference checks of every policy block.
    GradCheck {
        #[arg(long, default_value_t = 4)]
        n: usize,
        /// Coordinates sampled per parameter tensor.
        #[arg(long, default_value_t = 3)]
        coords: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut c = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        c.train.seed = s;
        c.bench.seed = s;
        c.predictor.seed = s;
        c.predictor.dataset_seed = s;
    }
    Ok(c)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let oracle = cfg.oracle.build()?;
    let out = cli.out.as_path();
    std::fs::create_dir_all(out)?;
    match cli.command {
        Command::GenData { sizes, count } => {
            for n in sizes.unwrap_or(cfg.bench.sizes) {
                let d = generate_dataset(n, count.unwrap_or(cfg.bench.count), cfg.bench.seed)?;
                let dir = out.join("data").join(format!("n{n}"));
                d.save(&dir)?;
                println!("n={n}: {} instances in {}", d.count(), dir.display());
            }
        }
        Command::TrainPredictor { samples, epochs } => {
            let p = &cfg.predictor;
            let count = samples.unwrap_or(p.samples);
            let mut tc = p.train_config();
            tc.epochs = epochs.unwrap_or(tc.epochs);
            let data = sample_predictor_dataset(count, &oracle, p.dataset_seed)?;
            let run = train_predictor(&data, p.arch(), oracle, &tc, |r| {
                println!(
                    "epoch {} loss {:.5} accuracy {:.4} relative_error {:.5} ({:.0} s)",
                    r.epoch, r.train_loss, r.held_out.mask_accuracy, r.held_out.mean_relative_time_error, r.seconds
                )
            })?;
            let meta = PredictorMeta {
                arch: p.arch(),
                oracle,
                dataset_seed: p.dataset_seed,
                dataset_size: count,
                metrics: run.held_out,
            };
            run.model.save(out.join("predictor"), &meta)?;
            println!("{}", serde_json::to_string(&run.held_out)?);
        }
        Command::TrainPolicy { n, iterations, matrix_source, predictor, resume } => {
            let mut tc = cfg.train.clone();
            tc.n = n.unwrap_or(tc.n);
            tc.iterations = iterations.unwrap_or(tc.iterations);
            tc.matrix_source = matrix_source.unwrap_or(tc.matrix_source);
            tc.predictor = predictor.or(tc.predictor);
            let source = load_matrix_source(tc.matrix_source, tc.predictor.as_deref(), oracle)?;
            let run = train_policy(&tc, &cfg.reward, &oracle, source.as_ref(), out, resume, |r| {
                println!("{}", r.csv_row())
            })?;
            println!("trained {} iterations into {}", run.report.len(), out.display());
        }
        Command::Plan { instance, method, policy, matrix_source, predictor, step_back } => {
            let inst = Instance::load(&instance)?;
            let g = TaskStateGraph::from_instance(&inst, ReturnMode::Strict)?;
            let kind = matrix_source.unwrap_or(cfg.bench.matrix_source);
            let source = load_matrix_source(kind, predictor.as_deref().or(cfg.bench.predictor.as_deref()), oracle)?;
            let loaded = load_policy(method, policy.as_deref().or(cfg.bench.policy.as_deref()))?;
            let mut ctx = BenchContext::new(oracle, source.as_ref());
            ctx.policy = loaded.as_ref();
            ctx.step_back = step_back.then_some(cfg.bench.step_back_budget);
            let plan = run_method(method, &g, &ctx)?;
            let actions: Vec<String> = plan.actions.iter().map(|a| a.to_string()).collect();
            let line = serde_json::json!({
                "method": method.name(),
                "feasible": plan.feasible,
                "cost": if plan.feasible { Some(plan.cost) } else { None },
                "planning_time_s": plan.planning_time,
                "reverts": plan.reverts,
                "actions": actions,
            });
            println!("{}", serde_json::to_string_pretty(&line)?);
        }
        Command::Bench { data, sizes, methods, policy, matrix_source, predictor, step_back, format } => {
            let b = &cfg.bench;
            let methods = match methods {
                Some(m) => m,
                None => b.methods.iter().map(|m| m.parse()).collect::<Result<_>>()?,
            };
            let kind = matrix_source.unwrap_or(b.matrix_source);
            let source = load_matrix_source(kind, predictor.as_deref().or(b.predictor.as_deref()), oracle)?;
            let policy_path = policy.or(b.policy.clone());
            let loaded = if methods.contains(&Method::Policy) { load_policy(Method::Policy, policy_path.as_deref())? } else { None };
            let mut rows: Vec<MetricsRow> = Vec::new();
            for n in sizes.unwrap_or(b.sizes.clone()) {
                let dataset = load_or_generate(data.as_deref(), n, b.count, b.seed)?;
                let mut ctx = BenchContext::new(oracle, source.as_ref());
                ctx.policy = loaded.as_ref();
                ctx.step_back = step_back.unwrap_or(b.step_back).then_some(b.step_back_budget);
                ctx.exhaustive = ExhaustiveConfig { budget_s: b.exhaustive_budget_s, ..ExhaustiveConfig::default() };
                let active: Vec<Method> =
                    methods.iter().copied().filter(|&m| m != Method::Exhaustive || n <= b.exhaustive_max_n).collect();
                for row in run_benchmark(&active, &dataset, &ctx)? {
                    println!(
                        "{:>10} n={:<3} success {:.3} mean cost {:.4} mean time {:.4} s",
                        row.method, row.n, row.success_rate, row.mean_cost, row.mean_plan_time_s
                    );
                    rows.push(row);
                }
            }
            let path = out.join(format!("bench.{}", extension(format)));
            emit_report(&rows, format, &path)?;
            println!("wrote {}", path.display());
        }
        Command::Ablate { axis, n, data, format } => {
            let axis: AblationAxis = axis.parse()?;
            let n = n.unwrap_or(cfg.train.n);
            let dataset = load_or_generate(data.as_deref(), n, cfg.bench.count, cfg.bench.seed)?;
            let source = load_matrix_source(cfg.train.matrix_source, cfg.train.predictor.as_deref(), oracle)?;
            let ac = AblationConfig {
                train: cfg.train.clone(),
                reward: cfg.reward,
                oracle,
                step_back: cfg.bench.step_back.then_some(cfg.bench.step_back_budget),
                predictor: cfg.predictor.clone(),
            };
            let rows = run_ablation(axis, &dataset, &ac, source.as_ref(), &out.join("ablation"), |l| println!("{l}"))?;
            let path = out.join(format!("ablation_{axis}.{}", extension(format)));
            emit_report(&rows, format, &path)?;
            println!("wrote {}", path.display());
        }
        Command::GradCheck { n, coords } => {
            let check = GradCheckConfig { coords_per_param: Some(coords), seed: cfg.train.seed, ..GradCheckConfig::default() };
            let mut failed = Vec::new();
            for (name, r) in gradient_checks(&cfg.train.policy, n, &check)? {
                let verdict = if r.passed() { "ok" } else { "FAIL" };
                println!("{name:<18} max relative error {:.3e} over {} coordinates ({verdict})", r.max_rel_error, r.checked);
                if !r.passed() {
                    failed.push(name);
                }
            }
            if !failed.is_empty() {
                return Err(CoopError::Diverged(format!("gradient check failed for {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}

fn extension(f: ReportFormat) -> &'static str {
    match f {
        ReportFormat::Csv => "csv",
        ReportFormat::Json => "json",
    }
}

fn load_policy(method: Method, path: Option<&Path>) -> Result<Option<Policy>> {
    if method != Method::Policy {
        return Ok(None);
    }
    let stem = path.ok_or_else(|| CoopError::MissingCheckpoint("policy (no path given)".into()))?;
    Ok(Some(Policy::load(stem)?.0))
}

fn load_or_generate(dir: Option<&Path>, n: usize, count: usize, seed: u64) -> Result<Dataset> {
    match dir {
        Some(d) => Dataset::load(d.join(format!("n{n}"))),
        None => generate_dataset(n, count, seed),
    }
}
