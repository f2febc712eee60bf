//! `awsens`: adapted Wasserstein distances, stochastic-optimization values
//! and their first-order robustness sensitivities on scenario-tree files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aw_sens::adapted::{aw_distance, AwParams};
use aw_sens::control::{solve_value, uniqueness_witness, UniquenessWitness, ValueReport};
use aw_sens::cost::{CatalogModel, ControlledSpec};
use aw_sens::io::{read_tree, to_json_pretty, tree_to_json, write_text, RunConfig};
use aw_sens::robust::{ball_membership, robust_curve};
use aw_sens::sensitivity::{
    perturbed_model, sensitivity_control, sensitivity_stopping, sensitivity_terminal,
    utility_loss_sensitivity, worst_case_direction, ProblemClass, SensitivityReport,
    WorstCaseDirection,
};
use aw_sens::stopping::{solve_stopping, StoppingSolution};
use aw_sens::tree::{gen_binomial, gen_lattice, gen_random};
use aw_sens::Error;
use clap::{Parser, Subcommand};
use serde::Serialize;

/// Exit code for command-line usage errors.
const EXIT_USAGE: u8 = 64;
const UNIQUENESS_RESTARTS: usize = 16;

#[derive(Parser)]
#[command(
    name = "awsens",
    version,
    about = "Adapted Wasserstein sensitivity toolkit"
)]
struct Cli {
    /// Cap on worker threads (0 lets the runtime decide).
    #[arg(long, global = true, env = "AWSENS_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario tree.
    Gen {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Adapted Wasserstein distance between two trees.
    Aw {
        first: PathBuf,
        second: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        /// Include the optimal coupling's leaf masses.
        #[arg(long)]
        coupling: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimal value of a multistage control problem.
    Value {
        tree: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimal stopping value and stopping time.
    Stop {
        tree: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// First-order sensitivity and the worst-case direction.
    Sens {
        tree: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Also build the perturbed model at this radius.
        #[arg(long)]
        radius: Option<f64>,
        /// Where to write the perturbed model tree.
        #[arg(long, requires = "radius")]
        perturbed_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Worst-case error versus radius.
    Curve {
        tree: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// CSV output (defaults to the config's outputs.csv, else stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON output (defaults to the config's outputs.json).
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GenKind {
    /// Binomial tree with additive up/down steps plus drift.
    Binomial {
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 0.0)]
        start: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        up: f64,
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        down: f64,
        #[arg(long, default_value_t = 0.5)]
        p_up: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        drift: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tree whose increments are symmetric multiples of `step`.
    Lattice {
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        start: f64,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        /// Comma-separated branch probabilities.
        #[arg(long, value_delimiter = ',', required = true)]
        probs: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random tree with seeded increments and weights.
    Random {
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 2)]
        branching: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct LeafMass {
    first: usize,
    second: usize,
    mass: f64,
}

#[derive(Serialize)]
struct AwOutput {
    p: f64,
    distance: f64,
    pth_power: f64,
    per_stage_costs: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coupling: Option<Vec<LeafMass>>,
}

#[derive(Serialize)]
struct ValueOutput {
    report: ValueReport,
    uniqueness: UniquenessWitness,
}

#[derive(Serialize)]
struct PerturbedSummary {
    r: f64,
    delta: f64,
    bicausalized: bool,
    distance: f64,
    within_bound: bool,
}

#[derive(Serialize)]
struct SensOutput {
    report: SensitivityReport,
    direction: WorstCaseDirection,
    #[serde(skip_serializing_if = "Option::is_none")]
    utility_loss_sensitivity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    perturbed: Option<PerturbedSummary>,
}

fn emit(out: Option<&Path>, text: &str) -> aw_sens::Result<()> {
    match out {
        Some(path) => write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(command: Command) -> aw_sens::Result<()> {
    match command {
        Command::Gen { kind } => {
            let (tree, out) = match kind {
                GenKind::Binomial {
                    horizon,
                    start,
                    up,
                    down,
                    p_up,
                    drift,
                    out,
                } => (gen_binomial(horizon, start, up, down, p_up, drift)?, out),
                GenKind::Lattice {
                    horizon,
                    start,
                    step,
                    probs,
                    out,
                } => (gen_lattice(horizon, start, step, &probs)?, out),
                GenKind::Random {
                    horizon,
                    branching,
                    seed,
                    out,
                } => (gen_random(horizon, branching, seed)?, out),
            };
            emit(out.as_deref(), &tree_to_json(&tree))
        }
        Command::Aw {
            first,
            second,
            p,
            coupling,
            out,
        } => {
            let (a, b) = (read_tree(&first)?, read_tree(&second)?);
            let params = AwParams::new(p)?;
            let res = aw_distance(&a, &b, params)?;
            let coupling = coupling.then(|| {
                res.coupling
                    .leaf_masses()
                    .into_iter()
                    .map(|(x, y, mass)| LeafMass {
                        first: x.0,
                        second: y.0,
                        mass,
                    })
                    .collect()
            });
            let output = AwOutput {
                p,
                distance: res.distance,
                pth_power: res.pth_power,
                per_stage_costs: res.per_stage_costs,
                coupling,
            };
            emit(out.as_deref(), &to_json_pretty(&output)?)
        }
        Command::Value { tree, config, out } => {
            let (tree, cfg) = (read_tree(&tree)?, RunConfig::read(&config)?);
            require_class(&cfg, ProblemClass::Control)?;
            let model = cfg.build_model(tree.horizon())?;
            let bounds = cfg.bounds()?;
            let report = solve_value(&tree, &model, bounds, &cfg.solver)?;
            let uniqueness = uniqueness_witness(
                &tree,
                &model,
                bounds,
                &cfg.solver,
                UNIQUENESS_RESTARTS,
                cfg.seed,
            )?;
            emit(
                out.as_deref(),
                &to_json_pretty(&ValueOutput { report, uniqueness })?,
            )
        }
        Command::Stop { tree, config, out } => {
            let (tree, cfg) = (read_tree(&tree)?, RunConfig::read(&config)?);
            require_class(&cfg, ProblemClass::Stopping)?;
            let model = cfg.build_model(tree.horizon())?;
            let sol: StoppingSolution = solve_stopping(&tree, &model, cfg.stopping_tol)?;
            emit(out.as_deref(), &to_json_pretty(&sol)?)
        }
        Command::Sens {
            tree,
            config,
            radius,
            perturbed_out,
            out,
        } => {
            let (tree, cfg) = (read_tree(&tree)?, RunConfig::read(&config)?);
            let model = cfg.build_model(tree.horizon())?;
            let params = cfg.params()?;
            let report = match cfg.problem_class {
                ProblemClass::Terminal => sensitivity_terminal(&tree, &model, params)?,
                ProblemClass::Control => {
                    sensitivity_control(&tree, &model, cfg.bounds()?, params, &cfg.solver)?
                }
                ProblemClass::Stopping => {
                    sensitivity_stopping(&tree, &model, params, cfg.stopping_tol)?
                }
            };
            let via_loss = match cfg.catalog_model()? {
                CatalogModel::Controlled(ControlledSpec::Utility(u)) => {
                    match utility_loss_sensitivity(&tree, &u, cfg.bounds()?, params, &cfg.solver) {
                        Ok(rep) => Some(rep.first_order),
                        Err(Error::FlatStep { .. }) => None,
                        Err(e) => return Err(e),
                    }
                }
                _ => None,
            };
            let direction = worst_case_direction(&tree, &report)?;
            let perturbed = match radius {
                Some(r) => {
                    let delta = cfg.delta.unwrap_or(r / 100.0);
                    let q = perturbed_model(&tree, &direction, r, delta)?;
                    let bound = r + delta * (tree.horizon() as f64).powf(1.0 / params.p());
                    let (within_bound, distance) = ball_membership(&tree, &q.tree, params, bound)?;
                    if let Some(path) = &perturbed_out {
                        write_text(path, &tree_to_json(&q.tree))?;
                    }
                    Some(PerturbedSummary {
                        r,
                        delta,
                        bicausalized: q.bicausalized,
                        distance,
                        within_bound,
                    })
                }
                None => None,
            };
            let output = SensOutput {
                report,
                direction,
                utility_loss_sensitivity: via_loss,
                perturbed,
            };
            emit(out.as_deref(), &to_json_pretty(&output)?)
        }
        Command::Curve {
            tree,
            config,
            out,
            json,
        } => {
            let (tree, cfg) = (read_tree(&tree)?, RunConfig::read(&config)?);
            if cfg.radii.is_empty() {
                return Err(Error::Config("curve needs a nonempty radii list".into()));
            }
            let curve = robust_curve(&cfg.robust_query(&tree)?)?;
            let base = config.parent().unwrap_or(Path::new(""));
            let csv_path = out.or_else(|| cfg.outputs.csv.as_ref().map(|p| base.join(p)));
            let json_path = json.or_else(|| cfg.outputs.json.as_ref().map(|p| base.join(p)));
            if let Some(path) = json_path {
                write_text(&path, &to_json_pretty(&curve)?)?;
            }
            emit(csv_path.as_deref(), &curve.to_csv())
        }
    }
}

fn require_class(cfg: &RunConfig, class: ProblemClass) -> aw_sens::Result<()> {
    if cfg.problem_class != class {
        return Err(Error::Config(format!(
            "this command needs problem_class {class:?}, config has {:?}",
            cfg.problem_class
        )));
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidTree { .. } => 2,
        Error::AmbiguousStopping { .. } => 3,
        Error::NotConvex(_) => 4,
        Error::TooLarge(_) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("awsens: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("awsens: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
