use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use secrel::pipeline::baseline::{circular_baseline_with, BaselineObjective};
use secrel::pipeline::oracle::{snap_to_grids, tiny_oracle, OracleGrids, DEFAULT_ORACLE_BUDGET};
use secrel::pipeline::{disk_clearance, run_algorithm1};
use secrel::report::{
    export_results, load_config, load_solution, solution_dir, Summary, DEFAULT_SEED,
};
use secrel::{check_solution, evaluate_solution, Error, ScenarioConfig};

const EXIT_VALIDATION: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "secrel",
    version,
    about = "Energy-efficient secure UAV relay optimizer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the alternating optimization and export the result.
    Optimize {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Best circular path over a radius/speed grid.
    Baseline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "ee")]
        objective: Objective,
    },
    /// Run one optimization per parameter value, in parallel.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-check every invariant of a stored solution.
    Validate {
        /// Export directory, or any file inside it.
        #[arg(long)]
        solution: PathBuf,
        /// Defaults to config.json next to the solution.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Exhaustive grid search around the optimized solution (N ≤ 4).
    Oracle {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Position grid spacing in metres.
        #[arg(long, default_value_t = 5.0)]
        spacing: f64,
        #[arg(long, default_value_t = 3)]
        per_axis: usize,
        #[arg(long, default_value_t = 0.5)]
        speed_step: f64,
        #[arg(long, default_value_t = 5)]
        speed_levels: usize,
        #[arg(long, default_value_t = 5)]
        power_levels: usize,
        #[arg(long, default_value_t = DEFAULT_ORACLE_BUDGET)]
        budget: u128,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Objective {
    Ee,
    MinEnergy,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    #[value(alias = "R")]
    Radius,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Validation(String),
    Solver(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::Solver(_) => EXIT_SOLVER,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Validation(m) | Failure::Solver(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Solver(_)
            | Error::Dinkelbach { .. }
            | Error::NonPositiveDenominator(_)
            | Error::InfeasibleGeometry { .. }
            | Error::InfeasibleFixing { .. }
            | Error::BudgetExceeded { .. } => Failure::Solver(e.to_string()),
            Error::Infeasible(ref v) => Failure::Solver(
                std::iter::once(e.to_string())
                    .chain(v.iter().map(|v| format!("  {v}")))
                    .collect::<Vec<_>>()
                    .join("\n"),
            ),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

fn seed() -> Result<u64, Failure> {
    match std::env::var("SECREL_SEED") {
        Ok(s) => s.trim().parse().map_err(|_| {
            Failure::Usage(format!(
                "SECREL_SEED must be an unsigned integer, got `{s}`"
            ))
        }),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn config(path: Option<&Path>) -> Result<ScenarioConfig, Failure> {
    match path {
        Some(p) => Ok(load_config(p)?),
        None => Ok(ScenarioConfig::default()),
    }
}

fn print_summary(s: &Summary) {
    println!(
        "EE {:.6} kbits/J (clamped {:.6}), secrecy {:.6e} bits, energy {:.6e} J",
        s.ee_kbits_per_j, s.ee_clamped_kbits_per_j, s.total_bits, s.total_energy_j
    );
    println!(
        "sampled worst case (seed {}): EE {:.6} kbits/J; clearance {:.2} m",
        s.sampled.seed, s.sampled.ee_kbits_per_j, s.clearance_m
    );
}

fn optimize(cfg_path: Option<&Path>, out: &Path) -> CliResult {
    let cfg = config(cfg_path)?;
    let seed = seed()?;
    let (traj, pow, trace) = run_algorithm1(&cfg)?;
    let summary = export_results(out, &cfg, &traj, &pow, Some(&trace), seed)?;
    println!(
        "{} after {} iteration(s)",
        if trace.converged {
            "converged"
        } else {
            "stopped"
        },
        summary.iterations
    );
    print_summary(&summary);
    match &trace.failure {
        Some(f) => Err(Failure::Solver(format!("block failure: {f}"))),
        None => Ok(()),
    }
}

fn baseline(cfg_path: Option<&Path>, out: &Path, objective: Objective) -> CliResult {
    let cfg = config(cfg_path)?;
    let seed = seed()?;
    let objective = match objective {
        Objective::Ee => BaselineObjective::EnergyEfficiency,
        Objective::MinEnergy => BaselineObjective::MinEnergy,
    };
    let b = circular_baseline_with(&cfg, objective)
        .ok_or_else(|| Failure::Solver("no feasible circle on the radius/speed grid".into()))?;
    let summary = export_results(out, &cfg, &b.traj, &b.pow, None, seed)?;
    println!(
        "circle radius {:.1} m at {:.2} m/s ({} feasible grid points)",
        b.radius, b.speed, b.feasible_points
    );
    print_summary(&summary);
    Ok(())
}

fn sweep(cfg_path: Option<&Path>, param: SweepParam, values: &[f64], out: &Path) -> CliResult {
    let cfg = config(cfg_path)?;
    let seed = seed()?;
    let SweepParam::Radius = param;
    let runs: Vec<(f64, ScenarioConfig)> = values
        .iter()
        .map(|&v| {
            let c = cfg.with_radius(v);
            c.validate().map(|_| (v, c))
        })
        .collect::<Result<_, _>>()?;
    std::fs::create_dir_all(out)
        .map_err(|e| Failure::Validation(format!("{}: {e}", out.display())))?;
    let results: Vec<(f64, Result<Summary, Error>)> = runs
        .par_iter()
        .map(|(v, c)| {
            let r = run_algorithm1(c).and_then(|(t, p, trace)| {
                export_results(
                    out.join(format!("radius_{v}")),
                    c,
                    &t,
                    &p,
                    Some(&trace),
                    seed,
                )
            });
            (*v, r)
        })
        .collect();
    let mut table = String::from(
        "radius,ee_kbits_per_j,sampled_ee_kbits_per_j,clearance_m,iterations,converged\n",
    );
    let mut first_err = None;
    for (v, r) in results {
        match r {
            Ok(s) => {
                println!(
                    "R = {v}: EE {:.6} kbits/J, sampled {:.6}, clearance {:.2} m",
                    s.ee_kbits_per_j, s.sampled.ee_kbits_per_j, s.clearance_m
                );
                table.push_str(&format!(
                    "{v},{:.8e},{:.8e},{:.8e},{},{}\n",
                    s.ee_kbits_per_j,
                    s.sampled.ee_kbits_per_j,
                    s.clearance_m,
                    s.iterations,
                    s.converged
                ));
            }
            Err(e) => {
                eprintln!("R = {v}: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    let path = out.join("sweep.csv");
    std::fs::write(&path, table)
        .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    match first_err {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn validate(solution: &Path, cfg_path: Option<&Path>) -> CliResult {
    let dir = solution_dir(solution);
    let cfg = match cfg_path {
        Some(p) => load_config(p)?,
        None => load_config(dir.join("config.json"))?,
    };
    let (traj, pow) = load_solution(&dir)?;
    let violations = check_solution(&traj, &pow, &cfg);
    if violations.is_empty() {
        let rep = evaluate_solution(&traj, &pow, &cfg)?;
        println!("valid: EE {:.6} kbits/J", rep.ee_kbits_per_j);
        Ok(())
    } else {
        let lines: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
        Err(Failure::Validation(format!(
            "{} violation(s):\n{}",
            violations.len(),
            lines.join("\n")
        )))
    }
}

#[allow(clippy::too_many_arguments)]
fn oracle(
    cfg_path: Option<&Path>,
    spacing: f64,
    per_axis: usize,
    speed_step: f64,
    speed_levels: usize,
    power_levels: usize,
    budget: u128,
) -> CliResult {
    let cfg = config(cfg_path)?;
    let (traj, pow, _) = run_algorithm1(&cfg)?;
    let grids = OracleGrids::around(
        &traj,
        &pow,
        &cfg,
        spacing,
        per_axis,
        speed_step,
        speed_levels,
        power_levels,
    );
    let (st, sp) = snap_to_grids(&traj, &pow, &grids, &cfg);
    let snapped = evaluate_solution(&st, &sp, &cfg)?;
    let best = tiny_oracle(&cfg, &grids, budget)?
        .ok_or_else(|| Failure::Solver("no feasible combination on the grid".into()))?;
    println!(
        "oracle EE {:.6} kbits/J over {} combinations; snapped solution {:.6}; clearance {:.2} m",
        best.ee_kbits_per_j,
        best.combinations,
        snapped.ee_kbits_per_j,
        disk_clearance(&best.traj, &cfg)
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Optimize { config, out } => optimize(config.as_deref(), &out),
        Command::Baseline {
            config,
            out,
            objective,
        } => baseline(config.as_deref(), &out, objective),
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => sweep(config.as_deref(), param, &values, &out),
        Command::Validate { solution, config } => validate(&solution, config.as_deref()),
        Command::Oracle {
            config,
            spacing,
            per_axis,
            speed_step,
            speed_levels,
            power_levels,
            budget,
        } => oracle(
            config.as_deref(),
            spacing,
            per_axis,
            speed_step,
            speed_levels,
            power_levels,
            budget,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            if let Failure::Usage(_) = f {
                eprintln!("run `secrel --help` for usage");
            }
            ExitCode::from(f.code())
        }
    }
}
