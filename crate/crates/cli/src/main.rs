//! `rstl` command-line front end.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use rstl::approx::{self, LogOdds, Semantics};
use rstl::dynamics::Trajectory;
use rstl::formula::{ground, parse, pretty};
use rstl::mc::mc_satisfaction;
use rstl::scenario::Scenario;
use rstl::synth::{ascend, bench, SynthConfig, SynthReport};

#[derive(Parser)]
#[command(name = "rstl", version, about = "Random signal temporal logic: evaluation and control synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a formula and print its canonical form
    Parse {
        formula: String,
        /// Also ground over this many steps and report the leaf count
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 1)]
        anchor: usize,
    },
    /// Probability of satisfaction of the scenario formula along a trajectory
    Eval {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long, default_value = "ci")]
        semantics: Semantics,
        /// Add a Monte-Carlo estimate with this many draws
        #[arg(long)]
        mc_samples: Option<u64>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Compare every semantics against Monte-Carlo on a batch of trajectories
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        /// Trajectory CSV files
        #[arg(long, num_args = 1.., required = true)]
        trajectories: Vec<PathBuf>,
        /// Formulas to evaluate; defaults to none (header-only output)
        #[arg(long, num_args = 0..)]
        formulas: Vec<String>,
        #[arg(long, default_value_t = 1000)]
        mc_samples: u64,
        #[command(flatten)]
        seed: SeedArg,
        /// Write CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize controls by multi-restart gradient ascent
    Synth {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        knobs: SynthArgs,
    },
    /// Time gradient-ascent steps over a grid of sample and restart counts
    Bench {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,10,50,100")]
        ns_list: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,10,50,100")]
        nu_list: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        workers: Vec<usize>,
        /// Timed steps per cell
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long)]
        semantics: Option<Semantics>,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SeedArg {
    /// Random seed; defaults to $RSTL_SEED, then the scenario's seed
    #[arg(long)]
    seed: Option<u64>,
}

impl SeedArg {
    fn resolve(&self, scenario: &Scenario) -> Result<u64, CliError> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var("RSTL_SEED") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::new("usage", format!("RSTL_SEED is not an unsigned integer: `{v}`"))),
            Err(_) => Ok(scenario.spec.seed),
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    ns: Option<usize>,
    #[arg(long)]
    nu: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    semantics: Option<Semantics>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    prior_weight: Option<f64>,
    /// Override the scenario's actuation noise
    #[arg(long)]
    sigma_u: Option<f64>,
    /// Reuse the same noise draws at every iteration
    #[arg(long)]
    fixed_noise: bool,
    #[arg(long)]
    mc_samples: Option<u64>,
    /// Plain gradient ascent is the only optimizer
    #[arg(long, default_value = "sgd", value_parser = ["sgd"])]
    optimizer: String,
    #[command(flatten)]
    seed: SeedArg,
}

impl SynthArgs {
    fn apply(&self, mut c: SynthConfig, scenario: &Scenario) -> Result<SynthConfig, CliError> {
        c.ns = self.ns.unwrap_or(c.ns);
        c.nu = self.nu.unwrap_or(c.nu);
        c.iters = self.iters.unwrap_or(c.iters);
        c.step_size = self.step_size.unwrap_or(c.step_size);
        c.semantics = self.semantics.unwrap_or(c.semantics);
        c.prior_weight = self.prior_weight.unwrap_or(c.prior_weight);
        c.mc_samples = self.mc_samples.unwrap_or(c.mc_samples);
        c.fixed_noise |= self.fixed_noise;
        c.workers = self.workers.or(c.workers);
        c.seed = self.seed.resolve(scenario)?;
        Ok(c)
    }
}

#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
    pointer: Option<String>,
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
            pointer: None,
        }
    }

    fn to_json_line(&self) -> String {
        let mut v = json!({ "error": self.kind, "message": self.message });
        if let Some(p) = &self.pointer {
            v["pointer"] = json!(p);
        }
        v.to_string()
    }
}

macro_rules! wrap {
    ($kind:literal) => {
        |e| CliError::new($kind, e.to_string())
    };
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    Scenario::load(path).map_err(|e| CliError {
        kind: "scenario",
        message: e.message.clone(),
        pointer: Some(e.pointer.clone()),
    })
}

fn load_trajectory(path: &Path, scenario: &Scenario) -> Result<Trajectory, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    let traj = Trajectory::from_csv_str(&text, scenario.spec.dt)
        .map_err(|e| CliError::new("trajectory", format!("{}: {e}", path.display())))?;
    if traj.len() != scenario.horizon() {
        return Err(CliError::new(
            "trajectory",
            format!(
                "{}: trajectory has {} steps but the scenario horizon is {}",
                path.display(),
                traj.len(),
                scenario.horizon()
            ),
        ));
    }
    Ok(traj)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::new("io", format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn as_probability(v: f64, sem: Semantics) -> f64 {
    if sem.is_log_odds() {
        LogOdds(v).prob()
    } else {
        v
    }
}

fn cmd_parse(text: &str, horizon: Option<usize>, anchor: usize) -> Result<(), CliError> {
    let f = parse(text).map_err(wrap!("parse"))?;
    let mut out = json!({
        "formula": pretty(&f),
        "predicates": f.predicates(),
    });
    if let Some(h) = horizon {
        let g = ground(&f, anchor, h).map_err(wrap!("ground"))?;
        out["grounded_leaves"] = json!(g.formula.leaf_count());
        out["warnings"] = json!(g.warnings);
    }
    println!("{out}");
    Ok(())
}

fn cmd_eval(
    scenario: &Path,
    trajectory: &Path,
    sem: Semantics,
    mc_samples: Option<u64>,
    seed: &SeedArg,
) -> Result<(), CliError> {
    let sc = load_scenario(scenario)?;
    let traj = load_trajectory(trajectory, &sc)?;
    let problem = sc.problem().map_err(wrap!("ground"))?;
    let v = approx::evaluate(&problem.grounded, &traj, &sc.table, sem).map_err(wrap!("eval"))?;
    let p = as_probability(v, sem);
    let mut out = json!({
        "scenario": sc.name(),
        "formula": pretty(&sc.formula),
        "semantics": sem.as_str(),
        "probability": p,
        "log_odds": if sem.is_log_odds() { v } else { (p / (1.0 - p)).ln() },
        "warnings": problem.warnings,
    });
    if let Some(n) = mc_samples {
        let seed = seed.resolve(&sc)?;
        let e = mc_satisfaction(&problem.grounded, &traj, &sc.table, n, seed).map_err(wrap!("eval"))?;
        out["mc"] = serde_json::to_value(e).expect("estimate serializes");
    }
    println!("{out}");
    Ok(())
}

fn cmd_compare(
    scenario: &Path,
    trajectories: &[PathBuf],
    formulas: &[String],
    mc_samples: u64,
    seed: &SeedArg,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let sc = load_scenario(scenario)?;
    let seed = seed.resolve(&sc)?;
    let trajs = trajectories
        .iter()
        .map(|p| load_trajectory(p, &sc))
        .collect::<Result<Vec<_>, _>>()?;
    let mut csv = String::from("trajectory,formula,semantics,estimate,mc_mean,mc_stderr\n");
    for text in formulas {
        let f = parse(text).map_err(wrap!("parse"))?;
        let problem = sc.problem_for(&f).map_err(wrap!("ground"))?;
        for (path, traj) in trajectories.iter().zip(&trajs) {
            let mc = mc_satisfaction(&problem.grounded, traj, &sc.table, mc_samples, seed).map_err(wrap!("eval"))?;
            for sem in Semantics::ALL {
                let v = approx::evaluate(&problem.grounded, traj, &sc.table, sem).map_err(wrap!("eval"))?;
                writeln!(
                    csv,
                    "{},\"{}\",{},{:?},{:?},{:?}",
                    path.display(),
                    pretty(&f),
                    sem,
                    as_probability(v, sem),
                    mc.mean,
                    mc.std_err
                )
                .expect("writing to a string");
            }
        }
    }
    write_out(out, &csv)
}

fn controls_csv(u: &[[f64; 2]]) -> String {
    let mut s = String::from("t,v,omega\n");
    for (t, c) in u.iter().enumerate() {
        writeln!(s, "{},{:?},{:?}", t + 1, c[0], c[1]).expect("writing to a string");
    }
    s
}

fn convergence_csv(report: &SynthReport) -> String {
    let mut s = String::from("iteration,restart,objective,mc_p\n");
    for r in &report.restarts {
        let mut mc = r.mc_trace.iter().peekable();
        for (i, f) in r.objective_trace.iter().enumerate() {
            let p = match mc.peek() {
                Some(pt) if pt.iteration == i => {
                    let p = format!("{:?}", pt.probability);
                    mc.next();
                    p
                }
                _ => String::new(),
            };
            writeln!(s, "{i},{},{f:?},{p}", r.restart).expect("writing to a string");
        }
    }
    s
}

fn cmd_synth(scenario: &Path, out: &Path, knobs: &SynthArgs) -> Result<(), CliError> {
    let sc = load_scenario(scenario)?;
    let config = knobs.apply(sc.synth_config(), &sc)?;
    let mut problem = sc.problem().map_err(wrap!("ground"))?;
    if let Some(s) = knobs.sigma_u {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(CliError::new("usage", format!("--sigma-u must be >= 0 (got {s})")));
        }
        problem = problem.with_sigma_u(s);
    }
    let report = ascend(&problem, &config).map_err(wrap!("synth"))?;

    let io = |e: std::io::Error| CliError::new("io", format!("{}: {e}", out.display()));
    fs::create_dir_all(out).map_err(io)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(out.join("report.json"), json).map_err(io)?;
    fs::write(out.join("convergence.csv"), convergence_csv(&report)).map_err(io)?;
    fs::write(out.join("best_controls.csv"), controls_csv(&report.best_controls)).map_err(io)?;
    for r in &report.restarts {
        let traj = problem.nominal(&r.controls).map_err(wrap!("synth"))?;
        fs::write(out.join(format!("restart_{:03}.csv", r.restart)), traj.to_csv_string()).map_err(io)?;
    }
    let best = problem.nominal(&report.best_controls).map_err(wrap!("synth"))?;
    fs::write(out.join("best_trajectory.csv"), best.to_csv_string()).map_err(io)?;

    println!(
        "{}",
        json!({
            "scenario": sc.name(),
            "semantics": config.semantics.as_str(),
            "best_restart": report.best_restart,
            "best_mc": report.best_mc,
            "final_probabilities": report.final_probabilities(),
            "aborted_restarts": report.restarts.iter().filter(|r| r.aborted.is_some()).count(),
            "mean_seconds_per_step": report.mean_seconds_per_step,
            "out": out.display().to_string(),
        })
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    scenario: &Path,
    ns_list: &[usize],
    nu_list: &[usize],
    workers: &[usize],
    steps: usize,
    semantics: Option<Semantics>,
    seed: &SeedArg,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let sc = load_scenario(scenario)?;
    let mut config = sc.synth_config();
    config.seed = seed.resolve(&sc)?;
    config.semantics = semantics.unwrap_or(config.semantics);
    let problem = sc.problem().map_err(wrap!("ground"))?;
    let rows = bench(&problem, &config, ns_list, nu_list, workers, steps).map_err(wrap!("bench"))?;
    let mut csv = String::from("ns,nu,workers,mean_seconds,var_seconds\n");
    for r in rows {
        writeln!(csv, "{},{},{},{:?},{:?}", r.ns, r.nu, r.workers, r.mean_seconds, r.var_seconds)
            .expect("writing to a string");
    }
    write_out(out, &csv)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Parse {
            formula,
            horizon,
            anchor,
        } => cmd_parse(&formula, horizon, anchor),
        Command::Eval {
            scenario,
            trajectory,
            semantics,
            mc_samples,
            seed,
        } => cmd_eval(&scenario, &trajectory, semantics, mc_samples, &seed),
        Command::Compare {
            scenario,
            trajectories,
            formulas,
            mc_samples,
            seed,
            out,
        } => cmd_compare(&scenario, &trajectories, &formulas, mc_samples, &seed, out.as_deref()),
        Command::Synth { scenario, out, knobs } => cmd_synth(&scenario, &out, &knobs),
        Command::Bench {
            scenario,
            ns_list,
            nu_list,
            workers,
            steps,
            semantics,
            seed,
            out,
        } => cmd_bench(&scenario, &ns_list, &nu_list, &workers, steps, semantics, &seed, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", CliError::new("usage", first).to_json_line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::FAILURE
        }
    }
}
