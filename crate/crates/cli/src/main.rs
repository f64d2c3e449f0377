use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use enkopt::harness::{format_float, run_experiment, run_suite, suite_entries, ExperimentSummary, SUITE_EXPERIMENTS};
use enkopt::linalg::SpdMatrix;
use enkopt::methods::EnsMethod;
use enkopt::oracles::{eki_moments, eki_sl_moments, iekf_sl_moments, teki_moments, MomentTrajectory};
use enkopt::{Error, ExperimentConfig, MethodId, ProblemSpec};

const OUT_ENV: &str = "ENKOPT_OUT";

/// Iterative Kalman-type optimizers and their benchmark experiments.
#[derive(Parser, Debug)]
#[command(name = "enkopt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment from flags and/or a JSON config file.
    Run(RunArgs),
    /// Run the four benchmark experiments with their default settings.
    Suite(SuiteArgs),
    /// Print mean-field moment trajectories for a linear-Gaussian problem.
    Oracle(OracleArgs),
    /// List method and problem ids.
    List,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    members: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    /// Final time T; the run uses round(T / alpha) iterations.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON file holding an explicit initial ensemble (list of members).
    #[arg(long)]
    initial_ensemble: Option<PathBuf>,
    /// Output directory for trial CSVs, aggregate and manifest.
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SuiteArgs {
    #[arg(long, env = OUT_ENV)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Restrict to these experiments (repeatable).
    #[arg(long = "experiment", value_parser = clap::builder::PossibleValuesParser::new(SUITE_EXPERIMENTS))]
    experiments: Vec<String>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// One of eki, teki, iekf-sl, eki-sl.
    #[arg(long)]
    method: String,
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Seed of the random linear-Gaussian problem.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2.0)]
    t_end: f64,
    /// Number of equally spaced sample times in [0, t_end].
    #[arg(long, default_value_t = 21)]
    points: usize,
}

/// Exit 1 for configuration, usage and I/O errors; exit 2 when every trial
/// diverged.
enum Failure {
    Config(String),
    Diverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Suite(a) => cmd_suite(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::List => {
            cmd_list();
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Diverged(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn cmd_list() {
    println!("methods:");
    for m in MethodId::all() {
        let kind = if m.is_ensemble() { "ensemble" } else { "derivative" };
        println!("  {:<10} {kind}", m.id());
    }
    println!("problems:");
    for p in ProblemSpec::IDS {
        println!("  {p}");
    }
}

fn build_config(a: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut doc = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(Failure::Config(format!("{}: expected a JSON object", path.display()))),
                Err(e) => return Err(Failure::Config(format!("{}: {e}", path.display()))),
            }
        }
        None => Map::new(),
    };
    if let Some(p) = &a.problem {
        let spec = ProblemSpec::from_id(p)?;
        doc.insert("problem".into(), serde_json::to_value(spec).expect("problem spec serializes"));
    }
    if let Some(m) = &a.method {
        doc.insert("method".into(), json!(m));
    }
    if let Some(x) = a.alpha {
        doc.insert("alpha".into(), json!(x));
    }
    if let Some(n) = a.members {
        doc.insert("n_members".into(), json!(n));
    }
    match (a.iters, a.horizon) {
        (Some(n), h) => {
            doc.insert("n_iters".into(), json!(n));
            doc.insert("horizon".into(), h.map_or(Value::Null, |t| json!(t)));
        }
        (None, Some(t)) => {
            doc.insert("horizon".into(), json!(t));
            doc.insert("n_iters".into(), Value::Null);
        }
        (None, None) => {}
    }
    if let Some(n) = a.trials {
        doc.insert("n_trials".into(), json!(n));
    }
    if let Some(s) = a.seed {
        doc.insert("base_seed".into(), json!(s));
    }
    if let Some(p) = &a.initial_ensemble {
        doc.insert("initial_ensemble".into(), json!(p));
    }
    if let Some(o) = &a.out {
        doc.insert("output_dir".into(), json!(o));
    }
    for key in ["problem", "method", "alpha"] {
        if !doc.contains_key(key) {
            return Err(Failure::Config(format!("missing '{key}' (pass --{key} or set it in --config)")));
        }
    }
    Ok(ExperimentConfig::from_json(&Value::Object(doc).to_string())?)
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let cfg = build_config(&a)?;
    let summary = run_experiment(&cfg)?;
    print_summary(cfg.problem.id(), &summary);
    if summary.all_diverged() {
        return Err(Failure::Diverged(format!("all {} trials diverged", summary.traces.len())));
    }
    Ok(())
}

fn cmd_suite(a: SuiteArgs) -> Result<(), Failure> {
    if a.trials == 0 {
        return Err(Failure::Config("--trials must be at least 1".into()));
    }
    let entries: Vec<_> = suite_entries(a.seed, a.trials, Some(&a.out))
        .into_iter()
        .filter(|e| a.experiments.is_empty() || a.experiments.iter().any(|x| x == e.experiment))
        .collect();
    let results = run_suite(&entries, Some(&a.out))?;
    for r in &results {
        print_summary(r.experiment, &r.summary);
    }
    if results.iter().all(|r| r.summary.all_diverged()) {
        return Err(Failure::Diverged("every run diverged in all trials".into()));
    }
    println!("wrote {}", a.out.join("suite.json").display());
    Ok(())
}

fn print_summary(experiment: &str, s: &ExperimentSummary) {
    let method = s.config.method.id();
    let n = s.traces.len();
    match s.aggregate.iter().rev().find(|r| r.active > 0) {
        Some(r) => println!(
            "{experiment} {method}: {n} trials, {} diverged, iter {} rel_err {} [{}, {}] cov_frob {}",
            s.diverged_trials,
            r.iter,
            short(r.rel_err.mean),
            short(r.rel_err.q10),
            short(r.rel_err.q90),
            short(r.cov_frob.mean),
        ),
        None => println!("{experiment} {method}: {n} trials, all diverged"),
    }
    if let Some(dir) = &s.config.output_dir {
        println!("  -> {}", dir.display());
    }
}

fn short(x: f64) -> String {
    format!("{x:.4e}")
}

fn cmd_oracle(a: OracleArgs) -> Result<(), Failure> {
    let method: EnsMethod = a
        .method
        .parse::<MethodId>()
        .ok()
        .and_then(|m| match m {
            MethodId::Ensemble(e @ (EnsMethod::Eki | EnsMethod::Teki | EnsMethod::IekfSl | EnsMethod::EkiSl)) => Some(e),
            _ => None,
        })
        .ok_or_else(|| Failure::Config(format!("no mean-field oracle for '{}'; use eki, teki, iekf-sl or eki-sl", a.method)))?;
    if a.points < 2 || !(a.t_end > 0.0 && a.t_end.is_finite()) {
        return Err(Failure::Config("need --points >= 2 and a positive --t-end".into()));
    }
    let p = ProblemSpec::Linear { d: a.d, k: a.k, seed: a.seed }.build()?;
    let h = p.model().jacobian(&p.prior.mean).expect("linear model has a Jacobian");
    let (m0, c0): (_, &SpdMatrix) = (p.prior.mean.clone(), &p.prior.cov);
    let times: Vec<f64> = (0..a.points).map(|i| a.t_end * i as f64 / (a.points - 1) as f64).collect();
    let traj = MomentTrajectory::sample(&times, |t| match method {
        EnsMethod::Eki => eki_moments(t, &m0, c0, &h, &p.noise, &p.data),
        EnsMethod::Teki => teki_moments(t, &m0, c0, &h, &p.noise, &p.prior, &p.data),
        EnsMethod::IekfSl => iekf_sl_moments(t, &m0, c0, &h, &p.noise, &p.prior, &p.data),
        _ => eki_sl_moments(t, &m0, c0, &h, &p.noise, &p.prior.cov, &p.data),
    })?;
    print!("{}", moments_csv(&traj, a.d));
    Ok(())
}

fn moments_csv(traj: &MomentTrajectory, d: usize) -> String {
    let mut head = vec!["t".to_string()];
    head.extend((0..d).map(|i| format!("m_{i}")));
    for i in 0..d {
        head.extend((0..d).map(|j| format!("c_{i}_{j}")));
    }
    let mut out = head.join(",") + "\n";
    for ((t, m), c) in traj.times.iter().zip(&traj.means).zip(&traj.covs) {
        let mut row = vec![format_float(*t)];
        row.extend(m.iter().map(|x| format_float(*x)));
        for i in 0..d {
            row.extend((0..d).map(|j| format_float(c[(i, j)])));
        }
        out += &(row.join(",") + "\n");
    }
    out
}
