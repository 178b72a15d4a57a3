use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sparsectl::models::ResolvedModel;
use sparsectl::plan::{self, RunManifest, CSV_SCHEMA_VERSION, PLAN_SCHEMA_VERSION};
use sparsectl::sim::{self, DecayReport, DEFAULT_TOL_REL};
use sparsectl::synth::{self, f_value, g_value};
use sparsectl::{rng, Error, ModelSpec, SimConfig, SynthSettings, Verdict};

#[derive(Parser, Debug)]
#[command(name = "sparsectl", version, about = "Randomized sparse state-feedback synthesis and simulation")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "SPARSECTL_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the rank and projected-spectrum assumptions of a plant.
    Check {
        /// `builtin:converter`, `builtin:grid?nodes=..`, `builtin:chain?N=..` or a plant file.
        model: String,
    },
    /// Synthesize a gain and sensing probabilities.
    Synth(SynthArgs),
    /// Monte Carlo ensemble for a plan.
    Simulate(SimulateArgs),
    /// One ensemble per uniform probability, with common random numbers.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    model: String,
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    #[arg(long, default_value_t = 1e-4)]
    p_floor: f64,
    #[arg(long, default_value_t = 1e-4)]
    epsilon_p: f64,
    /// Per-coordinate probabilities instead of a single p.
    #[arg(long)]
    adaptive: bool,
    /// Comma-separated sensing costs (adaptive mode). Defaults to the
    /// plant file's weights, then to all ones.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long, default_value = "plan.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EnsembleArgs {
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Standard deviation of the initial coordinates.
    #[arg(long, default_value_t = 100.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated state indices whose ensemble mean goes into the CSV.
    #[arg(long, value_delimiter = ',')]
    record: Vec<usize>,
}

impl EnsembleArgs {
    fn config(&self) -> SimConfig {
        SimConfig {
            steps: self.steps,
            runs: self.runs,
            init_sigma: self.sigma,
            master_seed: self.seed,
            record_components: self.record.clone(),
        }
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    model: String,
    #[arg(long)]
    plan: PathBuf,
    /// Uniform probability overriding the plan.
    #[arg(long, conflicts_with = "p_vec")]
    p: Option<f64>,
    /// Comma-separated per-coordinate probabilities overriding the plan.
    #[arg(long, value_delimiter = ',')]
    p_vec: Option<Vec<f64>>,
    #[command(flatten)]
    ensemble: EnsembleArgs,
    #[arg(long, default_value = "run.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    model: String,
    #[arg(long)]
    plan: PathBuf,
    /// Comma-separated probabilities; `pstar` stands for the plan's value.
    #[arg(long, value_delimiter = ',', required = true)]
    p_list: Vec<String>,
    #[command(flatten)]
    ensemble: EnsembleArgs,
    #[arg(long, default_value = "sweep")]
    out_dir: PathBuf,
}

/// Exit status 1: the run completed and the answer is negative.
/// Exit status 2: the run could not be carried out.
enum Failure {
    Domain(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::RankDeficient { .. }
            | Error::Structural(_)
            | Error::Infeasible(_)
            | Error::InvalidCertificate(_)
            | Error::PlanMismatch(_) => Failure::Domain(e.to_string()),
            Error::InvalidInput(_) | Error::Load { .. } | Error::Io { .. } => {
                Failure::Usage(e.to_string())
            }
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Check { model } => cmd_check(model),
        Command::Synth(args) => cmd_synth(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn resolve(model: &str) -> Result<ResolvedModel, Failure> {
    let spec: ModelSpec = model.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    // Anything wrong with the model itself (bad file, bad parameters) is a usage error.
    spec.resolve().map_err(|e| Failure::Usage(e.to_string()))
}

fn create_dir_for(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Usage(format!("{}: {e}", dir.display()))),
        _ => Ok(()),
    }
}

fn manifest(
    started: Instant,
    config: serde_json::Value,
    model: &ResolvedModel,
    seeds: serde_json::Value,
    outputs: Vec<PathBuf>,
) -> RunManifest {
    RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: std::env::args().collect(),
        config,
        model: json!({ "uri": model.spec.to_string(), "plant": model.plant.name(),
                       "n": model.plant.n(), "m": model.plant.m(),
                       "fingerprint": model.plant.fingerprint(), "details": model.metadata }),
        seeds,
        generator: rng::GENERATOR_NAME.to_string(),
        csv_schema_version: CSV_SCHEMA_VERSION,
        plan_schema_version: PLAN_SCHEMA_VERSION,
        duration_secs: started.elapsed().as_secs_f64(),
        outputs,
    }
}

fn cmd_check(model: &str) -> CmdResult {
    let resolved = resolve(model)?;
    let plant = &resolved.plant;
    let report = synth::check_assumptions(plant);
    println!("model        {}", resolved.spec);
    println!("dimensions   n = {}, m = {}", plant.n(), plant.m());
    println!(
        "rank(B)      {} of {} ({})",
        report.rank_b,
        report.m,
        if report.rank_ok { "full column rank" } else { "rank deficient" }
    );
    println!("a_n          {}", report.a_n);
    println!("spectral_ok  {}", report.spectral_ok);
    match report.violation() {
        None => Ok(()),
        Some(msg) => Err(Failure::Domain(msg)),
    }
}

fn cmd_synth(args: &SynthArgs) -> CmdResult {
    let started = Instant::now();
    let resolved = resolve(&args.model)?;
    let plant = &resolved.plant;
    let settings = SynthSettings {
        delta: args.delta,
        p_floor: args.p_floor,
        epsilon_p: args.epsilon_p,
    };
    let plan = if args.adaptive {
        let weights = match (&args.weights, plant.weights()) {
            (Some(w), _) => w.clone(),
            (None, Some(w)) => w.to_vec(),
            (None, None) => vec![1.0; plant.n()],
        };
        synth::algorithm2(plant, &weights, &settings)?
    } else {
        if args.weights.is_some() {
            return Err(Failure::Usage("--weights only applies with --adaptive".into()));
        }
        synth::algorithm1(plant, &settings)?
    };

    create_dir_for(&args.out)?;
    let manifest_path = plan::sibling(&args.out, "manifest.json");
    plan::save_plan(&plan, plant, &args.out, Some(&manifest_path))?;
    let m = manifest(
        started,
        json!({ "command": "synth", "delta": settings.delta, "p_floor": settings.p_floor,
                "epsilon_p": settings.epsilon_p, "adaptive": args.adaptive,
                "weights": plan.weights, "out": args.out }),
        &resolved,
        json!({}),
        vec![args.out.clone()],
    );
    plan::write_json(&m, &manifest_path)?;

    match &plan.sensing {
        synth::Sensing::Uniform { p_star, degenerate } => {
            println!("p_star             {p_star}{}", if *degenerate { " (degenerate)" } else { "" });
        }
        synth::Sensing::Adaptive { p_vec, .. } => println!("p_vec              {p_vec:?}"),
    }
    println!("gamma              {}", plan.cert.gamma);
    println!("t                  {}", plan.cert.t);
    println!("|A+BK|^2           {}", plan.cert.d_norm_sq);
    println!("contraction        {}", plan.contraction);
    println!("expected sparsity  {}", plan.expected_sparsity);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn summary_json(report: &DecayReport, stats: &sparsectl::EnsembleStats) -> serde_json::Value {
    json!({
        "verdict": report.verdict,
        "threshold_step": report.threshold_step,
        "bound": report.bound,
        "initial_mean_sq_norm": stats.mean_sq_norm[0],
        "final_mean_sq_norm": stats.mean_sq_norm[stats.steps],
        "diverged_runs": stats.diverged_runs,
    })
}

fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    let started = Instant::now();
    let resolved = resolve(&args.model)?;
    let plant = &resolved.plant;
    let plan = plan::load_plan(&args.plan, plant)?;
    let (probs, contraction) = match (&args.p, &args.p_vec) {
        (Some(p), _) => (vec![*p; plant.n()], f_value(&plan.cert, *p).map_err(Failure::from)),
        (None, Some(v)) => (v.clone(), g_value(&plan.cert, v).map_err(Failure::from)),
        (None, None) => (plan.probs(), Ok(plan.contraction)),
    };
    // A bad override is a usage error, not a finding.
    let contraction = contraction.map_err(|f| match f {
        Failure::Domain(m) | Failure::Usage(m) => Failure::Usage(m),
    })?;
    let cfg = args.ensemble.config();
    let stats = sim::run_ensemble_with(plant, &plan.cert.gain, &probs, &cfg, cfg.master_seed)?;
    let report = sim::decay_report(&stats, contraction, DEFAULT_TOL_REL)?;

    create_dir_for(&args.out)?;
    let summary_path = plan::sibling(&args.out, "summary.json");
    let manifest_path = plan::sibling(&args.out, "manifest.json");
    plan::save_stats_csv(&stats, &args.out)?;
    let mut summary = summary_json(&report, &stats);
    summary["probs"] = json!(probs);
    summary["csv"] = json!(args.out);
    summary["manifest"] = json!(manifest_path);
    plan::write_json(&summary, &summary_path)?;
    let m = manifest(
        started,
        json!({ "command": "simulate", "plan": args.plan, "probs": probs, "runs": cfg.runs,
                "steps": cfg.steps, "sigma": cfg.init_sigma, "record": cfg.record_components,
                "tol_rel": DEFAULT_TOL_REL, "out": args.out }),
        &resolved,
        json!({ "master": cfg.master_seed, "mask": cfg.master_seed, "initial_state": cfg.master_seed }),
        vec![args.out.clone(), summary_path.clone()],
    );
    plan::write_json(&m, &manifest_path)?;

    println!("verdict          {}", report.verdict);
    match report.threshold_step {
        Some(k) => println!("threshold step   {k}"),
        None => println!("threshold step   not reached"),
    }
    println!("bound            {}", report.bound);
    println!("final E|x|^2     {:e}", stats.mean_sq_norm[stats.steps]);
    println!("wrote {}", args.out.display());
    if report.verdict == Verdict::Diverged {
        return Err(Failure::Domain("ensemble diverged".into()));
    }
    Ok(())
}

/// Parses `--p-list`, resolving `pstar` and dropping repeats.
fn parse_p_list(tokens: &[String], p_star: Option<f64>) -> Result<Vec<f64>, Failure> {
    let mut out: Vec<f64> = Vec::new();
    for tok in tokens.iter().map(|t| t.trim()).filter(|t| !t.is_empty()) {
        let p = if tok.eq_ignore_ascii_case("pstar") {
            p_star.ok_or_else(|| Failure::Usage("`pstar` needs a uniform plan".into()))?
        } else {
            tok.parse::<f64>()
                .map_err(|_| Failure::Usage(format!("cannot parse probability `{tok}`")))?
        };
        if out.contains(&p) {
            eprintln!("warning: duplicate probability {p} dropped from --p-list");
            continue;
        }
        out.push(p);
    }
    if out.is_empty() {
        return Err(Failure::Usage("--p-list is empty".into()));
    }
    Ok(out)
}

fn cmd_sweep(args: &SweepArgs) -> CmdResult {
    let started = Instant::now();
    let resolved = resolve(&args.model)?;
    let plant = &resolved.plant;
    let plan = plan::load_plan(&args.plan, plant)?;
    let p_star = match plan.sensing {
        synth::Sensing::Uniform { p_star, .. } => Some(p_star),
        synth::Sensing::Adaptive { .. } => None,
    };
    let p_list = parse_p_list(&args.p_list, p_star)?;
    let cfg = args.ensemble.config();
    let entries = sim::sweep_p(plant, &plan.cert, &p_list, &cfg).map_err(|e| match e {
        Error::InvalidInput(m) => Failure::Usage(m),
        other => other.into(),
    })?;

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Failure::Usage(format!("{}: {e}", args.out_dir.display())))?;
    let manifest_path = args.out_dir.join("manifest.json");
    let summary_path = args.out_dir.join("summary.json");
    let mut outputs = Vec::new();
    let mut rows = Vec::new();
    for (i, entry) in entries.iter().enumerate() {
        let csv = args.out_dir.join(format!("p_{}.csv", entry.p));
        plan::save_stats_csv(&entry.stats, &csv)?;
        let mut row = summary_json(&entry.report, &entry.stats);
        row["p"] = json!(entry.p);
        row["mask_seed"] = json!(sim::sweep_mask_seed(cfg.master_seed, i));
        row["csv"] = json!(csv);
        rows.push(row);
        outputs.push(csv);
        println!(
            "p = {:<10} {:<12} threshold step {:<6} final E|x|^2 {:e}",
            entry.p,
            entry.report.verdict.to_string(),
            entry.report.threshold_step.map_or("-".to_string(), |k| k.to_string()),
            entry.stats.mean_sq_norm[entry.stats.steps]
        );
    }
    plan::write_json(&json!({ "entries": rows, "manifest": manifest_path }), &summary_path)?;
    outputs.push(summary_path);
    let mask_seeds: Vec<u64> = (0..p_list.len()).map(|i| sim::sweep_mask_seed(cfg.master_seed, i)).collect();
    let m = manifest(
        started,
        json!({ "command": "sweep", "plan": args.plan, "p_list": p_list, "runs": cfg.runs,
                "steps": cfg.steps, "sigma": cfg.init_sigma, "record": cfg.record_components,
                "tol_rel": DEFAULT_TOL_REL, "out_dir": args.out_dir }),
        &resolved,
        json!({ "master": cfg.master_seed, "initial_state": cfg.master_seed, "mask": mask_seeds }),
        outputs,
    );
    plan::write_json(&m, &manifest_path)?;
    Ok(())
}
