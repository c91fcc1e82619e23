//! `strata`: generate data, estimate scores, recover layered latents and
//! evaluate them, one stage per subcommand or end to end from a config.
//!
//! Exit codes: 0 success, 1 runtime failure (including a stalled recovery,
//! whose partial result is still written), 2 bad usage or configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use strata::experiment::{
    evaluate, observed_scores, read_recovery, score_source, write_recovery, ExperimentConfig,
    NamedGraph,
};
use strata::oracle::write_batch;
use strata::recovery::{recover_latents, recover_noise, FixedSource, RecoveryConfig, RegressionConfig};
use strata::synth::Dataset;
use strata::{Error, GraphSpec, MechanismRegistry, Scm, ScoreMode, SolverConfig, SteinConfig};

#[derive(Parser)]
#[command(name = "strata", version, about = "Layer-by-layer recovery of causal latents from mixed observations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample an SCM, scale the latents and mix them into observations.
    Generate(GenerateArgs),
    /// Write observed-space score Jacobians for a dataset.
    Score(ScoreArgs),
    /// Recover latents and noises from a dataset.
    Recover(RecoverArgs),
    /// Compare recovered quantities against a dataset's ground truth.
    Evaluate(EvaluateArgs),
    /// Run a full experiment from a JSON config.
    Experiment(ExperimentArgs),
    /// Noise MAC against perturbation SER over several seeds.
    SerSweep(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// `line4`, `y4` or a path to an SCM JSON document.
    #[arg(long)]
    graph: String,
    #[arg(long = "n", default_value_t = 2000)]
    n_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Observation dimension (defaults to the latent count).
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Oracle,
    Stein,
    Perturbed,
}

#[derive(Args)]
struct ModeArgs {
    #[arg(long, value_enum, default_value = "oracle")]
    mode: Mode,
    /// Signal-to-error ratio for `--mode perturbed`.
    #[arg(long)]
    ser: Option<f64>,
    #[arg(long)]
    stein_bandwidth: Option<f64>,
    #[arg(long)]
    stein_ridge: Option<f64>,
}

impl ModeArgs {
    fn score_mode(&self) -> Result<ScoreMode, Error> {
        match (self.mode, self.ser) {
            (Mode::Perturbed, Some(ser)) => Ok(ScoreMode::Perturbed { ser }),
            (Mode::Perturbed, None) => Err(Error::Config("--mode perturbed needs --ser".into())),
            (_, Some(_)) => Err(Error::Config("--ser only applies to --mode perturbed".into())),
            (Mode::Oracle, None) => Ok(ScoreMode::Oracle),
            (Mode::Stein, None) => Ok(ScoreMode::Stein),
        }
    }

    fn stein(&self) -> Result<SteinConfig, Error> {
        let cfg = SteinConfig { bandwidth: self.stein_bandwidth, ridge: self.stein_ridge };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    mode: ModeArgs,
    /// Output batch file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RecoverArgs {
    #[arg(long)]
    data: PathBuf,
    /// Observed-space Jacobians from `strata score`; later rounds pull them back.
    #[arg(long, conflicts_with_all = ["mode", "ser"])]
    scores: Option<PathBuf>,
    #[command(flatten)]
    mode: ModeArgs,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Fraction of highest-objective samples dropped before the final solve.
    #[arg(long)]
    prune: Option<f64>,
    /// Emit coordinates the solver finds instead of thresholding variances.
    /// Defaults to on for every mode except the oracle.
    #[arg(long)]
    auto_tol: Option<bool>,
    #[arg(long)]
    var_tol: Option<f64>,
    /// Write per-restart solver summaries to `solver_trace.jsonl`.
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    recovered: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    beta_threshold: f64,
    /// Defaults to `evaluation.json` inside the recovered directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Base config; its score mode is replaced per grid point.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,1000000")]
    grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn load_dataset(dir: &Path) -> Result<Dataset, Error> {
    Dataset::read(dir, &MechanismRegistry::default())
}

fn generate(a: &GenerateArgs) -> Result<(), Error> {
    let registry = MechanismRegistry::default();
    let scm = match a.graph.as_str() {
        "line4" => GraphSpec::Named(NamedGraph::Line4).build(a.seed, &registry)?,
        "y4" => GraphSpec::Named(NamedGraph::Y4).build(a.seed, &registry)?,
        path => Scm::from_json_str(&std::fs::read_to_string(path)?, &registry)?,
    };
    let d = a.d.unwrap_or(scm.n());
    let data = Dataset::generate(&scm, a.n_samples, d, a.seed)?;
    data.write(&a.out)?;
    println!("wrote {} samples ({} latents, {d} observed) to {}", a.n_samples, scm.n(), a.out.display());
    Ok(())
}

fn score(a: &ScoreArgs) -> Result<(), Error> {
    let data = load_dataset(&a.data)?;
    let batch = observed_scores(&data, &a.mode.score_mode()?, &a.mode.stein()?)?;
    write_batch(&a.out, &batch)?;
    println!("wrote {} Jacobians of size {}×{1} to {}", batch.len(), batch.dim(), a.out.display());
    Ok(())
}

fn recover(a: &RecoverArgs) -> Result<(), Error> {
    let data = load_dataset(&a.data)?;
    let (mut source, exact): (Box<dyn strata::recovery::JacobianSource>, bool) = match &a.scores {
        Some(path) => (Box::new(FixedSource { batch: strata::oracle::read_batch(path)? }), false),
        None => {
            let mode = a.mode.score_mode()?;
            (score_source(&mode, &a.mode.stein()?, &data, data.seed)?, mode.is_exact())
        }
    };
    let defaults = RecoveryConfig::default();
    let solver = SolverConfig::default();
    let cfg = RecoveryConfig {
        solver: SolverConfig {
            tol: a.tol.unwrap_or(solver.tol),
            restarts: a.restarts.unwrap_or(solver.restarts),
            prune_fraction: a.prune.unwrap_or(solver.prune_fraction),
            auto_tol: a.auto_tol.unwrap_or(!exact),
            seed: data.seed,
            ..solver
        },
        var_tol: a.var_tol.unwrap_or(defaults.var_tol),
        trace: a.trace,
    };
    if !(cfg.var_tol > 0.0) {
        return Err(Error::Config("--var-tol must be positive".into()));
    }
    let n = data.scm.n();
    let (result, stalled) = match recover_latents(&data.batch.x, n, source.as_mut(), &cfg) {
        Ok(r) => (r, None),
        Err(Error::Stalled { round, partial }) => (*partial, Some(round)),
        Err(e) => return Err(e),
    };
    let reg = RegressionConfig { seed: data.seed, ..RegressionConfig::default() };
    let noise = recover_noise(&result, &reg)?;
    write_recovery(&result, Some(&noise), &a.out)?;
    if a.trace {
        let mut s = String::new();
        for t in &result.trace {
            s.push_str(&serde_json::to_string(t)?);
            s.push('\n');
        }
        std::fs::write(a.out.join("solver_trace.jsonl"), s)?;
    }
    for log in &result.rounds {
        println!(
            "round {}: dim {}, found {}, emitted {:?}{}",
            log.round,
            log.dim,
            log.found,
            log.emitted,
            if log.lumped { " (lumped)" } else { "" }
        );
    }
    match stalled {
        Some(round) => Err(Error::Stalled { round, partial: Box::new(result) }),
        None => Ok(()),
    }
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<(), Error> {
    if !(a.beta_threshold >= 0.0) {
        return Err(Error::Config("--beta-threshold must be non-negative".into()));
    }
    let data = load_dataset(&a.data)?;
    let rec = read_recovery(&a.recovered)?;
    let ev = evaluate(&data, &rec, a.beta_threshold)?;
    let out = a.out.clone().unwrap_or_else(|| a.recovered.join("evaluation.json"));
    std::fs::write(&out, serde_json::to_string_pretty(&ev)? + "\n")?;
    println!("latent MAC {:.4}", ev.latents.mac);
    if let Some(noises) = &ev.noises {
        println!("noise MAC {:.4}", noises.mac);
    }
    println!("upstream structure {}", if ev.beta.passed { "ok" } else { "violated" });
    Ok(())
}

fn read_config(path: &Path) -> Result<ExperimentConfig, Error> {
    ExperimentConfig::from_json_str(&std::fs::read_to_string(path)?)
}

fn experiment(a: &ExperimentArgs) -> Result<(), Error> {
    let mut cfg = read_config(&a.config)?;
    if let Some(out) = &a.out {
        cfg.out_dir = Some(out.clone());
    }
    let out = strata::run_experiment(&cfg)?;
    let rep = &out.report;
    println!("status {:?}, layers {:?}", rep.status, rep.layer_of);
    println!("latent MAC {:.4}, noise MAC {:.4}", rep.latents.mac, rep.noises.mac);
    println!("upstream structure {}", if rep.beta.passed { "ok" } else { "violated" });
    println!("elapsed {:.1} s", out.elapsed_secs);
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<(), Error> {
    let mut cfg = read_config(&a.config)?;
    cfg.out_dir = None;
    let res = strata::ser_sweep(&cfg, &a.grid, &a.seeds)?;
    res.write(&a.out)?;
    for row in &res.rows {
        println!("SER {:>10}: MAC {:.4} ± {:.4}", row.ser, row.mean_mac, row.sd_mac);
    }
    if let Some(rho) = res.spearman {
        println!("Spearman(SER, MAC) {rho:.3}");
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Format(_) | Error::UnknownMechanism(_) | Error::Json(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Score(a) => score(a),
        Command::Recover(a) => recover(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Experiment(a) => experiment(a),
        Command::SerSweep(a) => sweep(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
