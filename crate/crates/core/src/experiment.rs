//! Seeded end-to-end runs: generate data, obtain scores, recover latents and
//! noises, evaluate against ground truth and write everything to disk.
//!
//! Every artifact except `manifest.json` is a pure function of the config, so
//! two runs of the same config produce byte-identical reports and CSVs.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{mac, mean_sd, spearman, EvalReport};
use crate::graph::Dag;
use crate::io::{read_matrix_csv, write_json, write_matrix_csv};
use crate::mechanism::MechanismRegistry;
use crate::oracle::{latent_to_observed, oracle_batch_with_residuals, read_batch, JacobianBatch};
use crate::recovery::{
    beta_report, check_upstream_structure, recover_latents, recover_noise, BetaReport, FixedSource,
    JacobianSource, NoiseResult, OracleSource, PerturbedSource, RecoveryConfig, RecoveryResult,
    RecoveryStatus, RegressionConfig, RegressionModel, RegressorInputs, RoundLog, SteinSource,
};
use crate::scm::{Scm, ScmDoc};
use crate::solver::SolverConfig;
use crate::stein::{stein_jacobian, SteinConfig};
use crate::svg;
use crate::synth::{sample_noise_variances, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedGraph {
    /// Z1 → Z2 → Z3 → Z4.
    Line4,
    /// Z1 → Z2 → {Z3, Z4}.
    Y4,
}

/// A named benchmark graph (squared-norm mechanisms, σ² ~ U[0.1, 1] drawn
/// from the seed) or a full SCM document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSpec {
    Named(NamedGraph),
    Custom(ScmDoc),
}

impl GraphSpec {
    pub fn build(&self, seed: u64, registry: &MechanismRegistry) -> Result<Scm> {
        match self {
            GraphSpec::Named(g) => {
                let dag = match g {
                    NamedGraph::Line4 => Dag::line(4),
                    NamedGraph::Y4 => Dag::y_structure(),
                };
                let vars = sample_noise_variances(dag.n(), seed);
                Scm::squared_norm(dag, vars)
            }
            GraphSpec::Custom(doc) => Scm::from_doc(doc, registry),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Exact Jacobians of each round's marginal.
    Oracle,
    /// Kernel Stein estimates re-fitted every round.
    Stein,
    /// Oracle Jacobians with Gaussian noise at the given SER.
    Perturbed { ser: f64 },
    /// Observed-space Jacobians from a batch file (round 0 only).
    External { path: PathBuf },
}

impl ScoreMode {
    pub fn is_exact(&self) -> bool {
        matches!(self, ScoreMode::Oracle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSection {
    pub tol: f64,
    pub restarts: usize,
    pub prune: f64,
    /// `None`: on for every score mode except the oracle.
    pub auto_tol: Option<bool>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self { tol: s.tol, restarts: s.restarts, prune: s.prune_fraction, auto_tol: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionSection {
    pub ridge: Option<f64>,
    pub bandwidth: Option<f64>,
    pub poly: bool,
    pub inputs: RegressorInputs,
}

impl Default for RegressionSection {
    fn default() -> Self {
        let r = RegressionConfig::default();
        Self { ridge: r.ridge, bandwidth: r.bandwidth, poly: r.poly, inputs: r.inputs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub graph: GraphSpec,
    #[serde(rename = "N", alias = "n_samples")]
    pub n_samples: usize,
    pub seed: u64,
    pub score_mode: ScoreMode,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub regression: RegressionSection,
    #[serde(default)]
    pub stein: SteinConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Observation dimension; defaults to the latent count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default = "default_var_tol")]
    pub var_tol: f64,
    #[serde(default = "default_beta_threshold")]
    pub beta_threshold: f64,
    /// Dump per-restart solver summaries to `solver_trace.jsonl`.
    #[serde(default)]
    pub trace: bool,
}

fn default_var_tol() -> f64 {
    RecoveryConfig::default().var_tol
}

fn default_beta_threshold() -> f64 {
    0.05
}

impl ExperimentConfig {
    pub fn new(graph: GraphSpec, n_samples: usize, seed: u64, score_mode: ScoreMode) -> Self {
        Self {
            graph,
            n_samples,
            seed,
            score_mode,
            solver: SolverSection::default(),
            regression: RegressionSection::default(),
            stein: SteinConfig::default(),
            out_dir: None,
            d: None,
            var_tol: default_var_tol(),
            beta_threshold: default_beta_threshold(),
            trace: false,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::Config("N must be at least 2".into()));
        }
        if let ScoreMode::Perturbed { ser } = self.score_mode {
            if !(ser > 0.0) || !ser.is_finite() {
                return Err(Error::Config("perturbation SER must be positive and finite".into()));
            }
        }
        if !(self.var_tol > 0.0) {
            return Err(Error::Config("var_tol must be positive".into()));
        }
        if !(self.beta_threshold >= 0.0) {
            return Err(Error::Config("beta_threshold must be non-negative".into()));
        }
        self.stein.validate()?;
        self.regression_config().validate()?;
        self.recovery_config().solver.validate()
    }

    pub fn recovery_config(&self) -> RecoveryConfig {
        let s = &self.solver;
        RecoveryConfig {
            solver: SolverConfig {
                tol: s.tol,
                restarts: s.restarts,
                prune_fraction: s.prune,
                auto_tol: s.auto_tol.unwrap_or(!self.score_mode.is_exact()),
                seed: self.seed,
                ..SolverConfig::default()
            },
            var_tol: self.var_tol,
            trace: self.trace,
        }
    }

    pub fn regression_config(&self) -> RegressionConfig {
        let r = &self.regression;
        RegressionConfig {
            ridge: r.ridge,
            bandwidth: r.bandwidth,
            poly: r.poly,
            inputs: r.inputs,
            seed: self.seed,
            ..RegressionConfig::default()
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        crate::krr::KrrConfig {
            ridge: self.ridge,
            bandwidth: self.bandwidth,
            poly: self.poly,
            max_select_rows: self.max_select_rows,
            seed: self.seed,
        }
        .validate()
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub n_samples: usize,
    pub seed: u64,
    pub latent_dim: usize,
    pub obs_dim: usize,
    pub score_mode: ScoreMode,
    pub status: RecoveryStatus,
    /// Recovered layer of each coordinate (0 = leaves).
    pub layer_of: Vec<usize>,
    /// True layer of each latent.
    pub true_layers: Vec<usize>,
    /// Ẑ against the mixed latents Z.
    pub latents: EvalReport,
    /// Ê against the true noises E; carries the SER in perturbed mode.
    pub noises: EvalReport,
    pub beta: BetaReport,
    pub rounds: Vec<RoundLog>,
    pub regression: Vec<RegressionModel>,
}

/// Everything one run produced, in memory.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    pub recovery: RecoveryResult,
    pub noise: NoiseResult,
    pub report: ExperimentReport,
    pub elapsed_secs: f64,
}

/// Observed-space Jacobians of the full data for a score mode (what round 0
/// of recovery sees).
pub fn observed_scores(data: &Dataset, mode: &ScoreMode, stein: &SteinConfig) -> Result<JacobianBatch> {
    let oracle = || -> Result<JacobianBatch> {
        let lat =
            oracle_batch_with_residuals(&data.scaled_scm, &data.batch.z, &data.scaled_noise())?;
        latent_to_observed(&lat, &data.mixing)
    };
    match mode {
        ScoreMode::Oracle => oracle(),
        ScoreMode::Stein => stein_jacobian(&data.batch.x, stein),
        ScoreMode::Perturbed { ser } => {
            crate::eval::perturb_jacobians(&oracle()?, *ser, crate::rng::derive(data.seed, 0))
        }
        ScoreMode::External { path } => read_batch(path),
    }
}

/// The per-round Jacobian source recovery uses for a score mode.
pub fn score_source(
    mode: &ScoreMode,
    stein: &SteinConfig,
    data: &Dataset,
    seed: u64,
) -> Result<Box<dyn JacobianSource>> {
    Ok(match mode {
        ScoreMode::Oracle => Box::new(OracleSource::from_dataset(data)?),
        ScoreMode::Stein => Box::new(SteinSource { cfg: *stein }),
        ScoreMode::Perturbed { ser } => {
            Box::new(PerturbedSource::new(OracleSource::from_dataset(data)?, *ser, seed))
        }
        ScoreMode::External { path } => Box::new(FixedSource { batch: read_batch(path)? }),
    })
}

/// Runs the pipeline without touching the disk (external score files are
/// still read).
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    execute_with(cfg, &MechanismRegistry::default())
}

pub fn execute_with(cfg: &ExperimentConfig, registry: &MechanismRegistry) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let scm = cfg.graph.build(cfg.seed, registry)?;
    let n = scm.n();
    let d = cfg.d.unwrap_or(n);
    let data = Dataset::generate(&scm, cfg.n_samples, d, cfg.seed)?;
    let mut source = score_source(&cfg.score_mode, &cfg.stein, &data, cfg.seed)?;
    let recovery = match recover_latents(&data.batch.x, n, source.as_mut(), &cfg.recovery_config()) {
        Ok(r) => r,
        Err(Error::Stalled { partial, .. }) => *partial,
        Err(e) => return Err(e),
    };
    let noise = recover_noise(&recovery, &cfg.regression_config())?;
    let true_layers = scm.dag().layers().layer;
    let latents = mac(&data.batch.z, &recovery.z_hat)?;
    let mut noises = mac(&data.batch.e, &noise.e_hat)?;
    if let ScoreMode::Perturbed { ser } = cfg.score_mode {
        noises.ser = Some(ser);
    }
    let beta = check_upstream_structure(&recovery, data.mixing.h(), &true_layers, cfg.beta_threshold)?;
    let report = ExperimentReport {
        n_samples: cfg.n_samples,
        seed: cfg.seed,
        latent_dim: n,
        obs_dim: d,
        score_mode: cfg.score_mode.clone(),
        status: recovery.status,
        layer_of: recovery.layer_of.clone(),
        true_layers,
        latents,
        noises,
        beta,
        rounds: recovery.rounds.clone(),
        regression: noise.models.clone(),
    };
    Ok(ExperimentOutcome {
        config: cfg.clone(),
        dataset: data,
        recovery,
        noise,
        report,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

/// Runs the pipeline and, when `out_dir` is set, writes the outputs there.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let outcome = execute(cfg)?;
    if let Some(dir) = &cfg.out_dir {
        write_outputs(&outcome, dir)?;
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub crate_version: String,
    pub created_unix_secs: u64,
    pub elapsed_secs: f64,
    pub config: ExperimentConfig,
    pub files: Vec<String>,
}

fn labels(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("{prefix}{i}")).collect()
}

fn vec_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let c = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j])
}

/// Recovered quantities as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredFiles {
    pub z_hat: DMatrix<f64>,
    pub e_hat: Option<DMatrix<f64>>,
    pub functionals: DMatrix<f64>,
    pub layer_of: Vec<usize>,
}

/// Writes `z_hat.csv`, `e_hat.csv` (when given), `functionals.csv`,
/// `layers.csv`, `rounds.json` and per-round `W`, `Ĥ` and diagonal variances.
/// Returns the file names written.
pub fn write_recovery(rec: &RecoveryResult, noise: Option<&NoiseResult>, dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut csv = |name: String, m: &DMatrix<f64>, prefix: &str| -> Result<()> {
        write_matrix_csv(&dir.join(&name), m, prefix)?;
        files.push(name);
        Ok(())
    };
    csv("z_hat.csv".into(), &rec.z_hat, "zhat")?;
    if let Some(noise) = noise {
        csv("e_hat.csv".into(), &noise.e_hat, "ehat")?;
    }
    csv("functionals.csv".into(), &rec.functionals, "x")?;
    csv("layers.csv".into(), &DMatrix::from_fn(1, rec.layer_of.len(), |_, j| rec.layer_of[j] as f64), "c")?;
    for (k, t) in rec.history.iter().enumerate() {
        csv(format!("round{k}_w.csv"), &t.w, "x")?;
        csv(format!("round{k}_h_hat.csv"), &t.h_hat, "h")?;
    }
    for log in &rec.rounds {
        let v = DVector::from_column_slice(&log.variances);
        csv(format!("round{}_diag_variance.csv", log.round), &DMatrix::from_row_slice(1, v.len(), v.as_slice()), "v")?;
    }
    write_json(&dir.join("rounds.json"), &rec.rounds)?;
    files.push("rounds.json".into());
    Ok(files)
}

/// Reads what [`write_recovery`] wrote; `e_hat.csv` is optional.
pub fn read_recovery(dir: &Path) -> Result<RecoveredFiles> {
    let (_, z_hat) = read_matrix_csv(&dir.join("z_hat.csv"))?;
    let e_path = dir.join("e_hat.csv");
    let e_hat = if e_path.exists() { Some(read_matrix_csv(&e_path)?.1) } else { None };
    let (_, functionals) = read_matrix_csv(&dir.join("functionals.csv"))?;
    let (_, layers) = read_matrix_csv(&dir.join("layers.csv"))?;
    let layer_of: Vec<usize> = layers.iter().map(|&v| v as usize).collect();
    if layers.iter().any(|&v| v < 0.0 || v.fract() != 0.0) || layer_of.len() != z_hat.ncols() {
        return Err(Error::Format(format!("{}: layers.csv does not match z_hat.csv", dir.display())));
    }
    Ok(RecoveredFiles { z_hat, e_hat, functionals, layer_of })
}

/// Ground-truth comparison of recovered quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub latents: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub noises: Option<EvalReport>,
    pub beta: BetaReport,
}

pub fn evaluate(data: &Dataset, rec: &RecoveredFiles, beta_threshold: f64) -> Result<Evaluation> {
    let true_layers = data.scm.dag().layers().layer;
    Ok(Evaluation {
        latents: mac(&data.batch.z, &rec.z_hat)?,
        noises: rec.e_hat.as_ref().map(|e| mac(&data.batch.e, e)).transpose()?,
        beta: beta_report(&rec.functionals, &rec.layer_of, data.mixing.h(), &true_layers, beta_threshold)?,
    })
}

/// Writes data, recovered matrices, per-round maps, figures, `report.json`
/// and `manifest.json` into `dir`.
pub fn write_outputs(out: &ExperimentOutcome, dir: &Path) -> Result<()> {
    let rec = &out.recovery;
    let rep = &out.report;
    let mut files = write_recovery(rec, Some(&out.noise), dir)?;
    let mut csv = |name: &str, m: &DMatrix<f64>, prefix: &str| -> Result<()> {
        write_matrix_csv(&dir.join(name), m, prefix)?;
        files.push(name.into());
        Ok(())
    };
    csv("latent_corr.csv", &rep.latents.corr(), "est")?;
    csv("noise_corr.csv", &rep.noises.corr(), "est")?;
    csv("beta.csv", &vec_matrix(&rep.beta.beta), "z")?;
    out.dataset.write(&dir.join("data"))?;
    files.push("data/".into());

    let k = rec.z_hat.ncols();
    let n = out.dataset.scm.n();
    let figures = [
        ("noise_corr.svg", svg::heatmap(&rep.noises.corr(), &labels("E", n), &labels("Ê", k), "|corr(E, Ê)|")),
        ("latent_corr.svg", svg::heatmap(&rep.latents.corr(), &labels("Z", n), &labels("Ẑ", k), "|corr(Z, Ẑ)|")),
        (
            "beta.svg",
            svg::heatmap(
                &vec_matrix(&rep.beta.normalized).abs(),
                &labels("Ẑ", k),
                &labels("Z", n),
                "|β| row-normalized",
            ),
        ),
    ];
    for (name, body) in figures {
        svg::write(&dir.join(name), &body)?;
        files.push(name.into());
    }
    let e = &out.dataset.batch.e;
    let cols: Vec<Vec<f64>> = (0..n).map(|i| e.column(i).iter().copied().collect()).collect();
    let ests: Vec<Vec<f64>> =
        (0..n).map(|i| out.noise.e_hat.column(rep.noises.matching[i]).iter().copied().collect()).collect();
    let panels: Vec<svg::Panel<'_>> = (0..n)
        .map(|i| svg::Panel {
            x: &cols[i],
            y: &ests[i],
            label: format!("E{} vs matched Ê ({:.2})", i + 1, rep.noises.matched(i)),
        })
        .collect();
    svg::write(&dir.join("noise_scatter.svg"), &svg::scatter_grid(&panels, "Matched noise estimates", 600))?;
    files.push("noise_scatter.svg".into());

    if out.config.trace {
        let mut s = String::new();
        for t in &rec.trace {
            s.push_str(&serde_json::to_string(t)?);
            s.push('\n');
        }
        std::fs::write(dir.join("solver_trace.jsonl"), s)?;
        files.push("solver_trace.jsonl".into());
    }
    // The output location is not part of the run.
    let config = ExperimentConfig { out_dir: None, ..out.config.clone() };
    write_json(&dir.join("config.json"), &config)?;
    files.push("config.json".into());
    write_json(&dir.join("report.json"), rep)?;
    files.push("report.json".into());
    let manifest = RunManifest {
        crate_version: env!("CARGO_PKG_VERSION").into(),
        created_unix_secs: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        elapsed_secs: out.elapsed_secs,
        config: out.config.clone(),
        files,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ser: f64,
    pub mean_mac: f64,
    pub sd_mac: f64,
    /// Noise MAC of each seed, in seed order.
    pub macs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub seeds: Vec<u64>,
    /// Spearman correlation between SER and mean MAC.
    pub spearman: Option<f64>,
}

impl SweepResult {
    /// Writes `sweep.csv` (ser, mean_mac, sd_mac, then one column per seed),
    /// `sweep.json` and `sweep.svg`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
        let mut head = vec!["ser".to_string(), "mean_mac".into(), "sd_mac".into()];
        head.extend(self.seeds.iter().map(|s| format!("seed{s}")));
        w.write_record(&head)?;
        for r in &self.rows {
            let mut rec = vec![format!("{:?}", r.ser), format!("{:?}", r.mean_mac), format!("{:?}", r.sd_mac)];
            rec.extend(r.macs.iter().map(|m| format!("{m:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        write_json(&dir.join("sweep.json"), self)?;
        let x: Vec<f64> = self.rows.iter().map(|r| r.ser).collect();
        let m: Vec<f64> = self.rows.iter().map(|r| r.mean_mac).collect();
        let s: Vec<f64> = self.rows.iter().map(|r| r.sd_mac).collect();
        svg::write(&dir.join("sweep.svg"), &svg::line_chart(&x, &m, &s, "Noise MAC against Jacobian SER", "MAC(E, Ê)"))
    }
}

/// Noise MAC over `seeds` at every SER of `grid`, with `base` as the template
/// (its score mode and seed are overridden). Writes to `base.out_dir` when set.
pub fn ser_sweep(base: &ExperimentConfig, grid: &[f64], seeds: &[u64]) -> Result<SweepResult> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::Config("SER sweep needs at least one SER and one seed".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &ser in grid {
        let mut macs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = ExperimentConfig {
                score_mode: ScoreMode::Perturbed { ser },
                seed,
                out_dir: None,
                ..base.clone()
            };
            macs.push(execute(&cfg)?.report.noises.mac);
        }
        let (mean_mac, sd_mac) = mean_sd(&macs);
        rows.push(SweepRow { ser, mean_mac, sd_mac, macs });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.ser).collect();
    let m: Vec<f64> = rows.iter().map(|r| r.mean_mac).collect();
    let result = SweepResult { spearman: spearman(&x, &m).ok(), rows, seeds: seeds.to_vec() };
    if let Some(dir) = &base.out_dir {
        result.write(dir)?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_with_spec_keys() {
        let s = r#"{"graph":"line4","N":500,"seed":3,"score_mode":{"perturbed":{"ser":6.0}},
                    "solver":{"tol":0.002,"restarts":8,"prune":0.1,"auto_tol":true},
                    "regression":{"ridge":0.001,"bandwidth":null},"out_dir":"out"}"#;
        let cfg = ExperimentConfig::from_json_str(s).unwrap();
        assert_eq!(cfg.graph, GraphSpec::Named(NamedGraph::Line4));
        assert_eq!(cfg.score_mode, ScoreMode::Perturbed { ser: 6.0 });
        assert_eq!(cfg.solver.restarts, 8);
        assert_eq!(cfg.regression.ridge, Some(1e-3));
        assert!(cfg.regression.poly);
        let back = ExperimentConfig::from_json_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn custom_graph_and_defaults() {
        let s = r#"{"graph":{"n":2,"edges":[[0,1]],"mechanisms":["zero","squared_norm"],"noise_vars":[0.5,0.3]},
                    "N":100,"seed":0,"score_mode":"oracle"}"#;
        let cfg = ExperimentConfig::from_json_str(s).unwrap();
        let scm = cfg.graph.build(0, &MechanismRegistry::default()).unwrap();
        assert_eq!(scm.n(), 2);
        assert!(!cfg.recovery_config().solver.auto_tol);
        let stein = ExperimentConfig { score_mode: ScoreMode::Stein, ..cfg };
        assert!(stein.recovery_config().solver.auto_tol);
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        for s in [
            r#"{"graph":"line4","N":1,"seed":0,"score_mode":"oracle"}"#,
            r#"{"graph":"line4","N":100,"seed":0,"score_mode":{"perturbed":{"ser":-1.0}}}"#,
            r#"{"graph":"line4","N":100,"seed":0,"score_mode":"oracle","solver":{"prune":1.5}}"#,
            r#"{"graph":"ring","N":100,"seed":0,"score_mode":"oracle"}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json_str(s), Err(Error::Config(_))), "{s}");
        }
    }

    #[test]
    fn small_oracle_run_writes_outputs() {
        let scm = r#"{"graph":{"n":2,"edges":[[0,1]],"mechanisms":["zero","squared_norm"],"noise_vars":[0.5,0.3]},
                      "N":300,"seed":1,"score_mode":"oracle","trace":true}"#;
        let mut cfg = ExperimentConfig::from_json_str(scm).unwrap();
        let dir = tempfile::tempdir().unwrap();
        cfg.out_dir = Some(dir.path().to_path_buf());
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.report.layer_of, vec![0, 1]);
        assert!(out.report.beta.passed);
        for f in ["report.json", "manifest.json", "z_hat.csv", "e_hat.csv", "round0_h_hat.csv", "noise_corr.svg", "solver_trace.jsonl", "data/x.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let back: ExperimentReport = crate::io::read_json(&dir.path().join("report.json")).unwrap();
        assert_eq!(back, out.report);
    }
}
