//! Command configurations, their execution and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use mixhmm_core::em::InitConfig;
use mixhmm_core::selection::Criteria;
use mixhmm_core::{
    benchmark_design, nested_squares_design, simulate, BenchConfig, CovStructure, CriteriaReport, EmConfig, FitConfig, MergeCriterion, Method,
    SelectionCriterion, TransitionModel,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::docs::{ModelDoc, PathDoc};
use crate::error::{CliError, Result};
use crate::io::{self, IngestOptions};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Benchmark,
    Nested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub design: Design,
    pub a: f64,
    pub b: f64,
    pub gap: f64,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub path: PathBuf,
    #[serde(flatten)]
    pub ingest: IngestOptions,
}

/// Settings shared by every command that fits models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub cov_structure: String,
    pub tol: f64,
    pub max_iter: usize,
    pub refine_iters: usize,
    pub restarts: usize,
    pub kmeans_sweeps: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        let init = InitConfig::default();
        Self {
            cov_structure: CovStructure::Full.as_str().into(),
            tol: init.em.tol,
            max_iter: init.em.max_iter,
            refine_iters: 10,
            restarts: init.restarts,
            kmeans_sweeps: init.kmeans_sweeps,
        }
    }
}

impl FitSettings {
    fn apply(&self, cfg: &mut FitConfig) -> Result<()> {
        let structure: CovStructure = self.cov_structure.parse().map_err(|e| CliError::Config(format!("{e}")))?;
        cfg.init = InitConfig {
            structure,
            kmeans_sweeps: self.kmeans_sweeps,
            restarts: self.restarts,
            em: EmConfig {
                tol: self.tol,
                max_iter: self.max_iter,
                transitions: cfg.transitions,
            },
            ..InitConfig::default()
        };
        cfg.refine_iters = self.refine_iters;
        if self.restarts == 0 {
            return Err(CliError::Config("restarts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRunConfig {
    pub input: InputSpec,
    pub k_init: usize,
    pub criterion: String,
    pub selection: String,
    pub seed: u64,
    pub fixed_d: Option<usize>,
    pub independent: bool,
    #[serde(flatten)]
    pub settings: FitSettings,
}

impl FitRunConfig {
    pub fn to_fit_config(&self) -> Result<FitConfig> {
        let criterion: MergeCriterion = self.criterion.parse().map_err(|e| CliError::Config(format!("{e}")))?;
        let selection: SelectionCriterion = self.selection.parse().map_err(|e| CliError::Config(format!("{e}")))?;
        let transitions = if self.independent {
            TransitionModel::Independent
        } else {
            TransitionModel::Markov
        };
        let mut cfg = FitConfig {
            k_init: self.k_init,
            criterion,
            selection,
            seed: self.seed,
            fixed_d: self.fixed_d,
            ..FitConfig::default()
        }
        .with_transitions(transitions);
        self.settings.apply(&mut cfg)?;
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRunConfig {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub replicates: usize,
    pub n: usize,
    pub k_init: usize,
    pub criteria: Vec<String>,
    pub independent: bool,
    pub seed: u64,
    #[serde(flatten)]
    pub settings: FitSettings,
}

impl BenchRunConfig {
    pub fn to_bench_config(&self) -> Result<BenchConfig> {
        let mut methods = self
            .criteria
            .iter()
            .map(|c| c.parse().map(Method::Merge).map_err(|e| CliError::Config(format!("{e}"))))
            .collect::<Result<Vec<_>>>()?;
        if self.independent {
            methods.push(Method::Independent);
        }
        if methods.is_empty() || self.a.is_empty() || self.b.is_empty() {
            return Err(CliError::Config("benchmark needs at least one a, one b and one method".into()));
        }
        let mut fit = FitConfig::default();
        self.settings.apply(&mut fit)?;
        let cells = self.a.iter().flat_map(|&a| self.b.iter().map(move |&b| (a, b))).collect();
        Ok(BenchConfig {
            cells,
            replicates: self.replicates,
            n: self.n,
            k_init: self.k_init,
            methods,
            seed: self.seed,
            fit,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaRunConfig {
    pub path: PathBuf,
    pub input: InputSpec,
    pub selection: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "lowercase")]
pub enum RunConfig {
    Simulate(SimulateConfig),
    Fit(FitRunConfig),
    Benchmark(BenchRunConfig),
    Criteria(CriteriaRunConfig),
}

impl RunConfig {
    fn seed(&self) -> Option<u64> {
        match self {
            RunConfig::Simulate(c) => Some(c.seed),
            RunConfig::Fit(c) => Some(c.seed),
            RunConfig::Benchmark(c) => Some(c.seed),
            RunConfig::Criteria(_) => None,
        }
    }

    fn inputs(&self) -> Vec<&Path> {
        match self {
            RunConfig::Simulate(_) | RunConfig::Benchmark(_) => vec![],
            RunConfig::Fit(c) => vec![&c.input.path],
            RunConfig::Criteria(c) => vec![&c.path, &c.input.path],
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("serialisable")))
    }

    /// Makes input paths absolute so a manifest can be replayed from anywhere.
    pub fn absolutize(&mut self) -> Result<()> {
        let fix = |p: &mut PathBuf| -> Result<()> {
            *p = fs::canonicalize(&*p).map_err(|source| CliError::Read { path: p.clone(), source })?;
            Ok(())
        };
        match self {
            RunConfig::Fit(c) => fix(&mut c.input.path),
            RunConfig::Criteria(c) => {
                fix(&mut c.path)?;
                fix(&mut c.input.path)
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    #[serde(flatten)]
    pub run: RunConfig,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<FileEntry>,
    /// Relative to the manifest's directory.
    pub outputs: Vec<FileEntry>,
    pub failures: usize,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// What a command produced, before the manifest is written.
pub struct Outcome {
    pub files: Vec<String>,
    pub failures: usize,
    pub summary: String,
}

fn simulate_cmd(cfg: &SimulateConfig, out: &Path) -> Result<Outcome> {
    let spec = match cfg.design {
        Design::Benchmark => benchmark_design(cfg.a, cfg.b),
        Design::Nested => nested_squares_design(cfg.gap),
    }
    .map_err(|e| CliError::Config(e.to_string()))?;
    if cfg.n < 2 {
        return Err(CliError::Config("n must be at least 2".into()));
    }
    let sim = simulate(&spec.with_n(cfg.n).with_seed(cfg.seed)).map_err(CliError::stage("simulation"))?;
    io::write_dataset(&out.join("data.csv"), &sim.data, io::Format::Csv)?;
    io::write_truth(&out.join("truth.csv"), &sim.states, &sim.components, &sim.true_tau)?;
    Ok(Outcome {
        files: vec!["data.csv".into(), "truth.csv".into()],
        failures: 0,
        summary: format!("simulated {} observations from {}", cfg.n, sim.data.source),
    })
}

fn fit_cmd(cfg: &FitRunConfig, out: &Path) -> Result<Outcome> {
    let fit_cfg = cfg.to_fit_config()?;
    let data = io::ingest(&cfg.input.path, &cfg.input.ingest)?;
    if data.len() < fit_cfg.k_init {
        return Err(CliError::Config(format!("k_init = {} exceeds the {} observations", fit_cfg.k_init, data.len())));
    }
    let result = mixhmm_core::fit(&data, &fit_cfg).map_err(CliError::stage("fit"))?;
    let loglik = result.posterior.loglik();
    io::write_json(&out.join("model.json"), &ModelDoc::from_model(&result.model, Some(loglik)))?;
    io::write_posterior(&out.join("posterior.csv"), &result.posterior.chain.tau)?;
    io::write_json(&out.join("merge_path.json"), &PathDoc::from_path(&result.path, data.len()))?;
    io::write_criteria(&out.join("criteria.csv"), &result.report)?;
    Ok(Outcome {
        files: vec!["model.json".into(), "posterior.csv".into(), "merge_path.json".into(), "criteria.csv".into()],
        failures: 0,
        summary: format!("selected D = {} (log-likelihood {loglik:.4})", result.selected),
    })
}

fn benchmark_cmd(cfg: &BenchRunConfig, out: &Path) -> Result<Outcome> {
    let bench = cfg.to_bench_config()?;
    let report = mixhmm_core::run_benchmark(&bench).map_err(|e| CliError::Config(e.to_string()))?;
    io::write_benchmark(&out.join("benchmark.csv"), &report)?;
    io::write_replicates(&out.join("replicates.csv"), &report)?;
    let failures = report.failures();
    Ok(Outcome {
        files: vec!["benchmark.csv".into(), "replicates.csv".into()],
        failures,
        summary: format!("{} rows, {failures} failed replicate runs", report.rows.len()),
    })
}

fn criteria_cmd(cfg: &CriteriaRunConfig, out: &Path) -> Result<Outcome> {
    let selection: SelectionCriterion = cfg.selection.parse().map_err(|e| CliError::Config(format!("{e}")))?;
    let doc: PathDoc = io::read_json(&cfg.path, "merge path")?;
    let data = io::ingest(&cfg.input.path, &cfg.input.ingest)?;
    let mut records = Vec::with_capacity(doc.steps.len());
    for step in &doc.steps {
        let model = step.model.to_model()?;
        records.push(Criteria::evaluate(&model, &data).map_err(CliError::stage("criteria"))?);
    }
    let report = CriteriaReport { records };
    io::write_criteria(&out.join("criteria.csv"), &report)?;
    let chosen = report
        .select(selection)
        .ok_or_else(|| CliError::Document {
            what: "merge path",
            message: "no steps".into(),
        })?;
    Ok(Outcome {
        files: vec!["criteria.csv".into()],
        failures: 0,
        summary: format!("{} selects D = {chosen}", selection.as_str()),
    })
}

/// Executes `run` into `out` and writes the manifest.
pub fn execute(mut run: RunConfig, out: &Path) -> Result<(Manifest, String)> {
    run.absolutize()?;
    fs::create_dir_all(out).map_err(|source| CliError::Write {
        path: out.to_path_buf(),
        source,
    })?;
    let outcome = match &run {
        RunConfig::Simulate(c) => simulate_cmd(c, out)?,
        RunConfig::Fit(c) => fit_cmd(c, out)?,
        RunConfig::Benchmark(c) => benchmark_cmd(c, out)?,
        RunConfig::Criteria(c) => criteria_cmd(c, out)?,
    };
    let inputs = run
        .inputs()
        .into_iter()
        .map(|p| {
            Ok(FileEntry {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let outputs = outcome
        .files
        .iter()
        .map(|f| {
            Ok(FileEntry {
                path: f.clone(),
                sha256: sha256_file(&out.join(f))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: run.hash(),
        seed: run.seed(),
        run,
        inputs,
        outputs,
        failures: outcome.failures,
    };
    io::write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok((manifest, outcome.summary))
}

/// Replays a manifest into `out`. Inputs must still hash to the recorded values.
pub fn rerun(manifest_path: &Path, out: &Path) -> Result<(Manifest, String)> {
    let old: Manifest = io::read_json(manifest_path, "manifest")?;
    if old.run.hash() != old.config_hash {
        return Err(CliError::Config("manifest config does not match its config_hash".into()));
    }
    for input in &old.inputs {
        let now = sha256_file(Path::new(&input.path))?;
        if now != input.sha256 {
            return Err(CliError::Config(format!("input {} changed since the recorded run", input.path)));
        }
    }
    execute(old.run, out)
}
