use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixhmm::io::{Format, IngestOptions};
use mixhmm::run::{self, BenchRunConfig, CriteriaRunConfig, Design, FitRunConfig, FitSettings, InputSpec, RunConfig, SimulateConfig};
use mixhmm::CliError;

/// Clustering with hidden Markov models whose states emit Gaussian mixtures.
#[derive(Parser)]
#[command(name = "mixhmm", version)]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "MIXHMM_OUT_DIR", default_value = ".")]
    out: PathBuf,
    /// Worker threads for candidate scoring and benchmark replicates.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic sequence with its hidden truth.
    Simulate {
        #[arg(long, value_enum, default_value = "benchmark")]
        design: Design,
        /// Probability of staying in a state (benchmark design).
        #[arg(long, default_value_t = 0.9)]
        a: f64,
        /// Covariance scale (benchmark design).
        #[arg(long, default_value_t = 1.0)]
        b: f64,
        /// Distance between the nested squares.
        #[arg(long, default_value_t = 0.2)]
        gap: f64,
        #[arg(long, default_value_t = 800)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit, merge and select the number of clusters.
    Fit {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 10)]
        k_init: usize,
        /// Merging score: X, XS or XZ.
        #[arg(long, default_value = "X")]
        criterion: String,
        /// BIC, ICL or ICL_S.
        #[arg(long, default_value = "ICL_S")]
        selection: String,
        /// Stop merging at this many clusters.
        #[arg(long)]
        fixed_d: Option<usize>,
        /// Ignore serial dependence (equal transition rows).
        #[arg(long)]
        independent: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        settings: SettingsArgs,
    },
    /// Replicated simulation study over a grid of (a, b).
    Benchmark {
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75,0.9")]
        a: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,7")]
        b: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        replicates: usize,
        #[arg(long, default_value_t = 800)]
        n: usize,
        #[arg(long, default_value_t = 6)]
        k_init: usize,
        #[arg(long, value_delimiter = ',', default_value = "X,XS,XZ")]
        criteria: Vec<String>,
        /// Add the independent-mixture arm.
        #[arg(long)]
        independent: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        settings: SettingsArgs,
    },
    /// Recompute the criteria of a saved merge path.
    Criteria {
        /// merge_path.json written by `fit`.
        #[arg(long)]
        path: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value = "ICL_S")]
        selection: String,
    },
    /// Replay a run from its manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Args)]
struct InputArgs {
    /// Observations, one row per time point.
    #[arg(long)]
    input: PathBuf,
    /// Defaults to the file extension.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// The first row holds data, not column names.
    #[arg(long)]
    no_header: bool,
    /// Coordinate columns by name.
    #[arg(long, value_delimiter = ',')]
    columns: Option<Vec<String>>,
    #[arg(long)]
    state_column: Option<String>,
    #[arg(long)]
    component_column: Option<String>,
}

impl InputArgs {
    fn into_spec(self) -> InputSpec {
        InputSpec {
            ingest: IngestOptions {
                format: self.format.unwrap_or_else(|| Format::from_path(&self.input)),
                has_header: !self.no_header,
                columns: self.columns,
                state_column: self.state_column,
                component_column: self.component_column,
            },
            path: self.input,
        }
    }
}

#[derive(Args)]
struct SettingsArgs {
    /// full or spherical; defaults to full for `fit`, spherical for `benchmark`.
    #[arg(long)]
    cov: Option<String>,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// EM iterations after each merge.
    #[arg(long, default_value_t = 10)]
    refine_iters: usize,
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    #[arg(long, default_value_t = 10)]
    kmeans_sweeps: usize,
}

impl SettingsArgs {
    fn into_settings(self, default_cov: &str) -> FitSettings {
        FitSettings {
            cov_structure: self.cov.unwrap_or_else(|| default_cov.into()),
            tol: self.tol,
            max_iter: self.max_iter,
            refine_iters: self.refine_iters,
            restarts: self.restarts,
            kmeans_sweeps: self.kmeans_sweeps,
        }
    }
}

fn dispatch(cli: Cli) -> Result<String, CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let config = match cli.command {
        Command::Simulate { design, a, b, gap, n, seed } => RunConfig::Simulate(SimulateConfig { design, a, b, gap, n, seed }),
        Command::Fit {
            input,
            k_init,
            criterion,
            selection,
            fixed_d,
            independent,
            seed,
            settings,
        } => RunConfig::Fit(FitRunConfig {
            input: input.into_spec(),
            k_init,
            criterion,
            selection,
            seed,
            fixed_d,
            independent,
            settings: settings.into_settings("full"),
        }),
        Command::Benchmark {
            a,
            b,
            replicates,
            n,
            k_init,
            criteria,
            independent,
            seed,
            settings,
        } => RunConfig::Benchmark(BenchRunConfig {
            a,
            b,
            replicates,
            n,
            k_init,
            criteria,
            independent,
            seed,
            settings: settings.into_settings("spherical"),
        }),
        Command::Criteria { path, input, selection } => RunConfig::Criteria(CriteriaRunConfig {
            path,
            input: input.into_spec(),
            selection,
        }),
        Command::Rerun { manifest } => return run::rerun(&manifest, &cli.out).map(|(_, s)| s),
    };
    run::execute(config, &cli.out).map(|(_, s)| s)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
