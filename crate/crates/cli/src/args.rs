use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "gramspai", version, about = "Sparse approximate inverses of Gramians and distributed estimators")]
pub struct Cli {
    /// Worker threads for data-parallel kernels.
    #[arg(long, global = true, env = "GRAMSPAI_THREADS", default_value_t = 1)]
    pub threads: usize,
    /// Directory for relative output paths.
    #[arg(long, global = true, env = "GRAMSPAI_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a benchmark system as JSON.
    Generate(GenerateArgs),
    /// Build an observability or controllability Gramian.
    Gramian(GramianArgs),
    /// Approximate the inverse of a Gramian.
    Invert(InvertArgs),
    /// Synthesize distributed estimator gains.
    Estimator(EstimatorArgs),
    /// Simulate a lifted window of signals.
    Simulate(SimulateArgs),
    /// Evaluate the distributed estimator on a signal window.
    Estimate(EstimateArgs),
    /// Least-norm or impulse-response control solve.
    Control(ControlArgs),
    /// Time sparsified Newton-Schulz against a dense inverse over grid sizes.
    BenchmarkScaling(BenchmarkArgs),
    /// Heat-model pipeline: Gramian, κ, band sweep and dense oracle.
    ReproduceHeat(HeatArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenerateArgs {
    #[command(subcommand)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelArgs {
    /// Explicit 3D heat-equation grid, one subsystem per vertical column.
    Heat3d {
        #[arg(long, default_value_t = 30)]
        gx: usize,
        #[arg(long, default_value_t = 30)]
        gy: usize,
        #[arg(long, default_value_t = 3)]
        gz: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        h: f64,
        #[arg(long, default_value_t = 0.1)]
        dt: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// 1D chain with symmetric nearest-neighbour coupling.
    Chain {
        #[arg(long = "N", default_value_t = 3)]
        subsystems: usize,
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 0.3)]
        coupling: f64,
        #[arg(long, default_value_t = 0.9)]
        rho: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Random sparse interconnection graph.
    Random {
        #[arg(long = "N", default_value_t = 20)]
        subsystems: usize,
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        r: usize,
        #[arg(long, default_value_t = 3.0)]
        degree: f64,
        #[arg(long, default_value_t = 0.9)]
        rho: f64,
        #[arg(long)]
        positive: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    Obs,
    Ctrl,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GramianArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long)]
    pub p: usize,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    #[arg(long, value_enum, default_value = "obs")]
    pub kind: KindArg,
    #[arg(long, default_value_t = gramspai::sparse::spectral::DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Ns,
    Frob,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct InvertArgs {
    #[arg(long)]
    pub gramian: PathBuf,
    /// JSON config `{method, pattern: {kind, beta|s|path}, phi, mu, tol, max_iter}`;
    /// flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Newton-Schulz without sparsification.
    #[arg(long)]
    pub dense: bool,
    /// Scalar band half-width of the H₁ pattern.
    #[arg(long, conflicts_with_all = ["neumann", "pattern_file"])]
    pub beta: Option<usize>,
    /// Neumann-series depth `s` of the H₁ pattern.
    #[arg(long, conflicts_with = "pattern_file")]
    pub neumann: Option<usize>,
    /// Block pattern in Matrix Market pattern format.
    #[arg(long)]
    pub pattern_file: Option<PathBuf>,
    /// Drop tolerance of H₂.
    #[arg(long)]
    pub phi: Option<f64>,
    /// Additional regularization added before inverting.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, default_value_t = gramspai::sparse::spectral::DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Report CSV; defaults to `<out>.report.csv`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimatorArgs {
    #[arg(long)]
    pub system: PathBuf,
    /// Approximate inverse of the observability Gramian.
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub p: usize,
    /// Also compare against the pattern predicted with `X̄ = T(I + W̄ + … + W̄ˢ)`.
    #[arg(long)]
    pub s: Option<usize>,
    #[arg(long, short, default_value = "estimator")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long)]
    pub p: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Draw zero inputs instead of Gaussian ones.
    #[arg(long)]
    pub zero_inputs: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimateArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long)]
    pub p: usize,
    /// Directory written by `estimator`.
    #[arg(long)]
    pub estimator: PathBuf,
    /// Signal window written by `simulate`.
    #[arg(long)]
    pub signals: PathBuf,
    /// Regularization of the centralized reference estimate.
    #[arg(long)]
    pub mu: Option<f64>,
    /// The inverse the estimator was built from, for the transfer bound.
    #[arg(long)]
    pub x: Option<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    LeastNorm,
    Impulse,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ControlArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long)]
    pub p: usize,
    #[arg(long, value_enum, default_value = "least-norm")]
    pub mode: ControlMode,
    /// JSON with `x_start`, `x_target` (least-norm) or `y_desired` (impulse).
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    /// Approximate inverse of the controllability (least-norm) or impulse
    /// normal (impulse) matrix.
    #[arg(long)]
    pub inverse: Option<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchmarkArgs {
    /// Subsystem counts; each must be a perfect square (square grids).
    #[arg(long, value_delimiter = ',', default_value = "100,400,1600,6400")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub gz: usize,
    #[arg(long, default_value_t = 2)]
    pub p: usize,
    #[arg(long, default_value_t = 0.05)]
    pub mu: f64,
    /// Use a scalar band of half-width `--beta` instead of the Neumann pattern.
    #[arg(long)]
    pub band: bool,
    #[arg(long, default_value_t = 150)]
    pub beta: usize,
    /// Depth `s` of the Neumann-series pattern.
    #[arg(long, default_value_t = 1)]
    pub neumann: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub phi: f64,
    #[arg(long, default_value_t = 30)]
    pub max_iter: usize,
    /// Largest N for which the dense baseline is timed.
    #[arg(long, default_value_t = 1600)]
    pub dense_limit: usize,
    #[arg(long, short, default_value = "scaling.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HeatArgs {
    #[arg(long, default_value_t = 30)]
    pub gx: usize,
    #[arg(long, default_value_t = 30)]
    pub gy: usize,
    #[arg(long, default_value_t = 3)]
    pub gz: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub h: f64,
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    #[arg(long, default_value_t = 4)]
    pub p: usize,
    #[arg(long, default_value_t = 0.001)]
    pub mu: f64,
    #[arg(long, value_delimiter = ',', default_value = "200,400,800")]
    pub betas: Vec<usize>,
    #[arg(long, default_value_t = 1e-5)]
    pub phi: f64,
    #[arg(long, default_value_t = 60)]
    pub max_iter: usize,
    /// Skip the dense-inverse comparison.
    #[arg(long)]
    pub no_oracle: bool,
    #[arg(long, default_value_t = gramspai::sparse::spectral::DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, short, default_value = "heat")]
    pub out: PathBuf,
}

impl Default for HeatArgs {
    fn default() -> Self {
        HeatArgs {
            gx: 30,
            gy: 30,
            gz: 3,
            alpha: 1.0,
            h: 1.0,
            dt: 0.1,
            p: 4,
            mu: 0.001,
            betas: vec![200, 400, 800],
            phi: 1e-5,
            max_iter: 60,
            no_oracle: false,
            seed: gramspai::sparse::spectral::DEFAULT_SEED,
            out: PathBuf::from("heat"),
        }
    }
}

impl Default for BenchmarkArgs {
    fn default() -> Self {
        BenchmarkArgs {
            sizes: vec![100, 400, 1600, 6400],
            gz: 3,
            p: 2,
            mu: 0.05,
            band: false,
            beta: 150,
            neumann: 1,
            phi: 1e-3,
            max_iter: 30,
            dense_limit: 1600,
            out: PathBuf::from("scaling.csv"),
        }
    }
}
