mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use opgraph_core::Error;

#[derive(Parser, Debug)]
#[command(name = "opgraph", version, about = "Operator-graph forward models: certify, simulate, diagnose, calibrate")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Commit recorded in the run manifest (falls back to $OPGRAPH_COMMIT).
    #[arg(long, global = true)]
    commit: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct OutArgs {
    /// Run directory; created if missing.
    #[arg(long, default_value = "opgraph-run")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Load the run description from YAML instead of flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub modality: Option<String>,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub fidelity: u8,
    #[arg(long)]
    pub sampling_ratio: Option<f64>,
    /// Number of test scenes.
    #[arg(long, default_value_t = 3)]
    pub phantoms: usize,
    #[arg(long)]
    pub noisy: bool,
    /// Mismatch parameters, comma separated; defaults to the template example.
    #[arg(long, alias = "theta", value_delimiter = ',', allow_hyphen_values = true)]
    pub theta_true: Option<Vec<f64>>,
    #[arg(long)]
    pub solver: Option<String>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lambda_tv: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct PhotonArgs {
    #[arg(long)]
    pub source_power: Option<f64>,
    #[arg(long)]
    pub qe: Option<f64>,
    #[arg(long)]
    pub exposure: Option<f64>,
    #[arg(long)]
    pub read_sigma: Option<f64>,
    #[arg(long)]
    pub dark_rate: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate and compile a graph spec; print the plan.
    Compile {
        spec: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Randomized dot-product test of a compiled graph.
    AdjointCheck {
        spec: PathBuf,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Write a template's graph spec (optionally at a mismatch θ) as YAML.
    Template {
        #[arg(long)]
        modality: String,
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        fidelity: u8,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        theta: Option<Vec<f64>>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Generate ground truth and measurements under θ_true.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Full four-scenario run with calibration and gate diagnosis.
    Scenario {
        #[command(flatten)]
        model: ModelArgs,
        /// alg1, alg2, alg1+2, or none (θ̂ = nominal).
        #[arg(long, default_value = "alg1")]
        calib: String,
        /// Solver iterations inside the calibration objective.
        #[arg(long)]
        calib_iters: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Gate scores and binding constraint only.
    Diagnose {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        photon: PhotonArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Estimate θ from one measurement.
    Calibrate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "alg1")]
        method: String,
        /// Measurement tensor file; simulated from θ_true when absent.
        #[arg(long)]
        y: Option<PathBuf>,
        /// Ground truth for the oracle objective.
        #[arg(long)]
        x_gt: Option<PathBuf>,
        /// oracle_psnr or measurement_residual.
        #[arg(long)]
        objective: Option<String>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Cumulative primitive count over a modality order, as CSV.
    BasisGrowth {
        /// Directory with the four registry YAML files; built-in when absent.
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        order: Option<Vec<String>>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Recompute every hash recorded in a run manifest.
    Verify { run_dir: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match commands::run(cli.command, cli.commit.as_deref(), argv) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(exit_code(&e))
        }
    }
}
