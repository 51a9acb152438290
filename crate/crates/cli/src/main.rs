use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reefsfm::io::write_json;
use reefsfm::pipeline::{
    eval_command, fit_command, generate_command, map_command, ortho_command, run_pipeline, with_threads, PipelineConfig,
};
use reefsfm::verify::{run_verify, Suite, VerifyOptions};
use reefsfm::Error;

#[derive(Parser)]
#[command(name = "reefsfm", version, about = "Semantic 3D mapping of reef transects from monocular video frames")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override any config field, e.g. `--set fusion.tsdf.voxel_size=0.03`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset into the dataset directory.
    Generate {
        /// Replace a non-empty target directory.
        #[arg(long)]
        force: bool,
    },
    /// Fit the self-supervised depth and pose estimator.
    Fit,
    /// Build the filtered semantic point cloud.
    Map,
    /// Ortho-project the point cloud and write cover tables.
    Ortho,
    /// Evaluate the cloud in the output directory.
    Eval,
    /// Run the invariant suites and write verify.json.
    Verify {
        /// Suites to run (gradient, geometry, filters, ortho); all when omitted.
        #[arg(long = "suite")]
        suites: Vec<String>,
        #[arg(long, default_value_t = 100)]
        gradient_instances: usize,
    },
    /// All stages end to end.
    Run,
}

fn load_config(common: &Common) -> reefsfm::Result<PipelineConfig> {
    let mut config = PipelineConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(o) = &common.output {
        config.output = o.clone();
    }
    if let Some(d) = &common.dataset {
        config.dataset = d.clone();
    }
    config.validate()?;
    Ok(config)
}

fn execute(cli: Cli) -> reefsfm::Result<bool> {
    let config = load_config(&cli.common)?;
    match cli.command {
        Command::Generate { force } => {
            let dir = generate_command(&config, force)?;
            eprintln!("dataset written to {}", dir.display());
        }
        Command::Fit => {
            fit_command(&config)?;
            eprintln!("fitted parameters written to {}", config.output.display());
        }
        Command::Map => {
            map_command(&config)?;
            eprintln!("point cloud written to {}", config.output.display());
        }
        Command::Ortho => {
            ortho_command(&config)?;
            eprintln!("ortho maps written to {}", config.output.display());
        }
        Command::Eval => {
            let m = eval_command(&config)?;
            println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize"));
        }
        Command::Verify {
            suites,
            gradient_instances,
        } => {
            let suites = suites
                .iter()
                .map(|s| Suite::parse(s).ok_or_else(|| Error::Config(format!("unknown suite `{s}`"))))
                .collect::<reefsfm::Result<Vec<_>>>()?;
            let opts = VerifyOptions {
                suites: if suites.is_empty() { Suite::ALL.to_vec() } else { suites },
                seed: config.seed,
                gradient_instances,
                ..Default::default()
            };
            let report = run_verify(&opts);
            for c in &report.checks {
                let mark = if c.passed { "pass" } else { "FAIL" };
                println!("{mark}  {:<36} {:.3e} (tol {:.0e})  {}", c.name, c.measured, c.tolerance, c.detail);
            }
            write_json(&config.output.join("verify.json"), &report)?;
            return Ok(report.passed);
        }
        Command::Run => {
            let out = run_pipeline(&config)?;
            let m = &out.metrics;
            eprintln!("{} points, outputs in {}", m.point_count, config.output.display());
            if let Some(r) = &m.markers {
                eprintln!("marker MARE {:.3}% over {} pairs", 100.0 * r.mare, r.pairs.len());
            }
            if let Some(s) = &m.point_semantics {
                eprintln!("point accuracy {:.2}%", 100.0 * s.accuracies.total);
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.common.threads.unwrap_or(0);
    match with_threads(threads, || execute(cli)).and_then(|r| r) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some invariants failed");
            ExitCode::from(3)
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
