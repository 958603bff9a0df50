use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use detangle_core::pipeline::{run_pipeline, run_stage, METRICS_FILE};
use detangle_core::{PipelineConfig, Stage};

#[derive(Parser)]
#[command(
    name = "detangle",
    version,
    about = "Disentangle tabular data into latent representations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select rows and attributes around the target window.
    Extract(Common),
    /// Fit the latent-variable model on the extracted data.
    Model(Common),
    /// Estimate the distribution of every latent.
    Analyze(Common),
    /// Condition the representation on the request's extrapolation query.
    Extrapolate(Common),
    /// Sample and decode synthetic rows.
    Synth(Common),
    /// Score the persisted artifacts and write the metric report.
    Evaluate(Common),
    /// Run every enabled stage in order.
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    pu_iters: Option<usize>,
    #[arg(long)]
    theta_hi: Option<f64>,
    #[arg(long)]
    theta_lo: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    neg_frac: Option<f64>,
}

impl Common {
    fn load(&self) -> detangle_core::Result<PipelineConfig> {
        let mut cfg = PipelineConfig::from_json_file(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        let pu = &mut cfg.extract;
        if let Some(v) = self.pu_iters {
            pu.iterations = v;
        }
        if let Some(v) = self.theta_hi {
            pu.theta_hi = v;
        }
        if let Some(v) = self.theta_lo {
            pu.theta_lo = v;
        }
        if let Some(v) = self.tau {
            pu.tau = v;
        }
        if let Some(v) = self.neg_frac {
            pu.neg_frac = v;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> detangle_core::Result<()> {
    let (common, stage) = match &cli.command {
        Command::Extract(c) => (c, Some(Stage::Extract)),
        Command::Model(c) => (c, Some(Stage::Model)),
        Command::Analyze(c) => (c, Some(Stage::Analyze)),
        Command::Extrapolate(c) => (c, Some(Stage::Extrapolate)),
        Command::Synth(c) => (c, Some(Stage::Synth)),
        Command::Evaluate(c) => (c, Some(Stage::Evaluate)),
        Command::Pipeline(c) => (c, None),
    };
    let cfg = common.load()?;
    match stage {
        None => run_pipeline(&cfg),
        Some(Stage::Evaluate) => {
            run_stage(&cfg, Stage::Evaluate)?;
            let path = cfg.out.join(METRICS_FILE);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| detangle_core::Error::Io { path, source: e })?;
            print!("{text}");
            Ok(())
        }
        Some(s) => run_stage(&cfg, s),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DETANGLE_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
