use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use latassist::experiments::SweepKind;
use latassist::service::{bind, pipeline, serve, ExperimentConfig, SessionServer};

#[derive(Parser)]
#[command(name = "latassist", version, about = "Shared autonomy with learned latent actions on a planar arm")]
struct Cli {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scripted demonstrations.
    GenDemos,
    /// Train the plain and entropy-regularized decoders.
    Train,
    /// Run one rollout with the configured operator.
    Simulate,
    /// Run the configured sweeps.
    Sweep {
        /// Restrict to these sweeps (fixed_beta, change_of_mind, learner, new_goal).
        #[arg(long = "kind")]
        kinds: Vec<SweepKind>,
    },
    /// Serve interactive sessions over WebSocket.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Print the effective configuration.
    Config,
}

fn run(cli: Cli) -> latassist::Result<()> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.paths.out_dir = out;
    }
    match cli.command {
        Command::GenDemos => {
            let path = pipeline::gen_demos(&config)?;
            println!("wrote {}", path.display());
        }
        Command::Train => {
            let s = pipeline::train_models(&config)?;
            println!("wrote {} (held-out MSE {:.3e})", s.model.display(), s.heldout_recon);
            println!("wrote {} (held-out MSE {:.3e})", s.entropy_model.display(), s.entropy_heldout_recon);
        }
        Command::Simulate => {
            let o = pipeline::simulate(&config)?;
            let m = &o.metrics;
            println!("wrote {}", o.rollout.display());
            println!(
                "final_error {:.4} completion_time {} success {} cumulative_error {:.3}",
                m.final_state_error, m.completion_time, m.success, m.cumulative_error
            );
        }
        Command::Sweep { kinds } => {
            if !kinds.is_empty() {
                config.sweeps = kinds;
            }
            for path in pipeline::sweep(&config)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Serve { port, host } => {
            let scene = Arc::new(config.build_scene()?);
            let models = pipeline::load_models(&config, &scene)?;
            let server = Arc::new(SessionServer::new(scene, Some(models), config.controller.clone())?);
            let addr = format!("{host}:{port}");
            let listener = bind(&addr)?;
            println!("listening on ws://{}", listener.local_addr()?);
            serve(listener, server)?;
        }
        Command::Config => print!("{}", config.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
