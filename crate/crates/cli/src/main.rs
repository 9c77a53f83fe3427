use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use roidecomp::config::{Method, RunConfig};
use roidecomp::pipeline::{cmd_decompose, cmd_evaluate, cmd_pipeline, cmd_reconstruct, cmd_simulate, Layout};
use roidecomp::Error;

/// Spectral photon-counting CT: simulate, reconstruct, decompose, evaluate.
#[derive(Parser)]
#[command(name = "roidecomp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker thread cap (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Skip stages whose artifacts are present and up to date.
    #[arg(long, global = true)]
    resume: bool,

    /// Decomposition methods, e.g. `tv,coarse,roi`.
    #[arg(long, global = true, value_name = "LIST")]
    methods: Option<String>,

    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate noisy photon-counting sinograms and the ground truth.
    Simulate,
    /// Reconstruct per-bin attenuation images from a sinogram.
    Reconstruct {
        /// Sinogram raster (default: the simulate stage output).
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Run the requested decomposition methods on multi-energy images.
    Decompose {
        /// Multi-energy image raster (default: the reconstruct stage output).
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Score decompositions against the ground truth; write CSV, figures and sweeps.
    Evaluate,
    /// All stages in order.
    Pipeline,
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::InvalidInput(_) | Error::Parse { .. } | Error::ZeroFluence { .. } | Error::EnergyOutOfRange { .. } => 2,
        Error::Numerical(_) => 3,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> roidecomp::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(m) = &cli.methods {
        cfg.methods = Method::parse_list(m)?;
    }
    if let Some(out) = &cli.out {
        let abs = if out.is_absolute() {
            out.clone()
        } else {
            std::env::current_dir()?.join(out)
        };
        cfg.out = abs.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> roidecomp::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot set up {n} threads: {e}")))?;
    }
    let cfg = load_config(cli)?;
    let layout = Layout::new(cfg.out_dir());
    match &cli.command {
        Command::Simulate => cmd_simulate(&cfg, &layout),
        Command::Reconstruct { input } => cmd_reconstruct(&cfg, &layout, input.as_deref().map(Path::new)),
        Command::Decompose { input } => cmd_decompose(&cfg, &layout, input.as_deref().map(Path::new)),
        Command::Evaluate => cmd_evaluate(&cfg, &layout).map(|_| ()),
        Command::Pipeline => cmd_pipeline(&cfg, &layout, cli.resume).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
