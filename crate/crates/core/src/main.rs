use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use concept_engine::cli::{
    cmd_census, cmd_extract, cmd_failures, cmd_fixtures_generate, cmd_groups, cmd_transfer,
    outputs_of,
};
use concept_engine::config::{EngineConfig, Overrides};
use concept_engine::{Error, GroupKey, Result};

#[derive(Parser)]
#[command(
    name = "concept-engine",
    version,
    about = "Contrastive concept extraction for neural features"
)]
struct Cli {
    /// key = value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    topk: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count features with enough highly activating samples
    Census,
    /// Extract concepts for features or feature groups
    Extract {
        #[arg(long)]
        feature: Vec<usize>,
        /// Comma-separated feature indices, e.g. 2,5
        #[arg(long)]
        group: Vec<GroupKey>,
    },
    /// Discover co-activating feature groups
    Groups,
    /// Explain misclassified samples of a linear head
    Failures,
    /// Fit a transfer map and carry concepts across
    Transfer,
    /// Synthetic test data
    Fixtures {
        #[command(subcommand)]
        action: FixturesAction,
    },
}

#[derive(Subcommand)]
enum FixturesAction {
    /// Write a planted instance to --out
    Generate,
}

fn load_config(cli: &Cli) -> Result<EngineConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = EngineConfig::load(path)?;
    cfg.apply(&Overrides {
        alpha: cli.alpha,
        gamma: cli.gamma,
        top_k: cli.topk,
        out: cli.out.clone(),
        seed: cli.seed,
        threads: cli.threads,
    });
    cfg.validate()?;
    Ok(cfg)
}

fn init_threads(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))
}

fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    if let Command::Fixtures {
        action: FixturesAction::Generate,
    } = &cli.command
    {
        let out = cli
            .out
            .clone()
            .ok_or_else(|| Error::Config("fixtures generate needs --out".into()))?;
        init_threads(cli.threads.unwrap_or(0))?;
        let inst = cmd_fixtures_generate(cli.seed.unwrap_or(0), &out)?;
        return Ok(inst.files().keys().map(|n| out.join(n)).collect());
    }

    let cfg = load_config(&cli)?;
    init_threads(cfg.threads)?;
    let name = match &cli.command {
        Command::Census => {
            cmd_census(&cfg)?;
            "census"
        }
        Command::Extract { feature, group } => {
            let mut targets: Vec<GroupKey> = feature.iter().map(|&f| GroupKey::single(f)).collect();
            targets.extend(group.iter().cloned());
            cmd_extract(&cfg, &targets)?;
            "extract"
        }
        Command::Groups => {
            cmd_groups(&cfg)?;
            "groups"
        }
        Command::Failures => {
            cmd_failures(&cfg)?;
            "failures"
        }
        Command::Transfer => {
            cmd_transfer(&cfg)?;
            "transfer"
        }
        Command::Fixtures { .. } => unreachable!("handled above"),
    };
    Ok(outputs_of(name, &cfg))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
