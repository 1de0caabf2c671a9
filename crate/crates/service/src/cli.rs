use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use ecbw_core::analysis::{self, AnalysisError};
use ecbw_core::session_engine::{EngineError, SessionEngine};
use ecbw_core::simulator::{self, RunConfig, SimError};
use ecbw_core::{IdeaStore, SelectionStrategy, StoreError};
use log::info;

use crate::api::{router, AppState};
use crate::config::ServiceConfig;
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "ecbw", version, about = "Evolutionary brainwriting sessions, simulations and reports")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve the participant API over one store.
    Serve {
        /// JSON service config; flags and environment override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        strategy: Option<SelectionStrategy>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        topic: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run agent simulations and write one event log and quality trace per replicate.
    Simulate { config: PathBuf, out_dir: PathBuf },
    /// Write every analysis report for an event log.
    Analyze { log: PathBuf, out_dir: PathBuf },
    /// Print the idea table of an event log as CSV.
    Export {
        log: PathBuf,
        /// Write here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io(_) | StoreError::Csv(_) => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(_) | SimError::Csv(_) => CliError::Io(e.to_string()),
            SimError::Store(s) => s.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Io(_) | AnalysisError::Csv(_) => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Store(s) => s.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn load_log(path: &Path) -> Result<IdeaStore, CliError> {
    if !path.is_file() {
        return Err(CliError::Io(format!("{}: no such file", path.display())));
    }
    Ok(IdeaStore::load(path)?)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Serve { config, store, strategy, port, topic, seed } => {
            let mut cfg = match config {
                Some(path) => ServiceConfig::load(&path)?,
                None => ServiceConfig::default(),
            };
            cfg = cfg.with_env(|k| std::env::var(k).ok())?;
            if let Some(v) = store {
                cfg.store_path = v;
            }
            if let Some(v) = strategy {
                cfg.strategy = v;
            }
            if let Some(v) = port {
                cfg.port = v;
            }
            if let Some(v) = topic {
                cfg.topic = v;
            }
            if seed.is_some() {
                cfg.seed = seed;
            }
            serve(cfg)
        }
        Command::Simulate { config, out_dir } => {
            let text = std::fs::read_to_string(&config).map_err(io_err(&config))?;
            let run_config = RunConfig::from_json(&text)?;
            for path in simulate(&run_config, &out_dir)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Analyze { log, out_dir } => {
            let store = load_log(&log)?;
            std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
            for path in analysis::write_reports(&store, &out_dir)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Export { log, output } => {
            let store = load_log(&log)?;
            match output {
                Some(path) => {
                    let file = std::fs::File::create(&path).map_err(io_err(&path))?;
                    store.export_csv(std::io::BufWriter::new(file))?;
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    store.export_csv(&mut lock)?;
                    lock.flush().map_err(|e| CliError::Io(e.to_string()))?;
                }
            }
            Ok(())
        }
    }
}

/// One `run_NNN.jsonl` event log and `run_NNN.quality.jsonl` trace per
/// replicate; replicate `r` uses seed `seed + r`.
pub fn simulate(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    for r in 0..config.replicates {
        let out = simulator::run(&config.with_seed(config.seed.wrapping_add(u64::from(r))))?;
        let log = out_dir.join(format!("run_{r:03}.jsonl"));
        out.store.save(&log)?;
        let trace = out_dir.join(format!("run_{r:03}.quality.jsonl"));
        std::fs::write(&trace, out.quality_trace()).map_err(io_err(&trace))?;
        written.extend([log, trace]);
    }
    Ok(written)
}

pub fn build_state(cfg: &ServiceConfig) -> Result<Arc<AppState>, CliError> {
    cfg.store_config().validate()?;
    let engine = SessionEngine::open(&cfg.store_path, cfg.store_config(), cfg.engine_config())?;
    Ok(Arc::new(AppState {
        engine: Arc::new(engine),
        topic: cfg.topic.clone(),
        instructions: cfg.instructions.clone(),
        allowlist: cfg.allowlist()?,
    }))
}

fn serve(cfg: ServiceConfig) -> Result<(), CliError> {
    let state = build_state(&cfg)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", cfg.port))
            .await
            .map_err(|e| CliError::Io(format!("port {}: {e}", cfg.port)))?;
        info!(
            "serving {} ({}) on port {}",
            cfg.store_path.display(),
            cfg.strategy,
            cfg.port
        );
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Io(e.to_string()))
    })
}
