//! `netcem` command-line pipeline.

mod commands;
mod config;
mod session;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{env_threads, BenchSection, FileConfig};
use netcem::study::StudyGrid;
use netcem::CpoPolicy;
use session::Session;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Core(netcem::Error),
}

impl From<netcem::Error> for CliError {
    fn from(e: netcem::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Core(e) if e.is_numerical() => "numerical",
            CliError::Core(netcem::Error::Io { .. } | netcem::Error::Parse { .. }) => "io",
            CliError::Core(_) => "config",
        }
    }

    fn exit_code(&self) -> u8 {
        match self.kind() {
            "config" => 2,
            "numerical" => 3,
            _ => 4,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Config(m) | CliError::Io(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "netcem",
    version,
    about = "CEM multiscale solver for high-contrast spatial networks"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand; flags override the config file.
#[derive(Args, Debug, Default)]
struct Common {
    /// TOML config file (unknown keys are rejected).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Network bundle directory written by `generate`.
    #[arg(long, global = true)]
    bundle: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    contrast: Option<f64>,
    /// Number of subgraphs.
    #[arg(short = 'n', long, global = true)]
    subgraphs: Option<usize>,
    /// Partition file (one subgraph id per node).
    #[arg(long, global = true)]
    partition: Option<PathBuf>,
    /// Oversampling layers.
    #[arg(short = 'l', long, global = true)]
    layers: Option<usize>,
    /// Use the global basis instead of localized ones.
    #[arg(long, global = true)]
    global: bool,
    /// Eigenvectors per subgraph.
    #[arg(long, global = true)]
    nov: Option<usize>,
    /// Uniform Poincare constant, replacing the configured policy.
    #[arg(long, global = true)]
    c_po: Option<f64>,
    /// Worker threads (overrides NETCEM_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a network bundle for a preset.
    Generate,
    /// Partition the network into subgraphs.
    Partition,
    /// Solve the local spectral problems.
    Aux,
    /// Build and write the multiscale basis.
    Basis,
    /// Multiscale solve, with errors against the fine solution.
    Solve {
        /// Skip the fine reference solve.
        #[arg(long)]
        no_fine: bool,
    },
    /// Small eigenvalues, partition of unity and basis decay.
    Analyze {
        #[arg(long, default_value_t = 0)]
        subgraph: usize,
        /// Initial number of eigenvalues to compute.
        #[arg(long, default_value_t = 8)]
        probe: usize,
        #[arg(long, default_value_t = 4)]
        l_max: usize,
    },
    /// Thread scaling of the offline stages.
    Bench {
        /// Comma-separated thread counts, first one is the baseline.
        #[arg(long, value_delimiter = ',')]
        thread_list: Option<Vec<usize>>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Parameter sweep; axes come from the [study] table or these lists.
    Study {
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        l_list: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        nov_list: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        contrast_list: Option<Vec<f64>>,
    },
}

impl Common {
    fn as_overrides(&self) -> FileConfig {
        FileConfig {
            preset: self.preset.clone(),
            bundle: self.bundle.clone(),
            seed: self.seed,
            contrast: self.contrast,
            subgraphs: self.subgraphs,
            partition: self.partition.clone(),
            layers: self.layers,
            global: self.global.then_some(true),
            nov: self.nov,
            threads: self.threads,
            output: self.output.clone(),
            c_po: self.c_po.map(|value| CpoPolicy::Uniform { value }),
            ..Default::default()
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Generate => "generate",
        Command::Partition => "partition",
        Command::Aux => "aux",
        Command::Basis => "basis",
        Command::Solve { .. } => "solve",
        Command::Analyze { .. } => "analyze",
        Command::Bench { .. } => "bench",
        Command::Study { .. } => "study",
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let env = FileConfig {
        threads: env_threads()?,
        ..Default::default()
    };
    let mut cfg = file.overlay(env).overlay(cli.common.as_overrides());
    if let Command::Bench {
        thread_list,
        repeats,
    } = &cli.command
    {
        let b = cfg.bench.clone().unwrap_or_default();
        cfg.bench = Some(BenchSection {
            threads: thread_list.clone().or(b.threads),
            repeats: repeats.or(b.repeats),
        });
    }
    cfg.validate()?;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let mut s = Session::open(command_name(&cli.command), cfg)?;
    if let Command::Study {
        n_list,
        l_list,
        nov_list,
        contrast_list,
    } = &cli.command
    {
        // flags replace single axes; anything unset falls back to the resolved run
        let c = &s.config;
        let base = c.study.clone().unwrap_or_else(|| StudyGrid {
            n: vec![c.subgraphs.expect("resolved")],
            layers: vec![c.layers.expect("resolved")],
            nov: vec![c.nov.expect("resolved")],
            contrast: vec![s.problem.contrast],
        });
        s.config.study = Some(StudyGrid {
            n: n_list.clone().unwrap_or(base.n),
            layers: l_list.clone().unwrap_or(base.layers),
            nov: nov_list.clone().unwrap_or(base.nov),
            contrast: contrast_list.clone().unwrap_or(base.contrast),
        });
        s.config.validate()?;
    }
    match &cli.command {
        Command::Generate => commands::generate(&s),
        Command::Partition => commands::partition(&s),
        Command::Aux => commands::aux(&s),
        Command::Basis => commands::basis(&s),
        Command::Solve { no_fine } => commands::solve(&s, !no_fine),
        Command::Analyze {
            subgraph,
            probe,
            l_max,
        } => commands::analyze(
            &s,
            &commands::AnalyzeOptions {
                subgraph: *subgraph,
                probe: *probe,
                l_max: *l_max,
            },
        ),
        Command::Bench { .. } => {
            let b = s.config.bench.clone().unwrap_or_default();
            let threads = b.threads.unwrap_or_else(|| {
                vec![
                    1,
                    std::thread::available_parallelism().map_or(1, |n| n.get()),
                ]
            });
            commands::bench(&s, &threads, b.repeats.unwrap_or(3))
        }
        Command::Study { .. } => commands::study(&s),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Config(e.to_string());
            eprintln!(
                "{}",
                json!({ "error": err.kind(), "exit_code": 2, "message": err.message() })
            );
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            eprintln!(
                "{}",
                json!({ "error": e.kind(), "exit_code": code, "message": e.message() })
            );
            ExitCode::from(code)
        }
    }
}
