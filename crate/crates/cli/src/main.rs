use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use csesim::config::parse_config;
use csesim::figure::{emit_figure_data, write_tidy, Panel};
use csesim::sweep::{parse_mode, run_sweep, SweepError, SweepOptions, SweepResult, SweepSpec};
use csesim_core::tx_pipeline::RedundancyMode;
use csesim_core::{MetricName, SimConfig};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "csesim", version, about = "Content-selection error simulator for V2X cooperative perception")]
struct Cli {
    /// Worker threads for sweeps.
    #[arg(long, global = true, env = "CSESIM_THREADS")]
    threads: Option<usize>,

    /// Directory for CSV output and run records.
    #[arg(long, global = true, env = "CSESIM_OUT_DIR", default_value = "results")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one parameter point over the configured seeds.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_vehicles: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        /// hard, soft or off.
        #[arg(long, value_parser = mode_arg)]
        mode: Option<RedundancyMode>,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep the cross product of N, β and redundancy mode.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated N values. Defaults to 50,100,...,400.
        #[arg(long, value_delimiter = ',')]
        n_vehicles: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        beta: Vec<f64>,
        #[arg(long, value_delimiter = ',', value_parser = mode_arg)]
        mode: Vec<RedundancyMode>,
        /// Number of seeds, 1..=K. Overrides the configured list.
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Write per-panel tidy tables from an aggregate CSV.
    FigureData {
        /// Defaults to `<out-dir>/aggregate.csv`.
        #[arg(long)]
        aggregate: Option<PathBuf>,
        /// Panel id (3a ... 7b) or `all`.
        #[arg(long, default_value = "all")]
        panel: String,
    },
    /// Load and check a config file without running anything.
    ValidateConfig { path: PathBuf },
}

#[derive(Args)]
struct Common {
    /// TOML config file. Absent keys take the model defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Persist one JSON-lines run record per (point, seed).
    #[arg(long)]
    records: bool,
}

fn mode_arg(s: &str) -> Result<RedundancyMode, String> {
    parse_mode(s).ok_or_else(|| format!("unknown mode {s:?}; expected hard, soft or off"))
}

enum Failure {
    Config(String),
    Other(String),
}

impl From<SweepError> for Failure {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Config(e) => Failure::Config(e.to_string()),
            e => Failure::Other(e.to_string()),
        }
    }
}

fn load(path: Option<&Path>) -> Result<SimConfig, Failure> {
    match path {
        Some(p) => parse_config(p).map_err(|e| Failure::Config(e.to_string())),
        None => Ok(SimConfig::default()),
    }
}

fn sweep_and_report(cli: &Cli, config: &SimConfig, spec: &SweepSpec, records: bool) -> Result<u8, Failure> {
    let opts = SweepOptions { parallelism: cli.threads, record_dir: records.then(|| cli.out_dir.join("records")) };
    let result = run_sweep(config, spec, &opts, &cli.out_dir)?;
    print_summary(&result);
    let failed = result.failures();
    if failed > 0 {
        eprintln!("{failed} run(s) failed; see the status column of {}", cli.out_dir.join("raw.csv").display());
        return Ok(EXIT_PARTIAL);
    }
    Ok(0)
}

fn print_summary(result: &SweepResult) {
    let metrics = [MetricName::PCse, MetricName::Arr, MetricName::PSucc, MetricName::PDrop, MetricName::PRebroadcast];
    print!("{:>5} {:>5} {:>5}", "mode", "beta", "N");
    for m in metrics {
        print!(" {:>14}", m.as_str());
    }
    println!();
    for p in &result.points {
        print!("{:>5} {:>5} {:>5}", csesim::sweep::mode_str(p.point.mode), p.point.beta, p.point.n_vehicles);
        for m in metrics {
            match p.report.metric(m).mean {
                Some(v) => print!(" {v:>14.4}"),
                None => print!(" {:>14}", "-"),
            }
        }
        println!();
    }
}

fn figure_data(cli: &Cli, aggregate: Option<&Path>, panel: &str) -> Result<u8, Failure> {
    let panels: Vec<Panel> = if panel == "all" {
        Panel::ALL.to_vec()
    } else {
        vec![panel.parse().map_err(|e: csesim::figure::UnknownPanel| Failure::Other(e.to_string()))?]
    };
    let default = cli.out_dir.join("aggregate.csv");
    let src = aggregate.unwrap_or(&default);
    let dir = cli.out_dir.join("figures");
    fs::create_dir_all(&dir).map_err(|e| Failure::Other(e.to_string()))?;
    for p in panels {
        let input = File::open(src).map_err(|e| Failure::Other(format!("{}: {e}", src.display())))?;
        let rows = emit_figure_data(input, p).map_err(|e| Failure::Other(e.to_string()))?;
        let path = dir.join(format!("panel_{}.csv", p.id()));
        let out = BufWriter::new(File::create(&path).map_err(|e| Failure::Other(e.to_string()))?);
        write_tidy(&rows, out).map_err(|e| Failure::Other(e.to_string()))?;
        println!("{} ({} rows)", path.display(), rows.len());
    }
    Ok(0)
}

fn dispatch(cli: &Cli) -> Result<u8, Failure> {
    match &cli.command {
        Command::Run { common, n_vehicles, beta, mode, seed } => {
            let mut config = load(common.config.as_deref())?;
            if let Some(s) = seed {
                config.seeds = vec![*s];
            }
            let spec = SweepSpec {
                n_vehicles: n_vehicles.iter().copied().collect(),
                beta: beta.iter().copied().collect(),
                mode: mode.iter().copied().collect(),
            };
            sweep_and_report(cli, &config, &spec, common.records)
        }
        Command::Sweep { common, n_vehicles, beta, mode, seeds } => {
            let mut config = load(common.config.as_deref())?;
            if let Some(k) = seeds {
                config.seeds = (1..=*k).collect();
            }
            let n_vehicles = if n_vehicles.is_empty() { SweepSpec::default_n_grid() } else { n_vehicles.clone() };
            let spec = SweepSpec { n_vehicles, beta: beta.clone(), mode: mode.clone() };
            sweep_and_report(cli, &config, &spec, common.records)
        }
        Command::FigureData { aggregate, panel } => figure_data(cli, aggregate.as_deref(), panel),
        Command::ValidateConfig { path } => {
            load(Some(path))?;
            println!("{}: ok", path.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
