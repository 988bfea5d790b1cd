use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use expcli::config::{ExperimentConfig, ExperimentKind, OutputFormat};
use expcli::{emit, run_experiment};

#[derive(Parser)]
#[command(name = "expcli", about = "Experiment runner for coalescing-flow studies", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Overrides {
    /// Base seed; replica i derives its own stream from seed and i.
    #[arg(long)]
    seed: Option<u64>,
    /// Replica count.
    #[arg(long)]
    replicas: Option<usize>,
    /// Output path prefix (extension added per format).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format.
    #[arg(long, value_parser = ["csv", "json", "both"])]
    format: Option<String>,
    /// Worker threads for independent levels.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Tally realized coalescence schemes of a small driftless motion.
    Census {
        /// Comma-separated ascending start points.
        #[arg(long, default_value = "0.0,0.3,0.6")]
        starts: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Parse and validate a config file, printing the effective settings.
    ValidateConfig { config: PathBuf },
}

fn apply(cfg: &mut ExperimentConfig, o: &Overrides) -> expcli::Result<()> {
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(r) = o.replicas {
        cfg.replicas = r;
    }
    if let Some(out) = &o.out {
        cfg.out = out.clone();
    }
    if let Some(f) = &o.format {
        cfg.format = OutputFormat::parse(f)?;
    }
    if let Some(w) = o.workers {
        cfg.workers = w;
    }
    cfg.validate()
}

fn execute(cfg: &ExperimentConfig) -> expcli::Result<()> {
    let record = run_experiment(cfg)?;
    let files = emit(&record, cfg.format, &cfg.out)?;
    if let Some(fit) = &record.slope {
        println!(
            "{}: {} levels, slope {:.4} +- {:.4}",
            record.experiment,
            record.levels.len(),
            fit.slope,
            fit.ci95
        );
    } else {
        println!("{}: {} levels", record.experiment, record.levels.len());
    }
    if let Some(note) = &record.model_note {
        println!("note: {note}");
    }
    if let Some(secs) = record.wall_clock_secs {
        println!("wall clock: {secs:.2} s");
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, overrides } => ExperimentConfig::from_file(&config)
            .and_then(|mut cfg| {
                apply(&mut cfg, &overrides)?;
                execute(&cfg)
            }),
        Command::Census { starts, overrides } => {
            let parsed: std::result::Result<Vec<f64>, _> =
                starts.split(',').map(|s| s.trim().parse::<f64>()).collect();
            match parsed {
                Ok(points) => {
                    let mut cfg = ExperimentConfig {
                        kind: ExperimentKind::SchemeCensus,
                        start_points: points,
                        ..ExperimentConfig::default()
                    };
                    apply(&mut cfg, &overrides).and_then(|()| execute(&cfg))
                }
                Err(_) => Err(expcli::CliError::Config(format!(
                    "cannot parse start points '{starts}'"
                ))),
            }
        }
        Command::ValidateConfig { config } => {
            ExperimentConfig::from_file(&config).map(|cfg| {
                println!("ok: digest {}", cfg.digest());
                println!(
                    "{}",
                    serde_json::to_string_pretty(&cfg).expect("config serializes")
                );
            })
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
