use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use zdmap_core::harness::config::{ExperimentConfig, Method};
use zdmap_core::harness::dump::{self, load_mapping};
use zdmap_core::harness::montecarlo::{deployed_distortion, monte_carlo_validate};
use zdmap_core::harness::run::{continuous_model, run_to_dir, sweep, DIAGNOSTIC_FILE};
use zdmap_core::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

/// Designs zero-delay analog mappings for two correlated sources over two
/// noisy channels.
#[derive(Parser, Debug)]
#[command(name = "zdmap", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set anneal.alpha=0.9`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory (overrides `run.out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_method)]
    method: Option<Method>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Design one system and write summary, mapping and telemetry.
    Run,
    /// Run every point of the `[sweep]` section and write `sweep.csv`.
    Sweep,
    /// Monte-Carlo check of a saved mapping against the configured source.
    Validate {
        /// A `mapping.json` written by `run`.
        mapping: PathBuf,
        /// Sample count (overrides `validate.mc_samples`).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Print the hardened encoder table of a saved mapping as CSV.
    Dump {
        mapping: PathBuf,
        /// Write to this file instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Io { .. } | Error::Format { .. } => EXIT_FAILURE,
    }
}

/// Overrides from the dedicated flags, applied after `--set`.
fn overrides(common: &Common) -> Vec<String> {
    let mut o = common.set.clone();
    if let Some(s) = common.seed {
        o.push(format!("run.seed={s}"));
    }
    if let Some(m) = common.method {
        o.push(format!("method=\"{m}\""));
    }
    if let Some(d) = &common.out {
        o.push(format!("run.out_dir={}", toml_string(&d.to_string_lossy())));
    }
    o
}

fn toml_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn load_config(common: &Common) -> Result<ExperimentConfig, (u8, String)> {
    ExperimentConfig::load(common.config.as_deref(), &overrides(common)).map_err(|e| (EXIT_CONFIG, e.to_string()))
}

fn write_diagnostic(out: &Path, cfg: &ExperimentConfig, e: &Error) {
    let record = json!({
        "error": "numeric",
        "message": e.to_string(),
        "method": cfg.method.to_string(),
        "seed": cfg.run.seed,
        "config": cfg.to_toml(),
    });
    let path = out.join(DIAGNOSTIC_FILE);
    let written = std::fs::create_dir_all(out)
        .map_err(|e| e.to_string())
        .and_then(|_| dump::write_json(&path, &record).map_err(|e| e.to_string()));
    if let Err(w) = written {
        log::error!("could not write diagnostic: {w}");
    } else {
        eprintln!("diagnostic written to {}", path.display());
    }
}

fn execute(cli: &Cli) -> Result<(), (u8, String)> {
    let cfg = load_config(&cli.common)?;
    let fail = |e: Error, cfg: &ExperimentConfig| {
        if matches!(e, Error::Numeric(_)) {
            write_diagnostic(&cfg.run.out_dir, cfg, &e);
        }
        (exit_code(&e), e.to_string())
    };
    match &cli.command {
        Command::Run => {
            let r = run_to_dir(&cfg, &cfg.run.out_dir).map_err(|e| fail(e, &cfg))?;
            println!(
                "{} D={:.6} P1={:.4} P2={:.4} SNR={:.3} dB CSNR={:.3} dB{}",
                r.method,
                r.d,
                r.p1,
                r.p2,
                r.snr_db,
                r.csnr_db,
                if r.flagged { " [power target missed]" } else { "" }
            );
            if let Some(mc) = r.mc {
                println!("monte carlo D={:.6} +/- {:.6}", mc.d, mc.stderr);
            }
            println!("results in {}", cfg.run.out_dir.display());
        }
        Command::Sweep => {
            let rows = sweep(&cfg, Some(&cfg.run.out_dir)).map_err(|e| fail(e, &cfg))?;
            for r in &rows {
                println!(
                    "lambda=({:.4e},{:.4e}) CSNR={:.3} dB SNR={:.3} dB{}",
                    r.lambda1,
                    r.lambda2,
                    r.csnr_db,
                    r.snr_db,
                    if r.flagged { " flagged" } else { "" }
                );
            }
            println!("{} points in {}", rows.len(), cfg.run.out_dir.join("sweep.csv").display());
        }
        Command::Validate { mapping, samples } => {
            let m = load_mapping(mapping).map_err(|e| (exit_code(&e), e.to_string()))?;
            let (e1, e2) = (m.encoder1.grid_encoder(), m.encoder2.grid_encoder());
            let model = continuous_model(&cfg);
            let n = samples.unwrap_or(cfg.validate.mc_samples);
            let mc = monte_carlo_validate(&e1, &e2, &m.decoder, &model, n, cfg.run.seed)
                .map_err(|e| (exit_code(&e), e.to_string()))?;
            let deployed = deployed_distortion(&e1, &e2, &m.decoder, &model);
            let report = json!({ "monte_carlo": mc, "deployed": deployed });
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
        Command::Dump { mapping, csv } => {
            let m = load_mapping(mapping).map_err(|e| (exit_code(&e), e.to_string()))?;
            let res = match csv {
                Some(p) => dump::write_mapping_csv(&m, p),
                None => dump::write_mapping_csv_to(&m, std::io::stdout().lock()).map_err(|e| Error::Format {
                    path: PathBuf::from("<stdout>"),
                    message: e.to_string(),
                }),
            };
            res.map_err(|e| (exit_code(&e), e.to_string()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
