use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use headerr_cli::config::parse_config;
use headerr_cli::output::{write_csv, write_json, RunManifest};
use headerr_cli::run::{execute, failures, run_fingerprint, Command};
use headerr_cli::sweep::Sweep;
use log::info;

/// Heading-error sweeps for RF-driven alkali scalar magnetometers.
#[derive(Parser)]
#[command(name = "headerr", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Precession frequency and heading error against tilt.
    Heading(Common),
    /// Separate nonlinear Zeeman, light-shift and nuclear Zeeman parts.
    Decompose(Common),
    /// Dual-helicity averages and their residual heading error.
    Dual(Common),
    /// Curves with an auxiliary field, flattening angles and threshold.
    Auxfield(Common),
    /// Run the consistency and oracle checks.
    Validate(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; `rb85_55uT` names the bundled one.
    #[arg(long)]
    config: PathBuf,
    /// key=start:stop:step or key=a,b,c over theta, detuning, B0, Ba,
    /// pump_power, helicity or geometry.
    #[arg(long = "sweep", value_name = "SPEC")]
    sweeps: Vec<String>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Output file; a manifest is written next to it. Default: stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads. Default: available parallelism.
    #[arg(long)]
    threads: Option<usize>,
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn main_inner(cmd: Command, args: Common) -> Result<ExitCode> {
    let start = Instant::now();
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("starting the worker pool")?;
    }
    let run = parse_config(&args.config)?;
    let sweeps = args
        .sweeps
        .iter()
        .map(|s| s.parse::<Sweep>())
        .collect::<Result<Vec<_>>>()?;

    let table = execute(cmd, &run, &sweeps)?;
    let failed = failures(&table);

    let mut manifest = RunManifest {
        fingerprint: run_fingerprint(cmd, &run, &sweeps),
        subcommand: cmd.as_str().into(),
        sweep_axes: sweeps.iter().map(|s| s.axis.key().to_string()).collect(),
        outputs: Vec::new(),
        wall_time_s: 0.0,
        version: env!("CARGO_PKG_VERSION").into(),
    };
    let emit = |w: &mut dyn Write, m: &RunManifest| match args.format {
        Format::Csv => write_csv(&table, m, w),
        Format::Json => write_json(&table, m, w),
    };
    match &args.out {
        Some(path) => {
            let mpath = manifest_path(path);
            manifest.outputs = vec![path.display().to_string(), mpath.display().to_string()];
            let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
            emit(&mut w, &manifest)?;
            w.flush()?;
            manifest.wall_time_s = start.elapsed().as_secs_f64();
            std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)? + "\n")
                .with_context(|| format!("writing {}", mpath.display()))?;
        }
        None => {
            let mut w = BufWriter::new(io::stdout().lock());
            emit(&mut w, &manifest)?;
            w.flush()?;
            manifest.wall_time_s = start.elapsed().as_secs_f64();
            info!("manifest: {}", serde_json::to_string(&manifest)?);
        }
    }
    if failed > 0 {
        eprintln!("{failed} row(s) failed; see the failure column");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::Heading(a) => (Command::Heading, a),
        Cmd::Decompose(a) => (Command::Decompose, a),
        Cmd::Dual(a) => (Command::Dual, a),
        Cmd::Auxfield(a) => (Command::Auxfield, a),
        Cmd::Validate(a) => (Command::Validate, a),
    };
    match main_inner(cmd, args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
