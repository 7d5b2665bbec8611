use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use leafout::io::run::{execute, prepare, MANIFEST_NAME};
use leafout::io::{exit_code, RunConfig, RunOptions, TaskKind};
use leafout::Error;
use serde_json::json;

/// Environment variable naming the default output directory.
const OUT_DIR_ENV: &str = "LEAFOUT_OUT_DIR";
const FALLBACK_OUT_DIR: &str = "leafout-out";

#[derive(Parser, Debug)]
#[command(name = "leafout", version, about = "Rigid-origami simulation of leaf-out grippers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config and LEAFOUT_OUT_DIR)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for grid sweeps
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Reserved; recorded in the manifest
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Uniform grasping path over a psi range
    UniformPath,
    /// Energy along the uniform motion and its bistability report
    EnergyLandscape,
    /// Energy ratio over a grid of rest angles, with its zero contour
    RatioSurface,
    /// Drop-impact trigger map
    DropTest {
        /// CSV with columns h_mm,outcome (cross, circle, triangle)
        #[arg(long)]
        observations: Option<PathBuf>,
    },
    /// Multi-grasp programs driven by controlled main angles
    MultiGrasp {
        /// JSON list of {"name": ..., "units": [...]}
        #[arg(long)]
        programs: Option<PathBuf>,
    },
    /// OBJ mesh of one folded state
    ExportMesh,
    /// Check a configuration without running it
    Validate,
}

fn error_report(err: &Error) -> String {
    let kind = match exit_code(err) {
        1 => "io",
        3 => "numerical",
        _ => "validation",
    };
    let field = match err {
        Error::Config { field, .. } => Some(field.as_str()),
        _ => None,
    };
    json!({ "error": { "kind": kind, "field": field, "message": err.to_string() } }).to_string()
}

fn fail(err: &Error) -> ExitCode {
    eprintln!("{}", error_report(err));
    ExitCode::from(exit_code(err) as u8)
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::from_toml(&std::fs::read_to_string(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return fail(&Error::Config { field: "--threads".into(), message: "must be positive".into() });
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(&Error::Numerical(e.to_string()));
        }
    }
    let config = match load_config(cli.common.config.as_ref()) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let out_dir = cli
        .common
        .out
        .clone()
        .or_else(|| config.output.directory.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT_DIR));
    let mut opts = RunOptions { out_dir, seed: cli.common.seed, ..Default::default() };

    let kind = match &cli.command {
        Command::UniformPath => Some(TaskKind::UniformPath),
        Command::EnergyLandscape => Some(TaskKind::EnergyLandscape),
        Command::RatioSurface => Some(TaskKind::RatioSurface),
        Command::DropTest { observations } => {
            opts.observations_file = observations.clone();
            Some(TaskKind::DropTest)
        }
        Command::MultiGrasp { programs } => {
            opts.programs_file = programs.clone();
            Some(TaskKind::MultiGrasp)
        }
        Command::ExportMesh => Some(TaskKind::ExportMesh),
        Command::Validate => None,
    };

    let prepared = match prepare(config, kind, &opts) {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    if kind.is_none() {
        let hash = leafout::io::run::config_hash(&prepared.config);
        println!("{}", json!({ "valid": true, "task": prepared.kind, "config_sha256": hash }));
        return ExitCode::SUCCESS;
    }
    match execute(&prepared, &opts) {
        Ok(manifest) => {
            let summary = json!({
                "status": manifest.status,
                "manifest": opts.out_dir.join(MANIFEST_NAME),
                "files": manifest.files.iter().map(|f| &f.name).collect::<Vec<_>>(),
                "error": manifest.error,
            });
            println!("{summary}");
            ExitCode::from(manifest.status.exit_code() as u8)
        }
        Err(e) => fail(&e),
    }
}
