//! `reflector`: design, verify and export near-field reflectors from JSON
//! configurations.

mod config;
mod manifest;
mod mesh;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reflector_core::reflector::{interpolate, TargetPrescription, DEFAULT_WALL_RESOLUTION};
use reflector_core::sphere::SphericalSampler;
use reflector_core::verify::{energy_report, Surface, TraceResult, Tracer};
use serde::Serialize;

use config::DesignConfig;
use manifest::DesignManifest;

const EXIT_VERIFY_FAIL: u8 = 2;
const EXIT_NO_PROGRESS: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] reflector_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(reflector_core::Error::NoProgress { .. }) => EXIT_NO_PROGRESS,
            _ => EXIT_CONFIG,
        }
    }

    fn kind(&self) -> &'static str {
        use reflector_core::Error as E;
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Core(e) => match e {
                E::NoProgress { .. } => "no_progress",
                E::HypothesisViolated { .. } => "hypothesis_violated",
                E::OverlappingCells { .. } => "overlapping_cells",
                E::EnergyMismatch { .. } => "energy_mismatch",
                E::ConservationViolated { .. } => "conservation_violated",
                E::DisconnectedAperture { .. } => "disconnected_aperture",
                _ => "invalid_input",
            },
        }
    }
}

#[derive(Parser)]
#[command(
    name = "reflector",
    version,
    about = "Near-field reflector design by carving ellipsoids"
)]
struct Cli {
    /// Worker threads; falls back to REFLECTOR_THREADS. Results do not
    /// depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a reflector from a configuration and write its manifest.
    Design {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the target prescription here.
        #[arg(long)]
        prescription_out: Option<PathBuf>,
        /// Also write the carving steps as CSV here.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Ray-trace a manifest and compare with a prescription.
    Verify {
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to the prescription stored in the manifest.
        #[arg(long)]
        prescription: Option<PathBuf>,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Trace the wall-closed reflector instead.
        #[arg(long)]
        interpolated: bool,
        /// Report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write patch surfaces (and optionally walls) as Wavefront OBJ.
    ExportMesh {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long)]
        interpolated: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one CSV row per traced ray.
    TraceCsv {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        interpolated: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serializable");
    s.push(b'\n');
    s
}

fn load_manifest(path: &Path) -> Result<DesignManifest, CliError> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn trace_csv(m: &DesignManifest) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Config(format!("csv: {e}"));
    w.write_record(["cell", "k", "d", "measure", "best_measure", "residual"])
        .map_err(err)?;
    for (cell, t) in m.trace.iter().enumerate() {
        for s in &t.steps {
            w.write_record([
                cell.to_string(),
                s.k.to_string(),
                s.d.to_string(),
                s.measure.to_string(),
                s.best_measure.to_string(),
                s.residual.to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.into_inner().map_err(|e| CliError::Config(format!("csv: {e}")))
}

fn cmd_design(
    config: &Path,
    out: &Path,
    prescription_out: Option<&Path>,
    trace_out: Option<&Path>,
) -> Result<u8, CliError> {
    let bytes = read(config)?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| CliError::Config(format!("{}: {e}", config.display())))?;
    let cfg = DesignConfig::parse(&text)?;
    let m = manifest::design(&cfg, &bytes)?;
    write(out, &to_json(&m))?;
    if let Some(p) = prescription_out {
        write(p, &to_json(&m.prescription))?;
    }
    if let Some(p) = trace_out {
        write(p, &trace_csv(&m)?)?;
    }
    eprintln!(
        "{} patches, residual {:.3e} ({:.3e} of the aperture){}",
        m.reflector.patches().len(),
        m.residual,
        m.residual_fraction,
        if m.converged { "" } else { ", patch limit reached" }
    );
    Ok(0)
}

fn cmd_verify(
    manifest: &Path,
    prescription: Option<&Path>,
    samples: usize,
    seed: u64,
    interpolated: bool,
    out: Option<&Path>,
) -> Result<u8, CliError> {
    let m = load_manifest(manifest)?;
    let f: TargetPrescription = match prescription {
        Some(p) => serde_json::from_slice(&read(p)?).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        None => m.prescription.clone(),
    };
    let walls = if interpolated {
        Some(interpolate(&m.reflector, DEFAULT_WALL_RESOLUTION)?)
    } else {
        None
    };
    let surface = match &walls {
        Some(ir) => Surface::Interpolated(ir),
        None => Surface::Generalized(&m.reflector),
    };
    let report = energy_report(surface, &m.radiance, &f, samples, seed)?;
    match out {
        Some(p) => write(p, &to_json(&report))?,
        None => print!("{}", String::from_utf8_lossy(&to_json(&report))),
    }
    Ok(if report.pass { 0 } else { EXIT_VERIFY_FAIL })
}

fn cmd_export_mesh(manifest: &Path, resolution: usize, interpolated: bool, out: &Path) -> Result<u8, CliError> {
    if resolution < 8 {
        return Err(CliError::Config(format!("resolution {resolution} < 8")));
    }
    let m = load_manifest(manifest)?;
    let walls = if interpolated {
        Some(interpolate(&m.reflector, resolution)?)
    } else {
        None
    };
    write(
        out,
        mesh::write_obj(&m.reflector, walls.as_ref(), resolution).as_bytes(),
    )?;
    Ok(0)
}

fn cmd_trace_csv(manifest: &Path, samples: usize, seed: u64, interpolated: bool, out: &Path) -> Result<u8, CliError> {
    let m = load_manifest(manifest)?;
    let walls = if interpolated {
        Some(interpolate(&m.reflector, DEFAULT_WALL_RESOLUTION)?)
    } else {
        None
    };
    let surface = match &walls {
        Some(ir) => Surface::Interpolated(ir),
        None => Surface::Generalized(&m.reflector),
    };
    let tracer = Tracer::new(surface, &m.prescription.points)?;
    let outcomes = tracer.trace_all(&SphericalSampler::uniform(seed, samples));
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Config(format!("csv: {e}"));
    w.write_record(["m_x", "m_y", "m_z", "patch", "result", "target", "miss_distance"])
        .map_err(io)?;
    for o in &outcomes {
        let v = o.direction.as_vec();
        let patch = o.patch.map(|p| p.to_string()).unwrap_or_default();
        let (result, target, miss) = match o.result {
            TraceResult::Target { index, miss_distance } => ("target", index.to_string(), miss_distance.to_string()),
            TraceResult::Blocked { .. } => ("blocked", String::new(), String::new()),
            TraceResult::Lost => ("lost", String::new(), String::new()),
        };
        w.write_record([
            v.x.to_string(),
            v.y.to_string(),
            v.z.to_string(),
            patch,
            result.into(),
            target,
            miss,
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Config(format!("csv: {e}")))?;
    write(out, &bytes)?;
    Ok(0)
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("REFLECTOR_THREADS") {
        Ok(s) if !s.trim().is_empty() => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("REFLECTOR_THREADS={s} is not a thread count"))),
        _ => Ok(None),
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    if let Some(n) = threads(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Design {
            config,
            out,
            prescription_out,
            trace_out,
        } => cmd_design(config, out, prescription_out.as_deref(), trace_out.as_deref()),
        Command::Verify {
            manifest,
            prescription,
            samples,
            seed,
            interpolated,
            out,
        } => cmd_verify(
            manifest,
            prescription.as_deref(),
            *samples,
            *seed,
            *interpolated,
            out.as_deref(),
        ),
        Command::ExportMesh {
            manifest,
            resolution,
            interpolated,
            out,
        } => cmd_export_mesh(manifest, *resolution, *interpolated, out),
        Command::TraceCsv {
            manifest,
            samples,
            seed,
            interpolated,
            out,
        } => cmd_trace_csv(manifest, *samples, *seed, *interpolated, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let diag = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
                "detail": match &e {
                    CliError::Core(c) => format!("{c:?}"),
                    _ => String::new(),
                },
            });
            eprintln!("{diag}");
            ExitCode::from(e.exit_code())
        }
    }
}
