use reflector_core::reflector::{GeneralizedReflector, TargetPrescription};
use reflector_core::sphere::{radiance_integral, Estimate, Radiance, SphericalSampler};
use reflector_core::synthesis::{
    carve_single_target, compose_multi_target, design_rot_sym, merged_prescription, TraceRecord,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{BaseSpec, DesignConfig, Mode};
use crate::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Draws for the aperture energy when no quadrature applies.
const MASS_SAMPLES: usize = 1 << 20;

/// Per-cell carving record; single-target designs have one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTrace {
    pub residual: Estimate,
    pub aperture_measure: Estimate,
    pub steps: Vec<TraceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignManifest {
    pub tool_version: String,
    /// SHA-256 of the configuration file bytes.
    pub config_hash: String,
    pub config: DesignConfig,
    pub radiance: Radiance,
    pub reflector: GeneralizedReflector,
    pub prescription: TargetPrescription,
    /// Uncovered spherical measure summed over cells.
    pub residual: f64,
    /// Residual over the carved aperture measure.
    pub residual_fraction: f64,
    pub converged: bool,
    /// Band boundaries of a rotationally symmetric design.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<f64>,
    pub trace: Vec<CellTrace>,
}

pub fn config_hash(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn aperture_mass(cfg: &DesignConfig, g: &Radiance) -> f64 {
    let base = cfg.restriction.base.region();
    g.symmetric_mass(&base).unwrap_or_else(|| {
        let sampler = match base.bounding_cap() {
            Some((axis, level)) => SphericalSampler::cap(cfg.carve_params().seed, MASS_SAMPLES, axis, level),
            None => SphericalSampler::uniform(cfg.carve_params().seed, MASS_SAMPLES),
        };
        radiance_integral(g, &base, &sampler).mean
    })
}

pub fn design(cfg: &DesignConfig, config_bytes: &[u8]) -> Result<DesignManifest, CliError> {
    let g = cfg.radiance()?;
    let params = cfg.carve_params();
    let restriction = cfg.restriction();
    let (reflector, prescription, trace, converged, levels) = match &cfg.mode {
        Mode::SingleTarget { x } => {
            let out = carve_single_target(&restriction, x, &g, &params)?;
            let f = TargetPrescription::new(vec![*x], vec![aperture_mass(cfg, &g)])?;
            let cell = CellTrace {
                residual: out.residual,
                aperture_measure: out.aperture_measure,
                steps: out.trace,
            };
            (out.reflector, f, vec![cell], out.converged, Vec::new())
        }
        Mode::MultiTarget { cells } => {
            let c = compose_multi_target(cells, &restriction, &g, &params)?;
            let trace = cell_traces(&c.residuals, &c.aperture_measures, c.traces);
            let f = merged_prescription(cells);
            (c.reflector, f, trace, c.converged, Vec::new())
        }
        Mode::RotSym { .. } => {
            let BaseSpec::Cap { cap } = cfg.restriction.base else {
                return Err(CliError::Config(
                    "mode rot_sym needs restriction.base = {\"cap\": c}".into(),
                ));
            };
            let rings = cfg.rings(&g)?;
            let d = design_rot_sym(cap, restriction.z_prime, restriction.delta, &rings, &g, &params)?;
            let c = d.composition;
            let trace = cell_traces(&c.residuals, &c.aperture_measures, c.traces);
            (c.reflector, d.prescription, trace, c.converged, d.levels)
        }
    };
    let residual: f64 = trace.iter().map(|c| c.residual.mean).sum();
    let measure: f64 = trace.iter().map(|c| c.aperture_measure.mean).sum();
    Ok(DesignManifest {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: config_hash(config_bytes),
        config: cfg.clone(),
        radiance: g,
        reflector,
        prescription,
        residual,
        residual_fraction: if measure > 0.0 { residual / measure } else { 0.0 },
        converged,
        levels,
        trace,
    })
}

fn cell_traces(residuals: &[Estimate], measures: &[Estimate], steps: Vec<Vec<TraceRecord>>) -> Vec<CellTrace> {
    residuals
        .iter()
        .zip(measures)
        .zip(steps)
        .map(|((r, a), s)| CellTrace {
            residual: *r,
            aperture_measure: *a,
            steps: s,
        })
        .collect()
}
