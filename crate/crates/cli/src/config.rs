use nalgebra::Vector3;
use reflector_core::sphere::{ConicalCylinder, Radiance, RadianceKind, Region};
use reflector_core::synthesis::{CarveParams, Cell, Ring};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Base of the restriction: a polar cap `m_z > cap` or any region tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaseSpec {
    Cap { cap: f64 },
    Region(Region),
}

impl BaseSpec {
    pub fn region(&self) -> Region {
        match self {
            BaseSpec::Cap { cap } => Region::z_cap(*cap),
            BaseSpec::Region(r) => r.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestrictionSpec {
    pub base: BaseSpec,
    pub z_prime: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadianceSpec {
    #[serde(flatten)]
    pub kind: RadianceKind,
    /// Defaults to the restriction base.
    #[serde(default)]
    pub support: Option<Region>,
}

/// Ring of a rotationally symmetric design. Exactly one of `f` (absolute)
/// and `share` (fraction of the total radiance) is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingSpec {
    pub k: u32,
    pub d: f64,
    pub xi: f64,
    #[serde(default)]
    pub t: f64,
    #[serde(default)]
    pub f: Option<f64>,
    #[serde(default)]
    pub share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mode {
    SingleTarget { x: Vector3<f64> },
    MultiTarget { cells: Vec<Cell> },
    RotSym { rings: Vec<RingSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub restriction: RestrictionSpec,
    pub radiance: RadianceSpec,
    pub mode: Mode,
    #[serde(default)]
    pub carve: CarveParams,
    /// Overrides `carve.seed` when present.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl DesignConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: DesignConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let r = &self.restriction;
        if let BaseSpec::Cap { cap } = r.base {
            if !(cap > -1.0 && cap < 1.0) {
                return Err(CliError::Config(format!(
                    "restriction.base.cap = {cap}, need -1 < cap < 1"
                )));
            }
        }
        if !(r.z_prime > 0.0 && r.delta > 0.0) || !r.z_prime.is_finite() || !r.delta.is_finite() {
            return Err(CliError::Config(format!(
                "restriction: need z_prime > 0 and delta > 0, got {} and {}",
                r.z_prime, r.delta
            )));
        }
        if let Mode::RotSym { rings } = &self.mode {
            if !matches!(r.base, BaseSpec::Cap { .. }) {
                return Err(CliError::Config(
                    "mode rot_sym needs restriction.base = {\"cap\": c}".into(),
                ));
            }
            for (i, ring) in rings.iter().enumerate() {
                if ring.f.is_some() == ring.share.is_some() {
                    return Err(CliError::Config(format!(
                        "mode.rings[{i}]: give exactly one of f and share"
                    )));
                }
            }
        }
        self.carve_params().validate().map_err(CliError::from)?;
        self.radiance()?;
        Ok(())
    }

    pub fn restriction(&self) -> ConicalCylinder {
        ConicalCylinder::new(
            self.restriction.base.region(),
            self.restriction.z_prime,
            self.restriction.delta,
        )
    }

    pub fn radiance(&self) -> Result<Radiance, CliError> {
        let support = self
            .radiance
            .support
            .clone()
            .unwrap_or_else(|| self.restriction.base.region());
        Ok(Radiance::new(self.radiance.kind.clone(), support)?)
    }

    pub fn carve_params(&self) -> CarveParams {
        let mut p = self.carve.clone();
        if let Some(s) = self.seed {
            p.seed = s;
        }
        p
    }

    /// Rings with absolute energies; shares are taken of the radiance mass
    /// of the base cap.
    pub fn rings(&self, g: &Radiance) -> Result<Vec<Ring>, CliError> {
        let Mode::RotSym { rings } = &self.mode else {
            return Ok(Vec::new());
        };
        let base = self.restriction.base.region();
        let mass = g
            .symmetric_mass(&base)
            .ok_or_else(|| CliError::Config("mode rot_sym needs a radiance symmetric about +z".into()))?;
        Ok(rings
            .iter()
            .map(|r| Ring {
                k: r.k,
                d: r.d,
                xi: r.xi,
                t: r.t,
                f: r.f.unwrap_or_else(|| r.share.unwrap_or(0.0) * mass),
            })
            .collect())
    }
}
