use nalgebra::Vector3;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot project the zero vector onto the unit sphere")]
    ZeroVector,

    #[error("ellipsoid focus must differ from the origin")]
    InvalidFocus,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("requested mass {requested} exceeds available energy {available}")]
    MassOutOfRange { requested: f64, available: f64 },

    #[error("query point coincides with the cone apex")]
    ApexQuery,

    #[error("duplicate patch priority {0}")]
    DuplicatePriority(u32),

    #[error("aperture is not connected ({components} components)")]
    DisconnectedAperture { components: usize },

    #[error("carving made no progress at iteration {iteration}: residual {residual:.6e} of {aperture:.6e}")]
    NoProgress {
        iteration: usize,
        residual: f64,
        aperture: f64,
        /// Parameters accepted before the stall.
        accepted: Vec<f64>,
    },

    #[error("prescribed energy {prescribed} differs from available {available}")]
    ConservationViolated { prescribed: f64, available: f64 },

    #[error("cells {i} and {j} violate cone disjointness near {witness:?}")]
    HypothesisViolated { i: usize, j: usize, witness: Vector3<f64> },

    #[error("cells {i} and {j} have overlapping base regions")]
    OverlappingCells { i: usize, j: usize },

    #[error("energy mismatch for cell {index}: expected {expected}, radiance mass {actual}")]
    EnergyMismatch { index: usize, expected: f64, actual: f64 },
}
