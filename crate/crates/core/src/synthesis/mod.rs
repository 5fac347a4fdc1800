//! Constructive algorithms: single-target carving, multi-target composition
//! and the rotationally symmetric designer.

mod carve;
mod carving;
mod compose;

pub use carve::{
    carve_single_target, carving_patches, projection_identity_disagreement, CarveOutcome, CarveParams, CarveState,
    DGrid, TraceRecord,
};
pub use carving::Carving;
pub use compose::{
    check_cone_disjointness, compose_multi_target, design_rot_sym, merged_prescription, rot_sym_cells, target_polygon,
    Cell, Composition, Ring, RotSymDesign,
};
