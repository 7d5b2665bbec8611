//! Rigid-origami simulation of leaf-out grippers.

pub mod droptest;
pub mod energy;
pub mod error;
pub mod explore;
pub mod geometry;
pub mod io;
pub mod kinematics;
pub mod rotation;
pub mod uniform;
pub mod unitcell;

pub use error::{Error, Result};
pub use geometry::{reconstruct_mesh, CreaseId, CreaseKind, FoldedMesh, Frame, LeafOutGeometry, Side};
pub use kinematics::{
    chain_product, constraint_matrix, project_step, residual, trace_path, ClosureResidual, FoldState, FoldingPath,
    SolverSettings, StepDriver, StepRequest, Termination,
};
pub use unitcell::{d_sub_d_main, sub_angle_from_main};
