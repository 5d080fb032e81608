//! Trace operators, trace spaces, surface operators and trace complexes of
//! finite-dimensional Hilbert complex pairs, with a finite-element de Rham
//! instance on tetrahedral meshes.

// Links the system OpenBLAS providing LAPACK.
use openblas_src as _;

pub mod complex;
pub mod config;
pub mod derham;
pub mod exec;
pub mod linalg;
pub mod regular;
pub mod report;
pub mod sampling;
pub mod surface;
pub mod synthetic;
pub mod trace;
pub mod verify;

pub use complex::{ComplexLevel, ComplexPair};
pub use config::Tolerances;
pub use exec::Execution;
pub use linalg::{InnerProductSpace, Mat, QuotientSpace, RankPolicy, Subspace, Vector};
pub use report::{Check, Report, Status};
pub use trace::{Side, TraceSystem};
