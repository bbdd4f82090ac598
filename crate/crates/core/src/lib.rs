//! Multiscale finite elements for periodic elliptic problems with mixed,
//! Robin and nonmonotone contact boundary conditions.

pub mod assembly;
pub mod basis;
pub mod cell;
pub mod coefficient;
pub mod error;
pub mod expansion;
pub mod field;
pub mod mesh;
pub mod problems;
pub mod quadrature;
pub mod solver;
pub mod sparse;
pub mod study;

pub use coefficient::{CoefficientField, GridCoefficient, Sym2};
pub use error::{Error, Result};
pub use mesh::{BoundaryTag, Mesh, Rect, SideTags};
