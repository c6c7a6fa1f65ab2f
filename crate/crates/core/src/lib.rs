//! Cut finite elements for geometrically parametrized Darcy and Stokes
//! problems on a fixed background mesh, with POD-Galerkin reduced order
//! models built from extended and transported snapshots.

// `!(x > 0.0)` deliberately rejects NaN; numeric kernels index several
// arrays with one loop variable.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod darcy;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod pipeline;
pub mod pod;
pub mod quadrature;
pub mod rom;
pub mod snapshot;
pub mod stokes;

pub use error::{Error, Result};
pub use geometry::{
    classify, classify_with, cylinder_levelset, cylinder_transport, ellipse_levelset, ellipse_transport, ActiveMesh,
    CellKind, InterfaceKind, LevelSetDomain, ParameterBox, TransportMap,
};
pub use linalg::{dense_solve, sparse_solve, sym_eig, sym_eig_tridiagonal, DenseMatrix, SparseMatrix, SparseSystem};
pub use mesh::{BackgroundMesh, DiagonalPattern, Point, Rect, Side, SideSet};
pub use quadrature::QuadratureRule;
