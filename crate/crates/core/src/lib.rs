//! Kernel-independent fast multipole method (KIFMM) for Laplace-type kernels,
//! with all translation operators compressed by a two-stage singular-value
//! scheme, plus a collocation boundary-element solver built on the resulting
//! O(N) matrix-vector product.
//!
//! The crate is organised around the pipeline:
//!
//! 1. [`octree`] partitions sources (points or element centroids) into a
//!    uniform-depth cube hierarchy with near fields and interaction lists.
//! 2. [`surfaces`] samples the equivalent/check surfaces of every cube.
//! 3. [`translation`] assembles the uncompressed S2M/M2M/M2L/L2L/L2T
//!    operators from kernel evaluations and regularized density solves.
//! 4. [`compression`] shrinks the 316 M2L operators with a shared
//!    row/column projector pair and a per-operator low-rank factorization,
//!    and conjugates the pass operators into the compressed coordinates.
//! 5. [`engine`] executes the upward/downward/near passes as a matrix-free
//!    linear operator.
//! 6. [`bem`] discretizes Laplace boundary integral equations with constant
//!    collocation elements on triangle meshes and drives the engine.
//! 7. [`solver`] provides restarted GMRES over matrix-free operators.
//! 8. [`oracle`] holds the reference implementations (direct summation,
//!    dense BEM assembly, adaptive quadrature) used by tests and the
//!    `--check-dense` paths.

pub mod bem;
pub mod compression;
pub mod engine;
pub mod error;
pub mod kernel;
pub mod octree;
pub mod oracle;
pub mod solver;
pub mod surfaces;
pub mod translation;

pub use error::{Error, Result};
pub use kernel::{KernelSpec, Layer};
