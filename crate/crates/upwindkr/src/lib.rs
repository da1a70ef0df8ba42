//! Finite volume transport on unstructured meshes with error measurement in
//! logarithmic-cost Kantorovich-Rubinstein distances.
//!
//! The crate covers the full pipeline: mesh construction, discretization of
//! analytic velocity and data fields, the implicit upwind time loop, scheme
//! diagnostics (stability, energy, weak BV sums), exact discrete optimal
//! transport with primal plans and dual potentials, characteristics-based
//! reference solutions, and a convergence-study harness with CSV/SVG
//! reporting. See the `examples/` directory for one runnable entry point per
//! capability and the `upwindkr` binary for the study CLI.

pub mod diagnostics;
pub mod fields;
pub mod geometry;
pub mod harness;
pub mod mesh;
pub mod quadrature;
pub mod reference;
pub mod transport;
pub mod upwind;
