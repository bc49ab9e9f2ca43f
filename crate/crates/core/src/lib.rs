//! Active-set learning for DC optimal power flow.
//!
//! The crate is organised along the pipeline:
//!
//! * [`grid`]: network model, PTDF construction, synthetic test grids and the grid file format.
//! * [`opf`]: dense interior-point solver for the DC-OPF quadratic program, returning primal
//!   values and every Lagrange multiplier, plus KKT residual evaluation.
//! * [`labels`]: binary active-set targets derived from a solved OPF.
//! * [`datagen`]: perturbed-wind sample generation and dataset files.
//! * [`mlp`]: a small fully-connected classifier trained with a multiplier-weighted
//!   cross-entropy loss.
//! * [`ese`]: the square linear system that replaces the QP once the active set is known.
//! * [`market`]: locational marginal prices and the revenue adequacy, cost recovery and
//!   duality checks.
//!
//! Power quantities are stored in per-unit on a [`BASE_MVA`] base. Prices and linear costs are
//! in $/MWh. Quadratic cost coefficients are stored as $/MWh per p.u., i.e. the file value in
//! $/MW²h multiplied by the base, so that marginal costs `2·c2·p + c1` come out in $/MWh when
//! `p` is in p.u.

pub mod datagen;
mod error;
pub mod ese;
pub mod grid;
pub mod labels;
pub mod linalg;
pub mod market;
pub mod mlp;
pub mod opf;
pub mod rng;

pub use error::{Error, Result};

/// System MVA base used for per-unit conversion at file boundaries.
pub const BASE_MVA: f64 = 100.0;
