//! Landscape topology of smooth scalar functions.
//!
//! The crate parses closed-form functions, differentiates them exactly in
//! forward mode, and answers topological questions about them on regular
//! lattices: how many components a sublevel set has, whether PL / growth /
//! invexity conditions hold, where the mountain pass between two minima sits,
//! what the saddle-point set of a minimax problem looks like, and how the
//! joint best-response operator of a continuous game shrinks action sets.
//!
//! Everything here is pure computation over `alloc`; file formats and the
//! command-line front end live in the `invex-topo` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod certify;
pub mod expr;
pub mod games;
pub mod grid;
pub mod minimax;
pub mod mountain_pass;
pub mod optimize;
pub mod seq;

mod linalg;

pub use certify::{Certificate, Verdict};
pub use expr::{builtin, Expr, ExprError, ScalarField};
pub use grid::{BoxDomain, CellMask, ComponentLabeling, RegularGrid};
pub use games::GameSpec;
pub use minimax::MinimaxProblem;
