//! Finite-element laboratory for the anisotropic Steklov problem
//! `div(a∇u) = 0` in Ω, `∂_ν u = λ sinh u` on ∂Ω.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod axisym;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod greens;
pub mod io;
pub mod pipeline;
pub mod plot;
pub mod solver;
pub mod spectrum;

pub use error::{Error, Result};
