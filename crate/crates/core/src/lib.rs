//! Numerical laboratory for the SG calculus of Fourier integral operators.
//!
//! The crate builds eikonal phase functions, multi-products of regular
//! phases, grid realizations of SG pseudodifferential and Fourier integral
//! operators, and Picard-series fundamental solutions of first-order
//! SG-hyperbolic systems. Each construction comes with the measurements
//! needed to check the inequalities and identities it is supposed to obey.

pub mod expr;
pub mod par;
pub mod symbols;
pub mod phase;
pub mod eikonal;
pub mod multiproduct;
pub mod linalg;
pub mod quantize;
pub mod hyperbolic;
pub mod cli;
