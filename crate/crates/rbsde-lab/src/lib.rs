//! Numerical laboratory for backward stochastic differential equations
//! reflected between two barriers on finite probability trees.
//!
//! The crate models a filtered probability space as a finite node tree
//! ([`filtration`]), provides the process algebra on it ([`processes`]),
//! solves plain, one-barrier and two-barrier reflected BSDEs by backward
//! induction with an implicit driver ([`rbsde`]), approximates the
//! reflected solutions by stiff penalty drivers and verifies the monotone
//! bracketing of those approximations ([`penalization`]), constructs
//! barrier-separation witnesses and the pathological barrier families with
//! unbounded sandwich variation and reflection mass ([`separation`]), and
//! certifies that the reflected solution is the value of the associated
//! zero-sum stopping game by exhaustive enumeration of stopping times
//! ([`dynkin`]).
//!
//! All solvers run in one of two arithmetic modes: exact big rationals, in
//! which every structural identity is asserted with zero tolerance, or
//! `f64` with a configured tolerance for larger sweeps.

pub mod dynkin;
pub mod error;
pub mod filtration;
pub mod num;
pub mod penalization;
pub mod processes;
pub mod rbsde;
pub mod scenario;
pub mod separation;

pub use error::{Error, Result};
pub use num::{Rat, Scalar};
