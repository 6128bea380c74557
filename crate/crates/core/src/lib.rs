//! Periodic unit-cell solvers and effective coefficients for homogenized
//! models of elastic porous media saturated by a viscous fluid.
//!
//! The pipeline is: [`microcell`] geometry, [`scaling`] regime selection,
//! cell problems in [`elastic`], [`fluid`] and [`visco`], and demonstration
//! macroscale solvers in [`macroscale`]. Runs are described by a [`config`]
//! file and write [`report`] files; [`cli`] is the `porocell` binary.

pub mod cli;
pub mod config;
pub mod elastic;
pub mod error;
pub mod fluid;
pub mod macroscale;
pub mod microcell;
pub mod pde;
pub mod report;
pub mod scaling;
pub mod visco;

pub use error::{Error, Result};
