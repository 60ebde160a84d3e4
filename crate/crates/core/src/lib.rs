//! Dissipative preparation of a three-atom W state in a driven Rydberg-atom
//! cavity system: operators, models, effective reductions, solvers and
//! observables.

pub mod config;
pub mod effective;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod operator;
pub mod superop;
pub mod observables;
pub mod sector;
pub mod solvers;
pub mod state;

#[cfg(test)]
mod properties;
