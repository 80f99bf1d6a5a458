//! Penalized relative-error regression for right-censored survival times
//! with gene-environment interaction designs.

pub mod data;
pub mod loss;
pub mod penalty;
pub mod rng;
pub mod select;
pub mod sim;
pub mod solver;
