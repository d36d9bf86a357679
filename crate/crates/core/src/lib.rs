//! Markov shift towers, coupling of the tower chain, and the statistics
//! used to check limit theorems for observables over them.

pub mod chain;
pub mod histogram;
pub mod maps;
pub mod observables;
pub mod stats;
pub mod stream;
pub mod tower;
