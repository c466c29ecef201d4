pub mod algebra;
pub mod catalog;
pub mod cli;
pub mod engine;
pub mod grammar;
pub mod quadrature;
pub mod rng;
pub mod state;
pub mod types;
pub mod verify;
