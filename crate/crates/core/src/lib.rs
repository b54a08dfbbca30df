//! Hamiltonian Monte Carlo inference for latent-variable models of categorical data.

pub mod autodiff;
pub mod diagnostics;
pub mod distributions;
pub mod gibbs;
pub mod io;
pub mod models;
pub mod samplers;
pub mod samples;
pub mod simgen;
pub mod special;
