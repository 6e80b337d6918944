//! Resistance-level price model.
//!
//! A geometric Brownian motion that must fall back from a resistance level a
//! prescribed number of times before breaking out above it. The crate derives
//! the model quantities, simulates the conditioned price, evaluates the
//! log-utility optimal investment fractions and runs the Monte Carlo
//! experiments that compare them with the classic Merton fraction.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod conditioning;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod simulator;

pub use conditioning::{
    classic_strategy, conditioned_drift, martingale_value, mixture_weight, optimal_strategy_fixed,
    optimal_strategy_random, project_unit, Phase, PhaseState, Strategy,
};
pub use error::{Error, Result};
pub use model::{
    derive_params, law_from_q, law_under_q, prob_an, LawSpec, MarketInputs, ModelParams, XiLaw,
};
pub use montecarlo::{run_compare, run_sweep, ExperimentConfig, McSummary, SweepParam};
pub use simulator::{evolve_wealth, simulate_path, PathRecord, SimConfig};
