//! Simulation, exact oracles and learning engine for renewable-aware energy
//! dispatch at self-powered edge base stations.
//!
//! The numeric kernels (`energy`, `dispatch`, `nn`) are generic over
//! [`Scalar`]; everything that touches traces, agents and reports runs on
//! `f64` through the aliases below.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod config;
pub mod dispatch;
pub mod energy;
pub mod error;
pub mod mamrl;
pub mod metrics;
pub mod nn;
pub mod scalar;
pub mod trace;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Working precision for traces, agents and reports.
pub type Real = f64;

pub type CostRates = dispatch::CostRates<Real>;
pub type DemandDistribution = dispatch::DemandDistribution<Real>;
pub type TwoStageSolution = dispatch::TwoStageSolution<Real>;
pub type ServerSpec = energy::ServerSpec<Real>;
pub type RadioConfig = energy::RadioConfig<Real>;
pub type LoadSnapshot = energy::LoadSnapshot<Real>;
pub type Tensor = nn::Tensor<Real>;
pub type LstmParams = nn::LstmParams<Real>;
pub type LstmState = nn::LstmState<Real>;
pub type DenseParams = nn::DenseParams<Real>;
pub type AdamState = nn::AdamState<Real>;
pub type ActorCritic = nn::ActorCritic<Real>;
