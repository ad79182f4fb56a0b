//! Two-stage stochastic optimal power flow for radial feeders, solved by a
//! decentralized ADMM whose per-node updates are all closed form.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`.

pub mod admm;
pub mod baseline;
pub mod closedform;
pub mod exactness;
pub mod experiment;
pub mod network;
pub mod program;
pub mod scenario;
mod scalar;

pub use scalar::Scalar;

pub type Program = program::StochasticProgram<f64>;
pub type Solution = program::Solution<f64>;
pub type SolveReport = admm::SolveReport<f64>;
pub type AdmmState = admm::AdmmState<f64>;
pub type PowerFlowResult = baseline::PowerFlowResult<f64>;
pub type OnlineReport = baseline::OnlineReport<f64>;
