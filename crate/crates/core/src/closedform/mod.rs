//! Closed-form kernels behind every ADMM update: a diagonal equality QP, the
//! four-variable cone-box projection and scalar box updates.

mod conebox;
mod eqqp;
pub(crate) mod roots;
mod scalar_updates;

use thiserror::Error;

pub use conebox::{
    project_cone_box, project_flow_block, ConeBoxInstance, ConeBoxSolution, ConeBranch, FlowBlockInput,
    Z3Position,
};
pub use eqqp::{solve_equality_qp, solve_equality_qp_into, EqQpInstance, EqQpWork};
pub use scalar_updates::{box_project, positive_part, update_pc_tilde};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClosedFormError {
    #[error("Schur complement is numerically singular (pivot ratio {pivot_ratio:e})")]
    SingularSchur { pivot_ratio: f64 },
    #[error("equality rows are linearly dependent (row {row})")]
    RankDeficient { row: usize },
    #[error("diagonal entry {index} is not positive")]
    NonPositiveDiagonal { index: usize },
    #[error("inconsistent dimensions: {detail}")]
    Shape { detail: String },
    #[error("no KKT case matched for instance {dump}")]
    NoKktCase { dump: String },
    #[error("invalid cone-box instance {detail}")]
    BadInstance { detail: String },
    #[error("empty box [{lo}, {hi}]")]
    BadBounds { lo: f64, hi: f64 },
}
