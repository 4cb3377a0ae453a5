//! Exact discrete optimal transport: linear (EMD), Gromov-Wasserstein, and
//! fused objectives over couplings of discrete measures.

pub mod cg;
pub mod distance;
pub mod emd;
pub mod gw;
pub mod oracle;
pub mod plan;
pub mod quadratic;

pub use cg::{conditional_gradient, conditional_gradient_with, CgOptions, CgReport};
pub use distance::{pairwise_dist, pairwise_sq_dist};
pub use emd::{solve_emd, solve_emd_with_cap};
pub use gw::{gw_discrepancy, GwSolution, GwSolver};
pub use plan::{DiscreteMeasure, TransportPlan};
pub use quadratic::{
    fgw_objective, fused_gradient, fused_objective, gw_objective, line_search,
    step_from_coefficients, wasserstein_term, FusedProblem, FusedTerms, QuadraticProblem,
};
