//! Gromov-Wasserstein discrepancy by multi-start conditional gradient.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::ot::cg::{conditional_gradient_with, CgOptions, CgReport};
use crate::ot::emd::solve_emd;
use crate::ot::oracle::permutations;
use crate::ot::plan::TransportPlan;
use crate::ot::quadratic::{QuadraticProblem, DISTANCE_TOL};
use crate::par;

/// Largest size for which all `n!` permutation starts are enumerated.
pub const MAX_ENUMERATED: usize = 6;

/// Multi-start settings shared by every GW-type solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GwSolver {
    /// Extra random vertex starts beyond the product coupling (and the
    /// identity for square problems). When the problem is square with
    /// `n <= 6` and `restarts >= n!`, every permutation vertex is used instead.
    pub restarts: usize,
    pub cg: CgOptions,
    pub seed: u64,
}

impl Default for GwSolver {
    fn default() -> Self {
        Self {
            restarts: 0,
            cg: CgOptions::default(),
            seed: 0,
        }
    }
}

/// Best result over all starts.
#[derive(Clone, Debug)]
pub struct GwSolution {
    pub value: f64,
    pub plan: TransportPlan,
    pub report: CgReport,
    pub starts: usize,
}

fn factorial(n: usize) -> usize {
    (1..=n).try_fold(1usize, |acc, k| acc.checked_mul(k)).unwrap_or(usize::MAX)
}

impl GwSolver {
    pub fn with_restarts(restarts: usize) -> Self {
        Self {
            restarts,
            ..Self::default()
        }
    }

    /// A solver that enumerates every permutation start for `n <= 6`.
    pub fn exhaustive() -> Self {
        Self::with_restarts(factorial(MAX_ENUMERATED))
    }

    /// Whether a square problem of size `n` gets every permutation start.
    pub fn enumerates(&self, rows: usize, cols: usize) -> bool {
        rows == cols && rows <= MAX_ENUMERATED && self.restarts >= factorial(rows)
    }

    /// Starting plans in a fixed order: product, identity (square only), then
    /// either all permutations or `restarts` seeded random vertices.
    pub fn initial_plans(&self, prob: &QuadraticProblem) -> Result<Vec<TransportPlan>> {
        let (m, n) = prob.shape();
        let mut inits = vec![TransportPlan::product(prob.source(), prob.target())];
        let uniform = prob.source().is_uniform() && prob.target().is_uniform();
        if m == 1 || n == 1 {
            return Ok(inits);
        }
        if m == n && uniform {
            if self.enumerates(m, n) {
                for perm in permutations(m) {
                    inits.push(TransportPlan::permutation(&perm)?);
                }
                return Ok(inits);
            }
            inits.push(TransportPlan::permutation(&(0..m).collect::<Vec<_>>())?);
        }
        for r in 0..self.restarts {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(r as u64));
            if m == n && uniform {
                let mut perm: Vec<usize> = (0..m).collect();
                perm.shuffle(&mut rng);
                inits.push(TransportPlan::permutation(&perm)?);
            } else {
                let cost = DenseMatrix::from_fn(m, n, |_, _| rng.random::<f64>());
                inits.push(solve_emd(&cost, prob.source(), prob.target())?);
            }
        }
        Ok(inits)
    }

    /// Run conditional gradient from every start and keep the lowest value
    /// (earliest start on ties).
    pub fn minimize<P: AsRef<QuadraticProblem> + Sync>(&self, prob: &P) -> Result<GwSolution> {
        let q = prob.as_ref();
        let inits = self.initial_plans(q)?;
        let opts = self.cg;
        let runs = par::map_range(inits.len(), |i| conditional_gradient_with(q, &inits[i], opts));
        let starts = runs.len();
        let mut best: Option<(TransportPlan, CgReport)> = None;
        for run in runs {
            let (plan, report) = run?;
            let better = best
                .as_ref()
                .map_or(true, |(_, b)| report.final_objective < b.final_objective);
            if better {
                best = Some((plan, report));
            }
        }
        let (plan, report) = best.expect("at least one start");
        Ok(GwSolution {
            value: report.final_objective,
            plan,
            report,
            starts,
        })
    }

    /// Squared GW discrepancy between two distance matrices under uniform measures.
    pub fn solve(&self, d_a: &DenseMatrix, d_b: &DenseMatrix) -> Result<(f64, TransportPlan)> {
        for (d, name) in [(d_a, "d_a"), (d_b, "d_b")] {
            if !d.is_square() || !d.is_symmetric(DISTANCE_TOL) {
                return Err(Error::invalid(format!("{name} must be square and symmetric")));
            }
        }
        let prob = QuadraticProblem::gw(d_a, d_b)?;
        let sol = self.minimize(&prob)?;
        Ok((sol.value, sol.plan))
    }
}

/// Minimum found of `GW(d_a, d_b; T)` over uniform couplings, with its plan.
pub fn gw_discrepancy(d_a: &DenseMatrix, d_b: &DenseMatrix, restarts: usize) -> Result<(f64, TransportPlan)> {
    GwSolver::with_restarts(restarts).solve(d_a, d_b)
}
