//! Quadratic transport objectives: sums of Gromov-Wasserstein blocks plus a
//! linear cost, all over one coupling `T`.
//!
//! A GW block with intra-domain matrices `L` (source side) and `R` (target
//! side) contributes `<C - 2 L T R, T>` where
//! `C[m][n] = sum_k L[m][k]^2 mu_k + sum_l R[n][l]^2 nu_l`. On feasible plans
//! this equals the quadruple sum `sum T[m][n] T[k][l] (L[m][k] - R[n][l])^2`.
//! The constant part `C` depends only on the marginals, so it is folded into a
//! single linear matrix at construction time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::ot::plan::{DiscreteMeasure, TransportPlan};

/// Symmetry / zero-diagonal tolerance for intra-domain distance matrices.
pub const DISTANCE_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
struct GwBlock {
    left: DenseMatrix,
    right: DenseMatrix,
    weight: f64,
}

/// `f(T) = <K, T> - 2 sum_b w_b <L_b T R_b, T>` with `K` the folded linear part.
#[derive(Clone, Debug)]
pub struct QuadraticProblem {
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    blocks: Vec<GwBlock>,
    linear: DenseMatrix,
}

impl AsRef<QuadraticProblem> for QuadraticProblem {
    fn as_ref(&self) -> &QuadraticProblem {
        self
    }
}

impl QuadraticProblem {
    /// An empty (identically zero) objective over couplings of the two measures.
    pub fn new(source: DiscreteMeasure, target: DiscreteMeasure) -> Self {
        let linear = DenseMatrix::zeros(source.len(), target.len());
        Self {
            source,
            target,
            blocks: Vec::new(),
            linear,
        }
    }

    /// Uniform measures on `rows` and `cols` atoms.
    pub fn uniform(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("problem dimensions must be positive"));
        }
        Ok(Self::new(
            DiscreteMeasure::uniform(rows),
            DiscreteMeasure::uniform(cols),
        ))
    }

    /// Single GW block between `d_a` and `d_b` with uniform measures.
    pub fn gw(d_a: &DenseMatrix, d_b: &DenseMatrix) -> Result<Self> {
        let mut p = Self::uniform(d_a.rows(), d_b.rows())?;
        p.add_gw_block(d_a, d_b, 1.0)?;
        Ok(p)
    }

    /// `(1 - beta) <d_ab, T> + beta * GW(d_a, d_b; T)` with uniform measures.
    pub fn fgw(d_a: &DenseMatrix, d_b: &DenseMatrix, d_ab: &DenseMatrix, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        let mut p = Self::uniform(d_a.rows(), d_b.rows())?;
        p.add_linear(d_ab, 1.0 - beta)?;
        p.add_gw_block(d_a, d_b, beta)?;
        Ok(p)
    }

    /// Add `weight * GW(left, right; T)`.
    pub fn add_gw_block(&mut self, left: &DenseMatrix, right: &DenseMatrix, weight: f64) -> Result<()> {
        let (m, n) = self.shape();
        for (d, size, side) in [(left, m, "source"), (right, n, "target")] {
            if d.shape() != (size, size) {
                return Err(Error::invalid(format!(
                    "{side}-side distance matrix is {}x{}, expected {size}x{size}",
                    d.rows(),
                    d.cols()
                )));
            }
            if !d.is_symmetric(DISTANCE_TOL) {
                return Err(Error::invalid(format!(
                    "{side}-side distance matrix is not symmetric"
                )));
            }
        }
        if !weight.is_finite() {
            return Err(Error::invalid("block weight must be finite"));
        }
        if weight == 0.0 {
            return Ok(());
        }
        let a = weighted_sq_row_sums(left, self.source.weights());
        let b = weighted_sq_row_sums(right, self.target.weights());
        for i in 0..m {
            for j in 0..n {
                let v = self.linear.get(i, j) + weight * (a[i] + b[j]);
                self.linear.set(i, j, v);
            }
        }
        // blocks sharing a left matrix collapse into one product
        if let Some(blk) = self.blocks.iter_mut().find(|b| b.left == *left) {
            let mut merged = blk.right.scale(blk.weight);
            merged.axpy(weight, right);
            blk.right = merged;
            blk.weight = 1.0;
        } else {
            self.blocks.push(GwBlock {
                left: left.clone(),
                right: right.clone(),
                weight,
            });
        }
        Ok(())
    }

    /// Add `weight * <cost, T>`.
    pub fn add_linear(&mut self, cost: &DenseMatrix, weight: f64) -> Result<()> {
        self.linear.check_same_shape(cost, "linear cost")?;
        if weight != 0.0 {
            self.linear.axpy(weight, cost);
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.source.len(), self.target.len())
    }

    pub fn source(&self) -> &DiscreteMeasure {
        &self.source
    }

    pub fn target(&self) -> &DiscreteMeasure {
        &self.target
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// The folded linear coefficient `K`.
    pub fn linear_part(&self) -> &DenseMatrix {
        &self.linear
    }

    pub(crate) fn check_plan_shape(&self, t: &DenseMatrix) -> Result<()> {
        if t.shape() != self.shape() {
            return Err(Error::invalid(format!(
                "plan is {}x{}, problem expects {}x{}",
                t.rows(),
                t.cols(),
                self.source.len(),
                self.target.len()
            )));
        }
        Ok(())
    }

    /// `L_b T R_b` for every block.
    pub(crate) fn products(&self, t: &DenseMatrix) -> Vec<DenseMatrix> {
        self.blocks
            .iter()
            .map(|b| sandwich(&b.left, t, &b.right))
            .collect()
    }

    pub(crate) fn value_with(&self, t: &DenseMatrix, products: &[DenseMatrix]) -> f64 {
        let quad: f64 = self
            .blocks
            .iter()
            .zip(products)
            .map(|(b, p)| b.weight * p.dot_unchecked(t))
            .sum();
        self.linear.dot_unchecked(t) - 2.0 * quad
    }

    pub(crate) fn gradient_with(&self, products: &[DenseMatrix]) -> DenseMatrix {
        let mut g = self.linear.clone();
        for (b, p) in self.blocks.iter().zip(products) {
            g.axpy(-4.0 * b.weight, p);
        }
        g
    }

    /// Objective at an arbitrary matrix of the right shape (the marginal
    /// terms stay fixed by the problem's measures).
    pub fn value(&self, t: &DenseMatrix) -> Result<f64> {
        self.check_plan_shape(t)?;
        Ok(self.value_with(t, &self.products(t)))
    }

    /// Euclidean gradient of [`QuadraticProblem::value`].
    pub fn gradient(&self, t: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_plan_shape(t)?;
        Ok(self.gradient_with(&self.products(t)))
    }

    /// Objective at a feasible plan.
    pub fn objective(&self, plan: &TransportPlan) -> Result<f64> {
        self.value(plan.matrix())
    }

    /// Coefficients `(a, b)` of `f(T + tau * D) - f(T) = a tau^2 + b tau`
    /// for the direction `D = t_dir - t_cur`.
    pub(crate) fn step_coefficients(
        &self,
        t_cur: &DenseMatrix,
        p_cur: &[DenseMatrix],
        t_dir: &DenseMatrix,
        p_dir: &[DenseMatrix],
    ) -> (f64, f64) {
        let delta = diff(t_dir, t_cur);
        let mut a = 0.0;
        let mut b = self.linear.dot_unchecked(&delta);
        for ((blk, pc), pd) in self.blocks.iter().zip(p_cur).zip(p_dir) {
            let p_delta = diff(pd, pc);
            a -= 2.0 * blk.weight * p_delta.dot_unchecked(&delta);
            b -= 2.0 * blk.weight * (p_delta.dot_unchecked(t_cur) + pc.dot_unchecked(&delta));
        }
        (a, b)
    }
}

/// Minimizer over `[0, 1]` of `a tau^2 + b tau`.
pub fn step_from_coefficients(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        (-b / (2.0 * a)).clamp(0.0, 1.0)
    } else if a + b < 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Exact step size towards `t_dir` from `t_cur` for any quadratic objective.
pub fn line_search<P: AsRef<QuadraticProblem>>(
    prob: &P,
    t_cur: &TransportPlan,
    t_dir: &TransportPlan,
) -> Result<f64> {
    let q = prob.as_ref();
    q.check_plan_shape(t_cur.matrix())?;
    q.check_plan_shape(t_dir.matrix())?;
    let p_cur = q.products(t_cur.matrix());
    let p_dir = q.products(t_dir.matrix());
    let (a, b) = q.step_coefficients(t_cur.matrix(), &p_cur, t_dir.matrix(), &p_dir);
    Ok(step_from_coefficients(a, b))
}

fn diff(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let mut out = a.clone();
    out.axpy(-1.0, b);
    out
}

/// `L (T R)`; the inner product exploits sparsity of vertex plans.
fn sandwich(left: &DenseMatrix, t: &DenseMatrix, right: &DenseMatrix) -> DenseMatrix {
    left.matmul_unchecked(&t.matmul_unchecked(right))
}

fn weighted_sq_row_sums(d: &DenseMatrix, w: &[f64]) -> Vec<f64> {
    (0..d.rows())
        .map(|i| d.row(i).iter().zip(w).map(|(x, wk)| x * x * wk).sum())
        .collect()
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("beta must lie in [0, 1], got {beta}")));
    }
    Ok(())
}

fn check_distance(d: &DenseMatrix, name: &str) -> Result<()> {
    if !d.is_square() {
        return Err(Error::invalid(format!("{name} must be square")));
    }
    if !d.is_symmetric(DISTANCE_TOL) || !d.has_zero_diagonal(DISTANCE_TOL) {
        return Err(Error::invalid(format!(
            "{name} must be symmetric with a zero diagonal"
        )));
    }
    Ok(())
}

/// `<d_z01, T>`, the squared-cost transport term between latent groups.
pub fn wasserstein_term(d_z01: &DenseMatrix, plan: &TransportPlan) -> Result<f64> {
    d_z01.dot(plan.matrix())
}

/// `sum T[m][n] T[k][l] (d_a[m][k] - d_b[n][l])^2` evaluated in `O(N^3)`.
pub fn gw_objective(d_a: &DenseMatrix, d_b: &DenseMatrix, plan: &TransportPlan) -> Result<f64> {
    let mut q = QuadraticProblem::new(plan.source().clone(), plan.target().clone());
    q.add_gw_block(d_a, d_b, 1.0)?;
    q.objective(plan)
}

/// `(1 - beta) <d_ab, T> + beta GW(d_a, d_b; T)`.
pub fn fgw_objective(
    d_a: &DenseMatrix,
    d_b: &DenseMatrix,
    d_ab: &DenseMatrix,
    beta: f64,
    plan: &TransportPlan,
) -> Result<f64> {
    check_beta(beta)?;
    let mut q = QuadraticProblem::new(plan.source().clone(), plan.target().clone());
    q.add_linear(d_ab, 1.0 - beta)?;
    q.add_gw_block(d_a, d_b, beta)?;
    q.objective(plan)
}

/// Which parts of the joint lower-level objective are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedTerms {
    /// `GW(X_0, Z_1; T) + GW(X_1, Z_0; T^T)`
    pub cross_gw: bool,
    /// `(1 - beta) <D_Z01, T> + beta GW(Z_0, Z_1; T)`
    pub fgw: bool,
}

impl Default for FusedTerms {
    fn default() -> Self {
        Self {
            cross_gw: true,
            fgw: true,
        }
    }
}

/// The joint plan problem over control/treated couplings:
/// `GW(X_0, Z_1; T) + GW(X_1, Z_0; T^T) + (1 - beta) <D_Z01, T> + beta GW(Z_0, Z_1; T)`.
#[derive(Clone, Debug)]
pub struct FusedProblem {
    d_x0: DenseMatrix,
    d_x1: DenseMatrix,
    d_z0: DenseMatrix,
    d_z1: DenseMatrix,
    d_z01: DenseMatrix,
    beta: f64,
    terms: FusedTerms,
    quad: QuadraticProblem,
}

impl AsRef<QuadraticProblem> for FusedProblem {
    fn as_ref(&self) -> &QuadraticProblem {
        &self.quad
    }
}

impl FusedProblem {
    pub fn new(
        d_x0: DenseMatrix,
        d_x1: DenseMatrix,
        d_z0: DenseMatrix,
        d_z1: DenseMatrix,
        d_z01: DenseMatrix,
        beta: f64,
    ) -> Result<Self> {
        Self::with_terms(d_x0, d_x1, d_z0, d_z1, d_z01, beta, FusedTerms::default())
    }

    pub fn with_terms(
        d_x0: DenseMatrix,
        d_x1: DenseMatrix,
        d_z0: DenseMatrix,
        d_z1: DenseMatrix,
        d_z01: DenseMatrix,
        beta: f64,
        terms: FusedTerms,
    ) -> Result<Self> {
        check_beta(beta)?;
        for (d, name) in [
            (&d_x0, "d_x0"),
            (&d_x1, "d_x1"),
            (&d_z0, "d_z0"),
            (&d_z1, "d_z1"),
        ] {
            check_distance(d, name)?;
        }
        let (n0, n1) = (d_x0.rows(), d_x1.rows());
        if d_z0.rows() != n0 || d_z1.rows() != n1 {
            return Err(Error::invalid(format!(
                "group sizes disagree: d_x0 {n0}, d_z0 {}, d_x1 {n1}, d_z1 {}",
                d_z0.rows(),
                d_z1.rows()
            )));
        }
        if d_z01.shape() != (n0, n1) {
            return Err(Error::invalid(format!(
                "d_z01 is {}x{}, expected {n0}x{n1}",
                d_z01.rows(),
                d_z01.cols()
            )));
        }
        let mut quad = QuadraticProblem::uniform(n0, n1)?;
        if terms.cross_gw {
            quad.add_gw_block(&d_x0, &d_z1, 1.0)?;
            quad.add_gw_block(&d_z0, &d_x1, 1.0)?;
        }
        if terms.fgw {
            quad.add_linear(&d_z01, 1.0 - beta)?;
            quad.add_gw_block(&d_z0, &d_z1, beta)?;
        }
        Ok(Self {
            d_x0,
            d_x1,
            d_z0,
            d_z1,
            d_z01,
            beta,
            terms,
            quad,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.d_z01.shape()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn terms(&self) -> FusedTerms {
        self.terms
    }

    pub fn d_x0(&self) -> &DenseMatrix {
        &self.d_x0
    }

    pub fn d_x1(&self) -> &DenseMatrix {
        &self.d_x1
    }

    pub fn d_z0(&self) -> &DenseMatrix {
        &self.d_z0
    }

    pub fn d_z1(&self) -> &DenseMatrix {
        &self.d_z1
    }

    pub fn d_z01(&self) -> &DenseMatrix {
        &self.d_z01
    }

    pub fn quadratic(&self) -> &QuadraticProblem {
        &self.quad
    }
}

/// Value of the joint lower-level objective at a feasible plan.
pub fn fused_objective(prob: &FusedProblem, plan: &TransportPlan) -> Result<f64> {
    prob.quad.objective(plan)
}

/// Gradient of the joint lower-level objective with respect to the plan entries.
pub fn fused_gradient(prob: &FusedProblem, plan: &TransportPlan) -> Result<DenseMatrix> {
    prob.quad.gradient(plan.matrix())
}
