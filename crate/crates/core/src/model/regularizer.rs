//! Transport regularizers on latent codes, evaluated at fixed plans.
//!
//! All terms are functions of the latent distance matrices `D_Z0`, `D_Z1`
//! (within groups) and `D_Z01` (between groups, squared Euclidean). The
//! gradient is first formed with respect to those matrices and then pulled
//! back to the codes and through the encoder. Plans are treated as
//! constants.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::model::network::{encode, encoder_pullback, factual_loss_grad, FactualBatch, Mode};
use crate::model::params::{CfrGradients, CfrParams};
use crate::ot::distance::{pairwise_dist, pairwise_sq_dist};
use crate::ot::quadratic::{FusedProblem, FusedTerms};

/// Guard added under square roots on gradient paths.
pub const SQRT_EPS: f64 = 1e-12;
/// Pairs of codes closer than this contribute no Euclidean-distance gradient.
const COINCIDENT: f64 = 1e-12;

/// Which terms make up the regularizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RegularizerRecipe {
    /// No regularization.
    None,
    /// Square root of the optimal squared-cost transport between latent groups.
    Wasserstein,
    /// `sum_t R_t^2 - GW^2(X_t, Z_t)`, each with its own plan.
    MongeGap,
    /// `sum_t (R_t + F / beta)^2 - G_t` with individual terms switchable.
    Fused { rt: bool, fgw: bool, cross_gw: bool },
}

impl RegularizerRecipe {
    pub const FULL: Self = Self::Fused {
        rt: true,
        fgw: true,
        cross_gw: true,
    };

    /// Terms of the joint plan problem that match this recipe.
    pub fn fused_terms(&self) -> Option<FusedTerms> {
        match *self {
            Self::Fused { fgw, cross_gw, .. } => Some(FusedTerms { cross_gw, fgw }),
            _ => None,
        }
    }

    pub fn is_active(&self) -> bool {
        !matches!(self, Self::None)
    }
}

/// Plans at which the regularizer is evaluated.
#[derive(Clone, Debug, PartialEq)]
pub enum RegPlans {
    /// `N0 x N1` plans for the fused term and the two cross-space GW terms.
    Joint {
        fgw: DenseMatrix,
        cross0: DenseMatrix,
        cross1: DenseMatrix,
    },
    /// `N_t x N_t` plans between covariates and codes of the same group.
    Within([DenseMatrix; 2]),
    /// One `N0 x N1` coupling between latent groups.
    Coupling(DenseMatrix),
    None,
}

impl RegPlans {
    /// The same plan for every joint term.
    pub fn shared(plan: &DenseMatrix) -> Self {
        Self::Joint {
            fgw: plan.clone(),
            cross0: plan.clone(),
            cross1: plan.clone(),
        }
    }
}

/// Plans together with the plan-only products that stay fixed while the
/// codes move: `T^T D_X0 T` for the group-0 term and the matching product
/// for the group-1 term.
#[derive(Clone, Debug)]
pub struct PreparedPlans {
    plans: RegPlans,
    fixed: [Option<DenseMatrix>; 2],
}

impl PreparedPlans {
    pub fn plans(&self) -> &RegPlans {
        &self.plans
    }

    pub fn into_plans(self) -> RegPlans {
        self.plans
    }
}

/// Every term of the regularizer at fixed plans.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegularizerBreakdown {
    /// `||D_X0 - D_Z0||_F / N0`
    pub r0: f64,
    pub r1: f64,
    /// Square root of the fused objective between latent groups.
    pub fgw_at_plan: f64,
    /// Squared GW objective subtracted for group 0.
    pub gw0_at_plan: f64,
    pub gw1_at_plan: f64,
    /// Square root of the latent transport cost (Wasserstein recipe only).
    pub wasserstein: f64,
    pub beta: f64,
    pub total: f64,
}

impl RegularizerBreakdown {
    /// `sum_t (r_t + fgw / beta)^2 - gw_t + wasserstein`
    pub fn recompose(&self) -> f64 {
        let f = self.fgw_at_plan / self.beta;
        (self.r0 + f).powi(2) - self.gw0_at_plan + (self.r1 + f).powi(2) - self.gw1_at_plan
            + self.wasserstein
    }

    fn finish(mut self) -> Self {
        self.total = self.recompose();
        self
    }
}

/// Distance matrices of the latent codes.
#[derive(Clone, Debug)]
pub struct LatentGeometry {
    pub d_z0: DenseMatrix,
    pub d_z1: DenseMatrix,
    pub d_z01: DenseMatrix,
}

/// Fixed covariate-side data for the regularizer of one training run.
#[derive(Clone, Debug)]
pub struct RegularizerContext {
    x0: Vec<Vec<f64>>,
    x1: Vec<Vec<f64>>,
    d_x0: DenseMatrix,
    d_x1: DenseMatrix,
    beta: f64,
    squared_gw_costs: bool,
    recipe: RegularizerRecipe,
}

fn intra<P: AsRef<[f64]> + Sync>(pts: &[P], squared: bool) -> Result<DenseMatrix> {
    if squared {
        pairwise_sq_dist(pts, pts)
    } else {
        pairwise_dist(pts, pts)
    }
}

/// `<C - 2 A T B, T>` with uniform marginals, and optionally its gradients
/// with respect to `A` and `B`.
struct GwEval {
    value: f64,
    d_a: Option<DenseMatrix>,
    d_b: Option<DenseMatrix>,
}

/// `T B T^T` for symmetric `B`, keeping the plan as the left operand.
fn conj_right(t: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    t.matmul_unchecked(&t.matmul_unchecked(b).transpose())
}

/// `T^T A T` for symmetric `A`.
fn conj_left(t: &DenseMatrix, a: &DenseMatrix) -> DenseMatrix {
    let tt = t.transpose();
    tt.matmul_unchecked(&tt.matmul_unchecked(a).transpose())
}

/// Evaluate with `T^T A T` and `T B T^T` taken from `tat` / `tbt` when given.
fn gw_eval(
    a: &DenseMatrix,
    b: &DenseMatrix,
    t: &DenseMatrix,
    need_a: bool,
    need_b: bool,
    tat: Option<&DenseMatrix>,
    tbt: Option<&DenseMatrix>,
) -> GwEval {
    let (na, nb) = (a.rows() as f64, b.rows() as f64);
    let (pa, pb) = (1.0 / (na * na), 1.0 / (nb * nb));
    let tat = (need_b || (tbt.is_none() && tat.is_some())).then(|| tat.map_or_else(|| Cow::Owned(conj_left(t, a)), Cow::Borrowed));
    let tbt = (need_a || tat.is_none()).then(|| tbt.map_or_else(|| Cow::Owned(conj_right(t, b)), Cow::Borrowed));
    let cross = match (&tat, &tbt) {
        (Some(m), _) => m.dot_unchecked(b),
        (None, Some(m)) => m.dot_unchecked(a),
        (None, None) => unreachable!("one side is always formed"),
    };
    let value = a.frobenius_norm_sq() * pa + b.frobenius_norm_sq() * pb - 2.0 * cross;
    let d_a = need_a.then(|| {
        let mut g = a.scale(2.0 * pa);
        g.axpy(-2.0, tbt.as_deref().unwrap());
        g
    });
    let d_b = need_b.then(|| {
        let mut g = b.scale(2.0 * pb);
        g.axpy(-2.0, tat.as_deref().unwrap());
        g
    });
    GwEval { value, d_a, d_b }
}

/// `R = ||D_X - D_Z||_F / N` and its guarded gradient in `D_Z`.
fn distortion(d_x: &DenseMatrix, d_z: &DenseMatrix, need_grad: bool) -> (f64, Option<DenseMatrix>) {
    let n = d_x.rows() as f64;
    let mut e = d_x.clone();
    e.axpy(-1.0, d_z);
    let sq = e.frobenius_norm_sq();
    let r = sq.sqrt() / n;
    let g = need_grad.then(|| e.scale(-1.0 / (n * (sq + SQRT_EPS).sqrt())));
    (r, g)
}

fn check_plan(t: &DenseMatrix, rows: usize, cols: usize, what: &str) -> Result<()> {
    if t.shape() != (rows, cols) {
        return Err(Error::invalid(format!(
            "{what} plan is {}x{}, expected {rows}x{cols}",
            t.rows(),
            t.cols()
        )));
    }
    Ok(())
}

/// Gradients with respect to the latent distance matrices.
struct DistanceGrads {
    h0: DenseMatrix,
    h1: DenseMatrix,
    h01: DenseMatrix,
}

impl RegularizerContext {
    pub fn new(
        x0: Vec<Vec<f64>>,
        x1: Vec<Vec<f64>>,
        beta: f64,
        squared_gw_costs: bool,
        recipe: RegularizerRecipe,
    ) -> Result<Self> {
        if x0.is_empty() || x1.is_empty() {
            return Err(Error::invalid("each treatment group needs at least one sample"));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::invalid(format!("beta must lie in (0, 1], got {beta}")));
        }
        let d_x0 = intra(&x0, squared_gw_costs)?;
        let d_x1 = intra(&x1, squared_gw_costs)?;
        Ok(Self {
            x0,
            x1,
            d_x0,
            d_x1,
            beta,
            squared_gw_costs,
            recipe,
        })
    }

    pub fn recipe(&self) -> RegularizerRecipe {
        self.recipe
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn group_sizes(&self) -> (usize, usize) {
        (self.x0.len(), self.x1.len())
    }

    pub fn x0(&self) -> &[Vec<f64>] {
        &self.x0
    }

    pub fn x1(&self) -> &[Vec<f64>] {
        &self.x1
    }

    pub fn d_x0(&self) -> &DenseMatrix {
        &self.d_x0
    }

    pub fn d_x1(&self) -> &DenseMatrix {
        &self.d_x1
    }

    /// Eval-mode codes of both groups.
    pub fn latents(&self, params: &CfrParams) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        Ok((encode(params, &self.x0)?, encode(params, &self.x1)?))
    }

    pub fn geometry(&self, z0: &[Vec<f64>], z1: &[Vec<f64>]) -> Result<LatentGeometry> {
        Ok(LatentGeometry {
            d_z0: intra(z0, self.squared_gw_costs)?,
            d_z1: intra(z1, self.squared_gw_costs)?,
            d_z01: pairwise_sq_dist(z0, z1)?,
        })
    }

    /// The joint plan problem whose terms match the recipe.
    pub fn fused_problem(&self, geom: &LatentGeometry) -> Result<FusedProblem> {
        let terms = self.recipe.fused_terms().unwrap_or_default();
        FusedProblem::with_terms(
            self.d_x0.clone(),
            self.d_x1.clone(),
            geom.d_z0.clone(),
            geom.d_z1.clone(),
            geom.d_z01.clone(),
            self.beta,
            terms,
        )
    }

    /// Check plan shapes against the recipe and precompute the plan-only
    /// products of the covariate-side terms.
    pub fn prepare(&self, plans: RegPlans) -> Result<PreparedPlans> {
        let (n0, n1) = self.group_sizes();
        let fixed = match (self.recipe, &plans) {
            (RegularizerRecipe::None, _) => [None, None],
            (RegularizerRecipe::Wasserstein, RegPlans::Coupling(t)) => {
                check_plan(t, n0, n1, "coupling")?;
                [None, None]
            }
            (RegularizerRecipe::MongeGap, RegPlans::Within([t0, t1])) => {
                check_plan(t0, n0, n0, "group-0")?;
                check_plan(t1, n1, n1, "group-1")?;
                [Some(conj_left(t0, &self.d_x0)), Some(conj_left(t1, &self.d_x1))]
            }
            (RegularizerRecipe::Fused { cross_gw, .. }, RegPlans::Joint { fgw, cross0, cross1 }) => {
                for (t, what) in [(fgw, "fused"), (cross0, "cross-0"), (cross1, "cross-1")] {
                    check_plan(t, n0, n1, what)?;
                }
                if cross_gw {
                    [Some(conj_left(cross0, &self.d_x0)), Some(conj_right(cross1, &self.d_x1))]
                } else {
                    [None, None]
                }
            }
            (recipe, _) => {
                return Err(Error::invalid(format!(
                    "plans do not match the {recipe:?} regularizer"
                )))
            }
        };
        Ok(PreparedPlans { plans, fixed })
    }

    fn compute(
        &self,
        geom: &LatentGeometry,
        prepared: &PreparedPlans,
        need_grad: bool,
    ) -> Result<(RegularizerBreakdown, Option<DistanceGrads>)> {
        let (n0, n1) = self.group_sizes();
        let [fixed0, fixed1] = &prepared.fixed;
        let beta = self.beta;
        let mut out = RegularizerBreakdown {
            beta,
            ..Default::default()
        };
        let mut grads = need_grad.then(|| DistanceGrads {
            h0: DenseMatrix::zeros(n0, n0),
            h1: DenseMatrix::zeros(n1, n1),
            h01: DenseMatrix::zeros(n0, n1),
        });

        match (self.recipe, &prepared.plans) {
            (RegularizerRecipe::None, _) => {}
            (RegularizerRecipe::Wasserstein, RegPlans::Coupling(t)) => {
                let w = geom.d_z01.dot_unchecked(t).max(0.0);
                out.wasserstein = w.sqrt();
                if let Some(g) = grads.as_mut() {
                    g.h01 = t.scale(0.5 / (w + SQRT_EPS).sqrt());
                }
            }
            (RegularizerRecipe::MongeGap, RegPlans::Within([t0, t1])) => {
                let (r0, dr0) = distortion(&self.d_x0, &geom.d_z0, need_grad);
                let (r1, dr1) = distortion(&self.d_x1, &geom.d_z1, need_grad);
                let g0 = gw_eval(&self.d_x0, &geom.d_z0, t0, false, need_grad, fixed0.as_ref(), None);
                let g1 = gw_eval(&self.d_x1, &geom.d_z1, t1, false, need_grad, fixed1.as_ref(), None);
                out.r0 = r0;
                out.r1 = r1;
                out.gw0_at_plan = g0.value;
                out.gw1_at_plan = g1.value;
                if let Some(g) = grads.as_mut() {
                    g.h0 = dr0.unwrap().scale(2.0 * r0);
                    g.h0.axpy(-1.0, &g0.d_b.unwrap());
                    g.h1 = dr1.unwrap().scale(2.0 * r1);
                    g.h1.axpy(-1.0, &g1.d_b.unwrap());
                }
            }
            (RegularizerRecipe::Fused { rt, fgw, cross_gw }, RegPlans::Joint { fgw: tf, cross0, cross1 }) => {
                let (r0, dr0) = if rt {
                    distortion(&self.d_x0, &geom.d_z0, need_grad)
                } else {
                    (0.0, None)
                };
                let (r1, dr1) = if rt {
                    distortion(&self.d_x1, &geom.d_z1, need_grad)
                } else {
                    (0.0, None)
                };
                out.r0 = r0;
                out.r1 = r1;

                let fgw_eval = fgw.then(|| {
                    let g = gw_eval(&geom.d_z0, &geom.d_z1, tf, need_grad, need_grad, None, None);
                    let v = (1.0 - beta) * geom.d_z01.dot_unchecked(tf) + beta * g.value;
                    (v.max(0.0), g)
                });
                if let Some((v, _)) = &fgw_eval {
                    out.fgw_at_plan = v.sqrt();
                }
                let cross = cross_gw.then(|| {
                    (
                        gw_eval(&self.d_x0, &geom.d_z1, cross0, false, need_grad, fixed0.as_ref(), None),
                        gw_eval(&geom.d_z0, &self.d_x1, cross1, need_grad, false, None, fixed1.as_ref()),
                    )
                });
                if let Some((g0, g1)) = &cross {
                    out.gw0_at_plan = g0.value;
                    out.gw1_at_plan = g1.value;
                }

                if let Some(g) = grads.as_mut() {
                    let f = out.fgw_at_plan / beta;
                    let (s0, s1) = (r0 + f, r1 + f);
                    if let (Some(d0), Some(d1)) = (dr0, dr1) {
                        g.h0.axpy(2.0 * s0, &d0);
                        g.h1.axpy(2.0 * s1, &d1);
                    }
                    if let Some((v, ge)) = fgw_eval {
                        // d total / d fgw_objective
                        let c = 2.0 * (s0 + s1) / beta * 0.5 / (v + SQRT_EPS).sqrt();
                        g.h01.axpy(c * (1.0 - beta), tf);
                        g.h0.axpy(c * beta, &ge.d_a.unwrap());
                        g.h1.axpy(c * beta, &ge.d_b.unwrap());
                    }
                    if let Some((g0, g1)) = cross {
                        g.h1.axpy(-1.0, &g0.d_b.unwrap());
                        g.h0.axpy(-1.0, &g1.d_a.unwrap());
                    }
                }
            }
            (recipe, _) => {
                return Err(Error::invalid(format!(
                    "plans do not match the {recipe:?} regularizer"
                )))
            }
        }
        Ok((out.finish(), grads))
    }

    /// Regularizer value at fixed plans for the given codes.
    pub fn evaluate(&self, geom: &LatentGeometry, plans: &PreparedPlans) -> Result<RegularizerBreakdown> {
        Ok(self.compute(geom, plans, false)?.0)
    }

    /// Value and gradient with respect to the codes of both groups.
    pub fn latent_gradient(
        &self,
        z0: &[Vec<f64>],
        z1: &[Vec<f64>],
        plans: &PreparedPlans,
    ) -> Result<(RegularizerBreakdown, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let geom = self.geometry(z0, z1)?;
        let (bd, grads) = self.compute(&geom, plans, true)?;
        let g = grads.expect("gradients requested");
        let mut dz0 = self.intra_pullback(z0, &geom.d_z0, &g.h0);
        let mut dz1 = self.intra_pullback(z1, &geom.d_z1, &g.h1);
        for (i, a) in z0.iter().enumerate() {
            for (j, b) in z1.iter().enumerate() {
                let h = g.h01.get(i, j);
                if h == 0.0 {
                    continue;
                }
                for k in 0..a.len() {
                    let d = 2.0 * h * (a[k] - b[k]);
                    dz0[i][k] += d;
                    dz1[j][k] -= d;
                }
            }
        }
        Ok((bd, dz0, dz1))
    }

    fn intra_pullback(&self, z: &[Vec<f64>], d: &DenseMatrix, h: &DenseMatrix) -> Vec<Vec<f64>> {
        let n = z.len();
        let dim = z.first().map_or(0, Vec::len);
        let mut out = vec![vec![0.0; dim]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let s = h.get(i, j) + h.get(j, i);
                if s == 0.0 {
                    continue;
                }
                let coef = if self.squared_gw_costs {
                    2.0 * s
                } else {
                    let dij = d.get(i, j);
                    if dij < COINCIDENT {
                        continue;
                    }
                    s / dij
                };
                for k in 0..dim {
                    out[i][k] += coef * (z[i][k] - z[j][k]);
                }
            }
        }
        out
    }

    /// Regularizer value for the current parameters.
    pub fn value(&self, params: &CfrParams, plans: &PreparedPlans) -> Result<RegularizerBreakdown> {
        let (z0, z1) = self.latents(params)?;
        self.evaluate(&self.geometry(&z0, &z1)?, plans)
    }

    /// Add `scale * d regularizer / d params` (encoder tensors only) to `grad`.
    pub fn accumulate_gradient(
        &self,
        params: &CfrParams,
        plans: &PreparedPlans,
        scale: f64,
        grad: &mut CfrGradients,
    ) -> Result<RegularizerBreakdown> {
        let (z0, z1) = self.latents(params)?;
        let (bd, mut dz0, mut dz1) = self.latent_gradient(&z0, &z1, plans)?;
        for v in dz0.iter_mut().chain(dz1.iter_mut()).flatten() {
            *v *= scale;
        }
        encoder_pullback(params, &self.x0, &dz0, grad);
        encoder_pullback(params, &self.x1, &dz1, grad);
        Ok(bd)
    }
}

/// Full regularizer (all terms, Euclidean within-group distances) at one
/// shared plan `T` between the control and treated groups.
pub fn regularizer(
    params: &CfrParams,
    x0: &[Vec<f64>],
    x1: &[Vec<f64>],
    plan: &DenseMatrix,
    beta: f64,
) -> Result<RegularizerBreakdown> {
    if beta == 0.0 {
        return Err(Error::invalid("beta must be positive"));
    }
    let ctx = RegularizerContext::new(x0.to_vec(), x1.to_vec(), beta, false, RegularizerRecipe::FULL)?;
    ctx.value(params, &ctx.prepare(RegPlans::shared(plan))?)
}

/// Loss value, regularizer breakdown (when active), and the gradient of
/// `loss + lambda * regularizer`.
pub fn objective_and_gradient(
    params: &CfrParams,
    batch: &FactualBatch,
    reg: Option<(&RegularizerContext, &PreparedPlans)>,
    lambda: f64,
    mode: Mode,
) -> Result<(f64, Option<RegularizerBreakdown>, CfrGradients)> {
    let (loss, mut grad) = factual_loss_grad(params, batch, mode)?;
    let mut bd = None;
    if lambda != 0.0 {
        if let Some((ctx, plans)) = reg {
            if ctx.recipe().is_active() {
                bd = Some(ctx.accumulate_gradient(params, plans, lambda, &mut grad)?);
            }
        }
    }
    Ok((loss, bd, grad))
}

/// Gradient of `factual_loss + lambda * regularizer` at a shared plan, with
/// dropout disabled.
pub fn grad_total(
    params: &CfrParams,
    batch: &FactualBatch,
    x0: &[Vec<f64>],
    x1: &[Vec<f64>],
    plan: &DenseMatrix,
    beta: f64,
    lambda: f64,
) -> Result<CfrGradients> {
    let ctx = RegularizerContext::new(x0.to_vec(), x1.to_vec(), beta, false, RegularizerRecipe::FULL)?;
    let plans = ctx.prepare(RegPlans::shared(plan))?;
    Ok(objective_and_gradient(params, batch, Some((&ctx, &plans)), lambda, Mode::Eval)?.2)
}
