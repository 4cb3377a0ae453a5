//! Treatment-effect error metrics and latent information-loss diagnostics.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::CohortSample;
use crate::error::{Error, Result};
use crate::model::{encode, predict_both, CfrParams};
use crate::ot::{pairwise_dist, GwSolver};

/// Which units an evaluation covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Training and validation units.
    InSample,
    /// Held-out test units.
    OutSample,
}

impl Scope {
    pub const ALL: [Scope; 2] = [Scope::InSample, Scope::OutSample];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scope::InSample => "in_sample",
            Scope::OutSample => "out_sample",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Effect-estimation errors on one set of units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `|mean(true ITE - predicted ITE)|`
    pub eps_ate: f64,
    /// `mean((true ITE - predicted ITE)^2)`
    pub eps_pehe: f64,
    pub eps_pehe_root: f64,
    /// Mean squared error of the factual predictions.
    pub factual_mse: f64,
    pub n: usize,
    pub scope: Scope,
}

impl EvalReport {
    /// Names and values of the four reported metrics.
    pub fn metrics(&self) -> [(&'static str, f64); 4] {
        [
            ("eps_ate", self.eps_ate),
            ("eps_pehe", self.eps_pehe),
            ("eps_pehe_root", self.eps_pehe_root),
            ("factual_mse", self.factual_mse),
        ]
    }
}

/// Names of the metrics in [`EvalReport::metrics`] order.
pub const METRIC_NAMES: [&str; 4] = ["eps_ate", "eps_pehe", "eps_pehe_root", "factual_mse"];

/// Compare both heads' eval-mode predictions with the known potential
/// outcome means.
pub fn eval_ite(params: &CfrParams, samples: &[CohortSample], scope: Scope) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let truth: Vec<f64> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.ite()
                .ok_or_else(|| Error::invalid(format!("sample {i} has no ground-truth potential outcomes")))
        })
        .collect::<Result<_>>()?;
    let xs: Vec<Vec<f64>> = samples.iter().map(|s| s.x.clone()).collect();
    let preds = predict_both(params, &xs)?;

    let n = samples.len() as f64;
    let (mut err_sum, mut err_sq, mut fact_sq) = (0.0, 0.0, 0.0);
    for ((s, &ite), &(y0, y1)) in samples.iter().zip(&truth).zip(&preds) {
        let e = ite - (y1 - y0);
        err_sum += e;
        err_sq += e * e;
        let y_hat = if s.t == 1 { y1 } else { y0 };
        fact_sq += (y_hat - s.y_factual).powi(2);
    }
    let eps_pehe = err_sq / n;
    let eps_pehe_root = eps_pehe.sqrt();
    // rounding can lift |mean| an ulp above the root mean square
    let eps_ate = (err_sum / n).abs().min(eps_pehe_root);
    if !(eps_pehe.is_finite() && fact_sq.is_finite()) {
        return Err(Error::Numerical("non-finite effect predictions".into()));
    }
    Ok(EvalReport {
        eps_ate,
        eps_pehe,
        eps_pehe_root,
        factual_mse: fact_sq / n,
        n: samples.len(),
        scope,
    })
}

/// Solver for information-loss estimates on `n` units: every permutation
/// start when `n` is small enough to enumerate, the product and identity
/// starts otherwise.
pub fn information_solver(n: usize) -> GwSolver {
    let exhaustive = GwSolver::exhaustive();
    if exhaustive.enumerates(n, n) {
        exhaustive
    } else {
        GwSolver::default()
    }
}

/// `GW^2` between the covariates of one treatment group and their latent
/// codes, both under Euclidean distance.
pub fn gw_information_loss(params: &CfrParams, samples: &[CohortSample], group: u8, solver: &GwSolver) -> Result<f64> {
    if group > 1 {
        return Err(Error::invalid("group must be 0 or 1"));
    }
    let xs: Vec<Vec<f64>> = samples.iter().filter(|s| s.t == group).map(|s| s.x.clone()).collect();
    covariate_latent_gw(params, &xs, solver)
}

/// `GW^2` between the given covariates and their eval-mode codes.
pub fn covariate_latent_gw(params: &CfrParams, xs: &[Vec<f64>], solver: &GwSolver) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::invalid("group has no samples"));
    }
    let zs = encode(params, xs)?;
    let d_x = pairwise_dist(xs, xs)?;
    let d_z = pairwise_dist(&zs, &zs)?;
    Ok(solver.solve(&d_x, &d_z)?.0)
}
