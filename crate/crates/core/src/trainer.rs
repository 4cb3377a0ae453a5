//! Bi-level training: one plan solve per epoch on the regularizer sample,
//! then mini-batch parameter updates holding the plans fixed.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{check_dims, split_groups, to_batch, CohortSample};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::model::network::factual_loss;
use crate::model::{
    objective_and_gradient, CfrParams, FactualBatch, LatentGeometry, Mode, ModelShape, RegPlans,
    RegularizerBreakdown, RegularizerContext, RegularizerRecipe,
};
use crate::ot::{
    conditional_gradient_with, solve_emd, CgOptions, CgReport, DiscreteMeasure, QuadraticProblem,
    TransportPlan,
};

/// Losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Regularizer variant: the full method, its ablations, and two baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Gwib,
    GwibFgw,
    GwibRt,
    GwibGw,
    GwibGap,
    GwibOpt,
    Tarnet,
    CfrWass,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Gwib,
        Variant::GwibFgw,
        Variant::GwibRt,
        Variant::GwibGw,
        Variant::GwibGap,
        Variant::GwibOpt,
        Variant::Tarnet,
        Variant::CfrWass,
    ];

    /// The full method followed by its five ablations.
    pub const ABLATIONS: [Variant; 6] = [
        Variant::Gwib,
        Variant::GwibFgw,
        Variant::GwibRt,
        Variant::GwibGw,
        Variant::GwibGap,
        Variant::GwibOpt,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Gwib => "gwib",
            Variant::GwibFgw => "gwib_fgw",
            Variant::GwibRt => "gwib_rt",
            Variant::GwibGw => "gwib_gw",
            Variant::GwibGap => "gwib_gap",
            Variant::GwibOpt => "gwib_opt",
            Variant::Tarnet => "tarnet",
            Variant::CfrWass => "cfr_wass",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Adam => "adam",
            Self::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            _ => Err(Error::invalid(format!("unknown optimizer `{s}`"))),
        }
    }
}

/// How often the transport plans are re-solved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanScope {
    /// Once per epoch on the whole regularizer sample.
    #[default]
    FullEpoch,
}

impl FromStr for PlanScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full_epoch" => Ok(Self::FullEpoch),
            _ => Err(Error::invalid(format!("unknown plan scope `{s}`"))),
        }
    }
}

pub const BATCH_SIZES: [usize; 4] = [16, 32, 64, 128];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub beta: f64,
    pub d_phi: [usize; 2],
    pub d_h: usize,
    pub epochs: usize,
    pub patience: usize,
    pub cg_max_iter: usize,
    pub cg_tol: f64,
    pub seed: u64,
    pub variant: Variant,
    pub squared_gw_costs: bool,
    pub plan_scope: PlanScope,
    /// Per-group cap on the units entering the regularizer.
    pub max_reg_samples: usize,
    pub dropout: f64,
    pub bounded_latent: bool,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            batch_size: 64,
            lambda: 3e-2,
            beta: 0.9,
            d_phi: [32, 16],
            d_h: 16,
            epochs: 200,
            patience: 30,
            cg_max_iter: 200,
            cg_tol: 1e-7,
            seed: 0,
            variant: Variant::Gwib,
            squared_gw_costs: false,
            plan_scope: PlanScope::FullEpoch,
            max_reg_samples: 512,
            dropout: 0.1,
            bounded_latent: false,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    /// Check every field against its allowed range. `lambda = 0` is allowed
    /// and disables the regularizer.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if !(1e-5..=1e-1).contains(&self.lr) {
            return fail(format!("lr must lie in [1e-5, 1e-1], got {}", self.lr));
        }
        if !BATCH_SIZES.contains(&self.batch_size) {
            return fail(format!("batch_size must be one of {BATCH_SIZES:?}, got {}", self.batch_size));
        }
        if !(self.lambda == 0.0 || (1e-4..=1.0).contains(&self.lambda)) {
            return fail(format!("lambda must be 0 or lie in [1e-4, 1], got {}", self.lambda));
        }
        if !(0.1..=0.9).contains(&self.beta) {
            return fail(format!("beta must lie in [0.1, 0.9], got {}", self.beta));
        }
        if self.d_phi.contains(&0) || self.d_h == 0 {
            return fail("layer widths must be positive".into());
        }
        if self.epochs == 0 || self.patience == 0 {
            return fail("epochs and patience must be positive".into());
        }
        if self.cg_max_iter == 0 || !(self.cg_tol > 0.0) {
            return fail("cg_max_iter and cg_tol must be positive".into());
        }
        if self.max_reg_samples == 0 {
            return fail("max_reg_samples must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn cg_options(&self) -> CgOptions {
        CgOptions {
            max_iter: self.cg_max_iter,
            tol: self.cg_tol,
        }
    }
}

/// What a variant optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRecipe {
    pub recipe: RegularizerRecipe,
    /// Effective regularization weight.
    pub lambda: f64,
    /// Solve the fused and the two cross-space plans separately.
    pub independent_plans: bool,
}

impl VariantRecipe {
    pub fn is_active(&self) -> bool {
        self.lambda != 0.0 && self.recipe.is_active()
    }
}

pub fn apply_variant(cfg: &TrainConfig) -> Result<VariantRecipe> {
    let fused = |rt, fgw, cross_gw| RegularizerRecipe::Fused { rt, fgw, cross_gw };
    let (recipe, independent_plans) = match cfg.variant {
        Variant::Gwib => (RegularizerRecipe::FULL, false),
        Variant::GwibFgw => (fused(true, false, true), false),
        Variant::GwibRt => (fused(false, true, true), false),
        Variant::GwibGw => (fused(true, true, false), false),
        Variant::GwibGap => (RegularizerRecipe::MongeGap, false),
        Variant::GwibOpt => (RegularizerRecipe::FULL, true),
        Variant::CfrWass => (RegularizerRecipe::Wasserstein, false),
        Variant::Tarnet => (RegularizerRecipe::None, false),
    };
    let lambda = if cfg.variant == Variant::Tarnet { 0.0 } else { cfg.lambda };
    Ok(VariantRecipe {
        recipe,
        lambda,
        independent_plans,
    })
}

/// Plans for one epoch and the solver reports that produced them.
#[derive(Clone, Debug)]
pub struct EpochPlans {
    pub plans: RegPlans,
    /// Report of the main plan solve (the fused plan, or group 0 for the
    /// Monge gap). Absent when no conditional gradient solve ran.
    pub cg_report: Option<CgReport>,
    /// Reports of any further plan solves.
    pub aux_cg_reports: Vec<CgReport>,
}

fn cg_from_product(prob: &QuadraticProblem, opts: CgOptions) -> Result<(DenseMatrix, CgReport)> {
    let init = TransportPlan::product(prob.source(), prob.target());
    let (plan, report) = conditional_gradient_with(prob, &init, opts)?;
    Ok((plan.into_matrix(), report))
}

/// Solve the plans a variant needs at the given latent geometry.
pub fn solve_plans(
    ctx: &RegularizerContext,
    geom: &LatentGeometry,
    vr: &VariantRecipe,
    opts: CgOptions,
) -> Result<EpochPlans> {
    let (n0, n1) = ctx.group_sizes();
    match vr.recipe {
        RegularizerRecipe::None => Ok(EpochPlans {
            plans: RegPlans::None,
            cg_report: None,
            aux_cg_reports: Vec::new(),
        }),
        RegularizerRecipe::Wasserstein => {
            let plan = solve_emd(&geom.d_z01, &DiscreteMeasure::uniform(n0), &DiscreteMeasure::uniform(n1))?;
            Ok(EpochPlans {
                plans: RegPlans::Coupling(plan.into_matrix()),
                cg_report: None,
                aux_cg_reports: Vec::new(),
            })
        }
        RegularizerRecipe::MongeGap => {
            let (t0, r0) = cg_from_product(&QuadraticProblem::gw(ctx.d_x0(), &geom.d_z0)?, opts)?;
            let (t1, r1) = cg_from_product(&QuadraticProblem::gw(ctx.d_x1(), &geom.d_z1)?, opts)?;
            Ok(EpochPlans {
                plans: RegPlans::Within([t0, t1]),
                cg_report: Some(r0),
                aux_cg_reports: vec![r1],
            })
        }
        RegularizerRecipe::Fused { .. } if vr.independent_plans => {
            let fgw = QuadraticProblem::fgw(&geom.d_z0, &geom.d_z1, &geom.d_z01, ctx.beta())?;
            let (tf, rf) = cg_from_product(&fgw, opts)?;
            let (c0, r0) = cg_from_product(&QuadraticProblem::gw(ctx.d_x0(), &geom.d_z1)?, opts)?;
            let (c1, r1) = cg_from_product(&QuadraticProblem::gw(&geom.d_z0, ctx.d_x1())?, opts)?;
            Ok(EpochPlans {
                plans: RegPlans::Joint {
                    fgw: tf,
                    cross0: c0,
                    cross1: c1,
                },
                cg_report: Some(rf),
                aux_cg_reports: vec![r0, r1],
            })
        }
        RegularizerRecipe::Fused { .. } => {
            let prob = ctx.fused_problem(geom)?;
            let (t, report) = cg_from_product(prob.quadratic(), opts)?;
            Ok(EpochPlans {
                plans: RegPlans::shared(&t),
                cg_report: Some(report),
                aux_cg_reports: Vec::new(),
            })
        }
    }
}

/// First-order update rule over the flattened parameter vector.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(Adam),
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(lr: f64, num_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, num_params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(lr, num_params)),
        }
    }

    pub fn step(&mut self, params: &mut CfrParams, grad: &CfrParams) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => params.add_scaled(-*lr, grad),
            Optimizer::Adam(a) => {
                let mut p = params.flatten();
                let g = grad.flatten();
                a.step += 1;
                let c1 = 1.0 - a.beta1.powi(a.step);
                let c2 = 1.0 - a.beta2.powi(a.step);
                for i in 0..p.len() {
                    a.m[i] = a.beta1 * a.m[i] + (1.0 - a.beta1) * g[i];
                    a.v[i] = a.beta2 * a.v[i] + (1.0 - a.beta2) * g[i] * g[i];
                    p[i] -= a.lr * (a.m[i] / c1) / ((a.v[i] / c2).sqrt() + a.eps);
                }
                params.assign_flat(&p)?;
            }
        }
        Ok(())
    }
}

/// Tracks the best validation loss and the parameters that reached it.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: usize,
    best_params: Option<CfrParams>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            best_params: None,
        }
    }

    /// Record the validation loss of `epoch` (counted from 1). Returns true
    /// when training should stop.
    pub fn update(&mut self, epoch: usize, val_loss: f64, params: &CfrParams) -> bool {
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            self.best_params = Some(params.clone());
        }
        epoch - self.best_epoch >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    pub fn into_best(self) -> Option<CfrParams> {
        self.best_params
    }
}

/// Everything recorded about one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean mini-batch factual loss over the epoch's updates.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Regularizer at the freshly solved plans, before this epoch's updates.
    pub regularizer: RegularizerBreakdown,
    pub cg_report: Option<CgReport>,
    pub aux_cg_reports: Vec<CgReport>,
    /// `GW^2` between covariates and codes of each group after the epoch.
    pub gw_diag_0: f64,
    pub gw_diag_1: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss.
    pub params: CfrParams,
    pub trace: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Independent random streams so that variants which skip the regularizer
/// consume exactly the same draws for everything else.
struct Streams {
    init: u64,
    shuffle: ChaCha8Rng,
    subsample: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |s| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        Self {
            init: stream(0).random(),
            shuffle: stream(1),
            subsample: stream(2),
        }
    }
}

fn subsample(rng: &mut ChaCha8Rng, xs: Vec<Vec<f64>>, cap: usize) -> Vec<Vec<f64>> {
    if xs.len() <= cap {
        return xs;
    }
    let mut keep = index::sample(rng, xs.len(), cap).into_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| xs[i].clone()).collect()
}

fn check_loss(epoch: usize, loss: f64) -> Result<()> {
    if loss.is_nan() || loss > DIVERGENCE_LIMIT {
        return Err(Error::Divergence { epoch, loss });
    }
    Ok(())
}

/// Train on `train`, select by factual loss on `val`.
pub fn train(train: &[CohortSample], val: &[CohortSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(train, val, cfg, |_| Ok(()))
}

/// `GW^2` between a group's covariate and latent distances, found by
/// conditional gradient started from the sample-to-own-code matching.
pub fn matched_gw(d_x: &DenseMatrix, d_z: &DenseMatrix, opts: CgOptions) -> Result<f64> {
    let n = d_x.rows();
    let prob = QuadraticProblem::gw(d_x, d_z)?;
    let start = if n == 1 {
        TransportPlan::product(prob.source(), prob.target())
    } else {
        TransportPlan::permutation(&(0..n).collect::<Vec<_>>())?
    };
    let (_, report) = conditional_gradient_with(&prob, &start, opts)?;
    Ok(report.final_objective)
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    train: &[CohortSample],
    val: &[CohortSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let vr = apply_variant(cfg)?;
    let dim = check_dims(train)?;
    if val.is_empty() {
        return Err(Error::invalid("validation split is empty"));
    }
    if check_dims(val)? != dim {
        return Err(Error::invalid("validation covariate dimension differs from training"));
    }
    let (x0, x1) = split_groups(train);
    if x0.is_empty() || x1.is_empty() {
        return Err(Error::invalid("each treatment group needs at least one training sample"));
    }

    let mut streams = Streams::new(cfg.seed);
    let shape = ModelShape::new(dim, cfg.d_phi, cfg.d_h)?;
    let mut params = CfrParams::init(shape, cfg.dropout, cfg.bounded_latent, streams.init)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, params.num_params());

    let r0 = subsample(&mut streams.subsample, x0, cfg.max_reg_samples);
    let r1 = subsample(&mut streams.subsample, x1, cfg.max_reg_samples);
    let ctx = RegularizerContext::new(r0, r1, cfg.beta, cfg.squared_gw_costs, vr.recipe)?;
    let diag_opts = cfg.cg_options();
    let diag = |p: &CfrParams| -> Result<(f64, f64)> {
        let (z0, z1) = ctx.latents(p)?;
        let geom = ctx.geometry(&z0, &z1)?;
        let g0 = matched_gw(ctx.d_x0(), &geom.d_z0, diag_opts)?;
        let g1 = matched_gw(ctx.d_x1(), &geom.d_z1, diag_opts)?;
        Ok((g0, g1))
    };

    let val_batch = to_batch(val);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let (prepared, reports, breakdown) = if vr.is_active() {
            let (z0, z1) = ctx.latents(&params)?;
            let geom = ctx.geometry(&z0, &z1)?;
            let ep = solve_plans(&ctx, &geom, &vr, cfg.cg_options())?;
            let prepared = ctx.prepare(ep.plans)?;
            let bd = ctx.evaluate(&geom, &prepared)?;
            (Some(prepared), (ep.cg_report, ep.aux_cg_reports), bd)
        } else {
            (None, (None, Vec::new()), RegularizerBreakdown { beta: cfg.beta, ..Default::default() })
        };
        let reg = prepared.as_ref().map(|pp| (&ctx, pp));

        order.shuffle(&mut streams.shuffle);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = FactualBatch {
                x: chunk.iter().map(|&i| train[i].x.clone()).collect(),
                t: chunk.iter().map(|&i| train[i].t).collect(),
                y: chunk.iter().map(|&i| train[i].y_factual).collect(),
            };
            let mode = Mode::Train(streams.shuffle.random());
            let (loss, _, grad) = objective_and_gradient(&params, &batch, reg, vr.lambda, mode)?;
            check_loss(epoch, loss)?;
            opt.step(&mut params, &grad)?;
            if !params.all_finite() {
                return Err(Error::Divergence { epoch, loss: f64::NAN });
            }
            loss_sum += loss;
            steps += 1;
        }
        let train_loss = loss_sum / steps as f64;
        let val_loss = factual_loss(&params, &val_batch)?;
        check_loss(epoch, val_loss)?;
        let (gw_diag_0, gw_diag_1) = diag(&params)?;

        let (cg_report, aux_cg_reports) = reports;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            regularizer: breakdown,
            cg_report,
            aux_cg_reports,
            gw_diag_0,
            gw_diag_1,
        };
        on_epoch(&record)?;
        trace.push(record);
        if stopper.update(epoch, val_loss, &params) {
            break;
        }
    }

    let best_epoch = stopper.best_epoch();
    let best_val_loss = stopper.best_loss();
    let params = stopper.into_best().unwrap_or(params);
    Ok(TrainOutcome {
        params,
        trace,
        best_epoch,
        best_val_loss,
    })
}
