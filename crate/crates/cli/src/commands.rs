use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use gwib::data::{gen_synthetic, load_csv_auto, split, write_csv, CohortSample, SplitSpec, Splits, Standardizer};
use gwib::metrics::{eval_ite, gw_information_loss, information_solver, EvalReport, Scope};
use gwib::model::{encode, CfrParams, Checkpoint};
use gwib::ot::oracle::{
    brute_force_emd, brute_force_fused, brute_force_gw, expanded_assignment_emd, gw_quadruple_sum, linear_sum,
    min_over_permutations,
};
use gwib::ot::{solve_emd, DiscreteMeasure, FusedProblem, GwSolver, QuadraticProblem};
use gwib::trainer::{train_with, TrainConfig, TrainOutcome, Variant};
use gwib::DenseMatrix;
use serde::{Deserialize, Serialize};

use crate::args::{AblateArgs, DiagnoseArgs, GenSynthArgs, OtProblem, RunArgs, SolveOtArgs, TrainArgs};
use crate::config::load_config;
use crate::error::{CliError, CliResult};

/// Largest side for which `--oracle` enumerates permutations.
pub const ORACLE_MAX_N: usize = 6;

/// Description of a command invocation, written before any computation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: TrainConfig,
    pub seeds: Vec<u64>,
    pub data: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub started_unix_secs: u64,
}

impl RunManifest {
    fn new(command: &str, config: &TrainConfig, seeds: &[u64], data: Option<&Path>, out_dir: &Path) -> Self {
        Self {
            command: command.into(),
            version: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            config: config.clone(),
            seeds: seeds.to_vec(),
            data: data.map(Path::to_path_buf),
            out_dir: out_dir.to_path_buf(),
            started_unix_secs: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    fn write(&self, dir: &Path) -> CliResult<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}

/// A trained model together with the covariate scaling it expects.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SavedModel {
    pub model: Checkpoint,
    pub scaling: Option<Standardizer>,
}

impl SavedModel {
    /// Read either a saved model or a bare network checkpoint.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read checkpoint {}: {e}", path.display())))?;
        if let Ok(saved) = serde_json::from_str::<SavedModel>(&text) {
            return Ok(saved);
        }
        let model = Checkpoint::from_json(&text)
            .map_err(|e| CliError::input(format!("{} is not a checkpoint: {e}", path.display())))?;
        Ok(Self { model, scaling: None })
    }
}

/// Evaluation written to `eval.json` for one run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunEval {
    pub run_id: String,
    pub variant: Variant,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub in_sample: EvalReport,
    pub out_sample: EvalReport,
    /// `GW^2` between covariates and codes of the training units of each group.
    pub gw_information_loss: [f64; 2],
}

impl RunEval {
    pub fn report(&self, scope: Scope) -> &EvalReport {
        match scope {
            Scope::InSample => &self.in_sample,
            Scope::OutSample => &self.out_sample,
        }
    }
}

/// Mean and sample standard deviation of one metric over runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub variant: Variant,
    pub metric: String,
    pub scope: Scope,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))
}

fn load_samples(path: &Path) -> CliResult<Vec<CohortSample>> {
    load_csv_auto(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Configuration file plus command-line overrides.
fn resolve_config(run: &RunArgs, variant: Option<Variant>) -> CliResult<TrainConfig> {
    let mut cfg = load_config(run.config.as_deref())?;
    if let Some(v) = variant {
        cfg.variant = v;
    }
    if let Some(l) = run.lambda {
        cfg.lambda = l;
    }
    if let Some(b) = run.beta {
        cfg.beta = b;
    }
    if let Some(s) = run.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_seeds(run: &RunArgs, cfg: &TrainConfig) -> Vec<u64> {
    if run.seeds.is_empty() {
        vec![cfg.seed]
    } else {
        run.seeds.clone()
    }
}

/// Shuffle, cut and scale a cohort for one seed.
pub fn prepare_splits(samples: &[CohortSample], seed: u64) -> CliResult<(Splits, Standardizer)> {
    let mut parts = split(samples, &SplitSpec::new(seed))?;
    let scaling = Standardizer::fit_apply(&mut parts)?;
    Ok((parts, scaling))
}

fn information_loss(params: &CfrParams, samples: &[CohortSample]) -> CliResult<[f64; 2]> {
    let mut out = [0.0; 2];
    for (g, slot) in out.iter_mut().enumerate() {
        let n = samples.iter().filter(|s| usize::from(s.t) == g).count();
        *slot = gw_information_loss(params, samples, g as u8, &information_solver(n))?;
    }
    Ok(out)
}

/// Train on one split and evaluate both scopes.
pub fn run_once(
    parts: &Splits,
    cfg: &TrainConfig,
    run_id: &str,
    mut trace: Option<&mut dyn Write>,
) -> CliResult<(TrainOutcome, RunEval)> {
    let outcome = train_with(&parts.train, &parts.val, cfg, |rec| {
        if let Some(w) = trace.as_deref_mut() {
            let line = serde_json::to_string(rec)?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    })?;
    let eval = RunEval {
        run_id: run_id.into(),
        variant: cfg.variant,
        seed: cfg.seed,
        epochs_run: outcome.trace.len(),
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        in_sample: eval_ite(&outcome.params, &parts.in_sample(), Scope::InSample)?,
        out_sample: eval_ite(&outcome.params, &parts.test, Scope::OutSample)?,
        gw_information_loss: information_loss(&outcome.params, &parts.train)?,
    };
    Ok((outcome, eval))
}

/// Mean and sample standard deviation per (variant, metric, scope).
pub fn summarize(variant: Variant, evals: &[RunEval]) -> Vec<MetricSummary> {
    let mut out = Vec::new();
    for (k, name) in gwib::metrics::METRIC_NAMES.iter().enumerate() {
        for scope in Scope::ALL {
            let vals: Vec<f64> = evals.iter().map(|e| e.report(scope).metrics()[k].1).collect();
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            out.push(MetricSummary {
                variant,
                metric: (*name).into(),
                scope,
                mean,
                std,
                runs: n,
            });
        }
    }
    out
}

/// Result of [`cmd_train`]: the run directories and their evaluations.
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub run_dirs: Vec<PathBuf>,
    pub evals: Vec<RunEval>,
}

pub fn run_id(variant: Variant, seed: u64) -> String {
    format!("{variant}-seed{seed}")
}

/// Train one model per seed and write its artifacts under `<out>/<run-id>/`.
pub fn cmd_train(args: &TrainArgs) -> CliResult<TrainSummary> {
    let cfg = resolve_config(&args.run, args.variant)?;
    let seeds = resolve_seeds(&args.run, &cfg);
    let samples = load_samples(&args.run.data)?;
    create_dir(&args.run.out)?;
    let mut summary = TrainSummary {
        run_dirs: Vec::new(),
        evals: Vec::new(),
    };
    for &seed in &seeds {
        let cfg = TrainConfig { seed, ..cfg.clone() };
        let id = run_id(cfg.variant, seed);
        let dir = args.run.out.join(&id);
        create_dir(&dir)?;
        RunManifest::new("train", &cfg, &[seed], Some(&args.run.data), &dir).write(&dir)?;

        let (parts, scaling) = prepare_splits(&samples, seed)?;
        let mut trace = BufWriter::new(File::create(dir.join("trace.jsonl"))?);
        let (outcome, eval) = run_once(&parts, &cfg, &id, Some(&mut trace))?;
        trace.flush()?;
        let saved = SavedModel {
            model: Checkpoint::from_params(&outcome.params),
            scaling: Some(scaling),
        };
        write_json(&dir.join("checkpoint.json"), &saved)?;
        write_json(&dir.join("eval.json"), &eval)?;
        println!(
            "{id}: epochs {} best {} in eps_pehe_root {:.6} out eps_pehe_root {:.6}",
            eval.epochs_run, eval.best_epoch, eval.in_sample.eps_pehe_root, eval.out_sample.eps_pehe_root
        );
        summary.run_dirs.push(dir);
        summary.evals.push(eval);
    }
    if seeds.len() > 1 {
        let agg = summarize(cfg.variant, &summary.evals);
        write_json(&args.run.out.join(format!("aggregate-{}.json", cfg.variant)), &agg)?;
    }
    Ok(summary)
}

/// Header of the ablation table.
pub const ABLATION_HEADER: [&str; 6] = ["variant", "metric", "scope", "mean", "std", "runs"];

/// Run every ablation variant (and optional baselines) over the seeds and
/// write `ablation.csv` and `ablation_runs.csv` under `--out`.
pub fn cmd_ablate(args: &AblateArgs) -> CliResult<Vec<MetricSummary>> {
    let cfg = resolve_config(&args.run, None)?;
    let seeds = resolve_seeds(&args.run, &cfg);
    let samples = load_samples(&args.run.data)?;
    create_dir(&args.run.out)?;
    RunManifest::new("ablate", &cfg, &seeds, Some(&args.run.data), &args.run.out).write(&args.run.out)?;

    let mut variants = Variant::ABLATIONS.to_vec();
    if args.with_tarnet {
        variants.push(Variant::Tarnet);
    }
    if args.with_cfr_wass {
        variants.push(Variant::CfrWass);
    }
    let splits: Vec<Splits> = seeds
        .iter()
        .map(|&s| prepare_splits(&samples, s).map(|p| p.0))
        .collect::<CliResult<_>>()?;

    let mut table = Vec::new();
    let mut runs = csv::Writer::from_path(args.run.out.join("ablation_runs.csv"))?;
    runs.write_record(["variant", "seed", "metric", "scope", "value"])?;
    for &variant in &variants {
        let mut evals = Vec::new();
        for (&seed, parts) in seeds.iter().zip(&splits) {
            let run_cfg = TrainConfig { variant, seed, ..cfg.clone() };
            let (_, eval) = run_once(parts, &run_cfg, &run_id(variant, seed), None)?;
            for scope in Scope::ALL {
                for (name, v) in eval.report(scope).metrics() {
                    runs.write_record([variant.as_str(), &seed.to_string(), name, scope.as_str(), &v.to_string()])?;
                }
            }
            evals.push(eval);
        }
        table.extend(summarize(variant, &evals));
    }
    runs.flush()?;

    let mut w = csv::Writer::from_path(args.run.out.join("ablation.csv"))?;
    w.write_record(ABLATION_HEADER)?;
    for r in &table {
        w.write_record([
            r.variant.as_str(),
            &r.metric,
            r.scope.as_str(),
            &r.mean.to_string(),
            &r.std.to_string(),
            &r.runs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(table)
}

/// One row of the diagnostics grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    /// `checkpoint` or `lambda`.
    pub source: String,
    pub lambda: Option<f64>,
    pub gw_loss: [f64; 2],
}

fn write_latents(
    w: &mut csv::Writer<File>,
    source: &str,
    params: &CfrParams,
    samples: &[CohortSample],
) -> CliResult<()> {
    let xs: Vec<Vec<f64>> = samples.iter().map(|s| s.x.clone()).collect();
    for (i, (z, s)) in encode(params, &xs)?.iter().zip(samples).enumerate() {
        let mut rec = vec![source.to_string(), i.to_string(), s.t.to_string()];
        rec.extend(z.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    Ok(())
}

/// Information loss of a checkpoint and of models trained across a λ
/// sweep, with the latent codes of every unit, under `--out`.
pub fn cmd_diagnose(args: &DiagnoseArgs) -> CliResult<Vec<DiagnosticRow>> {
    if args.checkpoint.is_none() && args.lambdas.is_empty() && args.run.lambda.is_none() {
        return Err(CliError::input("diagnose needs --checkpoint, --lambdas or --lambda"));
    }
    let cfg = resolve_config(&args.run, args.variant)?;
    let samples = load_samples(&args.run.data)?;
    let out = &args.run.out;
    create_dir(out)?;
    let sweep: Vec<f64> = if args.lambdas.is_empty() {
        args.run.lambda.into_iter().collect()
    } else {
        args.lambdas.clone()
    };
    RunManifest::new("diagnose", &cfg, &[cfg.seed], Some(&args.run.data), out).write(out)?;

    let mut rows = Vec::new();
    let mut latents = csv::Writer::from_path(out.join("latents.csv"))?;
    let mut latent_header_written = false;
    let mut header = |w: &mut csv::Writer<File>, dim: usize| -> CliResult<()> {
        if !latent_header_written {
            let mut h = vec!["source".to_string(), "index".into(), "t".into()];
            h.extend((0..dim).map(|k| format!("z{k}")));
            w.write_record(&h)?;
            latent_header_written = true;
        }
        Ok(())
    };

    if let Some(path) = &args.checkpoint {
        let saved = SavedModel::load(path)?;
        let params = saved.model.into_params()?;
        let mut units = samples.clone();
        if let Some(sc) = &saved.scaling {
            sc.apply(&mut units)?;
        }
        header(&mut latents, params.shape().latent_dim())?;
        write_latents(&mut latents, "checkpoint", &params, &units)?;
        rows.push(DiagnosticRow {
            source: "checkpoint".into(),
            lambda: None,
            gw_loss: information_loss(&params, &units)?,
        });
    }
    if !sweep.is_empty() {
        let (parts, _) = prepare_splits(&samples, cfg.seed)?;
        for &lambda in &sweep {
            let run_cfg = TrainConfig { lambda, ..cfg.clone() };
            run_cfg.validate()?;
            let (outcome, eval) = run_once(&parts, &run_cfg, &format!("lambda={lambda}"), None)?;
            header(&mut latents, outcome.params.shape().latent_dim())?;
            write_latents(&mut latents, &format!("lambda={lambda}"), &outcome.params, &parts.train)?;
            rows.push(DiagnosticRow {
                source: "lambda".into(),
                lambda: Some(lambda),
                gw_loss: eval.gw_information_loss,
            });
        }
    }
    latents.flush()?;

    let mut w = csv::Writer::from_path(out.join("gw_loss.csv"))?;
    w.write_record(["source", "lambda", "gw_loss_group0", "gw_loss_group1"])?;
    for r in &rows {
        w.write_record([
            r.source.clone(),
            r.lambda.map_or(String::new(), |l| l.to_string()),
            r.gw_loss[0].to_string(),
            r.gw_loss[1].to_string(),
        ])?;
        println!(
            "{} {} group0 {:.6e} group1 {:.6e}",
            r.source,
            r.lambda.map_or(String::new(), |l| format!("{l}")),
            r.gw_loss[0],
            r.gw_loss[1]
        );
    }
    w.flush()?;
    Ok(rows)
}

/// Objective, plan and optional brute-force value of a standalone solve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OtSolution {
    pub objective: f64,
    pub oracle: Option<f64>,
    pub plan: Vec<Vec<f64>>,
}

fn read_matrix(path: &Path) -> CliResult<DenseMatrix> {
    let file = File::open(path).map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?;
    DenseMatrix::read_csv(std::io::BufReader::new(file))
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn check_oracle_size(m: usize, n: usize, square: bool) -> CliResult<()> {
    if m > ORACLE_MAX_N || n > ORACLE_MAX_N || (square && m != n) {
        let need = if square { "square and " } else { "" };
        return Err(CliError::input(format!(
            "--oracle needs {need}at most {ORACLE_MAX_N} points per side, got {m} x {n}"
        )));
    }
    Ok(())
}

/// Solve one transport problem from matrix files and write `plan.csv`.
pub fn cmd_solve_ot(args: &SolveOtArgs) -> CliResult<OtSolution> {
    let expected = match args.problem {
        OtProblem::Emd => 1,
        OtProblem::Gw => 2,
        OtProblem::Fgw => 3,
        OtProblem::Fused => 5,
    };
    if args.inputs.len() != expected {
        return Err(CliError::input(format!(
            "{} takes {expected} matrix file(s), got {}",
            args.problem.name(),
            args.inputs.len()
        )));
    }
    if !(0.0..=1.0).contains(&args.beta) {
        return Err(CliError::input(format!("beta must lie in [0, 1], got {}", args.beta)));
    }
    let m: Vec<DenseMatrix> = args.inputs.iter().map(|p| read_matrix(p)).collect::<CliResult<_>>()?;
    let solver = GwSolver {
        restarts: args.restarts,
        seed: args.seed,
        ..GwSolver::default()
    };
    let beta = args.beta;
    let (objective, plan, oracle) = match args.problem {
        OtProblem::Emd => {
            let (r, c) = m[0].shape();
            if r == 0 || c == 0 {
                return Err(CliError::input("cost matrix is empty"));
            }
            let plan = solve_emd(&m[0], &DiscreteMeasure::uniform(r), &DiscreteMeasure::uniform(c))?.into_matrix();
            let oracle = if args.oracle {
                check_oracle_size(r, c, false)?;
                Some(if r == c { brute_force_emd(&m[0])?.0 } else { expanded_assignment_emd(&m[0])? })
            } else {
                None
            };
            (linear_sum(&m[0], &plan), plan, oracle)
        }
        OtProblem::Gw => {
            let (v, plan) = solver.solve(&m[0], &m[1])?;
            let oracle = if args.oracle {
                check_oracle_size(m[0].rows(), m[1].rows(), true)?;
                Some(brute_force_gw(&m[0], &m[1])?.0)
            } else {
                None
            };
            (v, plan.into_matrix(), oracle)
        }
        OtProblem::Fgw => {
            let prob = QuadraticProblem::fgw(&m[0], &m[1], &m[2], beta)?;
            let sol = solver.minimize(&prob)?;
            let oracle = if args.oracle {
                check_oracle_size(m[0].rows(), m[1].rows(), true)?;
                let f = |p: &DenseMatrix| (1.0 - beta) * linear_sum(&m[2], p) + beta * gw_quadruple_sum(&m[0], &m[1], p);
                Some(min_over_permutations(m[0].rows(), f)?.0)
            } else {
                None
            };
            (sol.value, sol.plan.into_matrix(), oracle)
        }
        OtProblem::Fused => {
            let [dx0, dx1, dz0, dz1, dz01]: [DenseMatrix; 5] = m.try_into().expect("five matrices");
            let prob = FusedProblem::new(dx0.clone(), dx1.clone(), dz0.clone(), dz1.clone(), dz01.clone(), beta)?;
            let sol = solver.minimize(prob.quadratic())?;
            let oracle = if args.oracle {
                check_oracle_size(dz01.rows(), dz01.cols(), true)?;
                Some(brute_force_fused(&dx0, &dx1, &dz0, &dz1, &dz01, beta)?.0)
            } else {
                None
            };
            (sol.value, sol.plan.into_matrix(), oracle)
        }
    };
    create_dir(&args.out)?;
    let path = args.out.join("plan.csv");
    let mut f = BufWriter::new(File::create(&path)?);
    plan.write_csv(&mut f)?;
    f.flush()?;
    println!("objective {objective:?}");
    if let Some(o) = oracle {
        println!("oracle {o:?}");
    }
    Ok(OtSolution {
        objective,
        oracle,
        plan: plan.to_rows(),
    })
}

/// Write a synthetic cohort in the standard CSV layout.
pub fn cmd_gen_synth(args: &GenSynthArgs) -> CliResult<usize> {
    let samples = gen_synthetic(args.n, args.dim, args.bias, args.noise, args.seed)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_csv(&args.out, &samples)?;
    println!("wrote {} samples to {}", samples.len(), args.out.display());
    Ok(samples.len())
}
