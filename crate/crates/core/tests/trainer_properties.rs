use gwib::data::{gen_synthetic, split_groups, CohortSample};
use gwib::model::{
    encode, factual_loss, objective_and_gradient, CfrParams, FactualBatch, Mode, ModelShape, RegPlans,
    RegularizerContext, RegularizerRecipe,
};
use gwib::ot::oracle::brute_force_emd;
use gwib::ot::{pairwise_dist, pairwise_sq_dist, solve_emd, CgOptions, DiscreteMeasure};
use gwib::trainer::{
    apply_variant, matched_gw, solve_plans, train, train_with, EarlyStopping, EpochRecord, TrainConfig, Variant,
};
use gwib::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(variant: Variant, seed: u64) -> TrainConfig {
    TrainConfig {
        variant,
        seed,
        lr: 1e-2,
        batch_size: 16,
        d_phi: [8, 4],
        d_h: 4,
        epochs: 12,
        patience: 30,
        beta: 0.7,
        ..TrainConfig::default()
    }
}

fn cohort(n: usize, seed: u64) -> (Vec<CohortSample>, Vec<CohortSample>) {
    let s = gen_synthetic(n + 10, 3, 1.0, 0.5, seed).unwrap();
    let (train, val) = s.split_at(n);
    (train.to_vec(), val.to_vec())
}

fn assert_monotone(trace: &[f64], what: &str) {
    for w in trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "{what}: {} then {}", w[0], w[1]);
    }
}

#[test]
fn tarnet_never_solves_a_plan_and_fits_the_data() {
    let (tr, va) = cohort(60, 1);
    let cfg = TrainConfig { epochs: 40, ..small_config(Variant::Tarnet, 3) };
    let out = train(&tr, &va, &cfg).unwrap();
    assert!(out.trace.iter().all(|r| r.cg_report.is_none() && r.aux_cg_reports.is_empty()));
    assert!(out.trace.iter().all(|r| r.regularizer.total == 0.0));
    let (first, last) = (out.trace[0].train_loss, out.trace.last().unwrap().train_loss);
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn gwib_conditional_gradient_traces_are_monotone() {
    let (tr, va) = cohort(40, 2);
    let cfg = TrainConfig { epochs: 30, ..small_config(Variant::Gwib, 4) };
    let out = train(&tr, &va, &cfg).unwrap();
    assert_eq!(out.trace.len(), 30);
    for r in &out.trace {
        let report = r.cg_report.as_ref().expect("a fused solve every epoch");
        assert_monotone(&report.objective_trace, &format!("epoch {}", r.epoch));
        assert!(r.val_loss.is_finite() && r.train_loss.is_finite());
        assert!(r.regularizer.total.is_finite());
        assert_eq!(r.regularizer.total, r.regularizer.recompose());
    }
}

#[test]
fn every_variant_records_finite_monotone_epochs() {
    let (tr, va) = cohort(30, 3);
    for v in Variant::ALL {
        let cfg = TrainConfig { epochs: 4, ..small_config(v, 5) };
        let out = train(&tr, &va, &cfg).unwrap();
        for r in &out.trace {
            for rep in r.cg_report.iter().chain(&r.aux_cg_reports) {
                assert_monotone(&rep.objective_trace, v.as_str());
            }
            assert!(r.gw_diag_0 >= -1e-8 && r.gw_diag_1 >= -1e-8, "{v}: {r:?}");
            assert!(r.gw_diag_0.is_finite() && r.gw_diag_1.is_finite());
            assert!(r.train_loss.is_finite() && r.val_loss.is_finite() && r.regularizer.total.is_finite());
        }
    }
}

#[test]
fn patience_stub_stops_after_patience_epochs() {
    let patience = 5;
    let mut stop = EarlyStopping::new(patience);
    let shape = ModelShape::new(2, [3, 2], 2).unwrap();
    let mut stopped_at = None;
    for epoch in 1..=50 {
        let params = CfrParams::init(shape, 0.0, false, epoch as u64).unwrap();
        if stop.update(epoch, 1.0, &params) {
            stopped_at = Some(epoch);
            break;
        }
    }
    assert_eq!(stopped_at, Some(patience + 1));
    assert_eq!(stop.best_epoch(), 1);
    assert_eq!(stop.into_best().unwrap(), CfrParams::init(shape, 0.0, false, 1).unwrap());
}

#[test]
fn early_stopping_contract_holds_in_training() {
    let (tr, va) = cohort(40, 6);
    for patience in [1, 3] {
        let cfg = TrainConfig { epochs: 25, patience, lr: 0.1, ..small_config(Variant::CfrWass, 7) };
        let out = train(&tr, &va, &cfg).unwrap();
        let n = out.trace.len();
        assert!(n <= cfg.epochs);
        let best = out.trace.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_val_loss, best);
        assert_eq!(out.trace[out.best_epoch - 1].val_loss, best);
        assert!(n - out.best_epoch <= patience);
        assert_eq!(factual_loss(&out.params, &gwib::data::to_batch(&va)).unwrap(), best);
    }
}

#[test]
fn zero_weight_gwib_reproduces_tarnet() {
    let (tr, va) = cohort(50, 8);
    let a = train(&tr, &va, &TrainConfig { lambda: 0.0, ..small_config(Variant::Gwib, 9) }).unwrap();
    let b = train(&tr, &va, &small_config(Variant::Tarnet, 9)).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.params, b.params);
}

#[test]
fn training_is_reproducible() {
    let (tr, va) = cohort(40, 10);
    for v in [Variant::Gwib, Variant::GwibGap, Variant::CfrWass] {
        let cfg = small_config(v, 11);
        let (a, b) = (train(&tr, &va, &cfg).unwrap(), train(&tr, &va, &cfg).unwrap());
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.params, b.params);
        let other = train(&tr, &va, &TrainConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.trace, other.trace);
    }
}

#[test]
fn callback_sees_every_epoch_and_can_abort() {
    let (tr, va) = cohort(30, 12);
    let mut seen: Vec<EpochRecord> = Vec::new();
    let out = train_with(&tr, &va, &small_config(Variant::Gwib, 1), |r| {
        seen.push(r.clone());
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, out.trace);
    let err = train_with(&tr, &va, &small_config(Variant::Gwib, 1), |r| {
        if r.epoch == 2 {
            Err(Error::Numerical("stop".into()))
        } else {
            Ok(())
        }
    });
    assert!(err.is_err());
}

#[test]
fn single_pair_opt_matches_shared_plan() {
    let s = gen_synthetic(40, 3, 0.0, 1.0, 13).unwrap();
    let one = |t: u8| s.iter().find(|u| u.t == t).unwrap().clone();
    let tr = vec![one(0), one(1)];
    let va = s[..8].to_vec();
    let a = train(&tr, &va, &small_config(Variant::Gwib, 14)).unwrap();
    let b = train(&tr, &va, &small_config(Variant::GwibOpt, 14)).unwrap();
    assert_eq!(a.params, b.params);
    for (x, y) in a.trace.iter().zip(&b.trace) {
        assert_eq!((x.train_loss, x.val_loss, &x.regularizer), (y.train_loss, y.val_loss, &y.regularizer));
        assert_eq!((x.gw_diag_0, x.gw_diag_1), (y.gw_diag_0, y.gw_diag_1));
        assert_eq!(y.aux_cg_reports.len(), 2);
    }
}

/// Groups pushed far apart along every covariate.
fn separated_groups(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let pts = |rng: &mut ChaCha8Rng, c: f64| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..3).map(|_| c + rng.random_range(-0.5..0.5)).collect()).collect()
    };
    (pts(rng, 3.0), pts(rng, -3.0))
}

#[test]
fn wasserstein_regularizer_matches_assignment_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let cfg = small_config(Variant::CfrWass, 0);
    let vr = apply_variant(&cfg).unwrap();
    for case in 0..20 {
        let n = 2 + case % 5;
        let (x0, x1) = separated_groups(&mut rng, n);
        let p = CfrParams::init(ModelShape::new(3, [6, 4], 3).unwrap(), 0.0, false, case as u64).unwrap();
        let ctx = RegularizerContext::new(x0.clone(), x1.clone(), cfg.beta, false, vr.recipe).unwrap();
        let (z0, z1) = (encode(&p, &x0).unwrap(), encode(&p, &x1).unwrap());
        let geom = ctx.geometry(&z0, &z1).unwrap();
        let plans = solve_plans(&ctx, &geom, &vr, cfg.cg_options()).unwrap();
        assert!(plans.cg_report.is_none());
        let value = ctx.evaluate(&geom, &ctx.prepare(plans.plans).unwrap()).unwrap().wasserstein;

        let cost = pairwise_sq_dist(&z0, &z1).unwrap();
        let (bf, _) = brute_force_emd(&cost).unwrap();
        assert!((value - bf.sqrt()).abs() <= 1e-9 * bf.sqrt().max(1.0), "case {case}: {value} vs {}", bf.sqrt());
        let emd = solve_emd(&cost, &DiscreteMeasure::uniform(n), &DiscreteMeasure::uniform(n)).unwrap();
        let direct: f64 = cost.as_slice().iter().zip(emd.matrix().as_slice()).map(|(c, t)| c * t).sum();
        assert!((value - direct.sqrt()).abs() <= 1e-12 * value.max(1.0));
    }
}

/// Network copying its (nonnegative) 3-d input into the first latent coordinates.
fn copying_net(seed: u64) -> CfrParams {
    let mut p = CfrParams::init(ModelShape::new(3, [4, 5], 3).unwrap(), 0.0, false, seed).unwrap();
    for layer in &mut p.encoder {
        layer.weight.iter_mut().for_each(|w| *w = 0.0);
        layer.bias.iter_mut().for_each(|b| *b = 0.0);
        for j in 0..3 {
            layer.weight[j * layer.inputs + j] = 1.0;
        }
    }
    p
}

#[test]
fn dropping_residuals_changes_nothing_when_codes_are_isometric() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for case in 0..10 {
        let (n0, n1) = (rng.random_range(2..7), rng.random_range(2..7));
        let pos = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..3).map(|_| rng.random_range(0.1..3.0)).collect()).collect()
        };
        let (x0, x1) = (pos(&mut rng, n0), pos(&mut rng, n1));
        let p = copying_net(case);
        let batch = FactualBatch::new(
            x0.iter().chain(&x1).cloned().collect(),
            (0..n0 + n1).map(|i| u8::from(i >= n0)).collect(),
            (0..n0 + n1).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let grads: Vec<CfrParams> = [Variant::Gwib, Variant::GwibRt]
            .into_iter()
            .map(|v| {
                let cfg = small_config(v, 0);
                let vr = apply_variant(&cfg).unwrap();
                let ctx = RegularizerContext::new(x0.clone(), x1.clone(), cfg.beta, false, vr.recipe).unwrap();
                let (z0, z1) = ctx.latents(&p).unwrap();
                let geom = ctx.geometry(&z0, &z1).unwrap();
                assert!(geom.d_z0.max_abs_diff(ctx.d_x0()) < 1e-12);
                let plans = ctx.prepare(solve_plans(&ctx, &geom, &vr, cfg.cg_options()).unwrap().plans).unwrap();
                objective_and_gradient(&p, &batch, Some((&ctx, &plans)), 0.5, Mode::Eval).unwrap().2
            })
            .collect();
        let (a, b) = (grads[0].flatten(), grads[1].flatten());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0), "case {case}: {x} vs {y}");
        }
    }
}

#[test]
fn matched_gw_is_zero_for_copies_and_nonnegative_otherwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for n in 1..8 {
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let d = pairwise_dist(&xs, &xs).unwrap();
        assert!(matched_gw(&d, &d, CgOptions::default()).unwrap().abs() < 1e-12);
        let zs: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0] * x[0], x[1]]).collect();
        let v = matched_gw(&d, &pairwise_dist(&zs, &zs).unwrap(), CgOptions::default()).unwrap();
        assert!(v >= -1e-8);
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let (tr, va) = cohort(30, 18);
    let controls: Vec<_> = tr.iter().filter(|u| u.t == 0).cloned().collect();
    let err = train(&controls, &va, &small_config(Variant::Gwib, 0)).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)), "{err}");
    assert!(train(&tr, &[], &small_config(Variant::Gwib, 0)).is_err());
    assert!(train(&tr, &va, &TrainConfig { beta: 0.0, ..small_config(Variant::Gwib, 0) }).is_err());
    assert!(train(&tr, &va, &TrainConfig { batch_size: 20, ..small_config(Variant::Gwib, 0) }).is_err());
    assert!("gwib_xyz".parse::<Variant>().is_err());
}

#[test]
fn exploding_outcomes_abort_with_divergence() {
    let (mut tr, va) = cohort(30, 19);
    for u in &mut tr {
        u.y_factual *= 1e7;
    }
    let err = train(&tr, &va, &small_config(Variant::Tarnet, 0)).unwrap_err();
    assert!(matches!(err, Error::Divergence { epoch: 1, .. }), "{err}");
    assert!(err.is_numerical());
}

#[test]
fn regularizer_sees_both_groups() {
    let (tr, _) = cohort(30, 20);
    let (x0, x1) = split_groups(&tr);
    assert_eq!(x0.len() + x1.len(), tr.len());
    let ctx = RegularizerContext::new(x0, x1, 0.5, false, RegularizerRecipe::FULL).unwrap();
    let n0 = ctx.group_sizes().0;
    assert!(ctx.prepare(RegPlans::Coupling(gwib::DenseMatrix::zeros(n0, 1))).is_err());
}
