mod common;

use nalgebra::DVector;
use regulab::identifier::IdentifierState;
use regulab::model::char_poly_theta;
use regulab::oracle::fit_decay_rate;
use regulab::regulator::{flow, jump, run, ClosedLoopState, GainBank, RegulatorConfig, StopReason};

fn reference_cfg() -> (common::Reference, RegulatorConfig) {
    let r = common::reference();
    let cfg = r.cfg.regulator_config().unwrap();
    (r, cfg)
}

#[test]
fn reference_run_is_a_valid_hybrid_trajectory() {
    let (r, cfg) = reference_cfg();
    let log = run(&r.cfg.plant().unwrap(), &r.cfg.exosystem().unwrap(), &r.ds, &cfg, &r.x0_run).unwrap();
    assert!(log.failure.is_none());
    assert!(log.trace.windows(2).all(|w| w[1].t > w[0].t));
    assert!(log.trace.windows(2).all(|w| w[1].j == w[0].j || w[1].j == w[0].j + 1));
    for (i, rec) in log.jumps.iter().enumerate() {
        assert_eq!(rec.j, i);
    }
    assert!(log.jumps.windows(2).all(|w| (w[1].t - w[0].t - cfg.t2).abs() < 1e-9));
    // Bounded: every logged signal finite and moderate.
    let sup = log.trace.iter().map(|r| r.e.abs().max(r.u.abs()).max(r.y.abs())).fold(0.0, f64::max);
    assert!(sup.is_finite() && sup < 1e4, "sup {sup}");
    assert!(log.final_state.x.iter().all(|v| v.is_finite()));
}

#[test]
fn parameter_error_settles_monotonically() {
    let (r, cfg) = reference_cfg();
    let log = run(&r.cfg.plant().unwrap(), &r.cfg.exosystem().unwrap(), &r.ds, &cfg, &r.x0_run).unwrap();
    let target = DVector::from_column_slice(&[4.0, 0.0]);
    let errs: Vec<f64> = log.jumps.iter().map(|j| (&j.theta - &target).amax()).collect();
    // The first few jumps act on a rank-deficient R; from then on the error
    // does not grow.
    let settled = &errs[8..];
    for w in settled.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-6), "{} -> {}", w[0], w[1]);
    }
    assert!(errs.last().unwrap() * 100.0 < errs[0]);
}

#[test]
fn known_exosystem_without_jumps_decays_exponentially() {
    let (r, mut cfg) = reference_cfg();
    let exo = r.cfg.exosystem().unwrap();
    cfg.theta0 = char_poly_theta(&exo.s).unwrap();
    cfg.n_i = 0;
    cfg.horizon = 40.0;
    let log = run(&r.cfg.plant().unwrap(), &exo, &r.ds, &cfg, &r.x0_run).unwrap();
    assert_eq!(log.final_state.j, 0);
    assert_eq!(log.stop_reason, Some(StopReason::MaxJumps));
    let t: Vec<f64> = log.trace.iter().map(|r| r.t).collect();
    let e: Vec<f64> = log.trace.iter().map(|r| r.e.abs()).collect();
    // Envelope over 2 s windows removes the oscillation before the fit.
    let (mut wt, mut we) = (Vec::new(), Vec::new());
    for k in 0..20 {
        let lo = 2.0 * k as f64;
        let m = t.iter().zip(&e).filter(|(t, _)| **t >= lo && **t < lo + 2.0).map(|(_, e)| *e).fold(0.0, f64::max);
        wt.push(lo);
        we.push(m);
    }
    let rate = fit_decay_rate(&wt, &we, 4.0).unwrap();
    assert!(rate > 0.3, "fitted rate {rate}");
    assert!(log.max_abs_error_after(35.0) < 1e-8);
}

#[test]
fn infinite_threshold_stops_after_first_jump() {
    let (r, mut cfg) = reference_cfg();
    cfg.delta = f64::INFINITY;
    cfg.horizon = 10.0;
    let log = run(&r.cfg.plant().unwrap(), &r.cfg.exosystem().unwrap(), &r.ds, &cfg, &r.x0_run).unwrap();
    assert_eq!(log.final_state.j, 1);
    assert_eq!(log.stop_reason, Some(StopReason::Converged));
    assert!((log.trace.last().unwrap().t - 10.0).abs() < 1e-9);
}

#[test]
fn no_jumps_keeps_initial_parameter() {
    let (r, mut cfg) = reference_cfg();
    cfg.n_i = 0;
    cfg.horizon = 5.0;
    let log = run(&r.cfg.plant().unwrap(), &r.cfg.exosystem().unwrap(), &r.ds, &cfg, &r.x0_run).unwrap();
    assert_eq!(log.final_theta(), &cfg.theta0);
    assert_eq!(log.jumps.len(), 1);
}

#[test]
fn jump_touches_only_discrete_state() {
    let (r, cfg) = reference_cfg();
    let plant = r.cfg.plant().unwrap();
    let exo = r.cfg.exosystem().unwrap();
    let mut bank = GainBank::new(&r.ds, &cfg.fp, cfg.weights, cfg.tau_s, cfg.t1).unwrap();
    let k0 = bank.get(&cfg.theta0).unwrap().k;
    let ident = IdentifierState::new(cfg.theta0.clone(), cfg.mu, cfg.bbox.clone()).unwrap();
    let st = ClosedLoopState::new(r.x0_run.clone(), exo.w0.clone(), ident, k0);
    let (before, _) = flow(&plant, &exo, &cfg.fp, &st, cfg.t2, cfg.h, cfg.tau_s, false).unwrap();
    let (after, sample, _, _) = jump(&before, &plant, &exo, &mut bank);
    assert_eq!(after.x, before.x);
    assert_eq!(after.w, before.w);
    assert_eq!(after.eta_e, before.eta_e);
    assert_eq!(after.zeta_y, before.zeta_y);
    assert_eq!(after.zeta_u, before.zeta_u);
    assert_eq!(after.zeta_r, before.zeta_r);
    assert_eq!(after.error(&plant, &exo), before.error(&plant, &exo));
    assert_eq!(after.j, before.j + 1);
    assert_eq!(after.tau, 0.0);
    let e = before.error(&plant, &exo);
    assert_eq!(sample.beta, before.theta().dot(&before.eta_e) - e);
}

#[test]
fn unchanged_parameter_keeps_gain() {
    let (r, cfg) = reference_cfg();
    let plant = r.cfg.plant().unwrap();
    let exo = r.cfg.exosystem().unwrap();
    let mut bank = GainBank::new(&r.ds, &cfg.fp, cfg.weights, cfg.tau_s, cfg.t1).unwrap();
    // Box corner, with an estimate far outside it: the projection returns
    // the same corner after a zero-regressor jump.
    let corner = cfg.bbox.lo.clone();
    let k0 = bank.get(&corner).unwrap().k;
    let mut ident = IdentifierState::new(corner.clone(), cfg.mu, cfg.bbox.clone()).unwrap();
    ident.r = nalgebra::DMatrix::identity(2, 2);
    ident.v = DVector::from_element(2, -100.0);
    let mut st = ClosedLoopState::new(DVector::zeros(3), DVector::zeros(2), ident, k0.clone());
    st.tau = cfg.t2;
    let (after, _, synth, rejected) = jump(&st, &plant, &exo, &mut bank);
    assert!(synth.is_none() && rejected.is_none());
    assert_eq!(after.k, k0);
    assert_eq!(after.theta(), &corner);
}

#[test]
fn logs_round_trip_through_csv() {
    let (r, mut cfg) = reference_cfg();
    cfg.horizon = 6.0;
    let log = run(&r.cfg.plant().unwrap(), &r.cfg.exosystem().unwrap(), &r.ds, &cfg, &r.x0_run).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("trace.csv");
    log.write_trace_csv(&p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,j,e,u,y,y_r,theta_1,theta_2");
    for (line, row) in lines.zip(&log.trace) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[2].parse::<f64>().unwrap(), row.e);
        assert_eq!(f[3].parse::<f64>().unwrap(), row.u);
    }
    let j = dir.path().join("jumps.csv");
    log.write_jumps_csv(&j).unwrap();
    let text = std::fs::read_to_string(&j).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("j,t,theta_1,theta_2,gain_1,"));
    assert!(header.ends_with("gain_8,pe_metric,stop_reason"));
    assert!(text.lines().last().unwrap().ends_with(log.stop_reason.unwrap().as_str()));
}
