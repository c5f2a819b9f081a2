//! Model-based oracle for the reference problem: filter realization,
//! steady-state subspace and cascade relations, with their residuals.
//!
//!     cargo run --example verify

use regulab::config::ExperimentConfig;
use regulab::model::{char_poly_theta, pbh_nonresonance};
use regulab::linalg::RANK_TOL;
use regulab::oracle::{build_oracle, residual_table, solve_pi, transverse_decay};
use regulab::postproc::{replay_filters, synthesis_samples};
use regulab::sim::collect_offline;
use regulab::synth::synthesize;

fn main() -> regulab::Result<()> {
    let cfg = ExperimentConfig::reference();
    let plant = cfg.plant()?;
    let exo = cfg.exosystem()?;
    let fp = cfg.filter()?;
    let x0 = cfg.data_initial_state(cfg.seed);
    let ds = collect_offline(&plant, &x0, &cfg.excitation()?, cfg.sampling.t_star, cfg.sampling.internal_h)?;
    let theta = char_poly_theta(&exo.s)?;
    let filters = replay_filters(&ds, &fp)?;
    let idx = synthesis_samples(&ds, cfg.sampling.tau_s, cfg.sampling.t_star);
    let gain = synthesize(&ds, &filters, &fp, &theta, &idx, &cfg.weights())?;

    let bundle = build_oracle(&plant, &exo, &fp, &theta, &gain.k, Some(&x0))?;
    println!("{}", residual_table(&bundle.residuals));
    println!("theta* = {:?}; plant non-resonant: {}", bundle.theta_star.as_slice(), pbh_nonresonance(&plant, &theta, RANK_TOL));
    println!("H1 = {:?}", bundle.pi.h1.as_slice());
    println!("H2 = {:?}", bundle.pi.h2.as_slice());
    println!("Psi =\n{:.4}", bundle.psi.psi());

    let pi = solve_pi(&plant, &fp)?;
    let rep = transverse_decay(&plant, &fp, &pi.pi1, &x0, 10.0)?;
    println!(
        "transverse error decays from {:.3e} to {:.3e}, fitted rate {:.3}",
        rep.initial_norm,
        rep.final_norm,
        rep.rate.unwrap_or(f64::NAN)
    );
    println!("all relations hold: {}", bundle.all_passed());
    Ok(())
}
