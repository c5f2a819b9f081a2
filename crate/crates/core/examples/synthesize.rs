//! Data-driven gain synthesis at the corners of the parameter box and at the
//! true exosystem parameter; compares the estimate against the model oracle.
//!
//!     cargo run --example synthesize

use regulab::config::ExperimentConfig;
use regulab::linalg;
use regulab::model::char_poly_theta;
use regulab::oracle::{ac_theta, solve_pi};
use regulab::postproc::{replay_filters, synthesis_samples};
use regulab::sim::collect_offline;
use regulab::synth::synthesize;

fn main() -> regulab::Result<()> {
    let cfg = ExperimentConfig::reference();
    let plant = cfg.plant()?;
    let fp = cfg.filter()?;
    let ds = collect_offline(
        &plant,
        &cfg.data_initial_state(cfg.seed),
        &cfg.excitation()?,
        cfg.sampling.t_star,
        cfg.sampling.internal_h,
    )?;
    let filters = replay_filters(&ds, &fp)?;
    let idx = synthesis_samples(&ds, cfg.sampling.tau_s, cfg.sampling.t_star);
    let pi = solve_pi(&plant, &fp)?;

    let mut thetas = cfg.theta_box()?.corners();
    thetas.push(char_poly_theta(&cfg.exosystem()?.s)?);
    for theta in thetas {
        let res = synthesize(&ds, &filters, &fp, &theta, &idx, &cfg.weights())?;
        let exact = ac_theta(&theta, &fp, &pi.h1, &pi.h2)?;
        println!(
            "theta = ({:6.2}, {:5.2})  margin {:.3}  |P| {:.2e}  CARE res {:.1e}  |A_hat - A_c| {:.1e}",
            theta[0],
            theta[1],
            res.stability_margin(),
            linalg::norm_inf(&res.p),
            res.care_residual,
            linalg::norm_inf(&(&res.a_hat - exact)),
        );
    }

    let theta = char_poly_theta(&cfg.exosystem()?.s)?;
    let res = synthesize(&ds, &filters, &fp, &theta, &idx, &cfg.weights())?;
    println!("\nat the true parameter:\n{}", res.report());
    Ok(())
}
