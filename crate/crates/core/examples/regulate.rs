//! Closes the adaptive loop on the reference plant: flows for T2 seconds,
//! jumps the identifier and re-synthesizes the gain, until the estimate
//! settles. Writes the trace and the jump log.
//!
//!     cargo run --release --example regulate [-- out_dir]

use std::path::PathBuf;

use regulab::config::ExperimentConfig;
use regulab::regulator::run;
use regulab::sim::collect_offline;

fn main() -> regulab::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/regulate".into()));
    std::fs::create_dir_all(&out)?;

    let cfg = ExperimentConfig::reference();
    let plant = cfg.plant()?;
    let exo = cfg.exosystem()?;
    let ds = collect_offline(
        &plant,
        &cfg.data_initial_state(cfg.seed),
        &cfg.excitation()?,
        cfg.sampling.t_star,
        cfg.sampling.internal_h,
    )?;
    let rc = cfg.regulator_config()?;
    let log = run(&plant, &exo, &ds, &rc, &cfg.run_initial_state(cfg.seed))?;

    for jr in log.jumps.iter().step_by(5) {
        println!(
            "t = {:6.2}  j = {:<3} theta = ({:8.5}, {:8.5})  margin {:.3}",
            jr.t, jr.j, jr.theta[0], jr.theta[1], jr.margin
        );
    }
    let th = log.final_theta();
    println!("stop: {}  after {} jumps", log.stop_reason.map_or("none", |r| r.as_str()), log.jumps.len());
    println!("final theta = ({:.6}, {:.6}); true (4, 0)", th[0], th[1]);
    println!("mean |e| over the last 10% = {:.3e}", log.tail_mean_abs_error(0.1));

    log.write_trace_csv(&out.join("trace.csv"))?;
    log.write_jumps_csv(&out.join("jumps.csv"))?;
    println!("wrote {}", out.display());
    Ok(())
}
