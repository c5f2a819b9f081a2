//! Runs the offline excitation experiment on the reference plant and writes
//! the dense and the decimated dataset.
//!
//!     cargo run --example collect [-- out_dir]

use std::path::PathBuf;

use regulab::config::ExperimentConfig;
use regulab::model::check_structure;
use regulab::sim::collect_offline;

fn main() -> regulab::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/collect".into()));
    std::fs::create_dir_all(&out)?;

    let cfg = ExperimentConfig::reference();
    let plant = cfg.plant()?;
    let s = check_structure(&plant);
    println!("controllable {}, observable {}", s.controllable, s.observable);

    let x0 = cfg.data_initial_state(cfg.seed);
    println!("x(0) = {:?}", x0.as_slice());
    let ds = collect_offline(&plant, &x0, &cfg.excitation()?, cfg.sampling.t_star, cfg.sampling.internal_h)?;
    let step = (cfg.sampling.tau_s / cfg.sampling.internal_h).round() as usize;
    let sampled = ds.decimate(step)?;

    ds.write_csv(&out.join("dataset.csv"))?;
    sampled.write_csv(&out.join("dataset_sampled.csv"))?;
    let peak = ds.y.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    println!("{} dense samples, {} at tau_s = {}", ds.len(), sampled.len(), cfg.sampling.tau_s);
    println!("open-loop plant is unstable: max |y| over the record = {peak:.3e}");
    println!("wrote {}", out.display());
    Ok(())
}
