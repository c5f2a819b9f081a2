//! Replays the filters and the internal model over the dataset, assembles the
//! sampled data matrices and checks the excitation rank.
//!
//!     cargo run --example postprocess [-- theta1 theta2]

use nalgebra::DVector;
use regulab::config::ExperimentConfig;
use regulab::linalg;
use regulab::postproc::{assemble_matrices, excitation_rank_default, post_process, synthesis_samples};
use regulab::sim::collect_offline;

fn main() -> regulab::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let cfg = ExperimentConfig::reference();
    let theta = if args.len() == 2 {
        DVector::from_vec(args)
    } else {
        DVector::from_column_slice(&cfg.identifier.theta0)
    };
    let fp = cfg.filter()?;
    let ds = collect_offline(
        &cfg.plant()?,
        &cfg.data_initial_state(cfg.seed),
        &cfg.excitation()?,
        cfg.sampling.t_star,
        cfg.sampling.internal_h,
    )?;

    let pp = post_process(&ds, &fp, &theta)?;
    let idx = synthesis_samples(&ds, cfg.sampling.tau_s, cfg.sampling.t_star);
    let dm = assemble_matrices(&pp, &ds, &fp, &idx)?;
    println!("theta = {:?}", theta.as_slice());
    println!("{} samples; Z is {}x{}", dm.columns(), dm.z().nrows(), dm.z().ncols());

    let rep = excitation_rank_default(&dm);
    println!("rank [Z_zeta; X] = {} / {} -> {}", rep.rank, rep.required, if rep.satisfied { "exciting" } else { "NOT exciting" });
    let (scaled, _) = linalg::row_equilibrate(&dm.excitation_matrix());
    let sv = linalg::singular_values(&scaled);
    println!("singular values after row scaling: {:.3e} .. {:.3e}", sv.max(), sv.min());

    let last = pp.grid.len() - 1;
    println!("zeta_y(t*) = {:?}", pp.zeta_y[last].as_slice());
    println!("eta_y(t*)  = {:?}", pp.eta_y[last].as_slice());
    Ok(())
}
