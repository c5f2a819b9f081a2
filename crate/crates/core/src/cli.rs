//! The four commands behind the `regulab` binary. Each returns a printable
//! report; failures carry the process exit code.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DVector;

use crate::config::ExperimentConfig;
use crate::error::Error;
use crate::model::{cascade_matrices, char_poly_theta, check_structure, pbh_cascade, pbh_nonresonance};
use crate::oracle::{build_oracle, data_equation_residual, residual_table, Residual};
use crate::postproc::{assemble_matrices, excitation_rank_default, post_process, synthesis_samples};
use crate::linalg::{self, RANK_TOL};
use crate::regulator;
use crate::sim::{collect_offline, Dataset};
use crate::synth::{synthesize_from_matrices, SynthesisResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ASSUMPTION: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config { .. } | Error::Parse { .. } => EXIT_CONFIG,
            Error::Excitation { .. } | Error::InsufficientData { .. } | Error::Unstabilizable(_) | Error::Resonance(_) => {
                EXIT_ASSUMPTION
            }
            _ => EXIT_NUMERIC,
        };
        let message = match &e {
            Error::InsufficientData { .. } => format!("excitation condition cannot hold: {e}"),
            _ => e.to_string(),
        };
        Self::new(code, message)
    }
}

pub type CliResult = std::result::Result<String, CliError>;

pub fn load_config(path: &Path) -> std::result::Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::new(EXIT_CONFIG, format!("cannot read config {}: {e}", path.display())))?;
    Ok(ExperimentConfig::from_json(&text, &path.display().to_string())?)
}

fn check_plant_structure(cfg: &ExperimentConfig) -> std::result::Result<String, CliError> {
    let plant = cfg.plant()?;
    let rep = check_structure(&plant);
    let n = plant.n();
    let summary = format!(
        "structure: controllable = {}, observable = {} (n = {n})",
        rep.controllable, rep.observable
    );
    if !(rep.controllable && rep.observable) {
        return Err(CliError::new(EXIT_ASSUMPTION, format!("plant structure check failed: {summary}")));
    }
    Ok(summary)
}

fn collect_dataset(cfg: &ExperimentConfig, seed: u64) -> std::result::Result<Dataset, CliError> {
    let plant = cfg.plant()?;
    let x0 = cfg.data_initial_state(seed);
    Ok(collect_offline(&plant, &x0, &cfg.excitation()?, cfg.sampling.t_star, cfg.sampling.internal_h)?)
}

/// The given dataset file, else `<out>/dataset.csv` if present, else a fresh
/// in-memory collection.
fn obtain_dataset(cfg: &ExperimentConfig, dataset: Option<&Path>, out: &Path, seed: u64) -> std::result::Result<Dataset, CliError> {
    if let Some(p) = dataset {
        return Ok(Dataset::read_csv(p).map_err(|e| match e {
            Error::Io(io) => CliError::new(EXIT_CONFIG, format!("cannot read dataset {}: {io}", p.display())),
            other => CliError::new(EXIT_CONFIG, other.to_string()),
        })?);
    }
    let default = out.join("dataset.csv");
    if default.exists() {
        return obtain_dataset(cfg, Some(&default), out, seed);
    }
    collect_dataset(cfg, seed)
}

fn ensure_dir(out: &Path) -> std::result::Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::new(EXIT_NUMERIC, format!("cannot create {}: {e}", out.display())))
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(", ")
}

/// Simulates the excitation experiment and writes `dataset.csv` (integration
/// grid) and `dataset_sampled.csv` (decimated to `tau_s`).
pub fn cmd_collect(config: &Path, out: &Path) -> CliResult {
    let cfg = load_config(config)?;
    let seed = cfg.effective_seed()?;
    let summary = check_plant_structure(&cfg)?;
    let ds = collect_dataset(&cfg, seed)?;
    let step = (cfg.sampling.tau_s / cfg.sampling.internal_h).round() as usize;
    let sampled = ds.decimate(step)?;
    ensure_dir(out)?;
    let dense_path = out.join("dataset.csv");
    let sampled_path = out.join("dataset_sampled.csv");
    ds.write_csv(&dense_path)?;
    sampled.write_csv(&sampled_path)?;

    let mut r = String::new();
    let _ = writeln!(r, "{summary}");
    let _ = writeln!(r, "seed {seed}, x(0) = [{}]", fmt_vec(cfg.data_initial_state(seed).as_slice()));
    let _ = writeln!(r, "wrote {} ({} rows, dt = {})", dense_path.display(), ds.len(), ds.dt);
    let _ = writeln!(r, "wrote {} ({} rows, dt = {})", sampled_path.display(), sampled.len(), sampled.dt);
    Ok(r)
}

fn synthesize_for(cfg: &ExperimentConfig, ds: &Dataset, theta: &DVector<f64>) -> std::result::Result<(SynthesisResult, usize), CliError> {
    let fp = cfg.filter()?;
    let pp = post_process(ds, &fp, theta)?;
    let idx = synthesis_samples(ds, cfg.sampling.tau_s, cfg.sampling.t_star);
    let dm = assemble_matrices(&pp, ds, &fp, &idx)?;
    let exc = excitation_rank_default(&dm);
    if !exc.satisfied {
        return Err(Error::Excitation {
            rank: exc.rank,
            required: exc.required,
        }
        .into());
    }
    Ok((synthesize_from_matrices(&dm, theta, &fp, &cfg.weights())?, exc.rank))
}

/// Data-driven gain for `theta` (default `θ₀`); writes `gain.csv`.
pub fn cmd_synthesize(config: &Path, dataset: Option<&Path>, theta: Option<&[f64]>, out: &Path) -> CliResult {
    let cfg = load_config(config)?;
    let seed = cfg.effective_seed()?;
    let theta = DVector::from_vec(theta.map_or_else(|| cfg.identifier.theta0.clone(), <[f64]>::to_vec));
    let bbox = cfg.theta_box()?;
    if theta.len() != bbox.dim() {
        return Err(CliError::new(
            EXIT_CONFIG,
            format!("--theta has {} entries, exosystem order is {}", theta.len(), bbox.dim()),
        ));
    }
    let mut r = String::new();
    if !bbox.contains(&theta) {
        log::warn!("theta outside the identifier box");
        let _ = writeln!(r, "warning: theta outside the identifier box; proceeding");
    }
    let ds = obtain_dataset(&cfg, dataset, out, seed)?;
    let (res, rank) = synthesize_for(&cfg, &ds, &theta)?;
    ensure_dir(out)?;
    let path = out.join("gain.csv");
    res.write_gain_csv(&path)?;
    let _ = writeln!(r, "excitation rank {rank} (required {})", 3 * cfg.filter()?.n());
    r.push_str(&res.report());
    let _ = writeln!(
        r,
        "closed loop {}",
        if res.stability_margin() > 0.0 { "Hurwitz" } else { "NOT Hurwitz" }
    );
    let _ = writeln!(r, "wrote {}", path.display());
    Ok(r)
}

/// Closed-loop run; writes `trace.csv` and `jumps.csv` even when the run
/// aborts midway.
pub fn cmd_regulate(config: &Path, dataset: Option<&Path>, out: &Path) -> CliResult {
    let cfg = load_config(config)?;
    let seed = cfg.effective_seed()?;
    check_plant_structure(&cfg)?;
    let ds = obtain_dataset(&cfg, dataset, out, seed)?;
    let plant = cfg.plant()?;
    let exo = cfg.exosystem()?;
    let rc = cfg.regulator_config()?;
    let x0 = cfg.run_initial_state(seed);
    let log = regulator::run(&plant, &exo, &ds, &rc, &x0)?;
    ensure_dir(out)?;
    log.write_trace_csv(&out.join("trace.csv"))?;
    log.write_jumps_csv(&out.join("jumps.csv"))?;

    let theta = log.final_theta();
    let mut r = String::new();
    let _ = writeln!(r, "jumps          {}", log.final_state.j);
    let _ = writeln!(r, "final theta    [{}]", fmt_vec(theta.as_slice()));
    let _ = writeln!(
        r,
        "               (coefficients of s^d + theta_d s^(d-1) + ... + theta_1; positive for a stable-sinusoid exosystem)"
    );
    let _ = writeln!(r, "final K        [{}]  (u = -K col(eta_e, zeta_y - zeta_r, zeta_u))", fmt_vec(&log.final_state.k.iter().cloned().collect::<Vec<_>>()));
    let _ = writeln!(r, "mean |e| over last 10%  {:.3e}", log.tail_mean_abs_error(0.1));
    let rejected = log.jumps.iter().filter(|j| j.rejected.is_some()).count();
    if rejected > 0 {
        let _ = writeln!(r, "rejected jumps {rejected} (previous gain kept)");
    }
    let _ = writeln!(r, "stop reason    {}", log.stop_reason.map_or("none", |s| s.as_str()));
    let _ = writeln!(r, "wrote {} and {}", out.join("trace.csv").display(), out.join("jumps.csv").display());
    if let Some(f) = &log.failure {
        return Err(CliError::new(EXIT_NUMERIC, format!("run aborted at t = {:.3}: {f}\n{r}", log.final_state.t)));
    }
    Ok(r)
}

/// Oracle checks against the true plant. The report is returned in both the
/// success and failure case.
pub fn cmd_verify(config: &Path, out: Option<&Path>) -> CliResult {
    let cfg = load_config(config)?;
    let seed = cfg.effective_seed()?;
    let mut r = String::new();
    let _ = writeln!(r, "{}", check_plant_structure(&cfg)?);
    let plant = cfg.plant()?;
    let exo = cfg.exosystem()?;
    let fp = cfg.filter()?;
    if !exo.spectrum_is_admissible(1e-9) {
        return Err(CliError::new(EXIT_ASSUMPTION, "exosystem check failed: S must have distinct imaginary-axis eigenvalues"));
    }
    let theta_star = char_poly_theta(&exo.s)?;
    let _ = writeln!(r, "theta* = [{}]", fmt_vec(theta_star.as_slice()));
    if !pbh_nonresonance(&plant, &theta_star, RANK_TOL) {
        return Err(CliError::new(EXIT_ASSUMPTION, "non-resonance check failed: plant resonates with the exosystem"));
    }

    let ds = match out.map(|o| o.join("dataset.csv")).filter(|p| p.exists()) {
        Some(p) => Dataset::read_csv(&p)?,
        None => collect_dataset(&cfg, seed)?,
    };
    let (res, _) = synthesize_for(&cfg, &ds, &theta_star)?;
    let rho0 = cfg.data_initial_state(seed);
    let bundle = build_oracle(&plant, &exo, &fp, &theta_star, &res.k, Some(&rho0))
        .map_err(|e| CliError::new(EXIT_NUMERIC, format!("oracle construction failed: {e}")))?;

    let mut rows = bundle.residuals.clone();
    let pp = post_process(&ds, &fp, &theta_star)?;
    let idx = synthesis_samples(&ds, cfg.sampling.tau_s, cfg.sampling.t_star);
    let dm = assemble_matrices(&pp, &ds, &fp, &idx)?;
    rows.push(Residual::new("data equation Z+ = Ac Z + Bc U + D M_rho X", data_equation_residual(&dm, &theta_star, &fp, &bundle)?, 1e-6));
    rows.push(Residual::new("H_hat - D C (data vs oracle)", linalg::max_abs(&(&res.h_hat - bundle.dc(&fp))), 1e-5));
    let spec_err = {
        let ao = &plant.a - &bundle.pi.pi1 * &fp.l * &plant.c;
        let mut eig: Vec<f64> = linalg::eigenvalues(&ao).iter().map(|z| z.re).collect();
        let mut target: Vec<f64> = fp.lambda.iter().cloned().collect();
        eig.sort_by(f64::total_cmp);
        target.sort_by(f64::total_cmp);
        let imag = linalg::eigenvalues(&ao).iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        eig.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(imag, f64::max)
    };
    rows.push(Residual::new("eig(A - Pi1 L C) = eig(Lambda_F)", spec_err, 1e-6));
    r.push_str(&residual_table(&rows));

    let (cal_a, cal_b, cal_c) = cascade_matrices(&fp, &bundle.pi.h1, &bundle.pi.h2);
    let casc = pbh_cascade(&cal_a, &cal_b, &cal_c, &theta_star, RANK_TOL);
    let _ = writeln!(r, "non-resonance at theta*: plant true, cascade {casc}");
    let exc = excitation_rank_default(&dm);
    let _ = writeln!(r, "excitation rank {} / {}", exc.rank, exc.required);
    let _ = writeln!(r, "box corner sweep:");
    for c in cfg.theta_box()?.corners() {
        let _ = writeln!(r, "  theta = [{}]  non-resonant = {}", fmt_vec(c.as_slice()), pbh_nonresonance(&plant, &c, RANK_TOL));
    }
    if let Some(o) = out {
        ensure_dir(o)?;
        fs::write(o.join("verify.txt"), &r).map_err(|e| CliError::new(EXIT_NUMERIC, e.to_string()))?;
    }
    let all_ok = rows.iter().all(Residual::passed) && casc && exc.satisfied;
    if all_ok {
        Ok(r)
    } else {
        Err(CliError::new(EXIT_NUMERIC, format!("verification failed\n{r}")))
    }
}
