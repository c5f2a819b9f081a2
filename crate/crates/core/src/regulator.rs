//! Hybrid closed loop: flows of plant, exosystem, filters and error internal
//! model under `u = -K col(η_e, ζ_y - ζ_r, ζ_u)`, interleaved with identifier
//! jumps that refresh `θ` and re-synthesize `K` from the offline dataset.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::identifier::{self, IdentifierState, RegressionSample};
use crate::model::{companion, internal_model_input, Exosystem, FilterParams, LtiPlant, ThetaBox};
use crate::postproc::{replay_filters, synthesis_samples, FilterReplay};
use crate::sim::{rk4_integrate, Dataset, DEFAULT_STEP};
use crate::synth::{synthesize, SynthesisResult, Weights};

#[derive(Debug, Clone, PartialEq)]
pub struct RegulatorConfig {
    pub fp: FilterParams,
    pub bbox: ThetaBox,
    pub theta0: DVector<f64>,
    pub mu: f64,
    pub weights: Weights,
    /// Offline sampling span used for synthesis; samples beyond it are ignored.
    pub t1: f64,
    /// Dwell between jumps.
    pub t2: f64,
    pub n_i: usize,
    pub delta: f64,
    pub tau_s: f64,
    /// Total simulated time.
    pub horizon: f64,
    /// Integration step.
    pub h: f64,
    /// Window of the PE metric; `0` selects `d`.
    pub pe_window: usize,
}

impl RegulatorConfig {
    /// Settings of the reference experiment for the given filter and box.
    pub fn reference(fp: FilterParams, bbox: ThetaBox, theta0: DVector<f64>) -> Self {
        Self {
            fp,
            bbox,
            theta0,
            mu: 0.9,
            weights: Weights {
                q_scale: 10.0,
                eta_weight: 10.0,
                r: 1.0,
            },
            t1: 10.0,
            t2: 1.4,
            n_i: 70,
            delta: 1e-6,
            tau_s: 0.1,
            horizon: 100.0,
            h: DEFAULT_STEP,
            pe_window: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| {
            Err(Error::Config {
                field: field.into(),
                message,
            })
        };
        if !(self.t2 > 0.0) {
            return bad("regulator.T2", format!("dwell time must be positive, got {}", self.t2));
        }
        if !(self.delta > 0.0) {
            return bad("regulator.delta", format!("threshold must be positive, got {}", self.delta));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return bad("identifier.mu", format!("forgetting factor must lie in (0, 1), got {}", self.mu));
        }
        if !(self.tau_s > 0.0) || !(self.h > 0.0) || !(self.horizon > 0.0) || !(self.t1 > 0.0) {
            return bad("sampling", "tau_s, h, horizon and T1 must be positive".into());
        }
        if self.theta0.len() != self.bbox.dim() {
            return Err(Error::dim(format!(
                "theta0 has {} entries, box has {}",
                self.theta0.len(),
                self.bbox.dim()
            )));
        }
        if !(self.weights.r > 0.0 && self.weights.q_scale > 0.0 && self.weights.eta_weight > 0.0) {
            return bad("synthesis", "weights must be positive".into());
        }
        Ok(())
    }

    fn window(&self) -> usize {
        if self.pe_window == 0 {
            self.theta0.len()
        } else {
            self.pe_window
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopState {
    pub t: f64,
    pub x: DVector<f64>,
    pub w: DVector<f64>,
    pub eta_e: DVector<f64>,
    pub zeta_y: DVector<f64>,
    pub zeta_u: DVector<f64>,
    pub zeta_r: DVector<f64>,
    /// Time since the last jump.
    pub tau: f64,
    pub j: usize,
    pub ident: IdentifierState,
    pub k: RowDVector<f64>,
}

impl ClosedLoopState {
    pub fn new(x0: DVector<f64>, w0: DVector<f64>, ident: IdentifierState, k: RowDVector<f64>) -> Self {
        let n = x0.len();
        let d = w0.len();
        Self {
            t: 0.0,
            x: x0,
            w: w0,
            eta_e: DVector::zeros(d),
            zeta_y: DVector::zeros(n),
            zeta_u: DVector::zeros(n),
            zeta_r: DVector::zeros(n),
            tau: 0.0,
            j: 0,
            ident,
            k,
        }
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.ident.theta
    }

    /// `col(η_e, ζ_y - ζ_r, ζ_u)`.
    pub fn feedback_vector(&self) -> DVector<f64> {
        let n = self.x.len();
        let d = self.w.len();
        let mut z = DVector::zeros(d + 2 * n);
        z.rows_mut(0, d).copy_from(&self.eta_e);
        z.rows_mut(d, n).copy_from(&(&self.zeta_y - &self.zeta_r));
        z.rows_mut(d + n, n).copy_from(&self.zeta_u);
        z
    }

    pub fn input(&self) -> f64 {
        -(&self.k * self.feedback_vector())[0]
    }

    pub fn error(&self, plant: &LtiPlant, exo: &Exosystem) -> f64 {
        (&plant.c * &self.x)[0] - (&exo.c_r * &self.w)[0]
    }

    fn pack(&self) -> DVector<f64> {
        let parts = [&self.x, &self.w, &self.eta_e, &self.zeta_y, &self.zeta_u, &self.zeta_r];
        let len = parts.iter().map(|p| p.len()).sum();
        let mut s = DVector::zeros(len);
        let mut at = 0;
        for p in parts {
            s.rows_mut(at, p.len()).copy_from(p);
            at += p.len();
        }
        s
    }

    fn unpack(&mut self, s: &DVector<f64>) {
        let n = self.x.len();
        let d = self.w.len();
        let mut at = 0;
        for (part, len) in [
            (&mut self.x, n),
            (&mut self.w, d),
            (&mut self.eta_e, d),
            (&mut self.zeta_y, n),
            (&mut self.zeta_u, n),
            (&mut self.zeta_r, n),
        ] {
            part.copy_from(&s.rows(at, len));
            at += len;
        }
    }
}

/// Generator of the stacked flow `(x, w, η_e, ζ_y, ζ_u, ζ_r)` for fixed `(θ, K)`.
pub fn flow_matrix(
    plant: &LtiPlant,
    exo: &Exosystem,
    fp: &FilterParams,
    theta: &DVector<f64>,
    k: &RowDVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = plant.n();
    let d = exo.d();
    if theta.len() != d || k.len() != d + 2 * n || fp.n() != n {
        return Err(Error::dim("flow_matrix: inconsistent dimensions"));
    }
    let (x0, w0, e0, y0, u0, r0) = (0, n, n + d, n + 2 * d, 2 * n + 2 * d, 3 * n + 2 * d);
    let dim = 4 * n + 2 * d;
    let f = fp.f();
    let l = &fp.l;
    let g = internal_model_input(d);
    let c = &plant.c;
    let cr = &exo.c_r;
    // u = -K_η η_e - K_e (ζ_y - ζ_r) - K_u ζ_u as a row over the stacked state.
    let mut u_row = RowDVector::zeros(dim);
    u_row.columns_mut(e0, d).copy_from(&(-k.columns(0, d)));
    u_row.columns_mut(y0, n).copy_from(&(-k.columns(d, n)));
    u_row.columns_mut(r0, n).copy_from(&k.columns(d, n));
    u_row.columns_mut(u0, n).copy_from(&(-k.columns(d + n, n)));

    let mut m = DMatrix::zeros(dim, dim);
    m.view_mut((x0, x0), (n, n)).copy_from(&plant.a);
    {
        let mut rows = m.rows_mut(x0, n);
        rows += &plant.b * &u_row;
    }
    m.view_mut((w0, w0), (d, d)).copy_from(&exo.s);
    m.view_mut((e0, e0), (d, d)).copy_from(&companion(theta)?);
    m.view_mut((e0, x0), (d, n)).copy_from(&(&g * c));
    m.view_mut((e0, w0), (d, d)).copy_from(&(-(&g * cr)));
    m.view_mut((y0, y0), (n, n)).copy_from(&f);
    m.view_mut((y0, x0), (n, n)).copy_from(&(l * c));
    m.view_mut((u0, u0), (n, n)).copy_from(&f);
    {
        let mut rows = m.rows_mut(u0, n);
        rows += l * &u_row;
    }
    m.view_mut((r0, r0), (n, n)).copy_from(&f);
    m.view_mut((r0, w0), (n, d)).copy_from(&(l * cr));
    Ok(m)
}

/// One sample of the closed-loop trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub j: usize,
    pub e: f64,
    pub u: f64,
    pub y: f64,
    pub y_r: f64,
    pub theta: DVector<f64>,
}

/// Integrates the flow for `duration`, logging every point of the global
/// `tau_s` grid in `[t, t + duration)` (the closing point too when `last`).
pub fn flow(
    plant: &LtiPlant,
    exo: &Exosystem,
    fp: &FilterParams,
    state: &ClosedLoopState,
    duration: f64,
    h: f64,
    tau_s: f64,
    last: bool,
) -> Result<(ClosedLoopState, Vec<TraceRow>)> {
    let m = flow_matrix(plant, exo, fp, state.theta(), &state.k)?;
    let t0 = state.t;
    let tr = rk4_integrate(|_, s| &m * s, &state.pack(), t0, t0 + duration, h)?;
    let mut rows = Vec::new();
    let mut cur = state.clone();
    let steps = tr.len();
    for (i, (t, s)) in tr.times.iter().zip(&tr.states).enumerate() {
        let on_grid = ((t / tau_s).round() * tau_s - t).abs() < 0.5 * h.min(tau_s);
        if on_grid && (i + 1 < steps || last) {
            cur.unpack(s);
            let y = (&plant.c * &cur.x)[0];
            let y_r = (&exo.c_r * &cur.w)[0];
            rows.push(TraceRow {
                t: *t,
                j: cur.j,
                e: y - y_r,
                u: cur.input(),
                y,
                y_r,
                theta: cur.ident.theta.clone(),
            });
        }
    }
    cur.unpack(tr.last());
    cur.t = t0 + duration;
    cur.tau = state.tau + duration;
    Ok((cur, rows))
}

/// Gains for the dataset, memoized by the exact bit pattern of `θ`.
pub struct GainBank<'a> {
    ds: &'a Dataset,
    fp: &'a FilterParams,
    weights: Weights,
    filters: FilterReplay,
    samples: Vec<usize>,
    cache: HashMap<Vec<u64>, std::result::Result<SynthesisResult, String>>,
}

impl<'a> GainBank<'a> {
    pub fn new(ds: &'a Dataset, fp: &'a FilterParams, weights: Weights, tau_s: f64, t1: f64) -> Result<Self> {
        let filters = replay_filters(ds, fp)?;
        let samples = synthesis_samples(ds, tau_s, t1);
        Ok(Self {
            ds,
            fp,
            weights,
            filters,
            samples,
            cache: HashMap::new(),
        })
    }

    pub fn samples(&self) -> &[usize] {
        &self.samples
    }

    pub fn get(&mut self, theta: &DVector<f64>) -> Result<SynthesisResult> {
        let key: Vec<u64> = theta.iter().map(|v| v.to_bits()).collect();
        if !self.cache.contains_key(&key) {
            let r = synthesize(self.ds, &self.filters, self.fp, theta, &self.samples, &self.weights);
            let stored = match r {
                Ok(s) => Ok(s),
                Err(e) => {
                    // Structural failures are not cached as strings; they propagate as-is.
                    if matches!(e, Error::Dimension(_) | Error::InsufficientData { .. }) {
                        return Err(e);
                    }
                    Err(e.to_string())
                }
            };
            self.cache.insert(key.clone(), stored);
        }
        self.cache[&key].clone().map_err(Error::Synthesis)
    }

    pub fn distinct_syntheses(&self) -> usize {
        self.cache.len()
    }
}

/// Outcome of a jump.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord {
    pub j: usize,
    pub t: f64,
    pub theta: DVector<f64>,
    pub k: RowDVector<f64>,
    pub pe_metric: Option<f64>,
    pub cost: f64,
    pub margin: f64,
    pub care_residual: f64,
    pub p_norm: f64,
    /// Set when the synthesis for the identifier's proposal failed and the
    /// previous `(θ, K)` was kept.
    pub rejected: Option<String>,
}

impl JumpRecord {
    fn from_synthesis(j: usize, t: f64, s: &SynthesisResult, pe_metric: Option<f64>, cost: f64) -> Self {
        Self {
            j,
            t,
            theta: s.theta.clone(),
            k: s.k.clone(),
            pe_metric,
            cost,
            margin: s.stability_margin(),
            care_residual: s.care_residual,
            p_norm: crate::linalg::norm_inf(&s.p),
            rejected: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxJumps,
    Horizon,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::MaxJumps => "max_jumps",
            StopReason::Horizon => "horizon",
        }
    }
}

/// Everything recorded during a run. On a mid-run failure, `failure` holds the
/// error and the logs stop at the last completed segment.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub trace: Vec<TraceRow>,
    pub jumps: Vec<JumpRecord>,
    pub regressions: Vec<RegressionSample>,
    pub stop_reason: Option<StopReason>,
    pub final_state: ClosedLoopState,
    pub failure: Option<String>,
}

impl RunLog {
    pub fn final_theta(&self) -> &DVector<f64> {
        self.final_state.theta()
    }

    /// Mean `|e|` over trace samples with `t ≥ (1 - frac) t_end`.
    pub fn tail_mean_abs_error(&self, frac: f64) -> f64 {
        let t_end = self.trace.last().map_or(0.0, |r| r.t);
        let from = (1.0 - frac) * t_end;
        let tail: Vec<f64> = self.trace.iter().filter(|r| r.t >= from - 1e-9).map(|r| r.e.abs()).collect();
        if tail.is_empty() {
            return f64::NAN;
        }
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    pub fn max_abs_error_after(&self, t: f64) -> f64 {
        self.trace.iter().filter(|r| r.t >= t).map(|r| r.e.abs()).fold(0.0, f64::max)
    }

    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let d = self.final_state.w.len();
        let mut f = fs::File::create(path)?;
        let mut header: Vec<String> = ["t", "j", "e", "u", "y", "y_r"].iter().map(|s| s.to_string()).collect();
        header.extend((1..=d).map(|i| format!("theta_{i}")));
        writeln!(f, "{}", header.join(","))?;
        for r in &self.trace {
            let mut row = vec![format!("{:.16e}", r.t), r.j.to_string()];
            row.extend([r.e, r.u, r.y, r.y_r].iter().map(|v| format!("{v:.16e}")));
            row.extend(r.theta.iter().map(|v| format!("{v:.16e}")));
            writeln!(f, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn write_jumps_csv(&self, path: &Path) -> Result<()> {
        let d = self.final_state.w.len();
        let ng = self.final_state.k.len();
        let mut f = fs::File::create(path)?;
        let mut header = vec!["j".to_string(), "t".to_string()];
        header.extend((1..=d).map(|i| format!("theta_{i}")));
        header.extend((1..=ng).map(|i| format!("gain_{i}")));
        header.push("pe_metric".into());
        header.push("stop_reason".into());
        writeln!(f, "{}", header.join(","))?;
        let last = self.jumps.len().saturating_sub(1);
        for (i, r) in self.jumps.iter().enumerate() {
            let mut row = vec![r.j.to_string(), format!("{:.16e}", r.t)];
            row.extend(r.theta.iter().map(|v| format!("{v:.16e}")));
            row.extend(r.k.iter().map(|v| format!("{v:.16e}")));
            row.push(r.pe_metric.map_or("nan".into(), |m| format!("{m:.16e}")));
            let reason = if i == last {
                self.stop_reason.map_or("", |s| s.as_str())
            } else {
                ""
            };
            row.push(reason.into());
            writeln!(f, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Identifier jump plus gain refresh. `β = θᵀη_e - e`, which equals
/// `θ⋆ᵀη_e` once the loop has settled.
pub fn jump(state: &ClosedLoopState, plant: &LtiPlant, exo: &Exosystem, bank: &mut GainBank) -> (ClosedLoopState, RegressionSample, Option<SynthesisResult>, Option<String>) {
    let e = state.error(plant, exo);
    let theta = state.theta().clone();
    let sample = RegressionSample {
        alpha: state.eta_e.clone(),
        beta: theta.dot(&state.eta_e) - e,
    };
    let mut next = state.clone();
    next.ident = identifier::jump(&state.ident, &sample);
    next.tau = 0.0;
    next.j = state.j + 1;
    if next.ident.theta == theta {
        return (next, sample, None, None);
    }
    match bank.get(&next.ident.theta) {
        Ok(s) => {
            next.k = s.k.clone();
            (next, sample, Some(s), None)
        }
        Err(err) => {
            log::warn!("synthesis failed at θ = {:?}: {err}; keeping previous gain", next.ident.theta.as_slice());
            next.ident.theta = theta;
            (next, sample, None, Some(err.to_string()))
        }
    }
}

/// Runs the regulator from `x0` over `cfg.horizon`.
pub fn run(plant: &LtiPlant, exo: &Exosystem, ds: &Dataset, cfg: &RegulatorConfig, x0: &DVector<f64>) -> Result<RunLog> {
    cfg.validate()?;
    if x0.len() != plant.n() || exo.d() != cfg.theta0.len() {
        return Err(Error::dim("run: initial state or θ₀ inconsistent with plant/exosystem"));
    }
    let mut bank = GainBank::new(ds, &cfg.fp, cfg.weights, cfg.tau_s, cfg.t1)?;
    let ident = IdentifierState::new(cfg.theta0.clone(), cfg.mu, cfg.bbox.clone())?;
    let s0 = bank.get(&cfg.theta0)?;
    let mut state = ClosedLoopState::new(x0.clone(), exo.w0.clone(), ident, s0.k.clone());
    let mut log = RunLog {
        trace: Vec::new(),
        jumps: vec![JumpRecord::from_synthesis(0, 0.0, &s0, None, 0.0)],
        regressions: Vec::new(),
        stop_reason: None,
        final_state: state.clone(),
        failure: None,
    };
    let window = cfg.window();
    let eps = 1e-9 * cfg.horizon.max(1.0);

    while state.t < cfg.horizon - eps {
        let jumping = log.stop_reason.is_none() && state.j < cfg.n_i;
        let seg = if jumping {
            (cfg.t2 - state.tau).min(cfg.horizon - state.t)
        } else {
            cfg.horizon - state.t
        };
        let closing = state.t + seg >= cfg.horizon - eps;
        match flow(plant, exo, &cfg.fp, &state, seg, cfg.h, cfg.tau_s, closing) {
            Ok((next, rows)) => {
                state = next;
                log.trace.extend(rows);
            }
            Err(e) => {
                log.failure = Some(e.to_string());
                log.final_state = state;
                return Ok(log);
            }
        }
        if closing {
            break;
        }
        if jumping && state.tau >= cfg.t2 - eps {
            let prev = state.theta().clone();
            let (next, sample, synth, rejected) = jump(&state, plant, exo, &mut bank);
            state = next;
            log.regressions.push(sample);
            let pe = identifier::pe_metric(&log.regressions, cfg.mu, window);
            let cost = identifier::cost_j(&log.regressions, cfg.mu, state.theta());
            let mut rec = match &synth {
                Some(s) => JumpRecord::from_synthesis(state.j, state.t, s, pe, cost),
                None => {
                    let mut r = log.jumps.last().cloned().expect("initial record");
                    r.j = state.j;
                    r.t = state.t;
                    r.pe_metric = pe;
                    r.cost = cost;
                    r
                }
            };
            rec.rejected = rejected;
            log.jumps.push(rec);
            if (state.theta() - &prev).norm() < cfg.delta {
                log.stop_reason = Some(StopReason::Converged);
            } else if state.j >= cfg.n_i {
                log.stop_reason = Some(StopReason::MaxJumps);
            }
        }
    }
    if log.stop_reason.is_none() {
        log.stop_reason = Some(if state.j >= cfg.n_i { StopReason::MaxJumps } else { StopReason::Horizon });
    }
    log.final_state = state;
    Ok(log)
}
