//! Fixed-step simulation of the plant, the exosystem and the filters, and
//! recording of the offline input/output dataset.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Exosystem, LtiPlant};

/// Internal integration step used everywhere unless configured otherwise.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Dense state trajectory on a fixed grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// One classical Runge-Kutta step.
pub fn rk4_step<F>(f: &mut F, t: f64, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * h, &(x + &k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(x + &k2 * (0.5 * h)));
    let k4 = f(t + h, &(x + &k3 * h));
    x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
}

/// Number of full steps of size `h` in `[t0, t1]` and the length of the
/// trailing partial step (zero when `h` divides the span).
fn step_plan(t0: f64, t1: f64, h: f64) -> (usize, f64) {
    let span = t1 - t0;
    let ratio = span / h;
    let mut full = ratio.round();
    if (ratio - full).abs() > 1e-9 * ratio.max(1.0) {
        full = ratio.floor();
    }
    let rem = span - full * h;
    if rem.abs() <= 1e-12 * span.max(1.0) {
        (full as usize, 0.0)
    } else {
        (full as usize, rem)
    }
}

/// Integrates `ẋ = f(t, x)` from `t0` to `t1` with step `h`. The grid holds
/// `t0 + k h`; if `h` does not divide the span the last step is shortened to
/// land on `t1`.
pub fn rk4_integrate<F>(mut f: F, x0: &DVector<f64>, t0: f64, t1: f64, h: f64) -> Result<Trajectory>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    if !(h > 0.0) || !(t1 > t0) {
        return Err(Error::dim(format!("rk4: need h > 0 and t1 > t0 (h={h}, [{t0}, {t1}])")));
    }
    let (full, rem) = step_plan(t0, t1, h);
    let mut times = Vec::with_capacity(full + 2);
    let mut states = Vec::with_capacity(full + 2);
    times.push(t0);
    states.push(x0.clone());
    let mut x = x0.clone();
    for k in 0..full {
        let t = t0 + k as f64 * h;
        x = rk4_step(&mut f, t, &x, h);
        let t_next = if k + 1 == full && rem == 0.0 { t1 } else { t0 + (k + 1) as f64 * h };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t: t_next });
        }
        times.push(t_next);
        states.push(x.clone());
    }
    if rem > 0.0 {
        let t = t0 + full as f64 * h;
        x = rk4_step(&mut f, t, &x, rem);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t: t1 });
        }
        times.push(t1);
        states.push(x);
    }
    Ok(Trajectory { times, states })
}

/// Multi-sine excitation `Σ_k a_k sin(k ω₁ t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationSpec {
    pub amplitudes: Vec<f64>,
    pub omega1: f64,
}

impl Default for ExcitationSpec {
    fn default() -> Self {
        Self {
            amplitudes: vec![1.0, 2.0, 3.0, 4.0],
            omega1: 5.0,
        }
    }
}

impl ExcitationSpec {
    pub fn new(amplitudes: Vec<f64>, omega1: f64) -> Result<Self> {
        if !(omega1 > 0.0) || amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config {
                field: "excitation".into(),
                message: "need finite amplitudes and omega1 > 0".into(),
            });
        }
        Ok(Self { amplitudes, omega1 })
    }
}

pub fn excitation(spec: &ExcitationSpec, t: f64) -> f64 {
    spec.amplitudes
        .iter()
        .enumerate()
        .map(|(i, a)| a * ((i + 1) as f64 * spec.omega1 * t).sin())
        .sum()
}

/// Uniformly sampled input/output record.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub t0: f64,
    pub dt: f64,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(t0: f64, dt: f64, u: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::dim(format!("dataset: dt must be positive, got {dt}")));
        }
        if u.len() != y.len() || u.len() < 2 {
            return Err(Error::dim(format!(
                "dataset: need len(u) = len(y) >= 2, got {} and {}",
                u.len(),
                y.len()
            )));
        }
        Ok(Self { t0, dt, u, y })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    /// Keeps every `step`-th sample.
    pub fn decimate(&self, step: usize) -> Result<Dataset> {
        let step = step.max(1);
        let u: Vec<f64> = self.u.iter().step_by(step).cloned().collect();
        let y: Vec<f64> = self.y.iter().step_by(step).cloned().collect();
        Dataset::new(self.t0, self.dt * step as f64, u, y)
    }

    /// First `len` samples.
    pub fn truncate(&self, len: usize) -> Result<Dataset> {
        Dataset::new(self.t0, self.dt, self.u[..len.min(self.len())].to_vec(), self.y[..len.min(self.len())].to_vec())
    }

    /// Linear interpolation of `(u, y)` at time `t`, clamped to the record.
    pub fn interpolate(&self, t: f64) -> (f64, f64) {
        let s = (t - self.t0) / self.dt;
        let last = self.len() - 1;
        if s <= 0.0 {
            return (self.u[0], self.y[0]);
        }
        if s >= last as f64 {
            return (self.u[last], self.y[last]);
        }
        let mut i = s.floor() as usize;
        // Grid points computed as t0 + k dt can land a hair below k.
        if s - i as f64 > 1.0 - 1e-9 {
            i += 1;
            if i >= last {
                return (self.u[last], self.y[last]);
            }
        }
        let a = (s - i as f64).max(0.0);
        (
            self.u[i] + a * (self.u[i + 1] - self.u[i]),
            self.y[i] + a * (self.y[i + 1] - self.y[i]),
        )
    }

    /// Cubic Lagrange interpolation of `(u, y)` through the four grid points
    /// around `t` (stencil shifted inward at the ends), clamped to the record.
    /// Exact on grid points; error `O(dt⁴)` in between.
    pub fn interpolate_cubic(&self, t: f64) -> (f64, f64) {
        let len = self.len();
        if len < 4 {
            return self.interpolate(t);
        }
        let s = (t - self.t0) / self.dt;
        let last = (len - 1) as f64;
        if s <= 0.0 {
            return (self.u[0], self.y[0]);
        }
        if s >= last {
            return (self.u[len - 1], self.y[len - 1]);
        }
        let k = s.round();
        if (s - k).abs() < 1e-9 {
            let k = k as usize;
            return (self.u[k], self.y[k]);
        }
        let i = s.floor() as usize;
        let start = i.saturating_sub(1).min(len - 4);
        let mut out = (0.0, 0.0);
        for j in start..start + 4 {
            let mut w = 1.0;
            for m in start..start + 4 {
                if m != j {
                    w *= (s - m as f64) / (j as f64 - m as f64);
                }
            }
            out.0 += w * self.u[j];
            out.1 += w * self.y[j];
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        writeln!(f, "t,u,y")?;
        for i in 0..self.len() {
            writeln!(f, "{:.16e},{:.16e},{:.16e}", self.time(i), self.u[i], self.y[i])?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let name = path.display().to_string();
        let perr = |message: String| Error::Parse { path: name.clone(), message };
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "t,u,y" => {}
            other => return Err(perr(format!("expected header `t,u,y`, found {other:?}"))),
        }
        let (mut t, mut u, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(perr(format!("line {}: expected 3 fields", ln + 2)));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| perr(format!("line {}: {e}", ln + 2)))
            };
            t.push(parse(fields[0])?);
            u.push(parse(fields[1])?);
            y.push(parse(fields[2])?);
        }
        if t.len() < 2 {
            return Err(perr("need at least two samples".into()));
        }
        let dt = t[1] - t[0];
        for w in t.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1.0) {
                return Err(perr("sampling grid is not uniform".into()));
            }
        }
        Dataset::new(t[0], dt, u, y)
    }
}

/// Runs the plant open loop under the excitation and records `(u, y)` on the
/// integration grid `t = 0, dt, …, t_star`.
pub fn collect_offline(
    plant: &LtiPlant,
    x0: &DVector<f64>,
    spec: &ExcitationSpec,
    t_star: f64,
    dt: f64,
) -> Result<Dataset> {
    if x0.len() != plant.n() {
        return Err(Error::dim(format!("x0 has {} entries, plant has n = {}", x0.len(), plant.n())));
    }
    let traj = rk4_integrate(
        |t, x| &plant.a * x + &plant.b * excitation(spec, t),
        x0,
        0.0,
        t_star,
        dt,
    )?;
    let u = traj.times.iter().map(|&t| excitation(spec, t)).collect();
    let y = traj.states.iter().map(|x| (&plant.c * x)[0]).collect();
    // The grid may end with a shortened step; the record keeps the uniform part.
    let ds = Dataset::new(0.0, dt, u, y)?;
    let uniform = ((t_star / dt) + 1e-9).floor() as usize + 1;
    ds.truncate(uniform)
}

/// Exosystem trajectory on a fixed grid.
#[derive(Debug, Clone)]
pub struct ExoTrajectory {
    pub times: Vec<f64>,
    pub w: Vec<DVector<f64>>,
    pub y_r: Vec<f64>,
}

pub fn simulate_exosystem(exo: &Exosystem, t1: f64, dt: f64) -> Result<ExoTrajectory> {
    let traj = rk4_integrate(|_, w| &exo.s * w, &exo.w0, 0.0, t1, dt)?;
    let y_r = traj.states.iter().map(|w| (&exo.c_r * w)[0]).collect();
    Ok(ExoTrajectory {
        times: traj.times,
        w: traj.states,
        y_r,
    })
}

/// Initial state drawn componentwise from `U[-1, 1]`, reproducible from `seed`.
pub fn random_initial_state(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0))
}
