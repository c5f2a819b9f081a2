#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regulab::config::ExperimentConfig;
use regulab::model::{check_structure, FilterParams, LtiPlant};
use regulab::sim::{collect_offline, Dataset, ExcitationSpec};

pub struct Reference {
    pub cfg: ExperimentConfig,
    pub x0_data: DVector<f64>,
    pub x0_run: DVector<f64>,
    pub ds: Dataset,
}

pub fn reference() -> Reference {
    let cfg = ExperimentConfig::reference();
    let x0_data = cfg.data_initial_state(cfg.seed);
    let x0_run = cfg.run_initial_state(cfg.seed);
    let ds = collect_offline(
        &cfg.plant().unwrap(),
        &x0_data,
        &cfg.excitation().unwrap(),
        cfg.sampling.t_star,
        cfg.sampling.internal_h,
    )
    .unwrap();
    Reference { cfg, x0_data, x0_run, ds }
}

/// Random controllable/observable plant with spectral abscissa at most 0.5.
pub fn random_plant(rng: &mut ChaCha8Rng, n: usize) -> LtiPlant {
    loop {
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let abscissa = regulab::linalg::spectral_abscissa(&a);
        if abscissa > 0.5 {
            a -= DMatrix::identity(n, n) * (abscissa - 0.5);
        }
        let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let c = RowDVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let p = LtiPlant::new(a, b, c).unwrap();
        let s = check_structure(&p);
        if s.controllable && s.observable {
            return p;
        }
    }
}

/// Distinct negative poles at least 0.3 apart, nonzero gains.
pub fn random_filter(rng: &mut ChaCha8Rng, n: usize) -> FilterParams {
    loop {
        let lambda: DVector<f64> = DVector::from_fn(n, |_, _| -rng.random_range(0.5..4.0));
        let apart = (0..n).all(|i| (i + 1..n).all(|j| (lambda[i] - lambda[j]).abs() > 0.3));
        if !apart {
            continue;
        }
        let l = DVector::from_fn(n, |_, _| {
            let v: f64 = rng.random_range(0.5..3.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        });
        return FilterParams::new(lambda, l).unwrap();
    }
}

pub fn random_excitation(rng: &mut ChaCha8Rng) -> ExcitationSpec {
    let amplitudes = (0..4).map(|_| rng.random_range(0.5..3.0)).collect();
    ExcitationSpec::new(amplitudes, rng.random_range(1.0..4.0)).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
