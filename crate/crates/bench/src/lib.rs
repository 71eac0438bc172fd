//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rapidpgs::config::{Config, EXAMPLE_TOML};
use rapidpgs::pipeline;
use rapidpgs::synthetic::{self, SyntheticSpec};
use rapidpgs::variogram::StructureKind;
use rapidpgs::{Ensemble, GridSpec, ObservationSet, VariogramModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` points scattered over a square of side `extent` at z = 0.
pub fn scatter(n: usize, extent: f64, seed: u64) -> Vec<[f64; 3]> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| [r.random_range(0.0..extent), r.random_range(0.0..extent), 0.0])
        .collect()
}

pub fn spherical(range: f64) -> VariogramModel {
    VariogramModel::isotropic(StructureKind::Spherical, range, 1.0).unwrap()
}

/// The bundled synthetic configuration shrunk to an `nx` by `ny` grid.
pub fn config(nx: usize, ny: usize, n_real: usize) -> Config {
    let mut cfg = Config::from_toml(EXAMPLE_TOML).unwrap();
    cfg.grid = GridSpec::new([nx, ny, 1], [5.0, 5.0, 5.0], [0.0, 0.0, 347.5]).unwrap();
    cfg.prior.n_realizations = n_real;
    cfg
}

pub struct Case {
    pub cfg: Config,
    pub observations: ObservationSet,
    pub prior: Ensemble,
}

/// Synthetic truth, observations and a prior ensemble for `cfg`.
pub fn case(cfg: Config) -> Case {
    let spec = SyntheticSpec::from_config(&cfg).unwrap();
    let truth = synthetic::generate_truth(&spec).unwrap();
    let drill = synthetic::sample_drillholes(&truth, spec.drill_fraction, spec.seed).unwrap();
    let observations =
        synthetic::sample_observations(&truth, spec.sampling_fraction, spec.n_periods, spec.seed).unwrap();
    let prior = pipeline::build_prior(&cfg, &drill, cfg.pipeline.rng_seed).unwrap();
    Case {
        cfg,
        observations,
        prior,
    }
}
