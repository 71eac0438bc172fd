//! Ensemble smoother with multiple data assimilation and Gaspari-Cohn
//! covariance localization.

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

/// Relative diagonal jitter on the innovation covariance.
const GAIN_JITTER: f64 = 1e-8;

/// Gaspari-Cohn fifth-order compactly supported correlation at distance `d`
/// for localization radius `l`; zero from `d = 2l` on.
pub fn gaspari_cohn(d: f64, l: f64) -> f64 {
    let r = d.abs() / l;
    if r >= 2.0 {
        0.0
    } else if r <= 1.0 {
        let r2 = r * r;
        let r3 = r2 * r;
        -0.25 * r3 * r2 + 0.5 * r2 * r2 + 0.625 * r3 - 5.0 / 3.0 * r2 + 1.0
    } else {
        let r2 = r * r;
        let r3 = r2 * r;
        r3 * r2 / 12.0 - 0.5 * r2 * r2 + 0.625 * r3 + 5.0 / 3.0 * r2 - 5.0 * r + 4.0 - 2.0 / (3.0 * r)
    }
    .clamp(0.0, 1.0)
}

/// Inflation coefficients with `sum(1 / alpha) = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct MdaSchedule {
    alphas: Vec<f64>,
}

impl MdaSchedule {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::InvalidInput("MDA schedule needs at least one assimilation".into()));
        }
        if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidInput(format!("inflation coefficient {a} must be > 0")));
        }
        let s: f64 = alphas.iter().map(|a| 1.0 / a).sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "inflation coefficients must satisfy sum(1/alpha) = 1, got {s}"
            )));
        }
        Ok(MdaSchedule { alphas })
    }

    /// `alpha_i = n` for all `n` assimilations.
    pub fn constant(n: usize) -> Result<Self> {
        Self::new(vec![n as f64; n])
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Localization {
    pub state_locations: Vec<[f64; 3]>,
    pub obs_locations: Vec<[f64; 3]>,
    pub radius: f64,
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl Localization {
    /// State-observation and observation-observation taper matrices.
    fn weights(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let ns = self.state_locations.len();
        let no = self.obs_locations.len();
        let yd = DMatrix::from_fn(ns, no, |i, j| {
            gaspari_cohn(distance(self.state_locations[i], self.obs_locations[j]), self.radius)
        });
        let dd = DMatrix::from_fn(no, no, |i, j| {
            gaspari_cohn(distance(self.obs_locations[i], self.obs_locations[j]), self.radius)
        });
        (yd, dd)
    }
}

/// One assimilation problem: `state` is `n_real x n_state`, `predictions`
/// is `n_real x n_obs`.
#[derive(Clone, Debug, PartialEq)]
pub struct AssimilationProblem {
    pub state: DMatrix<f64>,
    pub predictions: DMatrix<f64>,
    pub observations: Vec<f64>,
    pub error_sd: Vec<f64>,
    pub localization: Option<Localization>,
}

impl AssimilationProblem {
    pub fn validate(&self) -> Result<()> {
        let n = self.state.nrows();
        let no = self.observations.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!("ES-MDA needs at least 2 realizations, got {n}")));
        }
        if self.predictions.nrows() != n || self.predictions.ncols() != no || self.error_sd.len() != no {
            return Err(Error::InvalidInput(format!(
                "dimension mismatch: state {}x{}, predictions {}x{}, {} observations, {} error SDs",
                n,
                self.state.ncols(),
                self.predictions.nrows(),
                self.predictions.ncols(),
                no,
                self.error_sd.len()
            )));
        }
        if let Some(s) = self.error_sd.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!("observation error SD {s} must be > 0")));
        }
        if let Some(loc) = &self.localization {
            if loc.state_locations.len() != self.state.ncols() || loc.obs_locations.len() != no {
                return Err(Error::InvalidInput("localization locations do not match problem size".into()));
            }
            if !(loc.radius > 0.0) {
                return Err(Error::InvalidInput(format!("localization radius {} must be > 0", loc.radius)));
            }
        }
        Ok(())
    }
}

fn anomalies(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = m.row_mean();
    let mut a = m.clone();
    for mut row in a.row_iter_mut() {
        row -= &mean;
    }
    a
}

fn gain_with(
    problem: &AssimilationProblem,
    alpha: f64,
    taper: Option<&(DMatrix<f64>, DMatrix<f64>)>,
) -> Result<DMatrix<f64>> {
    let n = problem.state.nrows() as f64;
    let a = anomalies(&problem.state);
    let d = anomalies(&problem.predictions);
    let mut c_yd = a.tr_mul(&d) / (n - 1.0);
    let mut c_dd = d.tr_mul(&d) / (n - 1.0);
    if c_yd.iter().chain(c_dd.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite ensemble covariance".into()));
    }
    if let Some((yd, dd)) = taper {
        c_yd.component_mul_assign(yd);
        c_dd.component_mul_assign(dd);
    }
    let no = problem.observations.len();
    for k in 0..no {
        c_dd[(k, k)] += alpha * problem.error_sd[k] * problem.error_sd[k];
    }
    let mean_diag = (0..no).map(|k| c_dd[(k, k)]).sum::<f64>() / no.max(1) as f64;
    for k in 0..no {
        c_dd[(k, k)] += GAIN_JITTER * mean_diag;
    }
    let ch = Cholesky::new(c_dd)
        .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?;
    // K = C_yd S^-1  <=>  S K^T = C_yd^T
    let kt = ch.solve(&c_yd.transpose());
    Ok(kt.transpose())
}

/// Localized Kalman gain `rho_yd . C_yd (rho_dd . C_dd + alpha C_d)^-1`,
/// `n_state x n_obs`.
pub fn kalman_gain(problem: &AssimilationProblem, alpha: f64) -> Result<DMatrix<f64>> {
    problem.validate()?;
    let taper = problem.localization.as_ref().map(Localization::weights);
    gain_with(problem, alpha, taper.as_ref())
}

/// `state_j += gain (perturbed_obs_j - predictions_j)` for every realization.
pub fn assimilate_once(
    state: &mut DMatrix<f64>,
    gain: &DMatrix<f64>,
    perturbed_obs: &DMatrix<f64>,
    predictions: &DMatrix<f64>,
) -> Result<()> {
    if perturbed_obs.shape() != predictions.shape()
        || gain.nrows() != state.ncols()
        || gain.ncols() != predictions.ncols()
        || state.nrows() != predictions.nrows()
    {
        return Err(Error::InvalidInput("dimension mismatch in ensemble update".into()));
    }
    let innovation = perturbed_obs - predictions;
    state.gemm(1.0, &innovation, &gain.transpose(), 1.0);
    Ok(())
}

/// Observations plus independent `N(0, alpha * sd^2)` noise per realization.
pub fn perturb_observations(
    observations: &[f64],
    error_sd: &[f64],
    alpha: f64,
    n_real: usize,
    seed: u64,
) -> DMatrix<f64> {
    let mut r = rng::stream(seed, &[rng::tag::ESMDA]);
    let scale = alpha.sqrt();
    let mut m = DMatrix::zeros(n_real, observations.len());
    for j in 0..n_real {
        for (k, (&o, &sd)) in observations.iter().zip(error_sd).enumerate() {
            let e: f64 = r.sample(StandardNormal);
            m[(j, k)] = o + scale * sd * e;
        }
    }
    m
}

/// Mean squared error of the ensemble-mean prediction.
pub fn prediction_mse(predictions: &DMatrix<f64>, observations: &[f64]) -> f64 {
    let mean = predictions.row_mean();
    mean.iter()
        .zip(observations)
        .map(|(p, o)| (p - o).powi(2))
        .sum::<f64>()
        / observations.len().max(1) as f64
}

#[derive(Clone, Debug)]
pub struct MdaOutcome {
    pub state: DMatrix<f64>,
    pub predictions: DMatrix<f64>,
    pub mse_before: f64,
    pub mse_after: f64,
}

/// Runs the schedule: each cycle recomputes predictions through `forward`,
/// draws fresh perturbations with inflated error, and updates the state.
pub fn mda_update(
    problem: AssimilationProblem,
    schedule: &MdaSchedule,
    mut forward: impl FnMut(&DMatrix<f64>) -> Result<DMatrix<f64>>,
    seed: u64,
) -> Result<MdaOutcome> {
    problem.validate()?;
    let taper = problem.localization.as_ref().map(Localization::weights);
    let mse_before = prediction_mse(&problem.predictions, &problem.observations);
    let mut p = problem;
    let n_real = p.state.nrows();
    for (cycle, &alpha) in schedule.alphas().iter().enumerate() {
        if cycle > 0 {
            p.predictions = forward(&p.state)?;
        }
        let gain = gain_with(&p, alpha, taper.as_ref())?;
        let d = perturb_observations(
            &p.observations,
            &p.error_sd,
            alpha,
            n_real,
            rng::derive_seed(seed, &[cycle as u64]),
        );
        assimilate_once(&mut p.state, &gain, &d, &p.predictions)?;
    }
    let predictions = forward(&p.state)?;
    let mse_after = prediction_mse(&predictions, &p.observations);
    if mse_after > mse_before {
        log::warn!("ES-MDA increased prediction MSE at observations: {mse_before:.6} -> {mse_after:.6}");
    }
    Ok(MdaOutcome {
        state: p.state,
        predictions,
        mse_before,
        mse_after,
    })
}
