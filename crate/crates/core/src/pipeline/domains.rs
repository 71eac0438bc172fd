//! Domain step of a period: Gibbs on new labels, ES-MDA on both GRFs,
//! threshold search, re-truncation.

use nalgebra::DMatrix;

use crate::ensemble::{vars, Ensemble};
use crate::error::Result;
use crate::esmda::{self, AssimilationProblem, Localization, MdaSchedule};
use crate::gibbs::GibbsSampler;
use crate::grid::{BlockSubset, GridSpec};
use crate::kriging::NeighborSearch;
use crate::rng;
use crate::threshold::{optimise_thresholds, ThresholdSearchSpace};
use crate::truncation::TruncationRule;
use crate::variogram::VariogramModel;

use super::PeriodSettings;

/// Labelled points of one period, already on block centroids.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelledBlocks {
    pub blocks: Vec<usize>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainUpdate {
    pub rule: TruncationRule,
    /// Gibbs values used as GRF observations, per axis.
    pub grf_observations: [Vec<f64>; 2],
    pub mse_before: [f64; 2],
    pub mse_after: [f64; 2],
    pub score_before: Option<f64>,
    pub score_after: Option<f64>,
}

/// `n_real x blocks.len()` matrix of one variable.
pub(crate) fn gather(ens: &Ensemble, var: usize, blocks: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(ens.n_real(), blocks.len(), |r, j| ens.values(r, var)[blocks[j]])
}

pub(crate) fn scatter(ens: &mut Ensemble, var: usize, blocks: &[usize], m: &DMatrix<f64>) {
    for r in 0..ens.n_real() {
        let v = ens.values_mut(r, var);
        for (j, &b) in blocks.iter().enumerate() {
            v[b] = m[(r, j)];
        }
    }
}

/// ES-MDA of one state variable over `state_blocks`; the forward model reads
/// the state at `obs_blocks` (all inside `state_blocks`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn assimilate_field(
    grid: &GridSpec,
    state: DMatrix<f64>,
    state_blocks: &[usize],
    obs_blocks: &[usize],
    observations: Vec<f64>,
    error_sd: f64,
    settings: &PeriodSettings,
    seed: u64,
) -> Result<esmda::MdaOutcome> {
    let cols: Vec<usize> = obs_blocks
        .iter()
        .map(|b| state_blocks.binary_search(b).expect("observation block inside the state"))
        .collect();
    let forward = |s: &DMatrix<f64>| Ok(s.select_columns(cols.iter()));
    let problem = AssimilationProblem {
        predictions: forward(&state)?,
        state,
        error_sd: vec![error_sd; observations.len()],
        observations,
        localization: Some(Localization {
            state_locations: state_blocks.iter().map(|&b| grid.centroid(b)).collect(),
            obs_locations: obs_blocks.iter().map(|&b| grid.centroid(b)).collect(),
            radius: settings.localization_radius,
        }),
    };
    let schedule = MdaSchedule::constant(settings.n_assimilations)?;
    esmda::mda_update(problem, &schedule, forward, seed)
}

/// Re-truncates `blocks` of every realization under `rule`.
pub fn retruncate(ens: &mut Ensemble, rule: &TruncationRule, blocks: impl Iterator<Item = usize> + Clone) -> Result<()> {
    let g1 = ens.require_var(vars::G1)?;
    let g2 = ens.require_var(vars::G2)?;
    let d = ens.require_var(vars::DOMAIN)?;
    for real in ens.realizations_mut() {
        for b in blocks.clone() {
            real[d][b] = rule.truncate(real[g1][b], real[g2][b]) as f64;
        }
    }
    Ok(())
}

/// `(g1, g2)` of every realization at `blocks`.
pub fn grf_at(ens: &Ensemble, blocks: &[usize]) -> Result<Vec<Vec<(f64, f64)>>> {
    let g1 = ens.require_var(vars::G1)?;
    let g2 = ens.require_var(vars::G2)?;
    Ok((0..ens.n_real())
        .map(|r| {
            let (a, b) = (ens.values(r, g1), ens.values(r, g2));
            blocks.iter().map(|&k| (a[k], b[k])).collect()
        })
        .collect())
}

/// Updates G1, G2 and the domain labels over `neighbourhood`.
///
/// `history` holds every labelled observation up to and including this
/// period and is what the thresholds are scored against; `optimise` turns
/// the threshold search on for this period.
#[allow(clippy::too_many_arguments)]
pub fn update_domains_period(
    ens: &mut Ensemble,
    grid: &GridSpec,
    current: &LabelledBlocks,
    history: &LabelledBlocks,
    neighbourhood: &BlockSubset,
    prior_rule: &TruncationRule,
    rule: &TruncationRule,
    variograms: [&VariogramModel; 2],
    settings: &PeriodSettings,
    optimise: bool,
    seed: u64,
) -> Result<DomainUpdate> {
    let locs: Vec<[f64; 3]> = current.blocks.iter().map(|&b| grid.centroid(b)).collect();
    let sampler = GibbsSampler::new(&locs, &current.labels, prior_rule, variograms, NeighborSearch::default())?;
    let gibbs = sampler.run(settings.gibbs_iterations, rng::derive_seed(seed, &[rng::tag::GIBBS]));
    // The noise SD enters as the ES-MDA observation error; the perturbed
    // copies drawn there play the role of logging uncertainty.
    let observed = gibbs.values;

    let nb = neighbourhood.blocks();
    let mut mse_before = [0.0; 2];
    let mut mse_after = [0.0; 2];
    for (axis, name) in [vars::G1, vars::G2].into_iter().enumerate() {
        let var = ens.require_var(name)?;
        let out = assimilate_field(
            grid,
            gather(ens, var, nb),
            nb,
            &current.blocks,
            observed[axis].clone(),
            settings.grf_obs_noise_sd,
            settings,
            rng::derive_seed(seed, &[rng::tag::ESMDA, axis as u64]),
        )?;
        mse_before[axis] = out.mse_before;
        mse_after[axis] = out.mse_after;
        scatter(ens, var, nb, &out.state);
    }

    let (mut new_rule, mut score_before, mut score_after) = (rule.clone(), None, None);
    if optimise && !history.blocks.is_empty() {
        let grf = grf_at(ens, &history.blocks)?;
        let mut space = ThresholdSearchSpace::around(
            prior_rule,
            settings.threshold_half_width,
            settings.threshold_budget,
            rng::derive_seed(seed, &[rng::tag::THRESHOLD]),
        );
        // keep the current thresholds inside the box
        for (b, v) in space.bounds.iter_mut().zip(rule.threshold_values()) {
            b.0 = b.0.min(v);
            b.1 = b.1.max(v);
        }
        let out = optimise_thresholds(&grf, &history.labels, rule, &space, settings.weights)?;
        score_before = Some(out.prior_score);
        score_after = Some(out.score);
        new_rule = out.rule;
    }
    retruncate(ens, &new_rule, nb.iter().copied())?;
    Ok(DomainUpdate {
        rule: new_rule,
        grf_observations: observed,
        mse_before,
        mse_after,
        score_before,
        score_after,
    })
}
