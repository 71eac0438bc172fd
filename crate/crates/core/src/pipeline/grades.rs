//! Grade step of a period: per-domain RBIG + ES-MDA, then a univariate pass
//! on extreme values.

use nalgebra::DMatrix;

use crate::ensemble::{vars, Ensemble};
use crate::error::{Error, Result};
use crate::grid::{BlockSubset, GridSpec};
use crate::rbig::{self, MarginalMap};
use crate::rng;

use super::domains::{assimilate_field, gather, scatter};
use super::PeriodSettings;

/// A block-support grade observation with its observed domain.
#[derive(Clone, Debug, PartialEq)]
pub struct GradeObs {
    pub block: usize,
    pub domain: usize,
    pub grades: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradeSettings {
    pub factor_noise_sd: f64,
    pub min_domain_obs: usize,
    pub tail_pass: bool,
    pub extreme_percentile: f64,
    pub rbig_max_iterations: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradeUpdate {
    pub updated_domains: Vec<usize>,
    pub skipped_domains: Vec<usize>,
    /// Blocks touched by the tail pass, summed over domains and variables.
    pub tail_blocks: usize,
}

/// Most frequent label per block of `blocks`, ties to the lower index.
pub(crate) fn modal_at(ens: &Ensemble, blocks: &[usize], n_domains: usize) -> Result<Vec<usize>> {
    let d = ens.require_var(vars::DOMAIN)?;
    let mut out = Vec::with_capacity(blocks.len());
    let mut counts = vec![0usize; n_domains];
    for &b in blocks {
        counts.iter_mut().for_each(|c| *c = 0);
        for r in 0..ens.n_real() {
            let k = ens.values(r, d)[b] as usize;
            counts[k.min(n_domains - 1)] += 1;
        }
        let mut best = 0;
        for k in 1..n_domains {
            if counts[k] > counts[best] {
                best = k;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Empirical `p`-quantile with linear interpolation between order statistics.
pub fn empirical_quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = p * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

fn sorted_union(a: impl IntoIterator<Item = usize>, b: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = a.into_iter().chain(b).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Updates the grade variables `grade_vars` (ensemble indices, in
/// observation order) domain by domain.
///
/// The state of domain `d` is the neighbourhood blocks whose most probable
/// label is `d` plus the blocks of this period's `d` observations. Extreme
/// thresholds pool every `d` observation in `history`.
#[allow(clippy::too_many_arguments)]
pub fn update_grades_period(
    ens: &mut Ensemble,
    grid: &GridSpec,
    current: &[GradeObs],
    history: &[GradeObs],
    neighbourhood: &BlockSubset,
    grade_vars: &[usize],
    n_domains: usize,
    settings: &PeriodSettings,
    gs: &GradeSettings,
    seed: u64,
) -> Result<GradeUpdate> {
    let m = grade_vars.len();
    let nb = neighbourhood.blocks();
    let modal = modal_at(ens, nb, n_domains)?;
    let mut report = GradeUpdate::default();
    let n_real = ens.n_real();

    for d in 0..n_domains {
        let obs: Vec<&GradeObs> = current.iter().filter(|o| o.domain == d).collect();
        if obs.is_empty() {
            continue;
        }
        if obs.len() < gs.min_domain_obs {
            log::warn!(
                "skipping grade update for domain {d}: {} observations, need {}",
                obs.len(),
                gs.min_domain_obs
            );
            report.skipped_domains.push(d);
            continue;
        }
        let obs_blocks: Vec<usize> = obs.iter().map(|o| o.block).collect();
        let state = sorted_union(
            nb.iter().zip(&modal).filter(|(_, &k)| k == d).map(|(&b, _)| b),
            obs_blocks.iter().copied(),
        );
        let ns = state.len();

        // joint fit on realizations and observations
        let mut data = DMatrix::zeros(n_real * ns + obs.len(), m);
        for (j, &v) in grade_vars.iter().enumerate() {
            for r in 0..n_real {
                let vals = ens.values(r, v);
                for (k, &b) in state.iter().enumerate() {
                    data[(r * ns + k, j)] = vals[b];
                }
            }
            for (k, o) in obs.iter().enumerate() {
                data[(n_real * ns + k, j)] = o.grades[j];
            }
        }
        let (factors, transform) = rbig::fit_forward(&data, gs.rbig_max_iterations, rbig::default_tol(m))
            .map_err(|e| Error::Numerical(format!("grade transform for domain {d}: {e}")))?;
        let mut updated = factors.rows(0, n_real * ns).into_owned();
        for f in 0..m {
            let st = DMatrix::from_fn(n_real, ns, |r, k| factors[(r * ns + k, f)]);
            let o: Vec<f64> = (0..obs.len()).map(|k| factors[(n_real * ns + k, f)]).collect();
            let out = assimilate_field(
                grid,
                st,
                &state,
                &obs_blocks,
                o,
                gs.factor_noise_sd,
                settings,
                rng::derive_seed(seed, &[rng::tag::GRADES, d as u64, f as u64]),
            )?;
            for r in 0..n_real {
                for k in 0..ns {
                    updated[(r * ns + k, f)] = out.state[(r, k)];
                }
            }
        }
        let back = transform.inverse(&updated)?;
        for (j, &v) in grade_vars.iter().enumerate() {
            for r in 0..n_real {
                let vals = ens.values_mut(r, v);
                for (k, &b) in state.iter().enumerate() {
                    vals[b] = back[(r * ns + k, j)].max(0.0);
                }
            }
        }

        if gs.tail_pass {
            let pooled: Vec<&GradeObs> = history.iter().filter(|o| o.domain == d).collect();
            for (j, &v) in grade_vars.iter().enumerate() {
                let values: Vec<f64> = pooled.iter().map(|o| o.grades[j]).collect();
                let tau = empirical_quantile(&values, gs.extreme_percentile);
                let tail: Vec<&GradeObs> = obs.iter().copied().filter(|o| o.grades[j] > tau).collect();
                if tail.is_empty() {
                    continue;
                }
                let mean = ens.mean(v);
                let tail_blocks: Vec<usize> = tail.iter().map(|o| o.block).collect();
                let blocks = sorted_union(
                    state.iter().copied().filter(|&b| mean[b] > tau),
                    tail_blocks.iter().copied(),
                );
                report.tail_blocks += blocks.len();
                let st = gather(ens, v, &blocks);
                let pool: Vec<f64> = st.iter().copied().chain(tail.iter().map(|o| o.grades[j])).collect();
                let map = MarginalMap::fit(&pool);
                if map.is_constant() {
                    continue;
                }
                let z = st.map(|x| map.forward(x));
                let zo: Vec<f64> = tail.iter().map(|o| map.forward(o.grades[j])).collect();
                let out = assimilate_field(
                    grid,
                    z,
                    &blocks,
                    &tail_blocks,
                    zo,
                    gs.factor_noise_sd,
                    settings,
                    rng::derive_seed(seed, &[rng::tag::GRADES, (n_domains + d) as u64, j as u64]),
                )?;
                scatter(ens, v, &blocks, &out.state.map(|z| map.inverse(z).max(0.0)));
            }
        }
        report.updated_domains.push(d);
    }
    Ok(report)
}
