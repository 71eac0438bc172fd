//! Prior ensembles: pluri-Gaussian domains, then grades simulated as
//! independent factors and mapped back through per-domain RBIG transforms.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::config::Config;
use crate::ensemble::{vars, Ensemble};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::gsim::{self, DomainDatum, PriorParams, SgsParams};
use crate::kriging::NeighborSearch;
use crate::observations::ObservationSet;
use crate::rbig::{self, RbigTransform};
use crate::rng;
use crate::variogram::VariogramModel;

/// Domain and grade prior from `cfg`, conditioned on `data` (labels and,
/// when configured, grades).
pub fn build_prior(cfg: &Config, data: &ObservationSet, seed: u64) -> Result<Ensemble> {
    let rule = cfg.rule.build()?;
    let labelled: Vec<DomainDatum> = data
        .records
        .iter()
        .filter_map(|r| {
            r.domain.map(|domain| DomainDatum {
                location: r.location,
                domain,
            })
        })
        .collect();
    let params = PriorParams {
        n_real: cfg.prior.n_realizations,
        gibbs_iterations: cfg.pipeline.gibbs_iterations,
        sgs: sgs_params(cfg),
        gibbs_search: NeighborSearch::default(),
    };
    let mut ens = gsim::simulate_prior_ensemble(
        &cfg.grid,
        &labelled,
        [&cfg.variograms.g1, &cfg.variograms.g2],
        &rule,
        &params,
        seed,
    )?;
    let variables = cfg.grade_variables();
    if !variables.is_empty() {
        simulate_grade_prior(
            &mut ens,
            &cfg.grid,
            data,
            &variables,
            rule.n_domains(),
            cfg.grade_factor_variogram()?,
            &params.sgs,
            cfg.pipeline.rbig_max_iterations,
            seed,
        )?;
    }
    ens.quantize_to_storage();
    Ok(ens)
}

fn sgs_params(cfg: &Config) -> SgsParams {
    SgsParams {
        max_data: cfg.prior.max_data,
        max_simulated: cfg.prior.max_simulated,
        ..SgsParams::default()
    }
}

/// Appends one grid per grade variable to `ens`.
///
/// Each domain with at least `10 m` complete samples gets its own RBIG
/// transform; the others share one fitted on all samples.
#[allow(clippy::too_many_arguments)]
pub fn simulate_grade_prior(
    ens: &mut Ensemble,
    grid: &GridSpec,
    data: &ObservationSet,
    variables: &[String],
    n_domains: usize,
    factor_variogram: &VariogramModel,
    sgs: &SgsParams,
    rbig_max_iterations: usize,
    seed: u64,
) -> Result<()> {
    let m = variables.len();
    let cols: Vec<usize> = variables
        .iter()
        .map(|v| {
            data.variables
                .iter()
                .position(|x| x == v)
                .ok_or_else(|| Error::Data(format!("conditioning data has no grade column {v:?}")))
        })
        .collect::<Result<_>>()?;
    let samples: Vec<([f64; 3], usize, Vec<f64>)> = data
        .records
        .iter()
        .filter_map(|r| {
            let g: Option<Vec<f64>> = cols.iter().map(|&c| r.grades[c]).collect();
            Some((r.location, r.domain?, g?))
        })
        .collect();
    let fit = |rows: &[&([f64; 3], usize, Vec<f64>)]| -> Result<RbigTransform> {
        let x = DMatrix::from_fn(rows.len(), m, |i, j| rows[i].2[j]);
        Ok(rbig::fit_forward(&x, rbig_max_iterations, rbig::default_tol(m))?.1)
    };
    let all: Vec<&_> = samples.iter().collect();
    if all.len() < 10 * m {
        return Err(Error::Data(format!(
            "grade prior needs at least {} complete grade samples, found {}",
            10 * m,
            all.len()
        )));
    }
    let pooled = fit(&all)?;
    let transforms: Vec<RbigTransform> = (0..n_domains)
        .map(|d| {
            let rows: Vec<&_> = samples.iter().filter(|s| s.1 == d).collect();
            if rows.len() >= 10 * m {
                fit(&rows)
            } else {
                log::warn!(
                    "domain {d} has {} grade samples; using the pooled transform",
                    rows.len()
                );
                Ok(pooled.clone())
            }
        })
        .collect::<Result<_>>()?;

    let mut conditioning: Vec<Vec<([f64; 3], f64)>> = vec![Vec::with_capacity(samples.len()); m];
    for (loc, d, g) in &samples {
        let f = transforms[*d].forward(&DMatrix::from_row_slice(1, m, g))?;
        for j in 0..m {
            conditioning[j].push((*loc, f[(0, j)]));
        }
    }

    let dvar = ens.require_var(vars::DOMAIN)?;
    let labels: Vec<Vec<usize>> = (0..ens.n_real())
        .map(|r| ens.values(r, dvar).iter().map(|&x| x as usize).collect())
        .collect();
    let n = grid.n_blocks();
    let grades: Vec<Vec<Vec<f64>>> = (0..ens.n_real())
        .into_par_iter()
        .map(|r| -> Result<Vec<Vec<f64>>> {
            let factors: Vec<Vec<f64>> = (0..m)
                .map(|j| {
                    let s = rng::derive_seed(seed, &[rng::tag::GRADES, r as u64, j as u64]);
                    gsim::simulate_conditional_with(grid, &conditioning[j], factor_variogram, sgs, s)
                })
                .collect::<Result<_>>()?;
            let mut out = vec![vec![0.0; n]; m];
            for (d, t) in transforms.iter().enumerate() {
                let blocks: Vec<usize> = (0..n).filter(|&b| labels[r][b] == d).collect();
                if blocks.is_empty() {
                    continue;
                }
                let f = DMatrix::from_fn(blocks.len(), m, |i, j| factors[j][blocks[i]]);
                let x = t.inverse(&f)?;
                for (i, &b) in blocks.iter().enumerate() {
                    for j in 0..m {
                        out[j][b] = x[(i, j)].max(0.0);
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    for (j, name) in variables.iter().enumerate() {
        ens.push_var(name, |r| grades[r][j].clone())?;
    }
    Ok(())
}
