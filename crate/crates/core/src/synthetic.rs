//! Synthetic case generator: an independently parameterized truth, sampled
//! observations, and spatially clustered periods.

use rand::seq::index;
use rand::Rng;

use crate::config::{Config, GradeTarget, TruthVariograms};
use crate::ensemble::{vars, Ensemble};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::gsim;
use crate::observations::{Observation, ObservationSet};
use crate::rng;
use crate::truncation::TruncationRule;

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub grid: GridSpec,
    pub truth_variograms: TruthVariograms,
    pub truth_rule: TruncationRule,
    pub grade_variables: Vec<String>,
    /// In domain order; empty when there are no grades.
    pub grade_targets: Vec<GradeTarget>,
    pub latent_correlation: f64,
    pub sampling_fraction: f64,
    pub drill_fraction: f64,
    pub n_periods: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let s = cfg
            .synthetic
            .as_ref()
            .ok_or_else(|| Error::Config("missing section synthetic".into()))?;
        let grade_variables = cfg.grade_variables();
        let grade_targets = if grade_variables.is_empty() {
            Vec::new()
        } else {
            cfg.rule.domains.iter().map(|d| s.grade_targets[d].clone()).collect()
        };
        Ok(SyntheticSpec {
            grid: cfg.grid.clone(),
            truth_variograms: s.truth_variograms.clone(),
            truth_rule: s.truth_rule(cfg)?,
            grade_variables,
            grade_targets,
            latent_correlation: s.latent_correlation,
            sampling_fraction: s.sampling_fraction,
            drill_fraction: s.drill_fraction,
            n_periods: s.n_periods,
            seed: s.seed.unwrap_or(cfg.pipeline.rng_seed),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub grid: GridSpec,
    pub domains: Vec<String>,
    pub variables: Vec<String>,
    pub grf: [Vec<f64>; 2],
    pub domain: Vec<usize>,
    /// One grid per grade variable.
    pub grades: Vec<Vec<f64>>,
}

impl Truth {
    /// Single-realization ensemble with `g1`, `g2`, `domain` and the grades.
    pub fn to_ensemble(&self) -> Result<Ensemble> {
        let mut names = vec![vars::G1.to_string(), vars::G2.into(), vars::DOMAIN.into()];
        names.extend(self.variables.iter().cloned());
        let mut fields = vec![
            self.grf[0].clone(),
            self.grf[1].clone(),
            self.domain.iter().map(|&d| d as f64).collect(),
        ];
        fields.extend(self.grades.iter().cloned());
        Ensemble::from_realizations(self.grid.dims(), names, vec![fields])
    }

    pub fn proportions(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.domains.len()];
        for &d in &self.domain {
            c[d] += 1.0;
        }
        c.iter().map(|v| v / self.domain.len() as f64).collect()
    }
}

/// Power and scale `a * exp(b y)` whose sample mean and coefficient of
/// variation over `ys` match the target.
fn calibrate_lognormal(ys: &[f64], mean: f64, sd: f64) -> (f64, f64) {
    let moments = |b: f64| {
        let e: Vec<f64> = ys.iter().map(|y| (b * y).exp()).collect();
        let m = e.iter().sum::<f64>() / e.len() as f64;
        let v = e.iter().map(|x| (x - m).powi(2)).sum::<f64>() / e.len() as f64;
        (m, v.sqrt() / m)
    };
    let target_cv = sd / mean;
    let (mut lo, mut hi) = (0.0, 8.0);
    if ys.len() > 1 && moments(hi).1 > target_cv {
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if moments(mid).1 < target_cv {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let b = 0.5 * (lo + hi);
    (mean / moments(b).0, b)
}

/// One unconditional PGS realization under the truth parameters, plus
/// domain-conditional lognormal grades sharing a latent field.
pub fn generate_truth(spec: &SyntheticSpec) -> Result<Truth> {
    let grid = &spec.grid;
    let tv = &spec.truth_variograms;
    let seed = |k: u64| rng::derive_seed(spec.seed, &[rng::tag::TRUTH, k]);
    let g1 = gsim::simulate_conditional(grid, &[], &tv.g1, seed(0))?;
    let g2 = gsim::simulate_conditional(grid, &[], &tv.g2, seed(1))?;
    let domain: Vec<usize> = g1.iter().zip(&g2).map(|(&a, &b)| spec.truth_rule.truncate(a, b)).collect();

    let nv = spec.grade_variables.len();
    let mut grades = Vec::with_capacity(nv);
    if nv > 0 {
        let rho = spec.latent_correlation;
        let latent = gsim::simulate_conditional(grid, &[], &tv.grades, seed(2))?;
        let nd = spec.truth_rule.n_domains();
        let members: Vec<Vec<usize>> = (0..nd)
            .map(|d| (0..domain.len()).filter(|&b| domain[b] == d).collect())
            .collect();
        for v in 0..nv {
            let own = gsim::simulate_conditional(grid, &[], &tv.grades, seed(3 + v as u64))?;
            let y: Vec<f64> = latent
                .iter()
                .zip(&own)
                .map(|(l, e)| rho * l + (1.0 - rho * rho).sqrt() * e)
                .collect();
            let mut g = vec![0.0; y.len()];
            for (d, blocks) in members.iter().enumerate() {
                if blocks.is_empty() {
                    continue;
                }
                let ys: Vec<f64> = blocks.iter().map(|&b| y[b]).collect();
                let t = &spec.grade_targets[d];
                let (a, b) = calibrate_lognormal(&ys, t.mean[v], t.sd[v]);
                for &k in blocks {
                    g[k] = a * (b * y[k]).exp();
                }
            }
            grades.push(g);
        }
    }
    Ok(Truth {
        grid: grid.clone(),
        domains: spec.truth_rule.domains().to_vec(),
        variables: spec.grade_variables.clone(),
        grf: [g1, g2],
        domain,
        grades,
    })
}

fn record(truth: &Truth, block: usize, period: u32) -> Observation {
    Observation {
        location: truth.grid.centroid(block),
        block: Some(block),
        period,
        domain: Some(truth.domain[block]),
        grades: truth.grades.iter().map(|g| Some(g[block])).collect(),
        error_sd: vec![None; truth.variables.len()],
    }
}

fn sample_blocks(truth: &Truth, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!("sampling fraction {fraction} outside (0, 1]")));
    }
    let n = truth.grid.n_blocks();
    let k = (fraction * n as f64).round() as usize;
    if k == 0 {
        return Err(Error::InvalidInput(format!(
            "sampling fraction {fraction} yields no samples on {n} blocks"
        )));
    }
    let mut r = rng::stream(seed, &[rng::tag::SAMPLING]);
    let mut blocks = index::sample(&mut r, n, k).into_vec();
    blocks.sort_unstable();
    Ok(blocks)
}

/// Uniform sample of blocks without replacement, split into `n_periods`
/// spatial clusters numbered in centroid order.
pub fn sample_observations(truth: &Truth, fraction: f64, n_periods: usize, seed: u64) -> Result<ObservationSet> {
    let blocks = sample_blocks(truth, fraction, seed)?;
    if n_periods == 0 || n_periods > blocks.len() {
        return Err(Error::InvalidInput(format!(
            "cannot split {} samples into {n_periods} periods",
            blocks.len()
        )));
    }
    let points: Vec<[f64; 3]> = blocks.iter().map(|&b| truth.grid.centroid(b)).collect();
    let periods = cluster_periods(&points, n_periods, rng::derive_seed(seed, &[rng::tag::PERIOD]));
    let mut set = ObservationSet::new(truth.domains.clone(), truth.variables.clone());
    set.records = blocks.iter().zip(&periods).map(|(&b, &p)| record(truth, b, p)).collect();
    Ok(set)
}

/// Scattered prior conditioning samples, all in period 0.
pub fn sample_drillholes(truth: &Truth, fraction: f64, seed: u64) -> Result<ObservationSet> {
    let blocks = sample_blocks(truth, fraction, rng::derive_seed(seed, &[1]))?;
    let mut set = ObservationSet::new(truth.domains.clone(), truth.variables.clone());
    set.records = blocks.iter().map(|&b| record(truth, b, 0)).collect();
    Ok(set)
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// K-means on coordinates (k-means++ seeding, Lloyd iterations). Clusters
/// are never empty and are numbered by centroid, x first.
pub fn cluster_periods(points: &[[f64; 3]], k: usize, seed: u64) -> Vec<u32> {
    assert!(k >= 1 && k <= points.len());
    let mut r = rng::stream(seed, &[]);
    let mut centres = vec![points[r.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = r.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            r.random_range(0..points.len())
        };
        centres.push(points[next]);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, &points[next]));
        }
    }
    let nearest = |p: &[f64; 3], centres: &[[f64; 3]]| {
        (0..centres.len())
            .min_by(|&a, &b| dist2(p, &centres[a]).total_cmp(&dist2(p, &centres[b])))
            .unwrap()
    };
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centres)).collect();
    for _ in 0..200 {
        let mut sums = vec![[0.0; 3]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assign) {
            counts[c] += 1;
            for a in 0..3 {
                sums[c][a] += p[a];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centres[c] = sums[c].map(|s| s / counts[c] as f64);
            }
        }
        // an empty cluster takes the point farthest from its own centre
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..points.len())
                    .filter(|&i| counts[assign[i]] > 1)
                    .max_by(|&a, &b| {
                        dist2(&points[a], &centres[assign[a]]).total_cmp(&dist2(&points[b], &centres[assign[b]]))
                    })
                    .expect("k <= n");
                counts[assign[far]] -= 1;
                assign[far] = c;
                counts[c] = 1;
                centres[c] = points[far];
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centres)).collect();
        let mut counts_next = vec![0usize; k];
        next.iter().for_each(|&c| counts_next[c] += 1);
        if next == assign || counts_next.contains(&0) {
            break;
        }
        assign = next;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        centres[a][0]
            .total_cmp(&centres[b][0])
            .then(centres[a][1].total_cmp(&centres[b][1]))
            .then(centres[a][2].total_cmp(&centres[b][2]))
    });
    let mut rank = vec![0u32; k];
    for (i, &c) in order.iter().enumerate() {
        rank[c] = i as u32;
    }
    assign.iter().map(|&c| rank[c]).collect()
}
