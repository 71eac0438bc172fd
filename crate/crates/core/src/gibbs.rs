//! Gibbs sampler turning categorical observations into GRF values.
//!
//! Each sweep visits the points in a fresh random order and, per GRF,
//! replaces the current value with `mean + sd * R`, where `mean` and `sd` come
//! from simple kriging on the other points' current values and `R` is a
//! standard normal truncated so that the new value stays inside the domain's
//! interval. Kriging weights depend only on locations, so they are solved
//! once up front and each sweep costs one dot product per point and GRF.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::kriging::{sk_weights, NeighborSearch, SkWeights};
use crate::normal;
use crate::rng::{self, StreamRng};
use crate::truncation::TruncationRule;
use crate::variogram::VariogramModel;

pub const DEFAULT_ITERATIONS: usize = 1000;

/// Points whose kriging variance falls below this keep their current value.
const DEGENERATE_VARIANCE: f64 = 1e-9;

struct PointKriging {
    neighbors: Vec<usize>,
    weights: Vec<f64>,
    sd: f64,
}

pub struct GibbsSampler {
    n: usize,
    intervals: [Vec<(f64, f64)>; 2],
    kriging: [Vec<PointKriging>; 2],
}

#[derive(Clone, Debug)]
pub struct GibbsState {
    /// Current G1 and G2 values per point.
    pub values: [Vec<f64>; 2],
    pub iteration: usize,
    seed: u64,
}

impl GibbsState {
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.values[0]
            .iter()
            .zip(&self.values[1])
            .map(|(&a, &b)| (a, b))
            .collect()
    }
}

impl GibbsSampler {
    pub fn new(
        locations: &[[f64; 3]],
        labels: &[usize],
        rule: &TruncationRule,
        variograms: [&VariogramModel; 2],
        search: NeighborSearch,
    ) -> Result<Self> {
        if locations.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} locations but {} labels",
                locations.len(),
                labels.len()
            )));
        }
        let mut intervals: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
        for &d in labels {
            if d >= rule.n_domains() {
                return Err(Error::InvalidInput(format!("unknown domain index {d}")));
            }
            for axis in 0..2 {
                intervals[axis].push(rule.domain_interval(d, axis as u8 + 1)?);
            }
        }
        let mut kriging: [Vec<PointKriging>; 2] = [Vec::new(), Vec::new()];
        let mut degenerate = 0;
        for (axis, model) in variograms.iter().enumerate() {
            model.check_standard()?;
            for (i, &target) in locations.iter().enumerate() {
                let nb = search.select(target, locations, model, Some(i));
                let locs: Vec<[f64; 3]> = nb.iter().map(|&j| locations[j]).collect();
                let SkWeights {
                    used,
                    weights,
                    variance,
                } = sk_weights(target, &locs, model)?;
                if variance < DEGENERATE_VARIANCE {
                    degenerate += 1;
                }
                kriging[axis].push(PointKriging {
                    neighbors: used.iter().map(|&u| nb[u]).collect(),
                    weights,
                    sd: variance.sqrt(),
                });
            }
        }
        if degenerate > 0 {
            log::warn!(
                "Gibbs sampler: {degenerate} point/GRF pairs have zero kriging variance \
                 (duplicate locations); they keep their initial values"
            );
        }
        Ok(GibbsSampler {
            n: locations.len(),
            intervals,
            kriging,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Independent truncated standard normal draws inside each interval.
    pub fn initialise(&self, seed: u64) -> GibbsState {
        let mut r = rng::stream(seed, &[rng::tag::GIBBS, u64::MAX]);
        let mut values = [Vec::with_capacity(self.n), Vec::with_capacity(self.n)];
        for i in 0..self.n {
            for axis in 0..2 {
                let (lo, hi) = self.intervals[axis][i];
                values[axis].push(normal::sample_truncated(&mut r, lo, hi));
            }
        }
        GibbsState {
            values,
            iteration: 0,
            seed,
        }
    }

    pub fn sweep(&self, state: &mut GibbsState) {
        let mut order: Vec<usize> = (0..self.n).collect();
        let mut r: StreamRng = rng::stream(state.seed, &[rng::tag::GIBBS, state.iteration as u64]);
        order.shuffle(&mut r);
        for &i in &order {
            for axis in 0..2 {
                let k = &self.kriging[axis][i];
                if k.sd * k.sd < DEGENERATE_VARIANCE {
                    continue;
                }
                let vals = &state.values[axis];
                let mean: f64 = k.neighbors.iter().zip(&k.weights).map(|(&j, w)| w * vals[j]).sum();
                let (lo, hi) = self.intervals[axis][i];
                let resid = normal::sample_truncated(&mut r, (lo - mean) / k.sd, (hi - mean) / k.sd);
                let v = normal::clamp_half_open(mean + k.sd * resid, lo, hi);
                state.values[axis][i] = v;
            }
        }
        state.iteration += 1;
        debug_assert!(self.in_intervals(state));
    }

    pub fn in_intervals(&self, state: &GibbsState) -> bool {
        (0..2).all(|axis| {
            state.values[axis]
                .iter()
                .zip(&self.intervals[axis])
                .all(|(&v, &(lo, hi))| lo <= v && v < hi)
        })
    }

    pub fn run(&self, iterations: usize, seed: u64) -> GibbsState {
        let mut s = self.initialise(seed);
        for _ in 0..iterations {
            self.sweep(&mut s);
        }
        s
    }
}

/// Converts labelled points into `(g1, g2)` pairs that truncate back to the
/// labels.
pub fn run(
    locations: &[[f64; 3]],
    labels: &[usize],
    rule: &TruncationRule,
    variograms: [&VariogramModel; 2],
    iterations: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if iterations == 0 {
        return Err(Error::InvalidInput("Gibbs sampler needs at least one iteration".into()));
    }
    let sampler = GibbsSampler::new(locations, labels, rule, variograms, NeighborSearch::default())?;
    Ok(sampler.run(iterations, seed).pairs())
}
