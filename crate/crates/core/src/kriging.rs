//! Simple kriging with a zero mean.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::variogram::VariogramModel;

/// Relative diagonal jitter added before factorization.
pub const JITTER: f64 = 1e-10;

pub const DEFAULT_MAX_NEIGHBORS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrigingResult {
    pub estimate: f64,
    pub variance: f64,
}

impl KrigingResult {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Kriging weights for a fixed target and neighbour configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SkWeights {
    /// Positions (into the caller's neighbour list) that received weights.
    pub used: Vec<usize>,
    pub weights: Vec<f64>,
    pub variance: f64,
}

impl SkWeights {
    pub fn estimate(&self, values: impl Fn(usize) -> f64) -> f64 {
        self.used
            .iter()
            .zip(&self.weights)
            .map(|(&i, w)| w * values(i))
            .sum()
    }
}

/// Neighbour selection: the `max_neighbors` candidates closest in the
/// model's anisotropy-normalized metric, optionally within `max_distance`
/// of those units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborSearch {
    pub max_neighbors: usize,
    pub max_distance: Option<f64>,
}

impl Default for NeighborSearch {
    fn default() -> Self {
        NeighborSearch {
            max_neighbors: DEFAULT_MAX_NEIGHBORS,
            max_distance: None,
        }
    }
}

impl NeighborSearch {
    pub fn with_max(max_neighbors: usize) -> Self {
        NeighborSearch {
            max_neighbors,
            max_distance: None,
        }
    }

    /// Indices of the selected candidates ordered by distance (ties by index).
    pub fn select(
        &self,
        target: [f64; 3],
        candidates: &[[f64; 3]],
        model: &VariogramModel,
        exclude: Option<usize>,
    ) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = candidates
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(i, c)| (model.search_distance(sub(*c, target)), i))
            .filter(|(dist, _)| self.max_distance.is_none_or(|m| *dist <= m))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if d.len() > self.max_neighbors {
            if self.max_neighbors == 0 {
                return Vec::new();
            }
            d.select_nth_unstable_by(self.max_neighbors - 1, cmp);
            d.truncate(self.max_neighbors);
        }
        d.sort_by(cmp);
        d.into_iter().map(|(_, i)| i).collect()
    }
}

#[inline]
pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let h = sub(a, b);
    h[0] * h[0] + h[1] * h[1] + h[2] * h[2]
}

/// Solves the simple-kriging system `cov w = rhs`.
///
/// On factorization failure the neighbour of the closest pair that lies
/// farther from the target is dropped and the solve retried. Returns the kept
/// positions and their weights.
pub(crate) fn solve_system(
    cov: &DMatrix<f64>,
    rhs: &DVector<f64>,
    locs: &[[f64; 3]],
    target: [f64; 3],
    c0: f64,
) -> Result<(Vec<usize>, DVector<f64>)> {
    let mut active: Vec<usize> = (0..rhs.len()).collect();
    loop {
        let n = active.len();
        if n == 0 {
            return Ok((active, DVector::zeros(0)));
        }
        let mut a = DMatrix::from_fn(n, n, |i, j| cov[(active[i], active[j])]);
        for i in 0..n {
            a[(i, i)] += JITTER * c0;
        }
        let b = DVector::from_fn(n, |i, _| rhs[active[i]]);
        if let Some(ch) = Cholesky::new(a) {
            let w = ch.solve(&b);
            if w.iter().all(|x| x.is_finite()) {
                return Ok((active, w));
            }
        }
        if n == 1 {
            return Err(Error::Numerical(
                "kriging system singular with a single neighbour".into(),
            ));
        }
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            for j in i + 1..n {
                let d = dist2(locs[active[i]], locs[active[j]]);
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        let (_, i, j) = best;
        let drop = if dist2(locs[active[i]], target) >= dist2(locs[active[j]], target) {
            i
        } else {
            j
        };
        log::debug!("kriging system singular; dropping neighbour {}", active[drop]);
        active.remove(drop);
    }
}

/// Simple-kriging weights and variance at `target` from `locs`.
pub fn sk_weights(target: [f64; 3], locs: &[[f64; 3]], model: &VariogramModel) -> Result<SkWeights> {
    let c0 = model.sill();
    let n = locs.len();
    if n == 0 {
        return Ok(SkWeights {
            used: Vec::new(),
            weights: Vec::new(),
            variance: c0,
        });
    }
    let cov = DMatrix::from_fn(n, n, |i, j| model.covariance(sub(locs[i], locs[j])));
    let rhs = DVector::from_fn(n, |i, _| model.covariance(sub(locs[i], target)));
    let (used, w) = solve_system(&cov, &rhs, locs, target, c0)?;
    let reduction: f64 = used.iter().zip(w.iter()).map(|(&i, wi)| wi * rhs[i]).sum();
    Ok(SkWeights {
        used,
        weights: w.iter().copied().collect(),
        variance: (c0 - reduction).clamp(0.0, c0),
    })
}

/// Zero-mean simple kriging estimate and variance.
pub fn simple_krige(
    target: [f64; 3],
    neighbors: &[([f64; 3], f64)],
    model: &VariogramModel,
) -> Result<KrigingResult> {
    let locs: Vec<[f64; 3]> = neighbors.iter().map(|n| n.0).collect();
    let w = sk_weights(target, &locs, model)?;
    Ok(KrigingResult {
        estimate: w.estimate(|i| neighbors[i].1),
        variance: w.variance,
    })
}
