//! Rotation-based iterative Gaussianisation.
//!
//! Each iteration maps every column through its empirical normal-score
//! transform and then rotates onto the principal axes of the result. The
//! fitted marginal tables and rotations are kept so the transform can be
//! inverted exactly.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::normal;

pub const DEFAULT_MAX_ITERATIONS: usize = 30;

/// Upper bound on knots per marginal table. Larger samples are represented by
/// evenly spaced order statistics; the piecewise-linear map stays exactly
/// invertible either way.
pub const MAX_KNOTS: usize = 2000;

/// Default stopping tolerance on the summed non-Gaussianity for `m` columns.
pub fn default_tol(m: usize) -> f64 {
    0.05 * m as f64
}

/// Monotone piecewise-linear map between data values and standard normal
/// scores, linearly extended past both ends.
#[derive(Clone, Debug, PartialEq)]
pub enum MarginalMap {
    Table { xs: Vec<f64>, zs: Vec<f64> },
    /// Zero-variance column: maps to 0 and back to the constant.
    Constant(f64),
}

impl MarginalMap {
    /// Hazen plotting positions `(rank - 0.5) / n` through the normal
    /// quantile; tied values share the mean position of their ranks.
    pub fn fit(column: &[f64]) -> Self {
        let mut sorted = column.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mut xs = Vec::new();
        let mut zs = Vec::new();
        let mut a = 0;
        while a < sorted.len() {
            let mut b = a + 1;
            while b < sorted.len() && sorted[b] == sorted[a] {
                b += 1;
            }
            xs.push(sorted[a]);
            zs.push(normal::quantile((a + b) as f64 * 0.5 / n));
            a = b;
        }
        if xs.len() < 2 {
            return MarginalMap::Constant(sorted.first().copied().unwrap_or(0.0));
        }
        if xs.len() > MAX_KNOTS {
            let last = xs.len() - 1;
            let pick: Vec<usize> = (0..MAX_KNOTS)
                .map(|k| (k as f64 * last as f64 / (MAX_KNOTS - 1) as f64).round() as usize)
                .collect();
            xs = pick.iter().map(|&i| xs[i]).collect();
            zs = pick.iter().map(|&i| zs[i]).collect();
        }
        MarginalMap::Table { xs, zs }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, MarginalMap::Constant(_))
    }

    pub fn forward(&self, x: f64) -> f64 {
        match self {
            MarginalMap::Table { xs, zs } => interpolate(xs, zs, x),
            MarginalMap::Constant(_) => 0.0,
        }
    }

    pub fn inverse(&self, z: f64) -> f64 {
        match self {
            MarginalMap::Table { xs, zs } => interpolate(zs, xs, z),
            MarginalMap::Constant(c) => *c,
        }
    }
}

/// Piecewise-linear interpolation on strictly increasing `from`, with the
/// end segments' slopes extended outward.
fn interpolate(from: &[f64], to: &[f64], x: f64) -> f64 {
    let n = from.len();
    let seg = |i: usize| {
        let t = (x - from[i]) / (from[i + 1] - from[i]);
        to[i] + t * (to[i + 1] - to[i])
    };
    if x <= from[0] {
        return seg(0);
    }
    if x >= from[n - 1] {
        return seg(n - 2);
    }
    let i = from.partition_point(|&v| v <= x) - 1;
    seg(i.min(n - 2))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RbigIteration {
    pub marginals: Vec<MarginalMap>,
    /// Rows are the principal axes; factors are `rotation * z`.
    pub rotation: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RbigTransform {
    m: usize,
    iterations: Vec<RbigIteration>,
    /// Non-Gaussianity of the output after each kept iteration.
    pub trace: Vec<f64>,
    /// Columns that had zero variance on input.
    pub degenerate: Vec<bool>,
}

/// Sum over columns of `|skewness| + |excess kurtosis|`.
pub fn non_gaussianity(data: &DMatrix<f64>) -> f64 {
    data.column_iter()
        .map(|c| {
            let (s, k) = skew_kurt(c.as_slice());
            s.abs() + k.abs()
        })
        .sum()
}

pub(crate) fn skew_kurt(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 <= 1e-300 {
        return (0.0, 0.0);
    }
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

fn principal_rotation(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows() as f64;
    let m = z.ncols();
    let means: Vec<f64> = z.column_iter().map(|c| c.sum() / n).collect();
    let mut cov = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let ci = z.column(i);
            let cj = z.column(j);
            let s: f64 = ci.iter().zip(cj.iter()).map(|(a, b)| (a - means[i]) * (b - means[j])).sum();
            cov[(i, j)] = s / (n - 1.0);
            cov[(j, i)] = cov[(i, j)];
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut r = DMatrix::zeros(m, m);
    for (row, &k) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let big = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if big < 0.0 { -1.0 } else { 1.0 };
        for c in 0..m {
            r[(row, c)] = sign * v[c];
        }
    }
    r
}

fn apply_marginals(data: &DMatrix<f64>, maps: &[MarginalMap], inverse: bool) -> DMatrix<f64> {
    let mut out = data.clone();
    for (j, map) in maps.iter().enumerate() {
        for v in out.column_mut(j).iter_mut() {
            *v = if inverse { map.inverse(*v) } else { map.forward(*v) };
        }
    }
    out
}

/// Fits the transform to `data` (`n` samples by `m` variables) and returns the
/// factors of the fitted samples alongside it.
///
/// Iteration stops at `max_iterations`, once the non-Gaussianity of the
/// output drops below `tol`, or when an iteration fails to reduce it. In the
/// last case that iteration is discarded and replaced by a marginal-only
/// step, so the trace never increases.
pub fn fit_forward(data: &DMatrix<f64>, max_iterations: usize, tol: f64) -> Result<(DMatrix<f64>, RbigTransform)> {
    let (n, m) = data.shape();
    if m == 0 {
        return Err(Error::InvalidInput("RBIG needs at least one variable".into()));
    }
    if n < 10 * m {
        return Err(Error::InvalidInput(format!(
            "RBIG needs at least {} samples for {m} variables, got {n}",
            10 * m
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("RBIG input contains non-finite values".into()));
    }
    let max_iterations = max_iterations.max(1);
    let mut x = data.clone();
    let mut iterations = Vec::new();
    let mut trace: Vec<f64> = Vec::new();
    let mut degenerate = vec![false; m];
    let mut stalled = false;
    for it in 0..max_iterations {
        let maps: Vec<MarginalMap> = x.column_iter().map(|c| MarginalMap::fit(c.as_slice())).collect();
        if it == 0 {
            for (j, map) in maps.iter().enumerate() {
                degenerate[j] = map.is_constant();
            }
            if degenerate.iter().any(|d| *d) {
                log::warn!("RBIG: zero-variance columns {degenerate:?} mapped to zeros");
            }
        }
        let z = apply_marginals(&x, &maps, false);
        let rotation = principal_rotation(&z);
        let y = &z * rotation.transpose();
        let ng = non_gaussianity(&y);
        if let Some(&prev) = trace.last() {
            if ng > prev + 1e-9 {
                stalled = true;
                break;
            }
        }
        iterations.push(RbigIteration { marginals: maps, rotation });
        trace.push(ng);
        x = y;
        if ng < tol {
            break;
        }
    }
    if stalled {
        // the rejected rotation would have left skewed marginals; a closing
        // marginal-only step (identity rotation) removes what remains
        let maps: Vec<MarginalMap> = x.column_iter().map(|c| MarginalMap::fit(c.as_slice())).collect();
        let z = apply_marginals(&x, &maps, false);
        let ng = non_gaussianity(&z);
        if trace.last().is_some_and(|&prev| ng <= prev) {
            iterations.push(RbigIteration {
                marginals: maps,
                rotation: DMatrix::identity(m, m),
            });
            trace.push(ng);
            x = z;
        }
    }
    Ok((
        x,
        RbigTransform {
            m,
            iterations,
            trace,
            degenerate,
        },
    ))
}

impl RbigTransform {
    pub fn n_vars(&self) -> usize {
        self.m
    }

    pub fn n_iterations(&self) -> usize {
        self.iterations.len()
    }

    pub fn iterations(&self) -> &[RbigIteration] {
        &self.iterations
    }

    fn check(&self, data: &DMatrix<f64>) -> Result<()> {
        if data.ncols() != self.m {
            return Err(Error::InvalidInput(format!(
                "transform has {} variables, data has {}",
                self.m,
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("RBIG input contains non-finite values".into()));
        }
        Ok(())
    }

    /// Applies the fitted transform to new samples.
    pub fn forward(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(data)?;
        let mut x = data.clone();
        for it in &self.iterations {
            x = apply_marginals(&x, &it.marginals, false) * it.rotation.transpose();
        }
        Ok(x)
    }

    /// Maps factors back to data space, undoing iterations in reverse order.
    pub fn inverse(&self, factors: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(factors)?;
        let mut x = factors.clone();
        for it in self.iterations.iter().rev() {
            x = apply_marginals(&(x * &it.rotation), &it.marginals, true);
        }
        Ok(x)
    }

    /// Little-endian serialization for the ensemble container's auxiliary
    /// section.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        let put_u32 = |b: &mut Vec<u8>, v: usize| b.extend_from_slice(&(v as u32).to_le_bytes());
        let put_f64s = |b: &mut Vec<u8>, v: &[f64]| v.iter().for_each(|x| b.extend_from_slice(&x.to_le_bytes()));
        put_u32(&mut b, self.m);
        put_u32(&mut b, self.iterations.len());
        b.extend(self.degenerate.iter().map(|&d| d as u8));
        put_f64s(&mut b, &self.trace);
        for it in &self.iterations {
            for map in &it.marginals {
                match map {
                    MarginalMap::Constant(c) => {
                        b.push(0);
                        put_f64s(&mut b, &[*c]);
                    }
                    MarginalMap::Table { xs, zs } => {
                        b.push(1);
                        put_u32(&mut b, xs.len());
                        put_f64s(&mut b, xs);
                        put_f64s(&mut b, zs);
                    }
                }
            }
            put_f64s(&mut b, it.rotation.as_slice());
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        let m = r.u32()?;
        let n_it = r.u32()?;
        let degenerate = r.take(m)?.iter().map(|&d| d != 0).collect();
        let trace = r.f64s(n_it)?;
        let mut iterations = Vec::with_capacity(n_it);
        for _ in 0..n_it {
            let mut marginals = Vec::with_capacity(m);
            for _ in 0..m {
                match r.take(1)?[0] {
                    0 => marginals.push(MarginalMap::Constant(r.f64s(1)?[0])),
                    1 => {
                        let k = r.u32()?;
                        let xs = r.f64s(k)?;
                        let zs = r.f64s(k)?;
                        marginals.push(MarginalMap::Table { xs, zs });
                    }
                    t => return Err(Error::Format(format!("unknown marginal map tag {t}"))),
                }
            }
            let rotation = DMatrix::from_vec(m, m, r.f64s(m * m)?);
            iterations.push(RbigIteration { marginals, rotation });
        }
        Ok(RbigTransform {
            m,
            iterations,
            trace,
            degenerate,
        })
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Format("truncated RBIG transform".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
