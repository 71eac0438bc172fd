//! Regular block-grid geometry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A regular, axis-aligned 3D block grid.
///
/// `origin` is the minimum corner of the first block, so block `(ix, iy, iz)`
/// spans `origin + i * d .. origin + (i + 1) * d` on each axis. Linear indices
/// run x-fastest: `ix + nx * (iy + ny * iz)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    #[serde(default)]
    pub origin: [f64; 3],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], sizes: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let g = GridSpec {
            nx: dims[0],
            ny: dims[1],
            nz: dims[2],
            dx: sizes[0],
            dy: sizes[1],
            dz: sizes[2],
            origin,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::InvalidInput(format!(
                "grid block counts must be >= 1, got {}x{}x{}",
                self.nx, self.ny, self.nz
            )));
        }
        for (name, d) in [("dx", self.dx), ("dy", self.dy), ("dz", self.dz)] {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidInput(format!("grid {name} must be > 0, got {d}")));
            }
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidInput("grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn sizes(&self) -> [f64; 3] {
        [self.dx, self.dy, self.dz]
    }

    pub fn n_blocks(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.ny && iz < self.nz);
        ix + self.nx * (iy + self.ny * iz)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let ix = idx % self.nx;
        let rest = idx / self.nx;
        [ix, rest % self.ny, rest / self.ny]
    }

    /// Block centroid in world coordinates.
    #[inline]
    pub fn centroid(&self, idx: usize) -> [f64; 3] {
        let [ix, iy, iz] = self.coords(idx);
        [
            self.origin[0] + (ix as f64 + 0.5) * self.dx,
            self.origin[1] + (iy as f64 + 0.5) * self.dy,
            self.origin[2] + (iz as f64 + 0.5) * self.dz,
        ]
    }

    /// Block containing `p`, or `None` outside the grid.
    pub fn locate(&self, p: [f64; 3]) -> Option<usize> {
        let mut c = [0usize; 3];
        for axis in 0..3 {
            let f = (p[axis] - self.origin[axis]) / self.sizes()[axis];
            if !(f >= 0.0) || f >= self.dims()[axis] as f64 {
                return None;
            }
            c[axis] = f.floor() as usize;
        }
        Some(self.index(c[0], c[1], c[2]))
    }
}

/// Sorted, deduplicated set of linear block indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BlockSubset {
    blocks: Vec<usize>,
}

impl BlockSubset {
    pub fn from_unsorted(mut blocks: Vec<usize>) -> Self {
        blocks.sort_unstable();
        blocks.dedup();
        BlockSubset { blocks }
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn contains(&self, block: usize) -> bool {
        self.blocks.binary_search(&block).is_ok()
    }

    /// Position of `block` within the subset.
    pub fn position(&self, block: usize) -> Option<usize> {
        self.blocks.binary_search(&block).ok()
    }

    pub fn is_subset_of(&self, other: &BlockSubset) -> bool {
        self.blocks.iter().all(|&b| other.contains(b))
    }
}

/// All blocks within Chebyshev block distance `k` of any of `obs_blocks`,
/// clipped at the grid boundary.
pub fn extract_neighbourhood(grid: &GridSpec, obs_blocks: &[usize], k: usize) -> Result<BlockSubset> {
    if obs_blocks.is_empty() {
        return Err(Error::InvalidInput(
            "cannot extract a neighbourhood around an empty observation set".into(),
        ));
    }
    let n = grid.n_blocks();
    let mut mark = vec![false; n];
    let k = k as isize;
    let dims = grid.dims().map(|d| d as isize);
    for &b in obs_blocks {
        if b >= n {
            return Err(Error::InvalidInput(format!("block {b} outside grid of {n} blocks")));
        }
        let c = grid.coords(b).map(|v| v as isize);
        let lo: [isize; 3] = std::array::from_fn(|a| (c[a] - k).max(0));
        let hi: [isize; 3] = std::array::from_fn(|a| (c[a] + k).min(dims[a] - 1));
        for iz in lo[2]..=hi[2] {
            for iy in lo[1]..=hi[1] {
                for ix in lo[0]..=hi[0] {
                    mark[grid.index(ix as usize, iy as usize, iz as usize)] = true;
                }
            }
        }
    }
    let blocks = mark
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    Ok(BlockSubset { blocks })
}
