//! Ensembles of gridded realizations.

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// `n_real` realizations of `n_vars` gridded variables.
///
/// Storage is realization-major so that each realization can be mutated
/// independently (and in parallel) without synchronization.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    dims: [usize; 3],
    var_names: Vec<String>,
    realizations: Vec<Vec<Vec<f64>>>,
}

impl Ensemble {
    pub fn zeros(dims: [usize; 3], var_names: Vec<String>, n_real: usize) -> Self {
        let n = dims.iter().product();
        let realizations = (0..n_real)
            .map(|_| var_names.iter().map(|_| vec![0.0; n]).collect())
            .collect();
        Ensemble {
            dims,
            var_names,
            realizations,
        }
    }

    pub fn from_realizations(
        dims: [usize; 3],
        var_names: Vec<String>,
        realizations: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let n: usize = dims.iter().product();
        for (r, real) in realizations.iter().enumerate() {
            if real.len() != var_names.len() {
                return Err(Error::InvalidInput(format!(
                    "realization {r} has {} variables, expected {}",
                    real.len(),
                    var_names.len()
                )));
            }
            if let Some(v) = real.iter().position(|g| g.len() != n) {
                return Err(Error::InvalidInput(format!(
                    "realization {r} variable {} has {} values, expected {n}",
                    var_names[v],
                    real[v].len()
                )));
            }
        }
        Ok(Ensemble {
            dims,
            var_names,
            realizations,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn n_real(&self) -> usize {
        self.realizations.len()
    }

    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.var_names.iter().position(|v| v == name)
    }

    pub fn require_var(&self, name: &str) -> Result<usize> {
        self.var_index(name)
            .ok_or_else(|| Error::Data(format!("ensemble has no variable named {name:?}")))
    }

    pub fn values(&self, real: usize, var: usize) -> &[f64] {
        &self.realizations[real][var]
    }

    pub fn values_mut(&mut self, real: usize, var: usize) -> &mut [f64] {
        &mut self.realizations[real][var]
    }

    pub fn realizations(&self) -> &[Vec<Vec<f64>>] {
        &self.realizations
    }

    pub fn realizations_mut(&mut self) -> &mut [Vec<Vec<f64>>] {
        &mut self.realizations
    }

    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if self.dims != grid.dims() {
            return Err(Error::Data(format!(
                "ensemble dimensions {:?} do not match grid {:?}",
                self.dims,
                grid.dims()
            )));
        }
        Ok(())
    }

    /// Adds a variable filled by `init(realization)`.
    pub fn push_var(&mut self, name: &str, mut init: impl FnMut(usize) -> Vec<f64>) -> Result<usize> {
        if self.var_index(name).is_some() {
            return Err(Error::InvalidInput(format!("variable {name:?} already present")));
        }
        let n = self.n_blocks();
        for (r, real) in self.realizations.iter_mut().enumerate() {
            let v = init(r);
            if v.len() != n {
                return Err(Error::InvalidInput(format!(
                    "new variable {name:?} has {} values, expected {n}",
                    v.len()
                )));
            }
            real.push(v);
        }
        self.var_names.push(name.to_string());
        Ok(self.var_names.len() - 1)
    }

    /// Rounds every value to the nearest `f32`, the on-disk precision.
    pub fn quantize_to_storage(&mut self) {
        for real in &mut self.realizations {
            for var in real.iter_mut() {
                for x in var.iter_mut() {
                    *x = *x as f32 as f64;
                }
            }
        }
    }

    pub fn has_non_finite(&self) -> bool {
        self.realizations
            .iter()
            .flatten()
            .flatten()
            .any(|x| !x.is_finite())
    }

    /// Ensemble mean of one variable per block.
    pub fn mean(&self, var: usize) -> Vec<f64> {
        let n = self.n_blocks();
        let mut m = vec![0.0; n];
        for real in &self.realizations {
            for (acc, x) in m.iter_mut().zip(&real[var]) {
                *acc += x;
            }
        }
        let k = self.n_real().max(1) as f64;
        m.iter_mut().for_each(|x| *x /= k);
        m
    }

    /// FNV-1a over the bit patterns of every value at `blocks`, all
    /// realizations and variables.
    pub fn checksum_blocks(&self, blocks: impl Iterator<Item = usize> + Clone) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for real in &self.realizations {
            for var in real {
                for b in blocks.clone() {
                    for byte in var[b].to_bits().to_le_bytes() {
                        h ^= byte as u64;
                        h = h.wrapping_mul(0x0100_0000_01b3);
                    }
                }
            }
        }
        h
    }
}


/// Variable names used by domain/grade model ensembles.
pub mod vars {
    pub const G1: &str = "g1";
    pub const G2: &str = "g2";
    pub const DOMAIN: &str = "domain";
}
