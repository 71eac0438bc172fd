//! Stationary variogram and covariance models with geometric anisotropy.
//!
//! Exponential and Gaussian structures use the practical-range convention:
//! they reach 95% of their sill at the stated range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureKind {
    Spherical,
    Exponential,
    Gaussian,
}

impl StructureKind {
    /// Unit-sill variogram at anisotropy-normalized distance `r`.
    #[inline]
    fn unit_gamma(self, r: f64) -> f64 {
        match self {
            StructureKind::Spherical => {
                if r >= 1.0 {
                    1.0
                } else {
                    r * (1.5 - 0.5 * r * r)
                }
            }
            StructureKind::Exponential => 1.0 - (-3.0 * r).exp(),
            StructureKind::Gaussian => 1.0 - (-3.0 * r * r).exp(),
        }
    }
}

/// Serialized form of one nested structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSpec {
    pub kind: StructureKind,
    pub sill: f64,
    /// Ranges along the rotated major, minor and vertical axes (m).
    pub ranges: [f64; 3],
    /// ZXZ rotation angles in degrees.
    #[serde(default)]
    pub angles: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariogramSpec {
    #[serde(default)]
    pub nugget: f64,
    pub structures: Vec<StructureSpec>,
}

#[derive(Clone, Debug, PartialEq)]
struct Structure {
    spec: StructureSpec,
    /// World lag -> normalized lag: scaling after rotation.
    transform: [[f64; 3]; 3],
}

impl Structure {
    fn new(spec: StructureSpec) -> Result<Self> {
        if !(spec.sill > 0.0 && spec.sill.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "structure sill contribution must be > 0, got {}",
                spec.sill
            )));
        }
        if spec.ranges.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "structure ranges must be > 0, got {:?}",
                spec.ranges
            )));
        }
        let rot = zxz_rotation(spec.angles);
        let mut transform = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                transform[i][j] = rot[i][j] / spec.ranges[i];
            }
        }
        Ok(Structure { spec, transform })
    }

    #[inline]
    fn reduced_distance(&self, h: [f64; 3]) -> f64 {
        let t = &self.transform;
        let a = t[0][0] * h[0] + t[0][1] * h[1] + t[0][2] * h[2];
        let b = t[1][0] * h[0] + t[1][1] * h[1] + t[1][2] * h[2];
        let c = t[2][0] * h[0] + t[2][1] * h[1] + t[2][2] * h[2];
        (a * a + b * b + c * c).sqrt()
    }
}

fn rz(t: f64) -> [[f64; 3]; 3] {
    let (s, c) = t.sin_cos();
    [[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn rx(t: f64) -> [[f64; 3]; 3] {
    let (s, c) = t.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]]
}

fn matmul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

/// Rotation into the anisotropy frame: `Rz(a3) Rx(a2) Rz(a1)`, degrees,
/// counter-clockwise positive. The major axis lies `a1` degrees from +x.
fn zxz_rotation(angles: [f64; 3]) -> [[f64; 3]; 3] {
    let [a1, a2, a3] = angles.map(f64::to_radians);
    matmul(rz(a3), matmul(rx(a2), rz(a1)))
}

/// Nugget plus nested spherical/exponential/Gaussian structures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VariogramSpec", into = "VariogramSpec")]
pub struct VariogramModel {
    nugget: f64,
    structures: Vec<Structure>,
    /// Index of the structure with the largest contribution; drives
    /// neighbour search.
    dominant: usize,
}

impl TryFrom<VariogramSpec> for VariogramModel {
    type Error = Error;

    fn try_from(spec: VariogramSpec) -> Result<Self> {
        VariogramModel::new(spec.nugget, spec.structures)
    }
}

impl From<VariogramModel> for VariogramSpec {
    fn from(m: VariogramModel) -> Self {
        VariogramSpec {
            nugget: m.nugget,
            structures: m.structures.into_iter().map(|s| s.spec).collect(),
        }
    }
}

impl VariogramModel {
    pub fn new(nugget: f64, structures: Vec<StructureSpec>) -> Result<Self> {
        if !(nugget >= 0.0 && nugget.is_finite()) {
            return Err(Error::InvalidInput(format!("nugget must be >= 0, got {nugget}")));
        }
        if structures.is_empty() {
            return Err(Error::InvalidInput("variogram needs at least one structure".into()));
        }
        let structures = structures
            .into_iter()
            .map(Structure::new)
            .collect::<Result<Vec<_>>>()?;
        let dominant = structures
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.spec.sill.total_cmp(&b.1.spec.sill))
            .map(|(i, _)| i)
            .unwrap();
        Ok(VariogramModel {
            nugget,
            structures,
            dominant,
        })
    }

    /// Single isotropic structure without nugget.
    pub fn isotropic(kind: StructureKind, range: f64, sill: f64) -> Result<Self> {
        Self::new(
            0.0,
            vec![StructureSpec {
                kind,
                sill,
                ranges: [range; 3],
                angles: [0.0; 3],
            }],
        )
    }

    /// Single anisotropic structure with unit sill and no nugget.
    pub fn standard(kind: StructureKind, ranges: [f64; 3], angles: [f64; 3]) -> Result<Self> {
        Self::new(
            0.0,
            vec![StructureSpec {
                kind,
                sill: 1.0,
                ranges,
                angles,
            }],
        )
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    pub fn sill(&self) -> f64 {
        self.nugget + self.structures.iter().map(|s| s.spec.sill).sum::<f64>()
    }

    /// Checks the unit total sill required of standard Gaussian fields.
    pub fn check_standard(&self) -> Result<()> {
        let s = self.sill();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "GRF variogram must have unit total sill, got {s}"
            )));
        }
        Ok(())
    }

    pub fn gamma(&self, h: [f64; 3]) -> f64 {
        if is_zero_lag(h) {
            return 0.0;
        }
        self.nugget
            + self
                .structures
                .iter()
                .map(|s| s.spec.sill * s.spec.kind.unit_gamma(s.reduced_distance(h)))
                .sum::<f64>()
    }

    #[inline]
    pub fn covariance(&self, h: [f64; 3]) -> f64 {
        if is_zero_lag(h) {
            return self.sill();
        }
        self.structures
            .iter()
            .map(|s| s.spec.sill * (1.0 - s.spec.kind.unit_gamma(s.reduced_distance(h))))
            .sum()
    }

    pub fn covariance_between(&self, a: [f64; 3], b: [f64; 3]) -> f64 {
        self.covariance([a[0] - b[0], a[1] - b[1], a[2] - b[2]])
    }

    /// Distance in units of the dominant structure's ranges, used to rank
    /// neighbours.
    #[inline]
    pub fn search_distance(&self, h: [f64; 3]) -> f64 {
        self.structures[self.dominant].reduced_distance(h)
    }

    /// Longest range of any structure (m).
    pub fn max_range(&self) -> f64 {
        self.structures
            .iter()
            .flat_map(|s| s.spec.ranges)
            .fold(0.0, f64::max)
    }
}

#[inline]
fn is_zero_lag(h: [f64; 3]) -> bool {
    h[0] * h[0] + h[1] * h[1] + h[2] * h[2] < 1e-24
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sph(a: f64) -> VariogramModel {
        VariogramModel::isotropic(StructureKind::Spherical, a, 1.0).unwrap()
    }

    #[test]
    fn zero_lag() {
        for kind in [StructureKind::Spherical, StructureKind::Exponential, StructureKind::Gaussian] {
            let m = VariogramModel::new(
                0.2,
                vec![StructureSpec { kind, sill: 0.8, ranges: [10.0, 5.0, 2.0], angles: [30.0, 0.0, 0.0] }],
            )
            .unwrap();
            assert_eq!(m.gamma([0.0; 3]), 0.0);
            assert!((m.covariance([0.0; 3]) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn spherical_half_range() {
        let m = sph(100.0);
        assert!((m.gamma([50.0, 0.0, 0.0]) - 0.6875).abs() < 1e-12);
        assert!((m.covariance([50.0, 0.0, 0.0]) - 0.3125).abs() < 1e-12);
        assert_eq!(m.gamma([200.0, 0.0, 0.0]), 1.0);
        assert_eq!(m.covariance([0.0, 200.0, 0.0]), 0.0);
    }

    #[test]
    fn practical_range_convention() {
        for kind in [StructureKind::Exponential, StructureKind::Gaussian] {
            let m = VariogramModel::isotropic(kind, 40.0, 1.0).unwrap();
            assert!((m.gamma([40.0, 0.0, 0.0]) - (1.0 - (-3.0f64).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn anisotropy_rotates_major_axis() {
        let m = VariogramModel::standard(StructureKind::Spherical, [100.0, 20.0, 20.0], [90.0, 0.0, 0.0]).unwrap();
        // major axis along +y after a 90 degree rotation
        assert!((m.gamma([0.0, 50.0, 0.0]) - 0.6875).abs() < 1e-12);
        assert!((m.gamma([10.0, 0.0, 0.0]) - 0.6875).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(VariogramModel::new(-0.1, vec![]).is_err());
        assert!(VariogramModel::isotropic(StructureKind::Spherical, 0.0, 1.0).is_err());
        assert!(VariogramModel::isotropic(StructureKind::Spherical, 1.0, 0.9).unwrap().check_standard().is_err());
    }

    #[test]
    fn serde_roundtrip() {
        let src = "nugget = 0.1\n[[structures]]\nkind = \"gaussian\"\nsill = 0.9\nranges = [60.0, 30.0, 10.0]\nangles = [45.0, 0.0, 0.0]\n";
        let m: VariogramModel = toml::from_str(src).unwrap();
        assert!((m.sill() - 1.0).abs() < 1e-12);
        let back: VariogramModel = toml::from_str(&toml::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(toml::from_str::<VariogramModel>("nugget = 0.0\nstructures = []\n").is_err());
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(
            hx in -300.0f64..300.0, hy in -300.0f64..300.0, hz in -50.0f64..50.0,
            a1 in 0.0f64..180.0, kind in 0usize..3,
        ) {
            let kind = [StructureKind::Spherical, StructureKind::Exponential, StructureKind::Gaussian][kind];
            let m = VariogramModel::new(0.1, vec![StructureSpec { kind, sill: 0.9, ranges: [80.0, 40.0, 10.0], angles: [a1, 10.0, 0.0] }]).unwrap();
            let h = [hx, hy, hz];
            let nh = [-hx, -hy, -hz];
            prop_assert!((m.gamma(h) - m.gamma(nh)).abs() < 1e-12);
            prop_assert!((m.covariance(h) - m.covariance(nh)).abs() < 1e-12);
            prop_assert!(m.covariance(h).abs() <= m.covariance([0.0; 3]) + 1e-12);
        }
    }
}
