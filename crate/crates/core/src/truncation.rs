//! Two-GRF truncation rules.
//!
//! The rule is hierarchical: an optional first domain occupies the low side of
//! a single G1 threshold, and the remaining domains are stacked along G2 from
//! bottom to top. Each domain owns one axis-aligned rectangle of the plane;
//! intervals are closed below and open above.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Edge {
    NegInf,
    PosInf,
    Threshold(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rectangle {
    pub g1: (Edge, Edge),
    pub g2: (Edge, Edge),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Threshold {
    pub name: String,
    /// 1 or 2.
    pub axis: u8,
    pub value: f64,
}

/// Domain order and rule layout, as declared in the config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub domains: Vec<String>,
    /// Domain isolated on the low side of the G1 threshold.
    #[serde(default)]
    pub g1_domain: Option<String>,
    /// Remaining domains along G2, bottom to top.
    pub g2_stack: Vec<String>,
}

impl Topology {
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![0usize; self.domains.len()];
        let idx = |name: &String| {
            self.domains
                .iter()
                .position(|d| d == name)
                .ok_or_else(|| Error::InvalidInput(format!("rule refers to unknown domain {name:?}")))
        };
        for name in self.g1_domain.iter().chain(&self.g2_stack) {
            seen[idx(name)?] += 1;
        }
        if let Some(d) = seen.iter().position(|&c| c != 1) {
            return Err(Error::InvalidInput(format!(
                "domain {:?} must appear exactly once in the rule, appears {} times",
                self.domains[d], seen[d]
            )));
        }
        if self.g2_stack.is_empty() {
            return Err(Error::InvalidInput("rule needs at least one domain on G2".into()));
        }
        Ok(())
    }

    fn index(&self, name: &str) -> usize {
        self.domains.iter().position(|d| d == name).expect("validated")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruncationRule {
    topology: Topology,
    rects: Vec<Rectangle>,
    thresholds: Vec<Threshold>,
}

const COVER_TEST_POINTS: usize = 100_000;

impl TruncationRule {
    /// Numeric thresholds reproducing `proportions` (in domain order) under
    /// independent standard normal GRFs.
    pub fn from_proportions(topology: &Topology, proportions: &[f64]) -> Result<Self> {
        topology.validate()?;
        if proportions.len() != topology.domains.len() {
            return Err(Error::InvalidInput(format!(
                "{} proportions given for {} domains",
                proportions.len(),
                topology.domains.len()
            )));
        }
        if let Some(p) = proportions.iter().find(|p| !(**p > 0.0 && **p < 1.0 + 1e-9)) {
            return Err(Error::InvalidInput(format!("domain proportion {p} outside (0, 1]")));
        }
        let total: f64 = proportions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("domain proportions sum to {total}, not 1")));
        }
        let mut values = Vec::new();
        let mut rest = 1.0;
        if let Some(first) = &topology.g1_domain {
            let p = proportions[topology.index(first)];
            values.push(normal::quantile(p));
            rest = 1.0 - p;
        }
        let mut cum = 0.0;
        for name in &topology.g2_stack[..topology.g2_stack.len() - 1] {
            cum += proportions[topology.index(name)];
            values.push(normal::quantile(cum / rest));
        }
        let rule = Self::build(topology.clone(), values)?;
        rule.cover_test(COVER_TEST_POINTS, 0)?;
        Ok(rule)
    }

    fn build(topology: Topology, values: Vec<f64>) -> Result<Self> {
        let nd = topology.domains.len();
        let mut rects = vec![
            Rectangle {
                g1: (Edge::NegInf, Edge::PosInf),
                g2: (Edge::NegInf, Edge::PosInf),
            };
            nd
        ];
        let mut thresholds = Vec::new();
        let mut g1_low = Edge::NegInf;
        if let Some(first) = &topology.g1_domain {
            thresholds.push(Threshold {
                name: format!("{first}|G1"),
                axis: 1,
                value: 0.0,
            });
            rects[topology.index(first)].g1 = (Edge::NegInf, Edge::Threshold(0));
            g1_low = Edge::Threshold(0);
        }
        let stack = &topology.g2_stack;
        let mut below = Edge::NegInf;
        for (i, name) in stack.iter().enumerate() {
            let above = if i + 1 < stack.len() {
                thresholds.push(Threshold {
                    name: format!("{name}|{}", stack[i + 1]),
                    axis: 2,
                    value: 0.0,
                });
                Edge::Threshold(thresholds.len() - 1)
            } else {
                Edge::PosInf
            };
            rects[topology.index(name)] = Rectangle {
                g1: (g1_low, Edge::PosInf),
                g2: (below, above),
            };
            below = above;
        }
        if values.len() != thresholds.len() {
            return Err(Error::InvalidInput(format!(
                "rule has {} thresholds, {} values given",
                thresholds.len(),
                values.len()
            )));
        }
        let mut rule = TruncationRule {
            topology,
            rects,
            thresholds,
        };
        rule.set_values(&values)?;
        Ok(rule)
    }

    fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("threshold {v} is not finite")));
        }
        for (t, &v) in self.thresholds.iter_mut().zip(values) {
            t.value = v;
        }
        let g2: Vec<f64> = self
            .thresholds
            .iter()
            .filter(|t| t.axis == 2)
            .map(|t| t.value)
            .collect();
        if g2.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "G2 thresholds must increase up the stack, got {g2:?}"
            )));
        }
        Ok(())
    }

    /// Same layout with new threshold values; the layout stays a partition as
    /// long as the G2 thresholds remain ordered.
    pub fn with_thresholds(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.thresholds.len() {
            return Err(Error::InvalidInput(format!(
                "rule has {} thresholds, {} values given",
                self.thresholds.len(),
                values.len()
            )));
        }
        let mut r = self.clone();
        r.set_values(values)?;
        Ok(r)
    }

    /// Monte Carlo check that every sampled point of the plane falls in
    /// exactly one rectangle.
    pub fn cover_test(&self, n: usize, seed: u64) -> Result<()> {
        let mut r = rng::stream(seed, &[rng::tag::COVER_TEST]);
        for _ in 0..n {
            // wide uniform sampling reaches far outside the thresholds
            let g1 = r.random_range(-8.0..8.0);
            let g2 = r.random_range(-8.0..8.0);
            let hits = self.rects.iter().filter(|rc| self.contains(rc, g1, g2)).count();
            if hits != 1 {
                return Err(Error::InvalidInput(format!(
                    "truncation rule is not a partition: ({g1}, {g2}) lies in {hits} rectangles"
                )));
            }
        }
        Ok(())
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn domains(&self) -> &[String] {
        &self.topology.domains
    }

    pub fn n_domains(&self) -> usize {
        self.topology.domains.len()
    }

    pub fn domain_index(&self, label: &str) -> Option<usize> {
        self.topology.domains.iter().position(|d| d == label)
    }

    pub fn thresholds(&self) -> &[Threshold] {
        &self.thresholds
    }

    pub fn threshold_values(&self) -> Vec<f64> {
        self.thresholds.iter().map(|t| t.value).collect()
    }

    pub fn rectangle(&self, domain: usize) -> Rectangle {
        self.rects[domain]
    }

    fn edge(&self, e: Edge) -> f64 {
        match e {
            Edge::NegInf => f64::NEG_INFINITY,
            Edge::PosInf => f64::INFINITY,
            Edge::Threshold(i) => self.thresholds[i].value,
        }
    }

    #[inline]
    fn contains(&self, r: &Rectangle, g1: f64, g2: f64) -> bool {
        self.edge(r.g1.0) <= g1 && g1 < self.edge(r.g1.1) && self.edge(r.g2.0) <= g2 && g2 < self.edge(r.g2.1)
    }

    /// Domain index of the rectangle containing `(g1, g2)`. NaN input maps to
    /// the last domain.
    pub fn truncate(&self, g1: f64, g2: f64) -> usize {
        self.rects
            .iter()
            .position(|r| self.contains(r, g1, g2))
            .unwrap_or(self.rects.len() - 1)
    }

    /// `[a_min, a_max)` of `domain` on GRF `axis` (1 or 2).
    pub fn domain_interval(&self, domain: usize, axis: u8) -> Result<(f64, f64)> {
        let r = self
            .rects
            .get(domain)
            .ok_or_else(|| Error::InvalidInput(format!("unknown domain index {domain}")))?;
        let (lo, hi) = match axis {
            1 => r.g1,
            2 => r.g2,
            _ => return Err(Error::InvalidInput(format!("GRF axis must be 1 or 2, got {axis}"))),
        };
        Ok((self.edge(lo), self.edge(hi)))
    }

    /// Analytic domain proportions under independent standard normal GRFs.
    pub fn proportions(&self) -> Vec<f64> {
        self.rects
            .iter()
            .map(|r| {
                let p1 = normal::cdf(self.edge(r.g1.1)) - normal::cdf(self.edge(r.g1.0));
                let p2 = normal::cdf(self.edge(r.g2.1)) - normal::cdf(self.edge(r.g2.0));
                p1 * p2
            })
            .collect()
    }

    /// Writes `name,axis,value` rows.
    pub fn write_thresholds_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
        w.write_record(["name", "axis", "value"])
            .map_err(|e| Error::Data(e.to_string()))?;
        for t in &self.thresholds {
            w.write_record([t.name.clone(), t.axis.to_string(), format!("{:.17}", t.value)])
                .map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Analytic proportions of `rule`.
pub fn rule_proportions(rule: &TruncationRule) -> Vec<f64> {
    rule.proportions()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn two_domain() -> TruncationRule {
        let t = Topology {
            domains: names(&["A", "B"]),
            g1_domain: Some("A".into()),
            g2_stack: names(&["B"]),
        };
        TruncationRule::from_proportions(&t, &[0.5, 0.5]).unwrap()
    }

    #[test]
    fn half_split_gives_zero() {
        let r = two_domain();
        assert_eq!(r.threshold_values(), vec![0.0]);
        assert_eq!(r.truncate(-1.0, 5.0), 0);
        assert_eq!(r.truncate(1.0, -5.0), 1);
        // closed below, open above
        assert_eq!(r.truncate(0.0, 0.0), 1);
        assert_eq!(r.proportions(), vec![0.5, 0.5]);
        assert_eq!(r.domain_interval(0, 1).unwrap(), (f64::NEG_INFINITY, 0.0));
        assert_eq!(r.domain_interval(0, 2).unwrap(), (f64::NEG_INFINITY, f64::INFINITY));
        assert!(r.domain_interval(2, 1).is_err());
        assert!(r.domain_interval(0, 3).is_err());
    }

    #[test]
    fn stacked_thirds() {
        let t = Topology {
            domains: names(&["A", "B", "C"]),
            g1_domain: None,
            g2_stack: names(&["A", "B", "C"]),
        };
        let r = TruncationRule::from_proportions(&t, &[1.0 / 3.0; 3]).unwrap();
        let v = r.threshold_values();
        assert!((v[0] + 0.430_727_299_295_457_5).abs() < 1e-9);
        assert!((v[1] - 0.430_727_299_295_457_5).abs() < 1e-9);
    }

    #[test]
    fn invalid_inputs() {
        let t = Topology {
            domains: names(&["A", "B"]),
            g1_domain: Some("A".into()),
            g2_stack: names(&["A"]),
        };
        assert!(t.validate().is_err());
        let t = Topology {
            domains: names(&["A", "B"]),
            g1_domain: Some("A".into()),
            g2_stack: names(&["C"]),
        };
        assert!(t.validate().is_err());
        let r = two_domain();
        assert!(TruncationRule::from_proportions(r.topology(), &[0.0, 1.0]).is_err());
        assert!(TruncationRule::from_proportions(r.topology(), &[0.4, 0.5]).is_err());
    }

    #[test]
    fn with_thresholds_keeps_order() {
        let t = Topology {
            domains: names(&["A", "B", "C"]),
            g1_domain: None,
            g2_stack: names(&["A", "B", "C"]),
        };
        let r = TruncationRule::from_proportions(&t, &[0.2, 0.3, 0.5]).unwrap();
        assert!(r.with_thresholds(&[0.5, 0.1]).is_err());
        let moved = r.with_thresholds(&[-0.5, 0.1]).unwrap();
        assert_eq!(moved.threshold_values(), vec![-0.5, 0.1]);
        assert!(r.with_thresholds(&[0.1]).is_err());
    }
}
