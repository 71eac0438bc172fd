//! Threshold re-optimization against accumulated categorical observations.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{confusion, modal_labels};
use crate::rng;
use crate::truncation::TruncationRule;

pub const DEFAULT_BUDGET: usize = 200;
pub const DEFAULT_HALF_WIDTH: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreWeights {
    pub w1: f64,
    pub w2: f64,
}

impl ScoreWeights {
    pub fn new(w1: f64, w2: f64) -> Result<Self> {
        if !(w1 >= 0.0 && w2 >= 0.0) || (w1 + w2 - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "score weights must be non-negative and sum to 1, got ({w1}, {w2})"
            )));
        }
        Ok(ScoreWeights { w1, w2 })
    }
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights { w1: 0.5, w2: 0.5 }
    }
}

/// `w1 * macro-F1 + w2 * G-Mean`. Classes absent from both sequences do not
/// enter the F1 average; G-Mean runs over classes present in the truth.
pub fn classification_score(truth: &[usize], pred: &[usize], weights: ScoreWeights) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::InvalidInput("cannot score empty label sequences".into()));
    }
    let n = truth.iter().chain(pred).max().map_or(0, |m| m + 1);
    let c = confusion(truth, pred, n)?;
    let f1: Vec<f64> = c.f1().into_iter().flatten().collect();
    let macro_f1 = f1.iter().sum::<f64>() / f1.len() as f64;
    let recalls: Vec<f64> = c.recall().into_iter().flatten().collect();
    let gmean = if recalls.contains(&0.0) {
        0.0
    } else {
        (recalls.iter().map(|r| r.ln()).sum::<f64>() / recalls.len() as f64).exp()
    };
    Ok(weights.w1 * macro_f1 + weights.w2 * gmean)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSearchSpace {
    pub bounds: Vec<(f64, f64)>,
    pub budget: usize,
    pub seed: u64,
}

impl ThresholdSearchSpace {
    /// Box of `prior ± half_width` around every threshold of `rule`.
    pub fn around(rule: &TruncationRule, half_width: f64, budget: usize, seed: u64) -> Self {
        ThresholdSearchSpace {
            bounds: rule
                .threshold_values()
                .iter()
                .map(|v| (v - half_width, v + half_width))
                .collect(),
            budget,
            seed,
        }
    }

    fn validate(&self, prior: &[f64]) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::InvalidInput("threshold search budget must be >= 1".into()));
        }
        if self.bounds.len() != prior.len() {
            return Err(Error::InvalidInput(format!(
                "search space has {} bounds for {} thresholds",
                self.bounds.len(),
                prior.len()
            )));
        }
        for (&(lo, hi), &v) in self.bounds.iter().zip(prior) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidInput(format!("invalid threshold bounds ({lo}, {hi})")));
            }
            if !(lo <= v && v <= hi) {
                return Err(Error::InvalidInput(format!(
                    "prior threshold {v} lies outside search bounds ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    fn candidate(&self, trial: usize) -> Vec<f64> {
        let mut r = rng::stream(self.seed, &[rng::tag::THRESHOLD, trial as u64]);
        self.bounds.iter().map(|&(lo, hi)| r.random_range(lo..hi)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub values: Vec<f64>,
    /// `None` when the candidate broke the rule layout and was skipped.
    pub score: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ThresholdOutcome {
    pub rule: TruncationRule,
    pub score: f64,
    pub prior_score: f64,
    pub trials: Vec<Trial>,
}

impl ThresholdOutcome {
    /// Audit trail: one row per trial with its threshold values and score.
    pub fn write_trials_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
        let mut header = vec!["trial".to_string()];
        header.extend(self.rule.thresholds().iter().map(|t| t.name.clone()));
        header.push("score".into());
        w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
        for t in &self.trials {
            let mut rec = vec![t.index.to_string()];
            rec.extend(t.values.iter().map(|v| format!("{v:.17}")));
            rec.push(t.score.map_or(String::new(), |s| format!("{s:.17}")));
            w.write_record(&rec).map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Modal label per observation across realizations under `rule`.
pub fn predict_labels(grf_at_obs: &[Vec<(f64, f64)>], rule: &TruncationRule) -> Vec<usize> {
    let per_real: Vec<Vec<usize>> = grf_at_obs
        .iter()
        .map(|r| r.iter().map(|&(g1, g2)| rule.truncate(g1, g2)).collect())
        .collect();
    modal_labels(&per_real, rule.n_domains())
}

/// Random search over `space`; trial 0 is always the prior rule.
///
/// `grf_at_obs[r][k]` holds realization `r`'s `(g1, g2)` at observation `k`.
pub fn optimise_thresholds(
    grf_at_obs: &[Vec<(f64, f64)>],
    labels: &[usize],
    rule: &TruncationRule,
    space: &ThresholdSearchSpace,
    weights: ScoreWeights,
) -> Result<ThresholdOutcome> {
    if grf_at_obs.is_empty() {
        return Err(Error::InvalidInput("no realizations to score".into()));
    }
    if let Some(r) = grf_at_obs.iter().position(|r| r.len() != labels.len()) {
        return Err(Error::InvalidInput(format!(
            "realization {r} has {} values for {} observation labels",
            grf_at_obs[r].len(),
            labels.len()
        )));
    }
    let prior = rule.threshold_values();
    space.validate(&prior)?;

    let trials: Vec<Trial> = (0..space.budget)
        .into_par_iter()
        .map(|i| {
            let values = if i == 0 { prior.clone() } else { space.candidate(i) };
            let score = match rule.with_thresholds(&values) {
                Ok(r) => Some(classification_score(labels, &predict_labels(grf_at_obs, &r), weights)?),
                Err(_) => None,
            };
            Ok(Trial { index: i, values, score })
        })
        .collect::<Result<_>>()?;

    let prior_score = trials[0].score.expect("prior rule is valid");
    let linf = |v: &[f64]| v.iter().zip(&prior).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut best = 0;
    for (i, t) in trials.iter().enumerate().skip(1) {
        let Some(s) = t.score else { continue };
        let b = trials[best].score.unwrap();
        if s > b || (s == b && linf(&t.values) < linf(&trials[best].values)) {
            best = i;
        }
    }
    Ok(ThresholdOutcome {
        rule: rule.with_thresholds(&trials[best].values)?,
        score: trials[best].score.unwrap(),
        prior_score,
        trials,
    })
}
