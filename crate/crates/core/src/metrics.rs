//! Evaluation metrics: confusion matrices, accuracy, MSE, R², and
//! per-block probability/accuracy maps.

use std::io::Write;
use std::path::Path;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};

/// Counts indexed by `(true, predicted)` class index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.n..(truth + 1) * self.n]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            return f64::NAN;
        }
        self.trace() as f64 / t as f64
    }

    pub fn true_count(&self, class: usize) -> u64 {
        self.row(class).iter().sum()
    }

    pub fn predicted_count(&self, class: usize) -> u64 {
        (0..self.n).map(|i| self.get(i, class)).sum()
    }

    /// Recall per class; `None` for classes absent from the truth.
    pub fn recall(&self) -> Vec<Option<f64>> {
        (0..self.n)
            .map(|c| {
                let t = self.true_count(c);
                (t > 0).then(|| self.get(c, c) as f64 / t as f64)
            })
            .collect()
    }

    /// F1 per class; `None` for classes absent from both truth and prediction.
    pub fn f1(&self) -> Vec<Option<f64>> {
        (0..self.n)
            .map(|c| {
                let tp = self.get(c, c);
                let denom = self.true_count(c) + self.predicted_count(c);
                (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Square table with a header row and a leading `true\pred` column.
    pub fn write_csv(&self, path: &Path, labels: &[String]) -> Result<()> {
        if labels.len() != self.n {
            return Err(Error::InvalidInput(format!(
                "{} labels for a {}-class confusion matrix",
                labels.len(),
                self.n
            )));
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
        let header: Vec<String> = std::iter::once("true\\pred".to_string())
            .chain(labels.iter().cloned())
            .collect();
        w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
        for (i, l) in labels.iter().enumerate() {
            let rec: Vec<String> = std::iter::once(l.clone())
                .chain(self.row(i).iter().map(u64::to_string))
                .collect();
            w.write_record(&rec).map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::InvalidInput(format!(
            "label sequences differ in length: {} vs {}",
            truth.len(),
            pred.len()
        )));
    }
    let mut m = ConfusionMatrix {
        n: n_classes,
        counts: vec![0; n_classes * n_classes],
    };
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::InvalidInput(format!(
                "label index {} out of range for {n_classes} classes",
                t.max(p)
            )));
        }
        m.counts[t * n_classes + p] += 1;
    }
    Ok(m)
}

fn check_aligned(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!("vectors differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("empty input".into()));
    }
    Ok(())
}

pub fn mse(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check_aligned(pred, obs)?;
    Ok(pred.iter().zip(obs).map(|(p, o)| (p - o).powi(2)).sum::<f64>() / obs.len() as f64)
}

/// `100 (1 - MSE_updated / MSE_prior)`; negative when the update made things worse.
pub fn mse_reduction(prior_pred: &[f64], updated_pred: &[f64], obs: &[f64]) -> Result<f64> {
    let before = mse(prior_pred, obs)?;
    let after = mse(updated_pred, obs)?;
    if before == 0.0 {
        return Err(Error::InvalidInput("prior MSE is zero; reduction undefined".into()));
    }
    Ok(100.0 * (1.0 - after / before))
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check_aligned(pred, obs)?;
    if obs.len() < 2 {
        return Err(Error::InvalidInput("R² needs at least 2 observations".into()));
    }
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    let ss_tot: f64 = obs.iter().map(|o| (o - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::InvalidInput("observations have zero variance".into()));
    }
    let ss_res: f64 = pred.iter().zip(obs).map(|(p, o)| (p - o).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMaps {
    pub modal: Vec<usize>,
    pub probability: Vec<f64>,
    pub accuracy: Option<Vec<f64>>,
}

/// Most frequent label per position; ties go to the lower label index.
pub fn modal_labels(realizations: &[Vec<usize>], n_domains: usize) -> Vec<usize> {
    probability_and_accuracy_maps(realizations, n_domains, None).modal
}

/// Per block: modal label across realizations, its frequency, and the
/// fraction of realizations matching `truth`.
pub fn probability_and_accuracy_maps(
    realizations: &[Vec<usize>],
    n_domains: usize,
    truth: Option<&[usize]>,
) -> ProbabilityMaps {
    let n_real = realizations.len();
    let n = realizations.first().map_or(0, Vec::len);
    let mut modal = Vec::with_capacity(n);
    let mut probability = Vec::with_capacity(n);
    let mut accuracy = truth.map(|_| Vec::with_capacity(n));
    let mut counts = vec![0usize; n_domains];
    for b in 0..n {
        counts.iter_mut().for_each(|c| *c = 0);
        for r in realizations {
            counts[r[b]] += 1;
        }
        let mut best = 0;
        for d in 1..n_domains {
            if counts[d] > counts[best] {
                best = d;
            }
        }
        modal.push(best);
        probability.push(counts[best] as f64 / n_real as f64);
        if let (Some(acc), Some(t)) = (accuracy.as_mut(), truth) {
            acc.push(counts[t[b]] as f64 / n_real as f64);
        }
    }
    ProbabilityMaps {
        modal,
        probability,
        accuracy,
    }
}

/// Integer domain labels of every realization of `var`.
pub fn ensemble_labels(ens: &Ensemble, var: &str, n_domains: usize) -> Result<Vec<Vec<usize>>> {
    let v = ens.require_var(var)?;
    (0..ens.n_real())
        .map(|r| {
            ens.values(r, v)
                .iter()
                .map(|&x| {
                    let d = x.round();
                    if d >= 0.0 && (d as usize) < n_domains && (x - d).abs() < 1e-6 {
                        Ok(d as usize)
                    } else {
                        Err(Error::Data(format!("invalid domain code {x} in realization {r}")))
                    }
                })
                .collect()
        })
        .collect()
}

/// One-line-per-metric plain text summary.
pub fn write_summary(path: &Path, lines: &[(String, f64)]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for (k, v) in lines {
        writeln!(f, "{k}: {v:.6}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
