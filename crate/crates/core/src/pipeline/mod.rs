//! Sequential rapid updating: per period, the neighbourhood of the new
//! observations is updated for domains and then for grades, and the
//! ensemble is checkpointed.

pub mod domains;
pub mod grades;
pub mod prior;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{Config, ThresholdSchedule};
use crate::ensemble::{vars, Ensemble};
use crate::error::{Error, Result};
use crate::format::{self, AuxSection};
use crate::grid::{extract_neighbourhood, GridSpec};
use crate::metrics;
use crate::observations::ObservationSet;
use crate::rng;
use crate::threshold::ScoreWeights;
use crate::truncation::TruncationRule;

pub use domains::{retruncate, update_domains_period, DomainUpdate, LabelledBlocks};
pub use grades::{update_grades_period, GradeObs, GradeSettings, GradeUpdate};
pub use prior::{build_prior, simulate_grade_prior};

/// Tuning knobs shared by the steps of one period.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodSettings {
    pub neighbourhood_k: usize,
    pub n_assimilations: usize,
    pub localization_radius: f64,
    pub gibbs_iterations: usize,
    pub grf_obs_noise_sd: f64,
    pub threshold_half_width: f64,
    pub threshold_budget: usize,
    pub weights: ScoreWeights,
}

impl PeriodSettings {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let p = &cfg.pipeline;
        Ok(PeriodSettings {
            neighbourhood_k: p.neighbourhood_k,
            n_assimilations: p.n_assimilations,
            localization_radius: p.localization_radius,
            gibbs_iterations: p.gibbs_iterations,
            grf_obs_noise_sd: p.grf_obs_noise_sd,
            threshold_half_width: p.threshold_half_width,
            threshold_budget: p.threshold_search_budget,
            weights: p.weights()?,
        })
    }
}

/// Metrics of one period. Undefined values are NaN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodResult {
    pub period: u32,
    pub n_obs: usize,
    pub n_updated_blocks: usize,
    pub grf_mse_before: [f64; 2],
    pub grf_mse_after: [f64; 2],
    /// Percent reduction of the ensemble-mean MSE at the period's
    /// observations, per GRF.
    pub grf_mse_reduction: [f64; 2],
    /// Modal label vs observed label at the period's observations.
    pub domain_accuracy: f64,
    pub score_before: f64,
    pub score_after: f64,
    pub thresholds: Vec<f64>,
    pub grade_mse_reduction: Vec<f64>,
    pub grade_r2: Vec<f64>,
    pub duration_s: f64,
}

impl PeriodResult {
    fn empty(period: u32, rule: &TruncationRule, n_grades: usize) -> Self {
        PeriodResult {
            period,
            n_obs: 0,
            n_updated_blocks: 0,
            grf_mse_before: [0.0; 2],
            grf_mse_after: [0.0; 2],
            grf_mse_reduction: [0.0; 2],
            domain_accuracy: f64::NAN,
            score_before: f64::NAN,
            score_after: f64::NAN,
            thresholds: rule.threshold_values(),
            grade_mse_reduction: vec![0.0; n_grades],
            grade_r2: vec![f64::NAN; n_grades],
            duration_s: 0.0,
        }
    }
}

/// Gibbs value assimilated at a block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrfObservation {
    pub period: u32,
    pub block: usize,
    pub values: [f64; 2],
}

/// Everything a run carries from one period to the next.
#[derive(Clone, Debug)]
pub struct SequenceState {
    pub ensemble: Ensemble,
    pub rule: TruncationRule,
    pub next_period: u32,
    pub results: Vec<PeriodResult>,
    pub grf_observations: Vec<GrfObservation>,
}

/// A configured run over one observation set.
pub struct Sequence<'a> {
    cfg: &'a Config,
    observations: &'a ObservationSet,
    prior_rule: TruncationRule,
    settings: PeriodSettings,
    grade_settings: Option<GradeSettings>,
    /// Observation column of each configured grade variable.
    grade_columns: Vec<usize>,
    n_periods: u32,
}

fn reduction(before: f64, after: f64) -> f64 {
    if before > 0.0 {
        100.0 * (1.0 - after / before)
    } else {
        0.0
    }
}

impl<'a> Sequence<'a> {
    /// `observations` must be bound to the config grid.
    pub fn new(cfg: &'a Config, observations: &'a ObservationSet) -> Result<Self> {
        if observations.records.iter().any(|r| r.block.is_none()) {
            return Err(Error::InvalidInput("observations are not bound to the grid".into()));
        }
        if observations.domains != cfg.rule.domains {
            return Err(Error::Data(format!(
                "observation domains {:?} differ from configured domains {:?}",
                observations.domains, cfg.rule.domains
            )));
        }
        let grade_columns = cfg
            .grade_variables()
            .iter()
            .map(|v| {
                observations
                    .variables
                    .iter()
                    .position(|x| x == v)
                    .ok_or_else(|| Error::Data(format!("observations have no grade column {v:?}")))
            })
            .collect::<Result<_>>()?;
        let grade_settings = cfg.grades.as_ref().map(|g| GradeSettings {
            factor_noise_sd: g.factor_noise_sd,
            min_domain_obs: g.min_domain_obs,
            tail_pass: g.tail_pass,
            extreme_percentile: cfg.pipeline.extreme_percentile,
            rbig_max_iterations: cfg.pipeline.rbig_max_iterations,
        });
        Ok(Sequence {
            cfg,
            observations,
            prior_rule: cfg.rule.build()?,
            settings: PeriodSettings::from_config(cfg)?,
            grade_settings,
            grade_columns,
            n_periods: observations.n_periods(),
        })
    }

    pub fn n_periods(&self) -> u32 {
        self.n_periods
    }

    pub fn prior_rule(&self) -> &TruncationRule {
        &self.prior_rule
    }

    pub fn grid(&self) -> &GridSpec {
        &self.cfg.grid
    }

    /// Overrides the tail pass, for A/B comparisons.
    pub fn set_tail_pass(&mut self, on: bool) {
        if let Some(g) = self.grade_settings.as_mut() {
            g.tail_pass = on;
        }
    }

    pub fn initial_state(&self, mut prior: Ensemble) -> Result<SequenceState> {
        prior.check_grid(&self.cfg.grid)?;
        for v in [vars::G1, vars::G2, vars::DOMAIN] {
            prior.require_var(v)?;
        }
        prior.quantize_to_storage();
        Ok(SequenceState {
            ensemble: prior,
            rule: self.prior_rule.clone(),
            next_period: 0,
            results: Vec::new(),
            grf_observations: Vec::new(),
        })
    }

    fn grade_vars(&self, ens: &Ensemble) -> Option<Vec<usize>> {
        self.grade_settings.as_ref()?;
        self.cfg
            .grade_variables()
            .iter()
            .map(|v| ens.var_index(v))
            .collect::<Option<Vec<_>>>()
            .filter(|v| !v.is_empty())
    }

    fn grade_obs(&self, period: impl Fn(u32) -> bool) -> Vec<GradeObs> {
        self.observations
            .records
            .iter()
            .filter(|r| period(r.period))
            .filter_map(|r| {
                let grades: Option<Vec<f64>> = self.grade_columns.iter().map(|&c| r.grades[c]).collect();
                Some(GradeObs {
                    block: r.block?,
                    domain: r.domain?,
                    grades: grades?,
                })
            })
            .collect()
    }

    fn labelled(&self, period: impl Fn(u32) -> bool) -> LabelledBlocks {
        let (blocks, labels) = self
            .observations
            .records
            .iter()
            .filter(|r| period(r.period))
            .filter_map(|r| Some((r.block?, r.domain?)))
            .unzip();
        LabelledBlocks { blocks, labels }
    }

    /// Processes period `state.next_period` and advances the state.
    pub fn step(&self, state: &mut SequenceState) -> Result<PeriodResult> {
        let t = state.next_period;
        let start = Instant::now();
        let grid = &self.cfg.grid;
        let grade_vars = self.grade_vars(&state.ensemble);
        let n_grades = self.grade_columns.len();
        let obs_blocks: Vec<usize> = self
            .observations
            .records
            .iter()
            .filter(|r| r.period == t)
            .filter_map(|r| r.block)
            .collect();
        if obs_blocks.is_empty() {
            let r = PeriodResult::empty(t, &state.rule, n_grades);
            state.results.push(r.clone());
            state.next_period += 1;
            return Ok(r);
        }
        let seed = rng::derive_seed(self.cfg.pipeline.rng_seed, &[rng::tag::PERIOD, t as u64]);
        let neighbourhood = extract_neighbourhood(grid, &obs_blocks, self.settings.neighbourhood_k)?;
        let current = self.labelled(|p| p == t);
        let grade_current = self.grade_obs(|p| p == t);
        let ens = &mut state.ensemble;
        let grade_before: Vec<Vec<f64>> = match &grade_vars {
            Some(gv) => gv.iter().map(|&v| ens.mean(v)).collect(),
            None => Vec::new(),
        };

        let mut result = PeriodResult::empty(t, &state.rule, n_grades);
        result.n_obs = obs_blocks.len();
        result.n_updated_blocks = neighbourhood.len();
        if !current.blocks.is_empty() {
            let optimise = match self.cfg.pipeline.threshold_schedule {
                ThresholdSchedule::EveryPeriod => true,
                ThresholdSchedule::FinalPeriod => t + 1 == self.n_periods,
                ThresholdSchedule::Off => false,
            };
            let history = self.labelled(|p| p <= t);
            let up = update_domains_period(
                ens,
                grid,
                &current,
                &history,
                &neighbourhood,
                &self.prior_rule,
                &state.rule,
                [&self.cfg.variograms.g1, &self.cfg.variograms.g2],
                &self.settings,
                optimise,
                seed,
            )?;
            for (k, &b) in current.blocks.iter().enumerate() {
                state.grf_observations.push(GrfObservation {
                    period: t,
                    block: b,
                    values: [up.grf_observations[0][k], up.grf_observations[1][k]],
                });
            }
            result.grf_mse_before = up.mse_before;
            result.grf_mse_after = up.mse_after;
            result.grf_mse_reduction = [0, 1].map(|a| reduction(up.mse_before[a], up.mse_after[a]));
            result.score_before = up.score_before.unwrap_or(f64::NAN);
            result.score_after = up.score_after.unwrap_or(f64::NAN);
            state.rule = up.rule;
            result.thresholds = state.rule.threshold_values();
            let modal = grades::modal_at(ens, &current.blocks, state.rule.n_domains())?;
            let hits = modal.iter().zip(&current.labels).filter(|(a, b)| a == b).count();
            result.domain_accuracy = hits as f64 / current.labels.len() as f64;
        }

        if let (Some(gv), Some(gs)) = (&grade_vars, &self.grade_settings) {
            if !grade_current.is_empty() {
                let history = self.grade_obs(|p| p <= t);
                update_grades_period(
                    ens,
                    grid,
                    &grade_current,
                    &history,
                    &neighbourhood,
                    gv,
                    state.rule.n_domains(),
                    &self.settings,
                    gs,
                    rng::derive_seed(seed, &[rng::tag::GRADES]),
                )?;
                for (j, &v) in gv.iter().enumerate() {
                    let after = ens.mean(v);
                    let obs: Vec<f64> = grade_current.iter().map(|o| o.grades[j]).collect();
                    let pick = |m: &[f64]| grade_current.iter().map(|o| m[o.block]).collect::<Vec<_>>();
                    let (pb, pa) = (pick(&grade_before[j]), pick(&after));
                    result.grade_mse_reduction[j] = metrics::mse_reduction(&pb, &pa, &obs).unwrap_or(0.0);
                    result.grade_r2[j] = metrics::r2(&pa, &obs).unwrap_or(f64::NAN);
                }
            }
        }

        ens.quantize_to_storage();
        if ens.has_non_finite() {
            return Err(Error::Numerical(format!("period {t} produced non-finite values")));
        }
        result.duration_s = start.elapsed().as_secs_f64();
        state.results.push(result.clone());
        state.next_period += 1;
        Ok(result)
    }

    /// Runs the remaining periods, checkpointing after each one, then applies
    /// the final re-truncation when configured.
    pub fn run(&self, state: &mut SequenceState, checkpoint: Option<&Path>) -> Result<()> {
        while state.next_period < self.n_periods {
            let r = self.step(state)?;
            log::info!(
                "period {}: {} observations, {} blocks, accuracy {:.4}",
                r.period,
                r.n_obs,
                r.n_updated_blocks,
                r.domain_accuracy
            );
            if let Some(p) = checkpoint {
                write_checkpoint(p, state)?;
            }
        }
        self.finish(state)
    }

    pub fn finish(&self, state: &mut SequenceState) -> Result<()> {
        if self.cfg.pipeline.final_retruncate {
            let n = state.ensemble.n_blocks();
            retruncate(&mut state.ensemble, &state.rule, 0..n)?;
        }
        Ok(())
    }
}

/// Runs every period of `observations` on `prior`.
pub fn run_sequence(cfg: &Config, prior: Ensemble, observations: &ObservationSet) -> Result<SequenceState> {
    let seq = Sequence::new(cfg, observations)?;
    let mut state = seq.initial_state(prior)?;
    seq.run(&mut state, None)?;
    Ok(state)
}

#[derive(Serialize, Deserialize)]
struct ResultList {
    periods: Vec<PeriodResult>,
}

const TAG_RULE: [u8; 4] = *b"THRS";
const TAG_NEXT: [u8; 4] = *b"NEXT";
const TAG_RESULTS: [u8; 4] = *b"RSLT";
const TAG_GRF: [u8; 4] = *b"GOBS";

/// Ensemble file with the run state in auxiliary sections.
pub fn write_checkpoint(path: &Path, state: &SequenceState) -> Result<()> {
    let thresholds: Vec<u8> = state
        .rule
        .threshold_values()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    let results = toml::to_string(&ResultList {
        periods: state.results.clone(),
    })
    .map_err(|e| Error::Format(format!("cannot encode period results: {e}")))?;
    let mut grf = Vec::with_capacity(state.grf_observations.len() * 28);
    for g in &state.grf_observations {
        grf.extend(g.period.to_le_bytes());
        grf.extend((g.block as u64).to_le_bytes());
        grf.extend(g.values[0].to_le_bytes());
        grf.extend(g.values[1].to_le_bytes());
    }
    let aux = [
        AuxSection {
            tag: TAG_RULE,
            bytes: thresholds,
        },
        AuxSection {
            tag: TAG_NEXT,
            bytes: state.next_period.to_le_bytes().to_vec(),
        },
        AuxSection {
            tag: TAG_RESULTS,
            bytes: results.into_bytes(),
        },
        AuxSection { tag: TAG_GRF, bytes: grf },
    ];
    // write then rename so an interrupted write never clobbers the last checkpoint
    let tmp = path.with_extension("tmp");
    format::write_ensemble_with_aux(&tmp, &state.ensemble, &aux)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Restores a state saved by [`write_checkpoint`]; `rule` supplies the
/// layout the saved thresholds belong to.
pub fn read_checkpoint(path: &Path, grid: &GridSpec, rule: &TruncationRule) -> Result<SequenceState> {
    let (ensemble, aux) = format::read_ensemble_with_aux(path)?;
    ensemble.check_grid(grid)?;
    let section = |tag: [u8; 4]| {
        aux.iter()
            .find(|a| a.tag == tag)
            .map(|a| a.bytes.as_slice())
            .ok_or_else(|| {
                Error::Format(format!(
                    "{}: not a checkpoint (missing {} section)",
                    path.display(),
                    String::from_utf8_lossy(&tag)
                ))
            })
    };
    let f64s = |b: &[u8]| -> Vec<f64> {
        b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let rule = rule.with_thresholds(&f64s(section(TAG_RULE)?))?;
    let next = section(TAG_NEXT)?;
    let next_period = u32::from_le_bytes(
        next.try_into()
            .map_err(|_| Error::Format("checkpoint period field is truncated".into()))?,
    );
    let text = std::str::from_utf8(section(TAG_RESULTS)?)
        .map_err(|e| Error::Format(format!("checkpoint results: {e}")))?;
    let results = toml::from_str::<ResultList>(text)
        .map_err(|e| Error::Format(format!("checkpoint results: {e}")))?
        .periods;
    let grf_observations = section(TAG_GRF)?
        .chunks_exact(28)
        .map(|c| GrfObservation {
            period: u32::from_le_bytes(c[0..4].try_into().unwrap()),
            block: u64::from_le_bytes(c[4..12].try_into().unwrap()) as usize,
            values: [
                f64::from_le_bytes(c[12..20].try_into().unwrap()),
                f64::from_le_bytes(c[20..28].try_into().unwrap()),
            ],
        })
        .collect();
    Ok(SequenceState {
        ensemble,
        rule,
        next_period,
        results,
        grf_observations,
    })
}

fn cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.6}")
    }
}

/// One row per period. NaN metrics are written as empty cells.
pub fn write_period_csv(
    path: &Path,
    results: &[PeriodResult],
    rule: &TruncationRule,
    grade_names: &[String],
    with_timing: bool,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    let mut header: Vec<String> = [
        "period",
        "n_obs",
        "n_updated_blocks",
        "g1_mse_before",
        "g1_mse_after",
        "g1_mse_reduction",
        "g2_mse_before",
        "g2_mse_after",
        "g2_mse_reduction",
        "domain_accuracy",
        "score_before",
        "score_after",
    ]
    .map(String::from)
    .to_vec();
    header.extend(rule.thresholds().iter().map(|t| format!("threshold_{}", t.name)));
    for g in grade_names {
        header.push(format!("{g}_mse_reduction"));
        header.push(format!("{g}_r2"));
    }
    if with_timing {
        header.push("duration_s".into());
    }
    w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
    for r in results {
        let mut row = vec![r.period.to_string(), r.n_obs.to_string(), r.n_updated_blocks.to_string()];
        for a in 0..2 {
            row.extend([r.grf_mse_before[a], r.grf_mse_after[a], r.grf_mse_reduction[a]].map(cell));
        }
        row.extend([r.domain_accuracy, r.score_before, r.score_after].map(cell));
        row.extend(r.thresholds.iter().map(|&v| cell(v)));
        for j in 0..grade_names.len() {
            row.push(cell(r.grade_mse_reduction[j]));
            row.push(cell(r.grade_r2[j]));
        }
        if with_timing {
            row.push(format!("{:.3}", r.duration_s));
        }
        w.write_record(&row).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Prior-vs-final reconciliation at every assimilated observation.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSummary {
    pub domain_accuracy_prior: f64,
    pub domain_accuracy_final: f64,
    pub grf_mse_reduction: [f64; 2],
    pub grade_mse_reduction: Vec<f64>,
    pub grade_r2_prior: Vec<f64>,
    pub grade_r2_final: Vec<f64>,
}

impl SequenceSummary {
    pub fn lines(&self, grade_names: &[String]) -> Vec<(String, f64)> {
        let mut out = vec![
            ("domain_accuracy_prior".to_string(), self.domain_accuracy_prior),
            ("domain_accuracy_final".into(), self.domain_accuracy_final),
            ("g1_mse_reduction".into(), self.grf_mse_reduction[0]),
            ("g2_mse_reduction".into(), self.grf_mse_reduction[1]),
        ];
        for (j, g) in grade_names.iter().enumerate() {
            out.push((format!("{g}_mse_reduction"), self.grade_mse_reduction[j]));
            out.push((format!("{g}_r2_prior"), self.grade_r2_prior[j]));
            out.push((format!("{g}_r2_final"), self.grade_r2_final[j]));
        }
        out
    }
}

/// Compares `prior` and `fin` at all observations of `seq`.
pub fn summarize(seq: &Sequence<'_>, prior: &Ensemble, state: &SequenceState) -> Result<SequenceSummary> {
    let fin = &state.ensemble;
    let labelled = seq.labelled(|_| true);
    let nd = state.rule.n_domains();
    let acc = |e: &Ensemble| -> Result<f64> {
        if labelled.blocks.is_empty() {
            return Ok(f64::NAN);
        }
        let m = grades::modal_at(e, &labelled.blocks, nd)?;
        Ok(m.iter().zip(&labelled.labels).filter(|(a, b)| a == b).count() as f64 / m.len() as f64)
    };
    let mut grf = [f64::NAN; 2];
    if !state.grf_observations.is_empty() {
        for (a, name) in [vars::G1, vars::G2].into_iter().enumerate() {
            let (mp, mf) = (prior.mean(prior.require_var(name)?), fin.mean(fin.require_var(name)?));
            let obs: Vec<f64> = state.grf_observations.iter().map(|g| g.values[a]).collect();
            let pick = |m: &[f64]| state.grf_observations.iter().map(|g| m[g.block]).collect::<Vec<_>>();
            grf[a] = metrics::mse_reduction(&pick(&mp), &pick(&mf), &obs).unwrap_or(f64::NAN);
        }
    }
    let gobs = seq.grade_obs(|_| true);
    let names = seq.cfg.grade_variables();
    let (mut red, mut r2p, mut r2f) = (Vec::new(), Vec::new(), Vec::new());
    for (j, name) in names.iter().enumerate() {
        let (Some(vp), Some(vf)) = (prior.var_index(name), fin.var_index(name)) else {
            red.push(f64::NAN);
            r2p.push(f64::NAN);
            r2f.push(f64::NAN);
            continue;
        };
        let (mp, mf) = (prior.mean(vp), fin.mean(vf));
        let obs: Vec<f64> = gobs.iter().map(|o| o.grades[j]).collect();
        let pick = |m: &[f64]| gobs.iter().map(|o| m[o.block]).collect::<Vec<_>>();
        red.push(metrics::mse_reduction(&pick(&mp), &pick(&mf), &obs).unwrap_or(f64::NAN));
        r2p.push(metrics::r2(&pick(&mp), &obs).unwrap_or(f64::NAN));
        r2f.push(metrics::r2(&pick(&mf), &obs).unwrap_or(f64::NAN));
    }
    Ok(SequenceSummary {
        domain_accuracy_prior: acc(prior)?,
        domain_accuracy_final: acc(fin)?,
        grf_mse_reduction: grf,
        grade_mse_reduction: red,
        grade_r2_prior: r2p,
        grade_r2_final: r2f,
    })
}
