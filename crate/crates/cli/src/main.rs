//! `rapidpgs` command-line driver.
//!
//! Exit codes: 0 success, 1 runtime or numerical failure, 2 configuration
//! error (including bad flags), 3 data or file-format error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rapidpgs::config::Config;
use rapidpgs::ensemble::vars;
use rapidpgs::format;
use rapidpgs::metrics;
use rapidpgs::pipeline::{self, Sequence};
use rapidpgs::raster;
use rapidpgs::synthetic::{self, SyntheticSpec};
use rapidpgs::{Ensemble, Error, ObservationSet};

#[derive(Parser)]
#[command(name = "rapidpgs", version, about = "Rapid updating of pluri-Gaussian domain and grade models")]
struct Cli {
    /// Cap on worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(short, long)]
    config: PathBuf,

    /// Overrides the configured random seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory, created if absent.
    #[arg(short, long, default_value = "out")]
    output: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the prior ensemble of domains and grades.
    Prior {
        #[command(flatten)]
        common: Common,
        /// Conditioning data (defaults to `prior.data` in the config).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides `prior.n_realizations`.
        #[arg(long)]
        realizations: Option<usize>,
    },
    /// Generate a synthetic truth with sampled observations.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Assimilate observations period by period.
    Update {
        #[command(flatten)]
        common: Common,
        /// Prior ensemble file.
        #[arg(long)]
        ensemble: PathBuf,
        /// Observation CSV: x,y,z,period,domain, then grade columns.
        #[arg(long)]
        observations: PathBuf,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many periods; the checkpoint is kept.
        #[arg(long)]
        max_periods: Option<u32>,
    },
    /// Score an ensemble against a truth domain raster.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Ensemble file to read.
        #[arg(long)]
        ensemble: PathBuf,
        /// Domain-index raster (CSV) of the truth.
        #[arg(long)]
        truth: PathBuf,
    },
    /// Write a summary raster of one ensemble variable.
    Export {
        #[command(flatten)]
        common: Common,
        /// Ensemble file to read.
        #[arg(long)]
        ensemble: PathBuf,
        /// Variable name: `domain`, `g1`, `g2` or a grade variable.
        #[arg(long, default_value = vars::DOMAIN)]
        var: String,
        /// Summary over realizations.
        #[arg(long, value_enum, default_value_t = Stat::Mean)]
        stat: Stat,
        /// Realization index for `--stat realization`.
        #[arg(long, default_value_t = 0)]
        realization: usize,
        /// Raster format; `pgm` is a greyscale image.
        #[arg(long, value_enum, default_value_t = RasterFormat::Csv)]
        format: RasterFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Stat {
    Mean,
    Sd,
    Modal,
    Realization,
}

#[derive(Clone, Copy, ValueEnum)]
enum RasterFormat {
    Csv,
    Pgm,
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Row { .. } | Error::Format(_) | Error::Io { .. } | Error::InvalidInput(_) => 3,
        Error::Numerical(_) => 1,
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = error.downcast_ref::<Error>().map_or(1, exit_code);
        Failure { code, error }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            error: e.into(),
        }
    }
}

type Run<T = ()> = Result<T, Failure>;

trait AsConfigError<T> {
    /// Any failure while reading the configuration is a configuration error.
    fn config_error(self) -> Run<T>;
}

impl<T> AsConfigError<T> for rapidpgs::Result<T> {
    fn config_error(self) -> Run<T> {
        self.map_err(|e| Failure {
            code: 2,
            error: e.into(),
        })
    }
}

fn load_config(common: &Common) -> Run<Config> {
    let mut cfg = Config::load(&common.config).config_error()?;
    if let Some(seed) = common.seed {
        cfg.pipeline.rng_seed = seed;
        if let Some(s) = cfg.synthetic.as_mut() {
            s.seed = Some(seed);
        }
    }
    cfg.validate().config_error()?;
    fs::create_dir_all(&common.output)
        .with_context(|| format!("cannot create {}", common.output.display()))
        .map_err(|error| Failure { code: 3, error })?;
    Ok(cfg)
}

fn load_observations(cfg: &Config, path: &Path) -> Run<ObservationSet> {
    let vars = cfg.grade_variables();
    let expected = (!vars.is_empty()).then_some(vars.as_slice());
    Ok(rapidpgs::load_observations(
        path,
        &cfg.rule.domains,
        expected,
        Some(&cfg.grid),
    )?)
}

fn print_table(rows: &[(String, String)]) {
    let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    for (k, v) in rows {
        println!("{k:<w$}  {v}");
    }
}

fn row(k: impl Into<String>, v: impl ToString) -> (String, String) {
    (k.into(), v.to_string())
}

fn modal_domain(ens: &Ensemble, n_domains: usize) -> Run<Vec<usize>> {
    let labels = metrics::ensemble_labels(ens, vars::DOMAIN, n_domains)?;
    Ok(metrics::modal_labels(&labels, n_domains))
}

fn as_f64(labels: &[usize]) -> Vec<f64> {
    labels.iter().map(|&l| l as f64).collect()
}

fn cmd_prior(common: &Common, data: Option<&Path>, realizations: Option<usize>) -> Run {
    let mut cfg = load_config(common)?;
    if let Some(n) = realizations {
        cfg.prior.n_realizations = n;
        cfg.validate().config_error()?;
    }
    let data_path = data.map(Path::to_path_buf).or_else(|| cfg.prior.data.clone());
    let data = match &data_path {
        Some(p) => load_observations(&cfg, p)?,
        None => ObservationSet::new(cfg.rule.domains.clone(), cfg.grade_variables()),
    };
    let start = Instant::now();
    let ens = pipeline::build_prior(&cfg, &data, cfg.pipeline.rng_seed)?;
    let out = &common.output;
    format::write_ensemble(&out.join("prior.rpgs"), &ens)?;
    let nd = cfg.rule.domains.len();
    let modal = modal_domain(&ens, nd)?;
    raster::write_csv(&out.join("prior_modal_domain.csv"), &cfg.grid, &as_f64(&modal))?;
    raster::write_pgm(&out.join("prior_modal_domain.pgm"), &cfg.grid, &as_f64(&modal))?;

    let mut rows = vec![
        row("realizations", ens.n_real()),
        row("blocks", ens.n_blocks()),
        row("variables", ens.var_names().join(",")),
        row("conditioning data", data.len()),
    ];
    let counts = metrics::ensemble_labels(&ens, vars::DOMAIN, nd)?
        .iter()
        .flatten()
        .fold(vec![0usize; nd], |mut c, &l| {
            c[l] += 1;
            c
        });
    let total = (ens.n_real() * ens.n_blocks()) as f64;
    for (d, name) in cfg.rule.domains.iter().enumerate() {
        rows.push(row(format!("proportion {name}"), format!("{:.4}", counts[d] as f64 / total)));
    }
    rows.push(row("seconds", format!("{:.1}", start.elapsed().as_secs_f64())));
    print_table(&rows);
    Ok(())
}

fn cmd_synth(common: &Common) -> Run {
    let cfg = load_config(common)?;
    let spec = SyntheticSpec::from_config(&cfg).config_error()?;
    let truth = synthetic::generate_truth(&spec)?;
    let obs = synthetic::sample_observations(&truth, spec.sampling_fraction, spec.n_periods, spec.seed)?;
    let drill = synthetic::sample_drillholes(&truth, spec.drill_fraction, spec.seed)?;
    let out = &common.output;
    obs.write_csv(&out.join("observations.csv"))?;
    drill.write_csv(&out.join("drillholes.csv"))?;
    format::write_ensemble(&out.join("truth.rpgs"), &truth.to_ensemble()?)?;
    let domain = as_f64(&truth.domain);
    raster::write_csv(&out.join("truth_domain.csv"), &cfg.grid, &domain)?;
    raster::write_pgm(&out.join("truth_domain.pgm"), &cfg.grid, &domain)?;
    raster::write_csv(&out.join("truth_g1.csv"), &cfg.grid, &truth.grf[0])?;
    raster::write_csv(&out.join("truth_g2.csv"), &cfg.grid, &truth.grf[1])?;
    for (name, values) in truth.variables.iter().zip(&truth.grades) {
        raster::write_csv(&out.join(format!("truth_{name}.csv")), &cfg.grid, values)?;
    }

    let mut rows = vec![
        row("blocks", cfg.grid.n_blocks()),
        row("observations", obs.len()),
        row("periods", obs.n_periods()),
        row("drillhole samples", drill.len()),
    ];
    for (name, p) in truth.domains.iter().zip(truth.proportions()) {
        rows.push(row(format!("proportion {name}"), format!("{p:.4}")));
    }
    print_table(&rows);
    Ok(())
}

fn cmd_update(
    common: &Common,
    ensemble: &Path,
    observations: &Path,
    resume: bool,
    max_periods: Option<u32>,
) -> Run {
    let cfg = load_config(common)?;
    let prior = format::read_ensemble_for_grid(ensemble, &cfg.grid)?;
    let obs = load_observations(&cfg, observations)?;
    let seq = Sequence::new(&cfg, &obs)?;
    let out = &common.output;
    let checkpoint = out.join("checkpoint.rpgs");
    let mut state = if resume && checkpoint.exists() {
        let s = pipeline::read_checkpoint(&checkpoint, &cfg.grid, seq.prior_rule())?;
        log::info!("resuming at period {}", s.next_period);
        s
    } else {
        if resume {
            log::warn!("no checkpoint in {}; starting from the prior", out.display());
        }
        seq.initial_state(prior.clone())?
    };

    let start = Instant::now();
    let mut done = 0;
    while state.next_period < seq.n_periods() {
        if max_periods.is_some_and(|m| done >= m) {
            print_table(&[
                row("status", "stopped"),
                row("next period", state.next_period),
                row("periods", seq.n_periods()),
            ]);
            return Ok(());
        }
        let r = seq.step(&mut state)?;
        log::info!(
            "period {}: {} observations, {} blocks, accuracy {:.4}, {:.2} s",
            r.period,
            r.n_obs,
            r.n_updated_blocks,
            r.domain_accuracy,
            r.duration_s
        );
        pipeline::write_checkpoint(&checkpoint, &state)?;
        done += 1;
    }
    seq.finish(&mut state)?;

    let names = cfg.grade_variables();
    format::write_ensemble(&out.join("updated.rpgs"), &state.ensemble)?;
    pipeline::write_period_csv(&out.join("periods.csv"), &state.results, &state.rule, &names, false)?;
    state.rule.write_thresholds_csv(&out.join("thresholds.csv"))?;
    let summary = pipeline::summarize(&seq, &prior, &state)?;
    let lines = summary.lines(&names);
    metrics::write_summary(&out.join("summary.csv"), &lines)?;
    let modal = modal_domain(&state.ensemble, cfg.rule.domains.len())?;
    raster::write_csv(&out.join("updated_modal_domain.csv"), &cfg.grid, &as_f64(&modal))?;

    let mut rows = vec![row("periods", state.results.len())];
    rows.extend(lines.iter().map(|(k, v)| row(k.clone(), format!("{v:.4}"))));
    rows.push(row("seconds", format!("{:.1}", start.elapsed().as_secs_f64())));
    print_table(&rows);
    Ok(())
}

fn read_labels(path: &Path, cfg: &Config) -> Run<Vec<usize>> {
    let nd = cfg.rule.domains.len();
    raster::read_csv(path, &cfg.grid)?
        .into_iter()
        .enumerate()
        .map(|(b, v)| {
            if v >= 0.0 && v.fract() == 0.0 && (v as usize) < nd {
                Ok(v as usize)
            } else {
                Err(Failure {
                    code: 3,
                    error: anyhow!("{}: block {b} holds {v}, not a domain index below {nd}", path.display()),
                })
            }
        })
        .collect()
}

fn cmd_evaluate(common: &Common, ensemble: &Path, truth: &Path) -> Run {
    let cfg = load_config(common)?;
    let ens = format::read_ensemble_for_grid(ensemble, &cfg.grid)?;
    let truth = read_labels(truth, &cfg)?;
    let nd = cfg.rule.domains.len();
    let labels = metrics::ensemble_labels(&ens, vars::DOMAIN, nd)?;
    let maps = metrics::probability_and_accuracy_maps(&labels, nd, Some(&truth));
    let cm = metrics::confusion(&truth, &maps.modal, nd)?;
    let out = &common.output;
    let grid = &cfg.grid;
    cm.write_csv(&out.join("confusion.csv"), &cfg.rule.domains)?;
    raster::write_csv(&out.join("modal_domain.csv"), grid, &as_f64(&maps.modal))?;
    raster::write_csv(&out.join("modal_probability.csv"), grid, &maps.probability)?;
    if let Some(acc) = &maps.accuracy {
        raster::write_csv(&out.join("accuracy.csv"), grid, acc)?;
        raster::write_pgm(&out.join("accuracy.pgm"), grid, acc)?;
    }
    for (d, name) in cfg.rule.domains.iter().enumerate() {
        let p: Vec<f64> = (0..grid.n_blocks())
            .map(|b| labels.iter().filter(|r| r[b] == d).count() as f64 / labels.len() as f64)
            .collect();
        raster::write_csv(&out.join(format!("probability_{name}.csv")), grid, &p)?;
    }

    let mut lines = vec![("accuracy".to_string(), cm.accuracy())];
    for (name, r) in cfg.rule.domains.iter().zip(cm.recall()) {
        lines.push((format!("accuracy {name}"), r.unwrap_or(f64::NAN)));
    }
    let score = rapidpgs::classification_score(&truth, &maps.modal, cfg.pipeline.weights().config_error()?)?;
    lines.push(("score".to_string(), score));
    metrics::write_summary(&out.join("evaluation.csv"), &lines)?;
    let rows: Vec<_> = lines.iter().map(|(k, v)| row(k.clone(), format!("{v:.4}"))).collect();
    print_table(&rows);
    Ok(())
}

fn cmd_export(
    common: &Common,
    ensemble: &Path,
    var: &str,
    stat: Stat,
    realization: usize,
    fmt: RasterFormat,
) -> Run {
    let cfg = load_config(common)?;
    let ens = format::read_ensemble_for_grid(ensemble, &cfg.grid)?;
    let v = ens.require_var(var)?;
    let (values, tag) = match stat {
        Stat::Mean => (ens.mean(v), "mean".to_string()),
        Stat::Sd => {
            let mean = ens.mean(v);
            let n = ens.n_real() as f64;
            let sd = (0..ens.n_blocks())
                .map(|b| {
                    let ss: f64 = (0..ens.n_real()).map(|r| (ens.values(r, v)[b] - mean[b]).powi(2)).sum();
                    (ss / (n - 1.0).max(1.0)).sqrt()
                })
                .collect();
            (sd, "sd".to_string())
        }
        Stat::Modal => {
            if var != vars::DOMAIN {
                return Err(Failure {
                    code: 2,
                    error: anyhow!("--stat modal applies to the {} variable only", vars::DOMAIN),
                });
            }
            (as_f64(&modal_domain(&ens, cfg.rule.domains.len())?), "modal".to_string())
        }
        Stat::Realization => {
            if realization >= ens.n_real() {
                return Err(Failure {
                    code: 3,
                    error: anyhow!("realization {realization} out of range ({} in file)", ens.n_real()),
                });
            }
            (ens.values(realization, v).to_vec(), format!("r{realization}"))
        }
    };
    let path = match fmt {
        RasterFormat::Csv => common.output.join(format!("{var}_{tag}.csv")),
        RasterFormat::Pgm => common.output.join(format!("{var}_{tag}.pgm")),
    };
    match fmt {
        RasterFormat::Csv => raster::write_csv(&path, &cfg.grid, &values)?,
        RasterFormat::Pgm => raster::write_pgm(&path, &cfg.grid, &values)?,
    }
    let finite: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    print_table(&[
        row("file", path.display()),
        row("min", format!("{lo:.4}")),
        row("max", format!("{hi:.4}")),
    ]);
    Ok(())
}

fn run(cli: Cli) -> Run {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure {
                code: 2,
                error: anyhow!("--threads {n}: {e}"),
            })?;
    }
    match &cli.command {
        Command::Prior {
            common,
            data,
            realizations,
        } => cmd_prior(common, data.as_deref(), *realizations),
        Command::Synth { common } => cmd_synth(common),
        Command::Update {
            common,
            ensemble,
            observations,
            resume,
            max_periods,
        } => cmd_update(common, ensemble, observations, *resume, *max_periods),
        Command::Evaluate {
            common,
            ensemble,
            truth,
        } => cmd_evaluate(common, ensemble, truth),
        Command::Export {
            common,
            ensemble,
            var,
            stat,
            realization,
            format,
        } => cmd_export(common, ensemble, var, *stat, *realization, *format),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
