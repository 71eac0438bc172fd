//! Runs the bundled synthetic case end to end and prints the headline
//! numbers: prior and final accuracy against the truth, and the
//! reconciliation at the observations.

use std::time::Instant;

use rapidpgs::config::{Config, EXAMPLE_TOML};
use rapidpgs::metrics;
use rapidpgs::pipeline::{self, Sequence};
use rapidpgs::synthetic::{self, SyntheticSpec};

fn main() -> rapidpgs::Result<()> {
    env_logger::init();
    let cfg = Config::from_toml(EXAMPLE_TOML)?;
    let spec = SyntheticSpec::from_config(&cfg)?;
    let clock = Instant::now();
    let truth = synthetic::generate_truth(&spec)?;
    let drill = synthetic::sample_drillholes(&truth, spec.drill_fraction, spec.seed)?;
    let obs = synthetic::sample_observations(&truth, spec.sampling_fraction, spec.n_periods, spec.seed)?;
    println!("truth + sampling: {:.1}s", clock.elapsed().as_secs_f64());

    let prior = pipeline::build_prior(&cfg, &drill, cfg.pipeline.rng_seed)?;
    println!("prior: {:.1}s", clock.elapsed().as_secs_f64());

    let seq = Sequence::new(&cfg, &obs)?;
    let mut state = seq.initial_state(prior.clone())?;
    seq.run(&mut state, None)?;
    println!("sequence: {:.1}s", clock.elapsed().as_secs_f64());

    let nd = cfg.rule.domains.len();
    let accuracy = |e: &rapidpgs::Ensemble| -> rapidpgs::Result<f64> {
        let labels = metrics::ensemble_labels(e, "domain", nd)?;
        let modal = metrics::modal_labels(&labels, nd);
        Ok(metrics::confusion(&truth.domain, &modal, nd)?.accuracy())
    };
    println!("accuracy vs truth: prior {:.4} final {:.4}", accuracy(&prior)?, accuracy(&state.ensemble)?);
    let summary = pipeline::summarize(&seq, &prior, &state)?;
    for (k, v) in summary.lines(&cfg.grade_variables()) {
        println!("{k}: {v:.4}");
    }
    for r in &state.results {
        println!(
            "t={:2} n={:3} acc={:.3} grf={:.1}/{:.1} score {:.4}->{:.4} {:.1}s",
            r.period,
            r.n_obs,
            r.domain_accuracy,
            r.grf_mse_reduction[0],
            r.grf_mse_reduction[1],
            r.score_before,
            r.score_after,
            r.duration_s
        );
    }
    Ok(())
}
