use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rapidpgs::config::{Config, EXAMPLE_TOML};
use rapidpgs::GridSpec;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rapidpgs"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path, grades: bool) -> PathBuf {
    let mut cfg = Config::from_toml(EXAMPLE_TOML).unwrap();
    cfg.grid = GridSpec::new([24, 20, 1], [5.0, 5.0, 5.0], [0.0, 0.0, 347.5]).unwrap();
    cfg.prior.n_realizations = 8;
    cfg.pipeline.gibbs_iterations = 40;
    cfg.pipeline.n_assimilations = 3;
    cfg.pipeline.threshold_search_budget = 30;
    let syn = cfg.synthetic.as_mut().unwrap();
    syn.n_periods = 4;
    syn.drill_fraction = 0.1;
    if !grades {
        cfg.grades = None;
    }
    let path = dir.join(if grades { "small.toml" } else { "domains.toml" });
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

/// synth + prior in `dir`; returns the config path.
fn prepare(dir: &Path) -> PathBuf {
    let cfg = small_config(dir, true);
    let o = run(&["synth", "-c", s(&cfg), "-o", s(dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let drill = dir.join("drillholes.csv");
    let o = run(&["prior", "-c", s(&cfg), "--data", s(&drill), "-o", s(dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    cfg
}

fn update(cfg: &Path, dir: &Path, obs: &Path, out: &Path, extra: &[&str]) -> Output {
    let ens = dir.join("prior.rpgs");
    let mut args = vec![
        "update",
        "-c",
        s(cfg),
        "--ensemble",
        s(&ens),
        "--observations",
        s(obs),
        "-o",
        s(out),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn summary_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| {
            let (k, v) = l.rsplit_once(char::is_whitespace)?;
            (k.trim() == key).then(|| v.parse().unwrap())
        })
        .unwrap_or_else(|| panic!("no {key:?} in {text}"))
}

#[test]
fn prior_writes_requested_realizations() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = Config::from_toml(EXAMPLE_TOML).unwrap();
    cfg.grid = GridSpec::new([20, 20, 1], [5.0, 5.0, 5.0], [0.0, 0.0, 347.5]).unwrap();
    cfg.grades = None;
    let path = dir.path().join("c.toml");
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let out = dir.path().join("out");
    let o = run(&["prior", "-c", s(&path), "--realizations", "4", "-o", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ens = rapidpgs::read_ensemble(&out.join("prior.rpgs")).unwrap();
    assert_eq!(ens.n_real(), 4);
    assert_eq!(ens.n_blocks(), 400);
}

#[test]
fn prior_is_reproducible_from_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), false);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["prior", "-c", s(&cfg), "--seed", "17", "-o", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(
        fs::read(a.join("prior.rpgs")).unwrap(),
        fs::read(b.join("prior.rpgs")).unwrap()
    );
}

#[test]
fn missing_variogram_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), false);
    let text = fs::read_to_string(&cfg).unwrap();
    let start = text.find("[variograms.g2]").unwrap();
    let end = start + text[start..].find("[variograms.grade_factors]").unwrap();
    let broken = dir.path().join("broken.toml");
    fs::write(&broken, format!("{}{}", &text[..start], &text[end..])).unwrap();
    let o = run(&["prior", "-c", s(&broken), "-o", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("g2"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_rejected() {
    let o = run(&["prior", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_assigns_every_period() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = Config::from_toml(EXAMPLE_TOML).unwrap();
    cfg.grid = GridSpec::new([30, 24, 1], [5.0, 5.0, 5.0], [0.0, 0.0, 347.5]).unwrap();
    let path = dir.path().join("c.toml");
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let o = run(&["synth", "-c", s(&path), "-o", s(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(dir.path().join("observations.csv")).unwrap();
    let col = rdr.headers().unwrap().iter().position(|h| h == "period").unwrap();
    let periods: BTreeSet<u32> = rdr.records().map(|r| r.unwrap()[col].parse().unwrap()).collect();
    assert_eq!(periods.len(), 20);
    assert_eq!(summary_value(&stdout(&o), "observations"), 180.0);
}

#[test]
fn empty_period_gets_a_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = prepare(dir.path());
    let text = fs::read_to_string(dir.path().join("observations.csv")).unwrap();
    let header = text.lines().next().unwrap();
    let col = header.split(',').position(|h| h == "period").unwrap();
    let mut edited = vec![header.to_string()];
    for line in text.lines().skip(1) {
        let mut f: Vec<&str> = line.split(',').collect();
        if f[col] == "1" {
            f[col] = "2";
        }
        edited.push(f.join(","));
    }
    let obs = dir.path().join("gap.csv");
    fs::write(&obs, edited.join("\n") + "\n").unwrap();
    let out = dir.path().join("gap");
    let o = update(&cfg, dir.path(), &obs, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(out.join("periods.csv")).unwrap();
    let h = rdr.headers().unwrap().clone();
    let idx = |name: &str| h.iter().position(|x| x == name).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    let gap = &rows[1];
    assert_eq!(&gap[idx("period")], "1");
    assert_eq!(&gap[idx("n_obs")], "0");
    assert_eq!(&gap[idx("n_updated_blocks")], "0");
    assert_eq!(gap[idx("g1_mse_reduction")].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = prepare(dir.path());
    let obs = dir.path().join("observations.csv");
    let (full, split) = (dir.path().join("full"), dir.path().join("split"));
    let o = update(&cfg, dir.path(), &obs, &full, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = update(&cfg, dir.path(), &obs, &split, &["--max-periods", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!split.join("updated.rpgs").exists());
    assert_eq!(summary_value(&stdout(&o), "next period"), 2.0);
    let o = update(&cfg, dir.path(), &obs, &split, &["--resume"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["updated.rpgs", "periods.csv", "thresholds.csv", "summary.csv"] {
        assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(split.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bad_ensemble_magic_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), true);
    let o = run(&["synth", "-c", s(&cfg), "-o", s(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    fs::write(dir.path().join("prior.rpgs"), b"NOTANENSEMBLEFILE").unwrap();
    let obs = dir.path().join("observations.csv");
    let o = update(&cfg, dir.path(), &obs, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn evaluate_truth_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), true);
    let o = run(&["synth", "-c", s(&cfg), "-o", s(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (ens, truth) = (dir.path().join("truth.rpgs"), dir.path().join("truth_domain.csv"));
    let out = dir.path().join("eval");
    let o = run(&["evaluate", "-c", s(&cfg), "--ensemble", s(&ens), "--truth", s(&truth), "-o", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(summary_value(&stdout(&o), "accuracy"), 1.0);
    assert!(out.join("confusion.csv").exists());
    assert!(out.join("accuracy.csv").exists());
}

#[test]
fn updating_beats_the_prior() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = prepare(dir.path());
    let obs = dir.path().join("observations.csv");
    let out = dir.path().join("upd");
    let o = update(&cfg, dir.path(), &obs, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let truth = dir.path().join("truth_domain.csv");
    let score = |ens: &Path| {
        let o = run(&["evaluate", "-c", s(&cfg), "--ensemble", s(ens), "--truth", s(&truth), "-o", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        summary_value(&stdout(&o), "accuracy")
    };
    let before = score(&dir.path().join("prior.rpgs"));
    let after = score(&out.join("updated.rpgs"));
    assert!(after > before, "{before} -> {after}");
}

#[test]
fn export_writes_requested_raster() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = prepare(dir.path());
    let ens = dir.path().join("prior.rpgs");
    let o = run(&[
        "export", "-c", s(&cfg), "--ensemble", s(&ens), "--var", "cu", "--stat", "sd", "--format", "pgm", "-o",
        s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = fs::read(dir.path().join("cu_sd.pgm")).unwrap();
    assert!(bytes.starts_with(b"P5"));
    let o = run(&["export", "-c", s(&cfg), "--ensemble", s(&ens), "--stat", "modal", "-o", s(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("domain_modal.csv").exists());
    let o = run(&[
        "export", "-c", s(&cfg), "--ensemble", s(&ens), "--stat", "realization", "--realization", "99", "-o",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn threads_flag_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), false);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, n) in [(&a, "1"), (&b, "3")] {
        let o = run(&["--threads", n, "prior", "-c", s(&cfg), "-o", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(
        fs::read(a.join("prior.rpgs")).unwrap(),
        fs::read(b.join("prior.rpgs")).unwrap()
    );
}
