use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 8] = [
    "--set",
    "sampler.steps=8",
    "--set",
    "grid.height=8",
    "--set",
    "grid.width=8",
    "--set",
    "search.n=4",
];

fn tepkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tepkit")).args(args).output().expect("binary runs")
}

fn run_small(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--seeds", "0..3", "--out", out.to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    tepkit(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn file_names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    v.sort();
    v
}

fn assert_same_outputs(a: &Path, b: &Path) {
    assert_eq!(file_names(a), file_names(b));
    for name in file_names(a) {
        if name != "manifest.json" {
            assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name} differs");
        }
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run_small(&a, &[]).status.success());
    assert!(run_small(&b, &[]).status.success());
    assert_same_outputs(&a, &b);
    let names = file_names(&a);
    for want in ["resolved_config.toml", "events.jsonl", "results.jsonl", "final_s0.pgm", "final_s0.json", "final_s2.csv"] {
        assert!(names.contains(&want.to_string()), "missing {want}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([0, 1, 2]));
    assert_eq!(manifest["files"].as_array().unwrap().len(), names.len() - 1);
}

#[test]
fn worker_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run_small(&a, &["--workers", "1"]).status.success());
    assert!(run_small(&b, &["--workers", "3", "--set", "search.strategy=particle"]).status.success());
    let c = tmp.path().join("c");
    assert!(run_small(&c, &["--workers", "1", "--set", "search.strategy=particle"]).status.success());
    assert_same_outputs(&b, &c);
    assert!(run_small(&tmp.path().join("d"), &["--workers", "0"]).status.code() == Some(1));
}

#[test]
fn zero_weights_reduce_to_the_spatial_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let zero = ["--set", "tep.w1.end=0", "--set", "tep.w2.end=0", "--set", "noiseshape.enabled=false"];
    let a = tmp.path().join("a");
    assert!(run_small(&a, &zero).status.success());
    let mut other = zero.to_vec();
    other.extend_from_slice(&["--set", "tep.redraw=per_sde_step", "--set", "tep.rho_sem=1.0", "--set", "tep.k=2"]);
    let b = tmp.path().join("b");
    assert!(run_small(&b, &other).status.success());
    for name in ["results.jsonl", "events.jsonl", "final_s0.pgm", "final_s1.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let results = fs::read_to_string(a.join("results.jsonl")).unwrap();
    assert!(results.contains("\"tep\":false"));
}

#[test]
fn zeroing_only_w1_violates_dominance() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = run_small(&out, &["--set", "tep.w1.end=0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("tep.w2: w1 must dominate w2"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = tepkit(&["run", "--config", "/nonexistent/cfg.toml", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cannot read config file"));

    let o = run_small(&out, &["--set", "sampler.stepz=3", "--set", "sampler.eta=7"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("sampler.stepz"), "{err}");

    let o = run_small(&out, &["--set", "sampler.eta=7", "--set", "search.n=0"]);
    let err = stderr(&o);
    assert!(err.contains("sampler.eta") && err.contains("search.n"), "{err}");

    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[sampler]\nsteps = 8\n[grid]\nheight = 8\nwidth = 8\n").unwrap();
    let o = tepkit(&["run", "--config", cfg.to_str().unwrap(), "--set", "sampler.steps=4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved = fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    assert!(resolved.contains("steps = 4"));
    assert!(resolved.contains("height = 8"));

    assert_eq!(tepkit(&["run"]).status.code(), Some(1));
    assert_eq!(tepkit(&["--help"]).status.code(), Some(0));
}

#[test]
fn failed_writes_leave_no_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    fs::create_dir_all(out.join("results.jsonl")).unwrap();
    let o = run_small(&out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(file_names(&out), vec!["results.jsonl".to_string()]);
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn influence_bands_sum_to_total() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("inf");
    let mut args = vec!["analyze", "--experiment", "influence", "--seeds", "0..3", "--out", out.to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    let o = tepkit(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("influence.csv")).unwrap();
    assert!(text.starts_with("step,source,mse_total,mse_low,mse_high,stderr_total,n\n"));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 8 * 3);
    for r in rows {
        let v: Vec<f64> = r[2..5].iter().map(|x| x.parse().unwrap()).collect();
        assert!((v[1] + v[2] - v[0]).abs() <= 1e-10 * v[0].max(1.0));
    }
}

#[test]
fn scaling_csv_is_budget_indexed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sc");
    let mut args =
        vec!["analyze", "--experiment", "scaling", "--axis", "nrfe", "--seeds", "0,1", "--out", out.to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    let o = tepkit(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("scaling.csv")).unwrap();
    assert!(text.starts_with("variable,arm,mean,stderr,n\n"));
    let budgets: Vec<String> = csv_rows(&text).into_iter().map(|r| r[0].clone()).collect();
    // 16 live particles; checkpoint counts 1, 2, 4, 8 divide T = 8.
    assert_eq!(budgets, ["16", "16", "32", "32", "64", "64", "128", "128"]);
}

#[test]
fn analyze_rejects_bad_arguments() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("a");
    let o = tepkit(&["analyze", "--experiment", "influence", "--seeds", "3..3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("empty"));
    let o = tepkit(&["analyze", "--experiment", "bogus", "--seeds", "0..2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for name in ["sde_to_ode", "band_attenuation", "influence", "tolerance", "diversity_cfg", "scaling"] {
        assert!(err.contains(name), "{err}");
    }
    let o = tepkit(&["analyze", "--experiment", "tolerance", "--axis", "ndfe", "--seeds", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

fn best_rewards(dir: &Path) -> Vec<f64> {
    fs::read_to_string(dir.join("results.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["best_reward"].as_f64().unwrap())
        .collect()
}

#[test]
fn report_echoes_and_pairs_arms() {
    let tmp = tempfile::tempdir().unwrap();
    let (on, off) = (tmp.path().join("on"), tmp.path().join("off"));
    assert!(run_small(&on, &[]).status.success());
    let zero = ["--set", "tep.w1.end=0", "--set", "tep.w2.end=0", "--set", "noiseshape.enabled=false"];
    assert!(run_small(&off, &zero).status.success());

    let single = tmp.path().join("r1");
    let o = tepkit(&["report", on.to_str().unwrap(), "--out", single.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&fs::read_to_string(single.join("report.csv")).unwrap());
    let on_best = best_rewards(&on);
    let mean = on_best.iter().sum::<f64>() / on_best.len() as f64;
    assert_eq!(rows.len(), 1);
    assert!((rows[0][3].parse::<f64>().unwrap() - mean).abs() < 1e-5);

    let both = tmp.path().join("r2");
    let o = tepkit(&["report", on.to_str().unwrap(), off.to_str().unwrap(), "--out", both.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("paired diff"));
    let rows = csv_rows(&fs::read_to_string(both.join("report.csv")).unwrap());
    let with = rows.iter().find(|r| r[1] == "true").unwrap();
    let off_best = best_rewards(&off);
    let diff = on_best.iter().zip(&off_best).map(|(a, b)| a - b).sum::<f64>() / 3.0;
    assert!((with[5].parse::<f64>().unwrap() - diff).abs() < 1e-5);
    assert_eq!(with[7], "3");
}

#[test]
fn report_rejects_corrupt_and_incompatible_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run_small(&a, &[]).status.success());
    assert!(run_small(&b, &["--set", "guidance.cfg_scale=3.0"]).status.success());
    let o = tepkit(&["report", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("incompatible config hashes") && err.contains(a.to_str().unwrap()), "{err}");

    let results = a.join("results.jsonl");
    let mut text = fs::read_to_string(&results).unwrap();
    let first_newline = text.find('\n').unwrap();
    text.insert_str(first_newline + 1, "{not json\n");
    fs::write(&results, text).unwrap();
    let o = tepkit(&["report", a.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    fs::write(a.join("resolved_config.toml"), "seed = 99\n").unwrap();
    let o = tepkit(&["report", a.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not match"));
}
