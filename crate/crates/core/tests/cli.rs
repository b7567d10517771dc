use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use ssmrf::cli::commands::{read_samples, Metrics};
use ssmrf::datagen::{read_dataset, read_ground_truth, GroundTruth};
use ssmrf::eval::{cll_point, GroupRule};

fn ssmrf(args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_ssmrf")).args(args).env("SSMRF_THREADS", "2").output().expect("binary runs");
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path
}

fn run_cmd(cmd: &str, config: &Path, out: &Path) -> i32 {
    ssmrf(&[cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn read_all(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

const SMALL_BAYES: &str = r#"{
    "model": {"type": "block", "seed": 3},
    "data": {"n_train": 60, "n_test": 50, "seed": 5},
    "method": "bayes",
    "sampler": {"iters": 260, "burn_in": 20, "thin": 4, "keep": 60, "n_chains": 8, "seed": 2},
    "eval": {"mixture_size": 5, "max_lag": 5}
}"#;

#[test]
fn gen_writes_block_files_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "gen.json", SMALL_BAYES);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run_cmd("gen", &cfg, &a), 0);
    assert_eq!(run_cmd("gen", &cfg, &b), 0);
    assert_eq!(read_all(&a), read_all(&b));

    let gt = read_ground_truth(&a.join("ground_truth.json")).unwrap();
    assert_eq!(gt.spec.num_edges(), 66);
    let train = read_dataset(&a.join("train.csv")).unwrap();
    assert_eq!((train.num_nodes(), train.len()), (12, 60));
    assert_eq!(read_dataset(&a.join("test.csv")).unwrap().len(), 50);
}

#[test]
fn gen_with_no_training_rows_writes_an_empty_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "gen.json", r#"{"model": {"type": "block"}, "data": {"n_train": 0, "n_test": 10}}"#);
    let out = tmp.path().join("out");
    assert_eq!(run_cmd("gen", &cfg, &out), 0);
    assert!(fs::read_to_string(out.join("train.csv")).unwrap().trim().is_empty());
    assert_eq!(read_dataset(&out.join("test.csv")).unwrap().len(), 10);
}

#[test]
fn fit_and_eval_bayes_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "fit.json", SMALL_BAYES);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        assert_eq!(run_cmd("fit", &cfg, dir), 0);
        assert_eq!(run_cmd("eval", &cfg, dir), 0);
    }
    assert_eq!(read_all(&a), read_all(&b));

    let text = fs::read_to_string(a.join("samples.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 60);
    let samples = read_samples(&a.join("samples.jsonl")).unwrap();
    let iters: Vec<usize> = samples.iter().map(|s| s.iter).collect();
    assert!(iters.windows(2).all(|w| w[1] == w[0] + 4));
    for (line, s) in text.lines().zip(&samples) {
        assert_eq!(serde_json::to_string(s).unwrap(), line);
    }

    let metrics: Metrics = serde_json::from_str(&fs::read_to_string(a.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics.edge_prob.len(), 66);
    let distinct: BTreeSet<u64> = metrics.edge_prob.iter().map(|p| p.to_bits()).collect();
    let pr = fs::read_to_string(a.join("pr_curve.csv")).unwrap();
    // header plus one row per distinct score
    assert_eq!(pr.lines().count(), distinct.len() + 1);
    let ac = fs::read_to_string(a.join("autocorr.csv")).unwrap();
    assert!(ac.starts_with("lag,"));
}

#[test]
fn seed_flag_changes_the_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "fit.json", SMALL_BAYES);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run_cmd("fit", &cfg, &a), 0);
    assert_eq!(ssmrf(&["fit", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "99"]), 0);
    assert_eq!(fs::read(a.join("ground_truth.json")).unwrap(), fs::read(b.join("ground_truth.json")).unwrap());
    assert_ne!(fs::read(a.join("samples.jsonl")).unwrap(), fs::read(b.join("samples.jsonl")).unwrap());
}

#[test]
fn single_sample_cll_equals_point_cll() {
    let tmp = tempfile::tempdir().unwrap();
    let json = SMALL_BAYES.replace(r#""keep": 60"#, r#""keep": 1"#).replace(r#""mixture_size": 5"#, r#""mixture_size": 1"#).replace(r#""max_lag": 5"#, r#""max_lag": 0"#);
    let cfg = write_config(tmp.path(), "fit.json", &json);
    let out = tmp.path().join("out");
    assert_eq!(run_cmd("gen", &cfg, &out), 0);
    assert_eq!(run_cmd("fit", &cfg, &out), 0);
    assert_eq!(run_cmd("eval", &cfg, &out), 0);
    let gt = read_ground_truth(&out.join("ground_truth.json")).unwrap();
    let test = read_dataset(&out.join("test.csv")).unwrap();
    let samples = read_samples(&out.join("samples.jsonl")).unwrap();
    assert_eq!(samples.len(), 1);
    let expected = cll_point(&samples[0].to_params(&gt.spec).unwrap(), &gt.spec, &test, GroupRule::default_for(&gt.spec), 0).unwrap();
    let metrics: Metrics = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!((metrics.cll - expected).abs() <= 1e-12 * expected.abs().max(1.0), "{} vs {expected}", metrics.cll);
}

#[test]
fn perfect_structure_scores_f1_of_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "fit.json", SMALL_BAYES);
    let out = tmp.path().join("out");
    assert_eq!(run_cmd("fit", &cfg, &out), 0);
    let gt: GroundTruth = read_ground_truth(&out.join("ground_truth.json")).unwrap();
    let mut samples = read_samples(&out.join("samples.jsonl")).unwrap();
    for s in samples.iter_mut() {
        s.y = gt.true_edges.clone();
        s.a = (0..gt.spec.num_edges()).filter(|&k| gt.true_edges[k]).map(|k| gt.params.edge_values[k]).collect();
    }
    let lines: Vec<String> = samples.iter().map(|s| serde_json::to_string(s).unwrap()).collect();
    fs::write(out.join("samples.jsonl"), lines.join("\n") + "\n").unwrap();
    assert_eq!(run_cmd("eval", &cfg, &out), 0);
    let metrics: Metrics = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!((metrics.precision, metrics.recall, metrics.f1), (1.0, 1.0, 1.0));
}

fn sweep_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("grid_value,density,f1,cll"));
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn sweeps_and_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let p0_cfg = write_config(
        tmp.path(),
        "p0.json",
        r#"{
            "model": {"type": "block", "seed": 3},
            "data": {"n_train": 60, "n_test": 40, "seed": 5},
            "method": "bayes_p0",
            "sampler": {"iters": 120, "burn_in": 20, "thin": 5, "keep": 20, "n_chains": 8},
            "sweep": {"p0_grid": [0.001, 0.3, 0.9]},
            "eval": {"mixture_size": 4, "max_lag": 2}
        }"#,
    );
    let wain_cfg = write_config(
        tmp.path(),
        "wain.json",
        r#"{
            "model": {"type": "block", "seed": 3},
            "data": {"n_train": 60, "n_test": 40, "seed": 5},
            "method": "wain_max",
            "sweep": {"lambda_grid": [0.001, 0.01, 0.05, 0.1, 0.3, 1.0]}
        }"#,
    );
    let (p0_dir, wain_dir) = (tmp.path().join("p0"), tmp.path().join("wain"));
    assert_eq!(run_cmd("fit", &p0_cfg, &p0_dir), 0);
    assert_eq!(run_cmd("eval", &p0_cfg, &p0_dir), 0);
    assert_eq!(run_cmd("fit", &wain_cfg, &wain_dir), 0);
    assert_eq!(run_cmd("eval", &wain_cfg, &wain_dir), 0);

    let p0_rows = sweep_rows(&p0_dir.join("sweep.csv"));
    assert_eq!(p0_rows.len(), 3);
    assert!(p0_dir.join("grid_2/metrics.json").exists());
    let wain_rows = sweep_rows(&wain_dir.join("sweep.csv"));
    assert_eq!(wain_rows.len(), 6);
    let dens: Vec<f64> = wain_rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(dens.windows(2).all(|w| w[1] <= w[0]), "{dens:?}");

    let cmp_cfg = write_config(
        tmp.path(),
        "cmp.json",
        &format!(
            r#"{{"model": {{"type": "block", "seed": 3}}, "compare": {{"inputs": [{{"label": "bayes_p0", "dir": {:?}}}, {{"label": "wain_max", "dir": {:?}}}]}}}}"#,
            p0_dir, wain_dir
        ),
    );
    let cmp_dir = tmp.path().join("cmp");
    assert_eq!(run_cmd("compare", &cmp_cfg, &cmp_dir), 0);
    let merged = fs::read_to_string(cmp_dir.join("compare.csv")).unwrap();
    let merged: Vec<Vec<&str>> = merged.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(merged.len(), 9);
    let sources = p0_rows.iter().map(|r| ("bayes_p0", r)).chain(wain_rows.iter().map(|r| ("wain_max", r)));
    for (row, (label, src)) in merged.iter().zip(sources) {
        assert_eq!(row[0], label);
        assert_eq!(&row[1..], &src.iter().map(String::as_str).collect::<Vec<_>>()[..]);
    }
    let dens_cll = fs::read_to_string(cmp_dir.join("density_cll.csv")).unwrap();
    assert_eq!(dens_cll.lines().next(), Some("method,density,cll"));
    assert_eq!(fs::read_to_string(cmp_dir.join("f1_cll.csv")).unwrap().lines().count(), 10);

    // a different ground truth is refused
    let other = tmp.path().join("other");
    let other_cfg = write_config(tmp.path(), "other.json", &fs::read_to_string(&wain_cfg).unwrap().replace(r#""seed": 3"#, r#""seed": 4"#));
    assert_eq!(run_cmd("fit", &other_cfg, &other), 0);
    let bad_cfg = write_config(
        tmp.path(),
        "bad_cmp.json",
        &format!(r#"{{"model": {{"type": "block"}}, "compare": {{"inputs": [{{"label": "a", "dir": {:?}}}, {{"label": "b", "dir": {:?}}}]}}}}"#, p0_dir, other),
    );
    assert_eq!(run_cmd("compare", &bad_cfg, &tmp.path().join("bad")), 2);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    assert_eq!(ssmrf(&["--help"]), 0);
    assert_eq!(ssmrf(&["frobnicate"]), 2);
    let unknown = write_config(tmp.path(), "unknown.json", r#"{"model": {"type": "block"}, "colour": 1}"#);
    assert_eq!(run_cmd("gen", &unknown, &out), 2);
    let too_big = write_config(tmp.path(), "big.json", r#"{"model": {"type": "lattice"}, "method": "bayes_exact", "data": {"n_train": 5, "n_test": 5}}"#);
    assert_eq!(run_cmd("fit", &too_big, &out), 2);
    assert_eq!(run_cmd("gen", &tmp.path().join("missing.json"), &out), 2);
    let ok = write_config(tmp.path(), "ok.json", SMALL_BAYES);
    assert_eq!(run_cmd("eval", &ok, &tmp.path().join("never_fitted")), 4);
    let bad_path = write_config(tmp.path(), "path.json", r#"{"model": {"type": "file", "path": "/nonexistent/gt.json"}}"#);
    assert_eq!(run_cmd("gen", &bad_path, &out), 4);
    let blowup = write_config(
        tmp.path(),
        "blowup.json",
        r#"{"model": {"type": "block"}, "data": {"n_train": 50, "n_test": 5}, "sampler": {"iters": 200, "burn_in": 10, "thin": 1, "keep": 10, "n_chains": 4, "step_size": 1e300, "refresh": 0.0}}"#,
    );
    assert_eq!(run_cmd("fit", &blowup, &out), 3);
}
