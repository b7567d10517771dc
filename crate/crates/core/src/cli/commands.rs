//! The `gen`, `fit`, `eval` and `compare` subcommands.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method, ModelConfig};
use crate::baseline::{combine, edge_scores, fit_nodewise_from, CombineRule, NodewiseFit};
use crate::datagen::{
    gen_block, gen_lattice, gen_lattice_sized, read_dataset_with_width, read_ground_truth, sample_exact, write_dataset, write_ground_truth,
    GroundTruth,
};
use crate::error::{Error, Result};
use crate::eval::{
    autocorr, cll_bayes, cll_point, edge_trace, monitored_edges, pr_curve, precision_recall, f1_score, summarize, GroupRule,
    PosteriorSummary, PrPoint,
};
use crate::mrf::{Dataset, ParamState};
use crate::sampler::{run, Mode, PosteriorSample, RunConfig};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const FIT_FILE: &str = "fit.json";
pub const MODEL_FILE: &str = "model.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const PR_FILE: &str = "pr_curve.csv";
pub const AUTOCORR_FILE: &str = "autocorr.csv";
pub const COMPARE_FILE: &str = "compare.csv";
pub const DENSITY_CLL_FILE: &str = "density_cll.csv";
pub const F1_CLL_FILE: &str = "f1_cll.csv";

// test data are sampled from a second seed derived from the data seed
const TEST_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

/// Metrics written by `eval` for one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub edge_prob: Vec<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub density_mean: f64,
    pub cll: f64,
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub grid_value: f64,
    pub density: f64,
    pub f1: f64,
    pub cll: f64,
}

pub fn load_ground_truth(cfg: &ExperimentConfig) -> Result<GroundTruth> {
    match &cfg.model {
        ModelConfig::Block { seed } => Ok(gen_block(*seed)),
        ModelConfig::Lattice { seed, rows: Some(r), cols: Some(c) } => Ok(gen_lattice_sized(*r, *c, *seed)),
        ModelConfig::Lattice { seed, .. } => Ok(gen_lattice(*seed)),
        ModelConfig::File { path } => at(path, read_ground_truth(path)),
    }
}

/// Training and test sets: read from the configured CSVs or sampled exactly
/// from the ground truth.
pub fn load_data(cfg: &ExperimentConfig, gt: &GroundTruth) -> Result<(Dataset, Dataset)> {
    let d = gt.spec.num_nodes();
    let train = match &cfg.data.train_path {
        Some(p) => at(p, read_dataset_with_width(p, d))?,
        None => sample_exact(gt, cfg.data.n_train, cfg.data.seed)?,
    };
    let test = match &cfg.data.test_path {
        Some(p) => at(p, read_dataset_with_width(p, d))?,
        None => sample_exact(gt, cfg.data.n_test, cfg.data.seed ^ TEST_SEED_MIX)?,
    };
    Ok((train, test))
}

// Names the file in I/O errors.
fn at<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    at(dir, fs::create_dir_all(dir).map_err(Error::from))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = at(path, fs::read_to_string(path).map_err(Error::from))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), line: e.line(), column: e.column(), message: e.to_string() })
}

fn grid_dir(out: &Path, k: usize) -> PathBuf {
    out.join(format!("grid_{k}"))
}

pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let gt = load_ground_truth(cfg)?;
    let (train, test) = load_data(cfg, &gt)?;
    create_dir(out)?;
    write_ground_truth(&gt, &out.join(GROUND_TRUTH_FILE))?;
    write_dataset(&train, &out.join(TRAIN_FILE))?;
    write_dataset(&test, &out.join(TEST_FILE))?;
    Ok(())
}

fn sampler_config(cfg: &ExperimentConfig) -> RunConfig {
    let mut run_cfg = cfg.sampler.clone();
    if cfg.method == Method::BayesExact {
        run_cfg.mode = Mode::Exact;
    }
    run_cfg
}

/// Runs the chain, streaming samples to `dir/samples.jsonl`, and writes the summary.
fn fit_bayes(train: &Dataset, gt: &GroundTruth, run_cfg: &RunConfig, dir: &Path) -> Result<(Vec<PosteriorSample>, PosteriorSummary)> {
    create_dir(dir)?;
    let mut w = BufWriter::new(File::create(dir.join(SAMPLES_FILE))?);
    let mut samples = Vec::with_capacity(run_cfg.keep);
    for s in run(train, &gt.spec, run_cfg)? {
        let s = s?;
        serde_json::to_writer(&mut w, &s)?;
        w.write_all(b"\n")?;
        samples.push(s);
    }
    w.flush()?;
    let summary = summarize(&samples)?;
    write_json(&summary, &dir.join(SUMMARY_FILE))?;
    Ok((samples, summary))
}

/// `count` samples evenly spaced over the run, always including the last.
pub fn mixture_components(samples: &[PosteriorSample], count: usize) -> Vec<PosteriorSample> {
    let n = samples.len();
    if n <= count {
        return samples.to_vec();
    }
    (1..=count).map(|i| samples[i * n / count - 1].clone()).collect()
}

fn group_rule(cfg: &ExperimentConfig, gt: &GroundTruth) -> GroupRule {
    cfg.eval.group.unwrap_or_else(|| GroupRule::default_for(&gt.spec))
}

fn bayes_metrics(cfg: &ExperimentConfig, gt: &GroundTruth, test: &Dataset, samples: &[PosteriorSample], summary: &PosteriorSummary) -> Result<Metrics> {
    let predicted: Vec<bool> = summary.edge_prob.iter().map(|&p| p >= cfg.eval.threshold).collect();
    let (precision, recall) = precision_recall(&predicted, &gt.true_edges)?;
    let mix = mixture_components(samples, cfg.eval.mixture_size);
    let cll = cll_bayes(&mix, &gt.spec, test, group_rule(cfg, gt), cfg.eval.seed)?;
    Ok(Metrics { edge_prob: summary.edge_prob.clone(), precision, recall, f1: f1_score(precision, recall), density_mean: summary.density_mean, cll })
}

fn rule_of(method: Method) -> CombineRule {
    if method == Method::WainMin {
        CombineRule::Min
    } else {
        CombineRule::Max
    }
}

fn wain_metrics(cfg: &ExperimentConfig, gt: &GroundTruth, test: &Dataset, model: &ParamState) -> Result<Metrics> {
    let (precision, recall) = precision_recall(&model.edge_active, &gt.true_edges)?;
    let cll = cll_point(model, &gt.spec, test, group_rule(cfg, gt), cfg.eval.seed)?;
    let density = model.num_active() as f64 / gt.spec.num_edges().max(1) as f64;
    Ok(Metrics {
        edge_prob: model.edge_active.iter().map(|&y| y as u8 as f64).collect(),
        precision,
        recall,
        f1: f1_score(precision, recall),
        density_mean: density,
        cll,
    })
}

pub fn write_sweep(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "grid_value,density,f1,cll")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.grid_value, r.density, r.f1, r.cll)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_fit(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let gt = load_ground_truth(cfg)?;
    let (train, test) = load_data(cfg, &gt)?;
    create_dir(out)?;
    write_ground_truth(&gt, &out.join(GROUND_TRUTH_FILE))?;
    match cfg.method {
        Method::Bayes | Method::BayesExact => {
            fit_bayes(&train, &gt, &sampler_config(cfg), out)?;
        }
        Method::BayesP0 => {
            let grid = cfg.sweep.p0_grid.as_deref().expect("validated");
            let rows: Vec<SweepRow> = grid
                .par_iter()
                .enumerate()
                .map(|(k, &p0)| {
                    let run_cfg = RunConfig { fixed_p0: Some(p0), ..sampler_config(cfg) };
                    let (samples, summary) = fit_bayes(&train, &gt, &run_cfg, &grid_dir(out, k))?;
                    let m = bayes_metrics(cfg, &gt, &test, &samples, &summary)?;
                    Ok(SweepRow { grid_value: p0, density: m.density_mean, f1: m.f1, cll: m.cll })
                })
                .collect::<Result<_>>()?;
            write_sweep(&rows, &out.join(SWEEP_FILE))?;
        }
        Method::WainMax | Method::WainMin => {
            let grid = cfg.sweep.lambda_grid.as_deref().expect("validated");
            // warm starts run from the largest lambda down
            let mut order: Vec<usize> = (0..grid.len()).collect();
            order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]).then(a.cmp(&b)));
            let mut fits: Vec<Option<NodewiseFit>> = vec![None; grid.len()];
            let mut prev: Option<NodewiseFit> = None;
            for &k in &order {
                let fit = fit_nodewise_from(&train, grid[k], prev.as_ref())?;
                prev = Some(fit.clone());
                fits[k] = Some(fit);
            }
            let mut rows = Vec::with_capacity(grid.len());
            for (k, fit) in fits.into_iter().enumerate() {
                let fit = fit.expect("every grid point fitted");
                let model = combine(&fit, &gt.spec, rule_of(cfg.method))?;
                let dir = grid_dir(out, k);
                create_dir(&dir)?;
                write_json(&fit, &dir.join(FIT_FILE))?;
                write_json(&model, &dir.join(MODEL_FILE))?;
                let m = wain_metrics(cfg, &gt, &test, &model)?;
                rows.push(SweepRow { grid_value: grid[k], density: m.density_mean, f1: m.f1, cll: m.cll });
            }
            write_sweep(&rows, &out.join(SWEEP_FILE))?;
        }
    }
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<Vec<PosteriorSample>> {
    let reader = BufReader::new(at(path, File::open(path).map_err(Error::from))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s = serde_json::from_str(&line).map_err(|e| Error::Parse { path: path.to_path_buf(), line: i + 1, column: e.column(), message: e.to_string() })?;
        out.push(s);
    }
    Ok(out)
}

pub fn write_pr_curve(points: &[PrPoint], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "threshold,precision,recall")?;
    for p in points {
        writeln!(w, "{},{},{}", p.threshold, p.precision, p.recall)?;
    }
    w.flush()?;
    Ok(())
}

fn write_autocorr(cfg: &ExperimentConfig, gt: &GroundTruth, samples: &[PosteriorSample], summary: &PosteriorSummary, path: &Path) -> Result<()> {
    let n = samples.len();
    let max_lag = cfg.eval.max_lag.min(n.saturating_sub(1) / 4);
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    let density: Vec<f64> = samples.iter().map(|s| s.density()).collect();
    let mut series = vec![("density".to_string(), density)];
    for k in monitored_edges(summary, 2) {
        let (i, j) = gt.spec.edge(k);
        series.push((format!("edge_{i}_{j}"), edge_trace(samples, k)));
    }
    for (name, s) in series {
        // constant series have no autocorrelation; leave them out
        if let Ok(ac) = autocorr(&s, max_lag) {
            columns.push((name, ac));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<&str> = std::iter::once("lag").chain(columns.iter().map(|(n, _)| n.as_str())).collect();
    writeln!(w, "{}", header.join(","))?;
    if !columns.is_empty() {
        for lag in 0..=max_lag {
            let row: Vec<String> = std::iter::once(lag.to_string()).chain(columns.iter().map(|(_, ac)| ac[lag].to_string())).collect();
            writeln!(w, "{}", row.join(","))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn eval_bayes_dir(cfg: &ExperimentConfig, gt: &GroundTruth, test: &Dataset, dir: &Path) -> Result<()> {
    let samples = read_samples(&dir.join(SAMPLES_FILE))?;
    let summary = summarize(&samples)?;
    let metrics = bayes_metrics(cfg, gt, test, &samples, &summary)?;
    write_json(&metrics, &dir.join(METRICS_FILE))?;
    write_pr_curve(&pr_curve(&summary.edge_prob, &gt.true_edges)?, &dir.join(PR_FILE))?;
    write_autocorr(cfg, gt, &samples, &summary, &dir.join(AUTOCORR_FILE))
}

fn eval_wain_dir(cfg: &ExperimentConfig, gt: &GroundTruth, test: &Dataset, dir: &Path) -> Result<()> {
    let fit: NodewiseFit = read_json(&dir.join(FIT_FILE))?;
    let rule = rule_of(cfg.method);
    let model = combine(&fit, &gt.spec, rule)?;
    write_json(&wain_metrics(cfg, gt, test, &model)?, &dir.join(METRICS_FILE))?;
    write_pr_curve(&pr_curve(&edge_scores(&fit, &gt.spec, rule), &gt.true_edges)?, &dir.join(PR_FILE))
}

pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let gt = load_ground_truth(cfg)?;
    let (_, test) = load_data(cfg, &gt)?;
    match cfg.method {
        Method::Bayes | Method::BayesExact => eval_bayes_dir(cfg, &gt, &test, out),
        Method::BayesP0 => {
            let n = cfg.sweep.p0_grid.as_ref().map_or(0, Vec::len);
            (0..n).try_for_each(|k| eval_bayes_dir(cfg, &gt, &test, &grid_dir(out, k)))
        }
        Method::WainMax | Method::WainMin => {
            let n = cfg.sweep.lambda_grid.as_ref().map_or(0, Vec::len);
            (0..n).try_for_each(|k| eval_wain_dir(cfg, &gt, &test, &grid_dir(out, k)))
        }
    }
}

// Rows of a source directory as raw strings: (grid_value, density, f1, cll).
fn source_rows(dir: &Path) -> Result<Vec<[String; 4]>> {
    let sweep = dir.join(SWEEP_FILE);
    if sweep.exists() {
        let text = at(&sweep, fs::read_to_string(&sweep).map_err(Error::from))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != "grid_value,density,f1,cll" {
            return Err(Error::Parse { path: sweep, line: 1, column: 1, message: format!("unexpected header {header:?}") });
        }
        lines
            .enumerate()
            .map(|(i, line)| {
                let cells: Vec<&str> = line.split(',').collect();
                if cells.len() != 4 {
                    return Err(Error::Parse { path: sweep.clone(), line: i + 2, column: cells.len().min(4) + 1, message: "expected 4 columns".into() });
                }
                for (c, cell) in cells.iter().enumerate() {
                    if cell.parse::<f64>().is_err() {
                        return Err(Error::Parse { path: sweep.clone(), line: i + 2, column: c + 1, message: format!("not a number: {cell:?}") });
                    }
                }
                Ok([cells[0].to_string(), cells[1].to_string(), cells[2].to_string(), cells[3].to_string()])
            })
            .collect()
    } else {
        let m: Metrics = read_json(&dir.join(METRICS_FILE))?;
        Ok(vec![[String::new(), m.density_mean.to_string(), m.f1.to_string(), m.cll.to_string()]])
    }
}

pub fn cmd_compare(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    if cfg.compare.inputs.is_empty() {
        return Err(Error::Config("compare needs at least one entry in compare.inputs".into()));
    }
    let mut truth: Option<(GroundTruth, PathBuf)> = None;
    let mut rows = Vec::new();
    for input in &cfg.compare.inputs {
        let gt_path = input.dir.join(GROUND_TRUTH_FILE);
        let gt = at(&gt_path, read_ground_truth(&gt_path))?;
        match &truth {
            None => truth = Some((gt, gt_path)),
            Some((first, first_path)) if *first != gt => {
                return Err(Error::Config(format!("ground truths differ: {} vs {}", first_path.display(), gt_path.display())));
            }
            Some(_) => {}
        }
        for r in source_rows(&input.dir)? {
            rows.push((input.label.clone(), r));
        }
    }
    create_dir(out)?;
    let mut all = BufWriter::new(File::create(out.join(COMPARE_FILE))?);
    let mut dens = BufWriter::new(File::create(out.join(DENSITY_CLL_FILE))?);
    let mut f1 = BufWriter::new(File::create(out.join(F1_CLL_FILE))?);
    writeln!(all, "method,grid_value,density,f1,cll")?;
    writeln!(dens, "method,density,cll")?;
    writeln!(f1, "method,f1,cll")?;
    for (label, [g, d, f, c]) in &rows {
        writeln!(all, "{label},{g},{d},{f},{c}")?;
        writeln!(dens, "{label},{d},{c}")?;
        writeln!(f1, "{label},{f},{c}")?;
    }
    all.flush()?;
    dens.flush()?;
    f1.flush()?;
    Ok(())
}
