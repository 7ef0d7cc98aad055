use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use physioattn::backbones::{
    build_model, level_trend, select_level, BackboneFamily, Counting, LevelTable, ModelConfig, Task,
};
use physioattn::attention::AttentionKind;
use physioattn::datapipe::{
    decode_dataset, Channel, encode_dataset, filter_segment, generate_synthetic, split_by_case, BsaFormula, Dataset,
    FilterOutcome, Manifest, SyntheticSpec, DEFAULT_ARTIFACT_RATE,
};
use physioattn::harness::{
    evaluate, lr_at, msa_grid_matrix, family_matrix, run_sweep, train, RunResult, Standardizer, SweepSpec,
    TrainSpec,
};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, Matrix};

/// How a successful command ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    /// At least one training run diverged; partial results were written.
    Aborted,
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn write_dataset(ds: &Dataset, manifest: &Manifest, out: &Path) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, encode_dataset(ds)?).with_context(|| format!("writing {}", out.display()))?;
    fs::write(manifest_path(out), manifest.to_string())?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_dataset(&bytes).with_context(|| format!("decoding {}", path.display()))
}

pub struct GenArgs {
    pub task: Task,
    pub cases: usize,
    pub per_case: usize,
    pub seed: u64,
    pub difficulty: f64,
    pub prevalence: f64,
    pub artifact_rate: f64,
    pub bsa: BsaFormula,
    pub out: PathBuf,
}

pub fn gen_synthetic(a: &GenArgs) -> Result<Outcome> {
    let spec = SyntheticSpec {
        difficulty: a.difficulty,
        prevalence: a.prevalence,
        artifact_rate: a.artifact_rate,
        bsa_formula: a.bsa,
        ..SyntheticSpec::new(a.task, a.cases, a.per_case, a.seed)
    };
    let (ds, report) = generate_synthetic(&spec)?;
    write_dataset(&ds, &report.manifest(&spec), &a.out)?;
    println!(
        "wrote {} samples from {} cases to {} (dropped ecg={} ppg={} svi={})",
        report.kept,
        a.cases,
        a.out.display(),
        report.dropped_ecg,
        report.dropped_ppg,
        report.dropped_svi
    );
    Ok(Outcome::Done)
}

/// Re-applies the segment filter to a stored dataset.
pub fn preprocess(input: &Path, out: &Path) -> Result<Outcome> {
    let ds = read_dataset(input)?;
    let (mut dropped_ecg, mut dropped_ppg) = (0usize, 0usize);
    let mut kept = Vec::with_capacity(ds.len());
    for r in ds.records {
        match filter_segment(&r.ecg, &r.ppg)? {
            FilterOutcome::Keep => kept.push(r),
            FilterOutcome::Drop(reason) => match reason.channel {
                Channel::Ecg => dropped_ecg += 1,
                Channel::Ppg => dropped_ppg += 1,
            },
        }
    }
    let filtered = Dataset::new(ds.task, kept);
    let mut m = Manifest::new();
    m.set("source", input.display());
    m.set("task", filtered.task);
    m.set("dropped_ecg", dropped_ecg);
    m.set("dropped_ppg", dropped_ppg);
    m.set("n_samples", filtered.len());
    m.set("n_cases", filtered.case_ids().len());
    write_dataset(&filtered, &m, out)?;
    println!(
        "kept {} samples, dropped ecg={dropped_ecg} ppg={dropped_ppg}; wrote {}",
        filtered.len(),
        out.display()
    );
    Ok(Outcome::Done)
}

pub struct LevelArgs {
    pub family: BackboneFamily,
    pub attention: AttentionKind,
    pub fraction: u32,
    pub published: bool,
    pub counting: Counting,
}

fn level_tables(a: &LevelArgs) -> Result<(LevelTable, LevelTable, Option<LevelTable>)> {
    if a.family == BackboneFamily::MsaOnly {
        bail!("msa_only has no backbone levels");
    }
    let published = LevelTable::published(a.family).expect("cnn family");
    let computed = LevelTable::computed(&ModelConfig::cnn(a.family, AttentionKind::None, 0), a.counting)?;
    let with_attention = if a.attention == AttentionKind::None {
        None
    } else {
        let template = ModelConfig::cnn(a.family, a.attention, a.fraction);
        template.validate()?;
        Some(LevelTable::computed(&template, Counting::Full)?)
    };
    Ok((published, computed, with_attention))
}

pub fn count_params(a: &LevelArgs) -> Result<Outcome> {
    let (published, computed, with_attention) = level_tables(a)?;
    let mut s = String::new();
    write!(s, "{:>5} {:>12} {:>12}", "level", "published", "computed").unwrap();
    if with_attention.is_some() {
        write!(s, " {:>14}", format!("{}{}", a.attention, a.fraction)).unwrap();
    }
    s.push('\n');
    for (i, &(level, p)) in published.counts.iter().enumerate() {
        write!(s, "{level:>5} {p:>12} {:>12}", computed.counts[i].1).unwrap();
        if let Some(t) = &with_attention {
            write!(s, " {:>14}", t.counts[i].1).unwrap();
        }
        s.push('\n');
    }
    let chosen = if a.published { &published } else { &computed };
    writeln!(
        s,
        "table={} counting={} default={} threshold={:.1}",
        if a.published { "published" } else { "computed" },
        if a.published { "published" } else { counting_str(a.counting) },
        chosen.default_count,
        chosen.threshold()
    )
    .unwrap();
    writeln!(s, "selected_level={}", select_level(chosen)?).unwrap();
    writeln!(s, "trend={}", level_trend(chosen)?).unwrap();
    print!("{s}");
    Ok(Outcome::Done)
}

pub fn select_level_cmd(a: &LevelArgs) -> Result<Outcome> {
    let (published, computed, _) = level_tables(a)?;
    let chosen = if a.published { &published } else { &computed };
    println!("{}", select_level(chosen)?);
    Ok(Outcome::Done)
}

fn counting_str(c: Counting) -> &'static str {
    match c {
        Counting::Backbone => "backbone",
        Counting::Full => "full",
    }
}

/// The configured dataset, split by case into train and test.
pub fn load_split(cfg: &ExperimentConfig, task: Task) -> Result<(Dataset, Dataset)> {
    let ds = match &cfg.data {
        Some(path) => {
            let ds = read_dataset(path)?;
            if ds.task != task {
                bail!("{} holds {} data but the model is configured for {task}", path.display(), ds.task);
            }
            ds
        }
        None => {
            let spec = SyntheticSpec {
                difficulty: cfg.difficulty,
                prevalence: cfg.prevalence,
                artifact_rate: DEFAULT_ARTIFACT_RATE,
                bsa_formula: cfg.bsa,
                ..SyntheticSpec::new(task, cfg.cases, cfg.per_case, cfg.data_seed)
            };
            generate_synthetic(&spec)?.0
        }
    };
    Ok(split_by_case(&ds, cfg.test_fraction, cfg.split_seed)?)
}

fn train_spec(cfg: &ExperimentConfig, model: &ModelConfig) -> Result<TrainSpec> {
    let base = TrainSpec::for_model(model, cfg.epochs, cfg.seed);
    let spec = TrainSpec {
        optimizer: cfg.optimizer.unwrap_or(base.optimizer),
        lr0: cfg.lr,
        batch_size: cfg.batch_size,
        ..base
    };
    spec.validate(model.task)?;
    Ok(spec)
}

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    lr: f64,
    train_loss: f64,
    metric: f64,
    work_s: f64,
}

fn history_jsonl(run: &RunResult, spec: &TrainSpec) -> String {
    let mut s = String::new();
    for (e, (&loss, &metric)) in run.train_loss.iter().zip(&run.metric).enumerate() {
        let row = HistoryRow {
            epoch: e + 1,
            lr: lr_at(e, spec),
            train_loss: loss,
            metric,
            work_s: run.work_s[e],
        };
        s.push_str(&serde_json::to_string(&row).expect("row serializes"));
        s.push('\n');
    }
    s
}

fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Classification => "auroc",
        Task::Regression => "mape_pct",
    }
}

pub fn train_cmd(cfg: &ExperimentConfig) -> Result<Outcome> {
    let model_cfg = cfg.model_config()?;
    let spec = train_spec(cfg, &model_cfg)?;
    let (train_ds, test_ds) = load_split(cfg, model_cfg.task)?;
    let standardizer = Standardizer::fit(&train_ds)?;
    let mut model = build_model(&model_cfg, cfg.seed)?;
    println!(
        "{}: {} train / {} test samples, {} epochs, {}",
        model_cfg.label(),
        train_ds.len(),
        test_ds.len(),
        spec.epochs,
        spec.optimizer
    );
    let run = train(&mut model, &train_ds, &test_ds, &spec)?;

    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("history.jsonl"), history_jsonl(&run, &spec))?;
    fs::write(
        cfg.out.join("result.json"),
        serde_json::to_string_pretty(&run.without_wall_clock())? + "\n",
    )?;
    let mut wall = String::new();
    for (e, w) in run.wall_s.iter().enumerate() {
        writeln!(wall, "epoch={} wall_s={w:.3}", e + 1).unwrap();
    }
    fs::write(cfg.out.join("wall_clock.log"), wall)?;
    Checkpoint::capture(&model, standardizer).save(&cfg.out.join("checkpoint.json"))?;

    let name = metric_name(model_cfg.task);
    for (e, m) in run.metric.iter().enumerate() {
        println!("epoch {:>3}  loss {:.6}  {name} {m:.6}", e + 1, run.train_loss[e]);
    }
    match &run.aborted {
        Some(why) => {
            eprintln!("training aborted: {why}");
            Ok(Outcome::Aborted)
        }
        None => {
            println!("final {name} {:.6}; outputs in {}", run.final_metric(), cfg.out.display());
            Ok(Outcome::Done)
        }
    }
}

pub fn evaluate_cmd(checkpoint: &Path, cfg: &ExperimentConfig) -> Result<Outcome> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = ck.restore()?;
    let (_, test_ds) = load_split(cfg, ck.config.task)?;
    let metric = evaluate(&model, &ck.standardizer, &test_ds)?;
    println!("{} {metric:.6} on {} test samples", metric_name(ck.config.task), test_ds.len());
    Ok(Outcome::Done)
}

pub fn workers() -> usize {
    std::env::var("PHYSIOATTN_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn sweep_cmd(cfg: &ExperimentConfig) -> Result<Outcome> {
    let configs = match cfg.matrix {
        Matrix::Single => vec![cfg.model_config()?],
        Matrix::Families13 => family_matrix(cfg.task, cfg.msa),
        Matrix::MsaGrid => {
            let all = msa_grid_matrix(cfg.task);
            let total = all.len();
            let valid: Vec<_> = all.into_iter().filter(|c| c.validate().is_ok()).collect();
            println!("msa grid: {total} configurations, {} valid, {} skipped", valid.len(), total - valid.len());
            valid
        }
    };
    let task = configs[0].task;
    let (train_ds, test_ds) = load_split(cfg, task)?;
    let spec = SweepSpec {
        seeds: cfg.seeds,
        workers: workers(),
        ..SweepSpec::new(cfg.seed, cfg.epochs)
    };
    println!(
        "sweep: {} configurations x {} seeds, {} epochs, {} workers",
        configs.len(),
        spec.seeds,
        spec.epochs,
        spec.workers
    );
    let report = run_sweep(&configs, &train_ds, &test_ds, &spec)?;
    fs::create_dir_all(&cfg.out)?;
    let csv = report.to_csv();
    fs::write(cfg.out.join("report.csv"), &csv)?;
    fs::write(cfg.out.join("runs.jsonl"), report.to_jsonl())?;
    fs::write(cfg.out.join("wall_clock.log"), report.wall_clock_log())?;
    print!("{csv}");
    Ok(if report.any_aborted() {
        eprintln!("some runs diverged; see runs.jsonl");
        Outcome::Aborted
    } else {
        Outcome::Done
    })
}
