use std::fmt::Write as _;
use std::sync::Mutex;

use serde::Serialize;

use super::metrics::mean_std;
use super::spec::TrainSpec;
use super::train::{train, RunResult};
use crate::attention::{AttentionKind, MsaConfig};
use crate::backbones::{build_model, BackboneFamily, ModelConfig, Task};
use crate::datapipe::Dataset;
use crate::error::{Error, Result};

pub const DEFAULT_SEEDS: usize = 5;
pub const CSV_HEADER: &str = "family,attention,fraction,level,seed_count,metric_mean,metric_std,conv_time_mean_s,aborted";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base_seed: u64,
    pub seeds: usize,
    pub epochs: usize,
    /// Concurrent runs; results do not depend on it.
    pub workers: usize,
}

impl SweepSpec {
    pub fn new(base_seed: u64, epochs: usize) -> Self {
        Self {
            base_seed,
            seeds: DEFAULT_SEEDS,
            epochs,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub config: ModelConfig,
    pub runs: Vec<RunResult>,
    /// Over completed (non-aborted) runs.
    pub metric_mean: Option<f64>,
    pub metric_std: Option<f64>,
    /// Work-clock convergence time averaged over runs that converged.
    pub conv_time_mean_s: Option<f64>,
    pub aborted: usize,
}

impl SweepRow {
    pub fn from_runs(config: ModelConfig, runs: Vec<RunResult>) -> Self {
        let finals: Vec<f64> = runs.iter().filter(|r| !r.is_aborted()).map(RunResult::final_metric).collect();
        let (metric_mean, metric_std) = mean_std(&finals);
        let conv: Vec<f64> = runs.iter().filter_map(|r| r.convergence_work_s).collect();
        let (conv_time_mean_s, _) = mean_std(&conv);
        let aborted = runs.iter().filter(|r| r.is_aborted()).count();
        Self {
            config,
            runs,
            metric_mean,
            metric_std,
            conv_time_mean_s,
            aborted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

impl SweepReport {
    pub fn any_aborted(&self) -> bool {
        self.rows.iter().any(|r| r.aborted > 0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{CSV_HEADER}").unwrap();
        for r in &self.rows {
            let c = &r.config;
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                c.family.as_str(),
                c.attention,
                c.fraction,
                c.effective_level(),
                r.runs.len(),
                fmt_opt(r.metric_mean),
                fmt_opt(r.metric_std),
                fmt_opt(r.conv_time_mean_s),
                r.aborted
            )
            .unwrap();
        }
        s
    }

    /// One JSON object per run, wall-clock fields stripped.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            label: String,
            #[serde(flatten)]
            run: &'a RunResult,
        }
        let mut s = String::new();
        for row in &self.rows {
            for run in &row.runs {
                let run = run.without_wall_clock();
                let line = Line {
                    label: row.config.label(),
                    run: &run,
                };
                s.push_str(&serde_json::to_string(&line).expect("run serializes"));
                s.push('\n');
            }
        }
        s
    }

    /// Wall-clock seconds per run, kept apart from the reproducible reports.
    pub fn wall_clock_log(&self) -> String {
        let mut s = String::new();
        for row in &self.rows {
            for run in &row.runs {
                let total = run.wall_s.last().copied().unwrap_or(0.0);
                writeln!(
                    s,
                    "{} seed={} epochs={} wall_s={total:.3} convergence_wall_s={}",
                    row.config.label(),
                    run.seed,
                    run.epochs_run(),
                    fmt_opt(run.convergence_wall_s)
                )
                .unwrap();
            }
        }
        s
    }
}

/// Trains every config with seeds `base_seed + 0..seeds` (model init and
/// shuffling share the run seed) and aggregates per config.
pub fn run_sweep(configs: &[ModelConfig], train_ds: &Dataset, test_ds: &Dataset, spec: &SweepSpec) -> Result<SweepReport> {
    if spec.seeds == 0 {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    for c in configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|c| (0..spec.seeds as u64).map(move |k| (c, spec.base_seed + k)))
        .collect();
    let results: Mutex<Vec<Option<Result<RunResult>>>> = Mutex::new(vec![None; jobs.len()]);
    let next = Mutex::new(0usize);
    let run_job = |(c, seed): (usize, u64)| -> Result<RunResult> {
        let cfg = &configs[c];
        let mut model = build_model(cfg, seed)?;
        let ts = TrainSpec::for_model(cfg, spec.epochs, seed);
        train(&mut model, train_ds, test_ds, &ts)
    };
    std::thread::scope(|s| {
        for _ in 0..spec.workers.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let j = {
                    let mut n = next.lock().unwrap();
                    let j = *n;
                    *n += 1;
                    j
                };
                if j >= jobs.len() {
                    break;
                }
                let r = run_job(jobs[j]);
                results.lock().unwrap()[j] = Some(r);
            });
        }
    });
    let mut results = results.into_inner().unwrap().into_iter();
    let mut rows = Vec::with_capacity(configs.len());
    for cfg in configs {
        let runs = (0..spec.seeds)
            .map(|_| results.next().flatten().expect("every job ran"))
            .collect::<Result<Vec<_>>>()?;
        rows.push(SweepRow::from_runs(cfg.clone(), runs));
    }
    Ok(SweepReport { rows })
}

/// The 13 architecture families: each CNN without attention, with SE, NL and
/// CBAM at 50% and 100%, and the stand-alone self-attention model.
pub fn family_matrix(task: Task, msa: MsaConfig) -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for family in BackboneFamily::CNN {
        out.push(ModelConfig {
            task,
            ..ModelConfig::cnn(family, AttentionKind::None, 0)
        });
        for attention in [AttentionKind::Se, AttentionKind::Nl, AttentionKind::Cbam] {
            for fraction in [50, 100] {
                out.push(ModelConfig {
                    task,
                    ..ModelConfig::cnn(family, attention, fraction)
                });
            }
        }
    }
    out.push(ModelConfig {
        task,
        ..ModelConfig::msa_only(msa)
    });
    out
}

/// Stand-alone self-attention models over the full search grid, valid or not.
pub fn msa_grid_matrix(task: Task) -> Vec<ModelConfig> {
    MsaConfig::grid()
        .into_iter()
        .map(|m| ModelConfig {
            task,
            ..ModelConfig::msa_only(m)
        })
        .collect()
}
