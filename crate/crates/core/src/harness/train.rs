use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{auroc, convergence_time, mape, Direction, AUROC_CONVERGENCE, MAPE_CONVERGENCE};
use super::optim::Optimizer;
use super::spec::{lr_at, LossKind, TrainSpec};
use crate::backbones::{Model, Task};
use crate::datapipe::{Dataset, N_CHANNELS, N_DEMOGRAPHICS};
use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Multiply-accumulates per second of the deterministic work clock.
pub const WORK_CLOCK_MACS_PER_S: f64 = 1e9;
/// A training step costs its forward MACs plus roughly twice that backward.
const TRAIN_STEP_MAC_FACTOR: u64 = 3;

/// Anything [`train`] can fit: a forward map from `[B, 2, L]` waveforms and
/// `[B, 4]` demographics to `[B, 1]` outputs over a parameter store.
pub trait Network {
    fn task(&self) -> Task;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn forward(&self, g: &mut Graph, x: Var, demographics: Var) -> Result<Var>;
}

impl Network for Model {
    fn task(&self) -> Task {
        self.config().task
    }

    fn store(&self) -> &ParamStore {
        Model::store(self)
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        Model::store_mut(self)
    }

    fn forward(&self, g: &mut Graph, x: Var, demographics: Var) -> Result<Var> {
        Model::forward(self, g, x, demographics)
    }
}

fn moments(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for v in values {
        n += 1.0;
        let d = v - mean;
        mean += d / n;
        m2 += d * (v - mean);
    }
    let std = if n > 0.0 { (m2 / n).sqrt() } else { 0.0 };
    (mean, if std > 1e-12 { std } else { 1.0 })
}

/// Z-scoring fitted on training data: per waveform channel, per demographic
/// feature and, for regression, the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub channel: [(f64, f64); N_CHANNELS],
    pub demographics: [(f64, f64); N_DEMOGRAPHICS],
    pub target: (f64, f64),
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("cannot fit standardization on an empty training set".into()));
        }
        let rs = &train.records;
        let ecg = moments(rs.iter().flat_map(|r| r.ecg.iter().map(|&v| f64::from(v))));
        let ppg = moments(rs.iter().flat_map(|r| r.ppg.iter().map(|&v| f64::from(v))));
        let demographics = std::array::from_fn(|k| moments(rs.iter().map(|r| f64::from(r.demographics()[k]))));
        let target = match train.task {
            Task::Classification => (0.0, 1.0),
            Task::Regression => moments(rs.iter().map(|r| f64::from(r.label))),
        };
        Ok(Self {
            channel: [ecg, ppg],
            demographics,
            target,
        })
    }

    pub fn target_to_model(&self, y: f64) -> f64 {
        (y - self.target.0) / self.target.1
    }

    pub fn target_from_model(&self, z: f64) -> f64 {
        z * self.target.1 + self.target.0
    }
}

/// A dataset flattened to standardized `f64` rows.
struct Prepared {
    seg_len: usize,
    waves: Vec<f64>,
    demographics: Vec<f64>,
    targets: Vec<f64>,
    raw_labels: Vec<f64>,
}

impl Prepared {
    fn new(ds: &Dataset, z: &Standardizer) -> Result<Self> {
        ds.validate()?;
        let seg_len = ds.records.first().map_or(0, |r| r.ecg.len());
        let mut waves = Vec::with_capacity(ds.len() * N_CHANNELS * seg_len);
        let mut demographics = Vec::with_capacity(ds.len() * N_DEMOGRAPHICS);
        for r in &ds.records {
            for (c, wave) in [&r.ecg, &r.ppg].into_iter().enumerate() {
                let (m, s) = z.channel[c];
                waves.extend(wave.iter().map(|&v| (f64::from(v) - m) / s));
            }
            for (k, v) in r.demographics().into_iter().enumerate() {
                let (m, s) = z.demographics[k];
                demographics.push((f64::from(v) - m) / s);
            }
        }
        let raw_labels = ds.labels();
        let targets = raw_labels.iter().map(|&y| z.target_to_model(y)).collect();
        Ok(Self {
            seg_len,
            waves,
            demographics,
            targets,
            raw_labels,
        })
    }

    fn len(&self) -> usize {
        self.targets.len()
    }

    fn batch(&self, idx: &[usize]) -> (Tensor, Tensor, Vec<f64>) {
        let row = N_CHANNELS * self.seg_len;
        let mut x = Vec::with_capacity(idx.len() * row);
        let mut d = Vec::with_capacity(idx.len() * N_DEMOGRAPHICS);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(&self.waves[i * row..(i + 1) * row]);
            d.extend_from_slice(&self.demographics[i * N_DEMOGRAPHICS..(i + 1) * N_DEMOGRAPHICS]);
            y.push(self.targets[i]);
        }
        let b = idx.len();
        (
            Tensor::new(&[b, N_CHANNELS, self.seg_len], x).expect("batch shape"),
            Tensor::new(&[b, N_DEMOGRAPHICS], d).expect("batch shape"),
            y,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub task: Task,
    /// Test metric before any update.
    pub initial_metric: f64,
    /// Mean training loss per completed epoch.
    pub train_loss: Vec<f64>,
    /// Test AUROC or MAPE (%) after each completed epoch.
    pub metric: Vec<f64>,
    /// Cumulative work-clock seconds at each evaluation.
    pub work_s: Vec<f64>,
    /// Cumulative wall-clock seconds at each evaluation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub wall_s: Vec<f64>,
    pub convergence_work_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence_wall_s: Option<f64>,
    /// Diagnostic when training diverged; histories cover the completed epochs.
    pub aborted: Option<String>,
}

impl RunResult {
    pub fn epochs_run(&self) -> usize {
        self.metric.len()
    }

    pub fn final_metric(&self) -> f64 {
        self.metric.last().copied().unwrap_or(self.initial_metric)
    }

    pub fn is_aborted(&self) -> bool {
        self.aborted.is_some()
    }

    /// First epoch (1-based) whose metric meets the task's convergence threshold.
    pub fn epochs_to(&self, threshold: f64) -> Option<usize> {
        let dir = metric_direction(self.task);
        self.metric.iter().position(|&m| dir.satisfied(m, threshold)).map(|i| i + 1)
    }

    /// The same record without wall-clock data, for byte-reproducible reports.
    pub fn without_wall_clock(&self) -> Self {
        Self {
            wall_s: Vec::new(),
            convergence_wall_s: None,
            ..self.clone()
        }
    }

    /// Converts an abort into [`Error::Diverged`].
    pub fn check(&self) -> Result<()> {
        match &self.aborted {
            Some(detail) => Err(Error::Diverged {
                epoch: self.epochs_run(),
                detail: detail.clone(),
            }),
            None => Ok(()),
        }
    }
}

pub fn metric_direction(task: Task) -> Direction {
    match task {
        Task::Classification => Direction::AtLeast,
        Task::Regression => Direction::AtMost,
    }
}

pub fn convergence_threshold(task: Task) -> f64 {
    match task {
        Task::Classification => AUROC_CONVERGENCE,
        Task::Regression => MAPE_CONVERGENCE,
    }
}

/// Model outputs on a prepared set, in the original target units for
/// regression, plus the forward MACs spent.
fn predict(net: &dyn Network, data: &Prepared, batch_size: usize) -> Result<(Vec<f64>, u64)> {
    let mut out = Vec::with_capacity(data.len());
    let mut macs = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size) {
        let (x, d, _) = data.batch(chunk);
        let mut g = Graph::inference(net.store());
        let xv = g.input(x);
        let dv = g.input(d);
        let y = net.forward(&mut g, xv, dv)?;
        out.extend_from_slice(g.value(y).data());
        macs += g.macs();
    }
    Ok((out, macs))
}

fn score(task: Task, z: &Standardizer, labels: &[f64], outputs: &[f64]) -> Result<f64> {
    if let Some(i) = outputs.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite model output at test index {i}")));
    }
    match task {
        Task::Classification => auroc(labels, outputs),
        Task::Regression => {
            let pred: Vec<f64> = outputs.iter().map(|&o| z.target_from_model(o)).collect();
            mape(labels, &pred)
        }
    }
}

/// The test metric (AUROC or MAPE %) under a fitted standardization.
pub fn evaluate(net: &dyn Network, standardizer: &Standardizer, test: &Dataset) -> Result<f64> {
    if test.task != net.task() {
        return Err(Error::Config(format!("model is built for {} but data is {}", net.task(), test.task)));
    }
    let data = Prepared::new(test, standardizer)?;
    let (out, _) = predict(net, &data, 128)?;
    score(test.task, standardizer, &data.raw_labels, &out)
}

fn check_inputs(net: &dyn Network, train: &Dataset, test: &Dataset, spec: &TrainSpec) -> Result<()> {
    let task = net.task();
    if train.task != task || test.task != task {
        return Err(Error::Config(format!(
            "model is built for {task} but datasets are {} / {}",
            train.task, test.task
        )));
    }
    spec.validate(task)?;
    if test.is_empty() {
        return Err(Error::Data("test set is empty".into()));
    }
    if task == Task::Classification {
        let pos = test.records.iter().filter(|r| r.label == 1.0).count();
        if pos == 0 || pos == test.len() {
            return Err(Error::Data("test set must contain both classes for AUROC".into()));
        }
    }
    if let Some(r) = test.records.iter().find(|r| task == Task::Regression && r.label == 0.0) {
        return Err(Error::Data(format!("case {}: zero regression target breaks MAPE", r.case_id)));
    }
    Ok(())
}

/// Seeded mini-batch training with per-epoch test evaluation.
///
/// Each epoch shuffles the training set, takes steps at `lr_at(epoch)` and
/// evaluates the full test set. A non-finite loss or test output stops the
/// run; the result then carries a diagnostic and the completed epochs.
pub fn train(net: &mut dyn Network, train: &Dataset, test: &Dataset, spec: &TrainSpec) -> Result<RunResult> {
    check_inputs(net, train, test, spec)?;
    let task = net.task();
    let z = Standardizer::fit(train)?;
    let train_data = Prepared::new(train, &z)?;
    let test_data = Prepared::new(test, &z)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut optimizer = Optimizer::new(spec.optimizer, net.store());
    let started = Instant::now();
    let mut macs: u64 = 0;

    let (initial, m) = predict(net, &test_data, spec.batch_size)?;
    macs += m;
    let initial_metric = score(task, &z, &test_data.raw_labels, &initial)?;
    let mut result = RunResult {
        seed: spec.seed,
        task,
        initial_metric,
        train_loss: Vec::new(),
        metric: Vec::new(),
        work_s: Vec::new(),
        wall_s: Vec::new(),
        convergence_work_s: None,
        convergence_wall_s: None,
        aborted: None,
    };

    let mut order: Vec<usize> = (0..train_data.len()).collect();
    'epochs: for epoch in 0..spec.epochs {
        let lr = lr_at(epoch, spec);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(spec.batch_size).enumerate() {
            let (x, d, y) = train_data.batch(chunk);
            let (loss, grads, updates, step_macs) = {
                let mut g = Graph::new(net.store(), Mode::Train);
                let xv = g.input(x);
                let dv = g.input(d);
                let out = net.forward(&mut g, xv, dv)?;
                let loss = match spec.loss {
                    LossKind::Bce => g.bce_with_logits(out, &y)?,
                    LossKind::Rmse => g.rmse(out, &y)?,
                };
                let value = g.value(loss).data()[0];
                if !value.is_finite() {
                    result.aborted = Some(format!("loss became {value} at epoch {epoch}, batch {b}"));
                    break 'epochs;
                }
                let grads = g.backward(loss)?;
                (value, grads, g.take_buffer_updates(), g.macs())
            };
            macs += TRAIN_STEP_MAC_FACTOR * step_macs;
            let store = net.store_mut();
            optimizer.step(store, &grads, lr);
            for (id, v) in updates {
                store.assign(id, &v)?;
            }
            loss_sum += loss * chunk.len() as f64;
        }
        let (outputs, m) = predict(net, &test_data, spec.batch_size)?;
        macs += m;
        let metric = match score(task, &z, &test_data.raw_labels, &outputs) {
            Ok(v) => v,
            Err(e) => {
                result.aborted = Some(format!("evaluation failed after epoch {epoch}: {e}"));
                break;
            }
        };
        result.train_loss.push(loss_sum / train_data.len() as f64);
        result.metric.push(metric);
        result.work_s.push(macs as f64 / WORK_CLOCK_MACS_PER_S);
        result.wall_s.push(started.elapsed().as_secs_f64());
    }

    let threshold = convergence_threshold(task);
    let dir = metric_direction(task);
    let hist = |times: &[f64]| times.iter().copied().zip(result.metric.iter().copied()).collect::<Vec<_>>();
    result.convergence_work_s = convergence_time(&hist(&result.work_s), threshold, dir);
    result.convergence_wall_s = convergence_time(&hist(&result.wall_s), threshold, dir);
    Ok(result)
}
