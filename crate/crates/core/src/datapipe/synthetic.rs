//! Planted-feature ECG/PPG generator used as a stand-in for clinical data.
//!
//! Each segment is a beat train: ECG as a sum of P/QRS/T Gaussian waves with
//! baseline wander, PPG as a two-hump pulse per beat on a positive baseline.
//!
//! * Classification: a positive segment's pulse amplitude decays linearly by
//!   `0.6 * difficulty` of its initial value over the 20 s; the label comes
//!   from [`label_hypotension`] on a MAP trace with a > 60 s dip.
//! * Regression: stroke volume is a smooth function of pulse amplitude and
//!   age; the target is the SVI from [`compute_svi`].
//!
//! A small fraction of segments receive an ECG spike or a PPG dropout; those
//! fail [`filter_segment`] and are redrawn, so every case has exactly
//! `samples_per_case` records.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    compute_svi, filter_segment, label_hypotension, BsaFormula, Channel, Dataset, FilterOutcome, HemoPoint, Manifest,
    MapTrace, SampleRecord, SviOutcome, HYPOTENSION_HORIZON_S, SAMPLE_RATE_HZ, SEGMENT_LEN,
};
use crate::backbones::Task;
use crate::error::{Error, Result};

pub const DEFAULT_PREVALENCE: f64 = 0.05;
pub const DEFAULT_ARTIFACT_RATE: f64 = 0.02;
const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_cases: usize,
    pub samples_per_case: usize,
    pub task: Task,
    pub seed: u64,
    /// In (0, 1]; 1 gives a cleanly separable planted feature.
    pub difficulty: f64,
    pub prevalence: f64,
    /// Probability that a drawn segment carries an out-of-range artifact.
    pub artifact_rate: f64,
    pub bsa_formula: BsaFormula,
}

impl SyntheticSpec {
    pub fn new(task: Task, n_cases: usize, samples_per_case: usize, seed: u64) -> Self {
        Self {
            n_cases,
            samples_per_case,
            task,
            seed,
            difficulty: 1.0,
            prevalence: DEFAULT_PREVALENCE,
            artifact_rate: DEFAULT_ARTIFACT_RATE,
            bsa_formula: BsaFormula::DuBois,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cases == 0 || self.samples_per_case == 0 {
            return Err(Error::Config("n_cases and samples_per_case must be positive".into()));
        }
        if u32::try_from(self.n_cases).is_err() {
            return Err(Error::Config(format!("n_cases {} exceeds u32", self.n_cases)));
        }
        if !(self.difficulty > 0.0 && self.difficulty <= 1.0) {
            return Err(Error::Config(format!("difficulty {} must lie in (0, 1]", self.difficulty)));
        }
        if !(0.0..=1.0).contains(&self.prevalence) {
            return Err(Error::Config(format!("prevalence {} must lie in [0, 1]", self.prevalence)));
        }
        if !(0.0..0.5).contains(&self.artifact_rate) {
            return Err(Error::Config(format!("artifact_rate {} must lie in [0, 0.5)", self.artifact_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyntheticReport {
    /// Segments synthesized, including those rejected.
    pub generated: usize,
    pub dropped_ecg: usize,
    pub dropped_ppg: usize,
    pub dropped_svi: usize,
    pub kept: usize,
    pub positives: usize,
}

impl SyntheticReport {
    pub fn realized_prevalence(&self) -> f64 {
        if self.kept == 0 {
            0.0
        } else {
            self.positives as f64 / self.kept as f64
        }
    }

    pub fn manifest(&self, spec: &SyntheticSpec) -> Manifest {
        let mut m = Manifest::new();
        m.set("source", "synthetic");
        m.set("task", spec.task);
        m.set("seed", spec.seed);
        m.set("n_cases", spec.n_cases);
        m.set("samples_per_case", spec.samples_per_case);
        m.set("difficulty", spec.difficulty);
        m.set("artifact_rate", spec.artifact_rate);
        m.set("bsa_formula", spec.bsa_formula);
        m.set("segments_generated", self.generated);
        m.set("dropped_ecg", self.dropped_ecg);
        m.set("dropped_ppg", self.dropped_ppg);
        m.set("dropped_svi", self.dropped_svi);
        m.set("n_samples", self.kept);
        if spec.task == Task::Classification {
            m.set("prevalence_config", spec.prevalence);
            m.set("prevalence_realized", format!("{:.6}", self.realized_prevalence()));
        }
        m
    }
}

struct CaseProfile {
    age: f64,
    sex: f64,
    height: f64,
    weight: f64,
    hr: f64,
    pulse_amp: f64,
    ppg_baseline: f64,
    r_amp: f64,
    map_baseline: f64,
}

impl CaseProfile {
    fn draw(rng: &mut ChaCha8Rng, task: Task) -> Self {
        let sex = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
        let (h_mean, h_sd) = if sex == 1.0 { (172.0, 7.0) } else { (160.0, 6.0) };
        let height: f64 = Normal::new(h_mean, h_sd).unwrap().sample(rng);
        let height = height.clamp(140.0, 200.0);
        let bmi: f64 = Normal::new(24.0, 3.5).unwrap().sample(rng);
        let weight = bmi.clamp(16.0, 40.0) * (height / 100.0).powi(2);
        let pulse_amp = match task {
            Task::Classification => 20.0 * rng.gen_range(0.9..1.1),
            Task::Regression => rng.gen_range(12.0..28.0),
        };
        Self {
            age: rng.gen_range(20.0..85.0),
            sex,
            height,
            weight,
            hr: rng.gen_range(58.0..95.0),
            pulse_amp,
            ppg_baseline: rng.gen_range(40.0..60.0),
            r_amp: rng.gen_range(0.8..1.4),
            map_baseline: rng.gen_range(75.0..95.0),
        }
    }
}

fn add_bump(buf: &mut [f64], center_s: f64, sigma_s: f64, amp: f64, envelope: impl Fn(f64) -> f64) {
    let fs = SAMPLE_RATE_HZ as f64;
    let lo = ((center_s - 5.0 * sigma_s) * fs).ceil().max(0.0) as usize;
    let hi = (((center_s + 5.0 * sigma_s) * fs).floor() + 1.0).clamp(0.0, buf.len() as f64) as usize;
    for (i, v) in buf.iter_mut().enumerate().take(hi).skip(lo) {
        let t = i as f64 / fs;
        let z = (t - center_s) / sigma_s;
        *v += amp * envelope(t) * (-0.5 * z * z).exp();
    }
}

/// Renders one segment. `decay` is the fractional pulse-amplitude drop over
/// the segment.
fn render(rng: &mut ChaCha8Rng, p: &CaseProfile, hr: f64, amp: f64, decay: f64, difficulty: f64) -> (Vec<f64>, Vec<f64>) {
    let fs = SAMPLE_RATE_HZ as f64;
    let duration = SEGMENT_LEN as f64 / fs;
    let mut ecg = vec![0.0; SEGMENT_LEN];
    let mut ppg = vec![0.0; SEGMENT_LEN];
    let rr = 60.0 / hr;
    let envelope = |t: f64| 1.0 - decay * t / duration;
    let jitter = Normal::new(0.0, 0.03).unwrap();
    // Start one beat early so the pulse trailing a pre-segment beat is present.
    let mut tb = rng.gen_range(0.0..rr) - rr;
    while tb < duration + 0.5 {
        add_bump(&mut ecg, tb - 0.16, 0.025, 0.12 * p.r_amp, |_| 1.0);
        add_bump(&mut ecg, tb - 0.03, 0.010, -0.10 * p.r_amp, |_| 1.0);
        add_bump(&mut ecg, tb, 0.012, p.r_amp, |_| 1.0);
        add_bump(&mut ecg, tb + 0.03, 0.012, -0.20 * p.r_amp, |_| 1.0);
        add_bump(&mut ecg, tb + 0.28, 0.05, 0.25 * p.r_amp, |_| 1.0);
        let foot = tb + 0.2;
        add_bump(&mut ppg, foot + 0.15, 0.08, amp, envelope);
        add_bump(&mut ppg, foot + 0.40, 0.10, 0.4 * amp, envelope);
        tb += rr * (1.0 + jitter.sample(rng));
    }
    let wander_f = rng.gen_range(0.15..0.35);
    let wander_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let ecg_noise = Normal::new(0.0, 0.01 + 0.1 * (1.0 - difficulty)).unwrap();
    let ppg_noise = Normal::new(0.0, amp * (0.01 + 0.25 * (1.0 - difficulty))).unwrap();
    for i in 0..SEGMENT_LEN {
        let t = i as f64 / fs;
        let resp = (std::f64::consts::TAU * wander_f * t + wander_phase).sin();
        ecg[i] += 0.1 * resp + ecg_noise.sample(rng);
        ppg[i] += p.ppg_baseline + 0.03 * amp * resp + ppg_noise.sample(rng);
    }
    (ecg, ppg)
}

/// MAP trace at 1 Hz over `[segment_end, segment_end + 300]`. Positives get a
/// dip of 75..=180 s to 50..63 mmHg; some negatives get a dip of at most 55 s.
fn draw_map_trace(rng: &mut ChaCha8Rng, p: &CaseProfile, segment_end: f64, positive: bool) -> Result<MapTrace> {
    let n = HYPOTENSION_HORIZON_S as usize + 1;
    let noise = Normal::new(0.0, 2.0).unwrap();
    let mut values: Vec<f64> = (0..n).map(|_| (p.map_baseline + noise.sample(rng)).max(67.0)).collect();
    let dip = if positive {
        Some(rng.gen_range(75..=180))
    } else if rng.gen_bool(0.3) {
        Some(rng.gen_range(10..=55))
    } else {
        None
    };
    if let Some(len) = dip {
        let start = rng.gen_range(1..=(n - 1 - len));
        let level = rng.gen_range(50.0..63.0);
        for v in &mut values[start..start + len] {
            *v = level + rng.gen_range(-1.5..1.5);
        }
    }
    MapTrace::at_1hz(segment_end, values)
}

fn add_artifact(rng: &mut ChaCha8Rng, ecg: &mut [f64], ppg: &mut [f64]) {
    let at = rng.gen_range(0..SEGMENT_LEN - 20);
    if rng.gen_bool(0.5) {
        ecg[at] = rng.gen_range(4.6..8.0);
    } else {
        ppg[at..at + 20].iter_mut().for_each(|v| *v = 0.0);
    }
}

fn to_f32(v: Vec<f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

/// Deterministic in `spec`: each case draws from its own ChaCha stream.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, SyntheticReport)> {
    spec.validate()?;
    let mut report = SyntheticReport::default();
    let mut records = Vec::with_capacity(spec.n_cases * spec.samples_per_case);
    let d = spec.difficulty;
    for case in 0..spec.n_cases {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(case as u64);
        let profile = CaseProfile::draw(&mut rng, spec.task);
        for k in 0..spec.samples_per_case {
            let segment_end = ((k + 1) * SEGMENT_LEN / SAMPLE_RATE_HZ) as f64;
            let mut attempts = 0;
            let record = loop {
                attempts += 1;
                if attempts > MAX_REDRAWS {
                    return Err(Error::Data(format!("case {case}: no valid segment after {MAX_REDRAWS} draws")));
                }
                report.generated += 1;
                let hr = profile.hr * rng.gen_range(0.95..1.05);
                let amp_scale = match spec.task {
                    Task::Classification => rng.gen_range(0.97..1.03),
                    Task::Regression => rng.gen_range(0.85..1.15),
                };
                let amp = profile.pulse_amp * amp_scale;
                let positive = spec.task == Task::Classification && rng.gen_bool(spec.prevalence);
                let decay = if positive { 0.6 * d } else { 0.0 };
                let (mut ecg, mut ppg) = render(&mut rng, &profile, hr, amp, decay, d);
                if rng.gen_bool(spec.artifact_rate) {
                    add_artifact(&mut rng, &mut ecg, &mut ppg);
                }
                let (ecg, ppg) = (to_f32(ecg), to_f32(ppg));
                match filter_segment(&ecg, &ppg)? {
                    FilterOutcome::Keep => {}
                    FilterOutcome::Drop(r) => {
                        match r.channel {
                            Channel::Ecg => report.dropped_ecg += 1,
                            Channel::Ppg => report.dropped_ppg += 1,
                        }
                        continue;
                    }
                }
                let label = match spec.task {
                    Task::Classification => {
                        let trace = draw_map_trace(&mut rng, &profile, segment_end, positive)?;
                        let y = label_hypotension(&trace, segment_end)?;
                        debug_assert_eq!(y == 1, positive);
                        f64::from(y)
                    }
                    Task::Regression => {
                        let noise = Normal::new(0.0, 0.2 * (1.0 - d)).unwrap().sample(&mut rng);
                        let sv = (20.0 + 4.0 * amp) * (1.0 - 0.003 * (profile.age - 50.0)) * (1.0 + noise);
                        let point = HemoPoint {
                            co: sv * hr / 1000.0,
                            hr,
                            height: profile.height,
                            weight: profile.weight,
                        };
                        match compute_svi(&point, spec.bsa_formula)? {
                            SviOutcome::Keep { svi, .. } => svi,
                            SviOutcome::Drop { .. } => {
                                report.dropped_svi += 1;
                                continue;
                            }
                        }
                    }
                };
                break SampleRecord {
                    case_id: case as u32,
                    ecg,
                    ppg,
                    age: profile.age as f32,
                    sex: profile.sex as f32,
                    height: profile.height as f32,
                    weight: profile.weight as f32,
                    label: label as f32,
                };
            };
            report.kept += 1;
            if record.label == 1.0 && spec.task == Task::Classification {
                report.positives += 1;
            }
            records.push(record);
        }
    }
    Ok((Dataset::new(spec.task, records), report))
}
