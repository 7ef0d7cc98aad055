//! Flat `key=value` experiment configuration shared by `train`, `evaluate`
//! and `sweep`. Every key is also a `--flag`; flags override the file, which
//! overrides the defaults listed in [`KEYS`].

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{value_parser, Arg, ArgMatches, Args, Command, FromArgMatches};
use physioattn::attention::{AttentionKind, MsaConfig, NlNormalizer};
use physioattn::backbones::{BackboneFamily, ModelConfig, Task};
use physioattn::datapipe::BsaFormula;
use physioattn::harness::OptimizerKind;

pub struct Key {
    pub name: &'static str,
    pub flag: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, flag: &'static str, default: &'static str, help: &'static str) -> Key {
    Key {
        name,
        flag,
        default,
        help,
    }
}

pub const KEYS: &[Key] = &[
    key("data", "data", "", "PSD1 dataset file; empty generates synthetic data"),
    key("task", "task", "cls", "cls | reg"),
    key("cases", "cases", "125", "synthetic: number of cases"),
    key("per_case", "per-case", "20", "synthetic: segments per case"),
    key("difficulty", "difficulty", "1.0", "synthetic: planted-feature strength in (0, 1]"),
    key("prevalence", "prevalence", "0.05", "synthetic: positive fraction"),
    key("data_seed", "data-seed", "1", "synthetic: generator seed"),
    key("bsa", "bsa", "dubois", "synthetic: BSA formula (dubois | mosteller)"),
    key("test_fraction", "test-fraction", "0.2", "fraction of cases held out"),
    key("split_seed", "split-seed", "1", "case split seed"),
    key("family", "family", "resnet", "vgg | resnet | inception | msa_only"),
    key("level", "level", "auto", "backbone level; auto = the family's selected level"),
    key("attention", "attention", "none", "none | se | nl | cbam | msa"),
    key("fraction", "fraction", "0", "attention fraction: 0 | 50 | 100"),
    key("msa_d_model", "msa-d-model", "32", "msa_only: model width"),
    key("msa_heads", "msa-heads", "4", "msa_only: attention heads"),
    key("msa_d_ff", "msa-d-ff", "128", "msa_only: feed-forward width"),
    key("msa_layers", "msa-layers", "2", "msa_only: encoder layers"),
    key("se_reduction", "se-reduction", "16", "SE bottleneck ratio"),
    key("cbam_reduction", "cbam-reduction", "16", "CBAM channel-MLP ratio"),
    key("cbam_kernel", "cbam-kernel", "7", "CBAM spatial kernel (odd)"),
    key("nl_normalizer", "nl-normalizer", "softmax", "softmax | dot_product"),
    key("epochs", "epochs", "60", "training epochs"),
    key("seed", "seed", "0", "run seed (sweeps use seed + 0..seeds)"),
    key("seeds", "seeds", "5", "sweep: seeds per configuration"),
    key("batch_size", "batch-size", "128", "train: mini-batch size (sweeps use 128)"),
    key("lr", "lr", "0.001", "train: initial learning rate, x0.1 every 20 epochs (sweeps use 0.001)"),
    key("optimizer", "optimizer", "auto", "train: auto | adam | rmsprop (auto: rmsprop for inception classification)"),
    key("matrix", "matrix", "single", "sweep: single | paper13 | msa-grid"),
    key("out", "out", "runs", "output directory"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Matrix {
    Single,
    Families13,
    MsaGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: Option<PathBuf>,
    pub task: Task,
    pub cases: usize,
    pub per_case: usize,
    pub difficulty: f64,
    pub prevalence: f64,
    pub data_seed: u64,
    pub bsa: BsaFormula,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub family: BackboneFamily,
    pub level: Option<usize>,
    pub attention: AttentionKind,
    pub fraction: u32,
    pub msa: MsaConfig,
    pub se_reduction: usize,
    pub cbam_reduction: usize,
    pub cbam_kernel: usize,
    pub nl_normalizer: NlNormalizer,
    pub epochs: usize,
    pub seed: u64,
    pub seeds: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: Option<OptimizerKind>,
    pub matrix: Matrix,
    pub out: PathBuf,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| anyhow!("{key}: cannot parse {value:?}: {e}"))
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            data: None,
            task: Task::Classification,
            cases: 0,
            per_case: 0,
            difficulty: 0.0,
            prevalence: 0.0,
            data_seed: 0,
            bsa: BsaFormula::DuBois,
            test_fraction: 0.0,
            split_seed: 0,
            family: BackboneFamily::Resnet,
            level: None,
            attention: AttentionKind::None,
            fraction: 0,
            msa: MsaConfig::default(),
            se_reduction: 0,
            cbam_reduction: 0,
            cbam_kernel: 0,
            nl_normalizer: NlNormalizer::Softmax,
            epochs: 0,
            seed: 0,
            seeds: 0,
            batch_size: 0,
            lr: 0.0,
            optimizer: None,
            matrix: Matrix::Single,
            out: PathBuf::new(),
        };
        for k in KEYS {
            cfg.set(k.name, k.default).expect("built-in defaults parse");
        }
        cfg
    }
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "data" => self.data = (!v.is_empty()).then(|| PathBuf::from(v)),
            "task" => self.task = parse(key, v)?,
            "cases" => self.cases = parse(key, v)?,
            "per_case" => self.per_case = parse(key, v)?,
            "difficulty" => self.difficulty = parse(key, v)?,
            "prevalence" => self.prevalence = parse(key, v)?,
            "data_seed" => self.data_seed = parse(key, v)?,
            "bsa" => self.bsa = parse(key, v)?,
            "test_fraction" => self.test_fraction = parse(key, v)?,
            "split_seed" => self.split_seed = parse(key, v)?,
            "family" => self.family = parse(key, v)?,
            "level" => self.level = if v == "auto" { None } else { Some(parse(key, v)?) },
            "attention" => self.attention = parse(key, v)?,
            "fraction" => self.fraction = parse(key, v)?,
            "msa_d_model" => self.msa.d_model = parse(key, v)?,
            "msa_heads" => self.msa.n_heads = parse(key, v)?,
            "msa_d_ff" => self.msa.d_ff = parse(key, v)?,
            "msa_layers" => self.msa.n_layers = parse(key, v)?,
            "se_reduction" => self.se_reduction = parse(key, v)?,
            "cbam_reduction" => self.cbam_reduction = parse(key, v)?,
            "cbam_kernel" => self.cbam_kernel = parse(key, v)?,
            "nl_normalizer" => self.nl_normalizer = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "seeds" => self.seeds = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "optimizer" => self.optimizer = if v == "auto" { None } else { Some(parse(key, v)?) },
            "matrix" => {
                self.matrix = match v {
                    "single" => Matrix::Single,
                    "paper13" => Matrix::Families13,
                    "msa-grid" | "msa_grid" => Matrix::MsaGrid,
                    _ => bail!("matrix: unknown value {v:?} (expected single|paper13|msa-grid)"),
                }
            }
            "out" => self.out = PathBuf::from(v),
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Applies a `key=value` file. Blank lines and `#` comments are skipped;
    /// unknown and repeated keys are errors.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key=value", no + 1))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                bail!("line {}: key {k:?} repeated", no + 1);
            }
            self.set(k, v).with_context(|| format!("line {}", no + 1))?;
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let base = if self.family == BackboneFamily::MsaOnly {
            if !matches!(self.attention, AttentionKind::None | AttentionKind::Msa) || !matches!(self.fraction, 0 | 100) {
                bail!("msa_only uses attention=msa at fraction 100");
            }
            ModelConfig::msa_only(self.msa)
        } else {
            ModelConfig {
                level: self.level.unwrap_or(self.family.default_level()),
                ..ModelConfig::cnn(self.family, self.attention, self.fraction)
            }
        };
        let cfg = ModelConfig {
            task: self.task,
            se_reduction: self.se_reduction,
            cbam_reduction: self.cbam_reduction,
            cbam_kernel: self.cbam_kernel,
            nl_normalizer: self.nl_normalizer,
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn help_table() -> String {
        let mut s = String::from("Config keys (file `key=value` or `--flag value`; flags override the file):\n");
        for k in KEYS {
            let default = if k.default.is_empty() { "\"\"" } else { k.default };
            s.push_str(&format!("  {:<16} default {:<8} {}\n", k.name, default, k.help));
        }
        s
    }
}

/// `--config FILE` plus one flag per [`KEYS`] entry.
#[derive(Debug, Clone, Default)]
pub struct ExperimentArgs {
    pub config: Option<PathBuf>,
    pub overrides: Vec<(&'static str, String)>,
}

impl ExperimentArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            cfg.apply_file(&text).with_context(|| format!("config {}", path.display()))?;
        }
        for (k, v) in &self.overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

impl FromArgMatches for ExperimentArgs {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        Ok(Self {
            config: m.get_one::<PathBuf>("config").cloned(),
            overrides: KEYS
                .iter()
                .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name, v.clone())))
                .collect(),
        })
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for ExperimentArgs {
    fn augment_args(cmd: Command) -> Command {
        let cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(value_parser!(PathBuf))
                .help("flat key=value config file"),
        );
        KEYS.iter()
            .fold(cmd, |cmd, k| {
                cmd.arg(
                    Arg::new(k.name)
                        .long(k.flag)
                        .value_name("VALUE")
                        .help(format!("{} [default: {}]", k.help, if k.default.is_empty() { "\"\"" } else { k.default })),
                )
            })
            .after_help(ExperimentConfig::help_table())
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}
