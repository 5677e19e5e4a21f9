//! Experiment configuration files (TOML).
//!
//! Every table rejects unknown keys, so a misspelt scheduler parameter is a
//! load error instead of a silently ignored default.

use std::path::{Path, PathBuf};

use dts_core::data::{load_csv, make_blobs, split};
use dts_core::{Dataset, DistillConfig, ScheduleParams, SchedulerSpec, SgdConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Free-form experiment name, recorded in the manifest.
    pub name: String,
    pub output_dir: PathBuf,
    /// Each seed drives one student run: its initialisation and batch order.
    pub seeds: Vec<u64>,
    pub dataset: DatasetSpec,
    pub teacher: TeacherSpec,
    pub student: StudentSpec,
    pub distill: DistillSpec,
    /// Entries for `compare`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compare: Vec<CompareEntry>,
    #[serde(default)]
    pub sweep: SweepSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub train_fraction: f64,
    pub split_seed: u64,
    pub source: DataSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Blobs {
        num_classes: usize,
        samples_per_class: usize,
        dim: usize,
        spread: f64,
        seed: u64,
    },
    Csv {
        path: PathBuf,
        num_classes: usize,
        #[serde(default)]
        skip_header: bool,
    },
}

/// SGD settings without a seed; each run supplies its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Optimizer {
    pub learning_rate: f64,
    #[serde(default)]
    pub milestones: Vec<usize>,
    #[serde(default = "default_decay")]
    pub decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

fn default_decay() -> f64 {
    0.1
}

impl Optimizer {
    pub fn with_seed(&self, seed: u64) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            milestones: self.milestones.clone(),
            decay_factor: self.decay_factor,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }

    /// One-line rendering used in the manifest.
    pub fn describe(&self) -> String {
        format!(
            "learning_rate={} milestones={:?} decay_factor={} epochs={} batch_size={}",
            self.learning_rate, self.milestones, self.decay_factor, self.epochs, self.batch_size
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSpec {
    pub layers: Vec<usize>,
    /// Seeds both initialisation and batch order.
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Use this checkpoint instead of `<output_dir>/runs/teacher/model.bin`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentSpec {
    pub layers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSpec {
    #[serde(default = "default_kd_weight")]
    pub kd_weight: f64,
    #[serde(default = "default_ce_weight")]
    pub ce_weight: f64,
    /// Smoothing of the losses fed to the scheduler; 0 feeds raw batch losses.
    #[serde(default)]
    pub loss_ema: f64,
    pub scheduler: SchedulerSpec,
    pub optimizer: Optimizer,
}

fn default_kd_weight() -> f64 {
    0.9
}
fn default_ce_weight() -> f64 {
    0.1
}

impl DistillSpec {
    pub fn build(&self, scheduler: SchedulerSpec, kd_weight: f64, ce_weight: f64, seed: u64) -> DistillConfig {
        DistillConfig {
            kd_weight,
            ce_weight,
            loss_ema: self.loss_ema,
            scheduler,
            sgd: self.optimizer.with_seed(seed),
        }
    }
}

/// One row of a `compare` table. Weights default to the `[distill]` values;
/// `kd_weight = 0` gives the student-alone baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub scheduler: SchedulerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kd_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ce_weight: Option<f64>,
}

impl CompareEntry {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.scheduler.label())
    }
}

/// Temperature ranges for `sweep`, each `[t_max, t_min]`. Every range runs the
/// dynamic scheduler starting at `t_max`, with the `[distill]` weights and
/// optimizer left untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_ranges")]
    pub ranges: Vec<[f64; 2]>,
    #[serde(default = "default_mu")]
    pub mu: f64,
}

fn default_ranges() -> Vec<[f64; 2]> {
    vec![[3.0, 1.0], [4.0, 2.0], [6.0, 4.0], [8.0, 4.0], [11.0, 9.0]]
}
fn default_mu() -> f64 {
    0.9
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            ranges: default_ranges(),
            mu: default_mu(),
        }
    }
}

impl SweepSpec {
    pub fn params(&self) -> Vec<ScheduleParams> {
        self.ranges
            .iter()
            .map(|&[t_max, t_min]| ScheduleParams {
                mu: self.mu,
                ..ScheduleParams::range(t_max, t_min)
            })
            .collect()
    }
}

/// `8to4`, `11to9`, `2.5to1`.
pub fn range_label(t_max: f64, t_min: f64) -> String {
    format!("{t_max}to{t_min}")
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let config = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.teacher.layers.len() < 2 || self.student.layers.len() < 2 {
            return bad("teacher and student need at least an input and an output layer".into());
        }
        let c = self.dataset.source.num_classes();
        for (who, layers) in [("teacher", &self.teacher.layers), ("student", &self.student.layers)] {
            if layers.last() != Some(&c) {
                return bad(format!("{who} output width must equal num_classes = {c}"));
            }
        }
        if self.teacher.layers[0] != self.student.layers[0] {
            return bad("teacher and student input widths differ".into());
        }
        if let DataSource::Blobs { dim, .. } = self.dataset.source {
            if self.teacher.layers[0] != dim {
                return bad(format!("input width {} does not match dim = {dim}", self.teacher.layers[0]));
            }
        }
        if !(self.dataset.train_fraction > 0.0 && self.dataset.train_fraction < 1.0) {
            return bad(format!("train_fraction must be in (0, 1), got {}", self.dataset.train_fraction));
        }
        let core = |e: dts_core::DtsError| CliError::Config(e.to_string());
        self.teacher.optimizer.with_seed(0).validate().map_err(core)?;
        self.distill
            .build(self.distill.scheduler.clone(), self.distill.kd_weight, self.distill.ce_weight, 0)
            .validate()
            .map_err(core)?;
        for entry in &self.compare {
            self.entry_config(entry, 0).validate().map_err(|e| {
                CliError::Config(format!("compare entry {}: {e}", entry.label()))
            })?;
        }
        let mut labels: Vec<String> = self.compare.iter().map(CompareEntry::label).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("duplicate compare entry name {}", w[0]));
        }
        if self.sweep.ranges.is_empty() {
            return bad("sweep needs at least one range".into());
        }
        for p in self.sweep.params() {
            p.validate()
                .map_err(|e| CliError::Config(format!("sweep range {}: {e}", range_label(p.t_max, p.t_min))))?;
        }
        Ok(())
    }

    pub fn entry_config(&self, entry: &CompareEntry, seed: u64) -> DistillConfig {
        self.distill.build(
            entry.scheduler.clone(),
            entry.kd_weight.unwrap_or(self.distill.kd_weight),
            entry.ce_weight.unwrap_or(self.distill.ce_weight),
            seed,
        )
    }

    pub fn teacher_checkpoint(&self) -> PathBuf {
        self.teacher
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join("runs").join("teacher").join("model.bin"))
    }
}

impl DataSource {
    pub fn num_classes(&self) -> usize {
        match *self {
            DataSource::Blobs { num_classes, .. } | DataSource::Csv { num_classes, .. } => num_classes,
        }
    }
}

impl DatasetSpec {
    /// The full dataset. `zero_spread` forces noiseless blobs.
    pub fn materialise(&self, zero_spread: bool) -> dts_core::Result<Dataset> {
        match &self.source {
            DataSource::Blobs {
                num_classes,
                samples_per_class,
                dim,
                spread,
                seed,
            } => make_blobs(
                *num_classes,
                *samples_per_class,
                *dim,
                if zero_spread { 0.0 } else { *spread },
                *seed,
            ),
            DataSource::Csv {
                path,
                num_classes,
                skip_header,
            } => load_csv(path, *num_classes, *skip_header),
        }
    }

    pub fn train_test(&self) -> dts_core::Result<(Dataset, Dataset)> {
        split(&self.materialise(false)?, self.train_fraction, self.split_seed)
    }
}
