//! Configuration file handling.
//!
//! One structured TOML file drives every stage. All fields are mandatory and
//! unknown keys are rejected, so a config either fully validates before any
//! stage runs or the run stops with a config error. Each command writes a
//! frozen copy of its effective configuration next to its artifacts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use flowdistill_core::data::{ParticleTypeSpec, Placement};
use flowdistill_core::flow::LossWeights;
use flowdistill_core::pipeline::{ArchConfig, Settings};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub architecture: ArchitectureConfig,
    pub training: TrainingConfig,
    pub loss: LossConfig,
    pub evaluation: EvaluationConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub grid: usize,
    pub n_total: usize,
    pub repeats_per_condition: usize,
    /// "stochastic" or "quantile" photon placement.
    pub placement: String,
    pub split_ratios: [u32; 3],
    pub types: Vec<TypeConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeConfig {
    pub name: String,
    pub fraction: f64,
    pub energy_range: [f64; 2],
    pub shower_width: f64,
    pub position_jitter: f64,
    pub decay_modes: usize,
    pub photon_yield: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub layers: usize,
    pub hidden: Vec<usize>,
    pub spline_bins: usize,
    pub tail_bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub teacher_epochs: usize,
    pub student_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub w_mse: f64,
    pub w_ch: f64,
    /// Logit clamp used in preprocessing.
    pub lambda: f64,
    /// Diversity clamp before inversion.
    pub delta: f64,
    /// Additive constant in the inverse-diversity weights.
    pub epsilon: f64,
    /// bs | bs+div | bs+ch | bs+ch+div
    pub variant: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub runs: usize,
    /// 0 evaluates the whole test split.
    pub max_generated: usize,
    pub bench_batch: usize,
    pub bench_repetitions: usize,
    pub bench_warmup: usize,
    /// `bench --assert` fails below this speedup.
    pub speedup_floor: f64,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: FileConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.to_settings()?.validate().map_err(CliError::from)?;
        flowdistill_core::flow::Variant::parse(&self.loss.variant).map_err(CliError::from)?;
        if self.dataset.split_ratios.iter().sum::<u32>() != 100 {
            return Err(CliError::Config("split_ratios must sum to 100".into()));
        }
        Ok(())
    }

    pub fn placement(&self) -> Result<Placement, CliError> {
        match self.dataset.placement.as_str() {
            "stochastic" => Ok(Placement::Stochastic),
            "quantile" => Ok(Placement::Quantile),
            other => Err(CliError::Config(format!(
                "placement must be 'stochastic' or 'quantile', got '{other}'"
            ))),
        }
    }

    pub fn to_settings(&self) -> Result<Settings, CliError> {
        let types: Vec<ParticleTypeSpec> = self
            .dataset
            .types
            .iter()
            .map(|t| ParticleTypeSpec {
                name: t.name.clone(),
                fraction: t.fraction,
                energy_range: (t.energy_range[0], t.energy_range[1]),
                shower_width: t.shower_width,
                position_jitter: t.position_jitter,
                decay_modes: t.decay_modes,
                photon_yield: t.photon_yield,
            })
            .collect();
        Ok(Settings {
            seed: self.seed,
            grid: self.dataset.grid,
            n_total: self.dataset.n_total,
            repeats_per_condition: self.dataset.repeats_per_condition,
            placement: self.placement()?,
            types,
            split_ratios: (
                self.dataset.split_ratios[0],
                self.dataset.split_ratios[1],
                self.dataset.split_ratios[2],
            ),
            arch: ArchConfig {
                layers: self.architecture.layers,
                hidden: self.architecture.hidden.clone(),
                spline_bins: self.architecture.spline_bins,
                tail_bound: self.architecture.tail_bound,
            },
            teacher_epochs: self.training.teacher_epochs,
            student_epochs: self.training.student_epochs,
            batch_size: self.training.batch_size,
            learning_rate: self.training.learning_rate,
            grad_clip: self.training.grad_clip,
            lambda: self.loss.lambda,
            delta: self.loss.delta,
            epsilon: self.loss.epsilon,
            loss_weights: LossWeights {
                w_mse: self.loss.w_mse,
                w_ch: self.loss.w_ch,
            },
            eval_runs: self.evaluation.runs,
            max_generated: self.evaluation.max_generated,
            bench_batch: self.evaluation.bench_batch,
            bench_repetitions: self.evaluation.bench_repetitions,
            bench_warmup: self.evaluation.bench_warmup,
        })
    }

    /// Writes the effective configuration next to a stage's artifacts.
    pub fn freeze(&self, dir: &Path) -> Result<(), CliError> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))?;
        std::fs::create_dir_all(dir).map_err(flowdistill_core::Error::from)?;
        std::fs::write(dir.join("config.frozen.toml"), text)
            .map_err(flowdistill_core::Error::from)?;
        Ok(())
    }
}
