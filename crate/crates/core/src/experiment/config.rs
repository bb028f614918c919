use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::datagen::{CsvSchema, HmmConfig, IcuConfig};
use crate::explainers::{DynamaskConfig, ExplainerConfig, IgConfig, LearnedMode, OcclusionConfig};
use crate::metrics::{Substitution, DEFAULT_THRESHOLDS};
use crate::nets::TrainConfig;
use crate::perturbation::GeneratorKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Hmm,
    IcuLike,
    Csv,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Hmm => "hmm",
            Self::IcuLike => "icu_like",
            Self::Csv => "csv",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ExperimentKind {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hmm" => Ok(Self::Hmm),
            "icu_like" | "icu-like" | "icu" => Ok(Self::IcuLike),
            "csv" => Ok(Self::Csv),
            other => Err(ExperimentError::Config(format!("unknown experiment '{other}' (hmm, icu_like, csv)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Fast,
    Full,
}

impl FromStr for Profile {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fast" => Ok(Self::Fast),
            "full" => Ok(Self::Full),
            other => Err(ExperimentError::Config(format!("unknown profile '{other}' (fast, full)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// 5x5 grid over both regularization weights.
    Lambda,
    /// Preservation and deletion modes side by side.
    Deletion,
}

impl FromStr for Ablation {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "lambda" => Ok(Self::Lambda),
            "deletion" => Ok(Self::Deletion),
            other => Err(ExperimentError::Config(format!("unknown ablation '{other}' (lambda, deletion)"))),
        }
    }
}

/// Weights of the regularization grid.
pub const LAMBDA_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

pub fn lambda_method_name(lambda1: f64, lambda2: f64) -> String {
    format!("learned_l1_{lambda1}_l2_{lambda2}")
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSource {
    pub path: Option<PathBuf>,
    pub schema: CsvSchema,
    /// Fill values for cells still missing after forward filling.
    pub impute_defaults: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    pub hmm: HmmConfig,
    pub icu: IcuConfig,
    pub csv: CsvSource,
    pub train_fraction: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            hmm: HmmConfig::default(),
            icu: IcuConfig::default(),
            csv: CsvSource::default(),
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainersSection {
    pub learned: Option<ExplainerConfig>,
    pub deletion: Option<ExplainerConfig>,
    pub dynamask: Option<DynamaskConfig>,
    pub occlusion: Option<OcclusionConfig>,
    pub augmented_occlusion: Option<OcclusionConfig>,
    pub integrated_gradients: Option<IgConfig>,
}

impl ExplainersSection {
    pub fn standard() -> Self {
        Self {
            learned: Some(ExplainerConfig::default()),
            deletion: None,
            dynamask: Some(DynamaskConfig::default()),
            occlusion: Some(OcclusionConfig::default()),
            augmented_occlusion: Some(OcclusionConfig::default()),
            integrated_gradients: Some(IgConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsSection {
    /// Fractions of top cells masked for the prediction metrics.
    pub fractions: Vec<f64>,
    pub substitutions: Vec<Substitution>,
    pub thresholds: usize,
    /// Masked prefix and suffix lengths for the positive-rate curve.
    pub masking_steps: Vec<usize>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            fractions: Vec::new(),
            substitutions: vec![Substitution::TimeAverage, Substitution::Zeros],
            thresholds: DEFAULT_THRESHOLDS,
            masking_steps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub folds: usize,
    pub seed: u64,
    /// Test samples explained per fold; `None` explains all of them.
    pub explain_samples: Option<usize>,
    pub ablation: Ablation,
    pub compare_generators: bool,
    pub jobs: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            explain_samples: None,
            ablation: Ablation::None,
            compare_generators: false,
            jobs: None,
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: ExperimentKind,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: TrainConfig,
    /// Without an `[explainers]` section every method runs with defaults.
    #[serde(default = "ExplainersSection::standard")]
    pub explainers: ExplainersSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub run: RunSection,
}

/// One explainer as run by the driver.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodKind {
    Learned(ExplainerConfig),
    Dynamask(DynamaskConfig),
    Occlusion(OcclusionConfig),
    AugmentedOcclusion(OcclusionConfig),
    IntegratedGradients(IgConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Method {
    pub name: String,
    pub kind: MethodKind,
}

impl ExperimentConfig {
    pub fn preset(kind: ExperimentKind, profile: Profile) -> Self {
        let full = profile == Profile::Full;
        let iterations = if full { 500 } else { 100 };
        // mask and generator share one learning rate in the benchmark runs
        let learned = ExplainerConfig {
            iterations,
            generator_lr: 0.01,
            ..ExplainerConfig::default()
        };
        let mut cfg = Self {
            name: kind,
            dataset: DatasetSection::default(),
            model: TrainConfig::default(),
            explainers: ExplainersSection {
                learned: Some(learned),
                deletion: None,
                dynamask: Some(DynamaskConfig {
                    iterations,
                    ..DynamaskConfig::default()
                }),
                occlusion: Some(OcclusionConfig::default()),
                augmented_occlusion: Some(OcclusionConfig::default()),
                integrated_gradients: Some(IgConfig::default()),
            },
            metrics: MetricsSection::default(),
            run: RunSection::default(),
        };
        match kind {
            ExperimentKind::Hmm => {
                if !full {
                    cfg.dataset.hmm.n_series = 200;
                    cfg.dataset.hmm.length = 100;
                }
                cfg.model = TrainConfig {
                    hidden_size: 32,
                    epochs: 30,
                    batch_size: 32,
                    lr: 0.01,
                    seed: 0,
                };
            }
            ExperimentKind::IcuLike | ExperimentKind::Csv => {
                if !full {
                    cfg.dataset.icu.n_samples = 500;
                }
                cfg.model = TrainConfig {
                    hidden_size: 32,
                    epochs: 10,
                    batch_size: 32,
                    lr: 0.001,
                    seed: 0,
                };
                cfg.metrics.fractions = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
                cfg.metrics.masking_steps = vec![cfg.dataset.icu.length / 4];
                cfg.explainers.dynamask = None;
            }
        }
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ExperimentError> {
        toml::to_string(self).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.run.folds == 0 {
            return bad("folds must be at least 1".into());
        }
        if !(self.dataset.train_fraction > 0.0 && self.dataset.train_fraction < 1.0) {
            return bad(format!("train fraction {} outside (0, 1)", self.dataset.train_fraction));
        }
        if let Some(f) = self.metrics.fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
            return bad(format!("mask fraction {f} outside (0, 1)"));
        }
        if self.name == ExperimentKind::Csv && self.dataset.csv.path.is_none() {
            return bad("csv experiment needs dataset.csv.path".into());
        }
        let methods = self.methods();
        if methods.is_empty() {
            return bad("no explainers configured".into());
        }
        for m in &methods {
            match &m.kind {
                MethodKind::Learned(c) => c.validate(),
                MethodKind::Dynamask(c) => c.validate(),
                MethodKind::IntegratedGradients(c) if c.steps == 0 => Err(crate::explainers::ExplainerError::Config(
                    "integrated gradients needs at least one step".into(),
                )),
                _ => Ok(()),
            }
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", m.name)))?;
        }
        Ok(())
    }

    /// The explainers of one fold after applying the ablation switches.
    pub fn methods(&self) -> Vec<Method> {
        let ex = &self.explainers;
        let base_learned = ex.learned.clone().unwrap_or_default();
        let learned = |cfg: ExplainerConfig| Method {
            name: cfg.method_name(),
            kind: MethodKind::Learned(cfg),
        };
        let deletion = || {
            learned(ExplainerConfig {
                mode: LearnedMode::Deletion,
                ..ex.deletion.clone().unwrap_or_else(|| base_learned.clone())
            })
        };
        let mut out = Vec::new();
        match self.run.ablation {
            Ablation::Lambda => {
                for &l1 in &LAMBDA_GRID {
                    for &l2 in &LAMBDA_GRID {
                        out.push(Method {
                            name: lambda_method_name(l1, l2),
                            kind: MethodKind::Learned(ExplainerConfig {
                                lambda1: l1,
                                lambda2: l2,
                                ..base_learned.clone()
                            }),
                        });
                    }
                }
            }
            Ablation::Deletion => {
                out.push(learned(base_learned.clone()));
                out.push(deletion());
            }
            Ablation::None => {
                if let Some(c) = &ex.learned {
                    out.push(learned(c.clone()));
                }
                if ex.deletion.is_some() {
                    out.push(deletion());
                }
                if let Some(c) = &ex.dynamask {
                    out.push(Method {
                        name: "dynamask".into(),
                        kind: MethodKind::Dynamask(c.clone()),
                    });
                }
                if let Some(c) = &ex.occlusion {
                    out.push(Method {
                        name: "occlusion".into(),
                        kind: MethodKind::Occlusion(c.clone()),
                    });
                }
                if let Some(c) = &ex.augmented_occlusion {
                    out.push(Method {
                        name: "augmented_occlusion".into(),
                        kind: MethodKind::AugmentedOcclusion(c.clone()),
                    });
                }
                if let Some(c) = &ex.integrated_gradients {
                    out.push(Method {
                        name: "integrated_gradients".into(),
                        kind: MethodKind::IntegratedGradients(c.clone()),
                    });
                }
            }
        }
        if self.run.compare_generators {
            for generator in [GeneratorKind::Zero, GeneratorKind::Unidirectional, GeneratorKind::Bidirectional] {
                let m = learned(ExplainerConfig {
                    generator,
                    ..base_learned.clone()
                });
                if !out.iter().any(|o| o.name == m.name) {
                    out.push(m);
                }
            }
        }
        out
    }

    /// Output directory: the configured one or `runs/<name>`.
    pub fn output_dir(&self) -> PathBuf {
        self.run
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(self.name.label()))
    }
}
