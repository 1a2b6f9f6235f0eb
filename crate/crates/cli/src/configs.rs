//! Per-command JSON configs with embedded defaults. A `--config` file
//! overrides defaults field by field (serde defaults), and the relevant
//! command-line flags override the file.

use std::path::PathBuf;

use monoframe::config::ModelConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenStaticConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub frames_per_video: usize,
    pub image_size: usize,
}

impl Default for GenStaticConfig {
    fn default() -> Self {
        GenStaticConfig {
            n_train: 512,
            n_test: 64,
            frames_per_video: 8,
            image_size: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenTemporalConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub frames_per_video: usize,
    pub image_size: usize,
}

impl Default for GenTemporalConfig {
    fn default() -> Self {
        GenTemporalConfig {
            n_train: 128,
            n_test: 32,
            frames_per_video: 8,
            image_size: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildSsv2Config {
    /// Public-layout annotation JSON lists.
    pub train_annotations: Option<PathBuf>,
    pub validation_annotations: Option<PathBuf>,
    /// Alternatively: corpus manifests carrying template/label meta and
    /// frames (e.g. from gen-temporal).
    pub train_manifest: Option<PathBuf>,
    pub validation_manifest: Option<PathBuf>,
    pub per_template: usize,
}

impl Default for BuildSsv2Config {
    fn default() -> Self {
        BuildSsv2Config {
            train_annotations: None,
            validation_annotations: None,
            train_manifest: None,
            validation_manifest: None,
            per_template: 12,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub train_manifest: PathBuf,
    pub model: ModelConfig,
    pub objectives: Vec<String>,
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub min_lr: f64,
    /// Fraction of an epoch spent in linear warmup.
    pub warmup_epochs: f64,
    pub weight_decay: f64,
    pub frames_per_step: usize,
    pub augment: bool,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            train_manifest: PathBuf::new(),
            model: ModelConfig::default(),
            objectives: vec!["vtc".into(), "mlm".into(), "vtm".into()],
            epochs: 10,
            batch_size: 16,
            peak_lr: 1e-4,
            min_lr: 1e-6,
            warmup_epochs: 1.0,
            weight_decay: 0.02,
            frames_per_step: 1,
            augment: true,
            grad_clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn finetune() -> Self {
        TrainConfig {
            objectives: vec!["vtc".into(), "vtm".into()],
            peak_lr: 1e-5,
            warmup_epochs: 0.0,
            ..TrainConfig::default()
        }
    }

    /// Second-stage recipe: multi-frame training from a single-frame
    /// checkpoint at a reduced learning rate.
    pub fn temporal() -> Self {
        TrainConfig {
            objectives: vec!["vtc".into(), "vtm".into()],
            peak_lr: 5e-5,
            warmup_epochs: 0.0,
            frames_per_step: 4,
            epochs: 5,
            ..TrainConfig::default()
        }
    }

    pub fn default_pretrain_json() -> String {
        serde_json::to_string_pretty(&TrainConfig::default()).expect("serialize defaults")
    }

    pub fn default_finetune_json() -> String {
        serde_json::to_string_pretty(&TrainConfig::finetune()).expect("serialize defaults")
    }

    pub fn default_temporal_json() -> String {
        serde_json::to_string_pretty(&TrainConfig::temporal()).expect("serialize defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalRetrievalConfig {
    pub manifest: PathBuf,
    pub t_test: usize,
    pub strategy: String,
    /// per_caption | paragraph | dedup_caption
    pub query_mode: String,
}

impl Default for EvalRetrievalConfig {
    fn default() -> Self {
        EvalRetrievalConfig {
            manifest: PathBuf::new(),
            t_test: 4,
            strategy: "concat".into(),
            query_mode: "per_caption".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalQaConfig {
    pub manifest: PathBuf,
    pub t_test: usize,
    pub max_answer_len: usize,
}

impl Default for EvalQaConfig {
    fn default() -> Self {
        EvalQaConfig {
            manifest: PathBuf::new(),
            t_test: 4,
            max_answer_len: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareEnsemblesConfig {
    pub manifest: PathBuf,
    pub frame_counts: Vec<usize>,
    pub strategies: Vec<String>,
    pub query_mode: String,
    /// Also emit ensembles.svg (grid.json is always written).
    pub plot: bool,
}

impl Default for CompareEnsemblesConfig {
    fn default() -> Self {
        CompareEnsemblesConfig {
            manifest: PathBuf::new(),
            frame_counts: vec![1, 2, 4, 8],
            strategies: vec!["concat".into(), "lse".into(), "max".into(), "mean".into()],
            query_mode: "per_caption".into(),
            plot: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Finite-difference probes per parameter tensor.
    pub entries_per_param: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig { entries_per_param: 4 }
    }
}

macro_rules! default_json {
    ($($ty:ty),+ $(,)?) => {
        $(impl $ty {
            pub fn default_json() -> String {
                serde_json::to_string_pretty(&<$ty>::default()).expect("serialize defaults")
            }
        })+
    };
}

default_json!(
    GenStaticConfig,
    GenTemporalConfig,
    BuildSsv2Config,
    EvalRetrievalConfig,
    EvalQaConfig,
    CompareEnsemblesConfig,
    GradcheckConfig,
);
