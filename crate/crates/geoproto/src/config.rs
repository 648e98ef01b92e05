//! Run configuration. Every field has a default, so an empty file (or none at
//! all) runs the whole pipeline on synthetic data.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use geoproto_core::aggregate::{FusionGranularity, PoolMode, PoolingPlan};
use geoproto_core::encoder::{ConceptSpec, PaddingMode, TemporalCollapse, TestKind};
use geoproto_core::grid::{ExtractConfig, FeatureMeta, GridSpec};
use geoproto_core::model::Hyperparams;
use geoproto_core::stats::DEFAULT_COMPRESS_THRESHOLD;
use geoproto_core::synth::SynthPattern;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::hashing::hash_json;

/// Environment variable that overrides the cache root.
pub const CACHE_ENV: &str = "GEOPROTO_CACHE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    /// Master seed for generation, balancing, splitting and training.
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthSection,
    pub extract: ExtractSection,
    pub concepts: ConceptSection,
    pub pooling: PoolingSection,
    pub model: Hyperparams,
    pub split: SplitSection,
    pub explain: ExplainSection,
    pub evaluation: EvaluationSection,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub out: PathBuf,
    /// Defaults to `<out>/cache`; the environment variable wins over both.
    pub cache: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "data".into(),
            out: "run".into(),
            cache: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// Generate the dataset when `paths.data` holds none.
    pub enabled: bool,
    pub rows: usize,
    pub cols: usize,
    pub intervals: usize,
    pub n_temporal: usize,
    pub n_spatial: usize,
    pub n_spatiotemporal: usize,
    pub epoch_weekday: u8,
    pub pattern: SynthPattern,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            enabled: true,
            rows: 40,
            cols: 40,
            intervals: 20,
            n_temporal: 1,
            n_spatial: 1,
            n_spatiotemporal: 2,
            epoch_weekday: 0,
            pattern: SynthPattern::default(),
        }
    }
}

impl SynthSection {
    pub fn grid_spec(&self) -> GridSpec {
        GridSpec::new(
            self.rows,
            self.cols,
            self.intervals,
            self.n_temporal,
            self.n_spatial,
            self.n_spatiotemporal,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    pub size: usize,
    pub history: usize,
    pub stride: usize,
    /// Negatives kept per positive; 0 keeps every sample.
    pub balance: f64,
}

impl Default for ExtractSection {
    fn default() -> Self {
        Self {
            size: 9,
            history: 1,
            stride: 1,
            balance: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConceptSection {
    pub window_sizes: Vec<usize>,
    pub alpha: f64,
    pub padding: PaddingMode,
    pub temporal_collapse: TemporalCollapse,
    /// Empirical baselines above this many observations are compressed.
    pub compress_threshold: usize,
    /// Per-feature test overrides by feature name.
    pub tests: BTreeMap<String, TestKind>,
}

impl Default for ConceptSection {
    fn default() -> Self {
        Self {
            window_sizes: vec![3, 5],
            alpha: 0.05,
            padding: PaddingMode::Mask,
            temporal_collapse: TemporalCollapse::Any,
            compress_threshold: DEFAULT_COMPRESS_THRESHOLD,
            tests: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolingSection {
    pub mode: PoolMode,
    pub ring_radii: Vec<f64>,
    pub sectors: usize,
    pub fusion: FusionGranularity,
}

impl Default for PoolingSection {
    fn default() -> Self {
        Self {
            mode: PoolMode::Mean,
            ring_radii: PoolingPlan::DEFAULT_RING_RADII.to_vec(),
            sectors: 4,
            fusion: FusionGranularity::PerKind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub validation: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            train: 0.7,
            validation: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    pub top_n: usize,
    pub percentile: f64,
    pub hard_projection: bool,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self {
            top_n: 10,
            percentile: 1.0,
            hard_projection: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    /// Training seeds per ablation variant; rows report mean and sample
    /// standard deviation.
    pub seeds: usize,
    pub ablation_modes: Vec<PoolMode>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            seeds: 5,
            ablation_modes: vec![PoolMode::Mean, PoolMode::Max, PoolMode::None],
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> AppError {
    AppError::Config(e.to_string())
}

impl RunConfig {
    /// Load from TOML, or JSON when the extension is `.json`. `default` names
    /// the built-in configuration.
    pub fn load(path: Option<&Path>) -> AppResult<Self> {
        let cfg = match path {
            None => Self::default(),
            Some(p) if p.as_os_str() == "default" => Self::default(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| AppError::Config(format!("{}: {e}", p.display())))?;
                Self::parse(&text, p.extension().is_some_and(|e| e == "json"))
                    .map_err(|e| AppError::Config(format!("{}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, json: bool) -> Result<Self, String> {
        if json {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> AppResult<()> {
        let c = &self.concepts;
        if !(c.alpha > 0.0 && c.alpha < 1.0) {
            return Err(AppError::Config(format!("concepts.alpha must lie in (0, 1), got {}", c.alpha)));
        }
        if c.window_sizes.is_empty() || c.window_sizes.iter().any(|&w| w == 0 || w % 2 == 0) {
            return Err(AppError::Config("concepts.window_sizes must be odd and non-empty".into()));
        }
        let e = &self.extract;
        if e.size.is_multiple_of(2) || e.size == 0 {
            return Err(AppError::Config(format!("extract.size must be odd, got {}", e.size)));
        }
        if c.window_sizes.iter().any(|&w| w > e.size) {
            return Err(AppError::Config("scan windows may not exceed extract.size".into()));
        }
        if !(e.balance.is_finite() && e.balance >= 0.0) {
            return Err(AppError::Config("extract.balance must be >= 0".into()));
        }
        let s = &self.split;
        if !(s.train > 0.0 && s.validation >= 0.0 && s.train + s.validation < 1.0) {
            return Err(AppError::Config("split fractions must satisfy train > 0, validation >= 0, train + validation < 1".into()));
        }
        let x = &self.explain;
        if !(x.percentile > 0.0 && x.percentile <= 100.0) {
            return Err(AppError::Config("explain.percentile must lie in (0, 100]".into()));
        }
        if self.evaluation.seeds == 0 || self.evaluation.ablation_modes.is_empty() {
            return Err(AppError::Config("evaluation needs at least one seed and one mode".into()));
        }
        if self.synth.epoch_weekday > 6 {
            return Err(AppError::Config("synth.epoch_weekday must be 0..=6".into()));
        }
        self.synth.pattern.validate().map_err(config_err)?;
        self.model.validate().map_err(config_err)?;
        self.pooling_plan(self.pooling.mode).map_err(config_err)?;
        Ok(())
    }

    pub fn cache_root(&self) -> PathBuf {
        if let Some(dir) = std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()) {
            return dir.into();
        }
        self.paths.cache.clone().unwrap_or_else(|| self.paths.out.join("cache"))
    }

    pub fn extract_config(&self) -> ExtractConfig {
        ExtractConfig {
            size: self.extract.size,
            history: self.extract.history,
            stride: self.extract.stride,
            balance: (self.extract.balance > 0.0).then_some(self.extract.balance),
            seed: self.seed,
        }
    }

    pub fn concept_spec(&self, features: &[FeatureMeta]) -> AppResult<ConceptSpec> {
        let c = &self.concepts;
        let mut spec = ConceptSpec::from_features(features, c.window_sizes.clone(), c.alpha);
        spec.padding = c.padding;
        spec.temporal_collapse = c.temporal_collapse;
        for (name, &test) in &c.tests {
            let f = spec
                .features
                .iter_mut()
                .find(|f| &f.name == name)
                .ok_or_else(|| AppError::Config(format!("concepts.tests names unknown feature {name:?}")))?;
            f.test = test;
        }
        spec.validate(self.extract.size)?;
        Ok(spec)
    }

    pub fn pooling_plan(&self, mode: PoolMode) -> geoproto_core::Result<PoolingPlan> {
        PoolingPlan::new(self.extract.size, mode, self.pooling.ring_radii.clone(), self.pooling.sectors)
    }

    pub fn hyperparams(&self, seed: u64) -> Hyperparams {
        Hyperparams {
            seed,
            ..self.model.clone()
        }
    }

    /// Hash of everything that influences results. Paths are left out so the
    /// same run in another directory yields identical artifacts.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths::default();
        hash_json("config", &c)
    }
}
