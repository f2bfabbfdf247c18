//! Experiment configuration and the end-to-end train-then-analyze run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{collapse_report, AnalysisInput, AnalysisOptions, CollapseReport};
use crate::data::{self, Dataset, FieldSchema, PatternParams, SplitSpec};
use crate::error::{Error, Result};
use crate::models::{Model, ModelSpec};
use crate::train::{train, RunRecord, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSourceKind {
    Toy,
    TwoPattern,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSourceKind,
    /// Generator seed (toy and two_pattern).
    pub seed: u64,
    pub split_seed: u64,
    /// Fraction of the training split kept, for data-amount sweeps.
    pub fraction: f64,
    /// toy: cardinality of the third field.
    pub d3: usize,
    /// two_pattern: field cardinalities.
    pub cardinalities: Vec<usize>,
    pub pattern: PatternParams,
    /// csv: path, relative to the config file.
    pub path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSourceKind::TwoPattern,
            seed: 0,
            split_seed: 0,
            fraction: 1.0,
            d3: 3,
            cardinalities: vec![20, 40, 80, 160, 320, 640],
            pattern: PatternParams::default(),
            path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub analysis: AnalysisOptions,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            analysis: AnalysisOptions::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Parses a JSON config, naming the offending key and position on failure.
pub fn parse_config(text: &str, source: &str) -> Result<ExperimentConfig> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        context: format!("{source}:{}:{}", e.line(), e.column()),
        detail: e.to_string(),
    })
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.data.fraction > 0.0 && self.data.fraction <= 1.0) {
            return Err(Error::Config(format!(
                "data.fraction must be in (0, 1], got {}",
                self.data.fraction
            )));
        }
        if self.analysis.se_split_sets < 2 {
            return Err(Error::Config("analysis.se_split_sets must be >= 2".into()));
        }
        match self.data.source {
            DataSourceKind::Csv if self.data.path.is_none() => {
                Err(Error::Config("data.path is required for csv data".into()))
            }
            DataSourceKind::Toy if self.data.d3 == 0 => {
                Err(Error::Config("data.d3 must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Builds the dataset described by the `data` section. Relative csv
    /// paths resolve against `base_dir`.
    pub fn load_dataset(&self, base_dir: &Path) -> Result<Dataset> {
        let d = &self.data;
        match d.source {
            DataSourceKind::Toy => data::gen_toy(d.d3, d.seed),
            DataSourceKind::TwoPattern => {
                let schema = FieldSchema::from_cardinalities(&d.cardinalities)?;
                Ok(data::gen_two_pattern(&schema, &d.pattern, d.seed)?.dataset)
            }
            DataSourceKind::Csv => {
                let p = d.path.as_ref().expect("validated");
                data::load_csv(base_dir.join(p))
            }
        }
    }
}

/// Everything a finished run produces.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub record: RunRecord,
    pub report: CollapseReport,
    pub model: Model,
}

/// Generates or loads the data, splits it, trains and analyzes.
pub fn run_experiment(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let ds = cfg.load_dataset(base_dir)?;
    let mut splits = data::split(
        &ds,
        &SplitSpec {
            seed: cfg.data.split_seed,
            ..SplitSpec::default()
        },
    )?;
    if cfg.data.fraction < 1.0 {
        splits.train = data::subsample(&splits.train, cfg.data.fraction, cfg.data.split_seed)?;
    }
    let mut model = Model::new(&ds.schema, &cfg.model, cfg.train.seed)?;
    let mut record = train(&mut model, &splits, &cfg.train)?;
    record.config = cfg.to_json();
    let mut report = collapse_report(&AnalysisInput::from_model(&model)?, &cfg.analysis)?;
    report.seed = Some(cfg.train.seed);
    report.config = cfg.to_json();
    Ok(Outcome {
        record,
        report,
        model,
    })
}
