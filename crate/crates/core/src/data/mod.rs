//! Datasets of multivariate series: ingestion, scaling, splits and a
//! synthetic generator with planted multistep regimes.

pub mod csv;
pub mod forecast;
pub mod scale;
pub mod synth;
pub mod uea;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub use self::csv::{load_csv, parse_csv, write_csv, written_schema, CsvSchema};
pub use forecast::{
    context_cases, decode_case, fit_forecast_scaler, forecast_cases, scale_cases, ForecastCase, ForecastInput, ForecastSettings,
};
pub use scale::{fit_apply_scaling, ScaleKind, Scaler};
pub use synth::{generate_synth, EmissionKind, LabelRule, RegimeSpec, SynthOutput, SynthSpec};
pub use uea::{load_uea, load_uea_pair, parse_uea, write_uea};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train|test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Values(Vec<f64>),
}

/// One series, `values[t][d]`. `mask[t]` is false for padded steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub values: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
    pub target: Option<Target>,
    pub split: Split,
}

impl Sample {
    pub fn new(id: impl Into<String>, values: Vec<Vec<f64>>, target: Option<Target>, split: Split) -> Self {
        let mask = vec![true; values.len()];
        Sample {
            id: id.into(),
            values,
            mask,
            target,
            split,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn observed_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.values.iter().map(|v| Tensor::vector(v.clone())).collect()
    }

    /// `None` when every step is observed.
    pub fn mask_opt(&self) -> Option<&[bool]> {
        if self.mask.iter().all(|&m| m) {
            None
        } else {
            Some(&self.mask)
        }
    }

    pub fn class(&self) -> Option<usize> {
        match self.target {
            Some(Target::Class(c)) => Some(c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Classification { class_names: Vec<String> },
    Forecast { horizon: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    pub name: String,
    pub dim: usize,
    pub task: Task,
    pub samples: Vec<Sample>,
    /// Set once the values have been scaled.
    pub scaler: Option<Scaler>,
}

impl SeriesDataset {
    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn split_owned(&self, split: Split) -> Vec<Sample> {
        self.samples.iter().filter(|s| s.split == split).cloned().collect()
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.task {
            Task::Classification { class_names } => Some(class_names.len()),
            Task::Forecast { .. } => None,
        }
    }

    /// Checks the shared-dimension and target invariants.
    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            if s.values.is_empty() {
                return Err(DataError::Format(format!("series {} is empty", s.id)));
            }
            if s.mask.len() != s.values.len() {
                return Err(DataError::Format(format!("series {} has a mask of the wrong length", s.id)));
            }
            if let Some(bad) = s.values.iter().find(|v| v.len() != self.dim) {
                return Err(DataError::Format(format!(
                    "series {} has a step of dimension {} in a dimension-{} dataset",
                    s.id,
                    bad.len(),
                    self.dim
                )));
            }
            if let (Task::Classification { class_names }, Some(Target::Class(c))) = (&self.task, &s.target) {
                if *c >= class_names.len() {
                    return Err(DataError::Format(format!("series {} has class id {c} out of range", s.id)));
                }
            }
        }
        Ok(())
    }

    /// Right-pad every series to the longest length, masking the padding.
    /// Padding repeats the last observed step.
    pub fn pad_to_max(&mut self) {
        let max = self.samples.iter().map(|s| s.len()).max().unwrap_or(0);
        for s in &mut self.samples {
            if let Some(last) = s.values.last().cloned() {
                while s.values.len() < max {
                    s.values.push(last.clone());
                    s.mask.push(false);
                }
            }
        }
    }
}

/// Split a `context + horizon` series into the observed context and the
/// continuation.
pub fn stock_protocol_split(series: &[Vec<f64>], context: usize, horizon: usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if context == 0 || horizon == 0 {
        return Err(DataError::Contract("context and horizon must be at least 1".into()));
    }
    if series.len() != context + horizon {
        return Err(DataError::Contract(format!(
            "series of length {} cannot be split into {context} + {horizon}",
            series.len()
        )));
    }
    Ok((series[..context].to_vec(), series[context..].to_vec()))
}

/// How a forecast target is encoded for the predictor head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ForecastTarget {
    /// Continuation minus the last context value.
    #[default]
    Delta,
    /// Continuation as-is.
    Level,
}

impl std::str::FromStr for ForecastTarget {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "delta" => Ok(ForecastTarget::Delta),
            "level" => Ok(ForecastTarget::Level),
            other => Err(format!("unknown forecast target {other:?} (expected delta|level)")),
        }
    }
}

/// Turn full-length forecast series into context samples whose target is
/// the flattened continuation.
pub fn forecast_samples(samples: &[Sample], horizon: usize, encoding: ForecastTarget) -> Result<Vec<Sample>> {
    samples
        .iter()
        .map(|s| {
            if s.observed_len() != s.len() {
                return Err(DataError::Contract(format!("forecast series {} contains padding", s.id)));
            }
            let context = s.len().checked_sub(horizon).filter(|&c| c > 0).ok_or_else(|| {
                DataError::Contract(format!("series {} is too short for horizon {horizon}", s.id))
            })?;
            let (ctx, cont) = stock_protocol_split(&s.values, context, horizon)?;
            let last = ctx.last().expect("context is nonempty").clone();
            let target = cont
                .iter()
                .flat_map(|row| {
                    row.iter().zip(&last).map(move |(v, l)| match encoding {
                        ForecastTarget::Delta => v - l,
                        ForecastTarget::Level => *v,
                    })
                })
                .collect();
            Ok(Sample::new(s.id.clone(), ctx, Some(Target::Values(target)), s.split))
        })
        .collect()
}

/// Inverse of the target encoding: `[horizon][dim]` values.
pub fn decode_forecast(context_last: &[f64], flat: &[f64], encoding: ForecastTarget) -> Vec<Vec<f64>> {
    let d = context_last.len();
    flat.chunks(d)
        .map(|row| match encoding {
            ForecastTarget::Delta => row.iter().zip(context_last).map(|(v, l)| v + l).collect(),
            ForecastTarget::Level => row.to_vec(),
        })
        .collect()
}

/// Order ids numerically when both parse as numbers, otherwise lexically.
pub(crate) fn compare_ids(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.partial_cmp(&y).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}
