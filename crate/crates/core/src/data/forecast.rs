//! Forecasting cases: a context the model reads and the continuation it
//! predicts, with a consistent scaling of inputs and targets.

use serde::{Deserialize, Serialize};

use super::{forecast_samples, DataError, ForecastTarget, Result, Sample, ScaleKind, Scaler, SeriesDataset, Target, Task};

/// What the model reads from the context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ForecastInput {
    /// Raw levels.
    Level,
    /// First differences `x_t − x_{t−1}`, zero at the first step. Removes
    /// the level so the model sees the drift directly.
    #[default]
    Difference,
}

impl std::str::FromStr for ForecastInput {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "level" => Ok(ForecastInput::Level),
            "difference" | "diff" => Ok(ForecastInput::Difference),
            other => Err(format!("unknown forecast input {other:?} (expected level|difference)")),
        }
    }
}

/// How forecasting cases are cut, presented and encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForecastSettings {
    pub horizon: usize,
    /// Steps of context; `None` uses everything before the horizon.
    pub context: Option<usize>,
    pub input: ForecastInput,
    pub target: ForecastTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastCase {
    /// Model-ready context and encoded target.
    pub sample: Sample,
    /// Last context value in data units.
    pub last: Vec<f64>,
    /// Continuation in data units, `[horizon][dim]`.
    pub truth: Vec<Vec<f64>>,
}

/// Cut each series into `context` observed steps and the following
/// `horizon` steps. With `context = None` everything before the horizon is
/// context. Values stay in data units until [`scale_cases`].
pub fn forecast_cases(
    samples: &[Sample],
    horizon: usize,
    context: Option<usize>,
    input: ForecastInput,
    target: ForecastTarget,
) -> Result<Vec<ForecastCase>> {
    let cut: Vec<Sample> = samples
        .iter()
        .map(|s| match context {
            Some(c) if s.len() < c + horizon => Err(DataError::Contract(format!(
                "series {} has {} steps, fewer than context {c} + horizon {horizon}",
                s.id,
                s.len()
            ))),
            Some(c) => {
                let mut t = s.clone();
                t.values.truncate(c + horizon);
                t.mask.truncate(c + horizon);
                Ok(t)
            }
            None => Ok(s.clone()),
        })
        .collect::<Result<_>>()?;
    let encoded = forecast_samples(&cut, horizon, target)?;
    Ok(cut
        .iter()
        .zip(encoded)
        .map(|(full, mut sample)| {
            let ctx = sample.len();
            let last = full.values[ctx - 1].clone();
            let truth = full.values[ctx..].to_vec();
            if input == ForecastInput::Difference {
                sample.values = difference(&sample.values);
            }
            ForecastCase { sample, last, truth }
        })
        .collect())
}

/// Contexts with no known continuation, for producing forecasts. The first
/// `context` steps are used when given, otherwise the whole series.
pub fn context_cases(samples: &[Sample], context: Option<usize>, input: ForecastInput) -> Result<Vec<ForecastCase>> {
    samples
        .iter()
        .map(|s| {
            if s.observed_len() != s.len() {
                return Err(DataError::Contract(format!("forecast series {} contains padding", s.id)));
            }
            let c = context.unwrap_or(s.len());
            if c == 0 || s.len() < c {
                return Err(DataError::Contract(format!("series {} has {} steps, fewer than context {c}", s.id, s.len())));
            }
            let raw = &s.values[..c];
            let values = match input {
                ForecastInput::Level => raw.to_vec(),
                ForecastInput::Difference => difference(raw),
            };
            Ok(ForecastCase {
                sample: Sample::new(s.id.clone(), values, None, s.split),
                last: raw[c - 1].clone(),
                truth: Vec::new(),
            })
        })
        .collect()
}

fn difference(raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..raw.len())
        .map(|t| {
            if t == 0 {
                vec![0.0; raw[0].len()]
            } else {
                raw[t].iter().zip(&raw[t - 1]).map(|(a, b)| a - b).collect()
            }
        })
        .collect()
}

/// Fit a scaler on the observed context inputs of `train`.
pub fn fit_forecast_scaler(train: &[ForecastCase], kind: ScaleKind) -> Result<Scaler> {
    let dim = train
        .first()
        .map(|c| c.last.len())
        .ok_or_else(|| DataError::Contract("cannot fit scaling on an empty train split".into()))?;
    let ds = SeriesDataset {
        name: String::new(),
        dim,
        task: Task::Forecast { horizon: 1 },
        samples: train.iter().map(|c| c.sample.clone()).collect(),
        scaler: None,
    };
    Scaler::fit(&ds, kind)
}

/// Apply `scaler` to every context and encode targets in the same units:
/// deltas are divided by the scale, levels take the full affine map.
pub fn scale_cases(cases: &mut [ForecastCase], scaler: &Scaler, target: ForecastTarget) {
    let d = scaler.scale.len();
    for c in cases {
        for v in &mut c.sample.values {
            *v = scaler.apply(v);
        }
        if let Some(Target::Values(y)) = &mut c.sample.target {
            for (i, v) in y.iter_mut().enumerate() {
                let (o, s) = (scaler.offset[i % d], scaler.scale[i % d]);
                *v = match target {
                    ForecastTarget::Delta => *v / s,
                    ForecastTarget::Level => (*v - o) / s,
                };
            }
        }
    }
}

/// Head output back to data units, `[horizon][dim]`.
pub fn decode_case(case: &ForecastCase, output: &[f64], scaler: &Scaler, target: ForecastTarget) -> Vec<Vec<f64>> {
    output
        .chunks(case.last.len())
        .map(|row| match target {
            ForecastTarget::Delta => scaler
                .inverse_delta(row)
                .iter()
                .zip(&case.last)
                .map(|(d, l)| d + l)
                .collect(),
            ForecastTarget::Level => scaler.inverse(row),
        })
        .collect()
}
