//! Run settings: built-in defaults, overridden by a JSON config file,
//! overridden by command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::data::{CsvSchema, ForecastInput, ForecastSettings, ForecastTarget, ScaleKind};
use crate::model::{HeadKind, ModelConfig, StrideMode};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Uea,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum HeadChoice {
    Classifier,
    Predictor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScaleChoice {
    Zscore,
    Minmax,
    None,
}

impl ScaleChoice {
    pub fn kind(self) -> Option<ScaleKind> {
        match self {
            ScaleChoice::Zscore => Some(ScaleKind::ZScore),
            ScaleChoice::Minmax => Some(ScaleKind::MinMax),
            ScaleChoice::None => None,
        }
    }
}

/// Every setting a config file or flag may supply. Unset fields fall
/// through to the next source.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    pub k: Option<usize>,
    pub m: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub attn_dim: Option<usize>,
    pub encoder_dim: Option<usize>,
    pub decoder_hidden_dim: Option<usize>,
    pub stride_mode: Option<StrideMode>,
    pub head: Option<HeadChoice>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub kl_weight: Option<f64>,
    pub kl_warmup: Option<bool>,
    pub batch_size: Option<usize>,
    pub grad_clip_norm: Option<f64>,
    pub mc_samples: Option<usize>,
    pub seed: Option<u64>,
    pub scale: Option<ScaleChoice>,
    pub horizon: Option<usize>,
    pub context: Option<usize>,
    pub forecast_input: Option<ForecastInput>,
    pub forecast_target: Option<ForecastTarget>,
    pub format: Option<Format>,
    pub id_col: Option<String>,
    pub time_col: Option<String>,
    pub value_cols: Option<Vec<String>>,
    pub label_col: Option<String>,
    pub split_col: Option<String>,
}

macro_rules! layer {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl Overrides {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// `self` with every field `top` sets replaced.
    pub fn layered(mut self, top: &Overrides) -> Self {
        layer!(self, top; k, m, hidden_dim, attn_dim, encoder_dim, decoder_hidden_dim, stride_mode, head,
            epochs, learning_rate, kl_weight, kl_warmup, batch_size, grad_clip_norm, mc_samples, seed,
            scale, horizon, context, forecast_input, forecast_target,
            format, id_col, time_col, value_cols, label_col, split_col);
        self
    }
}

/// Architecture knobs that do not depend on the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub k: usize,
    pub m: usize,
    pub hidden_dim: usize,
    pub attn_dim: usize,
    pub encoder_dim: usize,
    pub decoder_hidden_dim: usize,
    pub stride_mode: StrideMode,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            k: 4,
            m: 2,
            hidden_dim: 8,
            attn_dim: 8,
            encoder_dim: 8,
            decoder_hidden_dim: 8,
            stride_mode: StrideMode::Geometric,
        }
    }
}

impl ModelSettings {
    pub fn model_config(&self, input_dim: usize, head: HeadKind) -> ModelConfig {
        ModelConfig {
            k: self.k,
            m: self.m,
            input_dim,
            hidden_dims: vec![self.hidden_dim; self.m],
            attn_dim: self.attn_dim,
            encoder_dim: self.encoder_dim,
            decoder_hidden_dim: self.decoder_hidden_dim,
            head,
            stride_mode: self.stride_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSettings {
    pub format: Option<Format>,
    pub scale: ScaleChoice,
    pub csv: CsvSchema,
}

/// The effective configuration of a run, echoed to its manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub head: Option<HeadChoice>,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub data: DataSettings,
    pub forecast: Option<ForecastSettings>,
}

impl RunConfig {
    /// Resolve `o` over the defaults. A horizon, or an explicit predictor
    /// head, makes the run a forecasting run.
    pub fn resolve(o: &Overrides) -> Result<RunConfig, CliError> {
        let dm = ModelSettings::default();
        let hidden = o.hidden_dim.unwrap_or(dm.hidden_dim);
        let model = ModelSettings {
            k: o.k.unwrap_or(dm.k),
            m: o.m.unwrap_or(dm.m),
            hidden_dim: hidden,
            attn_dim: o.attn_dim.unwrap_or(hidden),
            encoder_dim: o.encoder_dim.unwrap_or(hidden),
            decoder_hidden_dim: o.decoder_hidden_dim.unwrap_or(hidden),
            stride_mode: o.stride_mode.unwrap_or(dm.stride_mode),
        };
        let dt = TrainConfig::default();
        let train = TrainConfig {
            learning_rate: o.learning_rate.unwrap_or(dt.learning_rate),
            batch_size: o.batch_size.unwrap_or(dt.batch_size),
            epochs: o.epochs.unwrap_or(dt.epochs),
            kl_weight: o.kl_weight.unwrap_or(dt.kl_weight),
            kl_warmup: o.kl_warmup.unwrap_or(dt.kl_warmup),
            grad_clip_norm: o.grad_clip_norm.unwrap_or(dt.grad_clip_norm),
            seed: o.seed.unwrap_or(dt.seed),
            mc_samples: o.mc_samples.unwrap_or(dt.mc_samples),
            adam: dt.adam,
        };
        train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let ds = CsvSchema::default();
        let csv = CsvSchema {
            id_col: o.id_col.clone().unwrap_or(ds.id_col),
            time_col: match o.time_col.as_deref() {
                Some("") => None,
                Some(t) => Some(t.to_string()),
                None => ds.time_col,
            },
            value_cols: o.value_cols.clone().unwrap_or_default(),
            label_col: o.label_col.clone().or(ds.label_col),
            split_col: o.split_col.clone().or(ds.split_col),
        };
        let forecast = match (o.horizon, o.head) {
            (Some(h), Some(HeadChoice::Classifier)) => {
                return Err(CliError::Usage(format!("--horizon {h} conflicts with a classifier head")))
            }
            (Some(0), _) => return Err(CliError::Usage("horizon must be at least 1".into())),
            (Some(horizon), _) => Some(ForecastSettings {
                horizon,
                context: o.context,
                input: o.forecast_input.unwrap_or_default(),
                target: o.forecast_target.unwrap_or_default(),
            }),
            (None, Some(HeadChoice::Predictor)) => {
                return Err(CliError::Usage("a predictor head needs --horizon".into()))
            }
            (None, _) => None,
        };
        if model.k < 1 || model.m < 1 || model.hidden_dim < 1 {
            return Err(CliError::Usage("k, m and hidden_dim must be at least 1".into()));
        }
        Ok(RunConfig {
            head: o.head,
            model,
            train,
            data: DataSettings {
                format: o.format,
                scale: o.scale.unwrap_or(ScaleChoice::Zscore),
                csv,
            },
            forecast,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file: Overrides = serde_json::from_str(r#"{"k": 3, "epochs": 7, "learning_rate": 0.5}"#).unwrap();
        let flags = Overrides {
            k: Some(5),
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(&file.layered(&flags)).unwrap();
        assert_eq!(cfg.model.k, 5);
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.learning_rate, 0.5);
        assert_eq!(cfg.model.m, ModelSettings::default().m);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn rejects_unknown_and_inconsistent_settings() {
        assert!(serde_json::from_str::<Overrides>(r#"{"kk": 3}"#).is_err());
        let bad = Overrides {
            horizon: Some(4),
            head: Some(HeadChoice::Classifier),
            ..Overrides::default()
        };
        assert!(RunConfig::resolve(&bad).is_err());
        let bad = Overrides {
            learning_rate: Some(-1.0),
            ..Overrides::default()
        };
        assert!(RunConfig::resolve(&bad).is_err());
    }
}
