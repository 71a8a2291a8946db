use serde::{Deserialize, Serialize};

use super::{DataError, Result, SeriesDataset, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKind {
    #[default]
    ZScore,
    MinMax,
}

impl std::str::FromStr for ScaleKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "zscore" | "z_score" => Ok(ScaleKind::ZScore),
            "minmax" | "min_max" => Ok(ScaleKind::MinMax),
            other => Err(format!("unknown scaling {other:?} (expected zscore|minmax)")),
        }
    }
}

/// Per-dimension affine map `x ↦ (x − offset) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub kind: ScaleKind,
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    /// Statistics over the observed steps of the train split. A dimension
    /// with zero spread gets scale 1.
    pub fn fit(ds: &SeriesDataset, kind: ScaleKind) -> Result<Scaler> {
        let train = ds.split(Split::Train);
        let rows: Vec<&Vec<f64>> = train
            .iter()
            .flat_map(|s| s.values.iter().zip(&s.mask).filter(|(_, &m)| m).map(|(v, _)| v))
            .collect();
        if rows.is_empty() {
            return Err(DataError::Contract("cannot fit scaling on an empty train split".into()));
        }
        let n = rows.len() as f64;
        let mut offset = vec![0.0; ds.dim];
        let mut scale = vec![1.0; ds.dim];
        for d in 0..ds.dim {
            let col = rows.iter().map(|r| r[d]);
            let (o, s) = match kind {
                ScaleKind::ZScore => {
                    let mean = col.clone().sum::<f64>() / n;
                    let var = col.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    (mean, var.sqrt())
                }
                ScaleKind::MinMax => {
                    let lo = col.clone().fold(f64::INFINITY, f64::min);
                    let hi = col.fold(f64::NEG_INFINITY, f64::max);
                    (lo, hi - lo)
                }
            };
            offset[d] = o;
            scale[d] = if s > 0.0 { s } else { 1.0 };
        }
        Ok(Scaler { kind, offset, scale })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(x, (o, s))| (x - o) / s)
            .collect()
    }

    pub fn inverse(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(x, (o, s))| x * s + o)
            .collect()
    }

    /// Inverse for differences: only the scale applies.
    pub fn inverse_delta(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.scale).map(|(x, s)| x * s).collect()
    }
}

/// Fit on train, apply to every split. A dataset that already carries a
/// scaler is returned unchanged.
pub fn fit_apply_scaling(mut ds: SeriesDataset, kind: ScaleKind) -> Result<SeriesDataset> {
    if ds.scaler.is_some() {
        return Ok(ds);
    }
    let scaler = Scaler::fit(&ds, kind)?;
    for s in &mut ds.samples {
        for v in &mut s.values {
            *v = scaler.apply(v);
        }
    }
    ds.scaler = Some(scaler);
    Ok(ds)
}
