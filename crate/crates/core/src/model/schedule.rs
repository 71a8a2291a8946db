use serde::{Deserialize, Serialize};

/// How often the layers above the input layer update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StrideMode {
    /// Layer `i` (1-based) updates every `k^(i−1)` base steps.
    #[default]
    Geometric,
    /// Every layer above the first updates every `k` base steps.
    Flat,
}

impl std::str::FromStr for StrideMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "geometric" => Ok(StrideMode::Geometric),
            "flat" => Ok(StrideMode::Flat),
            other => Err(format!("unknown stride mode {other:?} (expected geometric|flat)")),
        }
    }
}

/// Base-step update schedule of an `m`-layer pyramid with timestep `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub k: usize,
    pub m: usize,
    pub mode: StrideMode,
}

impl Schedule {
    pub fn new(k: usize, m: usize, mode: StrideMode) -> Self {
        assert!(k >= 1 && m >= 1, "k and m must be at least 1");
        Schedule { k, m, mode }
    }

    /// Update stride of `layer` (0-based) in base steps.
    pub fn stride(&self, layer: usize) -> usize {
        match (layer, self.mode) {
            (0, _) => 1,
            (_, StrideMode::Flat) => self.k,
            (i, StrideMode::Geometric) => self.k.saturating_pow(i as u32),
        }
    }

    /// Whether `layer` updates at 1-based base step `step`.
    pub fn updates_at(&self, layer: usize, step: usize) -> bool {
        step.is_multiple_of(self.stride(layer))
    }

    /// Number of updates each layer performs over `len` base steps.
    pub fn update_counts(&self, len: usize) -> Vec<usize> {
        (0..self.m).map(|i| len / self.stride(i)).collect()
    }
}
