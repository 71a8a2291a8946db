//! Synthetic series driven by a hidden regime chain with fixed dwell
//! durations, so every regime persists for several base steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, Result, Sample, SeriesDataset, Split, Target, Task};
use crate::model::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    /// Emission mean (level emissions) or per-step drift (random walks).
    pub mean: Vec<f64>,
    /// Per-dimension emission standard deviation.
    pub std: Vec<f64>,
    /// Dwell time in base steps.
    pub duration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmissionKind {
    /// `x_t ~ N(mean_r, std_r²)`.
    Level,
    /// `x_t = x_{t−1} + mean_r + std_r ⊙ ε`, starting from `start`.
    RandomWalk { start: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelRule {
    /// No label; the dataset is a forecasting dataset with `horizon`.
    Forecast { horizon: usize },
    /// The regime occupying the most steps (lowest index on ties).
    DominantRegime,
    /// Each class has its own regime transition matrix; the class is drawn
    /// uniformly per series.
    TransitionClass { matrices: Vec<Vec<Vec<f64>>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub name: String,
    pub n_train: usize,
    pub n_test: usize,
    pub length: usize,
    pub dim: usize,
    pub regimes: Vec<RegimeSpec>,
    /// Row-stochastic regime transition matrix applied at block ends.
    pub transition: Vec<Vec<f64>>,
    pub emission: EmissionKind,
    pub labels: LabelRule,
    /// Start each series part-way through its first block.
    #[serde(default)]
    pub random_phase: bool,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: SeriesDataset,
    /// Ground-truth regime per step, aligned with `dataset.samples`.
    pub regimes: Vec<Vec<usize>>,
}

fn check_stochastic(m: &[Vec<f64>], k: usize, what: &str) -> Result<()> {
    if m.len() != k || m.iter().any(|r| r.len() != k) {
        return Err(DataError::Contract(format!("{what} must be {k}×{k}")));
    }
    for (i, r) in m.iter().enumerate() {
        let s: f64 = r.iter().sum();
        if r.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (s - 1.0).abs() > 1e-9 {
            return Err(DataError::Contract(format!("{what} row {i} is not a probability vector")));
        }
    }
    Ok(())
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let k = self.regimes.len();
        if k == 0 || self.length == 0 || self.dim == 0 || self.n_train + self.n_test == 0 {
            return Err(DataError::Contract("regimes, length, dim and sample count must be positive".into()));
        }
        for (i, r) in self.regimes.iter().enumerate() {
            if r.duration == 0 {
                return Err(DataError::Contract(format!("regime {i} has zero duration")));
            }
            if r.mean.len() != self.dim || r.std.len() != self.dim || r.std.iter().any(|&s| s < 0.0) {
                return Err(DataError::Contract(format!("regime {i} emission parameters do not match dim {}", self.dim)));
            }
        }
        check_stochastic(&self.transition, k, "transition matrix")?;
        match &self.labels {
            LabelRule::TransitionClass { matrices } => {
                if matrices.len() < 2 {
                    return Err(DataError::Contract("transition-class labels need at least 2 classes".into()));
                }
                for (c, m) in matrices.iter().enumerate() {
                    check_stochastic(m, k, &format!("class {c} transition matrix"))?;
                }
            }
            LabelRule::DominantRegime if k < 2 => {
                return Err(DataError::Contract("dominant-regime labels need at least 2 regimes".into()));
            }
            LabelRule::Forecast { horizon } if *horizon == 0 || *horizon >= self.length => {
                return Err(DataError::Contract("forecast horizon must lie in 1..length".into()));
            }
            _ => {}
        }
        if let EmissionKind::RandomWalk { start } = &self.emission {
            if start.len() != self.dim {
                return Err(DataError::Contract("random-walk start does not match dim".into()));
            }
        }
        Ok(())
    }

    /// Two level regimes with dwell 4 aligned to the series start; each block
    /// draws its regime afresh. The class is the regime holding the most steps.
    pub fn planted(seed: u64) -> SynthSpec {
        let switching = |p: f64| vec![vec![1.0 - p, p], vec![p, 1.0 - p]];
        SynthSpec {
            name: "planted".into(),
            n_train: 200,
            n_test: 100,
            length: 32,
            dim: 3,
            regimes: vec![
                RegimeSpec {
                    mean: vec![1.0, -1.0, 0.5],
                    std: vec![1.0; 3],
                    duration: 4,
                },
                RegimeSpec {
                    mean: vec![-1.0, 1.0, -0.5],
                    std: vec![1.0; 3],
                    duration: 4,
                },
            ],
            transition: switching(0.5),
            emission: EmissionKind::Level,
            labels: LabelRule::DominantRegime,
            random_phase: false,
            seed,
        }
    }

    /// Random walks whose drift follows a sticky three-regime chain; the
    /// last 40 of 200 points are the forecasting target.
    pub fn stocklike(seed: u64) -> SynthSpec {
        let stay = 0.8;
        let go = (1.0 - stay) / 2.0;
        SynthSpec {
            name: "stocklike".into(),
            n_train: 400,
            n_test: 100,
            length: 200,
            dim: 1,
            regimes: vec![
                RegimeSpec {
                    mean: vec![0.1],
                    std: vec![0.5],
                    duration: 40,
                },
                RegimeSpec {
                    mean: vec![-0.1],
                    std: vec![0.5],
                    duration: 40,
                },
                RegimeSpec {
                    mean: vec![0.0],
                    std: vec![0.5],
                    duration: 40,
                },
            ],
            transition: vec![vec![stay, go, go], vec![go, stay, go], vec![go, go, stay]],
            emission: EmissionKind::RandomWalk { start: vec![0.0] },
            labels: LabelRule::Forecast { horizon: 40 },
            random_phase: true,
            seed,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Option<SynthSpec> {
        match name {
            "planted" => Some(SynthSpec::planted(seed)),
            "stocklike" => Some(SynthSpec::stocklike(seed)),
            _ => None,
        }
    }
}

fn draw_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// A pure function of the spec, seed included.
pub fn generate_synth(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let k = spec.regimes.len();
    let (task, n_classes) = match &spec.labels {
        LabelRule::Forecast { horizon } => (Task::Forecast { horizon: *horizon }, 0),
        LabelRule::DominantRegime => (
            Task::Classification {
                class_names: (0..k).map(|r| format!("r{r}")).collect(),
            },
            k,
        ),
        LabelRule::TransitionClass { matrices } => (
            Task::Classification {
                class_names: (0..matrices.len()).map(|c| format!("c{c}")).collect(),
            },
            matrices.len(),
        ),
    };
    let total = spec.n_train + spec.n_test;
    let mut samples = Vec::with_capacity(total);
    let mut traces = Vec::with_capacity(total);
    for i in 0..total {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, &[i as u64]));
        let class = match &spec.labels {
            LabelRule::TransitionClass { .. } => Some(rng.random_range(0..n_classes)),
            _ => None,
        };
        let matrix = match (&spec.labels, class) {
            (LabelRule::TransitionClass { matrices }, Some(c)) => &matrices[c],
            _ => &spec.transition,
        };
        let mut regime = rng.random_range(0..k);
        let mut left = spec.regimes[regime].duration;
        if spec.random_phase {
            left = rng.random_range(1..=left);
        }
        let mut trace = Vec::with_capacity(spec.length);
        let mut values = Vec::with_capacity(spec.length);
        let mut level = match &spec.emission {
            EmissionKind::RandomWalk { start } => start.clone(),
            EmissionKind::Level => vec![0.0; spec.dim],
        };
        for _ in 0..spec.length {
            if left == 0 {
                regime = draw_index(&mut rng, &matrix[regime]);
                left = spec.regimes[regime].duration;
            }
            left -= 1;
            trace.push(regime);
            let r = &spec.regimes[regime];
            let x: Vec<f64> = (0..spec.dim)
                .map(|d| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    match spec.emission {
                        EmissionKind::Level => r.mean[d] + r.std[d] * e,
                        EmissionKind::RandomWalk { .. } => {
                            level[d] += r.mean[d] + r.std[d] * e;
                            level[d]
                        }
                    }
                })
                .collect();
            values.push(x);
        }
        let target = match &spec.labels {
            LabelRule::Forecast { .. } => None,
            LabelRule::DominantRegime => {
                let mut counts = vec![0usize; k];
                for &r in &trace {
                    counts[r] += 1;
                }
                let best = (0..k).fold(0, |b, r| if counts[r] > counts[b] { r } else { b });
                Some(Target::Class(best))
            }
            LabelRule::TransitionClass { .. } => class.map(Target::Class),
        };
        let split = if i < spec.n_train { Split::Train } else { Split::Test };
        let id = format!("{}-{i:05}", split.as_str());
        samples.push(Sample::new(id, values, target, split));
        traces.push(trace);
    }
    let dataset = SeriesDataset {
        name: spec.name.clone(),
        dim: spec.dim,
        task,
        samples,
        scaler: None,
    };
    dataset.validate()?;
    Ok(SynthOutput {
        dataset,
        regimes: traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple(k: usize, duration: usize, length: usize, n: usize) -> SynthSpec {
        SynthSpec {
            name: "t".into(),
            n_train: n,
            n_test: 0,
            length,
            dim: 2,
            regimes: (0..k)
                .map(|r| RegimeSpec {
                    mean: vec![r as f64 * 2.0 - 1.0, 3.0],
                    std: vec![0.5, 0.0],
                    duration,
                })
                .collect(),
            transition: (0..k).map(|i| (0..k).map(|j| if (i + 1) % k == j { 1.0 } else { 0.0 }).collect()).collect(),
            emission: EmissionKind::Level,
            labels: LabelRule::DominantRegime,
            random_phase: false,
            seed: 9,
        }
    }

    #[test]
    fn single_noiseless_regime_is_constant() {
        let mut spec = simple(1, 3, 10, 2);
        spec.regimes[0].std = vec![0.0, 0.0];
        spec.transition = vec![vec![1.0]];
        spec.labels = LabelRule::Forecast { horizon: 2 };
        let out = generate_synth(&spec).unwrap();
        for s in &out.dataset.samples {
            assert!(s.values.iter().all(|v| *v == vec![-1.0, 3.0]));
        }
    }

    #[test]
    fn dwell_four_gives_four_blocks_in_sixteen_steps() {
        let out = generate_synth(&simple(2, 4, 16, 5)).unwrap();
        for trace in &out.regimes {
            let runs = 1 + trace.windows(2).filter(|w| w[0] != w[1]).count();
            assert_eq!(runs, 4);
            assert!(trace.chunks(4).all(|c| c.iter().all(|&r| r == c[0])));
        }
    }

    #[test]
    fn regime_means_match_spec() {
        let spec = simple(2, 4, 16, 1000);
        let out = generate_synth(&spec).unwrap();
        for r in 0..2 {
            let vals: Vec<f64> = out
                .dataset
                .samples
                .iter()
                .zip(&out.regimes)
                .flat_map(|(s, tr)| s.values.iter().zip(tr).filter(|(_, &q)| q == r).map(|(v, _)| v[0]))
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let bound = 3.0 * spec.regimes[r].std[0] / n.sqrt();
            assert!((mean - spec.regimes[r].mean[0]).abs() <= bound, "regime {r}: {mean}");
        }
    }

    #[test]
    fn generation_is_a_function_of_the_spec() {
        let spec = SynthSpec::planted(3);
        let a = generate_synth(&spec).unwrap();
        let b = generate_synth(&spec).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_ne!(generate_synth(&SynthSpec::planted(4)).unwrap().dataset, a.dataset);
        assert_eq!(a.dataset.split(Split::Train).len(), 200);
        assert_eq!(a.dataset.split(Split::Test).len(), 100);
    }

    #[test]
    fn presets_validate() {
        for name in ["planted", "stocklike"] {
            let spec = SynthSpec::preset(name, 0).unwrap();
            let json = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<SynthSpec>(&json).unwrap(), spec);
            generate_synth(&spec).unwrap();
        }
        let mut bad = SynthSpec::planted(0);
        bad.transition[0][0] = 0.9;
        assert!(generate_synth(&bad).is_err());
        bad = SynthSpec::planted(0);
        bad.regimes[0].duration = 0;
        assert!(generate_synth(&bad).is_err());
    }

    #[test]
    fn dominant_regime_label() {
        let mut spec = simple(2, 3, 10, 20);
        spec.transition = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let out = generate_synth(&spec).unwrap();
        for (s, tr) in out.dataset.samples.iter().zip(&out.regimes) {
            let ones = tr.iter().filter(|&&r| r == 1).count();
            let expected = if ones > tr.len() - ones { 1 } else { 0 };
            assert_eq!(s.class(), Some(expected));
        }
    }
}
