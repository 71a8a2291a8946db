use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::elbo::{elbo_and_grad, elbo_eval, LossBreakdown};
use super::optim::{clip_global_norm, Adam, AdamConfig};
use super::TrainError;
use crate::data::{Sample, Target};
use crate::model::{argmax, mix_seed, HeadKind, SequenceModel};

/// Stream tags keeping the different seeded draws apart.
const STREAM_SHUFFLE: u64 = 1;
const STREAM_TRAIN_NOISE: u64 = 2;
const STREAM_EVAL_NOISE: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub kl_weight: f64,
    /// Ramp the KL weight linearly over the first tenth of the epochs.
    pub kl_warmup: bool,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub mc_samples: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 20,
            kl_weight: 1.0,
            kl_warmup: false,
            grad_clip_norm: 5.0,
            seed: 0,
            mc_samples: 1,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a finite non-negative number");
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return bad("kl_weight must be a finite non-negative number");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if self.mc_samples < 1 {
            return bad("mc_samples must be at least 1");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be positive");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam requires beta1, beta2 in [0, 1) and eps > 0");
        }
        Ok(())
    }

    /// KL weight in effect during 1-based `epoch`.
    pub fn kl_weight_at(&self, epoch: usize) -> f64 {
        if !self.kl_warmup {
            return self.kl_weight;
        }
        let ramp = self.epochs.div_ceil(10).max(1);
        self.kl_weight * (epoch as f64 / ramp as f64).min(1.0)
    }
}

/// One line of the training log. Epoch 0 is the untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub elbo: f64,
    pub recon_ll: f64,
    pub kl_total: f64,
    pub head_ll: f64,
    pub kl_weight: f64,
    pub train_metric: f64,
    pub val_metric: Option<f64>,
    pub wall_time_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub metric: String,
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }

    /// Transitions where the ELBO did not fall by more than `slack` of its magnitude.
    pub fn improving_transitions(&self, slack: f64) -> usize {
        self.records
            .windows(2)
            .filter(|w| w[1].elbo >= w[0].elbo - slack * w[0].elbo.abs())
            .count()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    /// Record wall-clock time per epoch; off keeps logs byte-reproducible.
    pub timing: bool,
}

/// `accuracy` for classifiers, `rmse` (in head units) for predictors.
pub fn metric_name(head: HeadKind) -> &'static str {
    match head {
        HeadKind::Classifier { .. } => "accuracy",
        HeadKind::Predictor { .. } => "rmse",
    }
}

fn score(head: HeadKind, outputs: &[(Vec<f64>, &Target)]) -> f64 {
    match head {
        HeadKind::Classifier { .. } => {
            let hits = outputs
                .iter()
                .filter(|(o, t)| matches!(t, Target::Class(c) if argmax(o) == *c))
                .count();
            hits as f64 / outputs.len().max(1) as f64
        }
        HeadKind::Predictor { .. } => {
            let (mut se, mut n) = (0.0, 0usize);
            for (o, t) in outputs {
                if let Target::Values(y) = t {
                    se += o.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                    n += y.len();
                }
            }
            (se / n.max(1) as f64).sqrt()
        }
    }
}

fn context(err: TrainError, epoch: usize, sample: &Sample) -> TrainError {
    match err {
        TrainError::NonFinite { term, detail, .. } => TrainError::NonFinite {
            term,
            context: format!("epoch {epoch}, series {}", sample.id),
            detail,
        },
        other => other,
    }
}

/// Mean bound (at weight `beta`, fixed evaluation noise) and the head metric.
pub fn evaluate<M: SequenceModel + ?Sized>(
    model: &M,
    samples: &[Sample],
    beta: f64,
    seed: u64,
    epoch: usize,
    mc_samples: usize,
) -> Result<(LossBreakdown, f64), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Contract("cannot evaluate an empty split".into()));
    }
    let results: Vec<Result<(LossBreakdown, Vec<f64>), TrainError>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            elbo_eval(model, s, beta, mix_seed(seed, &[STREAM_EVAL_NOISE, i as u64]), mc_samples)
                .map_err(|e| context(e, epoch, s))
        })
        .collect();
    let mut parts = Vec::with_capacity(samples.len());
    let mut outputs = Vec::with_capacity(samples.len());
    for (r, s) in results.into_iter().zip(samples) {
        let (b, out) = r?;
        parts.push(b);
        let t = s
            .target
            .as_ref()
            .ok_or_else(|| TrainError::Contract(format!("series {} has no target", s.id)))?;
        outputs.push((out, t));
    }
    Ok((LossBreakdown::mean(&parts), score(model.config().head, &outputs)))
}

fn record<M: SequenceModel + ?Sized>(
    model: &M,
    train: &[Sample],
    val: Option<&[Sample]>,
    cfg: &TrainConfig,
    epoch: usize,
    kl_weight: f64,
    started: Option<Instant>,
) -> Result<EpochRecord, TrainError> {
    let (b, train_metric) = evaluate(model, train, cfg.kl_weight, cfg.seed, epoch, cfg.mc_samples)?;
    let val_metric = match val {
        Some(v) if !v.is_empty() => Some(evaluate(model, v, cfg.kl_weight, cfg.seed, epoch, cfg.mc_samples)?.1),
        _ => None,
    };
    Ok(EpochRecord {
        epoch,
        elbo: b.elbo,
        recon_ll: b.recon_ll,
        kl_total: b.kl_total,
        head_ll: b.head_ll,
        kl_weight,
        train_metric,
        val_metric,
        wall_time_ms: started.map(|s| s.elapsed().as_millis() as u64),
    })
}

/// Adam on the negative mean ELBO of shuffled mini-batches. Per-series
/// gradients are computed in parallel and summed in batch order, so the
/// result depends only on the seed.
pub fn train<M: SequenceModel + ?Sized>(
    model: &mut M,
    train: &[Sample],
    val: Option<&[Sample]>,
    cfg: &TrainConfig,
    opts: TrainOptions,
) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::Contract("the train split is empty".into()));
    }
    let head = model.config().head;
    let mut log = TrainLog {
        metric: metric_name(head).to_string(),
        records: Vec::with_capacity(cfg.epochs + 1),
    };
    let started = opts.timing.then(Instant::now);
    log.records.push(record(&*model, train, val, cfg, 0, cfg.kl_weight_at(0), started)?);

    let n_params = model.params().num_scalars();
    let mut adam = Adam::new(n_params, cfg.learning_rate, cfg.adam);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        let beta = cfg.kl_weight_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[STREAM_SHUFFLE, epoch as u64]));
        order.sort_unstable();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let m: &M = model;
            let results: Vec<Result<(LossBreakdown, Vec<f64>), TrainError>> = batch
                .par_iter()
                .map(|&i| {
                    let seed = mix_seed(cfg.seed, &[STREAM_TRAIN_NOISE, epoch as u64, i as u64]);
                    elbo_and_grad(m, &train[i], beta, seed, cfg.mc_samples).map_err(|e| context(e, epoch, &train[i]))
                })
                .collect();
            let mut grad = vec![0.0; n_params];
            for r in results {
                let (_, g) = r?;
                for (a, b) in grad.iter_mut().zip(&g) {
                    // Minimize the negative bound, averaged over the batch.
                    *a -= b;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            clip_global_norm(&mut grad, cfg.grad_clip_norm);
            let mut flat = model.params().flatten();
            adam.step(&mut flat, &grad);
            model.params_mut().assign_flat(&flat);
        }
        log.records.push(record(&*model, train, val, cfg, epoch, beta, started)?);
    }
    Ok(log)
}
