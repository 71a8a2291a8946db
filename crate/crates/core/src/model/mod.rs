//! The pyramid: an input layer over the observations, multistep layers above
//! it, a decoder from the input layer's latent, and a head over every
//! layer's final latent.

pub mod noise;
pub mod schedule;

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{reparam_sample, Activation, AttentionPool, FcLayer, GaussianHead, GaussianParams, GruCell};
use crate::params::{Graph, ParamId, ParamStore};
use crate::tensor::{Tensor, TensorError, Var};

pub use noise::{mix_seed, NoiseSource, SeededNoise, ZeroNoise};
pub use schedule::{Schedule, StrideMode};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    Classifier { num_classes: usize },
    Predictor { output_dim: usize },
}

impl HeadKind {
    pub fn output_dim(&self) -> usize {
        match *self {
            HeadKind::Classifier { num_classes } => num_classes,
            HeadKind::Predictor { output_dim } => output_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub k: usize,
    pub m: usize,
    pub input_dim: usize,
    /// One entry per layer, bottom first.
    pub hidden_dims: Vec<usize>,
    pub attn_dim: usize,
    pub encoder_dim: usize,
    pub decoder_hidden_dim: usize,
    pub head: HeadKind,
    #[serde(default)]
    pub stride_mode: StrideMode,
}

impl ModelConfig {
    /// Every layer, the attention, the encoders and the decoder share `hidden_dim`.
    pub fn new(k: usize, m: usize, input_dim: usize, hidden_dim: usize, head: HeadKind) -> Self {
        ModelConfig {
            k,
            m,
            input_dim,
            hidden_dims: vec![hidden_dim; m],
            attn_dim: hidden_dim,
            encoder_dim: hidden_dim,
            decoder_hidden_dim: hidden_dim,
            head,
            stride_mode: StrideMode::Geometric,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.k < 1 {
            return bad("k must be at least 1".into());
        }
        if self.m < 1 {
            return bad("m must be at least 1".into());
        }
        if self.hidden_dims.len() != self.m {
            return bad(format!("{} hidden dims given for m = {}", self.hidden_dims.len(), self.m));
        }
        let dims = [
            ("input_dim", self.input_dim),
            ("attn_dim", self.attn_dim),
            ("encoder_dim", self.encoder_dim),
            ("decoder_hidden_dim", self.decoder_hidden_dim),
            ("head output dim", self.head.output_dim()),
        ];
        for (name, d) in dims {
            if d < 1 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.hidden_dims.iter().any(|&d| d < 1) {
            return bad("hidden dims must be at least 1".into());
        }
        if let HeadKind::Classifier { num_classes } = self.head {
            if num_classes < 2 {
                return bad("a classifier needs at least 2 classes".into());
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        Schedule::new(self.k, self.m, self.stride_mode)
    }

    pub fn head_input_dim(&self) -> usize {
        self.hidden_dims.iter().sum()
    }
}

/// Per-layer running state during an unroll. `windows[i]` (for `i ≥ 1`)
/// holds the most recent `k` latents of layer `i − 1`, left-padded with that
/// layer's learned initial state.
#[derive(Debug, Clone)]
pub struct PyramidState {
    pub hidden: Vec<Var>,
    pub windows: Vec<VecDeque<Var>>,
    pub counts: Vec<usize>,
    pub step: usize,
    pub x_prev: Var,
}

/// One layer update within a base step.
#[derive(Debug, Clone)]
pub struct LayerUpdate {
    pub layer: usize,
    pub prior: GaussianParams,
    /// Absent when advancing on the prior alone.
    pub posterior: Option<GaussianParams>,
    pub sample: Var,
    /// Attention weights over the window (multistep layers only).
    pub attention: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub x: Option<Var>,
    pub updates: Vec<LayerUpdate>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub state: PyramidState,
}

impl Trajectory {
    /// Final latent of every layer, bottom first.
    pub fn finals(&self) -> &[Var] {
        &self.state.hidden
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Class { label: usize, probs: Vec<f64> },
    Values(Vec<f64>),
}

fn draw_sample(g: &mut Graph, params: GaussianParams, dim: usize, noise: &mut dyn NoiseSource) -> Result<Var> {
    match noise.draw(dim) {
        Some(eps) => Ok(reparam_sample(g, params, &eps)?),
        None => Ok(params.mean),
    }
}

fn check_len(g: &Graph, v: Var, expected: usize, what: &str) -> Result<()> {
    let got = g.value(v).shape();
    if got != [expected] {
        return Err(ModelError::Tensor(TensorError::Shape {
            op: "model",
            expected: format!("{what} of shape [{expected}]"),
            got: format!("{got:?}"),
        }));
    }
    Ok(())
}

fn active_steps(xs: &[Tensor], mask: Option<&[bool]>) -> Result<Vec<usize>> {
    if let Some(m) = mask {
        if m.len() != xs.len() {
            return Err(ModelError::Contract(format!(
                "mask has {} entries for {} steps",
                m.len(),
                xs.len()
            )));
        }
    }
    let steps: Vec<usize> = (0..xs.len()).filter(|&t| mask.is_none_or(|m| m[t])).collect();
    if steps.is_empty() {
        return Err(ModelError::Contract("sequence has no observed steps".into()));
    }
    Ok(steps)
}

/// Anything that can be unrolled over a sequence, decoded and read out by a head.
pub trait SequenceModel: Send + Sync {
    fn config(&self) -> &ModelConfig;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    fn initial_state(&self, g: &mut Graph) -> Result<PyramidState>;

    /// One base step. With `x_t` the posterior is evaluated and sampled;
    /// without it the layers advance on their priors.
    fn advance(
        &self,
        g: &mut Graph,
        state: &mut PyramidState,
        x_t: Option<Var>,
        noise: &mut dyn NoiseSource,
    ) -> Result<StepRecord>;

    /// Gaussian over the observation given the bottom latent.
    fn decode_step(&self, g: &mut Graph, h1: Var) -> Result<GaussianParams>;

    /// Raw head output: logits for a classifier, values for a predictor.
    fn head_output(&self, g: &mut Graph, finals: &[Var]) -> Result<Var>;

    /// Posterior unroll over the observed (unmasked) steps.
    fn unroll(
        &self,
        g: &mut Graph,
        xs: &[Tensor],
        mask: Option<&[bool]>,
        noise: &mut dyn NoiseSource,
    ) -> Result<Trajectory> {
        let steps = active_steps(xs, mask)?;
        let mut state = self.initial_state(g)?;
        let mut records = Vec::with_capacity(steps.len());
        for t in steps {
            let x = g.input(xs[t].clone());
            records.push(self.advance(g, &mut state, Some(x), noise)?);
        }
        Ok(Trajectory { steps: records, state })
    }

    /// Advance `len` steps on the priors, feeding the decoder mean back as
    /// the next observation. Returns the decoded means.
    fn generate(
        &self,
        g: &mut Graph,
        state: &mut PyramidState,
        len: usize,
        noise: &mut dyn NoiseSource,
    ) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let rec = self.advance(g, state, None, noise)?;
            let dec = self.decode_step(g, rec.updates[0].sample)?;
            state.x_prev = dec.mean;
            out.push(dec.mean);
        }
        Ok(out)
    }

    /// Mean-propagation posterior pass followed by the head.
    fn infer(&self, xs: &[Tensor], mask: Option<&[bool]>) -> Result<Prediction> {
        let mut g = Graph::frozen(self.params());
        let traj = self.unroll(&mut g, xs, mask, &mut ZeroNoise)?;
        let out = self.head_output(&mut g, traj.finals())?;
        Ok(match self.config().head {
            HeadKind::Classifier { .. } => {
                let p = g.softmax(out)?;
                let probs = g.value(p).data().to_vec();
                Prediction::Class {
                    label: argmax(&probs),
                    probs,
                }
            }
            HeadKind::Predictor { .. } => Prediction::Values(g.value(out).data().to_vec()),
        })
    }

    /// Posterior pass over the history, then `horizon` mean-propagated prior
    /// steps with decoder-mean feedback.
    fn forecast_rollout(&self, xs: &[Tensor], mask: Option<&[bool]>, horizon: usize) -> Result<Vec<Vec<f64>>> {
        if horizon == 0 {
            return Err(ModelError::Contract("forecast horizon must be at least 1".into()));
        }
        let mut g = Graph::frozen(self.params());
        let mut traj = self.unroll(&mut g, xs, mask, &mut ZeroNoise)?;
        let means = self.generate(&mut g, &mut traj.state, horizon, &mut ZeroNoise)?;
        Ok(means.into_iter().map(|v| g.value(v).data().to_vec()).collect())
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
struct InputLayer {
    prior_gru: GruCell,
    prior_head: GaussianHead,
    enc1: FcLayer,
    enc2: FcLayer,
    post_gru: GruCell,
    post_head: GaussianHead,
    h0: ParamId,
}

#[derive(Debug, Clone)]
struct MultistepLayer {
    attention: AttentionPool,
    prior_gru: GruCell,
    prior_head: GaussianHead,
    enc1: FcLayer,
    enc2: FcLayer,
    post_gru: GruCell,
    post_head: GaussianHead,
    h0: ParamId,
}

#[derive(Debug, Clone)]
struct Decoder {
    hidden: FcLayer,
    out: GaussianHead,
}

/// Parameter layout shared by every model built from a [`ModelConfig`].
/// Registration order: input layer, multistep layers bottom-up, decoder, head.
#[derive(Debug, Clone)]
pub struct PhmmModel {
    config: ModelConfig,
    store: ParamStore,
    input: InputLayer,
    upper: Vec<MultistepLayer>,
    decoder: Decoder,
    head: FcLayer,
}

impl PhmmModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let h1 = c.hidden_dims[0];
        let input = InputLayer {
            prior_gru: GruCell::new(&mut store, &mut rng, "layer1.prior.gru", c.input_dim, h1),
            prior_head: GaussianHead::new(&mut store, &mut rng, "layer1.prior.head", h1, h1),
            enc1: FcLayer::new(&mut store, &mut rng, "layer1.post.enc1", c.input_dim, c.encoder_dim, Activation::Tanh),
            enc2: FcLayer::new(&mut store, &mut rng, "layer1.post.enc2", c.encoder_dim, c.encoder_dim, Activation::Tanh),
            post_gru: GruCell::new(&mut store, &mut rng, "layer1.post.gru", c.encoder_dim, h1),
            post_head: GaussianHead::new(&mut store, &mut rng, "layer1.post.head", h1, h1),
            h0: store.add("layer1.h0", Tensor::zeros(&[h1])),
        };
        let mut upper = Vec::with_capacity(c.m - 1);
        for i in 1..c.m {
            let (lower, hi) = (c.hidden_dims[i - 1], c.hidden_dims[i]);
            let n = i + 1;
            let name = |part: &str| format!("layer{n}.{part}");
            upper.push(MultistepLayer {
                attention: AttentionPool::new(&mut store, &mut rng, &name("attention"), lower, hi, c.attn_dim),
                prior_gru: GruCell::new(&mut store, &mut rng, &name("prior.gru"), c.attn_dim, hi),
                prior_head: GaussianHead::new(&mut store, &mut rng, &name("prior.head"), hi, hi),
                enc1: FcLayer::new(&mut store, &mut rng, &name("post.enc1"), c.attn_dim, c.encoder_dim, Activation::Tanh),
                enc2: FcLayer::new(&mut store, &mut rng, &name("post.enc2"), c.encoder_dim, c.encoder_dim, Activation::Tanh),
                post_gru: GruCell::new(&mut store, &mut rng, &name("post.gru"), c.encoder_dim, hi),
                post_head: GaussianHead::new(&mut store, &mut rng, &name("post.head"), hi, hi),
                h0: store.add(name("h0"), Tensor::zeros(&[hi])),
            });
        }
        let decoder = Decoder {
            hidden: FcLayer::new(&mut store, &mut rng, "decoder.hidden", h1, c.decoder_hidden_dim, Activation::Tanh),
            out: GaussianHead::new(&mut store, &mut rng, "decoder.out", c.decoder_hidden_dim, c.input_dim),
        };
        let head = FcLayer::new(&mut store, &mut rng, "head", c.head_input_dim(), c.head.output_dim(), Activation::None);
        Ok(PhmmModel {
            config,
            store,
            input,
            upper,
            decoder,
            head,
        })
    }

    fn upper_layer(&self, layer: usize) -> Result<&MultistepLayer> {
        if layer == 0 || layer >= self.config.m {
            return Err(ModelError::Contract(format!(
                "layer {layer} is not a multistep layer of an m = {} model",
                self.config.m
            )));
        }
        Ok(&self.upper[layer - 1])
    }

    /// Prior over the input-layer latent from the previous latent and observation.
    pub fn input_prior_step(&self, g: &mut Graph, h_prev: Var, x_prev: Var) -> Result<GaussianParams> {
        check_len(g, h_prev, self.config.hidden_dims[0], "input-layer state")?;
        check_len(g, x_prev, self.config.input_dim, "observation")?;
        let l = &self.input;
        let h = l.prior_gru.step(g, x_prev, h_prev)?;
        Ok(l.prior_head.forward(g, h)?)
    }

    /// Posterior over the input-layer latent from the previous latent and the current observation.
    pub fn input_posterior_step(&self, g: &mut Graph, h_prev: Var, x_t: Var) -> Result<GaussianParams> {
        check_len(g, h_prev, self.config.hidden_dims[0], "input-layer state")?;
        check_len(g, x_t, self.config.input_dim, "observation")?;
        let l = &self.input;
        let e = l.enc1.forward(g, x_t)?;
        let e = l.enc2.forward(g, e)?;
        let h = l.post_gru.step(g, e, h_prev)?;
        Ok(l.post_head.forward(g, h)?)
    }

    /// Attention context of a multistep layer and its weights.
    pub fn context(&self, g: &mut Graph, layer: usize, h_prev: Var, window: &[Var]) -> Result<(Var, Var)> {
        let l = self.upper_layer(layer)?;
        check_len(g, h_prev, self.config.hidden_dims[layer], "multistep state")?;
        for &w in window {
            check_len(g, w, self.config.hidden_dims[layer - 1], "window entry")?;
        }
        Ok(l.attention.pool(g, window, h_prev)?)
    }

    fn prior_from_context(&self, g: &mut Graph, layer: usize, h_prev: Var, ctx: Var) -> Result<GaussianParams> {
        let l = self.upper_layer(layer)?;
        let h = l.prior_gru.step(g, ctx, h_prev)?;
        Ok(l.prior_head.forward(g, h)?)
    }

    fn posterior_from_context(&self, g: &mut Graph, layer: usize, h_prev: Var, ctx: Var) -> Result<GaussianParams> {
        let l = self.upper_layer(layer)?;
        let e = l.enc1.forward(g, ctx)?;
        let e = l.enc2.forward(g, e)?;
        let h = l.post_gru.step(g, e, h_prev)?;
        Ok(l.post_head.forward(g, h)?)
    }

    /// Prior of multistep layer `layer` (0-based, ≥ 1) over a window of lower latents.
    pub fn multistep_prior_step(&self, g: &mut Graph, layer: usize, h_prev: Var, window: &[Var]) -> Result<GaussianParams> {
        let (ctx, _) = self.context(g, layer, h_prev, window)?;
        self.prior_from_context(g, layer, h_prev, ctx)
    }

    /// Posterior of multistep layer `layer`, sharing the prior's attention.
    pub fn multistep_posterior_step(
        &self,
        g: &mut Graph,
        layer: usize,
        h_prev: Var,
        window: &[Var],
    ) -> Result<GaussianParams> {
        let (ctx, _) = self.context(g, layer, h_prev, window)?;
        self.posterior_from_context(g, layer, h_prev, ctx)
    }

    /// Posterior unroll over a full sequence.
    pub fn pyramid_unroll(&self, g: &mut Graph, xs: &[Tensor], noise: &mut dyn NoiseSource) -> Result<Trajectory> {
        self.unroll(g, xs, None, noise)
    }

    /// Class probabilities (classifier) or values (predictor) from the final latents.
    pub fn predict_head(&self, g: &mut Graph, finals: &[Var]) -> Result<Var> {
        let out = self.head_output(g, finals)?;
        match self.config.head {
            HeadKind::Classifier { .. } => Ok(g.softmax(out)?),
            HeadKind::Predictor { .. } => Ok(out),
        }
    }
}

impl SequenceModel for PhmmModel {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn initial_state(&self, g: &mut Graph) -> Result<PyramidState> {
        let mut hidden = vec![g.param(self.input.h0)];
        for l in &self.upper {
            hidden.push(g.param(l.h0));
        }
        let k = self.config.k;
        let windows = (0..self.config.m)
            .map(|i| {
                if i == 0 {
                    VecDeque::new()
                } else {
                    std::iter::repeat_n(hidden[i - 1], k).collect()
                }
            })
            .collect();
        let x_prev = g.input(Tensor::zeros(&[self.config.input_dim]));
        Ok(PyramidState {
            hidden,
            windows,
            counts: vec![0; self.config.m],
            step: 0,
            x_prev,
        })
    }

    fn advance(
        &self,
        g: &mut Graph,
        state: &mut PyramidState,
        x_t: Option<Var>,
        noise: &mut dyn NoiseSource,
    ) -> Result<StepRecord> {
        let schedule = self.config.schedule();
        let k = self.config.k;
        state.step += 1;
        let mut updates = Vec::new();

        let prior = self.input_prior_step(g, state.hidden[0], state.x_prev)?;
        let posterior = match x_t {
            Some(x) => Some(self.input_posterior_step(g, state.hidden[0], x)?),
            None => None,
        };
        let sample = draw_sample(g, posterior.unwrap_or(prior), self.config.hidden_dims[0], noise)?;
        state.hidden[0] = sample;
        state.counts[0] += 1;
        if let Some(x) = x_t {
            state.x_prev = x;
        }
        updates.push(LayerUpdate {
            layer: 0,
            prior,
            posterior,
            sample,
            attention: None,
        });

        for i in 1..self.config.m {
            if updates.last().map(|u| u.layer) == Some(i - 1) {
                let w = &mut state.windows[i];
                w.push_back(state.hidden[i - 1]);
                while w.len() > k {
                    w.pop_front();
                }
            }
            if !schedule.updates_at(i, state.step) {
                continue;
            }
            let window: Vec<Var> = state.windows[i].iter().copied().collect();
            let h_prev = state.hidden[i];
            let (ctx, weights) = self.context(g, i, h_prev, &window)?;
            let prior = self.prior_from_context(g, i, h_prev, ctx)?;
            let posterior = match x_t {
                Some(_) => Some(self.posterior_from_context(g, i, h_prev, ctx)?),
                None => None,
            };
            let sample = draw_sample(g, posterior.unwrap_or(prior), self.config.hidden_dims[i], noise)?;
            state.hidden[i] = sample;
            state.counts[i] += 1;
            updates.push(LayerUpdate {
                layer: i,
                prior,
                posterior,
                sample,
                attention: Some(weights),
            });
        }
        Ok(StepRecord {
            step: state.step,
            x: x_t,
            updates,
        })
    }

    fn decode_step(&self, g: &mut Graph, h1: Var) -> Result<GaussianParams> {
        check_len(g, h1, self.config.hidden_dims[0], "input-layer latent")?;
        let d = self.decoder.hidden.forward(g, h1)?;
        Ok(self.decoder.out.forward(g, d)?)
    }

    fn head_output(&self, g: &mut Graph, finals: &[Var]) -> Result<Var> {
        if finals.len() != self.config.m {
            return Err(ModelError::Contract(format!(
                "head expects {} final states, got {}",
                self.config.m,
                finals.len()
            )));
        }
        let h = g.concat(finals)?;
        check_len(g, h, self.config.head_input_dim(), "concatenated final states")?;
        Ok(self.head.forward(g, h)?)
    }
}
