//! Single-chain neural HMM: the input layer, decoder and head without any
//! multistep layers. Parameter names and initialization order match a
//! one-layer [`PhmmModel`](crate::model::PhmmModel), so the two agree
//! exactly for equal seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{
    LayerUpdate, ModelConfig, ModelError, NoiseSource, PyramidState, Result, SequenceModel, StepRecord,
};
use crate::nn::{reparam_sample, Activation, FcLayer, GaussianHead, GaussianParams, GruCell};
use crate::params::{Graph, ParamId, ParamStore};
use crate::tensor::{Tensor, Var};

#[derive(Debug, Clone)]
pub struct FlatHmm {
    config: ModelConfig,
    store: ParamStore,
    prior_gru: GruCell,
    prior_head: GaussianHead,
    enc1: FcLayer,
    enc2: FcLayer,
    post_gru: GruCell,
    post_head: GaussianHead,
    h0: ParamId,
    dec_hidden: FcLayer,
    dec_out: GaussianHead,
    head: FcLayer,
}

impl FlatHmm {
    /// `k` and `m` of the config are ignored; the chain has one layer.
    pub fn new(mut config: ModelConfig, seed: u64) -> Result<Self> {
        config.m = 1;
        config.hidden_dims.truncate(1);
        config.validate()?;
        let c = &config;
        let h = c.hidden_dims[0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let s = &mut store;
        let r = &mut rng;
        let prior_gru = GruCell::new(s, r, "layer1.prior.gru", c.input_dim, h);
        let prior_head = GaussianHead::new(s, r, "layer1.prior.head", h, h);
        let enc1 = FcLayer::new(s, r, "layer1.post.enc1", c.input_dim, c.encoder_dim, Activation::Tanh);
        let enc2 = FcLayer::new(s, r, "layer1.post.enc2", c.encoder_dim, c.encoder_dim, Activation::Tanh);
        let post_gru = GruCell::new(s, r, "layer1.post.gru", c.encoder_dim, h);
        let post_head = GaussianHead::new(s, r, "layer1.post.head", h, h);
        let h0 = s.add("layer1.h0", Tensor::zeros(&[h]));
        let dec_hidden = FcLayer::new(s, r, "decoder.hidden", h, c.decoder_hidden_dim, Activation::Tanh);
        let dec_out = GaussianHead::new(s, r, "decoder.out", c.decoder_hidden_dim, c.input_dim);
        let head = FcLayer::new(s, r, "head", h, c.head.output_dim(), Activation::None);
        Ok(FlatHmm {
            config,
            store,
            prior_gru,
            prior_head,
            enc1,
            enc2,
            post_gru,
            post_head,
            h0,
            dec_hidden,
            dec_out,
            head,
        })
    }
}

impl SequenceModel for FlatHmm {
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
        let h = g.param(self.h0);
        let x_prev = g.input(Tensor::zeros(&[self.config.input_dim]));
        Ok(PyramidState {
            hidden: vec![h],
            windows: vec![Default::default()],
            counts: vec![0],
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
        state.step += 1;
        let h_prev = state.hidden[0];
        let ph = self.prior_gru.step(g, state.x_prev, h_prev)?;
        let prior = self.prior_head.forward(g, ph)?;
        let posterior = match x_t {
            Some(x) => {
                let e = self.enc1.forward(g, x)?;
                let e = self.enc2.forward(g, e)?;
                let qh = self.post_gru.step(g, e, h_prev)?;
                Some(self.post_head.forward(g, qh)?)
            }
            None => None,
        };
        let dist = posterior.unwrap_or(prior);
        let sample = match noise.draw(self.config.hidden_dims[0]) {
            Some(eps) => reparam_sample(g, dist, &eps)?,
            None => dist.mean,
        };
        state.hidden[0] = sample;
        state.counts[0] += 1;
        if let Some(x) = x_t {
            state.x_prev = x;
        }
        Ok(StepRecord {
            step: state.step,
            x: x_t,
            updates: vec![LayerUpdate {
                layer: 0,
                prior,
                posterior,
                sample,
                attention: None,
            }],
        })
    }

    fn decode_step(&self, g: &mut Graph, h1: Var) -> Result<GaussianParams> {
        let d = self.dec_hidden.forward(g, h1)?;
        Ok(self.dec_out.forward(g, d)?)
    }

    fn head_output(&self, g: &mut Graph, finals: &[Var]) -> Result<Var> {
        match finals {
            [h] => Ok(self.head.forward(g, *h)?),
            _ => Err(ModelError::Contract(format!("flat HMM head expects 1 final state, got {}", finals.len()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HeadKind, PhmmModel, Prediction, SeededNoise};

    #[test]
    fn layout_matches_single_layer_pyramid() {
        let cfg = ModelConfig::new(4, 1, 3, 5, HeadKind::Classifier { num_classes: 2 });
        let flat = FlatHmm::new(cfg.clone(), 42).unwrap();
        let pyr = PhmmModel::new(cfg, 42).unwrap();
        let a: Vec<_> = flat.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        let b: Vec<_> = pyr.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn predictions_agree_with_single_layer_pyramid() {
        let cfg = ModelConfig::new(3, 1, 2, 4, HeadKind::Classifier { num_classes: 3 });
        let flat = FlatHmm::new(cfg.clone(), 7).unwrap();
        let pyr = PhmmModel::new(cfg, 7).unwrap();
        let xs: Vec<Tensor> = (0..9).map(|t| Tensor::vector(vec![(t as f64).sin(), (t as f64).cos()])).collect();
        let (pa, pb) = (flat.infer(&xs, None).unwrap(), pyr.infer(&xs, None).unwrap());
        match (&pa, &pb) {
            (Prediction::Class { probs: a, .. }, Prediction::Class { probs: b, .. }) => {
                assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            _ => panic!("expected class predictions"),
        }
        let run = |m: &dyn SequenceModel| {
            let mut g = Graph::frozen(m.params());
            let tr = m.unroll(&mut g, &xs, None, &mut SeededNoise::new(3)).unwrap();
            g.value(tr.finals()[0]).clone()
        };
        assert_eq!(run(&flat), run(&pyr));
    }
}
