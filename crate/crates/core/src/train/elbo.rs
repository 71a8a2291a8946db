//! Evidence lower bound of one series: per-step reconstruction and KL
//! terms from a sampled posterior pass, plus the head likelihood from a
//! mean-propagation pass on the same tape.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::data::{Sample, Target};
use crate::model::{mix_seed, HeadKind, NoiseSource, SeededNoise, SequenceModel, StepRecord, ZeroNoise};
use crate::nn::GaussianParams;
use crate::params::Graph;
use crate::tensor::{Tensor, Var};

/// Terms of the bound for one series or averaged over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon_ll: f64,
    /// Unweighted sum of KL(posterior ‖ prior) over every layer update.
    pub kl_total: f64,
    pub head_ll: f64,
    /// `head_ll + recon_ll − kl_weight · kl_total`.
    pub elbo: f64,
    pub kl_weight: f64,
    /// Reconstruction at the terminal step.
    pub l1: f64,
    /// Always zero: prior and posterior share one head.
    pub l2: f64,
    /// Negative KL at the terminal step.
    pub l3: f64,
}

impl LossBreakdown {
    pub fn weighted_kl(&self) -> f64 {
        self.kl_weight * self.kl_total
    }

    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut m = LossBreakdown::default();
        for b in items {
            m.recon_ll += b.recon_ll;
            m.kl_total += b.kl_total;
            m.head_ll += b.head_ll;
            m.elbo += b.elbo;
            m.l1 += b.l1;
            m.l3 += b.l3;
        }
        m.recon_ll /= n;
        m.kl_total /= n;
        m.head_ll /= n;
        m.elbo /= n;
        m.l1 /= n;
        m.l3 /= n;
        m.kl_weight = items.first().map_or(0.0, |b| b.kl_weight);
        m
    }
}

/// Σ_d ½[(exp(lv_q) + (μ_q − μ_p)²) / exp(lv_p) − 1 + lv_p − lv_q].
pub fn kl_diag_gaussian(g: &mut Graph, q: GaussianParams, p: GaussianParams) -> Result<Var, TrainError> {
    g.kl_diag_gaussian(q.mean, q.log_var, p.mean, p.log_var)
        .map_err(|e| TrainError::from_tensor("kl_total", e))
}

/// Nodes of one base step's contribution.
#[derive(Debug, Clone, Copy)]
pub struct StepTerms {
    pub recon: Var,
    pub kl: Var,
    pub loss: Var,
}

/// `log p(x_t | h_t¹) − β Σ KL` over the layers updated at this step.
pub fn step_loss<M: SequenceModel + ?Sized>(
    model: &M,
    g: &mut Graph,
    record: &StepRecord,
    beta: f64,
) -> Result<StepTerms, TrainError> {
    let x = record
        .x
        .ok_or_else(|| TrainError::Contract("step loss needs an observed step".into()))?;
    let h1 = record.updates[0].sample;
    let recon = (|| {
        let dec = model.decode_step(g, h1)?;
        Ok::<_, crate::model::ModelError>(g.gaussian_log_pdf(x, dec.mean, dec.log_var)?)
    })()
    .map_err(|e| TrainError::from_model("recon_ll", e))?;
    let mut kls = Vec::with_capacity(record.updates.len());
    for u in &record.updates {
        let q = u
            .posterior
            .ok_or_else(|| TrainError::Contract("step loss needs posterior records".into()))?;
        kls.push(kl_diag_gaussian(g, q, u.prior)?);
    }
    let kl = if kls.len() == 1 {
        kls[0]
    } else {
        let stacked = g.concat(&kls).map_err(|e| TrainError::from_tensor("kl_total", e))?;
        g.sum(stacked).map_err(|e| TrainError::from_tensor("kl_total", e))?
    };
    let weighted = g.scale(kl, beta).map_err(|e| TrainError::from_tensor("kl_total", e))?;
    let loss = g.sub(recon, weighted).map_err(|e| TrainError::from_tensor("elbo", e))?;
    Ok(StepTerms { recon, kl, loss })
}

/// Terminal-step terms `(ℓ1, ℓ2, ℓ3)`: reconstruction, the zero of the
/// shared head, and the negative KL.
pub fn terminal_loss(g: &Graph, last: &StepTerms) -> Result<(f64, f64, f64), TrainError> {
    let l1 = g.value(last.recon).item().map_err(|e| TrainError::from_tensor("recon_ll", e))?;
    let l3 = -g.value(last.kl).item().map_err(|e| TrainError::from_tensor("kl_total", e))?;
    Ok((l1, 0.0, l3))
}

/// Mean-propagation pass and head likelihood. Returns `(log-likelihood, raw head output)`.
pub fn head_log_likelihood<M: SequenceModel + ?Sized>(
    model: &M,
    g: &mut Graph,
    xs: &[Tensor],
    mask: Option<&[bool]>,
    target: Option<&Target>,
) -> Result<(Var, Var), TrainError> {
    let target = target.ok_or_else(|| TrainError::Contract("supervised training needs a target for every series".into()))?;
    let out = (|| {
        let traj = model.unroll(g, xs, mask, &mut ZeroNoise)?;
        model.head_output(g, traj.finals())
    })()
    .map_err(|e| TrainError::from_model("head_ll", e))?;
    let wrap = |e| TrainError::from_tensor("head_ll", e);
    let ll = match (model.config().head, target) {
        (HeadKind::Classifier { num_classes }, Target::Class(c)) => {
            if *c >= num_classes {
                return Err(TrainError::Contract(format!("class {c} out of range for {num_classes} classes")));
            }
            let lp = g.log_softmax(out).map_err(wrap)?;
            g.select(lp, *c).map_err(wrap)?
        }
        (HeadKind::Predictor { output_dim }, Target::Values(y)) => {
            if y.len() != output_dim {
                return Err(TrainError::Contract(format!(
                    "target has {} values, predictor outputs {output_dim}",
                    y.len()
                )));
            }
            let yv = g.input(Tensor::vector(y.clone()));
            let zero = g.input(Tensor::zeros(&[output_dim]));
            g.gaussian_log_pdf(yv, out, zero).map_err(wrap)?
        }
        _ => return Err(TrainError::Contract("target kind does not match the model head".into())),
    };
    Ok((ll, out))
}

/// The bound of one series on an existing graph.
#[derive(Debug, Clone, Copy)]
pub struct ElboGraph {
    pub elbo: Var,
    pub head_output: Var,
    pub breakdown: LossBreakdown,
}

/// Builds the bound with `mc_samples` posterior samples; sample `s` draws its
/// noise from `mix_seed(noise_seed, [s])`.
pub fn elbo_sample<M: SequenceModel + ?Sized>(
    model: &M,
    g: &mut Graph,
    sample: &Sample,
    beta: f64,
    noise_seed: u64,
    mc_samples: usize,
) -> Result<ElboGraph, TrainError> {
    let xs = sample.tensors();
    let mask = sample.mask_opt();
    let mut sampled = Vec::with_capacity(mc_samples);
    let (mut recon_sum, mut kl_sum, mut l1, mut l3) = (0.0, 0.0, 0.0, 0.0);
    for s in 0..mc_samples.max(1) {
        let mut noise = SeededNoise::new(mix_seed(noise_seed, &[s as u64]));
        let (terms, last) = sampled_terms(model, g, &xs, mask, beta, &mut noise)?;
        let (a, _, c) = terminal_loss(g, &last)?;
        l1 += a;
        l3 += c;
        for t in &terms {
            recon_sum += g.value(t.recon).data()[0];
            kl_sum += g.value(t.kl).data()[0];
        }
        let losses: Vec<Var> = terms.iter().map(|t| t.loss).collect();
        let stacked = g.concat(&losses).map_err(|e| TrainError::from_tensor("elbo", e))?;
        sampled.push(g.sum(stacked).map_err(|e| TrainError::from_tensor("elbo", e))?);
    }
    let n = sampled.len() as f64;
    let (head_ll, head_output) = head_log_likelihood(model, g, &xs, mask, sample.target.as_ref())?;
    let wrap = |e| TrainError::from_tensor("elbo", e);
    let mc = if sampled.len() == 1 {
        sampled[0]
    } else {
        let s = g.concat(&sampled).map_err(wrap)?;
        let s = g.sum(s).map_err(wrap)?;
        g.scale(s, 1.0 / n).map_err(wrap)?
    };
    let elbo = g.add(head_ll, mc).map_err(wrap)?;
    let breakdown = LossBreakdown {
        recon_ll: recon_sum / n,
        kl_total: kl_sum / n,
        head_ll: g.value(head_ll).data()[0],
        elbo: g.value(elbo).data()[0],
        kl_weight: beta,
        l1: l1 / n,
        l2: 0.0,
        l3: l3 / n,
    };
    Ok(ElboGraph {
        elbo,
        head_output,
        breakdown,
    })
}

fn sampled_terms<M: SequenceModel + ?Sized>(
    model: &M,
    g: &mut Graph,
    xs: &[Tensor],
    mask: Option<&[bool]>,
    beta: f64,
    noise: &mut dyn NoiseSource,
) -> Result<(Vec<StepTerms>, StepTerms), TrainError> {
    let traj = model
        .unroll(g, xs, mask, noise)
        .map_err(|e| TrainError::from_model("posterior_unroll", e))?;
    let terms = traj
        .steps
        .iter()
        .map(|r| step_loss(model, g, r, beta))
        .collect::<Result<Vec<_>, _>>()?;
    let last = *terms.last().expect("unroll yields at least one step");
    Ok((terms, last))
}

/// Per-series bound and its gradient with respect to every parameter, in
/// store layout.
pub fn elbo_and_grad<M: SequenceModel + ?Sized>(
    model: &M,
    sample: &Sample,
    beta: f64,
    noise_seed: u64,
    mc_samples: usize,
) -> Result<(LossBreakdown, Vec<f64>), TrainError> {
    let mut g = Graph::new(model.params());
    let out = elbo_sample(model, &mut g, sample, beta, noise_seed, mc_samples)?;
    g.backward(out.elbo).map_err(|e| TrainError::from_tensor("gradient", e))?;
    let grad = g.param_grads();
    if let Some(i) = grad.iter().position(|v| !v.is_finite()) {
        return Err(TrainError::NonFinite {
            term: "gradient",
            context: String::new(),
            detail: format!("parameter scalar {i} has gradient {}", grad[i]),
        });
    }
    Ok((out.breakdown, grad))
}

/// Bound without gradients, plus the raw head output.
pub fn elbo_eval<M: SequenceModel + ?Sized>(
    model: &M,
    sample: &Sample,
    beta: f64,
    noise_seed: u64,
    mc_samples: usize,
) -> Result<(LossBreakdown, Vec<f64>), TrainError> {
    let mut g = Graph::frozen(model.params());
    let out = elbo_sample(model, &mut g, sample, beta, noise_seed, mc_samples)?;
    Ok((out.breakdown, g.value(out.head_output).data().to_vec()))
}

/// Mean bound over a batch; series `i` uses noise seed `seeds[i]`.
pub fn elbo_batch<M: SequenceModel + ?Sized>(
    model: &M,
    batch: &[Sample],
    beta: f64,
    seeds: &[u64],
) -> Result<LossBreakdown, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Contract("empty batch".into()));
    }
    if seeds.len() != batch.len() {
        return Err(TrainError::Contract("one noise seed per series is required".into()));
    }
    let items = batch
        .iter()
        .zip(seeds)
        .map(|(s, &seed)| elbo_eval(model, s, beta, seed, 1).map(|(b, _)| b))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LossBreakdown::mean(&items))
}
