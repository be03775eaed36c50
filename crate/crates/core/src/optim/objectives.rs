//! Training objectives with analytic gradients: answer MLE, student
//! response MLE and the DPO preference loss.

use serde::{Deserialize, Serialize};

use super::model::{Encoded, Gradient, SoftmaxLm};
use crate::backend::Boundary;
use crate::error::{Error, Result};
use crate::prefs::PreferencePair;
use crate::prompting::parse_student_response;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoConfig {
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Pairs per gradient step; `None` means full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            lr: 1.0,
            epochs: 5,
            batch_size: None,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::domain(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Loss value, gradient of the loss, and per-pair implicit reward margins
/// `beta * ((log pi_w - log ref_w) - (log pi_l - log ref_l))` for DPO.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub loss: f64,
    pub grad: Gradient,
    pub margins: Vec<f64>,
}

impl LossReport {
    pub fn mean_margin(&self) -> Option<f64> {
        (!self.margins.is_empty())
            .then(|| self.margins.iter().sum::<f64>() / self.margins.len() as f64)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn encode_all(
    model: &SoftmaxLm,
    data: &[(String, String)],
    boundary: Boundary,
) -> Result<Vec<Encoded>> {
    data.iter()
        .map(|(p, c)| model.encode(p, c, boundary))
        .collect()
}

/// Negative log-likelihood summed over examples, with its gradient.
pub fn nll_encoded(model: &SoftmaxLm, data: &[Encoded]) -> LossReport {
    let mut grad = Gradient::default();
    let mut loss = 0.0;
    for enc in data {
        loss -= model.accumulate_logprob_grad(enc, -1.0, &mut grad);
    }
    LossReport {
        loss,
        grad,
        margins: Vec::new(),
    }
}

/// `-sum log M(a | q)` over (question prompt, answer) pairs.
pub fn sft_loss_and_grad(model: &SoftmaxLm, data: &[(String, String)]) -> Result<LossReport> {
    let enc = encode_all(model, data, Boundary::Prefix)?;
    Ok(nll_encoded(model, &enc))
}

/// `-sum_n log M(R_n | R_<n, q)` over (question, rendered response) pairs.
pub fn student_mle_loss_and_grad(
    model: &SoftmaxLm,
    data: &[(String, String)],
) -> Result<LossReport> {
    for (_, response) in data {
        parse_student_response(response)?;
    }
    let enc = encode_all(model, data, Boundary::Prefix)?;
    Ok(nll_encoded(model, &enc))
}

/// Preference pairs compiled against a frozen reference model.
#[derive(Debug, Clone)]
pub struct DpoBatch {
    chosen: Vec<Encoded>,
    rejected: Vec<Encoded>,
    ref_chosen: Vec<f64>,
    ref_rejected: Vec<f64>,
}

impl DpoBatch {
    pub fn new(reference: &SoftmaxLm, pairs: &[PreferencePair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::domain("DPO needs at least one preference pair"));
        }
        let mut b = DpoBatch {
            chosen: Vec::with_capacity(pairs.len()),
            rejected: Vec::with_capacity(pairs.len()),
            ref_chosen: Vec::with_capacity(pairs.len()),
            ref_rejected: Vec::with_capacity(pairs.len()),
        };
        for p in pairs {
            let w = reference.encode(&p.prompt, &p.chosen, Boundary::Complete)?;
            let l = reference.encode(&p.prompt, &p.rejected, Boundary::Complete)?;
            b.ref_chosen
                .push(reference.encoded_logprobs(&w).iter().sum());
            b.ref_rejected
                .push(reference.encoded_logprobs(&l).iter().sum());
            b.chosen.push(w);
            b.rejected.push(l);
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.chosen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chosen.is_empty()
    }

    /// Mean DPO loss over `range` of pairs and its gradient w.r.t. the policy.
    pub fn loss_and_grad(
        &self,
        policy: &SoftmaxLm,
        beta: f64,
        range: std::ops::Range<usize>,
    ) -> LossReport {
        let n = range.len() as f64;
        let mut grad = Gradient::default();
        let mut loss = 0.0;
        let mut margins = Vec::with_capacity(range.len());
        for i in range {
            let mut gw = Gradient::default();
            let mut gl = Gradient::default();
            let lw = policy.accumulate_logprob_grad(&self.chosen[i], 1.0, &mut gw);
            let ll = policy.accumulate_logprob_grad(&self.rejected[i], 1.0, &mut gl);
            let z = beta * ((lw - self.ref_chosen[i]) - (ll - self.ref_rejected[i]));
            margins.push(z);
            loss += softplus(-z) / n;
            // d softplus(-z) / dz = -sigmoid(-z)
            let coef = -sigmoid(-z) * beta / n;
            grad.add_scaled(&gw, coef);
            grad.add_scaled(&gl, -coef);
        }
        LossReport {
            loss,
            grad,
            margins,
        }
    }
}

/// `-mean log sigmoid(beta * (Δ_w - Δ_l))` with `Δ = log pi - log pi_ref`.
pub fn dpo_loss_and_grad(
    policy: &SoftmaxLm,
    reference: &SoftmaxLm,
    pairs: &[PreferencePair],
    config: &DpoConfig,
) -> Result<LossReport> {
    config.validate()?;
    let batch = DpoBatch::new(reference, pairs)?;
    Ok(batch.loss_and_grad(policy, config.beta, 0..batch.len()))
}
