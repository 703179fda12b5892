//! Classification and contrastive objectives, as plain scalar functions and
//! as recorded graph operations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Probability clamp for logs.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Focusing parameter of the focal term.
    pub focal_gamma: f64,
    pub ce_weight: f64,
    pub focal_weight: f64,
    pub infonce_temperature: f64,
    /// Per-distance temperature overrides for the three InfoNCE terms of the
    /// fusion objective.
    pub distance_temperatures: Option<[f64; 3]>,
    /// Weights of (match loss, classification loss) in the ITM objective.
    pub itm_weights: [f64; 2],
    /// Weights of the five fusion terms.
    pub fusion_weights: [f64; 5],
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            focal_gamma: 2.0,
            ce_weight: 1.0,
            focal_weight: 1.0,
            infonce_temperature: 1.0,
            distance_temperatures: None,
            itm_weights: [1.0, 1.0],
            fusion_weights: [1.0; 5],
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_gamma >= 0.0) || !self.focal_gamma.is_finite() {
            return Err(Error::Config(format!("focal_gamma must be ≥ 0, got {}", self.focal_gamma)));
        }
        let temps = std::iter::once(self.infonce_temperature).chain(self.distance_temperatures.into_iter().flatten());
        for t in temps {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::Config(format!("InfoNCE temperature must be > 0, got {t}")));
            }
        }
        let weights = [self.ce_weight, self.focal_weight]
            .into_iter()
            .chain(self.itm_weights)
            .chain(self.fusion_weights);
        for w in weights {
            if !w.is_finite() {
                return Err(Error::Config("loss weights must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn distance_temperature(&self, term: usize) -> f64 {
        self.distance_temperatures
            .map(|t| t[term])
            .unwrap_or(self.infonce_temperature)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn check_label(y: u8) -> Result<()> {
    if y > 1 {
        return Err(Error::InvalidArgument(format!("binary label must be 0 or 1, got {y}")));
    }
    Ok(())
}

/// Binary cross-entropy of positive-class probability `p` against `y`.
pub fn cross_entropy(p: f64, y: u8) -> Result<f64> {
    check_label(y)?;
    let p = clamp_prob(p);
    Ok(if y == 1 { -p.ln() } else { -(1.0 - p).ln() })
}

/// `−(1 − p_t)^γ · ln p_t`, where `p_t` is the probability of the true class.
pub fn focal_loss(p_t: f64, gamma: f64) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be ≥ 0, got {gamma}")));
    }
    let p_t = clamp_prob(p_t);
    Ok(-(1.0 - p_t).powf(gamma) * p_t.ln())
}

/// Cross-entropy plus focal loss with unit weights.
pub fn classification_loss(p: f64, y: u8, gamma: f64) -> Result<f64> {
    check_label(y)?;
    let p_t = if y == 1 { p } else { 1.0 - p };
    Ok(cross_entropy(p, y)? + focal_loss(p_t, gamma)?)
}

/// InfoNCE for one positive score against `neg_scores`, all divided by
/// `temperature` before exponentiation.
pub fn info_nce(pos_score: f64, neg_scores: &[f64], temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {temperature}")));
    }
    if !pos_score.is_finite() || neg_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NumericFault("non-finite InfoNCE score".into()));
    }
    if neg_scores.is_empty() {
        return Ok(0.0);
    }
    let pos = pos_score / temperature;
    let max = neg_scores
        .iter()
        .map(|s| s / temperature)
        .fold(pos, f64::max);
    let denom: f64 = (pos - max).exp() + neg_scores.iter().map(|s| (s / temperature - max).exp()).sum::<f64>();
    Ok((max + denom.ln() - pos).max(0.0))
}

pub fn total_loss_itm(losses: [f64; 2], weights: [f64; 2]) -> f64 {
    losses.iter().zip(weights).map(|(l, w)| l * w).sum()
}

pub fn total_loss_fusion(losses: [f64; 5], weights: [f64; 5]) -> f64 {
    losses.iter().zip(weights).map(|(l, w)| l * w).sum()
}

fn ce_plus_focal<'g>(p_t: Var<'g>, cfg: &LossConfig) -> Result<Var<'g>> {
    let p_t = p_t.clamp(PROB_EPS, 1.0 - PROB_EPS)?;
    let nll = p_t.ln()?.scale(-1.0)?;
    let modulator = p_t.scale(-1.0)?.add_scalar(1.0)?.powf(cfg.focal_gamma)?;
    let focal = modulator.mul(nll)?;
    nll.scale(cfg.ce_weight)?.add(focal.scale(cfg.focal_weight)?)?.mean()
}

/// Batch-mean classification loss over class logits `[B, k]`, with `p_t`
/// the softmax probability of each row's true class.
pub fn classification_loss_logits<'g>(logits: Var<'g>, labels: &[usize], cfg: &LossConfig) -> Result<Var<'g>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::invalid_shape(
            "classification_loss",
            &shape,
            format!("expected [{}, k] logits", labels.len()),
        ));
    }
    let k = shape[1];
    let mut onehot = vec![0.0; labels.len() * k];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::InvalidArgument(format!("label {y} out of range for {k} classes")));
        }
        onehot[i * k + y] = 1.0;
    }
    let mask = logits.graph().constant(Tensor::new(&shape, onehot)?);
    let p_t = logits.softmax()?.mul(mask)?.sum_axis(1)?;
    ce_plus_focal(p_t, cfg)
}

/// Batch-mean classification loss for binary logits `[B]` with
/// `p = sigmoid(logit)`.
pub fn binary_classification_loss<'g>(logits: Var<'g>, labels: &[u8], cfg: &LossConfig) -> Result<Var<'g>> {
    let shape = logits.shape();
    if shape != [labels.len()] {
        return Err(Error::invalid_shape(
            "binary_classification_loss",
            &shape,
            format!("expected [{}] logits", labels.len()),
        ));
    }
    let signs = labels
        .iter()
        .map(|&y| {
            check_label(y)?;
            Ok(if y == 1 { 1.0 } else { -1.0 })
        })
        .collect::<Result<Vec<_>>>()?;
    let signs = logits.graph().constant(Tensor::vector(signs)?);
    // p_t = sigmoid(±logit)
    let p_t = logits.mul(signs)?.sigmoid()?;
    ce_plus_focal(p_t, cfg)
}

/// In-batch InfoNCE: row `i` of `queries` is scored against every row of
/// `candidates` by dot product over `temperature`; row `i` of `candidates`
/// is the positive and the other `B − 1` rows are negatives. Inputs with
/// more than two axes are flattened per sample.
pub fn info_nce_batch<'g>(queries: Var<'g>, candidates: Var<'g>, temperature: f64) -> Result<Var<'g>> {
    if queries.shape() != candidates.shape() {
        return Err(Error::shape("info_nce", &queries.shape(), &candidates.shape()));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {temperature}")));
    }
    let shape = queries.shape();
    let b = shape[0];
    let width: usize = shape[1..].iter().product();
    let q = queries.reshape(&[b, width])?;
    let c = candidates.reshape(&[b, width])?;
    let scores = q.matmul(c.transpose()?)?.scale(1.0 / temperature)?;
    let diag = queries.graph().constant(Tensor::identity(b));
    scores.log_softmax()?.mul(diag)?.sum()?.scale(-1.0 / b as f64)
}
