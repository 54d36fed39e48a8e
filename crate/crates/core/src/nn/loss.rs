use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// Sum of squared errors.
    Mse,
    /// `−Σ tᵢ log softmax_T(p)ᵢ`.
    CrossEntropy {
        #[serde(default = "unit_temperature")]
        temperature: f64,
    },
}

fn unit_temperature() -> f64 {
    1.0
}

impl LossKind {
    pub const fn cross_entropy() -> Self {
        LossKind::CrossEntropy { temperature: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::CrossEntropy { temperature } if !(temperature > 0.0 && temperature.is_finite()) => {
                Err(Error::invalid(format!("temperature must be > 0, got {temperature}")))
            }
            _ => Ok(()),
        }
    }
}

/// Numerically stable `softmax(z / T)`.
pub fn softmax(z: &[f64], temperature: f64) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax(z: &[f64], temperature: f64) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = z
        .iter()
        .map(|v| ((v - max) / temperature).exp())
        .sum::<f64>()
        .ln();
    z.iter().map(|v| (v - max) / temperature - lse).collect()
}

fn check_lengths(p: &[f64], t: &[f64]) -> Result<()> {
    if p.len() != t.len() {
        return Err(Error::shape("loss target", p.len(), t.len()));
    }
    if p.is_empty() {
        return Err(Error::invalid("loss on empty vectors"));
    }
    Ok(())
}

fn check_distribution(t: &[f64]) -> Result<()> {
    let sum: f64 = t.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || t.iter().any(|&v| v < -1e-12) {
        return Err(Error::validation(
            "target",
            format!("cross-entropy target must be a probability vector (sum = {sum})"),
        ));
    }
    Ok(())
}

pub fn loss(kind: LossKind, prediction: &[f64], target: &[f64]) -> Result<f64> {
    Ok(loss_and_grad(kind, prediction, target)?.0)
}

/// Loss value and its gradient with respect to `prediction`.
pub fn loss_and_grad(kind: LossKind, prediction: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_lengths(prediction, target)?;
    kind.validate()?;
    match kind {
        LossKind::Mse => {
            let value = prediction
                .iter()
                .zip(target)
                .map(|(p, t)| (t - p) * (t - p))
                .sum();
            let grad = prediction
                .iter()
                .zip(target)
                .map(|(p, t)| 2.0 * (p - t))
                .collect();
            Ok((value, grad))
        }
        LossKind::CrossEntropy { temperature } => {
            check_distribution(target)?;
            let logp = log_softmax(prediction, temperature);
            let value = -target.iter().zip(&logp).map(|(t, l)| t * l).sum::<f64>();
            let grad = logp
                .iter()
                .zip(target)
                .map(|(l, t)| (l.exp() - t) / temperature)
                .collect();
            Ok((value, grad))
        }
    }
}

/// Distillation regularizer between student and teacher logits, with its
/// gradient with respect to the student logits. Under cross-entropy both
/// sides are softened with the same temperature.
pub fn distill_term(kind: LossKind, student: &[f64], teacher: &[f64]) -> Result<(f64, Vec<f64>)> {
    match kind {
        LossKind::Mse => loss_and_grad(kind, student, teacher),
        LossKind::CrossEntropy { temperature } => {
            check_lengths(student, teacher)?;
            kind.validate()?;
            let soft = softmax(teacher, temperature);
            loss_and_grad(kind, student, &soft)
        }
    }
}
