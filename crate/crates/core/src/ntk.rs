//! Kernel-regime analytics for knowledge distillation (KD) and
//! co-distillation (CD).
//!
//! In the kernel regime a student trained on `a·‖y − f‖² + λ·‖φ̄ − f‖²`
//! settles at `(a·y + λ·φ̄)/(a + λ)`. Co-distillation iterates that map with
//! each worker's teacher set to the mean of the other workers' previous
//! outputs; the mean of the workers contracts by `λ/(a+λ)` per round and the
//! deviations from the mean by `−λ/((C−1)(a+λ))`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{seed, stats, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelRegimeSystem {
    pub a: f64,
    pub lambda: f64,
    pub y: Vec<f64>,
    /// Teacher prediction `Σ a_m φ_m / √M_h` (KD only).
    pub teacher_pred: Option<Vec<f64>>,
    /// Worker outputs `f^c(0)` after warm-up (CD only).
    pub initial_outputs: Vec<Vec<f64>>,
}

impl KernelRegimeSystem {
    fn validated(self) -> Result<Self> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::invalid(format!("a must be > 0, got {}", self.a)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be > 0, got {}", self.lambda)));
        }
        let n = self.y.len();
        if let Some(t) = &self.teacher_pred {
            if t.len() != n {
                return Err(Error::shape("teacher prediction", n, t.len()));
            }
        }
        for f in &self.initial_outputs {
            if f.len() != n {
                return Err(Error::shape("initial output", n, f.len()));
            }
        }
        // Both contraction factors are below one for any a, λ > 0 and C ≥ 2.
        debug_assert!(self.kd_factor() < 1.0);
        Ok(self)
    }

    pub fn kd(a: f64, lambda: f64, y: Vec<f64>, teacher_pred: Vec<f64>) -> Result<Self> {
        KernelRegimeSystem {
            a,
            lambda,
            y,
            teacher_pred: Some(teacher_pred),
            initial_outputs: Vec::new(),
        }
        .validated()
    }

    pub fn cd(a: f64, lambda: f64, y: Vec<f64>, initial_outputs: Vec<Vec<f64>>) -> Result<Self> {
        if initial_outputs.len() < 2 {
            return Err(Error::invalid(format!(
                "co-distillation needs at least 2 workers, got {}",
                initial_outputs.len()
            )));
        }
        KernelRegimeSystem {
            a,
            lambda,
            y,
            teacher_pred: None,
            initial_outputs,
        }
        .validated()
    }

    /// CD system over `n` samples of a 10-class task: labels cycle through
    /// 0..9 and each worker starts at the labels plus unit Gaussian noise.
    pub fn random_cd(a: f64, lambda: f64, workers: usize, n: usize, seed: u64) -> Result<Self> {
        let y: Vec<f64> = (0..n).map(|i| (i % 10) as f64).collect();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let initial = (0..workers)
            .map(|c| {
                let mut rng = seed::stream(seed, "ntk-init", c as u64, 0);
                y.iter().map(|v| v + normal.sample(&mut rng)).collect()
            })
            .collect();
        Self::cd(a, lambda, y, initial)
    }

    pub fn workers(&self) -> usize {
        self.initial_outputs.len()
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// `λ/(a+λ)`: contraction of the worker mean per round.
    pub fn kd_factor(&self) -> f64 {
        self.lambda / (self.a + self.lambda)
    }

    /// `−λ/((C−1)(a+λ))`: contraction of deviations from the mean per round.
    pub fn deviation_factor(&self, workers: usize) -> f64 {
        -self.lambda / ((workers as f64 - 1.0) * (self.a + self.lambda))
    }

    fn teacher(&self) -> Result<&[f64]> {
        self.teacher_pred
            .as_deref()
            .ok_or_else(|| Error::invalid("KD analytics need a teacher prediction"))
    }
}

pub fn kd_fixed_point(sys: &KernelRegimeSystem) -> Result<Vec<f64>> {
    let teacher = sys.teacher()?;
    Ok(fixed_point(sys.a, sys.lambda, &sys.y, teacher))
}

fn fixed_point(a: f64, lambda: f64, y: &[f64], teacher: &[f64]) -> Vec<f64> {
    y.iter()
        .zip(teacher)
        .map(|(yi, ti)| (a * yi + lambda * ti) / (a + lambda))
        .collect()
}

/// `λ/(a+λ)·‖y − φ̄‖₂`, the distance of the KD fixed point from the labels.
pub fn kd_error(sys: &KernelRegimeSystem) -> Result<f64> {
    let teacher = sys.teacher()?;
    Ok(sys.kd_factor() * stats::l2_distance(&sys.y, teacher))
}

/// One co-distillation round: every worker moves to the KD fixed point with
/// the leave-one-out mean of the others' previous outputs as teacher.
pub fn cd_update(sys: &KernelRegimeSystem, outputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let c = outputs.len();
    if c < 2 {
        return Err(Error::invalid(format!(
            "co-distillation needs at least 2 workers, got {c}"
        )));
    }
    let n = sys.n();
    if let Some(bad) = outputs.iter().find(|f| f.len() != n) {
        return Err(Error::shape("worker output", n, bad.len()));
    }
    let total: Vec<f64> = (0..n).map(|i| outputs.iter().map(|f| f[i]).sum()).collect();
    Ok(outputs
        .iter()
        .map(|f| {
            let teacher: Vec<f64> = total
                .iter()
                .zip(f)
                .map(|(s, own)| (s - own) / (c as f64 - 1.0))
                .collect();
            fixed_point(sys.a, sys.lambda, &sys.y, &teacher)
        })
        .collect())
}

/// Outputs `f^c(r)` for `r = 0..=rounds`.
pub fn cd_trajectory(sys: &KernelRegimeSystem, rounds: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut traj = Vec::with_capacity(rounds + 1);
    traj.push(sys.initial_outputs.clone());
    for r in 0..rounds {
        let next = cd_update(sys, &traj[r])?;
        traj.push(next);
    }
    Ok(traj)
}

/// `v = (λ/(C−1))·Σ_{c≥2} f^c`, the quantity tracked by the closed form.
pub fn cd_tracked(sys: &KernelRegimeSystem, outputs: &[Vec<f64>]) -> Vec<f64> {
    let c = outputs.len() as f64;
    (0..sys.n())
        .map(|i| sys.lambda / (c - 1.0) * outputs[1..].iter().map(|f| f[i]).sum::<f64>())
        .collect()
}

/// Closed form of `v_r = (λ/(C−1))·Σ_{c≥2} f^c(r)`:
/// `α·(λ/(a+λ))^r + β·(−λ/((C−1)(a+λ)))^r + λ·y`.
pub fn cd_closed_form(sys: &KernelRegimeSystem, r: usize) -> Result<Vec<f64>> {
    let c = sys.workers();
    if c < 2 {
        return Err(Error::invalid("closed form needs initial outputs of >= 2 workers"));
    }
    let cf = c as f64;
    let lam = sys.lambda;
    let p1 = sys.kd_factor().powi(r as i32);
    let p2 = sys.deviation_factor(c).powi(r as i32);
    let f = &sys.initial_outputs;
    Ok((0..sys.n())
        .map(|i| {
            let first = f[0][i];
            let rest: f64 = f[1..].iter().map(|v| v[i]).sum();
            let alpha = lam / cf * (first + rest) - lam * sys.y[i];
            let beta = lam / (cf * (cf - 1.0)) * rest - lam / cf * first;
            alpha * p1 + beta * p2 + lam * sys.y[i]
        })
        .collect())
}

/// Limit of every worker's output: the labels themselves.
pub fn cd_limit(sys: &KernelRegimeSystem) -> Vec<f64> {
    sys.y.clone()
}

/// Per-round, per-worker ∞-norm residuals `‖f^c(r) − y‖∞` for r = 0..=r_max.
pub fn cd_residuals(sys: &KernelRegimeSystem, r_max: usize) -> Result<Vec<(usize, usize, f64)>> {
    let traj = cd_trajectory(sys, r_max)?;
    Ok(traj
        .iter()
        .enumerate()
        .flat_map(|(r, outs)| {
            outs.iter()
                .enumerate()
                .map(move |(c, f)| (r, c, stats::linf_distance(f, &sys.y)))
        })
        .collect())
}

/// Discrete gradient descent on `½a‖y − f‖² + ½λ‖φ̄ − f‖²` over free outputs
/// (identity kernel), started from zero.
pub fn gradient_flow_oracle(sys: &KernelRegimeSystem, step: f64, iters: usize) -> Result<Vec<f64>> {
    gradient_flow_from(sys, &vec![0.0; sys.n()], step, iters)
}

pub fn gradient_flow_from(
    sys: &KernelRegimeSystem,
    start: &[f64],
    step: f64,
    iters: usize,
) -> Result<Vec<f64>> {
    let teacher = sys.teacher()?;
    if start.len() != sys.n() {
        return Err(Error::shape("gradient flow start", sys.n(), start.len()));
    }
    if !(step > 0.0) {
        return Err(Error::invalid(format!("step must be > 0, got {step}")));
    }
    let mut f = start.to_vec();
    for it in 0..iters {
        for ((fi, yi), ti) in f.iter_mut().zip(&sys.y).zip(teacher) {
            *fi += step * (sys.a * (yi - *fi) + sys.lambda * (ti - *fi));
        }
        if stats::l2_norm(&f) > 1e6 || f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Unstable(format!(
                "output norm exceeded 1e6 after {} iterations; use a step below {}",
                it + 1,
                2.0 / (sys.a + sys.lambda)
            )));
        }
    }
    Ok(f)
}
