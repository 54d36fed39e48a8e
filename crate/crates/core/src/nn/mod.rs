//! Dense feedforward networks with manual backpropagation.
//!
//! Weights live in one flat vector. Layer `k` maps `dims[k]` inputs to
//! `dims[k + 1]` outputs and is stored row-major as a
//! `dims[k + 1] × (dims[k] + 1)` matrix whose last column is the bias.
//! Hidden layers apply their configured activation; the output layer is
//! linear.

mod checkpoint;
pub mod gradcheck;
mod loss;

use std::ops::Deref;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

pub use loss::{distill_term, loss, loss_and_grad, softmax, LossKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative given pre-activation `z` and activation `h`. ReLU'(0) = 0.
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Which activation vector plays the role of the exchanged logit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogitSource {
    /// Final hidden-layer activations.
    Hidden,
    /// Output-layer (pre-softmax) activations.
    #[default]
    Output,
}

/// Activation vector exchanged between workers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitVector(pub Vec<f64>);

impl Deref for LogitVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl LogitVector {
    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Number of parameters (biases included) of a network with these dims.
pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    activations: Vec<Activation>,
    weights: Vec<f64>,
    seed: u64,
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct Trace {
    /// `acts[0]` is the input, `acts[L]` the output.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// Network initialised uniformly in ±1/√fan_in from `seed`.
    pub fn new(layer_dims: Vec<usize>, activations: Vec<Activation>, seed: u64) -> Result<Self> {
        Self::check_arch(&layer_dims, &activations)?;
        let mut rng = seed::from_seed(seed);
        let mut weights = Vec::with_capacity(param_count(&layer_dims));
        for w in layer_dims.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] + 1) * w[1] {
                weights.push(rng.random_range(-bound..bound));
            }
        }
        Ok(Mlp {
            layer_dims,
            activations,
            weights,
            seed,
        })
    }

    pub fn from_weights(
        layer_dims: Vec<usize>,
        activations: Vec<Activation>,
        weights: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        Self::check_arch(&layer_dims, &activations)?;
        let expected = param_count(&layer_dims);
        if weights.len() != expected {
            return Err(Error::shape("weight vector", expected, weights.len()));
        }
        Ok(Mlp {
            layer_dims,
            activations,
            weights,
            seed,
        })
    }

    /// Same hidden activation for every hidden layer.
    pub fn uniform(layer_dims: Vec<usize>, activation: Activation, seed: u64) -> Result<Self> {
        let hidden = layer_dims.len().saturating_sub(2);
        Self::new(layer_dims, vec![activation; hidden], seed)
    }

    fn check_arch(dims: &[usize], activations: &[Activation]) -> Result<()> {
        if dims.len() < 3 {
            return Err(Error::invalid(format!(
                "a network needs input, at least one hidden and an output layer; got dims {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::invalid(format!("layer dims must be positive: {dims:?}")));
        }
        if activations.len() != dims.len() - 2 {
            return Err(Error::shape(
                "hidden activations",
                dims.len() - 2,
                activations.len(),
            ));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layer_dims[self.layer_dims.len() - 2]
    }

    pub fn logit_dim(&self, source: LogitSource) -> usize {
        match source {
            LogitSource::Hidden => self.hidden_dim(),
            LogitSource::Output => self.output_dim(),
        }
    }

    pub fn same_architecture(&self, other: &Mlp) -> bool {
        self.layer_dims == other.layer_dims && self.activations == other.activations
    }

    fn trace(&self, input: &[f64]) -> Result<Trace> {
        if input.len() != self.input_dim() {
            return Err(Error::shape("network input", self.input_dim(), input.len()));
        }
        let layers = self.layer_dims.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        let mut pre = Vec::with_capacity(layers);
        acts.push(input.to_vec());
        let mut offset = 0;
        for k in 0..layers {
            let (n_in, n_out) = (self.layer_dims[k], self.layer_dims[k + 1]);
            let x = &acts[k];
            let mut z = Vec::with_capacity(n_out);
            for j in 0..n_out {
                let row = &self.weights[offset + j * (n_in + 1)..offset + (j + 1) * (n_in + 1)];
                let dot: f64 = row[..n_in].iter().zip(x).map(|(w, v)| w * v).sum();
                z.push(dot + row[n_in]);
            }
            offset += n_out * (n_in + 1);
            let h = if k + 1 < layers {
                let act = self.activations[k];
                z.iter().map(|&v| act.apply(v)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            acts.push(h);
        }
        Ok(Trace { acts, pre })
    }

    /// Prediction and final hidden-layer logits.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, LogitVector)> {
        let mut t = self.trace(input)?;
        let out = t.acts.pop().unwrap();
        let hidden = t.acts.pop().unwrap();
        Ok((out, LogitVector(hidden)))
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.0)
    }

    /// Logit vector from the requested source.
    pub fn logits(&self, input: &[f64], source: LogitSource) -> Result<LogitVector> {
        let (out, hidden) = self.forward(input)?;
        Ok(match source {
            LogitSource::Hidden => hidden,
            LogitSource::Output => LogitVector(out),
        })
    }

    /// Gradient of a scalar objective given its derivative with respect to
    /// the prediction and, optionally, the final hidden activations.
    pub fn gradient_from_output(
        &self,
        input: &[f64],
        d_prediction: &[f64],
        d_hidden: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let trace = self.trace(input)?;
        self.backprop(&trace, d_prediction, d_hidden)
    }

    fn backprop(&self, t: &Trace, d_out: &[f64], d_hidden: Option<&[f64]>) -> Result<Vec<f64>> {
        if d_out.len() != self.output_dim() {
            return Err(Error::shape("output gradient", self.output_dim(), d_out.len()));
        }
        if let Some(dh) = d_hidden {
            if dh.len() != self.hidden_dim() {
                return Err(Error::shape("hidden gradient", self.hidden_dim(), dh.len()));
            }
        }
        let layers = self.layer_dims.len() - 1;
        let mut grad = vec![0.0; self.weights.len()];
        let mut offsets = Vec::with_capacity(layers);
        let mut acc = 0;
        for w in self.layer_dims.windows(2) {
            offsets.push(acc);
            acc += (w[0] + 1) * w[1];
        }

        let mut delta = d_out.to_vec();
        for k in (0..layers).rev() {
            let (n_in, n_out) = (self.layer_dims[k], self.layer_dims[k + 1]);
            let off = offsets[k];
            let x = &t.acts[k];
            let mut d_x = vec![0.0; n_in];
            for j in 0..n_out {
                let base = off + j * (n_in + 1);
                let dj = delta[j];
                if dj != 0.0 {
                    for i in 0..n_in {
                        grad[base + i] += dj * x[i];
                        d_x[i] += dj * self.weights[base + i];
                    }
                    grad[base + n_in] += dj;
                }
            }
            if k == 0 {
                break;
            }
            if k == layers - 1 {
                if let Some(dh) = d_hidden {
                    for (a, b) in d_x.iter_mut().zip(dh) {
                        *a += b;
                    }
                }
            }
            let act = self.activations[k - 1];
            delta = d_x
                .iter()
                .zip(&t.pre[k - 1])
                .zip(&t.acts[k])
                .map(|((g, &z), &h)| g * act.derivative(z, h))
                .collect();
        }
        Ok(grad)
    }

    /// `weights ← weights − η·gradient`.
    pub fn sgd_step(&mut self, gradient: &[f64], eta: f64) -> Result<()> {
        if gradient.len() != self.weights.len() {
            return Err(Error::shape("gradient", self.weights.len(), gradient.len()));
        }
        sgd_update(&mut self.weights, gradient, eta);
        Ok(())
    }
}

pub fn sgd_update(weights: &mut [f64], gradient: &[f64], eta: f64) {
    for (w, g) in weights.iter_mut().zip(gradient) {
        *w -= eta * g;
    }
}

/// Supervised loss plus a λ-weighted distillation regularizer on logits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub supervised: LossKind,
    pub distill: LossKind,
    pub lambda: f64,
    pub source: LogitSource,
}

impl Default for Objective {
    fn default() -> Self {
        Objective {
            supervised: LossKind::cross_entropy(),
            distill: LossKind::cross_entropy(),
            lambda: 0.0,
            source: LogitSource::Output,
        }
    }
}

impl Objective {
    pub fn with_lambda(self, lambda: f64) -> Self {
        Objective { lambda, ..self }
    }

    /// Objective value and its gradient with respect to the flat weights.
    /// The regularizer is skipped when `teacher` is absent.
    pub fn evaluate(
        &self,
        model: &Mlp,
        input: &[f64],
        target: &[f64],
        teacher: Option<&[f64]>,
    ) -> Result<(f64, Vec<f64>)> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        let trace = model.trace(input)?;
        let out = &trace.acts[trace.acts.len() - 1];
        let (mut value, d_out) = loss_and_grad(self.supervised, out, target)?;
        let mut d_out = d_out;
        let mut d_hidden = None;
        if let (Some(teacher), true) = (teacher, self.lambda > 0.0) {
            let student = match self.source {
                LogitSource::Hidden => &trace.acts[trace.acts.len() - 2],
                LogitSource::Output => out,
            };
            let (reg, d_reg) = distill_term(self.distill, student, teacher)?;
            value += self.lambda * reg;
            match self.source {
                LogitSource::Hidden => {
                    d_hidden = Some(d_reg.iter().map(|g| self.lambda * g).collect::<Vec<_>>());
                }
                LogitSource::Output => {
                    for (a, g) in d_out.iter_mut().zip(&d_reg) {
                        *a += self.lambda * g;
                    }
                }
            }
        }
        let grad = model.backprop(&trace, &d_out, d_hidden.as_deref())?;
        Ok((value, grad))
    }

    pub fn value(
        &self,
        model: &Mlp,
        input: &[f64],
        target: &[f64],
        teacher: Option<&[f64]>,
    ) -> Result<f64> {
        let (out, hidden) = model.forward(input)?;
        let mut value = loss(self.supervised, &out, target)?;
        if let (Some(teacher), true) = (teacher, self.lambda > 0.0) {
            let student = match self.source {
                LogitSource::Hidden => &hidden[..],
                LogitSource::Output => &out[..],
            };
            value += self.lambda * distill_term(self.distill, student, teacher)?.0;
        }
        Ok(value)
    }
}

/// Gradient of `loss(f(x), y) + λ·distill(F(x), teacher)` with respect to the
/// weights, with the regularizer on the final hidden activations.
pub fn backward(
    model: &Mlp,
    input: &[f64],
    target: &[f64],
    teacher_logits: Option<&LogitVector>,
    lambda: f64,
    kinds: (LossKind, LossKind),
) -> Result<Vec<f64>> {
    let objective = Objective {
        supervised: kinds.0,
        distill: kinds.1,
        lambda,
        source: LogitSource::Hidden,
    };
    Ok(objective
        .evaluate(model, input, target, teacher_logits.map(|t| &t.0[..]))?
        .1)
}

/// Elementwise mean of the weight vectors.
pub fn fedavg(models: &[Mlp]) -> Result<Mlp> {
    let first = models
        .first()
        .ok_or_else(|| Error::Aggregation("no models to average".into()))?;
    if let Some((i, _)) = models
        .iter()
        .enumerate()
        .find(|(_, m)| !m.same_architecture(first))
    {
        return Err(Error::Aggregation(format!(
            "model {i} has architecture {:?}/{:?}, expected {:?}/{:?}",
            models[i].layer_dims, models[i].activations, first.layer_dims, first.activations
        )));
    }
    let n = models.len() as f64;
    let mut weights = vec![0.0; first.weights.len()];
    for m in models {
        for (acc, w) in weights.iter_mut().zip(&m.weights) {
            *acc += w;
        }
    }
    for w in &mut weights {
        *w /= n;
    }
    Ok(Mlp {
        weights,
        ..first.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::gradcheck::{finite_difference, relative_error};
    use super::*;
    use proptest::prelude::*;

    fn tiny_identity() -> Mlp {
        // w = 2 (bias 0), a = 3 (bias 0)
        Mlp::from_weights(vec![1, 1, 1], vec![Activation::Identity], vec![2.0, 0.0, 3.0, 0.0], 0)
            .unwrap()
    }

    #[test]
    fn param_count_includes_biases() {
        assert_eq!(param_count(&[4, 8, 2]), 5 * 8 + 9 * 2);
        let m = Mlp::uniform(vec![3, 5, 4, 2], Activation::Tanh, 1).unwrap();
        assert_eq!(m.param_count(), 4 * 5 + 6 * 4 + 5 * 2);
    }

    #[test]
    fn zero_weights_predict_zero() {
        let m = Mlp::from_weights(
            vec![3, 4, 2],
            vec![Activation::Tanh],
            vec![0.0; param_count(&[3, 4, 2])],
            0,
        )
        .unwrap();
        assert_eq!(m.predict(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_chain() {
        let (pred, logits) = tiny_identity().forward(&[1.0]).unwrap();
        assert_eq!(pred, vec![6.0]);
        assert_eq!(logits.0, vec![2.0]);
    }

    #[test]
    fn golden_forward_seed_42() {
        let m = Mlp::uniform(vec![3, 4, 2], Activation::Tanh, 42).unwrap();
        let pred = m.predict(&[0.5, -1.0, 2.0]).unwrap();
        // Captured from the first run of this implementation.
        assert_eq!(pred, [-0.6079012310092263, -0.5773045090457002]);
    }

    #[test]
    fn wrong_input_length() {
        let m = tiny_identity();
        assert!(matches!(m.forward(&[1.0, 2.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn rejects_bad_architectures() {
        assert!(Mlp::uniform(vec![3, 2], Activation::Tanh, 0).is_err());
        assert!(Mlp::uniform(vec![3, 0, 2], Activation::Tanh, 0).is_err());
        assert!(Mlp::new(vec![3, 4, 2], vec![], 0).is_err());
        assert!(Mlp::from_weights(vec![1, 1, 1], vec![Activation::Relu], vec![0.0; 3], 0).is_err());
    }

    #[test]
    fn lambda_zero_is_plain_loss() {
        let m = Mlp::uniform(vec![3, 5, 3], Activation::Tanh, 3).unwrap();
        let x = [0.1, 0.2, -0.3];
        let y = [0.0, 1.0, 0.0];
        let teacher = LogitVector(vec![1.0; 5]);
        let kinds = (LossKind::cross_entropy(), LossKind::Mse);
        let with = backward(&m, &x, &y, Some(&teacher), 0.0, kinds).unwrap();
        let without = backward(&m, &x, &y, None, 0.0, kinds).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn self_teacher_adds_no_gradient() {
        let m = Mlp::uniform(vec![3, 5, 3], Activation::Tanh, 3).unwrap();
        let x = [0.1, 0.2, -0.3];
        let y = [0.0, 1.0, 0.0];
        let own = m.forward(&x).unwrap().1;
        for reg in [LossKind::Mse, LossKind::cross_entropy()] {
            let kinds = (LossKind::cross_entropy(), reg);
            let with = backward(&m, &x, &y, Some(&own), 2.5, kinds).unwrap();
            let without = backward(&m, &x, &y, None, 0.0, kinds).unwrap();
            for (a, b) in with.iter().zip(&without) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    fn check_gradients(dims: Vec<usize>, act: Activation, kind: LossKind, source: LogitSource) {
        let m = Mlp::uniform(dims.clone(), act, 11).unwrap();
        let x: Vec<f64> = (0..dims[0]).map(|i| 0.3 * i as f64 - 0.4).collect();
        let out = *dims.last().unwrap();
        let y = match kind {
            LossKind::Mse => (0..out).map(|i| 0.2 * i as f64).collect::<Vec<_>>(),
            LossKind::CrossEntropy { .. } => crate::stats::one_hot(out - 1, out),
        };
        let ld = m.logit_dim(source);
        let teacher: Vec<f64> = (0..ld).map(|i| 0.5 - 0.1 * i as f64).collect();
        let obj = Objective {
            supervised: kind,
            distill: kind,
            lambda: 0.7,
            source,
        };
        let (_, analytic) = obj.evaluate(&m, &x, &y, Some(&teacher)).unwrap();
        let numeric = finite_difference(
            |w| {
                let probe = Mlp::from_weights(dims.clone(), m.activations.clone(), w.to_vec(), 0)
                    .unwrap();
                obj.value(&probe, &x, &y, Some(&teacher)).unwrap()
            },
            m.weights(),
            1e-5,
        );
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-5, "{dims:?} {act:?} {kind:?} {source:?}: {err}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for dims in [vec![3, 6, 4], vec![3, 6, 5, 4]] {
            for act in [Activation::Tanh, Activation::Relu] {
                for kind in [LossKind::Mse, LossKind::CrossEntropy { temperature: 2.0 }] {
                    for source in [LogitSource::Hidden, LogitSource::Output] {
                        check_gradients(dims.clone(), act, kind, source);
                    }
                }
            }
        }
    }

    #[test]
    fn sgd_zero_gradient_is_noop() {
        let mut m = Mlp::uniform(vec![2, 3, 1], Activation::Tanh, 5).unwrap();
        let before = m.clone();
        m.sgd_step(&vec![0.0; m.param_count()], 0.1).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn sgd_update_elementwise() {
        let mut w = [1.0];
        sgd_update(&mut w, &[0.5], 1.0);
        assert_eq!(w, [0.5]);
    }

    #[test]
    fn sgd_descends_convex_quadratic() {
        // Identity network: output is affine in the last-layer weights, so the
        // squared error is convex in those coordinates.
        let mut m = Mlp::uniform(vec![2, 3, 1], Activation::Identity, 9).unwrap();
        let obj = Objective {
            supervised: LossKind::Mse,
            ..Objective::default()
        };
        let data = [([1.0, 0.5], [2.0]), ([-0.5, 1.0], [-1.0])];
        let total = |m: &Mlp| -> f64 {
            data.iter()
                .map(|(x, y)| obj.value(m, x, y, None).unwrap())
                .sum()
        };
        let mut prev = total(&m);
        for _ in 0..100 {
            let mut g = vec![0.0; m.param_count()];
            for (x, y) in &data {
                let (_, gi) = obj.evaluate(&m, x, y, None).unwrap();
                g.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
            }
            m.sgd_step(&g, 0.01).unwrap();
            let now = total(&m);
            assert!(now <= prev + 1e-15, "loss rose from {prev} to {now}");
            prev = now;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn fedavg_basics() {
        let a = Mlp::from_weights(vec![1, 1, 1], vec![Activation::Identity], vec![0.0; 4], 0)
            .unwrap();
        let b = Mlp::from_weights(vec![1, 1, 1], vec![Activation::Identity], vec![2.0; 4], 0)
            .unwrap();
        assert_eq!(fedavg(&[a.clone(), b]).unwrap().weights(), &[1.0; 4]);
        assert_eq!(fedavg(&[a.clone(), a.clone()]).unwrap(), a);
    }

    #[test]
    fn fedavg_rejects_mixed_architectures() {
        let a = Mlp::uniform(vec![2, 3, 1], Activation::Tanh, 0).unwrap();
        let b = Mlp::uniform(vec![2, 4, 1], Activation::Tanh, 0).unwrap();
        let c = Mlp::uniform(vec![2, 3, 1], Activation::Relu, 0).unwrap();
        assert!(matches!(fedavg(&[a.clone(), b]), Err(Error::Aggregation(_))));
        assert!(matches!(fedavg(&[a, c]), Err(Error::Aggregation(_))));
        assert!(matches!(fedavg(&[]), Err(Error::Aggregation(_))));
    }

    proptest! {
        #[test]
        fn fedavg_is_coordinate_mean_and_order_free(
            ws in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 9), 1..6),
            rot in 0usize..6,
        ) {
            let models: Vec<Mlp> = ws
                .iter()
                .map(|w| Mlp::from_weights(vec![2, 2, 1], vec![Activation::Tanh], w.clone(), 0).unwrap())
                .collect();
            let avg = fedavg(&models).unwrap();
            for j in 0..9 {
                let brute: f64 = ws.iter().map(|w| w[j]).sum::<f64>() / ws.len() as f64;
                prop_assert!((avg.weights()[j] - brute).abs() < 1e-12);
            }
            let mut rotated = models.clone();
            rotated.rotate_left(rot % models.len());
            let avg2 = fedavg(&rotated).unwrap();
            for (a, b) in avg.weights().iter().zip(avg2.weights()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn forward_is_deterministic(seed in any::<u64>(), x in prop::collection::vec(-3.0f64..3.0, 4)) {
            let a = Mlp::uniform(vec![4, 6, 3], Activation::Relu, seed).unwrap();
            let b = Mlp::uniform(vec![4, 6, 3], Activation::Relu, seed).unwrap();
            prop_assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
        }
    }
}
