use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::cartpole::State;
use crate::nn::{softmax, Activation, Mlp};
use crate::seed::Rng;
use crate::{Error, Result};

pub const ACTIONS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A2cAgent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub discount: f64,
}

/// Layer widths of an actor with the given hidden layers.
pub fn actor_dims(hidden: &[usize]) -> Vec<usize> {
    let mut dims = vec![4];
    dims.extend_from_slice(hidden);
    dims.push(ACTIONS);
    dims
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: State,
    pub action: usize,
    pub reward: f64,
    pub next_state: State,
    /// True only for failure; a step-cap cut still bootstraps.
    pub terminal: bool,
}

impl A2cAgent {
    /// Tanh networks with the given hidden widths.
    pub fn new(actor_hidden: &[usize], critic_hidden: &[usize], discount: f64, seed: u64) -> Result<Self> {
        let actor = Mlp::uniform(actor_dims(actor_hidden), Activation::Tanh, seed)?;
        let mut critic_dims = vec![4];
        critic_dims.extend_from_slice(critic_hidden);
        critic_dims.push(1);
        let critic = Mlp::uniform(critic_dims, Activation::Tanh, seed.wrapping_add(0x9e37_79b9))?;
        Self::from_parts(actor, critic, discount)
    }

    pub fn from_parts(actor: Mlp, critic: Mlp, discount: f64) -> Result<Self> {
        if actor.input_dim() != 4 || actor.output_dim() != ACTIONS {
            return Err(Error::invalid("actor must map 4 state features to 2 action logits"));
        }
        if critic.input_dim() != 4 || critic.output_dim() != 1 {
            return Err(Error::invalid("critic must map 4 state features to one value"));
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(Error::invalid(format!("discount must lie in (0, 1], got {discount}")));
        }
        Ok(A2cAgent { actor, critic, discount })
    }

    pub fn policy(&self, state: &State) -> Result<Vec<f64>> {
        Ok(softmax(&self.actor.predict(state)?, 1.0))
    }

    pub fn value(&self, state: &State) -> Result<f64> {
        Ok(self.critic.predict(state)?[0])
    }

    /// Samples an action and returns it with the policy it was drawn from.
    pub fn act(&self, state: &State, rng: &mut Rng) -> Result<(usize, Vec<f64>)> {
        let policy = self.policy(state)?;
        let u: f64 = rng.random();
        let action = if u < policy[0] { 0 } else { 1 };
        Ok((action, policy))
    }

    fn bootstrap_target(&self, t: &Transition) -> Result<f64> {
        let next = if t.terminal {
            0.0
        } else {
            self.value(&t.next_state)?
        };
        Ok(t.reward + self.discount * next)
    }
}

/// `r + γ·V(s')·(1 − done) − V(s)`.
pub fn advantage(agent: &A2cAgent, s: &State, r: f64, s_next: &State, done: bool) -> Result<f64> {
    let next = if done { 0.0 } else { agent.value(s_next)? };
    Ok(r + agent.discount * next - agent.value(s)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct A2cGradients {
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
}

/// Mean over the trajectory of `−A·log π(a|s)` (actor, A held fixed) and
/// `(V(s) − target)²` (critic, target held fixed).
pub fn a2c_gradients(agent: &A2cAgent, trajectory: &[Transition]) -> Result<A2cGradients> {
    if trajectory.is_empty() {
        return Err(Error::invalid("empty trajectory"));
    }
    let mut actor = vec![0.0; agent.actor.param_count()];
    let mut critic = vec![0.0; agent.critic.param_count()];
    let n = trajectory.len() as f64;
    for t in trajectory {
        if t.action >= ACTIONS {
            return Err(Error::invalid(format!("action {} out of range", t.action)));
        }
        let target = agent.bootstrap_target(t)?;
        let v = agent.value(&t.state)?;
        let adv = target - v;
        if adv != 0.0 {
            let mut d_logits = agent.policy(&t.state)?;
            d_logits[t.action] -= 1.0;
            d_logits.iter_mut().for_each(|g| *g *= adv / n);
            let g = agent.actor.gradient_from_output(&t.state, &d_logits, None)?;
            actor.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let g = agent
            .critic
            .gradient_from_output(&t.state, &[2.0 * (v - target) / n], None)?;
        critic.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok(A2cGradients { actor, critic })
}

pub fn a2c_update(
    agent: &mut A2cAgent,
    trajectory: &[Transition],
    actor_eta: f64,
    critic_eta: f64,
) -> Result<()> {
    let g = a2c_gradients(agent, trajectory)?;
    agent.actor.sgd_step(&g.actor, actor_eta)?;
    agent.critic.sgd_step(&g.critic, critic_eta)?;
    Ok(())
}
