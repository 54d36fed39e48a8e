use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed::Rng;
use crate::{Error, Result};

pub type State = [f64; 4];

/// Classic cart-pole constants; the pole length is the half-length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub half_length: f64,
    pub force: f64,
    pub tau: f64,
    pub angle_limit: f64,
    pub position_limit: f64,
    pub max_steps: usize,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force: 10.0,
            tau: 0.02,
            angle_limit: 12f64.to_radians(),
            position_limit: 2.4,
            max_steps: 500,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub state: State,
    pub reward: f64,
    /// Pole fell or cart left the track.
    pub terminated: bool,
    /// Step cap reached without failure.
    pub truncated: bool,
}

impl Step {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CartPole {
    params: CartPoleParams,
    state: State,
    steps: usize,
    done: bool,
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Self {
        CartPole {
            params,
            state: [0.0; 4],
            steps: 0,
            done: false,
        }
    }

    /// Uniform start in ±0.05 on every coordinate.
    pub fn reset(&mut self, rng: &mut Rng) -> State {
        let s = [(); 4].map(|_| rng.random_range(-0.05..0.05));
        self.reset_to(s)
    }

    pub fn reset_to(&mut self, state: State) -> State {
        self.state = state;
        self.steps = 0;
        self.done = false;
        state
    }

    pub fn state(&self) -> State {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn params(&self) -> &CartPoleParams {
        &self.params
    }

    /// Semi-implicit Euler step; action 1 pushes right, 0 pushes left.
    pub fn step(&mut self, action: usize) -> Result<Step> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        if action > 1 {
            return Err(Error::invalid(format!("action must be 0 or 1, got {action}")));
        }
        let p = &self.params;
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if action == 1 { p.force } else { -p.force };
        let total_mass = p.cart_mass + p.pole_mass;
        let pml = p.pole_mass * p.half_length;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + pml * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (p.gravity * sin - cos * temp)
            / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total_mass));
        let x_acc = temp - pml * theta_acc * cos / total_mass;

        let x_dot = x_dot + p.tau * x_acc;
        let x = x + p.tau * x_dot;
        let theta_dot = theta_dot + p.tau * theta_acc;
        let theta = theta + p.tau * theta_dot;
        self.state = [x, x_dot, theta, theta_dot];
        self.steps += 1;

        let terminated = x.abs() > p.position_limit || theta.abs() > p.angle_limit;
        let truncated = !terminated && self.steps >= p.max_steps;
        self.done = terminated || truncated;
        Ok(Step {
            state: self.state,
            reward: 1.0,
            terminated,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn alternating_forces_keep_pole_up() {
        let mut env = CartPole::new(CartPoleParams::default());
        env.reset_to([0.0; 4]);
        let mut survived = 0;
        for t in 0..200 {
            let s = env.step(t % 2).unwrap();
            survived += 1;
            if s.done() {
                break;
            }
        }
        assert!(survived > 10);
    }

    #[test]
    fn tilted_pole_terminates() {
        let mut env = CartPole::new(CartPoleParams::default());
        env.reset_to([0.0, 0.0, 12.5f64.to_radians(), 0.0]);
        let s = env.step(0).unwrap();
        assert!(s.terminated);
        assert!(matches!(env.step(0), Err(Error::EpisodeDone)));
    }

    #[test]
    fn step_cap_truncates() {
        let params = CartPoleParams { max_steps: 3, ..Default::default() };
        let mut env = CartPole::new(params);
        env.reset_to([0.0; 4]);
        let last = (0..3).map(|t| env.step(t % 2).unwrap()).last().unwrap();
        assert!(last.truncated && !last.terminated);
    }

    #[test]
    fn single_step_matches_hand_integration() {
        let mut env = CartPole::new(CartPoleParams::default());
        env.reset_to([0.0; 4]);
        let s = env.step(1).unwrap().state;
        // From rest: temp = 10/1.1, θ̈ = −temp/(0.5·(4/3 − 0.1/1.1)), ẍ = temp − 0.05·θ̈/1.1.
        let temp = 10.0 / 1.1;
        let theta_acc = -temp / (0.5 * (4.0 / 3.0 - 0.1 / 1.1));
        let x_acc = temp - 0.05 * theta_acc / 1.1;
        let expect = [0.02 * 0.02 * x_acc, 0.02 * x_acc, 0.02 * 0.02 * theta_acc, 0.02 * theta_acc];
        for (a, b) in s.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = || {
            let mut env = CartPole::new(CartPoleParams::default());
            let mut rng = seed::from_seed(7);
            let mut states = vec![env.reset(&mut rng)];
            for t in 0..20 {
                let s = env.step((t * 7 % 3) % 2).unwrap();
                states.push(s.state);
                if s.done() {
                    break;
                }
            }
            states
        };
        assert_eq!(run(), run());
    }
}
