//! Desk-scale environments: a deterministic 2-D point-mass task for training
//! experiments, scripted data-collection controllers, and randomized finite
//! MDPs for exact verification of the tabular theory.
//!
//! Point-mass dynamics (all components clipped to [-1, 1] per dimension):
//!
//! ```text
//! v' = clip(0.95 v + 0.1 a)        p' = clip(p + 0.1 v')
//! r  = -|p' - g|_2 - 0.01 |a|_2^2  with goal g = (0.8, 0.8)
//! ```
//!
//! Episodes run exactly `HORIZON = 100` steps; there is no early termination,
//! so the `done` flag marks the time limit rather than an absorbing state.

use ndarray::{Array1, Array2, Array3};
use thiserror::Error;

use crate::rng::Stream;

pub const HORIZON: u32 = 100;
pub const GOAL: [f64; 2] = [0.8, 0.8];
pub const STATE_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action component {value} outside [-1, 1]")]
    ActionOutOfBounds { value: f64 },
    #[error("{what} = {value} outside its allowed range {range}")]
    ParameterOutOfRange {
        what: &'static str,
        value: f64,
        range: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMassState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub t: u32,
}

impl PointMassState {
    /// Observation vector [px, py, vx, vy] fed to networks.
    pub fn observation(&self) -> Array1<f64> {
        Array1::from(vec![
            self.position[0],
            self.position[1],
            self.velocity[0],
            self.velocity[1],
        ])
    }
}

fn clip1(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

/// Start of an episode: position uniform in [-1,1]^2, velocity zero.
pub fn pointmass_reset(stream: &mut Stream) -> PointMassState {
    let px = stream.uniform_in(-1.0, 1.0);
    let py = stream.uniform_in(-1.0, 1.0);
    PointMassState {
        position: [px, py],
        velocity: [0.0, 0.0],
        t: 0,
    }
}

/// One deterministic step. `done` is true exactly when the new step index
/// reaches the horizon.
pub fn pointmass_step(
    state: &PointMassState,
    action: [f64; 2],
) -> Result<(PointMassState, f64, bool), EnvError> {
    for &a in &action {
        if !(-1.0..=1.0).contains(&a) {
            return Err(EnvError::ActionOutOfBounds { value: a });
        }
    }
    let mut velocity = [0.0; 2];
    let mut position = [0.0; 2];
    for d in 0..2 {
        velocity[d] = clip1(0.95 * state.velocity[d] + 0.1 * action[d]);
        position[d] = clip1(state.position[d] + 0.1 * velocity[d]);
    }
    let dist = ((position[0] - GOAL[0]).powi(2) + (position[1] - GOAL[1]).powi(2)).sqrt();
    let action_cost = 0.01 * (action[0] * action[0] + action[1] * action[1]);
    let reward = -dist - action_cost;
    let t = state.t + 1;
    let done = t == HORIZON;
    Ok((PointMassState { position, velocity, t }, reward, done))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BehaviorKind {
    Expert,
    Medium,
    Random,
}

/// Data-collection policy: a proportional expert, a noisy "medium" variant,
/// or uniform random actions.
#[derive(Debug, Clone, Copy)]
pub struct BehaviorSpec {
    pub kind: BehaviorKind,
    pub noise_sigma: f64,
    pub random_action_prob: f64,
}

impl BehaviorSpec {
    pub fn expert() -> Self {
        BehaviorSpec { kind: BehaviorKind::Expert, noise_sigma: 0.0, random_action_prob: 0.0 }
    }

    pub fn medium() -> Self {
        BehaviorSpec { kind: BehaviorKind::Medium, noise_sigma: 0.3, random_action_prob: 0.2 }
    }

    pub fn random() -> Self {
        BehaviorSpec { kind: BehaviorKind::Random, noise_sigma: 0.0, random_action_prob: 1.0 }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(0.0..=1.0).contains(&self.random_action_prob) {
            return Err(EnvError::ParameterOutOfRange {
                what: "random_action_prob",
                value: self.random_action_prob,
                range: "[0, 1]",
            });
        }
        if self.noise_sigma < 0.0 {
            return Err(EnvError::ParameterOutOfRange {
                what: "noise_sigma",
                value: self.noise_sigma,
                range: "[0, inf)",
            });
        }
        Ok(())
    }
}

/// Action of the scripted controller.
///
/// Expert: `clip(3 (g - p) - v)`, a damped proportional pull toward the goal.
/// Medium: expert plus `N(0, noise_sigma^2)` per dimension (two draws), then
/// with probability `random_action_prob` (one uniform draw) the whole action
/// is replaced by a uniform one (two more draws). Random: uniform in
/// [-1,1]^2. Draw order is fixed so trajectories are reproducible.
pub fn scripted_controller(
    spec: &BehaviorSpec,
    state: &PointMassState,
    stream: &mut Stream,
) -> [f64; 2] {
    let expert = |s: &PointMassState| {
        [
            clip1(3.0 * (GOAL[0] - s.position[0]) - s.velocity[0]),
            clip1(3.0 * (GOAL[1] - s.position[1]) - s.velocity[1]),
        ]
    };
    match spec.kind {
        BehaviorKind::Expert => expert(state),
        BehaviorKind::Medium => {
            let base = expert(state);
            let mut a = [
                base[0] + spec.noise_sigma * stream.normal(),
                base[1] + spec.noise_sigma * stream.normal(),
            ];
            if stream.uniform() < spec.random_action_prob {
                a = [stream.uniform_in(-1.0, 1.0), stream.uniform_in(-1.0, 1.0)];
            }
            [clip1(a[0]), clip1(a[1])]
        }
        BehaviorKind::Random => [
            stream.uniform_in(-1.0, 1.0),
            stream.uniform_in(-1.0, 1.0),
        ],
    }
}

/// Tabular MDP (S, A, P, r, gamma, rho0) with rewards in [0, 1].
#[derive(Debug, Clone)]
pub struct FiniteMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// P[s, a, s']: probability of landing in s' after action a in state s.
    pub p: Array3<f64>,
    /// r[s, a] in [0, 1].
    pub r: Array2<f64>,
    pub gamma: f64,
    pub rho0: Array1<f64>,
}

impl FiniteMdp {
    /// Check the stochasticity invariants to 1e-12.
    pub fn validate(&self) -> Result<(), EnvError> {
        let tol = 1e-12;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.p.slice(ndarray::s![s, a, ..]);
                if row.iter().any(|&x| x < 0.0) {
                    return Err(EnvError::ParameterOutOfRange {
                        what: "transition probability",
                        value: *row.iter().find(|&&x| x < 0.0).unwrap(),
                        range: "[0, 1]",
                    });
                }
                let total: f64 = row.sum();
                if (total - 1.0).abs() > tol {
                    return Err(EnvError::ParameterOutOfRange {
                        what: "transition row sum",
                        value: total,
                        range: "1 +- 1e-12",
                    });
                }
            }
        }
        let rho_sum: f64 = self.rho0.sum();
        if (rho_sum - 1.0).abs() > tol || self.rho0.iter().any(|&x| x < 0.0) {
            return Err(EnvError::ParameterOutOfRange {
                what: "rho0 sum",
                value: rho_sum,
                range: "1 +- 1e-12",
            });
        }
        if !(0.0 < self.gamma && self.gamma < 1.0) {
            return Err(EnvError::ParameterOutOfRange {
                what: "gamma",
                value: self.gamma,
                range: "(0, 1)",
            });
        }
        Ok(())
    }
}

/// Stream id for MDP instance generation (kept distinct from the training
/// stream ids in `rng::streams`).
const MDP_STREAM: u64 = 6;

/// Randomized instance: Dirichlet(1,..,1) transition rows and initial
/// distribution, uniform rewards. Draw order: all P rows (state-major,
/// action-minor), then all rewards (state-major), then rho0.
pub fn random_finite_mdp(
    seed: u64,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
) -> Result<FiniteMdp, EnvError> {
    if !(2..=12).contains(&n_states) {
        return Err(EnvError::ParameterOutOfRange {
            what: "n_states",
            value: n_states as f64,
            range: "[2, 12]",
        });
    }
    if !(2..=6).contains(&n_actions) {
        return Err(EnvError::ParameterOutOfRange {
            what: "n_actions",
            value: n_actions as f64,
            range: "[2, 6]",
        });
    }
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(EnvError::ParameterOutOfRange {
            what: "gamma",
            value: gamma,
            range: "(0, 1)",
        });
    }
    let mut stream = Stream::derive(seed, MDP_STREAM);
    let mut p = Array3::zeros((n_states, n_actions, n_states));
    for s in 0..n_states {
        for a in 0..n_actions {
            let row = stream.dirichlet_flat(n_states);
            for (sp, &v) in row.iter().enumerate() {
                p[[s, a, sp]] = v;
            }
        }
    }
    let r = Array2::from_shape_fn((n_states, n_actions), |_| stream.uniform());
    let rho0 = Array1::from(stream.dirichlet_flat(n_states));
    let mdp = FiniteMdp { n_states, n_actions, p, r, gamma, rho0 };
    mdp.validate().expect("generated MDP satisfies its invariants");
    Ok(mdp)
}
