//! Pixel-rendered continuous-control domains with differing state, action
//! and reward spaces, plus the padded action space shared across domains.

mod padding;
mod render;

pub use padding::{pad_action_space, PaddedActionSpace};
pub use render::{Frame, FRAME_SIDE};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::RngStream;
use render::Canvas;

const GRAVITY: f64 = 9.8;
const POINT_GOAL_1D: f64 = 0.8;
const POINT_GOAL_2D: (f64, f64) = (0.5, 0.5);
const REACHER_LINKS: (f64, f64) = (0.5, 0.4);
const REACHER_TARGET: (f64, f64) = (0.3, 0.55);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    #[serde(rename = "point_mass_1d")]
    PointMass1d,
    #[serde(rename = "point_mass_2d")]
    PointMass2d,
    Reacher2,
    PendulumSwingup,
    DoublePendulumSwingup,
}

impl Domain {
    pub const ALL: [Domain; 5] = [
        Domain::PointMass1d,
        Domain::PointMass2d,
        Domain::Reacher2,
        Domain::PendulumSwingup,
        Domain::DoublePendulumSwingup,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Domain::PointMass1d => "point_mass_1d",
            Domain::PointMass2d => "point_mass_2d",
            Domain::Reacher2 => "reacher2",
            Domain::PendulumSwingup => "pendulum_swingup",
            Domain::DoublePendulumSwingup => "double_pendulum_swingup",
        }
    }

    pub fn action_dim(self) -> usize {
        match self {
            Domain::PointMass1d | Domain::PendulumSwingup | Domain::DoublePendulumSwingup => 1,
            Domain::PointMass2d | Domain::Reacher2 => 2,
        }
    }

    /// Closed reward interval.
    pub fn reward_range(self) -> (f64, f64) {
        match self {
            Domain::PointMass1d => (-(1.0 + POINT_GOAL_1D), 0.0),
            Domain::PointMass2d => (-(1.0 + POINT_GOAL_2D.0).hypot(1.0 + POINT_GOAL_2D.1), 0.0),
            Domain::Reacher2 => (
                -(REACHER_LINKS.0 + REACHER_LINKS.1 + REACHER_TARGET.0.hypot(REACHER_TARGET.1)),
                0.0,
            ),
            Domain::PendulumSwingup => (-1.0, 1.0),
            Domain::DoublePendulumSwingup => (-2.0, 2.0),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Domain::ALL
            .into_iter()
            .find(|d| d.id() == s)
            .ok_or_else(|| Error::config(format!("unknown domain {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub episode_length: usize,
    pub dt: f64,
    /// Integration substeps per control step.
    pub substeps: usize,
    /// Joint damping of the pendula.
    pub damping: f64,
    /// Half-width of the uniform perturbation applied on reset.
    pub reset_noise: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            episode_length: 200,
            dt: 0.05,
            substeps: 10,
            damping: 0.1,
            reset_noise: 0.05,
        }
    }
}

/// Static description of an environment instance.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub domain_id: String,
    pub action_dim: usize,
    pub episode_length: usize,
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub frame: Frame,
    pub done: bool,
}

/// One environment. State layout per domain:
///
/// - point masses: `[x, y, vx, vy]` (1-D uses `x, vx` in slots 0 and 2)
/// - reacher: `[q1, q2, w1, w2]`, joint angles
/// - pendulum: `[Θ, ω, ·, ·]` with Θ = 0 upright
/// - double pendulum: `[θ1, θ2, ω1, ω2]`, absolute link angles from upright
#[derive(Clone, Debug)]
pub struct Env {
    domain: Domain,
    config: EnvConfig,
    state: [f64; 4],
    t: usize,
}

impl Env {
    pub fn new(domain: Domain) -> Self {
        Env::with_config(domain, EnvConfig::default())
    }

    pub fn with_config(domain: Domain, config: EnvConfig) -> Self {
        Env {
            domain,
            config,
            state: default_state(domain),
            t: 0,
        }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn spec(&self) -> EnvSpec {
        EnvSpec {
            domain_id: self.domain.id().to_string(),
            action_dim: self.domain.action_dim(),
            episode_length: self.config.episode_length,
            dt: self.config.dt,
        }
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
    }

    pub fn elapsed(&self) -> usize {
        self.t
    }

    /// Starts a new episode from the default state, perturbed when `rng` is
    /// given. Returns the first frame.
    pub fn reset(&mut self, rng: Option<&mut RngStream>) -> Frame {
        self.state = default_state(self.domain);
        if let Some(rng) = rng {
            let n = self.config.reset_noise;
            match self.domain {
                Domain::PointMass1d => self.state[0] = rng.uniform(-1.0, 0.2),
                Domain::PointMass2d => {
                    self.state[0] = rng.uniform(-1.0, 0.2);
                    self.state[1] = rng.uniform(-1.0, 0.2);
                }
                _ => {
                    for s in &mut self.state {
                        *s += rng.uniform(-n, n);
                    }
                }
            }
        }
        self.t = 0;
        self.render()
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let dim = self.domain.action_dim();
        if action.len() != dim {
            return Err(Error::Input(format!(
                "{} takes {dim} action values, got {}",
                self.domain,
                action.len()
            )));
        }
        if let Some(a) = action.iter().find(|a| !(-1.0..=1.0).contains(*a)) {
            return Err(Error::Input(format!("action value {a} outside [-1, 1]")));
        }
        if self.t >= self.config.episode_length {
            return Err(Error::Input("episode already finished".into()));
        }
        let h = self.config.dt / self.config.substeps as f64;
        for _ in 0..self.config.substeps {
            self.integrate(action, h);
        }
        self.t += 1;
        Ok(StepResult {
            reward: self.reward(),
            frame: self.render(),
            done: self.t == self.config.episode_length,
        })
    }

    /// Semi-implicit Euler: velocities first, then positions from the new
    /// velocities.
    fn integrate(&mut self, a: &[f64], h: f64) {
        let s = &mut self.state;
        match self.domain {
            Domain::PointMass1d => {
                s[2] += h * (3.0 * a[0] - 0.5 * s[2]);
                s[0] += h * s[2];
                clamp_wall(s, 0);
            }
            Domain::PointMass2d => {
                for k in 0..2 {
                    s[2 + k] += h * (3.0 * a[k] - 0.5 * s[2 + k]);
                    s[k] += h * s[2 + k];
                    clamp_wall(s, k);
                }
            }
            Domain::Reacher2 => {
                for k in 0..2 {
                    s[2 + k] += h * (5.0 * a[k] - 1.0 * s[2 + k]);
                    s[k] += h * s[2 + k];
                }
            }
            Domain::PendulumSwingup => {
                let acc = pendulum_accel(s[0], s[1], a[0], self.config.damping);
                s[1] += h * acc;
                s[0] += h * s[1];
            }
            Domain::DoublePendulumSwingup => {
                let (a1, a2) = double_pendulum_accel(s, 5.0 * a[0], self.config.damping);
                s[2] += h * a1;
                s[3] += h * a2;
                s[0] += h * s[2];
                s[1] += h * s[3];
            }
        }
    }

    pub fn reward(&self) -> f64 {
        let s = &self.state;
        match self.domain {
            Domain::PointMass1d => -(s[0] - POINT_GOAL_1D).abs(),
            Domain::PointMass2d => -(s[0] - POINT_GOAL_2D.0).hypot(s[1] - POINT_GOAL_2D.1),
            Domain::Reacher2 => {
                let (_, tip) = reacher_points(s[0], s[1]);
                -(tip.0 - REACHER_TARGET.0).hypot(tip.1 - REACHER_TARGET.1)
            }
            Domain::PendulumSwingup => s[0].cos(),
            Domain::DoublePendulumSwingup => {
                let (theta, gamma) = double_pendulum_joints(s);
                theta.cos() + gamma.cos()
            }
        }
    }

    /// Total mechanical energy of the pendula (unit masses and lengths,
    /// height measured from the pivot).
    pub fn pendulum_energy(&self) -> Option<f64> {
        let s = &self.state;
        match self.domain {
            Domain::PendulumSwingup => Some(0.5 * s[1] * s[1] + GRAVITY * s[0].cos()),
            Domain::DoublePendulumSwingup => {
                let (t1, t2, w1, w2) = (s[0], s[1], s[2], s[3]);
                let kinetic = w1 * w1 + 0.5 * w2 * w2 + w1 * w2 * (t1 - t2).cos();
                let potential = GRAVITY * (2.0 * t1.cos() + t2.cos());
                Some(kinetic + potential)
            }
            _ => None,
        }
    }

    pub fn render(&self) -> Frame {
        let s = &self.state;
        let mut c = Canvas::new();
        match self.domain {
            Domain::PointMass1d => {
                c.segment((-1.0, 0.0), (1.0, 0.0), 0.3, 0.05);
                c.dot((POINT_GOAL_1D, -0.25), 0.5, 0.08);
                c.dot((s[0], 0.0), 1.0, 0.12);
            }
            Domain::PointMass2d => {
                let g = POINT_GOAL_2D;
                c.segment((g.0 - 0.15, g.1), (g.0 + 0.15, g.1), 0.5, 0.04);
                c.segment((g.0, g.1 - 0.15), (g.0, g.1 + 0.15), 0.5, 0.04);
                c.dot((s[0], s[1]), 1.0, 0.12);
            }
            Domain::Reacher2 => {
                let (elbow, tip) = reacher_points(s[0], s[1]);
                c.dot(REACHER_TARGET, 0.6, 0.06);
                c.segment((0.0, 0.0), elbow, 1.0, 0.05);
                c.segment(elbow, tip, 0.8, 0.05);
            }
            Domain::PendulumSwingup => {
                let tip = (0.9 * s[0].sin(), 0.9 * s[0].cos());
                c.segment((0.0, 0.0), tip, 1.0, 0.08);
            }
            Domain::DoublePendulumSwingup => {
                let elbow = (0.5 * s[0].sin(), 0.5 * s[0].cos());
                let tip = (elbow.0 + 0.5 * s[1].sin(), elbow.1 + 0.5 * s[1].cos());
                c.segment((0.0, 0.0), elbow, 1.0, 0.12);
                c.segment(elbow, tip, 0.8, 0.12);
            }
        }
        c.finish()
    }
}

fn default_state(domain: Domain) -> [f64; 4] {
    match domain {
        Domain::PointMass1d | Domain::PointMass2d => [-0.5, -0.5, 0.0, 0.0],
        Domain::Reacher2 => [0.0, 0.0, 0.0, 0.0],
        Domain::PendulumSwingup => [PI, 0.0, 0.0, 0.0],
        Domain::DoublePendulumSwingup => [PI, PI, 0.0, 0.0],
    }
}

/// Stops coordinate `k` at the walls of `[−1, 1]`.
fn clamp_wall(s: &mut [f64; 4], k: usize) {
    if s[k].abs() > 1.0 {
        s[k] = s[k].clamp(-1.0, 1.0);
        s[k + 2] = 0.0;
    }
}

/// `Θ̈ = (g/l)·sin Θ + 3a/(m l²) − c·ω` with Θ measured from upright.
pub(crate) fn pendulum_accel(theta: f64, omega: f64, a: f64, damping: f64) -> f64 {
    GRAVITY * theta.sin() + 3.0 * a - damping * omega
}

/// Angular accelerations of a two-link pendulum with unit masses and
/// lengths, absolute angles from upright, torque `tau` at the first joint.
fn double_pendulum_accel(s: &[f64; 4], tau: f64, damping: f64) -> (f64, f64) {
    let (t1, t2, w1, w2) = (s[0], s[1], s[2], s[3]);
    let c = (t1 - t2).cos();
    let sn = (t1 - t2).sin();
    // Mass matrix [[2, c], [c, 1]].
    let f1 = -sn * w2 * w2 + 2.0 * GRAVITY * t1.sin() + tau - damping * w1 + damping * (w2 - w1);
    let f2 = sn * w1 * w1 + GRAVITY * t2.sin() - damping * (w2 - w1);
    let det = 2.0 - c * c;
    ((f1 - c * f2) / det, (2.0 * f2 - c * f1) / det)
}

/// Θ of the first joint from upright and Γ of the second joint relative
/// to the first link, both wrapped to (−π, π].
pub(crate) fn double_pendulum_joints(s: &[f64; 4]) -> (f64, f64) {
    (wrap(s[0]), wrap(s[1] - s[0]))
}

fn wrap(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

fn reacher_points(q1: f64, q2: f64) -> ((f64, f64), (f64, f64)) {
    let (l1, l2) = REACHER_LINKS;
    let elbow = (l1 * q1.cos(), l1 * q1.sin());
    let tip = (
        elbow.0 + l2 * (q1 + q2).cos(),
        elbow.1 + l2 * (q1 + q2).sin(),
    );
    (elbow, tip)
}

/// Adapts padded actions to one domain, ignoring the unused coordinates.
#[derive(Clone, Debug)]
pub struct PaddedEnv {
    pub env: Env,
    pub space: PaddedActionSpace,
}

impl PaddedEnv {
    pub fn new(env: Env, space: PaddedActionSpace) -> Result<Self> {
        if !space.masks.contains_key(&env.domain()) {
            return Err(Error::config(format!(
                "{} is not part of the padded action space",
                env.domain()
            )));
        }
        Ok(PaddedEnv { env, space })
    }

    pub fn step(&mut self, padded: &[f64]) -> Result<StepResult> {
        let action = self.space.unpad(self.env.domain(), padded)?;
        self.env.step(&action)
    }
}
