//! Tabular robust Markov game model and the R-contamination robust backup.
//!
//! Steps are zero-based in code (`h = 0..H`); the value at step `H` is the
//! terminal zero vector. Joint actions are flat indices in a mixed-radix
//! encoding with agent 0 as the most significant digit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Purpose, RandomStream, StreamKey};

/// Largest joint-action space the dense storage accepts.
pub const MAX_JOINT_ACTIONS: usize = 1_000_000;

/// Tolerance for kernel rows summing to one.
pub const ROW_TOLERANCE: f64 = 1e-12;

/// Mixed-radix encoding of joint actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointActionSpace {
    counts: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl JointActionSpace {
    pub fn new(counts: &[usize]) -> Result<Self> {
        if counts.contains(&0) {
            return Err(Error::Dimension(
                "every agent needs at least one action".into(),
            ));
        }
        let size: u128 = counts.iter().map(|&a| a as u128).product();
        if size > MAX_JOINT_ACTIONS as u128 {
            return Err(Error::TooManyJointActions(size));
        }
        let mut strides = vec![1; counts.len()];
        for i in (0..counts.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * counts[i + 1];
        }
        Ok(Self {
            counts: counts.to_vec(),
            strides,
            size: size as usize,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn num_agents(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn encode(&self, actions: &[usize]) -> usize {
        debug_assert_eq!(actions.len(), self.counts.len());
        actions
            .iter()
            .zip(&self.strides)
            .map(|(&a, &stride)| a * stride)
            .sum()
    }

    pub fn decode(&self, joint: usize) -> Vec<usize> {
        self.counts
            .iter()
            .zip(&self.strides)
            .map(|(&count, &stride)| (joint / stride) % count)
            .collect()
    }

    #[inline]
    pub fn action_of(&self, joint: usize, agent: usize) -> usize {
        (joint / self.strides[agent]) % self.counts[agent]
    }

    /// Space of the joint sub-actions of every agent except `agent`, in the
    /// original agent order.
    pub fn excluding(&self, agent: usize) -> JointActionSpace {
        let counts: Vec<usize> = self
            .counts
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != agent)
            .map(|(_, &c)| c)
            .collect();
        // A sub-space of a valid space is always valid.
        JointActionSpace::new(&counts).expect("sub-space of a valid joint action space")
    }

    /// Index of the others' sub-action inside `excluding(agent)`.
    pub fn rest_index(&self, joint: usize, agent: usize) -> usize {
        let high = joint / (self.strides[agent] * self.counts[agent]);
        let low = joint % self.strides[agent];
        high * self.strides[agent] + low
    }

    /// Inverse of (`action_of`, `rest_index`).
    pub fn join(&self, agent: usize, action: usize, rest: usize) -> usize {
        let stride = self.strides[agent];
        let high = rest / stride;
        let low = rest % stride;
        high * stride * self.counts[agent] + action * stride + low
    }
}

/// Plain serialized form of a game. Field layout matches the JSON file
/// format: `kernel[h][s][j][s']`, `rewards[i][h][s][j]`, all zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameDocument {
    pub num_agents: usize,
    pub num_states: usize,
    pub action_counts: Vec<usize>,
    pub horizon: usize,
    pub uncertainty_level: f64,
    pub kernel: Vec<Vec<Vec<Vec<f64>>>>,
    pub rewards: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Finite-horizon multi-player game with a nominal kernel, deterministic
/// rewards in [0,1] and an R-contamination uncertainty level.
///
/// Immutable once built; construction validates every invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GameDocument", into = "GameDocument")]
pub struct RobustMarkovGame {
    space: JointActionSpace,
    num_states: usize,
    horizon: usize,
    uncertainty: f64,
    kernel: Vec<f64>,
    rewards: Vec<f64>,
}

impl RobustMarkovGame {
    /// Build from flat storage (`kernel` indexed `[h][s][j][s']`, `rewards`
    /// indexed `[i][h][s][j]`).
    pub fn from_flat(
        action_counts: &[usize],
        num_states: usize,
        horizon: usize,
        uncertainty: f64,
        kernel: Vec<f64>,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        if action_counts.is_empty() {
            return Err(Error::Dimension("a game needs at least one agent".into()));
        }
        if num_states == 0 || horizon == 0 {
            return Err(Error::Dimension(
                "num_states and horizon must be at least 1".into(),
            ));
        }
        let space = JointActionSpace::new(action_counts)?;
        let game = Self {
            space,
            num_states,
            horizon,
            uncertainty,
            kernel,
            rewards,
        };
        game.validate()?;
        Ok(game)
    }

    /// Check every model invariant.
    pub fn validate(&self) -> Result<()> {
        let (m, s_n, h_n, j_n) = (
            self.num_agents(),
            self.num_states,
            self.horizon,
            self.space.size(),
        );
        if self.kernel.len() != h_n * s_n * j_n * s_n {
            return Err(Error::Dimension(format!(
                "kernel has {} entries, expected H*S*J*S = {}",
                self.kernel.len(),
                h_n * s_n * j_n * s_n
            )));
        }
        if self.rewards.len() != m * h_n * s_n * j_n {
            return Err(Error::Dimension(format!(
                "rewards have {} entries, expected m*H*S*J = {}",
                self.rewards.len(),
                m * h_n * s_n * j_n
            )));
        }
        if !(0.0..1.0).contains(&self.uncertainty) {
            return Err(Error::UncertaintyLevel(self.uncertainty));
        }
        for h in 0..h_n {
            for s in 0..s_n {
                for j in 0..j_n {
                    let row = self.kernel_row(h, s, j);
                    for (next, &p) in row.iter().enumerate() {
                        if !p.is_finite() || p < 0.0 {
                            return Err(Error::BadProbability {
                                h,
                                s,
                                j,
                                next,
                                value: p,
                            });
                        }
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > ROW_TOLERANCE {
                        return Err(Error::NonStochasticRow { h, s, j, sum });
                    }
                }
            }
        }
        for i in 0..m {
            for h in 0..h_n {
                for s in 0..s_n {
                    for j in 0..j_n {
                        let value = self.reward(i, h, s, j);
                        if !(0.0..=1.0).contains(&value) {
                            return Err(Error::RewardOutOfRange { i, h, s, j, value });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn num_agents(&self) -> usize {
        self.space.num_agents()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn action_counts(&self) -> &[usize] {
        self.space.counts()
    }

    pub fn total_actions(&self) -> usize {
        self.space.counts().iter().sum()
    }

    pub fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    pub fn joint_actions(&self) -> &JointActionSpace {
        &self.space
    }

    /// Same game with another uncertainty level.
    pub fn with_uncertainty(&self, uncertainty: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&uncertainty) {
            return Err(Error::UncertaintyLevel(uncertainty));
        }
        Ok(Self {
            uncertainty,
            ..self.clone()
        })
    }

    #[inline]
    pub fn kernel_row(&self, h: usize, s: usize, j: usize) -> &[f64] {
        let n = self.num_states;
        let start = ((h * n + s) * self.space.size() + j) * n;
        &self.kernel[start..start + n]
    }

    #[inline]
    pub fn reward(&self, i: usize, h: usize, s: usize, j: usize) -> f64 {
        let jn = self.space.size();
        self.rewards[((i * self.horizon + h) * self.num_states + s) * jn + j]
    }

    /// min{H, 1/R}, with 1/0 read as +infinity.
    pub fn effective_horizon(&self) -> f64 {
        effective_horizon(self.horizon, self.uncertainty)
    }

    /// True when the game is two-player and `r_1 + r_2 = 1` everywhere,
    /// the [0,1] encoding of a zero-sum game.
    pub fn is_zero_sum(&self) -> bool {
        if self.num_agents() != 2 {
            return false;
        }
        let block = self.horizon * self.num_states * self.space.size();
        self.rewards[..block]
            .iter()
            .zip(&self.rewards[block..])
            .all(|(a, b)| (a + b - 1.0).abs() <= 1e-12)
    }

    pub fn to_document(&self) -> GameDocument {
        let (m, n, hn, jn) = (
            self.num_agents(),
            self.num_states,
            self.horizon,
            self.space.size(),
        );
        let kernel = (0..hn)
            .map(|h| {
                (0..n)
                    .map(|s| (0..jn).map(|j| self.kernel_row(h, s, j).to_vec()).collect())
                    .collect()
            })
            .collect();
        let rewards = (0..m)
            .map(|i| {
                (0..hn)
                    .map(|h| {
                        (0..n)
                            .map(|s| (0..jn).map(|j| self.reward(i, h, s, j)).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        GameDocument {
            num_agents: m,
            num_states: n,
            action_counts: self.space.counts().to_vec(),
            horizon: hn,
            uncertainty_level: self.uncertainty,
            kernel,
            rewards,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// One generative-model draw of the next state.
    pub fn sample_next_state(
        &self,
        stream: &mut RandomStream,
        h: usize,
        s: usize,
        joint: usize,
    ) -> usize {
        stream.categorical(self.kernel_row(h, s, joint))
    }
}

impl TryFrom<GameDocument> for RobustMarkovGame {
    type Error = Error;

    fn try_from(doc: GameDocument) -> Result<Self> {
        if doc.action_counts.len() != doc.num_agents {
            return Err(Error::Dimension(format!(
                "num_agents = {} but action_counts has {} entries",
                doc.num_agents,
                doc.action_counts.len()
            )));
        }
        let space = JointActionSpace::new(&doc.action_counts)?;
        let (n, hn, jn) = (doc.num_states, doc.horizon, space.size());

        let mut kernel = Vec::with_capacity(hn * n * jn * n);
        if doc.kernel.len() != hn {
            return Err(Error::Dimension(format!(
                "kernel has {} steps, expected {hn}",
                doc.kernel.len()
            )));
        }
        for (h, per_step) in doc.kernel.iter().enumerate() {
            if per_step.len() != n {
                return Err(Error::Dimension(format!(
                    "kernel[{h}] has {} states, expected {n}",
                    per_step.len()
                )));
            }
            for (s, per_state) in per_step.iter().enumerate() {
                if per_state.len() != jn {
                    return Err(Error::Dimension(format!(
                        "kernel[{h}][{s}] has {} joint actions, expected {jn}",
                        per_state.len()
                    )));
                }
                for (j, row) in per_state.iter().enumerate() {
                    if row.len() != n {
                        return Err(Error::Dimension(format!(
                            "kernel[{h}][{s}][{j}] has {} entries, expected {n}",
                            row.len()
                        )));
                    }
                    kernel.extend_from_slice(row);
                }
            }
        }

        let mut rewards = Vec::with_capacity(doc.num_agents * hn * n * jn);
        if doc.rewards.len() != doc.num_agents {
            return Err(Error::Dimension(format!(
                "rewards have {} agents, expected {}",
                doc.rewards.len(),
                doc.num_agents
            )));
        }
        for (i, per_agent) in doc.rewards.iter().enumerate() {
            if per_agent.len() != hn {
                return Err(Error::Dimension(format!(
                    "rewards[{i}] has {} steps, expected {hn}",
                    per_agent.len()
                )));
            }
            for (h, per_step) in per_agent.iter().enumerate() {
                if per_step.len() != n {
                    return Err(Error::Dimension(format!(
                        "rewards[{i}][{h}] has {} states, expected {n}",
                        per_step.len()
                    )));
                }
                for (s, row) in per_step.iter().enumerate() {
                    if row.len() != jn {
                        return Err(Error::Dimension(format!(
                            "rewards[{i}][{h}][{s}] has {} joint actions, expected {jn}",
                            row.len()
                        )));
                    }
                    rewards.extend_from_slice(row);
                }
            }
        }
        RobustMarkovGame::from_flat(
            &doc.action_counts,
            n,
            hn,
            doc.uncertainty_level,
            kernel,
            rewards,
        )
    }
}

impl From<RobustMarkovGame> for GameDocument {
    fn from(game: RobustMarkovGame) -> Self {
        game.to_document()
    }
}

/// min{H, 1/R}; returns H when R = 0.
pub fn effective_horizon(horizon: usize, uncertainty: f64) -> f64 {
    let h = horizon as f64;
    if uncertainty <= 0.0 {
        h
    } else {
        h.min(1.0 / uncertainty)
    }
}

#[inline]
pub(crate) fn dot(p: &[f64], v: &[f64]) -> f64 {
    p.iter().zip(v).map(|(a, b)| a * b).sum()
}

#[inline]
pub(crate) fn min_value(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Index of the smallest entry; ties go to the lowest index.
pub fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (idx, &x) in v.iter().enumerate().skip(1) {
        if x < v[best] {
            best = idx;
        }
    }
    best
}

/// Worst-case expectation of `v` over the contamination set around `p`:
/// `(1-R)<p,v> + R min v`.
pub fn robust_expectation(p: &[f64], v: &[f64], uncertainty: f64) -> f64 {
    robust_expectation_with_min(p, v, min_value(v), uncertainty)
}

#[inline]
pub(crate) fn robust_expectation_with_min(
    p: &[f64],
    v: &[f64],
    v_min: f64,
    uncertainty: f64,
) -> f64 {
    (1.0 - uncertainty) * dot(p, v) + uncertainty * v_min
}

/// The minimizing kernel `(1-R)p + R e_{argmin v}`.
pub fn worst_case_kernel_row(p: &[f64], v: &[f64], uncertainty: f64) -> Vec<f64> {
    let target = argmin(v);
    let mut row: Vec<f64> = p.iter().map(|&x| (1.0 - uncertainty) * x).collect();
    row[target] += uncertainty;
    row
}

/// Vertex enumeration of the contamination polytope: the minimum over `s'`
/// of `<(1-R)p + R e_{s'}, v>`.
pub fn brute_force_robust_expectation(p: &[f64], v: &[f64], uncertainty: f64) -> f64 {
    (0..v.len())
        .map(|vertex| {
            p.iter()
                .enumerate()
                .map(|(s, &ps)| {
                    let mass =
                        (1.0 - uncertainty) * ps + if s == vertex { uncertainty } else { 0.0 };
                    mass * v[s]
                })
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Outcome of one generative-model query for a solver cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleDraw {
    pub joint_action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Draw the next state for `(h, s, joint)` from the stream keyed by the
/// given cell coordinates.
pub fn sample_next_state(
    game: &RobustMarkovGame,
    seed: u64,
    cell: (usize, usize, usize, usize, usize),
    joint: usize,
) -> usize {
    let (h, round, agent, s, action) = cell;
    let mut stream = StreamKey {
        seed,
        step: h,
        round,
        agent,
        state: s,
        action,
        purpose: Purpose::Transition,
    }
    .stream();
    game.sample_next_state(&mut stream, h, s, joint)
}
