//! Exact robust evaluation by backward induction: values of arbitrary
//! (correlated) Markov policies, robust best responses, and CCE / NE gaps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{min_value, robust_expectation_with_min, RobustMarkovGame};
use crate::policy::{Deviation, JointPolicy, MarkovPolicy, MixturePolicy, ProductMarkovPolicy};

/// Gaps in `[-GAP_FLOOR, 0)` are floating-point noise and reported as zero.
/// For product policies the best response dominates, so anything lower is
/// an error. A correlated mixture can be strictly better for an agent than
/// every independent deviation, so its gaps may be genuinely negative.
pub const GAP_FLOOR: f64 = 1e-10;

/// Largest number of deterministic deviations the enumeration oracle tries.
pub const MAX_ENUMERATED_POLICIES: u128 = 1_000_000;

/// Robust values `values[i][h][s]` for `h = 0..=H`; the last step is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustValueProfile {
    pub values: Vec<Vec<Vec<f64>>>,
}

impl RobustValueProfile {
    pub fn initial(&self, agent: usize) -> &[f64] {
        &self.values[agent][0]
    }
}

/// Robust best response of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponseResult {
    pub agent: usize,
    /// `values[h][s]` for `h = 0..=H`.
    pub values: Vec<Vec<f64>>,
    /// Deterministic rows attaining `values`.
    pub policy: MarkovPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// `gaps[i][s] = V*_{i,1}(s) - V_{i,1}(s)`, noise in `[-GAP_FLOOR, 0)`
    /// clamped to zero. Negative only for correlated mixtures.
    pub gaps: Vec<Vec<f64>>,
    /// Max over agents and states.
    pub cce_gap: f64,
    /// Set when the evaluated policy is a product policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ne_gap: Option<f64>,
    pub policy_values: RobustValueProfile,
    /// `best_response_values[i][h][s]`.
    pub best_response_values: Vec<Vec<Vec<f64>>>,
}

impl GapReport {
    pub fn max_agent_gaps(&self) -> Vec<f64> {
        self.gaps
            .iter()
            .map(|per_state| per_state.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }
}

/// One robust backup of agent `agent` at `(h, s, joint)` against the next-step
/// values: `r + (1-R)<P0, V> + R min V`. This is `Q^{pi,R}_{i,h}(s, a)` when
/// `next` is the policy's own `V_{i,h+1}`.
pub fn robust_q_value(
    game: &RobustMarkovGame,
    next: &[f64],
    agent: usize,
    h: usize,
    s: usize,
    joint: usize,
) -> f64 {
    robust_q_with_min(game, next, min_value(next), agent, h, s, joint)
}

#[inline]
fn robust_q_with_min(
    game: &RobustMarkovGame,
    next: &[f64],
    next_min: f64,
    agent: usize,
    h: usize,
    s: usize,
    joint: usize,
) -> f64 {
    game.reward(agent, h, s, joint)
        + robust_expectation_with_min(
            game.kernel_row(h, s, joint),
            next,
            next_min,
            game.uncertainty(),
        )
}

pub fn robust_value_of_policy<P: JointPolicy + ?Sized>(
    game: &RobustMarkovGame,
    policy: &P,
) -> Result<RobustValueProfile> {
    policy.check_against(game)?;
    Ok(policy_values_unchecked(game, policy))
}

fn policy_values_unchecked<P: JointPolicy + ?Sized>(
    game: &RobustMarkovGame,
    policy: &P,
) -> RobustValueProfile {
    let (m, n, horizon) = (game.num_agents(), game.num_states(), game.horizon());
    let space = game.joint_actions();
    let mut values = vec![vec![vec![0.0; n]; horizon + 1]; m];
    for h in (0..horizon).rev() {
        let next_mins: Vec<f64> = (0..m).map(|i| min_value(&values[i][h + 1])).collect();
        for s in 0..n {
            let dist = policy.joint_distribution(space, h, s);
            for i in 0..m {
                let (head, tail) = values[i].split_at_mut(h + 1);
                let next = &tail[0];
                head[h][s] = dist
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p != 0.0)
                    .map(|(j, &p)| p * robust_q_with_min(game, next, next_mins[i], i, h, s, j))
                    .sum();
            }
        }
    }
    RobustValueProfile { values }
}

pub fn robust_best_response<P: JointPolicy + ?Sized>(
    game: &RobustMarkovGame,
    policy: &P,
    agent: usize,
) -> Result<BestResponseResult> {
    policy.check_against(game)?;
    if agent >= game.num_agents() {
        return Err(Error::Dimension(format!("agent {agent} out of range")));
    }
    Ok(best_response_unchecked(game, policy, agent))
}

fn best_response_unchecked<P: JointPolicy + ?Sized>(
    game: &RobustMarkovGame,
    policy: &P,
    agent: usize,
) -> BestResponseResult {
    let (n, horizon) = (game.num_states(), game.horizon());
    let space = game.joint_actions();
    let num_actions = game.action_counts()[agent];
    let mut values = vec![vec![0.0; n]; horizon + 1];
    let mut actions = vec![vec![0usize; n]; horizon];
    for h in (0..horizon).rev() {
        let next = values[h + 1].clone();
        let next_min = min_value(&next);
        for s in 0..n {
            let marginal = policy.marginal_excluding(space, h, s, agent);
            let mut best = f64::NEG_INFINITY;
            let mut best_action = 0;
            for a in 0..num_actions {
                let value: f64 = marginal
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p != 0.0)
                    .map(|(rest, &p)| {
                        let j = space.join(agent, a, rest);
                        p * robust_q_with_min(game, &next, next_min, agent, h, s, j)
                    })
                    .sum();
                if value > best {
                    best = value;
                    best_action = a;
                }
            }
            values[h][s] = best;
            actions[h][s] = best_action;
        }
    }
    BestResponseResult {
        agent,
        values,
        policy: MarkovPolicy::deterministic(&actions, num_actions),
    }
}

fn gap_report<P: JointPolicy + ?Sized>(
    game: &RobustMarkovGame,
    policy: &P,
    product: bool,
    correlated: bool,
) -> Result<GapReport> {
    policy.check_against(game)?;
    let policy_values = policy_values_unchecked(game, policy);
    let mut gaps = Vec::with_capacity(game.num_agents());
    let mut best_response_values = Vec::with_capacity(game.num_agents());
    let mut overall = f64::NEG_INFINITY;
    for agent in 0..game.num_agents() {
        let br = best_response_unchecked(game, policy, agent);
        let mut per_state = Vec::with_capacity(game.num_states());
        for state in 0..game.num_states() {
            let gap = br.values[0][state] - policy_values.values[agent][0][state];
            if gap < -GAP_FLOOR && !correlated {
                return Err(Error::NegativeGap { agent, state, gap });
            }
            let gap = if (-GAP_FLOOR..0.0).contains(&gap) {
                0.0
            } else {
                gap
            };
            overall = overall.max(gap);
            per_state.push(gap);
        }
        gaps.push(per_state);
        best_response_values.push(br.values);
    }
    Ok(GapReport {
        gaps,
        cce_gap: overall,
        ne_gap: product.then_some(overall),
        policy_values,
        best_response_values,
    })
}

/// Robust CCE gap of a correlated mixture policy.
pub fn cce_gap(game: &RobustMarkovGame, mixture: &MixturePolicy) -> Result<GapReport> {
    let correlated = mixture.as_product().is_none();
    gap_report(game, mixture, false, correlated)
}

/// Robust NE gap of a product policy.
pub fn ne_gap(game: &RobustMarkovGame, product: &ProductMarkovPolicy) -> Result<GapReport> {
    gap_report(game, product, true, false)
}

/// Test oracle: best value at `h = 0` over every deterministic Markov
/// deviation of `agent`, by brute-force enumeration.
pub fn enumerate_deviations_oracle<P: JointPolicy + ?Sized>(
    game: &RobustMarkovGame,
    policy: &P,
    agent: usize,
) -> Result<Vec<f64>> {
    policy.check_against(game)?;
    let (n, horizon) = (game.num_states(), game.horizon());
    let num_actions = game.action_counts()[agent];
    let cells = n * horizon;
    let count = (num_actions as u128)
        .checked_pow(cells as u32)
        .unwrap_or(u128::MAX);
    if count > MAX_ENUMERATED_POLICIES {
        return Err(Error::Config(format!(
            "{count} deterministic policies exceed the enumeration cap of {MAX_ENUMERATED_POLICIES}"
        )));
    }
    let mut best = vec![f64::NEG_INFINITY; n];
    let mut digits = vec![0usize; cells];
    for _ in 0..count {
        let actions: Vec<Vec<usize>> = digits.chunks(n).map(|c| c.to_vec()).collect();
        let deviation = MarkovPolicy::deterministic(&actions, num_actions);
        let candidate = Deviation {
            base: policy,
            agent,
            deviation: &deviation,
        };
        let values = policy_values_unchecked(game, &candidate);
        for (b, &v) in best.iter_mut().zip(&values.values[agent][0]) {
            *b = b.max(v);
        }
        for d in digits.iter_mut() {
            *d += 1;
            if *d < num_actions {
                break;
            }
            *d = 0;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::StageProduct;

    fn matching_pennies(r: f64) -> RobustMarkovGame {
        // Agent 0 wins on a match; rewards encoded in [0,1] with r1 + r2 = 1.
        let r1 = vec![1.0, 0.0, 0.0, 1.0];
        let r2: Vec<f64> = r1.iter().map(|x| 1.0 - x).collect();
        RobustMarkovGame::from_flat(&[2, 2], 1, 1, r, vec![1.0; 4], [r1, r2].concat()).unwrap()
    }

    #[test]
    fn uniform_play_is_equilibrium_of_matching_pennies() {
        let game = matching_pennies(0.0);
        let mix = MixturePolicy {
            weights: vec![vec![1.0]],
            components: vec![vec![StageProduct::uniform(1, &[2, 2])]],
        };
        let report = cce_gap(&game, &mix).unwrap();
        assert!(report.cce_gap.abs() <= 1e-12);
        assert!(report.ne_gap.is_none());
        let product = mix.as_product().unwrap();
        let ne = ne_gap(&game, &product).unwrap();
        assert_eq!(ne.ne_gap, Some(ne.cce_gap));
        assert_eq!(ne.cce_gap, report.cce_gap);
    }

    #[test]
    fn terminal_step_value_is_expected_reward() {
        let game = matching_pennies(0.3);
        let product = ProductMarkovPolicy {
            agents: vec![
                MarkovPolicy {
                    steps: vec![vec![vec![0.2, 0.8]]],
                },
                MarkovPolicy {
                    steps: vec![vec![vec![0.6, 0.4]]],
                },
            ],
        };
        let values = robust_value_of_policy(&game, &product).unwrap();
        let expected = 0.2 * 0.6 + 0.8 * 0.4;
        assert!((values.values[0][0][0] - expected).abs() < 1e-15);
        assert_eq!(values.values[0][1], vec![0.0]);
    }

    #[test]
    fn best_response_to_deterministic_opponent_is_argmax() {
        let game = matching_pennies(0.0);
        let product = ProductMarkovPolicy {
            agents: vec![
                MarkovPolicy::uniform(1, 1, 2),
                MarkovPolicy::deterministic(&[vec![1]], 2),
            ],
        };
        let br = robust_best_response(&game, &product, 0).unwrap();
        assert_eq!(br.values[0][0], 1.0);
        assert_eq!(br.policy.steps[0][0], vec![0.0, 1.0]);
    }

    #[test]
    fn mutual_best_responses_have_zero_ne_gap() {
        // Coordination game: both get 1 when actions match.
        let r = vec![1.0, 0.0, 0.0, 1.0];
        let game =
            RobustMarkovGame::from_flat(&[2, 2], 1, 1, 0.0, vec![1.0; 4], [r.clone(), r].concat())
                .unwrap();
        let product = ProductMarkovPolicy {
            agents: vec![
                MarkovPolicy::deterministic(&[vec![0]], 2),
                MarkovPolicy::deterministic(&[vec![0]], 2),
            ],
        };
        assert_eq!(ne_gap(&game, &product).unwrap().ne_gap, Some(0.0));
    }

    #[test]
    fn correlated_coordination_has_negative_gap() {
        // Half (0,0), half (1,1): value 1, while any independent deviation
        // against the 50/50 marginal earns 1/2.
        let r = vec![1.0, 0.0, 0.0, 1.0];
        let game =
            RobustMarkovGame::from_flat(&[2, 2], 1, 1, 0.0, vec![1.0; 4], [r.clone(), r].concat())
                .unwrap();
        let pure = |a: usize| StageProduct {
            tables: vec![vec![MarkovPolicy::deterministic(&[vec![a]], 2).steps[0][0].clone()]; 2],
        };
        let mix = MixturePolicy {
            weights: vec![vec![0.5, 0.5]],
            components: vec![vec![pure(0), pure(1)]],
        };
        let report = cce_gap(&game, &mix).unwrap();
        assert_eq!(report.gaps, vec![vec![-0.5], vec![-0.5]]);
        assert_eq!(report.cce_gap, -0.5);
        assert_eq!(report.max_agent_gaps(), vec![-0.5, -0.5]);
    }

    #[test]
    fn constant_rewards_give_linear_values() {
        let c = 0.4;
        let kernel = vec![0.3, 0.7, 0.9, 0.1, 0.5, 0.5, 0.2, 0.8];
        let game = RobustMarkovGame::from_flat(&[1], 2, 2, 0.6, kernel, vec![c; 4]).unwrap();
        let values = robust_value_of_policy(&game, &ProductMarkovPolicy::uniform(&game)).unwrap();
        for h in 0..=2 {
            for s in 0..2 {
                assert!((values.values[0][h][s] - c * (2 - h) as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn no_deviation_possible_with_single_action() {
        let game = RobustMarkovGame::from_flat(
            &[1],
            2,
            2,
            0.2,
            vec![0.5, 0.5, 0.1, 0.9, 1.0, 0.0, 0.0, 1.0],
            vec![0.1, 0.9, 0.4, 0.3],
        )
        .unwrap();
        let policy = ProductMarkovPolicy::uniform(&game);
        let oracle = enumerate_deviations_oracle(&game, &policy, 0).unwrap();
        let values = robust_value_of_policy(&game, &policy).unwrap();
        assert_eq!(oracle, values.values[0][0]);
    }

    #[test]
    fn enumeration_guard() {
        let n = 4;
        let horizon = 6;
        let game = RobustMarkovGame::from_flat(
            &[4],
            n,
            horizon,
            0.0,
            vec![0.25; horizon * n * 4 * n],
            vec![0.0; horizon * n * 4],
        )
        .unwrap();
        let policy = ProductMarkovPolicy::uniform(&game);
        assert!(enumerate_deviations_oracle(&game, &policy, 0).is_err());
    }

    #[test]
    fn single_state_single_agent_oracle_is_best_action() {
        let game = RobustMarkovGame::from_flat(&[3], 1, 1, 0.0, vec![1.0; 3], vec![0.2, 0.9, 0.5])
            .unwrap();
        let policy = ProductMarkovPolicy::uniform(&game);
        assert_eq!(
            enumerate_deviations_oracle(&game, &policy, 0).unwrap(),
            vec![0.9]
        );
    }

    #[test]
    fn mismatched_policy_rejected() {
        let game = matching_pennies(0.0);
        let bad = ProductMarkovPolicy {
            agents: vec![MarkovPolicy::uniform(1, 1, 2)],
        };
        assert!(robust_value_of_policy(&game, &bad).is_err());
    }
}
