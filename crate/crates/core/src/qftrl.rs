//! Robust Q-FTRL against a generative model.
//!
//! Works backwards over steps. At each step every agent runs `K` rounds:
//! for each `(s, a_i)` it samples the opponents' actions from their current
//! round policies and one next state from the nominal kernel, forms the
//! robust one-sample target
//!
//! ```text
//! q = r + (1-R) V_{h+1}(s') + R min V_{h+1}
//! ```
//!
//! and mixes it into `Q` with rate `alpha_k`. Policies follow FTRL
//! (`softmax(eta_{k+1} Q)`). After `K` rounds the optimistic value estimate
//! `min{ sum_k alpha_k^K E_{pi^k} q^k + beta, H-h+1 }` is passed to the
//! previous step. The output is the per-step mixture of the round policies
//! with weights `alpha_k^K`.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{min_value, RobustMarkovGame};
use crate::policy::{
    average_agent_policy, ftrl_update, row_is_stochastic, MarkovPolicy, MixturePolicy,
    ProductMarkovPolicy, StageProduct,
};
use crate::rng::{Purpose, StreamKey};
use crate::schedule::{Schedules, DEFAULT_C_ALPHA};

pub const DEFAULT_C_B: f64 = 0.5;
pub const DEFAULT_DELTA: f64 = 0.01;
pub const DEFAULT_SAMPLE_CAP: u128 = 1_000_000_000;
/// Per-round trace records are dropped once `K*H*S*sum(A_i)` exceeds this.
pub const DEFAULT_TRACE_CAP: usize = 4_000_000;

const BOUND_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub rounds: usize,
    pub c_alpha: f64,
    pub c_b: f64,
    pub delta: f64,
    pub seed: u64,
    pub record_trace: bool,
    /// Worker threads for the per-round cell loop; 1 runs inline.
    pub threads: usize,
    pub max_samples: u128,
    pub trace_cap: usize,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            rounds: 64,
            c_alpha: DEFAULT_C_ALPHA,
            c_b: DEFAULT_C_B,
            delta: DEFAULT_DELTA,
            seed: 0,
            record_trace: false,
            threads: 1,
            max_samples: DEFAULT_SAMPLE_CAP,
            trace_cap: DEFAULT_TRACE_CAP,
        }
    }
}

impl AlgoConfig {
    pub fn new(rounds: usize, seed: u64) -> Self {
        Self {
            rounds,
            seed,
            ..Self::default()
        }
    }

    /// Raise the bonus constant to `2 sqrt(c_alpha + 1)`.
    pub fn with_theory_constants(mut self) -> Self {
        self.c_b = theory_bonus_constant(self.c_alpha);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds K must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if !(self.c_b >= 0.0 && self.c_b.is_finite()) {
            return Err(Error::Config(format!(
                "c_b must be non-negative, got {}",
                self.c_b
            )));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn theory_bonus_constant(c_alpha: f64) -> f64 {
    2.0 * (c_alpha + 1.0).sqrt()
}

/// `q[i][h][s][a_i]` after the last round of each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub q: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Optimistic value estimates `values[i][h][s]`, `h = 0..=H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub values: Vec<Vec<Vec<f64>>>,
}

/// Runtime invariant counters. Everything but `range_bound_exceedances`
/// must stay at zero.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub samples_drawn: u64,
    pub clip_violations: u64,
    pub min_monotonicity_violations: u64,
    pub nonstochastic_rows: u64,
    /// Steps where the value range exceeded `3 sum_{h'} (1-R)^{h'-h}`. Only a
    /// warning: the bound is proven for large enough `K`.
    pub range_bound_exceedances: u64,
}

impl RunDiagnostics {
    pub fn violations(&self) -> u64 {
        self.clip_violations + self.min_monotonicity_violations + self.nonstochastic_rows
    }
}

/// One round's record for a fixed `(i, h, s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub q_row: Vec<f64>,
    pub policy_row: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    /// `rounds[k][i][s]` = the sampled target row `q^k_{i,h}(s, .)`. Absent
    /// when the run exceeded the trace cap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<Vec<Vec<Vec<Vec<f64>>>>>,
    /// `final_q[i][s][a]`.
    pub final_q: Vec<Vec<Vec<f64>>>,
    /// `beta[i][s]`.
    pub beta: Vec<Vec<f64>>,
    /// `values[i][s]`.
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub schedules: Schedules,
    pub steps: Vec<StepTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub mixture: MixturePolicy,
    /// Averaged product policy, emitted for two-player zero-sum games.
    pub zero_sum_products: Option<ProductMarkovPolicy>,
    pub values: ValueTable,
    pub q_tables: QTable,
    pub sample_count: u64,
    pub diagnostics: RunDiagnostics,
    pub trace: Option<Trace>,
}

/// `K H S sum_i A_i`.
pub fn expected_sample_count(game: &RobustMarkovGame, rounds: usize) -> u128 {
    rounds as u128
        * game.horizon() as u128
        * game.num_states() as u128
        * game.total_actions() as u128
}

/// Mean and variance of `q_row` under `policy_row`.
pub fn policy_mean_and_variance(policy_row: &[f64], q_row: &[f64]) -> (f64, f64) {
    let mean: f64 = policy_row.iter().zip(q_row).map(|(p, q)| p * q).sum();
    let var: f64 = policy_row
        .iter()
        .zip(q_row)
        .map(|(p, q)| p * (q - mean) * (q - mean))
        .sum();
    (mean, var)
}

/// `c_b sqrt( log^3(K S sum A / delta) / (K M) )` with `M = min{H, 1/R}`.
pub fn bonus_prefactor(
    c_b: f64,
    delta: f64,
    rounds: usize,
    num_states: usize,
    total_actions: usize,
    horizon_eff: f64,
) -> f64 {
    let log_term = ((rounds * num_states * total_actions) as f64 / delta).ln();
    c_b * (log_term.powi(3) / (rounds as f64 * horizon_eff)).sqrt()
}

/// The optimism bonus for one `(i, h, s)` from its per-round records:
/// prefactor times `sum_k alpha_k^K (Var_{pi^k}(q^k) + M)`.
#[allow(clippy::too_many_arguments)]
pub fn bonus_beta(
    records: &[RoundRecord],
    weights: &[f64],
    c_b: f64,
    delta: f64,
    rounds: usize,
    num_states: usize,
    total_actions: usize,
    horizon_eff: f64,
) -> f64 {
    let mut acc = 0.0;
    for (record, &w) in records.iter().zip(weights) {
        let (_, var) = policy_mean_and_variance(&record.policy_row, &record.q_row);
        acc += w * (var + horizon_eff);
    }
    bonus_prefactor(c_b, delta, rounds, num_states, total_actions, horizon_eff) * acc
}

/// `min{ sum_k alpha_k^K E_{pi^k} q^k + beta, H - h + 1 }` for one state,
/// with `step` one-based.
pub fn value_estimate(
    records: &[RoundRecord],
    weights: &[f64],
    beta: f64,
    step: usize,
    horizon: usize,
) -> f64 {
    let mut acc = 0.0;
    for (record, &w) in records.iter().zip(weights) {
        let (mean, _) = policy_mean_and_variance(&record.policy_row, &record.q_row);
        acc += w * mean;
    }
    (acc + beta).min((horizon + 1 - step) as f64)
}

/// Per-agent weighted average of the round policies, the output used for
/// two-player zero-sum games.
pub fn zero_sum_product_output(mixture: &MixturePolicy) -> Result<ProductMarkovPolicy> {
    let agents = mixture
        .components
        .first()
        .and_then(|c| c.first())
        .map_or(0, |c| c.tables.len());
    if agents != 2 {
        return Err(Error::Unsupported(format!(
            "the averaged product output is defined for two-player games, got {agents} agents"
        )));
    }
    Ok(mixture.average_product())
}

/// Per-`(agent, state)` solver state for one step.
struct Unit {
    agent: usize,
    state: usize,
    q: Vec<f64>,
    mean_acc: f64,
    spread_acc: f64,
    next_row: Vec<f64>,
    trace: Vec<Vec<f64>>,
    draws: u64,
    bad_rows: u64,
}

struct RoundContext<'a> {
    game: &'a RobustMarkovGame,
    seed: u64,
    step: usize,
    round: usize,
    policies: &'a StageProduct,
    next_values: &'a [Vec<f64>],
    next_mins: &'a [f64],
    alpha: f64,
    weight: f64,
    eta_next: Option<f64>,
    horizon_eff: f64,
    keep_trace: bool,
}

impl RoundContext<'_> {
    /// Sampled target `q^k_{i,h}(s, a_i)` for one cell.
    fn sample_target(
        &self,
        agent: usize,
        state: usize,
        action: usize,
        actions: &mut [usize],
    ) -> f64 {
        let game = self.game;
        for (j, slot) in actions.iter_mut().enumerate() {
            *slot = if j == agent {
                action
            } else {
                let mut stream = self
                    .key(agent, state, action, Purpose::OpponentAction(j))
                    .stream();
                stream.categorical(self.policies.row(j, state))
            };
        }
        let joint = game.joint_actions().encode(actions);
        let reward = game.reward(agent, self.step, state, joint);
        let mut stream = self.key(agent, state, action, Purpose::Transition).stream();
        let next = game.sample_next_state(&mut stream, self.step, state, joint);
        let r = game.uncertainty();
        reward + (1.0 - r) * self.next_values[agent][next] + r * self.next_mins[agent]
    }

    fn key(&self, agent: usize, state: usize, action: usize, purpose: Purpose) -> StreamKey {
        StreamKey {
            seed: self.seed,
            step: self.step,
            round: self.round,
            agent,
            state,
            action,
            purpose,
        }
    }

    fn advance(&self, unit: &mut Unit) {
        let mut actions = vec![0; self.game.num_agents()];
        let q_row: Vec<f64> = (0..unit.q.len())
            .map(|a| self.sample_target(unit.agent, unit.state, a, &mut actions))
            .collect();
        unit.draws += q_row.len() as u64;

        for (q, &target) in unit.q.iter_mut().zip(&q_row) {
            *q = (1.0 - self.alpha) * *q + self.alpha * target;
        }
        let (mean, var) =
            policy_mean_and_variance(self.policies.row(unit.agent, unit.state), &q_row);
        unit.mean_acc += self.weight * mean;
        unit.spread_acc += self.weight * (var + self.horizon_eff);

        if let Some(eta) = self.eta_next {
            let row = ftrl_update(&unit.q, eta);
            if !(row.iter().all(|&p| p > 0.0) && row_is_stochastic(&row, 1e-12)) {
                unit.bad_rows += 1;
            }
            unit.next_row = row;
        }
        if self.keep_trace {
            unit.trace.push(q_row);
        }
    }
}

fn for_each_unit(
    pool: Option<&rayon::ThreadPool>,
    units: &mut [Unit],
    f: impl Fn(&mut Unit) + Sync + Send,
) {
    match pool {
        Some(pool) => pool.install(|| units.par_iter_mut().for_each(&f)),
        None => units.iter_mut().for_each(f),
    }
}

/// Run Robust Q-FTRL on `game`. Deterministic in `(game, config)`; the
/// thread count does not change any output bit.
pub fn run_robust_qftrl(game: &RobustMarkovGame, config: &AlgoConfig) -> Result<RunOutput> {
    game.validate()?;
    config.validate()?;
    let needed = expected_sample_count(game, config.rounds);
    if needed > config.max_samples {
        return Err(Error::SampleBudget {
            needed,
            cap: config.max_samples,
        });
    }

    let (m, n, horizon, rounds) = (
        game.num_agents(),
        game.num_states(),
        game.horizon(),
        config.rounds,
    );
    let counts = game.action_counts().to_vec();
    let schedules = Schedules::build(rounds, config.c_alpha, horizon, game.uncertainty())?;
    let horizon_eff = game.effective_horizon();
    let prefactor = bonus_prefactor(
        config.c_b,
        config.delta,
        rounds,
        n,
        game.total_actions(),
        horizon_eff,
    );
    let keep_rounds = config.record_trace && needed <= config.trace_cap as u128;

    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut values = vec![vec![vec![0.0; n]; horizon + 1]; m];
    let mut q_tables = vec![vec![Vec::new(); horizon]; m];
    let mut weights_out = vec![Vec::new(); horizon];
    let mut components_out = vec![Vec::new(); horizon];
    let mut diagnostics = RunDiagnostics::default();
    let mut steps_trace = Vec::new();

    for h in (0..horizon).rev() {
        let next_values: Vec<Vec<f64>> = (0..m).map(|i| values[i][h + 1].clone()).collect();
        let next_mins: Vec<f64> = next_values.iter().map(|v| min_value(v)).collect();

        let mut units: Vec<Unit> = (0..m)
            .flat_map(|agent| (0..n).map(move |state| (agent, state)))
            .map(|(agent, state)| Unit {
                agent,
                state,
                q: vec![0.0; counts[agent]],
                mean_acc: 0.0,
                spread_acc: 0.0,
                next_row: Vec::new(),
                trace: Vec::new(),
                draws: 0,
                bad_rows: 0,
            })
            .collect();

        let mut policies = StageProduct::uniform(n, &counts);
        let mut components = Vec::with_capacity(rounds);
        for k in 1..=rounds {
            let ctx = RoundContext {
                game,
                seed: config.seed,
                step: h,
                round: k,
                policies: &policies,
                next_values: &next_values,
                next_mins: &next_mins,
                alpha: schedules.alpha(k),
                weight: schedules.weight(k),
                eta_next: (k < rounds).then(|| schedules.eta(k + 1)),
                horizon_eff,
                keep_trace: keep_rounds,
            };
            for_each_unit(pool.as_ref(), &mut units, |u| ctx.advance(u));
            let next = if k < rounds {
                let mut next = policies.clone();
                for u in &units {
                    next.tables[u.agent][u.state].clone_from(&u.next_row);
                }
                Some(next)
            } else {
                None
            };
            match next {
                Some(next) => components.push(std::mem::replace(&mut policies, next)),
                None => components.push(policies.clone()),
            }
        }

        let step_one_based = h + 1;
        let cap = (horizon + 1 - step_one_based) as f64;
        let mut beta = vec![vec![0.0; n]; m];
        for u in &units {
            let b = prefactor * u.spread_acc;
            let v = (u.mean_acc + b).min(cap);
            beta[u.agent][u.state] = b;
            values[u.agent][h][u.state] = v;
            diagnostics.samples_drawn += u.draws;
            diagnostics.nonstochastic_rows += u.bad_rows;
        }
        for u in &units {
            q_tables[u.agent][h].push(u.q.clone());
        }

        for i in 0..m {
            let current = &values[i][h];
            for &v in current {
                if !(v >= -BOUND_TOLERANCE && v <= cap + BOUND_TOLERANCE) {
                    diagnostics.clip_violations += 1;
                }
            }
            let cur_min = min_value(current);
            if cur_min < next_mins[i] - BOUND_TOLERANCE {
                diagnostics.min_monotonicity_violations += 1;
            }
            let cur_max = current.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let bound: f64 = (0..horizon - h)
                .map(|d| 3.0 * (1.0 - game.uncertainty()).powi(d as i32))
                .sum();
            if cur_max - cur_min > bound + BOUND_TOLERANCE {
                diagnostics.range_bound_exceedances += 1;
                warn!(
                    "value range {} at agent {i}, step {} exceeds {bound} (expected outside the large-K regime)",
                    cur_max - cur_min,
                    step_one_based
                );
            }
        }
        for comp in &components {
            for table in &comp.tables {
                for row in table {
                    if !row_is_stochastic(row, 1e-12) {
                        diagnostics.nonstochastic_rows += 1;
                    }
                }
            }
        }

        if config.record_trace {
            let rounds_trace = keep_rounds.then(|| {
                (0..rounds)
                    .map(|k| {
                        (0..m)
                            .map(|i| {
                                units
                                    .iter()
                                    .filter(|u| u.agent == i)
                                    .map(|u| u.trace[k].clone())
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            });
            steps_trace.push(StepTrace {
                step: h,
                rounds: rounds_trace,
                final_q: q_tables
                    .iter()
                    .map(|per_agent| per_agent[h].clone())
                    .collect(),
                beta,
                values: (0..m).map(|i| values[i][h].clone()).collect(),
            });
        }

        weights_out[h] = schedules.weights().to_vec();
        components_out[h] = components;
    }

    if diagnostics.samples_drawn as u128 != needed {
        return Err(Error::Config(format!(
            "sample accounting mismatch: drew {}, expected {needed}",
            diagnostics.samples_drawn
        )));
    }

    let mixture = MixturePolicy {
        weights: weights_out,
        components: components_out,
    };
    let zero_sum_products = if game.is_zero_sum() {
        Some(zero_sum_product_output(&mixture)?)
    } else {
        None
    };
    steps_trace.reverse();

    Ok(RunOutput {
        mixture,
        zero_sum_products,
        values: ValueTable { values },
        q_tables: QTable { q: q_tables },
        sample_count: needed as u64,
        diagnostics,
        trace: config.record_trace.then_some(Trace {
            schedules,
            steps: steps_trace,
        }),
    })
}

/// Weighted average policy of one agent, exposed for callers that hold the
/// round policies directly.
pub fn average_round_policies(
    rounds: &[StageProduct],
    weights: &[f64],
    agent: usize,
) -> Vec<Vec<f64>> {
    let rows: Vec<&[Vec<f64>]> = rounds.iter().map(|r| r.tables[agent].as_slice()).collect();
    average_agent_policy(&rows, weights)
}

impl RunOutput {
    /// The agent's averaged Markov policy `sum_k alpha_k^K pi^k_i`.
    pub fn averaged_policy(&self, agent: usize) -> MarkovPolicy {
        MarkovPolicy {
            steps: self
                .mixture
                .components
                .iter()
                .zip(&self.mixture.weights)
                .map(|(comps, w)| average_round_policies(comps, w, agent))
                .collect(),
        }
    }
}
