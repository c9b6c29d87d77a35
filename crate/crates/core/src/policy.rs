//! Policy representations: per-round product policies, the weighted mixture
//! the solver outputs, independent (product) Markov policies, and the FTRL
//! softmax update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{JointActionSpace, RobustMarkovGame};

pub const STOCHASTIC_TOLERANCE: f64 = 1e-10;

/// `softmax(eta * q_row)`, computed with max-subtraction.
pub fn ftrl_update(q_row: &[f64], eta: f64) -> Vec<f64> {
    let top = q_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = q_row.iter().map(|&q| (eta * (q - top)).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

pub(crate) fn row_is_stochastic(row: &[f64], tol: f64) -> bool {
    row.iter().all(|&p| p >= 0.0 && p.is_finite()) && (row.iter().sum::<f64>() - 1.0).abs() <= tol
}

fn check_row(row: &[f64], what: impl FnOnce() -> String) -> Result<()> {
    if row_is_stochastic(row, STOCHASTIC_TOLERANCE) {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{} is not a probability vector",
            what()
        )))
    }
}

/// One round's per-agent action tables, `tables[i][s][a_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StageProduct {
    pub tables: Vec<Vec<Vec<f64>>>,
}

impl StageProduct {
    pub fn uniform(num_states: usize, action_counts: &[usize]) -> Self {
        Self {
            tables: action_counts
                .iter()
                .map(|&a| vec![vec![1.0 / a as f64; a]; num_states])
                .collect(),
        }
    }

    pub fn row(&self, agent: usize, s: usize) -> &[f64] {
        &self.tables[agent][s]
    }

    fn check(&self, num_states: usize, counts: &[usize]) -> Result<()> {
        if self.tables.len() != counts.len() {
            return Err(Error::Dimension(format!(
                "stage policy has {} agents, game has {}",
                self.tables.len(),
                counts.len()
            )));
        }
        for (i, table) in self.tables.iter().enumerate() {
            if table.len() != num_states {
                return Err(Error::Dimension(format!(
                    "agent {i} table has {} states",
                    table.len()
                )));
            }
            for (s, row) in table.iter().enumerate() {
                if row.len() != counts[i] {
                    return Err(Error::Dimension(format!(
                        "agent {i} row at state {s} has {} actions",
                        row.len()
                    )));
                }
                check_row(row, || format!("agent {i} row at state {s}"))?;
            }
        }
        Ok(())
    }
}

/// Product distribution over the agents in `agents` (in order) at state `s`,
/// indexed mixed-radix with the first listed agent most significant.
fn product_over(
    tables: &[Vec<Vec<f64>>],
    agents: impl Iterator<Item = usize>,
    s: usize,
    scale: f64,
    acc: &mut Vec<f64>,
) {
    let mut dist = vec![scale];
    for i in agents {
        let row = &tables[i][s];
        let mut next = Vec::with_capacity(dist.len() * row.len());
        for &mass in &dist {
            for &p in row {
                next.push(mass * p);
            }
        }
        dist = next;
    }
    if acc.is_empty() {
        *acc = dist;
    } else {
        for (a, d) in acc.iter_mut().zip(dist) {
            *a += d;
        }
    }
}

/// Something that assigns a (possibly correlated) joint-action distribution
/// to every `(h, s)`.
pub trait JointPolicy {
    fn num_steps(&self) -> usize;

    /// Distribution over flat joint actions at `(h, s)`.
    fn joint_distribution(&self, space: &JointActionSpace, h: usize, s: usize) -> Vec<f64>;

    /// Distribution of the others' joint sub-action at `(h, s)`, indexed in
    /// `space.excluding(agent)`.
    fn marginal_excluding(
        &self,
        space: &JointActionSpace,
        h: usize,
        s: usize,
        agent: usize,
    ) -> Vec<f64> {
        let joint = self.joint_distribution(space, h, s);
        let mut out = vec![0.0; space.size() / space.counts()[agent]];
        for (j, &p) in joint.iter().enumerate() {
            out[space.rest_index(j, agent)] += p;
        }
        out
    }

    /// Check dimensions and stochasticity against a game.
    fn check_against(&self, game: &RobustMarkovGame) -> Result<()>;
}

/// The solver's output: at every step a convex combination of per-round
/// product policies with weights `alpha_k^K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePolicy {
    /// `weights[h][k]`.
    pub weights: Vec<Vec<f64>>,
    /// `components[h][k]`.
    pub components: Vec<Vec<StageProduct>>,
}

impl MixturePolicy {
    /// Mixture with a single component per step.
    pub fn from_product(product: &ProductMarkovPolicy) -> Self {
        let steps = product.num_steps();
        Self {
            weights: vec![vec![1.0]; steps],
            components: (0..steps).map(|h| vec![product.stage(h)]).collect(),
        }
    }

    /// Per-agent weighted average of the components: `sum_k w_k pi^k_{i,h}`.
    pub fn average_product(&self) -> ProductMarkovPolicy {
        let num_agents = self
            .components
            .first()
            .and_then(|c| c.first())
            .map_or(0, |c| c.tables.len());
        let agents = (0..num_agents)
            .map(|i| {
                let steps = self
                    .components
                    .iter()
                    .zip(&self.weights)
                    .map(|(comps, weights)| {
                        let rows: Vec<&[Vec<f64>]> =
                            comps.iter().map(|c| c.tables[i].as_slice()).collect();
                        average_agent_policy(&rows, weights)
                    })
                    .collect();
                MarkovPolicy { steps }
            })
            .collect();
        ProductMarkovPolicy { agents }
    }

    /// The mixture is itself a product policy when every step has one
    /// component or there is a single agent.
    pub fn as_product(&self) -> Option<ProductMarkovPolicy> {
        let single_agent = self
            .components
            .iter()
            .flatten()
            .all(|c| c.tables.len() == 1);
        let single_component = self.components.iter().all(|c| c.len() == 1);
        (single_agent || single_component).then(|| self.average_product())
    }
}

impl JointPolicy for MixturePolicy {
    fn num_steps(&self) -> usize {
        self.components.len()
    }

    fn joint_distribution(&self, space: &JointActionSpace, h: usize, s: usize) -> Vec<f64> {
        let mut acc = Vec::new();
        for (comp, &w) in self.components[h].iter().zip(&self.weights[h]) {
            product_over(&comp.tables, 0..space.num_agents(), s, w, &mut acc);
        }
        acc
    }

    fn marginal_excluding(
        &self,
        space: &JointActionSpace,
        h: usize,
        s: usize,
        agent: usize,
    ) -> Vec<f64> {
        let mut acc = Vec::new();
        for (comp, &w) in self.components[h].iter().zip(&self.weights[h]) {
            product_over(
                &comp.tables,
                (0..space.num_agents()).filter(|&j| j != agent),
                s,
                w,
                &mut acc,
            );
        }
        acc
    }

    fn check_against(&self, game: &RobustMarkovGame) -> Result<()> {
        if self.components.len() != game.horizon() || self.weights.len() != game.horizon() {
            return Err(Error::Dimension(format!(
                "mixture has {} steps, game horizon is {}",
                self.components.len(),
                game.horizon()
            )));
        }
        for (h, (comps, weights)) in self.components.iter().zip(&self.weights).enumerate() {
            if comps.len() != weights.len() || comps.is_empty() {
                return Err(Error::Dimension(format!(
                    "step {h}: {} components, {} weights",
                    comps.len(),
                    weights.len()
                )));
            }
            check_row(weights, || format!("mixture weights at step {h}"))?;
            for comp in comps {
                comp.check(game.num_states(), game.action_counts())?;
            }
        }
        Ok(())
    }
}

/// `Σ_k w_k Π_i d^k_i[s][a_i]` over all joint actions.
pub fn joint_action_distribution(
    mixture: &MixturePolicy,
    space: &JointActionSpace,
    h: usize,
    s: usize,
) -> Vec<f64> {
    mixture.joint_distribution(space, h, s)
}

/// `Σ_k w_k Π_{j≠i} d^k_j[s][a_j]`; stays correlated across the others.
pub fn marginal_excluding(
    mixture: &MixturePolicy,
    space: &JointActionSpace,
    h: usize,
    s: usize,
    agent: usize,
) -> Vec<f64> {
    mixture.marginal_excluding(space, h, s, agent)
}

/// Convex combination of per-state action tables. `components[k][s][a]`.
pub fn average_agent_policy(components: &[&[Vec<f64>]], weights: &[f64]) -> Vec<Vec<f64>> {
    let Some(first) = components.first() else {
        return Vec::new();
    };
    let mut out: Vec<Vec<f64>> = first.iter().map(|row| vec![0.0; row.len()]).collect();
    for (table, &w) in components.iter().zip(weights) {
        for (acc_row, row) in out.iter_mut().zip(table.iter()) {
            for (acc, &p) in acc_row.iter_mut().zip(row) {
                *acc += w * p;
            }
        }
    }
    out
}

/// One agent's Markov policy, `steps[h][s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarkovPolicy {
    pub steps: Vec<Vec<Vec<f64>>>,
}

impl MarkovPolicy {
    pub fn deterministic(actions: &[Vec<usize>], num_actions: usize) -> Self {
        let steps = actions
            .iter()
            .map(|per_state| {
                per_state
                    .iter()
                    .map(|&a| {
                        let mut row = vec![0.0; num_actions];
                        row[a] = 1.0;
                        row
                    })
                    .collect()
            })
            .collect();
        Self { steps }
    }

    pub fn uniform(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        Self {
            steps: vec![vec![vec![1.0 / num_actions as f64; num_actions]; num_states]; horizon],
        }
    }
}

/// Independent per-agent Markov policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductMarkovPolicy {
    pub agents: Vec<MarkovPolicy>,
}

impl ProductMarkovPolicy {
    pub fn uniform(game: &RobustMarkovGame) -> Self {
        Self {
            agents: game
                .action_counts()
                .iter()
                .map(|&a| MarkovPolicy::uniform(game.horizon(), game.num_states(), a))
                .collect(),
        }
    }

    pub fn stage(&self, h: usize) -> StageProduct {
        StageProduct {
            tables: self.agents.iter().map(|p| p.steps[h].clone()).collect(),
        }
    }

    fn tables_at(&self, h: usize) -> Vec<&Vec<Vec<f64>>> {
        self.agents.iter().map(|p| &p.steps[h]).collect()
    }
}

fn product_of_refs(
    tables: &[&Vec<Vec<f64>>],
    agents: impl Iterator<Item = usize>,
    s: usize,
) -> Vec<f64> {
    let mut dist = vec![1.0];
    for i in agents {
        let row = &tables[i][s];
        let mut next = Vec::with_capacity(dist.len() * row.len());
        for &mass in &dist {
            for &p in row {
                next.push(mass * p);
            }
        }
        dist = next;
    }
    dist
}

impl JointPolicy for ProductMarkovPolicy {
    fn num_steps(&self) -> usize {
        self.agents.first().map_or(0, |p| p.steps.len())
    }

    fn joint_distribution(&self, space: &JointActionSpace, h: usize, s: usize) -> Vec<f64> {
        product_of_refs(&self.tables_at(h), 0..space.num_agents(), s)
    }

    fn marginal_excluding(
        &self,
        space: &JointActionSpace,
        h: usize,
        s: usize,
        agent: usize,
    ) -> Vec<f64> {
        product_of_refs(
            &self.tables_at(h),
            (0..space.num_agents()).filter(|&j| j != agent),
            s,
        )
    }

    fn check_against(&self, game: &RobustMarkovGame) -> Result<()> {
        if self.agents.len() != game.num_agents() {
            return Err(Error::Dimension(format!(
                "product policy has {} agents, game has {}",
                self.agents.len(),
                game.num_agents()
            )));
        }
        for (i, policy) in self.agents.iter().enumerate() {
            if policy.steps.len() != game.horizon() {
                return Err(Error::Dimension(format!(
                    "agent {i} policy has {} steps",
                    policy.steps.len()
                )));
            }
            for h in 0..game.horizon() {
                let stage = StageProduct {
                    tables: vec![policy.steps[h].clone()],
                };
                stage.check(game.num_states(), &game.action_counts()[i..=i])?;
            }
        }
        Ok(())
    }
}

/// `policy` with agent `agent` replaced by `deviation`: the others keep
/// their (possibly correlated) marginal, the deviator plays independently.
pub struct Deviation<'a, P: JointPolicy + ?Sized> {
    pub base: &'a P,
    pub agent: usize,
    pub deviation: &'a MarkovPolicy,
}

impl<P: JointPolicy + ?Sized> JointPolicy for Deviation<'_, P> {
    fn num_steps(&self) -> usize {
        self.base.num_steps()
    }

    fn joint_distribution(&self, space: &JointActionSpace, h: usize, s: usize) -> Vec<f64> {
        let rest = self.base.marginal_excluding(space, h, s, self.agent);
        let own = &self.deviation.steps[h][s];
        (0..space.size())
            .map(|j| own[space.action_of(j, self.agent)] * rest[space.rest_index(j, self.agent)])
            .collect()
    }

    fn check_against(&self, game: &RobustMarkovGame) -> Result<()> {
        self.base.check_against(game)
    }
}

/// On-disk policy document accepted by `evaluate`: either a bare mixture, a
/// bare product policy, or a solver output bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicyFile {
    Bundle(PolicyBundle),
    Mixture(MixturePolicy),
    Product(ProductMarkovPolicy),
}

/// What `solve` writes: the correlated mixture and, for two-player
/// zero-sum games, the averaged product policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyBundle {
    pub mixture: MixturePolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_sum_product: Option<ProductMarkovPolicy>,
    pub sample_count: u64,
}
