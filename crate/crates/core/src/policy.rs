//! Decision makers: centralized oracles used as teachers, hand-designed
//! distributed baselines, and the adapter around the learned network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::comm::{CommBundle, InflowMode};
use crate::error::{Error, Result};
use crate::geometry::{smallest_enclosing_circle, Discretization, Vec2};
use crate::nn::PolicyNet;
use crate::world::{TaskInstance, WorldConfig};

/// Probabilities over the `P` discrete actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution(pub Vec<f64>);

impl ActionDistribution {
    pub fn one_hot(len: usize, index: usize) -> Self {
        let mut v = vec![0.0; len];
        v[index] = 1.0;
        Self(v)
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Inverse-CDF sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &p) in self.0.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // rounding left u above the running total
        self.0.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

/// Offset nearest to `goal` (relative to the agent). Lowest index wins ties.
pub fn nearest_action(goal: Vec2, offsets: &[Vec2]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (p, &o) in offsets.iter().enumerate() {
        let d = (goal - o).norm();
        if d < best_d {
            best = p;
            best_d = d;
        }
    }
    best
}

/// Everyone heads for the center of the smallest circle around the swarm.
pub fn oracle_rendezvous(
    positions: &[Vec2],
    disc: &Discretization,
) -> Result<Vec<ActionDistribution>> {
    let center = smallest_enclosing_circle(positions)?.center;
    let offsets = disc.action_offsets();
    Ok(positions
        .iter()
        .map(|&p| ActionDistribution::one_hot(offsets.len(), nearest_action(center - p, &offsets)))
        .collect())
}

/// Pursue the center of the smallest circle around the agent and the
/// neighbours it sees. Relative positions are with respect to the agent.
pub fn circumcenter_law(neighbours: &[Vec2], disc: &Discretization) -> ActionDistribution {
    let mut pts = Vec::with_capacity(neighbours.len() + 1);
    pts.push(Vec2::ZERO);
    pts.extend_from_slice(neighbours);
    let center = smallest_enclosing_circle(&pts).expect("non-empty").center;
    let offsets = disc.action_offsets();
    ActionDistribution::one_hot(offsets.len(), nearest_action(center, &offsets))
}

/// Pursue the mean position of the agent and its neighbours.
pub fn averaging_law(neighbours: &[Vec2], disc: &Discretization) -> ActionDistribution {
    let sum = neighbours.iter().fold(Vec2::ZERO, |acc, &p| acc + p);
    let mean = sum / (neighbours.len() + 1) as f64;
    let offsets = disc.action_offsets();
    ActionDistribution::one_hot(offsets.len(), nearest_action(mean, &offsets))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentObjective {
    /// Minimize the largest agent-to-target distance, then the total.
    #[default]
    Bottleneck,
    /// Minimize the total distance.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub assignment_objective: AssignmentObjective,
    /// Re-solve the matching at every step instead of once per episode.
    pub reassign_every_step: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            assignment_objective: AssignmentObjective::Bottleneck,
            reassign_every_step: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `perm[agent] = target`.
    pub perm: Vec<usize>,
    pub bottleneck: f64,
    pub total: f64,
}

fn distance_matrix(agents: &[Vec2], targets: &[Vec2]) -> Vec<Vec<f64>> {
    agents
        .iter()
        .map(|a| targets.iter().map(|t| a.distance(*t)).collect())
        .collect()
}

/// Kuhn's augmenting-path matching restricted to edges with cost `<= limit`.
/// Returns `true` when every row can be matched.
fn has_perfect_matching(cost: &[Vec<f64>], limit: f64) -> bool {
    fn augment(
        u: usize,
        cost: &[Vec<f64>],
        limit: f64,
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for v in 0..cost.len() {
            if cost[u][v] <= limit && !seen[v] {
                seen[v] = true;
                if owner[v].is_none_or(|w| augment(w, cost, limit, seen, owner)) {
                    owner[v] = Some(u);
                    return true;
                }
            }
        }
        false
    }
    let n = cost.len();
    let mut owner = vec![None; n];
    (0..n).all(|u| {
        let mut seen = vec![false; n];
        augment(u, cost, limit, &mut seen, &mut owner)
    })
}

/// Minimum-cost perfect matching (Hungarian method with potentials).
/// Returns `assign[row] = col`.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based arrays; index 0 is the virtual column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

fn finish(perm: Vec<usize>, cost: &[Vec<f64>]) -> Assignment {
    let bottleneck = perm
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .fold(0.0, f64::max);
    let total = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Assignment {
        perm,
        bottleneck,
        total,
    }
}

fn check_sizes(agents: &[Vec2], targets: &[Vec2]) -> Result<()> {
    if agents.len() != targets.len() || agents.is_empty() {
        return Err(Error::SizeMismatch {
            agents: agents.len(),
            targets: targets.len(),
        });
    }
    Ok(())
}

/// Perfect matching minimizing the largest agent-to-target distance; among
/// those, the one with the smallest total distance.
pub fn bottleneck_assignment(agents: &[Vec2], targets: &[Vec2]) -> Result<Assignment> {
    check_sizes(agents, targets)?;
    let cost = distance_matrix(agents, targets);
    let mut values: Vec<f64> = cost.iter().flatten().copied().collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    // smallest threshold admitting a perfect matching
    let (mut lo, mut hi) = (0usize, values.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if has_perfect_matching(&cost, values[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let limit = values[lo];
    let max_d = values[values.len() - 1];
    let forbidden = (agents.len() as f64 + 1.0) * (max_d + 1.0) * 4.0;
    let restricted: Vec<Vec<f64>> = cost
        .iter()
        .map(|row| {
            row.iter()
                .map(|&c| if c <= limit { c } else { forbidden })
                .collect()
        })
        .collect();
    Ok(finish(hungarian(&restricted), &cost))
}

/// Perfect matching minimizing the total agent-to-target distance.
pub fn sum_assignment(agents: &[Vec2], targets: &[Vec2]) -> Result<Assignment> {
    check_sizes(agents, targets)?;
    let cost = distance_matrix(agents, targets);
    Ok(finish(hungarian(&cost), &cost))
}

pub fn solve_assignment(
    agents: &[Vec2],
    targets: &[Vec2],
    objective: AssignmentObjective,
) -> Result<Assignment> {
    match objective {
        AssignmentObjective::Bottleneck => bottleneck_assignment(agents, targets),
        AssignmentObjective::Sum => sum_assignment(agents, targets),
    }
}

/// Each agent heads for its assigned target and stays once within `epsilon`.
pub fn oracle_assignment(
    positions: &[Vec2],
    targets: &[Vec2],
    assignment: &Assignment,
    disc: &Discretization,
    epsilon: f64,
) -> Vec<ActionDistribution> {
    let offsets = disc.action_offsets();
    positions
        .iter()
        .zip(&assignment.perm)
        .map(|(&p, &j)| {
            let goal = targets[j] - p;
            let a = if goal.norm() < epsilon {
                0
            } else {
                nearest_action(goal, &offsets)
            };
            ActionDistribution::one_hot(offsets.len(), a)
        })
        .collect()
}

/// Centralized teacher with global view, for either task. Holds the
/// assignment between steps when re-solving is disabled.
#[derive(Debug, Clone, Default)]
pub struct CentralOracle {
    pub cfg: OracleConfig,
    assignment: Option<Assignment>,
}

impl CentralOracle {
    pub fn new(cfg: OracleConfig) -> Self {
        Self {
            cfg,
            assignment: None,
        }
    }

    /// Forget any cached assignment (call on episode restart).
    pub fn reset(&mut self) {
        self.assignment = None;
    }

    pub fn distributions(
        &mut self,
        instance: &TaskInstance,
        world: &WorldConfig,
    ) -> Result<Vec<ActionDistribution>> {
        let positions = instance.positions();
        match &instance.targets {
            None => oracle_rendezvous(&positions, &world.disc),
            Some(targets) => {
                if self.cfg.reassign_every_step || self.assignment.is_none() {
                    self.assignment = Some(solve_assignment(
                        &positions,
                        targets,
                        self.cfg.assignment_objective,
                    )?);
                }
                let assignment = self.assignment.as_ref().expect("just set");
                Ok(oracle_assignment(
                    &positions,
                    targets,
                    assignment,
                    &world.disc,
                    world.epsilon,
                ))
            }
        }
    }

    /// Target action index per agent.
    pub fn actions(&mut self, instance: &TaskInstance, world: &WorldConfig) -> Result<Vec<usize>> {
        Ok(self
            .distributions(instance, world)?
            .iter()
            .map(|q| q.argmax())
            .collect())
    }
}

/// Runs the shared network for one agent-step and splits its output into an
/// action distribution and the outgoing per-group messages.
pub fn learned_policy(
    obs: &[f64],
    inflow: &CommBundle,
    net: &PolicyNet,
) -> Result<(ActionDistribution, CommBundle)> {
    let out = net.forward(obs, &inflow.values)?;
    Ok((
        crate::nn::softmax(&out.logits),
        CommBundle::outflow(out.comm_out, net.shape().comm_size),
    ))
}

/// Inflow mode expected by a network, for building zero inflows.
pub fn inflow_mode_of(net: &PolicyNet) -> InflowMode {
    net.shape().inflow_mode
}
