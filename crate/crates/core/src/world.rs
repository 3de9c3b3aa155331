//! Discrete-time simulation of PD-controlled double-integrator agents.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Discretization, Vec2};

/// Upper bound on candidate draws while spawning one instance.
pub const SPAWN_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Rendezvous,
    Assignment,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Rendezvous => "rendezvous",
            Task::Assignment => "assignment",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentState {
    pub pos: Vec2,
    pub vel: Vec2,
}

/// Inverse-distance repulsion between nearby agents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialField {
    pub enabled: bool,
    pub repulse_radius: f64,
    pub repulse_gain: f64,
    /// Cap on the magnitude of the summed repulsive acceleration.
    pub max_accel: f64,
}

impl Default for PotentialField {
    fn default() -> Self {
        Self {
            enabled: false,
            repulse_radius: 0.5,
            repulse_gain: 1.0,
            max_accel: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    /// Number of agents (and targets, for the assignment task).
    pub agents: usize,
    pub d_lim: f64,
    pub dt: f64,
    pub kp: f64,
    pub kd: f64,
    /// Rendezvous: largest admissible pairwise distance. Assignment: cover radius.
    pub epsilon: f64,
    /// Episode length `L`.
    pub max_steps: usize,
    /// Agents per unit area of the spawn disk.
    pub density: f64,
    pub disc: Discretization,
    pub potential_field: PotentialField,
    pub seed: u64,
}

impl WorldConfig {
    pub fn rendezvous_default() -> Self {
        let d_lim = 2.0;
        Self {
            agents: 10,
            d_lim,
            dt: 0.1,
            kp: 4.0,
            kd: 4.0,
            epsilon: 1.3,
            max_steps: 300,
            density: 10.0 / 36.0,
            disc: Discretization::default_for(d_lim),
            potential_field: PotentialField::default(),
            seed: 0,
        }
    }

    pub fn assignment_default() -> Self {
        Self {
            epsilon: 0.7,
            potential_field: PotentialField {
                enabled: true,
                ..PotentialField::default()
            },
            ..Self::rendezvous_default()
        }
    }

    pub fn with_agents(&self, agents: usize) -> Self {
        Self {
            agents,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.disc.validate()?;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.agents == 0 {
            return bad("agents must be >= 1".into());
        }
        if (self.disc.d_lim - self.d_lim).abs() > 1e-12 {
            return bad(format!(
                "discretization range {} differs from d_lim {}",
                self.disc.d_lim, self.d_lim
            ));
        }
        if !(self.dt > 0.0 && self.kp > 0.0 && self.kd > 0.0) {
            return bad("dt, kp and kd must be positive".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < self.d_lim) {
            return bad(format!("epsilon {} must lie in (0, d_lim)", self.epsilon));
        }
        if self.potential_field.repulse_radius >= self.d_lim {
            return bad("repulse_radius must be below d_lim".into());
        }
        if !(self.density > 0.0) {
            return bad("density must be positive".into());
        }
        if self.max_steps == 0 {
            return bad("max_steps must be >= 1".into());
        }
        Ok(())
    }

    /// Radius of the spawn disk giving the configured density.
    pub fn spawn_radius(&self) -> f64 {
        (self.agents as f64 / (PI * self.density)).sqrt()
    }
}

/// Agents, optional target points, and which targets are currently covered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub agents: Vec<AgentState>,
    pub targets: Option<Vec<Vec2>>,
    pub covered: Vec<bool>,
}

impl TaskInstance {
    pub fn at_rest(positions: &[Vec2]) -> Self {
        Self {
            agents: positions
                .iter()
                .map(|&pos| AgentState {
                    pos,
                    vel: Vec2::ZERO,
                })
                .collect(),
            targets: None,
            covered: Vec::new(),
        }
    }

    pub fn with_targets(positions: &[Vec2], targets: &[Vec2], epsilon: f64) -> Self {
        let mut inst = Self::at_rest(positions);
        inst.targets = Some(targets.to_vec());
        inst.refresh_covered(epsilon);
        inst
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.agents.iter().map(|a| a.pos).collect()
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn task(&self) -> Task {
        if self.targets.is_some() {
            Task::Assignment
        } else {
            Task::Rendezvous
        }
    }

    fn refresh_covered(&mut self, epsilon: f64) {
        self.covered = match &self.targets {
            Some(targets) => targets
                .iter()
                .map(|&t| self.agents.iter().any(|a| a.pos.distance(t) < epsilon))
                .collect(),
            None => Vec::new(),
        };
    }
}

/// Visibility graph over agents, plus agent-to-target visibility when the
/// instance has targets. Neighbour lists are sorted and exclude the agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectivityGraph {
    pub neighbours: Vec<Vec<usize>>,
    pub visible_targets: Option<Vec<Vec<usize>>>,
}

impl ConnectivityGraph {
    pub fn degree(&self, i: usize) -> usize {
        self.neighbours[i].len()
    }

    pub fn is_connected(&self) -> bool {
        is_connected(&self.neighbours)
    }
}

/// Breadth-first connectivity check on adjacency lists.
pub fn is_connected(adjacency: &[Vec<usize>]) -> bool {
    if adjacency.is_empty() {
        return true;
    }
    let mut seen = vec![false; adjacency.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == adjacency.len()
}

fn proximity_lists(points: &[Vec2], d_lim: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if points[i].distance(points[j]) <= d_lim {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    adj
}

pub fn connectivity(instance: &TaskInstance, cfg: &WorldConfig) -> ConnectivityGraph {
    let positions = instance.positions();
    let neighbours = proximity_lists(&positions, cfg.d_lim);
    let visible_targets = instance.targets.as_ref().map(|targets| {
        positions
            .iter()
            .map(|&p| {
                targets
                    .iter()
                    .enumerate()
                    .filter(|(_, &t)| t.distance(p) <= cfg.d_lim)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect()
    });
    ConnectivityGraph {
        neighbours,
        visible_targets,
    }
}

/// Discretized local view: per-component neighbour counts, followed for the
/// assignment task by covered-target and uncovered-target counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub counts: Vec<u32>,
}

impl Observation {
    pub fn to_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Length of the observation vector for a task.
pub fn observation_len(task: Task, disc: &Discretization) -> usize {
    match task {
        Task::Rendezvous => disc.len(),
        Task::Assignment => 3 * disc.len(),
    }
}

pub fn observe(
    instance: &TaskInstance,
    graph: &ConnectivityGraph,
    agent: usize,
    cfg: &WorldConfig,
) -> Observation {
    let p = cfg.disc.len();
    let me = instance.agents[agent].pos;
    let with_targets = instance.targets.is_some();
    let mut counts = vec![0u32; if with_targets { 3 * p } else { p }];
    for &j in &graph.neighbours[agent] {
        if let Some(c) = cfg.disc.sector_index(instance.agents[j].pos - me) {
            counts[c] += 1;
        }
    }
    if let (Some(targets), Some(visible)) = (&instance.targets, &graph.visible_targets) {
        for &j in &visible[agent] {
            if let Some(c) = cfg.disc.sector_index(targets[j] - me) {
                let block = if instance.covered[j] { 1 } else { 2 };
                counts[block * p + c] += 1;
            }
        }
    }
    Observation { counts }
}

pub fn observe_all(
    instance: &TaskInstance,
    graph: &ConnectivityGraph,
    cfg: &WorldConfig,
) -> Vec<Observation> {
    (0..instance.len())
        .map(|i| observe(instance, graph, i, cfg))
        .collect()
}

fn repulsion(instance: &TaskInstance, agent: usize, field: &PotentialField) -> Vec2 {
    let me = instance.agents[agent].pos;
    let mut acc = Vec2::ZERO;
    for (j, other) in instance.agents.iter().enumerate() {
        if j == agent {
            continue;
        }
        let away = me - other.pos;
        let d = away.norm();
        if d < 1e-12 || d >= field.repulse_radius {
            continue;
        }
        acc += away * (field.repulse_gain * (1.0 / d - 1.0 / field.repulse_radius) / d);
    }
    acc.clamp_norm(field.max_accel)
}

/// Advances the world by one step. `setpoints[i]` is agent `i`'s desired
/// position relative to its current position.
pub fn step(
    instance: &TaskInstance,
    setpoints: &[Vec2],
    cfg: &WorldConfig,
) -> Result<TaskInstance> {
    if setpoints.len() != instance.len() {
        return Err(Error::ActionCountMismatch {
            expected: instance.len(),
            got: setpoints.len(),
        });
    }
    let mut next = instance.clone();
    for (i, agent) in next.agents.iter_mut().enumerate() {
        let mut accel = setpoints[i] * cfg.kp - agent.vel * cfg.kd;
        if cfg.potential_field.enabled {
            accel += repulsion(instance, i, &cfg.potential_field);
        }
        // semi-implicit Euler
        agent.vel += accel * cfg.dt;
        agent.pos += agent.vel * cfg.dt;
    }
    next.refresh_covered(cfg.epsilon);
    Ok(next)
}

/// Steps with discrete action indices into the configured offsets.
pub fn step_actions(
    instance: &TaskInstance,
    actions: &[usize],
    cfg: &WorldConfig,
) -> Result<TaskInstance> {
    let offsets = cfg.disc.action_offsets();
    let setpoints: Vec<Vec2> = actions.iter().map(|&a| offsets[a]).collect();
    step(instance, &setpoints, cfg)
}

pub fn max_pairwise_distance(positions: &[Vec2]) -> f64 {
    let mut best = 0.0_f64;
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            best = best.max(positions[i].distance(positions[j]));
        }
    }
    best
}

pub fn rendezvous_done(instance: &TaskInstance, cfg: &WorldConfig) -> bool {
    max_pairwise_distance(&instance.positions()) <= cfg.epsilon
}

pub fn assignment_done(instance: &TaskInstance) -> bool {
    instance.covered.iter().all(|&c| c)
}

pub fn is_done(instance: &TaskInstance, cfg: &WorldConfig) -> bool {
    match instance.task() {
        Task::Rendezvous => rendezvous_done(instance, cfg),
        Task::Assignment => assignment_done(instance),
    }
}

fn sample_in_disk(rng: &mut ChaCha8Rng, radius: f64) -> Vec2 {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = rng.random::<f64>() * 2.0 * PI;
    Vec2::from_polar(r, theta)
}

/// Places `count` points in a disk so that each new point lies within
/// `d_lim` of an earlier one. Consumes from `budget`.
fn spawn_connected(
    rng: &mut ChaCha8Rng,
    count: usize,
    radius: f64,
    d_lim: f64,
    budget: &mut usize,
) -> Option<Vec<Vec2>> {
    let mut pts: Vec<Vec2> = Vec::with_capacity(count);
    while pts.len() < count {
        if *budget == 0 {
            return None;
        }
        *budget -= 1;
        let cand = sample_in_disk(rng, radius);
        if pts.is_empty() || pts.iter().any(|p| p.distance(cand) <= d_lim) {
            pts.push(cand);
        }
    }
    Some(pts)
}

/// Random rendezvous instance with a connected initial visibility graph.
pub fn spawn_rendezvous(cfg: &WorldConfig, seed: u64) -> Result<TaskInstance> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut budget = SPAWN_ATTEMPTS;
    let radius = cfg.spawn_radius();
    let pts = spawn_connected(&mut rng, cfg.agents, radius, cfg.d_lim, &mut budget).ok_or(
        Error::SpawnFailed {
            attempts: SPAWN_ATTEMPTS,
        },
    )?;
    Ok(TaskInstance::at_rest(&pts))
}

/// Random assignment instance: agent graph and target graph both connected,
/// and at least one agent sees a target.
pub fn spawn_assignment(cfg: &WorldConfig, seed: u64) -> Result<TaskInstance> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut budget = SPAWN_ATTEMPTS;
    let radius = cfg.spawn_radius();
    let fail = Error::SpawnFailed {
        attempts: SPAWN_ATTEMPTS,
    };
    loop {
        let Some(agents) = spawn_connected(&mut rng, cfg.agents, radius, cfg.d_lim, &mut budget)
        else {
            return Err(fail);
        };
        let Some(targets) = spawn_connected(&mut rng, cfg.agents, radius, cfg.d_lim, &mut budget)
        else {
            return Err(fail);
        };
        let sees_target = agents
            .iter()
            .any(|a| targets.iter().any(|t| a.distance(*t) <= cfg.d_lim));
        if sees_target {
            return Ok(TaskInstance::with_targets(&agents, &targets, cfg.epsilon));
        }
        if budget == 0 {
            return Err(fail);
        }
        budget -= 1;
    }
}

pub fn spawn(task: Task, cfg: &WorldConfig, seed: u64) -> Result<TaskInstance> {
    match task {
        Task::Rendezvous => spawn_rendezvous(cfg, seed),
        Task::Assignment => spawn_assignment(cfg, seed),
    }
}

/// One line of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    pub actions: Vec<usize>,
    pub covered_mask: Vec<bool>,
    pub done: bool,
}

impl StepRecord {
    pub fn new(t: usize, instance: &TaskInstance, actions: &[usize], done: bool) -> Self {
        Self {
            t,
            positions: instance.agents.iter().map(|a| [a.pos.x, a.pos.y]).collect(),
            velocities: instance.agents.iter().map(|a| [a.vel.x, a.vel.y]).collect(),
            actions: actions.to_vec(),
            covered_mask: instance.covered.clone(),
            done,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> WorldConfig {
        WorldConfig::rendezvous_default()
    }

    #[test]
    fn single_agent_spawn() {
        let inst = spawn_rendezvous(&cfg().with_agents(1), 3).unwrap();
        assert_eq!(inst.len(), 1);
        assert!(connectivity(&inst, &cfg()).is_connected());
    }

    #[test]
    fn spawn_is_deterministic() {
        let a = spawn_rendezvous(&cfg(), 42).unwrap();
        let b = spawn_rendezvous(&cfg(), 42).unwrap();
        assert_eq!(a, b);
        let c = spawn_rendezvous(&cfg(), 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn spawned_rendezvous_graphs_are_connected() {
        let c = cfg();
        for seed in 0..100 {
            let inst = spawn_rendezvous(&c, seed).unwrap();
            assert_eq!(inst.len(), 10);
            let adj = proximity_lists(&inst.positions(), c.d_lim);
            assert!(is_connected(&adj), "seed {seed}");
        }
    }

    #[test]
    fn spawned_assignment_instances_are_valid() {
        let c = WorldConfig::assignment_default();
        for seed in 0..100 {
            let inst = spawn_assignment(&c, seed).unwrap();
            let targets = inst.targets.as_ref().unwrap();
            assert_eq!(targets.len(), inst.len());
            assert!(is_connected(&proximity_lists(&inst.positions(), c.d_lim)));
            assert!(is_connected(&proximity_lists(targets, c.d_lim)));
            let g = connectivity(&inst, &c);
            assert!(g.visible_targets.unwrap().iter().any(|v| !v.is_empty()));
        }
    }

    #[test]
    fn connectivity_boundary_is_inclusive() {
        let c = cfg();
        let inst = TaskInstance::at_rest(&[Vec2::ZERO, Vec2::new(2.0, 0.0)]);
        assert_eq!(connectivity(&inst, &c).neighbours, vec![vec![1], vec![0]]);
        let inst = TaskInstance::at_rest(&[Vec2::ZERO, Vec2::new(2.0 + 1e-9, 0.0)]);
        assert!(connectivity(&inst, &c)
            .neighbours
            .iter()
            .all(|n| n.is_empty()));
    }

    #[test]
    fn observation_examples() {
        let c = cfg();
        let inst = TaskInstance::at_rest(&[Vec2::ZERO]);
        let g = connectivity(&inst, &c);
        assert_eq!(observe(&inst, &g, 0, &c).counts, vec![0; 9]);

        let inst = TaskInstance::at_rest(&[Vec2::ZERO, Vec2::new(1.2, 0.0)]);
        let g = connectivity(&inst, &c);
        let mut expected = vec![0; 9];
        expected[1] = 1;
        assert_eq!(observe(&inst, &g, 0, &c).counts, expected);
    }

    #[test]
    fn assignment_observation_blocks() {
        let c = WorldConfig::assignment_default();
        // target right under the agent is covered and sits in component 0;
        // a second target east of the agent is uncovered
        let inst = TaskInstance::with_targets(
            &[Vec2::ZERO],
            &[Vec2::new(0.1, 0.0), Vec2::new(1.5, 0.0)],
            c.epsilon,
        );
        assert_eq!(inst.covered, vec![true, false]);
        let g = connectivity(&inst, &c);
        let obs = observe(&inst, &g, 0, &c);
        assert_eq!(obs.len(), 27);
        assert_eq!(obs.counts[9], 1);
        assert_eq!(obs.counts[18 + 1], 1);
        assert_eq!(obs.counts.iter().sum::<u32>(), 2);
    }

    #[test]
    fn step_examples() {
        let c = WorldConfig {
            kp: 1.0,
            kd: 0.0,
            dt: 0.1,
            ..cfg()
        };
        let inst = TaskInstance::at_rest(&[Vec2::ZERO]);
        let still = step(&inst, &[Vec2::ZERO], &c).unwrap();
        assert_eq!(still, inst);
        let moved = step(&inst, &[Vec2::new(1.0, 0.0)], &c).unwrap();
        assert!((moved.agents[0].vel.x - 0.1).abs() < 1e-15);
        assert!((moved.agents[0].pos.x - 0.01).abs() < 1e-15);
        assert!(matches!(
            step(&inst, &[], &c),
            Err(Error::ActionCountMismatch {
                expected: 1,
                got: 0
            })
        ));
    }

    #[test]
    fn pd_tracks_fixed_goal() {
        let c = cfg();
        let goal = Vec2::new(1.0, -0.5);
        let mut inst = TaskInstance::at_rest(&[Vec2::ZERO]);
        let mut envelope = f64::INFINITY;
        for t in 0..500 {
            let err = goal - inst.agents[0].pos;
            if t >= 10 {
                // critically damped: no overshoot, error shrinks monotonically
                assert!(err.norm() <= envelope + 1e-12);
            }
            envelope = err.norm();
            inst = step(&inst, &[err], &c).unwrap();
        }
        assert!((goal - inst.agents[0].pos).norm() < 1e-3);
    }

    #[test]
    fn done_conditions() {
        let c = cfg();
        let inst = TaskInstance::at_rest(&[Vec2::new(1.0, 1.0); 4]);
        assert!(rendezvous_done(&inst, &c));
        let inst = TaskInstance::at_rest(&[Vec2::ZERO, Vec2::new(c.epsilon + 1e-6, 0.0)]);
        assert!(!rendezvous_done(&inst, &c));
        let inst = TaskInstance::with_targets(&[Vec2::ZERO], &[Vec2::new(0.1, 0.0)], 0.3);
        assert!(assignment_done(&inst));
    }

    #[test]
    fn repulsion_pushes_apart() {
        let c = WorldConfig::assignment_default();
        let inst = TaskInstance::at_rest(&[Vec2::ZERO, Vec2::new(0.2, 0.0)]);
        let next = step(&inst, &[Vec2::ZERO, Vec2::ZERO], &c).unwrap();
        assert!(next.agents[0].vel.x < 0.0 && next.agents[1].vel.x > 0.0);
        assert!(next.agents[0].vel.norm() <= c.potential_field.max_accel * c.dt + 1e-12);
    }

    proptest! {
        #[test]
        fn graph_symmetry_and_observation_conservation(seed in 0u64..500, k in 1usize..20) {
            let c = cfg().with_agents(k);
            let inst = spawn_rendezvous(&c, seed).unwrap();
            let g = connectivity(&inst, &c);
            let pos = inst.positions();
            for i in 0..k {
                for j in 0..k {
                    let brute = i != j && pos[i].distance(pos[j]) <= c.d_lim;
                    prop_assert_eq!(g.neighbours[i].contains(&j), brute);
                }
                let obs = observe(&inst, &g, i, &c);
                prop_assert_eq!(obs.counts.iter().sum::<u32>() as usize, g.degree(i));
            }
        }

        #[test]
        fn cover_mask_matches_definition(seed in 0u64..200) {
            let c = WorldConfig::assignment_default().with_agents(5);
            let mut inst = spawn_assignment(&c, seed).unwrap();
            let offsets = c.disc.action_offsets();
            for t in 0..20usize {
                let acts: Vec<Vec2> = (0..5).map(|i| offsets[(i + t) % 9]).collect();
                inst = step(&inst, &acts, &c).unwrap();
                let targets = inst.targets.clone().unwrap();
                for (j, tp) in targets.iter().enumerate() {
                    let min = inst.agents.iter().map(|a| a.pos.distance(*tp)).fold(f64::INFINITY, f64::min);
                    prop_assert_eq!(inst.covered[j], min < c.epsilon);
                }
            }
        }
    }
}
