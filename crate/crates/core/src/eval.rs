//! Trials, head-to-head comparisons and inspection of learned messages.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comm::CommState;
use crate::error::{Error, Result};
use crate::geometry::{Discretization, Vec2};
use crate::nn::{softmax, PolicyNet};
use crate::par;
use crate::policy::{averaging_law, circumcenter_law, CentralOracle, OracleConfig};
use crate::trainer::{derive_seed, forward_swarm, train, ActionMode, TrainConfig};
use crate::world::{
    connectivity, is_done, spawn, step_actions, StepRecord, Task, TaskInstance, WorldConfig,
};

/// Who decides the actions during an episode.
#[derive(Debug, Clone)]
pub enum PolicySpec {
    Oracle(OracleConfig),
    Circumcenter,
    Averaging,
    /// Every agent holds its position.
    Stay,
    /// The shared network; `mute` zeroes every inflow.
    Learned {
        net: PolicyNet,
        mute: bool,
    },
}

impl PolicySpec {
    pub fn id(&self) -> &'static str {
        match self {
            PolicySpec::Oracle(_) => "oracle",
            PolicySpec::Circumcenter => "circumcenter",
            PolicySpec::Averaging => "averaging",
            PolicySpec::Stay => "stay",
            PolicySpec::Learned { mute: false, .. } => "learned",
            PolicySpec::Learned { mute: true, .. } => "learned-nocomm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub trials: usize,
    pub seed: u64,
    pub action_mode: ActionMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            trials: 25,
            seed: 0,
            action_mode: ActionMode::Sample,
        }
    }
}

/// One line of a message dump: the block of `sender`'s outflow addressed to
/// its group `group` at step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommRecord {
    pub t: usize,
    pub sender: usize,
    pub group: usize,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeLog {
    pub steps: Vec<StepRecord>,
    pub comm: Vec<CommRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// Step at which the task condition first held.
    pub t_done: Option<usize>,
    pub final_state: TaskInstance,
    pub log: Option<EpisodeLog>,
}

/// Per-agent action selection for one policy, keeping whatever state the
/// policy carries across steps.
struct Controller<'a> {
    spec: &'a PolicySpec,
    oracle: CentralOracle,
    comm: Option<CommState>,
    rng: ChaCha8Rng,
    mode: ActionMode,
}

impl<'a> Controller<'a> {
    fn new(spec: &'a PolicySpec, agents: usize, rng_seed: u64, mode: ActionMode) -> Self {
        let oracle = match spec {
            PolicySpec::Oracle(cfg) => CentralOracle::new(*cfg),
            _ => CentralOracle::default(),
        };
        let comm = match spec {
            PolicySpec::Learned { net, .. } => Some(CommState::new(
                agents,
                net.shape().comm_size,
                net.shape().inflow_mode,
            )),
            _ => None,
        };
        Self {
            spec,
            oracle,
            comm,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            mode,
        }
    }

    fn act(
        &mut self,
        inst: &TaskInstance,
        world: &WorldConfig,
        t: usize,
        dump: Option<&mut Vec<CommRecord>>,
    ) -> Result<Vec<usize>> {
        match self.spec {
            PolicySpec::Oracle(_) => self.oracle.actions(inst, world),
            PolicySpec::Stay => Ok(vec![0; inst.len()]),
            PolicySpec::Circumcenter | PolicySpec::Averaging => {
                let graph = connectivity(inst, world);
                let pos = inst.positions();
                Ok((0..inst.len())
                    .map(|i| {
                        let rel: Vec<Vec2> = graph.neighbours[i]
                            .iter()
                            .map(|&j| pos[j] - pos[i])
                            .collect();
                        let q = match self.spec {
                            PolicySpec::Circumcenter => circumcenter_law(&rel, &world.disc),
                            _ => averaging_law(&rel, &world.disc),
                        };
                        q.argmax()
                    })
                    .collect())
            }
            PolicySpec::Learned { net, mute } => {
                let comm = self
                    .comm
                    .as_mut()
                    .expect("learned policies carry comm state");
                let fw = forward_swarm(net, inst, comm, world, *mute)?;
                let actions = fw.choose_actions(self.mode, &mut self.rng);
                let n = net.shape().comm_size;
                if let (Some(dump), true) = (dump, n > 0) {
                    for (sender, out) in fw.outputs.iter().enumerate() {
                        for (group, block) in out.comm_out.chunks(n).enumerate() {
                            dump.push(CommRecord {
                                t,
                                sender,
                                group,
                                vector: block.to_vec(),
                            });
                        }
                    }
                }
                comm.deliver(fw.messages(n)?);
                Ok(actions)
            }
        }
    }
}

/// Runs one episode from the instance spawned with `seed`. When `record`
/// is set, every state and (for learned policies) every outflow is logged.
pub fn run_episode(
    spec: &PolicySpec,
    task: Task,
    world: &WorldConfig,
    seed: u64,
    mode: ActionMode,
    record: bool,
) -> Result<Episode> {
    let mut inst = spawn(task, world, seed)?;
    let mut ctl = Controller::new(spec, inst.len(), derive_seed(seed, 0xAC7, 1), mode);
    let mut log = record.then(EpisodeLog::default);
    if let Some(log) = log.as_mut() {
        log.steps.push(StepRecord::new(0, &inst, &[], false));
    }
    for t in 1..=world.max_steps {
        let actions = ctl.act(&inst, world, t - 1, log.as_mut().map(|l| &mut l.comm))?;
        inst = step_actions(&inst, &actions, world)?;
        let done = is_done(&inst, world);
        if let Some(log) = log.as_mut() {
            log.steps.push(StepRecord::new(t, &inst, &actions, done));
        }
        if done {
            return Ok(Episode {
                t_done: Some(t),
                final_state: inst,
                log,
            });
        }
    }
    Ok(Episode {
        t_done: None,
        final_state: inst,
        log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub policy: String,
    pub agents: usize,
    pub seed: u64,
    pub converged: bool,
    /// Completion step; absent for failed trials.
    pub t: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub task: Task,
    pub policy: String,
    pub agents: usize,
    pub trials: usize,
    pub successes: usize,
    /// Percentage of trials that converged.
    pub convergence_rate: f64,
    /// Mean completion step over converged trials only.
    pub mean_t: Option<f64>,
}

impl Summary {
    pub fn from_results(task: Task, policy: &str, agents: usize, results: &[TrialResult]) -> Self {
        let done: Vec<f64> = results
            .iter()
            .filter_map(|r| r.t)
            .map(|t| t as f64)
            .collect();
        let trials = results.len();
        Self {
            task,
            policy: policy.to_string(),
            agents,
            trials,
            successes: done.len(),
            convergence_rate: if trials == 0 {
                0.0
            } else {
                100.0 * done.len() as f64 / trials as f64
            },
            mean_t: (!done.is_empty()).then(|| done.iter().sum::<f64>() / done.len() as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSuite {
    pub results: Vec<TrialResult>,
    pub summary: Summary,
}

/// Spawn seed of trial `j` with `agents` agents. Shared by every policy so
/// comparisons start from identical configurations.
pub fn trial_seed(base: u64, agents: usize, j: usize) -> u64 {
    derive_seed(base, agents as u64, j as u64)
}

/// Runs `cfg.trials` seeded episodes in parallel; results are in seed order.
pub fn run_trials(
    spec: &PolicySpec,
    task: Task,
    world: &WorldConfig,
    cfg: &EvalConfig,
) -> Result<TrialSuite> {
    world.validate()?;
    let outcomes = par::map_indexed(cfg.trials, |j| {
        let seed = trial_seed(cfg.seed, world.agents, j);
        run_episode(spec, task, world, seed, cfg.action_mode, false).map(|ep| TrialResult {
            policy: spec.id().to_string(),
            agents: world.agents,
            seed,
            converged: ep.t_done.is_some(),
            t: ep.t_done,
        })
    });
    let results = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = Summary::from_results(task, spec.id(), world.agents, &results);
    Ok(TrialSuite { results, summary })
}

/// One suite per `(policy, K)` pair, policies outermost.
pub fn compare(
    specs: &[PolicySpec],
    agent_counts: &[usize],
    task: Task,
    world: &WorldConfig,
    cfg: &EvalConfig,
) -> Result<Vec<TrialSuite>> {
    let mut out = Vec::with_capacity(specs.len() * agent_counts.len());
    for spec in specs {
        for &k in agent_counts {
            out.push(run_trials(spec, task, &world.with_agents(k), cfg)?);
        }
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Writes `{task}_{policy}_{K}.csv` with per-trial rows and a JSON-lines
/// summary file for every suite. Returns the paths written.
pub fn write_comparison(dir: &Path, suites: &[TrialSuite]) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for suite in suites {
        let s = &suite.summary;
        let path = dir.join(format!("{}_{}_{}.csv", s.task, s.policy, s.agents));
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(f, "policy,agents,seed,converged,t")?;
        for r in &suite.results {
            writeln!(
                f,
                "{},{},{},{},{}",
                r.policy,
                r.agents,
                r.seed,
                r.converged,
                r.t.map(|t| t.to_string()).unwrap_or_default()
            )?;
        }
        f.flush()?;
        written.push(path);
    }
    let table = dir.join("summary.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&table)?);
    writeln!(
        f,
        "task,policy,agents,trials,successes,convergence_rate,mean_t"
    )?;
    for suite in suites {
        let s = &suite.summary;
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            s.task,
            s.policy,
            s.agents,
            s.trials,
            s.successes,
            s.convergence_rate,
            fmt_opt(s.mean_t)
        )?;
    }
    f.flush()?;
    written.push(table);
    let jsonl = dir.join("summary.jsonl");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&jsonl)?);
    for suite in suites {
        writeln!(f, "{}", serde_json::to_string(&suite.summary)?)?;
    }
    f.flush()?;
    written.push(jsonl);
    Ok(written)
}

/// Writes each item as one JSON line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        writeln!(f, "{}", serde_json::to_string(item)?)?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRange {
    pub min: f64,
    pub max: f64,
    pub resolution: usize,
}

impl SweepRange {
    pub fn values(&self) -> Vec<f64> {
        if self.resolution <= 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.resolution - 1) as f64;
        (0..self.resolution)
            .map(|i| self.min + step * i as f64)
            .collect()
    }
}

/// Action probabilities over a grid of two-channel inflows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub observation: Vec<f64>,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    /// `probs[p][i][j]`: probability of action `p` at `(c1[i], c2[j])`.
    pub probs: Vec<Vec<Vec<f64>>>,
}

/// Rendezvous observation with one neighbour in each of two opposite
/// sectors.
pub fn opposite_neighbours_observation(disc: &Discretization) -> Vec<f64> {
    let mut obs = vec![0.0; disc.len()];
    let half = (disc.len() - 1) / 2;
    obs[1] = 1.0;
    obs[1 + half] = 1.0;
    obs
}

/// Evaluates the network on every `(c1, c2)` grid point with the
/// observation held fixed.
pub fn comm_sweep(
    net: &PolicyNet,
    observation: &[f64],
    c1: SweepRange,
    c2: SweepRange,
) -> Result<SweepGrid> {
    let shape = net.shape();
    if shape.inflow_dim() != 2 {
        return Err(Error::ConfigMismatch(format!(
            "communication sweep needs a two-value inflow, network has {}",
            shape.inflow_dim()
        )));
    }
    let (xs, ys) = (c1.values(), c2.values());
    let mut probs = vec![vec![vec![0.0; ys.len()]; xs.len()]; shape.actions];
    for (i, &x) in xs.iter().enumerate() {
        for (j, &y) in ys.iter().enumerate() {
            let out = net.forward(observation, &[x, y])?;
            for (p, q) in softmax(&out.logits).0.into_iter().enumerate() {
                probs[p][i][j] = q;
            }
        }
    }
    Ok(SweepGrid {
        observation: observation.to_vec(),
        c1: xs,
        c2: ys,
        probs,
    })
}

impl SweepGrid {
    /// Largest deviation from 1 of the per-point probability sums.
    pub fn max_sum_error(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.c1.len() {
            for j in 0..self.c2.len() {
                let s: f64 = self.probs.iter().map(|p| p[i][j]).sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
        worst
    }

    /// Mean finite-difference gradient of one action's surface.
    pub fn mean_gradient(&self, p: usize) -> Vec2 {
        let surf = &self.probs[p];
        let (nx, ny) = (self.c1.len(), self.c2.len());
        let mut g = Vec2::ZERO;
        let mut count = 0.0;
        for i in 0..nx.saturating_sub(1) {
            for j in 0..ny.saturating_sub(1) {
                let dx = (surf[i + 1][j] - surf[i][j]) / (self.c1[i + 1] - self.c1[i]);
                let dy = (surf[i][j + 1] - surf[i][j]) / (self.c2[j + 1] - self.c2[j]);
                g += Vec2::new(dx, dy);
                count += 1.0;
            }
        }
        if count > 0.0 {
            g / count
        } else {
            g
        }
    }

    /// Per sector: cosine between the surface's mean ascent direction and
    /// the direction opposite to the sector's action offset. Entry 0 (the
    /// central component) is `None`.
    pub fn directional_trend(&self, disc: &Discretization) -> Vec<Option<f64>> {
        let offsets = disc.action_offsets();
        (0..self.probs.len())
            .map(|p| {
                if p == 0 || p >= offsets.len() {
                    return None;
                }
                let g = self.mean_gradient(p);
                let opp = -offsets[p];
                let denom = g.norm() * opp.norm();
                (denom > 0.0).then(|| g.dot(opp) / denom)
            })
            .collect()
    }

    /// One CSV per action: header row of `c2` values, then one row per `c1`.
    pub fn write_csv(&self, dir: &Path, prefix: &str) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for (p, surf) in self.probs.iter().enumerate() {
            let path = dir.join(format!("{prefix}_q{}.csv", p + 1));
            let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
            let header: Vec<String> = self.c2.iter().map(|y| y.to_string()).collect();
            writeln!(f, "c1\\c2,{}", header.join(","))?;
            for (i, row) in surf.iter().enumerate() {
                let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(f, "{},{}", self.c1[i], vals.join(","))?;
            }
            f.flush()?;
            paths.push(path);
        }
        Ok(paths)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeStudyRow {
    pub comm_size: usize,
    pub summary: Summary,
}

/// Trains one network per message size with a shared budget and evaluates
/// each on the same trial seeds.
pub fn comm_size_study(
    sizes: &[usize],
    task: Task,
    world: &WorldConfig,
    train_cfg: &TrainConfig,
    oracle: OracleConfig,
    eval_cfg: &EvalConfig,
) -> Result<Vec<SizeStudyRow>> {
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let cfg = TrainConfig {
            comm_size: n,
            ..train_cfg.clone()
        };
        let net = train(task, world, &cfg, oracle, |_, _, _| Ok(()))?.net;
        let spec = PolicySpec::Learned { net, mute: false };
        let summary = run_trials(&spec, task, world, eval_cfg)?.summary;
        rows.push(SizeStudyRow {
            comm_size: n,
            summary,
        });
    }
    Ok(rows)
}
