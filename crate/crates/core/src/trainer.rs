//! Supervised training of the shared network through the unrolled swarm.
//!
//! Each update rolls `n_batch` simulations forward for a window of `ell`
//! steps with the current network, records everything the reverse pass
//! needs on a tape, and backpropagates the oracle cross-entropy through the
//! per-step networks and the message links between them. Messages that
//! entered the window from before it are treated as constants.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comm::{
    assign_all_groups, fanout_outflow, CommBundle, CommState, Groups, InflowMode, Message, Route,
};
use crate::error::{Error, Result};
use crate::eval::{run_trials, EvalConfig, PolicySpec};
use crate::geometry::Vec2;
use crate::nn::{
    clip_grad_norm, cross_entropy_with_logits, softmax, Activation, AdamState, ForwardOutput,
    ForwardRecord, NetShape, PolicyNet,
};
use crate::par;
use crate::policy::{CentralOracle, OracleConfig};
use crate::world::{
    connectivity, is_done, observation_len, observe_all, spawn, step_actions, Task, TaskInstance,
    WorldConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    #[default]
    Sample,
    Argmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Simulations per update.
    pub n_batch: usize,
    /// Window length for truncated backpropagation.
    pub ell: usize,
    pub updates: usize,
    /// Agents per training simulation.
    pub agents: usize,
    /// Message size `n`; zero disables communication.
    pub comm_size: usize,
    pub inflow_mode: InflowMode,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Gradient-norm clip; non-positive disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    /// Run a small evaluation every this many updates (0 = never).
    pub eval_every: usize,
    pub eval_trials: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::rendezvous_default()
    }
}

impl TrainConfig {
    pub fn rendezvous_default() -> Self {
        Self {
            n_batch: 10,
            ell: 6,
            updates: 20_000,
            agents: 10,
            comm_size: 25,
            inflow_mode: InflowMode::Sum,
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 5.0,
            seed: 0,
            eval_every: 0,
            eval_trials: 10,
        }
    }

    pub fn assignment_default() -> Self {
        Self {
            ell: 3,
            updates: 50_000,
            comm_size: 10,
            inflow_mode: InflowMode::Concat,
            hidden: vec![128; 4],
            ..Self::rendezvous_default()
        }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Rendezvous => Self::rendezvous_default(),
            Task::Assignment => Self::assignment_default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.ell == 0 {
            return bad("ell must be >= 1");
        }
        if self.n_batch == 0 {
            return bad("n_batch must be >= 1");
        }
        if self.agents == 0 {
            return bad("agents must be >= 1");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        Ok(())
    }

    pub fn net_shape(&self, task: Task, world: &WorldConfig) -> NetShape {
        NetShape {
            obs_dim: observation_len(task, &world.disc),
            actions: world.disc.len(),
            comm_size: self.comm_size,
            inflow_mode: self.inflow_mode,
            hidden: self.hidden.clone(),
            activation: self.activation,
        }
    }

    pub fn optimizer(&self, param_count: usize) -> AdamState {
        let mut state = AdamState::new(param_count, self.lr);
        state.beta1 = self.beta1;
        state.beta2 = self.beta2;
        state.eps = self.adam_eps;
        state
    }
}

/// One forward pass of the whole swarm at the current state.
#[derive(Debug, Clone)]
pub struct SwarmForward {
    pub observations: Vec<Vec<f64>>,
    pub outputs: Vec<ForwardOutput>,
    /// Per receiver, how its inflow was assembled from last step's messages.
    pub routes: Vec<Vec<Route>>,
    pub groups: Vec<Groups>,
}

/// Runs the shared network for every agent. With `mute` set the inflow is
/// forced to zero and no routing is recorded.
pub fn forward_swarm(
    net: &PolicyNet,
    instance: &TaskInstance,
    comm: &CommState,
    world: &WorldConfig,
    mute: bool,
) -> Result<SwarmForward> {
    let graph = connectivity(instance, world);
    let positions = instance.positions();
    let groups = assign_all_groups(&graph, &positions, &world.disc);
    let observations: Vec<Vec<f64>> = observe_all(instance, &graph, world)
        .iter()
        .map(|o| o.to_f64())
        .collect();
    let shape = net.shape();
    let mut outputs = Vec::with_capacity(instance.len());
    let mut routes = Vec::with_capacity(instance.len());
    for i in 0..instance.len() {
        let (inflow, r) = if mute {
            (
                CommBundle::zeros(shape.inflow_mode, shape.comm_size, shape.actions),
                Vec::new(),
            )
        } else {
            comm.inflow(i, &groups[i])?
        };
        outputs.push(net.forward(&observations[i], &inflow.values)?);
        routes.push(r);
    }
    Ok(SwarmForward {
        observations,
        outputs,
        routes,
        groups,
    })
}

impl SwarmForward {
    pub fn messages(&self, comm_size: usize) -> Result<Vec<Message>> {
        let mut all = Vec::new();
        for (i, out) in self.outputs.iter().enumerate() {
            let bundle = CommBundle::outflow(out.comm_out.clone(), comm_size);
            all.extend(fanout_outflow(i, &bundle, &self.groups[i])?);
        }
        Ok(all)
    }

    pub fn choose_actions(&self, mode: ActionMode, rng: &mut ChaCha8Rng) -> Vec<usize> {
        self.outputs
            .iter()
            .map(|o| {
                let q = softmax(&o.logits);
                match mode {
                    ActionMode::Sample => q.sample(rng),
                    ActionMode::Argmax => q.argmax(),
                }
            })
            .collect()
    }
}

/// Everything recorded for one agent-step sweep of one simulation.
#[derive(Debug, Clone)]
pub struct StepTape {
    pub positions: Vec<Vec2>,
    pub observations: Vec<Vec<f64>>,
    pub records: Vec<ForwardRecord>,
    pub logits: Vec<Vec<f64>>,
    pub routes: Vec<Vec<Route>>,
    pub targets: Vec<usize>,
    pub actions: Vec<usize>,
}

/// One simulation's window. Shorter than `ell` when the episode ended
/// inside the window.
#[derive(Debug, Clone, Default)]
pub struct SimTape {
    pub steps: Vec<StepTape>,
}

impl SimTape {
    pub fn agents(&self) -> usize {
        self.steps.first().map_or(0, |s| s.records.len())
    }

    pub fn agent_steps(&self) -> usize {
        self.steps.iter().map(|s| s.records.len()).sum()
    }

    /// Window objective: mean cross-entropy over all recorded agent-steps.
    pub fn loss(&self) -> f64 {
        let n = self.agent_steps();
        if n == 0 {
            return 0.0;
        }
        let total: f64 = self
            .steps
            .iter()
            .flat_map(|s| s.logits.iter().zip(&s.targets))
            .map(|(z, &t)| cross_entropy_with_logits(z, t).0)
            .sum();
        total / n as f64
    }

    /// Agent-steps whose most likely action equals the oracle's.
    pub fn agreements(&self) -> usize {
        self.steps
            .iter()
            .flat_map(|s| s.logits.iter().zip(&s.targets))
            .filter(|(z, &t)| softmax(z).argmax() == t)
            .count()
    }
}

/// Mixes a base seed with stream coordinates into an independent seed.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(splitmix(splitmix(base) ^ a) ^ b.rotate_left(32))
}

/// A training simulation that lives across windows.
#[derive(Debug, Clone)]
pub struct SimSlot {
    pub slot: usize,
    pub episode: u64,
    pub instance: TaskInstance,
    pub comm: CommState,
    pub t: usize,
    pub finished: bool,
    oracle: CentralOracle,
    rng: ChaCha8Rng,
    seed: u64,
    task: Task,
}

impl SimSlot {
    pub fn new(
        task: Task,
        world: &WorldConfig,
        shape: &NetShape,
        oracle: OracleConfig,
        seed: u64,
        slot: usize,
    ) -> Result<Self> {
        let instance = spawn(task, world, derive_seed(seed, slot as u64, 0))?;
        Ok(Self {
            slot,
            episode: 0,
            comm: CommState::new(instance.len(), shape.comm_size, shape.inflow_mode),
            instance,
            t: 0,
            finished: false,
            oracle: CentralOracle::new(oracle),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed ^ 0xA11C_E5ED, slot as u64, 0)),
            seed,
            task,
        })
    }

    fn restart(&mut self, world: &WorldConfig) -> Result<()> {
        self.episode += 1;
        self.instance = spawn(
            self.task,
            world,
            derive_seed(self.seed, self.slot as u64, self.episode),
        )?;
        self.comm = CommState::new(self.instance.len(), self.comm.n, self.comm.mode);
        self.oracle.reset();
        self.t = 0;
        self.finished = false;
        Ok(())
    }
}

/// Advances one simulation by up to `ell` steps, recording a tape. A
/// finished simulation is replaced with a fresh episode first.
pub fn rollout_window(
    sim: &mut SimSlot,
    net: &PolicyNet,
    world: &WorldConfig,
    ell: usize,
) -> Result<SimTape> {
    if sim.finished || sim.t >= world.max_steps {
        sim.restart(world)?;
    }
    let n = net.shape().comm_size;
    let mut tape = SimTape::default();
    for _ in 0..ell {
        let fw = forward_swarm(net, &sim.instance, &sim.comm, world, false)?;
        let targets = sim.oracle.actions(&sim.instance, world)?;
        let actions = fw.choose_actions(ActionMode::Sample, &mut sim.rng);
        sim.comm.deliver(fw.messages(n)?);
        let positions = sim.instance.positions();
        let SwarmForward {
            observations,
            outputs,
            routes,
            ..
        } = fw;
        let (records, logits) = outputs.into_iter().map(|o| (o.record, o.logits)).unzip();
        tape.steps.push(StepTape {
            positions,
            observations,
            records,
            logits,
            routes,
            targets,
            actions: actions.clone(),
        });
        sim.instance = step_actions(&sim.instance, &actions, world)?;
        sim.t += 1;
        if is_done(&sim.instance, world) || sim.t >= world.max_steps {
            sim.finished = true;
            break;
        }
    }
    Ok(tape)
}

/// Gradient of the tape's window objective with respect to the parameters.
/// Message gradients flow backwards through the recorded routes; inflows
/// at the first step of the window are constants.
pub fn bptt(tape: &SimTape, net: &PolicyNet) -> Vec<f64> {
    let mut grads = net.zero_grads();
    let total = tape.agent_steps();
    if total == 0 {
        return grads;
    }
    let scale = 1.0 / total as f64;
    let shape = net.shape();
    let n = shape.comm_size;
    let out_len = shape.outflow_dim();
    let agents = tape.agents();
    // gradient w.r.t. each agent's outflow at the step being processed
    let mut d_out = vec![vec![0.0; out_len]; agents];
    for (s, st) in tape.steps.iter().enumerate().rev() {
        let mut d_prev = vec![vec![0.0; out_len]; agents];
        for i in 0..st.records.len() {
            let (_, mut d_logits) = cross_entropy_with_logits(&st.logits[i], st.targets[i]);
            d_logits.iter_mut().for_each(|g| *g *= scale);
            let (_, d_inflow) = net.backward(&st.records[i], &d_logits, &d_out[i], &mut grads);
            if s == 0 || n == 0 {
                continue;
            }
            for r in &st.routes[i] {
                let src = &d_inflow[r.block * n..(r.block + 1) * n];
                let dst = &mut d_prev[r.sender][r.sender_group * n..(r.sender_group + 1) * n];
                for (d, g) in dst.iter_mut().zip(src) {
                    *d += r.weight * g;
                }
            }
        }
        d_out = d_prev;
    }
    grads
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub update: usize,
    pub loss: f64,
    pub agreement: f64,
    #[serde(rename = "eval_CR")]
    pub eval_cr: Option<f64>,
    #[serde(rename = "eval_mean_tRV")]
    pub eval_mean_t: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: PolicyNet,
    pub optimizer: AdamState,
    pub metrics: Vec<UpdateMetrics>,
}

/// Result of one optimizer step's worth of rollouts.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    pub agreement: f64,
    pub grads: Vec<f64>,
}

/// Rolls every slot forward one window and returns the batch-mean loss and
/// gradient. Slots are processed in parallel and reduced in slot order.
pub fn batch_gradient(
    slots: &mut [SimSlot],
    net: &PolicyNet,
    world: &WorldConfig,
    ell: usize,
) -> Result<BatchGradient> {
    let per_slot = par::map_mut(slots, |_, sim| -> Result<(f64, usize, usize, Vec<f64>)> {
        let tape = rollout_window(sim, net, world, ell)?;
        let grads = bptt(&tape, net);
        Ok((tape.loss(), tape.agreements(), tape.agent_steps(), grads))
    });
    let mut grads = net.zero_grads();
    let mut loss = 0.0;
    let (mut agree, mut count) = (0usize, 0usize);
    let b = slots.len() as f64;
    for r in per_slot {
        let (l, a, c, g) = r?;
        loss += l / b;
        agree += a;
        count += c;
        for (acc, x) in grads.iter_mut().zip(&g) {
            *acc += x / b;
        }
    }
    Ok(BatchGradient {
        loss,
        agreement: agree as f64 / count.max(1) as f64,
        grads,
    })
}

/// Full training loop. `observer` sees every update's metrics and the
/// network after the step (for streaming logs and periodic checkpoints).
pub fn train(
    task: Task,
    world: &WorldConfig,
    cfg: &TrainConfig,
    oracle: OracleConfig,
    mut observer: impl FnMut(&UpdateMetrics, &PolicyNet, &AdamState) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let world = world.with_agents(cfg.agents);
    world.validate()?;
    let shape = cfg.net_shape(task, &world);
    let mut net = PolicyNet::init(shape.clone(), derive_seed(cfg.seed, u64::MAX, 0));
    let mut optimizer = cfg.optimizer(net.params().len());
    let mut slots = (0..cfg.n_batch)
        .map(|b| SimSlot::new(task, &world, &shape, oracle, cfg.seed, b))
        .collect::<Result<Vec<_>>>()?;
    let mut metrics = Vec::with_capacity(cfg.updates);
    for update in 1..=cfg.updates {
        let mut batch = batch_gradient(&mut slots, &net, &world, cfg.ell)?;
        if !batch.loss.is_finite() || batch.grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                update,
                loss: batch.loss,
            });
        }
        if cfg.grad_clip > 0.0 {
            clip_grad_norm(&mut batch.grads, cfg.grad_clip);
        }
        optimizer.update(net.params_mut(), &batch.grads);
        let (eval_cr, eval_mean_t) = if cfg.eval_every > 0 && update % cfg.eval_every == 0 {
            let spec = PolicySpec::Learned {
                net: net.clone(),
                mute: false,
            };
            let eval_cfg = EvalConfig {
                trials: cfg.eval_trials,
                seed: derive_seed(cfg.seed, 0xE7A1, 0),
                ..EvalConfig::default()
            };
            let summary = run_trials(&spec, task, &world, &eval_cfg)?.summary;
            (Some(summary.convergence_rate), summary.mean_t)
        } else {
            (None, None)
        };
        let m = UpdateMetrics {
            update,
            loss: batch.loss,
            agreement: batch.agreement,
            eval_cr,
            eval_mean_t,
        };
        observer(&m, &net, &optimizer)?;
        metrics.push(m);
    }
    Ok(TrainOutcome {
        net,
        optimizer,
        metrics,
    })
}
