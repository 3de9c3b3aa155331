//! Reference implementations shared by the integration and acceptance
//! suites. Everything here is written independently of the library code it
//! checks.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swarmcomm::comm::InflowMode;
use swarmcomm::nn::{NetShape, PolicyNet};
use swarmcomm::policy::OracleConfig;
use swarmcomm::trainer::{rollout_window, SimSlot, SimTape};
use swarmcomm::world::{observation_len, Task, WorldConfig};
use swarmcomm::{Circle, Vec2};

pub fn random_points(rng: &mut ChaCha8Rng, k: usize, spread: f64) -> Vec<Vec2> {
    (0..k)
        .map(|_| {
            Vec2::new(
                rng.random_range(-spread..spread),
                rng.random_range(-spread..spread),
            )
        })
        .collect()
}

/// Smallest circle over every pair-diameter and triple-circumcircle candidate.
pub fn brute_force_circle(points: &[Vec2]) -> Circle {
    if points.len() == 1 {
        return Circle::new(points[0], 0.0);
    }
    let covers = |c: Vec2, r: f64| points.iter().all(|&p| c.distance(p) <= r + 1e-9);
    let mut best = (Vec2::ZERO, f64::INFINITY);
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            let c = (points[i] + points[j]) * 0.5;
            let r = c.distance(points[i]);
            if r < best.1 && covers(c, r) {
                best = (c, r);
            }
            for k in j + 1..n {
                let (a, b, q) = (points[i], points[j], points[k]);
                let d = 2.0 * (a.x * (b.y - q.y) + b.x * (q.y - a.y) + q.x * (a.y - b.y));
                if d.abs() < 1e-12 {
                    continue;
                }
                let (aa, bb, qq) = (a.norm_sq(), b.norm_sq(), q.norm_sq());
                let c = Vec2::new(
                    (aa * (b.y - q.y) + bb * (q.y - a.y) + qq * (a.y - b.y)) / d,
                    (aa * (q.x - b.x) + bb * (a.x - q.x) + qq * (b.x - a.x)) / d,
                );
                let r = c.distance(a);
                if r < best.1 && covers(c, r) {
                    best = (c, r);
                }
            }
        }
    }
    Circle::new(best.0, best.1)
}

/// Minimum over all K! permutations of the largest matched distance.
pub fn exhaustive_bottleneck(agents: &[Vec2], targets: &[Vec2]) -> f64 {
    fn rec(
        i: usize,
        agents: &[Vec2],
        targets: &[Vec2],
        used: &mut [bool],
        cur: f64,
        best: &mut f64,
    ) {
        if i == agents.len() {
            *best = best.min(cur);
            return;
        }
        for j in 0..targets.len() {
            if !used[j] {
                used[j] = true;
                rec(
                    i + 1,
                    agents,
                    targets,
                    used,
                    cur.max(agents[i].distance(targets[j])),
                    best,
                );
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(
        0,
        agents,
        targets,
        &mut vec![false; targets.len()],
        0.0,
        &mut best,
    );
    best
}

/// Plain scalar forward pass over the flat parameter layout
/// (per layer: row-major weights, then biases; tanh on hidden layers).
pub fn reference_forward(shape: &NetShape, params: &[f64], input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    let mut off = 0;
    let dims = shape.layer_dims();
    for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let mut y = Vec::with_capacity(fan_out);
        for r in 0..fan_out {
            let mut s = params[off + fan_in * fan_out + r];
            for c in 0..fan_in {
                s += params[off + r * fan_in + c] * x[c];
            }
            y.push(if l + 1 < dims.len() { s.tanh() } else { s });
        }
        off += fan_in * fan_out + fan_out;
        x = y;
    }
    x
}

fn log_softmax_at(logits: &[f64], t: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits[t] - lse
}

/// Sector of `rel` by direct angle arithmetic: central disk is 0, then
/// `P - 1` equal arcs starting at `start`, half-open counter-clockwise.
fn sector(rel: Vec2, world: &WorldConfig) -> Option<usize> {
    let d = &world.disc;
    let r = rel.norm();
    if r <= d.inner_radius {
        return Some(0);
    }
    if r > d.d_lim {
        return None;
    }
    let w = std::f64::consts::TAU / (d.sectors - 1) as f64;
    let a = (rel.y.atan2(rel.x) - d.start_angle).rem_euclid(std::f64::consts::TAU);
    Some(1 + ((a / w).floor() as usize).min(d.sectors - 2))
}

/// Group of `other` as seen from `me`, or `None` when out of range.
fn group_of(me: usize, other: usize, pos: &[Vec2], world: &WorldConfig) -> Option<usize> {
    if me == other {
        return Some(0);
    }
    sector(pos[other] - pos[me], world)
}

/// Window objective recomputed from scratch for parameters `params`, using
/// only the tape's logged positions, observations, oracle targets and the
/// inflows that entered the window.
pub fn replay_window_loss(
    tape: &SimTape,
    shape: &NetShape,
    params: &[f64],
    world: &WorldConfig,
) -> f64 {
    let k = tape.agents();
    let n = shape.comm_size;
    let p_groups = shape.actions;
    let obs_dim = shape.obs_dim;
    let mut prev_out: Vec<Vec<f64>> = Vec::new();
    let mut total = 0.0;
    let mut count = 0usize;
    for (s, st) in tape.steps.iter().enumerate() {
        let mut outs = Vec::with_capacity(k);
        for i in 0..k {
            let inflow: Vec<f64> = if s == 0 {
                st.records[i].input[obs_dim..].to_vec()
            } else {
                let before = &tape.steps[s - 1].positions;
                let now = &st.positions;
                let mut blocks = vec![vec![0.0; n]; p_groups];
                for g in 0..p_groups {
                    let mut sum = vec![0.0; n];
                    let mut cnt = 0usize;
                    for j in 0..k {
                        if group_of(i, j, now, world) != Some(g) {
                            continue;
                        }
                        // j addressed i at the previous step iff i was then in range
                        if let Some(gs) = group_of(j, i, before, world) {
                            for c in 0..n {
                                sum[c] += prev_out[j][gs * n + c];
                            }
                            cnt += 1;
                        }
                    }
                    if cnt > 0 {
                        blocks[g] = sum.iter().map(|v| v / cnt as f64).collect();
                    }
                }
                match shape.inflow_mode {
                    InflowMode::Concat => blocks.concat(),
                    InflowMode::Sum => (0..n).map(|c| blocks.iter().map(|b| b[c]).sum()).collect(),
                }
            };
            let mut input = st.observations[i].clone();
            input.extend(inflow);
            let out = reference_forward(shape, params, &input);
            total -= log_softmax_at(&out[..shape.actions], st.targets[i]);
            count += 1;
            outs.push(out[shape.actions..].to_vec());
        }
        prev_out = outs;
    }
    total / count as f64
}

/// A random small swarm with a trained-from-nothing network, advanced past
/// one window so the tested window starts with live messages.
pub struct Instance {
    pub net: PolicyNet,
    pub world: WorldConfig,
    pub tape: SimTape,
}

pub fn random_instance(
    seed: u64,
    k: usize,
    ell: usize,
    width: usize,
    depth: usize,
    n: usize,
    mode: InflowMode,
) -> Instance {
    random_instance_for(Task::Rendezvous, seed, k, ell, width, depth, n, mode)
}

#[allow(clippy::too_many_arguments)]
pub fn random_instance_for(
    task: Task,
    seed: u64,
    k: usize,
    ell: usize,
    width: usize,
    depth: usize,
    n: usize,
    mode: InflowMode,
) -> Instance {
    let mut world = match task {
        Task::Rendezvous => WorldConfig::rendezvous_default(),
        Task::Assignment => WorldConfig::assignment_default(),
    }
    .with_agents(k);
    // keep the swarm tight enough that links actually form, and the task
    // condition out of reach so windows run to full length
    world.density = 1.0;
    world.epsilon = 0.05;
    let shape = NetShape {
        obs_dim: observation_len(task, &world.disc),
        actions: 9,
        comm_size: n,
        inflow_mode: mode,
        hidden: vec![width; depth],
        activation: Default::default(),
    };
    let mut net = PolicyNet::init(shape.clone(), seed);
    // non-zero biases exercise every parameter
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB1A5);
    for p in net.params_mut().iter_mut() {
        if *p == 0.0 {
            *p = rng.random_range(-0.3..0.3);
        }
    }
    let mut sim = SimSlot::new(task, &world, &shape, OracleConfig::default(), seed, 0).unwrap();
    rollout_window(&mut sim, &net, &world, 2).unwrap();
    let tape = rollout_window(&mut sim, &net, &world, ell).unwrap();
    Instance { net, world, tape }
}

/// Central differences at `h = 1e-5` on an objective of order one carry
/// roughly 1e-10 of absolute rounding noise, so relative errors are taken
/// against at least this magnitude.
pub const FD_FLOOR: f64 = 1e-4;

/// Largest relative error between `grads` and central differences of the
/// replayed objective, with relative error measured against
/// `max(|a|, |b|, floor)`.
pub fn max_fd_error(inst: &Instance, grads: &[f64], h: f64, floor: f64) -> f64 {
    let shape = inst.net.shape().clone();
    let mut p = inst.net.params().to_vec();
    let mut worst = 0.0_f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = replay_window_loss(&inst.tape, &shape, &p, &inst.world);
        p[i] = orig - h;
        let down = replay_window_loss(&inst.tape, &shape, &p, &inst.world);
        p[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let err = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}
