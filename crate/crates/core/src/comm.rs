//! Message routing between agents.
//!
//! Each agent splits its neighbours (and itself) into `P` groups by the
//! component containing their relative position. Outgoing messages are one
//! vector per group, broadcast to every member of that group. Incoming
//! messages are delivered one step later and averaged per receiver-side
//! group; in `Sum` mode the group means are additionally summed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Discretization, Vec2};
use crate::world::ConnectivityGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InflowMode {
    /// `P` group means laid end to end.
    Concat,
    /// Sum of the `P` group means.
    Sum,
}

impl InflowMode {
    /// Length of the aggregated inflow for message size `n` and `sectors` groups.
    pub fn inflow_len(self, n: usize, sectors: usize) -> usize {
        match self {
            InflowMode::Concat => n * sectors,
            InflowMode::Sum => n,
        }
    }
}

/// Partition of `N_i ∪ {i}` into `P` groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Groups {
    /// `(agent, group)` pairs sorted by agent index.
    members: Vec<(usize, usize)>,
    sectors: usize,
}

impl Groups {
    pub fn new(mut members: Vec<(usize, usize)>, sectors: usize) -> Self {
        members.sort_unstable();
        Self { members, sectors }
    }

    pub fn group_of(&self, agent: usize) -> Option<usize> {
        self.members
            .binary_search_by_key(&agent, |&(a, _)| a)
            .ok()
            .map(|idx| self.members[idx].1)
    }

    pub fn members(&self, group: usize) -> impl Iterator<Item = usize> + '_ {
        self.members
            .iter()
            .filter(move |&&(_, g)| g == group)
            .map(|&(a, _)| a)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.members
    }

    pub fn sectors(&self) -> usize {
        self.sectors
    }
}

/// Groups agent `agent`'s neighbours by component; the agent itself joins
/// group 0.
pub fn assign_groups(
    graph: &ConnectivityGraph,
    positions: &[Vec2],
    agent: usize,
    disc: &Discretization,
) -> Groups {
    let me = positions[agent];
    let mut members = Vec::with_capacity(graph.neighbours[agent].len() + 1);
    members.push((agent, 0));
    for &j in &graph.neighbours[agent] {
        if let Some(g) = disc.sector_index(positions[j] - me) {
            members.push((j, g));
        }
    }
    Groups::new(members, disc.len())
}

pub fn assign_all_groups(
    graph: &ConnectivityGraph,
    positions: &[Vec2],
    disc: &Discretization,
) -> Vec<Groups> {
    (0..positions.len())
        .map(|i| assign_groups(graph, positions, i, disc))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub sender: usize,
    pub receiver: usize,
    /// The sender-side group the receiver belonged to.
    pub sender_group: usize,
    pub values: Vec<f64>,
}

/// Aggregated per-agent communication: an inflow or an outflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommBundle {
    pub mode: InflowMode,
    /// Size of one message.
    pub n: usize,
    pub values: Vec<f64>,
}

impl CommBundle {
    pub fn zeros(mode: InflowMode, n: usize, sectors: usize) -> Self {
        Self {
            mode,
            n,
            values: vec![0.0; mode.inflow_len(n, sectors)],
        }
    }

    /// Wraps a concatenated outflow of `sectors * n` values.
    pub fn outflow(values: Vec<f64>, n: usize) -> Self {
        Self {
            mode: InflowMode::Concat,
            n,
            values,
        }
    }

    pub fn group(&self, p: usize) -> &[f64] {
        match self.mode {
            InflowMode::Concat => &self.values[p * self.n..(p + 1) * self.n],
            InflowMode::Sum => &self.values,
        }
    }
}

/// One linear term of an aggregated inflow:
/// `inflow[block] += weight * outflow_of(sender)[sender_group]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub sender: usize,
    pub sender_group: usize,
    pub block: usize,
    pub weight: f64,
}

/// Linear routing from received messages to the receiver's inflow blocks.
/// Messages whose sender is no longer among the receiver's groups are
/// dropped.
pub fn inflow_routes(messages: &[Message], groups: &Groups, mode: InflowMode) -> Vec<Route> {
    let mut per_group = vec![0usize; groups.sectors()];
    let mut placed = Vec::with_capacity(messages.len());
    for (idx, m) in messages.iter().enumerate() {
        if let Some(g) = groups.group_of(m.sender) {
            per_group[g] += 1;
            placed.push((idx, g));
        }
    }
    placed
        .into_iter()
        .map(|(idx, g)| Route {
            sender: messages[idx].sender,
            sender_group: messages[idx].sender_group,
            block: match mode {
                InflowMode::Concat => g,
                InflowMode::Sum => 0,
            },
            weight: 1.0 / per_group[g] as f64,
        })
        .collect()
}

/// Per-group mean of received messages; empty groups contribute zeros.
pub fn aggregate_inflow(
    messages: &[Message],
    groups: &Groups,
    n: usize,
    mode: InflowMode,
) -> Result<CommBundle> {
    Ok(aggregate_with_routes(messages, groups, n, mode)?.0)
}

/// [`aggregate_inflow`] that also returns the routing it applied.
pub fn aggregate_with_routes(
    messages: &[Message],
    groups: &Groups,
    n: usize,
    mode: InflowMode,
) -> Result<(CommBundle, Vec<Route>)> {
    if let Some(m) = messages.iter().find(|m| m.values.len() != n) {
        return Err(Error::LengthMismatch {
            expected: n,
            got: m.values.len(),
        });
    }
    let routes = inflow_routes(messages, groups, mode);
    let mut bundle = CommBundle::zeros(mode, n, groups.sectors());
    let by_sender = |sender: usize, group: usize| {
        messages
            .iter()
            .find(|m| m.sender == sender && m.sender_group == group)
            .expect("route built from these messages")
    };
    for r in &routes {
        let src = &by_sender(r.sender, r.sender_group).values;
        let dst = &mut bundle.values[r.block * n..(r.block + 1) * n];
        for (d, s) in dst.iter_mut().zip(src) {
            *d += r.weight * s;
        }
    }
    Ok((bundle, routes))
}

/// Sends group `p`'s slice of the outflow to every member of group `p`.
pub fn fanout_outflow(
    sender: usize,
    outflow: &CommBundle,
    groups: &Groups,
) -> Result<Vec<Message>> {
    let expected = outflow.n * groups.sectors();
    if outflow.mode != InflowMode::Concat || outflow.values.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            got: outflow.values.len(),
        });
    }
    Ok(groups
        .pairs()
        .iter()
        .map(|&(receiver, g)| Message {
            sender,
            receiver,
            sender_group: g,
            values: outflow.group(g).to_vec(),
        })
        .collect())
}

/// Double-buffered mailboxes: messages posted at step `t` are read at `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommState {
    pub n: usize,
    pub mode: InflowMode,
    inbox: Vec<Vec<Message>>,
}

impl CommState {
    pub fn new(agents: usize, n: usize, mode: InflowMode) -> Self {
        Self {
            n,
            mode,
            inbox: vec![Vec::new(); agents],
        }
    }

    pub fn inbox(&self, receiver: usize) -> &[Message] {
        &self.inbox[receiver]
    }

    pub fn inflow(&self, receiver: usize, groups: &Groups) -> Result<(CommBundle, Vec<Route>)> {
        aggregate_with_routes(&self.inbox[receiver], groups, self.n, self.mode)
    }

    /// Replaces the mailboxes with this step's outgoing messages.
    pub fn deliver(&mut self, outgoing: impl IntoIterator<Item = Message>) {
        for b in &mut self.inbox {
            b.clear();
        }
        for m in outgoing {
            let r = m.receiver;
            self.inbox[r].push(m);
        }
        for b in &mut self.inbox {
            b.sort_by_key(|m| m.sender);
        }
    }
}
