//! Simulated range-limited communication: the neighbor graph, the four wire
//! message types with byte-exact sizes, per-link FIFO delivery with one tick
//! of latency, and the payload ledger.

use std::collections::VecDeque;

use thiserror::Error;

use crate::frontier::StateId;
use crate::grid::Cell;
use crate::local_map::{CellState, MapPatch};
use crate::world::Pose;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("message truncated: needed {needed} bytes, had {got}")]
    Truncated { needed: usize, got: usize },
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("patch entry state byte {0} is invalid")]
    BadPatchState(u8),
}

/// Robot identity; also the wire sender byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RobotId(pub u8);

impl RobotId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for RobotId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Wire header: kind, sender, and two reserved bytes.
pub const HEADER_BYTES: usize = 4;
/// Body of a single Q-value share: 8-byte key + 8-byte IEEE754 value.
pub const Q_UPDATE_BODY_BYTES: usize = 16;
/// Body of a frontier notice: key + two 4-byte coordinates + origin flag.
pub const EXPLORED_FRONTIER_BODY_BYTES: usize = 17;

const KIND_Q_UPDATE: u8 = 1;
const KIND_EXPLORED_FRONTIER: u8 = 2;
const KIND_MAP_REQUEST: u8 = 3;
const KIND_MAP_PATCH: u8 = 4;

/// The four payloads robots exchange.
#[derive(Debug, Clone, PartialEq)]
pub enum MessageKind {
    /// A single freshly updated (state, Q-value) pair.
    QUpdate { state: StateId, value: f64 },
    /// Notice that a frontier state has been explored.
    ExploredFrontier {
        state: StateId,
        cell: Cell,
        relayed: bool,
    },
    /// Ask neighbors for their known map cells.
    MapRequest,
    /// Sparse map content sent in reply to a request.
    MapPatchMsg(MapPatch),
}

impl MessageKind {
    fn tag(&self) -> u8 {
        match self {
            MessageKind::QUpdate { .. } => KIND_Q_UPDATE,
            MessageKind::ExploredFrontier { .. } => KIND_EXPLORED_FRONTIER,
            MessageKind::MapRequest => KIND_MAP_REQUEST,
            MessageKind::MapPatchMsg(_) => KIND_MAP_PATCH,
        }
    }

    /// Index into per-kind ledger counters.
    pub fn ledger_slot(&self) -> usize {
        (self.tag() - 1) as usize
    }

    pub fn name(&self) -> &'static str {
        match self {
            MessageKind::QUpdate { .. } => "q_update",
            MessageKind::ExploredFrontier { .. } => "explored_frontier",
            MessageKind::MapRequest => "map_request",
            MessageKind::MapPatchMsg(_) => "map_patch",
        }
    }
}

/// One simulated transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sender: RobotId,
    pub kind: MessageKind,
}

impl Message {
    pub fn new(sender: RobotId, kind: MessageKind) -> Self {
        Self { sender, kind }
    }

    /// Exact wire size per the schema; equals `encode().len()`.
    pub fn payload_bytes(&self) -> usize {
        HEADER_BYTES
            + match &self.kind {
                MessageKind::QUpdate { .. } => Q_UPDATE_BODY_BYTES,
                MessageKind::ExploredFrontier { .. } => EXPLORED_FRONTIER_BODY_BYTES,
                MessageKind::MapRequest => 0,
                MessageKind::MapPatchMsg(patch) => 4 + patch.byte_size(),
            }
    }

    /// Serializes to the fixed little-endian wire format.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload_bytes());
        out.push(self.kind.tag());
        out.push(self.sender.0);
        out.extend_from_slice(&[0, 0]);
        match &self.kind {
            MessageKind::QUpdate { state, value } => {
                out.extend_from_slice(&state.0.to_le_bytes());
                out.extend_from_slice(&value.to_le_bytes());
            }
            MessageKind::ExploredFrontier {
                state,
                cell,
                relayed,
            } => {
                out.extend_from_slice(&state.0.to_le_bytes());
                out.extend_from_slice(&(cell.x as u32).to_le_bytes());
                out.extend_from_slice(&(cell.y as u32).to_le_bytes());
                out.push(u8::from(*relayed));
            }
            MessageKind::MapRequest => {}
            MessageKind::MapPatchMsg(patch) => {
                out.extend_from_slice(&(patch.entries.len() as u32).to_le_bytes());
                for &(index, state) in &patch.entries {
                    out.extend_from_slice(&index.to_le_bytes());
                    out.push(match state {
                        CellState::Free => 0,
                        CellState::Occupied => 1,
                        CellState::Unknown => unreachable!("patches carry only known cells"),
                    });
                }
            }
        }
        debug_assert_eq!(out.len(), self.payload_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, NetworkError> {
        let need = |n: usize| -> Result<(), NetworkError> {
            if bytes.len() < n {
                Err(NetworkError::Truncated {
                    needed: n,
                    got: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(HEADER_BYTES)?;
        let sender = RobotId(bytes[1]);
        let body = &bytes[HEADER_BYTES..];
        let kind = match bytes[0] {
            KIND_Q_UPDATE => {
                need(HEADER_BYTES + Q_UPDATE_BODY_BYTES)?;
                MessageKind::QUpdate {
                    state: StateId(u64::from_le_bytes(body[0..8].try_into().unwrap())),
                    value: f64::from_le_bytes(body[8..16].try_into().unwrap()),
                }
            }
            KIND_EXPLORED_FRONTIER => {
                need(HEADER_BYTES + EXPLORED_FRONTIER_BODY_BYTES)?;
                MessageKind::ExploredFrontier {
                    state: StateId(u64::from_le_bytes(body[0..8].try_into().unwrap())),
                    cell: Cell::new(
                        u32::from_le_bytes(body[8..12].try_into().unwrap()) as i32,
                        u32::from_le_bytes(body[12..16].try_into().unwrap()) as i32,
                    ),
                    relayed: body[16] != 0,
                }
            }
            KIND_MAP_REQUEST => MessageKind::MapRequest,
            KIND_MAP_PATCH => {
                need(HEADER_BYTES + 4)?;
                let count = u32::from_le_bytes(body[0..4].try_into().unwrap()) as usize;
                need(HEADER_BYTES + 4 + count * 5)?;
                let mut entries = Vec::with_capacity(count);
                for i in 0..count {
                    let off = 4 + i * 5;
                    let index = u32::from_le_bytes(body[off..off + 4].try_into().unwrap());
                    let state = match body[off + 4] {
                        0 => CellState::Free,
                        1 => CellState::Occupied,
                        other => return Err(NetworkError::BadPatchState(other)),
                    };
                    entries.push((index, state));
                }
                MessageKind::MapPatchMsg(MapPatch {
                    source: sender,
                    entries,
                })
            }
            other => return Err(NetworkError::UnknownKind(other)),
        };
        Ok(Message { sender, kind })
    }
}

/// Bytes a full-table share would cost under the same schema: one header
/// plus one (key, value) entry per table row. Used by the full-share
/// baseline's ledger.
pub fn full_table_payload(table: &crate::learner::QTable) -> usize {
    HEADER_BYTES + table.len() * Q_UPDATE_BODY_BYTES
}

/// Symmetric adjacency over robots within communication range.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    adj: Vec<Vec<bool>>,
    pub r_c_m: f64,
}

impl NeighborGraph {
    /// Builds the graph from poses: edge (i, j) iff the Euclidean distance
    /// is at most `r_c_m`. No self-edges.
    pub fn build(poses: &[Pose], r_c_m: f64) -> Self {
        assert!(r_c_m > 0.0);
        let n = poses.len();
        let mut adj = vec![vec![false; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d =
                    ((poses[i].x - poses[j].x).powi(2) + (poses[i].y - poses[j].y).powi(2)).sqrt();
                if d <= r_c_m {
                    adj[i][j] = true;
                    adj[j][i] = true;
                }
            }
        }
        Self { adj, r_c_m }
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn connected_pair(&self, a: RobotId, b: RobotId) -> bool {
        self.adj[a.index()][b.index()]
    }

    /// Neighbors of a robot in ascending id order.
    pub fn neighbors(&self, robot: RobotId) -> impl Iterator<Item = RobotId> + '_ {
        self.adj[robot.index()]
            .iter()
            .enumerate()
            .filter(|(_, &e)| e)
            .map(|(j, _)| RobotId(j as u8))
    }

    pub fn degree(&self, robot: RobotId) -> usize {
        self.adj[robot.index()].iter().filter(|&&e| e).count()
    }

    /// Whether the whole fleet forms one connected component.
    pub fn is_connected(&self) -> bool {
        let n = self.adj.len();
        if n <= 1 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for (j, &edge) in self.adj[i].iter().enumerate() {
                if edge && !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == n
    }
}

/// Byte-exact accounting of everything transmitted.
#[derive(Debug, Clone, PartialEq)]
pub struct PayloadLedger {
    /// Cost per byte; scales reported costs, not the byte counters.
    pub kappa: f64,
    per_robot_bytes: Vec<u64>,
    per_kind_bytes: [u64; 4],
    per_kind_messages: [u64; 4],
    /// Q-table entries shared, per robot (1 per QUpdate copy, |Q| per
    /// full-table share).
    q_entries_shared: Vec<u64>,
    current_tick_bytes: u64,
    per_tick_bytes: Vec<u64>,
}

impl PayloadLedger {
    pub fn new(robots: usize) -> Self {
        Self {
            kappa: 1.0,
            per_robot_bytes: vec![0; robots],
            per_kind_bytes: [0; 4],
            per_kind_messages: [0; 4],
            q_entries_shared: vec![0; robots],
            current_tick_bytes: 0,
            per_tick_bytes: Vec::new(),
        }
    }

    pub fn credit(&mut self, sender: RobotId, kind_slot: usize, bytes: u64, copies: u64) {
        let total = bytes * copies;
        self.per_robot_bytes[sender.index()] += total;
        self.per_kind_bytes[kind_slot] += total;
        self.per_kind_messages[kind_slot] += copies;
        self.current_tick_bytes += total;
    }

    pub fn credit_q_entries(&mut self, sender: RobotId, entries: u64) {
        self.q_entries_shared[sender.index()] += entries;
    }

    /// Closes out the current tick's byte counter.
    pub fn roll_tick(&mut self) {
        self.per_tick_bytes.push(self.current_tick_bytes);
        self.current_tick_bytes = 0;
    }

    pub fn total_bytes(&self) -> u64 {
        self.per_robot_bytes.iter().sum()
    }

    pub fn robot_bytes(&self, robot: RobotId) -> u64 {
        self.per_robot_bytes[robot.index()]
    }

    pub fn kind_bytes(&self) -> [u64; 4] {
        self.per_kind_bytes
    }

    pub fn kind_messages(&self) -> [u64; 4] {
        self.per_kind_messages
    }

    pub fn q_entries(&self, robot: RobotId) -> u64 {
        self.q_entries_shared[robot.index()]
    }

    pub fn per_tick_bytes(&self) -> &[u64] {
        &self.per_tick_bytes
    }

    pub fn cost(&self) -> f64 {
        self.kappa * self.total_bytes() as f64
    }

    /// Ledger conservation: per-kind totals must equal per-robot totals.
    pub fn is_balanced(&self) -> bool {
        self.per_kind_bytes.iter().sum::<u64>() == self.total_bytes()
    }
}

/// Reliable in-order transport with a latency of one tick. Messages staged
/// during tick t become visible in inboxes at tick t + 1.
#[derive(Debug, Clone, Default)]
pub struct MessageBus {
    staged: Vec<Vec<Message>>,
    inboxes: Vec<VecDeque<Message>>,
}

impl MessageBus {
    pub fn new(robots: usize) -> Self {
        Self {
            staged: vec![Vec::new(); robots],
            inboxes: vec![VecDeque::new(); robots],
        }
    }

    /// Sends one copy to each neighbor of the sender. Returns the number of
    /// deliveries and credits the ledger `payload_bytes * deliveries`.
    pub fn broadcast(
        &mut self,
        msg: Message,
        graph: &NeighborGraph,
        ledger: &mut PayloadLedger,
    ) -> usize {
        self.broadcast_filtered(msg, graph, ledger, |_| true)
    }

    /// Broadcast with per-copy delivery filtering (lossy-link experiments).
    /// Every copy is charged to the ledger as transmitted; only copies the
    /// filter keeps are actually staged for delivery.
    pub fn broadcast_filtered(
        &mut self,
        msg: Message,
        graph: &NeighborGraph,
        ledger: &mut PayloadLedger,
        mut keep: impl FnMut(RobotId) -> bool,
    ) -> usize {
        let recipients: Vec<RobotId> = graph.neighbors(msg.sender).collect();
        ledger.credit(
            msg.sender,
            msg.kind.ledger_slot(),
            msg.payload_bytes() as u64,
            recipients.len() as u64,
        );
        let mut delivered = 0;
        for to in &recipients {
            if keep(*to) {
                self.staged[to.index()].push(msg.clone());
                delivered += 1;
            }
        }
        delivered
    }

    /// Delivery without a ledger entry, for transmissions whose bytes are
    /// accounted at a coarser granularity (the full-share baseline charges
    /// whole-table shares instead of per-entry messages). Takes the same
    /// delivery filter as `broadcast_filtered` so lossy-link experiments
    /// stay comparable across accounting modes.
    pub fn broadcast_uncounted(
        &mut self,
        msg: Message,
        graph: &NeighborGraph,
        mut keep: impl FnMut(RobotId) -> bool,
    ) -> usize {
        let recipients: Vec<RobotId> = graph.neighbors(msg.sender).collect();
        let mut delivered = 0;
        for to in &recipients {
            if keep(*to) {
                self.staged[to.index()].push(msg.clone());
                delivered += 1;
            }
        }
        delivered
    }

    /// Sends to one recipient (used for map-patch replies).
    pub fn send_to(&mut self, msg: Message, to: RobotId, ledger: &mut PayloadLedger) {
        ledger.credit(
            msg.sender,
            msg.kind.ledger_slot(),
            msg.payload_bytes() as u64,
            1,
        );
        self.staged[to.index()].push(msg);
    }

    /// Tick boundary: everything staged becomes deliverable, preserving
    /// per-link send order.
    pub fn deliver_tick(&mut self) {
        for (inbox, staged) in self.inboxes.iter_mut().zip(self.staged.iter_mut()) {
            inbox.extend(staged.drain(..));
        }
    }

    /// Drains a robot's inbox in arrival order.
    pub fn drain_inbox(&mut self, robot: RobotId) -> Vec<Message> {
        self.inboxes[robot.index()].drain(..).collect()
    }

    pub fn pending_for(&self, robot: RobotId) -> usize {
        self.inboxes[robot.index()].len() + self.staged[robot.index()].len()
    }
}
