//! Constrained uplink model: fixed 16-byte reading frames, measured
//! latency profiles, and a slotted round-robin gateway.
//!
//! End nodes (one per field side) queue readings; the gateway polls them in
//! a fixed round-robin order, one frame per slot, so transmissions never
//! overlap. Delivery latency is drawn from a measured profile with optional
//! uniform jitter.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::SideLabel;

// ============================================================================
// Frame codec
// ============================================================================

/// Fixed frame length on the wire.
pub const FRAME_LEN: usize = 16;

/// One sensor reading as carried over the link: which side, which sensors on
/// that side (bit `i` = side index `i`), and when the reading was sensed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadingMessage {
    pub side: SideLabel,
    /// Bitmap of `index_on_side` values; a single-sensor reading has one bit.
    pub sensor_bits: u32,
    /// Sensing timestamp in microseconds.
    pub timestamp_us: u64,
    pub sequence: u16,
}

impl ReadingMessage {
    pub fn new(side: SideLabel, sensor_bits: u32, timestamp_s: f64, sequence: u16) -> Self {
        Self {
            side,
            sensor_bits,
            timestamp_us: (timestamp_s * 1e6).round() as u64,
            sequence,
        }
    }

    pub fn timestamp_s(&self) -> f64 {
        self.timestamp_us as f64 / 1e6
    }

    /// Side-local sensor indices present in the bitmap.
    pub fn sensor_indices(&self) -> Vec<u32> {
        (0..32).filter(|i| self.sensor_bits & (1 << i) != 0).collect()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame must be {FRAME_LEN} bytes, got {0}")]
    BadLength(usize),
    #[error("unknown side code 0x{0:02x}")]
    UnknownSide(u8),
    #[error("checksum mismatch: stored 0x{stored:02x}, computed 0x{computed:02x}")]
    BadChecksum { stored: u8, computed: u8 },
}

fn checksum(bytes: &[u8]) -> u8 {
    bytes.iter().fold(0u8, |acc, b| acc.wrapping_add(*b))
}

/// Encodes a reading into the 16-byte frame:
/// side code (1) | sensor bitmap LE (4) | timestamp µs LE (8) |
/// sequence LE (2) | sum-mod-256 checksum (1).
pub fn encode_frame(msg: &ReadingMessage) -> [u8; FRAME_LEN] {
    let mut frame = [0u8; FRAME_LEN];
    frame[0] = msg.side.code();
    frame[1..5].copy_from_slice(&msg.sensor_bits.to_le_bytes());
    frame[5..13].copy_from_slice(&msg.timestamp_us.to_le_bytes());
    frame[13..15].copy_from_slice(&msg.sequence.to_le_bytes());
    frame[15] = checksum(&frame[..15]);
    frame
}

/// Decodes and validates a 16-byte frame.
pub fn decode_frame(frame: &[u8]) -> Result<ReadingMessage, FrameError> {
    if frame.len() != FRAME_LEN {
        return Err(FrameError::BadLength(frame.len()));
    }
    let computed = checksum(&frame[..15]);
    if computed != frame[15] {
        return Err(FrameError::BadChecksum {
            stored: frame[15],
            computed,
        });
    }
    let side = SideLabel::from_code(frame[0]).ok_or(FrameError::UnknownSide(frame[0]))?;
    Ok(ReadingMessage {
        side,
        sensor_bits: u32::from_le_bytes(frame[1..5].try_into().unwrap()),
        timestamp_us: u64::from_le_bytes(frame[5..13].try_into().unwrap()),
        sequence: u16::from_le_bytes(frame[13..15].try_into().unwrap()),
    })
}

// ============================================================================
// Latency profiles
// ============================================================================

/// A measured point-to-point latency configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LinkProfile {
    pub sender_height_ft: f64,
    pub receiver_height_ft: f64,
    pub distance_m: f64,
    pub base_latency_s: f64,
    pub jitter_fraction: f64,
}

impl LinkProfile {
    pub fn new(
        sender_height_ft: f64,
        receiver_height_ft: f64,
        distance_m: f64,
        base_latency_s: f64,
        jitter_fraction: f64,
    ) -> Self {
        Self {
            sender_height_ft,
            receiver_height_ft,
            distance_m,
            base_latency_s,
            jitter_fraction,
        }
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        if !(self.base_latency_s > 0.0) {
            return Err(LinkError::BadProfile("base_latency_s must be > 0"));
        }
        if !(0.0..=0.5).contains(&self.jitter_fraction) {
            return Err(LinkError::BadProfile("jitter_fraction must be in [0, 0.5]"));
        }
        Ok(())
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter_fraction = jitter;
        self
    }
}

/// The four measured profiles, in table order.
pub fn measured_profiles() -> [LinkProfile; 4] {
    [
        LinkProfile::new(4.0, 4.0, 500.0, 4.0, 0.0),
        LinkProfile::new(4.0, 35.0, 350.0, 0.7, 0.0),
        LinkProfile::new(35.0, 200.0, 500.0, 1.1, 0.0),
        LinkProfile::new(4.0, 200.0, 2000.0, 0.9, 0.0),
    ]
}

/// Looks a measured profile up by its conventional name `table2_row1` ..
/// `table2_row4`.
pub fn profile_by_name(name: &str) -> Option<LinkProfile> {
    let rows = measured_profiles();
    match name {
        "table2_row1" => Some(rows[0]),
        "table2_row2" => Some(rows[1]),
        "table2_row3" => Some(rows[2]),
        "table2_row4" => Some(rows[3]),
        _ => None,
    }
}

/// One transmission latency draw: `base * (1 + u)` with `u` uniform in
/// `[-jitter, +jitter]`.
pub fn sample_latency<R: Rng>(profile: &LinkProfile, rng: &mut R) -> f64 {
    if profile.jitter_fraction == 0.0 {
        return profile.base_latency_s;
    }
    let u = rng.gen_range(-profile.jitter_fraction..=profile.jitter_fraction);
    profile.base_latency_s * (1.0 + u)
}

// ============================================================================
// Round-robin gateway
// ============================================================================

/// End node identifier; one node per field side in the standard deployment.
pub type NodeId = SideLabel;

/// Slot plan for the gateway's round-robin polling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatewaySchedule {
    pub node_ids: Vec<NodeId>,
    pub slot_duration: f64,
}

impl GatewaySchedule {
    pub fn new(node_ids: Vec<NodeId>, slot_duration: f64) -> Result<Self, LinkError> {
        if node_ids.is_empty() {
            return Err(LinkError::BadSchedule("node list is empty"));
        }
        if !(slot_duration > 0.0) {
            return Err(LinkError::BadSchedule("slot_duration must be > 0"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for n in &node_ids {
            if !seen.insert(*n) {
                return Err(LinkError::BadSchedule("duplicate node id"));
            }
        }
        Ok(Self {
            node_ids,
            slot_duration,
        })
    }

    pub fn cycle_duration(&self) -> f64 {
        self.slot_duration * self.node_ids.len() as f64
    }

    fn node_index(&self, node: NodeId) -> Option<usize> {
        self.node_ids.iter().position(|n| *n == node)
    }

    /// Which node owns the slot containing time `t`.
    pub fn slot_owner(&self, t: f64) -> NodeId {
        let cycle = self.cycle_duration();
        let within = t.rem_euclid(cycle);
        let k = (within / self.slot_duration) as usize;
        self.node_ids[k.min(self.node_ids.len() - 1)]
    }

    /// Start of the node's first slot at or after `now`.
    pub fn next_slot_start(&self, node: NodeId, now: f64) -> Result<f64, LinkError> {
        let k = self
            .node_index(node)
            .ok_or(LinkError::UnknownNode(node))? as f64;
        let cycle = self.cycle_duration();
        let offset = k * self.slot_duration;
        let m = ((now - offset) / cycle).ceil().max(0.0);
        let mut start = m * cycle + offset;
        // guard against float rounding pushing the start just below `now`
        if start < now - 1e-12 {
            start += cycle;
        }
        Ok(start)
    }
}

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("invalid link profile: {0}")]
    BadProfile(&'static str),
    #[error("invalid gateway schedule: {0}")]
    BadSchedule(&'static str),
    #[error("node {0} is not part of the schedule")]
    UnknownNode(NodeId),
}

/// Outcome of handing a frame to a node queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Delivery {
    /// The frame transmits in the slot starting at `slot_start` and reaches
    /// the gateway at `arrival`.
    Scheduled { slot_start: f64, arrival: f64 },
    /// The node queue was full; the frame is lost.
    Dropped,
}

/// One row of the link trace.
#[derive(Debug, Clone, Serialize)]
pub struct LinkTraceRow {
    pub node: NodeId,
    pub enqueue_t: f64,
    pub slot_start: f64,
    pub arrival: f64,
    pub bytes: usize,
    pub dropped: bool,
}

struct NodeState {
    /// Scheduled transmission slot starts not yet in the past.
    scheduled: Vec<f64>,
    next_sequence: u16,
}

/// Deterministic single-gateway link simulator.
///
/// Owned by the simulation loop; all mutation happens in event order.
pub struct LoraLink<R: Rng> {
    pub schedule: GatewaySchedule,
    profiles: BTreeMap<NodeId, LinkProfile>,
    queue_capacity: usize,
    nodes: BTreeMap<NodeId, NodeState>,
    rng: R,
    pub trace: Vec<LinkTraceRow>,
    pub dropped: usize,
}

impl<R: Rng> LoraLink<R> {
    pub fn new(
        schedule: GatewaySchedule,
        default_profile: LinkProfile,
        queue_capacity: usize,
        rng: R,
    ) -> Self {
        let mut profiles = BTreeMap::new();
        let mut nodes = BTreeMap::new();
        for n in &schedule.node_ids {
            profiles.insert(*n, default_profile);
            nodes.insert(
                *n,
                NodeState {
                    scheduled: Vec::new(),
                    next_sequence: 0,
                },
            );
        }
        Self {
            schedule,
            profiles,
            queue_capacity,
            nodes,
            rng,
            trace: Vec::new(),
            dropped: 0,
        }
    }

    pub fn set_profile(&mut self, node: NodeId, profile: LinkProfile) {
        self.profiles.insert(node, profile);
    }

    pub fn profile(&self, node: NodeId) -> Option<&LinkProfile> {
        self.profiles.get(&node)
    }

    /// Next frame sequence number for a node.
    pub fn take_sequence(&mut self, node: NodeId) -> u16 {
        let state = self.nodes.get_mut(&node).expect("known node");
        let seq = state.next_sequence;
        state.next_sequence = state.next_sequence.wrapping_add(1);
        seq
    }

    /// Queues a message at `now` and resolves its delivery.
    ///
    /// Each frame occupies one slot of its node; per-node FIFO order is the
    /// queue order, and a full queue drops the frame.
    pub fn deliver(
        &mut self,
        node: NodeId,
        msg: &ReadingMessage,
        now: f64,
    ) -> Result<Delivery, LinkError> {
        let profile = *self
            .profiles
            .get(&node)
            .ok_or(LinkError::UnknownNode(node))?;
        let state = self.nodes.get_mut(&node).ok_or(LinkError::UnknownNode(node))?;
        state.scheduled.retain(|s| *s >= now);
        if state.scheduled.len() >= self.queue_capacity {
            self.dropped += 1;
            self.trace.push(LinkTraceRow {
                node,
                enqueue_t: now,
                slot_start: f64::NAN,
                arrival: f64::NAN,
                bytes: FRAME_LEN,
                dropped: true,
            });
            let _ = msg;
            return Ok(Delivery::Dropped);
        }
        // FIFO: this frame takes the node's first slot after both `now` and
        // the last scheduled frame's slot.
        let earliest = state
            .scheduled
            .last()
            .map(|s| s + self.schedule.cycle_duration())
            .unwrap_or(now)
            .max(now);
        let slot_start = self.schedule.next_slot_start(node, earliest)?;
        state.scheduled.push(slot_start);
        let arrival = slot_start + sample_latency(&profile, &mut self.rng);
        self.trace.push(LinkTraceRow {
            node,
            enqueue_t: now,
            slot_start,
            arrival,
            bytes: FRAME_LEN,
            dropped: false,
        });
        Ok(Delivery::Scheduled {
            slot_start,
            arrival,
        })
    }
}

/// Writes the link trace as CSV.
pub fn write_trace_csv<W: std::io::Write>(
    trace: &[LinkTraceRow],
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node", "enqueue_t", "slot_start", "arrival", "bytes", "dropped"])?;
    for row in trace {
        w.write_record([
            row.node.to_string(),
            format!("{:.6}", row.enqueue_t),
            if row.dropped {
                String::new()
            } else {
                format!("{:.6}", row.slot_start)
            },
            if row.dropped {
                String::new()
            } else {
                format!("{:.6}", row.arrival)
            },
            row.bytes.to_string(),
            row.dropped.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
