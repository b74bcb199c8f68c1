use std::collections::{BTreeMap, BinaryHeap};
use std::cmp::Reverse;

use crate::protocol::ProtocolMessage;
use crate::seeding::{derive_seed, domain, fold};

/// Node index on the simulated network. The server is node 0.
pub type NodeId = usize;

pub const SERVER_NODE: NodeId = 0;

/// A frame in flight.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub tick: u64,
    pub from: NodeId,
    pub to: NodeId,
    pub msg: ProtocolMessage,
    /// Adversary attempt that produced or provoked this frame.
    pub attempt: Option<usize>,
}

/// Logical-time network with per-link FIFO delivery, seeded loss and a
/// transcript of every frame put on the wire.
#[derive(Debug, Clone)]
pub struct Network {
    seed: u64,
    latency: u64,
    drop_probability: f64,
    now: u64,
    order: u64,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    pending: BTreeMap<(u64, u64), Delivery>,
    link_seq: BTreeMap<(NodeId, NodeId), u64>,
    transcript: Vec<u8>,
    sent: usize,
    dropped: usize,
}

fn unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

impl Network {
    pub fn new(seed: u64, latency: u64, drop_probability: f64) -> Self {
        Self {
            seed,
            latency: latency.max(1),
            drop_probability,
            now: 0,
            order: 0,
            queue: BinaryHeap::new(),
            pending: BTreeMap::new(),
            link_seq: BTreeMap::new(),
            transcript: Vec::new(),
            sent: 0,
            dropped: 0,
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn advance_to(&mut self, tick: u64) {
        self.now = self.now.max(tick);
    }

    pub fn transcript(&self) -> &[u8] {
        &self.transcript
    }

    pub fn into_transcript(self) -> Vec<u8> {
        self.transcript
    }

    pub fn sent(&self) -> usize {
        self.sent
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    fn dropped_frame(&mut self, from: NodeId, to: NodeId, msg: &ProtocolMessage) -> bool {
        let seq = self.link_seq.entry((from, to)).or_insert(0);
        *seq += 1;
        if self.drop_probability <= 0.0 {
            return false;
        }
        let [a, b] = msg.session_id.words();
        let key = fold(&[a, b, msg.kind as u64, from as u64, to as u64, *seq]);
        unit(derive_seed(self.seed, domain::DROP, key)) < self.drop_probability
    }

    /// Puts `msg` on the wire. Returns `false` if the frame was lost.
    pub fn send(&mut self, from: NodeId, to: NodeId, msg: ProtocolMessage, attempt: Option<usize>) -> bool {
        self.transcript.extend_from_slice(&self.now.to_be_bytes());
        msg.encode_into(&mut self.transcript);
        self.sent += 1;
        if self.dropped_frame(from, to, &msg) {
            self.dropped += 1;
            return false;
        }
        let tick = self.now + self.latency;
        self.order += 1;
        self.queue.push(Reverse((tick, self.order)));
        self.pending.insert((tick, self.order), Delivery { tick, from, to, msg, attempt });
        true
    }

    /// Next frame in (tick, send order), advancing the clock to it.
    pub fn next(&mut self) -> Option<Delivery> {
        let Reverse(key) = self.queue.pop()?;
        let delivery = self.pending.remove(&key).expect("queued frame is pending");
        self.now = self.now.max(delivery.tick);
        Some(delivery)
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }
}

/// Splits a transcript back into `(tick, frame)` pairs.
pub fn parse_transcript(bytes: &[u8]) -> crate::Result<Vec<(u64, ProtocolMessage)>> {
    let mut out = Vec::new();
    let mut rest = bytes;
    while !rest.is_empty() {
        if rest.len() < 8 {
            return Err(crate::Error::Malformed("truncated transcript tick".into()));
        }
        let tick = u64::from_be_bytes(rest[..8].try_into().expect("8 bytes"));
        let (msg, used) = ProtocolMessage::decode(&rest[8..])?;
        out.push((tick, msg));
        rest = &rest[8 + used..];
    }
    Ok(out)
}
